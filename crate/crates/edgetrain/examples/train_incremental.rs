//! Desk-scale class-incremental learning on a synthetic dataset: train a
//! small convnet on four base classes, then learn a fifth from its latent
//! activations — once with rehearsal from the replay buffer and once as
//! the fine-tuning-only ablation.
//!
//!     cargo run --example train_incremental

use edgetrain::cli::{run_cl_experiment, CLTaskConfig};

fn main() -> edgetrain::Result<()> {
    let cfg = CLTaskConfig {
        classes: 5,
        per_class: 60,
        eval_per_class: 20,
        input_hw: 8,
        noise: 0.3,
        seed: 42,
        quota: 30,
        n_new: 24, // 24 new : 120 replayed = the 1:5 mixing ratio
        epochs: 8,
        base_epochs: 30,
        lr: 0.1,
        fisher_decay: 0.9,
        fisher_clip: 1.0,
        replay: true,
    };

    println!("== with latent replay ==");
    let with_replay = run_cl_experiment(&cfg)?;
    for line in &with_replay.log {
        println!("{line}");
    }

    println!("\n== ablation: no rehearsal ==");
    let ablation = run_cl_experiment(&CLTaskConfig {
        replay: false,
        ..cfg
    })?;
    for line in &ablation.log {
        println!("{line}");
    }

    println!("\n== summary ==");
    println!(
        "old-class accuracy after learning the new class: {:.1}% with replay, {:.1}% without",
        100.0 * with_replay.old_accuracy_after,
        100.0 * ablation.old_accuracy_after
    );
    println!(
        "new-class accuracy: {:.1}% / {:.1}%",
        100.0 * with_replay.new_accuracy_after,
        100.0 * ablation.new_accuracy_after
    );
    println!(
        "retention gap: {:.1} accuracy points",
        100.0 * (with_replay.old_accuracy_after - ablation.old_accuracy_after)
    );
    Ok(())
}
