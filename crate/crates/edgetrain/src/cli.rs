//! Command-line front end: descriptor/profile loading, the desk-scale
//! class-incremental experiment, kernel benchmarks, and the memory /
//! latency / energy report commands.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::bench::{run_kernel, BenchKernel, BenchRow};
use crate::dataset::{synth_dataset, SynthConfig};
use crate::error::{Error, Result};
use crate::memory::{footprint, pareto_memory, FootprintReport, DEFAULT_BYTES_PER_ELEM};
use crate::net::{toy_convnet, NetworkDescriptor};
use crate::perf::{
    estimate_energy, estimate_latency, inference_macs, plan_schedule, speedup_report,
    EnergyScenario, HwProfile,
};
use crate::replay::{generate_latents, CLBatchPlan, InsertStrategy, ReplayBuffer};
use crate::report::{mark_frontier, to_csv, ParetoRow};
use crate::tensor::Tensor;
use crate::trainer::{evaluate, evaluate_per_class, train_batch, FisherState, TrainConfig};

#[derive(Parser, Debug)]
#[command(
    name = "edgetrain",
    about = "Latent-replay continual learning engine and edge cost planner",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Memory-latency-accuracy trade-off table across LR cuts.
    Plan(PlanArgs),
    /// Desk-scale class-incremental learning on a synthetic dataset.
    Train(TrainArgs),
    /// Host-side kernel throughput benchmarks.
    Bench(BenchArgs),
    /// Flash/RAM footprint breakdown per cut.
    Footprint(FootprintArgs),
    /// Energy-per-hour and battery lifetime for a duty-cycle scenario.
    Energy(EnergyArgs),
}

#[derive(Args, Debug)]
pub struct PlanArgs {
    /// Network descriptor file (bundled MobileNetV1-128 when omitted).
    #[arg(long)]
    pub net: Option<PathBuf>,
    /// Hardware profile file (bundled 8-core cluster when omitted).
    #[arg(long)]
    pub hw: Option<PathBuf>,
    /// Restrict the table to one cut.
    #[arg(long)]
    pub cut: Option<String>,
    /// Stored replay vectors per learning step.
    #[arg(long, default_value_t = 1500)]
    pub replay: u64,
    /// New images per learning step.
    #[arg(long = "new", default_value_t = 300)]
    pub n_new: u64,
    #[arg(long, default_value_t = 8)]
    pub epochs: usize,
    /// Count the one-time frozen-prefix forward of the new images.
    #[arg(long)]
    pub include_frozen_forward: bool,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Also list cuts fitting this RAM budget (bytes).
    #[arg(long)]
    pub budget: Option<u64>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Total classes; the last one arrives incrementally.
    #[arg(long, default_value_t = 5)]
    pub classes: usize,
    /// Training samples generated per class.
    #[arg(long, default_value_t = 60)]
    pub per_class: usize,
    /// Held-out evaluation samples per class.
    #[arg(long, default_value_t = 20)]
    pub eval_per_class: usize,
    /// Square input extent of the synthetic images.
    #[arg(long, default_value_t = 8)]
    pub input_hw: usize,
    /// Noise scale around the class prototypes.
    #[arg(long, default_value_t = 0.3)]
    pub noise: f32,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Replay vectors kept per class.
    #[arg(long, default_value_t = 30)]
    pub quota: usize,
    /// New images consumed by the incremental step.
    #[arg(long = "new", default_value_t = 24)]
    pub n_new: usize,
    /// Epochs of the incremental step (0 = report the baseline only).
    #[arg(long, default_value_t = 8)]
    pub epochs: usize,
    /// Epochs of the initial base training phase.
    #[arg(long, default_value_t = 30)]
    pub base_epochs: usize,
    #[arg(long, default_value_t = 0.1)]
    pub lr: f32,
    /// Fisher decay of the AR1 update during the incremental step.
    #[arg(long, default_value_t = 0.9)]
    pub fisher_decay: f32,
    /// Fisher clip ceiling. The batch-gradient accumulator reaches the
    /// ceiling once 0.1*g^2 exceeds it, so tiny ceilings freeze every
    /// parameter; keep it of order the squared gradient scale.
    #[arg(long, default_value_t = 1.0)]
    pub fisher_clip: f32,
    /// Ablation: fine-tune on new data only, no rehearsal.
    #[arg(long)]
    pub no_replay: bool,
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    /// gemm | conv_fwd | conv_bwd_err | conv_bwd_grad
    #[arg(long)]
    pub kernel: String,
    /// Problem sizes (GEMM extent or conv channel count).
    #[arg(long, value_delimiter = ',', default_values_t = vec![64, 128, 192])]
    pub sizes: Vec<usize>,
    /// Worker threads for the data-parallel GEMM contract.
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    #[arg(long, default_value_t = 3)]
    pub reps: usize,
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct FootprintArgs {
    #[arg(long)]
    pub net: Option<PathBuf>,
    #[arg(long)]
    pub cut: Option<String>,
    #[arg(long, default_value_t = 1500)]
    pub replay: u64,
    #[arg(long = "new", default_value_t = 300)]
    pub n_new: u64,
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EnergyArgs {
    #[arg(long)]
    pub net: Option<PathBuf>,
    #[arg(long)]
    pub hw: Option<PathBuf>,
    #[arg(long, default_value = "mid_fc7")]
    pub cut: String,
    #[arg(long, default_value_t = 1500)]
    pub replay: u64,
    #[arg(long = "new", default_value_t = 300)]
    pub n_new: u64,
    #[arg(long, default_value_t = 8)]
    pub epochs: usize,
    #[arg(long)]
    pub include_frozen_forward: bool,
    #[arg(long, default_value_t = 1.0)]
    pub inferences_per_s: f64,
    #[arg(long, default_value_t = 1.0)]
    pub retrains_per_hour: f64,
    #[arg(long, default_value_t = 3100.0)]
    pub battery_mah: f64,
    /// Usable battery voltage after conversion losses.
    #[arg(long, default_value_t = 2.2)]
    pub battery_volts: f64,
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

fn load_net(path: &Option<PathBuf>) -> Result<NetworkDescriptor> {
    match path {
        Some(p) => NetworkDescriptor::from_file(p),
        None => Ok(NetworkDescriptor::mobilenet_v1_128()),
    }
}

fn load_hw(path: &Option<PathBuf>) -> Result<HwProfile> {
    match path {
        Some(p) => HwProfile::from_file(p),
        None => Ok(HwProfile::octa_cluster_150mhz()),
    }
}

fn emit(csv: &Option<PathBuf>, text: &str) -> Result<()> {
    match csv {
        Some(path) => {
            std::fs::write(path, text)?;
            println!("wrote {}", path.display());
            Ok(())
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// Build the full trade-off table: one row per cut joining the memory and
/// performance models with the descriptor's ingested accuracies.
pub fn plan_rows(
    desc: &NetworkDescriptor,
    hw: &HwProfile,
    cuts: &[String],
    plan: &CLBatchPlan,
    include_frozen_forward: bool,
) -> Result<Vec<ParetoRow>> {
    let macs = inference_macs(desc);
    let scenario = EnergyScenario {
        inferences_per_s: 1.0,
        retrains_per_hour: 1.0,
    };
    let mut rows = Vec::with_capacity(cuts.len());
    for cut in cuts {
        let fp = footprint(
            desc,
            cut,
            plan.n_replay as u64,
            plan.n_new as u64,
            DEFAULT_BYTES_PER_ELEM,
        )?;
        let lat = estimate_latency(desc, cut, plan, hw, include_frozen_forward)?;
        let energy = estimate_energy(lat.seconds, macs, hw, &scenario)?;
        rows.push(ParetoRow {
            cut: cut.clone(),
            ram_bytes: fp.ram_total_bytes,
            flash_bytes: fp.flash_bytes,
            latency_s: lat.seconds,
            energy_j_per_h: energy.joules_per_hour,
            accuracy_pct: desc.accuracy_by_cut.get(cut).copied(),
            pareto: false,
        });
    }
    mark_frontier(&mut rows);
    Ok(rows)
}

pub fn cmd_plan(args: &PlanArgs) -> Result<()> {
    let desc = load_net(&args.net)?;
    let hw = load_hw(&args.hw)?;
    let cuts: Vec<String> = match &args.cut {
        Some(c) => {
            desc.cut_index(c)?;
            vec![c.clone()]
        }
        None => desc.valid_cuts().iter().map(|s| s.to_string()).collect(),
    };
    let plan = CLBatchPlan {
        n_new: args.n_new as usize,
        n_replay: args.replay as usize,
        epochs: args.epochs,
    };
    // accuracies are ingested metadata; make that visible in the output
    let mut out = String::from("# accuracy_pct: ingested benchmark metadata, not computed\n");
    let rows = plan_rows(&desc, &hw, &cuts, &plan, args.include_frozen_forward)?;
    out.push_str(&to_csv(&rows));
    emit(&args.csv, &out)?;
    if let Some(budget) = args.budget {
        let feasible = pareto_memory(
            &desc,
            &cuts,
            args.replay,
            args.n_new,
            budget,
        )?;
        println!(
            "# cuts within {budget} B RAM: {}",
            feasible
                .iter()
                .map(|r| r.lr_cut.as_str())
                .collect::<Vec<_>>()
                .join(", ")
        );
    }
    Ok(())
}

/// Configuration of the desk-scale class-incremental experiment.
#[derive(Debug, Clone)]
pub struct CLTaskConfig {
    pub classes: usize,
    pub per_class: usize,
    pub eval_per_class: usize,
    pub input_hw: usize,
    pub noise: f32,
    pub seed: u64,
    pub quota: usize,
    pub n_new: usize,
    pub epochs: usize,
    pub base_epochs: usize,
    pub lr: f32,
    pub fisher_decay: f32,
    pub fisher_clip: f32,
    pub replay: bool,
}

impl CLTaskConfig {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::Config("need at least 2 classes".into()));
        }
        if self.per_class < self.n_new || self.per_class < self.quota {
            return Err(Error::Config(
                "per_class must cover both the new-image count and the quota".into(),
            ));
        }
        Ok(())
    }
}

/// Outcome of one desk-scale run; every field is deterministic per seed.
#[derive(Debug, Clone)]
pub struct CLOutcome {
    pub base_accuracy: f64,
    pub old_accuracy_before: f64,
    pub old_accuracy_after: f64,
    pub new_accuracy_after: f64,
    pub per_class_after: Vec<(usize, f64)>,
    pub frozen_prefix_unchanged: bool,
    pub replay_vectors_used: usize,
    /// `metric,value` lines in emission order.
    pub log: Vec<String>,
}

impl CLOutcome {
    pub fn csv(&self) -> String {
        let mut out = String::from("metric,value\n");
        for line in &self.log {
            out.push_str(line);
            out.push('\n');
        }
        out
    }
}

/// Run the class-incremental protocol: joint base training on all classes
/// but the last, replay-buffer fill, then one incremental step on the new
/// class — with rehearsal or as the fine-tuning-only ablation.
pub fn run_cl_experiment(cfg: &CLTaskConfig) -> Result<CLOutcome> {
    cfg.validate()?;
    let ds = synth_dataset(&SynthConfig {
        classes: cfg.classes,
        per_class: cfg.per_class + cfg.eval_per_class,
        input_shape: vec![3, cfg.input_hw, cfg.input_hw],
        noise: cfg.noise,
        seed: cfg.seed,
    })?;
    // first per_class samples of each class train, the rest evaluate
    let mut train: Vec<Vec<Tensor>> = vec![Vec::new(); cfg.classes];
    let mut eval_set: Vec<(Tensor, usize)> = Vec::new();
    for c in 0..cfg.classes {
        let all = ds.class_samples(c);
        for (i, t) in all.into_iter().enumerate() {
            if i < cfg.per_class {
                train[c].push(t);
            } else {
                eval_set.push((t, c));
            }
        }
    }
    let new_class = cfg.classes - 1;
    let old_eval: Vec<(Tensor, usize)> = eval_set
        .iter()
        .filter(|(_, l)| *l != new_class)
        .cloned()
        .collect();
    let new_eval: Vec<(Tensor, usize)> = eval_set
        .iter()
        .filter(|(_, l)| *l == new_class)
        .cloned()
        .collect();

    let mut net = toy_convnet(cfg.classes, cfg.input_hw, cfg.seed)?;
    let cl_cut = net.lr_cut;

    // Base phase: plain SGD (decay 1, zero Fisher) over the old classes,
    // full network trainable.
    net.lr_cut = 0;
    let base_cfg = TrainConfig {
        learning_rate: cfg.lr,
        epochs: cfg.base_epochs.max(1),
        batch_size: 16,
        fisher_decay: 1.0,
        fisher_clip: 1e-3,
    };
    let mut base_fisher = FisherState::new(&net, base_cfg.fisher_clip);
    let mut base_samples: Vec<(Tensor, usize)> = Vec::new();
    for (c, samples) in train.iter().enumerate().take(new_class) {
        for t in samples {
            base_samples.push((t.clone(), c));
        }
    }
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e3779b9);
    for _ in 0..cfg.base_epochs {
        base_samples.shuffle(&mut rng);
        for chunk in base_samples.chunks(base_cfg.batch_size) {
            train_batch(&mut net, &mut base_fisher, chunk, &base_cfg)?;
        }
    }
    net.lr_cut = cl_cut;
    let base_accuracy = evaluate(&mut net, &old_eval)?;

    // Fill the replay buffer from the trained feature extractor.
    let mut buffer = ReplayBuffer::new(net.latent_shape().to_vec(), cfg.quota);
    for (c, samples) in train.iter().enumerate().take(new_class) {
        let head: Vec<Tensor> = samples.iter().take(cfg.quota).cloned().collect();
        let latents = generate_latents(&mut net, &head)?;
        buffer.insert_class(c as u32, &latents, InsertStrategy::FirstK)?;
    }

    let old_accuracy_before = evaluate(&mut net, &old_eval)?;
    let frozen_before = net.frozen_prefix_bytes();
    let mut log: Vec<String> = vec![
        format!("base_accuracy,{base_accuracy}"),
        format!("old_accuracy_before,{old_accuracy_before}"),
    ];

    let mut replay_vectors_used = 0usize;
    if cfg.epochs > 0 {
        let n_replay = if cfg.replay {
            (5 * cfg.n_new).min(buffer.total_vectors())
        } else {
            0
        };
        replay_vectors_used = n_replay;
        let plan = CLBatchPlan {
            n_new: cfg.n_new,
            n_replay,
            epochs: cfg.epochs,
        };
        let cl_cfg = TrainConfig {
            learning_rate: cfg.lr,
            epochs: cfg.epochs,
            batch_size: 16,
            fisher_decay: cfg.fisher_decay,
            fisher_clip: cfg.fisher_clip,
        };
        let mut fisher = FisherState::new(&net, cl_cfg.fisher_clip);
        let new_images: Vec<Tensor> = train[new_class].iter().take(cfg.n_new).cloned().collect();
        let metrics = crate::replay::learn_new_class(
            &mut net,
            &mut fisher,
            &mut buffer,
            &new_images,
            new_class as u32,
            &plan,
            &cl_cfg,
            cfg.seed ^ 0x5bd1e995,
        )?;
        for (i, loss) in metrics.epoch_loss.iter().enumerate() {
            log.push(format!("epoch_{i}_loss,{loss}"));
        }
    }

    let old_accuracy_after = evaluate(&mut net, &old_eval)?;
    let new_accuracy_after = evaluate(&mut net, &new_eval)?;
    let per_class_after: Vec<(usize, f64)> = evaluate_per_class(&mut net, &eval_set)?
        .into_iter()
        .collect();
    let frozen_prefix_unchanged = net.frozen_prefix_bytes() == frozen_before;
    log.push(format!("old_accuracy_after,{old_accuracy_after}"));
    log.push(format!("new_accuracy_after,{new_accuracy_after}"));
    for (class, acc) in &per_class_after {
        log.push(format!("class_{class}_accuracy,{acc}"));
    }
    log.push(format!("replay_vectors_used,{replay_vectors_used}"));
    log.push(format!("frozen_prefix_unchanged,{frozen_prefix_unchanged}"));

    Ok(CLOutcome {
        base_accuracy,
        old_accuracy_before,
        old_accuracy_after,
        new_accuracy_after,
        per_class_after,
        frozen_prefix_unchanged,
        replay_vectors_used,
        log,
    })
}

pub fn cmd_train(args: &TrainArgs) -> Result<()> {
    let cfg = CLTaskConfig {
        classes: args.classes,
        per_class: args.per_class,
        eval_per_class: args.eval_per_class,
        input_hw: args.input_hw,
        noise: args.noise,
        seed: args.seed,
        quota: args.quota,
        n_new: args.n_new,
        epochs: args.epochs,
        base_epochs: args.base_epochs,
        lr: args.lr,
        fisher_decay: args.fisher_decay,
        fisher_clip: args.fisher_clip,
        replay: !args.no_replay,
    };
    let outcome = run_cl_experiment(&cfg)?;
    emit(&args.csv, &outcome.csv())?;
    println!(
        "old classes: {:.1}% -> {:.1}% | new class: {:.1}% | replay vectors: {} | frozen prefix unchanged: {}",
        100.0 * outcome.old_accuracy_before,
        100.0 * outcome.old_accuracy_after,
        100.0 * outcome.new_accuracy_after,
        outcome.replay_vectors_used,
        outcome.frozen_prefix_unchanged
    );
    Ok(())
}

pub fn cmd_bench(args: &BenchArgs) -> Result<()> {
    let kernel = BenchKernel::parse(&args.kernel)?;
    let mut out = String::from(BenchRow::csv_header());
    out.push('\n');
    for &size in &args.sizes {
        let row = run_kernel(kernel, size, args.workers, args.reps)?;
        out.push_str(&row.csv_row());
        out.push('\n');
    }
    emit(&args.csv, &out)
}

pub fn cmd_footprint(args: &FootprintArgs) -> Result<()> {
    let desc = load_net(&args.net)?;
    let cuts: Vec<String> = match &args.cut {
        Some(c) => {
            desc.cut_index(c)?;
            vec![c.clone()]
        }
        None => desc.valid_cuts().iter().map(|s| s.to_string()).collect(),
    };
    let mut out = String::from(FootprintReport::csv_header());
    out.push('\n');
    for cut in &cuts {
        let r = footprint(&desc, cut, args.replay, args.n_new, DEFAULT_BYTES_PER_ELEM)?;
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    emit(&args.csv, &out)
}

pub fn cmd_energy(args: &EnergyArgs) -> Result<()> {
    let desc = load_net(&args.net)?;
    let hw = load_hw(&args.hw)?;
    let plan = CLBatchPlan {
        n_new: args.n_new as usize,
        n_replay: args.replay as usize,
        epochs: args.epochs,
    };
    let lat = estimate_latency(&desc, &args.cut, &plan, &hw, args.include_frozen_forward)?;
    let scenario = EnergyScenario {
        inferences_per_s: args.inferences_per_s,
        retrains_per_hour: args.retrains_per_hour,
    };
    let macs = inference_macs(&desc);
    let e = estimate_energy(lat.seconds, macs, &hw, &scenario)?;
    let hours = e.battery_hours(args.battery_mah, args.battery_volts);
    let mut out = String::from("cut,latency_s,training_j_per_h,inference_j_per_h,joules_per_hour,battery_hours\n");
    out.push_str(&format!(
        "{},{},{},{},{},{}\n",
        args.cut, lat.seconds, e.training_j_per_hour, e.inference_j_per_hour, e.joules_per_hour, hours
    ));
    emit(&args.csv, &out)?;
    println!(
        "# {}: retrain {:.3} s, {:.1} J/h, {:.0} h on {:.0} mAh @ {:.1} V",
        args.cut, lat.seconds, e.joules_per_hour, hours, args.battery_mah, args.battery_volts
    );
    Ok(())
}

/// Dispatch a parsed command; the binary maps errors to exit codes.
pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Plan(a) => cmd_plan(a),
        Command::Train(a) => cmd_train(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Footprint(a) => cmd_footprint(a),
        Command::Energy(a) => cmd_energy(a),
    }
}

/// Multi-core vs single-core speedup table on the bundled profiles.
pub fn bundled_speedup_table() -> Result<String> {
    let octa = HwProfile::octa_cluster_150mhz();
    let single = HwProfile::single_core_150mhz();
    let r = speedup_report(&single, &octa)?;
    let mut out = String::from("kernel,speedup\n");
    for (k, s) in &r.rows {
        out.push_str(&format!("{k},{s:.4}\n"));
    }
    out.push_str(&format!("average,{:.4}\n", r.average));
    Ok(out)
}

/// Tile schedule dump for a descriptor on a profile.
pub fn schedule_table(desc: &NetworkDescriptor, hw: &HwProfile) -> Result<String> {
    let entries = plan_schedule(desc, hw)?;
    let mut out = String::from("layer,c_tile,tile_bytes,n_tiles,double_buffered\n");
    for e in entries {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            e.layer, e.c_tile, e.tile_bytes, e.n_tiles, e.double_buffered
        ));
    }
    Ok(out)
}
