//! Memory-latency-accuracy trade-off table for the bundled MobileNetV1-128
//! across every valid LR cut, with the Pareto frontier marked and the
//! 32 MB RAM feasibility filter applied.
//!
//!     cargo run --example plan_tradeoff

use edgetrain::cli::plan_rows;
use edgetrain::memory::pareto_memory;
use edgetrain::net::NetworkDescriptor;
use edgetrain::perf::HwProfile;
use edgetrain::replay::CLBatchPlan;
use edgetrain::report::to_csv;

fn main() -> edgetrain::Result<()> {
    let desc = NetworkDescriptor::mobilenet_v1_128();
    let hw = HwProfile::octa_cluster_150mhz();
    let plan = CLBatchPlan {
        n_new: 300,
        n_replay: 1500,
        epochs: 8,
    };
    let cuts: Vec<String> = desc.valid_cuts().iter().map(|s| s.to_string()).collect();
    let rows = plan_rows(&desc, &hw, &cuts, &plan, false)?;
    print!("{}", to_csv(&rows));

    let frontier: Vec<&str> = rows
        .iter()
        .filter(|r| r.pareto)
        .map(|r| r.cut.as_str())
        .collect();
    println!("\nPareto frontier (ram, latency, accuracy): {}", frontier.join(", "));

    let feasible = pareto_memory(&desc, &cuts, 1500, 300, 32_000_000)?;
    println!(
        "cuts fitting a 32 MB external RAM: {}",
        feasible
            .iter()
            .map(|r| r.lr_cut.as_str())
            .collect::<Vec<_>>()
            .join(", ")
    );
    Ok(())
}
