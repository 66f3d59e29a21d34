//! Learning latency and energy for the key LR cuts on the 8-core 150 MHz
//! cluster profile, both with and without the one-time frozen-prefix
//! forward; plus the per-kernel multi-core speedup table and the 48 MHz
//! MCU comparison.
//!
//!     cargo run --example latency_energy

use edgetrain::cli::bundled_speedup_table;
use edgetrain::net::NetworkDescriptor;
use edgetrain::perf::{
    estimate_energy, estimate_latency, inference_macs, EnergyScenario, HwProfile,
};
use edgetrain::replay::CLBatchPlan;

fn human(seconds: f64) -> String {
    if seconds < 120.0 {
        format!("{seconds:.2} s")
    } else {
        format!("{:.1} min", seconds / 60.0)
    }
}

fn main() -> edgetrain::Result<()> {
    let desc = NetworkDescriptor::mobilenet_v1_128();
    let hw = HwProfile::octa_cluster_150mhz();
    let plan = CLBatchPlan {
        n_new: 300,
        n_replay: 1500,
        epochs: 8,
    };

    println!("latency to learn one class (300 new + 1500 replays, 8 epochs):");
    println!("{:<11} {:>14} {:>14}", "cut", "training only", "+frozen fwd");
    for cut in ["conv1", "conv5_4", "conv5_6", "conv6", "mid_fc7"] {
        let without = estimate_latency(&desc, cut, &plan, &hw, false)?;
        let with = estimate_latency(&desc, cut, &plan, &hw, true)?;
        println!(
            "{:<11} {:>14} {:>14}",
            cut,
            human(without.seconds),
            human(with.seconds)
        );
    }
    let conv1 = estimate_latency(&desc, "conv1", &plan, &hw, true)?;
    let c54 = estimate_latency(&desc, "conv5_4", &plan, &hw, true)?;
    println!(
        "full retrain vs conv5_4 cut: {:.2}x faster\n",
        conv1.seconds / c54.seconds
    );

    let macs = inference_macs(&desc);
    let scenario = EnergyScenario {
        inferences_per_s: 1.0,
        retrains_per_hour: 1.0,
    };
    println!("energy at 1 inference/s + 1 retrain/h ({} MMAC per inference):", macs / 1_000_000);
    for cut in ["conv5_4", "mid_fc7"] {
        let lat = estimate_latency(&desc, cut, &plan, &hw, false)?;
        let e = estimate_energy(lat.seconds, macs, &hw, &scenario)?;
        println!(
            "  {:<9} {:>8.1} J/h  -> {:>6.1} h on a 3100 mAh battery",
            cut,
            e.joules_per_hour,
            e.battery_hours(3100.0, 2.2)
        );
    }

    println!("\nper-kernel 8-core speedup over single-core:");
    print!("{}", bundled_speedup_table()?);

    let mcu = HwProfile::mcu_48mhz();
    let mcu_lat = estimate_latency(&desc, "conv5_4", &plan, &mcu, true)?;
    println!(
        "\n48 MHz single-core MCU needs {} for the conv5_4 cut: {:.1}x slower than the cluster",
        human(mcu_lat.seconds),
        mcu_lat.seconds / c54.seconds
    );
    Ok(())
}
