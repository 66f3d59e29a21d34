//! Flash and RAM footprint sweep over the LR cuts of MobileNetV1-128 with
//! the 1500-replay / 300-new-image learning step: the per-term breakdown
//! behind the planner (parameters, activation tape, gradients, Fisher,
//! transient buffers, new latents).
//!
//!     cargo run --example memory_footprint

use edgetrain::memory::{footprint, FootprintReport};
use edgetrain::net::NetworkDescriptor;

fn main() -> edgetrain::Result<()> {
    let desc = NetworkDescriptor::mobilenet_v1_128();
    println!("{}", FootprintReport::csv_header());
    for cut in desc.valid_cuts() {
        let r = footprint(&desc, cut, 1500, 300, 4)?;
        println!("{}", r.csv_row());
    }

    println!("\nkey cuts:");
    for cut in ["conv1", "conv5_4/dw", "mid_fc7"] {
        let r = footprint(&desc, cut, 1500, 300, 4)?;
        println!(
            "  {:<11} flash {:>7.1} MB   ram {:>6.1} MB  (params {:.1} + tape {:.1} + grads {:.1} + fisher {:.1} + fwd buffers {:.1} + new latents {:.1})",
            cut,
            r.flash_bytes as f64 / 1e6,
            r.ram_total_bytes as f64 / 1e6,
            r.n_w_bytes as f64 / 1e6,
            r.n_a_bytes as f64 / 1e6,
            r.n_g_bytes as f64 / 1e6,
            r.n_fi_bytes as f64 / 1e6,
            r.n_fw_bytes as f64 / 1e6,
            r.new_latents_bytes as f64 / 1e6,
        );
    }
    Ok(())
}
