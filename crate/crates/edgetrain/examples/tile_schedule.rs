//! Coefficient tile schedule of MobileNetV1-128 under the 64 KB
//! double-buffered L1 budget, and a demonstration that tiled execution is
//! bit-identical to the whole-layer forward.
//!
//!     cargo run --example tile_schedule

use edgetrain::cli::schedule_table;
use edgetrain::layers::Layer;
use edgetrain::net::{init_layer_params, NetworkDescriptor};
use edgetrain::perf::{forward_tiled, plan_tiles, HwProfile};
use edgetrain::tensor::{ConvGeometry, Tensor};
use edgetrain::LayerSpec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> edgetrain::Result<()> {
    let desc = NetworkDescriptor::mobilenet_v1_128();
    let hw = HwProfile::octa_cluster_150mhz();
    print!("{}", schedule_table(&desc, &hw)?);

    // tiled vs untiled on a pointwise layer split into 16 tiles
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let spec = LayerSpec::conv(
        "pw 256->512",
        ConvGeometry::new(256, 512, 1, 1, 1, 0, false)?,
        &[256, 8, 8],
    )?;
    let entry = plan_tiles(&spec, &hw)?;
    let layer = Layer {
        params: init_layer_params(&spec, &mut rng),
        spec,
    };
    let x = Tensor::new(
        vec![256, 8, 8],
        (0..256 * 64).map(|_| rng.gen_range(-1.0f32..1.0)).collect(),
    )?;
    let whole = layer.forward_out_channels(&x, 0, 512)?;
    let tiled = forward_tiled(&layer, &x, &entry)?;
    assert_eq!(whole.data(), tiled.data());
    println!(
        "\npointwise 256->512 split into {} tiles of {} filters ({} B each): output bit-identical to the untiled run",
        entry.n_tiles, entry.c_tile, entry.tile_bytes
    );
    Ok(())
}
