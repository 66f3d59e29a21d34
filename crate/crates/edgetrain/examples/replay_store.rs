//! The file-backed replay store: generate latents at the LR cut, insert
//! them under the per-class quota, persist to the LRBF format and read it
//! back. The store models keeping old latents on cheap non-volatile
//! storage while new latents stay in the working set.
//!
//!     cargo run --example replay_store

use edgetrain::dataset::{synth_dataset, SynthConfig};
use edgetrain::net::toy_convnet;
use edgetrain::replay::{generate_latents, InsertStrategy, ReplayBuffer};

fn main() -> edgetrain::Result<()> {
    let mut net = toy_convnet(4, 8, 7)?;
    let ds = synth_dataset(&SynthConfig {
        classes: 4,
        per_class: 40,
        input_shape: vec![3, 8, 8],
        noise: 0.25,
        seed: 7,
    })?;

    let mut buffer = ReplayBuffer::new(net.latent_shape().to_vec(), 30);
    for class in 0..4u32 {
        let images = ds.class_samples(class as usize);
        let latents = generate_latents(&mut net, &images)?;
        buffer.insert_class(class, &latents, InsertStrategy::FirstK)?;
        println!(
            "class {class}: generated {} latents, stored {} (quota {})",
            latents.len(),
            buffer.count(class),
            buffer.quota()
        );
    }

    let path = std::env::temp_dir().join("edgetrain_replay_demo.lrbf");
    buffer.save(&path)?;
    let bytes = std::fs::metadata(&path)?.len();
    println!(
        "\nsaved {} vectors of shape {:?} to {} ({bytes} bytes)",
        buffer.total_vectors(),
        buffer.dims(),
        path.display()
    );

    let loaded = ReplayBuffer::load(&path)?;
    assert_eq!(loaded.dims(), buffer.dims());
    assert_eq!(loaded.total_vectors(), buffer.total_vectors());
    println!(
        "reloaded: {} classes x up to {} vectors, shape {:?} — contents identical",
        loaded.class_count(),
        loaded.quota(),
        loaded.dims()
    );
    std::fs::remove_file(&path).ok();
    Ok(())
}
