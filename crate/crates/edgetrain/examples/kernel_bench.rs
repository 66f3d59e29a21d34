//! Host-side throughput of the training kernels, and the data-parallel
//! GEMM scaling over worker threads (each worker owns a disjoint block of
//! output rows, so results stay bit-identical at any width).
//!
//!     cargo run --release --example kernel_bench

use edgetrain::bench::{run_kernel, BenchKernel, BenchRow};

fn main() -> edgetrain::Result<()> {
    println!("{}", BenchRow::csv_header());
    for kernel in [
        BenchKernel::Gemm,
        BenchKernel::ConvFwd,
        BenchKernel::ConvBwdErr,
        BenchKernel::ConvBwdGrad,
    ] {
        for size in [32, 64, 128] {
            let row = run_kernel(kernel, size, 1, 3)?;
            println!("{}", row.csv_row());
        }
    }

    println!("\nGEMM worker scaling (256x256x256):");
    let single = run_kernel(BenchKernel::Gemm, 256, 1, 3)?;
    for workers in [1usize, 2, 4, 8] {
        let row = run_kernel(BenchKernel::Gemm, 256, workers, 3)?;
        println!(
            "  {workers} workers: {:>8.1} MMAC/s  speedup {:.2} (bound {workers})",
            row.mac_per_s / 1e6,
            single.seconds / row.seconds
        );
    }
    Ok(())
}
