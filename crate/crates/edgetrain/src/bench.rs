//! Host-side kernel benchmarks: wall-clock throughput of the GEMM and
//! convolution kernels under the data-parallel row-partition contract.
//! Work is deterministic, so repeated runs move the same MAC counts.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::layers::{Layer, LayerSpec, LayerTape, TapeAux};
use crate::net::init_layer_params;
use crate::tensor::{gemm_parallel, ConvGeometry, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BenchKernel {
    Gemm,
    ConvFwd,
    ConvBwdErr,
    ConvBwdGrad,
}

impl BenchKernel {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "gemm" => Ok(BenchKernel::Gemm),
            "conv_fwd" => Ok(BenchKernel::ConvFwd),
            "conv_bwd_err" => Ok(BenchKernel::ConvBwdErr),
            "conv_bwd_grad" => Ok(BenchKernel::ConvBwdGrad),
            other => Err(Error::Argument(format!(
                "unknown kernel '{other}'; expected gemm | conv_fwd | conv_bwd_err | conv_bwd_grad"
            ))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            BenchKernel::Gemm => "gemm",
            BenchKernel::ConvFwd => "conv_fwd",
            BenchKernel::ConvBwdErr => "conv_bwd_err",
            BenchKernel::ConvBwdGrad => "conv_bwd_grad",
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchRow {
    pub kernel: &'static str,
    pub size: usize,
    pub workers: usize,
    pub macs: u64,
    pub seconds: f64,
    pub mac_per_s: f64,
}

impl BenchRow {
    pub fn csv_header() -> &'static str {
        "kernel,size,workers,macs,seconds,mac_per_s"
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.kernel, self.size, self.workers, self.macs, self.seconds, self.mac_per_s
        )
    }
}

fn rand_tensor(rng: &mut ChaCha8Rng, dims: Vec<usize>) -> Tensor {
    let n: usize = dims.iter().product();
    Tensor::new(dims, (0..n).map(|_| rng.gen_range(-1.0f32..1.0)).collect())
        .expect("bench tensor dims")
}

fn conv_layer(size: usize, rng: &mut ChaCha8Rng) -> Result<(Layer, Tensor)> {
    let c = size.clamp(4, 64);
    let hw = 16;
    let geom = ConvGeometry::new(c, c, 3, 3, 1, 1, false)?;
    let spec = LayerSpec::conv("bench", geom, &[c, hw, hw])?;
    let params = init_layer_params(&spec, rng);
    let x = rand_tensor(rng, vec![c, hw, hw]);
    Ok((Layer { spec, params }, x))
}

/// Run one kernel configuration and report measured throughput. `size` is
/// the square GEMM extent, or the channel count for the conv kernels
/// (3x3, stride 1, 16x16 maps). Conv kernels run single-threaded; GEMM
/// partitions output rows over `workers`.
pub fn run_kernel(kernel: BenchKernel, size: usize, workers: usize, reps: usize) -> Result<BenchRow> {
    if size == 0 || reps == 0 {
        return Err(Error::Argument("size and reps must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(size as u64);
    let (macs_per_rep, work): (u64, Box<dyn FnMut() -> Result<()>>) = match kernel {
        BenchKernel::Gemm => {
            let a = rand_tensor(&mut rng, vec![size, size]);
            let b = rand_tensor(&mut rng, vec![size, size]);
            let macs = (size * size * size) as u64;
            (
                macs,
                Box::new(move || {
                    let out = gemm_parallel(&a, &b, workers)?;
                    std::hint::black_box(out.data()[0]);
                    Ok(())
                }),
            )
        }
        BenchKernel::ConvFwd => {
            let (mut layer, x) = conv_layer(size, &mut rng)?;
            let macs = crate::perf::layer_macs(&layer.spec, crate::perf::Pass::Fwd);
            (
                macs,
                Box::new(move || {
                    let (out, _) = layer.forward(&x, false)?;
                    std::hint::black_box(out.data()[0]);
                    Ok(())
                }),
            )
        }
        BenchKernel::ConvBwdErr => {
            let (layer, x) = conv_layer(size, &mut rng)?;
            let err = rand_tensor(&mut rng, layer.spec.out_shape.clone());
            let macs = crate::perf::layer_macs(&layer.spec, crate::perf::Pass::BwdErr);
            let _ = x;
            (
                macs,
                Box::new(move || {
                    let out = layer.backward_error(&err, None)?;
                    std::hint::black_box(out.data()[0]);
                    Ok(())
                }),
            )
        }
        BenchKernel::ConvBwdGrad => {
            let (layer, x) = conv_layer(size, &mut rng)?;
            let err = rand_tensor(&mut rng, layer.spec.out_shape.clone());
            let tape = LayerTape {
                act_in: x,
                aux: TapeAux::None,
            };
            let macs = crate::perf::layer_macs(&layer.spec, crate::perf::Pass::BwdGrad);
            (
                macs,
                Box::new(move || {
                    let g = layer.backward_grad(&err, Some(&tape))?;
                    std::hint::black_box(&g);
                    Ok(())
                }),
            )
        }
    };
    let mut work = work;
    // one warmup rep, then timed reps
    work()?;
    let start = Instant::now();
    for _ in 0..reps {
        work()?;
    }
    let seconds = start.elapsed().as_secs_f64();
    let macs = macs_per_rep * reps as u64;
    Ok(BenchRow {
        kernel: kernel.as_str(),
        size,
        workers,
        macs,
        seconds,
        mac_per_s: macs as f64 / seconds.max(1e-12),
    })
}
