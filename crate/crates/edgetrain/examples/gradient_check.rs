//! Central finite-difference verification of the backward kernels for one
//! instance of every layer kind, printing the relative gradient errors.
//!
//!     cargo run --example gradient_check

use edgetrain::layers::{Layer, LayerGrads, LayerSpec};
use edgetrain::net::init_layer_params;
use edgetrain::tensor::{ConvGeometry, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn probe_loss(out: &Tensor, w: &[f64]) -> f64 {
    out.data().iter().zip(w).map(|(&o, &wv)| o as f64 * wv).sum()
}

fn rel_err(fd: &[f64], an: &[f64]) -> f64 {
    let d2: f64 = fd.iter().zip(an).map(|(x, y)| (x - y) * (x - y)).sum();
    let f2: f64 = fd.iter().map(|x| x * x).sum();
    let a2: f64 = an.iter().map(|x| x * x).sum();
    d2.sqrt() / f2.sqrt().max(a2.sqrt()).max(1e-8)
}

fn check(layer: &mut Layer, x: &Tensor, rng: &mut ChaCha8Rng) -> (f64, f64) {
    let out_n: usize = layer.spec.out_shape.iter().product();
    let w: Vec<f64> = (0..out_n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let w_t = Tensor::new(
        layer.spec.out_shape.clone(),
        w.iter().map(|&v| v as f32).collect(),
    )
    .unwrap();
    let (_, tape) = layer.forward(x, true).unwrap();
    let in_grad = layer.backward_error(&w_t, tape.as_ref()).unwrap();
    let grads = layer.backward_grad(&w_t, tape.as_ref()).unwrap();

    // input gradient vs finite differences
    let mut fd = vec![0.0f64; x.len()];
    for i in 0..x.len() {
        let mut xp = x.clone();
        let h = 1e-2 * (1.0 + xp.data()[i].abs());
        xp.data_mut()[i] += h;
        let (up, _) = layer.forward(&xp, false).unwrap();
        xp.data_mut()[i] -= 2.0 * h;
        let (dn, _) = layer.forward(&xp, false).unwrap();
        fd[i] = (probe_loss(&up, &w) - probe_loss(&dn, &w)) / (2.0 * h as f64);
    }
    let an: Vec<f64> = in_grad.data().iter().map(|&v| v as f64).collect();
    let input_err = rel_err(&fd, &an);

    // weight gradient vs finite differences (parametric kinds only)
    let weight_err = match &grads {
        LayerGrads::Conv { weight, .. } | LayerGrads::FullyConnected { weight, .. } => {
            let an: Vec<f64> = weight.data().iter().map(|&v| v as f64).collect();
            let n = an.len();
            let mut fd = vec![0.0f64; n];
            for i in 0..n {
                let bump = |l: &mut Layer, d: f32| {
                    match &mut l.params {
                        edgetrain::layers::LayerParams::Conv { weight, .. }
                        | edgetrain::layers::LayerParams::FullyConnected { weight, .. } => {
                            weight.data_mut()[i] += d
                        }
                        _ => unreachable!(),
                    };
                };
                let h = 1e-2;
                bump(layer, h);
                let (up, _) = layer.forward(x, false).unwrap();
                bump(layer, -2.0 * h);
                let (dn, _) = layer.forward(x, false).unwrap();
                bump(layer, h);
                fd[i] = (probe_loss(&up, &w) - probe_loss(&dn, &w)) / (2.0 * h as f64);
            }
            rel_err(&fd, &an)
        }
        _ => 0.0,
    };
    (input_err, weight_err)
}

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(1234);
    let cases: Vec<(&str, LayerSpec)> = vec![
        (
            "conv 3x3 s2",
            LayerSpec::conv(
                "conv",
                ConvGeometry::new(3, 5, 3, 3, 2, 1, false).unwrap(),
                &[3, 8, 8],
            )
            .unwrap(),
        ),
        (
            "depthwise 3x3",
            LayerSpec::conv(
                "dw",
                ConvGeometry::new(6, 6, 3, 3, 1, 1, true).unwrap(),
                &[6, 6, 6],
            )
            .unwrap(),
        ),
        (
            "pointwise 1x1",
            LayerSpec::conv(
                "pw",
                ConvGeometry::new(8, 4, 1, 1, 1, 0, false).unwrap(),
                &[8, 5, 5],
            )
            .unwrap(),
        ),
        ("fully connected", LayerSpec::fully_connected("fc", 12, 7)),
        ("global avg pool", LayerSpec::avg_pool("pool", &[4, 5, 5]).unwrap()),
        ("relu", LayerSpec::relu("relu", &[4, 5, 5])),
    ];
    println!("{:<16} {:>12} {:>12}", "layer", "d(input)", "d(weights)");
    for (label, spec) in cases {
        let mut layer = Layer {
            spec: spec.clone(),
            params: init_layer_params(&spec, &mut rng),
        };
        let n: usize = spec.in_shape.iter().product();
        // keep relu inputs away from the kink
        let data: Vec<f32> = (0..n)
            .map(|_| {
                let m = rng.gen_range(0.2f32..1.2);
                if rng.gen_bool(0.5) {
                    m
                } else {
                    -m
                }
            })
            .collect();
        let x = Tensor::new(spec.in_shape.clone(), data).unwrap();
        let (ie, we) = check(&mut layer, &x, &mut rng);
        println!("{label:<16} {ie:>12.3e} {we:>12.3e}");
        assert!(ie < 1e-2 && we < 1e-2);
    }
    println!("\nall gradients match central finite differences within 1e-2");
}
