//! AR1 gradient descent: per-parameter gradient scaling by an approximated
//! Fisher importance, plus the mini-batch training loop.
//!
//! The Fisher approximation is the diagonal empirical estimator — an
//! exponentially decayed mean of squared gradients, clipped to a ceiling.
//! The update scale is `1 - f / f_max_clip`, so parameters whose importance
//! sits at the ceiling receive no update at all.

use crate::error::{Error, Result};
use crate::layers::{LayerGrads, LayerParams, LayerTape};
use crate::net::Network;
use crate::tensor::Tensor;

/// Hyper-parameters of the incremental training step.
#[derive(Debug, Clone, Copy)]
pub struct TrainConfig {
    pub learning_rate: f32,
    pub epochs: usize,
    pub batch_size: usize,
    /// Exponential decay of the Fisher accumulator, in [0, 1].
    pub fisher_decay: f32,
    /// Elementwise ceiling on the Fisher accumulator.
    pub fisher_clip: f32,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.05,
            epochs: 8,
            batch_size: 32,
            fisher_decay: 0.9,
            fisher_clip: 1e-3,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::Config("learning_rate must be > 0".into()));
        }
        if !(0.0..=1.0).contains(&self.fisher_decay) {
            return Err(Error::Config("fisher_decay must lie in [0, 1]".into()));
        }
        if self.fisher_clip <= 0.0 {
            return Err(Error::Config("fisher_clip must be > 0".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Per-parameter nonnegative importance accumulators, one entry per
/// trainable layer at or above the LR cut, shaped like the parameters.
#[derive(Debug, Clone)]
pub struct FisherState {
    /// Indexed like the network's layer list; `None` for frozen or
    /// parameter-free layers.
    pub per_layer: Vec<Option<LayerGrads>>,
    pub f_max_clip: f32,
}

impl FisherState {
    /// Zero-initialized state for the trainable layers of `net`.
    pub fn new(net: &Network, f_max_clip: f32) -> Self {
        let per_layer = net
            .layers
            .iter()
            .enumerate()
            .map(|(i, layer)| {
                if i < net.lr_cut {
                    return None;
                }
                zero_grads_like(&layer.params)
            })
            .collect();
        FisherState {
            per_layer,
            f_max_clip,
        }
    }

    /// True when every accumulator entry is exactly at the clip ceiling.
    pub fn saturate(&mut self) {
        let clip = self.f_max_clip;
        for entry in self.per_layer.iter_mut().flatten() {
            for_each_grad_value(entry, |v| *v = clip);
        }
    }
}

fn zero_grads_like(params: &LayerParams) -> Option<LayerGrads> {
    match params {
        LayerParams::Conv { weight, bias } => Some(LayerGrads::Conv {
            weight: Tensor::zeros(weight.dims().to_vec()),
            bias: Tensor::zeros(bias.dims().to_vec()),
        }),
        LayerParams::FullyConnected { weight, bias } => Some(LayerGrads::FullyConnected {
            weight: Tensor::zeros(weight.dims().to_vec()),
            bias: Tensor::zeros(bias.dims().to_vec()),
        }),
        LayerParams::Renorm { gamma, beta, .. } => Some(LayerGrads::Renorm {
            gamma: vec![0.0; gamma.len()],
            beta: vec![0.0; beta.len()],
        }),
        LayerParams::None => None,
    }
}

fn for_each_grad_value(g: &mut LayerGrads, mut f: impl FnMut(&mut f32)) {
    match g {
        LayerGrads::Conv { weight, bias } | LayerGrads::FullyConnected { weight, bias } => {
            weight.data_mut().iter_mut().for_each(&mut f);
            bias.data_mut().iter_mut().for_each(&mut f);
        }
        LayerGrads::Renorm { gamma, beta } => {
            gamma.iter_mut().for_each(&mut f);
            beta.iter_mut().for_each(&mut f);
        }
        LayerGrads::None => {}
    }
}

/// Pairs of (fisher accumulator slice, gradient slice) for matching grads.
fn grad_pairs<'a>(
    f: &'a mut LayerGrads,
    g: &'a LayerGrads,
) -> Result<Vec<(&'a mut [f32], &'a [f32])>> {
    match (f, g) {
        (
            LayerGrads::Conv { weight: fw, bias: fb },
            LayerGrads::Conv { weight: gw, bias: gb },
        )
        | (
            LayerGrads::FullyConnected { weight: fw, bias: fb },
            LayerGrads::FullyConnected { weight: gw, bias: gb },
        ) => {
            if fw.dims() != gw.dims() || fb.dims() != gb.dims() {
                return Err(Error::Shape("fisher/gradient dims disagree".into()));
            }
            Ok(vec![
                (fw.data_mut(), gw.data()),
                (fb.data_mut(), gb.data()),
            ])
        }
        (
            LayerGrads::Renorm { gamma: fg, beta: fb },
            LayerGrads::Renorm { gamma: gg, beta: gb },
        ) => {
            if fg.len() != gg.len() || fb.len() != gb.len() {
                return Err(Error::Shape("fisher/gradient dims disagree".into()));
            }
            Ok(vec![
                (fg.as_mut_slice(), gg.as_slice()),
                (fb.as_mut_slice(), gb.as_slice()),
            ])
        }
        _ => Err(Error::Shape(
            "fisher state and gradient have different layer kinds".into(),
        )),
    }
}

/// `f <- decay*f + (1-decay)*grad^2`, clipped elementwise to the ceiling.
pub fn fisher_accumulate(
    state: &mut LayerGrads,
    grad: &LayerGrads,
    decay: f32,
    clip: f32,
) -> Result<()> {
    for (fs, gs) in grad_pairs(state, grad)? {
        for (f, &g) in fs.iter_mut().zip(gs) {
            *f = (decay * *f + (1.0 - decay) * g * g).min(clip);
        }
    }
    Ok(())
}

/// AR1 update: `p <- p - lr * (1 - f/clip) * g`. With `f = 0` this is a
/// plain SGD step; with `f` at the ceiling the parameter is untouched.
pub fn ar1_step(
    params: &mut LayerParams,
    grad: &LayerGrads,
    fisher: &LayerGrads,
    lr: f32,
    clip: f32,
) -> Result<()> {
    let apply = |ps: &mut [f32], gs: &[f32], fs: &[f32]| -> Result<()> {
        if ps.len() != gs.len() || ps.len() != fs.len() {
            return Err(Error::Shape("parameter/gradient dims disagree".into()));
        }
        for ((p, &g), &f) in ps.iter_mut().zip(gs).zip(fs) {
            let scale = 1.0 - f / clip;
            if scale > 0.0 {
                *p -= lr * scale * g;
            }
        }
        Ok(())
    };
    match (params, grad, fisher) {
        (
            LayerParams::Conv { weight, bias },
            LayerGrads::Conv { weight: gw, bias: gb },
            LayerGrads::Conv { weight: fw, bias: fb },
        )
        | (
            LayerParams::FullyConnected { weight, bias },
            LayerGrads::FullyConnected { weight: gw, bias: gb },
            LayerGrads::FullyConnected { weight: fw, bias: fb },
        ) => {
            apply(weight.data_mut(), gw.data(), fw.data())?;
            apply(bias.data_mut(), gb.data(), fb.data())
        }
        (
            LayerParams::Renorm { gamma, beta, .. },
            LayerGrads::Renorm { gamma: gg, beta: gb },
            LayerGrads::Renorm { gamma: fg, beta: fb },
        ) => {
            apply(gamma, gg, fg)?;
            apply(beta, gb, fb)
        }
        _ => Err(Error::Shape(
            "parameters, gradient and fisher state have different kinds".into(),
        )),
    }
}

fn accumulate_grads(total: &mut LayerGrads, part: &LayerGrads) -> Result<()> {
    for (ts, ps) in grad_pairs(total, part)? {
        for (t, &p) in ts.iter_mut().zip(ps) {
            *t += p;
        }
    }
    Ok(())
}

fn scale_grads(g: &mut LayerGrads, s: f32) {
    for_each_grad_value(g, |v| *v *= s);
}

/// One AR1 step over a mini-batch of labeled latent vectors.
///
/// Runs the forward pass from the LR cut for every sample, accumulates the
/// mean gradient per trainable layer, folds it into the Fisher state and
/// applies the scaled update. Returns the mean loss over the batch.
pub fn train_batch(
    net: &mut Network,
    fisher: &mut FisherState,
    batch: &[(Tensor, usize)],
    cfg: &TrainConfig,
) -> Result<f32> {
    if batch.is_empty() {
        return Err(Error::Config("empty batch".into()));
    }
    let cut = net.lr_cut;
    let n_layers = net.num_layers();
    let mut total_grads: Vec<Option<LayerGrads>> = net.layers[cut..]
        .iter()
        .map(|l| zero_grads_like(&l.params))
        .collect();
    let mut loss_sum = 0.0f64;

    for (latent, label) in batch {
        let (logits, tapes) = net.forward_train_from_cut(latent)?;
        let (loss, mut err) = crate::layers::softmax_xent(&logits, *label)?;
        loss_sum += loss as f64;
        // Walk the retrained suffix in reverse: gradient first, then
        // propagate the error unless we are already at the cut layer.
        for rel in (0..n_layers - cut).rev() {
            let layer = &net.layers[cut + rel];
            let tape: Option<&LayerTape> = tapes[rel].as_ref();
            let grads = layer.backward_grad(&err, tape)?;
            if let Some(total) = total_grads[rel].as_mut() {
                accumulate_grads(total, &grads)?;
            }
            if rel > 0 {
                err = layer.backward_error(&err, tape)?;
            }
        }
    }

    let inv = 1.0 / batch.len() as f32;
    for rel in 0..n_layers - cut {
        let Some(total) = total_grads[rel].as_mut() else {
            continue;
        };
        scale_grads(total, inv);
        let fstate = fisher.per_layer[cut + rel]
            .as_mut()
            .ok_or_else(|| Error::State("fisher state missing for trainable layer".into()))?;
        fisher_accumulate(fstate, total, cfg.fisher_decay, fisher.f_max_clip)?;
        ar1_step(
            &mut net.layers[cut + rel].params,
            total,
            fstate,
            cfg.learning_rate,
            fisher.f_max_clip,
        )?;
    }
    Ok((loss_sum / batch.len() as f64) as f32)
}

/// Fraction of samples whose argmax prediction matches the label.
pub fn evaluate(net: &mut Network, samples: &[(Tensor, usize)]) -> Result<f64> {
    if samples.is_empty() {
        return Ok(0.0);
    }
    let mut hits = 0usize;
    for (x, label) in samples {
        if net.predict(x)? == *label {
            hits += 1;
        }
    }
    Ok(hits as f64 / samples.len() as f64)
}

/// Accuracy per class label, for tracking retention of old classes.
pub fn evaluate_per_class(
    net: &mut Network,
    samples: &[(Tensor, usize)],
) -> Result<std::collections::BTreeMap<usize, f64>> {
    use std::collections::BTreeMap;
    let mut hits: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for (x, label) in samples {
        let e = hits.entry(*label).or_insert((0, 0));
        e.1 += 1;
        if net.predict(x)? == *label {
            e.0 += 1;
        }
    }
    Ok(hits
        .into_iter()
        .map(|(k, (h, n))| (k, h as f64 / n as f64))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{toy_convnet, Network};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_input(rng: &mut ChaCha8Rng, dims: &[usize]) -> Tensor {
        let n: usize = dims.iter().product();
        let data = (0..n).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
        Tensor::new(dims.to_vec(), data).unwrap()
    }

    fn grads_of(weight: Vec<f32>, dims: Vec<usize>) -> LayerGrads {
        LayerGrads::FullyConnected {
            weight: Tensor::new(dims.clone(), weight).unwrap(),
            bias: Tensor::zeros(vec![dims[0]]),
        }
    }

    #[test]
    fn fisher_zero_grad_decays() {
        let mut f = grads_of(vec![0.4, 0.8], vec![1, 2]);
        // pre-load the accumulator
        if let LayerGrads::FullyConnected { weight, .. } = &mut f {
            weight.data_mut().copy_from_slice(&[0.4, 0.8]);
        }
        let g = grads_of(vec![0.0, 0.0], vec![1, 2]);
        fisher_accumulate(&mut f, &g, 0.9, 10.0).unwrap();
        let LayerGrads::FullyConnected { weight, .. } = &f else {
            panic!()
        };
        assert!((weight.data()[0] - 0.36).abs() < 1e-6);
        assert!((weight.data()[1] - 0.72).abs() < 1e-6);
    }

    #[test]
    fn fisher_no_decay_is_squared_grad() {
        let mut f = grads_of(vec![0.0, 0.0], vec![1, 2]);
        let g = grads_of(vec![0.5, -2.0], vec![1, 2]);
        fisher_accumulate(&mut f, &g, 0.0, 10.0).unwrap();
        let LayerGrads::FullyConnected { weight, .. } = &f else {
            panic!()
        };
        assert_eq!(weight.data(), &[0.25, 4.0]);
    }

    #[test]
    fn fisher_fixpoint_converges_to_min_of_gsq_and_clip() {
        // Repeated constant gradient g: the geometric series converges to
        // g^2, or saturates at the ceiling when g^2 exceeds it.
        let clip = 1.0f32;
        for (g, want) in [(0.5f32, 0.25f32), (2.0, 1.0)] {
            let mut f = grads_of(vec![0.0], vec![1, 1]);
            let grad = grads_of(vec![g], vec![1, 1]);
            for _ in 0..400 {
                fisher_accumulate(&mut f, &grad, 0.9, clip).unwrap();
            }
            let LayerGrads::FullyConnected { weight, .. } = &f else {
                panic!()
            };
            assert!(
                (weight.data()[0] - want).abs() < 1e-4,
                "g={g}: got {}, want {want}",
                weight.data()[0]
            );
        }
    }

    #[test]
    fn ar1_step_zero_fisher_is_plain_sgd() {
        let mut params = LayerParams::FullyConnected {
            weight: Tensor::new(vec![1, 2], vec![1.0, -1.0]).unwrap(),
            bias: Tensor::zeros(vec![1]),
        };
        let grad = grads_of(vec![0.2, 0.4], vec![1, 2]);
        let fisher = grads_of(vec![0.0, 0.0], vec![1, 2]);
        ar1_step(&mut params, &grad, &fisher, 0.5, 1e-3).unwrap();
        let LayerParams::FullyConnected { weight, .. } = &params else {
            panic!()
        };
        assert_eq!(weight.data(), &[1.0 - 0.5 * 0.2, -1.0 - 0.5 * 0.4]);
    }

    #[test]
    fn ar1_step_saturated_fisher_freezes_parameters() {
        let clip = 1e-3f32;
        let mut params = LayerParams::FullyConnected {
            weight: Tensor::new(vec![1, 2], vec![1.0, -1.0]).unwrap(),
            bias: Tensor::zeros(vec![1]),
        };
        let before = params.clone();
        let grad = grads_of(vec![5.0, -3.0], vec![1, 2]);
        let fisher = grads_of(vec![clip, clip], vec![1, 2]);
        ar1_step(&mut params, &grad, &fisher, 0.5, clip).unwrap();
        let (
            LayerParams::FullyConnected { weight, bias },
            LayerParams::FullyConnected { weight: w0, bias: b0 },
        ) = (&params, &before)
        else {
            panic!()
        };
        assert_eq!(weight.data(), w0.data());
        assert_eq!(bias.data(), b0.data());
    }

    #[test]
    fn ar1_step_half_fisher_moves_half_a_step() {
        let clip = 2.0f32;
        let mut params = LayerParams::FullyConnected {
            weight: Tensor::new(vec![1, 1], vec![1.0]).unwrap(),
            bias: Tensor::zeros(vec![1]),
        };
        let grad = grads_of(vec![0.8], vec![1, 1]);
        let fisher = grads_of(vec![clip / 2.0], vec![1, 1]);
        ar1_step(&mut params, &grad, &fisher, 1.0, clip).unwrap();
        let LayerParams::FullyConnected { weight, .. } = &params else {
            panic!()
        };
        // scale = 1 - 0.5 = 0.5, so exactly half of the plain step of 0.8
        assert_eq!(weight.data(), &[1.0 - 0.5 * 0.8]);
    }

    #[test]
    fn step_magnitude_never_exceeds_plain_sgd() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let lr = 0.3f32;
        let clip = 1e-2f32;
        for _ in 0..50 {
            let w0: Vec<f32> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let g: Vec<f32> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let f: Vec<f32> = (0..6).map(|_| rng.gen_range(0.0..clip)).collect();
            let mut params = LayerParams::FullyConnected {
                weight: Tensor::new(vec![2, 3], w0.clone()).unwrap(),
                bias: Tensor::zeros(vec![2]),
            };
            let grad = LayerGrads::FullyConnected {
                weight: Tensor::new(vec![2, 3], g.clone()).unwrap(),
                bias: Tensor::zeros(vec![2]),
            };
            let fisher = LayerGrads::FullyConnected {
                weight: Tensor::new(vec![2, 3], f).unwrap(),
                bias: Tensor::zeros(vec![2]),
            };
            ar1_step(&mut params, &grad, &fisher, lr, clip).unwrap();
            let LayerParams::FullyConnected { weight, .. } = &params else {
                panic!()
            };
            for i in 0..6 {
                let delta = (weight.data()[i] - w0[i]).abs();
                assert!(delta <= lr * g[i].abs() + 1e-7);
            }
        }
    }

    #[test]
    fn train_batch_zero_lr_keeps_parameters() {
        // lr=0 is rejected by validate(), but the update math must still be
        // a no-op; drive it with the smallest representable rate instead.
        let mut net = toy_convnet(3, 8, 11).unwrap();
        let cfg = TrainConfig {
            learning_rate: f32::MIN_POSITIVE,
            epochs: 1,
            ..TrainConfig::default()
        };
        let mut fisher = FisherState::new(&net, cfg.fisher_clip);
        fisher.saturate(); // scale = 0 for every parameter
        let before: Vec<Vec<f32>> = net
            .layers
            .iter()
            .map(|l| match &l.params {
                LayerParams::Conv { weight, .. } => weight.data().to_vec(),
                LayerParams::FullyConnected { weight, .. } => weight.data().to_vec(),
                _ => vec![],
            })
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let latent = rand_input(&mut rng, net.latent_shape());
        let loss = train_batch(&mut net, &mut fisher, &[(latent, 1)], &cfg).unwrap();
        assert!(loss > 0.0);
        for (layer, b) in net.layers.iter().zip(before) {
            match &layer.params {
                LayerParams::Conv { weight, .. }
                | LayerParams::FullyConnected { weight, .. } => {
                    assert_eq!(weight.data(), b.as_slice());
                }
                _ => {}
            }
        }
    }

    #[test]
    fn training_reduces_loss_on_repeated_batch() {
        let mut net = toy_convnet(3, 8, 17).unwrap();
        let cfg = TrainConfig {
            learning_rate: 0.1,
            ..TrainConfig::default()
        };
        let mut fisher = FisherState::new(&net, cfg.fisher_clip);
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let batch: Vec<(Tensor, usize)> = (0..6)
            .map(|i| (rand_input(&mut rng, net.latent_shape()), i % 3))
            .collect();
        let first = train_batch(&mut net, &mut fisher, &batch, &cfg).unwrap();
        let mut last = first;
        for _ in 0..30 {
            last = train_batch(&mut net, &mut fisher, &batch, &cfg).unwrap();
        }
        assert!(
            last < first,
            "loss should decrease on a repeated batch: {first} -> {last}"
        );
    }

    #[test]
    fn loss_non_increasing_on_convex_head() {
        // Only the final linear layer trains: softmax cross-entropy over a
        // linear map is convex, so a small plain-SGD step on the same
        // batch cannot increase the loss.
        let mut net = toy_convnet(3, 8, 41).unwrap();
        net.lr_cut = net.num_layers() - 1; // fc only
        let cfg = TrainConfig {
            learning_rate: 0.01,
            epochs: 1,
            batch_size: 8,
            fisher_decay: 1.0,
            fisher_clip: 1e-3,
        };
        let mut fisher = FisherState::new(&net, cfg.fisher_clip);
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        let batch: Vec<(Tensor, usize)> = (0..8)
            .map(|i| (rand_input(&mut rng, net.latent_shape()), i % 3))
            .collect();
        let first = train_batch(&mut net, &mut fisher, &batch, &cfg).unwrap();
        let second = train_batch(&mut net, &mut fisher, &batch, &cfg).unwrap();
        assert!(
            second <= first,
            "convex head loss increased: {first} -> {second}"
        );
    }

    #[test]
    fn full_pipeline_gradient_matches_finite_differences() {
        // Two trainable layers above the cut (pointwise conv + head): the
        // chained backward must match finite differences of the end-to-end
        // loss w.r.t. the bottom layer's weights.
        let mut net = toy_convnet(3, 8, 71).unwrap();
        let cut = net.lr_cut;
        let mut rng = ChaCha8Rng::seed_from_u64(72);
        let latent = rand_input(&mut rng, net.latent_shape());
        let label = 1usize;

        let (logits, tapes) = net.forward_train_from_cut(&latent).unwrap();
        let (_, mut err) = crate::layers::softmax_xent(&logits, label).unwrap();
        let n_layers = net.num_layers();
        let mut grads_at_cut: Option<LayerGrads> = None;
        for rel in (0..n_layers - cut).rev() {
            let layer = &net.layers[cut + rel];
            let tape = tapes[rel].as_ref();
            let g = layer.backward_grad(&err, tape).unwrap();
            if rel == 0 {
                grads_at_cut = Some(g);
            }
            if rel > 0 {
                err = layer.backward_error(&err, tape).unwrap();
            }
        }
        let LayerGrads::Conv { weight: analytic, .. } = grads_at_cut.unwrap() else {
            panic!("cut layer is the pointwise conv")
        };

        let loss_of = |net: &mut Network, latent: &Tensor| -> f64 {
            let out = net
                .forward_range(latent, net.lr_cut, net.num_layers())
                .unwrap();
            let (loss, _) = crate::layers::softmax_xent(&out, label).unwrap();
            loss as f64
        };
        let n = analytic.len();
        let mut worst = 0.0f64;
        let mut fd = vec![0.0f64; n];
        for i in 0..n {
            let h = 2e-3f32;
            let bump = |net: &mut Network, d: f32| {
                let LayerParams::Conv { weight, .. } = &mut net.layers[cut].params else {
                    panic!()
                };
                weight.data_mut()[i] += d;
            };
            bump(&mut net, h);
            let up = loss_of(&mut net, &latent);
            bump(&mut net, -2.0 * h);
            let dn = loss_of(&mut net, &latent);
            bump(&mut net, h);
            fd[i] = (up - dn) / (2.0 * h as f64);
        }
        let an: Vec<f64> = analytic.data().iter().map(|&v| v as f64).collect();
        let d2: f64 = fd.iter().zip(&an).map(|(a, b)| (a - b) * (a - b)).sum();
        let n2: f64 = fd.iter().map(|v| v * v).sum::<f64>().max(1e-12);
        worst = worst.max((d2 / n2).sqrt());
        assert!(worst <= 1e-2, "pipeline gradient rel err {worst}");
    }

    #[test]
    fn uniform_fisher_equals_rescaled_sgd() {
        // With f = c everywhere, the AR1 step is plain SGD at the rescaled
        // rate lr * (1 - c/clip) — bit for bit.
        let clip = 0.5f32;
        let c = 0.2f32;
        let lr = 0.3f32;
        let mut rng = ChaCha8Rng::seed_from_u64(81);
        let w0: Vec<f32> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let g: Vec<f32> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();

        let mut ar1_params = LayerParams::FullyConnected {
            weight: Tensor::new(vec![2, 4], w0.clone()).unwrap(),
            bias: Tensor::zeros(vec![2]),
        };
        let grads = LayerGrads::FullyConnected {
            weight: Tensor::new(vec![2, 4], g.clone()).unwrap(),
            bias: Tensor::zeros(vec![2]),
        };
        let fisher = LayerGrads::FullyConnected {
            weight: Tensor::new(vec![2, 4], vec![c; 8]).unwrap(),
            bias: Tensor::new(vec![2], vec![c; 2]).unwrap(),
        };
        ar1_step(&mut ar1_params, &grads, &fisher, lr, clip).unwrap();

        let scale = 1.0 - c / clip;
        let lr_rescaled = lr * scale;
        let sgd: Vec<f32> = w0.iter().zip(&g).map(|(p, gv)| p - lr_rescaled * gv).collect();
        let LayerParams::FullyConnected { weight, .. } = &ar1_params else {
            panic!()
        };
        assert_eq!(weight.data(), sgd.as_slice());
    }

    #[test]
    fn batch_with_wrong_latent_shape_is_config_error() {
        let mut net = toy_convnet(3, 8, 2).unwrap();
        let cfg = TrainConfig::default();
        let mut fisher = FisherState::new(&net, cfg.fisher_clip);
        let bad = Tensor::zeros(vec![2, 2]);
        assert!(matches!(
            train_batch(&mut net, &mut fisher, &[(bad, 0)], &cfg),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn config_validation_rejects_bad_values() {
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = TrainConfig {
            fisher_decay: 1.5,
            ..TrainConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
