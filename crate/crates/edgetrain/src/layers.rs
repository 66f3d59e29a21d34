//! Layer kinds of the benchmark network and their three computational
//! graphs: forward, error back-propagation and gradient computation.
//!
//! Every convolutional kind is lowered to GEMM through im2col; the error
//! pass of a conv is again a convolution, with the flipped coefficient
//! tensor applied to the (dilated, re-padded) incoming error.

use crate::error::{Error, Result};
use crate::tensor::{flip_coeff, gemm, gemm_bt, im2col, ConvGeometry, Tensor};

/// Batch renormalization clip schedule and epsilon. Constant, no warm-up.
pub const RENORM_R_MAX: f32 = 3.0;
pub const RENORM_D_MAX: f32 = 5.0;
pub const RENORM_EPS: f32 = 1e-5;
/// Exponential moving average weight for the running statistics.
pub const RENORM_MOMENTUM: f32 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LayerKind {
    Conv,
    Depthwise,
    Pointwise,
    FullyConnected,
    AvgPool,
    Relu,
    BatchRenorm,
}

impl LayerKind {
    pub fn is_conv(self) -> bool {
        matches!(self, LayerKind::Conv | LayerKind::Depthwise | LayerKind::Pointwise)
    }

    /// Layers whose backward pass needs the saved input activation.
    pub fn needs_tape(self) -> bool {
        !matches!(self, LayerKind::AvgPool)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LayerKind::Conv => "conv",
            LayerKind::Depthwise => "depthwise",
            LayerKind::Pointwise => "pointwise",
            LayerKind::FullyConnected => "fully_connected",
            LayerKind::AvgPool => "avg_pool",
            LayerKind::Relu => "relu",
            LayerKind::BatchRenorm => "batch_renorm",
        }
    }
}

/// Static description of one layer: kind, geometry and chained shapes.
#[derive(Debug, Clone)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    pub geom: Option<ConvGeometry>,
    pub in_shape: Vec<usize>,
    pub out_shape: Vec<usize>,
}

impl LayerSpec {
    pub fn conv(name: &str, geom: ConvGeometry, in_shape: &[usize]) -> Result<Self> {
        if in_shape.len() != 3 || in_shape[0] != geom.c_in {
            return Err(Error::Shape(format!(
                "layer {name}: input {in_shape:?} does not feed geometry {geom:?}"
            )));
        }
        let (ho, wo) = geom.out_hw(in_shape[1], in_shape[2])?;
        let kind = if geom.depthwise {
            LayerKind::Depthwise
        } else if geom.k_h == 1 && geom.k_w == 1 {
            LayerKind::Pointwise
        } else {
            LayerKind::Conv
        };
        Ok(LayerSpec {
            name: name.to_string(),
            kind,
            geom: Some(geom),
            in_shape: in_shape.to_vec(),
            out_shape: vec![geom.c_out, ho, wo],
        })
    }

    pub fn fully_connected(name: &str, in_features: usize, out_features: usize) -> Self {
        LayerSpec {
            name: name.to_string(),
            kind: LayerKind::FullyConnected,
            geom: None,
            in_shape: vec![in_features],
            out_shape: vec![out_features],
        }
    }

    /// Global average pool: C x H x W -> C.
    pub fn avg_pool(name: &str, in_shape: &[usize]) -> Result<Self> {
        if in_shape.len() != 3 {
            return Err(Error::Shape(format!(
                "layer {name}: avg_pool wants CHW input, got {in_shape:?}"
            )));
        }
        Ok(LayerSpec {
            name: name.to_string(),
            kind: LayerKind::AvgPool,
            geom: None,
            in_shape: in_shape.to_vec(),
            out_shape: vec![in_shape[0]],
        })
    }

    pub fn relu(name: &str, in_shape: &[usize]) -> Self {
        LayerSpec {
            name: name.to_string(),
            kind: LayerKind::Relu,
            geom: None,
            in_shape: in_shape.to_vec(),
            out_shape: in_shape.to_vec(),
        }
    }

    pub fn batch_renorm(name: &str, in_shape: &[usize]) -> Result<Self> {
        if in_shape.len() != 3 {
            return Err(Error::Shape(format!(
                "layer {name}: batch_renorm wants CHW input, got {in_shape:?}"
            )));
        }
        Ok(LayerSpec {
            name: name.to_string(),
            kind: LayerKind::BatchRenorm,
            geom: None,
            in_shape: in_shape.to_vec(),
            out_shape: in_shape.to_vec(),
        })
    }

    /// Trainable parameter count, biases included.
    pub fn param_count(&self) -> usize {
        match self.kind {
            LayerKind::Conv | LayerKind::Pointwise => {
                let g = self.geom.expect("conv layer has geometry");
                g.c_out * g.c_in * g.k_h * g.k_w + g.c_out
            }
            LayerKind::Depthwise => {
                let g = self.geom.expect("conv layer has geometry");
                g.c_out * g.k_h * g.k_w + g.c_out
            }
            LayerKind::FullyConnected => self.in_shape[0] * self.out_shape[0] + self.out_shape[0],
            LayerKind::BatchRenorm => 2 * self.in_shape[0],
            LayerKind::AvgPool | LayerKind::Relu => 0,
        }
    }

    pub fn in_elems(&self) -> usize {
        self.in_shape.iter().product()
    }

    pub fn out_elems(&self) -> usize {
        self.out_shape.iter().product()
    }
}

/// Per-layer trainable state.
#[derive(Debug, Clone)]
pub enum LayerParams {
    Conv {
        /// `Cout x Cin x Kh x Kw`, or `C x 1 x Kh x Kw` for depthwise.
        weight: Tensor,
        bias: Tensor,
    },
    FullyConnected {
        /// `out x in`, row-major.
        weight: Tensor,
        bias: Tensor,
    },
    Renorm {
        gamma: Vec<f32>,
        beta: Vec<f32>,
        running_mean: Vec<f32>,
        running_var: Vec<f32>,
    },
    None,
}

/// Gradients mirroring [`LayerParams`].
#[derive(Debug, Clone)]
pub enum LayerGrads {
    Conv { weight: Tensor, bias: Tensor },
    FullyConnected { weight: Tensor, bias: Tensor },
    Renorm { gamma: Vec<f32>, beta: Vec<f32> },
    None,
}

/// Values saved during a training forward, consumed by the backward passes.
#[derive(Debug, Clone)]
pub struct LayerTape {
    pub act_in: Tensor,
    pub aux: TapeAux,
}

#[derive(Debug, Clone)]
pub enum TapeAux {
    None,
    Renorm(RenormStats),
}

/// Per-channel statistics captured by a batch-renorm forward.
#[derive(Debug, Clone)]
pub struct RenormStats {
    pub mean: Vec<f32>,
    pub sigma: Vec<f32>,
    pub r: Vec<f32>,
    pub d: Vec<f32>,
}

/// A layer instance: description plus parameters.
#[derive(Debug, Clone)]
pub struct Layer {
    pub spec: LayerSpec,
    pub params: LayerParams,
}

impl Layer {
    /// Run the forward graph. In training mode the input activation (and any
    /// layer-specific statistics) are recorded on the returned tape, and
    /// batch-renorm running statistics are updated.
    pub fn forward(&mut self, act_in: &Tensor, train: bool) -> Result<(Tensor, Option<LayerTape>)> {
        act_in.require_dims(&self.spec.in_shape)?;
        let (out, aux) = match self.spec.kind {
            LayerKind::Conv | LayerKind::Depthwise | LayerKind::Pointwise => {
                (self.conv_forward(act_in)?, TapeAux::None)
            }
            LayerKind::FullyConnected => (self.fc_forward(act_in)?, TapeAux::None),
            LayerKind::AvgPool => (avg_pool_forward(act_in), TapeAux::None),
            LayerKind::Relu => (relu_forward(act_in), TapeAux::None),
            LayerKind::BatchRenorm => {
                let mode = if train {
                    RenormMode::Train
                } else {
                    RenormMode::Inference
                };
                let (out, stats) = self.renorm_forward(act_in, mode)?;
                (out, TapeAux::Renorm(stats))
            }
        };
        let tape = if train && self.spec.kind.needs_tape() {
            Some(LayerTape {
                act_in: act_in.clone(),
                aux,
            })
        } else {
            None
        };
        Ok((out, tape))
    }

    /// Propagate the error at this layer's output back to its input.
    pub fn backward_error(&self, err_in: &Tensor, tape: Option<&LayerTape>) -> Result<Tensor> {
        err_in.require_dims(&self.spec.out_shape)?;
        match self.spec.kind {
            LayerKind::Conv | LayerKind::Pointwise => self.conv_backward_error(err_in),
            LayerKind::Depthwise => self.depthwise_backward_error(err_in),
            LayerKind::FullyConnected => self.fc_backward_error(err_in),
            LayerKind::AvgPool => Ok(avg_pool_backward(err_in, &self.spec.in_shape)),
            LayerKind::Relu => {
                let tape = tape.ok_or_else(|| self.missing_tape())?;
                Ok(relu_backward(err_in, &tape.act_in))
            }
            LayerKind::BatchRenorm => {
                let tape = tape.ok_or_else(|| self.missing_tape())?;
                let TapeAux::Renorm(stats) = &tape.aux else {
                    return Err(self.missing_tape());
                };
                Ok(self.renorm_backward_error(err_in, &tape.act_in, stats))
            }
        }
    }

    /// Gradient of the loss w.r.t. this layer's parameters, given the error
    /// at the layer's output and the saved forward tape.
    pub fn backward_grad(&self, err_out_of_layer: &Tensor, tape: Option<&LayerTape>) -> Result<LayerGrads> {
        err_out_of_layer.require_dims(&self.spec.out_shape)?;
        match self.spec.kind {
            LayerKind::Conv | LayerKind::Pointwise => {
                let tape = tape.ok_or_else(|| self.missing_tape())?;
                self.conv_backward_grad(err_out_of_layer, &tape.act_in)
            }
            LayerKind::Depthwise => {
                let tape = tape.ok_or_else(|| self.missing_tape())?;
                self.depthwise_backward_grad(err_out_of_layer, &tape.act_in)
            }
            LayerKind::FullyConnected => {
                let tape = tape.ok_or_else(|| self.missing_tape())?;
                self.fc_backward_grad(err_out_of_layer, &tape.act_in)
            }
            LayerKind::BatchRenorm => {
                let tape = tape.ok_or_else(|| self.missing_tape())?;
                let TapeAux::Renorm(stats) = &tape.aux else {
                    return Err(self.missing_tape());
                };
                Ok(self.renorm_backward_grad(err_out_of_layer, &tape.act_in, stats))
            }
            LayerKind::AvgPool | LayerKind::Relu => Ok(LayerGrads::None),
        }
    }

    fn missing_tape(&self) -> Error {
        Error::State(format!(
            "layer {} has no saved tape; run a training forward first",
            self.spec.name
        ))
    }

    fn conv_pieces(&self) -> Result<(&Tensor, &Tensor, ConvGeometry)> {
        let LayerParams::Conv { weight, bias } = &self.params else {
            return Err(Error::State(format!(
                "layer {} is missing conv parameters",
                self.spec.name
            )));
        };
        let geom = self.spec.geom.ok_or_else(|| {
            Error::State(format!("layer {} is missing geometry", self.spec.name))
        })?;
        Ok((weight, bias, geom))
    }

    fn conv_forward(&self, act_in: &Tensor) -> Result<Tensor> {
        let (_, _, geom) = self.conv_pieces()?;
        let (ho, wo) = geom.out_hw(act_in.dims()[1], act_in.dims()[2])?;
        let out = self.forward_out_channels(act_in, 0, geom.c_out)?;
        out.reshape(vec![geom.c_out, ho, wo])
    }

    /// Compute output channels `[c0, c1)` of a parametric layer as one
    /// coefficient tile. Stitching tiles over the full channel range is
    /// bit-identical to a whole-layer forward: the per-element reduction
    /// order never changes, only the schedule does.
    pub fn forward_out_channels(&self, act_in: &Tensor, c0: usize, c1: usize) -> Result<Tensor> {
        act_in.require_dims(&self.spec.in_shape)?;
        if self.spec.kind == LayerKind::FullyConnected {
            let (weight, bias) = self.fc_pieces()?;
            let in_f = weight.dims()[1];
            if c1 > weight.dims()[0] || c0 >= c1 {
                return Err(Error::Shape(format!("tile {c0}..{c1} out of range")));
            }
            let mut out = vec![0.0f32; c1 - c0];
            for o in c0..c1 {
                let mut acc = bias.data()[o];
                let wrow = &weight.data()[o * in_f..(o + 1) * in_f];
                for (i, &wv) in wrow.iter().enumerate() {
                    acc += wv * act_in.data()[i];
                }
                out[o - c0] = acc;
            }
            return Tensor::new(vec![c1 - c0], out);
        }
        let (weight, bias, geom) = self.conv_pieces()?;
        if c1 > geom.c_out || c0 >= c1 {
            return Err(Error::Shape(format!("tile {c0}..{c1} out of range")));
        }
        let (ho, wo) = geom.out_hw(act_in.dims()[1], act_in.dims()[2])?;
        let spatial = ho * wo;
        if self.spec.kind == LayerKind::Depthwise {
            let cols = im2col(act_in, &geom)?;
            let kk = geom.k_h * geom.k_w;
            let mut out = vec![0.0f32; (c1 - c0) * spatial];
            for c in c0..c1 {
                let wrow = &weight.data()[c * kk..(c + 1) * kk];
                let b = bias.data()[c];
                for j in 0..spatial {
                    let mut acc = b;
                    for (ki, &wv) in wrow.iter().enumerate() {
                        acc += wv * cols.data()[(c * kk + ki) * spatial + j];
                    }
                    out[(c - c0) * spatial + j] = acc;
                }
            }
            return Tensor::new(vec![c1 - c0, spatial], out);
        }
        // Pointwise with unit stride and no padding skips im2col entirely:
        // in CHW the activation already is the (Cin x H*W) operand.
        let cols;
        let cols_ref = if self.spec.kind == LayerKind::Pointwise
            && geom.stride == 1
            && geom.padding == 0
        {
            cols = act_in.clone().reshape(vec![geom.c_in, spatial])?;
            &cols
        } else {
            cols = im2col(act_in, &geom)?;
            &cols
        };
        let krows = geom.c_in * geom.k_h * geom.k_w;
        let wtile = weight
            .clone()
            .reshape(vec![geom.c_out, krows])?
            .rows_slice(c0, c1)?;
        let mut out = gemm(&wtile, cols_ref, None)?;
        for c in c0..c1 {
            let b = bias.data()[c];
            for v in &mut out.data_mut()[(c - c0) * spatial..(c - c0 + 1) * spatial] {
                *v += b;
            }
        }
        Ok(out)
    }

    /// Full convolution of the incoming error with the flipped coefficients:
    /// the error map is dilated by the stride and re-padded so that a
    /// stride-1 convolution lands exactly on the input extent (the trailing
    /// pad absorbs the floor-division remainder), then lowered through
    /// im2col + GEMM like any forward convolution.
    fn conv_backward_error(&self, err_in: &Tensor) -> Result<Tensor> {
        let (weight, _, geom) = self.conv_pieces()?;
        let flipped = flip_coeff(weight)?;
        let fmat = flipped
            .clone()
            .reshape(vec![geom.c_in, geom.c_out * geom.k_h * geom.k_w])?;
        let (h, w) = (self.spec.in_shape[1], self.spec.in_shape[2]);
        let padded = dilate_and_pad(err_in, &geom, h, w)?;
        let back_geom = ConvGeometry::new(geom.c_out, geom.c_in, geom.k_h, geom.k_w, 1, 0, false)?;
        let cols = im2col(&padded, &back_geom)?;
        let out = gemm(&fmat, &cols, None)?;
        out.reshape(vec![geom.c_in, h, w])
    }

    fn depthwise_backward_error(&self, err_in: &Tensor) -> Result<Tensor> {
        let (weight, _, geom) = self.conv_pieces()?;
        let (h, w) = (self.spec.in_shape[1], self.spec.in_shape[2]);
        let kk = geom.k_h * geom.k_w;
        let padded = dilate_and_pad(err_in, &geom, h, w)?;
        let (hd, wd) = (padded.dims()[1], padded.dims()[2]);
        let chan_geom = ConvGeometry::new(1, 1, geom.k_h, geom.k_w, 1, 0, false)?;
        let mut out = Tensor::zeros(vec![geom.c_in, h, w]);
        for c in 0..geom.c_in {
            let chan = Tensor::new(
                vec![1, hd, wd],
                padded.data()[c * hd * wd..(c + 1) * hd * wd].to_vec(),
            )?;
            let cols = im2col(&chan, &chan_geom)?;
            // spatially reversed kernel of channel c
            let wrow: Vec<f32> = weight.data()[c * kk..(c + 1) * kk]
                .iter()
                .rev()
                .copied()
                .collect();
            let wmat = Tensor::new(vec![1, kk], wrow)?;
            let conv = gemm(&wmat, &cols, None)?;
            out.data_mut()[c * h * w..(c + 1) * h * w].copy_from_slice(conv.data());
        }
        Ok(out)
    }

    fn conv_backward_grad(&self, err: &Tensor, act_in: &Tensor) -> Result<LayerGrads> {
        let (weight, _, geom) = self.conv_pieces()?;
        let (ho, wo) = (self.spec.out_shape[1], self.spec.out_shape[2]);
        let spatial = ho * wo;
        let err_mat = err.clone().reshape(vec![geom.c_out, spatial])?;
        let cols;
        let cols_ref = if self.spec.kind == LayerKind::Pointwise
            && geom.stride == 1
            && geom.padding == 0
        {
            cols = act_in.clone().reshape(vec![geom.c_in, spatial])?;
            &cols
        } else {
            cols = im2col(act_in, &geom)?;
            &cols
        };
        let gw = gemm_bt(&err_mat, cols_ref)?;
        let grad_w = gw.reshape(weight.dims().to_vec())?;
        let mut grad_b = vec![0.0f32; geom.c_out];
        for c in 0..geom.c_out {
            let mut acc = 0.0f32;
            for j in 0..spatial {
                acc += err_mat.data()[c * spatial + j];
            }
            grad_b[c] = acc;
        }
        Ok(LayerGrads::Conv {
            weight: grad_w,
            bias: Tensor::new(vec![geom.c_out], grad_b)?,
        })
    }

    fn depthwise_backward_grad(&self, err: &Tensor, act_in: &Tensor) -> Result<LayerGrads> {
        let (weight, _, geom) = self.conv_pieces()?;
        let (ho, wo) = (self.spec.out_shape[1], self.spec.out_shape[2]);
        let spatial = ho * wo;
        let kk = geom.k_h * geom.k_w;
        let cols = im2col(act_in, &geom)?;
        let mut gw = vec![0.0f32; weight.len()];
        let mut gb = vec![0.0f32; geom.c_out];
        for c in 0..geom.c_out {
            let erow = &err.data()[c * spatial..(c + 1) * spatial];
            for ki in 0..kk {
                let crow = &cols.data()[(c * kk + ki) * spatial..(c * kk + ki + 1) * spatial];
                let mut acc = 0.0f32;
                for j in 0..spatial {
                    acc += erow[j] * crow[j];
                }
                gw[c * kk + ki] = acc;
            }
            gb[c] = erow.iter().sum();
        }
        Ok(LayerGrads::Conv {
            weight: Tensor::new(weight.dims().to_vec(), gw)?,
            bias: Tensor::new(vec![geom.c_out], gb)?,
        })
    }

    fn fc_pieces(&self) -> Result<(&Tensor, &Tensor)> {
        let LayerParams::FullyConnected { weight, bias } = &self.params else {
            return Err(Error::State(format!(
                "layer {} is missing fully-connected parameters",
                self.spec.name
            )));
        };
        Ok((weight, bias))
    }

    fn fc_forward(&self, act_in: &Tensor) -> Result<Tensor> {
        let (weight, _) = self.fc_pieces()?;
        self.forward_out_channels(act_in, 0, weight.dims()[0])
    }

    fn fc_backward_error(&self, err_in: &Tensor) -> Result<Tensor> {
        let (weight, _) = self.fc_pieces()?;
        let (out_f, in_f) = (weight.dims()[0], weight.dims()[1]);
        let mut out = vec![0.0f32; in_f];
        for (i, ov) in out.iter_mut().enumerate() {
            let mut acc = 0.0f32;
            for o in 0..out_f {
                acc += weight.data()[o * in_f + i] * err_in.data()[o];
            }
            *ov = acc;
        }
        Tensor::new(vec![in_f], out)
    }

    fn fc_backward_grad(&self, err: &Tensor, act_in: &Tensor) -> Result<LayerGrads> {
        let (weight, _) = self.fc_pieces()?;
        let (out_f, in_f) = (weight.dims()[0], weight.dims()[1]);
        let mut gw = vec![0.0f32; out_f * in_f];
        for o in 0..out_f {
            let e = err.data()[o];
            for i in 0..in_f {
                gw[o * in_f + i] = e * act_in.data()[i];
            }
        }
        Ok(LayerGrads::FullyConnected {
            weight: Tensor::new(vec![out_f, in_f], gw)?,
            bias: Tensor::new(vec![out_f], err.data().to_vec())?,
        })
    }

    fn renorm_pieces(&self) -> Result<(&Vec<f32>, &Vec<f32>, &Vec<f32>, &Vec<f32>)> {
        let LayerParams::Renorm {
            gamma,
            beta,
            running_mean,
            running_var,
        } = &self.params
        else {
            return Err(Error::State(format!(
                "layer {} is missing renorm parameters",
                self.spec.name
            )));
        };
        Ok((gamma, beta, running_mean, running_var))
    }

    /// Batch-renorm forward. Statistics are per channel over the sample's
    /// spatial positions. `r` and `d` are clipped corrections toward the
    /// running statistics and are treated as constants by the backward pass.
    pub fn renorm_forward(&mut self, act_in: &Tensor, mode: RenormMode<'_>) -> Result<(Tensor, RenormStats)> {
        act_in.require_rank(3)?;
        let (c, h, w) = (act_in.dims()[0], act_in.dims()[1], act_in.dims()[2]);
        let n = h * w;
        let spec_name = self.spec.name.clone();
        let LayerParams::Renorm {
            gamma,
            beta,
            running_mean,
            running_var,
        } = &mut self.params
        else {
            return Err(Error::State(format!(
                "layer {spec_name} is missing renorm parameters"
            )));
        };
        let mut out = vec![0.0f32; act_in.len()];
        let mut stats = RenormStats {
            mean: vec![0.0; c],
            sigma: vec![0.0; c],
            r: vec![1.0; c],
            d: vec![0.0; c],
        };
        for ch in 0..c {
            let xs = &act_in.data()[ch * n..(ch + 1) * n];
            match mode {
                RenormMode::Inference => {
                    let sr = (running_var[ch] + RENORM_EPS).sqrt();
                    let (m, g, b) = (running_mean[ch], gamma[ch], beta[ch]);
                    for (o, &x) in out[ch * n..(ch + 1) * n].iter_mut().zip(xs) {
                        *o = g * (x - m) / sr + b;
                    }
                    stats.mean[ch] = m;
                    stats.sigma[ch] = sr;
                }
                RenormMode::Train | RenormMode::Frozen { .. } => {
                    let mean = xs.iter().sum::<f32>() / n as f32;
                    let var = xs.iter().map(|&x| (x - mean) * (x - mean)).sum::<f32>() / n as f32;
                    let sigma = (var + RENORM_EPS).sqrt();
                    let (r, d) = match mode {
                        RenormMode::Frozen { r, d } => (r[ch], d[ch]),
                        _ => {
                            let sr = (running_var[ch] + RENORM_EPS).sqrt();
                            let r = (sigma / sr).clamp(1.0 / RENORM_R_MAX, RENORM_R_MAX);
                            let d = ((mean - running_mean[ch]) / sr).clamp(-RENORM_D_MAX, RENORM_D_MAX);
                            (r, d)
                        }
                    };
                    let (g, b) = (gamma[ch], beta[ch]);
                    for (o, &x) in out[ch * n..(ch + 1) * n].iter_mut().zip(xs) {
                        *o = g * ((x - mean) / sigma * r + d) + b;
                    }
                    if matches!(mode, RenormMode::Train) {
                        running_mean[ch] += RENORM_MOMENTUM * (mean - running_mean[ch]);
                        running_var[ch] += RENORM_MOMENTUM * (var - running_var[ch]);
                    }
                    stats.mean[ch] = mean;
                    stats.sigma[ch] = sigma;
                    stats.r[ch] = r;
                    stats.d[ch] = d;
                }
            }
        }
        Ok((Tensor::new(vec![c, h, w], out)?, stats))
    }

    fn renorm_backward_error(&self, err: &Tensor, act_in: &Tensor, stats: &RenormStats) -> Tensor {
        let (gamma, ..) = self.renorm_pieces().expect("renorm params checked by caller");
        let (c, h, w) = (act_in.dims()[0], act_in.dims()[1], act_in.dims()[2]);
        let n = h * w;
        let nf = n as f32;
        let mut out = vec![0.0f32; err.len()];
        for ch in 0..c {
            let xs = &act_in.data()[ch * n..(ch + 1) * n];
            let es = &err.data()[ch * n..(ch + 1) * n];
            let (mean, sigma, r, g) = (stats.mean[ch], stats.sigma[ch], stats.r[ch], gamma[ch]);
            // dz = gamma * r * dy; dx = (dz - mean(dz) - z*mean(dz*z)) / sigma
            let mut sum_dz = 0.0f32;
            let mut sum_dzz = 0.0f32;
            for j in 0..n {
                let dz = g * r * es[j];
                let z = (xs[j] - mean) / sigma;
                sum_dz += dz;
                sum_dzz += dz * z;
            }
            let (m_dz, m_dzz) = (sum_dz / nf, sum_dzz / nf);
            for j in 0..n {
                let dz = g * r * es[j];
                let z = (xs[j] - mean) / sigma;
                out[ch * n + j] = (dz - m_dz - z * m_dzz) / sigma;
            }
        }
        Tensor::new(vec![c, h, w], out).expect("same dims as input")
    }

    fn renorm_backward_grad(&self, err: &Tensor, act_in: &Tensor, stats: &RenormStats) -> LayerGrads {
        let (c, h, w) = (act_in.dims()[0], act_in.dims()[1], act_in.dims()[2]);
        let n = h * w;
        let mut dgamma = vec![0.0f32; c];
        let mut dbeta = vec![0.0f32; c];
        for ch in 0..c {
            let xs = &act_in.data()[ch * n..(ch + 1) * n];
            let es = &err.data()[ch * n..(ch + 1) * n];
            let (mean, sigma, r, d) = (
                stats.mean[ch],
                stats.sigma[ch],
                stats.r[ch],
                stats.d[ch],
            );
            let mut dg = 0.0f32;
            let mut db = 0.0f32;
            for j in 0..n {
                let xhat = (xs[j] - mean) / sigma * r + d;
                dg += es[j] * xhat;
                db += es[j];
            }
            dgamma[ch] = dg;
            dbeta[ch] = db;
        }
        LayerGrads::Renorm {
            gamma: dgamma,
            beta: dbeta,
        }
    }
}

/// How a batch-renorm forward treats its correction factors.
#[derive(Debug, Clone)]
pub enum RenormMode<'a> {
    /// Compute r, d from batch vs running statistics; update the EMA.
    Train,
    /// Normalize with running statistics only (r, d not applicable).
    Inference,
    /// Use the given r, d; do not touch the EMA. This is the function the
    /// backward pass differentiates, so finite differencing uses it.
    Frozen { r: &'a [f32], d: &'a [f32] },
}

fn relu_forward(act_in: &Tensor) -> Tensor {
    let data = act_in.data().iter().map(|&v| v.max(0.0)).collect();
    Tensor::new(act_in.dims().to_vec(), data).expect("same dims")
}

fn relu_backward(err: &Tensor, act_in: &Tensor) -> Tensor {
    let data = err
        .data()
        .iter()
        .zip(act_in.data())
        .map(|(&e, &x)| if x > 0.0 { e } else { 0.0 })
        .collect();
    Tensor::new(err.dims().to_vec(), data).expect("same dims")
}

fn avg_pool_forward(act_in: &Tensor) -> Tensor {
    let (c, h, w) = (act_in.dims()[0], act_in.dims()[1], act_in.dims()[2]);
    let n = (h * w) as f32;
    let mut out = vec![0.0f32; c];
    for ch in 0..c {
        out[ch] = act_in.data()[ch * h * w..(ch + 1) * h * w].iter().sum::<f32>() / n;
    }
    Tensor::new(vec![c], out).expect("rank-1 output")
}

fn avg_pool_backward(err: &Tensor, in_shape: &[usize]) -> Tensor {
    let (c, h, w) = (in_shape[0], in_shape[1], in_shape[2]);
    let n = (h * w) as f32;
    let mut out = vec![0.0f32; c * h * w];
    for ch in 0..c {
        let v = err.data()[ch] / n;
        for o in &mut out[ch * h * w..(ch + 1) * h * w] {
            *o = v;
        }
    }
    Tensor::new(vec![c, h, w], out).expect("CHW output")
}

/// Numerically stabilized softmax cross-entropy.
///
/// Returns the scalar loss and the error w.r.t. the logits,
/// `softmax(logits) - onehot(label)`.
pub fn softmax_xent(logits: &Tensor, label: usize) -> Result<(f32, Tensor)> {
    logits.require_rank(1)?;
    let n = logits.len();
    if label >= n {
        return Err(Error::Argument(format!(
            "label {label} out of range for {n} classes"
        )));
    }
    let max = logits.data().iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    let exps: Vec<f32> = logits.data().iter().map(|&v| (v - max).exp()).collect();
    let sum: f32 = exps.iter().sum();
    let mut err = vec![0.0f32; n];
    for (i, &e) in exps.iter().enumerate() {
        err[i] = e / sum;
    }
    let loss = -(err[label].max(f32::MIN_POSITIVE)).ln();
    err[label] -= 1.0;
    Ok((loss, Tensor::new(vec![n], err)?))
}

/// Scatter an error map onto the grid a stride-1 full convolution needs:
/// `stride - 1` zeros between elements, `k - 1 - p` leading zeros, and a
/// trailing margin of `k - 1 - p + r` where `r` is the floor-division
/// remainder of the forward geometry — so the backward output extent is
/// exactly the input extent `h x w`.
fn dilate_and_pad(err: &Tensor, geom: &ConvGeometry, h: usize, w: usize) -> Result<Tensor> {
    let (c, ho, wo) = (err.dims()[0], err.dims()[1], err.dims()[2]);
    let s = geom.stride;
    let q_h = back_padding(geom.k_h, geom.padding)?;
    let q_w = back_padding(geom.k_w, geom.padding)?;
    let r_h = (h + 2 * geom.padding - geom.k_h) % s;
    let r_w = (w + 2 * geom.padding - geom.k_w) % s;
    let hp = q_h + (ho - 1) * s + 1 + q_h + r_h;
    let wp = q_w + (wo - 1) * s + 1 + q_w + r_w;
    let mut out = Tensor::zeros(vec![c, hp, wp]);
    for ch in 0..c {
        for y in 0..ho {
            for x in 0..wo {
                out.data_mut()[(ch * hp + q_h + y * s) * wp + q_w + x * s] =
                    err.data()[(ch * ho + y) * wo + x];
            }
        }
    }
    Ok(out)
}

fn back_padding(k: usize, p: usize) -> Result<usize> {
    if p > k - 1 {
        return Err(Error::Geometry(format!(
            "padding {p} exceeds kernel-1 = {}; transposed geometry unsupported",
            k - 1
        )));
    }
    Ok(k - 1 - p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::init_layer_params;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, dims: Vec<usize>) -> Tensor {
        let n: usize = dims.iter().product();
        let data = (0..n).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
        Tensor::new(dims, data).unwrap()
    }

    fn pointwise_identity(c: usize, hw: usize) -> Layer {
        let geom = ConvGeometry::new(c, c, 1, 1, 1, 0, false).unwrap();
        let spec = LayerSpec::conv("pw", geom, &[c, hw, hw]).unwrap();
        let mut weight = Tensor::zeros(vec![c, c, 1, 1]);
        for i in 0..c {
            weight.data_mut()[i * c + i] = 1.0;
        }
        Layer {
            spec,
            params: LayerParams::Conv {
                weight,
                bias: Tensor::zeros(vec![c]),
            },
        }
    }

    #[test]
    fn pointwise_identity_passes_activations_through() {
        let mut layer = pointwise_identity(3, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = rand_tensor(&mut rng, vec![3, 4, 4]);
        let (y, _) = layer.forward(&x, false).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn pointwise_identity_backward_error_passthrough() {
        let layer = pointwise_identity(3, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let e = rand_tensor(&mut rng, vec![3, 4, 4]);
        let back = layer.backward_error(&e, None).unwrap();
        assert_eq!(back.data(), e.data());
    }

    #[test]
    fn conv_of_ones_sums_input() {
        // 1-channel 2x2 input, 2x2 kernel of ones, no padding -> single sum.
        let geom = ConvGeometry::new(1, 1, 2, 2, 1, 0, false).unwrap();
        let spec = LayerSpec::conv("c", geom, &[1, 2, 2]).unwrap();
        let mut layer = Layer {
            spec,
            params: LayerParams::Conv {
                weight: Tensor::new(vec![1, 1, 2, 2], vec![1.0; 4]).unwrap(),
                bias: Tensor::zeros(vec![1]),
            },
        };
        let x = Tensor::new(vec![1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (y, _) = layer.forward(&x, false).unwrap();
        assert_eq!(y.dims(), &[1, 1, 1]);
        assert_eq!(y.data(), &[10.0]);
    }

    #[test]
    fn relu_clamps_negatives() {
        let spec = LayerSpec::relu("r", &[3]);
        let mut layer = Layer {
            spec,
            params: LayerParams::None,
        };
        let x = Tensor::new(vec![3], vec![-1.0, 0.0, 2.0]).unwrap();
        let (y, _) = layer.forward(&x, false).unwrap();
        assert_eq!(y.data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn fc_backward_error_is_w_transpose_times_err() {
        let spec = LayerSpec::fully_connected("fc", 3, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let weight = rand_tensor(&mut rng, vec![4, 3]);
        let layer = Layer {
            spec,
            params: LayerParams::FullyConnected {
                weight: weight.clone(),
                bias: Tensor::zeros(vec![4]),
            },
        };
        let e = rand_tensor(&mut rng, vec![4]);
        let back = layer.backward_error(&e, None).unwrap();
        for i in 0..3 {
            let mut want = 0.0f32;
            for o in 0..4 {
                want += weight.data()[o * 3 + i] * e.data()[o];
            }
            assert!((back.data()[i] - want).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_error_propagates_to_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let geom = ConvGeometry::new(2, 3, 3, 3, 1, 1, false).unwrap();
        let spec = LayerSpec::conv("c", geom, &[2, 5, 5]).unwrap();
        let mut layer = Layer {
            spec: spec.clone(),
            params: init_layer_params(&spec, &mut rng),
        };
        let x = rand_tensor(&mut rng, vec![2, 5, 5]);
        let (_, tape) = layer.forward(&x, true).unwrap();
        let zero = Tensor::zeros(vec![3, 5, 5]);
        let back = layer.backward_error(&zero, tape.as_ref()).unwrap();
        assert!(back.data().iter().all(|&v| v == 0.0));
        let grads = layer.backward_grad(&zero, tape.as_ref()).unwrap();
        let LayerGrads::Conv { weight, bias } = grads else {
            panic!("conv grads")
        };
        assert!(weight.data().iter().all(|&v| v == 0.0));
        assert!(bias.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn fc_grad_with_basis_input_is_single_column() {
        let spec = LayerSpec::fully_connected("fc", 4, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let layer = Layer {
            spec: spec.clone(),
            params: init_layer_params(&spec, &mut rng),
        };
        let mut x = Tensor::zeros(vec![4]);
        x.data_mut()[2] = 1.0;
        let tape = LayerTape {
            act_in: x,
            aux: TapeAux::None,
        };
        let e = rand_tensor(&mut rng, vec![3]);
        let LayerGrads::FullyConnected { weight, .. } =
            layer.backward_grad(&e, Some(&tape)).unwrap()
        else {
            panic!("fc grads")
        };
        for o in 0..3 {
            for i in 0..4 {
                let want = if i == 2 { e.data()[o] } else { 0.0 };
                assert_eq!(weight.data()[o * 4 + i], want);
            }
        }
    }

    #[test]
    fn missing_tape_is_state_error() {
        let spec = LayerSpec::fully_connected("fc", 4, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let layer = Layer {
            spec: spec.clone(),
            params: init_layer_params(&spec, &mut rng),
        };
        let e = Tensor::zeros(vec![3]);
        assert!(matches!(
            layer.backward_grad(&e, None),
            Err(Error::State(_))
        ));
    }

    #[test]
    fn depthwise_equals_stacked_single_channel_convs() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let c = 4;
        let geom = ConvGeometry::new(c, c, 3, 3, 1, 1, true).unwrap();
        let spec = LayerSpec::conv("dw", geom, &[c, 6, 6]).unwrap();
        let params = init_layer_params(&spec, &mut rng);
        let mut dw = Layer {
            spec,
            params: params.clone(),
        };
        let x = rand_tensor(&mut rng, vec![c, 6, 6]);
        let (y, _) = dw.forward(&x, false).unwrap();

        let LayerParams::Conv { weight, bias } = &params else {
            panic!()
        };
        for ch in 0..c {
            let g1 = ConvGeometry::new(1, 1, 3, 3, 1, 1, false).unwrap();
            let s1 = LayerSpec::conv("one", g1, &[1, 6, 6]).unwrap();
            let w1 = Tensor::new(
                vec![1, 1, 3, 3],
                weight.data()[ch * 9..(ch + 1) * 9].to_vec(),
            )
            .unwrap();
            let mut single = Layer {
                spec: s1,
                params: LayerParams::Conv {
                    weight: w1,
                    bias: Tensor::new(vec![1], vec![bias.data()[ch]]).unwrap(),
                },
            };
            let xc = Tensor::new(vec![1, 6, 6], x.data()[ch * 36..(ch + 1) * 36].to_vec()).unwrap();
            let (yc, _) = single.forward(&xc, false).unwrap();
            assert_eq!(&y.data()[ch * 36..(ch + 1) * 36], yc.data());
        }
    }

    #[test]
    fn softmax_xent_uniform_logits() {
        let c = 7;
        let logits = Tensor::new(vec![c], vec![0.3; c]).unwrap();
        let (loss, err) = softmax_xent(&logits, 2).unwrap();
        assert!((loss - (c as f32).ln()).abs() < 1e-5);
        let s: f32 = err.data().iter().sum();
        assert!(s.abs() < 1e-5, "error must sum to zero, got {s}");
    }

    #[test]
    fn softmax_xent_saturated_logit_drives_loss_to_zero() {
        let logits = Tensor::new(vec![3], vec![60.0, -5.0, -4.0]).unwrap();
        let (loss, _) = softmax_xent(&logits, 0).unwrap();
        assert!(loss < 1e-5, "saturated loss {loss}");
    }

    #[test]
    fn softmax_xent_label_out_of_range() {
        let logits = Tensor::new(vec![3], vec![0.0; 3]).unwrap();
        assert!(matches!(
            softmax_xent(&logits, 3),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn renorm_equal_stats_gives_plain_normalization() {
        // When batch statistics equal the running ones, r=1 and d=0.
        let spec = LayerSpec::batch_renorm("bn", &[1, 2, 2]).unwrap();
        let x = Tensor::new(vec![1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let mean = 2.5f32;
        let var = 1.25f32;
        let mut layer = Layer {
            spec,
            params: LayerParams::Renorm {
                gamma: vec![1.0],
                beta: vec![0.0],
                running_mean: vec![mean],
                running_var: vec![var],
            },
        };
        let (y, stats) = layer.renorm_forward(&x, RenormMode::Train).unwrap();
        assert!((stats.r[0] - 1.0).abs() < 1e-5);
        assert!(stats.d[0].abs() < 1e-4);
        let sigma = (var + RENORM_EPS).sqrt();
        for (o, &xv) in y.data().iter().zip(x.data()) {
            assert!((o - (xv - mean) / sigma).abs() < 1e-4);
        }
    }

    #[test]
    fn renorm_tight_clip_collapses_to_batch_normalization() {
        // With r clipped to 1 and d to 0 the output is plain batch-stat
        // normalization regardless of the running statistics.
        let spec = LayerSpec::batch_renorm("bn", &[1, 2, 2]).unwrap();
        let x = Tensor::new(vec![1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let mut layer = Layer {
            spec,
            params: LayerParams::Renorm {
                gamma: vec![1.0],
                beta: vec![0.0],
                running_mean: vec![-7.0],
                running_var: vec![40.0],
            },
        };
        let (y, _) = layer
            .renorm_forward(&x, RenormMode::Frozen { r: &[1.0], d: &[0.0] })
            .unwrap();
        let mean = 2.5f32;
        let sigma = (1.25f32 + RENORM_EPS).sqrt();
        for (o, &xv) in y.data().iter().zip(x.data()) {
            assert!((o - (xv - mean) / sigma).abs() < 1e-4);
        }
    }

    #[test]
    fn renorm_unclipped_limit_is_running_stat_normalization() {
        // With r = sigma_b/sigma_run and d = (mu_b-mu_run)/sigma_run inside
        // the clip range, the algebra reduces to (x - mu_run)/sigma_run.
        let spec = LayerSpec::batch_renorm("bn", &[1, 2, 2]).unwrap();
        let x = Tensor::new(vec![1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (rm, rv) = (2.0f32, 2.0f32);
        let mut layer = Layer {
            spec,
            params: LayerParams::Renorm {
                gamma: vec![1.0],
                beta: vec![0.0],
                running_mean: vec![rm],
                running_var: vec![rv],
            },
        };
        let (y, _) = layer.renorm_forward(&x, RenormMode::Train).unwrap();
        let sr = (rv + RENORM_EPS).sqrt();
        for (o, &xv) in y.data().iter().zip(x.data()) {
            assert!((o - (xv - rm) / sr).abs() < 1e-3, "got {o} for {xv}");
        }
    }

    #[test]
    fn linear_layers_satisfy_adjoint_identity() {
        // <forward(x), e> == <x, backward_error(e)> for bias-free layers.
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let cases: Vec<LayerSpec> = vec![
            LayerSpec::conv(
                "c",
                ConvGeometry::new(3, 4, 3, 3, 1, 1, false).unwrap(),
                &[3, 5, 5],
            )
            .unwrap(),
            LayerSpec::conv(
                "dw",
                ConvGeometry::new(4, 4, 3, 3, 2, 1, true).unwrap(),
                &[4, 6, 6],
            )
            .unwrap(),
            LayerSpec::conv(
                "pw",
                ConvGeometry::new(5, 3, 1, 1, 1, 0, false).unwrap(),
                &[5, 4, 4],
            )
            .unwrap(),
            LayerSpec::fully_connected("fc", 6, 4),
        ];
        for spec in cases {
            let mut params = init_layer_params(&spec, &mut rng);
            match &mut params {
                LayerParams::Conv { bias, .. } | LayerParams::FullyConnected { bias, .. } => {
                    for b in bias.data_mut() {
                        *b = 0.0;
                    }
                }
                _ => {}
            }
            let mut layer = Layer {
                spec: spec.clone(),
                params,
            };
            let x = rand_tensor(&mut rng, spec.in_shape.clone());
            let e = rand_tensor(&mut rng, spec.out_shape.clone());
            let (y, _) = layer.forward(&x, false).unwrap();
            let bx = layer.backward_error(&e, None).unwrap();
            let lhs: f64 = y
                .data()
                .iter()
                .zip(e.data())
                .map(|(&a, &b)| a as f64 * b as f64)
                .sum();
            let rhs: f64 = x
                .data()
                .iter()
                .zip(bx.data())
                .map(|(&a, &b)| a as f64 * b as f64)
                .sum();
            let scale = lhs.abs().max(rhs.abs()).max(1e-6);
            assert!(
                ((lhs - rhs) / scale).abs() < 1e-4,
                "adjoint identity broken for {}: {lhs} vs {rhs}",
                spec.name
            );
        }
    }
}
