//! Network descriptors (the analytical view used by the planners) and
//! runtime networks (descriptor plus allocated parameters).
//!
//! Descriptors are human-editable text: a `name` line, an `input C H W`
//! line, one `layer` line per stage and optional `accuracy <cut> <pct>`
//! lines for ingested benchmark accuracies.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::layers::{Layer, LayerKind, LayerParams, LayerSpec, LayerTape};
use crate::tensor::{ConvGeometry, Tensor};

/// The MobileNetV1-128 descriptor bundled with the crate.
const MOBILENET_V1_128: &str = include_str!("../data/mobilenet_v1_128.net");

/// Ordered layer list with shapes and ingested per-cut accuracies.
#[derive(Debug, Clone)]
pub struct NetworkDescriptor {
    pub name: String,
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
    /// Benchmark accuracy (percent) by cut name; metadata, never computed.
    pub accuracy_by_cut: BTreeMap<String, f64>,
}

impl NetworkDescriptor {
    /// The bundled MobileNetV1 (width 1.0) on 128x128 input with a 50-class
    /// fully-connected head.
    pub fn mobilenet_v1_128() -> Self {
        Self::parse(MOBILENET_V1_128).expect("bundled descriptor parses")
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
            .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut name = String::new();
        let mut input_shape: Option<Vec<usize>> = None;
        let mut layers: Vec<LayerSpec> = Vec::new();
        let mut accuracy = BTreeMap::new();
        let mut shape: Vec<usize> = Vec::new();

        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut tok = line.split_whitespace();
            let key = tok.next().unwrap();
            let fail = |m: &str| Error::Parse(format!("line {}: {m}", lineno + 1));
            match key {
                "name" => name = tok.next().ok_or_else(|| fail("missing name"))?.to_string(),
                "input" => {
                    let dims: Vec<usize> = tok
                        .map(|t| t.parse::<usize>())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|_| fail("input wants integer extents"))?;
                    if dims.is_empty() {
                        return Err(fail("input wants at least one extent"));
                    }
                    shape = dims.clone();
                    input_shape = Some(dims);
                }
                "layer" => {
                    if input_shape.is_none() {
                        return Err(fail("layer before input line"));
                    }
                    let lname = tok.next().ok_or_else(|| fail("missing layer name"))?;
                    let kind = tok.next().ok_or_else(|| fail("missing layer kind"))?;
                    let rest: Vec<&str> = tok.collect();
                    parse_layer(lname, kind, &rest, &mut shape, &mut layers)
                        .map_err(|e| fail(&e.to_string()))?;
                }
                "accuracy" => {
                    let cut = tok.next().ok_or_else(|| fail("missing cut name"))?;
                    let pct: f64 = tok
                        .next()
                        .ok_or_else(|| fail("missing accuracy value"))?
                        .parse()
                        .map_err(|_| fail("accuracy wants a number"))?;
                    accuracy.insert(cut.to_string(), pct);
                }
                other => return Err(fail(&format!("unknown directive '{other}'"))),
            }
        }
        let desc = NetworkDescriptor {
            name,
            input_shape: input_shape.ok_or_else(|| Error::Parse("no input line".into()))?,
            layers,
            accuracy_by_cut: accuracy,
        };
        desc.validate()?;
        Ok(desc)
    }

    /// Shapes chain layer to layer and every accuracy key is a valid cut.
    pub fn validate(&self) -> Result<()> {
        let mut shape = self.input_shape.clone();
        for spec in &self.layers {
            if spec.in_shape != shape {
                return Err(Error::Config(format!(
                    "layer {} expects input {:?} but receives {:?}",
                    spec.name, spec.in_shape, shape
                )));
            }
            shape = spec.out_shape.clone();
        }
        for cut in self.accuracy_by_cut.keys() {
            self.cut_index(cut)?;
        }
        Ok(())
    }

    /// Names of layers that can serve as the latent-replay cut: the
    /// parametric (conv and fully-connected) layers.
    pub fn valid_cuts(&self) -> Vec<&str> {
        self.layers
            .iter()
            .filter(|s| s.kind.is_conv() || s.kind == LayerKind::FullyConnected)
            .map(|s| s.name.as_str())
            .collect()
    }

    /// Index of a named cut, or a configuration error listing valid names.
    pub fn cut_index(&self, cut: &str) -> Result<usize> {
        if let Some(i) = self
            .layers
            .iter()
            .position(|s| s.name == cut && (s.kind.is_conv() || s.kind == LayerKind::FullyConnected))
        {
            return Ok(i);
        }
        Err(Error::Config(format!(
            "unknown cut '{cut}'; valid cuts: {}",
            self.valid_cuts().join(", ")
        )))
    }

    /// Shape of the activation stored at a cut (the cut layer's input).
    pub fn latent_shape(&self, cut_index: usize) -> Result<&[usize]> {
        self.layers
            .get(cut_index)
            .map(|s| s.in_shape.as_slice())
            .ok_or_else(|| Error::Config(format!("cut index {cut_index} out of range")))
    }

    /// Number of classes produced by the final layer.
    pub fn class_count(&self) -> usize {
        self.layers
            .last()
            .map(|s| s.out_elems())
            .unwrap_or(0)
    }
}

fn parse_layer(
    name: &str,
    kind: &str,
    rest: &[&str],
    shape: &mut Vec<usize>,
    layers: &mut Vec<LayerSpec>,
) -> Result<()> {
    let mut args: BTreeMap<&str, usize> = BTreeMap::new();
    let mut flags: Vec<&str> = Vec::new();
    let mut positional: Vec<usize> = Vec::new();
    let mut i = 0;
    while i < rest.len() {
        match rest[i] {
            key @ ("k" | "stride" | "pad") => {
                let v = rest
                    .get(i + 1)
                    .and_then(|t| t.parse().ok())
                    .ok_or_else(|| Error::Parse(format!("'{key}' wants an integer")))?;
                args.insert(key, v);
                i += 2;
            }
            flag @ ("brn" | "relu") => {
                flags.push(flag);
                i += 1;
            }
            other => {
                let v: usize = other
                    .parse()
                    .map_err(|_| Error::Parse(format!("unexpected token '{other}'")))?;
                positional.push(v);
                i += 1;
            }
        }
    }

    let spec = match kind {
        "conv" | "pointwise" | "depthwise" => {
            if shape.len() != 3 {
                return Err(Error::Parse(format!(
                    "layer {name}: conv stage needs a CHW input, have {shape:?}"
                )));
            }
            let c_in = shape[0];
            let depthwise = kind == "depthwise";
            let c_out = if depthwise {
                c_in
            } else {
                *positional
                    .first()
                    .ok_or_else(|| Error::Parse(format!("layer {name}: missing output channels")))?
            };
            let k = if kind == "pointwise" {
                1
            } else {
                *args
                    .get("k")
                    .ok_or_else(|| Error::Parse(format!("layer {name}: missing kernel size")))?
            };
            let stride = args.get("stride").copied().unwrap_or(1);
            let pad = args.get("pad").copied().unwrap_or(0);
            let geom = ConvGeometry::new(c_in, c_out, k, k, stride, pad, depthwise)?;
            LayerSpec::conv(name, geom, shape)?
        }
        "fully_connected" => {
            let inf: usize = shape.iter().product();
            let out = *positional
                .first()
                .ok_or_else(|| Error::Parse(format!("layer {name}: missing output features")))?;
            if shape.len() != 1 {
                return Err(Error::Parse(format!(
                    "layer {name}: fully_connected wants a flat input, have {shape:?}"
                )));
            }
            LayerSpec::fully_connected(name, inf, out)
        }
        "avg_pool" => LayerSpec::avg_pool(name, shape)?,
        "relu" => LayerSpec::relu(name, shape),
        "batch_renorm" => LayerSpec::batch_renorm(name, shape)?,
        other => return Err(Error::Parse(format!("unknown layer kind '{other}'"))),
    };
    *shape = spec.out_shape.clone();
    layers.push(spec);

    for flag in flags {
        let spec = match flag {
            "brn" => LayerSpec::batch_renorm(&format!("{name}/brn"), shape)?,
            _ => LayerSpec::relu(&format!("{name}/relu"), shape),
        };
        *shape = spec.out_shape.clone();
        layers.push(spec);
    }
    Ok(())
}

/// Draw from a standard normal via Box-Muller (keeps us on the seeded
/// uniform stream; results are reproducible across platforms).
fn normal(rng: &mut ChaCha8Rng) -> f32 {
    let u1: f32 = rng.gen_range(f32::MIN_POSITIVE..1.0);
    let u2: f32 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f32::consts::PI * u2).cos()
}

/// He-normal weights, zero biases, unit renorm scale.
pub fn init_layer_params(spec: &LayerSpec, rng: &mut ChaCha8Rng) -> LayerParams {
    match spec.kind {
        LayerKind::Conv | LayerKind::Pointwise | LayerKind::Depthwise => {
            let g = spec.geom.expect("conv spec has geometry");
            let ci = if g.depthwise { 1 } else { g.c_in };
            let fan_in = (ci * g.k_h * g.k_w) as f32;
            let std = (2.0 / fan_in).sqrt();
            let n = g.c_out * ci * g.k_h * g.k_w;
            let data = (0..n).map(|_| normal(rng) * std).collect();
            LayerParams::Conv {
                weight: Tensor::new(vec![g.c_out, ci, g.k_h, g.k_w], data)
                    .expect("weight dims consistent"),
                bias: Tensor::zeros(vec![g.c_out]),
            }
        }
        LayerKind::FullyConnected => {
            let (inf, outf) = (spec.in_shape[0], spec.out_shape[0]);
            let std = (2.0 / inf as f32).sqrt();
            let data = (0..inf * outf).map(|_| normal(rng) * std).collect();
            LayerParams::FullyConnected {
                weight: Tensor::new(vec![outf, inf], data).expect("weight dims consistent"),
                bias: Tensor::zeros(vec![outf]),
            }
        }
        LayerKind::BatchRenorm => {
            let c = spec.in_shape[0];
            LayerParams::Renorm {
                gamma: vec![1.0; c],
                beta: vec![0.0; c],
                running_mean: vec![0.0; c],
                running_var: vec![1.0; c],
            }
        }
        LayerKind::AvgPool | LayerKind::Relu => LayerParams::None,
    }
}

/// A network instance: layers with parameters and a configured LR cut.
/// Layers `[0, lr_cut)` are frozen; training runs from the cut upward.
#[derive(Debug, Clone)]
pub struct Network {
    pub name: String,
    pub input_shape: Vec<usize>,
    pub layers: Vec<Layer>,
    pub lr_cut: usize,
}

impl Network {
    pub fn from_descriptor(desc: &NetworkDescriptor, lr_cut: usize, seed: u64) -> Result<Self> {
        if lr_cut >= desc.layers.len() {
            return Err(Error::Config(format!(
                "cut index {lr_cut} out of range for {} layers",
                desc.layers.len()
            )));
        }
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = desc
            .layers
            .iter()
            .map(|spec| Layer {
                spec: spec.clone(),
                params: init_layer_params(spec, &mut rng),
            })
            .collect();
        Ok(Network {
            name: desc.name.clone(),
            input_shape: desc.input_shape.clone(),
            layers,
            lr_cut,
        })
    }

    pub fn descriptor(&self) -> NetworkDescriptor {
        NetworkDescriptor {
            name: self.name.clone(),
            input_shape: self.input_shape.clone(),
            layers: self.layers.iter().map(|l| l.spec.clone()).collect(),
            accuracy_by_cut: BTreeMap::new(),
        }
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// Shape expected at the LR cut.
    pub fn latent_shape(&self) -> &[usize] {
        &self.layers[self.lr_cut].spec.in_shape
    }

    /// Run layers `[start, end)` in inference mode.
    pub fn forward_range(&mut self, x: &Tensor, start: usize, end: usize) -> Result<Tensor> {
        let mut act = x.clone();
        for layer in &mut self.layers[start..end] {
            let (out, _) = layer.forward(&act, false)?;
            act = out;
        }
        Ok(act)
    }

    /// Full inference pass from raw input to logits.
    pub fn forward_infer(&mut self, x: &Tensor) -> Result<Tensor> {
        let n = self.layers.len();
        self.forward_range(x, 0, n)
    }

    pub fn predict(&mut self, x: &Tensor) -> Result<usize> {
        let logits = self.forward_infer(x)?;
        Ok(argmax(logits.data()))
    }

    /// Training forward from the LR cut: records one tape per layer at or
    /// above the cut. `latent` must have the cut layer's input shape.
    pub fn forward_train_from_cut(
        &mut self,
        latent: &Tensor,
    ) -> Result<(Tensor, Vec<Option<LayerTape>>)> {
        latent
            .require_dims(&self.layers[self.lr_cut].spec.in_shape)
            .map_err(|_| {
                Error::Config(format!(
                    "batch input {:?} does not match the LR-cut shape {:?}",
                    latent.dims(),
                    self.layers[self.lr_cut].spec.in_shape
                ))
            })?;
        let n = self.layers.len();
        let mut tapes: Vec<Option<LayerTape>> = Vec::with_capacity(n - self.lr_cut);
        let mut act = latent.clone();
        for layer in &mut self.layers[self.lr_cut..n] {
            let (out, tape) = layer.forward(&act, true)?;
            tapes.push(tape);
            act = out;
        }
        Ok((act, tapes))
    }

    /// Byte-level fingerprint of the frozen prefix parameters, for checking
    /// that learning never touches layers below the cut.
    pub fn frozen_prefix_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for layer in &self.layers[..self.lr_cut] {
            match &layer.params {
                LayerParams::Conv { weight, bias }
                | LayerParams::FullyConnected { weight, bias } => {
                    push_f32s(&mut out, weight.data());
                    push_f32s(&mut out, bias.data());
                }
                LayerParams::Renorm { gamma, beta, .. } => {
                    push_f32s(&mut out, gamma);
                    push_f32s(&mut out, beta);
                }
                LayerParams::None => {}
            }
        }
        out
    }
}

fn push_f32s(out: &mut Vec<u8>, vals: &[f32]) {
    for v in vals {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn argmax(vals: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in vals.iter().enumerate() {
        if v > vals[best] {
            best = i;
        }
    }
    best
}

/// Small convnet for desk-scale experiments: conv 3->8, pointwise 8->16,
/// global pool, fully-connected head. The default LR cut sits at the
/// pointwise layer, freezing the first conv stage.
pub fn toy_convnet(classes: usize, input_hw: usize, seed: u64) -> Result<Network> {
    let text = format!(
        "name toy_convnet\ninput 3 {input_hw} {input_hw}\n\
         layer conv1 conv 8 k 3 stride 1 pad 1 relu\n\
         layer conv2 pointwise 16 relu\n\
         layer pool avg_pool\n\
         layer fc fully_connected {classes}\n"
    );
    let desc = NetworkDescriptor::parse(&text)?;
    let cut = desc.cut_index("conv2")?;
    Network::from_descriptor(&desc, cut, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_mobilenet_parses_and_chains() {
        let desc = NetworkDescriptor::mobilenet_v1_128();
        assert_eq!(desc.input_shape, vec![3, 128, 128]);
        // 27 convs, each with brn+relu, plus pool6 and mid_fc7.
        assert_eq!(desc.layers.len(), 27 * 3 + 2);
        assert_eq!(desc.class_count(), 50);
        let cuts = desc.valid_cuts();
        assert_eq!(cuts.len(), 28);
        assert_eq!(cuts[0], "conv1");
        assert_eq!(*cuts.last().unwrap(), "mid_fc7");
    }

    #[test]
    fn mobilenet_latent_sizes_match_known_geometry() {
        let desc = NetworkDescriptor::mobilenet_v1_128();
        let conv1 = desc.cut_index("conv1").unwrap();
        assert_eq!(desc.latent_shape(conv1).unwrap(), &[3, 128, 128]);
        let c54 = desc.cut_index("conv5_4/dw").unwrap();
        assert_eq!(desc.latent_shape(c54).unwrap(), &[512, 8, 8]);
        let fc = desc.cut_index("mid_fc7").unwrap();
        assert_eq!(desc.latent_shape(fc).unwrap(), &[1024]);
    }

    #[test]
    fn unknown_cut_lists_valid_names() {
        let desc = NetworkDescriptor::mobilenet_v1_128();
        let err = desc.cut_index("conv9_9").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("conv9_9") && msg.contains("mid_fc7"));
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn pool_and_relu_are_not_cuts() {
        let desc = NetworkDescriptor::mobilenet_v1_128();
        assert!(desc.cut_index("pool6").is_err());
        assert!(desc.cut_index("conv1/relu").is_err());
    }

    #[test]
    fn mobilenet_parameter_total() {
        let desc = NetworkDescriptor::mobilenet_v1_128();
        let total: usize = desc.layers.iter().map(|l| l.param_count()).sum();
        // conv weights 3,185,088 + conv biases 10,944 + renorm 21,888
        // + head 51,250
        assert_eq!(total, 3_269_170);
    }

    #[test]
    fn toy_net_forward_shapes() {
        let mut net = toy_convnet(5, 8, 42).unwrap();
        let x = Tensor::zeros(vec![3, 8, 8]);
        let logits = net.forward_infer(&x).unwrap();
        assert_eq!(logits.dims(), &[5]);
        assert_eq!(net.latent_shape(), &[8, 8, 8]);
    }

    #[test]
    fn descriptor_rejects_broken_chain() {
        let text = "name bad\ninput 3 8 8\nlayer fc fully_connected 4\n";
        assert!(NetworkDescriptor::parse(text).is_err());
    }

    #[test]
    fn same_seed_same_params() {
        let a = toy_convnet(4, 8, 7).unwrap();
        let b = toy_convnet(4, 8, 7).unwrap();
        assert_eq!(a.frozen_prefix_bytes(), b.frozen_prefix_bytes());
    }
}
