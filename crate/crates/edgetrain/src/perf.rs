//! Analytical performance model for a multi-core edge target: coefficient
//! tiling under a double-buffered L1 budget, MAC counting, cycle/latency
//! estimation from a measured MAC/cycle calibration table, and the energy
//! and battery-lifetime model.
//!
//! Kernel throughput is a calibration input, not a simulation result. The
//! table stores, per layer kind, the measured forward rate and a
//! `bwd_step` rate for the whole backward step (error propagation plus
//! gradient) expressed against the layer's nominal MAC count; since the
//! step runs two GEMM passes of nominal size, each pass is costed at twice
//! the step rate.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::layers::{Layer, LayerKind, LayerSpec};
use crate::net::NetworkDescriptor;
use crate::replay::CLBatchPlan;
use crate::tensor::Tensor;

/// One of the three computational graphs of a layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Pass {
    Fwd,
    BwdErr,
    BwdGrad,
}

/// Calibration table key: throughput is measured per kind for the forward
/// pass and for the combined backward step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Phase {
    Fwd,
    BwdStep,
}

/// Hardware calibration profile.
#[derive(Debug, Clone)]
pub struct HwProfile {
    pub name: String,
    pub cores: u32,
    pub freq_hz: f64,
    pub l1_bytes: u64,
    pub l2_bytes: u64,
    /// Mean multi-core speedup over the single-core implementation.
    pub parallel_speedup: f64,
    /// Active power while the learning task runs, external memory included.
    pub power_active_w: f64,
    /// Effective inference efficiency.
    pub efficiency_mmac_per_s_per_mw: f64,
    /// Multiplicative latency overhead for L2<->L1 transfers; the L3<->L2
    /// path overlaps computation and is not charged.
    pub dma_overhead_frac: f64,
    mac_per_cycle: BTreeMap<(LayerKind, Phase), f64>,
}

impl HwProfile {
    /// The 8-core 150 MHz cluster calibration bundled with the crate.
    pub fn octa_cluster_150mhz() -> Self {
        Self::parse(include_str!("../data/octa-cluster-150mhz.hw")).expect("bundled profile parses")
    }

    /// Single-core variant at the same 150 MHz clock (per-kernel rates are
    /// the cluster rates divided by the measured per-kernel speedups).
    pub fn single_core_150mhz() -> Self {
        Self::parse(include_str!("../data/single-core-150mhz.hw")).expect("bundled profile parses")
    }

    /// A single-core 48 MHz MCU running the same kernels.
    pub fn mcu_48mhz() -> Self {
        Self::parse(include_str!("../data/mcu-48mhz.hw")).expect("bundled profile parses")
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut name = String::new();
        let mut fields: BTreeMap<String, f64> = BTreeMap::new();
        let mut table: BTreeMap<(LayerKind, Phase), f64> = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fail = |m: &str| Error::Parse(format!("line {}: {m}", lineno + 1));
            let mut tok = line.split_whitespace();
            let key = tok.next().unwrap();
            match key {
                "name" => name = tok.next().ok_or_else(|| fail("missing name"))?.to_string(),
                "mac_per_cycle" => {
                    let kind = match tok.next().ok_or_else(|| fail("missing kind"))? {
                        "conv" => LayerKind::Conv,
                        "depthwise" => LayerKind::Depthwise,
                        "pointwise" => LayerKind::Pointwise,
                        "fully_connected" => LayerKind::FullyConnected,
                        other => return Err(fail(&format!("unknown kernel kind '{other}'"))),
                    };
                    let phase = match tok.next().ok_or_else(|| fail("missing phase"))? {
                        "fwd" => Phase::Fwd,
                        "bwd_step" => Phase::BwdStep,
                        other => return Err(fail(&format!("unknown phase '{other}'"))),
                    };
                    let v: f64 = tok
                        .next()
                        .ok_or_else(|| fail("missing value"))?
                        .parse()
                        .map_err(|_| fail("value must be a number"))?;
                    if v <= 0.0 {
                        return Err(fail("mac_per_cycle must be positive"));
                    }
                    table.insert((kind, phase), v);
                }
                field => {
                    let v: f64 = tok
                        .next()
                        .ok_or_else(|| fail("missing value"))?
                        .parse()
                        .map_err(|_| fail("value must be a number"))?;
                    fields.insert(field.to_string(), v);
                }
            }
        }
        let get = |k: &str| -> Result<f64> {
            fields
                .get(k)
                .copied()
                .ok_or_else(|| Error::Parse(format!("missing field '{k}'")))
        };
        let profile = HwProfile {
            name,
            cores: get("cores")? as u32,
            freq_hz: get("freq_hz")?,
            l1_bytes: get("l1_bytes")? as u64,
            l2_bytes: get("l2_bytes")? as u64,
            parallel_speedup: get("parallel_speedup")?,
            power_active_w: get("power_active_w")?,
            efficiency_mmac_per_s_per_mw: get("efficiency_mmac_per_s_per_mw")?,
            dma_overhead_frac: get("dma_overhead_frac")?,
            mac_per_cycle: table,
        };
        if profile.parallel_speedup < 1.0 || profile.parallel_speedup > profile.cores as f64 {
            return Err(Error::Parse(
                "parallel_speedup must lie in [1, cores]".into(),
            ));
        }
        if profile.mac_per_cycle.is_empty() {
            return Err(Error::Parse("profile has no mac_per_cycle entries".into()));
        }
        Ok(profile)
    }

    /// Measured table entry for a kernel kind and phase.
    pub fn phase_rate(&self, kind: LayerKind, phase: Phase) -> Result<f64> {
        self.mac_per_cycle
            .get(&(kind, phase))
            .copied()
            .ok_or_else(|| {
                Error::Config(format!(
                    "profile {} has no mac_per_cycle entry for {} {:?}",
                    self.name,
                    kind.as_str(),
                    phase
                ))
            })
    }

    /// Effective MAC/cycle for a single GEMM pass. Backward passes run at
    /// twice the step rate because the step's two GEMMs are measured
    /// together against the nominal MAC count.
    pub fn mac_per_cycle(&self, kind: LayerKind, pass: Pass) -> Result<f64> {
        match pass {
            Pass::Fwd => self.phase_rate(kind, Phase::Fwd),
            Pass::BwdErr | Pass::BwdGrad => Ok(2.0 * self.phase_rate(kind, Phase::BwdStep)?),
        }
    }

    pub fn kernel_keys(&self) -> Vec<(LayerKind, Phase)> {
        self.mac_per_cycle.keys().copied().collect()
    }
}

/// One per-layer entry of a tile schedule.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TileEntry {
    pub layer: String,
    /// Output channels (or FC rows) per coefficient tile.
    pub c_tile: usize,
    /// Bytes of one coefficient tile resident in L1.
    pub tile_bytes: u64,
    pub n_tiles: usize,
    pub double_buffered: bool,
}

/// Largest output-channel tile whose coefficients, double-buffered,
/// fit the L1 budget: `2 * c_tile * row_bytes <= l1`.
pub fn plan_tiles(spec: &LayerSpec, hw: &HwProfile) -> Result<TileEntry> {
    let (c_out, row_elems) = match spec.kind {
        LayerKind::Conv | LayerKind::Pointwise => {
            let g = spec.geom.expect("conv has geometry");
            (g.c_out, g.c_in * g.k_h * g.k_w)
        }
        LayerKind::Depthwise => {
            let g = spec.geom.expect("conv has geometry");
            (g.c_out, g.k_h * g.k_w)
        }
        LayerKind::FullyConnected => (spec.out_shape[0], spec.in_shape[0]),
        _ => {
            return Err(Error::Config(format!(
                "layer {} has no coefficients to tile",
                spec.name
            )))
        }
    };
    let row_bytes = (row_elems as u64) * 4;
    let budget = hw.l1_bytes / 2; // ping-pong residency
    let c_tile = (budget / row_bytes) as usize;
    if c_tile == 0 {
        return Err(Error::Infeasible(format!(
            "layer {}: one {row_bytes}-byte filter row exceeds the {}-byte \
             double-buffered L1 budget",
            spec.name, budget
        )));
    }
    let c_tile = c_tile.min(c_out);
    Ok(TileEntry {
        layer: spec.name.clone(),
        c_tile,
        tile_bytes: c_tile as u64 * row_bytes,
        n_tiles: c_out.div_ceil(c_tile),
        double_buffered: true,
    })
}

/// Tile schedule for every parametric layer of a descriptor.
pub fn plan_schedule(desc: &NetworkDescriptor, hw: &HwProfile) -> Result<Vec<TileEntry>> {
    desc.layers
        .iter()
        .filter(|s| s.kind.is_conv() || s.kind == LayerKind::FullyConnected)
        .map(|s| plan_tiles(s, hw))
        .collect()
}

/// Execute a parametric layer tile by tile per a [`TileEntry`], stitching
/// the output channel groups. Bit-identical to the untiled forward.
pub fn forward_tiled(layer: &Layer, act_in: &Tensor, tile: &TileEntry) -> Result<Tensor> {
    let c_out = layer.spec.out_shape[0];
    let mut pieces: Vec<Tensor> = Vec::with_capacity(tile.n_tiles);
    let mut c0 = 0;
    while c0 < c_out {
        let c1 = (c0 + tile.c_tile).min(c_out);
        pieces.push(layer.forward_out_channels(act_in, c0, c1)?);
        c0 = c1;
    }
    let per_channel: usize = layer.spec.out_shape[1..].iter().product();
    let mut data = Vec::with_capacity(c_out * per_channel.max(1));
    for p in pieces {
        data.extend_from_slice(p.data());
    }
    Tensor::new(layer.spec.out_shape.clone(), data)
}

/// Multiply-accumulate count of one pass over one layer. The two backward
/// passes each move the same operand volume as the forward GEMM.
pub fn layer_macs(spec: &LayerSpec, _pass: Pass) -> u64 {
    match spec.kind {
        LayerKind::Conv | LayerKind::Pointwise => {
            let g = spec.geom.expect("conv has geometry");
            let spatial: u64 = spec.out_shape[1..].iter().product::<usize>() as u64;
            (g.c_out * g.c_in * g.k_h * g.k_w) as u64 * spatial
        }
        LayerKind::Depthwise => {
            let g = spec.geom.expect("conv has geometry");
            let spatial: u64 = spec.out_shape[1..].iter().product::<usize>() as u64;
            (g.c_out * g.k_h * g.k_w) as u64 * spatial
        }
        LayerKind::FullyConnected => (spec.in_shape[0] * spec.out_shape[0]) as u64,
        // Normalization, activation and pooling cost is folded into the
        // DMA/overhead fraction.
        _ => 0,
    }
}

/// MACs of one full inference (forward over every layer).
pub fn inference_macs(desc: &NetworkDescriptor) -> u64 {
    desc.layers.iter().map(|l| layer_macs(l, Pass::Fwd)).sum()
}

#[derive(Debug, Clone)]
pub struct LayerLatency {
    pub layer: String,
    pub cycles: f64,
}

/// Latency estimate for learning one class at a cut.
#[derive(Debug, Clone)]
pub struct LatencyReport {
    pub cut: String,
    pub seconds: f64,
    pub cycles: f64,
    /// Cycles of the one-time frozen-prefix forward of the new images
    /// (included in the totals only when requested).
    pub frozen_forward_cycles: f64,
    pub include_frozen_forward: bool,
    pub per_layer: Vec<LayerLatency>,
}

/// Cycle/latency estimate for one incremental learning step.
///
/// Training work: for every sample of every epoch, each retrained layer
/// runs its forward and gradient passes, plus error propagation for layers
/// strictly above the cut (the bottom layer's input gradient is never
/// needed). The frozen prefix forwards the `n_new` images once to produce
/// their latents; the flag controls whether that one-time cost is counted.
/// Everything is scaled by the DMA overhead fraction and the clock.
pub fn estimate_latency(
    desc: &NetworkDescriptor,
    cut: &str,
    plan: &CLBatchPlan,
    hw: &HwProfile,
    include_frozen_forward: bool,
) -> Result<LatencyReport> {
    let cut_idx = desc.cut_index(cut)?;
    // The schedule must exist for every retrained layer before any cycle
    // accounting makes sense.
    for spec in desc.layers[cut_idx..]
        .iter()
        .filter(|s| s.kind.is_conv() || s.kind == LayerKind::FullyConnected)
    {
        plan_tiles(spec, hw)?;
    }
    let samples = (plan.n_new + plan.n_replay) as f64;
    let epochs = plan.epochs as f64;
    let mut per_layer = Vec::new();
    let mut train_cycles = 0.0f64;
    let mut frozen_cycles = 0.0f64;
    for (idx, spec) in desc.layers.iter().enumerate() {
        let macs = layer_macs(spec, Pass::Fwd);
        if macs == 0 {
            continue;
        }
        let macs = macs as f64;
        if idx >= cut_idx {
            let mut cycles = macs / hw.mac_per_cycle(spec.kind, Pass::Fwd)?
                + macs / hw.mac_per_cycle(spec.kind, Pass::BwdGrad)?;
            if idx > cut_idx {
                cycles += macs / hw.mac_per_cycle(spec.kind, Pass::BwdErr)?;
            }
            let total = cycles * samples * epochs;
            train_cycles += total;
            per_layer.push(LayerLatency {
                layer: spec.name.clone(),
                cycles: total,
            });
        } else {
            let total = macs / hw.mac_per_cycle(spec.kind, Pass::Fwd)? * plan.n_new as f64;
            frozen_cycles += total;
            if include_frozen_forward {
                per_layer.push(LayerLatency {
                    layer: format!("{} (frozen fwd)", spec.name),
                    cycles: total,
                });
            }
        }
    }
    let mut cycles = train_cycles;
    if include_frozen_forward {
        cycles += frozen_cycles;
    }
    cycles *= 1.0 + hw.dma_overhead_frac;
    Ok(LatencyReport {
        cut: cut.to_string(),
        seconds: cycles / hw.freq_hz,
        cycles,
        frozen_forward_cycles: frozen_cycles * (1.0 + hw.dma_overhead_frac),
        include_frozen_forward,
        per_layer,
    })
}

/// Duty-cycle scenario for the energy model.
#[derive(Debug, Clone, Copy)]
pub struct EnergyScenario {
    pub inferences_per_s: f64,
    pub retrains_per_hour: f64,
}

#[derive(Debug, Clone)]
pub struct EnergyReport {
    pub joules_per_hour: f64,
    pub training_j_per_hour: f64,
    pub inference_j_per_hour: f64,
}

impl EnergyReport {
    /// Hours of operation on a battery of the given capacity, at the
    /// effective (usable) voltage.
    pub fn battery_hours(&self, capacity_mah: f64, volts: f64) -> f64 {
        if self.joules_per_hour <= 0.0 {
            return f64::INFINITY;
        }
        capacity_mah / 1000.0 * volts * 3600.0 / self.joules_per_hour
    }
}

/// Energy per hour: retraining charged at active power for the retrain
/// latency, inference charged per MAC at the profile efficiency. Idle
/// power is taken as zero (memories and cluster are power-gated).
pub fn estimate_energy(
    latency_s_per_retrain: f64,
    macs_per_inference: u64,
    hw: &HwProfile,
    scenario: &EnergyScenario,
) -> Result<EnergyReport> {
    if scenario.inferences_per_s < 0.0 || scenario.retrains_per_hour < 0.0 {
        return Err(Error::Config("scenario rates must be >= 0".into()));
    }
    let training = hw.power_active_w * latency_s_per_retrain * scenario.retrains_per_hour;
    // MMAC/s/mW == 1e9 MAC per joule
    let joules_per_mac = 1.0 / (hw.efficiency_mmac_per_s_per_mw * 1e9);
    let inference =
        scenario.inferences_per_s * 3600.0 * macs_per_inference as f64 * joules_per_mac;
    Ok(EnergyReport {
        joules_per_hour: training + inference,
        training_j_per_hour: training,
        inference_j_per_hour: inference,
    })
}

#[derive(Debug, Clone)]
pub struct SpeedupReport {
    /// `(kernel label, multi-core speedup)` per measured table entry.
    pub rows: Vec<(String, f64)>,
    pub average: f64,
}

/// Per-kernel speedup of the multi-core profile over the single-core one:
/// the ratio of their measured MAC/cycle entries.
pub fn speedup_report(single: &HwProfile, multi: &HwProfile) -> Result<SpeedupReport> {
    let keys = multi.kernel_keys();
    if keys.is_empty() {
        return Err(Error::Config("multi-core profile has no kernels".into()));
    }
    let mut rows = Vec::with_capacity(keys.len());
    let mut sum = 0.0;
    for (kind, phase) in keys {
        let m = multi.phase_rate(kind, phase)?;
        let s = single.phase_rate(kind, phase)?;
        let speedup = m / s;
        sum += speedup;
        let label = format!(
            "{} {}",
            kind.as_str(),
            match phase {
                Phase::Fwd => "fwd",
                Phase::BwdStep => "bwd",
            }
        );
        rows.push((label, speedup));
    }
    let average = sum / rows.len() as f64;
    Ok(SpeedupReport { rows, average })
}
