//! Closed-form footprint accounting for an incremental-learning step at a
//! given LR cut: persistent replay storage (flash) and working memory
//! (parameters, activation tape, gradients, Fisher accumulators, transient
//! forward buffers, new-image latents).

use crate::error::Result;
use crate::layers::{LayerKind, LayerSpec};
use crate::net::NetworkDescriptor;

pub const DEFAULT_BYTES_PER_ELEM: u64 = 4;

/// Per-cut byte accounting. `ram_total_bytes` is the sum of the breakdown.
#[derive(Debug, Clone, PartialEq)]
pub struct FootprintReport {
    pub lr_cut: String,
    pub flash_bytes: u64,
    /// All parameters, frozen layers included (cut-invariant).
    pub n_w_bytes: u64,
    /// One saved input activation per retrained layer that needs a tape.
    pub n_a_bytes: u64,
    /// Gradient components of the retrained parameters.
    pub n_g_bytes: u64,
    /// Fisher accumulators; always equal to `n_g_bytes`.
    pub n_fi_bytes: u64,
    /// Peak transient forward working set (activations in/out plus the
    /// im2col scratch); typically small next to the other terms.
    pub n_fw_bytes: u64,
    /// Latents of the incoming new images, kept in the working set.
    pub new_latents_bytes: u64,
    pub ram_total_bytes: u64,
}

impl FootprintReport {
    pub fn csv_header() -> &'static str {
        "cut,flash_bytes,n_w_bytes,n_a_bytes,n_g_bytes,n_fi_bytes,n_fw_bytes,new_latents_bytes,ram_total_bytes"
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.lr_cut,
            self.flash_bytes,
            self.n_w_bytes,
            self.n_a_bytes,
            self.n_g_bytes,
            self.n_fi_bytes,
            self.n_fw_bytes,
            self.new_latents_bytes,
            self.ram_total_bytes
        )
    }
}

/// Elements of the im2col scratch a layer's forward materializes: the full
/// `(C*Kh*Kw) x (Ho*Wo)` matrix for spatial convolutions, nothing for the
/// zero-copy 1x1 stride-1 pointwise reshape or non-conv layers.
pub fn im2col_scratch_elems(spec: &LayerSpec) -> u64 {
    let Some(g) = spec.geom else { return 0 };
    if g.k_h == 1 && g.k_w == 1 && g.stride == 1 && g.padding == 0 {
        return 0;
    }
    let spatial: u64 = spec.out_shape[1..].iter().product::<usize>() as u64;
    (g.c_in * g.k_h * g.k_w) as u64 * spatial
}

/// Whether a layer's tape (its saved input) is counted toward `N_a`.
/// Average pooling recomputes its backward from geometry alone.
fn tape_elems(spec: &LayerSpec) -> u64 {
    match spec.kind {
        LayerKind::AvgPool => 0,
        _ => spec.in_elems() as u64,
    }
}

/// Footprint of an incremental step with `n_replay` stored latents and
/// `n_new` fresh images, at `bytes_per_elem` bytes per value.
pub fn footprint(
    desc: &NetworkDescriptor,
    cut: &str,
    n_replay: u64,
    n_new: u64,
    bytes_per_elem: u64,
) -> Result<FootprintReport> {
    let cut_idx = desc.cut_index(cut)?;
    let latent_elems: u64 = desc.latent_shape(cut_idx)?.iter().product::<usize>() as u64;
    let bpe = bytes_per_elem;

    let n_w: u64 = desc.layers.iter().map(|l| l.param_count() as u64).sum::<u64>() * bpe;
    let n_g: u64 = desc.layers[cut_idx..]
        .iter()
        .map(|l| l.param_count() as u64)
        .sum::<u64>()
        * bpe;
    let n_a: u64 = desc.layers[cut_idx..].iter().map(tape_elems).sum::<u64>() * bpe;
    let n_fw: u64 = desc
        .layers
        .iter()
        .map(|l| l.in_elems() as u64 + l.out_elems() as u64 + im2col_scratch_elems(l))
        .max()
        .unwrap_or(0)
        * bpe;
    let flash = n_replay * latent_elems * bpe;
    let new_latents = n_new * latent_elems * bpe;
    let ram_total = n_w + n_a + 2 * n_g + n_fw + new_latents;
    Ok(FootprintReport {
        lr_cut: cut.to_string(),
        flash_bytes: flash,
        n_w_bytes: n_w,
        n_a_bytes: n_a,
        n_g_bytes: n_g,
        n_fi_bytes: n_g,
        n_fw_bytes: n_fw,
        new_latents_bytes: new_latents,
        ram_total_bytes: ram_total,
    })
}

/// Cuts whose total RAM fits the budget, sorted ascending by RAM.
pub fn pareto_memory(
    desc: &NetworkDescriptor,
    cuts: &[String],
    n_replay: u64,
    n_new: u64,
    budget_ram_bytes: u64,
) -> Result<Vec<FootprintReport>> {
    let mut feasible: Vec<FootprintReport> = Vec::new();
    for cut in cuts {
        let report = footprint(desc, cut, n_replay, n_new, DEFAULT_BYTES_PER_ELEM)?;
        if report.ram_total_bytes <= budget_ram_bytes {
            feasible.push(report);
        }
    }
    feasible.sort_by_key(|r| r.ram_total_bytes);
    Ok(feasible)
}
