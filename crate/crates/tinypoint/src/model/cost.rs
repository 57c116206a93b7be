//! Parameter and FLOP accounting for width-scaled networks.
//!
//! Conventions (also stated in generated reports):
//! - Parameters: weights + biases + normalization affine (2 per channel).
//!   Running statistics are buffers, not parameters.
//! - FLOPs per cloud: one multiply-accumulate = 2 FLOPs, plus one add per
//!   bias application and one comparison per max-pool reduction step.
//!   Normalization, activations, and neighborhood search (sampling/grouping)
//!   are excluded; at inference they fold into weights or are
//!   memory-bound bookkeeping.
//! - A scaled width is `max(1, round(full * scale))`; the 3-wide coordinate
//!   input and the class-count output are never scaled.
//!
//! Grouped compute depends only on the architecture's centroid and
//! neighborhood counts, so for any admissible cloud size the per-cloud count
//! is the same; `count_flops` still takes the cloud size to validate it and
//! to keep report provenance explicit.

use super::{enumerate_layers, LayerKind, LayerSpec, SupernetSpec};
use crate::error::{Error, Result};

/// Per-layer cost at one width scale.
#[derive(Debug, Clone)]
pub struct LayerCost {
    pub name: String,
    pub params: u64,
    pub flops: u64,
}

fn scaled(width: usize, scalable: bool, scale: f64) -> u64 {
    if scalable {
        super::scaled_width(width, scale) as u64
    } else {
        width as u64
    }
}

fn layer_cost(ls: &LayerSpec, scale: f64) -> LayerCost {
    let out = scaled(ls.full_out, ls.scalable_out, scale);
    match ls.kind {
        LayerKind::Pool => LayerCost {
            name: ls.name.clone(),
            params: 0,
            flops: ls.rows_per_cloud as u64 * (ls.group as u64 - 1) * out,
        },
        LayerKind::SharedMlpConv | LayerKind::Linear => {
            let in_total: u64 = ls
                .segments
                .iter()
                .map(|&(w, scalable)| scaled(w, scalable, scale))
                .sum();
            let norm = if ls.has_norm { 2 * out } else { 0 };
            LayerCost {
                name: ls.name.clone(),
                params: in_total * out + out + norm,
                flops: ls.rows_per_cloud as u64 * (2 * in_total * out + out),
            }
        }
    }
}

/// Per-layer cost table at one width scale, canonical layer order.
pub fn cost_table(spec: &SupernetSpec, scale: f64) -> Result<Vec<LayerCost>> {
    if !(scale > 0.0 && scale <= 1.0) {
        return Err(Error::Config(format!(
            "width scale must be in (0, 1], got {scale}"
        )));
    }
    Ok(enumerate_layers(spec).iter().map(|ls| layer_cost(ls, scale)).collect())
}

/// Trainable parameters of the network at a width scale.
pub fn count_params(spec: &SupernetSpec, scale: f64) -> Result<u64> {
    Ok(cost_table(spec, scale)?.iter().map(|c| c.params).sum())
}

/// FLOPs for one forward pass over a single cloud of `n_points` points.
pub fn count_flops(spec: &SupernetSpec, scale: f64, n_points: usize) -> Result<u64> {
    if n_points < spec.min_points() {
        return Err(Error::Config(format!(
            "cloud size {n_points} is below the first stage's {} centroids",
            spec.min_points()
        )));
    }
    Ok(cost_table(spec, scale)?.iter().map(|c| c.flops).sum())
}
