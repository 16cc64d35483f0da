//! Load-balancing weight pruning.
//!
//! CONV kernels are pruned independently to the same nonzero budget so that
//! every PE column in a step finishes together. FC matrices are pruned
//! globally by magnitude; their column imbalance is left to channel clustering.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::Tensor;

#[derive(Debug, Error, PartialEq)]
pub enum PruneError {
    #[error("keep fraction {0} outside (0, 1]")]
    BadSpec(f64),
    #[error("expected a rank-{expected} weight tensor, got dims {dims:?}")]
    WrongRank { expected: usize, dims: Vec<usize> },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeepFractions {
    pub conv: Option<f64>,
    pub fc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneSpec {
    pub conv_keep_fraction: f64,
    pub fc_keep_fraction: f64,
    /// Per-layer overrides keyed by layer index.
    #[serde(default)]
    pub overrides: BTreeMap<usize, KeepFractions>,
}

impl Default for PruneSpec {
    fn default() -> Self {
        PruneSpec::new(1.0, 1.0)
    }
}

impl PruneSpec {
    pub fn new(conv_keep_fraction: f64, fc_keep_fraction: f64) -> Self {
        PruneSpec {
            conv_keep_fraction,
            fc_keep_fraction,
            overrides: BTreeMap::new(),
        }
    }

    /// The spec with overrides for `layer` folded in.
    pub fn for_layer(&self, layer: usize) -> PruneSpec {
        let mut out = PruneSpec::new(self.conv_keep_fraction, self.fc_keep_fraction);
        if let Some(o) = self.overrides.get(&layer) {
            out.conv_keep_fraction = o.conv.unwrap_or(out.conv_keep_fraction);
            out.fc_keep_fraction = o.fc.unwrap_or(out.fc_keep_fraction);
        }
        out
    }

    pub fn validate(&self) -> Result<(), PruneError> {
        check_fraction(self.conv_keep_fraction)?;
        check_fraction(self.fc_keep_fraction)?;
        for o in self.overrides.values() {
            o.conv.map(check_fraction).transpose()?;
            o.fc.map(check_fraction).transpose()?;
        }
        Ok(())
    }
}

fn check_fraction(f: f64) -> Result<(), PruneError> {
    if f > 0.0 && f <= 1.0 {
        Ok(())
    } else {
        Err(PruneError::BadSpec(f))
    }
}

/// Elements kept out of `len` for keep fraction `f`.
///
/// The pruned count is `round_half_up((1 - f) * len)`; at least one element is
/// kept. Cutting 50% of a 3x3 kernel therefore keeps 4 (55.6% sparsity).
pub fn keep_count(fraction: f64, len: usize) -> usize {
    // the epsilon absorbs representation error such as (1 - 0.9) * 20 = 1.9999999999999996
    let pruned = ((1.0 - fraction) * len as f64 + 0.5 + 1e-9).floor() as usize;
    len.saturating_sub(pruned).max(1).min(len)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneReport {
    /// Fraction of zeros in the pruned tensor.
    pub weight_sparsity: f64,
    /// Per-kernel (CONV, `o * C_i + i` order) or per-column (FC) N_NZEW.
    pub nnz_per_unit: Vec<usize>,
    /// N_NZEW_MAX across all units.
    pub max_nnz: usize,
    /// Budget each unit was pruned to (CONV) or total kept (FC).
    pub keep: usize,
}

impl PruneReport {
    fn new(weights: &Tensor, nnz_per_unit: Vec<usize>, keep: usize) -> Self {
        PruneReport {
            weight_sparsity: weights.sparsity(),
            max_nnz: nnz_per_unit.iter().copied().max().unwrap_or(0),
            nnz_per_unit,
            keep,
        }
    }
}

/// Keeps the `keep` entries of largest magnitude, lower index first among
/// equals, and zeroes the rest.
fn retain_top(values: &mut [i16], keep: usize) {
    if keep >= values.len() {
        return;
    }
    if keep == 0 {
        values.fill(0);
        return;
    }
    let mut mags: Vec<u16> = values.iter().map(|v| v.unsigned_abs()).collect();
    let (_, &mut cut, _) = mags.select_nth_unstable_by(keep - 1, |a, b| b.cmp(a));
    let mut ties = keep - values.iter().filter(|v| v.unsigned_abs() > cut).count();
    for v in values.iter_mut() {
        let m = v.unsigned_abs();
        if m < cut || (m == cut && ties == 0) {
            *v = 0;
        } else if m == cut {
            ties -= 1;
        }
    }
}

pub fn prune_conv_layer(weights: &Tensor, spec: &PruneSpec) -> Result<(Tensor, PruneReport), PruneError> {
    check_fraction(spec.conv_keep_fraction)?;
    if weights.rank() != 4 {
        return Err(PruneError::WrongRank {
            expected: 4,
            dims: weights.dims().to_vec(),
        });
    }
    let kernel_len = weights.dims()[2] * weights.dims()[3];
    let keep = keep_count(spec.conv_keep_fraction, kernel_len);
    let mut out = weights.clone();
    let mut nnz = Vec::with_capacity(out.len() / kernel_len);
    for kernel in out.data_mut().chunks_exact_mut(kernel_len) {
        retain_top(kernel, keep);
        nnz.push(kernel.iter().filter(|&&v| v != 0).count());
    }
    let report = PruneReport::new(&out, nnz, keep);
    Ok((out, report))
}

pub fn prune_fc_layer(weights: &Tensor, spec: &PruneSpec) -> Result<(Tensor, PruneReport), PruneError> {
    check_fraction(spec.fc_keep_fraction)?;
    if weights.rank() != 2 {
        return Err(PruneError::WrongRank {
            expected: 2,
            dims: weights.dims().to_vec(),
        });
    }
    let cols = weights.dims()[1];
    let keep = keep_count(spec.fc_keep_fraction, weights.len());
    let mut out = weights.clone();
    retain_top(out.data_mut(), keep);
    let mut per_column = vec![0; cols];
    for row in out.data().chunks_exact(cols) {
        for (n, &v) in per_column.iter_mut().zip(row) {
            *n += usize::from(v != 0);
        }
    }
    let report = PruneReport::new(&out, per_column, keep);
    Ok((out, report))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HookDecision {
    ContinuePruning,
    Stop,
}

/// Called after every prune step of [`prune_conv_iterative`]. The default
/// implementation never retrains and always continues.
pub trait RetrainHook {
    fn after_step(&mut self, _weights: &Tensor, _accuracy_budget: f64) -> HookDecision {
        HookDecision::ContinuePruning
    }
}

/// No retraining; pruning always proceeds to the target budget.
#[derive(Debug, Default, Clone, Copy)]
pub struct NoRetrain;

impl RetrainHook for NoRetrain {}

impl<F: FnMut(&Tensor, f64) -> HookDecision> RetrainHook for F {
    fn after_step(&mut self, weights: &Tensor, accuracy_budget: f64) -> HookDecision {
        self(weights, accuracy_budget)
    }
}

/// Prunes one more element per kernel per step until the target budget is
/// reached or the hook asks to stop. Returns the weights after the last
/// executed step and the number of steps taken.
pub fn prune_conv_iterative(
    weights: &Tensor,
    spec: &PruneSpec,
    accuracy_budget: f64,
    hook: &mut dyn RetrainHook,
) -> Result<(Tensor, PruneReport, usize), PruneError> {
    check_fraction(spec.conv_keep_fraction)?;
    if weights.rank() != 4 {
        return Err(PruneError::WrongRank {
            expected: 4,
            dims: weights.dims().to_vec(),
        });
    }
    let kernel_len = weights.dims()[2] * weights.dims()[3];
    let target = keep_count(spec.conv_keep_fraction, kernel_len);
    let mut current = weights.clone();
    let mut steps = 0;
    for keep in (target..kernel_len).rev() {
        let step_spec = PruneSpec::new(keep as f64 / kernel_len as f64, 1.0);
        current = prune_conv_layer(&current, &step_spec)?.0;
        steps += 1;
        if hook.after_step(&current, accuracy_budget) == HookDecision::Stop {
            break;
        }
    }
    let (current, report) = prune_conv_layer(&current, &PruneSpec::new(1.0, 1.0))?;
    Ok((current, report, steps))
}
