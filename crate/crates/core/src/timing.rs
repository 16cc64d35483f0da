//! Cycle-approximate timing of the PE array.
//!
//! A step is one (OC batch, tile, IC group) visit; the whole array is blocked
//! until its slowest PE finishes, so a step costs `N_NZEI_MAX * N_NZEW_MAX`.
//! Pipeline fill/drain and memory stalls are not charged.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::make_groups;
use crate::dataflow::LayerSchedule;
pub use crate::engine::ComputeMode;
use crate::network::LayerKind;

#[derive(Debug, Error, PartialEq)]
pub enum TimingError {
    #[error("utilization is undefined for a zero-cycle run")]
    ZeroCycles,
    #[error("unresolved schedule: {0}")]
    UnresolvedSchedule(String),
}

/// Cost of one step over a PE grid of `(N_NZEI, N_NZEW)` pairs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepCost {
    pub step_cycles: u64,
    /// Row-major per-PE busy cycles (`N_NZEI * N_NZEW`).
    pub busy: Vec<u64>,
    /// Row-major per-PE idle cycles (`step_cycles - busy`).
    pub idle: Vec<u64>,
}

impl StepCost {
    pub fn total_busy(&self) -> u64 {
        self.busy.iter().sum()
    }

    pub fn total_idle(&self) -> u64 {
        self.idle.iter().sum()
    }

    /// Idle share of all PE-cycles in the step.
    pub fn idle_fraction(&self) -> f64 {
        let total = self.step_cycles * self.busy.len() as u64;
        if total == 0 {
            0.0
        } else {
            self.total_idle() as f64 / total as f64
        }
    }
}

pub fn step_cost(grid: &[Vec<(usize, usize)>]) -> StepCost {
    let cells = grid.iter().flatten();
    let max_i = cells.clone().map(|c| c.0).max().unwrap_or(0) as u64;
    let max_w = cells.clone().map(|c| c.1).max().unwrap_or(0) as u64;
    let step_cycles = max_i * max_w;
    let busy: Vec<u64> = cells.map(|&(i, w)| (i * w) as u64).collect();
    let idle = busy.iter().map(|b| step_cycles - b).collect();
    StepCost {
        step_cycles,
        busy,
        idle,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtilizationReport {
    /// Useful MACs per cycle.
    pub p_a: f64,
    /// Peak MACs per cycle of the active PEs.
    pub p_i: f64,
    pub u_pe: f64,
    pub cycles: u64,
    pub idle: u64,
}

/// `U_PE = (useful / cycles) / active_pes`.
pub fn utilization(useful: u64, cycles: u64, active_pes: u64, idle: u64) -> Result<UtilizationReport, TimingError> {
    if cycles == 0 || active_pes == 0 {
        return Err(TimingError::ZeroCycles);
    }
    let p_a = useful as f64 / cycles as f64;
    let p_i = active_pes as f64;
    Ok(UtilizationReport {
        p_a,
        p_i,
        u_pe: p_a / p_i,
        cycles,
        idle,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModePolicy {
    pub ifm_threshold: f64,
    pub weight_threshold: f64,
    /// Power of sparse mode relative to dense mode.
    pub sparse_power_factor: f64,
}

impl Default for ModePolicy {
    fn default() -> Self {
        ModePolicy {
            ifm_threshold: 0.30,
            weight_threshold: 0.20,
            sparse_power_factor: 1.3,
        }
    }
}

/// Sparse mode only when both operands are sparse beyond their thresholds.
pub fn select_mode(ifm_sparsity: f64, weight_sparsity: f64, policy: &ModePolicy) -> ComputeMode {
    if ifm_sparsity > policy.ifm_threshold && weight_sparsity > policy.weight_threshold {
        ComputeMode::Sparse
    } else {
        ComputeMode::Dense
    }
}

/// Energies are in units of one dense-mode array cycle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyEstimate {
    /// Dense over sparse cycles; `None` when sparse mode issues nothing.
    pub speedup: Option<f64>,
    /// Dense over sparse compute energy (`speedup / sparse_power_factor`).
    pub saving: Option<f64>,
    pub compute_sparse: f64,
    pub compute_dense: f64,
    pub dram: f64,
}

impl EnergyEstimate {
    pub fn total(&self, mode: ComputeMode) -> f64 {
        self.dram
            + match mode {
                ComputeMode::Sparse => self.compute_sparse,
                ComputeMode::Dense => self.compute_dense,
            }
    }
}

pub fn energy_model(
    cycles_sparse: u64,
    cycles_dense: u64,
    policy: &ModePolicy,
    dram_bytes: u64,
    dram_energy_per_byte: f64,
) -> EnergyEstimate {
    let speedup = (cycles_sparse > 0).then(|| cycles_dense as f64 / cycles_sparse as f64);
    EnergyEstimate {
        speedup,
        saving: speedup.map(|s| s / policy.sparse_power_factor),
        compute_sparse: cycles_sparse as f64 * policy.sparse_power_factor,
        compute_dense: cycles_dense as f64,
        dram: dram_bytes as f64 * dram_energy_per_byte,
    }
}

/// Nonzero counts the timing model needs, gathered after pruning.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerCounts {
    Conv {
        /// N_NZEI per `[tile][channel]`, tiles in [`crate::dataflow::TilingPlan::tiles`] order.
        ifm_tile_nnz: Vec<Vec<usize>>,
        /// N_NZEW per kernel `o * C_i + i`.
        kernel_nnz: Vec<usize>,
    },
    Fc {
        ifm_nonzero: Vec<bool>,
        /// Nonzeros of each weight column inside each OC batch: `[batch][column]`.
        segment_nnz: Vec<Vec<usize>>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModeTotals {
    pub cycles: u64,
    /// PE-cycles that PEs holding work spend waiting on the slowest PE of
    /// their step. PEs left without work are not counted.
    pub idle: u64,
    /// Issued PE-cycles (C_c).
    pub useful: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerTiming {
    pub sparse: ModeTotals,
    pub dense: ModeTotals,
    pub steps: u64,
    /// PEs that may work in a step: `N_PE^2` for CONV, `N_PE` for FC.
    pub active_pes: u64,
    pub mode: ComputeMode,
}

impl LayerTiming {
    pub fn totals(&self, mode: ComputeMode) -> ModeTotals {
        match mode {
            ComputeMode::Sparse => self.sparse,
            ComputeMode::Dense => self.dense,
        }
    }

    pub fn cycles(&self) -> u64 {
        self.totals(self.mode).cycles
    }

    pub fn utilization(&self, mode: ComputeMode) -> Result<UtilizationReport, TimingError> {
        let t = self.totals(mode);
        utilization(t.useful, t.cycles, self.active_pes, t.idle)
    }
}

fn unresolved(msg: impl Into<String>) -> TimingError {
    TimingError::UnresolvedSchedule(msg.into())
}

pub fn simulate_layer_timing(
    schedule: &LayerSchedule,
    counts: &LayerCounts,
    mode: ComputeMode,
) -> Result<LayerTiming, TimingError> {
    match (schedule.config.kind, counts) {
        (
            LayerKind::Conv,
            LayerCounts::Conv {
                ifm_tile_nnz,
                kernel_nnz,
            },
        ) => conv_timing(schedule, ifm_tile_nnz, kernel_nnz, mode),
        (
            LayerKind::Fc,
            LayerCounts::Fc {
                ifm_nonzero,
                segment_nnz,
            },
        ) => fc_timing(schedule, ifm_nonzero, segment_nnz, mode),
        _ => Err(unresolved("layer kind and counts disagree")),
    }
}

fn conv_timing(
    s: &LayerSchedule,
    ifm_tile_nnz: &[Vec<usize>],
    kernel_nnz: &[usize],
    mode: ComputeMode,
) -> Result<LayerTiming, TimingError> {
    let cfg = &s.config;
    let plan = &s.plan;
    let (c_in, c_out, n_pe) = (cfg.c_in, cfg.c_out, plan.n_pe);
    if ifm_tile_nnz.len() != plan.tile_count() || ifm_tile_nnz.iter().any(|t| t.len() != c_in) {
        return Err(unresolved("IFM tile counts do not match the tiling plan"));
    }
    if kernel_nnz.len() != c_in * c_out {
        return Err(unresolved("kernel counts do not match C_o x C_i"));
    }
    let ranking = s.rankings.first().ok_or_else(|| unresolved("missing IC ranking"))?;
    if ranking.order.len() != c_in {
        return Err(unresolved("IC ranking does not cover every input channel"));
    }
    let groups = make_groups(ranking);
    let tiles: Vec<_> = plan.tiles().collect();
    let kernel_len = cfg.kernel_len() as u64;

    // per OC batch: N_NZEW_MAX of each IC group and per-IC sum of kernel counts
    let batch_size = |b: usize| (c_out - b * n_pe).min(n_pe);
    let mut w_max = vec![vec![0u64; groups.len()]; plan.t_oc];
    let mut w_sum = vec![vec![0u64; c_in]; plan.t_oc];
    for b in 0..plan.t_oc {
        for o in b * n_pe..b * n_pe + batch_size(b) {
            for (g, members) in groups.iter().enumerate() {
                for &i in members {
                    let n = kernel_nnz[o * c_in + i] as u64;
                    w_max[b][g] = w_max[b][g].max(n);
                    w_sum[b][i] += n;
                }
            }
        }
    }

    let mut sparse = ModeTotals { cycles: 0, idle: 0, useful: 0 };
    let mut dense = sparse;
    let mut steps = 0;
    for p in s.nest() {
        let t = p.tile_row * plan.t_ifm_col() + p.tile_col;
        let (b, members) = (p.oc_batch, &groups[p.ic_group]);
        let pes = (members.len() * batch_size(b)) as u64;
        let counts = &ifm_tile_nnz[t];

        let i_max = members.iter().map(|&i| counts[i]).max().unwrap_or(0) as u64;
        let step = i_max * w_max[b][p.ic_group];
        let busy: u64 = members.iter().map(|&i| counts[i] as u64 * w_sum[b][i]).sum();
        sparse.cycles += step;
        sparse.useful += busy;
        sparse.idle += step * pes - busy;

        let (r, c) = tiles[t];
        let dense_step = (r.ifm_len * c.ifm_len) as u64 * kernel_len;
        dense.cycles += dense_step;
        dense.useful += dense_step * pes;
        steps += 1;
    }
    Ok(LayerTiming {
        sparse,
        dense,
        steps,
        active_pes: (n_pe * n_pe) as u64,
        mode,
    })
}

/// One PE column: each PE takes one nonzero IFM element and walks the
/// matching weight-column segment of the current OC batch.
fn fc_timing(
    s: &LayerSchedule,
    ifm_nonzero: &[bool],
    segment_nnz: &[Vec<usize>],
    mode: ComputeMode,
) -> Result<LayerTiming, TimingError> {
    let cfg = &s.config;
    let (c_in, c_out, n_pe) = (cfg.c_in, cfg.c_out, s.plan.n_pe);
    if ifm_nonzero.len() != c_in {
        return Err(unresolved("FC input flags do not match C_i"));
    }
    if segment_nnz.len() != s.plan.t_oc || segment_nnz.iter().any(|b| b.len() != c_in) {
        return Err(unresolved("FC segment counts do not match the OC batches"));
    }
    if s.rankings.len() != s.plan.t_oc {
        return Err(unresolved("FC needs one column ranking per OC batch"));
    }
    let mut sparse = ModeTotals { cycles: 0, idle: 0, useful: 0 };
    let mut dense = sparse;
    let mut steps = 0;
    for (b, segments) in segment_nnz.iter().enumerate() {
        let rows = (c_out - b * n_pe).min(n_pe) as u64;
        let dispatched: Vec<usize> = s.rankings[b]
            .order
            .iter()
            .copied()
            .filter(|&j| ifm_nonzero[j])
            .collect();
        for group in dispatched.chunks(n_pe) {
            let step = group.iter().map(|&j| segments[j]).max().unwrap_or(0) as u64;
            let busy: u64 = group.iter().map(|&j| segments[j] as u64).sum();
            sparse.cycles += step;
            sparse.useful += busy;
            sparse.idle += step * group.len() as u64 - busy;
            steps += 1;
        }
        let dense_steps = c_in.div_ceil(n_pe) as u64;
        dense.cycles += dense_steps * rows;
        dense.useful += c_in as u64 * rows;
    }
    Ok(LayerTiming {
        sparse,
        dense,
        steps,
        active_pes: n_pe as u64,
        mode,
    })
}
