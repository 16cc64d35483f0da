//! Tiling, DRAM reuse strategies and the mapping loop nest.
//!
//! Output feature maps are cut into tiles of at most `N_is x N_is` (the Psum
//! buffer bound); each output tile reads one IFM tile that carries a
//! `(H_k - stride)` halo. Channels are processed `N_PE` at a time.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::ChannelRanking;
use crate::network::{LayerConfig, LayerKind};

#[derive(Debug, Error, PartialEq)]
pub enum DataflowError {
    #[error("layer {layer}: schedule needs {missing}")]
    IncompleteInputs { layer: usize, missing: &'static str },
}

/// One tile along one spatial axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileSpan {
    pub ofm_start: usize,
    pub ofm_len: usize,
    /// Offset into the padded IFM.
    pub ifm_start: usize,
    pub ifm_len: usize,
}

fn axis_tiles(out_extent: usize, n_is: usize, kernel: usize, stride: usize) -> Vec<TileSpan> {
    (0..out_extent)
        .step_by(n_is.max(1))
        .map(|start| {
            let len = n_is.max(1).min(out_extent - start);
            TileSpan {
                ofm_start: start,
                ofm_len: len,
                ifm_start: start * stride,
                ifm_len: (len - 1) * stride + kernel,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TilingPlan {
    pub n_is: usize,
    pub n_pe: usize,
    pub row_tiles: Vec<TileSpan>,
    pub col_tiles: Vec<TileSpan>,
    pub t_ic: usize,
    pub t_oc: usize,
}

impl TilingPlan {
    pub fn t_ifm_row(&self) -> usize {
        self.row_tiles.len()
    }

    pub fn t_ifm_col(&self) -> usize {
        self.col_tiles.len()
    }

    /// One OFM tile per IFM tile.
    pub fn t_ofm_row(&self) -> usize {
        self.row_tiles.len()
    }

    pub fn t_ofm_col(&self) -> usize {
        self.col_tiles.len()
    }

    pub fn tile_count(&self) -> usize {
        self.row_tiles.len() * self.col_tiles.len()
    }

    /// Tiles in row-major order.
    pub fn tiles(&self) -> impl Iterator<Item = (TileSpan, TileSpan)> + '_ {
        self.row_tiles
            .iter()
            .flat_map(move |&r| self.col_tiles.iter().map(move |&c| (r, c)))
    }
}

pub fn make_tiling(layer: &LayerConfig, n_is: usize, n_pe: usize) -> TilingPlan {
    let n_pe = n_pe.max(1);
    let (row_tiles, col_tiles) = match layer.kind {
        LayerKind::Conv => (
            axis_tiles(layer.h_out(), n_is, layer.h_k, layer.stride),
            axis_tiles(layer.w_out(), n_is, layer.w_k, layer.stride),
        ),
        LayerKind::Fc => (axis_tiles(1, 1, 1, 1), axis_tiles(1, 1, 1, 1)),
    };
    TilingPlan {
        n_is,
        n_pe,
        row_tiles,
        col_tiles,
        t_ic: layer.c_in.div_ceil(n_pe),
        t_oc: layer.c_out.div_ceil(n_pe),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ReuseStrategy {
    /// Reuse-IFM-First: IFMs stay resident, weights are re-read per IFM tile.
    #[serde(rename = "RIF")]
    Rif,
    /// Reuse-Weight-First: weights stay resident, IFMs are re-read per OC batch.
    #[serde(rename = "RWF")]
    Rwf,
    /// All weights fit on chip; everything is read once.
    #[serde(rename = "FITS_ON_CHIP")]
    FitsOnChip,
}

impl ReuseStrategy {
    pub fn label(self) -> &'static str {
        match self {
            ReuseStrategy::Rif => "RIF",
            ReuseStrategy::Rwf => "RWF",
            ReuseStrategy::FitsOnChip => "FITS_ON_CHIP",
        }
    }

    /// Preference among equal-cost candidates.
    fn tie_rank(self) -> u8 {
        match self {
            ReuseStrategy::FitsOnChip => 0,
            ReuseStrategy::Rif => 1,
            ReuseStrategy::Rwf => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReuseDecision {
    pub strategy: ReuseStrategy,
    /// Modeled DRAM traffic in bytes.
    pub d_mem: u64,
    pub i_mem: u64,
    pub w_mem: u64,
}

/// DRAM traffic of every applicable strategy. FITS_ON_CHIP is only offered
/// when the weights fit in `weight_buffer_capacity` bytes.
pub fn dram_cost(
    i_mem: u64,
    w_mem: u64,
    plan: &TilingPlan,
    weight_buffer_capacity: u64,
) -> Vec<ReuseDecision> {
    let tiles = (plan.t_ifm_row() * plan.t_ifm_col()) as u64;
    let decision = |strategy, d_mem| ReuseDecision {
        strategy,
        d_mem,
        i_mem,
        w_mem,
    };
    let mut out = Vec::with_capacity(3);
    if w_mem <= weight_buffer_capacity {
        out.push(decision(ReuseStrategy::FitsOnChip, i_mem + w_mem));
    }
    out.push(decision(ReuseStrategy::Rif, w_mem * tiles + i_mem));
    out.push(decision(ReuseStrategy::Rwf, i_mem * plan.t_oc as u64 + w_mem));
    out
}

/// FC IFMs always fit on chip and weights are never reused.
pub fn fc_dram_cost(i_mem: u64, w_mem: u64) -> Vec<ReuseDecision> {
    vec![ReuseDecision {
        strategy: ReuseStrategy::FitsOnChip,
        d_mem: i_mem + w_mem,
        i_mem,
        w_mem,
    }]
}

/// Cheapest candidate; ties go FITS_ON_CHIP, then RIF, then RWF.
pub fn choose_strategy(candidates: &[ReuseDecision]) -> Option<ReuseDecision> {
    candidates
        .iter()
        .copied()
        .min_by_key(|d| (d.d_mem, d.strategy.tie_rank()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReuseOverride {
    #[default]
    Auto,
    Rif,
    Rwf,
}

pub fn resolve_strategy(candidates: &[ReuseDecision], choice: ReuseOverride) -> Option<ReuseDecision> {
    let forced = match choice {
        ReuseOverride::Auto => return choose_strategy(candidates),
        ReuseOverride::Rif => ReuseStrategy::Rif,
        ReuseOverride::Rwf => ReuseStrategy::Rwf,
    };
    candidates
        .iter()
        .copied()
        .find(|d| d.strategy == forced)
        .or_else(|| choose_strategy(candidates))
}

/// Outer/inner OC loop bounds of the mapping loop nest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoopOrder {
    pub oc_outer: usize,
    pub oc_inner: usize,
}

impl LoopOrder {
    /// RIF (and the on-chip case) finishes every OC of a tile before moving on;
    /// RWF finishes every tile of an OC batch first.
    pub fn for_strategy(strategy: ReuseStrategy, t_oc: usize) -> Self {
        match strategy {
            ReuseStrategy::Rif | ReuseStrategy::FitsOnChip => LoopOrder {
                oc_outer: 1,
                oc_inner: t_oc,
            },
            ReuseStrategy::Rwf => LoopOrder {
                oc_outer: t_oc,
                oc_inner: 1,
            },
        }
    }
}

/// One iteration of the nest down to the IC loop; the NZE loops run inside.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NestPoint {
    pub oc_batch: usize,
    pub tile_row: usize,
    pub tile_col: usize,
    pub ic_group: usize,
}

/// Walks `oc_outer -> tile rows -> tile cols -> oc_inner -> ic groups`.
pub fn loop_nest(
    order: LoopOrder,
    t_ifm_row: usize,
    t_ifm_col: usize,
    ic_groups: usize,
) -> impl Iterator<Item = NestPoint> {
    (0..order.oc_outer).flat_map(move |a| {
        (0..t_ifm_row).flat_map(move |b| {
            (0..t_ifm_col).flat_map(move |c| {
                (0..order.oc_inner).flat_map(move |d| {
                    (0..ic_groups).map(move |e| NestPoint {
                        oc_batch: a * order.oc_inner + d,
                        tile_row: b,
                        tile_col: c,
                        ic_group: e,
                    })
                })
            })
        })
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DataflowPolicy {
    pub n_is: usize,
    pub n_pe: usize,
    /// Bytes of on-chip weight storage for the FITS_ON_CHIP case.
    pub weight_buffer_bytes: u64,
    pub reuse: ReuseOverride,
}

impl Default for DataflowPolicy {
    fn default() -> Self {
        DataflowPolicy {
            n_is: 7,
            n_pe: 32,
            weight_buffer_bytes: 128 * 1024,
            reuse: ReuseOverride::Auto,
        }
    }
}

/// What the planner needs to know about a layer after pruning, compression
/// and ranking. Missing pieces make [`build_schedule`] fail.
#[derive(Debug, Clone, Default)]
pub struct ScheduleInputs {
    pub config: Option<LayerConfig>,
    pub i_mem: Option<u64>,
    pub w_mem: Option<u64>,
    /// N_NZEW_MAX of the pruned weights.
    pub nzew_max: Option<usize>,
    /// IC ranking (CONV: one; FC: one per OC batch).
    pub rankings: Option<Vec<ChannelRanking>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSchedule {
    pub layer: usize,
    pub config: LayerConfig,
    pub plan: TilingPlan,
    pub candidates: Vec<ReuseDecision>,
    pub chosen: ReuseDecision,
    pub loop_order: LoopOrder,
    pub rankings: Vec<ChannelRanking>,
    pub nzew_max: usize,
}

impl LayerSchedule {
    pub fn ic_groups(&self, oc_batch: usize) -> Vec<Vec<usize>> {
        let ranking = match self.config.kind {
            LayerKind::Conv => &self.rankings[0],
            LayerKind::Fc => &self.rankings[oc_batch],
        };
        crate::cluster::make_groups(ranking)
    }

    pub fn nest(&self) -> impl Iterator<Item = NestPoint> {
        let groups = self.rankings.first().map_or(0, |r| r.order.len().div_ceil(r.group_size.max(1)));
        loop_nest(self.loop_order, self.plan.t_ifm_row(), self.plan.t_ifm_col(), groups)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub policy: DataflowPolicy,
    pub layers: Vec<LayerSchedule>,
}

pub fn build_layer_schedule(
    layer: usize,
    inputs: &ScheduleInputs,
    policy: &DataflowPolicy,
) -> Result<LayerSchedule, DataflowError> {
    let missing = |what| DataflowError::IncompleteInputs { layer, missing: what };
    let config = inputs.config.ok_or(missing("a layer shape"))?;
    let i_mem = inputs.i_mem.ok_or(missing("compressed IFM size"))?;
    let w_mem = inputs.w_mem.ok_or(missing("compressed weight size"))?;
    let nzew_max = inputs.nzew_max.ok_or(missing("a prune report"))?;
    let rankings = inputs.rankings.clone().ok_or(missing("channel rankings"))?;
    let plan = make_tiling(&config, policy.n_is, policy.n_pe);
    let expected_rankings = match config.kind {
        LayerKind::Conv => 1,
        LayerKind::Fc => plan.t_oc,
    };
    if rankings.len() != expected_rankings {
        return Err(missing("one ranking per OC batch"));
    }
    let candidates = match config.kind {
        LayerKind::Conv => dram_cost(i_mem, w_mem, &plan, policy.weight_buffer_bytes),
        LayerKind::Fc => fc_dram_cost(i_mem, w_mem),
    };
    let chosen = resolve_strategy(&candidates, policy.reuse).expect("at least one candidate");
    Ok(LayerSchedule {
        layer,
        config,
        loop_order: LoopOrder::for_strategy(chosen.strategy, plan.t_oc),
        plan,
        candidates,
        chosen,
        rankings,
        nzew_max,
    })
}

pub fn build_schedule(
    inputs: &[ScheduleInputs],
    policy: &DataflowPolicy,
) -> Result<Schedule, DataflowError> {
    let layers = inputs
        .iter()
        .enumerate()
        .map(|(i, inp)| build_layer_schedule(i, inp, policy))
        .collect::<Result<_, _>>()?;
    Ok(Schedule {
        policy: *policy,
        layers,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::rank_counts;

    const K: u64 = 1024;

    fn plan(t_ic: usize, t_oc: usize, t_row: usize, t_col: usize) -> TilingPlan {
        let span = TileSpan {
            ofm_start: 0,
            ofm_len: 1,
            ifm_start: 0,
            ifm_len: 1,
        };
        TilingPlan {
            n_is: 7,
            n_pe: 32,
            row_tiles: vec![span; t_row],
            col_tiles: vec![span; t_col],
            t_ic,
            t_oc,
        }
    }

    #[test]
    fn tiling_counts() {
        let p = make_tiling(&LayerConfig::conv(4, 4, 16, 16, 1, 1, 1, 0), 8, 2);
        assert_eq!((p.t_ifm_row(), p.t_ifm_col(), p.t_ic, p.t_oc), (2, 2, 2, 2));
        let p = make_tiling(&LayerConfig::conv(4, 4, 16, 16, 3, 3, 1, 0), 8, 2);
        assert_eq!((p.t_ifm_row(), p.t_ifm_col()), (2, 2));
        let p = make_tiling(&LayerConfig::conv(64, 64, 56, 56, 1, 1, 1, 0), 7, 32);
        assert_eq!(p.t_ifm_row(), 8);
        // padded 3x3 layers keep one IFM tile per 7x7 OFM tile
        let p = make_tiling(&LayerConfig::conv(64, 64, 56, 56, 3, 3, 1, 1), 7, 32);
        assert_eq!((p.t_ifm_row(), p.t_ic, p.t_oc), (8, 2, 2));
        let p = make_tiling(&LayerConfig::conv(128, 128, 28, 28, 3, 3, 1, 1), 7, 32);
        assert_eq!((p.t_ifm_row(), p.t_ifm_col(), p.t_ic, p.t_oc), (4, 4, 4, 4));
        let p = make_tiling(&LayerConfig::conv(512, 512, 7, 7, 3, 3, 1, 1), 7, 32);
        assert_eq!((p.t_ifm_row(), p.t_ic, p.t_oc), (1, 16, 16));
    }

    #[test]
    fn tile_extents_cover_kernel_and_halo() {
        let p = make_tiling(&LayerConfig::conv(1, 1, 9, 9, 3, 3, 1, 0), 1, 1);
        assert_eq!(p.t_ifm_row(), 7);
        assert!(p.row_tiles.iter().all(|t| t.ifm_len == 3));
        let p = make_tiling(&LayerConfig::conv(1, 1, 11, 11, 3, 3, 2, 0), 2, 1);
        // outputs 0..5 in tiles of 2 -> ifm rows [0,5) [4,9) [8,11)
        let spans: Vec<_> = p.row_tiles.iter().map(|t| (t.ifm_start, t.ifm_len)).collect();
        assert_eq!(spans, vec![(0, 5), (4, 5), (8, 3)]);
    }

    #[test]
    fn table_anchor_rows() {
        let l3 = dram_cost(196 * K, 36 * K, &plan(2, 2, 8, 8), 128 * K);
        let best = choose_strategy(&l3).unwrap();
        assert_eq!(best.strategy, ReuseStrategy::FitsOnChip);
        assert_eq!(best.d_mem, 232 * K);

        let l15 = dram_cost(98 * K, 144 * K, &plan(4, 4, 4, 4), 128 * K);
        assert_eq!(l15.len(), 2);
        let rwf = l15.iter().find(|d| d.strategy == ReuseStrategy::Rwf).unwrap();
        let rif = l15.iter().find(|d| d.strategy == ReuseStrategy::Rif).unwrap();
        assert_eq!((rwf.d_mem, rif.d_mem), (536 * K, 2402 * K));
        assert_eq!(choose_strategy(&l15).unwrap().strategy, ReuseStrategy::Rwf);
    }

    #[test]
    fn degenerate_and_tie() {
        let d = dram_cost(0, 50, &plan(1, 3, 2, 2), 0);
        assert_eq!(d.iter().find(|d| d.strategy == ReuseStrategy::Rwf).unwrap().d_mem, 50);
        // RIF = 10*1 + 30 = 40, RWF = 30*1 + 10 = 40
        let tie = dram_cost(30, 10, &plan(1, 1, 1, 1), 0);
        assert_eq!(choose_strategy(&tie).unwrap().strategy, ReuseStrategy::Rif);
    }

    #[test]
    fn loop_orders() {
        let rif = LoopOrder::for_strategy(ReuseStrategy::Rif, 3);
        let pts: Vec<_> = loop_nest(rif, 2, 1, 1).collect();
        // tiles outer, OCs inner
        assert_eq!(
            pts.iter().map(|p| (p.tile_row, p.oc_batch)).collect::<Vec<_>>(),
            vec![(0, 0), (0, 1), (0, 2), (1, 0), (1, 1), (1, 2)]
        );
        let rwf = LoopOrder::for_strategy(ReuseStrategy::Rwf, 3);
        let pts: Vec<_> = loop_nest(rwf, 2, 1, 1).collect();
        assert_eq!(
            pts.iter().map(|p| (p.oc_batch, p.tile_row)).collect::<Vec<_>>(),
            vec![(0, 0), (0, 1), (1, 0), (1, 1), (2, 0), (2, 1)]
        );
    }

    #[test]
    fn schedule_requires_inputs() {
        let err = build_layer_schedule(0, &ScheduleInputs::default(), &DataflowPolicy::default());
        assert!(matches!(err, Err(DataflowError::IncompleteInputs { .. })));

        let inputs = ScheduleInputs {
            config: Some(LayerConfig::conv(2, 2, 4, 4, 3, 3, 1, 0)),
            i_mem: Some(10),
            w_mem: Some(10),
            nzew_max: Some(9),
            rankings: Some(vec![rank_counts(&[3, 3], 32)]),
        };
        let s = build_schedule(&[inputs], &DataflowPolicy::default()).unwrap();
        let l = &s.layers[0];
        assert_eq!(l.plan.tile_count(), 1);
        assert_eq!(l.ic_groups(0), vec![vec![0, 1]]);
        assert_eq!(l.nest().count(), 1);
    }
}
