//! Browser bindings: a block-pair MAC trace, a channel clustering demo and a
//! sparsity sweep curve. Every entry point takes plain strings and numbers
//! and returns a JSON document, so the page needs no generated TS types.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use sense_core::cluster::{make_groups, rank_counts, rank_with_scope, sum_of_group_maxima, RankingScope};
use sense_core::codec::compress;
use sense_core::engine::{dense_conv_oracle, sparse_conv_tile, ConvGeom};
use sense_core::network::out_extent;
use sense_core::sim::ModeChoice;
use sense_core::sweep::{run_sweep, SweepAxis, SweepConfig};
use sense_core::tensor::parse_grid;
use sense_core::Tensor;

#[derive(Debug, Serialize)]
pub struct TraceEvent {
    pub cycle: usize,
    pub i_val: i16,
    pub w_val: i16,
    /// `None` when the coordinate difference has no valid output.
    pub addr: Option<usize>,
}

#[derive(Debug, Serialize)]
pub struct TraceView {
    pub h_out: usize,
    pub w_out: usize,
    pub events: Vec<TraceEvent>,
    pub invalid: usize,
    pub psum: Vec<i32>,
    pub dense_cycles: usize,
    pub speedup: Option<f64>,
    pub matches_oracle: bool,
}

pub fn trace_view(ifm: &str, kernel: &str, stride: usize) -> Result<TraceView, String> {
    let ifm = parse_grid(ifm).map_err(|e| e.to_string())?;
    let kernel = parse_grid(kernel).map_err(|e| e.to_string())?;
    let ((ir, ic), (kr, kc)) = ((ifm.dims()[0], ifm.dims()[1]), (kernel.dims()[0], kernel.dims()[1]));
    if stride == 0 {
        return Err("stride must be at least 1".into());
    }
    let geom = ConvGeom {
        h_out: out_extent(ir, kr, stride),
        w_out: out_extent(ic, kc, stride),
        stride,
    };
    let (psum, events) = sparse_conv_tile(&compress(ifm.data(), ir, ic), &compress(kernel.data(), kr, kc), geom)
        .map_err(|e| e.to_string())?;
    let as3 = |t: &Tensor, dims| Tensor::new(dims, t.data().to_vec()).map_err(|e| e.to_string());
    let oracle = dense_conv_oracle(&as3(&ifm, vec![1, ir, ic])?, &as3(&kernel, vec![1, 1, kr, kc])?, stride, 0)
        .map_err(|e| e.to_string())?;
    let dense_cycles = ir * ic * kr * kc;
    Ok(TraceView {
        h_out: geom.h_out,
        w_out: geom.w_out,
        invalid: events.iter().filter(|e| e.addr.is_none()).count(),
        speedup: (!events.is_empty()).then(|| dense_cycles as f64 / events.len() as f64),
        events: events
            .iter()
            .map(|e| TraceEvent {
                cycle: e.cycle,
                i_val: e.i_val,
                w_val: e.w_val,
                addr: e.addr,
            })
            .collect(),
        matches_oracle: oracle.data == psum.as_slice(),
        psum: psum.as_slice().to_vec(),
        dense_cycles,
    })
}

#[derive(Debug, Serialize)]
pub struct ClusterView {
    pub counts: Vec<usize>,
    pub group_size: usize,
    pub unclustered_groups: Vec<Vec<usize>>,
    pub clustered_groups: Vec<Vec<usize>>,
    /// Sum of per-group maxima: the step cycles with one unit per NZE.
    pub unclustered_cycles: usize,
    pub clustered_cycles: usize,
    pub speedup: Option<f64>,
}

pub fn cluster_view(counts: &str, group_size: usize) -> Result<ClusterView, String> {
    let counts: Vec<usize> = counts
        .split(',')
        .map(|v| v.trim().parse::<usize>().map_err(|e| format!("{:?}: {e}", v.trim())))
        .collect::<Result<_, _>>()?;
    if group_size == 0 {
        return Err("group size must be at least 1".into());
    }
    let plain = make_groups(&rank_with_scope(&counts, group_size, RankingScope::Off));
    let ranked = make_groups(&rank_counts(&counts, group_size));
    let (off, on) = (sum_of_group_maxima(&plain, &counts), sum_of_group_maxima(&ranked, &counts));
    Ok(ClusterView {
        group_size,
        unclustered_cycles: off,
        clustered_cycles: on,
        speedup: (on > 0).then(|| off as f64 / on as f64),
        unclustered_groups: plain,
        clustered_groups: ranked,
        counts,
    })
}

#[derive(Debug, Serialize)]
pub struct CurvePoint {
    pub sparsity: f64,
    pub speedup: Option<f64>,
    pub energy_saving: Option<f64>,
    pub u_pe: Option<f64>,
}

/// Speedup of the standard layer roster in forced sparse mode at `points`
/// evenly spaced sparsities in `[0, 0.9]`.
pub fn sparsity_points(axis: &str, points: usize) -> Result<Vec<CurvePoint>, String> {
    let axis = match axis.parse::<SweepAxis>().map_err(|e| e.to_string())? {
        a @ (SweepAxis::WeightSparsity | SweepAxis::IfmSparsity) => a,
        other => return Err(format!("{other} is not a sparsity axis")),
    };
    if !(2..=50).contains(&points) {
        return Err("use between 2 and 50 points".into());
    }
    let mut cfg = SweepConfig::new(axis);
    cfg.base.mode = ModeChoice::Sparse;
    cfg.grid = (0..points).map(|i| 0.9 * i as f64 / (points - 1) as f64).collect();
    Ok(run_sweep(&cfg)
        .map_err(|e| e.to_string())?
        .into_iter()
        .map(|r| CurvePoint {
            sparsity: r.value,
            speedup: r.speedup,
            energy_saving: r.energy_saving,
            u_pe: r.u_pe,
        })
        .collect())
}

fn to_js<T: Serialize>(r: Result<T, String>) -> Result<String, JsValue> {
    r.and_then(|v| serde_json::to_string(&v).map_err(|e| e.to_string()))
        .map_err(|e| JsValue::from_str(&e))
}

/// JSON [`TraceView`] of one IFM block against one kernel.
#[wasm_bindgen(js_name = traceBlock)]
pub fn trace_block(ifm: &str, kernel: &str, stride: usize) -> Result<String, JsValue> {
    to_js(trace_view(ifm, kernel, stride))
}

/// JSON [`ClusterView`] for comma-separated per-channel NZE counts.
#[wasm_bindgen(js_name = clusterChannels)]
pub fn cluster_channels(counts: &str, group_size: usize) -> Result<String, JsValue> {
    to_js(cluster_view(counts, group_size))
}

/// JSON array of [`CurvePoint`]; `axis` is `weight_sparsity` or `ifm_sparsity`.
#[wasm_bindgen(js_name = sparsityCurve)]
pub fn sparsity_curve(axis: &str, points: usize) -> Result<String, JsValue> {
    to_js(sparsity_points(axis, points))
}
