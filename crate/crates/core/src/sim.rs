//! End-to-end driver: prune, compress, rank, schedule, time, and optionally
//! execute each layer against the dense oracle.

use serde::{Deserialize, Serialize};

use crate::cluster::{rank_counts, rank_with_scope, ChannelRanking, RankingScope};
use crate::codec::{compressed_size, window_nnz};
use crate::dataflow::{build_layer_schedule, make_tiling, DataflowPolicy, LayerSchedule, ReuseOverride, ScheduleInputs};
use crate::engine::{self, ComputeMode, EngineOptions, Ofm};
use crate::error::{Error, Result};
use crate::network::{LayerConfig, LayerKind, Network};
use crate::prune::{prune_conv_layer, prune_fc_layer, PruneReport, PruneSpec};
use crate::tensor::Tensor;
use crate::timing::{energy_model, select_mode, simulate_layer_timing, EnergyEstimate, LayerCounts, LayerTiming, ModePolicy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeChoice {
    #[default]
    Auto,
    Sparse,
    Dense,
}

impl ModeChoice {
    pub fn label(self) -> &'static str {
        match self {
            ModeChoice::Auto => "auto",
            ModeChoice::Sparse => "sparse",
            ModeChoice::Dense => "dense",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimOptions {
    pub n_pe: usize,
    pub n_is: usize,
    pub mode: ModeChoice,
    pub reuse: ReuseOverride,
    pub ranking: RankingScope,
    pub policy: ModePolicy,
    pub weight_buffer_bytes: u64,
    pub dram_energy_per_byte: f64,
    /// Pruning applied before compression; `None` keeps weights as given.
    pub prune: Option<PruneSpec>,
    /// Execute every layer and compare against the dense oracle.
    pub verify: bool,
    pub truncate_psum: bool,
}

impl Default for SimOptions {
    fn default() -> Self {
        let df = DataflowPolicy::default();
        SimOptions {
            n_pe: df.n_pe,
            n_is: df.n_is,
            mode: ModeChoice::Auto,
            reuse: ReuseOverride::Auto,
            ranking: RankingScope::Global,
            policy: ModePolicy::default(),
            weight_buffer_bytes: df.weight_buffer_bytes,
            dram_energy_per_byte: 1.0,
            prune: None,
            verify: false,
            truncate_psum: false,
        }
    }
}

impl SimOptions {
    pub fn dataflow_policy(&self) -> DataflowPolicy {
        DataflowPolicy {
            n_is: self.n_is,
            n_pe: self.n_pe,
            weight_buffer_bytes: self.weight_buffer_bytes,
            reuse: self.reuse,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_pe == 0 || self.n_is == 0 {
            return Err(Error::Config("N_PE and N_is must be >= 1".into()));
        }
        if !(self.dram_energy_per_byte.is_finite() && self.dram_energy_per_byte >= 0.0) {
            return Err(Error::Config("DRAM energy per byte must be a nonnegative number".into()));
        }
        if let Some(spec) = &self.prune {
            spec.validate()?;
        }
        Ok(())
    }
}

/// Everything the simulator derives for one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerOutcome {
    pub index: usize,
    pub name: String,
    pub config: LayerConfig,
    pub ifm_sparsity: f64,
    pub weight_sparsity: f64,
    pub prune: Option<PruneReport>,
    pub schedule: LayerSchedule,
    pub timing: LayerTiming,
    pub energy: EnergyEstimate,
    /// Whether the sparse path was executed and matched the oracle.
    pub verified: bool,
}

impl LayerOutcome {
    pub fn mode(&self) -> ComputeMode {
        self.timing.mode
    }
}

/// Prunes every layer's weights per `spec` and returns the reports in layer order.
pub fn prune_network(net: &Network, spec: &PruneSpec) -> Result<(Network, Vec<PruneReport>)> {
    spec.validate()?;
    let mut out = net.clone();
    let mut reports = Vec::with_capacity(net.layers.len());
    for (i, layer) in out.layers.iter_mut().enumerate() {
        let (w, r) = prune_layer(&layer.weights, layer.config().kind, &spec.for_layer(i))?;
        layer.weights = w;
        reports.push(r);
    }
    Ok((out, reports))
}

fn prune_layer(weights: &Tensor, kind: LayerKind, spec: &PruneSpec) -> Result<(Tensor, PruneReport)> {
    Ok(match kind {
        LayerKind::Conv => prune_conv_layer(weights, spec)?,
        LayerKind::Fc => prune_fc_layer(weights, spec)?,
    })
}

/// Sizes, counts and rankings of one layer, ready for scheduling.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerAnalysis {
    pub i_mem: u64,
    pub w_mem: u64,
    pub counts: LayerCounts,
    pub rankings: Vec<ChannelRanking>,
    pub nzew_max: usize,
}

/// Compressed sizes and nonzero counts of a layer under `n_is`/`n_pe`.
/// `ifm_padded` is `[C_i, H_i + 2 pad, W_i + 2 pad]` (FC: `C_i` elements).
pub fn analyze_layer(
    cfg: &LayerConfig,
    ifm_padded: &Tensor,
    weights: &Tensor,
    n_is: usize,
    n_pe: usize,
    scope: RankingScope,
) -> LayerAnalysis {
    let plan = make_tiling(cfg, n_is, n_pe);
    match cfg.kind {
        LayerKind::Conv => {
            let (hp, wp) = (cfg.padded_h(), cfg.padded_w());
            let planes: Vec<&[i16]> = ifm_padded.data().chunks_exact(hp * wp).collect();
            let mut i_mem = 0u64;
            let ifm_tile_nnz: Vec<Vec<usize>> = plan
                .tiles()
                .map(|(r, c)| {
                    let elems = r.ifm_len * c.ifm_len;
                    planes
                        .iter()
                        .map(|p| {
                            let n = window_nnz(p, wp, r.ifm_start, c.ifm_start, r.ifm_len, c.ifm_len);
                            i_mem += compressed_size(elems, n) as u64;
                            n
                        })
                        .collect()
                })
                .collect();
            let k = cfg.kernel_len();
            let kernel_nnz: Vec<usize> = weights
                .data()
                .chunks_exact(k)
                .map(|w| w.iter().filter(|&&v| v != 0).count())
                .collect();
            let w_mem = kernel_nnz.iter().map(|&n| compressed_size(k, n) as u64).sum();
            let channel_nnz: Vec<usize> = planes.iter().map(|p| p.iter().filter(|&&v| v != 0).count()).collect();
            LayerAnalysis {
                i_mem,
                w_mem,
                nzew_max: kernel_nnz.iter().copied().max().unwrap_or(0),
                rankings: vec![rank_with_scope(&channel_nnz, n_pe, scope)],
                counts: LayerCounts::Conv {
                    ifm_tile_nnz,
                    kernel_nnz,
                },
            }
        }
        LayerKind::Fc => {
            let (c_in, c_out) = (cfg.c_in, cfg.c_out);
            let ifm_nonzero: Vec<bool> = ifm_padded.data().iter().map(|&v| v != 0).collect();
            let mut segment_nnz = vec![vec![0usize; c_in]; plan.t_oc];
            let mut column_nnz = vec![0usize; c_in];
            for (o, row) in weights.data().chunks_exact(c_in).enumerate() {
                let seg = &mut segment_nnz[o / plan.n_pe];
                for (j, &w) in row.iter().enumerate() {
                    if w != 0 {
                        seg[j] += 1;
                        column_nnz[j] += 1;
                    }
                }
            }
            let i_mem = compressed_size(c_in, ifm_nonzero.iter().filter(|&&b| b).count()) as u64;
            let w_mem = column_nnz.iter().map(|&n| compressed_size(c_out, n) as u64).sum();
            let rankings = segment_nnz
                .iter()
                .map(|seg| match scope {
                    RankingScope::Off => rank_with_scope(seg, n_pe, RankingScope::Off),
                    _ => rank_counts(seg, n_pe),
                })
                .collect();
            LayerAnalysis {
                i_mem,
                w_mem,
                nzew_max: segment_nnz.iter().flatten().copied().max().unwrap_or(0),
                rankings,
                counts: LayerCounts::Fc {
                    ifm_nonzero,
                    segment_nnz,
                },
            }
        }
    }
}

/// Input of one layer as the simulator sees it.
struct LayerInput {
    source: Tensor,
    padded: Tensor,
}

fn simulate_one(
    index: usize,
    name: String,
    cfg: &LayerConfig,
    input: &LayerInput,
    weights: &Tensor,
    prune: Option<PruneReport>,
    opts: &SimOptions,
) -> Result<LayerOutcome> {
    let analysis = analyze_layer(cfg, &input.padded, weights, opts.n_is, opts.n_pe, opts.ranking);
    let inputs = ScheduleInputs {
        config: Some(*cfg),
        i_mem: Some(analysis.i_mem),
        w_mem: Some(analysis.w_mem),
        nzew_max: Some(analysis.nzew_max),
        rankings: Some(analysis.rankings),
    };
    let schedule = build_layer_schedule(index, &inputs, &opts.dataflow_policy())?;
    let ifm_sparsity = input.source.sparsity();
    let weight_sparsity = weights.sparsity();
    let mode = match opts.mode {
        ModeChoice::Auto => select_mode(ifm_sparsity, weight_sparsity, &opts.policy),
        ModeChoice::Sparse => ComputeMode::Sparse,
        ModeChoice::Dense => ComputeMode::Dense,
    };
    let timing = simulate_layer_timing(&schedule, &analysis.counts, mode)?;
    let energy = energy_model(
        timing.sparse.cycles,
        timing.dense.cycles,
        &opts.policy,
        schedule.chosen.d_mem,
        opts.dram_energy_per_byte,
    );
    Ok(LayerOutcome {
        index,
        name,
        config: *cfg,
        ifm_sparsity,
        weight_sparsity,
        prune,
        schedule,
        timing,
        energy,
        verified: false,
    })
}

/// Executes a layer in `mode` following its schedule's IC order, and checks it
/// against the dense oracle when `verify` is set.
pub fn execute_layer(
    outcome: &LayerOutcome,
    ifm_source: &Tensor,
    ifm_padded: &Tensor,
    weights: &Tensor,
    opts: &SimOptions,
    verify: bool,
) -> Result<Ofm> {
    let cfg = &outcome.config;
    let ic_order = match cfg.kind {
        LayerKind::Conv => Some(outcome.schedule.rankings[0].order.clone()),
        LayerKind::Fc => None,
    };
    let eopts = EngineOptions {
        n_is: opts.n_is,
        n_pe: opts.n_pe,
        ic_order,
        truncate_psum: opts.truncate_psum,
        trace: false,
    };
    let run = engine::run_layer(cfg, ifm_padded, weights, outcome.mode(), &eopts)?;
    if verify {
        let oracle = match cfg.kind {
            LayerKind::Conv => engine::dense_conv_oracle(ifm_source, weights, cfg.stride, cfg.pad)?,
            LayerKind::Fc => engine::dense_fc_oracle(ifm_source.data(), weights)?,
        };
        if oracle != run.ofm {
            return Err(Error::OracleMismatch { layer: outcome.index });
        }
    }
    Ok(run.ofm)
}

/// Reshapes a post-processed OFM into the next layer's IFM.
fn chain_input(prev: &Ofm, pool: Option<usize>, next: &LayerConfig, index: usize) -> Result<LayerInput> {
    let t = engine::post_process(prev, pool);
    let source = match next.kind {
        LayerKind::Fc => {
            if t.len() != next.c_in {
                return Err(Error::Config(format!(
                    "layer {index}: previous output has {} elements, FC expects {}",
                    t.len(),
                    next.c_in
                )));
            }
            Tensor::new(vec![next.c_in, 1, 1], t.into_data())?
        }
        LayerKind::Conv => {
            if t.dims() != next.ifm_dims().as_slice() {
                return Err(Error::Config(format!(
                    "layer {index}: previous output {:?} does not match IFM {:?}",
                    t.dims(),
                    next.ifm_dims()
                )));
            }
            t
        }
    };
    Ok(LayerInput {
        padded: source.pad_spatial(next.pad),
        source,
    })
}

/// Runs the whole pipeline over `net`.
pub fn simulate_network(net: &Network, opts: &SimOptions) -> Result<Vec<LayerOutcome>> {
    opts.validate()?;
    let n = net.layers.len();
    let mut weights = Vec::with_capacity(n);
    let mut reports = Vec::with_capacity(n);
    for (i, layer) in net.layers.iter().enumerate() {
        match &opts.prune {
            Some(spec) => {
                let (w, r) = prune_layer(&layer.weights, layer.config().kind, &spec.for_layer(i))?;
                weights.push(w);
                reports.push(Some(r));
            }
            None => {
                weights.push(layer.weights.clone());
                reports.push(None);
            }
        }
    }
    let needs_chain: Vec<bool> = (0..n).map(|i| i + 1 < n && net.layers[i + 1].ifm.is_none()).collect();
    let name = |i: usize| net.layers[i].entry.display_name(i);

    if !opts.verify && !needs_chain.iter().any(|&c| c) {
        let inputs: Vec<LayerInput> = net
            .layers
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let ifm = l.ifm.as_ref().ok_or_else(|| Error::Config(format!("layer {i} has no IFM")))?;
                Ok(LayerInput {
                    source: ifm.source.clone(),
                    padded: ifm.padded.clone(),
                })
            })
            .collect::<Result<_>>()?;
        return crate::par::map_indices(n, |i| {
            simulate_one(i, name(i), net.layers[i].config(), &inputs[i], &weights[i], reports[i].clone(), opts)
        })
        .into_iter()
        .collect();
    }

    let mut outcomes = Vec::with_capacity(n);
    let mut carried: Option<LayerInput> = None;
    for i in 0..n {
        let layer = &net.layers[i];
        let input = match (&layer.ifm, carried.take()) {
            (Some(ifm), _) => LayerInput {
                source: ifm.source.clone(),
                padded: ifm.padded.clone(),
            },
            (None, Some(c)) => c,
            (None, None) => return Err(Error::Config(format!("layer {i} has no IFM and no predecessor"))),
        };
        let mut outcome = simulate_one(i, name(i), layer.config(), &input, &weights[i], reports[i].clone(), opts)?;
        if opts.verify || needs_chain[i] {
            let ofm = execute_layer(&outcome, &input.source, &input.padded, &weights[i], opts, opts.verify)?;
            outcome.verified = opts.verify;
            if needs_chain[i] {
                carried = Some(chain_input(&ofm, layer.entry.pool, net.layers[i + 1].config(), i + 1)?);
            }
        }
        outcomes.push(outcome);
    }
    Ok(outcomes)
}
