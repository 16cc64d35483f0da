//! Sensitivity sweeps over one axis with every other input held at a fixed seed.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{build_network, LayerConfig, LayerEntry, NetworkDescriptor, SynthDefaults};
use crate::prune::PruneSpec;
use crate::sim::{simulate_network, SimOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    WeightSparsity,
    IfmSparsity,
    PeSize,
    TileSize,
}

impl SweepAxis {
    pub fn label(self) -> &'static str {
        match self {
            SweepAxis::WeightSparsity => "weight_sparsity",
            SweepAxis::IfmSparsity => "ifm_sparsity",
            SweepAxis::PeSize => "pe_size",
            SweepAxis::TileSize => "tile_size",
        }
    }

    pub fn default_grid(self) -> Vec<f64> {
        match self {
            SweepAxis::WeightSparsity | SweepAxis::IfmSparsity => (0..10).map(|i| i as f64 / 10.0).collect(),
            SweepAxis::PeSize => vec![8.0, 16.0, 32.0],
            SweepAxis::TileSize => vec![14.0, 7.0, 4.0],
        }
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "weight_sparsity" => Ok(SweepAxis::WeightSparsity),
            "ifm_sparsity" => Ok(SweepAxis::IfmSparsity),
            "pe_size" => Ok(SweepAxis::PeSize),
            "tile_size" => Ok(SweepAxis::TileSize),
            other => Err(Error::Config(format!("unknown sweep axis {other:?}"))),
        }
    }
}

/// Unpadded CONV layers with 10-element kernels, so every tenth of weight
/// sparsity is an exact per-kernel budget.
pub fn standard_roster() -> Vec<LayerConfig> {
    vec![
        LayerConfig::conv(16, 32, 32, 32, 5, 2, 1, 0),
        LayerConfig::conv(32, 32, 28, 28, 2, 5, 1, 0),
        LayerConfig::conv(32, 64, 16, 16, 5, 2, 1, 0),
        LayerConfig::conv(64, 64, 14, 14, 2, 5, 1, 0),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub axis: SweepAxis,
    pub grid: Vec<f64>,
    pub base: SimOptions,
    pub seed: u64,
    pub roster: Vec<LayerConfig>,
    /// IFM sparsity of the pe_size / tile_size axes.
    pub base_ifm_sparsity: f64,
    /// Weight keep fraction of the pe_size / tile_size axes.
    pub base_keep_fraction: f64,
}

impl SweepConfig {
    pub fn new(axis: SweepAxis) -> Self {
        SweepConfig {
            axis,
            grid: axis.default_grid(),
            base: SimOptions::default(),
            seed: 1,
            roster: standard_roster(),
            base_ifm_sparsity: 0.5,
            base_keep_fraction: 0.5,
        }
    }
}

/// Whole-roster results at one grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: SweepAxis,
    pub value: f64,
    pub n_pe: usize,
    pub n_is: usize,
    pub ifm_sparsity: f64,
    pub weight_sparsity: f64,
    pub cycles: u64,
    pub cycles_sparse: u64,
    pub cycles_dense: u64,
    pub speedup: Option<f64>,
    pub energy_saving: Option<f64>,
    pub idle_cycles: u64,
    /// Sparse-mode utilization over all layers.
    pub u_pe: Option<f64>,
    /// Sparse cycles times array size: work per unit of array throughput.
    pub pe_cycles: u64,
    pub d_mem: u64,
}

fn check_grid(axis: SweepAxis, grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::Config("sweep grid is empty".into()));
    }
    for &v in grid {
        let ok = match axis {
            SweepAxis::WeightSparsity | SweepAxis::IfmSparsity => (0.0..=1.0).contains(&v),
            SweepAxis::PeSize | SweepAxis::TileSize => v >= 1.0 && v.fract() == 0.0,
        };
        if !ok {
            return Err(Error::Config(format!("grid value {v} is invalid for axis {axis}")));
        }
    }
    Ok(())
}

fn run_point(cfg: &SweepConfig, value: f64) -> Result<SweepRow> {
    let mut opts = cfg.base.clone();
    let (mut ifm_sparsity, mut prune) = (cfg.base_ifm_sparsity, Some(cfg.base_keep_fraction));
    match cfg.axis {
        SweepAxis::WeightSparsity => {
            ifm_sparsity = 0.0;
            prune = Some(1.0 - value);
        }
        SweepAxis::IfmSparsity => {
            ifm_sparsity = value;
            prune = None;
        }
        SweepAxis::PeSize => opts.n_pe = value as usize,
        SweepAxis::TileSize => opts.n_is = value as usize,
    }
    opts.prune = prune.map(|f| PruneSpec::new(f, f));
    let layers = cfg
        .roster
        .iter()
        .map(|&c| {
            let mut e = LayerEntry::new(c);
            e.ifm_sparsity = Some(ifm_sparsity);
            e
        })
        .collect();
    let desc = NetworkDescriptor {
        name: format!("sweep-{}", cfg.axis),
        layers,
    };
    let synth = SynthDefaults {
        seed: cfg.seed,
        ..Default::default()
    };
    let net = build_network(desc, None, &synth)?;
    let out = simulate_network(&net, &opts)?;

    let sum = |f: &dyn Fn(&crate::sim::LayerOutcome) -> u64| out.iter().map(f).sum::<u64>();
    let cycles_sparse = sum(&|o| o.timing.sparse.cycles);
    let cycles_dense = sum(&|o| o.timing.dense.cycles);
    let useful = sum(&|o| o.timing.sparse.useful);
    let capacity = sum(&|o| o.timing.sparse.cycles * o.timing.active_pes);
    let weights: f64 = net.layers.iter().map(|l| l.weights.len() as f64).sum();
    let speedup = (cycles_sparse > 0).then(|| cycles_dense as f64 / cycles_sparse as f64);
    Ok(SweepRow {
        axis: cfg.axis,
        value,
        n_pe: opts.n_pe,
        n_is: opts.n_is,
        ifm_sparsity,
        weight_sparsity: out
            .iter()
            .zip(&net.layers)
            .map(|(o, l)| o.weight_sparsity * l.weights.len() as f64)
            .sum::<f64>()
            / weights,
        cycles: out.iter().map(|o| o.timing.cycles()).sum(),
        cycles_sparse,
        cycles_dense,
        speedup,
        energy_saving: speedup.map(|s| s / opts.policy.sparse_power_factor),
        idle_cycles: sum(&|o| o.timing.totals(o.mode()).idle),
        u_pe: (capacity > 0).then(|| useful as f64 / capacity as f64),
        pe_cycles: cycles_sparse * (opts.n_pe * opts.n_pe) as u64,
        d_mem: sum(&|o| o.schedule.chosen.d_mem),
    })
}

/// One row per grid point, in grid order.
pub fn run_sweep(cfg: &SweepConfig) -> Result<Vec<SweepRow>> {
    check_grid(cfg.axis, &cfg.grid)?;
    crate::par::map_indices(cfg.grid.len(), |i| run_point(cfg, cfg.grid[i]))
        .into_iter()
        .collect()
}

pub fn write_sweep_csv<W: std::io::Write>(out: W, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}
