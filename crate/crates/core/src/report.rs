//! Report emitters. The JSON layout and CSV column order are frozen per
//! [`SCHEMA_VERSION`]; see `docs/report-schema.md`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::cluster::RankingScope;
use crate::dataflow::{ReuseOverride, ReuseStrategy};
use crate::error::Result;
use crate::network::LayerKind;
use crate::sim::{LayerOutcome, ModeChoice, SimOptions};
use crate::timing::{ComputeMode, ModePolicy};

pub const SCHEMA_VERSION: u32 = 1;

/// Column order of `layers.csv`.
pub const CSV_COLUMNS: [&str; 25] = [
    "index",
    "name",
    "kind",
    "mode",
    "strategy",
    "cycles",
    "cycles_sparse",
    "cycles_dense",
    "speedup",
    "idle_cycles",
    "u_pe",
    "d_mem",
    "i_mem",
    "w_mem",
    "d_mem_rif",
    "d_mem_rwf",
    "d_mem_fits",
    "energy",
    "energy_saving",
    "ifm_sparsity",
    "weight_sparsity",
    "n_nzew_max",
    "t_ifm_row",
    "t_ifm_col",
    "t_oc",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerRow {
    pub index: usize,
    pub name: String,
    pub kind: LayerKind,
    pub mode: ComputeMode,
    pub strategy: ReuseStrategy,
    /// Cycles of the selected mode.
    pub cycles: u64,
    pub cycles_sparse: u64,
    pub cycles_dense: u64,
    /// `cycles_dense / cycles_sparse`; empty when sparse mode issues nothing.
    pub speedup: Option<f64>,
    /// Idle PE-cycles of the selected mode.
    pub idle_cycles: u64,
    /// Utilization of the selected mode; empty for zero-cycle layers.
    pub u_pe: Option<f64>,
    pub d_mem: u64,
    pub i_mem: u64,
    pub w_mem: u64,
    pub d_mem_rif: Option<u64>,
    pub d_mem_rwf: Option<u64>,
    pub d_mem_fits: Option<u64>,
    /// Compute plus DRAM energy of the selected mode.
    pub energy: f64,
    /// Dense over sparse compute energy.
    pub energy_saving: Option<f64>,
    pub ifm_sparsity: f64,
    pub weight_sparsity: f64,
    pub n_nzew_max: usize,
    pub t_ifm_row: usize,
    pub t_ifm_col: usize,
    pub t_oc: usize,
}

impl LayerRow {
    pub fn from_outcome(o: &LayerOutcome) -> Self {
        let s = &o.schedule;
        let mode = o.mode();
        let totals = o.timing.totals(mode);
        let candidate = |k| s.candidates.iter().find(|d| d.strategy == k).map(|d| d.d_mem);
        LayerRow {
            index: o.index,
            name: o.name.clone(),
            kind: o.config.kind,
            mode,
            strategy: s.chosen.strategy,
            cycles: totals.cycles,
            cycles_sparse: o.timing.sparse.cycles,
            cycles_dense: o.timing.dense.cycles,
            speedup: o.energy.speedup,
            idle_cycles: totals.idle,
            u_pe: o.timing.utilization(mode).ok().map(|u| u.u_pe),
            d_mem: s.chosen.d_mem,
            i_mem: s.chosen.i_mem,
            w_mem: s.chosen.w_mem,
            d_mem_rif: candidate(ReuseStrategy::Rif),
            d_mem_rwf: candidate(ReuseStrategy::Rwf),
            d_mem_fits: candidate(ReuseStrategy::FitsOnChip),
            energy: o.energy.total(mode),
            energy_saving: o.energy.saving,
            ifm_sparsity: o.ifm_sparsity,
            weight_sparsity: o.weight_sparsity,
            n_nzew_max: s.nzew_max,
            t_ifm_row: s.plan.t_ifm_row(),
            t_ifm_col: s.plan.t_ifm_col(),
            t_oc: s.plan.t_oc,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Totals {
    pub cycles: u64,
    pub cycles_sparse: u64,
    pub cycles_dense: u64,
    /// Whole-network `cycles_dense / cycles_sparse`.
    pub speedup: Option<f64>,
    pub idle_cycles: u64,
    pub d_mem: u64,
    pub energy: f64,
}

impl Totals {
    pub fn from_rows(rows: &[LayerRow]) -> Self {
        let cycles_sparse = rows.iter().map(|r| r.cycles_sparse).sum();
        let cycles_dense: u64 = rows.iter().map(|r| r.cycles_dense).sum();
        Totals {
            cycles: rows.iter().map(|r| r.cycles).sum(),
            cycles_sparse,
            cycles_dense,
            speedup: (cycles_sparse > 0).then(|| cycles_dense as f64 / cycles_sparse as f64),
            idle_cycles: rows.iter().map(|r| r.idle_cycles).sum(),
            d_mem: rows.iter().map(|r| r.d_mem).sum(),
            energy: rows.iter().map(|r| r.energy).sum(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub tool_version: String,
    pub network: String,
    pub seed: u64,
    pub n_pe: usize,
    pub n_is: usize,
    pub mode: ModeChoice,
    pub reuse: ReuseOverride,
    pub ranking: RankingScope,
    pub thresholds: ModePolicy,
    pub weight_buffer_bytes: u64,
    pub dram_energy_per_byte: f64,
    /// Seconds since the Unix epoch; the only nondeterministic field.
    pub generated_at: Option<u64>,
}

impl RunMetadata {
    pub fn new(network: &str, seed: u64, opts: &SimOptions) -> Self {
        RunMetadata {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            network: network.to_string(),
            seed,
            n_pe: opts.n_pe,
            n_is: opts.n_is,
            mode: opts.mode,
            reuse: opts.reuse,
            ranking: opts.ranking,
            thresholds: opts.policy,
            weight_buffer_bytes: opts.weight_buffer_bytes,
            dram_energy_per_byte: opts.dram_energy_per_byte,
            generated_at: None,
        }
    }

    pub fn stamped(mut self) -> Self {
        self.generated_at = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .ok()
            .map(|d| d.as_secs());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub schema_version: u32,
    pub metadata: RunMetadata,
    pub layers: Vec<LayerRow>,
    pub totals: Totals,
    pub warnings: Vec<String>,
}

impl SimReport {
    pub fn new(metadata: RunMetadata, outcomes: &[LayerOutcome], warnings: Vec<String>) -> Self {
        let layers: Vec<LayerRow> = outcomes.iter().map(LayerRow::from_outcome).collect();
        SimReport {
            schema_version: SCHEMA_VERSION,
            metadata,
            totals: Totals::from_rows(&layers),
            layers,
            warnings,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// JSON with the timestamp removed, for determinism comparisons.
    pub fn canonical_json(&self) -> Result<String> {
        let mut copy = self.clone();
        copy.metadata.generated_at = None;
        copy.to_json()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        write_rows_csv(out, &self.layers)
    }
}

pub fn write_rows_csv<W: Write>(out: W, rows: &[LayerRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}
