//! `sense`: prune, compress, simulate, sweep and trace networks on the
//! sparse systolic-array model.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use sense_core::cluster::RankingScope;
use sense_core::codec::{read_container, write_container, BlockLayout};
use sense_core::dataflow::{ReuseDecision, ReuseOverride};
use sense_core::network::{load_network, save_network, write_tensor, Network, SynthDefaults};
use sense_core::prune::PruneSpec;
use sense_core::report::{RunMetadata, SimReport};
use sense_core::sim::{prune_network, simulate_network, ModeChoice, SimOptions};
use sense_core::sweep::{run_sweep, write_sweep_csv, SweepAxis, SweepConfig};
use sense_core::timing::ModePolicy;
use sense_core::Result;

mod trace;

#[derive(Parser)]
#[command(name = "sense", version, about = "Sparse systolic-array CNN accelerator toolchain")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load-balanced pruning of every layer; writes a new model directory.
    Prune(PruneArgs),
    /// Bitmap-compress every tensor of a model into .sbmc containers.
    Compress(CompressArgs),
    /// Expand an .sbmc container back to raw little-endian int16.
    Decompress(DecompressArgs),
    /// Run the full pipeline and emit report.json, layers.csv and schedule.json.
    Simulate(SimulateArgs),
    /// Sweep one parameter over a grid and emit one row per point.
    Sweep(SweepArgs),
    /// Dump the MAC event trace of a block pair or of one model layer.
    Trace(TraceArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Auto,
    Sparse,
    Dense,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReuseArg {
    Auto,
    Rif,
    Rwf,
}

#[derive(Clone, Copy, ValueEnum)]
enum RankingArg {
    Global,
    PerBatch,
    Off,
}

#[derive(Args)]
struct ArchArgs {
    /// PE array edge (N_PE).
    #[arg(long, default_value_t = 32)]
    pe: usize,
    /// Output tile edge (N_is).
    #[arg(long, default_value_t = 7)]
    tile: usize,
    #[arg(long, value_enum, default_value_t = ModeArg::Auto)]
    mode: ModeArg,
    #[arg(long, value_enum, default_value_t = ReuseArg::Auto)]
    reuse: ReuseArg,
    /// Seed for synthesized tensors.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Scope of input-channel ranking.
    #[arg(long, value_enum, default_value_t = RankingArg::Global)]
    ranking: RankingArg,
    /// On-chip weight storage in bytes.
    #[arg(long, default_value_t = 128 * 1024)]
    weight_buffer: u64,
    /// Modeled DRAM energy per byte, in dense-cycle units.
    #[arg(long, default_value_t = 1.0)]
    dram_energy: f64,
    #[arg(long, default_value_t = 0.30)]
    ifm_threshold: f64,
    #[arg(long, default_value_t = 0.20)]
    weight_threshold: f64,
    #[arg(long, default_value_t = 1.3)]
    power_factor: f64,
}

impl ArchArgs {
    fn options(&self) -> SimOptions {
        SimOptions {
            n_pe: self.pe,
            n_is: self.tile,
            mode: match self.mode {
                ModeArg::Auto => ModeChoice::Auto,
                ModeArg::Sparse => ModeChoice::Sparse,
                ModeArg::Dense => ModeChoice::Dense,
            },
            reuse: match self.reuse {
                ReuseArg::Auto => ReuseOverride::Auto,
                ReuseArg::Rif => ReuseOverride::Rif,
                ReuseArg::Rwf => ReuseOverride::Rwf,
            },
            ranking: match self.ranking {
                RankingArg::Global => RankingScope::Global,
                RankingArg::PerBatch => RankingScope::PerBatch,
                RankingArg::Off => RankingScope::Off,
            },
            policy: ModePolicy {
                ifm_threshold: self.ifm_threshold,
                weight_threshold: self.weight_threshold,
                sparse_power_factor: self.power_factor,
            },
            weight_buffer_bytes: self.weight_buffer,
            dram_energy_per_byte: self.dram_energy,
            ..SimOptions::default()
        }
    }
}

#[derive(Args)]
struct ModelArgs {
    /// Network descriptor (JSON).
    #[arg(long)]
    model: PathBuf,
    /// Sparsity of synthesized IFMs for layers without an IFM file.
    #[arg(long, default_value_t = 0.5)]
    ifm_sparsity: f64,
}

impl ModelArgs {
    fn load(&self, seed: u64) -> Result<Network> {
        let synth = SynthDefaults {
            seed,
            ifm_sparsity: self.ifm_sparsity,
            ..SynthDefaults::default()
        };
        Ok(load_network(&self.model, &synth)?)
    }
}

#[derive(Args)]
struct KeepArgs {
    /// Fraction of each CONV kernel kept.
    #[arg(long)]
    conv_keep: Option<f64>,
    /// Fraction of each FC matrix kept.
    #[arg(long)]
    fc_keep: Option<f64>,
}

impl KeepArgs {
    fn spec(&self) -> Option<PruneSpec> {
        (self.conv_keep.is_some() || self.fc_keep.is_some())
            .then(|| PruneSpec::new(self.conv_keep.unwrap_or(1.0), self.fc_keep.unwrap_or(1.0)))
    }
}

#[derive(Args)]
struct PruneArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 0.5)]
    conv_keep: f64,
    #[arg(long, default_value_t = 0.2)]
    fc_keep: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CompressArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DecompressArgs {
    /// Container written by `compress`.
    #[arg(long)]
    input: PathBuf,
    /// Raw int16 output file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    arch: ArchArgs,
    #[command(flatten)]
    keep: KeepArgs,
    /// Execute every layer and check it against the dense oracle.
    #[arg(long)]
    verify: bool,
    /// Saturate partial sums to int16 after every accumulation.
    #[arg(long)]
    truncate_psum: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    /// weight_sparsity, ifm_sparsity, pe_size or tile_size.
    #[arg(long)]
    axis: SweepAxis,
    /// Comma-separated grid; defaults to the axis's standard grid.
    #[arg(long, value_delimiter = ',')]
    grid: Option<Vec<f64>>,
    /// Take the layer shapes from this descriptor instead of the standard roster.
    #[arg(long)]
    model: Option<PathBuf>,
    #[command(flatten)]
    arch: ArchArgs,
    /// Directory for sweep.csv; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TraceArgs {
    /// IFM block rows separated by ';', values by ','.
    #[arg(long)]
    ifm: Option<String>,
    /// Kernel block in the same format.
    #[arg(long)]
    kernel: Option<String>,
    #[arg(long, default_value_t = 1)]
    stride: usize,
    /// Trace one layer of a model instead of a single block pair.
    #[arg(long, conflicts_with_all = ["ifm", "kernel"])]
    model: Option<PathBuf>,
    #[arg(long, default_value_t = 0, requires = "model")]
    layer: usize,
    #[command(flatten)]
    arch: ArchArgs,
    #[command(flatten)]
    keep: KeepArgs,
    #[arg(long, default_value_t = 0.5)]
    ifm_sparsity: f64,
    /// Directory for trace.csv and trace_summary.json; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn configure_threads() -> std::result::Result<(), String> {
    let Ok(raw) = std::env::var("SENSE_SIM_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n >= 1)
        .ok_or_else(|| format!("SENSE_SIM_THREADS must be a positive integer, got {raw:?}"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

#[derive(Serialize)]
struct PruneRow {
    layer: usize,
    name: String,
    weight_sparsity: f64,
    n_nzew_max: usize,
    keep: usize,
}

fn cmd_prune(args: &PruneArgs) -> Result<()> {
    let net = args.model.load(args.seed)?;
    let spec = PruneSpec::new(args.conv_keep, args.fc_keep);
    let (pruned, reports) = prune_network(&net, &spec)?;
    let descriptor = save_network(&pruned, &args.out)?;
    let rows: Vec<PruneRow> = reports
        .iter()
        .enumerate()
        .map(|(i, r)| PruneRow {
            layer: i,
            name: net.layers[i].entry.display_name(i),
            weight_sparsity: r.weight_sparsity,
            n_nzew_max: r.max_nnz,
            keep: r.keep,
        })
        .collect();
    write_json(&args.out.join("prune_report.json"), &rows)?;
    for r in &rows {
        println!("{}: weight sparsity {:.3}, N_NZEW_MAX {}", r.name, r.weight_sparsity, r.n_nzew_max);
    }
    println!("wrote {}", descriptor.display());
    Ok(())
}

#[derive(Serialize)]
struct CompressRow {
    file: String,
    dims: Vec<usize>,
    raw_bytes: usize,
    compressed_bytes: usize,
}

fn cmd_compress(args: &CompressArgs) -> Result<()> {
    let net = args.model.load(args.seed)?;
    fs::create_dir_all(&args.out)?;
    let mut rows = Vec::new();
    for (i, layer) in net.layers.iter().enumerate() {
        let mut tensors = vec![(format!("layer{i}_weights.sbmc"), &layer.weights)];
        if let Some(ifm) = &layer.ifm {
            tensors.push((format!("layer{i}_ifm.sbmc"), &ifm.padded));
        }
        for (file, t) in tensors {
            let bytes = write_container(t, BlockLayout::for_tensor(t))?;
            fs::write(args.out.join(&file), &bytes)?;
            rows.push(CompressRow {
                file,
                dims: t.dims().to_vec(),
                raw_bytes: t.len() * 2,
                compressed_bytes: bytes.len(),
            });
        }
    }
    write_json(&args.out.join("compress_report.json"), &rows)?;
    for r in &rows {
        println!("{}: {} -> {} bytes", r.file, r.raw_bytes, r.compressed_bytes);
    }
    Ok(())
}

fn cmd_decompress(args: &DecompressArgs) -> Result<()> {
    let bytes = fs::read(&args.input)?;
    let t = read_container(&bytes)?;
    write_tensor(&args.out, &t)?;
    println!("{:?} -> {}", t.dims(), args.out.display());
    Ok(())
}

#[derive(Serialize)]
struct ScheduleRow<'a> {
    layer: usize,
    strategy: &'static str,
    d_mem_candidates: &'a [ReuseDecision],
    chosen: ReuseDecision,
    t_oc_outer: usize,
    t_oc_inner: usize,
    ic_order: &'a [usize],
}

fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    let net = args.model.load(args.arch.seed)?;
    let opts = SimOptions {
        prune: args.keep.spec(),
        verify: args.verify,
        truncate_psum: args.truncate_psum,
        ..args.arch.options()
    };
    let outcomes = simulate_network(&net, &opts)?;
    let meta = RunMetadata::new(&net.name, args.arch.seed, &opts).stamped();
    let report = SimReport::new(meta, &outcomes, net.warnings.clone());

    fs::create_dir_all(&args.out)?;
    fs::write(args.out.join("report.json"), report.to_json()?)?;
    report.write_csv(fs::File::create(args.out.join("layers.csv"))?)?;
    let schedule: Vec<ScheduleRow> = outcomes
        .iter()
        .map(|o| {
            let s = &o.schedule;
            ScheduleRow {
                layer: o.index,
                strategy: s.chosen.strategy.label(),
                d_mem_candidates: &s.candidates,
                chosen: s.chosen,
                t_oc_outer: s.loop_order.oc_outer,
                t_oc_inner: s.loop_order.oc_inner,
                ic_order: s.rankings.first().map_or(&[][..], |r| &r.order),
            }
        })
        .collect();
    write_json(&args.out.join("schedule.json"), &schedule)?;

    for w in &net.warnings {
        eprintln!("warning: {w}");
    }
    let t = &report.totals;
    println!(
        "{} layers, {} cycles (sparse {}, dense {}), D_mem {} bytes",
        report.layers.len(),
        t.cycles,
        t.cycles_sparse,
        t.cycles_dense,
        t.d_mem
    );
    Ok(())
}

fn cmd_sweep(args: &SweepArgs) -> Result<()> {
    let mut cfg = SweepConfig::new(args.axis);
    cfg.base = args.arch.options();
    cfg.seed = args.arch.seed;
    if let Some(grid) = &args.grid {
        cfg.grid = grid.clone();
    }
    if let Some(model) = &args.model {
        let text = fs::read_to_string(model)?;
        let desc = sense_core::network::NetworkDescriptor::from_json(&text)?;
        cfg.roster = desc.layers.into_iter().map(|l| l.config).collect();
    }
    let rows = run_sweep(&cfg)?;
    match &args.out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            write_sweep_csv(fs::File::create(dir.join("sweep.csv"))?, &rows)?;
        }
        None => write_sweep_csv(std::io::stdout().lock(), &rows)?,
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Prune(a) => cmd_prune(a),
        Command::Compress(a) => cmd_compress(a),
        Command::Decompress(a) => cmd_decompress(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Trace(a) => trace::cmd_trace(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(msg) = configure_threads() {
        eprintln!("error[config]: {msg}");
        return ExitCode::from(2);
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.kind());
            ExitCode::FAILURE
        }
    }
}
