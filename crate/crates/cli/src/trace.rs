//! `sense trace`: MAC event dumps of the weight-oriented sparse flow.

use std::fs;
use std::io::Write;

use serde::Serialize;

use sense_core::codec::compress;
use sense_core::engine::{
    dense_conv_oracle, run_layer, sparse_conv_tile, write_trace_csv, ComputeMode, ConvGeom, EngineOptions, MacEvent,
};
use sense_core::network::{load_network, out_extent, LayerKind, SynthDefaults};
use sense_core::prune::{prune_conv_layer, prune_fc_layer};
use sense_core::tensor::parse_grid;
use sense_core::{Error, Result, Tensor};

use crate::TraceArgs;

/// Diagonal 4x4 IFM against a 2x2 kernel with two nonzeros.
const DEFAULT_IFM: &str = "10,0,0,0;0,20,0,0;0,0,30,0;0,0,0,40";
const DEFAULT_KERNEL: &str = "10,0;0,20";

#[derive(Serialize)]
struct TraceSummary {
    events: usize,
    invalid: usize,
    dense_cycles: usize,
    speedup: Option<f64>,
    matches_oracle: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    psum: Option<Vec<i32>>,
}

fn block_trace(args: &TraceArgs) -> Result<(Vec<MacEvent>, TraceSummary)> {
    let ifm = parse_grid(args.ifm.as_deref().unwrap_or(DEFAULT_IFM))?;
    let kernel = parse_grid(args.kernel.as_deref().unwrap_or(DEFAULT_KERNEL))?;
    let ((ir, ic), (kr, kc)) = ((ifm.dims()[0], ifm.dims()[1]), (kernel.dims()[0], kernel.dims()[1]));
    let geom = ConvGeom {
        h_out: out_extent(ir, kr, args.stride),
        w_out: out_extent(ic, kc, args.stride),
        stride: args.stride,
    };
    let (psum, events) = sparse_conv_tile(&compress(ifm.data(), ir, ic), &compress(kernel.data(), kr, kc), geom)?;
    let oracle = dense_conv_oracle(
        &Tensor::new(vec![1, ir, ic], ifm.into_data())?,
        &Tensor::new(vec![1, 1, kr, kc], kernel.into_data())?,
        args.stride,
        0,
    )?;
    let dense_cycles = ir * ic * kr * kc;
    let summary = TraceSummary {
        events: events.len(),
        invalid: events.iter().filter(|e| e.addr.is_none()).count(),
        dense_cycles,
        speedup: (!events.is_empty()).then(|| dense_cycles as f64 / events.len() as f64),
        matches_oracle: oracle.data == psum.as_slice(),
        psum: Some(psum.as_slice().to_vec()),
    };
    Ok((events, summary))
}

fn layer_trace(args: &TraceArgs) -> Result<(Vec<MacEvent>, TraceSummary)> {
    let path = args.model.as_ref().expect("checked by caller");
    let synth = SynthDefaults {
        seed: args.arch.seed,
        ifm_sparsity: args.ifm_sparsity,
        ..SynthDefaults::default()
    };
    let net = load_network(path, &synth)?;
    let layer = net
        .layers
        .get(args.layer)
        .ok_or_else(|| Error::Config(format!("model has {} layers, no layer {}", net.layers.len(), args.layer)))?;
    let ifm = layer
        .ifm
        .as_ref()
        .ok_or_else(|| Error::Config(format!("layer {} takes its IFM from the previous layer", args.layer)))?;
    let cfg = layer.config();
    let weights = match args.keep.spec() {
        Some(spec) => match cfg.kind {
            LayerKind::Conv => prune_conv_layer(&layer.weights, &spec)?.0,
            LayerKind::Fc => prune_fc_layer(&layer.weights, &spec)?.0,
        },
        None => layer.weights.clone(),
    };
    let opts = EngineOptions {
        n_is: args.arch.tile,
        n_pe: args.arch.pe,
        trace: true,
        ..EngineOptions::default()
    };
    let sparse = run_layer(cfg, &ifm.padded, &weights, ComputeMode::Sparse, &opts)?;
    let dense = run_layer(cfg, &ifm.padded, &weights, ComputeMode::Dense, &opts)?;
    let mut events: Vec<MacEvent> = sparse.traces.into_iter().flat_map(|t| t.events).collect();
    for (cycle, e) in events.iter_mut().enumerate() {
        e.cycle = cycle;
    }
    let summary = TraceSummary {
        events: events.len(),
        invalid: events.iter().filter(|e| e.addr.is_none()).count(),
        dense_cycles: dense.issued as usize,
        speedup: (!events.is_empty()).then(|| dense.issued as f64 / events.len() as f64),
        matches_oracle: sparse.ofm == dense.ofm,
        psum: None,
    };
    Ok((events, summary))
}

pub(crate) fn cmd_trace(args: &TraceArgs) -> Result<()> {
    let (events, summary) = if args.model.is_some() {
        layer_trace(args)?
    } else {
        block_trace(args)?
    };
    let line = format!(
        "events {}, invalid {}, dense cycles {}, speedup {}, oracle {}",
        summary.events,
        summary.invalid,
        summary.dense_cycles,
        summary.speedup.map_or("n/a".to_string(), |s| format!("{s:.2}x")),
        if summary.matches_oracle { "match" } else { "MISMATCH" },
    );
    match &args.out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            write_trace_csv(&mut fs::File::create(dir.join("trace.csv"))?, &events)?;
            fs::write(dir.join("trace_summary.json"), serde_json::to_string_pretty(&summary)?)?;
            println!("{line}");
        }
        None => {
            let mut out = std::io::stdout().lock();
            write_trace_csv(&mut out, &events)?;
            out.flush()?;
            eprintln!("{line}");
            if let Some(p) = &summary.psum {
                eprintln!("psum {p:?}");
            }
        }
    }
    if summary.matches_oracle {
        Ok(())
    } else {
        Err(Error::OracleMismatch { layer: args.layer })
    }
}
