//! Functional execution: the weight-oriented sparse convolution with Psum
//! address generation, the outer-product sparse FC flow, and the dense
//! reference implementations they must match bit for bit.
//!
//! Accumulation is 32-bit two's-complement (wrapping), so every summation
//! order yields the same result.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{self, CompressedBlock};
use crate::dataflow::make_tiling;
use crate::network::{out_extent, LayerConfig, LayerKind};
use crate::tensor::Tensor;

#[derive(Debug, Error, PartialEq)]
pub enum EngineError {
    #[error("geometry mismatch: {0}")]
    GeometryMismatch(String),
    #[error("weight column {actual} does not match IFM column {expected}")]
    ColumnMismatch { expected: usize, actual: usize },
}

fn geometry(msg: impl Into<String>) -> EngineError {
    EngineError::GeometryMismatch(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ComputeMode {
    Sparse,
    Dense,
}

impl ComputeMode {
    pub fn label(self) -> &'static str {
        match self {
            ComputeMode::Sparse => "sparse",
            ComputeMode::Dense => "dense",
        }
    }
}

/// Accumulators for one output block, addressed by `Psum_addr`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PsumBuffer {
    data: Vec<i32>,
    truncate: bool,
}

impl PsumBuffer {
    pub fn new(len: usize) -> Self {
        PsumBuffer {
            data: vec![0; len],
            truncate: false,
        }
    }

    /// With `truncate`, every accumulation saturates to the int16 range.
    /// Saturation is order-dependent, so results then depend on IC order.
    pub fn with_truncation(len: usize, truncate: bool) -> Self {
        PsumBuffer {
            data: vec![0; len],
            truncate,
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[i32] {
        &self.data
    }

    pub fn clear(&mut self) {
        self.data.fill(0);
    }

    #[inline]
    pub fn accumulate(&mut self, addr: usize, product: i32) {
        let slot = &mut self.data[addr];
        *slot = slot.wrapping_add(product);
        if self.truncate {
            *slot = (*slot).clamp(i16::MIN as i32, i16::MAX as i32);
        }
    }
}

/// One issued multiply: a cycle of one PE.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MacEvent {
    pub cycle: usize,
    pub pe: (usize, usize),
    pub i_val: i16,
    pub w_val: i16,
    /// `None` when the pair falls outside the output block.
    pub addr: Option<usize>,
}

impl fmt::Display for MacEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{},{},{},", self.cycle, self.pe.0, self.pe.1, self.i_val, self.w_val)?;
        match self.addr {
            Some(a) => write!(f, "{a}"),
            None => f.write_str("INVALID"),
        }
    }
}

pub const TRACE_CSV_HEADER: &str = "cycle,pe_row,pe_col,i_val,w_val,addr";

pub fn write_trace_csv<W: std::io::Write>(out: &mut W, events: &[MacEvent]) -> std::io::Result<()> {
    writeln!(out, "{TRACE_CSV_HEADER}")?;
    for e in events {
        writeln!(out, "{e}")?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvGeom {
    pub h_out: usize,
    pub w_out: usize,
    pub stride: usize,
}

fn check_tile_geom(ifm: &CompressedBlock, kernel: &CompressedBlock, geom: ConvGeom) -> Result<(), EngineError> {
    let (ir, ic) = ifm.dims();
    let (kr, kc) = kernel.dims();
    if geom.stride == 0 {
        return Err(geometry("stride must be >= 1"));
    }
    let expect = (out_extent(ir, kr, geom.stride), out_extent(ic, kc, geom.stride));
    if expect != (geom.h_out, geom.w_out) || geom.h_out == 0 || geom.w_out == 0 {
        return Err(geometry(format!(
            "IFM block {ir}x{ic} with kernel {kr}x{kc} at stride {} yields {}x{}, not {}x{}",
            geom.stride, expect.0, expect.1, geom.h_out, geom.w_out
        )));
    }
    Ok(())
}

/// Output coordinate of an (IFM, weight) coordinate pair, if it lands in the block.
#[inline]
fn psum_coord(i: usize, w: usize, stride: usize, extent: usize) -> Option<usize> {
    let d = i.checked_sub(w)?;
    if d % stride != 0 {
        return None;
    }
    let q = d / stride;
    (q < extent).then_some(q)
}

/// Accumulates one IFM block against one kernel block into `psum` and returns
/// the number of issued pairs (`N_NZEI * N_NZEW`). Weights run in the outer
/// loop: each nonzero weight sweeps every nonzero IFM element.
pub fn accumulate_conv_tile(
    ifm: &CompressedBlock,
    kernel: &CompressedBlock,
    geom: ConvGeom,
    psum: &mut PsumBuffer,
    mut trace: Option<&mut Vec<MacEvent>>,
) -> Result<u64, EngineError> {
    check_tile_geom(ifm, kernel, geom)?;
    if psum.len() != geom.h_out * geom.w_out {
        return Err(geometry(format!(
            "Psum buffer holds {} entries, block needs {}",
            psum.len(),
            geom.h_out * geom.w_out
        )));
    }
    let i_coords = codec::coords_unchecked(ifm);
    let w_coords = codec::coords_unchecked(kernel);
    let mut cycle = 0;
    for (&(wr, wc), &w) in w_coords.iter().zip(kernel.values()) {
        for (&(ir, icol), &i) in i_coords.iter().zip(ifm.values()) {
            let addr = psum_coord(ir, wr, geom.stride, geom.h_out)
                .zip(psum_coord(icol, wc, geom.stride, geom.w_out))
                .map(|(r, c)| r * geom.w_out + c);
            if let Some(a) = addr {
                psum.accumulate(a, i as i32 * w as i32);
            }
            if let Some(t) = trace.as_deref_mut() {
                t.push(MacEvent {
                    cycle,
                    pe: (0, 0),
                    i_val: i,
                    w_val: w,
                    addr,
                });
            }
            cycle += 1;
        }
    }
    Ok(cycle as u64)
}

/// Stand-alone form: a fresh buffer and the full event trace of one pair of blocks.
pub fn sparse_conv_tile(
    ifm: &CompressedBlock,
    kernel: &CompressedBlock,
    geom: ConvGeom,
) -> Result<(PsumBuffer, Vec<MacEvent>), EngineError> {
    let mut psum = PsumBuffer::new(geom.h_out * geom.w_out);
    let mut trace = Vec::with_capacity(ifm.data_length() * kernel.data_length());
    accumulate_conv_tile(ifm, kernel, geom, &mut psum, Some(&mut trace))?;
    Ok((psum, trace))
}

/// A compressed FC weight column tagged with its column index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FcColumn {
    pub col: usize,
    pub block: CompressedBlock,
}

/// Outer-product step: one nonzero IFM element `(value, I_col)` against
/// weight column `I_col`; `Psum_addr = W_row`.
pub fn sparse_fc_column_step(
    ifm_elem: (i16, usize),
    weight_col: &FcColumn,
    psum: &mut PsumBuffer,
) -> Result<u64, EngineError> {
    let (value, col) = ifm_elem;
    if weight_col.col != col {
        return Err(EngineError::ColumnMismatch {
            expected: col,
            actual: weight_col.col,
        });
    }
    if weight_col.block.cols() != 1 || weight_col.block.rows() != psum.len() {
        return Err(geometry(format!(
            "FC column block {}x{} against {} outputs",
            weight_col.block.rows(),
            weight_col.block.cols(),
            psum.len()
        )));
    }
    let coords = codec::coords_unchecked(&weight_col.block);
    for (&(row, _), &w) in coords.iter().zip(weight_col.block.values()) {
        psum.accumulate(row, value as i32 * w as i32);
    }
    Ok(coords.len() as u64)
}

/// Exact 32-bit output feature map `[C_o, H_o, W_o]` (FC: `[C_o, 1, 1]`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ofm {
    pub dims: [usize; 3],
    pub data: Vec<i32>,
}

impl Ofm {
    pub fn zeros(dims: [usize; 3]) -> Self {
        Ofm {
            dims,
            data: vec![0; dims.iter().product()],
        }
    }

    pub fn get(&self, o: usize, y: usize, x: usize) -> i32 {
        self.data[(o * self.dims[1] + y) * self.dims[2] + x]
    }

    pub fn plane(&self, o: usize) -> &[i32] {
        let n = self.dims[1] * self.dims[2];
        &self.data[o * n..(o + 1) * n]
    }
}

/// Direct evaluation of the convolution sum
/// `O[o,x,y] = sum_{i,a,b} I[i, x*s + a - pad, y*s + b - pad] * W[o,i,a,b]`
/// on an unpadded IFM, with out-of-range inputs reading as zero.
pub fn dense_conv_oracle(ifm: &Tensor, weights: &Tensor, stride: usize, pad: usize) -> Result<Ofm, EngineError> {
    let (&[c_in, h, w], &[c_out, wc_in, hk, wk]) = (ifm.dims(), weights.dims()) else {
        return Err(geometry(format!(
            "oracle wants IFM [C_i,H,W] and weights [C_o,C_i,H_k,W_k], got {:?} and {:?}",
            ifm.dims(),
            weights.dims()
        )));
    };
    if c_in != wc_in {
        return Err(geometry(format!("IFM has {c_in} channels, weights expect {wc_in}")));
    }
    if stride == 0 {
        return Err(geometry("stride must be >= 1"));
    }
    let (ho, wo) = (out_extent(h + 2 * pad, hk, stride), out_extent(w + 2 * pad, wk, stride));
    if ho == 0 || wo == 0 {
        return Err(geometry("kernel does not fit the padded IFM"));
    }
    let (i_data, w_data) = (ifm.data(), weights.data());
    let mut out = Ofm::zeros([c_out, ho, wo]);
    for o in 0..c_out {
        for x in 0..ho {
            for y in 0..wo {
                let mut acc = 0i32;
                for i in 0..c_in {
                    for a in 0..hk {
                        let Some(r) = (x * stride + a).checked_sub(pad).filter(|&r| r < h) else {
                            continue;
                        };
                        for b in 0..wk {
                            let Some(c) = (y * stride + b).checked_sub(pad).filter(|&c| c < w) else {
                                continue;
                            };
                            let iv = i_data[(i * h + r) * w + c] as i32;
                            let wv = w_data[((o * c_in + i) * hk + a) * wk + b] as i32;
                            acc = acc.wrapping_add(iv * wv);
                        }
                    }
                }
                out.data[(o * ho + x) * wo + y] = acc;
            }
        }
    }
    Ok(out)
}

/// Plain matrix-vector product `O[o] = sum_i W[o,i] * I[i]`.
pub fn dense_fc_oracle(ifm: &[i16], weights: &Tensor) -> Result<Ofm, EngineError> {
    let &[c_out, c_in] = weights.dims() else {
        return Err(geometry(format!("FC weights must be [C_o,C_i], got {:?}", weights.dims())));
    };
    if ifm.len() != c_in {
        return Err(geometry(format!("FC input has {} elements, weights expect {c_in}", ifm.len())));
    }
    let data = (0..c_out)
        .map(|o| {
            weights.data()[o * c_in..(o + 1) * c_in]
                .iter()
                .zip(ifm)
                .fold(0i32, |acc, (&w, &i)| acc.wrapping_add(w as i32 * i as i32))
        })
        .collect();
    Ok(Ofm { dims: [c_out, 1, 1], data })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EngineOptions {
    pub n_is: usize,
    pub n_pe: usize,
    /// IC processing order (a permutation of `0..C_i`); identity when `None`.
    pub ic_order: Option<Vec<usize>>,
    pub truncate_psum: bool,
    pub trace: bool,
}

impl Default for EngineOptions {
    fn default() -> Self {
        EngineOptions {
            n_is: 7,
            n_pe: 32,
            ic_order: None,
            truncate_psum: false,
            trace: false,
        }
    }
}

/// Events of one (OC, tile, IC) block pair, cycles local to the pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockTrace {
    pub oc: usize,
    pub tile: (usize, usize),
    pub ic: usize,
    pub events: Vec<MacEvent>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerRun {
    pub ofm: Ofm,
    /// Multiplies issued, valid or not.
    pub issued: u64,
    pub traces: Vec<BlockTrace>,
}

fn resolve_order(order: &Option<Vec<usize>>, c_in: usize) -> Result<Vec<usize>, EngineError> {
    match order {
        None => Ok((0..c_in).collect()),
        Some(o) => {
            let mut seen = vec![false; c_in];
            for &i in o {
                if i >= c_in || std::mem::replace(&mut seen[i], true) {
                    return Err(geometry(format!("IC order {o:?} is not a permutation of 0..{c_in}")));
                }
            }
            if o.len() != c_in {
                return Err(geometry(format!("IC order {o:?} is not a permutation of 0..{c_in}")));
            }
            Ok(o.clone())
        }
    }
}

/// Executes one layer. `ifm_padded` is `[C_i, H_i + 2 pad, W_i + 2 pad]`
/// (FC: `[C_i, 1, 1]`). Both modes produce the same OFM.
pub fn run_layer(
    layer: &LayerConfig,
    ifm_padded: &Tensor,
    weights: &Tensor,
    mode: ComputeMode,
    opts: &EngineOptions,
) -> Result<LayerRun, EngineError> {
    layer.validate().map_err(EngineError::GeometryMismatch)?;
    if weights.dims() != layer.weight_dims().as_slice() {
        return Err(geometry(format!(
            "weights {:?} do not match layer {:?}",
            weights.dims(),
            layer.weight_dims()
        )));
    }
    let order = resolve_order(&opts.ic_order, layer.c_in)?;
    match layer.kind {
        LayerKind::Conv => {
            let expect = [layer.c_in, layer.padded_h(), layer.padded_w()];
            if ifm_padded.dims() != expect {
                return Err(geometry(format!(
                    "padded IFM {:?} does not match layer {expect:?}",
                    ifm_padded.dims()
                )));
            }
            run_conv(layer, ifm_padded, weights, mode, opts, &order)
        }
        LayerKind::Fc => {
            if ifm_padded.len() != layer.c_in {
                return Err(geometry(format!(
                    "FC input has {} elements, layer expects {}",
                    ifm_padded.len(),
                    layer.c_in
                )));
            }
            run_fc(layer, ifm_padded.data(), weights, mode, opts, &order)
        }
    }
}

struct OcResult {
    /// (OFM row, OFM col, block width, accumulators) per tile.
    planes: Vec<(usize, usize, usize, PsumBuffer)>,
    issued: u64,
    traces: Vec<BlockTrace>,
}

fn run_conv(
    layer: &LayerConfig,
    ifm: &Tensor,
    weights: &Tensor,
    mode: ComputeMode,
    opts: &EngineOptions,
    order: &[usize],
) -> Result<LayerRun, EngineError> {
    let plan = make_tiling(layer, opts.n_is, opts.n_pe);
    let (hp, wp) = (layer.padded_h(), layer.padded_w());
    let (hk, wk, c_in) = (layer.h_k, layer.w_k, layer.c_in);
    let tiles: Vec<_> = plan.tiles().collect();
    let n_pe = opts.n_pe.max(1);
    // slot of each channel inside its IC group, for trace PE rows
    let mut pe_row = vec![0; c_in];
    for (pos, &i) in order.iter().enumerate() {
        pe_row[i] = pos % n_pe;
    }

    let (ifm_blocks, kernel_blocks) = match mode {
        ComputeMode::Sparse => {
            let ifm_blocks: Vec<Vec<CompressedBlock>> = tiles
                .iter()
                .map(|(r, c)| {
                    (0..c_in)
                        .map(|i| {
                            let plane = &ifm.data()[i * hp * wp..(i + 1) * hp * wp];
                            codec::compress_window(plane, wp, r.ifm_start, c.ifm_start, r.ifm_len, c.ifm_len)
                        })
                        .collect()
                })
                .collect();
            let kernel_blocks: Vec<CompressedBlock> = weights
                .data()
                .chunks_exact(hk * wk)
                .map(|k| codec::compress(k, hk, wk))
                .collect();
            (ifm_blocks, kernel_blocks)
        }
        ComputeMode::Dense => (Vec::new(), Vec::new()),
    };

    let per_oc = crate::par::map_indices(layer.c_out, |o| -> Result<OcResult, EngineError> {
        let mut res = OcResult {
            planes: Vec::with_capacity(tiles.len()),
            issued: 0,
            traces: Vec::new(),
        };
        for (t, (r, c)) in tiles.iter().enumerate() {
            let geom = ConvGeom {
                h_out: r.ofm_len,
                w_out: c.ofm_len,
                stride: layer.stride,
            };
            let mut psum = PsumBuffer::with_truncation(geom.h_out * geom.w_out, opts.truncate_psum);
            for &i in order {
                match mode {
                    ComputeMode::Sparse => {
                        let mut events = opts.trace.then(Vec::new);
                        res.issued += accumulate_conv_tile(
                            &ifm_blocks[t][i],
                            &kernel_blocks[o * c_in + i],
                            geom,
                            &mut psum,
                            events.as_mut(),
                        )?;
                        if let Some(mut events) = events {
                            for e in &mut events {
                                e.pe = (pe_row[i], o % n_pe);
                            }
                            res.traces.push(BlockTrace {
                                oc: o,
                                tile: (r.ofm_start, c.ofm_start),
                                ic: i,
                                events,
                            });
                        }
                    }
                    ComputeMode::Dense => {
                        let plane = &ifm.data()[i * hp * wp..(i + 1) * hp * wp];
                        let kernel = &weights.data()[(o * c_in + i) * hk * wk..(o * c_in + i + 1) * hk * wk];
                        for y in 0..geom.h_out {
                            for x in 0..geom.w_out {
                                let (top, left) = (r.ifm_start + y * layer.stride, c.ifm_start + x * layer.stride);
                                for a in 0..hk {
                                    for b in 0..wk {
                                        let iv = plane[(top + a) * wp + left + b] as i32;
                                        psum.accumulate(y * geom.w_out + x, iv * kernel[a * wk + b] as i32);
                                    }
                                }
                            }
                        }
                        res.issued += (r.ifm_len * c.ifm_len * hk * wk) as u64;
                    }
                }
            }
            res.planes.push((r.ofm_start, c.ofm_start, c.ofm_len, psum));
        }
        Ok(res)
    });

    let (ho, wo) = (layer.h_out(), layer.w_out());
    let mut ofm = Ofm::zeros([layer.c_out, ho, wo]);
    let mut issued = 0;
    let mut traces = Vec::new();
    for (o, res) in per_oc.into_iter().enumerate() {
        let res = res?;
        issued += res.issued;
        traces.extend(res.traces);
        for (top, left, bw, psum) in res.planes {
            for (k, &v) in psum.as_slice().iter().enumerate() {
                let (y, x) = (top + k / bw, left + k % bw);
                ofm.data[(o * ho + y) * wo + x] = v;
            }
        }
    }
    Ok(LayerRun { ofm, issued, traces })
}

fn run_fc(
    layer: &LayerConfig,
    ifm: &[i16],
    weights: &Tensor,
    mode: ComputeMode,
    opts: &EngineOptions,
    order: &[usize],
) -> Result<LayerRun, EngineError> {
    let mut psum = PsumBuffer::with_truncation(layer.c_out, opts.truncate_psum);
    let mut issued = 0;
    let mut traces = Vec::new();
    let n_pe = opts.n_pe.max(1);
    match mode {
        ComputeMode::Sparse => {
            for &j in order {
                let value = ifm[j];
                if value == 0 {
                    continue;
                }
                let column = FcColumn {
                    col: j,
                    block: codec::compress_fc_column(&codec::fc_column(weights, j)),
                };
                issued += sparse_fc_column_step((value, j), &column, &mut psum)?;
                if opts.trace {
                    let coords = codec::coords_unchecked(&column.block);
                    let events = coords
                        .iter()
                        .zip(column.block.values())
                        .enumerate()
                        .map(|(cycle, (&(row, _), &w))| MacEvent {
                            cycle,
                            pe: (row % n_pe, 0),
                            i_val: value,
                            w_val: w,
                            addr: Some(row),
                        })
                        .collect();
                    traces.push(BlockTrace {
                        oc: 0,
                        tile: (0, 0),
                        ic: j,
                        events,
                    });
                }
            }
        }
        ComputeMode::Dense => {
            let c_in = layer.c_in;
            for &j in order {
                for o in 0..layer.c_out {
                    psum.accumulate(o, ifm[j] as i32 * weights.data()[o * c_in + j] as i32);
                }
                issued += layer.c_out as u64;
            }
        }
    }
    Ok(LayerRun {
        ofm: Ofm {
            dims: [layer.c_out, 1, 1],
            data: psum.data,
        },
        issued,
        traces,
    })
}

/// ReLU, optional `pool x pool` max-pool (stride `pool`), then an arithmetic
/// right shift by the smallest power of two that brings the maximum into
/// `0..=127`. The result is the next layer's int16 IFM.
pub fn post_process(ofm: &Ofm, pool: Option<usize>) -> Tensor {
    let [c, h, w] = ofm.dims;
    let p = pool.unwrap_or(1).max(1);
    let (ph, pw) = ((h / p).max(1), (w / p).max(1));
    let mut pooled = vec![0i32; c * ph * pw];
    for o in 0..c {
        for y in 0..ph {
            for x in 0..pw {
                let mut m = 0i32;
                for a in y * p..((y + 1) * p).min(h) {
                    for b in x * p..((x + 1) * p).min(w) {
                        m = m.max(ofm.get(o, a, b));
                    }
                }
                pooled[(o * ph + y) * pw + x] = m;
            }
        }
    }
    let max = pooled.iter().copied().max().unwrap_or(0);
    let shift = (0..32).find(|s| (max >> s) <= 127).unwrap_or(31);
    let data = pooled.iter().map(|&v| (v >> shift) as i16).collect();
    Tensor::new(vec![c, ph, pw], data).expect("extents are >= 1")
}
