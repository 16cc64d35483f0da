//! Bitmap compression of IFM tiles, kernels and FC columns.
//!
//! A block stores its nonzero count, one presence bit per element (row-major,
//! LSB-first within each byte) and the nonzero values in scan order. On disk:
//!
//! ```text
//! u16 data_length | ceil(rows*cols/8) bitmap bytes | data_length x i16 values
//! ```
//!
//! all little-endian. A container file wraps a sequence of blocks behind an
//! offset index, see [`write_container`].

use std::io::{Read, Write};

use thiserror::Error;

use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("corrupt block: {0}")]
    CorruptBlock(String),
    #[error("block holds {0} nonzeros, more than a u16 length field can record")]
    BlockTooLarge(usize),
    #[error("bad container: {0}")]
    BadContainer(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Row-major nonzero coordinates of a block.
pub type CoordList = Vec<(usize, usize)>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompressedBlock {
    rows: usize,
    cols: usize,
    data_length: usize,
    bitmap: Vec<u8>,
    values: Vec<i16>,
}

/// Bytes taken by a block of `elements` entries holding `nnz` nonzeros.
pub fn compressed_size(elements: usize, nnz: usize) -> usize {
    BLOCK_HEADER_BYTES + elements.div_ceil(8) + 2 * nnz
}

pub const BLOCK_HEADER_BYTES: usize = 2;

impl CompressedBlock {
    /// Assembles a block without checking consistency; see [`Self::validate`].
    pub fn from_raw_parts(
        rows: usize,
        cols: usize,
        data_length: usize,
        bitmap: Vec<u8>,
        values: Vec<i16>,
    ) -> Self {
        CompressedBlock {
            rows,
            cols,
            data_length,
            bitmap,
            values,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    /// N_NZE as recorded in the header.
    pub fn data_length(&self) -> usize {
        self.data_length
    }

    pub fn values(&self) -> &[i16] {
        &self.values
    }

    pub fn bitmap(&self) -> &[u8] {
        &self.bitmap
    }

    pub fn bit(&self, k: usize) -> bool {
        self.bitmap[k / 8] >> (k % 8) & 1 == 1
    }

    pub fn byte_size(&self) -> usize {
        compressed_size(self.rows * self.cols, self.data_length)
    }

    pub fn validate(&self) -> Result<(), CodecError> {
        let n = self.rows * self.cols;
        if self.bitmap.len() != n.div_ceil(8) {
            return Err(CodecError::CorruptBlock(format!(
                "bitmap has {} bytes for {n} elements",
                self.bitmap.len()
            )));
        }
        let popcount: usize = (0..n).filter(|&k| self.bit(k)).count();
        if popcount != self.data_length {
            return Err(CodecError::CorruptBlock(format!(
                "bitmap has {popcount} bits set but data_length is {}",
                self.data_length
            )));
        }
        if self.values.len() != self.data_length {
            return Err(CodecError::CorruptBlock(format!(
                "{} values stored for data_length {}",
                self.values.len(),
                self.data_length
            )));
        }
        if self.values.contains(&0) {
            return Err(CodecError::CorruptBlock("stored value is zero".into()));
        }
        Ok(())
    }

    pub fn write_to<W: Write>(&self, out: &mut W) -> Result<(), CodecError> {
        let len = u16::try_from(self.data_length)
            .map_err(|_| CodecError::BlockTooLarge(self.data_length))?;
        out.write_all(&len.to_le_bytes())?;
        out.write_all(&self.bitmap)?;
        for v in &self.values {
            out.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(input: &mut R, rows: usize, cols: usize) -> Result<Self, CodecError> {
        let mut len = [0u8; 2];
        input.read_exact(&mut len)?;
        let data_length = u16::from_le_bytes(len) as usize;
        let mut bitmap = vec![0u8; (rows * cols).div_ceil(8)];
        input.read_exact(&mut bitmap)?;
        let mut raw = vec![0u8; 2 * data_length];
        input.read_exact(&mut raw)?;
        let values = raw
            .chunks_exact(2)
            .map(|b| i16::from_le_bytes([b[0], b[1]]))
            .collect();
        let block = CompressedBlock::from_raw_parts(rows, cols, data_length, bitmap, values);
        block.validate()?;
        Ok(block)
    }
}

/// Compresses a dense row-major `rows x cols` block.
pub fn compress(data: &[i16], rows: usize, cols: usize) -> CompressedBlock {
    assert_eq!(data.len(), rows * cols, "block data does not match {rows}x{cols}");
    let mut bitmap = vec![0u8; data.len().div_ceil(8)];
    let mut values = Vec::new();
    for (k, &v) in data.iter().enumerate() {
        if v != 0 {
            bitmap[k / 8] |= 1 << (k % 8);
            values.push(v);
        }
    }
    CompressedBlock {
        rows,
        cols,
        data_length: values.len(),
        bitmap,
        values,
    }
}

/// Compresses the `rows x cols` window at (`top`, `left`) of a row-major plane
/// `plane_cols` wide.
pub fn compress_window(
    plane: &[i16],
    plane_cols: usize,
    top: usize,
    left: usize,
    rows: usize,
    cols: usize,
) -> CompressedBlock {
    let mut buf = Vec::with_capacity(rows * cols);
    for r in top..top + rows {
        buf.extend_from_slice(&plane[r * plane_cols + left..r * plane_cols + left + cols]);
    }
    compress(&buf, rows, cols)
}

/// Nonzero count of a window without materializing the block.
pub fn window_nnz(
    plane: &[i16],
    plane_cols: usize,
    top: usize,
    left: usize,
    rows: usize,
    cols: usize,
) -> usize {
    (top..top + rows)
        .map(|r| {
            plane[r * plane_cols + left..r * plane_cols + left + cols]
                .iter()
                .filter(|&&v| v != 0)
                .count()
        })
        .sum()
}

pub fn decompress(block: &CompressedBlock) -> Result<Vec<i16>, CodecError> {
    block.validate()?;
    let mut out = vec![0i16; block.rows * block.cols];
    let mut values = block.values.iter();
    for (k, slot) in out.iter_mut().enumerate() {
        if block.bit(k) {
            *slot = *values.next().expect("validated");
        }
    }
    Ok(out)
}

/// Location info of every stored value; the i-th coordinate pairs with the
/// i-th value.
pub fn decompress_coords(block: &CompressedBlock) -> Result<CoordList, CodecError> {
    block.validate()?;
    Ok(coords_unchecked(block))
}

pub(crate) fn coords_unchecked(block: &CompressedBlock) -> CoordList {
    let mut coords = Vec::with_capacity(block.data_length);
    for (byte_idx, &byte) in block.bitmap.iter().enumerate() {
        let mut bits = byte;
        while bits != 0 {
            let k = byte_idx * 8 + bits.trailing_zeros() as usize;
            coords.push((k / block.cols, k % block.cols));
            bits &= bits - 1;
        }
    }
    coords
}

/// FC columns are `C_o x 1` blocks.
pub fn compress_fc_column(column: &[i16]) -> CompressedBlock {
    compress(column, column.len(), 1)
}

/// `(W_row, value)` pairs of a compressed FC column.
pub fn decompress_fc_column(block: &CompressedBlock) -> Result<Vec<(usize, i16)>, CodecError> {
    if block.cols != 1 {
        return Err(CodecError::CorruptBlock(format!(
            "FC column block must be one column wide, got {}x{}",
            block.rows, block.cols
        )));
    }
    let coords = decompress_coords(block)?;
    Ok(coords
        .into_iter()
        .zip(block.values.iter().copied())
        .map(|((r, _), v)| (r, v))
        .collect())
}

/// Column `col` of an FC weight matrix `[C_o, C_i]`.
pub fn fc_column(weights: &Tensor, col: usize) -> Vec<i16> {
    let (rows, cols) = (weights.dims()[0], weights.dims()[1]);
    (0..rows).map(|r| weights.data()[r * cols + col]).collect()
}

/// How a tensor is cut into blocks inside a container.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockLayout {
    /// One block per trailing 2-D plane (IFM channels, CONV kernels).
    Planes,
    /// One block per column of a rank-2 `[C_o, C_i]` matrix.
    Columns,
}

impl BlockLayout {
    /// Planes for rank >= 3, columns for rank-2 FC matrices.
    pub fn for_tensor(t: &Tensor) -> Self {
        if t.rank() == 2 {
            BlockLayout::Columns
        } else {
            BlockLayout::Planes
        }
    }

    fn tag(self) -> u8 {
        match self {
            BlockLayout::Planes => 0,
            BlockLayout::Columns => 1,
        }
    }
}

pub fn compress_tensor(t: &Tensor, layout: BlockLayout) -> Vec<CompressedBlock> {
    match layout {
        BlockLayout::Planes => {
            let r = t.rank();
            let (rows, cols) = if r >= 2 {
                (t.dims()[r - 2], t.dims()[r - 1])
            } else {
                (1, t.dims()[0])
            };
            t.data()
                .chunks_exact(rows * cols)
                .map(|plane| compress(plane, rows, cols))
                .collect()
        }
        BlockLayout::Columns => (0..t.dims()[1])
            .map(|c| compress_fc_column(&fc_column(t, c)))
            .collect(),
    }
}

pub fn decompress_tensor(
    dims: Vec<usize>,
    layout: BlockLayout,
    blocks: &[CompressedBlock],
) -> Result<Tensor, CodecError> {
    let n: usize = dims.iter().product();
    let mut data = vec![0i16; n];
    match layout {
        BlockLayout::Planes => {
            let mut offset = 0;
            for b in blocks {
                let dense = decompress(b)?;
                data[offset..offset + dense.len()].copy_from_slice(&dense);
                offset += dense.len();
            }
        }
        BlockLayout::Columns => {
            let cols = dims[1];
            for (c, b) in blocks.iter().enumerate() {
                for (r, v) in decompress_fc_column(b)? {
                    data[r * cols + c] = v;
                }
            }
        }
    }
    Ok(Tensor::new(dims, data)?)
}

const CONTAINER_MAGIC: &[u8; 4] = b"SBMC";
const CONTAINER_VERSION: u16 = 1;

/// Container layout (little-endian):
///
/// ```text
/// magic "SBMC" | u16 version | u8 layout | u8 rank | rank x u32 dims
/// | u32 block_count | block_count x u64 offsets (from file start) | blocks
/// ```
pub fn write_container(t: &Tensor, layout: BlockLayout) -> Result<Vec<u8>, CodecError> {
    let blocks = compress_tensor(t, layout);
    let mut out = Vec::new();
    out.extend_from_slice(CONTAINER_MAGIC);
    out.extend_from_slice(&CONTAINER_VERSION.to_le_bytes());
    out.push(layout.tag());
    out.push(t.rank() as u8);
    for &d in t.dims() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out.extend_from_slice(&(blocks.len() as u32).to_le_bytes());
    let index_at = out.len();
    out.resize(index_at + 8 * blocks.len(), 0);
    for (i, b) in blocks.iter().enumerate() {
        let offset = out.len() as u64;
        out[index_at + 8 * i..index_at + 8 * i + 8].copy_from_slice(&offset.to_le_bytes());
        b.write_to(&mut out)?;
    }
    Ok(out)
}

pub fn read_container(bytes: &[u8]) -> Result<Tensor, CodecError> {
    let bad = |msg: &str| CodecError::BadContainer(msg.to_string());
    let mut cur = bytes;
    let mut take = |n: usize| -> Result<&[u8], CodecError> {
        if cur.len() < n {
            return Err(bad("truncated header"));
        }
        let (head, rest) = cur.split_at(n);
        cur = rest;
        Ok(head)
    };
    if take(4)? != CONTAINER_MAGIC {
        return Err(bad("wrong magic"));
    }
    let version = u16::from_le_bytes(take(2)?.try_into().unwrap());
    if version != CONTAINER_VERSION {
        return Err(CodecError::BadContainer(format!("unsupported version {version}")));
    }
    let layout = match take(1)?[0] {
        0 => BlockLayout::Planes,
        1 => BlockLayout::Columns,
        t => return Err(CodecError::BadContainer(format!("unknown layout tag {t}"))),
    };
    let rank = take(1)?[0] as usize;
    let dims = (0..rank)
        .map(|_| take(4).map(|b| u32::from_le_bytes(b.try_into().unwrap()) as usize))
        .collect::<Result<Vec<_>, _>>()?;
    if dims.is_empty() || (layout == BlockLayout::Columns && rank != 2) {
        return Err(bad("dims do not fit layout"));
    }
    let count = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    let offsets = (0..count)
        .map(|_| take(8).map(|b| u64::from_le_bytes(b.try_into().unwrap()) as usize))
        .collect::<Result<Vec<_>, _>>()?;

    let (rows, cols) = match layout {
        BlockLayout::Planes if rank >= 2 => (dims[rank - 2], dims[rank - 1]),
        BlockLayout::Planes => (1, dims[0]),
        BlockLayout::Columns => (dims[0], 1),
    };
    let expected_blocks = match layout {
        BlockLayout::Planes => dims.iter().product::<usize>() / (rows * cols).max(1),
        BlockLayout::Columns => dims[1],
    };
    if count != expected_blocks {
        return Err(CodecError::BadContainer(format!(
            "{count} blocks for dims {dims:?}, expected {expected_blocks}"
        )));
    }
    let blocks = offsets
        .iter()
        .map(|&off| {
            let mut slice = bytes.get(off..).ok_or_else(|| bad("offset past end"))?;
            CompressedBlock::read_from(&mut slice, rows, cols)
        })
        .collect::<Result<Vec<_>, _>>()?;
    decompress_tensor(dims, layout, &blocks)
}
