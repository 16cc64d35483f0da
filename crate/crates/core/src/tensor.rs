//! Dense int16 tensors with role-tagged dimensions, plus seeded synthesis.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TensorError {
    #[error("shape mismatch: dims {dims:?} hold {expected} values but {actual} were given")]
    ShapeMismatch {
        dims: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("dimension {0} has zero extent")]
    ZeroExtent(usize),
    #[error("{0} dims given but {1} roles")]
    RoleCount(usize, usize),
    #[error("no default dimension roles for rank {0}")]
    UnsupportedRank(usize),
    #[error("value {0} does not fit in int16")]
    ValueOverflow(i64),
    #[error("value range [{0}, {1}] has no nonzero value")]
    EmptyRange(i16, i16),
    #[error("sparsity {0} outside [0, 1]")]
    BadSparsity(f64),
    #[error("grid {text:?}: {reason}")]
    BadGrid { text: String, reason: String },
}

/// What a tensor dimension indexes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DimRole {
    #[serde(rename = "OC")]
    OutChannel,
    #[serde(rename = "IC")]
    InChannel,
    #[serde(rename = "H")]
    Height,
    #[serde(rename = "W")]
    Width,
}

impl DimRole {
    /// Default role tags by rank: `[IC]`, `[OC, IC]`, `[IC, H, W]`, `[OC, IC, H, W]`.
    pub fn defaults_for_rank(rank: usize) -> Option<Vec<DimRole>> {
        use DimRole::*;
        match rank {
            1 => Some(vec![InChannel]),
            2 => Some(vec![OutChannel, InChannel]),
            3 => Some(vec![InChannel, Height, Width]),
            4 => Some(vec![OutChannel, InChannel, Height, Width]),
            _ => None,
        }
    }
}

/// Row-major dense int16 tensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tensor {
    dims: Vec<usize>,
    roles: Vec<DimRole>,
    data: Vec<i16>,
}

impl Tensor {
    /// Builds a tensor with the default roles for its rank.
    pub fn new(dims: Vec<usize>, data: Vec<i16>) -> Result<Self, TensorError> {
        let roles =
            DimRole::defaults_for_rank(dims.len()).ok_or(TensorError::UnsupportedRank(dims.len()))?;
        Self::with_roles(dims, roles, data)
    }

    pub fn with_roles(
        dims: Vec<usize>,
        roles: Vec<DimRole>,
        data: Vec<i16>,
    ) -> Result<Self, TensorError> {
        if dims.len() != roles.len() {
            return Err(TensorError::RoleCount(dims.len(), roles.len()));
        }
        if let Some(axis) = dims.iter().position(|&d| d == 0) {
            return Err(TensorError::ZeroExtent(axis));
        }
        let expected: usize = dims.iter().product();
        if expected != data.len() {
            return Err(TensorError::ShapeMismatch {
                dims,
                expected,
                actual: data.len(),
            });
        }
        Ok(Tensor { dims, roles, data })
    }

    /// Narrows wider integers, failing on the first value outside int16.
    pub fn from_i64(dims: Vec<usize>, values: &[i64]) -> Result<Self, TensorError> {
        let data = values
            .iter()
            .map(|&v| i16::try_from(v).map_err(|_| TensorError::ValueOverflow(v)))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(dims, data)
    }

    pub fn zeros(dims: Vec<usize>) -> Result<Self, TensorError> {
        let n = dims.iter().product();
        Self::new(dims, vec![0; n])
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn roles(&self) -> &[DimRole] {
        &self.roles
    }

    pub fn data(&self) -> &[i16] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [i16] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<i16> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn nnz(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    /// Fraction of zero entries.
    pub fn sparsity(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        1.0 - self.nnz() as f64 / self.data.len() as f64
    }

    /// Row-major flat offset of a multi-index.
    pub fn offset(&self, index: &[usize]) -> usize {
        debug_assert_eq!(index.len(), self.dims.len());
        index
            .iter()
            .zip(&self.dims)
            .fold(0, |acc, (&i, &d)| {
                debug_assert!(i < d);
                acc * d + i
            })
    }

    pub fn get(&self, index: &[usize]) -> i16 {
        self.data[self.offset(index)]
    }

    /// Contiguous slice over the trailing dims selected by `leading`.
    pub fn slice(&self, leading: &[usize]) -> &[i16] {
        let inner: usize = self.dims[leading.len()..].iter().product();
        let mut start = 0;
        for (&i, &d) in leading.iter().zip(&self.dims) {
            start = start * d + i;
        }
        start *= inner;
        &self.data[start..start + inner]
    }

    /// Zero-pads the two trailing (spatial) dims by `pad` on every side.
    pub fn pad_spatial(&self, pad: usize) -> Tensor {
        if pad == 0 || self.rank() < 2 {
            return self.clone();
        }
        let r = self.rank();
        let (h, w) = (self.dims[r - 2], self.dims[r - 1]);
        let (ph, pw) = (h + 2 * pad, w + 2 * pad);
        let planes = self.len() / (h * w);
        let mut data = vec![0i16; planes * ph * pw];
        for p in 0..planes {
            for y in 0..h {
                let src = &self.data[(p * h + y) * w..(p * h + y + 1) * w];
                let dst = (p * ph + y + pad) * pw + pad;
                data[dst..dst + w].copy_from_slice(src);
            }
        }
        let mut dims = self.dims.clone();
        dims[r - 2] = ph;
        dims[r - 1] = pw;
        Tensor {
            dims,
            roles: self.roles.clone(),
            data,
        }
    }

    /// Little-endian raw int16 bytes, the on-disk tensor format.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        self.data.iter().flat_map(|v| v.to_le_bytes()).collect()
    }

    pub fn from_le_bytes(dims: Vec<usize>, bytes: &[u8]) -> Result<Self, TensorError> {
        let expected: usize = dims.iter().product();
        if bytes.len() != expected * 2 {
            return Err(TensorError::ShapeMismatch {
                dims,
                expected,
                // an odd trailing byte still counts as a (partial) value
                actual: bytes.len().div_ceil(2),
            });
        }
        let data = bytes
            .chunks_exact(2)
            .map(|b| i16::from_le_bytes([b[0], b[1]]))
            .collect();
        Self::new(dims, data)
    }
}

/// Exactly `round(sparsity * N)` zeros placed uniformly under `seed`;
/// nonzeros uniform over `value_range` (inclusive) with 0 excluded.
pub fn synth_tensor(
    dims: &[usize],
    sparsity: f64,
    value_range: (i16, i16),
    seed: u64,
) -> Result<Tensor, TensorError> {
    if !(0.0..=1.0).contains(&sparsity) || sparsity.is_nan() {
        return Err(TensorError::BadSparsity(sparsity));
    }
    let (lo, hi) = value_range;
    if lo > hi || (lo == 0 && hi == 0) {
        return Err(TensorError::EmptyRange(lo, hi));
    }
    let n: usize = dims.iter().product();
    let zeros = ((sparsity * n as f64).round() as usize).min(n);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut is_zero = vec![false; n];
    for i in sample(&mut rng, n, zeros) {
        is_zero[i] = true;
    }
    // draw from the range with 0 removed: shift everything at or above 0 up by one
    let contains_zero = lo <= 0 && hi >= 0;
    let (lo32, hi32) = (lo as i32, hi as i32 - contains_zero as i32);
    let data = is_zero
        .into_iter()
        .map(|z| {
            if z {
                return 0;
            }
            let mut v = rng.gen_range(lo32..=hi32);
            if contains_zero && v >= 0 {
                v += 1;
            }
            v as i16
        })
        .collect();
    Tensor::new(dims.to_vec(), data)
}

/// Parses a 2-D block written row by row, rows separated by `;` and values
/// by `,` (`"1,0;0,2"`), into a `[rows, cols]` tensor.
pub fn parse_grid(text: &str) -> Result<Tensor, TensorError> {
    let bad = |reason: String| TensorError::BadGrid {
        text: text.to_string(),
        reason,
    };
    let rows: Vec<Vec<i16>> = text
        .split(';')
        .map(|row| {
            row.split(',')
                .map(|v| v.trim().parse::<i16>().map_err(|e| bad(format!("{:?} is not an int16 ({e})", v.trim()))))
                .collect()
        })
        .collect::<Result<_, _>>()?;
    let cols = rows[0].len();
    if rows.iter().any(|r| r.len() != cols) {
        return Err(bad("rows differ in length".into()));
    }
    Tensor::new(vec![rows.len(), cols], rows.concat())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grids() {
        assert_eq!(parse_grid("1,2;3,4").unwrap(), Tensor::new(vec![2, 2], vec![1, 2, 3, 4]).unwrap());
        assert_eq!(parse_grid(" 5 ").unwrap().dims(), &[1, 1]);
        assert!(parse_grid("1,2;3").is_err());
        assert!(parse_grid("1,x").is_err());
        assert!(parse_grid("40000").is_err());
        assert!(parse_grid("").is_err());
    }

    #[test]
    fn shape_and_extent_checks() {
        assert!(matches!(
            Tensor::new(vec![3, 3], vec![0; 8]),
            Err(TensorError::ShapeMismatch { expected: 9, actual: 8, .. })
        ));
        assert_eq!(Tensor::new(vec![2, 0], vec![]), Err(TensorError::ZeroExtent(1)));
        assert!(Tensor::new(vec![1; 5], vec![0]).is_err());
    }

    #[test]
    fn overflow_is_rejected() {
        assert_eq!(
            Tensor::from_i64(vec![2], &[1, 40_000]),
            Err(TensorError::ValueOverflow(40_000))
        );
        assert!(Tensor::from_i64(vec![2], &[-32768, 32767]).is_ok());
    }

    #[test]
    fn padding_border_is_zero_and_interior_preserved() {
        let t = Tensor::new(vec![2, 2, 3], (1..=12).collect()).unwrap();
        let p = t.pad_spatial(2);
        assert_eq!(p.dims(), &[2, 6, 7]);
        for c in 0..2 {
            for y in 0..6 {
                for x in 0..7 {
                    let v = p.get(&[c, y, x]);
                    let inside = (2..4).contains(&y) && (2..5).contains(&x);
                    if inside {
                        assert_eq!(v, t.get(&[c, y - 2, x - 2]));
                    } else {
                        assert_eq!(v, 0);
                    }
                }
            }
        }
    }

    #[test]
    fn synth_all_zero_at_full_sparsity() {
        let t = synth_tensor(&[2, 2], 1.0, (-5, 5), 1).unwrap();
        assert_eq!(t.nnz(), 0);
    }

    #[test]
    fn synth_exact_zero_count() {
        let t = synth_tensor(&[10, 10], 0.3, (-100, 100), 7).unwrap();
        assert_eq!(t.len() - t.nnz(), 30);
        for step in 0..=10 {
            let s = step as f64 / 10.0;
            let t = synth_tensor(&[7, 13], s, (1, 9), 99).unwrap();
            assert_eq!(t.len() - t.nnz(), (s * 91.0).round() as usize, "sparsity {s}");
        }
    }

    #[test]
    fn synth_is_deterministic() {
        let a = synth_tensor(&[4, 3, 5], 0.4, (-9, 9), 7).unwrap();
        let b = synth_tensor(&[4, 3, 5], 0.4, (-9, 9), 7).unwrap();
        let c = synth_tensor(&[4, 3, 5], 0.4, (-9, 9), 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn synth_range_excludes_zero() {
        assert_eq!(
            synth_tensor(&[2], 0.0, (0, 0), 1),
            Err(TensorError::EmptyRange(0, 0))
        );
        let t = synth_tensor(&[1000], 0.0, (-1, 1), 3).unwrap();
        assert!(t.data().iter().all(|&v| v == -1 || v == 1));
        let t = synth_tensor(&[1000], 0.0, (0, 2), 3).unwrap();
        assert!(t.data().iter().all(|&v| v == 1 || v == 2));
    }

    #[test]
    fn le_bytes_round_trip() {
        let t = synth_tensor(&[3, 4, 4], 0.5, (i16::MIN, i16::MAX), 11).unwrap();
        let back = Tensor::from_le_bytes(vec![3, 4, 4], &t.to_le_bytes()).unwrap();
        assert_eq!(t, back);
        assert!(Tensor::from_le_bytes(vec![3, 3], &[0u8; 16]).is_err());
    }
}
