//! Layer/network descriptors and model loading.
//!
//! A network is a JSON descriptor plus one raw little-endian int16 file per
//! tensor. IFMs are `[C_i, H_i, W_i]`, CONV weights `[C_o, C_i, H_k, W_k]`,
//! FC weights `[C_o, C_i]` (row per output, one column per input).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{synth_tensor, Tensor, TensorError};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("missing file {0}")]
    MissingFile(PathBuf),
    #[error("{file}: shape mismatch ({source})")]
    ShapeMismatch {
        file: String,
        #[source]
        source: TensorError,
    },
    #[error("layer {layer}: {reason}")]
    InvalidLayer { layer: usize, reason: String },
    #[error("malformed descriptor: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LayerKind {
    #[serde(rename = "CONV", alias = "conv")]
    Conv,
    #[serde(rename = "FC", alias = "fc")]
    Fc,
}

/// Shape of one layer. Output extents are derived, never stored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerConfig {
    pub kind: LayerKind,
    #[serde(rename = "C_i")]
    pub c_in: usize,
    #[serde(rename = "C_o")]
    pub c_out: usize,
    #[serde(rename = "H_i", default = "one")]
    pub h_in: usize,
    #[serde(rename = "W_i", default = "one")]
    pub w_in: usize,
    #[serde(rename = "H_k", default = "one")]
    pub h_k: usize,
    #[serde(rename = "W_k", default = "one")]
    pub w_k: usize,
    #[serde(default = "one")]
    pub stride: usize,
    #[serde(default)]
    pub pad: usize,
}

fn one() -> usize {
    1
}

impl LayerConfig {
    #[allow(clippy::too_many_arguments)]
    pub fn conv(
        c_in: usize,
        c_out: usize,
        h_in: usize,
        w_in: usize,
        h_k: usize,
        w_k: usize,
        stride: usize,
        pad: usize,
    ) -> Self {
        LayerConfig {
            kind: LayerKind::Conv,
            c_in,
            c_out,
            h_in,
            w_in,
            h_k,
            w_k,
            stride,
            pad,
        }
    }

    pub fn fc(c_in: usize, c_out: usize) -> Self {
        LayerConfig {
            kind: LayerKind::Fc,
            c_in,
            c_out,
            h_in: 1,
            w_in: 1,
            h_k: 1,
            w_k: 1,
            stride: 1,
            pad: 0,
        }
    }

    pub fn padded_h(&self) -> usize {
        self.h_in + 2 * self.pad
    }

    pub fn padded_w(&self) -> usize {
        self.w_in + 2 * self.pad
    }

    /// `floor((H_i + 2 pad - H_k) / stride) + 1`, or 0 if the kernel does not fit.
    pub fn h_out(&self) -> usize {
        out_extent(self.padded_h(), self.h_k, self.stride)
    }

    pub fn w_out(&self) -> usize {
        out_extent(self.padded_w(), self.w_k, self.stride)
    }

    pub fn kernel_len(&self) -> usize {
        self.h_k * self.w_k
    }

    pub fn ifm_dims(&self) -> Vec<usize> {
        vec![self.c_in, self.h_in, self.w_in]
    }

    pub fn weight_dims(&self) -> Vec<usize> {
        match self.kind {
            LayerKind::Conv => vec![self.c_out, self.c_in, self.h_k, self.w_k],
            LayerKind::Fc => vec![self.c_out, self.c_in],
        }
    }

    pub fn ofm_dims(&self) -> Vec<usize> {
        vec![self.c_out, self.h_out(), self.w_out()]
    }

    /// Dense MAC count of the layer (`C_o C_i H_o W_o H_k W_k`).
    pub fn dense_macs(&self) -> u64 {
        (self.c_out * self.c_in * self.h_out() * self.w_out() * self.kernel_len()) as u64
    }

    pub fn validate(&self) -> Result<(), String> {
        let extents = [
            ("C_i", self.c_in),
            ("C_o", self.c_out),
            ("H_i", self.h_in),
            ("W_i", self.w_in),
            ("H_k", self.h_k),
            ("W_k", self.w_k),
            ("stride", self.stride),
        ];
        if let Some((name, _)) = extents.iter().find(|(_, v)| *v == 0) {
            return Err(format!("{name} must be >= 1"));
        }
        match self.kind {
            LayerKind::Fc => {
                if (self.h_in, self.w_in, self.h_k, self.w_k, self.stride, self.pad)
                    != (1, 1, 1, 1, 1, 0)
                {
                    return Err("FC layers require H_i=W_i=H_k=W_k=stride=1 and pad=0".into());
                }
            }
            LayerKind::Conv => {
                if self.h_out() == 0 || self.w_out() == 0 {
                    return Err(format!(
                        "kernel {}x{} does not fit padded input {}x{}",
                        self.h_k,
                        self.w_k,
                        self.padded_h(),
                        self.padded_w()
                    ));
                }
            }
        }
        Ok(())
    }
}

pub fn out_extent(padded: usize, kernel: usize, stride: usize) -> usize {
    if kernel > padded || stride == 0 {
        0
    } else {
        (padded - kernel) / stride + 1
    }
}

/// One descriptor row: the layer shape plus where its tensors live.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(flatten)]
    pub config: LayerConfig,
    /// Absent on later layers means "take the previous layer's post-processed OFM".
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ifm_file: Option<String>,
    /// Absent means "synthesize dense weights under the run seed".
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight_file: Option<String>,
    /// Max-pool window (= stride) applied after ReLU when chaining to the next layer.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pool: Option<usize>,
    /// Sparsity of a synthesized IFM (used only without `ifm_file`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ifm_sparsity: Option<f64>,
    /// Sparsity of synthesized weights (used only without `weight_file`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight_sparsity: Option<f64>,
}

impl LayerEntry {
    pub fn new(config: LayerConfig) -> Self {
        LayerEntry {
            name: None,
            config,
            ifm_file: None,
            weight_file: None,
            pool: None,
            ifm_sparsity: None,
            weight_sparsity: None,
        }
    }

    pub fn display_name(&self, index: usize) -> String {
        self.name.clone().unwrap_or_else(|| format!("layer{index}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkDescriptor {
    pub name: String,
    pub layers: Vec<LayerEntry>,
}

impl NetworkDescriptor {
    pub fn from_json(text: &str) -> Result<Self, IngestError> {
        Ok(serde_json::from_str(text)?)
    }
}

/// The layer's input, both as given and with padding materialized.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerIfm {
    pub source: Tensor,
    pub padded: Tensor,
}

impl LayerIfm {
    pub fn new(source: Tensor, pad: usize) -> Self {
        let padded = source.pad_spatial(pad);
        LayerIfm { source, padded }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedLayer {
    pub entry: LayerEntry,
    /// `None` when the IFM is produced by the previous layer at run time.
    pub ifm: Option<LayerIfm>,
    pub weights: Tensor,
}

impl LoadedLayer {
    pub fn config(&self) -> &LayerConfig {
        &self.entry.config
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub name: String,
    pub layers: Vec<LoadedLayer>,
    /// Non-fatal validation findings (e.g. channel counts that do not chain).
    pub warnings: Vec<String>,
}

/// Controls synthesis of tensors a descriptor does not reference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthDefaults {
    pub seed: u64,
    pub ifm_sparsity: f64,
    pub ifm_range: (i16, i16),
    pub weight_range: (i16, i16),
}

impl Default for SynthDefaults {
    fn default() -> Self {
        SynthDefaults {
            seed: 1,
            ifm_sparsity: 0.5,
            // post-ReLU activations are nonnegative
            ifm_range: (1, 127),
            weight_range: (-127, 127),
        }
    }
}

/// Per-layer, per-tensor seed derived from the run seed.
pub fn tensor_seed(seed: u64, layer: usize, salt: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add((layer as u64) << 8)
        .wrapping_add(salt)
}

/// Loads a descriptor and every tensor it references; missing tensors are
/// synthesized from `synth`.
pub fn load_network(descriptor_path: &Path, synth: &SynthDefaults) -> Result<Network, IngestError> {
    if !descriptor_path.exists() {
        return Err(IngestError::MissingFile(descriptor_path.to_path_buf()));
    }
    let text = fs::read_to_string(descriptor_path)?;
    let descriptor = NetworkDescriptor::from_json(&text)?;
    let base = descriptor_path.parent().unwrap_or(Path::new("."));
    build_network(descriptor, Some(base), synth)
}

/// Builds a network from an in-memory descriptor. File references are
/// resolved against `base`; without a base, every tensor is synthesized.
pub fn build_network(
    descriptor: NetworkDescriptor,
    base: Option<&Path>,
    synth: &SynthDefaults,
) -> Result<Network, IngestError> {
    let mut layers = Vec::with_capacity(descriptor.layers.len());
    let mut warnings = Vec::new();
    let mut prev: Option<&LayerEntry> = None;

    for (index, entry) in descriptor.layers.iter().enumerate() {
        let cfg = &entry.config;
        cfg.validate()
            .map_err(|reason| IngestError::InvalidLayer { layer: index, reason })?;
        if let Some(p) = prev {
            if p.config.kind == LayerKind::Conv && cfg.kind == LayerKind::Conv && cfg.c_in != p.config.c_out {
                warnings.push(format!(
                    "layer {index}: C_i={} does not match previous C_o={}",
                    cfg.c_in, p.config.c_out
                ));
            }
        }

        let weights = match (&entry.weight_file, base) {
            (Some(file), Some(base)) => read_tensor(&base.join(file), cfg.weight_dims())?,
            _ => synth_tensor(
                &cfg.weight_dims(),
                entry.weight_sparsity.unwrap_or(0.0),
                synth.weight_range,
                tensor_seed(synth.seed, index, 1),
            )?,
        };

        let ifm = match (&entry.ifm_file, base) {
            (Some(file), Some(base)) => Some(read_tensor(&base.join(file), cfg.ifm_dims())?),
            _ if index == 0 || entry.ifm_sparsity.is_some() => Some(synth_tensor(
                &cfg.ifm_dims(),
                entry.ifm_sparsity.unwrap_or(synth.ifm_sparsity),
                synth.ifm_range,
                tensor_seed(synth.seed, index, 2),
            )?),
            _ => None,
        }
        .map(|t| LayerIfm::new(t, cfg.pad));

        layers.push(LoadedLayer {
            entry: entry.clone(),
            ifm,
            weights,
        });
        prev = Some(entry);
    }

    Ok(Network {
        name: descriptor.name,
        layers,
        warnings,
    })
}

pub fn read_tensor(path: &Path, dims: Vec<usize>) -> Result<Tensor, IngestError> {
    if !path.exists() {
        return Err(IngestError::MissingFile(path.to_path_buf()));
    }
    let bytes = fs::read(path)?;
    Tensor::from_le_bytes(dims, &bytes).map_err(|source| IngestError::ShapeMismatch {
        file: path.display().to_string(),
        source,
    })
}

pub fn write_tensor(path: &Path, tensor: &Tensor) -> Result<(), IngestError> {
    fs::write(path, tensor.to_le_bytes())?;
    Ok(())
}

/// Writes every materialized tensor (unpadded) next to a fresh descriptor.
/// Returns the descriptor path.
pub fn save_network(net: &Network, dir: &Path) -> Result<PathBuf, IngestError> {
    fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(net.layers.len());
    for (i, layer) in net.layers.iter().enumerate() {
        let mut entry = layer.entry.clone();
        let wfile = format!("layer{i}_weights.bin");
        write_tensor(&dir.join(&wfile), &layer.weights)?;
        entry.weight_file = Some(wfile);
        entry.weight_sparsity = None;
        if let Some(ifm) = &layer.ifm {
            let ifile = format!("layer{i}_ifm.bin");
            write_tensor(&dir.join(&ifile), &ifm.source)?;
            entry.ifm_file = Some(ifile);
            entry.ifm_sparsity = None;
        }
        entries.push(entry);
    }
    let descriptor = NetworkDescriptor {
        name: net.name.clone(),
        layers: entries,
    };
    let path = dir.join("network.json");
    fs::write(&path, serde_json::to_string_pretty(&descriptor)?)?;
    Ok(path)
}
