use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use crate::error::{OetrError, Result};
use crate::numerics::container::{read_tensor, write_tensor};
use crate::numerics::{Real, Tensor};

/// Handle to a parameter inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub(crate) usize);

/// How a parameter is initialized.
#[derive(Debug, Clone, Copy)]
pub(crate) enum Init {
    /// Uniform in `±sqrt(6 / (fan_in + fan_out))`.
    Glorot { fan_in: usize, fan_out: usize },
    /// Uniform in `±sqrt(6 / fan_in)`, for layers followed by ReLU.
    He { fan_in: usize },
    Uniform(f64),
    Const(f64),
}

/// Named, ordered model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T: Real> {
    names: Vec<String>,
    values: Vec<Tensor<T>>,
}

impl<T: Real> Default for ParamStore<T> {
    fn default() -> Self {
        Self {
            names: Vec::new(),
            values: Vec::new(),
        }
    }
}

impl<T: Real> ParamStore<T> {
    pub(crate) fn add(&mut self, rng: &mut ChaCha8Rng, name: String, shape: &[usize], init: Init) -> ParamId {
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        let n: usize = shape.iter().product();
        let mut uniform = |limit: f64| -> Vec<T> {
            (0..n).map(|_| T::lit(rng.random_range(-limit..limit))).collect()
        };
        let data = match init {
            Init::Glorot { fan_in, fan_out } => uniform((6.0 / (fan_in + fan_out) as f64).sqrt()),
            Init::He { fan_in } => uniform((6.0 / fan_in as f64).sqrt()),
            Init::Uniform(limit) => uniform(limit),
            Init::Const(c) => vec![T::lit(c); n],
        };
        self.names.push(name);
        self.values.push(Tensor::new(shape.to_vec(), data).expect("parameter shape"));
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Tensor<T>] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.values
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.values[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor<T>> {
        self.names.iter().position(|n| n == name).map(|i| &self.values[i])
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.names.iter().position(|n| n == name).map(|i| &mut self.values[i])
    }

    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            values: self.values.iter().map(Tensor::cast).collect(),
        }
    }
}

pub(crate) fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Bumped whenever the parameter layout produced from a config changes.
pub const MODEL_VERSION: u32 = 1;
pub const CHECKPOINT_FORMAT: u32 = 1;
const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub file: String,
}

/// `manifest.json` of a checkpoint directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub model_version: u32,
    pub config: ModelConfig,
    pub params: Vec<ManifestEntry>,
    #[serde(default)]
    pub metadata: BTreeMap<String, serde_json::Value>,
}

fn file_name(index: usize, name: &str) -> String {
    let clean: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '_' { c } else { '-' })
        .collect();
    format!("{index:04}-{clean}.oetr")
}

/// Writes `params` as one tensor file per parameter plus a manifest.
pub fn save_checkpoint<T: Real>(
    dir: impl AsRef<Path>,
    config: &ModelConfig,
    params: &ParamStore<T>,
    metadata: BTreeMap<String, serde_json::Value>,
) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(params.len());
    for (i, (name, value)) in params.names.iter().zip(&params.values).enumerate() {
        let file = file_name(i, name);
        write_tensor(dir.join(&file), value)?;
        entries.push(ManifestEntry {
            name: name.clone(),
            shape: value.shape().to_vec(),
            file,
        });
    }
    let manifest = CheckpointManifest {
        format_version: CHECKPOINT_FORMAT,
        model_version: MODEL_VERSION,
        config: config.clone(),
        params: entries,
        metadata,
    };
    std::fs::write(dir.join(MANIFEST), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

pub fn read_manifest(dir: impl AsRef<Path>) -> Result<CheckpointManifest> {
    let path = dir.as_ref().join(MANIFEST);
    let text = std::fs::read_to_string(&path)
        .map_err(|e| OetrError::Load(format!("{}: {e}", path.display())))?;
    let m: CheckpointManifest =
        serde_json::from_str(&text).map_err(|e| OetrError::Load(format!("{}: {e}", path.display())))?;
    if m.format_version != CHECKPOINT_FORMAT || m.model_version != MODEL_VERSION {
        return Err(OetrError::Load(format!(
            "checkpoint format {} / model {} but this build reads format {CHECKPOINT_FORMAT} / model {MODEL_VERSION}",
            m.format_version, m.model_version
        )));
    }
    Ok(m)
}

/// Fills `params` (laid out for `manifest.config`) from the checkpoint files.
/// Names and shapes must match exactly.
pub(crate) fn load_into<T: Real>(
    dir: &Path,
    manifest: &CheckpointManifest,
    params: &mut ParamStore<T>,
) -> Result<()> {
    if manifest.params.len() != params.len() {
        return Err(OetrError::Load(format!(
            "checkpoint has {} parameters, config expects {}",
            manifest.params.len(),
            params.len()
        )));
    }
    for (i, entry) in manifest.params.iter().enumerate() {
        let expected = &params.names[i];
        if &entry.name != expected || entry.shape != params.values[i].shape() {
            return Err(OetrError::Load(format!(
                "parameter {i}: checkpoint has {} {:?}, config expects {expected} {:?}",
                entry.name,
                entry.shape,
                params.values[i].shape()
            )));
        }
        let t = read_tensor(dir.join(&entry.file))
            .map_err(|e| OetrError::Load(format!("{}: {e}", entry.file)))?;
        if t.shape() != entry.shape.as_slice() {
            return Err(OetrError::Load(format!("{}: shape {:?} on disk", entry.file, t.shape())));
        }
        params.values[i] = t.into_real();
    }
    Ok(())
}
