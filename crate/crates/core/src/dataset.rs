//! On-disk dataset bundles and deterministic train/test splits.
//!
//! A bundle directory holds:
//!
//! * `manifest.json` - [`DatasetManifest`]
//! * `hidden_states.bin` - little-endian `f32`, `n_samples x (layers x hidden_dim)`,
//!   sample-major with one contiguous block per layer in manifest order
//! * `signals.jsonl` - one [`SampleSignals`] record per line
//! * `labels.f32` - optional, `n_samples` little-endian `f32` values in `[0, 1]`

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const HIDDEN_FILE: &str = "hidden_states.bin";
pub const SIGNALS_FILE: &str = "signals.jsonl";
pub const LABELS_FILE: &str = "labels.f32";

/// Number of answer options in multiple-choice tasks.
pub const N_CHOICES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskType {
    MultipleChoice,
    ShortForm,
}

impl TaskType {
    /// Arity of the data-agnostic feature vector for this task type.
    pub fn agnostic_arity(self) -> usize {
        match self {
            TaskType::MultipleChoice => 5,
            TaskType::ShortForm => 4,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TaskType::MultipleChoice => "multiple_choice",
            TaskType::ShortForm => "short_form",
        }
    }
}

impl fmt::Display for TaskType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for TaskType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "multiple_choice" | "mc" => Ok(TaskType::MultipleChoice),
            "short_form" | "sf" => Ok(TaskType::ShortForm),
            other => Err(Error::invalid(format!("unknown task type {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelKind {
    ExactMatch,
    RougeL,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub dataset_name: String,
    pub model_name: String,
    pub task_type: TaskType,
    pub n_samples: usize,
    pub hidden_dim: usize,
    pub layers: Vec<usize>,
    pub label_kind: LabelKind,
    /// Extra keys written by producers (prompt template, extraction settings).
    #[serde(flatten)]
    pub extra: BTreeMap<String, serde_json::Value>,
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::Version {
                found: self.format_version.to_string(),
                expected: FORMAT_VERSION.to_string(),
            });
        }
        if self.n_samples == 0 {
            return Err(Error::Validation("manifest: n_samples must be > 0".into()));
        }
        if self.hidden_dim == 0 {
            return Err(Error::Validation("manifest: hidden_dim must be > 0".into()));
        }
        if self.layers.is_empty() {
            return Err(Error::Validation(
                "manifest: layers must be non-empty".into(),
            ));
        }
        if self.layers.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Validation(format!(
                "manifest: layers must be strictly ascending, got {:?}",
                self.layers
            )));
        }
        Ok(())
    }

    /// Width of one hidden-state row (all stored layers).
    pub fn row_width(&self) -> usize {
        self.layers.len() * self.hidden_dim
    }

    pub fn layer_position(&self, layer: usize) -> Result<usize> {
        self.layers
            .iter()
            .position(|&l| l == layer)
            .ok_or_else(|| Error::LayerNotStored {
                layer,
                available: self.layers.clone(),
            })
    }
}

/// Raw output-distribution signals and answers for one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSignals {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub choice_logits: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_logprobs: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_entropies: Option<Vec<f64>>,
    pub answer: String,
    pub gold: Vec<String>,
}

impl SampleSignals {
    pub fn validate(&self, task: TaskType) -> Result<()> {
        let fail = |msg: String| Err(Error::Validation(format!("sample {:?}: {msg}", self.id)));
        match task {
            TaskType::MultipleChoice => {
                if self.token_logprobs.is_some() || self.token_entropies.is_some() {
                    return fail("multiple_choice sample carries token arrays".into());
                }
                match &self.choice_logits {
                    Some(z) if z.len() == N_CHOICES => {
                        if z.iter().any(|v| !v.is_finite()) {
                            return fail("non-finite choice logit".into());
                        }
                    }
                    Some(z) => return fail(format!("expected 4 choice logits, got {}", z.len())),
                    None => return fail("missing choice_logits".into()),
                }
            }
            TaskType::ShortForm => {
                if self.choice_logits.is_some() {
                    return fail("short_form sample carries choice_logits".into());
                }
                let (Some(lp), Some(h)) = (&self.token_logprobs, &self.token_entropies) else {
                    return fail("missing token_logprobs or token_entropies".into());
                };
                if lp.len() != h.len() {
                    return fail(format!(
                        "token_logprobs has {} entries, token_entropies has {}",
                        lp.len(),
                        h.len()
                    ));
                }
                if lp.is_empty() {
                    return fail("empty token arrays".into());
                }
                if lp.iter().any(|&v| !v.is_finite() || v > 0.0) {
                    return fail("token_logprobs must be finite and <= 0".into());
                }
                if h.iter().any(|&v| !v.is_finite() || v < 0.0) {
                    return fail("token_entropies must be finite and >= 0".into());
                }
            }
        }
        Ok(())
    }
}

/// One dataset: manifest, hidden states, raw signals and optional labels.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetBundle {
    pub manifest: DatasetManifest,
    hidden: Vec<f32>,
    pub signals: Vec<SampleSignals>,
    pub labels: Option<Vec<f64>>,
}

impl DatasetBundle {
    /// Assembles and validates a bundle from in-memory parts.
    pub fn new(
        manifest: DatasetManifest,
        hidden: Vec<f32>,
        signals: Vec<SampleSignals>,
        labels: Option<Vec<f64>>,
    ) -> Result<Self> {
        let bundle = Self {
            manifest,
            hidden,
            signals,
            labels,
        };
        bundle.validate()?;
        Ok(bundle)
    }

    pub fn validate(&self) -> Result<()> {
        let m = &self.manifest;
        m.validate()?;
        let width = m.row_width();
        if self.hidden.len() != m.n_samples * width {
            return Err(Error::Corrupt {
                what: "hidden states".into(),
                detail: format!(
                    "{} values, expected {} x {} = {}",
                    self.hidden.len(),
                    m.n_samples,
                    width,
                    m.n_samples * width
                ),
            });
        }
        if let Some(pos) = self.hidden.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "non-finite hidden value at sample {} (column {})",
                pos / width,
                pos % width
            )));
        }
        if self.signals.len() != m.n_samples {
            return Err(Error::Validation(format!(
                "{} signal records, manifest says n_samples = {}",
                self.signals.len(),
                m.n_samples
            )));
        }
        for s in &self.signals {
            s.validate(m.task_type)?;
        }
        if let Some(labels) = &self.labels {
            if labels.len() != m.n_samples {
                return Err(Error::Validation(format!(
                    "{} labels for {} samples",
                    labels.len(),
                    m.n_samples
                )));
            }
            if let Some(i) = labels
                .iter()
                .position(|v| !v.is_finite() || !(0.0..=1.0).contains(v))
            {
                return Err(Error::Validation(format!(
                    "label of sample {i} outside [0, 1]: {}",
                    labels[i]
                )));
            }
        }
        Ok(())
    }

    pub fn n_samples(&self) -> usize {
        self.manifest.n_samples
    }

    pub fn task_type(&self) -> TaskType {
        self.manifest.task_type
    }

    pub fn name(&self) -> &str {
        &self.manifest.dataset_name
    }

    /// All stored hidden values, sample-major.
    pub fn hidden(&self) -> &[f32] {
        &self.hidden
    }

    pub fn hidden_row(&self, i: usize) -> &[f32] {
        let w = self.manifest.row_width();
        &self.hidden[i * w..(i + 1) * w]
    }

    /// The `n x hidden_dim` block for one stored layer.
    pub fn slice_layer(&self, layer: usize) -> Result<Matrix> {
        self.slice_layers(&[layer])
    }

    /// Blocks for several stored layers, concatenated in the given order.
    pub fn slice_layers(&self, layers: &[usize]) -> Result<Matrix> {
        let rows: Vec<usize> = (0..self.n_samples()).collect();
        self.slice_layers_rows(layers, &rows)
    }

    /// Like [`slice_layers`](Self::slice_layers) restricted to `rows`.
    pub fn slice_layers_rows(&self, layers: &[usize], rows: &[usize]) -> Result<Matrix> {
        let dim = self.manifest.hidden_dim;
        let positions = layers
            .iter()
            .map(|&l| self.manifest.layer_position(l))
            .collect::<Result<Vec<_>>>()?;
        let mut data = Vec::with_capacity(rows.len() * positions.len() * dim);
        for &r in rows {
            let row = self.hidden_row(r);
            for &p in &positions {
                data.extend(row[p * dim..(p + 1) * dim].iter().map(|&v| f64::from(v)));
            }
        }
        Matrix::from_vec(rows.len(), positions.len() * dim, data)
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn decode_f32s(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect()
}

fn encode_f32s(values: impl IntoIterator<Item = f32>) -> Vec<u8> {
    values.into_iter().flat_map(f32::to_le_bytes).collect()
}

/// Loads and fully validates a bundle directory.
pub fn load_bundle(dir: impl AsRef<Path>) -> Result<DatasetBundle> {
    let dir = dir.as_ref();

    let manifest_path = dir.join(MANIFEST_FILE);
    let manifest_bytes = read_file(&manifest_path)?;
    let manifest: DatasetManifest =
        serde_json::from_slice(&manifest_bytes).map_err(|e| Error::Parse {
            what: manifest_path.display().to_string(),
            detail: e.to_string(),
        })?;
    manifest.validate()?;

    let hidden_path = dir.join(HIDDEN_FILE);
    let hidden_bytes = read_file(&hidden_path)?;
    let expected = manifest.n_samples * manifest.row_width() * 4;
    if hidden_bytes.len() != expected {
        return Err(Error::Corrupt {
            what: hidden_path.display().to_string(),
            detail: format!(
                "{} bytes, expected {} samples x {} layers x {} dims x 4 = {expected}",
                hidden_bytes.len(),
                manifest.n_samples,
                manifest.layers.len(),
                manifest.hidden_dim
            ),
        });
    }
    let hidden = decode_f32s(&hidden_bytes);

    let signals_path = dir.join(SIGNALS_FILE);
    let file = fs::File::open(&signals_path).map_err(|e| Error::io(&signals_path, e))?;
    let mut signals = Vec::with_capacity(manifest.n_samples);
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(&signals_path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: SampleSignals = serde_json::from_str(&line).map_err(|e| Error::Parse {
            what: format!("{} line {}", signals_path.display(), lineno + 1),
            detail: e.to_string(),
        })?;
        signals.push(rec);
    }

    let labels_path = dir.join(LABELS_FILE);
    let labels = if labels_path.exists() {
        let bytes = read_file(&labels_path)?;
        if bytes.len() != manifest.n_samples * 4 {
            return Err(Error::Corrupt {
                what: labels_path.display().to_string(),
                detail: format!(
                    "{} bytes, expected {} x 4 = {}",
                    bytes.len(),
                    manifest.n_samples,
                    manifest.n_samples * 4
                ),
            });
        }
        Some(decode_f32s(&bytes).into_iter().map(f64::from).collect())
    } else {
        None
    };

    DatasetBundle::new(manifest, hidden, signals, labels)
}

/// Writes a bundle in the directory format read by [`load_bundle`].
pub fn write_bundle(bundle: &DatasetBundle, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let manifest_path = dir.join(MANIFEST_FILE);
    let mut json = serde_json::to_string_pretty(&bundle.manifest).map_err(|e| Error::Parse {
        what: "manifest".into(),
        detail: e.to_string(),
    })?;
    json.push('\n');
    fs::write(&manifest_path, json).map_err(|e| Error::io(&manifest_path, e))?;

    let hidden_path = dir.join(HIDDEN_FILE);
    fs::write(&hidden_path, encode_f32s(bundle.hidden.iter().copied()))
        .map_err(|e| Error::io(&hidden_path, e))?;

    let signals_path = dir.join(SIGNALS_FILE);
    let file = fs::File::create(&signals_path).map_err(|e| Error::io(&signals_path, e))?;
    let mut w = BufWriter::new(file);
    for s in &bundle.signals {
        let line = serde_json::to_string(s).map_err(|e| Error::Parse {
            what: "signals".into(),
            detail: e.to_string(),
        })?;
        writeln!(w, "{line}").map_err(|e| Error::io(&signals_path, e))?;
    }
    w.flush().map_err(|e| Error::io(&signals_path, e))?;

    let labels_path = dir.join(LABELS_FILE);
    if let Some(labels) = &bundle.labels {
        fs::write(&labels_path, encode_f32s(labels.iter().map(|&v| v as f32)))
            .map_err(|e| Error::io(&labels_path, e))?;
    }
    Ok(())
}

/// Git-style content hash (`sha256("blob <len>\0" + bytes)`) over the bundle's
/// canonical file encodings, in file-name order.
pub fn content_digest(bundle: &DatasetBundle) -> Result<String> {
    use sha2::{Digest, Sha256};

    let mut files: Vec<(&str, Vec<u8>)> = Vec::new();
    let mut manifest = serde_json::to_vec_pretty(&bundle.manifest).map_err(|e| Error::Parse {
        what: "manifest".into(),
        detail: e.to_string(),
    })?;
    manifest.push(b'\n');
    files.push((MANIFEST_FILE, manifest));
    files.push((HIDDEN_FILE, encode_f32s(bundle.hidden.iter().copied())));
    let mut signals = Vec::new();
    for s in &bundle.signals {
        signals.extend(serde_json::to_vec(s).map_err(|e| Error::Parse {
            what: "signals".into(),
            detail: e.to_string(),
        })?);
        signals.push(b'\n');
    }
    files.push((SIGNALS_FILE, signals));
    if let Some(labels) = &bundle.labels {
        files.push((LABELS_FILE, encode_f32s(labels.iter().map(|&v| v as f32))));
    }
    files.sort_by_key(|(name, _)| *name);

    let mut hasher = Sha256::new();
    for (name, bytes) in &files {
        let mut blob = Sha256::new();
        blob.update(format!("blob {}\0", bytes.len()).as_bytes());
        blob.update(bytes);
        hasher.update(name.as_bytes());
        hasher.update([0u8]);
        hasher.update(blob.finalize());
    }
    Ok(hex::encode(hasher.finalize()))
}

/// Disjoint train/test index lists, both sorted ascending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub train_ids: Vec<usize>,
    pub test_ids: Vec<usize>,
    pub seed: u64,
    pub train_fraction: f64,
}

/// Seeded uniform shuffle; the train part gets `round_half_up(fraction * n)` ids,
/// clamped so that both parts are non-empty.
pub fn make_split(n_samples: usize, seed: u64, train_fraction: f64) -> Result<SplitAssignment> {
    if n_samples < 2 {
        return Err(Error::invalid(format!(
            "need at least 2 samples to split, got {n_samples}"
        )));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "train_fraction must be in (0, 1), got {train_fraction}"
        )));
    }
    let n_train = ((train_fraction * n_samples as f64) + 0.5).floor() as usize;
    let n_train = n_train.clamp(1, n_samples - 1);

    let mut perm: Vec<usize> = (0..n_samples).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut train_ids = perm[..n_train].to_vec();
    let mut test_ids = perm[n_train..].to_vec();
    train_ids.sort_unstable();
    test_ids.sort_unstable();
    Ok(SplitAssignment {
        train_ids,
        test_ids,
        seed,
        train_fraction,
    })
}
