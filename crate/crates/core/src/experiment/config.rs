//! TOML experiment configuration with task-dependent defaults and dotted-path
//! overrides.

use std::path::{Path, PathBuf};

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synth::{EdgeWeights, TaskKind};
use crate::train::{LossKind, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphGenerator {
    Er,
    Sf,
    File,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphConfig {
    pub generator: GraphGenerator,
    #[serde(default = "default_n")]
    pub n: usize,
    /// Edge probability for Erdős–Rényi graphs.
    #[serde(default = "default_p")]
    pub p: f64,
    /// Links per new node for scale-free graphs.
    #[serde(default = "default_m")]
    pub m: usize,
    /// Seed set size for scale-free graphs.
    #[serde(default = "default_m")]
    pub m0: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    /// Weights for generated graphs; file graphs keep their own.
    #[serde(default = "default_weights")]
    pub weights: WeightKind,
    #[serde(default = "default_weight_low")]
    pub weight_low: f64,
    #[serde(default = "default_weight_high")]
    pub weight_high: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightKind {
    Unit,
    SignedUniform,
}

fn default_weights() -> WeightKind {
    WeightKind::SignedUniform
}
fn default_weight_low() -> f64 {
    0.2
}
fn default_weight_high() -> f64 {
    0.7
}

impl GraphConfig {
    pub fn edge_weights(&self) -> EdgeWeights {
        match self.weights {
            WeightKind::Unit => EdgeWeights::Unit,
            WeightKind::SignedUniform => EdgeWeights::SignedUniform {
                low: self.weight_low,
                high: self.weight_high,
            },
        }
    }
}

fn default_n() -> usize {
    100
}
fn default_p() -> f64 {
    0.2
}
fn default_m() -> usize {
    11
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Dcn,
    DcnT,
    Pdcn,
    FbGcnn,
    Gcn,
    Mlp,
    Ls,
}

impl ModelKind {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "dcn" => Self::Dcn,
            "dcn_t" => Self::DcnT,
            "pdcn" => Self::Pdcn,
            "fb_gcnn" => Self::FbGcnn,
            "gcn" => Self::Gcn,
            "mlp" => Self::Mlp,
            "ls" => Self::Ls,
            other => return Err(Error::Parse(format!("unknown model kind `{other}`"))),
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Dcn => "dcn",
            Self::DcnT => "dcn_t",
            Self::Pdcn => "pdcn",
            Self::FbGcnn => "fb_gcnn",
            Self::Gcn => "gcn",
            Self::Mlp => "mlp",
            Self::Ls => "ls",
        }
    }

    /// Whether the model consumes causal GSOs.
    pub fn uses_gsos(self) -> bool {
        matches!(self, Self::Dcn | Self::DcnT | Self::Pdcn | Self::Ls)
    }
}

/// `"all"` or a number of uniformly sampled anchors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnchorSpec {
    All,
    Count(usize),
}

impl Serialize for AnchorSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            AnchorSpec::All => s.serialize_str("all"),
            AnchorSpec::Count(c) => s.serialize_u64(*c as u64),
        }
    }
}

impl<'de> Deserialize<'de> for AnchorSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Count(u64),
            Word(String),
        }
        match Raw::deserialize(d)? {
            Raw::Count(0) => Err(serde::de::Error::custom("anchor count must be positive")),
            Raw::Count(c) => Ok(AnchorSpec::Count(c as usize)),
            Raw::Word(w) if w.eq_ignore_ascii_case("all") => Ok(AnchorSpec::All),
            Raw::Word(w) => Err(serde::de::Error::custom(format!(
                "anchors must be \"all\" or a count, got `{w}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    #[serde(default = "default_anchors")]
    pub anchors: AnchorSpec,
    #[serde(default = "default_layers")]
    pub layers: usize,
    #[serde(default)]
    pub hidden: Option<usize>,
    #[serde(default = "default_order")]
    pub filter_order: usize,
}

fn default_anchors() -> AnchorSpec {
    AnchorSpec::All
}
fn default_layers() -> usize {
    2
}
fn default_order() -> usize {
    2
}

impl ModelConfig {
    /// Hidden width: 128 for the PDCN shared MLP, 32 otherwise.
    pub fn hidden_width(&self) -> usize {
        self.hidden.unwrap_or(match self.kind {
            ModelKind::Pdcn => 128,
            _ => 32,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Number of generated samples `M`.
    pub samples: usize,
    pub noise: f64,
    /// Inputs are nonzero on this many leading nodes of the topological order.
    pub sparse_support: usize,
    /// Candidate sources for source identification.
    pub candidates: usize,
    /// Operators in the generating filter.
    pub filter_anchors: usize,
    /// Reuse the generating filter's anchors as the model's anchor set.
    pub tie_anchors: bool,
    /// Nodes masked for synthetic imputation when no mask file is given.
    pub masked: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub signals_file: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mask_file: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            samples: 2000,
            noise: 0.05,
            sparse_support: 25,
            candidates: 25,
            filter_anchors: 25,
            tie_anchors: false,
            masked: 10,
            signals_file: None,
            mask_file: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainSection {
    learning_rate: Option<f64>,
    batch_size: Option<usize>,
    epochs: Option<usize>,
    weight_decay: Option<f64>,
    loss: Option<LossKind>,
    /// Training-stream seed; defaults to the run seed.
    seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    task: TaskKind,
    graph: GraphConfig,
    model: ModelConfig,
    #[serde(default)]
    data: DataConfig,
    #[serde(default)]
    train: TrainSection,
    #[serde(default = "default_trials")]
    trials: usize,
    #[serde(default)]
    seed: u64,
    #[serde(default = "default_output")]
    output_dir: PathBuf,
}

fn default_trials() -> usize {
    1
}
fn default_output() -> PathBuf {
    PathBuf::from("results")
}

/// Fully defaulted and validated experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub task: TaskKind,
    pub graph: GraphConfig,
    pub model: ModelConfig,
    pub data: DataConfig,
    pub train: TrainConfig,
    pub trials: usize,
    pub seed: u64,
    pub output_dir: PathBuf,
}

fn map_de_error(e: toml::de::Error) -> Error {
    let msg = e.message().to_string();
    if let Some(rest) = msg.strip_prefix("unknown field `") {
        let key = rest.split('`').next().unwrap_or(rest);
        return Error::UnknownKey(key.to_string());
    }
    Error::Parse(e.to_string())
}

/// Sets `a.b.c = value` inside a TOML table, creating tables on the way.
/// The value is parsed as a TOML literal, falling back to a plain string.
pub fn apply_override(root: &mut toml::Table, path: &str, raw: &str) -> Result<()> {
    let value = parse_literal(raw);
    let mut keys: Vec<&str> = path.split('.').collect();
    let last = keys
        .pop()
        .filter(|k| !k.is_empty())
        .ok_or_else(|| Error::Parse(format!("bad override path `{path}`")))?;
    let mut table = root;
    for k in keys {
        let entry = table
            .entry(k.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| Error::Parse(format!("`{k}` in `{path}` is not a table")))?;
    }
    table.insert(last.to_string(), value);
    Ok(())
}

fn parse_literal(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.into()),
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Self::from_toml_with_overrides(text, &[])
    }

    pub fn from_toml_with_overrides(text: &str, overrides: &[(String, String)]) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Parse(e.to_string()))?;
        for (k, v) in overrides {
            apply_override(&mut table, k, v)?;
        }
        Self::from_table(table)
    }

    pub fn from_table(table: toml::Table) -> Result<Self> {
        let raw: RawConfig = toml::Value::Table(table).try_into().map_err(map_de_error)?;
        Self::resolve(raw)
    }

    fn resolve(raw: RawConfig) -> Result<Self> {
        let (lr, epochs, batch, loss) = match raw.task {
            TaskKind::Diffusion => (5e-4, 100, 25, LossKind::Mse),
            TaskKind::SourceId => (5e-3, 100, 25, LossKind::CrossEntropy),
            TaskKind::Imputation => (1e-3, 100, 25, LossKind::Mse),
        };
        let train = TrainConfig {
            learning_rate: raw.train.learning_rate.unwrap_or(lr),
            batch_size: raw.train.batch_size.unwrap_or(batch),
            epochs: raw.train.epochs.unwrap_or(epochs),
            weight_decay: raw.train.weight_decay.unwrap_or(1e-4),
            seed: raw.train.seed.unwrap_or(raw.seed),
            loss: raw.train.loss.unwrap_or(loss),
        };
        let cfg = Self {
            task: raw.task,
            graph: raw.graph,
            model: raw.model,
            data: raw.data,
            train,
            trials: raw.trials,
            seed: raw.seed,
            output_dir: raw.output_dir,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Parse(m));
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        self.train
            .validate()
            .map_err(|e| Error::Parse(e.to_string()))?;
        match self.graph.generator {
            GraphGenerator::File if self.graph.path.is_none() => {
                return bad("graph.generator = \"file\" needs graph.path".into())
            }
            GraphGenerator::Er if !(0.0..=1.0).contains(&self.graph.p) => {
                return bad(format!("graph.p = {} outside [0, 1]", self.graph.p))
            }
            GraphGenerator::Sf
                if self.graph.m == 0 || self.graph.m > self.graph.m0 || self.graph.m0 >= self.graph.n =>
            {
                return bad("scale-free graphs need 1 <= m <= m0 < n".into())
            }
            _ => {}
        }
        if self.graph.generator != GraphGenerator::File {
            let n = self.graph.n;
            if n == 0 {
                return bad("graph.n must be positive".into());
            }
            if self.data.sparse_support > n || self.data.filter_anchors > n || self.data.candidates > n {
                return bad(format!("data sizes exceed graph.n = {n}"));
            }
            if let AnchorSpec::Count(c) = self.model.anchors {
                if c > n {
                    return bad(format!("model.anchors = {c} exceeds graph.n = {n}"));
                }
            }
        }
        if self.graph.weights == WeightKind::SignedUniform
            && !(0.0 < self.graph.weight_low && self.graph.weight_low < self.graph.weight_high)
        {
            return bad("graph weights need 0 < weight_low < weight_high".into());
        }
        if self.data.noise < 0.0 {
            return bad("data.noise must be nonnegative".into());
        }
        if self.model.layers == 0 && self.model.kind != ModelKind::Ls {
            return bad("model.layers must be at least 1".into());
        }
        let incompatible = || Error::IncompatibleTaskModel {
            task: format!("{:?}", self.task).to_lowercase(),
            model: self.model.kind.as_str().to_string(),
        };
        match (self.task, self.model.kind) {
            (TaskKind::Imputation, ModelKind::Ls) => return Err(incompatible()),
            (TaskKind::SourceId, ModelKind::Ls) => {
                warn!("ls on source identification regresses one-hot sources; expect poor accuracy")
            }
            _ => {}
        }
        if self.task == TaskKind::Imputation
            && self.data.signals_file.is_some() != (self.graph.generator == GraphGenerator::File)
        {
            return bad("imputation from a signals file needs graph.generator = \"file\"".into());
        }
        Ok(())
    }

    /// Serializes back to TOML (the config echo of a results bundle).
    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config is always serializable")
    }
}

/// Reads and validates a config file.
pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    parse_config_with_overrides(path, &[])
}

pub fn parse_config_with_overrides(
    path: &Path,
    overrides: &[(String, String)],
) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    let mut cfg = ExperimentConfig::from_toml_with_overrides(&text, overrides)?;
    // relative data paths resolve against the config's directory
    if let Some(dir) = path.parent() {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(p) = p.as_mut().filter(|p| p.is_relative()) {
                *p = dir.join(&*p);
            }
        };
        fix(&mut cfg.graph.path);
        fix(&mut cfg.data.signals_file);
        fix(&mut cfg.data.mask_file);
    }
    Ok(cfg)
}
