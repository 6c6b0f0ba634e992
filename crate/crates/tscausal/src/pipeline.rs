//! End-to-end orchestration: one config describing dataset, model,
//! training, and detection, plus the seeded generate→train→discover→
//! score pipeline built from it.
//!
//! Configs are JSON with three layers merged in order: a named profile's
//! defaults, the config file, and flat `--section.key=value` overrides.
//! Validation reports every violation at once. A run seed fans out into
//! stage seeds (generation uses it directly; training and clustering use
//! derived streams) so stages stay independently reproducible.

use std::path::{Path, PathBuf};

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::{json, Value};

use crate::data::{load_csv, load_ground_truth, DatasetBundle, GeneratorSpec};
use crate::detect::{discover, DetectorConfig, DiscoverReport};
use crate::error::{Error, Result};
use crate::eval::{multi_seed_report, prf1, EvalResult, SeedReport};
use crate::graph::CausalGraph;
use crate::model::{ModelConfig, ModelParams};
use crate::seeds;
use crate::train::{make_windows, train_with, EpochSnapshot, TrainConfig, TrainReport};

/// Model hyper-parameters without the series count (which comes from
/// the dataset at run time).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSettings {
    pub window: usize,
    pub embed_dim: usize,
    pub qk_dim: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub temperature: f64,
    pub lambda_kernel: f64,
    pub lambda_mask: f64,
    pub leaky_slope: f64,
}

impl Default for ModelSettings {
    /// The `synthetic-dense` profile.
    fn default() -> Self {
        Self {
            window: 16,
            embed_dim: 256,
            qk_dim: 256,
            heads: 4,
            ffn_dim: 256,
            temperature: 1.0,
            lambda_kernel: 1e-4,
            lambda_mask: 1e-4,
            leaky_slope: 0.01,
        }
    }
}

impl ModelSettings {
    /// Bind the settings to a series count.
    pub fn with_series(&self, n_series: usize) -> ModelConfig {
        ModelConfig {
            n_series,
            window: self.window,
            embed_dim: self.embed_dim,
            qk_dim: self.qk_dim,
            heads: self.heads,
            ffn_dim: self.ffn_dim,
            temperature: self.temperature,
            lambda_kernel: self.lambda_kernel,
            lambda_mask: self.lambda_mask,
            leaky_slope: self.leaky_slope,
        }
    }

    /// Violations independent of the series count.
    pub fn violations(&self) -> Vec<String> {
        // Two series always satisfy the series-count invariant, so any
        // violation reported here is about the settings themselves.
        self.with_series(2).violations()
    }
}

/// Where a run's data comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSource {
    /// Generate with a seeded spec (the run seed replaces the spec's).
    Generate(GeneratorSpec),
    /// Load series (and optionally truth) from CSV files.
    Csv {
        data: PathBuf,
        truth: Option<PathBuf>,
    },
}

impl DatasetSource {
    /// Produce the bundle for one run seed. Generated datasets take the
    /// run seed; CSV data is seed-independent.
    pub fn load(&self, seed: u64) -> Result<DatasetBundle> {
        match self {
            DatasetSource::Generate(spec) => spec.seeded(seed).generate(),
            DatasetSource::Csv { data, truth } => {
                let mut bundle = load_csv(data)?;
                if let Some(truth_path) = truth {
                    bundle.truth =
                        Some(load_ground_truth(truth_path, Some(bundle.n_series()))?);
                }
                Ok(bundle)
            }
        }
    }

    /// Short name for report rows.
    pub fn name(&self) -> String {
        match self {
            DatasetSource::Generate(GeneratorSpec::Basic { structure, .. }) => {
                structure.to_string()
            }
            DatasetSource::Generate(GeneratorSpec::Lorenz96 { .. }) => "lorenz96".to_string(),
            DatasetSource::Csv { data, .. } => data
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "csv".to_string()),
        }
    }

    /// All violated invariants, empty when the source is usable.
    pub fn violations(&self) -> Vec<String> {
        match self {
            DatasetSource::Generate(spec) => spec.violations(),
            DatasetSource::Csv { data, truth } => {
                let mut v = Vec::new();
                if !data.exists() {
                    v.push(format!("data file {} does not exist", data.display()));
                }
                if let Some(t) = truth {
                    if !t.exists() {
                        v.push(format!("truth file {} does not exist", t.display()));
                    }
                }
                v
            }
        }
    }
}

impl Serialize for DatasetSource {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            DatasetSource::Generate(spec) => spec.serialize(serializer),
            DatasetSource::Csv { data, truth } => {
                let mut v = json!({ "kind": "csv", "data": data });
                if let Some(t) = truth {
                    v["truth"] = json!(t);
                }
                v.serialize(serializer)
            }
        }
    }
}

impl<'de> Deserialize<'de> for DatasetSource {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let value = Value::deserialize(deserializer)?;
        let kind = value
            .get("kind")
            .and_then(Value::as_str)
            .ok_or_else(|| {
                D::Error::custom("dataset needs a `kind`: basic, lorenz96, or csv")
            })?;
        match kind {
            "csv" => {
                #[derive(Deserialize)]
                struct CsvFields {
                    data: PathBuf,
                    #[serde(default)]
                    truth: Option<PathBuf>,
                }
                let fields: CsvFields = serde_json::from_value(Value::Object(
                    value
                        .as_object()
                        .cloned()
                        .map(|mut o| {
                            o.remove("kind");
                            o
                        })
                        .unwrap_or_default(),
                ))
                .map_err(D::Error::custom)?;
                Ok(DatasetSource::Csv {
                    data: fields.data,
                    truth: fields.truth,
                })
            }
            "basic" | "lorenz96" => {
                let spec: GeneratorSpec =
                    serde_json::from_value(value).map_err(D::Error::custom)?;
                Ok(DatasetSource::Generate(spec))
            }
            other => Err(D::Error::custom(format!(
                "unknown dataset kind `{other}`; valid kinds: basic, lorenz96, csv"
            ))),
        }
    }
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_seeds() -> Vec<u64> {
    vec![1, 2, 3, 4, 5]
}

fn default_true() -> bool {
    true
}

/// One complete run description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// Name of the profile the config was layered on, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile: Option<String>,
    pub dataset: DatasetSource,
    #[serde(default)]
    pub model: ModelSettings,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub detector: DetectorConfig,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Whether self-loops count in evaluation metrics.
    #[serde(default = "default_true")]
    pub include_self_loops: bool,
}

impl RunConfig {
    /// All violated invariants across every section, empty when usable.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        v.extend(self.dataset.violations().into_iter().map(|m| format!("dataset: {m}")));
        v.extend(self.model.violations().into_iter().map(|m| format!("model: {m}")));
        v.extend(self.train.violations().into_iter().map(|m| format!("train: {m}")));
        v.extend(
            self.detector
                .violations()
                .into_iter()
                .map(|m| format!("detector: {m}")),
        );
        if self.seeds.is_empty() {
            v.push("seeds: need at least one seed".to_string());
        }
        v
    }

    /// Error listing every violation, if any.
    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(v))
        }
    }
}

/// The named hyper-parameter profiles.
pub const PROFILES: [&str; 4] = ["synthetic-dense", "synthetic-sparse", "lorenz", "fmri"];

/// Default config fragment (model + detector) for a named profile.
pub fn profile_defaults(name: &str) -> Result<Value> {
    let v = match name {
        "synthetic-dense" => json!({
            "model": {
                "window": 16, "embed_dim": 256, "qk_dim": 256, "heads": 4,
                "ffn_dim": 256, "temperature": 1.0,
                "lambda_kernel": 1e-4, "lambda_mask": 1e-4
            },
            "detector": { "classes": 2, "top_classes": 1 }
        }),
        "synthetic-sparse" => json!({
            "model": {
                "window": 16, "embed_dim": 256, "qk_dim": 256, "heads": 4,
                "ffn_dim": 256, "temperature": 100.0,
                "lambda_kernel": 1e-10, "lambda_mask": 1e-10
            },
            "detector": { "classes": 2, "top_classes": 1 }
        }),
        "lorenz" => json!({
            "model": {
                "window": 32, "embed_dim": 512, "qk_dim": 512, "heads": 8,
                "ffn_dim": 512, "temperature": 10.0,
                "lambda_kernel": 5e-4, "lambda_mask": 5e-4
            },
            "detector": { "classes": 3, "top_classes": 2 }
        }),
        "fmri" => json!({
            "model": {
                "window": 32, "embed_dim": 256, "qk_dim": 256, "heads": 4,
                "ffn_dim": 512, "temperature": 100.0,
                "lambda_kernel": 0.0, "lambda_mask": 0.0
            },
            "detector": { "classes": 2, "top_classes": 1 }
        }),
        other => {
            return Err(Error::arg(format!(
                "unknown profile `{other}`; valid profiles: {}",
                PROFILES.join(", ")
            )))
        }
    };
    Ok(v)
}

/// Recursively merge `overlay` into `base`: objects merge key-wise,
/// anything else replaces.
pub fn deep_merge(base: &mut Value, overlay: Value) {
    match (base, overlay) {
        (Value::Object(base_map), Value::Object(overlay_map)) => {
            for (key, value) in overlay_map {
                match base_map.get_mut(&key) {
                    Some(slot) => deep_merge(slot, value),
                    None => {
                        base_map.insert(key, value);
                    }
                }
            }
        }
        (slot, value) => *slot = value,
    }
}

/// Parse one `section.key=value` override. The value is parsed as JSON
/// when possible (numbers, booleans, arrays, quoted strings) and kept
/// as a plain string otherwise.
pub fn parse_override(text: &str) -> Result<(Vec<String>, Value)> {
    let (path, raw) = text.split_once('=').ok_or_else(|| {
        Error::arg(format!("override `{text}` is not of the form section.key=value"))
    })?;
    let path = path.trim_start_matches('-');
    if path.is_empty() {
        return Err(Error::arg(format!("override `{text}` has an empty key path")));
    }
    let keys: Vec<String> = path.split('.').map(str::to_string).collect();
    if keys.iter().any(String::is_empty) {
        return Err(Error::arg(format!("override `{text}` has an empty path segment")));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok((keys, value))
}

fn set_path(root: &mut Value, keys: &[String], value: Value) {
    let mut slot = root;
    for key in &keys[..keys.len() - 1] {
        if !slot.is_object() {
            *slot = json!({});
        }
        slot = slot
            .as_object_mut()
            .expect("just ensured object")
            .entry(key.clone())
            .or_insert_with(|| json!({}));
    }
    if !slot.is_object() {
        *slot = json!({});
    }
    slot.as_object_mut()
        .expect("just ensured object")
        .insert(keys.last().expect("nonempty path").clone(), value);
}

/// Load a run config: profile defaults ← file ← overrides, then
/// validate everything at once.
pub fn load_run_config(path: &Path, overrides: &[String]) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::ParseError {
        path: path.display().to_string(),
        detail: e.to_string(),
    })?;
    let file_value: Value = serde_json::from_str(&text).map_err(|e| Error::ParseError {
        path: path.display().to_string(),
        detail: e.to_string(),
    })?;
    merge_run_config(file_value, overrides).map_err(|e| match e {
        Error::InvalidConfig(v) => Error::InvalidConfig(v),
        e => Error::ParseError {
            path: path.display().to_string(),
            detail: e.to_string(),
        },
    })
}

/// [`load_run_config`] on an already-parsed file value.
pub fn merge_run_config(file_value: Value, overrides: &[String]) -> Result<RunConfig> {
    let parsed_overrides: Vec<(Vec<String>, Value)> = overrides
        .iter()
        .map(|o| parse_override(o))
        .collect::<Result<_>>()?;

    // The profile may come from the file or an override; overrides win.
    let mut profile = file_value
        .get("profile")
        .and_then(Value::as_str)
        .map(str::to_string);
    for (keys, value) in &parsed_overrides {
        if keys.len() == 1 && keys[0] == "profile" {
            profile = value.as_str().map(str::to_string);
            if profile.is_none() {
                return Err(Error::arg("profile override must be a string".to_string()));
            }
        }
    }

    let mut merged = match &profile {
        Some(name) => profile_defaults(name)?,
        None => json!({}),
    };
    deep_merge(&mut merged, file_value);
    for (keys, value) in parsed_overrides {
        set_path(&mut merged, &keys, value);
    }
    if let Some(name) = &profile {
        merged["profile"] = json!(name);
    }

    let config: RunConfig = serde_json::from_value(merged)
        .map_err(|e| Error::arg(format!("config does not fit the schema: {e}")))?;
    config.validate()?;
    Ok(config)
}

/// Training seed derived from a run seed (generation uses the run seed
/// itself, so regenerating with a different training seed is free).
pub fn train_seed(run_seed: u64) -> u64 {
    seeds::derive(run_seed, 1)
}

/// Score-clustering seed derived from a run seed.
pub fn clustering_seed(run_seed: u64) -> u64 {
    seeds::derive(run_seed, 2)
}

/// Everything one seeded pipeline run produced.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    /// The run seed.
    pub seed: u64,
    /// The dataset the run saw.
    pub bundle: DatasetBundle,
    /// The bound model configuration.
    pub model_config: ModelConfig,
    /// Trained parameters (best validation state).
    pub params: ModelParams,
    /// Training curves and stopping info.
    pub train_report: TrainReport,
    /// The discovered graph.
    pub graph: CausalGraph,
    /// Detector diagnostics and scores.
    pub discover_report: DiscoverReport,
    /// Metrics against the bundled truth, when truth is known.
    pub eval: Option<EvalResult>,
}

/// Run generate→train→discover→score for one seed.
pub fn run_seed(config: &RunConfig, seed: u64) -> Result<RunOutcome> {
    run_seed_with(config, seed, |_| {})
}

/// [`run_seed`] with a per-epoch training observer.
///
/// Stage seeds derive from the run seed: generation uses it as-is,
/// training initialization and score clustering use separate derived
/// streams, so changing e.g. only the clustering seed never resimulates
/// the data.
pub fn run_seed_with<F: FnMut(EpochSnapshot)>(
    config: &RunConfig,
    seed: u64,
    on_epoch: F,
) -> Result<RunOutcome> {
    config.validate()?;
    let bundle = config.dataset.load(seed)?;
    let model_config = config.model.with_series(bundle.n_series());
    model_config.validate()?;
    let windows = make_windows(&bundle.series, model_config.window, config.train.stride)?;

    let train_config = TrainConfig {
        seed: train_seed(seed),
        ..config.train.clone()
    };
    let (params, train_report) = train_with(&windows, &model_config, &train_config, on_epoch)?;

    let detector = DetectorConfig {
        kmeans_seed: clustering_seed(seed),
        ..config.detector.clone()
    };
    let (graph, discover_report) = discover(&params, &model_config, &windows, &detector)?;

    let eval = match &bundle.truth {
        Some(truth) => {
            let mut result = prf1(&graph, truth, config.include_self_loops)?;
            result.seed = Some(seed);
            Some(result)
        }
        None => None,
    };

    Ok(RunOutcome {
        seed,
        bundle,
        model_config,
        params,
        train_report,
        graph,
        discover_report,
        eval,
    })
}

/// Full multi-seed benchmark of one config: every seed through the full
/// pipeline, aggregated into a [`SeedReport`] row.
pub fn bench(config: &RunConfig) -> Result<SeedReport> {
    config.validate()?;
    multi_seed_report(&config.dataset.name(), &config.seeds, |seed| {
        let outcome = run_seed(config, seed)?;
        outcome.eval.ok_or_else(|| {
            Error::arg("dataset has no ground truth; nothing to score".to_string())
        })
    })
}
