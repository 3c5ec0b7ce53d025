use std::path::{Path, PathBuf};

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize};
use sha2::{Digest, Sha256};

use crate::embed::{EmbedderConfig, EmbedderKind};
use crate::error::{Error, Result};
use crate::ingest::{Calendar, FeatureSpec, SchemaDescriptor};
use crate::numkernel::derive_seed;
use crate::segment::Method;
use crate::synth::SynthConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Flow or event CSV. Without one the synthetic `flows.csv` in the
    /// workdir is used.
    pub input: Option<PathBuf>,
    /// Ground-truth labels CSV (`user_id,week_index,label`).
    pub labels: Option<PathBuf>,
    /// Built-in schema name or path to a TOML descriptor.
    pub schema: String,
    /// Fail on the first malformed line instead of skipping it.
    pub strict: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            input: None,
            labels: None,
            schema: "netflow-v1".into(),
            strict: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureConfig {
    /// Window layout; the schema's default when absent.
    pub spec: Option<FeatureSpec>,
    pub window_hours: u32,
    pub day_offset_seconds: i64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            spec: None,
            window_hours: 24,
            day_offset_seconds: 0,
        }
    }
}

impl FeatureConfig {
    pub fn calendar(&self) -> Calendar {
        Calendar {
            window_hours: self.window_hours,
            day_offset_seconds: self.day_offset_seconds,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClusterConfig {
    pub method: Method,
    /// Fixed number of clusters; `k_min..=k_max` is searched when absent.
    pub k: Option<usize>,
    pub k_min: usize,
    pub k_max: usize,
    pub max_iter: usize,
    /// Z-score the per-user clustering features before k-means.
    pub standardize: bool,
    pub silhouette_cap: usize,
    pub silhouette_sample: usize,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            method: Method::KMeans,
            k: None,
            k_min: 2,
            k_max: 8,
            max_iter: 100,
            standardize: true,
            silhouette_cap: 20_000,
            silhouette_sample: 5_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmbedSection {
    /// Embedder used by `train`, `score` and `eval`; `repro` runs all three.
    pub embedder: EmbedderKind,
    #[serde(flatten)]
    pub config: EmbedderConfig,
}

// Hand-written so unknown keys are still rejected next to the flattened
// embedder settings.
impl<'de> Deserialize<'de> for EmbedSection {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let mut map = serde_json::Map::deserialize(d)?;
        let embedder = match map.remove("embedder") {
            Some(v) => serde_json::from_value(v).map_err(D::Error::custom)?,
            None => EmbedderKind::As2s,
        };
        let config = serde_json::from_value(serde_json::Value::Object(map)).map_err(D::Error::custom)?;
        Ok(Self { embedder, config })
    }
}

impl Default for EmbedSection {
    fn default() -> Self {
        Self {
            embedder: EmbedderKind::As2s,
            config: EmbedderConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectConfig {
    pub k_nn: usize,
}

impl Default for DetectConfig {
    fn default() -> Self {
        Self { k_nn: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub test_ratio: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { test_ratio: 0.15 }
    }
}

/// Everything a pipeline run depends on. Stage seeds are derived from
/// `seed`; the synth and embedder seeds in the file are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub workdir: PathBuf,
    /// Worker threads for per-cluster training; 0 uses all cores.
    pub threads: usize,
    pub data: DataConfig,
    pub features: FeatureConfig,
    pub cluster: ClusterConfig,
    pub embed: EmbedSection,
    pub detect: DetectConfig,
    pub eval: EvalConfig,
    pub synth: SynthConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            workdir: PathBuf::from("work"),
            threads: 0,
            data: DataConfig::default(),
            features: FeatureConfig::default(),
            cluster: ClusterConfig::default(),
            embed: EmbedSection::default(),
            detect: DetectConfig::default(),
            eval: EvalConfig::default(),
            synth: SynthConfig::default(),
        }
    }
}

/// Seeds handed to each stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSeeds {
    pub master: u64,
    pub synth: u64,
    pub cluster: u64,
    pub split: u64,
    pub embed: u64,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("--config", format!("cannot read {}: {e}", path.display())))?;
        Ok(toml::from_str(&text)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn seeds(&self) -> StageSeeds {
        StageSeeds {
            master: self.seed,
            synth: derive_seed(self.seed, "synth"),
            cluster: derive_seed(self.seed, "cluster"),
            split: derive_seed(self.seed, "split"),
            embed: derive_seed(self.seed, "embed"),
        }
    }

    /// Synth settings with the derived seed.
    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            seed: self.seeds().synth,
            ..self.synth.clone()
        }
    }

    /// Embedder settings for one cluster.
    pub fn embedder_config(&self, cluster: usize) -> EmbedderConfig {
        EmbedderConfig {
            seed: derive_seed(self.seeds().embed, &format!("cluster-{cluster}")),
            ..self.embed.config.clone()
        }
    }

    pub fn schema(&self) -> Result<SchemaDescriptor> {
        SchemaDescriptor::resolve(&self.data.schema)
    }

    pub fn feature_spec(&self) -> Result<FeatureSpec> {
        let schema = self.schema()?;
        let spec = self
            .features
            .spec
            .clone()
            .unwrap_or_else(|| FeatureSpec::default_for(schema.kind));
        spec.validate(schema.kind)?;
        Ok(spec)
    }

    pub fn flows_path(&self) -> PathBuf {
        self.data.input.clone().unwrap_or_else(|| self.workdir.join(super::FLOWS))
    }

    pub fn labels_path(&self) -> Option<PathBuf> {
        match (&self.data.input, &self.data.labels) {
            (_, Some(l)) => Some(l.clone()),
            (None, None) => Some(self.workdir.join(super::LABELS)),
            (Some(_), None) => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.features.calendar().validate()?;
        self.feature_spec()?;
        self.embed.config.validate()?;
        let c = &self.cluster;
        match c.k {
            Some(0) => return Err(Error::config("cluster.k", "must be at least 1")),
            None if c.k_min < 2 || c.k_max < c.k_min => {
                return Err(Error::config("cluster.k_min", "need 2 <= k_min <= k_max"));
            }
            _ => {}
        }
        if c.max_iter == 0 {
            return Err(Error::config("cluster.max_iter", "must be at least 1"));
        }
        if self.detect.k_nn == 0 {
            return Err(Error::config("detect.k_nn", "must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.eval.test_ratio) {
            return Err(Error::config("eval.test_ratio", "must be in [0, 1)"));
        }
        if self.data.input.is_none() {
            self.synth.validate()?;
        }
        for (field, p) in [("data.input", &self.data.input), ("data.labels", &self.data.labels)] {
            if let Some(p) = p {
                if !p.exists() {
                    return Err(Error::config(field, format!("{} does not exist", p.display())));
                }
            }
        }
        Ok(())
    }

    /// SHA-256 over the settings that influence results. The workdir,
    /// thread count and embedder choice are left out, so all three
    /// embedders of one run share a hash.
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        let obj = v.as_object_mut().expect("config is a table");
        obj.remove("workdir");
        obj.remove("threads");
        if let Some(e) = obj.get_mut("embed").and_then(|e| e.as_object_mut()) {
            e.remove("embedder");
            e.remove("seed");
        }
        if let Some(s) = obj.get_mut("synth").and_then(|s| s.as_object_mut()) {
            s.remove("seed");
        }
        let canonical = serde_json::to_string(&v).expect("value serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }
}
