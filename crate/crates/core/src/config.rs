//! Declarative pipeline configuration: one JSON document with per-section
//! defaults. Relative paths resolve against the configuration file's directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::TsneConfig;
use crate::error::{Error, Result};
use crate::events::{hex_digest, DEFAULT_PERCENTILE};
use crate::geogrid::{DEFAULT_EDGE, DEFAULT_MAX_GAP, DEFAULT_TOLERANCE, DEFAULT_TOP_K};
use crate::io;
use crate::ontology::{SkipGramParams, WalkParams};
use crate::vae::VaeConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PathsConfig {
    pub manifest: Option<PathBuf>,
    pub fixes: Option<PathBuf>,
    pub ontology: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
    pub output_dir: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig {
            manifest: None,
            fixes: None,
            ontology: None,
            vocab: None,
            output_dir: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridConfig {
    pub edge: f64,
    pub top_k: usize,
    pub max_gap: f64,
    pub tolerance: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            edge: DEFAULT_EDGE,
            top_k: DEFAULT_TOP_K,
            max_gap: DEFAULT_MAX_GAP,
            tolerance: DEFAULT_TOLERANCE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EventsConfig {
    pub percentile: f64,
}

impl Default for EventsConfig {
    fn default() -> Self {
        EventsConfig {
            percentile: DEFAULT_PERCENTILE,
        }
    }
}

/// Walk and skip-gram settings. The embedding dimension is fixed at 5.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Node2VecConfig {
    pub p: f64,
    pub q: f64,
    pub walk_length: usize,
    pub walks_per_node: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub lr: f64,
    pub min_lr: f64,
}

impl Default for Node2VecConfig {
    fn default() -> Self {
        let w = WalkParams::default();
        let s = SkipGramParams::default();
        Node2VecConfig {
            p: w.p,
            q: w.q,
            walk_length: w.walk_length,
            walks_per_node: w.walks_per_node,
            window: s.window,
            negatives: s.negatives,
            epochs: s.epochs,
            lr: s.lr,
            min_lr: s.min_lr,
        }
    }
}

impl Node2VecConfig {
    pub fn walk_params(&self) -> WalkParams {
        WalkParams {
            p: self.p,
            q: self.q,
            walk_length: self.walk_length,
            walks_per_node: self.walks_per_node,
        }
    }

    pub fn skipgram_params(&self) -> SkipGramParams {
        SkipGramParams {
            window: self.window,
            negatives: self.negatives,
            epochs: self.epochs,
            lr: self.lr,
            min_lr: self.min_lr,
            ..SkipGramParams::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalysisConfig {
    /// Project the tanh-transformed latents with t-SNE.
    pub tsne: bool,
    /// Also project the raw embeddings.
    pub tsne_raw: bool,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            tsne: true,
            tsne_raw: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub paths: PathsConfig,
    pub grid: GridConfig,
    pub events: EventsConfig,
    pub node2vec: Node2VecConfig,
    /// `seed` inside this section is replaced by the global seed.
    pub vae: VaeConfig,
    /// `seed` inside this section is replaced by the global seed.
    pub tsne: TsneConfig,
    pub analysis: AnalysisConfig,
    pub seed: u64,
    /// Users trained concurrently; 1 runs them sequentially.
    pub parallel_users: usize,
    #[serde(skip)]
    pub(crate) base_dir: PathBuf,
}

impl PipelineConfig {
    pub fn from_json(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: PipelineConfig = serde_json::from_str(text)
            .map_err(|e| Error::Validation(format!("invalid configuration: {e}")))?;
        cfg.base_dir = base_dir.to_path_buf();
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Validation(format!("cannot read configuration {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("")).to_path_buf();
        Self::from_json(&text, &base)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        use std::io::Write;
        let mut w = io::create(path)?;
        serde_json::to_writer_pretty(&mut w, self)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn base_dir(&self) -> &Path {
        &self.base_dir
    }

    pub fn set_base_dir(&mut self, dir: &Path) {
        self.base_dir = dir.to_path_buf();
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        io::resolve(&self.base_dir, p)
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.paths.output_dir)
    }

    /// Resolved input path, or a validation error naming the missing key.
    pub fn input(&self, key: &str) -> Result<PathBuf> {
        let p = match key {
            "manifest" => &self.paths.manifest,
            "fixes" => &self.paths.fixes,
            "ontology" => &self.paths.ontology,
            "vocab" => &self.paths.vocab,
            other => return Err(Error::Validation(format!("unknown path key `{other}`"))),
        };
        let p = p
            .as_ref()
            .ok_or_else(|| Error::Validation(format!("configuration has no `paths.{key}`")))?;
        Ok(self.resolve(p))
    }

    pub fn vae_config(&self) -> VaeConfig {
        VaeConfig {
            seed: self.seed,
            ..self.vae.clone()
        }
    }

    pub fn tsne_config(&self) -> TsneConfig {
        TsneConfig {
            seed: self.seed,
            ..self.tsne.clone()
        }
    }

    /// Checks parameter ranges and that every input path exists.
    pub fn validate(&self) -> Result<()> {
        let g = &self.grid;
        if !(g.edge > 0.0) || g.top_k == 0 || !(g.max_gap > 0.0) || !(g.tolerance >= 0.0) {
            return Err(Error::Validation("grid: edge, top_k and max_gap must be positive".into()));
        }
        if !(self.events.percentile > 0.0 && self.events.percentile < 100.0) {
            return Err(Error::Validation(format!(
                "events.percentile must lie in (0, 100), got {}",
                self.events.percentile
            )));
        }
        self.node2vec.walk_params().validate()?;
        let s = self.node2vec.skipgram_params();
        if s.window == 0 || s.negatives == 0 || s.epochs == 0 || !(s.lr > 0.0) {
            return Err(Error::Validation("node2vec: window, negatives, epochs and lr must be positive".into()));
        }
        self.vae_config().validate()?;
        self.tsne_config().validate()?;
        for key in ["manifest", "fixes", "ontology", "vocab"] {
            let p = self.input(key)?;
            if !p.exists() {
                return Err(Error::Validation(format!("paths.{key} `{}` does not exist", p.display())));
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, excluding the output directory so
    /// reruns into different directories share a hash.
    pub fn hash(&self) -> String {
        let mut canon = self.clone();
        canon.paths.output_dir = PathBuf::new();
        canon.parallel_users = 0;
        let text = serde_json::to_string(&canon).expect("configuration serializes");
        let mut h = Sha256::new();
        h.update(text.as_bytes());
        hex_digest(h)
    }
}
