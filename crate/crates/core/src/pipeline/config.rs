use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::clustering::{ClusterParams, TopicId};
use crate::corpus::PostFormat;
use crate::enrichment::DEFAULT_WORDS;
use crate::error::{Error, Result};
use crate::reduction::ReductionParams;
use crate::stats::StepwiseParams;

/// The whole pipeline configuration, read from one JSON document.
///
/// Free-form remarks go in `_notes`; any other unknown key is rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(rename = "_notes", default, skip_serializing_if = "Option::is_none")]
    pub notes: Option<serde_json::Value>,
    #[serde(default)]
    pub seed: u64,
    /// Worker threads; `None` lets the runtime decide.
    #[serde(default)]
    pub threads: Option<usize>,
    pub paths: PathsConfig,
    #[serde(default)]
    pub corpus: CorpusConfig,
    #[serde(default)]
    pub embedding: EmbeddingConfig,
    #[serde(default)]
    pub reduction: ReductionParams,
    #[serde(default)]
    pub cluster: ClusterParams,
    #[serde(default)]
    pub stepwise: StepwiseParams,
    #[serde(default)]
    pub labeling: LabelingConfig,
    #[serde(default)]
    pub similarity: SimilarityConfig,
    #[serde(default)]
    pub enrichment: EnrichmentConfig,
    #[serde(default)]
    pub mediation: MediationConfig,
    /// Topic used by similarity, enrichment and mediation. Defaults to the
    /// first topic entering the stepwise model.
    #[serde(default)]
    pub target_topic: Option<TopicId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    pub corpus: PathBuf,
    pub outcomes: PathBuf,
    pub output_dir: PathBuf,
    /// Post embeddings; the test embedder is used when absent.
    #[serde(default)]
    pub embeddings: Option<PathBuf>,
    /// Sentence (`post#i`) and scale item (`scale#i`) embeddings.
    #[serde(default)]
    pub sentence_embeddings: Option<PathBuf>,
    #[serde(default)]
    pub scales: Vec<PathBuf>,
    /// Reviewed accept list for enrichment, one post id per line.
    #[serde(default)]
    pub accept_list: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub format: PostFormat,
    /// Drop users without any loaded post before analysis.
    pub drop_silent_users: bool,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            format: PostFormat::Jsonl,
            drop_silent_users: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingConfig {
    /// Dimension of the test embedder.
    pub dim: usize,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig { dim: 64 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabelingConfig {
    pub n_samples: usize,
    pub top_k: usize,
}

impl Default for LabelingConfig {
    fn default() -> Self {
        LabelingConfig {
            n_samples: 20,
            top_k: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct SimilarityConfig {
    /// Scale names to test; empty means every loaded scale.
    pub scales: Vec<String>,
    /// Keep target-topic posts out of the random baseline.
    pub exclude_topic: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnrichmentConfig {
    pub k: usize,
    pub word_list: Vec<String>,
    /// Measure centroid distances in the reduced layout instead.
    pub reduced_space: bool,
}

impl Default for EnrichmentConfig {
    fn default() -> Self {
        EnrichmentConfig {
            k: 500,
            word_list: DEFAULT_WORDS.iter().map(|w| w.to_string()).collect(),
            reduced_space: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MediationConfig {
    pub n_boot: usize,
    /// Explicit bootstrap seed; derived from the global seed when absent.
    pub seed: Option<u64>,
    /// Variable names: `enriched_topic`, `topic`, or an outcome column.
    pub x: String,
    pub m: String,
    pub y: String,
}

impl Default for MediationConfig {
    fn default() -> Self {
        MediationConfig {
            n_boot: 5000,
            seed: None,
            x: "enriched_topic".into(),
            m: "phq9".into(),
            y: "cssrs".into(),
        }
    }
}

pub const MEDIATION_VARIABLES: [&str; 6] = ["enriched_topic", "topic", "cssrs", "phq9", "msbs_disengagement", "bps"];

impl PipelineConfig {
    /// Reads a config and resolves relative paths against its directory.
    pub fn load(path: &Path) -> Result<PipelineConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut config: PipelineConfig =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.paths.resolve(base);
        Ok(config)
    }

    /// Parameter checks that need no file system access.
    pub fn validate(&self) -> Result<()> {
        let cfg = |e: Error| match e {
            Error::Config(_) => e,
            other => Error::Config(other.to_string()),
        };
        self.stepwise.validate().map_err(cfg)?;
        self.reduction.validate().map_err(cfg)?;
        self.cluster.validate().map_err(cfg)?;
        if self.embedding.dim < 2 {
            return Err(Error::Config("embedding.dim must be at least 2".into()));
        }
        if self.labeling.n_samples == 0 || self.labeling.top_k == 0 {
            return Err(Error::Config("labeling.n_samples and labeling.top_k must be positive".into()));
        }
        if self.enrichment.word_list.is_empty() {
            return Err(Error::Config("enrichment.word_list must not be empty".into()));
        }
        if self.mediation.n_boot == 0 {
            return Err(Error::Config("mediation.n_boot must be positive".into()));
        }
        for v in [&self.mediation.x, &self.mediation.m, &self.mediation.y] {
            if !MEDIATION_VARIABLES.contains(&v.as_str()) {
                return Err(Error::Config(format!(
                    "unknown mediation variable `{v}`; expected one of {}",
                    MEDIATION_VARIABLES.join(", ")
                )));
            }
        }
        if self.threads == Some(0) {
            return Err(Error::Config("threads must be positive".into()));
        }
        Ok(())
    }

    /// Every input file named by the config must exist.
    pub fn check_paths(&self) -> Result<()> {
        let p = &self.paths;
        let required = [Some(&p.corpus), Some(&p.outcomes), p.embeddings.as_ref(), p.sentence_embeddings.as_ref(), p.accept_list.as_ref()];
        for path in required.into_iter().flatten().chain(&p.scales) {
            if !path.is_file() {
                return Err(Error::Config(format!("input file {} does not exist", path.display())));
            }
        }
        Ok(())
    }
}

impl PathsConfig {
    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.corpus);
        fix(&mut self.outcomes);
        fix(&mut self.output_dir);
        for p in [&mut self.embeddings, &mut self.sentence_embeddings, &mut self.accept_list].into_iter().flatten() {
            fix(p);
        }
        self.scales.iter_mut().for_each(fix);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> serde_json::Value {
        serde_json::json!({
            "_notes": "anything goes here",
            "paths": {"corpus": "c.jsonl", "outcomes": "o.csv", "output_dir": "out"}
        })
    }

    #[test]
    fn defaults_fill_in() {
        let c: PipelineConfig = serde_json::from_value(minimal()).unwrap();
        assert_eq!(c.cluster.min_cluster_size, 25);
        assert_eq!(c.stepwise.p_in, 0.003);
        assert_eq!(c.enrichment.k, 500);
        assert_eq!(c.reduction.target_dim, 10);
        c.validate().unwrap();
    }

    #[test]
    fn p_in_must_be_below_p_out() {
        let mut v = minimal();
        v["stepwise"] = serde_json::json!({"p_in": 0.01, "p_out": 0.005});
        let c: PipelineConfig = serde_json::from_value(v).unwrap();
        let err = c.validate().unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(err.to_string().contains("p_in < p_out required"));
    }

    #[test]
    fn unknown_keys_rejected() {
        let mut v = minimal();
        v["clustr"] = serde_json::json!({});
        assert!(serde_json::from_value::<PipelineConfig>(v).is_err());
    }
}
