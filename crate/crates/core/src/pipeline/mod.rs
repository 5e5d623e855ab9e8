//! Config-driven pipeline with per-stage content-hash caching.
//!
//! Each stage's hash covers its config section, its stage seed, the input
//! files it reads and the hashes of its upstream stages, so it is known
//! before anything runs. A stage is reused only when `cache/<stage>.json`
//! carries the same hash and all of its artifacts still exist.

mod cache;
mod config;
mod stages;

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;

pub use cache::{file_digest, ContentHash, StageRecord};
pub use config::{
    CorpusConfig, EmbeddingConfig, EnrichmentConfig, LabelingConfig, MediationConfig, PathsConfig,
    PipelineConfig, SimilarityConfig, MEDIATION_VARIABLES,
};

use crate::error::{Error, Result};
use crate::hash::derive_seed;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Embed,
    Reduce,
    Cluster,
    Select,
    Label,
    Similarity,
    Enrich,
    Mediate,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::Embed,
        Stage::Reduce,
        Stage::Cluster,
        Stage::Select,
        Stage::Label,
        Stage::Similarity,
        Stage::Enrich,
        Stage::Mediate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Embed => "embed",
            Stage::Reduce => "reduce",
            Stage::Cluster => "cluster",
            Stage::Select => "select",
            Stage::Label => "label",
            Stage::Similarity => "similarity",
            Stage::Enrich => "enrich",
            Stage::Mediate => "mediate",
        }
    }

    /// The subcommand that produces this stage's output.
    pub fn command(self) -> &'static str {
        match self {
            Stage::Embed | Stage::Reduce | Stage::Cluster => "cluster",
            other => other.name(),
        }
    }

    pub fn dependencies(self, config: &PipelineConfig) -> Vec<Stage> {
        match self {
            Stage::Embed => vec![],
            Stage::Reduce => vec![Stage::Embed],
            Stage::Cluster => vec![Stage::Reduce],
            Stage::Select => vec![Stage::Cluster],
            Stage::Label | Stage::Similarity => vec![Stage::Cluster, Stage::Select],
            Stage::Enrich => {
                let space = if config.enrichment.reduced_space { Stage::Reduce } else { Stage::Embed };
                vec![space, Stage::Cluster, Stage::Select]
            }
            Stage::Mediate => vec![Stage::Cluster, Stage::Select, Stage::Enrich],
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown stage `{s}`")))
    }
}

/// Which stages a run covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    /// Every stage.
    All,
    /// The stage and everything upstream of it, reusing fresh caches.
    Through(Stage),
    /// Only the stage; upstream caches must already be fresh.
    Only(Stage),
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RunSummary {
    pub recomputed: Vec<Stage>,
    pub reused: Vec<Stage>,
}

/// Per-stage seeds fanned out from the global seed.
pub fn stage_seeds(config: &PipelineConfig) -> BTreeMap<Stage, u64> {
    Stage::ALL
        .into_iter()
        .map(|s| {
            let seed = match (s, config.mediation.seed) {
                (Stage::Mediate, Some(explicit)) => explicit,
                _ => derive_seed(config.seed, s.name()),
            };
            (s, seed)
        })
        .collect()
}

/// Validates the config, then runs the requested stages on a thread pool
/// sized by `config.threads`.
pub fn run_pipeline(config: &PipelineConfig, target: Target, force: bool) -> Result<RunSummary> {
    config.validate()?;
    config.check_paths()?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = config.threads {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    pool.install(|| Runner::new(config, force)?.run(target))
}

struct Runner<'a> {
    config: &'a PipelineConfig,
    out: PathBuf,
    force: bool,
    hashes: BTreeMap<Stage, String>,
    seeds: BTreeMap<Stage, u64>,
    ctx: stages::Context<'a>,
}

impl<'a> Runner<'a> {
    fn new(config: &'a PipelineConfig, force: bool) -> Result<Self> {
        let seeds = stage_seeds(config);
        let hashes = stage_hashes(config, &seeds)?;
        Ok(Runner {
            config,
            out: config.paths.output_dir.clone(),
            force,
            hashes,
            seeds: seeds.clone(),
            ctx: stages::Context::new(config, seeds),
        })
    }

    fn fresh(&self, stage: Stage) -> bool {
        StageRecord::read(&self.out, stage.name()).is_some_and(|r| r.is_fresh(&self.out, &self.hashes[&stage]))
    }

    fn run(self, target: Target) -> Result<RunSummary> {
        let wanted: Vec<Stage> = match target {
            Target::All => Stage::ALL.to_vec(),
            Target::Through(stage) => {
                let mut closure = vec![stage];
                let mut i = 0;
                while i < closure.len() {
                    for dep in closure[i].dependencies(self.config) {
                        if !closure.contains(&dep) {
                            closure.push(dep);
                        }
                    }
                    i += 1;
                }
                closure.sort();
                closure
            }
            Target::Only(stage) => {
                for dep in stage.dependencies(self.config) {
                    if !self.fresh(dep) {
                        return Err(Error::MissingPrerequisite {
                            stage: stage.name(),
                            prerequisite: dep.command(),
                        });
                    }
                }
                vec![stage]
            }
        };

        let mut summary = RunSummary::default();
        for stage in wanted {
            if !self.force && self.fresh(stage) {
                log::info!("{stage}: cache hit");
                summary.reused.push(stage);
                continue;
            }
            log::info!("{stage}: running");
            if let Some(old) = StageRecord::read(&self.out, stage.name()) {
                for artifact in &old.artifacts {
                    // a stage's artifact set may shrink between runs
                    let _ = std::fs::remove_file(self.out.join(artifact));
                }
            }
            let artifacts = self
                .ctx
                .run(stage, &self.out)
                .map_err(|e| match e {
                    Error::Config(_) | Error::MissingPrerequisite { .. } | Error::Stage { .. } => e,
                    other => Error::Stage {
                        stage: stage.name(),
                        source: Box::new(other),
                    },
                })?;
            StageRecord {
                hash: self.hashes[&stage].clone(),
                artifacts,
            }
            .write(&self.out, stage.name())?;
            summary.recomputed.push(stage);
        }
        self.write_manifest()?;
        Ok(summary)
    }

    fn write_manifest(&self) -> Result<()> {
        #[derive(Serialize)]
        struct StageEntry {
            hash: String,
            seed: u64,
            artifacts: Vec<PathBuf>,
        }
        #[derive(Serialize)]
        struct Manifest<'c> {
            tool: &'static str,
            version: &'static str,
            seed: u64,
            stages: BTreeMap<&'static str, StageEntry>,
            config: &'c PipelineConfig,
        }
        let stages = Stage::ALL
            .into_iter()
            .filter_map(|s| {
                let record = StageRecord::read(&self.out, s.name())?;
                record.is_fresh(&self.out, &self.hashes[&s]).then(|| {
                    (
                        s.name(),
                        StageEntry {
                            hash: record.hash,
                            seed: self.seeds[&s],
                            artifacts: record.artifacts,
                        },
                    )
                })
            })
            .collect();
        let manifest = Manifest {
            tool: "topicscan",
            version: VERSION,
            seed: self.config.seed,
            stages,
            config: self.config,
        };
        let text = serde_json::to_string_pretty(&manifest)? + "\n";
        cache::write_file(&self.out.join("manifest.json"), text.as_bytes())
    }
}

fn optional_digest(path: Option<&Path>) -> Result<String> {
    path.map_or(Ok(String::new()), file_digest)
}

/// Stage hashes derived from the config and input files alone.
pub fn stage_hashes(config: &PipelineConfig, seeds: &BTreeMap<Stage, u64>) -> Result<BTreeMap<Stage, String>> {
    let p = &config.paths;
    let corpus_key = ContentHash::new("corpus")
        .bytes("posts", file_digest(&p.corpus)?.as_bytes())
        .bytes("outcomes", file_digest(&p.outcomes)?.as_bytes())
        .json("config", &config.corpus)?
        .finish();

    let mut hashes: BTreeMap<Stage, String> = BTreeMap::new();
    for stage in Stage::ALL {
        let mut h = ContentHash::new(stage.name());
        h.bytes("version", VERSION.as_bytes()).json("seed", &seeds[&stage])?;
        for dep in stage.dependencies(config) {
            h.bytes(dep.name(), hashes[&dep].as_bytes());
        }
        match stage {
            Stage::Embed => {
                h.bytes("corpus", corpus_key.as_bytes())
                    .json("embedding", &config.embedding)?
                    .bytes("file", optional_digest(p.embeddings.as_deref())?.as_bytes());
            }
            Stage::Reduce => {
                h.json("reduction", &config.reduction)?;
            }
            Stage::Cluster => {
                h.bytes("corpus", corpus_key.as_bytes()).json("cluster", &config.cluster)?;
            }
            Stage::Select => {
                h.json("stepwise", &config.stepwise)?;
            }
            Stage::Label => {
                h.json("labeling", &config.labeling)?.json("target", &config.target_topic)?;
            }
            Stage::Similarity => {
                h.json("similarity", &config.similarity)?
                    .json("target", &config.target_topic)?
                    .json("dim", &config.embedding.dim)?
                    .bytes("sentences", optional_digest(p.sentence_embeddings.as_deref())?.as_bytes());
                for s in &p.scales {
                    h.bytes("scale", file_digest(s)?.as_bytes());
                }
            }
            Stage::Enrich => {
                h.json("enrichment", &config.enrichment)?
                    .json("target", &config.target_topic)?
                    .bytes("accept", optional_digest(p.accept_list.as_deref())?.as_bytes());
            }
            Stage::Mediate => {
                h.json("mediation", &config.mediation)?;
            }
        }
        hashes.insert(stage, h.finish());
    }
    Ok(hashes)
}
