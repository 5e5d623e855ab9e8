use std::cell::{Cell, OnceCell};
use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::cache::write_file;
use super::{PipelineConfig, Stage};
use crate::clustering::{filter_topics, hdbscan_cluster, TopicId, TopicSet};
use crate::corpus::{load_corpus, load_outcomes, Corpus};
use crate::embedding::{load_embeddings, test_embed_all, test_embed_sentences, EmbeddingMatrix, ScaleDefinition, SentenceEmbeddings};
use crate::enrichment::{apply_enrichment, centroid_candidates, lexical_candidates, parse_accept_list, EnrichedTopic};
use crate::error::{Error, Result};
use crate::mediation::{mediation_analysis, MediationParams};
use crate::reduction::{fit_reduce, ReducedMatrix, ReductionParams};
use crate::similarity::{compare_to_baseline, random_baseline, topic_scale_similarity, SimilarityComparison};
use crate::stats::stepwise_select;
use crate::topics::{export_labeling_prompt, tfidf_topics, topic_distributions};

const EMBEDDINGS: &str = "cache/embeddings.bin";
const REDUCED: &str = "cache/reduced.bin";
const TOPICS_RAW: &str = "topics_unfiltered.csv";
const TOPICS: &str = "topics.csv";
const CLUSTERS: &str = "clusters.json";
const STEPWISE_CSV: &str = "stepwise.csv";
const STEPWISE_JSON: &str = "stepwise.json";
const TFIDF: &str = "tfidf.json";
const POOL_CENTROID: &str = "pools/centroid.csv";
const POOL_LEXICAL: &str = "pools/lexical.csv";
const ENRICHED: &str = "enriched_topic.json";
const MEDIATION_CSV: &str = "mediation.csv";
const MEDIATION_JSON: &str = "mediation.json";

pub(super) struct Context<'a> {
    config: &'a PipelineConfig,
    seeds: BTreeMap<Stage, u64>,
    corpus: OnceCell<Corpus>,
    fallback_warned: Cell<bool>,
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    Ok((serde_json::to_string_pretty(value)? + "\n").into_bytes())
}

impl<'a> Context<'a> {
    pub(super) fn new(config: &'a PipelineConfig, seeds: BTreeMap<Stage, u64>) -> Self {
        Context {
            config,
            seeds,
            corpus: OnceCell::new(),
            fallback_warned: Cell::new(false),
        }
    }

    fn corpus(&self) -> Result<&Corpus> {
        if let Some(c) = self.corpus.get() {
            return Ok(c);
        }
        let p = &self.config.paths;
        let users = load_outcomes(&p.outcomes)?;
        let (corpus, _) = load_corpus(&p.corpus, self.config.corpus.format, users)?;
        let corpus = if self.config.corpus.drop_silent_users {
            corpus.without_silent_users()
        } else {
            corpus
        };
        Ok(self.corpus.get_or_init(|| corpus))
    }

    pub(super) fn run(&self, stage: Stage, out: &Path) -> Result<Vec<PathBuf>> {
        let mut w = Writer { out, artifacts: Vec::new() };
        match stage {
            Stage::Embed => self.embed(&mut w)?,
            Stage::Reduce => self.reduce(&mut w)?,
            Stage::Cluster => self.cluster(&mut w)?,
            Stage::Select => self.select(&mut w)?,
            Stage::Label => self.label(&mut w)?,
            Stage::Similarity => self.similarity(&mut w)?,
            Stage::Enrich => self.enrich(&mut w)?,
            Stage::Mediate => self.mediate(&mut w)?,
        }
        Ok(w.artifacts)
    }

    fn embed(&self, w: &mut Writer) -> Result<()> {
        let corpus = self.corpus()?;
        let matrix = match &self.config.paths.embeddings {
            Some(path) => {
                let keys: BTreeSet<String> = corpus.posts().iter().map(|p| p.post_id.clone()).collect();
                load_embeddings(path, &keys)?
            }
            None => test_embed_all(
                corpus.posts().iter().map(|p| (p.post_id.clone(), p.text.as_str())),
                self.config.embedding.dim,
                self.seeds[&Stage::Embed],
            )?,
        };
        w.write(EMBEDDINGS, &matrix.to_binary())
    }

    fn reduce(&self, w: &mut Writer) -> Result<()> {
        let matrix = EmbeddingMatrix::read(&w.path(EMBEDDINGS))?;
        let params = self.reduction_params();
        let reduced = fit_reduce(&matrix, &params)?;
        w.write(REDUCED, &reduced.matrix.to_binary())
    }

    fn reduction_params(&self) -> ReductionParams {
        ReductionParams {
            seed: self.seeds[&Stage::Reduce],
            ..self.config.reduction.clone()
        }
    }

    fn cluster(&self, w: &mut Writer) -> Result<()> {
        let corpus = self.corpus()?;
        let reduced = ReducedMatrix::from_matrix(EmbeddingMatrix::read(&w.path(REDUCED))?, self.reduction_params());
        let params = &self.config.cluster;
        let raw = hdbscan_cluster(&reduced, params)?;
        let kept = filter_topics(&raw, corpus, params.min_users);

        #[derive(Serialize)]
        struct TopicSummary {
            topic_id: TopicId,
            posts: usize,
            users: usize,
        }
        #[derive(Serialize)]
        struct Summary {
            posts: usize,
            topics_before_filter: usize,
            topics: usize,
            removed: usize,
            noise_posts: usize,
            sizes: Vec<TopicSummary>,
        }
        let summary = Summary {
            posts: kept.assignment().len(),
            topics_before_filter: raw.n_topics(),
            topics: kept.n_topics(),
            removed: raw.n_topics() - kept.n_topics(),
            noise_posts: kept.noise_posts().count(),
            sizes: kept
                .topics()
                .iter()
                .map(|t| TopicSummary {
                    topic_id: t.id,
                    posts: t.post_ids.len(),
                    users: kept.distinct_users(t.id, corpus),
                })
                .collect(),
        };
        log::info!(
            "cluster: {} topics, {} after removing topics with fewer than {} users",
            raw.n_topics(),
            kept.n_topics(),
            params.min_users
        );
        w.write(TOPICS_RAW, raw.to_csv_string().as_bytes())?;
        w.write(TOPICS, kept.to_csv_string().as_bytes())?;
        w.write(CLUSTERS, &json_bytes(&summary)?)
    }

    fn topics(&self, w: &Writer) -> Result<TopicSet> {
        TopicSet::from_csv_str(&read_text(&w.path(TOPICS))?)
    }

    fn select(&self, w: &mut Writer) -> Result<()> {
        let corpus = self.corpus()?;
        let topics = self.topics(w)?;
        if topics.n_topics() == 0 {
            return Err(Error::Degenerate("no topics survived clustering".into()));
        }
        let dist = topic_distributions(&topics, corpus);
        let outcomes: BTreeMap<String, f64> =
            corpus.users().iter().map(|(u, r)| (u.clone(), f64::from(r.cssrs))).collect();
        let result = stepwise_select(&dist, &outcomes, &self.config.stepwise)?;
        log::info!("select: {} topic(s) entered the model", result.selected.len());
        w.write(STEPWISE_CSV, result.to_csv_string().as_bytes())?;
        w.write(STEPWISE_JSON, &json_bytes(&result)?)
    }

    fn selected(&self, w: &Writer) -> Result<Vec<TopicId>> {
        let value: serde_json::Value = serde_json::from_str(&read_text(&w.path(STEPWISE_JSON))?)?;
        let selected = value
            .get("selected")
            .cloned()
            .ok_or_else(|| Error::parse(w.path(STEPWISE_JSON), 1, "missing `selected`"))?;
        Ok(serde_json::from_value(selected)?)
    }

    /// Configured target, else the first selected topic, else topic 0.
    fn target(&self, w: &Writer, topics: &TopicSet) -> Result<TopicId> {
        let target = match self.config.target_topic {
            Some(t) => t,
            None => match self.selected(w)?.first() {
                Some(&t) => t,
                None => {
                    if !self.fallback_warned.replace(true) {
                        log::warn!("no topic entered the stepwise model; using topic 0 as target");
                    }
                    TopicId(0)
                }
            },
        };
        if topics.topic(target).is_none() {
            return Err(Error::UnknownTopic(target));
        }
        Ok(target)
    }

    fn label(&self, w: &mut Writer) -> Result<()> {
        let corpus = self.corpus()?;
        let topics = self.topics(w)?;
        let cfg = &self.config.labeling;
        let report = tfidf_topics(&topics, corpus, cfg.top_k)?;
        w.write(TFIDF, &json_bytes(&report)?)?;
        let mut wanted: BTreeSet<TopicId> = self.selected(w)?.into_iter().collect();
        wanted.insert(self.target(w, &topics)?);
        for t in wanted {
            let prompt = export_labeling_prompt(t, &topics, corpus, cfg.n_samples, self.seeds[&Stage::Label])?;
            w.write(&prompt_path(t), prompt.as_bytes())?;
        }
        Ok(())
    }

    fn similarity(&self, w: &mut Writer) -> Result<()> {
        let corpus = self.corpus()?;
        let topics = self.topics(w)?;
        let target = self.target(w, &topics)?;
        let cfg = &self.config.similarity;
        let scales: Vec<ScaleDefinition> = self
            .config
            .paths
            .scales
            .iter()
            .map(|p| ScaleDefinition::load(p))
            .collect::<Result<_>>()?;
        let chosen: Vec<&ScaleDefinition> = if cfg.scales.is_empty() {
            scales.iter().collect()
        } else {
            cfg.scales
                .iter()
                .map(|name| {
                    scales
                        .iter()
                        .find(|s| &s.name == name)
                        .ok_or_else(|| Error::Config(format!("similarity scale `{name}` is not among the loaded scales")))
                })
                .collect::<Result<_>>()?
        };
        if chosen.is_empty() {
            return Ok(());
        }

        let dim = self.config.embedding.dim;
        let seed = self.seeds[&Stage::Similarity];
        let (sentences, ingested) = match &self.config.paths.sentence_embeddings {
            Some(path) => {
                let m = EmbeddingMatrix::read(path)?;
                (SentenceEmbeddings::new(m.clone()), Some(m))
            }
            None => (
                test_embed_sentences(corpus.posts().iter().map(|p| (p.post_id.as_str(), p.text.as_str())), dim, self.seeds[&Stage::Embed])?,
                None,
            ),
        };
        let topic_posts = &topics.topic(target).expect("target validated").post_ids;
        let exclude: Option<BTreeSet<String>> = cfg.exclude_topic.then(|| topic_posts.iter().cloned().collect());

        for scale in chosen {
            let items = match &ingested {
                Some(m) => {
                    let keys: BTreeSet<String> = scale.item_keys().map(|(k, _)| k).collect();
                    m.select(&keys)?
                }
                None => test_embed_all(scale.item_keys(), dim, self.seeds[&Stage::Embed])?,
            };
            let topic_report = topic_scale_similarity(&scale.name, topic_posts, &sentences, &items)?;
            let baseline = random_baseline(
                &scale.name,
                corpus,
                topic_posts.len(),
                seed,
                exclude.as_ref(),
                &sentences,
                &items,
            )?;
            let test = compare_to_baseline(&topic_report, &baseline)?;
            let comparison = SimilarityComparison {
                topic: topic_report,
                baseline,
                test,
            };
            w.write(&format!("similarity/{}.json", scale.name), &json_bytes(&comparison)?)?;
        }
        Ok(())
    }

    fn enrich(&self, w: &mut Writer) -> Result<()> {
        let corpus = self.corpus()?;
        let topics = self.topics(w)?;
        let target = self.target(w, &topics)?;
        let cfg = &self.config.enrichment;
        let space = if cfg.reduced_space { REDUCED } else { EMBEDDINGS };
        let embeddings = EmbeddingMatrix::read(&w.path(space))?;
        let centroid = centroid_candidates(target, &topics, &embeddings, cfg.k)?;
        let lexical = lexical_candidates(corpus, target, &topics, &cfg.word_list)?;
        let accept = match &self.config.paths.accept_list {
            Some(path) => parse_accept_list(&read_text(path)?),
            None => BTreeSet::new(),
        };
        w.write(POOL_CENTROID, centroid.to_csv_string(corpus)?.as_bytes())?;
        w.write(POOL_LEXICAL, lexical.to_csv_string(corpus)?.as_bytes())?;
        let enriched = apply_enrichment(target, &topics, corpus, &[centroid, lexical], &accept)?;
        w.write(ENRICHED, &json_bytes(&enriched)?)
    }

    fn mediate(&self, w: &mut Writer) -> Result<()> {
        let corpus = self.corpus()?;
        let topics = self.topics(w)?;
        let target = self.target(w, &topics)?;
        let enriched: EnrichedTopic = serde_json::from_str(&read_text(&w.path(ENRICHED))?)?;
        let dist = topic_distributions(&topics, corpus);
        let cfg = &self.config.mediation;

        let value = |name: &str, user: &str| -> Option<f64> {
            match name {
                "enriched_topic" => enriched.user_scores.get(user).copied(),
                "topic" => dist.get(user).map(|d| d.proportion(target)),
                field => corpus.users().get(user).and_then(|r| r.field(field)),
            }
        };
        let (mut x, mut m, mut y) = (Vec::new(), Vec::new(), Vec::new());
        for user in corpus.users().keys() {
            if let (Some(a), Some(b), Some(c)) = (value(&cfg.x, user), value(&cfg.m, user), value(&cfg.y, user)) {
                x.push(a);
                m.push(b);
                y.push(c);
            }
        }
        let params = MediationParams {
            n_boot: cfg.n_boot,
            seed: self.seeds[&Stage::Mediate],
        };
        let result = mediation_analysis(&x, &m, &y, &params)?;
        w.write(MEDIATION_CSV, result.to_csv_string(&cfg.x, &cfg.m, &cfg.y).as_bytes())?;
        w.write(MEDIATION_JSON, &json_bytes(&result)?)
    }
}

pub(super) fn prompt_path(topic: TopicId) -> String {
    format!("prompts/topic_{topic}.txt")
}

struct Writer<'o> {
    out: &'o Path,
    artifacts: Vec<PathBuf>,
}

impl Writer<'_> {
    fn path(&self, rel: &str) -> PathBuf {
        self.out.join(rel)
    }

    fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        write_file(&self.path(rel), bytes)?;
        self.artifacts.push(PathBuf::from(rel));
        Ok(())
    }
}
