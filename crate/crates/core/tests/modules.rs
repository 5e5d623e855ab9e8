mod common;

use std::collections::BTreeSet;

use common::{adjusted_rand_index, blobs, corpus_of, keyed_matrix, post};
use topicscan::clustering::{cluster_matrix, filter_topics, ClusterParams, TopicSet};
use topicscan::corpus::{load_corpus, load_outcomes, load_posts, PostFormat};
use topicscan::embedding::{load_embeddings, EmbeddingMatrix};
use topicscan::enrichment::{apply_enrichment, lexical_candidates, parse_accept_list, PoolSource};
use topicscan::stats::{stepwise_matrix, StepwiseParams};
use topicscan::synth::{generate, SynthParams};
use topicscan::topics::topic_distributions;
use topicscan::Error;

#[test]
fn jsonl_and_csv_posts_load_identically() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate(&SynthParams { n_users: 12, n_posts: 80, seed: 1, ..Default::default() }).unwrap();
    data.write(dir.path()).unwrap();
    let jsonl = load_posts(&dir.path().join("corpus.jsonl"), PostFormat::Jsonl).unwrap();

    let csv_path = dir.path().join("corpus.csv");
    let mut w = csv::Writer::from_path(&csv_path).unwrap();
    for p in &jsonl {
        w.serialize(p).unwrap();
    }
    w.flush().unwrap();
    let csv = load_posts(&csv_path, PostFormat::Csv).unwrap();
    assert_eq!(jsonl, csv);

    let users = load_outcomes(&dir.path().join("outcomes.csv")).unwrap();
    assert_eq!(users.len(), 12);
    let (corpus, report) = load_corpus(&dir.path().join("corpus.jsonl"), PostFormat::Jsonl, users).unwrap();
    assert_eq!(corpus.len() + report.skipped_empty, 80);
}

#[test]
fn malformed_jsonl_reports_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.jsonl");
    std::fs::write(&path, "{\"post_id\":\"a\",\"user_id\":\"u\",\"text\":\"hi\"}\n{not json}\n").unwrap();
    match load_posts(&path, PostFormat::Jsonl).unwrap_err() {
        Error::Parse { line, .. } => assert_eq!(line, 2),
        other => panic!("unexpected {other}"),
    }
}

#[test]
fn embeddings_round_trip_through_both_formats() {
    let (points, _) = blobs(&[vec![0.0, 1.0, 2.0]], 20, 1.0, 2);
    let m = keyed_matrix(&points);
    let dir = tempfile::tempdir().unwrap();
    let (bin, csv) = (dir.path().join("e.bin"), dir.path().join("e.csv"));
    m.write_binary(&bin).unwrap();
    m.write_csv(&csv).unwrap();
    assert_eq!(EmbeddingMatrix::read(&bin).unwrap(), m);
    let from_csv = EmbeddingMatrix::read(&csv).unwrap();
    assert_eq!(from_csv.as_flat(), m.as_flat());

    let mut keys: BTreeSet<String> = m.keys().iter().cloned().collect();
    assert_eq!(load_embeddings(&bin, &keys).unwrap().len(), 20);
    keys.insert("missing".into());
    assert!(matches!(load_embeddings(&bin, &keys), Err(Error::MissingKeys { count: 1, .. })));
}

#[test]
fn three_blobs_recovered_exactly() {
    let centres = [vec![0.0, 0.0, 0.0], vec![30.0, 0.0, 0.0], vec![0.0, 30.0, 0.0]];
    let (points, planted) = blobs(&centres, 40, 1.5, 9);
    let m = keyed_matrix(&points);
    let params = ClusterParams { min_cluster_size: 15, ..Default::default() };
    let topics = cluster_matrix(&m, &params).unwrap();
    assert_eq!(topics.n_topics(), 3);
    let found: Vec<i64> = m
        .keys()
        .iter()
        .map(|k| topics.topic_of(k).map_or(-1, |t| i64::from(t.0)))
        .collect();
    assert_eq!(adjusted_rand_index(&planted, &found), 1.0);
}

#[test]
fn topic_proportions_sum_to_one_per_active_user() {
    let posts = vec![
        post("a", "u1", "x"),
        post("b", "u1", "y"),
        post("c", "u1", "z"),
        post("d", "u2", "w"),
    ];
    let corpus = corpus_of(posts);
    let topics = TopicSet::from_labels([
        ("a".to_string(), Some(0)),
        ("b".to_string(), Some(1)),
        ("c".to_string(), None),
        ("d".to_string(), Some(0)),
    ]);
    let dist = topic_distributions(&topics, &corpus);
    let u1 = &dist["u1"];
    assert_eq!(u1.total_posts, 3);
    let sum: f64 = topics.topics().iter().map(|t| u1.proportion(t.id)).sum();
    assert!((sum - 2.0 / 3.0).abs() < 1e-12, "noise posts count in the denominator");
    assert_eq!(dist["u2"].proportion(topics.topics()[0].id), 1.0);
}

#[test]
fn stepwise_finds_a_strong_signal_among_noise() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
    let n = 400;
    let columns: Vec<Vec<f64>> = (0..30).map(|_| (0..n).map(|_| rng.random::<f64>()).collect()).collect();
    let y: Vec<f64> = (0..n).map(|i| 2.0 * columns[7][i] + 0.3 * rng.random::<f64>()).collect();
    let res = stepwise_matrix(&columns, &y, &StepwiseParams::default()).unwrap();
    assert_eq!(res.selected.first().map(|t| t.0), Some(7));
    assert!(res.converged);
    assert!(res.final_fit.unwrap().r2 > 0.9);
}

#[test]
fn lexical_pool_and_accept_list_grow_the_topic() {
    let mut posts = Vec::new();
    let mut labels = Vec::new();
    for i in 0..12 {
        let id = format!("t{i:02}");
        posts.push(post(&id, &format!("u{i}"), "so bored at home"));
        labels.push((id, Some(0)));
    }
    posts.push(post("x1", "u0", "this lecture is boring"));
    posts.push(post("x2", "u1", "great dinner tonight"));
    labels.push(("x1".into(), None));
    labels.push(("x2".into(), None));
    let corpus = corpus_of(posts);
    let topics = filter_topics(&TopicSet::from_labels(labels), &corpus, 10);
    let t0 = topics.topics()[0].id;
    let pool = lexical_candidates(&corpus, t0, &topics, &["boring".to_string()]).unwrap();
    assert_eq!(pool.source, PoolSource::Lexical);
    assert_eq!(pool.post_ids().collect::<Vec<_>>(), vec!["x1"]);
    let accept = parse_accept_list("x1\n\n# reviewed\n");
    let enriched = apply_enrichment(t0, &topics, &corpus, &[pool], &accept).unwrap();
    assert_eq!(enriched.added_post_ids, vec!["x1".to_string()]);
    assert_eq!(enriched.post_ids().len(), 13);
}
