//! Embedding matrices, their file formats, the deterministic test embedder and
//! sentence splitting.
//!
//! Two on-disk formats carry the same content:
//!
//! * CSV: one row per key, `key,v1,...,vd`, no header (a first row whose key
//!   is literally `key` is treated as a header and skipped).
//! * Binary: the 8-byte magic `TSEMB01\n`, then `dim: u32`, `rows: u64`, then
//!   for each row `key_len: u32`, the UTF-8 key bytes and `dim` little-endian
//!   `f64` values. All integers are little-endian.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hash::{fnv1a, splitmix64, unit_signed};
use crate::text::tokenize;

pub const BINARY_MAGIC: &[u8; 8] = b"TSEMB01\n";

/// How many missing keys an error message lists.
const MAX_MISSING_SHOWN: usize = 10;

/// Dense row-major vectors keyed by string, stored in ascending key order.
///
/// Row order is canonical: two matrices with the same key/vector pairs are
/// equal no matter what order they were built in.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    dim: usize,
    keys: Vec<String>,
    data: Vec<f64>,
    lookup: HashMap<String, usize>,
}

impl EmbeddingMatrix {
    /// Builds a matrix from `(key, vector)` pairs, checking dimensions,
    /// finiteness and key uniqueness.
    pub fn from_rows<I>(dim: usize, rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = (String, Vec<f64>)>,
    {
        if dim == 0 {
            return Err(Error::InvalidParams("embedding dimension must be positive".into()));
        }
        let mut sorted = BTreeMap::new();
        for (key, v) in rows {
            if v.len() != dim {
                return Err(Error::DimensionMismatch {
                    key,
                    expected: dim,
                    found: v.len(),
                });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(key));
            }
            if sorted.contains_key(&key) {
                return Err(Error::DuplicateKey(key));
            }
            sorted.insert(key, v);
        }
        let mut keys = Vec::with_capacity(sorted.len());
        let mut data = Vec::with_capacity(sorted.len() * dim);
        for (k, v) in sorted {
            keys.push(k);
            data.extend(v);
        }
        let lookup = keys.iter().enumerate().map(|(i, k)| (k.clone(), i)).collect();
        Ok(EmbeddingMatrix {
            dim,
            keys,
            data,
            lookup,
        })
    }

    pub(crate) fn from_sorted_parts(dim: usize, keys: Vec<String>, data: Vec<f64>) -> Self {
        debug_assert_eq!(keys.len() * dim, data.len());
        debug_assert!(keys.windows(2).all(|w| w[0] < w[1]));
        let lookup = keys.iter().enumerate().map(|(i, k)| (k.clone(), i)).collect();
        EmbeddingMatrix {
            dim,
            keys,
            data,
            lookup,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn keys(&self) -> &[String] {
        &self.keys
    }

    /// Flat row-major storage, rows in key order.
    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn position(&self, key: &str) -> Option<usize> {
        self.lookup.get(key).copied()
    }

    pub fn get(&self, key: &str) -> Option<&[f64]> {
        self.position(key).map(|i| self.row(i))
    }

    pub fn contains(&self, key: &str) -> bool {
        self.lookup.contains_key(key)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.keys.iter().map(String::as_str).zip(self.data.chunks_exact(self.dim))
    }

    /// Restricts the matrix to `keys`; every key must be present.
    pub fn select(&self, keys: &BTreeSet<String>) -> Result<EmbeddingMatrix> {
        check_missing(keys.iter().filter(|k| !self.contains(k)).cloned())?;
        let mut data = Vec::with_capacity(keys.len() * self.dim);
        for k in keys {
            data.extend_from_slice(self.get(k).expect("checked above"));
        }
        Ok(EmbeddingMatrix::from_sorted_parts(
            self.dim,
            keys.iter().cloned().collect(),
            data,
        ))
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.iter() {
            out.push_str(k);
            for x in v {
                out.push(',');
                out.push_str(&x.to_string());
            }
            out.push('\n');
        }
        out
    }

    pub fn to_binary(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(20 + self.data.len() * 8 + self.keys.len() * 16);
        out.extend_from_slice(BINARY_MAGIC);
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.keys.len() as u64).to_le_bytes());
        for (k, v) in self.iter() {
            out.extend_from_slice(&(k.len() as u32).to_le_bytes());
            out.extend_from_slice(k.as_bytes());
            for x in v {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv_string()).map_err(|e| Error::io(path, e))
    }

    pub fn write_binary(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_binary()).map_err(|e| Error::io(path, e))
    }

    /// Reads either format, sniffing the binary magic.
    pub fn read(path: &Path) -> Result<EmbeddingMatrix> {
        let mut file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut magic = [0u8; 8];
        let n = read_up_to(&mut file, &mut magic).map_err(|e| Error::io(path, e))?;
        if n == 8 && &magic == BINARY_MAGIC {
            let mut rest = Vec::new();
            file.read_to_end(&mut rest).map_err(|e| Error::io(path, e))?;
            parse_binary(&rest, path)
        } else {
            let head = std::io::Cursor::new(magic[..n].to_vec());
            parse_csv(BufReader::new(head.chain(file)), path)
        }
    }
}

fn read_up_to(r: &mut impl Read, buf: &mut [u8]) -> std::io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        let n = r.read(&mut buf[filled..])?;
        if n == 0 {
            break;
        }
        filled += n;
    }
    Ok(filled)
}

fn parse_csv(reader: impl BufRead, path: &Path) -> Result<EmbeddingMatrix> {
    let mut rows = Vec::new();
    let mut dim = None;
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let key = fields.next().unwrap_or_default().trim().to_string();
        if i == 0 && key == "key" {
            continue;
        }
        let v = fields
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|e| Error::parse(path, i + 1, format!("bad component: {e}")))?;
        let expected = *dim.get_or_insert(v.len());
        if v.len() != expected {
            return Err(Error::DimensionMismatch {
                key,
                expected,
                found: v.len(),
            });
        }
        rows.push((key, v));
    }
    EmbeddingMatrix::from_rows(dim.unwrap_or(1), rows)
}

fn parse_binary(bytes: &[u8], path: &Path) -> Result<EmbeddingMatrix> {
    let mut at = 0usize;
    let mut take = |n: usize| -> Result<&[u8]> {
        let s = bytes
            .get(at..at + n)
            .ok_or_else(|| Error::parse(path, 0, "truncated binary embedding file"))?;
        at += n;
        Ok(s)
    };
    let dim = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    let count = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
    let mut rows = Vec::with_capacity(count.min(1 << 20));
    for _ in 0..count {
        let klen = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let key = std::str::from_utf8(take(klen)?)
            .map_err(|_| Error::parse(path, 0, "key is not UTF-8"))?
            .to_string();
        let v = take(dim * 8)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        rows.push((key, v));
    }
    EmbeddingMatrix::from_rows(dim, rows)
}

fn check_missing(missing: impl Iterator<Item = String>) -> Result<()> {
    let missing: Vec<String> = missing.collect();
    if missing.is_empty() {
        return Ok(());
    }
    Err(Error::MissingKeys {
        count: missing.len(),
        shown: missing.into_iter().take(MAX_MISSING_SHOWN).collect(),
    })
}

/// Loads an embedding file and restricts it to exactly `expected_keys`.
/// Zero vectors are rejected since cosine similarity is undefined for them.
pub fn load_embeddings(path: &Path, expected_keys: &BTreeSet<String>) -> Result<EmbeddingMatrix> {
    let matrix = EmbeddingMatrix::read(path)?;
    let selected = matrix.select(expected_keys)?;
    for (k, v) in selected.iter() {
        if v.iter().all(|&x| x == 0.0) {
            return Err(Error::ZeroVector(k.to_string()));
        }
    }
    Ok(selected)
}

/// Deterministic stand-in for a sentence encoder.
///
/// Each normalized token is mapped to a pseudo-random dense direction derived
/// from `(token, seed)`; the text vector is the count-weighted sum of its
/// token directions, L2-normalized. Texts sharing tokens therefore have
/// larger cosine similarity than texts with disjoint vocabularies. A text
/// without any tokens embeds as a fixed sentinel token.
pub fn test_embed(text: &str, dim: usize, seed: u64) -> Vec<f64> {
    assert!(dim >= 2, "test_embed requires dim >= 2");
    let mut tokens = tokenize(text);
    if tokens.is_empty() {
        tokens.push("\u{0}empty".to_string());
    }
    // sorting makes the sum order a function of the multiset alone
    tokens.sort_unstable();
    let mut v = vec![0.0; dim];
    for tok in &tokens {
        let base = splitmix64(fnv1a(tok.as_bytes()) ^ splitmix64(seed));
        for (j, x) in v.iter_mut().enumerate() {
            *x += unit_signed(splitmix64(base.wrapping_add(j as u64)));
        }
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    } else {
        // fully cancelled sum
        v[0] = 1.0;
    }
    v
}

/// Embeds every `(key, text)` pair with [`test_embed`].
pub fn test_embed_all<'a>(
    texts: impl IntoIterator<Item = (String, &'a str)>,
    dim: usize,
    seed: u64,
) -> Result<EmbeddingMatrix> {
    use rayon::prelude::*;
    let items: Vec<(String, &str)> = texts.into_iter().collect();
    let rows: Vec<(String, Vec<f64>)> = items
        .into_par_iter()
        .map(|(k, t)| {
            let v = test_embed(t, dim, seed);
            (k, v)
        })
        .collect();
    EmbeddingMatrix::from_rows(dim, rows)
}

/// Splits each post into sentences and embeds them under [`sentence_key`]s.
pub fn test_embed_sentences<'a>(
    posts: impl IntoIterator<Item = (&'a str, &'a str)>,
    dim: usize,
    seed: u64,
) -> Result<SentenceEmbeddings> {
    let sentences: Vec<(String, String)> = posts
        .into_iter()
        .flat_map(|(id, text)| {
            split_sentences(text)
                .into_iter()
                .enumerate()
                .map(move |(i, s)| (sentence_key(id, i), s))
        })
        .collect();
    let matrix = test_embed_all(sentences.iter().map(|(k, s)| (k.clone(), s.as_str())), dim, seed)?;
    Ok(SentenceEmbeddings::new(matrix))
}

/// Rule-based sentence splitting on `.`, `!` and `?` followed by whitespace
/// or end of text. Fragments are trimmed and empty ones dropped.
pub fn split_sentences(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if matches!(c, '.' | '!' | '?') {
            let boundary = match chars.peek() {
                None => true,
                Some(&(_, next)) => next.is_whitespace(),
            };
            if boundary {
                let end = i + c.len_utf8();
                let frag = text[start..end].trim();
                if !frag.is_empty() {
                    out.push(frag.to_string());
                }
                start = end;
            }
        }
    }
    let tail = text[start..].trim();
    if !tail.is_empty() {
        out.push(tail.to_string());
    }
    out
}

/// Key under which sentence `index` of `post_id` is stored.
pub fn sentence_key(post_id: &str, index: usize) -> String {
    format!("{post_id}#{index}")
}

/// Sentence embeddings grouped by post.
///
/// Keys follow [`sentence_key`]: the post id is everything before the last `#`.
#[derive(Debug, Clone)]
pub struct SentenceEmbeddings {
    matrix: EmbeddingMatrix,
    by_post: BTreeMap<String, Vec<usize>>,
}

impl SentenceEmbeddings {
    pub fn new(matrix: EmbeddingMatrix) -> Self {
        let mut by_post: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, key) in matrix.keys().iter().enumerate() {
            let post = key.rsplit_once('#').map_or(key.as_str(), |(p, _)| p);
            by_post.entry(post.to_string()).or_default().push(i);
        }
        SentenceEmbeddings { matrix, by_post }
    }

    pub fn matrix(&self) -> &EmbeddingMatrix {
        &self.matrix
    }

    pub fn sentences(&self, post_id: &str) -> impl Iterator<Item = &[f64]> {
        self.by_post
            .get(post_id)
            .into_iter()
            .flatten()
            .map(|&i| self.matrix.row(i))
    }

    pub fn sentence_count(&self, post_id: &str) -> usize {
        self.by_post.get(post_id).map_or(0, Vec::len)
    }
}

/// A questionnaire: a name and its item texts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScaleDefinition {
    pub name: String,
    pub items: Vec<String>,
}

impl ScaleDefinition {
    pub fn validate(&self) -> Result<()> {
        if self.items.is_empty() {
            return Err(Error::InvalidParams(format!("scale `{}` has no items", self.name)));
        }
        if let Some(i) = self.items.iter().position(|t| t.trim().is_empty()) {
            return Err(Error::InvalidParams(format!("scale `{}` item {i} is blank", self.name)));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<ScaleDefinition> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let scale: ScaleDefinition = serde_json::from_str(&text)?;
        scale.validate()?;
        Ok(scale)
    }

    /// Item keys: `<name>#<index>`.
    pub fn item_keys(&self) -> impl Iterator<Item = (String, &str)> {
        self.items
            .iter()
            .enumerate()
            .map(move |(i, t)| (sentence_key(&self.name, i), t.as_str()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn keys(ks: &[&str]) -> BTreeSet<String> {
        ks.iter().map(|s| s.to_string()).collect()
    }

    fn write(contents: &[u8]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents).unwrap();
        f
    }

    #[test]
    fn loads_768_dim_csv() {
        let m = EmbeddingMatrix::from_rows(
            768,
            ["p1", "p2", "p3"].iter().enumerate().map(|(i, k)| {
                (k.to_string(), (0..768).map(|j| (i * 768 + j) as f64 * 1e-3 + 0.5).collect())
            }),
        )
        .unwrap();
        let f = write(m.to_csv_string().as_bytes());
        let loaded = load_embeddings(f.path(), &keys(&["p1", "p2", "p3"])).unwrap();
        assert_eq!(loaded.dim(), 768);
        assert_eq!(loaded, m);
    }

    #[test]
    fn missing_key_is_named() {
        let f = write(b"p1,1,0\np3,0,1\n");
        let err = load_embeddings(f.path(), &keys(&["p1", "p2", "p3"])).unwrap_err();
        match err {
            Error::MissingKeys { count, shown } => {
                assert_eq!(count, 1);
                assert_eq!(shown, ["p2"]);
            }
            other => panic!("{other}"),
        }
    }

    #[test]
    fn missing_keys_listing_is_capped() {
        let f = write(b"p1,1,0\n");
        let want: BTreeSet<String> = (0..25).map(|i| format!("q{i:02}")).collect();
        match load_embeddings(f.path(), &want).unwrap_err() {
            Error::MissingKeys { count, shown } => {
                assert_eq!(count, 25);
                assert_eq!(shown.len(), 10);
            }
            other => panic!("{other}"),
        }
    }

    #[test]
    fn ragged_rows_rejected() {
        let row = |k: &str, d: usize| {
            let mut s = k.to_string();
            for _ in 0..d {
                s.push_str(",0.5");
            }
            s.push('\n');
            s
        };
        let f = write((row("p1", 768) + &row("p2", 767)).as_bytes());
        let err = load_embeddings(f.path(), &keys(&["p1", "p2"])).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { expected: 768, found: 767, .. }));
    }

    #[test]
    fn non_finite_and_zero_rejected() {
        let f = write(b"p1,1,NaN\n");
        assert!(matches!(load_embeddings(f.path(), &keys(&["p1"])), Err(Error::NonFinite(_))));
        let f = write(b"p1,0,0\n");
        assert!(matches!(load_embeddings(f.path(), &keys(&["p1"])), Err(Error::ZeroVector(_))));
    }

    #[test]
    fn binary_round_trip_and_header_csv() {
        let m = EmbeddingMatrix::from_rows(
            3,
            vec![("b".into(), vec![1.0, 2.0, 3.0]), ("a".into(), vec![-0.1, 1e-300, 7.25])],
        )
        .unwrap();
        let f = write(&m.to_binary());
        assert_eq!(EmbeddingMatrix::read(f.path()).unwrap(), m);
        let f = write(format!("key,v1,v2,v3\n{}", m.to_csv_string()).as_bytes());
        assert_eq!(EmbeddingMatrix::read(f.path()).unwrap(), m);
        assert_eq!(m.keys(), ["a", "b"]);
    }

    #[test]
    fn test_embed_is_deterministic_and_unit() {
        let a = test_embed("I am so bored today", 64, 7);
        let b = test_embed("I am so bored today", 64, 7);
        assert_eq!(a.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), b.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
        let norm: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-9);
        // token multiset, not order or case
        assert_eq!(test_embed("bored so I", 16, 1), test_embed("i SO bored!", 16, 1));
        assert_ne!(test_embed("bored", 16, 1), test_embed("bored", 16, 2));
        let empty = test_embed("?!", 8, 0);
        assert!((empty.iter().map(|x| x * x).sum::<f64>().sqrt() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn shared_vocabulary_raises_cosine() {
        let cos = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let a = test_embed("bored nothing to do again", 128, 3);
        let b = test_embed("so bored again nothing happening", 128, 3);
        let c = test_embed("puppy adoption shelter kitten", 128, 3);
        assert!(cos(&a, &b) > cos(&a, &c) + 0.2);
    }

    #[test]
    fn thousand_random_strings_embed_distinctly() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut seen = BTreeSet::new();
        let mut texts = Vec::new();
        while texts.len() < 1000 {
            let words = rng.random_range(1..5);
            let t: Vec<String> = (0..words)
                .map(|_| {
                    let len = rng.random_range(1..8);
                    (0..len).map(|_| rng.random_range(b'a'..=b'z') as char).collect()
                })
                .collect();
            let mut multiset = t.clone();
            multiset.sort();
            if seen.insert(multiset) {
                texts.push(t.join(" "));
            }
        }
        let vecs: Vec<Vec<u64>> = texts
            .iter()
            .map(|t| test_embed(t, 64, 5).iter().map(|x| x.to_bits()).collect())
            .collect();
        for i in 0..vecs.len() {
            for j in i + 1..vecs.len() {
                assert_ne!(vecs[i], vecs[j], "{:?} vs {:?}", texts[i], texts[j]);
            }
        }
    }

    #[test]
    fn sentence_examples() {
        assert_eq!(split_sentences("I'm bored. Help me."), ["I'm bored.", "Help me."]);
        assert!(split_sentences("").is_empty());
        assert_eq!(split_sentences("why is Saturday so boring"), ["why is Saturday so boring"]);
        assert_eq!(split_sentences("Pi is 3.14 ok? Yes!!"), ["Pi is 3.14 ok?", "Yes!!"]);
        assert_eq!(split_sentences("  . Hi"), [".", "Hi"]);
    }

    #[test]
    fn sentence_embeddings_group_by_post() {
        let m = EmbeddingMatrix::from_rows(
            2,
            vec![
                (sentence_key("p#1", 0), vec![1.0, 0.0]),
                (sentence_key("p#1", 1), vec![0.0, 1.0]),
                (sentence_key("p2", 0), vec![1.0, 1.0]),
            ],
        )
        .unwrap();
        let s = SentenceEmbeddings::new(m);
        assert_eq!(s.sentence_count("p#1"), 2);
        assert_eq!(s.sentence_count("p2"), 1);
        assert_eq!(s.sentence_count("p"), 0);
    }

    #[test]
    fn scale_validation() {
        let ok = ScaleDefinition { name: "s".into(), items: vec!["I feel dull".into()] };
        ok.validate().unwrap();
        assert!(ScaleDefinition { name: "s".into(), items: vec![] }.validate().is_err());
        assert!(ScaleDefinition { name: "s".into(), items: vec![" ".into()] }.validate().is_err());
    }

    proptest! {
        #[test]
        fn two_terminated_sentences_split(s1 in "[a-zA-Z][a-zA-Z ]{0,20}", s2 in "[a-zA-Z][a-zA-Z ]{0,20}") {
            let text = format!("{s1}. {s2}.");
            prop_assert!(split_sentences(&text).len() >= 2);
        }

        #[test]
        fn binary_csv_formats_agree(rows in proptest::collection::btree_map("[a-z0-9_#]{1,8}", proptest::collection::vec(-1e6f64..1e6, 4), 1..20)) {
            let m = EmbeddingMatrix::from_rows(4, rows).unwrap();
            let f = write(&m.to_binary());
            prop_assert_eq!(&EmbeddingMatrix::read(f.path()).unwrap(), &m);
            let g = write(m.to_csv_string().as_bytes());
            prop_assert_eq!(&EmbeddingMatrix::read(g.path()).unwrap(), &m);
        }
    }
}
