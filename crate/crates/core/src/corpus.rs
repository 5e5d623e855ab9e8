//! Posts, users and outcome scores.
//!
//! Posts are read from JSONL (one object per line) or CSV with the columns
//! `post_id,user_id,text,has_attachment`. Outcomes are a CSV with a mandatory
//! `user_id,cssrs` header prefix and optional `phq9`, `msbs_disengagement` and
//! `bps` columns.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Post {
    pub post_id: String,
    pub user_id: String,
    pub text: String,
    #[serde(default)]
    pub has_attachment: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserRecord {
    pub user_id: String,
    pub cssrs: u8,
    pub phq9: Option<u8>,
    pub msbs_disengagement: Option<f64>,
    pub bps: Option<f64>,
}

impl UserRecord {
    pub fn new(user_id: impl Into<String>, cssrs: u8) -> Self {
        UserRecord {
            user_id: user_id.into(),
            cssrs,
            phq9: None,
            msbs_disengagement: None,
            bps: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.cssrs > 6 {
            return Err(Error::OutOfRange {
                field: "cssrs",
                value: self.cssrs.to_string(),
                range: "0..=6",
            });
        }
        if let Some(p) = self.phq9 {
            if p > 27 {
                return Err(Error::OutOfRange {
                    field: "phq9",
                    value: p.to_string(),
                    range: "0..=27",
                });
            }
        }
        if let Some(m) = self.msbs_disengagement {
            if !(0.0..=6.0).contains(&m) {
                return Err(Error::OutOfRange {
                    field: "msbs_disengagement",
                    value: m.to_string(),
                    range: "[0, 6]",
                });
            }
        }
        if let Some(b) = self.bps {
            if !(b >= 0.0 && b.is_finite()) {
                return Err(Error::OutOfRange {
                    field: "bps",
                    value: b.to_string(),
                    range: ">= 0",
                });
            }
        }
        Ok(())
    }

    /// Looks up a numeric field by its column name.
    pub fn field(&self, name: &str) -> Option<f64> {
        match name {
            "cssrs" => Some(f64::from(self.cssrs)),
            "phq9" => self.phq9.map(f64::from),
            "msbs_disengagement" => self.msbs_disengagement,
            "bps" => self.bps,
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PostFormat {
    Jsonl,
    Csv,
}

impl FromStr for PostFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "jsonl" => Ok(PostFormat::Jsonl),
            "csv" => Ok(PostFormat::Csv),
            other => Err(Error::Config(format!("unknown post format `{other}`"))),
        }
    }
}

/// What the loader dropped on the way in.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub skipped_empty: usize,
}

/// An immutable, validated corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    posts: Vec<Post>,
    users: BTreeMap<String, UserRecord>,
    index: BTreeMap<String, Vec<String>>,
    by_id: HashMap<String, usize>,
}

impl Corpus {
    /// Builds a corpus, enforcing id uniqueness and user references.
    /// Posts whose text is blank after trimming are skipped and counted.
    pub fn new(
        posts: impl IntoIterator<Item = Post>,
        users: BTreeMap<String, UserRecord>,
    ) -> Result<(Self, LoadReport)> {
        let mut report = LoadReport::default();
        let mut kept = Vec::new();
        let mut by_id = HashMap::new();
        let mut index: BTreeMap<String, Vec<String>> =
            users.keys().map(|u| (u.clone(), Vec::new())).collect();

        for post in posts {
            if by_id.contains_key(&post.post_id) {
                return Err(Error::DuplicatePostId(post.post_id));
            }
            if post.text.trim().is_empty() {
                report.skipped_empty += 1;
                // still reserve the id so a later duplicate is caught
                by_id.insert(post.post_id.clone(), usize::MAX);
                continue;
            }
            let Some(bucket) = index.get_mut(&post.user_id) else {
                return Err(Error::UnknownUser {
                    post_id: post.post_id,
                    user_id: post.user_id,
                });
            };
            bucket.push(post.post_id.clone());
            by_id.insert(post.post_id.clone(), kept.len());
            kept.push(post);
        }
        by_id.retain(|_, i| *i != usize::MAX);

        Ok((
            Corpus {
                posts: kept,
                users,
                index,
                by_id,
            },
            report,
        ))
    }

    pub fn posts(&self) -> &[Post] {
        &self.posts
    }

    pub fn users(&self) -> &BTreeMap<String, UserRecord> {
        &self.users
    }

    /// Post ids per user, in load order. Users without posts map to an empty list.
    pub fn index(&self) -> &BTreeMap<String, Vec<String>> {
        &self.index
    }

    pub fn post(&self, post_id: &str) -> Option<&Post> {
        self.by_id.get(post_id).map(|&i| &self.posts[i])
    }

    pub fn user_posts(&self, user_id: &str) -> &[String] {
        self.index.get(user_id).map(Vec::as_slice).unwrap_or(&[])
    }

    /// All post ids sorted lexicographically.
    pub fn sorted_post_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.posts.iter().map(|p| p.post_id.clone()).collect();
        ids.sort();
        ids
    }

    pub fn len(&self) -> usize {
        self.posts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.posts.is_empty()
    }

    /// Returns a copy without users that have no posts.
    pub fn without_silent_users(&self) -> Corpus {
        let users = self
            .users
            .iter()
            .filter(|(u, _)| !self.user_posts(u).is_empty())
            .map(|(u, r)| (u.clone(), r.clone()))
            .collect();
        let (corpus, _) = Corpus::new(self.posts.iter().cloned(), users)
            .expect("subset of a valid corpus is valid");
        corpus
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for post in &self.posts {
            out.push_str(&serde_json::to_string(post)?);
            out.push('\n');
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

pub fn load_posts(path: &Path, format: PostFormat) -> Result<Vec<Post>> {
    match format {
        PostFormat::Jsonl => load_posts_jsonl(path),
        PostFormat::Csv => load_posts_csv(path),
    }
}

fn load_posts_jsonl(path: &Path) -> Result<Vec<Post>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut posts = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let post: Post =
            serde_json::from_str(&line).map_err(|e| Error::parse(path, i + 1, e.to_string()))?;
        posts.push(post);
    }
    Ok(posts)
}

fn load_posts_csv(path: &Path) -> Result<Vec<Post>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut posts = Vec::new();
    for (i, row) in reader.deserialize::<Post>().enumerate() {
        // header is line 1
        posts.push(row.map_err(|e| Error::parse(path, i + 2, e.to_string()))?);
    }
    Ok(posts)
}

/// Loads posts and validates them against an outcome table.
pub fn load_corpus(
    path: &Path,
    format: PostFormat,
    users: BTreeMap<String, UserRecord>,
) -> Result<(Corpus, LoadReport)> {
    let posts = load_posts(path, format)?;
    let (corpus, report) = Corpus::new(posts, users)?;
    if report.skipped_empty > 0 {
        log::warn!(
            "{}: skipped {} post(s) with empty text",
            path.display(),
            report.skipped_empty
        );
    }
    Ok((corpus, report))
}

/// Reads the outcomes CSV.
pub fn load_outcomes(path: &Path) -> Result<BTreeMap<String, UserRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_outcomes(file, path)
}

pub(crate) fn parse_outcomes(
    reader: impl std::io::Read,
    path: &Path,
) -> Result<BTreeMap<String, UserRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let user_col = col("user_id").ok_or_else(|| Error::parse(path, 1, "missing `user_id` column"))?;
    let cssrs_col = col("cssrs").ok_or_else(|| Error::parse(path, 1, "missing `cssrs` column"))?;
    let phq9_col = col("phq9");
    let msbs_col = col("msbs_disengagement");
    let bps_col = col("bps");

    let mut users = BTreeMap::new();
    for (i, row) in reader.records().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| Error::parse(path, line, e.to_string()))?;
        let field = |c: usize| row.get(c).unwrap_or("");
        let optional = |c: Option<usize>| c.map(field).filter(|s| !s.is_empty());

        let user_id = field(user_col).to_string();
        if user_id.is_empty() {
            return Err(Error::parse(path, line, "empty user_id"));
        }
        let cssrs: u8 = field(cssrs_col)
            .parse()
            .map_err(|_| Error::parse(path, line, format!("cssrs `{}` is not an integer", field(cssrs_col))))?;
        let phq9 = optional(phq9_col)
            .map(|s| {
                s.parse::<u8>()
                    .map_err(|_| Error::parse(path, line, format!("phq9 `{s}` is not an integer")))
            })
            .transpose()?;
        let real = |c: Option<usize>, name: &str| -> Result<Option<f64>> {
            optional(c)
                .map(|s| {
                    s.parse::<f64>()
                        .map_err(|_| Error::parse(path, line, format!("{name} `{s}` is not a number")))
                })
                .transpose()
        };
        let record = UserRecord {
            user_id: user_id.clone(),
            cssrs,
            phq9,
            msbs_disengagement: real(msbs_col, "msbs_disengagement")?,
            bps: real(bps_col, "bps")?,
        };
        record.validate().map_err(|e| Error::parse(path, line, e.to_string()))?;
        if users.insert(user_id.clone(), record).is_some() {
            return Err(Error::DuplicateUserId(user_id));
        }
    }
    Ok(users)
}

pub fn write_outcomes(users: &BTreeMap<String, UserRecord>, path: &Path) -> Result<()> {
    let mut out = String::from("user_id,cssrs,phq9,msbs_disengagement,bps\n");
    let opt = |v: Option<String>| v.unwrap_or_default();
    for r in users.values() {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.user_id,
            r.cssrs,
            opt(r.phq9.map(|v| v.to_string())),
            opt(r.msbs_disengagement.map(|v| v.to_string())),
            opt(r.bps.map(|v| v.to_string())),
        ));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::parse(path, 1, format!("{other:?}")),
    }
}
