//! Synthetic corpora with planted structure.
//!
//! Every user has a latent boredom propensity. It raises the share of posts
//! drawn from the boredom vocabulary, feeds a depression score, and through
//! it a suicide-risk score. Risk scores are mapped onto CSSRS levels so that
//! the level counts follow [`CSSRS_MARGINALS`] exactly.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::corpus::{write_outcomes, Post, UserRecord};
use crate::embedding::ScaleDefinition;
use crate::error::{Error, Result};

/// Share of users at each CSSRS level 0..=6, in percent.
pub const CSSRS_MARGINALS: [f64; 7] = [64.01, 10.47, 12.36, 6.08, 2.99, 3.29, 0.8];

pub const BOREDOM_THEME: &str = "boredom";

const THEMES: &[(&str, &[&str])] = &[
    (
        BOREDOM_THEME,
        &[
            "bored", "boring", "boredom", "dull", "nothing", "tedious", "endless", "waiting",
            "monotonous", "empty", "staring", "ceiling", "restless", "pointless", "routine",
        ],
    ),
    (
        "food",
        &[
            "pizza", "dinner", "recipe", "kitchen", "baked", "cheese", "pasta", "lunch", "delicious",
            "soup", "oven", "spicy", "dessert", "breakfast",
        ],
    ),
    (
        "sports",
        &[
            "game", "team", "score", "match", "coach", "season", "goal", "playoffs", "stadium",
            "league", "win", "fans", "referee", "trophy",
        ],
    ),
    (
        "music",
        &[
            "song", "concert", "guitar", "album", "band", "lyrics", "playlist", "drums", "singer",
            "melody", "vinyl", "tour", "chorus", "piano",
        ],
    ),
    (
        "pets",
        &[
            "dog", "puppy", "cat", "kitten", "vet", "leash", "walkies", "treats", "paws", "fur",
            "adopted", "shelter", "collar", "purring",
        ],
    ),
    (
        "weather",
        &[
            "rain", "snow", "sunny", "storm", "forecast", "cold", "heatwave", "umbrella", "thunder",
            "clouds", "windy", "frost", "humid", "drizzle",
        ],
    ),
    (
        "work",
        &[
            "office", "boss", "meeting", "deadline", "project", "salary", "coworkers", "shift",
            "promotion", "email", "overtime", "client", "interview", "payday",
        ],
    ),
    (
        "family",
        &[
            "mom", "dad", "sister", "brother", "grandma", "cousins", "wedding", "birthday", "kids",
            "reunion", "aunt", "uncle", "nephew", "anniversary",
        ],
    ),
    (
        "gaming",
        &[
            "console", "level", "quest", "multiplayer", "controller", "boss", "loot", "stream",
            "speedrun", "respawn", "patch", "arcade", "pixel", "raid",
        ],
    ),
    (
        "travel",
        &[
            "flight", "airport", "beach", "hotel", "passport", "vacation", "island", "roadtrip",
            "luggage", "museum", "tourist", "train", "mountains", "souvenir",
        ],
    ),
    (
        "health",
        &[
            "tired", "sleep", "doctor", "headache", "exhausted", "insomnia", "sad", "hopeless",
            "therapy", "anxious", "energy", "lonely", "appetite", "worthless",
        ],
    ),
];

const FILLER: &[&str] = &[
    "i", "my", "the", "a", "so", "really", "just", "today", "and", "is", "was", "this", "again",
    "some", "very", "now", "feel", "with", "all", "day", "it", "me", "we", "to",
];

/// Generator settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthParams {
    pub n_users: usize,
    pub n_posts: usize,
    pub seed: u64,
    /// Log-scale effect of the latent propensity on boredom posting.
    pub boredom_strength: f64,
    /// Baseline boredom weight relative to an average other theme.
    pub boredom_base: f64,
    /// Chance that a non-boredom post mentions "boring" in passing.
    pub stray_boring_rate: f64,
    pub blank_rate: f64,
    pub attachment_rate: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            n_users: 500,
            n_posts: 10_000,
            seed: 0,
            boredom_strength: 0.9,
            boredom_base: 0.45,
            stray_boring_rate: 0.03,
            blank_rate: 0.005,
            attachment_rate: 0.08,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    /// Includes blank posts, which loaders skip.
    pub posts: Vec<Post>,
    pub users: BTreeMap<String, UserRecord>,
    pub scales: Vec<ScaleDefinition>,
    /// Theme name of every post, keyed by post id.
    pub themes: BTreeMap<String, String>,
}

impl SynthData {
    /// Writes `corpus.jsonl`, `outcomes.csv` and `scales/<name>.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let scales_dir = dir.join("scales");
        std::fs::create_dir_all(&scales_dir).map_err(|e| Error::io(&scales_dir, e))?;
        let mut jsonl = String::new();
        for p in &self.posts {
            jsonl.push_str(&serde_json::to_string(p)?);
            jsonl.push('\n');
        }
        let corpus_path = dir.join("corpus.jsonl");
        std::fs::write(&corpus_path, jsonl).map_err(|e| Error::io(&corpus_path, e))?;
        write_outcomes(&self.users, &dir.join("outcomes.csv"))?;
        for s in &self.scales {
            let path = scales_dir.join(format!("{}.json", s.name));
            let text = serde_json::to_string_pretty(s)? + "\n";
            std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

/// Level counts for `n` users by largest-remainder apportionment of the
/// marginals; remainder ties go to the lower level.
pub fn cssrs_counts(n: usize) -> [usize; 7] {
    let total: f64 = CSSRS_MARGINALS.iter().sum();
    let quotas: Vec<f64> = CSSRS_MARGINALS.iter().map(|p| p / total * n as f64).collect();
    let mut counts = [0usize; 7];
    for (c, q) in counts.iter_mut().zip(&quotas) {
        *c = q.floor() as usize;
    }
    let mut order: Vec<usize> = (0..7).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let short = n - counts.iter().sum::<usize>();
    for &level in order.iter().take(short) {
        counts[level] += 1;
    }
    counts
}

/// Assigns CSSRS levels by rank of `risk`: the lowest scores get level 0.
/// Rank ties are broken by position.
pub fn cssrs_from_risk(risk: &[f64]) -> Vec<u8> {
    let counts = cssrs_counts(risk.len());
    let mut order: Vec<usize> = (0..risk.len()).collect();
    order.sort_by(|&a, &b| risk[a].total_cmp(&risk[b]).then(a.cmp(&b)));
    let mut levels = vec![0u8; risk.len()];
    let mut pos = 0;
    for (level, &count) in counts.iter().enumerate() {
        for &i in &order[pos..pos + count] {
            levels[i] = level as u8;
        }
        pos += count;
    }
    levels
}

pub fn default_scales() -> Vec<ScaleDefinition> {
    let scale = |name: &str, items: &[&str]| ScaleDefinition {
        name: name.to_string(),
        items: items.iter().map(|s| s.to_string()).collect(),
    };
    vec![
        scale(
            "boredom",
            &[
                "I feel bored and restless with nothing to do.",
                "Time feels endless while I am waiting around.",
                "Everything seems dull and pointless to me.",
                "I keep staring at the ceiling feeling empty.",
                "My days are monotonous and tedious.",
                "The same routine leaves me bored.",
                "Nothing holds my attention for long.",
                "I find most things boring lately.",
            ],
        ),
        scale(
            "depression",
            &[
                "I feel sad and hopeless.",
                "I am tired and have little energy.",
                "I have trouble with sleep.",
                "I feel worthless.",
                "My appetite has changed.",
                "I feel lonely and anxious.",
                "I am exhausted most days.",
            ],
        ),
        scale(
            "personality",
            &[
                "Strangers at large parties energize me.",
                "Organizing belongings neatly comes naturally.",
                "Abstract philosophical ideas fascinate me.",
                "Sympathizing with others feels effortless.",
                "Staying composed under pressure is easy.",
                "Artistic experiences move me deeply.",
            ],
        ),
    ]
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

pub fn generate(params: &SynthParams) -> Result<SynthData> {
    if params.n_users == 0 || params.n_posts == 0 {
        return Err(Error::InvalidParams("synthetic corpus needs users and posts".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let n = params.n_users;

    let propensity: Vec<f64> = (0..n).map(|_| normal(&mut rng)).collect();
    let activity: Vec<f64> = (0..n).map(|_| (0.6 * normal(&mut rng)).exp()).collect();
    let theme_weights: Vec<Vec<f64>> = propensity
        .iter()
        .map(|&b| {
            let mut w: Vec<f64> = (0..THEMES.len()).map(|_| rng.random_range(0.2..1.0)).collect();
            w[0] = params.boredom_base * (params.boredom_strength * b).exp();
            w
        })
        .collect();

    let mood: Vec<f64> = propensity.iter().map(|b| 0.6 * b + 0.8 * normal(&mut rng)).collect();
    let risk: Vec<f64> = propensity
        .iter()
        .zip(&mood)
        .map(|(b, m)| 0.45 * m + 0.15 * b + 0.85 * normal(&mut rng))
        .collect();
    let cssrs = cssrs_from_risk(&risk);

    let user_id = |i: usize| format!("u{i:04}");
    let mut users = BTreeMap::new();
    for i in 0..n {
        let b = propensity[i];
        let phq9 = (9.0 + 6.0 * mood[i]).round().clamp(0.0, 27.0) as u8;
        let msbs = ((3.0 + 1.2 * (0.7 * b + 0.7 * normal(&mut rng))).clamp(0.0, 6.0) * 100.0).round() / 100.0;
        let bps = ((100.0 + 15.0 * (0.6 * b + 0.8 * normal(&mut rng))).max(0.0) * 10.0).round() / 10.0;
        let id = user_id(i);
        users.insert(
            id.clone(),
            UserRecord {
                user_id: id,
                cssrs: cssrs[i],
                phq9: Some(phq9),
                msbs_disengagement: Some(msbs),
                bps: Some(bps),
            },
        );
    }

    let total_activity: f64 = activity.iter().sum();
    let mut posts = Vec::with_capacity(params.n_posts);
    let mut themes = BTreeMap::new();
    for j in 0..params.n_posts {
        // activity-weighted author
        let mut pick = rng.random_range(0.0..total_activity);
        let mut author = n - 1;
        for (i, a) in activity.iter().enumerate() {
            if pick < *a {
                author = i;
                break;
            }
            pick -= a;
        }
        let theme = weighted_index(&mut rng, &theme_weights[author]);
        let post_id = format!("p{j:06}");
        let text = if rng.random_bool(params.blank_rate) {
            "   ".to_string()
        } else {
            post_text(&mut rng, theme, params.stray_boring_rate)
        };
        themes.insert(post_id.clone(), THEMES[theme].0.to_string());
        posts.push(Post {
            post_id,
            user_id: user_id(author),
            text,
            has_attachment: rng.random_bool(params.attachment_rate),
        });
    }

    Ok(SynthData {
        posts,
        users,
        scales: default_scales(),
        themes,
    })
}

fn weighted_index(rng: &mut ChaCha8Rng, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut pick = rng.random_range(0.0..total);
    for (i, w) in weights.iter().enumerate() {
        if pick < *w {
            return i;
        }
        pick -= w;
    }
    weights.len() - 1
}

fn post_text(rng: &mut ChaCha8Rng, theme: usize, stray_boring_rate: f64) -> String {
    let vocab = THEMES[theme].1;
    let n_sentences = rng.random_range(1..=3);
    let mut sentences = Vec::with_capacity(n_sentences);
    for s in 0..n_sentences {
        let len = rng.random_range(5..=9);
        let mut words: Vec<&str> = (0..len)
            .map(|_| {
                if rng.random_bool(0.7) {
                    vocab[rng.random_range(0..vocab.len())]
                } else {
                    FILLER[rng.random_range(0..FILLER.len())]
                }
            })
            .collect();
        if theme != 0 && s == 0 && rng.random_bool(stray_boring_rate) {
            words.extend(["so", "boring"]);
        }
        let mut sentence = words.join(" ");
        if let Some(first) = sentence.get(0..1) {
            sentence.replace_range(0..1, &first.to_uppercase());
        }
        let last = s + 1 == n_sentences;
        let terminator = match rng.random_range(0..10) {
            0..=5 => ".",
            6..=7 => "!",
            8 => "?",
            _ if last => "",
            _ => ".",
        };
        sentence.push_str(terminator);
        sentences.push(sentence);
    }
    sentences.join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_for_1006_users() {
        assert_eq!(cssrs_counts(1006), [644, 105, 125, 61, 30, 33, 8]);
        for n in [1, 7, 100, 1006, 5000] {
            assert_eq!(cssrs_counts(n).iter().sum::<usize>(), n);
        }
    }

    #[test]
    fn levels_follow_risk_rank() {
        let risk: Vec<f64> = (0..1006).map(|i| ((i * 7919) % 1006) as f64).collect();
        let levels = cssrs_from_risk(&risk);
        let mut hist = [0usize; 7];
        for l in &levels {
            hist[*l as usize] += 1;
        }
        assert_eq!(hist, cssrs_counts(1006));
        let max_zero = risk.iter().zip(&levels).filter(|(_, l)| **l == 0).map(|(r, _)| *r).fold(f64::MIN, f64::max);
        let min_one = risk.iter().zip(&levels).filter(|(_, l)| **l == 1).map(|(r, _)| *r).fold(f64::MAX, f64::min);
        assert!(max_zero < min_one);
    }

    #[test]
    fn generation_is_deterministic_and_valid() {
        let params = SynthParams { n_users: 40, n_posts: 300, seed: 5, ..Default::default() };
        let a = generate(&params).unwrap();
        assert_eq!(a, generate(&params).unwrap());
        assert_eq!(a.posts.len(), 300);
        assert!(a.users.values().all(|u| u.validate().is_ok()));
        assert!(a.posts.iter().filter(|p| !p.text.trim().is_empty()).all(|p| p.text.split_whitespace().count() >= 5));
        assert!(a.scales.iter().all(|s| s.validate().is_ok()));
    }
}
