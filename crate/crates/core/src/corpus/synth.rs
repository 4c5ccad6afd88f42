//! Synthetic corpus generator.
//!
//! Emits review and metadata files in the same line-delimited layout the
//! ingest stage consumes, so the whole pipeline runs unchanged on generated
//! data. The construction plants a recoverable personalization signal:
//!
//! * aspects are paired into groups; category paths (and therefore queries)
//!   name only the group, never the aspect;
//! * each user prefers one aspect and mostly buys items currently dominated
//!   by it; review text is drawn from that aspect's vocabulary;
//! * with `drift` enabled, half of the items switch to the partner aspect of
//!   their group halfway through the timeline, so old item reviews describe
//!   a stale aspect and review recency carries signal.
//!
//! Ground-truth labels (user/item aspects, per-purchase aspects, the aspect
//! vocabularies) are kept in a line-delimited sidecar for plausibility
//! checks downstream.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::CorpusError;

const NOISE_VOCAB: usize = 64;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SynthConfig {
    pub users: usize,
    pub items: usize,
    pub aspects: usize,
    /// Aspects per category group; queries name only the group.
    pub group_size: usize,
    pub vocab_per_aspect: usize,
    pub reviews_per_user: usize,
    /// Tokens per generated review.
    pub review_len: usize,
    /// Fraction of tokens drawn from the noise vocabulary.
    pub noise_rate: f64,
    /// Fraction of non-noise tokens that are the group keyword.
    pub cat_rate: f64,
    /// Probability a purchase follows the user's preferred aspect.
    pub pref_strength: f64,
    /// Switch half the items to their partner aspect mid-timeline.
    pub drift: bool,
    /// The k-core the downstream pipeline will apply; used for feasibility
    /// checks only.
    pub k_core: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            users: 200,
            items: 100,
            aspects: 8,
            group_size: 4,
            vocab_per_aspect: 30,
            reviews_per_user: 8,
            review_len: 12,
            noise_rate: 0.2,
            cat_rate: 0.15,
            pref_strength: 0.9,
            drift: false,
            k_core: 5,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), CorpusError> {
        let fail = |m: String| Err(CorpusError::InfeasibleConfig(m));
        if self.aspects < 2 {
            return fail(format!("aspects = {} but at least 2 are required", self.aspects));
        }
        if self.group_size < 1 {
            return fail("group_size must be at least 1".to_string());
        }
        if self.items < 2 * self.aspects {
            return fail(format!(
                "items = {} cannot cover {} aspects twice over",
                self.items, self.aspects
            ));
        }
        if self.reviews_per_user < self.k_core {
            return fail(format!(
                "reviews_per_user = {} is below the k-core target {}; every user would be filtered out",
                self.reviews_per_user, self.k_core
            ));
        }
        if self.vocab_per_aspect < 2 {
            return fail("vocab_per_aspect must be at least 2".to_string());
        }
        if !(0.0..=1.0).contains(&self.noise_rate) {
            return fail(format!("noise_rate = {} outside [0, 1]", self.noise_rate));
        }
        if !(0.0..=1.0).contains(&self.pref_strength) {
            return fail(format!("pref_strength = {} outside [0, 1]", self.pref_strength));
        }
        Ok(())
    }
}

/// Ground-truth labels for the generated corpus.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct Sidecar {
    /// Per aspect: its word list (the group keyword is a member).
    pub aspect_vocab: Vec<Vec<String>>,
    pub group_keywords: Vec<String>,
    pub noise_vocab: Vec<String>,
    /// user id -> preferred aspect.
    pub user_aspect: Vec<(String, usize)>,
    /// item id, base aspect, aspect drifted to (if any), group.
    pub item_aspect: Vec<ItemAspect>,
    /// One label per generated review, in emission order.
    pub purchases: Vec<PurchaseLabel>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ItemAspect {
    pub item: String,
    pub base_aspect: usize,
    pub drift_to: Option<usize>,
    pub group: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PurchaseLabel {
    pub user: String,
    pub item: String,
    pub time: i64,
    pub aspect: usize,
}

impl Sidecar {
    pub fn user_aspect_of(&self, user: &str) -> Option<usize> {
        self.user_aspect
            .iter()
            .find(|(u, _)| u == user)
            .map(|(_, a)| *a)
    }

    pub fn save(&self, path: &Path) -> Result<(), CorpusError> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        for (a, words) in self.aspect_vocab.iter().enumerate() {
            writeln!(w, "{}", json!({"kind": "aspect", "aspect": a, "words": words}))?;
        }
        writeln!(
            w,
            "{}",
            json!({"kind": "groups", "keywords": self.group_keywords})
        )?;
        writeln!(w, "{}", json!({"kind": "noise", "words": self.noise_vocab}))?;
        for (user, aspect) in &self.user_aspect {
            writeln!(w, "{}", json!({"kind": "user", "user": user, "aspect": aspect}))?;
        }
        for ia in &self.item_aspect {
            writeln!(
                w,
                "{}",
                json!({"kind": "item", "item": ia.item, "aspect": ia.base_aspect,
                       "drift_to": ia.drift_to, "group": ia.group})
            )?;
        }
        for p in &self.purchases {
            writeln!(
                w,
                "{}",
                json!({"kind": "review", "user": p.user, "item": p.item,
                       "time": p.time, "aspect": p.aspect})
            )?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Sidecar, CorpusError> {
        let mut side = Sidecar::default();
        let reader = BufReader::new(fs::File::open(path)?);
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let v: serde_json::Value =
                serde_json::from_str(&line).map_err(|e| CorpusError::Malformed {
                    path: path.to_path_buf(),
                    message: format!("line {}: {e}", lineno + 1),
                })?;
            let bad = |m: &str| CorpusError::Malformed {
                path: path.to_path_buf(),
                message: format!("line {}: {m}", lineno + 1),
            };
            let kind = v["kind"].as_str().ok_or_else(|| bad("missing kind"))?;
            match kind {
                "aspect" => {
                    let a = v["aspect"].as_u64().ok_or_else(|| bad("missing aspect"))? as usize;
                    let words: Vec<String> =
                        serde_json::from_value(v["words"].clone()).map_err(|_| bad("bad words"))?;
                    if side.aspect_vocab.len() <= a {
                        side.aspect_vocab.resize(a + 1, Vec::new());
                    }
                    side.aspect_vocab[a] = words;
                }
                "groups" => {
                    side.group_keywords = serde_json::from_value(v["keywords"].clone())
                        .map_err(|_| bad("bad keywords"))?;
                }
                "noise" => {
                    side.noise_vocab = serde_json::from_value(v["words"].clone())
                        .map_err(|_| bad("bad words"))?;
                }
                "user" => {
                    side.user_aspect.push((
                        v["user"].as_str().ok_or_else(|| bad("missing user"))?.to_string(),
                        v["aspect"].as_u64().ok_or_else(|| bad("missing aspect"))? as usize,
                    ));
                }
                "item" => {
                    side.item_aspect.push(ItemAspect {
                        item: v["item"].as_str().ok_or_else(|| bad("missing item"))?.to_string(),
                        base_aspect: v["aspect"].as_u64().ok_or_else(|| bad("missing aspect"))?
                            as usize,
                        drift_to: v["drift_to"].as_u64().map(|d| d as usize),
                        group: v["group"].as_u64().ok_or_else(|| bad("missing group"))? as usize,
                    });
                }
                "review" => {
                    side.purchases.push(PurchaseLabel {
                        user: v["user"].as_str().ok_or_else(|| bad("missing user"))?.to_string(),
                        item: v["item"].as_str().ok_or_else(|| bad("missing item"))?.to_string(),
                        time: v["time"].as_i64().ok_or_else(|| bad("missing time"))?,
                        aspect: v["aspect"].as_u64().ok_or_else(|| bad("missing aspect"))?
                            as usize,
                    });
                }
                other => return Err(bad(&format!("unknown kind {other:?}"))),
            }
        }
        Ok(side)
    }
}

/// A generated corpus, in the raw (pre-ingest) representation.
#[derive(Debug)]
pub struct SyntheticCorpus {
    /// JSON lines in the review input layout.
    pub review_lines: Vec<String>,
    /// JSON lines in the metadata input layout.
    pub meta_lines: Vec<String>,
    pub sidecar: Sidecar,
}

impl SyntheticCorpus {
    pub fn write_reviews(&self, path: &Path) -> Result<(), CorpusError> {
        write_lines(path, &self.review_lines)
    }

    pub fn write_meta(&self, path: &Path) -> Result<(), CorpusError> {
        write_lines(path, &self.meta_lines)
    }
}

fn write_lines(path: &Path, lines: &[String]) -> Result<(), CorpusError> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for line in lines {
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

/// The aspect an item exhibits at time `t`.
fn current_aspect(ia: &ItemAspect, t: i64, midpoint: i64) -> usize {
    match ia.drift_to {
        Some(to) if t >= midpoint => to,
        _ => ia.base_aspect,
    }
}

/// Generate a synthetic corpus. Deterministic under `seed`.
pub fn generate_synthetic(cfg: &SynthConfig, seed: u64) -> Result<SyntheticCorpus, CorpusError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let size = cfg.group_size.min(cfg.aspects);
    let groups = cfg.aspects.div_ceil(size);
    let group_of = |aspect: usize| aspect / size;
    // the next aspect within the same group, when the group has more than one
    let partner = |aspect: usize| {
        let start = (aspect / size) * size;
        let span = size.min(cfg.aspects - start);
        (span > 1).then(|| start + (aspect - start + 1) % span)
    };

    let group_keywords: Vec<String> = (0..groups).map(|g| format!("group{g}")).collect();
    let aspect_vocab: Vec<Vec<String>> = (0..cfg.aspects)
        .map(|a| {
            let mut words: Vec<String> = (0..cfg.vocab_per_aspect)
                .map(|j| format!("a{a}w{j}"))
                .collect();
            words.push(group_keywords[group_of(a)].clone());
            words
        })
        .collect();
    let noise_vocab: Vec<String> = (0..NOISE_VOCAB).map(|j| format!("noise{j}")).collect();

    let item_aspect: Vec<ItemAspect> = (0..cfg.items)
        .map(|idx| {
            let base = idx % cfg.aspects;
            // drift and the edition path tag both vary by item row but are
            // decoupled from each other
            let drifts = cfg.drift && (idx / cfg.aspects) % 4 >= 2;
            ItemAspect {
                item: format!("i{idx:04}"),
                base_aspect: base,
                drift_to: if drifts { partner(base) } else { None },
                group: group_of(base),
            }
        })
        .collect();
    let user_aspect: Vec<(String, usize)> = (0..cfg.users)
        .map(|idx| (format!("u{idx:04}"), idx % cfg.aspects))
        .collect();

    let total_steps = (cfg.users * cfg.reviews_per_user) as i64;
    let midpoint = total_steps / 2;

    // Items grouped by the aspect they exhibit before/after the midpoint.
    let mut items_by_aspect_early: Vec<Vec<usize>> = vec![Vec::new(); cfg.aspects];
    let mut items_by_aspect_late: Vec<Vec<usize>> = vec![Vec::new(); cfg.aspects];
    for (idx, ia) in item_aspect.iter().enumerate() {
        items_by_aspect_early[ia.base_aspect].push(idx);
        items_by_aspect_late[current_aspect(ia, midpoint, midpoint)].push(idx);
    }
    for a in 0..cfg.aspects {
        if items_by_aspect_early[a].is_empty() || items_by_aspect_late[a].is_empty() {
            return Err(CorpusError::InfeasibleConfig(format!(
                "aspect {a} has no items in part of the timeline"
            )));
        }
    }

    let mut review_lines = Vec::new();
    let mut purchases = Vec::new();
    let mut bought: Vec<Vec<bool>> = vec![vec![false; cfg.items]; cfg.users];
    let mut purchase_counts = vec![0u32; cfg.items];

    for round in 0..cfg.reviews_per_user {
        for u in 0..cfg.users {
            let t = (round * cfg.users + u) as i64 + 1;
            let preferred = user_aspect[u].1;
            let aspect = if rng.gen::<f64>() < cfg.pref_strength || cfg.aspects == 1 {
                preferred
            } else {
                // uniform over the other aspects
                let mut a = rng.gen_range(0..cfg.aspects - 1);
                if a >= preferred {
                    a += 1;
                }
                a
            };
            let pool = if t >= midpoint {
                &items_by_aspect_late[aspect]
            } else {
                &items_by_aspect_early[aspect]
            };
            // two-choice draw toward the less-purchased item keeps review
            // counts balanced; retry a few times to avoid repeat purchases
            let mut pick = pool[rng.gen_range(0..pool.len())];
            for _ in 0..8 {
                let other = pool[rng.gen_range(0..pool.len())];
                let better = if bought[u][pick] != bought[u][other] {
                    // prefer the unbought one
                    if bought[u][pick] { other } else { pick }
                } else if purchase_counts[other] < purchase_counts[pick] {
                    other
                } else {
                    pick
                };
                pick = better;
                if !bought[u][pick] {
                    break;
                }
            }
            bought[u][pick] = true;
            purchase_counts[pick] += 1;

            let ia = &item_aspect[pick];
            let kw = &group_keywords[ia.group];
            let words = &aspect_vocab[aspect];
            let mut tokens = Vec::with_capacity(cfg.review_len);
            for _ in 0..cfg.review_len {
                let r = rng.gen::<f64>();
                if r < cfg.noise_rate {
                    tokens.push(noise_vocab[rng.gen_range(0..noise_vocab.len())].clone());
                } else if r < cfg.noise_rate + (1.0 - cfg.noise_rate) * cfg.cat_rate {
                    tokens.push(kw.clone());
                } else {
                    // exclude the trailing group keyword from the draw so
                    // cat_rate alone controls its frequency
                    tokens.push(words[rng.gen_range(0..cfg.vocab_per_aspect)].clone());
                }
            }
            let rating = 3.0 + rng.gen_range(0..=2) as f64;
            review_lines.push(
                json!({
                    "reviewerID": user_aspect[u].0,
                    "asin": ia.item,
                    "reviewText": tokens.join(" "),
                    "unixReviewTime": t,
                    "overall": rating,
                })
                .to_string(),
            );
            purchases.push(PurchaseLabel {
                user: user_aspect[u].0.clone(),
                item: ia.item.clone(),
                time: t,
                aspect,
            });
        }
    }

    let meta_lines: Vec<String> = item_aspect
        .iter()
        .enumerate()
        .map(|(idx, ia)| {
            let kw = &group_keywords[ia.group];
            let final_aspect = current_aspect(ia, total_steps, midpoint);
            let desc_words: Vec<&str> = std::iter::once(kw.as_str())
                .chain(aspect_vocab[final_aspect][..4].iter().map(String::as_str))
                .collect();
            // two paths per item: the group alone plus a group/edition leaf,
            // so the query pool is wide enough for a 70/30 split
            json!({
                "asin": ia.item,
                "categories": [
                    ["market", kw],
                    ["market", kw, format!("edition{}", (idx / cfg.aspects) % 2)],
                ],
                "description": desc_words.join(" "),
            })
            .to_string()
        })
        .collect();

    Ok(SyntheticCorpus {
        review_lines,
        meta_lines,
        sidecar: Sidecar {
            aspect_vocab,
            group_keywords,
            noise_vocab,
            user_aspect,
            item_aspect,
            purchases,
        },
    })
}
