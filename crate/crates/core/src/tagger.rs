//! A nearest-neighbour token tagger over hashed character n-gram context
//! features, plus import of predictions made by external models.
//!
//! Features for token `i` are the lowercased character n-grams of the tokens
//! at offsets `-window..=window`, each keyed by its offset, plus one
//! whole-word feature per position. Tokens are padded with `^`/`$` before
//! n-gram extraction; positions past either sentence edge contribute a
//! single boundary feature. Keys are hashed with 64-bit FNV-1a over
//! `"<offset>|<feature>"` and masked to `hash_bits` bits. Counts are scaled
//! by `center_weight` at offset 0 and the vector is L2-normalized.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use rayon::prelude::*;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{parse_conll_with, validate_iob, Dataset, IobPolicy, Tag, Token};

pub const MODEL_HEADER: &str = "nerforge-nn-model";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TaggerError {
    #[error("training set is empty")]
    EmptyTraining,
    #[error("prediction file has {found} sentences, reference has {expected}")]
    SentenceCount { expected: usize, found: usize },
    #[error("sentence {sentence}, token {index}: expected `{expected}`, found `{found}`")]
    Alignment {
        sentence: usize,
        index: usize,
        expected: String,
        found: String,
    },
    #[error("prediction file: {0}")]
    Parse(String),
    #[error("model snapshot line {line}: {reason}")]
    Snapshot { line: usize, reason: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureConfig {
    pub ngram_sizes: Vec<usize>,
    pub window: usize,
    pub hash_bits: u32,
    /// Neighbours consulted per token; ties always go to the earliest exemplar.
    pub k: usize,
    pub center_weight: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            ngram_sizes: vec![2, 3, 4],
            window: 2,
            hash_bits: 20,
            k: 1,
            center_weight: 3.0,
        }
    }
}

/// Sparse, L2-normalized, sorted by feature id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeatureVector(Vec<(u32, f64)>);

impl FeatureVector {
    pub fn entries(&self) -> &[(u32, f64)] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|(_, w)| w * w).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &FeatureVector) -> f64 {
        let (a, b) = (&self.0, &other.0);
        let (mut i, mut j, mut acc) = (0, 0, 0.0);
        while i < a.len() && j < b.len() {
            match a[i].0.cmp(&b[j].0) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    acc += a[i].1 * b[j].1;
                    i += 1;
                    j += 1;
                }
            }
        }
        acc
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn hash_feature(offset: isize, feature: &str, bits: u32) -> u32 {
    let key = format!("{offset}|{feature}");
    (fnv1a(key.as_bytes()) & ((1u64 << bits) - 1)) as u32
}

/// Features of the token at `i` in `tokens`.
pub fn featurize_token(tokens: &[Token], i: usize, cfg: &FeatureConfig) -> FeatureVector {
    let mut counts: BTreeMap<u32, f64> = BTreeMap::new();
    let w = cfg.window as isize;
    for offset in -w..=w {
        let weight = if offset == 0 { cfg.center_weight } else { 1.0 };
        let mut add = |feature: &str| {
            *counts.entry(hash_feature(offset, feature, cfg.hash_bits)).or_default() += weight;
        };
        let pos = i as isize + offset;
        if pos < 0 {
            add("<s>");
            continue;
        }
        let Some(token) = tokens.get(pos as usize) else {
            add("</s>");
            continue;
        };
        let lower = token.as_str().to_lowercase();
        add(&format!("w:{lower}"));
        let padded: Vec<char> = format!("^{lower}$").chars().collect();
        for &n in &cfg.ngram_sizes {
            if n == 0 || padded.len() < n {
                continue;
            }
            for gram in padded.windows(n) {
                add(&gram.iter().collect::<String>());
            }
        }
    }
    let norm = counts.values().map(|c| c * c).sum::<f64>().sqrt();
    FeatureVector(counts.into_iter().map(|(k, c)| (k, c / norm)).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct NnModel {
    exemplars: Vec<(FeatureVector, Tag)>,
    label_set: BTreeSet<String>,
    cfg: FeatureConfig,
    index: HashMap<u32, Vec<(u32, f64)>>,
}

fn build_index(exemplars: &[(FeatureVector, Tag)]) -> HashMap<u32, Vec<(u32, f64)>> {
    let mut index: HashMap<u32, Vec<(u32, f64)>> = HashMap::new();
    for (e, (v, _)) in exemplars.iter().enumerate() {
        for &(f, w) in v.entries() {
            index.entry(f).or_default().push((e as u32, w));
        }
    }
    index
}

/// One exemplar per training token.
pub fn fit(train: &Dataset, cfg: &FeatureConfig) -> Result<NnModel, TaggerError> {
    if train.sentences().iter().all(|s| s.is_empty()) {
        return Err(TaggerError::EmptyTraining);
    }
    let exemplars: Vec<(FeatureVector, Tag)> = train
        .sentences()
        .par_iter()
        .flat_map_iter(|s| {
            (0..s.len()).map(move |i| (featurize_token(s.tokens(), i, cfg), s.tags()[i].clone()))
        })
        .collect();
    let index = build_index(&exemplars);
    Ok(NnModel {
        exemplars,
        label_set: train.label_set().clone(),
        cfg: cfg.clone(),
        index,
    })
}

impl NnModel {
    pub fn exemplars(&self) -> &[(FeatureVector, Tag)] {
        &self.exemplars
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.cfg
    }

    pub fn label_set(&self) -> &BTreeSet<String> {
        &self.label_set
    }

    /// `O` plus `B-`/`I-` for every label.
    pub fn tag_set(&self) -> BTreeSet<Tag> {
        std::iter::once(Tag::Outside)
            .chain(self.label_set.iter().flat_map(|l| [Tag::Begin(l.clone()), Tag::Inside(l.clone())]))
            .collect()
    }

    /// Index of the nearest exemplar (ties and zero overlap go to the earliest).
    pub fn nearest(&self, query: &FeatureVector) -> usize {
        self.ranked(query, 1).first().map_or(0, |&(e, _)| e)
    }

    /// Top `k` exemplars with non-zero similarity, by similarity then index.
    fn ranked(&self, query: &FeatureVector, k: usize) -> Vec<(usize, f64)> {
        let mut scores: HashMap<u32, f64> = HashMap::new();
        for &(f, qw) in query.entries() {
            if let Some(postings) = self.index.get(&f) {
                for &(e, w) in postings {
                    *scores.entry(e).or_default() += qw * w;
                }
            }
        }
        let mut ranked: Vec<(usize, f64)> = scores.into_iter().map(|(e, s)| (e as usize, s)).collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        ranked.truncate(k.max(1));
        ranked
    }

    fn predict_token(&self, query: &FeatureVector) -> Tag {
        if self.cfg.k <= 1 {
            return self.exemplars[self.nearest(query)].1.clone();
        }
        let ranked = self.ranked(query, self.cfg.k);
        if ranked.is_empty() {
            return self.exemplars[0].1.clone();
        }
        // similarity-weighted vote; ties go to the tag of the earliest exemplar
        let mut votes: Vec<(&Tag, f64, usize)> = Vec::new();
        for &(e, s) in &ranked {
            let tag = &self.exemplars[e].1;
            match votes.iter_mut().find(|(t, _, _)| *t == tag) {
                Some(v) => {
                    v.1 += s;
                    v.2 = v.2.min(e);
                }
                None => votes.push((tag, s, e)),
            }
        }
        votes
            .into_iter()
            .max_by(|a, b| a.1.total_cmp(&b.1).then(b.2.cmp(&a.2)))
            .map(|(t, _, _)| t.clone())
            .expect("non-empty")
    }

    pub fn predict(&self, tokens: &[Token]) -> Vec<Tag> {
        let raw: Vec<Tag> = (0..tokens.len())
            .map(|i| self.predict_token(&featurize_token(tokens, i, &self.cfg)))
            .collect();
        validate_iob(&raw, IobPolicy::Repair).expect("repair never fails")
    }

    pub fn predict_dataset(&self, ds: &Dataset, model_name: &str) -> PredictionSet {
        let tags = ds
            .sentences()
            .par_iter()
            .map(|s| self.predict(s.tokens()))
            .collect();
        PredictionSet {
            corpus_ref: corpus_ref(ds),
            model_name: model_name.to_string(),
            tags,
        }
    }

    /// Versioned text snapshot.
    pub fn to_snapshot(&self) -> String {
        let join = |xs: &mut dyn Iterator<Item = String>| xs.collect::<Vec<_>>().join(",");
        let mut out = format!("{MODEL_HEADER} {MODEL_VERSION}\n");
        let c = &self.cfg;
        let _ = writeln!(out, "ngrams {}", join(&mut c.ngram_sizes.iter().map(|n| n.to_string())));
        let _ = writeln!(out, "window {}", c.window);
        let _ = writeln!(out, "hash_bits {}", c.hash_bits);
        let _ = writeln!(out, "k {}", c.k);
        let _ = writeln!(out, "center_weight {}", c.center_weight);
        let _ = writeln!(out, "labels {}", join(&mut self.label_set.iter().cloned()));
        let _ = writeln!(out, "exemplars {}", self.exemplars.len());
        for (v, tag) in &self.exemplars {
            out.push_str(&tag.to_string());
            out.push('\t');
            let feats: Vec<String> = v.entries().iter().map(|(f, w)| format!("{f}:{w}")).collect();
            out.push_str(&feats.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn from_snapshot(text: &str) -> Result<Self, TaggerError> {
        let err = |line: usize, reason: &str| TaggerError::Snapshot {
            line,
            reason: reason.to_string(),
        };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let (_, header) = lines.next().ok_or_else(|| err(1, "empty snapshot"))?;
        if header != format!("{MODEL_HEADER} {MODEL_VERSION}") {
            return Err(err(1, &format!("unsupported header `{header}`")));
        }
        let mut field = |name: &str| -> Result<(usize, String), TaggerError> {
            let (n, line) = lines.next().ok_or_else(|| err(0, &format!("missing `{name}`")))?;
            let value = line
                .strip_prefix(name)
                .and_then(|r| r.strip_prefix(' ').or(Some(r).filter(|r| r.is_empty())))
                .ok_or_else(|| err(n, &format!("expected `{name}`")))?;
            Ok((n, value.to_string()))
        };
        let num = |(n, v): (usize, String)| v.parse::<usize>().map_err(|_| err(n, "bad number"));
        let (n, ngrams) = field("ngrams")?;
        let ngram_sizes = ngrams
            .split(',')
            .map(|s| s.parse().map_err(|_| err(n, "bad n-gram size")))
            .collect::<Result<_, _>>()?;
        let window = num(field("window")?)?;
        let hash_bits = num(field("hash_bits")?)? as u32;
        let k = num(field("k")?)?;
        let (n, cw) = field("center_weight")?;
        let center_weight = cw.parse().map_err(|_| err(n, "bad weight"))?;
        let (_, labels) = field("labels")?;
        let label_set = labels.split(',').filter(|s| !s.is_empty()).map(str::to_string).collect();
        let count = num(field("exemplars")?)?;

        let mut exemplars = Vec::with_capacity(count);
        for (n, line) in lines {
            let (tag, feats) = line.split_once('\t').ok_or_else(|| err(n, "expected tag<TAB>features"))?;
            let tag: Tag = tag.parse().map_err(|_| err(n, "bad tag"))?;
            let entries = feats
                .split_whitespace()
                .map(|fw| {
                    let (f, w) = fw.split_once(':')?;
                    Some((f.parse().ok()?, w.parse().ok()?))
                })
                .collect::<Option<Vec<(u32, f64)>>>()
                .ok_or_else(|| err(n, "bad feature"))?;
            exemplars.push((FeatureVector(entries), tag));
        }
        if exemplars.len() != count {
            return Err(err(0, &format!("expected {count} exemplars, found {}", exemplars.len())));
        }
        let index = build_index(&exemplars);
        Ok(NnModel {
            exemplars,
            label_set,
            cfg: FeatureConfig {
                ngram_sizes,
                window,
                hash_bits,
                k,
                center_weight,
            },
            index,
        })
    }
}

/// Digest of a corpus' token sequence; prediction sets over the same tokens share it.
pub fn corpus_ref(ds: &Dataset) -> String {
    let mut h = Sha256::new();
    for s in ds.sentences() {
        for t in s.tokens() {
            h.update(t.as_str().as_bytes());
            h.update([0x1f]);
        }
        h.update([0x1e]);
    }
    hex::encode(&h.finalize()[..8])
}

/// Per-sentence tags aligned to a reference corpus; every sequence is IOB-valid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PredictionSet {
    pub corpus_ref: String,
    pub model_name: String,
    tags: Vec<Vec<Tag>>,
}

impl PredictionSet {
    /// Wraps tag sequences, repairing any IOB violations.
    pub fn new(corpus_ref: String, model_name: String, tags: Vec<Vec<Tag>>) -> Self {
        let tags = tags
            .into_iter()
            .map(|t| validate_iob(&t, IobPolicy::Repair).expect("repair never fails"))
            .collect();
        PredictionSet {
            corpus_ref,
            model_name,
            tags,
        }
    }

    pub fn tags(&self) -> &[Vec<Tag>] {
        &self.tags
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    /// CoNLL text using the reference tokens.
    pub fn to_conll(&self, reference: &Dataset) -> String {
        let mut out = String::new();
        for (s, tags) in reference.sentences().iter().zip(&self.tags) {
            for (tok, tag) in s.tokens().iter().zip(tags) {
                let _ = writeln!(out, "{tok}\t{tag}");
            }
            out.push('\n');
        }
        out
    }
}

/// Reads an external model's CoNLL predictions, checking tokens position-for-position.
pub fn import_predictions(
    text: &str,
    reference: &Dataset,
    model_name: &str,
) -> Result<PredictionSet, TaggerError> {
    let ds = parse_conll_with(text, IobPolicy::Repair).map_err(|e| TaggerError::Parse(e.to_string()))?;
    if ds.len() != reference.len() {
        return Err(TaggerError::SentenceCount {
            expected: reference.len(),
            found: ds.len(),
        });
    }
    for (si, (got, want)) in ds.sentences().iter().zip(reference.sentences()).enumerate() {
        let n = got.len().max(want.len());
        for i in 0..n {
            let g = got.tokens().get(i).map_or("<missing>", Token::as_str);
            let w = want.tokens().get(i).map_or("<missing>", Token::as_str);
            if g != w {
                return Err(TaggerError::Alignment {
                    sentence: si,
                    index: i,
                    expected: w.to_string(),
                    found: g.to_string(),
                });
            }
        }
    }
    Ok(PredictionSet::new(
        corpus_ref(reference),
        model_name.to_string(),
        ds.into_sentences().into_iter().map(|s| s.tags().to_vec()).collect(),
    ))
}
