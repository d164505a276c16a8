//! Combining hard predictions from several taggers: per-token weighted
//! voting, unanimous span intersection, and an exhaustive search for the
//! combination that scores best on a development set.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use thiserror::Error;

use crate::corpus::{span_keys, validate_iob, Dataset, EntitySpan, IobPolicy, Tag};
use crate::eval::{evaluate_tags, EvalError, EvalReport};
use crate::tagger::PredictionSet;

/// Largest member pool `select_best_ensemble` will search exhaustively.
pub const MAX_SEARCH_MEMBERS: usize = 8;
pub const DEFAULT_WEIGHT_GRID: [f64; 3] = [1.0, 2.0, 3.0];

const REL_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnsembleError {
    #[error("no members")]
    NoMembers,
    #[error("{mode} needs at least {min} members, got {got}")]
    TooFewMembers { mode: EnsembleMode, min: usize, got: usize },
    #[error("search over {0} members exceeds the limit of {MAX_SEARCH_MEMBERS}")]
    TooManyMembers(usize),
    #[error("member `{member}` is not aligned with `{first}`: {reason}")]
    Misaligned {
        first: String,
        member: String,
        reason: String,
    },
    #[error("{members} members but {weights} weights")]
    WeightCount { members: usize, weights: usize },
    #[error("weights must be finite, non-negative and sum above zero")]
    BadWeights,
    #[error("weight grid must hold at least one positive finite value")]
    BadGrid,
    #[error("unknown ensemble mode `{0}`")]
    UnknownMode(String),
    #[error("no predictions named `{0}`")]
    UnknownMember(String),
    #[error("duplicate member `{0}`")]
    DuplicateMember(String),
    #[error("ensemble config: {0}")]
    Config(String),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EnsembleMode {
    WeightedVote,
    Intersection,
}

impl EnsembleMode {
    pub fn as_str(self) -> &'static str {
        match self {
            EnsembleMode::WeightedVote => "weighted_vote",
            EnsembleMode::Intersection => "intersection",
        }
    }

    fn min_members(self) -> usize {
        match self {
            EnsembleMode::WeightedVote => 1,
            EnsembleMode::Intersection => 2,
        }
    }
}

impl fmt::Display for EnsembleMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EnsembleMode {
    type Err = EnsembleError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "weighted_vote" | "vote" => Ok(EnsembleMode::WeightedVote),
            "intersection" | "intersect" => Ok(EnsembleMode::Intersection),
            other => Err(EnsembleError::UnknownMode(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleConfig {
    pub mode: EnsembleMode,
    pub members: Vec<String>,
    /// Empty for intersection.
    pub weights: Vec<f64>,
}

impl EnsembleConfig {
    pub fn vote(members: Vec<String>, weights: Vec<f64>) -> Result<Self, EnsembleError> {
        let cfg = EnsembleConfig {
            mode: EnsembleMode::WeightedVote,
            members,
            weights,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn intersection(members: Vec<String>) -> Result<Self, EnsembleError> {
        let cfg = EnsembleConfig {
            mode: EnsembleMode::Intersection,
            members,
            weights: Vec::new(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), EnsembleError> {
        if self.members.is_empty() {
            return Err(EnsembleError::NoMembers);
        }
        if self.members.len() < self.mode.min_members() {
            return Err(EnsembleError::TooFewMembers {
                mode: self.mode,
                min: self.mode.min_members(),
                got: self.members.len(),
            });
        }
        let mut seen = BTreeSet::new();
        for m in &self.members {
            if !seen.insert(m) {
                return Err(EnsembleError::DuplicateMember(m.clone()));
            }
        }
        if self.mode == EnsembleMode::WeightedVote {
            check_weights(self.members.len(), &self.weights)?;
        }
        Ok(())
    }

    /// Canonical one-line form, also the final tie-break key in the search.
    pub fn encoding(&self) -> String {
        let weights: Vec<String> = self.weights.iter().map(|w| format!("{w:.6}")).collect();
        format!("{}|{}|{}", self.mode, self.members.join(","), weights.join(","))
    }

    /// `ensemble.*` lines for a pipeline config file.
    pub fn to_kv(&self) -> String {
        let mut out = format!(
            "ensemble.mode = {}\nensemble.members = {}\n",
            self.mode,
            self.members.join(",")
        );
        if self.mode == EnsembleMode::WeightedVote {
            let weights: Vec<String> = self.weights.iter().map(|w| format!("{w}")).collect();
            out.push_str(&format!("ensemble.weights = {}\n", weights.join(",")));
        }
        out
    }

    /// Reads `mode`, `members` and `weights` from `key = value` lines, with or
    /// without the `ensemble.` prefix. Missing weights mean equal weights.
    pub fn from_kv(text: &str) -> Result<Self, EnsembleError> {
        let mut map = BTreeMap::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| EnsembleError::Config(format!("expected key = value, got `{line}`")))?;
            let k = k.trim();
            map.insert(k.strip_prefix("ensemble.").unwrap_or(k).to_string(), v.trim().to_string());
        }
        Self::from_fields(map.get("mode").map(String::as_str), map.get("members").map(String::as_str), map.get("weights").map(String::as_str))
    }

    pub fn from_fields(
        mode: Option<&str>,
        members: Option<&str>,
        weights: Option<&str>,
    ) -> Result<Self, EnsembleError> {
        let mode: EnsembleMode = mode.ok_or_else(|| EnsembleError::Config("missing mode".into()))?.parse()?;
        let members: Vec<String> = members
            .unwrap_or("")
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(str::to_string)
            .collect();
        let weights = match (mode, weights) {
            (EnsembleMode::Intersection, _) => Vec::new(),
            (EnsembleMode::WeightedVote, None) => vec![1.0; members.len()],
            (EnsembleMode::WeightedVote, Some(w)) => w
                .split(',')
                .map(|x| x.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|_| EnsembleError::Config(format!("bad weights `{w}`")))?,
        };
        let cfg = EnsembleConfig { mode, members, weights };
        cfg.validate()?;
        Ok(cfg)
    }
}

impl fmt::Display for EnsembleConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.mode {
            EnsembleMode::Intersection => write!(f, "intersection({})", self.members.join(", ")),
            EnsembleMode::WeightedVote => {
                let parts: Vec<String> = self
                    .members
                    .iter()
                    .zip(&self.weights)
                    .map(|(m, w)| format!("{m}:{w:.3}"))
                    .collect();
                write!(f, "weighted_vote({})", parts.join(", "))
            }
        }
    }
}

fn check_weights(members: usize, weights: &[f64]) -> Result<(), EnsembleError> {
    if weights.len() != members {
        return Err(EnsembleError::WeightCount {
            members,
            weights: weights.len(),
        });
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) || weights.iter().sum::<f64>() <= 0.0 {
        return Err(EnsembleError::BadWeights);
    }
    Ok(())
}

fn check_aligned(preds: &[&PredictionSet]) -> Result<(), EnsembleError> {
    let first = preds.first().ok_or(EnsembleError::NoMembers)?;
    let misaligned = |p: &PredictionSet, reason: String| EnsembleError::Misaligned {
        first: first.model_name.clone(),
        member: p.model_name.clone(),
        reason,
    };
    for p in &preds[1..] {
        if p.corpus_ref != first.corpus_ref {
            return Err(misaligned(p, format!("corpus {} vs {}", p.corpus_ref, first.corpus_ref)));
        }
        if p.len() != first.len() {
            return Err(misaligned(p, format!("{} sentences vs {}", p.len(), first.len())));
        }
        for (i, (a, b)) in p.tags().iter().zip(first.tags()).enumerate() {
            if a.len() != b.len() {
                return Err(misaligned(p, format!("sentence {i} has {} tags vs {}", a.len(), b.len())));
            }
        }
    }
    Ok(())
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= REL_TOL * a.abs().max(b.abs())
}

/// Winner of one token's vote. `ballots` pairs each member's tag with its weight.
fn vote_token<'a>(ballots: impl Iterator<Item = (&'a Tag, f64)>) -> Tag {
    // tag -> (total weight, heaviest single voter)
    let mut tally: Vec<(&Tag, f64, f64)> = Vec::new();
    for (tag, w) in ballots {
        match tally.iter_mut().find(|(t, _, _)| *t == tag) {
            Some(entry) => {
                entry.1 += w;
                entry.2 = entry.2.max(w);
            }
            None => tally.push((tag, w, w)),
        }
    }
    let best_total = tally.iter().map(|e| e.1).fold(f64::MIN, f64::max);
    tally.retain(|e| close(e.1, best_total));
    let best_voter = tally.iter().map(|e| e.2).fold(f64::MIN, f64::max);
    tally.retain(|e| close(e.2, best_voter));
    if tally.iter().any(|e| e.0.is_outside()) {
        return Tag::Outside;
    }
    tally
        .into_iter()
        .map(|e| e.0)
        .min_by_key(|t| t.to_string())
        .cloned()
        .expect("at least one ballot")
}

fn vote_tags(preds: &[&PredictionSet], weights: &[f64]) -> Vec<Vec<Tag>> {
    let n = preds[0].len();
    (0..n)
        .map(|s| {
            let len = preds[0].tags()[s].len();
            let raw: Vec<Tag> = (0..len)
                .map(|i| vote_token(preds.iter().zip(weights).map(|(p, &w)| (&p.tags()[s][i], w))))
                .collect();
            validate_iob(&raw, IobPolicy::Repair).expect("repair never fails")
        })
        .collect()
}

fn intersect_tags(preds: &[&PredictionSet]) -> Vec<Vec<Tag>> {
    let n = preds[0].len();
    (0..n)
        .map(|s| {
            let len = preds[0].tags()[s].len();
            let mut kept: BTreeSet<(usize, usize, String)> = span_keys(&preds[0].tags()[s]).into_iter().collect();
            for p in &preds[1..] {
                let other: BTreeSet<_> = span_keys(&p.tags()[s]).into_iter().collect();
                kept.retain(|k| other.contains(k));
            }
            let spans: Vec<EntitySpan> = kept
                .into_iter()
                .map(|(start, end, entity_type)| EntitySpan {
                    start,
                    end,
                    entity_type,
                    surface: String::new(),
                })
                .collect();
            crate::corpus::encode_spans(len, &spans).expect("spans of one member never overlap")
        })
        .collect()
}

/// Per-token weighted plurality, then IOB repair.
pub fn weighted_vote(preds: &[&PredictionSet], weights: &[f64]) -> Result<PredictionSet, EnsembleError> {
    if preds.is_empty() {
        return Err(EnsembleError::NoMembers);
    }
    check_weights(preds.len(), weights)?;
    check_aligned(preds)?;
    let cfg = EnsembleConfig {
        mode: EnsembleMode::WeightedVote,
        members: preds.iter().map(|p| p.model_name.clone()).collect(),
        weights: weights.to_vec(),
    };
    Ok(PredictionSet::new(
        preds[0].corpus_ref.clone(),
        cfg.to_string(),
        vote_tags(preds, weights),
    ))
}

/// Keeps only spans every member predicts with identical boundaries and type.
pub fn intersect(preds: &[&PredictionSet]) -> Result<PredictionSet, EnsembleError> {
    if preds.len() < 2 {
        return Err(EnsembleError::TooFewMembers {
            mode: EnsembleMode::Intersection,
            min: 2,
            got: preds.len(),
        });
    }
    check_aligned(preds)?;
    let name = format!(
        "intersection({})",
        preds.iter().map(|p| p.model_name.as_str()).collect::<Vec<_>>().join(", ")
    );
    Ok(PredictionSet::new(preds[0].corpus_ref.clone(), name, intersect_tags(preds)))
}

/// Runs a config against prediction sets looked up by model name.
pub fn apply(cfg: &EnsembleConfig, preds: &[PredictionSet]) -> Result<PredictionSet, EnsembleError> {
    cfg.validate()?;
    let members = cfg
        .members
        .iter()
        .map(|m| {
            preds
                .iter()
                .find(|p| &p.model_name == m)
                .ok_or_else(|| EnsembleError::UnknownMember(m.clone()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    match cfg.mode {
        EnsembleMode::WeightedVote => weighted_vote(&members, &cfg.weights),
        EnsembleMode::Intersection => intersect(&members),
    }
}

/// All weight tuples over `grid` for `n` members, normalized to sum 1 and deduplicated.
fn weight_tuples(n: usize, grid: &[f64]) -> Vec<Vec<f64>> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    let mut idx = vec![0usize; n];
    loop {
        let raw: Vec<f64> = idx.iter().map(|&i| grid[i]).collect();
        let sum: f64 = raw.iter().sum();
        let norm: Vec<f64> = raw.iter().map(|w| w / sum).collect();
        let key: Vec<String> = norm.iter().map(|w| format!("{w:.6}")).collect();
        if seen.insert(key) {
            out.push(norm);
        }
        let mut pos = n;
        loop {
            if pos == 0 {
                return out;
            }
            pos -= 1;
            idx[pos] += 1;
            if idx[pos] < grid.len() {
                break;
            }
            idx[pos] = 0;
        }
    }
}

struct Candidate {
    cfg: EnsembleConfig,
    report: EvalReport,
    encoding: String,
}

/// Total order: higher F1, then fewer members, then the smaller encoding.
fn better(a: &Candidate, b: &Candidate) -> Ordering {
    a.report
        .micro
        .cmp_f1(&b.report.micro)
        .then_with(|| b.cfg.members.len().cmp(&a.cfg.members.len()))
        .then_with(|| b.encoding.cmp(&a.encoding))
}

/// Exhaustive search over modes, member subsets and weight tuples for the
/// highest micro F1 on `dev_gold`.
pub fn select_best_ensemble(
    preds: &[PredictionSet],
    dev_gold: &Dataset,
    weight_grid: &[f64],
) -> Result<(EnsembleConfig, EvalReport), EnsembleError> {
    if preds.len() < 2 {
        return Err(EnsembleError::TooFewMembers {
            mode: EnsembleMode::Intersection,
            min: 2,
            got: preds.len(),
        });
    }
    if preds.len() > MAX_SEARCH_MEMBERS {
        return Err(EnsembleError::TooManyMembers(preds.len()));
    }
    let grid: Vec<f64> = weight_grid.iter().copied().filter(|w| w.is_finite() && *w > 0.0).collect();
    if grid.is_empty() || grid.len() != weight_grid.len() {
        return Err(EnsembleError::BadGrid);
    }
    let mut names = BTreeSet::new();
    for p in preds {
        if !names.insert(&p.model_name) {
            return Err(EnsembleError::DuplicateMember(p.model_name.clone()));
        }
    }
    let refs: Vec<&PredictionSet> = preds.iter().collect();
    check_aligned(&refs)?;
    evaluate_tags(dev_gold, preds[0].tags())?;

    let mut configs: Vec<(EnsembleConfig, Vec<usize>)> = Vec::new();
    for mask in 1u32..(1 << preds.len()) {
        let idx: Vec<usize> = (0..preds.len()).filter(|i| mask & (1 << i) != 0).collect();
        let members: Vec<String> = idx.iter().map(|&i| preds[i].model_name.clone()).collect();
        for weights in weight_tuples(idx.len(), &grid) {
            configs.push((
                EnsembleConfig {
                    mode: EnsembleMode::WeightedVote,
                    members: members.clone(),
                    weights,
                },
                idx.clone(),
            ));
        }
        if idx.len() >= 2 {
            configs.push((
                EnsembleConfig {
                    mode: EnsembleMode::Intersection,
                    members,
                    weights: Vec::new(),
                },
                idx,
            ));
        }
    }

    let best = configs
        .into_par_iter()
        .map(|(cfg, idx)| {
            let members: Vec<&PredictionSet> = idx.iter().map(|&i| &preds[i]).collect();
            let tags = match cfg.mode {
                EnsembleMode::WeightedVote => vote_tags(&members, &cfg.weights),
                EnsembleMode::Intersection => intersect_tags(&members),
            };
            let report = evaluate_tags(dev_gold, &tags).expect("alignment checked above");
            let encoding = cfg.encoding();
            Candidate { cfg, report, encoding }
        })
        .reduce_with(|a, b| if better(&a, &b) == Ordering::Less { b } else { a })
        .expect("at least one configuration");
    Ok((best.cfg, best.report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{parse_conll, parse_tags};

    fn pset(name: &str, tags: &[&[&str]]) -> PredictionSet {
        PredictionSet::new(
            "ref".into(),
            name.into(),
            tags.iter().map(|t| parse_tags(t).unwrap()).collect(),
        )
    }

    #[test]
    fn vote_examples() {
        let a = pset("a", &[&["B-Disease"]]);
        let b = pset("b", &[&["O"]]);
        assert_eq!(weighted_vote(&[&a, &b], &[2.0, 1.0]).unwrap().tags()[0][0], Tag::Begin("Disease".into()));

        let c = pset("c", &[&["B-Chemical"]]);
        assert_eq!(weighted_vote(&[&a, &c], &[1.0, 1.0]).unwrap().tags()[0][0], Tag::Begin("Chemical".into()));

        let single = pset("s", &[&["O", "I-X", "I-X"]]);
        assert_eq!(weighted_vote(&[&single], &[1.0]).unwrap().tags(), single.tags());
    }

    #[test]
    fn vote_tie_cascade() {
        let a = pset("a", &[&["B-Disease"]]);
        let b = pset("b", &[&["B-Chemical"]]);
        let o = pset("o", &[&["O"]]);
        // equal totals, but the heaviest single voter says Disease
        let d2 = pset("d2", &[&["B-Chemical"]]);
        let out = weighted_vote(&[&a, &b, &d2], &[2.0, 1.0, 1.0]).unwrap();
        assert_eq!(out.tags()[0][0], Tag::Begin("Disease".into()));
        // O wins a full tie
        let out = weighted_vote(&[&a, &o], &[1.0, 1.0]).unwrap();
        assert_eq!(out.tags()[0][0], Tag::Outside);
    }

    #[test]
    fn vote_rejects_bad_input() {
        let a = pset("a", &[&["O"]]);
        let b = pset("b", &[&["O", "O"]]);
        assert!(matches!(weighted_vote(&[&a, &b], &[1.0, 1.0]), Err(EnsembleError::Misaligned { .. })));
        assert!(matches!(weighted_vote(&[], &[]), Err(EnsembleError::NoMembers)));
        assert!(matches!(weighted_vote(&[&a], &[0.0]), Err(EnsembleError::BadWeights)));
        assert!(matches!(weighted_vote(&[&a], &[1.0, 1.0]), Err(EnsembleError::WeightCount { .. })));
    }

    #[test]
    fn intersection_examples() {
        let a = pset("a", &[&["B-Disease", "I-Disease", "O", "B-Chemical"]]);
        let b = pset("b", &[&["B-Disease", "I-Disease", "O", "O"]]);
        let out = intersect(&[&a, &b]).unwrap();
        assert_eq!(out.tags()[0], parse_tags(&["B-Disease", "I-Disease", "O", "O"]).unwrap());

        let c = pset("c", &[&["B-Disease", "I-Disease", "I-Disease", "O"]]);
        let out = intersect(&[&a, &c]).unwrap();
        assert!(out.tags()[0].iter().all(Tag::is_outside));

        assert!(matches!(intersect(&[&a]), Err(EnsembleError::TooFewMembers { .. })));
    }

    #[test]
    fn config_round_trip() {
        let cfg = EnsembleConfig::vote(vec!["a".into(), "b".into()], vec![0.75, 0.25]).unwrap();
        assert_eq!(EnsembleConfig::from_kv(&cfg.to_kv()).unwrap(), cfg);
        let cfg = EnsembleConfig::intersection(vec!["a".into(), "b".into()]).unwrap();
        assert_eq!(EnsembleConfig::from_kv(&cfg.to_kv()).unwrap(), cfg);
        assert!(EnsembleConfig::from_kv("mode = vote\nmembers = a,a\n").is_err());
        assert!(EnsembleConfig::from_kv("mode = average\nmembers = a\n").is_err());
        let eq = EnsembleConfig::from_kv("mode = weighted_vote\nmembers = a, b\n").unwrap();
        assert_eq!(eq.weights, vec![1.0, 1.0]);
    }

    #[test]
    fn weight_tuples_are_normalized_and_unique() {
        let t = weight_tuples(2, &[1.0, 2.0, 3.0]);
        // 9 raw tuples; (1,1) (2,2) (3,3) collapse
        assert_eq!(t.len(), 7);
        assert!(t.iter().all(|w| (w.iter().sum::<f64>() - 1.0).abs() < 1e-12));
        assert_eq!(weight_tuples(1, &[1.0, 2.0]), vec![vec![1.0]]);
    }

    const DEV: &str = "a\tB-X\nb\tO\nc\tB-X\n\nd\tB-X\ne\tO\n\n";

    #[test]
    fn identical_members_pick_single_vote() {
        let gold = parse_conll(DEV).unwrap();
        let p = pset("p", &[&["B-X", "O", "O"], &["B-X", "O"]]);
        let q = PredictionSet::new("ref".into(), "q".into(), p.tags().to_vec());
        let (cfg, report) = select_best_ensemble(&[p.clone(), q], &gold, &DEFAULT_WEIGHT_GRID).unwrap();
        assert_eq!(cfg.mode, EnsembleMode::WeightedVote);
        assert_eq!(cfg.members, vec!["p".to_string()]);
        assert_eq!(report, evaluate_tags(&gold, p.tags()).unwrap());
    }

    #[test]
    fn intersection_wins_when_it_removes_false_positives() {
        let gold = parse_conll(DEV).unwrap();
        // both find all gold spans; their false positives are disjoint
        let p = pset("p", &[&["B-X", "B-X", "B-X"], &["B-X", "O"]]);
        let q = pset("q", &[&["B-X", "O", "B-X"], &["B-X", "B-X"]]);
        let (cfg, report) = select_best_ensemble(&[p, q], &gold, &DEFAULT_WEIGHT_GRID).unwrap();
        assert_eq!(cfg.mode, EnsembleMode::Intersection);
        assert_eq!((report.micro.tp, report.micro.fp, report.micro.fn_), (3, 0, 0));
    }

    #[test]
    fn selection_needs_two_members() {
        let gold = parse_conll(DEV).unwrap();
        let p = pset("p", &[&["O", "O", "O"], &["O", "O"]]);
        assert!(select_best_ensemble(&[p.clone()], &gold, &DEFAULT_WEIGHT_GRID).is_err());
        let q = PredictionSet::new("ref".into(), "q".into(), p.tags().to_vec());
        assert!(matches!(select_best_ensemble(&[p, q], &gold, &[]), Err(EnsembleError::BadGrid)));
    }
}
