//! Strict entity-level scoring: a predicted entity counts only with exact
//! boundaries and exact type.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use thiserror::Error;

use crate::corpus::{span_keys, Dataset, Tag};
use crate::tagger::PredictionSet;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("prediction has {pred} sentences, gold has {gold}")]
    SentenceCount { gold: usize, pred: usize },
    #[error("sentence {index}: prediction has {pred} tags, gold has {gold} tokens")]
    Length { index: usize, gold: usize, pred: usize },
    #[error("{name} = {value} is outside [0, 100]")]
    OutOfRange { name: &'static str, value: f64 },
    #[error("dataset keys differ: {0:?}")]
    KeyMismatch(Vec<String>),
}

/// Counts and derived metrics, as fractions in `[0, 1]`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Scores {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl Scores {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Scores {
            tp,
            fp,
            fn_,
            precision,
            recall,
            f1,
        }
    }

    /// Exact F1 comparison on the counts, `2tp / (2tp + fp + fn)`, free of rounding.
    pub fn cmp_f1(&self, other: &Scores) -> std::cmp::Ordering {
        let frac = |s: &Scores| {
            let den = (2 * s.tp + s.fp + s.fn_) as u128;
            if s.tp == 0 {
                (0u128, 1u128)
            } else {
                (2 * s.tp as u128, den)
            }
        };
        let (an, ad) = frac(self);
        let (bn, bd) = frac(other);
        (an * bd).cmp(&(bn * ad))
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvalReport {
    pub per_type: BTreeMap<String, Scores>,
    pub micro: Scores,
    pub sentences: usize,
    pub gold_entities: usize,
}

fn pct(x: f64) -> String {
    format!("{:.2}", x * 100.0)
}

impl EvalReport {
    /// `key = value` lines; metrics as percentages with two decimals.
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        let mut put = |prefix: &str, s: &Scores| {
            let _ = writeln!(out, "{prefix}.p = {}", pct(s.precision));
            let _ = writeln!(out, "{prefix}.r = {}", pct(s.recall));
            let _ = writeln!(out, "{prefix}.f1 = {}", pct(s.f1));
            let _ = writeln!(out, "{prefix}.tp = {}", s.tp);
            let _ = writeln!(out, "{prefix}.fp = {}", s.fp);
            let _ = writeln!(out, "{prefix}.fn = {}", s.fn_);
        };
        put("micro", &self.micro);
        for (ty, s) in &self.per_type {
            put(&format!("type.{ty}"), s);
        }
        let _ = writeln!(out, "sentences = {}", self.sentences);
        let _ = writeln!(out, "gold_entities = {}", self.gold_entities);
        out
    }

    pub fn to_table(&self) -> String {
        let mut out = format!("{:<20} {:>7} {:>7} {:>7} {:>6} {:>6} {:>6}\n", "type", "P", "R", "F1", "TP", "FP", "FN");
        let mut row = |name: &str, s: &Scores| {
            let _ = writeln!(
                out,
                "{name:<20} {:>7} {:>7} {:>7} {:>6} {:>6} {:>6}",
                pct(s.precision),
                pct(s.recall),
                pct(s.f1),
                s.tp,
                s.fp,
                s.fn_
            );
        };
        for (ty, s) in &self.per_type {
            row(ty, s);
        }
        row("micro", &self.micro);
        out
    }
}

/// Scores predicted tag sequences against gold.
pub fn evaluate_tags(gold: &Dataset, pred: &[Vec<Tag>]) -> Result<EvalReport, EvalError> {
    if gold.len() != pred.len() {
        return Err(EvalError::SentenceCount {
            gold: gold.len(),
            pred: pred.len(),
        });
    }
    let mut counts: BTreeMap<String, (usize, usize, usize)> = BTreeMap::new();
    let mut gold_entities = 0;
    for (index, (g, p)) in gold.sentences().iter().zip(pred).enumerate() {
        if g.len() != p.len() {
            return Err(EvalError::Length {
                index,
                gold: g.len(),
                pred: p.len(),
            });
        }
        let gold_spans = span_keys(g.tags());
        let pred_spans = span_keys(p);
        gold_entities += gold_spans.len();
        let gold_set: HashSet<_> = gold_spans.iter().collect();
        let pred_set: HashSet<_> = pred_spans.iter().collect();
        for span in &pred_spans {
            let c = counts.entry(span.2.clone()).or_default();
            if gold_set.contains(span) {
                c.0 += 1;
            } else {
                c.1 += 1;
            }
        }
        for span in &gold_spans {
            if !pred_set.contains(span) {
                counts.entry(span.2.clone()).or_default().2 += 1;
            }
        }
    }
    let per_type: BTreeMap<String, Scores> = counts
        .into_iter()
        .map(|(ty, (tp, fp, fn_))| (ty, Scores::from_counts(tp, fp, fn_)))
        .collect();
    let (tp, fp, fn_) = per_type
        .values()
        .fold((0, 0, 0), |a, s| (a.0 + s.tp, a.1 + s.fp, a.2 + s.fn_));
    Ok(EvalReport {
        per_type,
        micro: Scores::from_counts(tp, fp, fn_),
        sentences: gold.len(),
        gold_entities,
    })
}

pub fn evaluate_strict(gold: &Dataset, pred: &PredictionSet) -> Result<EvalReport, EvalError> {
    evaluate_tags(gold, pred.tags())
}

/// F1 from precision and recall given in percent.
pub fn f1_from_pr(p: f64, r: f64) -> Result<f64, EvalError> {
    for (name, value) in [("precision", p), ("recall", r)] {
        if !(0.0..=100.0).contains(&value) {
            return Err(EvalError::OutOfRange { name, value });
        }
    }
    Ok(if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    })
}

/// Mean over datasets of `method - baseline`, in percentage points.
pub fn improvement_summary(
    baseline_f1s: &BTreeMap<String, f64>,
    method_f1s: &BTreeMap<String, f64>,
) -> Result<f64, EvalError> {
    let mismatched: Vec<String> = baseline_f1s
        .keys()
        .filter(|k| !method_f1s.contains_key(*k))
        .chain(method_f1s.keys().filter(|k| !baseline_f1s.contains_key(*k)))
        .cloned()
        .collect();
    if !mismatched.is_empty() || baseline_f1s.is_empty() {
        return Err(EvalError::KeyMismatch(mismatched));
    }
    let total: f64 = baseline_f1s
        .iter()
        .map(|(k, base)| method_f1s[k] - base)
        .sum();
    Ok(total / baseline_f1s.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{parse_tags, Sentence, Token};

    fn gold(tags: &[&[&str]]) -> Dataset {
        Dataset::new(
            tags.iter()
                .enumerate()
                .map(|(i, t)| {
                    let toks = (0..t.len()).map(|j| Token::new(format!("t{j}")).unwrap()).collect();
                    Sentence::new(format!("s{i}"), toks, parse_tags(t).unwrap()).unwrap()
                })
                .collect(),
        )
        .unwrap()
    }

    fn tags(t: &[&str]) -> Vec<Tag> {
        parse_tags(t).unwrap()
    }

    #[test]
    fn perfect_prediction() {
        let g = gold(&[&["B-D", "I-D", "O", "B-C"]]);
        let pred: Vec<Vec<Tag>> = g.sentences().iter().map(|s| s.tags().to_vec()).collect();
        let r = evaluate_tags(&g, &pred).unwrap();
        assert_eq!((r.micro.precision, r.micro.recall, r.micro.f1), (1.0, 1.0, 1.0));
        assert_eq!(r.gold_entities, 2);
    }

    #[test]
    fn half_right() {
        let g = gold(&[&["B-D", "O", "B-D", "O"]]);
        let r = evaluate_tags(&g, &[tags(&["B-D", "O", "O", "B-D"])]).unwrap();
        assert_eq!((r.micro.tp, r.micro.fp, r.micro.fn_), (1, 1, 1));
        assert_eq!((r.micro.precision, r.micro.recall, r.micro.f1), (0.5, 0.5, 0.5));
    }

    #[test]
    fn empty_prediction_scores_zero() {
        let g = gold(&[&["B-D", "O"]]);
        let r = evaluate_tags(&g, &[tags(&["O", "O"])]).unwrap();
        assert_eq!((r.micro.precision, r.micro.recall, r.micro.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn boundary_mismatch_is_wrong() {
        let g = gold(&[&["B-D", "I-D", "O"]]);
        let r = evaluate_tags(&g, &[tags(&["B-D", "I-D", "I-D"])]).unwrap();
        assert_eq!((r.micro.tp, r.micro.fp, r.micro.fn_), (0, 1, 1));
    }

    #[test]
    fn misalignment() {
        let g = gold(&[&["O", "O"]]);
        assert!(matches!(evaluate_tags(&g, &[]), Err(EvalError::SentenceCount { .. })));
        assert!(matches!(
            evaluate_tags(&g, &[tags(&["O"])]),
            Err(EvalError::Length { index: 0, .. })
        ));
    }

    #[test]
    fn f1_examples() {
        let f = f1_from_pr(53.17, 63.97).unwrap();
        assert!((f - 58.06).abs() <= 0.05, "{f}");
        assert_eq!(f1_from_pr(0.0, 0.0).unwrap(), 0.0);
        assert!((f1_from_pr(100.0, 100.0).unwrap() - 100.0).abs() < 1e-12);
        assert!(f1_from_pr(101.0, 5.0).is_err());
        assert!(f1_from_pr(5.0, -1.0).is_err());
    }

    #[test]
    fn improvement_examples() {
        let map = |xs: [f64; 4]| -> BTreeMap<String, f64> {
            ["mimic", "bc5cdr", "ncbi", "medmentions"]
                .iter()
                .zip(xs)
                .map(|(k, v)| (k.to_string(), v))
                .collect()
        };
        let bert = improvement_summary(
            &map([0.14, 0.69, 1.36, 13.86]),
            &map([50.63, 58.06, 36.07, 40.44]),
        )
        .unwrap();
        assert!((bert - 42.29).abs() <= 0.01, "{bert}");
        let same = map([1.0, 2.0, 3.0, 4.0]);
        assert_eq!(improvement_summary(&same, &same).unwrap(), 0.0);
        let mut other = same.clone();
        other.remove("ncbi");
        assert!(improvement_summary(&same, &other).is_err());
    }

    #[test]
    fn exact_f1_ordering() {
        let a = Scores::from_counts(1, 1, 1);
        let b = Scores::from_counts(2, 2, 2);
        assert_eq!(a.cmp_f1(&b), std::cmp::Ordering::Equal);
        assert_eq!(Scores::from_counts(0, 3, 0).cmp_f1(&Scores::from_counts(0, 0, 0)), std::cmp::Ordering::Equal);
        assert_eq!(Scores::from_counts(3, 0, 1).cmp_f1(&a), std::cmp::Ordering::Greater);
    }

    #[test]
    fn report_formats() {
        let g = gold(&[&["B-D", "O"]]);
        let r = evaluate_tags(&g, &[tags(&["B-D", "O"])]).unwrap();
        let kv = r.to_kv();
        assert!(kv.contains("micro.f1 = 100.00"));
        assert!(kv.contains("type.D.p = 100.00"));
        assert!(r.to_table().contains("micro"));
    }
}
