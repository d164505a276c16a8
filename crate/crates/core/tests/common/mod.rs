//! Independent reference implementations used as test oracles.
//!
//! Nothing here calls into the library's span, scoring or voting code; tags
//! are handled as plain strings.

#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use nerforge::corpus::{Dataset, Sentence, Tag, Token};

pub const TYPES: [&str; 3] = ["Chemical", "Disease", "Gene"];

/// Entities read off string tags; a dangling or type-switching `I-` opens a new entity.
pub fn oracle_spans(tags: &[String]) -> Vec<(usize, usize, String)> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < tags.len() {
        let t = &tags[i];
        if t == "O" {
            i += 1;
            continue;
        }
        let ty = t[2..].to_string();
        let mut j = i + 1;
        while j < tags.len() && tags[j] == format!("I-{ty}") {
            j += 1;
        }
        out.push((i, j, ty));
        i = j;
    }
    out
}

pub fn strings(tags: &[Tag]) -> Vec<String> {
    tags.iter().map(|t| t.to_string()).collect()
}

/// Per-type (tp, fp, fn) by pairwise comparison of every gold and predicted span.
pub fn oracle_counts(gold: &[Vec<String>], pred: &[Vec<String>]) -> BTreeMap<String, (usize, usize, usize)> {
    let mut counts: BTreeMap<String, (usize, usize, usize)> = BTreeMap::new();
    for (g, p) in gold.iter().zip(pred) {
        let gs = oracle_spans(g);
        let ps = oracle_spans(p);
        let mut used = vec![false; gs.len()];
        for ps_span in &ps {
            let mut hit = false;
            for (k, gs_span) in gs.iter().enumerate() {
                if !used[k] && gs_span == ps_span {
                    used[k] = true;
                    hit = true;
                    break;
                }
            }
            let e = counts.entry(ps_span.2.clone()).or_default();
            if hit {
                e.0 += 1;
            } else {
                e.1 += 1;
            }
        }
        for (k, gs_span) in gs.iter().enumerate() {
            if !used[k] {
                counts.entry(gs_span.2.clone()).or_default().2 += 1;
            }
        }
    }
    counts
}

pub fn oracle_micro(gold: &[Vec<String>], pred: &[Vec<String>]) -> (usize, usize, usize) {
    oracle_counts(gold, pred)
        .values()
        .fold((0, 0, 0), |a, c| (a.0 + c.0, a.1 + c.1, a.2 + c.2))
}

/// F1 from counts, in percent.
pub fn oracle_f1(tp: usize, fp: usize, fn_: usize) -> f64 {
    if tp == 0 {
        return 0.0;
    }
    let p = tp as f64 / (tp + fp) as f64;
    let r = tp as f64 / (tp + fn_) as f64;
    200.0 * p * r / (p + r)
}

/// Tags for non-overlapping spans over `len` tokens.
pub fn oracle_encode(len: usize, spans: &[(usize, usize, String)]) -> Vec<String> {
    let mut tags = vec!["O".to_string(); len];
    for (s, e, ty) in spans {
        tags[*s] = format!("B-{ty}");
        for t in &mut tags[s + 1..*e] {
            *t = format!("I-{ty}");
        }
    }
    tags
}

/// Up to `max_spans` random non-overlapping spans over `len` tokens.
pub fn random_spans(rng: &mut ChaCha8Rng, len: usize, max_spans: usize, types: usize) -> Vec<(usize, usize, String)> {
    let want = rng.random_range(0..=max_spans);
    let mut spans: Vec<(usize, usize, String)> = Vec::new();
    for _ in 0..want * 4 {
        if spans.len() == want || len == 0 {
            break;
        }
        let s = rng.random_range(0..len);
        let e = (s + rng.random_range(1..=3)).min(len);
        if spans.iter().all(|(a, b, _)| e <= *a || s >= *b) {
            spans.push((s, e, TYPES[rng.random_range(0..types)].to_string()));
        }
    }
    spans.sort();
    spans
}

/// A prediction derived from gold spans: some kept, some shifted or retyped, some dropped, some invented.
pub fn perturb(rng: &mut ChaCha8Rng, len: usize, gold: &[(usize, usize, String)], types: usize) -> Vec<(usize, usize, String)> {
    let mut out: Vec<(usize, usize, String)> = Vec::new();
    let push = |span: (usize, usize, String), out: &mut Vec<(usize, usize, String)>| {
        if span.0 < span.1 && span.1 <= len && out.iter().all(|(a, b, _)| span.1 <= *a || span.0 >= *b) {
            out.push(span);
        }
    };
    for (s, e, ty) in gold {
        match rng.random_range(0..6) {
            0 => {}
            1 => push((*s, (*e + 1).min(len), ty.clone()), &mut out),
            2 => push((*s, *e, TYPES[rng.random_range(0..types)].to_string()), &mut out),
            _ => push((*s, *e, ty.clone()), &mut out),
        }
    }
    for extra in random_spans(rng, len, 2, types) {
        push(extra, &mut out);
    }
    out.sort();
    out
}

pub fn sentence(id: String, tags: &[String]) -> Sentence {
    let tokens = (0..tags.len()).map(|i| Token::new(format!("t{i}")).unwrap()).collect();
    let tags = tags.iter().map(|t| t.parse().unwrap()).collect();
    Sentence::new(id, tokens, tags).unwrap()
}

pub fn dataset(tags: &[Vec<String>]) -> Dataset {
    Dataset::new(
        tags.iter()
            .enumerate()
            .map(|(i, t)| sentence(format!("s{i}"), t))
            .collect(),
    )
    .unwrap()
}

/// Per-token weighted plurality with the tie cascade: heaviest single voter,
/// then `O`, then the lexicographically smallest tag; followed by repair.
pub fn oracle_vote(members: &[&[Vec<String>]], weights: &[f64]) -> Vec<Vec<String>> {
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * a.abs().max(b.abs());
    let n = members[0].len();
    (0..n)
        .map(|s| {
            let len = members[0][s].len();
            let raw: Vec<String> = (0..len)
                .map(|i| {
                    let mut totals: BTreeMap<&str, (f64, f64)> = BTreeMap::new();
                    for (m, w) in members.iter().zip(weights) {
                        let e = totals.entry(m[s][i].as_str()).or_insert((0.0, 0.0));
                        e.0 += w;
                        e.1 = e.1.max(*w);
                    }
                    let top = totals.values().map(|v| v.0).fold(f64::MIN, f64::max);
                    let tied: Vec<(&str, f64)> =
                        totals.iter().filter(|(_, v)| close(v.0, top)).map(|(t, v)| (*t, v.1)).collect();
                    let heavy = tied.iter().map(|t| t.1).fold(f64::MIN, f64::max);
                    let tied: Vec<&str> = tied.iter().filter(|t| close(t.1, heavy)).map(|t| t.0).collect();
                    if tied.contains(&"O") {
                        "O".to_string()
                    } else {
                        tied.iter().min().unwrap().to_string()
                    }
                })
                .collect();
            oracle_repair(&raw)
        })
        .collect()
}

/// Keeps spans present, with identical boundaries and type, in every member.
pub fn oracle_intersect(members: &[&[Vec<String>]]) -> Vec<Vec<String>> {
    (0..members[0].len())
        .map(|s| {
            let len = members[0][s].len();
            let kept: Vec<(usize, usize, String)> = oracle_spans(&members[0][s])
                .into_iter()
                .filter(|span| members[1..].iter().all(|m| oracle_spans(&m[s]).contains(span)))
                .collect();
            oracle_encode(len, &kept)
        })
        .collect()
}

pub fn oracle_repair(tags: &[String]) -> Vec<String> {
    let spans = oracle_spans(tags);
    oracle_encode(tags.len(), &spans)
}

/// A random tag string sequence, possibly IOB-invalid.
pub fn random_raw_tags(rng: &mut ChaCha8Rng, len: usize, types: usize) -> Vec<String> {
    (0..len)
        .map(|_| match rng.random_range(0..4) {
            0 | 1 => "O".to_string(),
            2 => format!("B-{}", TYPES[rng.random_range(0..types)]),
            _ => format!("I-{}", TYPES[rng.random_range(0..types)]),
        })
        .collect()
}
