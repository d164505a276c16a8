//! IOB2-tagged corpora: the CoNLL codec, the span codec and few-shot sampling.
//!
//! Tokens are whitespace-delimited everywhere. Tags use plain IOB2 (`O`,
//! `B-<type>`, `I-<type>`); other schemes are rejected.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CorpusError {
    #[error("line {line}: expected `token<TAB>tag`, found {columns} column(s)")]
    Columns { line: usize, columns: usize },
    #[error("line {line}: {source}")]
    Line { line: usize, source: Box<CorpusError> },
    #[error("unrecognized tag `{0}`")]
    UnrecognizedTag(String),
    #[error("invalid token `{0}`: tokens must be non-empty and contain no whitespace")]
    InvalidToken(String),
    #[error("IOB violation at position(s) {positions:?}")]
    Iob { positions: Vec<usize> },
    #[error("sentence `{id}`: {source}")]
    Sentence { id: String, source: Box<CorpusError> },
    #[error("{tokens} tokens but {tags} tags")]
    LengthMismatch { tokens: usize, tags: usize },
    #[error("duplicate sentence id `{0}`")]
    DuplicateId(String),
    #[error("entity type `{0}` is not in the label set")]
    UnknownType(String),
    #[error("span {start}..{end} is out of bounds for {len} tokens")]
    SpanBounds { start: usize, end: usize, len: usize },
    #[error("spans {0:?} and {1:?} overlap")]
    Overlap((usize, usize), (usize, usize)),
}

/// A single IOB2 tag.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Tag {
    Outside,
    Begin(String),
    Inside(String),
}

impl Tag {
    pub fn entity_type(&self) -> Option<&str> {
        match self {
            Tag::Outside => None,
            Tag::Begin(t) | Tag::Inside(t) => Some(t),
        }
    }

    pub fn is_outside(&self) -> bool {
        matches!(self, Tag::Outside)
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tag::Outside => f.write_str("O"),
            Tag::Begin(t) => write!(f, "B-{t}"),
            Tag::Inside(t) => write!(f, "I-{t}"),
        }
    }
}

impl FromStr for Tag {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "O" {
            return Ok(Tag::Outside);
        }
        let bad = || CorpusError::UnrecognizedTag(s.to_string());
        let (prefix, ty) = s.split_once('-').ok_or_else(bad)?;
        if ty.is_empty() || ty.chars().any(char::is_whitespace) {
            return Err(bad());
        }
        match prefix {
            "B" => Ok(Tag::Begin(ty.to_string())),
            "I" => Ok(Tag::Inside(ty.to_string())),
            _ => Err(bad()),
        }
    }
}

/// Parses every tag string, failing on the first unrecognized shape.
pub fn parse_tags<S: AsRef<str>>(tags: &[S]) -> Result<Vec<Tag>, CorpusError> {
    tags.iter().map(|t| t.as_ref().parse()).collect()
}

/// A non-empty, whitespace-free token.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Token(String);

impl Token {
    pub fn new(text: impl Into<String>) -> Result<Self, CorpusError> {
        let text = text.into();
        if text.is_empty() || text.chars().any(char::is_whitespace) {
            return Err(CorpusError::InvalidToken(text));
        }
        Ok(Token(text))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Splits text on whitespace into tokens. Never fails: whitespace splitting
/// cannot produce empty or whitespace-bearing pieces.
pub fn tokenize(text: &str) -> Vec<Token> {
    text.split_whitespace().map(|t| Token(t.to_string())).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IobPolicy {
    Strict,
    /// Rewrites a dangling `I-<t>` to `B-<t>`.
    Repair,
}

/// Checks IOB2 well-formedness, or repairs it.
pub fn validate_iob(tags: &[Tag], policy: IobPolicy) -> Result<Vec<Tag>, CorpusError> {
    let mut out = Vec::with_capacity(tags.len());
    let mut bad = Vec::new();
    for (i, tag) in tags.iter().enumerate() {
        if let Tag::Inside(ty) = tag {
            let continues = i > 0 && out.last().and_then(Tag::entity_type) == Some(ty.as_str());
            if !continues {
                bad.push(i);
                out.push(Tag::Begin(ty.clone()));
                continue;
            }
        }
        out.push(tag.clone());
    }
    match policy {
        IobPolicy::Strict if !bad.is_empty() => Err(CorpusError::Iob { positions: bad }),
        _ => Ok(out),
    }
}

/// String-level entry point: shape errors surface under both policies.
pub fn validate_iob_str<S: AsRef<str>>(
    tags: &[S],
    policy: IobPolicy,
) -> Result<Vec<Tag>, CorpusError> {
    validate_iob(&parse_tags(tags)?, policy)
}

/// A maximal typed token range `[start, end)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EntitySpan {
    pub start: usize,
    pub end: usize,
    pub entity_type: String,
    pub surface: String,
}

impl EntitySpan {
    pub fn key(&self) -> (usize, usize, &str) {
        (self.start, self.end, &self.entity_type)
    }
}

/// Decodes spans from a raw tag sequence; fails on IOB-invalid input.
pub fn decode_tags(tokens: &[Token], tags: &[Tag]) -> Result<Vec<EntitySpan>, CorpusError> {
    if tokens.len() != tags.len() {
        return Err(CorpusError::LengthMismatch {
            tokens: tokens.len(),
            tags: tags.len(),
        });
    }
    validate_iob(tags, IobPolicy::Strict)?;
    Ok(decode_valid(tokens, tags))
}

fn decode_valid(tokens: &[Token], tags: &[Tag]) -> Vec<EntitySpan> {
    let mut spans = Vec::new();
    let mut open: Option<(usize, &str)> = None;
    let close = |open: Option<(usize, &str)>, end: usize, spans: &mut Vec<EntitySpan>| {
        if let Some((start, ty)) = open {
            spans.push(EntitySpan {
                start,
                end,
                entity_type: ty.to_string(),
                surface: join_tokens(&tokens[start..end]),
            });
        }
    };
    for (i, tag) in tags.iter().enumerate() {
        match tag {
            Tag::Outside => {
                close(open.take(), i, &mut spans);
            }
            Tag::Begin(ty) => {
                close(open.take(), i, &mut spans);
                open = Some((i, ty));
            }
            Tag::Inside(_) => {}
        }
    }
    close(open, tags.len(), &mut spans);
    spans
}

/// `(start, end, type)` of every entity in a tag sequence, reading a dangling
/// `I-<t>` as the start of a new entity (the repair reading).
pub fn span_keys(tags: &[Tag]) -> Vec<(usize, usize, String)> {
    let mut spans = Vec::new();
    let mut open: Option<(usize, &str)> = None;
    for (i, tag) in tags.iter().enumerate() {
        let continues = matches!((tag, open), (Tag::Inside(t), Some((_, o))) if t == o);
        if continues {
            continue;
        }
        if let Some((start, ty)) = open.take() {
            spans.push((start, i, ty.to_string()));
        }
        open = tag.entity_type().map(|t| (i, t));
    }
    if let Some((start, ty)) = open {
        spans.push((start, tags.len(), ty.to_string()));
    }
    spans
}

pub fn join_tokens(tokens: &[Token]) -> String {
    tokens.iter().map(Token::as_str).collect::<Vec<_>>().join(" ")
}

/// Encodes spans over `len` tokens; uncovered positions become `O`.
pub fn encode_spans(len: usize, spans: &[EntitySpan]) -> Result<Vec<Tag>, CorpusError> {
    let mut sorted: Vec<&EntitySpan> = spans.iter().collect();
    sorted.sort_by_key(|s| (s.start, s.end));
    let mut tags = vec![Tag::Outside; len];
    let mut prev: Option<&EntitySpan> = None;
    for span in sorted {
        if span.start >= span.end || span.end > len {
            return Err(CorpusError::SpanBounds {
                start: span.start,
                end: span.end,
                len,
            });
        }
        if let Some(p) = prev {
            if span.start < p.end {
                return Err(CorpusError::Overlap((p.start, p.end), (span.start, span.end)));
            }
        }
        tags[span.start] = Tag::Begin(span.entity_type.clone());
        for tag in &mut tags[span.start + 1..span.end] {
            *tag = Tag::Inside(span.entity_type.clone());
        }
        prev = Some(span);
    }
    Ok(tags)
}

/// Tokens with an aligned, IOB-valid tag sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentence {
    id: String,
    tokens: Vec<Token>,
    tags: Vec<Tag>,
}

impl Sentence {
    pub fn new(id: impl Into<String>, tokens: Vec<Token>, tags: Vec<Tag>) -> Result<Self, CorpusError> {
        let id = id.into();
        if tokens.len() != tags.len() {
            return Err(CorpusError::LengthMismatch {
                tokens: tokens.len(),
                tags: tags.len(),
            });
        }
        validate_iob(&tags, IobPolicy::Strict).map_err(|e| CorpusError::Sentence {
            id: id.clone(),
            source: Box::new(e),
        })?;
        Ok(Sentence { id, tokens, tags })
    }

    /// A sentence with every tag `O`, for prediction input.
    pub fn untagged(id: impl Into<String>, tokens: Vec<Token>) -> Self {
        let tags = vec![Tag::Outside; tokens.len()];
        Sentence {
            id: id.into(),
            tokens,
            tags,
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn tags(&self) -> &[Tag] {
        &self.tags
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn text(&self) -> String {
        join_tokens(&self.tokens)
    }

    pub fn spans(&self) -> Vec<EntitySpan> {
        decode_valid(&self.tokens, &self.tags)
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }
}

/// Decodes the entity spans of a sentence.
pub fn decode_spans(s: &Sentence) -> Vec<EntitySpan> {
    s.spans()
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Dataset {
    sentences: Vec<Sentence>,
    label_set: BTreeSet<String>,
}

impl Dataset {
    /// Builds a dataset whose label set is inferred from the tags.
    pub fn new(sentences: Vec<Sentence>) -> Result<Self, CorpusError> {
        let label_set = sentences
            .iter()
            .flat_map(|s| s.tags.iter().filter_map(Tag::entity_type))
            .map(str::to_string)
            .collect();
        Self::with_labels(sentences, label_set)
    }

    pub fn with_labels(
        sentences: Vec<Sentence>,
        label_set: BTreeSet<String>,
    ) -> Result<Self, CorpusError> {
        let mut seen = HashSet::new();
        for s in &sentences {
            if !seen.insert(s.id.as_str()) {
                return Err(CorpusError::DuplicateId(s.id.clone()));
            }
            if let Some(ty) = s
                .tags
                .iter()
                .filter_map(Tag::entity_type)
                .find(|t| !label_set.contains(*t))
            {
                return Err(CorpusError::UnknownType(ty.to_string()));
            }
        }
        Ok(Dataset {
            sentences,
            label_set,
        })
    }

    pub fn sentences(&self) -> &[Sentence] {
        &self.sentences
    }

    pub fn label_set(&self) -> &BTreeSet<String> {
        &self.label_set
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn into_sentences(self) -> Vec<Sentence> {
        self.sentences
    }

    /// Mention count per entity type.
    pub fn mention_counts(&self) -> BTreeMap<String, usize> {
        let mut counts: BTreeMap<String, usize> =
            self.label_set.iter().map(|l| (l.clone(), 0)).collect();
        for s in &self.sentences {
            for span in s.spans() {
                *counts.entry(span.entity_type).or_default() += 1;
            }
        }
        counts
    }
}

/// Parses a two-column CoNLL file, rejecting IOB-invalid sentences.
pub fn parse_conll(text: &str) -> Result<Dataset, CorpusError> {
    parse_conll_with(text, IobPolicy::Strict)
}

pub fn parse_conll_with(text: &str, policy: IobPolicy) -> Result<Dataset, CorpusError> {
    let mut sentences = Vec::new();
    let mut tokens = Vec::new();
    let mut tags = Vec::new();
    let mut start_line = 1;

    let mut flush = |tokens: &mut Vec<Token>, tags: &mut Vec<Tag>, start_line: usize| {
        if tokens.is_empty() {
            return Ok(());
        }
        let id = format!("s{}", sentences.len());
        let tags = validate_iob(&std::mem::take(tags), policy).map_err(|e| CorpusError::Line {
            line: start_line,
            source: Box::new(CorpusError::Sentence {
                id: id.clone(),
                source: Box::new(e),
            }),
        })?;
        sentences.push(Sentence {
            id,
            tokens: std::mem::take(tokens),
            tags,
        });
        Ok(())
    };

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.trim().is_empty() {
            flush(&mut tokens, &mut tags, start_line)?;
            continue;
        }
        if tokens.is_empty() {
            start_line = line_no;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 2 {
            return Err(CorpusError::Columns {
                line: line_no,
                columns: cols.len(),
            });
        }
        let at_line = |e| CorpusError::Line {
            line: line_no,
            source: Box::new(e),
        };
        tokens.push(Token::new(cols[0]).map_err(at_line)?);
        tags.push(cols[1].trim().parse::<Tag>().map_err(at_line)?);
    }
    flush(&mut tokens, &mut tags, start_line)?;
    Dataset::new(sentences)
}

/// Serializes sentences as `token<TAB>tag` lines, each sentence followed by a blank line.
pub fn write_conll(ds: &Dataset) -> String {
    write_sentences(ds.sentences())
}

pub fn write_sentences<'a>(sentences: impl IntoIterator<Item = &'a Sentence>) -> String {
    let mut out = String::new();
    for s in sentences {
        for (tok, tag) in s.tokens.iter().zip(&s.tags) {
            out.push_str(tok.as_str());
            out.push('\t');
            out.push_str(&tag.to_string());
            out.push('\n');
        }
        out.push('\n');
    }
    out
}

/// Output of [`sample_few_shot`].
#[derive(Debug, Clone)]
pub struct FewShotSample {
    pub dataset: Dataset,
    pub k: usize,
    pub seed: u64,
    /// Types with fewer than `k` mentions corpus-wide, with their available count.
    pub shortfalls: BTreeMap<String, usize>,
}

impl FewShotSample {
    /// Sidecar metadata as `key=value` lines.
    pub fn metadata(&self) -> String {
        let mut out = format!(
            "seed={}\nk={}\nsentences={}\n",
            self.seed,
            self.k,
            self.dataset.len()
        );
        for (ty, n) in self.dataset.mention_counts() {
            out.push_str(&format!("mentions.{ty}={n}\n"));
        }
        for (ty, n) in &self.shortfalls {
            out.push_str(&format!("shortfall.{ty}={n}\n"));
        }
        out
    }
}

/// Greedy cover over a seeded shuffle until every type has `k` mentions.
///
/// Selected sentences keep their original corpus order and ids. `k` is
/// clamped to at least 1.
pub fn sample_few_shot(ds: &Dataset, k: usize, seed: u64) -> FewShotSample {
    let k = k.max(1);
    let totals = ds.mention_counts();
    let target = |ty: &str| k.min(totals.get(ty).copied().unwrap_or(0));

    let mut order: Vec<usize> = (0..ds.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    let mut picked = Vec::new();
    let done = |counts: &BTreeMap<&str, usize>| {
        totals
            .keys()
            .all(|ty| counts.get(ty.as_str()).copied().unwrap_or(0) >= target(ty))
    };

    for idx in order {
        if done(&counts) {
            break;
        }
        let spans = ds.sentences[idx].spans();
        let useful = spans
            .iter()
            .any(|s| counts.get(s.entity_type.as_str()).copied().unwrap_or(0) < k);
        if !useful {
            continue;
        }
        for s in &spans {
            let ty = ds.label_set.get(&s.entity_type).expect("label set covers tags");
            *counts.entry(ty.as_str()).or_default() += 1;
        }
        picked.push(idx);
    }
    picked.sort_unstable();

    let shortfalls = totals
        .iter()
        .filter(|(_, &n)| n < k)
        .map(|(ty, &n)| (ty.clone(), n))
        .collect();
    let sentences = picked.into_iter().map(|i| ds.sentences[i].clone()).collect();
    FewShotSample {
        dataset: Dataset::with_labels(sentences, ds.label_set.clone())
            .expect("subset of a valid dataset"),
        k,
        seed,
        shortfalls,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sent(id: &str, toks: &[&str], tags: &[&str]) -> Sentence {
        Sentence::new(
            id,
            toks.iter().map(|t| Token::new(*t).unwrap()).collect(),
            parse_tags(tags).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn single_line_parse() {
        let ds = parse_conll("Aspirin\tB-Chemical\n").unwrap();
        assert_eq!(ds.len(), 1);
        let s = &ds.sentences()[0];
        assert_eq!(s.id(), "s0");
        assert_eq!(s.tokens()[0].as_str(), "Aspirin");
        assert_eq!(s.tags(), &[Tag::Begin("Chemical".into())]);
    }

    #[test]
    fn blank_line_separates_sentences() {
        let ds = parse_conll("a\tO\nb\tB-X\n\nc\tO\n").unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.sentences()[1].id(), "s1");
        assert!(ds.label_set().contains("X"));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let err = parse_conll("a\tO\nAspirin B-Chemical extra\n").unwrap_err();
        assert_eq!(err, CorpusError::Columns { line: 2, columns: 1 });
    }

    #[test]
    fn invalid_iob_rejected_unless_repaired() {
        let text = "x\tO\ny\tI-Disease\n";
        let err = parse_conll(text).unwrap_err();
        assert!(err.to_string().contains("s0"), "{err}");
        assert!(err.to_string().contains("[1]"), "{err}");
        let ds = parse_conll_with(text, IobPolicy::Repair).unwrap();
        assert_eq!(ds.sentences()[0].tags()[1], Tag::Begin("Disease".into()));
    }

    #[test]
    fn write_shapes() {
        assert_eq!(write_conll(&Dataset::default()), "");
        let ds = Dataset::new(vec![sent("s0", &["Aspirin"], &["B-Chemical"])]).unwrap();
        assert_eq!(write_conll(&ds), "Aspirin\tB-Chemical\n\n");
    }

    #[test]
    fn decode_examples() {
        let s = sent("a", &["heart", "attack", "now"], &["B-Disease", "I-Disease", "O"]);
        assert_eq!(
            s.spans(),
            vec![EntitySpan {
                start: 0,
                end: 2,
                entity_type: "Disease".into(),
                surface: "heart attack".into()
            }]
        );
        assert!(sent("b", &["x", "y"], &["O", "O"]).spans().is_empty());
        let two = sent("c", &["x", "y"], &["B-Chemical", "B-Disease"]).spans();
        assert_eq!(two.len(), 2);
        assert_eq!((two[0].start, two[0].end), (0, 1));
        assert_eq!((two[1].start, two[1].end), (1, 2));
    }

    #[test]
    fn decode_raw_rejects_invalid() {
        let toks = tokenize("a b");
        let tags = parse_tags(&["O", "I-X"]).unwrap();
        assert!(matches!(decode_tags(&toks, &tags), Err(CorpusError::Iob { .. })));
    }

    #[test]
    fn encode_examples() {
        assert_eq!(encode_spans(3, &[]).unwrap(), vec![Tag::Outside; 3]);
        let span = |s, e| EntitySpan {
            start: s,
            end: e,
            entity_type: "Disease".into(),
            surface: String::new(),
        };
        assert_eq!(
            encode_spans(3, &[span(0, 2)]).unwrap(),
            parse_tags(&["B-Disease", "I-Disease", "O"]).unwrap()
        );
        assert!(matches!(
            encode_spans(3, &[span(0, 1), span(0, 2)]),
            Err(CorpusError::Overlap(..))
        ));
        assert!(matches!(
            encode_spans(3, &[span(2, 4)]),
            Err(CorpusError::SpanBounds { .. })
        ));
    }

    #[test]
    fn validate_examples() {
        assert_eq!(
            validate_iob_str(&["I-Disease"], IobPolicy::Repair).unwrap(),
            vec![Tag::Begin("Disease".into())]
        );
        assert_eq!(
            validate_iob_str(&["I-Disease"], IobPolicy::Strict).unwrap_err(),
            CorpusError::Iob { positions: vec![0] }
        );
        let ok = validate_iob_str(&["B-Disease", "I-Disease"], IobPolicy::Strict).unwrap();
        assert_eq!(ok, parse_tags(&["B-Disease", "I-Disease"]).unwrap());
        for policy in [IobPolicy::Strict, IobPolicy::Repair] {
            assert!(matches!(
                validate_iob_str(&["X-Disease"], policy),
                Err(CorpusError::UnrecognizedTag(_))
            ));
        }
        // type switch inside a run is dangling too
        assert_eq!(
            validate_iob_str(&["B-A", "I-B"], IobPolicy::Repair).unwrap(),
            parse_tags(&["B-A", "B-B"]).unwrap()
        );
    }

    #[test]
    fn token_rejects_whitespace() {
        assert!(Token::new("a b").is_err());
        assert!(Token::new("").is_err());
    }

    fn two_type_corpus() -> Dataset {
        let sentences = (0..10)
            .map(|i| sent(&format!("s{i}"), &["a", "b", "c"], &["B-Chemical", "O", "B-Disease"]))
            .collect();
        Dataset::new(sentences).unwrap()
    }

    #[test]
    fn five_shot_floor() {
        let sample = sample_few_shot(&two_type_corpus(), 5, 7);
        let counts = sample.dataset.mention_counts();
        assert!(counts["Chemical"] >= 5 && counts["Disease"] >= 5);
        assert!(sample.shortfalls.is_empty());
    }

    #[test]
    fn greedy_stop_at_one_sentence() {
        let sample = sample_few_shot(&two_type_corpus(), 1, 3);
        assert_eq!(sample.dataset.len(), 1);
    }

    #[test]
    fn shortfall_is_flagged() {
        let mut sentences = Vec::new();
        for i in 0..3 {
            sentences.push(sent(&format!("r{i}"), &["x"], &["B-Rare"]));
        }
        for i in 0..10 {
            sentences.push(sent(&format!("c{i}"), &["y"], &["B-Common"]));
        }
        let sample = sample_few_shot(&Dataset::new(sentences).unwrap(), 5, 1);
        let counts = sample.dataset.mention_counts();
        assert_eq!(counts["Rare"], 3);
        assert_eq!(sample.shortfalls.get("Rare"), Some(&3));
        assert!(sample.metadata().contains("shortfall.Rare=3"));
    }

    #[test]
    fn sampling_is_deterministic() {
        let ds = two_type_corpus();
        let a = sample_few_shot(&ds, 2, 11);
        let b = sample_few_shot(&ds, 2, 11);
        assert_eq!(a.dataset, b.dataset);
    }
}
