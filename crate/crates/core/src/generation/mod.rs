//! Synthetic sentence generation over two channels.
//!
//! The knowledge-base channel substitutes each entity of a few-shot sentence
//! with terms from the vocabulary snapshot. The LLM channel asks a chat model
//! for paraphrases using related concepts, then asks it again to tag those
//! paraphrases in IOB format. The LLM channel is then cut back so that, per
//! `(source sentence, layer)`, it never outnumbers the knowledge-base channel.

mod client;
mod parse;
mod prompt;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::corpus::{tokenize, Dataset, EntitySpan, Sentence, Tag};
use crate::knowledge::{normalize_term, ExpansionLayer, KnowledgeStore, DEFAULT_CAP};

pub use client::{
    assistant_text, request_digest, write_atomic, ChatBody, ChatClient, ChatError, ChatMessage,
    ClientConfig, ClientStats, GenerationRequest, HttpTransport, Transport, TransportError,
};
pub use parse::{parse_iob_block, parse_numbered_sentences, IobBlock, NumberedSentences};
pub use prompt::{build_prompt, PromptInput, PromptKind, PromptTemplates, DEFAULT_N};

#[derive(Debug, Error)]
pub enum GenError {
    #[error("unknown prompt kind `{0}`")]
    UnknownPromptKind(String),
    #[error("unknown generation layer `{0}`")]
    UnknownLayer(String),
    #[error("prompt `{0}` needs at least one entity")]
    NoEntities(PromptKind),
    #[error("label set is empty")]
    NoLabels,
    #[error("no numbered sentences in response")]
    NoSentences,
    #[error("no token/tag sentences in response")]
    NoIobSentences,
    #[error("span {start}..{end} ({ty}) is not an entity of sentence `{id}`")]
    SpanNotFound {
        id: String,
        start: usize,
        end: usize,
        ty: String,
    },
    #[error("replacement text is empty")]
    EmptyReplacement,
    #[error("no generation layers are active")]
    NoLayers,
    #[error("few-shot set is empty")]
    EmptyFewShot,
    #[error("no synthetic sentences were produced")]
    NoSynthetic,
    #[error(transparent)]
    Chat(#[from] ChatError),
}

/// The three related-concept layers, each with its own prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum GenLayer {
    RelatedConcepts,
    ParentsChildren,
    Siblings,
}

impl GenLayer {
    pub const ALL: [GenLayer; 3] = [
        GenLayer::RelatedConcepts,
        GenLayer::ParentsChildren,
        GenLayer::Siblings,
    ];

    pub fn as_str(self) -> &'static str {
        self.prompt_kind().as_str()
    }

    pub fn prompt_kind(self) -> PromptKind {
        match self {
            GenLayer::RelatedConcepts => PromptKind::RelatedConcepts,
            GenLayer::ParentsChildren => PromptKind::ParentsChildren,
            GenLayer::Siblings => PromptKind::Siblings,
        }
    }

    /// Knowledge-base layers queried, in order, for this layer's replacement terms.
    pub fn expansion_layers(self) -> &'static [ExpansionLayer] {
        match self {
            GenLayer::RelatedConcepts => &[ExpansionLayer::Synonym, ExpansionLayer::SemanticType],
            GenLayer::ParentsChildren => &[ExpansionLayer::Parent, ExpansionLayer::Child],
            GenLayer::Siblings => &[ExpansionLayer::Sibling],
        }
    }
}

impl fmt::Display for GenLayer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GenLayer {
    type Err = GenError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| GenError::UnknownLayer(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Channel {
    Umls,
    Llm,
    ZeroShot,
}

impl Channel {
    pub fn as_str(self) -> &'static str {
        match self {
            Channel::Umls => "umls",
            Channel::Llm => "llm",
            Channel::ZeroShot => "zero_shot",
        }
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Channel {
    type Err = GenError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [Channel::Umls, Channel::Llm, Channel::ZeroShot]
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| GenError::UnknownLayer(s.to_string()))
    }
}

/// A generated sentence with its provenance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntheticSentence {
    pub sentence: Sentence,
    pub channel: Channel,
    pub layer: Option<GenLayer>,
    pub source_id: Option<String>,
    pub replacement: Option<String>,
    /// Index of the request whose response produced this sentence (LLM channels).
    pub request_index: Option<usize>,
}

impl SyntheticSentence {
    pub fn budget_key(&self) -> Option<(&str, GenLayer)> {
        Some((self.source_id.as_deref()?, self.layer?))
    }
}

/// Replaces the tokens of `span` with the whitespace-tokenized `replacement`.
pub fn substitute_entity(
    src: &Sentence,
    span: &EntitySpan,
    replacement: &str,
    layer: Option<GenLayer>,
) -> Result<SyntheticSentence, GenError> {
    if !src.spans().iter().any(|s| s.key() == span.key()) {
        return Err(GenError::SpanNotFound {
            id: src.id().to_string(),
            start: span.start,
            end: span.end,
            ty: span.entity_type.clone(),
        });
    }
    let new_tokens = tokenize(replacement);
    if new_tokens.is_empty() {
        return Err(GenError::EmptyReplacement);
    }

    let mut tokens = src.tokens()[..span.start].to_vec();
    let mut tags = src.tags()[..span.start].to_vec();
    tags.push(Tag::Begin(span.entity_type.clone()));
    tags.extend((1..new_tokens.len()).map(|_| Tag::Inside(span.entity_type.clone())));
    tokens.extend(new_tokens);
    tokens.extend_from_slice(&src.tokens()[span.end..]);
    tags.extend_from_slice(&src.tags()[span.end..]);

    let sentence = Sentence::new(format!("{}+sub", src.id()), tokens, tags)
        .expect("splicing a whole span keeps IOB validity");
    Ok(SyntheticSentence {
        sentence,
        channel: Channel::Umls,
        layer,
        source_id: Some(src.id().to_string()),
        replacement: Some(replacement.to_string()),
        request_index: None,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BudgetOutcome {
    pub kept: Vec<SyntheticSentence>,
    /// Keys where the LLM channel produced fewer items than the knowledge-base channel.
    pub shortfalls: Vec<(String, GenLayer)>,
}

/// Truncates LLM items per `(source, layer)` to the knowledge-base count, earliest request first.
pub fn match_budget(umls: &[SyntheticSentence], llm: Vec<SyntheticSentence>) -> BudgetOutcome {
    let mut budget: BTreeMap<(String, GenLayer), usize> = BTreeMap::new();
    for item in umls {
        if let Some((src, layer)) = item.budget_key() {
            *budget.entry((src.to_string(), layer)).or_default() += 1;
        }
    }

    let mut llm = llm;
    // stable: items from one response keep their order
    llm.sort_by_key(|s| s.request_index.unwrap_or(usize::MAX));
    let mut used: BTreeMap<(String, GenLayer), usize> = BTreeMap::new();
    let mut kept = Vec::new();
    for item in llm {
        let Some((src, layer)) = item.budget_key() else {
            continue;
        };
        let key = (src.to_string(), layer);
        let n = used.entry(key.clone()).or_default();
        if *n < budget.get(&key).copied().unwrap_or(0) {
            *n += 1;
            kept.push(item);
        }
    }
    let shortfalls = budget
        .iter()
        .filter(|(k, &b)| used.get(*k).copied().unwrap_or(0) < b)
        .map(|(k, _)| k.clone())
        .collect();
    BudgetOutcome { kept, shortfalls }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChannelSet {
    pub umls: bool,
    pub llm: bool,
    pub zero_shot: bool,
}

impl Default for ChannelSet {
    fn default() -> Self {
        ChannelSet {
            umls: true,
            llm: true,
            zero_shot: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GenConfig {
    pub layers: Vec<GenLayer>,
    pub cap: usize,
    /// Sentences requested per generation prompt.
    pub n: usize,
    pub channels: ChannelSet,
    pub enforce_budget: bool,
    pub temperature: f64,
    pub convert_temperature: f64,
    pub max_output_tokens: u32,
    pub templates: PromptTemplates,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            layers: GenLayer::ALL.to_vec(),
            cap: DEFAULT_CAP,
            n: DEFAULT_N,
            channels: ChannelSet::default(),
            enforce_budget: true,
            temperature: 0.7,
            convert_temperature: 0.0,
            max_output_tokens: 1024,
            templates: PromptTemplates::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GenerationReport {
    pub requests: usize,
    pub failures: Vec<String>,
    pub warnings: Vec<String>,
    pub coerced_tags: usize,
    pub repaired_tags: usize,
    pub budget_shortfalls: Vec<(String, GenLayer)>,
    pub stats: ClientStats,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SyntheticCorpus {
    pub items: Vec<SyntheticSentence>,
    pub report: GenerationReport,
}

impl SyntheticCorpus {
    /// Item counts keyed by `<channel>` or `<channel>.<layer>`.
    pub fn counts(&self) -> BTreeMap<String, usize> {
        let mut out = BTreeMap::new();
        for item in &self.items {
            let key = match item.layer {
                Some(l) => format!("{}.{}", item.channel, l),
                None => item.channel.to_string(),
            };
            *out.entry(key).or_default() += 1;
        }
        out
    }

    pub fn sentences(&self) -> impl Iterator<Item = &Sentence> {
        self.items.iter().map(|s| &s.sentence)
    }
}

/// Replacement terms for one entity under one layer: expansion layers merged in order,
/// deduplicated after normalization, capped.
pub fn umls_terms(store: &KnowledgeStore, surface: &str, layer: GenLayer, cap: usize) -> Vec<String> {
    let mut seen: HashSet<String> = HashSet::from([normalize_term(surface)]);
    layer
        .expansion_layers()
        .iter()
        .flat_map(|&l| store.expand_entity(surface, l, cap).terms)
        .filter(|t| seen.insert(normalize_term(t)))
        .take(cap)
        .collect()
}

fn entity_surfaces(spans: &[EntitySpan]) -> Vec<String> {
    let mut seen = HashSet::new();
    spans
        .iter()
        .filter(|s| seen.insert(s.surface.clone()))
        .map(|s| s.surface.clone())
        .collect()
}

/// A pending step-one request and where its output belongs.
struct Pending {
    source: Option<(String, String, Vec<String>)>,
    layer: Option<GenLayer>,
    channel: Channel,
    request: GenerationRequest,
}

/// Runs both channels over the few-shot set and assembles the synthetic corpus.
pub fn generate_channels(
    store: &KnowledgeStore,
    few_shot: &Dataset,
    client: &ChatClient,
    cfg: &GenConfig,
) -> Result<SyntheticCorpus, GenError> {
    if cfg.layers.is_empty() {
        return Err(GenError::NoLayers);
    }
    if few_shot.is_empty() {
        return Err(GenError::EmptyFewShot);
    }
    let labels: Vec<String> = few_shot.label_set().iter().cloned().collect();
    let mut report = GenerationReport::default();

    // knowledge-base channel; its counts are the LLM budget
    let mut umls_items = Vec::new();
    let mut budget: BTreeMap<(String, GenLayer), usize> = BTreeMap::new();
    if cfg.channels.umls {
        for sentence in few_shot.sentences() {
            for &layer in &cfg.layers {
                for span in sentence.spans() {
                    for term in umls_terms(store, &span.surface, layer, cfg.cap) {
                        umls_items.push(substitute_entity(sentence, &span, &term, Some(layer))?);
                        *budget.entry((sentence.id().to_string(), layer)).or_default() += 1;
                    }
                }
            }
        }
    }
    let has_budget = |id: &str, layer: GenLayer| {
        !cfg.enforce_budget || budget.get(&(id.to_string(), layer)).copied().unwrap_or(0) > 0
    };

    // step one: paraphrase requests
    let mut pending = Vec::new();
    let mut next_index = 0;
    let mut request = |prompt: String, temperature: f64| {
        let r = GenerationRequest {
            prompt,
            temperature,
            max_output_tokens: cfg.max_output_tokens,
            request_index: next_index,
        };
        next_index += 1;
        r
    };
    if cfg.channels.llm {
        for sentence in few_shot.sentences() {
            let surfaces = entity_surfaces(&sentence.spans());
            if surfaces.is_empty() {
                continue;
            }
            let text = sentence.text();
            for &layer in &cfg.layers {
                if !has_budget(sentence.id(), layer) {
                    continue;
                }
                let prompt = cfg.templates.build(
                    layer.prompt_kind(),
                    &PromptInput {
                        sentence: &text,
                        entities: &surfaces,
                        labels: &labels,
                        n: cfg.n,
                        generated: &[],
                    },
                )?;
                pending.push(Pending {
                    source: Some((sentence.id().to_string(), text.clone(), surfaces.clone())),
                    layer: Some(layer),
                    channel: Channel::Llm,
                    request: request(prompt, cfg.temperature),
                });
            }
        }
    }
    let zero_shot_budget = if cfg.enforce_budget {
        umls_items.len()
    } else {
        usize::MAX
    };
    if cfg.channels.zero_shot && zero_shot_budget > 0 {
        let prompt = cfg.templates.build(
            PromptKind::ZeroShot,
            &PromptInput {
                labels: &labels,
                n: cfg.n,
                ..Default::default()
            },
        )?;
        pending.push(Pending {
            source: None,
            layer: None,
            channel: Channel::ZeroShot,
            request: request(prompt, cfg.temperature),
        });
    }

    let step_one: Vec<GenerationRequest> = pending.iter().map(|p| p.request.clone()).collect();
    let responses = client.call_many(&step_one);

    // step two: conversion requests for every parsed paraphrase list
    let mut converts = Vec::new();
    let mut convert_meta = Vec::new();
    for (p, (_, response)) in pending.iter().zip(responses) {
        let text = match response {
            Ok(t) => t,
            Err(e) => {
                report.failures.push(format!("request {}: {e}", p.request.request_index));
                continue;
            }
        };
        let parsed = match parse_numbered_sentences(&text, cfg.n) {
            Ok(parsed) => parsed,
            Err(e) => {
                report.failures.push(format!("request {}: {e}", p.request.request_index));
                continue;
            }
        };
        if parsed.shortfall {
            report.warnings.push(format!(
                "request {}: {} of {} sentences parsed",
                p.request.request_index,
                parsed.items.len(),
                cfg.n
            ));
        }
        let (sentence, entities) = match &p.source {
            Some((_, text, surfaces)) => (text.as_str(), surfaces.as_slice()),
            None => ("", &[][..]),
        };
        let prompt = cfg.templates.build(
            PromptKind::IobConvert,
            &PromptInput {
                sentence,
                entities,
                labels: &labels,
                n: parsed.items.len(),
                generated: &parsed.items,
            },
        )?;
        converts.push(request(prompt, cfg.convert_temperature));
        convert_meta.push(p);
    }
    let converted = client.call_many(&converts);

    let label_set: BTreeSet<String> = few_shot.label_set().clone();
    let mut llm_items = Vec::new();
    let mut zero_items = Vec::new();
    for (p, (index, response)) in convert_meta.into_iter().zip(converted) {
        let block = match response
            .map_err(GenError::from)
            .and_then(|text| parse_iob_block(&text, &label_set))
        {
            Ok(block) => block,
            Err(e) => {
                report.failures.push(format!("request {index}: {e}"));
                continue;
            }
        };
        report.coerced_tags += block.coerced;
        report.repaired_tags += block.repaired;
        for sentence in block.sentences {
            let item = SyntheticSentence {
                sentence,
                channel: p.channel,
                layer: p.layer,
                source_id: p.source.as_ref().map(|(id, _, _)| id.clone()),
                replacement: None,
                request_index: Some(index),
            };
            match p.channel {
                Channel::ZeroShot => zero_items.push(item),
                _ => llm_items.push(item),
            }
        }
    }
    report.requests = next_index;

    if cfg.enforce_budget {
        let outcome = match_budget(&umls_items, llm_items);
        llm_items = outcome.kept;
        report.budget_shortfalls = outcome.shortfalls;
        zero_items.truncate(zero_shot_budget);
    }
    if report.coerced_tags > 0 {
        report
            .warnings
            .push(format!("{} out-of-label tag(s) coerced to O", report.coerced_tags));
    }

    let mut items = Vec::new();
    for (prefix, group) in [("u", umls_items), ("l", llm_items), ("z", zero_items)] {
        for (i, mut item) in group.into_iter().enumerate() {
            item.sentence = item.sentence.with_id(format!("{prefix}{i}"));
            items.push(item);
        }
    }
    report.stats = client.stats();
    if items.is_empty() {
        return Err(GenError::NoSynthetic);
    }
    Ok(SyntheticCorpus { items, report })
}
