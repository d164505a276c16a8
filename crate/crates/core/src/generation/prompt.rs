//! Prompt templates for the generation and IOB-conversion requests.
//!
//! Templates are plain text with `{sentence}`, `{entities}`, `{n}`, `{labels}`
//! and `{generated}` placeholders. A template line whose placeholders all
//! render empty is left out, so one conversion template serves both the
//! few-shot and the zero-shot channel.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use super::GenError;

pub const DEFAULT_N: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PromptKind {
    RelatedConcepts,
    ParentsChildren,
    Siblings,
    IobConvert,
    ZeroShot,
}

impl PromptKind {
    pub const ALL: [PromptKind; 5] = [
        PromptKind::RelatedConcepts,
        PromptKind::ParentsChildren,
        PromptKind::Siblings,
        PromptKind::IobConvert,
        PromptKind::ZeroShot,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PromptKind::RelatedConcepts => "related_concepts",
            PromptKind::ParentsChildren => "parents_children",
            PromptKind::Siblings => "siblings",
            PromptKind::IobConvert => "iob_convert",
            PromptKind::ZeroShot => "zero_shot",
        }
    }

    fn needs_entities(self) -> bool {
        matches!(
            self,
            PromptKind::RelatedConcepts | PromptKind::ParentsChildren | PromptKind::Siblings
        )
    }
}

impl fmt::Display for PromptKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PromptKind {
    type Err = GenError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| GenError::UnknownPromptKind(s.to_string()))
    }
}

const RELATED_CONCEPTS: &str = "\
Please give me {n} sentences that keep the meaning of the original input sentence basically unchanged and use related concepts of {entities} in the original text based on hierarchical information of UMLS.
Number the sentences from 1 to {n}, one per line.
Input sentence: {sentence}
";

const PARENTS_CHILDREN: &str = "\
Based on your knowledge of hierarchical information of UMLS, please find the parents and children of {entities} in the input sentence by using SNOMEDCT_US dictionary. Then, please give me {n} sentences that keep the meaning of the original input sentence basically unchanged and use parents and children of {entities} in the original text.
Number the sentences from 1 to {n}, one per line.
Input sentence: {sentence}
";

const SIBLINGS: &str = "\
Based on your knowledge of hierarchical information of UMLS, please find the siblings of {entities} in the input sentence by using SNOMEDCT_US dictionary. Then, please give me {n} sentences that keep the meaning of the original input sentence basically unchanged and use siblings of {entities} in the original text.
Number the sentences from 1 to {n}, one per line.
Input sentence: {sentence}
";

const IOB_CONVERT: &str = "\
Please mark the {n} generated sentences into IOB format, and mark the words or phrases with similar meanings to entities in the original text as its corresponding entity types according to IOB format.
Entity types: {labels}
Entities in the original text: {entities}
Input sentence: {sentence}
Generated sentences:
{generated}
Write one token and its tag per line, separated by a space, with a blank line between sentences.
";

const ZERO_SHOT: &str = "\
You are creating training data for biomedical named entity recognition. The entity types are: {labels}.
Please give me {n} sentences in the style of biomedical or clinical text, each mentioning at least one entity of these types.
Number the sentences from 1 to {n}, one per line.
";

/// What gets substituted into a template.
#[derive(Debug, Clone, Default)]
pub struct PromptInput<'a> {
    pub sentence: &'a str,
    pub entities: &'a [String],
    pub labels: &'a [String],
    pub n: usize,
    /// Numbered generated sentences, for the conversion prompt.
    pub generated: &'a [String],
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplates {
    templates: [String; 5],
}

impl Default for PromptTemplates {
    fn default() -> Self {
        PromptTemplates {
            templates: [
                RELATED_CONCEPTS,
                PARENTS_CHILDREN,
                SIBLINGS,
                IOB_CONVERT,
                ZERO_SHOT,
            ]
            .map(str::to_string),
        }
    }
}

impl PromptTemplates {
    /// Reads `<kind>.txt` overrides from `dir`; missing files keep the default.
    pub fn from_dir(dir: &Path) -> std::io::Result<Self> {
        let mut out = Self::default();
        for kind in PromptKind::ALL {
            let path = dir.join(format!("{}.txt", kind.as_str()));
            if path.exists() {
                out.templates[kind as usize] = std::fs::read_to_string(path)?;
            }
        }
        Ok(out)
    }

    pub fn write_dir(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        for kind in PromptKind::ALL {
            std::fs::write(
                dir.join(format!("{}.txt", kind.as_str())),
                &self.templates[kind as usize],
            )?;
        }
        Ok(())
    }

    pub fn template(&self, kind: PromptKind) -> &str {
        &self.templates[kind as usize]
    }

    pub fn build(&self, kind: PromptKind, input: &PromptInput<'_>) -> Result<String, GenError> {
        if kind.needs_entities() && input.entities.is_empty() {
            return Err(GenError::NoEntities(kind));
        }
        if kind == PromptKind::ZeroShot && input.labels.is_empty() {
            return Err(GenError::NoLabels);
        }
        let n = if input.n == 0 { DEFAULT_N } else { input.n };
        let generated = input
            .generated
            .iter()
            .enumerate()
            .map(|(i, s)| format!("{}. {s}", i + 1))
            .collect::<Vec<_>>()
            .join("\n");
        let values = [
            ("{sentence}", input.sentence.to_string()),
            ("{entities}", input.entities.join(", ")),
            ("{n}", n.to_string()),
            ("{labels}", input.labels.join(", ")),
            ("{generated}", generated),
        ];

        let mut out = String::new();
        for line in self.template(kind).split_inclusive('\n') {
            let mut rendered = line.to_string();
            let mut had_placeholder = false;
            let mut all_empty = true;
            for (key, value) in &values {
                if rendered.contains(key) {
                    had_placeholder = true;
                    all_empty &= value.is_empty();
                    rendered = rendered.replace(key, value);
                }
            }
            if had_placeholder && all_empty {
                continue;
            }
            out.push_str(&rendered);
        }
        Ok(out)
    }
}

/// Builds a prompt from the default templates.
pub fn build_prompt(
    kind: PromptKind,
    sentence_text: &str,
    entity_surfaces: &[String],
    label_set: &[String],
    n: usize,
) -> Result<String, GenError> {
    PromptTemplates::default().build(
        kind,
        &PromptInput {
            sentence: sentence_text,
            entities: entity_surfaces,
            labels: label_set,
            n,
            generated: &[],
        },
    )
}
