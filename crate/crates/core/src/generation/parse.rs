//! Parsers for LLM responses: numbered sentence lists and token/tag blocks.

use std::collections::BTreeSet;

use crate::corpus::{validate_iob, IobPolicy, Sentence, Tag, Token};

use super::GenError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NumberedSentences {
    pub items: Vec<String>,
    /// Fewer than the expected number of sentences were found.
    pub shortfall: bool,
}

/// Strips a `12.` or `12)` list marker; `None` when the line carries none.
fn strip_number(line: &str) -> Option<&str> {
    let line = line.trim_start_matches(['*', '#', ' ']);
    let digits = line.chars().take_while(char::is_ascii_digit).count();
    if digits == 0 {
        return None;
    }
    let rest = &line[digits..];
    let rest = rest.strip_prefix('.').or_else(|| rest.strip_prefix(')'))?;
    let rest = rest.trim_start_matches('*').trim();
    (!rest.is_empty()).then_some(rest)
}

/// Extracts numbered list items, up to `expected`.
pub fn parse_numbered_sentences(text: &str, expected: usize) -> Result<NumberedSentences, GenError> {
    let expected = expected.max(1);
    let items: Vec<String> = text
        .lines()
        .filter_map(|l| strip_number(l.trim()))
        .map(|s| s.trim_matches('"').trim().to_string())
        .filter(|s| !s.is_empty())
        .take(expected)
        .collect();
    if items.is_empty() {
        return Err(GenError::NoSentences);
    }
    Ok(NumberedSentences {
        shortfall: items.len() < expected,
        items,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IobBlock {
    pub sentences: Vec<Sentence>,
    /// Tags whose type was outside the label set and became `O`.
    pub coerced: usize,
    /// Tags rewritten by IOB repair.
    pub repaired: usize,
    /// Non-pair lines, which also close the sentence in progress.
    pub skipped_lines: usize,
}

/// Splits `token tag` or `token/tag`. The token half must be a single token.
fn split_pair(line: &str) -> Option<(&str, &str)> {
    if let Some(idx) = line.rfind(char::is_whitespace) {
        let (tok, tag) = (line[..idx].trim(), line[idx..].trim());
        return (!tok.is_empty() && !tok.contains(char::is_whitespace)).then_some((tok, tag));
    }
    let (tok, tag) = line.rsplit_once('/')?;
    (!tok.is_empty()).then_some((tok, tag))
}

enum RawTag<'a> {
    Outside,
    Typed { inside: bool, ty: &'a str },
}

fn raw_tag(s: &str) -> Option<RawTag<'_>> {
    if s.eq_ignore_ascii_case("o") {
        return Some(RawTag::Outside);
    }
    let (prefix, ty) = s.split_once('-')?;
    if ty.is_empty() {
        return None;
    }
    match prefix {
        "B" | "b" => Some(RawTag::Typed { inside: false, ty }),
        "I" | "i" => Some(RawTag::Typed { inside: true, ty }),
        _ => None,
    }
}

/// Parses token/tag pairs into sentences, coercing unknown types to `O` and repairing IOB.
pub fn parse_iob_block(text: &str, label_set: &BTreeSet<String>) -> Result<IobBlock, GenError> {
    if label_set.is_empty() {
        return Err(GenError::NoLabels);
    }
    let mut block = IobBlock::default();
    let mut tokens: Vec<Token> = Vec::new();
    let mut tags: Vec<Tag> = Vec::new();

    let flush = |tokens: &mut Vec<Token>, tags: &mut Vec<Tag>, block: &mut IobBlock| {
        if tokens.is_empty() {
            return;
        }
        let raw = std::mem::take(tags);
        let fixed = validate_iob(&raw, IobPolicy::Repair).expect("repair never fails");
        block.repaired += raw.iter().zip(&fixed).filter(|(a, b)| a != b).count();
        let id = format!("g{}", block.sentences.len());
        block
            .sentences
            .push(Sentence::new(id, std::mem::take(tokens), fixed).expect("repaired sequence is valid"));
    };

    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() {
            flush(&mut tokens, &mut tags, &mut block);
            continue;
        }
        let parsed = split_pair(line).and_then(|(tok, tag)| Some((Token::new(tok).ok()?, raw_tag(tag)?)));
        let Some((token, raw)) = parsed else {
            block.skipped_lines += 1;
            flush(&mut tokens, &mut tags, &mut block);
            continue;
        };
        let tag = match raw {
            RawTag::Outside => Tag::Outside,
            RawTag::Typed { inside, ty } => {
                match label_set.iter().find(|l| l.eq_ignore_ascii_case(ty)) {
                    Some(label) if inside => Tag::Inside(label.clone()),
                    Some(label) => Tag::Begin(label.clone()),
                    None => {
                        log::debug!("coercing out-of-label tag `{ty}` on `{token}` to O");
                        block.coerced += 1;
                        Tag::Outside
                    }
                }
            }
        };
        tokens.push(token);
        tags.push(tag);
    }
    flush(&mut tokens, &mut tags, &mut block);

    if block.sentences.is_empty() {
        return Err(GenError::NoIobSentences);
    }
    Ok(block)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::parse_tags;

    fn labels(xs: &[&str]) -> BTreeSet<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn numbered_basic() {
        let got = parse_numbered_sentences("1. A\n2. B\n", 2).unwrap();
        assert_eq!(got.items, vec!["A", "B"]);
        assert!(!got.shortfall);
    }

    #[test]
    fn numbered_ten() {
        let text: String = (1..=10).map(|i| format!("{i}) Sentence number {i}.\n")).collect();
        let got = parse_numbered_sentences(&text, 10).unwrap();
        assert_eq!(got.items.len(), 10);
        assert_eq!(got.items[9], "Sentence number 10.");
    }

    #[test]
    fn numbered_shortfall_and_noise() {
        let text = "Here are the sentences:\n\n1. First one.\n**2.** Second one.\nThanks!";
        let got = parse_numbered_sentences(text, 10).unwrap();
        assert_eq!(got.items, vec!["First one.", "Second one."]);
        assert!(got.shortfall);
        assert!(matches!(
            parse_numbered_sentences("no list here", 3),
            Err(GenError::NoSentences)
        ));
    }

    #[test]
    fn iob_basic() {
        let block = parse_iob_block("Aspirin B-Chemical\ncauses O\n", &labels(&["Chemical"])).unwrap();
        assert_eq!(block.sentences.len(), 1);
        assert_eq!(
            block.sentences[0].tags(),
            parse_tags(&["B-Chemical", "O"]).unwrap().as_slice()
        );
    }

    #[test]
    fn iob_coerces_unknown_types() {
        let block = parse_iob_block(
            "pain B-Symptom\nand O\nasthma B-Disease\n",
            &labels(&["Chemical", "Disease"]),
        )
        .unwrap();
        assert_eq!(block.sentences[0].tags()[0], Tag::Outside);
        assert_eq!(block.coerced, 1);
    }

    #[test]
    fn iob_repairs_dangling_inside() {
        let block = parse_iob_block("asthma I-Disease\nattack O\n", &labels(&["Disease"])).unwrap();
        assert_eq!(block.sentences[0].tags()[0], Tag::Begin("Disease".into()));
        assert_eq!(block.repaired, 1);
    }

    #[test]
    fn iob_slash_pairs_and_separators() {
        let text = "Sentence 1:\nAspirin/B-Chemical\nworks/O\n\n\nSentence 2:\nheart b-disease\nattack i-DISEASE\n```";
        let block = parse_iob_block(text, &labels(&["Chemical", "Disease"])).unwrap();
        assert_eq!(block.sentences.len(), 2);
        assert_eq!(
            block.sentences[1].tags(),
            parse_tags(&["B-Disease", "I-Disease"]).unwrap().as_slice()
        );
        assert_eq!(block.skipped_lines, 3);
    }

    #[test]
    fn iob_requires_something() {
        assert!(matches!(
            parse_iob_block("nothing useful here\n", &labels(&["X"])),
            Err(GenError::NoIobSentences)
        ));
        assert!(matches!(parse_iob_block("a O\n", &BTreeSet::new()), Err(GenError::NoLabels)));
    }
}
