//! Regenerates the canned LLM responses for the toy run.
//!
//! A scripted stand-in for the chat model answers every request the
//! `generate` stage makes, and the client's cache writes each answer to
//! `<mock_dir>/<digest>.txt`. Paraphrases substitute vocabulary terms into
//! the few-shot sentence; tagging is a longest-match dictionary lookup.
//!
//! ```text
//! cargo run -p nerforge-core --example toy_mocks -- data/toy/run.conf
//! ```

use std::collections::BTreeMap;
use std::path::PathBuf;

use nerforge::corpus::{parse_conll, tokenize, Dataset};
use nerforge::generation::{
    generate_channels, umls_terms, ChatBody, ChatClient, ClientConfig, GenLayer, Transport, TransportError,
};
use nerforge::knowledge::{load_store, KnowledgeStore};
use nerforge::pipeline::{run_stage, KbSource, RunConfig, Stage};

struct ScriptedModel {
    store: KnowledgeStore,
    few_shot: Dataset,
    cap: usize,
    /// Lowercased token sequence to entity type, longest first.
    lexicon: Vec<(Vec<String>, String)>,
}

fn requested_count(prompt: &str) -> usize {
    prompt
        .split("give me ")
        .nth(1)
        .and_then(|rest| rest.split_whitespace().next())
        .and_then(|n| n.parse().ok())
        .unwrap_or(10)
}

fn line_after<'a>(prompt: &'a str, prefix: &str) -> Option<&'a str> {
    prompt.lines().find_map(|l| l.strip_prefix(prefix))
}

impl ScriptedModel {
    fn paraphrase(&self, prompt: &str, layer: GenLayer) -> String {
        let n = requested_count(prompt);
        let input = line_after(prompt, "Input sentence: ").unwrap_or_default();
        let Some(src) = self.few_shot.sentences().iter().find(|s| s.text() == input) else {
            return "I could not find the input sentence.".into();
        };
        let spans = src.spans();
        let options: Vec<Vec<String>> = spans
            .iter()
            .map(|s| {
                let mut terms = umls_terms(&self.store, &s.surface, layer, self.cap);
                if terms.is_empty() {
                    terms.push(s.surface.clone());
                }
                terms
            })
            .collect();
        let frames = ["{}", "In this report , {}", "{} according to the notes"];
        let mut out = String::from("Here are the sentences:\n\n");
        for i in 0..n {
            let mut words: Vec<String> = src.tokens().iter().map(|t| t.as_str().to_string()).collect();
            for (j, span) in spans.iter().enumerate().rev() {
                let term = &options[j][(i + j) % options[j].len()];
                words.splice(span.start..span.end, term.split_whitespace().map(str::to_string));
            }
            let body = frames[i % frames.len()].replace("{}", &words.join(" "));
            out.push_str(&format!("{}. {body}\n", i + 1));
        }
        out
    }

    fn zero_shot(&self, prompt: &str) -> String {
        let n = requested_count(prompt);
        let of_type = |tui: &str| -> Vec<&str> {
            self.store
                .concepts()
                .filter(|c| c.semantic_types.contains(tui))
                .map(|c| c.preferred_term())
                .collect()
        };
        let (chems, diseases) = (of_type("T121"), of_type("T047"));
        (0..n)
            .map(|i| {
                format!(
                    "{}. {} was prescribed to a patient with {} .\n",
                    i + 1,
                    chems[i % chems.len()],
                    diseases[(i * 3 + 1) % diseases.len()]
                )
            })
            .collect()
    }

    fn tag(&self, prompt: &str) -> String {
        let generated: Vec<&str> = prompt
            .split("Generated sentences:\n")
            .nth(1)
            .unwrap_or_default()
            .lines()
            .take_while(|l| !l.starts_with("Write one token"))
            .filter_map(|l| l.split_once(". ").map(|(_, s)| s))
            .collect();
        let mut out = String::from("```\n");
        for sentence in generated {
            let tokens: Vec<String> = tokenize(sentence).iter().map(|t| t.as_str().to_string()).collect();
            let lower: Vec<String> = tokens.iter().map(|t| t.to_lowercase()).collect();
            let mut i = 0;
            while i < tokens.len() {
                let hit = self
                    .lexicon
                    .iter()
                    .find(|(seq, _)| lower[i..].starts_with(seq));
                match hit {
                    Some((seq, ty)) => {
                        for (k, tok) in tokens[i..i + seq.len()].iter().enumerate() {
                            out.push_str(&format!("{tok} {}-{ty}\n", if k == 0 { "B" } else { "I" }));
                        }
                        i += seq.len();
                    }
                    None => {
                        // an off-label guess the parser must coerce
                        let tag = if lower[i] == "pain" { "B-Symptom" } else { "O" };
                        out.push_str(&format!("{} {tag}\n", tokens[i]));
                        i += 1;
                    }
                }
            }
            out.push('\n');
        }
        out.push_str("```\n");
        out
    }
}

impl Transport for ScriptedModel {
    fn complete(&self, body: &ChatBody) -> Result<String, TransportError> {
        let prompt = &body.messages[0].content;
        let text = if prompt.contains("into IOB format") {
            self.tag(prompt)
        } else if prompt.starts_with("You are creating training data") {
            self.zero_shot(prompt)
        } else if prompt.contains("siblings of") {
            self.paraphrase(prompt, GenLayer::Siblings)
        } else if prompt.contains("parents and children of") {
            self.paraphrase(prompt, GenLayer::ParentsChildren)
        } else {
            self.paraphrase(prompt, GenLayer::RelatedConcepts)
        };
        Ok(text)
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let conf = std::env::args().nth(1).unwrap_or_else(|| "data/toy/run.conf".into());
    let scratch = tempfile::tempdir()?;
    let out = scratch.path().to_string_lossy().into_owned();
    let cfg = RunConfig::load(&PathBuf::from(&conf), &[("out".into(), out)])?;
    let mock_dir = cfg.llm.mock_dir.clone().ok_or("config has no llm.mock_dir")?;

    run_stage(&cfg, Stage::Sample)?;
    let few_shot = parse_conll(&std::fs::read_to_string(cfg.out_dir.join("few_shot.conll"))?)?;
    let KbSource::Files { concepts, types, relations } = &cfg.kb else {
        return Err("toy config uses separate snapshot files".into());
    };
    let (store, _) = load_store(
        &std::fs::read_to_string(concepts)?,
        &std::fs::read_to_string(types)?,
        &std::fs::read_to_string(relations)?,
        &cfg.kb_source_filter,
    )?;

    let labels = BTreeMap::from([("T047", "Disease"), ("T121", "Chemical")]);
    let mut lexicon: Vec<(Vec<String>, String)> = store
        .concepts()
        .flat_map(|c| {
            let ty = c.semantic_types.iter().find_map(|t| labels.get(t.as_str())).copied();
            c.terms.iter().filter_map(move |t| ty.map(|ty| (t.clone(), ty.to_string())))
        })
        .chain(few_shot.sentences().iter().flat_map(|s| s.spans()).map(|s| (s.surface, s.entity_type)))
        .map(|(term, ty)| (term.to_lowercase().split_whitespace().map(str::to_string).collect(), ty))
        .collect();
    lexicon.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then(a.cmp(b)));
    lexicon.dedup();

    if mock_dir.exists() {
        std::fs::remove_dir_all(&mock_dir)?;
    }
    std::fs::create_dir_all(&mock_dir)?;
    let client_cfg = ClientConfig {
        mock_dir: None,
        cache_dir: Some(mock_dir.clone()),
        max_in_flight: 1,
        ..cfg.llm.clone()
    };
    let model = ScriptedModel {
        store: store.clone(),
        few_shot: few_shot.clone(),
        cap: cfg.gen.cap,
        lexicon,
    };
    let client = ChatClient::with_transport(client_cfg, Box::new(model));
    let corpus = generate_channels(&store, &few_shot, &client, &cfg.gen)?;
    println!("wrote {} responses to {}", client.stats().network_calls, mock_dir.display());
    for (k, n) in corpus.counts() {
        println!("  {k}: {n}");
    }
    Ok(())
}
