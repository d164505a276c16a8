use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{parse_conll, sample_few_shot, write_conll, write_sentences, Dataset};
use crate::ensemble::{apply, select_best_ensemble, EnsembleError, MAX_SEARCH_MEMBERS};
use crate::eval::{evaluate_strict, improvement_summary};
use crate::generation::{generate_channels, write_atomic, ChatClient, GenError, GenLayer};
use crate::knowledge::{ExpansionLayer, KnowledgeStore, SnapshotFiles};
use crate::tagger::{fit, import_predictions, PredictionSet};

use super::config::{EnsembleSettings, KbSource, RunConfig};
use super::{file_digest, parse_kv, PipelineError, Stage, StageRecord};

const BASELINE: &str = "original";
const COMBINED: &str = "combined";
const BEST: &str = "best_ensemble";

pub(crate) fn run(cfg: &RunConfig, stage: Stage) -> Result<StageRecord, PipelineError> {
    let mut rec = StageRecord::default();
    match stage {
        Stage::Sample => sample(cfg, &mut rec)?,
        Stage::Expand => expand(cfg, &mut rec)?,
        Stage::Generate => generate(cfg, &mut rec)?,
        Stage::Augment => augment(cfg, &mut rec)?,
        Stage::Tag => tag(cfg, &mut rec)?,
        Stage::Ensemble => ensemble(cfg, &mut rec)?,
        Stage::Eval => eval(cfg, &mut rec)?,
        Stage::Report => report(cfg, &mut rec)?,
    }
    Ok(rec)
}

fn read_text(path: &Path) -> Result<String, PipelineError> {
    std::fs::read_to_string(path).map_err(PipelineError::io(path))
}

fn read_dataset(path: &Path) -> Result<Dataset, PipelineError> {
    parse_conll(&read_text(path)?).map_err(|source| PipelineError::Corpus {
        path: path.to_path_buf(),
        source,
    })
}

fn write(cfg: &RunConfig, rec: &mut StageRecord, rel: &str, text: &str) -> Result<(), PipelineError> {
    let path = cfg.out_dir.join(rel);
    write_atomic(&path, text.as_bytes()).map_err(PipelineError::io(&path))?;
    rec.outputs.push(PathBuf::from(rel));
    Ok(())
}

fn fresh_dir(cfg: &RunConfig, rel: &str) -> Result<(), PipelineError> {
    let dir = cfg.out_dir.join(rel);
    if dir.exists() {
        std::fs::remove_dir_all(&dir).map_err(PipelineError::io(&dir))?;
    }
    std::fs::create_dir_all(&dir).map_err(PipelineError::io(&dir))
}

/// Sorted file names in `dir` ending with `suffix`, with the suffix removed.
fn stems(dir: &Path, suffix: &str) -> Result<Vec<String>, PipelineError> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(PipelineError::io(dir))? {
        let entry = entry.map_err(PipelineError::io(dir))?;
        if let Some(stem) = entry.file_name().to_str().and_then(|n| n.strip_suffix(suffix)) {
            out.push(stem.to_string());
        }
    }
    out.sort_by(|a, b| method_rank(a).cmp(&method_rank(b)));
    Ok(out)
}

/// Report order: baseline, knowledge-base layers, LLM layers, zero-shot,
/// combined, external models, ensemble.
fn method_rank(name: &str) -> (usize, String) {
    let layer = |l: &str| GenLayer::ALL.iter().position(|g| g.as_str() == l);
    let rank = match name {
        BASELINE => 0,
        "zero_shot" => 7,
        COMBINED => 8,
        BEST => 10,
        _ => match name.split_once('.') {
            Some(("umls", l)) => layer(l).map_or(9, |i| 1 + i),
            Some(("llm", l)) => layer(l).map_or(9, |i| 4 + i),
            _ => 9,
        },
    };
    (rank, name.to_string())
}

/// Display name of a method in the report table.
pub fn method_label(name: &str) -> String {
    let pretty = |l: &str| l.replace('_', " ");
    match name {
        BASELINE => "Original few-shot".into(),
        "zero_shot" => "Zero-shot generation".into(),
        COMBINED => "All synthetic".into(),
        BEST => "Best-Ensemble".into(),
        _ => match name.split_once('.') {
            Some(("umls", l)) => format!("UMLS: {}", pretty(l)),
            Some(("llm", l)) => format!("LLM: {}", pretty(l)),
            _ => name.to_string(),
        },
    }
}

/// Holds out `fraction` of the sentences whose ids are not in `exclude`,
/// chosen by a seeded shuffle and kept in corpus order.
pub fn split_dev(train: &Dataset, exclude: &BTreeSet<String>, fraction: f64, seed: u64) -> Dataset {
    let mut rest: Vec<usize> = (0..train.len())
        .filter(|&i| !exclude.contains(train.sentences()[i].id()))
        .collect();
    let take = ((rest.len() as f64 * fraction).round() as usize).clamp(rest.len().min(1), rest.len());
    rest.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut picked = rest[..take].to_vec();
    picked.sort_unstable();
    Dataset::with_labels(
        picked.into_iter().map(|i| train.sentences()[i].clone()).collect(),
        train.label_set().clone(),
    )
    .expect("subset of a valid dataset")
}

fn load_kb(cfg: &RunConfig, rec: &mut StageRecord) -> Result<KnowledgeStore, PipelineError> {
    let files = match &cfg.kb {
        KbSource::Packed(p) => {
            rec.extra.push(("kb.digest".into(), file_digest(p)?));
            SnapshotFiles::unpack(&read_text(p)?)?
        }
        KbSource::Files {
            concepts,
            types,
            relations,
        } => {
            for (name, p) in [("concepts", concepts), ("types", types), ("relations", relations)] {
                rec.extra.push((format!("kb.{name}.digest"), file_digest(p)?));
            }
            SnapshotFiles {
                concepts: read_text(concepts)?,
                types: read_text(types)?,
                relations: read_text(relations)?,
            }
        }
    };
    let (store, warnings) = files.load(&cfg.kb_source_filter)?;
    rec.extra.push(("kb.concepts".into(), store.concept_count().to_string()));
    rec.extra.push(("kb.edges".into(), store.edge_count().to_string()));
    rec.warnings.extend(warnings.iter().map(|w| format!("knowledge snapshot: {w}")));
    Ok(store)
}

fn sample(cfg: &RunConfig, rec: &mut StageRecord) -> Result<(), PipelineError> {
    let train = read_dataset(&cfg.train)?;
    rec.extra.push(("train.digest".into(), file_digest(&cfg.train)?));
    let sample = sample_few_shot(&train, cfg.k, cfg.seed);
    for (ty, n) in &sample.shortfalls {
        rec.warnings
            .push(format!("type {ty} has only {n} mention(s), fewer than k = {}", sample.k));
    }
    write(cfg, rec, "few_shot.conll", &write_conll(&sample.dataset))?;
    write(cfg, rec, "few_shot.meta", &sample.metadata())?;

    let dev = match &cfg.dev {
        Some(path) => {
            rec.extra.push(("dev.source".into(), "file".into()));
            read_dataset(path)?
        }
        None => {
            let ids: BTreeSet<String> = sample.dataset.sentences().iter().map(|s| s.id().to_string()).collect();
            rec.extra.push(("dev.source".into(), format!("holdout {}", cfg.dev_fraction)));
            split_dev(&train, &ids, cfg.dev_fraction, cfg.seed)
        }
    };
    if dev.is_empty() {
        rec.warnings.push("development split is empty".into());
    }
    write(cfg, rec, "dev.conll", &write_conll(&dev))?;
    rec.extra.push(("count.few_shot".into(), sample.dataset.len().to_string()));
    rec.extra.push(("count.dev".into(), dev.len().to_string()));
    Ok(())
}

fn expand(cfg: &RunConfig, rec: &mut StageRecord) -> Result<(), PipelineError> {
    let few = read_dataset(&cfg.out_dir.join("few_shot.conll"))?;
    rec.inputs.push("few_shot.conll".into());
    let store = load_kb(cfg, rec)?;
    let mut out = String::from("sentence\tsurface\tlayer\tcui\tterms\n");
    let (mut resolved, mut unresolved) = (0usize, 0usize);
    for s in few.sentences() {
        let mut seen = BTreeSet::new();
        for span in s.spans() {
            if !seen.insert(span.surface.clone()) {
                continue;
            }
            for layer in ExpansionLayer::ALL {
                let r = store.expand_entity(&span.surface, layer, cfg.gen.cap);
                if r.is_unresolved() {
                    unresolved += 1;
                } else {
                    resolved += 1;
                }
                let _ = writeln!(
                    out,
                    "{}\t{}\t{}\t{}\t{}",
                    s.id(),
                    span.surface,
                    layer.as_str(),
                    r.cui.as_deref().unwrap_or("-"),
                    r.terms.join(" | ")
                );
            }
        }
    }
    if unresolved > 0 {
        rec.warnings
            .push(format!("{unresolved} entity/layer lookups did not resolve to a concept"));
    }
    write(cfg, rec, "expansions.tsv", &out)?;
    rec.extra.push(("count.resolved".into(), resolved.to_string()));
    rec.extra.push(("count.unresolved".into(), unresolved.to_string()));
    Ok(())
}

fn generate(cfg: &RunConfig, rec: &mut StageRecord) -> Result<(), PipelineError> {
    let few = read_dataset(&cfg.out_dir.join("few_shot.conll"))?;
    rec.inputs.push("few_shot.conll".into());
    let store = load_kb(cfg, rec)?;
    let client = ChatClient::new(cfg.llm.clone()).map_err(GenError::from)?;
    let corpus = generate_channels(&store, &few, &client, &cfg.gen)?;

    fresh_dir(cfg, "synthetic")?;
    let key = |item: &crate::generation::SyntheticSentence| match item.layer {
        Some(l) => format!("{}.{}", item.channel, l),
        None => item.channel.to_string(),
    };
    let mut groups: BTreeMap<String, Vec<&crate::corpus::Sentence>> = BTreeMap::new();
    let mut provenance = String::from("id\tgroup\tsource\treplacement\trequest\ttext\n");
    for item in &corpus.items {
        groups.entry(key(item)).or_default().push(&item.sentence);
        let _ = writeln!(
            provenance,
            "{}\t{}\t{}\t{}\t{}\t{}",
            item.sentence.id(),
            key(item),
            item.source_id.as_deref().unwrap_or("-"),
            item.replacement.as_deref().unwrap_or("-"),
            item.request_index.map_or("-".to_string(), |i| i.to_string()),
            item.sentence.text()
        );
    }
    for (group, sentences) in &groups {
        write(cfg, rec, &format!("synthetic/{group}.conll"), &write_sentences(sentences.iter().copied()))?;
        rec.extra.push((format!("count.{group}"), sentences.len().to_string()));
    }
    write(cfg, rec, "synthetic/provenance.tsv", &provenance)?;

    let r = &corpus.report;
    rec.warnings.extend(r.failures.iter().map(|f| format!("llm failure: {f}")));
    rec.warnings.extend(r.warnings.iter().cloned());
    rec.warnings.extend(
        r.budget_shortfalls
            .iter()
            .map(|(id, layer)| format!("llm channel under budget for {id}/{layer}")),
    );
    rec.extra.extend([
        ("llm.requests".to_string(), r.requests.to_string()),
        ("llm.failures".to_string(), r.failures.len().to_string()),
        ("llm.network_calls".to_string(), r.stats.network_calls.to_string()),
        ("llm.cache_hits".to_string(), r.stats.cache_hits.to_string()),
        ("llm.mock_hits".to_string(), r.stats.mock_hits.to_string()),
        ("llm.coerced_tags".to_string(), r.coerced_tags.to_string()),
        ("llm.repaired_tags".to_string(), r.repaired_tags.to_string()),
    ]);
    Ok(())
}

fn augment(cfg: &RunConfig, rec: &mut StageRecord) -> Result<(), PipelineError> {
    let few_text = read_text(&cfg.out_dir.join("few_shot.conll"))?;
    let few = read_dataset(&cfg.out_dir.join("few_shot.conll"))?;
    rec.inputs.push("few_shot.conll".into());
    fresh_dir(cfg, "augmented")?;

    let groups = stems(&cfg.out_dir.join("synthetic"), ".conll")?;
    let mut methods = vec![BASELINE.to_string()];
    write(cfg, rec, &format!("augmented/{BASELINE}.conll"), &few_text)?;
    let mut all = Vec::new();
    for group in &groups {
        let rel = format!("synthetic/{group}.conll");
        let synth = read_dataset(&cfg.out_dir.join(&rel))?;
        rec.inputs.push(rel.into());
        let text = write_sentences(few.sentences().iter().chain(synth.sentences()));
        write(cfg, rec, &format!("augmented/{group}.conll"), &text)?;
        rec.extra.push((format!("count.{group}"), (few.len() + synth.len()).to_string()));
        methods.push(group.clone());
        all.extend(synth.into_sentences());
    }
    if groups.len() > 1 {
        let text = write_sentences(few.sentences().iter().chain(&all));
        write(cfg, rec, &format!("augmented/{COMBINED}.conll"), &text)?;
        rec.extra.push((format!("count.{COMBINED}"), (few.len() + all.len()).to_string()));
        methods.push(COMBINED.to_string());
    }
    if groups.is_empty() {
        rec.warnings.push("no synthetic data; only the few-shot baseline will be trained".into());
    }
    write(cfg, rec, "augmented/methods.txt", &(methods.join("\n") + "\n"))
}

fn tag(cfg: &RunConfig, rec: &mut StageRecord) -> Result<(), PipelineError> {
    let methods: Vec<String> = read_text(&cfg.out_dir.join("augmented/methods.txt"))?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect();
    let dev = read_dataset(&cfg.out_dir.join("dev.conll"))?;
    let test = read_dataset(&cfg.test)?;
    rec.inputs.push("dev.conll".into());
    rec.extra.push(("test.digest".into(), file_digest(&cfg.test)?));
    for method in &methods {
        let rel = format!("augmented/{method}.conll");
        let train = read_dataset(&cfg.out_dir.join(&rel))?;
        rec.inputs.push(rel.into());
        let model = fit(&train, &cfg.tagger)?;
        write(cfg, rec, &format!("models/{method}.nn"), &model.to_snapshot())?;
        let d = model.predict_dataset(&dev, method);
        let t = model.predict_dataset(&test, method);
        write(cfg, rec, &format!("predictions/{method}.dev.conll"), &d.to_conll(&dev))?;
        write(cfg, rec, &format!("predictions/{method}.test.conll"), &t.to_conll(&test))?;
    }
    rec.extra.push(("count.methods".into(), methods.len().to_string()));
    Ok(())
}

/// Dev and test predictions for every method with both files present.
fn load_predictions(
    cfg: &RunConfig,
    rec: &mut StageRecord,
    dev: &Dataset,
    test: &Dataset,
) -> Result<Vec<(PredictionSet, PredictionSet)>, PipelineError> {
    let dir = cfg.out_dir.join("predictions");
    let mut out = Vec::new();
    for name in stems(&dir, ".dev.conll")? {
        let test_rel = format!("predictions/{name}.test.conll");
        if !cfg.out_dir.join(&test_rel).exists() {
            rec.warnings.push(format!("{name}: dev predictions without test predictions, skipped"));
            continue;
        }
        let dev_rel = format!("predictions/{name}.dev.conll");
        let d = import_predictions(&read_text(&cfg.out_dir.join(&dev_rel))?, dev, &name)?;
        let t = import_predictions(&read_text(&cfg.out_dir.join(&test_rel))?, test, &name)?;
        rec.inputs.push(dev_rel.into());
        rec.inputs.push(test_rel.into());
        out.push((d, t));
    }
    Ok(out)
}

fn ensemble(cfg: &RunConfig, rec: &mut StageRecord) -> Result<(), PipelineError> {
    let dev = read_dataset(&cfg.out_dir.join("dev.conll"))?;
    let test = read_dataset(&cfg.test)?;
    rec.inputs.push("dev.conll".into());
    let preds = load_predictions(cfg, rec, &dev, &test)?;
    fresh_dir(cfg, "ensemble")?;

    let (chosen, dev_report) = match &cfg.ensemble {
        EnsembleSettings::Fixed(chosen) => {
            let devs: Vec<PredictionSet> = preds.iter().map(|(d, _)| d.clone()).collect();
            let report = evaluate_strict(&dev, &apply(chosen, &devs)?)?;
            (chosen.clone(), report)
        }
        EnsembleSettings::Search { pool, grid } => {
            let devs: Vec<PredictionSet> = preds
                .iter()
                .map(|(d, _)| d)
                .filter(|d| {
                    if pool.is_empty() {
                        d.model_name != BASELINE
                    } else {
                        pool.contains(&d.model_name)
                    }
                })
                .cloned()
                .collect();
            if devs.len() < 2 {
                rec.warnings
                    .push(format!("ensemble search needs two candidate methods, found {}; skipped", devs.len()));
                return write(cfg, rec, "ensemble/config.kv", "status = skipped\n");
            }
            if devs.len() > MAX_SEARCH_MEMBERS {
                return Err(PipelineError::Ensemble(EnsembleError::TooManyMembers(devs.len())));
            }
            select_best_ensemble(&devs, &dev, grid)?
        }
    };
    let tests: Vec<PredictionSet> = preds.into_iter().map(|(_, t)| t).collect();
    let best_test = apply(&chosen, &tests)?;

    let mut kv = String::from("status = ok\n");
    kv.push_str(&chosen.to_kv());
    let _ = writeln!(kv, "label = {chosen}");
    let _ = writeln!(kv, "dev.f1 = {:.2}", dev_report.micro.f1 * 100.0);
    write(cfg, rec, "ensemble/config.kv", &kv)?;
    write(cfg, rec, "ensemble/dev_report.kv", &dev_report.to_kv())?;
    write(cfg, rec, "ensemble/best.test.conll", &best_test.to_conll(&test))?;
    rec.extra.push(("selected".into(), chosen.encoding()));
    Ok(())
}

fn eval(cfg: &RunConfig, rec: &mut StageRecord) -> Result<(), PipelineError> {
    let test = read_dataset(&cfg.test)?;
    fresh_dir(cfg, "eval")?;
    let mut sources: Vec<(String, String)> = stems(&cfg.out_dir.join("predictions"), ".test.conll")?
        .into_iter()
        .map(|m| (format!("predictions/{m}.test.conll"), m))
        .collect();
    if cfg.out_dir.join("ensemble/best.test.conll").exists() {
        sources.push(("ensemble/best.test.conll".into(), BEST.into()));
    }
    if sources.is_empty() {
        return Err(PipelineError::NoEval);
    }
    for (rel, method) in sources {
        let pred = import_predictions(&read_text(&cfg.out_dir.join(&rel))?, &test, &method)?;
        rec.inputs.push(rel.into());
        let report = evaluate_strict(&test, &pred)?;
        write(cfg, rec, &format!("eval/{method}.kv"), &report.to_kv())?;
        write(cfg, rec, &format!("eval/{method}.txt"), &report.to_table())?;
        rec.extra.push((format!("f1.{method}"), format!("{:.2}", report.micro.f1 * 100.0)));
    }
    Ok(())
}

fn report(cfg: &RunConfig, rec: &mut StageRecord) -> Result<(), PipelineError> {
    let methods = stems(&cfg.out_dir.join("eval"), ".kv")?;
    if methods.is_empty() {
        return Err(PipelineError::NoEval);
    }
    let mut rows = Vec::new();
    for m in &methods {
        let rel = format!("eval/{m}.kv");
        let kv = parse_kv(&read_text(&cfg.out_dir.join(&rel))?)?;
        rec.inputs.push(rel.into());
        let num = |k: &str| -> Result<f64, PipelineError> {
            kv.get(k)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| PipelineError::Config(format!("eval/{m}.kv: missing `{k}`")))
        };
        rows.push((m.clone(), num("micro.p")?, num("micro.r")?, num("micro.f1")?));
    }
    let ensemble_label = if methods.iter().any(|m| m == BEST) {
        let kv = parse_kv(&read_text(&cfg.out_dir.join("ensemble/config.kv"))?)?;
        kv.get("label").cloned()
    } else {
        None
    };

    let mut table = format!(
        "Dataset: {}    k = {}    seed = {}\n\n{:<34} {:>7} {:>7} {:>7}\n",
        cfg.dataset_name, cfg.k, cfg.seed, "Method", "P", "R", "F1"
    );
    let mut kv = String::new();
    for (m, p, r, f) in &rows {
        let _ = writeln!(table, "{:<34} {p:>7.2} {r:>7.2} {f:>7.2}", method_label(m));
        let _ = writeln!(kv, "method.{m}.p = {p:.2}\nmethod.{m}.r = {r:.2}\nmethod.{m}.f1 = {f:.2}");
    }
    if let Some(label) = &ensemble_label {
        let _ = writeln!(table, "  Best-Ensemble config: {label}");
        let _ = writeln!(kv, "best_ensemble.config = {label}");
    }

    let baseline = rows.iter().find(|r| r.0 == BASELINE).map(|r| r.3);
    if let Some(base) = baseline {
        let base_map = BTreeMap::from([(cfg.dataset_name.clone(), base)]);
        let _ = writeln!(table, "\nF1 improvement over {} (points, mean over datasets):", method_label(BASELINE));
        for (m, _, _, f) in rows.iter().filter(|r| r.0 != BASELINE) {
            let delta = improvement_summary(&base_map, &BTreeMap::from([(cfg.dataset_name.clone(), *f)]))?;
            let _ = writeln!(table, "  {:<32} {delta:>+7.2}", method_label(m));
            let _ = writeln!(kv, "improve.{m} = {delta:.2}");
            if m == BEST {
                let _ = writeln!(kv, "improve.mean = {delta:.2}");
            }
        }
    } else {
        rec.warnings.push("no few-shot baseline evaluation; improvements omitted".into());
    }
    write(cfg, rec, "report.txt", &table)?;
    write(cfg, rec, "report.kv", &kv)
}
