use std::path::{Path, PathBuf};

use nerforge::corpus::parse_conll;
use nerforge::pipeline::{run_pipeline, run_stage, PipelineError, RunConfig, RunManifest, Stage, LOCK};

fn toy_config(out: &Path) -> RunConfig {
    let conf = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/toy/run.conf");
    RunConfig::load(&conf, &[("out".into(), out.display().to_string())]).unwrap()
}

fn read(path: PathBuf) -> String {
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[test]
fn stage_without_prerequisite_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = toy_config(tmp.path());
    let err = run_stage(&cfg, Stage::Generate).unwrap_err();
    let missing = match &err {
        PipelineError::Stage { source, .. } => matches!(**source, PipelineError::MissingPrerequisite { .. }),
        e => matches!(e, PipelineError::MissingPrerequisite { .. }),
    };
    assert!(missing, "{err}");
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn held_lock_refuses_to_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = toy_config(tmp.path());
    std::fs::create_dir_all(&cfg.out_dir).unwrap();
    std::fs::write(cfg.out_dir.join(LOCK), "").unwrap();
    let err = run_stage(&cfg, Stage::Sample).unwrap_err();
    assert!(matches!(err, PipelineError::Locked(_)), "{err}");
    assert_eq!(err.exit_code(), 1);
}

#[test]
fn missing_knowledge_file_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let conf = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/toy/run.conf");
    let cfg = RunConfig::load(
        &conf,
        &[
            ("out".into(), tmp.path().display().to_string()),
            ("kb.relations".into(), tmp.path().join("nope.txt").display().to_string()),
        ],
    );
    let err = cfg.and_then(|c| run_pipeline(&c).map(|_| ())).unwrap_err();
    assert_eq!(err.exit_code(), 1, "{err}");
}

#[test]
fn toy_run_produces_sound_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = toy_config(tmp.path());
    let manifest = run_pipeline(&cfg).unwrap();
    let out = &cfg.out_dir;

    for stage in Stage::ALL {
        assert_eq!(manifest.get(&format!("stage.{stage}.status")), Some("ok"), "{stage}");
    }
    assert_eq!(RunManifest::load(out).unwrap(), manifest);
    assert!(!out.join(LOCK).exists());

    // every augmented set contains the few-shot set and only IOB-valid sentences
    let few = parse_conll(&read(out.join("few_shot.conll"))).unwrap();
    let methods: Vec<String> = read(out.join("augmented/methods.txt")).lines().map(str::to_string).collect();
    assert!(methods.len() > 1);
    for m in &methods {
        let aug = parse_conll(&read(out.join(format!("augmented/{m}.conll")))).unwrap();
        for s in few.sentences() {
            assert!(
                aug.sentences().iter().any(|a| a.tokens() == s.tokens() && a.tags() == s.tags()),
                "{m} lacks {}",
                s.id()
            );
        }
        if m != "original" {
            assert!(aug.len() > few.len(), "{m} adds nothing");
        }
    }

    // no dev sentence leaks into the few-shot set
    let dev = parse_conll(&read(out.join("dev.conll"))).unwrap();
    for d in dev.sentences() {
        assert!(few.sentences().iter().all(|s| s.tokens() != d.tokens()));
    }

    let report = read(out.join("report.txt"));
    assert!(report.contains("Original few-shot"));
    assert!(report.contains("Best-Ensemble"));
}

#[test]
fn stages_rerun_individually_give_the_same_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = toy_config(tmp.path());
    let full = run_pipeline(&cfg).unwrap();
    let mut last = RunManifest::default();
    for stage in [Stage::Sample, Stage::Expand, Stage::Generate, Stage::Augment] {
        last = run_stage(&cfg, stage).unwrap();
        assert_eq!(last.outputs(stage), full.outputs(stage), "{stage}");
    }
    assert_eq!(last.get("config.digest"), full.get("config.digest"));
}
