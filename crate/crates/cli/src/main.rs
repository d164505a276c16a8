use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use nerforge::corpus::parse_conll;
use nerforge::eval::evaluate_strict;
use nerforge::knowledge::SnapshotFiles;
use nerforge::pipeline::{run_pipeline, run_stage, PipelineError, RunConfig, Stage};
use nerforge::tagger::import_predictions;

/// Synthetic training data for few-shot biomedical NER.
#[derive(Debug, Parser)]
#[command(name = "nerforge", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample the few-shot set and the development split.
    Sample(StageArgs),
    /// Expand every few-shot entity through the vocabulary snapshot.
    Expand(StageArgs),
    /// Generate synthetic sentences over the enabled channels.
    Generate(StageArgs),
    /// Build one augmented training set per generation method.
    Augment(StageArgs),
    /// Train a tagger per augmented set and predict dev and test.
    Tag(StageArgs),
    /// Select or apply an ensemble over the predictions.
    Ensemble(StageArgs),
    /// Score predictions; with --gold and --pred, score one file pair directly.
    Eval(EvalArgs),
    /// Write the comparison report.
    Report(StageArgs),
    /// Run every stage in order.
    Pipeline(StageArgs),
    /// Convert between separate and packed vocabulary snapshot files.
    #[command(subcommand)]
    Snapshot(SnapshotCommand),
}

#[derive(Debug, Args)]
struct StageArgs {
    /// Run configuration (`key = value` lines).
    #[arg(short, long)]
    config: PathBuf,
    /// Config overrides as `--key value` or `--key=value`.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "--KEY VALUE")]
    overrides: Vec<String>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(short, long, required_unless_present_all = ["gold", "pred"], conflicts_with_all = ["gold", "pred"])]
    config: Option<PathBuf>,
    /// Gold CoNLL file.
    #[arg(long, requires = "pred")]
    gold: Option<PathBuf>,
    /// Predicted CoNLL file over the same tokens.
    #[arg(long, requires = "gold")]
    pred: Option<PathBuf>,
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "--KEY VALUE")]
    overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum SnapshotCommand {
    /// Pack concepts, types and relations files into one file.
    Pack {
        #[arg(long)]
        concepts: PathBuf,
        #[arg(long)]
        types: PathBuf,
        #[arg(long)]
        relations: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Unpack a packed snapshot into concepts.txt, types.txt and relations.txt.
    Unpack {
        input: PathBuf,
        #[arg(short, long)]
        out_dir: PathBuf,
    },
}

/// Error carrying the process exit code.
struct Failure {
    code: u8,
    message: String,
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        Failure {
            code: e.exit_code() as u8,
            message: e.to_string(),
        }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: 1,
        message: message.into(),
    }
}

fn data(message: impl std::fmt::Display) -> Failure {
    Failure {
        code: 2,
        message: message.to_string(),
    }
}

/// Splits trailing `--key value` / `--key=value` arguments into pairs.
fn parse_overrides(args: &[String]) -> Result<Vec<(String, String)>, Failure> {
    let mut out = Vec::new();
    let mut it = args.iter();
    while let Some(arg) = it.next() {
        let key = arg
            .strip_prefix("--")
            .ok_or_else(|| usage(format!("expected `--key value`, found `{arg}`")))?;
        match key.split_once('=') {
            Some((k, v)) => out.push((k.to_string(), v.to_string())),
            None => {
                let value = it.next().ok_or_else(|| usage(format!("`--{key}` needs a value")))?;
                out.push((key.to_string(), value.clone()));
            }
        }
    }
    Ok(out)
}

fn load_config(path: &Path, overrides: &[String]) -> Result<RunConfig, Failure> {
    Ok(RunConfig::load(path, &parse_overrides(overrides)?)?)
}

fn read(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| data(format!("{}: {e}", path.display())))
}

fn print_file(path: &Path) {
    if let Ok(text) = std::fs::read_to_string(path) {
        print!("{text}");
    }
}

fn stage(args: &StageArgs, stage: Stage) -> Result<(), Failure> {
    let cfg = load_config(&args.config, &args.overrides)?;
    let manifest = run_stage(&cfg, stage)?;
    for w in manifest
        .entries()
        .iter()
        .filter(|(k, _)| k.starts_with(&format!("stage.{stage}.warning.")))
    {
        eprintln!("warning: {}", w.1);
    }
    if stage == Stage::Report {
        print_file(&cfg.out_dir.join("report.txt"));
    } else {
        println!("{stage}: ok ({})", cfg.out_dir.display());
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Sample(a) => stage(&a, Stage::Sample),
        Command::Expand(a) => stage(&a, Stage::Expand),
        Command::Generate(a) => stage(&a, Stage::Generate),
        Command::Augment(a) => stage(&a, Stage::Augment),
        Command::Tag(a) => stage(&a, Stage::Tag),
        Command::Ensemble(a) => stage(&a, Stage::Ensemble),
        Command::Report(a) => stage(&a, Stage::Report),
        Command::Eval(a) => match (a.config, a.gold, a.pred) {
            (Some(config), _, _) => stage(
                &StageArgs {
                    config,
                    overrides: a.overrides,
                },
                Stage::Eval,
            ),
            (None, Some(gold), Some(pred)) => {
                let gold_ds = parse_conll(&read(&gold)?).map_err(|e| data(format!("{}: {e}", gold.display())))?;
                let name = pred.file_stem().and_then(|s| s.to_str()).unwrap_or("pred");
                let preds = import_predictions(&read(&pred)?, &gold_ds, name).map_err(data)?;
                let report = evaluate_strict(&gold_ds, &preds).map_err(data)?;
                print!("{}", report.to_table());
                Ok(())
            }
            _ => Err(usage("give --config, or both --gold and --pred")),
        },
        Command::Pipeline(a) => {
            let cfg = load_config(&a.config, &a.overrides)?;
            let manifest = run_pipeline(&cfg)?;
            let mut seen = std::collections::HashSet::new();
            for w in manifest.warnings().into_iter().filter(|w| seen.insert(*w)) {
                eprintln!("warning: {w}");
            }
            print_file(&cfg.out_dir.join("report.txt"));
            Ok(())
        }
        Command::Snapshot(SnapshotCommand::Pack {
            concepts,
            types,
            relations,
            out,
        }) => {
            let files = SnapshotFiles {
                concepts: read(&concepts)?,
                types: read(&types)?,
                relations: read(&relations)?,
            };
            std::fs::write(&out, files.pack()).map_err(|e| data(format!("{}: {e}", out.display())))
        }
        Command::Snapshot(SnapshotCommand::Unpack { input, out_dir }) => {
            let files = SnapshotFiles::unpack(&read(&input)?).map_err(data)?;
            std::fs::create_dir_all(&out_dir).map_err(|e| data(format!("{}: {e}", out_dir.display())))?;
            for (name, body) in [
                ("concepts.txt", &files.concepts),
                ("types.txt", &files.types),
                ("relations.txt", &files.relations),
            ] {
                let path = out_dir.join(name);
                std::fs::write(&path, body).map_err(|e| data(format!("{}: {e}", path.display())))?;
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
