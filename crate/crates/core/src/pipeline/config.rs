//! Flat `key = value` run configuration with dotted keys.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use sha2::{Digest, Sha256};

use crate::ensemble::{EnsembleConfig, DEFAULT_WEIGHT_GRID};
use crate::generation::{ChannelSet, ClientConfig, GenConfig, GenLayer, PromptTemplates};
use crate::tagger::FeatureConfig;

use super::PipelineError;

/// Every recognised key with its default; an empty default means "unset".
const KEYS: &[(&str, &str)] = &[
    ("out", ""),
    ("seed", "13"),
    ("data.train", ""),
    ("data.dev", ""),
    ("data.test", ""),
    ("data.name", "test"),
    ("data.dev_fraction", "0.2"),
    ("kb.snapshot", ""),
    ("kb.concepts", ""),
    ("kb.types", ""),
    ("kb.relations", ""),
    ("kb.source", "SNOMEDCT_US"),
    ("sample.k", "5"),
    ("gen.layers", "related_concepts,parents_children,siblings"),
    ("gen.cap", "10"),
    ("gen.n", "10"),
    ("gen.channels", "umls,llm"),
    ("gen.enforce_budget", "true"),
    ("gen.prompts_dir", ""),
    ("llm.model", "gpt-3.5-turbo"),
    ("llm.endpoint", "https://api.openai.com/v1/chat/completions"),
    ("llm.api_key_env", "OPENAI_API_KEY"),
    ("llm.temperature", "0.7"),
    ("llm.convert_temperature", "0"),
    ("llm.max_tokens", "1024"),
    ("llm.retries", "2"),
    ("llm.timeout_secs", "60"),
    ("llm.max_in_flight", "4"),
    ("llm.mock_dir", ""),
    ("llm.cache_dir", ""),
    ("tagger.k", "1"),
    ("tagger.window", "2"),
    ("tagger.hash_bits", "20"),
    ("tagger.ngrams", "2,3,4"),
    ("tagger.center_weight", "3"),
    ("ensemble.mode", "search"),
    ("ensemble.members", ""),
    ("ensemble.weights", ""),
    ("ensemble.grid", "1,2,3"),
];

const PATH_KEYS: &[&str] = &[
    "out",
    "data.train",
    "data.dev",
    "data.test",
    "kb.snapshot",
    "kb.concepts",
    "kb.types",
    "kb.relations",
    "gen.prompts_dir",
    "llm.mock_dir",
    "llm.cache_dir",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum KbSource {
    Packed(PathBuf),
    Files {
        concepts: PathBuf,
        types: PathBuf,
        relations: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum EnsembleSettings {
    /// Exhaustive search over `pool` (empty: every method except the few-shot baseline).
    Search { pool: Vec<String>, grid: Vec<f64> },
    Fixed(EnsembleConfig),
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub out_dir: PathBuf,
    pub seed: u64,
    pub train: PathBuf,
    pub dev: Option<PathBuf>,
    pub test: PathBuf,
    pub dataset_name: String,
    pub dev_fraction: f64,
    pub kb: KbSource,
    pub kb_source_filter: String,
    pub k: usize,
    pub gen: GenConfig,
    pub prompts_dir: Option<PathBuf>,
    pub llm: ClientConfig,
    pub tagger: FeatureConfig,
    pub ensemble: EnsembleSettings,
    values: BTreeMap<String, String>,
}

/// Parses `key = value` lines; `#` starts a comment line.
pub fn parse_kv(text: &str) -> Result<BTreeMap<String, String>, PipelineError> {
    let mut map = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| PipelineError::Config(format!("line {}: expected `key = value`", i + 1)))?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

fn resolve(base: &Path, value: &str) -> String {
    if value.is_empty() {
        return String::new();
    }
    let p = Path::new(value);
    if p.is_absolute() {
        value.to_string()
    } else {
        base.join(p).to_string_lossy().into_owned()
    }
}

fn list(v: &str) -> Vec<String> {
    v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(str::to_string).collect()
}

impl RunConfig {
    /// Loads a config file. File paths resolve against the file's directory;
    /// override paths resolve against the working directory.
    pub fn load(path: &Path, overrides: &[(String, String)]) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let base = if base.as_os_str().is_empty() { Path::new(".") } else { base };
        let mut map = parse_kv(&text)?;
        for (k, v) in map.iter_mut() {
            if PATH_KEYS.contains(&k.as_str()) {
                *v = resolve(base, v);
            }
        }
        let cwd = std::env::current_dir().map_err(|e| PipelineError::Config(e.to_string()))?;
        for (k, v) in overrides {
            let v = if PATH_KEYS.contains(&k.as_str()) { resolve(&cwd, v) } else { v.clone() };
            map.insert(k.clone(), v);
        }
        Self::from_map(map)
    }

    /// Builds a config from already-resolved values.
    pub fn from_map(map: BTreeMap<String, String>) -> Result<Self, PipelineError> {
        let mut values: BTreeMap<String, String> =
            KEYS.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
        for (k, v) in map {
            if !values.contains_key(&k) {
                return Err(PipelineError::Config(format!("unknown key `{k}`")));
            }
            values.insert(k, v);
        }
        let get = |k: &str| values[k].as_str();
        let bad = |k: &str| PipelineError::Config(format!("bad value for `{k}`: `{}`", values[k]));
        let num = |k: &str| get(k).parse::<usize>().map_err(|_| bad(k));
        let float = |k: &str| get(k).parse::<f64>().map_err(|_| bad(k));
        let required = |k: &str| {
            let v = get(k);
            if v.is_empty() {
                Err(PipelineError::Config(format!("`{k}` is required")))
            } else {
                Ok(PathBuf::from(v))
            }
        };
        let optional = |k: &str| (!get(k).is_empty()).then(|| PathBuf::from(get(k)));

        let kb = match optional("kb.snapshot") {
            Some(p) => KbSource::Packed(p),
            None => KbSource::Files {
                concepts: required("kb.concepts")
                    .map_err(|_| PipelineError::Config("set `kb.snapshot` or all of `kb.concepts`, `kb.types`, `kb.relations`".into()))?,
                types: required("kb.types")?,
                relations: required("kb.relations")?,
            },
        };

        let k = num("sample.k")?;
        let cap = num("gen.cap")?;
        if k == 0 {
            return Err(PipelineError::Config("`sample.k` must be at least 1".into()));
        }
        if cap == 0 {
            return Err(PipelineError::Config("`gen.cap` must be at least 1".into()));
        }
        let dev_fraction = float("data.dev_fraction")?;
        if !(dev_fraction > 0.0 && dev_fraction < 1.0) {
            return Err(bad("data.dev_fraction"));
        }

        let layers = list(get("gen.layers"))
            .iter()
            .map(|l| l.parse::<GenLayer>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|_| bad("gen.layers"))?;
        let mut channels = ChannelSet {
            umls: false,
            llm: false,
            zero_shot: false,
        };
        for c in list(get("gen.channels")) {
            match c.as_str() {
                "umls" => channels.umls = true,
                "llm" => channels.llm = true,
                "zero_shot" => channels.zero_shot = true,
                _ => return Err(bad("gen.channels")),
            }
        }
        let enforce_budget = get("gen.enforce_budget").parse::<bool>().map_err(|_| bad("gen.enforce_budget"))?;
        let prompts_dir = optional("gen.prompts_dir");
        let templates = match &prompts_dir {
            Some(dir) => PromptTemplates::from_dir(dir)
                .map_err(|e| PipelineError::Config(format!("{}: {e}", dir.display())))?,
            None => PromptTemplates::default(),
        };
        let gen = GenConfig {
            layers,
            cap,
            n: num("gen.n")?.max(1),
            channels,
            enforce_budget,
            temperature: float("llm.temperature")?,
            convert_temperature: float("llm.convert_temperature")?,
            max_output_tokens: num("llm.max_tokens")? as u32,
            templates,
        };

        let out_dir = required("out")?;
        let llm = ClientConfig {
            model: get("llm.model").to_string(),
            endpoint: get("llm.endpoint").to_string(),
            api_key_env: (!get("llm.api_key_env").is_empty()).then(|| get("llm.api_key_env").to_string()),
            retries: num("llm.retries")? as u32,
            timeout: Duration::from_secs(num("llm.timeout_secs")? as u64),
            max_in_flight: num("llm.max_in_flight")?.max(1),
            mock_dir: optional("llm.mock_dir"),
            cache_dir: Some(optional("llm.cache_dir").unwrap_or_else(|| out_dir.join("llm_cache"))),
        };

        let tagger = FeatureConfig {
            ngram_sizes: list(get("tagger.ngrams"))
                .iter()
                .map(|n| n.parse::<usize>())
                .collect::<Result<_, _>>()
                .map_err(|_| bad("tagger.ngrams"))?,
            window: num("tagger.window")?,
            hash_bits: num("tagger.hash_bits")?.clamp(1, 32) as u32,
            k: num("tagger.k")?.max(1),
            center_weight: float("tagger.center_weight")?,
        };

        let ensemble = match get("ensemble.mode") {
            "search" => EnsembleSettings::Search {
                pool: list(get("ensemble.members")),
                grid: list(get("ensemble.grid"))
                    .iter()
                    .map(|w| w.parse::<f64>())
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|_| bad("ensemble.grid"))
                    .map(|g| if g.is_empty() { DEFAULT_WEIGHT_GRID.to_vec() } else { g })?,
            },
            mode => EnsembleSettings::Fixed(
                EnsembleConfig::from_fields(
                    Some(mode),
                    Some(get("ensemble.members")),
                    (!get("ensemble.weights").is_empty()).then(|| get("ensemble.weights")),
                )
                .map_err(|e| PipelineError::Config(e.to_string()))?,
            ),
        };

        Ok(RunConfig {
            out_dir,
            seed: get("seed").parse().map_err(|_| bad("seed"))?,
            train: required("data.train")?,
            dev: optional("data.dev"),
            test: required("data.test")?,
            dataset_name: get("data.name").to_string(),
            dev_fraction,
            kb,
            kb_source_filter: get("kb.source").to_string(),
            k,
            gen,
            prompts_dir,
            llm,
            tagger,
            ensemble,
            values,
        })
    }

    /// Checks that every referenced input exists.
    pub fn validate(&self) -> Result<(), PipelineError> {
        let mut inputs: Vec<(&str, &Path)> = vec![("data.train", &self.train), ("data.test", &self.test)];
        if let Some(dev) = &self.dev {
            inputs.push(("data.dev", dev));
        }
        match &self.kb {
            KbSource::Packed(p) => inputs.push(("kb.snapshot", p)),
            KbSource::Files {
                concepts,
                types,
                relations,
            } => {
                inputs.push(("kb.concepts", concepts));
                inputs.push(("kb.types", types));
                inputs.push(("kb.relations", relations));
            }
        }
        if let Some(dir) = &self.llm.mock_dir {
            inputs.push(("llm.mock_dir", dir));
        }
        if let Some(dir) = &self.prompts_dir {
            inputs.push(("gen.prompts_dir", dir));
        }
        for (key, path) in inputs {
            if !path.exists() {
                return Err(PipelineError::MissingInput {
                    key: key.to_string(),
                    path: path.to_path_buf(),
                });
            }
        }
        Ok(())
    }

    /// Effective values, defaults included, as sorted `key = value` lines.
    pub fn to_kv(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_kv().as_bytes()))
    }

    pub fn value(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }
}

/// Keys accepted in a config file.
pub fn known_keys() -> impl Iterator<Item = &'static str> {
    KEYS.iter().map(|(k, _)| *k)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> BTreeMap<String, String> {
        [
            ("out", "/tmp/out"),
            ("data.train", "/d/train.conll"),
            ("data.test", "/d/test.conll"),
            ("kb.snapshot", "/d/kb.txt"),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
    }

    #[test]
    fn defaults_apply() {
        let cfg = RunConfig::from_map(base()).unwrap();
        assert_eq!(cfg.k, 5);
        assert_eq!(cfg.gen.cap, 10);
        assert_eq!(cfg.gen.layers, GenLayer::ALL.to_vec());
        assert!(cfg.gen.channels.umls && cfg.gen.channels.llm && !cfg.gen.channels.zero_shot);
        assert_eq!(cfg.llm.cache_dir, Some(PathBuf::from("/tmp/out/llm_cache")));
        assert!(matches!(cfg.ensemble, EnsembleSettings::Search { .. }));
        assert_eq!(cfg.value("llm.temperature"), Some("0.7"));
    }

    #[test]
    fn rejects_unknown_and_invalid() {
        let mut m = base();
        m.insert("llm.temprature".into(), "1".into());
        assert!(RunConfig::from_map(m).is_err());
        let mut m = base();
        m.insert("sample.k".into(), "0".into());
        assert!(RunConfig::from_map(m).is_err());
        let mut m = base();
        m.remove("kb.snapshot");
        assert!(RunConfig::from_map(m).is_err());
    }

    #[test]
    fn fixed_ensemble_and_channels() {
        let mut m = base();
        m.insert("ensemble.mode".into(), "intersection".into());
        m.insert("ensemble.members".into(), "a, b".into());
        m.insert("gen.channels".into(), "umls".into());
        let cfg = RunConfig::from_map(m).unwrap();
        assert!(matches!(cfg.ensemble, EnsembleSettings::Fixed(ref c) if c.members == ["a", "b"]));
        assert!(!cfg.gen.channels.llm);
    }

    #[test]
    fn load_resolves_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");
        std::fs::write(
            &path,
            "# toy\nout = out\ndata.train = train.conll\ndata.test = /abs/test.conll\nkb.snapshot = kb.txt\n",
        )
        .unwrap();
        let cfg = RunConfig::load(&path, &[("seed".into(), "7".into())]).unwrap();
        assert_eq!(cfg.train, dir.path().join("train.conll"));
        assert_eq!(cfg.test, PathBuf::from("/abs/test.conll"));
        assert_eq!(cfg.seed, 7);
        assert!(matches!(cfg.validate(), Err(PipelineError::MissingInput { .. })));
    }
}
