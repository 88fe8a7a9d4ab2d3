//! `key = value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Every key is checked
//! against the schema below; unknown or repeated keys are errors.
//!
//! | key | value |
//! |-----|-------|
//! | `corpus` | path of the training corpus |
//! | `format` | `raw` (one sentence per line) or `conllu` |
//! | `vocab` | vocabulary file to reuse instead of building one |
//! | `lowercase`, `collapse_digits` | `true` / `false` |
//! | `min_count` | frequency threshold |
//! | `features` | comma-separated feature specs, e.g. `word_form:window=2:symmetric` |
//! | `matrix` | contextual matrix spill file |
//! | `metric` | `identity`, `iff`, `isf` |
//! | `weight` | `identity`, `iwf` |
//! | `transform` | `identity`, `log`, `hellinger`, `power:P`, `power_vector:P,…`, `tune_single`, `tune_vector`, `pmi` |
//! | `lambda` | `classic` or `normalized` |
//! | `alpha` | scale of normalized vectors |
//! | `k` | embedding dimension |
//! | `sketch_width`, `power_iters` | sketch size and power iterations |
//! | `power_mode` | `centred` or `raw` |
//! | `anneal_iterations`, `anneal_temperature`, `anneal_cooling`, `anneal_step` | annealing schedule |
//! | `entropy_sample`, `entropy_block_len`, `entropy_block_count` | entropy estimate |
//! | `bandwidth` | `silverman` or a fixed positive number |
//! | `seed` | base seed; per-stage seeds are derived from it |
//! | `workers` | worker threads |
//! | `output`, `manifest` | output paths |

use std::collections::HashSet;
use std::fmt::{self, Write as _};
use std::path::PathBuf;
use std::str::FromStr;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::corpus::NormalizationRules;
use crate::gpca::{FeatureSpec, GpcaParams, LambdaKind, MetricKind, TransformChoice, WeightKind};
use crate::linalg::{PowerMode, SketchParams};
use crate::transform::{AnnealParams, Bandwidth, TransformSpec};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CorpusFormat {
    Raw,
    Conllu,
}

/// Randomized stages, each seeded from the base seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Sketch = 1,
    Anneal = 2,
}

/// Seed for `stage`, derived deterministically from `base`.
pub fn stage_seed(base: u64, stage: Stage) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(base);
    rng.set_stream(stage as u64);
    rng.next_u64()
}

/// Lower-case hex SHA-256 of `data`.
pub fn sha256_hex(data: &[u8]) -> String {
    Sha256::digest(data).iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub corpus: Option<PathBuf>,
    pub format: CorpusFormat,
    pub vocab: Option<PathBuf>,
    pub rules: NormalizationRules,
    pub features: Vec<FeatureSpec>,
    pub matrix: Option<PathBuf>,
    pub metric: MetricKind,
    pub weight: WeightKind,
    pub transform: TransformChoice,
    pub normalized: bool,
    pub alpha: f64,
    pub k: usize,
    /// Defaults to `k + 10`.
    pub sketch_width: Option<usize>,
    pub power_iters: usize,
    pub power_mode: PowerMode,
    /// Schedule and entropy settings; the seed is taken from [`Stage::Anneal`].
    pub anneal: AnnealParams,
    pub seed: u64,
    pub workers: Option<usize>,
    pub output: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            corpus: None,
            format: CorpusFormat::Raw,
            vocab: None,
            rules: NormalizationRules::default(),
            features: vec!["word_form:window=1:symmetric".parse().expect("valid spec")],
            matrix: None,
            metric: MetricKind::Identity,
            weight: WeightKind::Identity,
            transform: TransformChoice::Fixed(TransformSpec::Identity),
            normalized: false,
            alpha: 1.0,
            k: 50,
            sketch_width: None,
            power_iters: 2,
            power_mode: PowerMode::Centred,
            anneal: AnnealParams::default(),
            seed: 0,
            workers: None,
            output: None,
            manifest: None,
        }
    }
}

impl fmt::Display for TransformChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TransformChoice::Fixed(spec) => spec.fmt(f),
            TransformChoice::TuneSingle => f.write_str("tune_single"),
            TransformChoice::TuneVector => f.write_str("tune_vector"),
            TransformChoice::Pmi => f.write_str("pmi"),
        }
    }
}

impl FromStr for TransformChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "tune_single" => TransformChoice::TuneSingle,
            "tune_vector" => TransformChoice::TuneVector,
            "pmi" => TransformChoice::Pmi,
            other => TransformChoice::Fixed(other.parse()?),
        })
    }
}

fn parse_bool(v: &str) -> std::result::Result<bool, String> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(format!("expected true or false, got {v:?}")),
    }
}

fn parse_num<T: FromStr>(v: &str) -> std::result::Result<T, String> {
    v.parse().map_err(|_| format!("expected a number, got {v:?}"))
}

impl RunConfig {
    pub fn parse(text: &str, name: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen = HashSet::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fail = |msg: String| Error::Config(format!("{name}:{}: {msg}", i + 1));
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| fail(format!("expected `key = value`, got {line:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(fail(format!("key {key:?} given twice")));
            }
            cfg.set(key, value).map_err(fail)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, v: &str) -> std::result::Result<(), String> {
        let err = |e: Error| e.to_string();
        match key {
            "corpus" => self.corpus = Some(v.into()),
            "format" => {
                self.format = match v {
                    "raw" => CorpusFormat::Raw,
                    "conllu" => CorpusFormat::Conllu,
                    _ => return Err(format!("format must be raw or conllu, got {v:?}")),
                }
            }
            "vocab" => self.vocab = Some(v.into()),
            "lowercase" => self.rules.lowercase = parse_bool(v)?,
            "collapse_digits" => self.rules.collapse_digits = parse_bool(v)?,
            "min_count" => self.rules.min_count = parse_num(v)?,
            "features" => {
                self.features = v
                    .split(',')
                    .map(|s| s.trim().parse::<FeatureSpec>())
                    .collect::<Result<_>>()
                    .map_err(err)?
            }
            "matrix" => self.matrix = Some(v.into()),
            "metric" => {
                self.metric = match v {
                    "identity" => MetricKind::Identity,
                    "iff" => MetricKind::Iff,
                    "isf" => MetricKind::Isf,
                    _ => return Err(format!("metric must be identity, iff or isf, got {v:?}")),
                }
            }
            "weight" => {
                self.weight = match v {
                    "identity" => WeightKind::Identity,
                    "iwf" => WeightKind::Iwf,
                    _ => return Err(format!("weight must be identity or iwf, got {v:?}")),
                }
            }
            "transform" => self.transform = v.parse().map_err(err)?,
            "lambda" => {
                self.normalized = match v {
                    "classic" => false,
                    "normalized" => true,
                    _ => return Err(format!("lambda must be classic or normalized, got {v:?}")),
                }
            }
            "alpha" => self.alpha = parse_num(v)?,
            "k" => self.k = parse_num(v)?,
            "sketch_width" => self.sketch_width = Some(parse_num(v)?),
            "power_iters" => self.power_iters = parse_num(v)?,
            "power_mode" => {
                self.power_mode = match v {
                    "centred" => PowerMode::Centred,
                    "raw" => PowerMode::Raw,
                    _ => return Err(format!("power_mode must be centred or raw, got {v:?}")),
                }
            }
            "anneal_iterations" => self.anneal.iterations = parse_num(v)?,
            "anneal_temperature" => self.anneal.initial_temperature = parse_num(v)?,
            "anneal_cooling" => self.anneal.cooling = parse_num(v)?,
            "anneal_step" => self.anneal.step = parse_num(v)?,
            "entropy_sample" => self.anneal.sample_words = parse_num(v)?,
            "entropy_block_len" => self.anneal.block_len = parse_num(v)?,
            "entropy_block_count" => self.anneal.block_count = parse_num(v)?,
            "bandwidth" => {
                self.anneal.bandwidth = match v {
                    "silverman" => Bandwidth::Silverman,
                    h => Bandwidth::Fixed(parse_num(h)?),
                }
            }
            "seed" => self.seed = parse_num(v)?,
            "workers" => self.workers = Some(parse_num(v)?),
            "output" => self.output = Some(v.into()),
            "manifest" => self.manifest = Some(v.into()),
            _ => return Err(format!("unknown key {key:?}")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.rules.validate()?;
        if self.features.is_empty() {
            return Err(Error::Config("features must not be empty".into()));
        }
        if self.workers == Some(0) {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        self.gpca_params().validate().map_err(|e| Error::Config(e.to_string()))
    }

    pub fn lambda(&self) -> LambdaKind {
        if self.normalized {
            LambdaKind::Normalized {
                k: self.k,
                alpha: self.alpha,
            }
        } else {
            LambdaKind::Classic { k: self.k }
        }
    }

    /// GPCA parameters with stage seeds derived from `seed`.
    pub fn gpca_params(&self) -> GpcaParams {
        GpcaParams {
            metric: self.metric,
            weight: self.weight,
            transform: self.transform.clone(),
            lambda: self.lambda(),
            sketch: SketchParams {
                k: self.k,
                width: self.sketch_width.unwrap_or(self.k + 10),
                power_iters: self.power_iters,
                seed: stage_seed(self.seed, Stage::Sketch),
                mode: self.power_mode,
            },
            anneal: AnnealParams {
                seed: stage_seed(self.seed, Stage::Anneal),
                ..self.anneal.clone()
            },
        }
    }

    /// The configuration in the same `key = value` schema, one key per line.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: &dyn fmt::Display| {
            let _ = writeln!(s, "{k} = {v}");
        };
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        if let Some(p) = path(&self.corpus) {
            put("corpus", &p);
        }
        put(
            "format",
            &match self.format {
                CorpusFormat::Raw => "raw",
                CorpusFormat::Conllu => "conllu",
            },
        );
        if let Some(p) = path(&self.vocab) {
            put("vocab", &p);
        }
        put("lowercase", &self.rules.lowercase);
        put("collapse_digits", &self.rules.collapse_digits);
        put("min_count", &self.rules.min_count);
        let features: Vec<String> = self.features.iter().map(|f| f.to_string()).collect();
        put("features", &features.join(","));
        if let Some(p) = path(&self.matrix) {
            put("matrix", &p);
        }
        put("metric", &format!("{:?}", self.metric).to_lowercase());
        put("weight", &format!("{:?}", self.weight).to_lowercase());
        put("transform", &self.transform);
        put("lambda", &if self.normalized { "normalized" } else { "classic" });
        put("alpha", &format!("{:?}", self.alpha));
        put("k", &self.k);
        if let Some(w) = self.sketch_width {
            put("sketch_width", &w);
        }
        put("power_iters", &self.power_iters);
        put("power_mode", &format!("{:?}", self.power_mode).to_lowercase());
        let a = &self.anneal;
        put("anneal_iterations", &a.iterations);
        put("anneal_temperature", &format!("{:?}", a.initial_temperature));
        put("anneal_cooling", &format!("{:?}", a.cooling));
        put("anneal_step", &format!("{:?}", a.step));
        put("entropy_sample", &a.sample_words);
        put("entropy_block_len", &a.block_len);
        put("entropy_block_count", &a.block_count);
        match a.bandwidth {
            Bandwidth::Silverman => put("bandwidth", &"silverman"),
            Bandwidth::Fixed(h) => put("bandwidth", &format!("{h:?}")),
        }
        put("seed", &self.seed);
        if let Some(w) = self.workers {
            put("workers", &w);
        }
        if let Some(p) = path(&self.output) {
            put("output", &p);
        }
        if let Some(p) = path(&self.manifest) {
            put("manifest", &p);
        }
        s
    }
}
