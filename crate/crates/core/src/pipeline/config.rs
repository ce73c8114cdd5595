//! `key = value` configuration with range checks.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{CrosslinkConfig, HOUR};
use crate::embed::EmbedConfig;
use crate::error::{Error, Result};
use crate::impact::{SuccessMode, TestConfig};
use crate::mobilization::{BaselineStatistic, DetectorConfig};
use crate::predictor::lstm::LstmConfig;
use crate::replynet::PageRankConfig;
use crate::rng::child_seed;
use crate::sentiment::{ForestConfig, Lexicon};

/// Which mobilizations count as conflicts for the reply-network and impact stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConflictRule {
    Negative,
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Config {
    pub corpus: Option<PathBuf>,
    pub lexicons: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub sentiment_model: Option<PathBuf>,
    pub words: Option<PathBuf>,
    pub models: Option<PathBuf>,
    pub output: PathBuf,
    /// Defaults to `<output>/.cache`.
    pub cache: Option<PathBuf>,

    pub hosts: Option<Vec<String>>,
    pub window_hours: u32,
    pub baseline: BaselineStatistic,
    pub smoothing: f64,
    pub pre_count_tolerance: usize,
    pub default_baseline: f64,

    pub alpha: f64,
    pub tol: f64,
    pub max_iter: usize,

    pub conflicts: ConflictRule,
    pub success: SuccessMode,
    pub buckets: usize,
    pub smoothing_half: usize,
    pub exact_mwu_max: usize,
    pub exact_wilcoxon_max: usize,

    pub trees: usize,

    pub embed: bool,
    pub predict: bool,
    pub dim: usize,
    pub negatives: usize,
    pub embed_epochs: usize,
    pub word_window: usize,
    pub hidden: usize,
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    /// Gradient norm clip for the LSTM; 0 disables.
    pub clip: f64,
    pub seed: u64,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            corpus: None,
            lexicons: None,
            labels: None,
            sentiment_model: None,
            words: None,
            models: None,
            output: PathBuf::from("report"),
            cache: None,
            hosts: None,
            window_hours: 12,
            baseline: BaselineStatistic::Mean,
            smoothing: 1.0,
            pre_count_tolerance: 5,
            default_baseline: 1.6,
            alpha: 0.25,
            tol: 1e-10,
            max_iter: 10_000,
            conflicts: ConflictRule::Negative,
            success: SuccessMode::Adjusted,
            buckets: 100,
            smoothing_half: 5,
            exact_mwu_max: 20,
            exact_wilcoxon_max: 25,
            trees: 400,
            embed: false,
            predict: false,
            dim: 300,
            negatives: 5,
            embed_epochs: 100,
            word_window: 5,
            hidden: 64,
            lr: 0.01,
            epochs: 20,
            batch: 16,
            clip: 5.0,
            seed: 0,
        }
    }
}

/// Every accepted key with a one-line description.
pub const KEYS: &[(&str, &str)] = &[
    ("corpus", "event log (JSONL)"),
    ("lexicons", "directory of <category>.txt word lists; builtin lists when unset"),
    ("labels", "sentiment label file (JSONL of {crosslink, label})"),
    ("sentiment_model", "trained sentiment forest; takes precedence over labels"),
    ("words", "word vectors in text format; trained on the corpus when unset"),
    ("models", "directory to save trained models into"),
    ("output", "report bundle directory"),
    ("cache", "stage cache directory"),
    ("hosts", "comma-separated URL host allowlist for cross-links"),
    ("window_hours", "before/after window width, 1..=168"),
    ("baseline", "mean | median"),
    ("smoothing", "ratio pseudo-count, (0, 100]"),
    ("pre_count_tolerance", "null-model pre-link size tolerance, 1..=1000"),
    ("default_baseline", "fallback baseline when no matched pair qualifies, (0, 100]"),
    ("alpha", "PageRank teleport probability, (0, 1)"),
    ("tol", "PageRank L1 tolerance, (0, 1e-3]"),
    ("max_iter", "PageRank iteration cap, 1..=10000000"),
    ("conflicts", "negative | all"),
    ("success", "adjusted | raw"),
    ("buckets", "success buckets for series, 1..=1000"),
    ("smoothing_half", "moving-average half width, 0..=50"),
    ("exact_mwu_max", "largest n_a+n_b with an exact Mann-Whitney p, 0..=100"),
    ("exact_wilcoxon_max", "largest n with an exact Wilcoxon p, 0..=100"),
    ("trees", "sentiment and baseline forest size, 1..=5000"),
    ("embed", "true | false"),
    ("predict", "true | false (implies embed)"),
    ("dim", "embedding width, 1..=1024"),
    ("negatives", "negative samples per edge, 1..=100"),
    ("embed_epochs", "embedding epochs, 1..=10000"),
    ("word_window", "skip-gram context half width, 1..=20"),
    ("hidden", "LSTM hidden size, 1..=1024"),
    ("lr", "LSTM Adam step size, (0, 1]"),
    ("epochs", "LSTM epochs, 1..=10000"),
    ("batch", "LSTM mini-batch size, 1..=100000"),
    ("clip", "LSTM gradient clip norm, >= 0 (0 disables)"),
    ("seed", "root seed"),
];

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn boolean(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true or false, got {value:?}"))),
    }
}

fn range<T: PartialOrd + std::fmt::Display>(key: &str, v: T, lo: T, hi: T) -> Result<()> {
    if v < lo || v > hi {
        return Err(Error::Config(format!("{key} = {v} outside [{lo}, {hi}]")));
    }
    Ok(())
}

fn open_low(key: &str, v: f64, lo: f64, hi: f64) -> Result<()> {
    if !(v > lo && v <= hi) {
        return Err(Error::Config(format!("{key} = {v} outside ({lo}, {hi}]")));
    }
    Ok(())
}

impl Config {
    /// Parse `key = value` lines; `#` starts a comment. Values are validated at the end.
    pub fn parse(text: &str) -> Result<Self> {
        let c = Self::parse_unchecked(text)?;
        c.validate()?;
        Ok(c)
    }

    fn parse_unchecked(text: &str) -> Result<Self> {
        let mut c = Config::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
            c.set(k.trim(), v.trim())
                .map_err(|e| Error::Config(format!("line {}: {}", i + 1, e.to_string().trim_start_matches("config: "))))?;
        }
        Ok(c)
    }

    /// Read a config file; relative paths inside it resolve against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::load_with_overrides(path, [])
    }

    /// [`Config::load`], then `key=value` overrides, then validation of the result.
    pub fn load_with_overrides<'a>(
        path: impl AsRef<Path>,
        overrides: impl IntoIterator<Item = &'a str>,
    ) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut c = Self::parse_unchecked(&text)?;
        if let Some(base) = path.parent() {
            c.resolve_relative(base);
        }
        c.apply_overrides(overrides)?;
        Ok(c)
    }

    fn resolve_relative(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for p in [
            &mut self.corpus,
            &mut self.lexicons,
            &mut self.labels,
            &mut self.sentiment_model,
            &mut self.words,
            &mut self.models,
            &mut self.cache,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
        fix(&mut self.output);
    }

    /// Set one key; unknown keys are rejected. Does not run cross-field validation.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let path = || Some(PathBuf::from(value));
        match key {
            "corpus" => self.corpus = path(),
            "lexicons" => self.lexicons = path(),
            "labels" => self.labels = path(),
            "sentiment_model" => self.sentiment_model = path(),
            "words" => self.words = path(),
            "models" => self.models = path(),
            "output" => self.output = PathBuf::from(value),
            "cache" => self.cache = path(),
            "hosts" => {
                let hosts: Vec<String> = value
                    .split(',')
                    .map(|h| h.trim().to_lowercase())
                    .filter(|h| !h.is_empty())
                    .collect();
                self.hosts = (!hosts.is_empty()).then_some(hosts);
            }
            "window_hours" => self.window_hours = num(key, value)?,
            "baseline" => {
                self.baseline = match value {
                    "mean" => BaselineStatistic::Mean,
                    "median" => BaselineStatistic::Median,
                    _ => return Err(Error::Config(format!("baseline: expected mean or median, got {value:?}"))),
                }
            }
            "smoothing" => self.smoothing = num(key, value)?,
            "pre_count_tolerance" => self.pre_count_tolerance = num(key, value)?,
            "default_baseline" => self.default_baseline = num(key, value)?,
            "alpha" => self.alpha = num(key, value)?,
            "tol" => self.tol = num(key, value)?,
            "max_iter" => self.max_iter = num(key, value)?,
            "conflicts" => {
                self.conflicts = match value {
                    "negative" => ConflictRule::Negative,
                    "all" => ConflictRule::All,
                    _ => return Err(Error::Config(format!("conflicts: expected negative or all, got {value:?}"))),
                }
            }
            "success" => {
                self.success = match value {
                    "adjusted" => SuccessMode::Adjusted,
                    "raw" => SuccessMode::Raw,
                    _ => return Err(Error::Config(format!("success: expected adjusted or raw, got {value:?}"))),
                }
            }
            "buckets" => self.buckets = num(key, value)?,
            "smoothing_half" => self.smoothing_half = num(key, value)?,
            "exact_mwu_max" => self.exact_mwu_max = num(key, value)?,
            "exact_wilcoxon_max" => self.exact_wilcoxon_max = num(key, value)?,
            "trees" => self.trees = num(key, value)?,
            "embed" => self.embed = boolean(key, value)?,
            "predict" => self.predict = boolean(key, value)?,
            "dim" => self.dim = num(key, value)?,
            "negatives" => self.negatives = num(key, value)?,
            "embed_epochs" => self.embed_epochs = num(key, value)?,
            "word_window" => self.word_window = num(key, value)?,
            "hidden" => self.hidden = num(key, value)?,
            "lr" => self.lr = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "batch" => self.batch = num(key, value)?,
            "clip" => self.clip = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Apply `key=value` overrides (e.g. from command-line flags) and revalidate.
    pub fn apply_overrides<'a>(&mut self, overrides: impl IntoIterator<Item = &'a str>) -> Result<()> {
        for kv in overrides {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {kv:?} is not key=value")))?;
            self.set(k.trim(), v.trim())?;
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        range("window_hours", self.window_hours, 1, 168)?;
        open_low("smoothing", self.smoothing, 0.0, 100.0)?;
        range("pre_count_tolerance", self.pre_count_tolerance, 1, 1000)?;
        open_low("default_baseline", self.default_baseline, 0.0, 100.0)?;
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha = {} outside (0, 1)", self.alpha)));
        }
        open_low("tol", self.tol, 0.0, 1e-3)?;
        range("max_iter", self.max_iter, 1, 10_000_000)?;
        range("buckets", self.buckets, 1, 1000)?;
        range("smoothing_half", self.smoothing_half, 0, 50)?;
        range("exact_mwu_max", self.exact_mwu_max, 0, 100)?;
        range("exact_wilcoxon_max", self.exact_wilcoxon_max, 0, 100)?;
        range("trees", self.trees, 1, 5000)?;
        range("dim", self.dim, 1, 1024)?;
        range("negatives", self.negatives, 1, 100)?;
        range("embed_epochs", self.embed_epochs, 1, 10_000)?;
        range("word_window", self.word_window, 1, 20)?;
        range("hidden", self.hidden, 1, 1024)?;
        open_low("lr", self.lr, 0.0, 1.0)?;
        range("epochs", self.epochs, 1, 10_000)?;
        range("batch", self.batch, 1, 100_000)?;
        if !(self.clip >= 0.0 && self.clip.is_finite()) {
            return Err(Error::Config(format!("clip = {} must be finite and >= 0", self.clip)));
        }
        Ok(())
    }

    pub fn crosslink_config(&self) -> CrosslinkConfig {
        CrosslinkConfig {
            hosts: self.hosts.clone(),
            window: Some(self.window_hours as i64 * HOUR),
        }
    }

    pub fn detector_config(&self) -> DetectorConfig {
        DetectorConfig {
            window: self.window_hours as i64 * HOUR,
            pre_count_tolerance: self.pre_count_tolerance,
            smoothing: self.smoothing,
            statistic: self.baseline,
        }
    }

    pub fn pagerank_config(&self) -> PageRankConfig {
        PageRankConfig {
            alpha: self.alpha,
            tol: self.tol,
            max_iter: self.max_iter,
        }
    }

    pub fn test_config(&self) -> TestConfig {
        TestConfig {
            exact_mwu_max: self.exact_mwu_max,
            exact_wilcoxon_max: self.exact_wilcoxon_max,
        }
    }

    /// Forest settings seeded from the named substream.
    pub fn forest_config(&self, stream: &str) -> ForestConfig {
        ForestConfig {
            trees: self.trees,
            seed: child_seed(self.seed, stream, 0),
            ..ForestConfig::default()
        }
    }

    /// Sequential SGD so that runs are bit-reproducible.
    pub fn embed_config(&self, stream: &str) -> EmbedConfig {
        EmbedConfig {
            dim: self.dim,
            negatives: self.negatives,
            epochs: self.embed_epochs,
            seed: child_seed(self.seed, stream, 0),
            parallel: false,
            ..EmbedConfig::default()
        }
    }

    pub fn lstm_config(&self) -> LstmConfig {
        LstmConfig {
            hidden: self.hidden,
            lr: self.lr,
            epochs: self.epochs,
            batch: self.batch,
            clip: (self.clip > 0.0).then_some(self.clip),
            seed: child_seed(self.seed, "predictor.lstm", 0),
        }
    }

    /// The lexicon directory, or the builtin lexicon.
    pub fn lexicons(&self) -> Result<Vec<Lexicon>> {
        Ok(vec![match &self.lexicons {
            Some(dir) => Lexicon::load_dir(dir)?,
            None => Lexicon::builtin(),
        }])
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.cache.clone().unwrap_or_else(|| self.output.join(".cache"))
    }

    /// Canonical text of the analysis parameters, without any paths.
    pub fn analysis_text(&self) -> String {
        let mut c = self.clone();
        c.corpus = None;
        c.lexicons = None;
        c.labels = None;
        c.sentiment_model = None;
        c.words = None;
        c.models = None;
        c.output = PathBuf::new();
        c.cache = None;
        serde_json::to_string(&c).expect("config serializes")
    }
}
