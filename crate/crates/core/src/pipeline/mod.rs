//! End-to-end run: ingest, cross-links, baseline, detection, sentiment, reply networks,
//! impact, optional embeddings and prediction, and the report bundle.
//!
//! Each stage result is cached under a key derived from the corpus bytes, the other
//! input files, and the analysis parameters, so an unchanged re-run reads every stage back.

pub mod bundle;
pub mod config;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::corpus::{extract_crosslinks, load_events, Corpus, CrossLink, CrosslinkExtraction, LoadReport};
use crate::embed::{build_bipartite, train_embeddings, train_word_vectors, EmbeddingTable, VectorTable};
use crate::error::{Error, Result};
use crate::impact::{
    assign_deciles, defense_success, impact_records, mann_whitney_u, pearson, decile_series, wilcoxon_signed_rank,
    DefenseOutcome, ImpactRecord, Role, TestResult,
};
use crate::mobilization::{BaselineStatistic, Detector, MobilizationRecord, Sentiment, Verdict};
use crate::persist;
use crate::predictor::lstm::{self, LstmParams};
use crate::predictor::{
    assemble_sequences, auc, baseline_features, ensemble_features, ensemble_train, mean_hidden, split_indices,
    SequenceOptions, SocialSequence,
};
use crate::replynet::{anger_rate, build_reply_graph, echo_metrics, EchoReport, Group};
use crate::rng::{child_seed, substream};
use crate::sentiment::forest::train_forest;
use crate::sentiment::{load_labels, predict_sentiment, train_sentiment, Forest, Lexicon, TfidfIndex};

pub use bundle::{schema_json, validate_bundle, Manifest};
pub use config::{Config, ConflictRule};

use bundle::{sha256_hex, BundleWriter};

/// Bumped whenever a cached stage result changes shape or meaning.
const CACHE_VERSION: &str = "2";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageStatus {
    pub name: &'static str,
    pub cache_hit: bool,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub manifest: Manifest,
    pub stages: Vec<StageStatus>,
    pub output: PathBuf,
}

impl RunSummary {
    pub fn all_cached(&self) -> bool {
        self.stages.iter().all(|s| s.cache_hit)
    }
}

struct Cache {
    dir: PathBuf,
    root: String,
}

impl Cache {
    fn path(&self, stage: &str) -> PathBuf {
        let key = sha256_hex(format!("{}\n{stage}", self.root).as_bytes());
        self.dir.join(format!("{stage}-{}.bin", &key[..16]))
    }

    fn get_or<T, F>(&self, stage: &'static str, log: &mut Vec<StageStatus>, compute: F) -> Result<T>
    where
        T: Serialize + DeserializeOwned,
        F: FnOnce() -> Result<T>,
    {
        let path = self.path(stage);
        if let Ok(bytes) = fs::read(&path) {
            match bincode::deserialize(&bytes) {
                Ok(v) => {
                    info!("stage {stage}: cached");
                    log.push(StageStatus { name: stage, cache_hit: true });
                    return Ok(v);
                }
                Err(e) => warn!("stage {stage}: unreadable cache entry ({e}); recomputing"),
            }
        }
        info!("stage {stage}: running");
        let v = compute().map_err(|e| Error::Stage {
            stage,
            source: Box::new(e),
        })?;
        fs::create_dir_all(&self.dir).map_err(|e| Error::io(&self.dir, e))?;
        let bytes = bincode::serialize(&v).map_err(|e| Error::Format(e.to_string()))?;
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        log.push(StageStatus { name: stage, cache_hit: false });
        Ok(v)
    }
}

fn digest_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path).map_err(|e| Error::io(path, e))?))
}

fn digest_dir(dir: &Path) -> Result<String> {
    let mut names: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    names.sort();
    let mut acc = String::new();
    for p in names {
        acc.push_str(&p.file_name().unwrap_or_default().to_string_lossy());
        acc.push(':');
        acc.push_str(&digest_file(&p)?);
        acc.push('\n');
    }
    Ok(sha256_hex(acc.as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineReport {
    pub value: f64,
    pub statistic: BaselineStatistic,
    pub eligible_pairs: usize,
    pub candidate_pairs: usize,
    pub target_mean_ratio: Option<f64>,
    pub default_used: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Detection {
    baseline: BaselineReport,
    records: Vec<MobilizationRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SentimentRow {
    crosslink: String,
    label: Sentiment,
    p_negative: Option<f64>,
    source: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SentimentStage {
    mode: String,
    trained_on: usize,
    oob_accuracy: Option<f64>,
    rows: Vec<SentimentRow>,
    forest: Option<Forest>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ReplyRow {
    crosslink: String,
    nodes: usize,
    echo: EchoReport,
    defender_anger_rate: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ImpactStage {
    impacts: Vec<ImpactRecord>,
    outcomes: Vec<DefenseOutcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTest {
    pub name: String,
    pub n: usize,
    pub result: Option<TestResult>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub metric: String,
    pub n: usize,
    pub pearson: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictReport {
    pub status: String,
    pub reason: Option<String>,
    pub examples: usize,
    pub positives: usize,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub lstm_auc: Option<f64>,
    pub baseline_auc: Option<f64>,
    pub ensemble_auc: Option<f64>,
    pub best_epoch: Option<usize>,
    pub oov_rate: Option<f64>,
}

impl PredictReport {
    fn skipped(reason: impl Into<String>, examples: usize, positives: usize) -> Self {
        PredictReport {
            status: "skipped".into(),
            reason: Some(reason.into()),
            examples,
            positives,
            train: 0,
            val: 0,
            test: 0,
            lstm_auc: None,
            baseline_auc: None,
            ensemble_auc: None,
            best_epoch: None,
            oov_rate: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PredictStage {
    report: PredictReport,
    lstm: Option<lstm::TrainedLstm>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct EmbedStage {
    table: Option<EmbeddingTable>,
}

#[derive(Serialize)]
struct Summary<'a> {
    events: usize,
    crosslinks: usize,
    mobilizations: usize,
    negative_mobilizations: usize,
    conflicts: usize,
    conflict_rule: ConflictRule,
    baseline: f64,
    sentiment_mode: &'a str,
}

#[derive(Serialize)]
struct Alert<'a> {
    crosslink: &'a str,
    source_community: &'a str,
    target_community: &'a str,
    t0: i64,
    ratio: f64,
    baseline: f64,
    sentiment: Sentiment,
    attackers: usize,
    defenders: usize,
}

#[derive(Serialize)]
struct EmbedReport {
    users: usize,
    communities: usize,
    dim: usize,
    epochs: usize,
    final_loss: Option<f64>,
}

fn f(x: f64) -> String {
    format!("{x}")
}

fn of(x: Option<f64>) -> String {
    x.map(f).unwrap_or_default()
}

fn ou(x: Option<usize>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

fn named_test(name: &str, n: usize, r: Result<TestResult>) -> NamedTest {
    match r {
        Ok(t) => NamedTest {
            name: name.into(),
            n,
            result: Some(t),
            error: None,
        },
        Err(e) => NamedTest {
            name: name.into(),
            n,
            result: None,
            error: Some(e.to_string()),
        },
    }
}

/// Run every stage and write the report bundle into `config.output`.
///
/// On a stage failure the files written by earlier stages stay in place and the manifest
/// records the failed stage.
pub fn run_pipeline(config: &Config) -> Result<RunSummary> {
    config.validate()?;
    let corpus_path = config
        .corpus
        .as_ref()
        .ok_or_else(|| Error::Config("no corpus given".into()))?;
    let corpus_sha = digest_file(corpus_path)?;
    let config_sha = sha256_hex(config.analysis_text().as_bytes());
    let mut root = format!("v{CACHE_VERSION}\ncorpus {corpus_sha}\nconfig {config_sha}\n");
    for (name, p) in [
        ("labels", &config.labels),
        ("model", &config.sentiment_model),
        ("words", &config.words),
    ] {
        if let Some(p) = p {
            root.push_str(&format!("{name} {}\n", digest_file(p)?));
        }
    }
    if let Some(dir) = &config.lexicons {
        root.push_str(&format!("lexicons {}\n", digest_dir(dir)?));
    }
    let cache = Cache {
        dir: config.cache_dir(),
        root,
    };

    let mut writer = BundleWriter::create(&config.output)?;
    let mut stages = Vec::new();
    let mut manifest = Manifest {
        format: "intercom-report".into(),
        schema_version: bundle::SCHEMA_VERSION,
        seed: config.seed,
        corpus_sha256: corpus_sha,
        config_sha256: config_sha,
        complete: false,
        failed_stage: None,
        stages: Vec::new(),
        files: Vec::new(),
    };

    match run_stages(config, &cache, &mut writer, &mut stages) {
        Ok(()) => {
            manifest.complete = true;
            manifest.stages = stages.iter().map(|s| s.name.to_owned()).collect();
            let manifest = writer.finish(manifest)?;
            Ok(RunSummary {
                manifest,
                stages,
                output: config.output.clone(),
            })
        }
        Err(e) => {
            manifest.stages = stages.iter().map(|s| s.name.to_owned()).collect();
            manifest.failed_stage = Some(match &e {
                Error::Stage { stage, .. } => (*stage).to_owned(),
                _ => "report".to_owned(),
            });
            if let Err(w) = writer.finish(manifest) {
                warn!("could not write partial manifest: {w}");
            }
            Err(e)
        }
    }
}

fn stage<T>(name: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Stage { .. } => e,
        e => Error::Stage {
            stage: name,
            source: Box::new(e),
        },
    })
}

/// Baseline estimate (falling back to the configured default when no matched pairs are
/// eligible) and a detection record for every cross-link.
pub fn detect_mobilizations(
    config: &Config,
    corpus: &Corpus,
    ex: &CrosslinkExtraction,
) -> Result<(BaselineReport, Vec<MobilizationRecord>)> {
    let det = Detector::new(corpus, &ex.involved_posts, config.detector_config());
    let baseline = match det.baseline_ratio(&ex.links) {
        Ok(b) => BaselineReport {
            value: b.value,
            statistic: b.statistic,
            eligible_pairs: b.eligible_pairs,
            candidate_pairs: b.candidate_pairs,
            target_mean_ratio: Some(b.target_mean_ratio),
            default_used: false,
        },
        Err(Error::NoBaseline { .. }) => {
            warn!(
                "no eligible matched pairs; using the configured default baseline {}",
                config.default_baseline
            );
            BaselineReport {
                value: config.default_baseline,
                statistic: config.baseline,
                eligible_pairs: 0,
                candidate_pairs: 0,
                target_mean_ratio: None,
                default_used: true,
            }
        }
        Err(e) => return Err(e),
    };
    let records = det.detect_all(&ex.links, baseline.value)?;
    Ok((baseline, records))
}

fn run_stages(config: &Config, cache: &Cache, w: &mut BundleWriter, log: &mut Vec<StageStatus>) -> Result<()> {
    let corpus_path = config.corpus.as_ref().expect("checked by caller");
    let (corpus, load): (Corpus, LoadReport) = stage("ingest", load_events(corpus_path))?;
    log.push(StageStatus {
        name: "ingest",
        cache_hit: false,
    });
    w.json("ingest.json", &load)?;
    let lexicons = stage("ingest", config.lexicons())?;

    // cross-links
    let ex: CrosslinkExtraction =
        cache.get_or("crosslinks", log, || Ok(extract_crosslinks(&corpus, &config.crosslink_config())))?;
    let rows: Vec<Vec<String>> = ex
        .links
        .iter()
        .map(|l| {
            vec![
                l.source_post.clone(),
                l.target_post.clone(),
                l.source_community.clone(),
                l.target_community.clone(),
                l.t0.to_string(),
                l.author.clone(),
            ]
        })
        .collect();
    w.csv("crosslinks.csv", &rows)?;

    // baseline and detection
    let detection: Detection = cache.get_or("detect", log, || {
        let (baseline, records) = detect_mobilizations(config, &corpus, &ex)?;
        Ok(Detection { baseline, records })
    })?;
    w.json("baseline.json", &detection.baseline)?;

    // sentiment
    let sent: SentimentStage = cache.get_or("sentiment", log, || sentiment_stage(config, &corpus, &ex, &lexicons))?;
    if let (Some(dir), Some(forest)) = (&config.models, &sent.forest) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        persist::save(forest, dir.join("sentiment.forest"))?;
    }
    let labels: BTreeMap<&str, Sentiment> = sent.rows.iter().map(|r| (r.crosslink.as_str(), r.label)).collect();
    let mut records = detection.records.clone();
    for r in &mut records {
        r.sentiment = labels.get(r.id()).copied().unwrap_or_default();
    }
    let rows: Vec<Vec<String>> = records
        .iter()
        .map(|r| {
            vec![
                r.id().to_owned(),
                r.crosslink.source_community.clone(),
                r.crosslink.target_community.clone(),
                r.crosslink.t0.to_string(),
                r.before_count.to_string(),
                r.after_count.to_string(),
                f(r.ratio),
                f(r.baseline),
                match r.verdict {
                    Verdict::Mobilization => "mobilization".into(),
                    Verdict::None => "none".into(),
                },
                r.matched_post.clone().unwrap_or_default(),
                ou(r.matched_before),
                ou(r.matched_after),
                r.attackers.len().to_string(),
                r.defenders.len().to_string(),
                r.sentiment.to_string(),
            ]
        })
        .collect();
    w.csv("mobilizations.csv", &rows)?;
    let rows: Vec<Vec<String>> = sent
        .rows
        .iter()
        .map(|r| vec![r.crosslink.clone(), r.label.to_string(), of(r.p_negative), r.source.clone()])
        .collect();
    w.csv("sentiment.csv", &rows)?;

    let rule = if config.conflicts == ConflictRule::Negative && sent.mode == "none" {
        warn!("no sentiment labels or model; treating every mobilization as a conflict");
        ConflictRule::All
    } else {
        config.conflicts
    };
    let conflicts: Vec<&MobilizationRecord> = records
        .iter()
        .filter(|r| match rule {
            ConflictRule::Negative => r.is_negative_mobilization(),
            ConflictRule::All => r.is_mobilization(),
        })
        .collect();
    let mut alerts: Vec<&MobilizationRecord> = conflicts.clone();
    alerts.sort_by(|a, b| a.crosslink.t0.cmp(&b.crosslink.t0).then_with(|| a.id().cmp(b.id())));
    let alerts: Vec<Alert> = alerts
        .iter()
        .map(|r| Alert {
            crosslink: r.id(),
            source_community: &r.crosslink.source_community,
            target_community: &r.crosslink.target_community,
            t0: r.crosslink.t0,
            ratio: r.ratio,
            baseline: r.baseline,
            sentiment: r.sentiment,
            attackers: r.attackers.len(),
            defenders: r.defenders.len(),
        })
        .collect();
    w.jsonl("alerts.jsonl", &alerts)?;

    // reply networks
    let pr = config.pagerank_config();
    let anger = lexicons.iter().find(|l| l.category("anger").is_some());
    let replies: Vec<ReplyRow> = cache.get_or("replynet", log, || {
        conflicts
            .par_iter()
            .filter(|r| !r.attackers.is_empty() && !r.defenders.is_empty())
            .map(|r| {
                let g = build_reply_graph(&corpus, &r.crosslink.target_post, &r.attackers, &r.defenders);
                let echo = echo_metrics(&g, &pr)?;
                let defender_anger_rate = match anger {
                    Some(lex) => anger_rate(&g, &corpus, lex, Group::Defender, Group::Attacker)?,
                    None => None,
                };
                Ok(ReplyRow {
                    crosslink: r.id().to_owned(),
                    nodes: g.len(),
                    echo,
                    defender_anger_rate,
                })
            })
            .collect()
    })?;
    let rows: Vec<Vec<String>> = replies
        .iter()
        .map(|r| {
            let e = &r.echo;
            vec![
                r.crosslink.clone(),
                r.nodes.to_string(),
                e.attackers.to_string(),
                e.defenders.to_string(),
                f(e.attacker_to_attacker),
                f(e.attacker_to_defender),
                f(e.defender_to_defender),
                f(e.defender_to_attacker),
                of(e.attacker_echo_ratio),
                of(e.defender_echo_ratio),
                of(e.attacker_cross_fraction),
                of(e.defender_cross_fraction),
                f(e.defender_zero_apr_fraction),
                f(e.defender_high_apr_fraction),
                f(e.mean_defender_apr),
                f(e.mean_attacker_dpr),
                of(r.defender_anger_rate),
            ]
        })
        .collect();
    w.csv("replynet.csv", &rows)?;

    // impact
    let impact: ImpactStage = cache.get_or("impact", log, || {
        let mut rng = substream(config.seed, "impact.match");
        let mut impacts = Vec::new();
        for r in &conflicts {
            impacts.extend(impact_records(&corpus, r, &mut rng));
        }
        let mut outcomes = Vec::new();
        for r in &conflicts {
            if !r.defenders.is_empty() {
                outcomes.push(defense_success(r.id(), &impacts, config.success)?);
            }
        }
        assign_deciles(&mut outcomes);
        Ok(ImpactStage { impacts, outcomes })
    })?;
    let rows: Vec<Vec<String>> = impact
        .impacts
        .iter()
        .map(|i| {
            vec![
                i.mobilization.clone(),
                i.user.clone(),
                match i.role {
                    Role::Attacker => "attacker".into(),
                    Role::Defender => "defender".into(),
                },
                f(i.delta),
                i.low_support.to_string(),
                i.matched_user.clone().unwrap_or_default(),
                of(i.matched_delta),
            ]
        })
        .collect();
    w.csv("impact.csv", &rows)?;
    let rows: Vec<Vec<String>> = impact
        .outcomes
        .iter()
        .map(|o| vec![o.mobilization.clone(), f(o.success_score), o.decile.to_string()])
        .collect();
    w.csv("defense.csv", &rows)?;
    write_tests_and_series(config, &impact, &replies, w)?;

    let summary = Summary {
        events: load.posts + load.comments,
        crosslinks: ex.links.len(),
        mobilizations: records.iter().filter(|r| r.is_mobilization()).count(),
        negative_mobilizations: records.iter().filter(|r| r.is_negative_mobilization()).count(),
        conflicts: conflicts.len(),
        conflict_rule: rule,
        baseline: detection.baseline.value,
        sentiment_mode: &sent.mode,
    };

    // embeddings and prediction
    if config.embed || config.predict {
        let emb: EmbedStage = cache.get_or("embed", log, || {
            let g = build_bipartite(&corpus);
            if g.is_empty() {
                return Ok(EmbedStage { table: None });
            }
            let table = train_embeddings(&g, &config.embed_config("embed.social"))?;
            Ok(EmbedStage { table: Some(table) })
        })?;
        let table = emb.table.map(|mut t| {
            t.reindex();
            t
        });
        w.json(
            "embed.json",
            &EmbedReport {
                users: table.as_ref().map_or(0, |t| t.users.len()),
                communities: table.as_ref().map_or(0, |t| t.communities.len()),
                dim: config.dim,
                epochs: config.embed_epochs,
                final_loss: table.as_ref().and_then(|t| t.epoch_loss.last().copied()),
            },
        )?;
        if let (Some(dir), Some(t)) = (&config.models, &table) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            t.users.write_text(dir.join("users.vec"))?;
            t.communities.write_text(dir.join("communities.vec"))?;
        }
        if config.predict {
            let pred: PredictStage = cache.get_or("predict", log, || {
                predict_stage(config, &corpus, &records, table.as_ref(), &lexicons)
            })?;
            if let (Some(dir), Some(m)) = (&config.models, &pred.lstm) {
                persist::save(m, dir.join("mobilization.lstm"))?;
            }
            w.json("predict.json", &pred.report)?;
        }
    }
    w.json("summary.json", &summary)?;
    Ok(())
}

fn sentiment_stage(
    config: &Config,
    corpus: &Corpus,
    ex: &CrosslinkExtraction,
    lexicons: &[Lexicon],
) -> Result<SentimentStage> {
    let given = match &config.labels {
        Some(p) => load_labels(p)?,
        None => BTreeMap::new(),
    };
    let (mode, forest) = if let Some(p) = &config.sentiment_model {
        ("model", Some(persist::load::<Forest>(p)?))
    } else if !given.is_empty() {
        let cfg = config.forest_config("sentiment.forest");
        match train_sentiment(&ex.links, &given, corpus, lexicons, &cfg) {
            Ok(f) => ("labels", Some(f)),
            Err(Error::SingleClass) => {
                warn!("sentiment labels have a single class; using them without a classifier");
                ("labels", None)
            }
            Err(e) => return Err(e),
        }
    } else {
        ("none", None)
    };
    let trained_on = if mode == "labels" {
        ex.links.iter().filter(|l| given.contains_key(l.id())).count()
    } else {
        0
    };
    let rows = ex
        .links
        .par_iter()
        .map(|l| {
            let p = match &forest {
                Some(fr) => Some(predict_sentiment(fr, l, corpus, lexicons)?),
                None => None,
            };
            let (label, source) = match (given.get(l.id()), p) {
                (Some(s), _) if *s != Sentiment::Unlabeled => (*s, "given"),
                (_, Some((s, _))) => (s, "predicted"),
                _ => (Sentiment::Unlabeled, "none"),
            };
            Ok(SentimentRow {
                crosslink: l.id().to_owned(),
                label,
                p_negative: p.map(|x| x.1),
                source: source.into(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SentimentStage {
        mode: mode.into(),
        trained_on,
        oob_accuracy: forest.as_ref().and_then(|f| f.oob_accuracy),
        rows,
        forest,
    })
}

fn write_tests_and_series(config: &Config, impact: &ImpactStage, replies: &[ReplyRow], w: &mut BundleWriter) -> Result<()> {
    let tc = config.test_config();
    let supported = |role: Role| -> Vec<&ImpactRecord> {
        impact
            .impacts
            .iter()
            .filter(|i| i.role == role && !i.low_support)
            .collect()
    };
    let mut tests = Vec::new();
    for (name, role) in [
        ("attacker_delta_vs_matched", Role::Attacker),
        ("defender_delta_vs_matched", Role::Defender),
    ] {
        let pairs: Vec<(f64, f64)> = supported(role)
            .iter()
            .filter_map(|i| i.matched_delta.map(|m| (i.delta, m)))
            .collect();
        tests.push(named_test(name, pairs.len(), wilcoxon_signed_rank(&pairs, &tc)));
    }
    let a: Vec<f64> = supported(Role::Attacker).iter().map(|i| i.delta).collect();
    let d: Vec<f64> = supported(Role::Defender).iter().map(|i| i.delta).collect();
    tests.push(named_test(
        "attacker_vs_defender_delta",
        a.len() + d.len(),
        mann_whitney_u(&a, &d, &tc),
    ));

    let by_id: BTreeMap<&str, &ReplyRow> = replies.iter().map(|r| (r.crosslink.as_str(), r)).collect();
    type Metric = fn(&ReplyRow) -> Option<f64>;
    let metrics: [(&str, Metric); 4] = [
        ("defender_reply_to_attacker_fraction", |r| r.echo.defender_cross_fraction),
        ("defender_apr", |r| Some(r.echo.mean_defender_apr)),
        ("attacker_dpr", |r| Some(r.echo.mean_attacker_dpr)),
        ("defender_anger_rate", |r| r.defender_anger_rate),
    ];
    let mut series_rows = Vec::new();
    let mut correlations = Vec::new();
    for (name, metric) in metrics {
        let value = |o: &DefenseOutcome| metric(by_id.get(o.mobilization.as_str())?);
        let (xs, ys): (Vec<f64>, Vec<f64>) = impact
            .outcomes
            .iter()
            .filter_map(|o| Some((o.success_score, value(o)?)))
            .unzip();
        correlations.push(Correlation {
            metric: name.into(),
            n: xs.len(),
            pearson: pearson(&xs, &ys),
        });
        let s = decile_series(&impact.outcomes, value, config.buckets, config.smoothing_half);
        for (k, (x, y)) in s.x.iter().zip(&s.y).enumerate() {
            series_rows.push(vec![name.to_owned(), k.to_string(), f(*x), f(*y), s.smoothed.to_string()]);
        }
    }
    w.json(
        "tests.json",
        &serde_json::json!({ "tests": tests, "correlations": correlations }),
    )?;
    w.csv("series.csv", &series_rows)
}

fn predict_stage(
    config: &Config,
    corpus: &Corpus,
    records: &[MobilizationRecord],
    table: Option<&EmbeddingTable>,
    lexicons: &[Lexicon],
) -> Result<PredictStage> {
    let n = records.len();
    let labels: Vec<bool> = records.iter().map(|r| r.is_mobilization()).collect();
    let positives = labels.iter().filter(|&&y| y).count();
    let skip = |why: &str| {
        Ok(PredictStage {
            report: PredictReport::skipped(why, n, positives),
            lstm: None,
        })
    };
    let Some(table) = table else {
        return skip("no embeddings (empty corpus)");
    };
    if n < 10 {
        return skip("fewer than 10 cross-links");
    }
    if positives == 0 || positives == n {
        return skip("cross-links have a single class");
    }
    let words = match &config.words {
        Some(p) => VectorTable::read_text(p)?,
        None => train_word_vectors(corpus, config.word_window, &config.embed_config("embed.words"))?,
    };
    let opts = SequenceOptions {
        backoff: true,
        ..SequenceOptions::default()
    };
    let links: Vec<&CrossLink> = records.iter().map(|r| &r.crosslink).collect();
    let seqs = assemble_sequences(&links, corpus, table, &words, &opts)?;
    let tokens: usize = seqs.iter().map(|s| s.len().saturating_sub(3)).sum();
    let oov: usize = seqs.iter().map(|s| s.oov).sum();
    let split = split_indices(n, config.seed);
    let pick = |idx: &[usize]| -> Vec<(&SocialSequence, bool)> { idx.iter().map(|&i| (&seqs[i], labels[i])).collect() };
    let lcfg = config.lstm_config();
    let init = LstmParams::init(table.dim(), config.hidden, &mut substream(config.seed, "predictor.lstm.init"));
    let trained = lstm::train(&pick(&split.train), &pick(&split.val), init, &lcfg)?;
    let test_labels: Vec<bool> = split.test.iter().map(|&i| labels[i]).collect();
    let score_auc = |scores: Vec<f64>| match auc(&scores, &test_labels) {
        Ok(a) => Ok(Some(a)),
        Err(Error::SingleClass) => Ok(None),
        Err(e) => Err(e),
    };
    let lstm_scores = split
        .test
        .iter()
        .map(|&i| lstm::predict_prob(&seqs[i], &trained.params))
        .collect::<Result<Vec<_>>>()?;
    let lstm_auc = score_auc(lstm_scores)?;

    let tfidf = TfidfIndex::build(corpus, crate::sentiment::tfidf::DEFAULT_VOCAB_SIZE);
    let base = records
        .par_iter()
        .map(|r| baseline_features(&r.crosslink, corpus, lexicons, &tfidf, Some(table)).map(|b| b.features))
        .collect::<Result<Vec<_>>>()?;
    let train_rows: Vec<_> = split.train.iter().map(|&i| base[i].clone()).collect();
    let train_labels: Vec<bool> = split.train.iter().map(|&i| labels[i]).collect();
    let forest_cfg = config.forest_config("predictor.baseline");
    let baseline_auc = match train_forest(&train_rows, &train_labels, &forest_cfg) {
        Ok(forest) => score_auc(
            split
                .test
                .iter()
                .map(|&i| forest.predict_proba(&base[i]))
                .collect::<Result<Vec<_>>>()?,
        )?,
        Err(Error::SingleClass) => None,
        Err(e) => return Err(e),
    };
    let ens = seqs
        .par_iter()
        .zip(&base)
        .map(|(s, b)| ensemble_features(b, s, &mean_hidden(s, &trained.params)?))
        .collect::<Result<Vec<_>>>()?;
    let ens_train: Vec<_> = split.train.iter().map(|&i| ens[i].clone()).collect();
    let ensemble_auc = match ensemble_train(&ens_train, &train_labels, child_seed(config.seed, "predictor.ensemble", 0)) {
        Ok(forest) => score_auc(
            split
                .test
                .iter()
                .map(|&i| forest.predict_proba(&ens[i]))
                .collect::<Result<Vec<_>>>()?,
        )?,
        Err(Error::SingleClass) => None,
        Err(e) => return Err(e),
    };
    Ok(PredictStage {
        report: PredictReport {
            status: "ok".into(),
            reason: None,
            examples: n,
            positives,
            train: split.train.len(),
            val: split.val.len(),
            test: split.test.len(),
            lstm_auc,
            baseline_auc,
            ensemble_auc,
            best_epoch: Some(trained.best_epoch),
            oov_rate: (tokens > 0).then(|| oov as f64 / tokens as f64),
        },
        lstm: Some(trained),
    })
}
