use std::collections::BTreeMap;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use log::{info, warn};
use serde::Serialize;
use serde_json::json;

use intercom_core::embed::{build_bipartite, train_embeddings, train_word_vectors, EmbeddingTable, VectorTable};
use intercom_core::impact::{assign_deciles, defense_success, impact_records};
use intercom_core::pipeline::{detect_mobilizations, run_pipeline, schema_json, validate_bundle, Config, ConflictRule};
use intercom_core::predictor::lstm::{self, LstmParams, TrainedLstm};
use intercom_core::predictor::{assemble_sequences, auc, split_indices, SequenceOptions, SocialSequence};
use intercom_core::replynet::{build_reply_graph, echo_metrics};
use intercom_core::rng::substream;
use intercom_core::sentiment::{load_labels, predict_sentiment, train_sentiment, SentimentLabel};
use intercom_core::synth::{generate_corpus, sentiment_labels, write_events, SynthSpec};
use intercom_core::{
    extract_crosslinks, load_events, matched_post, persist, Corpus, CrossLink, CrosslinkExtraction, Detector,
    Forest, MobilizationRecord, Sentiment,
};

use crate::{Command, ModelArgs, PredictAction, SentimentAction, SynthArgs, Usage};

pub fn dispatch(command: Command, config: Config) -> Result<()> {
    match command {
        Command::Ingest { path, index_out } => ingest(&path, index_out.as_deref()),
        Command::Match { post } => match_post(&config, &post),
        Command::Crosslinks => crosslinks(&config),
        Command::Detect { baseline } => detect(&config, &baseline),
        Command::Sentiment { action } => sentiment(&config, action),
        Command::Replynet { mobilization, edges } => replynet(&config, &mobilization, edges.as_deref()),
        Command::Impact { users } => impact(&config, users),
        Command::Embed { out } => embed(&config, &out),
        Command::Predict { action } => predict(&config, action),
        Command::Synth(args) => synth(&args),
        Command::Report { out, schema, validate } => report(config, out, schema, validate.as_deref()),
    }
}

fn stdout() -> BufWriter<io::StdoutLock<'static>> {
    BufWriter::new(io::stdout().lock())
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    let mut out = stdout();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

fn print_jsonl<T: Serialize>(values: impl IntoIterator<Item = T>) -> Result<()> {
    let mut out = stdout();
    for v in values {
        serde_json::to_writer(&mut out, &v)?;
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

fn corpus(config: &Config) -> Result<Corpus> {
    let Some(path) = &config.corpus else {
        return Err(Usage("no corpus given; pass --corpus or set the corpus key".into()).into());
    };
    let (corpus, report) = load_events(path)?;
    info!(
        "loaded {} posts and {} comments ({} rejected, {} duplicates, {} orphaned)",
        report.posts, report.comments, report.rejected, report.duplicates, report.orphaned
    );
    Ok(corpus)
}

fn extraction(config: &Config, corpus: &Corpus) -> CrosslinkExtraction {
    let ex = extract_crosslinks(corpus, &config.crosslink_config());
    info!(
        "{} cross-links ({} missing targets, {} self links, {} overlapping)",
        ex.links.len(),
        ex.missing_target,
        ex.self_links,
        ex.overlapping
    );
    ex
}

fn records(config: &Config, corpus: &Corpus) -> Result<Vec<MobilizationRecord>> {
    let ex = extraction(config, corpus);
    let (baseline, records) = detect_mobilizations(config, corpus, &ex)?;
    info!("baseline ratio {:.4} from {} matched pairs", baseline.value, baseline.eligible_pairs);
    Ok(records)
}

fn ingest(path: &Path, index_out: Option<&Path>) -> Result<()> {
    let (corpus, report) = load_events(path)?;
    if let Some(dir) = index_out {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        write_events(&corpus.to_events(), dir.join("events.jsonl"))?;
        fs::write(dir.join("ingest.json"), serde_json::to_string_pretty(&report)? + "\n")
            .with_context(|| format!("writing {}", dir.display()))?;
    }
    print_json(&report)
}

fn match_post(config: &Config, post: &str) -> Result<()> {
    let corpus = corpus(config)?;
    let ex = extraction(config, &corpus);
    print_json(&matched_post(&corpus, &ex.involved_posts, post)?)
}

fn crosslinks(config: &Config) -> Result<()> {
    let corpus = corpus(config)?;
    print_jsonl(extraction(config, &corpus).links)
}

fn detect(config: &Config, baseline: &str) -> Result<()> {
    let corpus = corpus(config)?;
    if baseline == "auto" {
        return print_jsonl(records(config, &corpus)?);
    }
    let value: f64 = baseline
        .parse()
        .ok()
        .filter(|v: &f64| v.is_finite() && *v > 0.0)
        .ok_or_else(|| Usage(format!("--baseline must be `auto` or a positive number, got {baseline:?}")))?;
    let ex = extraction(config, &corpus);
    let det = Detector::new(&corpus, &ex.involved_posts, config.detector_config());
    print_jsonl(det.detect_all(&ex.links, value)?)
}

fn sentiment(config: &Config, action: SentimentAction) -> Result<()> {
    let corpus = corpus(config)?;
    let links = extraction(config, &corpus).links;
    let lexicons = config.lexicons()?;
    match action {
        SentimentAction::Train { labels, model } => {
            let Some(path) = labels.or_else(|| config.labels.clone()) else {
                return Err(Usage("no labels given; pass --labels or set the labels key".into()).into());
            };
            let labels = load_labels(&path)?;
            let forest = train_sentiment(&links, &labels, &corpus, &lexicons, &config.forest_config("sentiment.forest"))?;
            persist::save(&forest, &model)?;
            let trained_on = links.iter().filter(|l| labels.contains_key(l.id())).count();
            print_json(&json!({
                "model": model,
                "trained_on": trained_on,
                "trees": forest.trees().len(),
                "oob_accuracy": forest.oob_accuracy,
            }))
        }
        SentimentAction::Predict { model } => {
            let forest: Forest = persist::load(&model)?;
            let mut rows = Vec::with_capacity(links.len());
            for link in &links {
                let (label, p) = predict_sentiment(&forest, link, &corpus, &lexicons)?;
                rows.push(json!({ "crosslink": link.id(), "label": label, "p_negative": p }));
            }
            print_jsonl(rows)
        }
    }
}

fn replynet(config: &Config, id: &str, edges: Option<&Path>) -> Result<()> {
    let corpus = corpus(config)?;
    let records = records(config, &corpus)?;
    let Some(record) = records.iter().find(|r| r.id() == id) else {
        bail!(intercom_core::Error::UnknownId(format!("cross-link {id}")));
    };
    if !record.is_mobilization() {
        warn!("cross-link {id} is not a mobilization; its attacker set is empty");
    }
    let graph = build_reply_graph(&corpus, &record.crosslink.target_post, &record.attackers, &record.defenders);
    if let Some(path) = edges {
        fs::write(path, graph.to_edge_list()).with_context(|| format!("writing {}", path.display()))?;
    }
    let echo = if record.attackers.is_empty() || record.defenders.is_empty() {
        None
    } else {
        Some(echo_metrics(&graph, &config.pagerank_config())?)
    };
    print_json(&json!({
        "mobilization": id,
        "nodes": graph.len(),
        "edges": graph.edge_count(),
        "attackers": record.attackers.len(),
        "defenders": record.defenders.len(),
        "echo": echo,
    }))
}

fn impact(config: &Config, users: bool) -> Result<()> {
    let corpus = corpus(config)?;
    let mut records = records(config, &corpus)?;
    let labels = match &config.labels {
        Some(p) => load_labels(p)?,
        None => BTreeMap::new(),
    };
    for r in &mut records {
        r.sentiment = labels.get(r.id()).copied().unwrap_or_default();
    }
    let rule = if config.conflicts == ConflictRule::Negative && labels.is_empty() {
        warn!("no sentiment labels; treating every mobilization as a conflict");
        ConflictRule::All
    } else {
        config.conflicts
    };
    let mut rng = substream(config.seed, "impact.match");
    let mut impacts = Vec::new();
    let mut outcomes = Vec::new();
    for r in &records {
        let conflict = match rule {
            ConflictRule::Negative => r.is_negative_mobilization(),
            ConflictRule::All => r.is_mobilization(),
        };
        if !conflict {
            continue;
        }
        let rows = impact_records(&corpus, r, &mut rng);
        if !r.defenders.is_empty() {
            outcomes.push(defense_success(r.id(), &rows, config.success)?);
        }
        impacts.extend(rows);
    }
    if users {
        return print_jsonl(impacts);
    }
    assign_deciles(&mut outcomes);
    print_jsonl(outcomes)
}

fn social_embeddings(config: &Config, corpus: &Corpus) -> Result<EmbeddingTable> {
    let graph = build_bipartite(corpus);
    Ok(train_embeddings(&graph, &config.embed_config("embed.social"))?)
}

fn embed(config: &Config, out: &Path) -> Result<()> {
    let corpus = corpus(config)?;
    let table = social_embeddings(config, &corpus)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    table.users.write_text(out.join("users.vec"))?;
    table.communities.write_text(out.join("communities.vec"))?;
    print_json(&json!({
        "users": table.users.len(),
        "communities": table.communities.len(),
        "dim": table.dim(),
        "final_loss": table.epoch_loss.last(),
    }))
}

struct Dataset {
    links: Vec<CrossLink>,
    labels: Vec<bool>,
    seqs: Vec<SocialSequence>,
}

/// Embeddings from `dir`; with `train_missing`, absent files are trained and written.
fn load_vectors(config: &Config, corpus: &Corpus, dir: &Path, train_missing: bool) -> Result<(EmbeddingTable, VectorTable)> {
    let names = ["users.vec", "communities.vec", "words.vec"];
    let missing: Vec<&str> = names.iter().copied().filter(|n| !dir.join(n).exists()).collect();
    if !missing.is_empty() && !train_missing {
        bail!(intercom_core::Error::InvalidInput(format!(
            "{} lacks {}",
            dir.display(),
            missing.join(", ")
        )));
    }
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let social = if missing.contains(&"users.vec") || missing.contains(&"communities.vec") {
        info!("training user and community embeddings");
        let t = social_embeddings(config, corpus)?;
        t.users.write_text(dir.join("users.vec"))?;
        t.communities.write_text(dir.join("communities.vec"))?;
        t
    } else {
        EmbeddingTable {
            users: VectorTable::read_text(dir.join("users.vec"))?,
            communities: VectorTable::read_text(dir.join("communities.vec"))?,
            epoch_loss: Vec::new(),
        }
    };
    let words = if missing.contains(&"words.vec") {
        let w = match &config.words {
            Some(p) => VectorTable::read_text(p)?,
            None => {
                info!("training word vectors");
                train_word_vectors(corpus, config.word_window, &config.embed_config("embed.words"))?
            }
        };
        w.write_text(dir.join("words.vec"))?;
        w
    } else {
        VectorTable::read_text(dir.join("words.vec"))?
    };
    Ok((social, words))
}

fn dataset(config: &Config, args: &ModelArgs, train_missing: bool) -> Result<Dataset> {
    let corpus = corpus(config)?;
    let records = records(config, &corpus)?;
    let (tables, words) = load_vectors(config, &corpus, &args.embeddings, train_missing)?;
    let opts = SequenceOptions {
        backoff: true,
        ..SequenceOptions::default()
    };
    let links: Vec<CrossLink> = records.iter().map(|r| r.crosslink.clone()).collect();
    let refs: Vec<&CrossLink> = links.iter().collect();
    let seqs = assemble_sequences(&refs, &corpus, &tables, &words, &opts)?;
    let labels = records.iter().map(|r| r.is_mobilization()).collect();
    Ok(Dataset { links, labels, seqs })
}

fn check_width(params: &LstmParams, data: &Dataset) -> Result<()> {
    match data.seqs.first() {
        Some(s) if s.dim != params.n_in => bail!(intercom_core::Error::InvalidInput(format!(
            "model expects {}-dimensional inputs, embeddings have {}",
            params.n_in, s.dim
        ))),
        _ => Ok(()),
    }
}

fn predict(config: &Config, action: PredictAction) -> Result<()> {
    match action {
        PredictAction::Train(args) => {
            let data = dataset(config, &args, true)?;
            let Some(first) = data.seqs.first() else {
                bail!(intercom_core::Error::InvalidInput("corpus has no cross-links".into()));
            };
            let split = split_indices(data.seqs.len(), config.seed);
            let pick = |idx: &[usize]| -> Vec<(&SocialSequence, bool)> {
                idx.iter().map(|&i| (&data.seqs[i], data.labels[i])).collect()
            };
            let init = LstmParams::init(first.dim, config.hidden, &mut substream(config.seed, "predictor.lstm.init"));
            let trained = lstm::train(&pick(&split.train), &pick(&split.val), init, &config.lstm_config())?;
            persist::save(&trained, &args.model)?;
            let test_auc = split_auc(&trained, &data, &split.test)?;
            print_json(&json!({
                "model": args.model,
                "examples": data.seqs.len(),
                "positives": data.labels.iter().filter(|&&y| y).count(),
                "train": split.train.len(),
                "val": split.val.len(),
                "test": split.test.len(),
                "best_epoch": trained.best_epoch,
                "log": trained.log,
                "test_auc": test_auc,
            }))
        }
        PredictAction::Eval { args, test_split } => {
            let trained: TrainedLstm = persist::load(&args.model)?;
            let data = dataset(config, &args, false)?;
            check_width(&trained.params, &data)?;
            let idx: Vec<usize> = if test_split {
                split_indices(data.seqs.len(), config.seed).test
            } else {
                (0..data.seqs.len()).collect()
            };
            let value = split_auc(&trained, &data, &idx)?;
            print_json(&json!({ "examples": idx.len(), "auc": value }))
        }
        PredictAction::Score(args) => {
            let trained: TrainedLstm = persist::load(&args.model)?;
            let data = dataset(config, &args, false)?;
            check_width(&trained.params, &data)?;
            let mut rows = Vec::with_capacity(data.seqs.len());
            for (link, seq) in data.links.iter().zip(&data.seqs) {
                let p = lstm::predict_prob(seq, &trained.params)?;
                rows.push(json!({ "crosslink": link.id(), "p_mobilization": p }));
            }
            print_jsonl(rows)
        }
    }
}

/// AUC over `idx`, or `None` when those examples have a single class.
fn split_auc(trained: &TrainedLstm, data: &Dataset, idx: &[usize]) -> Result<Option<f64>> {
    let scores = idx
        .iter()
        .map(|&i| lstm::predict_prob(&data.seqs[i], &trained.params))
        .collect::<Result<Vec<_>, _>>()?;
    let labels: Vec<bool> = idx.iter().map(|&i| data.labels[i]).collect();
    match auc(&scores, &labels) {
        Ok(a) => Ok(Some(a)),
        Err(intercom_core::Error::SingleClass) => {
            warn!("evaluation examples have a single class; AUC undefined");
            Ok(None)
        }
        Err(e) => Err(e.into()),
    }
}

fn synth(args: &SynthArgs) -> Result<()> {
    let spec = SynthSpec {
        n_communities: args.communities,
        users_per_community: args.users,
        n_crosslinks: args.crosslinks,
        burst_ratio: args.burst,
        quiet_ratio: args.quiet,
        matched_ratio: args.matched_ratio,
        days_after: args.days_after,
        seed: args.seed,
        ..SynthSpec::default()
    };
    let (events, manifest_path) = generate_corpus(&spec, &args.out)?;
    let manifest: intercom_core::synth::Manifest = serde_json::from_str(
        &fs::read_to_string(&manifest_path).with_context(|| format!("reading {}", manifest_path.display()))?,
    )?;
    let labels_path = args.out.join("labels.jsonl");
    let mut text = String::new();
    for (crosslink, label) in sentiment_labels(&manifest) {
        text.push_str(&serde_json::to_string(&SentimentLabel { crosslink, label })?);
        text.push('\n');
    }
    fs::write(&labels_path, text).with_context(|| format!("writing {}", labels_path.display()))?;
    let mobilizations = manifest.mobilizations().count();
    let negative = manifest
        .mobilizations()
        .filter(|l| l.sentiment == Sentiment::Negative)
        .count();
    print_json(&json!({
        "events": events,
        "manifest": manifest_path,
        "labels": labels_path,
        "crosslinks": manifest.links.len(),
        "mobilizations": mobilizations,
        "negative_mobilizations": negative,
    }))
}

fn report(mut config: Config, out: Option<std::path::PathBuf>, schema: bool, validate: Option<&Path>) -> Result<()> {
    if schema {
        return print_json(&schema_json());
    }
    if let Some(dir) = validate {
        let m = validate_bundle(dir)?;
        return print_json(&json!({
            "valid": true,
            "complete": m.complete,
            "failed_stage": m.failed_stage,
            "files": m.files.len(),
        }));
    }
    if let Some(out) = out {
        config.output = out;
    }
    if config.corpus.is_none() {
        return Err(Usage("no corpus given; pass --corpus or set the corpus key".into()).into());
    }
    let run = run_pipeline(&config)?;
    let stages: Vec<_> = run
        .stages
        .iter()
        .map(|s| json!({ "stage": s.name, "cached": s.cache_hit }))
        .collect();
    print_json(&json!({
        "output": run.output,
        "files": run.manifest.files.len(),
        "stages": stages,
    }))
}
