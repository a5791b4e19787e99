use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::corpus::{aggregate_labels, filter_users, load_corpus, Corpus, Level};
use crate::error::{Error, Result};
use crate::eval::{cross_validate, make_folds, CellKey, EvalReport, FoldPlan};
use crate::hulm::{train_hulm, Hulm, HulmConfig};
use crate::repr::{export_embeddings, layer_policy_default, EmbeddingTable, PoolOptions, ReprSpec};
use crate::seed;
use crate::toylm::{build_tokenizer, train, ModelConfig, Tokenizer, ToyLm};

use super::config::{ExperimentConfig, ModelFamily, ModelSpec};
use super::extract::{build_table, run_forward, user_documents, TrainedModel};

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub status: String,
    pub config_hash: String,
    pub corpus_sha256: String,
    pub seed: u64,
    pub crate_version: String,
    pub checkpoint_format: String,
    pub started_at: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub finished_at: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub artifacts: Vec<String>,
    /// Final training loss per model.
    pub final_losses: BTreeMap<String, f64>,
}

impl Manifest {
    fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join("manifest.json");
        std::fs::write(
            &path,
            serde_json::to_string_pretty(self).expect("manifest serializes"),
        )
        .map_err(|e| Error::io(&path, e))
    }
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Column label of a spec in reports: the pooler, plus the layer when it
/// differs from the default policy.
pub fn pooler_label(spec: &ReprSpec, model: &ModelSpec) -> String {
    if spec.layer == layer_policy_default(spec.pooler, model.kind()) {
        spec.pooler.to_string()
    } else {
        spec.label()
    }
}

pub fn train_model(
    spec: &ModelSpec,
    corpus: &Corpus,
    tok: &Tokenizer,
    root: u64,
) -> Result<(TrainedModel, Vec<f64>)> {
    let init_seed = seed::substream(root, &format!("model:{}", spec.tag));
    let train_cfg = spec.train_config(seed::substream(root, &format!("train:{}", spec.tag)));
    let config: ModelConfig = spec.model_config(tok.vocab_size(), init_seed);
    match spec.family {
        ModelFamily::Autoregressive | ModelFamily::MaskedEncoder => {
            let mut m = ToyLm::new(config)?;
            let seqs: Vec<Vec<u32>> = corpus
                .documents()
                .iter()
                .map(|d| m.frame(&tok.encode(&d.text)).0)
                .collect();
            let trace = train(&mut m, &seqs, &train_cfg)?;
            Ok((TrainedModel::Toy(m), trace))
        }
        ModelFamily::Hulm => {
            let hcfg: HulmConfig = spec.hulm_config().expect("hulm spec");
            let mut h = Hulm::new(config, hcfg)?;
            let plans = corpus
                .user_ids()
                .map(|u| h.assemble(u, &user_documents(corpus, u, tok)))
                .collect::<Result<Vec<_>>>()?;
            let trace = train_hulm(&mut h, &plans, &train_cfg)?;
            Ok((TrainedModel::Hulm(h), trace))
        }
    }
}

pub struct RunOutput {
    pub report: EvalReport,
    pub output_dir: PathBuf,
    pub tables: Vec<EmbeddingTable>,
}

fn table_file(spec: &ReprSpec) -> String {
    format!(
        "{}_{}_{}_{}.jsonl",
        spec.model_tag,
        spec.pooler,
        spec.layer.as_str(),
        spec.level
    )
}

pub fn cmd_run(config_path: &Path) -> Result<RunOutput> {
    let cfg = ExperimentConfig::load(config_path)?;
    run_experiment(&cfg)
}

/// The full pipeline: artifacts go to `cfg.output_dir`; a failure leaves a
/// manifest with status `partial` naming the failed stage.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let specs = cfg.resolved_specs()?;
    let out = &cfg.output_dir;
    for sub in ["checkpoints", "embeddings"] {
        let p = out.join(sub);
        std::fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    let corpus_sha256 = file_sha256(&cfg.corpus_path).map_err(|e| Error::stage("load", None, e))?;
    let mut manifest = Manifest {
        status: "running".into(),
        config_hash: cfg.hash(),
        corpus_sha256,
        seed: cfg.seed,
        crate_version: env!("CARGO_PKG_VERSION").into(),
        checkpoint_format: crate::toylm::checkpoint::FORMAT.into(),
        started_at: now(),
        finished_at: None,
        error: None,
        artifacts: Vec::new(),
        final_losses: BTreeMap::new(),
    };
    manifest.write(out)?;
    match pipeline(cfg, &specs, &mut manifest) {
        Ok((report, tables)) => {
            manifest.status = "complete".into();
            manifest.finished_at = Some(now());
            manifest.write(out)?;
            Ok(RunOutput {
                report,
                output_dir: out.clone(),
                tables,
            })
        }
        Err(e) => {
            manifest.status = "partial".into();
            manifest.error = Some(e.to_string());
            manifest.finished_at = Some(now());
            manifest.write(out)?;
            Err(e)
        }
    }
}

fn write_artifact(manifest: &mut Manifest, dir: &Path, name: &str, body: &str) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
    manifest.artifacts.push(name.to_string());
    Ok(())
}

fn pipeline(
    cfg: &ExperimentConfig,
    specs: &[ReprSpec],
    manifest: &mut Manifest,
) -> Result<(EvalReport, Vec<EmbeddingTable>)> {
    let out = &cfg.output_dir;
    let stage = |name: &'static str| {
        move |e: Error| match e {
            e @ Error::Stage { .. } => e,
            e => Error::stage(name, None, e),
        }
    };

    let raw = load_corpus(&cfg.corpus_path, cfg.aggregation_scheme).map_err(stage("load"))?;
    let f = &cfg.filters;
    let corpus = filter_users(&raw, f.min_waves, f.min_docs, f.min_words);
    log::info!(
        "corpus: {} users, {} documents after filtering",
        corpus.n_users(),
        corpus.len()
    );
    for o in &cfg.outcomes {
        if !corpus.outcome_names().contains(o) {
            return Err(Error::stage(
                "load",
                None,
                Error::Config(format!("corpus has no outcome `{o}`")),
            ));
        }
    }

    let tok = build_tokenizer(&corpus, cfg.max_vocab).map_err(stage("tokenize"))?;
    tok.save(&out.join("tokenizer.json"))?;
    manifest.artifacts.push("tokenizer.json".into());

    let mut tables = Vec::new();
    let opts = PoolOptions::default();
    for m in &cfg.models {
        log::info!("training `{}`", m.tag);
        let (model, trace) = train_model(m, &corpus, &tok, cfg.seed)
            .map_err(|e| Error::stage("train", Some(m.tag.clone()), e))?;
        manifest
            .final_losses
            .insert(m.tag.clone(), *trace.last().expect("non-empty trace"));
        let ck = format!("checkpoints/{}.json", m.tag);
        model.save(&out.join(&ck))?;
        manifest.artifacts.push(ck);

        let ex = run_forward(&model, &corpus, &tok).map_err(stage("extract"))?;
        for spec in specs.iter().filter(|s| s.model_tag == m.tag) {
            let t = build_table(&ex, m.kind(), spec, &corpus, cfg.user_vectors, &opts)
                .map_err(|e| Error::stage("pool", Some(spec.label()), e))?;
            let name = format!("embeddings/{}", table_file(spec));
            export_embeddings(&t, &out.join(&name))?;
            manifest.artifacts.push(name);
            tables.push(t);
        }
    }

    let report = evaluate(cfg, &corpus, &tables).map_err(stage("evaluate"))?;
    write_artifact(manifest, out, "report.csv", &report.to_csv())?;
    write_artifact(manifest, out, "report.json", &report.to_json())?;
    write_artifact(manifest, out, "report.txt", &report.to_text())?;
    write_artifact(
        manifest,
        out,
        "significance.csv",
        &report.significance_csv(),
    )?;
    Ok((report, tables))
}

/// Cross-validates every table against every configured outcome.
pub fn evaluate(
    cfg: &ExperimentConfig,
    corpus: &Corpus,
    tables: &[EmbeddingTable],
) -> Result<EvalReport> {
    let mut plans: BTreeMap<&str, FoldPlan> = BTreeMap::new();
    for o in &cfg.outcomes {
        plans.insert(o, make_folds(corpus, cfg.cv.k, o, cfg.cv_seed())?);
    }
    let mut labels = BTreeMap::new();
    for level in Level::ALL {
        labels.insert(level, aggregate_labels(corpus, level)?);
    }
    let mut report = EvalReport::new(cfg.cv.k);
    for t in tables {
        let spec = t.spec.as_ref().expect("pipeline tables carry a spec");
        let model = cfg.model(&spec.model_tag).expect("validated tag");
        for o in &cfg.outcomes {
            let res = cross_validate(t, &labels[&spec.level], o, &plans[o.as_str()], &cfg.ridge)
                .map_err(|e| {
                    Error::stage(
                        "evaluate",
                        Some(format!("{}/{}", spec.model_tag, spec.label())),
                        e,
                    )
                })?;
            report.insert(
                CellKey {
                    model: spec.model_tag.clone(),
                    pooler: pooler_label(spec, model),
                    level: spec.level,
                    outcome: o.clone(),
                },
                res.fold_rs,
            );
        }
    }
    report.compute_significance();
    Ok(report)
}

/// Cross-validates an externally produced table against corpus labels.
pub fn evaluate_external(
    table: &EmbeddingTable,
    corpus: &Corpus,
    outcome: &str,
    k: usize,
    seed: u64,
    ridge: &crate::eval::RidgeConfig,
) -> Result<crate::eval::CvResult> {
    let level = table
        .level()
        .ok_or_else(|| Error::Data("embedding table is empty".into()))?;
    let labels = aggregate_labels(corpus, level)?;
    let plan = make_folds(corpus, k, outcome, seed)?;
    cross_validate(table, &labels, outcome, &plan, ridge)
}
