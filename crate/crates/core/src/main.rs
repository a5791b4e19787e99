use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use author_repr::corpus::{load_corpus, AggregationScheme, Level};
use author_repr::eval::{EvalReport, RidgeConfig};
use author_repr::experiment::extract::export_from_checkpoint;
use author_repr::experiment::run::evaluate_external;
use author_repr::experiment::{cmd_compare, cmd_run, cmd_synth, SynthConfig};
use author_repr::repr::{
    export_embeddings, import_embeddings, LayerChoice, Pooler, ReprSpec, UserVectorScheme,
};
use author_repr::{Error, Result};

#[derive(Parser)]
#[command(name = "author-repr", version)]
#[command(about = "Train toy language models and evaluate their author representations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic multi-wave corpus as JSONL
    Synth {
        #[arg(long, default_value_t = 60)]
        users: usize,
        #[arg(long, default_value_t = 8)]
        docs_per_user: usize,
        #[arg(long, default_value_t = 4)]
        waves: usize,
        #[arg(long, default_value_t = 0.8)]
        trait_strength: f64,
        #[arg(long)]
        seed: u64,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Run the experiment described by a TOML or JSON config
    Run { config: PathBuf },
    /// Paired t-test between two cells of a report
    Compare {
        /// report.json written by `run`
        #[arg(long)]
        report: PathBuf,
        /// Cell name, e.g. `ar/AT/user/valence`
        cell_a: String,
        cell_b: String,
    },
    /// Pool representations from a saved checkpoint into JSONL
    ExportEmbeddings {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        tokenizer: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        pooler: String,
        /// `L` or `SL`; defaults to the pooler's usual layer
        #[arg(long)]
        layer: Option<String>,
        #[arg(long, default_value = "document")]
        level: String,
        /// Model tag written into each line; defaults to the checkpoint file stem
        #[arg(long)]
        tag: Option<String>,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Evaluate externally produced embeddings against corpus labels
    ImportEmbeddings {
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        outcome: String,
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[arg(long)]
        seed: u64,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth {
            users,
            docs_per_user,
            waves,
            trait_strength,
            seed,
            out,
        } => {
            let cfg = SynthConfig {
                users,
                docs_per_user,
                waves,
                trait_strength,
                seed,
            };
            let n = cmd_synth(&cfg, &out)?;
            println!("wrote {n} documents to {}", out.display());
        }
        Command::Run { config } => {
            let out = cmd_run(&config)?;
            print!("{}", out.report.to_text());
            println!("artifacts in {}", out.output_dir.display());
        }
        Command::Compare {
            report,
            cell_a,
            cell_b,
        } => {
            let raw = std::fs::read_to_string(&report).map_err(|e| Error::io(&report, e))?;
            let report = EvalReport::from_json(&raw)?;
            let cmp = cmd_compare(
                &cell_a,
                report.cell_by_name(&cell_a)?,
                &cell_b,
                report.cell_by_name(&cell_b)?,
            )?;
            println!("{cmp}");
        }
        Command::ExportEmbeddings {
            checkpoint,
            tokenizer,
            corpus,
            pooler,
            layer,
            level,
            tag,
            out,
        } => {
            let pooler = Pooler::parse(&pooler)?;
            let layer = match layer {
                Some(l) => LayerChoice::parse(&l)?,
                None => author_repr::repr::layer_policy_default(
                    pooler,
                    author_repr::repr::ModelKind::Autoregressive,
                ),
            };
            let tag = tag.unwrap_or_else(|| {
                checkpoint
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_default()
            });
            let spec = ReprSpec {
                model_tag: tag,
                pooler,
                layer,
                level: Level::parse(&level)?,
            };
            let corpus = load_corpus(&corpus, AggregationScheme::default())?;
            let table = export_from_checkpoint(
                &checkpoint,
                &tokenizer,
                &corpus,
                &spec,
                UserVectorScheme::default(),
            )?;
            export_embeddings(&table, &out)?;
            println!(
                "wrote {} vectors of width {} to {}",
                table.len(),
                table.width(),
                out.display()
            );
        }
        Command::ImportEmbeddings {
            embeddings,
            corpus,
            outcome,
            k,
            seed,
        } => {
            let table = import_embeddings(&embeddings)?;
            let corpus = load_corpus(&corpus, AggregationScheme::default())?;
            let res =
                evaluate_external(&table, &corpus, &outcome, k, seed, &RidgeConfig::default())?;
            let fmt = |r: Option<f64>| r.map_or("NA".to_string(), |r| format!("{r:.4}"));
            println!(
                "mean r = {} over {}/{} folds",
                fmt(res.mean_r()),
                res.n_defined(),
                res.fold_rs.len()
            );
            for (i, r) in res.fold_rs.iter().enumerate() {
                println!("fold {i}: {}", fmt(*r));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
