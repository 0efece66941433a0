mod config;

use std::fmt::Write as _;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hyqr_core::eval::{self, CardinalityMode, EvalOptions};
use hyqr_core::executor::{execute, ExecutionMode, ExecutionTrace};
use hyqr_core::kg::{KnowledgeGraph, Split, SplitMask};
use hyqr_core::projection::{PreparedEdges, ProjectionModel};
use hyqr_core::query::{parse_query, read_samples, sample_queries, serialize_query, write_samples, QueryStructure};
use hyqr_core::train::{self, LossRecord};
use hyqr_core::{Error, Result};

use config::Settings;

#[derive(Parser)]
#[command(name = "hyqr", version, about = "Fuzzy-set query answering with a hyperbolic relation projection")]
struct Cli {
    /// JSON file with default settings; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Worker threads for evaluation. Results do not depend on this value.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Index train/valid/test triple files into a graph directory.
    Ingest {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        valid: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sample labelled queries as JSON lines.
    GenQueries {
        #[arg(long)]
        graph: PathBuf,
        /// Comma-separated structure tags, e.g. `1p,2i,2in`. Defaults to all.
        #[arg(long, value_delimiter = ',')]
        structures: Vec<QueryStructure>,
        /// Samples per structure.
        #[arg(long, short)]
        n: usize,
        #[arg(long)]
        split: Option<Split>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model; writes per-epoch checkpoints, `model.hyqr` and `loss.csv`.
    Train {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        hyper: HyperArgs,
    },
    /// Rank hard answers; prints metrics JSON.
    Eval {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Writes `metrics.json`, `ranks.tsv` and `config.json` here.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        eval: EvalArgs,
    },
    /// Answer one s-expression query; prints `entity<TAB>probability`.
    Answer {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        query: String,
        #[arg(long, default_value_t = 10)]
        top_k: usize,
        /// Writes every intermediate fuzzy set as JSON.
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long)]
        split: Option<Split>,
    },
    /// Spearman correlation of predicted and true answer counts per structure.
    Cardinality {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        eval: EvalArgs,
    },
}

#[derive(Args)]
struct HyperArgs {
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_steps: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    /// Cut-offs for HITS@K, comma-separated.
    #[arg(long, value_delimiter = ',')]
    ks: Option<Vec<usize>>,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long, value_parser = parse_mode)]
    cardinality: Option<CardinalityMode>,
    /// Split the queries were labelled for; the model sees that split's observed edges.
    #[arg(long)]
    split: Option<Split>,
}

fn parse_mode(s: &str) -> std::result::Result<CardinalityMode, String> {
    match s {
        "sum" => Ok(CardinalityMode::Sum),
        "count" => Ok(CardinalityMode::Count),
        _ => Err(format!("expected `sum` or `count`, got `{s}`")),
    }
}

impl EvalArgs {
    fn settings(&self) -> Settings {
        Settings {
            ks: self.ks.clone(),
            threshold: self.threshold,
            cardinality: self.cardinality,
            split: self.split,
            ..Settings::default()
        }
    }
}

fn require_exists(paths: &[&Path]) -> Result<()> {
    for p in paths {
        if !p.exists() {
            return Err(Error::Usage(format!("{} does not exist", p.display())));
        }
    }
    Ok(())
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn echo_config(dir: &Path, settings: &Settings) -> Result<()> {
    let mut json = serde_json::to_string_pretty(&settings.resolved())?;
    json.push('\n');
    write_file(&dir.join("config.json"), json)
}

fn eval_options(s: &Settings) -> EvalOptions {
    let r = s.resolved();
    EvalOptions {
        ks: r.ks.unwrap_or_default(),
        threshold: r.threshold.unwrap_or(0.5),
        cardinality: r.cardinality.unwrap_or_default(),
    }
}

fn run(cli: Cli) -> Result<()> {
    let base = match &cli.config {
        Some(p) => {
            require_exists(&[p])?;
            Settings::load(p)?
        }
        None => Settings::default(),
    };
    let base = base.overlay(Settings {
        threads: cli.threads,
        ..Settings::default()
    });
    let stdout = io::stdout();
    let mut out = stdout.lock();
    let io_err = |e: io::Error| Error::Io {
        path: PathBuf::from("<stdout>"),
        source: e,
    };

    match cli.command {
        Command::Ingest {
            train,
            valid,
            test,
            out: dir,
        } => {
            require_exists(&[&train, &valid, &test])?;
            let g = KnowledgeGraph::load_splits(&train, &valid, &test, None)?;
            g.write_dir(&dir)?;
            echo_config(&dir, &base)?;
            writeln!(
                out,
                "{} entities, {} relations, {} train / {} valid / {} test triples",
                g.num_entities(),
                g.num_relations(),
                g.triples(Split::Train).len(),
                g.triples(Split::Valid).len(),
                g.triples(Split::Test).len()
            )
            .map_err(io_err)?;
        }
        Command::GenQueries {
            graph,
            structures,
            n,
            split,
            seed,
            out: path,
        } => {
            require_exists(&[&graph])?;
            let s = base.overlay(Settings {
                seed,
                split,
                ..Settings::default()
            });
            let seed = s.require_seed()?;
            let g = KnowledgeGraph::load_dir(&graph)?;
            let structures = if structures.is_empty() {
                QueryStructure::ALL.to_vec()
            } else {
                structures
            };
            let mut samples = Vec::new();
            for st in structures {
                // Each structure draws from its own seed so that adding a
                // structure does not change the samples of the others.
                let st_seed = seed ^ (st as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
                samples.extend(sample_queries(&g, st, n, s.split(), st_seed)?);
            }
            write_samples(&path, &samples, g.names())?;
            writeln!(out, "wrote {} samples to {}", samples.len(), path.display()).map_err(io_err)?;
        }
        Command::Train {
            graph,
            queries,
            out: dir,
            hyper,
        } => {
            require_exists(&[&graph, &queries])?;
            let s = base.overlay(Settings {
                dim: hyper.dim,
                layers: hyper.layers,
                epochs: hyper.epochs,
                batch_size: hyper.batch_size,
                lr: hyper.lr,
                seed: hyper.seed,
                max_steps: hyper.max_steps,
                ..Settings::default()
            });
            let cfg = s.train()?;
            let g = KnowledgeGraph::load_dir(&graph)?;
            let samples = read_samples(&queries, g.names())?;
            let edges = g.adjacency_matrix(SplitMask::TRAIN);
            let mut model = ProjectionModel::new(s.model(), edges.num_relation_slots(), cfg.seed)?;
            let ck_dir = dir.join("checkpoints");
            create_dir(&ck_dir)?;
            echo_config(&dir, &s)?;
            let report = train::train(&mut model, &edges, &samples, &cfg, |epoch, m, loss| {
                m.save(
                    &ck_dir.join(format!("epoch_{epoch:03}.hyqr")),
                    serde_json::json!({"epoch": epoch, "mean_loss": loss}),
                )
            })?;
            model.save(&dir.join("model.hyqr"), serde_json::json!({"epoch": report.epoch_means.len()}))?;
            let mut csv = String::from("epoch,step,loss\n");
            for LossRecord { epoch, step, loss } in &report.losses {
                let _ = writeln!(csv, "{epoch},{step},{loss}");
            }
            write_file(&dir.join("loss.csv"), csv)?;
            writeln!(
                out,
                "trained {} steps; final epoch mean loss {}",
                report.losses.len(),
                report.epoch_means.last().copied().unwrap_or(f64::NAN)
            )
            .map_err(io_err)?;
        }
        Command::Eval {
            graph,
            queries,
            checkpoint,
            out: dir,
            eval: args,
        } => {
            require_exists(&[&graph, &queries, &checkpoint])?;
            let s = base.overlay(args.settings());
            let g = KnowledgeGraph::load_dir(&graph)?;
            let samples = read_samples(&queries, g.names())?;
            let model = ProjectionModel::load(&checkpoint)?;
            let edges = g.adjacency_matrix(s.split().observed_mask());
            let report = eval::evaluate_model(&model, &edges, &samples, &eval_options(&s), s.threads())?;
            let mut json = serde_json::to_string_pretty(&report)?;
            json.push('\n');
            if let Some(dir) = dir {
                create_dir(&dir)?;
                echo_config(&dir, &s)?;
                write_file(&dir.join("metrics.json"), &json)?;
                let mut tsv = String::from("query\tstructure\tanswer\trank\n");
                for r in &report.ranks {
                    let _ = writeln!(
                        tsv,
                        "{}\t{}\t{}\t{}",
                        r.query,
                        r.structure,
                        g.names().entity_name(r.answer),
                        r.rank
                    );
                }
                write_file(&dir.join("ranks.tsv"), tsv)?;
            }
            out.write_all(json.as_bytes()).map_err(io_err)?;
        }
        Command::Answer {
            graph,
            checkpoint,
            query,
            top_k,
            trace,
            split,
        } => {
            require_exists(&[&graph, &checkpoint])?;
            let s = base.overlay(Settings {
                split,
                ..Settings::default()
            });
            let g = KnowledgeGraph::load_dir(&graph)?;
            let q = parse_query(&query, g.names())?;
            let model = ProjectionModel::load(&checkpoint)?;
            let edges = PreparedEdges::new(&g.adjacency_matrix(s.split().observed_mask()))?;
            let ex = execute(&q, ExecutionMode::Neural { model: &model, edges: &edges })?;
            let hyqr_core::executor::Answer::Fuzzy(scores) = &ex.answer else {
                unreachable!("neural execution yields fuzzy answers")
            };
            let mut ranked: Vec<(usize, f64)> = scores.as_slice().iter().copied().enumerate().collect();
            ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            for (v, p) in ranked.into_iter().take(top_k) {
                writeln!(out, "{}\t{p}", g.names().entity_name(hyqr_core::kg::EntityId(v as u32))).map_err(io_err)?;
            }
            if let Some(path) = trace {
                let ExecutionTrace::Fuzzy(sets) = &ex.trace else {
                    unreachable!("neural execution yields fuzzy traces")
                };
                let nodes: Vec<serde_json::Value> = sets
                    .iter()
                    .enumerate()
                    .map(|(id, f)| serde_json::json!({"node": id, "memberships": f.as_slice()}))
                    .collect();
                let doc = serde_json::json!({
                    "query": serialize_query(&q, g.names()),
                    "root": q.root(),
                    "nodes": nodes,
                });
                write_file(&path, serde_json::to_string_pretty(&doc)? + "\n")?;
            }
        }
        Command::Cardinality {
            graph,
            queries,
            checkpoint,
            eval: args,
        } => {
            require_exists(&[&graph, &queries, &checkpoint])?;
            let s = base.overlay(args.settings());
            let g = KnowledgeGraph::load_dir(&graph)?;
            let samples = read_samples(&queries, g.names())?;
            let model = ProjectionModel::load(&checkpoint)?;
            let edges = g.adjacency_matrix(s.split().observed_mask());
            let report = eval::evaluate_model(&model, &edges, &samples, &eval_options(&s), s.threads())?;
            writeln!(out, "structure\tqueries\tspearman").map_err(io_err)?;
            for (st, r) in &report.per_structure {
                let rho = r
                    .cardinality_spearman
                    .map_or_else(|| "undefined".to_owned(), |v| format!("{v:.4}"));
                writeln!(out, "{st}\t{}\t{rho}", r.queries).map_err(io_err)?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_numeric() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
