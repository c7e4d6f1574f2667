use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use mmpoint::checkpoint::load_checkpoint;
use mmpoint::evalsuite::{ablate, export_embeddings, few_shot_eval, AblationAxis, EpisodeSpec, SplitFeatures};
use mmpoint::shapegen::{build_dataset, ingest_external, BuildSpec, Dataset};
use mmpoint::trainer::{pretrain, same_run, sidecar_paths};
use mmpoint::{Dataset32, RunConfig, SeedTree};

#[derive(Parser)]
#[command(name = "mmpoint", version, about = "Multi-view 2D/3D contrastive pretraining for point clouds")]
struct Cli {
    /// Root seed for every random stream the command uses.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the procedural dataset with rendered views.
    GenData(GenData),
    /// Convert an HDF5 point-cloud archive into a dataset directory.
    Ingest(Ingest),
    /// Pretrain encoders and heads, checkpointing every epoch.
    Pretrain(Pretrain),
    /// Evaluate frozen point features.
    #[command(subcommand)]
    Eval(Eval),
    /// Run one ablation axis: pretrain and probe per value.
    Ablate(Ablate),
    /// Write frozen embeddings with labels as CSV.
    Export(Export),
}

#[derive(Args)]
struct GenData {
    #[arg(long, default_value_t = 8)]
    classes: usize,
    #[arg(long, default_value_t = 100)]
    per_class: usize,
    #[arg(long, default_value_t = 1024)]
    points: usize,
    #[arg(long, default_value_t = 24)]
    views: usize,
    #[arg(long, default_value_t = 64)]
    res: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Ingest {
    #[arg(long)]
    hdf5: PathBuf,
    #[arg(long, default_value_t = 1024)]
    points: usize,
    #[arg(long, default_value_t = 64)]
    res: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Pretrain {
    #[arg(long)]
    config: PathBuf,
    /// Dataset directory; defaults to the config's `data`.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Continue from the checkpoint at `--out` if it exists.
    #[arg(long)]
    resume: bool,
}

#[derive(Subcommand)]
enum Eval {
    /// Linear SVM on train features, accuracy on test features.
    Probe {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        c_reg: f64,
    },
    /// N-way K-shot episodes over both splits.
    Fewshot {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 5)]
        n_way: usize,
        #[arg(long, default_value_t = 10)]
        k_shot: usize,
        #[arg(long, default_value_t = 20)]
        queries: usize,
        #[arg(long, default_value_t = 10)]
        runs: usize,
        #[arg(long, default_value_t = 1.0)]
        c_reg: f64,
    },
}

#[derive(Args)]
struct Ablate {
    /// views, multi_mlp or multi_level_aug
    #[arg(long)]
    axis: String,
    /// Comma-separated values (views axis only).
    #[arg(long, value_delimiter = ',')]
    values: Vec<usize>,
    #[arg(long)]
    config: PathBuf,
    /// Dataset directory; generated in memory with default sizes if absent.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Number of seeds per cell, counting up from `--seed`.
    #[arg(long, default_value_t = 1)]
    repeats: u64,
    /// Also write the table as CSV here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct Export {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn load_data(dir: &Path) -> Result<Dataset32> {
    Dataset::load(dir).with_context(|| format!("loading dataset {}", dir.display()))
}

fn run(cli: Cli) -> Result<()> {
    let seed = cli.seed;
    match cli.command {
        Command::GenData(a) => {
            if a.views != mmpoint::domain::NUM_RIG_VIEWS {
                bail!("the camera rig renders {} views; got --views {}", mmpoint::domain::NUM_RIG_VIEWS, a.views);
            }
            let spec = BuildSpec {
                classes: a.classes,
                per_class: a.per_class,
                n_points: a.points,
                resolution: a.res,
                ..BuildSpec::default()
            };
            let ds = build_dataset::<f32>(&spec, &SeedTree::new(seed.unwrap_or(0)), Some(&a.out))?;
            println!(
                "wrote {} train / {} test objects to {} (manifest {})",
                ds.train.len(),
                ds.test.len(),
                a.out.display(),
                ds.manifest_hash()?
            );
        }
        Command::Ingest(a) => {
            let mut ds = ingest_external::<f32>(&a.hdf5, a.points, a.res, &SeedTree::new(seed.unwrap_or(0)))?;
            ds.save(&a.out)?;
            println!(
                "ingested {} train / {} test clouds into {} (manifest {})",
                ds.train.len(),
                ds.test.len(),
                a.out.display(),
                ds.manifest_hash()?
            );
        }
        Command::Pretrain(a) => {
            let mut cfg = RunConfig::load(&a.config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let dir = a.data.or_else(|| cfg.data.clone()).context("no dataset: pass --data or set `data`")?;
            let ds = load_data(&dir)?;
            let resume = if a.resume && a.out.exists() {
                let s = load_checkpoint::<f32>(&a.out)?;
                if !same_run(&s.config, &cfg) {
                    bail!("{} was written with a different config", a.out.display());
                }
                eprintln!("resuming at step {}", s.step);
                Some(s)
            } else {
                None
            };
            let state = pretrain(&cfg, &ds, Some(&a.out), resume)?;
            let last = state.history.last().context("no steps were run")?;
            let (hist, run) = sidecar_paths(&a.out);
            println!(
                "trained {} steps; final overall loss {:.4}, mi bound {:.4}\ncheckpoint {}\nhistory {}\nrun manifest {}",
                state.step,
                last.overall,
                last.mi_bound,
                a.out.display(),
                hist.display(),
                run.display()
            );
        }
        Command::Eval(Eval::Probe { ckpt, data, c_reg }) => {
            let state = load_checkpoint::<f32>(&ckpt)?;
            let ds = load_data(&data)?;
            let feats = SplitFeatures::extract(&state.model, &ds, state.config.points_per_cloud)?;
            let report = feats.probe(c_reg)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Eval(Eval::Fewshot {
            ckpt,
            data,
            n_way,
            k_shot,
            queries,
            runs,
            c_reg,
        }) => {
            let state = load_checkpoint::<f32>(&ckpt)?;
            let ds = load_data(&data)?;
            let (x, y) = SplitFeatures::extract(&state.model, &ds, state.config.points_per_cloud)?.pooled();
            let spec = EpisodeSpec {
                n_way,
                k_shot,
                queries,
                runs,
            };
            let report = few_shot_eval(x.view(), &y, &spec, &SeedTree::new(seed.unwrap_or(0)), c_reg)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Ablate(a) => {
            let axis: AblationAxis = a.axis.parse()?;
            let cfg = RunConfig::load(&a.config)?;
            let first = seed.unwrap_or(cfg.seed);
            let seeds: Vec<u64> = (0..a.repeats.max(1)).map(|i| first + i).collect();
            let ds = match a.data.or_else(|| cfg.data.clone()) {
                Some(dir) => load_data(&dir)?,
                None => {
                    let spec = BuildSpec {
                        resolution: cfg.encoder.resolution,
                        ..BuildSpec::default()
                    };
                    eprintln!("generating the default dataset in memory");
                    build_dataset::<f32>(&spec, &SeedTree::new(first), None)?
                }
            };
            let table = ablate(axis, &a.values, &cfg, &ds, &seeds, &mut |label, s, acc| {
                eprintln!("{axis}={label} seed {s}: {acc:.2}%");
            })?;
            print!("{}", table.to_text());
            if let Some(out) = a.out {
                std::fs::write(&out, table.to_csv()).with_context(|| format!("writing {}", out.display()))?;
            }
        }
        Command::Export(a) => {
            let state = load_checkpoint::<f32>(&a.ckpt)?;
            let ds = load_data(&a.data)?;
            let rows = export_embeddings(&state.model, &ds, state.config.points_per_cloud, &a.out)?;
            println!("wrote {rows} rows to {}", a.out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
