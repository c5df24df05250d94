use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use jamsense::bench::{bench_classifier, latency_table, render_table};
use jamsense::checkpoint::{Checkpoint, StoredModel};
use jamsense::error::{self, read_config, Error, Result};
use jamsense::fading_file::load_fading_table;
use jamsense::grid::{manifest_path, run_grid, write_outcome, GridSpec};
use jamsense::pipeline::{
    evaluate, fit_baseline, simulate, train_network, write_runs, EvalMethod, EvalOptions, FallbackKind, PlanFile,
    SimulationPlan, TrainOptions,
};
use jamsense::store::{load_runs, Dataset, SplitSpec};
use jamsense_core::nn::{describe, TrainConfig, Variant};
use jamsense_core::scenario::FadingTables;

#[derive(Parser)]
#[command(name = "jamsense", version, about = "UAV jamming detection workbench")]
struct Cli {
    /// Base seed for every random draw (default 0). For `grid` it replaces
    /// the seed in the grid file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Attention,
    Lstm,
}

#[derive(Clone, Copy, ValueEnum)]
enum BaselineArg {
    Gnb,
    Lr,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate runs from a scenario or plan file.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Fading table for LoS links (CSV).
        #[arg(long)]
        fading_los: Option<PathBuf>,
        /// Fading table for NLoS links (CSV).
        #[arg(long)]
        fading_nlos: Option<PathBuf>,
    },
    /// Split runs into a windowed, normalized dataset.
    Dataset {
        #[arg(long)]
        runs: PathBuf,
        #[arg(long, default_value_t = 300)]
        w: usize,
        /// Defaults to w/2.
        #[arg(long)]
        stride: Option<usize>,
        #[arg(long, default_value_t = 0.2)]
        test_fraction: f64,
        /// Keep every run instead of undersampling the majority class.
        #[arg(long)]
        no_balance: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a network (or a baseline) on a dataset.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_enum, default_value = "attention")]
        variant: VariantArg,
        /// Train a baseline classifier instead of the network.
        #[arg(long, value_enum)]
        baseline: Option<BaselineArg>,
        #[arg(long, default_value_t = 20)]
        epochs: usize,
        #[arg(long, default_value_t = 2.5e-2)]
        lr: f64,
        #[arg(long, default_value_t = 32)]
        batch_size: usize,
        #[arg(long, default_value_t = 0.4)]
        dropout: f64,
        /// Expand the training set with the four flip patterns.
        #[arg(long)]
        tsa: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on a dataset's test split.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// 1, 2 or none.
        #[arg(long, default_value = "1")]
        method: EvalMethod,
        /// Undecided half-width around 0.5 for method 2.
        #[arg(long, default_value_t = 0.0)]
        delta: f64,
        /// lr or gnb.
        #[arg(long, default_value = "lr")]
        fallback: FallbackKind,
        /// Directory for verdicts.jsonl and results.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Time single-window predictions.
    Bench {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Report every classifier at w = 50, 100, 200 and 300.
        #[arg(long)]
        table: bool,
        #[arg(long, default_value_t = 200)]
        samples: usize,
    },
    /// Run an experiment grid.
    Grid {
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn tables(los: Option<PathBuf>, nlos: Option<PathBuf>) -> Result<FadingTables> {
    let mut t = FadingTables::default();
    if let Some(p) = los {
        t.los = load_fading_table(&p)?;
    }
    if let Some(p) = nlos {
        t.nlos = load_fading_table(&p)?;
    }
    Ok(t)
}

fn run(cli: Cli) -> Result<()> {
    let seed = cli.seed.unwrap_or(0);
    match cli.cmd {
        Cmd::Simulate {
            config,
            out,
            fading_los,
            fading_nlos,
        } => {
            let plan: SimulationPlan = read_config::<PlanFile>(&config)?.into();
            let runs = simulate(&plan, seed, &tables(fading_los, fading_nlos)?)?;
            write_runs(&runs, &out)?;
            eprintln!("wrote {} runs to {}", runs.len(), out.display());
        }
        Cmd::Dataset {
            runs,
            w,
            stride,
            test_fraction,
            no_balance,
            out,
        } => {
            let spec = SplitSpec {
                w,
                stride: stride.unwrap_or(0),
                test_fraction,
                seed,
                balance: !no_balance,
            };
            let named = load_runs(&runs)?;
            if named.is_empty() {
                return Err(Error::Config(format!("no run files in {}", runs.display())));
            }
            let ds = Dataset::from_runs(&named, &spec)?;
            ds.save(&named, &out)?;
            eprintln!(
                "{} train / {} test windows (w = {}, stride = {})",
                ds.manifest.train_windows, ds.manifest.test_windows, ds.manifest.w, ds.manifest.stride
            );
        }
        Cmd::Train {
            dataset,
            variant,
            baseline,
            epochs,
            lr,
            batch_size,
            dropout,
            tsa,
            out,
        } => {
            let ds = Dataset::load(&dataset)?;
            let ck = match baseline {
                Some(b) => {
                    let kind = match b {
                        BaselineArg::Gnb => FallbackKind::Gnb,
                        BaselineArg::Lr => FallbackKind::Lr,
                    };
                    Checkpoint {
                        model: fit_baseline(kind, &ds.train())?,
                        w: ds.manifest.w,
                        seed,
                        norm_stats: ds.manifest.norm_stats,
                    }
                }
                None => {
                    let opts = TrainOptions {
                        variant: match variant {
                            VariantArg::Attention => Variant::Attention,
                            VariantArg::Lstm => Variant::Lstm,
                        },
                        train: TrainConfig {
                            lr,
                            batch_size,
                            epochs,
                            seed,
                        },
                        tsa,
                        dropout,
                    };
                    let (ck, _) = train_network(&ds, &opts, |e, loss| eprintln!("epoch {e:>3}  loss {loss:.5}"))?;
                    if let StoredModel::Mhdnn(m) = &ck.model {
                        eprintln!("{} trainable parameters in {} tensors", m.param_count(), describe(m).len());
                    }
                    ck
                }
            };
            ck.save(&out)?;
        }
        Cmd::Eval {
            model,
            dataset,
            method,
            delta,
            fallback,
            out,
        } => {
            let ck = Checkpoint::load(&model)?;
            let ds = Dataset::load(&dataset)?;
            let report = evaluate(
                &ck,
                &ds,
                &EvalOptions {
                    method,
                    delta,
                    fallback,
                },
            )?;
            if let Some(dir) = out {
                error::create_dir(&dir)?;
                error::write(&dir.join("verdicts.jsonl"), report.verdicts_jsonl())?;
                error::write(&dir.join("results.csv"), report.csv())?;
            }
            print!("{}", report.csv());
        }
        Cmd::Bench {
            model,
            dataset,
            table,
            samples,
        } => {
            let mut reports = Vec::new();
            if let (Some(model), Some(dataset)) = (&model, &dataset) {
                let ck = Checkpoint::load(model)?;
                let ds = Dataset::load(dataset)?;
                let windows = ds.test_with(&ck.norm_stats);
                let name = match &ck.model {
                    StoredModel::Mhdnn(m) => format!("MH-DNN {:?}", m.arch.variant).to_lowercase(),
                    StoredModel::Gnb(_) => "GNB".into(),
                    StoredModel::Logreg(_) => "LR".into(),
                };
                reports.extend(bench_classifier(&name, &ck.model, &windows[..windows.len().min(samples.max(100))])?);
            } else if model.is_some() || dataset.is_some() {
                return Err(Error::Config("--model and --dataset go together".into()));
            } else if !table {
                return Err(Error::Config("give --model and --dataset, or --table".into()));
            }
            if table {
                reports.extend(latency_table(samples, seed)?);
            }
            print!("{}", render_table(&reports));
        }
        Cmd::Grid { grid, out } => {
            let mut spec: GridSpec = read_config(&grid)?;
            if let Some(s) = cli.seed {
                spec.seed = s;
            }
            let outcome = run_grid(&spec, &FadingTables::default())?;
            write_outcome(&outcome, &out)?;
            eprintln!(
                "{} rows ({} failed, {} cached units) -> {} and {}",
                outcome.rows.len(),
                outcome.manifest.failed_rows,
                outcome.cache_hits,
                out.display(),
                manifest_path(&out).display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("jamsense: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
