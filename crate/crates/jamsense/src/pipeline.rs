//! The simulate → dataset → train → evaluate steps, usable from the CLI and
//! from the grid runner.

use std::fmt::Write as _;
use std::path::Path;

use jamsense_core::augment::augment_training_set;
use jamsense_core::baselines::{gnb_fit, logreg_fit, LogRegConfig};
use jamsense_core::classifier::Classifier;
use jamsense_core::dataset::{Label, Origin, WindowSample};
use jamsense_core::metrics::ConfusionCounts;
use jamsense_core::nn::{train_with, ArchConfig, Model, TrainConfig, TrainReport, Variant};
use jamsense_core::rng::derive;
use jamsense_core::scenario::{run_simulation_with, FadingTables, ScenarioConfig, TimeSeriesRun};
use jamsense_core::vote::{datr_classify, VoteClass, VoteMethod};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, StoredModel};
use crate::error::{self, Error, Result};
use crate::runfile;
use crate::store::Dataset;

const RUN_STREAM: u64 = 0x52554E;
const TSA_STREAM: u64 = 0x545341;

/// Scenarios to simulate, each repeated `runs_per_scenario` times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationPlan {
    pub scenarios: Vec<ScenarioConfig>,
    #[serde(default = "one")]
    pub runs_per_scenario: usize,
}

fn one() -> usize {
    1
}

/// A plan file may also hold a single scenario.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum PlanFile {
    Plan(SimulationPlan),
    Single(ScenarioConfig),
}

impl From<PlanFile> for SimulationPlan {
    fn from(f: PlanFile) -> Self {
        match f {
            PlanFile::Plan(p) => p,
            PlanFile::Single(c) => Self {
                scenarios: vec![c],
                runs_per_scenario: 1,
            },
        }
    }
}

/// Seed of repetition `rep` of scenario `idx`. Scenario `seed` fields are
/// overwritten so that the base seed alone controls every draw.
pub fn run_seed(seed: u64, idx: usize, rep: usize) -> u64 {
    derive(seed, &[RUN_STREAM, idx as u64, rep as u64])
}

/// Simulates every run of `plan` in parallel; results come back in plan order
/// with their file names.
pub fn simulate(plan: &SimulationPlan, seed: u64, tables: &FadingTables) -> Result<Vec<(String, TimeSeriesRun)>> {
    if plan.scenarios.is_empty() || plan.runs_per_scenario == 0 {
        return Err(Error::Config("plan has no runs".into()));
    }
    for c in &plan.scenarios {
        c.validate()?;
    }
    let jobs: Vec<(usize, usize)> = (0..plan.scenarios.len())
        .flat_map(|i| (0..plan.runs_per_scenario).map(move |r| (i, r)))
        .collect();
    jobs.par_iter()
        .map(|&(i, r)| {
            let cfg = ScenarioConfig {
                seed: run_seed(seed, i, r),
                ..plan.scenarios[i].clone()
            };
            let run = run_simulation_with(&cfg, tables)?;
            Ok((format!("s{i:03}_r{r:04}.csv"), run))
        })
        .collect()
}

pub fn write_runs(runs: &[(String, TimeSeriesRun)], dir: &Path) -> Result<()> {
    error::create_dir(dir)?;
    for (name, run) in runs {
        runfile::save_run(&dir.join(name), run)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainOptions {
    pub variant: Variant,
    pub train: TrainConfig,
    /// Expand the training set with the four flip patterns.
    pub tsa: bool,
    pub dropout: f64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            variant: Variant::Attention,
            train: TrainConfig::default(),
            tsa: false,
            dropout: 0.4,
        }
    }
}

/// Trains a fresh network on the dataset's training windows.
pub fn train_network(
    ds: &Dataset,
    opts: &TrainOptions,
    on_epoch: impl FnMut(usize, f64),
) -> Result<(Checkpoint, TrainReport)> {
    let mut arch = ArchConfig::reference(opts.variant, ds.manifest.w);
    arch.dropout = opts.dropout;
    let seed = opts.train.seed;
    let mut model = Model::new(arch, seed)?;
    let mut data = ds.train();
    if opts.tsa {
        data = augment_training_set(&data, derive(seed, &[TSA_STREAM]));
    }
    let report = train_with(&mut model, &data, &opts.train, on_epoch)?;
    Ok((
        Checkpoint {
            model: StoredModel::Mhdnn(model),
            w: ds.manifest.w,
            seed,
            norm_stats: ds.manifest.norm_stats,
        },
        report,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FallbackKind {
    Lr,
    Gnb,
}

impl std::str::FromStr for FallbackKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "lr" => Ok(Self::Lr),
            "gnb" => Ok(Self::Gnb),
            _ => Err(format!("unknown fallback {s:?} (expected lr or gnb)")),
        }
    }
}

/// Fits a baseline on `train` (already normalized).
pub fn fit_baseline(kind: FallbackKind, train: &[WindowSample]) -> Result<StoredModel> {
    Ok(match kind {
        FallbackKind::Lr => StoredModel::Logreg(logreg_fit(train, &LogRegConfig::default())?),
        FallbackKind::Gnb => StoredModel::Gnb(gnb_fit(train)?),
    })
}

/// How windows are classified at evaluation time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum EvalMethod {
    /// Plain prediction on the unmodified window.
    #[serde(rename = "none")]
    None,
    #[serde(rename = "1", alias = "method1")]
    Method1,
    #[serde(rename = "2", alias = "method2")]
    Method2,
}

impl EvalMethod {
    pub fn vote(self, delta: f64) -> Option<VoteMethod> {
        match self {
            Self::None => None,
            Self::Method1 => Some(VoteMethod::Method1),
            Self::Method2 => Some(VoteMethod::Method2 { delta }),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::None => "none",
            Self::Method1 => "1",
            Self::Method2 => "2",
        }
    }
}

impl std::str::FromStr for EvalMethod {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "none" => Ok(Self::None),
            "1" => Ok(Self::Method1),
            "2" => Ok(Self::Method2),
            _ => Err(format!("unknown method {s:?} (expected 1, 2 or none)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalOptions {
    pub method: EvalMethod,
    /// Undecided half-width for method 2.
    pub delta: f64,
    pub fallback: FallbackKind,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            method: EvalMethod::Method1,
            delta: 0.0,
            fallback: FallbackKind::Lr,
        }
    }
}

/// One classified window. Vote fields are absent for plain prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictRecord {
    pub origin: Origin,
    pub method: String,
    /// Hard votes of the four views, 1 = attack.
    pub votes: Option<[u8; 4]>,
    pub probabilities: [f64; 4],
    pub mean_p: f64,
    pub class: Option<VoteClass>,
    pub fallback_invoked: bool,
    #[serde(rename = "final")]
    pub final_label: Label,
    pub truth: Label,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub fallback: FallbackKind,
    pub confusion: ConfusionCounts,
    pub accuracy: f64,
    /// Accuracy of plain prediction on the unmodified windows.
    pub plain_accuracy: f64,
    /// Fraction of windows the vote left undecided.
    pub fallback_rate: f64,
    pub records: Vec<VerdictRecord>,
}

/// Classifies every test window. The fallback is fitted on the training
/// split, normalized with the checkpoint's statistics.
pub fn evaluate(ck: &Checkpoint, ds: &Dataset, opts: &EvalOptions) -> Result<EvalReport> {
    if ck.w != ds.manifest.w {
        return Err(Error::Config(format!(
            "model expects windows of {}, dataset has {}",
            ck.w, ds.manifest.w
        )));
    }
    let test = ds.test_with(&ck.norm_stats);
    evaluate_windows(&ck.model, &test, opts, || fit_baseline(opts.fallback, &ds.train_with(&ck.norm_stats)))
}

/// [`evaluate`] on prepared windows; `fallback` is only called when a vote
/// method is selected.
pub fn evaluate_windows(
    model: &StoredModel,
    test: &[WindowSample],
    opts: &EvalOptions,
    fallback: impl FnOnce() -> Result<StoredModel>,
) -> Result<EvalReport> {
    if test.is_empty() {
        return Err(Error::Config("no test windows".into()));
    }
    let vote = opts.method.vote(opts.delta);
    let fb = match vote {
        Some(_) => Some(fallback()?),
        None => None,
    };
    let records: Vec<VerdictRecord> = test
        .par_iter()
        .map(|s| -> Result<VerdictRecord> {
            let record = match vote {
                Some(method) => {
                    let v = datr_classify(s, model, method, fb.as_ref().map(|f| f as &dyn Classifier))?;
                    VerdictRecord {
                        origin: s.origin,
                        method: opts.method.name().into(),
                        votes: Some(v.decision.votes().map(u8::from)),
                        probabilities: v.decision.probabilities,
                        mean_p: v.decision.mean_probability(),
                        class: Some(v.decision.class),
                        fallback_invoked: v.decision.fallback_invoked,
                        final_label: v.label,
                        truth: s.label,
                    }
                }
                None => {
                    let p = model.attack_probability(s)?;
                    VerdictRecord {
                        origin: s.origin,
                        method: opts.method.name().into(),
                        votes: None,
                        probabilities: [p; 4],
                        mean_p: p,
                        class: None,
                        fallback_invoked: false,
                        final_label: Label::from_attack(p >= 0.5),
                        truth: s.label,
                    }
                }
            };
            Ok(record)
        })
        .collect::<Result<_>>()?;
    let mut confusion = ConfusionCounts::default();
    let mut plain = 0usize;
    let mut undecided = 0usize;
    for r in &records {
        confusion.record(r.final_label, r.truth);
        // View 0 is the unmodified window.
        plain += usize::from(Label::from_attack(r.probabilities[0] >= 0.5) == r.truth);
        undecided += usize::from(r.fallback_invoked);
    }
    let n = records.len() as f64;
    Ok(EvalReport {
        method: opts.method.name().into(),
        fallback: opts.fallback,
        accuracy: confusion.accuracy(),
        confusion,
        plain_accuracy: plain as f64 / n,
        fallback_rate: undecided as f64 / n,
        records,
    })
}

impl EvalReport {
    /// One JSON verdict per line.
    pub fn verdicts_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("verdict serializes"));
            out.push('\n');
        }
        out
    }

    pub const CSV_HEADER: &'static str =
        "method,fallback,samples,accuracy,plain_accuracy,fallback_rate,true_pos,true_neg,false_pos,false_neg";

    pub fn csv(&self) -> String {
        let c = &self.confusion;
        let mut out = String::from(Self::CSV_HEADER);
        let _ = writeln!(
            out,
            "\n{},{},{},{:.6},{:.6},{:.6},{},{},{},{}",
            self.method,
            match self.fallback {
                FallbackKind::Lr => "lr",
                FallbackKind::Gnb => "gnb",
            },
            c.total(),
            self.accuracy,
            self.plain_accuracy,
            self.fallback_rate,
            c.true_pos,
            c.true_neg,
            c.false_pos,
            c.false_neg
        );
        out
    }
}
