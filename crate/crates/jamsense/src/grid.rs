//! Experiment grids over scenario, window, variant and vote-method axes.
//!
//! A grid is expanded into training units (every axis except the vote
//! method). Each unit simulates `runs_per_class` attack and no-attack runs,
//! splits them by run, trains one network (or loads it from the cache) and
//! evaluates it under every method. Units run on the rayon pool; rows are
//! collected in unit order and written once, so the CSV does not depend on
//! scheduling.

use std::path::{Path, PathBuf};

use jamsense_core::dataset::{apply_normalizer, balance, fit_normalizer, windowize, Label, Labeled, WindowSample};
use jamsense_core::metrics::ConfusionCounts;
use jamsense_core::nn::{ArchConfig, Variant};
use jamsense_core::scenario::{run_simulation_with, ChannelMode, FadingTables, ScenarioConfig, TimeSeriesRun};
use jamsense_core::rng::derive;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::error::{self, Error, Result};
use crate::pipeline::{evaluate_windows, fit_baseline, train_network, EvalMethod, EvalOptions, EvalReport, TrainOptions};
use crate::sha256_hex;
use crate::store::{assign_splits, Dataset, Split, SplitSpec};

/// Axis values; an empty axis takes the value from `base`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Axes {
    pub channel_mode: Vec<ChannelMode>,
    pub distance_m: Vec<f64>,
    pub attacker_power_dbm: Vec<f64>,
    pub n_attackers: Vec<usize>,
    pub n_users: Vec<usize>,
    pub w: Vec<usize>,
    pub variant: Vec<Variant>,
    pub method: Vec<EvalMethod>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Protocol {
    /// One model per cell, evaluated on held-out runs of the same cell.
    #[default]
    Standard,
    /// Attack runs cover every power on the power axis. One model trains on
    /// all of them, another without `powers`; both are scored on test runs
    /// at each held-out power.
    HeldOutPower { powers: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub base: ScenarioConfig,
    pub axes: Axes,
    pub runs_per_class: usize,
    /// `w` is taken from the window axis.
    pub split: SplitSpec,
    /// The variant is taken from its axis.
    pub train: TrainOptions,
    /// The method is taken from its axis.
    pub eval: EvalOptions,
    pub protocol: Protocol,
    pub seed: u64,
    /// Trained checkpoints are stored here, keyed by a hash of the cell.
    pub cache_dir: Option<PathBuf>,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            base: ScenarioConfig::default(),
            axes: Axes::default(),
            runs_per_class: 20,
            split: SplitSpec::default(),
            train: TrainOptions::default(),
            eval: EvalOptions::default(),
            protocol: Protocol::Standard,
            seed: 0,
            cache_dir: None,
        }
    }
}

/// Everything that determines one trained network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Unit {
    pub channel_mode: ChannelMode,
    pub distance_m: f64,
    /// Ignored by the held-out protocol, which sweeps the power axis.
    pub attacker_power_dbm: f64,
    pub n_attackers: usize,
    pub n_users: usize,
    pub w: usize,
    pub variant: Variant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub channel_mode: ChannelMode,
    pub distance_m: f64,
    pub attacker_power_dbm: f64,
    pub n_attackers: usize,
    pub n_users: usize,
    pub w: usize,
    pub variant: Variant,
    pub method: EvalMethod,
    pub held_out: bool,
    pub seed: u64,
    pub result: std::result::Result<CellMetrics, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellMetrics {
    pub accuracy: f64,
    pub plain_accuracy: f64,
    pub fallback_rate: f64,
    pub confusion: ConfusionCounts,
}

impl From<&EvalReport> for CellMetrics {
    fn from(r: &EvalReport) -> Self {
        Self {
            accuracy: r.accuracy,
            plain_accuracy: r.plain_accuracy,
            fallback_rate: r.fallback_rate,
            confusion: r.confusion,
        }
    }
}

/// Vote outcome against plain prediction for one row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoteBenefit {
    pub row: usize,
    pub method: EvalMethod,
    pub accuracy: f64,
    pub plain_accuracy: f64,
    pub fallback_rate: f64,
    /// Voting did not cost more than half an accuracy point.
    pub within_tolerance: bool,
    pub improved: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeldOutGap {
    pub attacker_power_dbm: f64,
    pub method: EvalMethod,
    pub full_accuracy: f64,
    pub held_out_accuracy: f64,
    /// `full_accuracy − held_out_accuracy`.
    pub gap: f64,
}

/// Summary written next to the CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub spec: GridSpec,
    pub rows: usize,
    pub failed_rows: usize,
    /// Unweighted mean over successful rows.
    pub mean_accuracy: Option<f64>,
    pub vote_benefit: Vec<VoteBenefit>,
    /// Rows where voting lost more than half a point against plain prediction.
    pub vote_regressions: Vec<usize>,
    pub held_out_gaps: Vec<HeldOutGap>,
}

#[derive(Debug, Clone)]
pub struct GridOutcome {
    pub rows: Vec<GridRow>,
    pub manifest: RunManifest,
    /// Units whose network came from the cache.
    pub cache_hits: usize,
}

fn axis<T: Clone>(values: &[T], base: T) -> Vec<T> {
    if values.is_empty() {
        vec![base]
    } else {
        values.to_vec()
    }
}

impl GridSpec {
    fn methods(&self) -> Vec<EvalMethod> {
        axis(&self.axes.method, self.eval.method)
    }

    fn powers(&self) -> Vec<f64> {
        axis(&self.axes.attacker_power_dbm, self.base.attacker_power_dbm)
    }

    pub fn units(&self) -> Vec<Unit> {
        let b = &self.base;
        let powers = match self.protocol {
            Protocol::Standard => self.powers(),
            Protocol::HeldOutPower { .. } => vec![f64::NAN],
        };
        let mut out = Vec::new();
        for channel_mode in axis(&self.axes.channel_mode, b.channel_mode) {
            for distance_m in axis(&self.axes.distance_m, b.cell_uav_distance_m) {
                for &attacker_power_dbm in &powers {
                    for n_attackers in axis(&self.axes.n_attackers, b.n_attackers) {
                        for n_users in axis(&self.axes.n_users, b.n_users) {
                            for w in axis(&self.axes.w, self.split.w) {
                                for variant in axis(&self.axes.variant, self.train.variant) {
                                    out.push(Unit {
                                        channel_mode,
                                        distance_m,
                                        attacker_power_dbm,
                                        n_attackers,
                                        n_users,
                                        w,
                                        variant,
                                    });
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.runs_per_class < 2 {
            return Err(Error::Config("runs_per_class must be at least 2".into()));
        }
        self.split.validate()?;
        self.train.train.validate()?;
        if let Protocol::HeldOutPower { powers } = &self.protocol {
            let all = self.powers();
            if powers.is_empty() || powers.iter().any(|p| !all.contains(p)) {
                return Err(Error::Config("held-out powers must be a non-empty subset of the power axis".into()));
            }
            if powers.len() == all.len() {
                return Err(Error::Config("holding out every power leaves nothing to train on".into()));
            }
        }
        Ok(())
    }
}

/// 64-bit stream label from a JSON-serializable value.
fn key64<T: Serialize>(v: &T) -> u64 {
    let h = sha256_hex(&serde_json::to_vec(v).expect("key serializes"));
    u64::from_str_radix(&h[..16], 16).expect("hex digest")
}

fn scenario(spec: &GridSpec, u: &Unit, attackers: usize, power: f64) -> ScenarioConfig {
    ScenarioConfig {
        channel_mode: u.channel_mode,
        cell_uav_distance_m: u.distance_m,
        attacker_power_dbm: power,
        n_attackers: attackers,
        n_users: u.n_users,
        ..spec.base.clone()
    }
}

/// Simulates `n` runs of `cfg` with seeds derived from the grid seed and the
/// scenario itself, so a scenario's runs do not depend on the rest of the grid.
fn simulate_class(spec: &GridSpec, cfg: &ScenarioConfig, n: usize, tables: &FadingTables) -> Result<Vec<(String, TimeSeriesRun)>> {
    let k = key64(cfg);
    (0..n)
        .into_par_iter()
        .map(|r| {
            let seed = derive(spec.seed, &[k, r as u64]);
            let run = run_simulation_with(&ScenarioConfig { seed, ..cfg.clone() }, tables)?;
            Ok((format!("{k:016x}_{r:04}.csv"), run))
        })
        .collect()
}

#[derive(Serialize)]
struct CacheKey<'a> {
    unit: &'a Unit,
    tag: &'a str,
    arch: ArchConfig,
    train: &'a TrainOptions,
    dataset: String,
}

fn train_cached(spec: &GridSpec, u: &Unit, tag: &str, ds: &Dataset, hits: &mut usize) -> Result<Checkpoint> {
    let mut opts = spec.train.clone();
    opts.variant = u.variant;
    opts.train.seed = derive(spec.seed, &[key64(u), key64(&tag)]);
    let mut arch = ArchConfig::reference(u.variant, u.w);
    arch.dropout = opts.dropout;
    let key = sha256_hex(
        &serde_json::to_vec(&CacheKey {
            unit: u,
            tag,
            arch,
            train: &opts,
            dataset: sha256_hex(&serde_json::to_vec(&ds.manifest).expect("manifest serializes")),
        })
        .expect("key serializes"),
    );
    let path = spec.cache_dir.as_ref().map(|d| d.join(format!("{key}.ckpt")));
    if let Some(p) = path.as_ref().filter(|p| p.exists()) {
        *hits += 1;
        return Checkpoint::load(p);
    }
    let (ck, _) = train_network(ds, &opts, |_, _| {})?;
    if let Some(p) = path {
        error::create_dir(p.parent().expect("cache file has a parent"))?;
        ck.save(&p)?;
    }
    Ok(ck)
}

fn eval_rows(
    spec: &GridSpec,
    u: &Unit,
    power: f64,
    held_out: bool,
    ck: &Checkpoint,
    train_raw: &[WindowSample],
    test_raw: &[WindowSample],
) -> Vec<GridRow> {
    let test = apply_normalizer(&ck.norm_stats, test_raw.to_vec());
    spec.methods()
        .into_iter()
        .map(|method| {
            let opts = EvalOptions {
                method,
                ..spec.eval.clone()
            };
            let result = evaluate_windows(&ck.model, &test, &opts, || {
                fit_baseline(opts.fallback, &apply_normalizer(&ck.norm_stats, train_raw.to_vec()))
            })
            .map(|r| CellMetrics::from(&r))
            .map_err(|e| e.to_string());
            row(spec, u, power, method, held_out, result)
        })
        .collect()
}

fn row(
    spec: &GridSpec,
    u: &Unit,
    power: f64,
    method: EvalMethod,
    held_out: bool,
    result: std::result::Result<CellMetrics, String>,
) -> GridRow {
    GridRow {
        channel_mode: u.channel_mode,
        distance_m: u.distance_m,
        attacker_power_dbm: power,
        n_attackers: u.n_attackers,
        n_users: u.n_users,
        w: u.w,
        variant: u.variant,
        method,
        held_out,
        seed: spec.seed,
        result,
    }
}

fn standard_unit(spec: &GridSpec, u: &Unit, tables: &FadingTables, hits: &mut usize) -> Result<Vec<GridRow>> {
    if u.n_attackers == 0 {
        return Err(Error::Config("an attack class needs n_attackers > 0".into()));
    }
    let mut runs = simulate_class(spec, &scenario(spec, u, 0, u.attacker_power_dbm), spec.runs_per_class, tables)?;
    runs.extend(simulate_class(
        spec,
        &scenario(spec, u, u.n_attackers, u.attacker_power_dbm),
        spec.runs_per_class,
        tables,
    )?);
    let split = SplitSpec {
        w: u.w,
        seed: derive(spec.seed, &[key64(u)]),
        ..spec.split.clone()
    };
    let ds = Dataset::from_runs(&runs, &split)?;
    let ck = train_cached(spec, u, "standard", &ds, hits)?;
    Ok(eval_rows(spec, u, u.attacker_power_dbm, false, &ck, &ds.train_raw, &ds.test_raw))
}

struct PowerRun {
    run: TimeSeriesRun,
    power: Option<f64>,
}

impl Labeled for PowerRun {
    fn label(&self) -> Label {
        self.run.label()
    }
}

fn held_out_unit(spec: &GridSpec, u: &Unit, held: &[f64], tables: &FadingTables, hits: &mut usize) -> Result<(Vec<GridRow>, Vec<HeldOutGap>)> {
    if u.n_attackers == 0 {
        return Err(Error::Config("an attack class needs n_attackers > 0".into()));
    }
    let powers = spec.powers();
    let mut named = simulate_class(spec, &scenario(spec, u, 0, spec.base.attacker_power_dbm), spec.runs_per_class * powers.len(), tables)?;
    let mut power_of = vec![None; named.len()];
    for &p in &powers {
        let runs = simulate_class(spec, &scenario(spec, u, u.n_attackers, p), spec.runs_per_class, tables)?;
        power_of.extend(std::iter::repeat_n(Some(p), runs.len()));
        named.extend(runs);
    }
    let runs: Vec<TimeSeriesRun> = named.iter().map(|(_, r)| r.clone()).collect();
    let split = SplitSpec {
        w: u.w,
        seed: derive(spec.seed, &[key64(u)]),
        balance: false,
        ..spec.split.clone()
    };
    let splits = assign_splits(&runs, &split)?;
    let stride = split.effective_stride();

    let train_full: Vec<PowerRun> = runs
        .iter()
        .zip(&power_of)
        .zip(&splits)
        .filter(|(_, s)| **s == Split::Train)
        .map(|((r, p), _)| PowerRun { run: r.clone(), power: *p })
        .collect();
    // Without the held-out powers the benign class is larger; undersample it.
    let train_held = balance(
        train_full
            .iter()
            .filter(|r| r.power.is_none_or(|p| !held.contains(&p)))
            .map(|r| PowerRun { run: r.run.clone(), power: r.power })
            .collect(),
        split.seed,
    )?;
    let train_full = balance(train_full, split.seed)?;

    let windows = |set: &[PowerRun]| -> Vec<WindowSample> { set.iter().flat_map(|r| windowize(&r.run, u.w, stride)).collect() };
    let make_ds = |train_raw: Vec<WindowSample>, test_raw: Vec<WindowSample>| -> Result<Dataset> {
        let norm_stats = fit_normalizer(&train_raw)?;
        Ok(Dataset {
            manifest: crate::store::DatasetManifest {
                format: crate::store::FORMAT.into(),
                version: crate::store::VERSION,
                w: u.w,
                stride,
                test_fraction: split.test_fraction,
                seed: split.seed,
                balanced: true,
                norm_stats,
                train_windows: train_raw.len(),
                test_windows: test_raw.len(),
                runs: Vec::new(),
            },
            train_raw,
            test_raw,
        })
    };
    let mut rows = Vec::new();
    let mut gaps = Vec::new();
    let benign_test: Vec<WindowSample> = runs
        .iter()
        .zip(&power_of)
        .zip(&splits)
        .filter(|((_, p), s)| p.is_none() && **s == Split::Test)
        .flat_map(|((r, _), _)| windowize(r, u.w, stride))
        .collect();
    let test_at = |power: f64| -> Vec<WindowSample> {
        let mut t: Vec<WindowSample> = runs
            .iter()
            .zip(&power_of)
            .zip(&splits)
            .filter(|((_, p), s)| **p == Some(power) && **s == Split::Test)
            .flat_map(|((r, _), _)| windowize(r, u.w, stride))
            .collect();
        t.extend(benign_test.iter().cloned());
        t
    };
    let full_ds = make_ds(windows(&train_full), Vec::new())?;
    let held_ds = make_ds(windows(&train_held), Vec::new())?;
    let full = train_cached(spec, u, "held_out_full", &full_ds, hits)?;
    let partial = train_cached(spec, u, "held_out_partial", &held_ds, hits)?;
    for &p in held {
        let test = test_at(p);
        let full_rows = eval_rows(spec, u, p, false, &full, &full_ds.train_raw, &test);
        let held_rows = eval_rows(spec, u, p, true, &partial, &held_ds.train_raw, &test);
        for (f, h) in full_rows.iter().zip(&held_rows) {
            if let (Ok(fm), Ok(hm)) = (&f.result, &h.result) {
                gaps.push(HeldOutGap {
                    attacker_power_dbm: p,
                    method: f.method,
                    full_accuracy: fm.accuracy,
                    held_out_accuracy: hm.accuracy,
                    gap: fm.accuracy - hm.accuracy,
                });
            }
        }
        rows.extend(held_rows);
        rows.extend(full_rows);
    }
    Ok((rows, gaps))
}

/// Runs every unit of the grid. Unit failures become error rows.
pub fn run_grid(spec: &GridSpec, tables: &FadingTables) -> Result<GridOutcome> {
    spec.validate()?;
    let units = spec.units();
    let results: Vec<(Vec<GridRow>, Vec<HeldOutGap>, usize)> = units
        .par_iter()
        .map(|u| {
            let mut hits = 0;
            let outcome = match &spec.protocol {
                Protocol::Standard => standard_unit(spec, u, tables, &mut hits).map(|r| (r, Vec::new())),
                Protocol::HeldOutPower { powers } => held_out_unit(spec, u, powers, tables, &mut hits),
            };
            match outcome {
                Ok((rows, gaps)) => (rows, gaps, hits),
                Err(e) => {
                    let msg = e.to_string();
                    let powers = match &spec.protocol {
                        Protocol::Standard => vec![u.attacker_power_dbm],
                        Protocol::HeldOutPower { powers } => powers.clone(),
                    };
                    let rows = powers
                        .iter()
                        .flat_map(|&p| spec.methods().into_iter().map(move |m| (p, m)))
                        .map(|(p, m)| row(spec, u, p, m, !matches!(spec.protocol, Protocol::Standard), Err(msg.clone())))
                        .collect();
                    (rows, Vec::new(), hits)
                }
            }
        })
        .collect();
    let mut rows = Vec::new();
    let mut gaps = Vec::new();
    let mut cache_hits = 0;
    for (r, g, h) in results {
        rows.extend(r);
        gaps.extend(g);
        cache_hits += h;
    }
    let manifest = summarize(spec, &rows, gaps);
    Ok(GridOutcome {
        rows,
        manifest,
        cache_hits,
    })
}

fn summarize(spec: &GridSpec, rows: &[GridRow], held_out_gaps: Vec<HeldOutGap>) -> RunManifest {
    let ok: Vec<(usize, &CellMetrics, &GridRow)> = rows
        .iter()
        .enumerate()
        .filter_map(|(i, r)| r.result.as_ref().ok().map(|m| (i, m, r)))
        .collect();
    let mean_accuracy = (!ok.is_empty()).then(|| ok.iter().map(|(_, m, _)| m.accuracy).sum::<f64>() / ok.len() as f64);
    let vote_benefit: Vec<VoteBenefit> = ok
        .iter()
        .filter(|(_, _, r)| r.method != EvalMethod::None)
        .map(|(i, m, r)| VoteBenefit {
            row: *i,
            method: r.method,
            accuracy: m.accuracy,
            plain_accuracy: m.plain_accuracy,
            fallback_rate: m.fallback_rate,
            within_tolerance: m.accuracy >= m.plain_accuracy - 0.005,
            improved: m.accuracy > m.plain_accuracy,
        })
        .collect();
    RunManifest {
        spec: spec.clone(),
        rows: rows.len(),
        failed_rows: rows.len() - ok.len(),
        mean_accuracy,
        vote_regressions: vote_benefit.iter().filter(|v| !v.within_tolerance).map(|v| v.row).collect(),
        vote_benefit,
        held_out_gaps,
    }
}

pub const CSV_HEADER: [&str; 20] = [
    "channel_mode",
    "distance_m",
    "attacker_power_dbm",
    "n_attackers",
    "n_users",
    "w",
    "variant",
    "method",
    "held_out",
    "accuracy",
    "plain_accuracy",
    "fallback_rate",
    "true_pos",
    "true_neg",
    "false_pos",
    "false_neg",
    "samples",
    "seed",
    "status",
    "error",
];

fn mode_name(m: ChannelMode) -> String {
    serde_json::to_value(m)
        .ok()
        .and_then(|v| v.as_str().map(String::from))
        .unwrap_or_default()
}

/// Renders rows as CSV with a header line.
pub fn to_csv(rows: &[GridRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER).expect("in-memory write");
    for r in rows {
        let mut rec = vec![
            mode_name(r.channel_mode),
            format!("{}", r.distance_m),
            format!("{}", r.attacker_power_dbm),
            r.n_attackers.to_string(),
            r.n_users.to_string(),
            r.w.to_string(),
            match r.variant {
                Variant::Attention => "attention".into(),
                Variant::Lstm => "lstm".into(),
            },
            r.method.name().into(),
            r.held_out.to_string(),
        ];
        match &r.result {
            Ok(m) => {
                let c = &m.confusion;
                rec.extend([
                    format!("{:.6}", m.accuracy),
                    format!("{:.6}", m.plain_accuracy),
                    format!("{:.6}", m.fallback_rate),
                    c.true_pos.to_string(),
                    c.true_neg.to_string(),
                    c.false_pos.to_string(),
                    c.false_neg.to_string(),
                    c.total().to_string(),
                    r.seed.to_string(),
                    "ok".into(),
                    String::new(),
                ]);
            }
            Err(e) => {
                rec.extend(std::iter::repeat_n(String::new(), 8));
                rec.extend([r.seed.to_string(), "error".into(), e.clone()]);
            }
        }
        w.write_record(&rec).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8 csv")
}

/// Manifest path for a results file: `results.csv` → `results.manifest.json`.
pub fn manifest_path(csv: &Path) -> PathBuf {
    csv.with_extension("manifest.json")
}

/// Writes the CSV and its manifest.
pub fn write_outcome(outcome: &GridOutcome, csv_path: &Path) -> Result<()> {
    if let Some(dir) = csv_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        error::create_dir(dir)?;
    }
    error::write(csv_path, to_csv(&outcome.rows))?;
    let json = serde_json::to_string_pretty(&outcome.manifest).expect("manifest serializes");
    error::write(&manifest_path(csv_path), json + "\n")
}

/// Convenience for tests and tools: a network trained on one unit in memory.
pub fn train_unit(spec: &GridSpec, u: &Unit, tables: &FadingTables) -> Result<(Checkpoint, Dataset)> {
    let mut runs = simulate_class(spec, &scenario(spec, u, 0, u.attacker_power_dbm), spec.runs_per_class, tables)?;
    runs.extend(simulate_class(
        spec,
        &scenario(spec, u, u.n_attackers, u.attacker_power_dbm),
        spec.runs_per_class,
        tables,
    )?);
    let split = SplitSpec {
        w: u.w,
        seed: derive(spec.seed, &[key64(u)]),
        ..spec.split.clone()
    };
    let ds = Dataset::from_runs(&runs, &split)?;
    let mut hits = 0;
    let ck = train_cached(spec, u, "standard", &ds, &mut hits)?;
    Ok((ck, ds))
}
