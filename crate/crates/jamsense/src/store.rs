//! Dataset directories: a `manifest.json` plus the run files it lists.
//!
//! Windows are not stored; they are cut from the runs on load with the
//! manifest's `w` and `stride`, which keeps the directory small and makes the
//! manifest the single source of truth for splits and normalization.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use jamsense_core::dataset::{
    apply_normalizer, balance, fit_normalizer, split_by_run, windowize, Label, Labeled, NormStats, WindowSample,
};
use jamsense_core::scenario::TimeSeriesRun;
use serde::{Deserialize, Serialize};

use crate::error::{self, Error, Result};
use crate::{runfile, sha256_hex};

pub const MANIFEST: &str = "manifest.json";
pub const RUNS_DIR: &str = "runs";
pub const FORMAT: &str = "jamsense-dataset";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
    /// Dropped by class balancing.
    Excluded,
}

/// How runs become windows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitSpec {
    pub w: usize,
    /// Defaults to `w / 2` when zero.
    pub stride: usize,
    pub test_fraction: f64,
    pub seed: u64,
    /// Undersample the majority class, whole runs at a time.
    pub balance: bool,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            w: 300,
            stride: 0,
            test_fraction: 0.2,
            seed: 0,
            balance: true,
        }
    }
}

impl SplitSpec {
    pub fn effective_stride(&self) -> usize {
        if self.stride == 0 {
            (self.w / 2).max(1)
        } else {
            self.stride
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.w == 0 {
            return Err(Error::Config("window size must be at least 1".into()));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::Config(format!("test fraction must lie in (0, 1), got {}", self.test_fraction)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEntry {
    /// Path relative to the dataset directory.
    pub file: String,
    pub seed: u64,
    pub label: bool,
    pub attacker_power_dbm: f64,
    pub split: Split,
    pub windows: usize,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: String,
    pub version: u32,
    pub w: usize,
    pub stride: usize,
    pub test_fraction: f64,
    pub seed: u64,
    pub balanced: bool,
    /// Fitted on the raw training windows.
    pub norm_stats: NormStats,
    pub train_windows: usize,
    pub test_windows: usize,
    pub runs: Vec<RunEntry>,
}

/// Runs split into raw (unnormalized) train and test windows.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub train_raw: Vec<WindowSample>,
    pub test_raw: Vec<WindowSample>,
}

struct Tagged(usize, Label);

impl Labeled for Tagged {
    fn label(&self) -> Label {
        self.1
    }
}

/// Assigns each run to a split: optional run-level balancing, then a
/// stratified split of the survivors.
pub fn assign_splits(runs: &[TimeSeriesRun], spec: &SplitSpec) -> Result<Vec<Split>> {
    spec.validate()?;
    let seeds: BTreeSet<u64> = runs.iter().map(|r| r.seed).collect();
    if seeds.len() != runs.len() {
        return Err(Error::Config("run seeds must be unique within a dataset".into()));
    }
    let tagged: Vec<Tagged> = runs
        .iter()
        .enumerate()
        .map(|(i, r)| Tagged(i, r.label()))
        .collect();
    let kept = if spec.balance {
        balance(tagged, spec.seed)?
    } else {
        tagged
    };
    let mut splits = vec![Split::Excluded; runs.len()];
    let (train, test) = split_by_run(kept, spec.test_fraction, spec.seed)?;
    for t in train {
        splits[t.0] = Split::Train;
    }
    for t in test {
        splits[t.0] = Split::Test;
    }
    Ok(splits)
}

impl Dataset {
    /// Splits named runs in memory. Names become the manifest's file entries.
    pub fn from_runs(runs: &[(String, TimeSeriesRun)], spec: &SplitSpec) -> Result<Self> {
        let plain: Vec<TimeSeriesRun> = runs.iter().map(|(_, r)| r.clone()).collect();
        let splits = assign_splits(&plain, spec)?;
        let stride = spec.effective_stride();
        let mut train_raw = Vec::new();
        let mut test_raw = Vec::new();
        let mut entries = Vec::with_capacity(runs.len());
        for ((name, run), split) in runs.iter().zip(&splits) {
            let windows = windowize(run, spec.w, stride);
            entries.push(RunEntry {
                file: format!("{RUNS_DIR}/{name}"),
                seed: run.seed,
                label: run.label,
                attacker_power_dbm: run.config.attacker_power_dbm,
                split: *split,
                windows: windows.len(),
                sha256: sha256_hex(runfile::to_string(run).as_bytes()),
            });
            match split {
                Split::Train => train_raw.extend(windows),
                Split::Test => test_raw.extend(windows),
                Split::Excluded => {}
            }
        }
        if train_raw.is_empty() || test_raw.is_empty() {
            return Err(Error::Config(format!(
                "window size {} leaves {} train and {} test windows",
                spec.w,
                train_raw.len(),
                test_raw.len()
            )));
        }
        let norm_stats = fit_normalizer(&train_raw)?;
        Ok(Self {
            manifest: DatasetManifest {
                format: FORMAT.into(),
                version: VERSION,
                w: spec.w,
                stride,
                test_fraction: spec.test_fraction,
                seed: spec.seed,
                balanced: spec.balance,
                norm_stats,
                train_windows: train_raw.len(),
                test_windows: test_raw.len(),
                runs: entries,
            },
            train_raw,
            test_raw,
        })
    }

    /// Training windows z-scored with the dataset's own statistics.
    pub fn train(&self) -> Vec<WindowSample> {
        apply_normalizer(&self.manifest.norm_stats, self.train_raw.clone())
    }

    /// Test windows z-scored with `stats` (normally a checkpoint's).
    pub fn test_with(&self, stats: &NormStats) -> Vec<WindowSample> {
        apply_normalizer(stats, self.test_raw.clone())
    }

    pub fn train_with(&self, stats: &NormStats) -> Vec<WindowSample> {
        apply_normalizer(stats, self.train_raw.clone())
    }

    /// Writes the manifest and the run files under `dir`.
    pub fn save(&self, runs: &[(String, TimeSeriesRun)], dir: &Path) -> Result<()> {
        error::create_dir(&dir.join(RUNS_DIR))?;
        for ((_, run), entry) in runs.iter().zip(&self.manifest.runs) {
            runfile::save_run(&dir.join(&entry.file), run)?;
        }
        let json = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        error::write(&dir.join(MANIFEST), json + "\n")
    }

    /// Reads a dataset directory, checking every run against its digest.
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest_path = dir.join(MANIFEST);
        let text = error::read_string(&manifest_path)?;
        let manifest: DatasetManifest = serde_json::from_str(&text)
            .map_err(|e| Error::parse(&manifest_path, e.line() as u64, e.to_string()))?;
        if manifest.format != FORMAT || manifest.version != VERSION {
            return Err(Error::corrupt(&manifest_path, "not a version 1 dataset manifest"));
        }
        let mut train_raw = Vec::new();
        let mut test_raw = Vec::new();
        for entry in &manifest.runs {
            let path = dir.join(&entry.file);
            let text = error::read_string(&path)?;
            if sha256_hex(text.as_bytes()) != entry.sha256 {
                return Err(Error::corrupt(&path, "run file does not match the manifest digest"));
            }
            let run = runfile::from_str(&text, &path)?;
            let windows = windowize(&run, manifest.w, manifest.stride);
            match entry.split {
                Split::Train => train_raw.extend(windows),
                Split::Test => test_raw.extend(windows),
                Split::Excluded => {}
            }
        }
        Ok(Self {
            manifest,
            train_raw,
            test_raw,
        })
    }
}

/// Run files (`*.csv`) in `dir`, sorted by name.
pub fn list_runs(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::new();
    for e in entries {
        let p = e.map_err(|e| Error::io(dir, e))?.path();
        if p.extension().is_some_and(|x| x == "csv") {
            paths.push(p);
        }
    }
    paths.sort();
    Ok(paths)
}

/// Loads every run file in `dir` with its file name.
pub fn load_runs(dir: &Path) -> Result<Vec<(String, TimeSeriesRun)>> {
    list_runs(dir)?
        .into_iter()
        .map(|p| {
            let name = p.file_name().expect("listed file").to_string_lossy().into_owned();
            Ok((name, runfile::load_run(&p)?))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use jamsense_core::scenario::{run_simulation, ScenarioConfig};

    fn runs(n_attack: usize, n_clean: usize) -> Vec<(String, TimeSeriesRun)> {
        (0..n_attack + n_clean)
            .map(|i| {
                let cfg = ScenarioConfig {
                    n_attackers: if i < n_attack { 2 } else { 0 },
                    duration_s: 2.0,
                    seed: 100 + i as u64,
                    ..Default::default()
                };
                (format!("run_{i:03}.csv"), run_simulation(&cfg).unwrap())
            })
            .collect()
    }

    fn spec() -> SplitSpec {
        SplitSpec {
            w: 50,
            stride: 25,
            test_fraction: 0.25,
            seed: 4,
            balance: true,
        }
    }

    #[test]
    fn balancing_and_splits_are_run_level() {
        let rs = runs(12, 8);
        let ds = Dataset::from_runs(&rs, &spec()).unwrap();
        let count = |s: Split, label: bool| {
            ds.manifest.runs.iter().filter(|r| r.split == s && r.label == label).count()
        };
        assert_eq!(count(Split::Excluded, true), 4);
        assert_eq!(count(Split::Excluded, false), 0);
        assert_eq!(count(Split::Test, true), 2);
        assert_eq!(count(Split::Test, false), 2);
        let train_runs: BTreeSet<u64> = ds.train_raw.iter().map(|w| w.origin.run).collect();
        assert!(ds.test_raw.iter().all(|w| !train_runs.contains(&w.origin.run)));
        assert_eq!(ds.manifest.train_windows, 12 * 7);
    }

    #[test]
    fn save_load_is_transparent() {
        let rs = runs(4, 4);
        let ds = Dataset::from_runs(&rs, &spec()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        ds.save(&rs, dir.path()).unwrap();
        let back = Dataset::load(dir.path()).unwrap();
        assert_eq!(back.manifest, ds.manifest);
        assert_eq!(back.train_raw, ds.train_raw);
        assert_eq!(back.test_raw, ds.test_raw);
        let reloaded = load_runs(&dir.path().join(RUNS_DIR)).unwrap();
        assert_eq!(reloaded, rs);
    }

    #[test]
    fn tampered_run_is_rejected() {
        let rs = runs(4, 4);
        let ds = Dataset::from_runs(&rs, &spec()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        ds.save(&rs, dir.path()).unwrap();
        let victim = dir.path().join(&ds.manifest.runs[0].file);
        let text = std::fs::read_to_string(&victim).unwrap();
        std::fs::write(&victim, text.replacen(",-", ",-1", 1)).unwrap();
        assert!(matches!(Dataset::load(dir.path()), Err(Error::Corrupt { .. })));
    }

    #[test]
    fn normalization_uses_train_statistics() {
        let rs = runs(4, 4);
        let ds = Dataset::from_runs(&rs, &spec()).unwrap();
        let train = ds.train();
        let n = (train.len() * 50) as f64;
        let mean: f64 = train.iter().flat_map(|s| &s.rssi).sum::<f64>() / n;
        assert!(mean.abs() < 1e-9);
        let direct = apply_normalizer(&ds.manifest.norm_stats, ds.test_raw.clone());
        assert_eq!(ds.test_with(&ds.manifest.norm_stats), direct);
    }

    #[test]
    fn invalid_specs() {
        let rs = runs(4, 4);
        let mut s = spec();
        s.w = 10_000;
        assert!(matches!(Dataset::from_runs(&rs, &s), Err(Error::Config(_))));
        s.w = 50;
        s.test_fraction = 1.0;
        assert!(matches!(Dataset::from_runs(&rs, &s), Err(Error::Config(_))));
        let mut dup = runs(2, 2);
        dup[1].1.seed = dup[0].1.seed;
        assert!(Dataset::from_runs(&dup, &spec()).is_err());
    }
}
