//! Windowing, class balancing, z-score normalization and run-level splits.

use alloc::collections::BTreeSet;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::domain;
use crate::math::sqrt;
use crate::rng;
use crate::scenario::TimeSeriesRun;
use crate::Result;

/// Floor applied to fitted standard deviations.
pub const STD_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    NoAttack,
    Attack,
}

impl Label {
    pub fn from_attack(attack: bool) -> Self {
        if attack {
            Self::Attack
        } else {
            Self::NoAttack
        }
    }

    pub fn is_attack(self) -> bool {
        self == Self::Attack
    }

    /// Output index in the classifier's probability pair.
    pub fn index(self) -> usize {
        match self {
            Self::NoAttack => 0,
            Self::Attack => 1,
        }
    }
}

/// Where a window came from: the run's seed and the window's first sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Origin {
    pub run: u64,
    pub start: usize,
}

/// A `w`-sample slice of both channels with its label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowSample {
    pub rssi: Vec<f64>,
    pub sinr: Vec<f64>,
    pub label: Label,
    pub origin: Origin,
}

impl WindowSample {
    pub fn len(&self) -> usize {
        self.rssi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rssi.is_empty()
    }
}

/// Anything that carries a class label; used by the splitter.
pub trait Labeled {
    fn label(&self) -> Label;
}

impl Labeled for TimeSeriesRun {
    fn label(&self) -> Label {
        Label::from_attack(self.label)
    }
}

impl Labeled for WindowSample {
    fn label(&self) -> Label {
        self.label
    }
}

/// Number of windows `windowize` yields for a run of length `n`.
pub fn window_count(n: usize, w: usize, stride: usize) -> usize {
    if w == 0 || stride == 0 || n < w {
        0
    } else {
        (n - w) / stride + 1
    }
}

/// Slices a run into windows of length `w` every `stride` samples.
pub fn windowize(run: &TimeSeriesRun, w: usize, stride: usize) -> Vec<WindowSample> {
    let count = window_count(run.len().min(run.sinr_db.len()), w, stride);
    let label = Label::from_attack(run.label);
    (0..count)
        .map(|i| {
            let start = i * stride;
            WindowSample {
                rssi: run.rssi_dbm[start..start + w].to_vec(),
                sinr: run.sinr_db[start..start + w].to_vec(),
                label,
                origin: Origin {
                    run: run.seed,
                    start,
                },
            }
        })
        .collect()
}

/// Undersamples the majority class uniformly until both classes have equal
/// counts. Retained samples keep their relative order.
pub fn balance<T: Labeled>(samples: Vec<T>, seed: u64) -> Result<Vec<T>> {
    let attack: Vec<usize> = (0..samples.len())
        .filter(|&i| samples[i].label().is_attack())
        .collect();
    let benign: Vec<usize> = (0..samples.len())
        .filter(|&i| !samples[i].label().is_attack())
        .collect();
    if attack.is_empty() || benign.is_empty() {
        return Err(domain!(
            "balancing needs both classes (attack {}, no-attack {})",
            attack.len(),
            benign.len()
        ));
    }
    let target = attack.len().min(benign.len());
    let mut rng = rng::stream(seed, &[0xBA1A]);
    let mut keep = BTreeSet::new();
    for mut group in [attack, benign] {
        if group.len() > target {
            group.shuffle(&mut rng);
            group.truncate(target);
        }
        keep.extend(group);
    }
    Ok(samples
        .into_iter()
        .enumerate()
        .filter_map(|(i, s)| keep.contains(&i).then_some(s))
        .collect())
}

/// Per-channel z-score statistics fitted on the training split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub rssi_mean: f64,
    pub rssi_std: f64,
    pub sinr_mean: f64,
    pub sinr_std: f64,
}

impl NormStats {
    /// Mean 0, std 1 on both channels.
    pub fn identity() -> Self {
        Self {
            rssi_mean: 0.0,
            rssi_std: 1.0,
            sinr_mean: 0.0,
            sinr_std: 1.0,
        }
    }
}

fn mean_std<'a>(values: impl Iterator<Item = &'a f64> + Clone) -> (f64, f64) {
    let (n, sum) = values.clone().fold((0usize, 0.0), |(n, s), v| (n + 1, s + v));
    let mean = sum / n as f64;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    (mean, sqrt(var).max(STD_FLOOR))
}

/// Fits population mean and standard deviation per channel.
pub fn fit_normalizer(train: &[WindowSample]) -> Result<NormStats> {
    if train.iter().all(WindowSample::is_empty) {
        return Err(domain!("cannot fit normalizer on an empty training set"));
    }
    let (rssi_mean, rssi_std) = mean_std(train.iter().flat_map(|s| s.rssi.iter()));
    let (sinr_mean, sinr_std) = mean_std(train.iter().flat_map(|s| s.sinr.iter()));
    Ok(NormStats {
        rssi_mean,
        rssi_std,
        sinr_mean,
        sinr_std,
    })
}

/// Z-scores one sample in place.
pub fn normalize_sample(stats: &NormStats, s: &mut WindowSample) {
    for v in &mut s.rssi {
        *v = (*v - stats.rssi_mean) / stats.rssi_std;
    }
    for v in &mut s.sinr {
        *v = (*v - stats.sinr_mean) / stats.sinr_std;
    }
}

/// Applies `stats` to every sample. Not idempotent.
pub fn apply_normalizer(stats: &NormStats, mut samples: Vec<WindowSample>) -> Vec<WindowSample> {
    for s in &mut samples {
        normalize_sample(stats, s);
    }
    samples
}

/// Splits whole runs into train and test sets, stratified by label.
///
/// Each label group is shuffled and `round(n · test_fraction)` of it (at
/// least one, at most `n − 1`) goes to test. Returned runs keep input order.
pub fn split_by_run<T: Labeled>(
    runs: Vec<T>,
    test_fraction: f64,
    seed: u64,
) -> Result<(Vec<T>, Vec<T>)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(domain!("test fraction must lie in (0, 1), got {test_fraction}"));
    }
    let mut rng = rng::stream(seed, &[0x5B17]);
    let mut test_idx = BTreeSet::new();
    for label in [Label::NoAttack, Label::Attack] {
        let mut group: Vec<usize> = (0..runs.len())
            .filter(|&i| runs[i].label() == label)
            .collect();
        if group.is_empty() {
            continue;
        }
        if group.len() < 2 {
            return Err(domain!(
                "label {label:?} has {} run(s); at least 2 are needed to stratify",
                group.len()
            ));
        }
        let n = group.len();
        let k = (libm::round(n as f64 * test_fraction) as usize).clamp(1, n - 1);
        group.shuffle(&mut rng);
        test_idx.extend(group.into_iter().take(k));
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (i, r) in runs.into_iter().enumerate() {
        if test_idx.contains(&i) {
            test.push(r);
        } else {
            train.push(r);
        }
    }
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::ScenarioConfig;
    use alloc::vec;

    fn run(n: usize, seed: u64, label: bool) -> TimeSeriesRun {
        TimeSeriesRun {
            rssi_dbm: (0..n).map(|i| i as f64).collect(),
            sinr_db: (0..n).map(|i| -(i as f64)).collect(),
            label,
            config: ScenarioConfig::default(),
            seed,
        }
    }

    fn sample(label: Label, id: u64) -> WindowSample {
        WindowSample {
            rssi: vec![id as f64, 1.0],
            sinr: vec![2.0, id as f64],
            label,
            origin: Origin { run: id, start: 0 },
        }
    }

    #[test]
    fn window_counts() {
        assert_eq!(windowize(&run(3000, 1, true), 300, 300).len(), 10);
        assert_eq!(windowize(&run(3000, 1, true), 3000, 1).len(), 1);
        assert!(windowize(&run(100, 1, true), 300, 1).is_empty());
        assert_eq!(windowize(&run(3000, 1, false), 300, 150).len(), 19);
        assert_eq!(window_count(10, 0, 1), 0);
    }

    #[test]
    fn windows_inherit_label_and_origin() {
        let ws = windowize(&run(20, 77, true), 5, 4);
        assert_eq!(ws.len(), 4);
        for (i, w) in ws.iter().enumerate() {
            assert_eq!(w.label, Label::Attack);
            assert_eq!(w.origin, Origin { run: 77, start: 4 * i });
            assert_eq!(w.rssi[0], (4 * i) as f64);
            assert_eq!(w.sinr.len(), 5);
        }
    }

    #[test]
    fn balance_undersamples_majority() {
        let mut xs: Vec<_> = (0..80).map(|i| sample(Label::Attack, i)).collect();
        xs.extend((80..100).map(|i| sample(Label::NoAttack, i)));
        let out = balance(xs.clone(), 3).unwrap();
        assert_eq!(out.iter().filter(|s| s.label == Label::Attack).count(), 20);
        assert_eq!(out.iter().filter(|s| s.label == Label::NoAttack).count(), 20);
        // Selection only: every retained sample exists unchanged in the input.
        assert!(out.iter().all(|s| xs.contains(s)));
        assert_eq!(out, balance(xs.clone(), 3).unwrap());
        assert_ne!(out, balance(xs, 4).unwrap());
    }

    #[test]
    fn balance_keeps_balanced_and_rejects_single_class() {
        let xs: Vec<_> = (0..10)
            .map(|i| sample(if i % 2 == 0 { Label::Attack } else { Label::NoAttack }, i))
            .collect();
        assert_eq!(balance(xs.clone(), 1).unwrap(), xs);
        let one: Vec<_> = (0..4).map(|i| sample(Label::Attack, i)).collect();
        assert!(matches!(balance(one, 1), Err(crate::Error::Domain(_))));
    }

    #[test]
    fn normalizer_zero_mean_unit_std() {
        let xs: Vec<_> = (0..40)
            .map(|i| WindowSample {
                rssi: vec![-80.0 + i as f64, -70.0 - 0.5 * i as f64, -60.0],
                sinr: vec![i as f64 * 0.3, 5.0, -2.0],
                label: Label::Attack,
                origin: Origin { run: i, start: 0 },
            })
            .collect();
        let stats = fit_normalizer(&xs).unwrap();
        let out = apply_normalizer(&stats, xs.clone());
        let refit = fit_normalizer(&out).unwrap();
        assert!(refit.rssi_mean.abs() < 1e-9 && refit.sinr_mean.abs() < 1e-9);
        assert!((refit.rssi_std - 1.0).abs() < 1e-9 && (refit.sinr_std - 1.0).abs() < 1e-9);
        // Applying stats twice is not the identity.
        let twice = apply_normalizer(&stats, out.clone());
        assert_ne!(twice, out);
    }

    #[test]
    fn normalizer_constant_channel() {
        let xs = vec![WindowSample {
            rssi: vec![-70.0; 8],
            sinr: vec![3.0; 8],
            label: Label::NoAttack,
            origin: Origin { run: 0, start: 0 },
        }];
        let stats = fit_normalizer(&xs).unwrap();
        assert_eq!(stats.rssi_std, STD_FLOOR);
        let out = apply_normalizer(&stats, xs);
        assert!(out[0].rssi.iter().chain(&out[0].sinr).all(|v| *v == 0.0));
        assert!(fit_normalizer(&[]).is_err());
    }

    #[test]
    fn split_is_stratified_and_disjoint() {
        let runs: Vec<_> = (0..100).map(|i| run(10, i, i % 2 == 0)).collect();
        let (train, test) = split_by_run(runs.clone(), 0.2, 9).unwrap();
        assert_eq!((train.len(), test.len()), (80, 20));
        let train_ids: BTreeSet<u64> = train.iter().map(|r| r.seed).collect();
        assert!(test.iter().all(|r| !train_ids.contains(&r.seed)));
        for set in [&train, &test] {
            assert!(set.iter().any(|r| r.label) && set.iter().any(|r| !r.label));
        }
        let (train2, _) = split_by_run(runs, 0.2, 9).unwrap();
        assert_eq!(train, train2);
    }

    #[test]
    fn split_errors() {
        let runs: Vec<_> = (0..3).map(|i| run(10, i, i == 0)).collect();
        assert!(split_by_run(runs.clone(), 0.5, 1).is_err());
        assert!(split_by_run(runs.clone(), 0.0, 1).is_err());
        assert!(split_by_run(runs, 1.0, 1).is_err());
    }
}
