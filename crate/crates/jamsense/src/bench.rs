//! Single-sample prediction latency.

use std::fmt::Write as _;
use std::time::Instant;

use jamsense_core::baselines::{gnb_fit, logreg_fit, LogRegConfig};
use jamsense_core::classifier::Classifier;
use jamsense_core::dataset::{apply_normalizer, fit_normalizer, windowize, WindowSample};
use jamsense_core::nn::{ArchConfig, Model, Variant};
use jamsense_core::scenario::{run_simulation, ScenarioConfig};
use jamsense_core::vote::{datr_classify, VoteMethod};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const WARMUP_CALLS: usize = 10;
pub const MIN_TIMED: usize = 100;
/// Window sizes of the latency table.
pub const TABLE_WINDOWS: [usize; 4] = [50, 100, 200, 300];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub classifier: String,
    pub w: usize,
    pub samples: usize,
    pub mean_ms: f64,
    pub std_ms: f64,
}

/// Times `predict` once per window after [`WARMUP_CALLS`] untimed calls, on
/// the calling thread.
pub fn bench_latency(
    classifier: &str,
    windows: &[WindowSample],
    mut predict: impl FnMut(&WindowSample) -> jamsense_core::Result<f64>,
) -> Result<TimingReport> {
    if windows.len() < MIN_TIMED {
        return Err(Error::Config(format!(
            "latency needs at least {MIN_TIMED} windows, got {}",
            windows.len()
        )));
    }
    let w = windows[0].len();
    for s in windows.iter().cycle().take(WARMUP_CALLS) {
        std::hint::black_box(predict(s)?);
    }
    let mut ms = Vec::with_capacity(windows.len());
    for s in windows {
        let t = Instant::now();
        std::hint::black_box(predict(std::hint::black_box(s))?);
        ms.push(t.elapsed().as_secs_f64() * 1e3);
    }
    let n = ms.len() as f64;
    let mean = ms.iter().sum::<f64>() / n;
    let var = ms.iter().map(|m| (m - mean) * (m - mean)).sum::<f64>() / (n - 1.0);
    Ok(TimingReport {
        classifier: classifier.into(),
        w,
        samples: ms.len(),
        mean_ms: mean,
        std_ms: var.sqrt(),
    })
}

/// Latency of a classifier and of its vote pipeline.
pub fn bench_classifier(name: &str, c: &dyn Classifier, windows: &[WindowSample]) -> Result<Vec<TimingReport>> {
    Ok(vec![
        bench_latency(name, windows, |s| c.attack_probability(s))?,
        bench_latency(&format!("{name}+TSA+MVA"), windows, |s| {
            datr_classify(s, c, VoteMethod::Method1, Some(c)).map(|v| f64::from(u8::from(v.label.is_attack())))
        })?,
    ])
}

/// Reports for every classifier at each window size in [`TABLE_WINDOWS`].
///
/// Latency does not depend on trained weights, so the networks keep their
/// initial parameters; the baselines are fitted on the simulated windows
/// because their cost is the same either way.
pub fn latency_table(samples: usize, seed: u64) -> Result<Vec<TimingReport>> {
    let mut out = Vec::new();
    for &w in &TABLE_WINDOWS {
        let windows = bench_windows(w, samples.max(MIN_TIMED), seed)?;
        for (name, variant) in [("MH-DNN attention", Variant::Attention), ("MH-DNN LSTM", Variant::Lstm)] {
            let m = Model::new(ArchConfig::reference(variant, w), seed)?;
            out.extend(bench_classifier(name, &m, &windows)?);
        }
        let gnb = gnb_fit(&windows)?;
        out.push(bench_latency("GNB", &windows, |s| gnb.attack_probability(s))?);
        let lr = logreg_fit(&windows, &LogRegConfig { lr: 0.1, epochs: 20 })?;
        out.push(bench_latency("LR", &windows, |s| lr.attack_probability(s))?);
    }
    Ok(out)
}

/// `n` normalized windows, half from clean runs and half under attack, so
/// the baselines see both classes.
fn bench_windows(w: usize, n: usize, seed: u64) -> Result<Vec<WindowSample>> {
    let mut windows = Vec::new();
    for (attackers, quota) in [(0, n / 2), (2, n - n / 2)] {
        let mut class = Vec::new();
        let mut i = 0u64;
        while class.len() < quota {
            let cfg = ScenarioConfig {
                n_users: 5,
                n_attackers: attackers,
                seed: seed.wrapping_add(2 * i + u64::from(attackers > 0)),
                ..Default::default()
            };
            class.extend(windowize(&run_simulation(&cfg)?, w, (w / 4).max(1)));
            i += 1;
        }
        class.truncate(quota);
        windows.extend(class);
    }
    let stats = fit_normalizer(&windows)?;
    Ok(apply_normalizer(&stats, windows))
}

/// Classifier rows by window-size columns, `mean ± std` in milliseconds.
pub fn render_table(reports: &[TimingReport]) -> String {
    let mut ws: Vec<usize> = reports.iter().map(|r| r.w).collect();
    ws.sort_unstable();
    ws.dedup();
    let mut names: Vec<&str> = Vec::new();
    for r in reports {
        if !names.contains(&r.classifier.as_str()) {
            names.push(&r.classifier);
        }
    }
    let mut out = String::from("| classifier |");
    for w in &ws {
        let _ = write!(out, " w={w} (ms) |");
    }
    out.push_str("\n|---|");
    out.push_str(&"---|".repeat(ws.len()));
    out.push('\n');
    for name in names {
        let _ = write!(out, "| {name} |");
        for w in &ws {
            match reports.iter().find(|r| r.classifier == name && r.w == *w) {
                Some(r) => {
                    let _ = write!(out, " {:.4} ± {:.4} |", r.mean_ms, r.std_ms);
                }
                None => out.push_str(" - |"),
            }
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use jamsense_core::dataset::{Label, Origin};

    fn windows(n: usize, w: usize) -> Vec<WindowSample> {
        (0..n)
            .map(|i| WindowSample {
                rssi: vec![i as f64 * 0.01; w],
                sinr: vec![-(i as f64) * 0.01; w],
                label: Label::from_attack(i % 2 == 0),
                origin: Origin { run: i as u64, start: 0 },
            })
            .collect()
    }

    #[test]
    fn report_is_positive() {
        let m = Model::new(ArchConfig::reference(Variant::Lstm, 50), 0).unwrap();
        let r = bench_latency("lstm", &windows(120, 50), |s| m.attack_probability(s)).unwrap();
        assert_eq!(r.samples, 120);
        assert_eq!(r.w, 50);
        assert!(r.mean_ms > 0.0 && r.std_ms > 0.0);
    }

    #[test]
    fn too_few_windows() {
        let err = bench_latency("x", &windows(20, 50), |_| Ok(0.0)).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn bench_windows_hold_both_classes() {
        let ws = bench_windows(50, 101, 3).unwrap();
        assert_eq!(ws.len(), 101);
        let attacks = ws.iter().filter(|s| s.label.is_attack()).count();
        assert_eq!(attacks, 51);
    }

    #[test]
    fn table_layout() {
        let reports: Vec<TimingReport> = [50, 100]
            .iter()
            .flat_map(|&w| {
                ["A", "B"].map(|c| TimingReport {
                    classifier: c.into(),
                    w,
                    samples: 100,
                    mean_ms: 1.0,
                    std_ms: 0.5,
                })
            })
            .collect();
        let t = render_table(&reports);
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines.len(), 4);
        assert!(lines[0].contains("w=50") && lines[0].contains("w=100"));
        assert!(lines[2].starts_with("| A |"));
    }
}
