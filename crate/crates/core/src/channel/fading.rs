//! Narrowband sum-of-rays fading.
//!
//! Each cluster is split into `rays_per_cluster` rays whose arrival angles are
//! offset from the cluster centre by the standard 20-ray offset set scaled by
//! the cluster spread. A ray contributes `sqrt(P_n / M)` with a random initial
//! phase and a Doppler shift `v/λ · cos(azimuth) · sin(zenith)`. An optional
//! direct component turns the Rayleigh-like envelope into a Rician one.
//!
//! Delays are kept in the table but collapse to phases here: only per-sample
//! power is consumed downstream.

use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::SPEED_OF_LIGHT;
use crate::error::domain;
use crate::math::{cos, linear_to_db, sin, sqrt};
use crate::Result;

/// Unit-spread ray offsets, both signs of each magnitude.
const RAY_OFFSETS: [f64; 20] = [
    0.0447, -0.0447, 0.1413, -0.1413, 0.2492, -0.2492, 0.3715, -0.3715, 0.5129, -0.5129, 0.6797,
    -0.6797, 0.8844, -0.8844, 1.1481, -1.1481, 1.5195, -1.5195, 2.1551, -2.1551,
];

/// Tolerance on the total power of a table.
pub const POWER_TOLERANCE: f64 = 1e-9;

/// Per-cluster angular spreads in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AngularSpreads {
    pub asa_deg: f64,
    pub asd_deg: f64,
    pub zsa_deg: f64,
    pub zsd_deg: f64,
}

impl Default for AngularSpreads {
    fn default() -> Self {
        Self {
            asa_deg: 11.0,
            asd_deg: 5.0,
            zsa_deg: 3.0,
            zsd_deg: 3.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    /// Linear fraction of the total link power.
    pub power_fraction: f64,
    pub delay_s: f64,
    pub aoa_deg: f64,
    pub aod_deg: f64,
    pub zoa_deg: f64,
    pub zod_deg: f64,
    pub spreads: AngularSpreads,
}

/// Dominant direct path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LosComponent {
    pub power_fraction: f64,
    pub aoa_deg: f64,
    pub aod_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FadingTable {
    pub clusters: Vec<Cluster>,
    pub rays_per_cluster: usize,
    pub los: Option<LosComponent>,
}

impl FadingTable {
    /// Validates total power (1 ± 1e-9) and the ray count.
    pub fn new(
        clusters: Vec<Cluster>,
        rays_per_cluster: usize,
        los: Option<LosComponent>,
    ) -> Result<Self> {
        let table = Self {
            clusters,
            rays_per_cluster,
            los,
        };
        table.validate()?;
        Ok(table)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rays_per_cluster == 0 {
            return Err(domain!("rays_per_cluster must be at least 1"));
        }
        if self.clusters.is_empty() && self.los.is_none() {
            return Err(domain!("fading table is empty"));
        }
        let mut total = self.los.map_or(0.0, |l| l.power_fraction);
        for (i, c) in self.clusters.iter().enumerate() {
            if !(c.power_fraction >= 0.0) || !c.power_fraction.is_finite() {
                return Err(domain!("cluster {i} has invalid power {}", c.power_fraction));
            }
            total += c.power_fraction;
        }
        if (total - 1.0).abs() > POWER_TOLERANCE {
            return Err(domain!("table power sums to {total}, expected 1"));
        }
        Ok(())
    }

    /// 23-cluster table with an exponential power-delay profile and no direct
    /// path; Rayleigh-like envelope used for NLoS links.
    pub fn nlos_default() -> Self {
        Self::synthetic(23, 20, None)
    }

    /// The NLoS table scaled to 0.4 of the power plus a 0.6 direct component;
    /// Rician-like envelope used for LoS links.
    pub fn los_default() -> Self {
        Self::synthetic(
            23,
            20,
            Some(LosComponent {
                power_fraction: 0.6,
                aoa_deg: 30.0,
                aod_deg: 0.0,
            }),
        )
    }

    fn synthetic(n: usize, rays: usize, los: Option<LosComponent>) -> Self {
        // Golden-ratio sequences spread cluster angles without repetition.
        const GOLDEN: f64 = 0.618_033_988_749_894_9;
        const SILVER: f64 = 0.414_213_562_373_095;
        let scatter = 1.0 - los.map_or(0.0, |l| l.power_fraction);
        let weights: Vec<f64> = (0..n)
            .map(|i| crate::math::powf(10.0, -(i as f64) * 0.12))
            .collect();
        let sum: f64 = weights.iter().sum();
        let clusters = weights
            .iter()
            .enumerate()
            .map(|(i, w)| {
                let k = (i + 1) as f64;
                let frac = |x: f64| x - libm::floor(x);
                Cluster {
                    power_fraction: scatter * w / sum,
                    delay_s: i as f64 * 1.5e-8,
                    aoa_deg: -180.0 + 360.0 * frac(k * GOLDEN),
                    aod_deg: -180.0 + 360.0 * frac(k * SILVER),
                    zoa_deg: 45.0 + 90.0 * frac(k * SILVER + 0.25),
                    zod_deg: 80.0 + 20.0 * frac(k * GOLDEN + 0.5),
                    spreads: AngularSpreads::default(),
                }
            })
            .collect();
        let mut table = Self {
            clusters,
            rays_per_cluster: rays,
            los,
        };
        table.renormalize();
        table
    }

    /// Rescales scattered cluster powers so the total is exactly 1.
    pub fn renormalize(&mut self) {
        let los = self.los.map_or(0.0, |l| l.power_fraction);
        let scatter: f64 = self.clusters.iter().map(|c| c.power_fraction).sum();
        if scatter > 0.0 {
            let k = (1.0 - los) / scatter;
            for c in &mut self.clusters {
                c.power_fraction *= k;
            }
        }
    }

    fn ray_offset(&self, m: usize) -> f64 {
        if self.rays_per_cluster == 1 {
            0.0
        } else if self.rays_per_cluster == RAY_OFFSETS.len() {
            RAY_OFFSETS[m]
        } else {
            let span = RAY_OFFSETS[RAY_OFFSETS.len() - 2];
            -span + 2.0 * span * m as f64 / (self.rays_per_cluster - 1) as f64
        }
    }
}

/// Per-ray random phases and Doppler direction cosines for one link.
///
/// The state is a deterministic function of the table and the seed; speed and
/// carrier enter at evaluation time.
#[derive(Debug, Clone, PartialEq)]
pub struct FadingState {
    pub seed: u64,
    amplitudes: Vec<f64>,
    phases: Vec<f64>,
    /// `cos(azimuth)·sin(zenith)` of each ray; Doppler = speed/λ · this.
    direction_cosines: Vec<f64>,
}

impl FadingState {
    pub fn new(table: &FadingTable, seed: u64) -> Self {
        let mut rng = crate::rng::stream(seed, &[0xFAD1]);
        let m = table.rays_per_cluster;
        let n_rays = table.clusters.len() * m + usize::from(table.los.is_some());
        let mut amplitudes = Vec::with_capacity(n_rays);
        let mut phases = Vec::with_capacity(n_rays);
        let mut direction_cosines = Vec::with_capacity(n_rays);
        let mut coupling: Vec<usize> = (0..m).collect();
        for c in &table.clusters {
            let amp = sqrt(c.power_fraction / m as f64);
            // Random pairing of azimuth and zenith offsets within the cluster.
            coupling.shuffle(&mut rng);
            for (ray, &zen_idx) in coupling.iter().enumerate() {
                let az = (c.aoa_deg + c.spreads.asa_deg * table.ray_offset(ray)).to_radians();
                let zen = (c.zoa_deg + c.spreads.zsa_deg * table.ray_offset(zen_idx)).to_radians();
                amplitudes.push(amp);
                phases.push(rng.random::<f64>() * 2.0 * PI);
                direction_cosines.push(cos(az) * sin(zen));
            }
        }
        if let Some(los) = table.los {
            amplitudes.push(sqrt(los.power_fraction));
            phases.push(rng.random::<f64>() * 2.0 * PI);
            direction_cosines.push(cos(los.aoa_deg.to_radians()));
        }
        Self {
            seed,
            amplitudes,
            phases,
            direction_cosines,
        }
    }

    pub fn ray_count(&self) -> usize {
        self.amplitudes.len()
    }

    /// Complex channel coefficient at time `t`.
    pub fn coefficient(&self, t: f64, speed_mps: f64, f_hz: f64) -> (f64, f64) {
        let max_doppler = speed_mps * f_hz / SPEED_OF_LIGHT;
        let mut re = 0.0;
        let mut im = 0.0;
        for ((a, p), dc) in self
            .amplitudes
            .iter()
            .zip(&self.phases)
            .zip(&self.direction_cosines)
        {
            let arg = p + 2.0 * PI * max_doppler * dc * t;
            re += a * cos(arg);
            im += a * sin(arg);
        }
        (re, im)
    }

    pub fn power_linear(&self, t: f64, speed_mps: f64, f_hz: f64) -> f64 {
        let (re, im) = self.coefficient(t, speed_mps, f_hz);
        re * re + im * im
    }

    pub fn gain_db(&self, t: f64, speed_mps: f64, f_hz: f64) -> f64 {
        power_to_db(self.power_linear(t, speed_mps, f_hz))
    }
}

fn power_to_db(p: f64) -> f64 {
    // Deep nulls are floored so every sample stays finite.
    linear_to_db(p.max(1e-30))
}

/// Evaluates a [`FadingState`] on a uniform time grid by rotating each ray's
/// phasor, re-anchoring to the exact phase every `RESYNC` steps.
#[derive(Debug, Clone)]
pub struct FadingTrack<'a> {
    state: &'a FadingState,
    doppler_hz: Vec<f64>,
    phasors: Vec<(f64, f64)>,
    steps: Vec<(f64, f64)>,
    t0: f64,
    dt: f64,
    tick: u64,
}

impl<'a> FadingTrack<'a> {
    const RESYNC: u64 = 256;

    pub fn new(state: &'a FadingState, speed_mps: f64, f_hz: f64, t0: f64, dt: f64) -> Self {
        let max_doppler = speed_mps * f_hz / SPEED_OF_LIGHT;
        let doppler_hz: Vec<f64> = state
            .direction_cosines
            .iter()
            .map(|dc| max_doppler * dc)
            .collect();
        let steps = doppler_hz
            .iter()
            .map(|f| {
                let w = 2.0 * PI * f * dt;
                (cos(w), sin(w))
            })
            .collect();
        let mut track = Self {
            state,
            doppler_hz,
            phasors: Vec::new(),
            steps,
            t0,
            dt,
            tick: 0,
        };
        track.resync();
        track
    }

    fn resync(&mut self) {
        let t = self.t0 + self.tick as f64 * self.dt;
        self.phasors = self
            .state
            .phases
            .iter()
            .zip(&self.doppler_hz)
            .zip(&self.state.amplitudes)
            .map(|((p, f), a)| {
                let arg = p + 2.0 * PI * f * t;
                (a * cos(arg), a * sin(arg))
            })
            .collect();
    }

    /// Fading gain in dB at the current tick, then advances one tick.
    pub fn next_gain_db(&mut self) -> f64 {
        if self.tick > 0 && self.tick.is_multiple_of(Self::RESYNC) {
            self.resync();
        }
        let mut re = 0.0;
        let mut im = 0.0;
        for (z, s) in self.phasors.iter_mut().zip(&self.steps) {
            re += z.0;
            im += z.1;
            *z = (z.0 * s.0 - z.1 * s.1, z.0 * s.1 + z.1 * s.0);
        }
        self.tick += 1;
        power_to_db(re * re + im * im)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::fading_gain_db;

    fn single_ray() -> FadingTable {
        FadingTable::new(
            alloc::vec![Cluster {
                power_fraction: 1.0,
                delay_s: 0.0,
                aoa_deg: 10.0,
                aod_deg: 0.0,
                zoa_deg: 90.0,
                zod_deg: 90.0,
                spreads: AngularSpreads::default(),
            }],
            1,
            None,
        )
        .unwrap()
    }

    #[test]
    fn defaults_are_normalized() {
        for t in [FadingTable::nlos_default(), FadingTable::los_default()] {
            t.validate().unwrap();
            assert_eq!(t.clusters.len(), 23);
            assert_eq!(t.rays_per_cluster, 20);
        }
        assert!(FadingTable::nlos_default().los.is_none());
        assert_eq!(FadingTable::los_default().los.unwrap().power_fraction, 0.6);
    }

    #[test]
    fn rejects_bad_tables() {
        let mut t = single_ray();
        t.clusters[0].power_fraction = 0.9;
        assert!(t.validate().is_err());
        let mut t = single_ray();
        t.rays_per_cluster = 0;
        assert!(t.validate().is_err());
        let empty = FadingTable {
            clusters: Vec::new(),
            rays_per_cluster: 1,
            los: None,
        };
        let state = FadingState::new(&single_ray(), 1);
        assert!(fading_gain_db(&empty, &state, 0.0, 0.0, 2e9).is_err());
    }

    #[test]
    fn single_static_ray_is_unit_power() {
        let t = single_ray();
        let s = FadingState::new(&t, 3);
        for k in 0..50 {
            let g = fading_gain_db(&t, &s, k as f64 * 0.37, 0.0, 2e9).unwrap();
            assert!(g.abs() < 1e-12);
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let t = FadingTable::nlos_default();
        let a = FadingState::new(&t, 11);
        let b = FadingState::new(&t, 11);
        let c = FadingState::new(&t, 12);
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.gain_db(1.3, 10.0, 2e9).to_bits(), b.gain_db(1.3, 10.0, 2e9).to_bits());
    }

    #[test]
    fn track_matches_direct_evaluation() {
        let t = FadingTable::los_default();
        let s = FadingState::new(&t, 5);
        let dt = 0.01;
        let mut track = FadingTrack::new(&s, 11.0, 2e9, 0.5, dt);
        for k in 0..1000 {
            let direct = s.gain_db(0.5 + k as f64 * dt, 11.0, 2e9);
            let tracked = track.next_gain_db();
            assert!((direct - tracked).abs() < 1e-6, "tick {k}: {direct} vs {tracked}");
        }
    }
}
