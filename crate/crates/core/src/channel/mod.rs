//! Air-to-ground propagation: pathloss, shadowing, LoS probability and
//! small-scale fading for links between a ground small cell, UAVs and
//! terrestrial users.
//!
//! Distances are in meters. Free-space loss takes the carrier in hertz; the
//! low-altitude and NLoS coefficient forms take it in GHz, which is the only
//! assignment under which both branches of the LoS maximum are commensurate.

mod fading;

pub use fading::{AngularSpreads, Cluster, FadingState, FadingTable, FadingTrack, LosComponent};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::domain;
use crate::math::{exp, log10, sqrt};
use crate::Result;

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Lower altitude bound (exclusive) of the UAV pathloss formulas, meters.
pub const MIN_UAV_ALTITUDE_M: f64 = 22.5;
/// Upper altitude bound (exclusive) of the UAV pathloss formulas, meters.
pub const MAX_UAV_ALTITUDE_M: f64 = 300.0;

/// Returns true when `h_m` lies strictly inside the UAV validity margin.
pub fn altitude_in_range(h_m: f64) -> bool {
    h_m > MIN_UAV_ALTITUDE_M && h_m < MAX_UAV_ALTITUDE_M
}

/// Clamps an altitude into the open validity interval.
pub fn clamp_altitude(h_m: f64) -> f64 {
    const MARGIN: f64 = 1e-6;
    h_m.clamp(MIN_UAV_ALTITUDE_M + MARGIN, MAX_UAV_ALTITUDE_M - MARGIN)
}

/// Geometry of one transmitter/receiver pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkGeometry {
    /// 3D distance, meters.
    pub d3d_m: f64,
    /// Ground-projected distance, meters.
    pub d2d_m: f64,
    /// UAV altitude, meters.
    pub h_m: f64,
}

impl LinkGeometry {
    pub fn new(d3d_m: f64, d2d_m: f64, h_m: f64) -> Result<Self> {
        if !(d3d_m > 0.0) || !d3d_m.is_finite() {
            return Err(domain!("3D distance must be positive and finite, got {d3d_m}"));
        }
        if !(d2d_m >= 0.0) || !d2d_m.is_finite() {
            return Err(domain!("2D distance must be non-negative, got {d2d_m}"));
        }
        if d2d_m > d3d_m * (1.0 + 1e-12) {
            return Err(domain!("2D distance {d2d_m} exceeds 3D distance {d3d_m}"));
        }
        if !h_m.is_finite() || h_m <= 0.0 {
            return Err(domain!("altitude must be positive, got {h_m}"));
        }
        Ok(Self { d3d_m, d2d_m, h_m })
    }

    /// Geometry between two points. The link altitude is the higher endpoint;
    /// the 3D distance is floored at `min_d3d_m`.
    pub fn from_positions(a: [f64; 3], b: [f64; 3], min_d3d_m: f64) -> Result<Self> {
        let dx = a[0] - b[0];
        let dy = a[1] - b[1];
        let dz = a[2] - b[2];
        let d2d = sqrt(dx * dx + dy * dy);
        let d3d = sqrt(d2d * d2d + dz * dz).max(min_d3d_m);
        let h = a[2].max(b[2]);
        Self::new(d3d, d2d.min(d3d), h)
    }

    pub fn altitude_in_range(&self) -> bool {
        altitude_in_range(self.h_m)
    }
}

/// Propagation state of a link.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ChannelCondition {
    LoS,
    NLoS,
}

/// Pathloss value, tagged when the altitude fell outside the validity margin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pathloss {
    pub db: f64,
    /// Set when the formulas were evaluated outside (22.5 m, 300 m).
    pub altitude_warning: bool,
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(domain!("{name} must be positive and finite, got {v}"))
    }
}

/// Free-space pathloss `20·log10(4π·d·f/c)` in dB.
pub fn free_space_pl(d_m: f64, f_hz: f64) -> Result<f64> {
    check_positive("distance", d_m)?;
    check_positive("frequency", f_hz)?;
    Ok(20.0 * log10(4.0 * core::f64::consts::PI * d_m * f_hz / SPEED_OF_LIGHT))
}

fn low_altitude_pl(g: &LinkGeometry, f_hz: f64) -> f64 {
    30.9 + (22.25 - 0.5 * log10(g.h_m)) * log10(g.d3d_m) + 20.0 * log10(f_hz / 1e9)
}

fn nlos_pl(g: &LinkGeometry, f_hz: f64) -> f64 {
    32.4 + (43.2 - 7.6 * log10(g.h_m)) * log10(g.d3d_m) + 20.0 * log10(f_hz / 1e9)
}

/// LoS pathloss: the larger of the free-space and low-altitude losses.
pub fn pathloss_los(g: &LinkGeometry, f_hz: f64) -> Result<Pathloss> {
    let high = free_space_pl(g.d3d_m, f_hz)?;
    let low = low_altitude_pl(g, f_hz);
    Ok(Pathloss {
        db: high.max(low),
        altitude_warning: !g.altitude_in_range(),
    })
}

/// NLoS pathloss: the larger of the LoS loss and the NLoS expression.
pub fn pathloss_nlos(g: &LinkGeometry, f_hz: f64) -> Result<Pathloss> {
    let los = pathloss_los(g, f_hz)?;
    Ok(Pathloss {
        db: los.db.max(nlos_pl(g, f_hz)),
        altitude_warning: los.altitude_warning,
    })
}

/// Pathloss dispatched on the link condition.
pub fn pathloss(g: &LinkGeometry, f_hz: f64, c: ChannelCondition) -> Result<Pathloss> {
    match c {
        ChannelCondition::LoS => pathloss_los(g, f_hz),
        ChannelCondition::NLoS => pathloss_nlos(g, f_hz),
    }
}

/// Shadowing standard deviation in dB for UAVs in an urban micro cell.
pub fn shadowing_std(c: ChannelCondition, h_m: f64) -> Result<f64> {
    if !altitude_in_range(h_m) {
        return Err(domain!(
            "altitude {h_m} m outside ({MIN_UAV_ALTITUDE_M}, {MAX_UAV_ALTITUDE_M})"
        ));
    }
    Ok(match c {
        ChannelCondition::LoS => (5.0 * exp(-0.01 * h_m)).max(2.0),
        ChannelCondition::NLoS => 8.0,
    })
}

/// Zero-mean Gaussian shadowing draw.
pub fn sample_shadowing<R: Rng + ?Sized>(std_db: f64, rng: &mut R) -> f64 {
    if std_db <= 0.0 {
        return 0.0;
    }
    // Finite positive std never fails.
    Normal::new(0.0, std_db).map(|n| n.sample(rng)).unwrap_or(0.0)
}

/// Breakpoint distance below which a UAV link is always LoS.
pub fn los_breakpoint_m(h_m: f64) -> f64 {
    (294.05 * log10(h_m) - 432.94).max(18.0)
}

/// Probability that a UAV link at altitude `h_m` and ground distance `d2d_m`
/// is in line of sight. Exactly 1 inside the breakpoint, clamped to [0, 1].
pub fn los_probability(d2d_m: f64, h_m: f64) -> f64 {
    let d1 = los_breakpoint_m(h_m);
    if d2d_m <= d1 {
        return 1.0;
    }
    let p = 233.98 * log10(h_m) - 0.95;
    let ratio = d1 / d2d_m;
    (ratio + exp(-d2d_m / p) * (1.0 - ratio)).clamp(0.0, 1.0)
}

/// LoS iff `u < p_los`.
pub fn sample_condition(p_los: f64, u: f64) -> ChannelCondition {
    if u < p_los {
        ChannelCondition::LoS
    } else {
        ChannelCondition::NLoS
    }
}

/// Large-scale loss: condition-dependent pathloss plus shadowing.
pub fn large_scale_loss(
    g: &LinkGeometry,
    f_hz: f64,
    c: ChannelCondition,
    shadow_db: f64,
) -> Result<f64> {
    Ok(pathloss(g, f_hz, c)?.db + shadow_db)
}

/// Small-scale fading gain in dB at time `t` for a link moving at `speed_mps`.
pub fn fading_gain_db(
    table: &FadingTable,
    state: &FadingState,
    t: f64,
    speed_mps: f64,
    f_hz: f64,
) -> Result<f64> {
    if table.clusters.is_empty() && table.los.is_none() {
        return Err(domain!("fading table has no components"));
    }
    check_positive("frequency", f_hz)?;
    Ok(state.gain_db(t, speed_mps, f_hz))
}
