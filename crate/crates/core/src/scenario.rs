//! Scenario synthesis: entity placement, mobility, link budget and generation
//! of per-run RSSI/SINR time series at the authenticated UAV.
//!
//! The serving small cell transmits to the authenticated UAV. Jammers and
//! terrestrial users are interferers. Every link gets its own random streams,
//! keyed by role and index, so adding an entity never perturbs the draws of
//! the others.

use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{
    self, clamp_altitude, ChannelCondition, FadingState, FadingTable, FadingTrack, LinkGeometry,
};
use crate::error::{config, domain};
use crate::math::{cos, db_to_linear, linear_to_db, sin, sqrt};
use crate::rng;
use crate::Result;

pub const USER_COUNTS: [usize; 6] = [0, 3, 5, 10, 20, 30];
pub const ATTACKER_COUNTS: [usize; 5] = [0, 1, 2, 3, 4];
pub const ATTACKER_POWERS_DBM: [f64; 5] = [0.0, 2.0, 5.0, 10.0, 20.0];
pub const CELL_UAV_DISTANCES_M: [f64; 4] = [100.0, 200.0, 500.0, 1000.0];

pub const SMALL_CELL_HEIGHT_M: f64 = 10.0;
pub const USER_HEIGHT_M: f64 = 1.5;
/// Jammers stop approaching the UAV at this separation.
pub const JAMMER_MIN_SEPARATION_M: f64 = 5.0;
/// Floor on link distance inside the pathloss formulas.
const MIN_LINK_DISTANCE_M: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    SmallCell,
    AuthenticatedUav,
    Jammer,
    TerrestrialUser,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Entity {
    pub role: Role,
    /// Meters, (x, y, z).
    pub position: [f64; 3],
    pub speed_mps: f64,
    /// Ground heading used by the users' persistent walk, radians.
    pub heading_rad: f64,
    pub tx_power_dbm: f64,
    pub antenna_gain_dbi: f64,
}

/// Which entity groups move.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpeedProfile {
    None,
    AttackersOnly,
    UsersOnly,
    Both,
}

impl SpeedProfile {
    pub fn attackers_move(self) -> bool {
        matches!(self, Self::AttackersOnly | Self::Both)
    }
    pub fn users_move(self) -> bool {
        matches!(self, Self::UsersOnly | Self::Both)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelMode {
    AlwaysLos,
    AlwaysNlos,
    Probabilistic,
}

/// Full description of one simulation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub n_users: usize,
    pub n_attackers: usize,
    pub attacker_power_dbm: f64,
    pub cell_uav_distance_m: f64,
    pub speed_profile: SpeedProfile,
    pub channel_mode: ChannelMode,
    pub duration_s: f64,
    pub sample_rate_hz: f64,
    pub noise_power_dbm: f64,
    pub seed: u64,
    pub carrier_hz: f64,
    pub cell_power_dbm: f64,
    /// Terrestrial users transmit at the authenticated UAV's power.
    pub user_power_dbm: f64,
    pub speed_mps: f64,
    pub antenna_gain_dbi: f64,
    /// Shadowing and LoS/NLoS state are redrawn once per interval.
    pub coherence_s: f64,
    /// Side of the square deployment area, meters.
    pub area_m: f64,
    /// Doppler speed floor standing in for scatterer motion on static links.
    pub ambient_speed_mps: f64,
    /// Permits values outside the enumerated parameter grid.
    pub off_grid: bool,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            n_users: 0,
            n_attackers: 0,
            attacker_power_dbm: 20.0,
            cell_uav_distance_m: 100.0,
            speed_profile: SpeedProfile::None,
            channel_mode: ChannelMode::AlwaysLos,
            duration_s: 30.0,
            sample_rate_hz: 100.0,
            noise_power_dbm: -94.0,
            seed: 0,
            carrier_hz: 2e9,
            cell_power_dbm: 4.0,
            user_power_dbm: 2.0,
            speed_mps: 10.0,
            antenna_gain_dbi: 0.0,
            coherence_s: 0.1,
            area_m: 1000.0,
            ambient_speed_mps: 1.0,
            off_grid: false,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.attacker_power_dbm,
            self.cell_uav_distance_m,
            self.duration_s,
            self.sample_rate_hz,
            self.noise_power_dbm,
            self.carrier_hz,
            self.cell_power_dbm,
            self.user_power_dbm,
            self.speed_mps,
            self.antenna_gain_dbi,
            self.coherence_s,
            self.area_m,
            self.ambient_speed_mps,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(config!("scenario contains non-finite values"));
        }
        if self.duration_s <= 0.0 || self.sample_rate_hz <= 0.0 {
            return Err(config!("duration and sample rate must be positive"));
        }
        if self.sample_count() == 0 {
            return Err(config!("run would contain no samples"));
        }
        if self.carrier_hz <= 0.0 || self.coherence_s <= 0.0 || self.area_m <= 0.0 {
            return Err(config!("carrier, coherence interval and area must be positive"));
        }
        if self.speed_mps < 0.0 || self.ambient_speed_mps < 0.0 {
            return Err(config!("speeds must be non-negative"));
        }
        if !self.off_grid {
            if !USER_COUNTS.contains(&self.n_users) {
                return Err(config!("n_users {} not in {USER_COUNTS:?}", self.n_users));
            }
            if !ATTACKER_COUNTS.contains(&self.n_attackers) {
                return Err(config!("n_attackers {} not in {ATTACKER_COUNTS:?}", self.n_attackers));
            }
            if !ATTACKER_POWERS_DBM.contains(&self.attacker_power_dbm) {
                return Err(config!(
                    "attacker power {} dBm not in {ATTACKER_POWERS_DBM:?}",
                    self.attacker_power_dbm
                ));
            }
            if !CELL_UAV_DISTANCES_M.contains(&self.cell_uav_distance_m) {
                return Err(config!(
                    "distance {} m not in {CELL_UAV_DISTANCES_M:?}",
                    self.cell_uav_distance_m
                ));
            }
        }
        Ok(())
    }

    /// Number of samples per channel, `duration · rate` rounded.
    pub fn sample_count(&self) -> usize {
        libm::round(self.duration_s * self.sample_rate_hz) as usize
    }

    pub fn is_attack(&self) -> bool {
        self.n_attackers > 0
    }
}

/// Thermal noise at the receiver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub noise_power_dbm: f64,
}

/// One simulation's RSSI/SINR trajectories at the authenticated UAV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeriesRun {
    pub rssi_dbm: Vec<f64>,
    pub sinr_db: Vec<f64>,
    /// Attack present (`n_attackers > 0`).
    pub label: bool,
    pub config: ScenarioConfig,
    pub seed: u64,
}

impl TimeSeriesRun {
    pub fn len(&self) -> usize {
        self.rssi_dbm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rssi_dbm.is_empty()
    }
}

// Stream labels.
const STREAM_PLACE: u64 = 1;
const STREAM_LINK: u64 = 2;
const STREAM_FADING: u64 = 3;

fn role_tag(role: Role) -> u64 {
    match role {
        Role::SmallCell => 10,
        Role::AuthenticatedUav => 11,
        Role::Jammer => 12,
        Role::TerrestrialUser => 13,
    }
}

fn uniform_open<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    // Rejects the lower endpoint so altitudes stay strictly inside the margin.
    loop {
        let v = lo + (hi - lo) * rng.random::<f64>();
        if v > lo && v < hi {
            return v;
        }
    }
}

/// Places the small cell, the authenticated UAV, jammers and terrestrial users.
///
/// The small cell sits at the centre of the area at 10 m. The UAV is placed at
/// exactly `cell_uav_distance_m` (3D) from the cell at a uniform bearing and a
/// uniform altitude in (22.5 m, min(300 m, 10 m + distance)). Jammers and users
/// are uniform over the area. Each entity draws from its own stream derived
/// from `seed`, so placements of one group do not depend on the others' sizes.
pub fn place_entities(config: &ScenarioConfig, seed: u64) -> Result<Vec<Entity>> {
    let d = config.cell_uav_distance_m;
    let max_alt = (SMALL_CELL_HEIGHT_M + d).min(channel::MAX_UAV_ALTITUDE_M);
    if !(d > 0.0) || max_alt <= channel::MIN_UAV_ALTITUDE_M {
        return Err(domain!(
            "no UAV altitude in ({}, {}) m lies at {d} m from a {SMALL_CELL_HEIGHT_M} m cell",
            channel::MIN_UAV_ALTITUDE_M,
            channel::MAX_UAV_ALTITUDE_M
        ));
    }
    let half = config.area_m / 2.0;
    let gain = config.antenna_gain_dbi;
    let mut out = Vec::with_capacity(2 + config.n_attackers + config.n_users);
    let cell = [half, half, SMALL_CELL_HEIGHT_M];
    out.push(Entity {
        role: Role::SmallCell,
        position: cell,
        speed_mps: 0.0,
        heading_rad: 0.0,
        tx_power_dbm: config.cell_power_dbm,
        antenna_gain_dbi: gain,
    });

    let mut r = rng::stream(seed, &[STREAM_PLACE, role_tag(Role::AuthenticatedUav)]);
    let h = uniform_open(&mut r, channel::MIN_UAV_ALTITUDE_M, max_alt);
    let dz = h - SMALL_CELL_HEIGHT_M;
    let horizontal = sqrt((d * d - dz * dz).max(0.0));
    let bearing = r.random::<f64>() * 2.0 * PI;
    out.push(Entity {
        role: Role::AuthenticatedUav,
        position: [cell[0] + horizontal * cos(bearing), cell[1] + horizontal * sin(bearing), h],
        speed_mps: 0.0,
        heading_rad: bearing,
        tx_power_dbm: config.user_power_dbm,
        antenna_gain_dbi: gain,
    });

    for j in 0..config.n_attackers {
        let mut r = rng::stream(seed, &[STREAM_PLACE, role_tag(Role::Jammer), j as u64]);
        let x = r.random::<f64>() * config.area_m;
        let y = r.random::<f64>() * config.area_m;
        let z = uniform_open(&mut r, channel::MIN_UAV_ALTITUDE_M, channel::MAX_UAV_ALTITUDE_M);
        out.push(Entity {
            role: Role::Jammer,
            position: [x, y, z],
            speed_mps: config.speed_mps,
            heading_rad: 0.0,
            tx_power_dbm: config.attacker_power_dbm,
            antenna_gain_dbi: gain,
        });
    }
    for u in 0..config.n_users {
        let mut r = rng::stream(seed, &[STREAM_PLACE, role_tag(Role::TerrestrialUser), u as u64]);
        let x = r.random::<f64>() * config.area_m;
        let y = r.random::<f64>() * config.area_m;
        let heading = r.random::<f64>() * 2.0 * PI;
        out.push(Entity {
            role: Role::TerrestrialUser,
            position: [x, y, USER_HEIGHT_M],
            speed_mps: config.speed_mps,
            heading_rad: heading,
            tx_power_dbm: config.user_power_dbm,
            antenna_gain_dbi: gain,
        });
    }
    Ok(out)
}

fn reflect(pos: &mut f64, heading_component: &mut f64, area: f64) {
    if *pos < 0.0 {
        *pos = -*pos;
        *heading_component = -*heading_component;
    } else if *pos > area {
        *pos = 2.0 * area - *pos;
        *heading_component = -*heading_component;
    }
    *pos = pos.clamp(0.0, area);
}

/// Advances entity positions by `dt_s`.
///
/// Moving jammers head straight for the authenticated UAV and stop at
/// [`JAMMER_MIN_SEPARATION_M`]; a jammer already inside that radius stays put.
/// Moving users follow their persistent heading and reflect off the area
/// boundary. Everything else is static.
pub fn step_mobility(entities: &mut [Entity], dt_s: f64, profile: SpeedProfile, area_m: f64) {
    if !(dt_s > 0.0) {
        return;
    }
    let uav = entities
        .iter()
        .find(|e| e.role == Role::AuthenticatedUav)
        .map(|e| e.position);
    for e in entities.iter_mut() {
        match e.role {
            Role::Jammer if profile.attackers_move() => {
                let Some(target) = uav else { continue };
                let delta = [
                    target[0] - e.position[0],
                    target[1] - e.position[1],
                    target[2] - e.position[2],
                ];
                let dist = sqrt(delta.iter().map(|v| v * v).sum());
                if dist <= JAMMER_MIN_SEPARATION_M {
                    continue;
                }
                let step = (e.speed_mps * dt_s).min(dist - JAMMER_MIN_SEPARATION_M);
                for (p, d) in e.position.iter_mut().zip(delta) {
                    *p += d / dist * step;
                }
            }
            Role::TerrestrialUser if profile.users_move() => {
                let mut hx = cos(e.heading_rad);
                let mut hy = sin(e.heading_rad);
                let step = e.speed_mps * dt_s;
                e.position[0] += hx * step;
                e.position[1] += hy * step;
                reflect(&mut e.position[0], &mut hx, area_m);
                reflect(&mut e.position[1], &mut hy, area_m);
                e.heading_rad = crate::math::atan2(hy, hx);
            }
            _ => {}
        }
    }
}

/// Received power `P + G − L − S` in dBm, where `G` sums both antenna gains
/// and `fading_loss_db` is the small-scale term that is subtracted.
pub fn received_power_dbm(tx: &Entity, rx: &Entity, loss_db: f64, fading_loss_db: f64) -> f64 {
    tx.tx_power_dbm + tx.antenna_gain_dbi + rx.antenna_gain_dbi - loss_db - fading_loss_db
}

/// SINR in dB of `signal_dbm` against noise plus the linear sum of interferers.
pub fn sinr_db(signal_dbm: f64, interferers_dbm: &[f64], noise: NoiseModel) -> f64 {
    let denom = db_to_linear(noise.noise_power_dbm)
        + interferers_dbm.iter().map(|p| db_to_linear(*p)).sum::<f64>();
    linear_to_db(db_to_linear(signal_dbm) / denom)
}

/// Total received power from all sources plus noise, in dBm.
pub fn rssi_dbm(received_dbm: &[f64], noise: NoiseModel) -> f64 {
    let total = db_to_linear(noise.noise_power_dbm)
        + received_dbm.iter().map(|p| db_to_linear(*p)).sum::<f64>();
    linear_to_db(total)
}

struct Link {
    tx: usize,
    stream: rng::Rng,
    /// Per-link fading seeds: index 0 for LoS, 1 for NLoS.
    fading_seeds: [u64; 2],
    doppler_speed: f64,
    condition: ChannelCondition,
    shadow_db: f64,
}

fn condition_index(c: ChannelCondition) -> usize {
    match c {
        ChannelCondition::LoS => 0,
        ChannelCondition::NLoS => 1,
    }
}

/// Fading tables for LoS and NLoS links.
#[derive(Debug, Clone, PartialEq)]
pub struct FadingTables {
    pub los: FadingTable,
    pub nlos: FadingTable,
}

impl Default for FadingTables {
    fn default() -> Self {
        Self {
            los: FadingTable::los_default(),
            nlos: FadingTable::nlos_default(),
        }
    }
}

impl FadingTables {
    fn get(&self, c: ChannelCondition) -> &FadingTable {
        match c {
            ChannelCondition::LoS => &self.los,
            ChannelCondition::NLoS => &self.nlos,
        }
    }
}

/// Runs one simulation with the default fading tables.
pub fn run_simulation(config: &ScenarioConfig) -> Result<TimeSeriesRun> {
    run_simulation_with(config, &FadingTables::default())
}

/// Runs one simulation.
///
/// Every tick: advance mobility (from the second tick on), redraw each link's
/// condition and shadowing at coherence boundaries, evaluate fading, then
/// combine received powers into SINR and RSSI at the authenticated UAV.
pub fn run_simulation_with(config: &ScenarioConfig, tables: &FadingTables) -> Result<TimeSeriesRun> {
    config.validate()?;
    tables.los.validate()?;
    tables.nlos.validate()?;
    let seed = config.seed;
    let n = config.sample_count();
    let dt = 1.0 / config.sample_rate_hz;
    let ticks_per_block = libm::round(config.coherence_s * config.sample_rate_hz).max(1.0) as usize;
    let noise = NoiseModel {
        noise_power_dbm: config.noise_power_dbm,
    };

    let mut entities = place_entities(config, seed)?;
    let uav_idx = 1;
    let mut links: Vec<Link> = Vec::new();
    let mut jammer_i = 0u64;
    let mut user_i = 0u64;
    for (idx, e) in entities.iter().enumerate() {
        let key = match e.role {
            Role::SmallCell => [role_tag(Role::SmallCell), 0],
            Role::Jammer => {
                jammer_i += 1;
                [role_tag(Role::Jammer), jammer_i - 1]
            }
            Role::TerrestrialUser => {
                user_i += 1;
                [role_tag(Role::TerrestrialUser), user_i - 1]
            }
            Role::AuthenticatedUav => continue,
        };
        let moves = match e.role {
            Role::Jammer => config.speed_profile.attackers_move(),
            Role::TerrestrialUser => config.speed_profile.users_move(),
            _ => false,
        };
        links.push(Link {
            tx: idx,
            stream: rng::stream(seed, &[STREAM_LINK, key[0], key[1]]),
            fading_seeds: [
                rng::derive(seed, &[STREAM_FADING, key[0], key[1], 0]),
                rng::derive(seed, &[STREAM_FADING, key[0], key[1], 1]),
            ],
            doppler_speed: if moves { e.speed_mps } else { 0.0 } + config.ambient_speed_mps,
            condition: ChannelCondition::LoS,
            shadow_db: 0.0,
        });
    }

    // Both fading states per link are built up front so tracks can borrow them.
    let states: Vec<[FadingState; 2]> = links
        .iter()
        .map(|l| {
            [
                FadingState::new(tables.get(ChannelCondition::LoS), l.fading_seeds[0]),
                FadingState::new(tables.get(ChannelCondition::NLoS), l.fading_seeds[1]),
            ]
        })
        .collect();
    let mut tracks: Vec<Option<(ChannelCondition, FadingTrack<'_>)>> =
        (0..links.len()).map(|_| None).collect();

    let mut rssi = Vec::with_capacity(n);
    let mut sinr = Vec::with_capacity(n);
    let mut interferers = Vec::with_capacity(links.len());
    let mut all = Vec::with_capacity(links.len());
    for k in 0..n {
        if k > 0 {
            step_mobility(&mut entities, dt, config.speed_profile, config.area_m);
        }
        let t = k as f64 * dt;
        let uav = entities[uav_idx];
        interferers.clear();
        all.clear();
        let mut signal = f64::NAN;
        for (li, link) in links.iter_mut().enumerate() {
            let tx = entities[link.tx];
            let raw = LinkGeometry::from_positions(tx.position, uav.position, MIN_LINK_DISTANCE_M)?;
            let geom = LinkGeometry::new(raw.d3d_m, raw.d2d_m, clamp_altitude(raw.h_m))?;
            if k % ticks_per_block == 0 {
                link.condition = match config.channel_mode {
                    ChannelMode::AlwaysLos => ChannelCondition::LoS,
                    ChannelMode::AlwaysNlos => ChannelCondition::NLoS,
                    ChannelMode::Probabilistic => {
                        let p = channel::los_probability(geom.d2d_m, geom.h_m);
                        channel::sample_condition(p, link.stream.random::<f64>())
                    }
                };
                let std = channel::shadowing_std(link.condition, geom.h_m)?;
                link.shadow_db = channel::sample_shadowing(std, &mut link.stream);
            }
            let cond = link.condition;
            let slot = &mut tracks[li];
            if slot.as_ref().map(|(c, _)| *c) != Some(cond) {
                let state = &states[li][condition_index(cond)];
                *slot = Some((
                    cond,
                    FadingTrack::new(state, link.doppler_speed, config.carrier_hz, t, dt),
                ));
            }
            let gain_db = slot.as_mut().map(|(_, tr)| tr.next_gain_db()).unwrap_or(0.0);
            let loss = channel::large_scale_loss(&geom, config.carrier_hz, cond, link.shadow_db)?;
            // A positive fading gain raises received power.
            let p = received_power_dbm(&tx, &uav, loss, -gain_db);
            all.push(p);
            if tx.role == Role::SmallCell {
                signal = p;
            } else {
                interferers.push(p);
            }
        }
        sinr.push(sinr_db(signal, &interferers, noise));
        rssi.push(rssi_dbm(&all, noise));
    }
    Ok(TimeSeriesRun {
        rssi_dbm: rssi,
        sinr_db: sinr,
        label: config.is_attack(),
        config: config.clone(),
        seed,
    })
}
