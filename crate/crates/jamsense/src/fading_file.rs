//! Fading tables on disk.
//!
//! ```text
//! #los 0.6 0 0
//! power_fraction,delay_s,aoa_deg,aod_deg,zoa_deg,zod_deg
//! 0.1,0,-30,12,90,95
//! ```
//!
//! One cluster per row. The optional `#los power_fraction aoa aod` line adds a
//! direct component. Clusters get the default angular spreads and 20 rays.

use std::fmt::Write as _;
use std::path::Path;

use jamsense_core::channel::{AngularSpreads, Cluster, FadingTable, LosComponent};
use serde::Deserialize;

use crate::error::{self, Error, Result};

pub const HEADER: [&str; 6] = ["power_fraction", "delay_s", "aoa_deg", "aod_deg", "zoa_deg", "zod_deg"];
pub const DEFAULT_RAYS: usize = 20;

#[derive(Deserialize)]
struct Row {
    power_fraction: f64,
    delay_s: f64,
    aoa_deg: f64,
    aod_deg: f64,
    zoa_deg: f64,
    zod_deg: f64,
}

fn parse_los(rest: &str, path: &Path, line: u64) -> Result<LosComponent> {
    let v: Vec<f64> = rest
        .split_whitespace()
        .map(str::parse)
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::parse(path, line, format!("bad #los line: {e}")))?;
    let [power_fraction, aoa_deg, aod_deg] = v[..] else {
        return Err(Error::parse(path, line, "#los needs power_fraction aoa aod"));
    };
    Ok(LosComponent {
        power_fraction,
        aoa_deg,
        aod_deg,
    })
}

pub fn from_str(text: &str, path: &Path) -> Result<FadingTable> {
    let mut los = None;
    for (i, line) in text.lines().enumerate() {
        if let Some(rest) = line.strip_prefix("#los") {
            if los.is_some() {
                return Err(Error::parse(path, i as u64 + 1, "more than one #los line"));
            }
            los = Some(parse_los(rest, path, i as u64 + 1)?);
        }
    }
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header_line = text.lines().position(|l| !l.starts_with('#')).unwrap_or(0) as u64 + 1;
    let headers = reader
        .headers()
        .map_err(|e| Error::parse(path, header_line, e.to_string()))?;
    if headers.iter().ne(HEADER) {
        return Err(Error::parse(path, header_line, format!("expected header {}", HEADER.join(","))));
    }
    let mut clusters = Vec::new();
    for row in reader.deserialize::<Row>() {
        let r = row.map_err(|e| Error::parse(path, e.position().map_or(0, |p| p.line()), e.to_string()))?;
        clusters.push(Cluster {
            power_fraction: r.power_fraction,
            delay_s: r.delay_s,
            aoa_deg: r.aoa_deg,
            aod_deg: r.aod_deg,
            zoa_deg: r.zoa_deg,
            zod_deg: r.zod_deg,
            spreads: AngularSpreads::default(),
        });
    }
    Ok(FadingTable::new(clusters, DEFAULT_RAYS, los)?)
}

pub fn load_fading_table(path: &Path) -> Result<FadingTable> {
    from_str(&error::read_string(path)?, path)
}

/// Writes the cluster geometry; per-cluster spreads and the ray count are not
/// part of the format.
pub fn to_string(table: &FadingTable) -> String {
    let mut out = String::new();
    if let Some(l) = table.los {
        let _ = writeln!(out, "#los {:?} {:?} {:?}", l.power_fraction, l.aoa_deg, l.aod_deg);
    }
    out.push_str(&HEADER.join(","));
    out.push('\n');
    for c in &table.clusters {
        let _ = writeln!(
            out,
            "{:?},{:?},{:?},{:?},{:?},{:?}",
            c.power_fraction, c.delay_s, c.aoa_deg, c.aod_deg, c.zoa_deg, c.zod_deg
        );
    }
    out
}
