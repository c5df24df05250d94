//! Run files: `#meta` JSON comment lines followed by a `t_s,rssi_dbm,sinr_db`
//! CSV body.
//!
//! ```text
//! #meta {"config":{...}}
//! #meta {"seed":17}
//! #meta {"label":true}
//! t_s,rssi_dbm,sinr_db
//! 0,-75.41,18.2
//! ```
//!
//! Floats are written in shortest round-trip form, so a save/load cycle is
//! bit-exact.

use std::fmt::Write as _;
use std::path::Path;

use jamsense_core::scenario::{ScenarioConfig, TimeSeriesRun};
use serde::Deserialize;
use serde_json::{Map, Value};

use crate::error::{self, Error, Result};

const META: &str = "#meta ";
pub const HEADER: [&str; 3] = ["t_s", "rssi_dbm", "sinr_db"];

/// Renders a run in the run-file format.
pub fn to_string(run: &TimeSeriesRun) -> String {
    let mut out = String::with_capacity(run.len() * 48 + 1024);
    let config = serde_json::to_string(&run.config).expect("scenario config serializes");
    let _ = writeln!(out, "{META}{{\"config\":{config}}}");
    let _ = writeln!(out, "{META}{{\"seed\":{}}}", run.seed);
    let _ = writeln!(out, "{META}{{\"label\":{}}}", run.label);
    out.push_str(&HEADER.join(","));
    out.push('\n');
    let rate = run.config.sample_rate_hz;
    for (i, (r, s)) in run.rssi_dbm.iter().zip(&run.sinr_db).enumerate() {
        let _ = writeln!(out, "{},{r:?},{s:?}", i as f64 / rate);
    }
    out
}

#[derive(Deserialize)]
struct Meta {
    config: ScenarioConfig,
    seed: u64,
    label: bool,
}

/// Parses run-file text; `path` only labels errors.
pub fn from_str(text: &str, path: &Path) -> Result<TimeSeriesRun> {
    let mut meta = Map::new();
    let mut last_meta_line = 0;
    for (i, line) in text.lines().enumerate() {
        let Some(json) = line.strip_prefix(META) else {
            if line.starts_with('#') {
                continue;
            }
            break;
        };
        let line_no = i as u64 + 1;
        match serde_json::from_str::<Value>(json) {
            Ok(Value::Object(m)) => meta.extend(m),
            Ok(_) => return Err(Error::parse(path, line_no, "#meta line is not a JSON object")),
            Err(e) => return Err(Error::parse(path, line_no, format!("bad #meta JSON: {e}"))),
        }
        last_meta_line = line_no;
    }
    let meta: Meta = serde_json::from_value(Value::Object(meta))
        .map_err(|e| Error::parse(path, last_meta_line.max(1), format!("incomplete metadata: {e}")))?;

    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let header_line = last_meta_line + 1;
    let headers = reader
        .headers()
        .map_err(|e| Error::parse(path, header_line, e.to_string()))?;
    if headers.iter().ne(HEADER) {
        return Err(Error::parse(
            path,
            header_line,
            format!("expected header {}, found {}", HEADER.join(","), headers.iter().collect::<Vec<_>>().join(",")),
        ));
    }
    let expected = meta.config.sample_count();
    let mut rssi = Vec::with_capacity(expected);
    let mut sinr = Vec::with_capacity(expected);
    let mut line = header_line;
    for row in reader.deserialize::<(f64, f64, f64)>() {
        let (_, r, s) = row.map_err(|e| {
            let at = e.position().map_or(line + 1, |p| p.line());
            Error::parse(path, at, e.to_string())
        })?;
        line += 1;
        if !r.is_finite() || !s.is_finite() {
            return Err(Error::parse(path, line, "non-finite sample"));
        }
        rssi.push(r);
        sinr.push(s);
    }
    if rssi.len() != expected {
        return Err(Error::parse(
            path,
            line,
            format!("expected {expected} samples from the metadata, found {}", rssi.len()),
        ));
    }
    Ok(TimeSeriesRun {
        rssi_dbm: rssi,
        sinr_db: sinr,
        label: meta.label,
        config: meta.config,
        seed: meta.seed,
    })
}

pub fn save_run(path: &Path, run: &TimeSeriesRun) -> Result<()> {
    error::write(path, to_string(run))
}

pub fn load_run(path: &Path) -> Result<TimeSeriesRun> {
    from_str(&error::read_string(path)?, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use jamsense_core::scenario::run_simulation;

    fn short_run(rate: f64) -> TimeSeriesRun {
        let cfg = ScenarioConfig {
            n_attackers: 2,
            duration_s: 1.0,
            sample_rate_hz: rate,
            seed: 9,
            ..Default::default()
        };
        run_simulation(&cfg).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let run = short_run(100.0);
        let back = from_str(&to_string(&run), Path::new("r.csv")).unwrap();
        assert_eq!(back, run);
        for (a, b) in run.rssi_dbm.iter().zip(&back.rssi_dbm) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn other_sample_rate_keeps_its_metadata() {
        let run = short_run(40.0);
        let back = from_str(&to_string(&run), Path::new("r.csv")).unwrap();
        assert_eq!(back.len(), 40);
        assert_eq!(back.config.sample_rate_hz, 40.0);
    }

    #[test]
    fn truncation_reports_a_line() {
        let text = to_string(&short_run(100.0));
        let cut = &text[..text.len() - 30];
        match from_str(cut, Path::new("r.csv")) {
            Err(Error::Parse { line, .. }) => assert!(line > 4),
            other => panic!("{other:?}"),
        }
        let whole_lines: String = text.lines().take(50).map(|l| format!("{l}\n")).collect();
        match from_str(&whole_lines, Path::new("r.csv")) {
            Err(Error::Parse { line, msg, .. }) => {
                assert_eq!(line, 50);
                assert!(msg.contains("expected 100"), "{msg}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_metadata_and_header() {
        let text = to_string(&short_run(100.0));
        let broken = text.replacen("#meta {\"seed\"", "#meta {seed", 1);
        assert!(matches!(from_str(&broken, Path::new("r")), Err(Error::Parse { line: 2, .. })));
        let no_label: String = text.lines().filter(|l| !l.contains("label")).map(|l| format!("{l}\n")).collect();
        assert!(matches!(from_str(&no_label, Path::new("r")), Err(Error::Parse { .. })));
        let bad_header = text.replace("t_s,rssi_dbm,sinr_db", "t,rssi,sinr");
        assert!(matches!(from_str(&bad_header, Path::new("r")), Err(Error::Parse { line: 4, .. })));
        let bad_value = text.replacen("\n0,", "\n0,abc,", 1);
        assert!(matches!(from_str(&bad_value, Path::new("r")), Err(Error::Parse { line: 5, .. })));
    }
}
