//! Checkpoint container shared by the network and the baselines.
//!
//! Layout: one line of JSON header, a newline, then the parameter payload as
//! little-endian `f64` values. The header carries the model kind, the
//! architecture, the seed, the normalization statistics, an offset table of
//! named tensors and the SHA-256 of the payload.

use std::path::Path;

use jamsense_core::baselines::{GaussianNb, LogReg};
use jamsense_core::classifier::Classifier;
use jamsense_core::dataset::{NormStats, WindowSample};
use jamsense_core::nn::{ArchConfig, Model, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{self, Error, Result};
use crate::sha256_hex;

pub const FORMAT: &str = "jamsense-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Mhdnn,
    Gnb,
    Logreg,
}

/// Position of one tensor in the payload, counted in `f64` elements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub format: String,
    pub version: u32,
    pub kind: Kind,
    /// Window length the model accepts.
    pub w: usize,
    pub arch: Option<ArchConfig>,
    pub seed: u64,
    pub norm_stats: NormStats,
    pub tensors: Vec<TensorEntry>,
    /// Payload size in bytes.
    pub payload_len: usize,
    pub sha256: String,
}

/// A trained classifier of any supported kind.
#[derive(Debug, Clone)]
pub enum StoredModel {
    Mhdnn(Model),
    Gnb(GaussianNb),
    Logreg(LogReg),
}

impl StoredModel {
    pub fn kind(&self) -> Kind {
        match self {
            Self::Mhdnn(_) => Kind::Mhdnn,
            Self::Gnb(_) => Kind::Gnb,
            Self::Logreg(_) => Kind::Logreg,
        }
    }

    fn named_tensors(&self) -> Vec<(String, Tensor)> {
        match self {
            Self::Mhdnn(m) => m.params().iter().map(|(n, t)| (n.to_string(), t.clone())).collect(),
            Self::Gnb(g) => vec![
                ("priors".into(), Tensor::vector(g.priors.to_vec())),
                ("mean.no_attack".into(), Tensor::vector(g.means[0].clone())),
                ("mean.attack".into(), Tensor::vector(g.means[1].clone())),
                ("var.no_attack".into(), Tensor::vector(g.vars[0].clone())),
                ("var.attack".into(), Tensor::vector(g.vars[1].clone())),
            ],
            Self::Logreg(l) => vec![
                ("weights".into(), Tensor::vector(l.weights.clone())),
                ("bias".into(), Tensor::vector(vec![l.bias])),
            ],
        }
    }
}

impl Classifier for StoredModel {
    fn attack_probability(&self, sample: &WindowSample) -> jamsense_core::Result<f64> {
        match self {
            Self::Mhdnn(m) => m.attack_probability(sample),
            Self::Gnb(g) => g.attack_probability(sample),
            Self::Logreg(l) => l.attack_probability(sample),
        }
    }
}

/// A model plus everything needed to apply it to raw windows.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: StoredModel,
    pub w: usize,
    pub seed: u64,
    pub norm_stats: NormStats,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut tensors = Vec::new();
        let mut payload = Vec::new();
        let mut offset = 0;
        for (name, t) in self.model.named_tensors() {
            tensors.push(TensorEntry {
                name,
                shape: t.shape().to_vec(),
                offset,
            });
            offset += t.len();
            for v in t.data() {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        }
        let header = Header {
            format: FORMAT.into(),
            version: VERSION,
            kind: self.model.kind(),
            w: self.w,
            arch: match &self.model {
                StoredModel::Mhdnn(m) => Some(m.arch.clone()),
                _ => None,
            },
            seed: self.seed,
            norm_stats: self.norm_stats,
            tensors,
            payload_len: payload.len(),
            sha256: sha256_hex(&payload),
        };
        let mut out = serde_json::to_vec(&header).expect("header serializes");
        out.push(b'\n');
        out.extend(payload);
        out
    }

    /// Parses and validates a checkpoint; `path` only labels errors.
    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let split = bytes
            .iter()
            .position(|b| *b == b'\n')
            .ok_or_else(|| Error::corrupt(path, "missing header line"))?;
        let header: Header = serde_json::from_slice(&bytes[..split])
            .map_err(|e| Error::corrupt(path, format!("bad header: {e}")))?;
        if header.format != FORMAT {
            return Err(Error::corrupt(path, format!("not a checkpoint (format {:?})", header.format)));
        }
        if header.version != VERSION {
            return Err(Error::corrupt(path, format!("unsupported version {}", header.version)));
        }
        let payload = &bytes[split + 1..];
        if payload.len() != header.payload_len {
            return Err(Error::corrupt(
                path,
                format!("payload is {} bytes, header says {}", payload.len(), header.payload_len),
            ));
        }
        if sha256_hex(payload) != header.sha256 {
            return Err(Error::corrupt(path, "payload checksum mismatch"));
        }
        let values: Vec<f64> = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let mut named = Vec::with_capacity(header.tensors.len());
        let mut next = 0;
        for e in &header.tensors {
            let len: usize = e.shape.iter().product();
            if e.offset != next || e.offset + len > values.len() {
                return Err(Error::corrupt(path, format!("tensor {} lies outside the payload", e.name)));
            }
            next += len;
            let t = Tensor::from_vec(&e.shape, values[e.offset..e.offset + len].to_vec())?;
            named.push((e.name.clone(), t));
        }
        if next != values.len() || !payload.len().is_multiple_of(8) {
            return Err(Error::corrupt(path, "payload has trailing data"));
        }
        let model = match header.kind {
            Kind::Mhdnn => {
                let arch = header
                    .arch
                    .clone()
                    .ok_or_else(|| Error::corrupt(path, "network checkpoint without architecture"))?;
                if arch.w != header.w {
                    return Err(Error::corrupt(path, "architecture window differs from header"));
                }
                let mut m = Model::new(arch, header.seed)?;
                m.load_params(named)?;
                StoredModel::Mhdnn(m)
            }
            Kind::Gnb => {
                let [p, m0, m1, v0, v1] = take(named, ["priors", "mean.no_attack", "mean.attack", "var.no_attack", "var.attack"], path)?;
                let d = header.w * 2;
                if p.len() != 2 || [&m0, &m1, &v0, &v1].iter().any(|t| t.len() != d) {
                    return Err(Error::corrupt(path, "naive Bayes tensors have the wrong size"));
                }
                StoredModel::Gnb(GaussianNb {
                    priors: [p[0], p[1]],
                    means: [m0, m1],
                    vars: [v0, v1],
                })
            }
            Kind::Logreg => {
                let [w, b] = take(named, ["weights", "bias"], path)?;
                if w.len() != header.w * 2 || b.len() != 1 {
                    return Err(Error::corrupt(path, "logistic regression tensors have the wrong size"));
                }
                StoredModel::Logreg(LogReg { weights: w, bias: b[0] })
            }
        };
        Ok(Self {
            model,
            w: header.w,
            seed: header.seed,
            norm_stats: header.norm_stats,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        error::write(path, self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&error::read(path)?, path)
    }
}

/// Unpacks tensors that must appear with exactly these names, in order.
fn take<const N: usize>(named: Vec<(String, Tensor)>, names: [&str; N], path: &Path) -> Result<[Vec<f64>; N]> {
    let got: Vec<&str> = named.iter().map(|(n, _)| n.as_str()).collect();
    if got != names {
        return Err(Error::corrupt(path, format!("expected tensors {names:?}, found {got:?}")));
    }
    let data: Vec<Vec<f64>> = named.into_iter().map(|(_, t)| t.into_data()).collect();
    Ok(data.try_into().expect("length checked"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use jamsense_core::dataset::{Label, Origin};
    use jamsense_core::nn::Variant;

    fn sample(w: usize, shift: f64) -> WindowSample {
        WindowSample {
            rssi: (0..w).map(|i| (i as f64 * 0.3).sin() + shift).collect(),
            sinr: (0..w).map(|i| (i as f64 * 0.1).cos() - shift).collect(),
            label: Label::from_attack(shift > 0.0),
            origin: Origin { run: 0, start: 0 },
        }
    }

    fn stats() -> NormStats {
        NormStats {
            rssi_mean: -70.0,
            rssi_std: 4.0,
            sinr_mean: 3.0,
            sinr_std: 8.0,
        }
    }

    fn round_trip(ck: &Checkpoint) -> Checkpoint {
        Checkpoint::from_bytes(&ck.to_bytes(), Path::new("m.ckpt")).unwrap()
    }

    #[test]
    fn network_round_trip_preserves_predictions() {
        for v in [Variant::Attention, Variant::Lstm] {
            let m = Model::new(ArchConfig::reference(v, 50), 3).unwrap();
            let ck = Checkpoint {
                model: StoredModel::Mhdnn(m),
                w: 50,
                seed: 3,
                norm_stats: stats(),
            };
            let back = round_trip(&ck);
            let s = sample(50, 0.4);
            assert_eq!(
                ck.model.attack_probability(&s).unwrap().to_bits(),
                back.model.attack_probability(&s).unwrap().to_bits()
            );
            assert_eq!(back.norm_stats, stats());
            assert_eq!(back.to_bytes(), ck.to_bytes());
        }
    }

    #[test]
    fn baselines_round_trip() {
        let data: Vec<WindowSample> = (0..10).map(|i| sample(20, if i % 2 == 0 { 1.0 } else { -1.0 })).collect();
        let g = jamsense_core::baselines::gnb_fit(&data).unwrap();
        let l = jamsense_core::baselines::logreg_fit(&data, &Default::default()).unwrap();
        for model in [StoredModel::Gnb(g), StoredModel::Logreg(l)] {
            let ck = Checkpoint {
                model,
                w: 20,
                seed: 0,
                norm_stats: NormStats::identity(),
            };
            let back = round_trip(&ck);
            assert_eq!(back.model.kind(), ck.model.kind());
            assert_eq!(back.to_bytes(), ck.to_bytes());
        }
    }

    #[test]
    fn corruption_is_detected() {
        let m = Model::new(ArchConfig::reference(Variant::Lstm, 50), 1).unwrap();
        let ck = Checkpoint {
            model: StoredModel::Mhdnn(m),
            w: 50,
            seed: 1,
            norm_stats: stats(),
        };
        let bytes = ck.to_bytes();
        let p = Path::new("m.ckpt");

        let mut flipped = bytes.clone();
        *flipped.last_mut().unwrap() ^= 1;
        assert!(matches!(Checkpoint::from_bytes(&flipped, p), Err(Error::Corrupt { .. })));

        let truncated = &bytes[..bytes.len() - 8];
        assert!(matches!(Checkpoint::from_bytes(truncated, p), Err(Error::Corrupt { .. })));

        let text = String::from_utf8_lossy(&bytes[..bytes.iter().position(|b| *b == b'\n').unwrap()]).to_string();
        let renamed = text.replace("rssi.conv1.weight", "rssi.conv9.weight");
        let mut forged = renamed.into_bytes();
        forged.extend_from_slice(&bytes[bytes.iter().position(|b| *b == b'\n').unwrap()..]);
        assert!(matches!(Checkpoint::from_bytes(&forged, p), Err(Error::Core(_))));

        assert!(matches!(Checkpoint::from_bytes(b"{}\n", p), Err(Error::Corrupt { .. })));
    }
}
