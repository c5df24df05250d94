//! Flip-pattern time-series augmentation.
//!
//! Every window expands into four variants: each of the two channels kept in
//! order or reversed in time.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataset::WindowSample;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    Same,
    Flipped,
}

/// (RSSI orientation, SINR orientation).
pub type FlipPattern = (Orientation, Orientation);

/// The four patterns in table order.
pub const PATTERNS: [FlipPattern; 4] = [
    (Orientation::Same, Orientation::Same),
    (Orientation::Same, Orientation::Flipped),
    (Orientation::Flipped, Orientation::Same),
    (Orientation::Flipped, Orientation::Flipped),
];

/// Four augmented views of one window, ordered as [`PATTERNS`].
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedQuad {
    pub samples: [WindowSample; 4],
}

impl AugmentedQuad {
    pub fn patterns(&self) -> [FlipPattern; 4] {
        PATTERNS
    }

    /// The unmodified member.
    pub fn original(&self) -> &WindowSample {
        &self.samples[0]
    }
}

/// Temporal order inversion.
pub fn reverse(xs: &[f64]) -> Vec<f64> {
    xs.iter().rev().copied().collect()
}

fn orient(xs: &[f64], o: Orientation) -> Vec<f64> {
    match o {
        Orientation::Same => xs.to_vec(),
        Orientation::Flipped => reverse(xs),
    }
}

pub fn tsa_expand(sample: &WindowSample) -> AugmentedQuad {
    let make = |(r, s): FlipPattern| WindowSample {
        rssi: orient(&sample.rssi, r),
        sinr: orient(&sample.sinr, s),
        label: sample.label,
        origin: sample.origin,
    };
    AugmentedQuad {
        samples: PATTERNS.map(make),
    }
}

/// Replaces every sample by its four variants and shuffles the result.
pub fn augment_training_set(samples: &[WindowSample], seed: u64) -> Vec<WindowSample> {
    let mut out: Vec<WindowSample> = samples
        .iter()
        .flat_map(|s| tsa_expand(s).samples)
        .collect();
    out.shuffle(&mut rng::stream(seed, &[0xA06]));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Label, Origin};
    use alloc::vec;

    fn sample(rssi: Vec<f64>, sinr: Vec<f64>) -> WindowSample {
        WindowSample {
            rssi,
            sinr,
            label: Label::Attack,
            origin: Origin { run: 1, start: 0 },
        }
    }

    #[test]
    fn table_example() {
        let q = tsa_expand(&sample(vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]));
        assert_eq!(q.samples[0].rssi, vec![1.0, 2.0, 3.0]);
        assert_eq!(q.samples[0].sinr, vec![4.0, 5.0, 6.0]);
        assert_eq!(q.samples[1].rssi, vec![1.0, 2.0, 3.0]);
        assert_eq!(q.samples[1].sinr, vec![6.0, 5.0, 4.0]);
        assert_eq!(q.samples[2].rssi, vec![3.0, 2.0, 1.0]);
        assert_eq!(q.samples[2].sinr, vec![4.0, 5.0, 6.0]);
        assert_eq!(q.samples[3].rssi, vec![3.0, 2.0, 1.0]);
        assert_eq!(q.samples[3].sinr, vec![6.0, 5.0, 4.0]);
    }

    #[test]
    fn palindromes_give_equal_members() {
        let q = tsa_expand(&sample(vec![1.0, 2.0, 1.0], vec![3.0, 3.0]));
        assert!(q.samples.iter().all(|s| *s == q.samples[0]));
    }

    #[test]
    fn fourth_member_reflips_to_first() {
        let s = sample(vec![0.5, -1.0, 2.0, 7.0], vec![1.0, 1.5, -3.0, 0.0]);
        let q = tsa_expand(&s);
        assert_eq!(reverse(&q.samples[3].rssi), s.rssi);
        assert_eq!(reverse(&q.samples[3].sinr), s.sinr);
        assert_eq!(q.original(), &s);
        assert_eq!(q.patterns(), PATTERNS);
    }

    #[test]
    fn training_expansion() {
        let xs: Vec<_> = (0..10)
            .map(|i| WindowSample {
                rssi: vec![i as f64, 0.0],
                sinr: vec![0.0, i as f64],
                label: if i < 3 { Label::Attack } else { Label::NoAttack },
                origin: Origin { run: i, start: 0 },
            })
            .collect();
        let out = augment_training_set(&xs, 5);
        assert_eq!(out.len(), 40);
        assert_eq!(out.iter().filter(|s| s.label == Label::Attack).count(), 12);
        assert_eq!(out, augment_training_set(&xs, 5));
    }

    proptest::proptest! {
        #[test]
        fn reverse_is_involution(xs in proptest::collection::vec(-1e6f64..1e6, 0..64)) {
            proptest::prop_assert_eq!(reverse(&reverse(&xs)), xs);
        }
    }
}
