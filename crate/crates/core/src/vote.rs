//! Majority voting over the four flip-augmented predictions of a window, and
//! the full decision pipeline with a fallback for undecided windows.

use serde::{Deserialize, Serialize};

use crate::augment::tsa_expand;
use crate::classifier::Classifier;
use crate::dataset::{Label, WindowSample};
use crate::error::{config, domain};
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VoteClass {
    /// Attack.
    Class1,
    /// No attack.
    Class2,
    /// Undecided.
    Class3,
}

impl VoteClass {
    /// The binary label for a decided class.
    pub fn label(self) -> Option<Label> {
        match self {
            Self::Class1 => Some(Label::Attack),
            Self::Class2 => Some(Label::NoAttack),
            Self::Class3 => None,
        }
    }
}

/// How the four probabilities are combined.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "method")]
pub enum VoteMethod {
    /// Round each probability, then count votes.
    Method1,
    /// Average the probabilities, then threshold with an undecided band of
    /// half-width `delta` around 0.5.
    Method2 { delta: f64 },
}

impl VoteMethod {
    pub fn number(self) -> u8 {
        match self {
            Self::Method1 => 1,
            Self::Method2 { .. } => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VoteDecision {
    pub class: VoteClass,
    /// Attack probabilities of the four augmented views, in pattern order.
    pub probabilities: [f64; 4],
    pub method: VoteMethod,
    /// Set by the pipeline when the fallback classifier produced the verdict.
    pub fallback_invoked: bool,
}

impl VoteDecision {
    pub fn mean_probability(&self) -> f64 {
        self.probabilities.iter().sum::<f64>() / 4.0
    }

    /// Hard votes, 0.5 rounding up.
    pub fn votes(&self) -> [bool; 4] {
        self.probabilities.map(|p| p >= 0.5)
    }
}

fn check(p: &[f64; 4]) -> Result<()> {
    match p.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        Some(v) => Err(domain!("vote probability {v} outside [0, 1]")),
        None => Ok(()),
    }
}

/// Class from the number of attack votes out of four.
fn class_from_count(c1: usize) -> VoteClass {
    match c1 {
        3 | 4 => VoteClass::Class1,
        0 | 1 => VoteClass::Class2,
        _ => VoteClass::Class3,
    }
}

/// Hard voting: three or four agreeing votes decide, a 2–2 split is undecided.
pub fn method1(p: [f64; 4]) -> Result<VoteDecision> {
    check(&p)?;
    let c1 = p.iter().filter(|&&v| v >= 0.5).count();
    Ok(VoteDecision {
        class: class_from_count(c1),
        probabilities: p,
        method: VoteMethod::Method1,
        fallback_invoked: false,
    })
}

/// Soft voting on the mean probability.
pub fn method2(p: [f64; 4], delta: f64) -> Result<VoteDecision> {
    check(&p)?;
    if !(delta >= 0.0) {
        return Err(domain!("undecided band {delta} must be non-negative"));
    }
    let mean = p.iter().sum::<f64>() / 4.0;
    let class = if mean > 0.5 + delta {
        VoteClass::Class1
    } else if mean < 0.5 - delta {
        VoteClass::Class2
    } else {
        VoteClass::Class3
    };
    Ok(VoteDecision {
        class,
        probabilities: p,
        method: VoteMethod::Method2 { delta },
        fallback_invoked: false,
    })
}

pub fn vote(p: [f64; 4], method: VoteMethod) -> Result<VoteDecision> {
    match method {
        VoteMethod::Method1 => method1(p),
        VoteMethod::Method2 { delta } => method2(p, delta),
    }
}

/// Every hard-vote pattern with its hard-voting class. Bit `i` of the index
/// is the vote of view `i`.
pub fn vote_table() -> [([bool; 4], VoteClass); 16] {
    core::array::from_fn(|n| {
        let votes: [bool; 4] = core::array::from_fn(|i| n >> i & 1 == 1);
        (votes, class_from_count(n.count_ones() as usize))
    })
}

/// Final binary verdict of the pipeline with its vote record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatrVerdict {
    pub decision: VoteDecision,
    pub label: Label,
}

/// Expands `sample` into its four views, scores them with `model`, votes,
/// and resolves an undecided vote with `fallback` on the unmodified window.
pub fn datr_classify(
    sample: &WindowSample,
    model: &dyn Classifier,
    method: VoteMethod,
    fallback: Option<&dyn Classifier>,
) -> Result<DatrVerdict> {
    let quad = tsa_expand(sample);
    let mut p = [0.0; 4];
    for (pi, s) in p.iter_mut().zip(&quad.samples) {
        *pi = model.attack_probability(s)?;
    }
    let mut decision = vote(p, method)?;
    let label = match decision.class.label() {
        Some(l) => l,
        None => {
            let fb = fallback.ok_or_else(|| config!("undecided vote with no fallback classifier"))?;
            decision.fallback_invoked = true;
            fb.predict(quad.original())?
        }
    };
    Ok(DatrVerdict { decision, label })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::reverse;
    use crate::dataset::Origin;
    use proptest::prelude::*;

    #[test]
    fn method1_examples() {
        assert_eq!(method1([0.9, 0.8, 0.7, 0.2]).unwrap().class, VoteClass::Class1);
        assert_eq!(method1([0.6, 0.6, 0.4, 0.4]).unwrap().class, VoteClass::Class3);
        assert_eq!(method1([0.1, 0.2, 0.3, 0.4]).unwrap().class, VoteClass::Class2);
        assert!(matches!(method1([0.1, 1.2, 0.3, 0.4]), Err(crate::Error::Domain(_))));
    }

    #[test]
    fn half_rounds_up() {
        assert_eq!(method1([0.5, 0.5, 0.5, 0.0]).unwrap().class, VoteClass::Class1);
    }

    #[test]
    fn method2_examples() {
        assert_eq!(method2([0.9; 4], 0.0).unwrap().class, VoteClass::Class1);
        assert_eq!(method2([0.6, 0.6, 0.4, 0.4], 0.0).unwrap().class, VoteClass::Class3);
        let d = method2([0.6, 0.4, 0.4, 0.4], 0.0).unwrap();
        assert_eq!(d.class, VoteClass::Class2);
        assert!((d.mean_probability() - 0.45).abs() < 1e-15);
        assert_eq!(method2([0.6, 0.4, 0.4, 0.4], 0.1).unwrap().class, VoteClass::Class3);
        assert!(method2([0.5; 4], -0.1).is_err());
    }

    #[test]
    fn table_has_six_ties() {
        let t = vote_table();
        assert_eq!(t.iter().filter(|(_, c)| *c == VoteClass::Class3).count(), 6);
        assert_eq!(t[15].1, VoteClass::Class1);
        assert_eq!(t[1].1, VoteClass::Class2);
        for (votes, class) in t {
            let p = votes.map(|v| if v { 1.0 } else { 0.0 });
            assert_eq!(method1(p).unwrap().class, class);
        }
    }

    /// Returns fixed probabilities keyed by which channels are reversed.
    struct ByPattern {
        base: WindowSample,
        p: [f64; 4],
    }

    impl Classifier for ByPattern {
        fn attack_probability(&self, s: &WindowSample) -> Result<f64> {
            let rf = s.rssi != self.base.rssi;
            let sf = s.sinr != self.base.sinr;
            Ok(self.p[(rf as usize) * 2 + sf as usize])
        }
    }

    struct Constant(f64);

    impl Classifier for Constant {
        fn attack_probability(&self, _: &WindowSample) -> Result<f64> {
            Ok(self.0)
        }
    }

    fn sample() -> WindowSample {
        WindowSample {
            rssi: (0..6).map(f64::from).collect(),
            sinr: (0..6).map(|i| f64::from(i * i)).collect(),
            label: Label::NoAttack,
            origin: Origin { run: 0, start: 0 },
        }
    }

    #[test]
    fn unanimous_skips_fallback() {
        let s = sample();
        let m = Constant(0.9);
        let v = datr_classify(&s, &m, VoteMethod::Method1, None).unwrap();
        assert!(!v.decision.fallback_invoked);
        assert_eq!(v.label, Label::Attack);
    }

    #[test]
    fn tie_goes_to_fallback() {
        let s = sample();
        assert_eq!(reverse(&reverse(&s.rssi)), s.rssi);
        let m = ByPattern {
            base: s.clone(),
            p: [1.0, 1.0, 0.0, 0.0],
        };
        let v = datr_classify(&s, &m, VoteMethod::Method1, Some(&Constant(1.0))).unwrap();
        assert!(v.decision.fallback_invoked);
        assert_eq!(v.decision.class, VoteClass::Class3);
        assert_eq!(v.decision.probabilities, [1.0, 1.0, 0.0, 0.0]);
        assert_eq!(v.label, Label::Attack);
        let err = datr_classify(&s, &m, VoteMethod::Method1, None);
        assert!(matches!(err, Err(crate::Error::Config(_))));
    }

    fn prob() -> impl Strategy<Value = f64> {
        prop_oneof![0.0..=1.0f64, Just(0.5), Just(0.0), Just(1.0)]
    }

    proptest! {
        #[test]
        fn permutation_invariant(p in [prob(), prob(), prob(), prob()], rot in 0usize..4) {
            let mut q = p;
            q.rotate_left(rot);
            q.swap(0, 1);
            prop_assert_eq!(method1(p).unwrap().class, method1(q).unwrap().class);
            // The mean is order dependent in the last bit; compare on
            // inputs whose sums are exact.
            let pr = p.map(|v| (v * 64.0).round() / 64.0);
            let mut qr = pr;
            qr.rotate_left(rot);
            qr.swap(0, 1);
            prop_assert_eq!(method2(pr, 0.0).unwrap().class, method2(qr, 0.0).unwrap().class);
        }

        #[test]
        fn complement_swaps_classes(p in [0.0..=1.0f64, 0.0..=1.0f64, 0.0..=1.0f64, 0.0..=1.0f64]) {
            let c = p.map(|v| 1.0 - v);
            let swap = |k: VoteClass| match k {
                VoteClass::Class1 => VoteClass::Class2,
                VoteClass::Class2 => VoteClass::Class1,
                VoteClass::Class3 => VoteClass::Class3,
            };
            if p.iter().all(|v| *v != 0.5) && c.iter().all(|v| *v != 0.5) {
                prop_assert_eq!(method1(c).unwrap().class, swap(method1(p).unwrap().class));
            }
            let pr = p.map(|v| (v * 64.0).round() / 64.0);
            let cr = pr.map(|v| 1.0 - v);
            prop_assert_eq!(method2(cr, 0.0).unwrap().class, swap(method2(pr, 0.0).unwrap().class));
        }

        #[test]
        fn undecided_only_at_exact_mean(p in [prob(), prob(), prob(), prob()]) {
            let d = method2(p, 0.0).unwrap();
            prop_assert_eq!(d.class == VoteClass::Class3, d.mean_probability() == 0.5);
        }

        #[test]
        fn pipeline_never_undecided(p in [prob(), prob(), prob(), prob()], m2 in any::<bool>()) {
            let s = sample();
            let m = ByPattern { base: s.clone(), p };
            let method = if m2 { VoteMethod::Method2 { delta: 0.0 } } else { VoteMethod::Method1 };
            let v = datr_classify(&s, &m, method, Some(&Constant(0.2))).unwrap();
            prop_assert_eq!(v.decision.fallback_invoked, v.decision.class == VoteClass::Class3);
        }
    }
}
