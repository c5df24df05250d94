//! Common interface for anything that scores a window.

use crate::dataset::{Label, WindowSample};
use crate::nn::Model;
use crate::Result;

/// A binary window classifier.
pub trait Classifier {
    /// Probability that the window contains an attack.
    fn attack_probability(&self, sample: &WindowSample) -> Result<f64>;

    /// Hard decision with ties going to the attack class.
    fn predict(&self, sample: &WindowSample) -> Result<Label> {
        Ok(Label::from_attack(self.attack_probability(sample)? >= 0.5))
    }
}

impl Classifier for Model {
    fn attack_probability(&self, sample: &WindowSample) -> Result<f64> {
        Model::attack_probability(self, sample)
    }
}

impl<C: Classifier + ?Sized> Classifier for &C {
    fn attack_probability(&self, sample: &WindowSample) -> Result<f64> {
        (**self).attack_probability(sample)
    }
}
