//! SGD with momentum and L2 weight decay.

use super::{MatcherError, MatcherGrads, MatcherParams};

/// Smallest temperature the optimizer will leave in place.
const MIN_TAU: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub learn_temperature: bool,
    #[serde(skip)]
    velocity: Option<MatcherGrads>,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64, weight_decay: f64) -> Self {
        Self { lr, momentum, weight_decay, learn_temperature: false, velocity: None }
    }

    /// `v <- mu v + (g + wd p)`, `p <- p - lr v`. Parameters are untouched
    /// when the gradient is not finite.
    pub fn step(&mut self, params: &mut MatcherParams, grads: &MatcherGrads) -> Result<(), MatcherError> {
        if !grads.is_finite() {
            return Err(MatcherError::NonFiniteGradient("optimizer step"));
        }
        let v = self.velocity.get_or_insert_with(|| MatcherGrads::zeros_like(params));
        let wd = self.weight_decay;
        v.w_coarse *= self.momentum;
        v.w_coarse += &grads.w_coarse + &params.w_coarse * wd;
        v.w_fine *= self.momentum;
        v.w_fine += &grads.w_fine + &params.w_fine * wd;
        params.w_coarse -= &v.w_coarse * self.lr;
        params.w_fine -= &v.w_fine * self.lr;
        if self.learn_temperature {
            v.tau = self.momentum * v.tau + grads.tau;
            params.tau = (params.tau - self.lr * v.tau).max(MIN_TAU);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matcher::MatcherConfig;

    #[test]
    fn zero_lr_is_identity() {
        let mut p = MatcherParams::init(&MatcherConfig::default(), 0);
        let before = p.clone();
        let mut g = MatcherGrads::zeros_like(&p);
        g.w_coarse.fill(1.0);
        Sgd::new(0.0, 0.9, 0.1).step(&mut p, &g).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn weight_decay_shrinks() {
        let mut p = MatcherParams::init(&MatcherConfig::default(), 0);
        let before = p.clone();
        Sgd::new(0.1, 0.9, 0.5).step(&mut p, &MatcherGrads::zeros_like(&before)).unwrap();
        for k in 0..p.num_parameters() - 1 {
            assert!((p.get_flat(k) - before.get_flat(k) * 0.95).abs() < 1e-15);
        }
        assert_eq!(p.tau, before.tau);
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let mut p = MatcherParams::init(&MatcherConfig::default(), 0);
        let before = p.clone();
        let mut g = MatcherGrads::zeros_like(&p);
        g.w_fine[(0, 0)] = f64::NAN;
        assert!(matches!(Sgd::new(0.1, 0.9, 0.0).step(&mut p, &g), Err(MatcherError::NonFiniteGradient(_))));
        assert_eq!(p, before);
    }

    #[test]
    fn quadratic_toy_decreases() {
        // L = 0.5 |W|^2 over both embeddings.
        let mut p = MatcherParams::init(&MatcherConfig::default(), 3);
        let loss = |p: &MatcherParams| 0.5 * (p.w_coarse.norm_squared() + p.w_fine.norm_squared());
        let l0 = loss(&p);
        let g = MatcherGrads { w_coarse: p.w_coarse.clone(), w_fine: p.w_fine.clone(), tau: 0.0 };
        Sgd::new(0.1, 0.9, 0.0).step(&mut p, &g).unwrap();
        assert!(loss(&p) < l0);
    }
}
