//! Confidence-aware scheduler weighting each unobserved-label loss term by
//! pseudo-label confidence and training progress.

use crate::{real, Error, Real, Result};

/// Hyperparameters of the scheduler: `beta` balances the confidence term
/// against the linear progress term, `gamma` shapes the confidence response.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchedulerParams<T> {
    beta: T,
    gamma: T,
    total_epochs: usize,
}

impl<T: Real> SchedulerParams<T> {
    pub fn new(beta: T, gamma: T, total_epochs: usize) -> Result<Self> {
        if !beta.is_finite() || beta < T::zero() || beta > T::one() {
            return Err(Error::Argument(format!("beta must be in [0,1], got {beta}")));
        }
        if !gamma.is_finite() || gamma <= T::zero() {
            return Err(Error::Argument(format!("gamma must be > 0, got {gamma}")));
        }
        if total_epochs == 0 {
            return Err(Error::Argument("total_epochs must be >= 1".into()));
        }
        Ok(Self {
            beta,
            gamma,
            total_epochs,
        })
    }

    pub fn beta(&self) -> T {
        self.beta
    }

    pub fn gamma(&self) -> T {
        self.gamma
    }

    pub fn total_epochs(&self) -> usize {
        self.total_epochs
    }
}

/// Training progress `φ_t`: the current epoch divided by the total number of
/// epochs.
pub fn progress<T: Real>(epoch: usize, params: &SchedulerParams<T>) -> Result<T> {
    if epoch > params.total_epochs {
        return Err(Error::Argument(format!(
            "epoch {epoch} out of range 0..={}",
            params.total_epochs
        )));
    }
    Ok(real::<T>(epoch as f64) / real::<T>(params.total_epochs as f64))
}

/// The scheduler weight
/// `ξ = β·(1−γe^(−10c))/(1+γe^(−10c)) + (1−β)·φ` with `c = |2ŷ_u − 1|`.
///
/// Symmetric in the pseudo label about 0.5, non-decreasing in confidence
/// `c`, and non-decreasing in progress `φ` whenever `β < 1`.
pub fn xi<T: Real>(pseudo_j: T, phi: T, params: &SchedulerParams<T>) -> T {
    let one = T::one();
    let confidence = (real::<T>(2.0) * pseudo_j - one).abs();
    let e = params.gamma * (real::<T>(-10.0) * confidence).exp();
    params.beta * (one - e) / (one + e) + (one - params.beta) * phi
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn params(beta: f64, gamma: f64) -> SchedulerParams<f64> {
        SchedulerParams::new(beta, gamma, 10).unwrap()
    }

    #[test]
    fn progress_is_the_epoch_fraction() {
        let p = params(0.5, 1.0);
        assert_eq!(progress(0, &p).unwrap(), 0.0);
        assert_eq!(progress(10, &p).unwrap(), 1.0);
        assert_eq!(progress(3, &p).unwrap(), 0.3);
        assert!(progress(11, &p).is_err());
    }

    #[test]
    fn xi_known_values() {
        let p = params(0.5, 1.0);
        // gamma = 1 zeroes the confidence term at minimum confidence
        assert_eq!(xi(0.5, 0.0, &p), 0.0);
        assert_eq!(xi(0.5, 1.0, &p), 0.5);
        let e10 = (-10.0f64).exp();
        let want = 0.5 * (1.0 - e10) / (1.0 + e10);
        assert!((xi(1.0, 0.0, &p) - want).abs() < 1e-12);
    }

    #[test]
    fn xi_is_symmetric_on_a_dyadic_grid() {
        // 0.5 ± k/256 are exact in binary, so both sides see the same
        // confidence bit for bit
        let p = params(0.7, 1.3);
        for k in 0..=128 {
            let d = k as f64 / 256.0;
            assert_eq!(xi(0.5 + d, 0.4, &p), xi(0.5 - d, 0.4, &p), "d={d}");
        }
    }

    #[test]
    fn xi_extremes_bound_the_confidence_term() {
        for (beta, gamma) in [(0.5, 1.0), (0.7, 1.3), (1.0, 0.4), (0.3, 2.0)] {
            let p = params(beta, gamma);
            let lo = beta * (1.0 - gamma) / (1.0 + gamma);
            let e10 = gamma * (-10.0f64).exp();
            let hi = beta * (1.0 - e10) / (1.0 + e10);
            for i in 0..=100 {
                let pseudo = i as f64 / 100.0;
                let conf_term = xi(pseudo, 0.0, &p);
                assert!(conf_term >= lo - 1e-12 && conf_term <= hi + 1e-12);
            }
            // maximum is reached at the saturated pseudo labels
            assert!((xi(0.0, 0.0, &p) - hi).abs() < 1e-12);
            assert!((xi(1.0, 0.0, &p) - hi).abs() < 1e-12);
        }
    }

    #[test]
    fn params_are_validated() {
        assert!(SchedulerParams::new(-0.1, 1.0, 10).is_err());
        assert!(SchedulerParams::new(1.1, 1.0, 10).is_err());
        assert!(SchedulerParams::new(0.5, 0.0, 10).is_err());
        assert!(SchedulerParams::new(0.5, 1.0, 0).is_err());
    }

    proptest! {
        #[test]
        fn xi_monotone_in_confidence_and_progress(
            a in 0.0f64..=0.5,
            b in 0.0f64..=0.5,
            phi1 in 0.0f64..=1.0,
            phi2 in 0.0f64..=1.0,
            beta in 0.0f64..0.999,
            gamma in 0.01f64..5.0,
        ) {
            let p = SchedulerParams::new(beta, gamma, 10).unwrap();
            let (d_lo, d_hi) = (a.min(b), a.max(b));
            prop_assert!(xi(0.5 + d_lo, phi1, &p) <= xi(0.5 + d_hi, phi1, &p) + 1e-12);
            let (p_lo, p_hi) = (phi1.min(phi2), phi1.max(phi2));
            prop_assert!(xi(0.5 + a, p_lo, &p) <= xi(0.5 + a, p_hi, &p) + 1e-12);
        }

        #[test]
        fn xi_symmetry_holds_everywhere(d in 0.0f64..=0.5, phi in 0.0f64..=1.0) {
            let p = SchedulerParams::new(0.7, 1.0, 10).unwrap();
            prop_assert!((xi(0.5 + d, phi, &p) - xi(0.5 - d, phi, &p)).abs() < 1e-12);
        }
    }
}
