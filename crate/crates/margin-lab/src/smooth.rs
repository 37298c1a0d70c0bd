//! The smoothed margin: a soft minimum of the per-sample margins that
//! gradient methods can actually ascend.
//!
//! For margins u_i(w) = y_i <x_i, w> and inverse temperature beta > 0,
//!
//! ```text
//! R_beta(w) = -(1/beta) * log( (1/n) * sum_i exp(-beta * u_i(w)) )
//! ```
//!
//! This is a uniform approximation of the hard margin,
//! `gamma(w) <= R_beta(w) <= gamma(w) + log(n)/beta`, and its gradient is
//! the Boltzmann-weighted average of the signed points, so every ascent
//! direction stays inside their convex hull. The identity
//! `exp(-beta * R_beta(w)) = (1/n) sum_i exp(-beta * u_i(w))` connects it
//! to the exponential-loss empirical risk; ascending the smoothed margin
//! and descending that risk are the same dynamic viewed in different
//! coordinates.
//!
//! All evaluation goes through the max-shifted form, so only the risk
//! itself (which is genuinely exponential in beta and the margins) can
//! overflow, and that case is reported as an error instead of infinity.

use nalgebra::DVector;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::minnorm::SimplexWeights;

/// Inverse temperature for the smoothed margin.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SmoothMarginParams {
    pub beta: f64,
}

impl SmoothMarginParams {
    pub fn new(beta: f64) -> Result<Self> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "beta must be positive and finite, got {beta}"
            )));
        }
        Ok(Self { beta })
    }
}

impl Default for SmoothMarginParams {
    fn default() -> Self {
        Self { beta: 1.0 }
    }
}

/// Boltzmann weights over precomputed margins:
/// `q_i ∝ exp(-beta * u_i)`, normalized to the simplex.
///
/// Computed with the max-subtraction trick, so it is finite for every
/// finite input. Exposed at the margin level (not just at a weight
/// vector w) because the multilayer and kernel dynamics produce their
/// margins by other means and reuse the same weighting.
pub fn weights_from_margins(margins: &[f64], beta: f64) -> Vec<f64> {
    let z_max = margins.iter().map(|u| -beta * u).fold(f64::NEG_INFINITY, f64::max);
    let mut w: Vec<f64> = margins.iter().map(|u| (-beta * u - z_max).exp()).collect();
    let sum: f64 = w.iter().sum();
    for v in &mut w {
        *v /= sum;
    }
    w
}

/// Smoothed margin from precomputed margins.
pub fn value_from_margins(margins: &[f64], beta: f64) -> f64 {
    let n = margins.len() as f64;
    let z_max = margins.iter().map(|u| -beta * u).fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = margins.iter().map(|u| (-beta * u - z_max).exp()).sum();
    -(z_max + (sum / n).ln()) / beta
}

pub fn boltzmann_weights(w: &DVector<f64>, d: &Dataset, p: &SmoothMarginParams) -> SimplexWeights {
    SimplexWeights::new(weights_from_margins(&d.margins(w), p.beta))
        .expect("softmax output satisfies the simplex invariant")
}

pub fn smooth_margin_value(w: &DVector<f64>, d: &Dataset, p: &SmoothMarginParams) -> f64 {
    value_from_margins(&d.margins(w), p.beta)
}

/// Gradient of the smoothed margin: sum_i q_i s_i at the Boltzmann
/// weights. A convex combination of the signed points, so its norm never
/// exceeds the data radius, and it never falls below the optimal margin.
pub fn smooth_margin_grad(w: &DVector<f64>, d: &Dataset, p: &SmoothMarginParams) -> DVector<f64> {
    let q = weights_from_margins(&d.margins(w), p.beta);
    let mut grad = DVector::zeros(d.dim());
    for (i, qi) in q.iter().enumerate() {
        grad.axpy(qi * d.label(i), d.feature(i), 1.0);
    }
    grad
}

/// Exponential-loss empirical risk `(1/n) sum_i exp(-beta * u_i(w))`,
/// equal to `exp(-beta * R_beta(w))` exactly.
///
/// Unlike the smoothed margin this really does blow up for badly
/// misclassifying w at large beta; the overflow case is an error so
/// callers never see an infinite risk.
pub fn empirical_risk(w: &DVector<f64>, d: &Dataset, p: &SmoothMarginParams) -> Result<f64> {
    let worst = d
        .margins(w)
        .iter()
        .map(|u| -p.beta * u)
        .fold(f64::NEG_INFINITY, f64::max);
    // exp overflows f64 just above 709.78; leave headroom for the sum.
    if worst > 700.0 {
        return Err(Error::RiskOverflow { exponent: worst });
    }
    let value = value_from_margins(&d.margins(w), p.beta);
    Ok((-p.beta * value).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{examples, generate_separable};
    use crate::minnorm;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_vector(rng: &mut ChaCha8Rng, dim: usize, scale: f64) -> DVector<f64> {
        DVector::from_fn(dim, |_, _| (rng.gen::<f64>() * 2.0 - 1.0) * scale)
    }

    #[test]
    fn params_validate_beta() {
        assert!(SmoothMarginParams::new(2.0).is_ok());
        assert!(SmoothMarginParams::new(0.0).is_err());
        assert!(SmoothMarginParams::new(-1.0).is_err());
        assert!(SmoothMarginParams::new(f64::INFINITY).is_err());
        assert_eq!(SmoothMarginParams::default().beta, 1.0);
    }

    #[test]
    fn value_and_weights_match_hand_computation() {
        // d2 at w = (1, 0): margins are (1, 0), so with beta = 1 the
        // weights are softmax(-1, 0) = (e^-1, 1)/(e^-1 + 1) and the value
        // is -log((e^-1 + 1)/2).
        let d = examples::d2();
        let p = SmoothMarginParams::default();
        let w = DVector::from_vec(vec![1.0, 0.0]);

        let e = (-1.0f64).exp();
        let q = boltzmann_weights(&w, &d, &p);
        assert_abs_diff_eq!(q[0], e / (e + 1.0), epsilon = 1e-15);
        assert_abs_diff_eq!(q[1], 1.0 / (e + 1.0), epsilon = 1e-15);
        assert_abs_diff_eq!(q[0], 0.2689414213699951, epsilon = 1e-15);

        let value = smooth_margin_value(&w, &d, &p);
        assert_abs_diff_eq!(value, -((e + 1.0) / 2.0).ln(), epsilon = 1e-15);
        assert_abs_diff_eq!(value, 0.3798854930417224, epsilon = 1e-14);

        let grad = smooth_margin_grad(&w, &d, &p);
        assert_abs_diff_eq!(grad[0], q[0], epsilon = 1e-15);
        assert_abs_diff_eq!(grad[1], q[1], epsilon = 1e-15);

        let risk = empirical_risk(&w, &d, &p).unwrap();
        assert_abs_diff_eq!(risk, (e + 1.0) / 2.0, epsilon = 1e-15);
    }

    #[test]
    fn zero_weight_vector_gives_zero_margin_and_unit_risk() {
        for d in [examples::d1(), examples::d2(), examples::d3()] {
            let p = SmoothMarginParams::new(2.5).unwrap();
            let w = DVector::zeros(2);
            assert_abs_diff_eq!(smooth_margin_value(&w, &d, &p), 0.0, epsilon = 1e-15);
            assert_abs_diff_eq!(empirical_risk(&w, &d, &p).unwrap(), 1.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn sandwich_between_hard_margin_and_log_n_over_beta() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for seed in 0..30 {
            let d = generate_separable(3 + seed as usize % 20, 4, 0.1, 300 + seed).unwrap();
            let beta = 10f64.powf(rng.gen::<f64>() * 4.0 - 2.0);
            let p = SmoothMarginParams::new(beta).unwrap();
            let w = random_vector(&mut rng, 4, 3.0);
            let hard = crate::margin::hard_margin(&w, &d);
            let smooth = smooth_margin_value(&w, &d, &p);
            let slack = (d.n() as f64).ln() / beta;
            assert!(smooth >= hard - 1e-12, "seed {seed}: {smooth} < {hard}");
            assert!(smooth <= hard + slack + 1e-12, "seed {seed}: {smooth} > {hard} + {slack}");
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h = 1e-6;
        for seed in 0..10 {
            let d = generate_separable(12, 5, 0.15, 400 + seed).unwrap();
            let p = SmoothMarginParams::new(1.0 + seed as f64 * 0.7).unwrap();
            let w = random_vector(&mut rng, 5, 2.0);
            let grad = smooth_margin_grad(&w, &d, &p);
            for j in 0..5 {
                let mut wp = w.clone();
                let mut wm = w.clone();
                wp[j] += h;
                wm[j] -= h;
                let fd = (smooth_margin_value(&wp, &d, &p) - smooth_margin_value(&wm, &d, &p))
                    / (2.0 * h);
                assert!(
                    (grad[j] - fd).abs() <= 1e-6 * grad[j].abs().max(1.0),
                    "seed {seed} coord {j}: analytic {} vs fd {}",
                    grad[j],
                    fd
                );
            }
        }
    }

    #[test]
    fn gradient_stays_in_the_signed_hull() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for seed in 0..10 {
            let d = generate_separable(9, 3, 0.1, 500 + seed).unwrap();
            let p = SmoothMarginParams::new(3.0).unwrap();
            let w = random_vector(&mut rng, 3, 5.0);
            let grad = smooth_margin_grad(&w, &d, &p);
            // Residual distance from the gradient to the hull, computed as
            // the min-norm point of the shifted point set.
            let shifted: Vec<DVector<f64>> =
                d.signed_points().iter().map(|s| s - &grad).collect();
            let residual = minnorm::min_norm_point(&shifted, 1e-14).unwrap().value;
            assert!(residual <= 1e-6, "seed {seed}: residual {residual}");
        }
    }

    #[test]
    fn exp_identity_connects_value_and_risk() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for seed in 0..10 {
            let d = generate_separable(7, 4, 0.2, 600 + seed).unwrap();
            let p = SmoothMarginParams::new(0.5 + seed as f64).unwrap();
            let w = random_vector(&mut rng, 4, 1.5);
            let value = smooth_margin_value(&w, &d, &p);
            let risk = empirical_risk(&w, &d, &p).unwrap();
            assert_abs_diff_eq!(risk, (-p.beta * value).exp(), epsilon = 1e-12);
        }
    }

    #[test]
    fn large_beta_approaches_the_hard_margin() {
        let d = examples::d3();
        let w = DVector::from_vec(vec![0.6, 0.8]);
        let hard = crate::margin::hard_margin(&w, &d);
        let p = SmoothMarginParams::new(1e6).unwrap();
        assert_abs_diff_eq!(smooth_margin_value(&w, &d, &p), hard, epsilon = 1e-5);
    }

    #[test]
    fn extreme_margins_do_not_overflow_the_value() {
        let d = examples::d2();
        let p = SmoothMarginParams::new(10.0).unwrap();
        let w = DVector::from_vec(vec![-500.0, 0.0]);
        let value = smooth_margin_value(&w, &d, &p);
        assert!(value.is_finite());
        // Margins are (-500, 0); the worst one dominates at beta = 10.
        assert_abs_diff_eq!(value, -500.0 + (2.0f64).ln() / 10.0, epsilon = 1e-9);
        let q = boltzmann_weights(&w, &d, &p);
        assert_abs_diff_eq!(q[0], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn risk_overflow_is_an_error_not_infinity() {
        let d = examples::d1();
        let p = SmoothMarginParams::new(10.0).unwrap();
        let w = DVector::from_vec(vec![-500.0, 0.0]);
        let err = empirical_risk(&w, &d, &p).unwrap_err();
        match err {
            Error::RiskOverflow { exponent } => assert!(exponent > 700.0),
            other => panic!("expected RiskOverflow, got {other:?}"),
        }
    }
}
