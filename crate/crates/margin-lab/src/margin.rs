//! Hard margins, the exact max-margin separator through its dual, and
//! the pointwise inequalities that relate margin deficit to distance
//! from the optimum.
//!
//! The central fact this module is built on: over unit vectors w, the
//! best attainable margin gamma_opt equals the distance from the origin
//! to the convex hull of the signed points s_i = y_i x_i. Minimizing
//! ||sum_i q_i s_i|| over the simplex therefore yields, in one solve,
//! the optimal margin (the attained norm), the max-margin direction (the
//! normalized combination), and the dual weights certifying both.

use nalgebra::DVector;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::minnorm::{self, MinNormPoint, SimplexWeights};

/// Below this dual norm a dataset is treated as inseparable: the hull of
/// the signed points (numerically) contains the origin.
pub const SEPARABILITY_FLOOR: f64 = 1e-6;

/// Dual weights above this threshold count as support vectors.
pub const SUPPORT_EPS: f64 = 1e-7;

/// Default tolerance, in margin units, for [`optimal_margin`].
pub const DEFAULT_MARGIN_TOL: f64 = 1e-6;

/// Additive slack granted when checking the closed-form inequalities,
/// covering float roundoff on quantities of order one.
pub const INEQ_TOL: f64 = 1e-9;

/// The worst per-sample margin min_i y_i <x_i, w>.
pub fn hard_margin(w: &DVector<f64>, d: &Dataset) -> f64 {
    d.margins(w).into_iter().fold(f64::INFINITY, f64::min)
}

/// w / ||w||, rejecting vectors with no usable direction.
pub fn normalize(w: &DVector<f64>) -> Result<DVector<f64>> {
    let norm = w.norm();
    if !norm.is_finite() || norm < 1e-150 {
        return Err(Error::ZeroVector);
    }
    Ok(w / norm)
}

/// The exact max-margin solution of a separable dataset.
#[derive(Clone, Debug)]
pub struct MarginSolution {
    /// Best margin over unit vectors.
    pub gamma_opt: f64,
    /// The unit vector attaining it.
    pub w_opt: DVector<f64>,
    /// Dual weights: gamma_opt = || sum_i q_i s_i || at q = q_star.
    pub q_star: SimplexWeights,
    /// Indices with dual weight above [`SUPPORT_EPS`].
    pub support: Vec<usize>,
    /// Nonnegative certificate: dual norm minus the primal margin of
    /// w_opt. Zero up to solver tolerance.
    pub dual_gap: f64,
    /// The margin tolerance this solution was computed to.
    pub tol: f64,
}

/// Compute the max-margin separator by solving the dual.
///
/// `tol` is measured in margin units; the underlying quadratic solve runs
/// to a Frank-Wolfe gap of `tol^2`, which bounds the error of the squared
/// dual norm. Datasets whose dual norm lands at or below
/// `max(tol, SEPARABILITY_FLOOR)` are reported as [`Error::NonSeparable`]
/// because no conclusion about a positive margin survives the tolerance.
pub fn optimal_margin(d: &Dataset, tol: f64) -> Result<MarginSolution> {
    if !(tol > 0.0 && tol < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "margin tolerance must lie in (0, 1), got {tol}"
        )));
    }
    let points = d.signed_points();
    let mn: MinNormPoint = minnorm::min_norm_point(&points, tol * tol)?;
    let threshold = tol.max(SEPARABILITY_FLOOR);
    if mn.value <= threshold {
        return Err(Error::NonSeparable { value: mn.value, threshold });
    }
    let w_opt = normalize(&mn.combination)?;
    let primal = hard_margin(&w_opt, d);
    Ok(MarginSolution {
        gamma_opt: mn.value,
        w_opt,
        support: mn.weights.support(SUPPORT_EPS),
        q_star: mn.weights,
        dual_gap: (mn.value - primal).max(0.0),
        tol,
    })
}

/// Indices whose margin is within `eps` of the worst one.
pub fn support_set(w: &DVector<f64>, d: &Dataset, eps: f64) -> Vec<usize> {
    let margins = d.margins(w);
    let worst = margins.iter().copied().fold(f64::INFINITY, f64::min);
    margins
        .iter()
        .enumerate()
        .filter(|(_, &u)| u <= worst + eps)
        .map(|(i, _)| i)
        .collect()
}

/// Norm of the minimum-norm tangential subgradient of the hard margin at
/// w: the smallest || (I - w w') sum_i q_i s_i || over simplex weights
/// supported on the `eps`-active set.
///
/// This is the steepest local ascent rate of the margin along the unit
/// sphere; it vanishes exactly at the max-margin direction.
pub fn min_norm_subgradient(w: &DVector<f64>, d: &Dataset, eps: f64, gap_tol: f64) -> Result<f64> {
    let w_hat = normalize(w)?;
    let active = support_set(&w_hat, d, eps);
    let projected: Vec<DVector<f64>> = active
        .iter()
        .map(|&i| {
            let s = d.signed_point(i);
            &s - &w_hat * w_hat.dot(&s)
        })
        .collect();
    Ok(minnorm::min_norm_point(&projected, gap_tol)?.value)
}

/// One evaluation of the gradient-dominance inequality
/// `s(w)^2 >= gamma_opt * (gamma_opt - gamma(w))` at a unit vector with
/// nonnegative margin.
#[derive(Clone, Copy, Debug)]
pub struct KlCheck {
    /// Squared minimum-norm tangential subgradient.
    pub lhs: f64,
    /// gamma_opt * (gamma_opt - gamma(w)).
    pub rhs: f64,
    /// Whether the inequality's hypothesis gamma(w) >= 0 held.
    pub applicable: bool,
    /// lhs >= rhs - [`INEQ_TOL`], or vacuously true when not applicable.
    pub holds: bool,
}

pub fn kl_check(w: &DVector<f64>, d: &Dataset, sol: &MarginSolution) -> Result<KlCheck> {
    require_unit(w)?;
    let gamma = hard_margin(w, d);
    let applicable = gamma >= 0.0;
    let s = min_norm_subgradient(w, d, SUPPORT_EPS, 1e-12)?;
    let lhs = s * s;
    let rhs = sol.gamma_opt * (sol.gamma_opt - gamma);
    Ok(KlCheck { lhs, rhs, applicable, holds: !applicable || lhs >= rhs - INEQ_TOL })
}

/// One evaluation of the two-sided distance bound at a unit vector:
/// `(gamma_opt - gamma(w)) / R <= ||w - w_opt||`, and when gamma(w) >= 0
/// also `||w - w_opt|| <= 2 sqrt((gamma_opt - gamma(w)) / gamma_opt)`.
#[derive(Clone, Copy, Debug)]
pub struct InterlaceCheck {
    /// Margin deficit over the data radius.
    pub lower: f64,
    /// ||w - w_opt||.
    pub bias: f64,
    /// Upper bound; `None` when gamma(w) < 0 (the bound needs a
    /// nonnegative margin).
    pub upper: Option<f64>,
    pub holds: bool,
}

pub fn interlace_check(w: &DVector<f64>, d: &Dataset, sol: &MarginSolution) -> Result<InterlaceCheck> {
    require_unit(w)?;
    let gamma = hard_margin(w, d);
    let radius = d.max_feature_norm();
    let deficit = sol.gamma_opt - gamma;
    let lower = if radius > 0.0 { deficit / radius } else { 0.0 };
    let bias = (w - &sol.w_opt).norm();
    let upper = (gamma >= 0.0).then(|| 2.0 * (deficit.max(0.0) / sol.gamma_opt).sqrt());
    let holds = lower <= bias + INEQ_TOL && upper.is_none_or(|u| bias <= u + INEQ_TOL);
    Ok(InterlaceCheck { lower, bias, upper, holds })
}

fn require_unit(w: &DVector<f64>) -> Result<()> {
    let norm = w.norm();
    if (norm - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidParameter(format!(
            "expected a unit vector, got norm {norm}"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{examples, generate_separable, Dataset};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> DVector<f64> {
        loop {
            let v = DVector::from_fn(dim, |_, _| rng.gen::<f64>() * 2.0 - 1.0);
            if v.norm() > 1e-3 {
                return normalize(&v).unwrap();
            }
        }
    }

    #[test]
    fn hard_margin_is_the_worst_sample() {
        let d = examples::d3();
        let w = DVector::from_vec(vec![0.0, 1.0]);
        assert_eq!(hard_margin(&w, &d), 0.8);
        let w = DVector::from_vec(vec![1.0, 0.0]);
        assert_eq!(hard_margin(&w, &d), -0.6);
    }

    #[test]
    fn normalize_handles_the_edge_cases() {
        let w = normalize(&DVector::from_vec(vec![3.0, 4.0])).unwrap();
        assert_abs_diff_eq!(w[0], 0.6, epsilon = 1e-15);
        assert_abs_diff_eq!(w[1], 0.8, epsilon = 1e-15);
        assert!(matches!(normalize(&DVector::zeros(2)), Err(Error::ZeroVector)));
        assert!(normalize(&DVector::from_vec(vec![f64::INFINITY, 0.0])).is_err());
    }

    #[test]
    fn canonical_duals_are_exact() {
        let sol = optimal_margin(&examples::d1(), DEFAULT_MARGIN_TOL).unwrap();
        assert_abs_diff_eq!(sol.gamma_opt, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(sol.w_opt[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(sol.w_opt[1], 0.0, epsilon = 1e-12);
        assert!(sol.dual_gap <= 1e-10);

        let sol = optimal_margin(&examples::d2(), DEFAULT_MARGIN_TOL).unwrap();
        let r = 0.5f64.sqrt();
        assert_abs_diff_eq!(sol.gamma_opt, r, epsilon = 1e-12);
        assert_abs_diff_eq!(sol.w_opt[0], r, epsilon = 1e-12);
        assert_abs_diff_eq!(sol.w_opt[1], r, epsilon = 1e-12);
        assert_abs_diff_eq!(sol.q_star[0], 0.5, epsilon = 1e-10);
        assert_eq!(sol.support, vec![0, 1]);

        let sol = optimal_margin(&examples::d3(), DEFAULT_MARGIN_TOL).unwrap();
        assert_abs_diff_eq!(sol.gamma_opt, 0.8, epsilon = 1e-12);
        assert_abs_diff_eq!(sol.w_opt[0], 0.0, epsilon = 1e-10);
        assert_abs_diff_eq!(sol.w_opt[1], 1.0, epsilon = 1e-12);
        assert_eq!(sol.support, vec![0, 1]);

        let sol = optimal_margin(&examples::skewed(), DEFAULT_MARGIN_TOL).unwrap();
        assert_abs_diff_eq!(sol.gamma_opt, 0.5402972949560185, epsilon = 1e-10);
        assert_abs_diff_eq!(sol.w_opt[0], 0.36919466431961667, epsilon = 1e-9);
        assert_abs_diff_eq!(sol.w_opt[1], 0.9293520860459322, epsilon = 1e-9);
        assert_abs_diff_eq!(sol.q_star[0], 0.4790923824959481, epsilon = 1e-9);
        assert_abs_diff_eq!(sol.q_star[2], 0.5209076175040519, epsilon = 1e-9);
        assert_eq!(sol.support, vec![0, 2]);
    }

    #[test]
    fn dual_primal_consistency_on_random_datasets() {
        for seed in 0..20 {
            let d = generate_separable(4 + seed as usize % 30, 3 + seed as usize % 4, 0.1, seed)
                .unwrap();
            let sol = optimal_margin(&d, 1e-7).unwrap();
            // Primal feasibility: the margin of w_opt matches gamma_opt.
            assert!(sol.dual_gap <= 1e-7, "seed {seed}: gap {}", sol.dual_gap);
            // Generation promised at least this much margin.
            assert!(sol.gamma_opt >= 0.1 - 1e-9, "seed {seed}: {}", sol.gamma_opt);
            // Weak duality: no random unit direction beats gamma_opt.
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
            for _ in 0..20 {
                let w = random_unit(&mut rng, d.dim());
                assert!(hard_margin(&w, &d) <= sol.gamma_opt + 1e-9);
            }
        }
    }

    #[test]
    fn non_separable_data_is_reported() {
        let x = DVector::from_vec(vec![0.5, 0.5]);
        let d = Dataset::new(vec![x.clone(), x], vec![1.0, -1.0]).unwrap();
        let err = optimal_margin(&d, DEFAULT_MARGIN_TOL).unwrap_err();
        match err {
            Error::NonSeparable { value, threshold } => {
                assert!(value <= threshold);
            }
            other => panic!("expected NonSeparable, got {other:?}"),
        }
    }

    #[test]
    fn tolerance_is_validated_and_recorded() {
        let d = examples::d1();
        assert!(optimal_margin(&d, 0.0).is_err());
        assert!(optimal_margin(&d, 1.0).is_err());
        assert_eq!(optimal_margin(&d, 1e-8).unwrap().tol, 1e-8);
    }

    #[test]
    fn support_set_uses_the_eps_band() {
        let d = examples::d3();
        let w = DVector::from_vec(vec![0.0, 1.0]);
        // Margins are (0.8, 0.8, 1.0).
        assert_eq!(support_set(&w, &d, 1e-9), vec![0, 1]);
        assert_eq!(support_set(&w, &d, 0.5), vec![0, 1, 2]);
    }

    #[test]
    fn min_norm_subgradient_vanishes_only_at_the_optimum() {
        let d = examples::d2();
        let sol = optimal_margin(&d, DEFAULT_MARGIN_TOL).unwrap();
        let s_opt = min_norm_subgradient(&sol.w_opt, &d, SUPPORT_EPS, 1e-12).unwrap();
        assert!(s_opt <= 1e-6, "at the optimum: {s_opt}");

        // At w = (1, 0) only the second point is active; the projected
        // point is (0, 1) - 0 * w = e2, already orthogonal to w.
        let w = DVector::from_vec(vec![1.0, 0.0]);
        let s = min_norm_subgradient(&w, &d, SUPPORT_EPS, 1e-12).unwrap();
        assert_abs_diff_eq!(s, 1.0, epsilon = 1e-10);
    }

    #[test]
    fn kl_inequality_with_hand_values() {
        let d = examples::d2();
        let sol = optimal_margin(&d, DEFAULT_MARGIN_TOL).unwrap();
        // At w = (1, 0): s(w)^2 = 1, gamma = 0, rhs = gamma_opt^2 = 0.5.
        let w = DVector::from_vec(vec![1.0, 0.0]);
        let c = kl_check(&w, &d, &sol).unwrap();
        assert!(c.applicable && c.holds);
        assert_abs_diff_eq!(c.lhs, 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(c.rhs, 0.5, epsilon = 1e-9);
    }

    #[test]
    fn kl_inequality_is_tight_where_both_points_activate() {
        // d1 at w = (0, 1): both (identical) signed points are active
        // with margin 0; the tangential subgradient is (1, 0) exactly,
        // so lhs = 1 = gamma_opt * (gamma_opt - 0) = rhs.
        let d = examples::d1();
        let sol = optimal_margin(&d, DEFAULT_MARGIN_TOL).unwrap();
        let w = DVector::from_vec(vec![0.0, 1.0]);
        let c = kl_check(&w, &d, &sol).unwrap();
        assert!(c.applicable && c.holds);
        assert_abs_diff_eq!(c.lhs, c.rhs, epsilon = 1e-9);
        assert_abs_diff_eq!(c.lhs, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn kl_inequality_on_random_unit_vectors() {
        for seed in 0..10 {
            let d = generate_separable(10, 4, 0.15, 700 + seed).unwrap();
            let sol = optimal_margin(&d, 1e-7).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut applicable = 0;
            for k in 0..50 {
                // Alternate arbitrary directions with perturbations of the
                // optimum; the latter keep nonnegative margins, so the
                // nontrivial branch of the inequality is always exercised.
                let w = if k % 2 == 0 {
                    random_unit(&mut rng, 4)
                } else {
                    let mut v = random_unit(&mut rng, 4);
                    v *= 0.1;
                    v += &sol.w_opt;
                    normalize(&v).unwrap()
                };
                let c = kl_check(&w, &d, &sol).unwrap();
                assert!(c.holds, "seed {seed}: lhs {} rhs {}", c.lhs, c.rhs);
                if c.applicable {
                    applicable += 1;
                }
            }
            assert!(applicable > 0, "seed {seed}: vacuous sample");
        }
    }

    #[test]
    fn kl_check_requires_a_unit_vector() {
        let d = examples::d2();
        let sol = optimal_margin(&d, DEFAULT_MARGIN_TOL).unwrap();
        let w = DVector::from_vec(vec![2.0, 0.0]);
        assert!(kl_check(&w, &d, &sol).is_err());
        assert!(interlace_check(&w, &d, &sol).is_err());
    }

    #[test]
    fn interlace_with_hand_values() {
        // d1 at w = (0, 1): deficit = 1, R = 1, distance = sqrt(2),
        // upper = 2. So 1 <= sqrt(2) <= 2.
        let d = examples::d1();
        let sol = optimal_margin(&d, DEFAULT_MARGIN_TOL).unwrap();
        let w = DVector::from_vec(vec![0.0, 1.0]);
        let c = interlace_check(&w, &d, &sol).unwrap();
        assert!(c.holds);
        assert_abs_diff_eq!(c.lower, 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(c.bias, 2.0f64.sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(c.upper.unwrap(), 2.0, epsilon = 1e-9);
    }

    #[test]
    fn interlace_upper_bound_needs_nonnegative_margin() {
        // d2 at w = (0, -1): margin is -1 < 0, so only the lower bound
        // applies (and holds).
        let d = examples::d2();
        let sol = optimal_margin(&d, DEFAULT_MARGIN_TOL).unwrap();
        let w = DVector::from_vec(vec![0.0, -1.0]);
        let c = interlace_check(&w, &d, &sol).unwrap();
        assert!(c.upper.is_none());
        assert!(c.holds);
    }

    #[test]
    fn interlace_on_random_unit_vectors() {
        for seed in 0..10 {
            let d = generate_separable(8, 3, 0.2, 800 + seed).unwrap();
            let sol = optimal_margin(&d, 1e-7).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..50 {
                let w = random_unit(&mut rng, 3);
                let c = interlace_check(&w, &d, &sol).unwrap();
                assert!(
                    c.holds,
                    "seed {seed}: lower {} bias {} upper {:?}",
                    c.lower, c.bias, c.upper
                );
            }
            // At the optimum itself everything collapses to zero.
            let c = interlace_check(&sol.w_opt, &d, &sol).unwrap();
            assert!(c.bias <= 1e-9 && c.lower <= 1e-9);
        }
    }
}
