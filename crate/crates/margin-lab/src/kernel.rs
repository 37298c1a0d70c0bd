//! Max margins and margin ascent in a reproducing-kernel Hilbert space.
//!
//! A function is represented by its expansion coefficients alpha over
//! the training points, h = sum_i alpha_i k(x_i, .), with
//! ||h||^2 = alpha' K alpha for the kernel matrix K. The kernel margin
//! of h is min_i y_i h(x_i) / ||h||, and the best attainable one is
//! again a dual norm: gamma_H = min over simplex weights q of
//! sqrt(q' G q) with G_ij = y_i y_j K_ij, which is exactly the
//! minimum-norm-point problem of [`crate::minnorm`] fed with a Gram
//! matrix instead of explicit points.
//!
//! For the linear kernel all of this collapses to the primal picture:
//! gamma_H equals the linear optimal margin, and the ascent below
//! reproduces the primal gradient schedules step for step (the
//! coefficient update alpha += step * (q .* y) is the gradient update
//! written in the expansion basis).

use nalgebra::{DMatrix, DVector};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::margin::SEPARABILITY_FLOOR;
use crate::minnorm::{simplex_quadratic_min, SimplexWeights};
use crate::optim::Schedule;
use crate::smooth::{value_from_margins, weights_from_margins, SmoothMarginParams};
use crate::trajectory::{Record, Trajectory, TrajectoryKind, TrajectoryMeta};

/// Kernel choice. The RBF bandwidth is the length scale sigma in
/// exp(-||a - b||^2 / (2 sigma^2)).
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum KernelSpec {
    Linear,
    Rbf { sigma: f64 },
}

impl KernelSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            KernelSpec::Rbf { sigma } if !(sigma > 0.0 && sigma.is_finite()) => Err(
                Error::InvalidParameter(format!("sigma must be positive and finite, got {sigma}")),
            ),
            _ => Ok(()),
        }
    }

    pub fn eval(&self, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
        match *self {
            KernelSpec::Linear => a.dot(b),
            KernelSpec::Rbf { sigma } => {
                (-(a - b).norm_squared() / (2.0 * sigma * sigma)).exp()
            }
        }
    }

    pub fn label(&self) -> String {
        match *self {
            KernelSpec::Linear => "linear".into(),
            KernelSpec::Rbf { sigma } => format!("rbf(sigma={sigma})"),
        }
    }
}

/// Kernel matrix K_ij = k(x_i, x_j), mirrored to be exactly symmetric.
pub fn gram(d: &Dataset, kernel: &KernelSpec) -> Result<DMatrix<f64>> {
    kernel.validate()?;
    let n = d.n();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = kernel.eval(d.feature(i), d.feature(j));
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    Ok(k)
}

/// Smallest eigenvalue of a symmetric matrix; a direct way for tests and
/// verification reports to confirm positive semidefiniteness of a Gram
/// matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// The label-signed Gram matrix G_ij = y_i y_j K_ij.
fn signed_gram(d: &Dataset, k: &DMatrix<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(d.n(), d.n(), |i, j| d.label(i) * d.label(j) * k[(i, j)])
}

/// The optimal kernel margin and its dual certificate.
#[derive(Clone, Debug)]
pub struct KernelSolution {
    /// Best margin over unit-norm functions in the RKHS.
    pub gamma_h: f64,
    pub q_star: SimplexWeights,
    /// Frank-Wolfe gap of the dual solve.
    pub gap: f64,
    /// The margin tolerance this was computed to.
    pub tol: f64,
}

impl KernelSolution {
    /// Expansion coefficients of the optimal unit-norm function:
    /// alpha* = (q* .* y) / gamma_H.
    pub fn optimal_alpha(&self, d: &Dataset) -> DVector<f64> {
        DVector::from_fn(d.n(), |i, _| self.q_star[i] * d.label(i) / self.gamma_h)
    }
}

/// Solve the kernel max-margin dual: minimize q' G q over the simplex.
///
/// As in the primal case, `tol` is in margin units and datasets whose
/// dual value falls at or below `max(tol, SEPARABILITY_FLOOR)` are
/// reported as inseparable in the chosen feature space.
pub fn kernel_optimal_margin(d: &Dataset, kernel: &KernelSpec, tol: f64) -> Result<KernelSolution> {
    if !(tol > 0.0 && tol < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "margin tolerance must lie in (0, 1), got {tol}"
        )));
    }
    let k = gram(d, kernel)?;
    let g = signed_gram(d, &k);
    let qm = simplex_quadratic_min(&g, tol * tol, 0)?;
    let gamma_h = qm.value.max(0.0).sqrt();
    let threshold = tol.max(SEPARABILITY_FLOOR);
    if gamma_h <= threshold {
        return Err(Error::NonSeparable { value: gamma_h, threshold });
    }
    Ok(KernelSolution { gamma_h, q_star: qm.weights, gap: qm.gap, tol })
}

/// Margin of the expansion alpha: min_i y_i (K alpha)_i / sqrt(alpha' K alpha).
pub fn kernel_margin(alpha: &DVector<f64>, d: &Dataset, kernel: &KernelSpec) -> Result<f64> {
    let k = gram(d, kernel)?;
    kernel_margin_with(alpha, d, &k)
}

fn kernel_margin_with(alpha: &DVector<f64>, d: &Dataset, k: &DMatrix<f64>) -> Result<f64> {
    if alpha.len() != d.n() {
        return Err(Error::InvalidParameter(format!(
            "{} coefficients for {} samples",
            alpha.len(),
            d.n()
        )));
    }
    let k_alpha = k * alpha;
    let norm2 = alpha.dot(&k_alpha);
    let norm = norm2.max(0.0).sqrt();
    if norm < 1e-150 {
        return Err(Error::ZeroFunction);
    }
    let worst = (0..d.n())
        .map(|i| d.label(i) * k_alpha[i])
        .fold(f64::INFINITY, f64::min);
    Ok(worst / norm)
}

/// Ascend the smoothed kernel margin from alpha = 0 with one of the
/// discrete schedules, recording after the listed iterations.
///
/// The per-step update is `alpha += step * (q .* y)` at the Boltzmann
/// weights q of the current functional margins u_i = y_i (K alpha)_i;
/// through the expansion this is exactly the smoothed-margin gradient
/// step in function space. Records carry the kernel margin in `margin`,
/// the RKHS norm in `norm_w`, and the RKHS distance
/// `||h/||h|| - h*|| = sqrt((a/||h|| - a*)' K (a/||h|| - a*))` from the
/// normalized iterate to the optimal unit function in the extra column
/// `h_dist`; `bias` duplicates `deficit` because there is no
/// finite-dimensional normalized iterate to compare.
pub fn kernel_ascent(
    d: &Dataset,
    kernel: &KernelSpec,
    p: &SmoothMarginParams,
    schedule: &Schedule,
    steps: usize,
    record_at: &[usize],
    ksol: &KernelSolution,
) -> Result<Trajectory> {
    if matches!(schedule, Schedule::Flow) {
        return Err(Error::WrongDriver("flow"));
    }
    schedule.validate()?;
    if steps == 0 {
        return Err(Error::InvalidParameter("need at least one step".into()));
    }
    let record_set: std::collections::BTreeSet<usize> =
        record_at.iter().copied().filter(|k| *k >= 1 && *k <= steps).collect();
    if record_set.is_empty() {
        return Err(Error::InvalidParameter("no recordable iterations requested".into()));
    }

    let k = gram(d, kernel)?;
    let g = signed_gram(d, &k);
    let alpha_star = ksol.optimal_alpha(d);

    let mut alpha = DVector::zeros(d.n());
    let mut records = Vec::with_capacity(record_set.len());
    for step_idx in 0..steps {
        let u: Vec<f64> = {
            let k_alpha = &k * &alpha;
            (0..d.n()).map(|i| d.label(i) * k_alpha[i]).collect()
        };
        let q = weights_from_margins(&u, p.beta);
        let factor = discrete_factor(schedule, step_idx, p.beta);
        for i in 0..d.n() {
            alpha[i] += factor * q[i] * d.label(i);
        }

        if record_set.contains(&(step_idx + 1)) {
            records.push(kernel_record(
                (step_idx + 1) as f64,
                &alpha,
                &alpha_star,
                d,
                &k,
                &g,
                p,
                ksol,
            )?);
        }
    }

    let traj = Trajectory {
        meta: TrajectoryMeta {
            dataset_id: d.fingerprint(),
            kind: TrajectoryKind::Kernel,
            schedule: format!("kernel-{}+{}", kernel.label(), schedule.label()),
            beta: p.beta,
            seed: None,
            tol: ksol.tol,
            extra_column: Some("h_dist".into()),
        },
        records,
    };
    traj.check_well_formed()?;
    Ok(traj)
}

fn discrete_factor(schedule: &Schedule, k: usize, beta: f64) -> f64 {
    match *schedule {
        Schedule::Flow => unreachable!("flow is rejected before stepping"),
        Schedule::GdConstant { eta } => eta,
        Schedule::GdAdaptive => 1.0 / ((k + 1) as f64).sqrt(),
        Schedule::GdAggressive { c } => c * beta,
    }
}

#[allow(clippy::too_many_arguments)]
fn kernel_record(
    t: f64,
    alpha: &DVector<f64>,
    alpha_star: &DVector<f64>,
    d: &Dataset,
    k: &DMatrix<f64>,
    g: &DMatrix<f64>,
    p: &SmoothMarginParams,
    ksol: &KernelSolution,
) -> Result<Record> {
    let k_alpha = k * alpha;
    let norm = alpha.dot(&k_alpha).max(0.0).sqrt();
    if !norm.is_finite() || norm > crate::optim::DIVERGENCE_NORM_CAP {
        return Err(Error::Diverged { t, norm });
    }
    let u: Vec<f64> = (0..d.n()).map(|i| d.label(i) * k_alpha[i]).collect();
    if norm < 1e-150 {
        return Err(Error::ZeroFunction);
    }
    let margin = u.iter().copied().fold(f64::INFINITY, f64::min) / norm;
    let q = weights_from_margins(&u, p.beta);
    let qv = DVector::from_vec(q.clone());
    let grad_norm = qv.dot(&(g * &qv)).max(0.0).sqrt();
    // Distance in the function space between the *normalized* iterate and
    // the unit-norm optimum, mirroring the linear bias semantics.
    let diff = alpha / norm - alpha_star;
    let h_dist = diff.dot(&(k * &diff)).max(0.0).sqrt();
    let deficit = ksol.gamma_h - margin;
    Ok(Record {
        t,
        norm_w: norm,
        margin,
        smooth_margin: value_from_margins(&u, p.beta),
        grad_norm,
        bias: deficit,
        deficit,
        extra: Some(h_dist),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{examples, generate_separable};
    use crate::margin::{optimal_margin, DEFAULT_MARGIN_TOL};
    use approx::assert_abs_diff_eq;

    #[test]
    fn kernel_validation_and_labels() {
        assert!(KernelSpec::Linear.validate().is_ok());
        assert!(KernelSpec::Rbf { sigma: 1.0 }.validate().is_ok());
        assert!(KernelSpec::Rbf { sigma: 0.0 }.validate().is_err());
        assert!(KernelSpec::Rbf { sigma: -2.0 }.validate().is_err());
        assert_eq!(KernelSpec::Linear.label(), "linear");
        assert_eq!(KernelSpec::Rbf { sigma: 0.5 }.label(), "rbf(sigma=0.5)");
    }

    #[test]
    fn gram_matrices_match_hand_values() {
        let d = examples::d2();
        let k = gram(&d, &KernelSpec::Linear).unwrap();
        assert_eq!(k, DMatrix::identity(2, 2));

        let k = gram(&d, &KernelSpec::Rbf { sigma: 1.0 }).unwrap();
        let e = (-1.0f64).exp();
        assert_abs_diff_eq!(k[(0, 0)], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(k[(1, 1)], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(k[(0, 1)], e, epsilon = 1e-15);
        assert_eq!(k[(0, 1)], k[(1, 0)]);
    }

    #[test]
    fn gram_matrices_are_positive_semidefinite() {
        for seed in 0..10 {
            let d = generate_separable(12, 4, 0.1, 900 + seed).unwrap();
            for kernel in [KernelSpec::Linear, KernelSpec::Rbf { sigma: 0.7 }] {
                let k = gram(&d, &kernel).unwrap();
                let lam = min_eigenvalue(&k);
                assert!(lam >= -1e-9, "seed {seed} {}: min eigenvalue {lam}", kernel.label());
            }
        }
    }

    #[test]
    fn linear_kernel_margin_equals_the_primal_margin() {
        for d in [examples::d1(), examples::d2(), examples::d3(), examples::skewed()] {
            let primal = optimal_margin(&d, DEFAULT_MARGIN_TOL).unwrap();
            let ksol = kernel_optimal_margin(&d, &KernelSpec::Linear, DEFAULT_MARGIN_TOL).unwrap();
            assert_abs_diff_eq!(ksol.gamma_h, primal.gamma_opt, epsilon = 1e-10);
        }
        for seed in 0..10 {
            let d = generate_separable(10, 3, 0.15, 1100 + seed).unwrap();
            let primal = optimal_margin(&d, 1e-7).unwrap();
            let ksol = kernel_optimal_margin(&d, &KernelSpec::Linear, 1e-7).unwrap();
            assert_abs_diff_eq!(ksol.gamma_h, primal.gamma_opt, epsilon = 1e-8);
        }
    }

    #[test]
    fn rbf_margin_on_d2_matches_the_closed_form() {
        // G = [[1, e^-1], [e^-1, 1]]; the simplex minimum is at uniform
        // weights with value (2 + 2 e^-1)/4, so gamma_H is its root.
        let d = examples::d2();
        let ksol = kernel_optimal_margin(&d, &KernelSpec::Rbf { sigma: 1.0 }, 1e-7).unwrap();
        let expected = ((2.0 + 2.0 * (-1.0f64).exp()) / 4.0).sqrt();
        assert_abs_diff_eq!(ksol.gamma_h, expected, epsilon = 1e-9);
        assert_abs_diff_eq!(ksol.gamma_h, 0.8270064815862819, epsilon = 1e-9);
        assert_abs_diff_eq!(ksol.q_star[0], 0.5, epsilon = 1e-7);
    }

    #[test]
    fn dual_sandwich_holds_for_random_simplex_weights() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for seed in 0..5 {
            let d = generate_separable(10, 3, 0.2, 950 + seed).unwrap();
            for kernel in [KernelSpec::Linear, KernelSpec::Rbf { sigma: 1.3 }] {
                let ksol = kernel_optimal_margin(&d, &kernel, 1e-7).unwrap();
                let k = gram(&d, &kernel).unwrap();
                let g = signed_gram(&d, &k);
                let k_max = (0..d.n()).map(|i| k[(i, i)].sqrt()).fold(0.0, f64::max);
                for _ in 0..20 {
                    let mut q = DVector::from_fn(d.n(), |_, _| -rng.gen::<f64>().ln());
                    q /= q.sum();
                    let value = q.dot(&(&g * &q)).max(0.0).sqrt();
                    assert!(value >= ksol.gamma_h - 1e-8, "{} < {}", value, ksol.gamma_h);
                    assert!(value <= k_max + 1e-12, "{} > {}", value, k_max);
                }
            }
        }
    }

    #[test]
    fn optimal_alpha_has_unit_norm_and_optimal_margin() {
        let d = examples::d3();
        let kernel = KernelSpec::Rbf { sigma: 1.0 };
        let ksol = kernel_optimal_margin(&d, &kernel, 1e-7).unwrap();
        let alpha = ksol.optimal_alpha(&d);
        let k = gram(&d, &kernel).unwrap();
        let norm2 = alpha.dot(&(&k * &alpha));
        assert_abs_diff_eq!(norm2, 1.0, epsilon = 1e-8);
        let margin = kernel_margin(&alpha, &d, &kernel).unwrap();
        assert_abs_diff_eq!(margin, ksol.gamma_h, epsilon = 1e-7);
    }

    #[test]
    fn kernel_margin_hand_values_and_errors() {
        let d = examples::d2();
        // alpha = y .* q* / gamma at the linear kernel recovers w_opt.
        let ksol = kernel_optimal_margin(&d, &KernelSpec::Linear, 1e-7).unwrap();
        let alpha = ksol.optimal_alpha(&d);
        let m = kernel_margin(&alpha, &d, &KernelSpec::Linear).unwrap();
        assert_abs_diff_eq!(m, 0.5f64.sqrt(), epsilon = 1e-9);

        // A coefficient vector that misclassifies sample 2.
        let alpha = DVector::from_vec(vec![1.0, -1.0]);
        let m = kernel_margin(&alpha, &d, &KernelSpec::Linear).unwrap();
        assert!(m < 0.0);

        assert!(matches!(
            kernel_margin(&DVector::zeros(2), &d, &KernelSpec::Linear),
            Err(Error::ZeroFunction)
        ));
        assert!(kernel_margin(&DVector::zeros(3), &d, &KernelSpec::Linear).is_err());
    }

    #[test]
    fn inseparable_in_feature_space_is_reported() {
        let x = DVector::from_vec(vec![0.4, 0.1]);
        let d = crate::dataset::Dataset::new(vec![x.clone(), x], vec![1.0, -1.0]).unwrap();
        assert!(matches!(
            kernel_optimal_margin(&d, &KernelSpec::Linear, 1e-6),
            Err(Error::NonSeparable { .. })
        ));
        // The same points are also coincident in RBF feature space.
        assert!(matches!(
            kernel_optimal_margin(&d, &KernelSpec::Rbf { sigma: 1.0 }, 1e-6),
            Err(Error::NonSeparable { .. })
        ));
    }

    #[test]
    fn ascent_raises_the_kernel_margin() {
        let d = examples::d3();
        let kernel = KernelSpec::Rbf { sigma: 1.0 };
        let ksol = kernel_optimal_margin(&d, &kernel, 1e-7).unwrap();
        let p = SmoothMarginParams::new(4.0).unwrap();
        let traj = kernel_ascent(
            &d,
            &kernel,
            &p,
            &Schedule::GdAdaptive,
            2000,
            &[1, 10, 100, 2000],
            &ksol,
        )
        .unwrap();
        assert_eq!(traj.meta.kind, TrajectoryKind::Kernel);
        assert_eq!(traj.meta.extra_column.as_deref(), Some("h_dist"));
        let first = &traj.records[0];
        let last = traj.records.last().unwrap();
        assert!(last.margin > first.margin);
        assert!(last.deficit >= -1e-9, "margin exceeded gamma_H: {}", last.deficit);
        assert!(last.deficit < 0.1, "deficit {}", last.deficit);
        // h_dist shrinks as the normalized function approaches h*.
        assert!(last.extra.unwrap() < first.extra.unwrap());
        // bias mirrors deficit for kernel runs.
        assert_eq!(last.bias, last.deficit);
    }

    #[test]
    fn ascent_validates_inputs() {
        let d = examples::d2();
        let ksol = kernel_optimal_margin(&d, &KernelSpec::Linear, 1e-6).unwrap();
        let p = SmoothMarginParams::default();
        assert!(matches!(
            kernel_ascent(&d, &KernelSpec::Linear, &p, &Schedule::Flow, 10, &[10], &ksol),
            Err(Error::WrongDriver("flow"))
        ));
        assert!(kernel_ascent(&d, &KernelSpec::Linear, &p, &Schedule::GdAdaptive, 0, &[1], &ksol)
            .is_err());
        assert!(kernel_ascent(&d, &KernelSpec::Linear, &p, &Schedule::GdAdaptive, 10, &[], &ksol)
            .is_err());
        assert!(kernel_ascent(
            &d,
            &KernelSpec::Rbf { sigma: -1.0 },
            &p,
            &Schedule::GdAdaptive,
            10,
            &[10],
            &ksol
        )
        .is_err());
    }

    #[test]
    fn grad_norm_column_is_pinched_like_the_primal_one() {
        // q' G q ranges between gamma_H^2 and max_i K_ii over the simplex.
        let d = examples::skewed();
        let kernel = KernelSpec::Linear;
        let ksol = kernel_optimal_margin(&d, &kernel, 1e-7).unwrap();
        let p = SmoothMarginParams::default();
        let traj = kernel_ascent(
            &d,
            &kernel,
            &p,
            &Schedule::GdAdaptive,
            500,
            &[1, 50, 500],
            &ksol,
        )
        .unwrap();
        for r in &traj.records {
            assert!(r.grad_norm >= ksol.gamma_h - 1e-9);
            assert!(r.grad_norm <= 1.0 + 1e-12);
        }
    }
}
