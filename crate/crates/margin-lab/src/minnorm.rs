//! Minimum-norm point of a convex hull, phrased as minimizing the
//! quadratic form q' G q over the probability simplex.
//!
//! The solver only ever touches the geometry through the Gram matrix G,
//! so one routine serves every caller in the crate: max-margin duals over
//! explicit signed points, projected subgradient faces, stacked layer
//! gradients, and kernel Gram matrices.
//!
//! The method is Frank-Wolfe with away steps and exact line search. On a
//! quadratic the exact step makes away steps drop vertices entirely, so
//! on small problems the solver usually terminates at the exact face with
//! gap 0; on degenerate ones the away steps still give linear convergence
//! of the gap. The Frank-Wolfe gap `2 (q' G q - min_i (G q)_i)` is a
//! certified upper bound on the suboptimality of q' G q, which is what
//! the termination test uses.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default termination threshold for the Frank-Wolfe gap.
pub const DEFAULT_GAP_TOL: f64 = 1e-10;

/// Iteration budget for the public entry points.
pub const ITERATION_CAP: usize = 1_000_000;

/// How often the maintained product G q is recomputed from scratch to
/// shed accumulated floating-point drift.
const REFRESH_PERIOD: usize = 4096;

/// A probability vector: entries >= 0 summing to 1 within 1e-12.
///
/// The constructor snaps entries in (-1e-12, 0) to zero, so the
/// invariant holds exactly even for weights assembled from floating
/// point arithmetic.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SimplexWeights(Vec<f64>);

const SIMPLEX_TOL: f64 = 1e-12;

impl SimplexWeights {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidParameter("simplex weights cannot be empty".into()));
        }
        let mut w = weights;
        for v in &mut w {
            if !v.is_finite() {
                return Err(Error::InvalidParameter("simplex weight is not finite".into()));
            }
            if *v < 0.0 {
                if *v <= -SIMPLEX_TOL {
                    return Err(Error::InvalidParameter(format!(
                        "simplex weight {v} is negative beyond tolerance"
                    )));
                }
                *v = 0.0;
            }
        }
        let sum: f64 = w.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::InvalidParameter(format!(
                "simplex weights sum to {sum}, expected 1 within {SIMPLEX_TOL:e}"
            )));
        }
        Ok(Self(w))
    }

    pub fn uniform(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidParameter("simplex weights cannot be empty".into()));
        }
        Ok(Self(vec![1.0 / k as f64; k]))
    }

    pub fn vertex(k: usize, i: usize) -> Result<Self> {
        if i >= k {
            return Err(Error::InvalidParameter(format!("vertex {i} out of range for {k} weights")));
        }
        let mut w = vec![0.0; k];
        w[i] = 1.0;
        Ok(Self(w))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Indices with weight strictly above `eps`.
    pub fn support(&self, eps: f64) -> Vec<usize> {
        self.0
            .iter()
            .enumerate()
            .filter(|(_, &v)| v > eps)
            .map(|(i, _)| i)
            .collect()
    }

    /// The convex combination sum_i q_i p_i of the given points.
    pub fn combine(&self, points: &[DVector<f64>]) -> Result<DVector<f64>> {
        if points.len() != self.len() {
            return Err(Error::InvalidParameter(format!(
                "{} weights for {} points",
                self.len(),
                points.len()
            )));
        }
        let mut out = DVector::zeros(points[0].len());
        for (q, p) in self.0.iter().zip(points) {
            out.axpy(*q, p, 1.0);
        }
        Ok(out)
    }
}

impl std::ops::Index<usize> for SimplexWeights {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Result of minimizing q' G q over the simplex.
#[derive(Clone, Debug)]
pub struct QuadraticMin {
    pub weights: SimplexWeights,
    /// The attained quadratic value q' G q (squared norm when G is a
    /// Gram matrix).
    pub value: f64,
    /// Certified Frank-Wolfe gap at the returned weights.
    pub gap: f64,
    pub iterations: usize,
}

/// Minimize q' G q over the probability simplex, starting from the given
/// vertex, until the Frank-Wolfe gap falls to `gap_tol`.
///
/// G must be symmetric positive semidefinite for the gap certificate to
/// mean anything; this is the caller's responsibility (every caller in
/// the crate builds G as a Gram matrix). Ties in the vertex selection
/// break toward the lowest index, which keeps runs bit-reproducible.
pub fn simplex_quadratic_min(g: &DMatrix<f64>, gap_tol: f64, start: usize) -> Result<QuadraticMin> {
    simplex_quadratic_min_capped(g, gap_tol, start, ITERATION_CAP)
}

/// Same as [`simplex_quadratic_min`] with an explicit iteration budget.
pub fn simplex_quadratic_min_capped(
    g: &DMatrix<f64>,
    gap_tol: f64,
    start: usize,
    cap: usize,
) -> Result<QuadraticMin> {
    let k = g.nrows();
    if k == 0 || g.ncols() != k {
        return Err(Error::InvalidParameter(format!(
            "need a square nonempty matrix, got {}x{}",
            g.nrows(),
            g.ncols()
        )));
    }
    if !g.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidParameter("matrix has non-finite entries".into()));
    }
    if gap_tol.is_nan() || gap_tol <= 0.0 {
        return Err(Error::InvalidParameter(format!("gap tolerance must be positive, got {gap_tol}")));
    }
    if start >= k {
        return Err(Error::InvalidParameter(format!("start vertex {start} out of range for {k}")));
    }

    let mut q = DVector::zeros(k);
    q[start] = 1.0;
    let mut gq: DVector<f64> = g.column(start).into();
    let mut last_gap = f64::INFINITY;

    for iter in 0..cap {
        if iter % REFRESH_PERIOD == REFRESH_PERIOD - 1 {
            // Shed drift in both the weights and the maintained product.
            let sum: f64 = q.iter().sum();
            q /= sum;
            gq = g * &q;
        }

        let value = q.dot(&gq);

        // Toward vertex: the minimizer of the linearization.
        let (toward, g_toward) = argmin(&gq);
        let fw_gap = 2.0 * (value - g_toward);
        if fw_gap <= gap_tol {
            // The maintained product may have drifted; certify against a
            // fresh one before declaring victory.
            gq = g * &q;
            let value = q.dot(&gq);
            let (_, g_toward) = argmin(&gq);
            let fw_gap = 2.0 * (value - g_toward);
            if fw_gap <= gap_tol {
                return Ok(finish(q, value, fw_gap, iter));
            }
            last_gap = fw_gap;
            continue;
        }
        last_gap = fw_gap;

        // Away vertex: the worst active one.
        let (away, g_away) = argmax_active(&gq, &q);
        let away_gap = 2.0 * (g_away - value);

        if away_gap > fw_gap && q[away] < 1.0 {
            // Away step along d = q - e_away; the step is capped at
            // q_away / (1 - q_away), where the away vertex drops out.
            let step_max = q[away] / (1.0 - q[away]);
            let curvature = value - 2.0 * g_away + g[(away, away)];
            let exact = if curvature > 0.0 { away_gap / (2.0 * curvature) } else { f64::INFINITY };
            let drop = exact >= step_max;
            let step = if drop { step_max } else { exact };
            q *= 1.0 + step;
            q[away] -= step;
            if drop {
                q[away] = 0.0;
            }
            gq = &gq * (1.0 + step) - g.column(away) * step;
        } else {
            // Toward step along d = e_toward - q with exact line search.
            let curvature = g[(toward, toward)] - 2.0 * g_toward + value;
            let step = if curvature > 0.0 { (fw_gap / (2.0 * curvature)).min(1.0) } else { 1.0 };
            q *= 1.0 - step;
            q[toward] += step;
            gq = &gq * (1.0 - step) + g.column(toward) * step;
        }

        // Exact line search cannot leave the simplex, but floating point
        // can leave a -1e-18 residue; snap it out so the support stays
        // meaningful.
        for v in q.iter_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
    }

    Err(Error::IterationCap { cap, gap: last_gap, tol: gap_tol })
}

fn finish(q: DVector<f64>, value: f64, gap: f64, iterations: usize) -> QuadraticMin {
    let weights = SimplexWeights::new(q.iter().copied().collect())
        .expect("solver maintains the simplex invariant");
    QuadraticMin { weights, value, gap: gap.max(0.0), iterations }
}

fn argmin(v: &DVector<f64>) -> (usize, f64) {
    let mut best = 0;
    let mut best_v = v[0];
    for i in 1..v.len() {
        if v[i] < best_v {
            best = i;
            best_v = v[i];
        }
    }
    (best, best_v)
}

fn argmax_active(v: &DVector<f64>, q: &DVector<f64>) -> (usize, f64) {
    let mut best = usize::MAX;
    let mut best_v = f64::NEG_INFINITY;
    for i in 0..v.len() {
        if q[i] > 0.0 && v[i] > best_v {
            best = i;
            best_v = v[i];
        }
    }
    (best, best_v)
}

/// Minimum-norm point of the convex hull of explicit points.
#[derive(Clone, Debug)]
pub struct MinNormPoint {
    pub weights: SimplexWeights,
    /// The attained norm || sum_i q_i p_i ||.
    pub value: f64,
    /// Frank-Wolfe gap of the underlying quadratic problem.
    pub gap: f64,
    /// The combination sum_i q_i p_i itself.
    pub combination: DVector<f64>,
    pub iterations: usize,
}

pub fn min_norm_point(points: &[DVector<f64>], gap_tol: f64) -> Result<MinNormPoint> {
    min_norm_point_from(points, gap_tol, 0)
}

/// Like [`min_norm_point`] but starting Frank-Wolfe from a chosen vertex;
/// useful for probing uniqueness of the dual weights.
pub fn min_norm_point_from(points: &[DVector<f64>], gap_tol: f64, start: usize) -> Result<MinNormPoint> {
    if points.is_empty() {
        return Err(Error::InvalidParameter("need at least one point".into()));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::InvalidParameter("points have mixed dimensions".into()));
    }
    let g = gram_of(points);
    let qm = simplex_quadratic_min(&g, gap_tol, start)?;
    let combination = qm.weights.combine(points)?;
    Ok(MinNormPoint {
        value: qm.value.max(0.0).sqrt(),
        weights: qm.weights,
        gap: qm.gap,
        combination,
        iterations: qm.iterations,
    })
}

/// Gram matrix of a point list, mirrored so it is exactly symmetric.
pub fn gram_of(points: &[DVector<f64>]) -> DMatrix<f64> {
    let k = points.len();
    let mut g = DMatrix::zeros(k, k);
    for i in 0..k {
        for j in i..k {
            let v = points[i].dot(&points[j]);
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    g
}
