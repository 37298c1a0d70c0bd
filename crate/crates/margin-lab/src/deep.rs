//! Deep linear networks: margin ascent over products of Frobenius-unit
//! layer matrices.
//!
//! A parameter point is a chain W_1, ..., W_L with shapes
//! m_0 x m_1, ..., m_{L-1} x m_L and m_L = 1, each layer normalized to
//! Frobenius norm 1. The predictor is the product vector
//! P(W) = W_1 W_2 ... W_L in the input space, so the model class is just
//! linear classifiers again; what changes is the geometry of the ascent.
//! Since the spectral norm is at most the Frobenius norm, ||P|| <= 1
//! always, and therefore the raw product margin never exceeds the
//! optimal linear margin: depth buys no extra margin, a fact the checks
//! here verify numerically at every step.
//!
//! The gradient of any linear functional v' P(W) with respect to layer l
//! is the rank-one matrix
//!
//! ```text
//! G_l(v) = U_{l-1}' v V_{l+1}',   U_l = W_1..W_l,  V_l = W_l..W_L,
//! ```
//!
//! which pairs with the layer itself as <G_l(s_i), W_l>_F = s_i' P(W)
//! for every layer: each layer sees the full margin through its own
//! gradient (the trace identity). The ascent in [`riemannian_ascent`]
//! takes these layer gradients at the Boltzmann weighting of the
//! margins, projects them onto the tangent space of the Frobenius
//! sphere, steps, and retracts by renormalizing.

use serde::Serialize;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::margin::{normalize, MarginSolution, INEQ_TOL, SUPPORT_EPS};
use crate::minnorm;
use crate::smooth::{value_from_margins, weights_from_margins, SmoothMarginParams};
use crate::trajectory::{Record, Trajectory, TrajectoryKind, TrajectoryMeta};

/// Tolerance on the per-layer Frobenius normalization.
pub const LAYER_NORM_TOL: f64 = 1e-9;

/// Worst allowed violation of the trace identity along a run.
pub const TRACE_TOL: f64 = 1e-10;

/// Product norms below this count as degenerate (the predictor has
/// collapsed); the ascent restarts from a fresh seed when it happens.
pub const DEGENERATE_PRODUCT_TOL: f64 = 1e-12;

/// Widths m_0, m_1, ..., m_L of a deep linear chain; the output width
/// m_L must be 1.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Architecture {
    widths: Vec<usize>,
}

impl Architecture {
    pub fn new(widths: Vec<usize>) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::InvalidParameter(
                "an architecture needs at least input and output widths".into(),
            ));
        }
        if widths.contains(&0) {
            return Err(Error::InvalidParameter("layer widths must be positive".into()));
        }
        if *widths.last().unwrap() != 1 {
            return Err(Error::InvalidParameter(format!(
                "output width must be 1, got {}",
                widths.last().unwrap()
            )));
        }
        Ok(Self { widths })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    /// Number of layers L.
    pub fn depth(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn label(&self) -> String {
        let w: Vec<String> = self.widths.iter().map(|w| w.to_string()).collect();
        w.join("-")
    }
}

/// A parameter point: one Frobenius-unit matrix per layer.
#[derive(Clone, Debug, PartialEq)]
pub struct DeepParams {
    layers: Vec<DMatrix<f64>>,
}

impl DeepParams {
    pub fn new(layers: Vec<DMatrix<f64>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidParameter("need at least one layer".into()));
        }
        if layers.last().unwrap().ncols() != 1 {
            return Err(Error::InvalidParameter("last layer must have one column".into()));
        }
        for (l, pair) in layers.windows(2).enumerate() {
            if pair[0].ncols() != pair[1].nrows() {
                return Err(Error::InvalidParameter(format!(
                    "layer {l} has {} columns but layer {} has {} rows",
                    pair[0].ncols(),
                    l + 1,
                    pair[1].nrows()
                )));
            }
        }
        for (l, w) in layers.iter().enumerate() {
            if !w.iter().all(|v| v.is_finite()) {
                return Err(Error::InvalidParameter(format!("layer {l} has non-finite entries")));
            }
            if (w.norm() - 1.0).abs() > LAYER_NORM_TOL {
                return Err(Error::InvalidParameter(format!(
                    "layer {l} has Frobenius norm {}, expected 1",
                    w.norm()
                )));
            }
        }
        Ok(Self { layers })
    }

    /// Standard normal entries, each layer renormalized to the sphere.
    pub fn random(arch: &Architecture, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = arch
            .widths
            .windows(2)
            .map(|pair| loop {
                let w = DMatrix::from_fn(pair[0], pair[1], |_, _| {
                    rng.sample::<f64, _>(StandardNormal)
                });
                let norm = w.norm();
                if norm > 1e-8 {
                    break w / norm;
                }
            })
            .collect();
        Self { layers }
    }

    pub fn layers(&self) -> &[DMatrix<f64>] {
        &self.layers
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn architecture(&self) -> Architecture {
        let mut widths = vec![self.layers[0].nrows()];
        widths.extend(self.layers.iter().map(|w| w.ncols()));
        Architecture { widths }
    }
}

/// The product vector P(W) = W_1 ... W_L, living in the input space.
pub fn deep_product(params: &DeepParams) -> DVector<f64> {
    let mut v = DVector::from_element(1, 1.0);
    for w in params.layers.iter().rev() {
        v = w * v;
    }
    v
}

/// Worst raw margin of the product vector, min_i s_i' P(W).
pub fn deep_margin(params: &DeepParams, d: &Dataset) -> f64 {
    let p = deep_product(params);
    d.margins(&p).into_iter().fold(f64::INFINITY, f64::min)
}

/// Prefix products U_0 = I, U_l = W_1..W_l and vector suffixes
/// V_{l+1} = W_{l+1}..W_L; the building blocks of every layer gradient.
struct ChainProducts {
    prefix: Vec<DMatrix<f64>>,
    /// suffix[l] = V_{l+1} as a vector; suffix[L] is the scalar 1.
    suffix: Vec<DVector<f64>>,
}

impl ChainProducts {
    fn of(params: &DeepParams) -> Self {
        let depth = params.layers.len();
        let m0 = params.layers[0].nrows();
        let mut prefix = Vec::with_capacity(depth);
        prefix.push(DMatrix::identity(m0, m0));
        for l in 0..depth - 1 {
            let next = &prefix[l] * &params.layers[l];
            prefix.push(next);
        }
        let mut suffix = vec![DVector::from_element(1, 1.0); depth + 1];
        for l in (0..depth).rev() {
            suffix[l] = &params.layers[l] * &suffix[l + 1];
        }
        Self { prefix, suffix }
    }

    fn product(&self) -> &DVector<f64> {
        &self.suffix[0]
    }

    /// G_l(v) = U_{l-1}' v V_{l+1}' for the 0-based layer index l.
    fn layer_gradient(&self, l: usize, v: &DVector<f64>) -> DMatrix<f64> {
        let left = self.prefix[l].tr_mul(v);
        left * self.suffix[l + 1].transpose()
    }
}

/// Per-layer gradients of w -> v' P(W) at every layer.
pub fn layer_gradients(params: &DeepParams, v: &DVector<f64>) -> Vec<DMatrix<f64>> {
    let chain = ChainProducts::of(params);
    (0..params.depth()).map(|l| chain.layer_gradient(l, v)).collect()
}

/// Project per-layer matrices onto the tangent space of the Frobenius
/// sphere at the current layers: T_l = G_l - <G_l, W_l>_F W_l.
pub fn tangent_project(params: &DeepParams, grads: &[DMatrix<f64>]) -> Vec<DMatrix<f64>> {
    grads
        .iter()
        .zip(&params.layers)
        .map(|(g, w)| g - w * g.dot(w))
        .collect()
}

/// One evaluation of the layer-gradient growth inequality at a
/// parameter point with nonnegative product margin:
///
/// ```text
/// min over active-face weights q of
///     sum_l || G_l(sum_i q_i s_i) - gamma(W) W_l ||_F^2
///   >=  L * gamma_opt * (gamma_opt - gamma(W))
/// ```
///
/// The left side is the squared distance from the closest aggregated
/// layer gradient to the scaled parameter point itself, minimized over
/// the margin's active face; it is computed exactly as a min-norm
/// problem over the stacked per-sample layer gradients.
///
/// Beware: the stated right-hand side is not actually a lower bound.
/// Configurations exist (see the module tests for a two-layer example on
/// the axis dataset) where the left side is strictly smaller, and ascent
/// trajectories pass through such configurations, so callers must treat
/// `holds == false` as information about the inequality, not about the
/// arithmetic.
#[derive(Clone, Copy, Debug)]
pub struct SubgradCheck {
    pub lhs: f64,
    pub rhs: f64,
    /// Whether gamma(W) >= 0, the inequality's hypothesis.
    pub applicable: bool,
    /// lhs >= rhs - [`INEQ_TOL`], or vacuously true when inapplicable.
    pub holds: bool,
}

pub fn deep_subgradient_check(
    params: &DeepParams,
    d: &Dataset,
    eps: f64,
    sol: &MarginSolution,
) -> Result<SubgradCheck> {
    if d.dim() != params.layers[0].nrows() {
        return Err(Error::InvalidParameter(format!(
            "dataset dimension {} does not match architecture input width {}",
            d.dim(),
            params.layers[0].nrows()
        )));
    }
    let chain = ChainProducts::of(params);
    let margins = d.margins(chain.product());
    let gamma = margins.iter().copied().fold(f64::INFINITY, f64::min);
    let applicable = gamma >= 0.0;

    // Stack, per active sample, the flattened per-layer gradients minus
    // the gamma-scaled layers; the minimum over the active face is then
    // a plain min-norm-point problem on these stacked vectors.
    let total: usize = params.layers.iter().map(|w| w.nrows() * w.ncols()).sum();
    let active: Vec<usize> = (0..d.n()).filter(|&i| margins[i] <= gamma + eps).collect();
    let stacked: Vec<DVector<f64>> = active
        .iter()
        .map(|&i| {
            let s = d.signed_point(i);
            let mut flat = DVector::zeros(total);
            let mut at = 0;
            for l in 0..params.depth() {
                let g = chain.layer_gradient(l, &s);
                for (v, w) in g.iter().zip(params.layers[l].iter()) {
                    flat[at] = v - gamma * w;
                    at += 1;
                }
            }
            flat
        })
        .collect();
    let lhs = {
        let mn = minnorm::min_norm_point(&stacked, 1e-12)?;
        mn.value * mn.value
    };
    let rhs = params.depth() as f64 * sol.gamma_opt * (sol.gamma_opt - gamma);
    Ok(SubgradCheck { lhs, rhs, applicable, holds: !applicable || lhs >= rhs - INEQ_TOL })
}

/// Aggregate pass/fail bookkeeping for a check evaluated along a run.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct IterateCheckStats {
    /// Iterates where the check's hypothesis held.
    pub checked: usize,
    pub passed: usize,
    /// Smallest observed slack (negative means a violation); 0 when the
    /// check never applied.
    pub worst_slack: f64,
    /// Iteration index of the worst slack.
    pub worst_at: Option<f64>,
}

impl Default for IterateCheckStats {
    fn default() -> Self {
        Self { checked: 0, passed: 0, worst_slack: 0.0, worst_at: None }
    }
}

impl IterateCheckStats {
    fn observe(&mut self, slack: f64, t: f64, tol: f64) {
        self.checked += 1;
        if slack >= -tol {
            self.passed += 1;
        }
        if self.worst_at.is_none() || slack < self.worst_slack {
            self.worst_slack = slack;
            self.worst_at = Some(t);
        }
    }

    pub fn all_passed(&self) -> bool {
        self.passed == self.checked
    }
}

/// Invariant bookkeeping accumulated along an ascent run when
/// `check_iterates` is on.
#[derive(Clone, Copy, Debug, Default, Serialize)]
pub struct DeepRunChecks {
    /// Worst |<G_l(s_i), W_l>_F - margin_i| over all layers, samples,
    /// and checked iterates. Must stay below [`TRACE_TOL`].
    pub worst_trace_residual: f64,
    /// Worst gamma(W) - gamma_opt over checked iterates; positive beyond
    /// [`INEQ_TOL`] would mean depth manufactured margin from nothing.
    pub worst_margin_excess: f64,
    /// ||P - w_opt|| <= 2 sqrt(1 - gamma(W)/gamma_opt) at every iterate.
    pub product_bound: IterateCheckStats,
    /// The layer-gradient growth inequality of
    /// [`deep_subgradient_check`], evaluated at every iterate with
    /// nonnegative margin.
    pub subgradient: IterateCheckStats,
}

#[derive(Clone, Debug)]
pub struct DeepAscentConfig {
    pub steps: usize,
    pub eta: f64,
    pub seed: u64,
    /// 1-based iterations to record (out-of-range entries are ignored).
    pub record_at: Vec<usize>,
    /// Evaluate the invariant checks at every iterate (init included).
    pub check_iterates: bool,
    /// Restarts allowed when the layer product collapses.
    pub max_restarts: usize,
}

impl Default for DeepAscentConfig {
    fn default() -> Self {
        Self {
            steps: 5000,
            eta: 0.1,
            seed: 0,
            record_at: Vec::new(),
            check_iterates: false,
            max_restarts: 16,
        }
    }
}

#[derive(Clone, Debug)]
pub struct DeepRun {
    pub trajectory: Trajectory,
    /// Present when the run was asked to check its iterates.
    pub checks: Option<DeepRunChecks>,
    /// How many times the run restarted from a fresh seed because the
    /// product collapsed.
    pub restarts: usize,
    pub final_params: DeepParams,
}

/// Ascend the smoothed margin of the product over the layer spheres.
///
/// Each step takes the per-layer gradients at the Boltzmann weights of
/// the current margins, projects them tangent to the Frobenius spheres,
/// moves by `eta`, and renormalizes every layer. The recorded `margin`
/// column holds the raw product margin gamma(W); `deficit` and `bias`
/// are computed from the normalized product P/||P||, and the extra
/// column `product_dist` holds the unnormalized distance ||P - w_opt||
/// that the product bound controls.
pub fn riemannian_ascent(
    d: &Dataset,
    arch: &Architecture,
    p: &SmoothMarginParams,
    cfg: &DeepAscentConfig,
    sol: &MarginSolution,
) -> Result<DeepRun> {
    if arch.input_dim() != d.dim() {
        return Err(Error::InvalidParameter(format!(
            "architecture input width {} does not match dataset dimension {}",
            arch.input_dim(),
            d.dim()
        )));
    }
    if !(cfg.eta > 0.0 && cfg.eta.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "eta must be positive and finite, got {}",
            cfg.eta
        )));
    }
    if cfg.steps == 0 {
        return Err(Error::InvalidParameter("need at least one step".into()));
    }
    let record_set: std::collections::BTreeSet<usize> =
        cfg.record_at.iter().copied().filter(|k| *k >= 1 && *k <= cfg.steps).collect();
    if record_set.is_empty() {
        return Err(Error::InvalidParameter("no recordable iterations requested".into()));
    }

    'attempt: for restarts in 0..=cfg.max_restarts {
        let seed = cfg.seed.wrapping_add(restarts as u64);
        let mut params = DeepParams::random(arch, seed);
        let mut records = Vec::with_capacity(record_set.len());
        let mut checks = cfg.check_iterates.then(DeepRunChecks::default);

        for k in 0..=cfg.steps {
            let chain = ChainProducts::of(&params);
            let prod = chain.product().clone();
            let prod_norm = prod.norm();
            if !prod_norm.is_finite() {
                return Err(Error::Diverged { t: k as f64, norm: prod_norm });
            }
            if prod_norm < DEGENERATE_PRODUCT_TOL {
                continue 'attempt;
            }
            let margins = d.margins(&prod);
            let gamma_raw = margins.iter().copied().fold(f64::INFINITY, f64::min);

            if let Some(ch) = checks.as_mut() {
                let t = k as f64;
                for (i, &mi) in margins.iter().enumerate() {
                    let s = d.signed_point(i);
                    for l in 0..params.depth() {
                        let g = chain.layer_gradient(l, &s);
                        let residual = (g.dot(&params.layers[l]) - mi).abs();
                        ch.worst_trace_residual = ch.worst_trace_residual.max(residual);
                    }
                }
                ch.worst_margin_excess = ch.worst_margin_excess.max(gamma_raw - sol.gamma_opt);
                let dist = (&prod - &sol.w_opt).norm();
                let bound = 2.0 * (1.0 - gamma_raw / sol.gamma_opt).max(0.0).sqrt();
                ch.product_bound.observe(bound - dist, t, INEQ_TOL);
                let sg = deep_subgradient_check(&params, d, SUPPORT_EPS, sol)?;
                if sg.applicable {
                    ch.subgradient.observe(sg.lhs - sg.rhs, t, INEQ_TOL);
                }
            }

            if record_set.contains(&k) {
                records.push(deep_record(
                    k as f64,
                    &chain,
                    &margins,
                    gamma_raw,
                    &params,
                    d,
                    p,
                    sol,
                )?);
            }
            if k == cfg.steps {
                break;
            }

            // Ascent direction: Boltzmann-weighted signed points pushed
            // through the chain, tangent to each layer sphere.
            let q = weights_from_margins(&margins, p.beta);
            let mut v = DVector::zeros(d.dim());
            for (i, qi) in q.iter().enumerate() {
                v.axpy(qi * d.label(i), d.feature(i), 1.0);
            }
            let grads: Vec<DMatrix<f64>> =
                (0..params.depth()).map(|l| chain.layer_gradient(l, &v)).collect();
            let tangent = tangent_project(&params, &grads);

            for (w, t) in params.layers.iter_mut().zip(&tangent) {
                *w += t * cfg.eta;
                let norm = w.norm();
                if !norm.is_finite() {
                    return Err(Error::Diverged { t: (k + 1) as f64, norm });
                }
                if norm < DEGENERATE_PRODUCT_TOL {
                    continue 'attempt;
                }
                *w /= norm;
            }
        }

        let trajectory = Trajectory {
            meta: TrajectoryMeta {
                dataset_id: d.fingerprint(),
                kind: TrajectoryKind::Deep,
                schedule: format!("deep({}, eta={})", arch.label(), cfg.eta),
                beta: p.beta,
                seed: Some(seed),
                tol: sol.tol,
                extra_column: Some("product_dist".into()),
            },
            records,
        };
        trajectory.check_well_formed()?;
        return Ok(DeepRun { trajectory, checks, restarts, final_params: params });
    }

    Err(Error::DegenerateProduct { restarts: cfg.max_restarts })
}

/// Build one trajectory record at the current parameters. `grad_norm`
/// holds the Riemannian gradient norm (the joint Frobenius norm of the
/// tangent-projected layer gradients) at this very iterate, matching the
/// at-the-iterate semantics of the linear drivers.
#[allow(clippy::too_many_arguments)]
fn deep_record(
    t: f64,
    chain: &ChainProducts,
    margins: &[f64],
    gamma_raw: f64,
    params: &DeepParams,
    d: &Dataset,
    p: &SmoothMarginParams,
    sol: &MarginSolution,
) -> Result<Record> {
    let prod = chain.product();
    let prod_norm = prod.norm();
    let q = weights_from_margins(margins, p.beta);
    let mut v = DVector::zeros(d.dim());
    for (i, qi) in q.iter().enumerate() {
        v.axpy(qi * d.label(i), d.feature(i), 1.0);
    }
    let grads: Vec<DMatrix<f64>> =
        (0..params.depth()).map(|l| chain.layer_gradient(l, &v)).collect();
    let tangent = tangent_project(params, &grads);
    let grad_norm = tangent.iter().map(|m| m.norm_squared()).sum::<f64>().sqrt();
    let normalized = normalize(prod)?;
    Ok(Record {
        t,
        norm_w: prod_norm,
        margin: gamma_raw,
        smooth_margin: value_from_margins(margins, p.beta),
        grad_norm,
        bias: (&normalized - &sol.w_opt).norm(),
        deficit: sol.gamma_opt - gamma_raw / prod_norm,
        extra: Some((prod - &sol.w_opt).norm()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::examples;
    use crate::margin::{optimal_margin, DEFAULT_MARGIN_TOL};
    use approx::assert_abs_diff_eq;

    fn arch(widths: &[usize]) -> Architecture {
        Architecture::new(widths.to_vec()).unwrap()
    }

    fn sol_for(d: &Dataset) -> MarginSolution {
        optimal_margin(d, DEFAULT_MARGIN_TOL).unwrap()
    }

    /// The two-layer configuration W_1 = I/sqrt(2), W_2 = e_1 on the
    /// axis dataset d1. Its product is (1/sqrt(2), 0), margin 1/sqrt(2).
    fn contracted_aligned() -> DeepParams {
        let r = 0.5f64.sqrt();
        DeepParams::new(vec![
            DMatrix::from_row_slice(2, 2, &[r, 0.0, 0.0, r]),
            DMatrix::from_row_slice(2, 1, &[1.0, 0.0]),
        ])
        .unwrap()
    }

    #[test]
    fn architecture_validation() {
        assert!(Architecture::new(vec![3, 2, 1]).is_ok());
        assert!(Architecture::new(vec![3]).is_err());
        assert!(Architecture::new(vec![3, 0, 1]).is_err());
        assert!(Architecture::new(vec![3, 2, 2]).is_err());
        let a = arch(&[4, 3, 1]);
        assert_eq!(a.depth(), 2);
        assert_eq!(a.input_dim(), 4);
        assert_eq!(a.label(), "4-3-1");
    }

    #[test]
    fn params_validation() {
        let r = 0.5f64.sqrt();
        let good = DMatrix::from_row_slice(2, 2, &[r, 0.0, 0.0, r]);
        let e1 = DMatrix::from_row_slice(2, 1, &[1.0, 0.0]);
        assert!(DeepParams::new(vec![good.clone(), e1.clone()]).is_ok());
        // Shape mismatch.
        let e1_row = DMatrix::from_row_slice(1, 1, &[1.0]);
        assert!(DeepParams::new(vec![good.clone(), e1_row]).is_err());
        // Last layer must be a column.
        assert!(DeepParams::new(vec![good.clone()]).is_err());
        // Unnormalized layer.
        let big = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        assert!(DeepParams::new(vec![big, e1]).is_err());
        assert!(DeepParams::new(vec![]).is_err());
    }

    #[test]
    fn random_params_are_deterministic_unit_layers() {
        let a = arch(&[3, 4, 2, 1]);
        let p1 = DeepParams::random(&a, 7);
        let p2 = DeepParams::random(&a, 7);
        assert_eq!(p1, p2);
        assert_ne!(p1, DeepParams::random(&a, 8));
        assert_eq!(p1.depth(), 3);
        assert_eq!(p1.architecture(), a);
        for w in p1.layers() {
            assert_abs_diff_eq!(w.norm(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn product_and_margin_of_a_hand_built_chain() {
        let params = contracted_aligned();
        let p = deep_product(&params);
        let r = 0.5f64.sqrt();
        assert_abs_diff_eq!(p[0], r, epsilon = 1e-15);
        assert_abs_diff_eq!(p[1], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(deep_margin(&params, &examples::d1()), r, epsilon = 1e-15);
    }

    #[test]
    fn product_norm_never_exceeds_one() {
        for (i, widths) in [[2usize, 2, 1].as_slice(), &[5, 3, 1], &[3, 4, 4, 1]]
            .iter()
            .enumerate()
        {
            let a = arch(widths);
            for seed in 0..30 {
                let params = DeepParams::random(&a, seed + 100 * i as u64);
                assert!(deep_product(&params).norm() <= 1.0 + 1e-12);
            }
        }
    }

    #[test]
    fn trace_identity_holds_at_random_parameters() {
        let d = examples::d3();
        let a = arch(&[2, 3, 2, 1]);
        for seed in 0..20 {
            let params = DeepParams::random(&a, seed);
            let prod = deep_product(&params);
            let margins = d.margins(&prod);
            for (i, margin) in margins.iter().enumerate() {
                let grads = layer_gradients(&params, &d.signed_point(i));
                for (l, g) in grads.iter().enumerate() {
                    let paired = g.dot(&params.layers[l]);
                    assert!(
                        (paired - margin).abs() <= 1e-13,
                        "seed {seed} sample {i} layer {l}: {paired} vs {margin}"
                    );
                }
            }
        }
    }

    #[test]
    fn tangent_projection_is_orthogonal_and_idempotent() {
        let a = arch(&[3, 2, 1]);
        let params = DeepParams::random(&a, 3);
        let v = DVector::from_vec(vec![0.3, -0.2, 0.9]);
        let grads = layer_gradients(&params, &v);
        let tangent = tangent_project(&params, &grads);
        for (l, t) in tangent.iter().enumerate() {
            assert!(t.dot(&params.layers()[l]).abs() <= 1e-12, "layer {l} not tangent");
        }
        let twice = tangent_project(&params, &tangent);
        for (t1, t2) in tangent.iter().zip(&twice) {
            assert!((t1 - t2).norm() <= 1e-12);
        }
    }

    #[test]
    fn depth_buys_no_margin_at_random_parameters() {
        let d = examples::d2();
        let sol = sol_for(&d);
        for widths in [[2usize, 2, 1].as_slice(), &[2, 3, 3, 1]] {
            let a = arch(widths);
            for seed in 0..50 {
                let params = DeepParams::random(&a, seed);
                assert!(deep_margin(&params, &d) <= sol.gamma_opt + 1e-12);
            }
        }
    }

    #[test]
    fn product_bound_holds_at_random_parameters() {
        let d = examples::d3();
        let sol = sol_for(&d);
        let a = arch(&[2, 2, 1]);
        for seed in 0..50 {
            let params = DeepParams::random(&a, seed);
            let prod = deep_product(&params);
            let gamma = deep_margin(&params, &d);
            let dist = (&prod - &sol.w_opt).norm();
            let bound = 2.0 * (1.0 - gamma / sol.gamma_opt).max(0.0).sqrt();
            assert!(dist <= bound + 1e-9, "seed {seed}: {dist} > {bound}");
        }
    }

    #[test]
    fn subgradient_check_is_tight_at_the_aligned_optimum() {
        // W_1 = e_1 e_1', W_2 = e_1 on d1 realizes the max-margin vector
        // exactly; both sides of the inequality vanish.
        let d = examples::d1();
        let sol = sol_for(&d);
        let params = DeepParams::new(vec![
            DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]),
            DMatrix::from_row_slice(2, 1, &[1.0, 0.0]),
        ])
        .unwrap();
        let c = deep_subgradient_check(&params, &d, SUPPORT_EPS, &sol).unwrap();
        assert!(c.applicable && c.holds);
        assert_abs_diff_eq!(c.lhs, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(c.rhs, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn subgradient_check_fails_at_the_contracted_aligned_point() {
        // The documented counterexample to the stated inequality: at
        // W_1 = I/sqrt(2), W_2 = e_1 on d1 the product is aligned with
        // the optimum but contracted, gamma(W) = 1/sqrt(2). Direct
        // computation gives lhs = 1/2 (all of it from layer 1, where
        // G_1 - gamma W_1 = diag(1/2, -1/2)), while the stated right side
        // is 2 * 1 * (1 - 1/sqrt(2)) = 0.5857.., strictly larger. The
        // check must report exactly these values and holds = false.
        let d = examples::d1();
        let sol = sol_for(&d);
        let c = deep_subgradient_check(&contracted_aligned(), &d, SUPPORT_EPS, &sol).unwrap();
        assert!(c.applicable);
        assert_abs_diff_eq!(c.lhs, 0.5, epsilon = 1e-9);
        assert_abs_diff_eq!(c.rhs, 2.0 * (1.0 - 0.5f64.sqrt()), epsilon = 1e-9);
        assert_abs_diff_eq!(c.rhs, 0.5857864376269051, epsilon = 1e-12);
        assert!(!c.holds, "lhs {} unexpectedly reached rhs {}", c.lhs, c.rhs);
    }

    #[test]
    fn single_layer_check_agrees_with_the_flat_geometry() {
        // With L = 1 the parameter point is itself a unit vector w and
        // the stacked problem is min over the active face of
        // ||sum q_i s_i - gamma w||^2. At w = (1, 0) on d2 the active set
        // is the singleton {sample 1} with margin 0, so the value is
        // ||s_1||^2 = 1, matching the tangential subgradient norm there.
        let d = examples::d2();
        let sol = sol_for(&d);
        let params =
            DeepParams::new(vec![DMatrix::from_row_slice(2, 1, &[1.0, 0.0])]).unwrap();
        let c = deep_subgradient_check(&params, &d, SUPPORT_EPS, &sol).unwrap();
        assert!(c.applicable);
        assert_abs_diff_eq!(c.lhs, 1.0, epsilon = 1e-12);
        let s = crate::margin::min_norm_subgradient(
            &DVector::from_vec(vec![1.0, 0.0]),
            &d,
            SUPPORT_EPS,
            1e-12,
        )
        .unwrap();
        assert_abs_diff_eq!(c.lhs, s * s, epsilon = 1e-12);
        assert!(c.holds);
    }

    #[test]
    fn ascent_reaches_the_max_margin_direction() {
        let d = examples::d2();
        let sol = sol_for(&d);
        let p = SmoothMarginParams::default();
        let cfg = DeepAscentConfig {
            steps: 3000,
            record_at: vec![1, 10, 100, 1000, 3000],
            seed: 7,
            check_iterates: true,
            ..DeepAscentConfig::default()
        };
        let run = riemannian_ascent(&d, &arch(&[2, 2, 1]), &p, &cfg, &sol).unwrap();
        assert_eq!(run.restarts, 0);
        let last = run.trajectory.records.last().unwrap();
        assert!(last.deficit <= 0.01, "final deficit {}", last.deficit);
        assert!(last.norm_w <= 1.0 + 1e-12);
        assert_eq!(run.trajectory.meta.kind, TrajectoryKind::Deep);
        assert_eq!(run.trajectory.meta.extra_column.as_deref(), Some("product_dist"));

        let checks = run.checks.unwrap();
        assert!(checks.worst_trace_residual <= TRACE_TOL, "{}", checks.worst_trace_residual);
        assert!(checks.worst_margin_excess <= INEQ_TOL, "{}", checks.worst_margin_excess);
        assert!(checks.product_bound.all_passed());
        assert!(checks.product_bound.checked == 3001);
        // The subgradient inequality is checked wherever the margin was
        // nonnegative; on this symmetric set the trajectory aligns fast
        // and then contracts through configurations like the documented
        // counterexample, so violations are expected, not a solver bug.
        assert!(checks.subgradient.checked > 0);
    }

    #[test]
    fn deeper_ascent_still_converges() {
        let d = examples::d2();
        let sol = sol_for(&d);
        let p = SmoothMarginParams::default();
        let cfg = DeepAscentConfig {
            steps: 5000,
            record_at: vec![5000],
            seed: 1,
            ..DeepAscentConfig::default()
        };
        let run = riemannian_ascent(&d, &arch(&[2, 3, 3, 1]), &p, &cfg, &sol).unwrap();
        let last = run.trajectory.records.last().unwrap();
        assert!(last.deficit <= 0.01, "final deficit {}", last.deficit);
        // Checks were not requested, so none are reported.
        assert!(run.checks.is_none());
        for w in run.final_params.layers() {
            assert_abs_diff_eq!(w.norm(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn ascent_validates_its_inputs() {
        let d = examples::d2();
        let sol = sol_for(&d);
        let p = SmoothMarginParams::default();
        let a = arch(&[2, 2, 1]);
        let base = DeepAscentConfig { record_at: vec![1], ..DeepAscentConfig::default() };
        assert!(riemannian_ascent(&d, &arch(&[3, 2, 1]), &p, &base, &sol).is_err());
        let cfg = DeepAscentConfig { eta: 0.0, ..base.clone() };
        assert!(riemannian_ascent(&d, &a, &p, &cfg, &sol).is_err());
        let cfg = DeepAscentConfig { steps: 0, ..base.clone() };
        assert!(riemannian_ascent(&d, &a, &p, &cfg, &sol).is_err());
        let cfg = DeepAscentConfig { record_at: vec![], ..base.clone() };
        assert!(riemannian_ascent(&d, &a, &p, &cfg, &sol).is_err());
        let cfg = DeepAscentConfig { record_at: vec![100_000], steps: 10, ..base };
        assert!(riemannian_ascent(&d, &a, &p, &cfg, &sol).is_err());
    }

    #[test]
    fn subgradient_check_rejects_mismatched_dimensions() {
        let d = examples::d2();
        let sol = sol_for(&d);
        let params = DeepParams::random(&arch(&[3, 2, 1]), 0);
        assert!(deep_subgradient_check(&params, &d, SUPPORT_EPS, &sol).is_err());
    }
}
