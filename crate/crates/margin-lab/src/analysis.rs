//! After-the-fact verification of recorded trajectories and empirical
//! convergence-rate estimation.
//!
//! [`verify_trajectory`] replays a trajectory against every quantitative
//! guarantee that applies to its kind, using only the recorded columns
//! and the reference solution; it never re-runs the dynamic. Each check
//! reports how many records it applied to, how many passed, and the
//! worst slack it saw (negative slack = violation), so a failure
//! pinpoints the exact record.
//!
//! [`fit_rate`] estimates the exponent of a power-law decay by ordinary
//! least squares on log-log data. It refuses windows where the fitted
//! field has hit its numerical floor: fitting noise would silently
//! produce a flat slope, and the refusal is the honest answer.

use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::margin::{MarginSolution, INEQ_TOL};
use crate::trajectory::{Trajectory, TrajectoryKind};

/// Multiplicative headroom on the asymptotic flow bounds, absorbing the
/// integrator's discretization error (1 + 1e-3).
pub const RATE_BOUND_SLACK: f64 = 1.001;

/// One verified invariant over a whole trajectory.
#[derive(Clone, Debug, Serialize)]
pub struct CheckResult {
    pub name: String,
    /// Records the check's hypothesis applied to.
    #[serde(rename = "count_applicable")]
    pub checked: usize,
    #[serde(rename = "count_passed")]
    pub passed: usize,
    /// Smallest slack seen (negative means violation); 0 when the check
    /// never applied.
    pub worst_slack: f64,
    /// Time of the worst slack.
    #[serde(rename = "location_of_worst")]
    pub worst_at: Option<f64>,
}

impl CheckResult {
    fn new(name: &str) -> Self {
        Self { name: name.into(), checked: 0, passed: 0, worst_slack: 0.0, worst_at: None }
    }

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

fn summary_of(passed: bool) -> String {
    if passed { "pass" } else { "fail" }.into()
}

/// Everything [`verify_trajectory`] concluded about one trajectory.
#[derive(Clone, Debug, Serialize)]
pub struct VerificationReport {
    pub dataset_id: String,
    pub kind: TrajectoryKind,
    pub schedule: String,
    pub checks: Vec<CheckResult>,
    /// `"pass"` or `"fail"`.
    pub summary: String,
}

impl VerificationReport {
    pub fn passed(&self) -> bool {
        self.summary == "pass"
    }

    /// The checks that failed, if any.
    pub fn failures(&self) -> Vec<&CheckResult> {
        self.checks.iter().filter(|c| !c.all_passed()).collect()
    }
}

/// Check a recorded trajectory against the guarantees for its kind.
///
/// All kinds: the recorded margin never beats the optimal one. Linear
/// kinds (flow and discrete schedules): gradient norms stay pinched
/// between the optimal margin and the data radius. Flow additionally:
/// (a) the deficit decays like log(n)/(gamma t) once t passes
/// log(n)/gamma^2, (d) the smoothed margin grows at least like
/// gamma^2 t, the iterate norm grows at most linearly, and (e) the
/// distance to the optimum decays like sqrt(log(n)/t)/gamma. Flow,
/// discrete, and deep kinds: (b) the margin deficit and the distance to
/// the max-margin direction interlace in both directions. Deep
/// additionally: the raw product margin never exceeds the optimal
/// linear one, the product stays in the unit ball, and its distance to
/// the optimum obeys the product bound. Kernel trajectories record
/// their margins against the RKHS optimum, which is not the linear
/// `sol`, so only the solution-free checks run for them.
///
/// A final `chained_implication` entry asserts the internal consistency
/// of the flow checks: whenever the margin rate (a) and the interlace
/// upper bound both hold, the chained bias bound (e) must hold too.
pub fn verify_trajectory(
    traj: &Trajectory,
    d: &Dataset,
    sol: &MarginSolution,
) -> Result<VerificationReport> {
    let actual = d.fingerprint();
    if actual != traj.meta.dataset_id {
        return Err(Error::DatasetMismatch { expected: traj.meta.dataset_id.clone(), actual });
    }
    traj.check_well_formed()?;

    let kind = traj.meta.kind;
    let gamma = sol.gamma_opt;
    let radius = d.max_feature_norm();
    let log_n = (d.n() as f64).ln();
    let t_burn = log_n / (gamma * gamma);

    let mut margin_bound = CheckResult::new("margin_bound");
    let mut grad_bounds = CheckResult::new("grad_norm_bounds");
    let mut interlace_lower = CheckResult::new("interlace_lower");
    let mut interlace_upper = CheckResult::new("interlace_upper");
    let mut margin_rate = CheckResult::new("margin_rate");
    let mut smooth_energy = CheckResult::new("smooth_energy");
    let mut norm_growth = CheckResult::new("norm_growth");
    let mut chained_bias = CheckResult::new("chained_bias");
    let mut deep_margin = CheckResult::new("deep_margin_bound");
    let mut deep_ball = CheckResult::new("deep_norm_bound");
    let mut deep_product = CheckResult::new("deep_product_bound");

    let linear = matches!(kind, TrajectoryKind::Flow | TrajectoryKind::Gd);
    let interlacing = matches!(
        kind,
        TrajectoryKind::Flow | TrajectoryKind::Gd | TrajectoryKind::Deep
    );

    for r in &traj.records {
        // The deficit column is measured against the optimum of the
        // trajectory's own geometry (gamma_H for kernel runs), so this
        // one is meaningful for every kind.
        margin_bound.observe(r.deficit, r.t, INEQ_TOL);

        if linear {
            grad_bounds
                .observe((r.grad_norm - gamma).min(radius - r.grad_norm), r.t, INEQ_TOL);
        }
        if interlacing {
            let normalized_margin = gamma - r.deficit;
            interlace_lower.observe(r.bias - r.deficit / radius, r.t, INEQ_TOL);
            if normalized_margin >= 0.0 {
                let upper = 2.0 * (r.deficit.max(0.0) / gamma).sqrt();
                interlace_upper.observe(upper - r.bias, r.t, INEQ_TOL);
            }
        }
        if kind == TrajectoryKind::Flow {
            if r.t >= t_burn {
                let bound = log_n / (gamma * r.t) * RATE_BOUND_SLACK;
                margin_rate.observe(bound - r.deficit, r.t, INEQ_TOL);
                let bias_bound = 2.0 / gamma * (log_n / r.t).sqrt() * RATE_BOUND_SLACK;
                chained_bias.observe(bias_bound - r.bias, r.t, INEQ_TOL);
            }
            smooth_energy.observe(
                r.smooth_margin - gamma * gamma * r.t / RATE_BOUND_SLACK,
                r.t,
                INEQ_TOL,
            );
            norm_growth.observe(r.t * (1.0 + 1e-6) - r.norm_w, r.t, INEQ_TOL);
        }
        if kind == TrajectoryKind::Deep {
            deep_margin.observe(gamma - r.margin, r.t, INEQ_TOL);
            deep_ball.observe(1.0 - r.norm_w, r.t, INEQ_TOL);
            if let Some(product_dist) = r.extra {
                let bound = 2.0 * (1.0 - r.margin / gamma).max(0.0).sqrt();
                deep_product.observe(bound - product_dist, r.t, INEQ_TOL);
            }
        }
    }

    let mut checks = vec![margin_bound];
    if linear {
        checks.push(grad_bounds);
    }
    if interlacing {
        checks.push(interlace_lower);
        checks.push(interlace_upper.clone());
    }
    if kind == TrajectoryKind::Flow {
        // The chained bound follows from the margin rate pushed through
        // the interlace upper bound, so passing the premises while
        // failing the conclusion would mean the checker itself is
        // inconsistent. Record that implication as its own entry.
        let mut implication = CheckResult::new("chained_implication");
        let premises = margin_rate.all_passed() && interlace_upper.all_passed();
        let slack = if premises && !chained_bias.all_passed() { -1.0 } else { 0.0 };
        implication.observe(slack, traj.records[0].t, INEQ_TOL);
        checks.push(margin_rate);
        checks.push(smooth_energy);
        checks.push(norm_growth);
        checks.push(chained_bias);
        checks.push(implication);
    }
    if kind == TrajectoryKind::Deep {
        checks.push(deep_margin);
        checks.push(deep_ball);
        checks.push(deep_product);
    }

    let passed = checks.iter().all(CheckResult::all_passed);
    Ok(VerificationReport {
        dataset_id: actual,
        kind,
        schedule: traj.meta.schedule.clone(),
        checks,
        summary: summary_of(passed),
    })
}

/// Which recorded column a rate is fitted to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RateField {
    Deficit,
    Bias,
}

impl RateField {
    fn name(&self) -> &'static str {
        match self {
            RateField::Deficit => "deficit",
            RateField::Bias => "bias",
        }
    }

    fn pick(&self, r: &crate::trajectory::Record) -> f64 {
        match self {
            RateField::Deficit => r.deficit,
            RateField::Bias => r.bias,
        }
    }
}

/// Least number of in-window records a fit will accept.
pub const MIN_FIT_POINTS: usize = 5;

/// A fitted power law `value ~ exp(intercept) * t^slope` over the time
/// window `window = (t_min, t_max)`.
#[derive(Clone, Debug, Serialize)]
pub struct RateFit {
    pub field: String,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub window: (f64, f64),
    pub n_points: usize,
}

/// Fit `log(field) = intercept + slope * log(t)` over records with
/// `t_min <= t <= t_max` by ordinary least squares.
///
/// A non-positive field value inside the window is an error, not a
/// point to skip: it signals the quantity has converged below the
/// numerical floor and the caller should shrink the window.
pub fn fit_rate(traj: &Trajectory, field: RateField, t_min: f64, t_max: f64) -> Result<RateFit> {
    if t_min.is_nan() || t_max.is_nan() || t_min <= 0.0 || t_max <= t_min {
        return Err(Error::InvalidParameter(format!(
            "need 0 < t_min < t_max, got [{t_min}, {t_max}]"
        )));
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for r in &traj.records {
        if r.t < t_min || r.t > t_max {
            continue;
        }
        let v = field.pick(r);
        if v <= 0.0 {
            return Err(Error::NonPositiveField { field: field.name() });
        }
        xs.push(r.t.ln());
        ys.push(v.ln());
    }
    if xs.len() < MIN_FIT_POINTS {
        return Err(Error::TooFewRecords { need: MIN_FIT_POINTS, found: xs.len() });
    }

    let n = xs.len() as f64;
    let mean_x = xs.iter().sum::<f64>() / n;
    let mean_y = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for (x, y) in xs.iter().zip(&ys) {
        sxx += (x - mean_x) * (x - mean_x);
        sxy += (x - mean_x) * (y - mean_y);
        syy += (y - mean_y) * (y - mean_y);
    }
    if sxx == 0.0 {
        return Err(Error::InvalidParameter(
            "all records in the window share one time; cannot fit a slope".into(),
        ));
    }
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let ss_res = syy - slope * sxy;
    let r_squared = if syy > 0.0 { 1.0 - (ss_res / syy).max(0.0) } else { 1.0 };

    Ok(RateFit {
        field: field.name().into(),
        slope,
        intercept,
        r_squared,
        window: (t_min, t_max),
        n_points: xs.len(),
    })
}

/// A bundle of verification results and fits for one run, serialized as
/// a stable-keyed JSON document with sections `meta`, `checks`, `fits`,
/// and `summary`.
#[derive(Clone, Debug, Serialize)]
pub struct Report {
    pub meta: serde_json::Value,
    pub checks: Vec<VerificationReport>,
    pub fits: Vec<RateFit>,
    /// `"pass"` or `"fail"`.
    pub summary: String,
}

impl Report {
    pub fn new(meta: serde_json::Value, checks: Vec<VerificationReport>, fits: Vec<RateFit>) -> Self {
        let passed = checks.iter().all(VerificationReport::passed);
        Self { meta, checks, fits, summary: summary_of(passed) }
    }

    pub fn passed(&self) -> bool {
        self.summary == "pass"
    }

    pub fn to_json_string(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serialization is infallible");
        s.push('\n');
        s
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json_string())?;
        Ok(())
    }
}

/// Compose and write a report file in one call.
pub fn emit_report(
    meta: serde_json::Value,
    checks: Vec<VerificationReport>,
    fits: Vec<RateFit>,
    path: impl AsRef<Path>,
) -> Result<Report> {
    let report = Report::new(meta, checks, fits);
    report.write(path)?;
    Ok(report)
}
