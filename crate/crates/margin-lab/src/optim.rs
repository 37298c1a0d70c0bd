//! Training dynamics on the smoothed margin: continuous-time gradient
//! flow and three discrete stepsize schedules.
//!
//! All of them ascend R_beta from w = 0. Because the gradient is always
//! a convex combination of the signed points, the iterates stay inside
//! the cone spanned by the data and their norm can only grow as fast as
//! the elapsed time (flow) or the summed stepsizes (discrete). What
//! distinguishes the schedules is how fast the normalized iterate's
//! margin deficit closes:
//!
//! * `flow`: w' = grad R_beta(w), integrated with classical RK4 at a
//!   fixed step of `0.05 / beta` by default;
//! * `gd-constant`: w += eta * grad R_beta(w);
//! * `gd-adaptive`: stepsize 1 / sqrt(k + 1) at iteration k;
//! * `gd-aggressive`: w += c * beta * grad R_beta(w), the log-space view
//!   of risk descent with stepsize proportional to the inverse risk, and
//!   the fastest of the three.

use std::collections::BTreeSet;

use nalgebra::DVector;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::margin::{hard_margin, normalize, MarginSolution};
use crate::smooth::{smooth_margin_grad, smooth_margin_value, SmoothMarginParams};
use crate::trajectory::{Record, Trajectory, TrajectoryKind, TrajectoryMeta};

/// Iterates whose norm exceeds this are treated as diverged. The honest
/// dynamics cannot reach it in any reasonable run (the gradient norm is
/// at most the data radius), so hitting it means a caller picked a wild
/// stepsize.
pub const DIVERGENCE_NORM_CAP: f64 = 1e6;

/// Default RK4 step for the flow: fine relative to the curvature scale
/// 1/beta of the smoothed margin.
pub fn default_dt(beta: f64) -> f64 {
    0.05 / beta
}

/// A stepsize schedule for [`gd_run`], or the continuous flow.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Schedule {
    Flow,
    GdConstant { eta: f64 },
    GdAdaptive,
    GdAggressive { c: f64 },
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Schedule::GdConstant { eta } if !(eta > 0.0 && eta.is_finite()) => Err(
                Error::InvalidParameter(format!("eta must be positive and finite, got {eta}")),
            ),
            Schedule::GdAggressive { c } if !(c > 0.0 && c.is_finite()) => Err(
                Error::InvalidParameter(format!("c must be positive and finite, got {c}")),
            ),
            _ => Ok(()),
        }
    }

    pub fn label(&self) -> String {
        match self {
            Schedule::Flow => "flow".into(),
            Schedule::GdConstant { eta } => format!("gd-constant(eta={eta})"),
            Schedule::GdAdaptive => "gd-adaptive".into(),
            Schedule::GdAggressive { c } => format!("gd-aggressive(c={c})"),
        }
    }

    /// Stepsize multiplier applied to the gradient at iteration k.
    fn factor(&self, k: usize, beta: f64) -> f64 {
        match self {
            Schedule::Flow => unreachable!("flow has no discrete stepsize"),
            Schedule::GdConstant { eta } => *eta,
            Schedule::GdAdaptive => 1.0 / ((k + 1) as f64).sqrt(),
            Schedule::GdAggressive { c } => c * beta,
        }
    }
}

fn linear_record(
    t: f64,
    w: &DVector<f64>,
    d: &Dataset,
    p: &SmoothMarginParams,
    sol: &MarginSolution,
) -> Result<Record> {
    let norm_w = w.norm();
    if !norm_w.is_finite() || norm_w > DIVERGENCE_NORM_CAP {
        return Err(Error::Diverged { t, norm: norm_w });
    }
    let w_hat = normalize(w)?;
    let margin = hard_margin(&w_hat, d);
    Ok(Record {
        t,
        norm_w,
        margin,
        smooth_margin: smooth_margin_value(w, d, p),
        grad_norm: smooth_margin_grad(w, d, p).norm(),
        bias: (&w_hat - &sol.w_opt).norm(),
        deficit: sol.gamma_opt - margin,
        extra: None,
    })
}

fn check_divergence(t: f64, w: &DVector<f64>) -> Result<()> {
    let norm = w.norm();
    if !norm.is_finite() || norm > DIVERGENCE_NORM_CAP {
        return Err(Error::Diverged { t, norm });
    }
    Ok(())
}

/// Integrate the gradient flow from w = 0 up to `t_end` and record at
/// the grid nodes closest to the requested times (t = 0 itself is never
/// recorded; the normalized iterate does not exist there).
pub fn flow_run(
    d: &Dataset,
    p: &SmoothMarginParams,
    t_end: f64,
    dt: Option<f64>,
    record_times: &[f64],
    sol: &MarginSolution,
) -> Result<Trajectory> {
    let dt = dt.unwrap_or_else(|| default_dt(p.beta));
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidParameter(format!("dt must be positive, got {dt}")));
    }
    if t_end.is_nan() || t_end < dt {
        return Err(Error::InvalidParameter(format!(
            "t_end must be at least one step dt = {dt}, got {t_end}"
        )));
    }
    let total_steps = (t_end / dt).round().max(1.0) as usize;
    let record_set: BTreeSet<usize> = record_times
        .iter()
        .filter(|t| t.is_finite() && **t > 0.0)
        .map(|t| ((t / dt).round() as usize).clamp(1, total_steps))
        .collect();
    if record_set.is_empty() {
        return Err(Error::InvalidParameter("no recordable times requested".into()));
    }

    let grad = |w: &DVector<f64>| smooth_margin_grad(w, d, p);
    let mut w = DVector::zeros(d.dim());
    let mut records = Vec::with_capacity(record_set.len());
    for k in 0..total_steps {
        let k1 = grad(&w);
        let k2 = grad(&(&w + &k1 * (dt / 2.0)));
        let k3 = grad(&(&w + &k2 * (dt / 2.0)));
        let k4 = grad(&(&w + &k3 * dt));
        w += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);

        let t = (k + 1) as f64 * dt;
        check_divergence(t, &w)?;
        if record_set.contains(&(k + 1)) {
            records.push(linear_record(t, &w, d, p, sol)?);
        }
    }

    let traj = Trajectory {
        meta: TrajectoryMeta {
            dataset_id: d.fingerprint(),
            kind: TrajectoryKind::Flow,
            schedule: format!("flow(dt={dt})"),
            beta: p.beta,
            seed: None,
            tol: sol.tol,
            extra_column: None,
        },
        records,
    };
    traj.check_well_formed()?;
    Ok(traj)
}

/// Run a discrete schedule from w = 0 for `steps` iterations, recording
/// after the iterations listed in `record_at` (1-based; 0 and
/// out-of-range entries are ignored).
pub fn gd_run(
    d: &Dataset,
    p: &SmoothMarginParams,
    schedule: &Schedule,
    steps: usize,
    record_at: &[usize],
    sol: &MarginSolution,
) -> Result<Trajectory> {
    if matches!(schedule, Schedule::Flow) {
        return Err(Error::WrongDriver("flow"));
    }
    schedule.validate()?;
    if steps == 0 {
        return Err(Error::InvalidParameter("need at least one step".into()));
    }
    let record_set: BTreeSet<usize> =
        record_at.iter().copied().filter(|k| *k >= 1 && *k <= steps).collect();
    if record_set.is_empty() {
        return Err(Error::InvalidParameter("no recordable iterations requested".into()));
    }

    let mut w = DVector::zeros(d.dim());
    let mut records = Vec::with_capacity(record_set.len());
    for k in 0..steps {
        let dir = smooth_margin_grad(&w, d, p);
        w.axpy(schedule.factor(k, p.beta), &dir, 1.0);

        let t = (k + 1) as f64;
        check_divergence(t, &w)?;
        if record_set.contains(&(k + 1)) {
            records.push(linear_record(t, &w, d, p, sol)?);
        }
    }

    let traj = Trajectory {
        meta: TrajectoryMeta {
            dataset_id: d.fingerprint(),
            kind: TrajectoryKind::Gd,
            schedule: schedule.label(),
            beta: p.beta,
            seed: None,
            tol: sol.tol,
            extra_column: None,
        },
        records,
    };
    traj.check_well_formed()?;
    Ok(traj)
}
