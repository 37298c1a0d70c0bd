//! Recorded trajectories of the training dynamics.
//!
//! Every driver in the crate (flow, discrete gradient schedules, the
//! multilayer ascent, kernel ascent) emits the same record shape, so the
//! verification and rate-fitting code in [`crate::analysis`] does not
//! care which dynamic produced a file. A record holds, at time `t`:
//!
//! * `norm_w`: norm of the raw iterate (product norm for deep runs,
//!   RKHS norm for kernel runs);
//! * `margin`: hard margin of the raw iterate;
//! * `smooth_margin`: smoothed margin of the raw iterate;
//! * `grad_norm`: norm of the ascent direction used at this iterate;
//! * `bias`: distance of the normalized iterate from the optimum
//!   (`||w/||w|| - w_opt||`; kernel runs store the margin deficit here,
//!   see [`TrajectoryKind::Kernel`]);
//! * `deficit`: optimal margin minus the normalized iterate's margin;
//! * optionally one extra dynamic-specific column, named in the metadata.
//!
//! Records start at the first step after t = 0: at the origin the
//! normalized iterate does not exist, so there is nothing meaningful to
//! write.
//!
//! CSV values are written with 17 significant digits; parsing a written
//! file reproduces every float bit for bit.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which dynamic produced a trajectory. Decides which of the recorded
/// columns carry which semantics and which verification checks apply.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryKind {
    /// Continuous-time gradient flow on the smoothed margin.
    Flow,
    /// Discrete gradient steps on the smoothed margin.
    Gd,
    /// Riemannian ascent over normalized layer matrices; `margin` is the
    /// raw product margin, `deficit` uses the normalized product.
    Deep,
    /// Ascent in an RKHS; `margin` is the kernel margin, and `bias`
    /// duplicates `deficit` (function-space distance to the optimum is
    /// recorded in the extra column instead).
    Kernel,
}

impl std::fmt::Display for TrajectoryKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            TrajectoryKind::Flow => "flow",
            TrajectoryKind::Gd => "gd",
            TrajectoryKind::Deep => "deep",
            TrajectoryKind::Kernel => "kernel",
        };
        f.write_str(s)
    }
}

/// Metadata identifying what a trajectory was recorded from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    /// Fingerprint of the dataset the run used.
    pub dataset_id: String,
    pub kind: TrajectoryKind,
    /// Human-readable schedule label, e.g. `gd-adaptive` or
    /// `flow(dt=0.05)`.
    pub schedule: String,
    pub beta: f64,
    /// Seed for dynamics with random initialization; `None` for
    /// deterministic starts.
    pub seed: Option<u64>,
    /// Margin tolerance the reference solution was computed to.
    pub tol: f64,
    /// Name of the extra per-record column, if the dynamic emits one.
    pub extra_column: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Record {
    pub t: f64,
    pub norm_w: f64,
    pub margin: f64,
    pub smooth_margin: f64,
    pub grad_norm: f64,
    pub bias: f64,
    pub deficit: f64,
    pub extra: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub meta: TrajectoryMeta,
    pub records: Vec<Record>,
}

pub const CSV_COLUMNS: [&str; 7] =
    ["t", "norm_w", "margin", "smooth_margin", "grad_norm", "bias", "deficit"];

impl Trajectory {
    pub fn to_csv_string(&self) -> String {
        let mut out = CSV_COLUMNS.join(",");
        if let Some(name) = &self.meta.extra_column {
            out.push(',');
            out.push_str(name);
        }
        out.push('\n');
        for r in &self.records {
            out.push_str(&format!(
                "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                r.t, r.norm_w, r.margin, r.smooth_margin, r.grad_norm, r.bias, r.deficit
            ));
            if self.meta.extra_column.is_some() {
                out.push_str(&format!(",{:.16e}", r.extra.unwrap_or(f64::NAN)));
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_csv_string())?;
        Ok(())
    }

    /// Parse a trajectory CSV against known metadata. The header must
    /// start with the seven standard columns; a trailing eighth column
    /// is taken as the extra column and its name is recorded into the
    /// returned metadata (overriding whatever the caller guessed).
    pub fn from_csv_str(text: &str, meta: TrajectoryMeta) -> Result<Self> {
        let mut meta = meta;
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::Csv { line: 1, message: "empty trajectory file".into() })?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        if cols.len() < CSV_COLUMNS.len() || cols[..CSV_COLUMNS.len()] != CSV_COLUMNS {
            return Err(Error::Csv {
                line: 1,
                message: format!(
                    "expected header to start with `{}`, got `{header}`",
                    CSV_COLUMNS.join(",")
                ),
            });
        }
        let extra = match cols.len() {
            7 => None,
            8 => Some(cols[7].to_string()),
            n => {
                return Err(Error::Csv {
                    line: 1,
                    message: format!("expected 7 or 8 columns, got {n}"),
                })
            }
        };
        meta.extra_column = extra;

        let mut records = Vec::new();
        for (idx, row) in lines {
            let line = idx + 1;
            if row.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = row.split(',').map(str::trim).collect();
            let expected = if meta.extra_column.is_some() { 8 } else { 7 };
            if fields.len() != expected {
                return Err(Error::Csv {
                    line,
                    message: format!("expected {expected} fields, found {}", fields.len()),
                });
            }
            let mut values = [0.0f64; 8];
            for (j, field) in fields.iter().enumerate() {
                values[j] = field.parse().map_err(|_| Error::Csv {
                    line,
                    message: format!("value `{field}` is not a number"),
                })?;
            }
            records.push(Record {
                t: values[0],
                norm_w: values[1],
                margin: values[2],
                smooth_margin: values[3],
                grad_norm: values[4],
                bias: values[5],
                deficit: values[6],
                extra: meta.extra_column.is_some().then_some(values[7]),
            });
        }
        let traj = Self { meta, records };
        traj.check_well_formed()?;
        Ok(traj)
    }

    pub fn read_csv(path: impl AsRef<Path>, meta: TrajectoryMeta) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_csv_str(&text, meta)
    }

    /// Structural sanity: at least one record, strictly increasing times,
    /// all values finite. Drivers guarantee this on write; it is enforced
    /// again on read so downstream analysis can rely on it.
    pub fn check_well_formed(&self) -> Result<()> {
        if self.records.is_empty() {
            return Err(Error::InvalidParameter("trajectory has no records".into()));
        }
        let mut prev = 0.0;
        for (i, r) in self.records.iter().enumerate() {
            let finite = [r.t, r.norm_w, r.margin, r.smooth_margin, r.grad_norm, r.bias, r.deficit]
                .iter()
                .all(|v| v.is_finite())
                && r.extra.is_none_or(f64::is_finite);
            if !finite {
                return Err(Error::InvalidParameter(format!(
                    "record {i} has a non-finite value"
                )));
            }
            if r.t <= prev {
                return Err(Error::InvalidParameter(format!(
                    "record times must increase: t = {} after {}",
                    r.t, prev
                )));
            }
            prev = r.t;
        }
        Ok(())
    }
}

/// Geometrically spaced recording times in `[t_min, t_max]`, deduplicated
/// and sorted. Used to keep long runs at a manageable record count while
/// still resolving the early transient.
pub fn geometric_times(t_min: f64, t_max: f64, count: usize) -> Result<Vec<f64>> {
    if t_min.is_nan() || t_max.is_nan() || t_min <= 0.0 || t_max < t_min || count == 0 {
        return Err(Error::InvalidParameter(format!(
            "need 0 < t_min <= t_max and count >= 1, got [{t_min}, {t_max}] x {count}"
        )));
    }
    if count == 1 || t_min == t_max {
        return Ok(vec![t_max]);
    }
    let ratio = (t_max / t_min).powf(1.0 / (count - 1) as f64);
    let mut times: Vec<f64> = (0..count).map(|i| t_min * ratio.powi(i as i32)).collect();
    times[count - 1] = t_max;
    times.dedup();
    Ok(times)
}

/// Geometrically spaced iteration indices in `[min, max]`, deduplicated.
pub fn geometric_steps(min: usize, max: usize, count: usize) -> Result<Vec<usize>> {
    if min == 0 || max < min || count == 0 {
        return Err(Error::InvalidParameter(format!(
            "need 1 <= min <= max and count >= 1, got [{min}, {max}] x {count}"
        )));
    }
    let times = geometric_times(min as f64, max as f64, count)?;
    let set: BTreeSet<usize> = times.into_iter().map(|t| t.round() as usize).collect();
    Ok(set.into_iter().collect())
}
