//! Datasets for binary linear classification: +/-1-labelled points in the
//! unit ball.
//!
//! Everything downstream (duals, smoothed margins, training dynamics)
//! assumes `||x_i|| <= 1`, which keeps every margin inside [-1, 1] and
//! makes the constants in the verification bounds correct as written.
//! [`validate`] reports violations of that contract as data; nothing in
//! this module rescales features behind the caller's back.
//!
//! The CSV layout is `y,x1,...,xm` with one header line. Values are
//! written with 17 significant digits so that a store/load round trip
//! reproduces every float bit for bit, which in turn makes dataset
//! fingerprints stable across machines.

use std::fmt;
use std::fs;
use std::path::Path;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Slack allowed on `||x_i|| <= 1` before validation reports a violation.
pub const FEATURE_NORM_TOL: f64 = 1e-12;

/// Rejection-sampling attempts per point before [`generate_separable`]
/// gives up.
pub const GENERATION_ATTEMPT_CAP: usize = 10_000;

/// A finite labelled sample: feature vectors paired with labels in {+1, -1}.
///
/// Construction checks structure only (non-empty, consistent dimension,
/// labels exactly +/-1, finite features); the unit-ball contract is checked
/// separately by [`validate`] so callers can decide how strict to be.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    features: Vec<DVector<f64>>,
    labels: Vec<f64>,
}

impl Dataset {
    pub fn new(features: Vec<DVector<f64>>, labels: Vec<f64>) -> Result<Self> {
        if features.is_empty() {
            return Err(Error::InvalidParameter("dataset needs at least one sample".into()));
        }
        if features.len() != labels.len() {
            return Err(Error::InvalidParameter(format!(
                "{} feature vectors but {} labels",
                features.len(),
                labels.len()
            )));
        }
        let dim = features[0].len();
        if dim == 0 {
            return Err(Error::InvalidParameter("feature dimension must be at least 1".into()));
        }
        for (i, x) in features.iter().enumerate() {
            if x.len() != dim {
                return Err(Error::InvalidParameter(format!(
                    "sample {i} has dimension {}, expected {dim}",
                    x.len()
                )));
            }
            if !x.iter().all(|v| v.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "sample {i} has a non-finite feature entry"
                )));
            }
        }
        for (i, &y) in labels.iter().enumerate() {
            if y != 1.0 && y != -1.0 {
                return Err(Error::InvalidParameter(format!(
                    "label {y} of sample {i} is not +1 or -1"
                )));
            }
        }
        Ok(Self { features, labels })
    }

    /// Number of samples.
    pub fn n(&self) -> usize {
        self.features.len()
    }

    /// Feature dimension.
    pub fn dim(&self) -> usize {
        self.features[0].len()
    }

    pub fn feature(&self, i: usize) -> &DVector<f64> {
        &self.features[i]
    }

    pub fn label(&self, i: usize) -> f64 {
        self.labels[i]
    }

    pub fn features(&self) -> &[DVector<f64>] {
        &self.features
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    /// The signed point `s_i = y_i * x_i`. Margins, duals, and gradients
    /// are all expressed through these.
    pub fn signed_point(&self, i: usize) -> DVector<f64> {
        &self.features[i] * self.labels[i]
    }

    pub fn signed_points(&self) -> Vec<DVector<f64>> {
        (0..self.n()).map(|i| self.signed_point(i)).collect()
    }

    /// Per-sample margins `u_i(w) = y_i <x_i, w>`.
    pub fn margins(&self, w: &DVector<f64>) -> Vec<f64> {
        self.features
            .iter()
            .zip(&self.labels)
            .map(|(x, y)| y * x.dot(w))
            .collect()
    }

    /// Largest feature norm; the radius `R` in the distance bounds.
    pub fn max_feature_norm(&self) -> f64 {
        self.features.iter().map(|x| x.norm()).fold(0.0, f64::max)
    }

    /// Canonical CSV serialization, used for files and for fingerprints.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("y");
        for j in 1..=self.dim() {
            out.push_str(&format!(",x{j}"));
        }
        out.push('\n');
        for (x, &y) in self.features.iter().zip(&self.labels) {
            out.push_str(if y > 0.0 { "1" } else { "-1" });
            for v in x.iter() {
                out.push_str(&format!(",{v:.16e}"));
            }
            out.push('\n');
        }
        out
    }

    /// First 16 hex digits of the SHA-256 of the canonical CSV form.
    /// Stable across runs and platforms; used to pair trajectories with
    /// the dataset they were recorded against.
    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(self.to_csv_string().as_bytes());
        let mut id = String::with_capacity(16);
        for byte in &digest[..8] {
            id.push_str(&format!("{byte:02x}"));
        }
        id
    }

    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::Csv { line: 1, message: "empty file".into() })?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        if cols.first() != Some(&"y") || cols.len() < 2 {
            return Err(Error::Csv {
                line: 1,
                message: format!("expected header `y,x1,...,xm`, got `{header}`"),
            });
        }
        for (j, col) in cols[1..].iter().enumerate() {
            let expected = format!("x{}", j + 1);
            if *col != expected {
                return Err(Error::Csv {
                    line: 1,
                    message: format!("expected column `{expected}`, got `{col}`"),
                });
            }
        }
        let dim = cols.len() - 1;

        let mut features = Vec::new();
        let mut labels = Vec::new();
        for (idx, row) in lines {
            let line = idx + 1;
            if row.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = row.split(',').map(str::trim).collect();
            if fields.len() != dim + 1 {
                return Err(Error::Csv {
                    line,
                    message: format!("expected {} fields, found {}", dim + 1, fields.len()),
                });
            }
            let y: f64 = fields[0].parse().map_err(|_| Error::Csv {
                line,
                message: format!("label `{}` is not a number", fields[0]),
            })?;
            if y != 1.0 && y != -1.0 {
                return Err(Error::Csv {
                    line,
                    message: format!("label `{}` is not +1 or -1", fields[0]),
                });
            }
            let mut x = DVector::zeros(dim);
            for (j, field) in fields[1..].iter().enumerate() {
                let v: f64 = field.parse().map_err(|_| Error::Csv {
                    line,
                    message: format!("feature `{field}` is not a number"),
                })?;
                if !v.is_finite() {
                    return Err(Error::Csv {
                        line,
                        message: format!("feature `{field}` is not finite"),
                    });
                }
                x[j] = v;
            }
            features.push(x);
            labels.push(y);
        }
        if features.is_empty() {
            return Err(Error::Csv { line: 1, message: "no data rows".into() });
        }
        Self::new(features, labels)
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_csv_str(&text)
    }

    pub fn store_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_csv_string())?;
        Ok(())
    }
}

/// What [`validate`] found wrong with a sample.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ViolationKind {
    /// `||x_i||` exceeds 1 beyond [`FEATURE_NORM_TOL`].
    FeatureNorm,
    /// Label is not exactly +1 or -1.
    LabelDomain,
    /// A feature entry is NaN or infinite.
    NonFinite,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Violation {
    pub index: usize,
    pub kind: ViolationKind,
    /// The offending value: the norm, the label, or NaN.
    pub magnitude: f64,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            ViolationKind::FeatureNorm => {
                write!(f, "sample {}: feature norm {} exceeds 1", self.index, self.magnitude)
            }
            ViolationKind::LabelDomain => {
                write!(f, "sample {}: label {} is not +1 or -1", self.index, self.magnitude)
            }
            ViolationKind::NonFinite => {
                write!(f, "sample {}: non-finite feature entry", self.index)
            }
        }
    }
}

/// Check the unit-ball and label contract, reporting every violation
/// rather than stopping at the first.
///
/// `Dataset::new` already rejects malformed labels and non-finite
/// features, so on values built through the public constructors only
/// `FeatureNorm` can actually fire; the other kinds exist so the same
/// report covers data assembled by other means.
pub fn validate(d: &Dataset) -> Vec<Violation> {
    let mut violations = Vec::new();
    for i in 0..d.n() {
        let x = d.feature(i);
        if !x.iter().all(|v| v.is_finite()) {
            violations.push(Violation { index: i, kind: ViolationKind::NonFinite, magnitude: f64::NAN });
            continue;
        }
        let norm = x.norm();
        if norm > 1.0 + FEATURE_NORM_TOL {
            violations.push(Violation { index: i, kind: ViolationKind::FeatureNorm, magnitude: norm });
        }
        let y = d.label(i);
        if y != 1.0 && y != -1.0 {
            violations.push(Violation { index: i, kind: ViolationKind::LabelDomain, magnitude: y });
        }
    }
    violations
}

/// Draw a dataset that is linearly separable with margin at least
/// `target_margin`.
///
/// A hidden unit direction `w*` is drawn first; each point is then sampled
/// uniformly from the unit ball until `|<x, w*>| >= target_margin` and
/// labelled by the side of the hyperplane it fell on. The max margin of
/// the result is at least `target_margin` by construction (witness `w*`).
/// Each point gets [`GENERATION_ATTEMPT_CAP`] attempts; running out means
/// the target leaves too thin a slab of the ball, and is reported as
/// [`Error::GenerationCap`] rather than looping forever.
pub fn generate_separable(n: usize, dim: usize, target_margin: f64, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::InvalidParameter("need at least one sample".into()));
    }
    if dim == 0 {
        return Err(Error::InvalidParameter("need dimension at least 1".into()));
    }
    if !(target_margin > 0.0 && target_margin < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "target margin must lie strictly between 0 and 1, got {target_margin}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w_star = random_unit_vector(&mut rng, dim);

    let mut features = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for index in 0..n {
        let mut placed = false;
        for _ in 0..GENERATION_ATTEMPT_CAP {
            let x = random_ball_point(&mut rng, dim);
            let p = x.dot(&w_star);
            if p.abs() >= target_margin {
                labels.push(if p > 0.0 { 1.0 } else { -1.0 });
                features.push(x);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::GenerationCap { cap: GENERATION_ATTEMPT_CAP, index });
        }
    }
    Dataset::new(features, labels)
}

fn random_unit_vector(rng: &mut ChaCha8Rng, dim: usize) -> DVector<f64> {
    loop {
        let v = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
        let norm = v.norm();
        if norm > 1e-8 {
            return v / norm;
        }
    }
}

/// Uniform point in the unit ball: random direction scaled by U^(1/dim).
fn random_ball_point(rng: &mut ChaCha8Rng, dim: usize) -> DVector<f64> {
    let dir = random_unit_vector(rng, dim);
    let radius: f64 = rng.gen::<f64>().powf(1.0 / dim as f64);
    dir * radius
}

/// Small hand-checkable datasets used throughout the tests and docs.
pub mod examples {
    use super::Dataset;
    use nalgebra::DVector;

    /// Two points on the x-axis, one per class. The max-margin direction
    /// is (1, 0) with margin 1; the dual weights are uniform.
    pub fn d1() -> Dataset {
        Dataset::new(
            vec![DVector::from_vec(vec![1.0, 0.0]), DVector::from_vec(vec![-1.0, 0.0])],
            vec![1.0, -1.0],
        )
        .expect("d1 is well formed")
    }

    /// Two positive points at right angles. The max-margin direction is
    /// the diagonal with margin sqrt(1/2); both points stay active.
    pub fn d2() -> Dataset {
        Dataset::new(
            vec![DVector::from_vec(vec![1.0, 0.0]), DVector::from_vec(vec![0.0, 1.0])],
            vec![1.0, 1.0],
        )
        .expect("d2 is well formed")
    }

    /// Three points, one of which (the origin-ward positive point) is
    /// irrelevant to the margin: the dual puts zero weight on it.
    pub fn d3() -> Dataset {
        Dataset::new(
            vec![
                DVector::from_vec(vec![0.6, 0.8]),
                DVector::from_vec(vec![-0.6, 0.8]),
                DVector::from_vec(vec![0.0, -1.0]),
            ],
            vec![1.0, 1.0, -1.0],
        )
        .expect("d3 is well formed")
    }

    /// Four points with no symmetry at all. On the symmetric examples
    /// above, gradient ascent from the origin lands on the max-margin
    /// direction essentially immediately (the first gradient already
    /// points along it), which leaves nothing for convergence-rate
    /// studies to measure. This set has two active and two slack points
    /// in general position, so the deficit decays at its honest rate.
    ///
    /// Its max margin is 0.5402972949560185 with support {0, 2}.
    pub fn skewed() -> Dataset {
        Dataset::new(
            vec![
                DVector::from_vec(vec![0.96, 0.2]),
                DVector::from_vec(vec![-0.1, -0.9]),
                DVector::from_vec(vec![-0.5, 0.78]),
                DVector::from_vec(vec![-0.3, -0.55]),
            ],
            vec![1.0, -1.0, 1.0, -1.0],
        )
        .expect("skewed is well formed")
    }
}
