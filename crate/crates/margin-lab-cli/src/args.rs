//! Command-line surface and config-file merging.
//!
//! Every option can come from the command line or from a JSON config
//! file (`--config`) whose keys are the snake_case names of the flags;
//! a flag always wins over the file. Each subcommand resolves its
//! merged options into a fully concrete parameter struct that is
//! serialized verbatim into the output's `meta.config`, so any output
//! file records exactly how it was produced.

use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use margin_lab::analysis::RateField;
use margin_lab::kernel::KernelSpec;
use margin_lab::optim::Schedule;

#[derive(Debug, Parser)]
#[command(
    name = "margin-lab",
    version,
    about = "Max-margin classifiers, smoothed-margin dynamics, and inequality verification"
)]
pub struct Cli {
    /// JSON config file mirroring the flags of the invoked subcommand
    /// (snake_case keys); explicit flags override its values.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Omit the timestamp from JSON outputs so reruns are byte-identical.
    #[arg(long, global = true)]
    pub no_timestamp: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a separable dataset and write it as CSV.
    Gen(GenOpts),
    /// Compute the optimal margin and its dual certificate.
    Solve(SolveOpts),
    /// Run a dynamic (flow, a GD schedule, deep ascent, or kernel ascent)
    /// and write the trajectory plus the reference solution.
    Run(RunOpts),
    /// Re-check a recorded trajectory against the margin guarantees and
    /// optionally fit a convergence rate.
    Verify(VerifyOpts),
}

/// Loads the config file for a subcommand, tolerating an absent path.
pub fn load_config<T: Default + serde::de::DeserializeOwned>(
    path: Option<&PathBuf>,
) -> anyhow::Result<T> {
    let Some(path) = path else { return Ok(T::default()) };
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config file {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing config file {}", path.display()))
}

macro_rules! merge {
    ($a:expr, $b:expr; $($field:ident),+ $(,)?) => {{
        $( $a.$field = $a.$field.take().or($b.$field); )+
    }};
}

fn require<T>(v: Option<T>, flag: &str) -> anyhow::Result<T> {
    v.with_context(|| format!("missing required option --{flag} (set it as a flag or in the config file)"))
}

// ---------------------------------------------------------------------------
// gen

#[derive(Debug, Clone, Default, clap::Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenOpts {
    /// Number of samples.
    #[arg(long)]
    pub n: Option<usize>,
    /// Feature dimension.
    #[arg(long)]
    pub m: Option<usize>,
    /// Minimum margin of the hidden generating direction, in (0, 1).
    #[arg(long)]
    pub margin: Option<f64>,
    /// RNG seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output CSV path.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize)]
pub struct GenParams {
    pub n: usize,
    pub m: usize,
    pub margin: f64,
    pub seed: u64,
    pub out: PathBuf,
}

impl GenOpts {
    pub fn resolve(mut self, file: GenOpts) -> anyhow::Result<GenParams> {
        merge!(self, file; n, m, margin, seed, out);
        Ok(GenParams {
            n: require(self.n, "n")?,
            m: require(self.m, "m")?,
            margin: require(self.margin, "margin")?,
            seed: require(self.seed, "seed")?,
            out: require(self.out, "out")?,
        })
    }
}

// ---------------------------------------------------------------------------
// solve

#[derive(Debug, Clone, Default, clap::Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveOpts {
    /// Dataset CSV path.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Margin tolerance for the dual solve.
    #[arg(long)]
    pub tol: Option<f64>,
    /// Output JSON path (stdout when omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveParams {
    pub data: PathBuf,
    pub tol: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

impl SolveOpts {
    pub fn resolve(mut self, file: SolveOpts) -> anyhow::Result<SolveParams> {
        merge!(self, file; data, tol, out);
        Ok(SolveParams {
            data: require(self.data, "data")?,
            tol: self.tol.unwrap_or(margin_lab::margin::DEFAULT_MARGIN_TOL),
            out: self.out,
        })
    }
}

// ---------------------------------------------------------------------------
// run

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleArg {
    Flow,
    GdConstant,
    GdAdaptive,
    GdAggressive,
    Deep,
    Kernel,
}

/// The discrete stepsize rules, for flags that accept only those. The
/// variant names keep the user-facing `gd-` prefix of the schedules.
#[allow(clippy::enum_variant_names)]
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RuleArg {
    GdConstant,
    GdAdaptive,
    GdAggressive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelArg {
    Linear,
    Rbf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FitFieldArg {
    Deficit,
    Bias,
}

impl From<FitFieldArg> for RateField {
    fn from(f: FitFieldArg) -> Self {
        match f {
            FitFieldArg::Deficit => RateField::Deficit,
            FitFieldArg::Bias => RateField::Bias,
        }
    }
}

#[derive(Debug, Clone, Default, clap::Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunOpts {
    /// Dataset CSV path (mutually exclusive with --n/--m/--margin/--seed).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Generate a dataset instead of loading one: number of samples.
    #[arg(long)]
    pub n: Option<usize>,
    /// Generator feature dimension.
    #[arg(long)]
    pub m: Option<usize>,
    /// Generator target margin.
    #[arg(long)]
    pub margin: Option<f64>,
    /// Generator seed.
    #[arg(long)]
    pub seed: Option<u64>,

    /// Dynamic to run.
    #[arg(long, value_enum)]
    pub schedule: Option<ScheduleArg>,
    /// Smoothing inverse temperature.
    #[arg(long)]
    pub beta: Option<f64>,
    /// Stepsize for gd-constant and for the deep ascent.
    #[arg(long)]
    pub eta: Option<f64>,
    /// Multiplier for the gd-aggressive stepsize c * beta.
    #[arg(long)]
    pub c: Option<f64>,
    /// Integration horizon (flow only).
    #[arg(long)]
    pub t_end: Option<f64>,
    /// Integrator stepsize (flow only; defaults to 0.05 / beta).
    #[arg(long)]
    pub dt: Option<f64>,
    /// Iteration count for the discrete schedules.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Number of geometrically spaced records in the trajectory.
    #[arg(long)]
    pub grid_points: Option<usize>,
    /// Margin tolerance for the reference solve.
    #[arg(long)]
    pub tol: Option<f64>,

    /// Number of layers (deep only).
    #[arg(long)]
    pub depth: Option<usize>,
    /// Hidden-layer width (deep only; defaults to the input dimension).
    #[arg(long)]
    pub widths: Option<usize>,
    /// Seed for the random layer initialization (deep only).
    #[arg(long)]
    pub init_seed: Option<u64>,
    /// Evaluate the deep invariants at every iterate (deep only).
    #[arg(long, num_args(0..=1), default_missing_value = "true")]
    pub check_iterates: Option<bool>,

    /// Kernel to use when --schedule kernel.
    #[arg(long, value_enum)]
    pub kernel: Option<KernelArg>,
    /// RBF bandwidth.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Stepsize rule driving the kernel ascent.
    #[arg(long, value_enum)]
    pub kernel_schedule: Option<RuleArg>,

    /// Fit a power law to this column after the run.
    #[arg(long, value_enum)]
    pub fit_field: Option<FitFieldArg>,
    /// Fit window lower end.
    #[arg(long)]
    pub fit_t_min: Option<f64>,
    /// Fit window upper end.
    #[arg(long)]
    pub fit_t_max: Option<f64>,

    /// Directory receiving trajectory.csv and solution.json.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

/// Where the dataset comes from, recorded in the output meta.
#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Path(PathBuf),
    Generated { n: usize, m: usize, margin: f64, seed: u64 },
}

/// A discrete stepsize rule, resolved. Variant names mirror the
/// library's `Schedule` and the serialized `rule` tags.
#[allow(clippy::enum_variant_names)]
#[derive(Debug, Clone, Copy, Serialize)]
#[serde(tag = "rule", rename_all = "kebab-case")]
pub enum StepRule {
    GdConstant { eta: f64 },
    GdAdaptive,
    GdAggressive { c: f64 },
}

impl StepRule {
    pub fn to_schedule(self) -> Schedule {
        match self {
            StepRule::GdConstant { eta } => Schedule::GdConstant { eta },
            StepRule::GdAdaptive => Schedule::GdAdaptive,
            StepRule::GdAggressive { c } => Schedule::GdAggressive { c },
        }
    }
}

/// The dynamic to run, with its mode-specific knobs resolved.
#[derive(Debug, Clone, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum RunMode {
    Flow { t_end: f64, dt: f64 },
    Gd { steps: usize, rule: StepRule },
    Deep { steps: usize, eta: f64, depth: usize, widths: usize, init_seed: u64, check_iterates: bool },
    Kernel { steps: usize, kernel: KernelArg, sigma: f64, rule: StepRule },
}

#[derive(Debug, Clone, Serialize)]
pub struct FitRequest {
    pub field: FitFieldArg,
    pub t_min: f64,
    pub t_max: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunParams {
    pub source: DataSource,
    pub mode: RunMode,
    pub beta: f64,
    pub tol: f64,
    pub grid_points: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fit: Option<FitRequest>,
    pub out_dir: PathBuf,
}

const DEFAULT_GD_STEPS: usize = 1000;

impl RunOpts {
    pub fn resolve(mut self, file: RunOpts) -> anyhow::Result<RunParams> {
        merge!(self, file;
            data, n, m, margin, seed, schedule, beta, eta, c, t_end, dt, steps,
            grid_points, tol, depth, widths, init_seed, check_iterates, kernel,
            sigma, kernel_schedule, fit_field, fit_t_min, fit_t_max, out_dir,
        );

        let generator_given =
            self.n.is_some() || self.m.is_some() || self.margin.is_some() || self.seed.is_some();
        let source = match (self.data, generator_given) {
            (Some(_), true) => {
                bail!("--data and the generator options (--n/--m/--margin/--seed) are mutually exclusive")
            }
            (Some(path), false) => DataSource::Path(path),
            (None, true) => DataSource::Generated {
                n: require(self.n, "n")?,
                m: require(self.m, "m")?,
                margin: require(self.margin, "margin")?,
                seed: require(self.seed, "seed")?,
            },
            (None, false) => bail!("no dataset: pass --data or the generator options"),
        };

        let beta = self.beta.unwrap_or(1.0);
        let schedule = require(self.schedule, "schedule")?;
        let steps = self.steps;
        let rule_of = |arg: RuleArg| -> StepRule {
            match arg {
                RuleArg::GdConstant => StepRule::GdConstant { eta: self.eta.unwrap_or(0.1) },
                RuleArg::GdAdaptive => StepRule::GdAdaptive,
                RuleArg::GdAggressive => StepRule::GdAggressive { c: self.c.unwrap_or(1.0) },
            }
        };
        let mode = match schedule {
            ScheduleArg::Flow => RunMode::Flow {
                t_end: self.t_end.unwrap_or(100.0),
                dt: self.dt.unwrap_or_else(|| margin_lab::optim::default_dt(beta)),
            },
            ScheduleArg::GdConstant => RunMode::Gd {
                steps: steps.unwrap_or(DEFAULT_GD_STEPS),
                rule: rule_of(RuleArg::GdConstant),
            },
            ScheduleArg::GdAdaptive => RunMode::Gd {
                steps: steps.unwrap_or(DEFAULT_GD_STEPS),
                rule: rule_of(RuleArg::GdAdaptive),
            },
            ScheduleArg::GdAggressive => RunMode::Gd {
                steps: steps.unwrap_or(DEFAULT_GD_STEPS),
                rule: rule_of(RuleArg::GdAggressive),
            },
            ScheduleArg::Deep => RunMode::Deep {
                steps: steps.unwrap_or(margin_lab::deep::DeepAscentConfig::default().steps),
                eta: self.eta.unwrap_or(0.1),
                depth: self.depth.unwrap_or(2),
                widths: self.widths.unwrap_or(0), // 0 = input dimension, fixed at load
                init_seed: self.init_seed.unwrap_or(0),
                check_iterates: self.check_iterates.unwrap_or(false),
            },
            ScheduleArg::Kernel => RunMode::Kernel {
                steps: steps.unwrap_or(DEFAULT_GD_STEPS),
                kernel: self.kernel.unwrap_or(KernelArg::Linear),
                sigma: self.sigma.unwrap_or(1.0),
                rule: rule_of(self.kernel_schedule.unwrap_or(RuleArg::GdAdaptive)),
            },
        };

        let fit = match (self.fit_field, self.fit_t_min, self.fit_t_max) {
            (None, None, None) => None,
            (Some(field), t_min, t_max) => Some(FitRequest {
                field,
                t_min: require(t_min, "fit-t-min")?,
                t_max: require(t_max, "fit-t-max")?,
            }),
            _ => bail!("--fit-t-min/--fit-t-max need --fit-field"),
        };

        Ok(RunParams {
            source,
            mode,
            beta,
            tol: self.tol.unwrap_or(margin_lab::margin::DEFAULT_MARGIN_TOL),
            grid_points: self.grid_points.unwrap_or(48),
            fit,
            out_dir: self.out_dir.unwrap_or_else(|| PathBuf::from(".")),
        })
    }
}

impl KernelArg {
    pub fn to_spec(self, sigma: f64) -> KernelSpec {
        match self {
            KernelArg::Linear => KernelSpec::Linear,
            KernelArg::Rbf => KernelSpec::Rbf { sigma },
        }
    }
}

// ---------------------------------------------------------------------------
// verify

#[derive(Debug, Clone, Default, clap::Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyOpts {
    /// Trajectory CSV produced by `run`.
    #[arg(long)]
    pub trajectory: Option<PathBuf>,
    /// Dataset the trajectory was recorded on.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// solution.json written next to the trajectory (defaults to the
    /// trajectory's sibling solution.json).
    #[arg(long)]
    pub solution: Option<PathBuf>,
    /// Margin tolerance for the reference solve (defaults to the
    /// tolerance recorded in the run's meta).
    #[arg(long)]
    pub tol: Option<f64>,
    /// Fit a power law to this column.
    #[arg(long, value_enum)]
    pub fit_field: Option<FitFieldArg>,
    /// Fit window lower end.
    #[arg(long)]
    pub fit_t_min: Option<f64>,
    /// Fit window upper end.
    #[arg(long)]
    pub fit_t_max: Option<f64>,
    /// Report JSON path (stdout when omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyParams {
    pub trajectory: PathBuf,
    pub data: PathBuf,
    pub solution: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fit: Option<FitRequest>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

impl VerifyOpts {
    pub fn resolve(mut self, file: VerifyOpts) -> anyhow::Result<VerifyParams> {
        merge!(self, file; trajectory, data, solution, tol, fit_field, fit_t_min, fit_t_max, out);
        let trajectory = require(self.trajectory, "trajectory")?;
        let solution = match self.solution {
            Some(p) => p,
            None => trajectory.with_file_name("solution.json"),
        };
        let fit = match (self.fit_field, self.fit_t_min, self.fit_t_max) {
            (None, None, None) => None,
            (Some(field), t_min, t_max) => Some(FitRequest {
                field,
                t_min: require(t_min, "fit-t-min")?,
                t_max: require(t_max, "fit-t-max")?,
            }),
            _ => bail!("--fit-t-min/--fit-t-max need --fit-field"),
        };
        Ok(VerifyParams {
            trajectory,
            data: require(self.data, "data")?,
            solution,
            tol: self.tol,
            fit,
            out: self.out,
        })
    }
}
