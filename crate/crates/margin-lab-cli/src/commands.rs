//! The four subcommands: dataset generation, solving, running dynamics,
//! and trajectory verification.
//!
//! Every JSON document a command writes embeds the fully resolved
//! configuration under `meta.config`, the dataset fingerprint under
//! `meta.dataset_id`, and (unless `--no-timestamp`) an RFC 3339
//! timestamp, so each output is self-describing and regenerable.

use std::fs;
use std::path::Path;
use std::time::SystemTime;

use anyhow::Context;
use serde::Serialize;
use serde_json::{json, Value};

use margin_lab::analysis::{self, RateFit, Report};
use margin_lab::dataset::{generate_separable, Dataset};
use margin_lab::deep::{riemannian_ascent, Architecture, DeepAscentConfig};
use margin_lab::kernel::{kernel_ascent, kernel_optimal_margin};
use margin_lab::margin::{optimal_margin, MarginSolution};
use margin_lab::optim::{flow_run, gd_run};
use margin_lab::smooth::SmoothMarginParams;
use margin_lab::trajectory::{geometric_steps, geometric_times, Trajectory, TrajectoryMeta};

use crate::args::{
    DataSource, FitRequest, GenParams, RunMode, RunParams, SolveParams, VerifyParams,
};

/// Invocation-wide switches shared by all subcommands.
pub struct Ctx {
    pub no_timestamp: bool,
}

impl Ctx {
    fn meta(&self, command: &str, config: &impl Serialize, dataset_id: &str) -> Value {
        let mut meta = json!({
            "command": command,
            "config": serde_json::to_value(config).expect("config serialization is infallible"),
            "dataset_id": dataset_id,
        });
        if !self.no_timestamp {
            meta["timestamp"] =
                json!(humantime::format_rfc3339_seconds(SystemTime::now()).to_string());
        }
        meta
    }
}

/// The solution document written by `solve` and by linear/deep runs.
#[derive(Serialize)]
struct SolutionDoc {
    meta: Value,
    gamma_opt: f64,
    w_opt: Vec<f64>,
    q_star: Vec<f64>,
    support: Vec<usize>,
    dual_gap: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    fit: Option<RateFit>,
}

impl SolutionDoc {
    fn new(meta: Value, sol: &MarginSolution) -> Self {
        Self {
            meta,
            gamma_opt: sol.gamma_opt,
            w_opt: sol.w_opt.as_slice().to_vec(),
            q_star: sol.q_star.as_slice().to_vec(),
            support: sol.support.clone(),
            dual_gap: sol.dual_gap,
            fit: None,
        }
    }
}

/// The solution document written by kernel runs.
#[derive(Serialize)]
struct KernelSolutionDoc {
    meta: Value,
    gamma_h: f64,
    q_star: Vec<f64>,
    dual_gap: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    fit: Option<RateFit>,
}

fn to_pretty_json(doc: &impl Serialize) -> String {
    let mut s = serde_json::to_string_pretty(doc).expect("document serialization is infallible");
    s.push('\n');
    s
}

fn write_or_print(doc: &impl Serialize, out: Option<&Path>) -> anyhow::Result<()> {
    let text = to_pretty_json(doc);
    match out {
        Some(path) => {
            fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
            println!("wrote {}", path.display());
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn load_dataset(path: &Path) -> anyhow::Result<Dataset> {
    Dataset::load_csv(path).with_context(|| format!("loading dataset {}", path.display()))
}

pub fn cmd_gen(ctx: &Ctx, params: GenParams) -> anyhow::Result<i32> {
    let d = generate_separable(params.n, params.m, params.margin, params.seed)?;
    d.store_csv(&params.out)
        .with_context(|| format!("writing dataset {}", params.out.display()))?;
    let _ = ctx; // gen's output is a bare CSV; nothing carries a meta block.
    println!(
        "wrote {} samples x {} features (fingerprint {}) to {}",
        d.n(),
        d.dim(),
        d.fingerprint(),
        params.out.display()
    );
    Ok(0)
}

pub fn cmd_solve(ctx: &Ctx, params: SolveParams) -> anyhow::Result<i32> {
    let d = load_dataset(&params.data)?;
    let sol = optimal_margin(&d, params.tol)?;
    let meta = ctx.meta("solve", &params, &d.fingerprint());
    let doc = SolutionDoc::new(meta, &sol);
    write_or_print(&doc, params.out.as_deref())?;
    Ok(0)
}

fn obtain_dataset(source: &DataSource) -> anyhow::Result<Dataset> {
    match source {
        DataSource::Path(path) => load_dataset(path),
        DataSource::Generated { n, m, margin, seed } => {
            Ok(generate_separable(*n, *m, *margin, *seed)?)
        }
    }
}

fn maybe_fit(traj: &Trajectory, fit: Option<&FitRequest>) -> anyhow::Result<Option<RateFit>> {
    match fit {
        None => Ok(None),
        Some(req) => {
            let fit = analysis::fit_rate(traj, req.field.into(), req.t_min, req.t_max)?;
            println!(
                "fit: {} ~ t^{:.4} over [{}, {}] (r^2 = {:.6}, {} points)",
                fit.field, fit.slope, req.t_min, req.t_max, fit.r_squared, fit.n_points
            );
            Ok(Some(fit))
        }
    }
}

pub fn cmd_run(ctx: &Ctx, params: RunParams) -> anyhow::Result<i32> {
    let d = obtain_dataset(&params.source)?;
    let dataset_id = d.fingerprint();
    let smooth = SmoothMarginParams::new(params.beta)?;
    fs::create_dir_all(&params.out_dir)
        .with_context(|| format!("creating {}", params.out_dir.display()))?;
    let traj_path = params.out_dir.join("trajectory.csv");
    let solution_path = params.out_dir.join("solution.json");

    // The kernel mode solves its own dual in the RKHS; all other modes
    // verify against the linear optimum.
    let run_meta = |meta_extra: Option<(&str, Value)>, traj_meta: &TrajectoryMeta| -> Value {
        let mut meta = ctx.meta("run", &params, &dataset_id);
        meta["trajectory"] =
            serde_json::to_value(traj_meta).expect("trajectory meta serialization is infallible");
        if let Some((key, value)) = meta_extra {
            meta[key] = value;
        }
        meta
    };

    let (traj, doc_text): (Trajectory, String) = match &params.mode {
        RunMode::Flow { t_end, dt } => {
            let sol = optimal_margin(&d, params.tol)?;
            let times = geometric_times(*dt, *t_end, params.grid_points)?;
            let traj = flow_run(&d, &smooth, *t_end, Some(*dt), &times, &sol)?;
            let mut doc = SolutionDoc::new(run_meta(None, &traj.meta), &sol);
            doc.fit = maybe_fit(&traj, params.fit.as_ref())?;
            let text = to_pretty_json(&doc);
            (traj, text)
        }
        RunMode::Gd { steps, rule } => {
            let sol = optimal_margin(&d, params.tol)?;
            let record_at = geometric_steps(1, *steps, params.grid_points)?;
            let traj =
                gd_run(&d, &smooth, &rule.to_schedule(), *steps, &record_at, &sol)?;
            let mut doc = SolutionDoc::new(run_meta(None, &traj.meta), &sol);
            doc.fit = maybe_fit(&traj, params.fit.as_ref())?;
            let text = to_pretty_json(&doc);
            (traj, text)
        }
        RunMode::Deep { steps, eta, depth, widths, init_seed, check_iterates } => {
            let sol = optimal_margin(&d, params.tol)?;
            let hidden = if *widths == 0 { d.dim() } else { *widths };
            let mut layer_widths = vec![d.dim()];
            layer_widths.extend(std::iter::repeat_n(hidden, depth.saturating_sub(1)));
            layer_widths.push(1);
            let arch = Architecture::new(layer_widths)?;
            let cfg = DeepAscentConfig {
                steps: *steps,
                eta: *eta,
                seed: *init_seed,
                record_at: geometric_steps(1, *steps, params.grid_points)?,
                check_iterates: *check_iterates,
                ..DeepAscentConfig::default()
            };
            let run = riemannian_ascent(&d, &arch, &smooth, &cfg, &sol)?;
            let extra = json!({
                "architecture": arch.label(),
                "restarts": run.restarts,
                "checks": run.checks,
            });
            let mut doc =
                SolutionDoc::new(run_meta(Some(("deep", extra)), &run.trajectory.meta), &sol);
            doc.fit = maybe_fit(&run.trajectory, params.fit.as_ref())?;
            let text = to_pretty_json(&doc);
            (run.trajectory, text)
        }
        RunMode::Kernel { steps, kernel, sigma, rule } => {
            let spec = kernel.to_spec(*sigma);
            let ksol = kernel_optimal_margin(&d, &spec, params.tol)?;
            let record_at = geometric_steps(1, *steps, params.grid_points)?;
            let traj = kernel_ascent(
                &d,
                &spec,
                &smooth,
                &rule.to_schedule(),
                *steps,
                &record_at,
                &ksol,
            )?;
            let mut doc = KernelSolutionDoc {
                meta: run_meta(None, &traj.meta),
                gamma_h: ksol.gamma_h,
                q_star: ksol.q_star.as_slice().to_vec(),
                dual_gap: ksol.gap,
                fit: None,
            };
            doc.fit = maybe_fit(&traj, params.fit.as_ref())?;
            let text = to_pretty_json(&doc);
            (traj, text)
        }
    };

    traj.write_csv(&traj_path)
        .with_context(|| format!("writing {}", traj_path.display()))?;
    fs::write(&solution_path, doc_text)
        .with_context(|| format!("writing {}", solution_path.display()))?;
    let last = traj.records.last().expect("trajectories are never empty");
    println!(
        "ran {}: {} records to t = {} (final margin {:.6}, deficit {:.3e})",
        traj.meta.schedule,
        traj.records.len(),
        last.t,
        last.margin,
        last.deficit
    );
    println!("wrote {}", traj_path.display());
    println!("wrote {}", solution_path.display());
    Ok(0)
}

pub fn cmd_verify(ctx: &Ctx, params: VerifyParams) -> anyhow::Result<i32> {
    let d = load_dataset(&params.data)?;
    let solution_text = fs::read_to_string(&params.solution)
        .with_context(|| format!("reading {}", params.solution.display()))?;
    let solution_doc: Value = serde_json::from_str(&solution_text)
        .with_context(|| format!("parsing {}", params.solution.display()))?;
    let traj_meta: TrajectoryMeta =
        serde_json::from_value(solution_doc["meta"]["trajectory"].clone()).with_context(|| {
            format!(
                "{} carries no trajectory metadata; was it written by `run`?",
                params.solution.display()
            )
        })?;

    let tol = params.tol.unwrap_or(traj_meta.tol);
    let traj = Trajectory::read_csv(&params.trajectory, traj_meta)?;
    let sol = optimal_margin(&d, tol)?;
    let verification = analysis::verify_trajectory(&traj, &d, &sol)?;
    let fits = match &params.fit {
        None => Vec::new(),
        Some(req) => {
            vec![analysis::fit_rate(&traj, req.field.into(), req.t_min, req.t_max)?]
        }
    };

    let meta = ctx.meta("verify", &params, &d.fingerprint());
    let report = Report::new(meta, vec![verification], fits);
    let passed = report.passed();
    match &params.out {
        Some(path) => {
            report.write(path)?;
            println!("wrote {}", path.display());
        }
        None => print!("{}", report.to_json_string()),
    }
    // Status goes to stderr so stdout stays parseable JSON when no --out
    // was given.
    if passed {
        eprintln!("verification: pass");
        Ok(0)
    } else {
        let failures: Vec<String> = report.checks[0]
            .failures()
            .iter()
            .map(|c| {
                format!(
                    "{} (worst slack {:.3e} at t = {})",
                    c.name,
                    c.worst_slack,
                    c.worst_at.unwrap_or(f64::NAN)
                )
            })
            .collect();
        eprintln!("verification: FAIL — {}", failures.join(", "));
        Ok(1)
    }
}
