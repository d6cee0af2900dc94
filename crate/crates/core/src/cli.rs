//! The `solve`, `converge` and `energy` commands.
//!
//! Every command validates its configuration before touching the output
//! directory, so a bad config leaves no files behind.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde_json::json;

use crate::config::{RunConfig, Sweep, Variant};
use crate::diagnostics::{convergence_rate, fmt_f64, ErrorProbe};
use crate::error::{Error, Result};
use crate::geometry::{BoxDomain, Points};
use crate::integrate::{run, step_count, RunOptions, Scheme};
use crate::problems::Problem;
use crate::setup::{CenterSpec, Simulation};
use crate::system::{evaluate_solution, State};

/// Condition numbers are reported in `run_meta.json` only below this size.
const COND_REPORT_MAX_N: usize = 2000;

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn prepare_output_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

/// File name for a snapshot at time `t`: `solution_t1.csv`, `solution_t0.5.csv`.
pub fn snapshot_file_name(t: f64) -> String {
    format!("solution_t{t}.csv")
}

/// Evenly spaced grid over `sigma` with `p` points per axis (x fastest).
pub fn snapshot_grid(sigma: &BoxDomain, p: usize) -> Points {
    let axis = |d: usize| -> Vec<f64> {
        let (a, b) = (sigma.lo()[d], sigma.hi()[d]);
        (0..p).map(|i| a + (b - a) * i as f64 / (p - 1) as f64).collect()
    };
    match sigma.dim() {
        1 => Points::from_1d(&axis(0)),
        _ => {
            let (xs, ys) = (axis(0), axis(1));
            let mut pts = Points::empty(2);
            for y in &ys {
                for x in &xs {
                    pts.push(&[*x, *y]);
                }
            }
            pts
        }
    }
}

pub fn write_snapshot(path: &Path, points: &Points, u: &[f64]) -> Result<()> {
    let mut w = create(path)?;
    let header = if points.dim() == 1 { "x,u" } else { "x,y,u" };
    writeln!(w, "{header}")?;
    for (p, v) in points.iter().zip(u) {
        for c in p {
            write!(w, "{},", fmt_f64(*c))?;
        }
        writeln!(w, "{}", fmt_f64(*v))?;
    }
    w.flush()?;
    Ok(())
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::Io(e.into()))?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn build(cfg: &RunConfig, problem: &Problem, centers: CenterSpec) -> Result<Simulation> {
    let kernel = cfg.kernel(problem.dim())?;
    Simulation::build(problem, &kernel, centers, &cfg.quadrature, cfg.assembly())
}

fn system_meta(sim: &Simulation) -> serde_json::Value {
    let sys = &sim.system;
    let cond = if sys.n() <= COND_REPORT_MAX_N {
        let (a, b) = sys.condition_numbers();
        json!({ "A": a, "B": b })
    } else {
        serde_json::Value::Null
    };
    json!({
        "centers": sys.n(),
        "quadrature_nodes": sys.m(),
        "quadrature_levels": sim.quadrature_levels,
        "fill_distance": sys.centers().fill_distance(),
        "condition_numbers": cond,
    })
}

fn base_meta(command: &str, cfg: &RunConfig, problem: &Problem) -> Result<serde_json::Value> {
    Ok(json!({
        "command": command,
        "versions": { env!("CARGO_PKG_NAME"): env!("CARGO_PKG_VERSION") },
        "config": cfg.resolved()?,
        "resolved": {
            "problem": problem.name(),
            "dim": problem.dim(),
            "sigma": { "lo": problem.sigma().lo(), "hi": problem.sigma().hi() },
        },
    }))
}

/// Single run: `trace.csv`, snapshots, `run_meta.json`.
pub fn cmd_solve(cfg: &RunConfig) -> Result<()> {
    cfg.validate()?;
    let problem = cfg.problem()?;
    let out = cfg.output_dir.clone();
    prepare_output_dir(&out)?;

    let sim = build(cfg, &problem, cfg.center_spec())?;
    let sys = &sim.system;
    let t_final = problem.t_final();
    let step_cfg = cfg.stepper_config();
    let probe = if problem.has_exact() {
        Some(ErrorProbe::with_default_rule(sys, &problem)?)
    } else {
        None
    };

    let grid = snapshot_grid(problem.sigma(), cfg.snapshot_points(problem.dim()));
    let mut pending: Vec<(usize, f64)> = cfg
        .snapshot_times(t_final)
        .into_iter()
        .map(|t| ((t / step_cfg.tau).round() as usize, t))
        .collect();
    pending.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mut written = Vec::new();
    let mut snapshots = |n: usize, state: &State, _: usize| -> Result<()> {
        while let Some(&(step, t)) = pending.first() {
            if step != n {
                break;
            }
            pending.remove(0);
            let u = evaluate_solution(sys, &state.alpha, &grid)?;
            let name = snapshot_file_name(t);
            write_snapshot(&out.join(&name), &grid, &u)?;
            written.push(json!({ "file": name, "requested_t": t, "t": state.t }));
        }
        Ok(())
    };

    log::info!(
        "solve {}: N={} M={} tau={} T={}",
        problem.name(),
        sys.n(),
        sys.m(),
        step_cfg.tau,
        t_final
    );
    let opts = RunOptions {
        t_final,
        observe_every: cfg.cadence(t_final, step_cfg.tau),
        scheme: cfg.stepper.scheme,
    };
    let (trace, last) = run(sys, problem.nonlinearity(), &sim.state0, &step_cfg, opts, probe.as_ref(), &mut [&mut snapshots])?;
    let mut w = create(&out.join("trace.csv"))?;
    trace.write_csv(&mut w)?;
    w.flush()?;

    let mut meta = base_meta("solve", cfg, &problem)?;
    meta["system"] = system_meta(&sim);
    meta["snapshots"] = json!(written);
    meta["summary"] = json!({
        "steps": step_count(t_final, step_cfg.tau),
        "final_t": last.t,
        "max_rel_energy_err": trace.max_rel_energy_err(),
        "final_l2_err": trace.last().and_then(|r| r.l2_err),
        "final_h1_err": trace.last().and_then(|r| r.h1_err),
    });
    write_json(&out.join("run_meta.json"), &meta)?;
    log::info!("max relative energy drift {:.3e}", trace.max_rel_energy_err());
    Ok(())
}

/// One row of a spatial sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialRow {
    pub n: usize,
    pub h: f64,
    pub l2: f64,
    pub h1: f64,
}

/// One row of a temporal sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalRow {
    pub tau: f64,
    pub l2: f64,
    pub linf: f64,
}

fn opt_rate(rates: &[f64], i: usize) -> String {
    if i == 0 { String::new() } else { fmt_f64(rates[i - 1]) }
}

pub fn write_spatial_csv(mut w: impl Write, rows: &[SpatialRow]) -> Result<()> {
    let hs: Vec<f64> = rows.iter().map(|r| r.h).collect();
    let l2: Vec<f64> = rows.iter().map(|r| r.l2).collect();
    let h1: Vec<f64> = rows.iter().map(|r| r.h1).collect();
    let (rl2, rh1) = (convergence_rate(&hs, &l2)?, convergence_rate(&hs, &h1)?);
    writeln!(w, "n,h,l2,rate_l2,h1,rate_h1")?;
    for (i, r) in rows.iter().enumerate() {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.n,
            fmt_f64(r.h),
            fmt_f64(r.l2),
            opt_rate(&rl2, i),
            fmt_f64(r.h1),
            opt_rate(&rh1, i)
        )?;
    }
    Ok(())
}

pub fn write_temporal_csv(mut w: impl Write, rows: &[TemporalRow]) -> Result<()> {
    let taus: Vec<f64> = rows.iter().map(|r| r.tau).collect();
    let l2: Vec<f64> = rows.iter().map(|r| r.l2).collect();
    let linf: Vec<f64> = rows.iter().map(|r| r.linf).collect();
    let (rl2, rinf) = (convergence_rate(&taus, &l2)?, convergence_rate(&taus, &linf)?);
    writeln!(w, "tau,l2,rate_l2,linf,rate_linf")?;
    for (i, r) in rows.iter().enumerate() {
        writeln!(
            w,
            "{},{},{},{},{}",
            fmt_f64(r.tau),
            fmt_f64(r.l2),
            opt_rate(&rl2, i),
            fmt_f64(r.linf),
            opt_rate(&rinf, i)
        )?;
    }
    Ok(())
}

/// Spatial sweep: one run per center count, errors at the final time.
pub fn spatial_sweep(cfg: &RunConfig, problem: &Problem, ns: &[usize]) -> Result<Vec<SpatialRow>> {
    let step_cfg = cfg.stepper_config();
    let t_final = problem.t_final();
    let mut rows = Vec::with_capacity(ns.len());
    for &n in ns {
        let sim = build(cfg, problem, CenterSpec { kind: cfg.centers.kind, n })?;
        let sys = &sim.system;
        let probe = ErrorProbe::with_default_rule(sys, problem)?;
        let opts = RunOptions {
            t_final,
            observe_every: usize::MAX,
            scheme: cfg.stepper.scheme,
        };
        let (_, last) = run(sys, problem.nonlinearity(), &sim.state0, &step_cfg, opts, None, &mut [])?;
        let e = probe.errors(&last.alpha, last.t);
        log::info!("n={n}: L2 {:.4e} H1 {:.4e}", e.l2, e.h1);
        rows.push(SpatialRow {
            n,
            h: sys.centers().fill_distance(),
            l2: e.l2,
            h1: e.h1,
        });
    }
    Ok(rows)
}

/// Temporal sweep on one spatial system.
pub fn temporal_sweep(cfg: &RunConfig, problem: &Problem, taus: &[f64]) -> Result<Vec<TemporalRow>> {
    let sim = build(cfg, problem, cfg.center_spec())?;
    let sys = &sim.system;
    let probe = ErrorProbe::with_default_rule(sys, problem)?;
    let t_final = problem.t_final();
    let mut rows = Vec::with_capacity(taus.len());
    for &tau in taus {
        let step_cfg = crate::integrate::StepperConfig {
            tau,
            ..cfg.stepper_config()
        };
        let opts = RunOptions {
            t_final,
            observe_every: usize::MAX,
            scheme: cfg.stepper.scheme,
        };
        let (_, last) = run(sys, problem.nonlinearity(), &sim.state0, &step_cfg, opts, None, &mut [])?;
        let e = probe.errors(&last.alpha, last.t);
        log::info!("tau={tau}: L2 {:.4e} Linf {:.4e}", e.l2, e.linf);
        rows.push(TemporalRow {
            tau,
            l2: e.l2,
            linf: e.linf,
        });
    }
    Ok(rows)
}

/// Convergence sweep over center counts or time steps: `convergence.csv`.
pub fn cmd_converge(cfg: &RunConfig, sweep: &Sweep) -> Result<()> {
    cfg.validate()?;
    sweep.validate()?;
    let problem = cfg.problem()?;
    if !problem.has_exact() {
        return Err(Error::Config(format!(
            "{} has no exact solution, so errors cannot be measured",
            problem.name()
        )));
    }
    let out = cfg.output_dir.clone();
    prepare_output_dir(&out)?;
    let mut w = create(&out.join("convergence.csv"))?;
    let (kind, values) = match sweep {
        Sweep::Centers(ns) => {
            let rows = spatial_sweep(cfg, &problem, ns)?;
            write_spatial_csv(&mut w, &rows)?;
            ("n", json!(ns))
        }
        Sweep::TimeStep(taus) => {
            let rows = temporal_sweep(cfg, &problem, taus)?;
            write_temporal_csv(&mut w, &rows)?;
            ("tau", json!(taus))
        }
    };
    w.flush()?;
    let mut meta = base_meta("converge", cfg, &problem)?;
    meta["sweep"] = json!({ "variable": kind, "values": values });
    write_json(&out.join("run_meta.json"), &meta)?;
    Ok(())
}

/// Energy study: one `energy_{variant}.csv` per center layout or scheme.
pub fn cmd_energy(cfg: &RunConfig, variants: &[Variant]) -> Result<()> {
    cfg.validate()?;
    if variants.is_empty() {
        return Err(Error::Config("no energy variants given".into()));
    }
    let problem = cfg.problem()?;
    for v in variants {
        if let Variant::Centers(kind) = v {
            if *kind == crate::setup::CenterKind::Chebyshev && problem.dim() != 1 {
                return Err(Error::Config("chebyshev centers are 1D only".into()));
            }
        }
    }
    let out = cfg.output_dir.clone();
    prepare_output_dir(&out)?;
    let step_cfg = cfg.stepper_config();
    let t_final = problem.t_final();
    let mut summary = serde_json::Map::new();
    for v in variants {
        let (centers, scheme): (CenterSpec, Scheme) = match v {
            Variant::Centers(kind) => (CenterSpec { kind: *kind, n: cfg.centers.n }, cfg.stepper.scheme),
            Variant::Scheme(s) => (cfg.center_spec(), *s),
        };
        let sim = build(cfg, &problem, centers)?;
        let opts = RunOptions {
            t_final,
            observe_every: cfg.cadence(t_final, step_cfg.tau),
            scheme,
        };
        let (trace, _) = run(&sim.system, problem.nonlinearity(), &sim.state0, &step_cfg, opts, None, &mut [])?;
        let path: PathBuf = out.join(format!("energy_{}.csv", v.name()));
        let mut w = create(&path)?;
        trace.write_csv(&mut w)?;
        w.flush()?;
        log::info!("{}: max relative energy drift {:.3e}", v.name(), trace.max_rel_energy_err());
        summary.insert(
            v.name().to_string(),
            json!({
                "centers": centers.kind.name(),
                "scheme": scheme.name(),
                "max_rel_energy_err": trace.max_rel_energy_err(),
                "system": system_meta(&sim),
            }),
        );
    }
    let mut meta = base_meta("energy", cfg, &problem)?;
    meta["variants"] = serde_json::Value::Object(summary);
    write_json(&out.join("run_meta.json"), &meta)?;
    Ok(())
}
