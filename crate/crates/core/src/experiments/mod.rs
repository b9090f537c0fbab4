//! Experiment orchestration: strict JSON configs, Monte Carlo ensembles on a
//! worker pool, and CSV reports with provenance.
//!
//! Cells (parameter point, replicate) run in parallel; results are collected
//! in cell order, so reports do not depend on the number of workers.

mod config;
mod report;

use std::path::{Path, PathBuf};

use rayon::prelude::*;

pub use config::{default_schedule, ControlSpec, ExperimentConfig, ExperimentKind, InitialData, Model, ScheduleEntry};
pub use report::{loglog_slope, mean_std_err, Cell, ReportTable, REINTERPRETATION_NOTE};

use crate::ch::{ChSolver, NoiseMode};
use crate::entropy::{dissipation_report, DiffusionCoefficient, EntropyParams};
use crate::error::{Error, Result};
use crate::ikk::{ControlCoupling, IKKParams, IkkSolver};
use crate::noise::{coefficients, sample_correlated_increment, MollifierSpec, NoiseStream};
use crate::skeleton::{gamma_convergence_experiment, solve_skeleton_ch};
use crate::trajectory::Trajectory;

/// Tables and trajectories produced by one experiment.
#[derive(Debug, Clone)]
pub struct Report {
    pub table: ReportTable,
    pub trajectories: Vec<(String, Trajectory)>,
}

impl Report {
    /// Writes everything below `dir`.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let mut out = vec![self.table.save(dir)?];
        for (name, tr) in &self.trajectories {
            let path = dir.join(format!("{name}.traj"));
            tr.save(&path)?;
            out.push(path);
        }
        Ok(out)
    }
}

pub fn run_experiment(cfg: &ExperimentConfig, workers: usize) -> Result<Report> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    pool.install(|| {
        let table = match cfg.kind {
            ExperimentKind::ConvergeTwoStep => run_converge_two_step(cfg)?,
            ExperimentKind::EntropyReport => run_entropy_report(cfg)?,
            ExperimentKind::RemainderScaling => run_remainder_scaling(cfg)?,
            ExperimentKind::LdpRegime => run_ldp_regime(cfg)?,
            ExperimentKind::GammaConverge => run_gamma_converge(cfg)?,
            ExperimentKind::NoiseChecks => run_noise_checks(cfg)?,
            ExperimentKind::Simulate => return run_simulate(cfg),
        };
        Ok(Report {
            table,
            trajectories: Vec::new(),
        })
    })
}

/// Aborted runs become `None`; anything else is an error.
fn settle<T>(r: Result<T>) -> Result<Option<T>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::Abort { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

fn stream(cfg: &ExperimentConfig, replicate: usize) -> NoiseStream {
    NoiseStream::new(cfg.seed, replicate as u64, cfg.n / 3)
}

fn distance(a: &Option<Trajectory>, b: &Option<Trajectory>) -> Result<Option<f64>> {
    match (a, b) {
        (Some(a), Some(b)) => Ok(Some(a.l2l2_distance(b)?)),
        _ => Ok(None),
    }
}

/// Mean, standard error and number of missing samples.
fn aggregate(samples: &[Option<f64>]) -> (Option<f64>, Option<f64>, usize) {
    let ok: Vec<f64> = samples.iter().flatten().copied().collect();
    let missing = samples.len() - ok.len();
    if ok.is_empty() {
        return (None, None, missing);
    }
    let (m, se) = mean_std_err(&ok);
    (Some(m), Some(se), missing)
}

/// Common step for a set of coupled runs: the configured one, or the
/// smallest default.
fn common_dt(cfg: &ExperimentConfig, ikk: &[IKKParams]) -> f64 {
    cfg.dt.unwrap_or_else(|| {
        ikk.iter()
            .map(IKKParams::default_dt)
            .fold(cfg.ch_params(NoiseMode::Off).default_dt(), f64::min)
    })
}

/// Mean distances `||u_{gamma,delta} - u_delta||` (Kac against mollified
/// Cahn-Hilliard) and `||u_delta - u||` (mollified against white-noise
/// Cahn-Hilliard), all runs of a replicate driven by one noise path.
pub fn run_converge_two_step(cfg: &ExperimentConfig) -> Result<ReportTable> {
    let eps = cfg.epsilons[0];
    let ikk: Vec<Vec<IKKParams>> = cfg
        .gammas
        .iter()
        .map(|&g| cfg.deltas.iter().map(|&d| cfg.ikk_params(g, d, eps)).collect())
        .collect();
    let dt = common_dt(cfg, &ikk.concat());
    let u_limit = cfg.initial.limit(cfg.n)?;
    let ch = |noise: NoiseMode| -> Result<ChSolver> {
        let mut p = cfg.ch_params(noise);
        p.dt = Some(dt);
        ChSolver::new(&p)
    };
    let white = ch(NoiseMode::White)?;
    let mollified = cfg
        .deltas
        .iter()
        .map(|&d| ch(cfg.mollified_noise(d)))
        .collect::<Result<Vec<_>>>()?;
    let kac = ikk
        .iter()
        .zip(&cfg.gammas)
        .map(|(row, &g)| {
            let u0 = cfg.initial.build(cfg.n, g)?;
            let solvers = row
                .iter()
                .map(|p| {
                    IkkSolver::new(&IKKParams {
                        dt: Some(dt),
                        ..p.clone()
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((u0, solvers))
        })
        .collect::<Result<Vec<_>>>()?;

    // per replicate: [gamma][delta] distances and [delta] distances
    type Cellwise = (Vec<Vec<Option<f64>>>, Vec<Option<f64>>);
    let cells: Vec<Cellwise> = (0..cfg.replicates)
        .into_par_iter()
        .map(|r| -> Result<Cellwise> {
            let s = stream(cfg, r);
            let u = settle(white.run(&u_limit, Some(&s), None))?;
            let u_delta = mollified
                .iter()
                .map(|m| settle(m.run(&u_limit, Some(&s), None)))
                .collect::<Result<Vec<_>>>()?;
            let to_white = u_delta.iter().map(|ud| distance(ud, &u)).collect::<Result<Vec<_>>>()?;
            let to_mollified = kac
                .iter()
                .map(|(u0, solvers)| {
                    solvers
                        .iter()
                        .zip(&u_delta)
                        .map(|(solver, ud)| distance(&settle(solver.run(u0, Some(&s), None))?, ud))
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((to_mollified, to_white))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut t = ReportTable::new(
        "converge_two_step",
        &[
            "gamma",
            "delta",
            "mean_dist_kac_to_mollified",
            "std_err_kac_to_mollified",
            "mean_dist_mollified_to_white",
            "std_err_mollified_to_white",
            "dt",
            "aborted",
        ],
        cfg,
    );
    for (i, &g) in cfg.gammas.iter().enumerate() {
        for (j, &d) in cfg.deltas.iter().enumerate() {
            let a: Vec<Option<f64>> = cells.iter().map(|c| c.0[i][j]).collect();
            let b: Vec<Option<f64>> = cells.iter().map(|c| c.1[j]).collect();
            let (ma, sa, na) = aggregate(&a);
            let (mb, sb, _) = aggregate(&b);
            t.push(vec![
                g.into(),
                d.into(),
                ma.into(),
                sa.into(),
                mb.into(),
                sb.into(),
                dt.into(),
                na.into(),
            ]);
        }
    }
    Ok(t)
}

/// The uniform entropy-dissipation functionals per `(gamma, delta)`.
pub fn run_entropy_report(cfg: &ExperimentConfig) -> Result<ReportTable> {
    let eps = cfg.epsilons[0];
    let points: Vec<(f64, f64)> = cfg
        .gammas
        .iter()
        .flat_map(|&g| cfg.deltas.iter().map(move |&d| (g, d)))
        .collect();
    let solvers = points
        .iter()
        .map(|&(g, d)| {
            let solver = IkkSolver::new(&cfg.ikk_params(g, d, eps))?;
            Ok((solver, cfg.initial.build(cfg.n, g)?, EntropyParams::new(g)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let cells: Vec<Vec<Option<[f64; 5]>>> = (0..cfg.replicates)
        .into_par_iter()
        .map(|r| {
            let s = stream(cfg, r);
            solvers
                .iter()
                .map(|(solver, u0, ep)| {
                    let Some(tr) = settle(solver.run(u0, Some(&s), None))? else {
                        return Ok(None);
                    };
                    let rep = dissipation_report(&tr, ep, solver.kernel(), cfg.a)?;
                    Ok(Some([
                        rep.sup_half_l2,
                        rep.weighted_gradient_integral,
                        rep.gradient_integral,
                        rep.energy_functional,
                        rep.dissipation_integral,
                    ]))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    let mut t = ReportTable::new(
        "entropy_report",
        &[
            "gamma",
            "delta",
            "sup_half_l2",
            "sup_half_l2_se",
            "weighted_gradient",
            "weighted_gradient_se",
            "gradient",
            "gradient_se",
            "energy_functional",
            "energy_functional_se",
            "dissipation",
            "fitted_constant",
            "aborted",
        ],
        cfg,
    );
    let mut energy = vec![vec![f64::NAN; cfg.deltas.len()]; cfg.gammas.len()];
    for (k, &(g, d)) in points.iter().enumerate() {
        let stats: Vec<(Option<f64>, Option<f64>, usize)> = (0..5)
            .map(|q| aggregate(&cells.iter().map(|c| c[k].map(|v| v[q])).collect::<Vec<_>>()))
            .collect();
        let e = stats[3].0;
        energy[k / cfg.deltas.len()][k % cfg.deltas.len()] = e.unwrap_or(f64::NAN);
        t.push(vec![
            g.into(),
            d.into(),
            stats[0].0.into(),
            stats[0].1.into(),
            stats[1].0.into(),
            stats[1].1.into(),
            stats[2].0.into(),
            stats[2].1.into(),
            e.into(),
            stats[3].1.into(),
            stats[4].0.into(),
            e.map(|e| e / (1.0 + cfg.t_final / d)).into(),
            stats[0].2.into(),
        ]);
    }
    // spread across gamma at each delta, and growth in 1/delta
    let ratio = (0..cfg.deltas.len())
        .map(|j| {
            let col: Vec<f64> = energy.iter().map(|row| row[j]).collect();
            col.iter().copied().fold(f64::NEG_INFINITY, f64::max) / col.iter().copied().fold(f64::INFINITY, f64::min)
        })
        .fold(f64::NEG_INFINITY, f64::max);
    t.add_summary("max_gamma_ratio", ratio);
    if cfg.deltas.len() >= 3 {
        let mean_over_gamma: Vec<f64> = (0..cfg.deltas.len())
            .map(|j| energy.iter().map(|row| row[j]).sum::<f64>() / cfg.gammas.len() as f64)
            .collect();
        if let Ok(s) = loglog_slope(&cfg.deltas, &mean_over_gamma) {
            t.add_summary("delta_slope", s);
        }
    }
    Ok(t)
}

/// Time-integrated remainder norms over a `gamma` sweep at the reference
/// `delta` and a `delta` sweep at the reference `gamma`, with log-log
/// slopes.
pub fn run_remainder_scaling(cfg: &ExperimentConfig) -> Result<ReportTable> {
    let eps = cfg.epsilons[0];
    let mut points: Vec<(&str, f64, f64)> = cfg.gammas.iter().map(|&g| ("gamma", g, cfg.reference_delta)).collect();
    points.extend(cfg.deltas.iter().map(|&d| ("delta", cfg.reference_gamma, d)));
    let replicates = if eps > 0.0 { cfg.replicates } else { 1 };
    let runs = points
        .iter()
        .map(|&(_, g, d)| {
            let p = cfg.ikk_params(g, d, eps);
            Ok((IkkSolver::new(&p)?, p, cfg.initial.build(cfg.n, g)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let cells: Vec<Vec<Option<[f64; 4]>>> = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let s = stream(cfg, r);
            runs.iter()
                .map(|(solver, p, u0)| {
                    let Some(tr) = settle(solver.run(u0, Some(&s), None))? else {
                        return Ok(None);
                    };
                    Ok(Some(crate::ikk::remainder_norms(&tr, p, cfg.beta)?))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    let mut t = ReportTable::new(
        "remainder_scaling",
        &["sweep", "gamma", "delta", "r1", "r2", "r3", "r4", "aborted"],
        cfg,
    );
    let mut means = Vec::new();
    for (k, &(sweep, g, d)) in points.iter().enumerate() {
        let stats: Vec<(Option<f64>, Option<f64>, usize)> = (0..4)
            .map(|q| aggregate(&cells.iter().map(|c| c[k].map(|v| v[q])).collect::<Vec<_>>()))
            .collect();
        means.push(stats.iter().map(|s| s.0.unwrap_or(f64::NAN)).collect::<Vec<_>>());
        let mut row: Vec<Cell> = vec![sweep.into(), g.into(), d.into()];
        row.extend(stats.iter().map(|s| Cell::from(s.0)));
        row.push(stats[0].2.into());
        t.push(row);
    }
    let ng = cfg.gammas.len();
    for (q, name) in ["r1", "r2", "r3", "r4"].iter().enumerate() {
        let ys: Vec<f64> = means[..ng].iter().map(|m| m[q]).collect();
        if let Ok(s) = loglog_slope(&cfg.gammas, &ys) {
            t.add_summary(&format!("{name}_gamma_slope"), s);
        }
    }
    let ys: Vec<f64> = means[ng..].iter().map(|m| m[3]).collect();
    if let Ok(s) = loglog_slope(&cfg.deltas, &ys) {
        t.add_summary("r4_delta_slope", s);
    }
    Ok(t)
}

/// `epsilon (delta^{-2/3} + gamma^{4/3} delta^{-1/3} ||sigma_n'||_inf^2)`.
pub fn regime_quantity(s: &ScheduleEntry) -> Result<f64> {
    let coeff = DiffusionCoefficient::FamilyN { n: s.n };
    coeff.validate()?;
    let sup = coeff.derivative_sup();
    Ok(s.epsilon * (s.delta.powf(-2.0 / 3.0) + s.gamma.powf(4.0 / 3.0) * s.delta.powf(-1.0 / 3.0) * sup * sup))
}

/// Regime quantity along the schedule and the controlled Kac equation's
/// distance to the Cahn-Hilliard skeleton and to its own noise-free run.
pub fn run_ldp_regime(cfg: &ExperimentConfig) -> Result<ReportTable> {
    let schedule = cfg.schedule();
    let u_limit = cfg.initial.limit(cfg.n)?;
    let g = cfg.control.build(cfg.n, cfg.t_final)?;
    struct Level {
        solver: IkkSolver,
        u0: crate::grid::Field,
        skeleton: Trajectory,
        noise_free: Option<Trajectory>,
    }
    let levels = schedule
        .iter()
        .map(|s| {
            let mut p = cfg.ikk_params(s.gamma, s.delta, s.epsilon);
            p.coefficient = DiffusionCoefficient::FamilyN { n: s.n };
            let dt = common_dt(cfg, std::slice::from_ref(&p));
            p.dt = Some(dt);
            let solver = IkkSolver::new(&p)?;
            let u0 = cfg.initial.build(cfg.n, s.gamma)?;
            let mut ch = cfg.ch_params(NoiseMode::Off);
            ch.dt = Some(dt);
            ch.d = Some(solver.surface_tension());
            let skeleton = solve_skeleton_ch(&u_limit, &g, &ch)?;
            let noise_free = settle(solver.run(&u0, None, Some((&g, ControlCoupling::Coefficient))))?;
            Ok(Level {
                solver,
                u0,
                skeleton,
                noise_free,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let cells: Vec<Vec<(Option<f64>, Option<f64>)>> = (0..cfg.replicates)
        .into_par_iter()
        .map(|r| {
            let s = stream(cfg, r);
            levels
                .iter()
                .map(|l| {
                    let u = settle(l.solver.run(&l.u0, Some(&s), Some((&g, ControlCoupling::Coefficient))))?;
                    Ok((distance(&u, &Some(l.skeleton.clone()))?, distance(&u, &l.noise_free)?))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    let mut t = ReportTable::new(
        "ldp_regime",
        &[
            "level",
            "epsilon",
            "gamma",
            "delta",
            "n",
            "regime_quantity",
            "regime_warning",
            "mean_dist_skeleton",
            "std_err_skeleton",
            "mean_dist_noise_free",
            "std_err_noise_free",
            "aborted",
        ],
        cfg,
    );
    let mut previous = f64::INFINITY;
    for (i, s) in schedule.iter().enumerate() {
        let q = regime_quantity(s)?;
        let (ms, ss, na) = aggregate(&cells.iter().map(|c| c[i].0).collect::<Vec<_>>());
        let (mn, sn, _) = aggregate(&cells.iter().map(|c| c[i].1).collect::<Vec<_>>());
        t.push(vec![
            (i + 1).into(),
            s.epsilon.into(),
            s.gamma.into(),
            s.delta.into(),
            s.n.into(),
            q.into(),
            (q >= previous).into(),
            ms.into(),
            ss.into(),
            mn.into(),
            sn.into(),
            na.into(),
        ]);
        previous = q;
    }
    Ok(t)
}

/// Recovery sequence against the Cahn-Hilliard skeleton, with recovered
/// rate values.
pub fn run_gamma_converge(cfg: &ExperimentConfig) -> Result<ReportTable> {
    let template = cfg.ikk_params(cfg.gammas[0], cfg.reference_delta, 0.0);
    let all: Vec<IKKParams> = cfg
        .gammas
        .iter()
        .map(|&g| IKKParams {
            gamma: g,
            ..template.clone()
        })
        .collect();
    let dt = common_dt(cfg, &all);
    let template = IKKParams {
        dt: Some(dt),
        ..template
    };
    let mut ch = cfg.ch_params(NoiseMode::Off);
    ch.dt = Some(dt);
    let u0 = cfg.initial.limit(cfg.n)?;
    let g = cfg.control.build(cfg.n, cfg.t_final)?;
    let rep = gamma_convergence_experiment(
        &template,
        &ch,
        &u0,
        |gamma| cfg.initial.build(cfg.n, gamma),
        &g,
        &cfg.gammas,
    )?;
    let mut t = ReportTable::new(
        "gamma_converge",
        &[
            "gamma",
            "distance",
            "rate_ikk",
            "rate_ch",
            "relative_gap",
            "elliptic_residual",
        ],
        cfg,
    );
    for r in &rep.rows {
        t.push(vec![
            r.gamma.into(),
            r.distance.into(),
            r.rate_ikk.into(),
            r.rate_ch.into(),
            r.relative_gap.into(),
            r.residual_ikk.into(),
        ]);
    }
    t.add_summary("rate_ch", rep.rate_ch.value);
    t.add_summary("control_mean_removed", rep.mean_removed);
    t.add_summary("dt", dt);
    Ok(t)
}

/// Noise coefficient identities per `delta`, with a Monte Carlo check of
/// the increment variance against `F1`.
pub fn run_noise_checks(cfg: &ExperimentConfig) -> Result<ReportTable> {
    const STEPS: u64 = 20;
    let k = cfg.n / 3;
    let dt = cfg.t_final / STEPS as f64;
    let mut t = ReportTable::new(
        "noise_checks",
        &[
            "delta",
            "f1",
            "f1_spread",
            "f2_sup",
            "f3",
            "f3_spread",
            "f1_scaled",
            "f3_scaled",
            "empirical_f1",
            "empirical_f1_se",
        ],
        cfg,
    );
    for &d in &cfg.deltas {
        let spec = MollifierSpec {
            base_radius: cfg.mollifier_radius,
            ..MollifierSpec::new(d)
        };
        let c = coefficients(&spec, cfg.n, k)?;
        let samples: Vec<f64> = (0..cfg.replicates)
            .into_par_iter()
            .map(|r| {
                let s = stream(cfg, r);
                let mut acc = 0.0;
                for step in 0..STEPS {
                    acc += sample_correlated_increment(&s, step, &spec, cfg.n, dt)?.l2_norm_sq();
                }
                Ok(acc / (STEPS as f64 * dt))
            })
            .collect::<Result<Vec<_>>>()?;
        let (m, se) = mean_std_err(&samples);
        t.push(vec![
            d.into(),
            c.f1.into(),
            c.f1_spread.into(),
            c.f2.sup_norm().into(),
            c.f3.into(),
            c.f3_spread.into(),
            (c.f1 * d.cbrt()).into(),
            (c.f3 * d).into(),
            m.into(),
            se.into(),
        ]);
    }
    Ok(t)
}

/// Plain simulations at the first `gamma`, `delta`, `epsilon`, one
/// trajectory per replicate.
pub fn run_simulate(cfg: &ExperimentConfig) -> Result<Report> {
    let (g, d, eps) = (cfg.gammas[0], cfg.deltas[0], cfg.epsilons[0]);
    let name = match cfg.model {
        Model::Ch => "ch",
        Model::Ikk => "ikk",
    };
    enum Runner {
        Ch(ChSolver),
        Ikk(IkkSolver),
    }
    let (runner, u0) = match cfg.model {
        Model::Ch => (
            Runner::Ch(ChSolver::new(&cfg.ch_params(cfg.mollified_noise(d)))?),
            cfg.initial.limit(cfg.n)?,
        ),
        Model::Ikk => (
            Runner::Ikk(IkkSolver::new(&cfg.ikk_params(g, d, eps))?),
            cfg.initial.build(cfg.n, g)?,
        ),
    };
    let runs: Vec<(Trajectory, bool)> = (0..cfg.replicates)
        .into_par_iter()
        .map(|r| {
            let s = stream(cfg, r);
            let out = match &runner {
                Runner::Ch(solver) => solver.run(&u0, Some(&s), None),
                Runner::Ikk(solver) => solver.run(&u0, Some(&s), None),
            };
            match out {
                Ok(tr) => Ok((tr, false)),
                Err(Error::Abort { last_good, .. }) => Ok((*last_good, true)),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let mut t = ReportTable::new(
        "simulate",
        &[
            "replicate",
            "model",
            "snapshots",
            "final_time",
            "mass_drift",
            "sup_norm",
            "clamp_events",
            "max_cfl",
            "aborted",
        ],
        cfg,
    );
    let mut trajectories = Vec::new();
    for (r, (tr, aborted)) in runs.into_iter().enumerate() {
        t.push(vec![
            r.into(),
            name.into(),
            tr.len().into(),
            tr.times().last().copied().unwrap_or(0.0).into(),
            tr.mass_drift().into(),
            tr.sup_norm().into(),
            tr.events.len().into(),
            tr.max_cfl.into(),
            aborted.into(),
        ]);
        trajectories.push((format!("{name}_r{r}"), tr));
    }
    Ok(Report { table: t, trajectories })
}
