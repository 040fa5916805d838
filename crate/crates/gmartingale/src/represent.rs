//! Extraction of the martingale-representation triple (z, η, A) from a
//! PDE surface stack along simulated paths: z = V_x(s, ·), η = ½V_xx(s, ·),
//! ΔA = 2G(η)Δs − ηΔ⟨B⟩, plus the reconstruction and structural checks.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::driver::GDriver;
use crate::error::{GmError, Result};
use crate::grid::SpaceGrid;
use crate::nested::{nested_expectation, SurfaceStack};
use crate::payoff::CylinderPayoff;
use crate::simulate::{check_alignment, mean_stderr, sample_paths, PathBundle, VolatilityControl};

/// Per-path discrete representation processes and the reconstruction
/// residuals ξ − (E_G[ξ] + Σz·ΔB + Ση·Δ⟨B⟩ − Σ2G(η)Δs).
#[derive(Debug, Clone)]
pub struct RepresentationSample {
    pub expectation: f64,
    /// z_t per path, one value per step.
    pub z: Vec<Vec<f64>>,
    /// η_t per path, one value per step.
    pub eta: Vec<Vec<f64>>,
    /// Running A_t per path, n_steps + 1 values, A_0 = 0.
    pub a: Vec<Vec<f64>>,
    pub residuals: Vec<f64>,
    /// Paths that left the space hull; excluded from all norms.
    pub excluded: Vec<usize>,
    pub dt: f64,
}

impl RepresentationSample {
    pub fn n_paths(&self) -> usize {
        self.z.len()
    }

    fn included(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.n_paths()).filter(|p| !self.excluded.contains(p))
    }

    /// ∫|η|dt per included path (left-endpoint sum).
    pub fn eta_l1(&self, path: usize) -> f64 {
        self.eta[path].iter().map(|e| e.abs()).sum::<f64>() * self.dt
    }

    /// Mean over included paths of ∫|η|dt, with its standard error.
    pub fn eta_l1_mean_stderr(&self) -> (f64, f64) {
        let samples: Vec<f64> = self.included().map(|p| self.eta_l1(p)).collect();
        mean_stderr(&samples)
    }

    /// CSV dump `path_id,t,B,z,eta,A` (requires the source bundle).
    pub fn write_csv<W: Write>(&self, bundle: &PathBundle, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "path_id,t,B,z,eta,A")?;
        for p in self.included() {
            for k in 0..self.z[p].len() {
                writeln!(
                    w,
                    "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                    p,
                    bundle.time_grid.time(k),
                    bundle.b[p][k],
                    self.z[p][k],
                    self.eta[p][k],
                    self.a[p][k]
                )?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct ResidualNorms {
    pub l1: f64,
    pub l2: f64,
    pub max: f64,
}

/// Walk each path through the surface stack and read off the triple.
/// Paths escaping the space hull are flagged and excluded, not clamped.
pub fn extract_representation(
    stack: &SurfaceStack,
    cp: &CylinderPayoff,
    bundle: &PathBundle,
) -> Result<RepresentationSample> {
    check_alignment(bundle.time_grid, cp.times())?;
    let tg = bundle.time_grid;
    if tg.t_start() != 0.0 {
        return Err(GmError::Alignment("path grid must start at t = 0".into()));
    }
    let horizon = *cp.times().last().unwrap();
    let n_steps_active = tg.nearest_index(horizon);
    let expectation = stack.value()?;
    let driver = stack.driver;
    let dt = tg.dt();

    let marks: Vec<usize> = cp.times().iter().map(|&t| tg.nearest_index(t)).collect();

    let per_path: Vec<std::result::Result<(Vec<f64>, Vec<f64>, Vec<f64>, f64), ()>> = (0..bundle
        .n_paths())
        .into_par_iter()
        .map(|p| {
            let mut z = vec![0.0; tg.n_steps()];
            let mut eta = vec![0.0; tg.n_steps()];
            let mut a = vec![0.0; tg.n_steps() + 1];
            let mut increments: Vec<f64> = Vec::with_capacity(marks.len());
            let mut prev_mark_value = 0.0;
            let mut next_mark = 0usize;
            for k in 0..n_steps_active {
                if next_mark < marks.len() && k == marks[next_mark] {
                    increments.push(bundle.b[p][k] - prev_mark_value);
                    prev_mark_value = bundle.b[p][k];
                    next_mark += 1;
                }
                let t = tg.time(k);
                let (_, vx, vxx) = match stack.eval_along(t, bundle.b[p][k], &increments) {
                    Ok(v) => v,
                    Err(_) => return Err(()),
                };
                z[k] = vx;
                eta[k] = 0.5 * vxx;
                let da = 2.0 * driver.g(eta[k]) * dt - eta[k] * bundle.dqv[p][k];
                a[k + 1] = a[k] + da;
            }
            for k in n_steps_active..tg.n_steps() {
                a[k + 1] = a[k];
            }
            // reconstruction against the payoff at the realized increments
            if next_mark < marks.len() && n_steps_active == marks[next_mark] {
                increments.push(bundle.b[p][n_steps_active] - prev_mark_value);
            }
            let xi = match cp.expr().eval(&increments) {
                Ok(v) => v,
                Err(_) => return Err(()),
            };
            let mut sum = 0.0;
            for k in 0..n_steps_active {
                sum += z[k] * bundle.db[p][k]
                    + eta[k] * bundle.dqv[p][k]
                    - 2.0 * driver.g(eta[k]) * dt;
            }
            let residual = xi - (expectation + sum);
            Ok((z, eta, a, residual))
        })
        .collect();

    let mut z = Vec::with_capacity(bundle.n_paths());
    let mut eta = Vec::with_capacity(bundle.n_paths());
    let mut a = Vec::with_capacity(bundle.n_paths());
    let mut residuals = Vec::with_capacity(bundle.n_paths());
    let mut excluded = Vec::new();
    for (p, row) in per_path.into_iter().enumerate() {
        match row {
            Ok((zi, ei, ai, r)) => {
                z.push(zi);
                eta.push(ei);
                a.push(ai);
                residuals.push(r);
            }
            Err(()) => {
                excluded.push(p);
                z.push(vec![0.0; tg.n_steps()]);
                eta.push(vec![0.0; tg.n_steps()]);
                a.push(vec![0.0; tg.n_steps() + 1]);
                residuals.push(f64::NAN);
            }
        }
    }

    Ok(RepresentationSample {
        expectation,
        z,
        eta,
        a,
        residuals,
        excluded,
        dt,
    })
}

/// Residual norms across included paths.
pub fn reconstruction_report(rs: &RepresentationSample) -> ResidualNorms {
    let vals: Vec<f64> = rs
        .residuals
        .iter()
        .enumerate()
        .filter(|(p, _)| !rs.excluded.contains(p))
        .map(|(_, r)| *r)
        .collect();
    if vals.is_empty() {
        return ResidualNorms {
            l1: f64::NAN,
            l2: f64::NAN,
            max: f64::NAN,
        };
    }
    let n = vals.len() as f64;
    ResidualNorms {
        l1: vals.iter().map(|r| r.abs()).sum::<f64>() / n,
        l2: (vals.iter().map(|r| r * r).sum::<f64>() / n).sqrt(),
        max: vals.iter().fold(0.0f64, |m, r| m.max(r.abs())),
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct MonotoneReport {
    pub worst_da: f64,
    pub violating_fraction: f64,
    pub pass: bool,
}

/// Scan all path steps of the A process; pass iff the worst increment
/// is no smaller than −tol.
pub fn check_a_monotone(rs: &RepresentationSample, tol: f64) -> MonotoneReport {
    let mut worst = f64::INFINITY;
    let mut violating = 0usize;
    let mut total = 0usize;
    for p in 0..rs.n_paths() {
        if rs.excluded.contains(&p) {
            continue;
        }
        for w in rs.a[p].windows(2) {
            let da = w[1] - w[0];
            worst = worst.min(da);
            if da < -tol {
                violating += 1;
            }
            total += 1;
        }
    }
    if total == 0 {
        return MonotoneReport {
            worst_da: f64::NAN,
            violating_fraction: f64::NAN,
            pass: false,
        };
    }
    MonotoneReport {
        worst_da: worst,
        violating_fraction: violating as f64 / total as f64,
        pass: worst >= -tol,
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct SymmetryReport {
    pub is_symmetric: bool,
    pub gap: f64,
    pub eta_l1: f64,
}

/// A payoff is symmetric when E_G[ξ] + E_G[−ξ] vanishes; then −M is
/// also a G-martingale and the η part must vanish. Checks both: the
/// expectation gap and the path-averaged ∫|η|dt.
pub fn symmetric_case_check(
    driver: GDriver,
    cp: &CylinderPayoff,
    sg: SpaceGrid,
    cfl_ratio: f64,
    n_paths: usize,
    path_steps: usize,
    seed: u64,
    tol: f64,
) -> Result<SymmetryReport> {
    let (v_plus, stack) = nested_expectation(driver, cp, sg, cfl_ratio)?;
    let (v_minus, _) = nested_expectation(driver, &cp.negated(), sg, cfl_ratio)?;
    let gap = (v_plus + v_minus).abs();

    let horizon = *cp.times().last().unwrap();
    let tg = path_grid_for(cp, horizon, path_steps)?;
    let bundle = sample_paths(
        driver,
        &VolatilityControl::Constant(driver.sigma_bar_sq()),
        tg,
        n_paths,
        seed,
    )?;
    let rs = extract_representation(&stack, cp, &bundle)?;
    let (eta_l1, _) = rs.eta_l1_mean_stderr();
    Ok(SymmetryReport {
        is_symmetric: gap <= tol,
        gap,
        eta_l1,
    })
}

/// A path time grid on [0, horizon] with at least `min_steps` steps that
/// places every payoff time on a node.
pub fn path_grid_for(cp: &CylinderPayoff, horizon: f64, min_steps: usize) -> Result<crate::grid::TimeGrid> {
    // steps per unit time, rounded up so each payoff time divides evenly
    let mut n = min_steps.max(cp.times().len());
    loop {
        let tg = crate::grid::TimeGrid::new(0.0, horizon, n)?;
        if check_alignment(tg, cp.times()).is_ok() {
            return Ok(tg);
        }
        n += 1;
        if n > 100 * min_steps + 10_000 {
            return Err(GmError::Alignment(
                "cannot align path grid with payoff times".into(),
            ));
        }
    }
}
