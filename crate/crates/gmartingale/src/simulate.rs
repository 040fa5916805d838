//! G-Brownian path simulation under adapted volatility controls, with
//! quadratic-variation accumulation and the sup-over-controls Monte
//! Carlo estimator of E_G.

use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::driver::GDriver;
use crate::error::{GmError, Result};
use crate::grid::TimeGrid;
use crate::nested::SurfaceStack;
use crate::payoff::CylinderPayoff;
use crate::rng::normal_draw;

/// One scenario measure from the (finite) control family: an adapted
/// volatility process with values in [σ_², σ̄²].
#[derive(Clone)]
pub enum VolatilityControl {
    Constant(f64),
    /// Right-continuous step schedule of (time, σ²) breakpoints,
    /// strictly increasing in time, first breakpoint at the start.
    Piecewise(Vec<(f64, f64)>),
    /// Explicit σ² per time step (used by bang-bang constructions).
    PerStep(Vec<f64>),
    /// σ² = σ̄² where the interpolated V_xx of the reference surface
    /// stack is ≥ 0, else σ_²: the designated near-optimizer.
    Feedback(Arc<SurfaceStack>),
}

impl std::fmt::Debug for VolatilityControl {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.label())
    }
}

impl VolatilityControl {
    pub fn label(&self) -> String {
        match self {
            Self::Constant(v) => format!("constant({v})"),
            Self::Piecewise(bps) => format!("piecewise({} breakpoints)", bps.len()),
            Self::PerStep(_) => "per-step".into(),
            Self::Feedback(_) => "feedback".into(),
        }
    }

    pub fn validate(&self, driver: GDriver, tg: TimeGrid) -> Result<()> {
        let in_band = |v: f64| driver.sigma_low_sq() <= v && v <= driver.sigma_bar_sq();
        match self {
            Self::Constant(v) => {
                if !in_band(*v) {
                    return Err(GmError::InvalidControl(format!(
                        "constant sigma_sq {v} outside [{}, {}]",
                        driver.sigma_low_sq(),
                        driver.sigma_bar_sq()
                    )));
                }
            }
            Self::Piecewise(bps) => {
                if bps.is_empty() || bps[0].0 > tg.t_start() {
                    return Err(GmError::InvalidControl(
                        "piecewise schedule must start at or before t_start".into(),
                    ));
                }
                if !bps.windows(2).all(|w| w[0].0 < w[1].0) {
                    return Err(GmError::InvalidControl(
                        "piecewise breakpoints must be strictly increasing".into(),
                    ));
                }
                if let Some((t, v)) = bps.iter().find(|(_, v)| !in_band(*v)) {
                    return Err(GmError::InvalidControl(format!(
                        "sigma_sq {v} at breakpoint {t} outside the band"
                    )));
                }
            }
            Self::PerStep(vals) => {
                if vals.len() != tg.n_steps() {
                    return Err(GmError::InvalidControl(format!(
                        "per-step control has {} values for {} steps",
                        vals.len(),
                        tg.n_steps()
                    )));
                }
                if let Some(v) = vals.iter().find(|v| !in_band(**v)) {
                    return Err(GmError::InvalidControl(format!(
                        "per-step sigma_sq {v} outside the band"
                    )));
                }
            }
            Self::Feedback(_) => {}
        }
        Ok(())
    }

    /// σ² at step `k` for a path currently at B = `b` with the given
    /// realized payoff-time increments.
    fn sigma_sq(
        &self,
        driver: GDriver,
        tg: TimeGrid,
        k: usize,
        b: f64,
        increments: &[f64],
    ) -> f64 {
        match self {
            Self::Constant(v) => *v,
            Self::Piecewise(bps) => {
                let t = tg.time(k);
                let mut v = bps[0].1;
                for (bt, bv) in bps {
                    if *bt <= t {
                        v = *bv;
                    } else {
                        break;
                    }
                }
                v
            }
            Self::PerStep(vals) => vals[k],
            Self::Feedback(stack) => match stack.eval_along(tg.time(k), b, increments) {
                Ok((_, _, vxx)) if vxx < 0.0 => driver.sigma_low_sq(),
                // out of hull: the convex tail regime, take σ̄²
                _ => driver.sigma_bar_sq(),
            },
        }
    }
}

/// Simulated paths with their quadratic variation. `b` and `qv` have
/// n_steps + 1 entries per path; `db` and `dqv` hold the per-step
/// increments ΔB and σ²Δt as generated, so telescoping sums and the
/// sandwich bounds hold exactly in floating point.
#[derive(Debug, Clone)]
pub struct PathBundle {
    pub time_grid: TimeGrid,
    pub b: Vec<Vec<f64>>,
    pub db: Vec<Vec<f64>>,
    pub qv: Vec<Vec<f64>>,
    pub dqv: Vec<Vec<f64>>,
    pub seed: u64,
    pub control_label: String,
    /// Payoff time points the feedback control tracked, if any.
    pub payoff_times: Vec<f64>,
}

impl PathBundle {
    pub fn n_paths(&self) -> usize {
        self.b.len()
    }

    /// Realized increments of B between consecutive payoff times
    /// (nearest grid nodes).
    pub fn increments(&self, path: usize, times: &[f64]) -> Vec<f64> {
        let mut prev = 0.0;
        let mut out = Vec::with_capacity(times.len());
        for &t in times {
            let k = self.time_grid.nearest_index(t);
            let bt = self.b[path][k];
            out.push(bt - prev);
            prev = bt;
        }
        out
    }

    /// CSV dump `path_id,t,B,QV`.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "path_id,t,B,QV")?;
        for p in 0..self.n_paths() {
            for k in 0..=self.time_grid.n_steps() {
                writeln!(
                    w,
                    "{},{:.16e},{:.16e},{:.16e}",
                    p,
                    self.time_grid.time(k),
                    self.b[p][k],
                    self.qv[p][k]
                )?;
            }
        }
        Ok(())
    }
}

/// Simulate `n_paths` G-Brownian paths: ΔB = σ√Δt·ξ with ξ drawn from
/// the counter stream keyed by (seed, path, step). Identical inputs
/// reproduce bit-identical bundles regardless of worker count.
pub fn sample_paths(
    driver: GDriver,
    control: &VolatilityControl,
    tg: TimeGrid,
    n_paths: usize,
    seed: u64,
) -> Result<PathBundle> {
    if n_paths == 0 {
        return Err(GmError::InvalidArgument("n_paths must be positive".into()));
    }
    control.validate(driver, tg)?;
    let dt = tg.dt();
    let sqrt_dt = dt.sqrt();
    let n_steps = tg.n_steps();
    let payoff_times: Vec<f64> = match control {
        VolatilityControl::Feedback(stack) => stack.times.clone(),
        _ => Vec::new(),
    };

    let rows: Vec<(Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>)> = (0..n_paths)
        .into_par_iter()
        .map(|p| {
            let mut b = Vec::with_capacity(n_steps + 1);
            let mut db = Vec::with_capacity(n_steps);
            let mut qv = Vec::with_capacity(n_steps + 1);
            let mut dqv = Vec::with_capacity(n_steps);
            b.push(0.0);
            qv.push(0.0);
            let mut increments: Vec<f64> = Vec::with_capacity(payoff_times.len());
            let mut prev_mark = 0.0;
            let mut next_time = 0usize;
            for k in 0..n_steps {
                if next_time < payoff_times.len() {
                    let mark = tg.nearest_index(payoff_times[next_time]);
                    if k == mark {
                        increments.push(b[k] - prev_mark);
                        prev_mark = b[k];
                        next_time += 1;
                    }
                }
                let sig_sq = control.sigma_sq(driver, tg, k, b[k], &increments);
                let xi = normal_draw(seed, p as u64, k as u64);
                let step_qv = sig_sq * dt;
                let step_db = sig_sq.sqrt() * sqrt_dt * xi;
                b.push(b[k] + step_db);
                db.push(step_db);
                dqv.push(step_qv);
                qv.push(qv[k] + step_qv);
            }
            (b, db, qv, dqv)
        })
        .collect();

    let mut b = Vec::with_capacity(n_paths);
    let mut db = Vec::with_capacity(n_paths);
    let mut qv = Vec::with_capacity(n_paths);
    let mut dqv = Vec::with_capacity(n_paths);
    for (bi, dbi, qi, di) in rows {
        b.push(bi);
        db.push(dbi);
        qv.push(qi);
        dqv.push(di);
    }
    Ok(PathBundle {
        time_grid: tg,
        b,
        db,
        qv,
        dqv,
        seed,
        control_label: control.label(),
        payoff_times,
    })
}

/// Per-control sample statistics of the Monte Carlo estimator.
#[derive(Debug, Clone, Serialize)]
pub struct ControlStats {
    pub control: String,
    pub mean: f64,
    pub stderr: f64,
    pub n_paths: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct McExpectation {
    pub estimate: f64,
    pub argmax: usize,
    pub per_control: Vec<ControlStats>,
}

pub fn mean_stderr(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    if samples.len() < 2 {
        return (mean, 0.0);
    }
    let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Statistically-noisy lower bound of E_G[ξ]: the max over the control
/// family of the per-control sample mean (common random numbers).
pub fn mc_expectation(
    driver: GDriver,
    cp: &CylinderPayoff,
    controls: &[VolatilityControl],
    tg: TimeGrid,
    n_paths: usize,
    seed: u64,
) -> Result<McExpectation> {
    if controls.is_empty() {
        return Err(GmError::InvalidControl("empty control family".into()));
    }
    check_alignment(tg, cp.times())?;
    let mut per_control = Vec::with_capacity(controls.len());
    for control in controls {
        let bundle = sample_paths(driver, control, tg, n_paths, seed)?;
        let samples: Vec<f64> = (0..n_paths)
            .map(|p| cp.expr().eval(&bundle.increments(p, cp.times())))
            .collect::<Result<Vec<f64>>>()?;
        let (mean, stderr) = mean_stderr(&samples);
        per_control.push(ControlStats {
            control: control.label(),
            mean,
            stderr,
            n_paths,
            seed,
        });
    }
    let argmax = per_control
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.mean.total_cmp(&b.1.mean))
        .map(|(i, _)| i)
        .unwrap();
    Ok(McExpectation {
        estimate: per_control[argmax].mean,
        argmax,
        per_control,
    })
}

/// Every payoff time must sit on a grid node.
pub fn check_alignment(tg: TimeGrid, times: &[f64]) -> Result<()> {
    for &t in times {
        let k = tg.nearest_index(t);
        if (tg.time(k) - t).abs() > 1e-9 * tg.dt().max(1.0) {
            return Err(GmError::Alignment(format!(
                "payoff time {t} is not a node of the path grid (nearest {})",
                tg.time(k)
            )));
        }
    }
    Ok(())
}

/// Left-endpoint Riemann sums (∫|ζ|ds, ∫|ζ|d⟨B⟩) per path for a
/// per-step integrand shared across paths.
pub fn qv_functionals(bundle: &PathBundle, zeta: &[f64]) -> Result<Vec<(f64, f64)>> {
    if zeta.len() != bundle.time_grid.n_steps() {
        return Err(GmError::Alignment(format!(
            "integrand has {} values for {} steps",
            zeta.len(),
            bundle.time_grid.n_steps()
        )));
    }
    let dt = bundle.time_grid.dt();
    Ok((0..bundle.n_paths())
        .map(|p| {
            let mut ds = 0.0;
            let mut dqv = 0.0;
            for (k, z) in zeta.iter().enumerate() {
                ds += z.abs() * dt;
                dqv += z.abs() * bundle.dqv[p][k];
            }
            (ds, dqv)
        })
        .collect())
}

/// Default scenario family: the two extreme constants, `n_piecewise`
/// seeded random two-band schedules, and (when a reference stack is
/// given) the feedback near-optimizer.
pub fn default_control_family(
    driver: GDriver,
    tg: TimeGrid,
    n_piecewise: usize,
    seed: u64,
    stack: Option<Arc<SurfaceStack>>,
) -> Vec<VolatilityControl> {
    let mut family = vec![
        VolatilityControl::Constant(driver.sigma_low_sq()),
        VolatilityControl::Constant(driver.sigma_bar_sq()),
    ];
    let span = tg.t_end() - tg.t_start();
    for i in 0..n_piecewise {
        let u1 = crate::rng::uniform_draw(seed, 0xC0FFEE, i as u64);
        let u2 = crate::rng::uniform_draw(seed, 0xC0FFEE + 1, i as u64);
        let u3 = crate::rng::uniform_draw(seed, 0xC0FFEE + 2, i as u64);
        let band = driver.sigma_bar_sq() - driver.sigma_low_sq();
        family.push(VolatilityControl::Piecewise(vec![
            (tg.t_start(), driver.sigma_low_sq() + u2 * band),
            (tg.t_start() + u1 * span, driver.sigma_low_sq() + u3 * band),
        ]));
    }
    if let Some(stack) = stack {
        family.push(VolatilityControl::Feedback(stack));
    }
    family
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::TimeGrid;

    fn driver() -> GDriver {
        GDriver::new(4.0, 1.0).unwrap()
    }

    fn tg() -> TimeGrid {
        TimeGrid::new(0.0, 1.0, 200).unwrap()
    }

    #[test]
    fn constant_control_brownian_scaling() {
        let bundle = sample_paths(
            driver(),
            &VolatilityControl::Constant(4.0),
            tg(),
            4000,
            7,
        )
        .unwrap();
        let samples: Vec<f64> = (0..bundle.n_paths())
            .map(|p| {
                let bt = bundle.b[p][200];
                bt * bt
            })
            .collect();
        let (mean, stderr) = mean_stderr(&samples);
        assert!((mean - 4.0).abs() < 3.0 * stderr, "mean {mean} se {stderr}");
    }

    #[test]
    fn qv_step_bounds_hold_exactly() {
        let controls = [
            VolatilityControl::Constant(2.5),
            VolatilityControl::Piecewise(vec![(0.0, 1.0), (0.3, 4.0), (0.7, 2.0)]),
        ];
        let dt = tg().dt();
        let lo = 1.0 * dt;
        let hi = 4.0 * dt;
        for c in &controls {
            let bundle = sample_paths(driver(), c, tg(), 50, 3).unwrap();
            for p in 0..50 {
                for k in 0..200 {
                    assert!(bundle.dqv[p][k] >= lo && bundle.dqv[p][k] <= hi);
                }
                // qv nondecreasing, B starts at zero
                assert_eq!(bundle.b[p][0], 0.0);
                assert!(bundle.qv[p].windows(2).all(|w| w[0] <= w[1]));
            }
        }
    }

    #[test]
    fn same_seed_reproduces_bitwise() {
        let c = VolatilityControl::Constant(2.0);
        let b1 = sample_paths(driver(), &c, tg(), 20, 99).unwrap();
        let b2 = sample_paths(driver(), &c, tg(), 20, 99).unwrap();
        assert_eq!(b1.b, b2.b);
        assert_eq!(b1.qv, b2.qv);
    }

    #[test]
    fn invalid_controls_rejected() {
        assert!(sample_paths(driver(), &VolatilityControl::Constant(5.0), tg(), 1, 0).is_err());
        assert!(sample_paths(driver(), &VolatilityControl::Constant(2.0), tg(), 0, 0).is_err());
        let bad = VolatilityControl::Piecewise(vec![(0.0, 2.0), (0.0, 3.0)]);
        assert!(sample_paths(driver(), &bad, tg(), 1, 0).is_err());
    }

    #[test]
    fn qv_functionals_constant_integrand() {
        let bundle =
            sample_paths(driver(), &VolatilityControl::Constant(2.0), tg(), 3, 1).unwrap();
        let ones = vec![1.0; 200];
        for (ds, dqv) in qv_functionals(&bundle, &ones).unwrap() {
            assert!((ds - 1.0).abs() < 1e-12);
            assert!((dqv - 2.0).abs() < 1e-12);
        }
        let zeros = vec![0.0; 200];
        for (ds, dqv) in qv_functionals(&bundle, &zeros).unwrap() {
            assert_eq!((ds, dqv), (0.0, 0.0));
        }
    }

    #[test]
    fn mc_quadratic_takes_upper_control() {
        let payoff = CylinderPayoff::new(
            vec![1.0],
            crate::payoff::parse_payoff("b1*b1").unwrap(),
            1.0,
        )
        .unwrap();
        let controls = [
            VolatilityControl::Constant(1.0),
            VolatilityControl::Constant(4.0),
        ];
        let out = mc_expectation(driver(), &payoff, &controls, tg(), 4000, 11).unwrap();
        assert_eq!(out.argmax, 1);
        let s = &out.per_control[1];
        assert!((s.mean - 4.0).abs() < 3.0 * s.stderr);
        // monotone in the control set: adding controls never lowers it
        let smaller = mc_expectation(driver(), &payoff, &controls[..1], tg(), 4000, 11).unwrap();
        assert!(out.estimate >= smaller.estimate);
    }

    #[test]
    fn mc_concave_takes_lower_control() {
        let payoff = CylinderPayoff::new(
            vec![1.0],
            crate::payoff::parse_payoff("-(b1*b1)").unwrap(),
            1.0,
        )
        .unwrap();
        let controls = [
            VolatilityControl::Constant(1.0),
            VolatilityControl::Constant(4.0),
        ];
        let out = mc_expectation(driver(), &payoff, &controls, tg(), 4000, 11).unwrap();
        assert_eq!(out.argmax, 0);
        let s = &out.per_control[0];
        assert!((s.mean + 1.0).abs() < 3.0 * s.stderr);
    }

    #[test]
    fn misaligned_payoff_time_rejected() {
        let payoff = CylinderPayoff::new(
            vec![0.7777],
            crate::payoff::parse_payoff("b1").unwrap(),
            1.0,
        )
        .unwrap();
        let controls = [VolatilityControl::Constant(1.0)];
        assert!(mc_expectation(driver(), &payoff, &controls, tg(), 10, 0).is_err());
    }
}
