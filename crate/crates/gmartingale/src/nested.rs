//! E_G of cylinder payoffs by the nested backward PDE recursion: on the
//! last interval, one G-heat solve per node of the parameter grid of
//! realized earlier increments; the continuation map y ↦ V^y(t_i, 0)
//! becomes the terminal data of the previous interval.

use rayon::prelude::*;

use crate::driver::GDriver;
use crate::error::{GmError, Result};
use crate::grid::{SpaceGrid, TimeGrid};
use crate::heat::{solve_gheat, ValueSurface};
use crate::payoff::CylinderPayoff;

/// Hard cap on the nesting depth: the parameter sweep costs
/// (grid size)^(i-1) solves on interval i.
pub const MAX_NESTING: usize = 4;

/// Surfaces of one interval [t_{i-1}, t_i], one slice per node tuple of
/// the realized earlier increments (row-major over the shared grid).
#[derive(Debug, Clone)]
pub struct IntervalSurfaces {
    pub t_start: f64,
    pub t_end: f64,
    /// Number of earlier increments parameterizing this interval.
    pub n_params: usize,
    pub slices: Vec<ValueSurface>,
}

impl IntervalSurfaces {
    /// Row-major slice index for a tuple of parameter node indices.
    pub fn slice_index(&self, nodes: &[usize], n_points: usize) -> usize {
        debug_assert_eq!(nodes.len(), self.n_params);
        nodes.iter().fold(0, |acc, &j| acc * n_points + j)
    }

    pub fn slice(&self, nodes: &[usize], n_points: usize) -> &ValueSurface {
        &self.slices[self.slice_index(nodes, n_points)]
    }
}

/// The full stack produced by one nested solve. Interval i covers
/// [t_{i-1}, t_i] (t_0 = 0) in the payoff's increment variables; all
/// intervals share one space grid, which doubles as the parameter grid.
#[derive(Debug, Clone)]
pub struct SurfaceStack {
    pub intervals: Vec<IntervalSurfaces>,
    pub space_grid: SpaceGrid,
    pub times: Vec<f64>,
    pub driver: GDriver,
}

impl SurfaceStack {
    /// E_G[ξ] = V(0, 0) of the first interval.
    pub fn value(&self) -> Result<f64> {
        let first = &self.intervals[0];
        let (v, _, _) = first.slices[0].eval(first.t_start, 0.0)?;
        Ok(v)
    }

    /// Index of the interval active at time `t` (left-closed).
    pub fn interval_at(&self, t: f64) -> usize {
        let mut i = 0;
        while i + 1 < self.intervals.len() && t >= self.intervals[i].t_end {
            i += 1;
        }
        i
    }

    /// (V, V_x, V_xx) along a path: at time `t` with current value `b`
    /// and the payoff-time increments realized so far. The active
    /// interval's surface is evaluated at the running increment
    /// x = B_t − B_{t_{i-1}}, on the parameter slice nearest to the
    /// realized earlier increments.
    pub fn eval_along(&self, t: f64, b: f64, increments: &[f64]) -> Result<(f64, f64, f64)> {
        let i = self.interval_at(t);
        let interval = &self.intervals[i];
        if increments.len() < interval.n_params {
            return Err(GmError::Alignment(format!(
                "interval {i} needs {} realized increments, got {}",
                interval.n_params,
                increments.len()
            )));
        }
        let nx = self.space_grid.n_points();
        let nodes: Vec<usize> = increments[..interval.n_params]
            .iter()
            .map(|&y| self.space_grid.nearest_index(y))
            .collect();
        let x = b - increments[..interval.n_params].iter().sum::<f64>();
        interval.slice(&nodes, nx).eval(t, x)
    }
}

/// Linear interpolation with linear extrapolation outside the hull:
/// continuation maps are Lipschitz, matching the boundary scheme.
fn interp_extrapolate(grid: &SpaceGrid, values: &[f64], x: f64) -> f64 {
    let n = grid.n_points();
    let dx = grid.dx();
    let f = (x - grid.x_min()) / dx;
    let j0 = (f.floor().max(0.0) as usize).min(n - 2);
    let w = f - j0 as f64;
    values[j0] + w * (values[j0 + 1] - values[j0])
}

struct NestedSolver<'a> {
    driver: GDriver,
    cp: &'a CylinderPayoff,
    sg: SpaceGrid,
    cfl_ratio: f64,
}

impl NestedSolver<'_> {
    /// Solve all intervals backward; returns the stack front-to-back.
    fn run(&self) -> Result<Vec<IntervalSurfaces>> {
        let times = self.cp.times();
        let n = times.len();
        let nx = self.sg.n_points();

        // Continuation values V^{tuple}(t_start, 0), one entry per
        // parameter tuple of the interval just solved (row-major).
        let mut continuation: Option<Vec<f64>> = None;
        let mut intervals_rev: Vec<IntervalSurfaces> = Vec::with_capacity(n);

        for i in (0..n).rev() {
            let t_start = if i == 0 { 0.0 } else { times[i - 1] };
            let t_end = times[i];
            let tg = TimeGrid::for_cfl(
                t_start,
                t_end,
                self.sg.dx(),
                self.driver.sigma_bar_sq(),
                self.cfl_ratio,
            )?;

            let n_tuples = nx.pow(i as u32);
            let slices: Vec<ValueSurface> = (0..n_tuples)
                .into_par_iter()
                .map(|tuple| -> Result<ValueSurface> {
                    let params = decode_tuple(tuple, i, nx);
                    let terminal: Vec<f64> = match &continuation {
                        None => {
                            let mut incs: Vec<f64> =
                                params.iter().map(|&j| self.sg.node(j)).collect();
                            incs.push(0.0);
                            self.sg
                                .nodes()
                                .map(|x| {
                                    *incs.last_mut().unwrap() = x;
                                    self.cp.expr().eval(&incs)
                                })
                                .collect::<Result<Vec<f64>>>()?
                        }
                        Some(cont) => {
                            // Terminal in x is the continuation with x as
                            // the next parameter: tuples extending `params`.
                            (0..nx).map(|j| cont[tuple * nx + j]).collect()
                        }
                    };
                    solve_gheat(
                        self.driver,
                        |x| terminal[self.sg.nearest_index(x)],
                        tg,
                        self.sg,
                    )
                })
                .collect::<Result<Vec<_>>>()?;

            // Continuation for the previous interval: V^{params}(t_start, 0)
            // as a function of the last parameter.
            if i > 0 {
                let cont: Vec<f64> = slices
                    .iter()
                    .map(|s| interp_extrapolate(&self.sg, s.layer(0), 0.0))
                    .collect();
                continuation = Some(cont);
            }

            intervals_rev.push(IntervalSurfaces {
                t_start,
                t_end,
                n_params: i,
                slices,
            });
        }

        intervals_rev.reverse();
        Ok(intervals_rev)
    }
}

fn decode_tuple(mut tuple: usize, len: usize, nx: usize) -> Vec<usize> {
    let mut nodes = vec![0usize; len];
    for k in (0..len).rev() {
        nodes[k] = tuple % nx;
        tuple /= nx;
    }
    nodes
}

/// Compute E_G[ξ] for a cylinder payoff together with the per-interval
/// surface stack used for representation extraction.
pub fn nested_expectation(
    driver: GDriver,
    cp: &CylinderPayoff,
    sg: SpaceGrid,
    cfl_ratio: f64,
) -> Result<(f64, SurfaceStack)> {
    let n = cp.times().len();
    if n > MAX_NESTING {
        return Err(GmError::InvalidPayoff(format!(
            "nesting depth {n} exceeds the cap {MAX_NESTING}"
        )));
    }
    if cp.times()[0] <= 0.0 {
        return Err(GmError::InvalidPayoff(
            "first time point must be positive".into(),
        ));
    }
    let solver = NestedSolver {
        driver,
        cp,
        sg,
        cfl_ratio,
    };
    let intervals = solver.run()?;
    let stack = SurfaceStack {
        intervals,
        space_grid: sg,
        times: cp.times().to_vec(),
        driver,
    };
    let value = stack.value()?;
    Ok((value, stack))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::payoff::parse_payoff;
    use approx::assert_relative_eq;

    fn cp(expr: &str, times: &[f64]) -> CylinderPayoff {
        let horizon = *times.last().unwrap();
        CylinderPayoff::new(times.to_vec(), parse_payoff(expr).unwrap(), horizon).unwrap()
    }

    fn driver() -> GDriver {
        GDriver::new(4.0, 1.0).unwrap()
    }

    #[test]
    fn single_time_linear_is_zero() {
        let sg = SpaceGrid::new(-12.0, 12.0, 121).unwrap();
        let (v, _) = nested_expectation(driver(), &cp("b1", &[1.0]), sg, 0.5).unwrap();
        assert!(v.abs() < 1e-10, "{v}");
    }

    #[test]
    fn single_time_quadratic_takes_upper_variance() {
        let sg = SpaceGrid::new(-20.0, 20.0, 401).unwrap();
        let (v, _) = nested_expectation(driver(), &cp("b1*b1", &[1.0]), sg, 0.5).unwrap();
        assert_relative_eq!(v, 4.0, max_relative = 1e-5);
    }

    #[test]
    fn two_time_separable_sums() {
        // E[|B_1|] + E[(B_2 - B_1)^2] = sigma_bar*sqrt(2/pi) + sigma_bar^2.
        let sg = SpaceGrid::new(-16.0, 16.0, 161).unwrap();
        let (v, _) =
            nested_expectation(driver(), &cp("abs(b1) + b2*b2", &[1.0, 2.0]), sg, 0.5).unwrap();
        let expected = 2.0 * (2.0 / std::f64::consts::PI).sqrt() + 4.0;
        assert_relative_eq!(v, expected, max_relative = 2e-3);
    }

    #[test]
    fn two_time_linear_is_zero() {
        let sg = SpaceGrid::new(-12.0, 12.0, 81).unwrap();
        let (v, _) = nested_expectation(driver(), &cp("b1 + 2*b2", &[0.5, 1.0]), sg, 0.5).unwrap();
        assert!(v.abs() < 1e-8, "{v}");
    }

    #[test]
    fn three_time_constant_passthrough() {
        let sg = SpaceGrid::new(-6.0, 6.0, 31).unwrap();
        let (v, stack) =
            nested_expectation(driver(), &cp("3", &[0.25, 0.5, 0.75]), sg, 0.5).unwrap();
        assert_eq!(v, 3.0);
        assert_eq!(stack.intervals.len(), 3);
        assert_eq!(stack.intervals[2].slices.len(), 31 * 31);
    }

    #[test]
    fn three_time_additive_quadratics() {
        // E[sum of increment squares] over [0,.25],[.25,.5],[.5,.75]
        // with convex payoff: 4 * 0.25 per increment.
        let sg = SpaceGrid::new(-4.0, 4.0, 81).unwrap();
        let (v, _) = nested_expectation(
            driver(),
            &cp("b1*b1 + b2*b2 + b3*b3", &[0.25, 0.5, 0.75]),
            sg,
            0.5,
        )
        .unwrap();
        assert_relative_eq!(v, 3.0, max_relative = 5e-3);
    }

    #[test]
    fn nesting_cap_enforced() {
        let sg = SpaceGrid::new(-4.0, 4.0, 11).unwrap();
        let payoff = cp("b1+b2+b3+b4+b5", &[0.1, 0.2, 0.3, 0.4, 0.5]);
        assert!(nested_expectation(driver(), &payoff, sg, 0.5).is_err());
    }

    #[test]
    fn interval_lookup() {
        let sg = SpaceGrid::new(-12.0, 12.0, 61).unwrap();
        let (_, stack) =
            nested_expectation(driver(), &cp("b1 + b2", &[1.0, 2.0]), sg, 0.5).unwrap();
        assert_eq!(stack.interval_at(0.0), 0);
        assert_eq!(stack.interval_at(0.99), 0);
        assert_eq!(stack.interval_at(1.0), 1);
        assert_eq!(stack.interval_at(2.0), 1);
    }
}
