//! Monotone explicit finite-difference solver for the G-heat equation
//! ∂_t V + G(V_xx) = 0 with terminal data, plus the interpolating
//! surface that exposes V, V_x and V_xx along paths.

use std::io::Write;

use crate::driver::GDriver;
use crate::error::{GmError, Result};
use crate::grid::{SpaceGrid, TimeGrid};

/// Discrete solution of the terminal-value problem: values plus the
/// stored first/second central difference quotients, layer by layer.
/// Immutable after construction; safe to share across path workers.
#[derive(Debug, Clone)]
pub struct ValueSurface {
    time_grid: TimeGrid,
    space_grid: SpaceGrid,
    values: Vec<Vec<f64>>,
    dx_values: Vec<Vec<f64>>,
    dxx_values: Vec<Vec<f64>>,
}

impl ValueSurface {
    pub fn time_grid(&self) -> TimeGrid {
        self.time_grid
    }

    pub fn space_grid(&self) -> SpaceGrid {
        self.space_grid
    }

    /// Raw value at (time layer k, space node j).
    pub fn value(&self, k: usize, j: usize) -> f64 {
        self.values[k][j]
    }

    pub fn layer(&self, k: usize) -> &[f64] {
        &self.values[k]
    }

    pub fn dxx_layer(&self, k: usize) -> &[f64] {
        &self.dxx_values[k]
    }

    /// Bilinear interpolation of (V, V_x, V_xx) at (t, x). The V_xx
    /// field is read no later than one layer before the terminal layer:
    /// the second derivative of merely Lipschitz terminal data blows up
    /// at the terminal time, and the representation is constructed as a
    /// limit over [t_start, t_end - delta].
    pub fn eval(&self, t: f64, x: f64) -> Result<(f64, f64, f64)> {
        if !(self.time_grid.contains(t) && self.space_grid.contains(x)) {
            return Err(GmError::OutOfHull { t, x });
        }
        let v = self.interp(&self.values, t, x);
        let vx = self.interp(&self.dx_values, t, x);
        let t_dxx = t.min(self.time_grid.t_end() - self.time_grid.dt());
        let vxx = self.interp(&self.dxx_values, t_dxx.max(self.time_grid.t_start()), x);
        Ok((v, vx, vxx))
    }

    fn interp(&self, field: &[Vec<f64>], t: f64, x: f64) -> f64 {
        let dt = self.time_grid.dt();
        let dx = self.space_grid.dx();
        let tf = ((t - self.time_grid.t_start()) / dt).clamp(0.0, self.time_grid.n_steps() as f64);
        let xf = ((x - self.space_grid.x_min()) / dx)
            .clamp(0.0, (self.space_grid.n_points() - 1) as f64);
        let k0 = (tf.floor() as usize).min(self.time_grid.n_steps() - 1);
        let j0 = (xf.floor() as usize).min(self.space_grid.n_points() - 2);
        let wt = tf - k0 as f64;
        let wx = xf - j0 as f64;
        let f00 = field[k0][j0];
        let f01 = field[k0][j0 + 1];
        let f10 = field[k0 + 1][j0];
        let f11 = field[k0 + 1][j0 + 1];
        (1.0 - wt) * ((1.0 - wx) * f00 + wx * f01) + wt * ((1.0 - wx) * f10 + wx * f11)
    }

    /// Max of |field| over all nodes of the stored V_xx quotients.
    pub fn max_abs_dxx(&self) -> f64 {
        self.dxx_values
            .iter()
            .flat_map(|l| l.iter())
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// CSV dump with header `t,x,v,vx,vxx`, row-major by time layer.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "t,x,v,vx,vxx")?;
        for k in 0..=self.time_grid.n_steps() {
            let t = self.time_grid.time(k);
            for j in 0..self.space_grid.n_points() {
                writeln!(
                    w,
                    "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                    t,
                    self.space_grid.node(j),
                    self.values[k][j],
                    self.dx_values[k][j],
                    self.dxx_values[k][j]
                )?;
            }
        }
        Ok(())
    }
}

fn difference_quotients(layer: &[f64], dx: f64) -> (Vec<f64>, Vec<f64>) {
    let n = layer.len();
    let mut d1 = vec![0.0; n];
    let mut d2 = vec![0.0; n];
    for j in 1..n - 1 {
        d1[j] = (layer[j + 1] - layer[j - 1]) / (2.0 * dx);
        // Difference of one-sided slopes keeps exact zeros on data that
        // is linear in floating point.
        d2[j] = ((layer[j + 1] - layer[j]) - (layer[j] - layer[j - 1])) / (dx * dx);
    }
    d1[0] = (layer[1] - layer[0]) / dx;
    d1[n - 1] = (layer[n - 1] - layer[n - 2]) / dx;
    // Boundary nodes: V treated as spatially linear beyond the domain.
    d2[0] = 0.0;
    d2[n - 1] = 0.0;
    (d1, d2)
}

/// Backward explicit sweep V(t−Δt) = V(t) + Δt·G(D²V(t)); monotone
/// under the CFL condition σ̄²Δt/Δx² ≤ 1.
pub fn solve_gheat(
    driver: GDriver,
    terminal: impl Fn(f64) -> f64,
    tg: TimeGrid,
    sg: SpaceGrid,
) -> Result<ValueSurface> {
    let dx = sg.dx();
    let dt = tg.dt();
    let ratio = driver.sigma_bar_sq() * dt / (dx * dx);
    if ratio > 1.0 + 1e-12 {
        return Err(GmError::CflViolation { ratio });
    }
    let n = sg.n_points();
    let n_steps = tg.n_steps();

    let mut values = vec![Vec::new(); n_steps + 1];
    let mut dx_values = vec![Vec::new(); n_steps + 1];
    let mut dxx_values = vec![Vec::new(); n_steps + 1];

    let mut layer: Vec<f64> = sg.nodes().map(|x| terminal(x)).collect();
    for (j, v) in layer.iter().enumerate() {
        if !v.is_finite() {
            return Err(GmError::NonFiniteTerminal { x: sg.node(j) });
        }
    }
    let (d1, d2) = difference_quotients(&layer, dx);
    values[n_steps] = layer.clone();
    dx_values[n_steps] = d1;
    dxx_values[n_steps] = d2;

    for k in (0..n_steps).rev() {
        let mut next = layer.clone();
        for j in 1..n - 1 {
            let d2j = ((layer[j + 1] - layer[j]) - (layer[j] - layer[j - 1])) / (dx * dx);
            next[j] = layer[j] + dt * driver.g(d2j);
        }
        // boundary second difference forced to zero: nodes carried over
        let (d1, d2) = difference_quotients(&next, dx);
        values[k] = next.clone();
        dx_values[k] = d1;
        dxx_values[k] = d2;
        layer = next;
    }

    Ok(ValueSurface {
        time_grid: tg,
        space_grid: sg,
        values,
        dx_values,
        dxx_values,
    })
}

/// One row of a refinement study: spacing, value at the space-time
/// origin of the sweep, and the change from the previous level.
#[derive(Debug, Clone, Copy)]
pub struct RefinementRow {
    pub dx: f64,
    pub value_at_origin: f64,
    pub change: f64,
}

/// Successive halvings of Δx (Δt re-derived from the CFL ratio),
/// reporting the value at (t_start, 0) per level.
pub fn refinement_study(
    driver: GDriver,
    terminal: impl Fn(f64) -> f64,
    tg: TimeGrid,
    sg: SpaceGrid,
    cfl_ratio: f64,
    levels: usize,
) -> Result<Vec<RefinementRow>> {
    if levels < 2 {
        return Err(GmError::InvalidArgument("need levels >= 2".into()));
    }
    let mut rows = Vec::with_capacity(levels);
    let mut grid = sg;
    let mut prev = f64::NAN;
    for level in 0..levels {
        let tgi = TimeGrid::for_cfl(
            tg.t_start(),
            tg.t_end(),
            grid.dx(),
            driver.sigma_bar_sq(),
            cfl_ratio,
        )?;
        let surface = solve_gheat(driver, &terminal, tgi, grid)?;
        let (v, _, _) = surface.eval(tg.t_start(), 0.0)?;
        rows.push(RefinementRow {
            dx: grid.dx(),
            value_at_origin: v,
            change: if level == 0 { f64::NAN } else { (v - prev).abs() },
        });
        prev = v;
        grid = grid.refined();
    }
    Ok(rows)
}
