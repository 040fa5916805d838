//! The sublinear driver G(a) = ½(σ̄²a⁺ − σ_²a⁻), its perturbations
//! G_ε, Ḡ_ε, G^ε, and closed-form G-normal absolute moments.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{GmError, Result};

/// The driver of the G-heat equation, parameterized by its upper and
/// lower variances per unit time. Validated at construction; every
/// evaluation is total.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GDriver {
    sigma_bar_sq: f64,
    sigma_low_sq: f64,
}

impl GDriver {
    pub fn new(sigma_bar_sq: f64, sigma_low_sq: f64) -> Result<Self> {
        if !(sigma_low_sq.is_finite() && sigma_bar_sq.is_finite()) {
            return Err(GmError::InvalidDriver("variances must be finite".into()));
        }
        if !(0.0 < sigma_low_sq && sigma_low_sq <= sigma_bar_sq) {
            return Err(GmError::InvalidDriver(format!(
                "need 0 < sigma_low_sq <= sigma_bar_sq, got ({sigma_bar_sq}, {sigma_low_sq})"
            )));
        }
        Ok(Self {
            sigma_bar_sq,
            sigma_low_sq,
        })
    }

    pub fn sigma_bar_sq(&self) -> f64 {
        self.sigma_bar_sq
    }

    pub fn sigma_low_sq(&self) -> f64 {
        self.sigma_low_sq
    }

    /// G(a) = ½(σ̄²a⁺ − σ_²a⁻).
    pub fn g(&self, a: f64) -> f64 {
        0.5 * (self.sigma_bar_sq * a.max(0.0) + self.sigma_low_sq * a.min(0.0))
    }

    pub fn is_degenerate(&self) -> bool {
        self.sigma_bar_sq == self.sigma_low_sq
    }

    /// Absolute moment Ê[|aX|^p] of the G-normal distribution,
    /// i.e. the Gaussian absolute moment with variance σ² = 2G(a²):
    /// σ^p · 2^{p/2} · Γ((p+1)/2) / √π.
    pub fn gnormal_abs_moment(&self, a: f64, p: f64) -> Result<f64> {
        if !(p >= 1.0) {
            return Err(GmError::InvalidArgument(format!("need p >= 1, got {p}")));
        }
        let var = 2.0 * self.g(a * a);
        if var == 0.0 {
            return Ok(0.0);
        }
        let sigma = var.sqrt();
        Ok(sigma.powf(p) * 2f64.powf(p / 2.0) * gamma((p + 1.0) / 2.0)
            / std::f64::consts::PI.sqrt())
    }
}

/// G with its perturbation parameters attached:
/// G_ε(a) = G(a) − (ε/2)|a|, plus the floor/cap drivers Ḡ_ε and G^ε.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbedDriver {
    base: GDriver,
    epsilon: f64,
    lower_floor_sq: f64,
    upper_cap_sq: f64,
}

impl PerturbedDriver {
    pub fn new(
        base: GDriver,
        epsilon: f64,
        lower_floor_sq: f64,
        upper_cap_sq: f64,
    ) -> Result<Self> {
        let half_gap = (base.sigma_bar_sq - base.sigma_low_sq) / 2.0;
        if !(epsilon > 0.0 && epsilon <= half_gap) {
            return Err(GmError::InvalidPerturbation(format!(
                "need 0 < epsilon <= (sigma_bar_sq - sigma_low_sq)/2 = {half_gap}, got {epsilon}"
            )));
        }
        if !(lower_floor_sq > 0.0) {
            return Err(GmError::InvalidPerturbation(format!(
                "need lower_floor_sq > 0, got {lower_floor_sq}"
            )));
        }
        // the floor bounds a driver band only when that band exists;
        // otherwise Ḡ_ε is undefined and its accessors error
        if base.sigma_low_sq - epsilon > 0.0 && lower_floor_sq > base.sigma_low_sq - epsilon {
            return Err(GmError::InvalidPerturbation(format!(
                "need lower_floor_sq <= sigma_low_sq - epsilon = {}, got {lower_floor_sq}",
                base.sigma_low_sq - epsilon
            )));
        }
        if !(upper_cap_sq >= base.sigma_bar_sq + epsilon) {
            return Err(GmError::InvalidPerturbation(format!(
                "need upper_cap_sq >= sigma_bar_sq + epsilon = {}, got {upper_cap_sq}",
                base.sigma_bar_sq + epsilon
            )));
        }
        Ok(Self {
            base,
            epsilon,
            lower_floor_sq,
            upper_cap_sq,
        })
    }

    /// Default harness perturbation: ε = (σ̄² − σ_²)/4, floor σ_² − ε,
    /// cap σ̄² + ε. Requires a non-degenerate driver with σ_² > ε.
    pub fn default_for(base: GDriver) -> Result<Self> {
        let epsilon = (base.sigma_bar_sq - base.sigma_low_sq) / 4.0;
        if epsilon <= 0.0 {
            return Err(GmError::InvalidPerturbation(
                "degenerate driver admits no perturbation".into(),
            ));
        }
        let floor = if base.sigma_low_sq - epsilon > 0.0 {
            base.sigma_low_sq - epsilon
        } else {
            // lower band is empty; any positive placeholder keeps the
            // struct valid while Ḡ_ε queries error
            0.5 * base.sigma_low_sq
        };
        Self::new(base, epsilon, floor, base.sigma_bar_sq + epsilon)
    }

    pub fn base(&self) -> GDriver {
        self.base
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn lower_floor_sq(&self) -> f64 {
        self.lower_floor_sq
    }

    pub fn upper_cap_sq(&self) -> f64 {
        self.upper_cap_sq
    }

    /// G_ε(a) = G(a) − (ε/2)|a|.
    pub fn g_epsilon(&self, a: f64) -> f64 {
        self.base.g(a) - 0.5 * self.epsilon * a.abs()
    }

    /// G_ε is itself of driver form with variances (σ̄² − ε, σ_² + ε).
    pub fn epsilon_driver(&self) -> GDriver {
        GDriver::new(
            self.base.sigma_bar_sq - self.epsilon,
            self.base.sigma_low_sq + self.epsilon,
        )
        .expect("validated at construction")
    }

    /// Ḡ_ε(a) = ½[(σ_² − ε)a⁺ − σ_ε² a⁻]. Defined only when ε < σ_².
    pub fn g_bar_epsilon(&self, a: f64) -> Result<f64> {
        self.g_bar_epsilon_driver()?;
        Ok(0.5
            * ((self.base.sigma_low_sq - self.epsilon) * a.max(0.0)
                + self.lower_floor_sq * a.min(0.0)))
    }

    /// The variance band [σ_ε², σ_² − ε] of Ḡ_ε as a driver.
    pub fn g_bar_epsilon_driver(&self) -> Result<GDriver> {
        GDriver::new(self.base.sigma_low_sq - self.epsilon, self.lower_floor_sq).map_err(|_| {
            GmError::InvalidPerturbation(format!(
                "lower band empty: epsilon = {} >= sigma_low_sq = {}",
                self.epsilon, self.base.sigma_low_sq
            ))
        })
    }

    /// G^ε(a) = ½[σ̄_ε² a⁺ − (σ̄² + ε)a⁻].
    pub fn g_upper_epsilon(&self, a: f64) -> f64 {
        0.5 * (self.upper_cap_sq * a.max(0.0)
            + (self.base.sigma_bar_sq + self.epsilon) * a.min(0.0))
    }

    pub fn g_upper_epsilon_driver(&self) -> GDriver {
        GDriver::new(self.upper_cap_sq, self.base.sigma_bar_sq + self.epsilon)
            .expect("validated at construction")
    }
}
