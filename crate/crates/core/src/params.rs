//! Model parameters, their physical origin, and the admissible-set controls.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Dimensionless parameter triple `(eps, lambda, mu)`.
///
/// `eps` is the gap-to-length aspect ratio; `lambda` and `mu` weigh the
/// electrostatic load against the tension of the upper and lower membrane.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub eps: f64,
    pub lambda: f64,
    pub mu: f64,
}

impl Params {
    /// Builds a parameter triple. `eps = 0` is allowed here and rejected by
    /// the full-model entry points via [`Params::require_full_model`].
    pub fn new(eps: f64, lambda: f64, mu: f64) -> Result<Self> {
        let p = Params { eps, lambda, mu };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps.is_finite() && self.eps >= 0.0) {
            return Err(invalid("eps", format!("{} must be finite and >= 0", self.eps)));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(invalid("lambda", format!("{} must be finite and >= 0", self.lambda)));
        }
        if !(self.mu.is_finite() && self.mu >= 0.0) {
            return Err(invalid("mu", format!("{} must be finite and >= 0", self.mu)));
        }
        Ok(())
    }

    /// The full model needs a strictly positive aspect ratio.
    pub fn require_full_model(&self) -> Result<()> {
        self.validate()?;
        if self.eps <= 0.0 {
            return Err(invalid("eps", "the full model requires eps > 0"));
        }
        Ok(())
    }

    /// Parameters with `lambda` and `mu` exchanged.
    pub fn swapped(&self) -> Params {
        Params {
            eps: self.eps,
            lambda: self.mu,
            mu: self.lambda,
        }
    }
}

/// Dimensional description of the device (SI units).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhysicalParams {
    /// Membrane length ℓ [m].
    pub length_l: f64,
    /// Membrane width w [m].
    pub width_w: f64,
    /// Undeflected gap d [m].
    pub gap_d: f64,
    /// Source voltage V_s [V].
    pub voltage: f64,
    /// Tension of the upper membrane [N/m].
    pub tension1: f64,
    /// Tension of the lower membrane [N/m].
    pub tension2: f64,
    /// Relative permittivity of the gap medium.
    pub permittivity_rel: f64,
    /// Vacuum permittivity [F/m].
    pub permittivity_vac: f64,
}

/// Vacuum permittivity in F/m.
pub const VACUUM_PERMITTIVITY: f64 = 8.854_187_812_8e-12;

impl PhysicalParams {
    pub fn validate(&self) -> Result<()> {
        let fields: [(&'static str, f64); 8] = [
            ("length_l", self.length_l),
            ("width_w", self.width_w),
            ("gap_d", self.gap_d),
            ("voltage", self.voltage),
            ("tension1", self.tension1),
            ("tension2", self.tension2),
            ("permittivity_rel", self.permittivity_rel),
            ("permittivity_vac", self.permittivity_vac),
        ];
        for (name, value) in fields {
            if !(value.is_finite() && value > 0.0) {
                return Err(invalid(name, format!("{value} must be strictly positive")));
            }
        }
        Ok(())
    }

    /// Device aspect ratio ℓ / w.
    pub fn device_aspect(&self) -> f64 {
        self.length_l / self.width_w
    }
}

/// Nondimensionalization: `eps = 2d/ℓ`, `lambda = ε₀ε_r V² ℓ² / (8 T₁ d³)`
/// and `mu` likewise with `T₂`.
pub fn physical_to_dimensionless(p: &PhysicalParams) -> Result<Params> {
    p.validate()?;
    let eps = 2.0 * p.gap_d / p.length_l;
    let drive = p.permittivity_vac * p.permittivity_rel * p.voltage * p.voltage * p.length_l * p.length_l
        / (8.0 * p.gap_d.powi(3));
    Params::new(eps, drive / p.tension1, drive / p.tension2)
}

/// Admissible-set gap parameter and the numerical touchdown threshold.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapParams {
    pub kappa: f64,
    pub touchdown_gap: f64,
}

pub const DEFAULT_TOUCHDOWN_GAP: f64 = 1e-3;

impl Default for GapParams {
    fn default() -> Self {
        GapParams {
            kappa: 0.1,
            touchdown_gap: DEFAULT_TOUCHDOWN_GAP,
        }
    }
}

impl GapParams {
    pub fn new(kappa: f64, touchdown_gap: f64) -> Result<Self> {
        let g = GapParams { kappa, touchdown_gap };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.kappa > 0.0 && self.kappa < 0.5) {
            return Err(invalid("kappa", format!("{} must lie in (0, 1/2)", self.kappa)));
        }
        if !(self.touchdown_gap > 0.0 && self.touchdown_gap < 2.0 * self.kappa) {
            return Err(invalid(
                "touchdown_gap",
                format!("{} must lie in (0, 2 kappa)", self.touchdown_gap),
            ));
        }
        Ok(())
    }
}
