//! Precipitation rate, dissolution rate selection and the surface ODE.
//!
//! The precipitate obeys ∂ₜv = k (r(u) − w) with w ∈ H(v). With u frozen over a
//! step the right-hand side is piecewise constant in v, so the step is solved in
//! closed form including the event "v reaches 0".

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Precipitation rate r(u) = k-independent law `([u − u_*]₊ / (u^* − u_*))^p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateLaw {
    /// u_*: r vanishes for u ≤ u_*.
    pub onset: f64,
    /// u^*: r(u^*) = 1.
    pub solubility: f64,
    /// p ≥ 1.
    pub exponent: f64,
    /// Rate constant k.
    pub k: f64,
}

impl Default for RateLaw {
    fn default() -> Self {
        Self {
            onset: 0.0,
            solubility: 1.0,
            exponent: 2.0,
            k: 1.0,
        }
    }
}

impl RateLaw {
    pub fn new(onset: f64, solubility: f64, exponent: f64, k: f64) -> Result<Self> {
        let law = Self {
            onset,
            solubility,
            exponent,
            k,
        };
        law.validate()?;
        Ok(law)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.onset.is_finite() && self.onset >= 0.0) {
            return Err(Error::Parameter(format!(
                "onset u_* must be finite and >= 0, got {}",
                self.onset
            )));
        }
        if !(self.solubility.is_finite() && self.solubility > self.onset) {
            return Err(Error::Parameter(format!(
                "solubility u^* = {} must exceed onset u_* = {}",
                self.solubility, self.onset
            )));
        }
        if !(self.exponent.is_finite() && self.exponent >= 1.0) {
            return Err(Error::Parameter(format!(
                "exponent p must be >= 1, got {}",
                self.exponent
            )));
        }
        if !(self.k.is_finite() && self.k > 0.0) {
            return Err(Error::Parameter(format!("rate constant k must be > 0, got {}", self.k)));
        }
        Ok(())
    }

    /// r(u)
    pub fn rate(&self, u: f64) -> f64 {
        let x = (u - self.onset).max(0.0) / (self.solubility - self.onset);
        x.powf(self.exponent)
    }

    /// r'(u); the one-sided right derivative at the onset.
    pub fn derivative(&self, u: f64) -> f64 {
        let span = self.solubility - self.onset;
        let x = (u - self.onset) / span;
        if x < 0.0 {
            return 0.0;
        }
        if self.exponent == 1.0 {
            return 1.0 / span;
        }
        self.exponent * x.powf(self.exponent - 1.0) / span
    }

    /// Lipschitz constant L_r of r on [0, m].
    pub fn lipschitz_on(&self, m: f64) -> f64 {
        self.derivative(m.max(self.onset))
    }
}

/// How the dissolution rate w is resolved.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub enum Resolution {
    /// The explicit selection from the Heaviside graph.
    #[default]
    Exact,
    /// w = H_δ(v), the linear ramp of width δ.
    Regularized { delta: f64 },
}

impl Resolution {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Resolution::Exact => Ok(()),
            Resolution::Regularized { delta } if delta > 0.0 && delta.is_finite() => Ok(()),
            Resolution::Regularized { delta } => Err(Error::Parameter(format!(
                "regularization width delta must be > 0, got {delta}"
            ))),
        }
    }

    /// Instantaneous w for the state (u, v).
    pub fn rate(&self, law: &RateLaw, u: f64, v: f64) -> f64 {
        match *self {
            Resolution::Exact => dissolution_rate(law, u, v),
            Resolution::Regularized { delta } => ramp(delta, v),
        }
    }

    /// Advances v over `dt` with u frozen.
    pub fn step(&self, law: &RateLaw, u: f64, v: f64, dt: f64) -> Result<OdeStep> {
        match *self {
            Resolution::Exact => ode_step(law, u, v, dt),
            Resolution::Regularized { delta } => regularized_ode_step(law, delta, u, v, dt),
        }
    }

    /// ∂v_new/∂u of [`Resolution::step`], used as the Newton slope.
    pub fn step_slope(&self, law: &RateLaw, u: f64, v: f64, dt: f64) -> f64 {
        match *self {
            Resolution::Exact => {
                if v + law.k * dt * (law.rate(u) - 1.0) > 0.0 {
                    law.k * dt * law.derivative(u)
                } else {
                    0.0
                }
            }
            Resolution::Regularized { delta } => {
                let r = law.rate(u);
                let dr = 1e-7 * r.abs().max(1.0);
                let plus = regularized_final(law.k, delta, r + dr, v, dt);
                let minus = regularized_final(law.k, delta, (r - dr).max(0.0), v, dt);
                let slope_r = (plus - minus) / (r + dr - (r - dr).max(0.0));
                slope_r.max(0.0) * law.derivative(u)
            }
        }
    }
}

/// r(u) for the given law.
pub fn precip_rate(law: &RateLaw, u: f64) -> f64 {
    law.rate(u)
}

/// The single-valued selection w ∈ H(v):
/// 0 for v < 0, min(r(u), 1) for v = 0, 1 for v > 0.
pub fn dissolution_rate(law: &RateLaw, u: f64, v: f64) -> f64 {
    if v < 0.0 {
        0.0
    } else if v == 0.0 {
        law.rate(u).min(1.0)
    } else {
        1.0
    }
}

fn ramp(delta: f64, v: f64) -> f64 {
    (v / delta).clamp(0.0, 1.0)
}

/// Regularized Heaviside: 0 for v ≤ 0, v/δ on (0, δ), 1 for v ≥ δ.
pub fn regularized_heaviside(delta: f64, v: f64) -> Result<f64> {
    Resolution::Regularized { delta }.validate()?;
    Ok(ramp(delta, v))
}

/// Result of one surface-ODE step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdeStep {
    pub v_new: f64,
    /// Time-averaged w over the step: `v_new − v = dt·k·(r(u) − w_effective)`.
    pub w_effective: f64,
}

/// Exact step of ∂ₜv = k(r(u) − w), w from the Heaviside selection, u frozen.
///
/// For v > 0 the rate is k(r − 1). When r < 1 the precipitate reaches zero at
/// τ = v / (k(1 − r)) and stays there with w = r. When r ≥ 1, v grows (or stays)
/// immediately. Both cases collapse to `v_new = max(0, v + k·dt·(r − 1))`.
pub fn ode_step(law: &RateLaw, u: f64, v: f64, dt: f64) -> Result<OdeStep> {
    if !(dt > 0.0) {
        return Err(Error::Parameter(format!("time step must be > 0, got {dt}")));
    }
    if v < 0.0 {
        return Err(Error::State(format!("negative precipitate v = {v}")));
    }
    let r = law.rate(u);
    let v_new = (v + law.k * dt * (r - 1.0)).max(0.0);
    let w_effective = r - (v_new - v) / (law.k * dt);
    Ok(OdeStep { v_new, w_effective })
}

/// End value of the regularized ODE ∂ₜv = k(r − H_δ(v)) after `dt`, integrated exactly.
fn regularized_final(k: f64, delta: f64, r: f64, v0: f64, dt: f64) -> f64 {
    let mut v = v0;
    let mut t = 0.0;
    // At most three regime changes: below 0 → ramp → above δ, or the reverse.
    for _ in 0..4 {
        let left = dt - t;
        if left <= 0.0 {
            break;
        }
        if v < 0.0 {
            // H = 0: linear growth k r until v hits 0.
            if r <= 0.0 {
                return v;
            }
            let tau = -v / (k * r);
            if tau >= left {
                return v + k * r * left;
            }
            v = 0.0;
            t += tau;
        } else if v >= delta {
            let slope = k * (r - 1.0);
            if slope >= 0.0 {
                return v + slope * left;
            }
            let tau = (v - delta) / -slope;
            if tau >= left {
                return v + slope * left;
            }
            v = delta;
            t += tau;
            if r >= 1.0 {
                return v;
            }
            // Inside the ramp from here on, heading to the fixed point δ r < δ.
            return delta * r + (v - delta * r) * (-k * (dt - t) / delta).exp();
        } else {
            // Ramp: ∂ₜv = k(r − v/δ), relaxes to δ r.
            let target = delta * r;
            if target < delta {
                return target + (v - target) * (-k * left / delta).exp();
            }
            // Leaves the ramp through v = δ when r > 1 (or sits at δ when r = 1).
            if (v - target).abs() == 0.0 {
                return v;
            }
            let tau = -(delta / k) * ((delta - target) / (v - target)).ln();
            if tau >= left {
                return target + (v - target) * (-k * left / delta).exp();
            }
            v = delta;
            t += tau;
            return v + k * (r - 1.0) * (dt - t);
        }
    }
    v
}

/// Exact step of the regularized ODE ∂ₜv = k(r(u) − H_δ(v)) with u frozen.
pub fn regularized_ode_step(law: &RateLaw, delta: f64, u: f64, v: f64, dt: f64) -> Result<OdeStep> {
    Resolution::Regularized { delta }.validate()?;
    if !(dt > 0.0) {
        return Err(Error::Parameter(format!("time step must be > 0, got {dt}")));
    }
    if v < 0.0 {
        return Err(Error::State(format!("negative precipitate v = {v}")));
    }
    let r = law.rate(u);
    let v_new = regularized_final(law.k, delta, r, v, dt);
    let w_effective = r - (v_new - v) / (law.k * dt);
    Ok(OdeStep { v_new, w_effective })
}
