//! Pointwise data-term proximal operators.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// A data-fidelity term with whatever observation metadata it needs. The
/// Huber threshold is a predicted hyperparameter; `p_max` and `sigma_read`
/// come from the observation model (camera calibration).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum DataFidelity {
    /// `D(u, y) = (u - y)^2`
    L2,
    /// `D(u, y) = t^2` for `|t| <= delta`, else `2*delta*|t| - delta^2`,
    /// with `t = u - y` (quadratic branch matches the L2 term exactly).
    Huber { delta: f64 },
    /// `D(u, y) = p_max * (u - y*ln(u))` on `u > 0`; requires `y >= 0`.
    NllPoisson { p_max: f64 },
    /// Weighted least-squares surrogate
    /// `D(u, y) = (u - y)^2 / (2*var)`, `var = max(y,0)/p_max + sigma_read^2`.
    NllPoissonGaussian { p_max: f64, sigma_read: f64 },
}

impl DataFidelity {
    pub fn validate(&self) -> Result<()> {
        match *self {
            DataFidelity::L2 => Ok(()),
            DataFidelity::Huber { delta } => {
                if delta > 0.0 && delta.is_finite() {
                    Ok(())
                } else {
                    Err(CoreError::InvalidParam(format!("huber delta {delta} must be > 0")))
                }
            }
            DataFidelity::NllPoisson { p_max } => {
                if p_max > 0.0 && p_max.is_finite() {
                    Ok(())
                } else {
                    Err(CoreError::InvalidParam(format!("p_max {p_max} must be > 0")))
                }
            }
            DataFidelity::NllPoissonGaussian { p_max, sigma_read } => {
                if !(p_max > 0.0 && p_max.is_finite()) {
                    return Err(CoreError::InvalidParam(format!("p_max {p_max} must be > 0")));
                }
                if !(sigma_read >= 0.0 && sigma_read.is_finite()) {
                    return Err(CoreError::InvalidParam(format!(
                        "sigma_read {sigma_read} must be >= 0"
                    )));
                }
                Ok(())
            }
        }
    }

    /// Data-term value, used by the brute-force prox oracle and tests.
    pub fn objective(&self, u: f64, y: f64) -> f64 {
        match *self {
            DataFidelity::L2 => (u - y) * (u - y),
            DataFidelity::Huber { delta } => {
                let t = (u - y).abs();
                if t <= delta {
                    t * t
                } else {
                    2.0 * delta * t - delta * delta
                }
            }
            DataFidelity::NllPoisson { p_max } => {
                if u > 0.0 {
                    p_max * (u - if y == 0.0 { 0.0 } else { y * u.ln() })
                } else if u == 0.0 && y == 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
            DataFidelity::NllPoissonGaussian { p_max, sigma_read } => {
                let var = y.max(0.0) / p_max + sigma_read * sigma_read;
                if var <= 0.0 {
                    if u == y {
                        0.0
                    } else {
                        f64::INFINITY
                    }
                } else {
                    (u - y) * (u - y) / (2.0 * var)
                }
            }
        }
    }

    /// `argmin_u D(u, y) + (rho/2)(u - v)^2`, assuming parameters already
    /// validated. Computed in `f64`.
    #[inline]
    pub(crate) fn prox_unchecked(&self, v: f64, y: f64, rho: f64) -> f64 {
        match *self {
            DataFidelity::L2 => (2.0 * y + rho * v) / (2.0 + rho),
            DataFidelity::Huber { delta } => {
                let r = v - y;
                let t_quad = rho * r / (2.0 + rho);
                if t_quad.abs() <= delta {
                    // same expression as the L2 branch so the quadratic
                    // region matches it bitwise
                    (2.0 * y + rho * v) / (2.0 + rho)
                } else {
                    y + r - r.signum() * 2.0 * delta / rho
                }
            }
            DataFidelity::NllPoisson { p_max } => {
                let b = rho * v - p_max;
                (b + (b * b + 4.0 * rho * p_max * y).sqrt()) / (2.0 * rho)
            }
            DataFidelity::NllPoissonGaussian { p_max, sigma_read } => {
                let var = y.max(0.0) / p_max + sigma_read * sigma_read;
                if var < 1e-300 {
                    y
                } else {
                    (y / var + rho * v) / (1.0 / var + rho)
                }
            }
        }
    }
}

/// Proximal map of a data term: `argmin_u D(u, y) + (rho/2)(u - v)^2`.
///
/// Errors on nonpositive `rho`, invalid term parameters, non-finite `v`,
/// and `y < 0` for the Poisson likelihood (whose objective is unbounded
/// below there).
pub fn prox_data(term: &DataFidelity, v: f64, y: f64, rho: f64) -> Result<f64> {
    if !(rho > 0.0 && rho.is_finite()) {
        return Err(CoreError::InvalidParam(format!("rho {rho} must be > 0")));
    }
    if !v.is_finite() {
        return Err(CoreError::InvalidParam(format!("v {v} must be finite")));
    }
    term.validate()?;
    if matches!(term, DataFidelity::NllPoisson { .. }) && y < 0.0 {
        return Err(CoreError::InvalidParam(format!(
            "Poisson likelihood requires y >= 0, got {y}"
        )));
    }
    Ok(term.prox_unchecked(v, y, rho))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    /// Dense 1-D grid minimizer of the prox objective around the candidate.
    fn grid_oracle(term: &DataFidelity, v: f64, y: f64, rho: f64, center: f64) -> f64 {
        let span = 2.0 * (1.0 + (v - y).abs());
        let mut best = f64::INFINITY;
        let mut best_u = center;
        for k in 0..=4000 {
            let u = center - span + 2.0 * span * k as f64 / 4000.0;
            let obj = term.objective(u, y) + 0.5 * rho * (u - v) * (u - v);
            if obj < best {
                best = obj;
                best_u = u;
            }
        }
        best_u
    }

    #[test]
    fn l2_example() {
        let u = prox_data(&DataFidelity::L2, 0.0, 1.0, 2.0).unwrap();
        assert!((u - 0.5).abs() < 1e-15);
        let oracle = grid_oracle(&DataFidelity::L2, 0.0, 1.0, 2.0, u);
        assert!((u - oracle).abs() < 2e-3);
    }

    #[test]
    fn huber_matches_l2_below_threshold() {
        let mut rng = SeededRng::new(8);
        for _ in 0..200 {
            let v = rng.uniform(-1.0, 1.0);
            let y = rng.uniform(-1.0, 1.0);
            let rho = rng.uniform(0.1, 10.0);
            let delta = (v - y).abs() + 0.5;
            let h = prox_data(&DataFidelity::Huber { delta }, v, y, rho).unwrap();
            let l = prox_data(&DataFidelity::L2, v, y, rho).unwrap();
            assert_eq!(h, l);
        }
    }

    #[test]
    fn nll_poisson_closed_form_example() {
        let p_max = 37.0;
        let u = prox_data(&DataFidelity::NllPoisson { p_max }, 1.0, 1.0, p_max).unwrap();
        assert!((u - 1.0).abs() < 1e-12);
    }

    #[test]
    fn prox_beats_dense_grid() {
        let mut rng = SeededRng::new(77);
        for _ in 0..200 {
            let v = rng.uniform(-2.0, 2.0);
            let rho = rng.uniform(0.05, 20.0);
            let terms = [
                (DataFidelity::L2, rng.uniform(-2.0, 2.0)),
                (
                    DataFidelity::Huber { delta: rng.uniform(0.01, 1.0) },
                    rng.uniform(-2.0, 2.0),
                ),
                (
                    DataFidelity::NllPoisson { p_max: rng.uniform(2.0, 128.0) },
                    rng.uniform(0.0, 2.0),
                ),
                (
                    DataFidelity::NllPoissonGaussian {
                        p_max: rng.uniform(2.0, 128.0),
                        sigma_read: rng.uniform(0.002, 0.06),
                    },
                    rng.uniform(-0.5, 2.0),
                ),
            ];
            for (term, y) in terms {
                let u = prox_data(&term, v, y, rho).unwrap();
                let obj_u = term.objective(u, y) + 0.5 * rho * (u - v) * (u - v);
                let u_grid = grid_oracle(&term, v, y, rho, u);
                let obj_grid = term.objective(u_grid, y) + 0.5 * rho * (u_grid - v) * (u_grid - v);
                assert!(
                    obj_u <= obj_grid + 1e-9,
                    "{term:?}: prox {obj_u} vs grid {obj_grid}"
                );
            }
        }
    }

    #[test]
    fn invalid_parameters_error() {
        assert!(prox_data(&DataFidelity::L2, 0.0, 0.0, 0.0).is_err());
        assert!(prox_data(&DataFidelity::L2, 0.0, 0.0, -1.0).is_err());
        assert!(prox_data(&DataFidelity::Huber { delta: 0.0 }, 0.0, 0.0, 1.0).is_err());
        assert!(prox_data(&DataFidelity::NllPoisson { p_max: 8.0 }, 0.0, -0.1, 1.0).is_err());
        assert!(prox_data(&DataFidelity::L2, f64::NAN, 0.0, 1.0).is_err());
    }
}
