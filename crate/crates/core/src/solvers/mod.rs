//! Fixed model-based denoisers and their shared proximal operators.
//!
//! Solver selection per configuration: L2-TV runs split Bregman, every other
//! TV data term runs the ADMM skeleton with its data prox, and TGV runs the
//! primal-dual scheme for all data terms. All solvers are pure functions of
//! their inputs; repeated calls are bitwise identical.

mod ops;
mod prox;
mod tgv;
mod tv_admm;
mod tv_bregman;

pub use ops::{divergence, grad, sym_div, sym_grad};
pub use prox::{prox_data, DataFidelity};
pub use tgv::{denoise_tgv_weights, map_tgv_weights, OPERATOR_NORM_SQ, ITERATIONS as TGV_ITERATIONS};
pub use tv_admm::{denoise_tv_admm, denoise_tv_huber, ITERATIONS as ADMM_ITERATIONS, RHO_DATA, RHO_TV};
pub use tv_bregman::{bregman_penalty, denoise_tv_l2, denoise_tv_l2_with_stats, EPS as BREGMAN_EPS, MAX_ITER as BREGMAN_MAX_ITER};

use crate::error::{CoreError, Result};
use crate::hyper::{DataTerm, DenoiserConfig, Domain, HyperVector, PoissonMeta, PriorTerm};
use crate::image::Image;
use crate::scalar::Scalar;

/// Search brackets for the three hyperparameter slots, shared by the oracle
/// search and the SURE grid. The lambda bracket is in `log10` space.
pub const LOG10_LAMBDA_BRACKET: (f64, f64) = (-3.0, 1.0);
pub const DELTA_BRACKET: (f64, f64) = (0.01, 1.0);
pub const GAMMA_BRACKET: (f64, f64) = (0.25, 8.0);

/// Iteration count reported by a solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SolveStats {
    pub iterations: usize,
}

/// TGV denoising with the data term resolved and a solver-domain
/// hyperparameter vector carrying `(delta?, lambda, gamma)`.
pub fn denoise_tgv<F: Scalar>(
    y: &Image<F>,
    data: &DataFidelity,
    p: &HyperVector,
) -> Result<Image<F>> {
    let p = p.to_solver();
    let lambda = p
        .lambda()
        .ok_or_else(|| CoreError::InvalidParam("TGV requires an active lambda slot".into()))?;
    let gamma = p
        .gamma()
        .ok_or_else(|| CoreError::InvalidParam("TGV requires an active gamma slot".into()))?;
    denoise_tgv_weights(y, data, lambda, gamma).map(|(img, _)| img)
}

/// Resolve the data term of a configuration against the hyperparameter
/// vector (Huber threshold) and observation metadata (photon scale / read
/// noise for the likelihood terms).
pub fn resolve_data_fidelity(
    config: &DenoiserConfig,
    p: &HyperVector,
    meta: Option<&PoissonMeta>,
) -> Result<DataFidelity> {
    match config.data_term {
        DataTerm::L2 => Ok(DataFidelity::L2),
        DataTerm::Huber => {
            let delta = p.delta().ok_or_else(|| {
                CoreError::InvalidParam("Huber data term requires an active delta slot".into())
            })?;
            Ok(DataFidelity::Huber { delta })
        }
        DataTerm::NllPoisson => {
            let m = meta.ok_or_else(|| {
                CoreError::InvalidParam("NllPoisson requires observation metadata (p_max)".into())
            })?;
            Ok(DataFidelity::NllPoisson { p_max: m.p_max })
        }
        DataTerm::NllPoissonGaussian => {
            let m = meta.ok_or_else(|| {
                CoreError::InvalidParam(
                    "NllPoissonGaussian requires observation metadata (p_max, sigma_read)".into(),
                )
            })?;
            Ok(DataFidelity::NllPoissonGaussian {
                p_max: m.p_max,
                sigma_read: m.sigma_read,
            })
        }
    }
}

/// Run the configured denoiser. `p` may be in either domain; learning-domain
/// input is decoded first.
pub fn denoise<F: Scalar>(
    y: &Image<F>,
    config: &DenoiserConfig,
    p: &HyperVector,
    meta: Option<&PoissonMeta>,
) -> Result<Image<F>> {
    let p = if p.domain() == Domain::Learning {
        p.to_solver()
    } else {
        *p
    };
    if p.mask() != config.active_mask() {
        return Err(CoreError::InvalidParam(format!(
            "hyperparameter mask {} does not match config {} (expects {})",
            p.mask().to_bits(),
            config.id(),
            config.active_mask().to_bits()
        )));
    }
    let lambda = p
        .lambda()
        .ok_or_else(|| CoreError::InvalidParam("lambda slot is always required".into()))?;
    let data = resolve_data_fidelity(config, &p, meta)?;
    match config.prior {
        PriorTerm::Tv => match config.data_term {
            DataTerm::L2 => denoise_tv_l2(y, lambda),
            _ => denoise_tv_admm(y, &data, lambda).map(|(img, _)| img),
        },
        PriorTerm::Tgv => denoise_tgv(y, &data, &p),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hyper::SlotMask;
    use crate::image::Image;

    #[test]
    fn dispatch_rejects_wrong_mask() {
        let y = Image::<f64>::zeros(8, 8, 1);
        let config = DenoiserConfig::new(DataTerm::Huber, PriorTerm::Tv);
        let p = HyperVector::new([0.0, -1.0, 0.0], SlotMask([false, true, false]), Domain::Learning);
        assert!(denoise(&y, &config, &p, None).is_err());
    }

    #[test]
    fn dispatch_requires_meta_for_likelihood_terms() {
        let y = Image::<f64>::from_fn(8, 8, 1, |i, _, _| i as f64 / 8.0);
        let config = DenoiserConfig::new(DataTerm::NllPoisson, PriorTerm::Tv);
        let p = HyperVector::new([0.0, -1.0, 0.0], config.active_mask(), Domain::Learning);
        assert!(denoise(&y, &config, &p, None).is_err());
        let meta = PoissonMeta { p_max: 30.0, sigma_read: 0.0 };
        assert!(denoise(&y, &config, &p, Some(&meta)).is_ok());
    }

    #[test]
    fn all_configs_leave_constants_fixed() {
        let y = Image::<f64>::from_fn(8, 8, 3, |_, _, _| 0.5);
        let meta = PoissonMeta { p_max: 20.0, sigma_read: 0.01 };
        for d in DataTerm::ALL {
            for r in PriorTerm::ALL {
                let config = DenoiserConfig::new(d, r);
                let p = HyperVector::new([0.1, -1.0, 2.0], config.active_mask(), Domain::Learning);
                let u = denoise(&y, &config, &p, Some(&meta)).unwrap();
                let max_dev = y
                    .data()
                    .iter()
                    .zip(u.data())
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0f64, f64::max);
                // likelihood terms pull toward the observation, which is the
                // constant itself
                assert!(max_dev < 1e-9, "{}: {max_dev}", config.id());
            }
        }
    }
}
