//! Second-order TGV denoising via a primal-dual (Chambolle-Pock) scheme.
//!
//! Minimizes `D(u, y) + alpha1*|grad u - v| + alpha0*|E v|` per channel with
//! `alpha1 = lambda` and `alpha0 = gamma*lambda`, for exactly
//! [`ITERATIONS`] iterations. Step sizes are `sigma = tau = 1/sqrt(L2)`
//! where `L2 = 12` bounds the squared norm of the stacked operator
//! `[(grad, -I); (0, E)]` (forward differences, unit grid). Initialization
//! `u = y`, `v = grad y` makes constant and affine images exact fixed
//! points of the iteration away from boundary coupling.

use crate::error::{CoreError, Result};
use crate::image::Image;
use crate::scalar::Scalar;

use super::ops::{divergence, grad, sym_div, sym_grad};
use super::prox::DataFidelity;
use super::SolveStats;

pub const ITERATIONS: usize = 120;
/// Analytic bound on the squared operator norm of the TGV coupling operator.
pub const OPERATOR_NORM_SQ: f64 = 12.0;

/// Weight mapping from the hyperparameter pair to the TGV orders:
/// first-order weight `alpha1 = lambda`, second-order `alpha0 = gamma*lambda`.
pub fn map_tgv_weights(lambda: f64, gamma: f64) -> (f64, f64) {
    (lambda, gamma * lambda)
}

pub fn denoise_tgv_weights<F: Scalar>(
    y: &Image<F>,
    data: &DataFidelity,
    lambda: f64,
    gamma: f64,
) -> Result<(Image<F>, SolveStats)> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(CoreError::InvalidParam(format!("lambda {lambda} must be > 0")));
    }
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(CoreError::InvalidParam(format!("gamma {gamma} must be > 0")));
    }
    data.validate()?;

    let (alpha1, alpha0) = map_tgv_weights(lambda, gamma);
    let step = 1.0 / OPERATOR_NORM_SQ.sqrt();
    let sigma = F::from_f64_c(step);
    let tau = F::from_f64_c(step);
    let a1 = F::from_f64_c(alpha1);
    let a0 = F::from_f64_c(alpha0);
    let two = F::from_f64_c(2.0);
    let rho = 1.0 / step;

    let (h, w, c) = (y.height(), y.width(), y.channels());
    let n = h * w;
    let mut out = y.clone();

    // primal u, v (2-field); dual p (2-field), q (3-field); overrelaxed bars
    let mut u = vec![F::zero(); n];
    let mut v0 = vec![F::zero(); n];
    let mut v1 = vec![F::zero(); n];
    let mut ub = vec![F::zero(); n];
    let mut vb0 = vec![F::zero(); n];
    let mut vb1 = vec![F::zero(); n];
    let mut p0 = vec![F::zero(); n];
    let mut p1 = vec![F::zero(); n];
    let mut qxx = vec![F::zero(); n];
    let mut qyy = vec![F::zero(); n];
    let mut qxy = vec![F::zero(); n];
    let mut gx = vec![F::zero(); n];
    let mut gy = vec![F::zero(); n];
    let mut exx = vec![F::zero(); n];
    let mut eyy = vec![F::zero(); n];
    let mut exy = vec![F::zero(); n];
    let mut divp = vec![F::zero(); n];
    let mut sd0 = vec![F::zero(); n];
    let mut sd1 = vec![F::zero(); n];
    let mut obs = vec![F::zero(); n];

    for ch in 0..c {
        for k in 0..n {
            obs[k] = y.data()[k * c + ch];
        }
        u.copy_from_slice(&obs);
        grad(&u, h, w, &mut gx, &mut gy);
        v0.copy_from_slice(&gx);
        v1.copy_from_slice(&gy);
        ub.copy_from_slice(&u);
        vb0.copy_from_slice(&v0);
        vb1.copy_from_slice(&v1);
        for k in 0..n {
            p0[k] = F::zero();
            p1[k] = F::zero();
            qxx[k] = F::zero();
            qyy[k] = F::zero();
            qxy[k] = F::zero();
        }

        for _ in 0..ITERATIONS {
            // dual ascent on p with projection onto the alpha1 ball
            grad(&ub, h, w, &mut gx, &mut gy);
            for k in 0..n {
                let cand0 = p0[k] + sigma * (gx[k] - vb0[k]);
                let cand1 = p1[k] + sigma * (gy[k] - vb1[k]);
                let mag = (cand0 * cand0 + cand1 * cand1).sqrt();
                let scale = if mag > a1 { a1 / mag } else { F::one() };
                p0[k] = cand0 * scale;
                p1[k] = cand1 * scale;
            }

            // dual ascent on q with projection onto the alpha0 ball
            sym_grad(&vb0, &vb1, h, w, &mut exx, &mut eyy, &mut exy);
            for k in 0..n {
                let cxx = qxx[k] + sigma * exx[k];
                let cyy = qyy[k] + sigma * eyy[k];
                let cxy = qxy[k] + sigma * exy[k];
                let norm = (cxx * cxx + cyy * cyy + two * cxy * cxy).sqrt();
                let scale = if norm > a0 { a0 / norm } else { F::one() };
                qxx[k] = cxx * scale;
                qyy[k] = cyy * scale;
                qxy[k] = cxy * scale;
            }

            // primal descent on u through the data prox
            divergence(&p0, &p1, h, w, &mut divp);
            for k in 0..n {
                let prev = u[k];
                let arg = (prev + tau * divp[k]).to_f64_c();
                let next = F::from_f64_c(data.prox_unchecked(arg, obs[k].to_f64_c(), rho));
                ub[k] = two * next - prev;
                u[k] = next;
            }

            // primal descent on v
            sym_div(&qxx, &qyy, &qxy, h, w, &mut sd0, &mut sd1);
            for k in 0..n {
                let prev0 = v0[k];
                let prev1 = v1[k];
                let next0 = prev0 + tau * (p0[k] + sd0[k]);
                let next1 = prev1 + tau * (p1[k] + sd1[k]);
                vb0[k] = two * next0 - prev0;
                vb1[k] = two * next1 - prev1;
                v0[k] = next0;
                v1[k] = next1;
            }
        }

        for k in 0..n {
            out.data_mut()[k * c + ch] = u[k];
        }
    }
    Ok((out, SolveStats { iterations: ITERATIONS }))
}
