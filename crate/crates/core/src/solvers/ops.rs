//! Discrete gradient machinery shared by the proximal solvers.
//!
//! Forward differences with Neumann (replicate) boundary; divergences are
//! the negative adjoints, which the tests check directly. The symmetric
//! gradient uses the matrix Frobenius convention: its pointwise norm is
//! `sqrt(exx^2 + eyy^2 + 2*exy^2)` and the pairing weights the off-diagonal
//! by 2, so the adjoint picks up no 1/2 factors.

use crate::scalar::Scalar;

#[inline]
fn at(i: usize, j: usize, w: usize) -> usize {
    i * w + j
}

/// Forward-difference gradient; derivative is zero on the far boundary.
pub fn grad<F: Scalar>(u: &[F], h: usize, w: usize, gx: &mut [F], gy: &mut [F]) {
    for i in 0..h {
        for j in 0..w {
            let k = at(i, j, w);
            gx[k] = if j + 1 < w { u[k + 1] - u[k] } else { F::zero() };
            gy[k] = if i + 1 < h { u[k + w] - u[k] } else { F::zero() };
        }
    }
}

/// Negative adjoint of [`grad`]: `<grad u, p> = <u, -div p>`.
pub fn divergence<F: Scalar>(px: &[F], py: &[F], h: usize, w: usize, out: &mut [F]) {
    for i in 0..h {
        for j in 0..w {
            let k = at(i, j, w);
            let dx = if j == 0 {
                px[k]
            } else if j + 1 < w {
                px[k] - px[k - 1]
            } else {
                -px[k - 1]
            };
            let dy = if i == 0 {
                py[k]
            } else if i + 1 < h {
                py[k] - py[k - w]
            } else {
                -py[k - w]
            };
            out[k] = dx + dy;
        }
    }
}

/// Symmetric gradient of a 2-field: `(dx v0, dy v1, (dy v0 + dx v1)/2)`.
pub fn sym_grad<F: Scalar>(
    v0: &[F],
    v1: &[F],
    h: usize,
    w: usize,
    exx: &mut [F],
    eyy: &mut [F],
    exy: &mut [F],
) {
    let half = F::from_f64_c(0.5);
    for i in 0..h {
        for j in 0..w {
            let k = at(i, j, w);
            let dx_v0 = if j + 1 < w { v0[k + 1] - v0[k] } else { F::zero() };
            let dy_v1 = if i + 1 < h { v1[k + w] - v1[k] } else { F::zero() };
            let dy_v0 = if i + 1 < h { v0[k + w] - v0[k] } else { F::zero() };
            let dx_v1 = if j + 1 < w { v1[k + 1] - v1[k] } else { F::zero() };
            exx[k] = dx_v0;
            eyy[k] = dy_v1;
            exy[k] = half * (dy_v0 + dx_v1);
        }
    }
}

/// Negative adjoint of [`sym_grad`] under the weighted pairing
/// `<E v, q> = sum(exx*qxx + eyy*qyy + 2*exy*qxy)`.
pub fn sym_div<F: Scalar>(
    qxx: &[F],
    qyy: &[F],
    qxy: &[F],
    h: usize,
    w: usize,
    out0: &mut [F],
    out1: &mut [F],
) {
    let bdx = |p: &[F], i: usize, j: usize| -> F {
        let k = at(i, j, w);
        if j == 0 {
            p[k]
        } else if j + 1 < w {
            p[k] - p[k - 1]
        } else {
            -p[k - 1]
        }
    };
    let bdy = |p: &[F], i: usize, j: usize| -> F {
        let k = at(i, j, w);
        if i == 0 {
            p[k]
        } else if i + 1 < h {
            p[k] - p[k - w]
        } else {
            -p[k - w]
        }
    };
    for i in 0..h {
        for j in 0..w {
            let k = at(i, j, w);
            out0[k] = bdx(qxx, i, j) + bdy(qxy, i, j);
            out1[k] = bdy(qyy, i, j) + bdx(qxy, i, j);
        }
    }
}

/// Grouped soft threshold on a 2-field: shrink the pointwise Euclidean
/// magnitude by `t`.
pub fn shrink_iso2<F: Scalar>(ax: &mut [F], ay: &mut [F], t: F) {
    for k in 0..ax.len() {
        let mag = (ax[k] * ax[k] + ay[k] * ay[k]).sqrt();
        if mag <= t {
            ax[k] = F::zero();
            ay[k] = F::zero();
        } else {
            let scale = (mag - t) / mag;
            ax[k] = ax[k] * scale;
            ay[k] = ay[k] * scale;
        }
    }
}

/// One in-place Gauss-Seidel sweep (raster order) for the quadratic
/// `rho_a/2 ||u - a||^2 + rho_g/2 ||grad u - c||^2`.
pub fn gs_sweep<F: Scalar>(
    u: &mut [F],
    a: &[F],
    cx: &[F],
    cy: &[F],
    h: usize,
    w: usize,
    rho_a: F,
    rho_g: F,
) {
    for i in 0..h {
        for j in 0..w {
            let k = at(i, j, w);
            let mut acc = rho_a * a[k];
            let mut deg = F::zero();
            if j + 1 < w {
                acc += rho_g * (u[k + 1] - cx[k]);
                deg += F::one();
            }
            if j >= 1 {
                acc += rho_g * (u[k - 1] + cx[k - 1]);
                deg += F::one();
            }
            if i + 1 < h {
                acc += rho_g * (u[k + w] - cy[k]);
                deg += F::one();
            }
            if i >= 1 {
                acc += rho_g * (u[k - w] + cy[k - w]);
                deg += F::one();
            }
            u[k] = acc / (rho_a + rho_g * deg);
        }
    }
}

/// Relative L2 change between iterates, with a zero-safe denominator.
pub fn rel_change<F: Scalar>(current: &[F], previous: &[F]) -> f64 {
    let mut num = 0.0f64;
    let mut den = 0.0f64;
    for (c, p) in current.iter().zip(previous) {
        let d = c.to_f64_c() - p.to_f64_c();
        num += d * d;
        let v = c.to_f64_c();
        den += v * v;
    }
    if den == 0.0 {
        0.0
    } else {
        (num / den).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    fn random_plane(h: usize, w: usize, rng: &mut SeededRng) -> Vec<f64> {
        (0..h * w).map(|_| rng.uniform(-1.0, 1.0)).collect()
    }

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn grad_div_adjoint() {
        let (h, w) = (7, 11);
        let mut rng = SeededRng::new(31);
        for _ in 0..20 {
            let u = random_plane(h, w, &mut rng);
            let px = random_plane(h, w, &mut rng);
            let py = random_plane(h, w, &mut rng);
            let (mut gx, mut gy) = (vec![0.0; h * w], vec![0.0; h * w]);
            grad(&u, h, w, &mut gx, &mut gy);
            let mut d = vec![0.0; h * w];
            divergence(&px, &py, h, w, &mut d);
            let lhs = dot(&gx, &px) + dot(&gy, &py);
            let rhs = -dot(&u, &d);
            assert!((lhs - rhs).abs() < 1e-10, "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn symgrad_symdiv_adjoint() {
        let (h, w) = (9, 6);
        let mut rng = SeededRng::new(32);
        for _ in 0..20 {
            let v0 = random_plane(h, w, &mut rng);
            let v1 = random_plane(h, w, &mut rng);
            let qxx = random_plane(h, w, &mut rng);
            let qyy = random_plane(h, w, &mut rng);
            let qxy = random_plane(h, w, &mut rng);
            let mut exx = vec![0.0; h * w];
            let mut eyy = vec![0.0; h * w];
            let mut exy = vec![0.0; h * w];
            sym_grad(&v0, &v1, h, w, &mut exx, &mut eyy, &mut exy);
            let (mut o0, mut o1) = (vec![0.0; h * w], vec![0.0; h * w]);
            sym_div(&qxx, &qyy, &qxy, h, w, &mut o0, &mut o1);
            // weighted pairing: off-diagonal counts twice
            let lhs = dot(&exx, &qxx) + dot(&eyy, &qyy) + 2.0 * dot(&exy, &qxy);
            let rhs = -(dot(&v0, &o0) + dot(&v1, &o1));
            assert!((lhs - rhs).abs() < 1e-10, "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn shrink_grouped_magnitude() {
        let mut ax = vec![3.0f64];
        let mut ay = vec![4.0f64];
        shrink_iso2(&mut ax, &mut ay, 1.0);
        // magnitude 5 -> 4, direction preserved
        assert!((ax[0] - 3.0 * 0.8).abs() < 1e-15);
        assert!((ay[0] - 4.0 * 0.8).abs() < 1e-15);

        let mut bx = vec![0.1f64];
        let mut by = vec![0.1f64];
        shrink_iso2(&mut bx, &mut by, 1.0);
        assert_eq!((bx[0], by[0]), (0.0, 0.0));
    }
}
