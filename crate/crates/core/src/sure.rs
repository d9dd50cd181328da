//! Monte-Carlo SURE tuning for L2-TV under Gaussian noise, plus the
//! non-adaptive average-oracle baseline.

use crate::error::{CoreError, Result};
use crate::hyper::{Domain, HyperVector, SLOT_COUNT};
use crate::image::Image;
use crate::oracle::OracleLabel;
use crate::rng::SeededRng;
use crate::scalar::Scalar;
use crate::solvers::{denoise_tv_l2, LOG10_LAMBDA_BRACKET};

/// Risk estimate for one candidate weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SureEstimate {
    pub lambda: f64,
    /// Per-pixel unbiased risk estimate.
    pub risk: f64,
    /// Monte-Carlo divergence estimate used inside the risk.
    pub divergence: f64,
}

/// Perturbation scale: `1e-3 * max(1, max|y|)`.
pub fn default_epsilon<F: Scalar>(y: &Image<F>) -> f64 {
    let max_abs = y
        .data()
        .iter()
        .map(|v| v.to_f64_c().abs())
        .fold(0.0f64, f64::max);
    1e-3 * max_abs.max(1.0)
}

/// Default candidate grid: 30 log-spaced weights over the oracle lambda
/// bracket.
pub fn default_lambda_grid() -> Vec<f64> {
    let (lo, hi) = LOG10_LAMBDA_BRACKET;
    (0..30)
        .map(|k| 10f64.powf(lo + (hi - lo) * k as f64 / 29.0))
        .collect()
}

fn rademacher_probe(len: usize, rng: &mut SeededRng) -> Vec<f64> {
    (0..len).map(|_| rng.rademacher()).collect()
}

fn perturbed<F: Scalar>(y: &Image<F>, probe: &[f64], epsilon: f64) -> Image<F> {
    let mut out = y.clone();
    for (v, b) in out.data_mut().iter_mut().zip(probe) {
        *v = *v + F::from_f64_c(epsilon * b);
    }
    out
}

fn divergence_with_probe<F: Scalar>(
    fy: &Image<F>,
    fy_pert: &Image<F>,
    probe: &[f64],
    epsilon: f64,
) -> f64 {
    let mut acc = 0.0f64;
    for ((a, b), p) in fy_pert.data().iter().zip(fy.data()).zip(probe) {
        acc += p * (a.to_f64_c() - b.to_f64_c());
    }
    acc / epsilon
}

/// Monte-Carlo divergence estimate `b^T (f(y + eps*b) - f(y)) / eps` with an
/// i.i.d. ±1 probe drawn from `rng`.
pub fn mc_divergence<F: Scalar>(
    denoiser: &mut dyn FnMut(&Image<F>) -> Result<Image<F>>,
    y: &Image<F>,
    epsilon: f64,
    rng: &mut SeededRng,
) -> Result<f64> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(CoreError::InvalidParam(format!("epsilon {epsilon} must be > 0")));
    }
    let probe = rademacher_probe(y.len(), rng);
    let fy = denoiser(y)?;
    let fy_pert = denoiser(&perturbed(y, &probe, epsilon))?;
    Ok(divergence_with_probe(&fy, &fy_pert, &probe, epsilon))
}

/// SURE risk `(1/N)||f(y) - y||^2 - sigma^2 + (2 sigma^2 / N) * divergence`
/// for an arbitrary denoiser, drawing a fresh probe from `rng`.
pub fn sure_risk<F: Scalar>(
    y: &Image<F>,
    denoiser: &mut dyn FnMut(&Image<F>) -> Result<Image<F>>,
    sigma: f64,
    epsilon: f64,
    rng: &mut SeededRng,
) -> Result<(f64, f64)> {
    if !(sigma > 0.0) {
        return Err(CoreError::InvalidParam(format!("sigma {sigma} must be > 0")));
    }
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(CoreError::InvalidParam(format!("epsilon {epsilon} must be > 0")));
    }
    let probe = rademacher_probe(y.len(), rng);
    let fy = denoiser(y)?;
    let fy_pert = denoiser(&perturbed(y, &probe, epsilon))?;
    let divergence = divergence_with_probe(&fy, &fy_pert, &probe, epsilon);
    let n = y.len() as f64;
    let mut resid = 0.0f64;
    for (a, b) in fy.data().iter().zip(y.data()) {
        let d = a.to_f64_c() - b.to_f64_c();
        resid += d * d;
    }
    let risk = resid / n - sigma * sigma + 2.0 * sigma * sigma / n * divergence;
    Ok((risk, divergence))
}

/// Select the L2-TV weight minimizing the SURE risk over a candidate grid.
/// One probe is drawn per image and reused across every candidate; ties go
/// to the smaller lambda. Returns the winner and the full risk curve.
pub fn sure_select_lambda<F: Scalar>(
    y: &Image<F>,
    sigma: f64,
    lambda_grid: &[f64],
    epsilon: f64,
    rng: &mut SeededRng,
) -> Result<(f64, Vec<SureEstimate>)> {
    if lambda_grid.is_empty() {
        return Err(CoreError::EmptyInput("lambda grid".into()));
    }
    if !(sigma > 0.0) {
        return Err(CoreError::InvalidParam(format!("sigma {sigma} must be > 0")));
    }
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(CoreError::InvalidParam(format!("epsilon {epsilon} must be > 0")));
    }
    let probe = rademacher_probe(y.len(), rng);
    let y_pert = perturbed(y, &probe, epsilon);
    let n = y.len() as f64;

    let mut curve = Vec::with_capacity(lambda_grid.len());
    let mut best: Option<(f64, f64)> = None; // (risk, lambda)
    for &lambda in lambda_grid {
        let fy = denoise_tv_l2(y, lambda)?;
        let fy_pert = denoise_tv_l2(&y_pert, lambda)?;
        let divergence = divergence_with_probe(&fy, &fy_pert, &probe, epsilon);
        let mut resid = 0.0f64;
        for (a, b) in fy.data().iter().zip(y.data()) {
            let d = a.to_f64_c() - b.to_f64_c();
            resid += d * d;
        }
        let risk = resid / n - sigma * sigma + 2.0 * sigma * sigma / n * divergence;
        curve.push(SureEstimate { lambda, risk, divergence });
        let replace = match best {
            None => true,
            Some((br, bl)) => risk < br || (risk == br && lambda < bl),
        };
        if replace {
            best = Some((risk, lambda));
        }
    }
    Ok((best.expect("non-empty grid").1, curve))
}

/// Slot-wise mean of oracle labels in the learning domain (the lambda slot
/// averages in log10 space). All labels must share one mask.
pub fn avg_oracle_baseline(train_labels: &[OracleLabel]) -> Result<HyperVector> {
    let first = train_labels
        .first()
        .ok_or_else(|| CoreError::EmptyInput("label table".into()))?;
    let mask = first.p_star.mask();
    let mut sums = [0.0f64; SLOT_COUNT];
    for label in train_labels {
        if label.p_star.mask() != mask {
            return Err(CoreError::InvalidParam(
                "avg-oracle baseline needs a single common slot mask".into(),
            ));
        }
        for j in mask.active_slots() {
            sums[j] += label.p_star.slot(j);
        }
    }
    let n = train_labels.len() as f64;
    let mut slots = [0.0f64; SLOT_COUNT];
    for j in mask.active_slots() {
        slots[j] = sums[j] / n;
    }
    Ok(HyperVector::new(slots, mask, Domain::Learning))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hyper::{DataTerm, DenoiserConfig, PriorTerm, SLOT_LAMBDA};
    use crate::noise::{apply_noise, NoiseComponent, NoiseSpec};

    fn noisy_blocks(h: usize, w: usize, sigma: f64, seed: u64) -> Image<f64> {
        let clean = Image::from_fn(h, w, 1, |i, j, _| {
            if (i / 4 + j / 4) % 2 == 0 {
                0.3
            } else {
                0.7
            }
        });
        let spec = NoiseSpec::new(vec![NoiseComponent::Gaussian { sigma }], seed).unwrap();
        apply_noise(&clean, &spec)
    }

    #[test]
    fn identity_denoiser_divergence_is_n() {
        let y = noisy_blocks(8, 8, 0.1, 1);
        let mut f = |img: &Image<f64>| Ok(img.clone());
        let div = mc_divergence(&mut f, &y, 1e-3, &mut SeededRng::new(2)).unwrap();
        assert!((div - 64.0).abs() < 1e-6, "{div}");
    }

    #[test]
    fn linear_denoiser_divergence_exact_for_any_probe() {
        let y = noisy_blocks(8, 8, 0.1, 1);
        let c = 0.37;
        let mut f = |img: &Image<f64>| {
            let mut out = img.clone();
            for v in out.data_mut() {
                *v *= c;
            }
            Ok(out)
        };
        for seed in 0..5 {
            let div = mc_divergence(&mut f, &y, 1e-3, &mut SeededRng::new(seed)).unwrap();
            assert!((div - c * 64.0).abs() < 1e-6, "{div}");
        }
    }

    #[test]
    fn identity_denoiser_risk_is_sigma_squared() {
        let y = noisy_blocks(8, 8, 0.1, 3);
        let sigma = 0.1;
        let mut f = |img: &Image<f64>| Ok(img.clone());
        let (risk, _) = sure_risk(&y, &mut f, sigma, 1e-3, &mut SeededRng::new(4)).unwrap();
        assert!((risk - sigma * sigma).abs() < 1e-9, "{risk}");
    }

    #[test]
    fn zero_denoiser_risk_matches_formula() {
        let y = noisy_blocks(8, 8, 0.1, 5);
        let sigma = 0.2;
        let mut f = |img: &Image<f64>| Ok(Image::zeros(img.height(), img.width(), img.channels()));
        let (risk, div) = sure_risk(&y, &mut f, sigma, 1e-3, &mut SeededRng::new(6)).unwrap();
        assert_eq!(div, 0.0);
        let expected = y.data().iter().map(|v| v * v).sum::<f64>() / 64.0 - sigma * sigma;
        assert!((risk - expected).abs() < 1e-12);
    }

    #[test]
    fn tv_divergence_close_to_finite_difference_trace() {
        let y = noisy_blocks(16, 16, 0.08, 7);
        let lambda = 0.05;
        let eps = default_epsilon(&y);
        let mut f = |img: &Image<f64>| denoise_tv_l2(img, lambda);
        let div = mc_divergence(&mut f, &y, eps, &mut SeededRng::new(8)).unwrap();

        // brute-force Jacobian trace by one forward difference per coordinate
        let fy = denoise_tv_l2(&y, lambda).unwrap();
        let h = 1e-3;
        let mut trace = 0.0;
        for k in 0..y.len() {
            let mut yk = y.clone();
            yk.data_mut()[k] += h;
            let fk = denoise_tv_l2(&yk, lambda).unwrap();
            trace += (fk.data()[k] - fy.data()[k]) / h;
        }
        let rel = (div - trace).abs() / trace.abs();
        assert!(rel < 0.10, "div {div} trace {trace} rel {rel}");
    }

    #[test]
    fn select_singleton_grid() {
        let y = noisy_blocks(8, 8, 0.1, 9);
        let (lambda, curve) =
            sure_select_lambda(&y, 0.1, &[0.2], 1e-3, &mut SeededRng::new(10)).unwrap();
        assert_eq!(lambda, 0.2);
        assert_eq!(curve.len(), 1);
    }

    #[test]
    fn select_empty_grid_errors() {
        let y = noisy_blocks(8, 8, 0.1, 9);
        assert!(sure_select_lambda(&y, 0.1, &[], 1e-3, &mut SeededRng::new(1)).is_err());
    }

    #[test]
    fn select_is_deterministic_given_seed() {
        let y = noisy_blocks(16, 16, 0.1, 11);
        let grid = default_lambda_grid();
        let (a, _) = sure_select_lambda(&y, 0.1, &grid, 1e-3, &mut SeededRng::new(12)).unwrap();
        let (b, _) = sure_select_lambda(&y, 0.1, &grid, 1e-3, &mut SeededRng::new(12)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn avg_oracle_means_log_lambda() {
        let config = DenoiserConfig::new(DataTerm::L2, PriorTerm::Tv);
        let mask = config.active_mask();
        let mk = |l: f64| OracleLabel {
            image_id: String::new(),
            noise_spec: NoiseSpec { components: vec![], seed: 0 },
            config,
            p_star: HyperVector::new([0.0, l, 0.0], mask, Domain::Learning),
            oracle_psnr: 0.0,
            evals: 0,
        };
        let labels = vec![mk(-1.0), mk(-3.0)];
        let mean = avg_oracle_baseline(&labels).unwrap();
        assert_eq!(mean.slot(SLOT_LAMBDA), -2.0);

        let single = avg_oracle_baseline(&labels[..1]).unwrap();
        assert_eq!(single, labels[0].p_star);

        assert!(avg_oracle_baseline(&[]).is_err());
    }

    #[test]
    fn avg_oracle_mixed_masks_error() {
        let tv = DenoiserConfig::new(DataTerm::L2, PriorTerm::Tv);
        let tgv = DenoiserConfig::new(DataTerm::L2, PriorTerm::Tgv);
        let mk = |c: DenoiserConfig| OracleLabel {
            image_id: String::new(),
            noise_spec: NoiseSpec { components: vec![], seed: 0 },
            config: c,
            p_star: HyperVector::new([0.0, -1.0, 1.0], c.active_mask(), Domain::Learning),
            oracle_psnr: 0.0,
            evals: 0,
        };
        assert!(avg_oracle_baseline(&[mk(tv), mk(tgv)]).is_err());
    }
}
