//! Degradation sampling and application.
//!
//! A [`NoiseSpec`] is a concrete degradation: an ordered component list plus
//! the per-image seed that makes application a pure function. Components are
//! applied strictly in listed order (impulse, then Gaussian, for the
//! mixtures), each on its own child stream keyed by component index so that
//! appending a component never perturbs earlier components' draws.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::image::Image;
use crate::rng::SeededRng;
use crate::scalar::Scalar;

pub const SIGMA_RANGE: (f64, f64) = (5.0 / 255.0, 50.0 / 255.0);
pub const AMOUNT_RANGE: (f64, f64) = (0.05, 0.30);
pub const SALT_RATIO: f64 = 0.5;
pub const P_MAX_RANGE: (f64, f64) = (2.0, 128.0);
pub const SIGMA_READ_RANGE: (f64, f64) = (0.5 / 255.0, 16.0 / 255.0);

/// One degradation component with its sampled parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseComponent {
    Gaussian { sigma: f64 },
    BwImpulse { amount: f64, salt_ratio: f64 },
    RgbImpulse { amount: f64, salt_ratio: f64 },
    Poisson { p_max: f64 },
    PoissonGaussian { p_max: f64, sigma_read: f64 },
}

impl NoiseComponent {
    fn kind_tag(&self) -> u8 {
        match self {
            NoiseComponent::Gaussian { .. } => 0,
            NoiseComponent::BwImpulse { .. } => 1,
            NoiseComponent::RgbImpulse { .. } => 2,
            NoiseComponent::Poisson { .. } => 3,
            NoiseComponent::PoissonGaussian { .. } => 4,
        }
    }
}

/// Ordered degradation with a deterministic per-image seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub components: Vec<NoiseComponent>,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(components: Vec<NoiseComponent>, seed: u64) -> Result<Self> {
        let mut seen = [false; 5];
        for c in &components {
            let tag = c.kind_tag() as usize;
            if seen[tag] {
                return Err(CoreError::InvalidParam(
                    "at most one noise component of each kind".into(),
                ));
            }
            seen[tag] = true;
        }
        Ok(NoiseSpec { components, seed })
    }

    /// Observation metadata carried by a Poisson-family component, if any.
    pub fn poisson_meta(&self) -> Option<crate::hyper::PoissonMeta> {
        self.components.iter().find_map(|c| match *c {
            NoiseComponent::Poisson { p_max } => Some(crate::hyper::PoissonMeta {
                p_max,
                sigma_read: 0.0,
            }),
            NoiseComponent::PoissonGaussian { p_max, sigma_read } => {
                Some(crate::hyper::PoissonMeta { p_max, sigma_read })
            }
            _ => None,
        })
    }

    /// Gaussian sigma if a Gaussian component is present (read noise of a
    /// Poisson-Gaussian component does not count).
    pub fn gaussian_sigma(&self) -> Option<f64> {
        self.components.iter().find_map(|c| match *c {
            NoiseComponent::Gaussian { sigma } => Some(sigma),
            _ => None,
        })
    }
}

/// Supported degradation families and the two studied mixtures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    Gaussian,
    BwImpulse,
    RgbImpulse,
    Poisson,
    PoissonGaussian,
    BwImpulseGaussian,
    RgbImpulseGaussian,
}

impl NoiseKind {
    pub const ALL: [NoiseKind; 7] = [
        NoiseKind::Gaussian,
        NoiseKind::BwImpulse,
        NoiseKind::RgbImpulse,
        NoiseKind::Poisson,
        NoiseKind::PoissonGaussian,
        NoiseKind::BwImpulseGaussian,
        NoiseKind::RgbImpulseGaussian,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            NoiseKind::Gaussian => "gaussian",
            NoiseKind::BwImpulse => "bw_impulse",
            NoiseKind::RgbImpulse => "rgb_impulse",
            NoiseKind::Poisson => "poisson",
            NoiseKind::PoissonGaussian => "poisson_gaussian",
            NoiseKind::BwImpulseGaussian => "bw_impulse_gaussian",
            NoiseKind::RgbImpulseGaussian => "rgb_impulse_gaussian",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        NoiseKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| CoreError::UnknownKind(format!("noise kind '{s}'")))
    }
}

/// Draw a degradation for one image: an application seed, then each
/// component's parameters from its single-noise range, in applied order.
pub fn sample_noise_spec(kind: NoiseKind, rng: &mut SeededRng) -> NoiseSpec {
    let seed = rng.next_u64();
    let gaussian = |rng: &mut SeededRng| NoiseComponent::Gaussian {
        sigma: rng.uniform(SIGMA_RANGE.0, SIGMA_RANGE.1),
    };
    let bw = |rng: &mut SeededRng| NoiseComponent::BwImpulse {
        amount: rng.uniform(AMOUNT_RANGE.0, AMOUNT_RANGE.1),
        salt_ratio: SALT_RATIO,
    };
    let rgb = |rng: &mut SeededRng| NoiseComponent::RgbImpulse {
        amount: rng.uniform(AMOUNT_RANGE.0, AMOUNT_RANGE.1),
        salt_ratio: SALT_RATIO,
    };
    let components = match kind {
        NoiseKind::Gaussian => vec![gaussian(rng)],
        NoiseKind::BwImpulse => vec![bw(rng)],
        NoiseKind::RgbImpulse => vec![rgb(rng)],
        NoiseKind::Poisson => vec![NoiseComponent::Poisson {
            p_max: rng.uniform(P_MAX_RANGE.0, P_MAX_RANGE.1),
        }],
        NoiseKind::PoissonGaussian => vec![NoiseComponent::PoissonGaussian {
            p_max: rng.uniform(P_MAX_RANGE.0, P_MAX_RANGE.1),
            sigma_read: rng.uniform(SIGMA_READ_RANGE.0, SIGMA_READ_RANGE.1),
        }],
        NoiseKind::BwImpulseGaussian => {
            let i = bw(rng);
            let g = gaussian(rng);
            vec![i, g]
        }
        NoiseKind::RgbImpulseGaussian => {
            let i = rgb(rng);
            let g = gaussian(rng);
            vec![i, g]
        }
    };
    NoiseSpec::new(components, seed).expect("sampled specs are valid")
}

/// Apply one component using the given stream. Exposed so the mixture-order
/// property (sequential application with per-index child streams) can be
/// exercised directly.
pub fn apply_component<F: Scalar>(
    x: &Image<F>,
    component: &NoiseComponent,
    rng: &mut SeededRng,
) -> Image<F> {
    let (h, w, c) = (x.height(), x.width(), x.channels());
    match *component {
        NoiseComponent::Gaussian { sigma } => {
            let mut y = x.clone();
            for v in y.data_mut() {
                *v = *v + F::from_f64_c(sigma * rng.normal());
            }
            y
        }
        NoiseComponent::BwImpulse { amount, salt_ratio } => {
            let mut y = x.clone();
            for i in 0..h {
                for j in 0..w {
                    if rng.next_f64() < amount {
                        let v = if rng.next_f64() < salt_ratio {
                            F::one()
                        } else {
                            F::zero()
                        };
                        for ch in 0..c {
                            y.set(i, j, ch, v);
                        }
                    }
                }
            }
            y
        }
        NoiseComponent::RgbImpulse { amount, salt_ratio } => {
            let mut y = x.clone();
            for i in 0..h {
                for j in 0..w {
                    for ch in 0..c {
                        if rng.next_f64() < amount {
                            let v = if rng.next_f64() < salt_ratio {
                                F::one()
                            } else {
                                F::zero()
                            };
                            y.set(i, j, ch, v);
                        }
                    }
                }
            }
            y
        }
        NoiseComponent::Poisson { p_max } => {
            let mut y = x.clone();
            for v in y.data_mut() {
                let k = rng.poisson(v.to_f64_c() * p_max);
                *v = F::from_f64_c(k as f64 / p_max);
            }
            y
        }
        NoiseComponent::PoissonGaussian { p_max, sigma_read } => {
            let mut y = x.clone();
            for v in y.data_mut() {
                let k = rng.poisson(v.to_f64_c() * p_max);
                *v = F::from_f64_c(k as f64 / p_max + sigma_read * rng.normal());
            }
            y
        }
    }
}

/// Degrade a clean image. Pure in `(x, spec)`; the output is never clipped.
pub fn apply_noise<F: Scalar>(x: &Image<F>, spec: &NoiseSpec) -> Image<F> {
    let root = SeededRng::new(spec.seed);
    let mut y = x.clone();
    for (idx, component) in spec.components.iter().enumerate() {
        let mut stream = root.child_index(idx as u64);
        y = apply_component(&y, component, &mut stream);
    }
    y
}

/// Six-flag multi-hot noise attribute code:
/// `(unknown, has-Gaussian, has-Poisson, has-impulse, impulse-is-bw,
/// impulse-is-rgb)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoiseAttributeCode {
    pub bits: [bool; 6],
}

impl NoiseAttributeCode {
    pub const UNKNOWN: NoiseAttributeCode = NoiseAttributeCode {
        bits: [true, false, false, false, false, false],
    };

    pub fn to_f64(&self) -> [f64; 6] {
        let mut v = [0.0; 6];
        for (o, &b) in v.iter_mut().zip(&self.bits) {
            *o = if b { 1.0 } else { 0.0 };
        }
        v
    }
}

/// Encode component presence; `None` means the noise type is unknown, which
/// sets only the first flag. A Poisson-Gaussian component flags both Poisson
/// and Gaussian, since Gaussian read noise is present.
pub fn encode_noise_attributes(spec: Option<&NoiseSpec>) -> NoiseAttributeCode {
    let Some(spec) = spec else {
        return NoiseAttributeCode::UNKNOWN;
    };
    let mut bits = [false; 6];
    for c in &spec.components {
        match c {
            NoiseComponent::Gaussian { .. } => bits[1] = true,
            NoiseComponent::Poisson { .. } => bits[2] = true,
            NoiseComponent::PoissonGaussian { .. } => {
                bits[2] = true;
                bits[1] = true;
            }
            NoiseComponent::BwImpulse { .. } => {
                bits[3] = true;
                bits[4] = true;
            }
            NoiseComponent::RgbImpulse { .. } => {
                bits[3] = true;
                bits[5] = true;
            }
        }
    }
    NoiseAttributeCode { bits }
}
