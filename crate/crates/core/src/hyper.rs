//! Denoiser configurations and the padded hyperparameter vector.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Number of slots in the padded hyperparameter vector.
pub const SLOT_COUNT: usize = 3;
/// Huber threshold slot.
pub const SLOT_DELTA: usize = 0;
/// Prior-weight slot; stored as `log10(lambda)` in the learning domain.
pub const SLOT_LAMBDA: usize = 1;
/// TGV second-to-first-order ratio slot.
pub const SLOT_GAMMA: usize = 2;

/// Padding value held by inactive slots in both domains.
pub const PADDING: f64 = 0.0;

/// Floor applied to linear slots when decoding to the solver domain.
pub const DECODE_FLOOR: f64 = 1e-6;

/// Data-fidelity term identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataTerm {
    L2,
    Huber,
    NllPoisson,
    NllPoissonGaussian,
}

impl DataTerm {
    pub const ALL: [DataTerm; 4] = [
        DataTerm::L2,
        DataTerm::Huber,
        DataTerm::NllPoisson,
        DataTerm::NllPoissonGaussian,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            DataTerm::L2 => "l2",
            DataTerm::Huber => "huber",
            DataTerm::NllPoisson => "nll_poisson",
            DataTerm::NllPoissonGaussian => "nll_poisson_gaussian",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        DataTerm::ALL
            .into_iter()
            .find(|d| d.as_str() == s)
            .ok_or_else(|| CoreError::UnknownKind(format!("data term '{s}'")))
    }
}

/// Prior (regularizer) identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorTerm {
    Tv,
    Tgv,
}

impl PriorTerm {
    pub const ALL: [PriorTerm; 2] = [PriorTerm::Tv, PriorTerm::Tgv];

    pub fn as_str(&self) -> &'static str {
        match self {
            PriorTerm::Tv => "tv",
            PriorTerm::Tgv => "tgv",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        PriorTerm::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| CoreError::UnknownKind(format!("prior '{s}'")))
    }
}

/// Which slots hold real hyperparameters for a configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SlotMask(pub [bool; SLOT_COUNT]);

impl SlotMask {
    #[inline]
    pub fn is_active(&self, slot: usize) -> bool {
        self.0[slot]
    }

    pub fn active_count(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    pub fn active_slots(&self) -> impl Iterator<Item = usize> + '_ {
        (0..SLOT_COUNT).filter(|&j| self.0[j])
    }

    /// Compact form like `"011"`, slot order (delta, lambda, gamma).
    pub fn to_bits(&self) -> String {
        self.0.iter().map(|&b| if b { '1' } else { '0' }).collect()
    }

    pub fn from_bits(s: &str) -> Result<Self> {
        let chars: Vec<char> = s.chars().collect();
        if chars.len() != SLOT_COUNT || chars.iter().any(|&c| c != '0' && c != '1') {
            return Err(CoreError::Format(format!("bad slot mask '{s}'")));
        }
        let mut m = [false; SLOT_COUNT];
        for (i, &c) in chars.iter().enumerate() {
            m[i] = c == '1';
        }
        Ok(SlotMask(m))
    }
}

/// A denoiser configuration: the `(d, r)` pair. Iteration settings are fixed
/// per pair inside the solver module.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DenoiserConfig {
    pub data_term: DataTerm,
    pub prior: PriorTerm,
}

impl DenoiserConfig {
    pub fn new(data_term: DataTerm, prior: PriorTerm) -> Self {
        DenoiserConfig { data_term, prior }
    }

    /// Active-slot mask: delta iff the data term is Huber, lambda always,
    /// gamma iff the prior is TGV.
    pub fn active_mask(&self) -> SlotMask {
        SlotMask([
            self.data_term == DataTerm::Huber,
            true,
            self.prior == PriorTerm::Tgv,
        ])
    }

    /// Short id like `"huber-tgv"`.
    pub fn id(&self) -> String {
        format!("{}-{}", self.data_term.as_str(), self.prior.as_str())
    }

    pub fn parse(s: &str) -> Result<Self> {
        let (d, r) = s
            .rsplit_once('-')
            .ok_or_else(|| CoreError::UnknownKind(format!("config '{s}'")))?;
        Ok(DenoiserConfig::new(DataTerm::parse(d)?, PriorTerm::parse(r)?))
    }
}

/// Domain of the values stored in a [`HyperVector`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    /// Regression space: lambda slot holds `log10(lambda)`.
    Learning,
    /// Raw solver space: all active slots strictly positive.
    Solver,
}

/// Padded 3-slot hyperparameter vector `(p_delta, p_lambda, p_gamma)`.
///
/// Inactive slots always hold [`PADDING`] and are ignored by every consumer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperVector {
    slots: [f64; SLOT_COUNT],
    mask: SlotMask,
    domain: Domain,
}

impl HyperVector {
    /// Build a vector, zeroing whatever the mask marks inactive.
    pub fn new(mut slots: [f64; SLOT_COUNT], mask: SlotMask, domain: Domain) -> Self {
        for j in 0..SLOT_COUNT {
            if !mask.is_active(j) {
                slots[j] = PADDING;
            }
        }
        HyperVector { slots, mask, domain }
    }

    #[inline]
    pub fn slots(&self) -> &[f64; SLOT_COUNT] {
        &self.slots
    }
    #[inline]
    pub fn mask(&self) -> SlotMask {
        self.mask
    }
    #[inline]
    pub fn domain(&self) -> Domain {
        self.domain
    }

    #[inline]
    pub fn slot(&self, j: usize) -> f64 {
        self.slots[j]
    }

    pub fn delta(&self) -> Option<f64> {
        self.mask.is_active(SLOT_DELTA).then_some(self.slots[SLOT_DELTA])
    }
    pub fn lambda(&self) -> Option<f64> {
        self.mask.is_active(SLOT_LAMBDA).then_some(self.slots[SLOT_LAMBDA])
    }
    pub fn gamma(&self) -> Option<f64> {
        self.mask.is_active(SLOT_GAMMA).then_some(self.slots[SLOT_GAMMA])
    }

    /// Decode learning-domain values to the solver domain: the lambda slot
    /// exponentiates (`10^x`), linear slots clamp to `max(v, 1e-6)`,
    /// inactive slots stay at padding. Solver-domain input is returned
    /// unchanged.
    pub fn to_solver(&self) -> HyperVector {
        if self.domain == Domain::Solver {
            return *self;
        }
        let mut slots = [PADDING; SLOT_COUNT];
        for j in self.mask.active_slots() {
            slots[j] = if j == SLOT_LAMBDA {
                10f64.powf(self.slots[j])
            } else {
                self.slots[j].max(DECODE_FLOOR)
            };
        }
        HyperVector::new(slots, self.mask, Domain::Solver)
    }

    /// Encode solver-domain values to the learning domain (`log10` for the
    /// lambda slot). Learning-domain input is returned unchanged.
    pub fn to_learning(&self) -> HyperVector {
        if self.domain == Domain::Learning {
            return *self;
        }
        let mut slots = [PADDING; SLOT_COUNT];
        for j in self.mask.active_slots() {
            slots[j] = if j == SLOT_LAMBDA {
                self.slots[j].log10()
            } else {
                self.slots[j]
            };
        }
        HyperVector::new(slots, self.mask, Domain::Learning)
    }
}

/// Observation metadata for the likelihood-based data terms; `sigma_read`
/// is zero for a pure Poisson observation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoissonMeta {
    pub p_max: f64,
    pub sigma_read: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mask_law_table() {
        let cases = [
            (DataTerm::L2, PriorTerm::Tv, [false, true, false]),
            (DataTerm::Huber, PriorTerm::Tv, [true, true, false]),
            (DataTerm::L2, PriorTerm::Tgv, [false, true, true]),
            (DataTerm::Huber, PriorTerm::Tgv, [true, true, true]),
            (DataTerm::NllPoisson, PriorTerm::Tv, [false, true, false]),
            (DataTerm::NllPoisson, PriorTerm::Tgv, [false, true, true]),
            (DataTerm::NllPoissonGaussian, PriorTerm::Tv, [false, true, false]),
            (DataTerm::NllPoissonGaussian, PriorTerm::Tgv, [false, true, true]),
        ];
        for (d, r, mask) in cases {
            assert_eq!(DenoiserConfig::new(d, r).active_mask().0, mask, "{d:?}-{r:?}");
        }
    }

    #[test]
    fn decode_exponentiates_lambda() {
        let mask = DenoiserConfig::new(DataTerm::L2, PriorTerm::Tv).active_mask();
        let p = HyperVector::new([0.0, -2.0, 0.0], mask, Domain::Learning);
        let s = p.to_solver();
        assert!((s.lambda().unwrap() - 0.01).abs() < 1e-15);
        assert_eq!(s.slot(SLOT_DELTA), PADDING);
        assert_eq!(s.slot(SLOT_GAMMA), PADDING);
    }

    #[test]
    fn decode_clamps_linear_slots() {
        let mask = DenoiserConfig::new(DataTerm::Huber, PriorTerm::Tv).active_mask();
        let p = HyperVector::new([-5.0, 0.0, 0.0], mask, Domain::Learning);
        assert_eq!(p.to_solver().delta().unwrap(), DECODE_FLOOR);
    }

    #[test]
    fn inactive_gamma_stays_padding() {
        let mask = DenoiserConfig::new(DataTerm::L2, PriorTerm::Tv).active_mask();
        let p = HyperVector::new([7.0, -1.0, 9.0], mask, Domain::Learning);
        assert_eq!(p.slot(SLOT_GAMMA), PADDING);
        assert_eq!(p.to_solver().slot(SLOT_GAMMA), PADDING);
    }

    #[test]
    fn learning_solver_roundtrip() {
        let mask = DenoiserConfig::new(DataTerm::Huber, PriorTerm::Tgv).active_mask();
        let p = HyperVector::new([0.25, -1.5, 2.0], mask, Domain::Learning);
        let back = p.to_solver().to_learning();
        for j in 0..SLOT_COUNT {
            assert!((p.slot(j) - back.slot(j)).abs() < 1e-12);
        }
    }

    #[test]
    fn config_id_roundtrip() {
        for d in DataTerm::ALL {
            for r in PriorTerm::ALL {
                let c = DenoiserConfig::new(d, r);
                assert_eq!(DenoiserConfig::parse(&c.id()).unwrap(), c);
            }
        }
    }

    #[test]
    fn mask_bits_roundtrip() {
        let m = SlotMask([true, true, false]);
        assert_eq!(m.to_bits(), "110");
        assert_eq!(SlotMask::from_bits("110").unwrap(), m);
        assert!(SlotMask::from_bits("11").is_err());
    }
}
