//! Variational image denoising toolkit: images and quality metrics, seeded
//! noise synthesis, TV/TGV proximal solvers, PSNR-oracle label search, and
//! Monte-Carlo SURE tuning.
//!
//! All numerical routines are generic over the scalar type via [`Scalar`]
//! (`f32` or `f64`); the concrete aliases [`Image32`] and [`Image64`] pick
//! the storage width. Pipelines that need bit-stable labels should use
//! [`Image64`] end to end.

pub mod error;
pub mod hyper;
pub mod image;
pub mod io;
pub mod noise;
pub mod oracle;
pub mod rng;
pub mod scalar;
pub mod solvers;
pub mod sure;

pub use error::{CoreError, Result};
pub use hyper::{
    DataTerm, DenoiserConfig, Domain, HyperVector, PoissonMeta, PriorTerm, SlotMask, SLOT_COUNT,
    SLOT_DELTA, SLOT_GAMMA, SLOT_LAMBDA,
};
pub use image::{psnr, Augment, Image};
pub use io::{load_image, save_image};
pub use noise::{
    apply_component, apply_noise, encode_noise_attributes, sample_noise_spec, NoiseAttributeCode,
    NoiseComponent, NoiseKind, NoiseSpec,
};
pub use oracle::{
    exhaustive_search, generate_labels, hierarchical_search, LabelTable, OracleLabel, SearchGrid,
    SlotGrid,
};
pub use rng::SeededRng;
pub use scalar::Scalar;
pub use solvers::{denoise, denoise_tgv, denoise_tv_huber, denoise_tv_l2, prox_data, DataFidelity};
pub use sure::{avg_oracle_baseline, mc_divergence, sure_risk, sure_select_lambda, SureEstimate};

/// Image with `f32` storage.
pub type Image32 = Image<f32>;
/// Image with `f64` storage; the label pipelines use this alias throughout.
pub type Image64 = Image<f64>;
