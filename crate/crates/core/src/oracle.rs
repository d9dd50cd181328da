//! PSNR-maximizing oracle hyperparameter labels by hierarchical grid search,
//! with an exhaustive search for verification and a bulk, worker-pooled
//! label generator.
//!
//! Grids live in the learning domain (the lambda slot is `log10(lambda)`),
//! so linear spacing there is log spacing in raw lambda.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::hyper::{
    DenoiserConfig, Domain, HyperVector, PoissonMeta, SlotMask, SLOT_COUNT, SLOT_DELTA,
    SLOT_GAMMA, SLOT_LAMBDA,
};
use crate::image::{psnr, Image};
use crate::io::load_image;
use crate::noise::{apply_noise, NoiseSpec};
use crate::solvers::{denoise, DELTA_BRACKET, GAMMA_BRACKET, LOG10_LAMBDA_BRACKET};

pub const LABEL_FORMAT_VERSION: u32 = 1;

/// Bracket and coarse point count for one active slot (learning domain).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlotGrid {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

impl SlotGrid {
    fn linspace(&self, lo: f64, hi: f64) -> Vec<f64> {
        if self.points == 1 {
            return vec![(lo + hi) / 2.0];
        }
        (0..self.points)
            .map(|k| lo + (hi - lo) * k as f64 / (self.points - 1) as f64)
            .collect()
    }
}

/// Hierarchical search grid over exactly the active slots of one
/// configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchGrid {
    /// Per-slot grids, indexed (delta, lambda, gamma); `None` = padding.
    pub slots: [Option<SlotGrid>; SLOT_COUNT],
    pub refine_levels: usize,
    /// Bracket width multiplier per refinement level, in `(0, 1)`.
    pub zoom: f64,
}

impl SearchGrid {
    /// Default grid for a configuration: 9 coarse points per active slot,
    /// 2 refinement levels, zoom 1/3, brackets from the solver module.
    pub fn default_for(config: &DenoiserConfig) -> SearchGrid {
        SearchGrid::for_config(config, 9, 2)
    }

    /// Grid with a chosen coarse point count and refinement depth.
    pub fn for_config(config: &DenoiserConfig, points: usize, refine_levels: usize) -> SearchGrid {
        let mask = config.active_mask();
        let bracket = |slot: usize| -> (f64, f64) {
            match slot {
                SLOT_DELTA => DELTA_BRACKET,
                SLOT_LAMBDA => LOG10_LAMBDA_BRACKET,
                _ => GAMMA_BRACKET,
            }
        };
        let mut slots = [None; SLOT_COUNT];
        for j in mask.active_slots() {
            let (lo, hi) = bracket(j);
            slots[j] = Some(SlotGrid { lo, hi, points });
        }
        SearchGrid { slots, refine_levels, zoom: 1.0 / 3.0 }
    }

    pub fn mask(&self) -> SlotMask {
        let mut m = [false; SLOT_COUNT];
        for (j, s) in self.slots.iter().enumerate() {
            m[j] = s.is_some();
        }
        SlotMask(m)
    }

    fn validate(&self, mask: SlotMask) -> Result<()> {
        if self.mask() != mask {
            return Err(CoreError::InvalidParam(format!(
                "grid covers slots {} but config activates {}",
                self.mask().to_bits(),
                mask.to_bits()
            )));
        }
        for s in self.slots.iter().flatten() {
            if s.points < 1 || (s.points < 3 && self.refine_levels > 0) {
                return Err(CoreError::InvalidParam("coarse point count must be >= 3".into()));
            }
            if !(s.lo <= s.hi) {
                return Err(CoreError::InvalidParam("bracket lo must be <= hi".into()));
            }
        }
        if !(self.zoom > 0.0 && self.zoom < 1.0) {
            return Err(CoreError::InvalidParam("zoom factor must be in (0, 1)".into()));
        }
        Ok(())
    }
}

/// One oracle label: the PSNR-maximizing hyperparameter vector (learning
/// domain) for one degraded image under one configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleLabel {
    pub image_id: String,
    pub noise_spec: NoiseSpec,
    pub config: DenoiserConfig,
    pub p_star: HyperVector,
    pub oracle_psnr: f64,
    pub evals: u64,
}

/// Candidate ordering: higher PSNR wins; exact ties break toward smaller
/// lambda, then smaller delta, then smaller gamma.
fn better(
    psnr_a: f64,
    p_a: &HyperVector,
    psnr_b: f64,
    p_b: &HyperVector,
) -> bool {
    if psnr_a != psnr_b {
        return psnr_a > psnr_b;
    }
    let key = |p: &HyperVector| (p.slot(SLOT_LAMBDA), p.slot(SLOT_DELTA), p.slot(SLOT_GAMMA));
    key(p_a) < key(p_b)
}

fn cartesian(values: &[Option<Vec<f64>>; SLOT_COUNT], mask: SlotMask) -> Vec<HyperVector> {
    let axis = |j: usize| -> Vec<f64> {
        values[j].clone().unwrap_or_else(|| vec![0.0])
    };
    let (ad, al, ag) = (axis(SLOT_DELTA), axis(SLOT_LAMBDA), axis(SLOT_GAMMA));
    let mut out = Vec::with_capacity(ad.len() * al.len() * ag.len());
    for &d in &ad {
        for &l in &al {
            for &g in &ag {
                out.push(HyperVector::new([d, l, g], mask, Domain::Learning));
            }
        }
    }
    out
}

/// Core search loop over an arbitrary objective, used by both the public
/// searches and the synthetic-objective tests.
pub(crate) fn search_with(
    eval: &mut dyn FnMut(&HyperVector) -> Result<f64>,
    mask: SlotMask,
    grid: &SearchGrid,
) -> Result<(HyperVector, f64, u64)> {
    grid.validate(mask)?;
    let mut evals = 0u64;
    let mut best: Option<(HyperVector, f64)> = None;

    let mut run_pass = |values: &[Option<Vec<f64>>; SLOT_COUNT],
                        best: &mut Option<(HyperVector, f64)>,
                        evals: &mut u64|
     -> Result<()> {
        for cand in cartesian(values, mask) {
            let q = eval(&cand)?;
            *evals += 1;
            let replace = match best {
                None => true,
                Some((bp, bq)) => better(q, &cand, *bq, bp),
            };
            if replace {
                *best = Some((cand, q));
            }
        }
        Ok(())
    };

    // coarse pass over the full bracket
    let mut values: [Option<Vec<f64>>; SLOT_COUNT] = [None, None, None];
    for j in 0..SLOT_COUNT {
        if let Some(s) = &grid.slots[j] {
            values[j] = Some(s.linspace(s.lo, s.hi));
        }
    }
    run_pass(&values, &mut best, &mut evals)?;

    // zoomed re-grids centered on the incumbent, clipped to the bracket
    for level in 1..=grid.refine_levels {
        let (incumbent, _) = best.as_ref().expect("coarse pass evaluated at least one point");
        let mut values: [Option<Vec<f64>>; SLOT_COUNT] = [None, None, None];
        for j in 0..SLOT_COUNT {
            if let Some(s) = &grid.slots[j] {
                let width = (s.hi - s.lo) * grid.zoom.powi(level as i32);
                let center = incumbent.slot(j);
                let lo = (center - width / 2.0).max(s.lo);
                let hi = (center + width / 2.0).min(s.hi);
                values[j] = Some(s.linspace(lo, hi));
            }
        }
        run_pass(&values, &mut best, &mut evals)?;
    }

    let (p, q) = best.expect("search evaluated at least one point");
    Ok((p, q, evals))
}

fn psnr_objective<'a, F: crate::scalar::Scalar>(
    y: &'a Image<F>,
    x: &'a Image<F>,
    config: &'a DenoiserConfig,
    meta: Option<&'a PoissonMeta>,
) -> impl FnMut(&HyperVector) -> Result<f64> + 'a {
    move |p: &HyperVector| {
        let restored = denoise(y, config, p, meta)?;
        psnr(x, &restored)
    }
}

/// Hierarchical grid search for the PSNR-maximizing hyperparameters of one
/// degraded/clean pair.
pub fn hierarchical_search<F: crate::scalar::Scalar>(
    y: &Image<F>,
    x: &Image<F>,
    config: &DenoiserConfig,
    grid: &SearchGrid,
    meta: Option<&PoissonMeta>,
) -> Result<OracleLabel> {
    if !y.same_shape(x) {
        return Err(CoreError::ShapeMismatch("oracle search needs matching shapes".into()));
    }
    let mut eval = psnr_objective(y, x, config, meta);
    let (p_star, oracle_psnr, evals) = search_with(&mut eval, config.active_mask(), grid)?;
    Ok(OracleLabel {
        image_id: String::new(),
        noise_spec: NoiseSpec { components: vec![], seed: 0 },
        config: *config,
        p_star,
        oracle_psnr,
        evals,
    })
}

/// Exhaustive search over an explicit candidate list; same tie-breaking as
/// the hierarchical search.
pub fn exhaustive_search<F: crate::scalar::Scalar>(
    y: &Image<F>,
    x: &Image<F>,
    config: &DenoiserConfig,
    lattice: &[HyperVector],
    meta: Option<&PoissonMeta>,
) -> Result<OracleLabel> {
    if lattice.is_empty() {
        return Err(CoreError::EmptyInput("exhaustive search lattice".into()));
    }
    let mut eval = psnr_objective(y, x, config, meta);
    let mut best: Option<(HyperVector, f64)> = None;
    let mut evals = 0u64;
    for cand in lattice {
        if cand.mask() != config.active_mask() {
            return Err(CoreError::InvalidParam("lattice candidate mask mismatch".into()));
        }
        let q = eval(cand)?;
        evals += 1;
        let replace = match &best {
            None => true,
            Some((bp, bq)) => better(q, cand, *bq, bp),
        };
        if replace {
            best = Some((*cand, q));
        }
    }
    let (p_star, oracle_psnr) = best.expect("non-empty lattice");
    Ok(OracleLabel {
        image_id: String::new(),
        noise_spec: NoiseSpec { components: vec![], seed: 0 },
        config: *config,
        p_star,
        oracle_psnr,
        evals,
    })
}

/// One manifest row: where the clean image lives and how to degrade it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub image_id: String,
    pub path: PathBuf,
    pub noise_spec: NoiseSpec,
}

/// A failed label row; the run continues past these.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabelFailure {
    pub image_id: String,
    pub error: String,
}

/// Oracle labels for one configuration, sorted by image id.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LabelTable {
    pub rows: Vec<OracleLabel>,
}

impl LabelTable {
    /// Fraction of labels with any active slot on its bracket boundary;
    /// above 2% the bracket is too narrow.
    pub fn boundary_fraction(&self, grid: &SearchGrid) -> f64 {
        if self.rows.is_empty() {
            return 0.0;
        }
        let hits = self
            .rows
            .iter()
            .filter(|label| {
                grid.slots.iter().enumerate().any(|(j, s)| {
                    s.map_or(false, |s| {
                        let v = label.p_star.slot(j);
                        let scale = (s.hi - s.lo).abs().max(1e-12);
                        (v - s.lo).abs() <= 1e-9 * scale || (v - s.hi).abs() <= 1e-9 * scale
                    })
                })
            })
            .count();
        hits as f64 / self.rows.len() as f64
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut raw = Vec::new();
        raw.extend_from_slice(format!("# format_version: {LABEL_FORMAT_VERSION}\n").as_bytes());
        {
            let mut w = csv::Writer::from_writer(&mut raw);
            for label in &self.rows {
                w.serialize(CsvRow::from_label(label)?)
                    .map_err(|e| CoreError::Format(format!("label csv: {e}")))?;
            }
            w.flush().map_err(|e| CoreError::io(path, e))?;
        }
        std::fs::write(path, raw).map_err(|e| CoreError::io(path, e))
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<LabelTable> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
        let body: String = text
            .lines()
            .filter(|l| !l.starts_with('#'))
            .collect::<Vec<_>>()
            .join("\n");
        let mut reader = csv::Reader::from_reader(body.as_bytes());
        let mut rows = Vec::new();
        for record in reader.deserialize::<CsvRow>() {
            let record = record.map_err(|e| CoreError::Format(format!("label csv: {e}")))?;
            rows.push(record.into_label()?);
        }
        Ok(LabelTable { rows })
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    image_id: String,
    seed: u64,
    d: String,
    r: String,
    noise_json: String,
    p_delta: f64,
    p_log10_lambda: f64,
    p_gamma: f64,
    mask: String,
    oracle_psnr: f64,
    evals: u64,
}

impl CsvRow {
    fn from_label(label: &OracleLabel) -> Result<CsvRow> {
        Ok(CsvRow {
            image_id: label.image_id.clone(),
            seed: label.noise_spec.seed,
            d: label.config.data_term.as_str().to_string(),
            r: label.config.prior.as_str().to_string(),
            noise_json: serde_json::to_string(&label.noise_spec)
                .map_err(|e| CoreError::Format(format!("noise json: {e}")))?,
            p_delta: label.p_star.slot(SLOT_DELTA),
            p_log10_lambda: label.p_star.slot(SLOT_LAMBDA),
            p_gamma: label.p_star.slot(SLOT_GAMMA),
            mask: label.p_star.mask().to_bits(),
            oracle_psnr: label.oracle_psnr,
            evals: label.evals,
        })
    }

    fn into_label(self) -> Result<OracleLabel> {
        let config = DenoiserConfig::new(
            crate::hyper::DataTerm::parse(&self.d)?,
            crate::hyper::PriorTerm::parse(&self.r)?,
        );
        let mask = SlotMask::from_bits(&self.mask)?;
        let noise_spec: NoiseSpec = serde_json::from_str(&self.noise_json)
            .map_err(|e| CoreError::Format(format!("noise json: {e}")))?;
        Ok(OracleLabel {
            image_id: self.image_id,
            noise_spec,
            config,
            p_star: HyperVector::new(
                [self.p_delta, self.p_log10_lambda, self.p_gamma],
                mask,
                Domain::Learning,
            ),
            oracle_psnr: self.oracle_psnr,
            evals: self.evals,
        })
    }
}

/// Label every manifest row, distributing rows over `workers` threads
/// (0 = all available). Output rows are sorted by image id, so the table is
/// identical for any worker count. Unreadable rows are recorded as failures
/// and the run continues.
pub fn generate_labels(
    rows: &[ManifestRow],
    config: &DenoiserConfig,
    grid: &SearchGrid,
    workers: usize,
) -> Result<(LabelTable, Vec<LabelFailure>)> {
    grid.validate(config.active_mask())?;

    let label_row = |row: &ManifestRow| -> std::result::Result<OracleLabel, LabelFailure> {
        let fail = |e: CoreError| LabelFailure {
            image_id: row.image_id.clone(),
            error: e.to_string(),
        };
        let clean: Image<f64> = load_image(&row.path).map_err(fail)?;
        let y = apply_noise(&clean, &row.noise_spec);
        let meta = row.noise_spec.poisson_meta();
        let mut label =
            hierarchical_search(&y, &clean, config, grid, meta.as_ref()).map_err(fail)?;
        label.image_id = row.image_id.clone();
        label.noise_spec = row.noise_spec.clone();
        Ok(label)
    };

    let results: Vec<std::result::Result<OracleLabel, LabelFailure>> = if workers == 1 {
        rows.iter().map(label_row).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| CoreError::Format(format!("worker pool: {e}")))?;
        pool.install(|| rows.par_iter().map(label_row).collect())
    };

    let mut table = LabelTable::default();
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(label) => table.rows.push(label),
            Err(f) => failures.push(f),
        }
    }
    table.rows.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    failures.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    Ok((table, failures))
}
