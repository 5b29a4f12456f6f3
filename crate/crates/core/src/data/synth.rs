//! Synthetic multimodal bags.
//!
//! Each class is identified by two binary factors. Factor A is carried
//! mostly by the patch features, factor B mostly by the clinical vector;
//! each modality also leaks a weaker copy of the other factor. Neither
//! modality alone separates all four classes well.

use std::fs;
use std::path::Path;

use rand::seq::index::sample;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::bag::{write_bag, FeatureBag};
use super::clinical::{default_indicators, Indicator, IndicatorKind};
use super::manifest::{CaseEntry, DatasetManifest, GeneratorEcho, MANIFEST_FILE};
use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::rng::{stream, Rng};
use crate::subtype::{Subtype, NUM_CLASSES};

/// Image-dominant factor per class (PV, ET, PrePMF, PMF).
pub const FACTOR_A: [f64; NUM_CLASSES] = [-1.0, -1.0, 1.0, 1.0];
/// Clinical-dominant factor per class.
pub const FACTOR_B: [f64; NUM_CLASSES] = [1.0, -1.0, -1.0, 1.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    /// Cases per class in PV, ET, PrePMF, PMF order.
    pub counts: [usize; NUM_CLASSES],
    pub min_patches: usize,
    pub max_patches: usize,
    pub feature_dim: usize,
    pub clinical_dim: usize,
    /// Fraction of patches in a bag that carry the class shift.
    pub signal_fraction: f64,
    /// Shift of factor A on its feature block, in noise units.
    pub image_signal: f64,
    /// Relative strength of factor B in the image.
    pub image_leak: f64,
    /// Shift of factor B on the clinical indicators, in indicator SDs.
    pub clinical_signal: f64,
    /// Relative strength of factor A in the clinical vector.
    pub clinical_leak: f64,
    /// Standard deviation of the per-value Gaussian noise.
    pub noise: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            counts: [81, 126, 88, 88],
            min_patches: 8,
            max_patches: 32,
            feature_dim: 64,
            clinical_dim: 10,
            signal_fraction: 0.25,
            image_signal: 1.5,
            image_leak: 0.25,
            clinical_signal: 1.5,
            clinical_leak: 0.25,
            noise: 1.0,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::config(msg));
        if let Some(k) = self.counts.iter().position(|&c| c == 0) {
            return bad(format!("class {} has no cases", Subtype::ALL[k]));
        }
        if self.min_patches == 0 || self.max_patches < self.min_patches {
            return bad(format!("invalid patch range {}..={}", self.min_patches, self.max_patches));
        }
        if self.feature_dim < 4 {
            return bad(format!("feature_dim {} is below 4", self.feature_dim));
        }
        if self.clinical_dim < 4 {
            return bad(format!("clinical_dim {} is below 4", self.clinical_dim));
        }
        if !(self.signal_fraction > 0.0 && self.signal_fraction <= 1.0) {
            return bad(format!("signal_fraction {} outside (0, 1]", self.signal_fraction));
        }
        for (name, v) in [
            ("image_signal", self.image_signal),
            ("clinical_signal", self.clinical_signal),
            ("noise", self.noise),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        for (name, v) in [("image_leak", self.image_leak), ("clinical_leak", self.clinical_leak)] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} {v} outside [0, 1]"));
            }
        }
        Ok(())
    }

    pub fn total_cases(&self) -> usize {
        self.counts.iter().sum()
    }

    /// Width of each factor's feature block.
    pub fn block_width(&self) -> usize {
        (self.feature_dim / 8).max(1)
    }

    /// Mean feature shift of a signal patch of class `k`.
    pub fn class_shift(&self, k: usize) -> Vec<f64> {
        let bw = self.block_width();
        let mut mu = vec![0.0; self.feature_dim];
        mu[..bw].fill(self.image_signal * FACTOR_A[k]);
        mu[bw..2 * bw].fill(self.image_signal * self.image_leak * FACTOR_B[k]);
        mu
    }

    pub fn indicators(&self) -> Vec<Indicator> {
        let mut ind = default_indicators();
        ind.truncate(self.clinical_dim);
        for i in ind.len()..self.clinical_dim {
            ind.push(Indicator {
                name: format!("extra_{i}"),
                kind: IndicatorKind::Continuous,
            });
        }
        ind
    }
}

/// How one indicator depends on the class factors.
struct Profile {
    /// Mean (continuous) or logit (mutation).
    base: f64,
    sd: f64,
    load_b: f64,
    load_a: f64,
}

fn profile(name: &str) -> Profile {
    let p = |base, sd, load_b, load_a| Profile { base, sd, load_b, load_a };
    match name {
        "age" => p(60.0, 12.0, 0.0, 0.5),
        "hemoglobin" => p(140.0, 15.0, 1.0, 0.0),
        "white_blood_cell" => p(9.0, 2.5, 0.0, 0.6),
        "red_cell_mass" => p(30.0, 4.0, 0.9, 0.0),
        "hematocrit" => p(0.45, 0.04, 0.9, 0.0),
        "platelet_count" => p(600.0, 150.0, -0.7, 0.4),
        "jak2" => p(0.5, 1.0, 1.0, 0.0),
        "mpl" => p(-2.0, 1.0, -0.5, 0.0),
        "calr" => p(-1.0, 1.0, -1.0, 0.0),
        _ => p(0.0, 1.0, 0.0, 0.0),
    }
}

fn normal(rng: &mut Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn clinical_row(cfg: &GenConfig, indicators: &[Indicator], k: usize, rng: &mut Rng) -> Vec<f64> {
    indicators
        .iter()
        .map(|ind| {
            if ind.name == "gender" {
                return f64::from(rng.random_bool(0.5));
            }
            let p = profile(&ind.name);
            let shift = cfg.clinical_signal * (p.load_b * FACTOR_B[k] + cfg.clinical_leak * p.load_a * FACTOR_A[k]);
            match ind.kind {
                IndicatorKind::Mutation => {
                    let prob = crate::numerics::sigmoid(p.base + shift);
                    f64::from(rng.random_bool(prob))
                }
                IndicatorKind::Continuous => (p.base + p.sd * (shift + cfg.noise * normal(rng))).max(0.0),
            }
        })
        .collect()
}

fn features(cfg: &GenConfig, k: usize, rng: &mut Rng) -> Result<Matrix> {
    let n = rng.random_range(cfg.min_patches..=cfg.max_patches);
    let l = cfg.feature_dim;
    let n_signal = ((cfg.signal_fraction * n as f64).round() as usize).clamp(1, n);
    let mu = cfg.class_shift(k);
    let mut data: Vec<f64> = (0..n * l).map(|_| cfg.noise * normal(rng)).collect();
    for i in sample(rng, n, n_signal) {
        for (v, m) in data[i * l..(i + 1) * l].iter_mut().zip(&mu) {
            *v += m;
        }
    }
    Matrix::new(n, l, data)
}

/// Generates raw bags (clinical values in physical units) and an unsplit
/// manifest. Cases are numbered in class order.
pub fn generate_synthetic(cfg: &GenConfig, seed: u64) -> Result<(Vec<FeatureBag>, DatasetManifest)> {
    cfg.validate()?;
    let indicators = cfg.indicators();
    let mut bags = Vec::with_capacity(cfg.total_cases());
    let mut cases = Vec::with_capacity(cfg.total_cases());
    for (k, label) in Subtype::ALL.into_iter().enumerate() {
        for _ in 0..cfg.counts[k] {
            let case_id = format!("case_{:04}", bags.len());
            let mut rng = stream(seed, "generate", &[case_id.as_bytes()]);
            let features = features(cfg, k, &mut rng)?;
            let clinical = clinical_row(cfg, &indicators, k, &mut rng);
            cases.push(CaseEntry {
                bag: format!("bags/{case_id}.dscb"),
                case_id: case_id.clone(),
                label,
                split: None,
            });
            bags.push(FeatureBag {
                case_id,
                features,
                clinical,
                label,
            });
        }
    }
    let manifest = DatasetManifest {
        feature_dim: cfg.feature_dim,
        clinical_dim: cfg.clinical_dim,
        indicators,
        normalization: None,
        split_seed: None,
        generator: Some(GeneratorEcho {
            seed,
            config: cfg.clone(),
        }),
        cases,
    };
    Ok((bags, manifest))
}

/// Writes bag files and `manifest.json` under `dir`.
pub fn write_dataset(dir: &Path, bags: &[FeatureBag], manifest: &DatasetManifest) -> Result<()> {
    manifest.validate()?;
    if bags.len() != manifest.cases.len() {
        return Err(Error::config("bag list does not match manifest cases"));
    }
    for case in &manifest.cases {
        if let Some(parent) = manifest.bag_path(dir, case).parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    for (bag, case) in bags.iter().zip(&manifest.cases) {
        write_bag(&manifest.bag_path(dir, case), bag)?;
    }
    manifest.save(&dir.join(MANIFEST_FILE))
}
