use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::bag::{read_bag, FeatureBag};
use super::clinical::{normalize_row, Indicator, MinMax};
use super::split::{stratified_split, Split, SplitTable};
use super::synth::GenConfig;
use crate::error::{Error, Result};
use crate::subtype::Subtype;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseEntry {
    pub case_id: String,
    pub label: Subtype,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
    /// Bag file path relative to the manifest's directory.
    pub bag: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorEcho {
    pub seed: u64,
    pub config: GenConfig,
}

/// Case list, split assignment and clinical normalization statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub feature_dim: usize,
    pub clinical_dim: usize,
    pub indicators: Vec<Indicator>,
    /// Per-indicator min/max over the train split.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normalization: Option<Vec<MinMax>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split_seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<GeneratorEcho>,
    pub cases: Vec<CaseEntry>,
}

/// Normalized bags of one dataset, by split.
#[derive(Debug, Clone, Default)]
pub struct SplitData {
    pub train: Vec<FeatureBag>,
    pub val: Vec<FeatureBag>,
    pub test: Vec<FeatureBag>,
}

impl SplitData {
    pub fn get(&self, split: Split) -> &[FeatureBag] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }
}

impl DatasetManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: Self = serde_json::from_str(&text)?;
        m.validate()?;
        Ok(m)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    /// SHA-256 of the serialized manifest, hex encoded.
    pub fn hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_json()?.as_bytes())))
    }

    pub fn validate(&self) -> Result<()> {
        if self.indicators.len() != self.clinical_dim {
            return Err(Error::config(format!(
                "manifest declares {} indicators for clinical_dim {}",
                self.indicators.len(),
                self.clinical_dim
            )));
        }
        if let Some(stats) = &self.normalization {
            if stats.len() != self.clinical_dim {
                return Err(Error::config("normalization stats do not match clinical_dim"));
            }
        }
        let mut ids: Vec<&str> = self.cases.iter().map(|c| c.case_id.as_str()).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::config("duplicate case ids in manifest"));
        }
        Ok(())
    }

    pub fn labels(&self) -> Vec<Subtype> {
        self.cases.iter().map(|c| c.label).collect()
    }

    pub fn is_split(&self) -> bool {
        !self.cases.is_empty() && self.cases.iter().all(|c| c.split.is_some())
    }

    pub fn split_table(&self) -> Option<SplitTable> {
        let splits: Option<Vec<Split>> = self.cases.iter().map(|c| c.split).collect();
        Some(SplitTable::from_assignment(&self.labels(), &splits?))
    }

    /// Assigns splits and computes train-only normalization statistics.
    /// `bags` holds the raw bags aligned with `cases`.
    pub fn assign_splits(&mut self, bags: &[FeatureBag], seed: u64, force: bool) -> Result<SplitTable> {
        if !force && self.cases.iter().any(|c| c.split.is_some()) {
            return Err(Error::config("manifest is already split (use force to re-split)"));
        }
        if bags.len() != self.cases.len() {
            return Err(Error::config("bag list does not match manifest cases"));
        }
        for (b, c) in bags.iter().zip(&self.cases) {
            if b.case_id != c.case_id || b.label != c.label {
                return Err(Error::config(format!("bag {} disagrees with manifest entry {}", b.case_id, c.case_id)));
            }
        }
        let labels = self.labels();
        let splits = stratified_split(&labels, seed)?;
        let stats = (0..self.clinical_dim)
            .map(|j| {
                MinMax::of(
                    bags.iter()
                        .zip(&splits)
                        .filter(|(_, s)| **s == Split::Train)
                        .map(|(b, _)| b.clinical[j]),
                )
                .ok_or_else(|| Error::config("train split is empty"))
            })
            .collect::<Result<Vec<_>>>()?;
        for (c, s) in self.cases.iter_mut().zip(&splits) {
            c.split = Some(*s);
        }
        self.normalization = Some(stats);
        self.split_seed = Some(seed);
        Ok(SplitTable::from_assignment(&labels, &splits))
    }

    /// Copy of `bag` with clinical values normalized by the manifest stats.
    pub fn normalize(&self, bag: &FeatureBag) -> Result<FeatureBag> {
        let stats = self
            .normalization
            .as_ref()
            .ok_or_else(|| Error::config("manifest has no normalization statistics; run split first"))?;
        if bag.feature_dim() != self.feature_dim {
            return Err(Error::config(format!(
                "bag {} has feature width {}, manifest declares {}",
                bag.case_id,
                bag.feature_dim(),
                self.feature_dim
            )));
        }
        Ok(FeatureBag {
            clinical: normalize_row(&bag.case_id, &bag.clinical, &self.indicators, stats)?,
            ..bag.clone()
        })
    }

    /// Normalizes in-memory raw bags (aligned with `cases`) into splits.
    pub fn partition(&self, bags: &[FeatureBag]) -> Result<SplitData> {
        let mut out = SplitData::default();
        for (bag, case) in bags.iter().zip(&self.cases) {
            let split = case
                .split
                .ok_or_else(|| Error::config(format!("case {} has no split", case.case_id)))?;
            let b = self.normalize(bag)?;
            match split {
                Split::Train => out.train.push(b),
                Split::Val => out.val.push(b),
                Split::Test => out.test.push(b),
            }
        }
        Ok(out)
    }

    pub fn bag_path(&self, root: &Path, case: &CaseEntry) -> PathBuf {
        root.join(&case.bag)
    }

    /// Reads every bag file as stored, in manifest order.
    pub fn read_raw_bags(&self, root: &Path) -> Result<Vec<FeatureBag>> {
        self.cases
            .par_iter()
            .map(|c| {
                let bag = read_bag(&self.bag_path(root, c))?;
                if bag.case_id != c.case_id || bag.label != c.label {
                    return Err(Error::config(format!(
                        "bag file {} holds case {} ({}), manifest expects {} ({})",
                        c.bag, bag.case_id, bag.label, c.case_id, c.label
                    )));
                }
                Ok(bag)
            })
            .collect()
    }

    /// Reads and normalizes the bags of one split.
    pub fn load_split(&self, root: &Path, split: Split) -> Result<Vec<FeatureBag>> {
        self.cases
            .par_iter()
            .filter(|c| c.split == Some(split))
            .map(|c| self.normalize(&read_bag(&self.bag_path(root, c))?))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::{generate_synthetic, write_dataset};
    use crate::data::IndicatorKind;

    fn small() -> GenConfig {
        GenConfig {
            counts: [6, 7, 5, 8],
            feature_dim: 8,
            min_patches: 2,
            max_patches: 4,
            ..GenConfig::default()
        }
    }

    #[test]
    fn split_normalizes_with_train_stats() {
        let (bags, mut m) = generate_synthetic(&small(), 2).unwrap();
        assert!(m.normalize(&bags[0]).is_err());
        let table = m.assign_splits(&bags, 11, false).unwrap();
        assert_eq!(table.total(Split::Train) + table.total(Split::Val) + table.total(Split::Test), 26);
        assert!(m.is_split());
        assert!(matches!(m.assign_splits(&bags, 11, false), Err(Error::Config(_))));

        let data = m.partition(&bags).unwrap();
        assert_eq!(data.train.len(), table.total(Split::Train));
        for split in Split::ALL {
            for b in data.get(split) {
                for (v, ind) in b.clinical.iter().zip(&m.indicators) {
                    assert!((0.0..=1.0).contains(v));
                    if ind.kind == IndicatorKind::Mutation {
                        assert!(*v == 0.0 || *v == 1.0);
                    }
                }
            }
        }
        // Train-split extremes map to exactly 0 and 1.
        let age: Vec<f64> = data.train.iter().map(|b| b.clinical[1]).collect();
        assert_eq!(age.iter().cloned().fold(f64::INFINITY, f64::min), 0.0);
        assert_eq!(age.iter().cloned().fold(f64::NEG_INFINITY, f64::max), 1.0);
    }

    #[test]
    fn disk_round_trip_and_hash() {
        let dir = tempfile::tempdir().unwrap();
        let (bags, mut m) = generate_synthetic(&small(), 3).unwrap();
        m.assign_splits(&bags, 1, false).unwrap();
        write_dataset(dir.path(), &bags, &m).unwrap();
        let loaded = DatasetManifest::load(&dir.path().join(MANIFEST_FILE)).unwrap();
        assert_eq!(loaded, m);
        assert_eq!(loaded.hash().unwrap(), m.hash().unwrap());
        assert_eq!(loaded.hash().unwrap().len(), 64);

        let raw = loaded.read_raw_bags(dir.path()).unwrap();
        let expected: Vec<_> = bags.iter().map(FeatureBag::narrowed).collect();
        assert_eq!(raw, expected);
        let val = loaded.load_split(dir.path(), Split::Val).unwrap();
        assert_eq!(val, loaded.partition(&raw).unwrap().val);

        let mut other = m.clone();
        other.split_seed = Some(2);
        assert_ne!(other.hash().unwrap(), m.hash().unwrap());
    }

    #[test]
    fn inconsistent_manifests_are_rejected() {
        let (bags, m) = generate_synthetic(&small(), 3).unwrap();
        let mut dup = m.clone();
        dup.cases[1].case_id = dup.cases[0].case_id.clone();
        assert!(dup.validate().is_err());
        let mut short = m.clone();
        short.indicators.pop();
        assert!(short.validate().is_err());
        let mut swapped = m;
        assert!(swapped.assign_splits(&bags[1..], 0, false).is_err());
    }
}
