//! Binary bag file.
//!
//! ```text
//! "DSCB" | u32 version=1 | u32 N | u32 L | u32 m | u32 label
//! f32[N*L] features (row-major) | f32[m] clinical | u16 id_len | id (UTF-8)
//! ```
//!
//! All integers are unsigned little-endian.

use std::fs;
use std::path::Path;

use crate::binio::{put_f32s, put_str16, put_u32, read_str16, Reader};
use crate::error::{Error, FormatError, Result};
use crate::numerics::Matrix;
use crate::subtype::Subtype;

pub const BAG_VERSION: u32 = 1;
const MAGIC: [u8; 4] = *b"DSCB";
const HEADER_LEN: usize = 24;

/// One case: patch features, clinical indicators and label.
///
/// Clinical values are stored as recorded; they are normalized to `[0, 1]`
/// when a dataset split is loaded for training.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBag {
    pub case_id: String,
    /// N x L
    pub features: Matrix,
    pub clinical: Vec<f64>,
    pub label: Subtype,
}

impl FeatureBag {
    pub fn n_patches(&self) -> usize {
        self.features.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    /// Same bag with every value rounded through f32, i.e. what a write/read
    /// cycle produces.
    pub fn narrowed(&self) -> FeatureBag {
        let narrow = |v: f64| v as f32 as f64;
        FeatureBag {
            case_id: self.case_id.clone(),
            features: self.features.map(narrow),
            clinical: self.clinical.iter().copied().map(narrow).collect(),
            label: self.label,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        if self.clinical.is_empty() {
            return Err(Error::config(format!("bag {} has no clinical values", self.case_id)));
        }
        let (n, l) = self.features.shape();
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * (n * l + self.clinical.len()) + 2 + self.case_id.len());
        out.extend_from_slice(&MAGIC);
        for v in [BAG_VERSION, n as u32, l as u32, self.clinical.len() as u32, self.label.index() as u32] {
            put_u32(&mut out, v);
        }
        put_f32s(&mut out, self.features.as_slice());
        put_f32s(&mut out, &self.clinical);
        put_str16(&mut out, &self.case_id)?;
        Ok(out)
    }

    /// Parses a bag file.
    ///
    /// A payload whose length is consistent with a complete file of a
    /// different shape is reported as [`FormatError::ShapeMismatch`]; any
    /// other short payload is [`FormatError::Truncated`].
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(MAGIC)?;
        let version = r.u32("version")?;
        if version != BAG_VERSION {
            return Err(FormatError::UnsupportedVersion(version).into());
        }
        let n = r.u32("N")? as usize;
        let l = r.u32("L")? as usize;
        let m = r.u32("m")? as usize;
        let label = r.u32("label")? as usize;
        for (field, v) in [("N", n), ("L", l), ("m", m)] {
            if v == 0 {
                return Err(FormatError::InvalidHeader {
                    field,
                    reason: "must be at least 1".into(),
                }
                .into());
            }
        }
        let label = Subtype::from_index(label).map_err(|_| FormatError::InvalidHeader {
            field: "label",
            reason: format!("{label} is not a class index"),
        })?;

        let declared = n
            .checked_mul(l)
            .and_then(|nl| nl.checked_add(m))
            .ok_or(FormatError::InvalidHeader {
                field: "N",
                reason: "shape overflow".into(),
            })?;
        check_payload(&bytes[HEADER_LEN..], declared, l, m)?;

        let features = Matrix::new(n, l, r.f32s(n * l, "features")?)?;
        let clinical = r.f32s(m, "clinical")?;
        if let Some((index, &value)) = clinical.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite { index, value });
        }
        let case_id = read_str16(&mut r, "case id")?;
        r.finish()?;
        Ok(FeatureBag {
            case_id,
            features,
            clinical,
            label,
        })
    }
}

/// Distinguishes a header/payload disagreement from a truncated file.
fn check_payload(payload: &[u8], declared_values: usize, l: usize, m: usize) -> Result<(), FormatError> {
    let values_bytes = declared_values.saturating_mul(4);
    if let Some(len_bytes) = payload.get(values_bytes..values_bytes.saturating_add(2)) {
        let id_len = u16::from_le_bytes([len_bytes[0], len_bytes[1]]) as usize;
        if values_bytes + 2 + id_len == payload.len() {
            return Ok(());
        }
    }
    // Look for a self-consistent tail `u16 k | k bytes of UTF-8` that would
    // make this a complete file with a different patch count.
    let max_id = payload.len().saturating_sub(2).min(u16::MAX as usize);
    for k in (0..=max_id).filter(|_| payload.len() >= 2) {
        let start = payload.len() - 2 - k;
        let prefix = u16::from_le_bytes([payload[start], payload[start + 1]]) as usize;
        let values = start / 4;
        let other_shape = start.is_multiple_of(4) && values > m && (values - m).is_multiple_of(l);
        if prefix == k && other_shape && std::str::from_utf8(&payload[start + 2..]).is_ok() {
            return Err(FormatError::ShapeMismatch {
                what: "bag values (N*L + m)",
                declared: declared_values,
                actual: start / 4,
            });
        }
    }
    Err(FormatError::Truncated {
        what: "bag payload",
        needed: values_bytes + 2,
        available: payload.len(),
    })
}

pub fn write_bag(path: &Path, bag: &FeatureBag) -> Result<()> {
    fs::write(path, bag.to_bytes()?).map_err(|e| Error::io(path, e))
}

pub fn read_bag(path: &Path) -> Result<FeatureBag> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    FeatureBag::from_bytes(&bytes).map_err(|e| match e {
        Error::BadFormat(source) => Error::Format {
            path: path.to_path_buf(),
            source,
        },
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> FeatureBag {
        FeatureBag {
            case_id: "case_0042".into(),
            features: Matrix::new(3, 4, (0..12).map(|i| i as f64 * 0.1 - 0.5).collect()).unwrap(),
            clinical: vec![0.0, 1.0, 142.5],
            label: Subtype::PrePmf,
        }
    }

    fn format_err(bytes: &[u8]) -> FormatError {
        match FeatureBag::from_bytes(bytes) {
            Err(Error::BadFormat(e)) => e,
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn round_trip_is_f32_exact() {
        let bag = sample();
        let bytes = bag.to_bytes().unwrap();
        assert_eq!(&bytes[..4], b"DSCB");
        assert_eq!(bytes.len(), 24 + 4 * 15 + 2 + 9);
        let back = FeatureBag::from_bytes(&bytes).unwrap();
        assert_eq!(back, bag.narrowed());
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn header_layout() {
        let bytes = sample().to_bytes().unwrap();
        let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
        assert_eq!([word(4), word(8), word(12), word(16), word(20)], [1, 3, 4, 3, 2]);
    }

    #[test]
    fn truncation_is_reported() {
        let bytes = sample().to_bytes().unwrap();
        for cut in [0, 2, 4, 13, 23, 24, 40, bytes.len() - 9, bytes.len() - 1] {
            assert!(
                matches!(format_err(&bytes[..cut]), FormatError::Truncated { .. }),
                "cut at {cut}"
            );
        }
    }

    #[test]
    fn header_payload_disagreement_is_a_shape_error() {
        let mut bytes = sample().to_bytes().unwrap();
        bytes[8..12].copy_from_slice(&4u32.to_le_bytes());
        assert!(matches!(
            format_err(&bytes),
            FormatError::ShapeMismatch { declared: 19, actual: 15, .. }
        ));
        bytes[8..12].copy_from_slice(&2u32.to_le_bytes());
        assert!(matches!(format_err(&bytes), FormatError::ShapeMismatch { .. }));
    }

    #[test]
    fn bad_magic_version_and_label() {
        let bytes = sample().to_bytes().unwrap();
        let mut b = bytes.clone();
        b[..4].copy_from_slice(b"DSCK");
        assert!(matches!(format_err(&b), FormatError::BadMagic { .. }));
        let mut b = bytes.clone();
        b[4] = 2;
        assert!(matches!(format_err(&b), FormatError::UnsupportedVersion(2)));
        let mut b = bytes.clone();
        b[20] = 7;
        assert!(matches!(format_err(&b), FormatError::InvalidHeader { field: "label", .. }));
        let mut b = bytes;
        b[8] = 0;
        assert!(matches!(format_err(&b), FormatError::InvalidHeader { field: "N", .. }));
    }
}
