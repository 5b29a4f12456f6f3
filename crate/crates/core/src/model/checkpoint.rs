//! Parameter checkpoint container.
//!
//! Layout (all integers little-endian u32 unless noted):
//!
//! ```text
//! "DSCK" | version | header_len | header JSON (config + selection)
//! tensor_count | { u16 name_len | name | rows | cols | f32[rows*cols] }*
//! ```
//!
//! Values are stored as f32 and widened to f64 on load.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelParams};
use crate::binio::{put_f32s, put_str16, put_u32, read_str16, Reader};
use crate::error::{Error, FormatError, Result};
use crate::numerics::{Matrix, Parameters};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: [u8; 4] = *b"DSCK";

/// How the stored parameters were chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub criterion: String,
    pub epoch: usize,
    pub value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub selection: Option<Selection>,
    pub params: ModelParams,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    selection: Option<Selection>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        if !self.params.matches(&self.config) {
            return Err(Error::config("checkpoint parameters do not match their config"));
        }
        let header = serde_json::to_vec(&Header {
            config: self.config,
            selection: self.selection.clone(),
        })?;
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        put_u32(&mut out, CHECKPOINT_VERSION);
        put_u32(&mut out, header.len() as u32);
        out.extend_from_slice(&header);
        let tensors = self.params.tensors();
        put_u32(&mut out, tensors.len() as u32);
        for (name, m) in tensors {
            put_str16(&mut out, &name)?;
            put_u32(&mut out, m.rows() as u32);
            put_u32(&mut out, m.cols() as u32);
            put_f32s(&mut out, m.as_slice());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(MAGIC)?;
        let version = r.u32("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(FormatError::UnsupportedVersion(version).into());
        }
        let header_len = r.u32("header length")? as usize;
        let header: Header = serde_json::from_slice(r.take(header_len, "header")?)?;
        header.config.validate()?;

        let mut params = ModelParams::zeros(&header.config);
        let count = r.u32("tensor count")? as usize;
        let mut slots = params.tensors_mut();
        if count != slots.len() {
            return Err(FormatError::ShapeMismatch {
                what: "tensor count",
                declared: count,
                actual: slots.len(),
            }
            .into());
        }
        for (expected_name, slot) in slots.iter_mut() {
            let name = read_str16(&mut r, "tensor name")?;
            if &name != expected_name {
                return Err(FormatError::InvalidHeader {
                    field: "tensor name",
                    reason: format!("expected {expected_name}, found {name}"),
                }
                .into());
            }
            let rows = r.u32("tensor rows")? as usize;
            let cols = r.u32("tensor cols")? as usize;
            if (rows, cols) != slot.shape() {
                return Err(FormatError::ShapeMismatch {
                    what: "tensor shape",
                    declared: rows * cols,
                    actual: slot.len(),
                }
                .into());
            }
            **slot = Matrix::new(rows, cols, r.f32s(rows * cols, "tensor values")?)?;
        }
        r.finish()?;
        drop(slots);
        Ok(Self {
            config: header.config,
            selection: header.selection,
            params,
        })
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    fs::write(path, ckpt.to_bytes()?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes).map_err(|e| match e {
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
    use crate::model::Variant;

    fn sample() -> Checkpoint {
        let config = ModelConfig::new(8, 3, Variant::NO_DS);
        Checkpoint {
            config,
            selection: Some(Selection {
                criterion: "val_macro_auc".into(),
                epoch: 4,
                value: Some(0.75),
            }),
            params: ModelParams::init(&config, 9).unwrap(),
        }
    }

    #[test]
    fn round_trip_is_exact_modulo_f32_narrowing() {
        let ckpt = sample();
        let bytes = ckpt.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.config, ckpt.config);
        assert_eq!(back.selection, ckpt.selection);
        for ((_, a), (_, b)) in back.params.tensors().iter().zip(ckpt.params.tensors()) {
            for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
                assert_eq!(*x, *y as f32 as f64);
            }
        }
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn corrupt_inputs_are_typed_errors() {
        let bytes = sample().to_bytes().unwrap();
        for cut in [0, 3, 10, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(
                Checkpoint::from_bytes(&bytes[..cut]),
                Err(Error::BadFormat(FormatError::Truncated { .. }))
            ));
        }
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(
            Checkpoint::from_bytes(&bad),
            Err(Error::BadFormat(FormatError::BadMagic { .. }))
        ));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(
            Checkpoint::from_bytes(&bad),
            Err(Error::BadFormat(FormatError::UnsupportedVersion(9)))
        ));
        let mut long = bytes;
        long.push(0);
        assert!(matches!(
            Checkpoint::from_bytes(&long),
            Err(Error::BadFormat(FormatError::TrailingBytes(1)))
        ));
    }
}
