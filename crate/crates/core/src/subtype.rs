use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NUM_CLASSES: usize = 4;

/// Diagnostic subtype, encoded as `PV=0, ET=1, PrePMF=2, PMF=3`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Subtype {
    #[serde(rename = "PV")]
    Pv,
    #[serde(rename = "ET")]
    Et,
    #[serde(rename = "PrePMF")]
    PrePmf,
    #[serde(rename = "PMF")]
    Pmf,
}

impl Subtype {
    pub const ALL: [Subtype; NUM_CLASSES] = [Subtype::Pv, Subtype::Et, Subtype::PrePmf, Subtype::Pmf];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Result<Self> {
        Self::ALL.get(i).copied().ok_or(Error::LabelOutOfRange(i))
    }

    pub fn name(self) -> &'static str {
        match self {
            Subtype::Pv => "PV",
            Subtype::Et => "ET",
            Subtype::PrePmf => "PrePMF",
            Subtype::Pmf => "PMF",
        }
    }
}

impl fmt::Display for Subtype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Subtype {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::config(format!("unknown subtype {s:?}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_round_trip() {
        for (i, s) in Subtype::ALL.iter().enumerate() {
            assert_eq!(s.index(), i);
            assert_eq!(Subtype::from_index(i).unwrap(), *s);
            assert_eq!(s.name().parse::<Subtype>().unwrap(), *s);
        }
        assert!(matches!(Subtype::from_index(4), Err(Error::LabelOutOfRange(4))));
        assert_eq!(serde_json::to_string(&Subtype::PrePmf).unwrap(), "\"PrePMF\"");
    }
}
