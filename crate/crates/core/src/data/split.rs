use std::fmt;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::stream;
use crate::subtype::{Subtype, NUM_CLASSES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::config(format!("unknown split {s:?} (expected train|val|test)")))
    }
}

/// Smallest class size the split accepts.
pub const MIN_CLASS_SIZE: usize = 5;

/// `(train, val, test)` counts for a class of `n` cases: val and test are
/// each `round_half_up(n / 5)`, train takes the remainder.
pub fn split_sizes(n: usize) -> Result<(usize, usize, usize)> {
    if n < MIN_CLASS_SIZE {
        return Err(Error::config(format!(
            "class with {n} cases is too small to split (need at least {MIN_CLASS_SIZE})"
        )));
    }
    let held_out = (2 * n + 5) / 10;
    Ok((n - 2 * held_out, held_out, held_out))
}

/// Per-class 6:2:2 assignment with a seeded shuffle inside each class.
/// The output is aligned with `labels`.
pub fn stratified_split(labels: &[Subtype], seed: u64) -> Result<Vec<Split>> {
    let mut out = vec![Split::Train; labels.len()];
    for class in Subtype::ALL {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if members.is_empty() {
            continue;
        }
        let (_, val, test) = split_sizes(members.len())
            .map_err(|e| Error::config(format!("{class}: {e}")))?;
        members.shuffle(&mut stream(seed, "split", &[class.name().as_bytes()]));
        for (rank, &i) in members.iter().enumerate() {
            out[i] = if rank < test {
                Split::Test
            } else if rank < test + val {
                Split::Val
            } else {
                Split::Train
            };
        }
    }
    Ok(out)
}

/// Case counts per split and class.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SplitTable {
    /// `[split][class]`, splits in train/val/test order.
    pub counts: [[usize; NUM_CLASSES]; 3],
}

impl SplitTable {
    pub fn from_assignment(labels: &[Subtype], splits: &[Split]) -> Self {
        let mut t = SplitTable::default();
        for (l, s) in labels.iter().zip(splits) {
            let row = Split::ALL.iter().position(|x| x == s).expect("known split");
            t.counts[row][l.index()] += 1;
        }
        t
    }

    pub fn row(&self, split: Split) -> [usize; NUM_CLASSES] {
        self.counts[Split::ALL.iter().position(|x| *x == split).expect("known split")]
    }

    pub fn total(&self, split: Split) -> usize {
        self.row(split).iter().sum()
    }
}

impl fmt::Display for SplitTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:<20}", "")?;
        for c in Subtype::ALL {
            write!(f, "{:>8}", c.name())?;
        }
        writeln!(f, "{:>8}", "sum")?;
        for (split, label) in Split::ALL.iter().zip(["Train dataset", "Validation dataset", "Test dataset"]) {
            write!(f, "{label:<20}")?;
            for v in self.row(*split) {
                write!(f, "{v:>8}")?;
            }
            writeln!(f, "{:>8}", self.total(*split))?;
        }
        Ok(())
    }
}
