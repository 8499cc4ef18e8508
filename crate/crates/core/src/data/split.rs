use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fingerprint::Fingerprinter;
use crate::rng;

/// Row-level train/test partition. Both index lists are sorted.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub n: usize,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    /// Identifies the train membership (and `n`).
    pub fn membership_fingerprint(&self) -> String {
        let mut f = Fingerprinter::new("split-membership");
        f.u64(self.n as u64).usizes(&self.train);
        f.finish()
    }
}

/// Seeded random partition with exactly `⌊ratio·n⌋` training rows.
pub fn split(n: usize, ratio: f64, seed: u64) -> Result<Split> {
    if n < 2 {
        return Err(Error::Input(format!("cannot split {n} rows; need at least 2")));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Config(format!("split ratio must lie in (0, 1), got {ratio}")));
    }
    // The epsilon keeps e.g. 0.7·10 from flooring to 6.
    let n_train = ((ratio * n as f64) + 1e-9).floor() as usize;
    if n_train == 0 || n_train == n {
        return Err(Error::Input(format!(
            "ratio {ratio} leaves an empty side when splitting {n} rows"
        )));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng::stream(seed, "split"));
    let mut train = perm[..n_train].to_vec();
    let mut test = perm[n_train..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok(Split { n, train, test })
}
