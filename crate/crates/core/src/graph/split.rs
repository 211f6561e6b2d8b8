use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};

pub const DEFAULT_PROPORTIONS: [f64; 3] = [0.8, 0.1, 0.1];

/// Disjoint train/validation/test index lists over a dataset.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetSplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Uniformly random partition of `0..n`.
///
/// Sizes are `floor(p_train·n)`, `floor(p_val·n)` and the remainder for
/// test, so `n = 188` gives `(150, 18, 20)`.
pub fn make_split<R: Rng + ?Sized>(n: usize, proportions: [f64; 3], rng: &mut R) -> Result<DatasetSplit> {
    if proportions.iter().any(|p| !(0.0..=1.0).contains(p)) || (proportions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split proportions {proportions:?} must be in [0,1] and sum to 1")));
    }
    // the epsilon keeps exact products such as 0.1·70 from flooring down
    let n_train = (proportions[0] * n as f64 + 1e-9).floor() as usize;
    let n_val = (proportions[1] * n as f64 + 1e-9).floor() as usize;
    if n_train == 0 || n_val == 0 || n_train + n_val >= n {
        return Err(Error::Config(format!(
            "{n} items cannot be split into non-empty parts with proportions {proportions:?}"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let test = idx.split_off(n_train + n_val);
    let val = idx.split_off(n_train);
    Ok(DatasetSplit { train: idx, val, test })
}
