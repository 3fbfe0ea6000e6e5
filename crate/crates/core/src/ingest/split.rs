use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::rng_for;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: f64,
    pub valid: f64,
    pub test: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self { train: 0.8, valid: 0.1, test: 0.1, seed: 42 }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.valid, self.test];
        if parts.iter().any(|p| !(0.0..=1.0).contains(p)) || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split fractions must lie in [0,1] and sum to 1, got {parts:?}")));
        }
        Ok(())
    }
}

/// User-level partition.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<String>,
    pub valid: Vec<String>,
    pub test: Vec<String>,
}

/// Shuffles users with the spec's seed and cuts them into train/valid/test.
/// Valid and test sizes are `round(n · fraction)`; train takes the rest.
pub fn split_dataset<'a>(users: impl IntoIterator<Item = &'a String>, spec: &SplitSpec) -> Result<Split> {
    spec.validate()?;
    let mut users: Vec<String> = users.into_iter().cloned().collect();
    users.sort();
    users.dedup();
    let n = users.len();
    let n_valid = (n as f64 * spec.valid).round() as usize;
    let n_test = (n as f64 * spec.test).round() as usize;
    if n < 3 || n_valid + n_test >= n || (spec.valid > 0.0 && n_valid == 0) || (spec.test > 0.0 && n_test == 0) {
        return Err(Error::invalid(format!("{n} users cannot fill the train/valid/test partitions")));
    }
    users.shuffle(&mut rng_for(spec.seed, "split"));
    let test = users.split_off(n - n_test);
    let valid = users.split_off(n - n_test - n_valid);
    let mut train = users;
    let mut valid = valid;
    let mut test = test;
    train.sort();
    valid.sort();
    test.sort();
    Ok(Split { train, valid, test })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn users(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("u{i:03}")).collect()
    }

    #[test]
    fn ten_users_split_eight_one_one() {
        let s = split_dataset(&users(10), &SplitSpec::default()).unwrap();
        assert_eq!((s.train.len(), s.valid.len(), s.test.len()), (8, 1, 1));
        let mut all: Vec<_> = s.train.iter().chain(&s.valid).chain(&s.test).cloned().collect();
        all.sort();
        assert_eq!(all, users(10));
    }

    #[test]
    fn deterministic_under_seed_and_sensitive_to_it() {
        let u = users(100);
        let a = split_dataset(&u, &SplitSpec { seed: 1, ..Default::default() }).unwrap();
        let b = split_dataset(&u, &SplitSpec { seed: 1, ..Default::default() }).unwrap();
        let c = split_dataset(&u, &SplitSpec { seed: 2, ..Default::default() }).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn too_few_users_is_an_error() {
        assert!(split_dataset(&users(2), &SplitSpec::default()).is_err());
        assert!(split_dataset(&users(10), &SplitSpec { train: 0.9, ..Default::default() }).is_err());
    }
}
