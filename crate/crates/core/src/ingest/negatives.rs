use rand::seq::index;

use crate::error::{Error, Result};
use crate::util::Rng;

/// Draws `k` distinct item indices from `1..=domain_items`, never the target.
pub fn sample_negatives(target: usize, domain_items: usize, k: usize, rng: &mut Rng) -> Result<Vec<usize>> {
    if target == 0 || target > domain_items {
        return Err(Error::OutOfRange { what: "target item", index: target, size: domain_items });
    }
    let pool = domain_items - 1;
    if pool < k {
        return Err(Error::invalid(format!(
            "only {pool} candidate negatives in the target domain but {k} requested; lower `num_negatives`"
        )));
    }
    Ok(index::sample(rng, pool, k)
        .into_iter()
        .map(|i| {
            let item = i + 1;
            if item >= target {
                item + 1
            } else {
                item
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::rng_for;
    use std::collections::HashSet;

    #[test]
    fn full_pool_excludes_target() {
        let negs = sample_negatives(500, 1_000, 999, &mut rng_for(0, "neg")).unwrap();
        let set: HashSet<_> = negs.iter().copied().collect();
        assert_eq!(set.len(), 999);
        assert!(!set.contains(&500));
        assert!(set.iter().all(|i| (1..=1_000).contains(i)));
    }

    #[test]
    fn small_pool() {
        let negs = sample_negatives(3, 10, 5, &mut rng_for(1, "neg")).unwrap();
        assert_eq!(negs.iter().collect::<HashSet<_>>().len(), 5);
        assert!(!negs.contains(&3));
    }

    #[test]
    fn deterministic_and_bounded() {
        let a = sample_negatives(7, 50, 20, &mut rng_for(9, "neg")).unwrap();
        let b = sample_negatives(7, 50, 20, &mut rng_for(9, "neg")).unwrap();
        assert_eq!(a, b);
        assert!(sample_negatives(1, 10, 10, &mut rng_for(9, "neg")).is_err());
        assert!(sample_negatives(11, 10, 1, &mut rng_for(9, "neg")).is_err());
    }
}
