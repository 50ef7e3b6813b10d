use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::ContainerClass;
use crate::error::{Error, Result};

/// Number of items on the training side: `ceil(ratio * n)`.
pub fn train_count(n: usize, ratio: f64) -> usize {
    // tolerance keeps e.g. 0.7 * 10 = 7.000000000000001 from rounding up
    ((ratio * n as f64 - 1e-9).ceil().max(0.0) as usize).min(n)
}

/// Seeded shuffle of `items`, then the first `ceil(ratio * n)` go to train.
pub fn random_split<T: Clone>(items: &[T], ratio: f64, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidInput(format!("split ratio {ratio} outside (0, 1)")));
    }
    let mut shuffled = items.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let val = shuffled.split_off(train_count(items.len(), ratio));
    Ok((shuffled, val))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CatalogEntry {
    pub recording_id: String,
    pub class: ContainerClass,
    pub container_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldSpec {
    /// 1-based.
    pub id: usize,
    /// Held-out container instance per category.
    pub held_out: Vec<(ContainerClass, String)>,
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

/// Leave-one-instance-per-category-out folds. Every category must have
/// exactly three instances; fold `i` tests on the `i`-th instance (in
/// sorted id order) of each category and splits the remaining recordings
/// into train/val at `ratio`.
pub fn make_folds(catalog: &[CatalogEntry], ratio: f64, seed: u64) -> Result<Vec<FoldSpec>> {
    let mut instances: BTreeMap<ContainerClass, BTreeMap<&str, Vec<&str>>> = BTreeMap::new();
    for e in catalog {
        instances
            .entry(e.class)
            .or_default()
            .entry(&e.container_id)
            .or_default()
            .push(&e.recording_id);
    }
    if instances.is_empty() {
        return Err(Error::InvalidInput("empty catalog".into()));
    }
    for (class, inst) in &instances {
        if inst.len() != 3 {
            return Err(Error::InvalidInput(format!(
                "category {class} has {} instances, folds need exactly 3",
                inst.len()
            )));
        }
    }
    let mut all: Vec<&str> = catalog.iter().map(|e| e.recording_id.as_str()).collect();
    all.sort_unstable();
    if all.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::InvalidInput("duplicate recording id in catalog".into()));
    }

    (0..3)
        .map(|i| {
            let mut held_out = Vec::new();
            let mut test: Vec<String> = Vec::new();
            for (class, inst) in &instances {
                let (id, recs) = inst.iter().nth(i).expect("three instances");
                held_out.push((*class, id.to_string()));
                test.extend(recs.iter().map(|r| r.to_string()));
            }
            test.sort_unstable();
            let rest: Vec<String> = all
                .iter()
                .filter(|r| test.binary_search_by(|t| t.as_str().cmp(r)).is_err())
                .map(|r| r.to_string())
                .collect();
            let (mut train, mut val) = random_split(&rest, ratio, seed.wrapping_add(i as u64))?;
            train.sort_unstable();
            val.sort_unstable();
            Ok(FoldSpec {
                id: i + 1,
                held_out,
                train,
                val,
                test,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashSet;

    fn catalog(per_instance: usize) -> Vec<CatalogEntry> {
        let mut out = Vec::new();
        for class in ContainerClass::KNOWN {
            for inst in 0..3 {
                for r in 0..per_instance {
                    out.push(CatalogEntry {
                        recording_id: format!("{class}{inst}_{r:03}"),
                        class,
                        container_id: format!("{class}{inst}"),
                    });
                }
            }
        }
        out
    }

    #[test]
    fn split_sizes_use_ceiling() {
        let ten: Vec<u32> = (0..10).collect();
        let (t, v) = random_split(&ten, 0.8, 1).unwrap();
        assert_eq!((t.len(), v.len()), (8, 2));
        let five: Vec<u32> = (0..5).collect();
        let (t, v) = random_split(&five, 0.8, 1).unwrap();
        assert_eq!((t.len(), v.len()), (4, 1));
        let hundred: Vec<u32> = (0..100).collect();
        let (t, v) = random_split(&hundred, 0.8, 1).unwrap();
        assert_eq!((t.len(), v.len()), (80, 20));
        assert_eq!(train_count(10, 0.7), 7);
        assert_eq!(train_count(3, 0.5), 2);
        assert!(random_split(&ten, 1.0, 1).is_err());
        assert!(random_split(&ten, 0.0, 1).is_err());
    }

    #[test]
    fn split_is_seeded() {
        let items: Vec<u32> = (0..50).collect();
        assert_eq!(random_split(&items, 0.8, 3).unwrap(), random_split(&items, 0.8, 3).unwrap());
        assert_ne!(random_split(&items, 0.8, 3).unwrap(), random_split(&items, 0.8, 4).unwrap());
        let (mut t, v) = random_split(&items, 0.8, 3).unwrap();
        t.extend(v);
        t.sort_unstable();
        assert_eq!(t, items);
    }

    #[test]
    fn folds_hold_out_each_instance_once() {
        // 9 containers x 76 recordings = 684
        let cat = catalog(76);
        assert_eq!(cat.len(), 684);
        let folds = make_folds(&cat, 0.8, 0).unwrap();
        assert_eq!(folds.len(), 3);
        let mut seen = HashSet::new();
        for f in &folds {
            assert_eq!(f.held_out.len(), 3);
            assert_eq!(f.test.len(), 3 * 76);
            for h in &f.held_out {
                assert!(seen.insert(h.clone()));
            }
            let test: HashSet<_> = f.test.iter().collect();
            assert!(f.train.iter().chain(&f.val).all(|r| !test.contains(r)));
            let rest = cat.len() - f.test.len();
            assert_eq!(f.train.len(), train_count(rest, 0.8));
            assert_eq!(f.train.len() + f.val.len(), rest);
        }
        assert_eq!(seen.len(), 9);
    }

    #[test]
    fn wrong_instance_count_is_an_error() {
        let mut cat = catalog(2);
        cat.retain(|e| e.container_id != "box2");
        assert!(make_folds(&cat, 0.8, 0).is_err());
    }

    proptest! {
        #[test]
        fn folds_ignore_catalog_order(seed in 0u64..1000, rot in 0usize..54) {
            let cat = catalog(6);
            let mut shuffled = cat.clone();
            shuffled.reverse();
            shuffled.rotate_left(rot);
            prop_assert_eq!(make_folds(&cat, 0.8, seed).unwrap(), make_folds(&shuffled, 0.8, seed).unwrap());
        }
    }
}
