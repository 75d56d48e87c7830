use serde::{Deserialize, Serialize};

use super::DomainDataset;
use crate::error::{config, Result};

/// One cross-validation fold. Folds are formed over content groups, never
/// over individual samples.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub test_groups: Vec<u32>,
}

/// Splits the content groups of `ds` into `k` contiguous blocks of
/// near-equal size (in ascending content-id order); block `f` is the test
/// set of fold `f`.
pub fn split_folds(ds: &DomainDataset, k: usize) -> Result<Vec<Fold>> {
    let ids: Vec<u32> = ds.groups.keys().copied().collect();
    if k < 2 {
        return Err(config(format!("fold count must be at least 2, got {k}")));
    }
    if k > ids.len() {
        return Err(config(format!(
            "{k} folds requested but only {} content groups",
            ids.len()
        )));
    }
    let base = ids.len() / k;
    let extra = ids.len() % k;
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let size = base + usize::from(f < extra);
        let test_groups = ids[start..start + size].to_vec();
        start += size;
        let mut train = Vec::new();
        let mut test = Vec::new();
        for (id, idx) in &ds.groups {
            if test_groups.contains(id) {
                test.extend(idx);
            } else {
                train.extend(idx);
            }
        }
        train.sort_unstable();
        test.sort_unstable();
        folds.push(Fold {
            train,
            test,
            test_groups,
        });
    }
    Ok(folds)
}
