use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config, Result};

/// Subject-exclusive partition of identities into folds.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub n_folds: usize,
    pub seed: u64,
    pub folds: Vec<Vec<usize>>,
}

/// Identity roles for one cross-validation run.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunRoles {
    pub run: usize,
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded shuffle of `identities`, then round-robin assignment to
/// `n_folds` folds.
pub fn make_folds(identities: &[usize], n_folds: usize, seed: u64) -> Result<FoldPlan> {
    if n_folds < 3 {
        return Err(config(format!(
            "need at least 3 folds (train, validation, test), got {n_folds}"
        )));
    }
    if n_folds > identities.len() {
        return Err(config(format!(
            "{} identities are too few for {n_folds} folds",
            identities.len()
        )));
    }
    let mut ids = identities.to_vec();
    ids.sort_unstable();
    if ids.windows(2).any(|w| w[0] == w[1]) {
        return Err(config("identity list contains duplicates"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let mut folds = vec![Vec::new(); n_folds];
    for (i, id) in ids.into_iter().enumerate() {
        folds[i % n_folds].push(id);
    }
    Ok(FoldPlan { n_folds, seed, folds })
}

impl FoldPlan {
    /// Run `r` tests on fold `r`, validates on fold `r+1 (mod n)` and
    /// trains on the rest.
    pub fn roles(&self, run: usize) -> Result<RunRoles> {
        if run >= self.n_folds {
            return Err(config(format!("run {run} out of range for {} folds", self.n_folds)));
        }
        let val = (run + 1) % self.n_folds;
        let mut train: Vec<usize> = (0..self.n_folds)
            .filter(|&f| f != run && f != val)
            .flat_map(|f| self.folds[f].iter().copied())
            .collect();
        train.sort_unstable();
        let sorted = |f: usize| {
            let mut v = self.folds[f].clone();
            v.sort_unstable();
            v
        };
        Ok(RunRoles {
            run,
            train,
            validation: sorted(val),
            test: sorted(run),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partition_properties() {
        let ids: Vec<usize> = (0..20).collect();
        let plan = make_folds(&ids, 10, 4).unwrap();
        assert!(plan.folds.iter().all(|f| f.len() == 2));
        let mut all: Vec<usize> = plan.folds.concat();
        all.sort_unstable();
        assert_eq!(all, ids);
        assert_eq!(plan, make_folds(&ids, 10, 4).unwrap());
        let r = plan.roles(9).unwrap();
        assert_eq!(r.validation, {
            let mut v = plan.folds[0].clone();
            v.sort_unstable();
            v
        });
        assert_eq!(r.train.len(), 16);
    }

    #[test]
    fn errors() {
        let ids: Vec<usize> = (0..4).collect();
        assert!(make_folds(&ids, 5, 0).is_err());
        assert!(make_folds(&ids, 2, 0).is_err());
        assert!(make_folds(&[1, 1, 2], 3, 0).is_err());
        assert!(make_folds(&ids, 4, 0).unwrap().roles(4).is_err());
    }
}
