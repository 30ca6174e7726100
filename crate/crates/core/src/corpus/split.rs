use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{Corpus, MbtiLabel};
use crate::error::{PersError, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
    pub seed: u64,
    pub ratio: f64,
}

/// Per-stratum train quotas (keyed by the full 16-type label) using the
/// largest-remainder method, so the global train total is `round(ratio * n)`
/// and each stratum gets the floor or ceiling of its ideal share. Singleton
/// strata are served first so they land in train whenever the total allows.
fn stratum_quotas(sizes: &BTreeMap<MbtiLabel, usize>, ratio: f64) -> BTreeMap<MbtiLabel, usize> {
    let n: usize = sizes.values().sum();
    let target = (ratio * n as f64).round() as usize;
    let mut quotas = BTreeMap::new();
    let mut remainders = Vec::new();
    for (&label, &size) in sizes {
        let ideal = ratio * size as f64;
        let base = (ideal.floor() as usize).min(size);
        quotas.insert(label, base);
        let frac = ideal - base as f64;
        if frac > 0.0 && base < size {
            remainders.push((size == 1, frac, label));
        }
    }
    remainders.sort_by(|a, b| {
        b.0.cmp(&a.0)
            .then(b.1.total_cmp(&a.1))
            .then(a.2.code().cmp(&b.2.code()))
    });
    let assigned: usize = quotas.values().sum();
    let extra = target.saturating_sub(assigned);
    for &(_, _, label) in remainders.iter().take(extra) {
        *quotas.get_mut(&label).unwrap() += 1;
    }
    quotas
}

/// Split users into train and test, stratified on the full MBTI type.
/// Membership depends on the seed; per-stratum counts do not.
pub fn stratified_split(corpus: &Corpus, ratio: f64, seed: u64) -> Result<SplitAssignment> {
    if corpus.is_empty() {
        return Err(PersError::EmptyInput);
    }
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(PersError::Config(format!("split ratio {ratio} outside (0, 1]")));
    }
    let mut strata: BTreeMap<MbtiLabel, Vec<usize>> = BTreeMap::new();
    for (i, u) in corpus.users.iter().enumerate() {
        strata.entry(u.label).or_default().push(i);
    }
    let sizes = strata.iter().map(|(&l, v)| (l, v.len())).collect();
    let quotas = stratum_quotas(&sizes, ratio);

    let mut in_train = HashSet::new();
    for (label, mut members) in strata {
        let mut r = rng::rng_from(rng::derive_seed_str(seed, &label.code()), &[]);
        members.shuffle(&mut r);
        in_train.extend(members.into_iter().take(quotas[&label]));
    }
    let (mut train_ids, mut test_ids) = (Vec::new(), Vec::new());
    for (i, u) in corpus.users.iter().enumerate() {
        if in_train.contains(&i) {
            train_ids.push(u.user_id.clone());
        } else {
            test_ids.push(u.user_id.clone());
        }
    }
    Ok(SplitAssignment {
        train_ids,
        test_ids,
        seed,
        ratio,
    })
}
