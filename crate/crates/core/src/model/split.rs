//! Stratified hold-out split.
//!
//! The validation size is `round(fraction * N)`. Each stratum (group, label)
//! first receives `floor(fraction * n_s)` validation samples; the remainder is
//! handed out one each to the largest strata (ties in key order). Samples
//! within a stratum are picked after a seeded shuffle.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::model::ModelError;

/// Returns `(train_indices, validation_indices)`, both ascending.
pub fn stratified_split<R: Rng + ?Sized>(
    keys: &[(&str, usize)],
    fraction: f64,
    rng: &mut R,
) -> Result<(Vec<usize>, Vec<usize>), ModelError> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(ModelError::Config(format!("validation fraction must lie in (0, 1), got {fraction}")));
    }
    let mut strata: BTreeMap<(&str, usize), Vec<usize>> = BTreeMap::new();
    for (i, &(group, label)) in keys.iter().enumerate() {
        strata.entry((group, label)).or_default().push(i);
    }
    let total = (fraction * keys.len() as f64).round() as usize;
    let mut quota: Vec<usize> = strata.values().map(|v| (fraction * v.len() as f64).floor() as usize).collect();
    let mut remainder = total.saturating_sub(quota.iter().sum());
    let mut by_size: Vec<usize> = (0..quota.len()).collect();
    let sizes: Vec<usize> = strata.values().map(Vec::len).collect();
    by_size.sort_by(|&a, &b| sizes[b].cmp(&sizes[a]).then(a.cmp(&b)));
    for &s in by_size.iter().cycle().take(by_size.len() * 2) {
        if remainder == 0 {
            break;
        }
        if quota[s] < sizes[s] {
            quota[s] += 1;
            remainder -= 1;
        }
    }
    let mut train = Vec::with_capacity(keys.len() - total);
    let mut val = Vec::with_capacity(total);
    for (members, &k) in strata.into_values().zip(&quota) {
        let mut members = members;
        members.shuffle(rng);
        val.extend_from_slice(&members[..k]);
        train.extend_from_slice(&members[k..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    Ok((train, val))
}
