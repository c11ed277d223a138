use std::collections::BTreeSet;

use crate::data::ObservationalDataset;
use crate::error::{Error, Result};
use crate::propensity::logit;

use super::{EffectEstimate, EstimatorId, PropensityModel};

#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    /// `(treated index, control index)` in matching order.
    pub pairs: Vec<(usize, usize)>,
    pub caliper: f64,
}

impl MatchResult {
    /// 1 for matched subjects, 0 otherwise.
    pub fn weights(&self, n: usize) -> Vec<f64> {
        let mut w = vec![0.0; n];
        for &(t, c) in &self.pairs {
            w[t] = 1.0;
            w[c] = 1.0;
        }
        w
    }
}

fn sample_sd(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Greedy 1:1 nearest-neighbour matching without replacement on `logit(e)`.
///
/// Treated subjects are visited in decreasing score order (ties by index);
/// each takes the closest unused control (ties by index) if it lies within
/// `caliper_multiplier * SD(logit e)`.
pub fn greedy_caliper_match(
    d: &ObservationalDataset,
    scores: &[f64],
    caliper_multiplier: f64,
) -> MatchResult {
    let lg: Vec<f64> = scores.iter().map(|&e| logit(e)).collect();
    let caliper = caliper_multiplier * sample_sd(&lg);

    let mut treated: Vec<usize> = (0..d.n()).filter(|&i| d.is_treated(i)).collect();
    treated.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut controls: Vec<usize> = (0..d.n()).filter(|&i| !d.is_treated(i)).collect();
    controls.sort_by(|&a, &b| lg[a].total_cmp(&lg[b]).then(a.cmp(&b)));
    let keys: Vec<f64> = controls.iter().map(|&c| lg[c]).collect();
    let mut free: BTreeSet<usize> = (0..controls.len()).collect();

    let mut pairs = Vec::new();
    for &t in &treated {
        let pos = keys.partition_point(|&k| k < lg[t]);
        // among equally distant candidates on either side keep the lowest index
        let mut best: Option<(f64, usize, usize)> = None;
        let mut consider = |slot: usize| {
            let dist = (keys[slot] - lg[t]).abs();
            let idx = controls[slot];
            let better = match best {
                None => true,
                Some((bd, bi, _)) => dist < bd || (dist == bd && idx < bi),
            };
            if better {
                best = Some((dist, idx, slot));
            }
        };
        // walk left over ties so the lowest index among equal keys is seen
        let mut left = free.range(..pos).rev();
        if let Some(&slot) = left.next() {
            consider(slot);
            let k = keys[slot];
            for &s in left.take_while(|&&s| keys[s] == k) {
                consider(s);
            }
        }
        let mut right = free.range(pos..);
        if let Some(&slot) = right.next() {
            consider(slot);
            let k = keys[slot];
            for &s in right.take_while(|&&s| keys[s] == k) {
                consider(s);
            }
        }
        if let Some((dist, idx, slot)) = best {
            if dist <= caliper {
                free.remove(&slot);
                pairs.push((t, idx));
            }
        }
    }
    MatchResult { pairs, caliper }
}

/// Difference of means over greedily matched pairs. The SE uses the unpaired
/// two-sample formula and is only approximate; ESS fields are the matched
/// counts per arm.
pub fn estimate_matched(
    d: &ObservationalDataset,
    model: &PropensityModel,
    caliper_multiplier: f64,
) -> Result<EffectEstimate> {
    if !(caliper_multiplier > 0.0) {
        return Err(Error::InvalidArgument("caliper multiplier must be positive".into()));
    }
    let (_, scores) = model.fit(d)?;
    let m = greedy_caliper_match(d, &scores, caliper_multiplier);
    if m.pairs.is_empty() {
        return Err(Error::NoMatches);
    }
    let y = d.outcomes();
    let yt: Vec<f64> = m.pairs.iter().map(|&(t, _)| y[t]).collect();
    let yc: Vec<f64> = m.pairs.iter().map(|&(_, c)| y[c]).collect();
    let k = m.pairs.len() as f64;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let var = |v: &[f64]| {
        if v.len() < 2 {
            0.0
        } else {
            let mu = mean(v);
            v.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (v.len() as f64 - 1.0)
        }
    };
    let se = (var(&yt) / k + var(&yc) / k).sqrt();
    Ok(EffectEstimate::new(
        EstimatorId::Matched,
        mean(&yt) - mean(&yc),
        se,
        (k, k),
        d.n(),
    ))
}
