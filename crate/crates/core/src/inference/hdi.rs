use crate::error::{Error, Result};

/// Shortest interval holding at least `mass` of a weighted sample.
pub fn hdi(values: &[f64], weights: &[f64], mass: f64) -> Result<(f64, f64)> {
    if !(mass > 0.0 && mass < 1.0) {
        return Err(Error::InvalidInput(format!("HDI mass {mass} outside (0, 1)")));
    }
    let pairs = sorted_normalized(values, weights)?;
    let distinct = pairs.windows(2).any(|w| w[1].0 != w[0].0);
    if !distinct {
        let v = pairs[0].0;
        return Ok((v, v));
    }
    let n = pairs.len();
    let mut cum = Vec::with_capacity(n + 1);
    cum.push(0.0);
    for (_, w) in &pairs {
        cum.push(cum.last().unwrap() + w);
    }
    let need = mass - 1e-12;
    let mut best = (pairs[0].0, pairs[n - 1].0);
    let mut j = 0usize;
    for i in 0..n {
        if j < i {
            j = i;
        }
        while j < n && cum[j + 1] - cum[i] < need {
            j += 1;
        }
        if j == n {
            break;
        }
        if pairs[j].0 - pairs[i].0 < best.1 - best.0 {
            best = (pairs[i].0, pairs[j].0);
        }
    }
    Ok(best)
}

/// Unweighted convenience wrapper around [`hdi`].
pub fn hdi_unweighted(values: &[f64], mass: f64) -> Result<(f64, f64)> {
    hdi(values, &vec![1.0; values.len()], mass)
}

/// Smallest value at which the weighted CDF reaches one half.
pub fn weighted_median(values: &[f64], weights: &[f64]) -> Result<f64> {
    let pairs = sorted_normalized(values, weights)?;
    let mut acc = 0.0;
    for (v, w) in &pairs {
        acc += w;
        if acc >= 0.5 - 1e-12 {
            return Ok(*v);
        }
    }
    Ok(pairs.last().unwrap().0)
}

pub fn weighted_mean(values: &[f64], weights: &[f64]) -> Result<f64> {
    let pairs = sorted_normalized(values, weights)?;
    Ok(pairs.iter().map(|(v, w)| v * w).sum())
}

fn sorted_normalized(values: &[f64], weights: &[f64]) -> Result<Vec<(f64, f64)>> {
    if values.len() != weights.len() {
        return Err(Error::InvalidInput("values and weights differ in length".into()));
    }
    if values.iter().any(|v| !v.is_finite()) || weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::InvalidInput("non-finite sample or negative weight".into()));
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::InvalidInput("total weight is zero".into()));
    }
    let mut pairs: Vec<(f64, f64)> = values.iter().zip(weights).map(|(v, w)| (*v, w / total)).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(pairs)
}
