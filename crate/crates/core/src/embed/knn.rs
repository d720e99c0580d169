use super::spectral::squared_distance;
use crate::error::{Error, Result};

/// Majority label among the `k` nearest training points. Ties go to the
/// label with the smaller mean neighbour distance, then the smaller label.
pub fn assign_knn(train: &[Vec<f64>], labels: &[usize], query: &[f64], k: usize) -> Result<usize> {
    if k == 0 {
        return Err(Error::invalid("k must be positive"));
    }
    if train.len() < k {
        return Err(Error::InsufficientSamples {
            needed: k,
            got: train.len(),
        });
    }
    let mut dist: Vec<(f64, usize)> = train
        .iter()
        .enumerate()
        .map(|(i, t)| (squared_distance(t, query).sqrt(), i))
        .collect();
    dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    // (label, votes, distance sum); few labels, so linear scan is fine
    let mut tally: Vec<(usize, usize, f64)> = Vec::new();
    for &(d, i) in &dist[..k] {
        match tally.iter_mut().find(|t| t.0 == labels[i]) {
            Some(t) => {
                t.1 += 1;
                t.2 += d;
            }
            None => tally.push((labels[i], 1, d)),
        }
    }
    tally.sort_by(|a, b| {
        b.1.cmp(&a.1)
            .then((a.2 / a.1 as f64).total_cmp(&(b.2 / b.1 as f64)))
            .then(a.0.cmp(&b.0))
    });
    Ok(tally[0].0)
}
