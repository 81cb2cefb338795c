use std::collections::BTreeMap;

use crate::error::{Error, Result};

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Davies-Bouldin index: the mean over clusters of `max_{j != i} (s_i + s_j) / d(c_i, c_j)`,
/// where `s` is the mean distance to the centroid. Lower is better.
pub fn davies_bouldin(embeddings: &[Vec<f64>], labels: &[u32]) -> Result<f64> {
    if embeddings.len() != labels.len() {
        return Err(Error::dim(format!("{} embeddings, {} labels", embeddings.len(), labels.len())));
    }
    let dim = embeddings.first().map_or(0, Vec::len);
    if embeddings.iter().any(|e| e.len() != dim) {
        return Err(Error::dim("embeddings differ in length"));
    }
    let mut clusters: BTreeMap<u32, Vec<&[f64]>> = BTreeMap::new();
    for (e, &l) in embeddings.iter().zip(labels) {
        clusters.entry(l).or_default().push(e);
    }
    if clusters.len() < 2 {
        return Err(Error::Corpus(format!("need at least 2 clusters, got {}", clusters.len())));
    }
    let mut centroids = Vec::with_capacity(clusters.len());
    let mut scatter = Vec::with_capacity(clusters.len());
    for members in clusters.values() {
        let mut c = vec![0.0; dim];
        for m in members {
            for (ci, v) in c.iter_mut().zip(m.iter()) {
                *ci += v;
            }
        }
        c.iter_mut().for_each(|v| *v /= members.len() as f64);
        scatter.push(members.iter().map(|m| distance(m, &c)).sum::<f64>() / members.len() as f64);
        centroids.push(c);
    }
    let ids: Vec<u32> = clusters.keys().copied().collect();
    let k = centroids.len();
    let mut total = 0.0;
    for i in 0..k {
        let mut worst = 0.0f64;
        for j in 0..k {
            if i == j {
                continue;
            }
            let d = distance(&centroids[i], &centroids[j]);
            if d == 0.0 {
                return Err(Error::Degenerate(format!(
                    "clusters {} and {} have coincident centroids",
                    ids[i], ids[j]
                )));
            }
            worst = worst.max((scatter[i] + scatter[j]) / d);
        }
        total += worst;
    }
    Ok(total / k as f64)
}
