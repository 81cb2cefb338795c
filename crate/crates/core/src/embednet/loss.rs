//! Ranking losses on embeddings, as plain functions and as tape operations.

use crate::embednet::graph::{Graph, Var};
use crate::error::{Error, Result};

/// Added under the square root of the contrastive distance on the tape, keeping the
/// derivative finite for coincident embeddings.
pub const DISTANCE_EPS: f64 = 1e-12;

fn squared_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::dim(format!("embedding lengths {} vs {}", a.len(), b.len())));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum())
}

/// `max(|a - p|^2 - |a - n|^2 + margin, 0)`
pub fn triplet_loss(anchor: &[f64], positive: &[f64], negative: &[f64], margin: f64) -> Result<f64> {
    if margin < 0.0 {
        return Err(Error::param("triplet margin must be >= 0"));
    }
    let dp = squared_distance(anchor, positive)?;
    let dn = squared_distance(anchor, negative)?;
    Ok((dp - dn + margin).max(0.0))
}

/// Squared hinge form: `|a - b|^2` for a matching pair, `max(margin - |a - b|, 0)^2`
/// otherwise.
pub fn contrastive_loss(a: &[f64], b: &[f64], same: bool, margin: f64) -> Result<f64> {
    if !(margin > 0.0) {
        return Err(Error::param("contrastive margin must be > 0"));
    }
    let d2 = squared_distance(a, b)?;
    Ok(if same {
        d2
    } else {
        (margin - d2.sqrt()).max(0.0).powi(2)
    })
}

fn tape_squared_distance(g: &mut Graph<'_>, a: Var, b: Var) -> Result<Var> {
    let diff = g.sub(a, b)?;
    let sq = g.mul(diff, diff)?;
    Ok(g.sum(sq))
}

pub fn triplet_loss_var(g: &mut Graph<'_>, anchor: Var, positive: Var, negative: Var, margin: f64) -> Result<Var> {
    let dp = tape_squared_distance(g, anchor, positive)?;
    let dn = tape_squared_distance(g, anchor, negative)?;
    let gap = g.sub(dp, dn)?;
    let shifted = g.add_scalar(gap, margin);
    Ok(g.relu(shifted))
}

pub fn contrastive_loss_var(g: &mut Graph<'_>, a: Var, b: Var, same: bool, margin: f64) -> Result<Var> {
    let d2 = tape_squared_distance(g, a, b)?;
    if same {
        return Ok(d2);
    }
    let d2 = g.add_scalar(d2, DISTANCE_EPS);
    let d = g.sqrt(d2);
    let neg = g.scale(d, -1.0);
    let gap = g.add_scalar(neg, margin);
    let hinge = g.relu(gap);
    g.mul(hinge, hinge)
}
