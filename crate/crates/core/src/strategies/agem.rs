//! Averaged gradient projection against a reference gradient computed
//! on an episodic-memory batch.

use crate::error::{Error, Result};

/// If g·g_ref >= 0 the gradient passes through unchanged (bitwise);
/// otherwise g is projected onto the constraint plane:
/// g − (g·g_ref / g_ref·g_ref)·g_ref.
pub fn agem_project(g: &[f64], g_ref: &[f64]) -> Result<Vec<f64>> {
    if g.len() != g_ref.len() {
        return Err(Error::ShapeMismatch {
            op: "agem_project",
            left: vec![g.len()],
            right: vec![g_ref.len()],
        });
    }
    let dot: f64 = g.iter().zip(g_ref).map(|(a, b)| a * b).sum();
    if dot >= 0.0 {
        return Ok(g.to_vec());
    }
    // dot < 0 implies ||g_ref|| > 0
    let ref_sq: f64 = g_ref.iter().map(|v| v * v).sum();
    let coef = dot / ref_sq;
    Ok(g.iter().zip(g_ref).map(|(a, b)| a - coef * b).collect())
}
