use crate::error::Result;
use crate::graph::NormalizedAdjacency;
use crate::matrix::Matrix;

use super::{backward, forward, weighted_ce_loss, ModelParams, Supervision};

/// Gradients smaller than this are compared in absolute rather than relative
/// terms; central differences carry roughly `1e-11` of rounding noise.
pub const MAGNITUDE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradcheckReport {
    /// `max |a - n| / max(|a|, |n|, MAGNITUDE_FLOOR)` over all parameter entries.
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub entries: usize,
}

/// Compares the analytic gradient against central differences with step `h`
/// over every entry of both weight matrices.
pub fn gradcheck(
    params: &ModelParams,
    adj: &NormalizedAdjacency,
    x: &Matrix,
    sup: Supervision<'_>,
    h: f64,
) -> Result<GradcheckReport> {
    let cache = forward(params, adj, x)?;
    let analytic = backward(&cache, params, adj, sup)?;
    let loss_at = |p: &ModelParams| -> Result<f64> {
        let c = forward(p, adj, x)?;
        Ok(weighted_ce_loss(&c, sup)?.loss)
    };

    let mut report = GradcheckReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        entries: 0,
    };
    let mut probe = params.clone();
    for layer in 0..2 {
        let len = if layer == 0 { params.w1.as_slice().len() } else { params.w2.as_slice().len() };
        for k in 0..len {
            let original = *entry_mut(&mut probe, layer, k);
            *entry_mut(&mut probe, layer, k) = original + h;
            let plus = loss_at(&probe)?;
            *entry_mut(&mut probe, layer, k) = original - h;
            let minus = loss_at(&probe)?;
            *entry_mut(&mut probe, layer, k) = original;

            let numeric = (plus - minus) / (2.0 * h);
            let a = if layer == 0 { analytic.w1.as_slice()[k] } else { analytic.w2.as_slice()[k] };
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(MAGNITUDE_FLOOR);
            report.max_abs_error = report.max_abs_error.max(abs);
            report.max_rel_error = report.max_rel_error.max(rel);
            report.entries += 1;
        }
    }
    Ok(report)
}

fn entry_mut(p: &mut ModelParams, layer: usize, k: usize) -> &mut f64 {
    if layer == 0 {
        &mut p.w1.as_mut_slice()[k]
    } else {
        &mut p.w2.as_mut_slice()[k]
    }
}
