use super::tensor::Parameters;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Tensor name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub coordinates: usize,
}

/// Compares `analytic` against central differences of `f` at `params`,
/// coordinate by coordinate. Relative error is
/// `|a - n| / max(1e-8, |a| + |n|)`.
pub fn finite_difference_check<P, F>(f: F, params: &P, analytic: &P, h: f64) -> Result<GradCheckReport>
where
    P: Parameters,
    F: FnMut(&P) -> f64,
{
    finite_difference_check_sampled(f, params, analytic, h, usize::MAX)
}

/// Like [`finite_difference_check`] but probes at most `per_tensor`
/// evenly spaced coordinates of each tensor.
pub fn finite_difference_check_sampled<P, F>(
    mut f: F,
    params: &P,
    analytic: &P,
    h: f64,
    per_tensor: usize,
) -> Result<GradCheckReport>
where
    P: Parameters,
    F: FnMut(&P) -> f64,
{
    let names: Vec<(String, usize)> = params
        .tensors()
        .iter()
        .map(|t| (t.name.clone(), t.data.len()))
        .collect();
    let grads: Vec<Vec<f64>> = analytic.tensors().iter().map(|t| t.data.to_vec()).collect();
    if grads.len() != names.len() || grads.iter().zip(&names).any(|(g, (_, n))| g.len() != *n) {
        return Err(Error::shape("finite_difference_check", "gradient shaped like params", "mismatch"));
    }

    let mut probe = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        coordinates: 0,
    };
    for (ti, (name, len)) in names.iter().enumerate() {
        let stride = if *len > per_tensor { len.div_ceil(per_tensor) } else { 1 };
        for i in (0..*len).step_by(stride) {
            let orig = probe.tensors()[ti].data[i];
            probe.tensors_mut()[ti][i] = orig + h;
            let up = f(&probe);
            probe.tensors_mut()[ti][i] = orig - h;
            let down = f(&probe);
            probe.tensors_mut()[ti][i] = orig;
            if !up.is_finite() || !down.is_finite() {
                return Err(Error::NonFinite(format!("objective while probing {name}[{i}]")));
            }
            let numeric = (up - down) / (2.0 * h);
            let a = grads[ti][i];
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
            report.coordinates += 1;
            if rel > report.max_rel_error || report.worst.is_none() {
                if rel > report.max_rel_error {
                    report.max_rel_error = rel;
                }
                report.worst = Some((name.clone(), i));
            }
        }
    }
    Ok(report)
}
