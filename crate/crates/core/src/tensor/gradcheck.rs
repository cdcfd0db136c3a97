use super::Tensor;
use crate::error::{Error, Result};

/// Outcome of [`finite_difference_check`].
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// (parameter block, coordinate) of the worst mismatch.
    pub worst: Option<(usize, usize)>,
    /// Analytic and numeric values at the worst coordinate.
    pub worst_values: (f64, f64),
    pub coordinates: usize,
}

/// Magnitude below which gradients are compared absolutely.
const REL_FLOOR: f64 = 1e-6;

/// Compares backward gradients against central differences.
///
/// `f` receives the parameter blocks and must return the scalar loss together
/// with the leaf tensors it built from the first `leaves.len()` blocks (same
/// order). Any further blocks are constants and are not perturbed.
///
/// Relative error per coordinate is `|g - fd| / max(|g|, |fd|, 1e-6)`; the
/// worst one is reported.
pub fn finite_difference_check<L>(params: &[Vec<f64>], eps: f64, f: L) -> Result<GradCheckReport>
where
    L: Fn(&[Vec<f64>]) -> Result<(Tensor<f64>, Vec<Tensor<f64>>)>,
{
    if !(1e-6..=1e-3).contains(&eps) {
        return Err(Error::invalid(format!("finite-difference eps {eps} outside [1e-6, 1e-3]")));
    }
    let (loss, leaves) = f(params)?;
    loss.backward()?;
    let analytic: Vec<Vec<f64>> = leaves
        .iter()
        .map(|l| l.grad().unwrap_or_else(|| vec![0.0; l.numel()]))
        .collect();

    for (b, grads) in analytic.iter().enumerate() {
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite {
                context: format!("analytic gradient block {b}"),
                index: i,
            });
        }
    }

    let eval = |p: &[Vec<f64>]| -> Result<f64> { Ok(f(p)?.0.item()) };
    let mut work = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        worst_values: (0.0, 0.0),
        coordinates: 0,
    };
    for (b, grads) in analytic.iter().enumerate() {
        for i in 0..grads.len() {
            let orig = work[b][i];
            work[b][i] = orig + eps;
            let up = eval(&work)?;
            work[b][i] = orig - eps;
            let down = eval(&work)?;
            work[b][i] = orig;
            let numeric = (up - down) / (2.0 * eps);
            if !numeric.is_finite() || !grads[i].is_finite() {
                return Err(Error::NonFinite {
                    context: format!("gradient check block {b}"),
                    index: i,
                });
            }
            let denom = grads[i].abs().max(numeric.abs()).max(REL_FLOOR);
            let err = (grads[i] - numeric).abs() / denom;
            report.coordinates += 1;
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((b, i));
                report.worst_values = (grads[i], numeric);
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        let report = finite_difference_check(&[vec![0.7, -1.3, 2.2]], 1e-4, |p| {
            let x = Tensor::param(p[0].clone(), &[3])?;
            Ok((x.mul(&x)?.scale(3.0).sum(), vec![x]))
        })
        .unwrap();
        assert!(report.max_rel_error <= 1e-8, "{report:?}");
        assert_eq!(report.coordinates, 3);
    }

    #[test]
    fn constant_function_has_zero_error() {
        let report = finite_difference_check(&[vec![1.0, 2.0]], 1e-4, |p| {
            let x = Tensor::param(p[0].clone(), &[2])?;
            let zero = x.scale(0.0).sum().shift(5.0);
            Ok((zero, vec![x]))
        })
        .unwrap();
        assert_eq!(report.max_rel_error, 0.0);
    }

    #[test]
    fn eps_range_enforced() {
        let r = finite_difference_check(&[vec![1.0]], 0.1, |p| {
            let x = Tensor::param(p[0].clone(), &[1])?;
            Ok((x.sum(), vec![x]))
        });
        assert!(r.is_err());
    }

    #[test]
    fn non_finite_reported_with_index() {
        let err = finite_difference_check(&[vec![1.0, 800.0]], 1e-4, |p| {
            let x = Tensor::param(p[0].clone(), &[2])?;
            Ok((x.exp().sum(), vec![x]))
        })
        .unwrap_err();
        match err {
            Error::NonFinite { index, .. } => assert_eq!(index, 1),
            e => panic!("unexpected {e}"),
        }
    }
}
