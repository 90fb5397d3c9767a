//! Central finite differences, kept as an independent oracle for the
//! analytic gradients.

use crate::error::Result;
use crate::numkit::model::mean_loss;
use crate::numkit::{Gradients, Matrix, ModelParams};

/// Central-difference gradient of an arbitrary scalar loss of the parameters.
pub fn finite_diff_grad_with<F>(params: &ModelParams, h: f64, mut loss: F) -> Result<Gradients>
where
    F: FnMut(&ModelParams) -> Result<f64>,
{
    let base = params.to_flat();
    let mut flat = base.clone();
    let mut probe = params.clone();
    let mut grad = Vec::with_capacity(base.len());
    for i in 0..base.len() {
        flat[i] = base[i] + h;
        probe.assign_flat(&flat)?;
        let plus = loss(&probe)?;
        flat[i] = base[i] - h;
        probe.assign_flat(&flat)?;
        let minus = loss(&probe)?;
        flat[i] = base[i];
        grad.push((plus - minus) / (2.0 * h));
    }
    let mut out = params.clone();
    out.assign_flat(&grad)?;
    Ok(Gradients(out))
}

/// Central-difference gradient of the mean softmax cross-entropy on a batch.
pub fn finite_diff_grad(
    params: &ModelParams,
    inputs: &Matrix,
    targets: &Matrix,
    h: f64,
) -> Result<Gradients> {
    finite_diff_grad_with(params, h, |p| mean_loss(p, inputs, targets))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::Layer;

    fn scalar(v: f64) -> ModelParams {
        ModelParams {
            layers: vec![Layer {
                weight: Matrix::new(1, 1, vec![v]).unwrap(),
                bias: vec![0.0],
            }],
        }
    }

    #[test]
    fn quadratic_surrogate() {
        let g = finite_diff_grad_with(&scalar(1.0), 1e-5, |p| {
            let w = p.layers[0].weight.get(0, 0);
            Ok(w * w)
        })
        .unwrap();
        assert!((g.0.layers[0].weight.get(0, 0) - 2.0).abs() < 1e-8);
        assert!(g.0.layers[0].bias[0].abs() < 1e-12);
    }

    #[test]
    fn constant_loss_has_zero_gradient() {
        let g = finite_diff_grad_with(&scalar(3.0), 1e-5, |_| Ok(7.5)).unwrap();
        assert!(g.iter().all(|v| v == 0.0));
    }
}
