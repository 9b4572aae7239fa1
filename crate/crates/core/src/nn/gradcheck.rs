//! Central finite-difference check of parameter gradients.

use crate::error::Result;
use crate::nn::{Mode, Model};
use crate::numerics::{Matrix, RngStream};

/// Denominator floor for the relative error, so parameters whose true
/// gradient is zero are judged on absolute error instead.
pub const REL_ERROR_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    /// `max |a - n| / max(|a|, |n|, REL_ERROR_FLOOR)` over all parameters.
    pub max_rel_error: f64,
    pub checked: usize,
}

/// Compares backprop gradients of `objective(logits)` against central
/// differences with step `h`. Runs in eval mode, so dropout is the
/// identity.
pub fn check_gradients(
    model: &Model,
    batch: &Matrix,
    objective: impl Fn(&Matrix) -> Result<(f64, Matrix)>,
    h: f64,
) -> Result<GradCheck> {
    let (logits, cache) = model.forward(batch, Mode::Eval, &mut RngStream::new(0))?;
    let (_, dlogits) = objective(&logits)?;
    let grads = model.backward(&cache, &dlogits)?;

    let loss_at = |m: &Model| -> Result<f64> { Ok(objective(&m.predict(batch)?)?.0) };
    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for layer in 0..model.params().len() {
        let Some(g) = &grads[layer] else { continue };
        let analytic: Vec<f64> = g
            .weight
            .as_slice()
            .iter()
            .chain(g.bias.iter().flatten())
            .copied()
            .collect();
        for (k, &a) in analytic.iter().enumerate() {
            let orig = slot(&mut probe, layer, k);
            *slot_mut(&mut probe, layer, k) = orig + h;
            let plus = loss_at(&probe)?;
            *slot_mut(&mut probe, layer, k) = orig - h;
            let minus = loss_at(&probe)?;
            *slot_mut(&mut probe, layer, k) = orig;
            let n = (plus - minus) / (2.0 * h);
            let rel = (a - n).abs() / a.abs().max(n.abs()).max(REL_ERROR_FLOOR);
            worst = worst.max(rel);
            checked += 1;
        }
    }
    Ok(GradCheck {
        max_rel_error: worst,
        checked,
    })
}

fn slot(model: &mut Model, layer: usize, k: usize) -> f64 {
    *slot_mut(model, layer, k)
}

fn slot_mut(model: &mut Model, layer: usize, k: usize) -> &mut f64 {
    let p = model.params_mut()[layer].as_mut().expect("layer has params");
    let nw = p.weight.as_slice().len();
    if k < nw {
        &mut p.weight.as_mut_slice()[k]
    } else {
        &mut p.bias.as_mut().expect("bias slot")[k - nw]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss::{l2_logit, xent_softmax};
    use crate::nn::{init_params, NetworkSpec};
    use crate::numerics::sample_gaussian;

    #[test]
    fn mlp_gradients_pass() {
        let spec = NetworkSpec::mlp(3, &[4], 2, 0.5).unwrap();
        let model = init_params(&spec, &mut RngStream::new(1)).unwrap();
        let x = sample_gaussian(&mut RngStream::new(2), 5, 3, 0.0, 1.0).unwrap();
        let target = sample_gaussian(&mut RngStream::new(3), 5, 2, 0.0, 1.0).unwrap();
        let r = check_gradients(&model, &x, |z| l2_logit(z, &target), 1e-6).unwrap();
        assert_eq!(r.checked, spec.param_count());
        assert!(r.max_rel_error < 1e-5, "{r:?}");
        let labels = [0, 1, 1, 0, 1];
        let r = check_gradients(&model, &x, |z| xent_softmax(z, &labels), 1e-6).unwrap();
        assert!(r.max_rel_error < 1e-5, "{r:?}");
    }

    #[test]
    fn detects_a_wrong_gradient() {
        let spec = NetworkSpec::mlp(2, &[], 2, 0.0).unwrap();
        let model = init_params(&spec, &mut RngStream::new(1)).unwrap();
        let x = sample_gaussian(&mut RngStream::new(2), 3, 2, 0.0, 1.0).unwrap();
        let target = Matrix::zeros(3, 2);
        let r = check_gradients(
            &model,
            &x,
            |z| {
                let (l, g) = l2_logit(z, &target)?;
                Ok((l, g.map(|v| 2.0 * v)))
            },
            1e-6,
        )
        .unwrap();
        assert!(r.max_rel_error > 0.1);
    }
}
