//! Finite-difference gradient checking utilities.
//!
//! The numeric side evaluates the loss through forward passes only, so it
//! stays independent of the analytic backward implementation it verifies.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::model::{BackboneConfig, BackboneParams, Transformation};
use crate::tensor::{l2_normalize, Tensor3};
use crate::training::step::{triplet_total_backward, triplet_total_forward, KdTargets, TripletInputs};

/// Central differences: `(f(θ+h·eᵢ) − f(θ−h·eᵢ)) / 2h` per coordinate.
pub fn central_difference(f: &mut dyn FnMut(&[f64]) -> f64, theta: &[f64], h: f64) -> Vec<f64> {
    let mut grad = vec![0.0; theta.len()];
    let mut work = theta.to_vec();
    for i in 0..theta.len() {
        let orig = work[i];
        work[i] = orig + h;
        let plus = f(&work);
        work[i] = orig - h;
        let minus = f(&work);
        work[i] = orig;
        grad[i] = (plus - minus) / (2.0 * h);
    }
    grad
}

/// Max absolute deviation normalized by the larger gradient magnitude.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let scale = analytic
        .iter()
        .chain(numeric)
        .fold(0.0f64, |m, &v| m.max(v.abs()))
        .max(1e-10);
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs())
        .fold(0.0f64, f64::max)
        / scale
}

/// Max relative errors of the analytic loss gradients against central
/// finite differences, on a random small model and batch.
#[derive(Debug, Clone, Copy)]
pub struct LossGradReport {
    /// Triplet loss gradient w.r.t. backbone parameters.
    pub triplet: f64,
    /// Distillation loss gradient w.r.t. backbone and transformation.
    pub kd: f64,
    /// Total objective gradient w.r.t. backbone and transformation.
    pub total: f64,
}

impl LossGradReport {
    pub fn worst(&self) -> f64 {
        self.triplet.max(self.kd).max(self.total)
    }
}

fn random_tensor(c: usize, h: usize, w: usize, rng: &mut impl Rng) -> Tensor3 {
    Tensor3::from_fn(c, h, w, |_, _, _| rng.gen_range(0.05..1.0))
}

/// Builds a small random model plus one triplet and runs all three checks.
pub fn check_loss_gradients(seed: u64) -> Result<LossGradReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = BackboneConfig {
        input_channels: 2,
        stage_channels: [2, 3, 3, 4, 4],
        stage_strides: [2, 2, 1, 2, 1],
    };
    let params = BackboneParams::init(&cfg, &mut rng);
    let student_dim = cfg.descriptor_dim(&[3, 4, 5]);
    let teacher_dim = 7;
    let transform = Transformation::init(student_dim, teacher_dim, true, &mut rng);

    let q = random_tensor(2, 12, 12, &mut rng);
    let p = random_tensor(2, 12, 12, &mut rng);
    let n = random_tensor(2, 12, 12, &mut rng);
    let inputs = TripletInputs { q: &q, p: &p, n: &n };

    let teacher_q = l2_normalize(&(0..teacher_dim).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<_>>());
    let teacher_p = l2_normalize(&(0..teacher_dim).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<_>>());
    let teacher_n = l2_normalize(&(0..teacher_dim).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<_>>());
    let targets = KdTargets {
        q: &teacher_q,
        p: &teacher_p,
        n: &teacher_n,
        phi: 1.7,
    };
    // a margin large enough that the triplet term stays active
    let margin = 1.0;
    let h = 1e-7;

    // Eq. 3 alone: backbone parameters only
    let triplet = {
        let (_, grads, _) = triplet_total_backward(&params, &inputs, margin, None)?;
        let analytic = grads.flatten();
        let theta = params.flatten();
        let mut f = |flat: &[f64]| {
            let mut model = params.clone();
            model.set_from_flat(flat);
            triplet_total_forward(&model, &inputs, margin, None).unwrap().total
        };
        let numeric = central_difference(&mut f, &theta, h);
        relative_error(&analytic, &numeric)
    };

    // Eq. 5 alone: the distillation part of the objective. The analytic
    // backbone gradient is isolated by differencing the with- and
    // without-distillation runs (backpropagation is linear in the
    // descriptor gradient); the transformation gradient is already pure.
    let kd = {
        let (_, g_with, t_grads) = triplet_total_backward(&params, &inputs, margin, Some((&transform, &targets)))?;
        let (_, g_without, _) = triplet_total_backward(&params, &inputs, margin, None)?;
        let mut analytic: Vec<f64> = g_with
            .flatten()
            .iter()
            .zip(g_without.flatten())
            .map(|(a, b)| a - b)
            .collect();
        analytic.extend(t_grads.expect("kd gradients").flatten());
        let mut theta = params.flatten();
        theta.extend(transform.flatten());
        let n_backbone = params.num_params();
        let mut f = |flat: &[f64]| {
            let mut model = params.clone();
            model.set_from_flat(&flat[..n_backbone]);
            let mut t = transform.clone();
            t.set_from_flat(&flat[n_backbone..]);
            triplet_total_forward(&model, &inputs, margin, Some((&t, &targets))).unwrap().kd
        };
        let numeric = central_difference(&mut f, &theta, h);
        relative_error(&analytic, &numeric)
    };

    // Eq. 6: full objective
    let total = {
        let (_, grads, t_grads) = triplet_total_backward(&params, &inputs, margin, Some((&transform, &targets)))?;
        let mut analytic = grads.flatten();
        analytic.extend(t_grads.expect("kd gradients").flatten());
        let mut theta = params.flatten();
        theta.extend(transform.flatten());
        let n_backbone = params.num_params();
        let mut f = |flat: &[f64]| {
            let mut model = params.clone();
            model.set_from_flat(&flat[..n_backbone]);
            let mut t = transform.clone();
            t.set_from_flat(&flat[n_backbone..]);
            triplet_total_forward(&model, &inputs, margin, Some((&t, &targets))).unwrap().total
        };
        let numeric = central_difference(&mut f, &theta, h);
        relative_error(&analytic, &numeric)
    };

    Ok(LossGradReport { triplet, kd, total })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_polynomial_gradient() {
        // f = x0^2 + 3 x0 x1
        let mut f = |t: &[f64]| t[0] * t[0] + 3.0 * t[0] * t[1];
        let theta = [1.5, -2.0];
        let numeric = central_difference(&mut f, &theta, 1e-6);
        let analytic = [2.0 * 1.5 + 3.0 * -2.0, 3.0 * 1.5];
        assert!(relative_error(&analytic, &numeric) < 1e-8);
    }

    #[test]
    fn detects_a_wrong_gradient() {
        let mut f = |t: &[f64]| t[0] * t[0];
        let numeric = central_difference(&mut f, &[2.0], 1e-6);
        let wrong = [3.9];
        assert!(relative_error(&wrong, &numeric) > 1e-2);
    }
}
