//! The affine map T embedding student descriptors into teacher space.

use rand::Rng;

use crate::error::{Error, Result};

/// Affine transformation `y = W·x + b` from student descriptor space into
/// teacher descriptor space. The output is deliberately not re-normalized:
/// it is compared against the teacher descriptor inside the distillation
/// loss, never used for retrieval.
#[derive(Debug, Clone, PartialEq)]
pub struct Transformation {
    pub in_dim: usize,
    pub out_dim: usize,
    /// Row-major `[out_dim][in_dim]`.
    pub weight: Vec<f64>,
    /// Absent when the transformation is configured bias-free.
    pub bias: Option<Vec<f64>>,
}

impl Transformation {
    pub fn identity(dim: usize) -> Self {
        let mut weight = vec![0.0; dim * dim];
        for i in 0..dim {
            weight[i * dim + i] = 1.0;
        }
        Self {
            in_dim: dim,
            out_dim: dim,
            weight,
            bias: Some(vec![0.0; dim]),
        }
    }

    pub fn zeros(in_dim: usize, out_dim: usize, with_bias: bool) -> Self {
        Self {
            in_dim,
            out_dim,
            weight: vec![0.0; out_dim * in_dim],
            bias: with_bias.then(|| vec![0.0; out_dim]),
        }
    }

    /// Xavier-style init, drawn as `f32` values (see `BackboneParams::init`).
    pub fn init(in_dim: usize, out_dim: usize, with_bias: bool, rng: &mut impl Rng) -> Self {
        let bound = (6.0 / (in_dim + out_dim) as f64).sqrt() as f32;
        let weight = (0..out_dim * in_dim)
            .map(|_| rng.gen_range(-bound..bound) as f64)
            .collect();
        Self {
            in_dim,
            out_dim,
            weight,
            bias: with_bias.then(|| vec![0.0; out_dim]),
        }
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.in_dim {
            return Err(Error::Model(format!(
                "transformation expects input dim {}, got {}",
                self.in_dim,
                x.len()
            )));
        }
        let mut out = match &self.bias {
            Some(b) => b.clone(),
            None => vec![0.0; self.out_dim],
        };
        for (o, out_v) in out.iter_mut().enumerate() {
            let row = &self.weight[o * self.in_dim..(o + 1) * self.in_dim];
            let mut acc = 0.0;
            for (w, xi) in row.iter().zip(x) {
                acc += w * xi;
            }
            *out_v += acc;
        }
        Ok(out)
    }

    /// Given `dL/dy`, accumulates `dL/dW`, `dL/db` into `grad` and returns `dL/dx`.
    pub fn backward(&self, x: &[f64], d_out: &[f64], grad: &mut Transformation) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.in_dim);
        debug_assert_eq!(d_out.len(), self.out_dim);
        let mut d_x = vec![0.0; self.in_dim];
        for (o, &g) in d_out.iter().enumerate() {
            if let Some(b) = grad.bias.as_mut() {
                b[o] += g;
            }
            let row = &self.weight[o * self.in_dim..(o + 1) * self.in_dim];
            let grow = &mut grad.weight[o * self.in_dim..(o + 1) * self.in_dim];
            for i in 0..self.in_dim {
                grow[i] += g * x[i];
                d_x[i] += g * row[i];
            }
        }
        d_x
    }

    pub fn num_params(&self) -> usize {
        self.weight.len() + self.bias.as_ref().map_or(0, |b| b.len())
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = self.weight.clone();
        if let Some(b) = &self.bias {
            out.extend_from_slice(b);
        }
        out
    }

    pub fn set_from_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.num_params());
        let wl = self.weight.len();
        self.weight.copy_from_slice(&flat[..wl]);
        if let Some(b) = self.bias.as_mut() {
            b.copy_from_slice(&flat[wl..]);
        }
    }

    pub fn add_assign(&mut self, other: &Transformation) {
        for (a, b) in self.weight.iter_mut().zip(&other.weight) {
            *a += b;
        }
        if let (Some(a), Some(b)) = (self.bias.as_mut(), other.bias.as_ref()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for w in &mut self.weight {
            *w *= s;
        }
        if let Some(b) = self.bias.as_mut() {
            for v in b {
                *v *= s;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_passes_through() {
        let t = Transformation::identity(4);
        let x = vec![0.5, -1.0, 2.0, 0.0];
        assert_eq!(t.apply(&x).unwrap(), x);
    }

    #[test]
    fn zero_map_gives_zero() {
        let t = Transformation::zeros(3, 5, true);
        assert_eq!(t.apply(&[1.0, 2.0, 3.0]).unwrap(), vec![0.0; 5]);
    }

    #[test]
    fn random_map_matches_explicit_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let t = Transformation::init(448, 480, true, &mut rng);
        use rand::Rng;
        let x: Vec<f64> = (0..448).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y = t.apply(&x).unwrap();
        assert_eq!(y.len(), 480);
        for o in 0..480 {
            let mut expect = t.bias.as_ref().unwrap()[o];
            for i in 0..448 {
                expect += t.weight[o * 448 + i] * x[i];
            }
            assert!((y[o] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn dim_mismatch_is_model_error() {
        let t = Transformation::zeros(3, 5, false);
        assert!(t.apply(&[1.0, 2.0]).is_err());
    }
}
