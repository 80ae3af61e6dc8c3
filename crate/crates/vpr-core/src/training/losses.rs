//! Triplet VPR loss and the weighted feature-mimic distillation loss,
//! with analytic gradients.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Transformation;
use crate::tensor::l2_distance;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TripletLossConfig {
    pub margin: f64,
}

impl Default for TripletLossConfig {
    fn default() -> Self {
        Self { margin: 0.1 }
    }
}

impl TripletLossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin >= 0.0) {
            return Err(Error::Config(format!("margin must be ≥ 0, got {}", self.margin)));
        }
        Ok(())
    }
}

fn check_dims(xq: &[f64], xp: &[f64], xn: &[f64]) -> Result<()> {
    if xq.len() != xp.len() || xq.len() != xn.len() {
        return Err(Error::Loss(format!(
            "triplet descriptor dims differ: q={}, p={}, n={}",
            xq.len(),
            xp.len(),
            xn.len()
        )));
    }
    Ok(())
}

/// `max(d(x_q, x_p) − d(x_q, x_n) + m, 0)` with d the L2 distance.
pub fn triplet_loss(xq: &[f64], xp: &[f64], xn: &[f64], cfg: &TripletLossConfig) -> Result<f64> {
    check_dims(xq, xp, xn)?;
    Ok((l2_distance(xq, xp) - l2_distance(xq, xn) + cfg.margin).max(0.0))
}

const DIST_EPS: f64 = 1e-12;

/// Triplet loss plus gradients w.r.t. the three descriptors. Inactive
/// triplets (hinge at zero) yield zero gradients.
pub fn triplet_loss_grad(
    xq: &[f64],
    xp: &[f64],
    xn: &[f64],
    cfg: &TripletLossConfig,
) -> Result<(f64, Vec<f64>, Vec<f64>, Vec<f64>)> {
    check_dims(xq, xp, xn)?;
    let dqp = l2_distance(xq, xp);
    let dqn = l2_distance(xq, xn);
    let loss = (dqp - dqn + cfg.margin).max(0.0);
    let dim = xq.len();
    let mut dq = vec![0.0; dim];
    let mut dp = vec![0.0; dim];
    let mut dn = vec![0.0; dim];
    if loss > 0.0 {
        for i in 0..dim {
            let uqp = if dqp > DIST_EPS { (xq[i] - xp[i]) / dqp } else { 0.0 };
            let uqn = if dqn > DIST_EPS { (xq[i] - xn[i]) / dqn } else { 0.0 };
            dq[i] = uqp - uqn;
            dp[i] = -uqp;
            dn[i] = uqn;
        }
    }
    Ok((loss, dq, dp, dn))
}

fn check_kd_dims(teacher: &[f64], student: &[f64], t: &Transformation, phi: f64) -> Result<()> {
    if t.in_dim != student.len() {
        return Err(Error::Loss(format!(
            "transformation input dim {} vs student descriptor dim {}",
            t.in_dim,
            student.len()
        )));
    }
    if t.out_dim != teacher.len() {
        return Err(Error::Loss(format!(
            "transformation output dim {} vs teacher descriptor dim {}",
            t.out_dim,
            teacher.len()
        )));
    }
    if phi < 0.0 {
        return Err(Error::Loss(format!("distillation weight must be ≥ 0, got {phi}")));
    }
    Ok(())
}

/// `φ · ‖x_S − T(x_D)‖²₂`. The teacher descriptor is a constant.
pub fn kd_loss(teacher: &[f64], student: &[f64], t: &Transformation, phi: f64) -> Result<f64> {
    check_kd_dims(teacher, student, t, phi)?;
    if phi == 0.0 {
        return Ok(0.0);
    }
    let mapped = t.apply(student)?;
    let sq: f64 = teacher
        .iter()
        .zip(&mapped)
        .map(|(s, m)| (s - m) * (s - m))
        .sum();
    Ok(phi * sq)
}

/// Distillation loss plus gradients: returns the loss and `dL/d(student
/// descriptor)`, accumulating `dL/dT` into `t_grad`. `φ = 0` contributes
/// exactly nothing.
pub fn kd_loss_grad(
    teacher: &[f64],
    student: &[f64],
    t: &Transformation,
    phi: f64,
    t_grad: &mut Transformation,
) -> Result<(f64, Vec<f64>)> {
    check_kd_dims(teacher, student, t, phi)?;
    if phi == 0.0 {
        return Ok((0.0, vec![0.0; student.len()]));
    }
    let mapped = t.apply(student)?;
    let residual: Vec<f64> = teacher.iter().zip(&mapped).map(|(s, m)| s - m).collect();
    let loss = phi * residual.iter().map(|r| r * r).sum::<f64>();
    // dL/d(mapped) = -2 φ residual, then back through the affine map
    let d_mapped: Vec<f64> = residual.iter().map(|r| -2.0 * phi * r).collect();
    let d_student = t.backward(student, &d_mapped, t_grad);
    Ok((loss, d_student))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> TripletLossConfig {
        TripletLossConfig { margin: 0.1 }
    }

    #[test]
    fn satisfied_triplet_is_zero() {
        // d(q,p)=0.3, d(q,n)=0.9
        let q = [0.0, 0.0];
        let p = [0.3, 0.0];
        let n = [0.9, 0.0];
        assert_eq!(triplet_loss(&q, &p, &n, &cfg()).unwrap(), 0.0);
    }

    #[test]
    fn equal_distances_give_margin() {
        let q = [0.0, 0.0];
        let p = [0.5, 0.0];
        let n = [0.0, 0.5];
        let loss = triplet_loss(&q, &p, &n, &cfg()).unwrap();
        assert!((loss - 0.1).abs() < 1e-12);
    }

    #[test]
    fn violated_triplet_value() {
        // d(q,p)=0.8, d(q,n)=0.5 -> 0.4
        let q = [0.0, 0.0];
        let p = [0.8, 0.0];
        let n = [0.5, 0.0];
        let loss = triplet_loss(&q, &p, &n, &cfg()).unwrap();
        assert!((loss - 0.4).abs() < 1e-12);
    }

    #[test]
    fn dim_mismatch_is_loss_error() {
        let err = triplet_loss(&[0.0, 1.0], &[0.0], &[1.0], &cfg()).unwrap_err();
        assert!(matches!(err, Error::Loss(_)));
    }

    #[test]
    fn inactive_triplet_has_zero_grads() {
        let q = [0.0, 0.0];
        let p = [0.1, 0.0];
        let n = [0.9, 0.0];
        let (loss, dq, dp, dn) = triplet_loss_grad(&q, &p, &n, &cfg()).unwrap();
        assert_eq!(loss, 0.0);
        assert!(dq.iter().chain(&dp).chain(&dn).all(|&g| g == 0.0));
    }

    #[test]
    fn perfect_mimic_is_zero() {
        let t = Transformation::identity(3);
        let d = [0.2, -0.4, 0.6];
        assert_eq!(kd_loss(&d, &d, &t, 1.5).unwrap(), 0.0);
    }

    #[test]
    fn zero_weight_is_zero_for_any_descriptors() {
        let t = Transformation::identity(2);
        assert_eq!(kd_loss(&[1.0, 0.0], &[-3.0, 7.0], &t, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn hand_computed_kd_value() {
        // teacher (1,0), T(student) = (0,1), phi 2 -> 2·(1+1) = 4
        let t = Transformation::identity(2);
        let loss = kd_loss(&[1.0, 0.0], &[0.0, 1.0], &t, 2.0).unwrap();
        assert!((loss - 4.0).abs() < 1e-12);
    }

    #[test]
    fn kd_dim_mismatch_is_loss_error() {
        let t = Transformation::zeros(3, 2, false);
        assert!(matches!(
            kd_loss(&[0.0, 0.0], &[0.0; 4], &t, 1.0),
            Err(Error::Loss(_))
        ));
        assert!(matches!(
            kd_loss(&[0.0; 3], &[0.0; 3], &t, 1.0),
            Err(Error::Loss(_))
        ));
    }

    #[test]
    fn zero_phi_grads_are_exactly_zero() {
        let t = Transformation::identity(2);
        let mut t_grad = Transformation::zeros(2, 2, true);
        let (loss, d_student) = kd_loss_grad(&[1.0, 0.0], &[0.5, 0.5], &t, 0.0, &mut t_grad).unwrap();
        assert_eq!(loss, 0.0);
        assert!(d_student.iter().all(|&g| g == 0.0));
        assert!(t_grad.weight.iter().all(|&g| g == 0.0));
        assert!(t_grad.bias.unwrap().iter().all(|&g| g == 0.0));
    }
}
