//! Gated visual embedding layer.
//!
//! Each frame feature `v` (length `d_v`) is projected to `v̄ = W1·v`, mixed
//! with its tanh transform through a sigmoid gate, and batch-normalized with
//! fixed inference statistics.

use crate::error::{Error, Result};

use super::{sigmoid, Matrix, Scalar};

#[derive(Debug, Clone, PartialEq)]
pub struct VelParams<T> {
    /// `d × d_v` projection.
    pub w1: Matrix<T>,
    /// `d × d` transform feeding tanh.
    pub w2: Matrix<T>,
    /// `d × d` gate weights.
    pub w3: Matrix<T>,
    pub bn_mean: Vec<T>,
    pub bn_var: Vec<T>,
    pub bn_gamma: Vec<T>,
    pub bn_beta: Vec<T>,
    pub eps: T,
}

impl<T: Scalar> VelParams<T> {
    /// Zero transforms and identity normalization.
    pub fn identity_bn(w1: Matrix<T>) -> Self {
        let d = w1.rows();
        VelParams {
            w1,
            w2: Matrix::zeros(d, d),
            w3: Matrix::zeros(d, d),
            bn_mean: vec![T::zero(); d],
            bn_var: vec![T::one(); d],
            bn_gamma: vec![T::one(); d],
            bn_beta: vec![T::zero(); d],
            eps: T::zero(),
        }
    }

    pub fn model_dim(&self) -> usize {
        self.w1.rows()
    }

    pub fn visual_dim(&self) -> usize {
        self.w1.cols()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.model_dim();
        if self.w2.shape() != (d, d) || self.w3.shape() != (d, d) {
            return Err(Error::Shape(format!(
                "W2 {:?} and W3 {:?} must be {d}x{d}",
                self.w2.shape(),
                self.w3.shape()
            )));
        }
        for (name, v) in [
            ("bn_mean", &self.bn_mean),
            ("bn_var", &self.bn_var),
            ("bn_gamma", &self.bn_gamma),
            ("bn_beta", &self.bn_beta),
        ] {
            if v.len() != d {
                return Err(Error::Shape(format!(
                    "{name} has length {}, expected {d}",
                    v.len()
                )));
            }
        }
        if self.bn_var.iter().any(|&v| v < T::zero()) {
            return Err(Error::InvalidParameter(
                "bn_var entries must be non-negative".into(),
            ));
        }
        if self.eps < T::zero()
            || (self.eps == T::zero() && self.bn_var.iter().any(|v| v.is_zero()))
        {
            return Err(Error::InvalidParameter("var + eps must be positive".into()));
        }
        Ok(())
    }
}

/// Intermediate activations of one forward pass.
#[derive(Debug, Clone)]
pub(crate) struct VelTrace<T> {
    pub projected: Vec<T>,
    pub transformed: Vec<T>,
    pub gate: Vec<T>,
    pub out: Vec<T>,
}

pub(crate) fn vel_trace<T: Scalar>(v: &[T], p: &VelParams<T>) -> Result<VelTrace<T>> {
    p.validate()?;
    let projected = p.w1.apply(v)?;
    let transformed: Vec<T> = p.w2.apply(&projected)?.into_iter().map(T::tanh).collect();
    let gate: Vec<T> = p.w3.apply(&projected)?.into_iter().map(sigmoid).collect();
    let out = (0..projected.len())
        .map(|i| {
            let mixed = gate[i] * projected[i] + (T::one() - gate[i]) * transformed[i];
            p.bn_gamma[i] * (mixed - p.bn_mean[i]) / (p.bn_var[i] + p.eps).sqrt() + p.bn_beta[i]
        })
        .collect();
    Ok(VelTrace {
        projected,
        transformed,
        gate,
        out,
    })
}

/// Embeds one frame feature vector. Output length is `d`.
pub fn vel_forward<T: Scalar>(v: &[T], p: &VelParams<T>) -> Result<Vec<T>> {
    Ok(vel_trace(v, p)?.out)
}

/// Applies the layer to every row of an `S × d_v` feature matrix.
pub fn vel_forward_rows<T: Scalar>(features: &Matrix<T>, p: &VelParams<T>) -> Result<Matrix<T>> {
    let rows = (0..features.rows())
        .map(|r| vel_forward(features.row(r), p))
        .collect::<Result<Vec<_>>>()?;
    if rows.is_empty() {
        return Ok(Matrix::zeros(0, p.model_dim()));
    }
    Matrix::from_rows(&rows)
}

/// Gradient of `Σ weights ∘ vel_forward(v)` with respect to `v`.
pub(crate) fn vel_input_grad<T: Scalar>(
    v: &[T],
    p: &VelParams<T>,
    weights: &[T],
) -> Result<Vec<T>> {
    let t = vel_trace(v, p)?;
    if let Some(i) = t.gate.iter().position(|&g| g <= T::zero() || g >= T::one()) {
        return Err(Error::NonDifferentiable(format!(
            "gate component {i} saturated"
        )));
    }
    let d = t.projected.len();
    let mut d_proj = vec![T::zero(); d];
    let mut d_pre_tanh = vec![T::zero(); d];
    let mut d_pre_gate = vec![T::zero(); d];
    for i in 0..d {
        let dz = weights[i] * p.bn_gamma[i] / (p.bn_var[i] + p.eps).sqrt();
        let g = t.gate[i];
        d_proj[i] = dz * g;
        d_pre_tanh[i] = dz * (T::one() - g) * (T::one() - t.transformed[i] * t.transformed[i]);
        d_pre_gate[i] = dz * (t.projected[i] - t.transformed[i]) * g * (T::one() - g);
    }
    let via_tanh = p.w2.apply_t(&d_pre_tanh)?;
    let via_gate = p.w3.apply_t(&d_pre_gate)?;
    for i in 0..d {
        d_proj[i] = d_proj[i] + via_tanh[i] + via_gate[i];
    }
    p.w1.apply_t(&d_proj)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn w1() -> Matrix<f64> {
        Matrix::from_rows(&[vec![1.0, 2.0, 0.5], vec![-1.0, 0.0, 3.0]]).unwrap()
    }

    #[test]
    fn zero_transforms_halve_the_projection() {
        let p = VelParams::identity_bn(w1());
        let out = vel_forward(&[1.0, 1.0, 2.0], &p).unwrap();
        // W1·v = [4, 5]
        assert_eq!(out, vec![2.0, 2.5]);
    }

    #[test]
    fn zero_input_gives_normalized_zero() {
        let mut p = VelParams::identity_bn(w1());
        p.bn_mean = vec![0.5, -1.0];
        p.bn_var = vec![4.0, 0.25];
        p.bn_gamma = vec![2.0, 3.0];
        p.bn_beta = vec![0.1, 0.2];
        p.eps = 1e-5;
        let out = vel_forward(&[0.0; 3], &p).unwrap();
        for (i, o) in out.iter().enumerate() {
            let expect = p.bn_beta[i] - p.bn_gamma[i] * p.bn_mean[i] / (p.bn_var[i] + p.eps).sqrt();
            assert!((o - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn shape_and_parameter_errors() {
        let p = VelParams::identity_bn(w1());
        assert!(matches!(vel_forward(&[1.0, 2.0], &p), Err(Error::Shape(_))));
        let mut bad = p.clone();
        bad.bn_var[0] = -1.0;
        assert!(vel_forward(&[1.0, 2.0, 3.0], &bad).is_err());
        let mut bad = p;
        bad.w3 = Matrix::zeros(3, 3);
        assert!(vel_forward(&[1.0, 2.0, 3.0], &bad).is_err());
    }

    #[test]
    fn rows_are_embedded_independently() {
        let p = VelParams::identity_bn(w1());
        let x = Matrix::from_rows(&[vec![1.0, 1.0, 2.0], vec![0.0, 0.0, 0.0]]).unwrap();
        let out = vel_forward_rows(&x, &p).unwrap();
        assert_eq!(out.shape(), (2, 2));
        assert_eq!(out.row(0), &[2.0, 2.5]);
        assert_eq!(out.row(1), &[0.0, 0.0]);
    }
}
