//! Orthonormal polynomial basis on `[0, T]` with derivatives, Gauss-Legendre
//! quadrature and the Gram matrices used by the cost assemblies.
//!
//! The only shipped family is the shifted Legendre basis
//! `phi_k(t) = sqrt((2k - 1) / T) * P_{k-1}(2 t / T - 1)` for `k = 1..K`,
//! which is orthonormal with respect to the unweighted inner product
//! `<f, g> = integral of f g over [0, T]`. Basis functions are indexed from 1,
//! so dimension `d` uses exactly `K_d` functions.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::linalg::symmetric_eigen_desc;

#[derive(Error, Debug)]
pub enum BasisError {
    #[error("interval end must be positive and finite, got {0}")]
    InvalidDuration(f64),

    #[error("basis needs at least one dimension")]
    EmptyDims,

    #[error("every per-dimension order must be at least 1, got 0 for dimension {0}")]
    ZeroOrder(usize),

    #[error("time {t} outside the basis interval [0, {duration}]")]
    OutOfDomain { t: f64, duration: f64 },

    #[error("quadrature rule needs at least one node")]
    EmptyRule,
}

/// Basis family. Only the shifted Legendre family ships; the enumeration is
/// the extension point for other orthonormal systems.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum BasisKind {
    Legendre,
}

/// An orthonormal basis on `[0, T]` with per-dimension truncation orders.
#[derive(Clone, Debug, PartialEq)]
pub struct BasisSpec {
    kind: BasisKind,
    duration: f64,
    dims: Vec<usize>,
}

impl BasisSpec {
    /// Build a basis over `[0, duration]` with `dims[d]` functions for
    /// dimension `d`.
    pub fn new(kind: BasisKind, dims: Vec<usize>, duration: f64) -> Result<Self, BasisError> {
        if duration <= 0.0 || !duration.is_finite() {
            return Err(BasisError::InvalidDuration(duration));
        }
        if dims.is_empty() {
            return Err(BasisError::EmptyDims);
        }
        if let Some(d) = dims.iter().position(|&k| k == 0) {
            return Err(BasisError::ZeroOrder(d));
        }
        Ok(Self {
            kind,
            duration,
            dims,
        })
    }

    pub fn kind(&self) -> BasisKind {
        self.kind
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }

    /// Per-dimension truncation orders `K_d`.
    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    /// Number of trajectory components `D`.
    pub fn dim_count(&self) -> usize {
        self.dims.len()
    }

    /// Total coefficient count `K = sum K_d`.
    pub fn total_len(&self) -> usize {
        self.dims.iter().sum()
    }

    /// Largest per-dimension order; evaluations return this many values.
    pub fn max_order(&self) -> usize {
        *self.dims.iter().max().expect("dims validated non-empty")
    }

    /// Range of the stacked coefficient vector owned by dimension `d`.
    pub fn block_range(&self, d: usize) -> std::ops::Range<usize> {
        let start: usize = self.dims[..d].iter().sum();
        start..start + self.dims[d]
    }

    fn check_domain(&self, t: f64) -> Result<f64, BasisError> {
        let slack = 1e-12 * (1.0 + self.duration);
        if !t.is_finite() || t < -slack || t > self.duration + slack {
            return Err(BasisError::OutOfDomain {
                t,
                duration: self.duration,
            });
        }
        Ok(t.clamp(0.0, self.duration))
    }

    /// Values `phi_1(t), ..., phi_Kmax(t)`.
    pub fn eval(&self, t: f64) -> Result<DVector<f64>, BasisError> {
        let t = self.check_domain(t)?;
        let k_max = self.max_order();
        let x = 2.0 * t / self.duration - 1.0;
        let p = legendre_values(k_max, x);
        Ok(DVector::from_fn(k_max, |k, _| {
            ((2.0 * (k + 1) as f64 - 1.0) / self.duration).sqrt() * p[k]
        }))
    }

    /// Time derivatives `phi_1'(t), ..., phi_Kmax'(t)`; the chain rule brings
    /// in the `2 / T` factor from the affine map onto `[-1, 1]`.
    pub fn eval_derivative(&self, t: f64) -> Result<DVector<f64>, BasisError> {
        let t = self.check_domain(t)?;
        let k_max = self.max_order();
        let x = 2.0 * t / self.duration - 1.0;
        let dp = legendre_derivatives(k_max, x);
        let scale = 2.0 / self.duration;
        Ok(DVector::from_fn(k_max, |k, _| {
            ((2.0 * (k + 1) as f64 - 1.0) / self.duration).sqrt() * scale * dp[k]
        }))
    }

    /// Smallest rule exact for every quadratic-cost integrand of this basis,
    /// i.e. the first `n` with `2n - 1 >= 2 Kmax`.
    pub fn default_quadrature(&self) -> QuadratureRule {
        let n = self.max_order() + 1;
        QuadratureRule::gauss_legendre(n, self.duration).expect("n >= 1")
    }

    /// Gram matrices of the first `Kmax` functions: values against values,
    /// derivatives against values and derivatives against derivatives.
    pub fn gram_matrices(&self) -> GramMatrices {
        let k_max = self.max_order();
        let rule = self.default_quadrature();
        let n = rule.len();
        let mut values = DMatrix::zeros(n, k_max);
        let mut derivs = DMatrix::zeros(n, k_max);
        for (i, &t) in rule.nodes().iter().enumerate() {
            let v = self.eval(t).expect("node inside the interval");
            let dv = self.eval_derivative(t).expect("node inside the interval");
            for k in 0..k_max {
                values[(i, k)] = v[k];
                derivs[(i, k)] = dv[k];
            }
        }
        let weighted = |m: &DMatrix<f64>| {
            let mut w = m.clone();
            for (i, &wi) in rule.weights().iter().enumerate() {
                w.row_mut(i).scale_mut(wi);
            }
            w
        };
        let wv = weighted(&values);
        let wd = weighted(&derivs);
        GramMatrices {
            value: values.transpose() * &wv,
            cross: derivs.transpose() * &wv,
            derivative: derivs.transpose() * &wd,
        }
    }
}

/// Gram matrices over `[0, T]`, all `Kmax x Kmax`.
#[derive(Clone, Debug)]
pub struct GramMatrices {
    /// `integral of phi_k phi_l` — the identity for an orthonormal family.
    pub value: DMatrix<f64>,
    /// `integral of phi_k' phi_l` (row index carries the derivative).
    pub cross: DMatrix<f64>,
    /// `integral of phi_k' phi_l'`.
    pub derivative: DMatrix<f64>,
}

/// Legendre values `P_0(x) .. P_{n-1}(x)` by the three-term recurrence.
fn legendre_values(n: usize, x: f64) -> Vec<f64> {
    let mut p = Vec::with_capacity(n);
    p.push(1.0);
    if n > 1 {
        p.push(x);
    }
    for j in 1..n.saturating_sub(1) {
        let jf = j as f64;
        let next = ((2.0 * jf + 1.0) * x * p[j] - jf * p[j - 1]) / (jf + 1.0);
        p.push(next);
    }
    p
}

/// Legendre derivatives `P_0'(x) .. P_{n-1}'(x)`, differentiated recurrence.
fn legendre_derivatives(n: usize, x: f64) -> Vec<f64> {
    let mut p = Vec::with_capacity(n);
    let mut dp = Vec::with_capacity(n);
    p.push(1.0);
    dp.push(0.0);
    if n > 1 {
        p.push(x);
        dp.push(1.0);
    }
    for j in 1..n.saturating_sub(1) {
        let jf = j as f64;
        let next = ((2.0 * jf + 1.0) * x * p[j] - jf * p[j - 1]) / (jf + 1.0);
        let dnext = ((2.0 * jf + 1.0) * (p[j] + x * dp[j]) - jf * dp[j - 1]) / (jf + 1.0);
        p.push(next);
        dp.push(dnext);
    }
    dp
}

/// A positive-weight quadrature rule on `[0, T]`.
#[derive(Clone, Debug)]
pub struct QuadratureRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    order: usize,
}

impl QuadratureRule {
    /// `n`-node Gauss-Legendre rule on `[0, duration]`, exact for polynomials
    /// up to degree `2n - 1`. Nodes and weights come from the Golub-Welsch
    /// eigendecomposition of the Jacobi matrix.
    pub fn gauss_legendre(n: usize, duration: f64) -> Result<Self, BasisError> {
        if n == 0 {
            return Err(BasisError::EmptyRule);
        }
        if duration <= 0.0 || !duration.is_finite() {
            return Err(BasisError::InvalidDuration(duration));
        }
        let mut jacobi = DMatrix::zeros(n, n);
        for k in 1..n {
            let kf = k as f64;
            let b = kf / (4.0 * kf * kf - 1.0).sqrt();
            jacobi[(k - 1, k)] = b;
            jacobi[(k, k - 1)] = b;
        }
        let (eigenvalues, eigenvectors) = symmetric_eigen_desc(&jacobi);
        let mut pairs: Vec<(f64, f64)> = (0..n)
            .map(|i| {
                let first = eigenvectors[(0, i)];
                (eigenvalues[i], 2.0 * first * first)
            })
            .collect();
        pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite nodes"));
        let half = duration / 2.0;
        Ok(Self {
            nodes: pairs.iter().map(|&(x, _)| half * (x + 1.0)).collect(),
            weights: pairs.iter().map(|&(_, w)| half * w).collect(),
            order: 2 * n - 1,
        })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Polynomial exactness degree.
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn integrate(&self, mut f: impl FnMut(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&t, &w)| w * f(t))
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn legendre(dims: &[usize], duration: f64) -> BasisSpec {
        BasisSpec::new(BasisKind::Legendre, dims.to_vec(), duration).unwrap()
    }

    #[test]
    fn rejects_invalid_arguments() {
        assert!(matches!(
            BasisSpec::new(BasisKind::Legendre, vec![2], 0.0),
            Err(BasisError::InvalidDuration(_))
        ));
        assert!(matches!(
            BasisSpec::new(BasisKind::Legendre, vec![2], -1.0),
            Err(BasisError::InvalidDuration(_))
        ));
        assert!(matches!(
            BasisSpec::new(BasisKind::Legendre, vec![], 1.0),
            Err(BasisError::EmptyDims)
        ));
        assert!(matches!(
            BasisSpec::new(BasisKind::Legendre, vec![3, 0], 1.0),
            Err(BasisError::ZeroOrder(1))
        ));
        assert!(matches!(
            QuadratureRule::gauss_legendre(0, 1.0),
            Err(BasisError::EmptyRule)
        ));
    }

    #[test]
    fn first_two_functions_on_unit_interval() {
        let spec = legendre(&[2], 1.0);
        let sqrt3 = 3.0f64.sqrt();
        for &(t, phi2) in &[(0.0, -sqrt3), (0.5, 0.0), (1.0, sqrt3)] {
            let v = spec.eval(t).unwrap();
            assert_relative_eq!(v[0], 1.0, epsilon = 1e-14);
            assert_relative_eq!(v[1], phi2, epsilon = 1e-14);
        }
    }

    #[test]
    fn twenty_coefficients_for_climb_orders() {
        let spec = legendre(&[4, 10, 6], 17.3);
        assert_eq!(spec.total_len(), 20);
        assert_eq!(spec.max_order(), 10);
        assert_eq!(spec.block_range(1), 4..14);
    }

    #[test]
    fn constant_function_is_normalized() {
        let spec = legendre(&[1], 2.0);
        let v = spec.eval(1.0).unwrap();
        assert_relative_eq!(v[0], 1.0 / 2.0f64.sqrt(), epsilon = 1e-14);
    }

    #[test]
    fn eval_rejects_out_of_domain() {
        let spec = legendre(&[2], 1.0);
        assert!(matches!(
            spec.eval(1.5),
            Err(BasisError::OutOfDomain { .. })
        ));
        assert!(matches!(
            spec.eval_derivative(-0.1),
            Err(BasisError::OutOfDomain { .. })
        ));
    }

    #[test]
    fn derivative_of_linear_function() {
        let spec = legendre(&[2], 1.0);
        for &t in &[0.0, 0.3, 1.0] {
            let dv = spec.eval_derivative(t).unwrap();
            assert_relative_eq!(dv[0], 0.0, epsilon = 1e-14);
            assert_relative_eq!(dv[1], 2.0 * 3.0f64.sqrt(), epsilon = 1e-13);
        }
        let single = legendre(&[1], 5.0);
        assert_relative_eq!(single.eval_derivative(2.0).unwrap()[0], 0.0);
    }

    #[test]
    fn derivative_matches_central_differences() {
        let spec = legendre(&[3], 1.0);
        let h = 1e-6;
        let t = 0.3;
        let fwd = spec.eval(t + h).unwrap();
        let bwd = spec.eval(t - h).unwrap();
        let dv = spec.eval_derivative(t).unwrap();
        for k in 0..3 {
            assert_relative_eq!(dv[k], (fwd[k] - bwd[k]) / (2.0 * h), epsilon = 1e-6);
        }
    }

    #[test]
    fn orthonormality_across_orders_and_durations() {
        for &duration in &[1.0, 1033.0] {
            let spec = legendre(&[16], duration);
            let gram = spec.gram_matrices();
            let k = spec.max_order();
            for i in 0..k {
                for j in 0..k {
                    let expect = if i == j { 1.0 } else { 0.0 };
                    assert!(
                        (gram.value[(i, j)] - expect).abs() <= 1e-10,
                        "G[{i},{j}] = {} off identity for T = {duration}",
                        gram.value[(i, j)]
                    );
                }
            }
        }
    }

    #[test]
    fn derivative_gram_on_two_functions() {
        let spec = legendre(&[2], 1.0);
        let gram = spec.gram_matrices();
        let expect = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 12.0]);
        assert_relative_eq!(gram.derivative, expect, epsilon = 1e-10);
        // integral of phi_2' phi_1 = 2 sqrt(3); everything else vanishes
        let cross = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 2.0 * 3.0f64.sqrt(), 0.0]);
        assert_relative_eq!(gram.cross, cross, epsilon = 1e-12);
    }

    #[test]
    fn integration_by_parts_identity() {
        // cross + cross^T = phi(T) phi(T)^T - phi(0) phi(0)^T
        let spec = legendre(&[6], 3.0);
        let gram = spec.gram_matrices();
        let at_start = spec.eval(0.0).unwrap();
        let at_end = spec.eval(3.0).unwrap();
        let boundary = &at_end * at_end.transpose() - &at_start * at_start.transpose();
        let sum = &gram.cross + gram.cross.transpose();
        assert_relative_eq!(sum, boundary, epsilon = 1e-10);
    }

    #[test]
    fn midpoint_rule_is_one_node() {
        let rule = QuadratureRule::gauss_legendre(1, 1.0).unwrap();
        assert_relative_eq!(rule.nodes()[0], 0.5, epsilon = 1e-15);
        assert_relative_eq!(rule.weights()[0], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn two_node_rule_on_unit_interval() {
        let rule = QuadratureRule::gauss_legendre(2, 1.0).unwrap();
        let offset = 1.0 / (2.0 * 3.0f64.sqrt());
        assert_relative_eq!(rule.nodes()[0], 0.5 - offset, epsilon = 1e-14);
        assert_relative_eq!(rule.nodes()[1], 0.5 + offset, epsilon = 1e-14);
        assert_relative_eq!(rule.weights()[0], 0.5, epsilon = 1e-14);
        assert_relative_eq!(rule.weights()[1], 0.5, epsilon = 1e-14);
        assert_relative_eq!(rule.integrate(|t| t * t), 1.0 / 3.0, epsilon = 1e-14);
    }

    #[test]
    fn exactness_degree_against_monomials() {
        for n in 1..=12usize {
            let duration = 2.5;
            let rule = QuadratureRule::gauss_legendre(n, duration).unwrap();
            let total: f64 = rule.weights().iter().sum();
            assert_relative_eq!(total, duration, epsilon = 1e-12);
            for degree in 0..=rule.order() {
                let exact = duration.powi(degree as i32 + 1) / (degree as f64 + 1.0);
                let got = rule.integrate(|t| t.powi(degree as i32));
                assert!(
                    (got - exact).abs() <= 1e-10 * exact.max(1.0),
                    "n = {n} degree = {degree}: {got} vs {exact}"
                );
            }
        }
    }
}
