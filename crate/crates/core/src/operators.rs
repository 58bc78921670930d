//! Energy-dependent operators: square complex matrices as functions of a real
//! energy, with derivatives up to a fixed truncation cap.
//!
//! Everything downstream (kernels K0, K1 and inverse free Green functions
//! G0^-1, G1^-1) is represented by [`EnergyOperator`]. Operators are immutable
//! after construction and all evaluations are pure.

use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{CMatrix, CVector};

/// Highest supported energy-derivative order.
pub const DERIVATIVE_ORDER_CAP: usize = 6;

/// Relative tolerance for the Hermiticity check at construction and in tests.
pub const HERMITICITY_TOL: f64 = 1e-12;

const SINGULARITY_GUARD: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum OperatorError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("operator dimension must be positive")]
    EmptyDimension,
    #[error("operator is not Hermitian at real energies (deviation {deviation:.3e})")]
    NotHermitian { deviation: f64 },
    #[error("evaluation at singular point E = {energy}")]
    SingularPoint { energy: f64 },
    #[error("non-finite entries in evaluation at E = {energy}")]
    NonFinite { energy: f64 },
    #[error("derivative order {order} exceeds truncation cap {cap}")]
    DerivativeOrderCap { order: usize, cap: usize },
    #[error("derivative order must be at least 1")]
    ZeroDerivativeOrder,
}

/// Scalar energy profile g(E) for separable kernels. Real-valued at real E,
/// so g(E)*u*u^dag stays Hermitian.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScalarProfile {
    /// g(E) = value
    Constant { value: f64 },
    /// g(E) = coeffs[0] + coeffs[1]*E + coeffs[2]*E^2 + ...
    Polynomial { coeffs: Vec<f64> },
    /// g(E) = scale / (E + shift), singular at E = -shift
    Reciprocal { scale: f64, shift: f64 },
}

impl ScalarProfile {
    pub fn eval(&self, e: f64) -> f64 {
        match self {
            ScalarProfile::Constant { value } => *value,
            ScalarProfile::Polynomial { coeffs } => {
                coeffs.iter().rev().fold(0.0, |acc, c| acc * e + c)
            }
            ScalarProfile::Reciprocal { scale, shift } => scale / (e + shift),
        }
    }

    /// Analytic d^order/dE^order of the profile.
    pub fn derivative(&self, e: f64, order: usize) -> f64 {
        match self {
            ScalarProfile::Constant { .. } => 0.0,
            ScalarProfile::Polynomial { coeffs } => {
                // d^k E^m = m!/(m-k)! E^(m-k)
                let mut acc = 0.0;
                for (m, c) in coeffs.iter().enumerate() {
                    if m >= order {
                        let mut fac = 1.0;
                        for j in 0..order {
                            fac *= (m - j) as f64;
                        }
                        acc += c * fac * e.powi((m - order) as i32);
                    }
                }
                acc
            }
            ScalarProfile::Reciprocal { scale, shift } => {
                // d^k (E+s)^-1 = (-1)^k k! (E+s)^-(k+1)
                let mut fac = 1.0;
                for j in 1..=order {
                    fac *= j as f64;
                }
                let sign = if order % 2 == 0 { 1.0 } else { -1.0 };
                sign * fac * scale / (e + shift).powi(order as i32 + 1)
            }
        }
    }

    pub fn singularity(&self) -> Option<f64> {
        match self {
            ScalarProfile::Reciprocal { shift, .. } => Some(-shift),
            _ => None,
        }
    }

    pub fn is_constant(&self) -> bool {
        match self {
            ScalarProfile::Constant { .. } => true,
            ScalarProfile::Polynomial { coeffs } => coeffs.iter().skip(1).all(|&c| c == 0.0),
            ScalarProfile::Reciprocal { scale, .. } => *scale == 0.0,
        }
    }
}

/// A caller-supplied evaluation rule. The declared Hermitian window is sampled
/// at construction to reject non-Hermitian kernels.
pub struct CallableOp {
    pub dim: usize,
    pub eval: Box<dyn Fn(f64) -> CMatrix + Send + Sync>,
    /// Analytic d^order/dE^order rule; finite differences are used when absent.
    pub derivative: Option<Box<dyn Fn(f64, usize) -> CMatrix + Send + Sync>>,
    pub singular_points: Vec<f64>,
    /// Window on which Hermiticity is verified at construction.
    pub hermitian_window: (f64, f64),
}

#[derive(Clone)]
enum Kind {
    Constant(CMatrix),
    QmFreeInverse { h0_diag: Vec<f64> },
    Separable { u: CVector, profile: ScalarProfile },
    Combination { terms: Vec<(f64, EnergyOperator)> },
    Callable(Arc<CallableOp>),
}

/// A dim x dim complex-matrix-valued function of a real energy.
#[derive(Clone)]
pub struct EnergyOperator {
    dim: usize,
    kind: Kind,
}

impl fmt::Debug for EnergyOperator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match &self.kind {
            Kind::Constant(_) => "constant",
            Kind::QmFreeInverse { .. } => "qm_free_inverse",
            Kind::Separable { .. } => "separable",
            Kind::Combination { .. } => "combination",
            Kind::Callable(_) => "callable",
        };
        f.debug_struct("EnergyOperator")
            .field("dim", &self.dim)
            .field("kind", &kind)
            .finish()
    }
}

fn hermiticity_deviation(m: &CMatrix) -> f64 {
    let dev = (m - m.adjoint()).norm();
    let scale = m.norm().max(1.0);
    dev / scale
}

impl EnergyOperator {
    /// Wraps a constant matrix. Rejects non-Hermitian input.
    pub fn constant(matrix: CMatrix) -> Result<Self, OperatorError> {
        if matrix.nrows() == 0 {
            return Err(OperatorError::EmptyDimension);
        }
        if matrix.nrows() != matrix.ncols() {
            return Err(OperatorError::DimensionMismatch(format!(
                "constant matrix is {}x{}, expected square",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        let dev = hermiticity_deviation(&matrix);
        if dev > HERMITICITY_TOL {
            return Err(OperatorError::NotHermitian { deviation: dev });
        }
        Ok(Self {
            dim: matrix.nrows(),
            kind: Kind::Constant(matrix),
        })
    }

    /// Zero kernel of the given dimension.
    pub fn zero(dim: usize) -> Result<Self, OperatorError> {
        Self::constant(CMatrix::zeros(dim, dim))
    }

    /// G0^-1(E) = E*I - H0 for a diagonal H0.
    pub fn qm_free_inverse(h0_diag: Vec<f64>) -> Result<Self, OperatorError> {
        if h0_diag.is_empty() {
            return Err(OperatorError::EmptyDimension);
        }
        Ok(Self {
            dim: h0_diag.len(),
            kind: Kind::QmFreeInverse { h0_diag },
        })
    }

    /// K(E) = g(E) * u * u^dag for a real scalar profile g.
    pub fn separable(u: CVector, profile: ScalarProfile) -> Result<Self, OperatorError> {
        if u.is_empty() {
            return Err(OperatorError::EmptyDimension);
        }
        Ok(Self {
            dim: u.len(),
            kind: Kind::Separable { u, profile },
        })
    }

    /// Real linear combination sum_i coeff_i * op_i. Terms must share one dimension.
    pub fn combination(terms: Vec<(f64, EnergyOperator)>) -> Result<Self, OperatorError> {
        let dim = terms
            .first()
            .map(|(_, op)| op.dim)
            .ok_or(OperatorError::EmptyDimension)?;
        for (_, op) in &terms {
            if op.dim != dim {
                return Err(OperatorError::DimensionMismatch(format!(
                    "combination mixes dimensions {} and {}",
                    dim, op.dim
                )));
            }
        }
        Ok(Self {
            dim,
            kind: Kind::Combination { terms },
        })
    }

    /// Wraps a caller-supplied rule; Hermiticity is sampled over the declared window.
    pub fn callable(op: CallableOp) -> Result<Self, OperatorError> {
        if op.dim == 0 {
            return Err(OperatorError::EmptyDimension);
        }
        let (lo, hi) = op.hermitian_window;
        let samples = 7;
        for k in 0..samples {
            let e = lo + (hi - lo) * (k as f64 + 0.5) / samples as f64;
            if op
                .singular_points
                .iter()
                .any(|s| (e - s).abs() < 1e-6 * (hi - lo).abs().max(1.0))
            {
                continue;
            }
            let m = (op.eval)(e);
            if m.nrows() != op.dim || m.ncols() != op.dim {
                return Err(OperatorError::DimensionMismatch(format!(
                    "callable produced {}x{}, declared dim {}",
                    m.nrows(),
                    m.ncols(),
                    op.dim
                )));
            }
            let dev = hermiticity_deviation(&m);
            if dev > HERMITICITY_TOL {
                return Err(OperatorError::NotHermitian { deviation: dev });
            }
        }
        let dim = op.dim;
        Ok(Self {
            dim,
            kind: Kind::Callable(Arc::new(op)),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn singular_points(&self) -> Vec<f64> {
        match &self.kind {
            Kind::Constant(_) | Kind::QmFreeInverse { .. } => Vec::new(),
            Kind::Separable { profile, .. } => profile.singularity().into_iter().collect(),
            Kind::Combination { terms } => terms
                .iter()
                .flat_map(|(_, op)| op.singular_points())
                .collect(),
            Kind::Callable(op) => op.singular_points.clone(),
        }
    }

    /// True when evaluation is independent of E.
    pub fn is_constant(&self) -> bool {
        match &self.kind {
            Kind::Constant(_) => true,
            Kind::QmFreeInverse { .. } => false,
            Kind::Separable { profile, .. } => profile.is_constant(),
            Kind::Combination { terms } => terms.iter().all(|(c, op)| *c == 0.0 || op.is_constant()),
            Kind::Callable(_) => false,
        }
    }

    /// Decomposes the rule as op(E) = slope*E*I + C when it has exactly that
    /// form, returning (slope, C). Used to detect the QM case.
    pub fn linear_part(&self) -> Option<(f64, CMatrix)> {
        match &self.kind {
            Kind::Constant(m) => Some((0.0, m.clone())),
            Kind::QmFreeInverse { h0_diag } => {
                let c = CMatrix::from_diagonal(&CVector::from_iterator(
                    h0_diag.len(),
                    h0_diag.iter().map(|&x| Complex64::new(-x, 0.0)),
                ));
                Some((1.0, c))
            }
            Kind::Separable { u, profile } => {
                if profile.is_constant() {
                    let g = profile.eval(0.0);
                    Some((0.0, (u * u.adjoint()).scale(g)))
                } else {
                    None
                }
            }
            Kind::Combination { terms } => {
                let mut slope = 0.0;
                let mut c = CMatrix::zeros(self.dim, self.dim);
                for (coeff, op) in terms {
                    let (s, m) = op.linear_part()?;
                    slope += coeff * s;
                    c += m.scale(*coeff);
                }
                Some((slope, c))
            }
            Kind::Callable(_) => None,
        }
    }

    fn check_singular(&self, e: f64) -> Result<(), OperatorError> {
        for s in self.singular_points() {
            if (e - s).abs() <= SINGULARITY_GUARD * e.abs().max(1.0) {
                return Err(OperatorError::SingularPoint { energy: e });
            }
        }
        Ok(())
    }

    /// The dim x dim matrix value at energy E.
    pub fn evaluate(&self, e: f64) -> Result<CMatrix, OperatorError> {
        self.check_singular(e)?;
        let m = self.evaluate_unchecked(e);
        if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(OperatorError::NonFinite { energy: e });
        }
        Ok(m)
    }

    fn evaluate_unchecked(&self, e: f64) -> CMatrix {
        match &self.kind {
            Kind::Constant(m) => m.clone(),
            Kind::QmFreeInverse { h0_diag } => CMatrix::from_diagonal(&CVector::from_iterator(
                h0_diag.len(),
                h0_diag.iter().map(|&x| Complex64::new(e - x, 0.0)),
            )),
            Kind::Separable { u, profile } => (u * u.adjoint()).scale(profile.eval(e)),
            Kind::Combination { terms } => {
                let mut acc = CMatrix::zeros(self.dim, self.dim);
                for (c, op) in terms {
                    acc += op.evaluate_unchecked(e).scale(*c);
                }
                acc
            }
            Kind::Callable(op) => (op.eval)(e),
        }
    }

    /// d^order/dE^order of [`Self::evaluate`] at E. Uses the analytic rule of
    /// the kind when available, otherwise nested central differences.
    pub fn derivative(&self, e: f64, order: usize) -> Result<CMatrix, OperatorError> {
        if order == 0 {
            return Err(OperatorError::ZeroDerivativeOrder);
        }
        if order > DERIVATIVE_ORDER_CAP {
            return Err(OperatorError::DerivativeOrderCap {
                order,
                cap: DERIVATIVE_ORDER_CAP,
            });
        }
        self.check_singular(e)?;
        let m = self.derivative_inner(e, order)?;
        if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(OperatorError::NonFinite { energy: e });
        }
        Ok(m)
    }

    fn derivative_inner(&self, e: f64, order: usize) -> Result<CMatrix, OperatorError> {
        match &self.kind {
            Kind::Constant(m) => Ok(CMatrix::zeros(m.nrows(), m.ncols())),
            Kind::QmFreeInverse { h0_diag } => {
                let n = h0_diag.len();
                if order == 1 {
                    Ok(CMatrix::identity(n, n))
                } else {
                    Ok(CMatrix::zeros(n, n))
                }
            }
            Kind::Separable { u, profile } => {
                Ok((u * u.adjoint()).scale(profile.derivative(e, order)))
            }
            Kind::Combination { terms } => {
                let mut acc = CMatrix::zeros(self.dim, self.dim);
                for (c, op) in terms {
                    acc += op.derivative_inner(e, order)?.scale(*c);
                }
                Ok(acc)
            }
            Kind::Callable(op) => {
                if let Some(rule) = &op.derivative {
                    Ok(rule(e, order))
                } else {
                    finite_difference(&|x| Ok((op.eval)(x)), e, order)
                }
            }
        }
    }
}

/// Central-difference step for a first-order stencil nested at depth `order`:
/// h = eps^(1/(order+2)) * max(1, |E|), so repeated stencils widen per order.
fn fd_step(e: f64, order: usize) -> f64 {
    f64::EPSILON.powf(1.0 / (order as f64 + 2.0)) * e.abs().max(1.0)
}

/// Nested central differences: order k is the first-order stencil applied to
/// the order k-1 derivative.
pub fn finite_difference<F>(f: &F, e: f64, order: usize) -> Result<CMatrix, OperatorError>
where
    F: Fn(f64) -> Result<CMatrix, OperatorError>,
{
    let h = fd_step(e, order);
    if order == 1 {
        let plus = f(e + h)?;
        let minus = f(e - h)?;
        Ok((plus - minus).unscale(2.0 * h))
    } else {
        let plus = finite_difference(f, e + h, order - 1)?;
        let minus = finite_difference(f, e - h, order - 1)?;
        Ok((plus - minus).unscale(2.0 * h))
    }
}

/// Config-facing operator descriptor; matrices are row-major [re, im] pairs.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OperatorDescriptor {
    Constant { matrix: Vec<Vec<[f64; 2]>> },
    QmFreeInverse { h0_diag: Vec<f64> },
    Separable { u: Vec<[f64; 2]>, profile: ScalarProfile },
}

/// Builds an [`EnergyOperator`] from a config descriptor.
pub fn make_operator(spec: &OperatorDescriptor) -> Result<EnergyOperator, OperatorError> {
    match spec {
        OperatorDescriptor::Constant { matrix } => {
            let n = matrix.len();
            if n == 0 {
                return Err(OperatorError::EmptyDimension);
            }
            for row in matrix {
                if row.len() != n {
                    return Err(OperatorError::DimensionMismatch(format!(
                        "constant matrix row has {} entries, expected {}",
                        row.len(),
                        n
                    )));
                }
            }
            let m = CMatrix::from_fn(n, n, |i, j| {
                Complex64::new(matrix[i][j][0], matrix[i][j][1])
            });
            EnergyOperator::constant(m)
        }
        OperatorDescriptor::QmFreeInverse { h0_diag } => {
            EnergyOperator::qm_free_inverse(h0_diag.clone())
        }
        OperatorDescriptor::Separable { u, profile } => {
            let v = CVector::from_iterator(u.len(), u.iter().map(|p| Complex64::new(p[0], p[1])));
            EnergyOperator::separable(v, profile.clone())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    #[test]
    fn constant_kind_ignores_energy() {
        let m = CMatrix::from_row_slice(2, 2, &[c(0.0), c(1.0), c(1.0), c(0.0)]);
        let op = EnergyOperator::constant(m.clone()).unwrap();
        let a = op.evaluate(5.0).unwrap();
        let b = op.evaluate(-3.25).unwrap();
        assert_eq!(a, m);
        assert_eq!(a, b); // bitwise equality for distinct E
    }

    #[test]
    fn qm_free_inverse_substitution() {
        let op = EnergyOperator::qm_free_inverse(vec![0.0, 2.0]).unwrap();
        let m = op.evaluate(1.0).unwrap();
        assert_eq!(m[(0, 0)], c(1.0));
        assert_eq!(m[(1, 1)], c(-1.0));
        let m3 = op.evaluate(3.0).unwrap();
        assert_eq!(m3[(0, 0)], c(3.0));
        assert_eq!(m3[(1, 1)], c(1.0));
    }

    #[test]
    fn separable_profile_substitution() {
        let u = CVector::from_vec(vec![c(1.0), c(0.0)]);
        let op = EnergyOperator::separable(
            u,
            ScalarProfile::Reciprocal {
                scale: 1.0,
                shift: 1.0,
            },
        )
        .unwrap();
        let m = op.evaluate(1.0).unwrap();
        assert!((m[(0, 0)].re - 0.5).abs() < 1e-15);
        assert_eq!(m[(0, 1)], c(0.0));
        assert_eq!(m[(1, 1)], c(0.0));

        let u2 = CVector::from_vec(vec![c(0.0), c(1.0)]);
        let op2 = EnergyOperator::separable(
            u2,
            ScalarProfile::Polynomial {
                coeffs: vec![0.0, 0.0, 1.0],
            },
        )
        .unwrap();
        let m2 = op2.evaluate(2.0).unwrap();
        assert!((m2[(1, 1)].re - 4.0).abs() < 1e-15);
        assert_eq!(m2[(0, 0)], c(0.0));
    }

    #[test]
    fn qm_free_inverse_first_derivative_is_identity() {
        let op = EnergyOperator::qm_free_inverse(vec![0.0, 2.0]).unwrap();
        let d = op.derivative(7.7, 1).unwrap();
        assert_eq!(d, CMatrix::identity(2, 2));
        let d2 = op.derivative(7.7, 2).unwrap();
        assert_eq!(d2, CMatrix::zeros(2, 2));
    }

    #[test]
    fn constant_derivative_is_zero() {
        let m = CMatrix::from_row_slice(2, 2, &[c(0.0), c(1.0), c(1.0), c(0.0)]);
        let op = EnergyOperator::constant(m).unwrap();
        assert_eq!(op.derivative(0.3, 1).unwrap(), CMatrix::zeros(2, 2));
    }

    #[test]
    fn separable_derivative_matches_finite_difference() {
        // g(E) = 1/(E+1), g'(1) = -1/4
        let u = CVector::from_vec(vec![c(1.0), c(0.0)]);
        let op = EnergyOperator::separable(
            u,
            ScalarProfile::Reciprocal {
                scale: 1.0,
                shift: 1.0,
            },
        )
        .unwrap();
        let analytic = op.derivative(1.0, 1).unwrap();
        assert!((analytic[(0, 0)].re - (-0.25)).abs() < 1e-14);

        let fd = finite_difference(&|e| op.evaluate(e), 1.0, 1).unwrap();
        assert!((fd[(0, 0)].re - analytic[(0, 0)].re).abs() < 1e-8);
    }

    #[test]
    fn non_hermitian_constant_rejected() {
        let m = CMatrix::from_row_slice(2, 2, &[c(0.0), c(1.0), c(2.0), c(0.0)]);
        assert!(matches!(
            EnergyOperator::constant(m),
            Err(OperatorError::NotHermitian { .. })
        ));
    }

    #[test]
    fn derivative_cap_enforced() {
        let op = EnergyOperator::qm_free_inverse(vec![0.0]).unwrap();
        assert!(matches!(
            op.derivative(0.0, 7),
            Err(OperatorError::DerivativeOrderCap { .. })
        ));
        assert!(matches!(
            op.derivative(0.0, 0),
            Err(OperatorError::ZeroDerivativeOrder)
        ));
    }

    #[test]
    fn reciprocal_singular_point_rejected() {
        let u = CVector::from_vec(vec![c(1.0)]);
        let op = EnergyOperator::separable(
            u,
            ScalarProfile::Reciprocal {
                scale: 1.0,
                shift: 1.0,
            },
        )
        .unwrap();
        assert!(matches!(
            op.evaluate(-1.0),
            Err(OperatorError::SingularPoint { .. })
        ));
    }

    #[test]
    fn combination_evaluates_linearly() {
        let k1 = EnergyOperator::constant(CMatrix::from_row_slice(
            2,
            2,
            &[c(0.0), c(1.0), c(1.0), c(0.0)],
        ))
        .unwrap();
        let g0 = EnergyOperator::qm_free_inverse(vec![0.0, 2.0]).unwrap();
        let comb = EnergyOperator::combination(vec![(1.0, k1), (-1.0, g0)]).unwrap();
        let m = comb.evaluate(1.0).unwrap();
        // [[0,1],[1,0]] - diag(1,-1)
        assert_eq!(m[(0, 0)], c(-1.0));
        assert_eq!(m[(0, 1)], c(1.0));
        assert_eq!(m[(1, 1)], c(1.0));
    }

    #[test]
    fn linear_part_detects_qm_case() {
        let g0 = EnergyOperator::qm_free_inverse(vec![0.0, 2.0]).unwrap();
        let (slope, cpart) = g0.linear_part().unwrap();
        assert_eq!(slope, 1.0);
        assert_eq!(cpart[(1, 1)], c(-2.0));

        let u = CVector::from_vec(vec![c(1.0), c(0.0)]);
        let dep = EnergyOperator::separable(
            u,
            ScalarProfile::Polynomial {
                coeffs: vec![1.0, 0.25],
            },
        )
        .unwrap();
        assert!(dep.linear_part().is_none());
        assert!(!dep.is_constant());
    }

    #[test]
    fn descriptor_roundtrip_constant() {
        let spec = OperatorDescriptor::Constant {
            matrix: vec![
                vec![[0.0, 0.0], [1.0, 0.0]],
                vec![[1.0, 0.0], [0.0, 0.0]],
            ],
        };
        let op = make_operator(&spec).unwrap();
        let m = op.evaluate(5.0).unwrap();
        assert_eq!(m[(0, 1)], c(1.0));
        let json = serde_json::to_string(&spec).unwrap();
        let back: OperatorDescriptor = serde_json::from_str(&json).unwrap();
        let m2 = make_operator(&back).unwrap().evaluate(5.0).unwrap();
        assert_eq!(m, m2);
    }
}
