//! Dense complex linear algebra for small operators.
//!
//! Everything here works on `nalgebra` dynamic matrices of `Complex64`. The
//! matrix exponential is a Padé scaling-and-squaring implementation; the
//! Hermitian eigenvalue routines defer to `nalgebra`'s symmetric eigensolver.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use thiserror::Error;

/// Dense complex matrix used for Hamiltonians, couplings and density blocks.
pub type ComplexMatrix = DMatrix<Complex64>;
/// Dense complex vector used for wave functions.
pub type ComplexVector = DVector<Complex64>;

/// Absolute Hermiticity tolerance for operators read from configuration.
pub const HERMITIAN_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch {
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("matrix is not Hermitian (deviation {deviation:e})")]
    NotHermitian { deviation: f64 },
    #[error("matrix exponential produced non-finite entries")]
    NonFinite,
}

fn ensure_square(m: &ComplexMatrix) -> Result<(), LinalgError> {
    if m.is_square() {
        Ok(())
    } else {
        Err(LinalgError::NotSquare {
            rows: m.nrows(),
            cols: m.ncols(),
        })
    }
}

pub fn is_finite(m: &ComplexMatrix) -> bool {
    m.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

/// Induced 1-norm (maximum absolute column sum).
pub fn norm_one(m: &ComplexMatrix) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn frobenius_norm(m: &ComplexMatrix) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

const THETA_3: f64 = 1.495585217958292e-2;
const THETA_5: f64 = 2.539398330063230e-1;
const THETA_7: f64 = 9.504178996162932e-1;
const THETA_9: f64 = 2.097847961257068e0;
const THETA_13: f64 = 5.371920351148152e0;

const PADE_3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const PADE_5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const PADE_7: [f64; 8] = [
    17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0,
];
const PADE_9: [f64; 10] = [
    17643225600.0,
    8821612800.0,
    2075673600.0,
    302702400.0,
    30270240.0,
    2162160.0,
    110880.0,
    3960.0,
    90.0,
    1.0,
];
const PADE_13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

/// Numerator/denominator halves `(U, V)` of the low-order diagonal Padé
/// approximants, with `U` odd and `V` even in `a`.
fn pade_low_order(a: &ComplexMatrix, b: &[f64]) -> (ComplexMatrix, ComplexMatrix) {
    let n = a.nrows();
    let ident = ComplexMatrix::identity(n, n);
    let a2 = a * a;
    let mut odd = ident.scale(b[1]);
    let mut even = ident.scale(b[0]);
    let mut power = ident;
    for k in 1..b.len() / 2 {
        power = &power * &a2;
        odd += power.scale(b[2 * k + 1]);
        even += power.scale(b[2 * k]);
    }
    (a * odd, even)
}

fn pade_13(a: &ComplexMatrix) -> (ComplexMatrix, ComplexMatrix) {
    let n = a.nrows();
    let b = &PADE_13;
    let ident = ComplexMatrix::identity(n, n);
    let a2 = a * a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let inner_u = a6.scale(b[13]) + a4.scale(b[11]) + a2.scale(b[9]);
    let u = a * (&a6 * inner_u
        + a6.scale(b[7])
        + a4.scale(b[5])
        + a2.scale(b[3])
        + ident.scale(b[1]));
    let inner_v = a6.scale(b[12]) + a4.scale(b[10]) + a2.scale(b[8]);
    let v = &a6 * inner_v + a6.scale(b[6]) + a4.scale(b[4]) + a2.scale(b[2]) + ident.scale(b[0]);
    (u, v)
}

/// `exp(scale * m)` by scaling and squaring around a diagonal Padé core
/// (degree 3 to 13, chosen from the 1-norm).
pub fn matrix_exponential(m: &ComplexMatrix, scale: f64) -> Result<ComplexMatrix, LinalgError> {
    ensure_square(m)?;
    let n = m.nrows();
    if n == 0 {
        return Ok(ComplexMatrix::zeros(0, 0));
    }
    if n == 1 {
        let z = (m[(0, 0)] * scale).exp();
        return if z.re.is_finite() && z.im.is_finite() {
            Ok(ComplexMatrix::from_element(1, 1, z))
        } else {
            Err(LinalgError::NonFinite)
        };
    }
    let a = m.scale(scale);
    let norm = norm_one(&a);
    if !norm.is_finite() {
        return Err(LinalgError::NonFinite);
    }
    if norm == 0.0 {
        return Ok(ComplexMatrix::identity(n, n));
    }

    let mut squarings = 0u32;
    let (u, v) = if norm <= THETA_3 {
        pade_low_order(&a, &PADE_3)
    } else if norm <= THETA_5 {
        pade_low_order(&a, &PADE_5)
    } else if norm <= THETA_7 {
        pade_low_order(&a, &PADE_7)
    } else if norm <= THETA_9 {
        pade_low_order(&a, &PADE_9)
    } else {
        if norm > THETA_13 {
            squarings = (norm / THETA_13).log2().ceil().max(0.0) as u32;
        }
        let scaled = a.scale(0.5f64.powi(squarings as i32));
        pade_13(&scaled)
    };

    let numer = &v + &u;
    let denom = &v - &u;
    let mut result = denom
        .lu()
        .solve(&numer)
        .ok_or(LinalgError::NonFinite)?;
    for _ in 0..squarings {
        result = &result * &result;
    }
    if is_finite(&result) {
        Ok(result)
    } else {
        Err(LinalgError::NonFinite)
    }
}

/// Frobenius norm of `m - m^dagger`.
pub fn hermitian_deviation(m: &ComplexMatrix) -> Result<f64, LinalgError> {
    ensure_square(m)?;
    Ok(frobenius_norm(&(m - m.adjoint())))
}

/// `(m + m^dagger) / 2`.
pub fn hermitian_part(m: &ComplexMatrix) -> ComplexMatrix {
    (m + m.adjoint()).scale(0.5)
}

/// Eigenvalues of a Hermitian matrix in ascending order.
pub fn eigenvalues_hermitian(m: &ComplexMatrix) -> Result<Vec<f64>, LinalgError> {
    ensure_square(m)?;
    let deviation = hermitian_deviation(m)?;
    let scale = frobenius_norm(m).max(1.0);
    if deviation > HERMITIAN_TOL * scale {
        return Err(LinalgError::NotHermitian { deviation });
    }
    if m.nrows() == 0 {
        return Ok(Vec::new());
    }
    let mut values: Vec<f64> = hermitian_part(m)
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .collect();
    values.sort_by(|a, b| a.total_cmp(b));
    Ok(values)
}

pub fn min_eigenvalue_hermitian(m: &ComplexMatrix) -> Result<f64, LinalgError> {
    Ok(eigenvalues_hermitian(m)?
        .first()
        .copied()
        .unwrap_or(f64::INFINITY))
}

/// Operator norm of a Hermitian matrix (largest absolute eigenvalue).
pub fn operator_norm_hermitian(m: &ComplexMatrix) -> Result<f64, LinalgError> {
    Ok(eigenvalues_hermitian(m)?
        .iter()
        .fold(0.0, |acc: f64, v| acc.max(v.abs())))
}

/// Trace distance `1/2 * sum |eig(r - s)|` between Hermitian matrices.
pub fn trace_distance(r: &ComplexMatrix, s: &ComplexMatrix) -> Result<f64, LinalgError> {
    if r.shape() != s.shape() {
        return Err(LinalgError::ShapeMismatch {
            left: r.shape(),
            right: s.shape(),
        });
    }
    Ok(0.5 * eigenvalues_hermitian(&(r - s))?.iter().map(|v| v.abs()).sum::<f64>())
}

pub fn trace(m: &ComplexMatrix) -> Complex64 {
    m.diagonal().iter().sum()
}

/// `<v, m v>` for Hermitian `m`, real part only.
pub fn expectation(m: &ComplexMatrix, v: &ComplexVector) -> f64 {
    v.dotc(&(m * v)).re
}

/// `|v><v|`.
pub fn projector(v: &ComplexVector) -> ComplexMatrix {
    v * v.adjoint()
}
