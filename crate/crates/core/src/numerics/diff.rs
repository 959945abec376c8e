//! Central finite differences, used as oracles for analytic derivatives.

use crate::error::{Error, Result};

use super::Matrix;

/// Default first-difference step for a coordinate: `cbrt(eps) · (1 + |x|)`.
pub fn default_step(x: f64) -> f64 {
    f64::EPSILON.cbrt() * (1.0 + x.abs())
}

fn hessian_step(x: f64) -> f64 {
    f64::EPSILON.powf(0.25) * (1.0 + x.abs())
}

fn checked(f: &impl Fn(&[f64]) -> Vec<f64>, x: &[f64], coordinate: usize) -> Result<Vec<f64>> {
    let v = f(x);
    if v.iter().all(|e| e.is_finite()) {
        Ok(v)
    } else {
        Err(Error::Evaluation {
            what: "finite-difference probe".into(),
            coordinate,
        })
    }
}

/// Central-difference Jacobian with a fixed `step`:
/// entry `(i, j) = (f_i(x + h e_j) − f_i(x − h e_j)) / 2h`.
pub fn fd_gradient<F>(f: F, at: &[f64], step: f64) -> Result<Matrix>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    if !(step > 0.0) {
        return Err(Error::contract("finite-difference step must be positive"));
    }
    jacobian_with(f, at, |_| step)
}

/// Central-difference Jacobian with the per-coordinate [`default_step`].
pub fn fd_jacobian<F>(f: F, at: &[f64]) -> Result<Matrix>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    jacobian_with(f, at, default_step)
}

fn jacobian_with<F, S>(f: F, at: &[f64], step: S) -> Result<Matrix>
where
    F: Fn(&[f64]) -> Vec<f64>,
    S: Fn(f64) -> f64,
{
    if at.is_empty() {
        return Err(Error::contract("finite differences at an empty point"));
    }
    let rows = checked(&f, at, 0)?.len();
    let mut jac = Matrix::zeros(rows.max(1), at.len());
    let mut probe = at.to_vec();
    for j in 0..at.len() {
        let h = step(at[j]);
        probe[j] = at[j] + h;
        let plus = checked(&f, &probe, j)?;
        probe[j] = at[j] - h;
        let minus = checked(&f, &probe, j)?;
        probe[j] = at[j];
        for i in 0..rows {
            jac[(i, j)] = (plus[i] - minus[i]) / (2.0 * h);
        }
    }
    Ok(jac)
}

/// Second-order central differences of a scalar function.
pub fn fd_hessian<F>(f: F, at: &[f64]) -> Result<Matrix>
where
    F: Fn(&[f64]) -> f64,
{
    let n = at.len();
    if n == 0 {
        return Err(Error::contract("finite differences at an empty point"));
    }
    let eval = |x: &[f64], coordinate: usize| -> Result<f64> {
        let v = f(x);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Evaluation {
                what: "finite-difference probe".into(),
                coordinate,
            })
        }
    };
    let mut hess = Matrix::zeros(n, n);
    let mut p = at.to_vec();
    for j in 0..n {
        for k in j..n {
            let (hj, hk) = (hessian_step(at[j]), hessian_step(at[k]));
            let mut corner = |sj: f64, sk: f64| -> Result<f64> {
                p.copy_from_slice(at);
                p[j] += sj * hj;
                p[k] += sk * hk;
                eval(&p, j)
            };
            let v = (corner(1.0, 1.0)? - corner(1.0, -1.0)? - corner(-1.0, 1.0)? + corner(-1.0, -1.0)?)
                / (4.0 * hj * hk);
            hess[(j, k)] = v;
            hess[(k, j)] = v;
        }
    }
    Ok(hess)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_function_gives_identity() {
        let j = fd_gradient(|x| x.to_vec(), &[0.3, -2.0, 5.0], 1e-6).unwrap();
        for r in 0..3 {
            for c in 0..3 {
                let want = if r == c { 1.0 } else { 0.0 };
                assert!((j[(r, c)] - want).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn constant_function_gives_zero() {
        let j = fd_gradient(|_| vec![4.0, -1.0], &[1.0, 2.0], 1e-6).unwrap();
        assert_eq!(j.max_abs(), 0.0);
    }

    #[test]
    fn hand_differentiated_quadratic() {
        // d/dx (x1^2, x1 x2) = [[2 x1, 0], [x2, x1]] = [[2, 0], [2, 1]] at (1, 2)
        let j = fd_gradient(|x| vec![x[0] * x[0], x[0] * x[1]], &[1.0, 2.0], 1e-6).unwrap();
        let want = [[2.0, 0.0], [2.0, 1.0]];
        for r in 0..2 {
            for c in 0..2 {
                assert!((j[(r, c)] - want[r][c]).abs() < 1e-8, "{r},{c}: {}", j[(r, c)]);
            }
        }
    }

    #[test]
    fn non_finite_value_names_coordinate() {
        let f = |x: &[f64]| vec![if x[1] > 1.0 { f64::INFINITY } else { x[0] }];
        match fd_gradient(f, &[0.0, 1.0], 1e-3) {
            Err(Error::Evaluation { coordinate, .. }) => assert_eq!(coordinate, 1),
            other => panic!("expected evaluation error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_bad_step() {
        assert!(fd_gradient(|x| x.to_vec(), &[1.0], 0.0).is_err());
    }

    #[test]
    fn hessian_of_quadratic_form() {
        // f = x0 x1 - x1^2 has Hessian [[0, 1], [1, -2]]
        let h = fd_hessian(|x| x[0] * x[1] - x[1] * x[1], &[0.7, -1.3]).unwrap();
        let want = [[0.0, 1.0], [1.0, -2.0]];
        for r in 0..2 {
            for c in 0..2 {
                assert!((h[(r, c)] - want[r][c]).abs() < 1e-6);
            }
        }
    }
}
