//! Small dense linear-algebra helpers and a damped Newton driver.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub fn to_matrix(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    DMatrix::from_fn(r, c, |i, j| rows[i][j])
}

/// Singular values in decreasing order with matching right singular vectors
/// (columns of `V`).
pub fn svd_sorted(m: &DMatrix<f64>) -> (Vec<f64>, Vec<DVector<f64>>) {
    let (nr, nc) = m.shape();
    // Pad to at least square-in-columns so every right vector is available.
    let padded = if nr < nc {
        let mut p = DMatrix::zeros(nc, nc);
        p.view_mut((0, 0), (nr, nc)).copy_from(m);
        p
    } else {
        m.clone()
    };
    let svd = padded.svd(false, true);
    let vt = svd.v_t.expect("requested V^T");
    let mut pairs: Vec<(f64, DVector<f64>)> = svd
        .singular_values
        .iter()
        .enumerate()
        .map(|(i, &s)| (s, vt.row(i).transpose()))
        .collect();
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    pairs.into_iter().unzip()
}

/// Unit vector spanning the approximate kernel, sign-fixed so its largest
/// component is positive.
pub fn kernel_vector(m: &DMatrix<f64>) -> (DVector<f64>, Vec<f64>) {
    let (s, v) = svd_sorted(m);
    let mut k = v.last().expect("nonempty").clone();
    let (imax, _) = k.iter().enumerate().fold((0, 0.0), |acc, (i, x)| {
        if x.abs() > acc.1 + 1e-12 {
            (i, x.abs())
        } else {
            acc
        }
    });
    if k[imax] < 0.0 {
        k = -k;
    }
    (k, s)
}

/// Numerical rank with relative cutoff.
pub fn rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    let (s, _) = svd_sorted(m);
    let top = s.first().copied().unwrap_or(0.0);
    s.iter()
        .filter(|&&x| x > rel_tol * top.max(f64::MIN_POSITIVE))
        .count()
}

pub fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[derive(Debug, Clone)]
pub struct NewtonOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub max_halvings: usize,
    /// Give up when the iterate drifts farther than this from the seed.
    pub max_distance: Option<f64>,
    /// Reject a square system whose Jacobian is singular at the seed.
    pub reject_singular_seed: bool,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions {
            tol: 1e-10,
            max_iter: 50,
            max_halvings: 30,
            max_distance: None,
            reject_singular_seed: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct NewtonOutcome {
    pub x: Vec<f64>,
    pub residual: f64,
    pub iterations: usize,
}

/// Damped Newton (Gauss–Newton with minimum-norm steps for non-square
/// systems). `system` returns residual and Jacobian at a point.
pub fn newton<F>(mut system: F, x0: &[f64], opts: &NewtonOptions) -> Result<NewtonOutcome>
where
    F: FnMut(&[f64]) -> Result<(Vec<f64>, DMatrix<f64>)>,
{
    let mut x = x0.to_vec();
    let (mut r, mut jac) = system(&x)?;
    let mut res = max_abs(&r);
    if opts.reject_singular_seed && jac.nrows() == jac.ncols() && !jac.is_empty() {
        let (s, _) = svd_sorted(&jac);
        if s.last().copied().unwrap_or(0.0) <= 1e-14 * s[0].max(f64::MIN_POSITIVE) && res > opts.tol
        {
            return Err(Error::DegenerateJacobian);
        }
    }
    for it in 0..opts.max_iter {
        if res < opts.tol {
            return Ok(NewtonOutcome {
                x,
                residual: res,
                iterations: it,
            });
        }
        let rhs = DVector::from_iterator(r.len(), r.iter().map(|v| -v));
        let svd = jac.clone().svd(true, true);
        let cutoff = 1e-14 * svd.singular_values.max().max(f64::MIN_POSITIVE);
        let step = match svd.solve(&rhs, cutoff) {
            Ok(s) => s,
            Err(_) => break,
        };
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..=opts.max_halvings {
            let trial: Vec<f64> = x
                .iter()
                .zip(step.iter())
                .map(|(a, d)| a + alpha * d)
                .collect();
            if let Ok((rt, jt)) = system(&trial) {
                let rest = max_abs(&rt);
                if rest.is_finite() && rest < res {
                    x = trial;
                    r = rt;
                    jac = jt;
                    res = rest;
                    accepted = true;
                    break;
                }
            }
            alpha *= 0.5;
        }
        if !accepted {
            return Err(Error::NoConvergence {
                iterations: it + 1,
                residual: res,
            });
        }
        if let Some(d) = opts.max_distance {
            let dist = norm(&x.iter().zip(x0).map(|(a, b)| a - b).collect::<Vec<_>>());
            if dist > d {
                return Err(Error::NoConvergence {
                    iterations: it + 1,
                    residual: res,
                });
            }
        }
    }
    if res < opts.tol {
        Ok(NewtonOutcome {
            x,
            residual: res,
            iterations: opts.max_iter,
        })
    } else {
        Err(Error::NoConvergence {
            iterations: opts.max_iter,
            residual: res,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn newton_solves_a_circle_line_system() {
        let out = newton(
            |x| {
                let r = vec![x[0] * x[0] + x[1] * x[1] - 1.0, x[0] - x[1]];
                let j = DMatrix::from_row_slice(2, 2, &[2.0 * x[0], 2.0 * x[1], 1.0, -1.0]);
                Ok((r, j))
            },
            &[1.0, 0.2],
            &NewtonOptions::default(),
        )
        .unwrap();
        assert!((out.x[0] - 0.5f64.sqrt()).abs() < 1e-10);
    }

    #[test]
    fn kernel_of_rank_one_drop() {
        let m = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 2.0]);
        let (k, s) = kernel_vector(&m);
        assert!((k[1] - 1.0).abs() < 1e-14);
        assert!(s[2].abs() < 1e-14);
        assert_eq!(rank(&m, 1e-12), 2);
    }
}
