//! The weighted linear problem -Delta u = lambda f(x) u with decay at
//! infinity: the solution operator S, the principal eigenpair (lambda_1,
//! phi_1) by inverse power iteration on the generalized tridiagonal problem,
//! the Rayleigh quotient and the far-field decay floor.

use crate::error::{Error, Result};
use crate::grid::{DiscreteLaplacian, Field};

/// Principal eigenpair with its diagnostics.
#[derive(Debug, Clone)]
pub struct EigenPair {
    pub lambda1: f64,
    /// Positive eigenfunction, sup-normalized to 1.
    pub phi1: Field,
    /// Relative eigen-residual |A phi - lambda f phi|_w / |lambda f phi|_w.
    pub residual: f64,
    /// min over the trailing decade of r^{N-2} phi_1 (positive by the decay law).
    pub decay_floor: f64,
    /// Second eigenvalue from one deflated iteration; diagnostic grade.
    pub lambda2: f64,
}

/// The solution operator S: v -> unique decaying solution of -Delta u = f v.
pub fn apply_s(lap: &DiscreteLaplacian, f: &Field, v: &Field) -> Result<Field> {
    lap.solve(&f.mul_pointwise(v))
}

/// Rayleigh quotient |grad u|^2 / int f u^2 whose minimum is lambda_1.
pub fn rayleigh(u: &Field, f: &Field) -> Result<f64> {
    let grid = u.grid();
    let num = grid.dirichlet_energy(u.values());
    let den: f64 = grid
        .weights()
        .iter()
        .zip(f.values().iter().zip(u.values()))
        .map(|(w, (fv, uv))| w * fv * uv * uv)
        .sum();
    if den == 0.0 {
        return Err(Error::InvalidInstance(
            "Rayleigh quotient of a field with vanishing f-norm".into(),
        ));
    }
    Ok(num / den)
}

/// min over the trailing window r >= R_max / window_factor of r^{N-2} u(r).
pub fn check_decay_floor(u: &Field, window_factor: f64) -> f64 {
    let grid = u.grid();
    let n = grid.dim() as f64;
    grid.trailing_window(window_factor)
        .map(|i| grid.nodes()[i].powf(n - 2.0) * u.values()[i])
        .fold(f64::INFINITY, f64::min)
}

/// Computes (lambda_1, phi_1) and the lambda_2 diagnostic by inverse power
/// iteration on A u = lambda f u, reusing one factorization of A. Iterates
/// stay in the positive cone (A is an M-matrix), so phi_1 needs no sign
/// bookkeeping beyond a final orientation fix.
pub fn principal_eigenpair(
    lap: &DiscreteLaplacian,
    f: &Field,
    tol: f64,
    max_iter: usize,
) -> Result<EigenPair> {
    let grid = lap.grid().clone();
    let lu = lap.rows().factor()?;
    let b_norm = |x: &[f64]| -> f64 {
        grid.weights()
            .iter()
            .zip(f.values().iter().zip(x))
            .map(|(w, (fv, xv))| w * fv * xv * xv)
            .sum::<f64>()
            .sqrt()
    };
    let rel_residual = |x: &[f64], theta: f64| -> f64 {
        let ax = lap.rows().apply(x);
        let mut num = 0.0;
        let mut den = 0.0;
        for ((&w, &fv), (&axv, &xv)) in grid
            .weights()
            .iter()
            .zip(f.values())
            .zip(ax.iter().zip(x))
        {
            let target = theta * fv * xv;
            num += w * (axv - target) * (axv - target);
            den += w * target * target;
        }
        (num / den).sqrt()
    };

    // Principal direction.
    let mut x: Vec<f64> = grid.nodes().iter().map(|&r| (-r).exp()).collect();
    let nrm = b_norm(&x);
    x.iter_mut().for_each(|v| *v /= nrm);
    let mut theta = 0.0;
    let mut res = f64::INFINITY;
    let mut converged = false;
    for _ in 0..max_iter {
        let rhs: Vec<f64> = f.values().iter().zip(&x).map(|(fv, xv)| fv * xv).collect();
        let mut y = lu.solve(&rhs);
        let nrm = b_norm(&y);
        y.iter_mut().for_each(|v| *v /= nrm);
        let yf = Field::new(grid.clone(), y.clone())?;
        theta = rayleigh(&yf, f)?;
        res = rel_residual(&y, theta);
        x = y;
        if res < tol {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::IterationLimit {
            iterations: max_iter,
            residual: res,
        });
    }

    // Orient positive and sup-normalize.
    let flip = x.iter().sum::<f64>() < 0.0;
    if flip {
        x.iter_mut().for_each(|v| *v = -*v);
    }
    let sup = x.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    x.iter_mut().for_each(|v| *v /= sup);
    if x.iter().any(|&v| v <= 0.0) {
        return Err(Error::InvalidInstance(
            "principal eigenfunction is not strictly positive on the grid".into(),
        ));
    }
    let phi1 = Field::new(grid.clone(), x)?;

    // Second eigenvalue by deflation in the f-weighted inner product.
    let b_dot = |a: &[f64], b: &[f64]| -> f64 {
        grid.weights()
            .iter()
            .zip(f.values().iter().zip(a.iter().zip(b)))
            .map(|(w, (fv, (av, bv)))| w * fv * av * bv)
            .sum()
    };
    let phi_b2 = b_dot(phi1.values(), phi1.values());
    let mut y: Vec<f64> = grid
        .nodes()
        .iter()
        .map(|&r| (1.0 - r) * (-r).exp())
        .collect();
    let mut lambda2 = f64::NAN;
    let mut res2;
    for _ in 0..max_iter {
        let proj = b_dot(&y, phi1.values()) / phi_b2;
        y.iter_mut()
            .zip(phi1.values())
            .for_each(|(v, &p)| *v -= proj * p);
        let nrm = b_norm(&y);
        if nrm == 0.0 {
            break;
        }
        y.iter_mut().for_each(|v| *v /= nrm);
        let yf = Field::new(grid.clone(), y.clone())?;
        lambda2 = rayleigh(&yf, f)?;
        res2 = rel_residual(&y, lambda2);
        if res2 < tol.max(1e-10) {
            break;
        }
        let rhs: Vec<f64> = f.values().iter().zip(&y).map(|(fv, yv)| fv * yv).collect();
        y = lu.solve(&rhs);
    }

    let decay_floor = check_decay_floor(&phi1, 10.0);
    Ok(EigenPair {
        lambda1: theta,
        phi1,
        residual: res,
        decay_floor,
        lambda2,
    })
}
