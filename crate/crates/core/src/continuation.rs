//! Newton solver for the full nonlocal equation and pseudo-arclength
//! continuation of the positive solution branch from (lambda_1, 0).
//!
//! The residual is A u + phi_u u - lambda f u. Its Jacobian splits into a
//! tridiagonal part T = A + diag(phi_u - lambda f) plus the dense coupling
//! from the kernel; for separable kernels that coupling is rank one.  Along
//! the branch T itself is nearly singular (the rank-one term is what makes
//! the Jacobian regular), so rank-one systems are solved through a bordered
//! tridiagonal elimination with pivoting instead of a Sherman-Morrison
//! update. Non-separable kernels assemble the dense Jacobian.

use crate::error::{Error, Result};
use crate::grid::{norms, weighted_dot, Field, Tridiag};
use crate::spectral::EigenPair;
use crate::Instance;
use nalgebra::{DMatrix, DVector};

/// Newton iteration controls. `tol` is a backward-error tolerance: the
/// iteration stops when |res|_inf <= tol * (|A u| + |phi_u u| + |lambda f u|)_inf.
#[derive(Debug, Clone)]
pub struct NewtonConfig {
    pub tol: f64,
    pub max_iter: usize,
    /// Iterates with |u|_inf below this collapse to the trivial solution.
    pub trivial_threshold: f64,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        NewtonConfig {
            tol: 1e-10,
            max_iter: 80,
            trivial_threshold: 1e-8,
        }
    }
}

/// Pseudo-arclength continuation controls.
#[derive(Debug, Clone)]
pub struct ContinuationConfig {
    /// Initial arclength step in the scaled (u, lambda) metric.
    pub ds: f64,
    pub lambda_max: f64,
    pub amp_max: f64,
    /// Step halving floor; falling below it terminates the branch.
    pub min_step: f64,
    pub max_points: usize,
    /// Cap on the relative residual of the lambda-identity at accepted points.
    pub identity_tol: f64,
    pub newton: NewtonConfig,
}

impl Default for ContinuationConfig {
    fn default() -> Self {
        ContinuationConfig {
            ds: 0.05,
            lambda_max: 6.0,
            amp_max: 10.0,
            min_step: 1e-6,
            max_points: 10_000,
            identity_tol: 1e-6,
            newton: NewtonConfig::default(),
        }
    }
}

/// One accepted solution (lambda, u) with its diagnostics.
#[derive(Debug, Clone)]
pub struct BranchPoint {
    pub lambda: f64,
    pub u: Field,
    pub sup_norm: f64,
    pub d12_norm: f64,
    /// Relative residual of lambda - lambda_1 = <phi_u u, phi_1> / <f u, phi_1>.
    pub identity_residual: f64,
    pub positive: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TerminationReason {
    MaxAmplitude,
    MaxLambda,
    StepFailure,
}

#[derive(Debug)]
pub struct Branch {
    pub points: Vec<BranchPoint>,
    pub start_lambda: f64,
    pub termination: TerminationReason,
}

/// Outcome of a Newton solve at fixed lambda.
#[derive(Debug)]
pub enum NewtonOutcome {
    Point(BranchPoint),
    /// Converged to the trivial solution u = 0.
    Trivial,
    /// Converged but with nodes pinned at zero; not a positive solution.
    SignFailure { nonpositive_nodes: usize },
}

/// Residual A u + phi_u u - lambda f u.
pub fn residual(inst: &Instance, lambda: f64, u: &Field) -> Field {
    residual_with_scale(inst, lambda, u).0
}

/// Residual together with the magnitude |A u| + |phi_u u| + |lambda f u|
/// entering the backward-error convergence test.
fn residual_with_scale(inst: &Instance, lambda: f64, u: &Field) -> (Field, f64) {
    let au = inst.laplacian.apply(u);
    let phi = inst.kernel.phi(u).phi;
    let mut scale = 0.0_f64;
    let values: Vec<f64> = au
        .values()
        .iter()
        .zip(phi.values())
        .zip(inst.f.values().iter().zip(u.values()))
        .map(|((&a, &p), (&fv, &uv))| {
            let pu = p * uv;
            let fu = lambda * fv * uv;
            scale = scale.max(a.abs() + pu.abs() + fu.abs());
            a + pu - fu
        })
        .collect();
    (
        Field::new(inst.grid.clone(), values).expect("same grid"),
        scale,
    )
}

/// Jacobian-vector product A v + phi_u v + u dphi_u[v] - lambda f v.
pub fn jacobian_apply(inst: &Instance, lambda: f64, u: &Field, v: &Field) -> Field {
    let av = inst.laplacian.apply(v);
    let phi_u = inst.kernel.phi(u).phi;
    let dphi = inst.kernel.phi_derivative(u, v);
    let values: Vec<f64> = av
        .values()
        .iter()
        .zip(phi_u.values().iter().zip(dphi.values()))
        .zip(inst.f.values().iter().zip(u.values().iter().zip(v.values())))
        .map(|((&a, (&p, &d)), (&fv, (&uv, &vv)))| a + p * vv + uv * d - lambda * fv * vv)
        .collect();
    Field::new(inst.grid.clone(), values).expect("same grid")
}

/// Result of the superposition operator G: the decaying solution of
/// -Delta g = -phi_v v, with the measured constant of |G(v)| <= C |v|^{gamma+1}.
#[derive(Debug)]
pub struct GResult {
    pub g: Field,
    pub growth_constant: f64,
}

pub fn apply_g(inst: &Instance, v: &Field) -> Result<GResult> {
    let phi = inst.kernel.phi(v).phi;
    let rhs = phi.mul_pointwise(v).scaled(-1.0);
    let g = inst.laplacian.solve(&rhs)?;
    let sup_v = v.sup_norm();
    let growth_constant = if sup_v == 0.0 {
        0.0
    } else {
        g.sup_norm() / sup_v.powf(inst.spec.gamma + 1.0)
    };
    Ok(GResult { g, growth_constant })
}

/// Right-hand side of the lambda-identity <phi_u u, phi_1> / <f u, phi_1>.
pub fn identity_rhs(inst: &Instance, eig: &EigenPair, u: &Field) -> f64 {
    let phi_u = inst.kernel.phi(u).phi;
    let num = weighted_dot(
        &inst.grid,
        &phi_u
            .values()
            .iter()
            .zip(u.values())
            .map(|(a, b)| a * b)
            .collect::<Vec<_>>(),
        eig.phi1.values(),
    );
    let den = weighted_dot(
        &inst.grid,
        &inst
            .f
            .values()
            .iter()
            .zip(u.values())
            .map(|(a, b)| a * b)
            .collect::<Vec<_>>(),
        eig.phi1.values(),
    );
    num / den
}

/// Seed amplitude from the lambda-identity linearization
/// lambda - lambda_1 ~ t^gamma <phi_{phi1} phi1, phi1> / <f phi1, phi1>.
pub fn seed_amplitude(inst: &Instance, eig: &EigenPair, lambda: f64) -> f64 {
    if lambda <= eig.lambda1 {
        return 0.0;
    }
    let m_hat = identity_rhs(inst, eig, &eig.phi1);
    ((lambda - eig.lambda1) / m_hat).powf(1.0 / inst.spec.gamma)
}

fn branch_point(inst: &Instance, eig: &EigenPair, lambda: f64, u: Field) -> BranchPoint {
    let n = norms(&u, &inst.p);
    let rhs = identity_rhs(inst, eig, &u);
    let gap = lambda - eig.lambda1;
    let identity_residual = (gap - rhs).abs() / gap.abs().max(1e-300);
    let positive = u.values().iter().all(|&v| v > 0.0);
    BranchPoint {
        lambda,
        u,
        sup_norm: n.sup,
        d12_norm: n.d12,
        identity_residual,
        positive,
    }
}

// ---------------------------------------------------------------------------
// Bordered tridiagonal solves
// ---------------------------------------------------------------------------

/// One-shot Gaussian elimination with partial pivoting for systems
///
///   [ T  C ] [x]   [rb]
///   [ B  D ] [y] = [rs]
///
/// with T tridiagonal (n x n), C n x k border columns, B k x n border rows
/// and D the k x k corner. Band rows are preferred as pivots; the moment a
/// border row must pivot (which only happens when the leading band is close
/// to singular), the remaining subsystem is finished densely. This keeps the
/// solve stable even when T alone is singular, the situation along the
/// bifurcation branch.
struct BorderedTridiag {
    n: usize,
    k: usize,
    sub: Vec<f64>,
    diag: Vec<f64>,
    sup1: Vec<f64>,
    cols: Vec<Vec<f64>>,
    rows: Vec<Vec<f64>>,
    corner: Vec<Vec<f64>>,
}

#[allow(clippy::needless_range_loop)]
impl BorderedTridiag {
    fn new(t: &Tridiag, cols: Vec<Vec<f64>>, rows: Vec<Vec<f64>>, corner: Vec<Vec<f64>>) -> Self {
        BorderedTridiag {
            n: t.di.len(),
            k: cols.len(),
            sub: t.lo.clone(),
            diag: t.di.clone(),
            sup1: t.up.clone(),
            cols,
            rows,
            corner,
        }
    }

    fn solve(mut self, mut rb: Vec<f64>, mut rs: Vec<f64>) -> Result<Vec<f64>> {
        let n = self.n;
        let k = self.k;
        let mut sup2 = vec![0.0; n];
        // Border-column entries per band row.
        let mut bc: Vec<Vec<f64>> = (0..n)
            .map(|i| self.cols.iter().map(|c| c[i]).collect())
            .collect();
        struct URow {
            t1: f64,
            t2: f64,
            bc: Vec<f64>,
            piv: f64,
        }
        let mut urows: Vec<URow> = Vec::with_capacity(n);
        let mut dense_from: Option<usize> = None;

        for j in 0..n {
            let p_here = self.diag[j].abs();
            let p_next = if j + 1 < n { self.sub[j + 1].abs() } else { 0.0 };
            let p_border = (0..k)
                .map(|q| self.rows[q][j].abs())
                .fold(0.0_f64, f64::max);
            if p_border > p_here && p_border > p_next {
                dense_from = Some(j);
                break;
            }
            if p_next > p_here {
                // Swap band rows j and j+1.
                let (dj, s1j, s2j) = (self.diag[j], self.sup1[j], sup2[j]);
                self.diag[j] = self.sub[j + 1];
                self.sup1[j] = self.diag[j + 1];
                sup2[j] = self.sup1[j + 1];
                self.sub[j + 1] = dj;
                self.diag[j + 1] = s1j;
                self.sup1[j + 1] = s2j;
                bc.swap(j, j + 1);
                rb.swap(j, j + 1);
            }
            let piv = self.diag[j];
            if piv == 0.0 {
                return Err(Error::SingularSystem(format!(
                    "bordered solve hit a zero pivot at row {j}"
                )));
            }
            if j + 1 < n && self.sub[j + 1] != 0.0 {
                let m = self.sub[j + 1] / piv;
                self.diag[j + 1] -= m * self.sup1[j];
                self.sup1[j + 1] -= m * sup2[j];
                for q in 0..k {
                    bc[j + 1][q] -= m * bc[j][q];
                }
                rb[j + 1] -= m * rb[j];
                self.sub[j + 1] = 0.0;
            }
            for q in 0..k {
                let t = self.rows[q][j];
                if t != 0.0 {
                    let m = t / piv;
                    self.rows[q][j] = 0.0;
                    if j + 1 < n {
                        self.rows[q][j + 1] -= m * self.sup1[j];
                    }
                    if j + 2 < n {
                        self.rows[q][j + 2] -= m * sup2[j];
                    }
                    for c in 0..k {
                        self.corner[q][c] -= m * bc[j][c];
                    }
                    rs[q] -= m * rb[j];
                }
            }
            urows.push(URow {
                t1: self.sup1[j],
                t2: sup2[j],
                bc: bc[j].clone(),
                piv,
            });
        }

        // Dense finish of the trailing subsystem (columns j0.., borders).
        let j0 = dense_from.unwrap_or(n);
        let rem = (n - j0) + k;
        let mut dm = DMatrix::zeros(rem, rem);
        let mut dr = DVector::zeros(rem);
        for i in j0..n {
            let r = i - j0;
            if i > j0 {
                dm[(r, i - 1 - j0)] = self.sub[i];
            }
            dm[(r, i - j0)] = self.diag[i];
            if i + 1 < n {
                dm[(r, i + 1 - j0)] = self.sup1[i];
            }
            if i + 2 < n {
                dm[(r, i + 2 - j0)] = sup2[i];
            }
            for q in 0..k {
                dm[(r, n - j0 + q)] = bc[i][q];
            }
            dr[r] = rb[i];
        }
        for q in 0..k {
            let r = n - j0 + q;
            for j in j0..n {
                dm[(r, j - j0)] = self.rows[q][j];
            }
            for c in 0..k {
                dm[(r, n - j0 + c)] = self.corner[q][c];
            }
            dr[r] = rs[q];
        }
        let tail = dm
            .lu()
            .solve(&dr)
            .ok_or_else(|| Error::SingularSystem("bordered dense remainder is singular".into()))?;

        let mut x = vec![0.0; n + k];
        for j in j0..n {
            x[j] = tail[j - j0];
        }
        for q in 0..k {
            x[n + q] = tail[n - j0 + q];
        }
        for j in (0..j0).rev() {
            let u = &urows[j];
            let mut acc = rb[j];
            if j + 1 < n + k {
                // banded tail
            }
            if j + 1 < n {
                acc -= u.t1 * x[j + 1];
            }
            if j + 2 < n {
                acc -= u.t2 * x[j + 2];
            }
            for q in 0..k {
                acc -= u.bc[q] * x[n + q];
            }
            x[j] = acc / u.piv;
        }
        Ok(x)
    }
}

// ---------------------------------------------------------------------------
// Jacobian solves
// ---------------------------------------------------------------------------

enum JacSolver {
    /// J = T + a b^T, solved through the bordered elimination.
    RankOne { t: Tridiag, a: Vec<f64>, b: Vec<f64> },
    /// Dense LU of the full Jacobian.
    Dense(nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>),
}

impl JacSolver {
    fn build(inst: &Instance, lambda: f64, u: &Field, phi_u: &Field) -> Self {
        let shift: Vec<f64> = phi_u
            .values()
            .iter()
            .zip(inst.f.values())
            .map(|(&p, &fv)| p - lambda * fv)
            .collect();
        let t = inst.laplacian.shifted_rows(&shift);
        let c = inst.kernel.derivative_weights(u);
        if let Some(rk) = inst.kernel.rank_one() {
            let a: Vec<f64> = u
                .values()
                .iter()
                .zip(&rk.left)
                .map(|(&uv, &lv)| uv * lv)
                .collect();
            let b: Vec<f64> = rk
                .right
                .iter()
                .zip(&c)
                .map(|(&rv, &cv)| rv * cv)
                .collect();
            JacSolver::RankOne { t, a, b }
        } else {
            let n = u.len();
            let table = inst.kernel.table();
            let mut m = DMatrix::zeros(n, n);
            for j in 0..n {
                for i in 0..n {
                    m[(i, j)] = u.values()[i] * table[(i, j)] * c[j];
                }
            }
            for i in 0..n {
                if i > 0 {
                    m[(i, i - 1)] += t.lo[i];
                }
                m[(i, i)] += t.di[i];
                if i + 1 < n {
                    m[(i, i + 1)] += t.up[i];
                }
            }
            JacSolver::Dense(m.lu())
        }
    }

    fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        match self {
            JacSolver::RankOne { t, a, b } => {
                let bt = BorderedTridiag::new(
                    t,
                    vec![a.clone()],
                    vec![b.clone()],
                    vec![vec![-1.0]],
                );
                let mut x = bt.solve(rhs.to_vec(), vec![0.0])?;
                x.truncate(rhs.len());
                Ok(x)
            }
            JacSolver::Dense(lu) => {
                let sol = lu
                    .solve(&DVector::from_column_slice(rhs))
                    .ok_or_else(|| Error::SingularSystem("dense Jacobian is singular".into()))?;
                Ok(sol.data.into())
            }
        }
    }

    /// Solves the pseudo-arclength corrector system
    ///   [ J      -f u ] [du]   [-res]
    ///   [ cu^T   clam ] [dl] = [-nval]
    /// and returns (du, dl).
    fn solve_bordered(
        &self,
        inst: &Instance,
        u: &Field,
        res: &[f64],
        nval: f64,
        cu: &[f64],
        clam: f64,
    ) -> Result<(Vec<f64>, f64)> {
        let n = u.len();
        let rlam: Vec<f64> = inst
            .f
            .values()
            .iter()
            .zip(u.values())
            .map(|(&fv, &uv)| -fv * uv)
            .collect();
        let neg_res: Vec<f64> = res.iter().map(|v| -v).collect();
        match self {
            JacSolver::RankOne { t, a, b } => {
                let bt = BorderedTridiag::new(
                    t,
                    vec![a.clone(), rlam],
                    vec![b.clone(), cu.to_vec()],
                    vec![vec![-1.0, 0.0], vec![0.0, clam]],
                );
                let x = bt.solve(neg_res, vec![0.0, -nval])?;
                Ok((x[..n].to_vec(), x[n + 1]))
            }
            JacSolver::Dense(_) => {
                // Assemble the (n+1) bordered dense system from scratch; the
                // plain LU of J is not reusable once the border row is added.
                Err(Error::SingularSystem(
                    "dense corrector must go through solve_bordered_dense".into(),
                ))
            }
        }
    }
}

/// Dense (n+1) corrector solve for non-separable kernels.
#[allow(clippy::too_many_arguments)]
fn solve_bordered_dense(
    inst: &Instance,
    lambda: f64,
    u: &Field,
    phi_u: &Field,
    res: &[f64],
    nval: f64,
    cu: &[f64],
    clam: f64,
) -> Result<(Vec<f64>, f64)> {
    let n = u.len();
    let c = inst.kernel.derivative_weights(u);
    let table = inst.kernel.table();
    let mut m = DMatrix::zeros(n + 1, n + 1);
    for j in 0..n {
        for i in 0..n {
            m[(i, j)] = u.values()[i] * table[(i, j)] * c[j];
        }
    }
    for i in 0..n {
        let shift = phi_u.values()[i] - lambda * inst.f.values()[i];
        if i > 0 {
            m[(i, i - 1)] += inst.laplacian.rows().lo[i];
        }
        m[(i, i)] += inst.laplacian.rows().di[i] + shift;
        if i + 1 < n {
            m[(i, i + 1)] += inst.laplacian.rows().up[i];
        }
        m[(i, n)] = -inst.f.values()[i] * u.values()[i];
        m[(n, i)] = cu[i];
    }
    m[(n, n)] = clam;
    let mut rhs = DVector::zeros(n + 1);
    for i in 0..n {
        rhs[i] = -res[i];
    }
    rhs[n] = -nval;
    let sol = m
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::SingularSystem("bordered dense Jacobian is singular".into()))?;
    Ok((sol.as_slice()[..n].to_vec(), sol[n]))
}

// ---------------------------------------------------------------------------
// Newton at fixed lambda
// ---------------------------------------------------------------------------

fn clip_nonnegative(u: &mut Field) {
    for v in u.values_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Newton iteration on the positive cone from `u0`. Iterates are clipped at
/// zero with a damped line search; an iterate falling below the trivial
/// threshold is reported as the trivial solution.
pub fn newton_solve(
    inst: &Instance,
    eig: &EigenPair,
    lambda: f64,
    u0: &Field,
    cfg: &NewtonConfig,
) -> Result<NewtonOutcome> {
    let mut u = u0.clone();
    clip_nonnegative(&mut u);
    let mut last_res = f64::INFINITY;
    for _ in 0..cfg.max_iter {
        if u.sup_norm() < cfg.trivial_threshold {
            return Ok(NewtonOutcome::Trivial);
        }
        let (res, scale) = residual_with_scale(inst, lambda, &u);
        let rn = res.sup_norm();
        last_res = rn;
        if rn <= cfg.tol * scale {
            let nonpositive = u.values().iter().filter(|&&v| v <= 0.0).count();
            if nonpositive > 0 {
                return Ok(NewtonOutcome::SignFailure {
                    nonpositive_nodes: nonpositive,
                });
            }
            return Ok(NewtonOutcome::Point(branch_point(inst, eig, lambda, u)));
        }
        let phi_u = inst.kernel.phi(&u).phi;
        let solver = JacSolver::build(inst, lambda, &u, &phi_u);
        let delta = solver.solve(res.scaled(-1.0).values())?;
        let delta = Field::new(inst.grid.clone(), delta)?;

        // Damped, clipped line search: accept the first step that reduces
        // the residual, falling back to the best trial.
        let mut alpha = 1.0;
        let mut best: Option<(f64, Field)> = None;
        for _ in 0..9 {
            let mut trial = u.add_scaled(alpha, &delta);
            clip_nonnegative(&mut trial);
            if trial.sup_norm() < cfg.trivial_threshold {
                return Ok(NewtonOutcome::Trivial);
            }
            let (res_t, _) = residual_with_scale(inst, lambda, &trial);
            let rt = res_t.sup_norm();
            if rt < rn {
                best = Some((rt, trial));
                break;
            }
            if best.as_ref().is_none_or(|(b, _)| rt < *b) {
                best = Some((rt, trial));
            }
            alpha *= 0.5;
        }
        u = best.expect("line search produced at least one trial").1;
    }
    Err(Error::IterationLimit {
        iterations: cfg.max_iter,
        residual: last_res,
    })
}

// ---------------------------------------------------------------------------
// Pseudo-arclength continuation
// ---------------------------------------------------------------------------

struct Metric {
    /// Weights w_i p_i / |phi_1|_{2,P}^2 for the u-component of the
    /// continuation inner product.
    wu: Vec<f64>,
}

impl Metric {
    fn new(inst: &Instance, eig: &EigenPair) -> Self {
        let phi_l2p2: f64 = inst
            .grid
            .weights()
            .iter()
            .zip(inst.p.values().iter().zip(eig.phi1.values()))
            .map(|(w, (p, v))| w * p * v * v)
            .sum();
        Metric {
            wu: inst
                .grid
                .weights()
                .iter()
                .zip(inst.p.values())
                .map(|(w, p)| w * p / phi_l2p2)
                .collect(),
        }
    }

    fn dot(&self, au: &[f64], al: f64, bu: &[f64], bl: f64) -> f64 {
        let mut acc = 0.0;
        for ((w, a), b) in self.wu.iter().zip(au).zip(bu) {
            acc += w * a * b;
        }
        acc + al * bl
    }

    fn norm(&self, au: &[f64], al: f64) -> f64 {
        self.dot(au, al, au, al).sqrt()
    }
}

/// Tangent direction at an accepted point, oriented along the previous one.
fn tangent_at(
    inst: &Instance,
    lambda: f64,
    u: &Field,
    metric: &Metric,
    prev: (&[f64], f64),
) -> Result<(Vec<f64>, f64)> {
    let phi_u = inst.kernel.phi(u).phi;
    let solver = JacSolver::build(inst, lambda, u, &phi_u);
    let rhs: Vec<f64> = inst
        .f
        .values()
        .iter()
        .zip(u.values())
        .map(|(&fv, &uv)| fv * uv)
        .collect();
    let y = solver.solve(&rhs)?;
    let nrm = metric.norm(&y, 1.0);
    let mut tu: Vec<f64> = y.iter().map(|v| v / nrm).collect();
    let mut tl = 1.0 / nrm;
    if metric.dot(&tu, tl, prev.0, prev.1) < 0.0 {
        tu.iter_mut().for_each(|v| *v = -*v);
        tl = -tl;
    }
    Ok((tu, tl))
}

/// Corrector: Newton on the residual augmented with the arclength plane
/// through the predictor. Soft failures return Ok(None) so the caller can
/// halve the step.
#[allow(clippy::too_many_arguments)]
fn corrector(
    inst: &Instance,
    lambda_pred: f64,
    u_pred: &Field,
    tan: (&[f64], f64),
    metric: &Metric,
    cfg: &NewtonConfig,
) -> Result<Option<(f64, Field, usize)>> {
    let mut lambda = lambda_pred;
    let mut u = u_pred.clone();
    clip_nonnegative(&mut u);
    let (tu, tl) = tan;
    let cu: Vec<f64> = metric.wu.iter().zip(tu).map(|(w, t)| w * t).collect();
    let n_tol = 1e-10 * (1.0 + lambda.abs());

    for it in 0..cfg.max_iter {
        if u.sup_norm() < cfg.trivial_threshold {
            return Ok(None);
        }
        let (res, scale) = residual_with_scale(inst, lambda, &u);
        let du_pred: Vec<f64> = u
            .values()
            .iter()
            .zip(u_pred.values())
            .map(|(a, b)| a - b)
            .collect();
        let nval = metric.dot(&du_pred, lambda - lambda_pred, tu, tl);
        if res.sup_norm() <= cfg.tol * scale && nval.abs() <= n_tol {
            return Ok(Some((lambda, u, it)));
        }
        let phi_u = inst.kernel.phi(&u).phi;
        let solver = JacSolver::build(inst, lambda, &u, &phi_u);
        let step = match &solver {
            JacSolver::RankOne { .. } => {
                solver.solve_bordered(inst, &u, res.values(), nval, &cu, tl)
            }
            JacSolver::Dense(_) => solve_bordered_dense(
                inst,
                lambda,
                &u,
                &phi_u,
                res.values(),
                nval,
                &cu,
                tl,
            ),
        };
        let (du, dl) = match step {
            Ok(s) => s,
            Err(Error::SingularSystem(_)) => return Ok(None),
            Err(e) => return Err(e),
        };
        let du = Field::new(inst.grid.clone(), du)?;
        u = u.add_scaled(1.0, &du);
        clip_nonnegative(&mut u);
        lambda += dl;
        if !lambda.is_finite() || !u.sup_norm().is_finite() {
            return Ok(None);
        }
    }
    Ok(None)
}

/// Traces the positive branch from (lambda_1, 0): seeds at
/// (lambda_1 + m t0^gamma, t0 phi_1) via the identity linearization, then
/// runs a predictor-corrector in the scaled (u, lambda) metric. Accepted
/// points must be strictly positive and satisfy the lambda-identity.
pub fn branch_continue(
    inst: &Instance,
    eig: &EigenPair,
    cfg: &ContinuationConfig,
) -> Result<Branch> {
    if cfg.lambda_max <= eig.lambda1 {
        return Err(Error::Config(format!(
            "lambda_max = {} does not exceed lambda_1 = {}",
            cfg.lambda_max, eig.lambda1
        )));
    }
    let gamma = inst.spec.gamma;
    let metric = Metric::new(inst, eig);
    let m_hat = identity_rhs(inst, eig, &eig.phi1);

    // Seed amplitude with metric step ~ ds: t0^2 + (m_hat t0^gamma)^2 = ds^2.
    let mut t0 = cfg.ds.min(0.1);
    for _ in 0..4 {
        t0 = cfg.ds / (1.0 + (m_hat * t0.powf(gamma - 1.0)).powi(2)).sqrt();
    }

    let mut history = Vec::new();
    let mut seeded: Option<BranchPoint> = None;
    for _ in 0..12 {
        let lambda_seed = eig.lambda1 + m_hat * t0.powf(gamma);
        let u0 = eig.phi1.scaled(t0);
        match newton_solve(inst, eig, lambda_seed, &u0, &cfg.newton) {
            Ok(NewtonOutcome::Point(p)) if p.positive => {
                seeded = Some(p);
                break;
            }
            Ok(NewtonOutcome::Point(_)) | Ok(NewtonOutcome::SignFailure { .. }) => {
                history.push(f64::NAN);
            }
            Ok(NewtonOutcome::Trivial) => history.push(0.0),
            Err(Error::IterationLimit { residual, .. }) => history.push(residual),
            Err(e) => return Err(e),
        }
        t0 *= 0.5;
        if t0 < cfg.newton.trivial_threshold {
            break;
        }
    }
    let seed = seeded.ok_or(Error::SeedFailure { history })?;

    let mut points = vec![seed];
    let mut ds = cfg.ds;
    let ds_cap = cfg.ds * 8.0;
    // Crude outgoing direction for orienting the first computed tangent.
    let mut prev_tan: (Vec<f64>, f64) = {
        let p = &points[0];
        let nrm = metric.norm(p.u.values(), p.lambda - eig.lambda1);
        (
            p.u.values().iter().map(|v| v / nrm).collect(),
            (p.lambda - eig.lambda1) / nrm,
        )
    };

    let termination = loop {
        let last = points.last().expect("branch has a seed point");
        if last.lambda >= cfg.lambda_max {
            break TerminationReason::MaxLambda;
        }
        if last.sup_norm >= cfg.amp_max {
            break TerminationReason::MaxAmplitude;
        }
        if points.len() >= cfg.max_points {
            break TerminationReason::StepFailure;
        }
        let (tu, tl) = match tangent_at(
            inst,
            last.lambda,
            &last.u,
            &metric,
            (&prev_tan.0, prev_tan.1),
        ) {
            Ok(t) => t,
            Err(Error::SingularSystem(_)) => break TerminationReason::StepFailure,
            Err(e) => return Err(e),
        };

        let mut accepted: Option<(f64, Field, usize)> = None;
        while ds >= cfg.min_step {
            let u_pred = Field::new(
                inst.grid.clone(),
                last.u
                    .values()
                    .iter()
                    .zip(&tu)
                    .map(|(u, t)| u + ds * t)
                    .collect(),
            )?;
            let lambda_pred = last.lambda + ds * tl;
            match corrector(inst, lambda_pred, &u_pred, (&tu, tl), &metric, &cfg.newton)? {
                Some((lam, u, iters)) => {
                    let cand = branch_point(inst, eig, lam, u);
                    let ok = cand.positive
                        && cand.lambda >= eig.lambda1 - 1e-8 * eig.lambda1.abs()
                        && cand.identity_residual <= cfg.identity_tol;
                    if ok {
                        points.push(cand);
                        accepted = Some((lam, Field::zeros(&inst.grid), iters));
                        break;
                    }
                    ds *= 0.5;
                }
                None => ds *= 0.5,
            }
        }
        match accepted {
            Some((_, _, iters)) => {
                if iters <= 4 {
                    ds = (ds * 1.4).min(ds_cap);
                }
                prev_tan = (tu, tl);
            }
            None => break TerminationReason::StepFailure,
        }
    };

    Ok(Branch {
        points,
        start_lambda: eig.lambda1,
        termination,
    })
}

/// A-priori bounds measured along the branch up to `lambda_cap`: the largest
/// Dirichlet norm and the largest sup-to-L^{2*} ratio (a Moser-type constant).
#[derive(Debug, Clone, Copy)]
pub struct AprioriReport {
    pub r_d12: f64,
    pub r_sup_ratio: f64,
}

pub fn apriori_check(branch: &Branch, lambda_cap: f64) -> AprioriReport {
    let mut r_d12 = 0.0_f64;
    let mut r_sup = 0.0_f64;
    for p in &branch.points {
        if p.lambda > lambda_cap || p.sup_norm == 0.0 {
            continue;
        }
        r_d12 = r_d12.max(p.d12_norm);
        let grid = p.u.grid();
        let n = grid.dim() as f64;
        let crit = 2.0 * n / (n - 2.0);
        let lcrit: f64 = grid
            .weights()
            .iter()
            .zip(p.u.values())
            .map(|(w, u)| w * u.abs().powf(crit))
            .sum::<f64>()
            .powf(1.0 / crit);
        if lcrit > 0.0 {
            r_sup = r_sup.max(p.sup_norm / lcrit);
        }
    }
    AprioriReport {
        r_d12,
        r_sup_ratio: r_sup,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::RadialGrid;
    use crate::model::ProblemSpec;
    use crate::nonlocal::log_log_slope;
    use crate::spectral::principal_eigenpair;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn assemble(gamma: f64, m: usize) -> (Instance, EigenPair) {
        let grid = RadialGrid::build(3, 100.0, m, 1.002).unwrap();
        let inst = Instance::assemble(ProblemSpec::rank_one_instance(gamma), grid).unwrap();
        let eig = principal_eigenpair(&inst.laplacian, &inst.f, 1e-11, 400).unwrap();
        (inst, eig)
    }

    /// Discrete oracle slope m for the rank-one branch: t(lambda) =
    /// ((lambda - lambda_1)/m)^{1/gamma} with m = sum w P phi_1^gamma.
    fn oracle_m(inst: &Instance, eig: &EigenPair) -> f64 {
        inst.grid
            .weights()
            .iter()
            .zip(inst.p.values().iter().zip(eig.phi1.values()))
            .map(|(w, (p, v))| w * p * v.powf(inst.spec.gamma))
            .sum()
    }

    #[test]
    fn residual_vanishes_on_the_trivial_line() {
        let (inst, _) = assemble(1.0, 300);
        let zero = Field::zeros(&inst.grid);
        assert_eq!(residual(&inst, 1.7, &zero).sup_norm(), 0.0);
    }

    #[test]
    fn residual_scales_superlinearly_near_the_bifurcation_point() {
        for gamma in [1.0, 1.5] {
            let (inst, eig) = assemble(gamma, 300);
            let eps_list = [1e-1, 1e-2, 1e-3];
            let norms: Vec<f64> = eps_list
                .iter()
                .map(|&e| residual(&inst, eig.lambda1, &eig.phi1.scaled(e)).sup_norm())
                .collect();
            let slope = log_log_slope(&eps_list, &norms);
            assert!(
                (slope - (gamma + 1.0)).abs() < 0.1,
                "gamma {gamma}: slope {slope}"
            );
        }
    }

    #[test]
    fn rank_one_closed_form_is_a_discrete_solution() {
        let (inst, eig) = assemble(1.0, 400);
        let m = oracle_m(&inst, &eig);
        let lambda = 1.5 * eig.lambda1;
        let t = (lambda - eig.lambda1) / m;
        let u = eig.phi1.scaled(t);
        let (res, scale) = residual_with_scale(&inst, lambda, &u);
        assert!(
            res.sup_norm() <= 1e-6 * scale,
            "closed form residual {} vs scale {}",
            res.sup_norm(),
            scale
        );
    }

    #[test]
    fn g_operator_basics() {
        let (inst, _) = assemble(1.0, 300);
        let zero = Field::zeros(&inst.grid);
        assert_eq!(apply_g(&inst, &zero).unwrap().g.sup_norm(), 0.0);

        let v = Field::sample(&inst.grid, |r| (-r).exp());
        let g1 = apply_g(&inst, &v).unwrap();
        // gamma = 1: G(2v) = 4 G(v) exactly (dyadic scaling is exact).
        let g2 = apply_g(&inst, &v.scaled(2.0)).unwrap();
        for (a, b) in g2.g.values().iter().zip(g1.g.values()) {
            assert_relative_eq!(*a, 4.0 * b, max_relative = 1e-13);
        }
        // |G(t v)| / t -> 0 as t -> 0.
        let mut prev_ratio = f64::INFINITY;
        for &t in &[1.0, 1e-1, 1e-2, 1e-3] {
            let g = apply_g(&inst, &v.scaled(t)).unwrap();
            let ratio = g.g.sup_norm() / t;
            assert!(ratio < prev_ratio);
            prev_ratio = ratio;
            // The measured growth constant is t-independent for gamma = 1.
            assert_relative_eq!(
                g.growth_constant,
                g1.growth_constant,
                max_relative = 1e-10
            );
        }
    }

    #[test]
    fn jacobian_matches_directional_finite_differences() {
        for gamma in [1.0, 1.5] {
            let (inst, eig) = assemble(gamma, 300);
            let u = eig.phi1.scaled(0.3);
            let v = Field::sample(&inst.grid, |r| (1.0 + r).recip());
            let lambda = 1.4 * eig.lambda1;
            let h = 1e-6;
            let fd = residual(&inst, lambda, &u.add_scaled(h, &v))
                .add_scaled(-1.0, &residual(&inst, lambda, &u))
                .scaled(1.0 / h);
            let jv = jacobian_apply(&inst, lambda, &u, &v);
            let scale = jv.sup_norm();
            let diff = fd
                .values()
                .iter()
                .zip(jv.values())
                .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
            assert!(
                diff / scale <= 1e-5,
                "gamma {gamma}: jacobian fd mismatch {}",
                diff / scale
            );
        }
    }

    #[test]
    fn newton_recovers_the_rank_one_amplitude() {
        let (inst, eig) = assemble(1.0, 500);
        let m = oracle_m(&inst, &eig);
        let lambda = eig.lambda1 + 0.5;
        let t = (lambda - eig.lambda1) / m;
        let u0 = eig.phi1.scaled(0.9 * t);
        match newton_solve(&inst, &eig, lambda, &u0, &NewtonConfig::default()).unwrap() {
            NewtonOutcome::Point(p) => {
                assert!(p.positive);
                assert_relative_eq!(p.sup_norm, t, max_relative = 1e-6);
                assert!(p.identity_residual <= 1e-6);
            }
            other => panic!("expected a positive solution, got {other:?}"),
        }
    }

    #[test]
    fn newton_collapses_to_trivial_at_and_below_lambda1() {
        let (inst, eig) = assemble(1.0, 400);
        for lambda in [eig.lambda1, 0.9 * eig.lambda1] {
            let u0 = eig.phi1.scaled(1e-3);
            match newton_solve(&inst, &eig, lambda, &u0, &NewtonConfig::default()).unwrap() {
                NewtonOutcome::Trivial => {}
                other => panic!("expected trivial at lambda {lambda}, got {other:?}"),
            }
        }
    }

    #[test]
    fn nonexistence_below_lambda1_from_random_seeds() {
        let (inst, eig) = assemble(1.0, 300);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..10 {
            let a = rng.gen_range(0.05..0.8);
            let b = rng.gen_range(0.5..4.0);
            let u0 = Field::sample(&inst.grid, |r| a * (-r / b).exp());
            let outcome =
                newton_solve(&inst, &eig, 0.9 * eig.lambda1, &u0, &NewtonConfig::default())
                    .unwrap();
            assert!(
                matches!(outcome, NewtonOutcome::Trivial),
                "expected trivial, got {outcome:?}"
            );
        }
    }

    #[test]
    fn branch_reproduces_the_closed_form_amplitude() {
        let (inst, eig) = assemble(1.0, 400);
        let m = oracle_m(&inst, &eig);
        let cfg = ContinuationConfig {
            lambda_max: 2.0 * eig.lambda1,
            ..Default::default()
        };
        let branch = branch_continue(&inst, &eig, &cfg).unwrap();
        assert_eq!(branch.termination, TerminationReason::MaxLambda);
        assert!(branch.points.len() > 10);
        let mut prev_amp = 0.0;
        for p in &branch.points {
            assert!(p.positive);
            assert!(p.lambda >= eig.lambda1);
            assert!(p.identity_residual <= 1e-6, "identity {}", p.identity_residual);
            let t = (p.lambda - eig.lambda1) / m;
            assert_relative_eq!(p.sup_norm, t, max_relative = 2e-2);
            assert!(p.sup_norm > prev_amp, "amplitudes not increasing");
            prev_amp = p.sup_norm;
        }
    }

    #[test]
    fn amplitude_scaling_exponent_is_one_over_gamma() {
        for gamma in [1.0, 1.5] {
            let (inst, eig) = assemble(gamma, 300);
            let cfg = ContinuationConfig {
                lambda_max: 2.0 * eig.lambda1,
                ..Default::default()
            };
            let branch = branch_continue(&inst, &eig, &cfg).unwrap();
            let t_seed = branch.points[0].sup_norm;
            let (mut gaps, mut amps) = (Vec::new(), Vec::new());
            for p in &branch.points {
                if p.sup_norm <= 10.0 * t_seed {
                    gaps.push(p.lambda - eig.lambda1);
                    amps.push(p.sup_norm);
                }
            }
            assert!(gaps.len() >= 3, "too few points in the first decade");
            let slope = log_log_slope(&gaps, &amps);
            assert!(
                (slope - 1.0 / gamma).abs() <= 0.05 / gamma,
                "gamma {gamma}: slope {slope}"
            );
        }
    }

    #[test]
    fn branch_output_is_deterministic() {
        let (inst, eig) = assemble(1.0, 300);
        let cfg = ContinuationConfig {
            lambda_max: 1.6 * eig.lambda1,
            ..Default::default()
        };
        let a = branch_continue(&inst, &eig, &cfg).unwrap();
        let b = branch_continue(&inst, &eig, &cfg).unwrap();
        assert_eq!(a.points.len(), b.points.len());
        for (x, y) in a.points.iter().zip(&b.points) {
            assert_eq!(x.lambda.to_bits(), y.lambda.to_bits());
            for (u, v) in x.u.values().iter().zip(y.u.values()) {
                assert_eq!(u.to_bits(), v.to_bits());
            }
        }
    }

    #[test]
    fn apriori_bounds_are_finite_and_zero_on_trivial_branches() {
        let (inst, eig) = assemble(1.0, 300);
        let empty = Branch {
            points: Vec::new(),
            start_lambda: eig.lambda1,
            termination: TerminationReason::MaxLambda,
        };
        let z = apriori_check(&empty, 10.0);
        assert_eq!(z.r_d12, 0.0);
        assert_eq!(z.r_sup_ratio, 0.0);

        let cfg = ContinuationConfig {
            lambda_max: 2.0 * eig.lambda1,
            ..Default::default()
        };
        let branch = branch_continue(&inst, &eig, &cfg).unwrap();
        let rep = apriori_check(&branch, 2.0 * eig.lambda1);
        assert!(rep.r_d12.is_finite() && rep.r_d12 > 0.0);
        assert!(rep.r_sup_ratio.is_finite() && rep.r_sup_ratio > 0.0);

        // The measured bounds are stable under grid refinement.
        let (inst2, eig2) = assemble(1.0, 600);
        let cfg2 = ContinuationConfig {
            lambda_max: 2.0 * eig2.lambda1,
            ..Default::default()
        };
        let branch2 = branch_continue(&inst2, &eig2, &cfg2).unwrap();
        let rep2 = apriori_check(&branch2, 2.0 * eig2.lambda1);
        assert_relative_eq!(rep.r_d12, rep2.r_d12, max_relative = 2e-2);
        assert_relative_eq!(rep.r_sup_ratio, rep2.r_sup_ratio, max_relative = 2e-2);
    }

    #[test]
    fn dense_kernel_path_finds_positive_solutions() {
        let grid = RadialGrid::build(3, 60.0, 220, 1.01).unwrap();
        let inst =
            Instance::assemble(ProblemSpec::gaussian_convolution_instance(), grid).unwrap();
        let eig = principal_eigenpair(&inst.laplacian, &inst.f, 1e-11, 400).unwrap();
        let lambda = 1.5 * eig.lambda1;
        let t0 = seed_amplitude(&inst, &eig, lambda);
        let u0 = eig.phi1.scaled(t0);
        match newton_solve(&inst, &eig, lambda, &u0, &NewtonConfig::default()).unwrap() {
            NewtonOutcome::Point(p) => {
                assert!(p.positive);
                assert!(p.identity_residual <= 1e-6);
                assert!(p.sup_norm > 0.01);
            }
            other => panic!("expected positive solution, got {other:?}"),
        }
        // Jacobian check through the dense path as well.
        let u = eig.phi1.scaled(0.2);
        let v = Field::sample(&inst.grid, |r| (1.0 + r).recip());
        let h = 1e-6;
        let fd = residual(&inst, lambda, &u.add_scaled(h, &v))
            .add_scaled(-1.0, &residual(&inst, lambda, &u))
            .scaled(1.0 / h);
        let jv = jacobian_apply(&inst, lambda, &u, &v);
        let diff = fd
            .values()
            .iter()
            .zip(jv.values())
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(diff / jv.sup_norm() <= 1e-5);
    }

    #[test]
    fn dense_kernel_short_branch() {
        let grid = RadialGrid::build(3, 60.0, 180, 1.01).unwrap();
        let inst =
            Instance::assemble(ProblemSpec::gaussian_convolution_instance(), grid).unwrap();
        let eig = principal_eigenpair(&inst.laplacian, &inst.f, 1e-11, 400).unwrap();
        let cfg = ContinuationConfig {
            ds: 0.1,
            lambda_max: 1.3 * eig.lambda1,
            ..Default::default()
        };
        let branch = branch_continue(&inst, &eig, &cfg).unwrap();
        assert_eq!(branch.termination, TerminationReason::MaxLambda);
        for p in &branch.points {
            assert!(p.positive);
            assert!(p.identity_residual <= 1e-6);
        }
    }

    #[test]
    fn bad_lambda_max_is_a_config_error() {
        let (inst, eig) = assemble(1.0, 300);
        let cfg = ContinuationConfig {
            lambda_max: 0.5 * eig.lambda1,
            ..Default::default()
        };
        assert!(matches!(
            branch_continue(&inst, &eig, &cfg),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn bordered_solver_agrees_with_dense_lu() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for trial in 0..30 {
            let n = rng.gen_range(3..40);
            let k = rng.gen_range(1..3usize);
            let mut t = Tridiag {
                lo: vec![0.0; n],
                di: vec![0.0; n],
                up: vec![0.0; n],
            };
            for i in 0..n {
                t.di[i] = rng.gen_range(-2.0..2.0);
                if i > 0 {
                    t.lo[i] = rng.gen_range(-1.0..1.0);
                }
                if i + 1 < n {
                    t.up[i] = rng.gen_range(-1.0..1.0);
                }
            }
            // Near-singular leading block on some trials.
            if trial % 3 == 0 {
                t.di[n / 2] = 1e-14;
            }
            let cols: Vec<Vec<f64>> = (0..k)
                .map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect();
            let rows: Vec<Vec<f64>> = (0..k)
                .map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect();
            let corner: Vec<Vec<f64>> = (0..k)
                .map(|_| (0..k).map(|_| rng.gen_range(1.0..2.0)).collect())
                .collect();
            let rb: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let rs: Vec<f64> = (0..k).map(|_| rng.gen_range(-1.0..1.0)).collect();

            let mut dense = DMatrix::zeros(n + k, n + k);
            for i in 0..n {
                if i > 0 {
                    dense[(i, i - 1)] = t.lo[i];
                }
                dense[(i, i)] = t.di[i];
                if i + 1 < n {
                    dense[(i, i + 1)] = t.up[i];
                }
                for q in 0..k {
                    dense[(i, n + q)] = cols[q][i];
                }
            }
            for q in 0..k {
                for j in 0..n {
                    dense[(n + q, j)] = rows[q][j];
                }
                for c in 0..k {
                    dense[(n + q, n + c)] = corner[q][c];
                }
            }
            let mut rhs = DVector::zeros(n + k);
            for i in 0..n {
                rhs[i] = rb[i];
            }
            for q in 0..k {
                rhs[n + q] = rs[q];
            }
            let Some(expect) = dense.clone().lu().solve(&rhs) else {
                continue;
            };
            let bt = BorderedTridiag::new(&t, cols, rows, corner);
            let got = bt.solve(rb, rs).unwrap();
            let resid = (&dense * DVector::from_column_slice(&got) - &rhs).norm();
            assert!(
                resid < 1e-9 * (1.0 + rhs.norm()),
                "trial {trial}: residual {resid}"
            );
            let _ = expect;
        }
    }
}
