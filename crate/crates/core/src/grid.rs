//! Radial discretization of R^N on [0, R_max].
//!
//! Functions are radial samples on a graded node set; integrals over R^N are
//! finite-volume sums with weights w_i ~ omega_N r_i^{N-1} dr_i, and the
//! Laplacian u -> -(u'' + (N-1)/r u') is a flux-form tridiagonal operator.
//! The outer boundary carries the Robin condition
//! u'(R) + ((N-2)/R) u(R) = 0, which is exact for the r^{2-N} far-field
//! profile every decaying object in this problem class settles into.

use crate::error::{Error, Result};
use std::io::{BufRead, Write};
use std::sync::Arc;

/// Surface area of the unit sphere S^{N-1} in R^N: 2 pi^{N/2} / Gamma(N/2).
pub fn sphere_area(dim: usize) -> f64 {
    let n = dim as f64;
    2.0 * std::f64::consts::PI.powf(n / 2.0) / gamma_half_integer(dim)
}

/// Gamma(N/2) for integer N >= 1, by the recurrence from Gamma(1/2) = sqrt(pi)
/// and Gamma(1) = 1.
fn gamma_half_integer(n: usize) -> f64 {
    let mut value = if n.is_multiple_of(2) {
        1.0
    } else {
        std::f64::consts::PI.sqrt()
    };
    let mut k = if n.is_multiple_of(2) { 2 } else { 1 };
    while k < n {
        value *= k as f64 / 2.0;
        k += 2;
    }
    value
}

/// Graded radial grid with full-space quadrature weights.
#[derive(Debug)]
pub struct RadialGrid {
    dim: usize,
    r_max: f64,
    stretch: f64,
    nodes: Vec<f64>,
    /// w_i = omega_N * (r_{i+1/2}^N - r_{i-1/2}^N)/N, the exact volume of the
    /// finite-volume cell around node i.
    weights: Vec<f64>,
    /// Face transmissibility a_i = r_{i+1/2}^{N-1} / dr_i between nodes i, i+1.
    face_coeff: Vec<f64>,
    /// Robin closure (N-2) R^{N-2} entering the last diagonal entry.
    robin_coeff: f64,
    omega: f64,
}

impl RadialGrid {
    /// Builds a grid of `m` intervals on [0, r_max] with per-interval
    /// geometric spacing ratio `stretch >= 1` (1 = uniform, >1 clusters
    /// nodes near the origin).
    pub fn build(dim: usize, r_max: f64, m: usize, stretch: f64) -> Result<Arc<Self>> {
        if dim < 3 {
            return Err(Error::InvalidGrid(format!("dimension {dim} < 3")));
        }
        if r_max.is_nan() || !r_max.is_finite() || r_max <= 0.0 {
            return Err(Error::InvalidGrid(format!("r_max {r_max} must be positive")));
        }
        if m < 16 {
            return Err(Error::InvalidGrid(format!("m = {m} < 16 intervals")));
        }
        if stretch.is_nan() || !stretch.is_finite() || stretch < 1.0 {
            return Err(Error::InvalidGrid(format!("stretch {stretch} must be >= 1")));
        }

        let mut nodes = Vec::with_capacity(m + 1);
        if stretch == 1.0 {
            let h = r_max / m as f64;
            nodes.extend((0..=m).map(|i| i as f64 * h));
        } else {
            // dr_i = dr_0 * stretch^i with sum dr_i = r_max.
            let qm = stretch.powi(m as i32);
            if !qm.is_finite() {
                return Err(Error::InvalidGrid(format!(
                    "stretch {stretch} overflows over {m} intervals"
                )));
            }
            let dr0 = r_max * (stretch - 1.0) / (qm - 1.0);
            if dr0 <= 0.0 || dr0 < r_max * 1e-14 {
                return Err(Error::InvalidGrid(format!(
                    "stretch {stretch} collapses the first interval (dr0 = {dr0:.3e})"
                )));
            }
            let mut r = 0.0;
            let mut dr = dr0;
            nodes.push(0.0);
            for _ in 0..m {
                r += dr;
                nodes.push(r);
                dr *= stretch;
            }
            // Absorb the accumulated rounding into the last node.
            nodes[m] = r_max;
        }
        for i in 0..m {
            if nodes[i + 1].is_nan() || nodes[i + 1] <= nodes[i] {
                return Err(Error::InvalidGrid("nodes are not strictly increasing".into()));
            }
        }

        let n = dim as f64;
        let omega = sphere_area(dim);
        let faces: Vec<f64> = (0..m).map(|i| 0.5 * (nodes[i] + nodes[i + 1])).collect();
        let face_coeff: Vec<f64> = (0..m)
            .map(|i| faces[i].powf(n - 1.0) / (nodes[i + 1] - nodes[i]))
            .collect();
        let mut weights = Vec::with_capacity(m + 1);
        for i in 0..=m {
            let lo = if i == 0 { 0.0 } else { faces[i - 1] };
            let hi = if i == m { r_max } else { faces[i] };
            weights.push(omega * (hi.powf(n) - lo.powf(n)) / n);
        }
        let robin_coeff = (n - 2.0) * r_max.powf(n - 2.0);

        Ok(Arc::new(RadialGrid {
            dim,
            r_max,
            stretch,
            nodes,
            weights,
            face_coeff,
            robin_coeff,
            omega,
        }))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn r_max(&self) -> f64 {
        self.r_max
    }

    /// Number of nodes (intervals + 1).
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    pub(crate) fn face_coeff(&self) -> &[f64] {
        &self.face_coeff
    }

    pub(crate) fn robin_coeff(&self) -> f64 {
        self.robin_coeff
    }

    /// Full-space integral of a radial function sampled at the nodes.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        self.weights
            .iter()
            .zip(values)
            .map(|(w, v)| w * v)
            .sum()
    }

    /// Full-space quadrature of a radial profile.
    pub fn quad(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.weights
            .iter()
            .zip(&self.nodes)
            .map(|(w, &r)| w * f(r))
            .sum()
    }

    /// Discrete Dirichlet energy |grad u|^2 over R^N: interior finite-difference
    /// flux quadrature plus the Robin term, which equals the energy of the
    /// harmonic r^{2-N} extension beyond R_max.
    pub fn dirichlet_energy(&self, values: &[f64]) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.face_coeff.len() {
            let d = values[i + 1] - values[i];
            acc += self.face_coeff[i] * d * d;
        }
        let um = values[values.len() - 1];
        acc += self.robin_coeff * um * um;
        self.omega * acc
    }

    /// Indices of the trailing window r >= r_max / window_factor.
    pub fn trailing_window(&self, window_factor: f64) -> std::ops::Range<usize> {
        let cutoff = self.r_max / window_factor;
        let start = self.nodes.partition_point(|&r| r < cutoff);
        start..self.nodes.len()
    }

    fn same_layout(&self, other: &Self) -> bool {
        self.dim == other.dim
            && self.r_max == other.r_max
            && self.stretch == other.stretch
            && self.nodes.len() == other.nodes.len()
    }
}

/// Scalar samples on a radial grid.
#[derive(Debug, Clone)]
pub struct Field {
    grid: Arc<RadialGrid>,
    values: Vec<f64>,
}

impl Field {
    pub fn new(grid: Arc<RadialGrid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch {
                expected: grid.len(),
                got: values.len(),
            });
        }
        Ok(Field { grid, values })
    }

    pub fn zeros(grid: &Arc<RadialGrid>) -> Self {
        Field {
            grid: Arc::clone(grid),
            values: vec![0.0; grid.len()],
        }
    }

    pub fn sample(grid: &Arc<RadialGrid>, f: impl Fn(f64) -> f64) -> Self {
        Field {
            grid: Arc::clone(grid),
            values: grid.nodes().iter().map(|&r| f(r)).collect(),
        }
    }

    pub fn grid(&self) -> &Arc<RadialGrid> {
        &self.grid
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field {
        Field {
            grid: Arc::clone(&self.grid),
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scaled(&self, c: f64) -> Field {
        self.map(|v| c * v)
    }

    /// self + c * other
    pub fn add_scaled(&self, c: f64, other: &Field) -> Field {
        debug_assert!(self.compatible(other));
        Field {
            grid: Arc::clone(&self.grid),
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a + c * b)
                .collect(),
        }
    }

    pub fn mul_pointwise(&self, other: &Field) -> Field {
        debug_assert!(self.compatible(other));
        Field {
            grid: Arc::clone(&self.grid),
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a * b)
                .collect(),
        }
    }

    pub fn compatible(&self, other: &Field) -> bool {
        Arc::ptr_eq(&self.grid, &other.grid) || self.grid.same_layout(&other.grid)
    }

    pub fn check_compatible(&self, other: &Field) -> Result<()> {
        if self.compatible(other) {
            Ok(())
        } else {
            Err(Error::GridMismatch {
                expected: self.len(),
                got: other.len(),
            })
        }
    }

    /// Writes `r,value` rows with 17 significant digits.
    pub fn write_csv(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "r,value")?;
        for (r, v) in self.grid.nodes().iter().zip(&self.values) {
            writeln!(out, "{r:.16e},{v:.16e}")?;
        }
        Ok(())
    }

    /// Reads `r,value` rows and linearly interpolates onto `grid`.
    /// Radii must be sorted ascending; values outside the sampled range are 0.
    pub fn read_csv(reader: impl BufRead, grid: &Arc<RadialGrid>) -> Result<Self> {
        let mut rs: Vec<f64> = Vec::new();
        let mut vs: Vec<f64> = Vec::new();
        for (k, line) in reader.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split(',');
            let a = parts.next().unwrap_or("").trim();
            if k == 0 && a.parse::<f64>().is_err() {
                continue; // header row
            }
            let b = parts.next().ok_or_else(|| {
                Error::Config(format!("field csv line {} has no value column", k + 1))
            })?;
            let r: f64 = a
                .parse()
                .map_err(|_| Error::Config(format!("bad radius {a:?} on line {}", k + 1)))?;
            let v: f64 = b
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad value {b:?} on line {}", k + 1)))?;
            if let Some(&last) = rs.last() {
                if r <= last {
                    return Err(Error::Config("field csv radii must be increasing".into()));
                }
            }
            rs.push(r);
            vs.push(v);
        }
        if rs.is_empty() {
            return Err(Error::Config("field csv contains no samples".into()));
        }
        let values = grid
            .nodes()
            .iter()
            .map(|&r| interp_linear(&rs, &vs, r))
            .collect();
        Ok(Field {
            grid: Arc::clone(grid),
            values,
        })
    }
}

fn interp_linear(rs: &[f64], vs: &[f64], r: f64) -> f64 {
    if r < rs[0] || r > rs[rs.len() - 1] {
        return 0.0;
    }
    let j = rs.partition_point(|&x| x < r);
    if j == 0 {
        return vs[0];
    }
    if j >= rs.len() {
        return vs[rs.len() - 1];
    }
    let t = (r - rs[j - 1]) / (rs[j] - rs[j - 1]);
    vs[j - 1] + t * (vs[j] - vs[j - 1])
}

/// The norms used throughout: sup, weighted L^2_P, Dirichlet seminorm and the
/// decay norm sup r^{N-2} |u|.
#[derive(Debug, Clone, Copy)]
pub struct Norms {
    pub sup: f64,
    pub l2p: f64,
    pub d12: f64,
    pub decay: f64,
}

/// Computes all norms of `u`; `p` holds the weight P sampled on the same grid.
pub fn norms(u: &Field, p: &Field) -> Norms {
    let grid = u.grid();
    let n = grid.dim() as f64;
    let mut l2p2 = 0.0;
    let mut decay = 0.0_f64;
    for ((&w, &r), (&ui, &pi)) in grid
        .weights()
        .iter()
        .zip(grid.nodes())
        .zip(u.values().iter().zip(p.values()))
    {
        l2p2 += w * pi * ui * ui;
        if r > 0.0 {
            decay = decay.max(r.powf(n - 2.0) * ui.abs());
        }
    }
    Norms {
        sup: u.sup_norm(),
        l2p: l2p2.sqrt(),
        d12: grid.dirichlet_energy(u.values()).sqrt(),
        decay,
    }
}

/// w-weighted inner product sum w_i a_i b_i.
pub fn weighted_dot(grid: &RadialGrid, a: &[f64], b: &[f64]) -> f64 {
    grid.weights()
        .iter()
        .zip(a.iter().zip(b))
        .map(|(w, (x, y))| w * x * y)
        .sum()
}

/// Tridiagonal matrix in row form: (T u)_i = lo_i u_{i-1} + di_i u_i + up_i u_{i+1}.
#[derive(Debug, Clone)]
pub struct Tridiag {
    pub lo: Vec<f64>,
    pub di: Vec<f64>,
    pub up: Vec<f64>,
}

impl Tridiag {
    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        let n = self.di.len();
        let mut out = vec![0.0; n];
        for i in 0..n {
            let mut v = self.di[i] * u[i];
            if i > 0 {
                v += self.lo[i] * u[i - 1];
            }
            if i + 1 < n {
                v += self.up[i] * u[i + 1];
            }
            out[i] = v;
        }
        out
    }

    /// LU factorization with partial pivoting (LAPACK dgttrf layout).
    pub fn factor(&self) -> Result<TridiagLu> {
        let n = self.di.len();
        let mut d = self.di.clone();
        let mut dl: Vec<f64> = (1..n).map(|i| self.lo[i]).collect();
        let mut du: Vec<f64> = (0..n - 1).map(|i| self.up[i]).collect();
        let mut du2 = vec![0.0; n.saturating_sub(2)];
        let mut swap = vec![false; n.saturating_sub(1)];

        for i in 0..n - 1 {
            if d[i].abs() >= dl[i].abs() {
                if d[i] == 0.0 {
                    return Err(Error::SingularSystem(format!("zero pivot at row {i}")));
                }
                let fact = dl[i] / d[i];
                dl[i] = fact;
                d[i + 1] -= fact * du[i];
            } else {
                let fact = d[i] / dl[i];
                d[i] = dl[i];
                dl[i] = fact;
                let tmp = du[i];
                du[i] = d[i + 1];
                d[i + 1] = tmp - fact * d[i + 1];
                if i + 2 < n {
                    du2[i] = du[i + 1];
                    du[i + 1] = -fact * du[i + 1];
                }
                swap[i] = true;
            }
        }
        if d[n - 1] == 0.0 {
            return Err(Error::SingularSystem("zero pivot in last row".into()));
        }
        Ok(TridiagLu {
            d,
            dl,
            du,
            du2,
            swap,
        })
    }
}

/// Factorized tridiagonal system.
#[derive(Debug)]
pub struct TridiagLu {
    d: Vec<f64>,
    dl: Vec<f64>,
    du: Vec<f64>,
    du2: Vec<f64>,
    swap: Vec<bool>,
}

impl TridiagLu {
    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let n = self.d.len();
        let mut b = rhs.to_vec();
        for i in 0..n - 1 {
            if self.swap[i] {
                let tmp = b[i];
                b[i] = b[i + 1];
                b[i + 1] = tmp - self.dl[i] * b[i];
            } else {
                b[i + 1] -= self.dl[i] * b[i];
            }
        }
        b[n - 1] /= self.d[n - 1];
        if n > 1 {
            b[n - 2] = (b[n - 2] - self.du[n - 2] * b[n - 1]) / self.d[n - 2];
        }
        for i in (0..n.saturating_sub(2)).rev() {
            b[i] = (b[i] - self.du[i] * b[i + 1] - self.du2[i] * b[i + 2]) / self.d[i];
        }
        b
    }
}

/// Flux-form discretization of u -> -(u'' + (N-1)/r u') with the reflection
/// condition at r = 0 and the r^{2-N}-exact Robin condition at R_max.
#[derive(Debug)]
pub struct DiscreteLaplacian {
    grid: Arc<RadialGrid>,
    rows: Tridiag,
}

impl DiscreteLaplacian {
    pub fn new(grid: &Arc<RadialGrid>) -> Self {
        let m = grid.len() - 1;
        let a = grid.face_coeff();
        let w = grid.weights();
        let omega = grid.omega();
        let mut lo = vec![0.0; m + 1];
        let mut di = vec![0.0; m + 1];
        let mut up = vec![0.0; m + 1];
        // Cell volumes without the omega factor normalize the row sums.
        let vol = |i: usize| w[i] / omega;
        di[0] = a[0] / vol(0);
        up[0] = -a[0] / vol(0);
        for i in 1..m {
            lo[i] = -a[i - 1] / vol(i);
            di[i] = (a[i - 1] + a[i]) / vol(i);
            up[i] = -a[i] / vol(i);
        }
        lo[m] = -a[m - 1] / vol(m);
        di[m] = (a[m - 1] + grid.robin_coeff()) / vol(m);
        DiscreteLaplacian {
            grid: Arc::clone(grid),
            rows: Tridiag { lo, di, up },
        }
    }

    pub fn grid(&self) -> &Arc<RadialGrid> {
        &self.grid
    }

    pub fn rows(&self) -> &Tridiag {
        &self.rows
    }

    /// Row form shifted by a diagonal: rows + diag(shift).
    pub fn shifted_rows(&self, shift: &[f64]) -> Tridiag {
        let mut t = self.rows.clone();
        for (d, s) in t.di.iter_mut().zip(shift) {
            *d += s;
        }
        t
    }

    pub fn apply(&self, u: &Field) -> Field {
        Field {
            grid: Arc::clone(&self.grid),
            values: self.rows.apply(u.values()),
        }
    }

    /// Solves A u = rhs for the unique decaying discrete solution.
    pub fn solve(&self, rhs: &Field) -> Result<Field> {
        let lu = self.rows.factor()?;
        Ok(Field {
            grid: Arc::clone(&self.grid),
            values: lu.solve(rhs.values()),
        })
    }

    /// <A u, u>_w, the Dirichlet energy including the Robin tail term.
    pub fn quadratic_form(&self, u: &Field) -> f64 {
        self.grid.dirichlet_energy(u.values())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sphere_areas_match_closed_forms() {
        assert_relative_eq!(sphere_area(3), 4.0 * std::f64::consts::PI, epsilon = 1e-12);
        assert_relative_eq!(
            sphere_area(4),
            2.0 * std::f64::consts::PI * std::f64::consts::PI,
            epsilon = 1e-12
        );
        assert_relative_eq!(
            sphere_area(5),
            8.0 * std::f64::consts::PI * std::f64::consts::PI / 3.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn quadrature_reproduces_exponential_mass() {
        // int_{R^3} e^{-|x|} dx = 4 pi * int_0^inf s^2 e^{-s} ds = 8 pi.
        let grid = RadialGrid::build(3, 100.0, 1000, 1.0).unwrap();
        let mass = grid.quad(|r| (-r).exp());
        let exact = 8.0 * std::f64::consts::PI;
        assert!(
            (mass - exact).abs() / exact < 5e-3,
            "mass {mass} vs {exact}"
        );
    }

    #[test]
    fn quadrature_of_zero_is_zero() {
        let grid = RadialGrid::build(3, 50.0, 64, 1.0).unwrap();
        assert_eq!(grid.quad(|_| 0.0), 0.0);
    }

    #[test]
    fn quadrature_error_is_second_order() {
        let exact = 8.0 * std::f64::consts::PI;
        let err = |m: usize| {
            let grid = RadialGrid::build(3, 60.0, m, 1.0).unwrap();
            (grid.quad(|r| (-r).exp()) - exact).abs()
        };
        let ratio = err(400) / err(800);
        assert!(
            (2.8..5.5).contains(&ratio),
            "refinement ratio {ratio} not ~4"
        );
    }

    #[test]
    fn stretched_grid_quadrature_converges() {
        let grid = RadialGrid::build(3, 200.0, 2000, 1.002).unwrap();
        let mass = grid.quad(|r| (-r).exp());
        let exact = 8.0 * std::f64::consts::PI;
        assert_relative_eq!(mass, exact, max_relative = 1e-4);
    }

    #[test]
    fn grid_rejects_bad_parameters() {
        assert!(RadialGrid::build(3, -1.0, 100, 1.0).is_err());
        assert!(RadialGrid::build(3, 10.0, 8, 1.0).is_err());
        assert!(RadialGrid::build(3, 10.0, 100, 0.9).is_err());
        assert!(RadialGrid::build(3, 200.0, 2000, 1.02).is_err()); // first cell underflows
        assert!(RadialGrid::build(2, 10.0, 100, 1.0).is_err());
    }

    #[test]
    fn laplacian_is_symmetric_and_positive_in_weighted_product() {
        let grid = RadialGrid::build(3, 40.0, 300, 1.004).unwrap();
        let lap = DiscreteLaplacian::new(&grid);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let u = Field::new(
                Arc::clone(&grid),
                (0..grid.len()).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            )
            .unwrap();
            let v = Field::new(
                Arc::clone(&grid),
                (0..grid.len()).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            )
            .unwrap();
            let auv = weighted_dot(&grid, lap.apply(&u).values(), v.values());
            let uav = weighted_dot(&grid, u.values(), lap.apply(&v).values());
            let scale = auv.abs().max(uav.abs()).max(1e-300);
            assert!(
                (auv - uav).abs() / scale < 1e-12,
                "asymmetry {}",
                (auv - uav).abs() / scale
            );
            let auu = weighted_dot(&grid, lap.apply(&u).values(), u.values());
            assert!(auu > 0.0, "quadratic form not positive: {auu}");
            // The closed-form energy matches the matrix quadratic form.
            assert_relative_eq!(auu, lap.quadratic_form(&u), max_relative = 1e-10);
        }
    }

    #[test]
    fn solve_is_inverse_of_apply() {
        let grid = RadialGrid::build(3, 30.0, 200, 1.003).unwrap();
        let lap = DiscreteLaplacian::new(&grid);
        let rhs = Field::sample(&grid, |r| (-r).exp() * (1.0 + r));
        let u = lap.solve(&rhs).unwrap();
        let back = lap.apply(&u);
        for (a, b) in back.values().iter().zip(rhs.values()) {
            assert!((a - b).abs() < 1e-9 * rhs.sup_norm().max(1.0));
        }
    }

    #[test]
    fn zero_rhs_gives_zero_solution() {
        let grid = RadialGrid::build(3, 30.0, 128, 1.0).unwrap();
        let lap = DiscreteLaplacian::new(&grid);
        let u = lap.solve(&Field::zeros(&grid)).unwrap();
        assert_eq!(u.sup_norm(), 0.0);
    }

    #[test]
    fn discrete_maximum_principle() {
        let grid = RadialGrid::build(3, 30.0, 150, 1.002).unwrap();
        let lap = DiscreteLaplacian::new(&grid);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let rhs = Field::new(
                Arc::clone(&grid),
                (0..grid.len()).map(|_| rng.gen_range(0.0..1.0)).collect(),
            )
            .unwrap();
            let u = lap.solve(&rhs).unwrap();
            assert!(u.values().iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn harmonic_tail_profile_is_in_the_kernel() {
        // r^{2-N} is harmonic away from 0 and exactly satisfies the Robin row;
        // the flux-form residual on it behaves like h^2 / r^5.
        let residual_past = |m: usize, r_from: f64| {
            let grid = RadialGrid::build(3, 50.0, m, 1.0).unwrap();
            let lap = DiscreteLaplacian::new(&grid);
            let u = Field::sample(&grid, |r| if r > 0.0 { r.powi(-1) } else { 0.0 });
            let res = lap.apply(&u);
            let robin_row = res.values()[grid.len() - 1].abs();
            assert!(robin_row < 1e-7, "Robin row residual too large: {robin_row}");
            res.values()
                .iter()
                .zip(grid.nodes())
                .filter(|(_, &r)| r >= r_from)
                .fold(0.0_f64, |acc, (v, _)| acc.max(v.abs()))
        };
        let r1 = residual_past(400, 2.0);
        let r2 = residual_past(800, 2.0);
        assert!(r1 < 1e-3, "interior residual {r1}");
        assert!(r1 / r2 > 3.0, "residual not shrinking: {r1:.3e} -> {r2:.3e}");
    }

    #[test]
    fn manufactured_solution_converges_at_second_order() {
        // -Delta (1+r^2)^{-1/2} = 3 (1+r^2)^{-5/2} in R^3.
        let sup_err = |m: usize| {
            let grid = RadialGrid::build(3, 60.0, m, 1.0).unwrap();
            let lap = DiscreteLaplacian::new(&grid);
            let rhs = Field::sample(&grid, |r| 3.0 * (1.0 + r * r).powf(-2.5));
            let u = lap.solve(&rhs).unwrap();
            let exact = Field::sample(&grid, |r| (1.0 + r * r).powf(-0.5));
            u.values()
                .iter()
                .zip(exact.values())
                .fold(0.0_f64, |acc, (a, b)| acc.max((a - b).abs()))
        };
        let e1 = sup_err(300);
        let e2 = sup_err(600);
        let ratio = e1 / e2;
        assert!(
            (3.0..5.5).contains(&ratio),
            "convergence ratio {ratio} (errors {e1:.3e}, {e2:.3e})"
        );
    }

    #[test]
    fn norms_match_analytic_values() {
        let grid = RadialGrid::build(3, 200.0, 2000, 1.002).unwrap();
        let u = Field::sample(&grid, |r| (-r).exp());
        let p = Field::sample(&grid, |r| (-r).exp());
        let n = norms(&u, &p);
        // |u|_{2,P}^2 = 4 pi int r^2 e^{-3r} dr = 8 pi / 27.
        assert_relative_eq!(
            n.l2p,
            (8.0 * std::f64::consts::PI / 27.0).sqrt(),
            max_relative = 1e-4
        );
        assert_relative_eq!(n.sup, 1.0, epsilon = 1e-15);

        let zero = Field::zeros(&grid);
        let nz = norms(&zero, &p);
        assert_eq!(nz.sup, 0.0);
        assert_eq!(nz.l2p, 0.0);
        assert_eq!(nz.d12, 0.0);
        assert_eq!(nz.decay, 0.0);

        // decay norm of (1+r^2)^{-1/2} climbs to 1.
        let phi = Field::sample(&grid, |r| (1.0 + r * r).powf(-0.5));
        let np = norms(&phi, &p);
        assert_relative_eq!(np.decay, 1.0, max_relative = 1e-4);
    }

    #[test]
    fn dirichlet_energy_matches_analytic_gradient() {
        // u = e^{-r}: int |grad u|^2 = 4 pi int_0^inf r^2 e^{-2r} dr = pi.
        let grid = RadialGrid::build(3, 80.0, 3000, 1.0).unwrap();
        let u = Field::sample(&grid, |r| (-r).exp());
        let e = grid.dirichlet_energy(u.values());
        assert_relative_eq!(e, std::f64::consts::PI, max_relative = 1e-3);
    }

    #[test]
    fn tridiag_pivoting_handles_indefinite_systems() {
        // Shifted so the plain Thomas pivot order would be unstable.
        let t = Tridiag {
            lo: vec![0.0, 4.0, 1.0, 2.0],
            di: vec![0.1, -3.0, 0.05, 1.0],
            up: vec![5.0, 1.0, 3.0, 0.0],
        };
        let x_true = vec![1.0, -2.0, 0.5, 3.0];
        let b = t.apply(&x_true);
        let x = t.factor().unwrap().solve(&b);
        for (a, b) in x.iter().zip(&x_true) {
            assert_relative_eq!(a, b, epsilon = 1e-10);
        }
    }

    #[test]
    fn field_csv_roundtrip_and_interpolation() {
        let grid = RadialGrid::build(3, 10.0, 50, 1.0).unwrap();
        let u = Field::sample(&grid, |r| (1.0 + r).recip());
        let mut buf = Vec::new();
        u.write_csv(&mut buf).unwrap();
        let back = Field::read_csv(std::io::BufReader::new(buf.as_slice()), &grid).unwrap();
        for (a, b) in back.values().iter().zip(u.values()) {
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn trailing_window_covers_last_decade() {
        let grid = RadialGrid::build(3, 200.0, 100, 1.0).unwrap();
        let w = grid.trailing_window(10.0);
        assert!(grid.nodes()[w.start] >= 20.0);
        assert!(w.start > 0 && grid.nodes()[w.start - 1] < 20.0);
    }
}
