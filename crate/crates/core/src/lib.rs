//! Radial solver for nonlocal logistic equations on R^N.
//!
//! The equation -Delta u = (lambda f(x) - int K(x,y) |u(y)|^gamma dy) u with
//! u > 0 decaying at infinity is discretized radially; the crate computes the
//! principal eigenpair of the weighted linear problem, Newtonian potentials
//! with their far-field asymptotics, Newton solutions of the full nonlinear
//! problem and the positive bifurcation branch emanating from (lambda_1, 0),
//! together with a verification suite tying every piece to an independent
//! oracle.

pub mod error;
pub mod gauss;
pub mod grid;
pub mod model;
pub mod nonlocal;
pub mod config;
pub mod continuation;
pub mod potential;
pub mod spectral;
pub mod verify;

pub use error::{Error, Result};

use grid::{DiscreteLaplacian, Field, RadialGrid};
use model::ProblemSpec;
use nonlocal::KernelTable;
use std::sync::Arc;

/// A problem instance assembled on a grid: operator, kernel table and the
/// sampled coefficient fields, ready for eigen/Newton/continuation work.
pub struct Instance {
    pub spec: ProblemSpec,
    pub grid: Arc<RadialGrid>,
    pub laplacian: DiscreteLaplacian,
    pub kernel: KernelTable,
    pub f: Field,
    pub p: Field,
    pub p_mass: f64,
}

impl Instance {
    pub fn assemble(spec: ProblemSpec, grid: Arc<RadialGrid>) -> Result<Self> {
        if grid.dim() != spec.dim {
            return Err(Error::InvalidInstance(format!(
                "grid dimension {} does not match problem dimension {}",
                grid.dim(),
                spec.dim
            )));
        }
        let kernel = KernelTable::assemble(&spec, &grid)?;
        let laplacian = DiscreteLaplacian::new(&grid);
        let f = spec.f.sample(&grid);
        let p = spec.p.sample(&grid);
        let p_mass = grid.integrate(p.values());
        Ok(Instance {
            spec,
            grid,
            laplacian,
            kernel,
            f,
            p,
            p_mass,
        })
    }
}
