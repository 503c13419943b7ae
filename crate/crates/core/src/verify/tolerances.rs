//! Versioned defaults for the verification suite: per-check grids and
//! tolerances live here, not in test bodies, so grid-parameter changes
//! adjust one file.

/// Bump when any tolerance or grid default changes.
pub const SUITE_VERSION: &str = "1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Level {
    Fast,
    Full,
}

impl Level {
    pub fn as_str(&self) -> &'static str {
        match self {
            Level::Fast => "fast",
            Level::Full => "full",
        }
    }
}

/// Grid parameters for one family of checks.
#[derive(Debug, Clone, Copy)]
pub struct GridSpec {
    pub r_max: f64,
    pub m: usize,
    pub stretch: f64,
}

#[derive(Debug, Clone)]
pub struct SuiteParams {
    /// Eigenvalue oracle: lambda_1 = N(N-2) on this grid within `eig_tol_rel`.
    pub eig_grid: GridSpec,
    pub eig_tol_rel: f64,
    pub eig_runtime_s: f64,

    /// Far-field constant of the exponential weight within `decay_tol_rel`.
    pub decay_grid: GridSpec,
    pub decay_tol_rel: f64,

    /// Rank-one branch oracle: amplitude within `branch_tol_rel` up to
    /// 2 lambda_1.
    pub branch_grid: GridSpec,
    pub branch_ds: f64,
    pub branch_tol_rel: f64,
    pub branch_runtime_s: f64,

    /// Existence dichotomy: factors below / above lambda_1 and seeds per factor.
    pub dichotomy_below: [f64; 3],
    pub dichotomy_above: [f64; 3],
    pub dichotomy_seeds: usize,
    pub trivial_cap: f64,

    /// Relative residual cap for the lambda-identity at accepted points.
    pub identity_tol: f64,

    /// phi-property suite grid and thresholds.
    pub phi_grid: GridSpec,
    pub phi_homogeneity_rel: f64,
    pub phi_bound_slack: f64,
    pub phi_tail_ratio: f64,
    pub phi_modulus_slope_dev: f64,

    /// Far-field plateau variation cap for computed solutions and phi_1.
    pub plateau_variation: f64,

    /// Jacobian versus finite differences, relative.
    pub jacobian_fd_tol: f64,

    /// Second-order convergence window for the lambda_1 error ratio under
    /// grid doubling, on a uniform grid pair (m, 2m).
    pub convergence_grid: GridSpec,
    pub convergence_ratio: (f64, f64),

    /// Discrete self-adjointness of the solution operator.
    pub self_adjoint_grid: GridSpec,
    pub self_adjoint_tol: f64,
    pub self_adjoint_pairs: usize,

    /// Amplitude scaling exponent 1/gamma within this relative deviation.
    pub slope_rel_dev: f64,

    /// Grid for dense (non-separable) kernel checks; kept moderate because
    /// the dense Jacobian factorization is cubic in m.
    pub dense_grid: GridSpec,

    /// Inner solver settings used across the suite.
    pub eig_solver_tol: f64,
    pub eig_solver_max_iter: usize,
}

/// Suite defaults per level. Fast trades grid resolution for a sub-minute
/// wall clock; full runs the criterion-pinned grids.
pub fn defaults(level: Level) -> SuiteParams {
    let fast = matches!(level, Level::Fast);
    SuiteParams {
        eig_grid: if fast {
            GridSpec { r_max: 200.0, m: 500, stretch: 1.008 }
        } else {
            GridSpec { r_max: 200.0, m: 2000, stretch: 1.002 }
        },
        eig_tol_rel: 0.01,
        eig_runtime_s: 5.0,

        decay_grid: if fast {
            GridSpec { r_max: 200.0, m: 500, stretch: 1.008 }
        } else {
            GridSpec { r_max: 200.0, m: 2000, stretch: 1.002 }
        },
        decay_tol_rel: 0.01,

        branch_grid: if fast {
            GridSpec { r_max: 100.0, m: 500, stretch: 1.004 }
        } else {
            GridSpec { r_max: 100.0, m: 2000, stretch: 1.002 }
        },
        branch_ds: 0.05,
        branch_tol_rel: 0.02,
        branch_runtime_s: 60.0,

        dichotomy_below: [0.5, 0.9, 0.99],
        dichotomy_above: [1.01, 1.5, 2.0],
        dichotomy_seeds: 10,
        trivial_cap: 1e-8,

        identity_tol: 1e-6,

        phi_grid: if fast {
            GridSpec { r_max: 200.0, m: 150, stretch: 1.01 }
        } else {
            GridSpec { r_max: 200.0, m: 400, stretch: 1.01 }
        },
        phi_homogeneity_rel: 1e-12,
        phi_bound_slack: 1e-10,
        phi_tail_ratio: 1e-2,
        phi_modulus_slope_dev: 0.15,

        plateau_variation: 0.05,

        jacobian_fd_tol: 1e-5,

        convergence_grid: if fast {
            GridSpec { r_max: 100.0, m: 200, stretch: 1.0 }
        } else {
            GridSpec { r_max: 100.0, m: 500, stretch: 1.0 }
        },
        convergence_ratio: (3.5, 4.5),

        self_adjoint_grid: if fast {
            GridSpec { r_max: 80.0, m: 300, stretch: 1.001 }
        } else {
            GridSpec { r_max: 80.0, m: 500, stretch: 1.001 }
        },
        self_adjoint_tol: 1e-9,
        self_adjoint_pairs: 20,

        slope_rel_dev: 0.05,

        dense_grid: if fast {
            GridSpec { r_max: 60.0, m: 200, stretch: 1.01 }
        } else {
            GridSpec { r_max: 60.0, m: 600, stretch: 1.004 }
        },

        eig_solver_tol: 1e-11,
        eig_solver_max_iter: 400,
    }
}
