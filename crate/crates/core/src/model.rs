//! Problem instances: dimension, nonlocal exponent, growth rate f, weight P
//! and the kernel family, together with numerical checks of the structural
//! hypotheses they are supposed to satisfy.

use crate::error::{Error, Result};
use crate::grid::{sphere_area, Field, RadialGrid};
use nalgebra::DMatrix;
use std::sync::Arc;

/// Base shapes for radial profiles. All are positive on [0, inf).
#[derive(Debug, Clone, PartialEq)]
pub enum BaseProfile {
    /// (1 + r^2)^{-2}
    InvQuadSq,
    /// (1 + r^2)^{-1}
    InvQuad,
    /// e^{-r}
    Exp,
    /// e^{-r^2}
    Gauss,
    /// Piecewise-linear interpolation of (r, value) samples; 0 past the range.
    Tabulated { rs: Vec<f64>, values: Vec<f64> },
}

/// A radial profile `scale * base(r)^power`.
#[derive(Debug, Clone, PartialEq)]
pub struct RadialProfile {
    pub base: BaseProfile,
    pub scale: f64,
    pub power: f64,
}

impl RadialProfile {
    pub fn new(base: BaseProfile) -> Self {
        RadialProfile {
            base,
            scale: 1.0,
            power: 1.0,
        }
    }

    pub fn with(base: BaseProfile, scale: f64, power: f64) -> Self {
        RadialProfile { base, scale, power }
    }

    pub fn eval(&self, r: f64) -> f64 {
        let v = match &self.base {
            BaseProfile::InvQuadSq => (1.0 + r * r).powi(-2),
            BaseProfile::InvQuad => (1.0 + r * r).recip(),
            BaseProfile::Exp => (-r).exp(),
            BaseProfile::Gauss => (-r * r).exp(),
            BaseProfile::Tabulated { rs, values } => tab_interp(rs, values, r),
        };
        if self.power == 1.0 {
            self.scale * v
        } else {
            self.scale * v.powf(self.power)
        }
    }

    pub fn sample(&self, grid: &Arc<RadialGrid>) -> Field {
        Field::sample(grid, |r| self.eval(r))
    }
}

fn tab_interp(rs: &[f64], values: &[f64], r: f64) -> f64 {
    if rs.is_empty() || r < rs[0] || r > rs[rs.len() - 1] {
        return 0.0;
    }
    let j = rs.partition_point(|&x| x < r);
    if j == 0 {
        return values[0];
    }
    if j >= rs.len() {
        return values[rs.len() - 1];
    }
    let t = (r - rs[j - 1]) / (rs[j] - rs[j - 1]);
    values[j - 1] + t * (values[j] - values[j - 1])
}

/// The weight P: positive, radial, integrable.
#[derive(Debug, Clone)]
pub struct WeightP {
    pub profile: RadialProfile,
}

impl WeightP {
    pub fn new(profile: RadialProfile) -> Self {
        WeightP { profile }
    }

    pub fn eval(&self, r: f64) -> f64 {
        self.profile.eval(r)
    }

    pub fn sample(&self, grid: &Arc<RadialGrid>) -> Field {
        self.profile.sample(grid)
    }

    /// |P|_1 by full-space quadrature on the given grid.
    pub fn mass(&self, grid: &RadialGrid) -> f64 {
        grid.quad(|r| self.eval(r))
    }
}

/// The growth rate f with its local L^q integrability exponent.
#[derive(Debug, Clone)]
pub struct GrowthRate {
    pub profile: RadialProfile,
    /// Exponent for the local integrability condition; must exceed N/2.
    pub lq_exponent: f64,
}

impl GrowthRate {
    pub fn new(profile: RadialProfile, lq_exponent: f64) -> Self {
        GrowthRate {
            profile,
            lq_exponent,
        }
    }

    pub fn eval(&self, r: f64) -> f64 {
        self.profile.eval(r)
    }

    pub fn sample(&self, grid: &Arc<RadialGrid>) -> Field {
        self.profile.sample(grid)
    }

    /// Upper estimate of sup_x |f|_{L^q(B_2(x))}: the sup of f over a sliding
    /// radial window of width 2, times |B_2|^{1/q}. For the decreasing
    /// profiles shipped here the sup is attained at the origin.
    pub fn local_lq_estimate(&self, grid: &RadialGrid) -> f64 {
        let q = self.lq_exponent;
        let n = grid.dim() as f64;
        let ball = sphere_area(grid.dim()) / n * 2.0_f64.powf(n); // |B_2|
        let nodes = grid.nodes();
        let mut sup_window = 0.0_f64;
        for (i, &r) in nodes.iter().enumerate() {
            let mut local_max = self.eval(r);
            let mut j = i;
            while j + 1 < nodes.len() && nodes[j + 1] <= r + 2.0 {
                j += 1;
                local_max = local_max.max(self.eval(nodes[j]));
            }
            sup_window = sup_window.max(local_max);
        }
        ball.powf(1.0 / q) * sup_window
    }
}

/// Kernel families. All reduce, after averaging over spheres, to a matrix
/// Kbar(r_i, s_j) acting on radial samples.
#[derive(Debug, Clone)]
pub enum KernelSpec {
    /// K(x, y) = f(x) P(y)^{gamma/2} q2(y): the Q factor depends on y only.
    Separable { q2: RadialProfile },
    /// K(x, y) = f(x) P(y)^{gamma/2} g(y - x) with radial g.
    RadialConvolution { g: RadialProfile },
    /// Sphere-averaged kernel given directly as a matrix on the grid nodes.
    Tabulated { table: DMatrix<f64> },
}

/// A full problem instance of the nonlocal logistic equation.
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub dim: usize,
    pub gamma: f64,
    pub f: GrowthRate,
    pub p: WeightP,
    pub kernel: KernelSpec,
}

impl ProblemSpec {
    pub fn new(
        dim: usize,
        gamma: f64,
        f: GrowthRate,
        p: WeightP,
        kernel: KernelSpec,
    ) -> Result<Self> {
        if dim < 3 {
            return Err(Error::InvalidInstance(format!(
                "dimension N = {dim} violates N >= 3"
            )));
        }
        if !(1.0..2.0).contains(&gamma) {
            return Err(Error::InvalidInstance(format!(
                "gamma = {gamma} outside [1, 2)"
            )));
        }
        Ok(ProblemSpec {
            dim,
            gamma,
            f,
            p,
            kernel,
        })
    }

    /// Area of the unit sphere S^{N-1}; the constant appearing in the decay
    /// law |P|_1 / (omega_N (N-2)).
    pub fn omega(&self) -> f64 {
        sphere_area(self.dim)
    }

    /// The N = 3 instance f = P = (1+r^2)^{-2} with the separable kernel
    /// K(x,y) = f(x) P(y), for which the principal eigenpair of the weighted
    /// linear problem is (N(N-2), (1+r^2)^{-(N-2)/2}) and the positive branch
    /// has the closed-form amplitude ((lambda - lambda_1)/m)^{1/gamma}.
    pub fn analytic_instance() -> ProblemSpec {
        Self::rank_one_instance(1.0)
    }

    /// The analytic f = P pair with the rank-one kernel K(x,y) = f(x) P(y)
    /// for an arbitrary exponent gamma in [1, 2).
    pub fn rank_one_instance(gamma: f64) -> ProblemSpec {
        let base = RadialProfile::new(BaseProfile::InvQuadSq);
        ProblemSpec::new(
            3,
            gamma,
            GrowthRate::new(base.clone(), 2.0),
            WeightP::new(base.clone()),
            KernelSpec::Separable {
                // q2 = P^{1 - gamma/2} makes f(x) P(y)^{gamma/2} q2(y) = f(x) P(y).
                q2: RadialProfile::with(BaseProfile::InvQuadSq, 1.0, 1.0 - gamma / 2.0),
            },
        )
        .expect("analytic instance parameters are valid")
    }

    /// Gaussian radial-convolution instance used for the tail-decay checks.
    pub fn gaussian_convolution_instance() -> ProblemSpec {
        let base = RadialProfile::new(BaseProfile::InvQuadSq);
        ProblemSpec::new(
            3,
            1.0,
            GrowthRate::new(base.clone(), 2.0),
            WeightP::new(base),
            KernelSpec::RadialConvolution {
                g: RadialProfile::new(BaseProfile::Gauss),
            },
        )
        .expect("gaussian instance parameters are valid")
    }

    /// Exponential-weight instance (P = f = e^{-r}) used for the potential
    /// asymptotics checks.
    pub fn exponential_instance() -> ProblemSpec {
        let base = RadialProfile::new(BaseProfile::Exp);
        ProblemSpec::new(
            3,
            1.0,
            GrowthRate::new(base.clone(), 2.0),
            WeightP::new(base),
            KernelSpec::Separable {
                q2: RadialProfile::with(BaseProfile::Exp, 1.0, 0.5),
            },
        )
        .expect("exponential instance parameters are valid")
    }
}

/// Principal eigenvalue N(N-2) of the weighted linear problem for the
/// analytic pair f = P = (1+r^2)^{-2}.
pub fn analytic_eigenvalue(dim: usize) -> f64 {
    (dim * (dim - 2)) as f64
}

/// The matching eigenfunction (1+r^2)^{-(N-2)/2}, sup-normalized at r = 0.
pub fn analytic_eigenfunction(dim: usize, r: f64) -> f64 {
    (1.0 + r * r).powf(-((dim as f64) - 2.0) / 2.0)
}

/// Outcome of one hypothesis check.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CheckStatus {
    Pass,
    Fail,
    /// Violated, but deliberately tolerated for a test instance.
    Relaxed,
    Skipped,
}

#[derive(Debug, Clone)]
pub struct HypothesisCheck {
    pub name: &'static str,
    pub status: CheckStatus,
    pub measured: f64,
    pub note: String,
}

/// Per-hypothesis report. `relaxed` marks instances that violate the far-field
/// kernel-decay condition but are kept as oracles.
#[derive(Debug, Clone)]
pub struct HypothesisReport {
    pub checks: Vec<HypothesisCheck>,
    pub relaxed: bool,
}

impl HypothesisReport {
    pub fn passed(&self) -> bool {
        self.checks
            .iter()
            .all(|c| c.status != CheckStatus::Fail)
    }

    pub fn check(&self, name: &str) -> Option<&HypothesisCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Validates the structural hypotheses of an instance on a grid:
/// positivity of f and P, domination f <= P, finiteness of the kernel
/// norm bound M, far-field kernel decay (as a measured profile), kernel
/// nondegeneracy near the diagonal, and the local integrability exponent.
///
/// A failing far-field decay check downgrades to `Relaxed`: separable
/// oracle kernels violate it by construction and stay usable.
pub fn validate_hypotheses(
    spec: &ProblemSpec,
    grid: &Arc<RadialGrid>,
    tol: f64,
) -> Result<HypothesisReport> {
    let table = crate::nonlocal::KernelTable::assemble(spec, grid)?;
    let mut checks = Vec::new();

    let f_s = spec.f.sample(grid);
    let p_s = spec.p.sample(grid);
    for (&fv, &pv) in f_s.values().iter().zip(p_s.values()) {
        if fv.is_nan() || pv.is_nan() || fv <= 0.0 || pv <= 0.0 {
            return Err(Error::InvalidInstance(
                "f and P must be strictly positive at every sample point".into(),
            ));
        }
    }

    // Domination 0 < f <= P.
    let worst_ratio = f_s
        .values()
        .iter()
        .zip(p_s.values())
        .map(|(f, p)| f / p)
        .fold(0.0_f64, f64::max);
    checks.push(HypothesisCheck {
        name: "f_dominated_by_P",
        status: if worst_ratio <= 1.0 + tol {
            CheckStatus::Pass
        } else {
            CheckStatus::Fail
        },
        measured: worst_ratio,
        note: "max f/P over nodes".into(),
    });

    // Integrable weight.
    let mass = spec.p.mass(grid);
    checks.push(HypothesisCheck {
        name: "P_integrable",
        status: if mass.is_finite() && mass > 0.0 {
            CheckStatus::Pass
        } else {
            CheckStatus::Fail
        },
        measured: mass,
        note: "|P|_1 on the grid".into(),
    });

    // Finiteness of M = sup_x |Q(x,.)|_{2/(2-gamma)}.
    let m = table.m_bound();
    checks.push(HypothesisCheck {
        name: "Q_norm_finite",
        status: if m.is_finite() {
            CheckStatus::Pass
        } else {
            CheckStatus::Fail
        },
        measured: m,
        note: "computed bound M".into(),
    });

    // Far-field decay of Q: epsilon(R) = int_{|y| <= L} Q(x, y)^{2/(2-gamma)} dy
    // at |x| = R must fall below tol as R grows. Measured as a profile with
    // L fixed to a tenth of the domain.
    let l_fixed = grid.r_max() / 10.0;
    let profile = table.q_tail_profile(l_fixed);
    let eps_end = profile.last().map(|&(_, e)| e).unwrap_or(f64::INFINITY);
    let eps_start = profile.first().map(|&(_, e)| e).unwrap_or(f64::INFINITY);
    let decayed = eps_end <= tol * eps_start.max(1e-300) || eps_end <= tol;
    checks.push(HypothesisCheck {
        name: "Q_far_field_decay",
        status: if decayed {
            CheckStatus::Pass
        } else {
            CheckStatus::Relaxed
        },
        measured: eps_end,
        note: format!("epsilon(R_max) with L = {l_fixed:.3}; relaxed instances keep a nonvanishing tail"),
    });
    let relaxed = !decayed;

    // Nondegeneracy: K strictly positive on a product of balls around the
    // origin (a sufficient condition checked on the sampled table).
    let radius = (grid.r_max() / 20.0).max(grid.nodes()[1]);
    let min_diag = table.min_over_ball(radius);
    checks.push(HypothesisCheck {
        name: "K_nondegenerate",
        status: if min_diag > 0.0 {
            CheckStatus::Pass
        } else {
            CheckStatus::Fail
        },
        measured: min_diag,
        note: format!("min of Kbar over r, s <= {radius:.3} (sufficient condition)"),
    });

    // Local integrability exponent q > N/2.
    let q = spec.f.lq_exponent;
    checks.push(HypothesisCheck {
        name: "f_local_lq_exponent",
        status: if q > spec.dim as f64 / 2.0 {
            CheckStatus::Pass
        } else {
            CheckStatus::Fail
        },
        measured: q,
        note: format!(
            "requires q > N/2 = {}; local L^q estimate {:.3e}",
            spec.dim as f64 / 2.0,
            spec.f.local_lq_estimate(grid)
        ),
    });

    Ok(HypothesisReport { checks, relaxed })
}
