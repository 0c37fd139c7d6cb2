//! Filter functions for the stabilized leapfrog step and their application
//! to the masked second-order operator.
//!
//! A filter is a function `psi` with `psi(0) = 1` entering the middle stage
//! of the three-stage step as `u' = u + tau * psi(tau^2 S) (L2 v + g)`.  Its
//! stability footprint is summarized by three constants derived from
//! `theta(z) = 1/psi(z) - z/4` and `phi(z) = (theta(z) - 1)/z`:
//!
//! * `c_theta`: a positive lower bound of `theta` on `[0, beta^2]`,
//! * `beta^2`: the filtered CFL window (`tau^2 ||S|| <= beta^2`),
//! * `c_phi`: a bound of `|phi|` on the same window.
//!
//! Three filters are provided: the trivial one (plain leapfrog), the
//! Crank–Nicolson filter `1/(1 + z/4)` (a locally implicit method, applied
//! through a conjugate-gradient solve), and the leapfrog–Chebyshev family
//! `psi(z) z = 2 - 2 T_p(nu - z/alpha) / T_p(nu)` with a damping parameter
//! `eta` (applied through a short divided-difference Chebyshev recurrence
//! that touches only the masked region and its neighbor layer).

use std::fmt;

use crate::dgspace::{Block, DgSpace};
use crate::operators::MaskedSecondOrder;

/// Filter selection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FilterSpec {
    /// `psi = 1`: the unfiltered leapfrog scheme.
    Leapfrog,
    /// `psi(z) = 1 / (1 + z/4)`: Crank–Nicolson on the masked region.
    CrankNicolson,
    /// Leapfrog–Chebyshev of degree `p` with damping `eta >= 0`;
    /// `eta = 0` is undamped and carries no stabilization margin.
    Lfc { p: u32, eta: f64 },
}

impl fmt::Display for FilterSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FilterSpec::Leapfrog => write!(f, "leapfrog"),
            FilterSpec::CrankNicolson => write!(f, "crank-nicolson"),
            FilterSpec::Lfc { p, eta } => write!(f, "lfc(p={p}, eta={eta})"),
        }
    }
}

/// Errors from filter evaluation and application.
#[derive(Debug, Clone, PartialEq)]
pub enum FilterError {
    /// A parameter is out of range (message says which).
    InvalidParameter(String),
    /// `psi(z) <= 0`, so `theta(z)` is undefined there.
    PsiNonPositive { z: f64, value: f64 },
    /// The advertised constants failed their verification grid.
    StabilityCheckFailed { z: f64, what: &'static str },
    /// The conjugate-gradient solve for the Crank–Nicolson filter stalled.
    CgDidNotConverge { iters: usize, rel_residual: f64 },
}

impl fmt::Display for FilterError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FilterError::InvalidParameter(msg) => write!(f, "invalid filter parameter: {msg}"),
            FilterError::PsiNonPositive { z, value } => {
                write!(f, "psi({z}) = {value} is not positive")
            }
            FilterError::StabilityCheckFailed { z, what } => {
                write!(f, "stability constants violated at z = {z}: {what}")
            }
            FilterError::CgDidNotConverge { iters, rel_residual } => {
                write!(f, "cg stalled after {iters} iterations (relative residual {rel_residual:.3e})")
            }
        }
    }
}

impl std::error::Error for FilterError {}

/// Chebyshev polynomial of the first kind by the three-term recurrence.
pub fn chebyshev_t(p: u32, x: f64) -> f64 {
    match p {
        0 => 1.0,
        1 => x,
        _ => {
            let (mut tm, mut t) = (1.0, x);
            for _ in 1..p {
                let next = 2.0 * x * t - tm;
                tm = t;
                t = next;
            }
            t
        }
    }
}

/// Scalar data of the degree-`p`, damping-`eta` Chebyshev filter, computed
/// through the hyperbolic closed forms (`nu = cosh(a)` with
/// `a = acosh(1 + eta^2 / (2 p^2))` evaluated cancellation-free).
#[derive(Debug, Clone)]
pub struct LfcScalars {
    pub p: u32,
    pub nu: f64,
    pub alpha: f64,
    /// `T_p(nu)`, `T_p'(nu)`, `T_p''(nu)`.
    pub t_p: f64,
    pub t_p_prime: f64,
    pub t_p_second: f64,
    /// `T_j(nu)` for `j = 0..=p` by the recurrence.
    pub t_js: Vec<f64>,
}

pub fn lfc_scalars(p: u32, eta: f64) -> LfcScalars {
    assert!(p >= 1 && eta >= 0.0);
    let pf = p as f64;
    let delta = eta * eta / (2.0 * pf * pf);
    let nu = 1.0 + delta;
    // acosh(1 + delta) without cancellation near 0.
    let a = (delta + (delta * (2.0 + delta)).sqrt()).ln_1p();
    let (t_p, t_p_prime, t_p_second) = if a < 1e-8 {
        (1.0, pf * pf, pf * pf * (pf * pf - 1.0) / 3.0)
    } else {
        let (sa, ca) = (a.sinh(), a.cosh());
        let (spa, cpa) = ((pf * a).sinh(), (pf * a).cosh());
        (
            cpa,
            pf * spa / sa,
            (pf * pf * cpa * sa - pf * spa * ca) / (sa * sa * sa),
        )
    };
    let alpha = 2.0 * t_p_prime / t_p;
    let mut t_js = Vec::with_capacity(p as usize + 1);
    t_js.push(1.0);
    t_js.push(nu);
    for _ in 1..p {
        let next = 2.0 * nu * t_js[t_js.len() - 1] - t_js[t_js.len() - 2];
        t_js.push(next);
    }
    LfcScalars { p, nu, alpha, t_p, t_p_prime, t_p_second, t_js }
}

/// Divided difference `(T_p(nu) - T_p(nu - y)) / y`, continued to
/// `T_p'(nu)` at `y = 0`, by the same recurrence the operator version uses:
/// `S_{j+1} = 2 (nu - y) S_j - S_{j-1} + 2 T_j(nu)`, `S_0 = 0`, `S_1 = 1`.
fn lfc_divided_difference(sc: &LfcScalars, y: f64) -> f64 {
    if sc.p == 1 {
        return 1.0;
    }
    let (mut sm, mut s) = (0.0, 1.0);
    for j in 1..sc.p {
        let next = 2.0 * (sc.nu - y) * s - sm + 2.0 * sc.t_js[j as usize];
        sm = s;
        s = next;
    }
    s
}

/// The filter function `psi(z)` (valid for `z >= 0`).
pub fn psi(spec: &FilterSpec, z: f64) -> f64 {
    match spec {
        FilterSpec::Leapfrog => 1.0,
        FilterSpec::CrankNicolson => 1.0 / (1.0 + 0.25 * z),
        FilterSpec::Lfc { p, eta } => {
            let sc = lfc_scalars(*p, *eta);
            2.0 / (sc.alpha * sc.t_p) * lfc_divided_difference(&sc, z / sc.alpha)
        }
    }
}

/// `theta(z) = 1/psi(z) - z/4`; errors where `psi(z) <= 0`.
pub fn theta_fn(spec: &FilterSpec, z: f64) -> Result<f64, FilterError> {
    let ps = psi(spec, z);
    if ps <= 0.0 {
        return Err(FilterError::PsiNonPositive { z, value: ps });
    }
    Ok(1.0 / ps - 0.25 * z)
}

/// `phi(z) = (theta(z) - 1) / z`, continued to `theta'(0)` at `z = 0`.
pub fn phi_fn(spec: &FilterSpec, z: f64) -> Result<f64, FilterError> {
    if z == 0.0 {
        return Ok(match spec {
            FilterSpec::Leapfrog => -0.25,
            FilterSpec::CrankNicolson => 0.0,
            FilterSpec::Lfc { p, eta } => {
                let sc = lfc_scalars(*p, *eta);
                sc.t_p_second / (sc.alpha * sc.alpha * sc.t_p) - 0.25
            }
        });
    }
    Ok((theta_fn(spec, z)? - 1.0) / z)
}

/// Stability constants of a filter, verified on a 1000-point grid over the
/// admissible window (skipped for filters without a margin).
#[derive(Debug, Clone, Copy)]
pub struct FilterConstants {
    /// Lower bound of `theta` on `[0, beta^2]`.
    pub c_theta: f64,
    /// Squared CFL window; infinite for the Crank–Nicolson filter.
    pub beta_sq: f64,
    /// Bound of `|phi|` on `[0, beta^2]`; infinite when `c_theta = 0`.
    pub c_phi: f64,
    /// True when the filter carries no positive margin (`c_theta = 0`):
    /// undamped Chebyshev.  Such filters run but are not covered by the
    /// stability theory; the constants are not grid-verified.
    pub unstabilized: bool,
}

/// Computes and verifies the stability constants.  For the trivial filter
/// the window depends on the leapfrog CFL safety factor `0 < theta < 1`
/// (`theta = 1` leaves no margin and is rejected); the factor is ignored by
/// the other filters.
pub fn constants(spec: &FilterSpec, leapfrog_theta: f64) -> Result<FilterConstants, FilterError> {
    let consts = match spec {
        FilterSpec::Leapfrog => {
            if !(leapfrog_theta > 0.0 && leapfrog_theta < 1.0) {
                return Err(FilterError::InvalidParameter(format!(
                    "leapfrog safety factor must lie in (0, 1), got {leapfrog_theta}"
                )));
            }
            FilterConstants {
                c_theta: 1.0 - leapfrog_theta * leapfrog_theta,
                beta_sq: 4.0 * leapfrog_theta * leapfrog_theta,
                c_phi: 0.25,
                unstabilized: false,
            }
        }
        FilterSpec::CrankNicolson => FilterConstants {
            c_theta: 1.0,
            beta_sq: f64::INFINITY,
            c_phi: 0.0,
            unstabilized: false,
        },
        FilterSpec::Lfc { p, eta } => {
            if *p < 1 {
                return Err(FilterError::InvalidParameter("degree p must be >= 1".into()));
            }
            if !(*eta >= 0.0) || !eta.is_finite() {
                return Err(FilterError::InvalidParameter(format!(
                    "damping eta must be finite and >= 0, got {eta}"
                )));
            }
            let sc = lfc_scalars(*p, *eta);
            let c_theta = 0.5 * (1.0 - 1.0 / sc.t_p);
            FilterConstants {
                c_theta,
                beta_sq: sc.alpha * (sc.nu + 1.0),
                c_phi: if c_theta > 0.0 { 0.25 * (1.0 / c_theta - 1.0) } else { f64::INFINITY },
                unstabilized: c_theta == 0.0,
            }
        }
    };
    if !consts.unstabilized {
        let z_max = if consts.beta_sq.is_finite() { consts.beta_sq } else { 100.0 };
        for i in 0..1000 {
            let z = z_max * i as f64 / 999.0;
            let th = theta_fn(spec, z)?;
            if th < consts.c_theta - 1e-9 {
                return Err(FilterError::StabilityCheckFailed { z, what: "theta below c_theta" });
            }
            if phi_fn(spec, z)?.abs() > consts.c_phi + 1e-9 {
                return Err(FilterError::StabilityCheckFailed { z, what: "phi above c_phi" });
            }
        }
    }
    Ok(consts)
}

/// Settings for the conjugate-gradient solve behind the Crank–Nicolson
/// filter (relative residual in the eps-weighted norm).
#[derive(Debug, Clone, Copy)]
pub struct CgSettings {
    pub rel_tol: f64,
    pub max_iters: usize,
}

impl Default for CgSettings {
    fn default() -> CgSettings {
        CgSettings { rel_tol: 1e-10, max_iters: 500 }
    }
}

/// Reusable buffers for [`apply_psi`]: four u-block vectors and one v-block
/// vector.
pub struct PsiWorkspace {
    u1: Vec<f64>,
    u2: Vec<f64>,
    u3: Vec<f64>,
    u4: Vec<f64>,
    v1: Vec<f64>,
}

impl PsiWorkspace {
    pub fn new(space: &DgSpace) -> PsiWorkspace {
        PsiWorkspace {
            u1: vec![0.0; space.len(Block::U)],
            u2: vec![0.0; space.len(Block::U)],
            u3: vec![0.0; space.len(Block::U)],
            u4: vec![0.0; space.len(Block::U)],
            v1: vec![0.0; space.len(Block::V)],
        }
    }
}

/// Applies `psi(tau^2 S)` to a u-block vector.  Returns the number of
/// operator applications (CG iterations for the Crank–Nicolson filter,
/// `p - 1` for the Chebyshev one, 0 for the trivial one).
///
/// The Chebyshev path exploits locality: outside the operator's support the
/// result equals `w` exactly, and the recurrence only ever touches support
/// dofs, so the cost scales with the masked region, not the mesh.
pub fn apply_psi(
    spec: &FilterSpec,
    tau: f64,
    s_op: &MaskedSecondOrder,
    w: &[f64],
    out: &mut [f64],
    work: &mut PsiWorkspace,
    cg: &CgSettings,
) -> Result<usize, FilterError> {
    match spec {
        FilterSpec::Leapfrog => {
            out.copy_from_slice(w);
            Ok(0)
        }
        FilterSpec::CrankNicolson => cn_solve(tau, s_op, w, out, work, cg),
        FilterSpec::Lfc { p, eta } => {
            if *p == 1 || s_op.is_zero() {
                out.copy_from_slice(w);
                return Ok(0);
            }
            Ok(lfc_apply(*p, *eta, tau, s_op, w, out, work))
        }
    }
}

/// Solves `(I + (tau^2/4) S) out = w` by conjugate gradients in the
/// eps-weighted inner product, warm-started at `w`.
fn cn_solve(
    tau: f64,
    s_op: &MaskedSecondOrder,
    w: &[f64],
    out: &mut [f64],
    work: &mut PsiWorkspace,
    cg: &CgSettings,
) -> Result<usize, FilterError> {
    let space = s_op.space().clone();
    let c = 0.25 * tau * tau;
    let (r, p, sp, mp) = (&mut work.u1, &mut work.u2, &mut work.u3, &mut work.u4);
    // S writes only its support cells; zeroing once keeps the rest exact.
    sp.fill(0.0);
    out.copy_from_slice(w);
    s_op.apply(out, sp, &mut work.v1);
    for i in 0..w.len() {
        r[i] = -c * sp[i];
    }
    p.copy_from_slice(r);
    let target_sq = {
        let ww = space.dot_u(w, w);
        cg.rel_tol * cg.rel_tol * ww
    };
    let mut rr = space.dot_u(r, r);
    if rr <= target_sq {
        return Ok(0);
    }
    for iter in 1..=cg.max_iters {
        s_op.apply(p, sp, &mut work.v1);
        for i in 0..w.len() {
            mp[i] = p[i] + c * sp[i];
        }
        let alpha = rr / space.dot_u(p, mp);
        for i in 0..w.len() {
            out[i] += alpha * p[i];
            r[i] -= alpha * mp[i];
        }
        let rr_new = space.dot_u(r, r);
        if rr_new <= target_sq {
            return Ok(iter);
        }
        let beta = rr_new / rr;
        rr = rr_new;
        for i in 0..w.len() {
            p[i] = r[i] + beta * p[i];
        }
    }
    let ww = space.dot_u(w, w).max(1e-300);
    Err(FilterError::CgDidNotConverge {
        iters: cg.max_iters,
        rel_residual: (rr / ww).sqrt(),
    })
}

/// The divided-difference Chebyshev recurrence on the support dofs:
/// `s_1 = w`, `s_{j+1} = 2 nu s_j - (2/alpha) tau^2 S s_j - s_{j-1}
/// + 2 T_j(nu) w`, then `psi(tau^2 S) w = (2 / (alpha T_p(nu))) s_p`
/// inside the support and exactly `w` outside.
fn lfc_apply(
    p: u32,
    eta: f64,
    tau: f64,
    s_op: &MaskedSecondOrder,
    w: &[f64],
    out: &mut [f64],
    work: &mut PsiWorkspace,
) -> usize {
    let sc = lfc_scalars(p, eta);
    let space = s_op.space().clone();
    let per_cell = space.dofs_per_cell(Block::U);
    let support: Vec<usize> = match s_op.out_support() {
        Some(cells) => cells.to_vec(),
        None => (0..space.mesh().n_cells()).collect(),
    };
    {
        let (s_prev, s_cur) = (&mut work.u1, &mut work.u2);
        for &cell in &support {
            let lo = cell * per_cell;
            s_prev[lo..lo + per_cell].fill(0.0);
            s_cur[lo..lo + per_cell].copy_from_slice(&w[lo..lo + per_cell]);
        }
    }
    let c_s = -2.0 * tau * tau / sc.alpha;
    for j in 1..p {
        s_op.apply(&work.u2, &mut work.u3, &mut work.v1);
        let c_w = 2.0 * sc.t_js[j as usize];
        for &cell in &support {
            let lo = cell * per_cell;
            for i in lo..lo + per_cell {
                work.u4[i] =
                    2.0 * sc.nu * work.u2[i] + c_s * work.u3[i] - work.u1[i] + c_w * w[i];
            }
        }
        std::mem::swap(&mut work.u1, &mut work.u2);
        std::mem::swap(&mut work.u2, &mut work.u4);
    }
    out.copy_from_slice(w);
    let scale = 2.0 / (sc.alpha * sc.t_p);
    for &cell in &support {
        let lo = cell * per_cell;
        for i in lo..lo + per_cell {
            out[i] = scale * work.u2[i];
        }
    }
    (p - 1) as usize
}
