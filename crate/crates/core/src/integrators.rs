//! The filtered three-stage time integrator, CFL bookkeeping, and runs.
//!
//! One step of size `tau` from `(u, v)` at time `t`:
//!
//! ```text
//! v_half = v + (tau/2) (L1 u + g_v)
//! u_new  = u + tau * psi(tau^2 S_M) (L2 v_half + g_u)
//! v_new  = v_half + (tau/2) (L1 u_new + g_v)
//! ```
//!
//! where `S_M = -L2 chi_M L1` acts through the fine region plus one layer
//! and the sources are evaluated at the half step (endpoint average by
//! default).  `L1 u_new` is cached into the next step, so the trivial filter
//! costs exactly two operator applications per step.
//!
//! The scheme satisfies a two-term recursion in the pair of matrices
//! `R_minus`/`R_plus` (equal up to the sign of their off-diagonal blocks,
//! with `theta(tau^2 S_M) - (tau^2/4) S_LF` in the top-left corner); the
//! dense variants are exposed as a verification oracle.

use std::sync::Arc;
use std::time::{Duration, Instant};

use crate::dgspace::{Block, DgSpace, FieldPair};
use crate::filters::{
    self, apply_psi, CgSettings, FilterConstants, FilterError, FilterSpec, PsiWorkspace,
};
use crate::mesh::{cutoff_mask, MaskSelect, MeshPartition};
use crate::operators::{
    assemble_dense, spectral_norm, FriedrichsPair, MaskedSecondOrder, OperatorError,
};
use crate::problems::{l2_error, initial_state, ProblemCase};

use std::fmt;

/// Errors from scheme setup and runs.
#[derive(Debug)]
pub enum IntegrateError {
    Filter(FilterError),
    Operator(OperatorError),
    /// The requested step size exceeds the admissible bound (pass the
    /// override flag to run anyway, e.g. for stability scans).
    TauTooLarge { tau: f64, admissible: f64 },
    /// Problem and operator system kinds disagree, or a parameter is bad.
    Setup(String),
}

impl fmt::Display for IntegrateError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IntegrateError::Filter(e) => write!(f, "filter: {e}"),
            IntegrateError::Operator(e) => write!(f, "operator: {e}"),
            IntegrateError::TauTooLarge { tau, admissible } => {
                write!(f, "tau = {tau:.6e} exceeds the admissible {admissible:.6e}")
            }
            IntegrateError::Setup(msg) => write!(f, "setup: {msg}"),
        }
    }
}

impl std::error::Error for IntegrateError {}

impl From<FilterError> for IntegrateError {
    fn from(e: FilterError) -> IntegrateError {
        IntegrateError::Filter(e)
    }
}

impl From<OperatorError> for IntegrateError {
    fn from(e: OperatorError) -> IntegrateError {
        IntegrateError::Operator(e)
    }
}

/// CFL safety factors: `theta` scales the plain leapfrog bound, `theta_c`
/// the coarse-region bound of the two-rate scheme.
#[derive(Debug, Clone, Copy)]
pub struct CflParams {
    pub theta: f64,
    pub theta_c: f64,
}

impl Default for CflParams {
    fn default() -> CflParams {
        CflParams { theta: 0.95, theta_c: 0.9 }
    }
}

impl CflParams {
    pub fn validate(&self) -> Result<(), IntegrateError> {
        for (name, v) in [("theta", self.theta), ("theta_c", self.theta_c)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(IntegrateError::Setup(format!(
                    "{name} must lie in (0, 1], got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Spectral norms of the masked second-order operators (with a 1% safety
/// margin on top of the power-iteration estimates).
#[derive(Debug, Clone, Copy)]
pub struct OperatorNorms {
    pub s_m: f64,
    pub s_lf: f64,
    pub s_all: f64,
}

/// Power-iteration estimates for all three operators.
pub fn estimate_norms(pair: &Arc<FriedrichsPair>, partition: &MeshPartition) -> OperatorNorms {
    let space = pair.space().clone();
    let mask_m = cutoff_mask(partition, MaskSelect::M);
    let mask_lf = cutoff_mask(partition, MaskSelect::Lf);
    let mut scratch = vec![0.0; space.len(Block::V)];
    let mut buf = vec![0.0; space.len(Block::U)];
    let mut norm_of = |op: &MaskedSecondOrder, seed: u64| {
        if op.is_zero() {
            return 0.0;
        }
        buf.fill(0.0);
        1.01 * spectral_norm(&space, seed, |x, y| {
            op.apply(x, &mut buf, &mut scratch);
            y.copy_from_slice(&buf);
        })
    };
    let s_m = norm_of(&MaskedSecondOrder::new_masked(pair.clone(), &mask_m), 12021);
    let s_lf = norm_of(&MaskedSecondOrder::new_masked(pair.clone(), &mask_lf), 12022);
    let s_all = norm_of(&MaskedSecondOrder::new_all(pair.clone()), 12023);
    OperatorNorms { s_m, s_lf, s_all }
}

/// The step-size bounds derived from filter constants and operator norms.
#[derive(Debug, Clone, Copy)]
pub struct CflValues {
    /// Filter window: `sqrt(beta^2 / ||S_M||)`.
    pub tau_psi: f64,
    /// Coarse-region bound: `2 theta_c sqrt(c_theta) / sqrt(||S_LF||)`.
    pub tau_lf_coarse: f64,
    /// Plain leapfrog on everything: `2 theta / sqrt(||S_ALL||)`.
    pub tau_leapfrog: f64,
    /// The unscaled coarse-only leapfrog bound `2 / sqrt(||S_LF||)`: no
    /// admissible two-rate step can exceed it, whatever the filter.
    pub coarse_leapfrog_raw: f64,
    /// What the scheme accepts: `min(tau_psi, tau_lf_coarse)` on a
    /// partitioned mesh, `tau_leapfrog` when the masked region is empty
    /// (the scheme degenerates to plain leapfrog).
    pub admissible: f64,
}

pub fn cfl_values(
    consts: &FilterConstants,
    norms: &OperatorNorms,
    params: &CflParams,
    m_empty: bool,
) -> CflValues {
    let div = |num: f64, den: f64| if den > 0.0 { num / den.sqrt() } else { f64::INFINITY };
    let tau_psi = if consts.beta_sq.is_finite() {
        div(consts.beta_sq.sqrt(), norms.s_m)
    } else {
        f64::INFINITY
    };
    let tau_lf_coarse = div(2.0 * params.theta_c * consts.c_theta.sqrt(), norms.s_lf);
    let tau_leapfrog = div(2.0 * params.theta, norms.s_all);
    let coarse_leapfrog_raw = div(2.0, norms.s_lf);
    let admissible = if m_empty { tau_leapfrog } else { tau_psi.min(tau_lf_coarse) };
    CflValues { tau_psi, tau_lf_coarse, tau_leapfrog, coarse_leapfrog_raw, admissible }
}

/// How the half-step source values are formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SourceQuadrature {
    /// Average of the endpoint values (reuses the previous projection, one
    /// new projection per step).
    EndpointAverage,
    /// Value at the midpoint time.
    Midpoint,
}

/// Everything about a scheme that does not depend on the step size.
pub struct SchemeSetup {
    pub pair: Arc<FriedrichsPair>,
    pub problem: Arc<ProblemCase>,
    pub partition: MeshPartition,
    pub filter: FilterSpec,
    pub constants: FilterConstants,
    pub norms: OperatorNorms,
    pub cfl_params: CflParams,
    pub cfl: CflValues,
    pub s_m: Arc<MaskedSecondOrder>,
}

impl SchemeSetup {
    pub fn new(
        pair: Arc<FriedrichsPair>,
        problem: Arc<ProblemCase>,
        partition: MeshPartition,
        filter: FilterSpec,
        cfl_params: CflParams,
    ) -> Result<SchemeSetup, IntegrateError> {
        if problem.kind != pair.kind() {
            return Err(IntegrateError::Setup(format!(
                "problem '{}' does not run on the {:?} operators",
                problem.name,
                pair.kind()
            )));
        }
        if partition.n_cells() != pair.space().mesh().n_cells() {
            return Err(IntegrateError::Setup(
                "partition and mesh cell counts disagree".into(),
            ));
        }
        cfl_params.validate()?;
        let constants = filters::constants(&filter, cfl_params.theta)?;
        let norms = estimate_norms(&pair, &partition);
        let m_empty = partition.n_m() == 0;
        let cfl = cfl_values(&constants, &norms, &cfl_params, m_empty);
        let mask_m = cutoff_mask(&partition, MaskSelect::M);
        let s_m = Arc::new(MaskedSecondOrder::new_masked(pair.clone(), &mask_m));
        Ok(SchemeSetup {
            pair,
            problem,
            partition,
            filter,
            constants,
            norms,
            cfl_params,
            cfl,
            s_m,
        })
    }

    pub fn space(&self) -> &Arc<DgSpace> {
        self.pair.space()
    }
}

/// Per-run settings.
#[derive(Debug, Clone, Copy)]
pub struct RunSettings {
    pub tau: f64,
    pub t_end: f64,
    pub source_quad: SourceQuadrature,
    /// Accept any positive step size, admissible or not (stability scans).
    pub override_cfl: bool,
    pub cg: CgSettings,
    /// Measure the error every this many steps (0: only at the end).
    pub error_every: usize,
    /// Declare divergence when the state norm exceeds this multiple of the
    /// initial norm (or stops being finite).
    pub divergence_factor: f64,
}

impl RunSettings {
    pub fn new(tau: f64, t_end: f64) -> RunSettings {
        RunSettings {
            tau,
            t_end,
            source_quad: SourceQuadrature::EndpointAverage,
            override_cfl: false,
            cg: CgSettings::default(),
            error_every: 0,
            divergence_factor: 1e15,
        }
    }
}

/// Error value reported for a diverged run (keeps CSV columns numeric).
pub const DIVERGED_ERROR: f64 = 1e20;

/// Outcome of a run.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub tau: f64,
    pub steps: usize,
    /// Largest measured error (checkpoints plus the final time); the
    /// divergence sentinel when the run blew up.
    pub max_l2_error: f64,
    pub final_l2_error: f64,
    /// Step index at which divergence was detected, if any.
    pub diverged_at: Option<usize>,
    /// Time spent inside steps (error measurements excluded).
    pub wall_seconds: f64,
    /// Total operator applications by the filter (CG iterations or
    /// Chebyshev stages).
    pub filter_applications: usize,
    pub final_time: f64,
    pub final_state: FieldPair,
}

/// One live integration: state, cached operator values, and buffers.
pub struct Stepper<'a> {
    setup: &'a SchemeSetup,
    settings: RunSettings,
    pub state: FieldPair,
    step_index: usize,
    /// L1 of the current u (carried across steps).
    l1u: Vec<f64>,
    /// Sources at the current step time (endpoint-average mode).
    g_u_now: Vec<f64>,
    g_v_now: Vec<f64>,
    g_u_half: Vec<f64>,
    g_v_half: Vec<f64>,
    g_u_next: Vec<f64>,
    g_v_next: Vec<f64>,
    v_half: Vec<f64>,
    w: Vec<f64>,
    psi_w: Vec<f64>,
    work: PsiWorkspace,
    pub filter_applications: usize,
}

impl<'a> Stepper<'a> {
    pub fn new(setup: &'a SchemeSetup, settings: RunSettings) -> Result<Stepper<'a>, IntegrateError> {
        if !(settings.tau > 0.0) || !settings.tau.is_finite() {
            return Err(IntegrateError::Setup(format!("tau must be positive, got {}", settings.tau)));
        }
        if !settings.override_cfl && settings.tau > setup.cfl.admissible * (1.0 + 1e-12) {
            return Err(IntegrateError::TauTooLarge {
                tau: settings.tau,
                admissible: setup.cfl.admissible,
            });
        }
        let space = setup.space();
        let state = initial_state(space, &setup.problem);
        let mut stepper = Stepper {
            setup,
            settings,
            state,
            step_index: 0,
            l1u: vec![0.0; space.len(Block::V)],
            g_u_now: vec![0.0; space.len(Block::U)],
            g_v_now: vec![0.0; space.len(Block::V)],
            g_u_half: vec![0.0; space.len(Block::U)],
            g_v_half: vec![0.0; space.len(Block::V)],
            g_u_next: vec![0.0; space.len(Block::U)],
            g_v_next: vec![0.0; space.len(Block::V)],
            v_half: vec![0.0; space.len(Block::V)],
            w: vec![0.0; space.len(Block::U)],
            psi_w: vec![0.0; space.len(Block::U)],
            work: PsiWorkspace::new(space),
            filter_applications: 0,
        };
        stepper.setup.pair.apply_l1(&stepper.state.u, &mut stepper.l1u);
        if stepper.settings.source_quad == SourceQuadrature::EndpointAverage {
            let t0 = stepper.setup.problem.t0;
            stepper.project_sources(t0, /* into_next: */ false);
        }
        Ok(stepper)
    }

    pub fn time(&self) -> f64 {
        self.setup.problem.t0 + self.step_index as f64 * self.settings.tau
    }

    pub fn steps_taken(&self) -> usize {
        self.step_index
    }

    fn project_sources(&mut self, t: f64, into_next: bool) {
        let space = self.setup.space();
        if let Some(gu) = self.setup.problem.source_u {
            let buf = if into_next { &mut self.g_u_next } else { &mut self.g_u_now };
            space.project(Block::U, &mut |p, out| gu(p, t, out), buf);
        }
        if let Some(gv) = self.setup.problem.source_v {
            let buf = if into_next { &mut self.g_v_next } else { &mut self.g_v_now };
            space.project(Block::V, &mut |p, out| gv(p, t, out), buf);
        }
    }

    /// Fills the half-step source buffers for the step `t -> t + tau`.
    fn prepare_half_sources(&mut self) {
        let problem = &self.setup.problem;
        let (has_u, has_v) = (problem.source_u.is_some(), problem.source_v.is_some());
        if !has_u && !has_v {
            return;
        }
        let t = self.time();
        match self.settings.source_quad {
            SourceQuadrature::Midpoint => {
                self.project_sources(t + 0.5 * self.settings.tau, false);
                if has_u {
                    self.g_u_half.copy_from_slice(&self.g_u_now);
                }
                if has_v {
                    self.g_v_half.copy_from_slice(&self.g_v_now);
                }
            }
            SourceQuadrature::EndpointAverage => {
                self.project_sources(t + self.settings.tau, true);
                if has_u {
                    for i in 0..self.g_u_half.len() {
                        self.g_u_half[i] = 0.5 * (self.g_u_now[i] + self.g_u_next[i]);
                    }
                    std::mem::swap(&mut self.g_u_now, &mut self.g_u_next);
                }
                if has_v {
                    for i in 0..self.g_v_half.len() {
                        self.g_v_half[i] = 0.5 * (self.g_v_now[i] + self.g_v_next[i]);
                    }
                    std::mem::swap(&mut self.g_v_now, &mut self.g_v_next);
                }
            }
        }
    }

    /// Advances the state by one step.
    pub fn step(&mut self) -> Result<(), FilterError> {
        let setup = self.setup;
        let tau = self.settings.tau;
        let half = 0.5 * tau;
        let has_gu = setup.problem.source_u.is_some();
        let has_gv = setup.problem.source_v.is_some();
        self.prepare_half_sources();

        // v_half = v + (tau/2)(L1 u + g_v)
        if has_gv {
            for i in 0..self.v_half.len() {
                self.v_half[i] = self.state.v[i] + half * (self.l1u[i] + self.g_v_half[i]);
            }
        } else {
            for i in 0..self.v_half.len() {
                self.v_half[i] = self.state.v[i] + half * self.l1u[i];
            }
        }

        // u += tau * psi(tau^2 S_M)(L2 v_half + g_u)
        setup.pair.apply_l2(&self.v_half, &mut self.w);
        if has_gu {
            for i in 0..self.w.len() {
                self.w[i] += self.g_u_half[i];
            }
        }
        self.filter_applications += apply_psi(
            &setup.filter,
            tau,
            &setup.s_m,
            &self.w,
            &mut self.psi_w,
            &mut self.work,
            &self.settings.cg,
        )?;
        for i in 0..self.state.u.len() {
            self.state.u[i] += tau * self.psi_w[i];
        }

        // v = v_half + (tau/2)(L1 u_new + g_v); the fresh L1 u carries over.
        setup.pair.apply_l1(&self.state.u, &mut self.l1u);
        if has_gv {
            for i in 0..self.state.v.len() {
                self.state.v[i] = self.v_half[i] + half * (self.l1u[i] + self.g_v_half[i]);
            }
        } else {
            for i in 0..self.state.v.len() {
                self.state.v[i] = self.v_half[i] + half * self.l1u[i];
            }
        }
        self.step_index += 1;
        Ok(())
    }
}

/// Integrates from the problem's start time to `t_end` and reports errors,
/// timing, and divergence.  Error measurements are excluded from the wall
/// time; divergence is checked every step against the initial state norm.
pub fn run(setup: &SchemeSetup, settings: &RunSettings) -> Result<RunSummary, IntegrateError> {
    let space = setup.space();
    let t0 = setup.problem.t0;
    if !(settings.t_end > t0) {
        return Err(IntegrateError::Setup(format!(
            "t_end = {} must exceed the start time {t0}",
            settings.t_end
        )));
    }
    let steps = ((settings.t_end - t0) / settings.tau + 1e-9).floor().max(1.0) as usize;
    let mut stepper = Stepper::new(setup, *settings)?;
    let init_norm = space.norm_pair(&stepper.state).max(1e-30);
    let limit = settings.divergence_factor * init_norm;
    let mut wall = Duration::ZERO;
    let mut max_err = 0.0f64;
    let mut diverged_at = None;
    for n in 0..steps {
        let tic = Instant::now();
        stepper.step()?;
        wall += tic.elapsed();
        let norm = space.norm_pair(&stepper.state);
        if !norm.is_finite() || norm > limit {
            diverged_at = Some(n + 1);
            break;
        }
        if settings.error_every > 0 && (n + 1) % settings.error_every == 0 && n + 1 < steps {
            let err = l2_error(space, &setup.problem, &stepper.state, stepper.time());
            max_err = max_err.max(err.total);
        }
    }
    let (final_err, max_err) = if diverged_at.is_some() {
        (DIVERGED_ERROR, DIVERGED_ERROR)
    } else {
        let err = l2_error(space, &setup.problem, &stepper.state, stepper.time()).total;
        (err, max_err.max(err))
    };
    Ok(RunSummary {
        tau: settings.tau,
        steps: stepper.steps_taken(),
        max_l2_error: max_err,
        final_l2_error: final_err,
        diverged_at,
        wall_seconds: wall.as_secs_f64(),
        filter_applications: stepper.filter_applications,
        final_time: stepper.time(),
        final_state: stepper.state,
    })
}

/// Dense pair of one-step recursion matrices: the scheme satisfies
/// `R_minus x_new = R_plus x_old + tau * (g_u_half, g_v_half)` with
/// `x = (u, v)`.  Test oracle; sizes are guarded by the dense assembler.
pub fn one_step_recursion_matrices(
    setup: &SchemeSetup,
    tau: f64,
) -> Result<(nalgebra::DMatrix<f64>, nalgebra::DMatrix<f64>), IntegrateError> {
    let space = setup.space();
    let (nu, nv) = (space.len(Block::U), space.len(Block::V));
    let (l1, l2) = assemble_dense(&setup.pair);
    let mask_m = cutoff_mask(&setup.partition, MaskSelect::M);
    let mask_lf = cutoff_mask(&setup.partition, MaskSelect::Lf);
    let chi = |mask: &crate::mesh::CellMask| {
        nalgebra::DMatrix::from_fn(nv, nv, |i, j| {
            if i == j && mask.keeps(i / space.dofs_per_cell(Block::V)) {
                1.0
            } else {
                0.0
            }
        })
    };
    let s_m = -(&l2 * chi(&mask_m) * &l1);
    let s_lf = -(&l2 * chi(&mask_lf) * &l1);
    // theta(tau^2 S_M) through the eps-symmetrized eigendecomposition.
    let mesh = space.mesh();
    let per_u = space.dofs_per_cell(Block::U);
    let d_sqrt: Vec<f64> = (0..nu).map(|i| mesh.eps(i / per_u).sqrt()).collect();
    let sym = nalgebra::DMatrix::from_fn(nu, nu, |i, j| d_sqrt[i] * s_m[(i, j)] / d_sqrt[j]);
    let sym = (&sym + &sym.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let mut theta_diag = nalgebra::DMatrix::zeros(nu, nu);
    for i in 0..nu {
        let z = tau * tau * eig.eigenvalues[i].max(0.0);
        theta_diag[(i, i)] = filters::theta_fn(&setup.filter, z)?;
    }
    let theta_sym = &eig.eigenvectors * theta_diag * eig.eigenvectors.transpose();
    let theta_m =
        nalgebra::DMatrix::from_fn(nu, nu, |i, j| theta_sym[(i, j)] * d_sqrt[j] / d_sqrt[i]);
    let g = &theta_m - (tau * tau / 4.0) * &s_lf;
    let n = nu + nv;
    let mut r_minus = nalgebra::DMatrix::zeros(n, n);
    let mut r_plus = nalgebra::DMatrix::zeros(n, n);
    for i in 0..nu {
        for j in 0..nu {
            r_minus[(i, j)] = g[(i, j)];
            r_plus[(i, j)] = g[(i, j)];
        }
    }
    for i in 0..nv {
        r_minus[(nu + i, nu + i)] = 1.0;
        r_plus[(nu + i, nu + i)] = 1.0;
    }
    for i in 0..nu {
        for j in 0..nv {
            r_minus[(i, nu + j)] = -0.5 * tau * l2[(i, j)];
            r_plus[(i, nu + j)] = 0.5 * tau * l2[(i, j)];
        }
    }
    for i in 0..nv {
        for j in 0..nu {
            r_minus[(nu + i, j)] = -0.5 * tau * l1[(i, j)];
            r_plus[(nu + i, j)] = 0.5 * tau * l1[(i, j)];
        }
    }
    Ok((r_minus, r_plus))
}
