//! Benchmark problems with closed-form solutions.
//!
//! Each case bundles the system kind, exact fields, and (when the exact
//! solution does not solve the homogeneous system) source terms, so runs can
//! start from the projected exact state and measure errors at any time.

use std::f64::consts::PI;

use crate::dgspace::{Block, DgSpace, FieldPair};
use crate::operators::SystemKind;

/// A pointwise multi-component function of space and time.
pub type FieldFn = fn([f64; 2], f64, &mut [f64]);

/// A benchmark case: exact solution plus optional sources.
#[derive(Clone)]
pub struct ProblemCase {
    pub kind: SystemKind,
    pub name: &'static str,
    pub exact_u: FieldFn,
    pub exact_v: FieldFn,
    pub source_u: Option<FieldFn>,
    pub source_v: Option<FieldFn>,
    pub t0: f64,
}

/// Standing wave on (0, 1) with a homogeneous Dirichlet condition on u:
/// u = sin(2 pi x) cos(2 pi t), v = -cos(2 pi x) sin(2 pi t); solves
/// d/dt u = -dx v, d/dt v = -dx u with no sources.
pub fn wave_standing() -> ProblemCase {
    fn u(p: [f64; 2], t: f64, out: &mut [f64]) {
        out[0] = (2.0 * PI * p[0]).sin() * (2.0 * PI * t).cos();
    }
    fn v(p: [f64; 2], t: f64, out: &mut [f64]) {
        out[0] = -(2.0 * PI * p[0]).cos() * (2.0 * PI * t).sin();
    }
    ProblemCase {
        kind: SystemKind::Wave1d,
        name: "wave-standing",
        exact_u: u,
        exact_v: v,
        source_u: None,
        source_v: None,
        t0: 0.0,
    }
}

/// Driven cavity mode on the unit square with exponential growth in time
/// (eps = mu = 1, PEC walls):
///
/// ```text
/// Ex =  cos(2 pi x) sin(2 pi y) e^t
/// Ey = -sin(2 pi x) cos(2 pi y) e^t
/// Hz = 4 pi cos(2 pi x) cos(2 pi y) e^t
/// ```
///
/// The magnetic equation is source-free; the electric one needs the current
/// g = (1 + 8 pi^2) (cos sin, -sin cos) e^t.
pub fn te_cavity() -> ProblemCase {
    fn e_field(p: [f64; 2], t: f64, out: &mut [f64]) {
        let (x, y) = (2.0 * PI * p[0], 2.0 * PI * p[1]);
        let g = t.exp();
        out[0] = x.cos() * y.sin() * g;
        out[1] = -x.sin() * y.cos() * g;
    }
    fn h_field(p: [f64; 2], t: f64, out: &mut [f64]) {
        let (x, y) = (2.0 * PI * p[0], 2.0 * PI * p[1]);
        out[0] = 4.0 * PI * x.cos() * y.cos() * t.exp();
    }
    fn current(p: [f64; 2], t: f64, out: &mut [f64]) {
        let (x, y) = (2.0 * PI * p[0], 2.0 * PI * p[1]);
        let c = (1.0 + 8.0 * PI * PI) * t.exp();
        out[0] = c * x.cos() * y.sin();
        out[1] = -c * x.sin() * y.cos();
    }
    ProblemCase {
        kind: SystemKind::MaxwellTe,
        name: "te-cavity",
        exact_u: e_field,
        exact_v: h_field,
        source_u: Some(current),
        source_v: None,
        t0: 0.0,
    }
}

/// Projects the exact solution at the case's start time.
pub fn initial_state(space: &DgSpace, problem: &ProblemCase) -> FieldPair {
    let mut state = FieldPair::zeros(space);
    let t0 = problem.t0;
    let eu = problem.exact_u;
    let ev = problem.exact_v;
    space.project(Block::U, &mut |p, out| eu(p, t0, out), &mut state.u);
    space.project(Block::V, &mut |p, out| ev(p, t0, out), &mut state.v);
    state
}

/// Material-weighted L2 errors of a discrete state against the exact
/// solution at time `t`.
#[derive(Debug, Clone, Copy)]
pub struct ErrorNorms {
    pub u: f64,
    pub v: f64,
    pub total: f64,
}

pub fn l2_error(space: &DgSpace, problem: &ProblemCase, state: &FieldPair, t: f64) -> ErrorNorms {
    let eu = problem.exact_u;
    let ev = problem.exact_v;
    let sq_u = space.weighted_sq_error(Block::U, &state.u, &mut |p, out| eu(p, t, out));
    let sq_v = space.weighted_sq_error(Block::V, &state.v, &mut |p, out| ev(p, t, out));
    ErrorNorms { u: sq_u.sqrt(), v: sq_v.sqrt(), total: (sq_u + sq_v).sqrt() }
}
