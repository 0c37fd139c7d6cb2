//! Discrete first-order operator pairs and the masked second-order operator.
//!
//! Both supported systems have the shape d/dt u = L2 v, d/dt v = L1 u where
//! L1 and L2 are central-flux dG discretizations of first-order differential
//! operators, adjoint up to sign in the material-weighted inner products:
//! `<L1 u, w>_mu = -<u, L2 w>_eps`.  Each operator is a sum of "axis pieces"
//! `sign * d/d(axis)` mapping one input component to one output component;
//! boundary conditions enter through mirror ghosts that either negate the
//! traced component (homogeneous Dirichlet / PEC tangential field) or copy
//! it (no condition, so the boundary face term vanishes).
//!
//! Applications are gather-style: each output cell reads its own and its
//! face neighbors' coefficients, which makes cell-restricted application
//! (`*_cells`) exact and cheap — the basis of the locality-aware filter.

use std::sync::Arc;

use crate::dgspace::{Block, DgSpace};
use crate::mesh::CellMask;

use std::fmt;

/// Errors from operator construction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OperatorError {
    /// The system needs a mesh of this dimension.
    DimensionMismatch { system: &'static str, needs: usize, got: usize },
    /// The system needs these component counts.
    ComponentMismatch { system: &'static str, needs_u: usize, needs_v: usize },
}

impl fmt::Display for OperatorError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OperatorError::DimensionMismatch { system, needs, got } => {
                write!(f, "{system} needs a {needs}D mesh, got {got}D")
            }
            OperatorError::ComponentMismatch { system, needs_u, needs_v } => {
                write!(f, "{system} needs {needs_u} u-components and {needs_v} v-components")
            }
        }
    }
}

impl std::error::Error for OperatorError {}

/// The continuous systems with discrete operators implemented here.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SystemKind {
    /// 1D wave system d/dt u = -dx v, d/dt v = -dx u with u = 0 at the ends.
    Wave1d,
    /// Transverse-electric Maxwell on a 2D cavity: u = (Ex, Ey), v = Hz,
    /// eps d/dt E = curl Hz, mu d/dt Hz = dy Ex - dx Ey, PEC walls.
    MaxwellTe,
}

impl SystemKind {
    /// Component counts (u-field, v-field).
    pub fn components(self) -> (usize, usize) {
        match self {
            SystemKind::Wave1d => (1, 1),
            SystemKind::MaxwellTe => (2, 1),
        }
    }

    pub fn dim(self) -> usize {
        match self {
            SystemKind::Wave1d => 1,
            SystemKind::MaxwellTe => 2,
        }
    }
}

/// One `sign * d/d(axis)` term mapping input component `comp_in` to output
/// component `comp_out`.
#[derive(Debug, Clone, Copy)]
struct AxisPiece {
    axis: usize,
    sign: f64,
    comp_in: usize,
    comp_out: usize,
    /// Boundary ghost negates the traced component (true for fields pinned
    /// by the boundary condition) or copies it (face term vanishes).
    boundary_negates: bool,
}

/// The discrete operator pair (L1, L2) of one system on one space.
pub struct FriedrichsPair {
    space: Arc<DgSpace>,
    kind: SystemKind,
    l1: Vec<AxisPiece>,
    l2: Vec<AxisPiece>,
}

impl FriedrichsPair {
    pub fn new(kind: SystemKind, space: Arc<DgSpace>) -> Result<FriedrichsPair, OperatorError> {
        let dim = space.mesh().dim();
        let (m_u, m_v) = (space.components(Block::U), space.components(Block::V));
        let (l1, l2) = match kind {
            SystemKind::Wave1d => {
                if dim != 1 {
                    return Err(OperatorError::DimensionMismatch {
                        system: "wave1d",
                        needs: 1,
                        got: dim,
                    });
                }
                if (m_u, m_v) != (1, 1) {
                    return Err(OperatorError::ComponentMismatch {
                        system: "wave1d",
                        needs_u: 1,
                        needs_v: 1,
                    });
                }
                (
                    vec![AxisPiece {
                        axis: 0,
                        sign: -1.0,
                        comp_in: 0,
                        comp_out: 0,
                        boundary_negates: true,
                    }],
                    vec![AxisPiece {
                        axis: 0,
                        sign: -1.0,
                        comp_in: 0,
                        comp_out: 0,
                        boundary_negates: false,
                    }],
                )
            }
            SystemKind::MaxwellTe => {
                if dim != 2 {
                    return Err(OperatorError::DimensionMismatch {
                        system: "maxwell-te",
                        needs: 2,
                        got: dim,
                    });
                }
                if (m_u, m_v) != (2, 1) {
                    return Err(OperatorError::ComponentMismatch {
                        system: "maxwell-te",
                        needs_u: 2,
                        needs_v: 1,
                    });
                }
                (
                    // Hz <- dy Ex - dx Ey; PEC negates tangential E at walls.
                    vec![
                        AxisPiece {
                            axis: 1,
                            sign: 1.0,
                            comp_in: 0,
                            comp_out: 0,
                            boundary_negates: true,
                        },
                        AxisPiece {
                            axis: 0,
                            sign: -1.0,
                            comp_in: 1,
                            comp_out: 0,
                            boundary_negates: true,
                        },
                    ],
                    // (Ex, Ey) <- (dy Hz, -dx Hz); Hz carries no condition.
                    vec![
                        AxisPiece {
                            axis: 1,
                            sign: 1.0,
                            comp_in: 0,
                            comp_out: 0,
                            boundary_negates: false,
                        },
                        AxisPiece {
                            axis: 0,
                            sign: -1.0,
                            comp_in: 0,
                            comp_out: 1,
                            boundary_negates: false,
                        },
                    ],
                )
            }
        };
        Ok(FriedrichsPair { space, kind, l1, l2 })
    }

    pub fn space(&self) -> &Arc<DgSpace> {
        &self.space
    }

    pub fn kind(&self) -> SystemKind {
        self.kind
    }

    /// L1: u-block -> v-block, full application (overwrites `out`).
    pub fn apply_l1(&self, u: &[f64], out: &mut [f64]) {
        let cells: Vec<usize> = (0..self.space.mesh().n_cells()).collect();
        self.apply_l1_cells(u, out, &cells);
    }

    /// L2: v-block -> u-block, full application (overwrites `out`).
    pub fn apply_l2(&self, v: &[f64], out: &mut [f64]) {
        let cells: Vec<usize> = (0..self.space.mesh().n_cells()).collect();
        self.apply_l2_cells(v, out, &cells);
    }

    /// L1 restricted to the listed output cells; only their dofs in `out`
    /// are written (overwritten), everything else is untouched.
    pub fn apply_l1_cells(&self, u: &[f64], out: &mut [f64], cells: &[usize]) {
        debug_assert_eq!(u.len(), self.space.len(Block::U));
        debug_assert_eq!(out.len(), self.space.len(Block::V));
        apply_pieces(&self.space, &self.l1, Block::U, Block::V, u, out, cells);
    }

    /// L2 restricted to the listed output cells (same contract as
    /// [`apply_l1_cells`](Self::apply_l1_cells)).
    pub fn apply_l2_cells(&self, v: &[f64], out: &mut [f64], cells: &[usize]) {
        debug_assert_eq!(v.len(), self.space.len(Block::V));
        debug_assert_eq!(out.len(), self.space.len(Block::U));
        apply_pieces(&self.space, &self.l2, Block::V, Block::U, v, out, cells);
    }
}

/// Trace of one transverse mode of `coeffs` on cell `cell`, side `upper`,
/// along `axis` (includes the per-axis physical scale).
#[inline]
fn side_trace(
    space: &DgSpace,
    coeffs: &[f64],
    block: Block,
    cell: usize,
    comp: usize,
    axis: usize,
    t_mode: usize,
    upper: bool,
) -> f64 {
    let (mx, my) = space.modes_per_axis();
    let (n_ax, stride_ax, stride_tr) = if axis == 0 { (mx, 1, mx) } else { (my, mx, 1) };
    let h = space.mesh().widths(cell)[axis];
    let scale = (2.0 / h).sqrt();
    let mut s = 0.0;
    for j in 0..n_ax {
        s += space.trace(j, upper) * coeffs[space.idx(block, cell, comp, t_mode * stride_tr + j * stride_ax)];
    }
    scale * s
}

fn apply_pieces(
    space: &DgSpace,
    pieces: &[AxisPiece],
    block_in: Block,
    block_out: Block,
    input: &[f64],
    out: &mut [f64],
    cells: &[usize],
) {
    let mesh = space.mesh();
    let (mx, my) = space.modes_per_axis();
    let per_cell = space.dofs_per_cell(block_out);
    for &k_cell in cells {
        out[k_cell * per_cell..(k_cell + 1) * per_cell].fill(0.0);
        for piece in pieces {
            let axis = piece.axis;
            let (n_ax, stride_ax, n_tr, stride_tr) =
                if axis == 0 { (mx, 1, my, mx) } else { (my, mx, mx, 1) };
            let h = mesh.widths(k_cell)[axis];
            let vol_scale = piece.sign * 2.0 / h;
            let face_scale = (2.0 / h).sqrt();
            for t in 0..n_tr {
                // Volume: sign * (2/h) * Dref acting along the axis.
                for a in 0..n_ax {
                    let mut acc = 0.0;
                    for j in 0..n_ax {
                        let d = space.dref(a, j);
                        if d != 0.0 {
                            acc += d
                                * input[space.idx(
                                    block_in,
                                    k_cell,
                                    piece.comp_in,
                                    t * stride_tr + j * stride_ax,
                                )];
                        }
                    }
                    out[space.idx(block_out, k_cell, piece.comp_out, t * stride_tr + a * stride_ax)] +=
                        vol_scale * acc;
                }
                // Upper face (outward normal +1 along axis).
                let own_hi =
                    side_trace(space, input, block_in, k_cell, piece.comp_in, axis, t, true);
                let jump_hi = match mesh.neighbor(k_cell, 2 * axis + 1) {
                    Some(nbr) => {
                        0.5 * (side_trace(space, input, block_in, nbr, piece.comp_in, axis, t, false)
                            - own_hi)
                    }
                    None if piece.boundary_negates => -own_hi,
                    None => 0.0,
                };
                // Lower face (outward normal -1 along axis).
                let own_lo =
                    side_trace(space, input, block_in, k_cell, piece.comp_in, axis, t, false);
                let jump_lo = match mesh.neighbor(k_cell, 2 * axis) {
                    Some(nbr) => {
                        0.5 * (side_trace(space, input, block_in, nbr, piece.comp_in, axis, t, true)
                            - own_lo)
                    }
                    None if piece.boundary_negates => -own_lo,
                    None => 0.0,
                };
                if jump_hi != 0.0 || jump_lo != 0.0 {
                    for a in 0..n_ax {
                        out[space.idx(
                            block_out,
                            k_cell,
                            piece.comp_out,
                            t * stride_tr + a * stride_ax,
                        )] += piece.sign
                            * face_scale
                            * (jump_hi * space.trace(a, true) - jump_lo * space.trace(a, false));
                    }
                }
            }
        }
        // Material-weighted mass inverse: mu for the v-block output of L1,
        // eps for the u-block output of L2.
        let w = match block_out {
            Block::U => mesh.eps(k_cell),
            Block::V => mesh.mu(k_cell),
        };
        if w != 1.0 {
            let inv = 1.0 / w;
            for x in &mut out[k_cell * per_cell..(k_cell + 1) * per_cell] {
                *x *= inv;
            }
        }
    }
}

/// The positive semidefinite second-order operator `S = -L2 chi L1` with an
/// optional per-cell cutoff `chi` between the two factors.  Applications are
/// restricted to the cells that can carry a nonzero result, so the cost
/// scales with the cutoff's support, not the mesh.
pub struct MaskedSecondOrder {
    pair: Arc<FriedrichsPair>,
    /// Cells kept by the cutoff (L1 results are needed only there).
    mid_cells: Vec<usize>,
    /// Cells where the output can be nonzero: mid plus one face layer.
    out_cells: Vec<usize>,
    /// Scratch cells the L2 pass reads but L1 does not write (a second
    /// layer); they are zeroed on every application so a dirty scratch
    /// buffer cannot leak into the result.
    zero_cells: Vec<usize>,
    /// None means no cutoff: both lists cover the whole mesh.
    restricted: bool,
}

impl MaskedSecondOrder {
    /// S = -L2 L1 on the whole mesh.
    pub fn new_all(pair: Arc<FriedrichsPair>) -> MaskedSecondOrder {
        let n = pair.space().mesh().n_cells();
        let all: Vec<usize> = (0..n).collect();
        MaskedSecondOrder {
            pair,
            mid_cells: all.clone(),
            out_cells: all,
            zero_cells: Vec::new(),
            restricted: false,
        }
    }

    /// S = -L2 chi L1 for the cutoff keeping exactly `mask`'s cells.
    pub fn new_masked(pair: Arc<FriedrichsPair>, mask: &CellMask) -> MaskedSecondOrder {
        let mesh = pair.space().mesh().clone();
        let mut flags = vec![false; mesh.n_cells()];
        for c in mask.kept_cells() {
            flags[c] = true;
        }
        let out_flags = crate::mesh::expand_one_layer(&mesh, &flags);
        let read_flags = crate::mesh::expand_one_layer(&mesh, &out_flags);
        let mid_cells = mask.kept_cells();
        let out_cells: Vec<usize> = (0..mesh.n_cells()).filter(|&c| out_flags[c]).collect();
        let zero_cells: Vec<usize> =
            (0..mesh.n_cells()).filter(|&c| read_flags[c] && !flags[c]).collect();
        MaskedSecondOrder { pair, mid_cells, out_cells, zero_cells, restricted: true }
    }

    pub fn space(&self) -> &Arc<DgSpace> {
        self.pair.space()
    }

    /// Cells whose output dofs [`apply`](Self::apply) writes; the rest of
    /// `out` is never touched.  `None` means the operator is unrestricted.
    pub fn out_support(&self) -> Option<&[usize]> {
        if self.restricted {
            Some(&self.out_cells)
        } else {
            None
        }
    }

    /// Whether the zero operator (empty cutoff support).
    pub fn is_zero(&self) -> bool {
        self.restricted && self.mid_cells.is_empty()
    }

    /// `out = S x` on the support cells; `scratch` must have the v-block
    /// length.  Output dofs outside the support are left untouched, so
    /// callers reusing `out` must zero them once up front.
    pub fn apply(&self, x: &[f64], out: &mut [f64], scratch: &mut [f64]) {
        let per_v = self.space().dofs_per_cell(Block::V);
        for &c in &self.zero_cells {
            scratch[c * per_v..(c + 1) * per_v].fill(0.0);
        }
        self.pair.apply_l1_cells(x, scratch, &self.mid_cells);
        self.pair.apply_l2_cells(scratch, out, &self.out_cells);
        let per_cell = self.space().dofs_per_cell(Block::U);
        for &c in &self.out_cells {
            for v in &mut out[c * per_cell..(c + 1) * per_cell] {
                *v = -*v;
            }
        }
    }
}

/// Estimates the largest eigenvalue (= operator norm) of a positive
/// semidefinite operator on the u-block, self-adjoint in the eps-weighted
/// inner product, by power iteration with a fixed-seed random start.
/// Relative tolerance 1e-6 on the Rayleigh quotient, at most 10000 sweeps.
pub fn spectral_norm(
    space: &DgSpace,
    seed: u64,
    mut apply: impl FnMut(&[f64], &mut [f64]),
) -> f64 {
    use rand::Rng;
    use rand::SeedableRng;
    let n = space.len(Block::U);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let nx = space.dot_u(&x, &x).sqrt();
    for xi in &mut x {
        *xi /= nx;
    }
    let mut y = vec![0.0; n];
    let mut lambda = 0.0f64;
    for iter in 0..10000 {
        apply(&x, &mut y);
        let ray = space.dot_u(&x, &y);
        let ny = space.dot_u(&y, &y).sqrt();
        if ny < 1e-300 {
            return 0.0;
        }
        for (xi, yi) in x.iter_mut().zip(&y) {
            *xi = yi / ny;
        }
        if iter > 0 && (ray - lambda).abs() <= 1e-6 * ray.abs().max(1e-300) {
            return ray.max(0.0);
        }
        lambda = ray;
    }
    lambda.max(0.0)
}

/// Dense matrices of L1 and L2 (test and oracle use only; guarded against
/// accidentally huge spaces).
pub fn assemble_dense(pair: &FriedrichsPair) -> (nalgebra::DMatrix<f64>, nalgebra::DMatrix<f64>) {
    let space = pair.space();
    let (nu, nv) = (space.len(Block::U), space.len(Block::V));
    assert!(nu + nv <= 20_000, "dense assembly guard: {} dofs", nu + nv);
    let mut l1 = nalgebra::DMatrix::zeros(nv, nu);
    let mut l2 = nalgebra::DMatrix::zeros(nu, nv);
    let mut e = vec![0.0; nu];
    let mut col = vec![0.0; nv];
    for j in 0..nu {
        e[j] = 1.0;
        pair.apply_l1(&e, &mut col);
        for i in 0..nv {
            l1[(i, j)] = col[i];
        }
        e[j] = 0.0;
    }
    let mut e = vec![0.0; nv];
    let mut col = vec![0.0; nu];
    for j in 0..nv {
        e[j] = 1.0;
        pair.apply_l2(&e, &mut col);
        for i in 0..nu {
            l2[(i, j)] = col[i];
        }
        e[j] = 0.0;
    }
    (l1, l2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{classify, cutoff_mask, graded_boundaries, FineRule, MaskSelect, Mesh};
    use nalgebra::DMatrix;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn wave_space(k: usize) -> Arc<DgSpace> {
        let widths = [0.12, 0.08, 0.2, 0.1, 0.15, 0.05, 0.18, 0.12];
        let eps = vec![1.0, 2.0, 1.5, 1.0, 3.0, 1.0, 0.5, 1.0];
        let mu = vec![2.0, 1.0, 1.0, 0.5, 1.0, 1.5, 1.0, 1.0];
        let mesh = Arc::new(
            Mesh::interval((0.0, 1.0), &widths).unwrap().with_materials(eps, mu).unwrap(),
        );
        Arc::new(DgSpace::new(mesh, k, 1, 1))
    }

    fn te_space(k: usize) -> Arc<DgSpace> {
        let xb = graded_boundaries((0.0, 1.0), 3, Some((0.0, 0.4, 1)));
        let yb = graded_boundaries((0.0, 1.0), 3, None);
        let mut mesh = Mesh::tensor(((0.0, 1.0), (0.0, 1.0)), xb, yb).unwrap();
        let n = mesh.n_cells();
        let eps: Vec<f64> = (0..n).map(|c| 1.0 + 0.5 * ((c % 3) as f64)).collect();
        let mu: Vec<f64> = (0..n).map(|c| 1.0 + 0.25 * ((c % 2) as f64)).collect();
        mesh = mesh.with_materials(eps, mu).unwrap();
        Arc::new(DgSpace::new(Arc::new(mesh), k, 2, 1))
    }

    /// Weighted adjointness: diag(mu) L1 + L2^T diag(eps) = 0 exactly (up
    /// to roundoff), including the boundary ghosts.
    #[test]
    fn weighted_adjointness_dense() {
        for (pair, label) in [
            (FriedrichsPair::new(SystemKind::Wave1d, wave_space(2)).unwrap(), "wave"),
            (FriedrichsPair::new(SystemKind::MaxwellTe, te_space(1)).unwrap(), "te"),
        ] {
            let space = pair.space();
            let (l1, l2) = assemble_dense(&pair);
            let mesh = space.mesh();
            let dv = DMatrix::from_fn(space.len(Block::V), space.len(Block::V), |i, j| {
                if i == j {
                    mesh.mu(i / space.dofs_per_cell(Block::V))
                } else {
                    0.0
                }
            });
            let du = DMatrix::from_fn(space.len(Block::U), space.len(Block::U), |i, j| {
                if i == j {
                    mesh.eps(i / space.dofs_per_cell(Block::U))
                } else {
                    0.0
                }
            });
            let defect = &dv * &l1 + (&du * &l2).transpose();
            let max = defect.amax();
            assert!(max < 1e-12, "{label}: adjointness defect {max}");
        }
    }

    /// L2 applied to an in-space polynomial equals the projection of the
    /// continuous derivative: interior jumps vanish for continuous data and
    /// the Hz-style ghost kills the boundary term.
    #[test]
    fn l2_is_exact_on_polynomials_wave() {
        let space = wave_space(2);
        let pair = FriedrichsPair::new(SystemKind::Wave1d, space.clone()).unwrap();
        // v = 3x^2 - x + 1, -dv/dx = -6x + 1, divided by eps per cell.
        let mut v = vec![0.0; space.len(Block::V)];
        space.project(Block::V, &mut |p, out| out[0] = 3.0 * p[0] * p[0] - p[0] + 1.0, &mut v);
        let mut got = vec![0.0; space.len(Block::U)];
        pair.apply_l2(&v, &mut got);
        let mesh = space.mesh().clone();
        let err = space.weighted_sq_error(Block::U, &got, &mut |p, out| {
            let cell = (0..mesh.n_cells())
                .find(|&c| {
                    let (a, b) = mesh.bounds(c, 0);
                    p[0] >= a - 1e-12 && p[0] <= b + 1e-12
                })
                .unwrap();
            out[0] = (-6.0 * p[0] + 1.0) / mesh.eps(cell);
        });
        assert!(err < 1e-24, "squared error {err}");
    }

    #[test]
    fn l2_is_exact_on_polynomials_te() {
        let space = te_space(2);
        let pair = FriedrichsPair::new(SystemKind::MaxwellTe, space.clone()).unwrap();
        // Hz = x^2 y - 2 x y + y^2; (dy Hz, -dx Hz) componentwise over eps.
        let mut hz = vec![0.0; space.len(Block::V)];
        space.project(
            Block::V,
            &mut |p, out| out[0] = p[0] * p[0] * p[1] - 2.0 * p[0] * p[1] + p[1] * p[1],
            &mut hz,
        );
        let mut got = vec![0.0; space.len(Block::U)];
        pair.apply_l2(&hz, &mut got);
        let mesh = space.mesh().clone();
        let err = space.weighted_sq_error(Block::U, &got, &mut |p, out| {
            let cell = (0..mesh.n_cells())
                .find(|&c| {
                    let (a, b) = mesh.bounds(c, 0);
                    let (c0, c1) = mesh.bounds(c, 1);
                    p[0] >= a - 1e-12 && p[0] <= b + 1e-12 && p[1] >= c0 - 1e-12 && p[1] <= c1 + 1e-12
                })
                .unwrap();
            let e = mesh.eps(cell);
            out[0] = (p[0] * p[0] - 2.0 * p[0] + 2.0 * p[1]) / e;
            out[1] = -(2.0 * p[0] * p[1] - 2.0 * p[1]) / e;
        });
        assert!(err < 1e-22, "squared error {err}");
    }

    /// Restricted application agrees with the full one on the requested
    /// cells and never writes outside them.
    #[test]
    fn cell_restricted_apply_matches_full() {
        let mut rng = StdRng::seed_from_u64(7);
        let space = te_space(1);
        let pair = FriedrichsPair::new(SystemKind::MaxwellTe, space.clone()).unwrap();
        let n_cells = space.mesh().n_cells();
        let u: Vec<f64> = (0..space.len(Block::U)).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut full = vec![0.0; space.len(Block::V)];
        pair.apply_l1(&u, &mut full);
        for _ in 0..5 {
            let cells: Vec<usize> = (0..n_cells).filter(|_| rng.gen_bool(0.4)).collect();
            let sentinel = 123.456;
            let mut out = vec![sentinel; space.len(Block::V)];
            pair.apply_l1_cells(&u, &mut out, &cells);
            let per = space.dofs_per_cell(Block::V);
            for c in 0..n_cells {
                for m in 0..per {
                    let got = out[c * per + m];
                    if cells.contains(&c) {
                        assert!((got - full[c * per + m]).abs() < 1e-14);
                    } else {
                        assert_eq!(got, sentinel);
                    }
                }
            }
        }
    }

    /// The masked second-order operator against its dense definition
    /// -L2 diag(chi) L1, plus positivity and self-adjointness in the
    /// eps-weighted inner product.
    #[test]
    fn masked_second_order_matches_dense() {
        let mut rng = StdRng::seed_from_u64(11);
        let space = te_space(1);
        let pair = Arc::new(FriedrichsPair::new(SystemKind::MaxwellTe, space.clone()).unwrap());
        let part = classify(space.mesh(), &FineRule::MinSideBelow(0.2)).unwrap();
        let mask = cutoff_mask(&part, MaskSelect::M);
        assert!(mask.n_kept() > 0 && mask.n_kept() < space.mesh().n_cells());
        let s_op = MaskedSecondOrder::new_masked(pair.clone(), &mask);
        let (l1, l2) = assemble_dense(&pair);
        let chi = DMatrix::from_fn(space.len(Block::V), space.len(Block::V), |i, j| {
            if i == j && mask.keeps(i / space.dofs_per_cell(Block::V)) {
                1.0
            } else {
                0.0
            }
        });
        let s_dense = -(&l2 * &chi * &l1);
        let n = space.len(Block::U);
        let mut scratch = vec![0.0; space.len(Block::V)];
        for _ in 0..10 {
            let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut got = vec![0.0; n];
            s_op.apply(&x, &mut got, &mut scratch);
            let want = &s_dense * DMatrix::from_column_slice(n, 1, &x);
            for i in 0..n {
                assert!(
                    (got[i] - want[(i, 0)]).abs() < 1e-11 * (1.0 + want.amax()),
                    "entry {i}: {} vs {}",
                    got[i],
                    want[(i, 0)]
                );
            }
            // Positivity in the eps inner product.
            assert!(space.dot_u(&x, &got) >= -1e-10 * space.dot_u(&x, &x));
        }
        // Self-adjointness: <Sx, y>_eps = <x, Sy>_eps.
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut sx = vec![0.0; n];
        let mut sy = vec![0.0; n];
        s_op.apply(&x, &mut sx, &mut scratch);
        s_op.apply(&y, &mut sy, &mut scratch);
        let a = space.dot_u(&sx, &y);
        let b = space.dot_u(&x, &sy);
        assert!((a - b).abs() < 1e-10 * a.abs().max(1.0), "{a} vs {b}");
    }

    /// Power iteration against the exact largest eigenvalue of the
    /// symmetrized dense operator.
    #[test]
    fn spectral_norm_matches_dense_eigenvalue() {
        let space = wave_space(1);
        let pair = Arc::new(FriedrichsPair::new(SystemKind::Wave1d, space.clone()).unwrap());
        let s_op = MaskedSecondOrder::new_all(pair.clone());
        let (l1, l2) = assemble_dense(&pair);
        let s_dense = -(&l2 * &l1);
        // Similarity transform D^(1/2) S D^(-1/2) with D = diag(eps) is
        // symmetric, so its eigenvalues are S's.
        let n = space.len(Block::U);
        let mesh = space.mesh();
        let per = space.dofs_per_cell(Block::U);
        let d_sqrt: Vec<f64> = (0..n).map(|i| mesh.eps(i / per).sqrt()).collect();
        let sym = DMatrix::from_fn(n, n, |i, j| d_sqrt[i] * s_dense[(i, j)] / d_sqrt[j]);
        let sym = (&sym + &sym.transpose()) * 0.5;
        let eig = sym.symmetric_eigen();
        let lambda_max = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
        let mut scratch = vec![0.0; space.len(Block::V)];
        let mut out = vec![0.0; n];
        let got = spectral_norm(&space, 202, |x, y| {
            out.fill(0.0);
            s_op.apply(x, &mut out, &mut scratch);
            y.copy_from_slice(&out);
        });
        assert!(
            (got - lambda_max).abs() < 2e-4 * lambda_max,
            "power {got} vs dense {lambda_max}"
        );
    }

    /// An empty cutoff makes S the zero operator and the norm 0.
    #[test]
    fn empty_mask_gives_zero_operator() {
        let space = wave_space(1);
        let pair = Arc::new(FriedrichsPair::new(SystemKind::Wave1d, space.clone()).unwrap());
        let part = classify(space.mesh(), &FineRule::Cells(vec![])).unwrap();
        let mask = cutoff_mask(&part, MaskSelect::M);
        assert_eq!(mask.n_kept(), 0);
        let s_op = MaskedSecondOrder::new_masked(pair, &mask);
        assert!(s_op.is_zero());
        let mut scratch = vec![0.0; space.len(Block::V)];
        let got = spectral_norm(&space, 1, |x, y| {
            y.fill(0.0);
            let mut out = vec![0.0; x.len()];
            s_op.apply(x, &mut out, &mut scratch);
            y.copy_from_slice(&out);
        });
        assert_eq!(got, 0.0);
    }

    #[test]
    fn construction_validates_system_shape() {
        let space = wave_space(1);
        assert!(matches!(
            FriedrichsPair::new(SystemKind::MaxwellTe, space),
            Err(OperatorError::DimensionMismatch { .. })
        ));
        let mesh = Arc::new(Mesh::interval((0.0, 1.0), &[0.5, 0.5]).unwrap());
        let space2 = Arc::new(DgSpace::new(mesh, 1, 2, 1));
        assert!(matches!(
            FriedrichsPair::new(SystemKind::Wave1d, space2),
            Err(OperatorError::ComponentMismatch { .. })
        ));
    }
}
