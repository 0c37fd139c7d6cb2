//! Modal discontinuous Galerkin spaces on tensor meshes.
//!
//! Each cell carries a tensor-product basis of L2-orthonormal Legendre
//! polynomials up to degree `k` per axis, so the per-cell mass matrix is the
//! identity and material-weighted mass matrices are diagonal.  The space owns
//! the reference-element tables the operators need (coefficient-space
//! derivative matrix, face traces) plus an over-integrating Gauss rule for
//! projections and error norms.

use std::sync::Arc;

use crate::mesh::Mesh;

/// A Gauss–Legendre rule on the reference interval [-1, 1].
#[derive(Debug, Clone)]
pub struct QuadRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Legendre polynomial and derivative at `x` by the three-term recurrence.
fn legendre_with_deriv(n: usize, x: f64) -> (f64, f64) {
    if n == 0 {
        return (1.0, 0.0);
    }
    let (mut pm, mut p) = (1.0, x);
    for a in 1..n {
        let next = ((2 * a + 1) as f64 * x * p - a as f64 * pm) / (a + 1) as f64;
        pm = p;
        p = next;
    }
    // P_n'(x) = n (x P_n - P_{n-1}) / (x^2 - 1); endpoints never occur for
    // Gauss nodes.
    let dp = n as f64 * (x * p - pm) / (x * x - 1.0);
    (p, dp)
}

/// L2(-1,1)-orthonormal Legendre polynomial `L_a = sqrt((2a+1)/2) P_a`.
pub fn legendre_ortho(a: usize, x: f64) -> f64 {
    ((2 * a + 1) as f64 / 2.0).sqrt() * legendre_with_deriv(a, x).0
}

/// Gauss–Legendre nodes and weights by Newton iteration from the Chebyshev
/// initial guess; exact for polynomials of degree `2n - 1`.
pub fn gauss_legendre(n: usize) -> QuadRule {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre_with_deriv(n, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let (_, dp) = legendre_with_deriv(n, x);
        nodes[i] = x;
        weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    // Newton starts at the high end; store ascending.
    nodes.reverse();
    weights.reverse();
    QuadRule { nodes, weights }
}

/// Which block of a two-field state a coefficient vector belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    U,
    V,
}

/// Coefficients of a two-field state.
#[derive(Debug, Clone)]
pub struct FieldPair {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

impl FieldPair {
    pub fn zeros(space: &DgSpace) -> FieldPair {
        FieldPair { u: vec![0.0; space.len_u()], v: vec![0.0; space.len_v()] }
    }
}

/// A modal dG space over a shared mesh.  Degrees of freedom are laid out
/// cell-major, then component, then tensor mode `m = jy * (k+1) + jx`.
#[derive(Debug, Clone)]
pub struct DgSpace {
    mesh: Arc<Mesh>,
    k: usize,
    mx: usize,
    my: usize,
    m_u: usize,
    m_v: usize,
    rule: QuadRule,
    /// `basis_at_q[q][a] = L_a(node_q)` for the over-integration rule.
    basis_at_q: Vec<Vec<f64>>,
    /// Row-major `(k+1)^2` table of `integral(L_a * L_b')`.
    dref: Vec<f64>,
    trace_lo: Vec<f64>,
    trace_hi: Vec<f64>,
}

impl DgSpace {
    /// `m_u` / `m_v` are the component counts of the two fields (e.g. 2 and
    /// 1 for the transverse-electric system, 1 and 1 for the scalar wave).
    pub fn new(mesh: Arc<Mesh>, k: usize, m_u: usize, m_v: usize) -> DgSpace {
        assert!(m_u >= 1 && m_v >= 1, "both fields need at least one component");
        let mx = k + 1;
        let my = if mesh.dim() == 2 { k + 1 } else { 1 };
        let rule = gauss_legendre(2 * (k + 1));
        let basis_at_q = rule
            .nodes
            .iter()
            .map(|&x| (0..=k).map(|a| legendre_ortho(a, x)).collect())
            .collect();
        let mut dref = vec![0.0; mx * mx];
        for a in 0..mx {
            for b in 0..mx {
                // integral(P_a P_b') = 2 for b > a with a+b odd, else 0;
                // normalization turns the 2 into sqrt((2a+1)(2b+1)).
                if b > a && (a + b) % 2 == 1 {
                    dref[a * mx + b] = (((2 * a + 1) * (2 * b + 1)) as f64).sqrt();
                }
            }
        }
        let trace_hi: Vec<f64> = (0..mx).map(|b| ((2 * b + 1) as f64 / 2.0).sqrt()).collect();
        let trace_lo: Vec<f64> =
            (0..mx).map(|b| if b % 2 == 0 { trace_hi[b] } else { -trace_hi[b] }).collect();
        DgSpace { mesh, k, mx, my, m_u, m_v, rule, basis_at_q, dref, trace_lo, trace_hi }
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn degree(&self) -> usize {
        self.k
    }

    pub fn modes_per_axis(&self) -> (usize, usize) {
        (self.mx, self.my)
    }

    pub fn n_modes(&self) -> usize {
        self.mx * self.my
    }

    pub fn components(&self, block: Block) -> usize {
        match block {
            Block::U => self.m_u,
            Block::V => self.m_v,
        }
    }

    pub fn dofs_per_cell(&self, block: Block) -> usize {
        self.components(block) * self.n_modes()
    }

    pub fn len(&self, block: Block) -> usize {
        self.mesh.n_cells() * self.dofs_per_cell(block)
    }

    pub fn len_u(&self) -> usize {
        self.len(Block::U)
    }

    pub fn len_v(&self) -> usize {
        self.len(Block::V)
    }

    /// Flat index of (cell, component, mode).
    pub fn idx(&self, block: Block, cell: usize, comp: usize, mode: usize) -> usize {
        (cell * self.components(block) + comp) * self.n_modes() + mode
    }

    /// Coefficient-space derivative table `integral(L_a * L_b')`.
    pub fn dref(&self, a: usize, b: usize) -> f64 {
        self.dref[a * self.mx + b]
    }

    /// Reference traces `L_a(-1)` and `L_a(+1)`.
    pub fn trace(&self, a: usize, upper: bool) -> f64 {
        if upper {
            self.trace_hi[a]
        } else {
            self.trace_lo[a]
        }
    }

    /// Physical quadrature points and combined weights (including the
    /// Jacobian) for one cell, plus the per-axis reference nodes' indices.
    fn for_each_quad_point(
        &self,
        cell: usize,
        mut visit: impl FnMut([f64; 2], f64, usize, usize),
    ) {
        let center = self.mesh.center(cell);
        let w = self.mesh.widths(cell);
        let nq = self.rule.nodes.len();
        if self.mesh.dim() == 1 {
            let jac = w[0] / 2.0;
            for q in 0..nq {
                let x = center[0] + 0.5 * w[0] * self.rule.nodes[q];
                visit([x, 0.0], jac * self.rule.weights[q], q, 0);
            }
        } else {
            let jac = w[0] * w[1] / 4.0;
            for qy in 0..nq {
                let y = center[1] + 0.5 * w[1] * self.rule.nodes[qy];
                for qx in 0..nq {
                    let x = center[0] + 0.5 * w[0] * self.rule.nodes[qx];
                    visit([x, y], jac * self.rule.weights[qx] * self.rule.weights[qy], qx, qy);
                }
            }
        }
    }

    /// Transverse basis factor: `L_jy` at node `qy` in 2D, the constant 1 in
    /// 1D (where the y axis is a dummy).
    fn basis_y(&self, qy: usize, jy: usize) -> f64 {
        if self.mesh.dim() == 1 {
            1.0
        } else {
            self.basis_at_q[qy][jy]
        }
    }

    /// Scale factor turning reference basis values into physical ones on a
    /// cell: `phi_m(x) = scale * L_jx(xi_x) * L_jy(xi_y)`.
    fn basis_scale(&self, cell: usize) -> f64 {
        let w = self.mesh.widths(cell);
        if self.mesh.dim() == 1 {
            (2.0 / w[0]).sqrt()
        } else {
            2.0 / (w[0] * w[1]).sqrt()
        }
    }

    /// L2 projection of a multi-component function onto one block.  `f`
    /// receives a physical point and fills one value per component; `out`
    /// must have the block's full length.
    pub fn project(
        &self,
        block: Block,
        f: &mut dyn FnMut([f64; 2], &mut [f64]),
        out: &mut [f64],
    ) {
        assert_eq!(out.len(), self.len(block));
        let ncomp = self.components(block);
        let mut vals = vec![0.0; ncomp];
        out.fill(0.0);
        for cell in 0..self.mesh.n_cells() {
            let scale = self.basis_scale(cell);
            self.for_each_quad_point(cell, |p, wq, qx, qy| {
                f(p, &mut vals);
                for comp in 0..ncomp {
                    let fw = vals[comp] * wq * scale;
                    for jy in 0..self.my {
                        let ly = self.basis_y(qy, jy);
                        for jx in 0..self.mx {
                            let m = jy * self.mx + jx;
                            out[self.idx(block, cell, comp, m)] +=
                                fw * self.basis_at_q[qx][jx] * ly;
                        }
                    }
                }
            });
        }
    }

    /// Material-weighted squared L2 distance between a coefficient vector
    /// and a pointwise function (epsilon weights the u-block, mu the
    /// v-block), summed over components.
    pub fn weighted_sq_error(
        &self,
        block: Block,
        coeffs: &[f64],
        f: &mut dyn FnMut([f64; 2], &mut [f64]),
    ) -> f64 {
        assert_eq!(coeffs.len(), self.len(block));
        let ncomp = self.components(block);
        let mut vals = vec![0.0; ncomp];
        let mut total = 0.0;
        for cell in 0..self.mesh.n_cells() {
            let weight = match block {
                Block::U => self.mesh.eps(cell),
                Block::V => self.mesh.mu(cell),
            };
            let scale = self.basis_scale(cell);
            let mut cell_sq = 0.0;
            self.for_each_quad_point(cell, |p, wq, qx, qy| {
                f(p, &mut vals);
                for comp in 0..ncomp {
                    let mut uh = 0.0;
                    for jy in 0..self.my {
                        let ly = self.basis_y(qy, jy);
                        for jx in 0..self.mx {
                            let m = jy * self.mx + jx;
                            uh += coeffs[self.idx(block, cell, comp, m)]
                                * self.basis_at_q[qx][jx]
                                * ly;
                        }
                    }
                    let diff = uh * scale - vals[comp];
                    cell_sq += wq * diff * diff;
                }
            });
            total += weight * cell_sq;
        }
        total
    }

    /// Epsilon-weighted inner product on the u-block (the per-cell mass
    /// matrix is the identity, so this is a weighted dot product).
    pub fn dot_u(&self, a: &[f64], b: &[f64]) -> f64 {
        self.weighted_dot(Block::U, a, b)
    }

    /// Mu-weighted inner product on the v-block.
    pub fn dot_v(&self, a: &[f64], b: &[f64]) -> f64 {
        self.weighted_dot(Block::V, a, b)
    }

    fn weighted_dot(&self, block: Block, a: &[f64], b: &[f64]) -> f64 {
        let per_cell = self.dofs_per_cell(block);
        debug_assert_eq!(a.len(), self.len(block));
        debug_assert_eq!(b.len(), self.len(block));
        let mut sum = 0.0;
        for cell in 0..self.mesh.n_cells() {
            let w = match block {
                Block::U => self.mesh.eps(cell),
                Block::V => self.mesh.mu(cell),
            };
            let lo = cell * per_cell;
            let mut s = 0.0;
            for i in lo..lo + per_cell {
                s += a[i] * b[i];
            }
            sum += w * s;
        }
        sum
    }

    /// Energy norm of a two-field state: sqrt of the epsilon-weighted
    /// u-norm squared plus the mu-weighted v-norm squared.
    pub fn norm_pair(&self, state: &FieldPair) -> f64 {
        (self.dot_u(&state.u, &state.u) + self.dot_v(&state.v, &state.v)).sqrt()
    }
}
