//! Cartesian meshes and the fine/coarse partitions driving local time stepping.
//!
//! Meshes are intervals in 1D and conforming tensor-product grids in 2D; local
//! refinement is realized by grading the per-axis boundary arrays.  A
//! [`MeshPartition`] splits the cells into a Fine set (chosen by a
//! [`FineRule`]), the M-set (Fine plus every face neighbor of a Fine cell,
//! where the filtered operator acts) and its complement, the LF-set, which is
//! stepped by plain leapfrog.  [`cutoff_mask`] turns either set into a
//! [`CellMask`] that zeroes dG coefficients cell by cell.

use std::fmt;

/// Errors from mesh construction and classification.
#[derive(Debug, Clone, PartialEq)]
pub enum MeshError {
    /// A cell width or axis step was zero or negative.
    NonPositiveWidth { axis: usize, index: usize, value: f64 },
    /// Interval widths do not tile the requested domain.
    WidthSumMismatch { sum: f64, expected: f64 },
    /// Axis boundary coordinates are not strictly increasing.
    NonMonotoneBoundaries { axis: usize, index: usize },
    /// First/last boundary coordinate does not match the domain endpoint.
    DomainEndpointMismatch { axis: usize, got: f64, expected: f64 },
    /// An axis needs at least one cell.
    EmptyAxis { axis: usize },
    /// Material array length does not match the cell count.
    MaterialLengthMismatch { field: &'static str, got: usize, expected: usize },
    /// Material coefficients must be strictly positive.
    NonPositiveMaterial { field: &'static str, cell: usize, value: f64 },
    /// A fine-cell index is out of range.
    CellIndexOutOfRange { index: usize, n_cells: usize },
    /// Every cell was classified fine; the two-rate scheme degenerates.
    EmptyCoarseSet,
}

impl fmt::Display for MeshError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MeshError::NonPositiveWidth { axis, index, value } => {
                write!(f, "axis {axis}, cell {index}: width {value} is not positive")
            }
            MeshError::WidthSumMismatch { sum, expected } => {
                write!(f, "cell widths sum to {sum}, domain length is {expected}")
            }
            MeshError::NonMonotoneBoundaries { axis, index } => {
                write!(f, "axis {axis}: boundaries not strictly increasing at index {index}")
            }
            MeshError::DomainEndpointMismatch { axis, got, expected } => {
                write!(f, "axis {axis}: boundary {got} does not match domain endpoint {expected}")
            }
            MeshError::EmptyAxis { axis } => write!(f, "axis {axis} has no cells"),
            MeshError::MaterialLengthMismatch { field, got, expected } => {
                write!(f, "{field}: got {got} values for {expected} cells")
            }
            MeshError::NonPositiveMaterial { field, cell, value } => {
                write!(f, "{field} on cell {cell}: {value} is not positive")
            }
            MeshError::CellIndexOutOfRange { index, n_cells } => {
                write!(f, "cell index {index} out of range (mesh has {n_cells} cells)")
            }
            MeshError::EmptyCoarseSet => {
                write!(f, "every cell is fine; the coarse set must be nonempty")
            }
        }
    }
}

impl std::error::Error for MeshError {}

/// Relative tolerance for "tiles the domain exactly" checks.
const TILE_TOL: f64 = 1e-12;

/// Neighbor directions; 1D uses only `XLo`/`XHi`.
pub const DIR_X_LO: usize = 0;
pub const DIR_X_HI: usize = 1;
pub const DIR_Y_LO: usize = 2;
pub const DIR_Y_HI: usize = 3;

/// An interior face between two cells, oriented along `axis` (0 = normal in
/// x, 1 = normal in y); `lo` is the cell on the lower-coordinate side.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Face {
    pub lo: usize,
    pub hi: usize,
    pub axis: usize,
}

/// An interval (1D) or conforming tensor-product (2D) mesh with per-cell
/// material coefficients.  Immutable after construction; cells are numbered
/// `ix + iy * nx` with x fastest.
#[derive(Debug, Clone)]
pub struct Mesh {
    dim: usize,
    /// Per-axis boundary coordinates, strictly increasing; `axes[1]` is a
    /// dummy single cell in 1D.
    axes: [Vec<f64>; 2],
    n_per_axis: [usize; 2],
    eps: Vec<f64>,
    mu: Vec<f64>,
    neighbors: Vec<[Option<usize>; 4]>,
    faces: Vec<Face>,
}

impl Mesh {
    /// Builds a 1D mesh of the interval `domain` from consecutive cell
    /// widths.  The widths must be positive and sum to the domain length to
    /// relative precision `1e-12`; the last boundary is then snapped onto the
    /// endpoint so the cells tile the domain exactly.
    pub fn interval(domain: (f64, f64), widths: &[f64]) -> Result<Mesh, MeshError> {
        let (a, b) = domain;
        if widths.is_empty() {
            return Err(MeshError::EmptyAxis { axis: 0 });
        }
        let mut bounds = Vec::with_capacity(widths.len() + 1);
        bounds.push(a);
        let mut x = a;
        for (i, &w) in widths.iter().enumerate() {
            if !(w > 0.0) || !w.is_finite() {
                return Err(MeshError::NonPositiveWidth { axis: 0, index: i, value: w });
            }
            x += w;
            bounds.push(x);
        }
        let span = b - a;
        if (x - b).abs() > TILE_TOL * span.abs().max(1.0) {
            return Err(MeshError::WidthSumMismatch { sum: x - a, expected: span });
        }
        *bounds.last_mut().unwrap() = b;
        Self::from_axes(1, [bounds, vec![0.0, 1.0]])
    }

    /// Builds a conforming 2D tensor-product mesh from per-axis boundary
    /// coordinate arrays.  Coordinates must be strictly increasing and start
    /// and end on the domain corners (relative tolerance `1e-12`); the
    /// endpoints are snapped exactly.
    pub fn tensor(
        domain: ((f64, f64), (f64, f64)),
        x_bounds: Vec<f64>,
        y_bounds: Vec<f64>,
    ) -> Result<Mesh, MeshError> {
        let mut axes = [x_bounds, y_bounds];
        for (ax, (lo, hi)) in [domain.0, domain.1].iter().enumerate() {
            let bounds = &mut axes[ax];
            if bounds.len() < 2 {
                return Err(MeshError::EmptyAxis { axis: ax });
            }
            let span = (hi - lo).abs().max(1.0);
            for (end, target) in [(0, *lo), (bounds.len() - 1, *hi)] {
                if (bounds[end] - target).abs() > TILE_TOL * span {
                    return Err(MeshError::DomainEndpointMismatch {
                        axis: ax,
                        got: bounds[end],
                        expected: target,
                    });
                }
            }
            bounds[0] = *lo;
            *bounds.last_mut().unwrap() = *hi;
        }
        Self::from_axes(2, axes)
    }

    fn from_axes(dim: usize, axes: [Vec<f64>; 2]) -> Result<Mesh, MeshError> {
        for (ax, bounds) in axes.iter().enumerate().take(dim) {
            for i in 1..bounds.len() {
                if !(bounds[i] > bounds[i - 1]) {
                    return Err(MeshError::NonMonotoneBoundaries { axis: ax, index: i });
                }
            }
        }
        let n_per_axis = [axes[0].len() - 1, axes[1].len() - 1];
        let n = n_per_axis[0] * n_per_axis[1];
        let (nx, ny) = (n_per_axis[0], n_per_axis[1]);
        let mut neighbors = vec![[None; 4]; n];
        let mut faces = Vec::new();
        for iy in 0..ny {
            for ix in 0..nx {
                let c = ix + iy * nx;
                if ix > 0 {
                    neighbors[c][DIR_X_LO] = Some(c - 1);
                }
                if ix + 1 < nx {
                    neighbors[c][DIR_X_HI] = Some(c + 1);
                    faces.push(Face { lo: c, hi: c + 1, axis: 0 });
                }
                if dim == 2 {
                    if iy > 0 {
                        neighbors[c][DIR_Y_LO] = Some(c - nx);
                    }
                    if iy + 1 < ny {
                        neighbors[c][DIR_Y_HI] = Some(c + nx);
                        faces.push(Face { lo: c, hi: c + nx, axis: 1 });
                    }
                }
            }
        }
        Ok(Mesh {
            dim,
            axes,
            n_per_axis,
            eps: vec![1.0; n],
            mu: vec![1.0; n],
            neighbors,
            faces,
        })
    }

    /// Replaces the per-cell material coefficients (both default to 1).
    /// `eps` weights the u-block, `mu` the v-block.
    pub fn with_materials(mut self, eps: Vec<f64>, mu: Vec<f64>) -> Result<Mesh, MeshError> {
        let n = self.n_cells();
        for (field, values) in [("eps", &eps), ("mu", &mu)] {
            if values.len() != n {
                return Err(MeshError::MaterialLengthMismatch {
                    field,
                    got: values.len(),
                    expected: n,
                });
            }
            for (c, &v) in values.iter().enumerate() {
                if !(v > 0.0) || !v.is_finite() {
                    return Err(MeshError::NonPositiveMaterial { field, cell: c, value: v });
                }
            }
        }
        self.eps = eps;
        self.mu = mu;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_cells(&self) -> usize {
        self.n_per_axis[0] * self.n_per_axis[1]
    }

    pub fn n_per_axis(&self) -> [usize; 2] {
        self.n_per_axis
    }

    pub fn faces(&self) -> &[Face] {
        &self.faces
    }

    /// Face neighbor of `cell` in direction `dir` (`DIR_*`), `None` at the
    /// domain boundary.
    pub fn neighbor(&self, cell: usize, dir: usize) -> Option<usize> {
        self.neighbors[cell][dir]
    }

    /// Per-axis index of a cell.
    pub fn cell_index(&self, cell: usize) -> [usize; 2] {
        [cell % self.n_per_axis[0], cell / self.n_per_axis[0]]
    }

    /// Lower/upper coordinates of a cell along `axis`.
    pub fn bounds(&self, cell: usize, axis: usize) -> (f64, f64) {
        let i = self.cell_index(cell)[axis];
        (self.axes[axis][i], self.axes[axis][i + 1])
    }

    /// Cell widths; the unused axis reports 0 in 1D.
    pub fn widths(&self, cell: usize) -> [f64; 2] {
        let idx = self.cell_index(cell);
        let wx = self.axes[0][idx[0] + 1] - self.axes[0][idx[0]];
        let wy = if self.dim == 2 { self.axes[1][idx[1] + 1] - self.axes[1][idx[1]] } else { 0.0 };
        [wx, wy]
    }

    /// Cell center (second coordinate is 0 in 1D).
    pub fn center(&self, cell: usize) -> [f64; 2] {
        let idx = self.cell_index(cell);
        let cx = 0.5 * (self.axes[0][idx[0]] + self.axes[0][idx[0] + 1]);
        let cy = if self.dim == 2 {
            0.5 * (self.axes[1][idx[1]] + self.axes[1][idx[1] + 1])
        } else {
            0.0
        };
        [cx, cy]
    }

    /// Cell diameter: the width in 1D, the diagonal in 2D.
    pub fn diameter(&self, cell: usize) -> f64 {
        let w = self.widths(cell);
        if self.dim == 2 {
            w[0].hypot(w[1])
        } else {
            w[0]
        }
    }

    /// Smallest cell side length (equals the width in 1D).
    pub fn min_side(&self, cell: usize) -> f64 {
        let w = self.widths(cell);
        if self.dim == 2 {
            w[0].min(w[1])
        } else {
            w[0]
        }
    }

    pub fn cell_volume(&self, cell: usize) -> f64 {
        let w = self.widths(cell);
        if self.dim == 2 {
            w[0] * w[1]
        } else {
            w[0]
        }
    }

    pub fn h_min(&self) -> f64 {
        (0..self.n_cells()).map(|c| self.diameter(c)).fold(f64::INFINITY, f64::min)
    }

    pub fn h_max(&self) -> f64 {
        (0..self.n_cells()).map(|c| self.diameter(c)).fold(0.0, f64::max)
    }

    pub fn eps(&self, cell: usize) -> f64 {
        self.eps[cell]
    }

    pub fn mu(&self, cell: usize) -> f64 {
        self.mu[cell]
    }
}

/// Uniform axis boundaries with an optional graded window: base cells whose
/// center lies in `[lo, hi]` are split into `2^levels` equal children.
/// Returns the boundary array for [`Mesh::tensor`] / [`Mesh::interval`]-style
/// construction.
pub fn graded_boundaries(
    domain: (f64, f64),
    n_base: usize,
    refine: Option<(f64, f64, u32)>,
) -> Vec<f64> {
    let (a, b) = domain;
    let span = b - a;
    let base = |i: usize| a + span * (i as f64) / (n_base as f64);
    let mut bounds = vec![a];
    for i in 0..n_base {
        let (lo, hi) = (base(i), base(i + 1));
        let center = 0.5 * (lo + hi);
        let split = match refine {
            Some((rlo, rhi, levels)) if center >= rlo && center <= rhi => 1usize << levels,
            _ => 1,
        };
        for j in 1..=split {
            bounds.push(lo + (hi - lo) * (j as f64) / (split as f64));
        }
    }
    *bounds.last_mut().unwrap() = b;
    bounds
}

/// Geometric regions for center-based fine rules.
#[derive(Debug, Clone, PartialEq)]
pub enum Region {
    Ball { center: [f64; 2], radius: f64 },
    Rect { lo: [f64; 2], hi: [f64; 2] },
}

impl Region {
    pub fn contains(&self, p: [f64; 2]) -> bool {
        match self {
            Region::Ball { center, radius } => {
                (p[0] - center[0]).hypot(p[1] - center[1]) <= *radius
            }
            Region::Rect { lo, hi } => {
                (lo[0]..=hi[0]).contains(&p[0]) && (lo[1]..=hi[1]).contains(&p[1])
            }
        }
    }
}

/// Rule deciding which cells count as fine.
///
/// `MinSideBelow` exists because graded tensor grids create anisotropic
/// "band" cells (one short side, one long): their diameter looks coarse but
/// their CFL stiffness tracks the shortest side, so diameter thresholds
/// misclassify them.
#[derive(Debug, Clone, PartialEq)]
pub enum FineRule {
    /// Fine iff the cell diameter is below the threshold.
    DiameterBelow(f64),
    /// Fine iff the smallest cell side is below the threshold.
    MinSideBelow(f64),
    /// Explicit fine-cell index set (may be empty).
    Cells(Vec<usize>),
    /// Fine iff the cell center lies in the region.
    CenterIn(Region),
}

/// Partition of the mesh into Fine, the M-set (Fine plus face neighbors of
/// Fine; where the filter acts) and the LF-set (everything else; stepped by
/// plain leapfrog).  The three sets satisfy `M ⊇ Fine`, `LF ∩ M = ∅` and
/// `LF ∪ M = all cells` by construction.
#[derive(Debug, Clone)]
pub struct MeshPartition {
    fine: Vec<bool>,
    m_set: Vec<bool>,
    /// Minimum diameter over coarse (non-fine) cells.
    pub h_coarse_min: f64,
    /// Minimum diameter over fine cells; `None` when Fine is empty.
    pub h_fine_min: Option<f64>,
}

impl MeshPartition {
    pub fn n_cells(&self) -> usize {
        self.fine.len()
    }

    pub fn is_fine(&self, cell: usize) -> bool {
        self.fine[cell]
    }

    pub fn is_m(&self, cell: usize) -> bool {
        self.m_set[cell]
    }

    pub fn is_lf(&self, cell: usize) -> bool {
        !self.m_set[cell]
    }

    pub fn n_fine(&self) -> usize {
        self.fine.iter().filter(|&&f| f).count()
    }

    pub fn n_m(&self) -> usize {
        self.m_set.iter().filter(|&&f| f).count()
    }

    pub fn fine_cells(&self) -> Vec<usize> {
        (0..self.fine.len()).filter(|&c| self.fine[c]).collect()
    }

    pub fn m_cells(&self) -> Vec<usize> {
        (0..self.m_set.len()).filter(|&c| self.m_set[c]).collect()
    }

    /// Fraction of cells classified fine (equals the refined-dof fraction
    /// for a uniform polynomial degree).
    pub fn fine_fraction(&self) -> f64 {
        self.n_fine() as f64 / self.n_cells() as f64
    }
}

/// Marks every cell that is flagged or has a flagged face neighbor.
pub fn expand_one_layer(mesh: &Mesh, flags: &[bool]) -> Vec<bool> {
    let mut out = flags.to_vec();
    for face in mesh.faces() {
        if flags[face.lo] {
            out[face.hi] = true;
        }
        if flags[face.hi] {
            out[face.lo] = true;
        }
    }
    out
}

/// Classifies cells by `rule`.  Fine may be empty (then the M-set is empty
/// and everything is stepped by leapfrog), but an empty coarse set is
/// rejected: the two-rate scheme would degenerate.
pub fn classify(mesh: &Mesh, rule: &FineRule) -> Result<MeshPartition, MeshError> {
    let n = mesh.n_cells();
    let mut fine = vec![false; n];
    match rule {
        FineRule::DiameterBelow(h) => {
            for (c, flag) in fine.iter_mut().enumerate() {
                *flag = mesh.diameter(c) < *h;
            }
        }
        FineRule::MinSideBelow(h) => {
            for (c, flag) in fine.iter_mut().enumerate() {
                *flag = mesh.min_side(c) < *h;
            }
        }
        FineRule::Cells(cells) => {
            for &c in cells {
                if c >= n {
                    return Err(MeshError::CellIndexOutOfRange { index: c, n_cells: n });
                }
                fine[c] = true;
            }
        }
        FineRule::CenterIn(region) => {
            for (c, flag) in fine.iter_mut().enumerate() {
                *flag = region.contains(mesh.center(c));
            }
        }
    }
    if fine.iter().all(|&f| f) {
        return Err(MeshError::EmptyCoarseSet);
    }
    let m_set = expand_one_layer(mesh, &fine);
    let mut h_coarse_min = f64::INFINITY;
    let mut h_fine_min = f64::INFINITY;
    let mut any_fine = false;
    for c in 0..n {
        let h = mesh.diameter(c);
        if fine[c] {
            any_fine = true;
            h_fine_min = h_fine_min.min(h);
        } else {
            h_coarse_min = h_coarse_min.min(h);
        }
    }
    Ok(MeshPartition {
        fine,
        m_set,
        h_coarse_min,
        h_fine_min: if any_fine { Some(h_fine_min) } else { None },
    })
}

/// Which cutoff operator to materialize from a partition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskSelect {
    /// chi_M: keeps the M-set.
    M,
    /// chi_LF: keeps the LF-set.
    Lf,
}

/// A per-cell cutoff operator: coefficients on excluded cells are zeroed,
/// kept cells pass through unchanged (idempotent, self-adjoint in any
/// cell-diagonal inner product).
#[derive(Debug, Clone)]
pub struct CellMask {
    keep: Vec<bool>,
}

impl CellMask {
    pub fn n_cells(&self) -> usize {
        self.keep.len()
    }

    pub fn keeps(&self, cell: usize) -> bool {
        self.keep[cell]
    }

    pub fn n_kept(&self) -> usize {
        self.keep.iter().filter(|&&k| k).count()
    }

    pub fn kept_cells(&self) -> Vec<usize> {
        (0..self.keep.len()).filter(|&c| self.keep[c]).collect()
    }

    /// Zeroes the coefficients of all excluded cells in a block vector laid
    /// out cell-major with `dofs_per_cell` entries per cell.
    pub fn zero_excluded(&self, block: &mut [f64], dofs_per_cell: usize) {
        debug_assert_eq!(block.len(), self.keep.len() * dofs_per_cell);
        for (c, &keep) in self.keep.iter().enumerate() {
            if !keep {
                block[c * dofs_per_cell..(c + 1) * dofs_per_cell].fill(0.0);
            }
        }
    }
}

/// Materializes chi_M or chi_LF from a partition.  The two masks are exact
/// complements of each other cell by cell.
pub fn cutoff_mask(partition: &MeshPartition, select: MaskSelect) -> CellMask {
    let keep = match select {
        MaskSelect::M => partition.m_set.clone(),
        MaskSelect::Lf => partition.m_set.iter().map(|&m| !m).collect(),
    };
    CellMask { keep }
}
