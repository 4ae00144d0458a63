//! Fusion structure, group partition and the stacked effective-group operator.
//!
//! Cells of a grid with extents `(d1, d2, d3)` are indexed as
//! `(i3 * d1 + i1) * d2 + i2`: axis 1 runs over rows, axis 2 over columns
//! (row-major within a slice) and axis 3 over slices. A one-dimensional grid
//! is indexed by its single coordinate. When a mask is present, coefficients
//! are numbered by the rank of each included cell in that order.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;
use std::sync::{Arc, OnceLock};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sprs::{CsMat, TriMat};

use crate::error::{structural, validation, FsglError, Result};
use crate::linalg::EnvelopeCholesky;

/// Extents of a 1-, 2- or 3-dimensional grid with an optional inclusion mask.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSpec {
    dims: Vec<usize>,
    mask: Option<Vec<bool>>,
}

impl GridSpec {
    pub fn new(dims: &[usize]) -> Result<Self> {
        if dims.is_empty() || dims.len() > 3 {
            return structural(format!("grid must have 1 to 3 dims, got {}", dims.len()));
        }
        if dims.iter().any(|&d| d == 0) {
            return structural(format!("grid extents must be positive, got {dims:?}"));
        }
        Ok(Self {
            dims: dims.to_vec(),
            mask: None,
        })
    }

    pub fn with_mask(mut self, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != self.n_cells() {
            return structural(format!(
                "mask has {} entries but grid has {} cells",
                mask.len(),
                self.n_cells()
            ));
        }
        if !mask.iter().any(|&m| m) {
            return structural("mask includes no cells");
        }
        self.mask = Some(mask);
        Ok(self)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn mask(&self) -> Option<&[bool]> {
        self.mask.as_deref()
    }

    pub fn n_cells(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_included(&self, cell: usize) -> bool {
        self.mask.as_ref().map_or(true, |m| m[cell])
    }

    /// Number of included cells, i.e. the coefficient count `p`.
    pub fn n_included(&self) -> usize {
        match &self.mask {
            Some(m) => m.iter().filter(|&&b| b).count(),
            None => self.n_cells(),
        }
    }

    fn extent(&self, axis: usize) -> usize {
        self.dims.get(axis).copied().unwrap_or(1)
    }

    /// Cell-index offset of one step along `axis`.
    pub fn stride(&self, axis: usize) -> usize {
        match axis {
            0 if self.dims.len() == 1 => 1,
            0 => self.extent(1),
            1 => 1,
            _ => self.extent(0) * self.extent(1),
        }
    }

    /// Coordinates `(i1, i2, i3)` of a cell; missing axes are zero.
    pub fn coords(&self, cell: usize) -> [usize; 3] {
        if self.dims.len() == 1 {
            return [cell, 0, 0];
        }
        let (d1, d2) = (self.extent(0), self.extent(1));
        [(cell / d2) % d1, cell % d2, cell / (d1 * d2)]
    }

    pub fn cell(&self, coords: [usize; 3]) -> usize {
        if self.dims.len() == 1 {
            return coords[0];
        }
        (coords[2] * self.extent(0) + coords[0]) * self.extent(1) + coords[1]
    }

    /// Neighbour of `cell` one step forward along `axis`, if inside the grid.
    pub fn forward_neighbor(&self, cell: usize, axis: usize) -> Option<usize> {
        let c = self.coords(cell);
        (c[axis] + 1 < self.extent(axis)).then(|| cell + self.stride(axis))
    }

    /// Map from cell index to coefficient index (`None` for masked cells).
    pub fn coefficient_index(&self) -> Vec<Option<usize>> {
        let mut next = 0;
        (0..self.n_cells())
            .map(|c| {
                self.is_included(c).then(|| {
                    next += 1;
                    next - 1
                })
            })
            .collect()
    }
}

impl FromStr for GridSpec {
    type Err = FsglError;

    /// Parses `"20x20"`, `"2x2x2"` or `"10"`.
    fn from_str(s: &str) -> Result<Self> {
        let dims = s
            .split(['x', 'X', '×'])
            .map(|t| {
                t.trim()
                    .parse::<usize>()
                    .map_err(|_| FsglError::Parse(format!("bad grid spec `{s}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        GridSpec::new(&dims)
    }
}

impl fmt::Display for GridSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.dims.iter().map(|d| d.to_string()).collect();
        write!(f, "{}", parts.join("x"))
    }
}

/// Face-adjacency difference operator `D` over the included cells.
#[derive(Debug, Clone)]
pub struct FusionStructure {
    edges: Vec<(usize, usize)>,
    p: usize,
    d_matrix: CsMat<f64>,
}

impl FusionStructure {
    /// Builds the structure from explicit coefficient pairs `(a, b)`, each row
    /// being `+1` at `a` and `-1` at `b`.
    pub fn from_edges(p: usize, edges: Vec<(usize, usize)>) -> Result<Self> {
        let mut tri = TriMat::with_capacity((edges.len(), p), 2 * edges.len());
        for (row, &(a, b)) in edges.iter().enumerate() {
            if a >= p || b >= p || a == b {
                return structural(format!("invalid fusion pair ({a}, {b}) for p = {p}"));
            }
            tri.add_triplet(row, a, 1.0);
            tri.add_triplet(row, b, -1.0);
        }
        Ok(Self {
            edges,
            p,
            d_matrix: tri.to_csr(),
        })
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn m(&self) -> usize {
        self.edges.len()
    }

    pub fn d_matrix(&self) -> &CsMat<f64> {
        &self.d_matrix
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.m(), self.p);
        for (row, &(a, b)) in self.edges.iter().enumerate() {
            d[(row, a)] = 1.0;
            d[(row, b)] = -1.0;
        }
        d
    }
}

/// Rows enumerate face-adjacent pairs of included cells, axis by axis, and
/// within an axis in increasing order of the lower cell index.
pub fn build_fusion_matrix(grid: &GridSpec) -> Result<FusionStructure> {
    let index = grid.coefficient_index();
    let mut edges = Vec::with_capacity(adjacency_count(grid));
    for axis in 0..grid.dims().len() {
        for cell in 0..grid.n_cells() {
            let Some(a) = index[cell] else { continue };
            if let Some(b) = grid.forward_neighbor(cell, axis).and_then(|nb| index[nb]) {
                edges.push((a, b));
            }
        }
    }
    FusionStructure::from_edges(grid.n_included(), edges)
}

/// Number of fusion rows `m` for `grid`, without materializing `D`.
pub fn adjacency_count(grid: &GridSpec) -> usize {
    let dims = grid.dims();
    match grid.mask() {
        None => (0..dims.len())
            .map(|a| {
                dims.iter()
                    .enumerate()
                    .map(|(b, &d)| if a == b { d - 1 } else { d })
                    .product::<usize>()
            })
            .sum(),
        Some(mask) => (0..dims.len())
            .map(|axis| {
                (0..grid.n_cells())
                    .filter(|&c| {
                        mask[c] && grid.forward_neighbor(c, axis).is_some_and(|nb| mask[nb])
                    })
                    .count()
            })
            .sum(),
    }
}

/// Non-overlapping partition of the coefficients into groups `1..=G`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupPartition {
    assignment: Vec<usize>,
    members: Vec<Vec<usize>>,
}

impl GroupPartition {
    /// `assignment[j]` is the (1-based) group id of coefficient `j`.
    pub fn new(assignment: Vec<usize>) -> Result<Self> {
        if assignment.is_empty() {
            return structural("group assignment is empty");
        }
        if assignment.contains(&0) {
            return structural("group ids must be positive");
        }
        let n_groups = *assignment.iter().max().expect("nonempty");
        let mut members = vec![Vec::new(); n_groups];
        for (j, &g) in assignment.iter().enumerate() {
            members[g - 1].push(j);
        }
        if let Some(g) = members.iter().position(Vec::is_empty) {
            return structural(format!("group id {} is unused (ids must be 1..=G)", g + 1));
        }
        Ok(Self {
            assignment,
            members,
        })
    }

    /// Builds a partition from `(index, group)` pairs covering `0..p` exactly once.
    pub fn from_pairs(p: usize, pairs: &[(usize, usize)]) -> Result<Self> {
        let mut assignment = vec![0usize; p];
        for &(j, g) in pairs {
            if j >= p {
                return structural(format!("group index {j} out of range for p = {p}"));
            }
            if assignment[j] != 0 {
                return structural(format!("coefficient {j} assigned to more than one group"));
            }
            if g == 0 {
                return structural("group ids must be positive");
            }
            assignment[j] = g;
        }
        if let Some(j) = assignment.iter().position(|&g| g == 0) {
            return structural(format!("coefficient {j} has no group"));
        }
        Self::new(assignment)
    }

    /// Every coefficient in one group.
    pub fn single(p: usize) -> Self {
        Self::new(vec![1; p]).expect("single group is valid for p > 0")
    }

    pub fn p(&self) -> usize {
        self.assignment.len()
    }

    pub fn n_groups(&self) -> usize {
        self.members.len()
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn group_of(&self, j: usize) -> usize {
        self.assignment[j]
    }

    /// Members of group `g` (1-based id), in increasing index order.
    pub fn members(&self, g: usize) -> &[usize] {
        &self.members[g - 1]
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.members.iter().map(Vec::len).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlockClass {
    Lasso,
    Fusion,
    Group,
}

impl fmt::Display for BlockClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BlockClass::Lasso => "lasso",
            BlockClass::Fusion => "fusion",
            BlockClass::Group => "group",
        })
    }
}

/// One effective group: a contiguous slice of rows of `K`.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub class: BlockClass,
    pub rows: Range<usize>,
}

#[derive(Debug)]
struct OperatorStructure {
    p: usize,
    edges: Vec<(usize, usize)>,
    groups: GroupPartition,
    blocks: Vec<Block>,
    /// Column hit by each row in the group section, in row order.
    group_cols: Vec<usize>,
    k_matrix: CsMat<f64>,
    gram_factor: OnceLock<std::result::Result<Arc<EnvelopeCholesky>, String>>,
}

/// Stacked operator `K = [I; D; G_1; ...; G_G]` with per-block weights.
///
/// Blocks are ordered singletons `0..p`, then fusion rows, then groups. The
/// structure is shared between clones; only the weights are owned.
#[derive(Debug, Clone)]
pub struct PenaltyOperator {
    structure: Arc<OperatorStructure>,
    weights: Vec<f64>,
}

/// Assembles the operator; `weights` defaults to 1 for lasso and fusion
/// blocks and `sqrt(p_g)` for group blocks.
pub fn build_penalty_operator(
    fusion: &FusionStructure,
    groups: &GroupPartition,
    weights: Option<&[f64]>,
) -> Result<PenaltyOperator> {
    let p = fusion.p();
    if groups.p() != p {
        return validation(format!(
            "fusion structure has p = {p} but group partition has {} entries",
            groups.p()
        ));
    }
    let m = fusion.m();
    let mut blocks = Vec::with_capacity(p + m + groups.n_groups());
    for j in 0..p {
        blocks.push(Block {
            class: BlockClass::Lasso,
            rows: j..j + 1,
        });
    }
    for e in 0..m {
        blocks.push(Block {
            class: BlockClass::Fusion,
            rows: p + e..p + e + 1,
        });
    }
    let mut group_cols = Vec::with_capacity(p);
    let mut row = p + m;
    for g in 1..=groups.n_groups() {
        let members = groups.members(g);
        group_cols.extend_from_slice(members);
        blocks.push(Block {
            class: BlockClass::Group,
            rows: row..row + members.len(),
        });
        row += members.len();
    }

    let mut tri = TriMat::with_capacity((row, p), p + 2 * m + group_cols.len());
    for j in 0..p {
        tri.add_triplet(j, j, 1.0);
    }
    for (e, &(a, b)) in fusion.edges().iter().enumerate() {
        tri.add_triplet(p + e, a, 1.0);
        tri.add_triplet(p + e, b, -1.0);
    }
    for (r, &c) in group_cols.iter().enumerate() {
        tri.add_triplet(p + m + r, c, 1.0);
    }

    let structure = Arc::new(OperatorStructure {
        p,
        edges: fusion.edges().to_vec(),
        groups: groups.clone(),
        blocks,
        group_cols,
        k_matrix: tri.to_csr(),
        gram_factor: OnceLock::new(),
    });
    let default = default_weights(&structure);
    let op = PenaltyOperator {
        structure,
        weights: default,
    };
    match weights {
        Some(w) => op.with_weights(w),
        None => Ok(op),
    }
}

fn default_weights(s: &OperatorStructure) -> Vec<f64> {
    s.blocks
        .iter()
        .map(|b| match b.class {
            BlockClass::Group => (b.rows.len() as f64).sqrt(),
            _ => 1.0,
        })
        .collect()
}

impl PenaltyOperator {
    /// Same structure with a replacement weight vector of length `N`.
    pub fn with_weights(&self, weights: &[f64]) -> Result<Self> {
        if weights.len() != self.n_blocks() {
            return validation(format!(
                "expected {} block weights, got {}",
                self.n_blocks(),
                weights.len()
            ));
        }
        if let Some(w) = weights.iter().find(|w| !(**w >= 0.0) || !w.is_finite()) {
            return validation(format!("block weights must be finite and >= 0, got {w}"));
        }
        Ok(Self {
            structure: Arc::clone(&self.structure),
            weights: weights.to_vec(),
        })
    }

    /// Same structure with the default weights restored.
    pub fn with_default_weights(&self) -> Self {
        Self {
            structure: Arc::clone(&self.structure),
            weights: default_weights(&self.structure),
        }
    }

    pub fn p(&self) -> usize {
        self.structure.p
    }

    pub fn m(&self) -> usize {
        self.structure.edges.len()
    }

    pub fn n_groups(&self) -> usize {
        self.structure.groups.n_groups()
    }

    /// Number of effective groups `N = p + m + G`.
    pub fn n_blocks(&self) -> usize {
        self.structure.blocks.len()
    }

    /// Row count of `K` (the length of `theta`).
    pub fn n_rows(&self) -> usize {
        self.structure.k_matrix.rows()
    }

    pub fn blocks(&self) -> &[Block] {
        &self.structure.blocks
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.structure.edges
    }

    pub fn groups(&self) -> &GroupPartition {
        &self.structure.groups
    }

    pub fn k_matrix(&self) -> &CsMat<f64> {
        &self.structure.k_matrix
    }

    /// Row of the group section of `K` that selects coefficient `j`.
    pub fn group_row_of(&self, j: usize) -> usize {
        // Rows within a group follow increasing member index.
        let g = self.structure.groups.group_of(j);
        let block = &self.structure.blocks[self.p() + self.m() + g - 1];
        let offset = self
            .structure
            .groups
            .members(g)
            .binary_search(&j)
            .expect("member of its own group");
        block.rows.start + offset
    }

    /// `out = K beta`.
    pub fn apply(&self, beta: &[f64], out: &mut [f64]) {
        let s = &*self.structure;
        let (p, m) = (s.p, s.edges.len());
        out[..p].copy_from_slice(&beta[..p]);
        for (o, &(a, b)) in out[p..p + m].iter_mut().zip(&s.edges) {
            *o = beta[a] - beta[b];
        }
        for (o, &c) in out[p + m..].iter_mut().zip(&s.group_cols) {
            *o = beta[c];
        }
    }

    /// `out = K^T v`.
    pub fn apply_transpose(&self, v: &[f64], out: &mut [f64]) {
        let s = &*self.structure;
        let (p, m) = (s.p, s.edges.len());
        out[..p].copy_from_slice(&v[..p]);
        for (&vi, &(a, b)) in v[p..p + m].iter().zip(&s.edges) {
            out[a] += vi;
            out[b] -= vi;
        }
        for (&vi, &c) in v[p + m..].iter().zip(&s.group_cols) {
            out[c] += vi;
        }
    }

    pub fn apply_vec(&self, beta: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_rows()];
        self.apply(beta, &mut out);
        out
    }

    pub fn apply_transpose_vec(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.p()];
        self.apply_transpose(v, &mut out);
        out
    }

    /// `K^T K` as a sparse symmetric matrix.
    pub fn gram(&self) -> CsMat<f64> {
        let k = &self.structure.k_matrix;
        let kt = k.transpose_view().to_csr();
        &kt * k
    }

    pub fn gram_dense(&self) -> DMatrix<f64> {
        let g = self.gram();
        let mut out = DMatrix::zeros(self.p(), self.p());
        for (v, (i, j)) in g.iter() {
            out[(i, j)] = *v;
        }
        out
    }

    /// Cached envelope Cholesky factor of `K^T K`, shared by all clones.
    pub fn gram_factor(&self) -> Result<Arc<EnvelopeCholesky>> {
        self.structure
            .gram_factor
            .get_or_init(|| {
                EnvelopeCholesky::factor(&self.gram())
                    .map(Arc::new)
                    .map_err(|e| e.to_string())
            })
            .clone()
            .map_err(FsglError::Internal)
    }

    /// `sum_j lambda_j w_j ||K_j beta||_2` given `K beta`.
    pub fn penalty_value(&self, k_beta: &[f64], lambdas: &crate::admm::Lambdas) -> f64 {
        self.blocks()
            .iter()
            .zip(&self.weights)
            .map(|(b, &w)| {
                let lam = lambdas.for_class(b.class);
                if lam == 0.0 || w == 0.0 {
                    return 0.0;
                }
                let norm = if b.rows.len() == 1 {
                    k_beta[b.rows.start].abs()
                } else {
                    norm2(&k_beta[b.rows.clone()])
                };
                lam * w * norm
            })
            .sum()
    }
}

pub(crate) fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}
