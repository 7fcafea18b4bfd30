//! Fitness landscapes over recipe space.
//!
//! A Gaussian-RBF kernel ridge regression is fitted in dual form to
//! `(recipe, fitness)` pairs, queried on a triangular lattice over each of the
//! four faces of the recipe simplex, and the resulting lattices are partitioned
//! into fitness islands: the catchment of each local maximum under discrete
//! steepest ascent. Lattice cells that describe the same recipe on two or
//! three faces are identified, so islands extend across face boundaries.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::formulation::N_OILS;
use crate::scalar::{squared_distance, Scalar};

/// Default kernel bandwidth, in proportion units.
pub const DEFAULT_SIGMA: f64 = 0.15;
/// Default ridge penalty.
pub const DEFAULT_LAMBDA: f64 = 1e-3;
/// Default lattice resolution per face.
pub const DEFAULT_RESOLUTION: usize = 301;

pub type Point<T> = [T; N_OILS];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LandscapeError {
    #[error("kernel bandwidth must be positive, got {0}")]
    NonpositiveBandwidth(f64),
    #[error("ridge penalty must be positive, got {0}")]
    NonpositiveRidge(f64),
    #[error("{inputs} training inputs but {targets} targets")]
    DimensionMismatch { inputs: usize, targets: usize },
    #[error("no training data")]
    Empty,
    #[error("training data contains a non-finite value at row {0}")]
    NonFinite(usize),
    #[error(
        "(K + λI) is not numerically positive definite: pivot {pivot} = {value:e} \
         (smallest/largest pivot so far {ratio:e})"
    )]
    SolveFailure { pivot: usize, value: f64, ratio: f64 },
    #[error("face index {0} out of range 0..4")]
    BadFace(usize),
    #[error("lattice resolution must be at least 2, got {0}")]
    BadResolution(usize),
    #[error("catchment needs 4 lattices of equal resolution")]
    LatticeMismatch,
}

/// Gaussian radial basis function `exp(-‖a − b‖² / 2σ²)`.
pub fn rbf_kernel<T: Scalar>(a: &[T], b: &[T], sigma: T) -> Result<T, LandscapeError> {
    if !(sigma > T::zero()) {
        return Err(LandscapeError::NonpositiveBandwidth(sigma.as_f64()));
    }
    Ok(rbf_unchecked(a, b, inv_two_sigma_sq(sigma)))
}

#[inline]
fn inv_two_sigma_sq<T: Scalar>(sigma: T) -> T {
    T::one() / (T::lit(2.0) * sigma * sigma)
}

#[inline]
fn rbf_unchecked<T: Scalar>(a: &[T], b: &[T], inv_2s2: T) -> T {
    (-squared_distance(a, b) * inv_2s2).exp()
}

/// Dense symmetric matrix, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymMatrix<T: Scalar> {
    pub n: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> SymMatrix<T> {
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.n + j]
    }

    /// `(self + shift·I) x`
    pub fn mul_vec_shifted(&self, x: &[T], shift: T) -> Vec<T> {
        (0..self.n)
            .map(|i| {
                let row = &self.data[i * self.n..(i + 1) * self.n];
                row.iter().zip(x).fold(T::zero(), |acc, (&a, &b)| acc + a * b) + shift * x[i]
            })
            .collect()
    }
}

/// Kernel matrix of the training inputs. Symmetric with a unit diagonal by construction.
pub fn kernel_matrix<T: Scalar>(inputs: &[Point<T>], sigma: T) -> SymMatrix<T> {
    let n = inputs.len();
    let inv = inv_two_sigma_sq(sigma);
    let mut data = vec![T::zero(); n * n];
    for i in 0..n {
        data[i * n + i] = T::one();
        for j in 0..i {
            let k = rbf_unchecked(&inputs[i], &inputs[j], inv);
            data[i * n + j] = k;
            data[j * n + i] = k;
        }
    }
    SymMatrix { n, data }
}

/// Lower-triangular Cholesky factor of `A + shift·I`, row-major.
struct Cholesky<T: Scalar> {
    n: usize,
    l: Vec<T>,
}

impl<T: Scalar> Cholesky<T> {
    fn factor(a: &SymMatrix<T>, shift: T) -> Result<Self, LandscapeError> {
        let n = a.n;
        let mut l = vec![T::zero(); n * n];
        let (mut min_pivot, mut max_pivot) = (T::infinity(), T::zero());
        for j in 0..n {
            let row_j = j * n;
            let mut d = a.get(j, j) + shift;
            for k in 0..j {
                d = d - l[row_j + k] * l[row_j + k];
            }
            if !(d > T::zero()) || !d.is_finite() {
                return Err(LandscapeError::SolveFailure {
                    pivot: j,
                    value: d.as_f64(),
                    ratio: (min_pivot / max_pivot).as_f64(),
                });
            }
            min_pivot = min_pivot.min(d);
            max_pivot = max_pivot.max(d);
            let djj = d.sqrt();
            l[row_j + j] = djj;
            for i in (j + 1)..n {
                let row_i = i * n;
                let dot = (0..j).fold(T::zero(), |acc, k| acc + l[row_i + k] * l[row_j + k]);
                l[row_i + j] = (a.get(i, j) - dot) / djj;
            }
        }
        Ok(Cholesky { n, l })
    }

    fn solve(&self, b: &[T]) -> Vec<T> {
        let n = self.n;
        let mut y = vec![T::zero(); n];
        for i in 0..n {
            let dot = (0..i).fold(T::zero(), |acc, k| acc + self.l[i * n + k] * y[k]);
            y[i] = (b[i] - dot) / self.l[i * n + i];
        }
        let mut x = vec![T::zero(); n];
        for i in (0..n).rev() {
            let dot = ((i + 1)..n).fold(T::zero(), |acc, k| acc + self.l[k * n + i] * x[k]);
            x[i] = (y[i] - dot) / self.l[i * n + i];
        }
        x
    }
}

fn inf_norm<T: Scalar>(v: &[T]) -> T {
    v.iter().fold(T::zero(), |m, x| m.max(x.abs()))
}

/// A fitted dual-form kernel ridge regression.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelModel<T: Scalar = f64> {
    pub inputs: Vec<Point<T>>,
    pub targets: Vec<T>,
    /// Dual weights θ solving `(K + λI) θ = y`.
    pub weights: Vec<T>,
    pub lambda: T,
    pub sigma: T,
    pub kernel: SymMatrix<T>,
}

/// Iterative-refinement sweeps after the direct solve.
const REFINEMENT_STEPS: usize = 2;

impl<T: Scalar> KernelModel<T> {
    /// Fits the model by Cholesky factorization of `K + λI`, followed by a
    /// couple of iterative-refinement sweeps against the residual.
    pub fn fit(inputs: Vec<Point<T>>, targets: Vec<T>, lambda: T, sigma: T) -> Result<Self, LandscapeError> {
        if inputs.len() != targets.len() {
            return Err(LandscapeError::DimensionMismatch {
                inputs: inputs.len(),
                targets: targets.len(),
            });
        }
        if inputs.is_empty() {
            return Err(LandscapeError::Empty);
        }
        if !(sigma > T::zero()) {
            return Err(LandscapeError::NonpositiveBandwidth(sigma.as_f64()));
        }
        if !(lambda > T::zero()) {
            return Err(LandscapeError::NonpositiveRidge(lambda.as_f64()));
        }
        for (row, (x, y)) in inputs.iter().zip(&targets).enumerate() {
            if !(y.is_finite() && x.iter().all(|v| v.is_finite())) {
                return Err(LandscapeError::NonFinite(row));
            }
        }
        let kernel = kernel_matrix(&inputs, sigma);
        let chol = Cholesky::factor(&kernel, lambda)?;
        let mut weights = chol.solve(&targets);
        for _ in 0..REFINEMENT_STEPS {
            let ax = kernel.mul_vec_shifted(&weights, lambda);
            let r: Vec<T> = targets.iter().zip(&ax).map(|(&y, &a)| y - a).collect();
            let dx = chol.solve(&r);
            weights.iter_mut().zip(dx).for_each(|(w, d)| *w = *w + d);
        }
        Ok(KernelModel {
            inputs,
            targets,
            weights,
            lambda,
            sigma,
            kernel,
        })
    }

    /// `‖(K + λI)θ − y‖∞`
    pub fn residual_inf(&self) -> T {
        let ax = self.kernel.mul_vec_shifted(&self.weights, self.lambda);
        let r: Vec<T> = self.targets.iter().zip(&ax).map(|(&y, &a)| y - a).collect();
        inf_norm(&r)
    }

    /// `Σ_i K(x, x_i) θ_i`
    pub fn predict(&self, x: &Point<T>) -> T {
        let inv = inv_two_sigma_sq(self.sigma);
        self.inputs
            .iter()
            .zip(&self.weights)
            .fold(T::zero(), |acc, (xi, &w)| acc + rbf_unchecked(x, xi, inv) * w)
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

/// Prediction of a fitted model at `x`.
pub fn predict<T: Scalar>(m: &KernelModel<T>, x: &Point<T>) -> T {
    m.predict(x)
}

/// The three oils present on `face`, in ascending index order. They map onto
/// the lattice axes X, Y and Z = 1 − X − Y.
pub fn face_axes(face: usize) -> [usize; 3] {
    let mut out = [0; 3];
    let mut k = 0;
    for c in 0..N_OILS {
        if c != face {
            out[k] = c;
            k += 1;
        }
    }
    out
}

/// Integer composition of cell `(i, j)` on `face`, in units of `1/(res − 1)`.
/// `None` for cells outside the triangle.
pub fn cell_composition(face: usize, res: usize, i: usize, j: usize) -> Option<[u32; N_OILS]> {
    if i + j > res - 1 {
        return None;
    }
    let axes = face_axes(face);
    let mut c = [0u32; N_OILS];
    c[axes[0]] = i as u32;
    c[axes[1]] = j as u32;
    c[axes[2]] = (res - 1 - i - j) as u32;
    Some(c)
}

/// Recipe queried at integer composition `c` on a lattice of resolution `res`.
pub fn composition_point<T: Scalar>(c: &[u32; N_OILS], res: usize) -> Point<T> {
    let denom = T::from_usize_lossy(res - 1);
    c.map(|v| T::from_u32(v).expect("lattice index fits") / denom)
}

/// Predicted fitness on one simplex face.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaceLattice<T: Scalar = f64> {
    /// The oil held at zero.
    pub face: usize,
    pub resolution: usize,
    /// Row-major `resolution × resolution`; cells with `i + j > resolution − 1` hold NaN.
    pub values: Vec<T>,
}

impl<T: Scalar> FaceLattice<T> {
    /// Builds a lattice by evaluating `f` at every valid cell's recipe.
    pub fn from_fn(face: usize, resolution: usize, f: impl Fn(&Point<T>) -> T + Sync) -> Result<Self, LandscapeError> {
        if face >= N_OILS {
            return Err(LandscapeError::BadFace(face));
        }
        if resolution < 2 {
            return Err(LandscapeError::BadResolution(resolution));
        }
        let values = (0..resolution * resolution)
            .into_par_iter()
            .map(|idx| {
                let (i, j) = (idx / resolution, idx % resolution);
                match cell_composition(face, resolution, i, j) {
                    Some(c) => f(&composition_point(&c, resolution)),
                    None => T::nan(),
                }
            })
            .collect();
        Ok(FaceLattice {
            face,
            resolution,
            values,
        })
    }

    pub fn is_valid(&self, i: usize, j: usize) -> bool {
        i < self.resolution && j < self.resolution && i + j < self.resolution
    }

    pub fn get(&self, i: usize, j: usize) -> Option<T> {
        self.is_valid(i, j).then(|| self.values[i * self.resolution + j])
    }

    pub fn valid_cell_count(&self) -> usize {
        self.resolution * (self.resolution + 1) / 2
    }

    /// `(X, Y, Z)` coordinates of cell `(i, j)`.
    pub fn cell_xyz(&self, i: usize, j: usize) -> Option<[T; 3]> {
        let c = cell_composition(self.face, self.resolution, i, j)?;
        let p = composition_point::<T>(&c, self.resolution);
        let axes = face_axes(self.face);
        Some(axes.map(|a| p[a]))
    }

    fn valid_neighbors(&self, i: usize, j: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        NEIGHBOR_OFFSETS.iter().filter_map(move |&(di, dj)| {
            let ni = i.checked_add_signed(di)?;
            let nj = j.checked_add_signed(dj)?;
            self.is_valid(ni, nj).then_some((ni, nj))
        })
    }
}

const NEIGHBOR_OFFSETS: [(isize, isize); 8] = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)];

/// Evaluates the model over `face` at `resolution × resolution` lattice points.
pub fn face_grid<T: Scalar>(m: &KernelModel<T>, face: usize, resolution: usize) -> Result<FaceLattice<T>, LandscapeError> {
    FaceLattice::from_fn(face, resolution, |p| m.predict(p))
}

/// All four face lattices of a model.
pub fn face_grids<T: Scalar>(m: &KernelModel<T>, resolution: usize) -> Result<[FaceLattice<T>; N_OILS], LandscapeError> {
    let v = (0..N_OILS)
        .map(|f| face_grid(m, f, resolution))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(v.try_into().expect("four faces"))
}

/// Local maxima of a single lattice. A maximal plateau (a connected set of
/// equal-valued cells none of which has a strictly higher neighbor) is reported
/// once, by its lexicographically smallest cell.
pub fn local_maxima<T: Scalar>(lat: &FaceLattice<T>) -> Vec<(usize, usize)> {
    let res = lat.resolution;
    let mut seen = vec![false; res * res];
    let mut out = Vec::new();
    for i in 0..res {
        for j in 0..res - i {
            if seen[i * res + j] {
                continue;
            }
            let v = lat.values[i * res + j];
            // flood the plateau containing (i, j)
            let mut stack = vec![(i, j)];
            seen[i * res + j] = true;
            let mut is_max = true;
            while let Some((a, b)) = stack.pop() {
                for (na, nb) in lat.valid_neighbors(a, b) {
                    let nv = lat.values[na * res + nb];
                    if nv > v {
                        is_max = false;
                    } else if nv == v && !seen[na * res + nb] {
                        seen[na * res + nb] = true;
                        stack.push((na, nb));
                    }
                }
            }
            if is_max {
                out.push((i, j));
            }
        }
    }
    out
}

/// Lattice cell address.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Cell {
    pub face: usize,
    pub i: usize,
    pub j: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Island<T: Scalar = f64> {
    /// 0 is the island with the highest maximum.
    pub rank: usize,
    /// Canonical (lexicographically smallest) cell of the maximum.
    pub max_cell: Cell,
    pub max_value: T,
    /// Recipe at the maximum.
    pub max_location: Point<T>,
    /// Lattice cells in the island, counting shared edge cells once per face.
    pub cell_count: usize,
    /// Distinct recipes in the island.
    pub point_count: usize,
}

/// Island label of every lattice cell, plus the island summaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IslandMap<T: Scalar = f64> {
    pub resolution: usize,
    /// `labels[face][i * resolution + j]`; `None` for cells outside the triangle.
    pub labels: Vec<Vec<Option<usize>>>,
    /// Sorted by `max_value`, highest first.
    pub islands: Vec<Island<T>>,
}

impl<T: Scalar> IslandMap<T> {
    pub fn label(&self, cell: Cell) -> Option<usize> {
        self.labels[cell.face][cell.i * self.resolution + cell.j]
    }
}

/// Stitched lattice graph: one node per distinct recipe.
struct SimplexGraph<T: Scalar> {
    /// Canonical cell of each node.
    cells: Vec<Cell>,
    values: Vec<T>,
    /// All lattice cells (face, flat index) of each node.
    members: Vec<Vec<(usize, usize)>>,
    neighbors: Vec<Vec<usize>>,
    /// Node of each lattice cell.
    node_of: Vec<Vec<Option<usize>>>,
}

impl<T: Scalar> SimplexGraph<T> {
    fn build(lats: &[FaceLattice<T>]) -> Self {
        let res = lats[0].resolution;
        let mut index: HashMap<[u32; N_OILS], usize> = HashMap::new();
        let mut cells = Vec::new();
        let mut values = Vec::new();
        let mut members: Vec<Vec<(usize, usize)>> = Vec::new();
        let mut node_of = vec![vec![None; res * res]; N_OILS];
        // faces, then i, then j: the first occurrence of a recipe is its canonical cell
        for (face, lat) in lats.iter().enumerate() {
            for i in 0..res {
                for j in 0..res - i {
                    let comp = cell_composition(face, res, i, j).expect("valid cell");
                    let node = *index.entry(comp).or_insert_with(|| {
                        cells.push(Cell { face, i, j });
                        values.push(lat.values[i * res + j]);
                        members.push(Vec::new());
                        cells.len() - 1
                    });
                    members[node].push((face, i * res + j));
                    node_of[face][i * res + j] = Some(node);
                }
            }
        }
        let neighbors = members
            .iter()
            .enumerate()
            .map(|(node, ms)| {
                let mut ns: Vec<usize> = ms
                    .iter()
                    .flat_map(|&(face, flat)| {
                        let lat = &lats[face];
                        let node_of = &node_of;
                        lat.valid_neighbors(flat / res, flat % res)
                            .map(move |(a, b)| node_of[face][a * res + b].expect("valid neighbor"))
                    })
                    .filter(|&n| n != node)
                    .collect();
                ns.sort_unstable();
                ns.dedup();
                ns
            })
            .collect();
        SimplexGraph {
            cells,
            values,
            members,
            neighbors,
            node_of,
        }
    }

    /// Steepest-ascent successor: the highest node of the closed neighborhood,
    /// ties broken by the smallest canonical cell.
    fn ascent(&self, node: usize) -> usize {
        let mut best = node;
        for &n in &self.neighbors[node] {
            let (vn, vb) = (self.values[n], self.values[best]);
            if vn > vb || (vn == vb && self.cells[n] < self.cells[best]) {
                best = n;
            }
        }
        best
    }
}

/// Partitions the four face lattices into fitness islands.
///
/// Each node's steepest-ascent successor is computed once. Starting from every
/// fixed point of the ascent (a local maximum), an active set grows the island
/// by adding every neighbor whose successor is the location being expanded, so
/// a cell joins the island its ascent path ends in. Where two faces describe
/// the same recipe, the value of the canonical cell is used.
pub fn catchment_map<T: Scalar>(lats: &[FaceLattice<T>]) -> Result<IslandMap<T>, LandscapeError> {
    if lats.len() != N_OILS {
        return Err(LandscapeError::LatticeMismatch);
    }
    let res = lats[0].resolution;
    if lats.iter().enumerate().any(|(k, l)| l.resolution != res || l.face != k) {
        return Err(LandscapeError::LatticeMismatch);
    }
    let graph = SimplexGraph::build(lats);
    let n = graph.cells.len();
    let successor: Vec<usize> = (0..n).into_par_iter().map(|u| graph.ascent(u)).collect();

    let mut maxima: Vec<usize> = (0..n).filter(|&u| successor[u] == u).collect();
    maxima.sort_by(|&a, &b| {
        graph.values[b]
            .partial_cmp(&graph.values[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(graph.cells[a].cmp(&graph.cells[b]))
    });

    let mut node_label = vec![usize::MAX; n];
    let mut islands = Vec::with_capacity(maxima.len());
    for (rank, &m) in maxima.iter().enumerate() {
        node_label[m] = rank;
        let mut active = vec![m];
        let mut point_count = 0;
        while let Some(u) = active.pop() {
            point_count += 1;
            for &v in &graph.neighbors[u] {
                if successor[v] == u && v != u {
                    node_label[v] = rank;
                    active.push(v);
                }
            }
        }
        let cell = graph.cells[m];
        let comp = cell_composition(cell.face, res, cell.i, cell.j).expect("valid cell");
        islands.push(Island {
            rank,
            max_cell: cell,
            max_value: graph.values[m],
            max_location: composition_point(&comp, res),
            cell_count: 0,
            point_count,
        });
    }

    let mut labels = vec![vec![None; res * res]; N_OILS];
    for (node, ms) in graph.members.iter().enumerate() {
        let label = node_label[node];
        debug_assert_ne!(label, usize::MAX, "every node drains to a maximum");
        islands[label].cell_count += ms.len();
        for &(face, flat) in ms {
            labels[face][flat] = Some(label);
        }
    }
    debug_assert!(graph.node_of.iter().flatten().flatten().all(|&u| u < n));

    Ok(IslandMap {
        resolution: res,
        labels,
        islands,
    })
}
