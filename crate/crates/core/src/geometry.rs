//! Per-region subspace analysis: intrinsic dimension and its layerwise bound,
//! column disentanglement, region and global inverses, and the largest
//! principal angle between region images.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, OffManifoldKind, Result};
use crate::latent::LatentDistribution;
use crate::linalg::{self, SortedSvd};
use crate::network::{AffineMap, GeneratorNetwork, RegionCode};
use crate::partition::{task_rng, RegionSample};

/// Rank information of a region slope matrix.
#[derive(Debug, Clone)]
pub struct SubspaceInfo {
    pub dimension: usize,
    /// Nonincreasing, length `min(D, S)`.
    pub singular_values: Vec<f64>,
    /// Columns of the slope matrix.
    pub basis: DMatrix<f64>,
}

pub fn subspace_info(map: &AffineMap, rel_tol: f64) -> SubspaceInfo {
    let singular_values = linalg::singular_values(&map.slope);
    SubspaceInfo {
        dimension: linalg::rank_from_singular_values(&singular_values, rel_tol),
        singular_values,
        basis: map.slope.clone(),
    }
}

/// Rank of the slope: singular values above `rel_tol * sigma_max`.
pub fn region_dimension(map: &AffineMap, rel_tol: f64) -> usize {
    linalg::rank(&map.slope, rel_tol)
}

/// `min(S, min_l rank(diag(q_l) W_l))` over the nonlinear layers.
pub fn dimension_upper_bound(net: &GeneratorNetwork, code: &RegionCode, rel_tol: f64) -> Result<usize> {
    // validates the code against the network
    net.freeze(code)?;
    let mut bound = net.latent_dim();
    for seg in code.segments() {
        let layer = &net.layers()[seg.layer];
        let states = &code.states()[seg.offset..seg.offset + seg.len];
        let mut gated = layer.weights().clone();
        for (row, &on) in states.iter().enumerate() {
            if !on {
                gated.row_mut(row).scale_mut(seg.alpha);
            }
        }
        bound = bound.min(linalg::rank(&gated, rel_tol));
    }
    Ok(bound)
}

#[derive(Debug, Clone, Serialize)]
pub struct RegionDimension {
    pub code_hash: String,
    pub dimension: usize,
    pub upper_bound: usize,
    pub full_dimensional: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum InjectivityCheck {
    /// Non-intersection of region images is not decided.
    NotChecked,
}

#[derive(Debug, Clone, Serialize)]
pub struct BijectivityReport {
    pub regions: Vec<RegionDimension>,
    pub degenerate_count: usize,
    pub degenerate_fraction: f64,
    pub global_injectivity: InjectivityCheck,
}

/// Flags each region as full-dimensional (`dim = S`) or degenerate.
pub fn bijectivity_report(
    net: &GeneratorNetwork,
    regions: &[RegionSample],
    rel_tol: f64,
) -> Result<BijectivityReport> {
    if regions.is_empty() {
        return Err(Error::Parameter("at least one region is required".into()));
    }
    let s = net.latent_dim();
    let entries = regions
        .iter()
        .map(|r| {
            let map = net.affine_params(&r.code)?;
            let dimension = region_dimension(&map, rel_tol);
            Ok(RegionDimension {
                code_hash: r.code.hash_hex(),
                dimension,
                upper_bound: dimension_upper_bound(net, &r.code, rel_tol)?,
                full_dimensional: dimension == s,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let degenerate_count = entries.iter().filter(|e| !e.full_dimensional).count();
    Ok(BijectivityReport {
        degenerate_fraction: degenerate_count as f64 / entries.len() as f64,
        degenerate_count,
        regions: entries,
        global_injectivity: InjectivityCheck::NotChecked,
    })
}

/// Column-cosine statistics of a slope matrix.
#[derive(Debug, Clone)]
pub struct Disentanglement {
    /// Sum of `|cos|` over ordered pairs of distinct nonzero columns.
    pub sum_offdiag: f64,
    /// `Q_ij = |cos(a_i, a_j)|` over the nonzero columns.
    pub q: DMatrix<f64>,
    /// `||Q - I||_2`, the spectral variant of the score.
    pub spectral_deviation: f64,
    /// Indices of all-zero columns, excluded from `q`.
    pub zero_columns: Vec<usize>,
}

pub fn disentanglement_score(map: &AffineMap) -> Result<Disentanglement> {
    let a = &map.slope;
    let norms: Vec<f64> = a.column_iter().map(|c| c.norm()).collect();
    let kept: Vec<usize> = (0..a.ncols()).filter(|&j| norms[j] > 0.0).collect();
    if kept.is_empty() {
        return Err(Error::DegenerateMap("slope matrix is identically zero".into()));
    }
    let zero_columns = (0..a.ncols()).filter(|&j| norms[j] == 0.0).collect();
    let unit = DMatrix::from_fn(a.nrows(), kept.len(), |r, c| a[(r, kept[c])] / norms[kept[c]]);
    let mut q = (unit.transpose() * &unit).abs();
    for i in 0..kept.len() {
        q[(i, i)] = 1.0;
    }
    let mut sum_offdiag = 0.0;
    for i in 0..kept.len() {
        for j in 0..kept.len() {
            if i != j {
                sum_offdiag += q[(i, j)];
            }
        }
    }
    let deviation = &q - DMatrix::identity(kept.len(), kept.len());
    Ok(Disentanglement {
        sum_offdiag,
        spectral_deviation: linalg::spectral_norm(&deviation),
        q,
        zero_columns,
    })
}

/// Least-squares preimage `(A^T A)^{-1} A^T (x - b)` of a full-column-rank map.
pub fn region_inverse(map: &AffineMap, x: &DVector<f64>, rel_tol: f64) -> Result<DVector<f64>> {
    if x.len() != map.output_dim() {
        return Err(Error::Shape(format!(
            "point has length {}, map output dimension is {}",
            x.len(),
            map.output_dim()
        )));
    }
    let svd = SortedSvd::new(&map.slope);
    let rank = svd.rank(rel_tol);
    let s = map.latent_dim();
    if rank < s {
        return Err(Error::NotInvertible { rank, required: s });
    }
    Ok(svd.solve(&(x - &map.offset), rank))
}

/// Settings for [`global_inverse`].
#[derive(Debug, Clone)]
pub struct InverseSearch {
    /// Random restarts drawn from `dist` after `initial`.
    pub restarts: usize,
    pub max_iter: usize,
    /// Success threshold on `||G(z) - x||_inf`.
    pub residual_tol: f64,
    pub rel_tol: f64,
    pub dist: LatentDistribution,
    pub seed: u64,
    pub initial: Option<DVector<f64>>,
}

impl InverseSearch {
    pub fn new(dist: LatentDistribution, seed: u64) -> Self {
        InverseSearch {
            restarts: 32,
            max_iter: 100,
            residual_tol: 1e-6,
            rel_tol: linalg::DEFAULT_REL_TOL,
            dist,
            seed,
            initial: None,
        }
    }

    pub fn with_initial(mut self, z0: DVector<f64>) -> Self {
        self.initial = Some(z0);
        self
    }

    pub fn with_restarts(mut self, restarts: usize) -> Self {
        self.restarts = restarts;
        self
    }
}

#[derive(Debug, Clone)]
pub struct InverseResult {
    pub z: DVector<f64>,
    pub code: RegionCode,
    pub residual: f64,
    pub iterations: usize,
    /// Index of the successful start (0 is `initial` when one was given).
    pub start: usize,
}

struct StartOutcome {
    z: DVector<f64>,
    residual: f64,
    iterations: usize,
    min_span_residual: f64,
}

fn residual_norms(net: &GeneratorNetwork, z: &DVector<f64>, x: &DVector<f64>) -> Result<(f64, f64)> {
    let diff = net.forward(z)? - x;
    Ok((diff.norm(), diff.amax()))
}

/// Region-hopping inverse from one start. Each step solves the current
/// region's affine system for `x`; the full step is taken when it lowers the
/// residual, otherwise the step is halved until it does.
fn invert_from(
    net: &GeneratorNetwork,
    x: &DVector<f64>,
    start: DVector<f64>,
    search: &InverseSearch,
) -> Result<StartOutcome> {
    let mut z = start;
    let (mut r2, mut rinf) = residual_norms(net, &z, x)?;
    let mut min_span_residual = f64::INFINITY;
    let mut iterations = 0;
    while iterations < search.max_iter && rinf > search.residual_tol {
        iterations += 1;
        let map = net.affine_params(&z)?;
        let svd = SortedSvd::new(&map.slope);
        let rank = svd.rank(search.rel_tol);
        if rank == 0 {
            break;
        }
        let target = svd.solve(&(x - &map.offset), rank);
        min_span_residual = min_span_residual.min((map.apply(&target) - x).amax());

        let step = &target - &z;
        let mut scale = 1.0;
        let mut moved = false;
        for _ in 0..40 {
            let trial = &z + &step * scale;
            let (t2, tinf) = residual_norms(net, &trial, x)?;
            if t2 < r2 {
                z = trial;
                r2 = t2;
                rinf = tinf;
                moved = true;
                break;
            }
            scale *= 0.5;
        }
        if !moved {
            break;
        }
    }
    Ok(StartOutcome {
        z,
        residual: rinf,
        iterations,
        min_span_residual,
    })
}

/// Everything a multi-start inverse search learned about `x`.
#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub found: Option<InverseResult>,
    /// Latent point with the smallest output residual over all starts.
    pub best_z: DVector<f64>,
    pub best_residual: f64,
    /// Meaningful only when `found` is `None`.
    pub kind: OffManifoldKind,
}

/// Runs the multi-start search without turning failure into an error.
pub fn search_inverse(net: &GeneratorNetwork, x: &DVector<f64>, search: &InverseSearch) -> Result<SearchOutcome> {
    if x.len() != net.output_dim() {
        return Err(Error::Shape(format!(
            "point has length {}, network output dimension is {}",
            x.len(),
            net.output_dim()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("point has non-finite entries".into()));
    }
    if search.dist.dim != net.latent_dim() {
        return Err(Error::Shape("search distribution does not match latent dimension".into()));
    }
    let mut rng = task_rng(search.seed, 0);
    let starts = search
        .initial
        .iter()
        .cloned()
        .chain((0..search.restarts).map(|_| search.dist.sample(&mut rng)));

    let mut best: Option<StartOutcome> = None;
    let mut min_span = f64::INFINITY;
    for (idx, z0) in starts.enumerate() {
        let outcome = invert_from(net, x, z0, search)?;
        if outcome.residual <= search.residual_tol {
            let code = net.code(&outcome.z)?;
            return Ok(SearchOutcome {
                best_z: outcome.z.clone(),
                best_residual: outcome.residual,
                kind: OffManifoldKind::SearchFailure,
                found: Some(InverseResult {
                    z: outcome.z,
                    code,
                    residual: outcome.residual,
                    iterations: outcome.iterations,
                    start: idx,
                }),
            });
        }
        min_span = min_span.min(outcome.min_span_residual);
        if best.as_ref().is_none_or(|b| outcome.residual < b.residual) {
            best = Some(outcome);
        }
    }
    let best = best.ok_or_else(|| Error::Parameter("inverse search needs at least one start".into()))?;
    let kind = if min_span > search.residual_tol {
        OffManifoldKind::Certified
    } else {
        OffManifoldKind::SearchFailure
    };
    Ok(SearchOutcome {
        found: None,
        best_z: best.z,
        best_residual: best.residual,
        kind,
    })
}

/// Finds `z` with `G(z) = x` by region hopping from `search.initial` and
/// then from random restarts.
pub fn global_inverse(net: &GeneratorNetwork, x: &DVector<f64>, search: &InverseSearch) -> Result<InverseResult> {
    let outcome = search_inverse(net, x, search)?;
    outcome.found.ok_or(Error::NotOnManifold {
        best_residual: outcome.best_residual,
        kind: outcome.kind,
    })
}

/// How the spectral norm of a projector difference is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProjectorNorm {
    /// Largest singular value of the `D x D` difference.
    Full,
    /// Same quantity computed inside the joint span of both bases (size <= 2S).
    Reduced,
    /// `Reduced` when `D > 4S`, otherwise `Full`.
    Auto,
}

/// `||Q_a Q_a^T - Q_b Q_b^T||_2` for orthonormal bases `q_a`, `q_b`.
pub fn projector_gap(q_a: &DMatrix<f64>, q_b: &DMatrix<f64>, method: ProjectorNorm) -> f64 {
    let d = q_a.nrows();
    let k = q_a.ncols().max(q_b.ncols());
    let reduced = match method {
        ProjectorNorm::Full => false,
        ProjectorNorm::Reduced => true,
        ProjectorNorm::Auto => d > 4 * k,
    };
    if !reduced {
        let diff = q_a * q_a.transpose() - q_b * q_b.transpose();
        return linalg::spectral_norm(&diff);
    }
    let joint = DMatrix::from_fn(d, q_a.ncols() + q_b.ncols(), |r, c| {
        if c < q_a.ncols() {
            q_a[(r, c)]
        } else {
            q_b[(r, c - q_a.ncols())]
        }
    });
    let svd = SortedSvd::new(&joint);
    let m = svd.range_basis(svd.rank(1e-12));
    let ca = m.transpose() * q_a;
    let cb = m.transpose() * q_b;
    linalg::spectral_norm(&(&ca * ca.transpose() - &cb * cb.transpose()))
}

fn column_space(map: &AffineMap, rel_tol: f64) -> Result<DMatrix<f64>> {
    let svd = SortedSvd::new(&map.slope);
    let rank = svd.rank(rel_tol);
    let s = map.latent_dim();
    if rank < s {
        return Err(Error::NotInvertible { rank, required: s });
    }
    Ok(svd.range_basis(rank))
}

/// Largest principal angle between the images of two full-column-rank maps:
/// `arcsin ||P(A_a) - P(A_b)||_2`, in `[0, pi/2]`.
pub fn principal_angle(map_a: &AffineMap, map_b: &AffineMap, rel_tol: f64) -> Result<f64> {
    principal_angle_with(map_a, map_b, rel_tol, ProjectorNorm::Auto)
}

pub fn principal_angle_with(
    map_a: &AffineMap,
    map_b: &AffineMap,
    rel_tol: f64,
    method: ProjectorNorm,
) -> Result<f64> {
    if map_a.output_dim() != map_b.output_dim() || map_a.latent_dim() != map_b.latent_dim() {
        return Err(Error::Shape("maps have different shapes".into()));
    }
    let qa = column_space(map_a, rel_tol)?;
    let qb = column_space(map_b, rel_tol)?;
    Ok(projector_gap(&qa, &qb, method).clamp(0.0, 1.0).asin())
}
