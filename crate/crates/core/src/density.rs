//! Pushforward density on the generated manifold, per-region volume change,
//! differential entropy and log-likelihood of manifold points.

use std::f64::consts::PI;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, OffManifoldKind, Result};
use crate::geometry::{region_inverse, search_inverse, InverseSearch};
use crate::latent::{LatentDistribution, LatentKind};
use crate::linalg::{self, SortedSvd};
use crate::network::{AffineMap, Anchor, GeneratorNetwork, RegionCode};
use crate::partition::{sample_distinct_regions, task_rng};

/// Batches used for the batch-means standard error of Monte Carlo estimates.
pub const MC_BATCHES: usize = 10;
/// Default relative spread under which region volume scales count as equal.
pub const DEFAULT_UNIFORMITY_TOL: f64 = 1e-6;

/// Volume change `latent -> manifold` of one region: the product of the
/// singular values above the rank tolerance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VolumeScale {
    pub scale: f64,
    pub log_scale: f64,
    pub rank: usize,
    /// Rank below the latent dimension; the density is singular there.
    pub degenerate: bool,
}

pub fn volume_scale(map: &AffineMap, rel_tol: f64) -> VolumeScale {
    let sv = linalg::singular_values(&map.slope);
    let rank = linalg::rank_from_singular_values(&sv, rel_tol);
    let log_scale: f64 = sv[..rank].iter().map(|s| s.ln()).sum();
    VolumeScale {
        scale: log_scale.exp(),
        log_scale,
        rank,
        degenerate: rank < map.latent_dim(),
    }
}

/// A point of the manifold resolved to its region and latent preimage.
#[derive(Debug, Clone)]
pub struct ManifoldPoint {
    pub z: DVector<f64>,
    pub code: RegionCode,
    pub map: AffineMap,
    pub log_volume: f64,
    pub residual: f64,
}

/// Outcome of locating `x` on the manifold.
#[derive(Debug, Clone)]
pub enum Located {
    On(ManifoldPoint),
    Off {
        best_residual: f64,
        kind: OffManifoldKind,
        best_z: DVector<f64>,
    },
}

fn resolve_region(
    net: &GeneratorNetwork,
    code: RegionCode,
    x: &DVector<f64>,
    rel_tol: f64,
) -> Result<ManifoldPoint> {
    let map = net.affine_params(&code)?;
    let z = region_inverse(&map, x, rel_tol)?;
    let vol = volume_scale(&map, rel_tol);
    let residual = (map.apply(&z) - x).amax();
    Ok(ManifoldPoint {
        z,
        code,
        map,
        log_volume: vol.log_scale,
        residual,
    })
}

/// Finds the region whose image contains `x`. A hint (a latent point or a
/// code) is tried first; the multi-start search runs when the hint does not
/// pan out.
pub fn locate(
    net: &GeneratorNetwork,
    x: &DVector<f64>,
    hint: Option<Anchor<'_>>,
    search: &InverseSearch,
) -> Result<Located> {
    if let Some(hint) = hint {
        let code = match hint {
            Anchor::Latent(z) => net.code(z)?,
            Anchor::Code(c) => c.clone(),
        };
        let point = resolve_region(net, code, x, search.rel_tol)?;
        if point.residual <= search.residual_tol && net.code(&point.z)? == point.code {
            return Ok(Located::On(point));
        }
    }
    let outcome = search_inverse(net, x, search)?;
    match outcome.found {
        Some(found) => {
            let point = resolve_region(net, found.code, x, search.rel_tol)?;
            Ok(Located::On(point))
        }
        None => Ok(Located::Off {
            best_residual: outcome.best_residual,
            kind: outcome.kind,
            best_z: outcome.best_z,
        }),
    }
}

fn log_density_of(dist: &LatentDistribution, point: &ManifoldPoint) -> f64 {
    dist.log_pdf(&point.z) - point.log_volume
}

/// `p_z(G_w^{-1}(x)) / sqrt(det(A_w^T A_w))` for the region whose image holds
/// `x`; zero for points certified off the manifold.
pub fn density_at(
    net: &GeneratorNetwork,
    dist: &LatentDistribution,
    x: &DVector<f64>,
    hint: Option<Anchor<'_>>,
    search: &InverseSearch,
) -> Result<f64> {
    check_dist(net, dist)?;
    match locate(net, x, hint, search)? {
        Located::On(point) => Ok(log_density_of(dist, &point).exp()),
        Located::Off {
            kind: OffManifoldKind::Certified,
            ..
        } => Ok(0.0),
        Located::Off { best_residual, kind, .. } => Err(Error::NotOnManifold { best_residual, kind }),
    }
}

/// Closed-form Gaussian-latent density through the region pseudoinverse.
pub fn gaussian_density_at(
    net: &GeneratorNetwork,
    x: &DVector<f64>,
    hint: Option<Anchor<'_>>,
    search: &InverseSearch,
) -> Result<f64> {
    let point = match locate(net, x, hint, search)? {
        Located::On(point) => point,
        Located::Off {
            kind: OffManifoldKind::Certified,
            ..
        } => return Ok(0.0),
        Located::Off { best_residual, kind, .. } => {
            return Err(Error::NotOnManifold { best_residual, kind })
        }
    };
    gaussian_region_density(&point.map, x, search.rel_tol)
}

/// `exp(-1/2 |A^+ (x - b)|^2) / sqrt((2 pi)^S det(A^T A))` for one region.
pub fn gaussian_region_density(map: &AffineMap, x: &DVector<f64>, rel_tol: f64) -> Result<f64> {
    let s = map.latent_dim();
    let svd = SortedSvd::new(&map.slope);
    let rank = svd.rank(rel_tol);
    if rank < s {
        return Err(Error::NotInvertible { rank, required: s });
    }
    let pinv = svd.pseudoinverse(rank);
    let w = pinv * (x - &map.offset);
    let det_ata: f64 = svd.singular_values[..rank].iter().map(|v| v * v).product();
    Ok((-0.5 * w.norm_squared()).exp() / ((2.0 * PI).powi(s as i32) * det_ata).sqrt())
}

/// Result of a likelihood query.
#[derive(Debug, Clone, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum LikelihoodReport {
    OnManifold {
        log_likelihood: f64,
        residual: f64,
        code_hash: String,
    },
    OffManifold {
        off_manifold_residual: f64,
        kind: OffManifoldKind,
        /// Likelihood of the best search point's own region, when full rank.
        nearest_region_log_likelihood: Option<f64>,
    },
}

pub fn likelihood_report(
    net: &GeneratorNetwork,
    dist: &LatentDistribution,
    x: &DVector<f64>,
    search: &InverseSearch,
) -> Result<LikelihoodReport> {
    check_dist(net, dist)?;
    match locate(net, x, None, search)? {
        Located::On(point) => Ok(LikelihoodReport::OnManifold {
            log_likelihood: log_density_of(dist, &point),
            residual: point.residual,
            code_hash: point.code.hash_hex(),
        }),
        Located::Off {
            best_residual,
            kind,
            best_z,
        } => {
            let map = net.affine_params(&best_z)?;
            let vol = volume_scale(&map, search.rel_tol);
            let nearest = (!vol.degenerate).then(|| dist.log_pdf(&best_z) - vol.log_scale);
            Ok(LikelihoodReport::OffManifold {
                off_manifold_residual: best_residual,
                kind,
                nearest_region_log_likelihood: nearest,
            })
        }
    }
}

/// `log p_z(G^{-1}(x)) - log sqrt(det(A^T A))`; errors for off-manifold points.
pub fn log_likelihood(
    net: &GeneratorNetwork,
    dist: &LatentDistribution,
    x: &DVector<f64>,
    search: &InverseSearch,
) -> Result<f64> {
    match likelihood_report(net, dist, x, search)? {
        LikelihoodReport::OnManifold { log_likelihood, .. } => Ok(log_likelihood),
        LikelihoodReport::OffManifold {
            off_manifold_residual,
            kind,
            ..
        } => Err(Error::NotOnManifold {
            best_residual: off_manifold_residual,
            kind,
        }),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EntropyEstimate {
    pub entropy: f64,
    pub std_err: f64,
    pub degenerate_fraction: f64,
    pub latent_entropy: f64,
    pub mean_log_volume: f64,
    pub samples_used: usize,
    pub samples_degenerate: usize,
}

#[derive(Default, Clone, Copy)]
struct BatchSum {
    sum: f64,
    used: usize,
    degenerate: usize,
}

/// Differential entropy (nats) of the output distribution: the latent entropy
/// plus the Monte Carlo mean of the log volume scale over latent draws.
/// Draws falling in rank-deficient regions are excluded and counted. Batch `b`
/// uses its own RNG stream, so the value does not depend on thread count.
pub fn entropy(
    net: &GeneratorNetwork,
    dist: &LatentDistribution,
    n_mc: usize,
    seed: u64,
    rel_tol: f64,
) -> Result<EntropyEstimate> {
    if n_mc == 0 {
        return Err(Error::Parameter("n_mc must be at least 1".into()));
    }
    check_dist(net, dist)?;
    let batches = MC_BATCHES.min(n_mc);
    let sums = (0..batches)
        .into_par_iter()
        .map(|b| {
            let size = n_mc / batches + usize::from(b < n_mc % batches);
            let mut rng = task_rng(seed, b as u64);
            let mut acc = BatchSum::default();
            for _ in 0..size {
                let z = dist.sample(&mut rng);
                let vol = volume_scale(&net.affine_params(&z)?, rel_tol);
                if vol.degenerate {
                    acc.degenerate += 1;
                } else {
                    acc.sum += vol.log_scale;
                    acc.used += 1;
                }
            }
            Ok(acc)
        })
        .collect::<Result<Vec<BatchSum>>>()?;

    let used: usize = sums.iter().map(|b| b.used).sum();
    let degenerate: usize = sums.iter().map(|b| b.degenerate).sum();
    if used == 0 {
        return Err(Error::DegenerateMap(
            "every sampled region is rank-deficient; the output density is singular".into(),
        ));
    }
    let mean = sums.iter().map(|b| b.sum).sum::<f64>() / used as f64;
    let means: Vec<f64> = sums
        .iter()
        .filter(|b| b.used > 0)
        .map(|b| b.sum / b.used as f64)
        .collect();
    let std_err = if means.len() > 1 {
        let k = means.len() as f64;
        let m = means.iter().sum::<f64>() / k;
        let var = means.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (k - 1.0);
        (var / k).sqrt()
    } else {
        0.0
    };
    Ok(EntropyEstimate {
        entropy: dist.entropy() + mean,
        std_err,
        degenerate_fraction: degenerate as f64 / n_mc as f64,
        latent_entropy: dist.entropy(),
        mean_log_volume: mean,
        samples_used: used,
        samples_degenerate: degenerate,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct UniformityReport {
    pub uniform: bool,
    pub min_scale: f64,
    pub max_scale: f64,
    /// `max / min - 1` over full-rank regions.
    pub spread: f64,
    pub regions: usize,
    pub degenerate: usize,
}

/// Uniform-latent check: the output is uniform on the manifold iff every
/// region met has the same positive volume scale.
pub fn uniformity_check(
    net: &GeneratorNetwork,
    dist: &LatentDistribution,
    n_regions: usize,
    rel_spread_tol: f64,
    seed: u64,
    rel_tol: f64,
) -> Result<UniformityReport> {
    if dist.kind != LatentKind::UniformUnitCube {
        return Err(Error::Parameter("uniformity check needs the uniform latent distribution".into()));
    }
    let regions = sample_distinct_regions(net, dist, n_regions, n_regions.saturating_mul(50), seed)?;
    let mut min_scale = f64::INFINITY;
    let mut max_scale = 0.0f64;
    let mut degenerate = 0;
    for r in &regions {
        let vol = volume_scale(&net.affine_params(&r.code)?, rel_tol);
        if vol.degenerate {
            degenerate += 1;
        } else {
            min_scale = min_scale.min(vol.scale);
            max_scale = max_scale.max(vol.scale);
        }
    }
    let spread = if degenerate == regions.len() {
        f64::INFINITY
    } else {
        max_scale / min_scale - 1.0
    };
    Ok(UniformityReport {
        uniform: degenerate == 0 && spread <= rel_spread_tol,
        min_scale,
        max_scale,
        spread,
        regions: regions.len(),
        degenerate,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct RegionLogDet {
    pub code_hash: String,
    /// `log sqrt(det(A^T A))`.
    pub log_det: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct LogDetSample {
    pub regions: Vec<RegionLogDet>,
    /// Rank-deficient regions, whose log-determinant is `-inf`.
    pub degenerate: usize,
}

impl LogDetSample {
    pub fn values(&self) -> Vec<f64> {
        self.regions.iter().map(|r| r.log_det).collect()
    }
}

/// Log volume scale of up to `n_regions` distinct regions met by sampling
/// `dist` (at most `50 * n_regions` draws).
pub fn logdet_histogram(
    net: &GeneratorNetwork,
    dist: &LatentDistribution,
    n_regions: usize,
    seed: u64,
    rel_tol: f64,
) -> Result<LogDetSample> {
    let regions = sample_distinct_regions(net, dist, n_regions, n_regions.saturating_mul(50), seed)?;
    let vols = regions
        .par_iter()
        .map(|r| Ok((r.code.hash_hex(), volume_scale(&net.affine_params(&r.code)?, rel_tol))))
        .collect::<Result<Vec<_>>>()?;
    let mut out = LogDetSample {
        regions: Vec::with_capacity(vols.len()),
        degenerate: 0,
    };
    for (code_hash, vol) in vols {
        if vol.degenerate {
            out.degenerate += 1;
        } else {
            out.regions.push(RegionLogDet {
                code_hash,
                log_det: vol.log_scale,
            });
        }
    }
    Ok(out)
}

fn check_dist(net: &GeneratorNetwork, dist: &LatentDistribution) -> Result<()> {
    if dist.dim != net.latent_dim() {
        return Err(Error::Shape(format!(
            "latent distribution has dimension {}, network expects {}",
            dist.dim,
            net.latent_dim()
        )));
    }
    Ok(())
}
