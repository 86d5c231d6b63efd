//! Monte Carlo exploration of the latent-space partition: distinct regions,
//! boundary crossings along segments, and adjacent region pairs.

use std::collections::HashMap;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::latent::LatentDistribution;
use crate::network::{GeneratorNetwork, RegionCode};

/// Default bracketing width in segment parameter.
pub const DEFAULT_CROSSING_TOL: f64 = 1e-10;
/// Uniform subintervals scanned before bisection starts.
pub const DEFAULT_GRID: usize = 16;
/// Attempts allowed per requested adjacent pair.
pub const PAIR_RETRY_CAP: usize = 100;

/// A distinct region met while sampling.
#[derive(Debug, Clone)]
pub struct RegionSample {
    pub code: RegionCode,
    pub witness: DVector<f64>,
    pub count: usize,
}

/// A boundary crossing bracketed in `[t_lo, t_hi]` along a segment.
#[derive(Debug, Clone)]
pub struct BoundaryCrossing {
    pub t: f64,
    pub t_lo: f64,
    pub t_hi: f64,
    pub code_before: RegionCode,
    pub code_after: RegionCode,
    pub flipped_bits: Vec<usize>,
}

impl BoundaryCrossing {
    /// A crossing whose bracket still changes more than one unit.
    pub fn is_degenerate(&self) -> bool {
        self.flipped_bits.len() != 1
    }
}

/// RNG for task `index` of a study seeded with `seed`. Each task gets its own
/// ChaCha stream, so results do not depend on how tasks are scheduled.
pub fn task_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Draws `n_points` latent vectors and groups them by exact code equality.
/// Regions are returned in order of first appearance.
pub fn sample_regions(
    net: &GeneratorNetwork,
    dist: &LatentDistribution,
    n_points: usize,
    seed: u64,
) -> Result<Vec<RegionSample>> {
    if n_points == 0 {
        return Err(Error::Parameter("n_points must be at least 1".into()));
    }
    check_dist(net, dist)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points: Vec<DVector<f64>> = (0..n_points).map(|_| dist.sample(&mut rng)).collect();
    let codes = points
        .par_iter()
        .map(|z| net.code(z))
        .collect::<Result<Vec<_>>>()?;

    let mut index: HashMap<RegionCode, usize> = HashMap::new();
    let mut regions: Vec<RegionSample> = Vec::new();
    for (z, code) in points.into_iter().zip(codes) {
        match index.get(&code) {
            Some(&i) => regions[i].count += 1,
            None => {
                index.insert(code.clone(), regions.len());
                regions.push(RegionSample {
                    code,
                    witness: z,
                    count: 1,
                });
            }
        }
    }
    Ok(regions)
}

/// Keeps sampling points until `n_regions` distinct regions are found or
/// `max_points` points have been drawn.
pub fn sample_distinct_regions(
    net: &GeneratorNetwork,
    dist: &LatentDistribution,
    n_regions: usize,
    max_points: usize,
    seed: u64,
) -> Result<Vec<RegionSample>> {
    if n_regions == 0 {
        return Err(Error::Parameter("n_regions must be at least 1".into()));
    }
    check_dist(net, dist)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut index: HashMap<RegionCode, usize> = HashMap::new();
    let mut regions: Vec<RegionSample> = Vec::new();
    let mut drawn = 0;
    let batch = n_regions.clamp(64, 4096);
    while regions.len() < n_regions && drawn < max_points {
        let take = batch.min(max_points - drawn);
        let points: Vec<DVector<f64>> = (0..take).map(|_| dist.sample(&mut rng)).collect();
        drawn += take;
        let codes = points
            .par_iter()
            .map(|z| net.code(z))
            .collect::<Result<Vec<_>>>()?;
        for (z, code) in points.into_iter().zip(codes) {
            match index.get(&code) {
                Some(&i) => regions[i].count += 1,
                None if regions.len() < n_regions => {
                    index.insert(code.clone(), regions.len());
                    regions.push(RegionSample {
                        code,
                        witness: z,
                        count: 1,
                    });
                }
                None => {}
            }
        }
    }
    Ok(regions)
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

struct Segment<'a> {
    net: &'a GeneratorNetwork,
    start: &'a DVector<f64>,
    delta: DVector<f64>,
    tol: f64,
}

impl Segment<'_> {
    fn point(&self, t: f64) -> DVector<f64> {
        self.start + &self.delta * t
    }

    fn code(&self, t: f64) -> Result<RegionCode> {
        self.net.code(&self.point(t))
    }

    /// Bisects `[t0, t1]` and appends every crossing found, in order of `t`.
    /// With `first_only` the search stops after the earliest crossing.
    fn bisect(
        &self,
        (t0, c0): (f64, &RegionCode),
        (t1, c1): (f64, &RegionCode),
        first_only: bool,
        out: &mut Vec<BoundaryCrossing>,
    ) -> Result<()> {
        if c0 == c1 || (first_only && !out.is_empty()) {
            return Ok(());
        }
        let width = t1 - t0;
        let flipped = c0.flipped_bits(c1)?;
        let mid = 0.5 * (t0 + t1);
        // Multi-bit brackets get refined below the tolerance before being
        // declared degenerate.
        let floor = self.tol * 1e-3;
        let done = width <= self.tol && (flipped.len() == 1 || width <= floor);
        if done || mid <= t0 || mid >= t1 {
            out.push(BoundaryCrossing {
                t: mid,
                t_lo: t0,
                t_hi: t1,
                code_before: c0.clone(),
                code_after: c1.clone(),
                flipped_bits: flipped,
            });
            return Ok(());
        }
        let cm = self.code(mid)?;
        self.bisect((t0, c0), (mid, &cm), first_only, out)?;
        self.bisect((mid, &cm), (t1, c1), first_only, out)
    }

    fn scan(&self, grid: usize, end: &DVector<f64>, first_only: bool) -> Result<Vec<BoundaryCrossing>> {
        let grid = grid.max(1);
        let mut out = Vec::new();
        let mut prev = (0.0, self.net.code(self.start)?);
        for k in 1..=grid {
            let t = k as f64 / grid as f64;
            let code = if k == grid {
                self.net.code(end)?
            } else {
                self.code(t)?
            };
            self.bisect((prev.0, &prev.1), (t, &code), first_only, &mut out)?;
            if first_only && !out.is_empty() {
                break;
            }
            prev = (t, code);
        }
        Ok(out)
    }
}

/// All crossings along `z_start -> z_end`, bracketed to width `tol`.
pub fn find_crossings(
    net: &GeneratorNetwork,
    z_start: &DVector<f64>,
    z_end: &DVector<f64>,
    tol: f64,
) -> Result<Vec<BoundaryCrossing>> {
    find_crossings_with_grid(net, z_start, z_end, tol, DEFAULT_GRID)
}

/// As [`find_crossings`] with an explicit number of initial scan intervals.
/// Crossing pairs that cancel inside one scan interval are not detected.
pub fn find_crossings_with_grid(
    net: &GeneratorNetwork,
    z_start: &DVector<f64>,
    z_end: &DVector<f64>,
    tol: f64,
    grid: usize,
) -> Result<Vec<BoundaryCrossing>> {
    let seg = segment(net, z_start, z_end, tol)?;
    seg.scan(grid, z_end, false)
}

/// The earliest crossing along the segment, if any.
pub fn first_crossing(
    net: &GeneratorNetwork,
    z_start: &DVector<f64>,
    z_end: &DVector<f64>,
    tol: f64,
) -> Result<Option<BoundaryCrossing>> {
    let seg = segment(net, z_start, z_end, tol)?;
    Ok(seg.scan(DEFAULT_GRID, z_end, true)?.into_iter().next())
}

fn segment<'a>(
    net: &'a GeneratorNetwork,
    z_start: &'a DVector<f64>,
    z_end: &DVector<f64>,
    tol: f64,
) -> Result<Segment<'a>> {
    if !tol.is_finite() || tol <= 0.0 {
        return Err(Error::Parameter(format!("tolerance must be positive, got {tol}")));
    }
    if z_start.len() != net.latent_dim() || z_end.len() != net.latent_dim() {
        return Err(Error::Shape("segment endpoints do not match latent dimension".into()));
    }
    if z_start.iter().chain(z_end.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Domain("segment endpoints must be finite".into()));
    }
    Ok(Segment {
        net,
        start: z_start,
        delta: z_end - z_start,
        tol,
    })
}

/// Pairs of regions sharing a boundary, found by walking from a sampled point
/// in a random direction up to the first crossing. Degenerate (multi-bit)
/// crossings are discarded and resampled.
pub fn adjacent_pairs(
    net: &GeneratorNetwork,
    dist: &LatentDistribution,
    n_pairs: usize,
    seed: u64,
) -> Result<Vec<(RegionSample, RegionSample)>> {
    if n_pairs == 0 {
        return Err(Error::Parameter("n_pairs must be at least 1".into()));
    }
    check_dist(net, dist)?;
    if !net.has_nonlinearity() {
        return Err(Error::NoBoundaries);
    }
    (0..n_pairs)
        .into_par_iter()
        .map(|i| adjacent_pair(net, dist, &mut task_rng(seed, i as u64)))
        .collect()
}

fn adjacent_pair(
    net: &GeneratorNetwork,
    dist: &LatentDistribution,
    rng: &mut ChaCha8Rng,
) -> Result<(RegionSample, RegionSample)> {
    let mut no_crossing = 0;
    let mut degenerate = 0;
    for _ in 0..PAIR_RETRY_CAP {
        let z = dist.sample(rng);
        let mut dir = DVector::from_fn(net.latent_dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
        let norm = dir.norm();
        if norm == 0.0 {
            continue;
        }
        dir /= norm;

        let mut found = None;
        let mut reach = 1.0;
        for _ in 0..12 {
            let end = &z + &dir * reach;
            if let Some(c) = first_crossing(net, &z, &end, DEFAULT_CROSSING_TOL)? {
                found = Some((c, end));
                break;
            }
            reach *= 2.0;
        }
        let Some((crossing, end)) = found else {
            no_crossing += 1;
            continue;
        };
        if crossing.is_degenerate() {
            degenerate += 1;
            continue;
        }
        let at = |t: f64| &z + (&end - &z) * t;
        return Ok((
            RegionSample {
                code: crossing.code_before,
                witness: at(crossing.t_lo),
                count: 1,
            },
            RegionSample {
                code: crossing.code_after,
                witness: at(crossing.t_hi),
                count: 1,
            },
        ));
    }
    Err(Error::SamplingFailure {
        attempts: PAIR_RETRY_CAP,
        reason: format!("{no_crossing} segments without a crossing, {degenerate} degenerate crossings"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{Activation, Layer};
    use nalgebra::{dmatrix, dvector, DMatrix};

    fn orthant_net() -> GeneratorNetwork {
        let layer = Layer::new(DMatrix::identity(2, 2), DVector::zeros(2), Activation::relu()).unwrap();
        GeneratorNetwork::new(vec![layer]).unwrap()
    }

    #[test]
    fn orthants_are_four_regions() {
        let net = orthant_net();
        let regions = sample_regions(&net, &LatentDistribution::gaussian(2), 4000, 7).unwrap();
        assert_eq!(regions.len(), 4);
        assert_eq!(regions.iter().map(|r| r.count).sum::<usize>(), 4000);
        for r in &regions {
            assert!((r.count as f64 - 1000.0).abs() < 150.0, "count {}", r.count);
            assert_eq!(net.code(&r.witness).unwrap(), r.code);
        }
    }

    #[test]
    fn linear_net_is_one_region() {
        let layer = Layer::new(dmatrix![1.0, 2.0; 0.0, 1.0], dvector![0.5, 0.5], Activation::linear()).unwrap();
        let net = GeneratorNetwork::new(vec![layer]).unwrap();
        let regions = sample_regions(&net, &LatentDistribution::gaussian(2), 500, 1).unwrap();
        assert_eq!(regions.len(), 1);
        assert!(matches!(
            adjacent_pairs(&net, &LatentDistribution::gaussian(2), 3, 1),
            Err(Error::NoBoundaries)
        ));
    }

    #[test]
    fn single_hyperplane_crossing() {
        let layer = Layer::new(dmatrix![1.0, 0.0], dvector![0.0], Activation::relu()).unwrap();
        let net = GeneratorNetwork::new(vec![layer]).unwrap();
        let xs = find_crossings(&net, &dvector![-1.0, 0.0], &dvector![1.0, 0.0], 1e-10).unwrap();
        assert_eq!(xs.len(), 1);
        assert!((xs[0].t - 0.5).abs() <= 1e-10);
        assert_eq!(xs[0].flipped_bits, vec![0]);
        assert!(xs[0].t_hi - xs[0].t_lo <= 1e-10);

        let none = find_crossings(&net, &dvector![0.5, -3.0], &dvector![2.0, 4.0], 1e-10).unwrap();
        assert!(none.is_empty());
    }

    #[test]
    fn bad_tolerance_and_zero_counts() {
        let net = orthant_net();
        let z = dvector![1.0, 1.0];
        assert!(matches!(find_crossings(&net, &z, &z, 0.0), Err(Error::Parameter(_))));
        assert!(matches!(find_crossings(&net, &z, &z, -1.0), Err(Error::Parameter(_))));
        assert!(sample_regions(&net, &LatentDistribution::gaussian(2), 0, 1).is_err());
        assert!(adjacent_pairs(&net, &LatentDistribution::gaussian(2), 0, 1).is_err());
    }

    #[test]
    fn orthant_pairs_differ_in_one_bit() {
        let net = orthant_net();
        let pairs = adjacent_pairs(&net, &LatentDistribution::gaussian(2), 50, 3).unwrap();
        for (a, b) in &pairs {
            assert_eq!(a.code.hamming(&b.code).unwrap(), 1);
            assert_eq!(net.code(&a.witness).unwrap(), a.code);
            assert_eq!(net.code(&b.witness).unwrap(), b.code);
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let net = orthant_net();
        let d = LatentDistribution::gaussian(2);
        let a = adjacent_pairs(&net, &d, 20, 11).unwrap();
        let b = adjacent_pairs(&net, &d, 20, 11).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.0.witness, y.0.witness);
            assert_eq!(x.1.code, y.1.code);
        }
    }
}
