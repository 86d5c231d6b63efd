//! Training-free studies on randomly initialized generators: adjacent-region
//! angles against a random-subspace baseline, log-determinant distributions
//! under weight rescaling, and the closed-form linear capacity experiment.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{StandardNormal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::density::{logdet_histogram, RegionLogDet};
use crate::error::{Error, Result};
use crate::geometry::{principal_angle, projector_gap, ProjectorNorm};
use crate::latent::LatentDistribution;
use crate::linalg::{self, SortedSvd};
use crate::network::{Activation, GeneratorNetwork, Layer};
use crate::partition::{adjacent_pairs, task_rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    /// Uniform on `[-sqrt(6 / (fan_in + fan_out)), +sqrt(...)]`.
    XavierUniform,
}

/// Architecture and seed of a random generator. Hidden layers use
/// `activation`; the output layer is linear.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomNetSpec {
    pub latent_dim: usize,
    pub output_dim: usize,
    pub widths: Vec<usize>,
    pub activation: Activation,
    pub init: Init,
    pub seed: u64,
}

impl RandomNetSpec {
    pub fn new(latent_dim: usize, output_dim: usize, widths: Vec<usize>, activation: Activation, seed: u64) -> Self {
        RandomNetSpec {
            latent_dim,
            output_dim,
            widths,
            activation,
            init: Init::XavierUniform,
            seed,
        }
    }

    pub fn depth(&self) -> usize {
        self.widths.len() + 1
    }

    fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 || self.output_dim == 0 || self.widths.contains(&0) {
            return Err(Error::Parameter("all layer widths must be positive".into()));
        }
        Ok(())
    }

    fn dims(&self) -> Vec<usize> {
        let mut dims = vec![self.latent_dim];
        dims.extend(&self.widths);
        dims.push(self.output_dim);
        dims
    }
}

pub fn xavier_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Xavier-uniform weights, zero biases; a pure function of `spec`.
pub fn generate_random_net(spec: &RandomNetSpec) -> Result<GeneratorNetwork> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let dims = spec.dims();
    let last = dims.len() - 2;
    let layers = dims
        .windows(2)
        .enumerate()
        .map(|(idx, pair)| {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = xavier_bound(fan_in, fan_out);
            let unif = Uniform::new_inclusive(-bound, bound).expect("finite bound");
            let w = DMatrix::from_fn(fan_out, fan_in, |_, _| rng.sample(unif));
            let act = if idx == last { Activation::linear() } else { spec.activation };
            Layer::new(w, DVector::zeros(fan_out), act)
        })
        .collect::<Result<Vec<_>>>()?;
    GeneratorNetwork::new(layers)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AngleSource {
    Dgn,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AngleRow {
    pub angle: f64,
    pub source: AngleSource,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AngleSummary {
    pub source: AngleSource,
    pub count: usize,
    pub mean: f64,
    pub median: f64,
}

#[derive(Debug, Clone)]
pub struct AngleStudy {
    pub rows: Vec<AngleRow>,
    /// Adjacent pairs dropped because one side was rank-deficient.
    pub skipped: usize,
}

impl AngleStudy {
    pub fn angles(&self, source: AngleSource) -> Vec<f64> {
        self.rows.iter().filter(|r| r.source == source).map(|r| r.angle).collect()
    }
}

/// Per-source count, mean and median, in row order.
pub fn summarize_angles(rows: &[AngleRow]) -> Vec<AngleSummary> {
    [AngleSource::Dgn, AngleSource::Random]
        .into_iter()
        .filter_map(|source| {
            let v: Vec<f64> = rows.iter().filter(|r| r.source == source).map(|r| r.angle).collect();
            (!v.is_empty()).then(|| AngleSummary {
                source,
                count: v.len(),
                mean: mean(&v),
                median: median(&v),
            })
        })
        .collect()
}

/// Largest principal angles between `n` pairs of independent Gaussian
/// `D x S` column spaces.
pub fn random_subspace_angles(output_dim: usize, latent_dim: usize, n: usize, seed: u64) -> Vec<f64> {
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = task_rng(seed, i as u64);
            let mut basis = || {
                let g = DMatrix::from_fn(output_dim, latent_dim, |_, _| rng.sample::<f64, _>(StandardNormal));
                let svd = SortedSvd::new(&g);
                svd.range_basis(svd.rank(linalg::DEFAULT_REL_TOL))
            };
            let (qa, qb) = (basis(), basis());
            projector_gap(&qa, &qb, ProjectorNorm::Auto).clamp(0.0, 1.0).asin()
        })
        .collect()
}

/// Largest principal angles between adjacent regions of a random net,
/// followed by as many random-subspace baseline angles.
pub fn angle_study(spec: &RandomNetSpec, n_pairs: usize, seed: u64) -> Result<AngleStudy> {
    let net = generate_random_net(spec)?;
    let pairs = adjacent_pairs(&net, &LatentDistribution::gaussian(spec.latent_dim), n_pairs, seed)?;
    let angles = pairs
        .par_iter()
        .map(|(a, b)| {
            let ma = net.affine_params(&a.code)?;
            let mb = net.affine_params(&b.code)?;
            match principal_angle(&ma, &mb, linalg::DEFAULT_REL_TOL) {
                Ok(theta) => Ok(Some(theta)),
                Err(Error::NotInvertible { .. }) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let skipped = angles.iter().filter(|a| a.is_none()).count();
    let mut rows: Vec<AngleRow> = angles
        .into_iter()
        .flatten()
        .map(|angle| AngleRow {
            angle,
            source: AngleSource::Dgn,
        })
        .collect();
    rows.extend(
        random_subspace_angles(spec.output_dim, spec.latent_dim, n_pairs, seed.wrapping_add(1))
            .into_iter()
            .map(|angle| AngleRow {
                angle,
                source: AngleSource::Random,
            }),
    );
    Ok(AngleStudy { rows, skipped })
}

/// How the chosen half of the weights is rescaled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RescaleMode {
    /// Multiply the drawn values by sigma.
    Values,
    /// Redraw the entries with the Xavier bound multiplied by sigma.
    InitBound,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogDetStudySpec {
    pub net: RandomNetSpec,
    pub sigma1: f64,
    pub sigma2: f64,
    pub rescale: RescaleMode,
}

impl LogDetStudySpec {
    /// `L = 3`, `S = 6`, `D = 10`, two hidden layers of width 10.
    pub fn default_net(seed: u64) -> RandomNetSpec {
        RandomNetSpec::new(
            6,
            10,
            vec![10, 10],
            Activation::leaky_relu(crate::network::DEFAULT_LEAKY_ALPHA).expect("valid alpha"),
            seed,
        )
    }
}

/// Random net in which, per layer, a random half of the weight entries is
/// rescaled by `sigma1` and the other half by `sigma2`.
pub fn rescaled_random_net(spec: &LogDetStudySpec) -> Result<GeneratorNetwork> {
    if !(spec.sigma1 >= 0.0 && spec.sigma2 >= 0.0) {
        return Err(Error::Parameter("sigma values must be nonnegative".into()));
    }
    let base = generate_random_net(&spec.net)?;
    let mut rng = task_rng(spec.net.seed, 1);
    let layers = base
        .layers()
        .iter()
        .map(|layer| {
            let mut w = layer.weights().clone();
            let mut idx: Vec<usize> = (0..w.len()).collect();
            idx.shuffle(&mut rng);
            let bound = xavier_bound(w.ncols(), w.nrows());
            let half = idx.len() / 2;
            for (k, &i) in idx.iter().enumerate() {
                let sigma = if k < half { spec.sigma1 } else { spec.sigma2 };
                w[i] = match spec.rescale {
                    RescaleMode::Values => w[i] * sigma,
                    RescaleMode::InitBound => rng.random_range(-1.0..=1.0) * bound * sigma,
                };
            }
            Layer::new(w, layer.bias().clone(), layer.activation())
        })
        .collect::<Result<Vec<_>>>()?;
    GeneratorNetwork::new(layers)
}

#[derive(Debug, Clone)]
pub struct LogDetStudy {
    pub rows: Vec<RegionLogDet>,
    pub degenerate: usize,
}

impl LogDetStudy {
    pub fn mean(&self) -> f64 {
        mean(&self.rows.iter().map(|r| r.log_det).collect::<Vec<_>>())
    }

    pub fn std_dev(&self) -> f64 {
        std_dev(&self.rows.iter().map(|r| r.log_det).collect::<Vec<_>>())
    }
}

pub fn logdet_study(spec: &LogDetStudySpec, n_regions: usize, seed: u64) -> Result<LogDetStudy> {
    let net = rescaled_random_net(spec)?;
    let sample = logdet_histogram(
        &net,
        &LatentDistribution::gaussian(spec.net.latent_dim),
        n_regions,
        seed,
        linalg::DEFAULT_REL_TOL,
    )?;
    Ok(LogDetStudy {
        rows: sample.regions,
        degenerate: sample.degenerate,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CapacitySpec {
    /// Intrinsic dimension of the data subspace.
    pub s_star: usize,
    /// Ambient data dimension.
    pub data_dim: usize,
    pub s_range: Vec<usize>,
    pub n_range: Vec<usize>,
    /// Standard deviation of isotropic noise added to the data.
    pub noise: f64,
    /// Independent datasets averaged per table entry.
    pub trials: usize,
}

impl CapacitySpec {
    /// `S* = 5` in ten dimensions, `S` in 1..=7, the usual dataset sizes.
    pub fn standard() -> Self {
        CapacitySpec {
            s_star: 5,
            data_dim: 10,
            s_range: (1..=7).collect(),
            n_range: vec![100, 120, 140, 160, 180, 200, 300, 400, 500, 1000],
            noise: 0.0,
            trials: 30,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CapacityRow {
    pub s: usize,
    pub n: usize,
    /// Mean distance of the data to the best rank-`s` affine fit.
    pub e_star: f64,
}

/// Per-point distances to the least-squares rank-`s` affine subspace
/// (centered, truncated SVD) for every `s` in `s_values`.
pub fn affine_fit_residuals(data: &DMatrix<f64>, s_values: &[usize]) -> Vec<Vec<f64>> {
    let n = data.nrows();
    let mean = data.row_mean();
    let centered = DMatrix::from_fn(n, data.ncols(), |r, c| data[(r, c)] - mean[c]);
    let svd = SortedSvd::new(&centered);
    let r = svd.singular_values.len();
    s_values
        .iter()
        .map(|&s| {
            (0..n)
                .map(|i| {
                    (s.min(r)..r)
                        .map(|k| (svd.u[(i, k)] * svd.singular_values[k]).powi(2))
                        .sum::<f64>()
                        .sqrt()
                })
                .collect()
        })
        .collect()
}

/// Closed-form capacity experiment with a linear generator: for each latent
/// size `s` and dataset size `n`, the mean residual of the best rank-`s`
/// affine fit to `n` points of a random `s_star`-dimensional affine subspace.
/// Dataset sizes are nested prefixes of one draw per trial.
pub fn linear_capacity_study(spec: &CapacitySpec, seed: u64) -> Result<Vec<CapacityRow>> {
    if spec.s_star == 0 || spec.s_star > spec.data_dim {
        return Err(Error::Parameter(format!(
            "s_star must lie in 1..={}, got {}",
            spec.data_dim, spec.s_star
        )));
    }
    if spec.trials == 0 || spec.s_range.is_empty() || spec.n_range.is_empty() {
        return Err(Error::Parameter("trials, s_range and n_range must be nonempty".into()));
    }
    if spec.noise.is_nan() || spec.noise < 0.0 {
        return Err(Error::Parameter("noise must be nonnegative".into()));
    }
    let max_s = *spec.s_range.iter().max().expect("nonempty");
    let min_n = *spec.n_range.iter().min().expect("nonempty");
    if min_n < max_s + 1 {
        return Err(Error::InsufficientData(format!(
            "N = {min_n} points cannot determine a rank-{max_s} affine fit (need N >= S + 1)"
        )));
    }
    let n_max = *spec.n_range.iter().max().expect("nonempty");
    let d = spec.data_dim;

    let per_trial = (0..spec.trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = task_rng(seed, t as u64);
            let mut gauss = || rng.sample::<f64, _>(StandardNormal);
            let basis = DMatrix::from_fn(d, spec.s_star, |_, _| gauss());
            let offset = DVector::from_fn(d, |_, _| gauss());
            let mut data = DMatrix::zeros(n_max, d);
            for i in 0..n_max {
                let u = DVector::from_fn(spec.s_star, |_, _| gauss());
                let x = &basis * u + &offset;
                for c in 0..d {
                    data[(i, c)] = x[c] + spec.noise * gauss();
                }
            }
            spec.n_range
                .iter()
                .map(|&n| {
                    let prefix = data.rows(0, n).into_owned();
                    affine_fit_residuals(&prefix, &spec.s_range)
                        .into_iter()
                        .map(|res| mean(&res))
                        .collect::<Vec<f64>>()
                })
                .collect::<Vec<_>>()
        })
        .collect::<Vec<_>>();

    let mut rows = Vec::with_capacity(spec.s_range.len() * spec.n_range.len());
    for (si, &s) in spec.s_range.iter().enumerate() {
        for (ni, &n) in spec.n_range.iter().enumerate() {
            let e_star = per_trial.iter().map(|trial| trial[ni][si]).sum::<f64>() / spec.trials as f64;
            rows.push(CapacityRow { s, n, e_star });
        }
    }
    Ok(rows)
}

pub fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn median(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() / 2;
    if s.len() % 2 == 1 {
        s[m]
    } else {
        0.5 * (s[m - 1] + s[m])
    }
}

pub fn std_dev(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

/// One-sided permutation test for `mean(a) < mean(b)`: the fraction of
/// label permutations (plus the observed one) whose mean difference is at
/// least as small as the observed difference.
pub fn permutation_test_less(a: &[f64], b: &[f64], n_perm: usize, seed: u64) -> f64 {
    let observed = mean(a) - mean(b);
    let mut pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits = 0usize;
    for _ in 0..n_perm {
        pooled.shuffle(&mut rng);
        let (pa, pb) = pooled.split_at(a.len());
        if mean(pa) - mean(pb) <= observed {
            hits += 1;
        }
    }
    (hits + 1) as f64 / (n_perm + 1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_net_shapes_and_zero_bias() {
        let spec = RandomNetSpec::new(3, 5, vec![4, 6], Activation::relu(), 9);
        let net = generate_random_net(&spec).unwrap();
        assert_eq!(net.depth(), 3);
        assert_eq!(net.latent_dim(), 3);
        assert_eq!(net.output_dim(), 5);
        assert_eq!(net.layers()[2].activation(), Activation::linear());
        for l in net.layers() {
            assert!(l.bias().iter().all(|&b| b == 0.0));
            let bound = xavier_bound(l.in_dim(), l.out_dim());
            assert!(l.weights().iter().all(|w| w.abs() <= bound));
        }
        assert_eq!(net, generate_random_net(&spec).unwrap());
    }

    #[test]
    fn xavier_variance() {
        let spec = RandomNetSpec::new(256, 256, vec![], Activation::relu(), 3);
        let net = generate_random_net(&spec).unwrap();
        let w: Vec<f64> = net.layers()[0].weights().iter().copied().collect();
        let var = w.iter().map(|x| x * x).sum::<f64>() / w.len() as f64;
        let expected = 2.0 / 512.0;
        assert!((var / expected - 1.0).abs() < 0.1, "variance {var}");
    }

    #[test]
    fn invalid_widths() {
        let spec = RandomNetSpec::new(3, 5, vec![0], Activation::relu(), 0);
        assert!(matches!(generate_random_net(&spec), Err(Error::Parameter(_))));
    }

    #[test]
    fn all_linear_angle_study_has_no_boundaries() {
        let spec = RandomNetSpec::new(2, 4, vec![3], Activation::linear(), 0);
        assert!(matches!(angle_study(&spec, 5, 0), Err(Error::NoBoundaries)));
    }

    #[test]
    fn zero_sigmas_are_all_degenerate() {
        let spec = LogDetStudySpec {
            net: LogDetStudySpec::default_net(0),
            sigma1: 0.0,
            sigma2: 0.0,
            rescale: RescaleMode::Values,
        };
        let study = logdet_study(&spec, 20, 0).unwrap();
        assert!(study.rows.is_empty());
        assert!(study.degenerate >= 1);
    }

    #[test]
    fn capacity_rejects_small_datasets() {
        let mut spec = CapacitySpec::standard();
        spec.n_range = vec![5, 100];
        assert!(matches!(linear_capacity_study(&spec, 0), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn median_and_permutation() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        let a: Vec<f64> = (0..50).map(|i| i as f64 * 0.01).collect();
        let b: Vec<f64> = (0..50).map(|i| 1.0 + i as f64 * 0.01).collect();
        assert!(permutation_test_less(&a, &b, 999, 0) < 0.01);
        assert!(permutation_test_less(&b, &a, 999, 0) > 0.5);
    }
}
