//! Dropout and dropconnect noise realizations turned into ordinary
//! (ablated) generator networks, and the per-region dimensions they produce.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::region_dimension;
use crate::latent::LatentDistribution;
use crate::network::{GeneratorNetwork, Layer};
use crate::partition::{sample_regions, task_rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    /// Binary noise on layer outputs (whole units).
    Dropout,
    /// Binary noise on individual weight entries.
    Dropconnect,
}

/// Drop configuration for the hidden layers (every layer but the last).
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutSpec {
    pub mode: NoiseMode,
    pub p: f64,
    /// Per-hidden-layer drop probabilities overriding `p`.
    pub per_layer: Option<Vec<f64>>,
    pub seed: u64,
}

impl DropoutSpec {
    pub fn new(mode: NoiseMode, p: f64, seed: u64) -> Result<Self> {
        let spec = DropoutSpec {
            mode,
            p,
            per_layer: None,
            seed,
        };
        spec.validate(None)?;
        Ok(spec)
    }

    fn validate(&self, hidden_layers: Option<usize>) -> Result<()> {
        let check = |p: f64| {
            if (0.0..1.0).contains(&p) {
                Ok(())
            } else {
                Err(Error::Parameter(format!("drop probability must lie in [0, 1), got {p}")))
            }
        };
        check(self.p)?;
        if let Some(per) = &self.per_layer {
            per.iter().try_for_each(|&p| check(p))?;
            if let Some(h) = hidden_layers {
                if per.len() != h {
                    return Err(Error::Parameter(format!(
                        "per-layer override has {} entries for {h} hidden layers",
                        per.len()
                    )));
                }
            }
        }
        Ok(())
    }

    fn prob(&self, layer: usize) -> f64 {
        self.per_layer.as_ref().map_or(self.p, |v| v[layer])
    }
}

/// Binary keep-mask for one hidden layer (`true` = kept).
#[derive(Debug, Clone, PartialEq)]
pub enum LayerMask {
    /// One entry per output unit.
    Units(Vec<bool>),
    /// Same shape as the layer weights.
    Weights(DMatrix<bool>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseRealization {
    pub mode: NoiseMode,
    /// One mask per hidden layer, in layer order.
    pub masks: Vec<LayerMask>,
}

impl NoiseRealization {
    /// Realization that keeps everything.
    pub fn identity(net: &GeneratorNetwork, mode: NoiseMode) -> Self {
        let masks = hidden(net)
            .iter()
            .map(|l| match mode {
                NoiseMode::Dropout => LayerMask::Units(vec![true; l.out_dim()]),
                NoiseMode::Dropconnect => LayerMask::Weights(DMatrix::from_element(l.out_dim(), l.in_dim(), true)),
            })
            .collect();
        NoiseRealization { mode, masks }
    }

    /// Fraction of dropped entries over all masks.
    pub fn dropped_fraction(&self) -> f64 {
        let (mut dropped, mut total) = (0usize, 0usize);
        for m in &self.masks {
            let (d, t) = match m {
                LayerMask::Units(v) => (v.iter().filter(|k| !**k).count(), v.len()),
                LayerMask::Weights(w) => (w.iter().filter(|k| !**k).count(), w.len()),
            };
            dropped += d;
            total += t;
        }
        if total == 0 {
            0.0
        } else {
            dropped as f64 / total as f64
        }
    }
}

fn hidden(net: &GeneratorNetwork) -> &[Layer] {
    &net.layers()[..net.depth() - 1]
}

/// Draws iid Bernoulli masks: each entry is dropped with probability `p`.
pub fn sample_noise(net: &GeneratorNetwork, spec: &DropoutSpec, seed: u64) -> Result<NoiseRealization> {
    spec.validate(Some(net.depth() - 1))?;
    let mut rng = task_rng(seed, 0);
    let masks = hidden(net)
        .iter()
        .enumerate()
        .map(|(idx, layer)| {
            let p = spec.prob(idx);
            match spec.mode {
                NoiseMode::Dropout => {
                    LayerMask::Units((0..layer.out_dim()).map(|_| rng.random::<f64>() >= p).collect())
                }
                NoiseMode::Dropconnect => LayerMask::Weights(DMatrix::from_fn(layer.out_dim(), layer.in_dim(), |_, _| {
                    rng.random::<f64>() >= p
                })),
            }
        })
        .collect();
    Ok(NoiseRealization { mode: spec.mode, masks })
}

/// The noise-conditioned generator as a plain network. Dropout zeroes the
/// dropped units' weight rows and bias entries (their pre-activation is then
/// exactly zero, which every supported activation maps to zero); dropconnect
/// zeroes weight entries and keeps biases.
pub fn ablate(net: &GeneratorNetwork, noise: &NoiseRealization) -> Result<GeneratorNetwork> {
    let hidden_count = net.depth() - 1;
    if noise.masks.len() != hidden_count {
        return Err(Error::Shape(format!(
            "noise has {} masks for {hidden_count} hidden layers",
            noise.masks.len()
        )));
    }
    let mut layers = Vec::with_capacity(net.depth());
    for (idx, (layer, mask)) in net.layers().iter().zip(&noise.masks).enumerate() {
        let mut w = layer.weights().clone();
        let mut b: DVector<f64> = layer.bias().clone();
        match mask {
            LayerMask::Units(keep) => {
                if keep.len() != layer.out_dim() {
                    return Err(Error::Shape(format!(
                        "dropout mask for layer {idx} has length {}, layer width is {}",
                        keep.len(),
                        layer.out_dim()
                    )));
                }
                for (row, &k) in keep.iter().enumerate() {
                    if !k {
                        w.row_mut(row).fill(0.0);
                        b[row] = 0.0;
                    }
                }
            }
            LayerMask::Weights(keep) => {
                if keep.shape() != w.shape() {
                    return Err(Error::Shape(format!(
                        "dropconnect mask for layer {idx} has shape {:?}, weights are {:?}",
                        keep.shape(),
                        w.shape()
                    )));
                }
                w.zip_apply(keep, |v, k| {
                    if !k {
                        *v = 0.0;
                    }
                });
            }
        }
        layers.push(Layer::new(w, b, layer.activation())?);
    }
    layers.push(net.layers()[hidden_count].clone());
    GeneratorNetwork::new(layers)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DimensionSample {
    pub realization: usize,
    pub region_hash: String,
    pub dim: usize,
}

/// Per-region dimensions of `n_realizations` ablated generators. Realization
/// `i` uses noise seed `seed + i`; each ablated net's partition is sampled
/// with `n_regions_per` latent draws and every distinct region is recorded.
pub fn ensemble_dimensions(
    net: &GeneratorNetwork,
    spec: &DropoutSpec,
    dist: &LatentDistribution,
    n_realizations: usize,
    n_regions_per: usize,
    seed: u64,
    rel_tol: f64,
) -> Result<Vec<DimensionSample>> {
    if n_realizations == 0 || n_regions_per == 0 {
        return Err(Error::Parameter("realization and region counts must be at least 1".into()));
    }
    spec.validate(Some(net.depth() - 1))?;
    let per = (0..n_realizations)
        .into_par_iter()
        .map(|i| {
            let noise_seed = seed.wrapping_add(i as u64);
            let noise = sample_noise(net, spec, noise_seed)?;
            let ablated = ablate(net, &noise)?;
            sample_regions(&ablated, dist, n_regions_per, noise_seed)?
                .into_iter()
                .map(|r| {
                    Ok(DimensionSample {
                        realization: i,
                        region_hash: r.code.hash_hex(),
                        dim: region_dimension(&ablated.affine_params(&r.code)?, rel_tol),
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per.into_iter().flatten().collect())
}

/// Dimensions of the noise-free net over the same sampling budget.
pub fn base_dimensions(
    net: &GeneratorNetwork,
    dist: &LatentDistribution,
    n_points: usize,
    seed: u64,
    rel_tol: f64,
) -> Result<Vec<usize>> {
    sample_regions(net, dist, n_points, seed)?
        .iter()
        .map(|r| Ok(region_dimension(&net.affine_params(&r.code)?, rel_tol)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::Activation;
    use nalgebra::{dmatrix, dvector};

    fn net() -> GeneratorNetwork {
        let l1 = Layer::new(
            dmatrix![1.0, -0.5; 0.3, 0.8; -0.7, 0.2],
            dvector![0.1, -0.2, 0.3],
            Activation::leaky_relu(0.2).unwrap(),
        )
        .unwrap();
        let l2 = Layer::new(dmatrix![0.5, 1.0, -1.0; 0.2, 0.1, 0.4], dvector![0.0, 1.0], Activation::linear()).unwrap();
        GeneratorNetwork::new(vec![l1, l2]).unwrap()
    }

    #[test]
    fn zero_probability_keeps_everything() {
        let n = net();
        for mode in [NoiseMode::Dropout, NoiseMode::Dropconnect] {
            let spec = DropoutSpec::new(mode, 0.0, 1).unwrap();
            let noise = sample_noise(&n, &spec, 1).unwrap();
            assert_eq!(noise, NoiseRealization::identity(&n, mode));
            assert_eq!(noise.dropped_fraction(), 0.0);
        }
    }

    #[test]
    fn near_one_drops_nearly_all() {
        let l1 = Layer::new(DMatrix::from_element(500, 2, 1.0), DVector::zeros(500), Activation::relu()).unwrap();
        let l2 = Layer::new(DMatrix::from_element(1, 500, 1.0), DVector::zeros(1), Activation::linear()).unwrap();
        let n = GeneratorNetwork::new(vec![l1, l2]).unwrap();
        let spec = DropoutSpec::new(NoiseMode::Dropout, 0.999, 0).unwrap();
        assert!(sample_noise(&n, &spec, 4).unwrap().dropped_fraction() > 0.98);
    }

    #[test]
    fn invalid_probability() {
        assert!(DropoutSpec::new(NoiseMode::Dropout, 1.0, 0).is_err());
        assert!(DropoutSpec::new(NoiseMode::Dropout, -0.1, 0).is_err());
    }

    #[test]
    fn all_dropped_gives_zero_slope() {
        let n = net();
        let noise = NoiseRealization {
            mode: NoiseMode::Dropout,
            masks: vec![LayerMask::Units(vec![false; 3])],
        };
        let ab = ablate(&n, &noise).unwrap();
        for z in [dvector![1.0, 2.0], dvector![-0.3, 0.1]] {
            let map = ab.affine_params(&z).unwrap();
            assert_eq!(map.slope, DMatrix::zeros(2, 2));
            assert_eq!(region_dimension(&map, 1e-8), 0);
        }
    }

    #[test]
    fn mask_shape_mismatch() {
        let n = net();
        let bad = NoiseRealization {
            mode: NoiseMode::Dropout,
            masks: vec![LayerMask::Units(vec![true; 2])],
        };
        assert!(matches!(ablate(&n, &bad), Err(Error::Shape(_))));
        let none = NoiseRealization {
            mode: NoiseMode::Dropout,
            masks: vec![],
        };
        assert!(ablate(&n, &none).is_err());
    }

    #[test]
    fn dropconnect_keeps_biases() {
        let n = net();
        let noise = NoiseRealization {
            mode: NoiseMode::Dropconnect,
            masks: vec![LayerMask::Weights(DMatrix::from_element(3, 2, false))],
        };
        let ab = ablate(&n, &noise).unwrap();
        assert_eq!(ab.layers()[0].bias(), n.layers()[0].bias());
        assert_eq!(ab.layers()[0].weights(), &DMatrix::zeros(3, 2));
        assert_eq!(ab.layers()[1], n.layers()[1]);
    }
}
