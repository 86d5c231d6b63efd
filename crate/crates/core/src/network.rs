//! Piecewise-affine generator networks: forward pass, region codes and the
//! per-region affine map.

use std::fmt;
use std::hash::{Hash, Hasher};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Slope used for `leaky_relu` when the model does not give one.
pub const DEFAULT_LEAKY_ALPHA: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationKind {
    Relu,
    LeakyRelu,
    Abs,
    Linear,
}

impl fmt::Display for ActivationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ActivationKind::Relu => "relu",
            ActivationKind::LeakyRelu => "leaky_relu",
            ActivationKind::Abs => "abs",
            ActivationKind::Linear => "linear",
        };
        f.write_str(s)
    }
}

/// A two-piece activation `x -> x` for `x > 0`, `x -> alpha * x` otherwise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Activation {
    kind: ActivationKind,
    alpha: f64,
}

impl Activation {
    pub fn relu() -> Self {
        Activation {
            kind: ActivationKind::Relu,
            alpha: 0.0,
        }
    }

    pub fn abs() -> Self {
        Activation {
            kind: ActivationKind::Abs,
            alpha: -1.0,
        }
    }

    pub fn linear() -> Self {
        Activation {
            kind: ActivationKind::Linear,
            alpha: 1.0,
        }
    }

    pub fn leaky_relu(alpha: f64) -> Result<Self> {
        Self::new(ActivationKind::LeakyRelu, Some(alpha))
    }

    /// Builds an activation, checking that `alpha` agrees with `kind`.
    /// A missing `alpha` takes the kind's canonical value.
    pub fn new(kind: ActivationKind, alpha: Option<f64>) -> Result<Self> {
        let fixed = |expected: f64| -> Result<f64> {
            match alpha {
                None => Ok(expected),
                Some(a) if a == expected => Ok(expected),
                Some(a) => Err(Error::Model(format!(
                    "{kind} activation requires alpha = {expected}, got {a}"
                ))),
            }
        };
        let alpha = match kind {
            ActivationKind::Relu => fixed(0.0)?,
            ActivationKind::Abs => fixed(-1.0)?,
            ActivationKind::Linear => 1.0,
            ActivationKind::LeakyRelu => {
                let a = alpha.unwrap_or(DEFAULT_LEAKY_ALPHA);
                if !(a.is_finite() && a > 0.0 && a != 1.0) {
                    return Err(Error::Model(format!(
                        "leaky_relu alpha must be finite, positive and != 1, got {a}"
                    )));
                }
                a
            }
        };
        Ok(Activation { kind, alpha })
    }

    pub fn kind(&self) -> ActivationKind {
        self.kind
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Linear layers emit no code bits.
    pub fn is_nonlinear(&self) -> bool {
        self.kind != ActivationKind::Linear
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    weights: DMatrix<f64>,
    bias: DVector<f64>,
    activation: Activation,
}

impl Layer {
    pub fn new(weights: DMatrix<f64>, bias: DVector<f64>, activation: Activation) -> Result<Self> {
        if weights.nrows() != bias.len() {
            return Err(Error::Model(format!(
                "weights have {} rows but bias has length {}",
                weights.nrows(),
                bias.len()
            )));
        }
        if weights.nrows() == 0 || weights.ncols() == 0 {
            return Err(Error::Model("layer has an empty weight matrix".into()));
        }
        if weights.iter().chain(bias.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Model("non-finite parameter".into()));
        }
        Ok(Layer {
            weights,
            bias,
            activation,
        })
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn bias(&self) -> &DVector<f64> {
        &self.bias
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn in_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.nrows()
    }

    fn pre_activation(&self, v: &DVector<f64>) -> DVector<f64> {
        let mut pre = self.bias.clone();
        pre.gemv(1.0, &self.weights, v, 1.0);
        pre
    }
}

/// Location of one nonlinear layer's bits inside a [`RegionCode`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CodeSegment {
    pub layer: usize,
    pub offset: usize,
    pub len: usize,
    pub alpha: f64,
}

/// Concatenated activation states of every nonlinear unit. A state is `true`
/// when the unit is on its slope-1 piece and `false` on its alpha piece.
#[derive(Debug, Clone)]
pub struct RegionCode {
    states: Vec<bool>,
    segments: Vec<CodeSegment>,
}

impl RegionCode {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn states(&self) -> &[bool] {
        &self.states
    }

    pub fn segments(&self) -> &[CodeSegment] {
        &self.segments
    }

    /// Code values in `{alpha, 1}` as used in the gating matrices.
    pub fn bits(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.states.len());
        for seg in &self.segments {
            out.extend(
                self.states[seg.offset..seg.offset + seg.len]
                    .iter()
                    .map(|&on| if on { 1.0 } else { seg.alpha }),
            );
        }
        out
    }

    /// States of the segment belonging to network layer `layer`, if that
    /// layer is nonlinear.
    pub fn layer_states(&self, layer: usize) -> Option<&[bool]> {
        self.segments
            .iter()
            .find(|s| s.layer == layer)
            .map(|s| &self.states[s.offset..s.offset + s.len])
    }

    /// Positions at which the two codes differ.
    pub fn flipped_bits(&self, other: &RegionCode) -> Result<Vec<usize>> {
        if self.len() != other.len() {
            return Err(Error::CodeLength {
                expected: self.len(),
                got: other.len(),
            });
        }
        Ok(self
            .states
            .iter()
            .zip(&other.states)
            .enumerate()
            .filter_map(|(i, (a, b))| (a != b).then_some(i))
            .collect())
    }

    pub fn hamming(&self, other: &RegionCode) -> Result<usize> {
        self.flipped_bits(other).map(|v| v.len())
    }

    /// Stable 16-hex-digit identifier of the code.
    pub fn hash_hex(&self) -> String {
        let mut packed = vec![0u8; self.states.len().div_ceil(8)];
        for (i, &on) in self.states.iter().enumerate() {
            if on {
                packed[i / 8] |= 1 << (i % 8);
            }
        }
        let mut hasher = Sha256::new();
        hasher.update((self.states.len() as u64).to_le_bytes());
        hasher.update(&packed);
        let digest = hasher.finalize();
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

impl PartialEq for RegionCode {
    fn eq(&self, other: &Self) -> bool {
        self.states == other.states
            && self.segments.len() == other.segments.len()
            && self
                .segments
                .iter()
                .zip(&other.segments)
                .all(|(a, b)| a.layer == b.layer && a.len == b.len && a.alpha.to_bits() == b.alpha.to_bits())
    }
}

impl Eq for RegionCode {}

impl Hash for RegionCode {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.states.hash(state);
        for seg in &self.segments {
            seg.layer.hash(state);
            seg.len.hash(state);
        }
    }
}

/// Per-region affine map `z -> slope * z + offset`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineMap {
    pub slope: DMatrix<f64>,
    pub offset: DVector<f64>,
}

impl AffineMap {
    pub fn new(slope: DMatrix<f64>, offset: DVector<f64>) -> Result<Self> {
        if slope.nrows() != offset.len() {
            return Err(Error::Shape(format!(
                "slope has {} rows but offset has length {}",
                slope.nrows(),
                offset.len()
            )));
        }
        Ok(AffineMap { slope, offset })
    }

    pub fn latent_dim(&self) -> usize {
        self.slope.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.slope.nrows()
    }

    pub fn apply(&self, z: &DVector<f64>) -> DVector<f64> {
        let mut out = self.offset.clone();
        out.gemv(1.0, &self.slope, z, 1.0);
        out
    }
}

/// What identifies the region whose affine map is requested.
#[derive(Debug, Clone, Copy)]
pub enum Anchor<'a> {
    Latent(&'a DVector<f64>),
    Code(&'a RegionCode),
}

impl<'a> From<&'a DVector<f64>> for Anchor<'a> {
    fn from(z: &'a DVector<f64>) -> Self {
        Anchor::Latent(z)
    }
}

impl<'a> From<&'a RegionCode> for Anchor<'a> {
    fn from(code: &'a RegionCode) -> Self {
        Anchor::Code(code)
    }
}

/// Ordered stack of fully connected layers with two-piece activations.
/// Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorNetwork {
    layers: Vec<Layer>,
    latent_dim: usize,
    output_dim: usize,
}

/// Applies the code gating `out_i = q_i * pre_i` in place. Shared by the free
/// forward pass and frozen evaluation so both follow the same arithmetic.
fn gate(pre: &mut DVector<f64>, states: &[bool], alpha: f64) {
    for (p, &on) in pre.iter_mut().zip(states) {
        if !on {
            *p *= alpha;
        }
    }
}

fn states_of(pre: &DVector<f64>) -> impl Iterator<Item = bool> + '_ {
    // Ties (pre-activation exactly zero) take the alpha branch.
    pre.iter().map(|&p| p > 0.0)
}

impl GeneratorNetwork {
    /// Validates layer chaining and reports the first offending layer.
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        let first = layers
            .first()
            .ok_or_else(|| Error::Model("network needs at least one layer".into()))?;
        let latent_dim = first.in_dim();
        for (idx, pair) in layers.windows(2).enumerate() {
            if pair[1].in_dim() != pair[0].out_dim() {
                return Err(Error::Validation {
                    layer: idx + 1,
                    message: format!(
                        "input width {} does not match previous layer output width {}",
                        pair[1].in_dim(),
                        pair[0].out_dim()
                    ),
                });
            }
        }
        let output_dim = layers.last().map(Layer::out_dim).unwrap_or(0);
        Ok(GeneratorNetwork {
            layers,
            latent_dim,
            output_dim,
        })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// Total number of code bits.
    pub fn code_len(&self) -> usize {
        self.layers
            .iter()
            .filter(|l| l.activation.is_nonlinear())
            .map(Layer::out_dim)
            .sum()
    }

    pub fn has_nonlinearity(&self) -> bool {
        self.code_len() > 0
    }

    fn segments(&self) -> Vec<CodeSegment> {
        let mut offset = 0;
        let mut segs = Vec::new();
        for (idx, layer) in self.layers.iter().enumerate() {
            if layer.activation.is_nonlinear() {
                segs.push(CodeSegment {
                    layer: idx,
                    offset,
                    len: layer.out_dim(),
                    alpha: layer.activation.alpha,
                });
                offset += layer.out_dim();
            }
        }
        segs
    }

    fn check_latent(&self, z: &DVector<f64>) -> Result<()> {
        if z.len() != self.latent_dim {
            return Err(Error::Shape(format!(
                "latent vector has length {}, network expects {}",
                z.len(),
                self.latent_dim
            )));
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("latent vector has non-finite entries".into()));
        }
        Ok(())
    }

    fn check_code(&self, code: &RegionCode) -> Result<()> {
        let expected = self.code_len();
        if code.len() != expected {
            return Err(Error::CodeLength {
                expected,
                got: code.len(),
            });
        }
        let layout_ok = code.segments.len() == self.segments().len()
            && code
                .segments
                .iter()
                .zip(self.segments())
                .all(|(a, b)| a.layer == b.layer && a.len == b.len);
        if !layout_ok {
            return Err(Error::Parameter(
                "code segment layout does not match the network".into(),
            ));
        }
        Ok(())
    }

    /// Builds a code from `{alpha, 1}` values, checking each segment.
    pub fn code_from_bits(&self, bits: &[f64]) -> Result<RegionCode> {
        let segments = self.segments();
        let expected = self.code_len();
        if bits.len() != expected {
            return Err(Error::CodeLength {
                expected,
                got: bits.len(),
            });
        }
        let mut states = Vec::with_capacity(bits.len());
        for seg in &segments {
            for &b in &bits[seg.offset..seg.offset + seg.len] {
                if b == 1.0 {
                    states.push(true);
                } else if b == seg.alpha {
                    states.push(false);
                } else {
                    return Err(Error::Validation {
                        layer: seg.layer,
                        message: format!("code value {b} not in {{{}, 1}}", seg.alpha),
                    });
                }
            }
        }
        Ok(RegionCode { states, segments })
    }

    /// Builds a code from on/off states (`true` = slope 1).
    pub fn code_from_states(&self, states: Vec<bool>) -> Result<RegionCode> {
        let expected = self.code_len();
        if states.len() != expected {
            return Err(Error::CodeLength {
                expected,
                got: states.len(),
            });
        }
        Ok(RegionCode {
            states,
            segments: self.segments(),
        })
    }

    /// Forward pass together with the code it used.
    pub fn forward_with_code(&self, z: &DVector<f64>) -> Result<(DVector<f64>, RegionCode)> {
        self.check_latent(z)?;
        let mut states = Vec::with_capacity(self.code_len());
        let mut v = z.clone();
        for layer in &self.layers {
            let mut pre = layer.pre_activation(&v);
            if layer.activation.is_nonlinear() {
                let start = states.len();
                states.extend(states_of(&pre));
                gate(&mut pre, &states[start..], layer.activation.alpha);
            }
            v = pre;
        }
        Ok((
            v,
            RegionCode {
                states,
                segments: self.segments(),
            },
        ))
    }

    pub fn forward(&self, z: &DVector<f64>) -> Result<DVector<f64>> {
        self.forward_with_code(z).map(|(x, _)| x)
    }

    pub fn code(&self, z: &DVector<f64>) -> Result<RegionCode> {
        self.forward_with_code(z).map(|(_, c)| c)
    }

    /// Pre-activations of every layer (including linear ones) at `z`.
    pub fn pre_activations(&self, z: &DVector<f64>) -> Result<Vec<DVector<f64>>> {
        self.check_latent(z)?;
        let mut out = Vec::with_capacity(self.layers.len());
        let mut v = z.clone();
        for layer in &self.layers {
            let pre = layer.pre_activation(&v);
            let mut post = pre.clone();
            if layer.activation.is_nonlinear() {
                let states: Vec<bool> = states_of(&pre).collect();
                gate(&mut post, &states, layer.activation.alpha);
            }
            out.push(pre);
            v = post;
        }
        Ok(out)
    }

    /// Affine map of the region identified by `anchor`.
    pub fn affine_params<'a>(&self, anchor: impl Into<Anchor<'a>>) -> Result<AffineMap> {
        match anchor.into() {
            Anchor::Latent(z) => {
                let code = self.code(z)?;
                self.affine_for_code(&code)
            }
            Anchor::Code(code) => {
                self.check_code(code)?;
                self.affine_for_code(code)
            }
        }
    }

    fn affine_for_code(&self, code: &RegionCode) -> Result<AffineMap> {
        let mut slope = DMatrix::identity(self.latent_dim, self.latent_dim);
        let mut offset = DVector::zeros(self.latent_dim);
        let mut cursor = 0;
        for layer in &self.layers {
            let mut next_slope = &layer.weights * &slope;
            let mut next_offset = layer.bias.clone();
            next_offset.gemv(1.0, &layer.weights, &offset, 1.0);
            if layer.activation.is_nonlinear() {
                let states = &code.states[cursor..cursor + layer.out_dim()];
                cursor += layer.out_dim();
                let alpha = layer.activation.alpha;
                for (row, &on) in states.iter().enumerate() {
                    if !on {
                        next_slope.row_mut(row).scale_mut(alpha);
                        next_offset[row] *= alpha;
                    }
                }
            }
            slope = next_slope;
            offset = next_offset;
        }
        AffineMap::new(slope, offset)
    }

    /// Evaluator that imposes `code` regardless of the actual pre-activation signs.
    pub fn freeze(&self, code: &RegionCode) -> Result<FrozenNetwork<'_>> {
        self.check_code(code)?;
        Ok(FrozenNetwork {
            net: self,
            code: code.clone(),
        })
    }
}

/// A network with every nonlinearity fixed to a given code; an affine operator.
#[derive(Debug, Clone)]
pub struct FrozenNetwork<'a> {
    net: &'a GeneratorNetwork,
    code: RegionCode,
}

impl FrozenNetwork<'_> {
    pub fn code(&self) -> &RegionCode {
        &self.code
    }

    pub fn eval(&self, z: &DVector<f64>) -> Result<DVector<f64>> {
        self.net.check_latent(z)?;
        let mut v = z.clone();
        let mut cursor = 0;
        for layer in &self.net.layers {
            let mut pre = layer.pre_activation(&v);
            if layer.activation.is_nonlinear() {
                let states = &self.code.states[cursor..cursor + layer.out_dim()];
                cursor += layer.out_dim();
                gate(&mut pre, states, layer.activation.alpha);
            }
            v = pre;
        }
        Ok(v)
    }

    pub fn affine_map(&self) -> AffineMap {
        self.net
            .affine_for_code(&self.code)
            .expect("code validated at freeze time")
    }
}
