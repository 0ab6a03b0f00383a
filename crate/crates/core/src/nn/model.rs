use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::graph::{BoundParams, Graph, Var};
use super::params::ParamSet;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Height, width and channel count of an image batch element.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageShape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl ImageShape {
    pub fn new(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
        }
    }

    pub fn len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
}

/// Optional 3x3 convolution applied before the dense layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StemConfig {
    pub channels: usize,
    pub stride: usize,
}

/// Fixed affine input preprocessing `(x - mean) / std`, applied to every
/// pixel value before the first layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputNorm {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub input: ImageShape,
    #[serde(default)]
    pub input_norm: Option<InputNorm>,
    #[serde(default)]
    pub stem: Option<StemConfig>,
    pub hidden: Vec<usize>,
    pub feature_dim: usize,
    pub projection_hidden: Vec<usize>,
    pub projection_dim: usize,
    #[serde(default)]
    pub activation: Activation,
}

impl EncoderConfig {
    /// `flatten -> 256 -> ReLU -> 128` backbone with a `128 -> 128 -> 64` head.
    pub fn desk_scale(input: ImageShape) -> Self {
        Self {
            input,
            input_norm: Some(InputNorm { mean: 0.5, std: 0.25 }),
            stem: None,
            hidden: vec![256],
            feature_dim: 128,
            projection_hidden: vec![128],
            projection_dim: 64,
            activation: Activation::Relu,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input.is_empty() {
            return Err(Error::config("encoder.input", "all dimensions must be positive"));
        }
        if self.feature_dim < 2 {
            return Err(Error::config("encoder.feature_dim", "must be at least 2"));
        }
        if self.projection_dim < 2 {
            return Err(Error::config("encoder.projection_dim", "must be at least 2"));
        }
        if self.hidden.contains(&0) {
            return Err(Error::config("encoder.hidden", "widths must be positive"));
        }
        if self.projection_hidden.contains(&0) {
            return Err(Error::config("encoder.projection_hidden", "widths must be positive"));
        }
        if let Some(norm) = self.input_norm {
            if !(norm.std > 0.0 && norm.std.is_finite() && norm.mean.is_finite()) {
                return Err(Error::config("encoder.input_norm", "std must be positive and both values finite"));
            }
        }
        if let Some(stem) = self.stem {
            if stem.channels == 0 || stem.stride == 0 {
                return Err(Error::config("encoder.stem", "channels and stride must be positive"));
            }
        }
        Ok(())
    }

    fn stem_output_len(&self) -> usize {
        match self.stem {
            None => self.input.len(),
            Some(stem) => {
                let ho = (self.input.height - 1) / stem.stride + 1;
                let wo = (self.input.width - 1) / stem.stride + 1;
                ho * wo * stem.channels
            }
        }
    }
}

/// Which encoder output to produce.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Output {
    /// Pre-projection features of width `feature_dim`.
    Backbone,
    /// L2-normalized embeddings of width `projection_dim`.
    Projected,
}

fn uniform_init(rng: &mut ChaCha8Rng, fan_in: usize, shape: Vec<usize>) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let numel = shape.iter().product();
    let data = (0..numel).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::new(shape, data).expect("init shape is consistent")
}

fn dense(
    params: &mut ParamSet,
    rng: &mut ChaCha8Rng,
    prefix: &str,
    fan_in: usize,
    fan_out: usize,
) -> Result<()> {
    params.insert(
        format!("{prefix}.weight"),
        uniform_init(rng, fan_in, vec![fan_in, fan_out]),
    )?;
    params.insert(format!("{prefix}.bias"), Tensor::zeros(vec![fan_out]))
}

/// Applies `x · W + b` using the parameters named `{prefix}.weight/bias`.
pub fn linear(g: &mut Graph, bound: &BoundParams, prefix: &str, x: Var) -> Result<Var> {
    let w = bound.var(&format!("{prefix}.weight"))?;
    let b = bound.var(&format!("{prefix}.bias"))?;
    let xw = g.matmul(x, w)?;
    g.add_bias(xw, b)
}

/// MLP image encoder with an optional convolution stem and a projection head.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    config: EncoderConfig,
}

impl Encoder {
    pub fn new(config: EncoderConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    /// Fresh parameters: uniform(±1/√fan_in) weights, zero biases.
    pub fn init(&self, seed: u64) -> ParamSet {
        let cfg = &self.config;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let build = |params: &mut ParamSet, rng: &mut ChaCha8Rng| -> Result<()> {
            if let Some(stem) = cfg.stem {
                dense(params, rng, "stem", 9 * cfg.input.channels, stem.channels)?;
            }
            let mut width = cfg.stem_output_len();
            for (i, &h) in cfg.hidden.iter().enumerate() {
                dense(params, rng, &format!("backbone.{i}"), width, h)?;
                width = h;
            }
            dense(params, rng, &format!("backbone.{}", cfg.hidden.len()), width, cfg.feature_dim)?;
            width = cfg.feature_dim;
            for (i, &h) in cfg.projection_hidden.iter().enumerate() {
                dense(params, rng, &format!("projection.{i}"), width, h)?;
                width = h;
            }
            dense(
                params,
                rng,
                &format!("projection.{}", cfg.projection_hidden.len()),
                width,
                cfg.projection_dim,
            )
        };
        build(&mut params, &mut rng).expect("parameter names are unique");
        params
    }

    /// Checks that `params` has exactly the layout `init` would produce.
    pub fn check_params(&self, params: &ParamSet) -> Result<()> {
        let reference = self.init(0);
        if !reference.same_layout(params) {
            return Err(Error::Contract(
                "parameter set does not match the encoder architecture".into(),
            ));
        }
        Ok(())
    }

    fn check_batch(&self, shape: &[usize]) -> Result<usize> {
        let s = self.config.input;
        match shape {
            &[b, h, w, c] if h == s.height && w == s.width && c == s.channels => Ok(b),
            other => Err(Error::Contract(format!(
                "batch shape {other:?} does not match encoder input {}x{}x{}",
                s.height, s.width, s.channels
            ))),
        }
    }

    /// Records the forward pass of a `B x H x W x C` batch.
    pub fn forward_graph(
        &self,
        g: &mut Graph,
        bound: &BoundParams,
        batch: Var,
        output: Output,
    ) -> Result<Var> {
        let cfg = &self.config;
        let b = self.check_batch(g.shape(batch))?;
        let batch = match cfg.input_norm {
            None => batch,
            Some(norm) => {
                let flat = g.reshape(batch, vec![b, cfg.input.len()])?;
                let scaled = g.scale(flat, 1.0 / norm.std)?;
                let shift = g.input(Tensor::new(
                    vec![cfg.input.len()],
                    vec![-norm.mean / norm.std; cfg.input.len()],
                )?);
                let shifted = g.add_bias(scaled, shift)?;
                let i = cfg.input;
                g.reshape(shifted, vec![b, i.height, i.width, i.channels])?
            }
        };
        let mut x = match cfg.stem {
            None => g.reshape(batch, vec![b, cfg.input.len()])?,
            Some(stem) => {
                let cols = g.im2col(batch, stem.stride)?;
                let conv = linear(g, bound, "stem", cols)?;
                let act = g.relu(conv)?;
                g.reshape(act, vec![b, cfg.stem_output_len()])?
            }
        };
        for i in 0..cfg.hidden.len() {
            x = linear(g, bound, &format!("backbone.{i}"), x)?;
            x = g.relu(x)?;
        }
        x = linear(g, bound, &format!("backbone.{}", cfg.hidden.len()), x)?;
        if output == Output::Backbone {
            return Ok(x);
        }
        for i in 0..cfg.projection_hidden.len() {
            x = linear(g, bound, &format!("projection.{i}"), x)?;
            x = g.relu(x)?;
        }
        x = linear(g, bound, &format!("projection.{}", cfg.projection_hidden.len()), x)?;
        g.l2_normalize(x)
    }

    /// Gradient-free forward pass.
    pub fn forward(&self, params: &ParamSet, batch: &Tensor, output: Output) -> Result<Tensor> {
        self.check_batch(batch.shape())?;
        let mut g = Graph::no_grad();
        let bound = g.bind(params);
        let x = g.input(batch.clone());
        let out = self.forward_graph(&mut g, &bound, x, output)?;
        Ok(g.value(out).clone())
    }

    pub fn output_dim(&self, output: Output) -> usize {
        match output {
            Output::Backbone => self.config.feature_dim,
            Output::Projected => self.config.projection_dim,
        }
    }
}

/// Affine classifier `features -> logits`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LinearHead {
    pub inputs: usize,
    pub classes: usize,
}

impl LinearHead {
    pub const PREFIX: &'static str = "classifier";

    pub fn init(&self, seed: u64) -> ParamSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        dense(&mut params, &mut rng, Self::PREFIX, self.inputs, self.classes)
            .expect("fresh parameter set");
        params
    }

    pub fn forward_graph(&self, g: &mut Graph, bound: &BoundParams, x: Var) -> Result<Var> {
        linear(g, bound, Self::PREFIX, x)
    }

    pub fn logits(&self, params: &ParamSet, features: &Tensor) -> Result<Tensor> {
        let mut g = Graph::no_grad();
        let bound = g.bind(params);
        let x = g.input(features.clone());
        let out = self.forward_graph(&mut g, &bound, x)?;
        Ok(g.value(out).clone())
    }
}

/// Argmax per row; ties go to the smallest index.
pub fn argmax_rows(logits: &Tensor) -> Vec<usize> {
    let cols = logits.shape()[1];
    logits
        .data()
        .chunks(cols)
        .map(|row| {
            let mut best = 0;
            for (i, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::functional::l2_norm;

    fn random_batch(b: usize, shape: ImageShape, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..b * shape.len()).map(|_| rng.random::<f64>()).collect();
        Tensor::new(vec![b, shape.height, shape.width, shape.channels], data).unwrap()
    }

    fn small() -> EncoderConfig {
        EncoderConfig {
            input: ImageShape::new(4, 4, 3),
            input_norm: None,
            stem: None,
            hidden: vec![16],
            feature_dim: 12,
            projection_hidden: vec![12],
            projection_dim: 4,
            activation: Activation::Relu,
        }
    }

    #[test]
    fn zero_weights_give_zero_features() {
        let enc = Encoder::new(small()).unwrap();
        let mut params = enc.init(1);
        params.iter_mut().for_each(|(_, t)| t.data_mut().fill(0.0));
        let out = enc
            .forward(&params, &random_batch(3, small().input, 2), Output::Backbone)
            .unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn projected_rows_are_unit_norm() {
        for stem in [None, Some(StemConfig { channels: 8, stride: 2 })] {
            let cfg = EncoderConfig { stem, ..small() };
            let enc = Encoder::new(cfg.clone()).unwrap();
            let params = enc.init(7);
            let out = enc
                .forward(&params, &random_batch(5, cfg.input, 3), Output::Projected)
                .unwrap();
            assert_eq!(out.shape(), &[5, 4]);
            for i in 0..5 {
                let n = l2_norm(out.row(i));
                assert!((n - 1.0).abs() < 1e-9, "{stem:?} row {i} norm {n} {:?}", out.row(i));
            }
        }
    }

    #[test]
    fn forward_is_deterministic_and_pure() {
        let enc = Encoder::new(small()).unwrap();
        let params = enc.init(11);
        let before = params.clone();
        let batch = random_batch(4, small().input, 5);
        let a = enc.forward(&params, &batch, Output::Projected).unwrap();
        let b = enc.forward(&params, &batch, Output::Projected).unwrap();
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert_eq!(params, before);
    }

    #[test]
    fn shape_mismatch_is_contract_error() {
        let enc = Encoder::new(small()).unwrap();
        let params = enc.init(0);
        let bad = Tensor::zeros(vec![2, 5, 4, 3]);
        assert!(matches!(
            enc.forward(&params, &bad, Output::Backbone),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn init_is_seeded() {
        let enc = Encoder::new(small()).unwrap();
        assert!(enc.init(3).values_bit_equal(&enc.init(3)));
        assert!(!enc.init(3).values_bit_equal(&enc.init(4)));
        let b = enc.init(3);
        let bound = 1.0 / (48f64).sqrt();
        let w = b.get("backbone.0.weight").unwrap();
        assert!(w.data().iter().all(|v| v.abs() <= bound));
        assert!(b.get("backbone.0.bias").unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_degenerate_widths() {
        let mut cfg = small();
        cfg.feature_dim = 1;
        assert!(Encoder::new(cfg).is_err());
        let mut cfg = small();
        cfg.hidden = vec![0];
        assert!(Encoder::new(cfg).is_err());
    }

    #[test]
    fn argmax_ties_pick_smallest_index() {
        let t = Tensor::new(vec![2, 3], vec![1.0, 3.0, 3.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(argmax_rows(&t), vec![1, 0]);
    }
}
