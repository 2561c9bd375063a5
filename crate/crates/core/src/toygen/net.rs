use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{Activation, Bound, Conv, Graph, ParamSet, Var};

/// Latent channels of every handle.
pub const LATENT_CHANNELS: usize = 4;
/// Spatial downsampling factor between image and latent.
pub const LATENT_DOWNSAMPLE: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Upsample {
    Nearest,
    Shuffle,
}

/// Decoder upsampling scheme, nonlinearity and channel width, written
/// `<nearest|shuffle>-<relu|lrelu|tanh>-w<width>`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ArchSpec {
    pub upsample: Upsample,
    pub activation: Activation,
    pub width: usize,
}

impl FromStr for ArchSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("unsupported arch tag '{s}'"));
        let parts: Vec<&str> = s.split('-').collect();
        let [up, act, w] = parts[..] else { return Err(bad()) };
        let upsample = match up {
            "nearest" => Upsample::Nearest,
            "shuffle" => Upsample::Shuffle,
            _ => return Err(bad()),
        };
        let activation = match act {
            "relu" => Activation::Relu,
            "lrelu" => Activation::LeakyRelu,
            "tanh" => Activation::Tanh,
            _ => return Err(bad()),
        };
        let width: usize = w.strip_prefix('w').and_then(|n| n.parse().ok()).ok_or_else(bad)?;
        if !(4..=64).contains(&width) {
            return Err(bad());
        }
        Ok(Self {
            upsample,
            activation,
            width,
        })
    }
}

impl fmt::Display for ArchSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let up = match self.upsample {
            Upsample::Nearest => "nearest",
            Upsample::Shuffle => "shuffle",
        };
        let act = match self.activation {
            Activation::Relu => "relu",
            Activation::LeakyRelu => "lrelu",
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
        };
        write!(f, "{up}-{act}-w{}", self.width)
    }
}

/// Two stride-2 convolutions down to the latent, mirrored by two
/// upsampling stages back to pixels.
#[derive(Clone, Debug)]
pub(crate) struct AutoencoderNet {
    arch: ArchSpec,
    enc: [Conv; 3],
    dec_in: Conv,
    up1: Conv,
    up2: Conv,
}

impl AutoencoderNet {
    pub fn build(params: &mut ParamSet, rng: &mut impl Rng, arch: ArchSpec) -> Self {
        let w = arch.width;
        let enc = [
            Conv::new(params, rng, "enc.0", 3, w, 3, 2),
            Conv::new(params, rng, "enc.1", w, w, 3, 2),
            Conv::new(params, rng, "enc.2", w, LATENT_CHANNELS, 1, 1),
        ];
        let dec_in = Conv::new(params, rng, "dec.0", LATENT_CHANNELS, w, 3, 1);
        let (up1, up2) = match arch.upsample {
            Upsample::Nearest => (
                Conv::new(params, rng, "dec.1", w, w, 3, 1),
                Conv::new(params, rng, "dec.2", w, 3, 3, 1),
            ),
            Upsample::Shuffle => (
                Conv::new(params, rng, "dec.1", w, 4 * w, 3, 1),
                Conv::new(params, rng, "dec.2", w, 12, 3, 1),
            ),
        };
        Self {
            arch,
            enc,
            dec_in,
            up1,
            up2,
        }
    }

    pub fn encode(&self, g: &mut Graph, p: &Bound, x: Var) -> Var {
        let h = self.enc[0].forward(g, p, x);
        let h = g.act(h, self.arch.activation);
        let h = self.enc[1].forward(g, p, h);
        let h = g.act(h, self.arch.activation);
        self.enc[2].forward(g, p, h)
    }

    fn up(&self, g: &mut Graph, p: &Bound, conv: &Conv, h: Var) -> Var {
        match self.arch.upsample {
            Upsample::Nearest => {
                let u = g.upsample2(h);
                conv.forward(g, p, u)
            }
            Upsample::Shuffle => {
                let c = conv.forward(g, p, h);
                g.pixel_shuffle2(c)
            }
        }
    }

    pub fn decode(&self, g: &mut Graph, p: &Bound, z: Var) -> Var {
        let h = self.dec_in.forward(g, p, z);
        let h = g.act(h, self.arch.activation);
        let h = self.up(g, p, &self.up1, h);
        let h = g.act(h, self.arch.activation);
        let h = self.up(g, p, &self.up2, h);
        g.act(h, Activation::Sigmoid)
    }
}

/// Epsilon predictor on scaled latents; input is the noisy latent plus one
/// constant plane holding `t / T`.
#[derive(Clone, Debug)]
pub(crate) struct DenoiserNet {
    layers: [Conv; 4],
}

impl DenoiserNet {
    pub fn build(params: &mut ParamSet, rng: &mut impl Rng, width: usize) -> Self {
        Self {
            layers: [
                Conv::new(params, rng, "den.0", LATENT_CHANNELS + 1, width, 3, 1),
                Conv::new(params, rng, "den.1", width, width, 3, 1),
                Conv::new(params, rng, "den.2", width, width, 3, 1),
                Conv::new(params, rng, "den.3", width, LATENT_CHANNELS, 3, 1),
            ],
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Var {
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(g, p, h);
            if i + 1 < self.layers.len() {
                h = g.act(h, Activation::LeakyRelu);
            }
        }
        h
    }
}

/// Number of diffusion timesteps of the linear schedule.
pub const DIFFUSION_STEPS: usize = 1000;

/// Cumulative signal fractions `alpha_bar[t]` for `t = 0..=T`, with
/// `alpha_bar[0] = 1` and linear betas from 1e-4 to 0.02.
pub(crate) fn alpha_bar() -> Vec<f64> {
    let t_max = DIFFUSION_STEPS;
    let mut out = Vec::with_capacity(t_max + 1);
    out.push(1.0);
    let mut acc = 1.0;
    for t in 1..=t_max {
        let beta = 1e-4 + (0.02 - 1e-4) * (t - 1) as f64 / (t_max - 1) as f64;
        acc *= 1.0 - beta;
        out.push(acc);
    }
    out
}
