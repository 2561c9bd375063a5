use rand::Rng;

use crate::nn::{Activation, Bound, Conv, Dense, Graph, ParamSet, Real, Tensor, Var};

/// Noise-imprint extractor: subtract a learned 5x5 low-pass prediction, run
/// a small conv stack on the residual, pool globally.
#[derive(Clone, Debug, PartialEq)]
pub struct Nie {
    lowpass: Conv,
    convs: [Conv; 4],
}

impl Nie {
    pub fn build<T: Real>(params: &mut ParamSet<T>, rng: &mut impl Rng, width: usize, dim: usize) -> Self {
        let lowpass = Conv::new(params, rng, "nie.lowpass", 3, 3, 5, 1);
        // Start from a per-channel box blur so the residual is high-pass.
        let w = params.get_mut(lowpass.w);
        let mut box_filter = vec![T::zero(); 3 * 3 * 25];
        for c in 0..3 {
            for k in 0..25 {
                box_filter[(c * 3 + c) * 25 + k] = T::lit(1.0 / 25.0);
            }
        }
        *w = Tensor::new(&[3, 3, 5, 5], box_filter);
        *params.get_mut(lowpass.b) = Tensor::zeros(&[3]);
        Self {
            lowpass,
            convs: [
                Conv::new(params, rng, "nie.0", 3, width, 3, 1),
                Conv::new(params, rng, "nie.1", width, width, 3, 2),
                Conv::new(params, rng, "nie.2", width, 2 * width, 3, 2),
                Conv::new(params, rng, "nie.3", 2 * width, dim, 1, 1),
            ],
        }
    }

    /// Pooled `[n, dim]` noise features of a `[n, 3, H, W]` batch.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Var {
        let low = self.lowpass.forward(g, p, x);
        let mut h = g.sub(x, low);
        for conv in &self.convs {
            h = conv.forward(g, p, h);
            h = g.act(h, Activation::LeakyRelu);
        }
        g.global_avg_pool(h)
    }
}

/// Small strided conv embedding standing in for a semantic backbone.
#[derive(Clone, Debug, PartialEq)]
pub struct SemNet {
    convs: [Conv; 3],
    out: Dense,
}

impl SemNet {
    pub fn build<T: Real>(params: &mut ParamSet<T>, rng: &mut impl Rng, width: usize, dim: usize) -> Self {
        Self {
            convs: [
                Conv::new(params, rng, "sem.0", 3, width, 3, 2),
                Conv::new(params, rng, "sem.1", width, 2 * width, 3, 2),
                Conv::new(params, rng, "sem.2", 2 * width, 4 * width, 3, 2),
            ],
            out: Dense::new(params, rng, "sem.out", 4 * width, dim),
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Var {
        let mut h = x;
        for conv in &self.convs {
            h = conv.forward(g, p, h);
            h = g.act(h, Activation::LeakyRelu);
        }
        let h = g.global_avg_pool(h);
        let h = self.out.forward(g, p, h);
        g.act(h, Activation::LeakyRelu)
    }
}

/// Two dense layers with a leaky ReLU between.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    l1: Dense,
    l2: Dense,
}

impl Mlp {
    pub fn build<T: Real>(
        params: &mut ParamSet<T>,
        rng: &mut impl Rng,
        name: &str,
        inp: usize,
        hidden: usize,
        out: usize,
    ) -> Self {
        Self {
            l1: Dense::new(params, rng, &format!("{name}.0"), inp, hidden),
            l2: Dense::new(params, rng, &format!("{name}.1"), hidden, out),
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Var {
        let h = self.l1.forward(g, p, x);
        let h = g.act(h, Activation::LeakyRelu);
        self.l2.forward(g, p, h)
    }
}
