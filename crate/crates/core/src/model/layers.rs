//! Parameterized building blocks and their tape forward passes.

use rand_chacha::ChaCha8Rng;

use super::params::{Init, ParamId, ParamStore};
use crate::error::Result;
use crate::numerics::{Real, Tape, Var};

/// Resolves parameter handles to tape variables.
pub(crate) trait Binding<T: Real> {
    fn tape(&self) -> &Tape<T>;
    fn p(&self, id: ParamId) -> Var;
}

/// `y = x W (+ b)` with `W [in, out]`.
#[derive(Debug, Clone)]
pub(crate) struct Linear {
    w: ParamId,
    b: Option<ParamId>,
}

impl Linear {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        inp: usize,
        out: usize,
        bias: bool,
        relu_follows: bool,
    ) -> Self {
        let init = if relu_follows {
            Init::He { fan_in: inp }
        } else {
            Init::Glorot {
                fan_in: inp,
                fan_out: out,
            }
        };
        let w = store.add(rng, format!("{name}.weight"), &[inp, out], init);
        let b = bias.then(|| store.add(rng, format!("{name}.bias"), &[out], Init::Const(0.0)));
        Self { w, b }
    }

    pub fn bias_id(&self) -> Option<ParamId> {
        self.b
    }

    pub fn forward<T: Real>(&self, g: &impl Binding<T>, x: Var) -> Result<Var> {
        let t = g.tape();
        let y = t.matmul(x, g.p(self.w))?;
        match self.b {
            Some(b) => t.add_row_bias(y, g.p(b)),
            None => Ok(y),
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Norm {
    gain: ParamId,
    bias: ParamId,
}

impl Norm {
    pub fn new<T: Real>(store: &mut ParamStore<T>, rng: &mut ChaCha8Rng, name: &str, d: usize) -> Self {
        Self {
            gain: store.add(rng, format!("{name}.gain"), &[d], Init::Const(1.0)),
            bias: store.add(rng, format!("{name}.bias"), &[d], Init::Const(0.0)),
        }
    }

    pub fn forward<T: Real>(&self, g: &impl Binding<T>, x: Var) -> Result<Var> {
        g.tape().layer_norm(x, g.p(self.gain), g.p(self.bias))
    }
}

/// Square convolution with per-channel bias.
#[derive(Debug, Clone)]
pub(crate) struct Conv {
    w: ParamId,
    b: ParamId,
    stride: usize,
    pad: usize,
}

impl Conv {
    pub fn weight_id(&self) -> ParamId {
        self.w
    }

    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        pad: usize,
        relu_follows: bool,
    ) -> Self {
        let fan_in = cin * k * k;
        let init = if relu_follows {
            Init::He { fan_in }
        } else {
            Init::Glorot {
                fan_in,
                fan_out: cout * k * k,
            }
        };
        Self {
            w: store.add(rng, format!("{name}.weight"), &[cout, cin, k, k], init),
            b: store.add(rng, format!("{name}.bias"), &[cout], Init::Const(0.0)),
            stride,
            pad,
        }
    }

    pub fn forward<T: Real>(&self, g: &impl Binding<T>, x: Var) -> Result<Var> {
        let t = g.tape();
        let y = t.conv2d(x, g.p(self.w), self.stride, self.pad)?;
        t.add_channel_bias(y, g.p(self.b))
    }
}

/// Two-layer ReLU perceptron.
#[derive(Debug, Clone)]
pub(crate) struct FeedForward {
    up: Linear,
    down: Linear,
}

impl FeedForward {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        inp: usize,
        hidden: usize,
        out: usize,
    ) -> Self {
        Self {
            up: Linear::new(store, rng, &format!("{name}.up"), inp, hidden, true, true),
            down: Linear::new(store, rng, &format!("{name}.down"), hidden, out, true, false),
        }
    }

    pub fn down(&self) -> &Linear {
        &self.down
    }

    pub fn forward<T: Real>(&self, g: &impl Binding<T>, x: Var) -> Result<Var> {
        let h = self.up.forward(g, x)?;
        let h = g.tape().relu(h);
        self.down.forward(g, h)
    }
}

/// Attention message passing: `x + LN2(FFN([x, LN1(merge(attn(x, src)))]))`.
#[derive(Debug, Clone)]
pub(crate) struct AttentionLayer {
    q: Linear,
    k: Linear,
    v: Linear,
    merge: Linear,
    norm1: Norm,
    ffn: FeedForward,
    norm2: Norm,
}

impl AttentionLayer {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        d: usize,
        hidden: usize,
    ) -> Self {
        Self {
            q: Linear::new(store, rng, &format!("{name}.q"), d, d, false, false),
            k: Linear::new(store, rng, &format!("{name}.k"), d, d, false, false),
            v: Linear::new(store, rng, &format!("{name}.v"), d, d, false, false),
            merge: Linear::new(store, rng, &format!("{name}.merge"), d, d, false, false),
            norm1: Norm::new(store, rng, &format!("{name}.norm1"), d),
            ffn: FeedForward::new(store, rng, &format!("{name}.ffn"), 2 * d, hidden, d),
            norm2: Norm::new(store, rng, &format!("{name}.norm2"), d),
        }
    }

    /// Updates `x` with messages from `source`; `mask` marks valid source rows.
    pub fn forward<T: Real>(&self, g: &impl Binding<T>, x: Var, source: Var, mask: &[bool]) -> Result<Var> {
        let t = g.tape();
        let q = self.q.forward(g, x)?;
        let k = self.k.forward(g, source)?;
        let v = self.v.forward(g, source)?;
        let msg = t.linear_attention(q, k, v, Some(mask))?;
        let msg = self.merge.forward(g, msg)?;
        let msg = self.norm1.forward(g, msg)?;
        let msg = t.concat_cols(x, msg)?;
        let msg = self.ffn.forward(g, msg)?;
        let msg = self.norm2.forward(g, msg)?;
        t.add(x, msg)
    }
}

/// Post-norm transformer decoder layer for a single query. With one token the
/// self-attention weights are identically 1, so only its value and output
/// projections carry parameters.
#[derive(Debug, Clone)]
pub(crate) struct DecoderLayer {
    self_v: Linear,
    self_out: Linear,
    norm1: Norm,
    cross_q: Linear,
    cross_k: Linear,
    cross_v: Linear,
    cross_out: Linear,
    norm2: Norm,
    ffn: FeedForward,
    norm3: Norm,
}

impl DecoderLayer {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        d: usize,
        hidden: usize,
    ) -> Self {
        let lin = |store: &mut ParamStore<T>, rng: &mut ChaCha8Rng, part: &str, bias: bool| {
            Linear::new(store, rng, &format!("{name}.{part}"), d, d, bias, false)
        };
        Self {
            self_v: lin(store, rng, "self_v", false),
            self_out: lin(store, rng, "self_out", true),
            norm1: Norm::new(store, rng, &format!("{name}.norm1"), d),
            cross_q: lin(store, rng, "cross_q", false),
            cross_k: lin(store, rng, "cross_k", false),
            cross_v: lin(store, rng, "cross_v", false),
            cross_out: lin(store, rng, "cross_out", true),
            norm2: Norm::new(store, rng, &format!("{name}.norm2"), d),
            ffn: FeedForward::new(store, rng, &format!("{name}.ffn"), d, hidden, d),
            norm3: Norm::new(store, rng, &format!("{name}.norm3"), d),
        }
    }

    pub fn forward<T: Real>(&self, g: &impl Binding<T>, query: Var, memory: Var, mask: &[bool]) -> Result<Var> {
        let t = g.tape();
        let sa = self.self_v.forward(g, query)?;
        let sa = self.self_out.forward(g, sa)?;
        let x = self.norm1.forward(g, t.add(query, sa)?)?;

        let q = self.cross_q.forward(g, x)?;
        let k = self.cross_k.forward(g, memory)?;
        let v = self.cross_v.forward(g, memory)?;
        let ca = t.linear_attention(q, k, v, Some(mask))?;
        let ca = self.cross_out.forward(g, ca)?;
        let x = self.norm2.forward(g, t.add(x, ca)?)?;

        let ff = self.ffn.forward(g, x)?;
        self.norm3.forward(g, t.add(x, ff)?)
    }
}
