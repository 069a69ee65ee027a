use std::path::Path;

use super::config::ModelConfig;
use super::layers::{AttentionLayer, Binding, Conv, DecoderLayer, FeedForward};
use super::params::{load_into, read_manifest, seeded_rng, Init, ParamId, ParamStore};
use crate::error::{invalid_shape, Result};
use crate::numerics::{positional_encoding, Real, Tape, Tensor, Var};

#[derive(Debug, Clone)]
struct EncoderBlock {
    self_attn: AttentionLayer,
    cross_attn: AttentionLayer,
}

#[derive(Debug, Clone)]
struct Layout {
    backbone: Vec<Conv>,
    msf: Vec<Conv>,
    encoder: Vec<EncoderBlock>,
    query: ParamId,
    decoder: Vec<DecoderLayer>,
    centerness: Vec<Conv>,
    box_head: FeedForward,
}

/// The overlap estimation network: weights plus the layout that uses them.
#[derive(Debug, Clone)]
pub struct Oetr<T: Real> {
    config: ModelConfig,
    params: ParamStore<T>,
    layout: Layout,
}

/// Logit bias giving initial offsets of `sigmoid(-ln 3) = 0.25`.
const BOX_BIAS_INIT: f64 = -1.098_612_288_668_109_8;

impl<T: Real> Oetr<T> {
    /// Fresh network with weights drawn deterministically from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seeded_rng(seed);
        let mut s = ParamStore::default();
        let d = config.d_model;

        let mut backbone = Vec::new();
        let mut cin = 3;
        for (i, &c) in config.backbone_channels.iter().enumerate() {
            backbone.push(Conv::new(&mut s, &mut rng, &format!("backbone.{i}"), cin, c, 3, 2, 1, true));
            cin = c;
        }
        let msf = config
            .msf_kernels
            .iter()
            .zip(&config.msf_split)
            .map(|(&k, &c)| Conv::new(&mut s, &mut rng, &format!("msf.k{k}"), cin, c, k, 2, k / 2 - 1, false))
            .collect();
        let blocks = if config.share_encoder_weights {
            1
        } else {
            config.encoder_iterations
        };
        let encoder = (0..blocks)
            .map(|i| EncoderBlock {
                self_attn: AttentionLayer::new(&mut s, &mut rng, &format!("encoder.{i}.self"), d, config.ffn_hidden),
                cross_attn: AttentionLayer::new(&mut s, &mut rng, &format!("encoder.{i}.cross"), d, config.ffn_hidden),
            })
            .collect();
        let query = s.add(&mut rng, "decoder.query".into(), &[1, d], Init::Uniform(1.0));
        let decoder = (0..config.decoder_layers)
            .map(|i| DecoderLayer::new(&mut s, &mut rng, &format!("decoder.{i}"), d, config.ffn_hidden))
            .collect();
        let mut centerness = Vec::new();
        let mut cin = d;
        for (i, &c) in config.centerness_channels.iter().enumerate() {
            centerness.push(Conv::new(&mut s, &mut rng, &format!("centerness.{i}"), cin, c, 3, 1, 1, true));
            cin = c;
        }
        let last = config.centerness_channels.len();
        let logits = Conv::new(&mut s, &mut rng, &format!("centerness.{last}"), cin, 1, 1, 1, 0, false);
        // Uniform center probabilities at initialization.
        let w = logits.weight_id();
        let zeros = Tensor::zeros(s.values()[w.0].shape());
        s.values_mut()[w.0] = zeros;
        centerness.push(logits);
        let box_head = FeedForward::new(&mut s, &mut rng, "box", d, config.box_hidden, 4);
        if let Some(b) = box_head.down().bias_id() {
            s.values_mut()[b.0] = Tensor::full([4], T::lit(BOX_BIAS_INIT));
        }

        Ok(Self {
            config,
            params: s,
            layout: Layout {
                backbone,
                msf,
                encoder,
                query,
                decoder,
                centerness,
                box_head,
            },
        })
    }

    /// Loads a checkpoint directory written by [`super::save_checkpoint`].
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let manifest = read_manifest(dir)?;
        let mut model = Self::new(manifest.config.clone(), 0)
            .map_err(|e| crate::OetrError::Load(format!("checkpoint config rejected: {e}")))?;
        load_into(dir, &manifest, &mut model.params)?;
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    /// Same weights in another precision.
    pub fn cast<U: Real>(&self) -> Oetr<U> {
        Oetr {
            config: self.config.clone(),
            params: self.params.cast(),
            layout: self.layout.clone(),
        }
    }

    /// Records the parameters on `tape`, as gradient-tracked leaves when
    /// `trainable`, and returns a graph builder.
    pub fn bind<'a>(&'a self, tape: &'a Tape<T>, trainable: bool) -> Graph<'a, T> {
        let vars = self
            .params
            .values()
            .iter()
            .map(|v| {
                if trainable {
                    tape.leaf(v.clone())
                } else {
                    tape.constant(v.clone())
                }
            })
            .collect();
        Graph {
            model: self,
            tape,
            vars,
        }
    }

    /// Graph builder over caller-supplied parameter variables, one per entry
    /// of [`Oetr::params`] and of matching shape.
    pub fn bind_vars<'a>(&'a self, tape: &'a Tape<T>, vars: Vec<Var>) -> Result<Graph<'a, T>> {
        if vars.len() != self.params.len() {
            return Err(invalid_shape(format!(
                "expected {} parameter variables, got {}",
                self.params.len(),
                vars.len()
            )));
        }
        for ((v, p), name) in vars.iter().zip(self.params.values()).zip(self.params.names()) {
            if tape.shape(*v) != p.shape() {
                return Err(invalid_shape(format!("parameter {name}: shape {:?} != {:?}", tape.shape(*v), p.shape())));
            }
        }
        Ok(Graph {
            model: self,
            tape,
            vars,
        })
    }
}

/// Flattened features of one image on the attention grid.
#[derive(Debug, Clone)]
pub struct FeatureStack {
    /// Multi-scale features before correlation, `[N, d_model]`.
    pub flat: Var,
    /// Features after the encoder, `[N, d_model]`.
    pub correlated: Option<Var>,
    pub grid: (usize, usize),
    /// False for cells lying entirely in padding.
    pub mask: Vec<bool>,
}

impl FeatureStack {
    pub fn len(&self) -> usize {
        self.grid.0 * self.grid.1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Correlated features if the encoder has run, otherwise the flat ones.
    pub fn current(&self) -> Var {
        self.correlated.unwrap_or(self.flat)
    }
}

/// Centerness output: masked probabilities `[N]` and expected center `[2]`
/// as normalized `(x, y)`.
#[derive(Debug, Clone, Copy)]
pub struct Centerness {
    pub prob: Var,
    pub center: Var,
}

/// Tape handles of one image's prediction.
#[derive(Debug, Clone)]
pub struct PredictionVars {
    pub prob: Var,
    /// Expected overlap center, normalized `(x, y)`.
    pub center: Var,
    /// Center found by decoding the other image's query against these features.
    pub consistency: Var,
    /// Normalized `(l, t, r, b)` offsets in `(0, 1)`.
    pub offsets: Var,
    pub grid: (usize, usize),
    pub mask: Vec<bool>,
}

/// Builds the network's computation on one tape.
pub struct Graph<'a, T: Real> {
    model: &'a Oetr<T>,
    tape: &'a Tape<T>,
    vars: Vec<Var>,
}

impl<T: Real> Binding<T> for Graph<'_, T> {
    fn tape(&self) -> &Tape<T> {
        self.tape
    }

    fn p(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }
}

/// Grid cells that see at least one unpadded pixel.
pub fn cell_mask(grid: (usize, usize), stride: usize, valid: (usize, usize)) -> Vec<bool> {
    let (gh, gw) = grid;
    (0..gh * gw)
        .map(|n| (n / gw) * stride < valid.0 && (n % gw) * stride < valid.1)
        .collect()
}

/// Normalized cell-center coordinates, `[N, 2]` with rows `(x, y)`.
fn cell_centers<T: Real>(gh: usize, gw: usize) -> Tensor<T> {
    Tensor::from_fn([gh * gw, 2], |i| {
        let n = i / 2;
        if i % 2 == 0 {
            T::lit(((n % gw) as f64 + 0.5) / gw as f64)
        } else {
            T::lit(((n / gw) as f64 + 0.5) / gh as f64)
        }
    })
}

impl<'a, T: Real> Graph<'a, T> {
    pub fn tape(&self) -> &'a Tape<T> {
        self.tape
    }

    /// Parameter variables in [`ParamStore`] order.
    pub fn param_vars(&self) -> &[Var] {
        &self.vars
    }

    pub fn config(&self) -> &'a ModelConfig {
        &self.model.config
    }

    /// Stride-16 features `[C, H/16, W/16]` of an image `[3, H, W]`.
    pub fn backbone(&self, image: Var) -> Result<Var> {
        let shape = self.tape.shape(image);
        let stride = self.model.config.stride();
        if shape.len() != 3 || shape[0] != 3 || !shape[1].is_multiple_of(stride) || !shape[2].is_multiple_of(stride) || shape[1] == 0 || shape[2] == 0 {
            return Err(invalid_shape(format!(
                "image must be [3, H, W] with H, W positive multiples of {stride}, got {shape:?}"
            )));
        }
        let mut x = image;
        for conv in &self.model.layout.backbone {
            x = self.tape.relu(conv.forward(self, x)?);
        }
        Ok(x)
    }

    /// Parallel multi-scale convolutions, concatenated and flattened to `[N, d_model]`.
    pub fn msf(&self, feat: Var, mask: Vec<bool>) -> Result<FeatureStack> {
        let t = self.tape;
        let branches = self
            .model
            .layout
            .msf
            .iter()
            .map(|c| c.forward(self, feat))
            .collect::<Result<Vec<_>>>()?;
        let stacked = t.concat(&branches)?;
        let shape = t.shape(stacked);
        let (d, gh, gw) = (shape[0], shape[1], shape[2]);
        if mask.len() != gh * gw {
            return Err(invalid_shape(format!("mask of {} cells for a {gh}x{gw} grid", mask.len())));
        }
        let flat = t.transpose(t.reshape(stacked, &[d, gh * gw])?)?;
        Ok(FeatureStack {
            flat,
            correlated: None,
            grid: (gh, gw),
            mask,
        })
    }

    /// Backbone and multi-scale features for an image whose top-left
    /// `valid = (h, w)` pixels are content and the rest padding.
    pub fn features(&self, image: Var, valid: (usize, usize)) -> Result<FeatureStack> {
        let feat = self.backbone(image)?;
        let shape = self.tape.shape(feat);
        let grid = (shape[1] / 2, shape[2] / 2);
        self.msf(feat, cell_mask(grid, self.model.config.stride(), valid))
    }

    /// Interleaved self- and cross-attention with positional encoding added
    /// to both streams at every iteration.
    pub fn encoder(&self, a: &FeatureStack, b: &FeatureStack) -> Result<(FeatureStack, FeatureStack)> {
        let t = self.tape;
        let d = self.model.config.d_model;
        let pe = |f: &FeatureStack| -> Result<Var> {
            Ok(t.constant(positional_encoding::<T>(f.grid.0, f.grid.1, d)?))
        };
        let (pe_a, pe_b) = (pe(a)?, pe(b)?);
        let (mut xa, mut xb) = (a.current(), b.current());
        for it in 0..self.model.config.encoder_iterations {
            let block = &self.model.layout.encoder[it % self.model.layout.encoder.len()];
            xa = t.add(xa, pe_a)?;
            xb = t.add(xb, pe_b)?;
            xa = block.self_attn.forward(self, xa, xa, &a.mask)?;
            xb = block.self_attn.forward(self, xb, xb, &b.mask)?;
            let na = block.cross_attn.forward(self, xa, xb, &b.mask)?;
            let nb = block.cross_attn.forward(self, xb, xa, &a.mask)?;
            xa = na;
            xb = nb;
        }
        let done = |f: &FeatureStack, x: Var| FeatureStack {
            correlated: Some(x),
            ..f.clone()
        };
        Ok((done(a, xa), done(b, xb)))
    }

    /// Decodes the learned query against correlated features, `[1, d_model]`.
    pub fn decoder(&self, f: &FeatureStack) -> Result<Var> {
        let mut q = self.p(self.model.layout.query);
        for layer in &self.model.layout.decoder {
            q = layer.forward(self, q, f.current(), &f.mask)?;
        }
        Ok(q)
    }

    /// Weighted-sum centerness: similarity-scaled features through the
    /// centerness convolutions, masked softmax, then the expected cell center.
    pub fn ws_centerness(&self, q: Var, f: &FeatureStack) -> Result<Centerness> {
        let t = self.tape;
        let d = self.model.config.d_model;
        let (gh, gw) = f.grid;
        let feats = f.current();
        let qt = t.transpose(q)?;
        let mut sim = t.matmul(feats, qt)?;
        if self.model.config.scale_similarity {
            sim = t.scale(sim, T::lit(1.0 / (d as f64).sqrt()));
        }
        let weighted = t.scale_rows(feats, sim)?;
        let mut x = t.reshape(t.transpose(weighted)?, &[d, gh, gw])?;
        let convs = &self.model.layout.centerness;
        for (i, conv) in convs.iter().enumerate() {
            x = conv.forward(self, x)?;
            if i + 1 < convs.len() {
                x = t.relu(x);
            }
        }
        let logits = t.reshape(x, &[gh * gw])?;
        let prob = t.softmax(logits, Some(&f.mask))?;
        let row = t.reshape(prob, &[1, gh * gw])?;
        let coords = t.constant(cell_centers::<T>(gh, gw));
        let center = t.reshape(t.matmul(row, coords)?, &[2])?;
        debug_assert!({
            let p = t.value(prob);
            let c = t.value(center);
            let s: f64 = p.data().iter().map(|v| v.to_f64_lossy()).sum();
            (s - 1.0).abs() < 1e-4 && c.data().iter().all(|v| (0.0..=1.0).contains(&v.to_f64_lossy()))
        });
        Ok(Centerness { prob, center })
    }

    /// Normalized `(l, t, r, b)` offsets `[4]` from a decoded query.
    pub fn box_regression(&self, q: Var) -> Result<Var> {
        let t = self.tape;
        let out = self.model.layout.box_head.forward(self, q)?;
        t.reshape(t.sigmoid(out), &[4])
    }

    /// Full forward pass for an image pair of equal padded size.
    pub fn forward(
        &self,
        image_a: Var,
        image_b: Var,
        valid_a: (usize, usize),
        valid_b: (usize, usize),
    ) -> Result<(PredictionVars, PredictionVars)> {
        let (sa, sb) = (self.tape.shape(image_a), self.tape.shape(image_b));
        if sa != sb {
            return Err(invalid_shape(format!("paired images differ in size: {sa:?} vs {sb:?}")));
        }
        let fa = self.features(image_a, valid_a)?;
        let fb = self.features(image_b, valid_b)?;
        let (fa, fb) = self.encoder(&fa, &fb)?;
        let qa = self.decoder(&fa)?;
        let qb = self.decoder(&fb)?;
        let ca = self.ws_centerness(qa, &fa)?;
        let cb = self.ws_centerness(qb, &fb)?;
        let cross_a = self.ws_centerness(qb, &fa)?;
        let cross_b = self.ws_centerness(qa, &fb)?;
        let oa = self.box_regression(qa)?;
        let ob = self.box_regression(qb)?;
        let pack = |c: Centerness, cross: Centerness, offsets: Var, f: &FeatureStack| PredictionVars {
            prob: c.prob,
            center: c.center,
            consistency: cross.center,
            offsets,
            grid: f.grid,
            mask: f.mask.clone(),
        };
        Ok((pack(ca, cross_a, oa, &fa), pack(cb, cross_b, ob, &fb)))
    }
}
