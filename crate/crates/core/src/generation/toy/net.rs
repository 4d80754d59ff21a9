//! Hand-rolled transformer encoder-decoder used by the toy backend:
//! pre-norm layers, learned positions, tied input/output embeddings, and
//! explicit backward passes. Everything runs on 2-D `f32` arrays, one
//! sequence at a time, so no padding masks are needed and every operation
//! is bit-deterministic.

use ndarray::{s, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

const LN_EPS: f32 = 1e-5;

/// Dropout context threaded through training forward passes. Inference
/// paths use [`DropCtx::eval`], which generates no masks.
pub struct DropCtx<'a> {
    p: f32,
    rng: Option<&'a mut ChaCha8Rng>,
}

impl<'a> DropCtx<'a> {
    pub fn train(p: f32, rng: &'a mut ChaCha8Rng) -> Self {
        Self { p, rng: Some(rng) }
    }

    pub fn eval() -> DropCtx<'static> {
        DropCtx { p: 0.0, rng: None }
    }

    /// Inverted-dropout mask, or None when inactive.
    fn mask(&mut self, rows: usize, cols: usize) -> Option<Array2<f32>> {
        let p = self.p;
        match self.rng.as_mut() {
            Some(rng) if p > 0.0 => {
                let keep = 1.0 / (1.0 - p);
                Some(Array2::from_shape_fn((rows, cols), |_| {
                    if rng.gen::<f32>() < p {
                        0.0
                    } else {
                        keep
                    }
                }))
            }
            _ => None,
        }
    }
}

fn apply_mask(x: &mut Array2<f32>, mask: &Option<Array2<f32>>) {
    if let Some(m) = mask {
        *x *= m;
    }
}

fn masked_grad(dy: &Array2<f32>, mask: &Option<Array2<f32>>) -> Array2<f32> {
    match mask {
        Some(m) => dy * m,
        None => dy.clone(),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Linear {
    pub w: Array2<f32>,
    pub b: Array2<f32>,
}

impl Linear {
    fn new(inp: usize, out: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = (6.0 / (inp + out) as f32).sqrt();
        Self {
            w: Array2::from_shape_fn((inp, out), |_| rng.gen_range(-bound..bound)),
            b: Array2::zeros((1, out)),
        }
    }

    fn zeros_like(&self) -> Self {
        Self {
            w: Array2::zeros(self.w.raw_dim()),
            b: Array2::zeros(self.b.raw_dim()),
        }
    }

    fn forward(&self, x: &Array2<f32>) -> Array2<f32> {
        x.dot(&self.w) + &self.b
    }

    fn backward(&self, x: &Array2<f32>, dy: &Array2<f32>, grad: &mut Linear) -> Array2<f32> {
        grad.w += &x.t().dot(dy);
        grad.b += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
        dy.dot(&self.w.t())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayerNorm {
    pub g: Array2<f32>,
    pub b: Array2<f32>,
}

pub struct LnCache {
    xhat: Array2<f32>,
    inv: Vec<f32>,
}

impl LayerNorm {
    fn new(dim: usize) -> Self {
        Self {
            g: Array2::ones((1, dim)),
            b: Array2::zeros((1, dim)),
        }
    }

    fn zeros_like(&self) -> Self {
        Self {
            g: Array2::zeros(self.g.raw_dim()),
            b: Array2::zeros(self.b.raw_dim()),
        }
    }

    fn forward(&self, x: &Array2<f32>) -> (Array2<f32>, LnCache) {
        let d = x.ncols() as f32;
        let mut xhat = Array2::zeros(x.raw_dim());
        let mut inv = Vec::with_capacity(x.nrows());
        for (i, row) in x.rows().into_iter().enumerate() {
            let mu = row.sum() / d;
            let mut var = 0.0f32;
            for &v in row {
                var += (v - mu) * (v - mu);
            }
            var /= d;
            let r = 1.0 / (var + LN_EPS).sqrt();
            inv.push(r);
            for (j, &v) in row.iter().enumerate() {
                xhat[[i, j]] = (v - mu) * r;
            }
        }
        let y = &xhat * &self.g + &self.b;
        (y, LnCache { xhat, inv })
    }

    fn backward(&self, dy: &Array2<f32>, cache: &LnCache, grad: &mut LayerNorm) -> Array2<f32> {
        grad.g += &(dy * &cache.xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
        grad.b += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
        let dxhat = dy * &self.g;
        let d = dy.ncols() as f32;
        let mut dx = Array2::zeros(dy.raw_dim());
        for i in 0..dy.nrows() {
            let dxhat_row = dxhat.row(i);
            let xhat_row = cache.xhat.row(i);
            let s1 = dxhat_row.sum();
            let s2 = (&dxhat_row * &xhat_row).sum();
            let r = cache.inv[i] / d;
            for j in 0..dy.ncols() {
                dx[[i, j]] = r * (d * dxhat_row[j] - s1 - xhat_row[j] * s2);
            }
        }
        dx
    }
}

fn softmax_rows(scores: &mut Array2<f32>, causal: bool) {
    for (i, mut row) in scores.rows_mut().into_iter().enumerate() {
        if causal {
            for j in i + 1..row.len() {
                row[j] = f32::NEG_INFINITY;
            }
        }
        let max = row.fold(f32::NEG_INFINITY, |a, &b| a.max(b));
        let mut sum = 0.0f32;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

/// ds = a * (da - rowsum(da * a))
fn softmax_backward(a: &Array2<f32>, da: &Array2<f32>) -> Array2<f32> {
    let mut ds = Array2::zeros(a.raw_dim());
    for i in 0..a.nrows() {
        let dot = (&da.row(i) * &a.row(i)).sum();
        for j in 0..a.ncols() {
            ds[[i, j]] = a[[i, j]] * (da[[i, j]] - dot);
        }
    }
    ds
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MultiHeadAttention {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub heads: usize,
}

pub struct AttnCache {
    q: Array2<f32>,
    k: Array2<f32>,
    v: Array2<f32>,
    attn: Vec<Array2<f32>>,
    ctx: Array2<f32>,
}

impl MultiHeadAttention {
    fn new(dim: usize, heads: usize, rng: &mut ChaCha8Rng) -> Self {
        assert_eq!(dim % heads, 0, "model dim must be divisible by head count");
        Self {
            wq: Linear::new(dim, dim, rng),
            wk: Linear::new(dim, dim, rng),
            wv: Linear::new(dim, dim, rng),
            wo: Linear::new(dim, dim, rng),
            heads,
        }
    }

    fn zeros_like(&self) -> Self {
        Self {
            wq: self.wq.zeros_like(),
            wk: self.wk.zeros_like(),
            wv: self.wv.zeros_like(),
            wo: self.wo.zeros_like(),
            heads: self.heads,
        }
    }

    fn forward(&self, q_in: &Array2<f32>, kv_in: &Array2<f32>, causal: bool) -> (Array2<f32>, AttnCache) {
        let q = self.wq.forward(q_in);
        let k = self.wk.forward(kv_in);
        let v = self.wv.forward(kv_in);
        let dim = q.ncols();
        let dh = dim / self.heads;
        let scale = 1.0 / (dh as f32).sqrt();
        let mut ctx = Array2::zeros((q.nrows(), dim));
        let mut attn = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let cols = s![.., h * dh..(h + 1) * dh];
            let qh = q.slice(cols);
            let kh = k.slice(cols);
            let vh = v.slice(cols);
            let mut scores = qh.dot(&kh.t());
            scores *= scale;
            softmax_rows(&mut scores, causal);
            let ch = scores.dot(&vh);
            ctx.slice_mut(cols).assign(&ch);
            attn.push(scores);
        }
        let out = self.wo.forward(&ctx);
        (out, AttnCache { q, k, v, attn, ctx })
    }

    fn backward(
        &self,
        q_in: &Array2<f32>,
        kv_in: &Array2<f32>,
        cache: &AttnCache,
        dout: &Array2<f32>,
        grad: &mut MultiHeadAttention,
    ) -> (Array2<f32>, Array2<f32>) {
        let dctx = self.wo.backward(&cache.ctx, dout, &mut grad.wo);
        let dim = cache.q.ncols();
        let dh = dim / self.heads;
        let scale = 1.0 / (dh as f32).sqrt();
        let mut dq = Array2::zeros(cache.q.raw_dim());
        let mut dk = Array2::zeros(cache.k.raw_dim());
        let mut dv = Array2::zeros(cache.v.raw_dim());
        for h in 0..self.heads {
            let cols = s![.., h * dh..(h + 1) * dh];
            let a = &cache.attn[h];
            let qh = cache.q.slice(cols);
            let kh = cache.k.slice(cols);
            let vh = cache.v.slice(cols);
            let dch = dctx.slice(cols);
            let da = dch.dot(&vh.t());
            let dvh = a.t().dot(&dch);
            let mut ds = softmax_backward(a, &da);
            ds *= scale;
            let dqh = ds.dot(&kh);
            let dkh = ds.t().dot(&qh);
            dq.slice_mut(cols).assign(&dqh);
            dk.slice_mut(cols).assign(&dkh);
            dv.slice_mut(cols).assign(&dvh);
        }
        let dq_in = self.wq.backward(q_in, &dq, &mut grad.wq);
        let dk_in = self.wk.backward(kv_in, &dk, &mut grad.wk);
        let dv_in = self.wv.backward(kv_in, &dv, &mut grad.wv);
        (dq_in, dk_in + dv_in)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeedForward {
    pub w1: Linear,
    pub w2: Linear,
}

pub struct FfCache {
    input: Array2<f32>,
    pre: Array2<f32>,
    act: Array2<f32>,
}

impl FeedForward {
    fn new(dim: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            w1: Linear::new(dim, hidden, rng),
            w2: Linear::new(hidden, dim, rng),
        }
    }

    fn zeros_like(&self) -> Self {
        Self {
            w1: self.w1.zeros_like(),
            w2: self.w2.zeros_like(),
        }
    }

    fn forward(&self, x: &Array2<f32>) -> (Array2<f32>, FfCache) {
        let pre = self.w1.forward(x);
        let act = pre.mapv(|v| v.max(0.0));
        let y = self.w2.forward(&act);
        (
            y,
            FfCache {
                input: x.clone(),
                pre,
                act,
            },
        )
    }

    fn backward(&self, dy: &Array2<f32>, cache: &FfCache, grad: &mut FeedForward) -> Array2<f32> {
        let dact = self.w2.backward(&cache.act, dy, &mut grad.w2);
        let mut dpre = dact;
        for (d, &p) in dpre.iter_mut().zip(cache.pre.iter()) {
            if p <= 0.0 {
                *d = 0.0;
            }
        }
        self.w1.backward(&cache.input, &dpre, &mut grad.w1)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EncoderLayer {
    pub ln1: LayerNorm,
    pub attn: MultiHeadAttention,
    pub ln2: LayerNorm,
    pub ff: FeedForward,
}

pub struct EncLayerCache {
    y1: Array2<f32>,
    c1: LnCache,
    attn: AttnCache,
    attn_mask: Option<Array2<f32>>,
    c2: LnCache,
    ff: FfCache,
    ff_mask: Option<Array2<f32>>,
}

impl EncoderLayer {
    fn new(dim: usize, heads: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            ln1: LayerNorm::new(dim),
            attn: MultiHeadAttention::new(dim, heads, rng),
            ln2: LayerNorm::new(dim),
            ff: FeedForward::new(dim, hidden, rng),
        }
    }

    fn zeros_like(&self) -> Self {
        Self {
            ln1: self.ln1.zeros_like(),
            attn: self.attn.zeros_like(),
            ln2: self.ln2.zeros_like(),
            ff: self.ff.zeros_like(),
        }
    }

    fn forward(&self, x: &Array2<f32>, drop: &mut DropCtx) -> (Array2<f32>, EncLayerCache) {
        let (y1, c1) = self.ln1.forward(x);
        let (mut attn_out, attn) = self.attn.forward(&y1, &y1, false);
        let attn_mask = drop.mask(attn_out.nrows(), attn_out.ncols());
        apply_mask(&mut attn_out, &attn_mask);
        let x2 = x + &attn_out;
        let (y2, c2) = self.ln2.forward(&x2);
        let (mut ff_out, ff) = self.ff.forward(&y2);
        let ff_mask = drop.mask(ff_out.nrows(), ff_out.ncols());
        apply_mask(&mut ff_out, &ff_mask);
        let out = &x2 + &ff_out;
        (
            out,
            EncLayerCache {
                y1,
                c1,
                attn,
                attn_mask,
                c2,
                ff,
                ff_mask,
            },
        )
    }

    fn backward(&self, dout: &Array2<f32>, cache: &EncLayerCache, grad: &mut EncoderLayer) -> Array2<f32> {
        let dff_out = masked_grad(dout, &cache.ff_mask);
        let dy2 = self.ff.backward(&dff_out, &cache.ff, &mut grad.ff);
        let dx2 = dout + &self.ln2.backward(&dy2, &cache.c2, &mut grad.ln2);
        let dattn_out = masked_grad(&dx2, &cache.attn_mask);
        let (dq, dkv) = self
            .attn
            .backward(&cache.y1, &cache.y1, &cache.attn, &dattn_out, &mut grad.attn);
        let dy1 = dq + dkv;
        &dx2 + &self.ln1.backward(&dy1, &cache.c1, &mut grad.ln1)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecoderLayer {
    pub ln1: LayerNorm,
    pub self_attn: MultiHeadAttention,
    pub ln2: LayerNorm,
    pub cross_attn: MultiHeadAttention,
    pub ln3: LayerNorm,
    pub ff: FeedForward,
}

pub struct DecLayerCache {
    y1: Array2<f32>,
    c1: LnCache,
    self_attn: AttnCache,
    self_mask: Option<Array2<f32>>,
    y2: Array2<f32>,
    c2: LnCache,
    cross_attn: AttnCache,
    cross_mask: Option<Array2<f32>>,
    c3: LnCache,
    ff: FfCache,
    ff_mask: Option<Array2<f32>>,
}

impl DecoderLayer {
    fn new(dim: usize, heads: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            ln1: LayerNorm::new(dim),
            self_attn: MultiHeadAttention::new(dim, heads, rng),
            ln2: LayerNorm::new(dim),
            cross_attn: MultiHeadAttention::new(dim, heads, rng),
            ln3: LayerNorm::new(dim),
            ff: FeedForward::new(dim, hidden, rng),
        }
    }

    fn zeros_like(&self) -> Self {
        Self {
            ln1: self.ln1.zeros_like(),
            self_attn: self.self_attn.zeros_like(),
            ln2: self.ln2.zeros_like(),
            cross_attn: self.cross_attn.zeros_like(),
            ln3: self.ln3.zeros_like(),
            ff: self.ff.zeros_like(),
        }
    }

    fn forward(
        &self,
        x: &Array2<f32>,
        memory: &Array2<f32>,
        drop: &mut DropCtx,
    ) -> (Array2<f32>, DecLayerCache) {
        let (y1, c1) = self.ln1.forward(x);
        let (mut sa_out, self_attn) = self.self_attn.forward(&y1, &y1, true);
        let self_mask = drop.mask(sa_out.nrows(), sa_out.ncols());
        apply_mask(&mut sa_out, &self_mask);
        let x2 = x + &sa_out;
        let (y2, c2) = self.ln2.forward(&x2);
        let (mut ca_out, cross_attn) = self.cross_attn.forward(&y2, memory, false);
        let cross_mask = drop.mask(ca_out.nrows(), ca_out.ncols());
        apply_mask(&mut ca_out, &cross_mask);
        let x3 = &x2 + &ca_out;
        let (y3, c3) = self.ln3.forward(&x3);
        let (mut ff_out, ff) = self.ff.forward(&y3);
        let ff_mask = drop.mask(ff_out.nrows(), ff_out.ncols());
        apply_mask(&mut ff_out, &ff_mask);
        let out = &x3 + &ff_out;
        (
            out,
            DecLayerCache {
                y1,
                c1,
                self_attn,
                self_mask,
                y2,
                c2,
                cross_attn,
                cross_mask,
                c3,
                ff,
                ff_mask,
            },
        )
    }

    /// Returns (dx, dmemory).
    fn backward(
        &self,
        dout: &Array2<f32>,
        cache: &DecLayerCache,
        memory: &Array2<f32>,
        grad: &mut DecoderLayer,
    ) -> (Array2<f32>, Array2<f32>) {
        let dff_out = masked_grad(dout, &cache.ff_mask);
        let dy3 = self.ff.backward(&dff_out, &cache.ff, &mut grad.ff);
        let dx3 = dout + &self.ln3.backward(&dy3, &cache.c3, &mut grad.ln3);
        let dca_out = masked_grad(&dx3, &cache.cross_mask);
        let (dy2, dmemory) = self.cross_attn.backward(
            &cache.y2,
            memory,
            &cache.cross_attn,
            &dca_out,
            &mut grad.cross_attn,
        );
        let dx2 = &dx3 + &self.ln2.backward(&dy2, &cache.c2, &mut grad.ln2);
        let dsa_out = masked_grad(&dx2, &cache.self_mask);
        let (dq, dkv) = self.self_attn.backward(
            &cache.y1,
            &cache.y1,
            &cache.self_attn,
            &dsa_out,
            &mut grad.self_attn,
        );
        let dy1 = dq + dkv;
        let dx = &dx2 + &self.ln1.backward(&dy1, &cache.c1, &mut grad.ln1);
        (dx, dmemory)
    }
}

/// The full parameter set. The same struct doubles as the gradient and
/// optimizer-moment container via [`ToyModel::zeros_like`]. Output logits
/// are tied to the input embeddings and augmented with a copy path: an
/// attention head over the encoder memory whose weights are scattered onto
/// the source tokens' vocabulary slots, which lets a small model learn span
/// copying quickly.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ToyModel {
    pub emb: Array2<f32>,
    pub pos: Array2<f32>,
    pub enc: Vec<EncoderLayer>,
    pub enc_ln: LayerNorm,
    pub dec: Vec<DecoderLayer>,
    pub dec_ln: LayerNorm,
    pub copy_proj: Array2<f32>,
    pub copy_gain: Array2<f32>,
}

pub struct EncodeCache {
    layers: Vec<EncLayerCache>,
    ln: LnCache,
    embed_mask: Option<Array2<f32>>,
}

pub struct DecodeCache {
    layers: Vec<DecLayerCache>,
    ln: LnCache,
    pub h: Array2<f32>,
    copy_q: Array2<f32>,
    copy_attn: Array2<f32>,
    embed_mask: Option<Array2<f32>>,
}

impl ToyModel {
    pub fn new(
        vocab: usize,
        dim: usize,
        heads: usize,
        hidden: usize,
        max_seq: usize,
        enc_layers: usize,
        dec_layers: usize,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let emb = Array2::from_shape_fn((vocab, dim), |_| rng.gen_range(-0.05..0.05f32));
        let pos = Array2::from_shape_fn((max_seq, dim), |_| rng.gen_range(-0.05..0.05f32));
        let enc = (0..enc_layers)
            .map(|_| EncoderLayer::new(dim, heads, hidden, &mut rng))
            .collect();
        let dec = (0..dec_layers)
            .map(|_| DecoderLayer::new(dim, heads, hidden, &mut rng))
            .collect();
        let bound = (6.0 / (2 * dim) as f32).sqrt();
        let copy_proj = Array2::from_shape_fn((dim, dim), |_| rng.gen_range(-bound..bound));
        Self {
            emb,
            pos,
            enc,
            enc_ln: LayerNorm::new(dim),
            dec,
            dec_ln: LayerNorm::new(dim),
            copy_proj,
            copy_gain: Array2::ones((1, 1)),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            emb: Array2::zeros(self.emb.raw_dim()),
            pos: Array2::zeros(self.pos.raw_dim()),
            enc: self.enc.iter().map(EncoderLayer::zeros_like).collect(),
            enc_ln: self.enc_ln.zeros_like(),
            dec: self.dec.iter().map(DecoderLayer::zeros_like).collect(),
            dec_ln: self.dec_ln.zeros_like(),
            copy_proj: Array2::zeros(self.copy_proj.raw_dim()),
            copy_gain: Array2::zeros(self.copy_gain.raw_dim()),
        }
    }

    pub fn max_seq(&self) -> usize {
        self.pos.nrows()
    }

    fn embed(&self, ids: &[usize]) -> Array2<f32> {
        let dim = self.emb.ncols();
        let mut x = Array2::zeros((ids.len(), dim));
        for (i, &id) in ids.iter().enumerate() {
            let row = &self.emb.row(id) + &self.pos.row(i);
            x.row_mut(i).assign(&row);
        }
        x
    }

    pub fn encode(&self, src_ids: &[usize], drop: &mut DropCtx) -> (Array2<f32>, EncodeCache) {
        let mut x = self.embed(src_ids);
        let embed_mask = drop.mask(x.nrows(), x.ncols());
        apply_mask(&mut x, &embed_mask);
        let mut layers = Vec::with_capacity(self.enc.len());
        for layer in &self.enc {
            let (next, cache) = layer.forward(&x, drop);
            layers.push(cache);
            x = next;
        }
        let (memory, ln) = self.enc_ln.forward(&x);
        (
            memory,
            EncodeCache {
                layers,
                ln,
                embed_mask,
            },
        )
    }

    /// Teacher-forced decoder pass; returns logits over the vocabulary for
    /// every target position. Logits are the tied-embedding projection plus
    /// the copy path: attention over the memory scattered onto the source
    /// tokens' vocabulary slots.
    pub fn decode(
        &self,
        memory: &Array2<f32>,
        src_ids: &[usize],
        tgt_in: &[usize],
        drop: &mut DropCtx,
    ) -> (Array2<f32>, DecodeCache) {
        let mut x = self.embed(tgt_in);
        let embed_mask = drop.mask(x.nrows(), x.ncols());
        apply_mask(&mut x, &embed_mask);
        let mut layers = Vec::with_capacity(self.dec.len());
        for layer in &self.dec {
            let (next, cache) = layer.forward(&x, memory, drop);
            layers.push(cache);
            x = next;
        }
        let (h, ln) = self.dec_ln.forward(&x);
        let mut logits = h.dot(&self.emb.t());

        let copy_q = h.dot(&self.copy_proj);
        let scale = 1.0 / (self.emb.ncols() as f32).sqrt();
        let mut copy_attn = copy_q.dot(&memory.t());
        copy_attn *= scale;
        softmax_rows(&mut copy_attn, false);
        let gain = self.copy_gain[[0, 0]];
        for i in 0..logits.nrows() {
            for (j, &tok) in src_ids.iter().enumerate() {
                logits[[i, tok]] += gain * copy_attn[[i, j]];
            }
        }
        (
            logits,
            DecodeCache {
                layers,
                ln,
                h,
                copy_q,
                copy_attn,
                embed_mask,
            },
        )
    }

    /// Backpropagates `dlogits` through decoder, encoder, and embeddings,
    /// accumulating into `grads`.
    #[allow(clippy::too_many_arguments)]
    pub fn backward(
        &self,
        dlogits: &Array2<f32>,
        src_ids: &[usize],
        tgt_in: &[usize],
        memory: &Array2<f32>,
        enc_cache: &EncodeCache,
        dec_cache: &DecodeCache,
        grads: &mut ToyModel,
    ) {
        // tied output projection
        let mut dh = dlogits.dot(&self.emb);
        grads.emb += &dlogits.t().dot(&dec_cache.h);

        // copy path: logits[i, src_j] += gain * attn[i, j]
        let gain = self.copy_gain[[0, 0]];
        let scale = 1.0 / (self.emb.ncols() as f32).sqrt();
        let mut da = Array2::zeros(dec_cache.copy_attn.raw_dim());
        let mut dgain = 0.0f32;
        for i in 0..dlogits.nrows() {
            for (j, &tok) in src_ids.iter().enumerate() {
                let dl = dlogits[[i, tok]];
                da[[i, j]] = gain * dl;
                dgain += dl * dec_cache.copy_attn[[i, j]];
            }
        }
        grads.copy_gain[[0, 0]] += dgain;
        let mut ds = softmax_backward(&dec_cache.copy_attn, &da);
        ds *= scale;
        let dq = ds.dot(memory);
        let mut dmemory = ds.t().dot(&dec_cache.copy_q);
        grads.copy_proj += &dec_cache.h.t().dot(&dq);
        dh += &dq.dot(&self.copy_proj.t());

        let mut dx = self.dec_ln.backward(&dh, &dec_cache.ln, &mut grads.dec_ln);
        for l in (0..self.dec.len()).rev() {
            let (dxl, dmem_l) =
                self.dec[l].backward(&dx, &dec_cache.layers[l], memory, &mut grads.dec[l]);
            dx = dxl;
            dmemory += &dmem_l;
        }
        let dx = masked_grad(&dx, &dec_cache.embed_mask);
        for (i, &id) in tgt_in.iter().enumerate() {
            let mut erow = grads.emb.row_mut(id);
            erow += &dx.row(i);
            let mut prow = grads.pos.row_mut(i);
            prow += &dx.row(i);
        }

        let mut dxe = self.enc_ln.backward(&dmemory, &enc_cache.ln, &mut grads.enc_ln);
        for l in (0..self.enc.len()).rev() {
            dxe = self.enc[l].backward(&dxe, &enc_cache.layers[l], &mut grads.enc[l]);
        }
        let dxe = masked_grad(&dxe, &enc_cache.embed_mask);
        for (i, &id) in src_ids.iter().enumerate() {
            let mut erow = grads.emb.row_mut(id);
            erow += &dxe.row(i);
            let mut prow = grads.pos.row_mut(i);
            prow += &dxe.row(i);
        }
    }

    /// Visits every parameter tensor in a fixed order.
    pub fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Array2<f32>)) {
        f(&self.emb);
        f(&self.pos);
        for layer in &self.enc {
            f(&layer.ln1.g);
            f(&layer.ln1.b);
            f(&layer.attn.wq.w);
            f(&layer.attn.wq.b);
            f(&layer.attn.wk.w);
            f(&layer.attn.wk.b);
            f(&layer.attn.wv.w);
            f(&layer.attn.wv.b);
            f(&layer.attn.wo.w);
            f(&layer.attn.wo.b);
            f(&layer.ln2.g);
            f(&layer.ln2.b);
            f(&layer.ff.w1.w);
            f(&layer.ff.w1.b);
            f(&layer.ff.w2.w);
            f(&layer.ff.w2.b);
        }
        f(&self.enc_ln.g);
        f(&self.enc_ln.b);
        for layer in &self.dec {
            f(&layer.ln1.g);
            f(&layer.ln1.b);
            f(&layer.self_attn.wq.w);
            f(&layer.self_attn.wq.b);
            f(&layer.self_attn.wk.w);
            f(&layer.self_attn.wk.b);
            f(&layer.self_attn.wv.w);
            f(&layer.self_attn.wv.b);
            f(&layer.self_attn.wo.w);
            f(&layer.self_attn.wo.b);
            f(&layer.ln2.g);
            f(&layer.ln2.b);
            f(&layer.cross_attn.wq.w);
            f(&layer.cross_attn.wq.b);
            f(&layer.cross_attn.wk.w);
            f(&layer.cross_attn.wk.b);
            f(&layer.cross_attn.wv.w);
            f(&layer.cross_attn.wv.b);
            f(&layer.cross_attn.wo.w);
            f(&layer.cross_attn.wo.b);
            f(&layer.ln3.g);
            f(&layer.ln3.b);
            f(&layer.ff.w1.w);
            f(&layer.ff.w1.b);
            f(&layer.ff.w2.w);
            f(&layer.ff.w2.b);
        }
        f(&self.dec_ln.g);
        f(&self.dec_ln.b);
        f(&self.copy_proj);
        f(&self.copy_gain);
    }

    /// Mutable variant of [`ToyModel::visit`], same order.
    pub fn visit_mut<'a>(&'a mut self, f: &mut dyn FnMut(&'a mut Array2<f32>)) {
        f(&mut self.emb);
        f(&mut self.pos);
        for layer in &mut self.enc {
            f(&mut layer.ln1.g);
            f(&mut layer.ln1.b);
            f(&mut layer.attn.wq.w);
            f(&mut layer.attn.wq.b);
            f(&mut layer.attn.wk.w);
            f(&mut layer.attn.wk.b);
            f(&mut layer.attn.wv.w);
            f(&mut layer.attn.wv.b);
            f(&mut layer.attn.wo.w);
            f(&mut layer.attn.wo.b);
            f(&mut layer.ln2.g);
            f(&mut layer.ln2.b);
            f(&mut layer.ff.w1.w);
            f(&mut layer.ff.w1.b);
            f(&mut layer.ff.w2.w);
            f(&mut layer.ff.w2.b);
        }
        f(&mut self.enc_ln.g);
        f(&mut self.enc_ln.b);
        for layer in &mut self.dec {
            f(&mut layer.ln1.g);
            f(&mut layer.ln1.b);
            f(&mut layer.self_attn.wq.w);
            f(&mut layer.self_attn.wq.b);
            f(&mut layer.self_attn.wk.w);
            f(&mut layer.self_attn.wk.b);
            f(&mut layer.self_attn.wv.w);
            f(&mut layer.self_attn.wv.b);
            f(&mut layer.self_attn.wo.w);
            f(&mut layer.self_attn.wo.b);
            f(&mut layer.ln2.g);
            f(&mut layer.ln2.b);
            f(&mut layer.cross_attn.wq.w);
            f(&mut layer.cross_attn.wq.b);
            f(&mut layer.cross_attn.wk.w);
            f(&mut layer.cross_attn.wk.b);
            f(&mut layer.cross_attn.wv.w);
            f(&mut layer.cross_attn.wv.b);
            f(&mut layer.cross_attn.wo.w);
            f(&mut layer.cross_attn.wo.b);
            f(&mut layer.ln3.g);
            f(&mut layer.ln3.b);
            f(&mut layer.ff.w1.w);
            f(&mut layer.ff.w1.b);
            f(&mut layer.ff.w2.w);
            f(&mut layer.ff.w2.b);
        }
        f(&mut self.dec_ln.g);
        f(&mut self.dec_ln.b);
        f(&mut self.copy_proj);
        f(&mut self.copy_gain);
    }

    /// Adds another parameter set (typically per-item gradients) in place.
    pub fn add_assign(&mut self, other: &ToyModel) {
        let mut sources: Vec<&Array2<f32>> = Vec::new();
        other.visit(&mut |a| sources.push(a));
        let mut idx = 0;
        self.visit_mut(&mut |a| {
            *a += sources[idx];
            idx += 1;
        });
    }

    pub fn scale(&mut self, factor: f32) {
        self.visit_mut(&mut |a| *a *= factor);
    }

    pub fn global_norm(&self) -> f32 {
        let mut sq = 0.0f64;
        self.visit(&mut |a| {
            for &v in a.iter() {
                sq += (v as f64) * (v as f64);
            }
        });
        sq.sqrt() as f32
    }
}

/// Adam with bias correction; moments use the same parameter layout as the
/// model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Adam {
    m: ToyModel,
    v: ToyModel,
    t: u64,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Adam {
    pub fn new(model: &ToyModel) -> Self {
        Self {
            m: model.zeros_like(),
            v: model.zeros_like(),
            t: 0,
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-8,
        }
    }

    pub fn step(&mut self, model: &mut ToyModel, grads: &ToyModel, lr: f32) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let mut grad_refs: Vec<&Array2<f32>> = Vec::new();
        grads.visit(&mut |a| grad_refs.push(a));
        let mut m_refs: Vec<&mut Array2<f32>> = Vec::new();
        self.m.visit_mut(&mut |a| m_refs.push(a));
        let mut v_refs: Vec<&mut Array2<f32>> = Vec::new();
        self.v.visit_mut(&mut |a| v_refs.push(a));
        let mut idx = 0;
        model.visit_mut(&mut |p| {
            let g = grad_refs[idx];
            let m = &mut *m_refs[idx];
            let v = &mut *v_refs[idx];
            for ((pv, &gv), (mv, vv)) in p
                .iter_mut()
                .zip(g.iter())
                .zip(m.iter_mut().zip(v.iter_mut()))
            {
                *mv = self.beta1 * *mv + (1.0 - self.beta1) * gv;
                *vv = self.beta2 * *vv + (1.0 - self.beta2) * gv * gv;
                let mhat = *mv / bc1;
                let vhat = *vv / bc2;
                *pv -= lr * mhat / (vhat.sqrt() + self.eps);
            }
            idx += 1;
        });
    }
}
