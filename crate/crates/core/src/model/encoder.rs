use super::act::gelu;
use super::tensor::{fill_trunc_normal, Tensor};
use super::ModelError;
use crate::data::{BackboneScale, Image};
use crate::float::{derive_seed, Float};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

const INIT_STD: f64 = 0.02;
const LN_EPS: f64 = 1e-6;

/// Architecture of the frozen patch-transformer backbone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub scale: BackboneScale,
    pub embed_dim: usize,
    pub depth: usize,
    pub patch_size: usize,
    pub heads: usize,
    pub register_tokens: usize,
    /// 1-based layers whose outputs feed the decoder, ascending.
    pub layer_picks: [usize; 4],
}

impl BackboneConfig {
    pub fn for_scale(scale: BackboneScale) -> Self {
        Self {
            scale,
            embed_dim: scale.embed_dim(),
            depth: scale.depth(),
            patch_size: scale.patch_size(),
            heads: scale.heads(),
            register_tokens: scale.register_tokens(),
            layer_picks: scale.pick_layers(),
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.embed_dim == 0 || self.depth == 0 || self.patch_size == 0 || self.heads == 0 {
            return Err(ModelError::Shape("backbone dimensions must be positive".into()));
        }
        if !self.embed_dim.is_multiple_of(self.heads) {
            return Err(ModelError::Shape(format!(
                "embed dim {} not divisible by {} heads",
                self.embed_dim, self.heads
            )));
        }
        let picks = &self.layer_picks;
        if picks.windows(2).any(|w| w[0] >= w[1]) || picks[0] < 1 || picks[3] > self.depth {
            return Err(ModelError::Shape(format!(
                "layer picks {picks:?} must be ascending within 1..={}",
                self.depth
            )));
        }
        Ok(())
    }

    /// Patch-grid dimensions for an input, or the divisibility error.
    pub fn token_grid(&self, height: usize, width: usize) -> Result<(usize, usize), ModelError> {
        if height == 0
            || width == 0
            || !height.is_multiple_of(self.patch_size)
            || !width.is_multiple_of(self.patch_size)
        {
            return Err(ModelError::Divisibility { height, width, patch: self.patch_size });
        }
        Ok((height / self.patch_size, width / self.patch_size))
    }
}

struct Block<T> {
    ln1_scale: Vec<T>,
    ln1_shift: Vec<T>,
    wq: Vec<T>,
    bq: Vec<T>,
    wk: Vec<T>,
    bk: Vec<T>,
    wv: Vec<T>,
    bv: Vec<T>,
    wo: Vec<T>,
    bo: Vec<T>,
    ln2_scale: Vec<T>,
    ln2_shift: Vec<T>,
    w1: Vec<T>,
    b1: Vec<T>,
    w2: Vec<T>,
    b2: Vec<T>,
}

struct EncoderParams<T> {
    patch_w: Vec<T>,
    patch_b: Vec<T>,
    cls: Vec<T>,
    reg: Vec<T>,
    pos: Vec<T>,
    blocks: Vec<Block<T>>,
}

/// Frozen feature extractor: seeded weights stand in for a pretrained
/// backbone. Runs outside the autodiff tape; its parameters never change
/// after construction.
pub struct Encoder<T: Float> {
    cfg: BackboneConfig,
    seed: u64,
    grid: (usize, usize),
    params: EncoderParams<T>,
}

impl<T: Float> Encoder<T> {
    /// Build for a fixed input resolution (position embeddings are sized to
    /// its token count).
    pub fn new(
        cfg: BackboneConfig,
        height: usize,
        width: usize,
        seed: u64,
    ) -> Result<Self, ModelError> {
        cfg.validate()?;
        let grid = cfg.token_grid(height, width)?;
        let e = cfg.embed_dim;
        let tokens = 1 + cfg.register_tokens + grid.0 * grid.1;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "backbone"));
        let mut normal = |n: usize| -> Vec<T> {
            let mut v = vec![T::zero(); n];
            fill_trunc_normal(&mut rng, INIT_STD, &mut v);
            v
        };
        let patch_dim = 3 * cfg.patch_size * cfg.patch_size;
        let patch_w = normal(e * patch_dim);
        let cls = normal(e);
        let reg = normal(cfg.register_tokens * e);
        let pos = normal(tokens * e);
        let blocks = (0..cfg.depth)
            .map(|_| Block {
                ln1_scale: vec![T::one(); e],
                ln1_shift: vec![T::zero(); e],
                wq: normal(e * e),
                bq: vec![T::zero(); e],
                wk: normal(e * e),
                bk: vec![T::zero(); e],
                wv: normal(e * e),
                bv: vec![T::zero(); e],
                wo: normal(e * e),
                bo: vec![T::zero(); e],
                ln2_scale: vec![T::one(); e],
                ln2_shift: vec![T::zero(); e],
                w1: normal(4 * e * e),
                b1: vec![T::zero(); 4 * e],
                w2: normal(e * 4 * e),
                b2: vec![T::zero(); e],
            })
            .collect();
        let params = EncoderParams { patch_w, patch_b: vec![T::zero(); e], cls, reg, pos, blocks };
        Ok(Self { cfg, seed, grid, params })
    }

    pub fn config(&self) -> &BackboneConfig {
        &self.cfg
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn grid(&self) -> (usize, usize) {
        self.grid
    }

    pub fn param_count(&self) -> u64 {
        let p = &self.params;
        let per_block = |b: &Block<T>| -> u64 {
            [
                b.ln1_scale.len(),
                b.ln1_shift.len(),
                b.wq.len(),
                b.bq.len(),
                b.wk.len(),
                b.bk.len(),
                b.wv.len(),
                b.bv.len(),
                b.wo.len(),
                b.bo.len(),
                b.ln2_scale.len(),
                b.ln2_shift.len(),
                b.w1.len(),
                b.b1.len(),
                b.w2.len(),
                b.b2.len(),
            ]
            .iter()
            .map(|&n| n as u64)
            .sum()
        };
        [p.patch_w.len(), p.patch_b.len(), p.cls.len(), p.reg.len(), p.pos.len()]
            .iter()
            .map(|&n| n as u64)
            .sum::<u64>()
            + p.blocks.iter().map(per_block).sum::<u64>()
    }

    /// Order-insensitive digest of every parameter's bit pattern, for
    /// frozen-state assertions.
    pub fn params_checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |vs: &[T]| {
            for v in vs {
                let bits = v.to_f64_lossy().to_bits();
                h ^= bits;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        let p = &self.params;
        eat(&p.patch_w);
        eat(&p.patch_b);
        eat(&p.cls);
        eat(&p.reg);
        eat(&p.pos);
        for b in &p.blocks {
            for vs in [
                &b.ln1_scale,
                &b.ln1_shift,
                &b.wq,
                &b.bq,
                &b.wk,
                &b.bk,
                &b.wv,
                &b.bv,
                &b.wo,
                &b.bo,
                &b.ln2_scale,
                &b.ln2_shift,
                &b.w1,
                &b.b1,
                &b.w2,
                &b.b2,
            ] {
                eat(vs);
            }
        }
        h
    }

    fn check_input(&self, image: &Image<T>) -> Result<(), ModelError> {
        if image.channels() != 3 {
            return Err(ModelError::Shape(format!(
                "encoder expects 3 channels, got {}",
                image.channels()
            )));
        }
        let grid = self.cfg.token_grid(image.height(), image.width())?;
        if grid != self.grid {
            return Err(ModelError::Shape(format!(
                "input grid {grid:?} does not match the {:?} this encoder was built for",
                self.grid
            )));
        }
        Ok(())
    }

    /// Patch tokens: row-major (N, E) linear embedding of P×P×3 patches.
    fn embed_patches(&self, image: &Image<T>) -> Vec<T> {
        let (gh, gw) = self.grid;
        let p = self.cfg.patch_size;
        let e = self.cfg.embed_dim;
        let patch_dim = 3 * p * p;
        let mut tokens = vec![T::zero(); gh * gw * e];
        let mut patch = vec![T::zero(); patch_dim];
        for py in 0..gh {
            for px in 0..gw {
                let mut i = 0;
                for c in 0..3 {
                    for dy in 0..p {
                        for dx in 0..p {
                            patch[i] = image.get(c, py * p + dy, px * p + dx);
                            i += 1;
                        }
                    }
                }
                let out = &mut tokens[(py * gw + px) * e..(py * gw + px + 1) * e];
                for (o, (wrow, &b)) in out
                    .iter_mut()
                    .zip(self.params.patch_w.chunks_exact(patch_dim).zip(&self.params.patch_b))
                {
                    let mut acc = b;
                    for (&wv, &xv) in wrow.iter().zip(&patch) {
                        acc += wv * xv;
                    }
                    *o = acc;
                }
            }
        }
        tokens
    }

    /// Per-layer feature maps (E, gh, gw): the spatial tokens after each of
    /// the L blocks, with classification and register tokens dropped.
    pub fn forward(&self, image: &Image<T>) -> Result<Vec<Tensor<T>>, ModelError> {
        self.check_input(image)?;
        let (gh, gw) = self.grid;
        let e = self.cfg.embed_dim;
        let specials = 1 + self.cfg.register_tokens;
        let m = specials + gh * gw;

        let mut x = vec![T::zero(); m * e];
        x[..e].copy_from_slice(&self.params.cls);
        x[e..specials * e].copy_from_slice(&self.params.reg);
        x[specials * e..].copy_from_slice(&self.embed_patches(image));
        for (xv, pv) in x.iter_mut().zip(&self.params.pos) {
            *xv += *pv;
        }

        let mut maps = Vec::with_capacity(self.cfg.depth);
        for block in &self.params.blocks {
            self.block_forward(block, &mut x, m);
            maps.push(tokens_to_map(&x[specials * e..], e, gh, gw));
        }
        Ok(maps)
    }

    /// The four tap-layer maps, ordered shallow to deep.
    pub fn picked(&self, image: &Image<T>) -> Result<[Tensor<T>; 4], ModelError> {
        let maps = self.forward(image)?;
        let pick = |i: usize| maps[self.cfg.layer_picks[i] - 1].clone();
        Ok([pick(0), pick(1), pick(2), pick(3)])
    }

    /// Depth-0 variant: just the patch embedding as a feature map, no
    /// attention blocks, no special tokens. Used by reduced-configuration
    /// equivariance tests where the full backbone would break spatial
    /// symmetry (position embeddings are not symmetric).
    pub fn embed_only(&self, image: &Image<T>) -> Result<Tensor<T>, ModelError> {
        self.check_input(image)?;
        let (gh, gw) = self.grid;
        let tokens = self.embed_patches(image);
        Ok(tokens_to_map(&tokens, self.cfg.embed_dim, gh, gw))
    }

    fn block_forward(&self, b: &Block<T>, x: &mut [T], m: usize) {
        let e = self.cfg.embed_dim;
        let heads = self.cfg.heads;
        let dh = e / heads;
        let scale = T::one() / T::from_usize_exactish(dh).sqrt();

        // Attention sublayer on the pre-normed stream.
        let xn = layer_norm(x, m, e, &b.ln1_scale, &b.ln1_shift);
        let q = linear(&xn, m, e, &b.wq, e, &b.bq);
        let k = linear(&xn, m, e, &b.wk, e, &b.bk);
        let v = linear(&xn, m, e, &b.wv, e, &b.bv);
        let mut ctx = vec![T::zero(); m * e];
        let mut scores = vec![T::zero(); m];
        for h in 0..heads {
            let off = h * dh;
            for i in 0..m {
                let qi = &q[i * e + off..i * e + off + dh];
                for (j, s) in scores.iter_mut().enumerate() {
                    let kj = &k[j * e + off..j * e + off + dh];
                    let mut acc = T::zero();
                    for (&a, &bv_) in qi.iter().zip(kj) {
                        acc += a * bv_;
                    }
                    *s = acc * scale;
                }
                softmax_in_place(&mut scores);
                let out = &mut ctx[i * e + off..i * e + off + dh];
                for (j, &s) in scores.iter().enumerate() {
                    let vj = &v[j * e + off..j * e + off + dh];
                    for (o, &vv) in out.iter_mut().zip(vj) {
                        *o += s * vv;
                    }
                }
            }
        }
        let attn = linear(&ctx, m, e, &b.wo, e, &b.bo);
        for (xv, av) in x.iter_mut().zip(&attn) {
            *xv += *av;
        }

        // MLP sublayer.
        let xn = layer_norm(x, m, e, &b.ln2_scale, &b.ln2_shift);
        let mut hidden = linear(&xn, m, e, &b.w1, 4 * e, &b.b1);
        for v in &mut hidden {
            *v = gelu(*v);
        }
        let mlp = linear(&hidden, m, 4 * e, &b.w2, e, &b.b2);
        for (xv, mv) in x.iter_mut().zip(&mlp) {
            *xv += *mv;
        }
    }
}

/// (N,E) row-major tokens -> (E, gh, gw) feature map.
fn tokens_to_map<T: Float>(tokens: &[T], e: usize, gh: usize, gw: usize) -> Tensor<T> {
    let mut map = Tensor::zeros(&[e, gh, gw]);
    let data = map.data_mut();
    for n in 0..gh * gw {
        for c in 0..e {
            data[c * gh * gw + n] = tokens[n * e + c];
        }
    }
    map
}

/// Row-wise layer norm with learned scale/shift.
fn layer_norm<T: Float>(x: &[T], rows: usize, dim: usize, scale: &[T], shift: &[T]) -> Vec<T> {
    let eps = T::from_f64_exactish(LN_EPS);
    let inv_n = T::one() / T::from_usize_exactish(dim);
    let mut out = vec![T::zero(); rows * dim];
    for r in 0..rows {
        let row = &x[r * dim..(r + 1) * dim];
        let mut mean = T::zero();
        for &v in row {
            mean += v;
        }
        mean *= inv_n;
        let mut var = T::zero();
        for &v in row {
            let d = v - mean;
            var += d * d;
        }
        var *= inv_n;
        let inv_std = T::one() / (var + eps).sqrt();
        let orow = &mut out[r * dim..(r + 1) * dim];
        for ((o, &v), (&s, &sh)) in orow.iter_mut().zip(row).zip(scale.iter().zip(shift)) {
            *o = (v - mean) * inv_std * s + sh;
        }
    }
    out
}

/// y[r,o] = Σ_k x[r,k]·w[o,k] + b[o], weights stored (out_dim, in_dim).
fn linear<T: Float>(
    x: &[T],
    rows: usize,
    in_dim: usize,
    w: &[T],
    out_dim: usize,
    b: &[T],
) -> Vec<T> {
    let mut out = vec![T::zero(); rows * out_dim];
    for r in 0..rows {
        let xr = &x[r * in_dim..(r + 1) * in_dim];
        let orow = &mut out[r * out_dim..(r + 1) * out_dim];
        for (o, (wrow, &bias)) in orow.iter_mut().zip(w.chunks_exact(in_dim).zip(b)) {
            let mut acc = bias;
            for (&wv, &xv) in wrow.iter().zip(xr) {
                acc += wv * xv;
            }
            *o = acc;
        }
    }
    out
}

fn softmax_in_place<T: Float>(row: &mut [T]) {
    let mut max = row[0];
    for &v in row.iter() {
        if v > max {
            max = v;
        }
    }
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    let inv = T::one() / sum;
    for v in row.iter_mut() {
        *v *= inv;
    }
}
