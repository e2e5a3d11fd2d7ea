//! Shallow hashing head: features -> logits -> probabilities -> codes.
//!
//! The default head is a two-layer perceptron `d -> hidden -> b` with a SiLU
//! nonlinearity. With `hidden == 0` it degenerates to a single affine layer.
//! Parameters live in one flat vector, in checkpoint order:
//! `W1` (row-major, `hidden x d`), `b1`, `W2` (row-major, `b x hidden`), `b2`.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{CodeBatch, EmbeddingSet, LogitBatch, Matrix, ProbBatch};
use crate::error::{Error, Result};
use crate::par;
use crate::storage::{self, ByteReader};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"HCHD";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Rows per forward chunk in [`encode`], bounding hidden-activation memory.
const ENCODE_CHUNK: usize = 4096;

#[derive(Debug, Clone, PartialEq)]
pub struct HashHead {
    dim: usize,
    hidden: usize,
    bits: usize,
    params: Vec<f64>,
}

/// Hidden-layer values kept from the forward pass for backprop.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pre: Matrix,
    act: Matrix,
}

impl HashHead {
    pub fn param_count(dim: usize, hidden: usize, bits: usize) -> usize {
        if hidden == 0 {
            bits * dim + bits
        } else {
            hidden * dim + hidden + bits * hidden + bits
        }
    }

    /// Seeded fan-in uniform init: weights in `±1/sqrt(fan_in)`, zero biases.
    pub fn init(dim: usize, hidden: usize, bits: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(Self::param_count(dim, hidden, bits));
        let mut fill = |params: &mut Vec<f64>, rows: usize, fan_in: usize| {
            let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
            for _ in 0..rows * fan_in {
                params.push(rng.random_range(-bound..bound));
            }
            params.extend(std::iter::repeat_n(0.0, rows));
        };
        if hidden == 0 {
            fill(&mut params, bits, dim);
        } else {
            fill(&mut params, hidden, dim);
            fill(&mut params, bits, hidden);
        }
        Self {
            dim,
            hidden,
            bits,
            params,
        }
    }

    pub fn from_params(dim: usize, hidden: usize, bits: usize, params: Vec<f64>) -> Result<Self> {
        let expected = Self::param_count(dim, hidden, bits);
        if params.len() != expected {
            return Err(Error::LengthMismatch {
                field: "head parameters",
                expected,
                found: params.len(),
            });
        }
        if let Some(i) = params.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFiniteEntry {
                field: "head parameters",
                row: i,
                col: 0,
            });
        }
        if bits == 0 {
            return Err(Error::InvalidConfig(
                "head must have at least one output bit".into(),
            ));
        }
        Ok(Self {
            dim,
            hidden,
            bits,
            params,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn bits(&self) -> usize {
        self.bits
    }

    pub fn is_linear(&self) -> bool {
        self.hidden == 0
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// `(first-layer weights, first-layer bias, output weights, output bias)`.
    /// For a linear head the first two are empty.
    fn layers(&self) -> (&[f64], &[f64], &[f64], &[f64]) {
        let p = &self.params[..];
        if self.hidden == 0 {
            let (w, b) = p.split_at(self.bits * self.dim);
            (&[], &[], w, b)
        } else {
            let (w1, rest) = p.split_at(self.hidden * self.dim);
            let (b1, rest) = rest.split_at(self.hidden);
            let (w2, b2) = rest.split_at(self.bits * self.hidden);
            (w1, b1, w2, b2)
        }
    }

    fn check_input(&self, feats: &Matrix) -> Result<()> {
        if feats.cols() != self.dim {
            return Err(Error::DimensionMismatch {
                field: "feature columns",
                expected: self.dim,
                found: feats.cols(),
            });
        }
        Ok(())
    }

    /// `z = g(h)` for every row of `feats`.
    pub fn forward(&self, feats: &Matrix) -> Result<LogitBatch> {
        self.forward_cached(feats).map(|(z, _)| z)
    }

    pub fn forward_cached(&self, feats: &Matrix) -> Result<(LogitBatch, ForwardCache)> {
        self.check_input(feats)?;
        let (w1, b1, w2, b2) = self.layers();
        let n = feats.rows();
        if self.hidden == 0 {
            let z = affine(feats, w2, b2, self.bits);
            let empty = Matrix::zeros(n, 0);
            return Ok((
                LogitBatch(z),
                ForwardCache {
                    pre: empty.clone(),
                    act: empty,
                },
            ));
        }
        let pre = affine(feats, w1, b1, self.hidden);
        let act = pre.map(silu);
        let z = affine(&act, w2, b2, self.bits);
        Ok((LogitBatch(z), ForwardCache { pre, act }))
    }

    /// Backpropagates `dL/dz` to a flat gradient in parameter order.
    pub fn backward(&self, feats: &Matrix, cache: &ForwardCache, grad_z: &Matrix) -> Vec<f64> {
        let (_, _, w2, _) = self.layers();
        if self.hidden == 0 {
            let (gw, gb) = outer_sums(grad_z, feats);
            let mut g = gw;
            g.extend(gb);
            return g;
        }
        let (gw2, gb2) = outer_sums(grad_z, &cache.act);

        // dL/du = (dL/dz W2) * silu'(u)
        let hidden = self.hidden;
        let bits = self.bits;
        let mut grad_pre = Matrix::zeros(grad_z.rows(), hidden);
        par::for_each_chunk_mut(grad_pre.as_mut_slice(), hidden, |i, out| {
            let gz = grad_z.row(i);
            let u = cache.pre.row(i);
            for (j, &g) in gz.iter().enumerate().take(bits) {
                if g == 0.0 {
                    continue;
                }
                for (o, &w) in out.iter_mut().zip(&w2[j * hidden..(j + 1) * hidden]) {
                    *o += g * w;
                }
            }
            for (o, &uk) in out.iter_mut().zip(u) {
                *o *= silu_grad(uk);
            }
        });
        let (gw1, gb1) = outer_sums(&grad_pre, feats);

        let mut g = Vec::with_capacity(self.params.len());
        g.extend(gw1);
        g.extend(gb1);
        g.extend(gw2);
        g.extend(gb2);
        g
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(20 + 4 * self.params.len());
        out.extend_from_slice(&CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        for v in [self.dim, self.hidden, self.bits] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        for &p in &self.params {
            out.extend_from_slice(&(p as f32).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        r.magic(CHECKPOINT_MAGIC)?;
        r.version(CHECKPOINT_VERSION)?;
        let dim = r.u32()? as usize;
        let hidden = r.u32()? as usize;
        let bits = r.u32()? as usize;
        let n = Self::param_count(dim, hidden, bits);
        let params = r.f32_vec(n)?.into_iter().map(f64::from).collect();
        r.finish()?;
        Self::from_params(dim, hidden, bits, params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        storage::write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Copy with every parameter rounded to 32-bit precision, i.e. what a
    /// checkpoint round-trip yields.
    pub fn rounded_to_f32(&self) -> Self {
        Self {
            params: self.params.iter().map(|&p| f64::from(p as f32)).collect(),
            ..self.clone()
        }
    }
}

/// `out[i] = W x_i + b` with `W` row-major `out_dim x in_dim`.
fn affine(x: &Matrix, w: &[f64], b: &[f64], out_dim: usize) -> Matrix {
    let in_dim = x.cols();
    let mut out = Matrix::zeros(x.rows(), out_dim);
    par::for_each_chunk_mut(out.as_mut_slice(), out_dim, |i, row| {
        let xi = x.row(i);
        for (j, o) in row.iter_mut().enumerate() {
            let wj = &w[j * in_dim..(j + 1) * in_dim];
            *o = b[j] + dot(wj, xi);
        }
    });
    out
}

/// `(sum_i g_i x_i^T, sum_i g_i)`, flattened row-major. Each entry is
/// accumulated over `i` in order, so the result does not depend on threads.
fn outer_sums(g: &Matrix, x: &Matrix) -> (Vec<f64>, Vec<f64>) {
    let out_dim = g.cols();
    let in_dim = x.cols();
    let n = g.rows();
    let mut gw = vec![0.0; out_dim * in_dim];
    par::for_each_chunk_mut(&mut gw, in_dim.max(1), |j, row| {
        for i in 0..n {
            let gij = g.get(i, j);
            if gij == 0.0 {
                continue;
            }
            for (o, &xv) in row.iter_mut().zip(x.row(i)) {
                *o += gij * xv;
            }
        }
    });
    if in_dim == 0 {
        gw.clear();
    }
    let gb = (0..out_dim)
        .map(|j| (0..n).map(|i| g.get(i, j)).sum())
        .collect();
    (gw, gb)
}

/// Dot product with four independent accumulators, combined in a fixed order.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let tail: f64 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(x, y)| x * y)
        .sum();
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Logistic sigmoid, branch-stable for large `|z|`.
#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn silu(u: f64) -> f64 {
    u * sigmoid(u)
}

#[inline]
fn silu_grad(u: f64) -> f64 {
    let s = sigmoid(u);
    s * (1.0 + u * (1.0 - s))
}

/// Elementwise sigmoid `p = σ(z)`.
pub fn squash(z: &LogitBatch) -> ProbBatch {
    ProbBatch(z.0.map(sigmoid))
}

/// `y = 1[p >= 0.5]`, inclusive at one half.
pub fn binarize(p: &ProbBatch) -> CodeBatch {
    let values = p.0.as_slice().iter().map(|&x| u8::from(x >= 0.5)).collect();
    CodeBatch::new(p.0.cols().max(1), values).expect("0/1 values with matching width")
}

/// Binary codes for every row of `set`.
pub fn encode(head: &HashHead, set: &EmbeddingSet) -> Result<CodeBatch> {
    if set.dim() != head.dim() {
        return Err(Error::DimensionMismatch {
            field: "embedding dim",
            expected: head.dim(),
            found: set.dim(),
        });
    }
    let mut values = Vec::with_capacity(set.count() * head.bits());
    let indices: Vec<usize> = (0..set.count()).collect();
    for chunk in indices.chunks(ENCODE_CHUNK) {
        let feats = set.gather(chunk);
        let codes = binarize(&squash(&head.forward(&feats)?));
        values.extend_from_slice(codes.values());
    }
    CodeBatch::new(head.bits(), values)
}
