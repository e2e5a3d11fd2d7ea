//! Independent reference implementations used as test oracles. Nothing here
//! calls into the library's numeric paths.

#![allow(dead_code)]

use nalgebra::{DMatrix, SymmetricEigen};

pub const PROB_EPS: f64 = 1e-7;

/// Plain-loop forward pass of a flat-parameter head.
pub fn naive_forward(
    params: &[f64],
    dim: usize,
    hidden: usize,
    bits: usize,
    x: &[Vec<f64>],
) -> Vec<Vec<f64>> {
    x.iter()
        .map(|row| {
            let (src, width, off) = if hidden == 0 {
                (row.clone(), dim, 0)
            } else {
                let mut a = vec![0.0; hidden];
                for k in 0..hidden {
                    let mut s = params[hidden * dim + k];
                    for l in 0..dim {
                        s += params[k * dim + l] * row[l];
                    }
                    a[k] = s / (1.0 + (-s).exp());
                }
                (a, hidden, hidden * dim + hidden)
            };
            (0..bits)
                .map(|j| {
                    let mut s = params[off + bits * width + j];
                    for k in 0..width {
                        s += params[off + j * width + k] * src[k];
                    }
                    s
                })
                .collect()
        })
        .collect()
}

pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Mean BCE of fixed 0/1 targets against sigmoid(z).
pub fn bce_fixed(targets: &[Vec<u8>], z: &[Vec<f64>]) -> f64 {
    let mut s = 0.0;
    let mut n = 0.0;
    for (t, zr) in targets.iter().zip(z) {
        for (&y, &v) in t.iter().zip(zr) {
            let p = sigmoid(v).clamp(PROB_EPS, 1.0 - PROB_EPS);
            s -= if y == 1 { p.ln() } else { (1.0 - p).ln() };
            n += 1.0;
        }
    }
    s / n
}

/// `-½ Σ ln(1 + (b/B) μ_k)` over eigenvalues of `C = (1/B) Σ v vᵀ`.
pub fn coding_rate_eigen(z: &[Vec<f64>]) -> f64 {
    let rows = z.len();
    let bits = z[0].len();
    let mut c = DMatrix::<f64>::zeros(bits, bits);
    for r in z {
        let n2: f64 = r.iter().map(|x| x * x).sum();
        for a in 0..bits {
            for b in 0..bits {
                c[(a, b)] += r[a] * r[b] / n2 / rows as f64;
            }
        }
    }
    let eig = SymmetricEigen::new(c);
    -0.5 * eig
        .eigenvalues
        .iter()
        .map(|&mu| (1.0 + bits as f64 / rows as f64 * mu.max(0.0)).ln())
        .sum::<f64>()
}

pub fn sign_codes(z: &[Vec<f64>]) -> Vec<Vec<u8>> {
    z.iter()
        .map(|r| r.iter().map(|&v| u8::from(sigmoid(v) >= 0.5)).collect())
        .collect()
}

/// Total objective with the codes frozen to `codes_text` / `codes_obs`,
/// which is exactly the function whose gradient the stop-gradient defines.
pub struct FrozenObjective<'a> {
    pub dims: (usize, usize, usize, usize), // (d_text, d_obs, hidden, bits)
    pub text_x: &'a [Vec<f64>],
    pub obs_x: &'a [Vec<f64>],
    pub codes_text: Vec<Vec<u8>>,
    pub codes_obs: Vec<Vec<u8>>,
    pub lambda: f64,
}

impl FrozenObjective<'_> {
    pub fn eval(&self, text_p: &[f64], obs_p: &[f64]) -> f64 {
        let (dt, dob, h, b) = self.dims;
        let zt = naive_forward(text_p, dt, h, b, self.text_x);
        let zo = naive_forward(obs_p, dob, h, b, self.obs_x);
        let align = 0.5 * (bce_fixed(&self.codes_text, &zo) + bce_fixed(&self.codes_obs, &zt));
        let div = 0.5 * (coding_rate_eigen(&zt) + coding_rate_eigen(&zo));
        align + self.lambda * div
    }
}

pub fn naive_hamming(a: &[u8], b: &[u8]) -> u32 {
    a.iter().zip(b).filter(|(x, y)| x != y).count() as u32
}

/// Reference AP@k: rank all items by (distance, index), take top k.
pub fn reference_ap(distances: &[f64], relevant: &[bool], k: usize) -> Option<f64> {
    let n_rel = relevant.iter().filter(|&&r| r).count();
    if n_rel == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..distances.len()).collect();
    order.sort_by(|&a, &b| {
        distances[a]
            .partial_cmp(&distances[b])
            .unwrap()
            .then(a.cmp(&b))
    });
    let mut found = 0.0;
    let mut total = 0.0;
    for (rank, &i) in order.iter().take(k).enumerate() {
        if relevant[i] {
            found += 1.0;
            total += found / (rank as f64 + 1.0);
        }
    }
    Some(total / n_rel.min(k) as f64)
}
