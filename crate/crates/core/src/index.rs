//! Packed binary code database with exhaustive Hamming top-k search, and a
//! cosine-similarity baseline over continuous embeddings.
//!
//! Bit `j` of a code lives in word `j / 64` at position `j % 64`
//! (least-significant bit first).

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{CodeBatch, EmbeddingSet};
use crate::error::{Error, Result};
use crate::par;
use crate::storage::{self, ByteReader};

pub const INDEX_MAGIC: [u8; 4] = *b"HCBC";
pub const INDEX_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedCodeIndex {
    bits: usize,
    words_per_code: usize,
    words: Vec<u64>,
    item_ids: Vec<u64>,
    labels: Vec<u32>,
    categories: Vec<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    /// Position in the database (insertion order).
    pub index: usize,
    pub item_id: u64,
    /// Hamming distance, or negated cosine similarity.
    pub distance: f64,
}

/// Ranked hits, ascending distance, ties in insertion order.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SearchResult {
    pub hits: Vec<Hit>,
}

impl SearchResult {
    pub fn len(&self) -> usize {
        self.hits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hits.is_empty()
    }

    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.hits.iter().map(|h| h.index)
    }
}

/// Packs one unpacked 0/1 code into little-endian-bit-order words.
pub fn pack_code(code: &[u8]) -> Vec<u64> {
    let mut words = vec![0u64; code.len().div_ceil(64)];
    for (j, &b) in code.iter().enumerate() {
        if b != 0 {
            words[j / 64] |= 1u64 << (j % 64);
        }
    }
    words
}

fn check_aligned(bits: usize) -> Result<()> {
    if bits == 0 || !bits.is_multiple_of(64) {
        return Err(Error::BitsNotWordAligned(bits));
    }
    Ok(())
}

impl PackedCodeIndex {
    /// Packs `codes`; ids, labels and categories must match the code count.
    pub fn pack(
        codes: &CodeBatch,
        item_ids: Vec<u64>,
        labels: Vec<u32>,
        categories: Vec<u32>,
    ) -> Result<Self> {
        check_aligned(codes.bits())?;
        let n = codes.len();
        for (field, len) in [
            ("item_ids", item_ids.len()),
            ("labels", labels.len()),
            ("categories", categories.len()),
        ] {
            if len != n {
                return Err(Error::LengthMismatch {
                    field,
                    expected: n,
                    found: len,
                });
            }
        }
        let words_per_code = codes.bits() / 64;
        let mut words = Vec::with_capacity(n * words_per_code);
        for i in 0..n {
            words.extend(pack_code(codes.code(i)));
        }
        Ok(Self {
            bits: codes.bits(),
            words_per_code,
            words,
            item_ids,
            labels,
            categories,
        })
    }

    /// Packs codes with sequential ids and the labels/categories of `set`.
    pub fn from_codes_of(codes: &CodeBatch, set: &EmbeddingSet) -> Result<Self> {
        Self::pack(
            codes,
            (0..codes.len() as u64).collect(),
            set.labels().to_vec(),
            set.categories().to_vec(),
        )
    }

    /// Builds an index directly from packed words.
    pub fn from_words(
        bits: usize,
        words: Vec<u64>,
        item_ids: Vec<u64>,
        labels: Vec<u32>,
        categories: Vec<u32>,
    ) -> Result<Self> {
        check_aligned(bits)?;
        let wpc = bits / 64;
        if !words.len().is_multiple_of(wpc) {
            return Err(Error::DimensionMismatch {
                field: "packed words",
                expected: wpc,
                found: words.len() % wpc,
            });
        }
        let n = words.len() / wpc;
        for (field, len) in [
            ("item_ids", item_ids.len()),
            ("labels", labels.len()),
            ("categories", categories.len()),
        ] {
            if len != n {
                return Err(Error::LengthMismatch {
                    field,
                    expected: n,
                    found: len,
                });
            }
        }
        Ok(Self {
            bits,
            words_per_code: wpc,
            words,
            item_ids,
            labels,
            categories,
        })
    }

    pub fn unpack(&self) -> CodeBatch {
        let mut values = Vec::with_capacity(self.len() * self.bits);
        for i in 0..self.len() {
            let w = self.code(i);
            values.extend((0..self.bits).map(|j| ((w[j / 64] >> (j % 64)) & 1) as u8));
        }
        CodeBatch::new(self.bits, values).expect("unpacked codes are 0/1")
    }

    pub fn bits(&self) -> usize {
        self.bits
    }

    pub fn words_per_code(&self) -> usize {
        self.words_per_code
    }

    pub fn len(&self) -> usize {
        self.item_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.item_ids.is_empty()
    }

    pub fn code(&self, i: usize) -> &[u64] {
        &self.words[i * self.words_per_code..(i + 1) * self.words_per_code]
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn item_ids(&self) -> &[u64] {
        &self.item_ids
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn categories(&self) -> &[u32] {
        &self.categories
    }

    /// Size of the code payload alone: `count * bits / 8`.
    pub fn payload_bytes(&self) -> usize {
        self.words.len() * 8
    }

    pub fn bytes_per_item(&self) -> usize {
        self.bits / 8
    }

    /// Storage ratio of a `dim`-dimensional `f32` embedding to one code.
    pub fn compression_vs_f32(&self, dim: usize) -> f64 {
        (dim * 4) as f64 / self.bytes_per_item() as f64
    }

    /// Sub-index over the given rows, keeping ids, labels and order.
    pub fn select(&self, rows: &[usize]) -> Self {
        let mut words = Vec::with_capacity(rows.len() * self.words_per_code);
        for &r in rows {
            words.extend_from_slice(self.code(r));
        }
        Self {
            bits: self.bits,
            words_per_code: self.words_per_code,
            words,
            item_ids: rows.iter().map(|&r| self.item_ids[r]).collect(),
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
            categories: rows.iter().map(|&r| self.categories[r]).collect(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let n = self.len();
        let mut out = Vec::with_capacity(20 + self.words.len() * 8 + n * 16);
        out.extend_from_slice(&INDEX_MAGIC);
        out.extend_from_slice(&INDEX_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.bits as u32).to_le_bytes());
        out.extend_from_slice(&(n as u64).to_le_bytes());
        for w in &self.words {
            out.extend_from_slice(&w.to_le_bytes());
        }
        for id in &self.item_ids {
            out.extend_from_slice(&id.to_le_bytes());
        }
        for l in &self.labels {
            out.extend_from_slice(&l.to_le_bytes());
        }
        for c in &self.categories {
            out.extend_from_slice(&c.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        r.magic(INDEX_MAGIC)?;
        r.version(INDEX_VERSION)?;
        let bits = r.u32()? as usize;
        if bits == 0 || !bits.is_multiple_of(64) {
            return Err(Error::Malformed {
                offset: 8,
                reason: format!("bit width {bits} is not a positive multiple of 64"),
            });
        }
        let count = r.u64()?;
        let n_words = count
            .checked_mul((bits / 64) as u64)
            .ok_or_else(|| Error::Malformed {
                offset: 12,
                reason: "count overflows".into(),
            })?;
        let words = r.u64_vec(n_words)?;
        let item_ids = r.u64_vec(count)?;
        let labels = r.u32_vec(count)?;
        let categories = r.u32_vec(count)?;
        r.finish()?;
        Self::from_words(bits, words, item_ids, labels, categories)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        storage::write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// Population count of `a XOR b`.
#[inline]
pub fn hamming(a: &[u64], b: &[u64]) -> u32 {
    a.iter().zip(b).map(|(x, y)| (x ^ y).count_ones()).sum()
}

/// Max-heap entry ordered by `(distance, index)`.
struct Entry<D>(D, usize);

impl<D: PartialOrd> PartialEq for Entry<D> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl<D: PartialOrd> Eq for Entry<D> {}
impl<D: PartialOrd> PartialOrd for Entry<D> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<D: PartialOrd> Ord for Entry<D> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0
            .partial_cmp(&other.0)
            .unwrap_or(Ordering::Equal)
            .then(self.1.cmp(&other.1))
    }
}

/// Keeps the `k` smallest `(distance, index)` pairs seen so far. Items must
/// be offered in increasing index order for ties to resolve stably.
struct TopK<D> {
    k: usize,
    heap: BinaryHeap<Entry<D>>,
}

impl<D: PartialOrd + Copy> TopK<D> {
    fn new(k: usize) -> Self {
        Self {
            k,
            heap: BinaryHeap::with_capacity(k + 1),
        }
    }

    #[inline]
    fn offer(&mut self, d: D, idx: usize) {
        if self.heap.len() < self.k {
            self.heap.push(Entry(d, idx));
        } else if let Some(top) = self.heap.peek() {
            // Later indices lose ties, so only a strictly smaller distance enters.
            if d < top.0 {
                self.heap.pop();
                self.heap.push(Entry(d, idx));
            }
        }
    }

    fn into_sorted(self) -> Vec<(D, usize)> {
        self.heap
            .into_sorted_vec()
            .into_iter()
            .map(|Entry(d, i)| (d, i))
            .collect()
    }
}

fn scan_portable(words: &[u64], wpc: usize, query: &[u64], k: usize) -> Vec<(u32, usize)> {
    let mut top = TopK::new(k);
    for (i, code) in words.chunks_exact(wpc).enumerate() {
        top.offer(hamming(code, query), i);
    }
    top.into_sorted()
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "popcnt")]
unsafe fn scan_popcnt(words: &[u64], wpc: usize, query: &[u64], k: usize) -> Vec<(u32, usize)> {
    scan_portable(words, wpc, query, k)
}

/// Exhaustive scan; uses the hardware popcount instruction when available.
fn scan(words: &[u64], wpc: usize, query: &[u64], k: usize) -> Vec<(u32, usize)> {
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("popcnt") {
            // SAFETY: the CPU supports popcnt, checked just above.
            return unsafe { scan_popcnt(words, wpc, query, k) };
        }
    }
    scan_portable(words, wpc, query, k)
}

/// Exact top-`k` by Hamming distance.
pub fn search(index: &PackedCodeIndex, query: &[u64], k: usize) -> Result<SearchResult> {
    if query.len() != index.words_per_code {
        return Err(Error::BitsMismatch {
            index: index.bits,
            query: query.len() * 64,
        });
    }
    if k == 0 {
        return Err(Error::InvalidConfig("k must be >= 1".into()));
    }
    let hits = scan(&index.words, index.words_per_code, query, k)
        .into_iter()
        .map(|(d, i)| Hit {
            index: i,
            item_id: index.item_ids[i],
            distance: f64::from(d),
        })
        .collect();
    Ok(SearchResult { hits })
}

fn check_queries(index: &PackedCodeIndex, queries: &PackedCodeIndex, k: usize) -> Result<()> {
    if queries.bits != index.bits {
        return Err(Error::BitsMismatch {
            index: index.bits,
            query: queries.bits,
        });
    }
    if k == 0 {
        return Err(Error::InvalidConfig("k must be >= 1".into()));
    }
    Ok(())
}

/// [`search`] for every code in `queries`, parallel over queries.
pub fn batch_search(
    index: &PackedCodeIndex,
    queries: &PackedCodeIndex,
    k: usize,
) -> Result<Vec<SearchResult>> {
    check_queries(index, queries, k)?;
    par::map_range(queries.len(), |q| search(index, queries.code(q), k))
        .into_iter()
        .collect()
}

/// Single-threaded reference for [`batch_search`].
pub fn batch_search_sequential(
    index: &PackedCodeIndex,
    queries: &PackedCodeIndex,
    k: usize,
) -> Result<Vec<SearchResult>> {
    check_queries(index, queries, k)?;
    (0..queries.len())
        .map(|q| search(index, queries.code(q), k))
        .collect()
}

/// Cosine search over a borrowed embedding set, with row norms precomputed.
pub struct CosineIndex<'a> {
    set: &'a EmbeddingSet,
    inv_norms: Vec<f32>,
}

const NORM_GUARD: f32 = 1e-12;

#[inline]
fn dot_f32(a: &[f32], b: &[f32]) -> f32 {
    // Eight independent lanes, summed in a fixed order.
    let mut acc = [0f32; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let tail: f32 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(x, y)| x * y)
        .sum();
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

impl<'a> CosineIndex<'a> {
    pub fn new(set: &'a EmbeddingSet) -> Self {
        let inv_norms = par::map_range(set.count(), |i| {
            let r = set.row(i);
            1.0 / dot_f32(r, r).sqrt().max(NORM_GUARD)
        });
        Self { set, inv_norms }
    }

    pub fn len(&self) -> usize {
        self.set.count()
    }

    pub fn is_empty(&self) -> bool {
        self.set.count() == 0
    }

    pub fn set(&self) -> &EmbeddingSet {
        self.set
    }

    /// Top-`k` by descending cosine similarity; `distance = -similarity`.
    pub fn search(&self, query: &[f32], k: usize) -> Result<SearchResult> {
        if query.len() != self.set.dim() {
            return Err(Error::DimensionMismatch {
                field: "query dim",
                expected: self.set.dim(),
                found: query.len(),
            });
        }
        if k == 0 {
            return Err(Error::InvalidConfig("k must be >= 1".into()));
        }
        let q_inv = 1.0 / dot_f32(query, query).sqrt().max(NORM_GUARD);
        let mut top = TopK::new(k);
        for i in 0..self.set.count() {
            let sim = dot_f32(self.set.row(i), query) * self.inv_norms[i] * q_inv;
            // `+ 0.0` folds -0.0 into 0.0 so zero similarities tie exactly.
            top.offer(-sim + 0.0, i);
        }
        Ok(SearchResult {
            hits: top
                .into_sorted()
                .into_iter()
                .map(|(d, i)| Hit {
                    index: i,
                    item_id: i as u64,
                    distance: f64::from(d),
                })
                .collect(),
        })
    }

    /// [`Self::search`] for every row of `queries`, parallel over queries.
    pub fn batch_search(&self, queries: &EmbeddingSet, k: usize) -> Result<Vec<SearchResult>> {
        par::map_range(queries.count(), |q| self.search(queries.row(q), k))
            .into_iter()
            .collect()
    }
}

/// One-shot cosine search; see [`CosineIndex`] for repeated queries.
pub fn cosine_search(db: &EmbeddingSet, query: &[f32], k: usize) -> Result<SearchResult> {
    CosineIndex::new(db).search(query, k)
}
