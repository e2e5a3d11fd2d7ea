//! Retrieval metrics: truncated average precision and per-category mAP@k.
//!
//! Relevance is an exact label match. AP@k is normalized by
//! `min(n_relevant, k)`. Queries with no relevant database item are skipped
//! and counted rather than scored zero.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::EmbeddingSet;
use crate::error::{Error, Result};
use crate::index::{self, CosineIndex, PackedCodeIndex};
use crate::par;

/// AP@k of a ranked relevance list.
pub fn average_precision(ranked_relevance: &[bool], k: usize, n_relevant_total: usize) -> f64 {
    let denom = n_relevant_total.min(k);
    if denom == 0 {
        return 0.0;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (r, &rel) in ranked_relevance.iter().take(k).enumerate() {
        if rel {
            hits += 1;
            sum += hits as f64 / (r + 1) as f64;
        }
    }
    sum / denom as f64
}

/// Which database items a category's queries are ranked against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum EvalScope {
    /// Only database items of the query's category.
    #[default]
    PerCategory,
    /// The whole database.
    WholeDatabase,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryScore {
    pub category: u32,
    pub name: Option<String>,
    pub map: f64,
    pub queries: usize,
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub k: usize,
    pub categories: Vec<CategoryScore>,
    /// Unweighted mean over scored categories.
    pub average: f64,
    pub skipped_queries: usize,
    /// Categories with no database items or no scorable query.
    pub empty_categories: Vec<u32>,
}

/// Something that ranks database rows for a query.
pub trait Ranker: Sync {
    type Restricted: Sync;

    fn db_labels(&self) -> &[u32];
    fn db_categories(&self) -> &[u32];
    fn query_labels(&self) -> &[u32];
    fn query_categories(&self) -> &[u32];
    fn restrict(&self, rows: &[usize]) -> Self::Restricted;
    /// Top-`k` positions within the restricted database for query `q`.
    fn rank(&self, sub: &Self::Restricted, q: usize, k: usize) -> Result<Vec<usize>>;
}

/// Hamming ranking of packed query codes against a packed database.
pub struct BinaryRanker<'a> {
    pub db: &'a PackedCodeIndex,
    pub queries: &'a PackedCodeIndex,
}

impl Ranker for BinaryRanker<'_> {
    type Restricted = PackedCodeIndex;

    fn db_labels(&self) -> &[u32] {
        self.db.labels()
    }
    fn db_categories(&self) -> &[u32] {
        self.db.categories()
    }
    fn query_labels(&self) -> &[u32] {
        self.queries.labels()
    }
    fn query_categories(&self) -> &[u32] {
        self.queries.categories()
    }
    fn restrict(&self, rows: &[usize]) -> PackedCodeIndex {
        self.db.select(rows)
    }
    fn rank(&self, sub: &PackedCodeIndex, q: usize, k: usize) -> Result<Vec<usize>> {
        Ok(index::search(sub, self.queries.code(q), k)?
            .indices()
            .collect())
    }
}

/// Cosine ranking of continuous query rows against continuous database rows.
pub struct CosineRanker<'a> {
    pub db: &'a EmbeddingSet,
    pub queries: &'a EmbeddingSet,
}

impl Ranker for CosineRanker<'_> {
    type Restricted = EmbeddingSet;

    fn db_labels(&self) -> &[u32] {
        self.db.labels()
    }
    fn db_categories(&self) -> &[u32] {
        self.db.categories()
    }
    fn query_labels(&self) -> &[u32] {
        self.queries.labels()
    }
    fn query_categories(&self) -> &[u32] {
        self.queries.categories()
    }
    fn restrict(&self, rows: &[usize]) -> EmbeddingSet {
        let dim = self.db.dim();
        let mut data = Vec::with_capacity(rows.len() * dim);
        for &r in rows {
            data.extend_from_slice(self.db.row(r));
        }
        EmbeddingSet::new(
            rows.len(),
            dim,
            data,
            rows.iter().map(|&r| self.db.labels()[r]).collect(),
            rows.iter().map(|&r| self.db.categories()[r]).collect(),
            self.db.modality(),
        )
        .expect("subset of a valid set is valid")
    }
    fn rank(&self, sub: &EmbeddingSet, q: usize, k: usize) -> Result<Vec<usize>> {
        Ok(CosineIndex::new(sub)
            .search(self.queries.row(q), k)?
            .indices()
            .collect())
    }
}

/// mAP@k per query category, averaged over categories.
pub fn map_at_k<R: Ranker>(
    ranker: &R,
    k: usize,
    scope: EvalScope,
    category_names: &[String],
) -> Result<EvalReport> {
    if k == 0 {
        return Err(Error::InvalidConfig("k must be >= 1".into()));
    }
    let q_cats = ranker.query_categories();
    let db_cats = ranker.db_categories();
    let db_labels = ranker.db_labels();
    let q_labels = ranker.query_labels();

    let categories: BTreeSet<u32> = q_cats.iter().copied().collect();
    let mut scores = Vec::new();
    let mut empty = Vec::new();
    let mut skipped_total = 0;

    for &cat in &categories {
        let rows: Vec<usize> = match scope {
            EvalScope::PerCategory => (0..db_cats.len()).filter(|&i| db_cats[i] == cat).collect(),
            EvalScope::WholeDatabase => (0..db_cats.len()).collect(),
        };
        let queries: Vec<usize> = (0..q_cats.len()).filter(|&q| q_cats[q] == cat).collect();
        if rows.is_empty() {
            skipped_total += queries.len();
            empty.push(cat);
            continue;
        }
        let sub = ranker.restrict(&rows);
        let per_query: Vec<Result<Option<f64>>> = par::map_range(queries.len(), |qi| {
            let q = queries[qi];
            let label = q_labels[q];
            let n_rel = rows.iter().filter(|&&r| db_labels[r] == label).count();
            if n_rel == 0 {
                return Ok(None);
            }
            let ranked = ranker.rank(&sub, q, k)?;
            let rel: Vec<bool> = ranked
                .iter()
                .map(|&p| db_labels[rows[p]] == label)
                .collect();
            Ok(Some(average_precision(&rel, k, n_rel)))
        });
        let mut sum = 0.0;
        let mut scored = 0usize;
        let mut skipped = 0usize;
        for r in per_query {
            match r? {
                Some(ap) => {
                    sum += ap;
                    scored += 1;
                }
                None => skipped += 1,
            }
        }
        skipped_total += skipped;
        if scored == 0 {
            empty.push(cat);
            continue;
        }
        scores.push(CategoryScore {
            category: cat,
            name: category_names.get(cat as usize).cloned(),
            map: sum / scored as f64,
            queries: scored,
            skipped,
        });
    }

    let average = if scores.is_empty() {
        0.0
    } else {
        scores.iter().map(|s| s.map).sum::<f64>() / scores.len() as f64
    };
    Ok(EvalReport {
        k,
        categories: scores,
        average,
        skipped_queries: skipped_total,
        empty_categories: empty,
    })
}

/// Binary Hamming-retrieval mAP@k.
pub fn map_at_k_binary(
    db: &PackedCodeIndex,
    queries: &PackedCodeIndex,
    k: usize,
    scope: EvalScope,
    category_names: &[String],
) -> Result<EvalReport> {
    if db.bits() != queries.bits() {
        return Err(Error::BitsMismatch {
            index: db.bits(),
            query: queries.bits(),
        });
    }
    map_at_k(&BinaryRanker { db, queries }, k, scope, category_names)
}

/// Continuous cosine-retrieval mAP@k.
pub fn map_at_k_cosine(
    db: &EmbeddingSet,
    queries: &EmbeddingSet,
    k: usize,
    scope: EvalScope,
) -> Result<EvalReport> {
    if db.dim() != queries.dim() {
        return Err(Error::DimensionMismatch {
            field: "query dim",
            expected: db.dim(),
            found: queries.dim(),
        });
    }
    map_at_k(&CosineRanker { db, queries }, k, scope, db.category_names())
}

impl EvalReport {
    fn column_name(s: &CategoryScore) -> String {
        s.name
            .clone()
            .unwrap_or_else(|| format!("cat{}", s.category))
    }

    /// Line-delimited JSON: one record per category, then a summary.
    pub fn write_jsonl<W: Write>(&self, feature: &str, mut out: W) -> std::io::Result<()> {
        for s in &self.categories {
            let rec = serde_json::json!({
                "type": "category",
                "feature": feature,
                "k": self.k,
                "category": s.category,
                "name": Self::column_name(s),
                "map": s.map,
                "queries": s.queries,
                "skipped": s.skipped,
            });
            writeln!(out, "{rec}")?;
        }
        let rec = serde_json::json!({
            "type": "summary",
            "feature": feature,
            "k": self.k,
            "avg": self.average,
            "skipped_queries": self.skipped_queries,
            "empty_categories": self.empty_categories,
        });
        writeln!(out, "{rec}")
    }
}

/// Plain-text table: one row per feature, one column per category and a
/// final AVG column, values in percent.
pub fn format_table(rows: &[(&str, &EvalReport)]) -> String {
    let mut columns: Vec<(u32, String)> = Vec::new();
    for (_, rep) in rows {
        for s in &rep.categories {
            if !columns.iter().any(|(c, _)| *c == s.category) {
                columns.push((s.category, EvalReport::column_name(s)));
            }
        }
    }
    columns.sort_by_key(|(c, _)| *c);
    let k = rows.first().map_or(0, |(_, r)| r.k);
    let label_w = rows.iter().map(|(f, _)| f.len()).max().unwrap_or(0).max(7);
    let col_w = columns
        .iter()
        .map(|(_, n)| n.len())
        .max()
        .unwrap_or(0)
        .max(6);

    let mut out = String::new();
    let _ = writeln!(out, "mAP@{k}");
    let _ = write!(out, "{:<label_w$} |", "Feature");
    for (_, name) in &columns {
        let _ = write!(out, " {name:>col_w$}");
    }
    let _ = writeln!(out, " | {:>col_w$}", "AVG");
    let _ = writeln!(
        out,
        "{}",
        "-".repeat(label_w + 2 + (col_w + 1) * columns.len() + 3 + col_w)
    );
    for (feature, rep) in rows {
        let _ = write!(out, "{feature:<label_w$} |");
        for (c, _) in &columns {
            match rep.categories.iter().find(|s| s.category == *c) {
                Some(s) => {
                    let _ = write!(out, " {:>col_w$.2}", 100.0 * s.map);
                }
                None => {
                    let _ = write!(out, " {:>col_w$}", "-");
                }
            }
        }
        let _ = writeln!(out, " | {:>col_w$.2}", 100.0 * rep.average);
    }
    out
}
