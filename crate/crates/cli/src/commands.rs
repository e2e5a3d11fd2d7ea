use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use hypercube::eval::{format_table, map_at_k_binary, map_at_k_cosine};
use hypercube::head::encode;
use hypercube::index::{batch_search, batch_search_sequential, CosineIndex};
use hypercube::storage::{
    generate_synthetic, read_embeddings, write_atomic, write_embeddings, SynthConfig,
};
use hypercube::trainer::train;
use hypercube::{EmbeddingSet, Error, EvalScope, HashHead, Modality, PackedCodeIndex, TrainConfig};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::{
    BenchArgs, Cli, Command, EncodeArgs, EvalArgs, EvalMode, GenArgs, IndexArgs, SearchArgs,
    TrainArgs,
};

pub enum CliError {
    Usage(String),
    Lib(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Lib(e)
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Lib(Error::InvalidConfig(_)) => 1,
            CliError::Lib(e) if e.is_numeric() => 3,
            CliError::Lib(_) => 2,
        }
    }

    /// One JSON object on one line.
    pub fn diagnostic(&self) -> String {
        let kind = match self.exit_code() {
            1 => "usage",
            3 => "numeric",
            _ => "data",
        };
        let message = match self {
            CliError::Usage(m) => m.clone(),
            CliError::Lib(e) => e.to_string(),
        };
        json!({ "error": kind, "exit_code": self.exit_code(), "message": message }).to_string()
    }
}

/// Collapses a multi-line clap message (up to its usage block) onto one line.
pub fn one_line(msg: &str) -> String {
    let parts: Vec<&str> = msg
        .lines()
        .take_while(|l| !l.starts_with("Usage:"))
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .collect();
    let joined = parts.join(" ");
    joined
        .strip_prefix("error: ")
        .unwrap_or(&joined)
        .to_string()
}

type CliResult = Result<(), CliError>;

fn stdout_err(e: io::Error) -> CliError {
    CliError::Lib(Error::Io {
        path: PathBuf::from("<stdout>"),
        source: e,
    })
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| {
        CliError::Lib(Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })
    })
}

pub fn run(cli: Cli) -> CliResult {
    configure_threads(cli.threads)?;
    let deterministic = cli.deterministic;
    match cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Train(a) => cmd_train(a),
        Command::Encode(a) => cmd_encode(a),
        Command::Index(a) => cmd_index(a),
        Command::Search(a) => cmd_search(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Bench(a) => cmd_bench(a, deterministic),
    }
}

fn configure_threads(threads: Option<usize>) -> CliResult {
    let Some(n) = threads else { return Ok(()) };
    if n == 0 {
        return Err(CliError::Usage("--threads must be >= 1".into()));
    }
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(format!("cannot configure thread pool: {e}")))?;
    Ok(())
}

fn cmd_gen(a: GenArgs) -> CliResult {
    let cfg = SynthConfig {
        n_classes: a.classes,
        items_per_class: a.items_per_class,
        dim_text: a.dim_text,
        dim_obs: a.dim_obs,
        noise: a.noise,
        n_categories: a.categories,
        seed: a.seed,
    };
    cfg.validate()?;
    ensure_dir(&a.out_dir)?;
    let data = generate_synthetic(&cfg)?;
    write_embeddings(&data.text, &a.out_dir.join("text.hcem"))?;
    write_embeddings(&data.obs, &a.out_dir.join("obs.hcem"))?;
    write_embeddings(&data.shared_text, &a.out_dir.join("shared_text.hcem"))?;
    println!(
        "{}",
        json!({
            "seed": cfg.seed,
            "text_items": data.text.count(),
            "obs_items": data.obs.count(),
            "nearest_mean_accuracy": data.nearest_mean_accuracy,
        })
    );
    Ok(())
}

fn cmd_train(a: TrainArgs) -> CliResult {
    let cfg = TrainConfig {
        bits: a.bits,
        lambda: a.lambda,
        batch_size: a.batch_size,
        learning_rate: a.lr,
        epochs: a.epochs,
        seed: a.seed,
        hidden_width: a.hidden,
        linear_head: a.linear,
    };
    cfg.validate()?;
    let text = read_embeddings(&a.text)?;
    let obs = read_embeddings(&a.obs)?;
    ensure_dir(&a.out_dir)?;
    let (text_head, obs_head, log) = train(&text, &obs, &cfg)?;

    let mut log_bytes = Vec::new();
    log.write_jsonl(&mut log_bytes).map_err(stdout_err)?;
    text_head.save(&a.out_dir.join("text_head.hchd"))?;
    obs_head.save(&a.out_dir.join("obs_head.hchd"))?;
    write_atomic(&a.out_dir.join("train_log.jsonl"), &log_bytes)?;

    let last = log.steps.last();
    let epoch = log.epochs.last();
    println!(
        "{}",
        json!({
            "seed": cfg.seed,
            "steps": log.steps.len(),
            "final_align": last.map(|s| s.align),
            "final_div": last.map(|s| s.div),
            "final_total": last.map(|s| s.total),
            "distinct_codes": epoch.map(|e| e.distinct_codes),
            "min_bit_activation": epoch.map(|e| e.bit_activation.iter().copied().fold(f64::INFINITY, f64::min)),
            "max_bit_activation": epoch.map(|e| e.bit_activation.iter().copied().fold(f64::NEG_INFINITY, f64::max)),
        })
    );
    Ok(())
}

fn cmd_encode(a: EncodeArgs) -> CliResult {
    let head = HashHead::load(&a.head)?;
    let set = read_embeddings(&a.input)?;
    let codes = encode(&head, &set)?;
    let index = PackedCodeIndex::from_codes_of(&codes, &set)?;
    index.save(&a.out)?;
    println!("{}", json!({ "items": index.len(), "bits": index.bits() }));
    Ok(())
}

fn cmd_index(a: IndexArgs) -> CliResult {
    if a.dim == 0 {
        return Err(CliError::Usage("--dim must be >= 1".into()));
    }
    let index = PackedCodeIndex::load(&a.index)?;
    println!(
        "{}",
        json!({
            "bits": index.bits(),
            "items": index.len(),
            "bytes_per_item": index.bytes_per_item(),
            "payload_bytes": index.payload_bytes(),
            "float_dim": a.dim,
            "float_bytes_per_item": 4 * a.dim,
            "compression": index.compression_vs_f32(a.dim),
        })
    );
    Ok(())
}

fn rows_in(categories: &[u32], wanted: &[u32]) -> Vec<usize> {
    (0..categories.len())
        .filter(|&i| wanted.contains(&categories[i]))
        .collect()
}

fn cmd_search(a: SearchArgs) -> CliResult {
    if a.k == 0 {
        return Err(CliError::Usage("--k must be >= 1".into()));
    }
    let mut index = PackedCodeIndex::load(&a.index)?;
    let queries = PackedCodeIndex::load(&a.queries)?;
    if !a.categories.is_empty() {
        index = index.select(&rows_in(index.categories(), &a.categories));
    }
    let results = if index.is_empty() {
        vec![Default::default(); queries.len()]
    } else {
        batch_search(&index, &queries, a.k)?
    };

    let stdout = io::stdout();
    let mut out = BufWriter::new(stdout.lock());
    for (q, res) in results.iter().enumerate() {
        let hits: Vec<_> = res
            .hits
            .iter()
            .map(|h| json!({ "item_id": h.item_id, "distance": h.distance as u32 }))
            .collect();
        let rec = json!({ "query": q, "query_id": queries.item_ids()[q], "hits": hits });
        writeln!(out, "{rec}").map_err(stdout_err)?;
    }
    out.flush().map_err(stdout_err)
}

fn subset(set: &EmbeddingSet, rows: &[usize]) -> Result<EmbeddingSet, Error> {
    let mut data = Vec::with_capacity(rows.len() * set.dim());
    for &r in rows {
        data.extend_from_slice(set.row(r));
    }
    Ok(EmbeddingSet::new(
        rows.len(),
        set.dim(),
        data,
        rows.iter().map(|&r| set.labels()[r]).collect(),
        rows.iter().map(|&r| set.categories()[r]).collect(),
        set.modality(),
    )?
    .with_names(set.label_names().to_vec(), set.category_names().to_vec()))
}

fn require(flag: &Option<PathBuf>, name: &str, mode: &str) -> Result<PathBuf, CliError> {
    flag.clone()
        .ok_or_else(|| CliError::Usage(format!("--{name} is required for --mode {mode}")))
}

fn cmd_eval(a: EvalArgs) -> CliResult {
    if a.k == 0 {
        return Err(CliError::Usage("--k must be >= 1".into()));
    }
    let binary = matches!(a.mode, EvalMode::Binary | EvalMode::Both);
    let cosine = matches!(a.mode, EvalMode::Cosine | EvalMode::Both);
    let mode = format!("{:?}", a.mode).to_lowercase();
    let (index_path, qcode_path) = if binary {
        (
            Some(require(&a.index, "index", &mode)?),
            Some(require(&a.query_codes, "query-codes", &mode)?),
        )
    } else {
        (None, None)
    };
    let (emb_path, qemb_path) = if cosine {
        (
            Some(require(&a.embeddings, "embeddings", &mode)?),
            Some(require(&a.query_embeddings, "query-embeddings", &mode)?),
        )
    } else {
        (a.embeddings.clone(), None)
    };
    let scope = if a.whole_database {
        EvalScope::WholeDatabase
    } else {
        EvalScope::PerCategory
    };

    let db_emb = emb_path.as_deref().map(read_embeddings).transpose()?;
    let names: Vec<String> = db_emb
        .as_ref()
        .map(|s| s.category_names().to_vec())
        .unwrap_or_default();
    let mut reports = Vec::new();

    if let (Some(ip), Some(qp)) = (index_path, qcode_path) {
        let db = PackedCodeIndex::load(&ip)?;
        let mut queries = PackedCodeIndex::load(&qp)?;
        if !a.categories.is_empty() {
            queries = queries.select(&rows_in(queries.categories(), &a.categories));
        }
        let report = map_at_k_binary(&db, &queries, a.k, scope, &names)?;
        reports.push((
            format!("Binary {}-bit", db.bits()),
            format!("binary-{}", db.bits()),
            report,
        ));
    }
    if let (Some(db), Some(qp)) = (db_emb.as_ref(), qemb_path) {
        let mut queries = read_embeddings(&qp)?;
        if !a.categories.is_empty() {
            queries = subset(&queries, &rows_in(queries.categories(), &a.categories))?;
        }
        let report = map_at_k_cosine(db, &queries, a.k, scope)?;
        reports.push(("Cosine".to_string(), "cosine".to_string(), report));
    }

    if let Some(path) = &a.jsonl {
        let mut bytes = Vec::new();
        for (_, feature, rep) in &reports {
            rep.write_jsonl(feature, &mut bytes).map_err(stdout_err)?;
        }
        write_atomic(path, &bytes)?;
    }
    let rows: Vec<(&str, _)> = reports
        .iter()
        .map(|(label, _, r)| (label.as_str(), r))
        .collect();
    print!("{}", format_table(&rows));
    for (label, _, r) in &reports {
        if r.skipped_queries > 0 || !r.empty_categories.is_empty() {
            println!(
                "{label}: {} queries skipped, empty categories {:?}",
                r.skipped_queries, r.empty_categories
            );
        }
    }
    Ok(())
}

fn random_set(
    rng: &mut ChaCha8Rng,
    n: usize,
    dim: usize,
    modality: Modality,
) -> Result<EmbeddingSet, Error> {
    let rows = (0..n * dim)
        .map(|_| (rng.next_u32() >> 8) as f32 / (1u32 << 23) as f32 - 1.0)
        .collect();
    EmbeddingSet::new(n, dim, rows, vec![0; n], vec![0; n], modality)
}

fn cmd_bench(a: BenchArgs, deterministic: bool) -> CliResult {
    if a.k == 0 || a.cosine_dim == 0 || a.cosine_queries == 0 {
        return Err(CliError::Usage(
            "--k, --cosine-dim and --cosine-queries must be >= 1".into(),
        ));
    }
    let index = PackedCodeIndex::load(&a.index)?;
    let queries = PackedCodeIndex::load(&a.queries)?;
    if index.is_empty() || queries.is_empty() {
        return Err(CliError::Lib(Error::InvalidConfig(
            "bench needs a non-empty index and query set".into(),
        )));
    }

    let t = Instant::now();
    let results = batch_search(&index, &queries, a.k)?;
    let hamming_secs = t.elapsed().as_secs_f64();
    let identical = results == batch_search_sequential(&index, &queries, a.k)?;
    let hamming_rate = (index.len() * queries.len()) as f64 / hamming_secs;

    let n_cos = a.cosine_items.unwrap_or(index.len().min(250_000));
    if n_cos == 0 {
        return Err(CliError::Usage("--cosine-items must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let cos_db = random_set(&mut rng, n_cos, a.cosine_dim, Modality::Observation)?;
    let cos_q = random_set(&mut rng, a.cosine_queries, a.cosine_dim, Modality::Text)?;
    let cos_index = CosineIndex::new(&cos_db);
    let t = Instant::now();
    cos_index.batch_search(&cos_q, a.k)?;
    let cosine_secs = t.elapsed().as_secs_f64();
    let cosine_rate = (n_cos * a.cosine_queries) as f64 / cosine_secs;

    let mut report = json!({
        "bits": index.bits(),
        "items": index.len(),
        "queries": queries.len(),
        "k": a.k,
        "bytes_per_item": index.bytes_per_item(),
        "float_bytes_per_item": 4 * a.cosine_dim,
        "compression": index.compression_vs_f32(a.cosine_dim),
        "identical_to_sequential": identical,
    });
    if !deterministic {
        report["hamming_codes_per_sec"] = json!(hamming_rate);
        report["cosine_vectors_per_sec"] = json!(cosine_rate);
        report["speed_ratio"] = json!(hamming_rate / cosine_rate);
    }
    println!("{report}");
    Ok(())
}
