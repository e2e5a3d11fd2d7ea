//! Trains heads on the synthetic benchmark and compares binary Hamming
//! retrieval with cosine retrieval.
//!
//! Run: cargo run --release -p hypercube --example synthetic_benchmark -- [lambda] [seed] [epochs] [batch_size]

use std::time::Instant;

use hypercube::eval::{format_table, map_at_k_binary, map_at_k_cosine};
use hypercube::head::encode;
use hypercube::storage::{generate_synthetic, SynthConfig};
use hypercube::trainer::{bit_stats, train};
use hypercube::{EvalScope, PackedCodeIndex, TrainConfig};

fn main() -> hypercube::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let lambda: f64 = args.first().map_or(1.0, |s| s.parse().unwrap());
    let seed: u64 = args.get(1).map_or(0, |s| s.parse().unwrap());
    let epochs: usize = args.get(2).map_or(50, |s| s.parse().unwrap());
    let batch_size: usize = args.get(3).map_or(64, |s| s.parse().unwrap());

    let data = generate_synthetic(&SynthConfig {
        seed,
        ..SynthConfig::default()
    })?;
    let cfg = TrainConfig {
        bits: 64,
        lambda,
        seed,
        epochs,
        batch_size,
        ..TrainConfig::default()
    };

    let t = Instant::now();
    let (text_head, obs_head, log) = train(&data.text, &data.obs, &cfg)?;
    println!("trained {} steps in {:.2?}", log.steps.len(), t.elapsed());
    if let (Some(first), Some(last)) = (log.steps.first(), log.steps.last()) {
        println!("first step {first:?}\nlast step  {last:?}");
    }

    let obs_codes = encode(&obs_head, &data.obs)?;
    let text_codes = encode(&text_head, &data.text)?;
    let (activation, distinct) = bit_stats(&obs_codes);
    let lo = activation.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = activation.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    println!("bit activation range [{lo:.3}, {hi:.3}], distinct codes {distinct}");

    let db = PackedCodeIndex::from_codes_of(&obs_codes, &data.obs)?;
    let queries = PackedCodeIndex::from_codes_of(&text_codes, &data.text)?;
    let names = data.obs.category_names().to_vec();
    let binary = map_at_k_binary(&db, &queries, 100, EvalScope::PerCategory, &names)?;
    let cosine = map_at_k_cosine(&data.obs, &data.shared_text, 100, EvalScope::PerCategory)?;
    print!(
        "{}",
        format_table(&[
            ("Binary (Hashing)", &binary),
            ("Continuous (cosine)", &cosine)
        ])
    );
    Ok(())
}
