//! Seeded minibatch Adam loop over label-paired embeddings.

use std::collections::HashMap;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{CodeBatch, EmbeddingSet, PairedBatch, TrainConfig};
use crate::error::{Error, Result};
use crate::head::{encode, HashHead};
use crate::objective::{total_loss_and_grads, LossReport};

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Pairs every observation with the text embedding of its label, shuffles
/// with `epoch_seed` and cuts batches of `cfg.batch_size` (clamped to the
/// observation count). A trailing batch of fewer than two rows is dropped.
pub fn make_batches(
    text: &EmbeddingSet,
    obs: &EmbeddingSet,
    cfg: &TrainConfig,
    epoch_seed: u64,
) -> Result<Vec<PairedBatch>> {
    let text_row = text_rows_by_label(text);
    let paired: Vec<usize> = obs
        .labels()
        .iter()
        .map(|l| {
            text_row
                .get(l)
                .copied()
                .ok_or(Error::MissingTextForLabel(*l))
        })
        .collect::<Result<_>>()?;

    let mut order: Vec<usize> = (0..obs.count()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed));

    let size = cfg.batch_size.min(obs.count()).max(2);
    order
        .chunks(size)
        .filter(|c| c.len() >= 2)
        .map(|chunk| {
            let text_idx: Vec<usize> = chunk.iter().map(|&i| paired[i]).collect();
            PairedBatch::new(
                text.gather(&text_idx),
                obs.gather(chunk),
                chunk.iter().map(|&i| obs.labels()[i]).collect(),
            )
        })
        .collect()
}

/// First text row for each label.
fn text_rows_by_label(text: &EmbeddingSet) -> HashMap<u32, usize> {
    let mut map = HashMap::new();
    for (i, &l) in text.labels().iter().enumerate() {
        map.entry(l).or_insert(i);
    }
    map
}

#[derive(Debug, Clone, PartialEq)]
struct Moments {
    first: Vec<f64>,
    second: Vec<f64>,
}

impl Moments {
    fn zeros(n: usize) -> Self {
        Self {
            first: vec![0.0; n],
            second: vec![0.0; n],
        }
    }

    fn apply(&mut self, params: &mut [f64], grads: &[f64], lr: f64, step: u64) {
        let c1 = 1.0 - BETA1.powi(step as i32);
        let c2 = 1.0 - BETA2.powi(step as i32);
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.first)
            .zip(&mut self.second)
        {
            *m = BETA1 * *m + (1.0 - BETA1) * g;
            *v = BETA2 * *v + (1.0 - BETA2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
        }
    }
}

/// Heads plus optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub text_head: HashHead,
    pub obs_head: HashHead,
    text_moments: Moments,
    obs_moments: Moments,
    step: u64,
    rng: ChaCha8Rng,
}

impl TrainState {
    /// Seeded initialization for the given feature dimensions.
    pub fn new(text_dim: usize, obs_dim: usize, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let hidden = if cfg.linear_head { 0 } else { cfg.hidden_width };
        let text_head = HashHead::init(text_dim, hidden, cfg.bits, rng.next_u64());
        let obs_head = HashHead::init(obs_dim, hidden, cfg.bits, rng.next_u64());
        Ok(Self {
            text_moments: Moments::zeros(text_head.params().len()),
            obs_moments: Moments::zeros(obs_head.params().len()),
            text_head,
            obs_head,
            step: 0,
            rng,
        })
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn next_epoch_seed(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// One Adam update on `batch`. Aborts on a non-finite loss.
    pub fn step(&mut self, batch: &PairedBatch, cfg: &TrainConfig) -> Result<LossReport> {
        let (report, grads) =
            total_loss_and_grads(&self.text_head, &self.obs_head, batch, cfg.lambda)?;
        let next = self.step + 1;
        if !report.total.is_finite() {
            return Err(Error::NonFiniteLoss { step: next });
        }
        self.step = next;
        self.text_moments.apply(
            self.text_head.params_mut(),
            &grads.text,
            cfg.learning_rate,
            next,
        );
        self.obs_moments.apply(
            self.obs_head.params_mut(),
            &grads.obs,
            cfg.learning_rate,
            next,
        );
        Ok(report)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: usize,
    pub align: f64,
    pub div: f64,
    pub total: f64,
}

/// Per-bit activation over the observation set after an epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Fraction of items with bit `j` set, for each `j`.
    pub bit_activation: Vec<f64>,
    pub distinct_codes: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochStats>,
}

#[derive(Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum LogLine<'a> {
    Step(&'a StepRecord),
    Epoch(&'a EpochStats),
}

impl TrainLog {
    /// One JSON object per line: every step record, each epoch's histogram
    /// emitted after that epoch's steps.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let mut steps = self.steps.iter().peekable();
        for ep in &self.epochs {
            while let Some(s) = steps.next_if(|s| s.epoch <= ep.epoch) {
                serde_json::to_writer(&mut out, &LogLine::Step(s))?;
                out.write_all(b"\n")?;
            }
            serde_json::to_writer(&mut out, &LogLine::Epoch(ep))?;
            out.write_all(b"\n")?;
        }
        for s in steps {
            serde_json::to_writer(&mut out, &LogLine::Step(s))?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Bit activation fractions and number of distinct codes.
pub fn bit_stats(codes: &CodeBatch) -> (Vec<f64>, usize) {
    let n = codes.len();
    let bits = codes.bits();
    let mut ones = vec![0usize; bits];
    let mut seen = std::collections::HashSet::with_capacity(n);
    for i in 0..n {
        let c = codes.code(i);
        for (o, &v) in ones.iter_mut().zip(c) {
            *o += usize::from(v);
        }
        seen.insert(c);
    }
    let denom = n.max(1) as f64;
    (
        ones.into_iter().map(|o| o as f64 / denom).collect(),
        seen.len(),
    )
}

/// Trains both heads for `cfg.epochs` epochs. Deterministic in `cfg.seed`.
pub fn train(
    text: &EmbeddingSet,
    obs: &EmbeddingSet,
    cfg: &TrainConfig,
) -> Result<(HashHead, HashHead, TrainLog)> {
    let mut state = TrainState::new(text.dim(), obs.dim(), cfg)?;
    let mut log = TrainLog::default();
    for epoch in 1..=cfg.epochs {
        let seed = state.next_epoch_seed();
        for batch in make_batches(text, obs, cfg, seed)? {
            let r = state.step(&batch, cfg)?;
            log.steps.push(StepRecord {
                step: state.steps_taken(),
                epoch,
                align: r.align,
                div: r.div,
                total: r.total,
            });
        }
        let (bit_activation, distinct_codes) = bit_stats(&encode(&state.obs_head, obs)?);
        log.epochs.push(EpochStats {
            epoch,
            bit_activation,
            distinct_codes,
        });
    }
    Ok((state.text_head, state.obs_head, log))
}
