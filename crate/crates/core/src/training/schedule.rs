//! Staged training with dev-set checkpoint selection and multi-seed runs.

use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backend_flat::Scorer;
use crate::dataio::{generate_trials, EmbeddingSet};
use crate::error::{Error, Result};
use crate::metrics::{actual_dcf, DcfParams};
use crate::scalar::Scalar;
use crate::training::adam::{AdamConfig, AdamState};
use crate::training::batch::{batch_groups, sample_from_groups};
use crate::training::grad::Trainable;
use crate::training::loss::bce_loss_grad;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stage {
    pub n_batches: usize,
    pub learning_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMetric {
    #[default]
    Loss,
    ActualDcf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub pi: f64,
    pub alpha: f64,
    /// Main stages, run back to back with one optimizer state.
    pub stages: Vec<Stage>,
    /// Run from the selected checkpoint with a fresh optimizer state.
    pub finetune: Stage,
    pub seeds: Vec<u64>,
    pub adam: AdamConfig,
    pub checkpoint_every: usize,
    pub selection_metric: SelectionMetric,
    /// Names of the dev sets averaged for selection; empty means all.
    pub selection: Vec<String>,
    /// LDA output dimension of a flat backend; defaults to `L - 1`.
    pub lda_dim: Option<usize>,
    /// Stage dimensions of a hierarchical backend; default `C - 1` and `L - C`.
    pub lda_dim_stage1: Option<usize>,
    pub lda_dim_stage2: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 2048,
            pi: 0.01,
            alpha: 0.0,
            stages: vec![
                Stage {
                    n_batches: 1200,
                    learning_rate: 5e-4,
                },
                Stage {
                    n_batches: 300,
                    learning_rate: 1e-3,
                },
            ],
            finetune: Stage {
                n_batches: 100,
                learning_rate: 1e-5,
            },
            seeds: vec![0],
            adam: AdamConfig::default(),
            checkpoint_every: 250,
            selection_metric: SelectionMetric::Loss,
            selection: Vec::new(),
            lda_dim: None,
            lda_dim_stage1: None,
            lda_dim_stage2: None,
        }
    }
}

impl TrainConfig {
    /// Checks every field; the message names the offending one.
    pub fn validate(&self) -> Result<()> {
        let bad = |f: &str, why: String| Err(Error::invalid(format!("{f}: {why}")));
        if self.batch_size == 0 {
            return bad("batch_size", "must be at least 1".into());
        }
        if !(self.pi > 0.0 && self.pi < 1.0) {
            return bad("pi", format!("{} is outside (0, 1)", self.pi));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad("alpha", format!("{} is outside [0, 1]", self.alpha));
        }
        for (i, s) in self
            .stages
            .iter()
            .chain(std::iter::once(&self.finetune))
            .enumerate()
        {
            if !(s.learning_rate > 0.0 && s.learning_rate.is_finite()) {
                let field = if i < self.stages.len() {
                    format!("stages[{i}].learning_rate")
                } else {
                    "finetune.learning_rate".into()
                };
                return bad(&field, format!("{} must be positive", s.learning_rate));
            }
        }
        if self.seeds.is_empty() {
            return bad("seeds", "at least one seed is needed".into());
        }
        if self.checkpoint_every == 0 {
            return bad("checkpoint_every", "must be at least 1".into());
        }
        let a = &self.adam;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.eps > 0.0) {
            return bad("adam", format!("{a:?} is not a valid Adam setting"));
        }
        Ok(())
    }

    pub fn total_batches(&self) -> usize {
        self.stages.iter().map(|s| s.n_batches).sum::<usize>() + self.finetune.n_batches
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DevSet<T> {
    pub name: String,
    pub set: EmbeddingSet<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointRow {
    pub checkpoint: usize,
    pub batches_seen: usize,
    pub lr: f64,
    /// Mean batch loss since the previous checkpoint; none for the start point.
    pub train_loss: Option<f64>,
    pub dev_losses: Vec<f64>,
    pub selection_value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainLog {
    pub dev_names: Vec<String>,
    pub rows: Vec<CheckpointRow>,
    /// Checkpoint picked after the main stages (fine-tuning starts from it).
    pub selected_main: usize,
    /// Checkpoint returned.
    pub selected_final: usize,
    pub diverged: bool,
}

impl TrainLog {
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("checkpoint\tbatches_seen\tlr\ttrain_loss");
        for n in &self.dev_names {
            out.push_str(&format!("\tdev_loss_{n}"));
        }
        out.push('\n');
        for r in &self.rows {
            let tl = r
                .train_loss
                .map_or_else(|| "NA".to_string(), |v| v.to_string());
            out.push_str(&format!(
                "{}\t{}\t{}\t{tl}",
                r.checkpoint, r.batches_seen, r.lr
            ));
            for d in &r.dev_losses {
                out.push_str(&format!("\t{d}"));
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<B> {
    pub backend: B,
    pub log: TrainLog,
    pub seed: u64,
    /// Selection value (mean dev loss by default) of the returned backend.
    pub dev_value: f64,
}

struct PreparedDev<T> {
    set: EmbeddingSet<T>,
    labels: Vec<Option<usize>>,
    selected: bool,
}

fn detector_index(detectors: &[String], language: &str) -> Option<usize> {
    detectors.iter().position(|d| d == language)
}

fn prepare_dev<T: Scalar>(
    detectors: &[String],
    dev: &[DevSet<T>],
    cfg: &TrainConfig,
) -> Result<Vec<PreparedDev<T>>> {
    if dev.is_empty() {
        return Err(Error::invalid("training needs at least one dev set"));
    }
    for s in &cfg.selection {
        if !dev.iter().any(|d| &d.name == s) {
            return Err(Error::invalid(format!(
                "selection names unknown dev set {s}"
            )));
        }
    }
    Ok(dev
        .iter()
        .map(|d| PreparedDev {
            labels: d
                .set
                .records()
                .iter()
                .map(|r| detector_index(detectors, &r.language))
                .collect(),
            selected: cfg.selection.is_empty() || cfg.selection.contains(&d.name),
            set: d.set.clone(),
        })
        .collect())
}

/// Per-set dev losses and the selection value.
fn evaluate_dev<T: Scalar, B: Scorer<T>>(
    model: &B,
    dev: &[PreparedDev<T>],
    cfg: &TrainConfig,
) -> Result<(Vec<f64>, f64)> {
    let mut losses = Vec::with_capacity(dev.len());
    let mut sel = Vec::new();
    for d in dev {
        let scores = model.score_set(&d.set)?;
        let loss = bce_loss_grad(&scores, &d.labels, cfg.pi)?.0.to_f64_lossy();
        losses.push(loss);
        if d.selected {
            sel.push(match cfg.selection_metric {
                SelectionMetric::Loss => loss,
                SelectionMetric::ActualDcf => {
                    let trials = generate_trials(&d.set, model.detector_labels())?;
                    let s = trials.gather(&scores);
                    actual_dcf(&s, &trials.targets(), &DcfParams::default())?.dcf_norm
                }
            });
        }
    }
    let value = sel.iter().sum::<f64>() / sel.len() as f64;
    Ok((
        losses,
        if value.is_finite() {
            value
        } else {
            f64::INFINITY
        },
    ))
}

struct Run<'a, T, B> {
    cfg: &'a TrainConfig,
    xs: Vec<&'a [T]>,
    labels: Vec<usize>,
    groups: Vec<Vec<usize>>,
    dev: Vec<PreparedDev<T>>,
    rng: ChaCha8Rng,
    log: TrainLog,
    batches_seen: usize,
    best: (f64, B, usize),
}

impl<T: Scalar, B: Trainable<T>> Run<'_, T, B> {
    fn checkpoint(&mut self, model: &B, lr: f64, train_loss: Option<f64>) -> Result<()> {
        let (losses, value) = evaluate_dev(model, &self.dev, self.cfg)?;
        let idx = self.log.rows.len();
        info!(
            "checkpoint {idx}: batches {} train {:?} dev {:?}",
            self.batches_seen, train_loss, losses
        );
        self.log.rows.push(CheckpointRow {
            checkpoint: idx,
            batches_seen: self.batches_seen,
            lr,
            train_loss,
            dev_losses: losses,
            selection_value: value,
        });
        if value < self.best.0 {
            self.best = (value, model.clone(), idx);
        }
        Ok(())
    }

    /// Runs the stages from `model`. Returns false if training diverged.
    fn phase(&mut self, mut model: B, stages: &[Stage]) -> Result<bool> {
        let sizes: Vec<usize> = model.params().iter().map(|p| p.len()).collect();
        let mut adam = AdamState::new(&sizes);
        let (mut sum, mut count) = (0.0, 0usize);
        let total: usize = stages.iter().map(|s| s.n_batches).sum();
        let mut done = 0usize;
        for stage in stages {
            for _ in 0..stage.n_batches {
                let idx = sample_from_groups(&self.groups, self.cfg.batch_size, &mut self.rng);
                let bx: Vec<&[T]> = idx.iter().map(|&i| self.xs[i]).collect();
                let bl: Vec<usize> = idx.iter().map(|&i| self.labels[i]).collect();
                let step = model.loss_and_grad(&bx, &bl, self.cfg.pi, self.cfg.alpha);
                let (loss, grad) = match step {
                    Ok(v) => v,
                    Err(e @ (Error::NonFinite(_) | Error::DegenerateEmbedding(_))) => {
                        warn!("training diverged after {} batches: {e}", self.batches_seen);
                        return Ok(false);
                    }
                    Err(e) => return Err(e),
                };
                adam.step(
                    model.params_mut(),
                    &grad,
                    stage.learning_rate,
                    &self.cfg.adam,
                )?;
                model.after_step();
                self.batches_seen += 1;
                done += 1;
                sum += loss.to_f64_lossy();
                count += 1;
                if done % self.cfg.checkpoint_every == 0 || done == total {
                    let tl = sum / count as f64;
                    (sum, count) = (0.0, 0);
                    match self.checkpoint(&model, stage.learning_rate, Some(tl)) {
                        Ok(()) => {}
                        Err(e @ (Error::NonFinite(_) | Error::DegenerateEmbedding(_))) => {
                            warn!(
                                "dev evaluation failed after {} batches: {e}",
                                self.batches_seen
                            );
                            return Ok(false);
                        }
                        Err(e) => return Err(e),
                    }
                }
            }
        }
        Ok(true)
    }
}

/// Main stages with checkpointing, selection of the best checkpoint by
/// the dev criterion, fine-tuning from it, and a final pick over the
/// selected checkpoint and the fine-tuning checkpoints.
pub fn train<T: Scalar, B: Trainable<T>>(
    init: &B,
    train_set: &EmbeddingSet<T>,
    dev: &[DevSet<T>],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome<B>> {
    cfg.validate()?;
    let detectors = init.detector_labels().to_vec();
    let labels = train_set
        .records()
        .iter()
        .map(|r| {
            detector_index(&detectors, &r.language)
                .ok_or_else(|| Error::UnknownLanguage(r.language.clone()))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut run = Run {
        cfg,
        xs: train_set.vectors(),
        labels,
        groups: batch_groups(train_set),
        dev: prepare_dev(&detectors, dev, cfg)?,
        rng: ChaCha8Rng::seed_from_u64(seed),
        log: TrainLog {
            dev_names: dev.iter().map(|d| d.name.clone()).collect(),
            rows: Vec::new(),
            selected_main: 0,
            selected_final: 0,
            diverged: false,
        },
        batches_seen: 0,
        best: (f64::INFINITY, init.clone(), 0),
    };
    run.checkpoint(init, 0.0, None)?;
    let ok = run.phase(init.clone(), &cfg.stages)?;
    run.log.selected_main = run.best.2;
    if ok && cfg.finetune.n_batches > 0 {
        let start = run.best.1.clone();
        let ok = run.phase(start, &[cfg.finetune])?;
        run.log.diverged = !ok;
    } else {
        run.log.diverged = !ok;
    }
    run.log.selected_final = run.best.2;
    let (value, backend, _) = run.best;
    Ok(TrainOutcome {
        backend,
        log: run.log,
        seed,
        dev_value: value,
    })
}

#[derive(Debug, Clone)]
pub struct MultiSeedOutcome<B> {
    pub best: TrainOutcome<B>,
    /// `(seed, dev value)` per distinct seed, in first-occurrence order.
    pub per_seed: Vec<(u64, f64)>,
}

/// Trains once per distinct seed and keeps the lowest dev value; ties go
/// to the lowest seed.
pub fn multi_seed_train<T, B, F>(
    factory: F,
    train_set: &EmbeddingSet<T>,
    dev: &[DevSet<T>],
    cfg: &TrainConfig,
) -> Result<MultiSeedOutcome<B>>
where
    T: Scalar,
    B: Trainable<T>,
    F: Fn(u64) -> Result<B>,
{
    cfg.validate()?;
    let mut seeds: Vec<u64> = Vec::new();
    for &s in &cfg.seeds {
        if !seeds.contains(&s) {
            seeds.push(s);
        }
    }
    let mut best: Option<TrainOutcome<B>> = None;
    let mut per_seed = Vec::with_capacity(seeds.len());
    for seed in seeds {
        let init = factory(seed)?;
        let out = train(&init, train_set, dev, cfg, seed)?;
        info!("seed {seed}: dev value {}", out.dev_value);
        per_seed.push((seed, out.dev_value));
        let better = match &best {
            None => true,
            Some(b) => {
                out.dev_value < b.dev_value || (out.dev_value == b.dev_value && seed < b.seed)
            }
        };
        if better {
            best = Some(out);
        }
    }
    Ok(MultiSeedOutcome {
        best: best.expect("at least one seed"),
        per_seed,
    })
}
