//! Losses, optimizer, the batched training loop and evaluation helpers.

pub mod gradcheck;
pub mod loss;
pub mod optim;

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use emoe_nn::{Graph, Gradients};

use crate::anchors::AnchorBank;
use crate::error::{Error, Result};
use crate::interaction::{DEFAULT_CONFLICT_MARGIN, DEFAULT_K_R};
use crate::planner::{argmax, PlannerNet, Routing};
use crate::scenario::{ScenarioType, Scene};

pub use loss::{
    collision_loss, prediction_loss, prepare_sample, total_loss, LossReport, LossWeights, Obstacle, OutputGrads,
    OutputValues, Sample, SampleOptions, COLLISION_MARGIN,
};
pub use optim::Adam;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Stop after this many optimizer steps, if set.
    pub max_steps: Option<usize>,
    pub k_r: f64,
    pub conflict_margin: f64,
    pub weights: LossWeights,
    pub seed: u64,
    /// At most this many scenes of each type are used, in file order.
    pub per_type_cap: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            batch_size: 32,
            epochs: 35,
            max_steps: None,
            k_r: DEFAULT_K_R,
            conflict_margin: DEFAULT_CONFLICT_MARGIN,
            weights: LossWeights::default(),
            seed: 0,
            per_type_cap: 500,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) || self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("lr, batch_size and epochs must be positive".into()));
        }
        if self.per_type_cap == 0 {
            return Err(Error::Config("per_type_cap must be positive".into()));
        }
        self.weights.validate()
    }

    pub fn sample_options(&self) -> SampleOptions {
        SampleOptions {
            k_r: self.k_r,
            conflict_margin: self.conflict_margin,
        }
    }
}

/// Keeps the first `cap` scenes of each labeled type, preserving order.
pub fn cap_per_type(scenes: &[Scene], cap: usize) -> Vec<&Scene> {
    let mut seen = [0usize; ScenarioType::COUNT];
    scenes
        .iter()
        .filter(|s| match s.label {
            Some(t) if seen[t.index()] < cap => {
                seen[t.index()] += 1;
                true
            }
            _ => false,
        })
        .collect()
}

pub fn prepare_samples(net: &PlannerNet, scenes: &[&Scene], bank: &AnchorBank, cfg: &TrainConfig) -> Result<Vec<Sample>> {
    scenes
        .par_iter()
        .map(|s| prepare_sample(s, bank, &net.cfg, cfg.sample_options()))
        .collect()
}

/// Forward, loss and backward for one sample.
pub struct SampleResult {
    pub loss: LossReport,
    pub grads: Gradients,
    pub expert: usize,
    pub router_correct: bool,
}

pub fn sample_step(
    net: &PlannerNet,
    sample: &Sample,
    bank: &AnchorBank,
    weights: &LossWeights,
    training: bool,
    rng: &mut ChaCha8Rng,
) -> Result<SampleResult> {
    let mut g = Graph::new(&net.store);
    let v = net.forward_graph(&mut g, &sample.features, bank, Routing::Forced(sample.label), training, rng)?;
    let out = OutputValues {
        traj: g.value(v.traj),
        mode_logits: g.value(v.mode_logits).data(),
        router_logits: g.value(v.router_logits).data(),
        agent_pred: v.agent_pred.map(|p| g.value(p)),
    };
    let (loss, grads) = total_loss(&out, sample, weights)?;
    let router_correct = argmax(out.router_logits) == sample.label.index();
    let mut seeds = vec![
        (v.traj, grads.traj.as_slice()),
        (v.mode_logits, grads.mode_logits.as_slice()),
        (v.router_logits, grads.router_logits.as_slice()),
    ];
    if let (Some(p), Some(gp)) = (v.agent_pred, grads.agent_pred.as_ref()) {
        seeds.push((p, gp.as_slice()));
    }
    g.backward(&seeds);
    Ok(SampleResult {
        loss,
        grads: g.param_grads(),
        expert: v.expert,
        router_correct,
    })
}

/// Generator for sample `pos` of optimizer step `step`; independent of
/// worker count and scheduling.
pub fn sample_rng(seed: u64, step: usize, pos: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((step as u64) << 20) | pos as u64);
    rng
}

/// Result of one optimizer step on a batch.
pub struct BatchResult {
    pub loss: LossReport,
    pub router_acc: f64,
    /// Mean gradient over the batch.
    pub grads: Gradients,
    pub expert_counts: Vec<usize>,
    pub label_counts: Vec<usize>,
}

/// Per-sample gradients computed in parallel, reduced in batch order.
pub fn batch_gradients(
    net: &PlannerNet,
    batch: &[&Sample],
    bank: &AnchorBank,
    cfg: &TrainConfig,
    step: usize,
) -> Result<BatchResult> {
    let results = batch
        .par_iter()
        .enumerate()
        .map(|(pos, s)| sample_step(net, s, bank, &cfg.weights, true, &mut sample_rng(cfg.seed, step, pos)))
        .collect::<Result<Vec<_>>>()?;
    let n = results.len();
    let mut expert_counts = vec![0; net.cfg.expert_count()];
    let mut label_counts = vec![0; ScenarioType::COUNT];
    for (r, s) in results.iter().zip(batch) {
        expert_counts[r.expert] += 1;
        label_counts[s.label.index()] += 1;
    }
    let parts: Vec<Gradients> = results.iter().map(|r| r.grads.clone()).collect();
    let mut grads = Gradients::sum_ordered(net.store.len(), &parts);
    grads.scale(1.0 / n as f64);
    let losses: Vec<LossReport> = results.iter().map(|r| r.loss).collect();
    Ok(BatchResult {
        loss: LossReport::mean(&losses),
        router_acc: results.iter().filter(|r| r.router_correct).count() as f64 / n as f64,
        grads,
        expert_counts,
        label_counts,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    pub epoch: usize,
    pub loss: LossReport,
    pub router_acc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss: LossReport,
    pub router_acc: f64,
    /// Samples routed to each expert over the epoch.
    pub expert_counts: Vec<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub steps: Vec<StepMetrics>,
    pub epochs: Vec<EpochMetrics>,
}

impl TrainReport {
    /// `step,epoch,total,reg,cls,col,pred,router,router_acc`
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,epoch,total,reg,cls,col,pred,router,router_acc\n");
        for m in &self.steps {
            let l = &m.loss;
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                m.step, m.epoch, l.total, l.reg, l.cls, l.col, l.pred, l.router, m.router_acc
            );
        }
        out
    }
}

/// Trains `net` in place. With `out_dir`, writes `model.json` (atomically,
/// after every epoch and at the end) and `metrics.csv`. A non-finite loss or
/// gradient stops training with [`Error::Diverged`]; the parameters from
/// before the failing step are kept (and saved when `out_dir` is set).
pub fn train(
    net: &mut PlannerNet,
    scenes: &[Scene],
    bank: &AnchorBank,
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<TrainReport> {
    cfg.validate()?;
    let used = cap_per_type(scenes, cfg.per_type_cap);
    if used.is_empty() {
        return Err(Error::Invalid("no labeled training scenes".into()));
    }
    let samples = prepare_samples(net, &used, bank, cfg)?;
    train_samples(net, &samples, bank, cfg, out_dir)
}

pub fn train_samples(
    net: &mut PlannerNet,
    samples: &[Sample],
    bank: &AnchorBank,
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<TrainReport> {
    train_samples_with(net, samples, bank, cfg, out_dir, &mut |_, _| {})
}

/// [`train_samples`] with a callback after every epoch.
pub fn train_samples_with(
    net: &mut PlannerNet,
    samples: &[Sample],
    bank: &AnchorBank,
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
    on_epoch: &mut dyn FnMut(&PlannerNet, &EpochMetrics),
) -> Result<TrainReport> {
    cfg.validate()?;
    if let Some(d) = out_dir {
        std::fs::create_dir_all(d)?;
    }
    let save = |net: &PlannerNet, report: &TrainReport| -> Result<()> {
        if let Some(d) = out_dir {
            net.save(&d.join("model.json"))?;
            emoe_nn::write_atomic(&d.join("metrics.csv"), report.to_csv().as_bytes())?;
        }
        Ok(())
    };
    let mut opt = Adam::new(cfg.lr);
    let mut report = TrainReport::default();
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut step = 0;
    'epochs: for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut epoch_losses = Vec::new();
        let mut epoch_correct = 0.0;
        let mut expert_counts = vec![0; net.cfg.expert_count()];
        let mut label_counts = vec![0; ScenarioType::COUNT];
        for chunk in order.chunks(cfg.batch_size) {
            if cfg.max_steps.is_some_and(|m| step >= m) {
                break 'epochs;
            }
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &samples[i]).collect();
            let res = batch_gradients(net, &batch, bank, cfg, step)?;
            if !res.loss.total.is_finite() || !res.grads.is_finite() {
                save(net, &report)?;
                return Err(Error::Diverged { step });
            }
            net.store.zero_grad();
            net.store.accumulate(&res.grads);
            opt.step(&mut net.store, &res.grads);
            for (a, b) in expert_counts.iter_mut().zip(&res.expert_counts) {
                *a += b;
            }
            for (a, b) in label_counts.iter_mut().zip(&res.label_counts) {
                *a += b;
            }
            epoch_correct += res.router_acc * batch.len() as f64;
            epoch_losses.push(res.loss);
            report.steps.push(StepMetrics {
                step,
                epoch,
                loss: res.loss,
                router_acc: res.router_acc,
            });
            step += 1;
        }
        if epoch_losses.is_empty() {
            break;
        }
        check_load(net, &expert_counts, &label_counts)?;
        let seen: usize = label_counts.iter().sum();
        report.epochs.push(EpochMetrics {
            epoch,
            loss: LossReport::mean(&epoch_losses),
            router_acc: epoch_correct / seen as f64,
            expert_counts,
        });
        on_epoch(net, report.epochs.last().expect("just pushed"));
        save(net, &report)?;
    }
    save(net, &report)?;
    Ok(report)
}

/// Under teacher forcing every expert sees exactly its label's samples.
fn check_load(net: &PlannerNet, expert_counts: &[usize], label_counts: &[usize]) -> Result<()> {
    let expected: Vec<usize> = if net.cfg.ablation.emoe {
        label_counts.to_vec()
    } else {
        vec![label_counts.iter().sum()]
    };
    if expert_counts != expected.as_slice() {
        return Err(Error::Invalid(format!(
            "expert load {expert_counts:?} differs from label histogram {expected:?}"
        )));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Teacher-forced loss without state dropout.
    pub loss: LossReport,
    pub router_acc: f64,
    /// Position ADE of the most probable mode under predicted routing.
    pub ade: f64,
    pub samples: usize,
}

pub fn evaluate(net: &PlannerNet, samples: &[Sample], bank: &AnchorBank, weights: &LossWeights) -> Result<EvalReport> {
    let per = samples
        .par_iter()
        .map(|s| -> Result<(LossReport, bool, f64)> {
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let forced = sample_step(net, s, bank, weights, false, &mut rng)?;
            let mut g = Graph::new(&net.store);
            let v = net.forward_graph(&mut g, &s.features, bank, Routing::Predicted, false, &mut rng)?;
            let tf = s.gt.len();
            let best = argmax(g.value(v.mode_logits).data());
            let states = loss::mode_states(g.value(v.traj), best, tf);
            let ade = states
                .iter()
                .zip(&s.gt)
                .map(|(p, q)| (p[0] - q[0]).hypot(p[1] - q[1]))
                .sum::<f64>()
                / tf as f64;
            Ok((forced.loss, forced.router_correct, ade))
        })
        .collect::<Result<Vec<_>>>()?;
    let n = per.len().max(1) as f64;
    let losses: Vec<LossReport> = per.iter().map(|p| p.0).collect();
    Ok(EvalReport {
        loss: LossReport::mean(&losses),
        router_acc: per.iter().filter(|p| p.1).count() as f64 / n,
        ade: per.iter().map(|p| p.2).sum::<f64>() / n,
        samples: per.len(),
    })
}
