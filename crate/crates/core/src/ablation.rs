//! Component ablations: retrain with one component switched off and
//! compare closed-loop scores on the same evaluation scenes.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::anchors::AnchorBank;
use crate::error::Result;
use crate::planner::{Ablation, NetConfig, PlannerNet};
use crate::scenario::Scene;
use crate::sim::{evaluate_log, run_batch, score_table, select_per_type, NetPlanner, ScoreTable, SimConfig};
use crate::train::{cap_per_type, evaluate, prepare_samples, train_samples, EvalReport, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub ablation: Ablation,
    /// Decoder expert parameter count.
    pub expert_params: usize,
    pub train_eval: EvalReport,
    pub scores: ScoreTable,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn composite(&self, variant: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.variant == variant)
            .and_then(|r| r.scores.overall.map(|m| m.composite))
    }

    /// Variants whose composite exceeds the full model's.
    pub fn ordering_violations(&self) -> Vec<String> {
        let Some(full) = self.composite("full") else {
            return Vec::new();
        };
        self.rows
            .iter()
            .filter(|r| r.variant != "full")
            .filter(|r| r.scores.overall.is_some_and(|m| m.composite > full))
            .map(|r| r.variant.clone())
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "variant,expert_params,train_loss,router_acc,train_ade,collisions,drivable,ttc,progress,speed,comfort,composite\n",
        );
        for r in &self.rows {
            let e = &r.train_eval;
            let m: Vec<String> = match &r.scores.overall {
                Some(m) => m.values().iter().map(|v| format!("{v:.6}")).collect(),
                None => vec![String::new(); 7],
            };
            let _ = writeln!(
                out,
                "{},{},{:.6},{:.6},{:.6},{}",
                r.variant,
                r.expert_params,
                e.loss.total,
                e.router_acc,
                e.ade,
                m.join(",")
            );
        }
        out
    }
}

/// Trains and evaluates one network per variant from the same seed.
pub fn ablate(
    train_scenes: &[Scene],
    eval_scenes: &[Scene],
    bank: &AnchorBank,
    net_cfg: &NetConfig,
    train_cfg: &TrainConfig,
    sim_cfg: &SimConfig,
    variants: &[Ablation],
    seed: u64,
) -> Result<AblationReport> {
    let used = cap_per_type(train_scenes, train_cfg.per_type_cap);
    let eval_sel = select_per_type(eval_scenes, sim_cfg.scenes_per_type);
    let mut rows = Vec::new();
    for &ab in variants {
        let cfg = net_cfg.clone().with_ablation(ab);
        let mut net = PlannerNet::new(cfg, seed)?;
        let samples = prepare_samples(&net, &used, bank, train_cfg)?;
        train_samples(&mut net, &samples, bank, train_cfg, None)?;
        let train_eval = evaluate(&net, &samples, bank, &train_cfg.weights)?;
        let planner = NetPlanner { net: &net, bank };
        let logs = run_batch(&eval_sel, &planner, sim_cfg)?;
        let runs: Vec<_> = logs
            .iter()
            .zip(&eval_sel)
            .map(|(l, (_, s))| (s.label.expect("selected by label"), evaluate_log(l, s, sim_cfg)))
            .collect();
        let expert_params = (0..net.cfg.expert_count())
            .flat_map(|e| net.expert_params(e))
            .map(|id| net.store.get(id).value.data().len())
            .sum();
        rows.push(AblationRow {
            variant: ab.name().to_string(),
            ablation: ab,
            expert_params,
            train_eval,
            scores: score_table(&runs),
        });
    }
    Ok(AblationReport { rows })
}

/// Full model followed by each single-switch ablation.
pub fn standard_variants() -> Vec<Ablation> {
    let mut v = vec![Ablation::default()];
    for s in ["emoe", "ssq", "iloss"] {
        v.push(Ablation::without(s).expect("known switch"));
    }
    v
}
