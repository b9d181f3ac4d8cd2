//! Training targets and the five-term loss.
//!
//! Every term is computed on forward values and returns its gradient with
//! respect to the network outputs; the graph backward pass takes it from
//! there.

use emoe_nn::{cross_entropy, Tensor};
use serde::{Deserialize, Serialize};

use crate::anchors::AnchorBank;
use crate::error::{Error, Result};
use crate::interaction::{
    extract_intervals, footprint_circles, temporal_weights, weighted_l1, InteractionIntervals, State4, WeightVector,
};
use crate::planner::{extract_features, local_future, nearest_anchor, NetConfig, SceneFeatures};
use crate::scenario::{Extent, Pose, ScenarioType, Scene};

/// Clearance (m) below which the collision hinge becomes active.
pub const COLLISION_MARGIN: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub reg: f64,
    pub cls: f64,
    pub col: f64,
    pub pred: f64,
    pub router: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            reg: 1.0,
            cls: 0.3,
            col: 1.0,
            pred: 0.5,
            router: 0.1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let w = [self.reg, self.cls, self.col, self.pred, self.router];
        if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Config(format!("loss weights must be finite and non-negative: {w:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub total: f64,
    pub reg: f64,
    pub cls: f64,
    pub col: f64,
    pub pred: f64,
    pub router: f64,
    pub weights: LossWeights,
}

impl LossReport {
    fn assemble(reg: f64, cls: f64, col: f64, pred: f64, router: f64, w: LossWeights) -> Self {
        Self {
            total: w.reg * reg + w.cls * cls + w.col * col + w.pred * pred + w.router * router,
            reg,
            cls,
            col,
            pred,
            router,
            weights: w,
        }
    }

    /// Component-wise mean; weights are taken from the first report.
    pub fn mean(reports: &[LossReport]) -> LossReport {
        let n = reports.len().max(1) as f64;
        let sum = |f: fn(&LossReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
        let w = reports.first().map(|r| r.weights).unwrap_or_default();
        LossReport::assemble(
            sum(|r| r.reg),
            sum(|r| r.cls),
            sum(|r| r.col),
            sum(|r| r.pred),
            sum(|r| r.router),
            w,
        )
    }
}

/// Something the ego must keep clear of, in the ego frame.
#[derive(Clone, Debug)]
pub struct Obstacle {
    pub extent: Extent,
    /// One pose per future step, or a single pose for static objects.
    pub poses: Vec<Pose>,
}

impl Obstacle {
    fn at(&self, t: usize) -> Pose {
        self.poses[t.min(self.poses.len() - 1)]
    }
}

/// Everything the loss needs for one scene, precomputed once.
#[derive(Clone, Debug)]
pub struct Sample {
    pub features: SceneFeatures,
    pub label: ScenarioType,
    /// Ego-frame ground truth, `T_f` rows.
    pub gt: Vec<State4>,
    pub weights: WeightVector,
    pub intervals: InteractionIntervals,
    /// Anchor of the label's slice nearest the ground-truth endpoint.
    pub target_mode: usize,
    /// Per agent, in feature order; `None` when the logged future is too short.
    pub agent_gt: Vec<Option<Vec<[f64; 2]>>>,
    pub obstacles: Vec<Obstacle>,
    pub ego_extent: Extent,
}

#[derive(Clone, Copy, Debug)]
pub struct SampleOptions {
    pub k_r: f64,
    pub conflict_margin: f64,
}

pub fn prepare_sample(scene: &Scene, bank: &AnchorBank, cfg: &NetConfig, opts: SampleOptions) -> Result<Sample> {
    let label = scene
        .label
        .ok_or_else(|| Error::Invalid("training scene has no scenario label".into()))?;
    let tf = cfg.future_steps;
    let features = extract_features(scene, cfg)?;
    let gt = local_future(scene, tf)?;
    let intervals = extract_intervals(scene.future_gt()?, scene.ego.extent, &scene.agents, opts.conflict_margin, tf)?;
    let weights = if cfg.ablation.iloss {
        temporal_weights(tf, opts.k_r, &intervals)?
    } else {
        WeightVector::uniform(tf)
    };
    let end = gt[tf - 1];
    let target_mode = nearest_anchor(bank.slice(label), [end[0], end[1]]);
    let frame = scene.ego.pose.pose();
    let mut agent_gt = Vec::new();
    let mut obstacles = Vec::new();
    for a in &scene.agents {
        match a.future.as_ref().filter(|f| f.len() >= tf) {
            Some(f) => {
                let poses: Vec<Pose> = f.points[..tf].iter().map(|p| frame.pose_to_local(p.pose())).collect();
                agent_gt.push(Some(poses.iter().map(|p| [p.x, p.y]).collect()));
                obstacles.push(Obstacle {
                    extent: a.extent,
                    poses,
                });
            }
            None => agent_gt.push(None),
        }
    }
    for s in &scene.statics {
        obstacles.push(Obstacle {
            extent: s.extent,
            poses: vec![frame.pose_to_local(s.pose)],
        });
    }
    Ok(Sample {
        features,
        label,
        gt,
        weights,
        intervals,
        target_mode,
        agent_gt,
        obstacles,
        ego_extent: scene.ego.extent,
    })
}

/// Network outputs of one scene as plain values.
pub struct OutputValues<'a> {
    /// `K_a x 4T_f`, blocks `[x | y | heading | speed]`.
    pub traj: &'a Tensor,
    pub mode_logits: &'a [f64],
    pub router_logits: &'a [f64],
    /// `N x 2T_f`, blocks `[x | y]`.
    pub agent_pred: Option<&'a Tensor>,
}

/// Loss gradients with respect to [`OutputValues`], same layouts.
#[derive(Clone, Debug)]
pub struct OutputGrads {
    pub traj: Vec<f64>,
    pub mode_logits: Vec<f64>,
    pub router_logits: Vec<f64>,
    pub agent_pred: Option<Vec<f64>>,
}

/// One mode's trajectory as `T_f` states.
pub fn mode_states(traj: &Tensor, mode: usize, tf: usize) -> Vec<State4> {
    let r = traj.row(mode);
    (0..tf).map(|t| [r[t], r[tf + t], r[2 * tf + t], r[3 * tf + t]]).collect()
}

/// Footprint-circle hinge: for every step, obstacle and circle pair,
/// `max(0, margin - (|c_e - c_o| - r_e - r_o))`, summed and divided by `T`.
/// Returns the loss and its gradient w.r.t. the ego `[x, y, heading, v]`.
pub fn collision_loss(ego: &[State4], ego_extent: Extent, obstacles: &[Obstacle], margin: f64) -> (f64, Vec<State4>) {
    let tf = ego.len();
    let mut grad = vec![[0.0; 4]; tf];
    if tf == 0 {
        return (0.0, grad);
    }
    let mut loss = 0.0;
    let step = ego_extent.length / 3.0;
    let offsets = [-step, 0.0, step];
    for (t, e) in ego.iter().enumerate() {
        let pose = Pose::new(e[0], e[1], e[2]);
        let (ec, er) = footprint_circles(pose, ego_extent);
        let (sh, ch) = e[2].sin_cos();
        for o in obstacles {
            let (oc, or) = footprint_circles(o.at(t), o.extent);
            let reach = step + er + o.extent.length / 3.0 + or + margin;
            if (o.at(t).x - e[0]).hypot(o.at(t).y - e[1]) > reach {
                continue;
            }
            for (i, c) in ec.iter().enumerate() {
                for q in &oc {
                    let (dx, dy) = (c[0] - q[0], c[1] - q[1]);
                    let d = dx.hypot(dy);
                    let pen = margin - (d - er - or);
                    if pen <= 0.0 {
                        continue;
                    }
                    loss += pen;
                    if d > 0.0 {
                        // d pen / d c = -(c - q) / d
                        let (gx, gy) = (-dx / d, -dy / d);
                        grad[t][0] += gx;
                        grad[t][1] += gy;
                        grad[t][2] += gx * (-offsets[i] * sh) + gy * (offsets[i] * ch);
                    }
                }
            }
        }
    }
    let n = tf as f64;
    grad.iter_mut().flatten().for_each(|g| *g /= n);
    (loss / n, grad)
}

/// Mean absolute position error over agents with ground truth.
pub fn prediction_loss(pred: &Tensor, agent_gt: &[Option<Vec<[f64; 2]>>], tf: usize) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; pred.data().len()];
    let valid = agent_gt.iter().filter(|g| g.is_some()).count();
    if valid == 0 {
        return (0.0, grad);
    }
    let norm = (valid * 2 * tf) as f64;
    let cols = 2 * tf;
    let mut loss = 0.0;
    for (i, gt) in agent_gt.iter().enumerate() {
        let Some(gt) = gt else { continue };
        let row = pred.row(i);
        for t in 0..tf {
            for c in 0..2 {
                let j = c * tf + t;
                let r = row[j] - gt[t][c];
                loss += r.abs();
                grad[i * cols + j] = r.signum() * (r != 0.0) as u8 as f64 / norm;
            }
        }
    }
    (loss / norm, grad)
}

/// All five terms and their output gradients.
pub fn total_loss(out: &OutputValues, sample: &Sample, w: &LossWeights) -> Result<(LossReport, OutputGrads)> {
    let tf = sample.gt.len();
    let cols = out.traj.cols();
    if cols != 4 * tf {
        return Err(Error::Horizon(format!("trajectory has {} columns, expected {}", cols, 4 * tf)));
    }
    let k = sample.target_mode;
    let pred = mode_states(out.traj, k, tf);
    let (reg, g_reg) = weighted_l1(&pred, &sample.gt, &sample.weights.w)?;
    let (col, g_col) = collision_loss(&pred, sample.ego_extent, &sample.obstacles, COLLISION_MARGIN);
    let (cls, g_cls) = cross_entropy(out.mode_logits, k);
    let (router, g_router) = cross_entropy(out.router_logits, sample.label.index());
    let (pred_l, g_pred) = match out.agent_pred {
        Some(p) => {
            let (l, g) = prediction_loss(p, &sample.agent_gt, tf);
            (l, Some(g))
        }
        None => (0.0, None),
    };

    let mut traj = vec![0.0; out.traj.data().len()];
    let row = &mut traj[k * cols..(k + 1) * cols];
    for t in 0..tf {
        for c in 0..4 {
            row[c * tf + t] = w.reg * g_reg[t][c] + w.col * g_col[t][c];
        }
    }
    let scale = |g: Vec<f64>, s: f64| g.into_iter().map(|v| v * s).collect::<Vec<_>>();
    let report = LossReport::assemble(reg, cls, col, pred_l, router, *w);
    Ok((
        report,
        OutputGrads {
            traj,
            mode_logits: scale(g_cls, w.cls),
            router_logits: scale(g_router, w.router),
            agent_pred: g_pred.map(|g| scale(g, w.pred)),
        },
    ))
}
