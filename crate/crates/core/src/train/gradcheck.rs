//! Finite-difference check of the whole network plus the total loss.
//!
//! The loss has kinks (L1 residuals at zero, the collision hinge at zero
//! penetration, heading wrap at ±π, and the argmax that picks the mode fed
//! to the prediction decoder). A perturbation that crosses one makes the
//! central difference meaningless, so the check scene is redrawn with a
//! fresh random ground-truth offset until every kink is at least
//! [`KINK_CLEARANCE`] away.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use emoe_nn::{grad_check, GradCheckConfig, GradCheckReport, Graph, Gradients, Objective, ParamStore};

use crate::anchors::{AnchorBank, BANK_FORMAT_VERSION};
use crate::error::{Error, Result};
use crate::interaction::{footprint_circles, DEFAULT_CONFLICT_MARGIN, DEFAULT_K_R};
use crate::planner::{NetConfig, PlannerNet, Routing};
use crate::scenario::{generate_scene, wrap_angle, Pose, ScenarioType, Scene, StaticKind, StaticObject, Extent};

use super::loss::{mode_states, prepare_sample, total_loss, LossWeights, OutputValues, Sample, SampleOptions, COLLISION_MARGIN};

/// Minimum distance of every loss kink from the evaluation point.
pub const KINK_CLEARANCE: f64 = 0.02;
const MAX_DRAWS: usize = 200;

struct PlannerObjective<'a> {
    net: &'a PlannerNet,
    sample: &'a Sample,
    bank: &'a AnchorBank,
    weights: LossWeights,
    seed: u64,
}

impl PlannerObjective<'_> {
    fn run(&self, params: &ParamStore, with_grad: bool) -> (f64, Gradients) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut g = Graph::new(params);
        let v = self
            .net
            .forward_graph(&mut g, &self.sample.features, self.bank, Routing::Forced(self.sample.label), true, &mut rng)
            .expect("forward on the check scene");
        let out = OutputValues {
            traj: g.value(v.traj),
            mode_logits: g.value(v.mode_logits).data(),
            router_logits: g.value(v.router_logits).data(),
            agent_pred: v.agent_pred.map(|p| g.value(p)),
        };
        let (loss, grads) = total_loss(&out, self.sample, &self.weights).expect("loss on the check scene");
        if !with_grad {
            return (loss.total, Gradients::empty(0));
        }
        let mut seeds = vec![
            (v.traj, grads.traj.as_slice()),
            (v.mode_logits, grads.mode_logits.as_slice()),
            (v.router_logits, grads.router_logits.as_slice()),
        ];
        if let (Some(p), Some(gp)) = (v.agent_pred, grads.agent_pred.as_ref()) {
            seeds.push((p, gp.as_slice()));
        }
        g.backward(&seeds);
        (loss.total, g.param_grads())
    }
}

impl Objective for PlannerObjective<'_> {
    fn value(&self, params: &ParamStore) -> f64 {
        self.run(params, false).0
    }

    fn value_and_grad(&self, params: &ParamStore) -> (f64, Gradients) {
        self.run(params, true)
    }
}

#[derive(Debug)]
pub struct GradCheckOutcome {
    pub report: GradCheckReport,
    /// Scene draws needed to clear every kink.
    pub draws: usize,
    pub label: ScenarioType,
}

/// Random anchor bank with `k` anchors per type.
fn random_bank(k: usize, rng: &mut ChaCha8Rng) -> AnchorBank {
    AnchorBank {
        version: BANK_FORMAT_VERSION,
        k,
        seed: 0,
        horizon: 0,
        counts: vec![k; ScenarioType::COUNT],
        g: (0..ScenarioType::COUNT)
            .map(|_| (0..k).map(|_| [rng.gen_range(-5.0..15.0), rng.gen_range(-8.0..8.0)]).collect())
            .collect(),
    }
}

/// Crops a generated scene to the network caps.
fn cropped_scene(cfg: &NetConfig, seed: u64) -> Result<Scene> {
    let ty = ScenarioType::ALL[(seed % ScenarioType::COUNT as u64) as usize];
    let mut s = generate_scene(seed, ty)?;
    s.agents.truncate(cfg.max_agents);
    s.statics.truncate(cfg.max_statics.saturating_sub(1));
    s.map.truncate(cfg.max_polylines);
    Ok(s)
}

/// Smallest distance of any loss kink from the current point, evaluated
/// with the stored parameters.
fn kink_distance(net: &PlannerNet, sample: &Sample, bank: &AnchorBank, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = Graph::new(&net.store);
    let v = net.forward_graph(&mut g, &sample.features, bank, Routing::Forced(sample.label), true, &mut rng)?;
    let tf = sample.gt.len();
    let pred = mode_states(g.value(v.traj), sample.target_mode, tf);
    let mut dist = f64::INFINITY;
    for (p, q) in pred.iter().zip(&sample.gt) {
        for c in 0..4 {
            let r = if c == 2 { wrap_angle(p[c] - q[c]) } else { p[c] - q[c] };
            dist = dist.min(r.abs());
        }
        dist = dist.min(std::f64::consts::PI - wrap_angle(p[2] - q[2]).abs());
    }
    if let Some(ap) = v.agent_pred {
        let ap = g.value(ap);
        for (i, gt) in sample.agent_gt.iter().enumerate() {
            let Some(gt) = gt else { continue };
            for t in 0..tf {
                for c in 0..2 {
                    dist = dist.min((ap.row(i)[c * tf + t] - gt[t][c]).abs());
                }
            }
        }
    }
    for (t, e) in pred.iter().enumerate() {
        let (ec, er) = footprint_circles(Pose::new(e[0], e[1], e[2]), sample.ego_extent);
        for o in &sample.obstacles {
            let (oc, or) = footprint_circles(o.poses[t.min(o.poses.len() - 1)], o.extent);
            for a in &ec {
                for b in &oc {
                    let pen = COLLISION_MARGIN - ((a[0] - b[0]).hypot(a[1] - b[1]) - er - or);
                    dist = dist.min(pen.abs());
                }
            }
        }
    }
    let mut logits = g.value(v.mode_logits).data().to_vec();
    logits.sort_by(|a, b| b.total_cmp(a));
    if logits.len() > 1 {
        dist = dist.min(logits[0] - logits[1]);
    }
    Ok(dist)
}

/// Builds a small network and scene, redraws until kink-free, then checks
/// every parameter entry.
pub fn gradcheck_planner(cfg: &NetConfig, seed: u64, gc: &GradCheckConfig) -> Result<GradCheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for draw in 1..=MAX_DRAWS {
        let net = PlannerNet::new(cfg.clone(), seed.wrapping_add(draw as u64))?;
        let bank = random_bank(cfg.anchors, &mut rng);
        let mut scene = cropped_scene(cfg, seed.wrapping_add(draw as u64))?;
        let opts = SampleOptions {
            k_r: DEFAULT_K_R,
            conflict_margin: DEFAULT_CONFLICT_MARGIN,
        };
        let probe = prepare_sample(&scene, &bank, cfg, opts)?;
        let fwd_seed = rng.gen();
        // Place an obstacle next to the target mode's plan so the collision
        // hinge is active, then shift the ground truth by a random offset.
        let mut g = Graph::new(&net.store);
        let mut frng = ChaCha8Rng::seed_from_u64(fwd_seed);
        let v = net.forward_graph(&mut g, &probe.features, &bank, Routing::Forced(probe.label), true, &mut frng)?;
        let plan = mode_states(g.value(v.traj), probe.target_mode, cfg.future_steps);
        let at = plan[cfg.future_steps / 2];
        let side = rng.gen_range(1.6..2.4);
        scene.statics.push(StaticObject {
            pose: Pose::new(at[0] + side * -at[2].sin(), at[1] + side * at[2].cos(), at[2]),
            extent: Extent::new(1.5, 1.0),
            kind: StaticKind::Obstacle,
        });
        let (dx, dy) = (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        if let Some(f) = scene.ego_future.as_mut() {
            for p in &mut f.points {
                p.x += dx;
                p.y += dy;
            }
        }
        let sample = prepare_sample(&scene, &bank, cfg, opts)?;
        if kink_distance(&net, &sample, &bank, fwd_seed)? < KINK_CLEARANCE {
            continue;
        }
        let obj = PlannerObjective {
            net: &net,
            sample: &sample,
            bank: &bank,
            weights: LossWeights::default(),
            seed: fwd_seed,
        };
        let mut store = net.store.clone();
        let report = grad_check(&mut store, &obj, gc).map_err(|e| Error::Invalid(e.to_string()))?;
        return Ok(GradCheckOutcome {
            report,
            draws: draw,
            label: sample.label,
        });
    }
    Err(Error::Invalid(format!("no kink-free check scene in {MAX_DRAWS} draws")))
}
