//! Non-reactive closed-loop simulation: agents replay their logged futures,
//! the ego follows the latest plan with a kinematic unicycle model and
//! replans at a fixed rate.

pub mod metrics;
pub mod report;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::anchors::AnchorBank;
use crate::error::{Error, Result};
use crate::planner::PlannerNet;
use crate::scenario::{wrap_angle, Agent, AgentKind, Extent, ScenarioType, Scene, TrajPoint, Trajectory, DT, HISTORY_STEPS};

pub use metrics::{
    at_fault_collisions, comfort, drivable_compliance, evaluate_log, progress, speed_compliance, ttc_within_bound,
    MetricReport,
};
pub use report::{score_table, ScoreRow, ScoreTable};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub horizon_s: f64,
    pub replan_hz: f64,
    pub ttc_bound_s: f64,
    pub max_lon_accel: f64,
    pub max_lat_accel: f64,
    pub max_jerk: f64,
    pub max_yaw_rate: f64,
    pub max_yaw_accel: f64,
    /// Composite weights for TTC, progress, speed and comfort.
    pub composite_weights: [f64; 4],
    /// Scenes simulated per scenario type (in file order).
    pub scenes_per_type: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            horizon_s: 15.0,
            replan_hz: 1.0,
            ttc_bound_s: 0.95,
            max_lon_accel: 4.0,
            max_lat_accel: 4.0,
            max_jerk: 8.0,
            max_yaw_rate: 0.95,
            max_yaw_accel: 1.9,
            composite_weights: [5.0, 5.0, 4.0, 2.0],
            scenes_per_type: 20,
        }
    }
}

impl SimConfig {
    pub fn steps(&self) -> usize {
        (self.horizon_s / DT).round() as usize
    }

    /// Simulation steps between replans.
    pub fn replan_every(&self) -> usize {
        ((1.0 / self.replan_hz) / DT).round().max(1.0) as usize
    }

    pub fn validate(&self) -> Result<()> {
        let pos = [
            self.horizon_s,
            self.replan_hz,
            self.ttc_bound_s,
            self.max_lon_accel,
            self.max_lat_accel,
            self.max_jerk,
            self.max_yaw_rate,
            self.max_yaw_accel,
        ];
        if pos.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Config("sim horizon, rate and thresholds must be positive".into()));
        }
        if self.composite_weights.iter().any(|w| !(w.is_finite() && *w >= 0.0))
            || self.composite_weights.iter().sum::<f64>() <= 0.0
        {
            return Err(Error::Config("composite weights must be non-negative with a positive sum".into()));
        }
        Ok(())
    }
}

/// Produces a world-frame plan from a world-frame snapshot. `ego_future`
/// of the snapshot holds the logged expert future from the current step.
pub trait Planner: Sync {
    fn plan(&self, snapshot: &Scene) -> Result<Trajectory>;
}

/// The learned planner.
pub struct NetPlanner<'a> {
    pub net: &'a PlannerNet,
    pub bank: &'a AnchorBank,
}

impl Planner for NetPlanner<'_> {
    fn plan(&self, snapshot: &Scene) -> Result<Trajectory> {
        let local = self.net.plan(snapshot, self.bank)?;
        let frame = snapshot.ego.pose.pose();
        let points = local
            .points
            .iter()
            .map(|p| {
                let q = frame.pose_to_world(p.pose());
                TrajPoint::new(q.x, q.y, q.heading, p.speed)
            })
            .collect();
        Ok(Trajectory::new(points, local.dt))
    }
}

/// Replays the logged expert future.
pub struct ReplayPlanner;

impl Planner for ReplayPlanner {
    fn plan(&self, snapshot: &Scene) -> Result<Trajectory> {
        Ok(snapshot.future_gt()?.clone())
    }
}

/// Holds the current pose at zero speed.
pub struct StationaryPlanner;

impl Planner for StationaryPlanner {
    fn plan(&self, snapshot: &Scene) -> Result<Trajectory> {
        let p = snapshot.ego.pose;
        Ok(Trajectory::new(vec![TrajPoint::new(p.x, p.y, p.heading, 0.0); 10], DT))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentTrack {
    pub id: u64,
    pub kind: AgentKind,
    pub extent: Extent,
    /// `[x, y, heading, speed]` per simulation step.
    pub states: Vec<[f64; 4]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanRecord {
    pub step: usize,
    pub points: Vec<[f64; 4]>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Collision,
    StaticCollision,
    OffDrivable,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimEvent {
    pub step: usize,
    pub kind: EventKind,
    /// Agent id for agent collisions, static index for static collisions.
    pub other: Option<u64>,
    pub at_fault: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimLog {
    pub scene_id: usize,
    pub label: Option<ScenarioType>,
    pub dt: f64,
    pub ego_extent: Extent,
    /// `[x, y, heading, speed]` for steps `0..=N`.
    pub ego: Vec<[f64; 4]>,
    pub agents: Vec<AgentTrack>,
    pub plans: Vec<PlanRecord>,
    pub events: Vec<SimEvent>,
}

impl SimLog {
    pub fn steps(&self) -> usize {
        self.ego.len().saturating_sub(1)
    }
}

/// Agent state at simulation step `k` (0 is the current state).
fn replay_state(a: &Agent, k: usize) -> Option<TrajPoint> {
    if k == 0 {
        return Some(*a.current());
    }
    a.future.as_ref()?.points.get(k - 1).copied()
}

/// World-frame scene at step `k` with the ego at `ego`.
pub fn snapshot(scene: &Scene, k: usize, ego: TrajPoint, accel: f64, steering: f64) -> Scene {
    let mut s = scene.clone();
    s.ego.pose = ego;
    s.ego.acceleration = accel;
    s.ego.steering = steering;
    for a in &mut s.agents {
        let mut track: Vec<TrajPoint> = a.history.points.clone();
        if let Some(f) = &a.future {
            track.extend_from_slice(&f.points);
        }
        let end = (HISTORY_STEPS + k).min(track.len());
        let start = end.saturating_sub(HISTORY_STEPS);
        a.history = Trajectory::new(track[start..end].to_vec(), a.history.dt);
        a.future = (end < track.len()).then(|| Trajectory::new(track[end..].to_vec(), a.history.dt));
    }
    s.ego_future = scene.ego_future.as_ref().and_then(|f| {
        (k < f.len()).then(|| Trajectory::new(f.points[k..].to_vec(), f.dt))
    });
    s
}

/// Pure-pursuit steering and time-indexed speed tracking on a unicycle.
struct Follower {
    path: Vec<[f64; 4]>,
    /// Cumulative arc length of `path`.
    arc: Vec<f64>,
}

const WHEELBASE: f64 = 2.9;
const MAX_CURVATURE: f64 = 0.25;
const ACCEL_RANGE: (f64, f64) = (-8.0, 4.0);
/// First-order lag (s) between commanded and applied acceleration.
const ACCEL_LAG: f64 = 0.3;

impl Follower {
    fn new(start: TrajPoint, plan: &Trajectory) -> Self {
        let mut path = vec![start.as_array()];
        path.extend(plan.points.iter().map(|p| p.as_array()));
        let mut arc = vec![0.0];
        for w in path.windows(2) {
            let d = (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]);
            arc.push(arc.last().unwrap() + d);
        }
        Self { path, arc }
    }

    /// Arc coordinate of the closest point on the path to `(x, y)`.
    fn project(&self, x: f64, y: f64) -> f64 {
        let mut best = (f64::INFINITY, 0.0);
        for (i, w) in self.path.windows(2).enumerate() {
            let (dx, dy) = (w[1][0] - w[0][0], w[1][1] - w[0][1]);
            let l2 = dx * dx + dy * dy;
            let t = if l2 > 0.0 {
                (((x - w[0][0]) * dx + (y - w[0][1]) * dy) / l2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let d = (w[0][0] + t * dx - x).hypot(w[0][1] + t * dy - y);
            if d < best.0 {
                best = (d, self.arc[i] + t * l2.sqrt());
            }
        }
        best.1
    }

    fn point_at(&self, s: f64) -> [f64; 2] {
        let n = self.path.len();
        if n == 1 || s <= 0.0 {
            return [self.path[0][0], self.path[0][1]];
        }
        for i in 0..n - 1 {
            if s <= self.arc[i + 1] {
                let seg = self.arc[i + 1] - self.arc[i];
                let t = if seg > 0.0 { (s - self.arc[i]) / seg } else { 0.0 };
                let (a, b) = (self.path[i], self.path[i + 1]);
                return [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])];
            }
        }
        // Extend straight past the end along the final heading.
        let last = self.path[n - 1];
        let extra = s - self.arc[n - 1];
        [last[0] + extra * last[2].cos(), last[1] + extra * last[2].sin()]
    }

    /// Controls `(accel, curvature)` at plan index `j` (the path point the
    /// ego should reach at the end of this step).
    fn control(&self, ego: [f64; 4], j: usize) -> (f64, f64) {
        let [x, y, h, v] = ego;
        let j = j.min(self.path.len() - 1);
        let s_ego = self.project(x, y);
        let v_ref = self.path[j][3];
        let v_prev = self.path[j.saturating_sub(1)][3];
        let along = self.arc[j] - s_ego - v * DT;
        let v_cmd = (v_ref + 0.8 * along).max(0.0);
        let a_ff = (v_ref - v_prev) / DT;
        let accel = (a_ff + 2.0 * (v_cmd - v)).clamp(ACCEL_RANGE.0, ACCEL_RANGE.1);
        let ld = (0.6 * v).clamp(2.0, 10.0);
        let target = self.point_at(s_ego + ld);
        let (dx, dy) = (target[0] - x, target[1] - y);
        let dist = dx.hypot(dy);
        let curvature = if dist > 1e-6 {
            let alpha = wrap_angle(dy.atan2(dx) - h);
            (2.0 * alpha.sin() / dist).clamp(-MAX_CURVATURE, MAX_CURVATURE)
        } else {
            0.0
        };
        (accel, curvature)
    }
}

/// Runs one scene. The scene is in its logged (world) frame; every agent's
/// replay and the ego's logged future must cover the horizon.
pub fn run_closed_loop(scene: &Scene, scene_id: usize, planner: &dyn Planner, cfg: &SimConfig) -> Result<SimLog> {
    cfg.validate()?;
    let n = cfg.steps();
    for a in &scene.agents {
        let have = a.future.as_ref().map_or(0, |f| f.len());
        if have < n {
            return Err(Error::Horizon(format!(
                "agent {} replays {have} steps, simulation needs {n}",
                a.id
            )));
        }
    }
    let logged = scene.future_gt()?.len();
    if logged < n {
        return Err(Error::Horizon(format!(
            "ego future covers {logged} steps, simulation needs {n}"
        )));
    }
    let every = cfg.replan_every();
    let mut ego = scene.ego.pose.as_array();
    let mut accel = scene.ego.acceleration;
    let mut curvature = (scene.ego.steering.tan() / WHEELBASE).clamp(-MAX_CURVATURE, MAX_CURVATURE);
    let mut states = vec![ego];
    let mut plans = Vec::new();
    let mut follower = None;
    let mut plan_start = 0;
    for k in 0..n {
        if k % every == 0 {
            let cur = TrajPoint::new(ego[0], ego[1], ego[2], ego[3]);
            let snap = snapshot(scene, k, cur, accel, (WHEELBASE * curvature).atan());
            let plan = planner.plan(&snap)?;
            if plan.is_empty() || plan.points.iter().any(|p| !p.is_valid()) {
                return Err(Error::NonFinite(format!("plan at step {k}")));
            }
            plans.push(PlanRecord {
                step: k,
                points: plan.points.iter().map(|p| p.as_array()).collect(),
            });
            follower = Some(Follower::new(cur, &plan));
            plan_start = k;
        }
        let f = follower.as_ref().expect("planned at step 0");
        let (a_cmd, kappa) = f.control(ego, k - plan_start + 1);
        accel += (a_cmd - accel) * (DT / ACCEL_LAG);
        let a = accel;
        curvature = kappa;
        let [x, y, h, v] = ego;
        let v_next = (v + a * DT).max(0.0);
        let v_mid = 0.5 * (v + v_next);
        let h_next = wrap_angle(h + v_mid * kappa * DT);
        let h_mid = h + 0.5 * v_mid * kappa * DT;
        ego = [x + v_mid * h_mid.cos() * DT, y + v_mid * h_mid.sin() * DT, h_next, v_next];
        states.push(ego);
    }
    let agents = scene
        .agents
        .iter()
        .map(|a| AgentTrack {
            id: a.id,
            kind: a.kind,
            extent: a.extent,
            states: (0..=n).map(|k| replay_state(a, k).expect("checked above").as_array()).collect(),
        })
        .collect();
    let mut log = SimLog {
        scene_id,
        label: scene.label,
        dt: DT,
        ego_extent: scene.ego.extent,
        ego: states,
        agents,
        plans,
        events: Vec::new(),
    };
    log.events = metrics::detect_events(&log, scene);
    Ok(log)
}

/// The first `per_type` scenes of each type, as `(scene id, scene)`.
pub fn select_per_type(scenes: &[Scene], per_type: usize) -> Vec<(usize, &Scene)> {
    let mut seen = [0usize; ScenarioType::COUNT];
    scenes
        .iter()
        .enumerate()
        .filter(|(_, s)| match s.label {
            Some(t) if seen[t.index()] < per_type => {
                seen[t.index()] += 1;
                true
            }
            _ => false,
        })
        .collect()
}

/// Simulates scenes in parallel; logs come back sorted by scene id.
pub fn run_batch(scenes: &[(usize, &Scene)], planner: &dyn Planner, cfg: &SimConfig) -> Result<Vec<SimLog>> {
    let mut logs = scenes
        .par_iter()
        .map(|(id, s)| run_closed_loop(s, *id, planner, cfg))
        .collect::<Result<Vec<_>>>()?;
    logs.sort_by_key(|l| l.scene_id);
    Ok(logs)
}
