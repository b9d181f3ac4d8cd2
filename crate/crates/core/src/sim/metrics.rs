//! Closed-loop metrics. Every score is in `[0, 1]` and depends only on the
//! log and the scene.

use serde::{Deserialize, Serialize};

use crate::interaction::{box_corners, obb_overlap};
use crate::scenario::{wrap_angle, Extent, PolylineKind, Pose, Scene};

use super::{EventKind, SimConfig, SimEvent, SimLog};

/// Below this speed (m/s) the ego counts as stationary.
pub const STATIONARY_SPEED: f64 = 0.05;
/// Spacing (m) of footprint edge samples in the drivable check.
pub const EDGE_SAMPLE_SPACING: f64 = 0.5;
/// A speed-limited lane applies within this distance (m).
pub const SPEED_LANE_RADIUS: f64 = 3.0;
/// Step of the constant-velocity projection used for TTC (s).
pub const TTC_SAMPLE: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub collisions: f64,
    pub drivable: f64,
    pub ttc: f64,
    pub progress: f64,
    pub speed: f64,
    pub comfort: f64,
    pub composite: f64,
}

impl MetricReport {
    pub fn values(&self) -> [f64; 7] {
        [
            self.collisions,
            self.drivable,
            self.ttc,
            self.progress,
            self.speed,
            self.comfort,
            self.composite,
        ]
    }
}

fn pose(s: &[f64; 4]) -> Pose {
    Pose::new(s[0], s[1], s[2])
}

/// Collision events at every step with ego/agent or ego/static overlap.
/// Not at fault when the ego is stationary or the agent strikes it from
/// behind (agent centre behind the ego's centre, closing faster than the
/// ego along the ego's heading).
pub fn detect_events(log: &SimLog, scene: &Scene) -> Vec<SimEvent> {
    let mut events = Vec::new();
    for (k, e) in log.ego.iter().enumerate() {
        let ep = pose(e);
        let moving = e[3] > STATIONARY_SPEED;
        for a in &log.agents {
            let s = &a.states[k];
            if !obb_overlap(ep, log.ego_extent, pose(s), a.extent, 0.0) {
                continue;
            }
            let (lx, _) = ep.to_local(s[0], s[1]);
            let closing = s[3] * wrap_angle(s[2] - e[2]).cos() > e[3];
            let rear_strike = lx < 0.0 && closing;
            events.push(SimEvent {
                step: k,
                kind: EventKind::Collision,
                other: Some(a.id),
                at_fault: moving && !rear_strike,
            });
        }
        for (i, o) in scene.statics.iter().enumerate() {
            if obb_overlap(ep, log.ego_extent, o.pose, o.extent, 0.0) {
                events.push(SimEvent {
                    step: k,
                    kind: EventKind::StaticCollision,
                    other: Some(i as u64),
                    at_fault: moving,
                });
            }
        }
        if !footprint_drivable(ep, log.ego_extent, scene) {
            events.push(SimEvent {
                step: k,
                kind: EventKind::OffDrivable,
                other: None,
                at_fault: true,
            });
        }
    }
    events
}

/// 1 when no at-fault collision occurs, else 0.
pub fn at_fault_collisions(log: &SimLog) -> f64 {
    let any = log
        .events
        .iter()
        .any(|e| e.at_fault && matches!(e.kind, EventKind::Collision | EventKind::StaticCollision));
    if any {
        0.0
    } else {
        1.0
    }
}

fn on_segment(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> bool {
    crate::scenario::point_segment_distance(p[0], p[1], a, b) <= 1e-9
}

/// Closed polygon membership; points on the boundary are inside.
pub fn point_in_ring(p: [f64; 2], ring: &[[f64; 2]]) -> bool {
    let n = ring.len();
    let mut inside = false;
    for i in 0..n {
        let (a, b) = (ring[i], ring[(i + 1) % n]);
        if on_segment(p, a, b) {
            return true;
        }
        if (a[1] > p[1]) != (b[1] > p[1]) {
            let x = a[0] + (p[1] - a[1]) * (b[0] - a[0]) / (b[1] - a[1]);
            if p[0] < x {
                inside = !inside;
            }
        }
    }
    inside
}

/// Corners plus edge samples every [`EDGE_SAMPLE_SPACING`].
pub fn footprint_samples(p: Pose, extent: Extent) -> Vec<[f64; 2]> {
    let c = box_corners(p, extent);
    let mut out = Vec::new();
    for i in 0..4 {
        let (a, b) = (c[i], c[(i + 1) % 4]);
        let len = (b[0] - a[0]).hypot(b[1] - a[1]);
        let n = (len / EDGE_SAMPLE_SPACING).ceil().max(1.0) as usize;
        for j in 0..n {
            let t = j as f64 / n as f64;
            out.push([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]);
        }
    }
    out
}

/// Whether the footprint lies in the union of the drivable rings. A map
/// without drivable rings places no constraint.
pub fn footprint_drivable(p: Pose, extent: Extent, scene: &Scene) -> bool {
    let rings: Vec<&[[f64; 2]]> = scene
        .map
        .iter()
        .filter(|m| m.kind == PolylineKind::DrivableEdge)
        .map(|m| m.points.as_slice())
        .collect();
    if rings.is_empty() {
        return true;
    }
    footprint_samples(p, extent)
        .iter()
        .all(|q| rings.iter().any(|r| point_in_ring(*q, r)))
}

/// 1 when the footprint never leaves the drivable area, else 0.
pub fn drivable_compliance(log: &SimLog, scene: &Scene) -> f64 {
    let off = log
        .ego
        .iter()
        .any(|e| !footprint_drivable(pose(e), log.ego_extent, scene));
    if off {
        0.0
    } else {
        1.0
    }
}

fn advance(s: &[f64; 4], t: f64) -> Pose {
    Pose::new(s[0] + s[3] * s[2].cos() * t, s[1] + s[3] * s[2].sin() * t, s[2])
}

/// First contact time in `[0, bound]` of two boxes moving at constant
/// speed and heading, if any.
pub fn contact_time(a: &[f64; 4], ea: Extent, b: &[f64; 4], eb: Extent, bound: f64) -> Option<f64> {
    let hit = |t: f64| obb_overlap(advance(a, t), ea, advance(b, t), eb, 0.0);
    if hit(0.0) {
        return Some(0.0);
    }
    let n = (bound / TTC_SAMPLE).ceil() as usize;
    let mut prev = 0.0;
    for i in 1..=n {
        let t = (i as f64 * TTC_SAMPLE).min(bound);
        if hit(t) {
            let (mut lo, mut hi) = (prev, t);
            for _ in 0..40 {
                let mid = 0.5 * (lo + hi);
                if hit(mid) {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            return Some(hi);
        }
        prev = t;
    }
    None
}

/// 1 when no step has a projected contact sooner than `bound`, else 0.
/// Agents entirely behind the ego's rear bumper are ignored.
pub fn ttc_within_bound(log: &SimLog, bound: f64) -> f64 {
    for (k, e) in log.ego.iter().enumerate() {
        let ep = pose(e);
        for a in &log.agents {
            let s = &a.states[k];
            let (lx, _) = ep.to_local(s[0], s[1]);
            if lx + a.extent.length.max(a.extent.width) / 2.0 < -log.ego_extent.length / 2.0 {
                continue;
            }
            if let Some(t) = contact_time(e, log.ego_extent, s, a.extent, bound) {
                if t < bound {
                    return 0.0;
                }
            }
        }
    }
    1.0
}

/// Arc length of the expert route (ego start plus logged future over the
/// horizon) covered by the ego, clipped to `[0, 1]`. The ego is projected
/// onto the route with a forward-moving window so self-overlapping routes
/// are not short-cut.
pub fn progress(log: &SimLog, scene: &Scene) -> f64 {
    let n = log.steps();
    let Some(fut) = scene.ego_future.as_ref() else {
        return 0.0;
    };
    let mut route = vec![[scene.ego.pose.x, scene.ego.pose.y]];
    route.extend(fut.points.iter().take(n).map(|p| [p.x, p.y]));
    let mut arc = vec![0.0];
    for w in route.windows(2) {
        arc.push(arc.last().unwrap() + (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]));
    }
    let total = *arc.last().unwrap();
    if total <= 1e-9 {
        return 1.0;
    }
    let mut s = 0.0;
    for e in &log.ego[1..] {
        let lo = s - 2.0;
        let hi = s + e[3] * log.dt + 10.0;
        let mut best = (f64::INFINITY, s);
        for i in 0..route.len() - 1 {
            if arc[i + 1] < lo || arc[i] > hi {
                continue;
            }
            let (a, b) = (route[i], route[i + 1]);
            let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
            let l2 = dx * dx + dy * dy;
            let t = if l2 > 0.0 {
                (((e[0] - a[0]) * dx + (e[1] - a[1]) * dy) / l2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let d = (a[0] + t * dx - e[0]).hypot(a[1] + t * dy - e[1]);
            if d < best.0 {
                best = (d, arc[i] + t * l2.sqrt());
            }
        }
        s = best.1;
    }
    (s / total).clamp(0.0, 1.0)
}

/// `1 - mean_t min(1, max(0, v - limit) / limit)` over the steps where a
/// speed-limited lane lies within [`SPEED_LANE_RADIUS`]; the nearest such
/// lane sets the limit.
pub fn speed_compliance(log: &SimLog, scene: &Scene) -> f64 {
    let lanes: Vec<_> = scene
        .map
        .iter()
        .filter(|m| m.kind == PolylineKind::LaneCenter && m.speed_limit.is_some())
        .collect();
    let n = log.ego.len() as f64;
    let mut over = 0.0;
    for e in &log.ego {
        let nearest = lanes
            .iter()
            .map(|m| (m.distance_to(e[0], e[1]), m.speed_limit.unwrap()))
            .filter(|(d, _)| *d <= SPEED_LANE_RADIUS)
            .min_by(|a, b| a.0.total_cmp(&b.0));
        if let Some((_, limit)) = nearest {
            over += ((e[3] - limit).max(0.0) / limit).min(1.0);
        }
    }
    (1.0 - over / n).clamp(0.0, 1.0)
}

/// Finite-difference kinematics: longitudinal and lateral acceleration,
/// jerk, yaw rate and yaw acceleration.
pub struct Kinematics {
    pub lon_accel: Vec<f64>,
    pub lat_accel: Vec<f64>,
    pub jerk: Vec<f64>,
    pub yaw_rate: Vec<f64>,
    pub yaw_accel: Vec<f64>,
}

pub fn kinematics(states: &[[f64; 4]], dt: f64) -> Kinematics {
    let diff = |v: &[f64]| v.windows(2).map(|w| (w[1] - w[0]) / dt).collect::<Vec<_>>();
    let speed: Vec<f64> = states.iter().map(|s| s[3]).collect();
    let lon_accel = diff(&speed);
    let yaw_rate: Vec<f64> = states.windows(2).map(|w| wrap_angle(w[1][2] - w[0][2]) / dt).collect();
    let lat_accel = yaw_rate
        .iter()
        .zip(states.windows(2))
        .map(|(r, w)| r * 0.5 * (w[0][3] + w[1][3]))
        .collect();
    Kinematics {
        jerk: diff(&lon_accel),
        yaw_accel: diff(&yaw_rate),
        lon_accel,
        lat_accel,
        yaw_rate,
    }
}

/// 1 when every kinematic quantity stays within its threshold, else 0.
pub fn comfort(log: &SimLog, cfg: &SimConfig) -> f64 {
    let k = kinematics(&log.ego, log.dt);
    let within = |v: &[f64], max: f64| v.iter().all(|x| x.abs() <= max);
    let ok = within(&k.lon_accel, cfg.max_lon_accel)
        && within(&k.lat_accel, cfg.max_lat_accel)
        && within(&k.jerk, cfg.max_jerk)
        && within(&k.yaw_rate, cfg.max_yaw_rate)
        && within(&k.yaw_accel, cfg.max_yaw_accel);
    if ok {
        1.0
    } else {
        0.0
    }
}

/// All metrics of one run. The composite is 0 after an at-fault
/// collision, otherwise the weighted mean of TTC, progress, speed and
/// comfort.
pub fn evaluate_log(log: &SimLog, scene: &Scene, cfg: &SimConfig) -> MetricReport {
    let collisions = at_fault_collisions(log);
    let drivable = drivable_compliance(log, scene);
    let ttc = ttc_within_bound(log, cfg.ttc_bound_s);
    let prog = progress(log, scene);
    let speed = speed_compliance(log, scene);
    let comf = comfort(log, cfg);
    let w = cfg.composite_weights;
    let weighted = (w[0] * ttc + w[1] * prog + w[2] * speed + w[3] * comf) / w.iter().sum::<f64>();
    MetricReport {
        collisions,
        drivable,
        ttc,
        progress: prog,
        speed,
        comfort: comf,
        composite: collisions * weighted,
    }
}
