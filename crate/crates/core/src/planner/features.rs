//! Fixed-width input features, expressed relative to the current ego pose.

use emoe_nn::Tensor;

use crate::error::{Error, Result};
use crate::scenario::{AgentKind, PolylineKind, Pose, RoadZone, Scene, StaticKind, TrajPoint};

use super::config::NetConfig;

/// `[x, y, cos h, sin h, v, a, steer, L, W]`
pub const EGO_FEATURES: usize = 9;
/// Speed, acceleration and steering: the channels hit by state dropout.
pub const EGO_KINEMATIC: [usize; 3] = [4, 5, 6];
/// Per history step: `[x, y, cos h, sin h, vx, vy, L, W, vehicle, pedestrian]`
pub const AGENT_FEATURES: usize = 10;
/// `[x, y, cos h, sin h, L, W, obstacle, barrier, cone]`
pub const STATIC_FEATURES: usize = 9;
/// Per point: `[x, y, dx, dy, on_route, limit, has_limit, kind(4), zone(5)]`
pub const MAP_FEATURES: usize = 16;

/// Map and static coordinates are divided by this (m).
pub const POSITION_NORM: f64 = 50.0;

#[derive(Clone, Debug)]
pub struct AgentFeatures {
    pub id: u64,
    /// `T_h x AGENT_FEATURES`, raw metres (the Fourier embedding handles scale).
    pub history: Tensor,
    /// Current position in the ego frame.
    pub current: [f64; 2],
}

#[derive(Clone, Debug)]
pub struct SceneFeatures {
    pub ego: Vec<f64>,
    pub agents: Vec<AgentFeatures>,
    pub statics: Vec<Vec<f64>>,
    /// Each `L_p x MAP_FEATURES`.
    pub polylines: Vec<Tensor>,
}

fn cap(what: &'static str, have: usize, cap: usize) -> Result<()> {
    if have > cap {
        return Err(Error::CapOverflow {
            what,
            have,
            cap,
        });
    }
    Ok(())
}

fn local(frame: &Pose, p: &TrajPoint) -> TrajPoint {
    let q = frame.pose_to_local(p.pose());
    TrajPoint {
        x: q.x,
        y: q.y,
        heading: q.heading,
        speed: p.speed,
    }
}

/// Ground-truth ego future as `[x, y, heading, speed]` rows in the ego frame.
pub fn local_future(scene: &Scene, steps: usize) -> Result<Vec<[f64; 4]>> {
    let fut = scene.future_gt()?;
    if fut.len() < steps {
        return Err(Error::Horizon(format!(
            "ego future has {} points, need {steps}",
            fut.len()
        )));
    }
    let frame = scene.ego.pose.pose();
    Ok(fut.points[..steps].iter().map(|p| local(&frame, p).as_array()).collect())
}

pub fn extract_features(scene: &Scene, cfg: &NetConfig) -> Result<SceneFeatures> {
    cap("agents", scene.agents.len(), cfg.max_agents)?;
    cap("static objects", scene.statics.len(), cfg.max_statics)?;
    cap("map polylines", scene.map.len(), cfg.max_polylines)?;
    let frame = scene.ego.pose.pose();
    let e = &scene.ego;
    let ego = vec![
        0.0,
        0.0,
        1.0,
        0.0,
        e.pose.speed / 10.0,
        e.acceleration / 4.0,
        e.steering,
        e.extent.length / 5.0,
        e.extent.width / 5.0,
    ];

    let agents = scene
        .agents
        .iter()
        .map(|a| {
            let th = cfg.history_steps;
            let hist = &a.history.points;
            if hist.len() < th {
                return Err(Error::Horizon(format!(
                    "agent {} has {} history points, need {th}",
                    a.id,
                    hist.len()
                )));
            }
            let (veh, ped) = match a.kind {
                AgentKind::Vehicle => (1.0, 0.0),
                AgentKind::Pedestrian => (0.0, 1.0),
                AgentKind::Cyclist => (0.0, 0.0),
            };
            let mut data = Vec::with_capacity(th * AGENT_FEATURES);
            for p in &hist[hist.len() - th..] {
                let q = local(&frame, p);
                let (s, c) = q.heading.sin_cos();
                data.extend_from_slice(&[
                    q.x,
                    q.y,
                    c,
                    s,
                    q.speed * c,
                    q.speed * s,
                    a.extent.length,
                    a.extent.width,
                    veh,
                    ped,
                ]);
            }
            let cur = local(&frame, a.current());
            Ok(AgentFeatures {
                id: a.id,
                history: Tensor::matrix(th, AGENT_FEATURES, data),
                current: [cur.x, cur.y],
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let statics = scene
        .statics
        .iter()
        .map(|o| {
            let q = frame.pose_to_local(o.pose);
            let mut f = vec![
                q.x / POSITION_NORM,
                q.y / POSITION_NORM,
                q.heading.cos(),
                q.heading.sin(),
                o.extent.length / 5.0,
                o.extent.width / 5.0,
                0.0,
                0.0,
                0.0,
            ];
            f[6 + o.kind as usize] = 1.0;
            debug_assert!(matches!(o.kind, StaticKind::Obstacle | StaticKind::Barrier | StaticKind::Cone));
            f
        })
        .collect();

    let polylines = scene
        .map
        .iter()
        .map(|m| {
            let pts: Vec<(f64, f64)> = m.points.iter().map(|p| frame.to_local(p[0], p[1])).collect();
            let n = pts.len();
            let mut data = Vec::with_capacity(n * MAP_FEATURES);
            for i in 0..n {
                let (x, y) = pts[i];
                let (dx, dy) = if i + 1 < n {
                    (pts[i + 1].0 - x, pts[i + 1].1 - y)
                } else {
                    (x - pts[i - 1].0, y - pts[i - 1].1)
                };
                let mut f = [0.0; MAP_FEATURES];
                f[0] = x / POSITION_NORM;
                f[1] = y / POSITION_NORM;
                f[2] = dx / 10.0;
                f[3] = dy / 10.0;
                f[4] = m.on_route as u8 as f64;
                if let Some(v) = m.speed_limit {
                    f[5] = v / 20.0;
                    f[6] = 1.0;
                }
                f[7 + kind_index(m.kind)] = 1.0;
                f[11 + zone_index(m.zone)] = 1.0;
                data.extend_from_slice(&f);
            }
            Tensor::matrix(n, MAP_FEATURES, data)
        })
        .collect();

    Ok(SceneFeatures {
        ego,
        agents,
        statics,
        polylines,
    })
}

fn kind_index(k: PolylineKind) -> usize {
    match k {
        PolylineKind::LaneCenter => 0,
        PolylineKind::LaneBoundary => 1,
        PolylineKind::Crosswalk => 2,
        PolylineKind::DrivableEdge => 3,
    }
}

fn zone_index(z: RoadZone) -> usize {
    match z {
        RoadZone::Road => 0,
        RoadZone::Junction => 1,
        RoadZone::Roundabout => 2,
        RoadZone::Merge => 3,
        RoadZone::Split => 4,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{generate_scene, ScenarioType};

    #[test]
    fn widths_and_frame() {
        let s = generate_scene(3, ScenarioType::Roundabout).unwrap();
        let f = extract_features(&s, &NetConfig::desk()).unwrap();
        assert_eq!(f.ego.len(), EGO_FEATURES);
        assert_eq!(f.agents.len(), s.agents.len());
        for a in &f.agents {
            assert_eq!((a.history.rows(), a.history.cols()), (20, AGENT_FEATURES));
            let last = a.history.row(19);
            assert_eq!([last[0], last[1]], a.current);
        }
        for p in &f.polylines {
            assert_eq!((p.rows(), p.cols()), (10, MAP_FEATURES));
            for r in 0..10 {
                assert_eq!(p.row(r)[7..11].iter().sum::<f64>(), 1.0);
                assert_eq!(p.row(r)[11..16].iter().sum::<f64>(), 1.0);
            }
        }
        assert!(f.statics.iter().all(|s| s.len() == STATIC_FEATURES));
    }

    #[test]
    fn cap_overflow_is_reported() {
        let s = generate_scene(1, ScenarioType::Straight).unwrap();
        let cfg = NetConfig {
            max_polylines: 1,
            ..NetConfig::desk()
        };
        assert!(matches!(extract_features(&s, &cfg), Err(Error::CapOverflow { .. })));
    }
}
