use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Seconds per step for every trajectory.
pub const DT: f64 = 0.1;
/// History steps (2 s).
pub const HISTORY_STEPS: usize = 20;
/// Future steps (8 s).
pub const FUTURE_STEPS: usize = 80;
/// Points per map polyline.
pub const POLYLINE_POINTS: usize = 10;

/// Wraps an angle to (-π, π].
pub fn wrap_angle(a: f64) -> f64 {
    if a > -PI && a <= PI {
        return a;
    }
    let r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r - 2.0 * PI
    } else {
        r
    }
}

/// Planar pose.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

impl Pose {
    pub const ORIGIN: Pose = Pose {
        x: 0.0,
        y: 0.0,
        heading: 0.0,
    };

    pub fn new(x: f64, y: f64, heading: f64) -> Self {
        Self { x, y, heading }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.heading.is_finite()
    }

    /// Expresses a world point in this pose's local frame.
    pub fn to_local(&self, x: f64, y: f64) -> (f64, f64) {
        let (s, c) = self.heading.sin_cos();
        let dx = x - self.x;
        let dy = y - self.y;
        (c * dx + s * dy, -s * dx + c * dy)
    }

    /// Maps a point in this pose's local frame back to the world.
    pub fn to_world(&self, x: f64, y: f64) -> (f64, f64) {
        let (s, c) = self.heading.sin_cos();
        (self.x + c * x - s * y, self.y + s * x + c * y)
    }

    pub fn pose_to_local(&self, p: Pose) -> Pose {
        let (x, y) = self.to_local(p.x, p.y);
        Pose::new(x, y, wrap_angle(p.heading - self.heading))
    }

    pub fn pose_to_world(&self, p: Pose) -> Pose {
        let (x, y) = self.to_world(p.x, p.y);
        Pose::new(x, y, wrap_angle(p.heading + self.heading))
    }
}

/// Box footprint, metres.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Extent {
    pub length: f64,
    pub width: f64,
}

impl Extent {
    pub fn new(length: f64, width: f64) -> Self {
        Self { length, width }
    }

    pub fn is_valid(&self) -> bool {
        self.length > 0.0 && self.width > 0.0 && self.length.is_finite() && self.width.is_finite()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajPoint {
    pub x: f64,
    pub y: f64,
    /// Radians in (-π, π].
    pub heading: f64,
    /// Metres per second, non-negative.
    pub speed: f64,
}

impl TrajPoint {
    pub fn new(x: f64, y: f64, heading: f64, speed: f64) -> Self {
        Self {
            x,
            y,
            heading: wrap_angle(heading),
            speed: speed.max(0.0),
        }
    }

    pub fn pose(&self) -> Pose {
        Pose::new(self.x, self.y, self.heading)
    }

    pub fn is_valid(&self) -> bool {
        self.x.is_finite()
            && self.y.is_finite()
            && self.heading.is_finite()
            && self.speed.is_finite()
            && self.speed >= 0.0
            && self.heading > -PI
            && self.heading <= PI
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.x, self.y, self.heading, self.speed]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub points: Vec<TrajPoint>,
    pub dt: f64,
}

impl Trajectory {
    pub fn new(points: Vec<TrajPoint>, dt: f64) -> Self {
        Self { points, dt }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// First `n` points (or all if shorter).
    pub fn truncated(&self, n: usize) -> Trajectory {
        Trajectory::new(self.points[..n.min(self.points.len())].to_vec(), self.dt)
    }

    pub fn last(&self) -> Option<&TrajPoint> {
        self.points.last()
    }

    /// Mean Euclidean distance over the common prefix.
    pub fn ade(&self, other: &Trajectory) -> f64 {
        let n = self.len().min(other.len());
        if n == 0 {
            return 0.0;
        }
        self.points
            .iter()
            .zip(&other.points)
            .take(n)
            .map(|(a, b)| (a.x - b.x).hypot(a.y - b.y))
            .sum::<f64>()
            / n as f64
    }

    /// Path length along the polyline of positions.
    pub fn arc_length(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| (w[1].x - w[0].x).hypot(w[1].y - w[0].y))
            .sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EgoState {
    pub pose: TrajPoint,
    pub acceleration: f64,
    pub steering: f64,
    pub extent: Extent,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    Vehicle,
    Pedestrian,
    Cyclist,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Agent {
    pub id: u64,
    pub kind: AgentKind,
    pub extent: Extent,
    /// `HISTORY_STEPS` points, oldest first; the last is the current state.
    pub history: Trajectory,
    /// Logged future starting one step after the current state. May extend
    /// beyond `FUTURE_STEPS` to cover closed-loop replay.
    pub future: Option<Trajectory>,
}

impl Agent {
    pub fn current(&self) -> &TrajPoint {
        self.history.points.last().expect("agent history is never empty")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StaticKind {
    Obstacle,
    Barrier,
    Cone,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StaticObject {
    pub pose: Pose,
    pub extent: Extent,
    pub kind: StaticKind,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolylineKind {
    LaneCenter,
    LaneBoundary,
    Crosswalk,
    /// Closed polygon ring bounding a drivable region.
    DrivableEdge,
}

/// Road topology context of a polyline, read by the scenario labeler.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoadZone {
    Road,
    Junction,
    Roundabout,
    Merge,
    Split,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapPolyline {
    pub points: Vec<[f64; 2]>,
    pub kind: PolylineKind,
    pub on_route: bool,
    pub speed_limit: Option<f64>,
    pub zone: RoadZone,
}

impl MapPolyline {
    /// Distance from a point to the polyline (open chain of segments).
    pub fn distance_to(&self, x: f64, y: f64) -> f64 {
        let p = &self.points;
        if p.len() == 1 {
            return (p[0][0] - x).hypot(p[0][1] - y);
        }
        p.windows(2)
            .map(|w| point_segment_distance(x, y, w[0], w[1]))
            .fold(f64::INFINITY, f64::min)
    }
}

pub fn point_segment_distance(x: f64, y: f64, a: [f64; 2], b: [f64; 2]) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((x - a[0]) * dx + (y - a[1]) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (a[0] + t * dx - x).hypot(a[1] + t * dy - y)
}

/// The seven scenario classes. The discriminant is the expert index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioType {
    LeftTurnJunction = 0,
    StraightJunction = 1,
    RightTurnJunction = 2,
    Straight = 3,
    Roundabout = 4,
    UTurn = 5,
    Others = 6,
}

impl ScenarioType {
    pub const COUNT: usize = 7;
    pub const ALL: [ScenarioType; 7] = [
        ScenarioType::LeftTurnJunction,
        ScenarioType::StraightJunction,
        ScenarioType::RightTurnJunction,
        ScenarioType::Straight,
        ScenarioType::Roundabout,
        ScenarioType::UTurn,
        ScenarioType::Others,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            ScenarioType::LeftTurnJunction => "left_turn_junction",
            ScenarioType::StraightJunction => "straight_junction",
            ScenarioType::RightTurnJunction => "right_turn_junction",
            ScenarioType::Straight => "straight",
            ScenarioType::Roundabout => "roundabout",
            ScenarioType::UTurn => "u_turn",
            ScenarioType::Others => "others",
        }
    }
}

impl fmt::Display for ScenarioType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScenarioType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown scenario type `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub ego: EgoState,
    pub agents: Vec<Agent>,
    pub statics: Vec<StaticObject>,
    pub map: Vec<MapPolyline>,
    pub label: Option<ScenarioType>,
    /// Logged ego future; at least `FUTURE_STEPS` long when present and
    /// possibly longer for closed-loop replay.
    pub ego_future: Option<Trajectory>,
    /// World pose of the ego when the scene was normalized, used to invert
    /// `to_ego_frame`.
    pub origin: Option<Pose>,
}

impl Scene {
    /// Checks the structural invariants of every entity.
    pub fn validate(&self) -> Result<()> {
        let bad = |what: String| Err(Error::Invalid(what));
        if !self.ego.pose.is_valid() {
            return bad("ego.pose".into());
        }
        if !self.ego.extent.is_valid() {
            return bad("ego.extent".into());
        }
        if !self.ego.acceleration.is_finite() || !self.ego.steering.is_finite() {
            return bad("ego kinematics".into());
        }
        let check_traj = |t: &Trajectory, what: &str| -> Result<()> {
            if !(t.dt > 0.0) {
                return Err(Error::Invalid(format!("{what}.dt must be positive")));
            }
            if let Some(i) = t.points.iter().position(|p| !p.is_valid()) {
                return Err(Error::Invalid(format!("{what}[{i}] is not a valid point")));
            }
            Ok(())
        };
        for (i, a) in self.agents.iter().enumerate() {
            if !a.extent.is_valid() {
                return bad(format!("agents[{i}].extent"));
            }
            if a.history.len() != HISTORY_STEPS {
                return bad(format!(
                    "agents[{i}].history has {} points, expected {HISTORY_STEPS}",
                    a.history.len()
                ));
            }
            check_traj(&a.history, &format!("agents[{i}].history"))?;
            if let Some(f) = &a.future {
                check_traj(f, &format!("agents[{i}].future"))?;
            }
        }
        for (i, s) in self.statics.iter().enumerate() {
            if !s.extent.is_valid() || !s.pose.is_finite() {
                return bad(format!("statics[{i}]"));
            }
        }
        for (i, m) in self.map.iter().enumerate() {
            if m.points.len() != POLYLINE_POINTS {
                return bad(format!(
                    "map[{i}] has {} points, expected {POLYLINE_POINTS}",
                    m.points.len()
                ));
            }
            if m.points.iter().any(|p| !p[0].is_finite() || !p[1].is_finite()) {
                return bad(format!("map[{i}] has a non-finite point"));
            }
            if m.points.windows(2).any(|w| w[0] == w[1]) {
                return bad(format!("map[{i}] repeats a point"));
            }
        }
        if let Some(f) = &self.ego_future {
            check_traj(f, "ego_future")?;
        }
        Ok(())
    }

    pub fn future_gt(&self) -> Result<&Trajectory> {
        self.ego_future.as_ref().ok_or(Error::MissingGroundTruth)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wrap_angle_range() {
        assert_eq!(wrap_angle(PI), PI);
        assert!((wrap_angle(-PI) - PI).abs() < 1e-15);
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
        assert!((wrap_angle(0.25) - 0.25).abs() < 1e-15);
        for k in -20..20 {
            let a = wrap_angle(k as f64 * 0.77);
            assert!(a > -PI && a <= PI);
        }
    }

    #[test]
    fn scenario_index_round_trip() {
        for (i, t) in ScenarioType::ALL.iter().enumerate() {
            assert_eq!(t.index(), i);
            assert_eq!(ScenarioType::from_index(i), Some(*t));
            assert_eq!(t.name().parse::<ScenarioType>().unwrap(), *t);
        }
    }

    #[test]
    fn pose_local_world_inverse() {
        let p = Pose::new(3.0, -2.0, 1.1);
        let (lx, ly) = p.to_local(7.5, 4.25);
        let (wx, wy) = p.to_world(lx, ly);
        assert!((wx - 7.5).abs() < 1e-12 && (wy - 4.25).abs() < 1e-12);
    }
}
