//! Synthetic scene generator.
//!
//! Every scene is built directly in the ego frame. The ego path is the
//! integral of a piecewise-linear curvature profile (clothoid transitions,
//! curvature capped at [`KAPPA_MAX`]) driven by a smooth speed profile. Roads,
//! lanes and drivable polygons are then laid out around that path, agents
//! are replayed along lanes at near-constant speed and rejection-sampled so
//! they never overlap the ego at the same instant, and the scene is kept
//! only if [`label_scenario`] agrees with the requested type.

use std::f64::consts::{FRAC_PI_2, PI};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::interaction::geometry::bounding_radius;
use crate::interaction::obb_overlap;

use super::label::label_scenario;
use super::types::*;

/// Steps of logged future per scene (15 s), enough for closed-loop replay.
pub const REPLAY_STEPS: usize = 150;
/// Curvature cap of generated ego paths, 1/m.
pub const KAPPA_MAX: f64 = 0.2;
pub const LANE_WIDTH: f64 = 3.5;
pub const EGO_EXTENT: Extent = Extent {
    length: 4.8,
    width: 2.0,
};
/// Same-time clearance between the ego and any agent footprint, metres.
pub const AGENT_CLEARANCE: f64 = 1.0;
pub const MAX_AGENTS: usize = 8;
pub const MAX_STATICS: usize = 3;
pub const WHEELBASE: f64 = 2.9;

const URBAN_LIMIT: f64 = 13.9;
const ARTERIAL_LIMIT: f64 = 16.7;
const MAX_ATTEMPTS: usize = 200;
const CURVE_DS: f64 = 0.05;

/// Emits `n` scenes of type `ty`. Scene `i` is drawn from its own stream
/// seeded with `seed + i`, so the output is independent of thread count.
pub fn generate_synthetic(seed: u64, ty: ScenarioType, n: usize) -> Result<Vec<Scene>> {
    if n == 0 {
        return Err(Error::Invalid("scene count must be positive".into()));
    }
    (0..n)
        .into_par_iter()
        .map(|i| generate_scene(seed.wrapping_add(i as u64), ty))
        .collect()
}

/// One scene of type `ty` from `scene_seed`.
pub fn generate_scene(scene_seed: u64, ty: ScenarioType) -> Result<Scene> {
    let mut rng = ChaCha8Rng::seed_from_u64(scene_seed);
    rng.set_stream(ty.index() as u64 + 1);
    for _ in 0..MAX_ATTEMPTS {
        let Some(mut scene) = draw(&mut rng, ty) else { continue };
        if label_scenario(&scene)? == ty {
            scene.label = Some(ty);
            scene.validate()?;
            return Ok(scene);
        }
    }
    Err(Error::Invalid(format!("could not draw a {ty} scene from seed {scene_seed}")))
}

// ---------------------------------------------------------------- profiles

/// Piecewise-linear curvature in arc length; zero past the end.
#[derive(Clone, Debug, Default)]
struct Profile {
    /// `(length, k_start, k_end)`
    segs: Vec<(f64, f64, f64)>,
}

impl Profile {
    fn k_end(&self) -> f64 {
        self.segs.last().map_or(0.0, |s| s.2)
    }

    fn length(&self) -> f64 {
        self.segs.iter().map(|s| s.0).sum()
    }

    fn heading_change(&self) -> f64 {
        self.segs.iter().map(|s| 0.5 * (s.1 + s.2) * s.0).sum()
    }

    fn ramp(mut self, to: f64, len: f64) -> Self {
        let k = self.k_end();
        if len > 0.0 {
            self.segs.push((len, k, to));
        }
        self
    }

    fn hold(self, len: f64) -> Self {
        let k = self.k_end();
        self.ramp(k, len)
    }

    fn straight(self, len: f64) -> Self {
        debug_assert_eq!(self.k_end(), 0.0);
        self.hold(len)
    }

    /// Turn by `angle` at peak curvature `k_abs` with clothoids of length
    /// `lc` on both sides, shortening them if the turn is too small.
    fn turn(self, angle: f64, k_abs: f64, lc: f64) -> Self {
        let k = k_abs.copysign(angle);
        let lc = lc.min(angle.abs() / k_abs);
        let hold = angle.abs() / k_abs - lc;
        self.ramp(k, lc).hold(hold).ramp(0.0, lc)
    }

    fn kappa(&self, s: f64) -> f64 {
        if s < 0.0 {
            return 0.0;
        }
        let mut s0 = 0.0;
        for &(len, k0, k1) in &self.segs {
            if s < s0 + len {
                return k0 + (k1 - k0) * (s - s0) / len;
            }
            s0 += len;
        }
        0.0
    }
}

/// Dense samples of the ego path by arc length, starting at the origin with
/// heading 0. Beyond either end the path continues straight.
struct Curve {
    pts: Vec<(f64, f64, f64)>,
    profile: Profile,
}

impl Curve {
    fn build(profile: Profile, length: f64) -> Curve {
        let n = (length / CURVE_DS).ceil() as usize + 1;
        let mut pts = Vec::with_capacity(n);
        let (mut x, mut y, mut h) = (0.0f64, 0.0f64, 0.0f64);
        pts.push((x, y, h));
        for i in 0..n - 1 {
            let s = i as f64 * CURVE_DS;
            let dh = profile.kappa(s + CURVE_DS / 2.0) * CURVE_DS;
            let hm = h + dh / 2.0;
            x += CURVE_DS * hm.cos();
            y += CURVE_DS * hm.sin();
            h += dh;
            pts.push((x, y, h));
        }
        Curve { pts, profile }
    }

    fn max_s(&self) -> f64 {
        (self.pts.len() - 1) as f64 * CURVE_DS
    }

    /// Heading is unwrapped here; callers wrap.
    fn pose(&self, s: f64) -> Pose {
        if s <= 0.0 {
            return Pose::new(s, 0.0, 0.0);
        }
        let last = self.pts.len() - 1;
        let f = s / CURVE_DS;
        let i = f.floor() as usize;
        if i >= last {
            let (x, y, h) = self.pts[last];
            let d = s - self.max_s();
            return Pose::new(x + d * h.cos(), y + d * h.sin(), h);
        }
        let u = f - i as f64;
        let (a, b) = (self.pts[i], self.pts[i + 1]);
        Pose::new(a.0 + u * (b.0 - a.0), a.1 + u * (b.1 - a.1), a.2 + u * (b.2 - a.2))
    }

    fn xy(&self, s: f64) -> [f64; 2] {
        let p = self.pose(s);
        [p.x, p.y]
    }

    fn polyline(&self, s0: f64, s1: f64) -> Vec<[f64; 2]> {
        (0..POLYLINE_POINTS)
            .map(|i| self.xy(s0 + (s1 - s0) * i as f64 / (POLYLINE_POINTS - 1) as f64))
            .collect()
    }

    /// Axis-aligned bounds of the path over `[s0, s1]`, inflated.
    fn bbox(&self, s0: f64, s1: f64, inflate: f64) -> [f64; 4] {
        let mut b = [f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY];
        let n = ((s1 - s0) / 0.25).ceil().max(1.0) as usize;
        for i in 0..=n {
            let [x, y] = self.xy(s0 + (s1 - s0) * i as f64 / n as f64);
            b = [b[0].min(x), b[1].max(x), b[2].min(y), b[3].max(y)];
        }
        [b[0] - inflate, b[1] + inflate, b[2] - inflate, b[3] + inflate]
    }
}

/// Speed by arc length: `v0` blending smoothly into `v1` over `[s_a, s_a + l_a]`.
#[derive(Clone, Copy, Debug)]
struct SpeedProfile {
    v0: f64,
    v1: f64,
    s_a: f64,
    l_a: f64,
}

impl SpeedProfile {
    fn at(&self, s: f64) -> f64 {
        let u = ((s - self.s_a) / self.l_a).clamp(0.0, 1.0);
        self.v0 + (self.v1 - self.v0) * u * u * (3.0 - 2.0 * u)
    }

    fn dv_ds(&self, s: f64) -> f64 {
        let u = (s - self.s_a) / self.l_a;
        if !(0.0..=1.0).contains(&u) {
            return 0.0;
        }
        (self.v1 - self.v0) * 6.0 * u * (1.0 - u) / self.l_a
    }

    /// Arc length at each step `0..=steps` (RK4 on `ds/dt = v(s)`).
    fn arc_lengths(&self, steps: usize) -> Vec<f64> {
        let mut s = 0.0;
        let mut out = Vec::with_capacity(steps + 1);
        out.push(s);
        for _ in 0..steps {
            let k1 = self.at(s);
            let k2 = self.at(s + 0.5 * DT * k1);
            let k3 = self.at(s + 0.5 * DT * k2);
            let k4 = self.at(s + DT * k3);
            s += DT / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            out.push(s);
        }
        out
    }
}

// ---------------------------------------------------------------- map helpers

fn poly(points: Vec<[f64; 2]>, kind: PolylineKind, on_route: bool, limit: Option<f64>, zone: RoadZone) -> MapPolyline {
    debug_assert_eq!(points.len(), POLYLINE_POINTS);
    MapPolyline {
        points,
        kind,
        on_route,
        speed_limit: limit,
        zone,
    }
}

fn line_pts(a: [f64; 2], b: [f64; 2]) -> Vec<[f64; 2]> {
    (0..POLYLINE_POINTS)
        .map(|i| {
            let t = i as f64 / (POLYLINE_POINTS - 1) as f64;
            [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]
        })
        .collect()
}

fn lane(a: [f64; 2], b: [f64; 2], on_route: bool, limit: f64) -> MapPolyline {
    poly(line_pts(a, b), PolylineKind::LaneCenter, on_route, Some(limit), RoadZone::Road)
}

fn boundary(a: [f64; 2], b: [f64; 2], zone: RoadZone) -> MapPolyline {
    poly(line_pts(a, b), PolylineKind::LaneBoundary, false, None, zone)
}

fn crosswalk(a: [f64; 2], b: [f64; 2]) -> MapPolyline {
    poly(line_pts(a, b), PolylineKind::Crosswalk, false, None, RoadZone::Road)
}

/// Closed circle through 10 points (first and last coincide).
fn circle_pts(c: [f64; 2], r: f64) -> Vec<[f64; 2]> {
    (0..POLYLINE_POINTS)
        .map(|i| {
            let a = 2.0 * PI * i as f64 / (POLYLINE_POINTS - 1) as f64;
            [c[0] + r * a.cos(), c[1] + r * a.sin()]
        })
        .collect()
}

/// Drivable rectangle ring along `heading` from `start`, extending `left`
/// and `right` of the centre line.
fn rect_ring(start: [f64; 2], heading: f64, len: f64, left: f64, right: f64) -> MapPolyline {
    let (s, c) = heading.sin_cos();
    let at = |along: f64, lat: f64| [start[0] + c * along - s * lat, start[1] + s * along + c * lat];
    let mut pts = Vec::with_capacity(POLYLINE_POINTS);
    for i in 0..5 {
        pts.push(at(len * i as f64 / 4.0, -right));
    }
    for i in 0..5 {
        pts.push(at(len * (4 - i) as f64 / 4.0, left));
    }
    poly(pts, PolylineKind::DrivableEdge, false, None, RoadZone::Road)
}

fn aabb_ring(b: [f64; 4], zone: RoadZone) -> MapPolyline {
    let mut p = rect_ring([b[0], (b[2] + b[3]) / 2.0], 0.0, b[1] - b[0], (b[3] - b[2]) / 2.0, (b[3] - b[2]) / 2.0);
    p.zone = zone;
    p
}

/// Regular 10-gon whose inscribed circle has radius `r`.
fn disc_ring(c: [f64; 2], r: f64, zone: RoadZone) -> MapPolyline {
    let rv = r / (PI / POLYLINE_POINTS as f64).cos();
    let pts = (0..POLYLINE_POINTS)
        .map(|i| {
            let a = 2.0 * PI * i as f64 / POLYLINE_POINTS as f64;
            [c[0] + rv * a.cos(), c[1] + rv * a.sin()]
        })
        .collect();
    poly(pts, PolylineKind::DrivableEdge, false, None, zone)
}

fn ahead(p: Pose, d: f64) -> [f64; 2] {
    [p.x + d * p.heading.cos(), p.y + d * p.heading.sin()]
}

fn left_of(p: Pose, d: f64) -> [f64; 2] {
    [p.x - d * p.heading.sin(), p.y + d * p.heading.cos()]
}

// ---------------------------------------------------------------- agent lanes

#[derive(Clone, Copy, Debug)]
enum LanePath {
    Line { start: [f64; 2], heading: f64 },
    /// Counter-clockwise circle starting at polar angle `a0`.
    Ring { c: [f64; 2], r: f64, a0: f64 },
}

impl LanePath {
    fn line(start: [f64; 2], heading: f64) -> Self {
        LanePath::Line { start, heading }
    }

    fn pose(&self, s: f64) -> Pose {
        match *self {
            LanePath::Line { start, heading } => {
                Pose::new(start[0] + s * heading.cos(), start[1] + s * heading.sin(), heading)
            }
            LanePath::Ring { c, r, a0 } => {
                let a = a0 + s / r;
                Pose::new(c[0] + r * a.cos(), c[1] + r * a.sin(), a + FRAC_PI_2)
            }
        }
    }
}

#[derive(Clone, Debug)]
struct AgentLane {
    path: LanePath,
    kind: AgentKind,
    /// Current arc position range.
    s: (f64, f64),
    v: (f64, f64),
    weight: f64,
}

impl AgentLane {
    fn new(path: LanePath, kind: AgentKind, s: (f64, f64), v: (f64, f64)) -> Self {
        Self {
            path,
            kind,
            s,
            v,
            weight: 1.0,
        }
    }

    fn weighted(mut self, w: f64) -> Self {
        self.weight = w;
        self
    }
}

struct Layout {
    curve: Curve,
    speed: SpeedProfile,
    map: Vec<MapPolyline>,
    lanes: Vec<AgentLane>,
}

fn u(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    rng.gen_range(lo..=hi)
}

/// Total ego travel over the replay window.
fn reach(speed: &SpeedProfile) -> f64 {
    *speed.arc_lengths(REPLAY_STEPS).last().expect("non-empty")
}

fn vehicle_lane(path: LanePath, s: (f64, f64), v: (f64, f64)) -> AgentLane {
    AgentLane::new(path, AgentKind::Vehicle, s, v)
}

fn road_users(path: LanePath, s: (f64, f64), v: (f64, f64)) -> [AgentLane; 2] {
    [
        vehicle_lane(path, s, v),
        AgentLane::new(path, AgentKind::Cyclist, s, (3.0, 6.0)).weighted(0.2),
    ]
}

fn ped_crossing(a: [f64; 2], b: [f64; 2]) -> [AgentLane; 2] {
    let h = (b[1] - a[1]).atan2(b[0] - a[0]);
    let len = (b[0] - a[0]).hypot(b[1] - a[1]);
    [
        AgentLane::new(LanePath::line(a, h), AgentKind::Pedestrian, (0.0, len * 0.3), (0.8, 1.6)).weighted(0.5),
        AgentLane::new(LanePath::line(b, h + PI), AgentKind::Pedestrian, (0.0, len * 0.3), (0.8, 1.6))
            .weighted(0.5),
    ]
}

// ---------------------------------------------------------------- layouts

fn straight_layout(rng: &mut ChaCha8Rng) -> Layout {
    let v0 = u(rng, 5.0, 13.0);
    let v1 = (v0 + u(rng, -1.5, 2.0)).clamp(4.0, 14.5);
    let speed = SpeedProfile {
        v0,
        v1,
        s_a: u(rng, 0.0, 20.0),
        l_a: 30.0,
    };
    let far = reach(&speed) + 60.0;
    let curve = Curve::build(Profile::default(), far);
    let mut map = vec![
        lane([-40.0, 0.0], [far, 0.0], true, ARTERIAL_LIMIT),
        lane([far, LANE_WIDTH], [-40.0, LANE_WIDTH], false, ARTERIAL_LIMIT),
        boundary([-40.0, 1.75], [far, 1.75], RoadZone::Road),
        boundary([-40.0, -1.75], [far, -1.75], RoadZone::Road),
        rect_ring([-60.0, 0.0], 0.0, far + 80.0, 6.0, 2.5),
    ];
    let mut lanes = Vec::new();
    lanes.extend(road_users(LanePath::line([-200.0, 0.0], 0.0), (150.0, 280.0), (v0 - 2.0, v0 + 4.0)));
    lanes.push(vehicle_lane(LanePath::line([300.0, LANE_WIDTH], PI), (180.0, 330.0), (5.0, 14.0)).weighted(1.5));
    if rng.gen_bool(0.4) {
        let xw = u(rng, 15.0, 50.0);
        map.push(crosswalk([xw, -3.0], [xw, 6.5]));
        lanes.extend(ped_crossing([xw, -4.0], [xw, 7.5]));
    }
    Layout {
        curve,
        speed,
        map,
        lanes,
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Turn {
    Left,
    Through,
    Right,
}

fn junction_layout(rng: &mut ChaCha8Rng, turn: Turn) -> Layout {
    let z = RoadZone::Junction;
    let half_road = LANE_WIDTH + 0.75;
    let (profile, speed, s1, s_te, x_c) = match turn {
        Turn::Through => {
            let v0 = u(rng, 5.0, 11.0);
            let speed = SpeedProfile {
                v0,
                v1: (v0 + u(rng, -1.0, 1.5)).max(4.0),
                s_a: u(rng, 0.0, 10.0),
                l_a: 25.0,
            };
            let x_c = u(rng, 8.0, 30.0);
            (Profile::default(), speed, x_c - half_road, x_c + half_road, x_c)
        }
        Turn::Left | Turn::Right => {
            let (r, lc, angle) = if turn == Turn::Left {
                (u(rng, 9.0, 14.0), u(rng, 4.0, 7.0), FRAC_PI_2)
            } else {
                (u(rng, 6.0, 9.0), u(rng, 3.0, 5.0), -FRAC_PI_2)
            };
            let v_turn = u(rng, 4.0, 7.0).min((2.5 * r).sqrt());
            let s1 = u(rng, 2.0, 10.0);
            let profile = Profile::default().straight(s1).turn(angle, 1.0 / r, lc);
            let s_te = profile.length();
            let speed = SpeedProfile {
                v0: v_turn,
                v1: u(rng, 7.0, 11.0),
                s_a: s_te,
                l_a: 25.0,
            };
            (profile, speed, s1, s_te, f64::NAN)
        }
    };
    let far = reach(&speed) + 60.0;
    let curve = Curve::build(profile, s_te + far);
    let pe = curve.pose(s_te);
    let x_c = match turn {
        Turn::Through => x_c,
        Turn::Left => pe.x - 1.75,
        Turn::Right => pe.x + 1.75,
    };
    let (xn, xs) = (x_c + 1.75, x_c - 1.75);
    let mut map = Vec::new();
    match turn {
        Turn::Through => {
            map.push(lane([-40.0, 0.0], [x_c - half_road, 0.0], true, URBAN_LIMIT));
            map.push(poly(
                line_pts([x_c - half_road, 0.0], [x_c + half_road, 0.0]),
                PolylineKind::LaneCenter,
                true,
                Some(URBAN_LIMIT),
                z,
            ));
            map.push(lane([x_c + half_road, 0.0], [x_c + far, 0.0], true, URBAN_LIMIT));
            map.push(lane([xn, -60.0], [xn, 60.0], false, URBAN_LIMIT));
            map.push(lane([xs, 60.0], [xs, -60.0], false, URBAN_LIMIT));
        }
        Turn::Left | Turn::Right => {
            let dir = if turn == Turn::Left { 1.0 } else { -1.0 };
            map.push(lane([-40.0, 0.0], [s1, 0.0], true, URBAN_LIMIT));
            map.push(poly(curve.polyline(s1 - 1.0, s_te + 1.0), PolylineKind::LaneCenter, true, Some(URBAN_LIMIT), z));
            map.push(lane([pe.x, pe.y + dir], [pe.x, pe.y + dir * far], true, URBAN_LIMIT));
            map.push(lane([x_c + half_road, 0.0], [x_c + 60.0, 0.0], false, URBAN_LIMIT));
            if turn == Turn::Left {
                map.push(lane([xn, -60.0], [xn, -2.5], false, URBAN_LIMIT));
                map.push(lane([xs, pe.y + far], [xs, -60.0], false, URBAN_LIMIT));
            } else {
                map.push(lane([xs, 60.0], [xs, 6.0], false, URBAN_LIMIT));
                map.push(lane([xn, pe.y - far], [xn, 60.0], false, URBAN_LIMIT));
            }
        }
    }
    map.push(lane([x_c + 60.0, LANE_WIDTH], [-40.0, LANE_WIDTH], false, URBAN_LIMIT));
    map.push(boundary([-40.0, 1.75], [x_c - half_road, 1.75], RoadZone::Road));
    let main_end = (x_c + 80.0).max(far);
    map.push(rect_ring([-60.0, 0.0], 0.0, main_end + 60.0, 6.0, 2.5));
    let cross_len = far + 20.0;
    map.push(rect_ring([x_c, -cross_len], FRAC_PI_2, 2.0 * cross_len, half_road, half_road));
    if turn != Turn::Through {
        map.push(aabb_ring(curve.bbox(s1 - 1.0, s_te + 1.0, 3.0), z));
    }
    let mut lanes = Vec::new();
    lanes.push(vehicle_lane(LanePath::line([x_c + 100.0, LANE_WIDTH], PI), (90.0, 110.0 + x_c), (4.0, 12.0)));
    lanes.extend(road_users(LanePath::line([-200.0, 0.0], 0.0), (160.0, 240.0 + x_c), (3.0, 11.0)));
    lanes.extend(road_users(LanePath::line([xn, -200.0], FRAC_PI_2), (140.0, 240.0), (3.0, 12.0)));
    lanes.extend(road_users(LanePath::line([xs, 200.0], -FRAC_PI_2), (140.0, 260.0), (3.0, 12.0)));
    if rng.gen_bool(0.5) {
        let y = -6.0;
        map.push(crosswalk([x_c - half_road, y], [x_c + half_road, y]));
        lanes.extend(ped_crossing([x_c - half_road - 1.0, y], [x_c + half_road + 1.0, y]));
    }
    Layout {
        curve,
        speed,
        map,
        lanes,
    }
}

fn roundabout_layout(rng: &mut ChaCha8Rng) -> Layout {
    let z = RoadZone::Roundabout;
    let rr = u(rng, 12.0, 18.0);
    let v = u(rng, 4.0, 6.5).min((2.5 * rr).sqrt());
    let re = u(rng, 10.0, 16.0);
    let rx = u(rng, 10.0, 16.0);
    let lc = u(rng, 3.0, 5.0);
    let lc2 = u(rng, 4.0, 6.0);
    let alpha_e = u(rng, FRAC_PI_2 - 0.5, FRAC_PI_2 - 0.2);
    let alpha_x = u(rng, FRAC_PI_2 - 0.5, FRAC_PI_2 - 0.2);
    let target = [-FRAC_PI_2, 0.0, FRAC_PI_2][rng.gen_range(0..3)];
    let s1 = u(rng, 2.0, 8.0);
    let entry = Profile::default().straight(s1).ramp(-1.0 / re, lc);
    let hold_e = (alpha_e - entry.heading_change().abs()) * re;
    let entry = entry.hold(hold_e.max(0.0)).ramp(1.0 / rr, lc2);
    let s_ring0 = entry.length();
    // Exit: ring → right deflection by `alpha_x` → straight.
    let h_exit_fixed = 0.5 * (1.0 / rr - 1.0 / rx) * lc2 - 0.5 * lc / rx;
    let hold_x = ((alpha_x + h_exit_fixed) * rx).max(0.0);
    let h_exit = h_exit_fixed - hold_x / rx;
    let ring = (target - entry.heading_change() - h_exit).max(0.3);
    let ring_profile = entry.hold(ring * rr);
    let s_ring1 = ring_profile.length();
    let profile = ring_profile.ramp(-1.0 / rx, lc2).hold(hold_x).ramp(0.0, lc);
    let s_exit = profile.length();
    let speed = SpeedProfile {
        v0: v,
        v1: u(rng, 6.0, 9.0),
        s_a: s_exit,
        l_a: 25.0,
    };
    let far = reach(&speed) + 60.0;
    let curve = Curve::build(profile, s_exit + far);
    let mid = curve.pose(0.5 * (s_ring0 + s_ring1));
    let c = left_of(mid, rr);
    let pe = curve.pose(s_exit);
    let pe = Pose::new(pe.x, pe.y, wrap_angle(pe.heading));
    let mut map = vec![
        lane([-40.0, 0.0], [s1, 0.0], true, URBAN_LIMIT),
        poly(curve.polyline(s1, s_ring0), PolylineKind::LaneCenter, true, Some(URBAN_LIMIT), z),
        poly(circle_pts(c, rr), PolylineKind::LaneCenter, true, Some(URBAN_LIMIT), z),
        poly(curve.polyline(s_ring1, s_exit), PolylineKind::LaneCenter, true, Some(URBAN_LIMIT), z),
        lane(ahead(pe, 0.0), ahead(pe, far), true, URBAN_LIMIT),
        poly(circle_pts(c, rr - 3.0), PolylineKind::LaneBoundary, false, None, z),
        lane([s1, LANE_WIDTH], [-40.0, LANE_WIDTH], false, URBAN_LIMIT),
    ];
    let back = left_of(pe, LANE_WIDTH);
    let back_start = [back[0] + 60.0 * pe.heading.cos(), back[1] + 60.0 * pe.heading.sin()];
    map.push(lane(back_start, back, false, URBAN_LIMIT));
    map.push(rect_ring([-60.0, 0.0], 0.0, s1 + 62.0, 6.0, 2.5));
    map.push(disc_ring(c, rr + 4.5, z));
    let exit_start = ahead(pe, -5.0);
    map.push(rect_ring(exit_start, pe.heading, far + 25.0, 6.0, 2.5));
    map.push(aabb_ring(curve.bbox(s1 - 1.0, s_ring0 + 2.0, 3.0), z));
    map.push(aabb_ring(curve.bbox(s_ring1 - 2.0, s_exit + 1.0, 3.0), z));
    let a0 = rng.gen_range(0.0..2.0 * PI);
    let lanes = vec![
        vehicle_lane(LanePath::Ring { c, r: rr, a0 }, (0.0, 2.0 * PI * rr), (3.5, 6.0)).weighted(2.0),
        vehicle_lane(LanePath::line([s1, LANE_WIDTH], PI), (0.0, 40.0), (3.0, 9.0)),
        vehicle_lane(LanePath::line(back_start, pe.heading + PI), (0.0, 50.0), (3.0, 9.0)),
        vehicle_lane(LanePath::line([-200.0, 0.0], 0.0), (150.0, 190.0), (2.0, 6.0)),
    ];
    Layout {
        curve,
        speed,
        map,
        lanes,
    }
}

fn u_turn_layout(rng: &mut ChaCha8Rng) -> Layout {
    let r = u(rng, 5.5, 8.0);
    let v_turn = u(rng, 4.5, 5.5).min((3.6 * r).sqrt()).min(0.9 * r);
    let lc = u(rng, 2.0, 3.5).max(v_turn * v_turn / (r * 1.7));
    let s1 = u(rng, 0.5, 3.0);
    let profile = Profile::default().straight(s1).turn(PI, 1.0 / r, lc);
    let s_te = profile.length();
    let speed = SpeedProfile {
        v0: v_turn,
        v1: u(rng, 7.0, 10.0),
        s_a: s_te,
        l_a: 25.0,
    };
    let far = reach(&speed) + 60.0;
    let curve = Curve::build(profile, s_te + far);
    let pe = curve.pose(s_te);
    let y_ret = pe.y;
    let x_turn = curve.bbox(s1, s_te, 0.0)[1];
    let map = vec![
        lane([-40.0, 0.0], [s1, 0.0], true, URBAN_LIMIT),
        poly(curve.polyline(s1, s_te), PolylineKind::LaneCenter, true, Some(URBAN_LIMIT), RoadZone::Road),
        lane([pe.x, y_ret], [pe.x - far, y_ret], true, URBAN_LIMIT),
        lane([s1, 0.0], [x_turn + 60.0, 0.0], false, URBAN_LIMIT),
        lane([-40.0, LANE_WIDTH], [x_turn + 60.0, LANE_WIDTH], false, URBAN_LIMIT),
        lane([x_turn + 60.0, y_ret], [pe.x, y_ret], false, URBAN_LIMIT),
        lane([x_turn + 60.0, y_ret + LANE_WIDTH], [pe.x - far, y_ret + LANE_WIDTH], false, URBAN_LIMIT),
        boundary([-40.0, 5.25], [s1 - 2.0, 5.25], RoadZone::Road),
        boundary([-40.0, y_ret - 1.75], [s1 - 2.0, y_ret - 1.75], RoadZone::Road),
        rect_ring(
            [pe.x - far - 20.0, 0.0],
            0.0,
            far + 20.0 + x_turn + 40.0 - pe.x,
            y_ret + LANE_WIDTH + 2.5,
            2.5,
        ),
    ];
    let lanes = vec![
        vehicle_lane(LanePath::line([-200.0, LANE_WIDTH], 0.0), (150.0, 230.0), (4.0, 12.0)),
        vehicle_lane(LanePath::line([-200.0, 0.0], 0.0), (150.0, 192.0), (2.0, 6.0)),
        vehicle_lane(LanePath::line([300.0, y_ret], PI), (220.0, 320.0), (4.0, 12.0)),
        vehicle_lane(LanePath::line([300.0, y_ret + LANE_WIDTH], PI), (220.0, 320.0), (4.0, 12.0)),
        AgentLane::new(LanePath::line([-200.0, 0.0], 0.0), AgentKind::Cyclist, (150.0, 190.0), (3.0, 6.0))
            .weighted(0.2),
    ];
    Layout {
        curve,
        speed,
        map,
        lanes,
    }
}

fn merge_layout(rng: &mut ChaCha8Rng) -> Layout {
    let rm = u(rng, 40.0, 80.0);
    let l1 = (LANE_WIDTH * rm / 2.0).sqrt();
    let km = 1.0 / rm;
    let s1 = u(rng, 3.0, 15.0);
    let profile = Profile::default()
        .straight(s1)
        .ramp(km, l1)
        .ramp(0.0, l1)
        .ramp(-km, l1)
        .ramp(0.0, l1);
    let s_m = profile.length();
    let v0 = u(rng, 6.0, 12.0);
    let speed = SpeedProfile {
        v0,
        v1: v0 + u(rng, -1.0, 2.0),
        s_a: s1,
        l_a: 30.0,
    };
    let far = reach(&speed) + 60.0;
    let curve = Curve::build(profile, s_m + far);
    let yt = curve.pose(s_m).y;
    let end = s_m + far;
    let map = vec![
        lane([-40.0, 0.0], [s1, 0.0], true, ARTERIAL_LIMIT),
        poly(curve.polyline(s1, s_m), PolylineKind::LaneCenter, true, Some(ARTERIAL_LIMIT), RoadZone::Merge),
        lane([s_m, yt], [end, yt], true, ARTERIAL_LIMIT),
        lane([-40.0, yt], [s_m, yt], false, ARTERIAL_LIMIT),
        lane([end, yt + LANE_WIDTH], [-40.0, yt + LANE_WIDTH], false, ARTERIAL_LIMIT),
        boundary([-40.0, yt / 2.0], [s1, yt / 2.0], RoadZone::Merge),
        boundary([-40.0, -1.75], [s_m, -1.75], RoadZone::Road),
        rect_ring([-60.0, 0.0], 0.0, end + 80.0, yt + LANE_WIDTH + 2.5, 2.5),
    ];
    let mut lanes = Vec::new();
    lanes.extend(road_users(LanePath::line([-200.0, yt], 0.0), (150.0, 280.0), (5.0, 14.0)));
    lanes.push(vehicle_lane(LanePath::line([400.0, yt + LANE_WIDTH], PI), (300.0, 440.0), (5.0, 14.0)));
    lanes.push(vehicle_lane(LanePath::line([-200.0, 0.0], 0.0), (150.0, 190.0), (v0 - 3.0, v0)));
    Layout {
        curve,
        speed,
        map,
        lanes,
    }
}

fn split_layout(rng: &mut ChaCha8Rng) -> Layout {
    let rs = u(rng, 30.0, 60.0);
    let alpha = u(rng, 0.35, 0.6);
    let lc = u(rng, 6.0, 12.0);
    let s1 = u(rng, 5.0, 20.0);
    let profile = Profile::default().straight(s1).turn(-alpha, 1.0 / rs, lc);
    let s_te = profile.length();
    let v0 = u(rng, 6.0, 11.0);
    let speed = SpeedProfile {
        v0,
        v1: v0 + u(rng, -1.0, 2.0),
        s_a: s_te,
        l_a: 30.0,
    };
    let far = reach(&speed) + 60.0;
    let curve = Curve::build(profile, s_te + far);
    let pe = curve.pose(s_te);
    let pe = Pose::new(pe.x, pe.y, wrap_angle(pe.heading));
    let map = vec![
        lane([-40.0, 0.0], [s1, 0.0], true, ARTERIAL_LIMIT),
        poly(curve.polyline(s1, s_te), PolylineKind::LaneCenter, true, Some(ARTERIAL_LIMIT), RoadZone::Split),
        lane(ahead(pe, 0.0), ahead(pe, far), true, ARTERIAL_LIMIT),
        lane([s1, 0.0], [s1 + far, 0.0], false, ARTERIAL_LIMIT),
        lane([s1 + far, LANE_WIDTH], [-40.0, LANE_WIDTH], false, ARTERIAL_LIMIT),
        boundary([-40.0, 1.75], [s1 + far, 1.75], RoadZone::Road),
        rect_ring([-60.0, 0.0], 0.0, s1 + far + 60.0, 6.0, 2.5),
        rect_ring(ahead(pe, -5.0), pe.heading, far + 25.0, 2.5, 2.5),
        aabb_ring(curve.bbox(s1, s_te, 3.0), RoadZone::Split),
    ];
    let mut lanes = Vec::new();
    lanes.extend(road_users(LanePath::line([-200.0, 0.0], 0.0), (150.0, 280.0), (5.0, 14.0)));
    lanes.push(vehicle_lane(LanePath::line([400.0, LANE_WIDTH], PI), (300.0, 440.0), (5.0, 14.0)));
    lanes.push(vehicle_lane(LanePath::line(ahead(pe, 10.0), pe.heading), (0.0, 60.0), (6.0, 12.0)));
    Layout {
        curve,
        speed,
        map,
        lanes,
    }
}

// ---------------------------------------------------------------- assembly

fn agent_extent(rng: &mut ChaCha8Rng, kind: AgentKind) -> Extent {
    match kind {
        AgentKind::Vehicle => Extent::new(u(rng, 4.2, 5.2), u(rng, 1.8, 2.0)),
        AgentKind::Pedestrian => Extent::new(0.6, 0.6),
        AgentKind::Cyclist => Extent::new(1.8, 0.7),
    }
}

/// Poses of an agent at steps `-(T_h - 1) ..= REPLAY_STEPS` along `lane`.
fn agent_track(lane: &AgentLane, s_c: f64, v: f64, a: f64) -> Vec<TrajPoint> {
    let first = -(HISTORY_STEPS as i64 - 1);
    (first..=REPLAY_STEPS as i64)
        .map(|k| {
            let t = k as f64 * DT;
            // Decelerating agents stop rather than reverse.
            let (ds, vt) = if a < 0.0 && v + a * t < 0.0 {
                let t_stop = -v / a;
                (v * t_stop + 0.5 * a * t_stop * t_stop, 0.0)
            } else {
                (v * t + 0.5 * a * t * t, (v + a * t).max(0.0))
            };
            let p = lane.path.pose(s_c + ds);
            TrajPoint::new(p.x, p.y, p.heading, vt)
        })
        .collect()
}

fn clashes(a: &[TrajPoint], ea: Extent, b: &[TrajPoint], eb: Extent, margin: f64) -> bool {
    let reach = bounding_radius(ea, margin) + bounding_radius(eb, margin) + 1e-6;
    a.iter().zip(b).any(|(p, q)| {
        (p.x - q.x).hypot(p.y - q.y) <= reach && obb_overlap(p.pose(), ea, q.pose(), eb, margin)
    })
}

fn draw(rng: &mut ChaCha8Rng, ty: ScenarioType) -> Option<Scene> {
    let layout = match ty {
        ScenarioType::Straight => straight_layout(rng),
        ScenarioType::LeftTurnJunction => junction_layout(rng, Turn::Left),
        ScenarioType::StraightJunction => junction_layout(rng, Turn::Through),
        ScenarioType::RightTurnJunction => junction_layout(rng, Turn::Right),
        ScenarioType::Roundabout => roundabout_layout(rng),
        ScenarioType::UTurn => u_turn_layout(rng),
        ScenarioType::Others => {
            if rng.gen_bool(0.5) {
                merge_layout(rng)
            } else {
                split_layout(rng)
            }
        }
    };
    let Layout {
        curve,
        speed,
        map,
        lanes,
    } = layout;

    // Ego states at steps 0..=REPLAY_STEPS.
    let s_steps = speed.arc_lengths(REPLAY_STEPS);
    let ego_track: Vec<TrajPoint> = s_steps
        .iter()
        .map(|&s| {
            let p = curve.pose(s);
            TrajPoint::new(p.x, p.y, p.heading, speed.at(s))
        })
        .collect();
    if ego_track.iter().any(|p| !p.is_valid()) {
        return None;
    }

    let n_target = rng.gen_range(1..=MAX_AGENTS);
    let mut agents: Vec<(Agent, Vec<TrajPoint>)> = Vec::new();
    let total_w: f64 = lanes.iter().map(|l| l.weight).sum();
    let mut tries = 0;
    while agents.len() < n_target && tries < 30 * n_target {
        tries += 1;
        let mut pick = rng.gen_range(0.0..total_w);
        let lane = lanes
            .iter()
            .find(|l| {
                pick -= l.weight;
                pick < 0.0
            })
            .unwrap_or(&lanes[lanes.len() - 1]);
        let extent = agent_extent(rng, lane.kind);
        let s_c = u(rng, lane.s.0, lane.s.1);
        let v = u(rng, lane.v.0.max(0.0), lane.v.1.max(lane.v.0.max(0.0)));
        let parked = lane.kind == AgentKind::Vehicle && rng.gen_bool(0.08);
        let (v, a) = if parked { (0.0, 0.0) } else { (v, u(rng, -0.4, 0.4)) };
        let track = agent_track(lane, s_c, v, a);
        let now = &track[HISTORY_STEPS - 1..];
        if clashes(&ego_track, EGO_EXTENT, now, extent, AGENT_CLEARANCE) {
            continue;
        }
        if agents
            .iter()
            .any(|(o, t)| clashes(&t[HISTORY_STEPS - 1..], o.extent, now, extent, 0.3))
        {
            continue;
        }
        let id = agents.len() as u64 + 1;
        let agent = Agent {
            id,
            kind: lane.kind,
            extent,
            history: Trajectory::new(track[..HISTORY_STEPS].to_vec(), DT),
            future: Some(Trajectory::new(track[HISTORY_STEPS..].to_vec(), DT)),
        };
        agents.push((agent, track));
    }
    if agents.is_empty() {
        return None;
    }

    let n_static = rng.gen_range(0..=MAX_STATICS);
    let mut statics = Vec::new();
    let s_far = s_steps[REPLAY_STEPS].clamp(15.0, 80.0);
    for _ in 0..n_static * 10 {
        if statics.len() == n_static {
            break;
        }
        let s = u(rng, 10.0, s_far);
        let p = curve.pose(s);
        let side = -u(rng, 4.0, 6.5);
        let [x, y] = left_of(p, side);
        let (kind, extent) = match rng.gen_range(0..3) {
            0 => (StaticKind::Cone, Extent::new(0.5, 0.5)),
            1 => (StaticKind::Barrier, Extent::new(2.0, 0.5)),
            _ => (StaticKind::Obstacle, Extent::new(1.5, 1.5)),
        };
        let pose = Pose::new(x, y, wrap_angle(p.heading + u(rng, -0.3, 0.3)));
        let fixed = vec![TrajPoint::new(x, y, pose.heading, 0.0); HISTORY_STEPS + REPLAY_STEPS];
        if clashes(&ego_track, EGO_EXTENT, &fixed, extent, 1.5) {
            continue;
        }
        if agents.iter().any(|(a, t)| clashes(t, a.extent, &fixed, extent, 0.5)) {
            continue;
        }
        statics.push(StaticObject { pose, extent, kind });
    }

    let s0 = 0.0;
    let ego = EgoState {
        pose: ego_track[0],
        acceleration: speed.at(s0) * speed.dv_ds(s0),
        steering: (WHEELBASE * curve.profile.kappa(s0)).atan(),
        extent: EGO_EXTENT,
    };
    let mut agents: Vec<Agent> = agents.into_iter().map(|(a, _)| a).collect();
    agents.shuffle(rng);
    Some(Scene {
        ego,
        agents,
        statics,
        map,
        label: None,
        ego_future: Some(Trajectory::new(ego_track[1..].to_vec(), DT)),
        origin: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profile_turn_heading() {
        let p = Profile::default().straight(3.0).turn(FRAC_PI_2, 0.1, 4.0);
        assert!((p.heading_change() - FRAC_PI_2).abs() < 1e-12);
        let c = Curve::build(p.clone(), p.length() + 5.0);
        assert!((c.pose(p.length()).heading - FRAC_PI_2).abs() < 1e-9);
    }

    #[test]
    fn short_turn_uses_pure_clothoids() {
        let p = Profile::default().turn(0.1, 0.2, 10.0);
        assert!((p.heading_change() - 0.1).abs() < 1e-12);
        assert!(p.segs.iter().all(|s| s.1.abs() <= 0.2 && s.2.abs() <= 0.2));
    }

    #[test]
    fn speed_profile_blends() {
        let sp = SpeedProfile {
            v0: 4.0,
            v1: 8.0,
            s_a: 10.0,
            l_a: 20.0,
        };
        assert_eq!(sp.at(0.0), 4.0);
        assert_eq!(sp.at(40.0), 8.0);
        assert!((sp.at(20.0) - 6.0).abs() < 1e-12);
        assert_eq!(sp.arc_lengths(10).len(), 11);
    }

    #[test]
    fn rect_ring_is_ccw_rectangle() {
        let r = rect_ring([0.0, 0.0], 0.0, 8.0, 2.0, 1.0);
        assert_eq!(r.points.len(), POLYLINE_POINTS);
        assert_eq!(r.points[0], [0.0, -1.0]);
        assert_eq!(r.points[4], [8.0, -1.0]);
        assert_eq!(r.points[5], [8.0, 2.0]);
        assert_eq!(r.points[9], [0.0, 2.0]);
    }

    #[test]
    fn every_type_generates() {
        for ty in ScenarioType::ALL {
            let scenes = generate_synthetic(3, ty, 4).unwrap();
            for s in &scenes {
                assert_eq!(s.label, Some(ty));
                assert!(!s.agents.is_empty() && s.agents.len() <= MAX_AGENTS);
                assert!(s.map.len() <= 16, "{ty}: {} polylines", s.map.len());
                assert_eq!(s.ego_future.as_ref().unwrap().len(), REPLAY_STEPS);
                assert_eq!(s.ego.pose.as_array(), [0.0, 0.0, 0.0, s.ego.pose.speed]);
            }
        }
    }

    #[test]
    fn zero_count_rejected() {
        assert!(generate_synthetic(1, ScenarioType::Straight, 0).is_err());
    }
}
