//! Rule-based seven-way scenario labeling.
//!
//! Rules, applied in order to the ground-truth ego future (first
//! [`FUTURE_STEPS`] points) and the on-route map polylines that pass within
//! [`ZONE_RADIUS`] of it. `Δh` is the wrapped heading change between the
//! current ego pose and the last future point.
//!
//! 1. on-route roundabout polyline nearby → `Roundabout`
//! 2. `|Δh| > 135°` → `UTurn`
//! 3. on-route merge or split polyline nearby → `Others`
//! 4. on-route junction polyline nearby → `LeftTurnJunction` if `Δh > 15°`,
//!    `RightTurnJunction` if `Δh < -15°`, else `StraightJunction`
//! 5. `|Δh| ≤ 15°` → `Straight`
//! 6. otherwise → `Others`

use crate::error::Result;

use super::types::{wrap_angle, RoadZone, ScenarioType, Scene, FUTURE_STEPS};

pub const STRAIGHT_THRESHOLD_DEG: f64 = 15.0;
pub const UTURN_THRESHOLD_DEG: f64 = 135.0;
/// A zone-tagged route polyline counts when it passes this close (m) to the
/// ego's future path.
pub const ZONE_RADIUS: f64 = 5.0;

/// Net heading change of the ground-truth future, radians in (-π, π].
pub fn net_heading_change(scene: &Scene) -> Result<f64> {
    let fut = scene.future_gt()?;
    let n = fut.len().min(FUTURE_STEPS);
    let last = fut.points.get(n.wrapping_sub(1)).map(|p| p.heading).unwrap_or(scene.ego.pose.heading);
    Ok(wrap_angle(last - scene.ego.pose.heading))
}

fn route_zone_nearby(scene: &Scene, zones: &[RoadZone]) -> Result<bool> {
    let fut = scene.future_gt()?;
    let n = fut.len().min(FUTURE_STEPS);
    let path = &fut.points[..n];
    Ok(scene
        .map
        .iter()
        .filter(|m| m.on_route && zones.contains(&m.zone))
        .any(|m| {
            std::iter::once((scene.ego.pose.x, scene.ego.pose.y))
                .chain(path.iter().map(|p| (p.x, p.y)))
                .any(|(x, y)| m.distance_to(x, y) <= ZONE_RADIUS)
        }))
}

pub fn label_scenario(scene: &Scene) -> Result<ScenarioType> {
    let dh = net_heading_change(scene)?.to_degrees();
    if route_zone_nearby(scene, &[RoadZone::Roundabout])? {
        return Ok(ScenarioType::Roundabout);
    }
    if dh.abs() > UTURN_THRESHOLD_DEG {
        return Ok(ScenarioType::UTurn);
    }
    if route_zone_nearby(scene, &[RoadZone::Merge, RoadZone::Split])? {
        return Ok(ScenarioType::Others);
    }
    if route_zone_nearby(scene, &[RoadZone::Junction])? {
        return Ok(if dh > STRAIGHT_THRESHOLD_DEG {
            ScenarioType::LeftTurnJunction
        } else if dh < -STRAIGHT_THRESHOLD_DEG {
            ScenarioType::RightTurnJunction
        } else {
            ScenarioType::StraightJunction
        });
    }
    if dh.abs() <= STRAIGHT_THRESHOLD_DEG {
        return Ok(ScenarioType::Straight);
    }
    Ok(ScenarioType::Others)
}

#[cfg(test)]
mod tests {
    use std::f64::consts::{FRAC_PI_2, PI};

    use super::*;
    use crate::error::Error;
    use crate::scenario::types::*;

    fn arc_future(total_turn: f64, length: f64) -> Trajectory {
        let mut pts = Vec::new();
        let (mut x, mut y, mut h) = (0.0, 0.0, 0.0);
        let ds = length / FUTURE_STEPS as f64;
        for _ in 0..FUTURE_STEPS {
            h += total_turn / FUTURE_STEPS as f64;
            x += ds * h.cos();
            y += ds * h.sin();
            pts.push(TrajPoint::new(x, y, h, ds / DT));
        }
        Trajectory::new(pts, DT)
    }

    fn line(from: [f64; 2], to: [f64; 2], zone: RoadZone, on_route: bool) -> MapPolyline {
        let points = (0..POLYLINE_POINTS)
            .map(|i| {
                let t = i as f64 / (POLYLINE_POINTS - 1) as f64;
                [from[0] + t * (to[0] - from[0]), from[1] + t * (to[1] - from[1])]
            })
            .collect();
        MapPolyline {
            points,
            kind: PolylineKind::LaneCenter,
            on_route,
            speed_limit: None,
            zone,
        }
    }

    fn scene(fut: Trajectory, map: Vec<MapPolyline>) -> Scene {
        Scene {
            ego: EgoState {
                pose: TrajPoint::new(0.0, 0.0, 0.0, 5.0),
                acceleration: 0.0,
                steering: 0.0,
                extent: Extent::new(4.8, 2.0),
            },
            agents: vec![],
            statics: vec![],
            map,
            label: None,
            ego_future: Some(fut),
            origin: None,
        }
    }

    #[test]
    fn straight_without_junction() {
        let s = scene(arc_future(0.1, 60.0), vec![line([-20.0, 0.0], [100.0, 0.0], RoadZone::Road, true)]);
        assert_eq!(label_scenario(&s).unwrap(), ScenarioType::Straight);
    }

    #[test]
    fn left_turn_inside_junction() {
        let fut = arc_future(FRAC_PI_2, 30.0);
        let s = scene(fut, vec![line([5.0, 0.0], [15.0, 12.0], RoadZone::Junction, true)]);
        assert_eq!(label_scenario(&s).unwrap(), ScenarioType::LeftTurnJunction);
        let mirrored = scene(arc_future(-FRAC_PI_2, 30.0), vec![line([5.0, 0.0], [15.0, -12.0], RoadZone::Junction, true)]);
        assert_eq!(label_scenario(&mirrored).unwrap(), ScenarioType::RightTurnJunction);
    }

    #[test]
    fn junction_off_route_is_ignored() {
        let s = scene(arc_future(0.0, 40.0), vec![line([10.0, 0.0], [20.0, 0.0], RoadZone::Junction, false)]);
        assert_eq!(label_scenario(&s).unwrap(), ScenarioType::Straight);
        let s = scene(arc_future(0.0, 40.0), vec![line([10.0, 0.0], [20.0, 0.0], RoadZone::Junction, true)]);
        assert_eq!(label_scenario(&s).unwrap(), ScenarioType::StraightJunction);
    }

    #[test]
    fn u_turn_with_opposing_route_lane() {
        let s = scene(
            arc_future(PI * 0.98, 25.0),
            vec![
                line([-20.0, 0.0], [10.0, 0.0], RoadZone::Road, true),
                line([10.0, 14.0], [-40.0, 14.0], RoadZone::Road, true),
            ],
        );
        assert_eq!(label_scenario(&s).unwrap(), ScenarioType::UTurn);
    }

    #[test]
    fn merge_and_unmatched_curves_are_others() {
        let s = scene(arc_future(0.05, 50.0), vec![line([0.0, 0.0], [40.0, 3.5], RoadZone::Merge, true)]);
        assert_eq!(label_scenario(&s).unwrap(), ScenarioType::Others);
        let s = scene(arc_future(0.8, 50.0), vec![]);
        assert_eq!(label_scenario(&s).unwrap(), ScenarioType::Others);
    }

    #[test]
    fn roundabout_takes_precedence() {
        let s = scene(arc_future(PI * 0.9, 40.0), vec![line([5.0, 5.0], [10.0, 10.0], RoadZone::Roundabout, true)]);
        assert_eq!(label_scenario(&s).unwrap(), ScenarioType::Roundabout);
    }

    #[test]
    fn missing_future_is_error() {
        let mut s = scene(arc_future(0.0, 10.0), vec![]);
        s.ego_future = None;
        assert!(matches!(label_scenario(&s), Err(Error::MissingGroundTruth)));
    }
}
