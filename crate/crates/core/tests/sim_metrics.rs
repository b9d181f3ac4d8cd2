use emoe_core::scenario::{
    generate_synthetic, AgentKind, EgoState, Extent, MapPolyline, Pose, PolylineKind, RoadZone, ScenarioType, Scene,
    StaticKind, StaticObject, TrajPoint, Trajectory, DT,
};
use emoe_core::sim::metrics::{contact_time, detect_events, footprint_drivable, kinematics};
use emoe_core::sim::{
    at_fault_collisions, comfort, drivable_compliance, evaluate_log, progress, run_batch, run_closed_loop,
    score_table, speed_compliance, ttc_within_bound, AgentTrack, ReplayPlanner, SimConfig, SimLog,
    StationaryPlanner,
};

const CAR: Extent = Extent {
    length: 4.8,
    width: 2.0,
};

/// Straight road along +x: ego starts at the origin with a 10 m/s
/// future of `n` steps.
fn straight_scene(n: usize, limit: Option<f64>) -> Scene {
    let fut = (1..=n).map(|k| TrajPoint::new(k as f64, 0.0, 0.0, 10.0)).collect();
    Scene {
        ego: EgoState {
            pose: TrajPoint::new(0.0, 0.0, 0.0, 10.0),
            acceleration: 0.0,
            steering: 0.0,
            extent: CAR,
        },
        agents: Vec::new(),
        statics: Vec::new(),
        map: vec![MapPolyline {
            points: vec![[-20.0, 0.0], [3.0 * n as f64 + 50.0, 0.0]],
            kind: PolylineKind::LaneCenter,
            on_route: true,
            speed_limit: limit,
            zone: RoadZone::Road,
        }],
        label: Some(ScenarioType::Straight),
        ego_future: Some(Trajectory::new(fut, DT)),
        origin: None,
    }
}

fn log(ego: Vec<[f64; 4]>, agents: Vec<AgentTrack>) -> SimLog {
    SimLog {
        scene_id: 0,
        label: Some(ScenarioType::Straight),
        dt: DT,
        ego_extent: CAR,
        ego,
        agents,
        plans: Vec::new(),
        events: Vec::new(),
    }
}

fn track(id: u64, states: Vec<[f64; 4]>) -> AgentTrack {
    AgentTrack {
        id,
        kind: AgentKind::Vehicle,
        extent: CAR,
        states,
    }
}

fn cruise(n: usize, v: f64) -> Vec<[f64; 4]> {
    (0..=n).map(|k| [k as f64 * v * DT, 0.0, 0.0, v]).collect()
}

#[test]
fn head_on_contact_time() {
    // Bumpers 5 m apart, closing at 10 m/s.
    let ego = [0.0, 0.0, 0.0, 5.0];
    let other = [5.0 + CAR.length, 0.0, std::f64::consts::PI, 5.0];
    let t = contact_time(&ego, CAR, &other, CAR, 2.0).unwrap();
    assert!((t - 0.5).abs() < 1e-6, "{t}");
    let l = log(vec![ego], vec![track(1, vec![other])]);
    assert_eq!(ttc_within_bound(&l, 0.95), 0.0);
}

#[test]
fn parallel_lanes_never_close() {
    let n = 50;
    let other: Vec<[f64; 4]> = cruise(n, 8.0).iter().map(|s| [s[0] + 2.0, 3.6, 0.0, 8.0]).collect();
    let l = log(cruise(n, 8.0), vec![track(1, other)]);
    assert_eq!(ttc_within_bound(&l, 0.95), 1.0);
    assert_eq!(ttc_within_bound(&log(cruise(n, 8.0), vec![]), 0.95), 1.0);
}

#[test]
fn progress_replay_stationary_and_half() {
    let n = 150;
    let scene = straight_scene(n, None);
    let full: Vec<[f64; 4]> = (0..=n).map(|k| [k as f64, 0.0, 0.0, 10.0]).collect();
    assert!((progress(&log(full, vec![]), &scene) - 1.0).abs() < 1e-12);
    let still = vec![[0.0, 0.0, 0.0, 0.0]; n + 1];
    assert_eq!(progress(&log(still, vec![]), &scene), 0.0);
    let half: Vec<[f64; 4]> = (0..=n).map(|k| [k as f64 / 2.0, 0.0, 0.0, 5.0]).collect();
    let p = progress(&log(half, vec![]), &scene);
    assert!((p - 0.5).abs() <= 0.02, "{p}");
}

#[test]
fn speed_compliance_levels() {
    let scene = straight_scene(150, Some(10.0));
    assert_eq!(speed_compliance(&log(cruise(150, 10.0), vec![]), &scene), 1.0);
    assert_eq!(speed_compliance(&log(cruise(150, 20.0), vec![]), &scene), 0.0);
    let s = speed_compliance(&log(cruise(150, 12.5), vec![]), &scene);
    assert!((s - 0.75).abs() < 1e-12);
    // Far from any limited lane nothing is enforced.
    let away: Vec<[f64; 4]> = cruise(150, 30.0).iter().map(|s| [s[0], 10.0, 0.0, s[3]]).collect();
    assert_eq!(speed_compliance(&log(away, vec![]), &scene), 1.0);
}

#[test]
fn comfort_catches_velocity_step() {
    let cfg = SimConfig::default();
    assert_eq!(comfort(&log(cruise(150, 10.0), vec![]), &cfg), 1.0);
    let mut ego = cruise(150, 10.0);
    for s in ego.iter_mut().skip(60) {
        s[3] = 10.5;
    }
    let k = kinematics(&ego, DT);
    // 0.5 m/s in one step: 5 m/s^2 then back to zero, jerk +-50 m/s^3.
    assert!(k.jerk.iter().any(|j| j.abs() > 8.0));
    assert_eq!(comfort(&log(ego, vec![]), &cfg), 0.0);
}

#[test]
fn rear_strike_is_not_at_fault() {
    let n = 20;
    let scene = straight_scene(n, None);
    let ego = cruise(n, 5.0);
    // Agent closes from behind at 10 m/s and overlaps the ego's rear.
    let behind: Vec<[f64; 4]> = ego.iter().map(|e| [e[0] - 4.0, 0.0, 0.0, 10.0]).collect();
    let mut l = log(ego.clone(), vec![track(1, behind)]);
    l.events = detect_events(&l, &scene);
    assert!(!l.events.is_empty());
    assert_eq!(at_fault_collisions(&l), 1.0);

    // Ego drives into a slower agent ahead: at fault.
    let ahead: Vec<[f64; 4]> = ego.iter().map(|e| [e[0] + 4.0, 0.0, 0.0, 1.0]).collect();
    let mut l = log(ego, vec![track(2, ahead)]);
    l.events = detect_events(&l, &scene);
    assert_eq!(at_fault_collisions(&l), 0.0);
    let m = evaluate_log(&l, &scene, &SimConfig::default());
    assert_eq!(m.composite, 0.0);
}

#[test]
fn stationary_ego_is_never_at_fault() {
    let n = 10;
    let mut scene = straight_scene(n, None);
    let ego = vec![[0.0, 0.0, 0.0, 0.0]; n + 1];
    let head_on: Vec<[f64; 4]> = (0..=n).map(|_| [3.0, 0.0, std::f64::consts::PI, 6.0]).collect();
    scene.statics.push(StaticObject {
        pose: Pose::new(0.0, 1.5, 0.0),
        extent: Extent::new(1.0, 1.0),
        kind: StaticKind::Cone,
    });
    let mut l = log(ego, vec![track(1, head_on)]);
    l.events = detect_events(&l, &scene);
    assert!(l.events.len() >= 2);
    assert_eq!(at_fault_collisions(&l), 1.0);
}

#[test]
fn drivable_boundary_is_inside() {
    let mut scene = straight_scene(10, None);
    // Ring whose top edge is exactly tangent to the ego footprint.
    scene.map.push(MapPolyline {
        points: vec![[-10.0, -5.0], [100.0, -5.0], [100.0, 1.0], [-10.0, 1.0]],
        kind: PolylineKind::DrivableEdge,
        on_route: false,
        speed_limit: None,
        zone: RoadZone::Road,
    });
    assert!(footprint_drivable(Pose::new(0.0, 0.0, 0.0), CAR, &scene));
    assert!(!footprint_drivable(Pose::new(0.0, 0.01, 0.0), CAR, &scene));
    let mut ego = cruise(10, 5.0);
    assert_eq!(drivable_compliance(&log(ego.clone(), vec![]), &scene), 1.0);
    ego[4][1] = 0.3;
    assert_eq!(drivable_compliance(&log(ego, vec![]), &scene), 0.0);
}

#[test]
fn replay_tracks_the_expert_and_agents_replay_exactly() {
    let cfg = SimConfig::default();
    let scenes = generate_synthetic(4242, ScenarioType::RightTurnJunction, 3).unwrap();
    for (i, s) in scenes.iter().enumerate() {
        let l = run_closed_loop(s, i, &ReplayPlanner, &cfg).unwrap();
        let m = evaluate_log(&l, s, &cfg);
        assert!(m.values().iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(m.progress >= 0.95 && m.collisions == 1.0 && m.drivable == 1.0, "{m:?}");
        // Non-reactive: agent states are the logged futures, bit for bit,
        // whatever the ego does.
        let still = run_closed_loop(s, i, &StationaryPlanner, &cfg).unwrap();
        for (a, (ta, tb)) in s.agents.iter().zip(l.agents.iter().zip(&still.agents)) {
            assert_eq!(ta.states, tb.states);
            let f = a.future.as_ref().unwrap();
            for (k, st) in ta.states.iter().enumerate().skip(1) {
                assert_eq!(*st, f.points[k - 1].as_array());
            }
        }
    }
}

#[test]
fn batch_is_sorted_and_table_has_seven_rows() {
    let cfg = SimConfig::default();
    let scenes = generate_synthetic(77, ScenarioType::Straight, 4).unwrap();
    let sel: Vec<(usize, &Scene)> = scenes.iter().enumerate().rev().collect();
    let logs = run_batch(&sel, &StationaryPlanner, &cfg).unwrap();
    assert!(logs.windows(2).all(|w| w[0].scene_id < w[1].scene_id));
    let runs: Vec<_> = logs
        .iter()
        .map(|l| (ScenarioType::Straight, evaluate_log(l, &scenes[l.scene_id], &cfg)))
        .collect();
    // The ego brakes from its initial speed and covers only a few metres.
    assert!(runs.iter().all(|r| r.1.progress < 0.1));
    let table = score_table(&runs);
    assert_eq!(table.rows.len(), 7);
    let csv = table.to_csv();
    assert_eq!(csv.lines().count(), 1 + 7 + 1);
    assert!(table.to_svg().starts_with("<svg"));
}
