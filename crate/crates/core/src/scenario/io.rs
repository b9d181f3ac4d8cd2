//! JSON-lines scene files. One scene per line; the scene id is the 0-based
//! line index. Schema: `docs/scene_schema.md`.

use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::types::*;

pub const SCENE_FORMAT_VERSION: u32 = 1;

/// `[x, y, heading, speed]`
type PointRec = [f64; 4];

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneRecord {
    version: u32,
    label: Option<ScenarioType>,
    dt: f64,
    ego: EgoRecord,
    agents: Vec<AgentRecord>,
    statics: Vec<StaticRecord>,
    map: Vec<MapRecord>,
    ego_future: Option<Vec<PointRec>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EgoRecord {
    pose: PointRec,
    acceleration: f64,
    steering: f64,
    /// `[length, width]`
    extent: [f64; 2],
    /// `[x, y, heading]` of the ego in the source frame, when normalized.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    origin: Option<[f64; 3]>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AgentRecord {
    id: u64,
    kind: AgentKind,
    extent: [f64; 2],
    history: Vec<PointRec>,
    future: Option<Vec<PointRec>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StaticRecord {
    pose: [f64; 3],
    extent: [f64; 2],
    kind: StaticKind,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MapRecord {
    points: Vec<[f64; 2]>,
    kind: PolylineKind,
    on_route: bool,
    speed_limit: Option<f64>,
    zone: RoadZone,
}

fn pt_rec(p: &TrajPoint) -> PointRec {
    p.as_array()
}

// Stored values are already canonical; no re-wrapping so the round trip is
// bit-exact.
fn pt(r: &PointRec) -> TrajPoint {
    TrajPoint {
        x: r[0],
        y: r[1],
        heading: r[2],
        speed: r[3],
    }
}

fn traj(r: &[PointRec], dt: f64) -> Trajectory {
    Trajectory::new(r.iter().map(pt).collect(), dt)
}

fn ext(e: [f64; 2]) -> Extent {
    Extent::new(e[0], e[1])
}

fn to_record(s: &Scene) -> Result<SceneRecord> {
    let dt = s
        .ego_future
        .as_ref()
        .map(|t| t.dt)
        .or_else(|| s.agents.first().map(|a| a.history.dt))
        .unwrap_or(DT);
    let same_dt = |t: &Trajectory| t.dt == dt;
    let all_same = s.ego_future.as_ref().is_none_or(same_dt)
        && s.agents.iter().all(|a| same_dt(&a.history) && a.future.as_ref().is_none_or(same_dt));
    if !all_same {
        return Err(Error::Invalid("trajectories in one scene must share dt".into()));
    }
    Ok(SceneRecord {
        version: SCENE_FORMAT_VERSION,
        label: s.label,
        dt,
        ego: EgoRecord {
            pose: pt_rec(&s.ego.pose),
            acceleration: s.ego.acceleration,
            steering: s.ego.steering,
            extent: [s.ego.extent.length, s.ego.extent.width],
            origin: s.origin.map(|o| [o.x, o.y, o.heading]),
        },
        agents: s
            .agents
            .iter()
            .map(|a| AgentRecord {
                id: a.id,
                kind: a.kind,
                extent: [a.extent.length, a.extent.width],
                history: a.history.points.iter().map(pt_rec).collect(),
                future: a.future.as_ref().map(|f| f.points.iter().map(pt_rec).collect()),
            })
            .collect(),
        statics: s
            .statics
            .iter()
            .map(|o| StaticRecord {
                pose: [o.pose.x, o.pose.y, o.pose.heading],
                extent: [o.extent.length, o.extent.width],
                kind: o.kind,
            })
            .collect(),
        map: s
            .map
            .iter()
            .map(|m| MapRecord {
                points: m.points.clone(),
                kind: m.kind,
                on_route: m.on_route,
                speed_limit: m.speed_limit,
                zone: m.zone,
            })
            .collect(),
        ego_future: s.ego_future.as_ref().map(|f| f.points.iter().map(pt_rec).collect()),
    })
}

fn from_record(r: SceneRecord) -> Result<Scene> {
    if r.version != SCENE_FORMAT_VERSION {
        return Err(Error::Invalid(format!(
            "field `version`: unsupported {} (expected {SCENE_FORMAT_VERSION})",
            r.version
        )));
    }
    let dt = r.dt;
    let scene = Scene {
        ego: EgoState {
            pose: pt(&r.ego.pose),
            acceleration: r.ego.acceleration,
            steering: r.ego.steering,
            extent: ext(r.ego.extent),
        },
        agents: r
            .agents
            .iter()
            .map(|a| Agent {
                id: a.id,
                kind: a.kind,
                extent: ext(a.extent),
                history: traj(&a.history, dt),
                future: a.future.as_ref().map(|f| traj(f, dt)),
            })
            .collect(),
        statics: r
            .statics
            .iter()
            .map(|o| StaticObject {
                pose: Pose::new(o.pose[0], o.pose[1], o.pose[2]),
                extent: ext(o.extent),
                kind: o.kind,
            })
            .collect(),
        map: r
            .map
            .into_iter()
            .map(|m| MapPolyline {
                points: m.points,
                kind: m.kind,
                on_route: m.on_route,
                speed_limit: m.speed_limit,
                zone: m.zone,
            })
            .collect(),
        label: r.label,
        ego_future: r.ego_future.as_ref().map(|f| traj(f, dt)),
        origin: r.ego.origin.map(|o| Pose::new(o[0], o[1], o[2])),
    };
    scene.validate()?;
    Ok(scene)
}

/// Serializes one scene to a single JSON line (no trailing newline).
pub fn scene_to_line(scene: &Scene) -> Result<String> {
    Ok(serde_json::to_string(&to_record(scene)?)?)
}

/// Parses one line; `line` is the 1-based line number used in errors.
pub fn scene_from_line(text: &str, line: usize) -> Result<Scene> {
    let rec: SceneRecord = serde_json::from_str(text).map_err(|e| Error::Parse {
        line,
        msg: e.to_string(),
    })?;
    from_record(rec).map_err(|e| Error::Parse {
        line,
        msg: e.to_string(),
    })
}

pub fn scenes_to_jsonl(scenes: &[Scene]) -> Result<String> {
    let mut out = String::new();
    for s in scenes {
        out.push_str(&scene_to_line(s)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn read_scenes(path: &Path) -> Result<Vec<Scene>> {
    let file = fs::File::open(path)?;
    let mut scenes = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        scenes.push(scene_from_line(&line, i + 1)?);
    }
    Ok(scenes)
}

/// Atomic write (temp file + rename).
pub fn write_scenes(scenes: &[Scene], path: &Path) -> Result<()> {
    emoe_nn::write_atomic(path, scenes_to_jsonl(scenes)?.as_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Scene {
        let pts = |n: usize, y: f64| {
            Trajectory::new(
                (0..n).map(|i| TrajPoint::new(i as f64 * 0.7, y, -0.3, 7.0)).collect(),
                DT,
            )
        };
        Scene {
            ego: EgoState {
                pose: TrajPoint::new(0.0, 0.0, 0.0, 7.0),
                acceleration: 0.25,
                steering: -0.01,
                extent: Extent::new(4.8, 2.0),
            },
            agents: vec![Agent {
                id: 42,
                kind: AgentKind::Cyclist,
                extent: Extent::new(1.8, 0.7),
                history: pts(HISTORY_STEPS, 3.5),
                future: Some(pts(FUTURE_STEPS, 3.5)),
            }],
            statics: vec![StaticObject {
                pose: Pose::new(20.0, -4.0, 0.1),
                extent: Extent::new(1.0, 1.0),
                kind: StaticKind::Barrier,
            }],
            map: vec![MapPolyline {
                points: (0..POLYLINE_POINTS).map(|i| [i as f64 / 3.0, 0.1]).collect(),
                kind: PolylineKind::LaneCenter,
                on_route: true,
                speed_limit: Some(13.89),
                zone: RoadZone::Road,
            }],
            label: Some(ScenarioType::Straight),
            ego_future: Some(pts(FUTURE_STEPS, 0.0)),
            origin: Some(Pose::new(1.0 / 3.0, -2.0, 0.7)),
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.jsonl");
        let scenes = vec![sample(), sample()];
        write_scenes(&scenes, &path).unwrap();
        assert_eq!(read_scenes(&path).unwrap(), scenes);
    }

    #[test]
    fn empty_file_is_empty_list() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.jsonl");
        fs::write(&path, "").unwrap();
        assert!(read_scenes(&path).unwrap().is_empty());
    }

    #[test]
    fn truncated_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        let good = scene_to_line(&sample()).unwrap();
        fs::write(&path, format!("{good}\n{}\n", &good[..good.len() / 2])).unwrap();
        match read_scenes(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn missing_and_unknown_fields_are_named() {
        let v: serde_json::Value = serde_json::from_str(&scene_to_line(&sample()).unwrap()).unwrap();
        let mut missing = v.clone();
        missing.as_object_mut().unwrap().remove("statics");
        let err = scene_from_line(&missing.to_string(), 1).unwrap_err().to_string();
        assert!(err.contains("statics"), "{err}");
        let mut extra = v;
        extra.as_object_mut().unwrap().insert("colour".into(), 1.into());
        let err = scene_from_line(&extra.to_string(), 3).unwrap_err().to_string();
        assert!(err.contains("colour") && err.starts_with("line 3"), "{err}");
    }

    #[test]
    fn invalid_geometry_is_rejected() {
        let mut s = sample();
        s.map[0].points.pop();
        let line = scene_to_line(&s).unwrap();
        assert!(matches!(scene_from_line(&line, 1), Err(Error::Parse { line: 1, .. })));
    }
}
