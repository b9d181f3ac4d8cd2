//! Rigid transforms between a world frame and the ego-centred frame.

use crate::error::{Error, Result};

use super::types::{Pose, Scene, TrajPoint, Trajectory};

fn map_point(p: &TrajPoint, f: &impl Fn(Pose) -> Pose) -> TrajPoint {
    let q = f(p.pose());
    TrajPoint::new(q.x, q.y, q.heading, p.speed)
}

fn map_traj(t: &Trajectory, f: &impl Fn(Pose) -> Pose) -> Trajectory {
    Trajectory::new(t.points.iter().map(|p| map_point(p, f)).collect(), t.dt)
}

fn transform(scene: &Scene, f: impl Fn(Pose) -> Pose) -> Scene {
    let mut out = scene.clone();
    out.ego.pose = map_point(&scene.ego.pose, &f);
    for (a, src) in out.agents.iter_mut().zip(&scene.agents) {
        a.history = map_traj(&src.history, &f);
        a.future = src.future.as_ref().map(|t| map_traj(t, &f));
    }
    for s in &mut out.statics {
        s.pose = f(s.pose);
    }
    for m in &mut out.map {
        for p in &mut m.points {
            let q = f(Pose::new(p[0], p[1], 0.0));
            *p = [q.x, q.y];
        }
    }
    out.ego_future = scene.ego_future.as_ref().map(|t| map_traj(t, &f));
    out
}

fn ensure_finite(scene: &Scene) -> Result<()> {
    let fin = |p: &TrajPoint| p.x.is_finite() && p.y.is_finite() && p.heading.is_finite();
    let traj_ok = |t: &Trajectory| t.points.iter().all(fin);
    if !fin(&scene.ego.pose) {
        return Err(Error::NonFinite("ego.pose".into()));
    }
    for (i, a) in scene.agents.iter().enumerate() {
        if !traj_ok(&a.history) || !a.future.as_ref().is_none_or(traj_ok) {
            return Err(Error::NonFinite(format!("agents[{i}]")));
        }
    }
    for (i, s) in scene.statics.iter().enumerate() {
        if !s.pose.is_finite() {
            return Err(Error::NonFinite(format!("statics[{i}]")));
        }
    }
    for (i, m) in scene.map.iter().enumerate() {
        if m.points.iter().any(|p| !p[0].is_finite() || !p[1].is_finite()) {
            return Err(Error::NonFinite(format!("map[{i}]")));
        }
    }
    if !scene.ego_future.as_ref().is_none_or(traj_ok) {
        return Err(Error::NonFinite("ego_future".into()));
    }
    Ok(())
}

/// Re-expresses the scene so the ego sits at (0, 0) with heading 0. The
/// ego's pose in the input frame is folded into `origin` so the transform
/// can be undone with [`from_ego_frame`].
pub fn to_ego_frame(scene: &Scene) -> Result<Scene> {
    ensure_finite(scene)?;
    let ego = scene.ego.pose.pose();
    let mut out = transform(scene, |p| ego.pose_to_local(p));
    // Exact zeros for the ego itself.
    out.ego.pose = TrajPoint::new(0.0, 0.0, 0.0, scene.ego.pose.speed);
    out.origin = Some(match scene.origin {
        Some(o) => o.pose_to_world(ego),
        None => ego,
    });
    Ok(out)
}

/// Inverse of [`to_ego_frame`]: returns the scene in the frame recorded in
/// `origin`. Scenes without an origin are returned unchanged.
pub fn from_ego_frame(scene: &Scene) -> Result<Scene> {
    ensure_finite(scene)?;
    let Some(origin) = scene.origin else {
        return Ok(scene.clone());
    };
    let mut out = transform(scene, |p| origin.pose_to_world(p));
    out.origin = None;
    Ok(out)
}
