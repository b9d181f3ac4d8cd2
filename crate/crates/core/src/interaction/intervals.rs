//! Space-time conflict intervals between the ego's and each agent's logged
//! futures, with overtake/yield labels.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::{Agent, Extent, Trajectory};

use super::geometry::{bounding_radius, obb_overlap};

/// Footprint inflation (m) used for the conflict predicate.
pub const DEFAULT_CONFLICT_MARGIN: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InteractionLabel {
    /// The ego reaches the conflict region first.
    Overtake,
    Yield,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentInterval {
    /// 1-based agent steps.
    pub t_in: usize,
    pub t_out: usize,
    pub label: InteractionLabel,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InteractionIntervals {
    /// Sorted, disjoint, non-adjacent inclusive step ranges in `[1, T_f]`.
    pub spans: Vec<(usize, usize)>,
    pub per_agent: BTreeMap<u64, AgentInterval>,
}

impl InteractionIntervals {
    pub fn is_empty(&self) -> bool {
        self.spans.is_empty()
    }

    pub fn contains(&self, t: usize) -> bool {
        self.spans.iter().any(|&(a, b)| a <= t && t <= b)
    }
}

/// Union of inclusive integer ranges. Adjacent ranges merge.
pub fn merge_spans(mut spans: Vec<(usize, usize)>) -> Vec<(usize, usize)> {
    spans.sort_unstable();
    let mut out: Vec<(usize, usize)> = Vec::with_capacity(spans.len());
    for (a, b) in spans {
        match out.last_mut() {
            Some(last) if a <= last.1 + 1 => last.1 = last.1.max(b),
            _ => out.push((a, b)),
        }
    }
    out
}

pub(crate) fn check_horizons<'a>(
    ego_future: &Trajectory,
    agents: &'a [Agent],
    horizon: usize,
) -> Result<Vec<&'a Agent>> {
    if ego_future.len() < horizon {
        return Err(Error::Horizon(format!(
            "ego future has {} steps, need {horizon}",
            ego_future.len()
        )));
    }
    let mut out = Vec::new();
    for a in agents {
        let Some(f) = &a.future else { continue };
        if f.len() < horizon {
            return Err(Error::Horizon(format!(
                "agent {} future has {} steps, need {horizon}",
                a.id,
                f.len()
            )));
        }
        if f.dt != ego_future.dt {
            return Err(Error::Horizon(format!("agent {} dt {} differs from ego dt {}", a.id, f.dt, ego_future.dt)));
        }
        out.push(a);
    }
    Ok(out)
}

fn finish(per_agent: BTreeMap<u64, AgentInterval>) -> InteractionIntervals {
    let spans = merge_spans(per_agent.values().map(|iv| (iv.t_in, iv.t_out)).collect());
    InteractionIntervals { spans, per_agent }
}

/// For each agent, `t_in`/`t_out` are the first and last agent steps that
/// conflict with any ego step over the first `horizon` steps. The label
/// comes from the earliest ego step conflicting at `t_in`: overtake when
/// it precedes `t_in`, yield otherwise (ties yield).
pub fn extract_intervals(
    ego_future: &Trajectory,
    ego_extent: Extent,
    agents: &[Agent],
    margin: f64,
    horizon: usize,
) -> Result<InteractionIntervals> {
    let agents = check_horizons(ego_future, agents, horizon)?;
    let ego = &ego_future.points[..horizon];
    let ego_r = bounding_radius(ego_extent, margin);
    // Box around the whole ego sweep for a cheap per-step rejection.
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for p in ego {
        x0 = x0.min(p.x);
        x1 = x1.max(p.x);
        y0 = y0.min(p.y);
        y1 = y1.max(p.y);
    }
    let mut per_agent = BTreeMap::new();
    for a in agents {
        let fut = &a.future.as_ref().expect("filtered").points[..horizon];
        let reach = ego_r + bounding_radius(a.extent, margin) + 1e-6;
        let near_sweep =
            |ta: usize| fut[ta].x >= x0 - reach && fut[ta].x <= x1 + reach && fut[ta].y >= y0 - reach && fut[ta].y <= y1 + reach;
        let first_conflict_ego = |ta: usize| -> Option<usize> {
            if !near_sweep(ta) {
                return None;
            }
            let q = fut[ta];
            (0..horizon).find(|&te| {
                let p = ego[te];
                (p.x - q.x).hypot(p.y - q.y) <= reach
                    && obb_overlap(p.pose(), ego_extent, q.pose(), a.extent, margin)
            })
        };
        let Some((ta_in, te_in)) = (0..horizon).find_map(|ta| first_conflict_ego(ta).map(|te| (ta, te))) else {
            continue;
        };
        let ta_out = (ta_in..horizon).rev().find(|&ta| first_conflict_ego(ta).is_some()).expect("t_in conflicts");
        let label = if te_in < ta_in {
            InteractionLabel::Overtake
        } else {
            InteractionLabel::Yield
        };
        per_agent.insert(
            a.id,
            AgentInterval {
                t_in: ta_in + 1,
                t_out: ta_out + 1,
                label,
            },
        );
    }
    Ok(finish(per_agent))
}

/// Exhaustive reference: every `(t_e, t_a)` pair with no pruning.
pub fn extract_intervals_bruteforce(
    ego_future: &Trajectory,
    ego_extent: Extent,
    agents: &[Agent],
    margin: f64,
    horizon: usize,
) -> Result<InteractionIntervals> {
    let agents = check_horizons(ego_future, agents, horizon)?;
    let mut per_agent = BTreeMap::new();
    for a in agents {
        let fut = &a.future.as_ref().expect("filtered").points;
        let mut pairs = Vec::new();
        for te in 0..horizon {
            for ta in 0..horizon {
                let p = ego_future.points[te];
                if obb_overlap(p.pose(), ego_extent, fut[ta].pose(), a.extent, margin) {
                    pairs.push((te + 1, ta + 1));
                }
            }
        }
        if pairs.is_empty() {
            continue;
        }
        let t_in = pairs.iter().map(|p| p.1).min().unwrap();
        let t_out = pairs.iter().map(|p| p.1).max().unwrap();
        let te = pairs.iter().filter(|p| p.1 == t_in).map(|p| p.0).min().unwrap();
        let label = if te < t_in {
            InteractionLabel::Overtake
        } else {
            InteractionLabel::Yield
        };
        per_agent.insert(a.id, AgentInterval { t_in, t_out, label });
    }
    Ok(finish(per_agent))
}

/// Debug record for one scene.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntervalRecord {
    pub scene_id: usize,
    pub label: Option<crate::scenario::ScenarioType>,
    pub spans: Vec<(usize, usize)>,
    pub per_agent: Vec<AgentIntervalRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentIntervalRecord {
    pub agent_id: u64,
    pub t_in: usize,
    pub t_out: usize,
    pub label: InteractionLabel,
}

impl IntervalRecord {
    pub fn new(scene_id: usize, label: Option<crate::scenario::ScenarioType>, iv: &InteractionIntervals) -> Self {
        Self {
            scene_id,
            label,
            spans: iv.spans.clone(),
            per_agent: iv
                .per_agent
                .iter()
                .map(|(&agent_id, a)| AgentIntervalRecord {
                    agent_id,
                    t_in: a.t_in,
                    t_out: a.t_out,
                    label: a.label,
                })
                .collect(),
        }
    }
}
