//! Per-scenario anchor banks built from ground-truth endpoints.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::{ScenarioType, Scene};

use super::kmeans::{kmeans, DEFAULT_MAX_ITER, DEFAULT_TOL};

pub const BANK_FORMAT_VERSION: u32 = 1;

/// Endpoint (x, y) at step `horizon` of every scene labeled `ty`.
pub fn collect_endpoints(scenes: &[Scene], ty: ScenarioType, horizon: usize) -> Vec<[f64; 2]> {
    scenes
        .iter()
        .filter(|s| s.label == Some(ty))
        .filter_map(|s| {
            let f = s.ego_future.as_ref()?;
            let p = f.points.get(horizon.min(f.len()).checked_sub(1)?)?;
            Some([p.x, p.y])
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnchorBank {
    pub version: u32,
    pub k: usize,
    pub seed: u64,
    /// Future step whose position was clustered.
    pub horizon: usize,
    /// Endpoints clustered per scenario type.
    pub counts: Vec<usize>,
    /// `g[type][mode] = [x, y]`, sorted by angle then radius within a type.
    pub g: Vec<Vec<[f64; 2]>>,
}

/// Seed for one scenario type's clustering.
pub fn type_seed(seed: u64, ty: ScenarioType) -> u64 {
    seed.wrapping_add((ty.index() as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

fn sort_anchors(c: &mut [[f64; 2]]) {
    c.sort_by(|a, b| {
        a[1].atan2(a[0])
            .total_cmp(&b[1].atan2(b[0]))
            .then(a[0].hypot(a[1]).total_cmp(&b[0].hypot(b[1])))
    });
}

impl AnchorBank {
    /// Clusters each type's endpoints into `k` anchors, types in parallel.
    pub fn build(scenes: &[Scene], k: usize, seed: u64, horizon: usize) -> Result<Self> {
        let per_type: Vec<Vec<[f64; 2]>> =
            ScenarioType::ALL.iter().map(|&t| collect_endpoints(scenes, t, horizon)).collect();
        for (t, pts) in ScenarioType::ALL.iter().zip(&per_type) {
            if pts.len() < k {
                return Err(Error::UnderPopulated {
                    ty: *t,
                    have: pts.len(),
                    need: k,
                });
            }
        }
        let g = ScenarioType::ALL
            .par_iter()
            .zip(per_type.par_iter())
            .map(|(&t, pts)| {
                let mut c = kmeans(pts, k, type_seed(seed, t), DEFAULT_MAX_ITER, DEFAULT_TOL)?.centroids;
                sort_anchors(&mut c);
                Ok(c)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            version: BANK_FORMAT_VERSION,
            k,
            seed,
            horizon,
            counts: per_type.iter().map(Vec::len).collect(),
            g,
        })
    }

    pub fn slice(&self, ty: ScenarioType) -> &[[f64; 2]] {
        &self.g[ty.index()]
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != BANK_FORMAT_VERSION {
            return Err(Error::Invalid(format!("anchor bank version {}", self.version)));
        }
        if self.g.len() != ScenarioType::COUNT || self.counts.len() != ScenarioType::COUNT {
            return Err(Error::Invalid("anchor bank must have 7 scenario slices".into()));
        }
        if self.g.iter().any(|s| s.len() != self.k) {
            return Err(Error::Invalid(format!("every slice must hold {} anchors", self.k)));
        }
        if self.g.iter().flatten().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("anchor bank".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        emoe_nn::write_atomic(path, self.to_json()?.as_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact {
                what: "anchor bank".into(),
                path: path.to_path_buf(),
            });
        }
        let bank: AnchorBank = serde_json::from_slice(&std::fs::read(path)?)?;
        bank.validate()?;
        Ok(bank)
    }

    /// Seven-panel scatter plot of the anchors, with the clustered
    /// endpoints underneath when given.
    pub fn to_svg(&self, endpoints: Option<&[Vec<[f64; 2]>]>) -> String {
        const PANEL: f64 = 240.0;
        const PAD: f64 = 20.0;
        let cols = 4;
        let rows = ScenarioType::COUNT.div_ceil(cols);
        let (w, h) = (cols as f64 * PANEL, rows as f64 * PANEL);
        let mut svg = String::new();
        let _ = writeln!(
            svg,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
        );
        for ty in ScenarioType::ALL {
            let i = ty.index();
            let (ox, oy) = ((i % cols) as f64 * PANEL, (i / cols) as f64 * PANEL);
            let mut pts: Vec<[f64; 2]> = self.g[i].clone();
            if let Some(e) = endpoints {
                pts.extend_from_slice(&e[i]);
            }
            pts.push([0.0, 0.0]);
            let span = pts
                .iter()
                .map(|p| p[0].abs().max(p[1].abs()))
                .fold(1.0f64, f64::max);
            let sc = (PANEL / 2.0 - PAD) / span;
            // Ego frame: x forward drawn upward, y left drawn leftward.
            let map = |p: [f64; 2]| (ox + PANEL / 2.0 - p[1] * sc, oy + PANEL / 2.0 - p[0] * sc);
            let _ = writeln!(
                svg,
                r##"<rect x="{ox}" y="{oy}" width="{PANEL}" height="{PANEL}" fill="none" stroke="#999"/><text x="{}" y="{}">{ty}</text>"##,
                ox + 6.0,
                oy + 14.0
            );
            if let Some(e) = endpoints {
                for &p in &e[i] {
                    let (x, y) = map(p);
                    let _ = writeln!(svg, r##"<circle cx="{x:.2}" cy="{y:.2}" r="1" fill="#bbb"/>"##);
                }
            }
            for &p in &self.g[i] {
                let (x, y) = map(p);
                let _ = writeln!(svg, r##"<circle cx="{x:.2}" cy="{y:.2}" r="3" fill="#c33"/>"##);
            }
            let (x, y) = map([0.0, 0.0]);
            let _ = writeln!(svg, r##"<rect x="{:.2}" y="{:.2}" width="6" height="10" fill="#36c"/>"##, x - 3.0, y - 5.0);
        }
        svg.push_str("</svg>\n");
        svg
    }
}
