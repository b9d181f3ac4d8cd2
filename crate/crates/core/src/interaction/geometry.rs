//! Oriented-box geometry shared by interval extraction, the generator and
//! the closed-loop metrics.

use crate::scenario::{Extent, Pose};

/// Corners of the box centred at `pose`, counter-clockwise starting at the
/// rear-right corner.
pub fn box_corners(pose: Pose, extent: Extent) -> [[f64; 2]; 4] {
    let (s, c) = pose.heading.sin_cos();
    let (hl, hw) = (extent.length / 2.0, extent.width / 2.0);
    let at = |l: f64, w: f64| [pose.x + c * l - s * w, pose.y + s * l + c * w];
    [at(-hl, -hw), at(hl, -hw), at(hl, hw), at(-hl, hw)]
}

/// Radius of the circle circumscribing the box inflated by `margin / 2` per
/// side.
pub fn bounding_radius(extent: Extent, margin: f64) -> f64 {
    ((extent.length + margin) / 2.0).hypot((extent.width + margin) / 2.0)
}

/// Separating-axis test between two oriented rectangles, each inflated by
/// `margin / 2` on every side. Touching boxes overlap. Exactly symmetric in
/// its arguments.
pub fn obb_overlap(pose_a: Pose, extent_a: Extent, pose_b: Pose, extent_b: Extent, margin: f64) -> bool {
    let (sa, ca) = pose_a.heading.sin_cos();
    let (sb, cb) = pose_b.heading.sin_cos();
    let (la, wa) = ((extent_a.length + margin) / 2.0, (extent_a.width + margin) / 2.0);
    let (lb, wb) = ((extent_b.length + margin) / 2.0, (extent_b.width + margin) / 2.0);
    let dx = pose_b.x - pose_a.x;
    let dy = pose_b.y - pose_a.y;
    // Axes: a's long and lateral, then b's.
    let axes = [[ca, sa], [-sa, ca], [cb, sb], [-sb, cb]];
    let (ua, va) = ([ca, sa], [-sa, ca]);
    let (ub, vb) = ([cb, sb], [-sb, cb]);
    let dot = |p: [f64; 2], q: [f64; 2]| p[0] * q[0] + p[1] * q[1];
    axes.iter().all(|&n| {
        let ra = la * dot(ua, n).abs() + wa * dot(va, n).abs();
        let rb = lb * dot(ub, n).abs() + wb * dot(vb, n).abs();
        (dx * n[0] + dy * n[1]).abs() <= ra + rb
    })
}

/// Whether a point lies in the closed box.
pub fn box_contains(pose: Pose, extent: Extent, x: f64, y: f64) -> bool {
    let (lx, ly) = pose.to_local(x, y);
    lx.abs() <= extent.length / 2.0 && ly.abs() <= extent.width / 2.0
}

/// Centres and common radius of three discs covering a box along its long
/// axis.
pub fn footprint_circles(pose: Pose, extent: Extent) -> ([[f64; 2]; 3], f64) {
    let (s, c) = pose.heading.sin_cos();
    let step = extent.length / 3.0;
    let r = (step / 2.0).hypot(extent.width / 2.0);
    let at = |l: f64| [pose.x + c * l, pose.y + s * l];
    ([at(-step), at(0.0), at(step)], r)
}
