//! End-to-end acceptance suite. Every criterion prints one PASS/FAIL line;
//! the test fails if any blocking criterion fails. Ablation ordering is
//! reported as a finding and never blocks.
//!
//! Runs at desk scale on one core in roughly a quarter of an hour, most of
//! it in the overfit run.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use emoe_core::ablation::{ablate, standard_variants};
use emoe_core::anchors::{kmeans, AnchorBank, DEFAULT_MAX_ITER, DEFAULT_TOL};
use emoe_core::interaction::{
    extract_intervals, obb_overlap, temporal_weights, AgentInterval, InteractionIntervals, InteractionLabel,
    DEFAULT_CONFLICT_MARGIN,
};
use emoe_core::planner::{NetConfig, PlannerNet};
use emoe_core::scenario::{generate_synthetic, Extent, Pose, ScenarioType, Scene, FUTURE_STEPS};
use emoe_core::sim::{evaluate_log, run_batch, select_per_type, NetPlanner, ReplayPlanner, SimConfig};
use emoe_core::train::gradcheck::gradcheck_planner;
use emoe_core::train::{batch_gradients, evaluate, prepare_samples, train_samples_with, Sample, TrainConfig};
use emoe_nn::{GradCheckConfig, Graph};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

// ------------------------------------------------------------ shared data

/// Scenes for the anchor bank used by the training criteria.
fn bank_pool() -> Vec<Scene> {
    ScenarioType::ALL
        .iter()
        .flat_map(|&t| generate_synthetic(1000, t, 30).unwrap())
        .collect()
}

/// 64 mixed-type training scenes: ten of the first type, nine of the rest.
fn overfit_scenes() -> Vec<Scene> {
    let mut v = Vec::new();
    for (i, &t) in ScenarioType::ALL.iter().enumerate() {
        v.extend(generate_synthetic(5000 + 100 * i as u64, t, if i == 0 { 10 } else { 9 }).unwrap());
    }
    v.truncate(64);
    v
}

fn eval_scenes(per_type: usize) -> Vec<Scene> {
    ScenarioType::ALL
        .iter()
        .flat_map(|&t| generate_synthetic(90_000, t, per_type).unwrap())
        .collect()
}

struct Desk {
    bank: AnchorBank,
    scenes: Vec<Scene>,
    samples: Vec<Sample>,
    tc: TrainConfig,
}

fn desk() -> Desk {
    let cfg = NetConfig::desk();
    let bank = AnchorBank::build(&bank_pool(), cfg.anchors, 0, cfg.future_steps).unwrap();
    let scenes = overfit_scenes();
    let tc = TrainConfig {
        batch_size: 16,
        epochs: 100_000,
        max_steps: Some(2000),
        ..TrainConfig::default()
    };
    let net = PlannerNet::new(cfg, 0).unwrap();
    let refs: Vec<&Scene> = scenes.iter().collect();
    let samples = prepare_samples(&net, &refs, &bank, &tc).unwrap();
    Desk {
        bank,
        scenes,
        samples,
        tc,
    }
}

// ------------------------------------------------------------ criteria

fn c1_gradcheck() -> Outcome {
    let t = Instant::now();
    let out = gradcheck_planner(&NetConfig::tiny(), 0, &GradCheckConfig::default()).map_err(|e| e.to_string())?;
    let secs = t.elapsed().as_secs_f64();
    let r = &out.report;
    let net = PlannerNet::new(NetConfig::tiny(), 0).unwrap();
    ensure!(r.params.len() == net.store.len(), "checked {} of {} tensors", r.params.len(), net.store.len());
    ensure!(r.checked == net.store.numel(), "checked {} of {} entries", r.checked, net.store.numel());
    ensure!(
        r.passed(),
        "max rel error {:.3e}; failing: {:?}",
        r.max_rel_error(),
        r.failures().map(|p| &p.name).collect::<Vec<_>>()
    );
    ensure!(secs <= 300.0, "took {secs:.0}s");
    Ok(format!("{} entries, max rel error {:.2e}, {:.1}s", r.checked, r.max_rel_error(), secs))
}

/// Every `(t_e, t_a)` pair, written independently of the library.
fn interval_oracle(scene: &Scene, margin: f64) -> InteractionIntervals {
    let ego = &scene.ego_future.as_ref().unwrap().points;
    let mut out = InteractionIntervals::default();
    let mut ranges = Vec::new();
    for a in &scene.agents {
        let Some(f) = &a.future else { continue };
        let mut hits: Vec<(usize, usize)> = Vec::new();
        for te in 1..=FUTURE_STEPS {
            for ta in 1..=FUTURE_STEPS {
                if obb_overlap(ego[te - 1].pose(), scene.ego.extent, f.points[ta - 1].pose(), a.extent, margin) {
                    hits.push((te, ta));
                }
            }
        }
        if hits.is_empty() {
            continue;
        }
        let t_in = hits.iter().map(|h| h.1).min().unwrap();
        let t_out = hits.iter().map(|h| h.1).max().unwrap();
        let ego_first = hits.iter().filter(|h| h.1 == t_in).map(|h| h.0).min().unwrap();
        let label = if ego_first < t_in {
            InteractionLabel::Overtake
        } else {
            InteractionLabel::Yield
        };
        out.per_agent.insert(
            a.id,
            AgentInterval { t_in, t_out, label },
        );
        ranges.push((t_in, t_out));
    }
    // Union of inclusive ranges, touching ranges joined.
    let mut covered = [false; FUTURE_STEPS + 2];
    for (a, b) in ranges {
        for c in covered.iter_mut().take(b + 1).skip(a) {
            *c = true;
        }
    }
    let mut t = 1;
    while t <= FUTURE_STEPS {
        if covered[t] {
            let s = t;
            while covered[t + 1] {
                t += 1;
            }
            out.spans.push((s, t));
        }
        t += 1;
    }
    out
}

fn c2_interval_oracle() -> Outcome {
    let margin = DEFAULT_CONFLICT_MARGIN;
    let mut scenes = Vec::new();
    for (i, &t) in ScenarioType::ALL.iter().enumerate() {
        let n = 500 / 7 + usize::from(i < 500 % 7);
        scenes.extend(generate_synthetic(20_000, t, n).unwrap());
    }
    ensure!(scenes.len() == 500, "generated {}", scenes.len());
    let (mut with, mut overtakes, mut yields) = (0, 0, 0);
    for (i, s) in scenes.iter().enumerate() {
        let got = extract_intervals(s.ego_future.as_ref().unwrap(), s.ego.extent, &s.agents, margin, FUTURE_STEPS)
            .map_err(|e| e.to_string())?;
        let want = interval_oracle(s, margin);
        ensure!(got == want, "scene {i}: {got:?} != {want:?}");
        with += usize::from(!got.is_empty());
        for iv in got.per_agent.values() {
            match iv.label {
                InteractionLabel::Overtake => overtakes += 1,
                InteractionLabel::Yield => yields += 1,
            }
        }
    }
    ensure!(with > 0 && overtakes > 0 && yields > 0, "oracle never exercised: {with} {overtakes} {yields}");
    Ok(format!("500 scenes, {with} with intervals, {overtakes} overtake / {yields} yield labels"))
}

fn c3_weights(d: &Desk) -> Outcome {
    ensure!(d.tc.k_r == 0.02, "k_R default is {}", d.tc.k_r);
    let empty = temporal_weights(80, 0.02, &InteractionIntervals::default()).unwrap();
    ensure!((empty.at(80) - 0.201897).abs() <= 1e-6, "w_80 = {}", empty.at(80));
    let mut inside = 0;
    for s in &d.samples {
        let w = &s.weights;
        let outside: Vec<usize> = (1..=80).filter(|&t| !s.intervals.contains(t)).collect();
        for t in 1..=80 {
            if s.intervals.contains(t) {
                ensure!(w.at(t) == 1.0, "in-span w_{t} = {}", w.at(t));
                inside += 1;
            } else {
                let e = (-0.02 * t as f64).exp();
                ensure!((w.at(t) - e).abs() <= 1e-15, "w_{t} = {} vs {e}", w.at(t));
            }
        }
        for p in outside.windows(2) {
            ensure!(w.at(p[1]) <= w.at(p[0]), "increase between {} and {}", p[0], p[1]);
        }
        if !s.intervals.contains(80) {
            ensure!((w.at(80) - 0.201897).abs() <= 1e-6, "w_80 = {}", w.at(80));
        }
    }
    ensure!(inside > 0, "no in-span steps among training samples");
    Ok(format!("w_80 = {:.6}; {inside} in-span steps at weight 1", empty.at(80)))
}

fn c4_expert_isolation(d: &Desk) -> Outcome {
    let mut net = PlannerNet::new(NetConfig::desk(), 3).unwrap();
    let mut order: Vec<usize> = (0..d.samples.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut batches = 0;
    for round in 0..3 {
        use rand::seq::SliceRandom;
        order.shuffle(&mut rng);
        for (b, chunk) in order.chunks(16).enumerate() {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &d.samples[i]).collect();
            let r = batch_gradients(&net, &batch, &d.bank, &d.tc, round * 10 + b).map_err(|e| e.to_string())?;
            let mut hist = vec![0; ScenarioType::COUNT];
            for s in &batch {
                hist[s.label.index()] += 1;
            }
            ensure!(r.expert_counts == hist, "expert counts {:?} vs labels {:?}", r.expert_counts, hist);
            ensure!(r.label_counts == hist, "label counts {:?}", r.label_counts);
            net.store.zero_grad();
            net.store.accumulate(&r.grads);
            for e in 0..ScenarioType::COUNT {
                let ids = net.expert_params(e);
                let nonzero = ids
                    .iter()
                    .flat_map(|&id| net.store.get(id).grad.iter())
                    .filter(|g| **g != 0.0)
                    .count();
                if hist[e] == 0 {
                    ensure!(nonzero == 0, "expert {e} not routed but has {nonzero} nonzero grads");
                } else {
                    ensure!(nonzero > 0, "routed expert {e} got no gradient");
                }
            }
            batches += 1;
        }
    }
    // Same accounting over whole epochs of real training.
    let mut bad = None;
    let tc = TrainConfig {
        epochs: 2,
        max_steps: None,
        ..d.tc.clone()
    };
    let mut hist = vec![0; ScenarioType::COUNT];
    for s in &d.samples {
        hist[s.label.index()] += 1;
    }
    train_samples_with(&mut net, &d.samples, &d.bank, &tc, None, &mut |_, m| {
        if m.expert_counts != hist {
            bad = Some(m.expert_counts.clone());
        }
    })
    .map_err(|e| e.to_string())?;
    ensure!(bad.is_none(), "epoch expert counts {:?} vs {:?}", bad, hist);
    Ok(format!("{batches} batches: non-routed experts exactly zero, counts match labels"))
}

fn c5_anchor_confinement() -> Outcome {
    let cfg = NetConfig::full();
    let net = PlannerNet::new(cfg.clone(), 5).unwrap();
    let bank = AnchorBank::build(&bank_pool(), cfg.anchors, 0, cfg.future_steps).unwrap();
    let mut g = Graph::new(&net.store);
    let q = net.mode_queries(&mut g, bank.slice(ScenarioType::Roundabout)).q;
    let shape = g.value(q).shape().to_vec();
    ensure!(shape == vec![24, 128], "query shape {shape:?}");
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let scenes = eval_scenes(1);
    for s in &scenes {
        let a = net.forward(s, &bank).map_err(|e| e.to_string())?;
        let mut noisy = bank.clone();
        for (t, slice) in noisy.g.iter_mut().enumerate() {
            if t == a.expert {
                continue;
            }
            for p in slice.iter_mut() {
                p[0] += rng.gen_range(-20.0..20.0);
                p[1] += rng.gen_range(-20.0..20.0);
            }
        }
        let b = net.forward(s, &noisy).map_err(|e| e.to_string())?;
        let bits = |o: &emoe_core::planner::PlannerOutput| -> Vec<u64> {
            o.modes
                .iter()
                .flatten()
                .flatten()
                .chain(&o.mode_logits)
                .chain(&o.router_logits)
                .chain(o.agent_preds.iter().flat_map(|p| p.points.iter().flatten()))
                .map(|v| v.to_bits())
                .collect()
        };
        ensure!(a.expert == b.expert && bits(&a) == bits(&b), "output changed for a {:?} scene", s.label);
    }
    Ok(format!("query 24x128; {} scenes bit-identical under foreign-slice noise", scenes.len()))
}

fn c6_kmeans() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut iters = 0;
    for ds in 0..100 {
        let n = rng.gen_range(10..400);
        let k = rng.gen_range(1..=n.min(30));
        let centres: Vec<[f64; 2]> = (0..rng.gen_range(1..6))
            .map(|_| [rng.gen_range(-60.0..60.0), rng.gen_range(-60.0..60.0)])
            .collect();
        let pts: Vec<[f64; 2]> = (0..n)
            .map(|_| {
                let c = centres[rng.gen_range(0..centres.len())];
                [c[0] + rng.gen_range(-8.0..8.0), c[1] + rng.gen_range(-8.0..8.0)]
            })
            .collect();
        let r = kmeans(&pts, k, ds, DEFAULT_MAX_ITER, DEFAULT_TOL).map_err(|e| e.to_string())?;
        for w in r.sse_history.windows(2) {
            // Lloyd steps never raise the objective; allow only rounding.
            ensure!(w[1] <= w[0] * (1.0 + 1e-12), "dataset {ds}: SSE rose {} -> {}", w[0], w[1]);
        }
        let sse: f64 = pts
            .iter()
            .zip(&r.assignment)
            .map(|(p, &a)| (p[0] - r.centroids[a][0]).powi(2) + (p[1] - r.centroids[a][1]).powi(2))
            .sum();
        ensure!((sse - r.sse()).abs() <= 1e-9 * sse.max(1.0), "dataset {ds}: reported SSE {} vs {sse}", r.sse());
        iters += r.sse_history.len();
    }
    for n in [1, 2, 7, 24, 50] {
        let pts: Vec<[f64; 2]> = (0..n).map(|i| [i as f64 * 1.5 - 3.0, (i * i) as f64 * 0.25]).collect();
        let r = kmeans(&pts, n, 3, DEFAULT_MAX_ITER, DEFAULT_TOL).map_err(|e| e.to_string())?;
        ensure!(r.sse() == 0.0, "k = n = {n}: SSE {}", r.sse());
    }
    Ok(format!("100 datasets, {iters} Lloyd iterations monotone; k = n gives SSE 0"))
}

fn c7_overfit(d: &Desk, net: &mut PlannerNet) -> Outcome {
    let t = Instant::now();
    let e0 = evaluate(net, &d.samples, &d.bank, &d.tc.weights).map_err(|e| e.to_string())?;
    let report = train_samples_with(net, &d.samples, &d.bank, &d.tc, None, &mut |_, _| {}).map_err(|e| e.to_string())?;
    let steps = report.steps.len();
    let e1 = evaluate(net, &d.samples, &d.bank, &d.tc.weights).map_err(|e| e.to_string())?;
    let secs = t.elapsed().as_secs_f64();
    let ratio = e1.loss.total / e0.loss.total;
    let types: std::collections::BTreeSet<_> = d.scenes.iter().filter_map(|s| s.label).collect();
    let line = format!(
        "{steps} steps: loss {:.3} -> {:.3} ({:.1}%), ADE {:.3} m, router acc {:.3}, {:.0}s",
        e0.loss.total,
        e1.loss.total,
        100.0 * ratio,
        e1.ade,
        e1.router_acc,
        secs
    );
    ensure!(d.samples.len() == 64 && types.len() == 7, "training set is not 64 mixed scenes");
    ensure!(steps <= 2000, "{steps} steps");
    ensure!(ratio < 0.05, "{line}");
    ensure!(e1.ade < 0.5, "{line}");
    ensure!(e1.router_acc >= 0.99, "{line}");
    ensure!(secs <= 900.0, "{line}");
    Ok(line)
}

/// Closed boxes from the sampled perimeters: two convex regions meet iff
/// a boundary point of one lies in the other.
fn sampled_overlap(pa: Pose, ea: Extent, pb: Pose, eb: Extent, per_box: usize) -> bool {
    let inside = |p: Pose, e: Extent, x: f64, y: f64| {
        let (s, c) = p.heading.sin_cos();
        let (dx, dy) = (x - p.x, y - p.y);
        let (lx, ly) = (c * dx + s * dy, -s * dx + c * dy);
        lx.abs() <= e.length / 2.0 && ly.abs() <= e.width / 2.0
    };
    let hits = |p: Pose, e: Extent, q: Pose, f: Extent| {
        let per = 2.0 * (e.length + e.width);
        let (s, c) = p.heading.sin_cos();
        (0..per_box).any(|i| {
            let u = per * i as f64 / per_box as f64;
            let (l, w) = (e.length, e.width);
            let (lx, ly) = if u < l {
                (u - l / 2.0, -w / 2.0)
            } else if u < l + w {
                (l / 2.0, u - l - w / 2.0)
            } else if u < 2.0 * l + w {
                (l / 2.0 - (u - l - w), w / 2.0)
            } else {
                (-l / 2.0, w / 2.0 - (u - 2.0 * l - w))
            };
            inside(q, f, p.x + c * lx - s * ly, p.y + s * lx + c * ly)
        })
    };
    hits(pa, ea, pb, eb) || hits(pb, eb, pa, ea)
}

fn corners(p: Pose, e: Extent) -> [[f64; 2]; 4] {
    let (s, c) = p.heading.sin_cos();
    let (hl, hw) = (e.length / 2.0, e.width / 2.0);
    [[-hl, -hw], [hl, -hw], [hl, hw], [-hl, hw]].map(|[l, w]| [p.x + c * l - s * w, p.y + s * l + c * w])
}

/// Smallest vertex-to-edge distance between the two outlines.
fn tangency_gap(pa: Pose, ea: Extent, pb: Pose, eb: Extent) -> f64 {
    let seg = |p: [f64; 2], a: [f64; 2], b: [f64; 2]| {
        let (vx, vy) = (b[0] - a[0], b[1] - a[1]);
        let t = (((p[0] - a[0]) * vx + (p[1] - a[1]) * vy) / (vx * vx + vy * vy)).clamp(0.0, 1.0);
        (p[0] - a[0] - t * vx).hypot(p[1] - a[1] - t * vy)
    };
    let (ca, cb) = (corners(pa, ea), corners(pb, eb));
    let mut best = f64::INFINITY;
    for (v, other) in [(ca, cb), (cb, ca)] {
        for p in v {
            for i in 0..4 {
                best = best.min(seg(p, other[i], other[(i + 1) % 4]));
            }
        }
    }
    best
}

fn c8_geometry_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (mut agree, mut overlaps, mut worst_gap) = (0, 0, 0.0f64);
    for _ in 0..1000 {
        let pose = |rng: &mut ChaCha8Rng| {
            Pose::new(
                rng.gen_range(-5.0..5.0),
                rng.gen_range(-5.0..5.0),
                rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI),
            )
        };
        let ext = |rng: &mut ChaCha8Rng| Extent::new(rng.gen_range(0.5..6.0), rng.gen_range(0.3..3.0));
        let (pa, ea, pb, eb) = (pose(&mut rng), ext(&mut rng), pose(&mut rng), ext(&mut rng));
        let margin = if rng.gen_bool(0.5) { 0.0 } else { rng.gen_range(0.0..1.0) };
        let grow = |e: Extent| Extent::new(e.length + margin, e.width + margin);
        let sat = obb_overlap(pa, ea, pb, eb, margin);
        let sampled = sampled_overlap(pa, grow(ea), pb, grow(eb), 50_000);
        overlaps += usize::from(sat);
        if sat == sampled {
            agree += 1;
        } else {
            let gap = tangency_gap(pa, grow(ea), pb, grow(eb));
            worst_gap = worst_gap.max(gap);
            ensure!(gap <= 1e-3, "disagreement {gap:.2e} m from tangency (sat {sat})");
        }
    }
    ensure!(agree >= 999, "agreement {agree}/1000");
    ensure!(overlaps > 100 && overlaps < 900, "unbalanced pairs: {overlaps} overlapping");
    Ok(format!("{agree}/1000 agree ({overlaps} overlapping), worst disagreement gap {worst_gap:.1e} m"))
}

fn c9_closed_loop(net: &PlannerNet, bank: &AnchorBank) -> Outcome {
    let cfg = SimConfig::default();
    let scenes = eval_scenes(cfg.scenes_per_type);
    let sel = select_per_type(&scenes, cfg.scenes_per_type);
    ensure!(sel.len() == 7 * 20, "{} scenes selected", sel.len());
    let t = Instant::now();
    let logs = run_batch(&sel, &NetPlanner { net, bank }, &cfg).map_err(|e| e.to_string())?;
    let mut composite = 0.0;
    for (l, (_, s)) in logs.iter().zip(&sel) {
        ensure!(l.steps() == 150, "scene {} ran {} steps", l.scene_id, l.steps());
        let m = evaluate_log(l, s, &cfg);
        ensure!(m.values().iter().all(|v| (0.0..=1.0).contains(v)), "metric out of range: {m:?}");
        composite += m.composite;
    }
    let replay = run_batch(&sel, &ReplayPlanner, &cfg).map_err(|e| e.to_string())?;
    let mut min_progress = 1.0f64;
    for (l, (_, s)) in replay.iter().zip(&sel) {
        let m = evaluate_log(l, s, &cfg);
        ensure!(m.values().iter().all(|v| (0.0..=1.0).contains(v)), "metric out of range: {m:?}");
        ensure!(m.collisions == 1.0 && m.drivable == 1.0, "replay scene {}: {m:?}", l.scene_id);
        ensure!(m.progress >= 0.95, "replay scene {} progress {}", l.scene_id, m.progress);
        min_progress = min_progress.min(m.progress);
    }
    Ok(format!(
        "140 planner runs in {:.0}s, mean composite {:.3}; replay min progress {:.3}",
        t.elapsed().as_secs_f64(),
        composite / logs.len() as f64,
        min_progress
    ))
}

/// `Ok` when the full model ranks first; the caller treats `Err` as a
/// finding.
fn c10_ablation(bank: &AnchorBank) -> Result<Outcome, String> {
    let train: Vec<Scene> = ScenarioType::ALL
        .iter()
        .flat_map(|&t| generate_synthetic(40_000, t, 20).unwrap())
        .collect();
    let eval = eval_scenes(20);
    let tc = TrainConfig {
        batch_size: 16,
        epochs: 1000,
        max_steps: Some(400),
        ..TrainConfig::default()
    };
    let sim = SimConfig::default();
    let t = Instant::now();
    let report = ablate(&train, &eval, bank, &NetConfig::desk(), &tc, &sim, &standard_variants(), 0)
        .map_err(|e| e.to_string())?;
    let scores: Vec<String> = report
        .rows
        .iter()
        .map(|r| format!("{}={:.4}", r.variant, r.scores.overall.map_or(f64::NAN, |m| m.composite)))
        .collect();
    let csv = report.to_csv();
    if csv.lines().count() < 5 {
        return Err(format!("report has {} lines", csv.lines().count()));
    }
    let line = format!("{} ({:.0}s)", scores.join(", "), t.elapsed().as_secs_f64());
    let v = report.ordering_violations();
    Ok(if v.is_empty() {
        Ok(line)
    } else {
        Err(format!("{line}; beaten by {}", v.join(", ")))
    })
}

fn c11_determinism() -> Outcome {
    let bin = env!("CARGO_BIN_EXE_emoe");
    let cfg = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/desk.toml");
    let steps: [&[&str]; 8] = [
        &["generate", "--per-type", "30", "--eval-per-type", "2"],
        &["label"],
        &["anchors"],
        &["train", "--max-steps", "6"],
        &["simulate"],
        &["report"],
        &["report", "--format", "svg"],
        &["gradcheck"],
    ];
    let run = |threads: &str| -> Result<(TempDir, BTreeMap<String, Vec<u8>>), String> {
        let dir = TempDir::new().map_err(|e| e.to_string())?;
        for args in steps {
            let out = Command::new(bin)
                .current_dir(dir.path())
                .args(["--config", cfg, "--threads", threads])
                .args(args)
                .output()
                .map_err(|e| e.to_string())?;
            if !out.status.success() {
                return Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)));
            }
        }
        let files = collect_files(dir.path());
        Ok((dir, files))
    };
    let (_a, first) = run("1")?;
    let (_b, second) = run("1")?;
    let (_c, four) = run("4")?;
    ensure!(first.len() >= 10, "only {} artifacts", first.len());
    for (name, other) in [("second run", &second), ("4 threads", &four)] {
        ensure!(
            first.keys().eq(other.keys()),
            "{name}: artifact sets differ"
        );
        for (k, v) in &first {
            ensure!(other[k] == *v, "{name}: {k} differs");
        }
    }
    Ok(format!("{} artifacts byte-identical across two runs and 1/4 threads", first.len()))
}

fn collect_files(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().display().to_string();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

// ------------------------------------------------------------ driver

fn guarded(f: impl FnOnce() -> Outcome) -> Outcome {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panic".into()))
    })
}

#[test]
fn acceptance() {
    let mut failed = Vec::new();
    let mut record = |id: usize, name: &str, r: Outcome| {
        match &r {
            Ok(m) => println!("[{id:>2}] PASS  {name}: {m}"),
            Err(m) => {
                println!("[{id:>2}] FAIL  {name}: {m}");
                failed.push(id);
            }
        }
    };

    record(1, "gradient integrity", guarded(c1_gradcheck));
    record(2, "interaction oracle equivalence", guarded(c2_interval_oracle));
    let d = desk();
    record(3, "temporal weight values", guarded(|| c3_weights(&d)));
    record(4, "expert isolation and load balance", guarded(|| c4_expert_isolation(&d)));
    record(5, "anchor confinement", guarded(c5_anchor_confinement));
    record(6, "k-means properties", guarded(c6_kmeans));
    let mut net = PlannerNet::new(NetConfig::desk(), 0).unwrap();
    record(7, "overfit sanity", guarded(|| c7_overfit(&d, &mut net)));
    record(8, "geometry oracle", guarded(c8_geometry_oracle));
    record(9, "closed-loop smoke and metric bounds", guarded(|| c9_closed_loop(&net, &d.bank)));
    match catch_unwind(AssertUnwindSafe(|| c10_ablation(&d.bank))) {
        Ok(Ok(Ok(m))) => println!("[10] PASS  ablation direction: {m}"),
        Ok(Ok(Err(m))) => println!("[10] FAIL  ablation direction (finding, non-blocking): {m}"),
        Ok(Err(m)) => record(10, "ablation report", Err(m)),
        Err(_) => record(10, "ablation report", Err("panic".into())),
    }
    record(11, "determinism", guarded(c11_determinism));

    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
