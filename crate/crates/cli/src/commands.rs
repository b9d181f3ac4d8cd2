use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, Context};
use emoe_core::ablation::ablate as run_ablation;
use emoe_core::anchors::{collect_endpoints, AnchorBank};
use emoe_core::planner::{Ablation, NetConfig, PlannerNet};
use emoe_core::scenario::{generate_synthetic, label_scenario, read_scenes, write_scenes, ScenarioType, Scene};
use emoe_core::sim::metrics::MetricReport;
use emoe_core::sim::{evaluate_log, run_batch, score_table, select_per_type, NetPlanner, Planner, ReplayPlanner};
use emoe_core::train::gradcheck::gradcheck_planner;
use emoe_core::Error;
use emoe_nn::{write_atomic, GradCheckConfig};
use serde::{Deserialize, Serialize};

use crate::config::Config;

/// Bad flag values and other caller mistakes that clap cannot catch.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(String);

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

pub fn exit_code(e: &anyhow::Error) -> u8 {
    if e.is::<UsageError>() {
        return 2;
    }
    match e.downcast_ref::<Error>() {
        Some(Error::MissingArtifact { .. } | Error::Config(_)) => 2,
        _ => 1,
    }
}

fn error_kind(e: &anyhow::Error) -> &'static str {
    if e.is::<UsageError>() {
        return "usage";
    }
    match e.downcast_ref::<Error>() {
        Some(Error::MissingArtifact { .. }) => "missing_artifact",
        Some(Error::Config(_)) => "config",
        Some(Error::Diverged { .. }) => "diverged",
        Some(Error::Parse { .. } | Error::Json(_)) => "parse",
        Some(Error::Io(_)) => "io",
        Some(_) => "invalid",
        None => "runtime",
    }
}

/// `{"error": kind, "message": ..., "exit": code}` on one line.
pub fn error_json(e: &anyhow::Error, code: u8) -> String {
    let message = format!("{e:#}");
    serde_json::json!({ "error": error_kind(e), "message": message, "exit": code }).to_string()
}

fn require(path: &Path, what: &str) -> anyhow::Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::MissingArtifact {
            what: what.into(),
            path: path.to_path_buf(),
        }
        .into())
    }
}

fn load_scenes(path: &Path, what: &str) -> anyhow::Result<Vec<Scene>> {
    require(path, what)?;
    read_scenes(path).with_context(|| format!("reading {}", path.display()))
}

fn load_bank(cfg: &Config) -> anyhow::Result<AnchorBank> {
    let bank = AnchorBank::load(&cfg.paths.bank)?;
    let net = &cfg.network;
    if bank.k != net.anchors || bank.horizon != net.future_steps {
        return Err(Error::Config(format!(
            "anchor bank has k={} at horizon {}, network expects k={} at horizon {}",
            bank.k, bank.horizon, net.anchors, net.future_steps
        ))
        .into());
    }
    Ok(bank)
}

fn ensure_parent(path: &Path) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

fn write_file(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    ensure_parent(path)?;
    write_atomic(path, bytes).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn histogram(scenes: &[Scene]) -> String {
    let mut counts = [0usize; ScenarioType::COUNT];
    for t in scenes.iter().filter_map(|s| s.label) {
        counts[t.index()] += 1;
    }
    ScenarioType::ALL
        .iter()
        .map(|t| format!("{}={}", t.name(), counts[t.index()]))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Training and evaluation seeds never collide: scene `i` of a type uses
/// `base + i` and the two bases are 2^19 apart.
fn scene_bases(seed: u64) -> (u64, u64) {
    let base = seed.wrapping_shl(20);
    (base, base.wrapping_add(1 << 19))
}

pub fn generate(cfg: &Config) -> anyhow::Result<String> {
    cfg.validate()?;
    let g = &cfg.generate;
    if g.per_type >= 1 << 19 || g.eval_per_type >= 1 << 19 {
        return Err(usage("per-type counts must be below 524288"));
    }
    let (train_base, eval_base) = scene_bases(cfg.seed);
    let mut train = Vec::new();
    let mut eval = Vec::new();
    for ty in ScenarioType::ALL {
        train.extend(generate_synthetic(train_base, ty, g.per_type)?);
        eval.extend(generate_synthetic(eval_base, ty, g.eval_per_type)?);
    }
    ensure_parent(&cfg.paths.dataset)?;
    ensure_parent(&cfg.paths.eval)?;
    write_scenes(&train, &cfg.paths.dataset)?;
    write_scenes(&eval, &cfg.paths.eval)?;
    Ok(format!(
        "generate: {} training scenes -> {}, {} evaluation scenes -> {} (seed {})",
        train.len(),
        cfg.paths.dataset.display(),
        eval.len(),
        cfg.paths.eval.display(),
        cfg.seed
    ))
}

pub fn label(input: &Path, out: &Path) -> anyhow::Result<String> {
    let mut scenes = load_scenes(input, "scene dataset")?;
    let mut changed = 0;
    for s in &mut scenes {
        let t = label_scenario(s)?;
        if s.label != Some(t) {
            changed += 1;
        }
        s.label = Some(t);
    }
    ensure_parent(out)?;
    write_scenes(&scenes, out)?;
    Ok(format!(
        "label: {} scenes -> {} ({} relabeled; {})",
        scenes.len(),
        out.display(),
        changed,
        histogram(&scenes)
    ))
}

pub fn anchors(cfg: &Config) -> anyhow::Result<String> {
    cfg.validate()?;
    let scenes = load_scenes(&cfg.paths.labeled, "labeled dataset")?;
    let horizon = cfg.network.future_steps;
    let bank = AnchorBank::build(&scenes, cfg.network.anchors, cfg.seed, horizon)?;
    ensure_parent(&cfg.paths.bank)?;
    bank.save(&cfg.paths.bank)?;
    let endpoints: Vec<Vec<[f64; 2]>> = ScenarioType::ALL
        .iter()
        .map(|&t| collect_endpoints(&scenes, t, horizon))
        .collect();
    let svg = cfg.paths.bank.with_extension("svg");
    write_file(&svg, bank.to_svg(Some(&endpoints)).as_bytes())?;
    Ok(format!(
        "anchors: {} x {} anchors from {} scenes -> {} (plot {})",
        ScenarioType::COUNT,
        bank.k,
        scenes.len(),
        cfg.paths.bank.display(),
        svg.display()
    ))
}

pub fn train(cfg: &Config) -> anyhow::Result<String> {
    cfg.validate()?;
    let bank = load_bank(cfg)?;
    let scenes = load_scenes(&cfg.paths.labeled, "labeled dataset")?;
    let mut net = PlannerNet::new(cfg.network.clone(), cfg.seed)?;
    let t = Instant::now();
    let report = emoe_core::train::train(&mut net, &scenes, &bank, &cfg.train, Some(&cfg.paths.checkpoints))?;
    let last = report.steps.last().ok_or_else(|| anyhow!("training ran no steps"))?;
    Ok(format!(
        "train: {} steps, {} full epochs, final batch loss {:.4}, router accuracy {:.3}, {:.1}s -> {}",
        report.steps.len(),
        report.epochs.len(),
        last.loss.total,
        last.router_acc,
        t.elapsed().as_secs_f64(),
        cfg.paths.model().display()
    ))
}

pub fn ablate(cfg: &Config, switches: &[&str]) -> anyhow::Result<String> {
    cfg.validate()?;
    let bank = load_bank(cfg)?;
    let scenes = load_scenes(&cfg.paths.labeled, "labeled dataset")?;
    let eval = load_scenes(&cfg.paths.eval, "evaluation dataset")?;
    let names = if switches.is_empty() {
        vec!["emoe", "ssq", "iloss"]
    } else {
        switches.to_vec()
    };
    let mut variants = vec![Ablation::default()];
    for s in names {
        variants.push(Ablation::without(s)?);
    }
    let report = run_ablation(&scenes, &eval, &bank, &cfg.network, &cfg.train, &cfg.sim, &variants, cfg.seed)?;
    let path = cfg.paths.reports.join("ablation.csv");
    write_file(&path, report.to_csv().as_bytes())?;
    let violations = report.ordering_violations();
    let mut line = String::from("ablate:");
    for row in &report.rows {
        let c = row.scores.overall.map_or(f64::NAN, |m| m.composite);
        let _ = write!(line, " {}={c:.4}", row.variant);
    }
    if violations.is_empty() {
        line.push_str("; full model ranks first");
    } else {
        let _ = write!(line, "; ordering finding: {}", violations.join(", "));
    }
    let _ = write!(line, " -> {}", path.display());
    Ok(line)
}

pub fn gradcheck(cfg: &Config) -> anyhow::Result<String> {
    cfg.validate()?;
    let gc = GradCheckConfig {
        step: cfg.gradcheck.step,
        tolerance: cfg.gradcheck.tol,
        ..GradCheckConfig::default()
    };
    let t = Instant::now();
    let outcome = gradcheck_planner(&NetConfig::tiny(), cfg.gradcheck.seed, &gc)?;
    let r = &outcome.report;
    let mut csv = String::from("param,numel,max_rel_error,max_abs_error,worst_index\n");
    for p in &r.params {
        let _ = writeln!(
            csv,
            "{},{},{:e},{:e},{}",
            p.name, p.numel, p.max_rel_error, p.max_abs_error, p.worst_index
        );
    }
    let path = cfg.paths.reports.join("gradcheck.csv");
    write_file(&path, csv.as_bytes())?;
    let line = format!(
        "gradcheck: {} entries in {} tensors, max relative error {:.3e} (tol {:.1e}), {:.1}s -> {}",
        r.checked,
        r.params.len(),
        r.max_rel_error(),
        r.tolerance,
        t.elapsed().as_secs_f64(),
        path.display()
    );
    if !r.passed() {
        let worst: Vec<&str> = r.failures().map(|p| p.name.as_str()).collect();
        return Err(anyhow!("{line}; failing tensors: {}", worst.join(", ")));
    }
    Ok(line)
}

/// One simulated run, as stored in `runs.json`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunRecord {
    pub scene_id: usize,
    pub scenario: ScenarioType,
    pub metrics: MetricReport,
}

pub fn simulate(cfg: &Config, replay: bool) -> anyhow::Result<String> {
    cfg.validate()?;
    let eval = load_scenes(&cfg.paths.eval, "evaluation dataset")?;
    let selected = select_per_type(&eval, cfg.sim.scenes_per_type);
    if selected.is_empty() {
        return Err(Error::Invalid("evaluation dataset has no labeled scenes".into()).into());
    }
    let t = Instant::now();
    let logs = if replay {
        run_batch(&selected, &ReplayPlanner, &cfg.sim)?
    } else {
        let net = PlannerNet::load(&cfg.paths.model())?;
        let bank = AnchorBank::load(&cfg.paths.bank)?;
        let planner: &dyn Planner = &NetPlanner { net: &net, bank: &bank };
        run_batch(&selected, planner, &cfg.sim)?
    };
    let mut runs = Vec::with_capacity(logs.len());
    let mut jsonl = String::new();
    for (log, (id, scene)) in logs.iter().zip(&selected) {
        debug_assert_eq!(log.scene_id, *id);
        runs.push(RunRecord {
            scene_id: *id,
            scenario: scene.label.expect("selected by label"),
            metrics: evaluate_log(log, scene, &cfg.sim),
        });
        jsonl.push_str(&serde_json::to_string(log)?);
        jsonl.push('\n');
    }
    let logs_path = cfg.paths.reports.join("sim_logs.jsonl");
    write_file(&logs_path, jsonl.as_bytes())?;
    write_file(&cfg.paths.runs(), (serde_json::to_string_pretty(&runs)? + "\n").as_bytes())?;
    let composite = runs.iter().map(|r| r.metrics.composite).sum::<f64>() / runs.len() as f64;
    let collisions = runs.iter().filter(|r| r.metrics.collisions < 1.0).count();
    Ok(format!(
        "simulate: {} runs ({} planner, {:.0}s horizon), mean composite {:.4}, {} at-fault collisions, {:.1}s -> {}",
        runs.len(),
        if replay { "replay" } else { "net" },
        cfg.sim.horizon_s,
        composite,
        collisions,
        t.elapsed().as_secs_f64(),
        cfg.paths.runs().display()
    ))
}

pub fn report(cfg: &Config, svg: bool) -> anyhow::Result<String> {
    let runs_path = cfg.paths.runs();
    require(&runs_path, "simulation results")?;
    let runs: Vec<RunRecord> = serde_json::from_slice(&std::fs::read(&runs_path)?)
        .with_context(|| format!("parsing {}", runs_path.display()))?;
    let pairs: Vec<(ScenarioType, MetricReport)> = runs.iter().map(|r| (r.scenario, r.metrics)).collect();
    let table = score_table(&pairs);
    let (path, body): (PathBuf, String) = if svg {
        (cfg.paths.reports.join("scores.svg"), table.to_svg())
    } else {
        (cfg.paths.reports.join("scores.csv"), table.to_csv())
    };
    write_file(&path, body.as_bytes())?;
    let overall = table.overall.map_or(f64::NAN, |m| m.composite);
    Ok(format!(
        "report: {} scenario rows from {} runs, overall composite {:.4} -> {}",
        table.rows.len(),
        runs.len(),
        overall,
        path.display()
    ))
}
