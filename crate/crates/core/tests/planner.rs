use emoe_core::anchors::AnchorBank;
use emoe_core::planner::{extract_features, NetConfig, PlannerNet, PlannerOutput, Routing};
use emoe_core::scenario::{generate_scene, generate_synthetic, ScenarioType, Scene};
use emoe_core::Error;
use emoe_nn::Graph;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn bank_for(cfg: &NetConfig) -> AnchorBank {
    let pool: Vec<Scene> = ScenarioType::ALL
        .iter()
        .flat_map(|&t| generate_synthetic(300, t, cfg.anchors + 2).unwrap())
        .collect();
    AnchorBank::build(&pool, cfg.anchors, 1, cfg.future_steps).unwrap()
}

fn busy_scene() -> Scene {
    (0..50)
        .map(|s| generate_scene(700 + s, ScenarioType::StraightJunction).unwrap())
        .find(|s| s.agents.len() >= 3)
        .expect("a scene with several agents")
}

fn close(a: &PlannerOutput, b: &PlannerOutput, tol: f64) -> bool {
    let flat = |o: &PlannerOutput| -> Vec<f64> {
        o.modes
            .iter()
            .flatten()
            .flatten()
            .chain(&o.mode_logits)
            .chain(&o.router_logits)
            .copied()
            .collect()
    };
    let (x, y) = (flat(a), flat(b));
    x.len() == y.len() && x.iter().zip(&y).all(|(p, q)| (p - q).abs() <= tol * (1.0 + p.abs()))
}

#[test]
fn full_size_output_shapes() {
    let cfg = NetConfig::full();
    let net = PlannerNet::new(cfg.clone(), 0).unwrap();
    let bank = bank_for(&cfg);
    let scene = busy_scene();
    let out = net.forward(&scene, &bank).unwrap();
    assert_eq!(out.modes.len(), 24);
    assert!(out.modes.iter().all(|m| m.len() == 80));
    assert_eq!(out.mode_logits.len(), 24);
    assert_eq!(out.router_logits.len(), 7);
    assert_eq!(out.agent_preds.len(), scene.agents.len());
    assert!(out.agent_preds.iter().all(|p| p.points.len() == 80));
    assert!((out.mode_probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert!((out.router_probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert_eq!(out.expert, out.scenario.index());
    let mut g = Graph::new(&net.store);
    let q = net.mode_queries(&mut g, bank.slice(ScenarioType::Straight)).q;
    assert_eq!(g.value(q).shape(), &[24, 128]);
}

#[test]
fn agent_order_does_not_matter() {
    let cfg = NetConfig::desk();
    let net = PlannerNet::new(cfg.clone(), 2).unwrap();
    let bank = bank_for(&cfg);
    let scene = busy_scene();
    let mut shuffled = scene.clone();
    shuffled.agents.reverse();
    shuffled.statics.reverse();
    shuffled.map.reverse();
    let a = net.forward(&scene, &bank).unwrap();
    let b = net.forward(&shuffled, &bank).unwrap();
    assert!(close(&a, &b, 1e-9));
    for p in &a.agent_preds {
        let q = b.agent_preds.iter().find(|q| q.id == p.id).unwrap();
        for (u, v) in p.points.iter().zip(&q.points) {
            assert!((u[0] - v[0]).abs() < 1e-9 && (u[1] - v[1]).abs() < 1e-9);
        }
    }
}

#[test]
fn empty_scene_plans() {
    let cfg = NetConfig::desk();
    let net = PlannerNet::new(cfg.clone(), 0).unwrap();
    let bank = bank_for(&cfg);
    let mut scene = busy_scene();
    scene.agents.clear();
    scene.statics.clear();
    scene.map.clear();
    let out = net.forward(&scene, &bank).unwrap();
    assert!(out.agent_preds.is_empty());
    assert!(out.modes.iter().flatten().flatten().all(|v| v.is_finite()));
    let plan = net.plan(&scene, &bank).unwrap();
    assert_eq!(plan.len(), 80);
}

#[test]
fn forced_routes_give_different_plans_and_predictions() {
    let cfg = NetConfig::desk();
    let net = PlannerNet::new(cfg.clone(), 4).unwrap();
    let bank = bank_for(&cfg);
    let f = extract_features(&busy_scene(), &cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let run = |t: ScenarioType, rng: &mut ChaCha8Rng| {
        let mut g = Graph::new(&net.store);
        let v = net.forward_graph(&mut g, &f, &bank, Routing::Forced(t), false, rng).unwrap();
        let pred = g.value(v.agent_pred.unwrap()).data().to_vec();
        (g.value(v.traj).data().to_vec(), pred, g.value(v.router_logits).data().to_vec(), v.expert)
    };
    let (ta, pa, ra, ea) = run(ScenarioType::LeftTurnJunction, &mut rng);
    let (tb, pb, rb, eb) = run(ScenarioType::UTurn, &mut rng);
    assert_eq!((ea, eb), (0, 5));
    assert_ne!(ta, tb);
    // The prediction decoder reads the chosen ego mode, so it sees the route.
    assert_ne!(pa, pb);
    // The router never sees the forced label.
    assert_eq!(ra, rb);
}

#[test]
fn checkpoint_round_trip_is_exact() {
    let cfg = NetConfig::desk();
    let net = PlannerNet::new(cfg.clone(), 9).unwrap();
    let bank = bank_for(&cfg);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    net.save(&path).unwrap();
    let back = PlannerNet::load(&path).unwrap();
    assert_eq!(back.cfg, net.cfg);
    let scene = busy_scene();
    assert_eq!(net.forward(&scene, &bank).unwrap(), back.forward(&scene, &bank).unwrap());
    assert!(matches!(
        PlannerNet::load(&dir.path().join("missing.json")),
        Err(Error::MissingArtifact { .. })
    ));
}

#[test]
fn too_many_agents_is_an_error() {
    let cfg = NetConfig {
        max_agents: 1,
        ..NetConfig::desk()
    };
    let scene = busy_scene();
    assert!(matches!(extract_features(&scene, &cfg), Err(Error::CapOverflow { .. })));
}

#[test]
fn bank_size_must_match() {
    let cfg = NetConfig::desk();
    let net = PlannerNet::new(cfg, 0).unwrap();
    let small = bank_for(&NetConfig {
        anchors: 4,
        ..NetConfig::desk()
    });
    assert!(net.forward(&busy_scene(), &small).is_err());
}

#[test]
fn disabled_emoe_shares_one_expert() {
    let cfg = NetConfig::desk().with_ablation(emoe_core::planner::Ablation::without("emoe").unwrap());
    assert_eq!(cfg.expert_count(), 1);
    let net = PlannerNet::new(cfg.clone(), 0).unwrap();
    let out = net.forward(&busy_scene(), &bank_for(&cfg)).unwrap();
    assert_eq!(out.expert, 0);
}
