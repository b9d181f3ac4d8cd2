//! The planner network: scene encoder, scenario router, expert decoder,
//! trajectory and mode heads, and the interaction-aware prediction decoder.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use emoe_nn::layers::{
    log_spaced_bands, AttentionBlock, AttentionSublayer, FeedForward, Fope, Linear, Mlp, MlpMixer,
    StateDropoutEncoder,
};
use emoe_nn::{softmax, Graph, ParamId, ParamStore, Tensor, Var};

use crate::anchors::{make_queries, AnchorBank, ModeQuerySet};
use crate::error::{Error, Result};
use crate::scenario::{ScenarioType, Scene, TrajPoint, Trajectory, DT};

use super::config::NetConfig;
use super::features::{
    extract_features, SceneFeatures, AGENT_FEATURES, EGO_FEATURES, EGO_KINEMATIC, MAP_FEATURES, STATIC_FEATURES,
};

/// Token type rows of the learned type embedding.
const TOKEN_EGO: usize = 0;
const TOKEN_AGENT: usize = 1;
const TOKEN_STATIC: usize = 2;
const TOKEN_MAP: usize = 3;

/// How the expert and anchor slice are chosen. The router logits are
/// produced either way.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Routing {
    /// Teacher forcing by the ground-truth label.
    Forced(ScenarioType),
    /// Router argmax.
    Predicted,
}

/// Encoded scene tokens.
pub struct SceneEncoding {
    /// Valid tokens only, in order `[ego, agents, statics, map]`.
    pub tokens: Var,
    /// The same tokens scattered into the padded layout
    /// `1 + N_a + N_s + N_m` rows, zero where invalid.
    pub padded: Var,
    pub mask: Vec<bool>,
    pub n_agents: usize,
}

/// Graph handles of one forward pass.
pub struct ForwardVars {
    /// `K_a x 4T_f`, column blocks `[x | y | heading | speed]`.
    pub traj: Var,
    /// `1 x K_a`
    pub mode_logits: Var,
    /// `1 x 7`
    pub router_logits: Var,
    /// `N x 2T_f` absolute agent positions, column blocks `[x | y]`.
    pub agent_pred: Option<Var>,
    pub scenario: ScenarioType,
    pub expert: usize,
    /// Most probable mode; the prediction decoder attended to its features.
    pub ego_mode: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AgentPrediction {
    pub id: u64,
    pub points: Vec<[f64; 2]>,
}

/// Decoded network output, in the ego frame.
#[derive(Clone, Debug, PartialEq)]
pub struct PlannerOutput {
    pub scenario: ScenarioType,
    pub expert: usize,
    pub router_logits: Vec<f64>,
    pub router_probs: Vec<f64>,
    /// `modes[k][t] = [x, y, heading, speed]`
    pub modes: Vec<Vec<[f64; 4]>>,
    pub mode_logits: Vec<f64>,
    pub mode_probs: Vec<f64>,
    pub best_mode: usize,
    pub agent_preds: Vec<AgentPrediction>,
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Anchor nearest to `endpoint`; ties go to the lowest index.
pub fn nearest_anchor(anchors: &[[f64; 2]], endpoint: [f64; 2]) -> usize {
    let d: Vec<f64> = anchors
        .iter()
        .map(|a| -((a[0] - endpoint[0]).powi(2) + (a[1] - endpoint[1]).powi(2)))
        .collect();
    argmax(&d)
}

pub struct PlannerNet {
    pub cfg: NetConfig,
    pub store: ParamStore,
    ego_enc: StateDropoutEncoder,
    agent_fope: Fope,
    agent_mixer: MlpMixer,
    static_mlp: Mlp,
    map_in: Linear,
    map_mixer: MlpMixer,
    type_emb: ParamId,
    encoder: Vec<AttentionBlock>,
    router: Mlp,
    query_base: ParamId,
    anchor_fope: Option<Fope>,
    dec_self: Vec<AttentionSublayer>,
    dec_cross: Vec<AttentionSublayer>,
    /// `experts[layer][expert]`
    experts: Vec<Vec<FeedForward>>,
    traj_head: Mlp,
    mode_head: Mlp,
    pred_blocks: Vec<AttentionBlock>,
    pred_head: Mlp,
}

impl PlannerNet {
    pub fn new(cfg: NetConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = &mut rng;
        let s = &mut ParamStore::new();
        let d = cfg.d_model;
        let bands = log_spaced_bands(cfg.fope_bands, 200.0, 1.0);

        let ego_enc = StateDropoutEncoder::new(s, "enc.ego", EGO_FEATURES, d, EGO_KINEMATIC.to_vec(), cfg.drop_prob, r)?;
        let agent_fope = Fope::new(s, "enc.agent.fope", AGENT_FEATURES, bands.clone(), d, r)?;
        let agent_mixer = MlpMixer::new(
            s,
            "enc.agent.mixer",
            cfg.history_steps,
            d,
            cfg.mixer_token_hidden,
            cfg.mixer_channel_hidden,
            r,
        )?;
        let static_mlp = Mlp::new(s, "enc.static", STATIC_FEATURES, d, d, r)?;
        let map_in = Linear::new(s, "enc.map.in", MAP_FEATURES, d, r)?;
        let map_mixer = MlpMixer::new(
            s,
            "enc.map.mixer",
            cfg.polyline_points,
            d,
            cfg.mixer_token_hidden,
            cfg.mixer_channel_hidden,
            r,
        )?;
        let type_emb = s.add_xavier("enc.type_emb", 4, d, r)?;
        let encoder = (0..cfg.encoder_layers)
            .map(|l| AttentionBlock::new(s, &format!("enc.layer{l}"), d, cfg.heads, cfg.ffn_hidden, r))
            .collect::<emoe_nn::Result<Vec<_>>>()?;
        let router = Mlp::new(s, "router", d, d, ScenarioType::COUNT, r)?;
        let query_base = s.add_xavier("dec.query_base", cfg.anchors, d, r)?;
        let anchor_fope = if cfg.ablation.ssq {
            Some(Fope::new(s, "dec.anchor_fope", 2, bands, d, r)?)
        } else {
            None
        };
        let mut dec_self = Vec::new();
        let mut dec_cross = Vec::new();
        let mut experts = Vec::new();
        for l in 0..cfg.decoder_layers {
            dec_self.push(AttentionSublayer::new(s, &format!("dec.layer{l}.self"), d, cfg.heads, r)?);
            dec_cross.push(AttentionSublayer::new(s, &format!("dec.layer{l}.cross"), d, cfg.heads, r)?);
            experts.push(
                (0..cfg.expert_count())
                    .map(|e| FeedForward::new(s, &format!("dec.layer{l}.expert{e}"), d, cfg.expert_hidden, r))
                    .collect::<emoe_nn::Result<Vec<_>>>()?,
            );
        }
        let tf = cfg.future_steps;
        let traj_head = Mlp::new(s, "head.traj", d, cfg.head_hidden, 5 * tf, r)?;
        let mode_head = Mlp::new(s, "head.mode", d, cfg.head_hidden, 1, r)?;
        let pred_blocks = (0..cfg.pred_layers)
            .map(|l| AttentionBlock::new(s, &format!("pred.layer{l}"), d, cfg.heads, cfg.ffn_hidden, r))
            .collect::<emoe_nn::Result<Vec<_>>>()?;
        let pred_head = Mlp::new(s, "head.pred", d, cfg.head_hidden, 2 * tf, r)?;

        Ok(Self {
            store: std::mem::take(s),
            cfg,
            ego_enc,
            agent_fope,
            agent_mixer,
            static_mlp,
            map_in,
            map_mixer,
            type_emb,
            encoder,
            router,
            query_base,
            anchor_fope,
            dec_self,
            dec_cross,
            experts,
            traj_head,
            mode_head,
            pred_blocks,
            pred_head,
        })
    }

    /// Parameter ids of one decoder expert (all layers).
    pub fn expert_params(&self, expert: usize) -> Vec<ParamId> {
        let mut ids = Vec::new();
        for layer in &self.experts {
            let f = &layer[expert];
            for lin in [&f.mlp.fc1, &f.mlp.fc2] {
                ids.push(lin.w);
                ids.extend(lin.b);
            }
            ids.push(f.norm.gamma);
            ids.push(f.norm.beta);
        }
        ids
    }

    fn typed(&self, g: &mut Graph, x: Var, ty: usize) -> Var {
        let n = g.value(x).rows();
        let emb = g.param(self.type_emb);
        let rows = g.gather_rows(emb, &vec![ty; n]);
        g.add(x, rows)
    }

    /// Encodes every valid entity and runs the transformer encoder over them.
    pub fn encode_scene(&self, g: &mut Graph, f: &SceneFeatures, training: bool, rng: &mut impl Rng) -> SceneEncoding {
        let cfg = &self.cfg;
        let mut parts = Vec::new();
        let ego = self.ego_enc.forward(g, &f.ego, training, rng);
        parts.push(self.typed(g, ego, TOKEN_EGO));
        if !f.agents.is_empty() {
            let seqs: Vec<Var> = f.agents.iter().map(|a| self.agent_fope.forward(g, &a.history)).collect();
            let a = self.agent_mixer.forward(g, &seqs);
            parts.push(self.typed(g, a, TOKEN_AGENT));
        }
        if !f.statics.is_empty() {
            let rows = Tensor::matrix(
                f.statics.len(),
                STATIC_FEATURES,
                f.statics.iter().flatten().copied().collect(),
            );
            let x = g.input(rows);
            let s = self.static_mlp.forward(g, x);
            parts.push(self.typed(g, s, TOKEN_STATIC));
        }
        if !f.polylines.is_empty() {
            let seqs: Vec<Var> = f
                .polylines
                .iter()
                .map(|p| {
                    let x = g.input(p.clone());
                    self.map_in.forward(g, x)
                })
                .collect();
            let m = self.map_mixer.forward(g, &seqs);
            parts.push(self.typed(g, m, TOKEN_MAP));
        }
        let mut x = g.concat_rows(&parts);
        for block in &self.encoder {
            x = block.forward(g, x, None, None);
        }

        let (na, ns, nm) = (f.agents.len(), f.statics.len(), f.polylines.len());
        let (ca, cs) = (cfg.max_agents, cfg.max_statics);
        let total = 1 + ca + cs + cfg.max_polylines;
        let mut idx = vec![0];
        idx.extend((0..na).map(|i| 1 + i));
        idx.extend((0..ns).map(|i| 1 + ca + i));
        idx.extend((0..nm).map(|i| 1 + ca + cs + i));
        let mut mask = vec![false; total];
        for &i in &idx {
            mask[i] = true;
        }
        let padded = g.scatter_rows(x, &idx, total);
        SceneEncoding {
            tokens: x,
            padded,
            mask,
            n_agents: na,
        }
    }

    /// Mean-pooled scene context to seven routing logits (`1 x 7`).
    pub fn route(&self, g: &mut Graph, enc: &SceneEncoding) -> Var {
        let pooled = g.mean_rows(enc.tokens);
        self.router.forward(g, pooled)
    }

    /// Decoder queries for one anchor slice (`K_a x D`).
    pub fn mode_queries(&self, g: &mut Graph, anchors: &[[f64; 2]]) -> ModeQuerySet {
        let base = g.param(self.query_base);
        make_queries(g, anchors, base, self.anchor_fope.as_ref())
    }

    /// `L_d` layers of self-attention, scene cross-attention and the chosen
    /// expert's feed-forward. Returns `K_a x D` mode features.
    pub fn emoe_decode(&self, g: &mut Graph, enc: &SceneEncoding, anchors: &[[f64; 2]], expert: usize) -> Var {
        let mut q = self.mode_queries(g, anchors).q;
        let e = if self.cfg.ablation.emoe { expert } else { 0 };
        for l in 0..self.cfg.decoder_layers {
            q = self.dec_self[l].forward(g, q, q, None);
            q = self.dec_cross[l].forward(g, q, enc.tokens, None);
            q = self.experts[l][e].forward(g, q);
        }
        q
    }

    /// Mode features to `K_a x 4T_f` trajectories and `1 x K_a` mode logits.
    pub fn trajectory_head(&self, g: &mut Graph, modes: Var) -> (Var, Var) {
        let tf = self.cfg.future_steps;
        let raw = self.traj_head.forward(g, modes);
        let x = g.slice_cols(raw, 0, tf);
        let x = g.scale(x, self.cfg.pos_scale);
        let y = g.slice_cols(raw, tf, tf);
        let y = g.scale(y, self.cfg.pos_scale);
        let hs = g.slice_cols(raw, 2 * tf, tf);
        let hc = g.slice_cols(raw, 3 * tf, tf);
        let h = g.atan2(hs, hc);
        let v = g.slice_cols(raw, 4 * tf, tf);
        let v = g.softplus(v);
        let v = g.scale(v, self.cfg.speed_scale);
        let traj = g.concat_cols(&[x, y, h, v]);
        let logits = self.mode_head.forward(g, modes);
        let k = g.value(logits).rows();
        let logits = g.reshape(logits, 1, k);
        (traj, logits)
    }

    /// Agent tokens attend to the scene and, unless ablated, the given ego
    /// mode feature. Returns `N x 2T_f` absolute positions.
    pub fn predict_agents(&self, g: &mut Graph, enc: &SceneEncoding, f: &SceneFeatures, ego_mode: Var) -> Option<Var> {
        let n = enc.n_agents;
        if n == 0 {
            return None;
        }
        let tf = self.cfg.future_steps;
        let idx: Vec<usize> = (1..=n).collect();
        let mut q = g.gather_rows(enc.tokens, &idx);
        let keys = if self.cfg.ablation.iloss {
            g.concat_rows(&[enc.tokens, ego_mode])
        } else {
            enc.tokens
        };
        for block in &self.pred_blocks {
            q = block.forward(g, q, Some(keys), None);
        }
        let raw = self.pred_head.forward(g, q);
        let off = g.scale(raw, self.cfg.pos_scale);
        let mut cur = Vec::with_capacity(n * 2 * tf);
        for a in &f.agents {
            cur.extend(std::iter::repeat_n(a.current[0], tf));
            cur.extend(std::iter::repeat_n(a.current[1], tf));
        }
        let cur = g.input(Tensor::matrix(n, 2 * tf, cur));
        Some(g.add(off, cur))
    }

    /// Full forward pass on a graph.
    pub fn forward_graph(
        &self,
        g: &mut Graph,
        f: &SceneFeatures,
        bank: &AnchorBank,
        routing: Routing,
        training: bool,
        rng: &mut impl Rng,
    ) -> Result<ForwardVars> {
        if bank.k != self.cfg.anchors {
            return Err(Error::Config(format!(
                "anchor bank has {} anchors per type, network expects {}",
                bank.k, self.cfg.anchors
            )));
        }
        let enc = self.encode_scene(g, f, training, rng);
        let router_logits = self.route(g, &enc);
        let scenario = match routing {
            Routing::Forced(label) => label,
            Routing::Predicted => {
                ScenarioType::from_index(argmax(g.value(router_logits).data())).expect("seven router logits")
            }
        };
        let expert = scenario.index();
        let modes = self.emoe_decode(g, &enc, bank.slice(scenario), expert);
        let (traj, mode_logits) = self.trajectory_head(g, modes);
        let ego_mode = argmax(g.value(mode_logits).data());
        let ego_feat = g.row(modes, ego_mode);
        let agent_pred = self.predict_agents(g, &enc, f, ego_feat);
        g.check_finite()?;
        Ok(ForwardVars {
            traj,
            mode_logits,
            router_logits,
            agent_pred,
            scenario,
            expert: if self.cfg.ablation.emoe { expert } else { 0 },
            ego_mode,
        })
    }

    fn decode_output(&self, g: &Graph, f: &SceneFeatures, v: &ForwardVars) -> PlannerOutput {
        let tf = self.cfg.future_steps;
        let traj = g.value(v.traj);
        let modes = (0..traj.rows())
            .map(|k| {
                let r = traj.row(k);
                (0..tf).map(|t| [r[t], r[tf + t], r[2 * tf + t], r[3 * tf + t]]).collect()
            })
            .collect();
        let mode_logits = g.value(v.mode_logits).data().to_vec();
        let router_logits = g.value(v.router_logits).data().to_vec();
        let agent_preds = match v.agent_pred {
            Some(p) => {
                let p = g.value(p);
                f.agents
                    .iter()
                    .enumerate()
                    .map(|(i, a)| AgentPrediction {
                        id: a.id,
                        points: (0..tf).map(|t| [p.row(i)[t], p.row(i)[tf + t]]).collect(),
                    })
                    .collect()
            }
            None => Vec::new(),
        };
        PlannerOutput {
            scenario: v.scenario,
            expert: v.expert,
            router_probs: softmax(&router_logits),
            router_logits,
            modes,
            mode_probs: softmax(&mode_logits),
            best_mode: argmax(&mode_logits),
            mode_logits,
            agent_preds,
        }
    }

    /// Inference forward pass on one scene.
    pub fn forward(&self, scene: &Scene, bank: &AnchorBank) -> Result<PlannerOutput> {
        let f = extract_features(scene, &self.cfg)?;
        let mut g = Graph::new(&self.store);
        // State dropout is off at inference, so the generator is never drawn.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let v = self.forward_graph(&mut g, &f, bank, Routing::Predicted, false, &mut rng)?;
        Ok(self.decode_output(&g, &f, &v))
    }

    /// Most probable mode as an ego-frame trajectory.
    pub fn plan(&self, scene: &Scene, bank: &AnchorBank) -> Result<Trajectory> {
        let out = self.forward(scene, bank)?;
        Ok(mode_trajectory(&out.modes[out.best_mode]))
    }
}

pub fn mode_trajectory(mode: &[[f64; 4]]) -> Trajectory {
    Trajectory::new(
        mode.iter().map(|p| TrajPoint::new(p[0], p[1], p[2], p[3])).collect(),
        DT,
    )
}

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Network configuration and parameters in one JSON file.
#[derive(serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    version: u32,
    config: NetConfig,
    params: emoe_nn::Checkpoint,
}

impl PlannerNet {
    pub fn to_json(&self) -> Result<String> {
        let file = ModelFile {
            version: MODEL_FORMAT_VERSION,
            config: self.cfg.clone(),
            params: self.store.to_checkpoint(),
        };
        Ok(serde_json::to_string(&file)? + "\n")
    }

    /// Atomic write.
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        emoe_nn::write_atomic(path, self.to_json()?.as_bytes())?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact {
                what: "model checkpoint".into(),
                path: path.to_path_buf(),
            });
        }
        let file: ModelFile = serde_json::from_slice(&std::fs::read(path)?)?;
        if file.version != MODEL_FORMAT_VERSION {
            return Err(Error::Invalid(format!("model file version {}", file.version)));
        }
        let mut net = PlannerNet::new(file.config, 0)?;
        net.store.load_checkpoint(&file.params)?;
        Ok(net)
    }
}
