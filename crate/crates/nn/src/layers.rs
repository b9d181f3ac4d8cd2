//! Layer set used by the planner network.
//!
//! Layers own only [`ParamId`]s; values live in the [`ParamStore`]. Every
//! layer is registered under a name prefix so checkpoints stay readable.

use rand::Rng;

use crate::error::{shape_err, Result};
use crate::graph::{Graph, Var};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// `y = x · W + b` with `W` stored as `[in, out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, d_in: usize, d_out: usize, rng: &mut impl Rng) -> Result<Self> {
        let w = store.add_xavier(format!("{name}.w"), d_in, d_out, rng)?;
        let b = store.add_const(format!("{name}.b"), &[d_out], 0.0)?;
        Ok(Self {
            w,
            b: Some(b),
            d_in,
            d_out,
        })
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let w = g.param(self.w);
        let y = g.matmul(x, w);
        match self.b {
            Some(b) => {
                let b = g.param(b);
                g.add_row(y, b)
            }
            None => y,
        }
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, d: usize) -> Result<Self> {
        Ok(Self {
            gamma: store.add_const(format!("{name}.gamma"), &[d], 1.0)?,
            beta: store.add_const(format!("{name}.beta"), &[d], 0.0)?,
        })
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let gamma = g.param(self.gamma);
        let beta = g.param(self.beta);
        g.layer_norm(x, gamma, beta)
    }
}

/// Two linear layers with GELU in between.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Mlp {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        d_in: usize,
        hidden: usize,
        d_out: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(Self {
            fc1: Linear::new(store, &format!("{name}.fc1"), d_in, hidden, rng)?,
            fc2: Linear::new(store, &format!("{name}.fc2"), hidden, d_out, rng)?,
        })
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let h = self.fc1.forward(g, x);
        let h = g.gelu(h);
        self.fc2.forward(g, h)
    }
}

#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new(store: &mut ParamStore, name: &str, d: usize, heads: usize, rng: &mut impl Rng) -> Result<Self> {
        if heads == 0 || d % heads != 0 {
            return shape_err(
                "MultiHeadAttention::new",
                format!("width {d} is not divisible by {heads} heads"),
            );
        }
        Ok(Self {
            wq: Linear::new(store, &format!("{name}.q"), d, d, rng)?,
            wk: Linear::new(store, &format!("{name}.k"), d, d, rng)?,
            wv: Linear::new(store, &format!("{name}.v"), d, d, rng)?,
            wo: Linear::new(store, &format!("{name}.o"), d, d, rng)?,
            heads,
        })
    }

    pub fn forward(&self, g: &mut Graph, queries: Var, keys: Var, key_mask: Option<&[bool]>) -> Var {
        let q = self.wq.forward(g, queries);
        let k = self.wk.forward(g, keys);
        let v = self.wv.forward(g, keys);
        let a = g.attention(q, k, v, self.heads, key_mask);
        self.wo.forward(g, a)
    }
}

/// `x ← LN(x + f(x))` around a position-wise feed-forward network.
#[derive(Clone, Debug)]
pub struct FeedForward {
    pub mlp: Mlp,
    pub norm: LayerNorm,
}

impl FeedForward {
    pub fn new(store: &mut ParamStore, name: &str, d: usize, hidden: usize, rng: &mut impl Rng) -> Result<Self> {
        Ok(Self {
            mlp: Mlp::new(store, &format!("{name}.mlp"), d, hidden, d, rng)?,
            norm: LayerNorm::new(store, &format!("{name}.ln"), d)?,
        })
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let h = self.mlp.forward(g, x);
        let r = g.add(x, h);
        self.norm.forward(g, r)
    }
}

/// Post-norm attention sublayer: `x ← LN(x + MHA(x, kv))`.
#[derive(Clone, Debug)]
pub struct AttentionSublayer {
    pub mha: MultiHeadAttention,
    pub norm: LayerNorm,
}

impl AttentionSublayer {
    pub fn new(store: &mut ParamStore, name: &str, d: usize, heads: usize, rng: &mut impl Rng) -> Result<Self> {
        Ok(Self {
            mha: MultiHeadAttention::new(store, &format!("{name}.mha"), d, heads, rng)?,
            norm: LayerNorm::new(store, &format!("{name}.ln"), d)?,
        })
    }

    pub fn forward(&self, g: &mut Graph, x: Var, kv: Var, key_mask: Option<&[bool]>) -> Var {
        let a = self.mha.forward(g, x, kv, key_mask);
        let r = g.add(x, a);
        self.norm.forward(g, r)
    }
}

/// Standard transformer block: masked attention, residual and layer norm,
/// then feed-forward, residual and layer norm. With `kv = None` the block
/// is self-attention.
#[derive(Clone, Debug)]
pub struct AttentionBlock {
    pub attn: AttentionSublayer,
    pub ffn: FeedForward,
}

impl AttentionBlock {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        d: usize,
        heads: usize,
        ffn_hidden: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(Self {
            attn: AttentionSublayer::new(store, &format!("{name}.attn"), d, heads, rng)?,
            ffn: FeedForward::new(store, &format!("{name}.ffn"), d, ffn_hidden, rng)?,
        })
    }

    pub fn forward(&self, g: &mut Graph, x: Var, kv: Option<Var>, key_mask: Option<&[bool]>) -> Var {
        let kv = kv.unwrap_or(x);
        let h = self.attn.forward(g, x, kv, key_mask);
        self.ffn.forward(g, h)
    }
}

/// Default frequency bands for metric coordinates: 16 log-spaced angular
/// frequencies from 2π/200 m⁻¹ to 2π/1 m⁻¹.
pub fn default_bands() -> Vec<f64> {
    log_spaced_bands(16, 200.0, 1.0)
}

pub fn log_spaced_bands(n: usize, longest_period: f64, shortest_period: f64) -> Vec<f64> {
    let tau = std::f64::consts::TAU;
    if n == 1 {
        return vec![tau / longest_period];
    }
    let lo = (tau / longest_period).ln();
    let hi = (tau / shortest_period).ln();
    (0..n)
        .map(|i| (lo + (hi - lo) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

/// Fourier position embedding: `[sin(f·x), cos(f·x)]` for every input
/// channel and band, followed by a learned projection to `d_out`.
#[derive(Clone, Debug)]
pub struct Fope {
    pub bands: Vec<f64>,
    pub channels: usize,
    pub proj: Linear,
}

impl Fope {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        channels: usize,
        bands: Vec<f64>,
        d_out: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if bands.is_empty() {
            return shape_err("Fope::new", "at least one frequency band is required");
        }
        let feat = 2 * channels * bands.len();
        Ok(Self {
            proj: Linear::new(store, &format!("{name}.proj"), feat, d_out, rng)?,
            bands,
            channels,
        })
    }

    pub fn feature_width(&self) -> usize {
        2 * self.channels * self.bands.len()
    }

    /// Per row: for each channel `c` and band `f`, `sin(f·x_c)` then `cos(f·x_c)`.
    pub fn fourier_features(&self, x: &Tensor) -> Tensor {
        assert_eq!(x.cols(), self.channels, "Fope channel count");
        let rows = x.rows();
        let w = self.feature_width();
        let mut out = Vec::with_capacity(rows * w);
        for r in 0..rows {
            for &v in x.row(r) {
                for &f in &self.bands {
                    let (s, c) = (f * v).sin_cos();
                    out.push(s);
                    out.push(c);
                }
            }
        }
        Tensor::matrix(rows, w, out)
    }

    pub fn forward(&self, g: &mut Graph, x: &Tensor) -> Var {
        let feats = g.input(self.fourier_features(x));
        self.proj.forward(g, feats)
    }
}

/// MLP-Mixer block that compresses a `T × D` sequence per entity into one
/// `D` vector: token mixing across `T`, then channel mixing across `D`
/// (each pre-normed with a residual), keeping the last-step token.
#[derive(Clone, Debug)]
pub struct MlpMixer {
    pub steps: usize,
    pub token_norm: LayerNorm,
    pub token_w1: ParamId,
    pub token_b1: ParamId,
    pub token_w2: ParamId,
    pub token_b2: ParamId,
    pub channel_norm: LayerNorm,
    pub channel: Mlp,
}

impl MlpMixer {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        steps: usize,
        d: usize,
        token_hidden: usize,
        channel_hidden: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(Self {
            steps,
            token_norm: LayerNorm::new(store, &format!("{name}.token_ln"), d)?,
            token_w1: store.add_xavier(format!("{name}.token_w1"), token_hidden, steps, rng)?,
            token_b1: store.add_const(format!("{name}.token_b1"), &[token_hidden], 0.0)?,
            token_w2: store.add_xavier(format!("{name}.token_w2"), steps, token_hidden, rng)?,
            token_b2: store.add_const(format!("{name}.token_b2"), &[steps], 0.0)?,
            channel_norm: LayerNorm::new(store, &format!("{name}.channel_ln"), d)?,
            channel: Mlp::new(store, &format!("{name}.channel"), d, channel_hidden, d, rng)?,
        })
    }

    /// One entity, `x: [T, D] -> [1, D]`.
    pub fn forward_entity(&self, g: &mut Graph, x: Var) -> Var {
        let t = g.value(x).rows();
        assert_eq!(t, self.steps, "mixer sequence length");
        let y = self.token_norm.forward(g, x);
        let w1 = g.param(self.token_w1);
        let b1 = g.param(self.token_b1);
        let w2 = g.param(self.token_w2);
        let b2 = g.param(self.token_b2);
        let h = g.matmul(w1, y);
        let h = g.add_col(h, b1);
        let h = g.gelu(h);
        let h = g.matmul(w2, h);
        let h = g.add_col(h, b2);
        let u = g.add(x, h);
        // Channel mixing is row-wise, so only the kept token needs it.
        let last = g.row(u, t - 1);
        let n = self.channel_norm.forward(g, last);
        let c = self.channel.forward(g, n);
        g.add(last, c)
    }

    /// `entities[i]: [T, D]` → `[N, D]`.
    pub fn forward(&self, g: &mut Graph, entities: &[Var]) -> Var {
        let rows: Vec<Var> = entities.iter().map(|&e| self.forward_entity(g, e)).collect();
        g.concat_rows(&rows)
    }
}

/// State-dropout ego encoder: an MLP over ego features where, in training,
/// each kinematic channel is independently zeroed with `drop_prob`.
#[derive(Clone, Debug)]
pub struct StateDropoutEncoder {
    pub mlp: Mlp,
    pub kinematic_channels: Vec<usize>,
    pub drop_prob: f64,
    pub d_in: usize,
}

impl StateDropoutEncoder {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        d_in: usize,
        d_out: usize,
        kinematic_channels: Vec<usize>,
        drop_prob: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if !(0.0..1.0).contains(&drop_prob) {
            return shape_err("StateDropoutEncoder::new", format!("drop_prob {drop_prob} not in [0, 1)"));
        }
        if kinematic_channels.iter().any(|&c| c >= d_in) {
            return shape_err("StateDropoutEncoder::new", "kinematic channel index out of range");
        }
        Ok(Self {
            mlp: Mlp::new(store, &format!("{name}.mlp"), d_in, d_out, d_out, rng)?,
            kinematic_channels,
            drop_prob,
            d_in,
        })
    }

    /// Applies the dropout mask (training only) and returns the features fed
    /// to the MLP.
    pub fn masked_features(&self, features: &[f64], training: bool, rng: &mut impl Rng) -> Vec<f64> {
        assert_eq!(features.len(), self.d_in);
        let mut f = features.to_vec();
        if training && self.drop_prob > 0.0 {
            for &c in &self.kinematic_channels {
                if rng.gen::<f64>() < self.drop_prob {
                    f[c] = 0.0;
                }
            }
        }
        f
    }

    pub fn forward(&self, g: &mut Graph, features: &[f64], training: bool, rng: &mut impl Rng) -> Var {
        let f = self.masked_features(features, training, rng);
        let x = g.input(Tensor::row_vector(f));
        self.mlp.forward(g, x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn fourier_features_of_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut s = ParamStore::new();
        let fope = Fope::new(&mut s, "f", 2, default_bands(), 128, &mut rng).unwrap();
        let feats = fope.fourier_features(&Tensor::matrix(1, 2, vec![0.0, 0.0]));
        for pair in feats.data().chunks(2) {
            assert_eq!(pair, &[0.0, 1.0]);
        }
        let mut g = Graph::new(&s);
        let out = fope.forward(&mut g, &Tensor::matrix(3, 2, vec![1.0, 2.0, -4.0, 0.5, 30.0, -70.0]));
        assert_eq!(g.value(out).shape(), &[3, 128]);
    }

    #[test]
    fn default_bands_span_requested_periods() {
        let b = default_bands();
        assert_eq!(b.len(), 16);
        let tau = std::f64::consts::TAU;
        assert!((b[0] - tau / 200.0).abs() < 1e-12);
        assert!((b[15] - tau).abs() < 1e-12);
        assert!(b.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn head_mismatch_is_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut s = ParamStore::new();
        assert!(MultiHeadAttention::new(&mut s, "a", 10, 3, &mut rng).is_err());
    }

    #[test]
    fn mixer_is_equivariant_over_entities() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut s = ParamStore::new();
        let mixer = MlpMixer::new(&mut s, "m", 5, 6, 7, 8, &mut rng).unwrap();
        let ents: Vec<Tensor> = (0..3)
            .map(|e| Tensor::matrix(5, 6, (0..30).map(|i| ((i + 7 * e) as f64 * 0.31).sin()).collect()))
            .collect();
        let mut g = Graph::new(&s);
        let vars: Vec<Var> = ents.iter().map(|t| g.input(t.clone())).collect();
        let out = mixer.forward(&mut g, &vars);
        let perm = [vars[2], vars[0], vars[1]];
        let out_p = mixer.forward(&mut g, &perm);
        let a = g.value(out).clone();
        let b = g.value(out_p).clone();
        assert_eq!(b.row(0), a.row(2));
        assert_eq!(b.row(1), a.row(0));
        assert_eq!(b.row(2), a.row(1));
    }

    #[test]
    fn sde_inference_is_deterministic_and_undropped() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut s = ParamStore::new();
        let sde = StateDropoutEncoder::new(&mut s, "e", 4, 8, vec![1, 2], 0.5, &mut rng).unwrap();
        let feats = [0.1, 3.0, -1.0, 0.2];
        let mut r1 = ChaCha8Rng::seed_from_u64(10);
        let mut r2 = ChaCha8Rng::seed_from_u64(99);
        assert_eq!(sde.masked_features(&feats, false, &mut r1), feats.to_vec());
        let mut g = Graph::new(&s);
        let a = sde.forward(&mut g, &feats, false, &mut r1);
        let b = sde.forward(&mut g, &feats, false, &mut r2);
        assert_eq!(g.value(a), g.value(b));
    }

    #[test]
    fn sde_drop_frequency_matches_probability() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut s = ParamStore::new();
        let eps = 1e-3;
        let sde = StateDropoutEncoder::new(&mut s, "e", 3, 4, vec![0, 1, 2], 1.0 - eps, &mut rng).unwrap();
        let mut draws = ChaCha8Rng::seed_from_u64(4);
        let n = 10_000;
        let mut kept = 0;
        for _ in 0..n {
            let f = sde.masked_features(&[1.0, 1.0, 1.0], true, &mut draws);
            kept += f.iter().filter(|&&v| v != 0.0).count();
        }
        // Expected kept = 3·n·eps = 30; binomial sd ≈ 5.5.
        assert!(kept < 60, "kept {kept} channels");
        let sde_off = StateDropoutEncoder { drop_prob: 0.0, ..sde };
        let f = sde_off.masked_features(&[1.0, 2.0, 3.0], true, &mut draws);
        assert_eq!(f, vec![1.0, 2.0, 3.0]);
    }
}
