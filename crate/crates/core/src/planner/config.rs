//! Network widths, layer counts, caps and ablation switches.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::{ScenarioType, FUTURE_STEPS, HISTORY_STEPS, POLYLINE_POINTS};

/// Components that can be switched off for ablation runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Ablation {
    /// Scenario-indexed experts. Off: one shared expert per decoder layer.
    pub emoe: bool,
    /// Anchor embedding in the mode queries. Off: learnable base only.
    pub ssq: bool,
    /// Interaction weights in the regression loss and ego features in the
    /// prediction decoder. Off: uniform weights, no ego keys.
    pub iloss: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Self {
            emoe: true,
            ssq: true,
            iloss: true,
        }
    }
}

impl Ablation {
    pub fn without(switch: &str) -> Result<Self> {
        let mut a = Self::default();
        match switch {
            "emoe" => a.emoe = false,
            "ssq" => a.ssq = false,
            "iloss" => a.iloss = false,
            other => return Err(Error::Config(format!("unknown ablation switch `{other}`"))),
        }
        Ok(a)
    }

    pub fn name(&self) -> &'static str {
        match (self.emoe, self.ssq, self.iloss) {
            (true, true, true) => "full",
            (false, true, true) => "w/o EMoE",
            (true, false, true) => "w/o SSQ",
            (true, true, false) => "w/o I-Loss",
            _ => "custom",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetConfig {
    /// Feature width `D`.
    pub d_model: usize,
    pub heads: usize,
    /// Feed-forward width inside encoder and attention blocks.
    pub ffn_hidden: usize,
    /// Expert feed-forward width `D_h`.
    pub expert_hidden: usize,
    /// `L_e`
    pub encoder_layers: usize,
    /// `L_d`
    pub decoder_layers: usize,
    pub pred_layers: usize,
    /// `N_E`, tied to the seven scenario types.
    pub experts: usize,
    /// `K_a`
    pub anchors: usize,
    /// `T_f`
    pub future_steps: usize,
    /// `T_h`
    pub history_steps: usize,
    pub max_agents: usize,
    pub max_statics: usize,
    pub max_polylines: usize,
    pub polyline_points: usize,
    pub mixer_token_hidden: usize,
    pub mixer_channel_hidden: usize,
    pub head_hidden: usize,
    pub fope_bands: usize,
    /// State-dropout probability for the ego kinematic channels.
    pub drop_prob: f64,
    /// Metres per unit of raw position output.
    pub pos_scale: f64,
    /// m/s per unit of softplus speed output.
    pub speed_scale: f64,
    pub ablation: Ablation,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self::full()
    }
}

impl NetConfig {
    /// Full-width configuration.
    pub fn full() -> Self {
        Self {
            d_model: 128,
            heads: 8,
            ffn_hidden: 256,
            expert_hidden: 512,
            encoder_layers: 4,
            decoder_layers: 4,
            pred_layers: 1,
            experts: ScenarioType::COUNT,
            anchors: 24,
            future_steps: FUTURE_STEPS,
            history_steps: HISTORY_STEPS,
            max_agents: 8,
            max_statics: 4,
            max_polylines: 16,
            polyline_points: POLYLINE_POINTS,
            mixer_token_hidden: 32,
            mixer_channel_hidden: 256,
            head_hidden: 256,
            fope_bands: 16,
            drop_prob: 0.5,
            pos_scale: 10.0,
            speed_scale: 5.0,
            ablation: Ablation::default(),
        }
    }

    /// Same depth, expert count, anchors and horizons as [`Self::full`]
    /// at single-core training widths.
    pub fn desk() -> Self {
        Self {
            d_model: 32,
            heads: 4,
            ffn_hidden: 64,
            expert_hidden: 64,
            mixer_token_hidden: 16,
            mixer_channel_hidden: 64,
            head_hidden: 128,
            ..Self::full()
        }
    }

    /// Smallest configuration that still exercises every component; used
    /// for finite-difference checks.
    pub fn tiny() -> Self {
        Self {
            d_model: 8,
            heads: 2,
            ffn_hidden: 8,
            expert_hidden: 8,
            encoder_layers: 2,
            decoder_layers: 2,
            anchors: 4,
            future_steps: 6,
            history_steps: 4,
            max_agents: 3,
            max_statics: 2,
            max_polylines: 4,
            mixer_token_hidden: 4,
            mixer_channel_hidden: 8,
            head_hidden: 8,
            fope_bands: 3,
            ..Self::full()
        }
    }

    pub fn with_ablation(mut self, ablation: Ablation) -> Self {
        self.ablation = ablation;
        self
    }

    /// Experts instantiated per decoder layer.
    pub fn expert_count(&self) -> usize {
        if self.ablation.emoe {
            self.experts
        } else {
            1
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.experts != ScenarioType::COUNT {
            return bad(format!("experts must be {} (one per scenario type)", ScenarioType::COUNT));
        }
        let positive = [
            ("d_model", self.d_model),
            ("heads", self.heads),
            ("ffn_hidden", self.ffn_hidden),
            ("expert_hidden", self.expert_hidden),
            ("encoder_layers", self.encoder_layers),
            ("decoder_layers", self.decoder_layers),
            ("pred_layers", self.pred_layers),
            ("anchors", self.anchors),
            ("future_steps", self.future_steps),
            ("history_steps", self.history_steps),
            ("polyline_points", self.polyline_points),
            ("mixer_token_hidden", self.mixer_token_hidden),
            ("mixer_channel_hidden", self.mixer_channel_hidden),
            ("head_hidden", self.head_hidden),
            ("fope_bands", self.fope_bands),
        ];
        if let Some((name, _)) = positive.iter().find(|p| p.1 == 0) {
            return bad(format!("{name} must be positive"));
        }
        if self.d_model % self.heads != 0 {
            return bad(format!("d_model {} not divisible by heads {}", self.d_model, self.heads));
        }
        if self.future_steps > FUTURE_STEPS || self.history_steps > HISTORY_STEPS {
            return bad(format!("horizons are capped at T_f {FUTURE_STEPS}, T_h {HISTORY_STEPS}"));
        }
        if self.polyline_points != POLYLINE_POINTS {
            return bad(format!("polyline_points must be {POLYLINE_POINTS}"));
        }
        if !(0.0..1.0).contains(&self.drop_prob) {
            return bad(format!("drop_prob {} outside [0, 1)", self.drop_prob));
        }
        if !(self.pos_scale > 0.0 && self.speed_scale > 0.0) {
            return bad("output scales must be positive".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_values() {
        let c = NetConfig::full();
        assert_eq!(
            (c.d_model, c.expert_hidden, c.encoder_layers, c.decoder_layers, c.experts, c.anchors),
            (128, 512, 4, 4, 7, 24)
        );
        assert_eq!((c.future_steps, c.history_steps), (80, 20));
        c.validate().unwrap();
        NetConfig::desk().validate().unwrap();
        NetConfig::tiny().validate().unwrap();
    }

    #[test]
    fn ablation_switches() {
        assert_eq!(Ablation::without("emoe").unwrap().name(), "w/o EMoE");
        assert_eq!(Ablation::default().name(), "full");
        assert!(Ablation::without("post").is_err());
        assert_eq!(NetConfig::desk().with_ablation(Ablation::without("emoe").unwrap()).expert_count(), 1);
    }

    #[test]
    fn head_mismatch_rejected() {
        let c = NetConfig {
            heads: 5,
            ..NetConfig::desk()
        };
        assert!(c.validate().is_err());
    }
}
