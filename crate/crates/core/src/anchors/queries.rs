//! Scene-specific mode queries: a shared learnable base plus the Fourier
//! embedding of the routed type's anchors.

use emoe_nn::layers::Fope;
use emoe_nn::{Graph, Tensor, Var};

pub struct ModeQuerySet {
    /// `K_a x D`
    pub q: Var,
    pub anchor_slice: Vec<[f64; 2]>,
}

/// Anchors as a `K_a x 2` tensor.
pub fn anchor_tensor(anchors: &[[f64; 2]]) -> Tensor {
    Tensor::matrix(anchors.len(), 2, anchors.iter().flatten().copied().collect())
}

/// `q[k] = base[k] + fope(anchors[k])`. With `fope = None` only the base
/// is used.
pub fn make_queries(g: &mut Graph, anchors: &[[f64; 2]], base: Var, fope: Option<&Fope>) -> ModeQuerySet {
    let q = match fope {
        Some(f) => {
            let emb = f.forward(g, &anchor_tensor(anchors));
            g.add(base, emb)
        }
        None => base,
    };
    ModeQuerySet {
        q,
        anchor_slice: anchors.to_vec(),
    }
}
