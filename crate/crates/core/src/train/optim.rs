//! Adam with per-parameter step counts. Parameters absent from a step's
//! gradients are left untouched, moments included.

use emoe_nn::{Gradients, ParamStore};

#[derive(Clone, Debug)]
struct Slot {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    slots: Vec<Option<Slot>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            slots: Vec::new(),
        }
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients) {
        if self.slots.len() < store.len() {
            self.slots.resize(store.len(), None);
        }
        for (id, p) in store.iter_mut() {
            let Some(g) = grads.get(id) else { continue };
            let slot = self.slots[id.index()].get_or_insert_with(|| Slot {
                m: vec![0.0; g.len()],
                v: vec![0.0; g.len()],
                t: 0,
            });
            slot.t += 1;
            let bc1 = 1.0 - self.beta1.powi(slot.t);
            let bc2 = 1.0 - self.beta2.powi(slot.t);
            let values = p.value.data_mut();
            for i in 0..g.len() {
                slot.m[i] = self.beta1 * slot.m[i] + (1.0 - self.beta1) * g[i];
                slot.v[i] = self.beta2 * slot.v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mh = slot.m[i] / bc1;
                let vh = slot.v[i] / bc2;
                values[i] -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}
