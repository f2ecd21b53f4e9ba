//! Output layers: slot emission scores, intent logits and the joint loss.

use crate::autodiff::{Axis, Graph, Var};
use crate::error::{Error, Result};

/// Weight applied to a retrieved memory feature. A tied projection reuses
/// the memory cells `[labels, d]` themselves.
#[derive(Clone, Copy, Debug)]
pub enum Projection {
    Free(Var),
    Tied(Var),
}

impl Projection {
    fn apply(&self, g: &mut Graph, features: Var) -> Result<Var> {
        match *self {
            Projection::Free(w) => g.matmul(features, w),
            Projection::Tied(cells) => {
                let w = g.transpose(cells);
                g.matmul(features, w)
            }
        }
    }
}

/// `y = h W + feature P + b`.
#[derive(Clone, Copy, Debug)]
pub struct OutputHead {
    pub w: Var,
    pub feature: Option<Projection>,
    pub b: Var,
}

impl OutputHead {
    fn project(&self, g: &mut Graph, h: Var, feature: Option<Var>) -> Result<Var> {
        let mut out = g.matmul(h, self.w)?;
        match (feature, &self.feature) {
            (Some(f), Some(p)) => {
                let extra = p.apply(g, f)?;
                out = g.add(out, extra)?;
            }
            (None, None) => {}
            _ => return Err(Error::contract("memory feature does not match the output head")),
        }
        g.add(out, self.b)
    }
}

/// Per-position tag scores `[N, tags]` from `[h_t; h_t^slot]`.
pub fn emission_scores(g: &mut Graph, h: Var, h_slot: Option<Var>, head: &OutputHead) -> Result<Var> {
    head.project(g, h, h_slot)
}

/// Intent logits `[1, intents]` from the mean of `[h_t; h_t^int]`.
pub fn intent_logits(g: &mut Graph, h: Var, h_int: Option<Var>, head: &OutputHead) -> Result<Var> {
    let pooled = g.mean(h, Axis::Rows);
    let pooled_int = h_int.map(|v| g.mean(v, Axis::Rows));
    head.project(g, pooled, pooled_int)
}

/// `-log softmax(logits)[gold]`.
pub fn intent_cross_entropy(g: &mut Graph, logits: Var, gold: usize) -> Result<Var> {
    let log_z = g.logsumexp(logits, Axis::Cols);
    let picked = g.pick(logits, &[gold])?;
    g.sub(log_z, picked)
}

/// `(1 - lambda) * slot + lambda * intent`.
pub fn joint_loss(g: &mut Graph, slot_nll: Var, intent_ce: Var, lambda: f64) -> Result<Var> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::config(format!("lambda must lie in [0, 1], got {lambda}")));
    }
    let a = g.scale(slot_nll, 1.0 - lambda);
    let b = g.scale(intent_ce, lambda);
    g.add(a, b)
}
