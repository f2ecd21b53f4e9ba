//! Slot and intent memories read through two-round (deliberate) attention.

use crate::autodiff::{Axis, Graph, Var};
use crate::config::Ablation;
use crate::error::{Error, Result};

pub struct Attention {
    /// `[N, cells]`, each row a distribution over memory cells.
    pub weights: Var,
    /// `[N, d]`, attention-weighted sums of cells.
    pub summary: Var,
}

/// Bilinear attention of each query row over the memory cells:
/// `e_i = q W m_i`, `alpha = softmax(e)`, `summary = sum_i alpha_i m_i`.
pub fn attend(g: &mut Graph, query: Var, w: Var, memory: Var) -> Result<Attention> {
    if g.shape(memory)[0] == 0 {
        return Err(Error::contract("attention over an empty memory"));
    }
    let projected = g.matmul(query, w)?;
    let cells = g.transpose(memory);
    let scores = g.matmul(projected, cells)?;
    let weights = g.softmax(scores, Axis::Cols);
    let summary = g.matmul(weights, memory)?;
    Ok(Attention { weights, summary })
}

/// One memory with the two attention maps used to read it: `w_q1` takes a
/// plain hidden state, `w_q2` a hidden state concatenated with a summary of
/// the other memory.
#[derive(Clone, Copy, Debug)]
pub struct MemoryView {
    pub cells: Var,
    pub w_q1: Var,
    pub w_q2: Var,
}

impl MemoryView {
    pub fn bind(g: &mut Graph, memory: &str, prefix: &str) -> Result<Self> {
        Ok(Self {
            cells: g.param(memory)?,
            w_q1: g.param(&format!("{prefix}.Wq1"))?,
            w_q2: g.param(&format!("{prefix}.Wq2"))?,
        })
    }
}

/// Reads `own` with the query `[h; rough]`, where `rough` is a first-round
/// summary of `other` (zeros when `other` is absent or blocked).
pub fn deliberate_feature(g: &mut Graph, h: Var, own: &MemoryView, other: Option<&MemoryView>) -> Result<Var> {
    let rough = match other {
        Some(o) => attend(g, h, o.w_q1, o.cells)?.summary,
        None => {
            let (n, d) = (g.shape(h)[0], g.shape(h)[1]);
            g.zeros(n, d)
        }
    };
    let query = g.concat(&[h, rough], Axis::Cols)?;
    Ok(attend(g, query, own.w_q2, own.cells)?.summary)
}

/// Intent-aware slot features.
pub fn deliberate_slot_feature(
    g: &mut Graph,
    h: Var,
    intent: Option<&MemoryView>,
    slot: &MemoryView,
    ablation: &Ablation,
) -> Result<Var> {
    let other = if ablation.no_int2slot { None } else { intent };
    deliberate_feature(g, h, slot, other)
}

/// Slot-aware intent features.
pub fn deliberate_intent_feature(
    g: &mut Graph,
    h: Var,
    slot: Option<&MemoryView>,
    intent: &MemoryView,
    ablation: &Ablation,
) -> Result<Var> {
    let other = if ablation.no_slot2int { None } else { slot };
    deliberate_feature(g, h, intent, other)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{ParamStore, Tensor};
    use proptest::prelude::*;

    fn t(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    fn attend_values(query: Tensor, w: Tensor, memory: Tensor) -> (Tensor, Tensor) {
        let mut s = ParamStore::new();
        s.insert("m", memory, true).unwrap();
        s.insert("w", w, true).unwrap();
        let mut g = Graph::new(&s);
        let q = g.input(query);
        let (w, m) = (g.param("w").unwrap(), g.param("m").unwrap());
        let a = attend(&mut g, q, w, m).unwrap();
        (g.value(a.weights).clone(), g.value(a.summary).clone())
    }

    #[test]
    fn single_cell_and_identical_cells() {
        let (alpha, sum) = attend_values(t(&[&[3.0, -1.0]]), t(&[&[1.0, 2.0], &[0.0, 1.0]]), t(&[&[0.2, 0.4]]));
        assert_eq!(alpha.data(), &[1.0]);
        assert_eq!(sum.data(), &[0.2, 0.4]);

        let (alpha, sum) = attend_values(
            t(&[&[3.0, -1.0]]),
            t(&[&[1.0, 2.0], &[0.0, 1.0]]),
            t(&[&[0.2, 0.4], &[0.2, 0.4]]),
        );
        assert_eq!(alpha.data(), &[0.5, 0.5]);
        assert!((sum.get(0, 0) - 0.2).abs() < 1e-16 && (sum.get(0, 1) - 0.4).abs() < 1e-16);
    }

    #[test]
    fn closed_form_two_cells() {
        let (alpha, sum) = attend_values(
            t(&[&[10.0, 0.0]]),
            t(&[&[1.0, 0.0], &[0.0, 1.0]]),
            t(&[&[1.0, 0.0], &[0.0, 1.0]]),
        );
        let e = 10f64.exp();
        assert!((alpha.get(0, 0) - e / (e + 1.0)).abs() < 1e-15);
        assert!((alpha.get(0, 1) - 1.0 / (e + 1.0)).abs() < 1e-15);
        // summary = alpha when the memory is the identity, about 0.99995 / 0.00005
        assert!((sum.get(0, 0) - e / (e + 1.0)).abs() < 1e-15);
        assert!((sum.get(0, 1) - 1.0 / (e + 1.0)).abs() < 1e-15);
    }

    fn deliberate_store(slot: Tensor, int: Tensor, sq1: Tensor, sq2: Tensor, iq1: Tensor, iq2: Tensor) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("memory.slot", slot, true).unwrap();
        s.insert("memory.intent", int, true).unwrap();
        s.insert("att.slot.Wq1", sq1, true).unwrap();
        s.insert("att.slot.Wq2", sq2, true).unwrap();
        s.insert("att.intent.Wq1", iq1, true).unwrap();
        s.insert("att.intent.Wq2", iq2, true).unwrap();
        s
    }

    fn both(s: &ParamStore, h: Tensor, ablation: Ablation) -> (Tensor, Tensor) {
        let mut g = Graph::new(s);
        let slot = MemoryView::bind(&mut g, "memory.slot", "att.slot").unwrap();
        let int = MemoryView::bind(&mut g, "memory.intent", "att.intent").unwrap();
        let h = g.input(h);
        let hs = deliberate_slot_feature(&mut g, h, Some(&int), &slot, &ablation).unwrap();
        let hi = deliberate_intent_feature(&mut g, h, Some(&slot), &int, &ablation).unwrap();
        (g.value(hs).clone(), g.value(hi).clone())
    }

    #[test]
    fn single_cell_memories_ignore_the_query() {
        let s = deliberate_store(
            t(&[&[0.3, -0.2]]),
            t(&[&[1.0, 1.0]]),
            Tensor::filled(2, 2, 0.7),
            Tensor::filled(4, 2, -0.4),
            Tensor::filled(2, 2, 0.1),
            Tensor::filled(4, 2, 0.9),
        );
        let (hs, hi) = both(&s, t(&[&[5.0, -3.0], &[0.1, 0.2]]), Ablation::default());
        assert_eq!(hs, t(&[&[0.3, -0.2], &[0.3, -0.2]]));
        assert_eq!(hi, t(&[&[1.0, 1.0], &[1.0, 1.0]]));
    }

    #[test]
    fn symmetric_setup_gives_equal_features() {
        let m = t(&[&[0.5, -1.0], &[0.25, 2.0]]);
        let q1 = t(&[&[1.0, 0.5], &[-0.5, 1.0]]);
        let q2 = t(&[&[1.0, 0.0], &[0.0, 1.0], &[0.5, 0.5], &[-1.0, 0.25]]);
        let s = deliberate_store(m.clone(), m, q1.clone(), q2.clone(), q1, q2);
        let (hs, hi) = both(&s, t(&[&[0.3, 0.7]]), Ablation::default());
        assert_eq!(hs, hi);
    }

    fn softmax2(a: f64, b: f64) -> (f64, f64) {
        let m = a.max(b);
        let (ea, eb) = ((a - m).exp(), (b - m).exp());
        (ea / (ea + eb), eb / (ea + eb))
    }

    #[test]
    fn two_round_hand_computed() {
        // identity maps keep the arithmetic readable
        let slot = t(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let int = t(&[&[2.0, 0.0], &[0.0, -1.0]]);
        let eye = t(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let stack = t(&[&[1.0, 0.0], &[0.0, 1.0], &[1.0, 0.0], &[0.0, 1.0]]);
        let s = deliberate_store(slot, int, eye.clone(), stack.clone(), eye, stack);
        let h = [0.5, 1.0];

        // round one against the intent memory: scores h.m = [1.0, -1.0]
        let (a0, a1) = softmax2(1.0, -1.0);
        let rough = [2.0 * a0, -a1];
        // round two: query [h; rough] through stacked identities = h + rough
        let q = [h[0] + rough[0], h[1] + rough[1]];
        let (b0, b1) = softmax2(q[0], q[1]);
        let expected_slot = [b0, b1];

        let (hs, hi) = both(&s, t(&[&h]), Ablation::default());
        assert!((hs.get(0, 0) - expected_slot[0]).abs() < 1e-15);
        assert!((hs.get(0, 1) - expected_slot[1]).abs() < 1e-15);

        // mirror: round one against the slot memory: scores [0.5, 1.0]
        let (c0, c1) = softmax2(0.5, 1.0);
        let q = [h[0] + c0, h[1] + c1];
        let (d0, d1) = softmax2(2.0 * q[0], -q[1]);
        assert!((hi.get(0, 0) - 2.0 * d0).abs() < 1e-15);
        assert!((hi.get(0, 1) + d1).abs() < 1e-15);

        // blocked first rounds equal plain attention with query [h; 0]
        let blocked = Ablation {
            no_int2slot: true,
            no_slot2int: true,
            ..Ablation::default()
        };
        let (hs, hi) = both(&s, t(&[&h]), blocked);
        let (e0, e1) = softmax2(h[0], h[1]);
        assert!((hs.get(0, 0) - e0).abs() < 1e-15 && (hs.get(0, 1) - e1).abs() < 1e-15);
        let (f0, f1) = softmax2(2.0 * h[0], -h[1]);
        assert!((hi.get(0, 0) - 2.0 * f0).abs() < 1e-15 && (hi.get(0, 1) + f1).abs() < 1e-15);
    }

    #[test]
    fn blocking_equals_attend_on_zero_padded_query() {
        let s = deliberate_store(
            t(&[&[0.1, 0.9], &[-0.4, 0.3], &[1.2, -0.8]]),
            t(&[&[0.5, 0.5], &[-1.0, 0.2]]),
            t(&[&[0.3, -0.1], &[0.2, 0.8]]),
            t(&[&[0.7, 0.1], &[-0.2, 0.4], &[0.9, -0.6], &[0.05, 0.3]]),
            t(&[&[-0.3, 0.6], &[0.4, 0.1]]),
            t(&[&[0.2, 0.2], &[0.1, -0.9], &[-0.5, 0.4], &[0.6, 0.0]]),
        );
        let h = t(&[&[0.4, -0.6], &[1.1, 0.2]]);
        let ablation = Ablation {
            no_int2slot: true,
            ..Ablation::default()
        };
        let (hs, _) = both(&s, h.clone(), ablation);
        let padded = t(&[&[0.4, -0.6, 0.0, 0.0], &[1.1, 0.2, 0.0, 0.0]]);
        let (_, direct) = attend_values(
            padded,
            s.tensor("att.slot.Wq2").unwrap().clone(),
            s.tensor("memory.slot").unwrap().clone(),
        );
        assert_eq!(hs, direct);
    }

    proptest! {
        #[test]
        fn simplex_and_convex_hull(
            q in proptest::collection::vec(-3.0f64..3.0, 6),
            w in proptest::collection::vec(-2.0f64..2.0, 4),
            m in proptest::collection::vec(-5.0f64..5.0, 8),
        ) {
            let (alpha, sum) = attend_values(
                Tensor::new(vec![3, 2], q).unwrap(),
                Tensor::new(vec![2, 2], w).unwrap(),
                Tensor::new(vec![4, 2], m.clone()).unwrap(),
            );
            for r in 0..3 {
                let row = alpha.row_slice(r);
                prop_assert!(row.iter().all(|&a| a >= 0.0));
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                for k in 0..2 {
                    let col: Vec<f64> = (0..4).map(|i| m[i * 2 + k]).collect();
                    let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
                    let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    prop_assert!(sum.get(r, k) >= lo - 1e-12 && sum.get(r, k) <= hi + 1e-12);
                }
            }
        }
    }
}
