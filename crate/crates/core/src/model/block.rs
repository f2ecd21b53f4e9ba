//! One CM-block is deliberate attention, then a gated update over a width-3
//! window of the previous layer, then a bidirectional LSTM over the sentence.

use crate::autodiff::{Axis, Graph, Var};
use crate::config::{Ablation, ModelConfig};
use crate::error::{Error, Result};

use super::memory::{deliberate_intent_feature, deliberate_slot_feature, MemoryView};
use super::Mode;

#[derive(Clone, Copy, Debug)]
pub struct BlockState {
    pub h: Var,
    pub c: Var,
}

/// Gate order inside the fused projection.
pub const GATES: [&str; 6] = ["i", "f", "l", "r", "o", "u"];

/// Weights of one gate: window, embedding, slot feature, intent feature, bias.
#[derive(Clone, Copy, Debug)]
pub struct GateParams {
    pub w1: Var,
    pub w2: Var,
    pub w3: Option<Var>,
    pub w4: Option<Var>,
    pub b: Option<Var>,
}

#[derive(Clone, Debug)]
pub struct LocalParams {
    /// Indexed like [`GATES`].
    pub gates: Vec<GateParams>,
}

impl LocalParams {
    pub fn bind(g: &mut Graph, prefix: &str, slot: bool, intent: bool, bias: bool) -> Result<Self> {
        let mut gates = Vec::with_capacity(GATES.len());
        for gate in GATES {
            let p = format!("{prefix}.gate.{gate}");
            gates.push(GateParams {
                w1: g.param(&format!("{p}.W1"))?,
                w2: g.param(&format!("{p}.W2"))?,
                w3: if slot { Some(g.param(&format!("{p}.W3"))?) } else { None },
                w4: if intent {
                    Some(g.param(&format!("{p}.W4"))?)
                } else {
                    None
                },
                b: if bias { Some(g.param(&format!("{p}.b"))?) } else { None },
            });
        }
        Ok(Self { gates })
    }
}

/// Gate activations of one local calculation, each `[N, d]`.
#[derive(Clone, Copy, Debug)]
pub struct GateValues {
    pub i: Var,
    pub f: Var,
    pub l: Var,
    pub r: Var,
    pub o: Var,
    pub u: Var,
}

/// Rows shifted by one position with a zero row entering at the boundary:
/// `prev[t] = x[t-1]`, `next[t] = x[t+1]`.
fn neighbours(g: &mut Graph, x: Var) -> Result<(Var, Var)> {
    let (n, d) = (g.shape(x)[0], g.shape(x)[1]);
    let zero = g.zeros(1, d);
    if n == 1 {
        return Ok((zero, zero));
    }
    let head = g.slice(x, Axis::Rows, 0, n - 1)?;
    let tail = g.slice(x, Axis::Rows, 1, n - 1)?;
    Ok((
        g.concat(&[zero, head], Axis::Rows)?,
        g.concat(&[tail, zero], Axis::Rows)?,
    ))
}

/// Gated update of every position from the previous layer's window.
///
/// `i, f, l, r` are sigmoids normalized by a softmax across the four gates,
/// `c = f*c + l*c_prev + r*c_next + i*u` and `h = o*tanh(c)`.
pub fn local_calculation(
    g: &mut Graph,
    prev: &BlockState,
    x: Var,
    h_slot: Option<Var>,
    h_int: Option<Var>,
    p: &LocalParams,
) -> Result<(BlockState, GateValues)> {
    let (n, d) = (g.shape(prev.h)[0], g.shape(prev.h)[1]);
    if n == 0 {
        return Err(Error::contract("local calculation over an empty sentence"));
    }
    let first = &p.gates[0];
    if first.w3.is_some() != h_slot.is_some() || first.w4.is_some() != h_int.is_some() {
        return Err(Error::contract("memory features do not match the gate parameters"));
    }

    let (h_prev, h_next) = neighbours(g, prev.h)?;
    let mut features = vec![h_prev, prev.h, h_next, x];
    features.extend(h_slot);
    features.extend(h_int);
    let features = g.concat(&features, Axis::Cols)?;

    let mut columns = Vec::with_capacity(GATES.len());
    let mut biases = Vec::with_capacity(GATES.len());
    for gate in &p.gates {
        let mut parts = vec![gate.w1, gate.w2];
        parts.extend(gate.w3);
        parts.extend(gate.w4);
        columns.push(g.concat(&parts, Axis::Rows)?);
        biases.extend(gate.b);
    }
    let weights = g.concat(&columns, Axis::Cols)?;
    let mut pre = g.matmul(features, weights)?;
    if !biases.is_empty() {
        let b = g.concat(&biases, Axis::Cols)?;
        pre = g.add(pre, b)?;
    }

    // softmax across the four sigmoid gates, elementwise
    let mut stacked = Vec::with_capacity(4);
    for k in 0..4 {
        let s = g.slice(pre, Axis::Cols, k * d, d)?;
        let s = g.sigmoid(s);
        stacked.push(g.reshape(s, n * d, 1)?);
    }
    let stacked = g.concat(&stacked, Axis::Cols)?;
    let norm = g.softmax(stacked, Axis::Cols);
    let gate = |g: &mut Graph, k: usize| -> Result<Var> {
        let col = g.slice(norm, Axis::Cols, k, 1)?;
        g.reshape(col, n, d)
    };
    let (i, f, l, r) = (gate(g, 0)?, gate(g, 1)?, gate(g, 2)?, gate(g, 3)?);
    let o = g.slice(pre, Axis::Cols, 4 * d, d)?;
    let o = g.sigmoid(o);
    let u = g.slice(pre, Axis::Cols, 5 * d, d)?;
    let u = g.tanh(u);

    let (c_prev, c_next) = neighbours(g, prev.c)?;
    let terms = [g.mul(f, prev.c)?, g.mul(l, c_prev)?, g.mul(r, c_next)?, g.mul(i, u)?];
    let c = g.add_all(&terms)?;
    let tc = g.tanh(c);
    let h = g.mul(o, tc)?;
    Ok((BlockState { h, c }, GateValues { i, f, l, r, o, u }))
}

/// Parameters of one LSTM direction with gate order i, f, g, o.
#[derive(Clone, Copy, Debug)]
pub struct LstmParams {
    pub wx: Var,
    pub wh: Var,
    pub b: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct BiLstmParams {
    pub fwd: LstmParams,
    pub bwd: LstmParams,
}

impl BiLstmParams {
    pub fn bind(g: &mut Graph, prefix: &str) -> Result<Self> {
        let mut dir = |name: &str| -> Result<LstmParams> {
            Ok(LstmParams {
                wx: g.param(&format!("{prefix}.{name}.Wx"))?,
                wh: g.param(&format!("{prefix}.{name}.Wh"))?,
                b: g.param(&format!("{prefix}.{name}.b"))?,
            })
        };
        Ok(Self {
            fwd: dir("fwd")?,
            bwd: dir("bwd")?,
        })
    }
}

fn lstm_pass(g: &mut Graph, x: Var, p: &LstmParams, reverse: bool) -> Result<Var> {
    let n = g.shape(x)[0];
    let k = g.shape(p.wh)[0];
    let projected = g.matmul(x, p.wx)?;
    let projected = g.add(projected, p.b)?;
    let mut h = g.zeros(1, k);
    let mut c = g.zeros(1, k);
    let mut out = vec![h; n];
    let order: Vec<usize> = if reverse {
        (0..n).rev().collect()
    } else {
        (0..n).collect()
    };
    for t in order {
        let xt = g.slice(projected, Axis::Rows, t, 1)?;
        let rec = g.matmul(h, p.wh)?;
        let z = g.add(xt, rec)?;
        let zi = g.slice(z, Axis::Cols, 0, k)?;
        let zf = g.slice(z, Axis::Cols, k, k)?;
        let zg = g.slice(z, Axis::Cols, 2 * k, k)?;
        let zo = g.slice(z, Axis::Cols, 3 * k, k)?;
        let (i, f, gg, o) = (g.sigmoid(zi), g.sigmoid(zf), g.tanh(zg), g.sigmoid(zo));
        let keep = g.mul(f, c)?;
        let write = g.mul(i, gg)?;
        c = g.add(keep, write)?;
        let tc = g.tanh(c);
        h = g.mul(o, tc)?;
        out[t] = h;
    }
    g.concat(&out, Axis::Rows)
}

/// Forward and backward LSTM passes, concatenated per position.
pub fn global_recurrence(g: &mut Graph, h: Var, p: &BiLstmParams) -> Result<Var> {
    let fwd = lstm_pass(g, h, &p.fwd, false)?;
    let bwd = lstm_pass(g, h, &p.bwd, true)?;
    g.concat(&[fwd, bwd], Axis::Cols)
}

/// Replacement for the local calculation when it is ablated:
/// `h' = tanh([h; h_slot; h_int] W + b)`.
#[derive(Clone, Copy, Debug)]
pub struct FuseParams {
    pub w: Var,
    pub b: Option<Var>,
}

pub fn fuse_states(g: &mut Graph, h: Var, h_slot: Option<Var>, h_int: Option<Var>, p: &FuseParams) -> Result<Var> {
    let mut parts = vec![h];
    parts.extend(h_slot);
    parts.extend(h_int);
    let features = g.concat(&parts, Axis::Cols)?;
    let mut pre = g.matmul(features, p.w)?;
    if let Some(b) = p.b {
        pre = g.add(pre, b)?;
    }
    Ok(g.tanh(pre))
}

/// Everything one block reads from the parameter store.
#[derive(Clone, Debug)]
pub struct BlockParams {
    pub slot: Option<MemoryView>,
    pub intent: Option<MemoryView>,
    pub local: Option<LocalParams>,
    pub fuse: Option<FuseParams>,
    pub rnn: Option<BiLstmParams>,
}

impl BlockParams {
    pub fn bind(g: &mut Graph, index: usize, cfg: &ModelConfig) -> Result<Self> {
        let a = &cfg.ablation;
        let prefix = format!("block.{index}");
        let slot = if a.no_slot_memory {
            None
        } else {
            Some(MemoryView::bind(g, "memory.slot", &format!("{prefix}.att.slot"))?)
        };
        let intent = if a.no_intent_memory {
            None
        } else {
            Some(MemoryView::bind(g, "memory.intent", &format!("{prefix}.att.intent"))?)
        };
        let (local, fuse) = if a.no_local_calculation {
            let b = if cfg.gate_bias {
                Some(g.param(&format!("{prefix}.fuse.b"))?)
            } else {
                None
            };
            (
                None,
                Some(FuseParams {
                    w: g.param(&format!("{prefix}.fuse.W"))?,
                    b,
                }),
            )
        } else {
            let local = LocalParams::bind(g, &prefix, slot.is_some(), intent.is_some(), cfg.gate_bias)?;
            (Some(local), None)
        };
        let rnn = if a.no_global_recurrence {
            None
        } else {
            Some(BiLstmParams::bind(g, &format!("{prefix}.lstm"))?)
        };
        Ok(Self {
            slot,
            intent,
            local,
            fuse,
            rnn,
        })
    }
}

/// Intermediate values of one block, kept for inspection.
#[derive(Clone, Copy, Debug)]
pub struct BlockTrace {
    pub h_slot: Option<Var>,
    pub h_int: Option<Var>,
    pub gates: Option<GateValues>,
    pub local: BlockState,
    pub output: BlockState,
}

/// Runs one block from `prev`.
pub fn run_block(
    g: &mut Graph,
    prev: &BlockState,
    x: Var,
    p: &BlockParams,
    ablation: &Ablation,
    mode: &mut Mode,
) -> Result<BlockTrace> {
    let h_slot = match &p.slot {
        Some(slot) => Some(deliberate_slot_feature(g, prev.h, p.intent.as_ref(), slot, ablation)?),
        None => None,
    };
    let h_int = match &p.intent {
        Some(intent) => Some(deliberate_intent_feature(g, prev.h, p.slot.as_ref(), intent, ablation)?),
        None => None,
    };
    let (local, gates) = match (&p.local, &p.fuse) {
        (Some(lp), _) => {
            let (state, gates) = local_calculation(g, prev, x, h_slot, h_int, lp)?;
            (state, Some(gates))
        }
        (None, Some(fp)) => {
            let h = fuse_states(g, prev.h, h_slot, h_int, fp)?;
            (BlockState { h, c: prev.c }, None)
        }
        (None, None) => return Err(Error::contract("block has neither local nor fused update")),
    };
    let h = match &p.rnn {
        Some(rnn) => global_recurrence(g, local.h, rnn)?,
        None => local.h,
    };
    let h = mode.dropout(g, h)?;
    Ok(BlockTrace {
        h_slot,
        h_int,
        gates,
        local,
        output: BlockState { h, c: local.c },
    })
}

/// Applies the blocks in order starting from `(H0, 0)`.
pub fn run_stack(
    g: &mut Graph,
    x: Var,
    h0: Var,
    blocks: &[BlockParams],
    ablation: &Ablation,
    mode: &mut Mode,
) -> Result<Vec<BlockTrace>> {
    if blocks.is_empty() {
        return Err(Error::config("at least one block is required"));
    }
    let (n, d) = (g.shape(h0)[0], g.shape(h0)[1]);
    let mut state = BlockState {
        h: h0,
        c: g.zeros(n, d),
    };
    let mut traces = Vec::with_capacity(blocks.len());
    for p in blocks {
        let trace = run_block(g, &state, x, p, ablation, mode)?;
        state = trace.output;
        traces.push(trace);
    }
    Ok(traces)
}
