//! The CM-Net tagger: embeddings, a stack of CM-blocks, a CRF slot decoder and
//! a pooled intent classifier.

pub mod block;
pub mod embedding;
pub mod inference;
pub mod memory;

use rand::{Rng, RngCore};

use crate::autodiff::{Graph, ParamStore, Tensor, Var};
use crate::config::ModelConfig;
use crate::crf::{crf_nll, viterbi_decode};
use crate::data::vocab::{PAD, UNK};
use crate::data::{EmbeddingTable, Utterance, Vocabulary};
use crate::error::{Error, Result};
use crate::training::init_param;

use block::{run_stack, BlockParams, BlockTrace};
use embedding::{embed_utterance, EmbeddingParams, TokenInput};
use inference::{emission_scores, intent_cross_entropy, intent_logits, joint_loss, OutputHead, Projection};

/// Whether a forward pass applies dropout.
pub enum Mode<'r> {
    Eval,
    Train { dropout: f64, rng: &'r mut dyn RngCore },
}

impl Mode<'_> {
    pub fn dropout(&mut self, g: &mut Graph, x: Var) -> Result<Var> {
        match self {
            Mode::Train { dropout, rng } if *dropout > 0.0 => g.dropout(x, *dropout, *rng),
            _ => Ok(x),
        }
    }
}

/// An utterance resolved to ids, with gold targets.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub input: TokenInput,
    pub slots: Vec<usize>,
    pub intent: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Prediction {
    pub slots: Vec<String>,
    pub intent: String,
}

/// Values recorded by one forward pass.
pub struct Forward {
    pub x: Var,
    pub h0: Var,
    pub blocks: Vec<BlockTrace>,
    pub emissions: Var,
    pub intent_logits: Var,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CmNet {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub params: ParamStore,
    /// Per token id, whether a pretrained vector exists.
    pub covered: Vec<bool>,
}

impl CmNet {
    /// Fresh model. Without pretrained vectors the frozen word table is
    /// random and every real token counts as covered.
    pub fn new<R: Rng + ?Sized>(
        config: ModelConfig,
        vocab: Vocabulary,
        embeddings: Option<EmbeddingTable>,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let (n_slots, n_intents) = (vocab.slots.len(), vocab.intents.len());
        if n_slots == 0 || n_intents == 0 {
            return Err(Error::config("vocabulary has no slot tags or no intents"));
        }
        let d = config.hidden_size;
        let a = config.ablation;
        let mut store = ParamStore::new();
        let add = |store: &mut ParamStore, name: String, rows: usize, cols: usize, rng: &mut R| -> Result<()> {
            store.insert(name, init_param(rows, cols, rng), true).map(|_| ())
        };
        let zeros = |store: &mut ParamStore, name: String, cols: usize| -> Result<()> {
            store.insert(name, Tensor::zeros(1, cols), true).map(|_| ())
        };

        let (table, covered) = match embeddings {
            Some(e) => {
                if e.dim() != config.word_dim {
                    return Err(Error::config(format!(
                        "embeddings have dimension {} but word-dim is {}",
                        e.dim(),
                        config.word_dim
                    )));
                }
                (e.matrix, e.covered)
            }
            None => {
                let mut t = init_param(vocab.tokens.len(), config.word_dim, rng);
                embedding::clear_reserved_rows(&mut t);
                let covered = (0..vocab.tokens.len()).map(|i| i != PAD && i != UNK).collect();
                (t, covered)
            }
        };
        store.insert("embed.word", table, false)?;
        add(&mut store, "embed.unk".into(), 1, config.word_dim, rng)?;
        add(
            &mut store,
            "embed.chars".into(),
            vocab.chars.len(),
            config.char_dim,
            rng,
        )?;
        add(
            &mut store,
            "embed.conv.W".into(),
            3 * config.char_dim,
            config.char_filters,
            rng,
        )?;
        zeros(&mut store, "embed.conv.b".into(), config.char_filters)?;
        add(&mut store, "embed.proj".into(), config.input_dim(), d, rng)?;

        if !a.no_slot_memory {
            add(&mut store, "memory.slot".into(), n_slots, d, rng)?;
        }
        if !a.no_intent_memory {
            add(&mut store, "memory.intent".into(), n_intents, d, rng)?;
        }

        for l in 0..config.blocks {
            let p = format!("block.{l}");
            for (present, kind) in [(!a.no_slot_memory, "slot"), (!a.no_intent_memory, "intent")] {
                if present {
                    add(&mut store, format!("{p}.att.{kind}.Wq1"), d, d, rng)?;
                    add(&mut store, format!("{p}.att.{kind}.Wq2"), 2 * d, d, rng)?;
                }
            }
            if a.no_local_calculation {
                let width = d * (1 + usize::from(!a.no_slot_memory) + usize::from(!a.no_intent_memory));
                add(&mut store, format!("{p}.fuse.W"), width, d, rng)?;
                if config.gate_bias {
                    zeros(&mut store, format!("{p}.fuse.b"), d)?;
                }
            } else {
                for gate in block::GATES {
                    let g = format!("{p}.gate.{gate}");
                    add(&mut store, format!("{g}.W1"), 3 * d, d, rng)?;
                    add(&mut store, format!("{g}.W2"), config.input_dim(), d, rng)?;
                    if !a.no_slot_memory {
                        add(&mut store, format!("{g}.W3"), d, d, rng)?;
                    }
                    if !a.no_intent_memory {
                        add(&mut store, format!("{g}.W4"), d, d, rng)?;
                    }
                    if config.gate_bias {
                        zeros(&mut store, format!("{g}.b"), d)?;
                    }
                }
            }
            if !a.no_global_recurrence {
                let k = d / 2;
                for dir in ["fwd", "bwd"] {
                    add(&mut store, format!("{p}.lstm.{dir}.Wx"), d, 4 * k, rng)?;
                    add(&mut store, format!("{p}.lstm.{dir}.Wh"), k, 4 * k, rng)?;
                    zeros(&mut store, format!("{p}.lstm.{dir}.b"), 4 * k)?;
                }
            }
        }

        add(&mut store, "crf.transitions".into(), n_slots + 2, n_slots + 2, rng)?;
        add(&mut store, "crf.emit.W".into(), d, n_slots, rng)?;
        if !a.no_slot_memory && !config.tie_memories {
            add(&mut store, "crf.emit.Wslot".into(), d, n_slots, rng)?;
        }
        zeros(&mut store, "crf.emit.b".into(), n_slots)?;
        add(&mut store, "intent.W".into(), d, n_intents, rng)?;
        if !a.no_intent_memory && !config.tie_memories {
            add(&mut store, "intent.Wint".into(), d, n_intents, rng)?;
        }
        zeros(&mut store, "intent.b".into(), n_intents)?;

        Ok(Self {
            config,
            vocab,
            params: store,
            covered,
        })
    }

    /// `(name, shape, trainable)` for every parameter in creation order.
    pub fn manifest(&self) -> Vec<(String, Vec<usize>, bool)> {
        self.params
            .iter()
            .map(|p| (p.name.clone(), p.tensor.shape().to_vec(), p.trainable))
            .collect()
    }

    pub fn encode(&self, tokens: &[String]) -> TokenInput {
        let mut input = TokenInput {
            word_ids: Vec::with_capacity(tokens.len()),
            oov: Vec::with_capacity(tokens.len()),
            char_ids: Vec::with_capacity(tokens.len()),
        };
        for tok in tokens {
            let id = self.vocab.token_id(tok);
            let known = self.covered.get(id).copied().unwrap_or(false);
            input.word_ids.push(if known { id } else { UNK });
            input.oov.push(!known);
            input.char_ids.push(self.vocab.char_ids(tok));
        }
        input
    }

    /// Resolves an utterance with gold labels. Tags and the first intent
    /// must be known to the vocabulary.
    pub fn example(&self, u: &Utterance) -> Result<Example> {
        let slots = u
            .slots
            .iter()
            .map(|t| {
                self.vocab
                    .slots
                    .get(t)
                    .ok_or_else(|| Error::contract(format!("slot tag {t:?} is not in the vocabulary")))
            })
            .collect::<Result<Vec<_>>>()?;
        let intent = self
            .vocab
            .intents
            .get(u.primary_intent())
            .ok_or_else(|| Error::contract(format!("intent {:?} is not in the vocabulary", u.primary_intent())))?;
        Ok(Example {
            input: self.encode(&u.tokens),
            slots,
            intent,
        })
    }

    fn heads(&self, g: &mut Graph) -> Result<(OutputHead, OutputHead)> {
        let tie = self.config.tie_memories;
        let a = &self.config.ablation;
        let slot_feature = if a.no_slot_memory {
            None
        } else if tie {
            Some(Projection::Tied(g.param("memory.slot")?))
        } else {
            Some(Projection::Free(g.param("crf.emit.Wslot")?))
        };
        let intent_feature = if a.no_intent_memory {
            None
        } else if tie {
            Some(Projection::Tied(g.param("memory.intent")?))
        } else {
            Some(Projection::Free(g.param("intent.Wint")?))
        };
        let emit = OutputHead {
            w: g.param("crf.emit.W")?,
            feature: slot_feature,
            b: g.param("crf.emit.b")?,
        };
        let intent = OutputHead {
            w: g.param("intent.W")?,
            feature: intent_feature,
            b: g.param("intent.b")?,
        };
        Ok((emit, intent))
    }

    /// Records a full forward pass on `g`, which must read `self.params`.
    pub fn forward(&self, g: &mut Graph, input: &TokenInput, mode: &mut Mode) -> Result<Forward> {
        if input.is_empty() {
            return Err(Error::contract("cannot run the model on an empty utterance"));
        }
        let emb = EmbeddingParams::bind(g)?;
        let (x, h0) = embed_utterance(g, &emb, input, mode)?;
        let blocks = (0..self.config.blocks)
            .map(|l| BlockParams::bind(g, l, &self.config))
            .collect::<Result<Vec<_>>>()?;
        let traces = run_stack(g, x, h0, &blocks, &self.config.ablation, mode)?;
        let last = traces.last().expect("at least one block");
        let (emit, intent) = self.heads(g)?;
        let emissions = emission_scores(g, last.output.h, last.h_slot, &emit)?;
        let logits = intent_logits(g, last.output.h, last.h_int, &intent)?;
        Ok(Forward {
            x,
            h0,
            blocks: traces,
            emissions,
            intent_logits: logits,
        })
    }

    /// Joint training loss of one example.
    pub fn loss(&self, g: &mut Graph, ex: &Example, lambda: f64, mode: &mut Mode) -> Result<Var> {
        let fwd = self.forward(g, &ex.input, mode)?;
        let transitions = g.param("crf.transitions")?;
        let slot = crf_nll(g, fwd.emissions, transitions, &ex.slots)?;
        let intent = intent_cross_entropy(g, fwd.intent_logits, ex.intent)?;
        joint_loss(g, slot, intent, lambda)
    }

    /// Viterbi slot path and arg-max intent (ties go to the smaller id).
    pub fn predict(&self, tokens: &[String]) -> Result<Prediction> {
        let input = self.encode(tokens);
        let mut g = Graph::new(&self.params);
        let fwd = self.forward(&mut g, &input, &mut Mode::Eval)?;
        let (path, _) = viterbi_decode(g.value(fwd.emissions), self.params.tensor("crf.transitions")?)?;
        let logits = g.value(fwd.intent_logits).data();
        let mut best = 0;
        for (i, &v) in logits.iter().enumerate() {
            if v > logits[best] {
                best = i;
            }
        }
        Ok(Prediction {
            slots: path.iter().map(|&y| self.vocab.slots.name(y).to_owned()).collect(),
            intent: self.vocab.intents.name(best).to_owned(),
        })
    }
}

#[cfg(test)]
mod tests;
