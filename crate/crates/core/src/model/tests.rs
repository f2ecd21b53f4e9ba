use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::grad_check;
use crate::config::{Ablation, TrainConfig};
use crate::data::{parse_corpus, Scheme};
use crate::training::{train, Adam};

const CORPUS: &str = "\
play\tO
roy\tB-artist
orbison\tE-artist
#intent\tPlayMusic

book\tO
french\tS-cuisine
food\tO
#intent\tBookRestaurant

add\tO
abba\tS-artist
now\tO
#intent\tAddToPlaylist
";

fn corpus() -> Vec<Utterance> {
    parse_corpus(CORPUS, Scheme::Bioes).unwrap()
}

fn tiny_config(ablation: Ablation) -> ModelConfig {
    ModelConfig {
        scheme: Scheme::Bioes,
        hidden_size: 8,
        blocks: 2,
        word_dim: 4,
        char_dim: 3,
        char_filters: 4,
        tie_memories: true,
        gate_bias: true,
        ablation,
    }
}

fn model(cfg: ModelConfig, seed: u64) -> CmNet {
    let data = corpus();
    let vocab = Vocabulary::build(&data);
    CmNet::new(cfg, vocab, None, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

fn names(m: &CmNet) -> Vec<String> {
    m.manifest().into_iter().map(|(n, _, _)| n).collect()
}

#[test]
fn manifest_reflects_removals() {
    let full = names(&model(tiny_config(Ablation::default()), 0));
    assert!(full.iter().any(|n| n == "memory.slot"));
    assert!(full.iter().any(|n| n == "block.1.gate.u.W4"));

    let no_slot = names(&model(
        tiny_config(Ablation {
            no_slot_memory: true,
            ..Default::default()
        }),
        0,
    ));
    assert!(!no_slot
        .iter()
        .any(|n| n == "memory.slot" || n.contains("att.slot") || n.ends_with(".W3")));
    assert!(no_slot.iter().any(|n| n == "memory.intent"));

    let no_int = names(&model(
        tiny_config(Ablation {
            no_intent_memory: true,
            ..Default::default()
        }),
        0,
    ));
    assert!(!no_int
        .iter()
        .any(|n| n == "memory.intent" || n.contains("att.intent") || n.ends_with(".W4")));

    let no_local = names(&model(
        tiny_config(Ablation {
            no_local_calculation: true,
            ..Default::default()
        }),
        0,
    ));
    assert!(!no_local.iter().any(|n| n.contains(".gate.")));
    assert!(no_local.iter().any(|n| n == "block.0.fuse.W"));

    let no_global = names(&model(
        tiny_config(Ablation {
            no_global_recurrence: true,
            ..Default::default()
        }),
        0,
    ));
    assert!(!no_global.iter().any(|n| n.contains(".lstm.")));
}

#[test]
fn tying_saves_memory_sized_parameters() {
    let tied = model(tiny_config(Ablation::default()), 0);
    let untied = model(
        ModelConfig {
            tie_memories: false,
            ..tiny_config(Ablation::default())
        },
        0,
    );
    let (s, i, d) = (tied.vocab.slots.len(), tied.vocab.intents.len(), 8);
    assert_eq!(
        untied.params.trainable_size() - tied.params.trainable_size(),
        (s + i) * d
    );
}

#[test]
fn frozen_word_table_has_zero_reserved_rows() {
    let m = model(tiny_config(Ablation::default()), 3);
    let p = m.params.get("embed.word").unwrap();
    assert!(!p.trainable);
    assert!(p
        .tensor
        .row_slice(PAD)
        .iter()
        .chain(p.tensor.row_slice(UNK))
        .all(|&v| v == 0.0));
    assert!(!m.covered[UNK] && m.covered[2]);
    let input = m.encode(&["play".to_string(), "zzz".to_string()]);
    assert_eq!(input.oov, vec![false, true]);
    assert_eq!(input.word_ids[1], UNK);
}

fn check_gradients(cfg: ModelConfig, lambda: f64) -> crate::autodiff::GradCheckReport {
    let mut m = model(cfg, 7);
    let data = corpus();
    // four tokens
    let u = Utterance::new(
        ["play", "french", "abba", "now"].map(String::from).to_vec(),
        ["O", "S-cuisine", "S-artist", "O"].map(String::from).to_vec(),
        vec!["PlayMusic".into()],
    )
    .unwrap();
    assert!(data.len() == 3);
    let ex = m.example(&u).unwrap();
    let shell = m.clone();
    grad_check(&mut m.params, 1e-5, |g| shell.loss(g, &ex, lambda, &mut Mode::Eval)).unwrap()
}

#[test]
fn full_model_gradients_match_finite_differences() {
    let report = check_gradients(tiny_config(Ablation::default()), 0.5);
    for group in report.groups() {
        assert!(group.max_rel_error < 1e-4, "{group:?}");
    }
}

#[test]
fn ablated_and_untied_gradients_match() {
    let variants = [
        tiny_config(Ablation {
            no_slot_memory: true,
            ..Default::default()
        }),
        tiny_config(Ablation {
            no_intent_memory: true,
            ..Default::default()
        }),
        tiny_config(Ablation {
            no_local_calculation: true,
            ..Default::default()
        }),
        tiny_config(Ablation {
            no_global_recurrence: true,
            ..Default::default()
        }),
        tiny_config(Ablation {
            no_slot2int: true,
            no_int2slot: true,
            ..Default::default()
        }),
        ModelConfig {
            tie_memories: false,
            gate_bias: false,
            blocks: 1,
            ..tiny_config(Ablation::default())
        },
    ];
    for cfg in variants {
        let report = check_gradients(cfg.clone(), 0.3);
        assert!(report.max_rel_error() < 1e-4, "{:?}: {report:?}", cfg.ablation);
    }
}

#[test]
fn pure_intent_loss_leaves_crf_untouched() {
    let report = check_gradients(
        ModelConfig {
            blocks: 1,
            ..tiny_config(Ablation::default())
        },
        1.0,
    );
    for p in report.params.iter().filter(|p| p.name.starts_with("crf.")) {
        assert_eq!(p.max_abs_analytic, 0.0, "{}", p.name);
        assert_eq!(p.max_abs_numeric, 0.0, "{}", p.name);
    }
}

#[test]
fn gates_normalized_and_states_finite() {
    let m = model(
        ModelConfig {
            blocks: 3,
            ..tiny_config(Ablation::default())
        },
        1,
    );
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..20 {
        let n = rand::Rng::random_range(&mut rng, 1..=7);
        let tokens: Vec<String> = (0..n)
            .map(|i| ["play", "roy", "x", "Abba!"][i % 4].to_string())
            .collect();
        let input = m.encode(&tokens);
        let mut g = Graph::new(&m.params);
        let fwd = m.forward(&mut g, &input, &mut Mode::Eval).unwrap();
        for b in &fwd.blocks {
            let gates = b.gates.unwrap();
            let sum: Vec<f64> = (0..n * 8)
                .map(|k| {
                    [gates.i, gates.f, gates.l, gates.r]
                        .iter()
                        .map(|&v| g.value(v).data()[k])
                        .sum()
                })
                .collect();
            assert!(sum.iter().all(|s| (s - 1.0).abs() < 1e-12));
            assert!(g.value(b.output.h).is_finite() && g.value(b.output.c).is_finite());
        }
        assert_eq!(g.shape(fwd.emissions), &[n, m.vocab.slots.len()]);
        assert_eq!(g.shape(fwd.intent_logits), &[1, m.vocab.intents.len()]);
    }
}

#[test]
fn predictions_use_known_labels() {
    let m = model(tiny_config(Ablation::default()), 5);
    let p = m.predict(&["play".to_string(), "unknown".to_string()]).unwrap();
    assert_eq!(p.slots.len(), 2);
    assert!(p.slots.iter().all(|t| m.vocab.slots.get(t).is_some()));
    assert!(m.vocab.intents.get(&p.intent).is_some());
    assert!(m.predict(&[]).is_err());
}

#[test]
fn loss_decreases_on_one_utterance() {
    let mut m = model(tiny_config(Ablation::default()), 11);
    let ex = m.example(&corpus()[0]).unwrap();
    let mut adam = Adam::new(&m.params);
    let mut losses = Vec::new();
    for _ in 0..6 {
        let (loss, grads) = {
            let mut g = Graph::new(&m.params);
            let l = m.loss(&mut g, &ex, 0.5, &mut Mode::Eval).unwrap();
            (g.value(l).item(), g.backward(l).unwrap())
        };
        losses.push(loss);
        adam.update(&mut m.params, &grads, 0.001).unwrap();
    }
    assert!(losses[5] < losses[0], "{losses:?}");
}

#[test]
fn training_is_deterministic() {
    let cfg = TrainConfig {
        epochs: 2,
        dropout: 0.5,
        ..TrainConfig::default()
    };
    let run = || {
        let mut m = model(tiny_config(Ablation::default()), 4);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let out = train(&mut m, &corpus(), Some(&corpus()), &cfg, &mut rng, |_| {}).unwrap();
        (out.step_losses, m.params)
    };
    let (a, pa) = run();
    let (b, pb) = run();
    assert_eq!(a.len(), 6);
    assert_eq!(
        a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    );
    assert_eq!(pa, pb);
}

#[test]
fn frozen_embeddings_survive_training() {
    let mut m = model(tiny_config(Ablation::default()), 4);
    let before = m.params.tensor("embed.word").unwrap().clone();
    let cfg = TrainConfig {
        epochs: 3,
        ..TrainConfig::default()
    };
    train(&mut m, &corpus(), None, &cfg, &mut ChaCha8Rng::seed_from_u64(1), |_| {}).unwrap();
    assert_eq!(m.params.tensor("embed.word").unwrap(), &before);
    // every training token has a vector, so the unknown row stays put too
    let fresh = model(tiny_config(Ablation::default()), 4);
    assert_eq!(
        m.params.tensor("embed.unk").unwrap(),
        fresh.params.tensor("embed.unk").unwrap()
    );
    assert_ne!(
        m.params.tensor("embed.proj").unwrap(),
        fresh.params.tensor("embed.proj").unwrap()
    );
}
