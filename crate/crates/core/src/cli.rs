//! Command implementations behind the `cmnet` binary.
//!
//! Every command returns its result as data plus a rendered report; the
//! binary only prints and maps [`Error::exit_code`] to the process status.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::autodiff::{grad_check_with, ParamCheck};
use crate::checkpoint::{read_checkpoint, write_checkpoint};
use crate::config::{Ablation, ModelConfig, RunConfig};
use crate::data::{
    bio_to_bioes, bioes_to_bio, corpus_stats, load_embeddings, parse_corpus, parse_corpus_lenient, read_corpus,
    scheme::convert_lenient, serialize_corpus, CorpusStats, Scheme, Utterance, Vocabulary,
};
use crate::error::{Error, Result};
use crate::model::{CmNet, Mode};
use crate::training::{evaluate, train, EpochRecord, Evaluation, TrainOutcome};

/// Bundled 30-utterance BIOES corpus used by `gradcheck` without a config.
pub const TOY_CORPUS: &str = include_str!("../data/toy.txt");

/// Central-difference step and pass threshold of `gradcheck`.
pub const GRADCHECK_EPS: f64 = 1e-5;
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

/// Environment variable overriding the config seed.
pub const SEED_ENV: &str = "CMNET_SEED";

/// Loads a JSON run config, then applies `CMNET_SEED` (given as `env_seed`)
/// and `key=value` overrides in that order. Override values are parsed as
/// JSON and fall back to plain strings, so `lr=0.01` and `scheme=bioes`
/// both work.
pub fn load_config(path: &Path, overrides: &[String], env_seed: Option<&str>) -> Result<RunConfig> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
    let mut doc: Value = serde_json::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
    let obj = doc
        .as_object_mut()
        .ok_or_else(|| Error::config(format!("{}: expected a JSON object", path.display())))?;
    if let Some(seed) = env_seed {
        let seed: u64 = seed
            .trim()
            .parse()
            .map_err(|_| Error::config(format!("{SEED_ENV} must be a non-negative integer, got {seed:?}")))?;
        obj.insert("seed".into(), seed.into());
    }
    for item in overrides {
        let (key, raw) = item
            .split_once('=')
            .ok_or_else(|| Error::config(format!("override {item:?} is not key=value")))?;
        let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_owned()));
        obj.insert(key.trim().to_owned(), value);
    }
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    RunConfig::from_json(&doc.to_string(), base)
}

fn convert(corpus: Vec<Utterance>, from: Scheme, to: Scheme) -> Result<Vec<Utterance>> {
    if from == to {
        return Ok(corpus);
    }
    corpus
        .into_iter()
        .map(|mut u| {
            u.slots = match to {
                Scheme::Bioes => bio_to_bioes(&u.slots)?,
                Scheme::Bio2 => bioes_to_bio(&u.slots)?,
            };
            Ok(u)
        })
        .collect()
}

/// Reads a corpus, naming the file in parse errors.
pub fn read_split(path: &Path, scheme: Scheme) -> Result<Vec<Utterance>> {
    read_corpus(path, scheme).map_err(|e| match e {
        Error::Parse { line, msg } => Error::Parse {
            line,
            msg: format!("{msg} (in {})", path.display()),
        },
        Error::Io(io) => Error::config(format!("cannot read {}: {io}", path.display())),
        other => other,
    })
}

/// Corpora of a run, converted to the training scheme.
#[derive(Clone, Debug)]
pub struct Splits {
    pub train: Vec<Utterance>,
    pub valid: Option<Vec<Utterance>>,
    pub test: Option<Vec<Utterance>>,
}

impl Splits {
    pub fn load(cfg: &RunConfig) -> Result<Self> {
        cfg.check_paths()?;
        let load = |p: &Path| convert(read_split(p, cfg.scheme)?, cfg.scheme, cfg.train_scheme());
        Ok(Self {
            train: load(&cfg.train)?,
            valid: cfg.valid.as_deref().map(load).transpose()?,
            test: cfg.test.as_deref().map(load).transpose()?,
        })
    }

    /// The split used for model comparison: validation, else test, else train.
    pub fn held_out(&self) -> (&'static str, &[Utterance]) {
        match (&self.valid, &self.test) {
            (Some(v), _) => ("valid", v),
            (None, Some(t)) => ("test", t),
            _ => ("train", &self.train),
        }
    }
}

/// Fresh model for `cfg` with its vocabulary built from the training split.
pub fn build_model(cfg: &RunConfig, train_set: &[Utterance], rng: &mut ChaCha8Rng) -> Result<CmNet> {
    let vocab = Vocabulary::build(train_set);
    let table = match &cfg.embeddings {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::config(format!("embeddings: cannot read {}: {e}", path.display())))?;
            Some(load_embeddings(&text, &vocab, cfg.word_dim)?)
        }
        None => None,
    };
    CmNet::new(cfg.model_config(), vocab, table, rng)
}

fn fit(cfg: &RunConfig, splits: &Splits, on_epoch: impl FnMut(&EpochRecord)) -> Result<(CmNet, TrainOutcome)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = build_model(cfg, &splits.train, &mut rng)?;
    let outcome = train(
        &mut model,
        &splits.train,
        splits.valid.as_deref(),
        &cfg.train_config(),
        &mut rng,
        on_epoch,
    )?;
    let best = outcome.best_model(&model);
    Ok((best, outcome))
}

fn scores(e: &Evaluation) -> Value {
    json!({
        "slot-precision": e.slot.precision,
        "slot-recall": e.slot.recall,
        "slot-f1": e.slot.f1,
        "intent-accuracy": e.intent_accuracy,
    })
}

/// One line per epoch, as printed during training.
pub fn epoch_line(r: &EpochRecord) -> String {
    let mut line = format!("epoch {:>3}  lr {:.3e}  loss {:.6}", r.epoch, r.lr, r.mean_loss);
    if let (Some(f1), Some(acc)) = (r.valid_slot_f1, r.valid_intent_accuracy) {
        line += &format!("  valid slot-F1 {:6.2}  intent-acc {:6.2}", 100.0 * f1, 100.0 * acc);
    }
    line
}

pub struct TrainSummary {
    /// Model with the selected (best-epoch) parameters.
    pub model: CmNet,
    pub outcome: TrainOutcome,
    pub evaluations: Vec<(&'static str, Evaluation)>,
    pub checkpoint: PathBuf,
    pub metrics: PathBuf,
}

impl TrainSummary {
    pub fn report(&self) -> String {
        let mut out = format!("best epoch {}\n", self.outcome.best_epoch);
        for (name, e) in &self.evaluations {
            out += &format!(
                "{name:<5}  slot P {:6.2}  R {:6.2}  F1 {:6.2}  intent-acc {:6.2}\n",
                100.0 * e.slot.precision,
                100.0 * e.slot.recall,
                100.0 * e.slot.f1,
                100.0 * e.intent_accuracy
            );
        }
        out += &format!(
            "checkpoint {}\nmetrics {}\n",
            self.checkpoint.display(),
            self.metrics.display()
        );
        out
    }
}

/// Trains, writes `best.ckpt` and `metrics.json` into the checkpoint
/// directory and scores the selected model on every available split.
pub fn cmd_train(cfg: &RunConfig, on_epoch: impl FnMut(&EpochRecord)) -> Result<TrainSummary> {
    let splits = Splits::load(cfg)?;
    let (model, outcome) = fit(cfg, &splits, on_epoch)?;

    let mut evaluations = vec![("train", evaluate(&model, &splits.train)?)];
    if let Some(v) = &splits.valid {
        evaluations.push(("valid", evaluate(&model, v)?));
    }
    if let Some(t) = &splits.test {
        evaluations.push(("test", evaluate(&model, t)?));
    }

    std::fs::create_dir_all(&cfg.checkpoint_dir).map_err(|e| {
        Error::config(format!(
            "checkpoint-dir: cannot create {}: {e}",
            cfg.checkpoint_dir.display()
        ))
    })?;
    let checkpoint = cfg.checkpoint_dir.join("best.ckpt");
    write_checkpoint(&checkpoint, &model)?;

    let metrics = cfg.checkpoint_dir.join("metrics.json");
    let doc = json!({
        "seed": cfg.seed,
        "ablation": model.config.ablation.active(),
        "trainable-parameters": model.params.trainable_size(),
        "best-epoch": outcome.best_epoch,
        "epochs": outcome.epochs,
        "step-losses": outcome.step_losses,
        "scores": evaluations.iter().map(|(n, e)| (n.to_string(), scores(e))).collect::<serde_json::Map<_, _>>(),
    });
    let text = serde_json::to_string_pretty(&doc).expect("metrics serialize") + "\n";
    std::fs::write(&metrics, text).map_err(|e| Error::config(format!("cannot write {}: {e}", metrics.display())))?;

    Ok(TrainSummary {
        model,
        outcome,
        evaluations,
        checkpoint,
        metrics,
    })
}

/// Loads a checkpoint. With `vocab_source`, the vocabulary rebuilt from that
/// training corpus must match the one stored in the checkpoint.
pub fn load_model(checkpoint: &Path, vocab_source: Option<&RunConfig>) -> Result<CmNet> {
    let model = read_checkpoint(checkpoint)?;
    if let Some(cfg) = vocab_source {
        let train_set = Splits::load(cfg)?.train;
        let expected = Vocabulary::build(&train_set).fingerprint();
        let stored = model.vocab.fingerprint();
        if expected != stored {
            return Err(Error::Checkpoint(format!(
                "vocabulary hash mismatch: checkpoint has {stored}, {} gives {expected}",
                cfg.train.display()
            )));
        }
    }
    Ok(model)
}

pub struct EvalSummary {
    pub evaluation: Evaluation,
    pub report: String,
}

/// Scores `model` on a corpus written in `scheme` (default: the model's).
pub fn cmd_eval(model: &CmNet, corpus: &Path, scheme: Option<Scheme>) -> Result<EvalSummary> {
    let from = scheme.unwrap_or(model.config.scheme);
    let data = convert(read_split(corpus, from)?, from, model.config.scheme)?;
    let evaluation = evaluate(model, &data)?;
    let report = format!(
        "{}intent accuracy: {:6.2}%\n",
        evaluation.conll.report(),
        100.0 * evaluation.intent_accuracy
    );
    Ok(EvalSummary { evaluation, report })
}

/// Tags every utterance of `corpus` and returns the result in corpus format.
/// Gold tags in the input are ignored, so they need not be well formed.
pub fn cmd_predict(model: &CmNet, corpus: &Path, scheme: Option<Scheme>) -> Result<String> {
    let text =
        std::fs::read_to_string(corpus).map_err(|e| Error::config(format!("cannot read {}: {e}", corpus.display())))?;
    let out_scheme = scheme.unwrap_or(model.config.scheme);
    let tagged = parse_corpus_lenient(&text)?
        .into_iter()
        .map(|u| {
            let p = model.predict(&u.tokens)?;
            let slots = convert_lenient(&p.slots, model.config.scheme, out_scheme);
            Utterance::new(u.tokens, slots, vec![p.intent])
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(serialize_corpus(&tagged))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Scores {
    pub slot_f1: f64,
    pub intent_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRun {
    pub seed: u64,
    pub full: Scores,
    pub ablated: Scores,
}

#[derive(Clone, Debug)]
pub struct AblationReport {
    pub baseline: Ablation,
    pub variant: Ablation,
    pub split: &'static str,
    pub runs: Vec<AblationRun>,
    /// Parameters of the baseline that the variant does not have.
    pub removed: Vec<String>,
    /// Parameters only the variant has (the fuse layer replacing the gates).
    pub added: Vec<String>,
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    match v.len() {
        0 => f64::NAN,
        n if n % 2 == 1 => v[n / 2],
        n => 0.5 * (v[n / 2 - 1] + v[n / 2]),
    }
}

impl AblationReport {
    pub fn median_full_f1(&self) -> f64 {
        median(&self.runs.iter().map(|r| r.full.slot_f1).collect::<Vec<_>>())
    }

    pub fn median_ablated_f1(&self) -> f64 {
        median(&self.runs.iter().map(|r| r.ablated.slot_f1).collect::<Vec<_>>())
    }

    fn label(a: &Ablation) -> String {
        if a.is_full_model() {
            "full".into()
        } else {
            a.active().join("+")
        }
    }

    pub fn render(&self) -> String {
        let (base, var) = (Self::label(&self.baseline), Self::label(&self.variant));
        let mut out = format!("{} split, {base} vs {var}\n", self.split);
        out += &format!(
            "{:>6}  {:>12}  {:>12}  {:>12}  {:>12}\n",
            "seed", "F1 base", "F1 variant", "acc base", "acc variant"
        );
        for r in &self.runs {
            out += &format!(
                "{:>6}  {:>12.2}  {:>12.2}  {:>12.2}  {:>12.2}\n",
                r.seed,
                100.0 * r.full.slot_f1,
                100.0 * r.ablated.slot_f1,
                100.0 * r.full.intent_accuracy,
                100.0 * r.ablated.intent_accuracy
            );
        }
        let acc = |f: fn(&AblationRun) -> f64| median(&self.runs.iter().map(f).collect::<Vec<_>>());
        out += &format!(
            "{:>6}  {:>12.2}  {:>12.2}  {:>12.2}  {:>12.2}\n",
            "median",
            100.0 * self.median_full_f1(),
            100.0 * self.median_ablated_f1(),
            100.0 * acc(|r| r.full.intent_accuracy),
            100.0 * acc(|r| r.ablated.intent_accuracy)
        );
        out += &format!("removed parameters: {}\n", list(&self.removed));
        out += &format!("added parameters: {}\n", list(&self.added));
        out
    }

    pub fn to_json(&self) -> Value {
        let s = |x: &Scores| json!({"slot-f1": x.slot_f1, "intent-accuracy": x.intent_accuracy});
        json!({
            "split": self.split,
            "baseline": self.baseline.active(),
            "variant": self.variant.active(),
            "runs": self.runs.iter().map(|r| json!({"seed": r.seed, "full": s(&r.full), "ablated": s(&r.ablated)})).collect::<Vec<_>>(),
            "median-slot-f1": {"full": self.median_full_f1(), "ablated": self.median_ablated_f1()},
            "removed-parameters": self.removed,
            "added-parameters": self.added,
        })
    }
}

fn list(names: &[String]) -> String {
    if names.is_empty() {
        "none".into()
    } else {
        names.join(", ")
    }
}

fn union(a: Ablation, b: Ablation) -> Ablation {
    Ablation {
        no_slot2int: a.no_slot2int || b.no_slot2int,
        no_int2slot: a.no_int2slot || b.no_int2slot,
        no_slot_memory: a.no_slot_memory || b.no_slot_memory,
        no_intent_memory: a.no_intent_memory || b.no_intent_memory,
        no_local_calculation: a.no_local_calculation || b.no_local_calculation,
        no_global_recurrence: a.no_global_recurrence || b.no_global_recurrence,
    }
}

/// Trains the config's model and the same model with `flags` added, once per
/// seed, and compares them on the held-out split. Writes the report as
/// `ablation-<flags>.json` into the checkpoint directory.
pub fn cmd_ablate(
    cfg: &RunConfig,
    flags: Ablation,
    seeds: &[u64],
    mut on_run: impl FnMut(&str, u64, &EpochRecord),
) -> Result<AblationReport> {
    if flags.is_full_model() {
        return Err(Error::config("ablate needs at least one ablation flag"));
    }
    if seeds.is_empty() {
        return Err(Error::config("ablate needs at least one seed"));
    }
    let baseline = cfg.ablation();
    let variant = union(baseline, flags);
    variant.validate()?;
    let splits = Splits::load(cfg)?;
    let (split, held_out) = splits.held_out();

    let mut runs = Vec::new();
    let mut manifests = None;
    for &seed in seeds {
        let mut score = |a: Ablation, tag: &str| -> Result<(Scores, Vec<String>)> {
            let mut c = cfg.clone();
            c.seed = seed;
            c.set_ablation(a);
            let (model, _) = fit(&c, &splits, |r| on_run(tag, seed, r))?;
            let e = evaluate(&model, held_out)?;
            let names = model.manifest().into_iter().map(|(n, _, _)| n).collect();
            Ok((
                Scores {
                    slot_f1: e.slot.f1,
                    intent_accuracy: e.intent_accuracy,
                },
                names,
            ))
        };
        let (full, base_names) = score(baseline, "baseline")?;
        let (ablated, var_names) = score(variant, "variant")?;
        manifests.get_or_insert((base_names, var_names));
        runs.push(AblationRun { seed, full, ablated });
    }
    let (base_names, var_names) = manifests.expect("at least one seed");
    let report = AblationReport {
        baseline,
        variant,
        split,
        runs,
        removed: base_names.iter().filter(|n| !var_names.contains(n)).cloned().collect(),
        added: var_names.iter().filter(|n| !base_names.contains(n)).cloned().collect(),
    };

    std::fs::create_dir_all(&cfg.checkpoint_dir).map_err(|e| {
        Error::config(format!(
            "checkpoint-dir: cannot create {}: {e}",
            cfg.checkpoint_dir.display()
        ))
    })?;
    let path = cfg
        .checkpoint_dir
        .join(format!("ablation-{}.json", flags.active().join("+")));
    let text = serde_json::to_string_pretty(&report.to_json()).expect("report serializes") + "\n";
    std::fs::write(&path, text).map_err(|e| Error::config(format!("cannot write {}: {e}", path.display())))?;
    Ok(report)
}

#[derive(Clone, Debug)]
pub struct GradcheckSummary {
    pub config: ModelConfig,
    pub lambda: f64,
    pub tokens: Vec<String>,
    pub groups: Vec<ParamCheck>,
}

impl GradcheckSummary {
    pub fn render(&self) -> String {
        let c = &self.config;
        let mut out = format!(
            "d_h {}  blocks {}  N {}  lambda {}  tied {}  ablation [{}]\n",
            c.hidden_size,
            c.blocks,
            self.tokens.len(),
            self.lambda,
            c.tie_memories,
            c.ablation.active().join(", ")
        );
        out += &format!(
            "{:<28} {:>12} {:>14} {:>14}\n",
            "group", "max rel err", "max |analytic|", "max |numeric|"
        );
        for g in &self.groups {
            out += &format!(
                "{:<28} {:>12.3e} {:>14.3e} {:>14.3e}\n",
                g.name, g.max_rel_error, g.max_abs_analytic, g.max_abs_numeric
            );
        }
        out
    }

    /// Fails with the first group at or above the tolerance.
    pub fn verify(&self) -> Result<()> {
        match self.groups.iter().find(|g| !(g.max_rel_error < GRADCHECK_TOLERANCE)) {
            Some(g) => Err(Error::GradCheck {
                group: g.name.clone(),
                error: g.max_rel_error,
            }),
            None => Ok(()),
        }
    }
}

/// Shrinks a configured architecture to checkable size.
pub fn tiny(mut c: ModelConfig) -> ModelConfig {
    c.hidden_size = c.hidden_size.clamp(2, 8) & !1;
    c.blocks = c.blocks.clamp(1, 2);
    c.word_dim = c.word_dim.min(4);
    c.char_dim = c.char_dim.min(3);
    c.char_filters = c.char_filters.min(4);
    c
}

/// Default architecture of the built-in gradient check.
pub fn toy_model_config() -> ModelConfig {
    tiny(ModelConfig {
        scheme: Scheme::Bioes,
        ..ModelConfig::default()
    })
}

/// Last four tokens of the first utterance that has at least four, so the
/// window keeps a slot span; shorter corpora fall back to the longest one.
fn probe(corpus: &[Utterance]) -> Result<Utterance> {
    let u = corpus
        .iter()
        .find(|u| u.len() >= 4)
        .or_else(|| corpus.iter().max_by_key(|u| u.len()))
        .ok_or_else(|| Error::config("gradient check needs a non-empty corpus"))?;
    let start = u.len().saturating_sub(4);
    Utterance::new(u.tokens[start..].to_vec(), u.slots[start..].to_vec(), u.intents.clone())
}

/// Finite-difference check of every trainable parameter on one utterance of
/// at most four tokens. Without a config the bundled toy corpus is used at
/// d_h 8 with two blocks; with one, its corpus, ablations, tying and lambda
/// are kept and the dimensions are shrunk. Dropout is never applied.
///
/// `break_gradient` doubles the analytic gradient of every parameter whose
/// name starts with the given prefix, as a negative control.
pub fn cmd_gradcheck(cfg: Option<&RunConfig>, break_gradient: Option<&str>) -> Result<GradcheckSummary> {
    let (config, lambda, seed, corpus) = match cfg {
        Some(c) => {
            c.check_paths()?;
            let train_set = convert(read_split(&c.train, c.scheme)?, c.scheme, c.train_scheme())?;
            (tiny(c.model_config()), c.lambda, c.seed, train_set)
        }
        None => (toy_model_config(), 0.5, 1, parse_corpus(TOY_CORPUS, Scheme::Bioes)?),
    };
    let mut model = CmNet::new(
        config.clone(),
        Vocabulary::build(&corpus),
        None,
        &mut ChaCha8Rng::seed_from_u64(seed),
    )?;
    let utterance = probe(&corpus)?;
    let example = model.example(&utterance)?;

    let broken: Vec<_> = match break_gradient {
        Some(prefix) => {
            let ids: Vec<_> = model
                .params
                .iter()
                .filter(|p| p.trainable && p.name.starts_with(prefix))
                .map(|p| model.params.id(&p.name).expect("listed parameter"))
                .collect();
            if ids.is_empty() {
                return Err(Error::config(format!("no trainable parameter starts with {prefix:?}")));
            }
            ids
        }
        None => Vec::new(),
    };

    let shell = model.clone();
    let report = grad_check_with(
        &mut model.params,
        GRADCHECK_EPS,
        |g| shell.loss(g, &example, lambda, &mut Mode::Eval),
        |grads| {
            for id in broken {
                if let Some(t) = grads.by_id_mut(id) {
                    t.data_mut().iter_mut().for_each(|v| *v = 2.0 * *v + 1e-3);
                }
            }
        },
    )?;
    Ok(GradcheckSummary {
        config,
        lambda,
        tokens: utterance.tokens,
        groups: report.groups(),
    })
}

/// Statistics over named corpus files, all in `scheme`.
pub fn cmd_stats(files: &[(String, PathBuf)], scheme: Scheme) -> Result<CorpusStats> {
    let corpora = files
        .iter()
        .map(|(name, path)| Ok((name.as_str(), read_split(path, scheme)?)))
        .collect::<Result<Vec<_>>>()?;
    let view: Vec<(&str, &[Utterance])> = corpora.iter().map(|(n, c)| (*n, c.as_slice())).collect();
    Ok(corpus_stats(&view))
}

/// Split files named in a run config, in train/valid/test order.
pub fn config_splits(cfg: &RunConfig) -> Vec<(String, PathBuf)> {
    let mut out = vec![("Train".to_string(), cfg.train.clone())];
    out.extend(cfg.valid.clone().map(|p| ("Validation".to_string(), p)));
    out.extend(cfg.test.clone().map(|p| ("Test".to_string(), p)));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_handles_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(&[]).is_nan());
    }

    #[test]
    fn tiny_respects_limits() {
        let c = tiny(ModelConfig {
            hidden_size: 7,
            blocks: 3,
            ..ModelConfig::default()
        });
        assert_eq!((c.hidden_size, c.blocks), (6, 2));
        let c = tiny(ModelConfig::default());
        assert_eq!(
            (c.hidden_size, c.blocks, c.word_dim, c.char_dim, c.char_filters),
            (8, 2, 4, 3, 4)
        );
    }

    #[test]
    fn probe_keeps_a_four_token_window() {
        let corpus = parse_corpus(TOY_CORPUS, Scheme::Bioes).unwrap();
        let u = probe(&corpus).unwrap();
        assert_eq!(u.len(), 4);
        assert!(u.slots.iter().any(|t| t != "O"), "{u:?}");
    }

    #[test]
    fn toy_corpus_shape() {
        let corpus = parse_corpus(TOY_CORPUS, Scheme::Bioes).unwrap();
        let v = Vocabulary::build(&corpus);
        assert_eq!(corpus.len(), 30);
        assert_eq!(v.slots.len(), 6);
        assert_eq!(v.intents.len(), 3);
    }

    #[test]
    fn overrides_apply_after_the_environment() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.json");
        std::fs::write(&path, r#"{"train": "t.txt", "checkpoint-dir": "out", "seed": 3}"#).unwrap();
        let cfg = load_config(&path, &[], Some("11")).unwrap();
        assert_eq!(cfg.seed, 11);
        assert_eq!(cfg.train, dir.path().join("t.txt"));
        let cfg = load_config(
            &path,
            &["seed=12".into(), "scheme=bioes".into(), "lr=0.5".into()],
            Some("11"),
        )
        .unwrap();
        assert_eq!((cfg.seed, cfg.scheme, cfg.lr), (12, Scheme::Bioes, 0.5));
        for bad in [
            load_config(&path, &[], Some("-1")),
            load_config(&path, &["nonsense".into()], None),
        ] {
            assert_eq!(bad.unwrap_err().exit_code(), 2);
        }
        assert!(load_config(&path, &["unknown-key=1".into()], None).is_err());
    }
}
