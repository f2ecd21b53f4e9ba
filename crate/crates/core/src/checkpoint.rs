//! Text checkpoints.
//!
//! ```text
//! cmnet-checkpoint 1
//! config {...model config json...}
//! vocab {...vocabulary json...}
//! vocab-sha256 <hex>
//! uncovered <token ids without a pretrained vector>
//! param <name> <rows> <cols> <trainable 0|1>
//! <rows*cols values, 17 significant digits>
//! ...
//! sha256 <hex of every preceding byte>
//! ```
//!
//! Values are written with `{:.16e}`, which round-trips every finite `f64`
//! exactly. Loading rebuilds the architecture from the stored config and
//! requires the stored parameters to match its manifest name for name.

use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::autodiff::Tensor;
use crate::config::ModelConfig;
use crate::data::Vocabulary;
use crate::error::{Error, Result};
use crate::model::CmNet;

const MAGIC: &str = "cmnet-checkpoint 1";

fn hex_sha256(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

pub fn encode_checkpoint(model: &CmNet) -> String {
    let mut out = String::new();
    let config = serde_json::to_string(&model.config).expect("config serializes");
    writeln!(out, "{MAGIC}").unwrap();
    writeln!(out, "config {config}").unwrap();
    writeln!(out, "vocab {}", model.vocab.to_json()).unwrap();
    writeln!(out, "vocab-sha256 {}", model.vocab.fingerprint()).unwrap();
    let uncovered: Vec<String> = (0..model.covered.len())
        .filter(|&i| !model.covered[i])
        .map(|i| i.to_string())
        .collect();
    writeln!(out, "uncovered {}", uncovered.join(" ")).unwrap();
    for p in model.params.iter() {
        let (r, c) = (p.tensor.rows(), p.tensor.cols());
        writeln!(out, "param {} {r} {c} {}", p.name, u8::from(p.trainable)).unwrap();
        let values: Vec<String> = p.tensor.data().iter().map(|v| format!("{v:.16e}")).collect();
        writeln!(out, "{}", values.join(" ")).unwrap();
    }
    let digest = hex_sha256(out.as_bytes());
    writeln!(out, "sha256 {digest}").unwrap();
    out
}

fn field<'a>(line: Option<&'a str>, key: &str) -> Result<&'a str> {
    let line = line.ok_or_else(|| bad(format!("truncated before {key:?}")))?;
    line.strip_prefix(key)
        .and_then(|rest| rest.strip_prefix(' ').or((rest.is_empty()).then_some("")))
        .ok_or_else(|| bad(format!("expected {key:?} line, found {:?}", truncate(line))))
}

fn truncate(line: &str) -> String {
    line.chars().take(40).collect()
}

pub fn decode_checkpoint(text: &str) -> Result<CmNet> {
    let body_end = text
        .trim_end_matches('\n')
        .rfind('\n')
        .map(|i| i + 1)
        .ok_or_else(|| bad("empty or truncated file"))?;
    let (body, trailer) = text.split_at(body_end);
    let stored = field(Some(trailer.trim_end()), "sha256")?;
    if stored != hex_sha256(body.as_bytes()) {
        return Err(bad("checksum mismatch; the file is corrupted"));
    }

    let mut lines = body.lines();
    if lines.next() != Some(MAGIC) {
        return Err(bad("not a cmnet checkpoint"));
    }
    let config: ModelConfig =
        serde_json::from_str(field(lines.next(), "config")?).map_err(|e| bad(format!("config: {e}")))?;
    let vocab = Vocabulary::from_json(field(lines.next(), "vocab")?).map_err(|e| bad(format!("vocab: {e}")))?;
    if field(lines.next(), "vocab-sha256")? != vocab.fingerprint() {
        return Err(bad("vocabulary hash mismatch"));
    }
    let uncovered = field(lines.next(), "uncovered")?
        .split_whitespace()
        .map(|s| s.parse::<usize>().map_err(|_| bad(format!("bad token id {s:?}"))))
        .collect::<Result<Vec<_>>>()?;

    let mut model = CmNet::new(config, vocab, None, &mut ChaCha8Rng::seed_from_u64(0))
        .map_err(|e| bad(format!("stored config: {e}")))?;
    model.covered = vec![true; model.vocab.tokens.len()];
    for id in uncovered {
        *model
            .covered
            .get_mut(id)
            .ok_or_else(|| bad(format!("token id {id} out of range")))? = false;
    }

    let expected = model.manifest();
    for (name, shape, trainable) in &expected {
        let head: Vec<&str> = field(lines.next(), "param")?.split(' ').collect();
        let header_ok = matches!(head.as_slice(), [n, r, c, t]
            if n == name
                && r.parse() == Ok(shape[0])
                && c.parse() == Ok(shape[1])
                && *t == if *trainable { "1" } else { "0" });
        if !header_ok {
            return Err(bad(format!(
                "parameter {:?} does not match the architecture (expected {name} {shape:?})",
                head.join(" ")
            )));
        }
        let values = lines
            .next()
            .ok_or_else(|| bad(format!("missing values of {name}")))?
            .split(' ')
            .map(|s| s.parse::<f64>().map_err(|_| bad(format!("bad value {s:?} in {name}"))))
            .collect::<Result<Vec<_>>>()?;
        let tensor = Tensor::new(shape.clone(), values).map_err(|_| bad(format!("wrong value count for {name}")))?;
        model.params.get_mut(name).expect("manifest name").tensor = tensor;
    }
    if let Some(extra) = lines.next() {
        return Err(bad(format!("unexpected trailing line {:?}", truncate(extra))));
    }
    Ok(model)
}

pub fn write_checkpoint(path: impl AsRef<Path>, model: &CmNet) -> Result<()> {
    std::fs::write(path.as_ref(), encode_checkpoint(model))
        .map_err(|e| bad(format!("cannot write {}: {e}", path.as_ref().display())))
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<CmNet> {
    let text = std::fs::read_to_string(path.as_ref())
        .map_err(|e| bad(format!("cannot read {}: {e}", path.as_ref().display())))?;
    decode_checkpoint(&text)
}
