use super::vocab::{Vocabulary, PAD, UNK};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Pretrained word vectors aligned with a vocabulary.
///
/// Rows of tokens missing from the file (and the reserved rows) are zero and
/// marked uncovered; the embedding layer routes them to the trainable UNK row.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    pub matrix: Tensor,
    pub covered: Vec<bool>,
}

impl EmbeddingTable {
    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }

    /// Row used for `id`, after OOV routing.
    pub fn resolve(&self, id: usize) -> usize {
        if self.covered.get(id).copied().unwrap_or(false) {
            id
        } else {
            UNK
        }
    }
}

/// Reads `token v1 ... v_dim` lines. Lines for tokens outside the vocabulary
/// are validated and skipped; the first line for a token wins.
pub fn load_embeddings(text: &str, vocab: &Vocabulary, dim: usize) -> Result<EmbeddingTable> {
    if dim == 0 {
        return Err(Error::config("embedding dimension must be positive"));
    }
    let rows = vocab.tokens.len();
    let mut matrix = Tensor::zeros(rows, dim);
    let mut covered = vec![false; rows];
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(' ');
        let token = fields.next().unwrap_or_default();
        let values = fields
            .map(|f| {
                f.parse::<f64>().map_err(|_| Error::Embedding {
                    line: lineno,
                    msg: format!("invalid number {f:?}"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        if values.len() != dim {
            return Err(Error::Embedding {
                line: lineno,
                msg: format!("expected {dim} values for {token:?}, found {}", values.len()),
            });
        }
        if let Some(id) = vocab.tokens.get(token) {
            if id == PAD || id == UNK || covered[id] {
                continue;
            }
            covered[id] = true;
            for (j, v) in values.into_iter().enumerate() {
                matrix.set(id, j, v);
            }
        }
    }
    Ok(EmbeddingTable { matrix, covered })
}
