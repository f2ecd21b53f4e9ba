//! Per-token inputs: frozen word vectors with a trainable unknown row, plus a
//! width-3 character CNN with max pooling.

use crate::autodiff::{Axis, Graph, Tensor, Var};
use crate::data::vocab::{PAD, UNK};
use crate::error::Result;

use super::Mode;

/// Ids for one utterance, already resolved against the vocabulary.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenInput {
    /// Rows of the pretrained table; uncovered tokens point at the zero UNK row.
    pub word_ids: Vec<usize>,
    /// Tokens without a pretrained vector, which use the trainable UNK row.
    pub oov: Vec<bool>,
    pub char_ids: Vec<Vec<usize>>,
}

impl TokenInput {
    pub fn len(&self) -> usize {
        self.word_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.word_ids.is_empty()
    }
}

#[derive(Clone, Copy, Debug)]
pub struct EmbeddingParams {
    pub word: Var,
    pub unk: Var,
    pub chars: Var,
    pub conv_w: Var,
    pub conv_b: Var,
    pub proj: Var,
}

impl EmbeddingParams {
    pub fn bind(g: &mut Graph) -> Result<Self> {
        Ok(Self {
            word: g.param("embed.word")?,
            unk: g.param("embed.unk")?,
            chars: g.param("embed.chars")?,
            conv_w: g.param("embed.conv.W")?,
            conv_b: g.param("embed.conv.b")?,
            proj: g.param("embed.proj")?,
        })
    }
}

/// Character features, one row of `filters` values per token.
///
/// Each token is padded with one PAD character on both sides, so a token of
/// length L yields L windows of width 3.
pub fn char_cnn_embed(g: &mut Graph, table: Var, conv_w: Var, conv_b: Var, char_ids: &[Vec<usize>]) -> Result<Var> {
    let (mut left, mut mid, mut right) = (Vec::new(), Vec::new(), Vec::new());
    let mut windows = Vec::with_capacity(char_ids.len());
    for ids in char_ids {
        let ids: &[usize] = if ids.is_empty() { &[PAD] } else { ids };
        let mut padded = Vec::with_capacity(ids.len() + 2);
        padded.push(PAD);
        padded.extend_from_slice(ids);
        padded.push(PAD);
        for w in padded.windows(3) {
            left.push(w[0]);
            mid.push(w[1]);
            right.push(w[2]);
        }
        windows.push(ids.len());
    }
    let parts = [
        g.lookup(table, &left)?,
        g.lookup(table, &mid)?,
        g.lookup(table, &right)?,
    ];
    let stacked = g.concat(&parts, Axis::Cols)?;
    let conv = g.matmul(stacked, conv_w)?;
    let conv = g.add(conv, conv_b)?;
    let act = g.tanh(conv);
    let mut rows = Vec::with_capacity(windows.len());
    let mut start = 0;
    for len in windows {
        let token = g.slice(act, Axis::Rows, start, len)?;
        rows.push(g.max_over_time(token));
        start += len;
    }
    g.concat(&rows, Axis::Rows)
}

/// Returns `(X, H0)`: the dropped-out input features `[N, word + filters]`
/// and their projection to the hidden size.
pub fn embed_utterance(g: &mut Graph, p: &EmbeddingParams, input: &TokenInput, mode: &mut Mode) -> Result<(Var, Var)> {
    let pretrained = g.lookup(p.word, &input.word_ids)?;
    let mask: Vec<f64> = input.oov.iter().map(|&o| if o { 1.0 } else { 0.0 }).collect();
    let mask = g.input(Tensor::new(vec![mask.len(), 1], mask)?);
    let unk = g.mul(mask, p.unk)?;
    let words = g.add(pretrained, unk)?;
    let chars = char_cnn_embed(g, p.chars, p.conv_w, p.conv_b, &input.char_ids)?;
    let x = g.concat(&[words, chars], Axis::Cols)?;
    let x = mode.dropout(g, x)?;
    let h0 = g.matmul(x, p.proj)?;
    Ok((x, h0))
}

/// Sets the rows a table lookup must never use for real tokens to zero.
pub(crate) fn clear_reserved_rows(table: &mut Tensor) {
    for r in [PAD, UNK] {
        if r < table.rows() {
            for c in 0..table.cols() {
                table.set(r, c, 0.0);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::ParamStore;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn store(filters: Tensor, bias: Tensor) -> ParamStore {
        let mut s = ParamStore::new();
        // chars: pad=0, unk=1, 'a'=2, 'b'=3, one-dimensional embeddings
        s.insert(
            "chars",
            Tensor::from_rows(&[vec![0.5], vec![-1.0], vec![1.0], vec![2.0]]).unwrap(),
            true,
        )
        .unwrap();
        s.insert("w", filters, true).unwrap();
        s.insert("b", bias, true).unwrap();
        s
    }

    fn run(s: &ParamStore, ids: &[Vec<usize>]) -> Tensor {
        let mut g = Graph::new(s);
        let (t, w, b) = (g.param("chars").unwrap(), g.param("w").unwrap(), g.param("b").unwrap());
        let out = char_cnn_embed(&mut g, t, w, b, ids).unwrap();
        g.value(out).clone()
    }

    #[test]
    fn zero_filters_give_zero_features() {
        let s = store(Tensor::zeros(3, 4), Tensor::zeros(1, 4));
        let out = run(&s, &[vec![2, 3, 2], vec![3]]);
        assert_eq!(out.shape(), &[2, 4]);
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_char_is_one_window() {
        let s = store(
            Tensor::from_rows(&[vec![0.1], vec![0.2], vec![0.3]]).unwrap(),
            Tensor::scalar(0.05),
        );
        let out = run(&s, &[vec![3]]);
        // window [pad, b, pad] = [0.5, 2.0, 0.5]
        let expected = (0.1 * 0.5 + 0.2 * 2.0 + 0.3 * 0.5 + 0.05f64).tanh();
        assert!((out.item() - expected).abs() < 1e-15);
    }

    #[test]
    fn two_char_token_takes_max_window() {
        // filter [1, -1, 2], bias 0; "ab" = [pad, a, b, pad] = [0.5, 1, 2, 0.5]
        // windows: 0.5 - 1 + 4 = 3.5 and 1 - 2 + 1 = 0
        let s = store(
            Tensor::from_rows(&[vec![1.0], vec![-1.0], vec![2.0]]).unwrap(),
            Tensor::scalar(0.0),
        );
        let out = run(&s, &[vec![2, 3], vec![3, 2]]);
        assert!((out.get(0, 0) - 3.5f64.tanh()).abs() < 1e-15);
        // "ba": 0.5 - 2 + 2 = 0.5 and 2 - 1 + 1 = 2
        assert!((out.get(1, 0) - 2f64.tanh()).abs() < 1e-15);
    }

    #[test]
    fn case_sensitive_and_deterministic() {
        let s = store(
            Tensor::from_rows(&[vec![0.3], vec![-0.7], vec![0.2]]).unwrap(),
            Tensor::scalar(0.1),
        );
        assert_eq!(run(&s, &[vec![2, 3]]), run(&s, &[vec![2, 3]]));
        assert_ne!(run(&s, &[vec![2, 3]]), run(&s, &[vec![1, 3]]));
    }

    fn embed_store(d_in: usize) -> ParamStore {
        let mut s = ParamStore::new();
        // 4 words x 2 dims; rows 0 and 1 reserved and zero
        let word = Tensor::from_rows(&[vec![0.0, 0.0], vec![0.0, 0.0], vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        s.insert("embed.word", word, false).unwrap();
        s.insert("embed.unk", Tensor::row(vec![-1.0, 0.5]), true).unwrap();
        s.insert(
            "embed.chars",
            Tensor::from_rows(&[vec![0.0], vec![0.1], vec![0.2]]).unwrap(),
            true,
        )
        .unwrap();
        s.insert(
            "embed.conv.W",
            Tensor::from_rows(&[vec![1.0, 0.0], vec![0.5, 1.0], vec![0.0, -1.0]]).unwrap(),
            true,
        )
        .unwrap();
        s.insert("embed.conv.b", Tensor::row(vec![0.0, 0.1]), true).unwrap();
        let mut eye = Tensor::zeros(d_in, d_in);
        for i in 0..d_in {
            eye.set(i, i, 1.0);
        }
        s.insert("embed.proj", eye, true).unwrap();
        s
    }

    fn input() -> TokenInput {
        TokenInput {
            word_ids: vec![2, 1, 3],
            oov: vec![false, true, false],
            char_ids: vec![vec![2], vec![1, 2], vec![2, 2, 2]],
        }
    }

    #[test]
    fn identity_projection_and_unk_row() {
        let s = embed_store(4);
        let mut g = Graph::new(&s);
        let p = EmbeddingParams::bind(&mut g).unwrap();
        let (x, h0) = embed_utterance(&mut g, &p, &input(), &mut Mode::Eval).unwrap();
        assert_eq!(g.value(x), g.value(h0));
        assert_eq!(g.shape(x), &[3, 4]);
        assert_eq!(g.value(x).row_slice(0)[..2], [1.0, 2.0]);
        assert_eq!(g.value(x).row_slice(1)[..2], [-1.0, 0.5]);
        assert_eq!(g.value(x).row_slice(2)[..2], [3.0, 4.0]);
    }

    #[test]
    fn frozen_table_gets_no_gradient() {
        let s = embed_store(4);
        let mut g = Graph::new(&s);
        let p = EmbeddingParams::bind(&mut g).unwrap();
        let (_, h0) = embed_utterance(&mut g, &p, &input(), &mut Mode::Eval).unwrap();
        let loss = g.sum(h0);
        let grads = g.backward(loss).unwrap();
        assert!(grads.get("embed.word").is_none());
        assert_eq!(grads.get("embed.unk").unwrap().data(), &[1.0, 1.0]);
    }

    #[test]
    fn zero_dropout_matches_eval() {
        let s = embed_store(4);
        let eval = {
            let mut g = Graph::new(&s);
            let p = EmbeddingParams::bind(&mut g).unwrap();
            let (_, h0) = embed_utterance(&mut g, &p, &input(), &mut Mode::Eval).unwrap();
            g.value(h0).clone()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut g = Graph::new(&s);
        let p = EmbeddingParams::bind(&mut g).unwrap();
        let mut mode = Mode::Train {
            dropout: 0.0,
            rng: &mut rng,
        };
        let (_, h0) = embed_utterance(&mut g, &p, &input(), &mut mode).unwrap();
        assert_eq!(g.value(h0), &eval);
    }

    #[test]
    fn inverted_dropout_is_unbiased() {
        let s = embed_store(4);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let trials = 10_000;
        let mut sum = [0.0; 12];
        let mut sum_sq = [0.0; 12];
        let mut reference = Vec::new();
        for _ in 0..trials {
            let mut g = Graph::new(&s);
            let p = EmbeddingParams::bind(&mut g).unwrap();
            let mut mode = Mode::Train {
                dropout: 0.5,
                rng: &mut rng,
            };
            let (x, _) = embed_utterance(&mut g, &p, &input(), &mut mode).unwrap();
            for (i, v) in g.value(x).data().iter().enumerate() {
                sum[i] += v;
                sum_sq[i] += v * v;
            }
            if reference.is_empty() {
                let mut g = Graph::new(&s);
                let p = EmbeddingParams::bind(&mut g).unwrap();
                let (x, _) = embed_utterance(&mut g, &p, &input(), &mut Mode::Eval).unwrap();
                reference = g.value(x).data().to_vec();
            }
        }
        for i in 0..12 {
            let n = trials as f64;
            let mean = sum[i] / n;
            let var = sum_sq[i] / n - mean * mean;
            let sigma = (var / n).sqrt();
            assert!(
                (mean - reference[i]).abs() <= 3.0 * sigma + 1e-12,
                "coord {i}: {mean} vs {}",
                reference[i]
            );
        }
    }
}
