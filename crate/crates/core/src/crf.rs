//! Linear-chain CRF over slot tags.
//!
//! Transition matrices are `(K+2) x (K+2)` for `K` tags, with row `K` the
//! begin state and column `K+1` the end state. Only the `K x K` tag block, the
//! begin row and the end column are ever read.

use crate::autodiff::{log_sum_exp, Axis, Graph, Tensor, Var};
use crate::error::{Error, Result};

fn check(emissions: &Tensor, transitions: &Tensor) -> Result<usize> {
    let k = emissions.cols();
    if transitions.shape() != [k + 2, k + 2] {
        return Err(Error::Dimension {
            op: "crf",
            lhs: emissions.shape().to_vec(),
            rhs: transitions.shape().to_vec(),
        });
    }
    Ok(k)
}

/// Unnormalized log score of one tag path.
pub fn crf_score(emissions: &Tensor, transitions: &Tensor, tags: &[usize]) -> Result<f64> {
    let k = check(emissions, transitions)?;
    if tags.len() != emissions.rows() {
        return Err(Error::contract(format!(
            "{} tags for {} positions",
            tags.len(),
            emissions.rows()
        )));
    }
    if let Some(&bad) = tags.iter().find(|&&y| y >= k) {
        return Err(Error::contract(format!("tag id {bad} out of range for {k} tags")));
    }
    let mut score = transitions.get(k, tags[0]);
    for (t, &y) in tags.iter().enumerate() {
        score += emissions.get(t, y);
        if t > 0 {
            score += transitions.get(tags[t - 1], y);
        }
    }
    Ok(score + transitions.get(tags[tags.len() - 1], k + 1))
}

/// Log of the sum of exponentiated path scores (forward algorithm).
pub fn crf_log_partition(emissions: &Tensor, transitions: &Tensor) -> Result<f64> {
    let k = check(emissions, transitions)?;
    let mut alpha: Vec<f64> = (0..k).map(|y| transitions.get(k, y) + emissions.get(0, y)).collect();
    let mut terms = vec![0.0; k];
    for t in 1..emissions.rows() {
        alpha = (0..k)
            .map(|y| {
                for (j, term) in terms.iter_mut().enumerate() {
                    *term = alpha[j] + transitions.get(j, y);
                }
                log_sum_exp(&terms) + emissions.get(t, y)
            })
            .collect();
    }
    for (j, term) in terms.iter_mut().enumerate() {
        *term = alpha[j] + transitions.get(j, k + 1);
    }
    Ok(log_sum_exp(&terms))
}

/// Highest-scoring path and its score. Ties resolve to the smaller tag id.
pub fn viterbi_decode(emissions: &Tensor, transitions: &Tensor) -> Result<(Vec<usize>, f64)> {
    let k = check(emissions, transitions)?;
    let n = emissions.rows();
    let mut delta: Vec<f64> = (0..k).map(|y| transitions.get(k, y) + emissions.get(0, y)).collect();
    let mut back = vec![vec![0usize; k]; n];
    for (t, pointers) in back.iter_mut().enumerate().skip(1) {
        let mut next = vec![0.0; k];
        for y in 0..k {
            let (arg, best) = argmax((0..k).map(|j| delta[j] + transitions.get(j, y)));
            pointers[y] = arg;
            next[y] = best + emissions.get(t, y);
        }
        delta = next;
    }
    let (mut y, best) = argmax((0..k).map(|j| delta[j] + transitions.get(j, k + 1)));
    let mut path = vec![0; n];
    for t in (0..n).rev() {
        path[t] = y;
        y = back[t][y];
    }
    Ok((path, best))
}

/// First index of the maximum; strict comparison keeps the smaller id on ties.
fn argmax(values: impl Iterator<Item = f64>) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        if i == 0 || v > best.1 {
            best = (i, v);
        }
    }
    best
}

/// Negative log-likelihood of `tags` recorded on the tape.
pub fn crf_nll(g: &mut Graph, emissions: Var, transitions: Var, tags: &[usize]) -> Result<Var> {
    let k = check(g.value(emissions), g.value(transitions))?;
    let n = g.shape(emissions)[0];
    if tags.len() != n || tags.iter().any(|&y| y >= k) {
        return Err(Error::contract(format!(
            "invalid gold path {tags:?} for {n} positions and {k} tags"
        )));
    }
    let tag_rows = g.slice(transitions, Axis::Rows, 0, k)?;
    let block = g.slice(tag_rows, Axis::Cols, 0, k)?;
    let to_end = g.slice(tag_rows, Axis::Cols, k + 1, 1)?;
    let begin_row = g.slice(transitions, Axis::Rows, k, 1)?;
    let from_begin = g.slice(begin_row, Axis::Cols, 0, k)?;

    let first = g.slice(emissions, Axis::Rows, 0, 1)?;
    let mut alpha = g.add(from_begin, first)?;
    for t in 1..n {
        let col = g.transpose(alpha);
        let scores = g.add(col, block)?;
        let reduced = g.logsumexp(scores, Axis::Rows);
        let emit = g.slice(emissions, Axis::Rows, t, 1)?;
        alpha = g.add(reduced, emit)?;
    }
    let col = g.transpose(alpha);
    let last = g.add(col, to_end)?;
    let log_z = g.logsumexp(last, Axis::Rows);

    let emit_idx: Vec<usize> = tags.iter().enumerate().map(|(t, &y)| t * k + y).collect();
    let w = k + 2;
    let mut trans_idx = vec![k * w + tags[0]];
    trans_idx.extend(tags.windows(2).map(|p| p[0] * w + p[1]));
    trans_idx.push(tags[n - 1] * w + k + 1);
    let emit_terms = g.pick(emissions, &emit_idx)?;
    let trans_terms = g.pick(transitions, &trans_idx)?;
    let emit_sum = g.sum(emit_terms);
    let trans_sum = g.sum(trans_terms);
    let gold = g.add(emit_sum, trans_sum)?;
    g.sub(log_z, gold)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{grad_check, ParamStore};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> Tensor {
        Tensor::new(
            vec![r, c],
            (0..r * c).map(|_| rng.random_range(-scale..scale)).collect(),
        )
        .unwrap()
    }

    fn all_paths(n: usize, k: usize) -> Vec<Vec<usize>> {
        (0..k.pow(n as u32))
            .map(|mut code| {
                (0..n)
                    .map(|_| {
                        let y = code % k;
                        code /= k;
                        y
                    })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn partition_and_viterbi_match_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let n = rng.random_range(1..=5);
            let k = rng.random_range(1..=4);
            let p = random(&mut rng, n, k, 3.0);
            let a = random(&mut rng, k + 2, k + 2, 3.0);
            let paths = all_paths(n, k);
            let scores: Vec<f64> = paths.iter().map(|y| crf_score(&p, &a, y).unwrap()).collect();
            let brute_z = log_sum_exp(&scores);
            let z = crf_log_partition(&p, &a).unwrap();
            assert!((z - brute_z).abs() < 1e-8, "{z} vs {brute_z}");

            let best = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let (path, score) = viterbi_decode(&p, &a).unwrap();
            assert!((score - best).abs() < 1e-8);
            assert!((crf_score(&p, &a, &path).unwrap() - best).abs() < 1e-8);
            assert!(z >= best - 1e-12);
        }
    }

    #[test]
    fn unused_transition_entries_ignored() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = random(&mut rng, 3, 3, 1.0);
        let a = random(&mut rng, 5, 5, 1.0);
        let mut b = a.clone();
        for i in 0..5 {
            b.set(i, 3, 1e6); // into begin
            b.set(4, i, -1e6); // out of end
        }
        b.set(3, 4, 7e5); // begin straight to end
        assert_eq!(crf_log_partition(&p, &a).unwrap(), crf_log_partition(&p, &b).unwrap());
        assert_eq!(viterbi_decode(&p, &a).unwrap(), viterbi_decode(&p, &b).unwrap());
    }

    #[test]
    fn single_tag_and_ties() {
        let p = Tensor::from_rows(&[vec![0.5], vec![-1.0]]).unwrap();
        let a = Tensor::zeros(3, 3);
        assert!((crf_log_partition(&p, &a).unwrap() - (-0.5)).abs() < 1e-15);
        assert_eq!(viterbi_decode(&p, &a).unwrap().0, vec![0, 0]);

        let flat = Tensor::zeros(2, 3);
        assert_eq!(viterbi_decode(&flat, &Tensor::zeros(5, 5)).unwrap().0, vec![0, 0]);
    }

    #[test]
    fn uniform_log_partition() {
        // all-zero scores: log K^N
        let z = crf_log_partition(&Tensor::zeros(4, 3), &Tensor::zeros(5, 5)).unwrap();
        assert!((z - 4.0 * 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn shape_errors() {
        let p = Tensor::zeros(2, 3);
        assert!(matches!(
            crf_log_partition(&p, &Tensor::zeros(3, 3)),
            Err(Error::Dimension { .. })
        ));
        assert!(crf_score(&p, &Tensor::zeros(5, 5), &[0]).is_err());
        assert!(crf_score(&p, &Tensor::zeros(5, 5), &[0, 3]).is_err());
    }

    #[test]
    fn tape_nll_matches_and_differentiates() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            // one tag makes every gradient identically zero, leaving only roundoff
            let n = rng.random_range(1..=5);
            let k = rng.random_range(2..=4);
            let tags: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
            let mut store = ParamStore::new();
            let p = random(&mut rng, n, k, 2.0);
            let a = random(&mut rng, k + 2, k + 2, 2.0);
            let expected = crf_log_partition(&p, &a).unwrap() - crf_score(&p, &a, &tags).unwrap();
            store.insert("emit", p, true).unwrap();
            store.insert("trans", a, true).unwrap();
            {
                let mut g = Graph::new(&store);
                let (pv, av) = (g.param("emit").unwrap(), g.param("trans").unwrap());
                let nll = crf_nll(&mut g, pv, av, &tags).unwrap();
                let got = g.value(nll).item();
                assert!((got - expected).abs() < 1e-10);
                assert!(got >= -1e-12);
            }
            let report = grad_check(&mut store, 1e-6, |g| {
                let (pv, av) = (g.param("emit")?, g.param("trans")?);
                crf_nll(g, pv, av, &tags)
            })
            .unwrap();
            assert!(report.max_rel_error() < 1e-6, "{report:?}");
        }
    }
}
