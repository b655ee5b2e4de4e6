//! Reference-free diversity of a prediction set.

use std::collections::HashSet;

use crate::corpus::Phrase;
use crate::embedding::{cos_sim, Embedder};
use crate::error::Result;

/// Share of stemmed tokens in the prediction set that repeat an earlier one:
/// `1 - distinct / total`. Zero when there is at most one stem.
pub fn dup_token_ratio(predictions: &[Phrase]) -> f64 {
    let stems: Vec<&str> = predictions
        .iter()
        .flat_map(|p| p.stems().iter().map(String::as_str))
        .collect();
    if stems.len() <= 1 {
        return 0.0;
    }
    let distinct: HashSet<&str> = stems.iter().copied().collect();
    1.0 - distinct.len() as f64 / stems.len() as f64
}

/// Mean cosine similarity over ordered pairs `i != j`. Zero for fewer than two
/// predictions.
pub fn emb_sim(predictions: &[Phrase], embedder: &Embedder) -> Result<f64> {
    let m = predictions.len();
    if m < 2 {
        return Ok(0.0);
    }
    let texts: Vec<&str> = predictions.iter().map(Phrase::raw).collect();
    let vectors = embedder.embed(&texts)?;
    let mut total = 0.0;
    for i in 0..m {
        for j in 0..m {
            if i != j {
                total += cos_sim(&vectors[i], &vectors[j])?;
            }
        }
    }
    Ok(total / (m * (m - 1)) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::FileProvider;
    use crate::stem::porter_stem;

    fn ps(raw: &[&str]) -> Vec<Phrase> {
        raw.iter().map(|r| Phrase::new(r).unwrap()).collect()
    }

    fn embedder(pairs: &[(&str, &[f64])]) -> Embedder {
        Embedder::new(Box::new(
            FileProvider::from_pairs(pairs.iter().map(|(p, v)| (*p, v.to_vec()))).unwrap(),
        ))
    }

    #[test]
    fn dup_examples() {
        assert_eq!(dup_token_ratio(&ps(&["alpha beta", "gamma"])), 0.0);
        for w in ["neural", "network", "model"] {
            assert_eq!(porter_stem(w), w);
        }
        assert_eq!(
            dup_token_ratio(&ps(&["neural network", "neural model"])),
            0.25
        );
        assert_eq!(dup_token_ratio(&ps(&["net", "net"])), 0.5);
        assert_eq!(dup_token_ratio(&ps(&["very very deep"])), 1.0 - 2.0 / 3.0);
    }

    #[test]
    fn dup_degenerate() {
        assert_eq!(dup_token_ratio(&[]), 0.0);
        assert_eq!(dup_token_ratio(&ps(&["solo"])), 0.0);
    }

    #[test]
    fn dup_increases_when_phrase_duplicated() {
        let base = ps(&["graph", "neural network"]);
        let mut dup = base.clone();
        dup.push(base[1].clone());
        assert!(dup_token_ratio(&dup) > dup_token_ratio(&base));
    }

    #[test]
    fn emb_sim_examples() {
        let e = embedder(&[
            ("x", &[1.0, 0.0]),
            ("y", &[0.0, 1.0]),
            ("z", &[1.0, 1.0]),
            ("x2", &[2.0, 0.0]),
        ]);
        assert_eq!(emb_sim(&ps(&["x", "y"]), &e).unwrap(), 0.0);
        assert!((emb_sim(&ps(&["x", "x2"]), &e).unwrap() - 1.0).abs() < 1e-15);
        let three = emb_sim(&ps(&["x", "y", "z"]), &e).unwrap();
        let expected = (0.0 + 2.0 / 2f64.sqrt()) / 3.0;
        assert!((three - expected).abs() < 1e-12);
        assert!((three - 0.4714).abs() < 1e-4);
        assert_eq!(emb_sim(&ps(&["x"]), &e).unwrap(), 0.0);
        assert_eq!(emb_sim(&[], &e).unwrap(), 0.0);
    }

    #[test]
    fn emb_sim_permutation_invariant() {
        let e = embedder(&[("x", &[1.0, 0.2]), ("y", &[0.1, 1.0]), ("z", &[1.0, 1.0])]);
        let a = emb_sim(&ps(&["x", "y", "z"]), &e).unwrap();
        let b = emb_sim(&ps(&["z", "x", "y"]), &e).unwrap();
        assert!((a - b).abs() < 1e-12);
    }
}
