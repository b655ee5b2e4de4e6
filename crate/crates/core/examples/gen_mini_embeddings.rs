//! Regenerate `data/mini/embeddings.jsonl`: hashed bag-of-stems vectors for
//! every string the mini dataset asks an embedding provider about.
//!
//! cargo run --example gen_mini_embeddings

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use kpeval::corpus::{load_dataset, stem_tokens, truncate_tokens};
use kpeval::quality::DEFAULT_DOC_TOKEN_BUDGET;
use kpeval::utility::{build_query, DEFAULT_BASE};
use sha2::{Digest, Sha256};

const DIM: usize = 32;

fn vector(text: &str) -> Vec<f64> {
    let mut v = vec![0.0; DIM];
    // Shared component keeps every vector non-zero.
    v[0] = 0.25;
    for stem in stem_tokens(text) {
        let digest = Sha256::digest(stem.as_bytes());
        let slot = 1 + (digest[0] as usize) % (DIM - 1);
        let sign = if digest[1] & 1 == 0 { 1.0 } else { -1.0 };
        v[slot] += sign;
    }
    v.iter().map(|x| (x * 1e6_f64).round() / 1e6).collect()
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/mini");
    let dataset = load_dataset(&dir.join("instances.jsonl"), None)?;

    let mut texts = BTreeSet::new();
    for inst in &dataset.instances {
        for p in inst.references.iter().chain(&inst.predictions) {
            texts.insert(p.raw().to_string());
        }
        let n = inst.predictions.len();
        for j in 1..=n.min(DEFAULT_BASE) {
            texts.insert(build_query(&inst.predictions[..j]));
        }
        if n > 0 {
            texts.insert(build_query(&inst.predictions));
        }
    }
    for doc in &dataset.corpus_docs {
        texts.insert(truncate_tokens(&doc.text, DEFAULT_DOC_TOKEN_BUDGET));
    }

    let mut out = BufWriter::new(File::create(dir.join("embeddings.jsonl"))?);
    for text in &texts {
        let record = serde_json::json!({ "phrase": text, "vector": vector(text) });
        writeln!(out, "{record}")?;
    }
    out.flush()?;
    println!("wrote {} vectors", texts.len());
    Ok(())
}
