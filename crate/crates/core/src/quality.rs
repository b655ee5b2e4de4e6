//! Naturalness and faithfulness scored as boolean QA: a metric model answers
//! a yes/no question about each keyphrase and the score is
//! `P(yes) / (P(yes) + P(no))`.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{truncate_tokens, EvalInstance, Phrase};
use crate::error::{Error, Result};

/// Default document budget (whitespace tokens) for faithfulness prompts.
pub const DEFAULT_DOC_TOKEN_BUDGET: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QualityDimension {
    Naturalness,
    Faithfulness,
}

impl QualityDimension {
    pub fn as_str(self) -> &'static str {
        match self {
            QualityDimension::Naturalness => "naturalness",
            QualityDimension::Faithfulness => "faithfulness",
        }
    }
}

/// A fully rendered prompt for the metric model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QualityPrompt {
    pub dimension: QualityDimension,
    pub text: String,
}

pub fn build_naturalness_prompt(phrase: &Phrase) -> QualityPrompt {
    QualityPrompt {
        dimension: QualityDimension::Naturalness,
        text: format!(
            "question: Is this a natural utterance? </s> utterance: This is an article about {}.",
            phrase.raw()
        ),
    }
}

/// `doc_text` is substituted as given; callers truncate it first (see
/// [`faithfulness_document`]).
pub fn build_faithfulness_prompt(phrase: &Phrase, doc_text: &str) -> QualityPrompt {
    if doc_text.is_empty() {
        log::warn!(
            "faithfulness prompt for {:?} has an empty document",
            phrase.raw()
        );
    }
    QualityPrompt {
        dimension: QualityDimension::Faithfulness,
        text: format!(
            "question: Is this claim consistent with the document? </s> summary: the concept {} is mentioned or described in the document. </s> document: {}",
            phrase.raw(),
            doc_text
        ),
    }
}

/// Title and body, truncated to `token_budget` whitespace tokens.
pub fn faithfulness_document(instance: &EvalInstance, token_budget: usize) -> String {
    truncate_tokens(&instance.document_text(), token_budget)
}

/// `p_yes / (p_yes + p_no)`.
pub fn boolean_qa_score(p_yes: f64, p_no: f64) -> Result<f64> {
    if !(p_yes.is_finite() && p_no.is_finite()) || p_yes < 0.0 || p_no < 0.0 {
        return Err(Error::NonFinite(format!(
            "answer probabilities ({p_yes}, {p_no})"
        )));
    }
    if p_yes + p_no <= 0.0 {
        return Err(Error::DegenerateMass);
    }
    Ok(p_yes / (p_yes + p_no))
}

/// Answer probabilities for one prompt.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct YesNo {
    pub p_yes: f64,
    pub p_no: f64,
}

/// A model that returns yes/no probabilities for rendered prompts, in request
/// order.
pub trait ScoreProvider: Send + Sync {
    fn identity(&self) -> String;

    fn score(&self, prompts: &[QualityPrompt]) -> Result<Vec<YesNo>>;
}

/// Deterministic stand-in scorer: probabilities derived from a SHA-256 of the
/// prompt text. Useful for exercising the pipeline without a model.
#[derive(Debug, Clone, Default)]
pub struct StubScorer;

impl StubScorer {
    pub fn probabilities(prompt: &str) -> YesNo {
        let digest = Sha256::digest(prompt.as_bytes());
        let word = |i: usize| u32::from_be_bytes(digest[i..i + 4].try_into().expect("4 bytes"));
        // Both strictly positive.
        let p_yes = (word(0) % 10_000 + 1) as f64 / 10_001.0;
        let p_no = (word(4) % 10_000 + 1) as f64 / 10_001.0;
        YesNo { p_yes, p_no }
    }
}

impl ScoreProvider for StubScorer {
    fn identity(&self) -> String {
        "stub:sha256".into()
    }

    fn score(&self, prompts: &[QualityPrompt]) -> Result<Vec<YesNo>> {
        Ok(prompts
            .iter()
            .map(|p| Self::probabilities(&p.text))
            .collect())
    }
}

/// Mean boolean-QA score over an instance's predictions for one dimension.
pub fn score_dimension(
    instance: &EvalInstance,
    dimension: QualityDimension,
    provider: &dyn ScoreProvider,
    doc_token_budget: usize,
) -> Result<f64> {
    if instance.predictions.is_empty() {
        return Err(Error::EmptyPredictions);
    }
    let prompts: Vec<QualityPrompt> = match dimension {
        QualityDimension::Naturalness => instance
            .predictions
            .iter()
            .map(build_naturalness_prompt)
            .collect(),
        QualityDimension::Faithfulness => {
            let doc = faithfulness_document(instance, doc_token_budget);
            instance
                .predictions
                .iter()
                .map(|p| build_faithfulness_prompt(p, &doc))
                .collect()
        }
    };
    let answers = provider.score(&prompts).map_err(|e| match e {
        Error::ProviderUnavailable(msg) => Error::ProviderUnavailable(format!(
            "{msg} (while scoring {} {} prompts)",
            prompts.len(),
            dimension.as_str()
        )),
        other => other,
    })?;
    if answers.len() != prompts.len() {
        return Err(Error::Protocol(format!(
            "score provider returned {} answers for {} prompts",
            answers.len(),
            prompts.len()
        )));
    }
    let mut total = 0.0;
    for a in &answers {
        total += boolean_qa_score(a.p_yes, a.p_no)?;
    }
    Ok(total / answers.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    fn phrase(raw: &str) -> Phrase {
        Phrase::new(raw).unwrap()
    }

    fn instance(preds: &[&str]) -> EvalInstance {
        EvalInstance {
            id: "d".into(),
            title: "Title".into(),
            body: "one two three".into(),
            references: vec![],
            predictions: preds.iter().map(|p| phrase(p)).collect(),
        }
    }

    #[test]
    fn naturalness_template() {
        assert_eq!(
            build_naturalness_prompt(&phrase("word recognition")).text,
            "question: Is this a natural utterance? </s> utterance: This is an article about word recognition."
        );
        assert_eq!(
            build_naturalness_prompt(&phrase("U.S.")).text,
            "question: Is this a natural utterance? </s> utterance: This is an article about U.S.."
        );
    }

    #[test]
    fn faithfulness_template() {
        let p = build_faithfulness_prompt(&phrase("Cursive"), "some doc");
        assert_eq!(p.dimension, QualityDimension::Faithfulness);
        assert_eq!(
            p.text,
            "question: Is this claim consistent with the document? </s> summary: the concept Cursive is mentioned or described in the document. </s> document: some doc"
        );
        let empty = build_faithfulness_prompt(&phrase("x"), "");
        assert!(empty.text.ends_with("</s> document: "));
    }

    #[test]
    fn faithfulness_doc_respects_budget() {
        let mut inst = instance(&["x"]);
        inst.body = (0..2000)
            .map(|i| format!("w{i}"))
            .collect::<Vec<_>>()
            .join(" ");
        let doc = faithfulness_document(&inst, 512);
        assert_eq!(doc.split_whitespace().count(), 512);
        let prompt = build_faithfulness_prompt(&inst.predictions[0], &doc);
        let rendered_doc = prompt.text.split("</s> document: ").nth(1).unwrap();
        assert!(rendered_doc.split_whitespace().count() <= 512);
    }

    #[test]
    fn qa_normalization() {
        assert_eq!(boolean_qa_score(0.5, 0.5).unwrap(), 0.5);
        assert_eq!(boolean_qa_score(0.3, 0.0).unwrap(), 1.0);
        assert!((boolean_qa_score(0.2, 0.6).unwrap() - 0.25).abs() < 1e-15);
        assert!(matches!(
            boolean_qa_score(0.0, 0.0),
            Err(Error::DegenerateMass)
        ));
        assert!(boolean_qa_score(-0.1, 0.5).is_err());
    }

    struct Table(HashMap<String, YesNo>);

    impl ScoreProvider for Table {
        fn identity(&self) -> String {
            "table".into()
        }
        fn score(&self, prompts: &[QualityPrompt]) -> Result<Vec<YesNo>> {
            Ok(prompts.iter().map(|p| self.0[&p.text]).collect())
        }
    }

    struct Constant(YesNo);

    impl ScoreProvider for Constant {
        fn identity(&self) -> String {
            "constant".into()
        }
        fn score(&self, prompts: &[QualityPrompt]) -> Result<Vec<YesNo>> {
            Ok(vec![self.0; prompts.len()])
        }
    }

    struct Down;

    impl ScoreProvider for Down {
        fn identity(&self) -> String {
            "down".into()
        }
        fn score(&self, _prompts: &[QualityPrompt]) -> Result<Vec<YesNo>> {
            Err(Error::ProviderUnavailable("connection refused".into()))
        }
    }

    #[test]
    fn dimension_means() {
        let inst = instance(&["a", "b"]);
        let all_yes = Constant(YesNo {
            p_yes: 1.0,
            p_no: 0.0,
        });
        assert_eq!(
            score_dimension(&inst, QualityDimension::Naturalness, &all_yes, 512).unwrap(),
            1.0
        );

        let mut table = HashMap::new();
        table.insert(
            build_naturalness_prompt(&phrase("a")).text,
            YesNo {
                p_yes: 0.5,
                p_no: 0.5,
            },
        );
        table.insert(
            build_naturalness_prompt(&phrase("b")).text,
            YesNo {
                p_yes: 0.2,
                p_no: 0.6,
            },
        );
        let s = score_dimension(&inst, QualityDimension::Naturalness, &Table(table), 512).unwrap();
        assert!((s - 0.375).abs() < 1e-15);
    }

    #[test]
    fn dimension_errors() {
        let err = score_dimension(
            &instance(&["a", "b", "c"]),
            QualityDimension::Faithfulness,
            &Down,
            512,
        )
        .unwrap_err();
        assert!(err.to_string().contains("3 faithfulness prompts"), "{err}");
        assert!(matches!(
            score_dimension(
                &instance(&[]),
                QualityDimension::Naturalness,
                &StubScorer,
                512
            ),
            Err(Error::EmptyPredictions)
        ));
    }

    #[test]
    fn stub_is_deterministic_and_valid() {
        let a = StubScorer::probabilities("x");
        assert_eq!(a, StubScorer::probabilities("x"));
        assert!(a.p_yes > 0.0 && a.p_no > 0.0);
        let inst = instance(&["a", "b", "c"]);
        let fwd = score_dimension(&inst, QualityDimension::Faithfulness, &StubScorer, 512).unwrap();
        let rev = score_dimension(
            &instance(&["c", "a", "b"]),
            QualityDimension::Faithfulness,
            &StubScorer,
            512,
        )
        .unwrap();
        assert!((fwd - rev).abs() < 1e-12);
    }
}
