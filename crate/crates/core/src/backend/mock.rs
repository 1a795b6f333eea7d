//! Table-driven scorer for tests and fixtures.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{BackendError, ScoreRequest, Scored, Scorer, View};
use crate::aggregation::{Distribution, TokenId};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FixtureKey {
    pub frame_set: Vec<usize>,
    pub view: View,
    pub generated: Vec<TokenId>,
}

impl fmt::Display for FixtureKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "(frames {:?}, view {}, generated {:?})",
            self.frame_set, self.view, self.generated
        )
    }
}

/// Returns stored distributions verbatim; a request without a fixture is an error.
#[derive(Debug, Clone, Default)]
pub struct MockScorer {
    fixtures: HashMap<FixtureKey, Distribution>,
    vocab: Option<Vec<String>>,
}

impl MockScorer {
    pub fn new() -> Self {
        Self::default()
    }

    /// Token strings used by [`Scorer::detokenize`].
    pub fn with_vocab(mut self, vocab: Vec<String>) -> Self {
        self.vocab = Some(vocab);
        self
    }

    pub fn insert(
        &mut self,
        frame_set: Vec<usize>,
        view: View,
        generated: Vec<TokenId>,
        dist: Distribution,
    ) -> &mut Self {
        self.fixtures.insert(
            FixtureKey {
                frame_set,
                view,
                generated,
            },
            dist,
        );
        self
    }

    pub fn len(&self) -> usize {
        self.fixtures.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fixtures.is_empty()
    }
}

impl Scorer for MockScorer {
    fn score(&self, req: &ScoreRequest) -> Result<Scored, BackendError> {
        let key = FixtureKey {
            frame_set: req.frame_set.clone(),
            view: req.view.clone(),
            generated: req.generated.clone(),
        };
        match self.fixtures.get(&key) {
            Some(d) => Ok(d.clone().into()),
            None => Err(BackendError::FixtureMiss {
                key: key.to_string(),
            }),
        }
    }

    fn detokenize(&self, tokens: &[TokenId]) -> String {
        match &self.vocab {
            Some(vocab) => tokens
                .iter()
                .map(|&t| vocab.get(t as usize).map_or("", String::as_str))
                .collect(),
            None => {
                let parts: Vec<String> = tokens.iter().map(|t| format!("<{t}>")).collect();
                parts.join(" ")
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(frames: &[usize]) -> ScoreRequest {
        ScoreRequest {
            video_ref: "v".into(),
            frame_set: frames.to_vec(),
            view: View::Identity,
            prompt_text: String::new(),
            generated: vec![],
            want: Default::default(),
        }
    }

    #[test]
    fn returns_fixture_verbatim() {
        let d = Distribution::from_probs(vec![0.1, 0.9]).unwrap();
        let mut mock = MockScorer::new();
        mock.insert(vec![0, 16, 32, 48], View::Identity, vec![], d.clone());
        let got = mock.score(&req(&[0, 16, 32, 48])).unwrap();
        assert_eq!(got.distribution, d);
    }

    #[test]
    fn miss_names_key() {
        let mock = MockScorer::new();
        let err = mock.score(&req(&[1, 2])).unwrap_err();
        match err {
            BackendError::FixtureMiss { key } => assert!(key.contains("[1, 2]"), "{key}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn vocab_detokenize() {
        let mock = MockScorer::new().with_vocab(vec!["A".into(), "B".into(), ".".into()]);
        assert_eq!(mock.detokenize(&[1, 2]), "B.");
    }
}
