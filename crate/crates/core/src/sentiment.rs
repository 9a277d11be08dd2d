//! Deterministic lexicon scoring, late fusion, stacking, and the
//! fusion-divergence detector.

use std::collections::{BTreeMap, HashMap};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::fabric::CanonicalTimestamp;

const SHIPPED_LEXICON: &str = include_str!("../data/lexicon.txt");

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SentimentError {
    #[error("lexicon line {line}: {detail}")]
    BadLexicon { line: usize, detail: String },
    #[error("no score for modality {0:?}")]
    MissingModality(Modality),
    #[error("score {0} is outside [-1, 1]")]
    OutOfRange(f64),
    #[error("invalid fusion config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Modality {
    Text,
    OnchainFlow,
    GreyFeed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalityScore {
    pub modality: Modality,
    pub score: f64,
    pub observed_at: CanonicalTimestamp,
    pub provenance: String,
}

/// Token polarity table, `+1` or `-1` per token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lexicon {
    polarity: HashMap<String, i8>,
}

impl Lexicon {
    /// Parses newline-delimited `token,polarity` lines.
    pub fn parse(text: &str) -> Result<Self, SentimentError> {
        let mut polarity = HashMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |detail: &str| SentimentError::BadLexicon { line: i + 1, detail: detail.into() };
            let (token, pol) = line.split_once(',').ok_or_else(|| bad("expected token,polarity"))?;
            let pol = match pol.trim() {
                "+1" | "1" => 1,
                "-1" => -1,
                _ => return Err(bad("polarity must be +1 or -1")),
            };
            polarity.insert(token.trim().to_lowercase(), pol);
        }
        Ok(Self { polarity })
    }

    pub fn shipped() -> &'static Lexicon {
        static LEXICON: OnceLock<Lexicon> = OnceLock::new();
        LEXICON.get_or_init(|| Lexicon::parse(SHIPPED_LEXICON).expect("shipped lexicon parses"))
    }

    pub fn len(&self) -> usize {
        self.polarity.len()
    }

    pub fn is_empty(&self) -> bool {
        self.polarity.is_empty()
    }

    /// `(positive hits - negative hits) / max(1, hits)`.
    pub fn score<S: AsRef<str>>(&self, tokens: &[S]) -> f64 {
        let (mut pos, mut neg) = (0u32, 0u32);
        for t in tokens {
            match self.polarity.get(t.as_ref()) {
                Some(1) => pos += 1,
                Some(_) => neg += 1,
                None => {}
            }
        }
        (f64::from(pos) - f64::from(neg)) / f64::from((pos + neg).max(1))
    }
}

/// Lowercases and splits on anything that is not alphanumeric.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

pub fn lexicon_score<S: AsRef<str>>(tokens: &[S]) -> f64 {
    Lexicon::shipped().score(tokens)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    pub late_weights: BTreeMap<Modality, f64>,
    pub stack_intercept: f64,
    pub stack_coefficients: BTreeMap<Modality, f64>,
    pub divergence_threshold: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            late_weights: BTreeMap::from([(Modality::Text, 0.5), (Modality::OnchainFlow, 0.3), (Modality::GreyFeed, 0.2)]),
            stack_intercept: 0.0,
            stack_coefficients: BTreeMap::from([
                (Modality::Text, 1.0),
                (Modality::OnchainFlow, 1.5),
                (Modality::GreyFeed, 0.5),
            ]),
            divergence_threshold: 1.0,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<(), SentimentError> {
        if self.late_weights.values().any(|w| *w < 0.0) {
            return Err(SentimentError::InvalidConfig("late weights must be non-negative".into()));
        }
        if (self.late_weights.values().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(SentimentError::InvalidConfig("late weights must sum to 1".into()));
        }
        if self.divergence_threshold <= 0.0 {
            return Err(SentimentError::InvalidConfig("divergence threshold must be positive".into()));
        }
        Ok(())
    }
}

fn lookup(scores: &[ModalityScore], modality: Modality) -> Result<f64, SentimentError> {
    let s = scores
        .iter()
        .find(|s| s.modality == modality)
        .ok_or(SentimentError::MissingModality(modality))?
        .score;
    if !(-1.0..=1.0).contains(&s) {
        return Err(SentimentError::OutOfRange(s));
    }
    Ok(s)
}

pub fn late_fuse(scores: &[ModalityScore], config: &FusionConfig) -> Result<f64, SentimentError> {
    let mut total = 0.0;
    for (&m, &w) in &config.late_weights {
        total += w * lookup(scores, m)?;
    }
    Ok(total.clamp(-1.0, 1.0))
}

/// `tanh(intercept + sum of coefficient * score)`.
pub fn stack_fuse(scores: &[ModalityScore], config: &FusionConfig) -> Result<f64, SentimentError> {
    let mut z = config.stack_intercept;
    for (&m, &c) in &config.stack_coefficients {
        z += c * lookup(scores, m)?;
    }
    Ok(z.tanh())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Divergence {
    Flag,
    Clear,
}

pub fn divergence_detect(fused: f64, onchain_only: f64, threshold: f64) -> Divergence {
    if (fused - onchain_only).abs() >= threshold {
        Divergence::Flag
    } else {
        Divergence::Clear
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn scores(t: f64, o: f64, g: f64) -> Vec<ModalityScore> {
        [(Modality::Text, t), (Modality::OnchainFlow, o), (Modality::GreyFeed, g)]
            .into_iter()
            .map(|(modality, score)| ModalityScore {
                modality,
                score,
                observed_at: CanonicalTimestamp::from_secs(0),
                provenance: "fixture".into(),
            })
            .collect()
    }

    #[test]
    fn shipped_lexicon_size() {
        let n = Lexicon::shipped().len();
        assert!((150..=300).contains(&n), "{n}");
    }

    #[test]
    fn lexicon_examples() {
        assert_eq!(lexicon_score(&tokenize("the quick brown fox")), 0.0);
        assert_eq!(lexicon_score::<&str>(&[]), 0.0);
        assert_eq!(lexicon_score(&["rally", "surge"]), 1.0);
        assert_eq!(lexicon_score(&tokenize("Rally, surge and rebound despite the crash")), 0.5);
        assert!(Lexicon::parse("moon,2").is_err());
    }

    #[test]
    fn fusion_examples() {
        let equal = FusionConfig {
            late_weights: BTreeMap::from([
                (Modality::Text, 1.0 / 3.0),
                (Modality::OnchainFlow, 1.0 / 3.0),
                (Modality::GreyFeed, 1.0 / 3.0),
            ]),
            ..Default::default()
        };
        assert!((late_fuse(&scores(1.0, 1.0, 1.0), &equal).unwrap() - 1.0).abs() < 1e-12);
        let c = FusionConfig::default();
        c.validate().unwrap();
        assert!((late_fuse(&scores(1.0, 0.0, -1.0), &c).unwrap() - 0.3).abs() < 1e-12);
        assert_eq!(late_fuse(&scores(0.0, 0.0, 0.0), &c).unwrap(), 0.0);
        assert_eq!(
            late_fuse(&scores(0.0, 0.0, 0.0)[..2], &c),
            Err(SentimentError::MissingModality(Modality::GreyFeed))
        );
    }

    #[test]
    fn stacking_examples() {
        let zero = FusionConfig {
            stack_intercept: 0.0,
            stack_coefficients: BTreeMap::from([(Modality::Text, 0.0), (Modality::OnchainFlow, 0.0), (Modality::GreyFeed, 0.0)]),
            ..Default::default()
        };
        assert_eq!(stack_fuse(&scores(0.7, -0.2, 0.4), &zero).unwrap(), 0.0);
        let intercept = FusionConfig { stack_intercept: 0.8, ..zero };
        assert_eq!(stack_fuse(&scores(0.7, -0.2, 0.4), &intercept).unwrap(), 0.8f64.tanh());
    }

    #[test]
    fn divergence_examples() {
        assert_eq!(divergence_detect(0.3, 0.3, 0.5), Divergence::Clear);
        assert_eq!(divergence_detect(0.8, -0.5, 1.0), Divergence::Flag);
        // Poisoned text with wash trades moving on-chain flow the same way.
        let c = FusionConfig::default();
        let poisoned = scores(1.0, 0.9, 0.0);
        let fused = stack_fuse(&poisoned, &c).unwrap();
        assert_eq!(divergence_detect(fused, 0.9, c.divergence_threshold), Divergence::Clear);
    }

    proptest! {
        #[test]
        fn bounded_monotone_symmetric(
            t in -1.0f64..=1.0, o in -1.0f64..=1.0, g in -1.0f64..=1.0, bump in 0.0f64..=0.5,
            a in -1.0f64..=1.0, b in -1.0f64..=1.0,
        ) {
            let c = FusionConfig::default();
            let base = stack_fuse(&scores(t, o, g), &c).unwrap();
            let higher = stack_fuse(&scores((t + bump).min(1.0), o, g), &c).unwrap();
            prop_assert!(higher >= base);
            prop_assert!((-1.0..=1.0).contains(&base));
            prop_assert!((-1.0..=1.0).contains(&late_fuse(&scores(t, o, g), &c).unwrap()));
            prop_assert_eq!(divergence_detect(a, b, 0.7), divergence_detect(b, a, 0.7));
        }
    }
}
