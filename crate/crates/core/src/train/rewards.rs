use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Word-level facts about one caption.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionStats {
    pub tokens: Vec<String>,
    pub entity_flags: Vec<bool>,
    pub has_color: bool,
    pub has_number: bool,
}

/// Lexicon-driven entity, color and number detection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lexicon {
    pub entities: HashSet<String>,
    pub colors: HashSet<String>,
    pub numbers: HashSet<String>,
}

impl Lexicon {
    /// Small built-in lexicon for demos.
    pub fn demo() -> Self {
        let set = |ws: &[&str]| ws.iter().map(|w| w.to_string()).collect();
        Self {
            entities: set(&[
                "dog", "cat", "car", "tree", "house", "river", "mountain", "beach", "phone", "person", "bird", "boat",
            ]),
            colors: set(&[
                "red", "green", "blue", "yellow", "orange", "pink", "black", "white", "purple", "brown", "gray",
            ]),
            numbers: set(&["one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten"]),
        }
    }

    /// Lowercased whitespace tokens with trailing punctuation stripped.
    pub fn analyze(&self, caption: &str) -> CaptionStats {
        let tokens: Vec<String> = caption
            .split_whitespace()
            .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase())
            .filter(|w| !w.is_empty())
            .collect();
        let entity_flags = tokens.iter().map(|t| self.entities.contains(t)).collect();
        let has_color = tokens.iter().any(|t| self.colors.contains(t));
        let has_number = tokens.iter().any(|t| self.numbers.contains(t) || t.chars().any(|c| c.is_ascii_digit()));
        CaptionStats { tokens, entity_flags, has_color, has_number }
    }
}

/// Entity words over total words.
pub fn entity_density_reward(stats: &CaptionStats) -> Result<f64> {
    if stats.tokens.is_empty() {
        return Err(Error::InvalidInput("empty caption".into()));
    }
    if stats.entity_flags.len() != stats.tokens.len() {
        return Err(Error::InvalidInput("one entity flag per word required".into()));
    }
    Ok(stats.entity_flags.iter().filter(|&&f| f).count() as f64 / stats.tokens.len() as f64)
}

/// `β₁·[has color] + β₂·[has number]`.
pub fn key_info_reward(stats: &CaptionStats, beta1: f64, beta2: f64) -> f64 {
    let ind = |b: bool| if b { 1.0 } else { 0.0 };
    beta1 * ind(stats.has_color) + beta2 * ind(stats.has_number)
}

/// `λ₁·r_entity + λ₂·r_info + λ₃·r_quality`.
pub fn total_reward(r_entity: f64, r_info: f64, r_quality: f64, lambdas: [f64; 3]) -> f64 {
    lambdas[0] * r_entity + lambdas[1] * r_info + lambdas[2] * r_quality
}
