use crate::error::{Error, Result};
use crate::lm::{TinyLM, Token};
use crate::tensor::argmax;

/// Anything that yields a teacher-forced next-token prediction per position.
pub trait Predictor {
    fn predict(&self, tokens: &[Token]) -> Result<Vec<Token>>;
}

impl Predictor for TinyLM {
    fn predict(&self, tokens: &[Token]) -> Result<Vec<Token>> {
        let logits = self.logits(tokens)?;
        Ok((0..logits.rows).map(|r| argmax(logits.row(r)) as Token).collect())
    }
}

/// Fraction of positions where the two models' argmax predictions agree,
/// teacher-forcing both over the same sequences.
pub fn top1_overlap(a: &dyn Predictor, b: &dyn Predictor, sequences: &[Vec<Token>]) -> Result<f64> {
    let mut agree = 0usize;
    let mut total = 0usize;
    for seq in sequences.iter().filter(|s| !s.is_empty()) {
        let pa = a.predict(seq)?;
        let pb = b.predict(seq)?;
        agree += pa.iter().zip(&pb).filter(|(x, y)| x == y).count();
        total += pa.len();
    }
    if total == 0 {
        return Err(Error::InvalidInput("no scoreable positions for Top-1 overlap".into()));
    }
    Ok(agree as f64 / total as f64)
}
