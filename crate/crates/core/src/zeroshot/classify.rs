use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::mask::ClipToken;
use crate::segment::LidarSegment;

use super::prompts::PromptEmbeddings;
use super::vocab::Vocabulary;

/// Softmax temperature for reported class probabilities. Display only.
pub const DISPLAY_TEMPERATURE: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassScores {
    pub class_ids: Vec<u16>,
    /// Cosine scores aligned with `class_ids`.
    pub scores: Vec<f64>,
    pub best: u16,
}

impl ClassScores {
    pub fn best_score(&self) -> f64 {
        let i = self.class_ids.iter().position(|&c| c == self.best).unwrap();
        self.scores[i]
    }

    /// Softmax of `scores / temperature`.
    pub fn probabilities(&self, temperature: f64) -> Vec<f64> {
        let m = self.scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = self.scores.iter().map(|s| ((s - m) / temperature).exp()).collect();
        let z: f64 = e.iter().sum();
        e.into_iter().map(|v| v / z).collect()
    }
}

fn embeddings(vocab: &Vocabulary) -> Result<&PromptEmbeddings> {
    vocab
        .embeddings()
        .ok_or_else(|| Error::invalid(format!("vocabulary {:?} has no prompt embeddings loaded", vocab.name)))
}

fn unit(token: &ClipToken, dim: usize) -> Result<Vec<f64>> {
    if token.dim() != dim {
        return Err(Error::LengthMismatch {
            expected: dim,
            actual: token.dim(),
        });
    }
    let n = token.norm();
    if !(n > 0.0) {
        return Err(Error::invalid("token has zero norm"));
    }
    Ok(token.values().iter().map(|v| v / n).collect())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Per class, the best cosine over its prompt embeddings; argmax with ties
/// to the lower class id.
pub fn classify_token(token: &ClipToken, vocab: &Vocabulary) -> Result<ClassScores> {
    let emb = embeddings(vocab)?;
    let t = unit(token, emb.dim)?;
    let mut class_ids = Vec::with_capacity(emb.classes.len());
    let mut scores = Vec::with_capacity(emb.classes.len());
    let mut best: Option<(u16, f64)> = None;
    for (id, prompts) in &emb.classes {
        let s = prompts.iter().map(|e| dot(&t, e)).fold(f64::NEG_INFINITY, f64::max);
        class_ids.push(*id);
        scores.push(s);
        let better = match best {
            None => true,
            Some((bid, bs)) => s > bs || (s == bs && *id < bid),
        };
        if better {
            best = Some((*id, s));
        }
    }
    Ok(ClassScores {
        class_ids,
        scores,
        best: best.map(|b| b.0).unwrap_or(0),
    })
}

pub fn classify_segments(segments: &[LidarSegment], vocab: &Vocabulary) -> Result<Vec<ClassScores>> {
    segments.par_iter().map(|s| classify_token(&s.token, vocab)).collect()
}

/// True iff the token is strictly closer (cosine) to `query` than to `other`.
pub fn query_selects(token: &ClipToken, query: &[f64], other: &[f64]) -> Result<bool> {
    if query.len() != other.len() {
        return Err(Error::LengthMismatch {
            expected: query.len(),
            actual: other.len(),
        });
    }
    let t = unit(token, query.len())?;
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let (nq, no) = (norm(query), norm(other));
    if !(nq > 0.0 && no > 0.0) {
        return Err(Error::invalid("query embeddings must be nonzero"));
    }
    Ok(dot(&t, query) / nq > dot(&t, other) / no)
}

/// Indices of the segments selected by a query vocabulary built with
/// [`Vocabulary::for_query`].
pub fn prompt_query(segments: &[LidarSegment], query_vocab: &Vocabulary) -> Result<Vec<usize>> {
    let emb = embeddings(query_vocab)?;
    let [(_, q), (_, o)] = emb.classes.as_slice() else {
        return Err(Error::invalid("a query vocabulary needs exactly the query and \"other\" classes"));
    };
    let (Some(q), Some(o)) = (q.first(), o.first()) else {
        return Err(Error::invalid("missing query embeddings"));
    };
    let mut out = Vec::new();
    for (i, s) in segments.iter().enumerate() {
        if query_selects(&s.token, q, o)? {
            out.push(i);
        }
    }
    Ok(out)
}
