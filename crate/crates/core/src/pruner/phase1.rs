//! Similarity-driven, frame-adaptive selection.

use serde::Serialize;

use super::{alloc, PruneError};
use crate::tensor::{self, Axis, Matrix, TieBreak};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Phase1Trace {
    /// Cosine similarity of every speech token to every text token (N×L).
    pub similarity: Matrix,
    /// Mean similarity of each speech token over the text tokens.
    pub token_scores: Vec<f32>,
    /// Sum of token scores per frame.
    pub frame_scores: Vec<f32>,
    /// Softmax of `frame_scores`.
    pub frame_probs: Vec<f32>,
    pub allocations: Vec<usize>,
    /// Ascending indices into the speech rows that were passed in.
    pub kept: Vec<usize>,
}

/// Frame `i` covers `[i·f, min((i+1)·f, n))`; the last frame may be short.
pub fn frame_bounds(n_tokens: usize, frame_size: usize) -> Vec<(usize, usize)> {
    assert!(frame_size >= 1);
    (0..n_tokens.div_ceil(frame_size))
        .map(|i| (i * frame_size, ((i + 1) * frame_size).min(n_tokens)))
        .collect()
}

pub fn phase1_select(
    speech: &Matrix,
    text: &Matrix,
    frame_size: usize,
    keep: usize,
    eps: f32,
) -> Result<Phase1Trace, PruneError> {
    let n = speech.rows();
    if keep > n {
        return Err(PruneError::KeepTooLarge { keep, available: n });
    }
    if text.rows() == 0 {
        return Err(PruneError::NoTextTokens);
    }
    if frame_size == 0 {
        return Err(PruneError::InvalidConfig("frame size must be at least 1".into()));
    }
    if n == 0 {
        return Ok(Phase1Trace {
            similarity: Matrix::zeros(0, text.rows()),
            token_scores: Vec::new(),
            frame_scores: Vec::new(),
            frame_probs: Vec::new(),
            allocations: Vec::new(),
            kept: Vec::new(),
        });
    }

    let speech_unit = tensor::l2_normalize_rows(speech, eps);
    let text_unit = tensor::l2_normalize_rows(text, eps);
    let similarity = tensor::matmul_transposed(&speech_unit, &text_unit)?;
    let token_scores = tensor::mean_axis(&similarity, Axis::Cols)?;

    let frames = frame_bounds(n, frame_size);
    let frame_scores: Vec<f32> = frames
        .iter()
        .map(|&(lo, hi)| token_scores[lo..hi].iter().map(|&s| s as f64).sum::<f64>() as f32)
        .collect();
    let frame_probs = tensor::softmax(&frame_scores)?;
    let capacities: Vec<usize> = frames.iter().map(|&(lo, hi)| hi - lo).collect();
    let allocations = alloc::allocate(&frame_probs, &capacities, keep)?;

    let mut kept = Vec::with_capacity(keep);
    for (&(lo, hi), &take) in frames.iter().zip(&allocations) {
        let local = tensor::topk_indices(&token_scores[lo..hi], take, TieBreak::LowerIndexFirst)?;
        kept.extend(local.into_iter().map(|i| lo + i));
    }

    Ok(Phase1Trace { similarity, token_scores, frame_scores, frame_probs, allocations, kept })
}
