//! Binarized-attention selection.

use serde::Serialize;

use super::PruneError;
use crate::tensor::{self, Axis, Matrix, TensorError, TieBreak};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Phase2Trace {
    /// Row-softmaxed binarized attention (queries × keys).
    pub attention: Matrix,
    /// Attention each token receives, averaged over queries.
    pub token_scores: Vec<f32>,
    /// Ascending selected indices. [`phase2_select`] returns positions within
    /// its input rows; [`super::speechprune`] rewrites them into original
    /// speech indices.
    pub kept: Vec<usize>,
}

/// Signed binarized attention over `speech_kept`, softmax across keys.
///
/// The ±1 products are carried out in integer arithmetic, so the logits
/// `Q'K'ᵀ` are exact before the `1/√d_k` scaling.
pub fn binarized_attention(speech_kept: &Matrix, wq: &Matrix, wk: &Matrix) -> Result<Matrix, PruneError> {
    if wq.shape() != wk.shape() {
        return Err(PruneError::InvalidConfig(format!(
            "query weights {:?} and key weights {:?} differ in shape",
            wq.shape(),
            wk.shape()
        )));
    }
    if speech_kept.cols() != wq.rows() {
        return Err(TensorError::ShapeMismatch {
            op: "binarized projection",
            left_rows: speech_kept.rows(),
            left_cols: speech_kept.cols(),
            right_rows: wq.rows(),
            right_cols: wq.cols(),
        }
        .into());
    }
    let n = speech_kept.rows();
    let dk = wq.cols();
    let speech_b = signs(speech_kept);
    let queries = project(&speech_b, n, speech_kept.cols(), &signs(&wq.transpose()), dk);
    let keys = project(&speech_b, n, speech_kept.cols(), &signs(&wk.transpose()), dk);

    let scale = (dk as f64).sqrt();
    let mut attention = Matrix::zeros(n, n);
    let mut logits = vec![0f32; n];
    for i in 0..n {
        let q = &queries[i * dk..(i + 1) * dk];
        for (j, slot) in logits.iter_mut().enumerate() {
            let k = &keys[j * dk..(j + 1) * dk];
            let dot: i64 = q.iter().zip(k).map(|(&a, &b)| a as i64 * b as i64).sum();
            *slot = (dot as f64 / scale) as f32;
        }
        attention.row_mut(i).copy_from_slice(&tensor::softmax(&logits)?);
    }
    Ok(attention)
}

fn signs(m: &Matrix) -> Vec<i32> {
    m.data().iter().map(|&x| if x >= 0.0 { 1 } else { -1 }).collect()
}

/// `rows (n×d) · weightsᵀ`, with `weights_t` stored as `dk×d`.
fn project(rows: &[i32], n: usize, d: usize, weights_t: &[i32], dk: usize) -> Vec<i32> {
    if d == 0 {
        return vec![0; n * dk];
    }
    let mut out = Vec::with_capacity(n * dk);
    for r in rows.chunks_exact(d) {
        for w in weights_t.chunks_exact(d) {
            out.push(r.iter().zip(w).map(|(&a, &b)| a * b).sum());
        }
    }
    out
}

pub fn phase2_select(speech_kept: &Matrix, wq: &Matrix, wk: &Matrix, keep: usize) -> Result<Phase2Trace, PruneError> {
    let n = speech_kept.rows();
    if keep > n {
        return Err(PruneError::KeepTooLarge { keep, available: n });
    }
    if n == 0 {
        return Ok(Phase2Trace { attention: Matrix::zeros(0, 0), token_scores: Vec::new(), kept: Vec::new() });
    }
    let attention = binarized_attention(speech_kept, wq, wk)?;
    let token_scores = tensor::mean_axis(&attention, Axis::Rows)?;
    let kept = tensor::topk_indices(&token_scores, keep, TieBreak::LowerIndexFirst)?;
    Ok(Phase2Trace { attention, token_scores, kept })
}
