//! The scoring forward pass and its gradient.
//!
//! Per channel (text tokens, entities) every query item attends over the
//! document items with a parameter-free dot-product softmax. The query matrix
//! and its attended view are combined element-wise (multiply for alignment,
//! add for complementarity), mean-pooled over query items, scaled by the
//! first-stage score and concatenated into `h`. The relevance score is
//! `hᵀMh`.

mod checkpoint;
mod features;
mod model;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{QderError, Result};

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use features::{
    build_features, AblationConfig, Channel, FeatureBlock, FeatureKind, InteractionFeatures, OpSet,
};
pub use model::{
    bilinear_form, Affine, BilinearModel, ChannelAdapter, HeadKind, ModelGradient, ScoreBreakdown,
    ScoringHead,
};

#[cfg(test)]
pub(crate) use features::access;

/// Element-wise combination of a query matrix with its attended view.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InteractionOp {
    Multiply,
    Add,
    Subtract,
}

impl InteractionOp {
    /// Canonical concatenation order.
    pub const ALL: [InteractionOp; 3] = [
        InteractionOp::Multiply,
        InteractionOp::Add,
        InteractionOp::Subtract,
    ];

    pub fn name(self) -> &'static str {
        match self {
            InteractionOp::Multiply => "multiply",
            InteractionOp::Add => "add",
            InteractionOp::Subtract => "subtract",
        }
    }
}

impl std::str::FromStr for InteractionOp {
    type Err = QderError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "multiply" | "mul" => Ok(InteractionOp::Multiply),
            "add" => Ok(InteractionOp::Add),
            "subtract" | "sub" => Ok(InteractionOp::Subtract),
            other => Err(QderError::Config(format!(
                "unknown interaction op {other:?}"
            ))),
        }
    }
}

impl std::fmt::Display for InteractionOp {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Attention weights and the attended document matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionResult {
    /// Rows are query items, columns document items; each row sums to one.
    pub weights: Array2<f64>,
    /// `weights · D`, one row per query item.
    pub attended: Array2<f64>,
}

/// Row-wise softmax of `Q·Dᵀ` followed by `A·D`.
pub fn attend(q: ArrayView2<'_, f64>, d: ArrayView2<'_, f64>) -> Result<AttentionResult> {
    if q.nrows() == 0 || d.nrows() == 0 {
        return Err(QderError::Empty(format!(
            "attention over {}×{} query and {}×{} document",
            q.nrows(),
            q.ncols(),
            d.nrows(),
            d.ncols()
        )));
    }
    if q.ncols() != d.ncols() {
        return Err(QderError::Shape(format!(
            "query dim {} vs document dim {}",
            q.ncols(),
            d.ncols()
        )));
    }
    let mut weights = q.dot(&d.t());
    softmax_rows(&mut weights);
    let attended = weights.dot(&d);
    Ok(AttentionResult { weights, attended })
}

/// In-place softmax over each row, shifted by the row max.
pub(crate) fn softmax_rows(m: &mut Array2<f64>) {
    for mut row in m.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|x| (x - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|x| x / sum);
    }
}

pub fn interact(
    q: ArrayView2<'_, f64>,
    attended: ArrayView2<'_, f64>,
    op: InteractionOp,
) -> Result<Array2<f64>> {
    if q.dim() != attended.dim() {
        return Err(QderError::Shape(format!(
            "interaction of {:?} with {:?}",
            q.dim(),
            attended.dim()
        )));
    }
    let f: fn(f64, f64) -> f64 = match op {
        InteractionOp::Multiply => |a, b| a * b,
        InteractionOp::Add => |a, b| a + b,
        InteractionOp::Subtract => |a, b| a - b,
    };
    Ok(Zip::from(&q).and(&attended).map_collect(|&a, &b| f(a, b)))
}

/// Column means.
pub fn mean_pool(m: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
    m.mean_axis(Axis(0))
        .ok_or_else(|| QderError::Empty("mean pooling over zero rows".into()))
}

/// Scale pooled features by the external relevance score.
pub fn integrate_relevance(h: ArrayView1<'_, f64>, s: f64) -> Array1<f64> {
    h.mapv(|x| s * x)
}

/// `hᵀMh` for a model's head; errors when `h` has the wrong length.
pub fn bilinear_score(h: ArrayView1<'_, f64>, model: &BilinearModel) -> Result<f64> {
    model.score_features(h)
}

/// Logistic function without overflow for large |x|.
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
