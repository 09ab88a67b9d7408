use ndarray::{concatenate, s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::{attend, interact, mean_pool, InteractionOp};
use crate::data_io::TextRecord;
use crate::error::{QderError, Result};

/// Which element-wise interactions are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct OpSet {
    pub multiply: bool,
    pub add: bool,
    pub subtract: bool,
}

impl OpSet {
    pub const NONE: OpSet = OpSet {
        multiply: false,
        add: false,
        subtract: false,
    };

    pub fn of(ops: &[InteractionOp]) -> Self {
        let mut set = OpSet::NONE;
        for op in ops {
            match op {
                InteractionOp::Multiply => set.multiply = true,
                InteractionOp::Add => set.add = true,
                InteractionOp::Subtract => set.subtract = true,
            }
        }
        set
    }

    pub fn contains(&self, op: InteractionOp) -> bool {
        match op {
            InteractionOp::Multiply => self.multiply,
            InteractionOp::Add => self.add,
            InteractionOp::Subtract => self.subtract,
        }
    }

    /// Active ops in concatenation order.
    pub fn active(&self) -> Vec<InteractionOp> {
        InteractionOp::ALL
            .into_iter()
            .filter(|&op| self.contains(op))
            .collect()
    }

    pub fn is_empty(&self) -> bool {
        !(self.multiply || self.add || self.subtract)
    }
}

/// Feature layout switches.
///
/// An empty op set means "no interactions": each channel contributes the
/// pooled query matrix and the pooled attended matrix instead.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AblationConfig {
    pub ops: OpSet,
    pub use_text: bool,
    pub use_entity: bool,
    pub use_score_scaling: bool,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig {
            ops: OpSet {
                multiply: true,
                add: true,
                subtract: false,
            },
            use_text: true,
            use_entity: true,
            use_score_scaling: true,
        }
    }
}

impl AblationConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.use_text && !self.use_entity {
            return Err(QderError::Config(
                "at least one of the text and entity channels must be active".into(),
            ));
        }
        Ok(())
    }

    /// Pooled blocks emitted per active channel.
    pub fn kinds(&self) -> Vec<FeatureKind> {
        if self.ops.is_empty() {
            vec![FeatureKind::QueryMean, FeatureKind::AttendedMean]
        } else {
            self.ops.active().into_iter().map(FeatureKind::Op).collect()
        }
    }

    pub fn channels(&self) -> Vec<Channel> {
        let mut out = Vec::with_capacity(2);
        if self.use_text {
            out.push(Channel::Text);
        }
        if self.use_entity {
            out.push(Channel::Entity);
        }
        out
    }

    pub fn feature_dim(&self, d_t: usize, d_e: usize) -> usize {
        let per_channel = (d_t * usize::from(self.use_text)) + (d_e * usize::from(self.use_entity));
        self.kinds().len() * per_channel
    }

    /// Bit flags as stored in checkpoints.
    pub fn to_flags(&self) -> u32 {
        u32::from(self.ops.add)
            | (u32::from(self.ops.multiply) << 1)
            | (u32::from(self.ops.subtract) << 2)
            | (u32::from(self.use_text) << 3)
            | (u32::from(self.use_entity) << 4)
            | (u32::from(self.use_score_scaling) << 5)
    }

    pub fn from_flags(flags: u32) -> Self {
        let bit = |i: u32| flags & (1 << i) != 0;
        AblationConfig {
            ops: OpSet {
                add: bit(0),
                multiply: bit(1),
                subtract: bit(2),
            },
            use_text: bit(3),
            use_entity: bit(4),
            use_score_scaling: bit(5),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    Text,
    Entity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Op(InteractionOp),
    /// Pooled query matrix (no-interaction layout).
    QueryMean,
    /// Pooled attended document matrix (no-interaction layout).
    AttendedMean,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBlock {
    pub channel: Channel,
    pub kind: FeatureKind,
    pub values: Array1<f64>,
}

/// Pooled, optionally score-scaled interaction features of one pair.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionFeatures {
    pub blocks: Vec<FeatureBlock>,
    pub s: f64,
    pub scaled: bool,
}

impl InteractionFeatures {
    pub fn block(&self, channel: Channel, kind: FeatureKind) -> Option<&Array1<f64>> {
        self.blocks
            .iter()
            .find(|b| b.channel == channel && b.kind == kind)
            .map(|b| &b.values)
    }

    pub fn h_t_m(&self) -> Option<&Array1<f64>> {
        self.block(Channel::Text, FeatureKind::Op(InteractionOp::Multiply))
    }

    pub fn h_t_c(&self) -> Option<&Array1<f64>> {
        self.block(Channel::Text, FeatureKind::Op(InteractionOp::Add))
    }

    pub fn h_e_m(&self) -> Option<&Array1<f64>> {
        self.block(Channel::Entity, FeatureKind::Op(InteractionOp::Multiply))
    }

    pub fn h_e_c(&self) -> Option<&Array1<f64>> {
        self.block(Channel::Entity, FeatureKind::Op(InteractionOp::Add))
    }

    /// The concatenated feature vector `h`.
    pub fn concat(&self) -> Array1<f64> {
        let views: Vec<ArrayView1<'_, f64>> = self.blocks.iter().map(|b| b.values.view()).collect();
        if views.is_empty() {
            return Array1::zeros(0);
        }
        concatenate(Axis(0), &views).expect("1-d blocks always concatenate")
    }

    pub fn dim(&self) -> usize {
        self.blocks.iter().map(|b| b.values.len()).sum()
    }
}

/// Intermediates of one channel's forward pass, kept for backprop.
#[derive(Debug, Clone)]
pub(crate) struct ChannelTrace {
    pub q: Array2<f64>,
    pub d: Array2<f64>,
    pub weights: Array2<f64>,
    pub attended: Array2<f64>,
}

/// Unscaled pooled blocks for one channel, in `kinds` order. `None` trace
/// means the channel was empty on one side and every block is zero.
pub(crate) fn channel_features(
    q: ArrayView2<'_, f64>,
    d: ArrayView2<'_, f64>,
    dim: usize,
    kinds: &[FeatureKind],
) -> Result<(Vec<Array1<f64>>, Option<ChannelTrace>)> {
    if q.nrows() == 0 || d.nrows() == 0 {
        return Ok((kinds.iter().map(|_| Array1::zeros(dim)).collect(), None));
    }
    if q.ncols() != dim || d.ncols() != dim {
        return Err(QderError::Shape(format!(
            "channel dim {dim}, query has {}, document has {}",
            q.ncols(),
            d.ncols()
        )));
    }
    let att = attend(q, d)?;
    let mut blocks = Vec::with_capacity(kinds.len());
    for kind in kinds {
        let pooled = match kind {
            FeatureKind::Op(op) => mean_pool(interact(q, att.attended.view(), *op)?.view())?,
            FeatureKind::QueryMean => mean_pool(q)?,
            FeatureKind::AttendedMean => mean_pool(att.attended.view())?,
        };
        blocks.push(pooled);
    }
    let trace = ChannelTrace {
        q: q.to_owned(),
        d: d.to_owned(),
        weights: att.weights,
        attended: att.attended,
    };
    Ok((blocks, Some(trace)))
}

/// Gradients of a scalar loss with respect to the channel's query and
/// document matrices, given the loss gradient of each unscaled pooled block.
pub(crate) fn channel_backward(
    trace: &ChannelTrace,
    kinds: &[FeatureKind],
    block_grads: &[ArrayView1<'_, f64>],
) -> (Array2<f64>, Array2<f64>) {
    let r = trace.q.nrows() as f64;
    let mut dq = Array2::<f64>::zeros(trace.q.raw_dim());
    let mut d_att = Array2::<f64>::zeros(trace.attended.raw_dim());
    for (kind, g) in kinds.iter().zip(block_grads) {
        // d(mean over rows)/d(row) = 1/r for every row.
        let g_row = g.mapv(|x| x / r);
        let g_row = g_row.broadcast(trace.q.raw_dim()).expect("row broadcast");
        match kind {
            FeatureKind::Op(InteractionOp::Multiply) => {
                dq += &(&g_row * &trace.attended);
                d_att += &(&g_row * &trace.q);
            }
            FeatureKind::Op(InteractionOp::Add) => {
                dq += &g_row;
                d_att += &g_row;
            }
            FeatureKind::Op(InteractionOp::Subtract) => {
                dq += &g_row;
                d_att -= &g_row;
            }
            FeatureKind::QueryMean => dq += &g_row,
            FeatureKind::AttendedMean => d_att += &g_row,
        }
    }
    // attended = A·D
    let d_weights = d_att.dot(&trace.d.t());
    let mut dd = trace.weights.t().dot(&d_att);
    // softmax rows: dS = A ∘ (dA − rowsum(dA ∘ A))
    let mut d_logits = &d_weights * &trace.weights;
    for (mut row, a_row) in d_logits.rows_mut().into_iter().zip(trace.weights.rows()) {
        let inner = row.sum();
        row.zip_mut_with(&a_row, |x, &a| *x -= a * inner);
    }
    // logits = Q·Dᵀ
    dq += &d_logits.dot(&trace.d);
    dd += &d_logits.t().dot(&trace.q);
    (dq, dd)
}


/// Raw embedding views of the active channel.
pub(crate) fn channel_views<'a>(
    query: &'a TextRecord,
    doc: &'a TextRecord,
    channel: Channel,
) -> (ArrayView2<'a, f64>, ArrayView2<'a, f64>) {
    #[cfg(test)]
    access::record(channel);
    match channel {
        Channel::Text => (query.tokens.view(), doc.tokens.view()),
        Channel::Entity => (query.entities.view(), doc.entities.view()),
    }
}

/// Assemble blocks from per-channel pooled features, applying score scaling.
pub(crate) fn assemble_features(
    per_channel: Vec<(Channel, Vec<Array1<f64>>)>,
    kinds: &[FeatureKind],
    s: f64,
    cfg: &AblationConfig,
) -> InteractionFeatures {
    let mut blocks = Vec::new();
    for (channel, pooled) in per_channel {
        for (kind, mut values) in kinds.iter().zip(pooled) {
            if cfg.use_score_scaling {
                values.mapv_inplace(|x| s * x);
            }
            blocks.push(FeatureBlock {
                channel,
                kind: *kind,
                values,
            });
        }
    }
    InteractionFeatures {
        blocks,
        s,
        scaled: cfg.use_score_scaling,
    }
}

/// Pooled interaction features for one query/document pair.
///
/// `d_t`/`d_e` are the dataset dimensions; a channel that is empty on either
/// side yields zero blocks of that width. Deactivated channels are never read.
pub fn build_features(
    query: &TextRecord,
    doc: &TextRecord,
    s: f64,
    cfg: &AblationConfig,
    d_t: usize,
    d_e: usize,
) -> Result<InteractionFeatures> {
    cfg.validate()?;
    if !s.is_finite() {
        return Err(QderError::Numeric(format!("non-finite external score {s}")));
    }
    let kinds = cfg.kinds();
    let mut per_channel = Vec::with_capacity(2);
    for channel in cfg.channels() {
        let dim = match channel {
            Channel::Text => d_t,
            Channel::Entity => d_e,
        };
        let (q, d) = channel_views(query, doc, channel);
        let (pooled, _) = channel_features(q, d, dim, &kinds)?;
        per_channel.push((channel, pooled));
    }
    Ok(assemble_features(per_channel, &kinds, s, cfg))
}

/// Split a concatenated vector back into per-block slices, in block order.
pub(crate) fn split_blocks<'a>(
    v: ArrayView1<'a, f64>,
    widths: impl IntoIterator<Item = usize>,
) -> Vec<ArrayView1<'a, f64>> {
    let mut out = Vec::new();
    let mut offset = 0;
    for w in widths {
        out.push(v.slice_move(s![offset..offset + w]));
        offset += w;
    }
    out
}
