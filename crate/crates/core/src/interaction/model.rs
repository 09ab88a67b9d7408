use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::features::{
    assemble_features, channel_backward, channel_features, channel_views, split_blocks,
    ChannelTrace,
};
use super::{logistic, AblationConfig, Channel, InteractionFeatures};
use crate::data_io::TextRecord;
use crate::error::{QderError, Result};

/// How pooled features become a relevance score.
#[derive(Debug, Clone, PartialEq)]
pub enum ScoringHead {
    /// `hᵀMh` with a full d×d matrix.
    Bilinear(Array2<f64>),
    /// `wᵀh + b`, used only as an ablation.
    Linear { weights: Array1<f64>, bias: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadKind {
    Bilinear,
    Linear,
}

/// `X ↦ X·W + b` applied row-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct Affine {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Affine {
    pub fn identity(dim: usize) -> Self {
        Affine {
            weight: Array2::eye(dim),
            bias: Array1::zeros(dim),
        }
    }

    fn apply(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        x.dot(&self.weight) + &self.bias
    }

    fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

/// Optional trainable per-channel linear maps in front of attention.
///
/// Not part of the core model; off unless explicitly enabled. Starts as the
/// identity so an untrained adapter leaves scores unchanged.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelAdapter {
    pub text: Affine,
    pub entity: Affine,
}

impl ChannelAdapter {
    pub fn identity(d_t: usize, d_e: usize) -> Self {
        ChannelAdapter {
            text: Affine::identity(d_t),
            entity: Affine::identity(d_e),
        }
    }

    fn for_channel(&self, channel: Channel) -> &Affine {
        match channel {
            Channel::Text => &self.text,
            Channel::Entity => &self.entity,
        }
    }
}

/// Scoring head plus feature layout.
#[derive(Debug, Clone, PartialEq)]
pub struct BilinearModel {
    pub d_t: usize,
    pub d_e: usize,
    pub cfg: AblationConfig,
    pub head: ScoringHead,
    pub adapter: Option<ChannelAdapter>,
}

/// Score of one pair with the features that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreBreakdown {
    /// Pre-sigmoid score, used for ranking.
    pub raw: f64,
    pub prob: f64,
    pub features: InteractionFeatures,
}

/// Loss gradient with the same layout as the model's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGradient {
    pub head: ScoringHead,
    pub adapter: Option<ChannelAdapter>,
}

impl ModelGradient {
    /// The d×d gradient of a bilinear head.
    pub fn matrix(&self) -> Option<&Array2<f64>> {
        match &self.head {
            ScoringHead::Bilinear(m) => Some(m),
            ScoringHead::Linear { .. } => None,
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        push_head(&mut out, &self.head);
        if let Some(a) = &self.adapter {
            push_adapter(&mut out, a);
        }
        out
    }
}

fn push_head(out: &mut Vec<f64>, head: &ScoringHead) {
    match head {
        ScoringHead::Bilinear(m) => out.extend(m.iter()),
        ScoringHead::Linear { weights, bias } => {
            out.extend(weights.iter());
            out.push(*bias);
        }
    }
}

fn push_adapter(out: &mut Vec<f64>, a: &ChannelAdapter) {
    for affine in [&a.text, &a.entity] {
        out.extend(affine.weight.iter());
        out.extend(affine.bias.iter());
    }
}

fn uniform_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, bound: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-bound..=bound))
}

impl BilinearModel {
    /// Bilinear model with entries drawn uniformly from ±1/√d.
    pub fn init(d_t: usize, d_e: usize, cfg: AblationConfig, seed: u64) -> Result<Self> {
        Self::init_with_head(d_t, d_e, cfg, HeadKind::Bilinear, seed)
    }

    pub fn init_with_head(
        d_t: usize,
        d_e: usize,
        cfg: AblationConfig,
        head: HeadKind,
        seed: u64,
    ) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.feature_dim(d_t, d_e);
        if d == 0 {
            return Err(QderError::Config(
                "feature dimension is zero for this configuration".into(),
            ));
        }
        let bound = 1.0 / (d as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let head = match head {
            HeadKind::Bilinear => ScoringHead::Bilinear(uniform_matrix(&mut rng, d, d, bound)),
            HeadKind::Linear => ScoringHead::Linear {
                weights: uniform_matrix(&mut rng, 1, d, bound).remove_axis(Axis(0)),
                bias: 0.0,
            },
        };
        Ok(BilinearModel {
            d_t,
            d_e,
            cfg,
            head,
            adapter: None,
        })
    }

    pub fn from_matrix(
        d_t: usize,
        d_e: usize,
        cfg: AblationConfig,
        matrix: Array2<f64>,
    ) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.feature_dim(d_t, d_e);
        if matrix.dim() != (d, d) {
            return Err(QderError::Shape(format!(
                "matrix is {:?}, configuration needs {d}×{d}",
                matrix.dim()
            )));
        }
        Ok(BilinearModel {
            d_t,
            d_e,
            cfg,
            head: ScoringHead::Bilinear(matrix),
            adapter: None,
        })
    }

    pub fn with_adapter(mut self) -> Self {
        self.adapter = Some(ChannelAdapter::identity(self.d_t, self.d_e));
        self
    }

    pub fn d(&self) -> usize {
        self.cfg.feature_dim(self.d_t, self.d_e)
    }

    pub fn head_kind(&self) -> HeadKind {
        match self.head {
            ScoringHead::Bilinear(_) => HeadKind::Bilinear,
            ScoringHead::Linear { .. } => HeadKind::Linear,
        }
    }

    pub fn matrix(&self) -> Option<&Array2<f64>> {
        match &self.head {
            ScoringHead::Bilinear(m) => Some(m),
            ScoringHead::Linear { .. } => None,
        }
    }

    /// Score a precomputed feature vector.
    pub fn score_features(&self, h: ArrayView1<'_, f64>) -> Result<f64> {
        if h.len() != self.d() {
            return Err(QderError::Shape(format!(
                "feature vector has {} entries, model expects {}",
                h.len(),
                self.d()
            )));
        }
        Ok(match &self.head {
            ScoringHead::Bilinear(m) => bilinear_form(h, m.view()),
            ScoringHead::Linear { weights, bias } => weights.dot(&h) + bias,
        })
    }

    /// Features of a pair as seen by this model (after the adapter, if any).
    pub fn features(
        &self,
        query: &TextRecord,
        doc: &TextRecord,
        s: f64,
    ) -> Result<InteractionFeatures> {
        Ok(self.trace(query, doc, s)?.0)
    }

    pub fn forward(&self, query: &TextRecord, doc: &TextRecord, s: f64) -> Result<ScoreBreakdown> {
        let features = self.features(query, doc, s)?;
        let raw = self.score_features(features.concat().view())?;
        Ok(ScoreBreakdown {
            raw,
            prob: logistic(raw),
            features,
        })
    }

    /// Gradient of the logistic binary cross-entropy for one labelled pair.
    pub fn backward(
        &self,
        query: &TextRecord,
        doc: &TextRecord,
        s: f64,
        label: f64,
    ) -> Result<ModelGradient> {
        Ok(self.backward_with_score(query, doc, s, label)?.0)
    }

    /// [`Self::backward`] that also returns the raw score it was taken at.
    pub fn backward_with_score(
        &self,
        query: &TextRecord,
        doc: &TextRecord,
        s: f64,
        label: f64,
    ) -> Result<(ModelGradient, f64)> {
        let (features, traces) = self.trace(query, doc, s)?;
        let h = features.concat();
        let raw = self.score_features(h.view())?;
        let residual = logistic(raw) - label;
        let head = self.head_gradient(h.view(), residual);
        let adapter = self
            .adapter
            .as_ref()
            .map(|_| self.adapter_gradient(query, doc, s, &h, residual, &traces));
        Ok((ModelGradient { head, adapter }, raw))
    }

    /// Head gradient given features and the residual `prob − label`.
    pub fn head_gradient(&self, h: ArrayView1<'_, f64>, residual: f64) -> ScoringHead {
        match &self.head {
            ScoringHead::Bilinear(_) => {
                let col = h.insert_axis(Axis(1));
                let row = h.insert_axis(Axis(0));
                ScoringHead::Bilinear(col.dot(&row) * residual)
            }
            ScoringHead::Linear { .. } => ScoringHead::Linear {
                weights: h.mapv(|x| x * residual),
                bias: residual,
            },
        }
    }

    /// Gradient of the loss for a cached feature vector. Only valid without
    /// an adapter, where features do not depend on parameters.
    pub fn backward_from_features(
        &self,
        h: ArrayView1<'_, f64>,
        label: f64,
    ) -> Result<ModelGradient> {
        if self.adapter.is_some() {
            return Err(QderError::Config(
                "cached-feature gradients are unavailable with an adapter".into(),
            ));
        }
        let raw = self.score_features(h)?;
        Ok(ModelGradient {
            head: self.head_gradient(h, logistic(raw) - label),
            adapter: None,
        })
    }

    pub fn param_count(&self) -> usize {
        let head = match &self.head {
            ScoringHead::Bilinear(m) => m.len(),
            ScoringHead::Linear { weights, .. } => weights.len() + 1,
        };
        head + self
            .adapter
            .as_ref()
            .map_or(0, |a| a.text.param_count() + a.entity.param_count())
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        push_head(&mut out, &self.head);
        if let Some(a) = &self.adapter {
            push_adapter(&mut out, a);
        }
        out
    }

    pub fn set_flat(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(QderError::Shape(format!(
                "{} parameters supplied, model has {}",
                params.len(),
                self.param_count()
            )));
        }
        let mut it = params.iter().copied();
        match &mut self.head {
            ScoringHead::Bilinear(m) => m.iter_mut().for_each(|x| *x = it.next().unwrap()),
            ScoringHead::Linear { weights, bias } => {
                weights.iter_mut().for_each(|x| *x = it.next().unwrap());
                *bias = it.next().unwrap();
            }
        }
        if let Some(a) = &mut self.adapter {
            for affine in [&mut a.text, &mut a.entity] {
                affine
                    .weight
                    .iter_mut()
                    .for_each(|x| *x = it.next().unwrap());
                affine.bias.iter_mut().for_each(|x| *x = it.next().unwrap());
            }
        }
        Ok(())
    }

    fn channel_dim(&self, channel: Channel) -> usize {
        match channel {
            Channel::Text => self.d_t,
            Channel::Entity => self.d_e,
        }
    }

    #[allow(clippy::type_complexity)]
    fn trace(
        &self,
        query: &TextRecord,
        doc: &TextRecord,
        s: f64,
    ) -> Result<(InteractionFeatures, Vec<(Channel, Option<ChannelTrace>)>)> {
        if !s.is_finite() {
            return Err(QderError::Numeric(format!("non-finite external score {s}")));
        }
        let kinds = self.cfg.kinds();
        let mut per_channel = Vec::with_capacity(2);
        let mut traces = Vec::with_capacity(2);
        for channel in self.cfg.channels() {
            let dim = self.channel_dim(channel);
            let (q, d) = channel_views(query, doc, channel);
            let (pooled, trace) = match &self.adapter {
                None => channel_features(q, d, dim, &kinds)?,
                Some(adapter) if q.nrows() > 0 && d.nrows() > 0 => {
                    check_dim(q, d, dim)?;
                    let affine = adapter.for_channel(channel);
                    channel_features(affine.apply(q).view(), affine.apply(d).view(), dim, &kinds)?
                }
                Some(_) => channel_features(q, d, dim, &kinds)?,
            };
            per_channel.push((channel, pooled));
            traces.push((channel, trace));
        }
        Ok((assemble_features(per_channel, &kinds, s, &self.cfg), traces))
    }

    #[allow(clippy::too_many_arguments)]
    fn adapter_gradient(
        &self,
        query: &TextRecord,
        doc: &TextRecord,
        s: f64,
        h: &Array1<f64>,
        residual: f64,
        traces: &[(Channel, Option<ChannelTrace>)],
    ) -> ChannelAdapter {
        // dL/dh
        let g_h: Array1<f64> = match &self.head {
            ScoringHead::Bilinear(m) => (m.dot(h) + m.t().dot(h)) * residual,
            ScoringHead::Linear { weights, .. } => weights * residual,
        };
        let scale = if self.cfg.use_score_scaling { s } else { 1.0 };
        let kinds = self.cfg.kinds();
        let widths: Vec<usize> = self
            .cfg
            .channels()
            .into_iter()
            .flat_map(|c| std::iter::repeat_n(self.channel_dim(c), kinds.len()))
            .collect();
        let blocks = split_blocks(g_h.view(), widths);

        let mut grad = ChannelAdapter {
            text: zero_affine(self.d_t),
            entity: zero_affine(self.d_e),
        };
        for (ci, (channel, trace)) in traces.iter().enumerate() {
            let Some(trace) = trace else { continue };
            let grads: Vec<Array1<f64>> = blocks[ci * kinds.len()..(ci + 1) * kinds.len()]
                .iter()
                .map(|g| g.mapv(|x| x * scale))
                .collect();
            let views: Vec<ArrayView1<'_, f64>> = grads.iter().map(|g| g.view()).collect();
            let (dq, dd) = channel_backward(trace, &kinds, &views);
            let (q_raw, d_raw) = channel_views(query, doc, *channel);
            let target = match channel {
                Channel::Text => &mut grad.text,
                Channel::Entity => &mut grad.entity,
            };
            target.weight += &q_raw.t().dot(&dq);
            target.weight += &d_raw.t().dot(&dd);
            target.bias += &dq.sum_axis(Axis(0));
            target.bias += &dd.sum_axis(Axis(0));
        }
        grad
    }
}

fn zero_affine(dim: usize) -> Affine {
    Affine {
        weight: Array2::zeros((dim, dim)),
        bias: Array1::zeros(dim),
    }
}

fn check_dim(q: ArrayView2<'_, f64>, d: ArrayView2<'_, f64>, dim: usize) -> Result<()> {
    if q.ncols() != dim || d.ncols() != dim {
        return Err(QderError::Shape(format!(
            "channel dim {dim}, query has {}, document has {}",
            q.ncols(),
            d.ncols()
        )));
    }
    Ok(())
}

/// `hᵀMh`.
pub fn bilinear_form(h: ArrayView1<'_, f64>, m: ArrayView2<'_, f64>) -> f64 {
    h.dot(&m.dot(&h))
}
