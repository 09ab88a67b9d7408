use crate::error::{QderError, Result};
use crate::interaction::{BilinearModel, ModelGradient};

use super::TrainConfig;

/// Mean binary cross-entropy of probabilities against {0,1} labels.
pub fn bce_loss(probs: &[f64], labels: &[f64]) -> Result<f64> {
    check_lengths(probs.len(), labels.len())?;
    let total: f64 = probs
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            // Each side only contributes when its label weight is nonzero,
            // so an exact prediction costs exactly zero.
            let pos = if y > 0.0 { -y * p.ln() } else { 0.0 };
            let neg = if y < 1.0 {
                -(1.0 - y) * (-p).ln_1p()
            } else {
                0.0
            };
            pos + neg
        })
        .sum();
    Ok(total / probs.len() as f64)
}

/// Mean binary cross-entropy of logits: `max(x,0) − x·y + ln(1 + e^{−|x|})`.
pub fn bce_with_logits(logits: &[f64], labels: &[f64]) -> Result<f64> {
    check_lengths(logits.len(), labels.len())?;
    let total: f64 = logits
        .iter()
        .zip(labels)
        .map(|(&x, &y)| x.max(0.0) - x * y + (-x.abs()).exp().ln_1p())
        .sum();
    Ok(total / logits.len() as f64)
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(QderError::Shape(format!("{a} predictions vs {b} labels")));
    }
    if a == 0 {
        return Err(QderError::Empty("loss over zero examples".into()));
    }
    Ok(())
}

/// Learning rate after linear warmup: `lr · min(1, step / warmup)`.
pub fn effective_rate(cfg: &TrainConfig, step_index: usize) -> f64 {
    if cfg.warmup_steps == 0 {
        return cfg.learning_rate;
    }
    cfg.learning_rate * (step_index as f64 / cfg.warmup_steps as f64).min(1.0)
}

/// First and second moment estimates, one entry per model parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(n_params: usize) -> Self {
        AdamState {
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }
}

/// One bias-corrected Adam update. `step_index` starts at 1.
pub fn adam_step(
    model: &mut BilinearModel,
    gradient: &ModelGradient,
    step_index: usize,
    cfg: &TrainConfig,
    state: &mut AdamState,
) -> Result<()> {
    let mut params = model.to_flat();
    adam_update(&mut params, &gradient.to_flat(), step_index, cfg, state)?;
    model.set_flat(&params)
}

/// Adam on flat parameter and gradient vectors. Parameters are untouched on
/// error.
pub(crate) fn adam_update(
    params: &mut [f64],
    grad: &[f64],
    step_index: usize,
    cfg: &TrainConfig,
    state: &mut AdamState,
) -> Result<()> {
    if step_index == 0 {
        return Err(QderError::Config("Adam step index starts at 1".into()));
    }
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(QderError::Numeric(format!(
            "non-finite gradient at parameter {i} (step {step_index})"
        )));
    }
    if grad.len() != params.len() || state.m.len() != params.len() {
        return Err(QderError::Shape(format!(
            "gradient {} / state {} / model {} parameter counts differ",
            grad.len(),
            state.m.len(),
            params.len()
        )));
    }
    let rate = effective_rate(cfg, step_index);
    let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
    let t = step_index as i32;
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for i in 0..params.len() {
        let g = grad[i];
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g;
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= rate * m_hat / (v_hat.sqrt() + cfg.adam_eps);
    }
    Ok(())
}
