use std::io::Write;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::kendall_tau;
use crate::error::{QderError, Result};
use crate::interaction::{attend, bilinear_form, interact, mean_pool, InteractionOp};

pub const DEFAULT_SIGMAS: [f64; 5] = [0.001, 0.005, 0.01, 0.05, 0.1];

/// Shape of the random query and candidate pool the study perturbs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseInstance {
    pub query_tokens: usize,
    pub doc_tokens: usize,
    pub dim: usize,
    pub candidates: usize,
}

impl Default for NoiseInstance {
    fn default() -> Self {
        NoiseInstance {
            query_tokens: 4,
            doc_tokens: 16,
            dim: 16,
            candidates: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseReport {
    pub op: InteractionOp,
    pub sigma: f64,
    pub angular_deviation_deg: f64,
    pub amplification_ratio: f64,
    pub kendall_tau: f64,
    pub trials: usize,
    /// Query/document pairs left out because a pooled vector had zero norm.
    pub skipped: usize,
}

pub fn write_noise_csv(mut w: impl Write, reports: &[NoiseReport]) -> std::io::Result<()> {
    writeln!(
        w,
        "op,sigma,angular_deviation_deg,amplification_ratio,kendall_tau,trials,skipped"
    )?;
    for r in reports {
        writeln!(
            w,
            "{},{:?},{:?},{:?},{:?},{},{}",
            r.op,
            r.sigma,
            r.angular_deviation_deg,
            r.amplification_ratio,
            r.kendall_tau,
            r.trials,
            r.skipped
        )?;
    }
    w.flush()
}

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || {
        scale * rng.sample::<f64, _>(StandardNormal)
    })
}

fn norm(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Angle in degrees between two non-zero vectors. Computed from the
/// difference and sum of the unit vectors, which is exact at zero.
pub fn angle_deg(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    let (na, nb) = (norm(a.iter().copied()), norm(b.iter().copied()));
    let ua = a / na;
    let ub = b / nb;
    let diff = norm(&ua - &ub);
    let sum = norm(&ua + &ub);
    (2.0 * diff.atan2(sum)).to_degrees()
}

fn pooled(q: &Array2<f64>, d: &Array2<f64>, op: InteractionOp) -> Result<Array1<f64>> {
    let att = attend(q.view(), d.view())?;
    mean_pool(interact(q.view(), att.attended.view(), op)?.view())
}

struct Instance {
    query: Array2<f64>,
    docs: Vec<Array2<f64>>,
    matrix: Array2<f64>,
}

impl Instance {
    fn new(spec: &NoiseInstance, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let query = gaussian(&mut rng, spec.query_tokens, spec.dim, 1.0);
        let docs = (0..spec.candidates)
            .map(|_| gaussian(&mut rng, spec.doc_tokens, spec.dim, 1.0))
            .collect();
        let bound = 1.0 / (spec.dim as f64).sqrt();
        let matrix =
            Array2::from_shape_simple_fn((spec.dim, spec.dim), || rng.random_range(-bound..=bound));
        Instance {
            query,
            docs,
            matrix,
        }
    }
}

struct TrialStats {
    angle: f64,
    amplification: f64,
    tau: f64,
    skipped: usize,
}

/// Perturb query and document embeddings with Gaussian noise of each σ and
/// measure how the pooled feature of `op` moves. Rankings are scored by a
/// fixed seeded bilinear form over that feature. Trial `t` draws its noise
/// from stream `t` at every σ, so levels differ only in scale and results do
/// not depend on thread count.
pub fn noise_sensitivity(
    op: InteractionOp,
    sigmas: &[f64],
    trials: usize,
    seed: u64,
    spec: &NoiseInstance,
) -> Result<Vec<NoiseReport>> {
    if sigmas.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
        return Err(QderError::Config(
            "noise levels must be finite and non-negative".into(),
        ));
    }
    if trials == 0 {
        return Err(QderError::Config("need at least one trial".into()));
    }
    if spec.query_tokens == 0 || spec.doc_tokens == 0 || spec.dim == 0 || spec.candidates < 2 {
        return Err(QderError::Config(
            "noise instance needs tokens, a dimension and two candidates".into(),
        ));
    }
    let inst = Instance::new(spec, seed);
    let clean: Vec<Array1<f64>> = inst
        .docs
        .iter()
        .map(|d| pooled(&inst.query, d, op))
        .collect::<Result<_>>()?;
    let clean_scores: Vec<f64> = clean
        .iter()
        .map(|h| bilinear_form(h.view(), inst.matrix.view()))
        .collect();

    let mut reports = Vec::with_capacity(sigmas.len());
    for &sigma in sigmas {
        let stats = (0..trials)
            .into_par_iter()
            .map(|t| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(t as u64 + 1);
                let eq = gaussian(&mut rng, spec.query_tokens, spec.dim, sigma);
                let noisy_q = &inst.query + &eq;
                let eq_sq: f64 = eq.iter().map(|x| x * x).sum();
                let (mut angle, mut amp, mut kept, mut skipped) = (0.0, 0.0, 0usize, 0usize);
                let mut scores = Vec::with_capacity(inst.docs.len());
                for (d, h) in inst.docs.iter().zip(&clean) {
                    let ed = gaussian(&mut rng, spec.doc_tokens, spec.dim, sigma);
                    let g = pooled(&noisy_q, &(d + &ed), op)?;
                    scores.push(bilinear_form(g.view(), inst.matrix.view()));
                    let (nh, ng) = (norm(h.iter().copied()), norm(g.iter().copied()));
                    if nh == 0.0 || ng == 0.0 {
                        skipped += 1;
                        continue;
                    }
                    let injected = (eq_sq + ed.iter().map(|x| x * x).sum::<f64>()).sqrt();
                    angle += angle_deg(h, &g);
                    if injected > 0.0 {
                        amp += norm(&g - h) / injected;
                    }
                    kept += 1;
                }
                let denom = kept.max(1) as f64;
                Ok(TrialStats {
                    angle: angle / denom,
                    amplification: amp / denom,
                    tau: kendall_tau(&clean_scores, &scores)?,
                    skipped,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let n = stats.len() as f64;
        reports.push(NoiseReport {
            op,
            sigma,
            angular_deviation_deg: stats.iter().map(|s| s.angle).sum::<f64>() / n,
            amplification_ratio: stats.iter().map(|s| s.amplification).sum::<f64>() / n,
            kendall_tau: stats.iter().map(|s| s.tau).sum::<f64>() / n,
            trials,
            skipped: stats.iter().map(|s| s.skipped).sum(),
        });
    }
    Ok(reports)
}
