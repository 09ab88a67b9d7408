use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data_io::{Dataset, Rankings};
use crate::error::Result;
use crate::evaluation::{evaluate, MetricReport, DEFAULT_CUTOFF};
use crate::interaction::{AblationConfig, HeadKind, InteractionOp, OpSet};
use crate::trainer::{cross_validate, TrainConfig};

use InteractionOp::{Add, Multiply, Subtract};

/// One row of the ablation matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationVariant {
    pub name: String,
    pub ablation: AblationConfig,
    pub head: HeadKind,
}

/// Interaction-set variants followed by architecture variants. Channel and
/// scaling flags of the interaction variants come from `base`.
pub fn ablation_variants(base: &AblationConfig) -> Vec<AblationVariant> {
    let with_ops = |name: &str, ops: &[InteractionOp]| AblationVariant {
        name: name.into(),
        ablation: AblationConfig {
            ops: OpSet::of(ops),
            ..*base
        },
        head: HeadKind::Bilinear,
    };
    let default = AblationConfig {
        ops: OpSet::of(&[Multiply, Add]),
        ..*base
    };
    vec![
        with_ops("no-add", &[Multiply, Subtract]),
        with_ops("no-multiply", &[Add, Subtract]),
        with_ops("only-add", &[Add]),
        with_ops("only-subtract", &[Subtract]),
        with_ops("only-multiply", &[Multiply]),
        with_ops("no-interactions", &[]),
        with_ops("all-interactions", &[Multiply, Add, Subtract]),
        with_ops("no-subtract", &[Multiply, Add]),
        AblationVariant {
            name: "linear-head".into(),
            ablation: default,
            head: HeadKind::Linear,
        },
        AblationVariant {
            name: "no-entities".into(),
            ablation: AblationConfig {
                use_text: true,
                use_entity: false,
                ..default
            },
            head: HeadKind::Bilinear,
        },
        AblationVariant {
            name: "no-score-scaling".into(),
            ablation: AblationConfig {
                use_score_scaling: false,
                ..default
            },
            head: HeadKind::Bilinear,
        },
    ]
}

#[derive(Debug, Clone)]
pub struct AblationOutcome {
    pub variant: AblationVariant,
    pub feature_dim: usize,
    pub report: MetricReport,
    pub rankings: Rankings,
}

/// Cross-validate one variant with every other training setting from `base`.
pub fn run_variant(
    dataset: &Dataset,
    base: &TrainConfig,
    variant: &AblationVariant,
) -> Result<AblationOutcome> {
    let cfg = TrainConfig {
        ablation: variant.ablation,
        head: variant.head,
        ..base.clone()
    };
    let cv = cross_validate(dataset, &cfg)?;
    Ok(AblationOutcome {
        variant: variant.clone(),
        feature_dim: variant.ablation.feature_dim(dataset.d_t(), dataset.d_e()),
        report: evaluate(&cv.rankings, &dataset.qrels, DEFAULT_CUTOFF),
        rankings: cv.rankings,
    })
}

/// Every variant of [`ablation_variants`], keyed by name.
pub fn ablation_suite(
    dataset: &Dataset,
    base: &TrainConfig,
) -> Result<BTreeMap<String, AblationOutcome>> {
    ablation_variants(&base.ablation)
        .iter()
        .map(|v| {
            log::info!("ablation variant {}", v.name);
            Ok((v.name.clone(), run_variant(dataset, base, v)?))
        })
        .collect()
}

pub fn write_ablation_csv<'a>(
    mut w: impl Write,
    outcomes: impl IntoIterator<Item = &'a AblationOutcome>,
) -> std::io::Result<()> {
    writeln!(
        w,
        "variant,ops,text,entity,score_scaling,head,d,map,ndcg,p,rr"
    )?;
    for o in outcomes {
        let a = &o.variant.ablation;
        let ops: Vec<&str> = a.ops.active().iter().map(|op| op.name()).collect();
        let m = &o.report.macro_avg;
        writeln!(
            w,
            "{},{},{},{},{},{},{},{:?},{:?},{:?},{:?}",
            o.variant.name,
            if ops.is_empty() {
                "none".into()
            } else {
                ops.join("+")
            },
            a.use_text,
            a.use_entity,
            a.use_score_scaling,
            match o.variant.head {
                HeadKind::Bilinear => "bilinear",
                HeadKind::Linear => "linear",
            },
            o.feature_dim,
            m.ap,
            m.ndcg_at_k,
            m.p_at_k,
            m.rr
        )?;
    }
    w.flush()
}
