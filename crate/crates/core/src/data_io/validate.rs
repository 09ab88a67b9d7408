use std::fmt;

use super::TextRecord;

/// One broken invariant of a query or document record.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    EmptyId,
    NoTokens,
    TokenDim {
        expected: usize,
        found: usize,
    },
    EntityDim {
        expected: usize,
        found: usize,
    },
    EntityCount {
        ids: usize,
        rows: usize,
    },
    NonFinite {
        channel: &'static str,
        row: usize,
        col: usize,
    },
    TooLong {
        max: usize,
        found: usize,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyId => write!(f, "empty id"),
            Violation::NoTokens => write!(f, "record has no tokens"),
            Violation::TokenDim { expected, found } => {
                write!(f, "token dimension {found}, expected {expected}")
            }
            Violation::EntityDim { expected, found } => {
                write!(f, "entity dimension {found}, expected {expected}")
            }
            Violation::EntityCount { ids, rows } => {
                write!(f, "{ids} entity ids but {rows} entity rows")
            }
            Violation::NonFinite { channel, row, col } => {
                write!(f, "non-finite {channel} value at ({row}, {col})")
            }
            Violation::TooLong { max, found } => {
                write!(f, "{found} tokens exceeds the limit of {max}")
            }
        }
    }
}

/// Check a record against the data-model invariants. `max_seq_len` is only
/// passed for documents.
pub fn validate_record(
    record: &TextRecord,
    expected_dt: usize,
    expected_de: usize,
    max_seq_len: Option<usize>,
) -> Vec<Violation> {
    let mut out = Vec::new();
    if record.id.is_empty() {
        out.push(Violation::EmptyId);
    }
    let tokens = &record.tokens;
    if tokens.rows() == 0 {
        out.push(Violation::NoTokens);
    }
    if tokens.dim() != expected_dt {
        out.push(Violation::TokenDim {
            expected: expected_dt,
            found: tokens.dim(),
        });
    }
    if let Some(max) = max_seq_len {
        if tokens.rows() > max {
            out.push(Violation::TooLong {
                max,
                found: tokens.rows(),
            });
        }
    }
    if let Some(v) = first_non_finite(&tokens.values, "token") {
        out.push(v);
    }

    let ents = &record.entities;
    if ents.entity_ids.len() != ents.rows() {
        out.push(Violation::EntityCount {
            ids: ents.entity_ids.len(),
            rows: ents.rows(),
        });
    }
    if ents.rows() > 0 && ents.dim() != expected_de {
        out.push(Violation::EntityDim {
            expected: expected_de,
            found: ents.dim(),
        });
    }
    if let Some(v) = first_non_finite(&ents.values, "entity") {
        out.push(v);
    }
    out
}

fn first_non_finite(m: &ndarray::Array2<f64>, channel: &'static str) -> Option<Violation> {
    m.indexed_iter()
        .find(|(_, v)| !v.is_finite())
        .map(|((row, col), _)| Violation::NonFinite { channel, row, col })
}
