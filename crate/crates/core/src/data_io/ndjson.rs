use std::io::{BufRead, Write};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{
    assemble, Collection, EntitySet, LoadOptions, RecordKind, Scan, TextRecord, TokenMatrix,
};
use crate::error::{QderError, Result};

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawRecord {
    id: String,
    #[serde(deserialize_with = "rounded")]
    tok: Vec<Vec<f32>>,
    #[serde(default)]
    ent_ids: Vec<String>,
    #[serde(default, deserialize_with = "rounded")]
    ent: Vec<Vec<f32>>,
}

/// Read as f64 and round to f32, so out-of-range values become infinite and
/// are reported as non-finite instead of as a JSON syntax error.
fn rounded<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Vec<Vec<f32>>, D::Error> {
    let rows: Vec<Vec<f64>> = Vec::deserialize(d)?;
    Ok(rows
        .into_iter()
        .map(|r| r.into_iter().map(|v| v as f32).collect())
        .collect())
}

fn to_matrix(rows: &[Vec<f32>], what: &str) -> std::result::Result<Array2<f64>, String> {
    let ncols = rows.first().map_or(0, Vec::len);
    if let Some(i) = rows.iter().position(|r| r.len() != ncols) {
        return Err(format!(
            "ragged {what} matrix: row {i} has {} values, row 0 has {ncols}",
            rows[i].len()
        ));
    }
    let flat: Vec<f64> = rows.iter().flatten().map(|&v| f64::from(v)).collect();
    Array2::from_shape_vec((rows.len(), ncols), flat).map_err(|e| e.to_string())
}

/// Parse an NDJSON record file. Blank lines are skipped. Dimensions come from
/// `opts` when given, otherwise from the first record carrying data.
pub fn parse_ndjson(
    reader: impl BufRead,
    label: &str,
    kind: RecordKind,
    opts: &LoadOptions,
) -> Result<Collection> {
    let scan = scan_ndjson(reader, label, opts)?;
    assemble(scan.records, scan.d_t, scan.d_e, kind, opts, label)
}

/// Parse without validating record contents.
pub(crate) fn scan_ndjson(reader: impl BufRead, label: &str, opts: &LoadOptions) -> Result<Scan> {
    let mut parsed = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| QderError::io(label, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = serde_json::from_str(&line)
            .map_err(|e| QderError::parse(label, lineno, format!("malformed record: {e}")))?;
        let tokens =
            to_matrix(&raw.tok, "token").map_err(|m| QderError::parse(label, lineno, m))?;
        let ents = to_matrix(&raw.ent, "entity").map_err(|m| QderError::parse(label, lineno, m))?;
        parsed.push((
            lineno,
            TextRecord {
                id: raw.id,
                tokens: TokenMatrix::new(tokens),
                entities: EntitySet::new(raw.ent_ids, ents),
            },
        ));
    }

    let d_t = opts
        .expected_dt
        .or_else(|| parsed.first().map(|(_, r)| r.tokens.dim()))
        .unwrap_or(0);
    let d_e = opts
        .expected_de
        .or_else(|| {
            parsed
                .iter()
                .find(|(_, r)| !r.entities.is_empty())
                .map(|(_, r)| r.entities.dim())
        })
        .unwrap_or(0);
    Ok(Scan {
        records: parsed,
        d_t,
        d_e,
    })
}

/// Write records as NDJSON, narrowing values to f32.
pub fn write_ndjson<'a>(
    mut writer: impl Write,
    records: impl IntoIterator<Item = &'a TextRecord>,
) -> std::io::Result<()> {
    let narrow = |m: &Array2<f64>| -> Vec<Vec<f32>> {
        m.rows()
            .into_iter()
            .map(|r| r.iter().map(|&v| v as f32).collect())
            .collect()
    };
    for rec in records {
        let raw = RawRecord {
            id: rec.id.clone(),
            tok: narrow(&rec.tokens.values),
            ent_ids: rec.entities.entity_ids.clone(),
            ent: narrow(&rec.entities.values),
        };
        serde_json::to_writer(&mut writer, &raw)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()
}
