use std::io::{self, BufRead, Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::Array2;

use super::{
    assemble, Collection, EntitySet, LoadOptions, RecordKind, Scan, TextRecord, TokenMatrix,
};
use crate::error::{QderError, Result};

pub const PACKED_MAGIC: &[u8; 4] = b"QDER";
pub const PACKED_VERSION: u32 = 1;

// Guards against absurd allocations from a corrupt length field.
const MAX_ID_BYTES: u32 = 1 << 20;

/// Read a packed binary record file.
///
/// Layout (little-endian): magic `QDER`, version u32, d_t u32, d_e u32, then
/// per record: id length u32 + UTF-8 id, l u32, l×d_t f32 tokens, n u32,
/// n entity ids (length u32 + UTF-8 each), n×d_e f32 entity values.
pub fn read_packed(
    reader: impl BufRead,
    label: &str,
    kind: RecordKind,
    opts: &LoadOptions,
) -> Result<Collection> {
    let scan = scan_packed(reader, label, opts)?;
    assemble(scan.records, scan.d_t, scan.d_e, kind, opts, label)
}

/// Parse without validating record contents.
pub(crate) fn scan_packed(
    mut reader: impl BufRead,
    label: &str,
    opts: &LoadOptions,
) -> Result<Scan> {
    let header_err = |m: String| QderError::parse(label, 0, m);
    let mut magic = [0u8; 4];
    reader
        .read_exact(&mut magic)
        .map_err(|e| header_err(format!("truncated header: {e}")))?;
    if &magic != PACKED_MAGIC {
        return Err(header_err(format!("bad magic {magic:?}")));
    }
    let version = read_u32(&mut reader).map_err(|e| header_err(e.to_string()))?;
    if version != PACKED_VERSION {
        return Err(header_err(format!("unsupported version {version}")));
    }
    let d_t = read_u32(&mut reader).map_err(|e| header_err(e.to_string()))? as usize;
    let d_e = read_u32(&mut reader).map_err(|e| header_err(e.to_string()))? as usize;
    if let Some(expected) = opts.expected_dt.filter(|&x| x != d_t) {
        return Err(header_err(format!("header d_t {d_t}, expected {expected}")));
    }
    if let Some(expected) = opts.expected_de.filter(|&x| x != d_e) {
        return Err(header_err(format!("header d_e {d_e}, expected {expected}")));
    }

    let mut parsed = Vec::new();
    let mut ordinal = 0;
    while !reader
        .fill_buf()
        .map_err(|e| QderError::io(label, e))?
        .is_empty()
    {
        ordinal += 1;
        let rec = read_record(&mut reader, d_t, d_e)
            .map_err(|e| QderError::parse(label, ordinal, format!("record {ordinal}: {e}")))?;
        parsed.push((ordinal, rec));
    }
    Ok(Scan {
        records: parsed,
        d_t,
        d_e,
    })
}

fn read_u32(r: &mut impl Read) -> io::Result<u32> {
    r.read_u32::<LittleEndian>()
}

fn read_string(r: &mut impl Read) -> io::Result<String> {
    let len = read_u32(r)?;
    if len > MAX_ID_BYTES {
        return Err(io::Error::new(
            io::ErrorKind::InvalidData,
            format!("string length {len} too large"),
        ));
    }
    let mut buf = vec![0u8; len as usize];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
}

fn read_matrix(r: &mut impl Read, rows: usize, cols: usize) -> io::Result<Array2<f64>> {
    let mut buf = vec![0f32; rows * cols];
    r.read_f32_into::<LittleEndian>(&mut buf)?;
    let wide = buf.into_iter().map(f64::from).collect();
    Array2::from_shape_vec((rows, cols), wide)
        .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
}

fn read_record(r: &mut impl Read, d_t: usize, d_e: usize) -> io::Result<TextRecord> {
    let id = read_string(r)?;
    let l = read_u32(r)? as usize;
    let tokens = read_matrix(r, l, d_t)?;
    let n = read_u32(r)? as usize;
    let entity_ids = (0..n)
        .map(|_| read_string(r))
        .collect::<io::Result<Vec<_>>>()?;
    let ents = read_matrix(r, n, d_e)?;
    Ok(TextRecord {
        id,
        tokens: TokenMatrix::new(tokens),
        entities: EntitySet::new(entity_ids, ents),
    })
}

/// Write records in the packed layout. Values are narrowed to f32.
pub fn write_packed<'a>(
    mut w: impl Write,
    d_t: usize,
    d_e: usize,
    records: impl IntoIterator<Item = &'a TextRecord>,
) -> io::Result<()> {
    let invalid = |m: String| io::Error::new(io::ErrorKind::InvalidInput, m);
    w.write_all(PACKED_MAGIC)?;
    w.write_u32::<LittleEndian>(PACKED_VERSION)?;
    w.write_u32::<LittleEndian>(d_t as u32)?;
    w.write_u32::<LittleEndian>(d_e as u32)?;
    for rec in records {
        if rec.tokens.dim() != d_t {
            return Err(invalid(format!(
                "{}: token dim {} != {d_t}",
                rec.id,
                rec.tokens.dim()
            )));
        }
        if !rec.entities.is_empty() && rec.entities.dim() != d_e {
            return Err(invalid(format!(
                "{}: entity dim {} != {d_e}",
                rec.id,
                rec.entities.dim()
            )));
        }
        if rec.entities.entity_ids.len() != rec.entities.rows() {
            return Err(invalid(format!("{}: entity id count mismatch", rec.id)));
        }
        write_string(&mut w, &rec.id)?;
        w.write_u32::<LittleEndian>(rec.tokens.rows() as u32)?;
        for &v in rec.tokens.values.iter() {
            w.write_f32::<LittleEndian>(v as f32)?;
        }
        w.write_u32::<LittleEndian>(rec.entities.rows() as u32)?;
        for id in &rec.entities.entity_ids {
            write_string(&mut w, id)?;
        }
        for &v in rec.entities.values.iter() {
            w.write_f32::<LittleEndian>(v as f32)?;
        }
    }
    w.flush()
}

fn write_string(w: &mut impl Write, s: &str) -> io::Result<()> {
    w.write_u32::<LittleEndian>(s.len() as u32)?;
    w.write_all(s.as_bytes())
}
