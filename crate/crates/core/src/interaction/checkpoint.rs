use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{Array1, Array2};

use super::model::{Affine, BilinearModel, ChannelAdapter, ScoringHead};
use super::AblationConfig;
use crate::error::{QderError, Result};

const MAGIC: &[u8; 5] = b"QDERM";
const VERSION: u32 = 1;

// Layout flags above the six ablation bits.
const FLAG_LINEAR_HEAD: u32 = 1 << 6;
const FLAG_ADAPTER: u32 = 1 << 7;

/// Serialize a model.
///
/// Header: magic `QDERM`, version u32, d u32, d_t u32, d_e u32, flags u32
/// (ablation bits, plus bit 6 for a linear head and bit 7 for an adapter).
/// A bilinear head follows as d×d f64 row-major; a linear head as d weights
/// and a bias. Adapter parameters, when present, come last: text W, text b,
/// entity W, entity b. Everything little-endian.
pub fn write_checkpoint(mut w: impl Write, model: &BilinearModel) -> io::Result<()> {
    let d = model.d();
    let mut flags = model.cfg.to_flags();
    if matches!(model.head, ScoringHead::Linear { .. }) {
        flags |= FLAG_LINEAR_HEAD;
    }
    if model.adapter.is_some() {
        flags |= FLAG_ADAPTER;
    }
    w.write_all(MAGIC)?;
    for v in [VERSION, d as u32, model.d_t as u32, model.d_e as u32, flags] {
        w.write_u32::<LittleEndian>(v)?;
    }
    for v in model.to_flat() {
        w.write_f64::<LittleEndian>(v)?;
    }
    w.flush()
}

pub fn read_checkpoint(mut r: impl Read) -> Result<BilinearModel> {
    let bad = |m: String| QderError::Invalid(format!("checkpoint: {m}"));
    let mut magic = [0u8; 5];
    r.read_exact(&mut magic).map_err(|e| bad(e.to_string()))?;
    if &magic != MAGIC {
        return Err(bad(format!("bad magic {magic:?}")));
    }
    let mut header = [0u32; 5];
    r.read_u32_into::<LittleEndian>(&mut header)
        .map_err(|e| bad(e.to_string()))?;
    let [version, d, d_t, d_e, flags] = header;
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let (d, d_t, d_e) = (d as usize, d_t as usize, d_e as usize);
    let cfg = AblationConfig::from_flags(flags & 0x3f);
    cfg.validate()?;
    if cfg.feature_dim(d_t, d_e) != d {
        return Err(bad(format!(
            "header d = {d} disagrees with layout (expects {})",
            cfg.feature_dim(d_t, d_e)
        )));
    }
    let head = if flags & FLAG_LINEAR_HEAD != 0 {
        ScoringHead::Linear {
            weights: Array1::zeros(d),
            bias: 0.0,
        }
    } else {
        ScoringHead::Bilinear(Array2::zeros((d, d)))
    };
    let adapter = (flags & FLAG_ADAPTER != 0).then(|| ChannelAdapter {
        text: Affine::identity(d_t),
        entity: Affine::identity(d_e),
    });
    let mut model = BilinearModel {
        d_t,
        d_e,
        cfg,
        head,
        adapter,
    };
    let mut params = vec![0f64; model.param_count()];
    r.read_f64_into::<LittleEndian>(&mut params)
        .map_err(|e| bad(format!("truncated parameters: {e}")))?;
    if let Some(i) = params.iter().position(|v| !v.is_finite()) {
        return Err(bad(format!("non-finite parameter at index {i}")));
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing).map_err(|e| bad(e.to_string()))? != 0 {
        return Err(bad("trailing bytes after parameters".into()));
    }
    model.set_flat(&params)?;
    Ok(model)
}

pub fn save_checkpoint(path: &Path, model: &BilinearModel) -> Result<()> {
    let file = File::create(path).map_err(|e| QderError::io(path, e))?;
    write_checkpoint(BufWriter::new(file), model).map_err(|e| QderError::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<BilinearModel> {
    let file = File::open(path).map_err(|e| QderError::io(path, e))?;
    read_checkpoint(BufReader::new(file))
}
