//! `MRCK` checkpoint files: magic, version, model config as JSON, then
//! named tensors with their shape and little-endian `f64` values.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::Array2;

use crate::network::{ModelConfig, ModelParams};
use crate::ModelError;

pub const MAGIC: &[u8; 4] = b"MRCK";
pub const VERSION: u32 = 1;

fn write_str<W: Write>(out: &mut W, s: &str) -> std::io::Result<()> {
    out.write_u32::<LittleEndian>(s.len() as u32)?;
    out.write_all(s.as_bytes())
}

fn read_str<R: Read>(input: &mut R, limit: usize) -> Result<String, ModelError> {
    let len = input.read_u32::<LittleEndian>()? as usize;
    if len > limit {
        return Err(ModelError::Format(format!("string of {len} bytes exceeds {limit}")));
    }
    let mut buf = vec![0; len];
    input.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| ModelError::Format(e.to_string()))
}

pub fn write_checkpoint<W: Write>(out: &mut W, params: &ModelParams) -> Result<(), ModelError> {
    params.check()?;
    out.write_all(MAGIC)?;
    out.write_u32::<LittleEndian>(VERSION)?;
    let config = serde_json::to_string(&params.config).map_err(|e| ModelError::Format(e.to_string()))?;
    write_str(out, &config)?;
    out.write_u32::<LittleEndian>(params.tensors.len() as u32)?;
    for (name, t) in &params.tensors {
        write_str(out, name)?;
        out.write_u32::<LittleEndian>(2)?;
        out.write_u64::<LittleEndian>(t.nrows() as u64)?;
        out.write_u64::<LittleEndian>(t.ncols() as u64)?;
        for v in t.iter() {
            out.write_f64::<LittleEndian>(*v)?;
        }
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(input: &mut R) -> Result<ModelParams, ModelError> {
    let mut magic = [0; 4];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(ModelError::Format("not a checkpoint file (bad magic)".into()));
    }
    let version = input.read_u32::<LittleEndian>()?;
    if version != VERSION {
        return Err(ModelError::Format(format!("unsupported checkpoint version {version}")));
    }
    let config: ModelConfig =
        serde_json::from_str(&read_str(input, 1 << 20)?).map_err(|e| ModelError::Format(e.to_string()))?;
    let count = input.read_u32::<LittleEndian>()? as usize;
    let mut tensors = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let name = read_str(input, 4096)?;
        let ndim = input.read_u32::<LittleEndian>()?;
        if ndim != 2 {
            return Err(ModelError::Format(format!("tensor {name} has {ndim} dimensions")));
        }
        let rows = input.read_u64::<LittleEndian>()? as usize;
        let cols = input.read_u64::<LittleEndian>()? as usize;
        if rows.saturating_mul(cols) > 1 << 28 {
            return Err(ModelError::Format(format!("tensor {name} is implausibly large")));
        }
        let mut values = vec![0.0; rows * cols];
        input.read_f64_into::<LittleEndian>(&mut values)?;
        let t = Array2::from_shape_vec((rows, cols), values).map_err(|e| ModelError::Format(e.to_string()))?;
        tensors.push((name, t));
    }
    let params = ModelParams { config, tensors };
    params.check()?;
    Ok(params)
}

pub fn save_checkpoint(path: &Path, params: &ModelParams) -> Result<(), ModelError> {
    let mut out = BufWriter::new(File::create(path)?);
    write_checkpoint(&mut out, params)?;
    out.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams, ModelError> {
    read_checkpoint(&mut BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::forward;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_reproduces_logits_bitwise() {
        let params = ModelParams::init(&ModelConfig::default(), 11).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &params).unwrap();
        assert_eq!(&buf[..4], b"MRCK");
        let loaded = read_checkpoint(&mut buf.as_slice()).unwrap();
        assert_eq!(loaded, params);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Array2::from_shape_fn((48, 24), |_| rng.gen_range(-1.0..1.0));
        let a = forward(&x, &params).unwrap();
        let b = forward(&x, &loaded).unwrap();
        assert!(a.iter().zip(b.iter()).all(|(p, q)| p.to_bits() == q.to_bits()));
    }

    #[test]
    fn corrupt_files_rejected() {
        let params = ModelParams::init(&ModelConfig::default(), 0).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &params).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_checkpoint(&mut bad.as_slice()), Err(ModelError::Format(_))));
        let truncated = &buf[..buf.len() - 5];
        assert!(read_checkpoint(&mut &truncated[..]).is_err());
        let mut nan = params.clone();
        nan.tensors[0].1[[0, 0]] = f64::NAN;
        assert!(write_checkpoint(&mut Vec::new(), &nan).is_err());
    }
}
