//! Binary checkpoint format: a small header (format version, config, token
//! set, tensor directory) followed by a little-endian f32 payload.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::ctc::TokenSet;
use crate::error::{Error, Result};
use crate::math::Matrix;

use super::{LstmDirection, LstmLayer, Linear, Model, ModelConfig};

const MAGIC: &[u8; 4] = b"LARK";
const FORMAT_VERSION: u32 = 1;

fn write_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|_| Error::CorruptCheckpoint("truncated file".into()))?;
    Ok(u32::from_le_bytes(b))
}

fn write_blob<W: Write>(w: &mut W, blob: &[u8]) -> Result<()> {
    write_u32(w, blob.len() as u32)?;
    w.write_all(blob)?;
    Ok(())
}

fn read_blob<R: Read>(r: &mut R) -> Result<Vec<u8>> {
    let len = read_u32(r)? as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)
        .map_err(|_| Error::CorruptCheckpoint("truncated blob".into()))?;
    Ok(buf)
}

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    write_u32(&mut w, FORMAT_VERSION)?;
    write_blob(&mut w, &serde_json::to_vec(&model.config)?)?;
    write_blob(&mut w, &serde_json::to_vec(&model.token_set)?)?;

    let names = model.tensor_names();
    write_u32(&mut w, names.len() as u32)?;
    let mut offset: u64 = 0;
    for name in &names {
        let t = model.tensor(name).unwrap();
        write_blob(&mut w, name.as_bytes())?;
        write_u32(&mut w, t.rows() as u32)?;
        write_u32(&mut w, t.cols() as u32)?;
        w.write_all(&offset.to_le_bytes())?;
        offset += (t.rows() * t.cols()) as u64;
    }
    for name in &names {
        let t = model.tensor(name).unwrap();
        for v in t.data() {
            w.write_all(&(*v as f32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

struct DirEntry {
    name: String,
    rows: usize,
    cols: usize,
    offset: u64,
}

fn read_header<R: Read>(r: &mut R) -> Result<(ModelConfig, TokenSet, Vec<DirEntry>)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::CorruptCheckpoint("truncated header".into()))?;
    if &magic != MAGIC {
        return Err(Error::CorruptCheckpoint("bad magic".into()));
    }
    let version = read_u32(r)?;
    if version != FORMAT_VERSION {
        return Err(Error::UnknownFormatVersion(version));
    }
    let config: ModelConfig = serde_json::from_slice(&read_blob(r)?)?;
    let token_set: TokenSet = serde_json::from_slice(&read_blob(r)?)?;
    let count = read_u32(r)? as usize;
    let mut dir = Vec::with_capacity(count);
    for _ in 0..count {
        let name = String::from_utf8(read_blob(r)?)
            .map_err(|_| Error::CorruptCheckpoint("non-utf8 tensor name".into()))?;
        let rows = read_u32(r)? as usize;
        let cols = read_u32(r)? as usize;
        let mut off = [0u8; 8];
        r.read_exact(&mut off)
            .map_err(|_| Error::CorruptCheckpoint("truncated directory".into()))?;
        dir.push(DirEntry {
            name,
            rows,
            cols,
            offset: u64::from_le_bytes(off),
        });
    }
    Ok((config, token_set, dir))
}

/// Expected tensor shapes for a config, in checkpoint order.
fn expected_shapes(config: &ModelConfig, has_lin: bool) -> Vec<(String, usize, usize)> {
    let mut out = Vec::new();
    if has_lin {
        out.push(("lin.weight".into(), config.input_dim, config.input_dim));
        out.push(("lin.bias".into(), 1, config.input_dim));
    }
    let h = config.hidden_units;
    let mut in_dim = config.input_dim;
    for i in 0..config.num_layers {
        let mut dirs = vec!["fwd"];
        if config.bidirectional {
            dirs.push("bwd");
        }
        for d in dirs {
            out.push((format!("lstm{i}.{d}.wx"), 4 * h, in_dim));
            out.push((format!("lstm{i}.{d}.wh"), 4 * h, h));
            out.push((format!("lstm{i}.{d}.b"), 1, 4 * h));
        }
        in_dim = config.layer_output_dim();
    }
    out.push(("head.weight".into(), config.output_dim, in_dim));
    out.push(("head.bias".into(), 1, config.output_dim));
    out
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    let mut r = BufReader::new(File::open(path)?);
    let (config, token_set, dir) = read_header(&mut r)?;
    let has_lin = dir.iter().any(|e| e.name == "lin.weight");

    // Validate the directory against the stored config before reading the
    // payload, so shape errors name the offending tensor.
    let expected = expected_shapes(&config, has_lin);
    if expected.len() != dir.len() {
        return Err(Error::CorruptCheckpoint(format!(
            "tensor directory has {} entries, config implies {}",
            dir.len(),
            expected.len()
        )));
    }
    for (e, (name, rows, cols)) in dir.iter().zip(expected.iter()) {
        if &e.name != name {
            return Err(Error::CorruptCheckpoint(format!(
                "unexpected tensor {} (wanted {name})",
                e.name
            )));
        }
        if e.rows != *rows || e.cols != *cols {
            return Err(Error::ShapeMismatch {
                context: format!("checkpoint tensor {name}"),
                expected: format!("{rows}x{cols}"),
                got: format!("{}x{}", e.rows, e.cols),
            });
        }
    }

    let mut tensors = Vec::with_capacity(dir.len());
    let mut expected_offset = 0u64;
    for e in &dir {
        if e.offset != expected_offset {
            return Err(Error::CorruptCheckpoint(format!(
                "tensor {} has offset {}, expected {expected_offset}",
                e.name, e.offset
            )));
        }
        expected_offset += (e.rows * e.cols) as u64;
        let mut data = Vec::with_capacity(e.rows * e.cols);
        let mut buf = [0u8; 4];
        for _ in 0..e.rows * e.cols {
            r.read_exact(&mut buf)
                .map_err(|_| Error::CorruptCheckpoint(format!("truncated payload at {}", e.name)))?;
            data.push(f32::from_le_bytes(buf) as f64);
        }
        tensors.push(Matrix::from_vec(e.rows, e.cols, data)?);
    }

    let mut iter = tensors.into_iter();
    let lin = if has_lin {
        let weight = iter.next().unwrap();
        let bias = iter.next().unwrap();
        Some(Linear { weight, bias })
    } else {
        None
    };
    let mut layers = Vec::with_capacity(config.num_layers);
    for _ in 0..config.num_layers {
        let fwd = LstmDirection {
            wx: iter.next().unwrap(),
            wh: iter.next().unwrap(),
            b: iter.next().unwrap(),
        };
        let bwd = if config.bidirectional {
            Some(LstmDirection {
                wx: iter.next().unwrap(),
                wh: iter.next().unwrap(),
                b: iter.next().unwrap(),
            })
        } else {
            None
        };
        layers.push(LstmLayer { fwd, bwd });
    }
    let head = Linear {
        weight: iter.next().unwrap(),
        bias: iter.next().unwrap(),
    };
    Ok(Model {
        config,
        token_set,
        lin,
        layers,
        head,
    })
}

/// Load a checkpoint and require it to match `expect`; mismatches name the
/// offending tensor.
pub fn load_checkpoint_expecting(path: &Path, expect: &ModelConfig) -> Result<Model> {
    let model = load_checkpoint(path)?;
    let got = expected_shapes(&model.config, model.lin.is_some());
    let want = expected_shapes(expect, model.lin.is_some());
    for (g, w) in got.iter().zip(want.iter()) {
        if g.0 != w.0 {
            return Err(Error::ShapeMismatch {
                context: format!("checkpoint tensor {}", g.0),
                expected: format!("tensor {}", w.0),
                got: format!("tensor {}", g.0),
            });
        }
        if (g.1, g.2) != (w.1, w.2) {
            return Err(Error::ShapeMismatch {
                context: format!("checkpoint tensor {}", g.0),
                expected: format!("{}x{}", w.1, w.2),
                got: format!("{}x{}", g.1, g.2),
            });
        }
    }
    if got.len() != want.len() {
        let name = if got.len() > want.len() {
            &got[want.len()].0
        } else {
            &want[got.len()].0
        };
        return Err(Error::ShapeMismatch {
            context: format!("checkpoint tensor {name}"),
            expected: format!("{} tensors", want.len()),
            got: format!("{} tensors", got.len()),
        });
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ctc::TokenSet;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model(bidirectional: bool) -> Model {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let cfg = ModelConfig {
            num_layers: 2,
            hidden_units: 3,
            bidirectional,
            input_dim: 4,
            output_dim: 3,
            dropout_rate: 0.1,
        };
        let toks = TokenSet::new(vec!["<blank>".into(), "a".into(), "b".into()]).unwrap();
        Model::new(cfg, toks, &mut rng).unwrap()
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.ckpt");
        let p2 = dir.path().join("b.ckpt");
        let m = model(true).insert_lin().unwrap();
        save_checkpoint(&m, &p1).unwrap();
        let loaded = load_checkpoint(&p1).unwrap();
        save_checkpoint(&loaded, &p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn truncated_file_is_a_corrupt_checkpoint() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.ckpt");
        let m = model(false);
        save_checkpoint(&m, &p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() / 2]).unwrap();
        match load_checkpoint(&p) {
            Err(Error::CorruptCheckpoint(_)) => {}
            other => panic!("expected CorruptCheckpoint, got {other:?}"),
        }
    }

    #[test]
    fn directionality_mismatch_names_tensor() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.ckpt");
        let bi = model(true);
        save_checkpoint(&bi, &p).unwrap();
        let mut uni_cfg = bi.config.clone();
        uni_cfg.bidirectional = false;
        match load_checkpoint_expecting(&p, &uni_cfg) {
            Err(Error::ShapeMismatch { context, .. }) => {
                assert!(context.contains("lstm0"), "context: {context}");
            }
            other => panic!("expected ShapeMismatch, got {other:?}"),
        }
    }

    #[test]
    fn unknown_version_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.ckpt");
        let m = model(false);
        save_checkpoint(&m, &p).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        bytes[4] = 99;
        std::fs::write(&p, &bytes).unwrap();
        match load_checkpoint(&p) {
            Err(Error::UnknownFormatVersion(99)) => {}
            other => panic!("expected UnknownFormatVersion, got {other:?}"),
        }
    }
}
