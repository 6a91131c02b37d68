//! Checkpoint layout, all integers little-endian u32:
//!
//! `SGC1`, config length + UTF-8 config text (`key = value` lines), block
//! count, then per block: name length + name, rows, cols, `rows * cols` f32.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::model::{ClassifierParams, Dense};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SGC1";

pub fn write_checkpoint(path: &Path, params: &ClassifierParams, config_echo: &str) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    let put_u32 = |w: &mut BufWriter<File>, v: usize| w.write_all(&(v as u32).to_le_bytes());
    w.write_all(CHECKPOINT_MAGIC).map_err(io)?;
    put_u32(&mut w, config_echo.len()).map_err(io)?;
    w.write_all(config_echo.as_bytes()).map_err(io)?;
    let blocks = params.blocks();
    put_u32(&mut w, blocks.len()).map_err(io)?;
    for (name, rows, cols, data) in blocks {
        put_u32(&mut w, name.len()).map_err(io)?;
        w.write_all(name.as_bytes()).map_err(io)?;
        put_u32(&mut w, rows).map_err(io)?;
        put_u32(&mut w, cols).map_err(io)?;
        for v in data {
            w.write_all(&(*v as f32).to_le_bytes()).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Parse {
                path: self.path.to_path_buf(),
                line: 0,
                message: format!("checkpoint truncated at byte {}", self.pos),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()?;
        let path = self.path;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: e.to_string(),
        })
    }
}

/// Returns the parameters and the echoed configuration text.
pub fn read_checkpoint(path: &Path) -> Result<(ClassifierParams, String)> {
    let mut buf = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| Error::io(path, e))?;
    let bad = |m: String| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        message: m,
    };
    let mut c = Cursor { buf: &buf, pos: 0, path };
    if c.take(4)? != CHECKPOINT_MAGIC {
        return Err(bad("missing SGC1 header".into()));
    }
    let config = c.string()?;
    let n_blocks = c.u32()?;
    let mut blocks = Vec::with_capacity(n_blocks);
    for _ in 0..n_blocks {
        let name = c.string()?;
        let rows = c.u32()?;
        let cols = c.u32()?;
        let data: Vec<f64> = c
            .take(4 * rows * cols)?
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect();
        blocks.push((name, rows, cols, data));
    }
    if c.pos != buf.len() {
        return Err(bad("trailing bytes after parameter blocks".into()));
    }
    let mut take = |want: &str| -> Result<(usize, usize, Vec<f64>)> {
        let i = blocks
            .iter()
            .position(|b| b.0 == want)
            .ok_or_else(|| bad(format!("missing block {want}")))?;
        let (_, r, k, d) = blocks.remove(i);
        Ok((r, k, d))
    };
    let (orows, ocols, oweight) = take("output.weight")?;
    let (_, _, obias) = take("output.bias")?;
    let hidden = match take("hidden.weight") {
        Ok((rows, cols, weight)) => {
            let (_, _, bias) = take("hidden.bias")?;
            Some(Dense { rows, cols, weight, bias })
        }
        Err(_) => None,
    };
    if obias.len() != orows || ocols % 2 != 0 {
        return Err(bad("inconsistent output block shapes".into()));
    }
    let input_dim = match &hidden {
        Some(h) if h.bias.len() == h.rows && 2 * h.rows == ocols => h.cols,
        Some(_) => return Err(bad("inconsistent hidden block shapes".into())),
        None => ocols / 2,
    };
    let params = ClassifierParams {
        input_dim,
        hidden,
        output: Dense { rows: orows, cols: ocols, weight: oweight, bias: obias },
    };
    Ok((params, config))
}

/// Two columns per line: iteration and loss.
pub fn write_loss_trace(path: &Path, trace: &[f64]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    for (i, l) in trace.iter().enumerate() {
        writeln!(w, "{i} {l}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_loss_trace(path: &Path) -> Result<Vec<f64>> {
    let r = BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?);
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let value = line
            .split_whitespace()
            .nth(1)
            .and_then(|v| v.parse::<f64>().ok())
            .ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: format!("expected `iteration loss`, got {line:?}"),
            })?;
        out.push(value);
    }
    Ok(out)
}
