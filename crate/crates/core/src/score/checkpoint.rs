//! MLP checkpoints.
//!
//! A checkpoint is a UTF-8 header followed by raw little-endian `f64` data:
//!
//! ```text
//! SITCOM-CHECKPOINT v1
//! dtype f64-le
//! config dim=<d> hidden=<h> depth=<L> frequencies=<F> t_max=<T>
//! tensor <name> <dim_0> <dim_1> ...
//! ...
//! end
//! ```
//!
//! The `end` line is terminated by a single `\n`; the weight arrays follow
//! back to back in header order, each stored row-major.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use super::mlp::{Mlp, MlpConfig};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &str = "SITCOM-CHECKPOINT v1";

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

pub fn write_checkpoint<W: Write>(model: &Mlp, mut out: W) -> Result<()> {
    let c = model.config();
    writeln!(out, "{MAGIC}")?;
    writeln!(out, "dtype f64-le")?;
    writeln!(
        out,
        "config dim={} hidden={} depth={} frequencies={} t_max={}",
        c.dim, c.hidden, c.depth, c.frequencies, c.t_max
    )?;
    for ((name, shape), _) in c.layout().iter().zip(model.params()) {
        let dims: Vec<String> = shape.iter().map(|d| d.to_string()).collect();
        writeln!(out, "tensor {name} {}", dims.join(" "))?;
    }
    writeln!(out, "end")?;
    for p in model.params() {
        for v in p.data() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(input: R) -> Result<Mlp> {
    let mut r = BufReader::new(input);
    let mut line = String::new();
    let mut next_line = |r: &mut BufReader<R>| -> Result<String> {
        line.clear();
        if r.read_line(&mut line)? == 0 {
            return Err(bad("unexpected end of header"));
        }
        Ok(line.trim_end_matches('\n').to_string())
    };
    if next_line(&mut r)? != MAGIC {
        return Err(bad("missing checkpoint magic line"));
    }
    if next_line(&mut r)? != "dtype f64-le" {
        return Err(bad("unsupported dtype"));
    }
    let config = parse_config(&next_line(&mut r)?)?;
    let mut shapes: Vec<(String, Vec<usize>)> = Vec::new();
    loop {
        let l = next_line(&mut r)?;
        if l == "end" {
            break;
        }
        let mut it = l.split_whitespace();
        if it.next() != Some("tensor") {
            return Err(bad(format!("unexpected header line: {l}")));
        }
        let name = it.next().ok_or_else(|| bad("tensor line without a name"))?.to_string();
        let shape = it
            .map(|d| d.parse::<usize>().map_err(|_| bad(format!("bad dimension in: {l}"))))
            .collect::<Result<Vec<_>>>()?;
        shapes.push((name, shape));
    }
    if shapes != config.layout() {
        return Err(bad("tensor list does not match the configured architecture"));
    }
    let mut params = Vec::with_capacity(shapes.len());
    let mut buf = [0u8; 8];
    for (name, shape) in shapes {
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            r.read_exact(&mut buf).map_err(|_| bad(format!("truncated data in tensor {name}")))?;
            data.push(f64::from_le_bytes(buf));
        }
        params.push(Tensor::new(shape, data)?);
    }
    if r.read(&mut buf)? != 0 {
        return Err(bad("trailing bytes after the last tensor"));
    }
    Mlp::from_params(config, params)
}

fn parse_config(line: &str) -> Result<MlpConfig> {
    let mut it = line.split_whitespace();
    if it.next() != Some("config") {
        return Err(bad("missing config line"));
    }
    let mut get = |key: &str| -> Result<usize> {
        let tok = it.next().ok_or_else(|| bad(format!("missing config key {key}")))?;
        let v = tok
            .strip_prefix(key)
            .and_then(|s| s.strip_prefix('='))
            .ok_or_else(|| bad(format!("expected {key}=..., got {tok}")))?;
        v.parse().map_err(|_| bad(format!("bad value for {key}: {v}")))
    };
    Ok(MlpConfig {
        dim: get("dim")?,
        hidden: get("hidden")?,
        depth: get("depth")?,
        frequencies: get("frequencies")?,
        t_max: get("t_max")?,
    })
}

pub fn save_checkpoint(model: &Mlp, path: &Path) -> Result<()> {
    let f = std::fs::File::create(path)?;
    write_checkpoint(model, std::io::BufWriter::new(f))
}

pub fn load_checkpoint(path: &Path) -> Result<Mlp> {
    read_checkpoint(std::fs::File::open(path)?)
}
