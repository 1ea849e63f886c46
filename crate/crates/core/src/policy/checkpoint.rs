//! Checkpoint format: a magic line, a JSON header line holding the
//! architecture and vocabulary, then the parameters as little-endian f64.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ArchConfig, PolicyError, PolicyParams, Vocab};
use crate::corpus::Token;

const MAGIC: &str = "compgrpo-checkpoint v1";

#[derive(Serialize, Deserialize)]
struct Header {
    arch: ArchConfig,
    vocab: Vec<String>,
    n_params: usize,
}

fn err(e: impl std::fmt::Display) -> PolicyError {
    PolicyError::Checkpoint(e.to_string())
}

pub fn write_checkpoint(params: &PolicyParams, mut out: impl Write) -> Result<(), PolicyError> {
    let header = Header {
        arch: params.arch,
        // reserved tokens are implicit
        vocab: params.vocab.tokens()[3..].iter().map(|t| t.to_string()).collect(),
        n_params: params.values.len(),
    };
    writeln!(out, "{MAGIC}").map_err(err)?;
    writeln!(out, "{}", serde_json::to_string(&header).map_err(err)?).map_err(err)?;
    let mut bytes = Vec::with_capacity(params.values.len() * 8);
    for v in &params.values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&bytes).map_err(err)?;
    out.flush().map_err(err)
}

pub fn read_checkpoint(input: impl Read) -> Result<PolicyParams, PolicyError> {
    let mut r = BufReader::new(input);
    let mut line = String::new();
    r.read_line(&mut line).map_err(err)?;
    if line.trim_end() != MAGIC {
        return Err(err("not a checkpoint file"));
    }
    line.clear();
    r.read_line(&mut line).map_err(err)?;
    let header: Header = serde_json::from_str(&line).map_err(err)?;
    let tokens = header.vocab.into_iter().map(|t| Token::new(t).map_err(err)).collect::<Result<Vec<_>, _>>()?;
    let vocab = Vocab::new(tokens)?;
    header.arch.validate(vocab.len())?;
    let expected = header.arch.param_count(vocab.len());
    if expected != header.n_params {
        return Err(err(format!("header declares {} parameters, architecture needs {expected}", header.n_params)));
    }
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(err)?;
    if bytes.len() != expected * 8 {
        return Err(err(format!("expected {} parameter bytes, found {}", expected * 8, bytes.len())));
    }
    let values = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8"))).collect();
    Ok(PolicyParams { vocab, arch: header.arch, values })
}

pub fn save_checkpoint(params: &PolicyParams, path: &Path) -> Result<(), PolicyError> {
    let file = std::fs::File::create(path).map_err(|e| err(format!("{}: {e}", path.display())))?;
    write_checkpoint(params, std::io::BufWriter::new(file))
}

pub fn load_checkpoint(path: &Path) -> Result<PolicyParams, PolicyError> {
    let file = std::fs::File::open(path).map_err(|e| err(format!("{}: {e}", path.display())))?;
    read_checkpoint(file)
}
