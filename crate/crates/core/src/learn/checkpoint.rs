//! Binary checkpoint for [`LinearExtractor`].
//!
//! Layout, all integers and floats little-endian:
//!
//! | offset | size           | field                              |
//! |--------|----------------|------------------------------------|
//! | 0      | 8              | magic `NESYALX\0`                  |
//! | 8      | 4              | format version (`u32`, currently 1)|
//! | 12     | 4              | symbol count `|V|` (`u32`)         |
//! | 16     | 4              | input dimension `m` (`u32`)        |
//! | 20     | 8·|V|·m        | weights, row-major by symbol (`f64`)|
//! | …      | 8·|V|          | biases (`f64`)                     |

use std::io::{Read, Write};
use std::path::Path;

use super::{LearnError, LinearExtractor, Result};

pub const CHECKPOINT_MAGIC: [u8; 8] = *b"NESYALX\0";
pub const CHECKPOINT_VERSION: u32 = 1;

fn io_err(e: std::io::Error) -> LearnError {
    LearnError::Checkpoint(e.to_string())
}

pub fn write_checkpoint<W: Write>(f: &LinearExtractor, mut out: W) -> Result<()> {
    let mut buf = Vec::with_capacity(20 + 8 * (f.weights().len() + f.bias().len()));
    buf.extend_from_slice(&CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(f.n_symbols as u32).to_le_bytes());
    buf.extend_from_slice(&(f.input_dim as u32).to_le_bytes());
    for x in f.weights().iter().chain(f.bias()) {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    out.write_all(&buf).map_err(io_err)
}

pub fn read_checkpoint<R: Read>(mut input: R) -> Result<LinearExtractor> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes).map_err(io_err)?;
    if bytes.len() < 20 || bytes[..8] != CHECKPOINT_MAGIC {
        return Err(LearnError::Checkpoint("not a checkpoint file".into()));
    }
    let word = |k: usize| u32::from_le_bytes(bytes[k..k + 4].try_into().unwrap());
    let version = word(8);
    if version != CHECKPOINT_VERSION {
        return Err(LearnError::Checkpoint(format!("unsupported version {version}")));
    }
    let n_symbols = word(12) as usize;
    let input_dim = word(16) as usize;
    let n_floats = n_symbols * (input_dim + 1);
    if bytes.len() != 20 + 8 * n_floats {
        return Err(LearnError::Checkpoint(format!(
            "expected {} bytes, found {}",
            20 + 8 * n_floats,
            bytes.len()
        )));
    }
    let mut floats: Vec<f64> = bytes[20..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let bias = floats.split_off(n_symbols * input_dim);
    LinearExtractor::from_parts(n_symbols, input_dim, floats, bias)
}

pub fn save_checkpoint(f: &LinearExtractor, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(io_err)?;
    write_checkpoint(f, std::io::BufWriter::new(file))
}

pub fn load_checkpoint(path: &Path) -> Result<LinearExtractor> {
    let file = std::fs::File::open(path).map_err(io_err)?;
    read_checkpoint(std::io::BufReader::new(file))
}
