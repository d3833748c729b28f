//! Checkpoint files: a versioned JSON container with flattened float64
//! weights. Floats are written in shortest round-trip form, so loading
//! reproduces every bit.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::agent::Checkpoint;
use crate::error::{Error, Result};
use crate::net::MlpParams;

pub const CHECKPOINT_FORMAT: &str = "folio-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    input_dim: usize,
    hidden_width: usize,
    /// `[rows, cols]` of w1, b1, w2, b2, w3, b3 in that order.
    shapes: Vec<[usize; 2]>,
    weights: Vec<f64>,
    validation_score: f64,
    iteration: u64,
}

fn shapes(p: &MlpParams) -> Vec<[usize; 2]> {
    let (i, h) = (p.input_dim, p.hidden);
    vec![[h, i], [h, 1], [h, h], [h, 1], [2, h], [2, 1]]
}

pub fn write_checkpoint<W: Write>(ck: &Checkpoint, sink: W) -> Result<()> {
    ck.params.validate()?;
    let file = CheckpointFile {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        input_dim: ck.params.input_dim,
        hidden_width: ck.params.hidden,
        shapes: shapes(&ck.params),
        weights: ck.params.flatten(),
        validation_score: ck.validation_score,
        iteration: ck.iteration,
    };
    serde_json::to_writer_pretty(sink, &file)?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(source: R) -> Result<Checkpoint> {
    let file: CheckpointFile = serde_json::from_reader(source)?;
    if file.format != CHECKPOINT_FORMAT {
        return Err(Error::Checkpoint(format!("unknown format `{}`", file.format)));
    }
    if file.version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {}", file.version)));
    }
    let mut params = MlpParams::zeros(file.input_dim, file.hidden_width);
    if file.shapes != shapes(&params) {
        return Err(Error::Checkpoint("tensor shapes disagree with header".into()));
    }
    if file.weights.len() != params.n_params() {
        return Err(Error::Checkpoint(format!(
            "expected {} weights, found {}",
            params.n_params(),
            file.weights.len()
        )));
    }
    let mut rest = file.weights.as_slice();
    for t in params.tensors_mut() {
        let (head, tail) = rest.split_at(t.len());
        t.copy_from_slice(head);
        rest = tail;
    }
    params.validate()?;
    Ok(Checkpoint {
        params,
        validation_score: file.validation_score,
        iteration: file.iteration,
    })
}
