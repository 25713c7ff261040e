//! Model checkpoints: a text header terminated by `end`, then the
//! parameter tensors as little-endian `f64` blocks in declaration order,
//! then (when present) the AdamW first and second moments in the same order.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::fsutil::{self, header_field, parse_num, put_f64s, Reader};
use crate::net::{MlpModel, MlpParams, ModelConfig};
use crate::optim::{AdamWParams, AdamWState};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "tinyaction-checkpoint";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: MlpModel,
    pub seed: u64,
    /// Number of completed epochs.
    pub epoch: usize,
    pub optimizer: Option<AdamWState>,
}

// `{:?}` prints the shortest string that parses back to the same f64.
pub fn encode_checkpoint(ckpt: &Checkpoint) -> Vec<u8> {
    let c = ckpt.model.config;
    let mut h = String::new();
    writeln!(h, "{MAGIC} {CHECKPOINT_FORMAT_VERSION}").unwrap();
    writeln!(h, "input_dim {}", c.input_dim).unwrap();
    writeln!(h, "hidden {}", c.hidden).unwrap();
    writeln!(h, "blocks {}", c.blocks).unwrap();
    writeln!(h, "classes {}", c.classes).unwrap();
    writeln!(h, "dropout {:?}", c.dropout).unwrap();
    writeln!(h, "drop_path {:?}", c.drop_path).unwrap();
    writeln!(h, "seed {}", ckpt.seed).unwrap();
    writeln!(h, "epoch {}", ckpt.epoch).unwrap();
    match &ckpt.optimizer {
        None => h.push_str("optimizer none\n"),
        Some(opt) => {
            let p = opt.params;
            writeln!(h, "optimizer adamw").unwrap();
            writeln!(h, "beta1 {:?}", p.beta1).unwrap();
            writeln!(h, "beta2 {:?}", p.beta2).unwrap();
            writeln!(h, "eps {:?}", p.eps).unwrap();
            writeln!(h, "weight_decay {:?}", p.weight_decay).unwrap();
            writeln!(h, "step {}", opt.step).unwrap();
        }
    }
    h.push_str("end\n");
    let mut out = h.into_bytes();
    for (t, _) in ckpt.model.params.tensors() {
        put_f64s(&mut out, t);
    }
    if let Some(opt) = &ckpt.optimizer {
        for m in opt.first_moment.iter().chain(&opt.second_moment) {
            put_f64s(&mut out, m);
        }
    }
    out
}

pub fn save_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    fsutil::write_atomic(path, &encode_checkpoint(ckpt))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    decode_checkpoint(path, &fsutil::read_bytes(path)?)
}

pub fn decode_checkpoint(path: &Path, bytes: &[u8]) -> Result<Checkpoint> {
    let (lines, payload) = fsutil::split_header(path, bytes)?;
    let version: u32 = parse_num(path, MAGIC, header_field(path, &lines, 0, MAGIC)?)?;
    if version != CHECKPOINT_FORMAT_VERSION {
        return Err(Error::format(path, format!("unsupported checkpoint version {version}")));
    }
    let num = |idx: usize, key: &str| -> Result<u64> { parse_num(path, key, header_field(path, &lines, idx, key)?) };
    let real = |idx: usize, key: &str| -> Result<f64> { parse_num(path, key, header_field(path, &lines, idx, key)?) };
    let config = ModelConfig {
        input_dim: num(1, "input_dim")? as usize,
        hidden: num(2, "hidden")? as usize,
        blocks: num(3, "blocks")? as usize,
        classes: num(4, "classes")? as usize,
        dropout: real(5, "dropout")?,
        drop_path: real(6, "drop_path")?,
    };
    config.validate().map_err(|e| Error::format(path, e.to_string()))?;
    let seed = num(7, "seed")?;
    let epoch = num(8, "epoch")? as usize;
    let opt_params = match header_field(path, &lines, 9, "optimizer")? {
        "none" => None,
        "adamw" => Some((
            AdamWParams {
                beta1: real(10, "beta1")?,
                beta2: real(11, "beta2")?,
                eps: real(12, "eps")?,
                weight_decay: real(13, "weight_decay")?,
            },
            num(14, "step")?,
        )),
        other => return Err(Error::format(path, format!("unknown optimizer `{other}`"))),
    };
    let expected_lines = if opt_params.is_some() { 15 } else { 10 };
    if lines.len() != expected_lines {
        return Err(Error::format(path, "unexpected header lines"));
    }

    let mut reader = Reader::new(path, payload);
    let mut params = MlpParams::zeros(&config);
    for (t, _) in params.tensors_mut() {
        let values = reader.f64s(t.len())?;
        t.copy_from_slice(&values);
    }
    if !params.is_finite() {
        return Err(Error::format(path, "non-finite parameter"));
    }
    let optimizer = match opt_params {
        None => None,
        Some((hp, step)) => {
            let sizes: Vec<usize> = params.tensors().iter().map(|(t, _)| t.len()).collect();
            let mut st = AdamWState::new(hp, &sizes).map_err(|e| Error::format(path, e.to_string()))?;
            st.step = step;
            for m in st.first_moment.iter_mut().chain(st.second_moment.iter_mut()) {
                let values = reader.f64s(m.len())?;
                m.copy_from_slice(&values);
            }
            Some(st)
        }
    };
    reader.finish()?;
    Ok(Checkpoint {
        model: MlpModel { config, params },
        seed,
        epoch,
        optimizer,
    })
}
