//! Checkpoint files: a text manifest (config as key=value lines, then the
//! tensor name list) followed by the binary tensors in manifest order.
//! Batchnorm running statistics are stored as `running.<i>.mean` / `.var`.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::Path;

use thiserror::Error;

use super::{Correlation, ModelError, ModelState, Parametrization, PyramidConfig};
use crate::tensor::serial::{read_tensor, write_tensor, SerialError};
use crate::tensor::TensorData;

pub const CHECKPOINT_MAGIC: &str = "DGC-CHECKPOINT 1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Serial(#[from] SerialError),
    #[error("checkpoint does not match the model: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

fn fmt_usize_list(v: &[usize]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn fmt_nested(v: &[Vec<usize>]) -> String {
    v.iter().map(|row| fmt_usize_list(row)).collect::<Vec<_>>().join(";")
}

fn fmt_f64_list(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

pub fn config_to_lines(cfg: &PyramidConfig) -> Vec<String> {
    vec![
        format!("levels={}", cfg.levels),
        format!("base_resolution={}", cfg.base_resolution),
        format!("channels_per_level={}", fmt_usize_list(&cfg.channels_per_level)),
        format!("decoder_channels={}", fmt_nested(&cfg.decoder_channels)),
        format!("dilations_per_level={}", fmt_nested(&cfg.dilations_per_level)),
        format!("alpha={}", fmt_f64_list(&cfg.alpha)),
        format!("use_matchability={}", cfg.use_matchability),
        format!(
            "correlation={}",
            match cfg.correlation {
                Correlation::Global => "global".to_string(),
                Correlation::Local { radius } => format!("local:{radius}"),
            }
        ),
        format!("l2norm_correlation={}", cfg.l2norm_correlation),
        format!(
            "parametrization={}",
            match cfg.parametrization {
                Parametrization::AbsoluteMap => "map",
                Parametrization::Flow => "flow",
            }
        ),
    ]
}

fn parse_usize_list(s: &str) -> Result<Vec<usize>, CheckpointError> {
    s.split(',')
        .map(|x| x.trim().parse().map_err(|_| CheckpointError::Parse(format!("bad integer list '{s}'"))))
        .collect()
}

fn parse_nested(s: &str) -> Result<Vec<Vec<usize>>, CheckpointError> {
    s.split(';').map(parse_usize_list).collect()
}

fn parse_f64_list(s: &str) -> Result<Vec<f64>, CheckpointError> {
    s.split(',')
        .map(|x| x.trim().parse().map_err(|_| CheckpointError::Parse(format!("bad float list '{s}'"))))
        .collect()
}

pub fn config_from_kv(kv: &HashMap<String, String>) -> Result<PyramidConfig, CheckpointError> {
    let get = |k: &str| kv.get(k).ok_or_else(|| CheckpointError::Parse(format!("missing key '{k}'")));
    let correlation = match get("correlation")?.as_str() {
        "global" => Correlation::Global,
        s if s.starts_with("local:") => Correlation::Local {
            radius: s[6..].parse().map_err(|_| CheckpointError::Parse(format!("bad radius in '{s}'")))?,
        },
        other => return Err(CheckpointError::Parse(format!("unknown correlation '{other}'"))),
    };
    let parametrization = match get("parametrization")?.as_str() {
        "map" => Parametrization::AbsoluteMap,
        "flow" => Parametrization::Flow,
        other => return Err(CheckpointError::Parse(format!("unknown parametrization '{other}'"))),
    };
    Ok(PyramidConfig {
        levels: get("levels")?.parse().map_err(|_| CheckpointError::Parse("bad levels".into()))?,
        base_resolution: get("base_resolution")?
            .parse()
            .map_err(|_| CheckpointError::Parse("bad base_resolution".into()))?,
        channels_per_level: parse_usize_list(get("channels_per_level")?)?,
        decoder_channels: parse_nested(get("decoder_channels")?)?,
        dilations_per_level: parse_nested(get("dilations_per_level")?)?,
        alpha: parse_f64_list(get("alpha")?)?,
        use_matchability: get("use_matchability")? == "true",
        correlation,
        l2norm_correlation: get("l2norm_correlation")? == "true",
        parametrization,
    })
}

pub fn save_checkpoint(state: &ModelState, path: &Path) -> Result<(), CheckpointError> {
    let file = fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    writeln!(w, "{CHECKPOINT_MAGIC}")?;
    for line in config_to_lines(&state.cfg) {
        writeln!(w, "{line}")?;
    }
    let mut names: Vec<String> = state.params.iter().map(|p| p.name.clone()).collect();
    for i in 0..state.running.len() {
        names.push(format!("running.{i}.mean"));
        names.push(format!("running.{i}.var"));
    }
    writeln!(w, "tensors={}", names.len())?;
    for n in &names {
        writeln!(w, "{n}")?;
    }
    writeln!(w, "---")?;
    for p in &state.params {
        write_tensor(&mut w, &TensorData::new(p.shape.clone(), p.data.clone()))?;
    }
    for r in &state.running {
        write_tensor(&mut w, &TensorData::new(vec![r.mean.len()], r.mean.clone()))?;
        write_tensor(&mut w, &TensorData::new(vec![r.var.len()], r.var.clone()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ModelState, CheckpointError> {
    let file = fs::File::open(path)?;
    let mut r = BufReader::new(file);
    let mut line = String::new();
    r.read_line(&mut line)?;
    if line.trim() != CHECKPOINT_MAGIC {
        return Err(CheckpointError::Parse(format!("bad header '{}'", line.trim())));
    }
    let mut kv = HashMap::new();
    let mut names: Vec<String> = Vec::new();
    let mut n_tensors: Option<usize> = None;
    loop {
        line.clear();
        if r.read_line(&mut line)? == 0 {
            return Err(CheckpointError::Parse("unexpected end of header".into()));
        }
        let t = line.trim();
        if t == "---" {
            break;
        }
        if let Some(n) = n_tensors {
            names.push(t.to_string());
            if names.len() > n {
                return Err(CheckpointError::Parse("more tensor names than declared".into()));
            }
        } else if let Some((k, v)) = t.split_once('=') {
            if k == "tensors" {
                n_tensors = Some(v.parse().map_err(|_| CheckpointError::Parse("bad tensor count".into()))?);
            } else {
                kv.insert(k.to_string(), v.to_string());
            }
        } else {
            return Err(CheckpointError::Parse(format!("unexpected header line '{t}'")));
        }
    }
    if Some(names.len()) != n_tensors {
        return Err(CheckpointError::Parse("tensor name list does not match declared count".into()));
    }

    let cfg = config_from_kv(&kv)?;
    let mut state = ModelState::new(cfg, 0)?;

    // binary section starts exactly after the '---' line
    let mut tensors: HashMap<String, TensorData> = HashMap::new();
    let pos = r.stream_position()?;
    let mut file = r.into_inner();
    file.seek(SeekFrom::Start(pos))?;
    let mut reader = BufReader::new(file);
    for name in &names {
        tensors.insert(name.clone(), read_tensor(&mut reader)?);
    }
    let mut trailing = [0u8; 1];
    if reader.read(&mut trailing)? != 0 {
        return Err(CheckpointError::Parse("trailing bytes after last tensor".into()));
    }

    for p in &mut state.params {
        let t = tensors
            .remove(&p.name)
            .ok_or_else(|| CheckpointError::Mismatch(format!("missing tensor '{}'", p.name)))?;
        if t.shape != p.shape {
            return Err(CheckpointError::Mismatch(format!(
                "tensor '{}' has shape {:?}, model expects {:?}",
                p.name, t.shape, p.shape
            )));
        }
        p.data = t.data;
    }
    for (i, r) in state.running.iter_mut().enumerate() {
        let mean = tensors
            .remove(&format!("running.{i}.mean"))
            .ok_or_else(|| CheckpointError::Mismatch(format!("missing running.{i}.mean")))?;
        let var = tensors
            .remove(&format!("running.{i}.var"))
            .ok_or_else(|| CheckpointError::Mismatch(format!("missing running.{i}.var")))?;
        if mean.data.len() != r.mean.len() || var.data.len() != r.var.len() {
            return Err(CheckpointError::Mismatch(format!("running stats {i} length mismatch")));
        }
        r.mean = mean.data;
        r.var = var.data;
    }
    if !tensors.is_empty() {
        let extra: Vec<&String> = tensors.keys().collect();
        return Err(CheckpointError::Mismatch(format!("unused tensors in checkpoint: {extra:?}")));
    }
    Ok(state)
}
