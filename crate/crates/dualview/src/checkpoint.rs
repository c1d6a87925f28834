//! Binary checkpoint format.
//!
//! Layout: a text header (`dualview-checkpoint v1`, the model configuration
//! as `key=value` lines, then `params <count>`), followed by each parameter
//! in registry order: name length (u32 LE), name bytes, rows (u32 LE), cols
//! (u32 LE), and the values as little-endian f32. Round-trips are bit-exact.

use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use dualview_core::config::{Ablation, ModelConfig};
use dualview_core::matrix::Matrix;
use dualview_core::model::DualViewModel;
use dualview_core::params::ParameterRegistry;

const HEADER_LINE: &str = "dualview-checkpoint v1";

#[derive(Debug)]
pub enum CheckpointError {
    Io(std::io::Error),
    Format(String),
    /// the checkpoint's embedded configuration differs from the expected
    /// one; each entry names one differing field
    ConfigMismatch(Vec<String>),
}

impl fmt::Display for CheckpointError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CheckpointError::Io(e) => write!(f, "checkpoint io: {e}"),
            CheckpointError::Format(m) => write!(f, "checkpoint format: {m}"),
            CheckpointError::ConfigMismatch(diffs) => {
                write!(f, "checkpoint config mismatch: {}", diffs.join("; "))
            }
        }
    }
}

impl std::error::Error for CheckpointError {}

impl From<std::io::Error> for CheckpointError {
    fn from(e: std::io::Error) -> Self {
        CheckpointError::Io(e)
    }
}

fn config_lines(cfg: &ModelConfig) -> Vec<String> {
    vec![
        format!("embed_dim={}", cfg.embed_dim),
        format!("local_layers={}", cfg.local_layers),
        format!("local_heads={}", cfg.local_heads),
        format!("global_dim={}", cfg.global_dim),
        format!("global_layers={}", cfg.global_layers),
        format!("global_heads={}", cfg.global_heads),
        format!("max_candidates={}", cfg.max_candidates),
        format!("local_mlp_hidden={}", cfg.local_mlp_hidden),
        format!("global_mlp_hidden={}", cfg.global_mlp_hidden),
        format!("gate_hidden={}", cfg.gate_hidden),
        format!("layernorm_epsilon={:?}", cfg.layernorm_epsilon),
        format!("ablation={}", cfg.ablation.name()),
    ]
}

fn parse_config(lines: &[(String, String)]) -> Result<ModelConfig, CheckpointError> {
    let mut cfg = ModelConfig::default();
    let mut seen = std::collections::BTreeSet::new();
    for (key, value) in lines {
        if !seen.insert(key.clone()) {
            return Err(CheckpointError::Format(format!("duplicate header key '{key}'")));
        }
        let parse_usize = || {
            value
                .parse::<usize>()
                .map_err(|_| CheckpointError::Format(format!("bad value for '{key}': '{value}'")))
        };
        match key.as_str() {
            "embed_dim" => cfg.embed_dim = parse_usize()?,
            "local_layers" => cfg.local_layers = parse_usize()?,
            "local_heads" => cfg.local_heads = parse_usize()?,
            "global_dim" => cfg.global_dim = parse_usize()?,
            "global_layers" => cfg.global_layers = parse_usize()?,
            "global_heads" => cfg.global_heads = parse_usize()?,
            "max_candidates" => cfg.max_candidates = parse_usize()?,
            "local_mlp_hidden" => cfg.local_mlp_hidden = parse_usize()?,
            "global_mlp_hidden" => cfg.global_mlp_hidden = parse_usize()?,
            "gate_hidden" => cfg.gate_hidden = parse_usize()?,
            "layernorm_epsilon" => {
                cfg.layernorm_epsilon = value.parse::<f64>().map_err(|_| {
                    CheckpointError::Format(format!("bad value for '{key}': '{value}'"))
                })?
            }
            "ablation" => {
                cfg.ablation = value
                    .parse::<Ablation>()
                    .map_err(CheckpointError::Format)?
            }
            other => {
                return Err(CheckpointError::Format(format!("unknown header key '{other}'")))
            }
        }
    }
    const REQUIRED: [&str; 12] = [
        "embed_dim",
        "local_layers",
        "local_heads",
        "global_dim",
        "global_layers",
        "global_heads",
        "max_candidates",
        "local_mlp_hidden",
        "global_mlp_hidden",
        "gate_hidden",
        "layernorm_epsilon",
        "ablation",
    ];
    for key in REQUIRED {
        if !seen.contains(key) {
            return Err(CheckpointError::Format(format!("missing header key '{key}'")));
        }
    }
    Ok(cfg)
}

/// Field-by-field differences, `field: left vs right`; empty when equal.
pub fn diff_configs(left: &ModelConfig, right: &ModelConfig) -> Vec<String> {
    config_lines(left)
        .iter()
        .zip(config_lines(right).iter())
        .filter(|(a, b)| a != b)
        .map(|(a, b)| {
            let (key, lv) = a.split_once('=').unwrap();
            let rv = b.split_once('=').unwrap().1;
            format!("{key}: {lv} vs {rv}")
        })
        .collect()
}

pub fn save_checkpoint(
    path: &Path,
    config: &ModelConfig,
    params: &ParameterRegistry<f32>,
) -> Result<(), CheckpointError> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{HEADER_LINE}")?;
    for line in config_lines(config) {
        writeln!(w, "{line}")?;
    }
    writeln!(w, "params {}", params.len())?;
    for p in params.iter() {
        let name = p.name.as_bytes();
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name)?;
        w.write_all(&(p.value.rows() as u32).to_le_bytes())?;
        w.write_all(&(p.value.cols() as u32).to_le_bytes())?;
        for &v in p.value.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_line(r: &mut impl Read) -> Result<String, CheckpointError> {
    let mut line = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        let n = r.read(&mut byte)?;
        if n == 0 {
            return Err(CheckpointError::Format(String::from(
                "unexpected end of file in header",
            )));
        }
        if byte[0] == b'\n' {
            break;
        }
        line.push(byte[0]);
        if line.len() > 4096 {
            return Err(CheckpointError::Format(String::from("header line too long")));
        }
    }
    String::from_utf8(line)
        .map_err(|_| CheckpointError::Format(String::from("header is not valid utf-8")))
}

fn read_u32(r: &mut impl Read) -> Result<u32, CheckpointError> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

/// Loads the embedded configuration and the raw parameter registry.
pub fn load_checkpoint(
    path: &Path,
) -> Result<(ModelConfig, ParameterRegistry<f32>), CheckpointError> {
    let mut r = BufReader::new(File::open(path)?);
    let first = read_line(&mut r)?;
    if first != HEADER_LINE {
        return Err(CheckpointError::Format(format!(
            "not a checkpoint: expected '{HEADER_LINE}', found '{first}'"
        )));
    }
    let mut kv = Vec::new();
    let count;
    loop {
        let line = read_line(&mut r)?;
        if let Some(rest) = line.strip_prefix("params ") {
            count = rest.parse::<usize>().map_err(|_| {
                CheckpointError::Format(format!("bad parameter count '{rest}'"))
            })?;
            break;
        }
        match line.split_once('=') {
            Some((k, v)) => kv.push((String::from(k), String::from(v))),
            None => {
                return Err(CheckpointError::Format(format!(
                    "malformed header line '{line}'"
                )))
            }
        }
    }
    let config = parse_config(&kv)?;

    let mut registry = ParameterRegistry::new();
    for i in 0..count {
        let name_len = read_u32(&mut r)? as usize;
        if name_len > 4096 {
            return Err(CheckpointError::Format(format!(
                "parameter {i}: name length {name_len} is implausible"
            )));
        }
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| {
            CheckpointError::Format(format!("parameter {i}: name is not valid utf-8"))
        })?;
        let rows = read_u32(&mut r)? as usize;
        let cols = read_u32(&mut r)? as usize;
        let mut data = Vec::with_capacity(rows * cols);
        let mut buf = [0u8; 4];
        for _ in 0..rows * cols {
            r.read_exact(&mut buf)?;
            data.push(f32::from_le_bytes(buf));
        }
        registry.add(name, Matrix::from_vec(rows, cols, data));
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(CheckpointError::Format(String::from(
            "trailing bytes after last parameter",
        )));
    }
    Ok((config, registry))
}

/// Builds a model from a checkpoint. When `expected` is given, the embedded
/// configuration must match it exactly; otherwise the load is refused with
/// the field-level diff.
pub fn load_model(
    path: &Path,
    expected: Option<&ModelConfig>,
) -> Result<DualViewModel<f32>, CheckpointError> {
    let (config, params) = load_checkpoint(path)?;
    if let Some(want) = expected {
        let diff = diff_configs(want, &config);
        if !diff.is_empty() {
            return Err(CheckpointError::ConfigMismatch(diff));
        }
    }
    let mut model =
        DualViewModel::new(config, 0).map_err(|e| CheckpointError::Format(e.to_string()))?;
    model
        .load_values(&params)
        .map_err(|e| CheckpointError::Format(e.to_string()))?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use dualview_core::model::ScoringModel;

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let cfg = ModelConfig::tiny();
        let model = DualViewModel::<f32>::new(cfg, 99).unwrap();
        save_checkpoint(&path, &cfg, model.registry()).unwrap();
        let first = std::fs::read(&path).unwrap();

        let (loaded_cfg, params) = load_checkpoint(&path).unwrap();
        assert_eq!(loaded_cfg, cfg);
        let path2 = dir.path().join("m2.ckpt");
        save_checkpoint(&path2, &loaded_cfg, &params).unwrap();
        let second = std::fs::read(&path2).unwrap();
        assert_eq!(first, second);

        for (slot, p) in model.registry().iter().enumerate() {
            assert_eq!(params.name(slot), p.name);
            assert_eq!(params.value(slot).data(), p.value.data());
        }
    }

    #[test]
    fn config_mismatch_is_refused_with_diff() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let cfg = ModelConfig::tiny();
        let model = DualViewModel::<f32>::new(cfg, 1).unwrap();
        save_checkpoint(&path, &cfg, model.registry()).unwrap();

        let mut other = cfg;
        other.gate_hidden = 8;
        other.local_heads = 1;
        match load_model(&path, Some(&other)) {
            Err(CheckpointError::ConfigMismatch(diff)) => {
                assert_eq!(diff.len(), 2);
                assert!(diff.iter().any(|d| d.starts_with("local_heads: 1 vs 2")));
                assert!(diff.iter().any(|d| d.starts_with("gate_hidden: 8 vs 4")));
            }
            other => panic!("expected mismatch, got {:?}", other.err()),
        }
    }

    #[test]
    fn truncated_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let cfg = ModelConfig::tiny();
        let model = DualViewModel::<f32>::new(cfg, 1).unwrap();
        save_checkpoint(&path, &cfg, model.registry()).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(CheckpointError::Io(_))));
    }

    #[test]
    fn non_checkpoint_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk");
        std::fs::write(&path, b"definitely not a checkpoint\n").unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(CheckpointError::Format(_))
        ));
    }

    #[test]
    fn loaded_model_scores_identically() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let cfg = ModelConfig::tiny();
        let model = DualViewModel::<f32>::new(cfg, 7).unwrap();
        save_checkpoint(&path, &cfg, model.registry()).unwrap();
        let loaded = load_model(&path, Some(&cfg)).unwrap();

        let mut rng = dualview_core::rng::Rng::new(3);
        let q: Vec<f32> = rng.unit_vector(8).into_iter().map(|x| x as f32).collect();
        let set = dualview_core::data::CandidateSet {
            query_id: String::from("q"),
            query_embedding: q,
            candidates: (0..3)
                .map(|i| dualview_core::data::Candidate {
                    doc_id: format!("d{i}"),
                    embedding: rng.unit_vector(8).into_iter().map(|x| x as f32).collect(),
                    label: u8::from(i == 0),
                })
                .collect(),
        };
        assert_eq!(model.rerank(&set).unwrap(), loaded.rerank(&set).unwrap());
    }
}
