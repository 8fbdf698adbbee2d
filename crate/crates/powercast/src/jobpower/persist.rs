//! Textual persistence of user models, one file per user.
//!
//! Files start with the `PWCAST1` magic line, followed by `key=value` lines.
//! Floats are written with Rust's shortest round-trip formatting, so a
//! saved model reloads to bit-identical predictions.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

use super::svr::{KernelSpec, Standardization, SvrModel};
use super::{EamModel, ModelVariant, UserModel};

pub const MODEL_MAGIC: &str = "PWCAST1";

/// Serialize a user model. `vocab_entries` are this user's (name, code)
/// pairs, persisted only for the SVR variant which needs them at predict
/// time.
pub fn serialize_user_model(model: &UserModel, vocab_entries: &[(String, usize)]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{MODEL_MAGIC}");
    let _ = writeln!(out, "user={}", model.user_id);
    let _ = writeln!(out, "n_points={}", model.training_stats.0);
    let _ = writeln!(out, "n_jobs={}", model.training_stats.1);
    match &model.variant {
        ModelVariant::Eam(m) | ModelVariant::GlobalEam(m) => {
            let variant = if matches!(model.variant, ModelVariant::Eam(_)) { "eam" } else { "global_eam" };
            let _ = writeln!(out, "variant={variant}");
            let _ = writeln!(out, "p_cpu={}", m.p_cpu);
            let _ = writeln!(out, "p_gpu={}", m.p_gpu);
            let _ = writeln!(out, "p_mic={}", m.p_mic);
        }
        ModelVariant::Svr(m) => {
            let _ = writeln!(out, "variant=svr");
            match m.kernel {
                KernelSpec::Rbf { gamma } => {
                    let _ = writeln!(out, "kernel=rbf:{gamma}");
                }
                KernelSpec::Linear => {
                    let _ = writeln!(out, "kernel=linear");
                }
            }
            let _ = writeln!(out, "bias={}", m.bias);
            let _ = writeln!(out, "name_dims={}", m.name_dims);
            let _ = writeln!(out, "means={}", join_floats(&m.standardization.means));
            let _ = writeln!(out, "stds={}", join_floats(&m.standardization.stds));
            for (name, code) in vocab_entries {
                let _ = writeln!(out, "vocab={code},{name}");
            }
            for (sv, coef) in &m.support_vectors {
                let _ = writeln!(out, "sv={},{}", coef, join_floats(sv));
            }
        }
    }
    out
}

pub fn save_user_model(path: &Path, model: &UserModel, vocab_entries: &[(String, usize)]) -> Result<()> {
    std::fs::write(path, serialize_user_model(model, vocab_entries))
        .map_err(|e| Error::Io { path: path.to_path_buf(), source: e })
}

/// Load a user model and, for the SVR variant, its (name, code) vocabulary.
pub fn load_user_model(path: &Path) -> Result<(UserModel, Vec<(String, usize)>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })?;
    parse_user_model(&text).map_err(|msg| Error::Parse { path: path.to_path_buf(), row: 0, message: msg })
}

fn parse_user_model(text: &str) -> std::result::Result<(UserModel, Vec<(String, usize)>), String> {
    let mut lines = text.lines();
    if lines.next() != Some(MODEL_MAGIC) {
        return Err(format!("missing {MODEL_MAGIC} magic header"));
    }

    let mut user = None;
    let mut variant = None;
    let mut n_points = None;
    let mut n_jobs = None;
    let mut eam = EamModel::ZERO;
    let mut kernel = None;
    let mut bias = None;
    let mut name_dims = None;
    let mut means = None;
    let mut stds = None;
    let mut vocab: Vec<(String, usize)> = Vec::new();
    let mut svs: Vec<(Vec<f64>, f64)> = Vec::new();

    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| format!("expected key=value, got {line:?}"))?;
        match key {
            "user" => user = Some(value.to_string()),
            "variant" => variant = Some(value.to_string()),
            "n_points" => n_points = Some(value.parse::<usize>().map_err(|e| e.to_string())?),
            "n_jobs" => n_jobs = Some(value.parse::<usize>().map_err(|e| e.to_string())?),
            "p_cpu" => eam.p_cpu = parse_float(value)?,
            "p_gpu" => eam.p_gpu = parse_float(value)?,
            "p_mic" => eam.p_mic = parse_float(value)?,
            "kernel" => {
                kernel = Some(match value {
                    "linear" => KernelSpec::Linear,
                    rbf => {
                        let gamma = rbf
                            .strip_prefix("rbf:")
                            .ok_or_else(|| format!("unknown kernel {rbf}"))?;
                        KernelSpec::Rbf { gamma: parse_float(gamma)? }
                    }
                });
            }
            "bias" => bias = Some(parse_float(value)?),
            "name_dims" => name_dims = Some(value.parse::<usize>().map_err(|e| e.to_string())?),
            "means" => means = Some(parse_floats(value)?),
            "stds" => stds = Some(parse_floats(value)?),
            "vocab" => {
                let (code, name) = value.split_once(',').ok_or("vocab entry needs code,name")?;
                vocab.push((name.to_string(), code.parse::<usize>().map_err(|e| e.to_string())?));
            }
            "sv" => {
                let (coef, rest) = value.split_once(',').ok_or("sv entry needs coef,values")?;
                svs.push((parse_floats(rest)?, parse_float(coef)?));
            }
            other => return Err(format!("unknown key {other}")),
        }
    }

    let user_id = user.ok_or("missing user")?;
    let training_stats = (n_points.ok_or("missing n_points")?, n_jobs.ok_or("missing n_jobs")?);
    let variant = match variant.as_deref() {
        Some("eam") => ModelVariant::Eam(eam),
        Some("global_eam") => ModelVariant::GlobalEam(eam),
        Some("svr") => ModelVariant::Svr(SvrModel {
            support_vectors: svs,
            bias: bias.ok_or("missing bias")?,
            kernel: kernel.ok_or("missing kernel")?,
            standardization: Standardization {
                means: means.ok_or("missing means")?,
                stds: stds.ok_or("missing stds")?,
            },
            name_dims: name_dims.ok_or("missing name_dims")?,
        }),
        other => return Err(format!("unknown variant {other:?}")),
    };

    Ok((UserModel { user_id, variant, training_stats }, vocab))
}

fn parse_float(s: &str) -> std::result::Result<f64, String> {
    s.parse::<f64>().map_err(|e| format!("bad float {s:?}: {e}"))
}

fn parse_floats(s: &str) -> std::result::Result<Vec<f64>, String> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(',').map(parse_float).collect()
}

fn join_floats(values: &[f64]) -> String {
    values.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
}

/// Filesystem-safe file name for a user's model.
pub fn model_file_name(user_id: &str) -> String {
    let safe: String = user_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-') { c } else { '_' })
        .collect();
    format!("user_{safe}.model")
}
