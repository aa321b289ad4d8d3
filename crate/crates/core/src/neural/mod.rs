//! Small neural toolkit: MLPs with hand-written backpropagation, diagonal
//! Gaussian heads, Adam, running observation normalization and JSON
//! checkpoints.
//!
//! Parameters of every network live in one flat `Vec<f64>` so optimizers,
//! gradient clipping and checkpoints treat them uniformly.

pub mod adam;
pub mod gaussian;
pub mod mlp;
pub mod normalize;

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

pub use adam::{clip_grad_norm, Adam, AdamHyper};
pub use gaussian::{
    gauss_log_prob, gauss_log_prob_grad, kl_diag_gauss, kl_diag_gauss_grad, sample_reparam, GaussianHead, KlGrad,
    LOG_STD_MAX, LOG_STD_MIN,
};
pub use mlp::{Activation, Init, Mlp, MlpCache, MlpSpec};
pub use normalize::RunningNorm;

/// Write any serializable value as pretty JSON. Floats round-trip exactly.
pub fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::parse(path.display().to_string(), e))?;
    std::fs::write(path, text)?;
    Ok(())
}

pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path.display().to_string(), e))
}

/// Write records as JSON lines.
pub fn save_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    let mut text = String::new();
    for r in records {
        text.push_str(&serde_json::to_string(r).map_err(|e| Error::parse(path.display().to_string(), e))?);
        text.push('\n');
    }
    std::fs::write(path, text)?;
    Ok(())
}

pub fn load_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::parse(format!("{}:{}", path.display(), i + 1), e)))
        .collect()
}
