//! Flat key-value simulation config.
//!
//! ```text
//! # comments run to the end of the line
//! model       = jp                 # jp | lb                  (default jp)
//! seed        = 7                  # u64                      (default 0)
//! repetitions = 1                  #                          (default 1)
//! scale       = continuous         # discrete:S | continuous[:LO:HI]
//! order       = none               # none | random | fixed    (default none)
//! psi         = 1.5, 2.5, 3.5      # one value per PVS
//! delta       = 0.2, -0.2          # one value per subject, sums to 0
//! upsilon     = 0.3 0.4            # one value per subject
//! phi         = @phi.txt           # JP: per PVS; sidecar path
//! rho         = 0.2                # LB: per SRC
//! src_of      = 1, 1, 2            # 1-based SRC number per PVS (default: own SRC)
//! hrc_of      = 1, 2, 1            # 1-based HRC number per PVS (default: all 1)
//! ```
//!
//! Vectors are separated by commas and/or whitespace. A value starting with
//! `@` names a sidecar file, resolved relative to the config's directory,
//! holding the same separated numbers over any number of lines; `#` starts a
//! comment there as well.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::dataset::Scale;
use crate::mle::ModelKind;
use crate::simulate::{OrderPolicy, SimulationConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },

    #[error("key '{key}': {message}")]
    Value { key: String, message: String },

    #[error("cannot read sidecar {path}: {source}")]
    Sidecar {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error(transparent)]
    Invalid(#[from] crate::simulate::SimulationError),
}

const KEYS: [&str; 12] = [
    "model",
    "seed",
    "repetitions",
    "scale",
    "order",
    "psi",
    "delta",
    "upsilon",
    "phi",
    "rho",
    "src_of",
    "hrc_of",
];

fn strip_comment(line: &str) -> &str {
    line.split('#').next().unwrap_or("").trim()
}

/// Parses and validates a simulation config. Sidecar paths resolve against
/// `base_dir`.
pub fn parse_sim_config(text: &str, base_dir: &Path) -> Result<SimulationConfig, ConfigError> {
    let mut entries: HashMap<&str, String> = HashMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = strip_comment(raw);
        if line.is_empty() {
            continue;
        }
        let syntax = |message: String| ConfigError::Syntax {
            line: n + 1,
            message,
        };
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| syntax("expected 'key = value'".into()))?;
        let key = key.trim().to_ascii_lowercase();
        let key = KEYS
            .iter()
            .find(|k| **k == key)
            .ok_or_else(|| syntax(format!("unknown key '{key}'")))?;
        if entries.insert(key, value.trim().to_owned()).is_some() {
            return Err(syntax(format!("key '{key}' given twice")));
        }
    }

    let value_err = |key: &str, message: String| ConfigError::Value {
        key: key.to_owned(),
        message,
    };
    let scalar = |key: &str| entries.get(key).map(String::as_str);

    let model = match scalar("model") {
        Some(v) => v.parse::<ModelKind>().map_err(|e| value_err("model", e))?,
        None => ModelKind::Jp,
    };
    let seed = match scalar("seed") {
        Some(v) => v
            .parse::<u64>()
            .map_err(|_| value_err("seed", format!("'{v}' is not a u64")))?,
        None => 0,
    };
    let repetitions = match scalar("repetitions") {
        Some(v) => v
            .parse::<u32>()
            .map_err(|_| value_err("repetitions", format!("'{v}' is not a count")))?,
        None => 1,
    };
    let scale = match scalar("scale") {
        Some(v) => v
            .parse::<Scale>()
            .map_err(|e| value_err("scale", e.to_string()))?,
        None => Scale::continuous(f64::NEG_INFINITY, f64::INFINITY).expect("valid"),
    };
    let order_policy = match scalar("order") {
        None | Some("none") => OrderPolicy::None,
        Some("random") => OrderPolicy::RandomPerSubject,
        Some("fixed") => OrderPolicy::FixedSequence,
        Some(v) => return Err(value_err("order", format!("'{v}' is not none|random|fixed"))),
    };

    let vector = |key: &str| -> Result<Option<Vec<f64>>, ConfigError> {
        let Some(v) = scalar(key) else { return Ok(None) };
        let body = match v.strip_prefix('@') {
            Some(path) => {
                let path = base_dir.join(path.trim());
                let text = std::fs::read_to_string(&path)
                    .map_err(|source| ConfigError::Sidecar { path, source })?;
                text.lines().map(strip_comment).collect::<Vec<_>>().join(" ")
            }
            None => v.to_owned(),
        };
        body.split(|c: char| c == ',' || c.is_whitespace())
            .filter(|t| !t.is_empty())
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|_| value_err(key, format!("'{t}' is not a number")))
            })
            .collect::<Result<Vec<_>, _>>()
            .map(Some)
    };
    let required = |key: &str| vector(key)?.ok_or_else(|| value_err(key, "missing".into()));
    let index_list = |key: &str| -> Result<Option<Vec<usize>>, ConfigError> {
        vector(key)?
            .map(|v| {
                v.into_iter()
                    .map(|x| {
                        if x >= 1.0 && x.fract() == 0.0 {
                            Ok(x as usize - 1)
                        } else {
                            Err(value_err(key, format!("'{x}' is not a positive integer")))
                        }
                    })
                    .collect()
            })
            .transpose()
    };

    let psi = required("psi")?;
    let delta = required("delta")?;
    let upsilon = required("upsilon")?;
    let dispersion = match model {
        ModelKind::Jp => {
            if entries.contains_key("rho") {
                return Err(value_err("rho", "only valid with model = lb".into()));
            }
            required("phi")?
        }
        ModelKind::Lb => {
            if entries.contains_key("phi") {
                return Err(value_err("phi", "only valid with model = jp".into()));
            }
            required("rho")?
        }
    };
    let src_of = index_list("src_of")?.unwrap_or_else(|| (0..psi.len()).collect());
    let hrc_of = index_list("hrc_of")?.unwrap_or_else(|| vec![0; psi.len()]);

    let cfg = SimulationConfig {
        model,
        psi,
        delta,
        upsilon,
        dispersion,
        src_of,
        hrc_of,
        repetitions,
        scale,
        seed,
        order_policy,
    };
    cfg.validate()?;
    Ok(cfg)
}
