//! Run configuration files, seeding, manifests and CSV emission.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::envs::EnvSpec;
use crate::error::{Error, Result};
use crate::trainer::TrainConfig;

pub const CONFIG_VERSION: u32 = 1;
pub const CURVE_COLUMNS: [&str; 7] = [
    "step",
    "eval_return_mean",
    "eval_return_ci95",
    "actor_loss",
    "critic_loss",
    "mean_epsilon",
    "qp_iters_mean",
];

/// Independent seed for one subsystem, from the master seed and a role tag.
pub fn derive_seed(master: u64, role: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(role.as_bytes());
    let bytes = h.finalize();
    u64::from_le_bytes(bytes[..8].try_into().expect("digest has 32 bytes"))
}

/// Cheap deterministic seed mixing for inner loops (splitmix64 finalizer).
pub fn mix_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub version: u32,
    pub env: EnvSpec,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn new(env: EnvSpec, train: TrainConfig) -> Self {
        Self {
            version: CONFIG_VERSION,
            env,
            train,
        }
    }

    /// Hex SHA-256 of the canonical JSON (keys sorted), so reordering keys
    /// in the source file leaves it unchanged.
    pub fn digest(&self) -> String {
        let value = serde_json::to_value(self).expect("config serializes");
        let mut h = Sha256::new();
        h.update(value.to_string().as_bytes());
        format!("{:x}", h.finalize())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// Overlays `user` onto `base`. Objects merge key by key, except tagged
/// objects (carrying `mode` or `kind`), which replace the default wholesale.
fn overlay(base: &mut Value, user: Value) {
    match (base, user) {
        (Value::Object(b), Value::Object(u)) => {
            for (k, v) in u {
                let tagged = v
                    .as_object()
                    .is_some_and(|o| o.contains_key("mode") || o.contains_key("kind"));
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() && !tagged => overlay(slot, v),
                    Some(slot) => *slot = v,
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, u) => *b = u,
    }
}

fn config_error(err: serde_json::Error, section: &str) -> Error {
    let msg = err.to_string();
    let key = msg
        .split('`')
        .nth(1)
        .map(|k| format!("{section}.{k}"))
        .unwrap_or_else(|| section.to_string());
    Error::Config { key, message: msg }
}

/// Parses a configuration document. Missing keys take the defaults for the
/// chosen environment; unknown keys are rejected.
pub fn parse_config_str(text: &str) -> Result<RunConfig> {
    let root: Value = serde_json::from_str(text)?;
    let Value::Object(mut obj) = root else {
        return Err(Error::Config {
            key: "<root>".into(),
            message: "expected a JSON object".into(),
        });
    };
    if let Some(k) = obj
        .keys()
        .find(|k| !matches!(k.as_str(), "version" | "env" | "train"))
    {
        return Err(Error::Config {
            key: k.clone(),
            message: "unknown top-level key (expected version, env, train)".into(),
        });
    }
    let version = match obj.remove("version") {
        None => CONFIG_VERSION,
        Some(v) => v
            .as_u64()
            .filter(|&v| v == CONFIG_VERSION as u64)
            .ok_or_else(|| Error::Config {
                key: "version".into(),
                message: format!("expected {CONFIG_VERSION}, got {v}"),
            })? as u32,
    };
    let env: EnvSpec = match obj.remove("env") {
        None => EnvSpec::default(),
        Some(v) => serde_json::from_value(v).map_err(|e| config_error(e, "env"))?,
    };
    env.validate()?;
    let mut train =
        serde_json::to_value(TrainConfig::defaults_for(&env)).expect("defaults serialize");
    if let Some(user) = obj.remove("train") {
        if !user.is_object() {
            return Err(Error::Config {
                key: "train".into(),
                message: "expected an object".into(),
            });
        }
        overlay(&mut train, user);
    }
    let train: TrainConfig = serde_json::from_value(train).map_err(|e| config_error(e, "train"))?;
    train.validate(&env)?;
    Ok(RunConfig {
        version,
        env,
        train,
    })
}

pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config_str(&text)
}

/// One learning-curve row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub step: u64,
    pub eval_return_mean: f64,
    pub eval_return_ci95: f64,
    pub actor_loss: f64,
    pub critic_loss: f64,
    pub mean_epsilon: f64,
    pub qp_iters_mean: f64,
}

pub fn curve_csv(rows: &[CurveRow]) -> String {
    let mut out = CURVE_COLUMNS.join(",");
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.step,
            r.eval_return_mean,
            r.eval_return_ci95,
            r.actor_loss,
            r.critic_loss,
            r.mean_epsilon,
            r.qp_iters_mean
        ));
    }
    out
}

/// Writes `rows` as CSV. Appends (without a second header) when the file
/// already holds a curve.
pub fn emit_curve(path: &Path, rows: &[CurveRow]) -> Result<()> {
    let existing = fs::metadata(path).map(|m| m.len() > 0).unwrap_or(false);
    let text = curve_csv(rows);
    let body = if existing {
        text.split_once('\n')
            .map(|(_, rest)| rest.to_string())
            .unwrap_or_default()
    } else {
        text
    };
    let mut f = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    f.write_all(body.as_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_curve(path: &Path) -> Result<Vec<CurveRow>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == CURVE_COLUMNS.join(",") => {}
        _ => {
            return Err(Error::Parse {
                line: 1,
                message: "missing or unexpected curve header".into(),
            })
        }
    }
    lines
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let f: Vec<&str> = l.split(',').collect();
            let bad = |m: String| Error::Parse {
                line: i + 1,
                message: m,
            };
            if f.len() != CURVE_COLUMNS.len() {
                return Err(bad(format!(
                    "expected {} fields, got {}",
                    CURVE_COLUMNS.len(),
                    f.len()
                )));
            }
            let num = |k: usize| {
                f[k].parse::<f64>()
                    .map_err(|e| bad(format!("{}: {e}", CURVE_COLUMNS[k])))
            };
            Ok(CurveRow {
                step: f[0].parse().map_err(|e| bad(format!("step: {e}")))?,
                eval_return_mean: num(1)?,
                eval_return_ci95: num(2)?,
                actor_loss: num(3)?,
                critic_loss: num(4)?,
                mean_epsilon: num(5)?,
                qp_iters_mean: num(6)?,
            })
        })
        .collect()
}

/// Mean and `1.96·stderr` of `values` (stderr with the n−1 denominator;
/// zero spread for fewer than two values).
pub fn mean_ci95(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, 1.96 * (var / n as f64).sqrt())
}

/// Combines per-seed curves with identical step grids into one curve whose
/// return column is the across-seed mean with a 95% interval; the other
/// columns are averaged.
pub fn aggregate_curves(curves: &[Vec<CurveRow>]) -> Result<Vec<CurveRow>> {
    let Some(first) = curves.first() else {
        return Ok(Vec::new());
    };
    if curves.iter().any(|c| c.len() != first.len()) {
        return Err(Error::arg("curves have different lengths"));
    }
    (0..first.len())
        .map(|k| {
            let rows: Vec<&CurveRow> = curves.iter().map(|c| &c[k]).collect();
            if rows.iter().any(|r| r.step != first[k].step) {
                return Err(Error::arg(format!(
                    "curves disagree on the step of row {k}"
                )));
            }
            let avg = |f: fn(&CurveRow) -> f64| {
                rows.iter().map(|r| f(r)).sum::<f64>() / rows.len() as f64
            };
            let returns: Vec<f64> = rows.iter().map(|r| r.eval_return_mean).collect();
            let (mean, ci) = mean_ci95(&returns);
            Ok(CurveRow {
                step: first[k].step,
                eval_return_mean: mean,
                eval_return_ci95: ci,
                actor_loss: avg(|r| r.actor_loss),
                critic_loss: avg(|r| r.critic_loss),
                mean_epsilon: avg(|r| r.mean_epsilon),
                qp_iters_mean: avg(|r| r.qp_iters_mean),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_digest: String,
    pub env_digest: String,
    pub seed: u64,
    pub code_version: String,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(
        config: &RunConfig,
        started_unix: u64,
        finished_unix: u64,
        outputs: Vec<String>,
    ) -> Self {
        Self {
            config_digest: config.digest(),
            env_digest: config.env.digest(),
            seed: config.train.seed,
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            started_unix,
            finished_unix,
            outputs,
        }
    }
}

pub fn unix_now() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Writes `contents` to `dir/name` and returns the path.
pub fn write_output(dir: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_gives_defaults() {
        let cfg = parse_config_str("{}").unwrap();
        assert_eq!(cfg.train.gae.gamma, 0.99);
        assert_eq!(cfg.train.gae.lambda, 0.95);
        assert_eq!(cfg.train.lambda_reg, 1e-2);
        assert_eq!(cfg.train.ppo.epochs, 10);
    }

    #[test]
    fn negative_lambda_reg_names_the_key() {
        match parse_config_str(r#"{"train":{"lambda_reg":-1}}"#) {
            Err(Error::Config { key, .. }) => assert_eq!(key, "train.lambda_reg"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(parse_config_str(r#"{"train":{"lambda_regg":0.1}}"#).is_err());
        assert!(parse_config_str(r#"{"trian":{}}"#).is_err());
        assert!(parse_config_str(r#"{"train":{"ppo":{"clipp":0.1}}}"#).is_err());
    }

    #[test]
    fn partial_nested_override_keeps_other_defaults() {
        let cfg = parse_config_str(r#"{"train":{"ppo":{"clip":0.1}}}"#).unwrap();
        assert_eq!(cfg.train.ppo.clip, 0.1);
        assert_eq!(cfg.train.ppo.epochs, 10);
        let cfg = parse_config_str(r#"{"train":{"sampling":{"mode":"all_proper"}}}"#).unwrap();
        assert_eq!(
            cfg.train.sampling,
            crate::coalition::SamplingMode::AllProper
        );
    }

    #[test]
    fn round_trip_keeps_digest() {
        let cfg = parse_config_str(r#"{"train":{"seed":7,"lambda_reg":0.05}}"#).unwrap();
        let again = parse_config_str(&cfg.to_json()).unwrap();
        assert_eq!(cfg.digest(), again.digest());
    }

    #[test]
    fn seeds_depend_on_role() {
        assert_ne!(derive_seed(1, "env"), derive_seed(1, "policy"));
        assert_eq!(derive_seed(1, "env"), derive_seed(1, "env"));
        assert_ne!(mix_seed(1, 2), mix_seed(2, 1));
    }

    #[test]
    fn header_only_curve() {
        assert_eq!(curve_csv(&[]), format!("{}\n", CURVE_COLUMNS.join(",")));
    }
}
