//! Run configuration: a JSON parameter tree with dotted-path access, the
//! defaults table, schema validation and string-keyed factories.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const AGENT_TYPES: &[&str] = &["ppo", "dqn", "td3", "sac"];
pub const TRAINER_TYPES: &[&str] = &["on_policy", "off_policy", "separable"];
pub const ENV_TYPES: &[&str] = &["cartpole", "pendulum", "lorenz", "chain"];
pub const SRL_TYPES: &[&str] = &["pca", "ae"];
pub const ACTIVATIONS: &[&str] = &["tanh", "relu", "linear", "softmax"];
pub const LOSSES: &[&str] = &["mse", "huber"];
pub const OBS_TRANSFORMS: &[&str] = &["none", "scale", "clip"];
pub const INIT_SCHEMES: &[&str] = &["xavier_uniform", "orthogonal"];
pub const TARGET_SYNCS: &[&str] = &["hard", "polyak"];

/// Environments whose observation splits into per-actuator local windows.
pub const SEPARABLE_ENVS: &[&str] = &["chain"];

/// Every default of the run file. Sections are merged key by key under the
/// user's file; agent sections are looked up by `agent.type`. `null` marks a
/// key that is optional without a default value.
pub const DEFAULTS: &str = r#"{
  "run": {
    "seed": 0,
    "n_runs": 1,
    "n_transitions": 100000,
    "output_dir": "results",
    "eval_every": 0,
    "record_walltime": false,
    "target_score": null,
    "target_window": 20
  },
  "environment": {
    "n_envs": 1,
    "parallel": false,
    "obs_transform": { "kind": "none", "lo": [], "hi": [] },
    "extra": {}
  },
  "trainer": {
    "update_size": 4,
    "n_epochs": 4,
    "batch_size": 64,
    "bootstrap": true,
    "update_every": 1,
    "warmup": 1000
  },
  "agent": {
    "common": {
      "gamma": 0.99,
      "networks": {
        "policy": { "layers": [64, 64], "activation": "tanh" },
        "value": { "layers": [64, 64], "activation": "tanh" }
      },
      "lr": { "policy": 3e-4, "value": 3e-4, "alpha": 3e-4 },
      "init": "xavier_uniform",
      "grad_clip": 10.0,
      "loss": "mse",
      "reward_scale": 1.0
    },
    "ppo": {
      "clip": 0.2,
      "gae_lambda": 0.95,
      "entropy_coef": 0.01,
      "normalize_advantages": true,
      "log_std_init": 0.0
    },
    "dqn": {
      "eps_start": 1.0,
      "eps_end": 0.05,
      "eps_fraction": 0.5,
      "target_sync": "hard",
      "sync_every": 500,
      "tau": 0.005,
      "buffer_size": 50000
    },
    "td3": {
      "expl_noise": 0.1,
      "target_noise": 0.2,
      "noise_clip": 0.5,
      "policy_delay": 2,
      "tau": 0.005,
      "buffer_size": 50000
    },
    "sac": {
      "tau": 0.005,
      "target_entropy": null,
      "init_alpha": 1.0,
      "auto_alpha": true,
      "buffer_size": 50000
    }
  },
  "srl": {
    "latent_dim": null,
    "ev_threshold": null,
    "warmup_samples": 1000,
    "epochs": 50,
    "batch_size": 64,
    "lr": 1e-3,
    "layers": [64],
    "activation": "tanh"
  }
}"#;

fn defaults() -> Value {
    serde_json::from_str(DEFAULTS).expect("defaults table is valid JSON")
}

/// Hierarchical parameters with dotted-path lookup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(transparent)]
pub struct ParamTree {
    root: Map<String, Value>,
}

impl ParamTree {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_value(value: Value) -> Result<Self> {
        match value {
            Value::Object(root) => Ok(Self { root }),
            other => Err(Error::Schema(format!("expected an object, found {other}"))),
        }
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let v: Value = serde_json::from_str(text).map_err(|source| Error::Parse {
            path: "<string>".into(),
            source,
        })?;
        Self::from_value(v)
    }

    pub fn to_value(&self) -> Value {
        Value::Object(self.root.clone())
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&self.root).expect("json values serialize")
    }

    pub fn keys(&self) -> impl Iterator<Item = &String> {
        self.root.keys()
    }

    /// Value at a dotted path, if every intermediate node is an object.
    pub fn lookup(&self, path: &str) -> Option<&Value> {
        let mut parts = path.split('.');
        let mut cur = self.root.get(parts.next()?)?;
        for p in parts {
            cur = cur.as_object()?.get(p)?;
        }
        Some(cur)
    }

    /// Value at `path`, or `default` when absent. Explicit `null` counts as absent.
    pub fn get(&self, path: &str, default: Option<Value>) -> Result<Value> {
        match self.lookup(path) {
            Some(v) if !v.is_null() => Ok(v.clone()),
            _ => default.ok_or_else(|| Error::MissingPath(path.to_string())),
        }
    }

    pub fn contains(&self, path: &str) -> bool {
        self.lookup(path).is_some_and(|v| !v.is_null())
    }

    /// Sets a value, creating intermediate objects.
    pub fn set(&mut self, path: &str, value: Value) -> Result<()> {
        let parts: Vec<&str> = path.split('.').collect();
        let (last, inner) = parts.split_last().expect("split yields at least one part");
        let mut cur = &mut self.root;
        for p in inner {
            let entry = cur
                .entry(p.to_string())
                .or_insert_with(|| Value::Object(Map::new()));
            cur = entry
                .as_object_mut()
                .ok_or_else(|| Error::Schema(format!("`{p}` in `{path}` is not an object")))?;
        }
        cur.insert(last.to_string(), value);
        Ok(())
    }

    pub fn subtree(&self, path: &str) -> Result<ParamTree> {
        match self.lookup(path) {
            Some(Value::Object(m)) => Ok(ParamTree { root: m.clone() }),
            Some(_) => Err(Error::WrongType {
                path: path.into(),
                expected: "object",
            }),
            None => Err(Error::MissingPath(path.into())),
        }
    }

    pub fn f64(&self, path: &str) -> Result<f64> {
        self.get(path, None)?
            .as_f64()
            .ok_or_else(|| Error::WrongType {
                path: path.into(),
                expected: "number",
            })
    }

    pub fn opt_f64(&self, path: &str) -> Result<Option<f64>> {
        if self.contains(path) {
            self.f64(path).map(Some)
        } else {
            Ok(None)
        }
    }

    pub fn usize(&self, path: &str) -> Result<usize> {
        self.get(path, None)?
            .as_u64()
            .map(|v| v as usize)
            .ok_or_else(|| Error::WrongType {
                path: path.into(),
                expected: "non-negative integer",
            })
    }

    pub fn opt_usize(&self, path: &str) -> Result<Option<usize>> {
        if self.contains(path) {
            self.usize(path).map(Some)
        } else {
            Ok(None)
        }
    }

    pub fn u64(&self, path: &str) -> Result<u64> {
        self.get(path, None)?
            .as_u64()
            .ok_or_else(|| Error::WrongType {
                path: path.into(),
                expected: "non-negative integer",
            })
    }

    pub fn bool(&self, path: &str) -> Result<bool> {
        self.get(path, None)?
            .as_bool()
            .ok_or_else(|| Error::WrongType {
                path: path.into(),
                expected: "boolean",
            })
    }

    pub fn str(&self, path: &str) -> Result<String> {
        self.get(path, None)?
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| Error::WrongType {
                path: path.into(),
                expected: "string",
            })
    }

    pub fn f64_list(&self, path: &str) -> Result<Vec<f64>> {
        let err = || Error::WrongType {
            path: path.into(),
            expected: "list of numbers",
        };
        self.get(path, None)?
            .as_array()
            .ok_or_else(err)?
            .iter()
            .map(|v| v.as_f64().ok_or_else(err))
            .collect()
    }

    pub fn usize_list(&self, path: &str) -> Result<Vec<usize>> {
        let err = || Error::WrongType {
            path: path.into(),
            expected: "list of integers",
        };
        self.get(path, None)?
            .as_array()
            .ok_or_else(err)?
            .iter()
            .map(|v| v.as_u64().map(|u| u as usize).ok_or_else(err))
            .collect()
    }
}

impl fmt::Display for ParamTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_json_string())
    }
}

/// Functional form of [`ParamTree::get`].
pub fn tree_get(tree: &ParamTree, path: &str, default: Option<Value>) -> Result<Value> {
    tree.get(path, default)
}

pub type Ctor<T, C> = Box<dyn Fn(&ParamTree, &C) -> Result<T> + Send + Sync>;

/// String-keyed constructors for one category of objects.
pub struct Factory<T, C> {
    category: &'static str,
    ctors: BTreeMap<String, Ctor<T, C>>,
}

impl<T, C> Factory<T, C> {
    pub fn new(category: &'static str) -> Self {
        Self {
            category,
            ctors: BTreeMap::new(),
        }
    }

    pub fn category(&self) -> &'static str {
        self.category
    }

    /// Registers `ctor` under `key`, replacing any previous entry.
    pub fn register<F>(&mut self, key: impl Into<String>, ctor: F)
    where
        F: Fn(&ParamTree, &C) -> Result<T> + Send + Sync + 'static,
    {
        self.ctors.insert(key.into(), Box::new(ctor));
    }

    pub fn contains(&self, key: &str) -> bool {
        self.ctors.contains_key(key)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.ctors.keys().map(String::as_str)
    }

    pub fn create(&self, key: &str, params: &ParamTree, context: &C) -> Result<T> {
        let ctor = self
            .ctors
            .get(key)
            .ok_or_else(|| Error::UnknownKey(key.to_string()))?;
        ctor(params, context)
    }
}

impl<T, C> fmt::Debug for Factory<T, C> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Factory")
            .field("category", &self.category)
            .field("keys", &self.ctors.keys().collect::<Vec<_>>())
            .finish()
    }
}

/// Validated run file with defaults filled in.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub name: String,
    pub trainer: ParamTree,
    pub agent: ParamTree,
    pub environment: ParamTree,
    pub srl: Option<ParamTree>,
    pub run: ParamTree,
    /// Hex SHA-256 of the source bytes.
    pub hash: String,
}

impl RunConfig {
    pub fn agent_type(&self) -> String {
        self.agent.str("type").expect("validated at load")
    }

    pub fn trainer_type(&self) -> String {
        self.trainer.str("type").expect("validated at load")
    }

    pub fn env_type(&self) -> String {
        self.environment.str("type").expect("validated at load")
    }

    pub fn seed(&self) -> u64 {
        self.run.u64("seed").expect("validated at load")
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        let mut c = self.clone();
        c.run
            .set("seed", Value::from(seed))
            .expect("run is an object");
        c
    }

    /// Parses and validates a run file given as text; `name` labels outputs.
    pub fn from_json_str(text: &str, name: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text).map_err(|source| Error::Parse {
            path: name.into(),
            source,
        })?;
        let hash = Sha256::digest(text.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect();
        Self::from_value(value, name, hash)
    }

    /// Re-serializes the effective (defaults merged) configuration.
    pub fn to_value(&self) -> Value {
        let mut m = Map::new();
        m.insert("run".into(), self.run.to_value());
        m.insert("environment".into(), self.environment.to_value());
        m.insert("agent".into(), self.agent.to_value());
        m.insert("trainer".into(), self.trainer.to_value());
        if let Some(s) = &self.srl {
            m.insert("srl".into(), s.to_value());
        }
        Value::Object(m)
    }

    fn from_value(value: Value, name: &str, hash: String) -> Result<Self> {
        let Value::Object(top) = value else {
            return Err(Error::Schema("run file must hold a JSON object".into()));
        };
        for key in top.keys() {
            if !["run", "environment", "agent", "trainer", "srl"].contains(&key.as_str()) {
                return Err(Error::Schema(format!("unknown top-level key `{key}`")));
            }
        }
        let defaults = defaults();
        let section = |key: &str| -> Result<Option<Map<String, Value>>> {
            match top.get(key) {
                None | Some(Value::Null) => Ok(None),
                Some(Value::Object(m)) => Ok(Some(m.clone())),
                Some(_) => Err(Error::Schema(format!("section `{key}` must be an object"))),
            }
        };
        let require = |key: &str| -> Result<Map<String, Value>> {
            section(key)?.ok_or_else(|| Error::Schema(format!("missing section `{key}`")))
        };

        let agent_user = require("agent")?;
        let agent_type = type_of(&agent_user, "agent", AGENT_TYPES)?;
        let trainer_user = require("trainer")?;
        type_of(&trainer_user, "trainer", TRAINER_TYPES)?;
        let env_user = require("environment")?;
        type_of(&env_user, "environment", ENV_TYPES)?;

        let mut agent_defaults = defaults["agent"]["common"]
            .as_object()
            .cloned()
            .expect("table");
        agent_defaults.extend(
            defaults["agent"][&agent_type]
                .as_object()
                .cloned()
                .expect("table"),
        );
        agent_defaults.insert("type".into(), Value::from(agent_type.clone()));

        let agent = merge_section("agent", &agent_defaults, &agent_user, &["type"])?;
        let trainer = merge_section(
            "trainer",
            obj(&defaults["trainer"]),
            &trainer_user,
            &["type"],
        )?;
        let environment = merge_section(
            "environment",
            obj(&defaults["environment"]),
            &env_user,
            &["type"],
        )?;
        let run = merge_section(
            "run",
            obj(&defaults["run"]),
            &section("run")?.unwrap_or_default(),
            &[],
        )?;
        let srl = match section("srl")? {
            None => None,
            Some(user) => {
                type_of(&user, "srl", SRL_TYPES)?;
                Some(merge_section(
                    "srl",
                    obj(&defaults["srl"]),
                    &user,
                    &["type"],
                )?)
            }
        };

        let cfg = Self {
            name: name.to_string(),
            trainer: ParamTree { root: trainer },
            agent: ParamTree { root: agent },
            environment: ParamTree { root: environment },
            srl: srl.map(|root| ParamTree { root }),
            run: ParamTree { root: run },
            hash,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        let agent = self.agent_type();
        let trainer = self.trainer_type();
        let env = self.env_type();
        let compatible = match agent.as_str() {
            "ppo" => trainer == "on_policy" || trainer == "separable",
            _ => trainer == "off_policy",
        };
        if !compatible {
            return Err(Error::Schema(format!(
                "agent `{agent}` cannot run under trainer `{trainer}`"
            )));
        }
        if trainer == "separable" && !SEPARABLE_ENVS.contains(&env.as_str()) {
            return Err(Error::Schema(format!(
                "environment `{env}` has no local observations for the separable trainer"
            )));
        }
        let schema = |e: Error| Error::Schema(e.to_string());
        let positive = |tree: &ParamTree, path: &str| -> Result<()> {
            if tree.usize(path).map_err(schema)? == 0 {
                return Err(Error::Schema(format!("`{path}` must be at least 1")));
            }
            Ok(())
        };
        positive(&self.run, "n_runs")?;
        positive(&self.environment, "n_envs")?;
        positive(&self.trainer, "update_size")?;
        positive(&self.trainer, "n_epochs")?;
        positive(&self.trainer, "batch_size")?;
        positive(&self.trainer, "update_every")?;
        self.run.u64("seed").map_err(schema)?;
        self.run.u64("n_transitions").map_err(schema)?;
        let gamma = self.agent.f64("gamma").map_err(schema)?;
        if !(0.0..=1.0).contains(&gamma) {
            return Err(Error::Schema(format!(
                "agent.gamma = {gamma} outside [0, 1]"
            )));
        }
        one_of(&self.environment, "obs_transform.kind", OBS_TRANSFORMS)?;
        one_of(&self.agent, "init", INIT_SCHEMES)?;
        one_of(&self.agent, "loss", LOSSES)?;
        for net in ["policy", "value"] {
            one_of(
                &self.agent,
                &format!("networks.{net}.activation"),
                ACTIVATIONS,
            )?;
            self.agent
                .usize_list(&format!("networks.{net}.layers"))
                .map_err(schema)?;
        }
        if agent == "dqn" {
            one_of(&self.agent, "target_sync", TARGET_SYNCS)?;
        }
        if let Some(srl) = &self.srl {
            one_of(srl, "activation", ACTIVATIONS)?;
            let latent = srl.opt_usize("latent_dim").map_err(schema)?;
            let thr = srl.opt_f64("ev_threshold").map_err(schema)?;
            match (latent, thr) {
                (None, None) => {
                    return Err(Error::Schema(
                        "srl needs `latent_dim` or `ev_threshold`".into(),
                    ))
                }
                (Some(0), _) => {
                    return Err(Error::Schema("srl.latent_dim must be at least 1".into()))
                }
                (_, Some(t)) if !(0.0..=1.0).contains(&t) => {
                    return Err(Error::Schema("srl.ev_threshold must lie in [0, 1]".into()))
                }
                _ => {}
            }
            if thr.is_some() && srl.str("type").map_err(schema)? != "pca" {
                return Err(Error::Schema(
                    "srl.ev_threshold is only supported by pca".into(),
                ));
            }
            positive(srl, "warmup_samples")?;
        }
        Ok(())
    }
}

fn obj(v: &Value) -> &Map<String, Value> {
    v.as_object().expect("defaults sections are objects")
}

fn type_of(section: &Map<String, Value>, name: &str, allowed: &[&str]) -> Result<String> {
    let t = section
        .get("type")
        .and_then(Value::as_str)
        .ok_or_else(|| Error::Schema(format!("missing `{name}.type`")))?;
    if !allowed.contains(&t) {
        return Err(Error::Schema(format!(
            "unsupported {name}.type `{t}` (expected one of {})",
            allowed.join(", ")
        )));
    }
    Ok(t.to_string())
}

fn one_of(tree: &ParamTree, path: &str, allowed: &[&str]) -> Result<()> {
    let v = tree.str(path).map_err(|e| Error::Schema(e.to_string()))?;
    if !allowed.contains(&v.as_str()) {
        return Err(Error::Schema(format!(
            "`{path}` = `{v}` is not one of {}",
            allowed.join(", ")
        )));
    }
    Ok(())
}

fn json_kind(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "boolean",
        Value::Number(_) => "number",
        Value::String(_) => "string",
        Value::Array(_) => "list",
        Value::Object(_) => "object",
    }
}

/// Overlays `user` on `defaults`. Every user key must exist in the defaults
/// (except `extra`, which is passed through verbatim) and keep its JSON kind.
fn merge_section(
    path: &str,
    defaults: &Map<String, Value>,
    user: &Map<String, Value>,
    extra_keys: &[&str],
) -> Result<Map<String, Value>> {
    let mut out = defaults.clone();
    for (k, v) in user {
        let full = format!("{path}.{k}");
        if extra_keys.contains(&k.as_str()) {
            out.insert(k.clone(), v.clone());
            continue;
        }
        let Some(d) = defaults.get(k) else {
            return Err(Error::Schema(format!("unknown key `{full}`")));
        };
        let merged = match (d, v) {
            (_, Value::Null) => d.clone(),
            (Value::Object(dm), Value::Object(um)) if k == "extra" && dm.is_empty() => {
                Value::Object(um.clone())
            }
            (Value::Object(dm), Value::Object(um)) => {
                Value::Object(merge_section(&full, dm, um, &[])?)
            }
            (Value::Null, _) => v.clone(),
            (d, v) if json_kind(d) == json_kind(v) => v.clone(),
            (d, v) => {
                return Err(Error::Schema(format!(
                    "`{full}` should be a {}, found a {}",
                    json_kind(d),
                    json_kind(v)
                )))
            }
        };
        out.insert(k.clone(), merged);
    }
    Ok(out)
}

/// Reads, parses and validates a run file.
pub fn load_config(path: impl AsRef<Path>) -> Result<RunConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("run");
    RunConfig::from_json_str(&text, name).map_err(|e| match e {
        Error::Parse { source, .. } => Error::Parse {
            path: path.to_path_buf(),
            source,
        },
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use serde_json::json;

    use super::*;

    const MINIMAL: &str = r#"{
        "agent": {"type": "ppo"},
        "trainer": {"type": "on_policy"},
        "environment": {"type": "cartpole"},
        "run": {"seed": 0}
    }"#;

    fn with(agent: &str, trainer: &str, env: &str) -> String {
        format!(
            r#"{{"agent":{{"type":"{agent}"}},"trainer":{{"type":"{trainer}"}},"environment":{{"type":"{env}"}}}}"#
        )
    }

    #[test]
    fn minimal_file_loads_without_srl() {
        let c = RunConfig::from_json_str(MINIMAL, "min").unwrap();
        assert!(c.srl.is_none());
        assert_eq!(c.agent.f64("gamma").unwrap(), 0.99);
        assert_eq!(c.agent.f64("clip").unwrap(), 0.2);
        assert_eq!(c.environment.usize("n_envs").unwrap(), 1);
        assert_eq!(c.hash.len(), 64);
    }

    #[test]
    fn unsupported_agent_rejected() {
        let err =
            RunConfig::from_json_str(&with("ddpg", "off_policy", "pendulum"), "x").unwrap_err();
        assert!(matches!(err, Error::Schema(_)), "{err}");
    }

    #[test]
    fn trainer_agent_compatibility_table() {
        for agent in AGENT_TYPES {
            for trainer in TRAINER_TYPES {
                let env = if *trainer == "separable" {
                    "chain"
                } else {
                    "pendulum"
                };
                let ok = RunConfig::from_json_str(&with(agent, trainer, env), "x").is_ok();
                let expect = match *agent {
                    "ppo" => *trainer != "off_policy",
                    _ => *trainer == "off_policy",
                };
                assert_eq!(ok, expect, "{agent} under {trainer}");
            }
        }
    }

    #[test]
    fn separable_needs_local_observations() {
        assert!(RunConfig::from_json_str(&with("ppo", "separable", "chain"), "x").is_ok());
        assert!(RunConfig::from_json_str(&with("ppo", "separable", "pendulum"), "x").is_err());
    }

    #[test]
    fn rejects_unknown_and_mistyped_keys() {
        let bad_top = r#"{"agent":{"type":"ppo"},"trainer":{"type":"on_policy"},"environment":{"type":"cartpole"},"extra":1}"#;
        assert!(matches!(
            RunConfig::from_json_str(bad_top, "x"),
            Err(Error::Schema(_))
        ));
        let typo = r#"{"agent":{"type":"ppo","gamam":0.9},"trainer":{"type":"on_policy"},"environment":{"type":"cartpole"}}"#;
        assert!(RunConfig::from_json_str(typo, "x").is_err());
        let kind = r#"{"agent":{"type":"ppo","gamma":"high"},"trainer":{"type":"on_policy"},"environment":{"type":"cartpole"}}"#;
        assert!(RunConfig::from_json_str(kind, "x").is_err());
        let missing = r#"{"trainer":{"type":"on_policy"},"environment":{"type":"cartpole"}}"#;
        assert!(RunConfig::from_json_str(missing, "x").is_err());
        let no_type = r#"{"agent":{"gamma":0.9},"trainer":{"type":"on_policy"},"environment":{"type":"cartpole"}}"#;
        assert!(RunConfig::from_json_str(no_type, "x").is_err());
        let zero_envs = r#"{"agent":{"type":"ppo"},"trainer":{"type":"on_policy"},"environment":{"type":"cartpole","n_envs":0}}"#;
        assert!(RunConfig::from_json_str(zero_envs, "x").is_err());
        let bad_act = r#"{"agent":{"type":"ppo","networks":{"policy":{"activation":"gelu"}}},"trainer":{"type":"on_policy"},"environment":{"type":"cartpole"}}"#;
        assert!(RunConfig::from_json_str(bad_act, "x").is_err());
    }

    #[test]
    fn parse_error_is_reported() {
        assert!(matches!(
            RunConfig::from_json_str("{not json", "x"),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn extra_passes_through_and_nested_merge_keeps_defaults() {
        let text = r#"{"agent":{"type":"ppo","networks":{"policy":{"layers":[32]}}},
            "trainer":{"type":"separable"},
            "environment":{"type":"chain","extra":{"n_act":10,"anything":{"deep":true}}}}"#;
        let c = RunConfig::from_json_str(text, "x").unwrap();
        assert_eq!(
            c.agent.usize_list("networks.policy.layers").unwrap(),
            vec![32]
        );
        assert_eq!(c.agent.str("networks.policy.activation").unwrap(), "tanh");
        assert_eq!(c.environment.usize("extra.n_act").unwrap(), 10);
        assert!(c.environment.bool("extra.anything.deep").unwrap());
    }

    #[test]
    fn srl_section_validation() {
        let base = |srl: &str| {
            format!(
                r#"{{"agent":{{"type":"ppo"}},"trainer":{{"type":"on_policy"}},"environment":{{"type":"pendulum"}},"srl":{srl}}}"#
            )
        };
        assert!(RunConfig::from_json_str(&base(r#"{"type":"pca","latent_dim":3}"#), "x").is_ok());
        assert!(
            RunConfig::from_json_str(&base(r#"{"type":"pca","ev_threshold":0.99}"#), "x").is_ok()
        );
        assert!(RunConfig::from_json_str(&base(r#"{"type":"pca"}"#), "x").is_err());
        assert!(
            RunConfig::from_json_str(&base(r#"{"type":"ae","ev_threshold":0.9}"#), "x").is_err()
        );
        assert!(
            RunConfig::from_json_str(&base(r#"{"type":"kmeans","latent_dim":2}"#), "x").is_err()
        );
    }

    #[test]
    fn load_is_deterministic_and_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("cfg.json");
        std::fs::write(&p, MINIMAL).unwrap();
        let a = load_config(&p).unwrap();
        let b = load_config(&p).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.name, "cfg");
        let again = RunConfig::from_json_str(&serde_json::to_string(&a.to_value()).unwrap(), "cfg")
            .unwrap();
        assert_eq!(again.agent, a.agent);
        assert_eq!(again.run, a.run);
        assert!(load_config(dir.path().join("missing.json")).is_err());
    }

    #[test]
    fn tree_get_examples() {
        let t = ParamTree::from_value(json!({"a": {"b": 3}})).unwrap();
        assert_eq!(tree_get(&t, "a.b", None).unwrap(), json!(3));
        let t = ParamTree::from_value(json!({"a": {}})).unwrap();
        assert_eq!(tree_get(&t, "a.x", Some(json!(7))).unwrap(), json!(7));
        assert!(matches!(
            tree_get(&t, "a.x", None),
            Err(Error::MissingPath(_))
        ));
        let t = ParamTree::from_value(json!({"a": 1})).unwrap();
        assert!(tree_get(&t, "a.b", None).is_err());
    }

    #[test]
    fn factory_register_and_create() {
        let mut f: Factory<ParamTree, ()> = Factory::new("identity");
        f.register("id", |p, _| Ok(p.clone()));
        assert!(f.contains("id"));
        let p = ParamTree::from_value(json!({"k": 1})).unwrap();
        assert_eq!(f.create("id", &p, &()).unwrap(), p);

        let err = f.create("xyz", &p, &()).unwrap_err();
        assert_eq!(err.to_string(), "Unknown key provided: xyz");

        let mut g: Factory<u32, ()> = Factory::new("numbers");
        g.register("k", |_, _| Ok(1));
        g.register("k", |_, _| Ok(2));
        assert_eq!(g.create("k", &ParamTree::new(), &()).unwrap(), 2);
        g.register("", |_, _| Ok(3));
        assert_eq!(g.create("", &ParamTree::new(), &()).unwrap(), 3);
        assert_eq!(g.keys().collect::<Vec<_>>(), vec!["", "k"]);
    }

    fn arb_json() -> impl Strategy<Value = Value> {
        let leaf = prop_oneof![
            any::<bool>().prop_map(Value::from),
            any::<i32>().prop_map(Value::from),
            (-1e6f64..1e6).prop_map(Value::from),
            "[a-z]{0,6}".prop_map(Value::from),
        ];
        leaf.prop_recursive(3, 24, 4, |inner| {
            prop_oneof![
                prop::collection::vec(inner.clone(), 0..4).prop_map(Value::from),
                prop::collection::btree_map("[a-z]{1,4}", inner, 0..4)
                    .prop_map(|m| Value::Object(m.into_iter().collect())),
            ]
        })
    }

    proptest! {
        #[test]
        fn param_tree_round_trips(entries in prop::collection::btree_map("[a-z]{1,5}", arb_json(), 0..5)) {
            let tree = ParamTree::from_value(Value::Object(entries.into_iter().collect())).unwrap();
            let back = ParamTree::from_json_str(&tree.to_json_string()).unwrap();
            prop_assert_eq!(back, tree);
        }
    }
}
