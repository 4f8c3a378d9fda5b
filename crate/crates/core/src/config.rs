//! Run configuration: flat `key = value` lines, `#` starts a comment.
//!
//! ```text
//! data = prepared          # directory written by `planwrite prepare`
//! epochs = 20
//! hidden = 64              # unset keys keep their defaults
//! terminators = . ! ?      # sentence-ending tokens for `prepare` and `eval`
//! ```
//!
//! Relative paths resolve against the config file's directory. Unknown and
//! repeated keys are errors. The `PLANWRITE_SEED` environment variable
//! overrides `seed`.

use std::path::{Path, PathBuf};

use crate::corpus::{Segmenter, DEFAULT_TERMINATORS};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::objective::TrainConfig;
use crate::parallel::ExecMode;

pub const SEED_ENV: &str = "PLANWRITE_SEED";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Precision {
    F64,
    F32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub data: PathBuf,
    pub checkpoint: PathBuf,
    pub log: PathBuf,
    pub seed: u64,
    pub eval_seed: u64,
    pub word_dim: usize,
    pub attr_dim: usize,
    pub value_dim: usize,
    pub latent_dim: usize,
    pub plan_hidden: usize,
    pub hidden: usize,
    pub mlp_hidden: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub clip: f64,
    pub epochs: usize,
    /// 0 means one epoch's worth of steps.
    pub anneal_steps: usize,
    /// 0 means no cap.
    pub max_steps: usize,
    pub max_plan_steps: usize,
    pub max_sentence_len: usize,
    pub precision: Precision,
    pub exec: ExecMode,
    pub disable_global_z: bool,
    pub disable_local_z: bool,
    /// Tokens that end a sentence when corpora are segmented.
    pub terminators: Vec<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: PathBuf::from("."),
            checkpoint: PathBuf::from("model.ckpt"),
            log: PathBuf::from("train_log.tsv"),
            seed: 1,
            eval_seed: 0,
            word_dim: 300,
            attr_dim: 30,
            value_dim: 100,
            latent_dim: 200,
            plan_hidden: 100,
            hidden: 300,
            mlp_hidden: 300,
            batch_size: 32,
            lr: 0.001,
            clip: 5.0,
            epochs: 10,
            anneal_steps: 0,
            max_steps: 0,
            max_plan_steps: 12,
            max_sentence_len: 50,
            precision: Precision::F64,
            exec: ExecMode::Parallel,
            disable_global_z: false,
            disable_local_z: false,
            terminators: DEFAULT_TERMINATORS.iter().map(|t| t.to_string()).collect(),
        }
    }
}

fn parse_num<V: std::str::FromStr>(key: &str, v: &str) -> Result<V> {
    v.parse().map_err(|_| Error::Config(format!("`{key}`: cannot parse `{v}`")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("`{key}`: expected true or false, got `{v}`"))),
    }
}

impl RunConfig {
    /// Parses config text; `base` anchors relative paths and `env_seed` is
    /// the value of the seed override variable, if set.
    pub fn parse(text: &str, base: &Path, env_seed: Option<&str>) -> Result<Self> {
        let mut c = RunConfig::default();
        let mut seen = std::collections::HashSet::new();
        let mut paths_set = (false, false);
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if !seen.insert(k.to_string()) {
                return Err(Error::Config(format!("line {}: `{k}` set twice", n + 1)));
            }
            let path = |v: &str| base.join(v);
            match k {
                "data" => c.data = path(v),
                "checkpoint" => {
                    c.checkpoint = path(v);
                    paths_set.0 = true;
                }
                "log" => {
                    c.log = path(v);
                    paths_set.1 = true;
                }
                "seed" => c.seed = parse_num(k, v)?,
                "eval_seed" => c.eval_seed = parse_num(k, v)?,
                "word_dim" => c.word_dim = parse_num(k, v)?,
                "attr_dim" => c.attr_dim = parse_num(k, v)?,
                "value_dim" => c.value_dim = parse_num(k, v)?,
                "latent_dim" => c.latent_dim = parse_num(k, v)?,
                "plan_hidden" => c.plan_hidden = parse_num(k, v)?,
                "hidden" => c.hidden = parse_num(k, v)?,
                "mlp_hidden" => c.mlp_hidden = parse_num(k, v)?,
                "batch_size" => c.batch_size = parse_num(k, v)?,
                "lr" => c.lr = parse_num(k, v)?,
                "clip" => c.clip = parse_num(k, v)?,
                "epochs" => c.epochs = parse_num(k, v)?,
                "anneal_steps" => c.anneal_steps = parse_num(k, v)?,
                "max_steps" => c.max_steps = parse_num(k, v)?,
                "max_plan_steps" => c.max_plan_steps = parse_num(k, v)?,
                "max_sentence_len" => c.max_sentence_len = parse_num(k, v)?,
                "precision" => {
                    c.precision = match v {
                        "f64" => Precision::F64,
                        "f32" => Precision::F32,
                        _ => return Err(Error::Config(format!("`precision`: expected f64 or f32, got `{v}`"))),
                    }
                }
                "exec" => {
                    c.exec = match v {
                        "parallel" => ExecMode::Parallel,
                        "sequential" => ExecMode::Sequential,
                        _ => {
                            return Err(Error::Config(format!(
                                "`exec`: expected parallel or sequential, got `{v}`"
                            )))
                        }
                    }
                }
                "disable_global_z" => c.disable_global_z = parse_bool(k, v)?,
                "disable_local_z" => c.disable_local_z = parse_bool(k, v)?,
                "terminators" => c.terminators = v.split_whitespace().map(str::to_string).collect(),
                _ => return Err(Error::Config(format!("line {}: unknown key `{k}`", n + 1))),
            }
        }
        if !paths_set.0 {
            c.checkpoint = c.data.join("model.ckpt");
        }
        if !paths_set.1 {
            c.log = c.data.join("train_log.tsv");
        }
        if let Some(s) = env_seed {
            c.seed = parse_num(SEED_ENV, s.trim())?;
        }
        c.validate()?;
        Ok(c)
    }

    /// Reads a config file, honouring the seed override variable.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let env = std::env::var(SEED_ENV).ok();
        Self::parse(&text, base, env.as_deref())
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("word_dim", self.word_dim),
            ("attr_dim", self.attr_dim),
            ("value_dim", self.value_dim),
            ("latent_dim", self.latent_dim),
            ("plan_hidden", self.plan_hidden),
            ("hidden", self.hidden),
            ("mlp_hidden", self.mlp_hidden),
            ("batch_size", self.batch_size),
            ("epochs", self.epochs),
            ("max_plan_steps", self.max_plan_steps),
            ("max_sentence_len", self.max_sentence_len),
        ];
        for (k, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("`{k}` must be positive")));
            }
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config("`lr` must be a positive number".into()));
        }
        if !(self.clip > 0.0 && self.clip.is_finite()) {
            return Err(Error::Config("`clip` must be a positive number".into()));
        }
        if self.terminators.is_empty() {
            return Err(Error::Config("`terminators` needs at least one token".into()));
        }
        Ok(())
    }

    pub fn segmenter(&self) -> Segmenter {
        Segmenter::new(self.terminators.clone())
    }

    /// Network sizes for the given vocabularies.
    pub fn model_config(&self, text_vocab: usize, attr_vocab: usize, value_vocab: usize, use_title: bool) -> ModelConfig {
        ModelConfig {
            text_vocab,
            attr_vocab,
            value_vocab,
            word_dim: self.word_dim,
            attr_dim: self.attr_dim,
            value_dim: self.value_dim,
            latent_dim: self.latent_dim,
            plan_hidden: self.plan_hidden,
            hidden: self.hidden,
            mlp_hidden: self.mlp_hidden,
            max_plan_steps: self.max_plan_steps,
            max_sentence_len: self.max_sentence_len,
            use_title,
            disable_global_z: self.disable_global_z,
            disable_local_z: self.disable_local_z,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            lr: self.lr,
            clip: self.clip,
            anneal_steps: (self.anneal_steps > 0).then_some(self.anneal_steps),
            epochs: self.epochs,
            max_steps: (self.max_steps > 0).then_some(self.max_steps),
            seed: self.seed,
            eval_seed: self.eval_seed,
            exec: self.exec,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_documented_sizes() {
        let c = RunConfig::parse("data = d\n", Path::new("/x"), None).unwrap();
        assert_eq!((c.word_dim, c.attr_dim, c.value_dim, c.latent_dim), (300, 30, 100, 200));
        assert_eq!((c.plan_hidden, c.hidden, c.batch_size), (100, 300, 32));
        assert_eq!((c.lr, c.clip), (0.001, 5.0));
        assert_eq!(c.data, PathBuf::from("/x/d"));
        assert_eq!(c.checkpoint, PathBuf::from("/x/d/model.ckpt"));
    }

    #[test]
    fn overrides_comments_and_env_seed() {
        let text = "# desk run\ndata = d\nhidden = 64 # smaller\nprecision = f32\ndisable_local_z = true\nseed = 5\n";
        let c = RunConfig::parse(text, Path::new("."), None).unwrap();
        assert_eq!(c.hidden, 64);
        assert_eq!(c.precision, Precision::F32);
        assert!(c.disable_local_z);
        assert_eq!(c.seed, 5);
        assert_eq!(RunConfig::parse(text, Path::new("."), Some("9")).unwrap().seed, 9);
        let t = RunConfig::parse("terminators = . !\n", Path::new("."), None).unwrap();
        assert_eq!(t.terminators, vec![".", "!"]);
        assert!(RunConfig::parse("terminators =\n", Path::new("."), None).is_err());
    }

    #[test]
    fn rejects_bad_input() {
        let base = Path::new(".");
        assert!(RunConfig::parse("colour = red\n", base, None).is_err());
        assert!(RunConfig::parse("hidden = 0\n", base, None).is_err());
        assert!(RunConfig::parse("lr = -1\n", base, None).is_err());
        assert!(RunConfig::parse("hidden = 3\nhidden = 4\n", base, None).is_err());
        assert!(RunConfig::parse("hidden\n", base, None).is_err());
        assert!(RunConfig::parse("precision = f16\n", base, None).is_err());
        assert!(RunConfig::parse("", base, Some("abc")).is_err());
    }
}
