//! Experiment configuration: flat `key = value` text with dotted keys.
//!
//! Parsing is strict: unknown keys, duplicate keys, and keys that do not
//! apply to the configured task or methods are hard errors carrying the
//! offending line number. A silently ignored key in a sweep config would
//! invalidate an A/B comparison without anyone noticing.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::anchor::AnchorPrecision;
use crate::error::{Error, Result};
use crate::optimizer::LrSchedule;
use crate::param::LayerRole;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum TaskKind {
    QuadraticHetero,
    BlobsLogreg,
    BlobsMlp,
    TokensAttention,
}

impl TaskKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::QuadraticHetero => "quadratic_hetero",
            TaskKind::BlobsLogreg => "blobs_logreg",
            TaskKind::BlobsMlp => "blobs_mlp",
            TaskKind::TokensAttention => "tokens_attention",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "quadratic_hetero" => Ok(TaskKind::QuadraticHetero),
            "blobs_logreg" => Ok(TaskKind::BlobsLogreg),
            "blobs_mlp" => Ok(TaskKind::BlobsMlp),
            "tokens_attention" => Ok(TaskKind::TokensAttention),
            _ => Err(Error::config(format!("unknown task `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum Method {
    ZoSgd,
    Dizo,
    FoRef,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::ZoSgd => "zo_sgd",
            Method::Dizo => "dizo",
            Method::FoRef => "fo_ref",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "zo_sgd" => Ok(Method::ZoSgd),
            "dizo" => Ok(Method::Dizo),
            "fo_ref" => Ok(Method::FoRef),
            _ => Err(Error::config(format!("unknown method `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub enum AnchorKind {
    Init,
    Warmstart(PathBuf),
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainSettings {
    pub steps: usize,
    pub lr: f64,
    pub lr_schedule: LrSchedule,
    pub eps: f64,
    pub q: usize,
    pub batch_size: usize,
    pub eval_every: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct ProjSettings {
    pub tau: f64,
    pub kappa: usize,
    pub eps: f64,
    pub inner_iters: usize,
    pub inner_lr: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct AnchorSettings {
    pub kind: AnchorKind,
    pub precision: AnchorPrecision,
    /// None = the task's default projection roles.
    pub roles: Option<BTreeSet<LayerRole>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DataSettings {
    pub n_batches: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TaskShape {
    pub seed: u64,
    pub dim: usize,
    pub features: usize,
    pub classes: usize,
    pub hidden: usize,
    pub separation: f64,
    pub d_model: usize,
    pub seq_len: usize,
    pub vocab: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct VarsymSettings {
    pub eps: f64,
    pub samples: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RateSettings {
    pub budgets: Vec<usize>,
    pub seeds: Vec<u64>,
    /// η for budget T is lr_scale/√T.
    pub lr_scale: f64,
    /// Per-batch center jitter for the quadratic task: the rate of the
    /// stochastic setting needs a gradient-noise floor, which a batchless
    /// quadratic does not have.
    pub jitter: f64,
    /// Number of tag batches for the jittered quadratic.
    pub batches: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentConfig {
    pub task: TaskKind,
    pub methods: Vec<Method>,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    /// Loss threshold for iterations-to-threshold, as a fraction of the
    /// initial loss.
    pub threshold: f64,
    pub train: TrainSettings,
    pub proj: Option<ProjSettings>,
    pub anchor: AnchorSettings,
    pub data: DataSettings,
    pub shape: TaskShape,
    pub varsym: VarsymSettings,
    pub rate: RateSettings,
}

struct RawConfig {
    entries: BTreeMap<String, (usize, String)>,
}

impl RawConfig {
    fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (idx, raw_line) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = match raw_line.find('#') {
                Some(pos) => &raw_line[..pos],
                None => raw_line,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::config(format!("line {line_no}: expected `key = value`"))
            })?;
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if key.is_empty() {
                return Err(Error::config(format!("line {line_no}: empty key")));
            }
            if let Some((prev, _)) = entries.insert(key.clone(), (line_no, value)) {
                return Err(Error::config(format!(
                    "line {line_no}: duplicate key `{key}` (first set on line {prev})"
                )));
            }
        }
        Ok(Self { entries })
    }

    fn take(&mut self, key: &str) -> Option<(usize, String)> {
        self.entries.remove(key)
    }

    fn take_parsed<T>(
        &mut self,
        key: &str,
        what: &str,
        parse: impl Fn(&str) -> Result<T>,
    ) -> Result<Option<T>> {
        match self.take(key) {
            None => Ok(None),
            Some((line, value)) => parse(&value)
                .map(Some)
                .map_err(|e| Error::config(format!("line {line}: key `{key}`: {what}: {e}"))),
        }
    }

    fn reject(&mut self, key: &str, why: &str) -> Result<()> {
        if let Some((line, _)) = self.take(key) {
            return Err(Error::config(format!(
                "line {line}: key `{key}` is not allowed here: {why}"
            )));
        }
        Ok(())
    }

    fn finish(self) -> Result<()> {
        if let Some((key, (line, _))) = self.entries.into_iter().next() {
            return Err(Error::config(format!("line {line}: unknown key `{key}`")));
        }
        Ok(())
    }
}

fn parse_f64(s: &str) -> Result<f64> {
    s.parse()
        .map_err(|_| Error::config(format!("`{s}` is not a number")))
}

fn parse_usize(s: &str) -> Result<usize> {
    s.parse()
        .map_err(|_| Error::config(format!("`{s}` is not a non-negative integer")))
}

fn parse_u64(s: &str) -> Result<u64> {
    s.parse()
        .map_err(|_| Error::config(format!("`{s}` is not a non-negative integer")))
}

fn parse_list<T>(s: &str, parse: impl Fn(&str) -> Result<T>) -> Result<Vec<T>> {
    let items: Vec<&str> = s.split(',').map(str::trim).filter(|p| !p.is_empty()).collect();
    if items.is_empty() {
        return Err(Error::config("list must not be empty"));
    }
    items.into_iter().map(parse).collect()
}

impl ExperimentConfig {
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut raw = RawConfig::parse(text)?;

        let require = |field: Option<(usize, String)>, key: &str| {
            field.ok_or_else(|| Error::config(format!("missing required field `{key}`")))
        };

        let (task_line, task_str) = require(raw.take("task"), "task")?;
        let task = TaskKind::parse(&task_str)
            .map_err(|e| Error::config(format!("line {task_line}: {e}")))?;

        let (m_line, methods_str) = require(raw.take("method"), "method")?;
        let methods: Vec<Method> = parse_list(&methods_str, Method::parse)
            .map_err(|e| Error::config(format!("line {m_line}: {e}")))?;
        {
            let unique: BTreeSet<Method> = methods.iter().cloned().collect();
            if unique.len() != methods.len() {
                return Err(Error::config(format!("line {m_line}: duplicate methods")));
            }
        }

        let (s_line, seeds_str) = require(raw.take("seeds"), "seeds")?;
        let seeds: Vec<u64> = parse_list(&seeds_str, parse_u64)
            .map_err(|e| Error::config(format!("line {s_line}: {e}")))?;
        {
            let unique: BTreeSet<u64> = seeds.iter().cloned().collect();
            if unique.len() != seeds.len() {
                return Err(Error::config(format!("line {s_line}: duplicate seeds")));
            }
        }

        let (_, out_str) = require(raw.take("output_dir"), "output_dir")?;
        let output_dir = PathBuf::from(out_str);

        let threshold = raw
            .take_parsed("threshold", "threshold", parse_f64)?
            .unwrap_or(0.1);
        if threshold.is_nan() || threshold <= 0.0 || threshold > 1.0 {
            return Err(Error::config("threshold must lie in (0, 1]"));
        }

        let steps = require(
            raw.take_parsed("train.steps", "steps", parse_usize)?.map(|v| (0, v.to_string())),
            "train.steps",
        )
        .map(|(_, v)| v.parse::<usize>().unwrap())?;
        let lr = require(
            raw.take_parsed("train.lr", "lr", parse_f64)?.map(|v| (0, v.to_string())),
            "train.lr",
        )
        .map(|(_, v)| v.parse::<f64>().unwrap())?;
        let train = TrainSettings {
            steps,
            lr,
            lr_schedule: raw
                .take_parsed("train.lr_schedule", "schedule", LrSchedule::parse)?
                .unwrap_or(LrSchedule::Constant),
            eps: raw.take_parsed("train.eps", "eps", parse_f64)?.unwrap_or(1e-3),
            q: raw.take_parsed("train.q", "q", parse_usize)?.unwrap_or(1),
            batch_size: raw
                .take_parsed("train.batch_size", "batch size", parse_usize)?
                .unwrap_or(32),
            eval_every: raw
                .take_parsed("train.eval_every", "cadence", parse_usize)?
                .unwrap_or(20),
        };

        let wants_dizo = methods.contains(&Method::Dizo);
        let proj = if wants_dizo {
            let tau = raw
                .take_parsed("proj.tau", "tau", parse_f64)?
                .ok_or_else(|| Error::config("missing required field `proj.tau` (dizo)"))?;
            let kappa = raw
                .take_parsed("proj.kappa", "kappa", parse_usize)?
                .ok_or_else(|| Error::config("missing required field `proj.kappa` (dizo)"))?;
            Some(ProjSettings {
                tau,
                kappa,
                eps: raw.take_parsed("proj.eps", "eps", parse_f64)?.unwrap_or(0.1),
                inner_iters: raw
                    .take_parsed("proj.inner_iters", "count", parse_usize)?
                    .unwrap_or(10),
                inner_lr: raw
                    .take_parsed("proj.inner_lr", "lr", parse_f64)?
                    .unwrap_or(1e-2),
            })
        } else {
            for key in [
                "proj.tau",
                "proj.kappa",
                "proj.eps",
                "proj.inner_iters",
                "proj.inner_lr",
            ] {
                raw.reject(key, "projection settings require the dizo method")?;
            }
            None
        };

        let anchor_kind = raw
            .take_parsed("anchor.kind", "anchor", |s| {
                if s == "init" {
                    Ok(AnchorKind::Init)
                } else if let Some(path) = s.strip_prefix("warmstart:") {
                    if path.is_empty() {
                        Err(Error::config("warmstart needs a path"))
                    } else {
                        Ok(AnchorKind::Warmstart(PathBuf::from(path)))
                    }
                } else {
                    Err(Error::config(format!(
                        "`{s}` is neither `init` nor `warmstart:<path>`"
                    )))
                }
            })?
            .unwrap_or(AnchorKind::Init);
        let anchor = if wants_dizo {
            AnchorSettings {
                kind: anchor_kind,
                precision: raw
                    .take_parsed("anchor.precision", "precision", AnchorPrecision::parse)?
                    .unwrap_or(AnchorPrecision::F64),
                roles: raw
                    .take_parsed("anchor.roles", "roles", |s| {
                        parse_list(s, LayerRole::parse).map(|v| v.into_iter().collect())
                    })?,
            }
        } else {
            raw.reject("anchor.precision", "anchor precision requires the dizo method")?;
            raw.reject("anchor.roles", "anchor roles require the dizo method")?;
            AnchorSettings {
                kind: anchor_kind,
                precision: AnchorPrecision::F64,
                roles: None,
            }
        };

        let data = DataSettings {
            n_batches: raw
                .take_parsed("data.n_batches", "count", parse_usize)?
                .unwrap_or(50),
            seed: raw.take_parsed("data.seed", "seed", parse_u64)?.unwrap_or(7),
        };
        if matches!(task, TaskKind::QuadraticHetero) {
            raw.reject("data.n_batches", "the quadratic task takes no data")?;
            raw.reject("data.seed", "the quadratic task takes no data")?;
        }

        let allowed_task_keys: &[&str] = match task {
            TaskKind::QuadraticHetero => &["task.seed", "task.dim"],
            TaskKind::BlobsLogreg => &[
                "task.seed",
                "task.features",
                "task.classes",
                "task.separation",
            ],
            TaskKind::BlobsMlp => &[
                "task.seed",
                "task.features",
                "task.classes",
                "task.hidden",
                "task.separation",
            ],
            TaskKind::TokensAttention => &[
                "task.seed",
                "task.d_model",
                "task.classes",
                "task.seq_len",
                "task.vocab",
            ],
        };
        for key in [
            "task.seed",
            "task.dim",
            "task.features",
            "task.classes",
            "task.hidden",
            "task.separation",
            "task.d_model",
            "task.seq_len",
            "task.vocab",
        ] {
            if !allowed_task_keys.contains(&key) {
                raw.reject(key, &format!("not a parameter of task `{}`", task.as_str()))?;
            }
        }
        let shape = TaskShape {
            seed: raw.take_parsed("task.seed", "seed", parse_u64)?.unwrap_or(1000),
            dim: raw.take_parsed("task.dim", "dim", parse_usize)?.unwrap_or(16),
            features: raw
                .take_parsed("task.features", "count", parse_usize)?
                .unwrap_or(2),
            classes: raw
                .take_parsed("task.classes", "count", parse_usize)?
                .unwrap_or(3),
            hidden: raw
                .take_parsed("task.hidden", "count", parse_usize)?
                .unwrap_or(16),
            separation: raw
                .take_parsed("task.separation", "distance", parse_f64)?
                .unwrap_or(4.0),
            d_model: raw
                .take_parsed("task.d_model", "dim", parse_usize)?
                .unwrap_or(16),
            seq_len: raw
                .take_parsed("task.seq_len", "length", parse_usize)?
                .unwrap_or(8),
            vocab: raw.take_parsed("task.vocab", "size", parse_usize)?.unwrap_or(16),
        };

        let varsym = VarsymSettings {
            eps: raw.take_parsed("varsym.eps", "eps", parse_f64)?.unwrap_or(1e-3),
            samples: raw
                .take_parsed("varsym.samples", "count", parse_usize)?
                .unwrap_or(10_000),
            seed: raw.take_parsed("varsym.seed", "seed", parse_u64)?.unwrap_or(5),
        };
        let rate = RateSettings {
            budgets: raw
                .take_parsed("rate.budgets", "budgets", |s| parse_list(s, parse_usize))?
                .unwrap_or_else(|| vec![500, 1000, 2000, 4000, 8000]),
            seeds: raw
                .take_parsed("rate.seeds", "seeds", |s| parse_list(s, parse_u64))?
                .unwrap_or_else(|| vec![1, 2, 3]),
            lr_scale: raw
                .take_parsed("rate.lr_scale", "scale", parse_f64)?
                .unwrap_or(0.35),
            jitter: raw
                .take_parsed("rate.jitter", "std", parse_f64)?
                .unwrap_or(1.0),
            batches: raw
                .take_parsed("rate.batches", "count", parse_usize)?
                .unwrap_or(64),
        };

        raw.finish()?;

        let config = ExperimentConfig {
            task,
            methods,
            seeds,
            output_dir,
            threshold,
            train,
            proj,
            anchor,
            data,
            shape,
            varsym,
            rate,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        Self::parse_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::config("at least one seed is required"));
        }
        let probe = crate::optimizer::TrainConfig {
            steps: self.train.steps,
            lr: self.train.lr,
            lr_schedule: self.train.lr_schedule,
            eps: self.train.eps,
            q: self.train.q,
            batch_size: self.train.batch_size,
            seed: 0,
            eval_every: self.train.eval_every,
        };
        probe.validate()?;
        if let Some(proj) = &self.proj {
            if !(0.0..1.0).contains(&proj.tau) || proj.tau == 0.0 {
                return Err(Error::config("proj.tau must lie in (0, 1)"));
            }
            if proj.kappa == 0 {
                return Err(Error::config("proj.kappa must be ≥ 1"));
            }
            if proj.eps <= 0.0 || proj.eps.is_nan() {
                return Err(Error::config("proj.eps must be positive"));
            }
            if proj.inner_lr < 0.0 || !proj.inner_lr.is_finite() {
                return Err(Error::config("proj.inner_lr must be finite and ≥ 0"));
            }
        }
        match self.task {
            TaskKind::BlobsLogreg | TaskKind::BlobsMlp => {
                if self.shape.features < 2 {
                    return Err(Error::config("task.features must be ≥ 2 for blob tasks"));
                }
                if self.shape.classes < 2 {
                    return Err(Error::config("task.classes must be ≥ 2"));
                }
            }
            TaskKind::TokensAttention => {
                if self.shape.d_model < 2 || self.shape.classes < 2 || self.shape.vocab < 2 {
                    return Err(Error::config(
                        "task.d_model, task.classes, task.vocab must be ≥ 2",
                    ));
                }
                if self.shape.seq_len == 0 {
                    return Err(Error::config("task.seq_len must be ≥ 1"));
                }
            }
            TaskKind::QuadraticHetero => {
                if self.shape.dim == 0 {
                    return Err(Error::config("task.dim must be ≥ 1"));
                }
            }
        }
        if self.data.n_batches == 0 {
            return Err(Error::config("data.n_batches must be ≥ 1"));
        }
        Ok(())
    }

    /// Default projection roles per task: attention anchors Q and V, the
    /// classifiers anchor their dense weight matrices, the quadratic
    /// anchors every block.
    pub fn default_anchor_roles(task: TaskKind) -> BTreeSet<LayerRole> {
        match task {
            TaskKind::TokensAttention => [LayerRole::AttnQ, LayerRole::AttnV].into(),
            TaskKind::BlobsLogreg | TaskKind::BlobsMlp => [LayerRole::Dense].into(),
            TaskKind::QuadraticHetero => [LayerRole::Other].into(),
        }
    }

    pub fn anchor_roles(&self) -> BTreeSet<LayerRole> {
        self.anchor
            .roles
            .clone()
            .unwrap_or_else(|| Self::default_anchor_roles(self.task))
    }
}
