//! Run configuration: a flat `key = value` text file.
//!
//! Blank lines and `#` comments are ignored, every key is optional, and an
//! unknown key is an error. [`RunConfig::canonical`] lists every resolved
//! key in a fixed order; its SHA-256 names the run directory, so comments,
//! ordering and spelled-out defaults never change the hash.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::data::{DataKind, DataSpec};
use crate::diffusion::{DiffusionTrainConfig, LossWeighting, SamplerKind};
use crate::error::{ensure, MgsError, Result};
use crate::guidance::{GuidanceConfig, GuideOn, TargetMode, TargetProvenance};
use crate::manifold::{ManifoldTrainConfig, ObjectiveForm, Optimizer, RelationSource};
use crate::nn::Activation;

/// Sampler step counts offered by the run configuration.
pub const SAMPLER_STEP_CHOICES: [usize; 4] = [20, 50, 100, 1000];

#[derive(Clone, Debug, PartialEq)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpsNetConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub embed_dim: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SamplingConfig {
    pub kind: SamplerKind,
    pub steps: usize,
    /// Generated samples per run.
    pub samples: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalConfig {
    /// Size of the held-out real set drawn from the generator.
    pub real_samples: usize,
    pub projections: usize,
    pub histograms: bool,
    pub distances: bool,
    pub bias: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataSpec,
    /// Optional dataset file (`.csv` or binary) used instead of the generator.
    pub data_file: Option<PathBuf>,
    pub schedule: ScheduleConfig,
    pub eps_net: EpsNetConfig,
    pub diffusion: DiffusionTrainConfig,
    pub manifold: ManifoldTrainConfig,
    pub sampler: SamplingConfig,
    pub guidance: GuidanceConfig,
    /// `None`: the sampler kind's default.
    pub guidance_steps: Option<usize>,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            data: DataSpec::new(DataKind::GmmSkewed),
            data_file: None,
            schedule: ScheduleConfig { steps: 1000, beta_start: 1e-4, beta_end: 0.02 },
            eps_net: EpsNetConfig { hidden: vec![128, 128, 128], activation: Activation::Relu, embed_dim: 16 },
            diffusion: DiffusionTrainConfig::default(),
            manifold: ManifoldTrainConfig::default(),
            sampler: SamplingConfig { kind: SamplerKind::Ancestral, steps: 20, samples: 2048 },
            guidance: GuidanceConfig::default(),
            guidance_steps: None,
            eval: EvalConfig { real_samples: 2000, projections: 128, histograms: true, distances: true, bias: true },
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| MgsError::config(format!("`{key}`: cannot parse `{v}`")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(MgsError::config(format!("`{key}`: expected true/false, got `{v}`"))),
    }
}

fn parse_list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|s| parse_num(key, s.trim())).collect()
}

fn parse_auto<T: std::str::FromStr>(key: &str, v: &str) -> Result<Option<T>> {
    if v == "auto" {
        Ok(None)
    } else {
        parse_num(key, v).map(Some)
    }
}

fn list<T: std::fmt::Debug>(v: &[T]) -> String {
    v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(",")
}

fn auto<T: std::fmt::Debug>(v: &Option<T>) -> String {
    v.as_ref().map_or("auto".to_string(), |x| format!("{x:?}"))
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen = BTreeSet::new();
        let mut pairs = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| MgsError::config(format!("line {}: expected `key = value`", lineno + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            ensure!(seen.insert(k.to_string()), Config, "line {}: duplicate key `{}`", lineno + 1, k);
            pairs.push((lineno + 1, k, v));
        }
        // data.kind resets the generator defaults, so it goes before the data.* overrides
        pairs.sort_by_key(|&(_, k, _)| k != "data.kind");
        for (lineno, k, v) in pairs {
            cfg.set(k, v).map_err(|e| match e {
                MgsError::Config(m) => MgsError::config(format!("line {lineno}: {m}")),
                other => other,
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| MgsError::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
        Self::parse(&text)
    }

    /// Sets one key from its text form.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let (d, m, g) = (&mut self.diffusion, &mut self.manifold, &mut self.guidance);
        match key {
            "seed" => self.seed = parse_num(key, v)?,
            "data.kind" => {
                let kind = DataKind::parse(v)?;
                if kind != self.data.kind {
                    self.data = DataSpec::new(kind);
                }
            }
            "data.samples" => self.data.samples = parse_num(key, v)?,
            "data.modes" => self.data.modes = parse_num(key, v)?,
            "data.weights" => self.data.weights = if v == "auto" { None } else { Some(parse_list(key, v)?) },
            "data.noise" => self.data.noise = parse_num(key, v)?,
            "data.scale" => self.data.scale = parse_num(key, v)?,
            "data.ambient_dim" => self.data.ambient_dim = parse_num(key, v)?,
            "data.subspace_dim" => self.data.subspace_dim = parse_num(key, v)?,
            "data.file" => self.data_file = if v.is_empty() || v == "none" { None } else { Some(PathBuf::from(v)) },
            "schedule.steps" => self.schedule.steps = parse_num(key, v)?,
            "schedule.beta_start" => self.schedule.beta_start = parse_num(key, v)?,
            "schedule.beta_end" => self.schedule.beta_end = parse_num(key, v)?,
            "diffusion.hidden" => self.eps_net.hidden = parse_list(key, v)?,
            "diffusion.activation" => self.eps_net.activation = Activation::parse(v)?,
            "diffusion.embed_dim" => self.eps_net.embed_dim = parse_num(key, v)?,
            "diffusion.steps" => d.steps = parse_num(key, v)?,
            "diffusion.batch_size" => d.batch_size = parse_num(key, v)?,
            "diffusion.lr" => d.lr = parse_num(key, v)?,
            "diffusion.loss_weighting" => d.weighting = LossWeighting::parse(v)?,
            "diffusion.ema_decay" => d.ema_decay = parse_num(key, v)?,
            "diffusion.cosine_decay" => d.cosine_decay = parse_bool(key, v)?,
            "diffusion.log_every" => d.log_every = parse_num(key, v)?,
            "manifold.feature_dim" => m.feature_dim = parse_num(key, v)?,
            "manifold.hidden" => m.f_hidden = parse_list(key, v)?,
            "manifold.activation" => m.f_activation = Activation::parse(v)?,
            "manifold.normalize" => m.normalize = parse_bool(key, v)?,
            "manifold.g_hidden" => m.g_hidden = parse_num(key, v)?,
            "manifold.g_embed_dim" => m.g_embed_dim = parse_num(key, v)?,
            "manifold.tau_g" => m.tau_g = parse_num(key, v)?,
            "manifold.prior_dim" => m.prior_dim = parse_auto(key, v)?,
            "manifold.tau_pre" => m.tau_pre = if v == "median" { None } else { parse_auto(key, v)? },
            "manifold.form" => m.lm.form = ObjectiveForm::parse(v)?,
            "manifold.eps_sq" => m.lm.eps_sq = parse_num(key, v)?,
            "manifold.batch_size" => m.batch_size = parse_num(key, v)?,
            "manifold.g_steps" => m.g_steps = parse_num(key, v)?,
            "manifold.f_steps" => m.f_steps = parse_num(key, v)?,
            "manifold.joint_steps" => m.joint_steps = parse_num(key, v)?,
            "manifold.lr_g" => m.lr_g = parse_num(key, v)?,
            "manifold.lr_f" => m.lr_f = parse_num(key, v)?,
            "manifold.f_optimizer" => m.f_optimizer = Optimizer::parse(v)?,
            "manifold.relation_source" => m.relation_source = RelationSource::parse(v)?,
            "manifold.log_every" => m.log_every = parse_num(key, v)?,
            "sampler.kind" => self.sampler.kind = SamplerKind::parse(v)?,
            "sampler.steps" => self.sampler.steps = parse_num(key, v)?,
            "sampler.samples" => self.sampler.samples = parse_num(key, v)?,
            "guidance.lambda" => g.lambda = parse_num(key, v)?,
            "guidance.steps" => self.guidance_steps = parse_auto(key, v)?,
            "guidance.batch_size" => g.batch_size = parse_num(key, v)?,
            "guidance.skip_eps_jacobian" => g.skip_eps_jacobian = parse_bool(key, v)?,
            "guidance.provenance" => g.provenance = TargetProvenance::parse(v)?,
            "guidance.guide_on" => g.guide_on = GuideOn::parse(v)?,
            "guidance.target" => g.target = TargetMode::parse(v)?,
            "guidance.balance_threshold" => g.balance_threshold = parse_num(key, v)?,
            "guidance.min_cluster_fraction" => g.min_cluster_fraction = parse_num(key, v)?,
            "guidance.balance_pool" => g.balance_pool = parse_num(key, v)?,
            "eval.real_samples" => self.eval.real_samples = parse_num(key, v)?,
            "eval.projections" => self.eval.projections = parse_num(key, v)?,
            "eval.histograms" => self.eval.histograms = parse_bool(key, v)?,
            "eval.distances" => self.eval.distances = parse_bool(key, v)?,
            "eval.bias" => self.eval.bias = parse_bool(key, v)?,
            _ => return Err(MgsError::config(format!("unknown key `{key}`"))),
        }
        self.sync_guidance_steps();
        Ok(())
    }

    fn sync_guidance_steps(&mut self) {
        self.guidance.guidance_steps = self.guidance_steps.unwrap_or_else(|| GuidanceConfig::default_steps(self.sampler.kind));
    }

    /// Every key with its resolved value, in canonical order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let (d, m, g) = (&self.diffusion, &self.manifold, &self.guidance);
        let s = |x: &dyn std::fmt::Debug| format!("{x:?}");
        vec![
            ("seed", self.seed.to_string()),
            ("data.kind", self.data.kind.name().to_string()),
            ("data.samples", self.data.samples.to_string()),
            ("data.modes", self.data.modes.to_string()),
            ("data.weights", self.data.weights.as_ref().map_or("auto".into(), |w| list(w))),
            ("data.noise", s(&self.data.noise)),
            ("data.scale", s(&self.data.scale)),
            ("data.ambient_dim", self.data.ambient_dim.to_string()),
            ("data.subspace_dim", self.data.subspace_dim.to_string()),
            ("data.file", self.data_file.as_ref().map_or("none".into(), |p| p.display().to_string())),
            ("schedule.steps", self.schedule.steps.to_string()),
            ("schedule.beta_start", s(&self.schedule.beta_start)),
            ("schedule.beta_end", s(&self.schedule.beta_end)),
            ("diffusion.hidden", list(&self.eps_net.hidden)),
            ("diffusion.activation", self.eps_net.activation.name().to_string()),
            ("diffusion.embed_dim", self.eps_net.embed_dim.to_string()),
            ("diffusion.steps", d.steps.to_string()),
            ("diffusion.batch_size", d.batch_size.to_string()),
            ("diffusion.lr", s(&d.lr)),
            ("diffusion.loss_weighting", d.weighting.name().to_string()),
            ("diffusion.ema_decay", s(&d.ema_decay)),
            ("diffusion.cosine_decay", d.cosine_decay.to_string()),
            ("diffusion.log_every", d.log_every.to_string()),
            ("manifold.feature_dim", m.feature_dim.to_string()),
            ("manifold.hidden", list(&m.f_hidden)),
            ("manifold.activation", m.f_activation.name().to_string()),
            ("manifold.normalize", m.normalize.to_string()),
            ("manifold.g_hidden", m.g_hidden.to_string()),
            ("manifold.g_embed_dim", m.g_embed_dim.to_string()),
            ("manifold.tau_g", s(&m.tau_g)),
            ("manifold.prior_dim", auto(&m.prior_dim)),
            ("manifold.tau_pre", m.tau_pre.map_or("median".into(), |t| format!("{t:?}"))),
            ("manifold.form", m.lm.form.name().to_string()),
            ("manifold.eps_sq", s(&m.lm.eps_sq)),
            ("manifold.batch_size", m.batch_size.to_string()),
            ("manifold.g_steps", m.g_steps.to_string()),
            ("manifold.f_steps", m.f_steps.to_string()),
            ("manifold.joint_steps", m.joint_steps.to_string()),
            ("manifold.lr_g", s(&m.lr_g)),
            ("manifold.lr_f", s(&m.lr_f)),
            ("manifold.f_optimizer", m.f_optimizer.name().to_string()),
            ("manifold.relation_source", m.relation_source.name()),
            ("manifold.log_every", m.log_every.to_string()),
            ("sampler.kind", self.sampler.kind.name().to_string()),
            ("sampler.steps", self.sampler.steps.to_string()),
            ("sampler.samples", self.sampler.samples.to_string()),
            ("guidance.lambda", s(&g.lambda)),
            ("guidance.steps", auto(&self.guidance_steps)),
            ("guidance.batch_size", g.batch_size.to_string()),
            ("guidance.skip_eps_jacobian", g.skip_eps_jacobian.to_string()),
            ("guidance.provenance", g.provenance.name().to_string()),
            ("guidance.guide_on", g.guide_on.name().to_string()),
            ("guidance.target", g.target.name().to_string()),
            ("guidance.balance_threshold", s(&g.balance_threshold)),
            ("guidance.min_cluster_fraction", s(&g.min_cluster_fraction)),
            ("guidance.balance_pool", g.balance_pool.to_string()),
            ("eval.real_samples", self.eval.real_samples.to_string()),
            ("eval.projections", self.eval.projections.to_string()),
            ("eval.histograms", self.eval.histograms.to_string()),
            ("eval.distances", self.eval.distances.to_string()),
            ("eval.bias", self.eval.bias.to_string()),
        ]
    }

    /// The resolved configuration as parseable text, one key per line.
    pub fn canonical(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// First 16 hex digits of the SHA-256 of [`Self::canonical`].
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.schedule.steps >= 2, Config, "schedule.steps must be at least 2");
        ensure!(
            0.0 < self.schedule.beta_start && self.schedule.beta_start <= self.schedule.beta_end && self.schedule.beta_end < 1.0,
            Config,
            "need 0 < schedule.beta_start <= schedule.beta_end < 1"
        );
        ensure!(!self.eps_net.hidden.is_empty(), Config, "diffusion.hidden needs at least one layer");
        ensure!(self.eps_net.embed_dim >= 2 && self.eps_net.embed_dim.is_multiple_of(2), Config, "diffusion.embed_dim must be even and >= 2");
        ensure!(
            SAMPLER_STEP_CHOICES.contains(&self.sampler.steps) || self.sampler.steps == self.schedule.steps,
            Config,
            "sampler.steps must be one of {:?} (or schedule.steps), got {}",
            SAMPLER_STEP_CHOICES,
            self.sampler.steps
        );
        ensure!(
            self.sampler.steps <= self.schedule.steps,
            Config,
            "sampler.steps {} exceeds schedule.steps {}",
            self.sampler.steps,
            self.schedule.steps
        );
        ensure!(self.sampler.samples >= 1, Config, "sampler.samples must be positive");
        self.guidance.validate(self.sampler.steps)?;
        ensure!(self.eval.real_samples >= 2, Config, "eval.real_samples must be at least 2");
        ensure!(self.eval.projections >= 1, Config, "eval.projections must be positive");
        ensure!(self.manifold.lm.eps_sq > 0.0, Config, "manifold.eps_sq must be positive");
        if let Some(w) = &self.data.weights {
            ensure!(w.len() == self.data.modes, Config, "data.weights has {} entries for {} modes", w.len(), self.data.modes);
            let s: f64 = w.iter().sum();
            ensure!((s - 1.0).abs() <= 1e-9, Config, "data.weights sum to {}, not 1", s);
        }
        if let Some(p) = &self.data_file {
            ensure!(p.exists(), Config, "data.file `{}` does not exist", p.display());
        }
        Ok(())
    }
}
