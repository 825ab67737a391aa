use log::debug;

use crate::error::{ensure, MgsError, Result};
use crate::linalg::Matrix;
use crate::manifold::encoder::{fit_prior_encoder, PriorEncoder};
use crate::manifold::model::{relation_loss, EmbedderF, ManifoldModel, RelationNetG};
use crate::manifold::objective::{lm_objective, LmConfig, Membership};
use crate::manifold::relation::{kernel_relations, kmeans, median_temperature, RelationMatrix};
use crate::nn::{sgd_step, Activation, AdamState, ParamGrads};
use crate::rng::{self, streams, Rng};

/// Where the relations that supervise `g` (and feed `F`'s memberships) come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RelationSource {
    /// Gaussian kernel on prior-encoder features, learned by `g`.
    Learnable,
    /// Hard k-means partition of the prior features.
    KMeans(usize),
}

impl RelationSource {
    pub fn parse(s: &str) -> Result<Self> {
        if s == "learnable" {
            return Ok(RelationSource::Learnable);
        }
        if let Some(k) = s.strip_prefix("kmeans-") {
            let k: usize = k.parse().map_err(|_| MgsError::config(format!("bad k-means cluster count in `{s}`")))?;
            ensure!(k >= 1, Config, "k-means cluster count must be positive");
            return Ok(RelationSource::KMeans(k));
        }
        Err(MgsError::config(format!("unknown relation source `{s}` (learnable|kmeans-<k>)")))
    }

    pub fn name(self) -> String {
        match self {
            RelationSource::Learnable => "learnable".to_string(),
            RelationSource::KMeans(k) => format!("kmeans-{k}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Optimizer {
    Sgd,
    Adam,
}

impl Optimizer {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(Optimizer::Sgd),
            "adam" => Ok(Optimizer::Adam),
            other => Err(MgsError::config(format!("unknown optimizer `{other}` (sgd|adam)"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Optimizer::Sgd => "sgd",
            Optimizer::Adam => "adam",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifoldTrainConfig {
    pub feature_dim: usize,
    pub f_hidden: Vec<usize>,
    pub f_activation: Activation,
    pub normalize: bool,
    pub g_hidden: usize,
    pub g_embed_dim: usize,
    pub tau_g: f64,
    /// Prior-encoder dimension; `None` keeps every direction up to 16.
    pub prior_dim: Option<usize>,
    /// Prior kernel temperature; `None` uses the median heuristic.
    pub tau_pre: Option<f64>,
    pub lm: LmConfig,
    /// Samples per step; values at least the dataset size train full-batch.
    pub batch_size: usize,
    pub g_steps: usize,
    pub f_steps: usize,
    pub joint_steps: usize,
    pub lr_g: f64,
    pub lr_f: f64,
    pub f_optimizer: Optimizer,
    pub relation_source: RelationSource,
    pub log_every: usize,
}

impl Default for ManifoldTrainConfig {
    fn default() -> Self {
        ManifoldTrainConfig {
            feature_dim: 8,
            f_hidden: vec![32, 32],
            f_activation: Activation::Tanh,
            normalize: true,
            g_hidden: 32,
            g_embed_dim: 8,
            tau_g: 1.0,
            prior_dim: None,
            tau_pre: None,
            lm: LmConfig::default(),
            batch_size: 64,
            g_steps: 400,
            f_steps: 400,
            joint_steps: 400,
            lr_g: 2e-3,
            lr_f: 0.05,
            f_optimizer: Optimizer::Sgd,
            relation_source: RelationSource::Learnable,
            log_every: 20,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ManifoldLogEntry {
    /// 1: relation net alone, 2: embedder with frozen relations, 3: alternating.
    pub stage: u8,
    pub step: usize,
    pub relation_loss: f64,
    pub objective: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ManifoldTrainLog {
    pub entries: Vec<ManifoldLogEntry>,
    pub tau_pre: f64,
    pub prior_dim: usize,
}

impl ManifoldTrainLog {
    pub fn stage(&self, stage: u8) -> impl Iterator<Item = &ManifoldLogEntry> {
        self.entries.iter().filter(move |e| e.stage == stage)
    }
}

/// Supervision the trainer draws batches from.
enum Supervision {
    Kernel { features: Matrix, tau: f64 },
    Labels(Vec<usize>),
}

impl Supervision {
    fn relations(&self, idx: &[usize]) -> Result<RelationMatrix> {
        match self {
            Supervision::Kernel { features, tau } => {
                RelationMatrix::from_matrix(kernel_relations(&features.select_rows(idx), *tau)?)
            }
            Supervision::Labels(l) => Ok(RelationMatrix::from_labels(&idx.iter().map(|&i| l[i]).collect::<Vec<_>>())),
        }
    }
}

struct FStepper {
    opt: Optimizer,
    lr: f64,
    adam: AdamState,
}

impl FStepper {
    fn new(opt: Optimizer, lr: f64, n: usize) -> Self {
        FStepper { opt, lr, adam: AdamState::new(n, lr) }
    }

    /// Gradient ascent on the objective.
    fn ascend(&mut self, f: &mut EmbedderF, grads: &ParamGrads) -> Result<()> {
        let mut p = f.net.params();
        let neg: Vec<f64> = grads.flatten().iter().map(|g| -g).collect();
        match self.opt {
            Optimizer::Sgd => sgd_step(self.lr, &mut p, &neg)?,
            Optimizer::Adam => self.adam.step(&mut p, &neg)?,
        }
        f.net.set_params(&p)
    }
}

fn draw_batch(rng: &mut Rng, n: usize, batch: usize) -> Vec<usize> {
    if batch >= n {
        (0..n).collect()
    } else {
        rng::choose_distinct(rng, n, batch)
    }
}

fn check(v: f64, stage: u8, step: usize, what: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(MgsError::numeric(format!("manifold training diverged: non-finite {what} at stage {stage}, step {step}")))
    }
}

/// One ascent step of `F` on the objective with the given memberships.
fn f_step(f: &mut EmbedderF, x: &Matrix, c: &Membership, lm: &LmConfig, stepper: &mut FStepper) -> Result<f64> {
    let (z, cache) = f.forward(x)?;
    let (value, dz) = lm_objective(&z, c, lm)?;
    let (grads, _) = f.backward(cache, &dz)?;
    stepper.ascend(f, &grads)?;
    Ok(value)
}

fn g_step(g: &mut RelationNetG, z: &Matrix, target: &RelationMatrix, adam: &mut AdamState) -> Result<f64> {
    let (loss, grads, _) = relation_loss(g, z, target)?;
    let mut p = g.net.params();
    adam.step(&mut p, &grads.flatten())?;
    g.net.set_params(&p)?;
    Ok(loss)
}

fn memberships(g: &RelationNetG, z: &Matrix, sup: &Supervision, idx: &[usize]) -> Result<Membership> {
    match sup {
        Supervision::Labels(l) => Ok(Membership::from_labels(&idx.iter().map(|&i| l[i]).collect::<Vec<_>>())),
        Supervision::Kernel { .. } => Membership::from_relation_rows(&g.relations(z)?),
    }
}

/// Trains `g` against prior relations, then `F` against `g`'s relations, then
/// both in alternation (`F` ascends the objective, `g` descends the relation loss).
pub fn train_manifold(data: &Matrix, cfg: &ManifoldTrainConfig, seed: u64) -> Result<(ManifoldModel, ManifoldTrainLog, PriorEncoder)> {
    let n = data.rows();
    ensure!(n >= 2, Config, "manifold training needs at least 2 samples");
    ensure!(cfg.batch_size >= 2, Config, "manifold batch size must be at least 2");
    ensure!(cfg.lr_f > 0.0 && cfg.lr_g > 0.0, Config, "manifold learning rates must be positive");
    let mut init = rng::stream(seed, streams::MANIFOLD_INIT);
    let mut rng = rng::stream(seed, streams::MANIFOLD_TRAIN);

    let p = cfg.prior_dim.unwrap_or(data.cols().min(16)).min(data.cols());
    let encoder = fit_prior_encoder(data, p)?;
    let prior = encoder.encode(data)?;
    let tau_pre = match cfg.tau_pre {
        Some(t) => {
            ensure!(t > 0.0, Config, "prior temperature must be positive");
            t
        }
        None => median_temperature(&subsample(&prior, 2000, &mut rng)),
    };
    let sup = match cfg.relation_source {
        RelationSource::Learnable => Supervision::Kernel { features: prior, tau: tau_pre },
        RelationSource::KMeans(k) => Supervision::Labels(kmeans(&prior, k.min(n), &mut rng)?.labels),
    };

    let mut f = EmbedderF::init(data.cols(), &cfg.f_hidden, cfg.feature_dim, cfg.f_activation, cfg.normalize, &mut init)?;
    let mut g = RelationNetG::init(cfg.feature_dim, cfg.g_hidden, cfg.g_embed_dim, cfg.tau_g, &mut init)?;
    let mut adam_g = AdamState::new(g.net.num_params(), cfg.lr_g);
    let mut fstep = FStepper::new(cfg.f_optimizer, cfg.lr_f, f.net.num_params());
    let mut log = ManifoldTrainLog { entries: Vec::new(), tau_pre, prior_dim: encoder.dim() };
    let every = cfg.log_every.max(1);
    // fixed probe batch for comparable logged values
    let probe = draw_batch(&mut rng, n, cfg.batch_size);
    let probe_x = data.select_rows(&probe);
    let probe_r = sup.relations(&probe)?;
    let record = |stage: u8, step: usize, f: &EmbedderF, g: &RelationNetG, log: &mut ManifoldTrainLog| -> Result<()> {
        let z = f.embed(&probe_x)?;
        let l_con = check(relation_loss(g, &z, &probe_r)?.0, stage, step, "relation loss")?;
        let c = memberships(g, &z, &sup, &probe)?;
        let l_m = check(lm_objective(&z, &c, &cfg.lm)?.0, stage, step, "objective")?;
        debug!("manifold stage {stage} step {step}: relation {l_con:.5} objective {l_m:.5}");
        log.entries.push(ManifoldLogEntry { stage, step, relation_loss: l_con, objective: l_m });
        Ok(())
    };

    record(1, 0, &f, &g, &mut log)?;
    for step in 1..=cfg.g_steps {
        let idx = draw_batch(&mut rng, n, cfg.batch_size);
        let z = f.embed(&data.select_rows(&idx))?;
        check(g_step(&mut g, &z, &sup.relations(&idx)?, &mut adam_g)?, 1, step, "relation loss")?;
        if step % every == 0 || step == cfg.g_steps {
            record(1, step, &f, &g, &mut log)?;
        }
    }

    record(2, 0, &f, &g, &mut log)?;
    for step in 1..=cfg.f_steps {
        let idx = draw_batch(&mut rng, n, cfg.batch_size);
        let x = data.select_rows(&idx);
        let c = memberships(&g, &f.embed(&x)?, &sup, &idx)?;
        check(f_step(&mut f, &x, &c, &cfg.lm, &mut fstep)?, 2, step, "objective")?;
        if step % every == 0 || step == cfg.f_steps {
            record(2, step, &f, &g, &mut log)?;
        }
    }

    record(3, 0, &f, &g, &mut log)?;
    for step in 1..=cfg.joint_steps {
        let idx = draw_batch(&mut rng, n, cfg.batch_size);
        let x = data.select_rows(&idx);
        let c = memberships(&g, &f.embed(&x)?, &sup, &idx)?;
        check(f_step(&mut f, &x, &c, &cfg.lm, &mut fstep)?, 3, step, "objective")?;
        let z = f.embed(&x)?;
        check(g_step(&mut g, &z, &sup.relations(&idx)?, &mut adam_g)?, 3, step, "relation loss")?;
        if step % every == 0 || step == cfg.joint_steps {
            record(3, step, &f, &g, &mut log)?;
        }
    }
    Ok((ManifoldModel::new(f, g)?, log, encoder))
}

/// Trains an embedder alone against known memberships (full batch when
/// `batch_size >= n`). Returns the objective after every step.
pub fn train_embedder_with_labels(
    f: &mut EmbedderF,
    data: &Matrix,
    labels: &[usize],
    lm: &LmConfig,
    steps: usize,
    lr: f64,
    optimizer: Optimizer,
    batch_size: usize,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    ensure!(labels.len() == data.rows(), Contract, "{} labels for {} samples", labels.len(), data.rows());
    let mut stepper = FStepper::new(optimizer, lr, f.net.num_params());
    let mut trace = Vec::with_capacity(steps);
    for step in 1..=steps {
        let idx = draw_batch(rng, data.rows(), batch_size);
        let c = Membership::from_labels(&idx.iter().map(|&i| labels[i]).collect::<Vec<_>>());
        trace.push(check(f_step(f, &data.select_rows(&idx), &c, lm, &mut stepper)?, 2, step, "objective")?);
    }
    Ok(trace)
}

fn subsample(m: &Matrix, cap: usize, rng: &mut Rng) -> Matrix {
    if m.rows() <= cap {
        m.clone()
    } else {
        let mut idx = rng::choose_distinct(rng, m.rows(), cap);
        idx.sort_unstable();
        m.select_rows(&idx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn two_blobs(n: usize, seed: u64) -> Matrix {
        let mut rng = seeded(seed);
        let mut m = rng::normal_matrix(&mut rng, n, 2).scaled(0.2);
        for r in 0..n {
            m[(r, 0)] += if r % 2 == 0 { -2.0 } else { 2.0 };
        }
        m
    }

    fn small_cfg() -> ManifoldTrainConfig {
        ManifoldTrainConfig { g_steps: 60, f_steps: 40, joint_steps: 20, batch_size: 24, log_every: 10, ..Default::default() }
    }

    #[test]
    fn relation_source_names_round_trip() {
        for s in ["learnable", "kmeans-10", "kmeans-20"] {
            assert_eq!(RelationSource::parse(s).unwrap().name(), s);
        }
        assert!(RelationSource::parse("kmeans-x").is_err());
    }

    #[test]
    fn same_seed_gives_identical_models() {
        let data = two_blobs(80, 1);
        let (a, la, _) = train_manifold(&data, &small_cfg(), 7).unwrap();
        let (b, lb, _) = train_manifold(&data, &small_cfg(), 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(la, lb);
    }

    #[test]
    fn relation_loss_falls_in_first_stage() {
        let data = two_blobs(80, 2);
        let (_, log, _) = train_manifold(&data, &small_cfg(), 3).unwrap();
        let s1: Vec<f64> = log.stage(1).map(|e| e.relation_loss).collect();
        assert!(s1.last().unwrap() < &s1[0], "{s1:?}");
    }

    #[test]
    fn kmeans_source_trains() {
        let data = two_blobs(60, 4);
        let cfg = ManifoldTrainConfig { relation_source: RelationSource::KMeans(2), ..small_cfg() };
        let (m, _, _) = train_manifold(&data, &cfg, 5).unwrap();
        let r = m.relations(&data.select_rows(&[0, 2, 1])).unwrap();
        assert!(r[(0, 1)] > r[(0, 2)]);
    }
}
