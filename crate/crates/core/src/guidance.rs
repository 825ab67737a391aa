//! Manifold guidance: a fixed relational target `M` and the correction
//! `x_{t-1} -= λ ∇_{x_t} ‖M - H(x̂₀(x_t))‖²_F` applied at the first `G`
//! denoising steps.

use log::{debug, warn};
use serde::Serialize;

use crate::diffusion::{sample, tweedie_x0_with, NoisePredictor, NoiseSchedule, SamplerConfig, StepHook};
use crate::error::{ensure, MgsError, Result};
use crate::linalg::{sq_dist, Matrix};
use crate::manifold::{kernel_relations, ManifoldModel, RelationMatrix};
use crate::rng::{self, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetProvenance {
    /// Relations of a uniformly drawn batch of training data.
    ReferenceBatch,
    /// Relations of a batch stratified to equal counts across the clusters
    /// that `g` sees in the training data.
    BalancedReference,
}

impl TargetProvenance {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "reference-batch" => Ok(TargetProvenance::ReferenceBatch),
            "balanced-reference" => Ok(TargetProvenance::BalancedReference),
            _ => Err(MgsError::config(format!("unknown target provenance '{s}' (reference-batch | balanced-reference)"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TargetProvenance::ReferenceBatch => "reference-batch",
            TargetProvenance::BalancedReference => "balanced-reference",
        }
    }
}

/// Where `H` is evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GuideOn {
    /// On the Tweedie estimate `x̂₀(x_t)`.
    X0Hat,
    /// On `x_t` itself.
    Xt,
}

impl GuideOn {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "x0hat" => Ok(GuideOn::X0Hat),
            "xt" => Ok(GuideOn::Xt),
            _ => Err(MgsError::config(format!("unknown guide_on '{s}' (x0hat | xt)"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            GuideOn::X0Hat => "x0hat",
            GuideOn::Xt => "xt",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TargetMode {
    /// `M` estimated once before sampling.
    Fixed,
    /// `M = H(x̂₀)` of the live batch, detached, at every guided step.
    PerStep,
}

impl TargetMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "fixed" => Ok(TargetMode::Fixed),
            "per-step" => Ok(TargetMode::PerStep),
            _ => Err(MgsError::config(format!("unknown target mode '{s}' (fixed | per-step)"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TargetMode::Fixed => "fixed",
            TargetMode::PerStep => "per-step",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GuidanceConfig {
    pub lambda: f64,
    /// Number of leading (largest-t) denoising steps that are guided.
    pub guidance_steps: usize,
    pub batch_size: usize,
    pub skip_eps_jacobian: bool,
    pub provenance: TargetProvenance,
    pub guide_on: GuideOn,
    pub target: TargetMode,
    /// A farthest point whose relation to an existing cluster seed reaches
    /// this value is considered covered.
    pub balance_threshold: f64,
    /// Clusters holding less than this fraction of the pool are dropped.
    pub min_cluster_fraction: f64,
    /// Cap on reference samples examined by the balanced estimate.
    pub balance_pool: usize,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        GuidanceConfig {
            lambda: 0.1,
            guidance_steps: 10,
            batch_size: 32,
            skip_eps_jacobian: false,
            provenance: TargetProvenance::BalancedReference,
            guide_on: GuideOn::X0Hat,
            target: TargetMode::Fixed,
            balance_threshold: 0.9,
            min_cluster_fraction: 0.02,
            balance_pool: 2000,
        }
    }
}

impl GuidanceConfig {
    /// Default `G` for a sampler kind: 5 deterministic, 10 ancestral.
    pub fn default_steps(kind: crate::diffusion::SamplerKind) -> usize {
        match kind {
            crate::diffusion::SamplerKind::Deterministic => 5,
            crate::diffusion::SamplerKind::Ancestral => 10,
        }
    }

    pub fn is_active(&self) -> bool {
        self.lambda != 0.0 && self.guidance_steps > 0
    }

    pub fn validate(&self, sample_steps: usize) -> Result<()> {
        ensure!(self.lambda.is_finite() && self.lambda >= 0.0, Config, "lambda must be finite and >= 0, got {}", self.lambda);
        ensure!(
            self.guidance_steps <= sample_steps,
            Config,
            "guidance_steps {} exceeds sample_steps {}",
            self.guidance_steps,
            sample_steps
        );
        ensure!(self.batch_size >= 1, Config, "guidance batch size must be at least 1");
        ensure!(!(self.lambda > 0.0 && self.batch_size < 2), Config, "guidance needs a batch of at least 2 when lambda > 0");
        ensure!(
            self.balance_threshold > 0.0 && self.balance_threshold <= 1.0,
            Config,
            "balance_threshold must lie in (0, 1], got {}",
            self.balance_threshold
        );
        ensure!(
            (0.0..1.0).contains(&self.min_cluster_fraction),
            Config,
            "min_cluster_fraction must lie in [0, 1), got {}",
            self.min_cluster_fraction
        );
        Ok(())
    }
}

/// The relational target. Never differentiated.
#[derive(Clone, Debug, PartialEq)]
pub struct ManifoldTarget {
    pub m: RelationMatrix,
    pub provenance: TargetProvenance,
    /// Rows of the reference data that produced `m`, in order.
    pub reference_rows: Vec<usize>,
}

impl ManifoldTarget {
    pub fn n(&self) -> usize {
        self.m.n()
    }
}

/// Greedy clusters of `pool` under `g`'s relations.
#[derive(Clone, Debug, PartialEq)]
pub struct RelationClusters {
    /// Pool indices of the cluster seeds, in selection order.
    pub seeds: Vec<usize>,
    pub labels: Vec<usize>,
}

/// Farthest-point seeding in `F`-space that stops once the farthest point
/// relates to some seed at `threshold` or more; points join the seed they
/// relate to most. At most `max_clusters` seeds.
pub fn relation_clusters(h: &ManifoldModel, pool: &Matrix, threshold: f64, max_clusters: usize) -> Result<RelationClusters> {
    ensure!(pool.rows() > 0, Contract, "cannot cluster an empty pool");
    let z = h.f.embed(pool)?;
    let phi = h.g.net.predict(&z)?;
    let rel = |i: usize, j: usize| (-sq_dist(phi.row(i), phi.row(j)) / h.g.tau).exp();
    let n = z.rows();
    let mean = z.col_means();
    let first = (0..n).fold(0, |best, i| if sq_dist(z.row(i), &mean) > sq_dist(z.row(best), &mean) { i } else { best });
    let mut seeds = vec![first];
    let mut nearest: Vec<f64> = (0..n).map(|i| sq_dist(z.row(i), z.row(first))).collect();
    while seeds.len() < max_clusters {
        let cand = (0..n).fold(0, |best, i| if nearest[i] > nearest[best] { i } else { best });
        let covered = seeds.iter().map(|&s| rel(cand, s)).fold(0.0f64, f64::max);
        if covered >= threshold {
            break;
        }
        seeds.push(cand);
        for (i, d) in nearest.iter_mut().enumerate() {
            *d = d.min(sq_dist(z.row(i), z.row(cand)));
        }
    }
    let labels = (0..n)
        .map(|i| {
            let mut best = (0, f64::NEG_INFINITY);
            for (c, &s) in seeds.iter().enumerate() {
                let r = rel(i, s);
                if r > best.1 {
                    best = (c, r);
                }
            }
            best.0
        })
        .collect();
    Ok(RelationClusters { seeds, labels })
}

/// Splits `n` slots as evenly as possible over clusters of the given sizes
/// (water filling: a cluster never gets more than it holds; leftover slots
/// go to the largest clusters first).
pub fn equal_quotas(sizes: &[usize], n: usize) -> Result<Vec<usize>> {
    let total: usize = sizes.iter().sum();
    ensure!(total >= n, Contract, "clusters hold {} samples, need {}", total, n);
    let mut quota = vec![0; sizes.len()];
    let mut left = n;
    let mut open: Vec<usize> = (0..sizes.len()).filter(|&c| sizes[c] > 0).collect();
    // largest first, stable on index
    open.sort_by(|&a, &b| sizes[b].cmp(&sizes[a]).then(a.cmp(&b)));
    while left > 0 {
        let share = left / open.len();
        if share == 0 {
            for &c in open.iter().take(left) {
                quota[c] += 1;
            }
            break;
        }
        let mut next = Vec::new();
        for &c in &open {
            let take = share.min(sizes[c] - quota[c]);
            quota[c] += take;
            left -= take;
            if quota[c] < sizes[c] {
                next.push(c);
            }
        }
        open = next;
    }
    Ok(quota)
}

/// `M` from reference data (samples as rows). Consumes `rng` for the draw.
pub fn estimate_manifold_target(h: &ManifoldModel, reference: &Matrix, cfg: &GuidanceConfig, rng: &mut Rng) -> Result<ManifoldTarget> {
    let n = cfg.batch_size;
    ensure!(reference.rows() >= n, Contract, "need at least {} reference samples, got {}", n, reference.rows());
    ensure!(n >= 1, Config, "target batch size must be at least 1");
    let rows = match cfg.provenance {
        TargetProvenance::ReferenceBatch => rng::choose_distinct(rng, reference.rows(), n),
        TargetProvenance::BalancedReference => balanced_rows(h, reference, cfg, rng)?,
    };
    let m = h.relations(&reference.select_rows(&rows))?;
    Ok(ManifoldTarget { m: symmetric_relation(m)?, provenance: cfg.provenance, reference_rows: rows })
}

// The kernel is symmetric with unit diagonal by construction; clamp away
// last-bit drift before validation.
fn symmetric_relation(mut m: Matrix) -> Result<RelationMatrix> {
    for i in 0..m.rows() {
        m[(i, i)] = 1.0;
    }
    RelationMatrix::from_matrix(m.map(|v| v.clamp(0.0, 1.0)))
}

fn balanced_rows(h: &ManifoldModel, reference: &Matrix, cfg: &GuidanceConfig, rng: &mut Rng) -> Result<Vec<usize>> {
    let n = cfg.batch_size;
    let pool_rows: Vec<usize> = if reference.rows() > cfg.balance_pool.max(n) {
        let mut r = rng::choose_distinct(rng, reference.rows(), cfg.balance_pool.max(n));
        r.sort_unstable();
        r
    } else {
        (0..reference.rows()).collect()
    };
    let pool = reference.select_rows(&pool_rows);
    let clusters = relation_clusters(h, &pool, cfg.balance_threshold, n)?;
    let k = clusters.seeds.len();
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &l) in clusters.labels.iter().enumerate() {
        members[l].push(i);
    }
    let min_size = (cfg.min_cluster_fraction * pool.rows() as f64).ceil() as usize;
    let mut kept: Vec<usize> = (0..k).filter(|&c| members[c].len() >= min_size.max(1)).collect();
    if kept.iter().map(|&c| members[c].len()).sum::<usize>() < n {
        warn!("small clusters dropped too many samples; keeping all {k} clusters");
        kept = (0..k).collect();
    }
    let sizes: Vec<usize> = kept.iter().map(|&c| members[c].len()).collect();
    let quota = equal_quotas(&sizes, n)?;
    debug!("balanced target: {} clusters, sizes {:?}, quotas {:?}", kept.len(), sizes, quota);
    let picks: Vec<Vec<usize>> = kept
        .iter()
        .zip(&quota)
        .map(|(&c, &q)| rng::choose_distinct(rng, members[c].len(), q).into_iter().map(|i| members[c][i]).collect())
        .collect();
    // round-robin so every prefix of the batch stays balanced
    let mut rows = Vec::with_capacity(n);
    for slot in 0..quota.iter().copied().max().unwrap_or(0) {
        for p in &picks {
            if let Some(&i) = p.get(slot) {
                rows.push(pool_rows[i]);
            }
        }
    }
    Ok(rows)
}

/// `‖M - R(x)‖²_F` and its gradient with respect to `x`.
pub fn relation_objective(h: &ManifoldModel, x: &Matrix, m: &Matrix) -> Result<(f64, Matrix)> {
    ensure!(m.shape() == (x.rows(), x.rows()), Contract, "target is {:?}, batch has {} rows", m.shape(), x.rows());
    let (z, fc) = h.f.forward(x)?;
    let (r, gc) = h.g.forward(&z)?;
    let diff = r.sub(m)?;
    let (_, dz) = h.g.backward(gc, &diff.scaled(2.0))?;
    let (_, dx) = h.f.backward(fc, &dz)?;
    Ok((diff.frobenius_sq(), dx))
}

/// Detached per-step target: the relations of the batch's own `x̂₀`.
pub fn per_step_target(xt: &Matrix, t: usize, eps_model: &dyn NoisePredictor, h: &ManifoldModel, schedule: &NoiseSchedule) -> Result<Matrix> {
    let eps = eps_model.predict(xt, t)?;
    h.relations(&tweedie_x0_with(xt, &eps, schedule.alpha_bar(t))?)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GuidanceGradient {
    /// `λ ∇_{x_t} ‖M - H(·)‖²_F`.
    pub gradient: Matrix,
    /// The unscaled objective at `x_t`.
    pub objective: f64,
}

pub fn guidance_gradient(
    xt: &Matrix,
    t: usize,
    eps_model: &dyn NoisePredictor,
    h: &ManifoldModel,
    m: &Matrix,
    schedule: &NoiseSchedule,
    cfg: &GuidanceConfig,
) -> Result<GuidanceGradient> {
    schedule.check_t(t)?;
    ensure!(cfg.lambda >= 0.0, Config, "lambda must be >= 0, got {}", cfg.lambda);
    ensure!(m.shape() == (xt.rows(), xt.rows()), Contract, "target is {:?}, batch has {} rows", m.shape(), xt.rows());
    let (objective, grad) = match cfg.guide_on {
        GuideOn::Xt => relation_objective(h, xt, m)?,
        GuideOn::X0Hat => {
            let abar = schedule.alpha_bar(t);
            let eps = eps_model.predict(xt, t)?;
            let x0 = tweedie_x0_with(xt, &eps, abar)?;
            let (obj, g0) = relation_objective(h, &x0, m)?;
            // ∂x̂₀/∂x_t = (I - √(1-ᾱ) ∂ε/∂x_t) / √ᾱ
            let mut g = g0.scaled(1.0 / abar.sqrt());
            if !cfg.skip_eps_jacobian {
                let through_eps = eps_model.input_vjp(xt, t, &g0)?;
                g.axpy(-(1.0 - abar).sqrt() / abar.sqrt(), &through_eps)?;
            }
            (obj, g)
        }
    };
    if cfg.lambda == 0.0 {
        return Ok(GuidanceGradient { gradient: Matrix::zeros(xt.rows(), xt.cols()), objective });
    }
    let gradient = grad.scaled(cfg.lambda);
    if !gradient.is_finite() {
        return Err(MgsError::numeric(format!("non-finite guidance gradient at t = {t}")));
    }
    Ok(GuidanceGradient { gradient, objective })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TraceRow {
    pub batch: usize,
    pub step: usize,
    pub t: usize,
    pub objective: f64,
    pub grad_norm: f64,
}

pub const TRACE_HEADER: &str = "batch,step,t,objective,grad_norm";

pub fn trace_csv(rows: &[TraceRow]) -> String {
    let mut out = format!("{TRACE_HEADER}\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{:e},{:e}\n", r.batch, r.step, r.t, r.objective, r.grad_norm));
    }
    out
}

/// Sampler hook that subtracts the guidance gradient for the first `G` steps.
pub struct GuidanceHook<'a> {
    pub eps_model: &'a dyn NoisePredictor,
    pub h: &'a ManifoldModel,
    pub target: &'a ManifoldTarget,
    pub schedule: &'a NoiseSchedule,
    pub cfg: &'a GuidanceConfig,
    pub batch: usize,
    pub trace: Vec<TraceRow>,
}

impl StepHook for GuidanceHook<'_> {
    fn after_step(&mut self, index: usize, t: usize, _prev: usize, x_t: &Matrix, x_prev: &mut Matrix) -> Result<()> {
        if index >= self.cfg.guidance_steps || self.cfg.lambda == 0.0 {
            return Ok(());
        }
        let live;
        let m = match self.cfg.target {
            TargetMode::Fixed => self.target.m.matrix(),
            TargetMode::PerStep => {
                live = per_step_target(x_t, t, self.eps_model, self.h, self.schedule)?;
                &live
            }
        };
        let step = guidance_gradient(x_t, t, self.eps_model, self.h, m, self.schedule, self.cfg)
            .map_err(|e| MgsError::numeric(format!("guidance step {index}: {e}")))?;
        x_prev.axpy(-1.0, &step.gradient)?;
        self.trace.push(TraceRow {
            batch: self.batch,
            step: index,
            t,
            objective: step.objective,
            grad_norm: step.gradient.frobenius_sq().sqrt(),
        });
        Ok(())
    }
}

/// One guided batch of `target.n()` samples. With `λ = 0` or `G = 0` the
/// sampler runs without a hook.
pub fn guided_sample(
    eps_model: &dyn NoisePredictor,
    h: &ManifoldModel,
    target: &ManifoldTarget,
    schedule: &NoiseSchedule,
    sampler: &SamplerConfig,
    cfg: &GuidanceConfig,
) -> Result<(Matrix, Vec<TraceRow>)> {
    cfg.validate(sampler.sample_steps)?;
    ensure!(
        h.data_dim() == eps_model.data_dim(),
        Contract,
        "manifold model expects dimension {}, diffusion model {}",
        h.data_dim(),
        eps_model.data_dim()
    );
    if !cfg.is_active() {
        return Ok((sample(eps_model, schedule, sampler, target.n(), None)?, Vec::new()));
    }
    let mut hook = GuidanceHook { eps_model, h, target, schedule, cfg, batch: 0, trace: Vec::new() };
    let x = sample(eps_model, schedule, sampler, target.n(), Some(&mut hook))?;
    Ok((x, hook.trace))
}

/// Seed of batch `b` in a multi-batch run.
pub fn batch_seed(seed: u64, b: usize) -> u64 {
    rng::mix(seed, b as u64)
}

/// `total` samples as consecutive batches of `target.n()`, batch `b` seeded
/// by [`batch_seed`]; the last batch is truncated. `None` for `h`/`target`
/// gives the matching unguided run (same initial noise).
pub fn sample_batches(
    eps_model: &dyn NoisePredictor,
    guidance: Option<(&ManifoldModel, &ManifoldTarget, &GuidanceConfig)>,
    schedule: &NoiseSchedule,
    sampler: &SamplerConfig,
    batch_size: usize,
    total: usize,
) -> Result<(Matrix, Vec<TraceRow>)> {
    let n = guidance.map_or(batch_size, |(_, target, _)| target.n());
    ensure!(n >= 1, Config, "batch size must be at least 1");
    let mut out = Matrix::zeros(0, eps_model.data_dim());
    let mut trace = Vec::new();
    let mut b = 0;
    while out.rows() < total {
        let cfg = SamplerConfig { seed: batch_seed(sampler.seed, b), ..sampler.clone() };
        let x = match guidance {
            Some((h, target, g)) => {
                let (x, mut tr) = guided_sample(eps_model, h, target, schedule, &cfg, g)?;
                tr.iter_mut().for_each(|r| r.batch = b);
                trace.extend(tr);
                x
            }
            None => sample(eps_model, schedule, &cfg, n, None)?,
        };
        let keep: Vec<usize> = (0..x.rows().min(total - out.rows())).collect();
        out = out.vstack(&x.select_rows(&keep))?;
        b += 1;
    }
    Ok((out, trace))
}

/// Relations of a batch, via the kernel on `g`'s embedding of `F(x)`.
pub fn batch_relations(h: &ManifoldModel, x: &Matrix) -> Result<Matrix> {
    kernel_relations(&h.g.net.predict(&h.f.embed(x)?)?, h.g.tau)
}
