//! Run orchestration: data, training, sampling, evaluation and sweeps.
//!
//! Everything a run writes lives under `<out>/<config hash>/`:
//!
//! ```text
//! config.txt                  resolved configuration (canonical form)
//! data/train.csv, real.csv    training set and held-out evaluation set
//! data/balanced.csv           equal-weight reference draw (mixtures only)
//! checkpoints/eps.bin         noise model + schedule
//! checkpoints/manifold.bin    F and g
//! samples/{unguided,guided}.csv
//! metrics/*.csv
//! plots/*.svg
//! manifest.json               written last
//! ```
//!
//! Each stage loads what earlier stages left on disk and runs them when
//! their artifacts are missing, so any command works on a fresh directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::config::{RunConfig, SAMPLER_STEP_CHOICES};
use crate::data::{self, DataKind, Dataset};
use crate::diffusion::{train_eps_model, EpsModel, NoiseSchedule, SamplerConfig, SamplerKind};
use crate::error::{ensure, MgsError, Result};
use crate::eval::{self, RADIUS_MULTIPLIERS};
use crate::guidance::{estimate_manifold_target, sample_batches, trace_csv};
use crate::linalg::Matrix;
use crate::manifold::{train_manifold, ManifoldModel};
use crate::plot;
use crate::rng::{self, streams};

pub const MANIFEST: &str = "manifest.json";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub seeds: BTreeMap<String, u64>,
    /// Paths relative to the run directory, sorted.
    pub artifacts: Vec<String>,
    pub metrics: BTreeMap<String, f64>,
    /// Wall-clock seconds of the latest invocation of each command.
    pub timings: BTreeMap<String, f64>,
}

/// Evaluation of one sample set.
#[derive(Clone, Debug, PartialEq)]
pub struct SetSummary {
    pub set: String,
    pub samples: usize,
    pub bias: Option<eval::BiasReport>,
    pub to_real: eval::DistanceReport,
    pub to_balanced: Option<eval::DistanceReport>,
    /// Per multiplier, in [`RADIUS_MULTIPLIERS`] order.
    pub histograms: Vec<eval::NeighborHistogram>,
    pub uniformity: Vec<eval::UniformityStats>,
}

impl SetSummary {
    /// Neighbour-count CV at multiplier 1.
    pub fn cv(&self) -> f64 {
        self.uniformity[1].cv
    }
}

pub struct Run {
    cfg: RunConfig,
    dir: PathBuf,
    manifest: RunManifest,
    dataset: Option<Dataset>,
    diffusion: Option<(EpsModel, NoiseSchedule)>,
    manifold: Option<ManifoldModel>,
}

fn f(v: f64) -> String {
    format!("{v:?}")
}

fn opt(v: Option<f64>) -> String {
    v.map(f).unwrap_or_default()
}

pub fn write_csv_table(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        w.write_record(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn csv_err(e: csv::Error) -> MgsError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => MgsError::Io(io),
        other => MgsError::format(format!("csv: {other:?}")),
    }
}

fn read_matrix_csv(path: &Path) -> Result<Matrix> {
    Ok(data::read_csv(path)?.samples)
}

fn write_matrix_csv(path: &Path, x: &Matrix) -> Result<()> {
    data::write_csv(&Dataset::unlabeled("samples", x.clone()), path)
}

impl Run {
    /// Opens (creating if needed) the run directory for `cfg` under `out`.
    pub fn open(cfg: RunConfig, out: &Path) -> Result<Self> {
        cfg.validate()?;
        let hash = cfg.hash();
        let dir = out.join(&hash);
        for sub in ["data", "checkpoints", "samples", "metrics", "plots"] {
            fs::create_dir_all(dir.join(sub))?;
        }
        let manifest = match fs::read(dir.join(MANIFEST)) {
            Ok(bytes) => serde_json::from_slice(&bytes).map_err(|e| MgsError::format(format!("{}: {e}", dir.join(MANIFEST).display())))?,
            Err(_) => RunManifest::default(),
        };
        let mut run = Run { cfg, dir, manifest, dataset: None, diffusion: None, manifold: None };
        run.manifest.config_hash = hash;
        run.manifest.seeds = run.seeds();
        fs::write(run.dir.join("config.txt"), run.cfg.canonical())?;
        Ok(run)
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn manifest(&self) -> &RunManifest {
        &self.manifest
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.dir.join(rel)
    }

    /// Derived seed of every stage.
    pub fn seeds(&self) -> BTreeMap<String, u64> {
        let s = self.cfg.seed;
        [
            ("base", s),
            ("data", s),
            ("real", rng::mix(s, streams::EVAL)),
            ("balanced", rng::mix(s, streams::REFERENCE)),
            ("diffusion", rng::mix(s, streams::DIFFUSION_TRAIN)),
            ("manifold", rng::mix(s, streams::MANIFOLD_TRAIN)),
            ("target", rng::mix(s, streams::TARGET)),
            ("sample", rng::mix(s, streams::SAMPLE)),
            ("projections", rng::mix(s, streams::EVAL ^ 0xff)),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    fn seed(&self, name: &str) -> u64 {
        self.manifest.seeds[name]
    }

    fn mixture(&self) -> bool {
        self.cfg.data_file.is_none() && matches!(self.cfg.data.kind, DataKind::GmmRing | DataKind::GmmSkewed)
    }

    /// The training set, with mode centres when they are known.
    pub fn dataset(&mut self) -> Result<&Dataset> {
        if self.dataset.is_none() {
            let ds = match &self.cfg.data_file {
                Some(p) => load_dataset_file(p)?,
                None => data::make_data(&self.cfg.data, self.seed("data"))?,
            };
            ensure!(ds.len() >= 2, Config, "dataset has {} samples, need at least 2", ds.len());
            self.dataset = Some(ds);
            if !self.path("data/train.csv").exists() {
                self.make_data()?;
            }
        }
        Ok(self.dataset.as_ref().expect("just set"))
    }

    /// Held-out real samples for the ε-ball test: a fresh generator draw, or
    /// the training file itself when data come from disk.
    pub fn real_set(&mut self) -> Result<Matrix> {
        if self.cfg.data_file.is_some() {
            return Ok(self.dataset()?.samples.clone());
        }
        let spec = data::DataSpec { samples: self.cfg.eval.real_samples, ..self.cfg.data.clone() };
        Ok(data::make_data(&spec, self.seed("real"))?.samples)
    }

    /// Equal-weight draw from the same mixture, the reference for distances
    /// to a debiased distribution.
    pub fn balanced_reference(&self) -> Result<Option<Matrix>> {
        if !self.mixture() {
            return Ok(None);
        }
        let k = self.cfg.data.modes;
        let spec = data::DataSpec { samples: self.cfg.eval.real_samples, weights: Some(vec![1.0 / k as f64; k]), ..self.cfg.data.clone() };
        Ok(Some(data::make_data(&spec, self.seed("balanced"))?.samples))
    }

    pub fn make_data(&mut self) -> Result<()> {
        let ds = self.dataset()?.clone();
        data::write_csv(&ds, &self.path("data/train.csv"))?;
        let real = self.real_set()?;
        write_matrix_csv(&self.path("data/real.csv"), &real)?;
        if let Some(b) = self.balanced_reference()? {
            write_matrix_csv(&self.path("data/balanced.csv"), &b)?;
        }
        Ok(())
    }

    pub fn train_diffusion(&mut self) -> Result<()> {
        let x = self.dataset()?.samples.clone();
        let c = &self.cfg;
        let schedule = NoiseSchedule::linear(c.schedule.steps, c.schedule.beta_start, c.schedule.beta_end)?;
        let mut rng = rng::stream(c.seed, streams::DIFFUSION_INIT);
        let mut model = EpsModel::init(x.cols(), c.eps_net.embed_dim, &c.eps_net.hidden, c.eps_net.activation, &mut rng)?;
        let mut rng = rng::seeded(self.seed("diffusion"));
        let log = train_eps_model(&mut model, &x, &schedule, &c.diffusion, &mut rng)?;
        info!("diffusion: final loss {:.5}", log.last().map_or(f64::NAN, |l| l.1));
        if let Some(&(_, l)) = log.last() {
            self.manifest.metrics.insert("diffusion_final_loss".into(), l);
        }
        let rows: Vec<Vec<String>> = log.iter().map(|&(s, l)| vec![s.to_string(), f(l)]).collect();
        write_csv_table(&self.path("metrics/diffusion_loss.csv"), &["step", "loss"], &rows)?;
        checkpoint::save_eps(&self.path("checkpoints/eps.bin"), &model, &schedule)?;
        self.diffusion = Some((model, schedule));
        Ok(())
    }

    fn ensure_diffusion(&mut self) -> Result<()> {
        if self.diffusion.is_none() {
            let p = self.path("checkpoints/eps.bin");
            if p.exists() {
                self.diffusion = Some(checkpoint::load_eps(&p)?);
            } else {
                self.train_diffusion()?;
            }
        }
        Ok(())
    }

    pub fn train_manifold(&mut self) -> Result<()> {
        let x = self.dataset()?.samples.clone();
        let (model, log, _) = train_manifold(&x, &self.cfg.manifold, self.seed("manifold"))?;
        let rows: Vec<Vec<String>> = log
            .entries
            .iter()
            .map(|e| vec![e.stage.to_string(), e.step.to_string(), f(e.relation_loss), f(e.objective)])
            .collect();
        write_csv_table(&self.path("metrics/manifold_loss.csv"), &["stage", "step", "relation_loss", "objective"], &rows)?;
        if let Some(e) = log.entries.last() {
            self.manifest.metrics.insert("manifold_final_objective".into(), e.objective);
        }
        self.manifest.metrics.insert("manifold_tau_pre".into(), log.tau_pre);
        checkpoint::save_manifold(&self.path("checkpoints/manifold.bin"), &model)?;
        self.manifold = Some(model);
        Ok(())
    }

    fn ensure_manifold(&mut self) -> Result<()> {
        if self.manifold.is_none() {
            let p = self.path("checkpoints/manifold.bin");
            if p.exists() {
                self.manifold = Some(checkpoint::load_manifold(&p)?);
            } else {
                self.train_manifold()?;
            }
        }
        Ok(())
    }

    fn sampler(&self) -> Result<SamplerConfig> {
        SamplerConfig::new(self.cfg.sampler.kind, self.cfg.sampler.steps, self.cfg.schedule.steps, self.seed("sample"))
    }

    /// Draws `sampler.samples` points and writes `samples/<set>.csv`. The
    /// guided and unguided sets share per-batch initial noise.
    pub fn sample(&mut self, guided: bool, trace: bool) -> Result<Matrix> {
        self.ensure_diffusion()?;
        let sampler = self.sampler()?;
        let total = self.cfg.sampler.samples;
        let n = self.cfg.guidance.batch_size;
        let (x, rows) = if guided {
            self.ensure_manifold()?;
            let reference = self.dataset()?.samples.clone();
            let h = self.manifold.as_ref().expect("loaded");
            let mut rng = rng::seeded(self.seed("target"));
            let target = estimate_manifold_target(h, &reference, &self.cfg.guidance, &mut rng)?;
            let (eps, schedule) = self.diffusion.as_ref().expect("loaded");
            sample_batches(eps, Some((h, &target, &self.cfg.guidance)), schedule, &sampler, n, total)?
        } else {
            let (eps, schedule) = self.diffusion.as_ref().expect("loaded");
            sample_batches(eps, None, schedule, &sampler, n, total)?
        };
        let set = if guided { "guided" } else { "unguided" };
        write_matrix_csv(&self.path(&format!("samples/{set}.csv")), &x)?;
        if trace && guided {
            fs::write(self.path("metrics/guidance_trace.csv"), trace_csv(&rows))?;
        }
        Ok(x)
    }

    fn samples(&mut self, set: &str) -> Result<Matrix> {
        let p = self.path(&format!("samples/{set}.csv"));
        if p.exists() {
            read_matrix_csv(&p)
        } else {
            self.sample(set == "guided", false)
        }
    }

    /// Bias, neighbour-count and distance reports for one sample set.
    pub fn evaluate_set(&mut self, set: &str, generated: &Matrix, real: &Matrix, base_radius: f64) -> Result<SetSummary> {
        let want_bias = self.cfg.eval.bias;
        let ds = self.dataset()?;
        let bias = match (&ds.centers, &ds.labels) {
            (Some(c), Some(_)) if want_bias => {
                let training = ds.label_proportions(c.rows()).expect("labels present");
                Some(eval::mode_proportions(generated, c, &training)?)
            }
            _ => None,
        };
        let proj = self.cfg.eval.projections;
        let seed = self.seed("projections");
        let to_real = eval::distance_report(generated, real, proj, seed)?;
        let to_balanced = match self.balanced_reference()? {
            Some(b) => Some(eval::distance_report(generated, &b, proj, seed)?),
            None => None,
        };
        let histograms = RADIUS_MULTIPLIERS
            .iter()
            .map(|&c| eval::neighbor_histogram(real, generated, base_radius, c))
            .collect::<Result<Vec<_>>>()?;
        let uniformity = histograms.iter().map(|h| eval::uniformity_stats(&h.counts)).collect::<Result<Vec<_>>>()?;
        Ok(SetSummary { set: set.to_string(), samples: generated.rows(), bias, to_real, to_balanced, histograms, uniformity })
    }

    /// Evaluates the unguided set and, when guidance is active, the guided set.
    pub fn evaluate(&mut self) -> Result<Vec<SetSummary>> {
        let real = self.real_set()?;
        let base = eval::avg_nn_distance(&real)?;
        ensure!(base > 0.0, Numeric, "held-out real samples are all duplicates; the neighbour radius is 0");
        self.manifest.metrics.insert("epsilon".into(), base);
        let mut sets = vec!["unguided"];
        if self.cfg.guidance.is_active() {
            sets.push("guided");
        }
        let mut out = Vec::new();
        for set in sets {
            let x = self.samples(set)?;
            let s = self.evaluate_set(set, &x, &real, base)?;
            self.write_counts(&s)?;
            out.push(s);
        }
        self.write_summary(&out)?;
        for s in &out {
            if let Some(b) = &s.bias {
                self.manifest.metrics.insert(format!("{}_tv_uniform", s.set), b.tv_uniform);
            }
            self.manifest.metrics.insert(format!("{}_sw_real", s.set), s.to_real.sliced_wasserstein);
            self.manifest.metrics.insert(format!("{}_cv_k", s.set), s.cv());
        }
        Ok(out)
    }

    fn write_counts(&self, s: &SetSummary) -> Result<()> {
        let n = s.histograms[0].counts.len();
        let rows: Vec<Vec<String>> = (0..n)
            .map(|i| std::iter::once(i.to_string()).chain(s.histograms.iter().map(|h| h.counts[i].to_string())).collect())
            .collect();
        write_csv_table(&self.path(&format!("metrics/counts_{}.csv", s.set)), &["real_index", "k_0.8", "k_1.0", "k_1.2"], &rows)
    }

    fn write_summary(&mut self, sets: &[SetSummary]) -> Result<()> {
        let header = [
            "set",
            "samples",
            "tv_uniform",
            "tv_training",
            "sw_real",
            "energy_real",
            "sw_balanced",
            "energy_balanced",
            "mean_k",
            "var_k",
            "cv_k_0.8",
            "cv_k_1.0",
            "cv_k_1.2",
        ];
        let rows: Vec<Vec<String>> = sets
            .iter()
            .map(|s| {
                let mut r = vec![
                    s.set.clone(),
                    s.samples.to_string(),
                    opt(s.bias.as_ref().map(|b| b.tv_uniform)),
                    opt(s.bias.as_ref().map(|b| b.tv_training)),
                    f(s.to_real.sliced_wasserstein),
                    f(s.to_real.energy),
                    opt(s.to_balanced.as_ref().map(|d| d.sliced_wasserstein)),
                    opt(s.to_balanced.as_ref().map(|d| d.energy)),
                    f(s.uniformity[1].mean),
                    f(s.uniformity[1].variance),
                ];
                r.extend(s.uniformity.iter().map(|u| f(u.cv)));
                r
            })
            .collect();
        write_csv_table(&self.path("metrics/summary.csv"), &header, &rows)?;

        let mut hist = Vec::new();
        for s in sets {
            for h in &s.histograms {
                for (k, &c) in h.histogram.iter().enumerate() {
                    hist.push(vec![s.set.clone(), f(h.multiplier), k.to_string(), c.to_string()]);
                }
            }
        }
        write_csv_table(&self.path("metrics/histogram.csv"), &plot::HISTOGRAM_COLUMNS, &hist)?;

        let mut props = Vec::new();
        if let Some(first) = sets.iter().find_map(|s| s.bias.as_ref()) {
            for (name, p) in [("training", &first.training), ("uniform", &first.uniform)] {
                props.extend(p.iter().enumerate().map(|(m, v)| vec![name.to_string(), m.to_string(), f(*v)]));
            }
        }
        for s in sets {
            if let Some(b) = &s.bias {
                props.extend(b.generated.iter().enumerate().map(|(m, v)| vec![s.set.clone(), m.to_string(), f(*v)]));
            }
        }
        write_csv_table(&self.path("metrics/proportions.csv"), &plot::PROPORTION_COLUMNS, &props)
    }

    /// SVGs from the evaluation reports, evaluating first if they are missing.
    pub fn plot(&mut self) -> Result<Vec<PathBuf>> {
        if !self.path("metrics/histogram.csv").exists() || !self.path("metrics/proportions.csv").exists() {
            self.evaluate()?;
        }
        plot::plot_reports(&self.path("metrics"), &self.path("plots"))
    }

    /// Records timing, lists the artifacts and writes the manifest (last).
    pub fn finish(&mut self, command: &str, started: Instant) -> Result<()> {
        self.manifest.timings.insert(command.to_string(), started.elapsed().as_secs_f64());
        self.manifest.artifacts = list_artifacts(&self.dir)?;
        let json = serde_json::to_string_pretty(&self.manifest).map_err(|e| MgsError::format(e.to_string()))?;
        let tmp = self.path("manifest.json.tmp");
        fs::write(&tmp, json)?;
        fs::rename(&tmp, self.path(MANIFEST))?;
        Ok(())
    }
}

fn list_artifacts(dir: &Path) -> Result<Vec<String>> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d)? {
            let p = entry?.path();
            if p.is_dir() {
                stack.push(p);
                continue;
            }
            let rel = p.strip_prefix(dir).expect("under dir").to_string_lossy().replace('\\', "/");
            if rel == MANIFEST || rel.ends_with(".tmp") {
                continue;
            }
            ensure!(fs::metadata(&p)?.len() > 0, Format, "artifact {} is empty", p.display());
            out.push(rel);
        }
    }
    out.sort();
    Ok(out)
}

/// CSV (`.csv`) or MGSD binary (anything else). Labelled files get one
/// centre per label (the label mean).
pub fn load_dataset_file(path: &Path) -> Result<Dataset> {
    let mut ds = if path.extension().is_some_and(|e| e == "csv") {
        data::read_csv(path)?
    } else {
        let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        Dataset::unlabeled(name, data::read_binary(path)?)
    };
    if let Some(labels) = &ds.labels {
        let k = labels.iter().max().map_or(0, |m| m + 1);
        let mut c = Matrix::zeros(k, ds.dim());
        let mut n = vec![0usize; k];
        for (r, &l) in labels.iter().enumerate() {
            n[l] += 1;
            for (j, v) in ds.samples.row(r).iter().enumerate() {
                c[(l, j)] += v;
            }
        }
        for (l, &cnt) in n.iter().enumerate() {
            ensure!(cnt > 0, Format, "{}: label {} has no samples", path.display(), l);
            for j in 0..ds.dim() {
                c[(l, j)] /= cnt as f64;
            }
        }
        ds.centers = Some(c);
    }
    Ok(ds)
}

/// Config key behind a sweep axis; dotted keys pass through.
pub fn axis_key(axis: &str) -> Result<&str> {
    Ok(match axis {
        "lambda" => "guidance.lambda",
        "guidance_steps" => "guidance.steps",
        "batch_size" => "guidance.batch_size",
        "relation_source" => "manifold.relation_source",
        "sampler_steps" => "sampler.steps",
        a if a.contains('.') => a,
        other => {
            return Err(MgsError::config(format!(
                "unknown sweep axis `{other}` (lambda|guidance_steps|batch_size|relation_source|sampler_steps|<config key>)"
            )))
        }
    })
}

/// The standard grid of an axis.
pub fn default_values(axis: &str) -> Option<Vec<String>> {
    let v: &[&str] = match axis {
        "lambda" => &["1", "5", "10", "20"],
        "guidance_steps" => &["5", "10", "20", "50"],
        "batch_size" => &["4", "8", "16", "32", "64"],
        "relation_source" => &["learnable", "kmeans-10", "kmeans-20"],
        "sampler_steps" => &["20", "50", "100", "1000"],
        _ => return None,
    };
    Some(v.iter().map(|s| s.to_string()).collect())
}

pub const SWEEP_METRICS: [&str; 10] = [
    "TV_uniform",
    "TV_training",
    "SW",
    "energy",
    "CV_k",
    "TV_uniform_unguided",
    "SW_unguided",
    "CV_k_unguided",
    "status",
    "error",
];

/// One sweep row: the guided metrics next to the unguided baseline of the same run.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub value: String,
    pub seed: u64,
    pub result: std::result::Result<[Option<f64>; 8], String>,
}

fn sweep_row(cfg: RunConfig, out: &Path) -> Result<[Option<f64>; 8]> {
    let mut run = Run::open(cfg, out)?;
    let started = Instant::now();
    let sets = run.evaluate()?;
    run.finish("evaluate", started)?;
    let unguided = &sets[0];
    let guided = sets.get(1).unwrap_or(unguided);
    // distances to the balanced draw when there is one, else to held-out real data
    let sw = |s: &SetSummary| s.to_balanced.as_ref().unwrap_or(&s.to_real).sliced_wasserstein;
    let energy = guided.to_balanced.as_ref().unwrap_or(&guided.to_real).energy;
    Ok([
        guided.bias.as_ref().map(|b| b.tv_uniform),
        guided.bias.as_ref().map(|b| b.tv_training),
        Some(sw(guided)),
        Some(energy),
        Some(guided.cv()),
        unguided.bias.as_ref().map(|b| b.tv_uniform),
        Some(sw(unguided)),
        Some(unguided.cv()),
    ])
}

/// Runs one full pipeline per value (seed = base seed + index), rows in
/// parallel, and returns them in value order. Fails only if every row fails.
pub fn sweep(base: &RunConfig, axis: &str, values: &[String], out: &Path) -> Result<Vec<SweepRow>> {
    ensure!(!values.is_empty(), Config, "sweep needs at least one value");
    let key = axis_key(axis)?;
    let mut configs = Vec::with_capacity(values.len());
    for (i, v) in values.iter().enumerate() {
        let mut c = base.clone();
        c.set(key, v)?;
        c.seed = base.seed.wrapping_add(i as u64);
        configs.push(c);
    }
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(configs.len());
    let mut results: Vec<Option<SweepRow>> = vec![None; configs.len()];
    std::thread::scope(|s| {
        let chunks: Vec<Vec<(usize, &RunConfig)>> = (0..workers)
            .map(|w| configs.iter().enumerate().skip(w).step_by(workers).collect())
            .collect();
        let handles: Vec<_> = chunks
            .into_iter()
            .map(|chunk| {
                s.spawn(move || {
                    chunk
                        .into_iter()
                        .map(|(i, c)| {
                            let r = sweep_row(c.clone(), out).map_err(|e| {
                                warn!("sweep {axis}={}: {e}", values[i]);
                                e.to_string()
                            });
                            (i, SweepRow { value: values[i].clone(), seed: c.seed, result: r })
                        })
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            for (i, row) in h.join().expect("sweep worker panicked") {
                results[i] = Some(row);
            }
        }
    });
    let rows: Vec<SweepRow> = results.into_iter().map(|r| r.expect("every row ran")).collect();
    if let Some(SweepRow { result: Err(e), .. }) = rows.first() {
        if rows.iter().all(|r| r.result.is_err()) {
            return Err(MgsError::numeric(format!("every sweep row failed; first: {e}")));
        }
    }
    Ok(rows)
}

pub fn write_sweep_csv(path: &Path, axis: &str, sampler: SamplerKind, rows: &[SweepRow]) -> Result<()> {
    let mut header = vec![axis, "seed", "sampler"];
    header.extend(SWEEP_METRICS);
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let mut rec = vec![r.value.clone(), r.seed.to_string(), sampler.name().to_string()];
            match &r.result {
                Ok(m) => {
                    rec.extend(m.iter().map(|v| opt(*v)));
                    rec.extend(["ok".to_string(), String::new()]);
                }
                Err(e) => {
                    rec.extend(std::iter::repeat_n(String::new(), 8));
                    rec.extend(["failed".to_string(), e.clone()]);
                }
            }
            rec
        })
        .collect();
    write_csv_table(path, &header, &table)
}

/// The `ablate` command: sweeps `axis` and writes `metrics/ablate_<axis>.csv`
/// in the base run directory. The guidance-step axis runs once per sampler
/// kind (`ablate_guidance_steps_<kind>.csv`), with enough sampler steps for
/// the largest value.
pub fn ablate(base: &RunConfig, axis: &str, values: Option<Vec<String>>, out: &Path) -> Result<Vec<PathBuf>> {
    let values = match values {
        Some(v) => v,
        None => default_values(axis).ok_or_else(|| MgsError::config(format!("axis `{axis}` has no default grid; pass --values")))?,
    };
    let run = Run::open(base.clone(), out)?;
    let name = axis.replace('.', "_");
    let mut written = Vec::new();
    if axis == "guidance_steps" {
        let most = values.iter().map(|v| v.parse::<usize>().map_err(|_| MgsError::config(format!("bad guidance step count `{v}`")))).collect::<Result<Vec<_>>>()?;
        let most = most.into_iter().max().unwrap_or(0);
        for kind in [SamplerKind::Ancestral, SamplerKind::Deterministic] {
            let mut c = base.clone();
            c.set("sampler.kind", kind.name())?;
            if c.sampler.steps < most {
                let steps = SAMPLER_STEP_CHOICES.iter().copied().find(|&s| s >= most && s <= c.schedule.steps).unwrap_or(c.schedule.steps);
                info!("guidance-step sweep: raising sampler.steps to {steps}");
                c.set("sampler.steps", &steps.to_string())?;
            }
            let rows = sweep(&c, axis, &values, out)?;
            let p = run.path(&format!("metrics/ablate_{name}_{}.csv", kind.name()));
            write_sweep_csv(&p, axis, kind, &rows)?;
            written.push(p);
        }
    } else {
        let rows = sweep(base, axis, &values, out)?;
        let p = run.path(&format!("metrics/ablate_{name}.csv"));
        write_sweep_csv(&p, axis, base.sampler.kind, &rows)?;
        written.push(p);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axes_map_to_config_keys() {
        assert_eq!(axis_key("lambda").unwrap(), "guidance.lambda");
        assert_eq!(axis_key("eval.projections").unwrap(), "eval.projections");
        assert!(axis_key("lamda").is_err());
        assert_eq!(default_values("batch_size").unwrap().len(), 5);
        assert!(default_values("eval.projections").is_none());
    }

    #[test]
    fn labelled_file_gets_label_mean_centers() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        fs::write(&p, "x0,x1,label\n0,0,1\n2,0,1\n5,5,0\n").unwrap();
        let ds = load_dataset_file(&p).unwrap();
        let c = ds.centers.unwrap();
        assert_eq!(c.row(0), &[5.0, 5.0]);
        assert_eq!(c.row(1), &[1.0, 0.0]);
    }

    #[test]
    fn failed_rows_are_recorded_in_the_table() {
        let dir = tempfile::tempdir().unwrap();
        let rows = vec![
            SweepRow { value: "1".into(), seed: 7, result: Ok([Some(0.5), None, Some(1.0), Some(2.0), Some(0.1), None, None, None]) },
            SweepRow { value: "2".into(), seed: 8, result: Err("boom, with comma".into()) },
        ];
        let p = dir.path().join("s.csv");
        write_sweep_csv(&p, "lambda", SamplerKind::Ancestral, &rows).unwrap();
        let mut rd = csv::Reader::from_path(&p).unwrap();
        assert_eq!(rd.headers().unwrap().len(), 3 + SWEEP_METRICS.len());
        let recs: Vec<csv::StringRecord> = rd.records().map(|r| r.unwrap()).collect();
        assert_eq!(recs.len(), 2);
        assert_eq!(&recs[0][3], "0.5");
        assert_eq!(&recs[1][11], "failed");
        assert_eq!(&recs[1][12], "boom, with comma");
    }
}
