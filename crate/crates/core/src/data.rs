//! Synthetic benchmark datasets and their on-disk formats.
//!
//! CSV: header `x0,...,x{D-1}` plus a trailing `label` column when labels are
//! present; values are written in shortest round-trip form.
//!
//! Binary: `b"MGSD"`, `u32` dimension, `u64` row count, then `n * D`
//! little-endian `f64` values in row-major order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, MgsError, Result};
use crate::linalg::{dot, Matrix};
use crate::rng::{self, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataKind {
    GmmRing,
    GmmSkewed,
    TwoMoons,
    Subspaces,
}

impl DataKind {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "gmm-ring" => DataKind::GmmRing,
            "gmm-skewed" => DataKind::GmmSkewed,
            "two-moons" => DataKind::TwoMoons,
            "subspaces" => DataKind::Subspaces,
            other => return Err(MgsError::config(format!("unknown dataset kind `{other}`"))),
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            DataKind::GmmRing => "gmm-ring",
            DataKind::GmmSkewed => "gmm-skewed",
            DataKind::TwoMoons => "two-moons",
            DataKind::Subspaces => "subspaces",
        }
    }
}

/// Generator parameters. Fields that do not apply to a kind are ignored.
#[derive(Clone, Debug, PartialEq)]
pub struct DataSpec {
    pub kind: DataKind,
    /// Total samples for the mixtures and moons; per-mode for subspaces.
    pub samples: usize,
    pub modes: usize,
    /// Mode weights; `None` selects the kind's default.
    pub weights: Option<Vec<f64>>,
    /// Isotropic Gaussian noise standard deviation.
    pub noise: f64,
    /// Ring radius, or the spacing between neighbouring centres on the skewed line.
    pub scale: f64,
    /// Ambient dimension (subspaces only).
    pub ambient_dim: usize,
    /// Per-mode subspace dimension (subspaces only).
    pub subspace_dim: usize,
}

impl DataSpec {
    pub fn new(kind: DataKind) -> Self {
        let (modes, scale, samples) = match kind {
            DataKind::GmmRing => (8, 2.0, 4000),
            DataKind::GmmSkewed => (2, 4.0, 4000),
            DataKind::TwoMoons => (2, 1.0, 4000),
            DataKind::Subspaces => (3, 1.0, 100),
        };
        let noise = if kind == DataKind::Subspaces { 0.0 } else { 0.05 };
        DataSpec { kind, samples, modes, weights: None, noise, scale, ambient_dim: 20, subspace_dim: 2 }
    }

    /// Default weights: uniform, except the skewed line whose weights fall off
    /// geometrically with ratio 39/61 (so two modes split 0.61 / 0.39).
    pub fn resolved_weights(&self) -> Vec<f64> {
        if let Some(w) = &self.weights {
            return w.clone();
        }
        match self.kind {
            DataKind::GmmSkewed => {
                let raw: Vec<f64> = (0..self.modes).map(|j| (0.39f64 / 0.61).powi(j as i32)).collect();
                let s: f64 = raw.iter().sum();
                raw.into_iter().map(|w| w / s).collect()
            }
            _ => vec![1.0 / self.modes as f64; self.modes],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub samples: Matrix,
    pub labels: Option<Vec<usize>>,
    /// One row per mode.
    pub centers: Option<Matrix>,
    pub weights: Option<Vec<f64>>,
}

impl Dataset {
    pub fn unlabeled(name: impl Into<String>, samples: Matrix) -> Self {
        Dataset { name: name.into(), samples, labels: None, centers: None, weights: None }
    }

    pub fn dim(&self) -> usize {
        self.samples.cols()
    }

    pub fn len(&self) -> usize {
        self.samples.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.rows() == 0
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(l) = &self.labels {
            ensure!(l.len() == self.len(), Contract, "{} labels for {} samples", l.len(), self.len());
        }
        if let Some(w) = &self.weights {
            check_weights(w)?;
        }
        Ok(())
    }

    /// Fraction of samples carrying each label `0..modes`.
    pub fn label_proportions(&self, modes: usize) -> Option<Vec<f64>> {
        let l = self.labels.as_ref()?;
        let mut p = vec![0.0; modes];
        for &x in l {
            if x < modes {
                p[x] += 1.0;
            }
        }
        let n = l.len().max(1) as f64;
        Some(p.into_iter().map(|c| c / n).collect())
    }
}

fn check_weights(w: &[f64]) -> Result<()> {
    ensure!(!w.is_empty(), Config, "mode weights are empty");
    ensure!(w.iter().all(|&x| x.is_finite() && x >= 0.0), Config, "mode weights must be non-negative");
    let s: f64 = w.iter().sum();
    ensure!((s - 1.0).abs() <= 1e-9, Config, "mode weights sum to {}, not 1", s);
    Ok(())
}

fn mode_centers(spec: &DataSpec) -> Matrix {
    let k = spec.modes;
    let mut c = Matrix::zeros(k, 2);
    match spec.kind {
        DataKind::GmmRing => {
            for j in 0..k {
                let a = 2.0 * std::f64::consts::PI * j as f64 / k as f64;
                c[(j, 0)] = spec.scale * a.cos();
                c[(j, 1)] = spec.scale * a.sin();
            }
        }
        _ => {
            for j in 0..k {
                c[(j, 0)] = (j as f64 - (k - 1) as f64 / 2.0) * spec.scale;
            }
        }
    }
    c
}

/// Deterministic in `(spec, seed)`.
pub fn make_data(spec: &DataSpec, seed: u64) -> Result<Dataset> {
    ensure!(spec.samples > 0, Config, "dataset needs at least one sample");
    ensure!(spec.noise >= 0.0 && spec.noise.is_finite(), Config, "noise must be a non-negative number");
    let mut rng = rng::stream(seed, rng::streams::DATA);
    match spec.kind {
        DataKind::GmmRing | DataKind::GmmSkewed => {
            ensure!(spec.modes >= 1, Config, "mixture needs at least one mode");
            let w = spec.resolved_weights();
            ensure!(w.len() == spec.modes, Config, "{} weights for {} modes", w.len(), spec.modes);
            check_weights(&w)?;
            let centers = mode_centers(spec);
            let mut x = Matrix::zeros(spec.samples, 2);
            let mut labels = Vec::with_capacity(spec.samples);
            for r in 0..spec.samples {
                let j = rng::categorical(&mut rng, &w);
                for c in 0..2 {
                    x[(r, c)] = centers[(j, c)] + spec.noise * rng::normal(&mut rng);
                }
                labels.push(j);
            }
            Ok(Dataset { name: spec.kind.name().into(), samples: x, labels: Some(labels), centers: Some(centers), weights: Some(w) })
        }
        DataKind::TwoMoons => two_moons(spec, &mut rng),
        DataKind::Subspaces => subspaces(spec, &mut rng),
    }
}

fn two_moons(spec: &DataSpec, rng: &mut Rng) -> Result<Dataset> {
    let w = spec.weights.clone().unwrap_or_else(|| vec![0.5, 0.5]);
    ensure!(w.len() == 2, Config, "two-moons takes exactly 2 weights");
    check_weights(&w)?;
    let mut x = Matrix::zeros(spec.samples, 2);
    let mut labels = Vec::with_capacity(spec.samples);
    for r in 0..spec.samples {
        let j = rng::categorical(rng, &w);
        let theta = rng::uniform(rng, 0.0, std::f64::consts::PI);
        let (px, py) = moon_point(j, theta);
        x[(r, 0)] = px + spec.noise * rng::normal(rng);
        x[(r, 1)] = py + spec.noise * rng::normal(rng);
        labels.push(j);
    }
    let mut centers = Matrix::zeros(2, 2);
    let (a, b) = moon_point(0, std::f64::consts::FRAC_PI_2);
    centers.row_mut(0).copy_from_slice(&[a, b]);
    let (a, b) = moon_point(1, std::f64::consts::FRAC_PI_2);
    centers.row_mut(1).copy_from_slice(&[a, b]);
    Ok(Dataset { name: "two-moons".into(), samples: x, labels: Some(labels), centers: Some(centers), weights: Some(w) })
}

/// Upper arc `(cos θ, sin θ)`, lower arc `(1 - cos θ, 0.5 - sin θ)`.
pub fn moon_point(moon: usize, theta: f64) -> (f64, f64) {
    if moon == 0 {
        (theta.cos(), theta.sin())
    } else {
        (1.0 - theta.cos(), 0.5 - theta.sin())
    }
}

fn subspaces(spec: &DataSpec, rng: &mut Rng) -> Result<Dataset> {
    let (dim, k, dj) = (spec.ambient_dim, spec.modes, spec.subspace_dim);
    ensure!(k >= 1 && dj >= 1, Config, "subspaces need at least one mode of dimension >= 1");
    ensure!(k * dj <= dim, Config, "{} modes of dimension {} do not fit orthogonally in {} dimensions", k, dj, dim);
    // Gram-Schmidt on Gaussian columns
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(k * dj);
    while basis.len() < k * dj {
        let mut v: Vec<f64> = (0..dim).map(|_| rng::normal(rng)).collect();
        for b in &basis {
            let p = dot(&v, b);
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
        }
        let n = dot(&v, &v).sqrt();
        if n > 1e-8 {
            basis.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    let per = spec.samples;
    let mut x = Matrix::zeros(k * per, dim);
    let mut labels = Vec::with_capacity(k * per);
    for j in 0..k {
        for s in 0..per {
            let r = j * per + s;
            for b in &basis[j * dj..(j + 1) * dj] {
                let c = rng::normal(rng);
                x.row_mut(r).iter_mut().zip(b).for_each(|(v, e)| *v += c * e);
            }
            if spec.noise > 0.0 {
                x.row_mut(r).iter_mut().for_each(|v| *v += spec.noise * rng::normal(rng));
            }
            labels.push(j);
        }
    }
    Ok(Dataset {
        name: "subspaces".into(),
        samples: x,
        labels: Some(labels),
        centers: None,
        weights: Some(vec![1.0 / k as f64; k]),
    })
}

pub fn write_csv(ds: &Dataset, path: &Path) -> Result<()> {
    ds.validate()?;
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    let mut header: Vec<String> = (0..ds.dim()).map(|c| format!("x{c}")).collect();
    if ds.labels.is_some() {
        header.push("label".into());
    }
    w.write_record(&header).map_err(csv_err)?;
    for r in 0..ds.len() {
        let mut rec: Vec<String> = ds.samples.row(r).iter().map(|v| format!("{v:?}")).collect();
        if let Some(l) = &ds.labels {
            rec.push(l[r].to_string());
        }
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> MgsError {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => MgsError::Io(io),
            other => MgsError::format(format!("{other:?}")),
        }
    } else {
        MgsError::format(format!("csv: {e}"))
    }
}

pub fn read_csv(path: &Path) -> Result<Dataset> {
    let mut rd = csv::Reader::from_reader(BufReader::new(File::open(path)?));
    let header: Vec<String> = rd.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
    let has_label = header.last().map(|h| h == "label").unwrap_or(false);
    let dim = header.len() - usize::from(has_label);
    ensure!(dim > 0, Format, "{}: no feature columns", path.display());
    for (c, h) in header.iter().take(dim).enumerate() {
        ensure!(*h == format!("x{c}"), Format, "{}: column {} is `{}`, expected `x{}`", path.display(), c, h, c);
    }
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for (line, rec) in rd.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        ensure!(rec.len() == header.len(), Format, "{}: row {} has {} fields", path.display(), line + 1, rec.len());
        for f in rec.iter().take(dim) {
            data.push(f.trim().parse::<f64>().map_err(|_| MgsError::format(format!("{}: bad number `{f}` in row {}", path.display(), line + 1)))?);
        }
        if has_label {
            let f = &rec[dim];
            labels.push(f.trim().parse::<usize>().map_err(|_| MgsError::format(format!("{}: bad label `{f}` in row {}", path.display(), line + 1)))?);
        }
    }
    let n = data.len() / dim;
    let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    Ok(Dataset { name, samples: Matrix::from_vec(n, dim, data)?, labels: has_label.then_some(labels), centers: None, weights: None })
}

pub const BINARY_MAGIC: &[u8; 4] = b"MGSD";

pub fn write_binary(samples: &Matrix, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(BINARY_MAGIC)?;
    w.write_all(&(samples.cols() as u32).to_le_bytes())?;
    w.write_all(&(samples.rows() as u64).to_le_bytes())?;
    for v in samples.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_binary(path: &Path) -> Result<Matrix> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    ensure!(bytes.len() >= 16 && &bytes[..4] == BINARY_MAGIC, Format, "{}: not an MGSD file", path.display());
    let dim = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    let n = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = &bytes[16..];
    ensure!(
        n.checked_mul(dim).and_then(|c| c.checked_mul(8)) == Some(body.len()),
        Format,
        "{}: header says {}x{} but payload has {} bytes",
        path.display(),
        n,
        dim,
        body.len()
    );
    let data = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    Matrix::from_vec(n, dim, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::singular_values;

    #[test]
    fn ring_proportions_near_uniform() {
        let spec = DataSpec { samples: 10_000, ..DataSpec::new(DataKind::GmmRing) };
        let ds = make_data(&spec, 3).unwrap();
        for p in ds.label_proportions(8).unwrap() {
            assert!((p - 0.125).abs() < 0.02, "{p}");
        }
    }

    #[test]
    fn skewed_default_split() {
        let spec = DataSpec::new(DataKind::GmmSkewed);
        let w = spec.resolved_weights();
        assert!((w[0] - 0.61).abs() < 1e-12 && (w[1] - 0.39).abs() < 1e-12);
        let ds = make_data(&DataSpec { samples: 20_000, ..spec }, 1).unwrap();
        let p = ds.label_proportions(2).unwrap();
        assert!((p[0] - 0.61).abs() < 0.015, "{p:?}");
    }

    #[test]
    fn bad_weights_rejected() {
        let spec = DataSpec { weights: Some(vec![0.5, 0.6]), ..DataSpec::new(DataKind::GmmSkewed) };
        assert!(make_data(&spec, 0).is_err());
    }

    #[test]
    fn subspace_modes_have_rank_two() {
        let ds = make_data(&DataSpec::new(DataKind::Subspaces), 5).unwrap();
        assert_eq!(ds.samples.shape(), (300, 20));
        let labels = ds.labels.as_ref().unwrap();
        for j in 0..3 {
            let idx: Vec<usize> = (0..300).filter(|&i| labels[i] == j).collect();
            let sv = singular_values(&ds.samples.select_rows(&idx)).unwrap();
            assert!(sv[1] > 1.0 && sv[2] < 1e-10 * sv[0], "{sv:?}");
        }
    }

    #[test]
    fn noiseless_moons_lie_on_arcs() {
        let spec = DataSpec { noise: 0.0, samples: 500, ..DataSpec::new(DataKind::TwoMoons) };
        let ds = make_data(&spec, 2).unwrap();
        for (r, &l) in ds.labels.as_ref().unwrap().iter().enumerate() {
            let (x, y) = (ds.samples[(r, 0)], ds.samples[(r, 1)]);
            let (cx, cy) = if l == 0 { (0.0, 0.0) } else { (1.0, 0.5) };
            assert!((((x - cx).powi(2) + (y - cy).powi(2)).sqrt() - 1.0).abs() < 1e-12);
            assert!(if l == 0 { y >= 0.0 } else { y <= 0.5 + 1e-15 });
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = DataSpec::new(DataKind::GmmRing);
        assert_eq!(make_data(&spec, 4).unwrap(), make_data(&spec, 4).unwrap());
        assert_ne!(make_data(&spec, 4).unwrap().samples, make_data(&spec, 5).unwrap().samples);
    }

    #[test]
    fn csv_and_binary_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ds = make_data(&DataSpec { samples: 50, ..DataSpec::new(DataKind::GmmRing) }, 1).unwrap();
        let p = dir.path().join("d.csv");
        write_csv(&ds, &p).unwrap();
        let back = read_csv(&p).unwrap();
        assert_eq!(back.samples, ds.samples);
        assert_eq!(back.labels, ds.labels);
        let b = dir.path().join("d.bin");
        write_binary(&ds.samples, &b).unwrap();
        assert_eq!(read_binary(&b).unwrap(), ds.samples);
        let raw = std::fs::read(&b).unwrap();
        assert_eq!(&raw[..4], b"MGSD");
        assert_eq!(raw.len(), 16 + 50 * 2 * 8);
    }

    #[test]
    fn malformed_inputs_are_format_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.csv");
        std::fs::write(&p, "x0,y\n1,2\n").unwrap();
        assert!(matches!(read_csv(&p), Err(MgsError::Format(_))));
        let b = dir.path().join("bad.bin");
        std::fs::write(&b, b"MGSD\x01\0\0\0\x05\0\0\0\0\0\0\0").unwrap();
        assert!(matches!(read_binary(&b), Err(MgsError::Format(_))));
    }
}
