//! Synthetic datasets: isotropic Gaussians and Gaussian mixtures, split into
//! train / validation / test draws from separate streams of one seed.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::evaluation::{AnalyticScoreModel, MixtureScoreModel};
use crate::nn::EpsModel;
use crate::numerics::tensor::fmt_f64;
use crate::numerics::{DenseTensor, RngState};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    Gaussian,
    Mixture2,
    Mixture8,
}

impl DatasetKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Gaussian => "gaussian",
            Self::Mixture2 => "mixture2",
            Self::Mixture8 => "mixture8",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(Self::Gaussian),
            "mixture2" => Ok(Self::Mixture2),
            "mixture8" => Ok(Self::Mixture8),
            other => Err(Error::Parse(format!("unknown dataset kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    pub dim: usize,
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub scales: Vec<f64>,
    pub train: usize,
    pub validation: usize,
    pub test: usize,
    pub seed: u64,
}

/// Stream tags for the three splits.
pub const SPLIT_TAGS: [(&str, u64); 3] = [("train", 1), ("validation", 2), ("test", 3)];

impl DatasetSpec {
    pub fn gaussian(mean: Vec<f64>, scale: f64, seed: u64) -> Self {
        Self {
            kind: DatasetKind::Gaussian,
            dim: mean.len(),
            weights: vec![1.0],
            means: vec![mean],
            scales: vec![scale],
            train: 4096,
            validation: 1024,
            test: 1024,
            seed,
        }
    }

    /// Two equal components at `±(3, 0)` with unit scale.
    pub fn mixture2(seed: u64) -> Self {
        Self {
            kind: DatasetKind::Mixture2,
            dim: 2,
            weights: vec![0.5, 0.5],
            means: vec![vec![3.0, 0.0], vec![-3.0, 0.0]],
            scales: vec![1.0, 1.0],
            ..Self::gaussian(vec![0.0, 0.0], 1.0, seed)
        }
    }

    /// Eight equal components on a radius-4 circle, scale 0.3.
    pub fn mixture8(seed: u64) -> Self {
        let means = (0..8)
            .map(|k| {
                let th = k as f64 * std::f64::consts::PI / 4.0;
                vec![4.0 * th.cos(), 4.0 * th.sin()]
            })
            .collect();
        Self {
            kind: DatasetKind::Mixture8,
            dim: 2,
            weights: vec![0.125; 8],
            means,
            scales: vec![0.3; 8],
            ..Self::gaussian(vec![0.0, 0.0], 1.0, seed)
        }
    }

    /// Default parameters for `kind` in `dim` dimensions (mixtures are 2-D).
    pub fn preset(kind: DatasetKind, dim: usize, seed: u64) -> Result<Self> {
        match kind {
            DatasetKind::Gaussian => Ok(Self::gaussian(vec![0.0; dim], 1.0, seed)),
            _ if dim != 2 => Err(Error::Invalid(format!("{} is two-dimensional", kind.name()))),
            DatasetKind::Mixture2 => Ok(Self::mixture2(seed)),
            DatasetKind::Mixture8 => Ok(Self::mixture8(seed)),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.weights.len();
        if k == 0 || self.means.len() != k || self.scales.len() != k {
            return Err(Error::Invalid("component parameter lengths differ".into()));
        }
        if self.dim == 0 || self.means.iter().any(|m| m.len() != self.dim) {
            return Err(Error::Invalid("component means must match the dimension".into()));
        }
        if self.weights.iter().any(|&w| !(w > 0.0)) || (self.weights.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(Error::Invalid("weights must be positive and sum to 1".into()));
        }
        if self.scales.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::Invalid("scales must be positive".into()));
        }
        if self.train == 0 || self.validation == 0 || self.test == 0 {
            return Err(Error::Invalid("every split needs at least one sample".into()));
        }
        if self.kind == DatasetKind::Gaussian && k != 1 {
            return Err(Error::Invalid("gaussian data has one component".into()));
        }
        Ok(())
    }

    pub fn split_rng(&self, tag: u64) -> RngState {
        RngState::new(self.seed).derive(tag)
    }

    /// The exact noise predictor for this data law.
    pub fn oracle(&self) -> Result<Box<dyn EpsModel>> {
        self.validate()?;
        if self.means.len() == 1 {
            Ok(Box::new(AnalyticScoreModel::new(self.means[0].clone(), self.scales[0])?))
        } else {
            Ok(Box::new(MixtureScoreModel::new(
                self.weights.clone(),
                self.means.clone(),
                self.scales.clone(),
            )?))
        }
    }

    pub fn to_sidecar(&self) -> String {
        let list = |v: &[f64]| v.iter().map(|x| fmt_f64(*x)).collect::<Vec<_>>().join(",");
        let mut out = String::new();
        writeln!(out, "kind = {}", self.kind.name()).unwrap();
        writeln!(out, "dim = {}", self.dim).unwrap();
        writeln!(out, "weights = {}", list(&self.weights)).unwrap();
        let means: Vec<String> = self.means.iter().map(|m| list(m)).collect();
        writeln!(out, "means = {}", means.join(";")).unwrap();
        writeln!(out, "scales = {}", list(&self.scales)).unwrap();
        writeln!(out, "train = {}", self.train).unwrap();
        writeln!(out, "validation = {}", self.validation).unwrap();
        writeln!(out, "test = {}", self.test).unwrap();
        writeln!(out, "seed = {}", self.seed).unwrap();
        out
    }

    pub fn from_sidecar(text: &str) -> Result<Self> {
        let kv = parse_key_values(text)?;
        let get = |k: &str| {
            kv.iter()
                .find(|(key, _)| key == k)
                .map(|(_, v)| v.as_str())
                .ok_or_else(|| Error::Parse(format!("dataset spec missing {k:?}")))
        };
        let spec = Self {
            kind: DatasetKind::parse(get("kind")?)?,
            dim: parse_num(get("dim")?)?,
            weights: parse_list(get("weights")?)?,
            means: get("means")?.split(';').map(parse_list).collect::<Result<_>>()?,
            scales: parse_list(get("scales")?)?,
            train: parse_num(get("train")?)?,
            validation: parse_num(get("validation")?)?,
            test: parse_num(get("test")?)?,
            seed: parse_num(get("seed")?)?,
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train: DenseTensor,
    pub validation: DenseTensor,
    pub test: DenseTensor,
}

pub fn sample_law(spec: &DatasetSpec, count: usize, rng: &mut RngState) -> Result<DenseTensor> {
    let d = spec.dim;
    let mut out = Vec::with_capacity(count * d);
    let mut z = vec![0.0; d];
    for _ in 0..count {
        let c = pick_component(&spec.weights, rng.uniform());
        rng.fill_normal(&mut z);
        for k in 0..d {
            out.push(spec.means[c][k] + spec.scales[c] * z[k]);
        }
    }
    DenseTensor::new(vec![count, d], out)
}

fn pick_component(weights: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    weights.len() - 1
}

pub fn generate(spec: &DatasetSpec) -> Result<Dataset> {
    spec.validate()?;
    let counts = [spec.train, spec.validation, spec.test];
    let mut sets = SPLIT_TAGS
        .iter()
        .zip(counts)
        .map(|(&(_, tag), n)| sample_law(spec, n, &mut spec.split_rng(tag)));
    Ok(Dataset {
        train: sets.next().unwrap()?,
        validation: sets.next().unwrap()?,
        test: sets.next().unwrap()?,
    })
}

/// Writes `train.txt`, `validation.txt`, `test.txt` and `spec.txt` into `dir`.
pub fn save_dataset(dir: &Path, spec: &DatasetSpec, data: &Dataset) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (name, set) in [("train", &data.train), ("validation", &data.validation), ("test", &data.test)] {
        std::fs::write(dir.join(format!("{name}.txt")), set.to_text())?;
    }
    std::fs::write(dir.join("spec.txt"), spec.to_sidecar())?;
    Ok(())
}

pub fn load_dataset(dir: &Path) -> Result<(DatasetSpec, Dataset)> {
    let spec = DatasetSpec::from_sidecar(&std::fs::read_to_string(dir.join("spec.txt"))?)?;
    let load = |name: &str| -> Result<DenseTensor> {
        let t = DenseTensor::from_text(&std::fs::read_to_string(dir.join(format!("{name}.txt")))?)?;
        if t.cols() != spec.dim {
            return Err(Error::ShapeMismatch(format!("{name} split has {} columns", t.cols())));
        }
        Ok(t)
    };
    let data = Dataset {
        train: load("train")?,
        validation: load("validation")?,
        test: load("test")?,
    };
    Ok((spec, data))
}

/// Flat `key = value` lines; `#` starts a comment. Later keys do not
/// override earlier ones silently: duplicates are an error.
pub fn parse_key_values(text: &str) -> Result<Vec<(String, String)>> {
    let mut out: Vec<(String, String)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("line {}: expected `key = value`", i + 1)))?;
        let k = k.trim().to_string();
        if k.is_empty() {
            return Err(Error::Parse(format!("line {}: empty key", i + 1)));
        }
        if out.iter().any(|(e, _)| *e == k) {
            return Err(Error::Parse(format!("line {}: duplicate key {k:?}", i + 1)));
        }
        out.push((k, v.trim().to_string()));
    }
    Ok(out)
}

fn parse_num<T: std::str::FromStr>(s: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    s.trim().parse().map_err(|e| Error::Parse(format!("{s:?}: {e}")))
}

fn parse_list(s: &str) -> Result<Vec<f64>> {
    s.split(',').map(parse_num).collect()
}
