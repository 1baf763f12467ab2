//! Datasets: the robust/non-robust feature model sampler, 2-D Gaussian
//! mixtures, and comma-separated text files.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::rng::{streams, SeedStream};
use crate::tensor::Tensor;
use crate::theory::FeatureModelSpec;

/// Label domain of a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    /// Labels in `{-1, +1}`, mapped to class ids `-1 -> 0`, `+1 -> 1`.
    Binary,
    /// Labels in `0..classes`.
    Multiclass(usize),
}

impl Task {
    pub fn num_classes(&self) -> usize {
        match self {
            Task::Binary => 2,
            Task::Multiclass(c) => *c,
        }
    }

    /// Class id of a raw label.
    pub fn class_of(&self, label: i64) -> Result<usize> {
        match (self, label) {
            (Task::Binary, -1) => Ok(0),
            (Task::Binary, 1) => Ok(1),
            (Task::Binary, _) => Err(Error::InvalidLabel {
                label,
                reason: "binary labels must be -1 or +1".into(),
            }),
            (Task::Multiclass(c), l) if l >= 0 && (l as usize) < *c => Ok(l as usize),
            (Task::Multiclass(c), _) => Err(Error::InvalidLabel {
                label,
                reason: format!("expected a class id in 0..{c}"),
            }),
        }
    }

    /// Raw label of a class id.
    pub fn label_of(&self, class: usize) -> i64 {
        match self {
            Task::Binary => {
                if class == 1 {
                    1
                } else {
                    -1
                }
            }
            Task::Multiclass(_) => class as i64,
        }
    }
}

/// Provenance of a dataset.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetMeta {
    pub generator: String,
    pub params: String,
    pub seed: Option<u64>,
    pub source: Option<PathBuf>,
}

/// Feature matrix `[N, d]` plus one label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Tensor,
    pub y: Vec<i64>,
    pub task: Task,
    pub meta: DatasetMeta,
}

impl Dataset {
    pub fn new(x: Tensor, y: Vec<i64>, task: Task, meta: DatasetMeta) -> Result<Self> {
        let (rows, _) = x
            .dims2()
            .ok_or_else(|| Error::InvalidTensor(format!("dataset features must be a matrix, got {:?}", x.shape())))?;
        if rows != y.len() {
            return Err(Error::ShapeMismatch {
                op: "dataset",
                left: x.shape().to_vec(),
                right: vec![y.len()],
            });
        }
        for &label in &y {
            task.class_of(label)?;
        }
        Ok(Self { x, y, task, meta })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.dims2().map_or(0, |(_, d)| d)
    }

    /// Class ids of every label.
    pub fn classes(&self) -> Vec<usize> {
        self.y
            .iter()
            .map(|&l| self.task.class_of(l).expect("labels validated at construction"))
            .collect()
    }

    /// Rows at `indices`, in order.
    pub fn select(&self, indices: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        let d = self.dim();
        let mut data = Vec::with_capacity(indices.len() * d);
        let mut classes = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(self.x.row(i));
            classes.push(self.task.class_of(self.y[i])?);
        }
        Ok((Tensor::matrix(indices.len(), d, data)?, classes))
    }
}

/// Draws `samples` points from the feature model. Deterministic in `seed`.
pub fn sample_feature_model(spec: &FeatureModelSpec, samples: usize, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    if samples == 0 {
        return Err(Error::Precondition("need at least one sample".into()));
    }
    let d = spec.dim();
    let mut rng = SeedStream::new(seed, streams::FEATURE_MODEL);
    let mut x = Vec::with_capacity(samples * d);
    let mut y = Vec::with_capacity(samples);
    for _ in 0..samples {
        let label: f64 = if rng.bernoulli(0.5) { 1.0 } else { -1.0 };
        let robust = if rng.bernoulli(spec.p) { label } else { -label };
        x.push(robust);
        for _ in 0..spec.n {
            x.push(spec.eta * label + rng.normal());
        }
        y.push(label as i64);
    }
    Dataset::new(
        Tensor::matrix(samples, d, x)?,
        y,
        Task::Binary,
        DatasetMeta {
            generator: "feature_model".into(),
            params: format!("p={} eta={} n={}", spec.p, spec.eta, spec.n),
            seed: Some(seed),
            source: None,
        },
    )
}

/// One Gaussian blob of a 2-D mixture.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Blob {
    pub center: [f64; 2],
    pub class: usize,
}

/// Isotropic Gaussian blobs in the plane.
///
/// Sample `i` belongs to class `i mod C`, so classes are balanced; within a
/// class the blob is chosen uniformly. Labels are class ids.
pub fn sample_mixture2d(blobs: &[Blob], spread: f64, samples: usize, seed: u64) -> Result<Dataset> {
    if blobs.len() < 2 {
        return Err(Error::Precondition("a mixture needs at least two centers".into()));
    }
    if !(spread > 0.0 && spread.is_finite()) {
        return Err(Error::Precondition(format!("spread = {spread} must be positive")));
    }
    if samples == 0 {
        return Err(Error::Precondition("need at least one sample".into()));
    }
    let classes = blobs.iter().map(|b| b.class).max().unwrap_or(0) + 1;
    let per_class: Vec<Vec<&Blob>> = (0..classes)
        .map(|c| blobs.iter().filter(|b| b.class == c).collect())
        .collect();
    if let Some(c) = per_class.iter().position(Vec::is_empty) {
        return Err(Error::Precondition(format!("class {c} has no center")));
    }

    let mut rng = SeedStream::new(seed, streams::MIXTURE);
    let mut x = Vec::with_capacity(samples * 2);
    let mut y = Vec::with_capacity(samples);
    for i in 0..samples {
        let class = i % classes;
        let choices = &per_class[class];
        let blob = choices[rng.below(choices.len())];
        x.push(blob.center[0] + spread * rng.normal());
        x.push(blob.center[1] + spread * rng.normal());
        y.push(class as i64);
    }
    let centers = blobs
        .iter()
        .map(|b| format!("({},{})->{}", b.center[0], b.center[1], b.class))
        .collect::<Vec<_>>()
        .join(" ");
    Dataset::new(
        Tensor::matrix(samples, 2, x)?,
        y,
        Task::Multiclass(classes),
        DatasetMeta {
            generator: "mixture2d".into(),
            params: format!("spread={spread} centers={centers}"),
            seed: Some(seed),
            source: None,
        },
    )
}

/// Expected layout of a delimited file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DelimitedSchema {
    pub features: usize,
    pub task: Task,
}

/// Reads one sample per line: `features` comma-separated reals followed by
/// the label. Blank lines and lines starting with `#` are skipped.
pub fn load_delimited(path: impl AsRef<Path>, schema: DelimitedSchema) -> Result<Dataset> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };

    let mut x = Vec::new();
    let mut y = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != schema.features + 1 {
            return Err(parse_err(
                line_no,
                format!(
                    "expected {} features and a label, found {} fields",
                    schema.features,
                    fields.len()
                ),
            ));
        }
        for f in &fields[..schema.features] {
            let v: f64 = f
                .parse()
                .map_err(|_| parse_err(line_no, format!("`{f}` is not a number")))?;
            if !v.is_finite() {
                return Err(parse_err(line_no, format!("`{f}` is not finite")));
            }
            x.push(v);
        }
        let label_field = fields[schema.features];
        let label: i64 = label_field
            .parse::<i64>()
            .or_else(|_| match label_field.parse::<f64>() {
                Ok(v) if v.fract() == 0.0 => Ok(v as i64),
                _ => Err(()),
            })
            .map_err(|_| parse_err(line_no, format!("label `{label_field}` is not an integer")))?;
        schema
            .task
            .class_of(label)
            .map_err(|e| parse_err(line_no, e.to_string()))?;
        y.push(label);
    }
    if y.is_empty() {
        return Err(parse_err(0, "no samples".into()));
    }
    let rows = y.len();
    Dataset::new(
        Tensor::matrix(rows, schema.features, x)?,
        y,
        schema.task,
        DatasetMeta {
            generator: "delimited".into(),
            params: String::new(),
            seed: None,
            source: Some(path.to_path_buf()),
        },
    )
}

/// Serializes a dataset in the format read by [`load_delimited`]. Reals use
/// the shortest representation that parses back to the same `f64`.
pub fn to_delimited(dataset: &Dataset) -> String {
    let mut out = String::new();
    for (i, label) in dataset.y.iter().enumerate() {
        for v in dataset.x.row(i) {
            let _ = write!(out, "{v:?},");
        }
        let _ = writeln!(out, "{label}");
    }
    out
}

pub fn write_delimited(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, to_delimited(dataset))?;
    Ok(())
}
