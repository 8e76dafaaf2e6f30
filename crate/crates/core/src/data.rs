//! Frame datasets: synthetic generation, context splicing, normalization,
//! label corruption and the `FRN1` binary file format.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Rng, Tensor};

pub const DATASET_MAGIC: &[u8; 4] = b"FRN1";
pub const DATASET_VERSION: u32 = 1;

/// Divisor floor used when a feature column has (near) zero spread.
pub const STD_FLOOR: f64 = 1e-8;

/// Labelled feature frames with a class → group map.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    frames: Tensor,
    labels: Vec<usize>,
    num_classes: usize,
    num_groups: usize,
    group_of: Vec<usize>,
    true_labels: Option<Vec<usize>>,
    grid: Option<(usize, usize)>,
}

impl Dataset {
    pub fn new(
        frames: Tensor,
        labels: Vec<usize>,
        num_classes: usize,
        group_of: Vec<usize>,
    ) -> Result<Self> {
        let num_groups = group_of.iter().max().map_or(0, |g| g + 1);
        let ds = Dataset {
            frames,
            labels,
            num_classes,
            num_groups,
            group_of,
            true_labels: None,
            grid: None,
        };
        ds.validate()?;
        Ok(ds)
    }

    /// Same data with an explicit group count (may exceed the largest used id).
    pub fn with_num_groups(mut self, num_groups: usize) -> Result<Self> {
        self.num_groups = num_groups;
        self.validate()?;
        Ok(self)
    }

    pub fn with_grid(mut self, grid: Option<(usize, usize)>) -> Result<Self> {
        self.grid = grid;
        self.validate()?;
        Ok(self)
    }

    pub fn with_true_labels(mut self, true_labels: Option<Vec<usize>>) -> Result<Self> {
        self.true_labels = true_labels;
        self.validate()?;
        Ok(self)
    }

    /// Replaces the labels, keeping everything else.
    pub fn relabeled(&self, labels: Vec<usize>) -> Result<Self> {
        let mut ds = self.clone();
        ds.labels = labels;
        ds.validate()?;
        Ok(ds)
    }

    fn validate(&self) -> Result<()> {
        let shape = self.frames.shape();
        if shape.len() != 2 {
            return Err(Error::format(
                "frames",
                format!("expected a matrix, got {shape:?}"),
            ));
        }
        let (n, d) = (shape[0], shape[1]);
        if n == 0 || d == 0 {
            return Err(Error::format(
                "frames",
                format!("need N ≥ 1 and D ≥ 1, got {n}×{d}"),
            ));
        }
        if !self.frames.is_finite() {
            return Err(Error::format("frames", "non-finite value"));
        }
        if self.labels.len() != n {
            return Err(Error::format(
                "labels",
                format!("{} labels for {n} frames", self.labels.len()),
            ));
        }
        if self.num_classes == 0 {
            return Err(Error::format("num_classes", "must be at least 1"));
        }
        if let Some(bad) = self.labels.iter().find(|&&l| l >= self.num_classes) {
            return Err(Error::format(
                "labels",
                format!("label {bad} out of range for {} classes", self.num_classes),
            ));
        }
        if self.group_of.len() != self.num_classes {
            return Err(Error::format(
                "group_of",
                format!(
                    "{} entries for {} classes",
                    self.group_of.len(),
                    self.num_classes
                ),
            ));
        }
        if self.num_groups == 0 || self.num_groups > self.num_classes {
            return Err(Error::format(
                "num_groups",
                format!(
                    "{} groups for {} classes",
                    self.num_groups, self.num_classes
                ),
            ));
        }
        if let Some(bad) = self.group_of.iter().find(|&&g| g >= self.num_groups) {
            return Err(Error::format(
                "group_of",
                format!("group {bad} out of range for {} groups", self.num_groups),
            ));
        }
        if let Some(t) = &self.true_labels {
            if t.len() != n {
                return Err(Error::format(
                    "true_labels",
                    format!("{} entries for {n} frames", t.len()),
                ));
            }
            if let Some(bad) = t.iter().find(|&&l| l >= self.num_classes) {
                return Err(Error::format(
                    "true_labels",
                    format!("label {bad} out of range"),
                ));
            }
        }
        if let Some((t, f)) = self.grid {
            if t * f != d {
                return Err(Error::format(
                    "grid",
                    format!("{t}×{f} does not cover {d} features"),
                ));
            }
        }
        Ok(())
    }

    pub fn frames(&self) -> &Tensor {
        &self.frames
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.frames.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn num_groups(&self) -> usize {
        self.num_groups
    }

    pub fn group_of(&self) -> &[usize] {
        &self.group_of
    }

    pub fn true_labels(&self) -> Option<&[usize]> {
        self.true_labels.as_deref()
    }

    pub fn grid(&self) -> Option<(usize, usize)> {
        self.grid
    }

    /// Rows `indices` as a new dataset (labels, true labels and grid follow).
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let pick = |v: &[usize]| indices.iter().map(|&i| v[i]).collect::<Vec<_>>();
        let ds = Dataset {
            frames: self.frames.select_rows(indices),
            labels: pick(&self.labels),
            num_classes: self.num_classes,
            num_groups: self.num_groups,
            group_of: self.group_of.clone(),
            true_labels: self.true_labels.as_deref().map(pick),
            grid: self.grid,
        };
        ds.validate()?;
        Ok(ds)
    }

    /// Splices ±`context` neighbouring frames into every row; the grid becomes
    /// `(2c+1, D)`.
    pub fn spliced(&self, context: usize) -> Result<Self> {
        let d = self.dim();
        let mut ds = self.clone();
        ds.frames = splice(&self.frames, context)?;
        ds.grid = Some((2 * context + 1, d));
        ds.validate()?;
        Ok(ds)
    }

    /// Applies one fixed column permutation (seeded) to every frame. The grid
    /// layout is kept so spatial layers see scrambled time-frequency structure.
    pub fn permuted_features(&self, rng: &mut Rng) -> Result<Self> {
        let d = self.dim();
        let perm = rng.permutation(d);
        let mut data = Vec::with_capacity(self.frames.len());
        for i in 0..self.len() {
            let row = self.frames.row(i);
            data.extend(perm.iter().map(|&j| row[j]));
        }
        let mut ds = self.clone();
        ds.frames = Tensor::new(vec![self.len(), d], data)?;
        Ok(ds)
    }
}

/// Concatenates frames `i−c ..= i+c` into row `i`, replicating edge frames.
pub fn splice(frames: &Tensor, context: usize) -> Result<Tensor> {
    if frames.shape().len() != 2 {
        return Err(Error::Dimension(format!(
            "splice expects N×D frames, got {:?}",
            frames.shape()
        )));
    }
    let (n, d) = (frames.rows(), frames.cols());
    let width = 2 * context + 1;
    let mut data = Vec::with_capacity(n * d * width);
    for i in 0..n {
        for off in 0..width {
            let src = (i + off).saturating_sub(context).min(n.saturating_sub(1));
            data.extend_from_slice(frames.row(src));
        }
    }
    Tensor::new(vec![n, d * width], data)
}

/// Per-dimension statistics from [`normalize_global`].
#[derive(Debug, Clone, PartialEq)]
pub struct Normalization {
    pub mean: Tensor,
    pub std: Tensor,
}

impl Normalization {
    pub fn apply(&self, ds: &Dataset) -> Result<Dataset> {
        let d = ds.dim();
        if self.mean.len() != d {
            return Err(Error::Dimension(format!(
                "normalization has {} dims, data has {d}",
                self.mean.len()
            )));
        }
        let mean = self.mean.data();
        let std = self.std.data();
        let mut out = ds.frames.clone();
        for row in out.data_mut().chunks_mut(d) {
            for ((v, m), s) in row.iter_mut().zip(mean).zip(std) {
                *v = (*v - m) / s.max(STD_FLOOR);
            }
        }
        let mut res = ds.clone();
        res.frames = out;
        Ok(res)
    }
}

/// Standardizes every feature column of the training set to zero mean and unit
/// variance, returning the statistics for dev/test splits.
pub fn normalize_global(train: &Dataset) -> Result<(Dataset, Normalization)> {
    let (n, d) = (train.len(), train.dim());
    if n < 2 {
        return Err(Error::Parameter(
            "global normalization needs at least 2 frames".into(),
        ));
    }
    let mut mean = vec![0.0; d];
    for i in 0..n {
        for (m, v) in mean.iter_mut().zip(train.frames.row(i)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut var = vec![0.0; d];
    for i in 0..n {
        for ((s, v), m) in var.iter_mut().zip(train.frames.row(i)).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let std: Vec<f64> = var.iter().map(|s| (s / n as f64).sqrt()).collect();
    let stats = Normalization {
        mean: Tensor::new(vec![d], mean)?,
        std: Tensor::new(vec![d], std)?,
    };
    Ok((stats.apply(train)?, stats))
}

/// How a corrupted label is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CorruptionMode {
    /// A different class from the same group.
    #[default]
    WithinGroup,
    /// Any different class.
    AnyClass,
}

/// Replaces each label, with probability `rate`, by a uniformly chosen
/// different sibling class of the same group. Originals go to `true_labels`.
pub fn corrupt_labels(ds: &Dataset, within_group_rate: f64, rng: &mut Rng) -> Result<Dataset> {
    corrupt_labels_with(ds, within_group_rate, CorruptionMode::WithinGroup, rng)
}

pub fn corrupt_labels_with(
    ds: &Dataset,
    rate: f64,
    mode: CorruptionMode,
    rng: &mut Rng,
) -> Result<Dataset> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::Parameter(format!(
            "corruption rate {rate} outside [0, 1]"
        )));
    }
    let members = group_members(ds.group_of(), ds.num_groups());
    if rate > 0.0 {
        match mode {
            CorruptionMode::WithinGroup => {
                if let Some(g) = members.iter().position(|m| m.len() == 1) {
                    return Err(Error::Parameter(format!(
                        "group {g} has a single class; within-group corruption needs at least 2"
                    )));
                }
            }
            CorruptionMode::AnyClass => {
                if ds.num_classes() < 2 {
                    return Err(Error::Parameter(
                        "corruption needs at least 2 classes".into(),
                    ));
                }
            }
        }
    }
    let mut labels = ds.labels.clone();
    for label in labels.iter_mut() {
        if rng.uniform() >= rate {
            continue;
        }
        let candidates: &[usize] = match mode {
            CorruptionMode::WithinGroup => &members[ds.group_of[*label]],
            CorruptionMode::AnyClass => &[],
        };
        *label = match mode {
            CorruptionMode::WithinGroup => {
                let pos = candidates.iter().position(|&c| c == *label).unwrap_or(0);
                let pick = rng.below(candidates.len() - 1);
                candidates[if pick >= pos { pick + 1 } else { pick }]
            }
            CorruptionMode::AnyClass => {
                let pick = rng.below(ds.num_classes - 1);
                if pick >= *label {
                    pick + 1
                } else {
                    pick
                }
            }
        };
    }
    let true_labels = ds.true_labels.clone().unwrap_or_else(|| ds.labels.clone());
    let mut out = ds.clone();
    out.labels = labels;
    out.true_labels = Some(true_labels);
    Ok(out)
}

/// Classes belonging to each group, in ascending order.
pub fn group_members(group_of: &[usize], num_groups: usize) -> Vec<Vec<usize>> {
    let mut members = vec![Vec::new(); num_groups];
    for (class, &g) in group_of.iter().enumerate() {
        members[g].push(class);
    }
    members
}

/// Parameters of the hierarchical Gaussian-cluster frame generator.
///
/// Group means are drawn around the origin at `group_separation` scale and
/// every subclass mean is offset from its group mean at `subclass_separation`
/// scale. Frames of one class are emitted in contiguous runs of `run_length`
/// (runs shuffled), so spliced context carries class evidence the way
/// neighbouring speech frames do. With `speakers > 0` every run also gets the
/// offset of one of `speakers` fixed random speakers (drawn at
/// `speaker_separation` scale), shared by all its frames. Classes then overlap
/// unless the speaker is worked out from the context, so the class boundaries
/// are no longer linear.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub groups: usize,
    pub subclasses: usize,
    pub dim: usize,
    pub frames_per_class: usize,
    pub group_separation: f64,
    pub subclass_separation: f64,
    pub noise_std: f64,
    pub run_length: usize,
    pub speakers: usize,
    pub speaker_separation: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            groups: 10,
            subclasses: 3,
            dim: 8,
            frames_per_class: 200,
            group_separation: 3.0,
            subclass_separation: 1.0,
            noise_std: 0.5,
            run_length: 1,
            speakers: 0,
            speaker_separation: 2.0,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn num_classes(&self) -> usize {
        self.groups * self.subclasses
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("groups", self.groups),
            ("subclasses", self.subclasses),
            ("dim", self.dim),
            ("frames_per_class", self.frames_per_class),
            ("run_length", self.run_length),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("data.{name} must be at least 1")));
            }
        }
        for (name, v) in [
            ("group_separation", self.group_separation),
            ("subclass_separation", self.subclass_separation),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!(
                    "data.{name} must be positive, got {v}"
                )));
            }
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::Config(format!(
                "data.noise_std must be ≥ 0, got {}",
                self.noise_std
            )));
        }
        if !(self.speaker_separation >= 0.0 && self.speaker_separation.is_finite()) {
            return Err(Error::Config(format!(
                "data.speaker_separation must be ≥ 0, got {}",
                self.speaker_separation
            )));
        }
        Ok(())
    }
}

/// Fixed class and speaker means for one [`SyntheticSpec`]; draws any number of
/// independent splits from the same distribution.
#[derive(Debug, Clone)]
pub struct SyntheticSource {
    spec: SyntheticSpec,
    class_means: Vec<Vec<f64>>,
    speaker_means: Vec<Vec<f64>>,
}

impl SyntheticSource {
    pub fn new(spec: &SyntheticSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = Rng::derive(spec.seed, 0);
        let d = spec.dim;
        let mut class_means = Vec::with_capacity(spec.num_classes());
        for _ in 0..spec.groups {
            let centre: Vec<f64> = (0..d)
                .map(|_| spec.group_separation * rng.standard_normal())
                .collect();
            for _ in 0..spec.subclasses {
                class_means.push(
                    centre
                        .iter()
                        .map(|c| c + spec.subclass_separation * rng.standard_normal())
                        .collect(),
                );
            }
        }
        let speaker_means = (0..spec.speakers)
            .map(|_| {
                (0..d)
                    .map(|_| spec.speaker_separation * rng.standard_normal())
                    .collect()
            })
            .collect();
        Ok(SyntheticSource {
            spec: spec.clone(),
            class_means,
            speaker_means,
        })
    }

    /// Draws `frames_per_class` frames of every class on random stream `split`.
    pub fn sample(&self, frames_per_class: usize, split: u64) -> Result<Dataset> {
        let spec = &self.spec;
        let k = spec.num_classes();
        let d = spec.dim;
        let mut rng = Rng::derive(spec.seed, 1 + split);

        let mut runs: Vec<(usize, usize)> = Vec::new();
        for class in 0..k {
            let mut left = frames_per_class;
            while left > 0 {
                let len = left.min(spec.run_length);
                runs.push((class, len));
                left -= len;
            }
        }
        let order = rng.permutation(runs.len());

        let n = k * frames_per_class;
        let mut data = Vec::with_capacity(n * d);
        let mut labels = Vec::with_capacity(n);
        for &r in &order {
            let (class, len) = runs[r];
            let speaker = match self.speaker_means.len() {
                0 => None,
                s => Some(&self.speaker_means[rng.below(s)]),
            };
            for _ in 0..len {
                let mean = &self.class_means[class];
                for j in 0..d {
                    let offset = speaker.map_or(0.0, |s| s[j]);
                    data.push(mean[j] + offset + spec.noise_std * rng.standard_normal());
                }
                labels.push(class);
            }
        }
        let group_of = (0..k).map(|c| c / spec.subclasses).collect();
        Dataset::new(Tensor::new(vec![n, d], data)?, labels, k, group_of)?
            .with_num_groups(spec.groups)
    }
}

/// Generates the split-0 dataset described by `spec`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    SyntheticSource::new(spec)?.sample(spec.frames_per_class, 0)
}

/// Serializes a dataset in the `FRN1` format.
pub fn write_dataset<W: Write>(ds: &Dataset, mut w: W) -> Result<()> {
    w.write_all(DATASET_MAGIC)?;
    w.write_u32::<LittleEndian>(DATASET_VERSION)?;
    w.write_u64::<LittleEndian>(ds.len() as u64)?;
    w.write_u32::<LittleEndian>(to_u32(ds.dim(), "D")?)?;
    w.write_u32::<LittleEndian>(to_u32(ds.num_classes, "K")?)?;
    w.write_u32::<LittleEndian>(to_u32(ds.num_groups, "G")?)?;
    w.write_u8(ds.true_labels.is_some() as u8)?;
    w.write_u8(ds.grid.is_some() as u8)?;
    if let Some((t, f)) = ds.grid {
        w.write_u32::<LittleEndian>(to_u32(t, "T")?)?;
        w.write_u32::<LittleEndian>(to_u32(f, "F")?)?;
    }
    for &v in ds.frames.data() {
        w.write_f32::<LittleEndian>(v as f32)?;
    }
    for &l in &ds.labels {
        w.write_u32::<LittleEndian>(l as u32)?;
    }
    for &g in &ds.group_of {
        w.write_u32::<LittleEndian>(g as u32)?;
    }
    if let Some(t) = &ds.true_labels {
        for &l in t {
            w.write_u32::<LittleEndian>(l as u32)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn to_u32(v: usize, field: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::format(field, format!("{v} does not fit in u32")))
}

/// Maps end-of-file into a format error naming the field being read.
fn field<T>(r: std::io::Result<T>, name: &str) -> Result<T> {
    r.map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::format(name, "file truncated"),
        _ => Error::Io(e),
    })
}

pub fn read_dataset<R: Read>(mut r: R) -> Result<Dataset> {
    let mut magic = [0u8; 4];
    field(r.read_exact(&mut magic), "magic")?;
    if &magic != DATASET_MAGIC {
        return Err(Error::format(
            "magic",
            format!("expected FRN1, found {magic:?}"),
        ));
    }
    let version = field(r.read_u32::<LittleEndian>(), "version")?;
    if version != DATASET_VERSION {
        return Err(Error::format(
            "version",
            format!("unsupported version {version}"),
        ));
    }
    let n = field(r.read_u64::<LittleEndian>(), "N")?;
    let d = field(r.read_u32::<LittleEndian>(), "D")? as usize;
    let k = field(r.read_u32::<LittleEndian>(), "K")? as usize;
    let g = field(r.read_u32::<LittleEndian>(), "G")? as usize;
    let has_true = field(r.read_u8(), "has_true_labels")?;
    let has_grid = field(r.read_u8(), "has_grid")?;
    if has_true > 1 {
        return Err(Error::format(
            "has_true_labels",
            format!("flag byte {has_true}"),
        ));
    }
    if has_grid > 1 {
        return Err(Error::format("has_grid", format!("flag byte {has_grid}")));
    }
    let grid = if has_grid == 1 {
        let t = field(r.read_u32::<LittleEndian>(), "T")? as usize;
        let f = field(r.read_u32::<LittleEndian>(), "F")? as usize;
        Some((t, f))
    } else {
        None
    };
    if n == 0 || d == 0 {
        return Err(Error::format(
            "N",
            format!("need N ≥ 1 and D ≥ 1, got {n}×{d}"),
        ));
    }
    let n = usize::try_from(n).map_err(|_| Error::format("N", "too large"))?;
    let cells = n
        .checked_mul(d)
        .ok_or_else(|| Error::format("N", "N·D overflows"))?;

    // read in bounded chunks so a lying header cannot force a huge allocation
    let mut frames = Vec::new();
    let mut buf = vec![0f32; 1 << 16];
    let mut left = cells;
    while left > 0 {
        let take = left.min(buf.len());
        field(r.read_f32_into::<LittleEndian>(&mut buf[..take]), "frames")?;
        frames.extend(buf[..take].iter().map(|&v| v as f64));
        left -= take;
    }
    let read_u32s = |r: &mut R, count: usize, name: &str| -> Result<Vec<usize>> {
        let mut out = Vec::new();
        for _ in 0..count {
            out.push(field(r.read_u32::<LittleEndian>(), name)? as usize);
        }
        Ok(out)
    };
    let labels = read_u32s(&mut r, n, "labels")?;
    let group_of = read_u32s(&mut r, k, "group_of")?;
    let true_labels = if has_true == 1 {
        Some(read_u32s(&mut r, n, "true_labels")?)
    } else {
        None
    };
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(Error::format(
            "trailer",
            "unexpected bytes after the last field",
        ));
    }

    let ds = Dataset {
        frames: Tensor::new(vec![n, d], frames)?,
        labels,
        num_classes: k,
        num_groups: g,
        group_of,
        true_labels,
        grid,
    };
    ds.validate()?;
    Ok(ds)
}

pub fn save_dataset(path: impl AsRef<Path>, ds: &Dataset) -> Result<()> {
    write_dataset(ds, BufWriter::new(File::create(path)?))
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    read_dataset(BufReader::new(File::open(path)?))
}

/// Imports frames from CSV with a header `f0,...,f{D-1},label`. Every class
/// becomes its own group unless `group_of` is supplied.
pub fn load_csv(path: impl AsRef<Path>, group_of: Option<Vec<usize>>) -> Result<Dataset> {
    let mut reader = csv::Reader::from_path(path).map_err(csv_error)?;
    let headers = reader.headers().map_err(csv_error)?.clone();
    let cols = headers.len();
    if cols < 2 {
        return Err(Error::format(
            "header",
            "need at least one feature column and a label",
        ));
    }
    let d = cols - 1;
    for (j, h) in headers.iter().enumerate() {
        let want = if j == d {
            "label".to_string()
        } else {
            format!("f{j}")
        };
        if h.trim() != want {
            return Err(Error::format(
                "header",
                format!("column {j} is {h:?}, expected {want:?}"),
            ));
        }
    }
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(csv_error)?;
        for j in 0..d {
            let v: f64 = record[j].trim().parse().map_err(|_| {
                Error::format(
                    format!("row {} column f{j}", line + 1),
                    format!("{:?}", &record[j]),
                )
            })?;
            data.push(v);
        }
        let l: usize = record[d].trim().parse().map_err(|_| {
            Error::format(
                format!("row {} label", line + 1),
                format!("{:?}", &record[d]),
            )
        })?;
        labels.push(l);
    }
    let n = labels.len();
    if n == 0 {
        return Err(Error::format("frames", "no data rows"));
    }
    let k = match &group_of {
        Some(g) => g.len(),
        None => labels.iter().max().map_or(0, |m| m + 1),
    };
    let group_of = group_of.unwrap_or_else(|| (0..k).collect());
    Dataset::new(Tensor::new(vec![n, d], data)?, labels, k, group_of)
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::format("csv", format!("{other:?}")),
    }
}
