//! Samples, the synthetic generator, on-disk datasets, preprocessing,
//! augmentation and level-set targets.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use nnsam_core::autoconfig::{fingerprint, AugmentationPlan, Fingerprint, ImageView, Normalization};
use nnsam_core::levelset::{signed_distance, BinaryMask};
use nnsam_core::losses::{ClassStack, LevelSetStack};
use nnsam_core::metrics::LabelMask;
use nnsam_core::Grid;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{io_err, Error, Result};
use crate::nn::keyed_rng;
use crate::nn::resize::{bilinear, nearest};
use crate::pngio;

/// Channel-major float image.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn from_grid(g: Grid<f32>) -> Self {
        let (height, width) = g.shape();
        Self {
            channels: 1,
            height,
            width,
            data: g.into_vec(),
        }
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let p = self.height * self.width;
        &self.data[c * p..(c + 1) * p]
    }

    pub fn view(&self) -> ImageView<'_> {
        ImageView {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: &self.data,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub image: Image,
    pub label: LabelMask,
}

impl Sample {
    pub fn new(id: impl Into<String>, image: Image, label: LabelMask) -> Result<Self> {
        if label.labels().shape() != (image.height, image.width) {
            return Err(Error::ShapeMismatch(format!(
                "label {:?} does not match image {}x{}",
                label.labels().shape(),
                image.height,
                image.width
            )));
        }
        Ok(Self {
            id: id.into(),
            image,
            label,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Difficulty {
    /// Single ellipse, high contrast, light noise.
    Easy,
    /// Wobbly Fourier contour, low contrast, heavy noise and bias field.
    Hard,
}

pub const SYNTH_MIN_SIZE: usize = 64;
pub const SYNTH_CLASSES: usize = 2;

/// Ellipse parameters used by the easy generator, in pixels and radians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ellipse {
    pub center: (f64, f64),
    pub axes: (f64, f64),
    pub angle: f64,
}

impl Ellipse {
    pub fn contains(&self, y: f64, x: f64) -> bool {
        let (dy, dx) = (y - self.center.0, x - self.center.1);
        let (s, c) = self.angle.sin_cos();
        let u = c * dx + s * dy;
        let v = -s * dx + c * dy;
        (u / self.axes.0).powi(2) + (v / self.axes.1).powi(2) <= 1.0
    }

    pub fn area(&self) -> f64 {
        PI * self.axes.0 * self.axes.1
    }
}

/// The ellipse drawn for sample `index` of an easy dataset.
pub fn synth_ellipse(seed: u64, index: usize, size: usize) -> Ellipse {
    let mut rng = keyed_rng(seed, &["synth-shape", &index.to_string()]);
    let s = size as f64;
    Ellipse {
        center: (s * rng.gen_range(0.4..0.6), s * rng.gen_range(0.4..0.6)),
        axes: (s * rng.gen_range(0.14..0.3), s * rng.gen_range(0.14..0.3)),
        angle: rng.gen_range(0.0..PI),
    }
}

fn fourier_mask(rng: &mut impl Rng, size: usize) -> Grid<u8> {
    let s = size as f64;
    let (cy, cx) = (s * rng.gen_range(0.4..0.6), s * rng.gen_range(0.4..0.6));
    let r0 = s * rng.gen_range(0.16..0.26);
    // Harmonics 2..=5 with total relative amplitude below 0.45 keep the
    // contour star-shaped and the radius positive.
    let terms: Vec<(f64, f64, f64)> = (2..=5)
        .map(|k| (k as f64, rng.gen_range(0.0..0.11), rng.gen_range(0.0..2.0 * PI)))
        .collect();
    Grid::from_fn(size, size, |a, b| {
        let (dy, dx) = (a as f64 + 0.5 - cy, b as f64 + 0.5 - cx);
        let th = dy.atan2(dx);
        let r = r0 * (1.0 + terms.iter().map(|(k, amp, ph)| amp * (k * th + ph).cos()).sum::<f64>());
        u8::from(dx.hypot(dy) <= r)
    })
}

/// Deterministic two-class dataset; sample `i` depends only on `(seed, i)`.
pub fn synth_generate(seed: u64, n: usize, size: usize, difficulty: Difficulty) -> Result<Vec<Sample>> {
    if n == 0 || size < SYNTH_MIN_SIZE {
        return Err(Error::ConfigInvalid(format!("synth needs n >= 1 and size >= {SYNTH_MIN_SIZE}")));
    }
    (0..n)
        .map(|i| {
            let labels = match difficulty {
                Difficulty::Easy => {
                    let e = synth_ellipse(seed, i, size);
                    Grid::from_fn(size, size, |a, b| u8::from(e.contains(a as f64 + 0.5, b as f64 + 0.5)))
                }
                Difficulty::Hard => fourier_mask(&mut keyed_rng(seed, &["synth-shape", &i.to_string()]), size),
            };
            let mut rng = keyed_rng(seed, &["synth-image", &i.to_string()]);
            let (contrast, noise, bias) = match difficulty {
                Difficulty::Easy => (0.4, 0.05, 0.05),
                Difficulty::Hard => (0.15, 0.12, 0.15),
            };
            let base = rng.gen_range(0.25..0.35);
            let (gy, gx) = (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let dist = Normal::new(0.0, noise).expect("positive noise");
            let s = size as f64;
            let data = labels
                .iter()
                .enumerate()
                .map(|(k, &l)| {
                    let (a, b) = ((k / size) as f64 / s - 0.5, (k % size) as f64 / s - 0.5);
                    let v = base + contrast * l as f64 + bias * (gy * a + gx * b) + dist.sample(&mut rng);
                    v.clamp(0.0, 1.0) as f32
                })
                .collect();
            let image = Image {
                channels: 1,
                height: size,
                width: size,
                data,
            };
            Sample::new(format!("synth_{i:04}"), image, LabelMask::new(labels, SYNTH_CLASSES, (1.0, 1.0))?)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct Splits {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    pub image: PathBuf,
    pub label: PathBuf,
    /// Overrides the dataset spacing for this entry.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spacing: Option<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    /// Directory that entry paths are relative to; not serialised.
    #[serde(skip)]
    pub root: PathBuf,
    pub classes: usize,
    #[serde(default = "unit_spacing")]
    pub spacing: [f64; 2],
    pub entries: Vec<ManifestEntry>,
    pub splits: Splits,
}

fn unit_spacing() -> [f64; 2] {
    [1.0, 1.0]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Self::Train),
            "val" => Ok(Self::Val),
            "test" => Ok(Self::Test),
            _ => Err(Error::ConfigInvalid(format!("unknown split {s:?}"))),
        }
    }
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 || self.classes > 256 {
            return Err(Error::Dataset("classes must be in 2..=256".into()));
        }
        let ids: BTreeSet<&str> = self.entries.iter().map(|e| e.id.as_str()).collect();
        if ids.len() != self.entries.len() {
            return Err(Error::Dataset("duplicate entry ids".into()));
        }
        let mut seen = BTreeSet::new();
        for id in self.splits.train.iter().chain(&self.splits.val).chain(&self.splits.test) {
            if !ids.contains(id.as_str()) {
                return Err(Error::Dataset(format!("split id {id:?} has no entry")));
            }
            if !seen.insert(id.as_str()) {
                return Err(Error::Dataset(format!("id {id:?} appears in more than one split")));
            }
        }
        for e in &self.entries {
            for f in [&e.image, &e.label] {
                let p = self.root.join(f);
                if !p.is_file() {
                    return Err(Error::MissingFile(p));
                }
            }
        }
        Ok(())
    }

    pub fn split(&self, split: Split) -> &[String] {
        match split {
            Split::Train => &self.splits.train,
            Split::Val => &self.splits.val,
            Split::Test => &self.splits.test,
        }
    }

    pub fn entry(&self, id: &str) -> Option<&ManifestEntry> {
        self.entries.iter().find(|e| e.id == id)
    }
}

pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let mut m: DatasetManifest = serde_json::from_str(&text)?;
    m.root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    m.validate()?;
    Ok(m)
}

pub fn load_sample(manifest: &DatasetManifest, entry: &ManifestEntry) -> Result<Sample> {
    let image_path = manifest.root.join(&entry.image);
    let label_path = manifest.root.join(&entry.label);
    let image = pngio::read_gray(&image_path)?;
    let labels = pngio::read_labels(&label_path)?;
    if let Some(&index) = labels.iter().find(|&&l| l as usize >= manifest.classes) {
        return Err(Error::UnknownClassIndex {
            path: label_path,
            index,
            classes: manifest.classes,
        });
    }
    if labels.shape() != image.shape() {
        return Err(Error::ShapeMismatch(format!(
            "{}: label {:?} vs image {:?}",
            entry.id,
            labels.shape(),
            image.shape()
        )));
    }
    let [r, c] = entry.spacing.unwrap_or(manifest.spacing);
    Sample::new(entry.id.clone(), Image::from_grid(image), LabelMask::new(labels, manifest.classes, (r, c))?)
}

/// Writes samples as PNGs plus a `manifest.json` in `dir`.
pub fn save_dataset(dir: &Path, samples: &[Sample], splits: Splits) -> Result<DatasetManifest> {
    let classes = samples.first().map_or(SYNTH_CLASSES, |s| s.label.classes());
    for sub in ["images", "labels"] {
        std::fs::create_dir_all(dir.join(sub)).map_err(io_err(dir.join(sub)))?;
    }
    let mut entries = Vec::with_capacity(samples.len());
    for s in samples {
        if s.image.channels != 1 {
            return Err(Error::Dataset(format!("{}: only single-channel images can be saved", s.id)));
        }
        let image = PathBuf::from(format!("images/{}.png", s.id));
        let label = PathBuf::from(format!("labels/{}.png", s.id));
        let grid = Grid::new(s.image.height, s.image.width, s.image.data.clone())?;
        pngio::write_gray16(&dir.join(&image), &grid)?;
        pngio::write_labels(&dir.join(&label), s.label.labels())?;
        let (r, c) = s.label.spacing();
        entries.push(ManifestEntry {
            id: s.id.clone(),
            image,
            label,
            spacing: Some([r, c]),
        });
    }
    let manifest = DatasetManifest {
        root: dir.to_path_buf(),
        classes,
        spacing: [1.0, 1.0],
        entries,
        splits,
    };
    let path = dir.join("manifest.json");
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n").map_err(io_err(&path))?;
    Ok(manifest)
}

/// Resizes image (bilinear) and label (nearest) to `size x size`; spacing
/// is rescaled so physical extent is preserved.
pub fn resize_sample(sample: &Sample, size: usize) -> Result<Sample> {
    let img = &sample.image;
    if (img.height, img.width) == (size, size) {
        return Ok(sample.clone());
    }
    let data = (0..img.channels)
        .flat_map(|c| bilinear(img.plane(c), img.height, img.width, size, size))
        .collect();
    let labels = nearest(sample.label.labels().as_slice(), img.height, img.width, size, size);
    let (r, c) = sample.label.spacing();
    let spacing = (r * img.height as f64 / size as f64, c * img.width as f64 / size as f64);
    Sample::new(
        sample.id.clone(),
        Image {
            channels: img.channels,
            height: size,
            width: size,
            data,
        },
        LabelMask::new(Grid::new(size, size, labels)?, sample.label.classes(), spacing)?,
    )
}

/// Fingerprint of the resized training images only.
pub fn fingerprint_train(train: &[Sample], size: usize) -> Result<Fingerprint> {
    let resized: Vec<Sample> = train.iter().map(|s| resize_sample(s, size)).collect::<Result<_>>()?;
    let views: Vec<ImageView<'_>> = resized.iter().map(|s| s.image.view()).collect();
    let classes = train.first().map_or(0, |s| s.label.classes());
    let spacing = train.first().map_or((1.0, 1.0), |s| s.label.spacing());
    Ok(fingerprint(&views, classes, spacing)?)
}

/// Resize to the fingerprint's dims, then per-channel z-score.
pub fn preprocess(sample: &Sample, fp: &Fingerprint) -> Result<Sample> {
    if fp.height != fp.width {
        return Err(Error::ConfigInvalid("only square targets are supported".into()));
    }
    let norm = Normalization {
        mean: fp.intensity_mean.clone(),
        std: fp.intensity_std.clone(),
    };
    preprocess_with(sample, fp.height, &norm)
}

/// [`preprocess`] with explicit target size and statistics, as stored in a plan.
pub fn preprocess_with(sample: &Sample, size: usize, norm: &Normalization) -> Result<Sample> {
    let mut out = resize_sample(sample, size)?;
    if out.image.channels != norm.mean.len() {
        return Err(Error::ShapeMismatch(format!(
            "{}: {} channels, normalisation has {}",
            sample.id,
            out.image.channels,
            norm.mean.len()
        )));
    }
    let p = size * size;
    for (c, plane) in out.image.data.chunks_exact_mut(p).enumerate() {
        let (m, s) = (norm.mean[c], norm.std[c]);
        plane.iter_mut().for_each(|v| *v = ((*v as f64 - m) / s) as f32);
    }
    Ok(out)
}

/// Concrete spatial transform: rotation about the centre, isotropic
/// scaling and an optional per-pixel displacement field (rows, cols).
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentParams {
    pub angle_deg: f64,
    pub scale: f64,
    pub displacement: Option<(Vec<f64>, Vec<f64>)>,
}

impl AugmentParams {
    pub fn identity() -> Self {
        Self {
            angle_deg: 0.0,
            scale: 1.0,
            displacement: None,
        }
    }

    pub fn sample(plan: &AugmentationPlan, h: usize, w: usize, rng: &mut impl Rng) -> Self {
        let angle_deg = rng.gen_range(-plan.rotate_deg..=plan.rotate_deg);
        let scale = rng.gen_range(plan.scale_range.0..=plan.scale_range.1);
        let dy = elastic_field(h, w, plan.elastic_alpha, plan.elastic_sigma, rng);
        let dx = elastic_field(h, w, plan.elastic_alpha, plan.elastic_sigma, rng);
        Self {
            angle_deg,
            scale,
            displacement: Some((dy, dx)),
        }
    }
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as isize;
    let k: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

fn blur(field: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let r = (k.len() / 2) as isize;
    let clamp = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0; h * w];
    for a in 0..h {
        for b in 0..w {
            tmp[a * w + b] = k.iter().enumerate().map(|(j, kv)| kv * field[a * w + clamp(b as isize + j as isize - r, w)]).sum();
        }
    }
    let mut out = vec![0.0; h * w];
    for a in 0..h {
        for b in 0..w {
            out[a * w + b] = k.iter().enumerate().map(|(j, kv)| kv * tmp[clamp(a as isize + j as isize - r, h) * w + b]).sum();
        }
    }
    out
}

/// Uniform noise smoothed by a Gaussian of width `sigma`, rescaled so the
/// largest displacement is `alpha` pixels.
pub fn elastic_field(h: usize, w: usize, alpha: f64, sigma: f64, rng: &mut impl Rng) -> Vec<f64> {
    let noise: Vec<f64> = (0..h * w).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let smooth = blur(&noise, h, w, &gaussian_kernel(sigma));
    let peak = smooth.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak == 0.0 {
        return smooth;
    }
    smooth.into_iter().map(|v| v * alpha / peak).collect()
}

/// Resamples image (bilinear) and label (nearest) through `params`.
/// Source coordinates are clamped to the image, so borders replicate.
pub fn apply_augmentation(sample: &Sample, params: &AugmentParams) -> Result<Sample> {
    let img = &sample.image;
    let (h, w) = (img.height, img.width);
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let (s, c) = params.angle_deg.to_radians().sin_cos();
    let mut src = Vec::with_capacity(h * w);
    for a in 0..h {
        for b in 0..w {
            let (dy, dx) = (a as f64 - cy, b as f64 - cx);
            let mut y = cy + (c * dy - s * dx) / params.scale;
            let mut x = cx + (s * dy + c * dx) / params.scale;
            if let Some((fy, fx)) = &params.displacement {
                y += fy[a * w + b];
                x += fx[a * w + b];
            }
            src.push((y.clamp(0.0, h as f64 - 1.0), x.clamp(0.0, w as f64 - 1.0)));
        }
    }
    let mut data = Vec::with_capacity(img.data.len());
    for ch in 0..img.channels {
        let plane = img.plane(ch);
        for &(y, x) in &src {
            let (y0, x0) = (y.floor() as usize, x.floor() as usize);
            let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
            let (fy, fx) = ((y - y0 as f64) as f32, (x - x0 as f64) as f32);
            let top = plane[y0 * w + x0] + (plane[y0 * w + x1] - plane[y0 * w + x0]) * fx;
            let bot = plane[y1 * w + x0] + (plane[y1 * w + x1] - plane[y1 * w + x0]) * fx;
            data.push(top + (bot - top) * fy);
        }
    }
    let labels = sample.label.labels();
    let out_labels = src.iter().map(|&(y, x)| labels[(y.round() as usize, x.round() as usize)]).collect();
    Sample::new(
        sample.id.clone(),
        Image {
            channels: img.channels,
            height: h,
            width: w,
            data,
        },
        LabelMask::new(Grid::new(h, w, out_labels)?, sample.label.classes(), sample.label.spacing())?,
    )
}

pub fn augment(sample: &Sample, plan: &AugmentationPlan, rng: &mut impl Rng) -> Result<Sample> {
    let params = AugmentParams::sample(plan, sample.image.height, sample.image.width, rng);
    apply_augmentation(sample, &params)
}

/// Per-class signed distance targets plus a flag per channel telling
/// whether it has a boundary (`true`) or is empty/full and filled with
/// the constant `H + W`.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelSetTargets {
    pub stack: LevelSetStack,
    pub active: Vec<bool>,
}

pub fn make_levelset_targets(label: &LabelMask, classes: usize) -> Result<LevelSetTargets> {
    let (h, w) = label.labels().shape();
    let cap = (h + w) as f64;
    let mut grids = Vec::with_capacity(classes);
    let mut active = Vec::with_capacity(classes);
    for j in 0..classes {
        let mask = BinaryMask::with_spacing(label.labels().map(|&l| u8::from(l as usize == j)), (1.0, 1.0))?;
        match signed_distance(&mask) {
            Ok(ls) => {
                grids.push(ls.phi);
                active.push(true);
            }
            Err(nnsam_core::Error::DegenerateMask) => {
                grids.push(Grid::filled(h, w, cap));
                active.push(false);
            }
            Err(e) => return Err(e.into()),
        }
    }
    Ok(LevelSetTargets {
        stack: LevelSetStack::new(ClassStack::from_grids(&grids)?)?,
        active,
    })
}

/// Nested few-shot subsets: a fixed seed-dependent permutation of the
/// training ids, truncated to each requested size.
pub fn few_shot_order(train_ids: &[String], seed: u64) -> Vec<String> {
    use rand::seq::SliceRandom;
    let mut ids = train_ids.to_vec();
    ids.shuffle(&mut keyed_rng(seed, &["few-shot"]));
    ids
}

/// Id-indexed sample table.
pub fn index_samples(samples: Vec<Sample>) -> BTreeMap<String, Sample> {
    samples.into_iter().map(|s| (s.id.clone(), s)).collect()
}
