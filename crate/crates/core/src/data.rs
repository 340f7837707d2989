//! Image I/O and LR/HR training pairs.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use image::{ImageBuffer, Rgb};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::metrics::to_u8;
use crate::network::SCALES;
use crate::tensor::{Shape, Tensor};
use crate::tensor_ops::{resize, ResizeMode};

/// Reads a PNG or JPEG into a `(1, 3, h, w)` tensor in `[0, 1]`, RGB order.
/// Grayscale sources are replicated across the three channels.
pub fn load_image(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let img = image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|source| Error::ImageDecode {
            path: path.to_path_buf(),
            source,
        })?
        .to_rgb8();
    let (w, h) = img.dimensions();
    let (w, h) = (w as usize, h as usize);
    let raw = img.as_raw();
    Ok(Tensor::from_fn(Shape::new(1, 3, h, w), |_, c, y, x| {
        raw[(y * w + x) * 3 + c] as f64 / 255.0
    }))
}

/// Writes the first image of a 3-channel batch as an 8-bit PNG
/// (clamped, rounded half up).
pub fn save_png(t: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let s = t.shape();
    if s.c != 3 {
        return Err(Error::shape("save_png", format!("expected 3 channels, got {s}")));
    }
    let buf = ImageBuffer::from_fn(s.w as u32, s.h as u32, |x, y| {
        let px = |c| to_u8(t.at(0, c, y as usize, x as usize));
        Rgb([px(0), px(1), px(2)])
    });
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|source| Error::ImageEncode {
            path: path.to_path_buf(),
            source,
        })
}

/// Aligned high/low resolution images of one source file.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplePair {
    pub hr: Tensor,
    pub lr: Tensor,
    pub id: String,
}

fn check_scale(scale: usize) -> Result<()> {
    if !SCALES.contains(&scale) {
        return Err(Error::invalid("make_pair", format!("scale {scale} not in {SCALES:?}")));
    }
    Ok(())
}

/// Bicubic resize to `hr_size x hr_size` (aspect ratio ignored), then bicubic
/// down-scaling by `scale`. Both images are clamped to `[0, 1]`.
pub fn make_pair(img: &Tensor, scale: usize, hr_size: usize, id: impl Into<String>) -> Result<SamplePair> {
    check_scale(scale)?;
    if hr_size == 0 || !hr_size.is_multiple_of(scale) {
        return Err(Error::invalid(
            "make_pair",
            format!("hr_size {hr_size} not a positive multiple of scale {scale}"),
        ));
    }
    let hr = resize(img, hr_size, hr_size, ResizeMode::Bicubic)?.clamp(0.0, 1.0);
    let lr_size = hr_size / scale;
    let lr = resize(&hr, lr_size, lr_size, ResizeMode::Bicubic)?.clamp(0.0, 1.0);
    Ok(SamplePair {
        hr,
        lr,
        id: id.into(),
    })
}

/// Random aligned crop: an `hr_patch` square of `hr` and the matching
/// `hr_patch / scale` square of `lr`. Offsets are multiples of `scale`.
pub fn crop_pair(pair: &SamplePair, scale: usize, hr_patch: usize, rng: &mut impl Rng) -> Result<SamplePair> {
    let (hs, ls) = (pair.hr.shape(), pair.lr.shape());
    if hr_patch == 0 || !hr_patch.is_multiple_of(scale) || hr_patch > hs.h || hr_patch > hs.w {
        return Err(Error::invalid(
            "crop_pair",
            format!("patch {hr_patch} incompatible with scale {scale} and image {hs}"),
        ));
    }
    if (ls.h * scale, ls.w * scale) != (hs.h, hs.w) {
        return Err(Error::shape("crop_pair", format!("lr {ls} x{scale} != hr {hs}")));
    }
    let lr_patch = hr_patch / scale;
    let top = rng.gen_range(0..=(ls.h - lr_patch));
    let left = rng.gen_range(0..=(ls.w - lr_patch));
    Ok(SamplePair {
        hr: pair.hr.crop(top * scale, left * scale, hr_patch, hr_patch)?,
        lr: pair.lr.crop(top, left, lr_patch, lr_patch)?,
        id: pair.id.clone(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            _ => Err(Error::Config(format!("unknown split {s:?} (train, test)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSpec {
    /// Directory of images. When it has a `train/` or `test/` subdirectory
    /// matching `split`, that subdirectory is used instead.
    pub root: PathBuf,
    pub split: Split,
    pub scale: usize,
    pub hr_size: usize,
    /// HR patch side for random aligned crops; full images when `None`.
    pub patch_size: Option<usize>,
    /// Reshuffle file order every epoch.
    pub shuffle: bool,
}

impl DatasetSpec {
    pub fn new(root: impl Into<PathBuf>, scale: usize) -> Self {
        DatasetSpec {
            root: root.into(),
            split: Split::Train,
            scale,
            hr_size: 224,
            patch_size: None,
            shuffle: false,
        }
    }

    pub fn directory(&self) -> PathBuf {
        let sub = self.root.join(self.split.name());
        if sub.is_dir() {
            sub
        } else {
            self.root.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_scale(self.scale)?;
        if self.hr_size == 0 || !self.hr_size.is_multiple_of(self.scale) {
            return Err(Error::Config(format!(
                "hr_size {} must be a positive multiple of scale {}",
                self.hr_size, self.scale
            )));
        }
        if let Some(p) = self.patch_size {
            if p == 0 || p % self.scale != 0 || p > self.hr_size {
                return Err(Error::Config(format!(
                    "patch_size {p} must be a multiple of scale {} and at most hr_size {}",
                    self.scale, self.hr_size
                )));
            }
        }
        Ok(())
    }
}

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
        .unwrap_or(false)
}

/// PNG/JPEG files directly inside `dir`, sorted by file name.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Err(Error::DatasetMissing(dir.to_path_buf()));
    }
    let mut files = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_file() && is_image(&path) {
            files.push(path);
        }
    }
    if files.is_empty() {
        return Err(Error::EmptyDataset(dir.to_path_buf()));
    }
    files.sort();
    Ok(files)
}

/// Decoded LR/HR pairs of a directory, held in memory.
#[derive(Clone, Debug)]
pub struct Dataset {
    spec: DatasetSpec,
    pairs: Vec<SamplePair>,
}

impl Dataset {
    pub fn load(spec: DatasetSpec) -> Result<Dataset> {
        spec.validate()?;
        let files = list_images(&spec.directory())?;
        let pairs = files
            .iter()
            .map(|path| {
                let id = path
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_default();
                make_pair(&load_image(path)?, spec.scale, spec.hr_size, id)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset { spec, pairs })
    }

    /// Wraps already-built pairs, e.g. synthetic data.
    pub fn from_pairs(spec: DatasetSpec, pairs: Vec<SamplePair>) -> Result<Dataset> {
        if pairs.is_empty() {
            return Err(Error::EmptyDataset(spec.root.clone()));
        }
        for p in &pairs {
            let (hs, ls) = (p.hr.shape(), p.lr.shape());
            if (ls.h * spec.scale, ls.w * spec.scale) != (hs.h, hs.w) {
                return Err(Error::shape(
                    "Dataset::from_pairs",
                    format!("{}: lr {ls} x{} != hr {hs}", p.id, spec.scale),
                ));
            }
        }
        Ok(Dataset { spec, pairs })
    }

    pub fn spec(&self) -> &DatasetSpec {
        &self.spec
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Full-size pairs in sorted file order.
    pub fn pairs(&self) -> &[SamplePair] {
        &self.pairs
    }

    /// One epoch of samples. Order is sorted unless `shuffle` is set; crops
    /// are drawn when `patch_size` is set. All randomness comes from `rng`.
    pub fn epoch(&self, rng: &mut ChaCha8Rng) -> Result<Vec<SamplePair>> {
        let mut order: Vec<usize> = (0..self.pairs.len()).collect();
        if self.spec.shuffle {
            order.shuffle(rng);
        }
        order
            .into_iter()
            .map(|i| match self.spec.patch_size {
                Some(p) => crop_pair(&self.pairs[i], self.spec.scale, p, rng),
                None => Ok(self.pairs[i].clone()),
            })
            .collect()
    }
}

/// Loads `spec` and yields one epoch of pairs drawn with `seed`.
pub fn dataset_iter(spec: DatasetSpec, seed: u64) -> Result<impl Iterator<Item = SamplePair>> {
    let dataset = Dataset::load(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(dataset.epoch(&mut rng)?.into_iter())
}
