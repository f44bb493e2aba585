//! Labelled datasets: IDX ingestion, synthetic Gaussian blobs, stratified
//! splits, and a binary cache format.

use std::io::{Cursor, Read, Write};
use std::path::Path;

use byteorder::{BigEndian, LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    fn tag(self) -> u8 {
        match self {
            Split::Train => 0,
            Split::Val => 1,
            Split::Test => 2,
        }
    }

    fn from_tag(t: u8) -> Option<Split> {
        match t {
            0 => Some(Split::Train),
            1 => Some(Split::Val),
            2 => Some(Split::Test),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    samples: Tensor,
    labels: Vec<usize>,
    class_count: usize,
    splits: Vec<Split>,
}

impl Dataset {
    /// All samples start tagged as `Train`.
    pub fn new(samples: Tensor, labels: Vec<usize>, class_count: usize) -> Result<Dataset> {
        let n = labels.len();
        Dataset::with_splits(samples, labels, class_count, vec![Split::Train; n])
    }

    pub fn with_splits(
        samples: Tensor,
        labels: Vec<usize>,
        class_count: usize,
        splits: Vec<Split>,
    ) -> Result<Dataset> {
        if samples.dims().len() < 2 {
            return Err(Error::shape("samples need a leading batch dimension"));
        }
        if samples.rows() != labels.len() || splits.len() != labels.len() {
            return Err(Error::shape(format!(
                "{} samples, {} labels, {} split tags",
                samples.rows(),
                labels.len(),
                splits.len()
            )));
        }
        if class_count == 0 {
            return Err(Error::input("class_count must be positive"));
        }
        if let Some(&y) = labels.iter().find(|&&y| y >= class_count) {
            return Err(Error::input(format!("label {y} >= class_count {class_count}")));
        }
        Ok(Dataset {
            samples,
            labels,
            class_count,
            splits,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn samples(&self) -> &Tensor {
        &self.samples
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn splits(&self) -> &[Split] {
        &self.splits
    }

    /// Per-sample dims (without the batch axis).
    pub fn sample_dims(&self) -> &[usize] {
        &self.samples.dims()[1..]
    }

    /// The rows at `indices`, in order, keeping their split tags.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            samples: self.samples.gather_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            class_count: self.class_count,
            splits: indices.iter().map(|&i| self.splits[i]).collect(),
        }
    }

    pub fn split(&self, which: Split) -> Dataset {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| self.splits[i] == which).collect();
        self.subset(&idx)
    }

    pub fn count(&self, which: Split) -> usize {
        self.splits.iter().filter(|&&s| s == which).count()
    }

    /// Concatenation of two datasets over the same sample shape.
    pub fn concat(&self, other: &Dataset) -> Result<Dataset> {
        if self.class_count != other.class_count {
            return Err(Error::input("class counts differ"));
        }
        let samples = Tensor::concat_rows(&[&self.samples, &other.samples])?;
        let mut labels = self.labels.clone();
        labels.extend_from_slice(&other.labels);
        let mut splits = self.splits.clone();
        splits.extend_from_slice(&other.splits);
        Dataset::with_splits(samples, labels, self.class_count, splits)
    }

    /// Re-tag every sample with a per-class stratified split. Within each
    /// class the samples are shuffled and the first `round(train * n)` go to
    /// train, the next `round(val * n)` to validation, the rest to test.
    pub fn stratify(&mut self, train: f64, val: f64, seed: u64) -> Result<()> {
        if !(train >= 0.0 && val >= 0.0 && train + val <= 1.0) {
            return Err(Error::input(format!("bad split fractions {train}/{val}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for class in 0..self.class_count {
            let mut members: Vec<usize> = (0..self.len()).filter(|&i| self.labels[i] == class).collect();
            members.shuffle(&mut rng);
            let n = members.len() as f64;
            let n_train = (train * n).round() as usize;
            let n_val = ((val * n).round() as usize).min(members.len() - n_train);
            for (k, &i) in members.iter().enumerate() {
                self.splits[i] = if k < n_train {
                    Split::Train
                } else if k < n_train + n_val {
                    Split::Val
                } else {
                    Split::Test
                };
            }
        }
        Ok(())
    }
}

const IDX_IMAGES: u32 = 0x0000_0803;
const IDX_LABELS: u32 = 0x0000_0801;

/// Parse an IDX image/label file pair (big-endian, unsigned-byte payload).
/// Pixels are scaled to `[0, 1]`; each sample has dims `[1, rows, cols]`.
/// `class_count` is one more than the largest label.
pub fn parse_idx(images: &[u8], labels: &[u8]) -> Result<Dataset> {
    let mut ic = Cursor::new(images);
    let trunc = |c: &Cursor<&[u8]>, what: &str| Error::parse(c.position(), format!("truncated IDX: missing {what}"));
    let magic = ic.read_u32::<BigEndian>().map_err(|_| trunc(&ic, "image magic"))?;
    if magic != IDX_IMAGES {
        return Err(Error::parse(0, format!("image magic {magic:#010x}, expected {IDX_IMAGES:#010x}")));
    }
    let n = ic.read_u32::<BigEndian>().map_err(|_| trunc(&ic, "image count"))? as usize;
    let rows = ic.read_u32::<BigEndian>().map_err(|_| trunc(&ic, "row count"))? as usize;
    let cols = ic.read_u32::<BigEndian>().map_err(|_| trunc(&ic, "column count"))? as usize;
    let body = &images[16..];
    let need = n * rows * cols;
    if body.len() < need {
        return Err(Error::parse(
            16 + body.len() as u64,
            format!("truncated IDX images: need {need} pixel bytes, have {}", body.len()),
        ));
    }
    if body.len() > need {
        return Err(Error::parse(16 + need as u64, "trailing bytes after IDX images"));
    }

    let mut lc = Cursor::new(labels);
    let magic = lc.read_u32::<BigEndian>().map_err(|_| trunc(&lc, "label magic"))?;
    if magic != IDX_LABELS {
        return Err(Error::parse(0, format!("label magic {magic:#010x}, expected {IDX_LABELS:#010x}")));
    }
    let ln = lc.read_u32::<BigEndian>().map_err(|_| trunc(&lc, "label count"))? as usize;
    if ln != n {
        return Err(Error::parse(4, format!("{ln} labels for {n} images")));
    }
    let lbody = &labels[8..];
    if lbody.len() != n {
        return Err(Error::parse(
            8 + lbody.len().min(n) as u64,
            format!("label payload has {} bytes, expected {n}", lbody.len()),
        ));
    }
    if n == 0 || rows == 0 || cols == 0 {
        return Err(Error::parse(4, "IDX file holds no samples"));
    }
    let data: Vec<f32> = body.iter().map(|&b| b as f32 / 255.0).collect();
    let labels: Vec<usize> = lbody.iter().map(|&b| b as usize).collect();
    let class_count = labels.iter().max().map_or(1, |m| m + 1);
    Dataset::new(Tensor::new(vec![n, 1, rows, cols], data)?, labels, class_count)
}

pub fn load_idx(images: &Path, labels: &Path) -> Result<Dataset> {
    parse_idx(&std::fs::read(images)?, &std::fs::read(labels)?)
}

/// Encode a dataset as an IDX pair. Pixel values are mapped back to bytes
/// with `round(v * 255)`, so only `[0, 1]` data survives a round trip.
pub fn to_idx(data: &Dataset) -> Result<(Vec<u8>, Vec<u8>)> {
    let (rows, cols) = match *data.sample_dims() {
        [1, r, c] => (r, c),
        [r, c] => (r, c),
        ref d => return Err(Error::shape(format!("IDX needs [1, rows, cols] samples, got {d:?}"))),
    };
    let mut images = Vec::with_capacity(16 + data.samples().data().len());
    images.write_u32::<BigEndian>(IDX_IMAGES)?;
    images.write_u32::<BigEndian>(data.len() as u32)?;
    images.write_u32::<BigEndian>(rows as u32)?;
    images.write_u32::<BigEndian>(cols as u32)?;
    images.extend(data.samples().data().iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    let mut labels = Vec::with_capacity(8 + data.len());
    labels.write_u32::<BigEndian>(IDX_LABELS)?;
    labels.write_u32::<BigEndian>(data.len() as u32)?;
    labels.extend(data.labels().iter().map(|&y| y as u8));
    Ok((images, labels))
}

/// Gaussian blobs with identity covariance. Class means are
/// `separation / sqrt(2)` times orthonormal directions, so every pair of
/// means is `separation` standard deviations apart. Requires
/// `class_count <= product(dims)`. Samples are stratified 70/10/20 into
/// train/val/test and returned in a seeded random order.
pub fn gen_synthetic(
    class_count: usize,
    per_class: usize,
    dims: &[usize],
    separation: f64,
    seed: u64,
) -> Result<Dataset> {
    if per_class == 0 {
        return Err(Error::input("per_class must be positive"));
    }
    if class_count == 0 {
        return Err(Error::input("class_count must be positive"));
    }
    if !(separation > 0.0 && separation.is_finite()) {
        return Err(Error::input(format!("separation must be > 0, got {separation}")));
    }
    let width: usize = dims.iter().product();
    if dims.is_empty() || width == 0 {
        return Err(Error::input(format!("bad sample dims {dims:?}")));
    }
    if class_count > width {
        return Err(Error::input(format!(
            "{class_count} classes need at least {class_count} features, dims {dims:?} give {width}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gauss = || -> f64 { StandardNormal.sample(&mut rng) };

    // Gram-Schmidt over random directions.
    let mut dirs: Vec<Vec<f64>> = Vec::with_capacity(class_count);
    while dirs.len() < class_count {
        let mut v: Vec<f64> = (0..width).map(|_| gauss()).collect();
        for d in &dirs {
            let dot: f64 = v.iter().zip(d).map(|(a, b)| a * b).sum();
            for (a, b) in v.iter_mut().zip(d) {
                *a -= dot * b;
            }
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-6 {
            dirs.push(v.into_iter().map(|a| a / norm).collect());
        }
    }
    let scale = separation / 2f64.sqrt();

    let n = class_count * per_class;
    let mut data = Vec::with_capacity(n * width);
    let mut labels = Vec::with_capacity(n);
    for (class, dir) in dirs.iter().enumerate() {
        for _ in 0..per_class {
            data.extend(dir.iter().map(|m| (scale * m + gauss()) as f32));
            labels.push(class);
        }
    }
    let mut sample_dims = vec![n];
    sample_dims.extend_from_slice(dims);
    let ordered = Dataset::new(Tensor::new(sample_dims, data)?, labels, class_count)?;

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut shuffled = ordered.subset(&order);
    shuffled.stratify(0.7, 0.1, seed ^ 0x5eed)?;
    Ok(shuffled)
}

pub const CACHE_MAGIC: &[u8; 4] = b"ECDS";
pub const CACHE_VERSION: u16 = 1;

/// `"ECDS" | version u16 | class_count u32 | rank u8 | dims u32 * rank |
/// n u32 | samples f32 * n*prod(dims) | labels u32 * n | split tags u8 * n`,
/// little-endian.
pub fn to_cache_bytes(data: &Dataset) -> Vec<u8> {
    let mut out = Vec::new();
    let w = &mut out;
    w.write_all(CACHE_MAGIC).unwrap();
    w.write_u16::<LittleEndian>(CACHE_VERSION).unwrap();
    w.write_u32::<LittleEndian>(data.class_count as u32).unwrap();
    w.write_u8(data.sample_dims().len() as u8).unwrap();
    for &d in data.sample_dims() {
        w.write_u32::<LittleEndian>(d as u32).unwrap();
    }
    w.write_u32::<LittleEndian>(data.len() as u32).unwrap();
    for &v in data.samples.data() {
        w.write_f32::<LittleEndian>(v).unwrap();
    }
    for &y in &data.labels {
        w.write_u32::<LittleEndian>(y as u32).unwrap();
    }
    for s in &data.splits {
        w.write_u8(s.tag()).unwrap();
    }
    out
}

pub fn from_cache_bytes(bytes: &[u8]) -> Result<Dataset> {
    let mut c = Cursor::new(bytes);
    let trunc = |c: &Cursor<&[u8]>, what: &str| Error::parse(c.position(), format!("truncated dataset cache: missing {what}"));
    let mut magic = [0u8; 4];
    c.read_exact(&mut magic).map_err(|_| trunc(&c, "magic"))?;
    if &magic != CACHE_MAGIC {
        return Err(Error::parse(0, format!("bad dataset magic {magic:?}")));
    }
    let version = c.read_u16::<LittleEndian>().map_err(|_| trunc(&c, "version"))?;
    if version != CACHE_VERSION {
        return Err(Error::parse(4, format!("unsupported dataset version {version}")));
    }
    let class_count = c.read_u32::<LittleEndian>().map_err(|_| trunc(&c, "class count"))? as usize;
    let rank = c.read_u8().map_err(|_| trunc(&c, "rank"))? as usize;
    let mut dims = Vec::with_capacity(rank + 1);
    for _ in 0..rank {
        dims.push(c.read_u32::<LittleEndian>().map_err(|_| trunc(&c, "dim"))? as usize);
    }
    let n = c.read_u32::<LittleEndian>().map_err(|_| trunc(&c, "sample count"))? as usize;
    let width: usize = dims.iter().product();
    let need = n * width * 4 + n * 4 + n;
    let remaining = bytes.len() - c.position() as usize;
    if remaining < need {
        return Err(Error::parse(bytes.len() as u64, format!("dataset body needs {need} bytes, have {remaining}")));
    }
    if remaining > need {
        return Err(Error::parse(c.position() + need as u64, "trailing bytes after dataset"));
    }
    let mut data = vec![0.0f32; n * width];
    c.read_f32_into::<LittleEndian>(&mut data).map_err(|_| trunc(&c, "samples"))?;
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        labels.push(c.read_u32::<LittleEndian>().map_err(|_| trunc(&c, "label"))? as usize);
    }
    let mut splits = Vec::with_capacity(n);
    for _ in 0..n {
        let at = c.position();
        let t = c.read_u8().map_err(|_| trunc(&c, "split tag"))?;
        splits.push(Split::from_tag(t).ok_or_else(|| Error::parse(at, format!("bad split tag {t}")))?);
    }
    let mut full = vec![n];
    full.extend(dims);
    Dataset::with_splits(Tensor::new(full, data)?, labels, class_count, splits)
}

pub fn save_cache(data: &Dataset, path: &Path) -> Result<()> {
    std::fs::write(path, to_cache_bytes(data))?;
    Ok(())
}

pub fn load_cache(path: &Path) -> Result<Dataset> {
    from_cache_bytes(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn idx_fixture() -> (Vec<u8>, Vec<u8>) {
        // Two 2x3 images.
        let mut images = vec![0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 3];
        images.extend([0, 51, 102, 153, 204, 255]);
        images.extend([255, 0, 255, 0, 255, 0]);
        let labels = vec![0, 0, 8, 1, 0, 0, 0, 2, 7, 2];
        (images, labels)
    }

    #[test]
    fn idx_fixture_recovers_pixels() {
        let (im, lb) = idx_fixture();
        let d = parse_idx(&im, &lb).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.sample_dims(), &[1, 2, 3]);
        assert_eq!(d.labels(), &[7, 2]);
        assert_eq!(d.class_count(), 8);
        assert_eq!(d.samples().row(0), &[0.0, 0.2, 0.4, 0.6, 0.8, 1.0]);
        assert_eq!(d.samples().row(1), &[1.0, 0.0, 1.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn idx_wrong_label_magic() {
        let (im, mut lb) = idx_fixture();
        lb[3] = 3;
        let err = parse_idx(&im, &lb).unwrap_err();
        assert!(matches!(err, Error::Parse { offset: 0, .. }), "{err}");
    }

    #[test]
    fn idx_count_mismatch_and_truncation() {
        let (im, mut lb) = idx_fixture();
        lb[7] = 3;
        assert!(matches!(parse_idx(&im, &lb), Err(Error::Parse { offset: 4, .. })));
        let (im, lb) = idx_fixture();
        let err = parse_idx(&im[..im.len() - 1], &lb).unwrap_err();
        assert!(matches!(err, Error::Parse { offset: 27, .. }), "{err}");
    }

    #[test]
    fn idx_round_trip() {
        let (im, lb) = idx_fixture();
        let d = parse_idx(&im, &lb).unwrap();
        let (im2, lb2) = to_idx(&d).unwrap();
        assert_eq!(im, im2);
        assert_eq!(lb, lb2);
    }

    #[test]
    fn synthetic_is_deterministic_and_stratified() {
        let a = gen_synthetic(3, 50, &[4], 3.0, 9).unwrap();
        let b = gen_synthetic(3, 50, &[4], 3.0, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 150);
        for class in 0..3 {
            let count = |s| (0..a.len()).filter(|&i| a.labels()[i] == class && a.splits()[i] == s).count();
            assert_eq!(count(Split::Train), 35);
            assert_eq!(count(Split::Val), 5);
            assert_eq!(count(Split::Test), 10);
        }
    }

    #[test]
    fn synthetic_rejects_degenerate_input() {
        assert!(gen_synthetic(2, 0, &[4], 3.0, 0).is_err());
        assert!(gen_synthetic(2, 5, &[4], 0.0, 0).is_err());
        assert!(gen_synthetic(5, 5, &[4], 1.0, 0).is_err());
    }

    #[test]
    fn cache_round_trip_is_bit_exact() {
        let d = gen_synthetic(2, 10, &[1, 2, 2], 2.0, 1).unwrap();
        let bytes = to_cache_bytes(&d);
        let back = from_cache_bytes(&bytes).unwrap();
        assert_eq!(back, d);
        assert_eq!(to_cache_bytes(&back), bytes);
        assert!(from_cache_bytes(&bytes[..bytes.len() - 1]).is_err());
    }
}
