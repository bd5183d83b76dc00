//! MNIST in IDX format (optionally gzip-compressed), one-hot targets and
//! class-stratified subsampling.

use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;

use flate2::read::GzDecoder;
use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const IMAGE_SIDE: usize = 28;
pub const IMAGE_PIXELS: usize = IMAGE_SIDE * IMAGE_SIDE;
pub const N_CLASSES: usize = 10;

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Images as rows of `IMAGE_PIXELS` intensities in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledImageSet {
    images: Array2<f64>,
    labels: Vec<u8>,
    split: Split,
}

impl LabeledImageSet {
    pub fn new(images: Array2<f64>, labels: Vec<u8>, split: Split) -> Result<Self> {
        if images.nrows() != labels.len() {
            return Err(Error::dim(format!(
                "{} images but {} labels",
                images.nrows(),
                labels.len()
            )));
        }
        if images.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Domain("pixel intensities must lie in [0, 1]".into()));
        }
        if let Some(&l) = labels.iter().find(|&&l| l as usize >= N_CLASSES) {
            return Err(Error::Domain(format!("label {l} outside 0..{N_CLASSES}")));
        }
        Ok(LabeledImageSet { images, labels, split })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn images(&self) -> ArrayView2<'_, f64> {
        self.images.view()
    }

    pub fn image(&self, i: usize) -> ArrayView1<'_, f64> {
        self.images.row(i)
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn pixel_dim(&self) -> usize {
        self.images.ncols()
    }

    /// Rows `indices` stacked into a batch.
    pub fn batch(&self, indices: &[usize]) -> Array2<f64> {
        self.images.select(Axis(0), indices)
    }

    pub fn class_counts(&self) -> [usize; N_CLASSES] {
        let mut c = [0; N_CLASSES];
        for &l in &self.labels {
            c[l as usize] += 1;
        }
        c
    }

    /// Deterministic class-stratified subsample of `n` items, kept in their
    /// original order.
    pub fn subsample(&self, n: usize, seed: u64) -> Result<LabeledImageSet> {
        let total = self.len();
        if n > total {
            return Err(Error::Domain(format!("cannot draw {n} items from {total}")));
        }
        let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); N_CLASSES];
        for (i, &l) in self.labels.iter().enumerate() {
            by_class[l as usize].push(i);
        }
        // Equal shares per class; a class too small for its share gives the
        // shortfall to the others.
        let mut quota = vec![0usize; N_CLASSES];
        let mut remaining = n;
        while remaining > 0 {
            let open: Vec<usize> = (0..N_CLASSES).filter(|&k| quota[k] < by_class[k].len()).collect();
            let share = remaining / open.len();
            let extra = remaining % open.len();
            for (i, &k) in open.iter().enumerate() {
                let want = share + usize::from(i < extra);
                let give = want.min(by_class[k].len() - quota[k]);
                quota[k] += give;
                remaining -= give;
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut chosen = Vec::with_capacity(n);
        for (members, &q) in by_class.iter_mut().zip(&quota) {
            members.shuffle(&mut rng);
            chosen.extend_from_slice(&members[..q]);
        }
        chosen.sort_unstable();
        Ok(LabeledImageSet {
            images: self.images.select(Axis(0), &chosen),
            labels: chosen.iter().map(|&i| self.labels[i]).collect(),
            split: self.split,
        })
    }
}

pub fn one_hot(label: usize) -> Vec<f64> {
    let mut v = vec![0.0; N_CLASSES];
    if label < N_CLASSES {
        v[label] = 1.0;
    }
    v
}

fn read_all(path: &Path) -> Result<Vec<u8>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut raw = Vec::new();
    BufReader::new(file).read_to_end(&mut raw).map_err(|e| Error::io(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..])
            .read_to_end(&mut out)
            .map_err(|e| Error::format(path, format!("corrupt gzip stream: {e}")))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::format(path, "truncated header"))
}

/// Loads an IDX image file and its label file.
pub fn load_idx(images_path: &Path, labels_path: &Path, split: Split) -> Result<LabeledImageSet> {
    let img = read_all(images_path)?;
    if be_u32(&img, 0, images_path)? != IMAGES_MAGIC {
        return Err(Error::format(images_path, "bad magic for an IDX image file"));
    }
    let count = be_u32(&img, 4, images_path)? as usize;
    let rows = be_u32(&img, 8, images_path)? as usize;
    let cols = be_u32(&img, 12, images_path)? as usize;
    let pixels = rows * cols;
    if img.len() != 16 + count * pixels {
        return Err(Error::format(
            images_path,
            format!("expected {} bytes of pixels, found {}", count * pixels, img.len().saturating_sub(16)),
        ));
    }
    let lab = read_all(labels_path)?;
    if be_u32(&lab, 0, labels_path)? != LABELS_MAGIC {
        return Err(Error::format(labels_path, "bad magic for an IDX label file"));
    }
    let n_labels = be_u32(&lab, 4, labels_path)? as usize;
    if n_labels != count {
        return Err(Error::format(
            labels_path,
            format!("{n_labels} labels for {count} images"),
        ));
    }
    if lab.len() != 8 + count {
        return Err(Error::format(labels_path, "label payload length does not match header"));
    }
    let labels = lab[8..].to_vec();
    if labels.iter().any(|&l| l as usize >= N_CLASSES) {
        return Err(Error::format(labels_path, "label outside 0..9"));
    }
    let images = Array2::from_shape_vec((count, pixels), img[16..].iter().map(|&b| b as f64 / 255.0).collect())
        .expect("payload length checked above");
    Ok(LabeledImageSet { images, labels, split })
}

/// Loads `train-*` and `t10k-*` files from a directory, accepting both
/// plain and `.gz` names.
pub fn load_mnist_dir(dir: &Path) -> Result<(LabeledImageSet, LabeledImageSet)> {
    let find = |stem: &str| {
        let gz = dir.join(format!("{stem}.gz"));
        if gz.exists() {
            gz
        } else {
            dir.join(stem)
        }
    };
    let train = load_idx(
        &find("train-images-idx3-ubyte"),
        &find("train-labels-idx1-ubyte"),
        Split::Train,
    )?;
    let test = load_idx(
        &find("t10k-images-idx3-ubyte"),
        &find("t10k-labels-idx1-ubyte"),
        Split::Test,
    )?;
    Ok((train, test))
}
