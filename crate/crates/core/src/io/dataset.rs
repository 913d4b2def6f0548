//! Labelled datasets: synthetic 2-D generator, IDX and CSV readers.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{MasoError, Result};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub inputs: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl Dataset {
    pub fn new(inputs: Vec<Vec<f64>>, labels: Vec<usize>, classes: usize) -> Result<Self> {
        let d = Dataset { inputs, labels, classes };
        d.validate()?;
        Ok(d)
    }

    /// Nonempty, rectangular, finite features and labels below `classes`.
    pub fn validate(&self) -> Result<()> {
        if self.inputs.is_empty() {
            return Err(MasoError::InvalidParam("empty dataset".into()));
        }
        crate::error::check_dim("dataset labels", self.inputs.len(), self.labels.len())?;
        let dim = self.inputs[0].len();
        for (i, x) in self.inputs.iter().enumerate() {
            if x.len() != dim {
                return Err(MasoError::InvalidParam(format!("item {i} has {} features, expected {dim}", x.len())));
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(MasoError::InvalidParam(format!("item {i} has a non-finite feature")));
            }
        }
        if let Some(l) = self.labels.iter().find(|l| **l >= self.classes) {
            return Err(MasoError::InvalidParam(format!("label {l} outside 0..{}", self.classes)));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs.first().map_or(0, Vec::len)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Layout {
    /// Two concentric rings around the origin plus two Gaussian blobs in
    /// opposite corners, all inside `[−3, 3]²`.
    #[serde(rename = "rings+blobs")]
    RingsBlobs,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    Synthetic2d {
        #[serde(default = "default_classes")]
        classes: usize,
        n_per_class: usize,
        #[serde(default = "default_layout")]
        layout: Layout,
        #[serde(default)]
        seed: u64,
    },
    Idx {
        images: PathBuf,
        labels: PathBuf,
        limit: usize,
    },
    Csv {
        path: PathBuf,
    },
}

fn default_classes() -> usize {
    4
}

fn default_layout() -> Layout {
    Layout::RingsBlobs
}

impl DatasetSource {
    /// Relative paths are resolved against `base`.
    pub fn load(&self, base: &Path) -> Result<Dataset> {
        match self {
            DatasetSource::Synthetic2d {
                classes,
                n_per_class,
                layout,
                seed,
            } => gen_synthetic_2d(*classes, *n_per_class, *layout, *seed),
            DatasetSource::Idx { images, labels, limit } => load_idx(&base.join(images), &base.join(labels), *limit),
            DatasetSource::Csv { path } => load_csv(&base.join(path)),
        }
    }

    pub fn with_seed(&self, new_seed: u64) -> Self {
        match self {
            DatasetSource::Synthetic2d {
                classes,
                n_per_class,
                layout,
                ..
            } => DatasetSource::Synthetic2d {
                classes: *classes,
                n_per_class: *n_per_class,
                layout: *layout,
                seed: new_seed,
            },
            other => other.clone(),
        }
    }
}

const RING_RADII: [f64; 2] = [0.9, 1.9];
const RING_NOISE: f64 = 0.08;
const BLOB_CENTERS: [(f64, f64); 2] = [(2.3, -2.3), (-2.3, 2.3)];
const BLOB_STD: f64 = 0.25;

/// Items are interleaved by class: item `i` has label `i mod 4`.
pub fn gen_synthetic_2d(classes: usize, n_per_class: usize, layout: Layout, seed: u64) -> Result<Dataset> {
    let Layout::RingsBlobs = layout;
    if classes != 4 {
        return Err(MasoError::InvalidParam(format!("rings+blobs has 4 classes, got {classes}")));
    }
    if n_per_class == 0 {
        return Err(MasoError::InvalidParam("need at least one point per class".into()));
    }
    let mut g = rng::seeded(seed);
    let mut inputs = Vec::with_capacity(4 * n_per_class);
    let mut labels = Vec::with_capacity(4 * n_per_class);
    for _ in 0..n_per_class {
        for c in 0..4 {
            let p = if c < 2 {
                let theta = rand::Rng::random_range(&mut g, 0.0..std::f64::consts::TAU);
                let r = RING_RADII[c] + RING_NOISE * rng::normal(&mut g);
                [r * theta.cos(), r * theta.sin()]
            } else {
                let (cx, cy) = BLOB_CENTERS[c - 2];
                [cx + BLOB_STD * rng::normal(&mut g), cy + BLOB_STD * rng::normal(&mut g)]
            };
            inputs.push(p.iter().map(|v| v.clamp(-3.0, 3.0)).collect());
            labels.push(c);
        }
    }
    Dataset::new(inputs, labels, 4)
}

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn u32(&mut self, what: &str) -> Result<u32> {
        let end = self.pos + 4;
        let b = self.bytes.get(self.pos..end).ok_or_else(|| MasoError::Format {
            offset: self.pos,
            message: format!("truncated header: missing {what}"),
        })?;
        self.pos = end;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn magic(&mut self, want: u32) -> Result<()> {
        let m = self.u32("magic")?;
        if m != want {
            return Err(MasoError::Format {
                offset: 0,
                message: format!("bad magic 0x{m:08x}, expected 0x{want:08x}"),
            });
        }
        Ok(())
    }

    fn body(&self, len: usize) -> Result<&[u8]> {
        self.bytes.get(self.pos..self.pos + len).ok_or_else(|| MasoError::Format {
            offset: self.bytes.len(),
            message: format!("truncated data: need {} bytes from offset {}", len, self.pos),
        })
    }
}

/// Parses IDX image/label files, keeping the first `limit` items. Pixels
/// are scaled to `[0, 1]` and then centered to zero mean per pixel.
pub fn parse_idx(images: &[u8], labels: &[u8], limit: usize) -> Result<Dataset> {
    if limit == 0 {
        return Err(MasoError::InvalidParam("limit 0 yields an empty dataset".into()));
    }
    let mut ri = Reader { bytes: images, pos: 0 };
    ri.magic(IDX_IMAGES_MAGIC)?;
    let count = ri.u32("image count")? as usize;
    let rows = ri.u32("row count")? as usize;
    let cols = ri.u32("column count")? as usize;
    let mut rl = Reader { bytes: labels, pos: 0 };
    rl.magic(IDX_LABELS_MAGIC)?;
    let lcount = rl.u32("label count")? as usize;
    if lcount != count {
        return Err(MasoError::Format {
            offset: 4,
            message: format!("label count {lcount} differs from image count {count}"),
        });
    }
    let n = count.min(limit);
    let dim = rows * cols;
    let pixels = ri.body(n * dim)?;
    let lab = rl.body(n)?;
    let mut inputs: Vec<Vec<f64>> = pixels.chunks(dim.max(1)).take(n).map(|c| c.iter().map(|p| *p as f64 / 255.0).collect()).collect();
    let mut mean = vec![0.0; dim];
    for x in &inputs {
        for (m, v) in mean.iter_mut().zip(x) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    for x in &mut inputs {
        for (v, m) in x.iter_mut().zip(&mean) {
            *v -= m;
        }
    }
    let labels: Vec<usize> = lab.iter().map(|l| *l as usize).collect();
    let classes = labels.iter().max().map_or(0, |m| m + 1).max(10);
    Dataset::new(inputs, labels, classes)
}

pub fn load_idx(images: &Path, labels: &Path, limit: usize) -> Result<Dataset> {
    parse_idx(&std::fs::read(images)?, &std::fs::read(labels)?, limit)
}

/// Rows of features with the integer label in the last column. A first
/// row that does not parse as numbers is taken as a header.
pub fn parse_csv<R: std::io::Read>(reader: R) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(reader);
    let mut inputs = Vec::new();
    let mut labels = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let parsed: std::result::Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
        let Ok(mut row) = parsed else {
            if i == 0 {
                continue;
            }
            return Err(MasoError::InvalidParam(format!("row {} is not numeric", i + 1)));
        };
        let label = row.pop().ok_or_else(|| MasoError::InvalidParam(format!("row {} is empty", i + 1)))?;
        if label < 0.0 || label.fract() != 0.0 {
            return Err(MasoError::InvalidParam(format!("row {}: label {label} is not a class index", i + 1)));
        }
        inputs.push(row);
        labels.push(label as usize);
    }
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    Dataset::new(inputs, labels, classes)
}

pub fn load_csv(path: &Path) -> Result<Dataset> {
    parse_csv(std::fs::File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn idx_images(n: u32, rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
        let mut v = Vec::new();
        for x in [IDX_IMAGES_MAGIC, n, rows, cols] {
            v.extend_from_slice(&x.to_be_bytes());
        }
        v.extend_from_slice(pixels);
        v
    }

    fn idx_labels(labels: &[u8]) -> Vec<u8> {
        let mut v = Vec::new();
        for x in [IDX_LABELS_MAGIC, labels.len() as u32] {
            v.extend_from_slice(&x.to_be_bytes());
        }
        v.extend_from_slice(labels);
        v
    }

    #[test]
    fn synthetic_examples() {
        let d = gen_synthetic_2d(4, 1, Layout::RingsBlobs, 0).unwrap();
        assert_eq!(d.labels, vec![0, 1, 2, 3]);
        let a = gen_synthetic_2d(4, 50, Layout::RingsBlobs, 9).unwrap();
        let b = gen_synthetic_2d(4, 50, Layout::RingsBlobs, 9).unwrap();
        assert_eq!(serde_json::to_vec(&a).unwrap(), serde_json::to_vec(&b).unwrap());
        assert!(a.inputs.iter().flatten().all(|v| (-3.0..=3.0).contains(v)));
        assert_eq!(gen_synthetic_2d(4, 5000, Layout::RingsBlobs, 1).unwrap().len(), 20_000);
        assert!(gen_synthetic_2d(4, 0, Layout::RingsBlobs, 0).is_err());
        assert!(gen_synthetic_2d(3, 5, Layout::RingsBlobs, 0).is_err());
    }

    #[test]
    fn idx_round_trip_and_centering() {
        let imgs = idx_images(3, 1, 2, &[0, 255, 255, 255, 0, 0]);
        let labs = idx_labels(&[7, 1, 2]);
        let d = parse_idx(&imgs, &labs, 100).unwrap();
        assert_eq!(d.len(), 3);
        assert_eq!(d.labels, vec![7, 1, 2]);
        // per-pixel means are 1/3 and 2/3
        let want = [[-1.0 / 3.0, 1.0 / 3.0], [2.0 / 3.0, 1.0 / 3.0], [-1.0 / 3.0, -2.0 / 3.0]];
        for (x, w) in d.inputs.iter().zip(want) {
            assert!(crate::linalg::max_abs_diff(x, &w) < 1e-15);
        }
        assert_eq!(parse_idx(&imgs, &labs, 2).unwrap().len(), 2);
    }

    #[test]
    fn idx_errors_carry_offsets() {
        let imgs = idx_images(2, 2, 2, &[1; 8]);
        let labs = idx_labels(&[0, 1]);
        let mut bad = imgs.clone();
        bad[3] = 0x01;
        let e = parse_idx(&bad, &labs, 10).unwrap_err();
        assert!(matches!(e, MasoError::Format { offset: 0, .. }), "{e}");
        let e = parse_idx(&imgs[..10], &labs, 10).unwrap_err();
        assert!(matches!(e, MasoError::Format { offset: 8, .. }), "{e}");
        let e = parse_idx(&imgs[..20], &labs, 10).unwrap_err();
        assert!(matches!(e, MasoError::Format { offset: 20, .. }), "{e}");
        let e = parse_idx(&imgs, &idx_labels(&[0, 1, 2]), 10).unwrap_err();
        assert!(e.to_string().contains("label count"));
        assert!(matches!(parse_idx(&imgs, &labs, 0), Err(MasoError::InvalidParam(_))));
    }

    #[test]
    fn csv_with_and_without_header() {
        let d = parse_csv("x,y,label\n0.5, 1.0, 1\n-2,3,0\n".as_bytes()).unwrap();
        assert_eq!(d.inputs, vec![vec![0.5, 1.0], vec![-2.0, 3.0]]);
        assert_eq!(d.labels, vec![1, 0]);
        assert_eq!(d.classes, 2);
        assert_eq!(parse_csv("1,2,0\n".as_bytes()).unwrap().len(), 1);
        assert!(parse_csv("1,2,0.5\n".as_bytes()).is_err());
        assert!(parse_csv("1,2,0\n1,0\n".as_bytes()).is_err());
        assert!(parse_csv("1,nan,0\n".as_bytes()).is_err());
    }

    #[test]
    fn source_json() {
        let s: DatasetSource =
            serde_json::from_str(r#"{"kind":"synthetic2d","n_per_class":3,"layout":"rings+blobs","seed":4}"#).unwrap();
        assert_eq!(s.load(Path::new(".")).unwrap().len(), 12);
        assert!(serde_json::from_str::<DatasetSource>(r#"{"kind":"synthetic2d","n_per_class":3,"bogus":1}"#).is_err());
    }
}
