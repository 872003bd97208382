//! Dataset ingestion: IDX (MNIST) parsing, normalization, source-node
//! partitioning, and a deterministic synthetic image generator for
//! self-contained runs.

use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::Path;

use rand::Rng;

use crate::error::{NncError, Result};
use crate::rng::stream_rng;
use crate::tensor::Tensor;
use crate::topology::Topology;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitTag {
    Train,
    Test,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    /// One image per row, pixels normalized to [0, 1].
    pub images: Tensor,
    /// Loaded when available but unused by the multicast task.
    pub labels: Option<Vec<u8>>,
    pub split: SplitTag,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.images.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.images.rows() == 0
    }

    /// First `n` images as a new dataset (desk-scale subsetting).
    pub fn take(&self, n: usize) -> Dataset {
        let n = n.min(self.len());
        let indices: Vec<usize> = (0..n).collect();
        Dataset {
            images: self.images.select_rows(&indices),
            labels: self.labels.as_ref().map(|l| l[..n].to_vec()),
            split: self.split,
        }
    }
}

struct Cursor<R> {
    reader: R,
    path: String,
    offset: u64,
}

impl<R: Read> Cursor<R> {
    fn err(&self, message: impl Into<String>) -> NncError {
        NncError::Parse {
            path: self.path.clone(),
            offset: self.offset,
            message: message.into(),
        }
    }

    fn read_exact(&mut self, buf: &mut [u8]) -> Result<()> {
        self.reader
            .read_exact(buf)
            .map_err(|e| self.err(format!("truncated file: {e}")))?;
        self.offset += buf.len() as u64;
        Ok(())
    }

    fn read_u32_be(&mut self) -> Result<u32> {
        let mut b = [0u8; 4];
        self.read_exact(&mut b)?;
        Ok(u32::from_be_bytes(b))
    }
}

/// Parse an IDX image file (and optionally its label file) into a normalized
/// dataset. Pixels are divided by 255; 28x28 images flatten row-major.
pub fn load_idx(
    images_path: impl AsRef<Path>,
    labels_path: Option<&Path>,
    split: SplitTag,
) -> Result<Dataset> {
    let path = images_path.as_ref();
    let mut cur = Cursor {
        reader: BufReader::new(File::open(path)?),
        path: path.display().to_string(),
        offset: 0,
    };
    let magic = cur.read_u32_be()?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(cur.err(format!(
            "bad magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"
        )));
    }
    let count = cur.read_u32_be()? as usize;
    let rows = cur.read_u32_be()? as usize;
    let cols = cur.read_u32_be()? as usize;
    let mut raw = vec![0u8; count * rows * cols];
    cur.read_exact(&mut raw)?;
    let data: Vec<f64> = raw.iter().map(|&b| f64::from(b) / 255.0).collect();
    let images = Tensor::from_vec(count, rows * cols, data)?;

    let labels = match labels_path {
        Some(lp) => Some(load_idx_labels(lp, count)?),
        None => None,
    };
    Ok(Dataset {
        images,
        labels,
        split,
    })
}

fn load_idx_labels(path: &Path, expected: usize) -> Result<Vec<u8>> {
    let mut cur = Cursor {
        reader: BufReader::new(File::open(path)?),
        path: path.display().to_string(),
        offset: 0,
    };
    let magic = cur.read_u32_be()?;
    if magic != IDX_LABELS_MAGIC {
        return Err(cur.err(format!(
            "bad magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}"
        )));
    }
    let count = cur.read_u32_be()? as usize;
    if count != expected {
        return Err(cur.err(format!(
            "label count {count} does not match image count {expected}"
        )));
    }
    let mut labels = vec![0u8; count];
    cur.read_exact(&mut labels)?;
    Ok(labels)
}

/// Write images (u8 pixels, row-major `rows x cols` each) in IDX format.
pub fn write_idx_images(
    path: impl AsRef<Path>,
    images: &[Vec<u8>],
    rows: usize,
    cols: usize,
) -> Result<()> {
    let mut f = File::create(path)?;
    f.write_all(&IDX_IMAGES_MAGIC.to_be_bytes())?;
    f.write_all(&(images.len() as u32).to_be_bytes())?;
    f.write_all(&(rows as u32).to_be_bytes())?;
    f.write_all(&(cols as u32).to_be_bytes())?;
    for img in images {
        if img.len() != rows * cols {
            return Err(NncError::config("image pixel count mismatch"));
        }
        f.write_all(img)?;
    }
    Ok(())
}

/// Split a batch into per-source-node column slices: consecutive slices in
/// node-id order, widths given by each source's dimension.
pub fn partition_for_sources(batch: &Tensor, topology: &Topology) -> Result<Vec<(String, Tensor)>> {
    let total = topology.total_source_dim();
    if batch.cols() != total {
        return Err(NncError::config(format!(
            "batch width {} does not match total source dimension {}",
            batch.cols(),
            total
        )));
    }
    let mut out = Vec::new();
    let mut offset = 0;
    for s in topology.sources() {
        let slice = batch.slice_cols(offset, offset + s.source_dim)?;
        out.push((s.id.clone(), slice));
        offset += s.source_dim;
    }
    Ok(out)
}

/// Deterministic 28x28 stroke images: a few quadratic curves stamped with a
/// smooth falloff, quantized to u8 like a real scan. Halves are correlated
/// because strokes cross the midline.
pub fn synthetic_images(count: usize, seed: u64) -> Vec<Vec<u8>> {
    const W: usize = 28;
    (0..count)
        .map(|i| {
            let mut rng = stream_rng(seed, 0xDA7A, i as u64);
            let mut img = vec![0.0f64; W * W];
            let strokes = rng.gen_range(2..=4);
            for _ in 0..strokes {
                // quadratic Bezier with endpoints biased to opposite halves
                let p0 = (rng.gen_range(3.0..25.0), rng.gen_range(2.0..14.0));
                let p2 = (rng.gen_range(3.0..25.0), rng.gen_range(14.0..26.0));
                let p1 = (rng.gen_range(1.0..27.0), rng.gen_range(4.0..24.0));
                let thickness: f64 = rng.gen_range(0.8..1.6);
                let steps = 60;
                for s in 0..=steps {
                    let t = s as f64 / steps as f64;
                    let u = 1.0 - t;
                    let x = u * u * p0.0 + 2.0 * u * t * p1.0 + t * t * p2.0;
                    let y = u * u * p0.1 + 2.0 * u * t * p1.1 + t * t * p2.1;
                    let x0 = (x - 3.0).max(0.0) as usize;
                    let x1 = ((x + 3.0) as usize).min(W - 1);
                    let y0 = (y - 3.0).max(0.0) as usize;
                    let y1 = ((y + 3.0) as usize).min(W - 1);
                    for py in y0..=y1 {
                        for px in x0..=x1 {
                            let d2 = (px as f64 - x).powi(2) + (py as f64 - y).powi(2);
                            let v = (-d2 / (2.0 * thickness * thickness)).exp();
                            let cell = &mut img[py * W + px];
                            *cell = cell.max(v);
                        }
                    }
                }
            }
            img.iter().map(|&v| (v * 255.0).round() as u8).collect()
        })
        .collect()
}

/// A normalized dataset of synthetic images (784 columns, values in [0,1]).
pub fn synthetic_dataset(count: usize, seed: u64, split: SplitTag) -> Dataset {
    let imgs = synthetic_images(count, seed);
    let data: Vec<f64> = imgs
        .iter()
        .flat_map(|img| img.iter().map(|&b| f64::from(b) / 255.0))
        .collect();
    Dataset {
        images: Tensor::from_vec(count, 784, data).expect("28x28 synthetic images"),
        labels: None,
        split,
    }
}
