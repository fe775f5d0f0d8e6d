//! IDX image/label ingestion, 32x32 preprocessing, train/test splitting, and
//! the 47-class label map.
//!
//! IDX is the big-endian binary container used by NIST-derived datasets:
//! image files carry magic 0x00000803 then u32 N,H,W then N*H*W raw bytes;
//! label files carry magic 0x00000801 then u32 N then N bytes.

use std::fs;
use std::io;
use std::path::Path;

use thiserror::Error;

use crate::rng::Rng;
use crate::tensor::{Shape, Tensor};

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: bad magic 0x{found:08x}, expected 0x{expected:08x}")]
    BadMagic {
        path: String,
        expected: u32,
        found: u32,
    },
    #[error("{path}: truncated at offset {offset}: expected {expected} bytes, got {actual}")]
    Truncated {
        path: String,
        offset: usize,
        expected: usize,
        actual: usize,
    },
    #[error("{path}: dimensions {dims} overflow the addressable size")]
    DimOverflow { path: String, dims: String },
    #[error("unsupported size: {0}")]
    UnsupportedSize(String),
    #[error("invalid dataset: {0}")]
    Invalid(String),
    #[error("{path}")]
    Io { path: String, source: io::Error },
}

type Result<T> = std::result::Result<T, DatasetError>;

fn io_err(path: &Path, source: io::Error) -> DatasetError {
    DatasetError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// A stack of same-sized grayscale byte images.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawImages {
    pub count: usize,
    pub height: usize,
    pub width: usize,
    /// count * height * width bytes, image-major then row-major.
    pub pixels: Vec<u8>,
}

fn read_be_u32(bytes: &[u8], offset: usize, path: &str) -> Result<u32> {
    match bytes.get(offset..offset + 4) {
        Some(b) => Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]])),
        None => Err(DatasetError::Truncated {
            path: path.to_string(),
            offset,
            expected: offset + 4,
            actual: bytes.len(),
        }),
    }
}

/// Parse an IDX image file: magic 0x00000803, u32 N,H,W, then N*H*W bytes.
pub fn parse_idx_images(bytes: &[u8], path: &str) -> Result<RawImages> {
    let magic = read_be_u32(bytes, 0, path)?;
    if magic != IMAGE_MAGIC {
        return Err(DatasetError::BadMagic {
            path: path.to_string(),
            expected: IMAGE_MAGIC,
            found: magic,
        });
    }
    let count = read_be_u32(bytes, 4, path)? as usize;
    let height = read_be_u32(bytes, 8, path)? as usize;
    let width = read_be_u32(bytes, 12, path)? as usize;
    let payload = count
        .checked_mul(height)
        .and_then(|v| v.checked_mul(width))
        .ok_or_else(|| DatasetError::DimOverflow {
            path: path.to_string(),
            dims: format!("{count}x{height}x{width}"),
        })?;
    let expected = 16 + payload;
    if bytes.len() != expected {
        return Err(DatasetError::Truncated {
            path: path.to_string(),
            offset: 16,
            expected,
            actual: bytes.len(),
        });
    }
    Ok(RawImages {
        count,
        height,
        width,
        pixels: bytes[16..].to_vec(),
    })
}

/// Parse an IDX label file: magic 0x00000801, u32 N, then N bytes.
pub fn parse_idx_labels(bytes: &[u8], path: &str) -> Result<Vec<u8>> {
    let magic = read_be_u32(bytes, 0, path)?;
    if magic != LABEL_MAGIC {
        return Err(DatasetError::BadMagic {
            path: path.to_string(),
            expected: LABEL_MAGIC,
            found: magic,
        });
    }
    let count = read_be_u32(bytes, 4, path)? as usize;
    let expected = 8 + count;
    if bytes.len() != expected {
        return Err(DatasetError::Truncated {
            path: path.to_string(),
            offset: 8,
            expected,
            actual: bytes.len(),
        });
    }
    Ok(bytes[8..].to_vec())
}

pub fn read_idx_images(path: &Path) -> Result<RawImages> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    parse_idx_images(&bytes, &path.display().to_string())
}

pub fn read_idx_labels(path: &Path) -> Result<Vec<u8>> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    parse_idx_labels(&bytes, &path.display().to_string())
}

pub fn encode_idx_images(images: &RawImages) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.pixels.len());
    out.extend_from_slice(&IMAGE_MAGIC.to_be_bytes());
    out.extend_from_slice(&(images.count as u32).to_be_bytes());
    out.extend_from_slice(&(images.height as u32).to_be_bytes());
    out.extend_from_slice(&(images.width as u32).to_be_bytes());
    out.extend_from_slice(&images.pixels);
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

pub fn write_idx_images(path: &Path, images: &RawImages) -> Result<()> {
    fs::write(path, encode_idx_images(images)).map_err(|e| io_err(path, e))
}

pub fn write_idx_labels(path: &Path, labels: &[u8]) -> Result<()> {
    fs::write(path, encode_idx_labels(labels)).map_err(|e| io_err(path, e))
}

/// Exact per-block means of one h x w byte plane partitioned into a
/// target x target grid. Block r spans rows [r*h/target, (r+1)*h/target).
fn block_means(plane: &[u8], h: usize, w: usize, target: usize, invert: bool) -> Vec<f64> {
    let mut out = Vec::with_capacity(target * target);
    for by in 0..target {
        let y0 = by * h / target;
        let y1 = (by + 1) * h / target;
        for bx in 0..target {
            let x0 = bx * w / target;
            let x1 = (bx + 1) * w / target;
            let mut sum = 0u64;
            for y in y0..y1 {
                for x in x0..x1 {
                    let v = plane[y * w + x];
                    sum += if invert { 255 - v } else { v } as u64;
                }
            }
            let count = ((y1 - y0) * (x1 - x0)) as f64;
            out.push(sum as f64 / count);
        }
    }
    out
}

fn check_downsample(raw: &RawImages, target: usize) -> Result<()> {
    if raw.height < target || raw.width < target {
        return Err(DatasetError::UnsupportedSize(format!(
            "cannot rescale {}x{} up to {target}x{target}; only downsampling is supported",
            raw.height, raw.width
        )));
    }
    Ok(())
}

/// Area-average downsample to target x target, then normalize to `[0,1]`.
/// Returns a (N, 1, target, target) tensor.
pub fn preprocess(raw: &RawImages, target: usize, invert: bool) -> Result<Tensor<f32>> {
    check_downsample(raw, target)?;
    if raw.count == 0 {
        return Err(DatasetError::Invalid("empty image stack".into()));
    }
    let plane_len = raw.height * raw.width;
    let mut data = Vec::with_capacity(raw.count * target * target);
    for i in 0..raw.count {
        let plane = &raw.pixels[i * plane_len..(i + 1) * plane_len];
        for mean in block_means(plane, raw.height, raw.width, target, invert) {
            data.push((mean / 255.0) as f32);
        }
    }
    let shape = Shape::new([raw.count, 1, target, target])
        .map_err(|e| DatasetError::Invalid(e.to_string()))?;
    Ok(Tensor::from_vec(shape, data).expect("length matches shape"))
}

/// Area-average downsample kept as bytes (block mean rounded to nearest),
/// for writing prepared IDX files.
pub fn preprocess_to_bytes(raw: &RawImages, target: usize, invert: bool) -> Result<RawImages> {
    check_downsample(raw, target)?;
    let plane_len = raw.height * raw.width;
    let mut pixels = Vec::with_capacity(raw.count * target * target);
    for i in 0..raw.count {
        let plane = &raw.pixels[i * plane_len..(i + 1) * plane_len];
        for mean in block_means(plane, raw.height, raw.width, target, invert) {
            pixels.push(mean.round() as u8);
        }
    }
    Ok(RawImages {
        count: raw.count,
        height: target,
        width: target,
        pixels,
    })
}

/// Images plus class labels plus the class-index -> character map.
#[derive(Debug, Clone)]
pub struct LabeledDataset {
    pixels: Vec<f32>,
    dims: (usize, usize, usize),
    labels: Vec<u8>,
    label_map: Vec<char>,
}

impl LabeledDataset {
    pub fn new(
        pixels: Vec<f32>,
        dims: (usize, usize, usize),
        labels: Vec<u8>,
        label_map: Vec<char>,
    ) -> Result<Self> {
        let (c, h, w) = dims;
        let sample_len = c * h * w;
        if sample_len == 0 {
            return Err(DatasetError::Invalid("image dims must be positive".into()));
        }
        if pixels.len() != labels.len() * sample_len {
            return Err(DatasetError::Invalid(format!(
                "{} pixels for {} labels of {} values each",
                pixels.len(),
                labels.len(),
                sample_len
            )));
        }
        for (i, &label) in labels.iter().enumerate() {
            if label as usize >= label_map.len() {
                return Err(DatasetError::Invalid(format!(
                    "label {label} at sample {i} out of range for {} classes",
                    label_map.len()
                )));
            }
        }
        if let Some(bad) = pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(DatasetError::Invalid(format!(
                "pixel value {bad} outside [0,1]"
            )));
        }
        Ok(LabeledDataset {
            pixels,
            dims,
            labels,
            label_map,
        })
    }

    /// Normalize a 1-channel byte stack by 1/255 and attach labels.
    pub fn from_bytes(raw: &RawImages, labels: Vec<u8>, label_map: Vec<char>) -> Result<Self> {
        if raw.count != labels.len() {
            return Err(DatasetError::Invalid(format!(
                "{} images but {} labels",
                raw.count,
                labels.len()
            )));
        }
        let pixels = raw.pixels.iter().map(|&b| b as f32 / 255.0).collect();
        LabeledDataset::new(pixels, (1, raw.height, raw.width), labels, label_map)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image_dims(&self) -> (usize, usize, usize) {
        self.dims
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn label_map(&self) -> &[char] {
        &self.label_map
    }

    pub fn classes(&self) -> usize {
        self.label_map.len()
    }

    /// Gather the given samples into a (B, C, H, W) batch tensor.
    pub fn batch(&self, indices: &[usize]) -> Result<Tensor<f32>> {
        if indices.is_empty() {
            return Err(DatasetError::Invalid("empty batch".into()));
        }
        let (c, h, w) = self.dims;
        let sample_len = c * h * w;
        let mut data = Vec::with_capacity(indices.len() * sample_len);
        for &i in indices {
            if i >= self.len() {
                return Err(DatasetError::Invalid(format!(
                    "sample index {i} out of range for {} samples",
                    self.len()
                )));
            }
            data.extend_from_slice(&self.pixels[i * sample_len..(i + 1) * sample_len]);
        }
        let shape = Shape::new([indices.len(), c, h, w])
            .map_err(|e| DatasetError::Invalid(e.to_string()))?;
        Ok(Tensor::from_vec(shape, data).expect("length matches shape"))
    }

    /// Labels for the given samples, parallel to `batch`.
    pub fn gather_labels(&self, indices: &[usize]) -> Vec<u8> {
        indices.iter().map(|&i| self.labels[i]).collect()
    }

    /// New dataset holding only the given samples, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<LabeledDataset> {
        let (c, h, w) = self.dims;
        let sample_len = c * h * w;
        let mut pixels = Vec::with_capacity(indices.len() * sample_len);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(DatasetError::Invalid(format!(
                    "sample index {i} out of range for {} samples",
                    self.len()
                )));
            }
            pixels.extend_from_slice(&self.pixels[i * sample_len..(i + 1) * sample_len]);
            labels.push(self.labels[i]);
        }
        Ok(LabeledDataset {
            pixels,
            dims: self.dims,
            labels,
            label_map: self.label_map.clone(),
        })
    }
}

/// Disjoint shuffled train/test index lists covering 0..N.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
}

/// Shuffle a permutation of 0..n with the seed, then cut: the test side gets
/// floor((1 - train_ratio) * n) entries, the train side the remainder. With
/// the 70:30 ratio this reproduces 101,784 -> 71,249 / 30,535.
pub fn split(n: usize, train_ratio: f64, seed: u64) -> Result<SplitIndices> {
    if n < 2 {
        return Err(DatasetError::Invalid(format!(
            "cannot split {n} samples into train and test"
        )));
    }
    if !(train_ratio > 0.0 && train_ratio < 1.0) {
        return Err(DatasetError::Invalid(format!(
            "train ratio {train_ratio} out of (0,1)"
        )));
    }
    let test_size = ((1.0 - train_ratio) * n as f64).floor() as usize;
    let train_size = n - test_size;
    let mut perm = Rng::new(seed).permutation(n);
    let test = perm.split_off(train_size);
    Ok(SplitIndices {
        train: perm,
        test,
        seed,
    })
}

/// The 47 balanced classes: digits, uppercase, then the 11 distinct
/// lowercase letters a b d e f g h n q r t.
pub fn label_map_balanced47() -> Vec<char> {
    let mut map = Vec::with_capacity(47);
    map.extend('0'..='9');
    map.extend('A'..='Z');
    map.extend(['a', 'b', 'd', 'e', 'f', 'g', 'h', 'n', 'q', 'r', 't']);
    map
}

/// Optional label-map override file: UTF-8, one character per line, exactly
/// `classes` lines.
pub fn parse_label_map(text: &str, classes: usize) -> Result<Vec<char>> {
    let mut map = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let mut chars = line.chars();
        match (chars.next(), chars.next()) {
            (Some(c), None) => map.push(c),
            _ => {
                return Err(DatasetError::Invalid(format!(
                    "label map line {}: expected exactly one character, got {line:?}",
                    i + 1
                )))
            }
        }
    }
    if map.len() != classes {
        return Err(DatasetError::Invalid(format!(
            "label map has {} lines, expected {classes}",
            map.len()
        )));
    }
    Ok(map)
}

pub fn read_label_map(path: &Path, classes: usize) -> Result<Vec<char>> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    parse_label_map(&text, classes)
}

/// Serialize a split as CSV: a seed comment, a header, then one
/// `index,subset` row per sample in permutation order.
pub fn encode_split_csv(split: &SplitIndices) -> String {
    let mut out = String::new();
    out.push_str(&format!("# seed={}\n", split.seed));
    out.push_str("index,subset\n");
    for &i in &split.train {
        out.push_str(&format!("{i},train\n"));
    }
    for &i in &split.test {
        out.push_str(&format!("{i},test\n"));
    }
    out
}

pub fn parse_split_csv(text: &str) -> Result<SplitIndices> {
    let mut seed = 0u64;
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line == "index,subset" {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            if let Some(v) = rest.trim().strip_prefix("seed=") {
                seed = v.parse().map_err(|_| {
                    DatasetError::Invalid(format!("split line {}: bad seed {v:?}", ln + 1))
                })?;
            }
            continue;
        }
        let (idx, subset) = line.split_once(',').ok_or_else(|| {
            DatasetError::Invalid(format!("split line {}: expected index,subset", ln + 1))
        })?;
        let idx: usize = idx.parse().map_err(|_| {
            DatasetError::Invalid(format!("split line {}: bad index {idx:?}", ln + 1))
        })?;
        match subset {
            "train" => train.push(idx),
            "test" => test.push(idx),
            other => {
                return Err(DatasetError::Invalid(format!(
                    "split line {}: unknown subset {other:?}",
                    ln + 1
                )))
            }
        }
    }
    if train.is_empty() && test.is_empty() {
        return Err(DatasetError::Invalid("split file has no entries".into()));
    }
    Ok(SplitIndices { train, test, seed })
}

pub fn write_split_csv(path: &Path, split: &SplitIndices) -> Result<()> {
    fs::write(path, encode_split_csv(split)).map_err(|e| io_err(path, e))
}

pub fn read_split_csv(path: &Path) -> Result<SplitIndices> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    parse_split_csv(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image_fixture() -> Vec<u8> {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&IMAGE_MAGIC.to_be_bytes());
        bytes.extend_from_slice(&2u32.to_be_bytes());
        bytes.extend_from_slice(&2u32.to_be_bytes());
        bytes.extend_from_slice(&2u32.to_be_bytes());
        bytes.extend_from_slice(&[0, 1, 2, 3, 4, 5, 6, 7]);
        bytes
    }

    #[test]
    fn parses_constructed_image_fixture() {
        let raw = parse_idx_images(&image_fixture(), "fixture").unwrap();
        assert_eq!((raw.count, raw.height, raw.width), (2, 2, 2));
        assert_eq!(&raw.pixels[0..4], &[0, 1, 2, 3]);
        assert_eq!(&raw.pixels[4..8], &[4, 5, 6, 7]);
    }

    #[test]
    fn image_reader_rejects_label_magic() {
        let mut bytes = image_fixture();
        bytes[0..4].copy_from_slice(&LABEL_MAGIC.to_be_bytes());
        let err = parse_idx_images(&bytes, "fixture").unwrap_err();
        match err {
            DatasetError::BadMagic {
                expected, found, ..
            } => {
                assert_eq!(expected, IMAGE_MAGIC);
                assert_eq!(found, LABEL_MAGIC);
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn truncated_image_names_expected_and_actual() {
        let mut bytes = image_fixture();
        bytes.truncate(bytes.len() - 3);
        let err = parse_idx_images(&bytes, "fixture").unwrap_err();
        match err {
            DatasetError::Truncated {
                expected, actual, ..
            } => {
                assert_eq!(expected, 24);
                assert_eq!(actual, 21);
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn dim_overflow_is_reported() {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&IMAGE_MAGIC.to_be_bytes());
        bytes.extend_from_slice(&u32::MAX.to_be_bytes());
        bytes.extend_from_slice(&u32::MAX.to_be_bytes());
        bytes.extend_from_slice(&u32::MAX.to_be_bytes());
        let err = parse_idx_images(&bytes, "fixture").unwrap_err();
        assert!(matches!(err, DatasetError::DimOverflow { .. }));
    }

    #[test]
    fn label_fixture_round_trip() {
        let encoded = encode_idx_labels(&[0, 46]);
        assert_eq!(parse_idx_labels(&encoded, "fixture").unwrap(), vec![0, 46]);
    }

    #[test]
    fn empty_label_file_is_valid() {
        let encoded = encode_idx_labels(&[]);
        assert_eq!(
            parse_idx_labels(&encoded, "fixture").unwrap(),
            Vec::<u8>::new()
        );
    }

    #[test]
    fn label_out_of_range_fails_dataset_validation() {
        let raw = RawImages {
            count: 1,
            height: 2,
            width: 2,
            pixels: vec![0; 4],
        };
        let err = LabeledDataset::from_bytes(&raw, vec![47], label_map_balanced47()).unwrap_err();
        assert!(matches!(err, DatasetError::Invalid(_)));
    }

    #[test]
    fn idx_file_round_trip() {
        let raw = RawImages {
            count: 3,
            height: 4,
            width: 5,
            pixels: (0..60).collect(),
        };
        let dir = std::env::temp_dir().join(format!("htrc-idx-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let img_path = dir.join("imgs.idx");
        let lbl_path = dir.join("lbls.idx");
        write_idx_images(&img_path, &raw).unwrap();
        write_idx_labels(&lbl_path, &[1, 2, 3]).unwrap();
        assert_eq!(read_idx_images(&img_path).unwrap(), raw);
        assert_eq!(read_idx_labels(&lbl_path).unwrap(), vec![1, 2, 3]);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn preprocess_constant_image() {
        let raw = RawImages {
            count: 1,
            height: 64,
            width: 64,
            pixels: vec![128; 64 * 64],
        };
        let t = preprocess(&raw, 32, false).unwrap();
        assert_eq!(t.dims(), &[1, 1, 32, 32]);
        for &v in t.iter() {
            assert!((v - 128.0 / 255.0).abs() < 1e-7);
        }
    }

    #[test]
    fn preprocess_block_alignment() {
        // One lit 4x4 block in a 128x128 image maps to exactly one pixel.
        let mut pixels = vec![0u8; 128 * 128];
        for y in 8..12 {
            for x in 20..24 {
                pixels[y * 128 + x] = 255;
            }
        }
        let raw = RawImages {
            count: 1,
            height: 128,
            width: 128,
            pixels,
        };
        let t = preprocess(&raw, 32, false).unwrap();
        for by in 0..32 {
            for bx in 0..32 {
                let v = t.data()[by * 32 + bx];
                if by == 2 && bx == 5 {
                    assert_eq!(v, 1.0);
                } else {
                    assert_eq!(v, 0.0);
                }
            }
        }
    }

    // Brute-force block mean written straight from the definition.
    fn block_mean_oracle(plane: &[u8], h: usize, w: usize, target: usize) -> Vec<f64> {
        let mut out = Vec::new();
        for by in 0..target {
            for bx in 0..target {
                let (y0, y1) = (by * h / target, (by + 1) * h / target);
                let (x0, x1) = (bx * w / target, (bx + 1) * w / target);
                let mut sum = 0.0;
                let mut n = 0.0;
                for y in y0..y1 {
                    for x in x0..x1 {
                        sum += plane[y * w + x] as f64;
                        n += 1.0;
                    }
                }
                out.push(sum / n);
            }
        }
        out
    }

    #[test]
    fn preprocess_matches_block_mean_oracle_exactly() {
        let mut rng = Rng::new(71);
        let pixels: Vec<u8> = (0..64 * 64).map(|_| rng.next_below(256) as u8).collect();
        let raw = RawImages {
            count: 1,
            height: 64,
            width: 64,
            pixels: pixels.clone(),
        };
        let t = preprocess(&raw, 32, false).unwrap();
        let oracle = block_mean_oracle(&pixels, 64, 64, 32);
        for (&got, want) in t.iter().zip(oracle) {
            assert_eq!(got, (want / 255.0) as f32);
        }
    }

    #[test]
    fn preprocess_rejects_upscaling() {
        let raw = RawImages {
            count: 1,
            height: 16,
            width: 16,
            pixels: vec![0; 256],
        };
        assert!(matches!(
            preprocess(&raw, 32, false),
            Err(DatasetError::UnsupportedSize(_))
        ));
    }

    #[test]
    fn preprocess_invert_flips_polarity() {
        let raw = RawImages {
            count: 1,
            height: 32,
            width: 32,
            pixels: vec![255; 1024],
        };
        let t = preprocess(&raw, 32, true).unwrap();
        assert!(t.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn preprocess_output_stays_in_unit_range() {
        let mut rng = Rng::new(5);
        for trial in 0..5 {
            let (h, w) = (33 + trial * 7, 40 + trial * 3);
            let pixels: Vec<u8> = (0..h * w).map(|_| rng.next_below(256) as u8).collect();
            let raw = RawImages {
                count: 1,
                height: h,
                width: w,
                pixels,
            };
            let t = preprocess(&raw, 32, false).unwrap();
            assert!(t.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn preprocess_preserves_mean_on_block_aligned_input() {
        let mut rng = Rng::new(6);
        let pixels: Vec<u8> = (0..128 * 128).map(|_| rng.next_below(256) as u8).collect();
        let raw = RawImages {
            count: 1,
            height: 128,
            width: 128,
            pixels: pixels.clone(),
        };
        let t = preprocess(&raw, 32, false).unwrap();
        let in_mean = pixels.iter().map(|&b| b as f64).sum::<f64>() / pixels.len() as f64 / 255.0;
        let out_mean = t.iter().map(|&v| v as f64).sum::<f64>() / t.len() as f64;
        assert!((in_mean - out_mean).abs() < 1.0 / 255.0);
    }

    #[test]
    fn split_reproduces_published_counts() {
        let s = split(101_784, 0.7, 0).unwrap();
        assert_eq!(s.train.len(), 71_249);
        assert_eq!(s.test.len(), 30_535);
    }

    #[test]
    fn split_small_example() {
        let s = split(10, 0.7, 1).unwrap();
        assert_eq!(s.train.len(), 7);
        assert_eq!(s.test.len(), 3);
    }

    #[test]
    fn split_is_deterministic_and_seed_sensitive() {
        let a = split(1000, 0.7, 9).unwrap();
        let b = split(1000, 0.7, 9).unwrap();
        let c = split(1000, 0.7, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.train, c.train);
    }

    #[test]
    fn split_partition_property_exhaustive() {
        for n in 2..=1000 {
            let s = split(n, 0.7, 3).unwrap();
            assert_eq!(s.test.len(), 3 * n / 10, "n={n}");
            assert_eq!(s.train.len() + s.test.len(), n);
            let mut seen = vec![false; n];
            for &i in s.train.iter().chain(s.test.iter()) {
                assert!(!seen[i], "duplicate index {i} for n={n}");
                seen[i] = true;
            }
            assert!(seen.into_iter().all(|b| b));
        }
    }

    #[test]
    fn split_rejects_degenerate_input() {
        assert!(split(1, 0.7, 0).is_err());
        assert!(split(10, 0.0, 0).is_err());
        assert!(split(10, 1.0, 0).is_err());
    }

    #[test]
    fn balanced47_label_map() {
        let map = label_map_balanced47();
        assert_eq!(map.len(), 47);
        assert_eq!(map[0], '0');
        assert_eq!(map[10], 'A');
        assert_eq!(map[36], 'a');
        assert_eq!(map[46], 't');
    }

    #[test]
    fn label_map_override_parses() {
        assert_eq!(
            parse_label_map("x\ny\nz\n", 3).unwrap(),
            vec!['x', 'y', 'z']
        );
        assert!(parse_label_map("x\nyy\n", 2).is_err());
        assert!(parse_label_map("x\ny\n", 3).is_err());
    }

    #[test]
    fn split_csv_round_trip() {
        let s = split(20, 0.7, 123).unwrap();
        let encoded = encode_split_csv(&s);
        let parsed = parse_split_csv(&encoded).unwrap();
        assert_eq!(parsed, s);
    }
}
