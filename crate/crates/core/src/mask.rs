//! Run-length encoded image masks, feature tokens, and the on-disk mask
//! container.
//!
//! A mask set for one camera image is stored as:
//!
//! - one or more 16-bit grayscale PNG id-maps (`0` = background, otherwise the
//!   mask id). Disjoint sets fit in a single layer; overlapping raw sets are
//!   spread greedily over as many layers as needed.
//! - a JSON sidecar mapping each mask id to its area, layer and token row.
//! - a token blob of little-endian `f32` rows, row-major.

use std::collections::HashSet;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Binary `width × height` mask as sorted, non-touching `(start, len)` runs
/// over row-major pixel indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RleMask {
    width: u32,
    height: u32,
    runs: Vec<(u32, u32)>,
}

impl RleMask {
    pub fn empty(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            runs: Vec::new(),
        }
    }

    /// Builds a mask from runs, validating bounds and canonicalizing order.
    pub fn from_runs(width: u32, height: u32, mut runs: Vec<(u32, u32)>) -> Result<Self> {
        let total = width as u64 * height as u64;
        for &(start, len) in &runs {
            if start as u64 + len as u64 > total {
                return Err(Error::invalid(format!(
                    "run ({start}, {len}) exceeds {width}x{height} image"
                )));
            }
        }
        runs.retain(|r| r.1 > 0);
        runs.sort_unstable();
        let mut merged: Vec<(u32, u32)> = Vec::with_capacity(runs.len());
        for (start, len) in runs {
            match merged.last_mut() {
                Some(last) if start <= last.0 + last.1 => {
                    let end = (last.0 + last.1).max(start + len);
                    last.1 = end - last.0;
                }
                _ => merged.push((start, len)),
            }
        }
        Ok(Self {
            width,
            height,
            runs: merged,
        })
    }

    /// Builds a mask from pixel indices in any order (duplicates allowed).
    pub fn from_pixels(width: u32, height: u32, pixels: impl IntoIterator<Item = u32>) -> Result<Self> {
        let mut px: Vec<u32> = pixels.into_iter().collect();
        px.sort_unstable();
        px.dedup();
        let total = width as u64 * height as u64;
        if let Some(&last) = px.last() {
            if last as u64 >= total {
                return Err(Error::invalid(format!(
                    "pixel {last} outside {width}x{height} image"
                )));
            }
        }
        let mut runs: Vec<(u32, u32)> = Vec::new();
        for p in px {
            match runs.last_mut() {
                Some(last) if last.0 + last.1 == p => last.1 += 1,
                _ => runs.push((p, 1)),
            }
        }
        Ok(Self { width, height, runs })
    }

    pub fn from_bitmap(width: u32, height: u32, bits: &[bool]) -> Result<Self> {
        if bits.len() as u64 != width as u64 * height as u64 {
            return Err(Error::LengthMismatch {
                expected: (width * height) as usize,
                actual: bits.len(),
            });
        }
        Self::from_pixels(
            width,
            height,
            bits.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i as u32),
        )
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn runs(&self) -> &[(u32, u32)] {
        &self.runs
    }

    pub fn area(&self) -> u64 {
        self.runs.iter().map(|r| r.1 as u64).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.runs.is_empty()
    }

    pub fn pixels(&self) -> impl Iterator<Item = u32> + '_ {
        self.runs.iter().flat_map(|&(s, l)| s..s + l)
    }

    pub fn contains(&self, pixel: u32) -> bool {
        let i = self.runs.partition_point(|r| r.0 <= pixel);
        i > 0 && pixel < self.runs[i - 1].0 + self.runs[i - 1].1
    }

    /// Number of pixels set in both masks.
    pub fn intersection_area(&self, other: &RleMask) -> u64 {
        let (a, b) = (&self.runs, &other.runs);
        let (mut i, mut j, mut inter) = (0, 0, 0u64);
        while i < a.len() && j < b.len() {
            let (a0, a1) = (a[i].0, a[i].0 + a[i].1);
            let (b0, b1) = (b[j].0, b[j].0 + b[j].1);
            let lo = a0.max(b0);
            let hi = a1.min(b1);
            if hi > lo {
                inter += (hi - lo) as u64;
            }
            if a1 <= b1 {
                i += 1;
            } else {
                j += 1;
            }
        }
        inter
    }

    pub fn iou(&self, other: &RleMask) -> f64 {
        let inter = self.intersection_area(other);
        let union = self.area() + other.area() - inter;
        if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        }
    }
}

/// Vision-language feature token attached to a mask or segment.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipToken(Vec<f64>);

/// Default token dimension of the image encoder.
pub const DEFAULT_TOKEN_DIM: usize = 768;

impl ClipToken {
    /// Rejects empty, non-finite or zero-norm vectors.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("empty token"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("token has a non-finite entry"));
        }
        let t = Self(values);
        if t.norm() == 0.0 {
            return Err(Error::invalid("token has zero norm"));
        }
        Ok(t)
    }

    pub fn from_f32(values: &[f32]) -> Result<Self> {
        Self::new(values.iter().map(|&v| v as f64).collect())
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn normalized(&self) -> ClipToken {
        let n = self.norm();
        ClipToken(self.0.iter().map(|v| v / n).collect())
    }

    pub fn dot(&self, other: &[f64]) -> f64 {
        self.0.iter().zip(other).map(|(a, b)| a * b).sum()
    }

    /// Cosine similarity with a vector of the same dimension.
    pub fn cosine(&self, other: &[f64]) -> f64 {
        let on = other.iter().map(|v| v * v).sum::<f64>().sqrt();
        self.dot(other) / (self.norm() * on)
    }

    pub fn to_f32(&self) -> Vec<f32> {
        self.0.iter().map(|&v| v as f32).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageMask {
    pub mask_id: u32,
    pub rle: RleMask,
    pub area: u64,
    pub token: ClipToken,
    /// Predicted quality score from the mask generator, used only by score-ordered NMS.
    pub score: Option<f32>,
}

impl ImageMask {
    pub fn new(mask_id: u32, rle: RleMask, token: ClipToken) -> Self {
        let area = rle.area();
        Self {
            mask_id,
            rle,
            area,
            token,
            score: None,
        }
    }

    pub fn with_score(mut self, score: f32) -> Self {
        self.score = Some(score);
        self
    }
}

/// All masks of one camera image.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageMaskSet {
    pub camera_id: String,
    pub width: u32,
    pub height: u32,
    pub masks: Vec<ImageMask>,
}

impl ImageMaskSet {
    pub fn new(camera_id: impl Into<String>, width: u32, height: u32, masks: Vec<ImageMask>) -> Result<Self> {
        let set = Self {
            camera_id: camera_id.into(),
            width,
            height,
            masks,
        };
        set.validate()?;
        Ok(set)
    }

    /// Checks sizes, run bounds, recorded areas and id uniqueness.
    pub fn validate(&self) -> Result<()> {
        let total = self.width as u64 * self.height as u64;
        let mut ids = HashSet::new();
        for m in &self.masks {
            if m.rle.width != self.width || m.rle.height != self.height {
                return Err(Error::invalid(format!(
                    "mask {} is {}x{}, image is {}x{}",
                    m.mask_id, m.rle.width, m.rle.height, self.width, self.height
                )));
            }
            if let Some(&(s, l)) = m.rle.runs.last() {
                if s as u64 + l as u64 > total {
                    return Err(Error::invalid(format!("mask {} exceeds image bounds", m.mask_id)));
                }
            }
            if m.area != m.rle.area() {
                return Err(Error::invalid(format!(
                    "mask {} records area {} but decodes to {}",
                    m.mask_id,
                    m.area,
                    m.rle.area()
                )));
            }
            if !ids.insert(m.mask_id) {
                return Err(Error::invalid(format!("duplicate mask id {}", m.mask_id)));
            }
        }
        Ok(())
    }

    /// Exhaustive pairwise disjointness check on decoded pixels.
    pub fn is_disjoint(&self) -> bool {
        let mut seen = vec![false; self.width as usize * self.height as usize];
        for m in &self.masks {
            for p in m.rle.pixels() {
                if std::mem::replace(&mut seen[p as usize], true) {
                    return false;
                }
            }
        }
        true
    }

    pub fn token_dim(&self) -> Option<usize> {
        self.masks.first().map(|m| m.token.dim())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
struct MaskEntry {
    mask_id: u32,
    area: u64,
    layer: usize,
    token_file: String,
    token_row: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    score: Option<f32>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
struct MaskSidecar {
    camera_id: String,
    width: u32,
    height: u32,
    token_dim: usize,
    layers: Vec<String>,
    masks: Vec<MaskEntry>,
}

/// Writes `values` as little-endian `f32` rows.
pub fn write_f32_blob(path: &Path, rows: impl IntoIterator<Item = Vec<f32>>) -> Result<()> {
    let mut bytes = Vec::new();
    for row in rows {
        for v in row {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Reads a little-endian `f32` blob with rows of `dim` values.
pub fn read_f32_blob(path: &Path, dim: usize) -> Result<Vec<Vec<f32>>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if dim == 0 || bytes.len() % (4 * dim) != 0 {
        return Err(Error::Format {
            offset: (bytes.len() - bytes.len() % (4 * dim.max(1))) as u64,
            message: format!("{}: size {} is not a whole number of {dim}-float rows", path.display(), bytes.len()),
        });
    }
    Ok(bytes
        .chunks_exact(4 * dim)
        .map(|row| {
            row.chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                .collect()
        })
        .collect())
}

fn write_png16(path: &Path, width: u32, height: u32, ids: &[u16]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), width, height);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Sixteen);
    let mut writer = enc.write_header().map_err(|e| Error::Png(e.to_string()))?;
    let data: Vec<u8> = ids.iter().flat_map(|v| v.to_be_bytes()).collect();
    writer.write_image_data(&data).map_err(|e| Error::Png(e.to_string()))
}

fn read_png16(path: &Path) -> Result<(u32, u32, Vec<u16>)> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut dec = png::Decoder::new(std::io::BufReader::new(file));
    dec.set_transformations(png::Transformations::IDENTITY);
    let mut reader = dec.read_info().map_err(|e| Error::Png(e.to_string()))?;
    let mut buf = vec![0u8; reader.output_buffer_size()];
    let info = reader.next_frame(&mut buf).map_err(|e| Error::Png(e.to_string()))?;
    if info.color_type != png::ColorType::Grayscale || info.bit_depth != png::BitDepth::Sixteen {
        return Err(Error::Png(format!(
            "{}: expected 16-bit grayscale id-map, got {:?}/{:?}",
            path.display(),
            info.color_type,
            info.bit_depth
        )));
    }
    let ids = buf[..info.buffer_size()]
        .chunks_exact(2)
        .map(|b| u16::from_be_bytes([b[0], b[1]]))
        .collect();
    Ok((info.width, info.height, ids))
}

/// Writes `set` as `<dir>/<stem>.json`, `<stem>.tokens.bin` and
/// `<stem>.layer<k>.png`. Returns the sidecar path.
pub fn write_mask_set(set: &ImageMaskSet, dir: impl AsRef<Path>, stem: &str) -> Result<PathBuf> {
    set.validate()?;
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let n_px = set.width as usize * set.height as usize;
    let dim = set.token_dim().unwrap_or(0);
    let token_file = format!("{stem}.tokens.bin");
    let mut layers: Vec<Vec<u16>> = Vec::new();
    let mut entries = Vec::with_capacity(set.masks.len());
    for (row, m) in set.masks.iter().enumerate() {
        if m.mask_id == 0 || m.mask_id > u16::MAX as u32 {
            return Err(Error::invalid(format!(
                "mask id {} does not fit a 16-bit id-map (1..=65535)",
                m.mask_id
            )));
        }
        if m.token.dim() != dim {
            return Err(Error::invalid(format!(
                "mask {} token has dimension {}, expected {dim}",
                m.mask_id,
                m.token.dim()
            )));
        }
        let layer = layers
            .iter()
            .position(|ids| m.rle.pixels().all(|p| ids[p as usize] == 0))
            .unwrap_or_else(|| {
                layers.push(vec![0u16; n_px]);
                layers.len() - 1
            });
        for p in m.rle.pixels() {
            layers[layer][p as usize] = m.mask_id as u16;
        }
        entries.push(MaskEntry {
            mask_id: m.mask_id,
            area: m.area,
            layer,
            token_file: token_file.clone(),
            token_row: row,
            score: m.score,
        });
    }
    let mut layer_names = Vec::with_capacity(layers.len());
    for (k, ids) in layers.iter().enumerate() {
        let name = format!("{stem}.layer{k}.png");
        write_png16(&dir.join(&name), set.width, set.height, ids)?;
        layer_names.push(name);
    }
    write_f32_blob(&dir.join(&token_file), set.masks.iter().map(|m| m.token.to_f32()))?;
    let sidecar = MaskSidecar {
        camera_id: set.camera_id.clone(),
        width: set.width,
        height: set.height,
        token_dim: dim,
        layers: layer_names,
        masks: entries,
    };
    let json_path = dir.join(format!("{stem}.json"));
    fs::write(&json_path, serde_json::to_string_pretty(&sidecar)?).map_err(|e| Error::io(&json_path, e))?;
    Ok(json_path)
}

/// Reads a mask set from its JSON sidecar; referenced files resolve relative
/// to the sidecar's directory.
pub fn read_mask_set(sidecar_path: impl AsRef<Path>) -> Result<ImageMaskSet> {
    let sidecar_path = sidecar_path.as_ref();
    let dir = sidecar_path.parent().unwrap_or(Path::new("."));
    let text = fs::read_to_string(sidecar_path).map_err(|e| Error::io(sidecar_path, e))?;
    let sc: MaskSidecar = serde_json::from_str(&text)?;
    let mut layers = Vec::with_capacity(sc.layers.len());
    for name in &sc.layers {
        let (w, h, ids) = read_png16(&dir.join(name))?;
        if (w, h) != (sc.width, sc.height) {
            return Err(Error::invalid(format!(
                "{name} is {w}x{h}, sidecar says {}x{}",
                sc.width, sc.height
            )));
        }
        layers.push(ids);
    }
    let mut blobs: std::collections::HashMap<&str, Vec<Vec<f32>>> = Default::default();
    let mut masks = Vec::with_capacity(sc.masks.len());
    for e in &sc.masks {
        let ids = layers
            .get(e.layer)
            .ok_or_else(|| Error::invalid(format!("mask {} references missing layer {}", e.mask_id, e.layer)))?;
        let rle = RleMask::from_pixels(
            sc.width,
            sc.height,
            ids.iter()
                .enumerate()
                .filter(|(_, &v)| v as u32 == e.mask_id)
                .map(|(i, _)| i as u32),
        )?;
        if !blobs.contains_key(e.token_file.as_str()) {
            blobs.insert(&e.token_file, read_f32_blob(&dir.join(&e.token_file), sc.token_dim)?);
        }
        let rows = &blobs[e.token_file.as_str()];
        let row = rows.get(e.token_row).ok_or_else(|| {
            Error::invalid(format!(
                "mask {} token row {} beyond {} rows in {}",
                e.mask_id,
                e.token_row,
                rows.len(),
                e.token_file
            ))
        })?;
        let mut mask = ImageMask::new(e.mask_id, rle, ClipToken::from_f32(row)?);
        if mask.area != e.area {
            return Err(Error::invalid(format!(
                "mask {} sidecar area {} differs from decoded area {}",
                e.mask_id, e.area, mask.area
            )));
        }
        mask.score = e.score;
        masks.push(mask);
    }
    ImageMaskSet::new(sc.camera_id, sc.width, sc.height, masks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tok(v: &[f64]) -> ClipToken {
        ClipToken::new(v.to_vec()).unwrap()
    }

    #[test]
    fn rle_from_pixels_merges_runs() {
        let m = RleMask::from_pixels(4, 4, [5, 1, 2, 3, 9, 2]).unwrap();
        assert_eq!(m.runs(), &[(1, 3), (5, 1), (9, 1)]);
        assert_eq!(m.area(), 5);
        assert!(m.contains(2) && !m.contains(4) && m.contains(9) && !m.contains(15));
    }

    #[test]
    fn rle_rejects_out_of_bounds() {
        assert!(RleMask::from_pixels(4, 4, [16]).is_err());
        assert!(RleMask::from_runs(4, 4, vec![(10, 7)]).is_err());
    }

    #[test]
    fn intersection_and_iou() {
        let a = RleMask::from_runs(10, 10, vec![(0, 10)]).unwrap();
        let b = RleMask::from_runs(10, 10, vec![(5, 10)]).unwrap();
        assert_eq!(a.intersection_area(&b), 5);
        assert!((a.iou(&b) - 5.0 / 15.0).abs() < 1e-15);
    }

    #[test]
    fn token_validation() {
        assert!(ClipToken::new(vec![0.0, 0.0]).is_err());
        assert!(ClipToken::new(vec![f64::NAN, 1.0]).is_err());
        assert!(ClipToken::new(vec![]).is_err());
        assert!((tok(&[3.0, 4.0]).normalized().norm() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn set_validation_catches_bad_area() {
        let rle = RleMask::from_pixels(4, 4, [0, 1]).unwrap();
        let mut m = ImageMask::new(1, rle, tok(&[1.0]));
        m.area = 3;
        assert!(ImageMaskSet::new("c", 4, 4, vec![m]).is_err());
    }

    #[test]
    fn container_round_trip_with_overlaps() {
        let dir = tempfile::tempdir().unwrap();
        let a = ImageMask::new(1, RleMask::from_pixels(8, 6, 0..20).unwrap(), tok(&[1.0, 0.5, -0.25]));
        let b = ImageMask::new(7, RleMask::from_pixels(8, 6, 10..30).unwrap(), tok(&[0.0, 2.0, 1.0]))
            .with_score(0.9);
        let c = ImageMask::new(3, RleMask::from_pixels(8, 6, [40, 47]).unwrap(), tok(&[0.1, 0.2, 0.3]));
        let set = ImageMaskSet::new("image_2", 8, 6, vec![a, b, c]).unwrap();
        let sidecar = write_mask_set(&set, dir.path(), "000000_image_2").unwrap();
        assert!(dir.path().join("000000_image_2.layer1.png").exists());
        let back = read_mask_set(&sidecar).unwrap();
        assert_eq!(back.masks.len(), 3);
        assert_eq!(back.camera_id, set.camera_id);
        for (x, y) in back.masks.iter().zip(&set.masks) {
            assert_eq!(x.mask_id, y.mask_id);
            assert_eq!(x.rle, y.rle);
            assert_eq!(x.score, y.score);
            assert_eq!(x.token.to_f32(), y.token.to_f32());
        }
    }

    proptest! {
        #[test]
        fn rle_matches_bitmap(bits in proptest::collection::vec(any::<bool>(), 35)) {
            let m = RleMask::from_bitmap(7, 5, &bits).unwrap();
            let decoded: Vec<u32> = m.pixels().collect();
            let expect: Vec<u32> = bits.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i as u32).collect();
            prop_assert_eq!(decoded, expect);
            prop_assert_eq!(m.area() as usize, bits.iter().filter(|&&b| b).count());
            for p in 0..35u32 {
                prop_assert_eq!(m.contains(p), bits[p as usize]);
            }
        }

        #[test]
        fn intersection_matches_bitmaps(a in proptest::collection::vec(any::<bool>(), 40),
                                        b in proptest::collection::vec(any::<bool>(), 40)) {
            let ma = RleMask::from_bitmap(8, 5, &a).unwrap();
            let mb = RleMask::from_bitmap(8, 5, &b).unwrap();
            let brute = a.iter().zip(&b).filter(|(x, y)| **x && **y).count() as u64;
            prop_assert_eq!(ma.intersection_area(&mb), brute);
        }
    }
}
