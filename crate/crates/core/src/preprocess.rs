//! Clip preprocessing: ROI crop with zero padding, bilinear resize,
//! temporal normalization, intensity scaling and channel tiling, plus
//! train-only rigid augmentation.

use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::scalar::Scalar;
use crate::seed::SeedStream;

pub const DEFAULT_ROI: RoiRect = RoiRect {
    x: 420,
    y: 275,
    w: 240,
    h: 240,
};
pub const TARGET_SIZE: usize = 224;
pub const TARGET_FRAMES: usize = 85;
pub const CHANNELS: usize = 3;

/// Axis-aligned crop in raster coordinates (top-left corner, extent).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoiRect {
    pub x: i64,
    pub y: i64,
    pub w: usize,
    pub h: usize,
}

impl Default for RoiRect {
    fn default() -> Self {
        DEFAULT_ROI
    }
}

impl RoiRect {
    pub fn new(x: i64, y: i64, w: usize, h: usize) -> Result<Self> {
        if w == 0 || h == 0 {
            return Err(Error::InvalidInput(format!("ROI extent {w}x{h} must be positive")));
        }
        Ok(Self { x, y, w, h })
    }
}

impl std::str::FromStr for RoiRect {
    type Err = Error;

    /// `x,y,w,h`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        let bad = || Error::InvalidInput(format!("ROI {s:?} is not x,y,w,h"));
        if parts.len() != 4 {
            return Err(bad());
        }
        let x = parts[0].parse().map_err(|_| bad())?;
        let y = parts[1].parse().map_err(|_| bad())?;
        let w = parts[2].parse().map_err(|_| bad())?;
        let h = parts[3].parse().map_err(|_| bad())?;
        RoiRect::new(x, y, w, h)
    }
}

/// Row-major single-channel image.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster<T> {
    pub width: usize,
    pub height: usize,
    pub data: Vec<T>,
}

impl<T: Copy> Raster<T> {
    pub fn new(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::ShapeError(format!(
                "{} samples for a {width}x{height} raster",
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, v: T) -> Self {
        Self {
            width,
            height,
            data: vec![v; width * height],
        }
    }

    pub fn get(&self, row: usize, col: usize) -> T {
        self.data[row * self.width + col]
    }

    pub fn map<U>(&self, f: impl Fn(T) -> U) -> Raster<U> {
        Raster {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

fn decode_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::DecodeError {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// Parses binary 8-bit PGM (`P5`, maxval <= 255).
pub fn parse_pgm(bytes: &[u8], path: &Path) -> Result<Raster<u8>> {
    let mut pos = 0;
    let mut token = || -> Result<String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() && bytes[pos] != b'#' {
            pos += 1;
        }
        if start == pos {
            return Err(decode_err(path, "truncated header"));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    if token()? != "P5" {
        return Err(decode_err(path, "not a binary PGM (P5)"));
    }
    let mut num = |what: &str| -> Result<usize> {
        token()?
            .parse()
            .map_err(|_| decode_err(path, format!("bad {what} in header")))
    };
    let width = num("width")?;
    let height = num("height")?;
    let maxval = num("maxval")?;
    if width == 0 || height == 0 {
        return Err(decode_err(path, "zero-sized image"));
    }
    if maxval == 0 || maxval > 255 {
        return Err(decode_err(path, format!("maxval {maxval} is not 8-bit")));
    }
    // Exactly one whitespace byte separates the header from the samples.
    let start = pos + 1;
    let need = width * height;
    if bytes.len() < start + need {
        return Err(decode_err(path, format!("expected {need} samples, file is truncated")));
    }
    Raster::new(width, height, bytes[start..start + need].to_vec())
}

pub fn read_pgm(path: &Path) -> Result<Raster<u8>> {
    let bytes = std::fs::read(path).map_err(|e| decode_err(path, e.to_string()))?;
    parse_pgm(&bytes, path)
}

pub fn encode_pgm(frame: &Raster<u8>) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", frame.width, frame.height).into_bytes();
    out.extend_from_slice(&frame.data);
    out
}

/// Crops `roi`; pixels outside the frame read as zero.
pub fn crop_roi<T: Copy + Default>(frame: &Raster<T>, roi: RoiRect) -> Raster<T> {
    let mut out = Raster::filled(roi.w, roi.h, T::default());
    for i in 0..roi.h {
        let r = roi.y + i as i64;
        if r < 0 || r >= frame.height as i64 {
            continue;
        }
        for j in 0..roi.w {
            let c = roi.x + j as i64;
            if c >= 0 && c < frame.width as i64 {
                out.data[i * roi.w + j] = frame.get(r as usize, c as usize);
            }
        }
    }
    out
}

/// Exact at both ends and on flat regions.
fn lerp<T: Scalar>(a: T, b: T, w: T) -> T {
    a + (b - a) * w
}

/// Source coordinate, lower neighbour, upper neighbour and weight for
/// half-pixel-centre sampling along one axis.
fn axis_taps(out_len: usize, in_len: usize) -> Vec<(usize, usize, f64)> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|o| {
            let s = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (in_len - 1) as f64);
            let lo = s.floor() as usize;
            let hi = (lo + 1).min(in_len - 1);
            (lo, hi, s - lo as f64)
        })
        .collect()
}

/// Bilinear resize of a square raster to `target x target`.
pub fn resize_bilinear<T: Scalar>(patch: &Raster<T>, target: usize) -> Result<Raster<T>> {
    if patch.width != patch.height {
        return Err(Error::ShapeError(format!(
            "resize expects a square patch, got {}x{}",
            patch.width, patch.height
        )));
    }
    if patch.width == 0 || target == 0 {
        return Err(Error::ShapeError("resize of an empty raster".into()));
    }
    if patch.width == target {
        return Ok(patch.clone());
    }
    let taps = axis_taps(target, patch.width);
    let mut data = Vec::with_capacity(target * target);
    for &(y0, y1, wy) in &taps {
        let wy = T::of(wy);
        for &(x0, x1, wx) in &taps {
            let wx = T::of(wx);
            let top = lerp(patch.get(y0, x0), patch.get(y0, x1), wx);
            let bottom = lerp(patch.get(y1, x0), patch.get(y1, x1), wx);
            data.push(lerp(top, bottom, wy));
        }
    }
    Raster::new(target, target, data)
}

/// First `t_star` frames, or all frames followed by copies of the last.
pub fn temporal_normalize<F: Clone>(frames: Vec<F>, t_star: usize) -> Result<Vec<F>> {
    let Some(last) = frames.last().cloned() else {
        return Err(Error::EmptyInput("clip has no frames".into()));
    };
    let mut frames = frames;
    if frames.len() >= t_star {
        frames.truncate(t_star);
    } else {
        frames.resize(t_star, last);
    }
    Ok(frames)
}

/// Divides 0-255 intensities by 255 and tiles them into three identical planes.
pub fn scale_and_tile<T: Scalar>(frame: &Raster<T>) -> [Raster<T>; CHANNELS] {
    let plane = frame.map(|v| v / T::of(255.0));
    [plane.clone(), plane.clone(), plane]
}

/// Rotation (degrees, about the image centre) then translation (pixels)
/// applied to every frame of a clip.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentRecord {
    pub seed: u64,
    pub rotation_deg: f64,
    pub dx: f64,
    pub dy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub max_rotation_deg: f64,
    pub max_translation: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            max_rotation_deg: 5.0,
            max_translation: 8.0,
        }
    }
}

/// Which side of a split a clip is prepared for; only training clips are
/// augmented.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClipRole {
    Train,
    Eval,
}

/// `(channels, frames, height, width)` tensor in C order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clip<T> {
    pub channels: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<T>,
    pub source_frame_count: usize,
    pub augmentation: Option<AugmentRecord>,
}

impl<T: Scalar> Clip<T> {
    pub fn shape(&self) -> [usize; 4] {
        [self.channels, self.frames, self.height, self.width]
    }

    fn plane_len(&self) -> usize {
        self.height * self.width
    }

    /// Plane `(c, t)` as a row-major slice.
    pub fn plane(&self, c: usize, t: usize) -> &[T] {
        let n = self.plane_len();
        let at = (c * self.frames + t) * n;
        &self.data[at..at + n]
    }

    /// Assembles a clip from equally sized frames of 0-255 intensities.
    pub fn from_frames(frames: &[Raster<T>], source_frame_count: usize) -> Result<Self> {
        let first = frames.first().ok_or_else(|| Error::EmptyInput("no frames".into()))?;
        let (h, w) = (first.height, first.width);
        if frames.iter().any(|f| f.height != h || f.width != w) {
            return Err(Error::ShapeError("frames differ in size".into()));
        }
        let tiled: Vec<[Raster<T>; CHANNELS]> = frames.iter().map(scale_and_tile).collect();
        let mut data = Vec::with_capacity(CHANNELS * frames.len() * h * w);
        for c in 0..CHANNELS {
            for t in &tiled {
                data.extend_from_slice(&t[c].data);
            }
        }
        Ok(Self {
            channels: CHANNELS,
            frames: frames.len(),
            height: h,
            width: w,
            data,
            source_frame_count,
            augmentation: None,
        })
    }

    /// Little-endian `f32` samples in C order.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.data.len() * 4);
        for v in &self.data {
            out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
        out
    }

    pub fn checksum(&self) -> String {
        hex::encode(Sha256::digest(self.to_le_bytes()))
    }
}

/// Rotates by `theta_deg` about the centre, then shifts by `(dx, dy)`, with
/// bilinear resampling; samples falling outside the source read as zero.
pub fn apply_affine<T: Scalar>(clip: &Clip<T>, theta_deg: f64, dx: f64, dy: f64) -> Clip<T> {
    if theta_deg == 0.0 && dx == 0.0 && dy == 0.0 {
        return clip.clone();
    }
    let (w, h) = (clip.width, clip.height);
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let (sin, cos) = theta_deg.to_radians().sin_cos();
    let eps = 1e-9;
    // Per output pixel: source taps and weights, shared by every plane.
    let taps: Vec<Option<(usize, usize, usize, usize, f64, f64)>> = (0..h)
        .flat_map(|y| (0..w).map(move |x| (x, y)))
        .map(|(x, y)| {
            let u = x as f64 - dx - cx;
            let v = y as f64 - dy - cy;
            let sx = cos * u + sin * v + cx;
            let sy = -sin * u + cos * v + cy;
            if sx < -eps || sy < -eps || sx > (w - 1) as f64 + eps || sy > (h - 1) as f64 + eps {
                return None;
            }
            let sx = sx.clamp(0.0, (w - 1) as f64);
            let sy = sy.clamp(0.0, (h - 1) as f64);
            let (x0, y0) = (sx.floor() as usize, sy.floor() as usize);
            Some((x0, (x0 + 1).min(w - 1), y0, (y0 + 1).min(h - 1), sx - x0 as f64, sy - y0 as f64))
        })
        .collect();
    let mut out = clip.clone();
    let n = w * h;
    for (p, chunk) in out.data.chunks_mut(n).enumerate() {
        let src = &clip.data[p * n..(p + 1) * n];
        for (o, tap) in chunk.iter_mut().zip(&taps) {
            *o = match *tap {
                None => T::zero(),
                Some((x0, x1, y0, y1, wx, wy)) => {
                    let (wx, wy) = (T::of(wx), T::of(wy));
                    let top = lerp(src[y0 * w + x0], src[y0 * w + x1], wx);
                    let bottom = lerp(src[y1 * w + x0], src[y1 * w + x1], wx);
                    lerp(top, bottom, wy)
                }
            };
        }
    }
    out
}

/// Draws one rotation and translation for the whole clip from `seed`.
pub fn augment<T: Scalar>(clip: &Clip<T>, seed: u64, cfg: AugmentConfig) -> Clip<T> {
    let mut rng = SeedStream::new(seed).child("augment").rng();
    let draw = |rng: &mut rand_chacha::ChaCha8Rng, m: f64| if m > 0.0 { rng.random_range(-m..=m) } else { 0.0 };
    let theta = draw(&mut rng, cfg.max_rotation_deg);
    let dx = draw(&mut rng, cfg.max_translation);
    let dy = draw(&mut rng, cfg.max_translation);
    let mut out = apply_affine(clip, theta, dx, dy);
    out.augmentation = Some(AugmentRecord {
        seed,
        rotation_deg: theta,
        dx,
        dy,
    });
    out
}

/// Augments training clips; evaluation clips pass through untouched.
pub fn prepare_for<T: Scalar>(clip: Clip<T>, role: ClipRole, seed: u64, cfg: AugmentConfig) -> Clip<T> {
    match role {
        ClipRole::Train => augment(&clip, seed, cfg),
        ClipRole::Eval => clip,
    }
}

/// `frame_*.pgm` files in lexicographic order.
pub fn list_frames(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| decode_err(dir, e.to_string()))?;
    let mut frames: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("frame_") && n.ends_with(".pgm"))
        })
        .collect();
    frames.sort();
    if frames.is_empty() {
        return Err(decode_err(dir, "no frame_*.pgm files"));
    }
    Ok(frames)
}

/// crop, resize, temporal normalization, then scaling and tiling.
pub fn preprocess_study_as<T: Scalar>(frame_dir: &Path, roi: RoiRect, t_star: usize) -> Result<Clip<T>> {
    if t_star == 0 {
        return Err(Error::InvalidInput("target frame count must be positive".into()));
    }
    let paths = list_frames(frame_dir)?;
    let raw = paths.iter().map(|p| read_pgm(p)).collect::<Result<Vec<_>>>()?;
    let source = raw.len();
    let kept: Vec<Raster<u8>> = raw.into_iter().take(t_star).collect();
    let resized = kept
        .iter()
        .map(|f| resize_bilinear(&crop_roi(f, roi).map(|v| T::of(f64::from(v))), TARGET_SIZE))
        .collect::<Result<Vec<_>>>()?;
    let frames = temporal_normalize(resized, t_star)?;
    Clip::from_frames(&frames, source)
}

pub fn preprocess_study(frame_dir: &Path, roi: RoiRect, t_star: usize) -> Result<Clip<f32>> {
    preprocess_study_as(frame_dir, roi, t_star)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipSidecar {
    pub shape: [usize; 4],
    pub source_frame_count: usize,
    /// SHA-256 of the `.clip` bytes, hex.
    pub checksum: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub augmentation: Option<AugmentRecord>,
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Writes `path` (raw tensor) and `path.json` (sidecar).
pub fn write_clip<T: Scalar>(clip: &Clip<T>, path: &Path) -> Result<ClipSidecar> {
    let bytes = clip.to_le_bytes();
    let sidecar = ClipSidecar {
        shape: clip.shape(),
        source_frame_count: clip.source_frame_count,
        checksum: hex::encode(Sha256::digest(&bytes)),
        augmentation: clip.augmentation,
    };
    write_atomic(path, &bytes)?;
    write_atomic(&sidecar_path(path), serde_json::to_string_pretty(&sidecar)?.as_bytes())?;
    Ok(sidecar)
}

/// Reads a clip and verifies it against its sidecar.
pub fn read_clip(path: &Path) -> Result<Clip<f32>> {
    let side = sidecar_path(path);
    let sidecar: ClipSidecar = serde_json::from_str(&crate::io::read_to_string(&side)?)?;
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if hex::encode(Sha256::digest(&bytes)) != sidecar.checksum {
        return Err(decode_err(path, "checksum mismatch"));
    }
    let [c, t, h, w] = sidecar.shape;
    if bytes.len() != c * t * h * w * 4 {
        return Err(decode_err(path, "size disagrees with sidecar shape"));
    }
    Ok(Clip {
        channels: c,
        frames: t,
        height: h,
        width: w,
        data: bytes.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect(),
        source_frame_count: sidecar.source_frame_count,
        augmentation: sidecar.augmentation,
    })
}
