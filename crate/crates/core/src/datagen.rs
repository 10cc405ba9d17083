//! Training data: independent two-state Markov chains, bouncing-sprite
//! videos, and the raw-frames file format for externally prepared videos.
//!
//! Raw-frames layout (integers little-endian):
//!
//! ```text
//! magic     4 bytes "DYFR"
//! n_videos  u32
//! n_frames  u32
//! height    u32
//! width     u32
//! pixels    n_videos * n_frames * height * width bytes, video-major, then
//!           frame, then row-major pixels
//! ```

use std::path::Path;

use byteorder::{ByteOrder, LittleEndian};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{DybmError, Result};
use crate::sequence::BinarySequence;

pub const FRAMES_MAGIC: &[u8; 4] = b"DYFR";
const FRAMES_HEADER_LEN: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct MarkovSpec {
    pub n_dims: usize,
    /// Probability of repeating the previous value.
    pub p_stay: f64,
    pub length: usize,
    pub rng_seed: u64,
}

impl MarkovSpec {
    pub fn new(length: usize, rng_seed: u64) -> Self {
        MarkovSpec {
            n_dims: 7,
            p_stay: 0.95,
            length,
            rng_seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_dims == 0 {
            return Err(DybmError::config("Markov chain needs at least one dimension"));
        }
        // p_stay = 1 (absorbing) is allowed for generation
        if !(self.p_stay > 0.0 && self.p_stay <= 1.0) {
            return Err(DybmError::config(format!("p_stay {} outside (0, 1]", self.p_stay)));
        }
        Ok(())
    }
}

/// Independent symmetric two-state chains, one per dimension, started from
/// a uniform state.
pub fn markov_generate(spec: &MarkovSpec) -> Result<BinarySequence> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    let n = spec.n_dims;
    let mut state: Vec<u8> = (0..n).map(|_| rng.random::<bool>() as u8).collect();
    let mut seq = BinarySequence::empty(n);
    for t in 0..spec.length {
        if t > 0 {
            for s in state.iter_mut() {
                if rng.random::<f64>() >= spec.p_stay {
                    *s ^= 1;
                }
            }
        }
        seq.push(&state)?;
    }
    Ok(seq)
}

/// Negative log-likelihood of `seq` under the generating chain; the first
/// pattern costs `ln 2` per dimension.
pub fn markov_true_nll(seq: &BinarySequence, spec: &MarkovSpec) -> Result<f64> {
    if seq.n_dims() != spec.n_dims {
        return Err(DybmError::shape(format!(
            "sequence has {} dims, chain has {}",
            seq.n_dims(),
            spec.n_dims
        )));
    }
    if seq.is_empty() {
        return Ok(0.0);
    }
    let stay = -spec.p_stay.ln();
    let flip = -(1.0 - spec.p_stay).ln();
    let mut nll = seq.n_dims() as f64 * std::f64::consts::LN_2;
    for t in 1..seq.len() {
        let (prev, cur) = (seq.column(t - 1), seq.column(t));
        for (a, b) in prev.iter().zip(cur) {
            nll += if a == b { stay } else { flip };
        }
    }
    Ok(nll)
}

/// Per-dimension entropy rate of the chain in nats.
pub fn markov_entropy_rate(p_stay: f64) -> f64 {
    let q = 1.0 - p_stay;
    -(p_stay * p_stay.ln() + if q > 0.0 { q * q.ln() } else { 0.0 })
}

/// Grayscale image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<u8>,
}

impl Frame {
    pub fn new(height: usize, width: usize) -> Self {
        Frame {
            height,
            width,
            pixels: vec![0; height * width],
        }
    }

    pub fn filled(height: usize, width: usize, value: u8) -> Self {
        Frame {
            height,
            width,
            pixels: vec![value; height * width],
        }
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.pixels[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: u8) {
        self.pixels[row * self.width + col] = value;
    }
}

/// Binary image, row-major, values in `{0, 1}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryFrame {
    pub height: usize,
    pub width: usize,
    pub bits: Vec<u8>,
}

/// A video plus where it came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameSequence {
    pub frames: Vec<Frame>,
    pub source: String,
    pub index: usize,
}

impl FrameSequence {
    pub fn dims(&self) -> Option<(usize, usize)> {
        self.frames.first().map(|f| (f.height, f.width))
    }

    fn check_uniform(&self) -> Result<()> {
        if let Some((h, w)) = self.dims() {
            if self
                .frames
                .iter()
                .any(|f| f.height != h || f.width != w || f.pixels.len() != h * w)
            {
                return Err(DybmError::shape("frames of one video differ in size"));
            }
        }
        Ok(())
    }
}

/// Block-mean downsampling by an integer factor, rounding half up.
pub fn downsample_frame(frame: &Frame, factor: usize) -> Result<Frame> {
    if factor == 0 || !frame.height.is_multiple_of(factor) || !frame.width.is_multiple_of(factor) {
        return Err(DybmError::shape(format!(
            "{}x{} frame not divisible by {factor}",
            frame.height, frame.width
        )));
    }
    let (h, w) = (frame.height / factor, frame.width / factor);
    let area = (factor * factor) as u32;
    let mut out = Frame::new(h, w);
    for r in 0..h {
        for c in 0..w {
            let mut sum = 0u32;
            for dr in 0..factor {
                for dc in 0..factor {
                    sum += frame.get(r * factor + dr, c * factor + dc) as u32;
                }
            }
            // round(sum / area) with halves going up
            out.set(r, c, ((2 * sum + area) / (2 * area)) as u8);
        }
    }
    Ok(out)
}

/// 1 where the pixel is strictly above `threshold`.
pub fn binarize_frame(frame: &Frame, threshold: u8) -> BinaryFrame {
    BinaryFrame {
        height: frame.height,
        width: frame.width,
        bits: frame.pixels.iter().map(|&p| (p > threshold) as u8).collect(),
    }
}

/// Downsample then binarize every frame.
pub fn prepare_frames(video: &FrameSequence, factor: usize, threshold: u8) -> Result<Vec<BinaryFrame>> {
    video
        .frames
        .iter()
        .map(|f| Ok(binarize_frame(&downsample_frame(f, factor)?, threshold)))
        .collect()
}

/// Stacks the first `n_input_frames` frames, each flattened row-major, as the
/// columns of an `(H * W) x n_input_frames` sequence.
pub fn video_to_sequence(frames: &[BinaryFrame], n_input_frames: usize) -> Result<BinarySequence> {
    if frames.len() < n_input_frames {
        return Err(DybmError::shape(format!(
            "{} frames, {n_input_frames} requested",
            frames.len()
        )));
    }
    let Some(first) = frames.first() else {
        return Ok(BinarySequence::empty(0));
    };
    let n = first.height * first.width;
    let mut seq = BinarySequence::empty(n);
    for f in &frames[..n_input_frames] {
        if f.height * f.width != n || f.height != first.height {
            return Err(DybmError::shape("inconsistent frame sizes"));
        }
        seq.push(&f.bits)?;
    }
    Ok(seq)
}

/// Inverse of [`video_to_sequence`].
pub fn sequence_to_frames(seq: &BinarySequence, height: usize, width: usize) -> Result<Vec<BinaryFrame>> {
    if height * width != seq.n_dims() {
        return Err(DybmError::shape(format!(
            "{height}x{width} frames cannot hold {} dims",
            seq.n_dims()
        )));
    }
    Ok(seq
        .columns()
        .map(|c| BinaryFrame {
            height,
            width,
            bits: c.to_vec(),
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct VideoSpec {
    /// Side of the square canvas the sprites move on.
    pub patch_size: usize,
    /// Block-mean factor applied before binarization.
    pub downsample: usize,
    pub n_frames: usize,
    pub n_sprites: usize,
    /// Side of a sprite's bounding box on the canvas.
    pub sprite_size: usize,
    /// Speed range in canvas pixels per frame.
    pub speed_min: f64,
    pub speed_max: f64,
    pub frame_threshold: u8,
    pub rng_seed: u64,
}

impl Default for VideoSpec {
    fn default() -> Self {
        VideoSpec {
            patch_size: 64,
            downsample: 4,
            n_frames: 20,
            n_sprites: 2,
            sprite_size: 16,
            speed_min: 1.0,
            speed_max: 3.0,
            frame_threshold: 127,
            rng_seed: 0,
        }
    }
}

impl VideoSpec {
    pub fn validate(&self) -> Result<()> {
        if self.patch_size < 4 {
            return Err(DybmError::config("patch size must be at least 4"));
        }
        if self.n_frames < 2 {
            return Err(DybmError::config("videos need at least 2 frames"));
        }
        if self.sprite_size == 0 || self.sprite_size > self.patch_size {
            return Err(DybmError::config(format!(
                "sprite of {} px does not fit a {} px patch",
                self.sprite_size, self.patch_size
            )));
        }
        if self.downsample == 0 || !self.patch_size.is_multiple_of(self.downsample) {
            return Err(DybmError::config("patch size must be divisible by the downsampling factor"));
        }
        if !(self.speed_min >= 0.0 && self.speed_min <= self.speed_max && self.speed_max.is_finite()) {
            return Err(DybmError::config("invalid speed range"));
        }
        Ok(())
    }

    /// Side of the prepared (downsampled) frames.
    pub fn frame_side(&self) -> usize {
        self.patch_size / self.downsample
    }
}

/// Position and velocity of one sprite, in canvas pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpriteState {
    pub x: f64,
    pub y: f64,
    pub vx: f64,
    pub vy: f64,
}

impl SpriteState {
    /// Advances one frame, reflecting off the walls of `[0, limit]`.
    pub fn advance(&mut self, limit: f64) {
        let (x, vx) = reflect(self.x + self.vx, self.vx, limit);
        let (y, vy) = reflect(self.y + self.vy, self.vy, limit);
        *self = SpriteState { x, y, vx, vy };
    }
}

fn reflect(mut pos: f64, mut vel: f64, limit: f64) -> (f64, f64) {
    if limit <= 0.0 {
        return (0.0, vel);
    }
    // fast sprites may bounce more than once per frame
    for _ in 0..64 {
        if pos < 0.0 {
            pos = -pos;
            vel = -vel;
        } else if pos > limit {
            pos = 2.0 * limit - pos;
            vel = -vel;
        } else {
            break;
        }
    }
    (pos.clamp(0.0, limit), vel)
}

/// Intensity of sprite shape `kind` at offset `(dr, dc)` inside a
/// `size x size` box: even kinds are soft discs, odd kinds soft crosses.
fn sprite_pixel(kind: usize, dr: usize, dc: usize, size: usize) -> u8 {
    let half = size as f64 / 2.0;
    let (y, x) = (dr as f64 + 0.5 - half, dc as f64 + 0.5 - half);
    let level = if kind.is_multiple_of(2) {
        let r = (x * x + y * y).sqrt() / half;
        2.0 * (1.0 - r)
    } else {
        let arm = half / 3.0;
        let d = x.abs().min(y.abs());
        let reach = x.abs().max(y.abs()) / half;
        (2.0 * (1.0 - d / arm)).min(3.0 * (1.0 - reach))
    };
    (level.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Draws the initial sprite states for a video.
pub fn initial_sprites<R: Rng + ?Sized>(spec: &VideoSpec, rng: &mut R) -> Vec<SpriteState> {
    let limit = (spec.patch_size - spec.sprite_size) as f64;
    (0..spec.n_sprites)
        .map(|_| {
            let x = rng.random::<f64>() * limit;
            let y = rng.random::<f64>() * limit;
            let theta = rng.random::<f64>() * std::f64::consts::TAU;
            let speed = spec.speed_min + rng.random::<f64>() * (spec.speed_max - spec.speed_min);
            SpriteState {
                x,
                y,
                vx: speed * theta.cos(),
                vy: speed * theta.sin(),
            }
        })
        .collect()
}

/// Renders sprites onto a blank canvas; overlaps take the pixelwise max.
pub fn render_sprites(spec: &VideoSpec, sprites: &[SpriteState]) -> Frame {
    let mut frame = Frame::new(spec.patch_size, spec.patch_size);
    for (kind, s) in sprites.iter().enumerate() {
        let (top, left) = (s.y.round() as usize, s.x.round() as usize);
        for dr in 0..spec.sprite_size {
            for dc in 0..spec.sprite_size {
                let (r, c) = (top + dr, left + dc);
                if r < spec.patch_size && c < spec.patch_size {
                    let v = sprite_pixel(kind, dr, dc, spec.sprite_size);
                    if v > frame.get(r, c) {
                        frame.set(r, c, v);
                    }
                }
            }
        }
    }
    frame
}

/// Renders a video from explicit initial sprite states.
pub fn render_video(spec: &VideoSpec, mut sprites: Vec<SpriteState>) -> Vec<Frame> {
    let limit = (spec.patch_size - spec.sprite_size) as f64;
    (0..spec.n_frames)
        .map(|_| {
            let frame = render_sprites(spec, &sprites);
            sprites.iter_mut().for_each(|s| s.advance(limit));
            frame
        })
        .collect()
}

/// A grayscale video of `n_sprites` shapes bouncing inside the patch.
pub fn bouncing_sprites_generate(spec: &VideoSpec) -> Result<FrameSequence> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    let sprites = initial_sprites(spec, &mut rng);
    Ok(FrameSequence {
        frames: render_video(spec, sprites),
        source: "synthetic".into(),
        index: spec.rng_seed as usize,
    })
}

/// Encodes videos in the raw-frames format. All videos must share frame
/// count and size.
pub fn encode_frames(videos: &[FrameSequence]) -> Result<Vec<u8>> {
    let n_frames = videos.first().map_or(0, |v| v.frames.len());
    let (h, w) = videos.first().and_then(FrameSequence::dims).unwrap_or((0, 0));
    for v in videos {
        v.check_uniform()?;
        if v.frames.len() != n_frames || (!v.frames.is_empty() && v.dims() != Some((h, w))) {
            return Err(DybmError::shape("videos differ in frame count or size"));
        }
    }
    let mut out = Vec::with_capacity(FRAMES_HEADER_LEN + videos.len() * n_frames * h * w);
    out.extend_from_slice(FRAMES_MAGIC);
    for v in [videos.len(), n_frames, h, w] {
        let v = u32::try_from(v).map_err(|_| DybmError::config("dimension too large"))?;
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in videos {
        for f in &v.frames {
            out.extend_from_slice(&f.pixels);
        }
    }
    Ok(out)
}

/// Decodes the raw-frames format.
pub fn decode_frames(bytes: &[u8], source: &str) -> Result<Vec<FrameSequence>> {
    let err = |offset: usize, message: String| DybmError::Parse {
        offset: offset as u64,
        message,
    };
    if bytes.len() < 4 {
        return Err(err(0, "file too short for magic".into()));
    }
    if &bytes[..4] != FRAMES_MAGIC {
        return Err(err(0, "bad magic".into()));
    }
    if bytes.len() < FRAMES_HEADER_LEN {
        return Err(err(bytes.len(), "truncated header".into()));
    }
    let field = |i: usize| LittleEndian::read_u32(&bytes[4 + 4 * i..8 + 4 * i]) as usize;
    let (n_videos, n_frames, h, w) = (field(0), field(1), field(2), field(3));
    if n_videos > 0 && n_frames > 0 && (h == 0 || w == 0) {
        return Err(err(12, format!("degenerate frame size {h}x{w}")));
    }
    let frame_len = h
        .checked_mul(w)
        .ok_or_else(|| err(12, "frame size overflows".into()))?;
    let expected = n_videos
        .checked_mul(n_frames)
        .and_then(|c| c.checked_mul(frame_len))
        .and_then(|c| c.checked_add(FRAMES_HEADER_LEN))
        .ok_or_else(|| err(4, "header sizes overflow".into()))?;
    if bytes.len() < expected {
        return Err(err(
            bytes.len(),
            format!("truncated payload: expected {expected} bytes"),
        ));
    }
    if bytes.len() > expected {
        return Err(err(expected, "trailing bytes after payload".into()));
    }
    let mut pos = FRAMES_HEADER_LEN;
    let mut videos = Vec::with_capacity(n_videos);
    for index in 0..n_videos {
        let mut frames = Vec::with_capacity(n_frames);
        for _ in 0..n_frames {
            frames.push(Frame {
                height: h,
                width: w,
                pixels: bytes[pos..pos + frame_len].to_vec(),
            });
            pos += frame_len;
        }
        videos.push(FrameSequence {
            frames,
            source: source.to_string(),
            index,
        });
    }
    Ok(videos)
}

/// Reads a raw-frames file.
pub fn ingest_frames(path: impl AsRef<Path>) -> Result<Vec<FrameSequence>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path)?;
    decode_frames(&bytes, &path.display().to_string())
}

/// Writes videos as a raw-frames file.
pub fn export_frames(path: impl AsRef<Path>, videos: &[FrameSequence]) -> Result<()> {
    std::fs::write(path, encode_frames(videos)?)?;
    Ok(())
}
