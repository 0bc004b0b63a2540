//! Rasters, masks, region maps and their PNG/JSON encodings.
//!
//! Images are 8-bit RGB. Masks are stored as 8-bit grayscale PNGs (0 for
//! background, 255 for foreground). Region maps are 16-bit grayscale PNGs with
//! a JSON manifest beside them.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageBuffer, ImageError, Luma, Rgb};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bitset::PixelSet;
use crate::error::{Error, Result};
use crate::topology::{Coord, Topology};

pub type Rgb8 = [u8; 3];

/// An `H x W` RGB raster, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<Rgb8>,
}

impl Image {
    pub fn new(height: usize, width: usize, data: Vec<Rgb8>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Spec(format!("empty image {height}x{width}")));
        }
        if data.len() != height * width {
            return Err(Error::Spec(format!(
                "{} pixels supplied for a {height}x{width} image",
                data.len()
            )));
        }
        Ok(Image { height, width, data })
    }

    pub fn filled(height: usize, width: usize, color: Rgb8) -> Self {
        Image::from_fn(height, width, |_| color)
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(Coord) -> Rgb8) -> Self {
        assert!(height > 0 && width > 0, "empty image");
        let data = (0..height * width).map(|i| f(Coord::from_index(i, width))).collect();
        Image { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, c: Coord) -> Rgb8 {
        self.data[c.index(self.width)]
    }

    #[inline]
    pub fn at(&self, index: usize) -> Rgb8 {
        self.data[index]
    }

    pub fn pixels(&self) -> &[Rgb8] {
        &self.data
    }

    fn to_buffer(&self) -> ImageBuffer<Rgb<u8>, Vec<u8>> {
        let raw = self.data.iter().flatten().copied().collect();
        ImageBuffer::from_raw(self.width as u32, self.height as u32, raw).expect("buffer length matches dimensions")
    }
}

/// An `H x W` boolean raster.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize) -> Self {
        BinaryMask {
            height,
            width,
            bits: vec![false; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(Coord) -> bool) -> Self {
        BinaryMask {
            height,
            width,
            bits: (0..height * width).map(|i| f(Coord::from_index(i, width))).collect(),
        }
    }

    pub fn from_pixel_set(height: usize, width: usize, set: &PixelSet) -> Self {
        assert_eq!(set.universe(), height * width);
        let mut m = BinaryMask::new(height, width);
        for i in set.iter() {
            m.bits[i] = true;
        }
        m
    }

    pub fn to_pixel_set(&self) -> PixelSet {
        PixelSet::from_indices(
            self.bits.len(),
            self.bits.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i),
        )
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn get(&self, c: Coord) -> bool {
        self.bits[c.index(self.width)]
    }

    #[inline]
    pub fn at(&self, index: usize) -> bool {
        self.bits[index]
    }

    pub fn set(&mut self, c: Coord, value: bool) {
        let i = c.index(self.width);
        self.bits[i] = value;
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

/// Binarized Sobel response; `true` marks an edge pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeMap(BinaryMask);

impl EdgeMap {
    pub fn empty(height: usize, width: usize) -> Self {
        EdgeMap(BinaryMask::new(height, width))
    }

    pub fn from_mask(mask: BinaryMask) -> Self {
        EdgeMap(mask)
    }

    #[inline]
    pub fn is_edge(&self, c: Coord) -> bool {
        self.0.get(c)
    }

    pub fn as_mask(&self) -> &BinaryMask {
        &self.0
    }

    pub fn dims(&self) -> (usize, usize) {
        self.0.dims()
    }
}

/// Single-assignment labelling: 0 is unassigned, `1..=N` are regions.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RegionMap {
    height: usize,
    width: usize,
    ids: Vec<u32>,
}

impl RegionMap {
    pub fn new(height: usize, width: usize) -> Self {
        RegionMap {
            height,
            width,
            ids: vec![0; height * width],
        }
    }

    pub fn from_ids(height: usize, width: usize, ids: Vec<u32>) -> Result<Self> {
        if ids.len() != height * width {
            return Err(Error::Spec(format!(
                "{} ids supplied for a {height}x{width} map",
                ids.len()
            )));
        }
        Ok(RegionMap { height, width, ids })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn get(&self, c: Coord) -> u32 {
        self.ids[c.index(self.width)]
    }

    pub fn set(&mut self, c: Coord, id: u32) {
        let i = c.index(self.width);
        self.ids[i] = id;
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub(crate) fn ids_mut(&mut self) -> &mut [u32] {
        &mut self.ids
    }

    /// Largest id present (0 for an unassigned map).
    pub fn max_id(&self) -> u32 {
        self.ids.iter().copied().max().unwrap_or(0)
    }

    pub fn unassigned(&self) -> usize {
        self.ids.iter().filter(|&&i| i == 0).count()
    }

    /// Pixel count per id, indexed `0..=max_id`.
    pub fn histogram(&self) -> Vec<usize> {
        let mut counts = vec![0; self.max_id() as usize + 1];
        for &id in &self.ids {
            counts[id as usize] += 1;
        }
        counts
    }

    /// The pixel set of each id `1..=max_id`.
    pub fn region_sets(&self) -> Vec<PixelSet> {
        let n = self.max_id() as usize;
        let mut sets = vec![PixelSet::new(self.ids.len()); n];
        for (i, &id) in self.ids.iter().enumerate() {
            if id > 0 {
                sets[id as usize - 1].insert(i);
            }
        }
        sets
    }
}

fn decode_error(path: &Path, e: ImageError) -> Error {
    match e {
        ImageError::IoError(io) => Error::io(path, io),
        ImageError::Unsupported(u) => Error::Format(u.to_string()),
        other => Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::InvalidData, other.to_string()),
        ),
    }
}

fn encode_error(path: &Path, e: ImageError) -> Error {
    match e {
        ImageError::IoError(io) => Error::io(path, io),
        other => Error::io(path, std::io::Error::other(other.to_string())),
    }
}

fn open_dynamic(path: &Path) -> Result<DynamicImage> {
    image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|e| decode_error(path, e))
}

/// Loads an 8-bit RGB (or grayscale, replicated to RGB) image. Alpha is dropped.
pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let dynamic = open_dynamic(path)?;
    let (w, h) = (dynamic.width() as usize, dynamic.height() as usize);
    let data: Vec<Rgb8> = match dynamic {
        DynamicImage::ImageRgb8(b) => b.pixels().map(|p| p.0).collect(),
        DynamicImage::ImageRgba8(b) => b.pixels().map(|p| [p[0], p[1], p[2]]).collect(),
        DynamicImage::ImageLuma8(b) => b.pixels().map(|p| [p[0]; 3]).collect(),
        DynamicImage::ImageLumaA8(b) => b.pixels().map(|p| [p[0]; 3]).collect(),
        other => {
            return Err(Error::Format(format!(
                "{}: {:?} is not an 8-bit colour type",
                path.display(),
                other.color()
            )))
        }
    };
    Image::new(h, w, data)
}

pub fn save_image(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    img.to_buffer()
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| encode_error(path, e))
}

/// Loads a mask PNG; any nonzero gray level counts as foreground.
pub fn load_mask(path: impl AsRef<Path>) -> Result<BinaryMask> {
    let img = load_image(path)?;
    let bits = img.pixels().iter().map(|p| p[0] > 0).collect();
    Ok(BinaryMask {
        height: img.height(),
        width: img.width(),
        bits,
    })
}

pub fn save_mask(mask: &BinaryMask, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let raw: Vec<u8> = mask.bits.iter().map(|&b| if b { 255 } else { 0 }).collect();
    let buf: ImageBuffer<Luma<u8>, Vec<u8>> =
        ImageBuffer::from_raw(mask.width as u32, mask.height as u32, raw).expect("buffer length matches dimensions");
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| encode_error(path, e))
}

/// Sobel edge detection on the unweighted channel mean.
///
/// The 3x3 kernels are applied with edge-replication padding. A pixel is an
/// edge when its gradient magnitude reaches `magnitude_fraction` of the
/// image-wide maximum; an image with zero gradient everywhere has no edges.
pub fn sobel_edges(img: &Image, magnitude_fraction: f64) -> Result<EdgeMap> {
    if !(magnitude_fraction > 0.0 && magnitude_fraction <= 1.0) {
        return Err(Error::Spec(format!(
            "edge magnitude fraction {magnitude_fraction} outside (0, 1]"
        )));
    }
    let (h, w) = img.dims();
    let gray: Vec<i32> = img
        .pixels()
        .iter()
        .map(|p| ((p[0] as i32 + p[1] as i32 + p[2] as i32) + 1) / 3)
        .collect();
    let at = |r: isize, c: isize| -> i32 {
        let r = r.clamp(0, h as isize - 1) as usize;
        let c = c.clamp(0, w as isize - 1) as usize;
        gray[r * w + c]
    };
    let mut mag = vec![0.0f64; h * w];
    let mut max = 0.0f64;
    for r in 0..h as isize {
        for c in 0..w as isize {
            let gx = (at(r - 1, c + 1) + 2 * at(r, c + 1) + at(r + 1, c + 1))
                - (at(r - 1, c - 1) + 2 * at(r, c - 1) + at(r + 1, c - 1));
            let gy = (at(r + 1, c - 1) + 2 * at(r + 1, c) + at(r + 1, c + 1))
                - (at(r - 1, c - 1) + 2 * at(r - 1, c) + at(r - 1, c + 1));
            let m = ((gx * gx + gy * gy) as f64).sqrt();
            mag[r as usize * w + c as usize] = m;
            max = max.max(m);
        }
    }
    if max == 0.0 {
        return Ok(EdgeMap::empty(h, w));
    }
    let cut = magnitude_fraction * max;
    let bits = mag.into_iter().map(|m| m >= cut).collect();
    Ok(EdgeMap(BinaryMask {
        height: h,
        width: w,
        bits,
    }))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRegion {
    pub id: u32,
    pub pixels: usize,
    pub seed: [usize; 2],
}

/// Sidecar describing a saved region map.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionManifest {
    pub n_regions: usize,
    pub regions: Vec<ManifestRegion>,
    pub tau_l: u32,
    pub tau_s: u32,
    pub topology: Topology,
    pub prng_seed: u64,
}

/// Sidecar path for a region-map PNG: `foo.png` -> `foo.json`.
pub fn manifest_path(png: &Path) -> PathBuf {
    png.with_extension("json")
}

pub const MAX_REGIONS: usize = u16::MAX as usize;

/// Writes `map` as a 16-bit grayscale PNG plus its JSON manifest.
pub fn save_region_map(map: &RegionMap, manifest: &RegionManifest, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if manifest.n_regions > MAX_REGIONS || map.max_id() as usize > MAX_REGIONS {
        return Err(Error::Capacity(format!(
            "{} regions exceed the 16-bit id range",
            manifest.n_regions.max(map.max_id() as usize)
        )));
    }
    let raw: Vec<u16> = map.ids.iter().map(|&id| id as u16).collect();
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(map.width as u32, map.height as u32, raw).expect("buffer length matches dimensions");
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| encode_error(path, e))?;
    write_json(&manifest_path(path), manifest)
}

pub fn load_region_map(path: impl AsRef<Path>) -> Result<(RegionMap, RegionManifest)> {
    let path = path.as_ref();
    let dynamic = open_dynamic(path)?;
    let (w, h) = (dynamic.width() as usize, dynamic.height() as usize);
    let ids = match dynamic {
        DynamicImage::ImageLuma16(b) => b.pixels().map(|p| p[0] as u32).collect(),
        DynamicImage::ImageLuma8(b) => b.pixels().map(|p| p[0] as u32).collect(),
        other => {
            return Err(Error::Format(format!(
                "{}: region maps are single-channel, found {:?}",
                path.display(),
                other.color()
            )))
        }
    };
    let map = RegionMap::from_ids(h, w, ids)?;
    let manifest: RegionManifest = read_json(&manifest_path(path))?;
    Ok((map, manifest))
}

/// Pretty JSON with a trailing newline; byte-stable for equal values.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub(crate) fn create_writer(path: &Path) -> Result<BufWriter<fs::File>> {
    fs::File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

/// Deterministic pseudo-color for a region id (0 renders black).
pub fn region_color(id: u32) -> Rgb8 {
    if id == 0 {
        return [0, 0, 0];
    }
    let mut x = id.wrapping_mul(0x9E37_79B9) ^ 0x5bd1_e995;
    x ^= x >> 15;
    x = x.wrapping_mul(0x2c1b_3c6d);
    x ^= x >> 12;
    [
        64 + (x & 0xbf) as u8,
        64 + ((x >> 8) & 0xbf) as u8,
        64 + ((x >> 16) & 0xbf) as u8,
    ]
}

pub fn colorize_region_map(map: &RegionMap) -> Image {
    Image::from_fn(map.height, map.width, |c| region_color(map.get(c)))
}

/// Draws the boundary of `mask` in red over `img`.
pub fn overlay_mask_boundary(img: &Image, mask: &BinaryMask) -> Result<Image> {
    Error::check_dims(img.dims(), mask.dims())?;
    let (h, w) = img.dims();
    Ok(Image::from_fn(h, w, |c| {
        let inside = mask.get(c);
        let boundary = inside
            && [(-1isize, 0isize), (1, 0), (0, -1), (0, 1)].iter().any(|&(dh, dw)| {
                match (
                    Topology::Cartesian.offset(c.h, dh, h),
                    Topology::Cartesian.offset(c.w, dw, w),
                ) {
                    (Some(nh), Some(nw)) => !mask.get(Coord::new(nh, nw)),
                    _ => false,
                }
            });
        if boundary {
            [255, 0, 0]
        } else {
            img.get(c)
        }
    }))
}

/// Geometry of a generated test scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SceneKind {
    Flat {
        height: usize,
        width: usize,
        color: Rgb8,
    },
    /// Columns `< split_col` take `left`, the rest `right`; the right side is foreground.
    TwoTone {
        height: usize,
        width: usize,
        split_col: usize,
        left: Rgb8,
        right: Rgb8,
    },
    /// Foreground band of pixels with `w - h` in `[-stripe_width/2, stripe_width - stripe_width/2)`
    /// over a background that ramps linearly from `bg_left` to `bg_right` across the columns.
    DiagonalStripe {
        height: usize,
        width: usize,
        stripe_width: usize,
        fg: Rgb8,
        bg_left: Rgb8,
        bg_right: Rgb8,
    },
    /// Full-height foreground band over columns `[band_start, band_end)`.
    Wraparound {
        height: usize,
        width: usize,
        band_start: usize,
        band_end: usize,
        fg: Rgb8,
        bg: Rgb8,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    #[serde(flatten)]
    pub kind: SceneKind,
    /// Per-channel uniform noise amplitude; 0 disables noise.
    #[serde(default)]
    pub noise: u8,
    #[serde(default)]
    pub seed: u64,
}

impl SceneSpec {
    pub fn clean(kind: SceneKind) -> Self {
        SceneSpec {
            kind,
            noise: 0,
            seed: 0,
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        match self.kind {
            SceneKind::Flat { height, width, .. }
            | SceneKind::TwoTone { height, width, .. }
            | SceneKind::DiagonalStripe { height, width, .. }
            | SceneKind::Wraparound { height, width, .. } => (height, width),
        }
    }
}

fn lerp(a: Rgb8, b: Rgb8, t: f64) -> Rgb8 {
    let mut out = [0; 3];
    for c in 0..3 {
        out[c] = (a[c] as f64 + (b[c] as f64 - a[c] as f64) * t).round() as u8;
    }
    out
}

/// Generates a scene and its exact ground-truth mask.
pub fn make_synthetic(spec: &SceneSpec) -> Result<(Image, BinaryMask)> {
    let (h, w) = spec.dims();
    if h == 0 || w == 0 {
        return Err(Error::Spec(format!("empty scene {h}x{w}")));
    }
    let (mask, base): (BinaryMask, Box<dyn Fn(Coord) -> Rgb8>) = match spec.kind.clone() {
        SceneKind::Flat { color, .. } => (BinaryMask::new(h, w), Box::new(move |_| color)),
        SceneKind::TwoTone {
            split_col, left, right, ..
        } => {
            if split_col > w {
                return Err(Error::Spec(format!("split column {split_col} beyond width {w}")));
            }
            let mask = BinaryMask::from_fn(h, w, |c| c.w >= split_col);
            (mask, Box::new(move |c| if c.w >= split_col { right } else { left }))
        }
        SceneKind::DiagonalStripe {
            stripe_width,
            fg,
            bg_left,
            bg_right,
            ..
        } => {
            if stripe_width == 0 || stripe_width > w {
                return Err(Error::Spec(format!("stripe width {stripe_width} not in [1, {w}]")));
            }
            let mask = BinaryMask::from_fn(h, w, |c| in_stripe(c, stripe_width));
            let denom = (w.max(2) - 1) as f64;
            (
                mask,
                Box::new(move |c| {
                    if in_stripe(c, stripe_width) {
                        fg
                    } else {
                        lerp(bg_left, bg_right, c.w as f64 / denom)
                    }
                }),
            )
        }
        SceneKind::Wraparound {
            band_start,
            band_end,
            fg,
            bg,
            ..
        } => {
            if band_start == 0 || band_end >= w || band_start >= band_end {
                return Err(Error::Spec(format!(
                    "band [{band_start}, {band_end}) must leave background on both sides of width {w}"
                )));
            }
            let inside = move |c: Coord| c.w >= band_start && c.w < band_end;
            (
                BinaryMask::from_fn(h, w, inside),
                Box::new(move |c| if inside(c) { fg } else { bg }),
            )
        }
    };
    let img = if spec.noise == 0 {
        Image::from_fn(h, w, &base)
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let a = spec.noise as i32;
        Image::from_fn(h, w, |c| {
            let mut p = base(c);
            for ch in &mut p {
                *ch = (*ch as i32 + rng.random_range(-a..=a)).clamp(0, 255) as u8;
            }
            p
        })
    };
    Ok((img, mask))
}

fn in_stripe(c: Coord, stripe_width: usize) -> bool {
    let d = c.w as isize - c.h as isize;
    let lo = -((stripe_width / 2) as isize);
    d >= lo && d < lo + stripe_width as isize
}
