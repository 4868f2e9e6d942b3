//! Images, binary grids, masks, perturbations and patch grids.
//!
//! All grids are row-major. Intensities live in `[0, 1]`; every public
//! constructor and operation that produces an [`Image`] clamps into that
//! range. Perturbations are signed and never clamped on their own.
//!
//! Resampling convention: bilinear interpolation uses half-pixel centers
//! (align-corners false) with edge replication, everywhere in the crate.

mod png_io;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use png_io::{
    decode_png, encode_png, read_mask_png, read_png, write_gray_png, write_mask_png, write_png,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

fn check_dims(width: usize, height: usize, channels: usize) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::invalid(format!("zero-sized grid {width}x{height}")));
    }
    if channels != 1 && channels != 3 {
        return Err(Error::invalid(format!("unsupported channel count {channels}")));
    }
    Ok(())
}

impl Image {
    /// Builds an image, clamping every value into `[0, 1]`.
    pub fn new(width: usize, height: usize, channels: usize, mut data: Vec<f64>) -> Result<Self> {
        check_dims(width, height, channels)?;
        if data.len() != width * height * channels {
            return Err(Error::invalid(format!(
                "data length {} does not match {width}x{height}x{channels}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite intensity"));
        }
        data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        Ok(Self { width, height, channels, data })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Result<Self> {
        Self::new(width, height, channels, vec![value; width * height * channels])
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(x, y, c));
                }
            }
        }
        Self::new(width, height, channels, data)
    }

    /// Internal constructor for values already known to be finite and in range.
    pub(crate) fn from_clamped(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), width * height * channels);
        Self { width, height, channels, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    /// Pointwise map, clamped.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        let data = self.data.iter().map(|&v| f(v).clamp(0.0, 1.0)).collect();
        Image::from_clamped(self.width, self.height, self.channels, data)
    }

    pub fn mean_squared_distance(&self, other: &Image) -> Result<f64> {
        if !self.same_shape(other) {
            return Err(Error::invalid("shape mismatch in distance"));
        }
        let sum: f64 = self.data.iter().zip(&other.data).map(|(a, b)| (a - b) * (a - b)).sum();
        Ok(sum / self.data.len() as f64)
    }

    /// `self - other` as a signed perturbation.
    pub fn difference(&self, other: &Image) -> Result<Perturbation> {
        if !self.same_shape(other) {
            return Err(Error::invalid("shape mismatch in difference"));
        }
        let delta = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Perturbation::new(self.width, self.height, self.channels, delta)
    }

    pub fn resize_bilinear(&self, new_w: usize, new_h: usize) -> Result<Image> {
        check_dims(new_w, new_h, self.channels)?;
        let mut data = resample_bilinear(&self.data, self.width, self.height, self.channels, new_w, new_h);
        data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        Ok(Image::from_clamped(new_w, new_h, self.channels, data))
    }

    /// Area-averaging resize, used for downsampling where bilinear would alias.
    pub fn resize_area(&self, new_w: usize, new_h: usize) -> Result<Image> {
        check_dims(new_w, new_h, self.channels)?;
        let mut data = resample_area(&self.data, self.width, self.height, self.channels, new_w, new_h);
        data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        Ok(Image::from_clamped(new_w, new_h, self.channels, data))
    }
}

/// Bilinear resampling of an interleaved buffer, half-pixel centers, edge replication.
pub(crate) fn resample_bilinear(
    src: &[f64],
    w: usize,
    h: usize,
    channels: usize,
    new_w: usize,
    new_h: usize,
) -> Vec<f64> {
    if new_w == w && new_h == h {
        return src.to_vec();
    }
    let sx = w as f64 / new_w as f64;
    let sy = h as f64 / new_h as f64;
    let mut out = vec![0.0; new_w * new_h * channels];
    for oy in 0..new_h {
        let fy = ((oy as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let ty = fy - y0 as f64;
        for ox in 0..new_w {
            let fx = ((ox as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let tx = fx - x0 as f64;
            for c in 0..channels {
                let p = |x: usize, y: usize| src[(y * w + x) * channels + c];
                let top = p(x0, y0) * (1.0 - tx) + p(x1, y0) * tx;
                let bottom = p(x0, y1) * (1.0 - tx) + p(x1, y1) * tx;
                out[(oy * new_w + ox) * channels + c] = top * (1.0 - ty) + bottom * ty;
            }
        }
    }
    out
}

/// Exact box-overlap averaging. Falls back to bilinear along any upsampled axis.
pub(crate) fn resample_area(
    src: &[f64],
    w: usize,
    h: usize,
    channels: usize,
    new_w: usize,
    new_h: usize,
) -> Vec<f64> {
    if new_w > w || new_h > h {
        return resample_bilinear(src, w, h, channels, new_w, new_h);
    }
    if new_w == w && new_h == h {
        return src.to_vec();
    }
    let weights = |n_src: usize, n_dst: usize| -> Vec<Vec<(usize, f64)>> {
        let scale = n_src as f64 / n_dst as f64;
        (0..n_dst)
            .map(|o| {
                let lo = o as f64 * scale;
                let hi = lo + scale;
                let mut taps = Vec::new();
                let mut i = lo.floor() as usize;
                while (i as f64) < hi && i < n_src {
                    let overlap = (hi.min(i as f64 + 1.0) - lo.max(i as f64)).max(0.0);
                    if overlap > 0.0 {
                        taps.push((i, overlap / scale));
                    }
                    i += 1;
                }
                taps
            })
            .collect()
    };
    let wx = weights(w, new_w);
    let wy = weights(h, new_h);
    let mut out = vec![0.0; new_w * new_h * channels];
    for (oy, ty) in wy.iter().enumerate() {
        for (ox, tx) in wx.iter().enumerate() {
            for c in 0..channels {
                let mut acc = 0.0;
                for &(iy, wyv) in ty {
                    for &(ix, wxv) in tx {
                        acc += wyv * wxv * src[(iy * w + ix) * channels + c];
                    }
                }
                out[(oy * new_w + ox) * channels + c] = acc;
            }
        }
    }
    out
}

/// A binary grid, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BinaryGrid {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl BinaryGrid {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("zero-sized binary grid"));
        }
        if bits.len() != width * height {
            return Err(Error::invalid("binary grid length mismatch"));
        }
        Ok(Self { width, height, bits })
    }

    pub fn empty(width: usize, height: usize) -> Self {
        Self { width, height, bits: vec![false; width * height] }
    }

    pub fn full(width: usize, height: usize) -> Self {
        Self { width, height, bits: vec![true; width * height] }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        Self { width, height, bits }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.bits[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|b| *b)
    }

    pub fn same_shape(&self, other: &BinaryGrid) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn is_subset_of(&self, other: &BinaryGrid) -> bool {
        self.same_shape(other) && self.bits.iter().zip(&other.bits).all(|(a, b)| !a || *b)
    }

    pub fn union(&self, other: &BinaryGrid) -> BinaryGrid {
        assert!(self.same_shape(other), "grid shape mismatch");
        let bits = self.bits.iter().zip(&other.bits).map(|(a, b)| *a || *b).collect();
        BinaryGrid { width: self.width, height: self.height, bits }
    }

    pub fn intersection(&self, other: &BinaryGrid) -> BinaryGrid {
        assert!(self.same_shape(other), "grid shape mismatch");
        let bits = self.bits.iter().zip(&other.bits).map(|(a, b)| *a && *b).collect();
        BinaryGrid { width: self.width, height: self.height, bits }
    }

    pub fn difference(&self, other: &BinaryGrid) -> BinaryGrid {
        assert!(self.same_shape(other), "grid shape mismatch");
        let bits = self.bits.iter().zip(&other.bits).map(|(a, b)| *a && !*b).collect();
        BinaryGrid { width: self.width, height: self.height, bits }
    }

    /// Bounding box of set cells as `(x0, y0, x1, y1)`, exclusive upper edges.
    pub fn bbox(&self) -> Option<(usize, usize, usize, usize)> {
        let mut bb: Option<(usize, usize, usize, usize)> = None;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    bb = Some(match bb {
                        None => (x, y, x + 1, y + 1),
                        Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x + 1), y1.max(y + 1)),
                    });
                }
            }
        }
        bb
    }

    /// Nearest-neighbor resampling to any size (each output cell reads the
    /// source cell under its center).
    pub fn resample_nearest(&self, new_w: usize, new_h: usize) -> BinaryGrid {
        if new_w == self.width && new_h == self.height {
            return self.clone();
        }
        BinaryGrid::from_fn(new_w, new_h, |x, y| {
            let sx = ((x as f64 + 0.5) * self.width as f64 / new_w as f64).floor() as usize;
            let sy = ((y as f64 + 0.5) * self.height as f64 / new_h as f64).floor() as usize;
            self.get(sx.min(self.width - 1), sy.min(self.height - 1))
        })
    }
}

/// A binary mask constrained to an object region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mask {
    bits: BinaryGrid,
    object: BinaryGrid,
}

impl Mask {
    pub fn new(bits: BinaryGrid, object: BinaryGrid) -> Result<Self> {
        if !bits.same_shape(&object) {
            return Err(Error::invalid("mask and object shapes differ"));
        }
        if !bits.is_subset_of(&object) {
            return Err(Error::invalid("mask has pixels outside the object region"));
        }
        Ok(Self { bits, object })
    }

    /// Intersects `bits` with the object instead of rejecting strays.
    pub fn clipped(bits: &BinaryGrid, object: BinaryGrid) -> Result<Self> {
        if !bits.same_shape(&object) {
            return Err(Error::invalid("mask and object shapes differ"));
        }
        Ok(Self { bits: bits.intersection(&object), object })
    }

    pub fn full(object: BinaryGrid) -> Self {
        Self { bits: object.clone(), object }
    }

    pub fn empty(object: BinaryGrid) -> Self {
        Self { bits: BinaryGrid::empty(object.width, object.height), object }
    }

    pub fn bits(&self) -> &BinaryGrid {
        &self.bits
    }

    pub fn object(&self) -> &BinaryGrid {
        &self.object
    }

    pub fn width(&self) -> usize {
        self.bits.width
    }

    pub fn height(&self) -> usize {
        self.bits.height
    }

    /// Number of set pixels.
    pub fn size(&self) -> usize {
        self.bits.count()
    }

    /// `size / |object|`.
    pub fn object_ratio(&self) -> f64 {
        let obj = self.object.count();
        if obj == 0 {
            0.0
        } else {
            self.size() as f64 / obj as f64
        }
    }

    pub fn is_set(&self, x: usize, y: usize) -> bool {
        self.bits.get(x, y)
    }

    /// Clears every pixel of `patch`, regardless of overlap with other patches.
    pub fn minus(&self, patch: &Patch) -> Mask {
        let mut bits = self.bits.clone();
        for &i in &patch.pixels {
            bits.bits[i] = false;
        }
        Mask { bits, object: self.object.clone() }
    }

    /// Union of `patches` intersected with `object`.
    pub fn union_of<'a>(patches: impl IntoIterator<Item = &'a Patch>, object: &BinaryGrid) -> Mask {
        let mut bits = BinaryGrid::empty(object.width, object.height);
        for p in patches {
            for &i in &p.pixels {
                if object.bits[i] {
                    bits.bits[i] = true;
                }
            }
        }
        Mask { bits, object: object.clone() }
    }

    /// Adds the cells of `region` that lie inside the object.
    pub fn with_region(&self, region: &BinaryGrid) -> Mask {
        Mask { bits: self.bits.union(&region.intersection(&self.object)), object: self.object.clone() }
    }

    pub fn upsample_nearest(&self, new_w: usize, new_h: usize) -> Result<Mask> {
        upsample_mask_nearest(self, new_w, new_h)
    }
}

pub fn mask_minus(m: &Mask, p: &Patch) -> Mask {
    m.minus(p)
}

pub fn mask_union(ps: &[Patch], object: &BinaryGrid) -> Mask {
    Mask::union_of(ps, object)
}

/// Nearest-neighbor mask upsampling; both the mask and its object follow.
pub fn upsample_mask_nearest(m: &Mask, new_w: usize, new_h: usize) -> Result<Mask> {
    if new_w < m.width() || new_h < m.height() {
        return Err(Error::invalid(format!(
            "mask upsampling cannot shrink {}x{} to {new_w}x{new_h}",
            m.width(),
            m.height()
        )));
    }
    Ok(Mask {
        bits: m.bits.resample_nearest(new_w, new_h),
        object: m.object.resample_nearest(new_w, new_h),
    })
}

/// Signed perturbation on a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Perturbation {
    width: usize,
    height: usize,
    channels: usize,
    delta: Vec<f64>,
}

impl Perturbation {
    pub fn new(width: usize, height: usize, channels: usize, delta: Vec<f64>) -> Result<Self> {
        check_dims(width, height, channels)?;
        if delta.len() != width * height * channels {
            return Err(Error::invalid("perturbation length mismatch"));
        }
        if delta.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite perturbation"));
        }
        Ok(Self { width, height, channels, delta })
    }

    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        Self { width, height, channels, delta: vec![0.0; width * height * channels] }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.delta
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.delta
    }

    pub fn norm(&self) -> f64 {
        self.delta.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.delta.iter().all(|v| *v == 0.0)
    }

    /// Zeroes every entry outside the mask.
    pub fn gated(&self, mask: &Mask) -> Perturbation {
        assert_eq!((mask.width(), mask.height()), (self.width, self.height), "grid mismatch");
        let mut out = self.clone();
        for (i, chunk) in out.delta.chunks_mut(self.channels).enumerate() {
            if !mask.bits.bits[i] {
                chunk.iter_mut().for_each(|v| *v = 0.0);
            }
        }
        out
    }

    /// `self + scale * dir`.
    pub fn add_scaled(&self, dir: &Perturbation, scale: f64) -> Perturbation {
        let delta = self.delta.iter().zip(&dir.delta).map(|(a, b)| a + scale * b).collect();
        Perturbation { delta, ..self.clone() }
    }

    /// Clips so that `base + delta` stays within `[0, 1]` on the mask and
    /// zeroes everything outside it. `base` must live on the same grid.
    pub fn clamp_feasible(&self, base: &Image, mask: &Mask) -> Perturbation {
        let mut out = self.gated(mask);
        for (d, b) in out.delta.iter_mut().zip(base.data()) {
            *d = d.clamp(-b, 1.0 - b);
        }
        out
    }

    pub fn resize_bilinear(&self, new_w: usize, new_h: usize) -> Result<Perturbation> {
        check_dims(new_w, new_h, self.channels)?;
        let delta = resample_bilinear(&self.delta, self.width, self.height, self.channels, new_w, new_h);
        Ok(Perturbation { width: new_w, height: new_h, channels: self.channels, delta })
    }

    pub fn resize_area(&self, new_w: usize, new_h: usize) -> Result<Perturbation> {
        check_dims(new_w, new_h, self.channels)?;
        let delta = resample_area(&self.delta, self.width, self.height, self.channels, new_w, new_h);
        Ok(Perturbation { width: new_w, height: new_h, channels: self.channels, delta })
    }
}

/// `clamp(x + up(m) * up(d), 0, 1)`.
///
/// The mask is upsampled nearest-neighbor and the perturbation bilinearly
/// to the resolution of `x`. Pixels outside the upsampled mask are copied
/// from `x` untouched.
pub fn apply_perturbation(x: &Image, m: &Mask, d: &Perturbation) -> Result<Image> {
    if d.channels != x.channels {
        return Err(Error::invalid(format!(
            "perturbation has {} channels, image has {}",
            d.channels, x.channels
        )));
    }
    if (m.width(), m.height()) != (d.width, d.height) {
        return Err(Error::invalid("mask and perturbation grids differ"));
    }
    let (w, h) = (x.width, x.height);
    let mask = m.bits.resample_nearest(w, h);
    let delta = if (d.width, d.height) == (w, h) {
        d.delta.clone()
    } else {
        resample_bilinear(&d.delta, d.width, d.height, d.channels, w, h)
    };
    let c = x.channels;
    let mut data = x.data.clone();
    for (i, &on) in mask.bits.iter().enumerate() {
        if on {
            for k in 0..c {
                let j = i * c + k;
                data[j] = (data[j] + delta[j]).clamp(0.0, 1.0);
            }
        }
    }
    Ok(Image::from_clamped(w, h, c, data))
}

/// A square block of pixel indices, clipped to the object region.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Patch {
    pub index: usize,
    pub anchor: (usize, usize),
    /// Row-major pixel indices inside the object.
    pub pixels: Vec<usize>,
}

impl Patch {
    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchGrid {
    pub patch_size: usize,
    pub stride: usize,
    pub width: usize,
    pub height: usize,
    pub patches: Vec<Patch>,
}

impl PatchGrid {
    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }
}

fn anchors(extent: usize, patch: usize, stride: usize) -> Vec<usize> {
    if extent <= patch {
        return vec![0];
    }
    let last = extent - patch;
    let mut out: Vec<usize> = (0..=last).step_by(stride).collect();
    if *out.last().unwrap() != last {
        out.push(last);
    }
    out
}

/// Enumerates square patches row-major over anchors spaced by `stride`.
///
/// A final anchor flush with the far edge is added when the stride does
/// not land on it, so that for `stride <= patch_size` the patches cover
/// the whole object. Patches that miss the object are dropped.
pub fn build_patch_grid(object: &BinaryGrid, patch_size: usize, stride: usize) -> Result<PatchGrid> {
    if patch_size == 0 || stride == 0 {
        return Err(Error::invalid("patch size and stride must be >= 1"));
    }
    if object.is_empty() {
        return Err(Error::invalid("empty object region"));
    }
    let (w, h) = (object.width, object.height);
    let mut patches = Vec::new();
    for &ay in &anchors(h, patch_size, stride) {
        for &ax in &anchors(w, patch_size, stride) {
            let mut pixels = Vec::new();
            for y in ay..(ay + patch_size).min(h) {
                for x in ax..(ax + patch_size).min(w) {
                    if object.get(x, y) {
                        pixels.push(y * w + x);
                    }
                }
            }
            if !pixels.is_empty() {
                patches.push(Patch { index: patches.len(), anchor: (ax, ay), pixels });
            }
        }
    }
    Ok(PatchGrid { patch_size, stride, width: w, height: h, patches })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashSet;

    fn square_object(n: usize, side: usize) -> BinaryGrid {
        BinaryGrid::from_fn(n, n, |x, y| x < side && y < side)
    }

    #[test]
    fn bilinear_constant_is_fixed_point() {
        let img = Image::filled(2, 2, 1, 0.5).unwrap();
        let up = img.resize_bilinear(4, 4).unwrap();
        assert!(up.data().iter().all(|v| *v == 0.5));
    }

    #[test]
    fn bilinear_identity_is_bitwise() {
        let img = Image::from_fn(5, 3, 3, |x, y, c| (x * 7 + y * 3 + c) as f64 / 40.0).unwrap();
        assert_eq!(img.resize_bilinear(5, 3).unwrap(), img);
    }

    #[test]
    fn bilinear_row_matches_scalar_formula() {
        // Independent scalar form: source coordinate s = (i + 0.5) * w_in / w_out - 0.5,
        // clamped to [0, w_in - 1], value = lerp between the two neighbours.
        let src = [0.0, 1.0];
        let oracle = |i: usize| -> f64 {
            let s = ((i as f64 + 0.5) * 2.0 / 4.0 - 0.5).clamp(0.0, 1.0);
            src[0] * (1.0 - s) + src[1] * s
        };
        let img = Image::new(2, 1, 1, src.to_vec()).unwrap();
        let out = img.resize_bilinear(4, 1).unwrap();
        let expected: Vec<f64> = (0..4).map(oracle).collect();
        assert_eq!(expected, vec![0.0, 0.25, 0.75, 1.0]);
        for (a, b) in out.data().iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_dimension_resize_rejected() {
        let img = Image::filled(2, 2, 1, 0.5).unwrap();
        assert!(matches!(img.resize_bilinear(0, 4), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn constructor_clamps_and_validates() {
        let img = Image::new(2, 1, 1, vec![-0.5, 1.5]).unwrap();
        assert_eq!(img.data(), &[0.0, 1.0]);
        assert!(Image::new(2, 1, 1, vec![0.0]).is_err());
        assert!(Image::new(1, 1, 1, vec![f64::NAN]).is_err());
        assert!(Image::new(1, 1, 2, vec![0.0, 0.0]).is_err());
    }

    #[test]
    fn area_downsample_averages_blocks() {
        let img = Image::new(4, 1, 1, vec![0.0, 1.0, 0.5, 0.5]).unwrap();
        let out = img.resize_area(2, 1).unwrap();
        assert_eq!(out.data(), &[0.5, 0.5]);
    }

    #[test]
    fn nearest_upsample_full_and_single_bit() {
        let full = Mask::full(BinaryGrid::full(32, 32));
        let up = upsample_mask_nearest(&full, 244, 244).unwrap();
        assert_eq!(up.size(), 244 * 244);

        let mut bits = BinaryGrid::empty(2, 2);
        bits.set(0, 0, true);
        let m = Mask::new(bits, BinaryGrid::full(2, 2)).unwrap();
        let up = upsample_mask_nearest(&m, 4, 4).unwrap();
        let expected = BinaryGrid::from_fn(4, 4, |x, y| x < 2 && y < 2);
        assert_eq!(up.bits(), &expected);

        assert_eq!(upsample_mask_nearest(&m, 2, 2).unwrap(), m);
        assert!(matches!(upsample_mask_nearest(&m, 1, 4), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn perturbation_application_cases() {
        let x = Image::from_fn(8, 8, 3, |x, y, c| ((x + y + c) % 5) as f64 / 4.0).unwrap();
        let obj = BinaryGrid::full(4, 4);
        let zero = Perturbation::zeros(4, 4, 3);
        assert_eq!(apply_perturbation(&x, &Mask::full(obj.clone()), &zero).unwrap(), x);

        let d = Perturbation::new(4, 4, 3, vec![0.7; 48]).unwrap();
        assert_eq!(apply_perturbation(&x, &Mask::empty(obj.clone()), &d).unwrap(), x);

        let half = Image::filled(8, 8, 3, 0.5).unwrap();
        let ones = Perturbation::new(4, 4, 3, vec![1.0; 48]).unwrap();
        let out = apply_perturbation(&half, &Mask::full(obj.clone()), &ones).unwrap();
        assert!(out.data().iter().all(|v| *v == 1.0));

        let gray = Image::filled(8, 8, 1, 0.5).unwrap();
        assert!(matches!(
            apply_perturbation(&gray, &Mask::full(obj), &ones),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn masked_pixels_outside_stay_exact() {
        let x = Image::from_fn(4, 4, 1, |x, y, _| (x * 4 + y) as f64 / 16.0).unwrap();
        let obj = BinaryGrid::full(4, 4);
        let bits = BinaryGrid::from_fn(4, 4, |x, _| x < 2);
        let m = Mask::new(bits, obj).unwrap();
        let d = Perturbation::new(4, 4, 1, vec![0.3; 16]).unwrap();
        let out = apply_perturbation(&x, &m, &d).unwrap();
        for y in 0..4 {
            for xx in 2..4 {
                assert_eq!(out.get(xx, y, 0), x.get(xx, y, 0));
            }
        }
    }

    #[test]
    fn patch_grid_counts() {
        let obj = BinaryGrid::full(8, 8);
        assert_eq!(build_patch_grid(&obj, 4, 4).unwrap().len(), 4);
        assert_eq!(build_patch_grid(&obj, 4, 2).unwrap().len(), 9);
        assert_eq!(build_patch_grid(&square_object(8, 4), 4, 4).unwrap().len(), 1);
        assert_eq!(build_patch_grid(&BinaryGrid::full(32, 32), 4, 2).unwrap().len(), 225);
        assert!(build_patch_grid(&BinaryGrid::empty(8, 8), 4, 4).is_err());
        assert!(build_patch_grid(&obj, 0, 4).is_err());
    }

    #[test]
    fn mask_set_arithmetic() {
        let obj = BinaryGrid::full(8, 8);
        let grid = build_patch_grid(&obj, 4, 4).unwrap();
        let full = Mask::full(obj.clone());
        let mut m = full.clone();
        for p in &grid.patches {
            m = m.minus(p);
        }
        assert_eq!(m.size(), 0);
        assert_eq!(mask_union(&grid.patches, &obj), full);
        assert_eq!(mask_union(&[], &obj).size(), 0);

        let overlapping = build_patch_grid(&obj, 4, 2).unwrap();
        let (p1, p2) = (&overlapping.patches[0], &overlapping.patches[1]);
        let inter: HashSet<_> = p1.pixels.iter().filter(|i| p2.pixels.contains(i)).collect();
        assert_eq!((p1.len(), p2.len(), inter.len()), (16, 16, 8));
        // Anchors (0,0) and (2,2) overlap in a 2x2 block.
        let p3 = &overlapping.patches[4];
        assert_eq!(p3.anchor, (2, 2));
        let inter13 = p1.pixels.iter().filter(|i| p3.pixels.contains(i)).count();
        assert_eq!(inter13, 4);
        assert_eq!(mask_union(&[p1.clone(), p3.clone()], &obj).size(), 28);
    }

    #[test]
    fn mask_rejects_pixels_outside_object() {
        let obj = square_object(4, 2);
        assert!(Mask::new(BinaryGrid::full(4, 4), obj.clone()).is_err());
        assert_eq!(Mask::clipped(&BinaryGrid::full(4, 4), obj.clone()).unwrap().size(), 4);
    }

    proptest! {
        #[test]
        fn union_matches_direct_set_computation(
            side in 1usize..12, patch in 1usize..6, stride in 1usize..6,
            pick in proptest::collection::vec(any::<bool>(), 0..64),
            obj_bits in proptest::collection::vec(any::<bool>(), 144),
        ) {
            let obj = BinaryGrid::from_fn(side, side, |x, y| obj_bits[y * 12 + x]);
            prop_assume!(!obj.is_empty());
            let grid = build_patch_grid(&obj, patch, stride).unwrap();
            let chosen: Vec<Patch> = grid.patches.iter().enumerate()
                .filter(|(i, _)| pick.get(*i).copied().unwrap_or(false))
                .map(|(_, p)| p.clone()).collect();
            let direct: HashSet<usize> = chosen.iter().flat_map(|p| p.pixels.iter().copied())
                .filter(|&i| obj.bits()[i]).collect();
            let m = mask_union(&chosen, &obj);
            prop_assert_eq!(m.size(), direct.len());
            prop_assert!(m.bits().is_subset_of(&obj));
            if let Some(p) = grid.patches.first() {
                prop_assert!(m.minus(p).size() <= m.size());
            }
            if stride <= patch {
                prop_assert_eq!(mask_union(&grid.patches, &obj).size(), obj.count());
            }
        }

        #[test]
        fn resampling_stays_in_range(
            w in 1usize..9, h in 1usize..9, nw in 1usize..20, nh in 1usize..20,
            vals in proptest::collection::vec(0.0f64..=1.0, 81),
        ) {
            let img = Image::from_fn(w, h, 1, |x, y, _| vals[y * 9 + x]).unwrap();
            for out in [img.resize_bilinear(nw, nh).unwrap(), img.resize_area(nw, nh).unwrap()] {
                prop_assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
            }
        }
    }
}
