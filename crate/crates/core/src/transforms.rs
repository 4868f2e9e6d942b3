//! The distribution of physical transforms and its deterministic application.
//!
//! A transform is perspective (rotation about the vertical axis at a given
//! distance through a pinhole), then a square crop around the warped
//! object, a resize back to the input resolution, a gamma map and a
//! Gaussian blur.
//!
//! Geometry convention. Pixel coordinates put pixel `i` on `[i, i + 1)`
//! with its center at `i + 0.5`. The principal point is the frame center
//! `(W/2, H/2)` and the focal length in pixels equals `W`. The object is a
//! flat card that exactly fills the frame when it faces the camera at
//! distance `f`, so `theta = 0, dist = f` is the identity. Stages one to
//! three are fused into a single inverse map sampled once; warp then crop
//! then resize is mathematically the same composite without the second
//! interpolation pass.

use std::io::{BufRead, Write};

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{BinaryGrid, Image};
use crate::seed;

pub const MAX_REDRAWS: u32 = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformDistribution {
    /// Rotation about the vertical axis is drawn from `[-rot_y_max, rot_y_max]` degrees.
    pub rot_y_max: f64,
    pub focal: f64,
    /// `[focal, d_max]`.
    pub distance_range: [f64; 2],
    /// Crop scale and both crop offsets are drawn from `[-c, c]`.
    pub crop_percent_max: f64,
    pub gamma_max: f64,
    pub blur_kernels: Vec<usize>,
    #[serde(default = "default_background")]
    pub background: f64,
}

fn default_background() -> f64 {
    0.5
}

impl TransformDistribution {
    /// Traffic-sign ranges.
    pub fn gtsrb() -> Self {
        Self {
            rot_y_max: 50.0,
            focal: 3.0,
            distance_range: [3.0, 15.0],
            crop_percent_max: 0.03125,
            gamma_max: 3.5,
            blur_kernels: vec![1, 5, 9],
            background: 0.5,
        }
    }

    /// License-plate ranges.
    pub fn alpr() -> Self {
        Self {
            rot_y_max: 15.0,
            focal: 10.0,
            distance_range: [10.0, 15.0],
            crop_percent_max: 0.03125,
            gamma_max: 3.5,
            blur_kernels: vec![1, 3, 5],
            background: 0.5,
        }
    }

    /// Every draw is the identity.
    pub fn identity() -> Self {
        Self {
            rot_y_max: 0.0,
            focal: 1.0,
            distance_range: [1.0, 1.0],
            crop_percent_max: 0.0,
            gamma_max: 1.0,
            blur_kernels: vec![1],
            background: 0.5,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "gtsrb" => Ok(Self::gtsrb()),
            "alpr" => Ok(Self::alpr()),
            "identity" => Ok(Self::identity()),
            other => Err(Error::Config(format!("unknown transform preset {other:?}"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::invalid(format!("transform distribution: {m}")));
        if !(0.0..90.0).contains(&self.rot_y_max) {
            return bad("rot_y_max must lie in [0, 90)");
        }
        if !(self.focal > 0.0 && self.focal.is_finite()) {
            return bad("focal must be positive");
        }
        if self.distance_range[0] != self.focal || !(self.distance_range[1] >= self.focal) {
            return bad("distance_range must be [focal, d_max] with d_max >= focal");
        }
        if !(0.0..0.5).contains(&self.crop_percent_max) {
            return bad("crop_percent_max must lie in [0, 0.5)");
        }
        if !(self.gamma_max >= 1.0 && self.gamma_max.is_finite()) {
            return bad("gamma_max must be >= 1");
        }
        if self.blur_kernels.is_empty() || self.blur_kernels.iter().any(|k| k % 2 == 0) {
            return bad("blur kernels must be a non-empty list of odd sizes");
        }
        if !(0.0..=1.0).contains(&self.background) {
            return bad("background must lie in [0, 1]");
        }
        Ok(())
    }

    /// One draw. Provenance fields are left at zero.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> TransformParams {
        let c = self.crop_percent_max;
        let theta = rng.random_range(-self.rot_y_max..=self.rot_y_max);
        let dist = rng.random_range(self.distance_range[0]..=self.distance_range[1]);
        let crop_scale = rng.random_range(-c..=c);
        let crop_offset_x = rng.random_range(-c..=c);
        let crop_offset_y = rng.random_range(-c..=c);
        let gamma = if rng.random_bool(0.5) {
            rng.random_range(1.0 / self.gamma_max..=1.0)
        } else {
            rng.random_range(1.0..=self.gamma_max)
        };
        let kernel = self.blur_kernels[rng.random_range(0..self.blur_kernels.len())];
        TransformParams {
            theta,
            dist,
            focal: self.focal,
            crop_scale,
            crop_offset_x,
            crop_offset_y,
            gamma,
            kernel,
            background: self.background,
            seed: 0,
            index: 0,
            redraw: 0,
        }
    }

    /// The draw for transform `index` of the sequence rooted at `seed`.
    pub fn draw(&self, seed: u64, index: u64, redraw: u32) -> TransformParams {
        let mut rng = seed::rng(seed::derive2(seed, index, redraw as u64));
        let mut p = self.sample(&mut rng);
        p.seed = seed;
        p.index = index;
        p.redraw = redraw;
        p
    }

    /// Draws transform `index`, redrawing while the object leaves the frame.
    pub fn prepare_index(
        &self,
        seed: u64,
        index: u64,
        width: usize,
        height: usize,
        object: &BinaryGrid,
    ) -> Result<PreparedTransform> {
        let mut last = None;
        for r in 0..MAX_REDRAWS {
            match PreparedTransform::new(self.draw(seed, index, r), width, height, object) {
                Ok(t) => return Ok(t),
                Err(e @ Error::TransformDegenerate(_)) => last = Some(e),
                Err(e) => return Err(e),
            }
        }
        Err(last.unwrap_or_else(|| Error::TransformDegenerate("no valid draw".into())))
    }

    /// The first `n` transforms of the sequence rooted at `seed`.
    pub fn prepare_set(
        &self,
        seed: u64,
        n: usize,
        width: usize,
        height: usize,
        object: &BinaryGrid,
    ) -> Result<Vec<PreparedTransform>> {
        self.validate()?;
        (0..n as u64).map(|i| self.prepare_index(seed, i, width, height, object)).collect()
    }
}

/// One concrete transform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformParams {
    pub theta: f64,
    pub dist: f64,
    pub focal: f64,
    pub crop_scale: f64,
    pub crop_offset_x: f64,
    pub crop_offset_y: f64,
    pub gamma: f64,
    pub kernel: usize,
    pub background: f64,
    pub seed: u64,
    pub index: u64,
    pub redraw: u32,
}

impl TransformParams {
    pub fn identity() -> Self {
        TransformDistribution::identity().sample(&mut seed::rng(0))
    }

    fn geometric_identity(&self) -> bool {
        self.theta == 0.0
            && self.dist == self.focal
            && self.crop_scale == 0.0
            && self.crop_offset_x == 0.0
            && self.crop_offset_y == 0.0
    }
}

/// Homography in normalized image coordinates, `u = (px - cx) / k`.
///
/// It maps the object plane facing the camera at distance `f` to the same
/// plane rotated by `theta_deg` about the vertical axis at distance `dist`.
/// `theta = 0, dist = f` gives `f * I`.
pub fn build_homography(theta_deg: f64, dist: f64, focal: f64) -> Result<Matrix3<f64>> {
    if !(focal > 0.0) || !(dist >= focal) || !dist.is_finite() {
        return Err(Error::invalid(format!("need dist >= f > 0, got dist={dist}, f={focal}")));
    }
    if !(theta_deg.abs() < 90.0) {
        return Err(Error::invalid(format!("rotation {theta_deg} deg is singular")));
    }
    let (s, c) = theta_deg.to_radians().sin_cos();
    // Rotation about y followed by translation to depth `dist`, applied to plane points (X, Y, 1).
    let rt = Matrix3::new(c, 0.0, 0.0, 0.0, 1.0, 0.0, -s, 0.0, dist);
    let to_plane = Matrix3::new(focal, 0.0, 0.0, 0.0, focal, 0.0, 0.0, 0.0, 1.0);
    Ok(rt * to_plane)
}

fn intrinsics(width: usize, height: usize) -> Matrix3<f64> {
    let k = width as f64;
    Matrix3::new(k, 0.0, width as f64 / 2.0, 0.0, k, height as f64 / 2.0, 0.0, 0.0, 1.0)
}

/// The homography in pixel coordinates for a `width x height` frame.
pub fn pixel_homography(theta_deg: f64, dist: f64, focal: f64, width: usize, height: usize) -> Result<Matrix3<f64>> {
    let k = intrinsics(width, height);
    let k_inv = k.try_inverse().expect("intrinsics are invertible");
    Ok(k * build_homography(theta_deg, dist, focal)? * k_inv)
}

fn project(h: &Matrix3<f64>, x: f64, y: f64) -> (f64, f64) {
    let p = h * Vector3::new(x, y, 1.0);
    (p.x / p.z, p.y / p.z)
}

/// Axis-aligned rectangle `[x0, x1) x [y0, y1)` in pixel edge coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Rect {
    fn w(&self) -> f64 {
        self.x1 - self.x0
    }

    fn h(&self) -> f64 {
        self.y1 - self.y0
    }

    fn bounding(points: &[(f64, f64)]) -> Rect {
        let mut r = Rect { x0: f64::INFINITY, y0: f64::INFINITY, x1: f64::NEG_INFINITY, y1: f64::NEG_INFINITY };
        for &(x, y) in points {
            r.x0 = r.x0.min(x);
            r.y0 = r.y0.min(y);
            r.x1 = r.x1.max(x);
            r.y1 = r.y1.max(y);
        }
        r
    }
}

/// Object bounding box scaled from the object grid to a `width x height` frame.
pub fn object_bbox(object: &BinaryGrid, width: usize, height: usize) -> Result<Rect> {
    let (x0, y0, x1, y1) = object.bbox().ok_or_else(|| Error::invalid("empty object region"))?;
    let sx = width as f64 / object.width() as f64;
    let sy = height as f64 / object.height() as f64;
    Ok(Rect { x0: x0 as f64 * sx, y0: y0 as f64 * sy, x1: x1 as f64 * sx, y1: y1 as f64 * sy })
}

/// Forward-mapped bounding box of the object's bounding-box corners.
pub fn warped_object_bbox(params: &TransformParams, width: usize, height: usize, object: &BinaryGrid) -> Result<Rect> {
    let h = pixel_homography(params.theta, params.dist, params.focal, width, height)?;
    let b = object_bbox(object, width, height)?;
    let corners = [(b.x0, b.y0), (b.x1, b.y0), (b.x0, b.y1), (b.x1, b.y1)];
    Ok(Rect::bounding(&corners.map(|(x, y)| project(&h, x, y))))
}

/// The crop window in the warped frame.
fn crop_window(params: &TransformParams, width: usize, height: usize, object: &BinaryGrid) -> Result<Rect> {
    let (fw, fh) = (width as f64, height as f64);
    let b0 = object_bbox(object, width, height)?;
    let b1 = warped_object_bbox(params, width, height, object)?;
    if b1.x1 <= 0.0 || b1.y1 <= 0.0 || b1.x0 >= fw || b1.y0 >= fh {
        return Err(Error::TransformDegenerate("warped object is outside the frame".into()));
    }
    // Tight squares around the object before and after the warp. The window
    // keeps the frame's placement relative to the square.
    let side0 = b0.w().max(b0.h());
    let side1 = b1.w().max(b1.h());
    let c0 = ((b0.x0 + b0.x1) / 2.0, (b0.y0 + b0.y1) / 2.0);
    let c1 = ((b1.x0 + b1.x1) / 2.0, (b1.y0 + b1.y1) / 2.0);
    let k = side1 / side0 * (1.0 + params.crop_scale);
    let (ww, wh) = (fw * k, fh * k);
    let cx = c1.0 + (fw / 2.0 - c0.0) * side1 / side0 + params.crop_offset_x * ww;
    let cy = c1.1 + (fh / 2.0 - c0.1) * side1 / side0 + params.crop_offset_y * wh;
    let r = Rect {
        x0: (cx - ww / 2.0).max(0.0),
        y0: (cy - wh / 2.0).max(0.0),
        x1: (cx + ww / 2.0).min(fw),
        y1: (cy + wh / 2.0).min(fh),
    };
    if r.w() < 1.0 || r.h() < 1.0 {
        return Err(Error::TransformDegenerate("crop window collapsed after clipping".into()));
    }
    Ok(r)
}

fn gaussian_weights(kernel: usize) -> Vec<f64> {
    let sigma = kernel as f64 / 6.0;
    let r = (kernel / 2) as isize;
    let w: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let sum: f64 = w.iter().sum();
    w.into_iter().map(|v| v / sum).collect()
}

/// A transform bound to a frame size, with its inverse map and blur taps precomputed.
#[derive(Debug, Clone)]
pub struct PreparedTransform {
    params: TransformParams,
    width: usize,
    height: usize,
    /// Output edge coordinates to source edge coordinates.
    inverse: Option<Matrix3<f64>>,
    taps: Option<Vec<f64>>,
}

impl PreparedTransform {
    pub fn new(params: TransformParams, width: usize, height: usize, object: &BinaryGrid) -> Result<Self> {
        if params.kernel.is_multiple_of(2) || !(params.gamma > 0.0) {
            return Err(Error::invalid("kernel must be odd and gamma positive"));
        }
        let inverse = if params.geometric_identity() {
            None
        } else {
            let h = pixel_homography(params.theta, params.dist, params.focal, width, height)?;
            let win = crop_window(&params, width, height, object)?;
            let to_window = Matrix3::new(
                win.w() / width as f64, 0.0, win.x0,
                0.0, win.h() / height as f64, win.y0,
                0.0, 0.0, 1.0,
            );
            let h_inv = h.try_inverse().ok_or_else(|| Error::invalid("singular homography"))?;
            Some(h_inv * to_window)
        };
        let taps = (params.kernel > 1).then(|| gaussian_weights(params.kernel));
        Ok(Self { params, width, height, inverse, taps })
    }

    pub fn params(&self) -> &TransformParams {
        &self.params
    }

    pub fn apply(&self, x: &Image) -> Result<Image> {
        if (x.width(), x.height()) != (self.width, self.height) {
            return Err(Error::invalid("image size differs from the prepared transform"));
        }
        let (w, h, c) = (self.width, self.height, x.channels());
        let mut data = match &self.inverse {
            None => x.data().to_vec(),
            Some(g) => sample_through(x, g, self.params.background),
        };
        if self.params.gamma != 1.0 {
            let g = self.params.gamma;
            data.iter_mut().for_each(|v| *v = v.powf(g));
        }
        if let Some(taps) = &self.taps {
            data = blur_separable(&data, w, h, c, taps);
        }
        data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        Ok(Image::from_clamped(w, h, c, data))
    }
}

/// Bilinear sampling of `x` through the inverse map; points outside the source frame take `background`.
fn sample_through(x: &Image, g: &Matrix3<f64>, background: f64) -> Vec<f64> {
    let (w, h, c) = (x.width(), x.height(), x.channels());
    let (fw, fh) = (w as f64, h as f64);
    let src = x.data();
    let mut out = Vec::with_capacity(w * h * c);
    for oy in 0..h {
        let qy = oy as f64 + 0.5;
        for ox in 0..w {
            let qx = ox as f64 + 0.5;
            let z = g[(2, 0)] * qx + g[(2, 1)] * qy + g[(2, 2)];
            let sx = (g[(0, 0)] * qx + g[(0, 1)] * qy + g[(0, 2)]) / z;
            let sy = (g[(1, 0)] * qx + g[(1, 1)] * qy + g[(1, 2)]) / z;
            if !(z > 0.0) || !(0.0..=fw).contains(&sx) || !(0.0..=fh).contains(&sy) {
                out.extend(std::iter::repeat_n(background, c));
                continue;
            }
            let fx = (sx - 0.5).clamp(0.0, fw - 1.0);
            let fy = (sy - 0.5).clamp(0.0, fh - 1.0);
            let x0 = fx as usize;
            let y0 = fy as usize;
            let x1 = (x0 + 1).min(w - 1);
            let y1 = (y0 + 1).min(h - 1);
            let tx = fx - x0 as f64;
            let ty = fy - y0 as f64;
            for k in 0..c {
                let p = |xx: usize, yy: usize| src[(yy * w + xx) * c + k];
                let top = p(x0, y0) + (p(x1, y0) - p(x0, y0)) * tx;
                let bottom = p(x0, y1) + (p(x1, y1) - p(x0, y1)) * tx;
                out.push(top + (bottom - top) * ty);
            }
        }
    }
    out
}

fn blur_separable(data: &[f64], w: usize, h: usize, c: usize, taps: &[f64]) -> Vec<f64> {
    let r = (taps.len() / 2) as isize;
    let clampi = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0; data.len()];
    for y in 0..h {
        for x in 0..w {
            for k in 0..c {
                let mut acc = 0.0;
                for (t, wt) in taps.iter().enumerate() {
                    let xx = clampi(x as isize + t as isize - r, w);
                    acc += wt * data[(y * w + xx) * c + k];
                }
                tmp[(y * w + x) * c + k] = acc;
            }
        }
    }
    let mut out = vec![0.0; data.len()];
    for y in 0..h {
        for x in 0..w {
            for k in 0..c {
                let mut acc = 0.0;
                for (t, wt) in taps.iter().enumerate() {
                    let yy = clampi(y as isize + t as isize - r, h);
                    acc += wt * tmp[(yy * w + x) * c + k];
                }
                out[(y * w + x) * c + k] = acc;
            }
        }
    }
    out
}

/// `t(x)` for one parameter set.
pub fn apply(params: &TransformParams, x: &Image, object: &BinaryGrid) -> Result<Image> {
    PreparedTransform::new(params.clone(), x.width(), x.height(), object)?.apply(x)
}

/// Perspective stage alone: the warped full frame, before cropping.
pub fn warp(params: &TransformParams, x: &Image) -> Result<Image> {
    let h = pixel_homography(params.theta, params.dist, params.focal, x.width(), x.height())?;
    let inv = h.try_inverse().ok_or_else(|| Error::invalid("singular homography"))?;
    let data = sample_through(x, &inv, params.background);
    Ok(Image::from_clamped(x.width(), x.height(), x.channels(), data))
}

/// Writes one JSON record per line.
pub fn write_trace<W: Write>(params: &[TransformParams], mut out: W) -> Result<()> {
    for p in params {
        serde_json::to_writer(&mut out, p)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_trace<R: BufRead>(input: R) -> Result<Vec<TransformParams>> {
    let mut out = Vec::new();
    for line in input.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}
