#![allow(dead_code)]

use physadv::imaging::Image;
use physadv::oracle::{Concurrency, HardLabelOracle, Label};
use physadv::Result;
use rand::Rng;
use rand_distr::StandardNormal;

/// Target iff `w . img > c`.
pub struct Halfspace {
    pub w: Vec<f64>,
    pub c: f64,
    pub target: Label,
    pub other: Label,
}

impl Halfspace {
    pub fn score(&self, img: &Image) -> f64 {
        self.w.iter().zip(img.data()).map(|(a, b)| a * b).sum::<f64>()
    }
}

impl HardLabelOracle for Halfspace {
    fn classify(&self, img: &Image) -> Result<Label> {
        Ok(if self.score(img) > self.c { self.target } else { self.other })
    }

    fn concurrency(&self) -> Concurrency {
        Concurrency::Concurrent
    }
}

/// Target iff the mean over `region` exceeds `level` and, when set, pixel
/// `reference` exceeds `reference_level`.
pub struct Brightness {
    pub region: Vec<usize>,
    pub level: f64,
    pub reference: Option<(usize, f64)>,
    pub target: Label,
}

impl HardLabelOracle for Brightness {
    fn classify(&self, img: &Image) -> Result<Label> {
        let d = img.data();
        let mean = self.region.iter().map(|&i| d[i]).sum::<f64>() / self.region.len() as f64;
        let ref_ok = self.reference.is_none_or(|(i, lvl)| d[i] > lvl);
        Ok(if mean > self.level && ref_ok { self.target } else { Label(0) })
    }

    fn concurrency(&self) -> Concurrency {
        Concurrency::Concurrent
    }
}

pub fn gaussian_vec(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (norm(a) * norm(b))
}
