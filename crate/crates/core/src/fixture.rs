//! A small synthetic sign-like scene with a three-class template classifier.
//!
//! The object is a disk with a bright outer ring shared by every class.
//! Inside the ring each class carries a binary glyph at ±`contrast`
//! around mid-gray: class 0 is bright on the left half, class 1 bright on
//! the top half, class 2 bright in a central disk. The victim is class 0
//! rendered at a reduced contrast; the target example is the class-1
//! prototype.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::imaging::{BinaryGrid, Image};
use crate::oracle::{Label, TemplateClassifier};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeskFixture {
    pub scene_size: usize,
    pub plane_size: usize,
    pub classifier_size: usize,
    /// Glyph amplitude of the prototypes.
    pub contrast: f64,
    /// Victim glyph amplitude as a fraction of `contrast`.
    pub victim_contrast: f64,
    pub background: f64,
    pub ring: f64,
}

impl Default for DeskFixture {
    fn default() -> Self {
        Self {
            scene_size: 64,
            plane_size: 32,
            classifier_size: 32,
            contrast: 0.4,
            victim_contrast: 0.5,
            background: 0.3,
            ring: 0.9,
        }
    }
}

pub const OBJECT_RADIUS: f64 = 0.44;
pub const GLYPH_RADIUS: f64 = 0.7;
pub const VICTIM: Label = Label(0);
pub const TARGET: Label = Label(1);

/// Everything an end-to-end attack on the fixture needs.
#[derive(Debug, Clone)]
pub struct DeskScenario {
    pub victim: Image,
    pub target_example: Image,
    pub object: BinaryGrid,
    pub classifier: TemplateClassifier,
    pub victim_label: Label,
    pub target_label: Label,
}

/// Position in units of the object radius, relative to the center, for
/// pixel `(x, y)` of an `n x n` grid.
fn polar(x: usize, y: usize, n: usize) -> (f64, f64, f64) {
    let c = n as f64 / 2.0;
    let r = OBJECT_RADIUS * n as f64;
    let dx = (x as f64 + 0.5 - c) / r;
    let dy = (y as f64 + 0.5 - c) / r;
    (dx, dy, (dx * dx + dy * dy).sqrt())
}

fn glyph(class: i64, dx: f64, dy: f64, rho: f64) -> f64 {
    let bright = match class {
        0 => dx < 0.0,
        1 => dy < 0.0,
        _ => rho < GLYPH_RADIUS / std::f64::consts::SQRT_2,
    };
    if bright {
        1.0
    } else {
        -1.0
    }
}

impl DeskFixture {
    /// Class `class` at glyph amplitude `amp` on an `n x n` grid.
    pub fn render(&self, class: i64, amp: f64, n: usize) -> Result<Image> {
        Image::from_fn(n, n, 1, |x, y, _| {
            let (dx, dy, rho) = polar(x, y, n);
            if rho > 1.0 {
                self.background
            } else if rho > GLYPH_RADIUS {
                self.ring
            } else {
                0.5 + amp * glyph(class, dx, dy, rho)
            }
        })
    }

    pub fn object(&self, n: usize) -> BinaryGrid {
        BinaryGrid::from_fn(n, n, |x, y| polar(x, y, n).2 <= 1.0)
    }

    pub fn classifier(&self) -> Result<TemplateClassifier> {
        let protos = (0..3)
            .map(|c| Ok((Label(c), self.render(c, self.contrast, self.classifier_size)?)))
            .collect::<Result<Vec<_>>>()?;
        TemplateClassifier::new(protos)
    }

    pub fn scenario(&self) -> Result<DeskScenario> {
        Ok(DeskScenario {
            victim: self.render(VICTIM.0, self.contrast * self.victim_contrast, self.scene_size)?,
            target_example: self.render(TARGET.0, self.contrast, self.scene_size)?,
            object: self.object(self.plane_size),
            classifier: self.classifier()?,
            victim_label: VICTIM,
            target_label: TARGET,
        })
    }
}
