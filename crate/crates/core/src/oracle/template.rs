use super::{Concurrency, HardLabelOracle, Label};
use crate::error::{Error, Result};
use crate::imaging::Image;

/// Nearest-prototype classifier under mean squared distance.
///
/// Queries larger than the prototypes are block-averaged down when the
/// ratio is an integer and bilinearly resized otherwise. Ties go to the
/// lowest label.
#[derive(Debug, Clone)]
pub struct TemplateClassifier {
    prototypes: Vec<(Label, Image)>,
}

impl TemplateClassifier {
    pub fn new(mut prototypes: Vec<(Label, Image)>) -> Result<Self> {
        let Some((_, first)) = prototypes.first() else {
            return Err(Error::invalid("template classifier needs at least one prototype"));
        };
        if prototypes.iter().any(|(_, p)| !p.same_shape(first)) {
            return Err(Error::invalid("prototypes must share one shape"));
        }
        prototypes.sort_by_key(|(l, _)| *l);
        if prototypes.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::invalid("duplicate prototype label"));
        }
        Ok(Self { prototypes })
    }

    pub fn prototypes(&self) -> &[(Label, Image)] {
        &self.prototypes
    }

    /// Squared distances to every prototype, in label order.
    pub fn distances(&self, img: &Image) -> Result<Vec<(Label, f64)>> {
        let proto = &self.prototypes[0].1;
        if img.channels() != proto.channels() {
            return Err(Error::invalid("query channel count differs from prototypes"));
        }
        let (pw, ph) = (proto.width(), proto.height());
        let scaled;
        let q = if (img.width(), img.height()) == (pw, ph) {
            img
        } else {
            scaled = if img.width().is_multiple_of(pw) && img.height().is_multiple_of(ph) {
                img.resize_area(pw, ph)?
            } else {
                img.resize_bilinear(pw, ph)?
            };
            &scaled
        };
        self.prototypes.iter().map(|(l, p)| Ok((*l, q.mean_squared_distance(p)?))).collect()
    }
}

impl HardLabelOracle for TemplateClassifier {
    fn classify(&self, img: &Image) -> Result<Label> {
        let mut best = (Label(i64::MAX), f64::INFINITY);
        for (l, d) in self.distances(img)? {
            if d < best.1 {
                best = (l, d);
            }
        }
        Ok(best.0)
    }

    fn concurrency(&self) -> Concurrency {
        Concurrency::Concurrent
    }
}
