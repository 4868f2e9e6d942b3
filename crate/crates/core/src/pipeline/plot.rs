//! A minimal line chart rasterizer for sweep curves.

use crate::error::{Error, Result};
use crate::imaging::Image;

const MARGIN: usize = 16;

/// Plots `points` with x spanning its own range and y fixed to `[0, 1]`.
/// Light gridlines mark y = 0.25, 0.5 and 0.75.
pub fn line_chart(points: &[(f64, f64)], width: usize, height: usize) -> Result<Image> {
    if width <= 2 * MARGIN || height <= 2 * MARGIN {
        return Err(Error::invalid("chart too small"));
    }
    if points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(Error::invalid("non-finite point"));
    }
    let mut px = vec![1.0f64; width * height];
    let (x0, x1) = (MARGIN as f64, (width - MARGIN) as f64);
    let (y0, y1) = ((height - MARGIN) as f64, MARGIN as f64);
    let (lo, hi) = points.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (x, _)| (lo.min(*x), hi.max(*x)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    let to_px = |(x, y): (f64, f64)| (x0 + (x - lo) / span * (x1 - x0), y0 + y.clamp(0.0, 1.0) * (y1 - y0));

    let mut put = |x: f64, y: f64, v: f64| {
        let (xi, yi) = (x.round(), y.round());
        if xi >= 0.0 && yi >= 0.0 && (xi as usize) < width && (yi as usize) < height {
            let i = yi as usize * width + xi as usize;
            px[i] = px[i].min(v);
        }
    };
    for g in [0.25, 0.5, 0.75] {
        let y = y0 + g * (y1 - y0);
        for x in MARGIN..=width - MARGIN {
            put(x as f64, y, 0.85);
        }
    }
    for x in MARGIN..=width - MARGIN {
        put(x as f64, y0, 0.0);
    }
    for y in MARGIN..=height - MARGIN {
        put(x0, y as f64, 0.0);
    }
    let pts: Vec<(f64, f64)> = points.iter().copied().map(to_px).collect();
    for w in pts.windows(2) {
        let ((ax, ay), (bx, by)) = (w[0], w[1]);
        let steps = (bx - ax).abs().max((by - ay).abs()).ceil().max(1.0) as usize;
        for s in 0..=steps {
            let t = s as f64 / steps as f64;
            put(ax + t * (bx - ax), ay + t * (by - ay), 0.2);
        }
    }
    for &(x, y) in &pts {
        for dy in -2..=2 {
            for dx in -2..=2 {
                put(x + dx as f64, y + dy as f64, 0.0);
            }
        }
    }
    Image::new(width, height, 1, px)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints_land_in_the_corners() {
        let img = line_chart(&[(0.0, 0.0), (10.0, 1.0)], 100, 80).unwrap();
        assert_eq!(img.get(MARGIN, 80 - MARGIN, 0), 0.0);
        assert_eq!(img.get(100 - MARGIN, MARGIN, 0), 0.0);
        assert_eq!(img.get(60, 70, 0), 1.0);
        assert!(line_chart(&[(0.0, f64::NAN)], 100, 80).is_err());
    }
}
