//! SSIM + L1 photometric reconstruction error.
//!
//! SSIM statistics use 3×3 mean pooling with reflection padding and
//! `C1 = 0.01²`, `C2 = 0.03²` (intensities in `[0, 1]`).

use crate::error::{Error, Result};
use crate::flow::FlowField;
use crate::grid::{Grid, Mask};

const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

/// Row-major image with interleaved channels.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 || data.len() != width * height * channels {
            return Err(Error::DimensionMismatch(format!(
                "image {width}x{height}x{channels} needs {} samples, got {}",
                width * height * channels,
                data.len()
            )));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidConfig("image samples must be finite".into()));
        }
        Ok(Image {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(width * height * channels);
        for v in 0..height {
            for u in 0..width {
                for c in 0..channels {
                    data.push(f(u, v, c));
                }
            }
        }
        Image {
            width,
            height,
            channels,
            data,
        }
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

    pub fn at(&self, u: usize, v: usize, c: usize) -> f64 {
        self.data[(v * self.width + u) * self.channels + c]
    }

    fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    fn sample(&self, x: f64, y: f64, c: usize) -> Option<f64> {
        let (w, h) = (self.width as f64, self.height as f64);
        if !(x >= 0.0 && y >= 0.0 && x <= w - 1.0 && y <= h - 1.0) {
            return None;
        }
        let (u0, v0) = (x.floor() as usize, y.floor() as usize);
        let (u1, v1) = ((u0 + 1).min(self.width - 1), (v0 + 1).min(self.height - 1));
        let (a, b) = (x - u0 as f64, y - v0 as f64);
        Some(
            (1.0 - a) * (1.0 - b) * self.at(u0, v0, c)
                + a * (1.0 - b) * self.at(u1, v0, c)
                + (1.0 - a) * b * self.at(u0, v1, c)
                + a * b * self.at(u1, v1, c),
        )
    }
}

fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let r = if i < 0 {
        -i
    } else if i >= n {
        2 * (n - 1) - i
    } else {
        i
    };
    r.clamp(0, n - 1) as usize
}

/// Per-pixel `(1 − SSIM) / 2`, clamped to `[0, 1]` and averaged over channels.
pub fn ssim_map(a: &Image, b: &Image) -> Result<Grid<f64>> {
    if !a.same_shape(b) {
        return Err(Error::DimensionMismatch("ssim inputs differ in shape".into()));
    }
    let (w, h) = (a.width, a.height);
    Ok(Grid::par_from_fn(w, h, |u, v| {
        let mut acc = 0.0;
        for c in 0..a.channels {
            let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for dv in -1..=1isize {
                for du in -1..=1isize {
                    let uu = reflect(u as isize + du, w);
                    let vv = reflect(v as isize + dv, h);
                    let (x, y) = (a.at(uu, vv, c), b.at(uu, vv, c));
                    mx += x;
                    my += y;
                    sxx += x * x;
                    syy += y * y;
                    sxy += x * y;
                }
            }
            let (mx, my) = (mx / 9.0, my / 9.0);
            let vx = sxx / 9.0 - mx * mx;
            let vy = syy / 9.0 - my * my;
            let cxy = sxy / 9.0 - mx * my;
            let ssim = (2.0 * mx * my + C1) * (2.0 * cxy + C2)
                / ((mx * mx + my * my + C1) * (vx + vy + C2));
            acc += ((1.0 - ssim) / 2.0).clamp(0.0, 1.0);
        }
        acc / a.channels as f64
    }))
}

/// Mean over `valid` of `α (1 − SSIM)/2 + (1 − α) |a − b|`.
pub fn photometric_loss(target: &Image, warped: &Image, valid: &Mask, alpha: f64) -> Result<f64> {
    if valid.width() != target.width || valid.height() != target.height {
        return Err(Error::DimensionMismatch("photometric mask vs image".into()));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidConfig(format!("alpha {alpha} outside [0, 1]")));
    }
    let ssim = ssim_map(target, warped)?;
    let mut stats = super::RunningStats::default();
    for (u, v, &ok) in valid.indexed() {
        if ok {
            let l1 = (0..target.channels)
                .map(|c| (target.at(u, v, c) - warped.at(u, v, c)).abs())
                .sum::<f64>()
                / target.channels as f64;
            stats.push(alpha * ssim.get(u, v) + (1.0 - alpha) * l1);
        }
    }
    if stats.count() == 0 {
        return Err(Error::UndefinedLoss("photometric loss has no valid pixel".into()));
    }
    Ok(stats.mean())
}

/// Samples `source` at `p_t + flow(p_t)` bilinearly. Pixels with invalid
/// flow or landing outside the source are zero and masked out.
pub fn warp_image(source: &Image, flow_ts: &FlowField) -> Result<(Image, Mask)> {
    if flow_ts.width() != source.width || flow_ts.height() != source.height {
        return Err(Error::DimensionMismatch("warp flow vs image".into()));
    }
    let ch = source.channels;
    let mut data = vec![0.0; source.data.len()];
    let valid = Grid::from_fn(source.width, source.height, |u, v| {
        let Some(f) = flow_ts.at(u, v) else {
            return false;
        };
        let (x, y) = (u as f64 + f.x, v as f64 + f.y);
        let base = (v * source.width + u) * ch;
        for c in 0..ch {
            match source.sample(x, y, c) {
                Some(s) => data[base + c] = s,
                None => return false,
            }
        }
        true
    });
    Ok((
        Image {
            width: source.width,
            height: source.height,
            channels: ch,
            data,
        },
        valid,
    ))
}
