use super::{BinaryMask, GrayImage};
use crate::error::{Error, Result};

/// The ball's height profile is expressed in 8-bit grey levels, so a ball of
/// radius `r` rises `r/255` above its rim in unit intensity.
const BALL_HEIGHT_SCALE: f64 = 1.0 / 255.0;

/// Rolling-ball output: the estimated background and `clamp(img − background)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RollingBall {
    pub background: GrayImage,
    pub subtracted: GrayImage,
}

fn ball(radius: usize) -> Vec<(isize, isize, f64)> {
    let r = radius as isize;
    let r2 = (radius * radius) as f64;
    let mut taps = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            let d2 = (dx * dx + dy * dy) as f64;
            if d2 <= r2 {
                taps.push((dx, dy, (r2 - d2).sqrt() * BALL_HEIGHT_SCALE));
            }
        }
    }
    taps
}

/// Estimate the background as the grayscale opening of `img` by a ball of
/// `radius` pixels: erosion `min(I(x+d) − h(d))` followed by dilation
/// `max(e(x−d) + h(d))`, both over the disk and ignoring taps that leave the
/// image.
pub fn rolling_ball_background(img: &GrayImage, radius: usize) -> Result<RollingBall> {
    if radius == 0 {
        return Err(Error::contract("rolling ball radius must be at least 1"));
    }
    let half_extent = img.width().min(img.height()) / 2;
    if radius > half_extent {
        return Err(Error::contract(format!(
            "rolling ball radius {radius} exceeds half the image extent ({half_extent})"
        )));
    }
    let taps = ball(radius);
    let (w, h) = (img.width() as isize, img.height() as isize);
    let inside = |x: isize, y: isize| x >= 0 && y >= 0 && x < w && y < h;

    let mut eroded = vec![0.0; img.pixels().len()];
    for y in 0..h {
        for x in 0..w {
            let mut m = f64::INFINITY;
            for &(dx, dy, hgt) in &taps {
                let (sx, sy) = (x + dx, y + dy);
                if inside(sx, sy) {
                    m = m.min(img.get(sx as usize, sy as usize) - hgt);
                }
            }
            eroded[(y * w + x) as usize] = m;
        }
    }

    let background = GrayImage::from_fn(img.width(), img.height(), |x, y| {
        let (x, y) = (x as isize, y as isize);
        let mut m = f64::NEG_INFINITY;
        for &(dx, dy, hgt) in &taps {
            let (sx, sy) = (x - dx, y - dy);
            if inside(sx, sy) {
                m = m.max(eroded[(sy * w + sx) as usize] + hgt);
            }
        }
        let orig = img.get(x as usize, y as usize);
        // The opening never exceeds the image; snap height round-off.
        if m >= orig - 1e-12 {
            orig
        } else {
            m
        }
    });
    let subtracted = GrayImage::from_fn(img.width(), img.height(), |x, y| {
        img.get(x, y) - background.get(x, y)
    });
    Ok(RollingBall {
        background,
        subtracted,
    })
}

/// Square-window filter. `all` selects erosion (every tap set) versus
/// dilation (any tap set); `border` is the value assumed outside the image.
fn square_filter(mask: &BinaryMask, radius: usize, border: bool, all: bool) -> BinaryMask {
    let (w, h) = (mask.width(), mask.height());
    let r = radius as isize;
    let pass = |get: &dyn Fn(isize, isize) -> Option<bool>, horizontal: bool| {
        BinaryMask::from_fn(w, h, |x, y| {
            let mut acc = all;
            for d in -r..=r {
                let (sx, sy) = if horizontal {
                    (x as isize + d, y as isize)
                } else {
                    (x as isize, y as isize + d)
                };
                let v = get(sx, sy).unwrap_or(border);
                if all {
                    acc &= v;
                } else {
                    acc |= v;
                }
            }
            acc
        })
    };
    let lookup = |m: &BinaryMask, x: isize, y: isize| {
        (x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h)
            .then(|| m.get(x as usize, y as usize))
    };
    let rows = pass(&|x, y| lookup(mask, x, y), true);
    pass(&|x, y| lookup(&rows, x, y), false)
}

/// Binary erosion by a `(2r+1)²` square; pixels outside the image count as unset.
pub fn erode(mask: &BinaryMask, radius: usize) -> BinaryMask {
    square_filter(mask, radius, false, true)
}

/// Binary dilation by a `(2r+1)²` square; pixels outside the image count as unset.
pub fn dilate(mask: &BinaryMask, radius: usize) -> BinaryMask {
    square_filter(mask, radius, false, false)
}

/// Dilation with an explicit value for pixels outside the image.
pub fn dilate_padded(mask: &BinaryMask, radius: usize, border: bool) -> BinaryMask {
    square_filter(mask, radius, border, false)
}
