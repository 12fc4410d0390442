use super::GrayImage;
use crate::error::{Error, Result};

/// How samples falling outside the image are filled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fill {
    /// Outside pixels read as 0 (black).
    #[default]
    Zero,
    /// Coordinates are clamped to the nearest edge pixel.
    Edge,
}

fn pixel(img: &GrayImage, x: isize, y: isize, fill: Fill) -> f64 {
    let (w, h) = (img.width() as isize, img.height() as isize);
    match fill {
        Fill::Zero if x < 0 || y < 0 || x >= w || y >= h => 0.0,
        Fill::Zero => img.get(x as usize, y as usize),
        Fill::Edge => img.get(x.clamp(0, w - 1) as usize, y.clamp(0, h - 1) as usize),
    }
}

/// Bilinear interpolation at a real-valued position.
pub fn sample_bilinear(img: &GrayImage, fx: f64, fy: f64, fill: Fill) -> f64 {
    let x0 = fx.floor();
    let y0 = fy.floor();
    let tx = fx - x0;
    let ty = fy - y0;
    let (x0, y0) = (x0 as isize, y0 as isize);
    let top = (1.0 - tx) * pixel(img, x0, y0, fill) + tx * pixel(img, x0 + 1, y0, fill);
    let bottom = (1.0 - tx) * pixel(img, x0, y0 + 1, fill) + tx * pixel(img, x0 + 1, y0 + 1, fill);
    ((1.0 - ty) * top + ty * bottom).clamp(0.0, 1.0)
}

/// Resize with bilinear interpolation on an align-corners grid: output
/// column `x` samples input column `x·(W_in−1)/(W_out−1)`, so corner pixels
/// map onto corner pixels and a same-size resize is the identity.
pub fn resize_bilinear(img: &GrayImage, out_width: usize, out_height: usize) -> Result<GrayImage> {
    if img.width() < 2 || img.height() < 2 {
        return Err(Error::contract(format!(
            "cannot resize a {}x{} image; both sides must be at least 2",
            img.width(),
            img.height()
        )));
    }
    if out_width == 0 || out_height == 0 {
        return Err(Error::contract("output dimensions must be positive"));
    }
    if out_width == img.width() && out_height == img.height() {
        return Ok(img.clone());
    }
    let scale = |n_in: usize, n_out: usize| {
        if n_out == 1 {
            0.0
        } else {
            (n_in - 1) as f64 / (n_out - 1) as f64
        }
    };
    let sx = scale(img.width(), out_width);
    let sy = scale(img.height(), out_height);
    let center_x = (img.width() - 1) as f64 / 2.0;
    let center_y = (img.height() - 1) as f64 / 2.0;
    Ok(GrayImage::from_fn(out_width, out_height, |x, y| {
        let fx = if out_width == 1 { center_x } else { x as f64 * sx };
        let fy = if out_height == 1 { center_y } else { y as f64 * sy };
        sample_bilinear(img, fx, fy, Fill::Edge)
    }))
}

/// Rotate counter-clockwise by `degrees` about the image center.
pub fn rotate(img: &GrayImage, degrees: f64, fill: Fill) -> GrayImage {
    if degrees == 0.0 {
        return img.clone();
    }
    let (sin, cos) = degrees.to_radians().sin_cos();
    let cx = (img.width() - 1) as f64 / 2.0;
    let cy = (img.height() - 1) as f64 / 2.0;
    GrayImage::from_fn(img.width(), img.height(), |x, y| {
        // Inverse map: rotate the output coordinate by −θ.
        let dx = x as f64 - cx;
        let dy = y as f64 - cy;
        let sx = cos * dx - sin * dy + cx;
        let sy = sin * dx + cos * dy + cy;
        sample_bilinear(img, sx, sy, fill)
    })
}

/// Mirror left to right.
pub fn flip_horizontal(img: &GrayImage) -> GrayImage {
    let w = img.width();
    GrayImage::from_fn(w, img.height(), |x, y| img.get(w - 1 - x, y))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_image_resizes_to_constant() {
        let img = GrayImage::filled(13, 9, 0.3).unwrap();
        let out = resize_bilinear(&img, 224, 224).unwrap();
        assert_eq!((out.width(), out.height()), (224, 224));
        assert!(out.pixels().iter().all(|&v| (v - 0.3).abs() < 1e-15));
    }

    #[test]
    fn same_size_resize_is_identity() {
        let img = GrayImage::from_fn(5, 4, |x, y| ((x * 7 + y * 3) % 11) as f64 / 10.0);
        assert_eq!(resize_bilinear(&img, 5, 4).unwrap(), img);
    }

    #[test]
    fn two_by_two_widened_to_four_columns() {
        // rows [0, 1] repeated; columns sample 0, 1/3, 2/3, 1
        let img = GrayImage::new(2, 2, vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        let out = resize_bilinear(&img, 4, 2).unwrap();
        let expected = [0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0];
        for y in 0..2 {
            for (x, e) in expected.iter().enumerate() {
                assert!((out.get(x, y) - e).abs() < 1e-15, "({x},{y})");
            }
        }
    }

    #[test]
    fn degenerate_inputs_rejected() {
        let img = GrayImage::filled(1, 5, 0.2).unwrap();
        assert!(resize_bilinear(&img, 4, 4).is_err());
    }

    #[test]
    fn flip_is_an_involution() {
        let img = GrayImage::from_fn(6, 3, |x, y| (x + 2 * y) as f64 / 12.0);
        assert_ne!(flip_horizontal(&img), img);
        assert_eq!(flip_horizontal(&flip_horizontal(&img)), img);
    }

    #[test]
    fn quarter_turn_moves_pixels() {
        let mut img = GrayImage::filled(5, 5, 0.0).unwrap();
        img.set(4, 2, 1.0);
        let out = rotate(&img, 90.0, Fill::Zero);
        // (4,2) is right of center; counter-clockwise in image coordinates
        // (y down) maps the inverse sample so it lands at (2, 4) or (2, 0).
        let lit: Vec<(usize, usize)> = (0..5)
            .flat_map(|y| (0..5).map(move |x| (x, y)))
            .filter(|&(x, y)| out.get(x, y) > 0.99)
            .collect();
        assert_eq!(lit.len(), 1);
        assert_eq!(lit[0].0, 2);
    }
}
