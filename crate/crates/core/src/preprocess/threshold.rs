use super::GrayImage;
use crate::error::{Error, Result};

pub const BINS: usize = 256;

/// Bin index of an intensity: `round(v · 255)`.
#[inline]
pub fn bin_of(v: f64) -> usize {
    ((v * 255.0).round() as isize).clamp(0, 255) as usize
}

pub fn histogram256(img: &GrayImage) -> [u64; BINS] {
    let mut hist = [0u64; BINS];
    for &v in img.pixels() {
        hist[bin_of(v)] += 1;
    }
    hist
}

/// Shannon fuzziness `−μ ln μ − (1−μ) ln(1−μ)`.
fn shannon(mu: f64) -> f64 {
    let mut s = 0.0;
    if mu > 0.0 && mu < 1.0 {
        s -= mu * mu.ln() + (1.0 - mu) * (1.0 - mu).ln();
    }
    s
}

/// Huang–Wang fuzzy-entropy threshold over a 256-bin histogram.
///
/// For a candidate bin `t` the two classes are `{g ≤ t}` and `{g > t}` with
/// means `μ0`, `μ1`; each level's membership in its class is
/// `1 / (1 + |g − μ_k| / C)` with `C` the occupied grey-level span. Returns the
/// bin minimizing the summed Shannon fuzziness; ties keep the lowest bin.
pub fn huang_threshold_bin(hist: &[u64; BINS]) -> Result<usize> {
    let first = hist.iter().position(|&c| c > 0);
    let last = hist.iter().rposition(|&c| c > 0);
    let (first, last) = match (first, last) {
        (Some(f), Some(l)) if f < l => (f, l),
        _ => {
            return Err(Error::data(
                "image has a single intensity level; no threshold exists",
            ))
        }
    };
    let span = (last - first) as f64;

    // Prefix sums of counts and count-weighted levels.
    let mut count = [0.0f64; BINS];
    let mut moment = [0.0f64; BINS];
    let mut c_acc = 0.0;
    let mut m_acc = 0.0;
    for g in 0..BINS {
        c_acc += hist[g] as f64;
        m_acc += g as f64 * hist[g] as f64;
        count[g] = c_acc;
        moment[g] = m_acc;
    }
    let total_count = count[BINS - 1];
    let total_moment = moment[BINS - 1];

    let mut best_bin = first;
    let mut best = f64::INFINITY;
    for t in first..last {
        let mu0 = moment[t] / count[t];
        let mu1 = (total_moment - moment[t]) / (total_count - count[t]);
        let mut entropy = 0.0;
        for (g, &h) in hist.iter().enumerate().take(last + 1).skip(first) {
            if h == 0 {
                continue;
            }
            let mu_class = if g <= t { mu0 } else { mu1 };
            let membership = 1.0 / (1.0 + (g as f64 - mu_class).abs() / span);
            entropy += h as f64 * shannon(membership);
        }
        if entropy < best {
            best = entropy;
            best_bin = t;
        }
    }
    Ok(best_bin)
}

/// Huang threshold as an intensity: pixels `≥` the returned value fall in
/// bins above the selected bin.
pub fn huang_threshold(img: &GrayImage) -> Result<f64> {
    let bin = huang_threshold_bin(&histogram256(img))?;
    Ok(bin_threshold(bin))
}

/// Intensity separating bin `t` from bin `t+1`.
pub fn bin_threshold(bin: usize) -> f64 {
    (bin as f64 + 0.5) / 255.0
}
