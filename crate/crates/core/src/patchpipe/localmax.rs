//! Patch sampling centred on local maxima of the smoothed DAB concentration.

use crate::error::{Error, Result};
use crate::imgproc::Field;

#[derive(Debug, Clone, PartialEq)]
pub struct LocalMaxSample {
    /// Patch origins, strongest maximum first.
    pub origins: Vec<(u32, u32)>,
    /// Maxima as `(x, y, smoothed value)`.
    pub maxima: Vec<(usize, usize, f64)>,
    pub warning: Option<String>,
}

/// Maxima weaker than this fraction of the strongest smoothed value are ignored.
pub const PEAK_FLOOR: f64 = 1e-6;

fn is_local_max(f: &Field, x: usize, y: usize, floor: f64) -> bool {
    let v = f.get(x, y);
    if v <= floor {
        return false;
    }
    for dy in -1isize..=1 {
        for dx in -1isize..=1 {
            let (nx, ny) = (x as isize + dx, y as isize + dy);
            if (dx, dy) == (0, 0) || nx < 0 || ny < 0 || nx >= f.width() as isize || ny >= f.height() as isize {
                continue;
            }
            if f.get(nx as usize, ny as usize) > v {
                return false;
            }
        }
    }
    true
}

/// Mean-filters `dab`, keeps the `k` strongest local maxima at least `patch_size` apart
/// and centres a `patch_size` square on each, clamped inside the map.
pub fn sample_patches_localmax(dab: &Field, k: usize, patch_size: u32, filter_radius: usize) -> Result<LocalMaxSample> {
    let p = patch_size as usize;
    if p == 0 || dab.width() < p || dab.height() < p {
        return Err(Error::Size(format!(
            "map {}x{} is smaller than one {patch_size}px patch",
            dab.width(),
            dab.height()
        )));
    }
    let smooth = dab.mean_filter(filter_radius);
    let floor = smooth.values().iter().cloned().fold(0.0, f64::max) * PEAK_FLOOR;
    let mut candidates: Vec<(usize, usize, f64)> = Vec::new();
    for y in 0..smooth.height() {
        for x in 0..smooth.width() {
            if is_local_max(&smooth, x, y, floor) {
                candidates.push((x, y, smooth.get(x, y)));
            }
        }
    }
    candidates.sort_by(|a, b| b.2.total_cmp(&a.2).then((a.1, a.0).cmp(&(b.1, b.0))));
    let r2 = (p * p) as f64;
    let mut maxima: Vec<(usize, usize, f64)> = Vec::new();
    for c in candidates {
        if maxima.len() == k {
            break;
        }
        let far = maxima.iter().all(|m| {
            let (dx, dy) = (m.0 as f64 - c.0 as f64, m.1 as f64 - c.1 as f64);
            dx * dx + dy * dy >= r2
        });
        if far {
            maxima.push(c);
        }
    }
    let clamp = |c: usize, extent: usize| c.saturating_sub(p / 2).min(extent - p) as u32;
    let origins = maxima
        .iter()
        .map(|m| (clamp(m.0, dab.width()), clamp(m.1, dab.height())))
        .collect();
    let warning =
        (maxima.len() < k).then(|| format!("requested {k} local maxima, found {}", maxima.len()));
    Ok(LocalMaxSample {
        origins,
        maxima,
        warning,
    })
}
