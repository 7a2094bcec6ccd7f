//! Binary morphology: connected components, thinning and hole filling.

use super::BinaryMask;

#[derive(Debug, Clone, PartialEq)]
pub struct RegionStats {
    pub label: u32,
    pub area: usize,
    /// sqrt(1 − λ2/λ1) of the central second-moment matrix; 0 for a circle.
    pub eccentricity: f64,
    pub centroid: (f64, f64),
    /// Inclusive bounding box (x0, y0, x1, y1).
    pub bbox: (usize, usize, usize, usize),
}

const NEIGHBORS_8: [(isize, isize); 8] = [(-1, -1), (0, -1), (1, -1), (-1, 0), (1, 0), (-1, 1), (0, 1), (1, 1)];
const NEIGHBORS_4: [(isize, isize); 4] = [(0, -1), (-1, 0), (1, 0), (0, 1)];

/// Label map (0 = background, components numbered from 1 in raster order) and per-label stats.
pub fn label_components(mask: &BinaryMask) -> (Vec<u32>, Vec<RegionStats>) {
    let (w, h) = (mask.width(), mask.height());
    let mut labels = vec![0u32; w * h];
    let mut stats = Vec::new();
    let mut stack = Vec::new();
    for start in 0..w * h {
        if !mask.bits()[start] || labels[start] != 0 {
            continue;
        }
        let label = stats.len() as u32 + 1;
        labels[start] = label;
        stack.push(start);
        let mut pixels = Vec::new();
        while let Some(i) = stack.pop() {
            pixels.push(i);
            let (x, y) = ((i % w) as isize, (i / w) as isize);
            for (dx, dy) in NEIGHBORS_8 {
                let (nx, ny) = (x + dx, y + dy);
                if mask.get_signed(nx, ny) {
                    let j = ny as usize * w + nx as usize;
                    if labels[j] == 0 {
                        labels[j] = label;
                        stack.push(j);
                    }
                }
            }
        }
        stats.push(region_stats(label, &pixels, w));
    }
    (labels, stats)
}

fn region_stats(label: u32, pixels: &[usize], width: usize) -> RegionStats {
    let n = pixels.len() as f64;
    let (mut sx, mut sy) = (0.0, 0.0);
    let mut bbox = (usize::MAX, usize::MAX, 0, 0);
    for &i in pixels {
        let (x, y) = (i % width, i / width);
        sx += x as f64;
        sy += y as f64;
        bbox = (bbox.0.min(x), bbox.1.min(y), bbox.2.max(x), bbox.3.max(y));
    }
    let (cx, cy) = (sx / n, sy / n);
    let (mut m20, mut m02, mut m11) = (0.0, 0.0, 0.0);
    for &i in pixels {
        let (dx, dy) = ((i % width) as f64 - cx, (i / width) as f64 - cy);
        m20 += dx * dx;
        m02 += dy * dy;
        m11 += dx * dy;
    }
    let (a, c, b) = (m20 / n, m02 / n, m11 / n);
    let half_trace = (a + c) / 2.0;
    let root = (((a - c) / 2.0).powi(2) + b * b).sqrt();
    let (l1, l2) = (half_trace + root, (half_trace - root).max(0.0));
    let eccentricity = if l1 > 0.0 { (1.0 - l2 / l1).max(0.0).sqrt() } else { 0.0 };
    RegionStats {
        label,
        area: pixels.len(),
        eccentricity,
        centroid: (cx, cy),
        bbox,
    }
}

pub fn connected_components(mask: &BinaryMask) -> Vec<RegionStats> {
    label_components(mask).1
}

/// Zhang–Suen thinning iterated to a fixed point.
pub fn skeletonize(mask: &BinaryMask) -> BinaryMask {
    let mut out = mask.clone();
    let (w, h) = (mask.width(), mask.height());
    let mut to_clear = Vec::new();
    loop {
        let mut changed = false;
        for pass in 0..2 {
            to_clear.clear();
            for y in 0..h {
                for x in 0..w {
                    if !out.get(x, y) {
                        continue;
                    }
                    let (xi, yi) = (x as isize, y as isize);
                    // P2..P9 clockwise from north.
                    let p = [
                        out.get_signed(xi, yi - 1),
                        out.get_signed(xi + 1, yi - 1),
                        out.get_signed(xi + 1, yi),
                        out.get_signed(xi + 1, yi + 1),
                        out.get_signed(xi, yi + 1),
                        out.get_signed(xi - 1, yi + 1),
                        out.get_signed(xi - 1, yi),
                        out.get_signed(xi - 1, yi - 1),
                    ];
                    let b = p.iter().filter(|&&v| v).count();
                    if !(2..=6).contains(&b) {
                        continue;
                    }
                    let a = (0..8).filter(|&k| !p[k] && p[(k + 1) % 8]).count();
                    if a != 1 {
                        continue;
                    }
                    let (n, e, s, wv) = (p[0], p[2], p[4], p[6]);
                    let keep = if pass == 0 { (n && e && s) || (e && s && wv) } else { (n && e && wv) || (n && s && wv) };
                    if !keep {
                        to_clear.push((x, y));
                    }
                }
            }
            for &(x, y) in &to_clear {
                out.set(x, y, false);
            }
            changed |= !to_clear.is_empty();
        }
        if !changed {
            return out;
        }
    }
}

/// Background regions not 4-connected to the border become foreground.
pub fn fill_holes(mask: &BinaryMask) -> BinaryMask {
    let (w, h) = (mask.width(), mask.height());
    let mut outside = vec![false; w * h];
    let mut stack: Vec<usize> = Vec::new();
    let seed = |x: usize, y: usize, outside: &mut Vec<bool>, stack: &mut Vec<usize>| {
        let i = y * w + x;
        if !mask.get(x, y) && !outside[i] {
            outside[i] = true;
            stack.push(i);
        }
    };
    for x in 0..w {
        seed(x, 0, &mut outside, &mut stack);
        seed(x, h - 1, &mut outside, &mut stack);
    }
    for y in 0..h {
        seed(0, y, &mut outside, &mut stack);
        seed(w - 1, y, &mut outside, &mut stack);
    }
    while let Some(i) = stack.pop() {
        let (x, y) = ((i % w) as isize, (i / w) as isize);
        for (dx, dy) in NEIGHBORS_4 {
            let (nx, ny) = (x + dx, y + dy);
            if nx >= 0 && ny >= 0 && (nx as usize) < w && (ny as usize) < h {
                seed(nx as usize, ny as usize, &mut outside, &mut stack);
            }
        }
    }
    BinaryMask::from_fn(w, h, |x, y| !outside[y * w + x])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn disk(side: usize, cx: f64, cy: f64, r: f64) -> BinaryMask {
        BinaryMask::from_fn(side, side, |x, y| (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2) <= r * r)
    }

    fn ring(side: usize, c: f64, r_in: f64, r_out: f64) -> BinaryMask {
        BinaryMask::from_fn(side, side, |x, y| {
            let d2 = (x as f64 - c).powi(2) + (y as f64 - c).powi(2);
            d2 <= r_out * r_out && d2 > r_in * r_in
        })
    }

    #[test]
    fn disk_is_round() {
        let regions = connected_components(&disk(64, 32.0, 32.0, 20.0));
        assert_eq!(regions.len(), 1);
        assert!(regions[0].eccentricity < 0.1);
        assert_eq!(regions[0].centroid, (32.0, 32.0));
    }

    #[test]
    fn bar_is_elongated() {
        let bar = BinaryMask::from_fn(30, 5, |x, y| y == 2 && (5..25).contains(&x));
        let regions = connected_components(&bar);
        assert_eq!(regions.len(), 1);
        assert_eq!(regions[0].area, 20);
        assert!(regions[0].eccentricity > 0.99);
    }

    #[test]
    fn eccentricity_matches_closed_form() {
        // 3×9 rectangle: var_x = (9²−1)/12, var_y = (3²−1)/12.
        let rect = BinaryMask::from_fn(20, 10, |x, y| (2..11).contains(&x) && (3..6).contains(&y));
        let r = &connected_components(&rect)[0];
        let expected = (1.0_f64 - (8.0 / 12.0) / (80.0 / 12.0)).sqrt();
        assert!((r.eccentricity - expected).abs() < 1e-12);
    }

    #[test]
    fn diagonal_pixels_join_under_8_connectivity() {
        let m = BinaryMask::from_fn(4, 4, |x, y| x == y);
        assert_eq!(connected_components(&m).len(), 1);
        assert!(connected_components(&BinaryMask::new(5, 5)).is_empty());
    }

    #[test]
    fn thick_bar_thins_to_centerline() {
        let bar = BinaryMask::from_fn(40, 11, |x, y| (5..35).contains(&x) && (3..8).contains(&y));
        let skel = skeletonize(&bar);
        assert!(skel.is_subset_of(&bar));
        let on: Vec<(usize, usize)> =
            (0..11).flat_map(|y| (0..40).map(move |x| (x, y))).filter(|&(x, y)| skel.get(x, y)).collect();
        assert!(on.iter().all(|&(_, y)| y == 5), "{on:?}");
        let xs: Vec<usize> = on.iter().map(|p| p.0).collect();
        let (lo, hi) = (*xs.iter().min().unwrap(), *xs.iter().max().unwrap());
        assert_eq!(xs.len(), hi - lo + 1);
        // Ends recede by the half-width (2), within one pixel.
        assert!(lo.abs_diff(5 + 2) <= 1 && hi.abs_diff(34 - 2) <= 1, "{lo}..{hi}");
    }

    #[test]
    fn thin_line_is_fixed_point() {
        let line = BinaryMask::from_fn(20, 5, |x, y| y == 2 && (2..18).contains(&x));
        assert_eq!(skeletonize(&line), line);
        assert_eq!(skeletonize(&BinaryMask::new(6, 6)), BinaryMask::new(6, 6));
    }

    #[test]
    fn fill_examples() {
        let annulus = ring(64, 32.0, 10.0, 20.0);
        assert_eq!(fill_holes(&annulus), disk(64, 32.0, 32.0, 20.0));
        let solid = disk(64, 32.0, 32.0, 20.0);
        assert_eq!(fill_holes(&solid), solid);
        let mut nested = ring(64, 32.0, 18.0, 22.0);
        let inner = ring(64, 32.0, 6.0, 9.0);
        for y in 0..64 {
            for x in 0..64 {
                if inner.get(x, y) {
                    nested.set(x, y, true);
                }
            }
        }
        assert_eq!(fill_holes(&nested), disk(64, 32.0, 32.0, 22.0));
    }

    #[test]
    fn diagonal_gap_does_not_leak() {
        // A diamond outline closed only diagonally still encloses its interior under 4-connected fill.
        let m = BinaryMask::from_fn(9, 9, |x, y| (x as isize - 4).abs() + (y as isize - 4).abs() == 3);
        let filled = fill_holes(&m);
        assert!(filled.get(4, 4));
    }
}
