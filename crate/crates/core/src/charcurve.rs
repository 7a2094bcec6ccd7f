//! Percentage-saturation characteristics-curve scorer.
//!
//! Each ROI yields the fraction of DAB-hued pixels whose saturation lies in
//! `[s_lo, 1]` for 20 evenly spaced `s_lo` in `[0.10, 0.50]`. A cubic is fitted
//! to the curve; hard rules decide 3+ and 0, the remaining cases go to the
//! nearest class centroid.

use std::fmt::Write as _;
use std::path::Path;

use image::RgbImage;
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::imgproc::{rgb_to_hsb, Integral};
use crate::types::Her2Score;

pub const CURVE_SAMPLES: usize = 20;
pub const S_LO_START: f64 = 0.10;
pub const S_LO_END: f64 = 0.50;
/// Curves whose minimum reaches this level are 3+ regardless of centroids.
pub const THREE_PLUS_FLOOR: f64 = 0.30;
/// Curves starting at or below this level are 0 regardless of centroids.
pub const ZERO_CEILING: f64 = 0.02;

pub fn s_lo_values() -> [f64; CURVE_SAMPLES] {
    std::array::from_fn(|i| S_LO_START + (S_LO_END - S_LO_START) * i as f64 / (CURVE_SAMPLES - 1) as f64)
}

/// Inclusive hue interval in degrees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HueWindow {
    pub lo: f64,
    pub hi: f64,
}

impl Default for HueWindow {
    fn default() -> Self {
        Self { lo: 10.0, hi: 70.0 }
    }
}

impl HueWindow {
    pub fn contains(&self, hue: f64) -> bool {
        if self.lo <= self.hi {
            hue >= self.lo && hue <= self.hi
        } else {
            hue >= self.lo || hue <= self.hi
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BackgroundRule {
    pub max_saturation: f64,
    pub min_brightness: f64,
}

impl Default for BackgroundRule {
    fn default() -> Self {
        Self {
            max_saturation: 0.08,
            min_brightness: 0.85,
        }
    }
}

impl BackgroundRule {
    pub fn is_background(&self, px: image::Rgb<u8>) -> bool {
        let hsb = rgb_to_hsb(px);
        hsb.saturation < self.max_saturation && hsb.brightness > self.min_brightness
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoiSpec {
    pub x: u32,
    pub y: u32,
    pub width: u32,
    pub height: u32,
    pub background_fraction: f64,
}

impl RoiSpec {
    fn overlaps(&self, o: &RoiSpec) -> bool {
        self.x < o.x + o.width && o.x < self.x + self.width && self.y < o.y + o.height && o.y < self.y + self.height
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoiParams {
    pub width: u32,
    pub height: u32,
    pub count: usize,
    pub max_background: f64,
    pub background: BackgroundRule,
}

impl Default for RoiParams {
    /// 1800×1200 at 20× equivalent.
    fn default() -> Self {
        Self {
            width: 1800,
            height: 1200,
            count: 5,
            max_background: 0.30,
            background: BackgroundRule::default(),
        }
    }
}

impl RoiParams {
    /// ROI geometry rescaled for inputs at `scale` × the 20× working resolution.
    pub fn at_scale(scale: f64) -> Self {
        let base = Self::default();
        Self {
            width: ((base.width as f64 * scale).round() as u32).max(1),
            height: ((base.height as f64 * scale).round() as u32).max(1),
            ..base
        }
    }
}

/// Candidate ROIs on a grid with a third-of-ROI step, ranked by background fraction.
fn candidate_rois(img: &RgbImage, params: &RoiParams) -> Result<Vec<RoiSpec>> {
    let (w, h) = (img.width(), img.height());
    if w < params.width || h < params.height {
        return Err(Error::Size(format!(
            "image {w}x{h} is smaller than one {}x{} ROI",
            params.width, params.height
        )));
    }
    let bg: Vec<bool> = img.pixels().map(|&p| params.background.is_background(p)).collect();
    let integral = Integral::new(w as usize, h as usize, |x, y| bg[y * w as usize + x] as u8 as f64);
    let step_x = (params.width / 3).max(1);
    let step_y = (params.height / 3).max(1);
    let area = (params.width * params.height) as f64;
    let mut out = Vec::new();
    let mut y = 0;
    while y + params.height <= h {
        let mut x = 0;
        while x + params.width <= w {
            let count = integral.sum(
                x as usize,
                y as usize,
                (x + params.width) as usize,
                (y + params.height) as usize,
            );
            let background_fraction = count / area;
            if background_fraction <= params.max_background {
                out.push(RoiSpec {
                    x,
                    y,
                    width: params.width,
                    height: params.height,
                    background_fraction,
                });
            }
            x += step_x;
        }
        y += step_y;
    }
    Ok(out)
}

fn rank_and_pick<T: Copy>(mut candidates: Vec<(T, RoiSpec)>, count: usize, same_image: impl Fn(&T, &T) -> bool) -> Vec<(T, RoiSpec)> {
    candidates.sort_by(|a, b| a.1.background_fraction.total_cmp(&b.1.background_fraction));
    let mut picked: Vec<(T, RoiSpec)> = Vec::new();
    for c in candidates {
        if picked.len() == count {
            break;
        }
        if picked.iter().all(|p| !same_image(&p.0, &c.0) || !p.1.overlaps(&c.1)) {
            picked.push(c);
        }
    }
    picked
}

pub fn select_rois(img: &RgbImage, params: &RoiParams) -> Result<Vec<RoiSpec>> {
    let candidates = candidate_rois(img, params)?.into_iter().map(|r| ((), r)).collect();
    let picked = rank_and_pick(candidates, params.count, |_, _| true);
    if picked.is_empty() {
        return Err(Error::Coverage(format!(
            "no ROI with background fraction <= {}",
            params.max_background
        )));
    }
    Ok(picked.into_iter().map(|p| p.1).collect())
}

/// ROIs pooled across the tiles of one slide; each result carries its tile index.
pub fn select_rois_multi(tiles: &[RgbImage], params: &RoiParams) -> Result<Vec<(usize, RoiSpec)>> {
    let mut candidates = Vec::new();
    for (i, t) in tiles.iter().enumerate() {
        if t.width() < params.width || t.height() < params.height {
            continue;
        }
        candidates.extend(candidate_rois(t, params)?.into_iter().map(|r| (i, r)));
    }
    let picked = rank_and_pick(candidates, params.count, |a, b| a == b);
    if picked.is_empty() {
        return Err(Error::Coverage(format!(
            "no ROI with background fraction <= {} in {} tile(s)",
            params.max_background,
            tiles.len()
        )));
    }
    Ok(picked)
}

/// Saturations of the in-window pixels of a region, sorted ascending, plus the region's pixel count.
fn window_saturations(img: &RgbImage, roi: &RoiSpec, window: HueWindow) -> (Vec<f64>, usize) {
    let mut sats = Vec::new();
    for y in roi.y..roi.y + roi.height {
        for x in roi.x..roi.x + roi.width {
            let hsb = rgb_to_hsb(*img.get_pixel(x, y));
            if window.contains(hsb.hue) {
                sats.push(hsb.saturation);
            }
        }
    }
    sats.sort_by(f64::total_cmp);
    (sats, (roi.width * roi.height) as usize)
}

fn count_at_least(sorted: &[f64], s_lo: f64) -> usize {
    sorted.len() - sorted.partition_point(|&s| s < s_lo)
}

pub fn full_roi(img: &RgbImage) -> RoiSpec {
    RoiSpec {
        x: 0,
        y: 0,
        width: img.width(),
        height: img.height(),
        background_fraction: 0.0,
    }
}

/// Fraction of ROI pixels with hue in `window` and saturation in `[s_lo, 1]`.
pub fn stained_fraction(img: &RgbImage, roi: &RoiSpec, window: HueWindow, s_lo: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&s_lo) {
        return Err(Error::Range {
            field: "s_lo",
            value: s_lo,
            expected: "[0, 1]",
        });
    }
    let (sats, n) = window_saturations(img, roi, window);
    Ok(count_at_least(&sats, s_lo) as f64 / n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CharCurve {
    /// (s_lo, stained fraction) pairs.
    pub samples: [(f64, f64); CURVE_SAMPLES],
}

impl CharCurve {
    pub fn from_values(values: [f64; CURVE_SAMPLES]) -> Self {
        let s = s_lo_values();
        Self {
            samples: std::array::from_fn(|i| (s[i], values[i])),
        }
    }

    pub fn values(&self) -> [f64; CURVE_SAMPLES] {
        self.samples.map(|p| p.1)
    }

    pub fn first(&self) -> f64 {
        self.samples[0].1
    }

    pub fn min(&self) -> f64 {
        self.samples.iter().map(|p| p.1).fold(f64::INFINITY, f64::min)
    }
}

pub fn characteristics_curve(img: &RgbImage, roi: &RoiSpec, window: HueWindow) -> CharCurve {
    let (sats, n) = window_saturations(img, roi, window);
    CharCurve::from_values(s_lo_values().map(|s| count_at_least(&sats, s) as f64 / n as f64))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CubicFit {
    /// a0 + a1·s + a2·s² + a3·s³.
    pub coefficients: [f64; 4],
    /// Root-mean-square residual over the samples.
    pub residual: f64,
}

impl CubicFit {
    pub fn eval(&self, s: f64) -> f64 {
        let [a0, a1, a2, a3] = self.coefficients;
        a0 + s * (a1 + s * (a2 + s * a3))
    }
}

pub fn fit_cubic(curve: &CharCurve) -> CubicFit {
    let n = CURVE_SAMPLES;
    let a = DMatrix::from_fn(n, 4, |i, j| curve.samples[i].0.powi(j as i32));
    let b = DVector::from_iterator(n, curve.samples.iter().map(|p| p.1));
    let coef = a.clone().svd(true, true).solve(&b, 1e-14).expect("SVD computed with U and V");
    let coefficients = [coef[0], coef[1], coef[2], coef[3]];
    let fit = CubicFit {
        coefficients,
        residual: 0.0,
    };
    let ss: f64 = curve.samples.iter().map(|&(s, v)| (fit.eval(s) - v).powi(2)).sum();
    CubicFit {
        residual: (ss / n as f64).sqrt(),
        ..fit
    }
}

/// Four class centroids in cubic-coefficient space plus the hue window they were calibrated with.
#[derive(Debug, Clone, PartialEq)]
pub struct CentroidModel {
    pub hue_window: HueWindow,
    pub centroids: [[f64; 4]; 4],
}

impl Default for CentroidModel {
    /// Calibrated on the synthetic generator (50 cases per class, seed 2024, 512² tiles, 180×120 ROIs).
    fn default() -> Self {
        Self {
            hue_window: HueWindow::default(),
            centroids: DEFAULT_CENTROIDS,
        }
    }
}

pub const DEFAULT_CENTROIDS: [[f64; 4]; 4] = [
    [0.0, 0.0, 0.0, 0.0],
    [0.15529279287041414, -0.7572291091107304, 0.7435201662857132, 0.3537365463610537],
    [0.2262611018704591, -1.5734584920332162, 7.25447956461719, -10.178610498306245],
    [0.15172388888888919, -3.169350415790917e-15, 1.1469603912461768e-14, -1.282932267365755e-14],
];

impl CentroidModel {
    /// RMS gap between two cubics over the curve's sampling points.
    pub fn distance(a: &[f64; 4], b: &[f64; 4]) -> f64 {
        let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2], a[3] - b[3]];
        let ss: f64 = s_lo_values()
            .iter()
            .map(|&s| (d[0] + s * (d[1] + s * (d[2] + s * d[3]))).powi(2))
            .sum();
        (ss / CURVE_SAMPLES as f64).sqrt()
    }

    /// Per-class mean coefficients.
    pub fn calibrate(fits: &[(Her2Score, CubicFit)], hue_window: HueWindow) -> Result<Self> {
        let mut sums = [[0.0; 4]; 4];
        let mut counts = [0usize; 4];
        for (score, fit) in fits {
            let k = score.index();
            counts[k] += 1;
            for j in 0..4 {
                sums[k][j] += fit.coefficients[j];
            }
        }
        if let Some(k) = counts.iter().position(|&c| c == 0) {
            return Err(Error::Coverage(format!(
                "no calibration curves for class {}",
                Her2Score::from_index(k).expect("index < 4")
            )));
        }
        Ok(Self {
            hue_window,
            centroids: std::array::from_fn(|k| sums[k].map(|v| v / counts[k] as f64)),
        })
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("# her2kit charcurve centroids v1\n");
        let _ = writeln!(out, "hue_window {} {}", self.hue_window.lo, self.hue_window.hi);
        for (k, c) in self.centroids.iter().enumerate() {
            let _ = writeln!(
                out,
                "{} {} {} {} {}",
                Her2Score::from_index(k).expect("index < 4").label(),
                c[0],
                c[1],
                c[2],
                c[3]
            );
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut hue_window = None;
        let mut rows: [Option<[f64; 4]>; 4] = [None; 4];
        for (i, line) in text.lines().enumerate() {
            let line_no = i as u64 + 1;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            let num = |s: &str, field: &str| -> Result<f64> {
                s.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::format(line_no, field, format!("not a number: {s}")))
            };
            if f[0] == "hue_window" {
                if f.len() != 3 {
                    return Err(Error::format(line_no, "hue_window", "expected two values"));
                }
                hue_window = Some(HueWindow {
                    lo: num(f[1], "hue_window")?,
                    hi: num(f[2], "hue_window")?,
                });
                continue;
            }
            let score: Her2Score = f[0].parse().map_err(|e: String| Error::format(line_no, "class", e))?;
            if f.len() != 5 {
                return Err(Error::format(line_no, "coefficients", "expected four coefficients"));
            }
            let mut c = [0.0; 4];
            for j in 0..4 {
                c[j] = num(f[j + 1], "coefficients")?;
            }
            rows[score.index()] = Some(c);
        }
        let hue_window = hue_window.ok_or_else(|| Error::Model("missing hue_window line".into()))?;
        let mut centroids = [[0.0; 4]; 4];
        for k in 0..4 {
            centroids[k] = rows[k].ok_or_else(|| Error::Model(format!("missing centroid for class {k}")))?;
        }
        Ok(Self { hue_window, centroids })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }
}

/// Rule hits return confidence 1; otherwise (d2 − d1)/(d2 + d1) over the two nearest centroids.
pub fn classify_curve(curve: &CharCurve, fit: &CubicFit, model: &CentroidModel) -> (Her2Score, f64) {
    if curve.min() >= THREE_PLUS_FLOOR {
        return (Her2Score::Three, 1.0);
    }
    if curve.first() <= ZERO_CEILING {
        return (Her2Score::Zero, 1.0);
    }
    let mut d: Vec<(f64, usize)> = model
        .centroids
        .iter()
        .enumerate()
        .map(|(k, c)| (CentroidModel::distance(&fit.coefficients, c), k))
        .collect();
    d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let (d1, d2) = (d[0].0, d[1].0);
    let confidence = if d1 + d2 > 0.0 { (d2 - d1) / (d2 + d1) } else { 0.0 };
    (Her2Score::from_index(d[0].1).expect("index < 4"), confidence)
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[derive(Default)]
pub struct CharcurveConfig {
    pub roi: RoiParams,
}


#[derive(Debug, Clone, PartialEq)]
pub struct RoiResult {
    pub tile: usize,
    pub roi: RoiSpec,
    pub curve: CharCurve,
    pub fit: CubicFit,
    pub score: Her2Score,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlideScore {
    pub score: Her2Score,
    pub confidence: f64,
    pub pcms: f64,
    pub rois: Vec<RoiResult>,
}

/// Majority vote; ties go to the higher score.
pub fn vote(scores: &[Her2Score]) -> Option<Her2Score> {
    let mut counts = [0usize; 4];
    for s in scores {
        counts[s.index()] += 1;
    }
    let best = *counts.iter().max()?;
    if best == 0 {
        return None;
    }
    (0..4).rev().find(|&k| counts[k] == best).and_then(Her2Score::from_index)
}

/// Order-independent sum.
fn sorted_sum(values: impl Iterator<Item = f64>) -> f64 {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(f64::total_cmp);
    v.iter().sum()
}

pub fn aggregate_rois(rois: Vec<RoiResult>) -> Result<SlideScore> {
    if rois.is_empty() {
        return Err(Error::Coverage("no accepted ROI".into()));
    }
    let scores: Vec<Her2Score> = rois.iter().map(|r| r.score).collect();
    let n = rois.len() as f64;
    Ok(SlideScore {
        score: vote(&scores).expect("non-empty"),
        confidence: sorted_sum(rois.iter().map(|r| r.confidence)) / n,
        pcms: (100.0 * sorted_sum(rois.iter().map(|r| r.curve.first())) / n).clamp(0.0, 100.0),
        rois,
    })
}

pub fn score_slide_charcurve(tiles: &[RgbImage], config: &CharcurveConfig, model: &CentroidModel) -> Result<SlideScore> {
    let picked = select_rois_multi(tiles, &config.roi)?;
    let rois = picked
        .into_iter()
        .map(|(tile, roi)| {
            let curve = characteristics_curve(&tiles[tile], &roi, model.hue_window);
            let fit = fit_cubic(&curve);
            let (score, confidence) = classify_curve(&curve, &fit, model);
            RoiResult {
                tile,
                roi,
                curve,
                fit,
                score,
                confidence,
            }
        })
        .collect();
    aggregate_rois(rois)
}

/// Fits curves on a generated balanced set and returns the per-class mean coefficients.
pub fn calibrate_on_synthetic(per_class: usize, seed: u64, synth: &crate::synth::SynthConfig, roi: &RoiParams, hue_window: HueWindow) -> Result<CentroidModel> {
    use rayon::prelude::*;
    let plan = crate::synth::dataset_plan(per_class, seed);
    let fits: Vec<Vec<(Her2Score, CubicFit)>> = plan
        .into_par_iter()
        .map(|(id, score, case_seed)| -> Result<Vec<(Her2Score, CubicFit)>> {
            let case = crate::synth::generate_case(id, score, synth, case_seed)?;
            let tiles: Vec<RgbImage> = case.tiles.into_iter().map(|t| t.image).collect();
            let picked = select_rois_multi(&tiles, roi)?;
            Ok(picked
                .into_iter()
                .map(|(t, r)| (score, fit_cubic(&characteristics_curve(&tiles[t], &r, hue_window))))
                .collect())
        })
        .collect::<Result<_>>()?;
    CentroidModel::calibrate(&fits.concat(), hue_window)
}
