//! sRGB to HSB (hexcone) and CIELab (D65) conversions.

use image::{GrayImage, Rgb, RgbImage};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hsb {
    /// Degrees in [0, 360); 0 for achromatic pixels.
    pub hue: f64,
    pub saturation: f64,
    pub brightness: f64,
}

pub fn rgb_to_hsb(px: Rgb<u8>) -> Hsb {
    let [r, g, b] = px.0.map(|c| c as f64 / 255.0);
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let saturation = if max > 0.0 { delta / max } else { 0.0 };
    let hue = if delta == 0.0 {
        0.0
    } else if max == r {
        60.0 * ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        60.0 * ((b - r) / delta + 2.0)
    } else {
        60.0 * ((r - g) / delta + 4.0)
    };
    Hsb {
        hue: if hue >= 360.0 { hue - 360.0 } else { hue },
        saturation,
        brightness: max,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lab {
    pub l: f64,
    pub a: f64,
    pub b: f64,
}

const WHITE_D65: [f64; 3] = [0.95047, 1.0, 1.08883];

fn srgb_to_linear(c: u8) -> f64 {
    let v = c as f64 / 255.0;
    if v <= 0.04045 {
        v / 12.92
    } else {
        ((v + 0.055) / 1.055).powf(2.4)
    }
}

fn lab_f(t: f64) -> f64 {
    const DELTA: f64 = 6.0 / 29.0;
    if t > DELTA * DELTA * DELTA {
        t.cbrt()
    } else {
        t / (3.0 * DELTA * DELTA) + 4.0 / 29.0
    }
}

pub fn rgb_to_lab(px: Rgb<u8>) -> Lab {
    let [r, g, b] = px.0.map(srgb_to_linear);
    let x = 0.412453 * r + 0.357580 * g + 0.180423 * b;
    let y = 0.212671 * r + 0.715160 * g + 0.072169 * b;
    let z = 0.019334 * r + 0.119193 * g + 0.950227 * b;
    let fx = lab_f(x / WHITE_D65[0]);
    let fy = lab_f(y / WHITE_D65[1]);
    let fz = lab_f(z / WHITE_D65[2]);
    Lab {
        l: (116.0 * fy - 16.0).max(0.0),
        a: 500.0 * (fx - fy),
        b: 200.0 * (fy - fz),
    }
}

/// ITU-R BT.601 luma.
pub fn to_gray(img: &RgbImage) -> GrayImage {
    let raw = img
        .pixels()
        .map(|p| {
            let [r, g, b] = p.0.map(|c| c as f64);
            (0.299 * r + 0.587 * g + 0.114 * b).round().clamp(0.0, 255.0) as u8
        })
        .collect();
    GrayImage::from_raw(img.width(), img.height(), raw).expect("dimensions match")
}
