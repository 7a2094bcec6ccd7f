//! Second-order (bilinear) pooling of local feature grids.

use crate::error::{Error, Result};

/// `d`-dimensional vectors on a `w × h` grid, stored cell-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    w: usize,
    h: usize,
    d: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(w: usize, h: usize, d: usize, data: Vec<f64>) -> Result<Self> {
        if d == 0 || w == 0 || h == 0 {
            return Err(Error::Size(format!("feature map {w}x{h}x{d} has an empty dimension")));
        }
        if data.len() != w * h * d {
            return Err(Error::Shape {
                expected: w * h * d,
                got: data.len(),
            });
        }
        Ok(Self { w, h, d, data })
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.w, self.h, self.d)
    }

    pub fn cell(&self, x: usize, y: usize) -> &[f64] {
        let start = (y * self.w + x) * self.d;
        &self.data[start..start + self.d]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BilinearDescriptor {
    pub d: usize,
    /// Row-major `d × d` matrix.
    pub values: Vec<f64>,
    /// Set for an all-zero input; normalization is skipped.
    pub degenerate: bool,
}

impl BilinearDescriptor {
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.d + j]
    }
}

/// Σ x xᵀ over all cells, then signed square root, then L2 normalization.
pub fn bilinear_pool(map: &FeatureMap) -> BilinearDescriptor {
    let d = map.d;
    let mut g = vec![0.0; d * d];
    for cell in map.data.chunks_exact(d) {
        for i in 0..d {
            for j in 0..d {
                g[i * d + j] += cell[i] * cell[j];
            }
        }
    }
    for v in &mut g {
        *v = v.signum() * v.abs().sqrt();
    }
    let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    let degenerate = norm == 0.0;
    if !degenerate {
        for v in &mut g {
            *v /= norm;
        }
    }
    BilinearDescriptor {
        d,
        values: g,
        degenerate,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_basis_vector() {
        let map = FeatureMap::new(1, 1, 3, vec![1.0, 0.0, 0.0]).unwrap();
        let b = bilinear_pool(&map);
        assert_eq!(b.values, vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert!(!b.degenerate);
    }

    #[test]
    fn two_cell_hand_computation() {
        let map = FeatureMap::new(2, 1, 2, vec![1.0, 0.0, 1.0, 1.0]).unwrap();
        let b = bilinear_pool(&map);
        // G = [[2,1],[1,1]] → sqrt → [[√2,1],[1,1]]; Frobenius norm √(2+1+1+1) = √5.
        let n = 5f64.sqrt();
        let expected = [2f64.sqrt() / n, 1.0 / n, 1.0 / n, 1.0 / n];
        for (v, e) in b.values.iter().zip(expected) {
            assert!((v - e).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_map_is_degenerate() {
        let b = bilinear_pool(&FeatureMap::new(2, 2, 2, vec![0.0; 8]).unwrap());
        assert!(b.degenerate);
        assert!(b.values.iter().all(|&v| v == 0.0));
        assert!(FeatureMap::new(1, 1, 0, vec![]).is_err());
        assert!(FeatureMap::new(2, 1, 2, vec![0.0; 3]).is_err());
    }
}
