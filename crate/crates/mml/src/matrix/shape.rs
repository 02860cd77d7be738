//! Linearization between 4-D activation tensors and their 2-D matrix layout.
//!
//! A batch of N images with C channels of H x W pixels is stored as an
//! N x (C*H*W) row-major matrix: one sample per row, channels outermost
//! within the row. All convolution and pooling code addresses tensor
//! elements through these maps, so the layout is defined exactly once.

use super::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorShape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl TensorShape {
    pub fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        TensorShape { n, c, h, w }
    }

    /// Row width of the matrix form: C*H*W.
    pub fn row_width(&self) -> usize {
        self.c * self.h * self.w
    }

    /// Column index of element (c, h, w) within a sample row. 0-based.
    pub fn nchw_to_flat(&self, c: usize, h: usize, w: usize) -> usize {
        debug_assert!(c < self.c && h < self.h && w < self.w);
        (c * self.h + h) * self.w + w
    }

    /// Inverse of `nchw_to_flat`.
    pub fn flat_to_nchw(&self, flat: usize) -> (usize, usize, usize) {
        debug_assert!(flat < self.row_width());
        let w = flat % self.w;
        let rest = flat / self.w;
        let h = rest % self.h;
        let c = rest / self.h;
        (c, h, w)
    }

    /// True when `m` is the matrix form of a tensor with this shape.
    pub fn matches(&self, m: &Matrix) -> bool {
        m.rows() == self.n && m.cols() == self.row_width()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mnist_batch_layout() {
        let s = TensorShape::new(32, 3, 28, 28);
        assert_eq!(s.row_width(), 2352);
        assert!(s.matches(&Matrix::zeros(32, 2352)));
        assert!(!s.matches(&Matrix::zeros(32, 2351)));
    }

    #[test]
    fn origin_maps_to_zero() {
        let s = TensorShape::new(1, 2, 3, 4);
        assert_eq!(s.nchw_to_flat(0, 0, 0), 0);
        assert_eq!(s.flat_to_nchw(0), (0, 0, 0));
    }

    #[test]
    fn last_element_maps_to_row_end() {
        let s = TensorShape::new(1, 2, 3, 4);
        assert_eq!(s.nchw_to_flat(1, 2, 3), 23);
        assert_eq!(s.flat_to_nchw(23), (1, 2, 3));
    }

    #[test]
    fn maps_are_mutually_inverse_for_all_small_shapes() {
        // Exhaustive over every shape with dims up to 8 and every index.
        for c in 1..=8usize {
            for h in 1..=8usize {
                for w in 1..=8usize {
                    let s = TensorShape::new(1, c, h, w);
                    for flat in 0..s.row_width() {
                        let (ci, hi, wi) = s.flat_to_nchw(flat);
                        assert_eq!(s.nchw_to_flat(ci, hi, wi), flat);
                    }
                    let mut seen = vec![false; s.row_width()];
                    for ci in 0..c {
                        for hi in 0..h {
                            for wi in 0..w {
                                let flat = s.nchw_to_flat(ci, hi, wi);
                                assert!(!seen[flat], "flat index {flat} hit twice");
                                seen[flat] = true;
                            }
                        }
                    }
                    assert!(seen.iter().all(|&b| b));
                }
            }
        }
    }
}
