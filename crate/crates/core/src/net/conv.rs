//! Convolution as im2col plus a dense multiply, so the kernel reshaped to
//! `d_out × (d_in·h·w)` is literally the matrix whose norm gets constrained.

use crate::linalg::Matrix;

/// Static geometry of one conv layer. Spatial input size is part of the
/// layer so dimensions compose statically across the network.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ConvGeometry {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub padding: usize,
    pub in_h: usize,
    pub in_w: usize,
}

impl ConvGeometry {
    pub fn out_h(&self) -> usize {
        (self.in_h + 2 * self.padding - self.kh) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.in_w + 2 * self.padding - self.kw) / self.stride + 1
    }

    pub fn in_dim(&self) -> usize {
        self.in_ch * self.in_h * self.in_w
    }

    pub fn out_dim(&self) -> usize {
        self.out_ch * self.out_h() * self.out_w()
    }

    pub fn patch_dim(&self) -> usize {
        self.in_ch * self.kh * self.kw
    }

    pub fn is_valid(&self) -> bool {
        self.in_ch > 0
            && self.out_ch > 0
            && self.kh > 0
            && self.kw > 0
            && self.stride > 0
            && self.in_h > 0
            && self.in_w > 0
            && self.in_h + 2 * self.padding >= self.kh
            && self.in_w + 2 * self.padding >= self.kw
    }

    /// Patch matrix: one row per (sample, output position), one column per
    /// (input channel, kernel row, kernel column). Samples are rows of
    /// `input`, each the row-major flattening of `(channel, y, x)`.
    pub fn im2col(&self, input: &Matrix) -> Matrix {
        let batch = input.rows();
        let (oh, ow) = (self.out_h(), self.out_w());
        let mut patches = Matrix::zeros(batch * oh * ow, self.patch_dim());
        for b in 0..batch {
            let sample = input.row(b);
            for oy in 0..oh {
                for ox in 0..ow {
                    let prow = patches.row_mut(b * oh * ow + oy * ow + ox);
                    let mut col = 0;
                    for ic in 0..self.in_ch {
                        let plane = &sample[ic * self.in_h * self.in_w..(ic + 1) * self.in_h * self.in_w];
                        for ky in 0..self.kh {
                            let iy = (oy * self.stride + ky) as isize - self.padding as isize;
                            for kx in 0..self.kw {
                                let ix = (ox * self.stride + kx) as isize - self.padding as isize;
                                if iy >= 0 && (iy as usize) < self.in_h && ix >= 0 && (ix as usize) < self.in_w {
                                    prow[col] = plane[iy as usize * self.in_w + ix as usize];
                                }
                                col += 1;
                            }
                        }
                    }
                }
            }
        }
        patches
    }

    /// Adjoint of [`Self::im2col`]: scatters patch-space values back onto
    /// input-space feature maps.
    pub fn col2im(&self, patches: &Matrix, batch: usize) -> Matrix {
        let (oh, ow) = (self.out_h(), self.out_w());
        assert_eq!(patches.rows(), batch * oh * ow, "col2im: row count mismatch");
        assert_eq!(patches.cols(), self.patch_dim(), "col2im: patch width mismatch");
        let mut input = Matrix::zeros(batch, self.in_dim());
        for b in 0..batch {
            let sample = input.row_mut(b);
            for oy in 0..oh {
                for ox in 0..ow {
                    let prow = patches.row(b * oh * ow + oy * ow + ox);
                    let mut col = 0;
                    for ic in 0..self.in_ch {
                        for ky in 0..self.kh {
                            let iy = (oy * self.stride + ky) as isize - self.padding as isize;
                            for kx in 0..self.kw {
                                let ix = (ox * self.stride + kx) as isize - self.padding as isize;
                                if iy >= 0 && (iy as usize) < self.in_h && ix >= 0 && (ix as usize) < self.in_w {
                                    sample[ic * self.in_h * self.in_w + iy as usize * self.in_w + ix as usize] +=
                                        prow[col];
                                }
                                col += 1;
                            }
                        }
                    }
                }
            }
        }
        input
    }

    /// `(batch × out_ch·oh·ow)` → `(batch·oh·ow × out_ch)`.
    pub fn output_to_patch_layout(&self, z: &Matrix) -> Matrix {
        let batch = z.rows();
        let (oh, ow) = (self.out_h(), self.out_w());
        let spatial = oh * ow;
        let mut out = Matrix::zeros(batch * spatial, self.out_ch);
        for b in 0..batch {
            let zrow = z.row(b);
            for oc in 0..self.out_ch {
                for pos in 0..spatial {
                    out.set(b * spatial + pos, oc, zrow[oc * spatial + pos]);
                }
            }
        }
        out
    }

    /// Inverse of [`Self::output_to_patch_layout`].
    pub fn patch_to_output_layout(&self, zp: &Matrix, batch: usize) -> Matrix {
        let spatial = self.out_h() * self.out_w();
        assert_eq!(zp.rows(), batch * spatial, "patch layout row mismatch");
        let mut out = Matrix::zeros(batch, self.out_dim());
        for b in 0..batch {
            let orow = out.row_mut(b);
            for oc in 0..self.out_ch {
                for pos in 0..spatial {
                    orow[oc * spatial + pos] = zp.get(b * spatial + pos, oc);
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geometry() -> ConvGeometry {
        ConvGeometry { in_ch: 1, out_ch: 1, kh: 2, kw: 2, stride: 1, padding: 0, in_h: 3, in_w: 3 }
    }

    #[test]
    fn im2col_extracts_patches() {
        let g = geometry();
        // Single 3x3 sample 1..9.
        let input = Matrix::new(1, 9, (1..=9).map(f64::from).collect()).unwrap();
        let p = g.im2col(&input);
        assert_eq!((p.rows(), p.cols()), (4, 4));
        assert_eq!(p.row(0), &[1.0, 2.0, 4.0, 5.0]);
        assert_eq!(p.row(3), &[5.0, 6.0, 8.0, 9.0]);
    }

    #[test]
    fn col2im_is_the_adjoint_of_im2col() {
        // ⟨im2col(x), p⟩ = ⟨x, col2im(p)⟩ for random x, p.
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let g = ConvGeometry { in_ch: 2, out_ch: 3, kh: 2, kw: 2, stride: 2, padding: 1, in_h: 4, in_w: 5 };
        let x = Matrix::new(3, g.in_dim(), (0..3 * g.in_dim()).map(|_| rng.random::<f64>() - 0.5).collect()).unwrap();
        let lifted = g.im2col(&x);
        let p = Matrix::new(
            lifted.rows(),
            lifted.cols(),
            (0..lifted.rows() * lifted.cols()).map(|_| rng.random::<f64>() - 0.5).collect(),
        )
        .unwrap();
        let lhs = lifted.frobenius_dot(&p);
        let rhs = x.frobenius_dot(&g.col2im(&p, 3));
        assert!((lhs - rhs).abs() < 1e-12 * lhs.abs().max(1.0));
    }

    #[test]
    fn layout_roundtrip() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let g = ConvGeometry { in_ch: 1, out_ch: 4, kh: 3, kw: 3, stride: 1, padding: 1, in_h: 5, in_w: 5 };
        let z = Matrix::new(2, g.out_dim(), (0..2 * g.out_dim()).map(|_| rng.random::<f64>()).collect()).unwrap();
        let back = g.patch_to_output_layout(&g.output_to_patch_layout(&z), 2);
        assert_eq!(back, z);
    }
}
