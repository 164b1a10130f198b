//! Cross-correlation via im2col plus a single-threaded GEMM.

use crate::error::{Result, TensorError};

/// Row-major GEMM: C(m x n) = alpha * A(m x k) * B(k x n) + beta * C.
/// Strides are in elements; row stride = width, col stride = 1 for row-major.
#[allow(clippy::too_many_arguments)]
pub(crate) fn sgemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f32,
    a: &[f32],
    rsa: isize,
    csa: isize,
    b: &[f32],
    rsb: isize,
    csb: isize,
    beta: f32,
    c: &mut [f32],
) {
    debug_assert!(c.len() >= m * n);
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvDims {
    pub n: usize,
    pub ci: usize,
    pub h: usize,
    pub w: usize,
    pub co: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub padding: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvDims {
    pub fn infer(
        input: [usize; 4],
        weight: [usize; 4],
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        let [n, ci, h, w] = input;
        let [co, wci, kh, kw] = weight;
        if wci != ci {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                detail: format!("input has {ci} channels but weight expects {wci}"),
            });
        }
        if stride == 0 {
            return Err(TensorError::InvalidArgument("conv2d stride must be >= 1".into()));
        }
        if h + 2 * padding < kh || w + 2 * padding < kw {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                detail: format!("kernel {kh}x{kw} larger than padded input {h}x{w} (pad {padding})"),
            });
        }
        let oh = (h + 2 * padding - kh) / stride + 1;
        let ow = (w + 2 * padding - kw) / stride + 1;
        Ok(ConvDims { n, ci, h, w, co, kh, kw, stride, padding, oh, ow })
    }

    pub fn col_rows(&self) -> usize {
        self.ci * self.kh * self.kw
    }

    pub fn col_cols(&self) -> usize {
        self.oh * self.ow
    }
}

/// Expand one image (ci x h x w) into the (ci*kh*kw) x (oh*ow) patch matrix.
pub(crate) fn im2col(x: &[f32], d: &ConvDims, cols: &mut [f32]) {
    let ConvDims { ci, h, w, kh, kw, stride, padding, oh, ow, .. } = *d;
    debug_assert_eq!(x.len(), ci * h * w);
    debug_assert_eq!(cols.len(), d.col_rows() * d.col_cols());
    let ohw = oh * ow;
    for c in 0..ci {
        let plane = &x[c * h * w..(c + 1) * h * w];
        for ky in 0..kh {
            for kx in 0..kw {
                let row = ((c * kh + ky) * kw + kx) * ohw;
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - padding as isize;
                    let dst = &mut cols[row + oy * ow..row + (oy + 1) * ow];
                    if iy < 0 || iy >= h as isize {
                        dst.fill(0.0);
                        continue;
                    }
                    let src_row = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, slot) in dst.iter_mut().enumerate() {
                        let ix = (ox * stride + kx) as isize - padding as isize;
                        *slot = if ix < 0 || ix >= w as isize { 0.0 } else { src_row[ix as usize] };
                    }
                }
            }
        }
    }
}

/// Scatter-add the patch-matrix gradient back onto the input image.
pub(crate) fn col2im_add(dcols: &[f32], d: &ConvDims, dx: &mut [f32]) {
    let ConvDims { ci, h, w, kh, kw, stride, padding, oh, ow, .. } = *d;
    debug_assert_eq!(dx.len(), ci * h * w);
    let ohw = oh * ow;
    for c in 0..ci {
        let plane_off = c * h * w;
        for ky in 0..kh {
            for kx in 0..kw {
                let row = ((c * kh + ky) * kw + kx) * ohw;
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - padding as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let base = plane_off + iy as usize * w;
                    for ox in 0..ow {
                        let ix = (ox * stride + kx) as isize - padding as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        dx[base + ix as usize] += dcols[row + oy * ow + ox];
                    }
                }
            }
        }
    }
}

/// Forward cross-correlation. `out` must hold n*co*oh*ow elements.
pub(crate) fn conv2d_forward(
    x: &[f32],
    weight: &[f32],
    bias: Option<&[f32]>,
    d: &ConvDims,
    out: &mut [f32],
) {
    let ohw = d.col_cols();
    let in_stride = d.ci * d.h * d.w;
    let out_stride = d.co * ohw;
    let mut cols = vec![0.0f32; d.col_rows() * ohw];
    for img in 0..d.n {
        im2col(&x[img * in_stride..(img + 1) * in_stride], d, &mut cols);
        let out_n = &mut out[img * out_stride..(img + 1) * out_stride];
        sgemm(
            d.co,
            d.col_rows(),
            ohw,
            1.0,
            weight,
            d.col_rows() as isize,
            1,
            &cols,
            ohw as isize,
            1,
            0.0,
            out_n,
        );
        if let Some(bias) = bias {
            for co in 0..d.co {
                let b = bias[co];
                for v in &mut out_n[co * ohw..(co + 1) * ohw] {
                    *v += b;
                }
            }
        }
    }
}

pub(crate) struct ConvGrads {
    pub dx: Option<Vec<f32>>,
    pub dw: Option<Vec<f32>>,
    pub db: Option<Vec<f32>>,
}

/// Backward pass; each gradient is computed only when requested.
pub(crate) fn conv2d_backward(
    x: &[f32],
    weight: &[f32],
    dy: &[f32],
    d: &ConvDims,
    want_dx: bool,
    want_dw: bool,
    want_db: bool,
) -> ConvGrads {
    let ohw = d.col_cols();
    let crows = d.col_rows();
    let in_stride = d.ci * d.h * d.w;
    let out_stride = d.co * ohw;

    let mut dx = if want_dx { Some(vec![0.0f32; d.n * in_stride]) } else { None };
    let mut dw = if want_dw { Some(vec![0.0f32; d.co * crows]) } else { None };
    let mut db = if want_db { Some(vec![0.0f32; d.co]) } else { None };

    let mut cols = vec![0.0f32; crows * ohw];
    let mut dcols = vec![0.0f32; crows * ohw];
    for img in 0..d.n {
        let dy_n = &dy[img * out_stride..(img + 1) * out_stride];
        if want_dw {
            im2col(&x[img * in_stride..(img + 1) * in_stride], d, &mut cols);
            // dW += dY_n (co x ohw) * cols^T (ohw x crows)
            sgemm(
                d.co,
                ohw,
                crows,
                1.0,
                dy_n,
                ohw as isize,
                1,
                &cols,
                1,
                ohw as isize,
                1.0,
                dw.as_mut().unwrap(),
            );
        }
        if want_dx {
            // dCols = W^T (crows x co) * dY_n (co x ohw)
            sgemm(
                crows,
                d.co,
                ohw,
                1.0,
                weight,
                1,
                crows as isize,
                dy_n,
                ohw as isize,
                1,
                0.0,
                &mut dcols,
            );
            col2im_add(
                &dcols,
                d,
                &mut dx.as_mut().unwrap()[img * in_stride..(img + 1) * in_stride],
            );
        }
        if let Some(db) = db.as_mut() {
            for co in 0..d.co {
                db[co] += dy_n[co * ohw..(co + 1) * ohw].iter().sum::<f32>();
            }
        }
    }
    ConvGrads { dx, dw, db }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct six-loop cross-correlation used as the reference.
    pub(crate) fn conv2d_naive(
        x: &[f32],
        weight: &[f32],
        bias: Option<&[f32]>,
        d: &ConvDims,
    ) -> Vec<f32> {
        let mut out = vec![0.0f32; d.n * d.co * d.oh * d.ow];
        for img in 0..d.n {
            for co in 0..d.co {
                for oy in 0..d.oh {
                    for ox in 0..d.ow {
                        let mut acc = bias.map(|b| b[co]).unwrap_or(0.0);
                        for ci in 0..d.ci {
                            for ky in 0..d.kh {
                                for kx in 0..d.kw {
                                    let iy = (oy * d.stride + ky) as isize - d.padding as isize;
                                    let ix = (ox * d.stride + kx) as isize - d.padding as isize;
                                    if iy < 0 || iy >= d.h as isize || ix < 0 || ix >= d.w as isize
                                    {
                                        continue;
                                    }
                                    let xv = x[((img * d.ci + ci) * d.h + iy as usize) * d.w
                                        + ix as usize];
                                    let wv = weight
                                        [((co * d.ci + ci) * d.kh + ky) * d.kw + kx];
                                    acc += xv * wv;
                                }
                            }
                        }
                        out[((img * d.co + co) * d.oh + oy) * d.ow + ox] = acc;
                    }
                }
            }
        }
        out
    }

    fn assert_close(a: &[f32], b: &[f32], tol: f32) {
        assert_eq!(a.len(), b.len());
        for (i, (x, y)) in a.iter().zip(b.iter()).enumerate() {
            assert!((x - y).abs() <= tol, "index {i}: {x} vs {y}");
        }
    }

    #[test]
    fn ones_kernel_sums_the_window() {
        let d = ConvDims::infer([1, 1, 3, 3], [1, 1, 3, 3], 1, 0).unwrap();
        let x = vec![1.0; 9];
        let w = vec![1.0; 9];
        let mut out = vec![0.0; 1];
        conv2d_forward(&x, &w, None, &d, &mut out);
        assert_eq!(out[0], 9.0);
    }

    #[test]
    fn identity_kernel_with_same_padding_is_identity() {
        let d = ConvDims::infer([1, 1, 4, 4], [1, 1, 3, 3], 1, 1).unwrap();
        let x: Vec<f32> = (0..16).map(|i| i as f32).collect();
        let mut w = vec![0.0; 9];
        w[4] = 1.0; // center tap
        let mut out = vec![0.0; 16];
        conv2d_forward(&x, &w, None, &d, &mut out);
        assert_eq!(out, x);
    }

    #[test]
    fn gemm_path_matches_naive_loops() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for &(n, ci, h, w, co, k, stride, pad) in &[
            (1usize, 2usize, 5usize, 5usize, 3usize, 3usize, 1usize, 0usize),
            (2, 3, 6, 4, 2, 3, 1, 1),
            (1, 1, 7, 7, 4, 3, 2, 1),
            (2, 2, 5, 5, 2, 1, 1, 0),
            (1, 4, 8, 8, 8, 3, 2, 0),
        ] {
            let d = ConvDims::infer([n, ci, h, w], [co, ci, k, k], stride, pad).unwrap();
            let x: Vec<f32> = (0..n * ci * h * w).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
            let wt: Vec<f32> = (0..co * ci * k * k).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
            let b: Vec<f32> = (0..co).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
            let mut fast = vec![0.0; n * co * d.oh * d.ow];
            conv2d_forward(&x, &wt, Some(&b), &d, &mut fast);
            let slow = conv2d_naive(&x, &wt, Some(&b), &d);
            assert_close(&fast, &slow, 1e-5);
        }
    }

    #[test]
    fn backward_matches_naive_accumulation() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let d = ConvDims::infer([2, 2, 5, 5], [3, 2, 3, 3], 1, 1).unwrap();
        let x: Vec<f32> = (0..2 * 2 * 5 * 5).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
        let w: Vec<f32> = (0..3 * 2 * 9).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
        let dy: Vec<f32> = (0..2 * 3 * 5 * 5).map(|_| rng.gen_range(-1.0f32..1.0)).collect();

        let got = conv2d_backward(&x, &w, &dy, &d, true, true, true);

        // independent scatter loops
        let mut dx = vec![0.0f32; x.len()];
        let mut dw = vec![0.0f32; w.len()];
        let mut db = vec![0.0f32; 3];
        for img in 0..d.n {
            for co in 0..d.co {
                for oy in 0..d.oh {
                    for ox in 0..d.ow {
                        let g = dy[((img * d.co + co) * d.oh + oy) * d.ow + ox];
                        db[co] += g;
                        for ci in 0..d.ci {
                            for ky in 0..d.kh {
                                for kx in 0..d.kw {
                                    let iy = (oy * d.stride + ky) as isize - d.padding as isize;
                                    let ix = (ox * d.stride + kx) as isize - d.padding as isize;
                                    if iy < 0 || iy >= d.h as isize || ix < 0 || ix >= d.w as isize
                                    {
                                        continue;
                                    }
                                    let xi = ((img * d.ci + ci) * d.h + iy as usize) * d.w
                                        + ix as usize;
                                    let wi = ((co * d.ci + ci) * d.kh + ky) * d.kw + kx;
                                    dx[xi] += g * w[wi];
                                    dw[wi] += g * x[xi];
                                }
                            }
                        }
                    }
                }
            }
        }
        assert_close(got.dx.as_ref().unwrap(), &dx, 1e-4);
        assert_close(got.dw.as_ref().unwrap(), &dw, 1e-4);
        assert_close(got.db.as_ref().unwrap(), &db, 1e-4);
    }
}
