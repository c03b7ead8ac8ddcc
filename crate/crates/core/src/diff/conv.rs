//! im2col-based 2D convolution kernels.
//!
//! Convolution is lowered to matrix multiplication: each input image is
//! unfolded into a column matrix, multiplied against the flattened filter
//! bank, and the backward pass runs the transposed products. All loops are in
//! a fixed order so results are bit-reproducible.

/// Output spatial size for one axis.
pub fn conv_out_dim(input: usize, kernel: usize, stride: usize, padding: usize) -> usize {
    (input + 2 * padding - kernel) / stride + 1
}

/// Unfold one `C x H x W` image into a `(C*kh*kw) x (Ho*Wo)` column matrix.
#[allow(clippy::too_many_arguments)]
pub fn im2col(
    img: &[f64],
    channels: usize,
    height: usize,
    width: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    cols: &mut [f64],
) {
    let out_h = conv_out_dim(height, kernel, stride, padding);
    let out_w = conv_out_dim(width, kernel, stride, padding);
    let patch = out_h * out_w;
    debug_assert_eq!(cols.len(), channels * kernel * kernel * patch);

    for c in 0..channels {
        let img_c = &img[c * height * width..(c + 1) * height * width];
        for ki in 0..kernel {
            for kj in 0..kernel {
                let row = (c * kernel + ki) * kernel + kj;
                let dst = &mut cols[row * patch..(row + 1) * patch];
                for oh in 0..out_h {
                    let ih = (oh * stride + ki) as isize - padding as isize;
                    let base = oh * out_w;
                    if ih < 0 || ih >= height as isize {
                        dst[base..base + out_w].fill(0.0);
                        continue;
                    }
                    let src_row = &img_c[ih as usize * width..(ih as usize + 1) * width];
                    for ow in 0..out_w {
                        let iw = (ow * stride + kj) as isize - padding as isize;
                        dst[base + ow] = if iw < 0 || iw >= width as isize {
                            0.0
                        } else {
                            src_row[iw as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Fold a column-matrix gradient back onto the input image (scatter-add).
#[allow(clippy::too_many_arguments)]
pub fn col2im(
    cols: &[f64],
    channels: usize,
    height: usize,
    width: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    img: &mut [f64],
) {
    let out_h = conv_out_dim(height, kernel, stride, padding);
    let out_w = conv_out_dim(width, kernel, stride, padding);
    let patch = out_h * out_w;

    for c in 0..channels {
        let img_c = &mut img[c * height * width..(c + 1) * height * width];
        for ki in 0..kernel {
            for kj in 0..kernel {
                let row = (c * kernel + ki) * kernel + kj;
                let src = &cols[row * patch..(row + 1) * patch];
                for oh in 0..out_h {
                    let ih = (oh * stride + ki) as isize - padding as isize;
                    if ih < 0 || ih >= height as isize {
                        continue;
                    }
                    let dst_row = &mut img_c[ih as usize * width..(ih as usize + 1) * width];
                    let base = oh * out_w;
                    for ow in 0..out_w {
                        let iw = (ow * stride + kj) as isize - padding as isize;
                        if iw >= 0 && iw < width as isize {
                            dst_row[iw as usize] += src[base + ow];
                        }
                    }
                }
            }
        }
    }
}

/// c = a * b for row-major a[m,k], b[k,n], accumulating into zeroed c.
pub fn matmul_plain(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for j in 0..n {
                crow[j] += av * brow[j];
            }
        }
    }
}

/// c += a * b^T for a[m,n], b[k,n] -> c[m,k]. Rows of both operands are
/// contiguous, so the inner loop is a dot product.
pub fn matmul_a_bt(m: usize, n: usize, k: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    debug_assert_eq!(a.len(), m * n);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * k);
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        let crow = &mut c[i * k..(i + 1) * k];
        for j in 0..k {
            let brow = &b[j * n..(j + 1) * n];
            let mut acc = 0.0;
            for p in 0..n {
                acc += arow[p] * brow[p];
            }
            crow[j] += acc;
        }
    }
}

/// c += a^T * b for a[m,k], b[m,n] -> c[k,n].
pub fn matmul_at_b(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    debug_assert_eq!(c.len(), k * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let brow = &b[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let crow = &mut c[p * n..(p + 1) * n];
            for j in 0..n {
                crow[j] += av * brow[j];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_variants_agree() {
        let (m, k, n) = (3, 4, 5);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64) * 0.3 - 1.0).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64) * 0.2 - 0.7).collect();

        let mut c = vec![0.0; m * n];
        matmul_plain(m, k, n, &a, &b, &mut c);

        // a * b == a * (b^T)^T via matmul_a_bt with b transposed manually
        let mut bt = vec![0.0; n * k];
        for i in 0..k {
            for j in 0..n {
                bt[j * k + i] = b[i * n + j];
            }
        }
        let mut c2 = vec![0.0; m * n];
        matmul_a_bt(m, k, n, &a, &bt, &mut c2);
        for (x, y) in c.iter().zip(&c2) {
            assert!((x - y).abs() < 1e-12);
        }

        // (a^T)^T * b via matmul_at_b with a transposed manually
        let mut at = vec![0.0; k * m];
        for i in 0..m {
            for j in 0..k {
                at[j * m + i] = a[i * k + j];
            }
        }
        let mut c3 = vec![0.0; m * n];
        matmul_at_b(k, m, n, &at, &b, &mut c3);
        for (x, y) in c.iter().zip(&c3) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn im2col_col2im_adjoint() {
        // <im2col(x), y> == <x, col2im(y)> for random x, y: the two maps are
        // transposes of one another.
        let (c, h, w, kern, stride, pad) = (2, 5, 5, 3, 2, 1);
        let oh = conv_out_dim(h, kern, stride, pad);
        let ow = conv_out_dim(w, kern, stride, pad);
        let x: Vec<f64> = (0..c * h * w).map(|i| ((i * 37 % 11) as f64) - 5.0).collect();
        let y: Vec<f64> = (0..c * kern * kern * oh * ow)
            .map(|i| ((i * 13 % 7) as f64) - 3.0)
            .collect();

        let mut cols = vec![0.0; y.len()];
        im2col(&x, c, h, w, kern, stride, pad, &mut cols);
        let lhs: f64 = cols.iter().zip(&y).map(|(a, b)| a * b).sum();

        let mut back = vec![0.0; x.len()];
        col2im(&y, c, h, w, kern, stride, pad, &mut back);
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();

        assert!((lhs - rhs).abs() < 1e-9, "{lhs} vs {rhs}");
    }
}
