//! Patch unrolling (im2col) and max-pooling on `(examples·positions) × channels`
//! activation matrices.
//!
//! A patch row for output position `(oy, ox)` lists the kernel window in
//! `(ky, kx, channel)` order, so the layer weight is an `N × n_out` matrix
//! with `N = k·k·n_in` and the convolution is a single product `P W`.

use super::arch::LayerGeometry;

/// Unrolls `m` examples of shape `in_h × in_w × in_channels` into a
/// `(m·out_h·out_w) × N` patch matrix. Padding reads as zero.
pub(crate) fn im2col(x: &[f64], m: usize, g: &LayerGeometry) -> Vec<f64> {
    let (c, h, w, k, pad) = (g.in_channels, g.in_h, g.in_w, g.kernel, g.padding);
    let n = g.patch_len;
    let rows = m * g.positions();
    let mut out = vec![0.0; rows * n];
    for e in 0..m {
        let img = &x[e * h * w * c..(e + 1) * h * w * c];
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let row = (e * g.positions() + oy * g.out_w + ox) * n;
                for ky in 0..k {
                    let iy = (oy + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let ix = (ox + kx) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let src = (iy as usize * w + ix as usize) * c;
                        let dst = row + (ky * k + kx) * c;
                        out[dst..dst + c].copy_from_slice(&img[src..src + c]);
                    }
                }
            }
        }
    }
    out
}

/// Adjoint of [`im2col`]: accumulates patch gradients back onto the input.
pub(crate) fn col2im(dp: &[f64], m: usize, g: &LayerGeometry) -> Vec<f64> {
    let (c, h, w, k, pad) = (g.in_channels, g.in_h, g.in_w, g.kernel, g.padding);
    let n = g.patch_len;
    let mut dx = vec![0.0; m * h * w * c];
    for e in 0..m {
        let img = &mut dx[e * h * w * c..(e + 1) * h * w * c];
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let row = (e * g.positions() + oy * g.out_w + ox) * n;
                for ky in 0..k {
                    let iy = (oy + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let ix = (ox + kx) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let dst = (iy as usize * w + ix as usize) * c;
                        let src = row + (ky * k + kx) * c;
                        for ch in 0..c {
                            img[dst + ch] += dp[src + ch];
                        }
                    }
                }
            }
        }
    }
    dx
}

/// Non-overlapping max-pool. Returns the pooled values and, for each
/// pooled element, the flat index of the winning input element. Ties go
/// to the first position in row-major window order.
pub(crate) fn max_pool(r: &[f64], m: usize, g: &LayerGeometry) -> (Vec<f64>, Vec<usize>) {
    let (c, p) = (g.n_out, g.pool);
    let (ph, pw) = (g.pooled_h(), g.pooled_w());
    let mut out = vec![0.0; m * ph * pw * c];
    let mut arg = vec![0usize; out.len()];
    for e in 0..m {
        for py in 0..ph {
            for px in 0..pw {
                let orow = ((e * ph + py) * pw + px) * c;
                for ch in 0..c {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_idx = 0;
                    for dy in 0..p {
                        for dx in 0..p {
                            let y = py * p + dy;
                            let x = px * p + dx;
                            let idx = ((e * g.out_h + y) * g.out_w + x) * c + ch;
                            if r[idx] > best {
                                best = r[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    out[orow + ch] = best;
                    arg[orow + ch] = best_idx;
                }
            }
        }
    }
    (out, arg)
}

pub(crate) fn max_pool_backward(d_out: &[f64], arg: &[usize], input_len: usize) -> Vec<f64> {
    let mut d = vec![0.0; input_len];
    for (g, &i) in d_out.iter().zip(arg) {
        d[i] += g;
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::arch::LayerKind;

    fn geom(c: usize, h: usize, w: usize, k: usize, pad: usize, pool: usize, n_out: usize) -> LayerGeometry {
        LayerGeometry {
            kind: LayerKind::Conv,
            in_channels: c,
            in_h: h,
            in_w: w,
            n_out,
            kernel: k,
            padding: pad,
            out_h: h + 2 * pad - k + 1,
            out_w: w + 2 * pad - k + 1,
            pool,
            patch_len: k * k * c,
        }
    }

    /// Direct nested-loop convolution for comparison.
    fn naive_conv(x: &[f64], wts: &[f64], g: &LayerGeometry) -> Vec<f64> {
        let mut out = vec![0.0; g.positions() * g.n_out];
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                for f in 0..g.n_out {
                    let mut s = 0.0;
                    for ky in 0..g.kernel {
                        for kx in 0..g.kernel {
                            let iy = (oy + ky) as isize - g.padding as isize;
                            let ix = (ox + kx) as isize - g.padding as isize;
                            if iy < 0 || ix < 0 || iy >= g.in_h as isize || ix >= g.in_w as isize {
                                continue;
                            }
                            for c in 0..g.in_channels {
                                let xi = (iy as usize * g.in_w + ix as usize) * g.in_channels + c;
                                let wi = ((ky * g.kernel + kx) * g.in_channels + c) * g.n_out + f;
                                s += x[xi] * wts[wi];
                            }
                        }
                    }
                    out[(oy * g.out_w + ox) * g.n_out + f] = s;
                }
            }
        }
        out
    }

    #[test]
    fn im2col_product_matches_direct_convolution() {
        let g = geom(2, 5, 4, 3, 1, 1, 3);
        let x: Vec<f64> = (0..5 * 4 * 2).map(|i| (i as f64 * 0.37).sin()).collect();
        let w: Vec<f64> = (0..g.patch_len * 3).map(|i| (i as f64 * 0.11).cos()).collect();
        let p = im2col(&x, 1, &g);
        let mut z = vec![0.0; g.positions() * 3];
        crate::linalg::matmul_into(&p, &w, &mut z, g.positions(), g.patch_len, 3);
        let direct = naive_conv(&x, &w, &g);
        for (a, b) in z.iter().zip(&direct) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), y> == <x, col2im(y)>
        let g = geom(3, 4, 4, 3, 1, 1, 1);
        let x: Vec<f64> = (0..2 * 48).map(|i| ((i * 7 % 13) as f64) - 6.0).collect();
        let p = im2col(&x, 2, &g);
        let y: Vec<f64> = (0..p.len()).map(|i| ((i * 5 % 11) as f64) - 5.0).collect();
        let lhs: f64 = p.iter().zip(&y).map(|(a, b)| a * b).sum();
        let back = col2im(&y, 2, &g);
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert_eq!(lhs, rhs);
    }

    #[test]
    fn pooling_picks_window_max() {
        let g = geom(1, 4, 4, 1, 0, 2, 1);
        let r: Vec<f64> = (0..16).map(|i| i as f64).collect();
        let (out, arg) = max_pool(&r, 1, &g);
        assert_eq!(out, vec![5.0, 7.0, 13.0, 15.0]);
        let d = max_pool_backward(&[1.0, 2.0, 3.0, 4.0], &arg, 16);
        assert_eq!(d[5], 1.0);
        assert_eq!(d[15], 4.0);
        assert_eq!(d.iter().sum::<f64>(), 10.0);
    }
}
