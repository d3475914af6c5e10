//! NCHW convolution and resampling.

use crate::scalar::gemm;
use crate::{Scalar, Tensor, Var};

pub fn conv2d_output_size(input: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    assert!(input + 2 * pad >= kernel, "kernel {kernel} larger than padded input {input}+2*{pad}");
    (input + 2 * pad - kernel) / stride + 1
}

#[derive(Clone, Copy)]
struct Geom {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl Geom {
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }

    fn rows(&self) -> usize {
        self.c * self.kh * self.kw
    }
}

fn im2col<T: Scalar>(x: &[T], g: Geom, col: &mut [T]) {
    let hw = g.ho * g.wo;
    for c in 0..g.c {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let dst = &mut col[row * hw..(row + 1) * hw];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let line = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize {
                        line.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        *v = if ix < 0 || ix >= g.w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im<T: Scalar>(col: &[T], g: Geom, dx: &mut [T]) {
    let hw = g.ho * g.wo;
    for c in 0..g.c {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let src = &col[row * hw..(row + 1) * hw];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let line = &src[oy * g.wo..(oy + 1) * g.wo];
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, &v) in line.iter().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

impl<T: Scalar> Var<T> {
    /// Cross-correlation of `[N,C,H,W]` with weights `[O,C,KH,KW]`, zero padding.
    pub fn conv2d(&self, weight: &Var<T>, stride: usize, pad: usize) -> Var<T> {
        let xs = self.shape();
        let ws = weight.shape();
        assert!(xs.len() == 4 && ws.len() == 4, "conv2d expects 4-d input and weight");
        assert_eq!(xs[1], ws[1], "conv2d channels: input {xs:?} weight {ws:?}");
        assert!(stride >= 1);
        let (n, o) = (xs[0], ws[0]);
        let g = Geom {
            c: xs[1],
            h: xs[2],
            w: xs[3],
            kh: ws[2],
            kw: ws[3],
            stride,
            pad,
            ho: conv2d_output_size(xs[2], ws[2], stride, pad),
            wo: conv2d_output_size(xs[3], ws[3], stride, pad),
        };
        let in_sz = g.c * g.h * g.w;
        let hw = g.ho * g.wo;
        let rows = g.rows();
        let mut out = vec![T::zero(); n * o * hw];
        let mut col = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); rows * hw] };
        let xd = self.value.data();
        let wd = weight.value.data();
        for s in 0..n {
            let xs_ = &xd[s * in_sz..(s + 1) * in_sz];
            let colref: &[T] = if g.is_pointwise() {
                xs_
            } else {
                im2col(xs_, g, &mut col);
                &col
            };
            gemm(o, rows, hw, wd, false, colref, false, &mut out[s * o * hw..(s + 1) * o * hw], false);
        }
        let x = self.value.clone();
        let w = weight.value.clone();
        self.graph.op(
            Tensor::from_vec(&[n, o, g.ho, g.wo], out),
            &[self, weight],
            move |gout, need| {
                let gd = gout.data();
                let xd = x.data();
                let wd = w.data();
                let mut dx = need[0].then(|| vec![T::zero(); n * in_sz]);
                let mut dw = need[1].then(|| vec![T::zero(); o * rows]);
                let mut col = vec![T::zero(); rows * hw];
                for s in 0..n {
                    let gs = &gd[s * o * hw..(s + 1) * o * hw];
                    if let Some(dw) = dw.as_mut() {
                        let xs_ = &xd[s * in_sz..(s + 1) * in_sz];
                        let colref: &[T] = if g.is_pointwise() {
                            xs_
                        } else {
                            im2col(xs_, g, &mut col);
                            &col
                        };
                        gemm(o, hw, rows, gs, false, colref, true, dw, true);
                    }
                    if let Some(dx) = dx.as_mut() {
                        let dxs = &mut dx[s * in_sz..(s + 1) * in_sz];
                        if g.is_pointwise() {
                            gemm(rows, o, hw, wd, true, gs, false, dxs, true);
                        } else {
                            gemm(rows, o, hw, wd, true, gs, false, &mut col, false);
                            col2im(&col, g, dxs);
                        }
                    }
                }
                vec![
                    dx.map(|d| Tensor::from_vec(x.shape(), d)),
                    dw.map(|d| Tensor::from_vec(w.shape(), d)),
                ]
            },
        )
    }

    /// Nearest-neighbour 2× upsampling of `[N,C,H,W]`.
    pub fn upsample2x(&self) -> Var<T> {
        let s = self.shape();
        assert_eq!(s.len(), 4, "upsample2x expects NCHW");
        let (nc, h, w) = (s[0] * s[1], s[2], s[3]);
        let xd = self.value.data();
        let mut out = vec![T::zero(); nc * 4 * h * w];
        for p in 0..nc {
            for y in 0..2 * h {
                for x in 0..2 * w {
                    out[(p * 2 * h + y) * 2 * w + x] = xd[(p * h + y / 2) * w + x / 2];
                }
            }
        }
        let shape = vec![s[0], s[1], 2 * h, 2 * w];
        let in_shape = s.to_vec();
        self.graph.op(Tensor::from_vec(&shape, out), &[self], move |g, _| {
            let gd = g.data();
            let mut dx = vec![T::zero(); nc * h * w];
            for p in 0..nc {
                for y in 0..2 * h {
                    for x in 0..2 * w {
                        dx[(p * h + y / 2) * w + x / 2] += gd[(p * 2 * h + y) * 2 * w + x];
                    }
                }
            }
            vec![Some(Tensor::from_vec(&in_shape, dx))]
        })
    }

    /// Non-overlapping `k×k` mean pooling; spatial dims must divide by `k`.
    pub fn avg_pool(&self, k: usize) -> Var<T> {
        let s = self.shape();
        assert_eq!(s.len(), 4, "avg_pool expects NCHW");
        if k == 1 {
            return self.clone();
        }
        assert!(s[2] % k == 0 && s[3] % k == 0, "avg_pool({k}) on {s:?}");
        let (nc, h, w) = (s[0] * s[1], s[2], s[3]);
        let (ho, wo) = (h / k, w / k);
        let inv = T::of(1.0 / (k * k) as f64);
        let xd = self.value.data();
        let mut out = vec![T::zero(); nc * ho * wo];
        for p in 0..nc {
            for y in 0..h {
                for x in 0..w {
                    out[(p * ho + y / k) * wo + x / k] += xd[(p * h + y) * w + x];
                }
            }
        }
        out.iter_mut().for_each(|v| *v *= inv);
        let in_shape = s.to_vec();
        self.graph
            .op(Tensor::from_vec(&[s[0], s[1], ho, wo], out), &[self], move |g, _| {
                let gd = g.data();
                let mut dx = vec![T::zero(); nc * h * w];
                for p in 0..nc {
                    for y in 0..h {
                        for x in 0..w {
                            dx[(p * h + y) * w + x] = gd[(p * ho + y / k) * wo + x / k] * inv;
                        }
                    }
                }
                vec![Some(Tensor::from_vec(&in_shape, dx))]
            })
    }

    /// Resizes a square map to side `size` by area averaging (down) or
    /// nearest repetition (up). Ratios must be powers of two.
    pub fn resize_to(&self, size: usize) -> Var<T> {
        let cur = self.shape()[2];
        assert_eq!(cur, self.shape()[3], "resize_to expects square maps");
        if size == cur {
            self.clone()
        } else if size < cur {
            assert_eq!(cur % size, 0, "resize {cur} -> {size}");
            self.avg_pool(cur / size)
        } else {
            let mut v = self.clone();
            let mut s = cur;
            while s < size {
                v = v.upsample2x();
                s *= 2;
            }
            assert_eq!(s, size, "resize {cur} -> {size}");
            v
        }
    }
}

#[cfg(test)]
mod tests {
    use crate::{Graph, Tensor};

    #[test]
    fn conv_identity_kernel() {
        let g = Graph::<f64>::new();
        let x = g.constant(Tensor::from_f64(&[1, 1, 2, 2], &[1., 2., 3., 4.]));
        let mut k = vec![0.0; 9];
        k[4] = 1.0;
        let w = g.constant(Tensor::from_f64(&[1, 1, 3, 3], &k));
        assert_eq!(x.conv2d(&w, 1, 1).value(), x.value());
    }

    #[test]
    fn strided_conv_shape() {
        let g = Graph::<f32>::new();
        let x = g.constant(Tensor::ones(&[2, 3, 8, 8]));
        let w = g.constant(Tensor::ones(&[5, 3, 3, 3]));
        let y = x.conv2d(&w, 2, 1);
        assert_eq!(y.shape(), &[2, 5, 4, 4]);
        // interior output sees all 27 taps
        assert_eq!(y.value().data()[5], 27.0);
    }

    #[test]
    fn pool_and_upsample_are_adjoint() {
        let g = Graph::<f64>::new();
        let x = g.param(Tensor::from_f64(&[1, 1, 2, 2], &[1., 2., 3., 4.]));
        let up = x.upsample2x();
        assert_eq!(up.shape(), &[1, 1, 4, 4]);
        let back = up.avg_pool(2);
        assert_eq!(back.value(), x.value());
        let gr = g.backward(&back.sum());
        assert_eq!(gr.get(&x).unwrap().to_f64_vec(), vec![1.0; 4]);
    }
}
