//! 2-D convolution via im2col and GEMM.
//!
//! Uses the cross-correlation convention: `out[o, y, x] = b[o] + sum over
//! (i, ky, kx) of w[o, i, ky, kx] * x[i, y*s + ky - pad_top, x*s + kx - pad_left]`.
//! The kernel is not flipped.

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

use super::tape::{Tape, Var};

/// Stride and per-edge zero padding of a convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub stride: usize,
    pub pad_top: usize,
    pub pad_bottom: usize,
    pub pad_left: usize,
    pub pad_right: usize,
}

impl ConvGeometry {
    pub fn symmetric(stride: usize, padding: usize) -> Self {
        ConvGeometry {
            stride,
            pad_top: padding,
            pad_bottom: padding,
            pad_left: padding,
            pad_right: padding,
        }
    }

    /// Size-preserving padding for an even kernel: the extra row/column of
    /// zeros goes on the trailing (bottom/right) edge.
    pub fn same(kernel: usize) -> Self {
        let lead = (kernel - 1) / 2;
        let trail = kernel - 1 - lead;
        ConvGeometry {
            stride: 1,
            pad_top: lead,
            pad_bottom: trail,
            pad_left: lead,
            pad_right: trail,
        }
    }

    pub fn output_hw(&self, h: usize, w: usize, kh: usize, kw: usize) -> Result<(usize, usize)> {
        if self.stride == 0 {
            return Err(Error::invalid("conv2d", "stride must be >= 1"));
        }
        let ph = h + self.pad_top + self.pad_bottom;
        let pw = w + self.pad_left + self.pad_right;
        if kh > ph || kw > pw {
            return Err(Error::invalid(
                "conv2d",
                format!("kernel {kh}x{kw} larger than padded input {ph}x{pw}"),
            ));
        }
        Ok(((ph - kh) / self.stride + 1, (pw - kw) / self.stride + 1))
    }
}

struct Plan {
    x: Shape,
    c_out: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    geom: ConvGeometry,
}

impl Plan {
    fn new(x: Shape, w: Shape, b: Shape, geom: ConvGeometry) -> Result<Plan> {
        if w.c != x.c {
            return Err(Error::shape(
                "conv2d",
                format!("input has {} channels, weights expect {}", x.c, w.c),
            ));
        }
        if b.numel() != w.n {
            return Err(Error::shape(
                "conv2d",
                format!("bias has {} values for {} output channels", b.numel(), w.n),
            ));
        }
        let (oh, ow) = geom.output_hw(x.h, x.w, w.h, w.w)?;
        Ok(Plan {
            x,
            c_out: w.n,
            kh: w.h,
            kw: w.w,
            oh,
            ow,
            geom,
        })
    }

    fn k(&self) -> usize {
        self.x.c * self.kh * self.kw
    }

    fn p(&self) -> usize {
        self.oh * self.ow
    }

    fn out_shape(&self) -> Shape {
        Shape::new(self.x.n, self.c_out, self.oh, self.ow)
    }

    /// Source coordinate for output position `o` and kernel tap `k` along one
    /// axis, or `None` when it falls in the zero padding.
    #[inline]
    fn src(o: usize, k: usize, stride: usize, pad: usize, len: usize) -> Option<usize> {
        let pos = (o * stride + k).checked_sub(pad)?;
        (pos < len).then_some(pos)
    }

    /// Column matrix (K x P) for batch item `n`.
    fn im2col(&self, x: &Tensor, n: usize, cols: &mut [f64]) {
        let p = self.p();
        let g = self.geom;
        for c in 0..self.x.c {
            let plane = x.plane(n, c);
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = ((c * self.kh + ky) * self.kw + kx) * p;
                    let dst = &mut cols[row..row + p];
                    for oy in 0..self.oh {
                        let line = &mut dst[oy * self.ow..(oy + 1) * self.ow];
                        match Self::src(oy, ky, g.stride, g.pad_top, self.x.h) {
                            None => line.fill(0.0),
                            Some(sy) => {
                                let src_row = &plane[sy * self.x.w..(sy + 1) * self.x.w];
                                for (ox, v) in line.iter_mut().enumerate() {
                                    *v = match Self::src(ox, kx, g.stride, g.pad_left, self.x.w) {
                                        Some(sx) => src_row[sx],
                                        None => 0.0,
                                    };
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    /// Scatter-add a column-gradient matrix back into input layout.
    fn col2im(&self, cols: &[f64], n: usize, dx: &mut Tensor) {
        let p = self.p();
        let g = self.geom;
        for c in 0..self.x.c {
            let plane = dx.plane_mut(n, c);
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = ((c * self.kh + ky) * self.kw + kx) * p;
                    let src = &cols[row..row + p];
                    for oy in 0..self.oh {
                        let Some(sy) = Self::src(oy, ky, g.stride, g.pad_top, self.x.h) else {
                            continue;
                        };
                        for ox in 0..self.ow {
                            if let Some(sx) = Self::src(ox, kx, g.stride, g.pad_left, self.x.w) {
                                plane[sy * self.x.w + sx] += src[oy * self.ow + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// `c = a (m x k) * b (k x n) + beta * c`, all row-major contiguous.
fn gemm(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], beta: f64, c: &mut [f64]) {
    // SAFETY: slice lengths are checked against the declared dimensions and
    // strides describe contiguous row-major storage.
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            n as isize,
            1,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `c = a^T (m x k, stored k x m) * b (k x n) + beta * c`.
fn gemm_at(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], beta: f64, c: &mut [f64]) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: as in `gemm`; `a` is read through transposed strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            1,
            m as isize,
            b.as_ptr(),
            n as isize,
            1,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `c = a (m x k) * b^T (b stored n x k) + beta * c`.
fn gemm_bt(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], beta: f64, c: &mut [f64]) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: as in `gemm`; `b` is read through transposed strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            1,
            k as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Forward convolution. `w` is (c_out, c_in, kh, kw); `b` holds c_out values.
pub fn conv2d_forward(x: &Tensor, w: &Tensor, b: &Tensor, geom: ConvGeometry) -> Result<Tensor> {
    let plan = Plan::new(x.shape(), w.shape(), b.shape(), geom)?;
    let (k, p) = (plan.k(), plan.p());
    let mut out = Tensor::zeros(plan.out_shape());
    let mut cols = vec![0.0; k * p];
    for n in 0..plan.x.n {
        plan.im2col(x, n, &mut cols);
        let start = n * plan.c_out * p;
        let dst = &mut out.data_mut()[start..start + plan.c_out * p];
        for (o, row) in dst.chunks_mut(p).enumerate() {
            row.fill(b.data()[o]);
        }
        gemm(plan.c_out, k, p, w.data(), &cols, 1.0, dst);
    }
    Ok(out)
}

/// Gradients of a convolution with respect to (x, w, b), each computed only
/// when requested.
pub fn conv2d_backward(
    grad_out: &Tensor,
    x: &Tensor,
    w: &Tensor,
    b: &Tensor,
    geom: ConvGeometry,
    needs: [bool; 3],
) -> Result<[Option<Tensor>; 3]> {
    let plan = Plan::new(x.shape(), w.shape(), b.shape(), geom)?;
    if grad_out.shape() != plan.out_shape() {
        return Err(Error::shape(
            "conv2d backward",
            format!("grad {} vs output {}", grad_out.shape(), plan.out_shape()),
        ));
    }
    let (k, p, c_out) = (plan.k(), plan.p(), plan.c_out);
    let mut dx = needs[0].then(|| Tensor::zeros(x.shape()));
    let mut dw = needs[1].then(|| Tensor::zeros(w.shape()));
    let mut db = needs[2].then(|| Tensor::zeros(b.shape()));
    let mut cols = vec![0.0; k * p];
    for n in 0..plan.x.n {
        let start = n * c_out * p;
        let gy = &grad_out.data()[start..start + c_out * p];
        if let Some(db) = db.as_mut() {
            for (o, row) in gy.chunks(p).enumerate() {
                db.data_mut()[o] += row.iter().sum::<f64>();
            }
        }
        if let Some(dw) = dw.as_mut() {
            plan.im2col(x, n, &mut cols);
            gemm_bt(c_out, p, k, gy, &cols, 1.0, dw.data_mut());
        }
        if let Some(dx) = dx.as_mut() {
            gemm_at(k, c_out, p, w.data(), gy, 0.0, &mut cols);
            plan.col2im(&cols, n, dx);
        }
    }
    Ok([dx, dw, db])
}

impl Tape {
    /// Convolution with symmetric padding.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, padding: usize) -> Result<Var> {
        self.conv2d_geom(x, w, b, ConvGeometry::symmetric(stride, padding))
    }

    pub fn conv2d_geom(&mut self, x: Var, w: Var, b: Var, geom: ConvGeometry) -> Result<Var> {
        let out = conv2d_forward(self.value(x), self.value(w), self.value(b), geom)?;
        Ok(self.push(
            "conv2d",
            out,
            &[x, w, b],
            Box::new(move |g, inputs, _, needs| {
                let [dx, dw, db] = conv2d_backward(
                    g,
                    inputs[0],
                    inputs[1],
                    inputs[2],
                    geom,
                    [needs[0], needs[1], needs[2]],
                )
                .expect("shapes validated in forward");
                vec![dx, dw, db]
            }),
        ))
    }
}
