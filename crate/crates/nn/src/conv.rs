//! Convolution via im2col + GEMM. 2D convolutions are the `kernel[0] = 1`
//! special case of the volumetric kernel.

use crate::{NnError, Result, Scalar, Shape, Tensor};

/// Kernel extent, stride and zero padding per spatial axis `(d, h, w)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub pad: [usize; 3],
}

impl ConvGeom {
    /// Square in-plane kernel with "same" padding for odd sizes.
    pub fn planar(k: usize) -> Self {
        Self {
            kernel: [1, k, k],
            stride: [1, 1, 1],
            pad: [0, k / 2, k / 2],
        }
    }

    /// Cubic kernel with "same" padding for odd sizes.
    pub fn cubic(k: usize) -> Self {
        Self {
            kernel: [k, k, k],
            stride: [1, 1, 1],
            pad: [k / 2, k / 2, k / 2],
        }
    }

    pub fn with_stride(mut self, stride: [usize; 3]) -> Self {
        self.stride = stride;
        self
    }

    pub fn with_pad(mut self, pad: [usize; 3]) -> Self {
        self.pad = pad;
        self
    }

    pub fn taps(&self) -> usize {
        self.kernel.iter().product()
    }

    pub fn out_extent(&self, input: [usize; 3]) -> Result<[usize; 3]> {
        let mut out = [0; 3];
        for a in 0..3 {
            let padded = input[a] + 2 * self.pad[a];
            if padded < self.kernel[a] || self.stride[a] == 0 {
                return Err(NnError::Invalid(format!(
                    "kernel {:?} does not fit input {:?} with padding {:?}",
                    self.kernel, input, self.pad
                )));
            }
            out[a] = (padded - self.kernel[a]) / self.stride[a] + 1;
        }
        Ok(out)
    }

    pub fn out_shape(&self, input: Shape, out_channels: usize) -> Result<Shape> {
        let [d, h, w] = self.out_extent([input.d, input.h, input.w])?;
        Ok(Shape::new(input.n, out_channels, d, h, w))
    }
}

/// For each kernel offset along one axis, the range of output positions whose
/// source coordinate falls inside the input, plus the source offset.
#[derive(Clone, Copy)]
struct AxisSpan {
    lo: usize,
    hi: usize,
}

fn axis_span(k: usize, input: usize, out: usize, stride: usize, pad: usize) -> AxisSpan {
    // src = o * stride + k - pad must satisfy 0 <= src < input
    let mut lo = 0;
    while lo < out && lo * stride + k < pad {
        lo += 1;
    }
    let mut hi = out;
    while hi > lo && (hi - 1) * stride + k >= pad + input {
        hi -= 1;
    }
    AxisSpan { lo, hi }
}

struct Plan {
    cin: usize,
    inp: [usize; 3],
    out: [usize; 3],
    geom: ConvGeom,
}

impl Plan {
    fn rows(&self) -> usize {
        self.cin * self.geom.taps()
    }

    fn cols(&self) -> usize {
        self.out.iter().product()
    }

    /// Visit every (row, kernel offset) pair with its valid output spans.
    fn for_each_row(&self, mut f: impl FnMut(usize, usize, [usize; 3], [AxisSpan; 3])) {
        let g = &self.geom;
        let mut row = 0;
        for ci in 0..self.cin {
            for kz in 0..g.kernel[0] {
                let sz = axis_span(kz, self.inp[0], self.out[0], g.stride[0], g.pad[0]);
                for ky in 0..g.kernel[1] {
                    let sy = axis_span(ky, self.inp[1], self.out[1], g.stride[1], g.pad[1]);
                    for kx in 0..g.kernel[2] {
                        let sx = axis_span(kx, self.inp[2], self.out[2], g.stride[2], g.pad[2]);
                        f(row, ci, [kz, ky, kx], [sz, sy, sx]);
                        row += 1;
                    }
                }
            }
        }
    }
}

fn im2col<T: Scalar>(x: &[T], plan: &Plan, cols: &mut [T]) {
    let [id, ih, iw] = plan.inp;
    let [_, oh, ow] = plan.out;
    let g = plan.geom;
    let ncols = plan.cols();
    cols.fill(T::zero());
    plan.for_each_row(|row, ci, [kz, ky, kx], [sz, sy, sx]| {
        let dst = &mut cols[row * ncols..(row + 1) * ncols];
        let src = &x[ci * id * ih * iw..(ci + 1) * id * ih * iw];
        for oz in sz.lo..sz.hi {
            let iz = oz * g.stride[0] + kz - g.pad[0];
            for oy in sy.lo..sy.hi {
                let iy = oy * g.stride[1] + ky - g.pad[1];
                let drow = (oz * oh + oy) * ow;
                let srow = (iz * ih + iy) * iw;
                if g.stride[2] == 1 {
                    let ix0 = sx.lo + kx - g.pad[2];
                    let n = sx.hi - sx.lo;
                    dst[drow + sx.lo..drow + sx.hi].copy_from_slice(&src[srow + ix0..srow + ix0 + n]);
                } else {
                    for ox in sx.lo..sx.hi {
                        let ix = ox * g.stride[2] + kx - g.pad[2];
                        dst[drow + ox] = src[srow + ix];
                    }
                }
            }
        }
    });
}

fn col2im<T: Scalar>(cols: &[T], plan: &Plan, x: &mut [T]) {
    let [id, ih, iw] = plan.inp;
    let [_, oh, ow] = plan.out;
    let g = plan.geom;
    let ncols = plan.cols();
    plan.for_each_row(|row, ci, [kz, ky, kx], [sz, sy, sx]| {
        let src = &cols[row * ncols..(row + 1) * ncols];
        let dst = &mut x[ci * id * ih * iw..(ci + 1) * id * ih * iw];
        for oz in sz.lo..sz.hi {
            let iz = oz * g.stride[0] + kz - g.pad[0];
            for oy in sy.lo..sy.hi {
                let iy = oy * g.stride[1] + ky - g.pad[1];
                let srow = (oz * oh + oy) * ow;
                let drow = (iz * ih + iy) * iw;
                for ox in sx.lo..sx.hi {
                    let ix = ox * g.stride[2] + kx - g.pad[2];
                    dst[drow + ix] += src[srow + ox];
                }
            }
        }
    });
}

fn plan_for(x: Shape, w: Shape, geom: ConvGeom) -> Result<Plan> {
    if w.c != x.c || [w.d, w.h, w.w] != geom.kernel {
        return Err(NnError::ShapeMismatch {
            op: "conv",
            expected: format!("weight (*, {}, {:?})", x.c, geom.kernel),
            actual: w.to_string(),
        });
    }
    let inp = [x.d, x.h, x.w];
    Ok(Plan {
        cin: x.c,
        inp,
        out: geom.out_extent(inp)?,
        geom,
    })
}

/// Weight layout `(cout, cin, kd, kh, kw)`, bias `(1, cout, 1, 1, 1)`.
pub(crate) fn conv_forward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
    geom: ConvGeom,
) -> Result<Tensor<T>> {
    let xs = x.shape();
    let ws = w.shape();
    let plan = plan_for(xs, ws, geom)?;
    let cout = ws.n;
    if let Some(b) = b {
        b.expect_shape("conv bias", Shape::new(1, cout, 1, 1, 1))?;
    }
    let (k, p) = (plan.rows(), plan.cols());
    let [od, oh, ow] = plan.out;
    let mut y = Tensor::zeros(Shape::new(xs.n, cout, od, oh, ow));
    let mut cols = vec![T::zero(); k * p];
    for n in 0..xs.n {
        im2col(x.item(n), &plan, &mut cols);
        let out = y.item_mut(n);
        T::gemm(cout, k, p, T::one(), w.data(), (k, 1), &cols, (p, 1), T::zero(), out, (p, 1));
        if let Some(b) = b {
            for (co, chunk) in out.chunks_mut(p).enumerate() {
                let bv = b.data()[co];
                chunk.iter_mut().for_each(|v| *v += bv);
            }
        }
    }
    Ok(y)
}

/// Gradients of a convolution. `want_input` skips the data gradient for
/// inputs that do not require it.
pub(crate) fn conv_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    gy: &Tensor<T>,
    geom: ConvGeom,
    want_input: bool,
    want_weight: bool,
) -> (Option<Tensor<T>>, Option<Tensor<T>>, Tensor<T>) {
    let xs = x.shape();
    let ws = w.shape();
    let plan = plan_for(xs, ws, geom).expect("shapes validated in forward");
    let cout = ws.n;
    let (k, p) = (plan.rows(), plan.cols());
    let mut gx = want_input.then(|| Tensor::zeros(xs));
    let mut gw = want_weight.then(|| Tensor::zeros(ws));
    let mut gb = Tensor::zeros(Shape::new(1, cout, 1, 1, 1));
    let mut cols = vec![T::zero(); k * p];
    for n in 0..xs.n {
        let g = gy.item(n);
        for (co, chunk) in g.chunks(p).enumerate() {
            gb.data_mut()[co] += chunk.iter().copied().sum::<T>();
        }
        if let Some(gw) = gw.as_mut() {
            im2col(x.item(n), &plan, &mut cols);
            // gw (cout x k) += gy (cout x p) * cols^T (p x k)
            T::gemm(cout, p, k, T::one(), g, (p, 1), &cols, (1, p), T::one(), gw.data_mut(), (k, 1));
        }
        if let Some(gx) = gx.as_mut() {
            // cols (k x p) = w^T (k x cout) * gy (cout x p)
            T::gemm(k, cout, p, T::one(), w.data(), (1, k), g, (p, 1), T::zero(), &mut cols, (p, 1));
            col2im(&cols, &plan, gx.item_mut(n));
        }
    }
    (gx, gw, gb)
}
