//! Convolution building blocks with hand-written backward passes.
//!
//! Everything is generic over the float type so the same code runs in `f32`
//! for training and coding and in `f64` for finite-difference checks.

use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;

use super::arch::{LayerKind, LayerSpec, LEAKY_SLOPE};

/// Channel-major stack of 2D planes.
#[derive(Clone, Debug, PartialEq)]
pub struct Maps<F> {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<F>,
}

impl<F: Float> Maps<F> {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Self {
            c,
            h,
            w,
            data: vec![F::zero(); c * h * w],
        }
    }

    pub fn plane(&self, c: usize) -> &[F] {
        let n = self.h * self.w;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.c, self.h, self.w)
    }

    /// Top-left `h x w` window of every plane.
    pub fn crop(&self, h: usize, w: usize) -> Self {
        debug_assert!(h <= self.h && w <= self.w);
        let mut out = Self::zeros(self.c, h, w);
        for c in 0..self.c {
            for y in 0..h {
                let src = (c * self.h + y) * self.w;
                out.data[(c * h + y) * w..(c * h + y + 1) * w].copy_from_slice(&self.data[src..src + w]);
            }
        }
        out
    }

    /// Zero-extends a cropped gradient back to `h x w`.
    pub fn uncrop(&self, h: usize, w: usize) -> Self {
        let mut out = Self::zeros(self.c, h, w);
        for c in 0..self.c {
            for y in 0..self.h {
                let dst = (c * h + y) * w;
                out.data[dst..dst + self.w].copy_from_slice(&self.data[(c * self.h + y) * self.w..(c * self.h + y + 1) * self.w]);
            }
        }
        out
    }
}

/// Float types the kernels run on.
pub trait Scalar: Float + 'static {}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// `c[i][p] += sum_j a[i*rsa + j*csa] * b[j*ldb + p]` for `p < n`.
///
/// Every output element accumulates in `j` order regardless of how the
/// inner loop is vectorized, so results are identical on every target.
#[allow(clippy::too_many_arguments)]
fn mm_acc<F: Float>(m: usize, k: usize, n: usize, a: &[F], rsa: usize, csa: usize, b: &[F], ldb: usize, c: &mut [F], ldc: usize) {
    let mut i = 0;
    while i + 4 <= m {
        let (c0, rest) = c[i * ldc..].split_at_mut(ldc);
        let (c1, rest) = rest.split_at_mut(ldc);
        let (c2, rest) = rest.split_at_mut(ldc);
        let c3 = &mut rest[..n];
        let (c0, c1, c2) = (&mut c0[..n], &mut c1[..n], &mut c2[..n]);
        for j in 0..k {
            let brow = &b[j * ldb..][..n];
            let a0 = a[i * rsa + j * csa];
            let a1 = a[(i + 1) * rsa + j * csa];
            let a2 = a[(i + 2) * rsa + j * csa];
            let a3 = a[(i + 3) * rsa + j * csa];
            for p in 0..n {
                let v = brow[p];
                c0[p] = c0[p] + a0 * v;
                c1[p] = c1[p] + a1 * v;
                c2[p] = c2[p] + a2 * v;
                c3[p] = c3[p] + a3 * v;
            }
        }
        i += 4;
    }
    for i in i..m {
        let crow = &mut c[i * ldc..][..n];
        for j in 0..k {
            let av = a[i * rsa + j * csa];
            for (cv, &v) in crow.iter_mut().zip(&b[j * ldb..][..n]) {
                *cv = *cv + av * v;
            }
        }
    }
}

/// Dot product with eight fixed partial sums.
fn dot<F: Float>(x: &[F], y: &[F]) -> F {
    let mut acc = [F::zero(); 8];
    let (xc, yc) = (x.chunks_exact(8), y.chunks_exact(8));
    let (xr, yr) = (xc.remainder(), yc.remainder());
    for (a, b) in xc.zip(yc) {
        for l in 0..8 {
            acc[l] = acc[l] + a[l] * b[l];
        }
    }
    let mut tail = F::zero();
    for (&a, &b) in xr.iter().zip(yr) {
        tail = tail + a * b;
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

/// `c[i][j] += dot(a_i, b_j)` over rows of length `n`.
#[allow(clippy::too_many_arguments)]
fn mm_abt_acc<F: Float>(m: usize, k: usize, n: usize, a: &[F], lda: usize, b: &[F], ldb: usize, c: &mut [F], ldc: usize) {
    for i in 0..m {
        let arow = &a[i * lda..][..n];
        for j in 0..k {
            c[i * ldc + j] = c[i * ldc + j] + dot(arow, &b[j * ldb..][..n]);
        }
    }
}

/// Output positions `o` for which `o * stride + tap - pad` lies in `[0, len)`.
#[inline]
fn valid_range(tap: usize, pad: usize, stride: usize, len: usize, out_len: usize) -> (usize, usize) {
    let lo = if tap >= pad { 0 } else { (pad - tap).div_ceil(stride) };
    let hi = (len + pad).saturating_sub(tap).div_ceil(stride).min(out_len);
    (lo, hi.max(lo))
}

/// Upper bound on the im2col buffer, in elements.
const COL_BUDGET: usize = 1 << 21;

struct ConvGeom {
    ic: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl ConvGeom {
    fn new(x: &(usize, usize, usize), k: usize, stride: usize) -> Self {
        let (ic, h, w) = *x;
        Self {
            ic,
            h,
            w,
            k,
            stride,
            pad: k / 2,
            oh: h.div_ceil(stride),
            ow: w.div_ceil(stride),
        }
    }

    fn taps(&self) -> usize {
        self.ic * self.k * self.k
    }

    /// Output-row blocks whose im2col buffer fits the budget.
    fn blocks(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let per = (COL_BUDGET / (self.taps() * self.ow).max(1)).max(1);
        (0..self.oh).step_by(per).map(move |y0| (y0, (y0 + per).min(self.oh)))
    }

    /// Column matrix `[tap][position]` for output rows `y0..y1`.
    fn im2col<F: Float>(&self, x: &[F], y0: usize, y1: usize, col: &mut Vec<F>) {
        let np = (y1 - y0) * self.ow;
        col.clear();
        col.resize(self.taps() * np, F::zero());
        for i in 0..self.ic {
            let plane = &x[i * self.h * self.w..(i + 1) * self.h * self.w];
            for ky in 0..self.k {
                let (vy0, vy1) = valid_range(ky, self.pad, self.stride, self.h, self.oh);
                for kx in 0..self.k {
                    let (vx0, vx1) = valid_range(kx, self.pad, self.stride, self.w, self.ow);
                    let row = &mut col[((i * self.k + ky) * self.k + kx) * np..][..np];
                    for oy in y0.max(vy0)..y1.min(vy1) {
                        let iy = oy * self.stride + ky - self.pad;
                        let dst = &mut row[(oy - y0) * self.ow..][..self.ow];
                        let src = &plane[iy * self.w..(iy + 1) * self.w];
                        for ox in vx0..vx1 {
                            dst[ox] = src[ox * self.stride + kx - self.pad];
                        }
                    }
                }
            }
        }
    }

    /// Scatter-adds a column-matrix gradient back onto the input grid.
    fn col2im<F: Float>(&self, col: &[F], y0: usize, y1: usize, gx: &mut [F]) {
        let np = (y1 - y0) * self.ow;
        for i in 0..self.ic {
            let plane = &mut gx[i * self.h * self.w..(i + 1) * self.h * self.w];
            for ky in 0..self.k {
                let (vy0, vy1) = valid_range(ky, self.pad, self.stride, self.h, self.oh);
                for kx in 0..self.k {
                    let (vx0, vx1) = valid_range(kx, self.pad, self.stride, self.w, self.ow);
                    let row = &col[((i * self.k + ky) * self.k + kx) * np..][..np];
                    for oy in y0.max(vy0)..y1.min(vy1) {
                        let iy = oy * self.stride + ky - self.pad;
                        let src = &row[(oy - y0) * self.ow..][..self.ow];
                        let dst = &mut plane[iy * self.w..(iy + 1) * self.w];
                        for ox in vx0..vx1 {
                            let ix = ox * self.stride + kx - self.pad;
                            dst[ix] = dst[ix] + src[ox];
                        }
                    }
                }
            }
        }
    }
}

/// "Same" zero-padded convolution; output grid is `ceil(h/s) x ceil(w/s)`.
pub fn conv2d<F: Scalar>(x: &Maps<F>, weight: &[F], bias: &[F], out_c: usize, k: usize, stride: usize) -> Maps<F> {
    let g = ConvGeom::new(&x.shape(), k, stride);
    let n = g.oh * g.ow;
    let mut out = Maps::zeros(out_c, g.oh, g.ow);
    for o in 0..out_c {
        out.data[o * n..(o + 1) * n].iter_mut().for_each(|v| *v = bias[o]);
    }
    let mut col = Vec::new();
    for (y0, y1) in g.blocks() {
        g.im2col(&x.data, y0, y1, &mut col);
        let np = (y1 - y0) * g.ow;
        let taps = g.taps();
        mm_acc(out_c, taps, np, weight, taps, 1, &col, np, &mut out.data[y0 * g.ow..], n);
    }
    out
}

/// Accumulates weight and bias gradients of [`conv2d`] and returns the
/// input gradient when `need_input_grad` is set.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward<F: Scalar>(
    x: &Maps<F>,
    weight: &[F],
    k: usize,
    stride: usize,
    gout: &Maps<F>,
    gweight: &mut [F],
    gbias: &mut [F],
    need_input_grad: bool,
) -> Option<Maps<F>> {
    let g = ConvGeom::new(&x.shape(), k, stride);
    let out_c = gout.c;
    let n = g.oh * g.ow;
    let taps = g.taps();
    for o in 0..out_c {
        gbias[o] = gout.plane(o).iter().fold(gbias[o], |acc, &v| acc + v);
    }
    let mut gx = if need_input_grad { Some(Maps::zeros(g.ic, g.h, g.w)) } else { None };
    let (mut col, mut gcol) = (Vec::new(), Vec::new());
    for (y0, y1) in g.blocks() {
        let np = (y1 - y0) * g.ow;
        let gblock = &gout.data[y0 * g.ow..];
        g.im2col(&x.data, y0, y1, &mut col);
        // gW += gout * col^T
        mm_abt_acc(out_c, taps, np, gblock, n, &col, np, gweight, taps);
        if let Some(gx) = gx.as_mut() {
            // gcol = W^T * gout
            gcol.clear();
            gcol.resize(taps * np, F::zero());
            mm_acc(taps, out_c, np, weight, 1, taps, gblock, n, &mut gcol, np);
            g.col2im(&gcol, y0, y1, &mut gx.data);
        }
    }
    gx
}

pub fn upsample<F: Float>(x: &Maps<F>, f: usize) -> Maps<F> {
    let (c, h, w) = x.shape();
    let mut out = Maps::zeros(c, h * f, w * f);
    let ow = w * f;
    for ch in 0..c {
        for y in 0..h * f {
            let src = &x.data[(ch * h + y / f) * w..(ch * h + y / f + 1) * w];
            let dst = &mut out.data[(ch * h * f + y) * ow..(ch * h * f + y + 1) * ow];
            for (xo, d) in dst.iter_mut().enumerate() {
                *d = src[xo / f];
            }
        }
    }
    out
}

pub fn upsample_backward<F: Float>(g: &Maps<F>, f: usize) -> Maps<F> {
    let (c, h, w) = (g.c, g.h / f, g.w / f);
    let mut out = Maps::zeros(c, h, w);
    for ch in 0..c {
        for y in 0..h * f {
            let src = &g.data[(ch * h * f + y) * w * f..(ch * h * f + y + 1) * w * f];
            let dst = &mut out.data[(ch * h + y / f) * w..(ch * h + y / f + 1) * w];
            for (xo, &v) in src.iter().enumerate() {
                dst[xo / f] = dst[xo / f] + v;
            }
        }
    }
    out
}

pub fn leaky<F: Float>(v: F) -> F {
    if v > F::zero() {
        v
    } else {
        v * F::from(LEAKY_SLOPE).unwrap()
    }
}

pub fn leaky_grad<F: Float>(pre: F) -> F {
    if pre > F::zero() {
        F::one()
    } else {
        F::from(LEAKY_SLOPE).unwrap()
    }
}

/// Saved activations of one stack, enough to run it backwards.
#[derive(Clone, Debug)]
pub struct StackTape<F> {
    /// Convolution input of each layer (after upsampling for `UpConv`).
    pub inputs: Vec<Maps<F>>,
    /// Pre-activation output of each layer.
    pub pre: Vec<Maps<F>>,
}

pub struct StackParams<'a, F> {
    pub layers: &'a [LayerSpec],
    pub weights: Vec<&'a [F]>,
    pub biases: Vec<&'a [F]>,
}

pub fn stack_forward<F: Scalar>(p: &StackParams<'_, F>, input: Maps<F>, keep_tape: bool) -> (Maps<F>, Option<StackTape<F>>) {
    let mut tape = StackTape {
        inputs: Vec::new(),
        pre: Vec::new(),
    };
    let mut cur = input;
    for (li, l) in p.layers.iter().enumerate() {
        let (k, s) = (l.kernel as usize, l.stride as usize);
        let conv_in = match l.kind {
            LayerKind::Conv => cur,
            LayerKind::UpConv => upsample(&cur, s),
        };
        let stride = if l.kind == LayerKind::Conv { s } else { 1 };
        let pre = conv2d(&conv_in, p.weights[li], p.biases[li], l.out_channels as usize, k, stride);
        let out = if l.activation {
            Maps {
                data: pre.data.iter().map(|&v| leaky(v)).collect(),
                ..pre.clone()
            }
        } else {
            pre.clone()
        };
        if keep_tape {
            tape.inputs.push(conv_in);
            tape.pre.push(pre);
        }
        cur = out;
    }
    (cur, keep_tape.then_some(tape))
}

/// Backward through a stack. `gweights[i]` / `gbiases[i]` receive the
/// accumulated gradients of layer `i`; returns the input gradient if asked.
pub fn stack_backward<F: Scalar>(
    p: &StackParams<'_, F>,
    tape: &StackTape<F>,
    gout: Maps<F>,
    grads: &mut [F],
    offsets: &[super::arch::LayerParams],
    need_input_grad: bool,
) -> Option<Maps<F>> {
    let mut g = gout;
    for li in (0..p.layers.len()).rev() {
        let l = &p.layers[li];
        if l.activation {
            for (gv, &pv) in g.data.iter_mut().zip(&tape.pre[li].data) {
                *gv = *gv * leaky_grad(pv);
            }
        }
        let stride = if l.kind == LayerKind::Conv { l.stride as usize } else { 1 };
        let want = need_input_grad || li > 0;
        let (gw, gb) = split_grads(grads, &offsets[li]);
        let gin = conv2d_backward(&tape.inputs[li], p.weights[li], l.kernel as usize, stride, &g, gw, gb, want);
        match gin {
            Some(gi) => {
                g = match l.kind {
                    LayerKind::Conv => gi,
                    LayerKind::UpConv => upsample_backward(&gi, l.stride as usize),
                }
            }
            None => return None,
        }
    }
    Some(g)
}

fn split_grads<'a, F>(grads: &'a mut [F], off: &super::arch::LayerParams) -> (&'a mut [F], &'a mut [F]) {
    debug_assert_eq!(off.weight.end, off.bias.start);
    let (head, tail) = grads.split_at_mut(off.bias.start);
    (&mut head[off.weight.clone()], &mut tail[..off.bias.len()])
}

/// Reflect-pads (without repeating the edge) up to multiples of `m`.
pub fn reflect_pad<F: Float>(data: &[f32], rows: usize, cols: usize, m: usize) -> Maps<F> {
    let (pr, pc) = (rows.div_ceil(m) * m, cols.div_ceil(m) * m);
    let reflect = |i: usize, n: usize| if i < n { i } else { 2 * (n - 1) - i };
    let mut out = Maps::zeros(1, pr, pc);
    for r in 0..pr {
        let sr = reflect(r, rows);
        for c in 0..pc {
            out.data[r * pc + c] = F::from(data[sr * cols + reflect(c, cols)]).unwrap();
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(x: &Maps<f64>, w: &[f64], b: &[f64], oc: usize, k: usize, s: usize) -> Maps<f64> {
        let (ic, h, wd) = x.shape();
        let (oh, ow) = (h.div_ceil(s), wd.div_ceil(s));
        let pad = (k / 2) as isize;
        let mut out = Maps::zeros(oc, oh, ow);
        for o in 0..oc {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b[o];
                    for i in 0..ic {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * s + ky) as isize - pad;
                                let ix = (ox * s + kx) as isize - pad;
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                    acc += w[((o * ic + i) * k + ky) * k + kx] * x.data[(i * h + iy as usize) * wd + ix as usize];
                                }
                            }
                        }
                    }
                    out.data[(o * oh + oy) * ow + ox] = acc;
                }
            }
        }
        out
    }

    fn filled(c: usize, h: usize, w: usize, seed: u64) -> Maps<f64> {
        let mut rng = crate::rng::SplitMix64::new(seed);
        Maps {
            c,
            h,
            w,
            data: (0..c * h * w).map(|_| rng.next_normal()).collect(),
        }
    }

    #[test]
    fn conv_matches_naive_reference() {
        for &(ic, oc, h, w, k, s) in &[(1, 3, 7, 9, 5, 2), (2, 2, 4, 4, 3, 1), (3, 1, 1, 2, 5, 1), (2, 2, 5, 3, 3, 2)] {
            let x = filled(ic, h, w, 1);
            let wt: Vec<f64> = filled(oc * ic, k, k, 2).data;
            let b: Vec<f64> = filled(oc, 1, 1, 3).data;
            let fast = conv2d(&x, &wt, &b, oc, k, s);
            let slow = naive_conv(&x, &wt, &b, oc, k, s);
            assert_eq!(fast.shape(), slow.shape());
            for (a, b) in fast.data.iter().zip(&slow.data) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv_backward_is_the_adjoint() {
        // <conv(x), g> must equal <x, conv^T(g)> + bias term, and weight grads
        // must equal <d conv / d w, g>.
        let (ic, oc, h, w, k, s) = (2, 3, 6, 5, 3, 2);
        let x = filled(ic, h, w, 4);
        let wt = filled(oc * ic, k, k, 5).data;
        let b = alloc::vec![0.0; oc];
        let y = conv2d(&x, &wt, &b, oc, k, s);
        let g = filled(oc, y.h, y.w, 6);
        let mut gw = alloc::vec![0.0; wt.len()];
        let mut gb = alloc::vec![0.0; oc];
        let gx = conv2d_backward(&x, &wt, k, s, &g, &mut gw, &mut gb, true).unwrap();
        let lhs: f64 = y.data.iter().zip(&g.data).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data.iter().zip(&gx.data).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
        let rhs_w: f64 = wt.iter().zip(&gw).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs_w).abs() < 1e-10);
        let sum_g: Vec<f64> = (0..oc).map(|o| g.plane(o).iter().sum()).collect();
        assert_eq!(gb, sum_g);
    }

    #[test]
    fn upsample_backward_is_the_adjoint() {
        let x = filled(2, 3, 4, 7);
        let up = upsample(&x, 2);
        assert_eq!(up.shape(), (2, 6, 8));
        let g = filled(2, 6, 8, 8);
        let back = upsample_backward(&g, 2);
        let lhs: f64 = up.data.iter().zip(&g.data).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data.iter().zip(&back.data).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn reflect_padding_and_crop() {
        let data: Vec<f32> = (0..49 * 3).map(|i| i as f32).collect();
        let p: Maps<f32> = reflect_pad(&data, 49, 3, 4);
        assert_eq!(p.shape(), (1, 52, 4));
        // row 49 mirrors row 47, column 3 mirrors column 1
        assert_eq!(p.data[49 * 4], data[47 * 3]);
        assert_eq!(p.data[51 * 4], data[45 * 3]);
        assert_eq!(p.data[3], data[1]);
        let c = p.crop(49, 3);
        assert_eq!(c.data, data);
        let u = c.uncrop(52, 4);
        assert_eq!(u.crop(49, 3), c);
        assert_eq!(u.data[3], 0.0);
    }
}
