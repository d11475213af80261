//! CPU kernels with hand-written backward passes: im2col/gemm convolution,
//! depthwise convolution, max pooling and training-mode batch norm.

use std::sync::{Arc, Mutex};

use candle_core::{
    backend::BackendStorage, CpuStorage, CustomOp1, CustomOp2, CustomOp3, DType, Layout, Result, Shape, Tensor,
    WithDType,
};

pub trait Float: WithDType {
    fn neg_infinity() -> Self;
}

impl Float for f32 {
    fn neg_infinity() -> Self {
        f32::NEG_INFINITY
    }
}

impl Float for f64 {
    fn neg_infinity() -> Self {
        f64::NEG_INFINITY
    }
}

fn slice<'a, T: Float>(s: &'a CpuStorage, l: &Layout) -> Result<&'a [T]> {
    let data = T::cpu_storage_as_slice(s)?;
    match l.contiguous_offsets() {
        Some((a, b)) => Ok(&data[a..b]),
        None => candle_core::bail!("kernel input must be contiguous"),
    }
}

macro_rules! dispatch {
    ($s:expr, $f:ident ( $($arg:expr),* )) => {
        match $s.dtype() {
            DType::F32 => $f::<f32>($($arg),*),
            DType::F64 => $f::<f64>($($arg),*),
            dt => candle_core::bail!("unsupported dtype {dt:?}"),
        }
    };
}

/// Row-major `dst (m×n) [+]= lhs (m×k) · rhs (k×n)` where lhs/rhs are given
/// by their (row, col) strides.
#[allow(clippy::too_many_arguments)]
fn gemm<T: Float>(
    m: usize,
    n: usize,
    k: usize,
    dst: &mut [T],
    accumulate: bool,
    lhs: &[T],
    lhs_rs: usize,
    lhs_cs: usize,
    rhs: &[T],
    rhs_rs: usize,
    rhs_cs: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            dst[..m * n].fill(T::zero());
        }
        return;
    }
    debug_assert!(dst.len() >= m * n);
    debug_assert!(lhs.len() > (m - 1) * lhs_rs + (k - 1) * lhs_cs);
    debug_assert!(rhs.len() > (k - 1) * rhs_rs + (n - 1) * rhs_cs);
    // SAFETY: the asserts above bound every index gemm touches.
    unsafe {
        gemm::gemm(
            m,
            n,
            k,
            dst.as_mut_ptr(),
            1,
            n as isize,
            accumulate,
            lhs.as_ptr(),
            lhs_cs as isize,
            lhs_rs as isize,
            rhs.as_ptr(),
            rhs_cs as isize,
            rhs_rs as isize,
            if accumulate { T::one() } else { T::zero() },
            T::one(),
            false,
            false,
            false,
            gemm::Parallelism::None,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvCfg {
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub groups: usize,
}

impl ConvCfg {
    pub fn out_hw(&self, h: usize, w: usize, kh: usize, kw: usize) -> Result<(usize, usize)> {
        let (ph, pw) = self.padding;
        if h + 2 * ph < kh || w + 2 * pw < kw {
            candle_core::bail!("input {h}x{w} smaller than kernel {kh}x{kw}");
        }
        Ok(((h + 2 * ph - kh) / self.stride.0 + 1, (w + 2 * pw - kw) / self.stride.1 + 1))
    }

    fn pointwise(&self, kh: usize, kw: usize) -> bool {
        kh == 1 && kw == 1 && self.stride == (1, 1) && self.padding == (0, 0)
    }
}

/// Geometry of one image-and-group convolution slice.
#[derive(Clone, Copy)]
struct Geo {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    sh: usize,
    sw: usize,
    ph: usize,
    pw: usize,
}

impl Geo {
    fn k(&self) -> usize {
        self.c * self.kh * self.kw
    }
    fn p(&self) -> usize {
        self.oh * self.ow
    }
}

/// Valid output columns `ow` for kernel column `j`: `0 <= ow*s + j - p < w`.
fn valid_range(out: usize, inp: usize, s: usize, j: usize, p: usize) -> (usize, usize) {
    let lo = if j >= p { 0 } else { (p - j).div_ceil(s) };
    let hi = if inp + p > j { ((inp + p - j - 1) / s + 1).min(out) } else { 0 };
    (lo.min(hi), hi)
}

fn im2col<T: Float>(x: &[T], g: Geo, cols: &mut [T]) {
    let p = g.p();
    for c in 0..g.c {
        let xc = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = &mut cols[((c * g.kh + i) * g.kw + j) * p..][..p];
                let (lo, hi) = valid_range(g.ow, g.w, g.sw, j, g.pw);
                for oy in 0..g.oh {
                    let dst = &mut row[oy * g.ow..(oy + 1) * g.ow];
                    let iy = (oy * g.sh + i) as isize - g.ph as isize;
                    if iy < 0 || iy >= g.h as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src = &xc[iy as usize * g.w..][..g.w];
                    dst[..lo].fill(T::zero());
                    dst[hi..].fill(T::zero());
                    if g.sw == 1 {
                        let start = lo + j - g.pw;
                        dst[lo..hi].copy_from_slice(&src[start..start + hi - lo]);
                    } else {
                        for ox in lo..hi {
                            dst[ox] = src[ox * g.sw + j - g.pw];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of `im2col`: accumulates columns back into the image `dx`.
fn col2im<T: Float>(cols: &[T], g: Geo, dx: &mut [T]) {
    let p = g.p();
    for c in 0..g.c {
        let xc = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = &cols[((c * g.kh + i) * g.kw + j) * p..][..p];
                let (lo, hi) = valid_range(g.ow, g.w, g.sw, j, g.pw);
                for oy in 0..g.oh {
                    let iy = (oy * g.sh + i) as isize - g.ph as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let src = &row[oy * g.ow..(oy + 1) * g.ow];
                    let dst = &mut xc[iy as usize * g.w..][..g.w];
                    for ox in lo..hi {
                        dst[ox * g.sw + j - g.pw] += src[ox];
                    }
                }
            }
        }
    }
}

struct ConvDims {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    o: usize,
    kh: usize,
    kw: usize,
}

impl ConvDims {
    fn geo(&self, cfg: &ConvCfg) -> Result<Geo> {
        let (oh, ow) = cfg.out_hw(self.h, self.w, self.kh, self.kw)?;
        Ok(Geo {
            c: self.c / cfg.groups,
            h: self.h,
            w: self.w,
            kh: self.kh,
            kw: self.kw,
            oh,
            ow,
            sh: cfg.stride.0,
            sw: cfg.stride.1,
            ph: cfg.padding.0,
            pw: cfg.padding.1,
        })
    }
}

fn conv_dims(x: &[usize], w: &[usize], groups: usize) -> Result<ConvDims> {
    let (&[n, c, h, wd], &[o, cg, kh, kw]) = (x, w) else {
        candle_core::bail!("conv2d expects 4d input and weight, got {x:?} and {w:?}");
    };
    if groups == 0 || c % groups != 0 || o % groups != 0 || cg != c / groups {
        candle_core::bail!("conv2d: input {x:?} incompatible with weight {w:?} for {groups} groups");
    }
    Ok(ConvDims { n, c, h, w: wd, o, kh, kw })
}

fn conv_fwd<T: Float>(x: &[T], w: &[T], d: &ConvDims, cfg: &ConvCfg) -> Result<(CpuStorage, Shape)> {
    let g = d.geo(cfg)?;
    let (k, p, og) = (g.k(), g.p(), d.o / cfg.groups);
    let mut out = vec![T::zero(); d.n * d.o * p];
    let pointwise = cfg.pointwise(d.kh, d.kw);
    let mut cols = if pointwise { Vec::new() } else { vec![T::zero(); k * p] };
    for n in 0..d.n {
        for gi in 0..cfg.groups {
            let xs = &x[(n * d.c + gi * g.c) * d.h * d.w..][..g.c * d.h * d.w];
            let rhs: &[T] = if pointwise {
                xs
            } else {
                im2col(xs, g, &mut cols);
                &cols
            };
            let dst = &mut out[(n * d.o + gi * og) * p..][..og * p];
            gemm(og, p, k, dst, false, &w[gi * og * k..], k, 1, rhs, p, 1);
        }
    }
    Ok((T::to_cpu_storage_owned(out), Shape::from((d.n, d.o, g.oh, g.ow))))
}

fn conv_grad_input<T: Float>(gy: &[T], w: &[T], d: &ConvDims, cfg: &ConvCfg) -> Result<(CpuStorage, Shape)> {
    let g = d.geo(cfg)?;
    let (k, p, og) = (g.k(), g.p(), d.o / cfg.groups);
    let mut dx = vec![T::zero(); d.n * d.c * d.h * d.w];
    let pointwise = cfg.pointwise(d.kh, d.kw);
    let mut cols = vec![T::zero(); if pointwise { 0 } else { k * p }];
    for n in 0..d.n {
        for gi in 0..cfg.groups {
            let gys = &gy[(n * d.o + gi * og) * p..][..og * p];
            let wg = &w[gi * og * k..];
            let dxs = &mut dx[(n * d.c + gi * g.c) * d.h * d.w..][..g.c * d.h * d.w];
            if pointwise {
                gemm(k, p, og, dxs, false, wg, 1, k, gys, p, 1);
            } else {
                gemm(k, p, og, &mut cols, false, wg, 1, k, gys, p, 1);
                col2im(&cols, g, dxs);
            }
        }
    }
    Ok((T::to_cpu_storage_owned(dx), Shape::from((d.n, d.c, d.h, d.w))))
}

fn conv_grad_weight<T: Float>(x: &[T], gy: &[T], d: &ConvDims, cfg: &ConvCfg) -> Result<(CpuStorage, Shape)> {
    let g = d.geo(cfg)?;
    let (k, p, og) = (g.k(), g.p(), d.o / cfg.groups);
    let mut dw = vec![T::zero(); d.o * k];
    let pointwise = cfg.pointwise(d.kh, d.kw);
    let mut cols = vec![T::zero(); if pointwise { 0 } else { k * p }];
    for n in 0..d.n {
        for gi in 0..cfg.groups {
            let xs = &x[(n * d.c + gi * g.c) * d.h * d.w..][..g.c * d.h * d.w];
            let rhs: &[T] = if pointwise {
                xs
            } else {
                im2col(xs, g, &mut cols);
                &cols
            };
            let gys = &gy[(n * d.o + gi * og) * p..][..og * p];
            gemm(og, k, p, &mut dw[gi * og * k..][..og * k], n > 0, gys, p, 1, rhs, 1, p);
        }
    }
    Ok((T::to_cpu_storage_owned(dw), Shape::from((d.o, g.c, d.kh, d.kw))))
}

struct Conv2d(ConvCfg);
struct Conv2dGradInput {
    cfg: ConvCfg,
    input: (usize, usize, usize, usize),
}
struct Conv2dGradWeight {
    cfg: ConvCfg,
    weight: (usize, usize, usize, usize),
}

impl CustomOp2 for Conv2d {
    fn name(&self) -> &'static str {
        "mv-conv2d"
    }

    fn cpu_fwd(&self, s1: &CpuStorage, l1: &Layout, s2: &CpuStorage, l2: &Layout) -> Result<(CpuStorage, Shape)> {
        let d = conv_dims(l1.dims(), l2.dims(), self.0.groups)?;
        dispatch!(s1, conv_fwd_s(s1, l1, s2, l2, &d, &self.0))
    }

    fn bwd(&self, x: &Tensor, w: &Tensor, _res: &Tensor, gy: &Tensor) -> Result<(Option<Tensor>, Option<Tensor>)> {
        let gy = gy.contiguous()?;
        let gx = gy.apply_op2_no_bwd(w, &Conv2dGradInput { cfg: self.0, input: x.dims4()? })?;
        let gw = x.apply_op2_no_bwd(&gy, &Conv2dGradWeight { cfg: self.0, weight: w.dims4()? })?;
        Ok((Some(gx), Some(gw)))
    }
}

fn conv_fwd_s<T: Float>(
    s1: &CpuStorage,
    l1: &Layout,
    s2: &CpuStorage,
    l2: &Layout,
    d: &ConvDims,
    cfg: &ConvCfg,
) -> Result<(CpuStorage, Shape)> {
    conv_fwd(slice::<T>(s1, l1)?, slice::<T>(s2, l2)?, d, cfg)
}

fn conv_gi_s<T: Float>(
    s1: &CpuStorage,
    l1: &Layout,
    s2: &CpuStorage,
    l2: &Layout,
    d: &ConvDims,
    cfg: &ConvCfg,
) -> Result<(CpuStorage, Shape)> {
    conv_grad_input(slice::<T>(s1, l1)?, slice::<T>(s2, l2)?, d, cfg)
}

fn conv_gw_s<T: Float>(
    s1: &CpuStorage,
    l1: &Layout,
    s2: &CpuStorage,
    l2: &Layout,
    d: &ConvDims,
    cfg: &ConvCfg,
) -> Result<(CpuStorage, Shape)> {
    conv_grad_weight(slice::<T>(s1, l1)?, slice::<T>(s2, l2)?, d, cfg)
}

impl CustomOp2 for Conv2dGradInput {
    fn name(&self) -> &'static str {
        "mv-conv2d-grad-input"
    }

    fn cpu_fwd(&self, s1: &CpuStorage, l1: &Layout, s2: &CpuStorage, l2: &Layout) -> Result<(CpuStorage, Shape)> {
        let (n, c, h, w) = self.input;
        let (o, _, kh, kw) = l2.shape().dims4()?;
        let d = ConvDims { n, c, h, w, o, kh, kw };
        dispatch!(s1, conv_gi_s(s1, l1, s2, l2, &d, &self.cfg))
    }
}

impl CustomOp2 for Conv2dGradWeight {
    fn name(&self) -> &'static str {
        "mv-conv2d-grad-weight"
    }

    fn cpu_fwd(&self, s1: &CpuStorage, l1: &Layout, s2: &CpuStorage, l2: &Layout) -> Result<(CpuStorage, Shape)> {
        let (n, c, h, w) = l1.shape().dims4()?;
        let (o, _, kh, kw) = self.weight;
        let d = ConvDims { n, c, h, w, o, kh, kw };
        dispatch!(s1, conv_gw_s(s1, l1, s2, l2, &d, &self.cfg))
    }
}

/// 2d convolution without bias. Depthwise weights (groups == channels ==
/// outputs) take a dedicated direct kernel.
pub fn conv2d(x: &Tensor, w: &Tensor, cfg: ConvCfg) -> Result<Tensor> {
    let x = x.contiguous()?;
    let w = w.contiguous()?;
    let (_, c, _, _) = x.dims4()?;
    let (o, cg, _, _) = w.dims4()?;
    if cfg.groups > 1 && cfg.groups == c && o == c && cg == 1 {
        return x.apply_op2(&w, Depthwise(cfg));
    }
    x.apply_op2(&w, Conv2d(cfg))
}

struct Depthwise(ConvCfg);
#[derive(Clone, Copy)]
enum DwMode {
    GradInput,
    GradWeight,
}
struct DepthwiseGrad {
    cfg: ConvCfg,
    mode: DwMode,
    other: (usize, usize, usize, usize),
}

/// Calls `f(oy, iy, lo, hi, off)` for each output row touched by kernel
/// tap (i, j): output columns `lo..hi` read input column `ox*s + off`.
#[inline]
fn dw_taps(g: &Geo, i: usize, j: usize, mut f: impl FnMut(usize, usize, usize, usize, isize)) {
    let (lo, hi) = valid_range(g.ow, g.w, g.sw, j, g.pw);
    if lo >= hi {
        return;
    }
    for oy in 0..g.oh {
        let iy = (oy * g.sh + i) as isize - g.ph as isize;
        if iy < 0 || iy >= g.h as isize {
            continue;
        }
        f(oy, iy as usize, lo, hi, j as isize - g.pw as isize);
    }
}

fn dw_geo(cfg: &ConvCfg, c: usize, h: usize, w: usize, kh: usize, kw: usize) -> Result<Geo> {
    let (oh, ow) = cfg.out_hw(h, w, kh, kw)?;
    Ok(Geo { c, h, w, kh, kw, oh, ow, sh: cfg.stride.0, sw: cfg.stride.1, ph: cfg.padding.0, pw: cfg.padding.1 })
}

fn dw_fwd<T: Float>(x: &[T], wt: &[T], n: usize, g: Geo) -> (Vec<T>, Shape) {
    let (hw, ohw, kk) = (g.h * g.w, g.oh * g.ow, g.kh * g.kw);
    let mut y = vec![T::zero(); n * g.c * ohw];
    for b in 0..n {
        for c in 0..g.c {
            let xc = &x[(b * g.c + c) * hw..][..hw];
            let yc = &mut y[(b * g.c + c) * ohw..][..ohw];
            for i in 0..g.kh {
                for j in 0..g.kw {
                    let wv = wt[c * kk + i * g.kw + j];
                    dw_taps(&g, i, j, |oy, iy, lo, hi, off| {
                        let src = &xc[iy * g.w..][..g.w];
                        let dst = &mut yc[oy * g.ow..][..g.ow];
                        if g.sw == 1 {
                            let s0 = (lo as isize + off) as usize;
                            for (d, &s) in dst[lo..hi].iter_mut().zip(&src[s0..s0 + hi - lo]) {
                                *d += wv * s;
                            }
                        } else {
                            for ox in lo..hi {
                                dst[ox] += wv * src[((ox * g.sw) as isize + off) as usize];
                            }
                        }
                    });
                }
            }
        }
    }
    (y, Shape::from((n, g.c, g.oh, g.ow)))
}

fn dw_grad_input<T: Float>(gy: &[T], wt: &[T], n: usize, g: Geo) -> Vec<T> {
    let (hw, ohw, kk) = (g.h * g.w, g.oh * g.ow, g.kh * g.kw);
    let mut dx = vec![T::zero(); n * g.c * hw];
    for b in 0..n {
        for c in 0..g.c {
            let gc = &gy[(b * g.c + c) * ohw..][..ohw];
            let dc = &mut dx[(b * g.c + c) * hw..][..hw];
            for i in 0..g.kh {
                for j in 0..g.kw {
                    let wv = wt[c * kk + i * g.kw + j];
                    dw_taps(&g, i, j, |oy, iy, lo, hi, off| {
                        let src = &gc[oy * g.ow..][..g.ow];
                        let dst = &mut dc[iy * g.w..][..g.w];
                        for ox in lo..hi {
                            dst[((ox * g.sw) as isize + off) as usize] += wv * src[ox];
                        }
                    });
                }
            }
        }
    }
    dx
}

fn dw_grad_weight<T: Float>(x: &[T], gy: &[T], n: usize, g: Geo) -> Vec<T> {
    let (hw, ohw, kk) = (g.h * g.w, g.oh * g.ow, g.kh * g.kw);
    let mut dw = vec![T::zero(); g.c * kk];
    for b in 0..n {
        for c in 0..g.c {
            let xc = &x[(b * g.c + c) * hw..][..hw];
            let gc = &gy[(b * g.c + c) * ohw..][..ohw];
            for i in 0..g.kh {
                for j in 0..g.kw {
                    let mut acc = T::zero();
                    dw_taps(&g, i, j, |oy, iy, lo, hi, off| {
                        let src = &xc[iy * g.w..][..g.w];
                        let gr = &gc[oy * g.ow..][..g.ow];
                        for ox in lo..hi {
                            acc += gr[ox] * src[((ox * g.sw) as isize + off) as usize];
                        }
                    });
                    dw[c * kk + i * g.kw + j] += acc;
                }
            }
        }
    }
    dw
}

fn dw_fwd_s<T: Float>(s1: &CpuStorage, l1: &Layout, s2: &CpuStorage, l2: &Layout, cfg: &ConvCfg) -> Result<(CpuStorage, Shape)> {
    let (n, c, h, w) = l1.shape().dims4()?;
    let (_, _, kh, kw) = l2.shape().dims4()?;
    let g = dw_geo(cfg, c, h, w, kh, kw)?;
    let (y, shape) = dw_fwd(slice::<T>(s1, l1)?, slice::<T>(s2, l2)?, n, g);
    Ok((T::to_cpu_storage_owned(y), shape))
}

fn dw_grad_s<T: Float>(
    s1: &CpuStorage,
    l1: &Layout,
    s2: &CpuStorage,
    l2: &Layout,
    op: &DepthwiseGrad,
) -> Result<(CpuStorage, Shape)> {
    let a = slice::<T>(s1, l1)?;
    let b = slice::<T>(s2, l2)?;
    match op.mode {
        DwMode::GradInput => {
            // (gy, w) -> dx; `other` holds the input shape.
            let (n, c, h, w) = op.other;
            let (_, _, kh, kw) = l2.shape().dims4()?;
            let g = dw_geo(&op.cfg, c, h, w, kh, kw)?;
            Ok((T::to_cpu_storage_owned(dw_grad_input(a, b, n, g)), Shape::from(op.other)))
        }
        DwMode::GradWeight => {
            // (x, gy) -> dw; `other` holds the weight shape.
            let (n, c, h, w) = l1.shape().dims4()?;
            let (_, _, kh, kw) = op.other;
            let g = dw_geo(&op.cfg, c, h, w, kh, kw)?;
            Ok((T::to_cpu_storage_owned(dw_grad_weight(a, b, n, g)), Shape::from(op.other)))
        }
    }
}

impl CustomOp2 for Depthwise {
    fn name(&self) -> &'static str {
        "mv-depthwise-conv2d"
    }

    fn cpu_fwd(&self, s1: &CpuStorage, l1: &Layout, s2: &CpuStorage, l2: &Layout) -> Result<(CpuStorage, Shape)> {
        dispatch!(s1, dw_fwd_s(s1, l1, s2, l2, &self.0))
    }

    fn bwd(&self, x: &Tensor, w: &Tensor, _res: &Tensor, gy: &Tensor) -> Result<(Option<Tensor>, Option<Tensor>)> {
        let gy = gy.contiguous()?;
        let gx = gy.apply_op2_no_bwd(w, &DepthwiseGrad { cfg: self.0, mode: DwMode::GradInput, other: x.dims4()? })?;
        let gw = x.apply_op2_no_bwd(&gy, &DepthwiseGrad { cfg: self.0, mode: DwMode::GradWeight, other: w.dims4()? })?;
        Ok((Some(gx), Some(gw)))
    }
}

impl CustomOp2 for DepthwiseGrad {
    fn name(&self) -> &'static str {
        "mv-depthwise-conv2d-grad"
    }

    fn cpu_fwd(&self, s1: &CpuStorage, l1: &Layout, s2: &CpuStorage, l2: &Layout) -> Result<(CpuStorage, Shape)> {
        dispatch!(s1, dw_grad_s(s1, l1, s2, l2, self))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct PoolCfg {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

struct MaxPool(PoolCfg);
struct MaxPoolGrad(PoolCfg);

fn pool_geo(cfg: &PoolCfg, h: usize, w: usize) -> Result<Geo> {
    let conv = ConvCfg { stride: (cfg.stride, cfg.stride), padding: (cfg.padding, cfg.padding), groups: 1 };
    dw_geo(&conv, 1, h, w, cfg.kernel, cfg.kernel)
}

/// Flat input index of the maximum in each pooling window (first on ties).
fn max_pool_argmax<T: Float>(x: &[T], planes: usize, g: &Geo, mut f: impl FnMut(usize, usize, T)) {
    let (hw, ohw) = (g.h * g.w, g.oh * g.ow);
    for p in 0..planes {
        let xp = &x[p * hw..][..hw];
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let mut best = T::neg_infinity();
                let mut arg = usize::MAX;
                for i in 0..g.kh {
                    let iy = (oy * g.sh + i) as isize - g.ph as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    for j in 0..g.kw {
                        let ix = (ox * g.sw + j) as isize - g.pw as isize;
                        if ix < 0 || ix >= g.w as isize {
                            continue;
                        }
                        let idx = iy as usize * g.w + ix as usize;
                        if arg == usize::MAX || xp[idx] > best {
                            best = xp[idx];
                            arg = idx;
                        }
                    }
                }
                f(p * ohw + oy * g.ow + ox, p * hw + arg, best);
            }
        }
    }
}

fn max_pool_s<T: Float>(s: &CpuStorage, l: &Layout, cfg: &PoolCfg) -> Result<(CpuStorage, Shape)> {
    let (n, c, h, w) = l.shape().dims4()?;
    let g = pool_geo(cfg, h, w)?;
    let x = slice::<T>(s, l)?;
    let mut y = vec![T::zero(); n * c * g.oh * g.ow];
    max_pool_argmax(x, n * c, &g, |o, _, v| y[o] = v);
    Ok((T::to_cpu_storage_owned(y), Shape::from((n, c, g.oh, g.ow))))
}

fn max_pool_grad_s<T: Float>(s1: &CpuStorage, l1: &Layout, s2: &CpuStorage, l2: &Layout, cfg: &PoolCfg) -> Result<(CpuStorage, Shape)> {
    let (n, c, h, w) = l1.shape().dims4()?;
    let g = pool_geo(cfg, h, w)?;
    let x = slice::<T>(s1, l1)?;
    let gy = slice::<T>(s2, l2)?;
    let mut dx = vec![T::zero(); x.len()];
    max_pool_argmax(x, n * c, &g, |o, i, _| dx[i] += gy[o]);
    Ok((T::to_cpu_storage_owned(dx), Shape::from((n, c, h, w))))
}

impl CustomOp1 for MaxPool {
    fn name(&self) -> &'static str {
        "mv-max-pool2d"
    }

    fn cpu_fwd(&self, s: &CpuStorage, l: &Layout) -> Result<(CpuStorage, Shape)> {
        dispatch!(s, max_pool_s(s, l, &self.0))
    }

    fn bwd(&self, x: &Tensor, _res: &Tensor, gy: &Tensor) -> Result<Option<Tensor>> {
        Ok(Some(x.apply_op2_no_bwd(&gy.contiguous()?, &MaxPoolGrad(self.0))?))
    }
}

impl CustomOp2 for MaxPoolGrad {
    fn name(&self) -> &'static str {
        "mv-max-pool2d-grad"
    }

    fn cpu_fwd(&self, s1: &CpuStorage, l1: &Layout, s2: &CpuStorage, l2: &Layout) -> Result<(CpuStorage, Shape)> {
        dispatch!(s1, max_pool_grad_s(s1, l1, s2, l2, &self.0))
    }
}

/// Max pooling with implicit -inf padding.
pub fn max_pool2d(x: &Tensor, cfg: PoolCfg) -> Result<Tensor> {
    x.contiguous()?.apply_op1(MaxPool(cfg))
}

/// Per-channel (mean, biased variance) over N, H, W.
fn channel_stats<T: Float>(x: &[T], n: usize, c: usize, hw: usize) -> (Vec<f64>, Vec<f64>) {
    let m = (n * hw) as f64;
    let mut mean = vec![0f64; c];
    let mut var = vec![0f64; c];
    for ch in 0..c {
        let mut s = 0f64;
        for b in 0..n {
            for &v in &x[(b * c + ch) * hw..][..hw] {
                s += v.to_f64();
            }
        }
        let mu = s / m;
        let mut q = 0f64;
        for b in 0..n {
            for &v in &x[(b * c + ch) * hw..][..hw] {
                let d = v.to_f64() - mu;
                q += d * d;
            }
        }
        mean[ch] = mu;
        var[ch] = q / m;
    }
    (mean, var)
}

pub type SharedStats = Arc<Mutex<Option<(Vec<f64>, Vec<f64>)>>>;

/// Batch-statistics normalization with affine parameters. The batch mean
/// and biased variance of the last forward call are published in `stats`.
pub struct BatchNormTrain {
    pub eps: f64,
    pub stats: SharedStats,
}

fn bn_fwd_s<T: Float>(
    xs: &CpuStorage,
    xl: &Layout,
    gs: &CpuStorage,
    gl: &Layout,
    bs: &CpuStorage,
    bl: &Layout,
    op: &BatchNormTrain,
) -> Result<(CpuStorage, Shape)> {
    let (n, c, h, w) = xl.shape().dims4()?;
    let x = slice::<T>(xs, xl)?;
    let gamma = slice::<T>(gs, gl)?;
    let beta = slice::<T>(bs, bl)?;
    let hw = h * w;
    let (mean, var) = channel_stats(x, n, c, hw);
    let mut y = vec![T::zero(); x.len()];
    for ch in 0..c {
        let inv = 1.0 / (var[ch] + op.eps).sqrt();
        let scale = T::from_f64(gamma[ch].to_f64() * inv);
        let shift = T::from_f64(beta[ch].to_f64() - mean[ch] * gamma[ch].to_f64() * inv);
        for b in 0..n {
            let o = (b * c + ch) * hw;
            for (d, &s) in y[o..o + hw].iter_mut().zip(&x[o..o + hw]) {
                *d = s * scale + shift;
            }
        }
    }
    *op.stats.lock().unwrap() = Some((mean, var));
    Ok((T::to_cpu_storage_owned(y), Shape::from((n, c, h, w))))
}

fn bn_bwd<T: Float>(x: &Tensor, gamma: &Tensor, gy: &Tensor, eps: f64) -> Result<(Tensor, Tensor, Tensor)> {
    let (n, c, h, w) = x.dims4()?;
    let hw = h * w;
    let m = (n * hw) as f64;
    let xv = x.flatten_all()?.to_vec1::<T>()?;
    let gv = gy.flatten_all()?.to_vec1::<T>()?;
    let gam = gamma.to_vec1::<T>()?;
    let (mean, var) = channel_stats(&xv, n, c, hw);
    let mut dx = vec![T::zero(); xv.len()];
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for ch in 0..c {
        let inv = 1.0 / (var[ch] + eps).sqrt();
        let (mut sg, mut sgx) = (0f64, 0f64);
        for b in 0..n {
            let o = (b * c + ch) * hw;
            for k in o..o + hw {
                let g = gv[k].to_f64();
                sg += g;
                sgx += g * (xv[k].to_f64() - mean[ch]) * inv;
            }
        }
        dbeta[ch] = T::from_f64(sg);
        dgamma[ch] = T::from_f64(sgx);
        let a = gam[ch].to_f64() * inv;
        for b in 0..n {
            let o = (b * c + ch) * hw;
            for k in o..o + hw {
                let xhat = (xv[k].to_f64() - mean[ch]) * inv;
                dx[k] = T::from_f64(a * (gv[k].to_f64() - sg / m - xhat * sgx / m));
            }
        }
    }
    let dev = x.device();
    Ok((
        Tensor::from_vec(dx, (n, c, h, w), dev)?,
        Tensor::from_vec(dgamma, c, dev)?,
        Tensor::from_vec(dbeta, c, dev)?,
    ))
}

impl CustomOp3 for BatchNormTrain {
    fn name(&self) -> &'static str {
        "mv-batch-norm-train"
    }

    fn cpu_fwd(
        &self,
        s1: &CpuStorage,
        l1: &Layout,
        s2: &CpuStorage,
        l2: &Layout,
        s3: &CpuStorage,
        l3: &Layout,
    ) -> Result<(CpuStorage, Shape)> {
        dispatch!(s1, bn_fwd_s(s1, l1, s2, l2, s3, l3, self))
    }

    fn bwd(
        &self,
        x: &Tensor,
        gamma: &Tensor,
        _beta: &Tensor,
        _res: &Tensor,
        gy: &Tensor,
    ) -> Result<(Option<Tensor>, Option<Tensor>, Option<Tensor>)> {
        let (dx, dg, db) = match x.dtype() {
            DType::F32 => bn_bwd::<f32>(x, gamma, gy, self.eps)?,
            DType::F64 => bn_bwd::<f64>(x, gamma, gy, self.eps)?,
            dt => candle_core::bail!("unsupported dtype {dt:?}"),
        };
        Ok((Some(dx), Some(dg), Some(db)))
    }
}

/// Training-mode batch norm; returns the output and the batch statistics.
pub fn batch_norm_train(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<(Tensor, Vec<f64>, Vec<f64>)> {
    let stats: SharedStats = Arc::default();
    let y = x.contiguous()?.apply_op3(gamma, beta, BatchNormTrain { eps, stats: stats.clone() })?;
    let (mean, var) = stats.lock().unwrap().take().expect("forward publishes stats");
    Ok((y, mean, var))
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{Device, Var};

    fn rand_t(shape: &[usize], seed: u64) -> Tensor {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let n: usize = shape.iter().product();
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        Tensor::from_vec(v, shape, &Device::Cpu).unwrap()
    }

    /// Reference convolution by direct summation.
    fn naive_conv(x: &Tensor, w: &Tensor, cfg: ConvCfg) -> Tensor {
        let (n, c, h, wd) = x.dims4().unwrap();
        let (o, cg, kh, kw) = w.dims4().unwrap();
        let (oh, ow) = cfg.out_hw(h, wd, kh, kw).unwrap();
        let xv = x.flatten_all().unwrap().to_vec1::<f64>().unwrap();
        let wv = w.flatten_all().unwrap().to_vec1::<f64>().unwrap();
        let og = o / cfg.groups;
        let mut y = vec![0f64; n * o * oh * ow];
        for b in 0..n {
            for oc in 0..o {
                let gi = oc / og;
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut s = 0.0;
                        for ic in 0..cg {
                            let cin = gi * cg + ic;
                            for i in 0..kh {
                                for j in 0..kw {
                                    let iy = (oy * cfg.stride.0 + i) as isize - cfg.padding.0 as isize;
                                    let ix = (ox * cfg.stride.1 + j) as isize - cfg.padding.1 as isize;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                        s += xv[((b * c + cin) * h + iy as usize) * wd + ix as usize]
                                            * wv[((oc * cg + ic) * kh + i) * kw + j];
                                    }
                                }
                            }
                        }
                        y[((b * o + oc) * oh + oy) * ow + ox] = s;
                    }
                }
            }
        }
        Tensor::from_vec(y, (n, o, oh, ow), &Device::Cpu).unwrap()
    }

    fn max_abs(a: &Tensor, b: &Tensor) -> f64 {
        (a - b).unwrap().abs().unwrap().flatten_all().unwrap().max(0).unwrap().to_scalar::<f64>().unwrap()
    }

    /// Checks d(sum(f(x) * r))/dx against central differences on a few entries.
    fn check_grad(x: &Tensor, f: impl Fn(&Tensor) -> Tensor) {
        let xv = Var::from_tensor(x).unwrap();
        let y = f(xv.as_tensor());
        let r = rand_t(y.dims(), 99);
        let loss = (&y * &r).unwrap().sum_all().unwrap();
        let grads = loss.backward().unwrap();
        let g = grads.get(xv.as_tensor()).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap();
        let base = x.flatten_all().unwrap().to_vec1::<f64>().unwrap();
        let eps = 1e-5;
        for idx in (0..base.len()).step_by((base.len() / 17).max(1)) {
            let at = |d: f64| {
                let mut v = base.clone();
                v[idx] += d;
                let t = Tensor::from_vec(v, x.dims(), &Device::Cpu).unwrap();
                (f(&t) * &r).unwrap().sum_all().unwrap().to_scalar::<f64>().unwrap()
            };
            let fd = (at(eps) - at(-eps)) / (2.0 * eps);
            assert!((fd - g[idx]).abs() <= 1e-6 * (1.0 + fd.abs()), "idx {idx}: fd {fd} vs analytic {}", g[idx]);
        }
    }

    const CASES: [(usize, usize, usize, usize, usize); 6] = [
        // (k, stride, padding, groups, cin)
        (3, 1, 1, 1, 3),
        (3, 2, 1, 1, 4),
        (1, 1, 0, 1, 5),
        (1, 2, 0, 1, 4),
        (4, 4, 0, 1, 2),
        (3, 1, 1, 2, 4),
    ];

    #[test]
    fn conv_matches_naive() {
        for (t, &(k, s, p, g, c)) in CASES.iter().enumerate() {
            let cfg = ConvCfg { stride: (s, s), padding: (p, p), groups: g };
            let x = rand_t(&[2, c, 9, 8], t as u64);
            let w = rand_t(&[6, c / g, k, k], 100 + t as u64);
            let y = conv2d(&x, &w, cfg).unwrap();
            assert!(max_abs(&y, &naive_conv(&x, &w, cfg)) < 1e-12, "case {t}");
        }
    }

    #[test]
    fn conv_gradients() {
        for (t, &(k, s, p, g, c)) in CASES.iter().enumerate() {
            let cfg = ConvCfg { stride: (s, s), padding: (p, p), groups: g };
            let x = rand_t(&[2, c, 9, 8], t as u64);
            let w = rand_t(&[6, c / g, k, k], 100 + t as u64);
            check_grad(&x, |x| conv2d(x, &w, cfg).unwrap());
            check_grad(&w, |w| conv2d(&x, w, cfg).unwrap());
        }
    }

    #[test]
    fn depthwise_matches_naive_and_grads() {
        for (k, s) in [(3, 1), (3, 2), (5, 2), (7, 1)] {
            let cfg = ConvCfg { stride: (s, s), padding: (k / 2, k / 2), groups: 5 };
            let x = rand_t(&[2, 5, 11, 9], k as u64);
            let w = rand_t(&[5, 1, k, k], 7 + s as u64);
            let y = conv2d(&x, &w, cfg).unwrap();
            assert!(max_abs(&y, &naive_conv(&x, &w, cfg)) < 1e-12);
            check_grad(&x, |x| conv2d(x, &w, cfg).unwrap());
            check_grad(&w, |w| conv2d(&x, w, cfg).unwrap());
        }
    }

    #[test]
    fn f32_conv_agrees() {
        let cfg = ConvCfg { stride: (2, 2), padding: (1, 1), groups: 1 };
        let x = rand_t(&[1, 3, 10, 10], 1);
        let w = rand_t(&[4, 3, 3, 3], 2);
        let y64 = conv2d(&x, &w, cfg).unwrap();
        let y32 = conv2d(&x.to_dtype(DType::F32).unwrap(), &w.to_dtype(DType::F32).unwrap(), cfg).unwrap();
        assert!(max_abs(&y64, &y32.to_dtype(DType::F64).unwrap()) < 1e-5);
    }

    #[test]
    fn max_pool_values_and_grad() {
        let x = Tensor::from_vec((0..16).map(|v| v as f64).collect::<Vec<_>>(), (1, 1, 4, 4), &Device::Cpu).unwrap();
        let y = max_pool2d(&x, PoolCfg { kernel: 3, stride: 2, padding: 1 }).unwrap();
        assert_eq!(y.flatten_all().unwrap().to_vec1::<f64>().unwrap(), vec![5.0, 7.0, 13.0, 15.0]);
        let x = rand_t(&[2, 3, 9, 7], 5);
        check_grad(&x, |x| max_pool2d(x, PoolCfg { kernel: 3, stride: 2, padding: 1 }).unwrap());
    }

    #[test]
    fn batch_norm_train_values_and_grads() {
        let x = rand_t(&[3, 4, 5, 5], 11);
        let gamma = rand_t(&[4], 12);
        let beta = rand_t(&[4], 13);
        let (y, mean, var) = batch_norm_train(&x, &gamma, &beta, 1e-5).unwrap();
        let mu = x.mean_keepdim(0).unwrap().mean_keepdim(2).unwrap().mean_keepdim(3).unwrap();
        let xc = x.broadcast_sub(&mu).unwrap();
        let v = xc.sqr().unwrap().mean_keepdim(0).unwrap().mean_keepdim(2).unwrap().mean_keepdim(3).unwrap();
        let want = xc
            .broadcast_div(&(v.clone() + 1e-5).unwrap().sqrt().unwrap())
            .unwrap()
            .broadcast_mul(&gamma.reshape((1, 4, 1, 1)).unwrap())
            .unwrap()
            .broadcast_add(&beta.reshape((1, 4, 1, 1)).unwrap())
            .unwrap();
        assert!(max_abs(&y, &want) < 1e-12);
        let mu = mu.flatten_all().unwrap().to_vec1::<f64>().unwrap();
        assert!((mean[2] - mu[2]).abs() < 1e-12);
        assert!((var[1] - v.flatten_all().unwrap().to_vec1::<f64>().unwrap()[1]).abs() < 1e-12);
        check_grad(&x, |x| batch_norm_train(x, &gamma, &beta, 1e-5).unwrap().0);
        check_grad(&gamma, |g| batch_norm_train(&x, g, &beta, 1e-5).unwrap().0);
        check_grad(&beta, |b| batch_norm_train(&x, &gamma, b, 1e-5).unwrap().0);
    }
}
