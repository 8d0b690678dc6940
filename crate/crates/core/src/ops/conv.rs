//! Grouped 2-D convolution with zero padding, and its analytic gradient.
//!
//! Kernels are laid out `(out_ch, in_ch / groups, kh, kw)`. Output channel `oc`
//! belongs to group `oc / (out_ch / groups)` and only sees the input channels of
//! that group. `groups == in_ch == out_ch` is a depthwise convolution.
//!
//! Batch samples are processed in parallel; kernel and bias gradients are
//! reduced over samples in index order so results do not depend on the thread
//! count.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{Dims, Real, Tensor4};

/// Geometry shared by every convolution call.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ConvSpec {
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl ConvSpec {
    pub fn new(stride: usize, padding: usize, groups: usize) -> Self {
        ConvSpec { stride, padding, groups }
    }

    /// `same`-style padding for an odd kernel.
    pub fn same(kernel: usize, stride: usize, groups: usize) -> Self {
        ConvSpec::new(stride, kernel / 2, groups)
    }
}

/// Kernel, bias and geometry of one convolution.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvParams {
    pub kernel: Tensor4,
    pub bias: Vec<Real>,
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl ConvParams {
    pub fn new(kernel: Tensor4, bias: Vec<Real>, stride: usize, padding: usize, groups: usize) -> Result<Self> {
        let p = ConvParams {
            kernel,
            bias,
            stride,
            padding,
            groups,
        };
        p.validate()?;
        Ok(p)
    }

    /// Zero-bias convolution with `same` padding.
    pub fn same(kernel: Tensor4, stride: usize, groups: usize) -> Result<Self> {
        let out = kernel.dims().n();
        let pad = kernel.dims().h() / 2;
        ConvParams::new(kernel, vec![0.0; out], stride, pad, groups)
    }

    pub fn spec(&self) -> ConvSpec {
        ConvSpec::new(self.stride, self.padding, self.groups)
    }

    pub fn in_channels(&self) -> usize {
        self.kernel.dims().c() * self.groups
    }

    pub fn out_channels(&self) -> usize {
        self.kernel.dims().n()
    }

    pub fn validate(&self) -> Result<()> {
        validate_kernel(&self.kernel, self.spec())?;
        if self.bias.len() != self.out_channels() {
            return Err(Error::shape(
                "conv2d bias",
                format!("{} values", self.out_channels()),
                format!("{} values", self.bias.len()),
            ));
        }
        Ok(())
    }
}

pub(crate) fn validate_kernel(kernel: &Tensor4, spec: ConvSpec) -> Result<()> {
    let [out, _, kh, kw] = kernel.dims().0;
    if spec.groups == 0 || out % spec.groups != 0 {
        return Err(Error::Config(format!(
            "groups {} must divide output channels {out}",
            spec.groups
        )));
    }
    if kh % 2 == 0 || kw % 2 == 0 {
        return Err(Error::Config(format!("kernel must have odd extents, got {kh}x{kw}")));
    }
    if spec.stride == 0 {
        return Err(Error::Config("stride must be >= 1".into()));
    }
    Ok(())
}

/// Output dims of a convolution, after checking the input against the kernel.
pub fn conv_output_dims(input: Dims, kernel: Dims, spec: ConvSpec) -> Result<Dims> {
    let [n, c, h, w] = input.0;
    let [out, in_per_group, kh, kw] = kernel.0;
    if c % spec.groups != 0 {
        return Err(Error::Config(format!(
            "groups {} must divide input channels {c}",
            spec.groups
        )));
    }
    if in_per_group * spec.groups != c {
        return Err(Error::shape(
            "conv2d",
            format!("input with {} channels for kernel {kernel}", in_per_group * spec.groups),
            input,
        ));
    }
    let ph = h + 2 * spec.padding;
    let pw = w + 2 * spec.padding;
    if ph < kh || pw < kw {
        return Err(Error::shape(
            "conv2d",
            format!("padded input at least {kh}x{kw}"),
            format!("{ph}x{pw} (input {input})"),
        ));
    }
    Ok(Dims::new(
        n,
        out,
        (ph - kh) / spec.stride + 1,
        (pw - kw) / spec.stride + 1,
    ))
}

/// Valid output-column range `[lo, hi)` for kernel column `k`: the columns whose
/// input index `o * stride + k - pad` falls inside `0..in_len`.
#[inline]
fn valid_range(out_len: usize, in_len: usize, k: usize, stride: usize, pad: usize) -> (usize, usize) {
    let lo = if pad > k { (pad - k).div_ceil(stride) } else { 0 };
    let hi = if in_len + pad > k {
        ((in_len + pad - k - 1) / stride + 1).min(out_len)
    } else {
        0
    };
    (lo, hi.max(lo))
}

/// Dot product with eight fixed-order partial sums so the loop vectorizes
/// while staying deterministic.
#[inline]
fn dot(a: &[Real], b: &[Real]) -> Real {
    let mut lanes = [0.0 as Real; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let tail: Real = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            lanes[i] += x[i] * y[i];
        }
    }
    ((lanes[0] + lanes[4]) + (lanes[1] + lanes[5])) + ((lanes[2] + lanes[6]) + (lanes[3] + lanes[7])) + tail
}

struct Geometry {
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    oh: usize,
    ow: usize,
    kh: usize,
    kw: usize,
    in_per_group: usize,
    out_per_group: usize,
    stride: usize,
    pad: usize,
}

impl Geometry {
    fn new(input: Dims, kernel: Dims, out: Dims, spec: ConvSpec) -> Self {
        Geometry {
            c_in: input.c(),
            h: input.h(),
            w: input.w(),
            c_out: out.c(),
            oh: out.h(),
            ow: out.w(),
            kh: kernel.h(),
            kw: kernel.w(),
            in_per_group: kernel.c(),
            out_per_group: out.c() / spec.groups,
            stride: spec.stride,
            pad: spec.padding,
        }
    }

    fn kernel_offset(&self, oc: usize, icg: usize, ky: usize, kx: usize) -> usize {
        ((oc * self.in_per_group + icg) * self.kh + ky) * self.kw + kx
    }
}

// Unit-stride kernels work on zero-padded planes of row pitch `wp = w + 2p`.
// Output row `oy` is computed across the full pitch, so each kernel tap is a
// single contiguous axpy/dot of length `oh * wp` at offset `ky * wp + kx`; the
// `wp - ow` trailing columns of every row are scratch and discarded.

struct Padded {
    wp: usize,
    pitch: usize,
    span: usize,
}

impl Padded {
    fn new(g: &Geometry) -> Self {
        let wp = g.w + 2 * g.pad;
        let hp = g.h + 2 * g.pad;
        Padded {
            wp,
            // Slack so the last shifted window stays in bounds.
            pitch: hp * wp + g.kw,
            span: g.oh * wp,
        }
    }

    fn pad_planes(&self, g: &Geometry, src: &[Real], channels: usize) -> Vec<Real> {
        let mut buf = vec![0.0 as Real; channels * self.pitch];
        for c in 0..channels {
            let plane = &src[c * g.h * g.w..(c + 1) * g.h * g.w];
            let dst = &mut buf[c * self.pitch..(c + 1) * self.pitch];
            for y in 0..g.h {
                let row = (y + g.pad) * self.wp + g.pad;
                dst[row..row + g.w].copy_from_slice(&plane[y * g.w..(y + 1) * g.w]);
            }
        }
        buf
    }
}

#[inline]
fn axpy(dst: &mut [Real], a: Real, src: &[Real]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += a * s;
    }
}

/// `dst += sum_t a[t] * src[t]`, up to four terms per pass over `dst`.
fn axpy_many(dst: &mut [Real], terms: &[(Real, &[Real])]) {
    let n = dst.len();
    let mut chunks = terms.chunks_exact(4);
    for c in &mut chunks {
        let (a0, a1, a2, a3) = (c[0].0, c[1].0, c[2].0, c[3].0);
        let (s0, s1, s2, s3) = (&c[0].1[..n], &c[1].1[..n], &c[2].1[..n], &c[3].1[..n]);
        for j in 0..n {
            dst[j] += (a0 * s0[j] + a1 * s1[j]) + (a2 * s2[j] + a3 * s3[j]);
        }
    }
    for (a, src) in chunks.remainder() {
        axpy(dst, *a, &src[..n]);
    }
}

fn forward_sample_unit_stride(g: &Geometry, in_s: &[Real], k: &[Real], bias: Option<&[Real]>, out_s: &mut [Real]) {
    let pd = Padded::new(g);
    let padded = pd.pad_planes(g, in_s, g.c_in);
    let mut acc = vec![0.0 as Real; pd.span];
    let mut terms: Vec<(Real, &[Real])> = Vec::with_capacity(g.in_per_group * g.kh * g.kw);
    for oc in 0..g.c_out {
        let group = oc / g.out_per_group;
        acc.fill(bias.map_or(0.0, |b| b[oc]));
        terms.clear();
        for icg in 0..g.in_per_group {
            let base = (group * g.in_per_group + icg) * pd.pitch;
            for ky in 0..g.kh {
                for kx in 0..g.kw {
                    let off = base + ky * pd.wp + kx;
                    terms.push((k[g.kernel_offset(oc, icg, ky, kx)], &padded[off..off + pd.span]));
                }
            }
        }
        axpy_many(&mut acc, &terms);
        let out_plane = &mut out_s[oc * g.oh * g.ow..(oc + 1) * g.oh * g.ow];
        for oy in 0..g.oh {
            out_plane[oy * g.ow..(oy + 1) * g.ow].copy_from_slice(&acc[oy * pd.wp..oy * pd.wp + g.ow]);
        }
    }
}

fn backward_sample_unit_stride(
    g: &Geometry,
    in_s: &[Real],
    k: &[Real],
    up_s: &[Real],
    din_s: &mut [Real],
    dk: &mut [Real],
    db: &mut [Real],
) {
    let pd = Padded::new(g);
    let padded = pd.pad_planes(g, in_s, g.c_in);
    // Upstream on the padded pitch; scratch columns are zero so they add nothing.
    let mut up_grid = vec![0.0 as Real; g.c_out * pd.span];
    for oc in 0..g.c_out {
        let up_plane = &up_s[oc * g.oh * g.ow..(oc + 1) * g.oh * g.ow];
        db[oc] = up_plane.iter().sum();
        let dst = &mut up_grid[oc * pd.span..(oc + 1) * pd.span];
        for oy in 0..g.oh {
            dst[oy * pd.wp..oy * pd.wp + g.ow].copy_from_slice(&up_plane[oy * g.ow..(oy + 1) * g.ow]);
        }
    }
    let mut d_plane = vec![0.0 as Real; pd.pitch];
    let mut terms: Vec<(Real, &[Real])> = Vec::with_capacity(g.out_per_group);
    for ic in 0..g.c_in {
        let group = ic / g.in_per_group;
        let icg = ic % g.in_per_group;
        let plane = &padded[ic * pd.pitch..(ic + 1) * pd.pitch];
        let ocs = group * g.out_per_group..(group + 1) * g.out_per_group;
        d_plane.fill(0.0);
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let off = ky * pd.wp + kx;
                let shifted = &plane[off..off + pd.span];
                terms.clear();
                for oc in ocs.clone() {
                    let up = &up_grid[oc * pd.span..(oc + 1) * pd.span];
                    let ki = g.kernel_offset(oc, icg, ky, kx);
                    dk[ki] += dot(up, shifted);
                    terms.push((k[ki], up));
                }
                axpy_many(&mut d_plane[off..off + pd.span], &terms);
            }
        }
        let din_plane = &mut din_s[ic * g.h * g.w..(ic + 1) * g.h * g.w];
        for y in 0..g.h {
            let row = (y + g.pad) * pd.wp + g.pad;
            din_plane[y * g.w..(y + 1) * g.w].copy_from_slice(&d_plane[row..row + g.w]);
        }
    }
}

/// Raw forward pass over a borrowed kernel; `bias` may be absent.
pub(crate) fn conv_forward(input: &Tensor4, kernel: &Tensor4, bias: Option<&[Real]>, spec: ConvSpec) -> Result<Tensor4> {
    validate_kernel(kernel, spec)?;
    let out_dims = conv_output_dims(input.dims(), kernel.dims(), spec)?;
    if let Some(b) = bias {
        if b.len() != out_dims.c() {
            return Err(Error::shape("conv2d bias", out_dims.c(), b.len()));
        }
    }
    let g = Geometry::new(input.dims(), kernel.dims(), out_dims, spec);
    let k = kernel.data();
    let sample_out = g.c_out * g.oh * g.ow;
    let mut out = vec![0.0 as Real; out_dims.len()];

    out.par_chunks_mut(sample_out).enumerate().for_each(|(n, out_s)| {
        let in_s = input.sample_data(n);
        if g.stride == 1 {
            forward_sample_unit_stride(&g, in_s, k, bias, out_s);
            return;
        }
        for oc in 0..g.c_out {
            let group = oc / g.out_per_group;
            let plane = &mut out_s[oc * g.oh * g.ow..(oc + 1) * g.oh * g.ow];
            if let Some(b) = bias {
                plane.iter_mut().for_each(|v| *v = b[oc]);
            }
            for icg in 0..g.in_per_group {
                let ic = group * g.in_per_group + icg;
                let in_plane = &in_s[ic * g.h * g.w..(ic + 1) * g.h * g.w];
                for ky in 0..g.kh {
                    let (oy_lo, oy_hi) = valid_range(g.oh, g.h, ky, g.stride, g.pad);
                    for kx in 0..g.kw {
                        let kv = k[g.kernel_offset(oc, icg, ky, kx)];
                        let (ox_lo, ox_hi) = valid_range(g.ow, g.w, kx, g.stride, g.pad);
                        if ox_lo >= ox_hi {
                            continue;
                        }
                        for oy in oy_lo..oy_hi {
                            let iy = oy * g.stride + ky - g.pad;
                            let out_row = &mut plane[oy * g.ow..(oy + 1) * g.ow];
                            let in_row = &in_plane[iy * g.w..(iy + 1) * g.w];
                            if g.stride == 1 {
                                let ix0 = ox_lo + kx - g.pad;
                                let dst = &mut out_row[ox_lo..ox_hi];
                                let src = &in_row[ix0..ix0 + dst.len()];
                                for (d, s) in dst.iter_mut().zip(src) {
                                    *d += kv * s;
                                }
                            } else {
                                for ox in ox_lo..ox_hi {
                                    out_row[ox] += kv * in_row[ox * g.stride + kx - g.pad];
                                }
                            }
                        }
                    }
                }
            }
        }
    });
    Tensor4::new(out_dims, out)
}

/// Gradients of a convolution with respect to input, kernel and bias.
#[derive(Clone, Debug)]
pub struct ConvGrads {
    pub d_input: Tensor4,
    pub d_kernel: Tensor4,
    pub d_bias: Vec<Real>,
}

pub(crate) fn conv_backward(input: &Tensor4, kernel: &Tensor4, spec: ConvSpec, upstream: &Tensor4) -> Result<ConvGrads> {
    validate_kernel(kernel, spec)?;
    let out_dims = conv_output_dims(input.dims(), kernel.dims(), spec)?;
    upstream.expect_dims("conv2d_grad upstream", out_dims)?;
    let g = Geometry::new(input.dims(), kernel.dims(), out_dims, spec);
    let k = kernel.data();
    let sample_in = g.c_in * g.h * g.w;
    let mut d_input = vec![0.0 as Real; input.len()];

    let partials: Vec<(Vec<Real>, Vec<Real>)> = d_input
        .par_chunks_mut(sample_in)
        .enumerate()
        .map(|(n, din_s)| {
            let in_s = input.sample_data(n);
            let up_s = upstream.sample_data(n);
            let mut dk = vec![0.0 as Real; kernel.len()];
            let mut db = vec![0.0 as Real; g.c_out];
            if g.stride == 1 {
                backward_sample_unit_stride(&g, in_s, k, up_s, din_s, &mut dk, &mut db);
                return (dk, db);
            }
            for oc in 0..g.c_out {
                let group = oc / g.out_per_group;
                let up_plane = &up_s[oc * g.oh * g.ow..(oc + 1) * g.oh * g.ow];
                db[oc] = up_plane.iter().sum();
                for icg in 0..g.in_per_group {
                    let ic = group * g.in_per_group + icg;
                    let in_plane = &in_s[ic * g.h * g.w..(ic + 1) * g.h * g.w];
                    let din_plane = &mut din_s[ic * g.h * g.w..(ic + 1) * g.h * g.w];
                    for ky in 0..g.kh {
                        let (oy_lo, oy_hi) = valid_range(g.oh, g.h, ky, g.stride, g.pad);
                        for kx in 0..g.kw {
                            let ki = g.kernel_offset(oc, icg, ky, kx);
                            let kv = k[ki];
                            let (ox_lo, ox_hi) = valid_range(g.ow, g.w, kx, g.stride, g.pad);
                            if ox_lo >= ox_hi {
                                continue;
                            }
                            let mut acc = 0.0;
                            for oy in oy_lo..oy_hi {
                                let iy = oy * g.stride + ky - g.pad;
                                let up_row = &up_plane[oy * g.ow..(oy + 1) * g.ow];
                                let in_row = &in_plane[iy * g.w..(iy + 1) * g.w];
                                let din_row = &mut din_plane[iy * g.w..(iy + 1) * g.w];
                                if g.stride == 1 {
                                    let ix0 = ox_lo + kx - g.pad;
                                    let len = ox_hi - ox_lo;
                                    let up = &up_row[ox_lo..ox_hi];
                                    let src = &in_row[ix0..ix0 + len];
                                    let dst = &mut din_row[ix0..ix0 + len];
                                    for (d, u) in dst.iter_mut().zip(up) {
                                        *d += kv * u;
                                    }
                                    acc += dot(up, src);
                                } else {
                                    for ox in ox_lo..ox_hi {
                                        let ix = ox * g.stride + kx - g.pad;
                                        let u = up_row[ox];
                                        din_row[ix] += kv * u;
                                        acc += u * in_row[ix];
                                    }
                                }
                            }
                            dk[ki] += acc;
                        }
                    }
                }
            }
            (dk, db)
        })
        .collect();

    let mut d_kernel = vec![0.0 as Real; kernel.len()];
    let mut d_bias = vec![0.0 as Real; g.c_out];
    for (dk, db) in &partials {
        for (a, b) in d_kernel.iter_mut().zip(dk) {
            *a += b;
        }
        for (a, b) in d_bias.iter_mut().zip(db) {
            *a += b;
        }
    }
    Ok(ConvGrads {
        d_input: Tensor4::new(input.dims(), d_input)?,
        d_kernel: Tensor4::new(kernel.dims(), d_kernel)?,
        d_bias,
    })
}

/// Grouped 2-D convolution with zero padding.
pub fn conv2d(input: &Tensor4, p: &ConvParams) -> Result<Tensor4> {
    p.validate()?;
    conv_forward(input, &p.kernel, Some(&p.bias), p.spec())
}

/// Gradients of `sum(upstream * conv2d(input, p))`.
pub fn conv2d_grad(input: &Tensor4, p: &ConvParams, upstream: &Tensor4) -> Result<ConvGrads> {
    p.validate()?;
    conv_backward(input, &p.kernel, p.spec(), upstream)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(dims: [usize; 4], rng: &mut ChaCha8Rng) -> Tensor4 {
        let len = dims.iter().product();
        Tensor4::from_shape(dims, (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Straightforward nested-loop convolution used as an oracle.
    fn naive_conv(input: &Tensor4, p: &ConvParams) -> Tensor4 {
        let [n, _, h, w] = input.dims().0;
        let [oc_n, ipg, kh, kw] = p.kernel.dims().0;
        let oh = (h + 2 * p.padding - kh) / p.stride + 1;
        let ow = (w + 2 * p.padding - kw) / p.stride + 1;
        let opg = oc_n / p.groups;
        let mut out = Tensor4::zeros(Dims::new(n, oc_n, oh, ow));
        for s in 0..n {
            for oc in 0..oc_n {
                let g = oc / opg;
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = p.bias[oc];
                        for icg in 0..ipg {
                            for ky in 0..kh {
                                for kx in 0..kw {
                                    let iy = (oy * p.stride + ky) as isize - p.padding as isize;
                                    let ix = (ox * p.stride + kx) as isize - p.padding as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                        continue;
                                    }
                                    acc += p.kernel.at(oc, icg, ky, kx)
                                        * input.at(s, g * ipg + icg, iy as usize, ix as usize);
                                }
                            }
                        }
                        out.set(s, oc, oy, ox, acc);
                    }
                }
            }
        }
        out
    }

    fn grid3() -> Tensor4 {
        Tensor4::from_shape([1, 1, 3, 3], (1..=9).map(|v| v as Real).collect()).unwrap()
    }

    #[test]
    fn identity_kernel_passes_input_through() {
        let p = ConvParams::new(Tensor4::from_shape([1, 1, 1, 1], vec![1.0]).unwrap(), vec![0.0], 1, 0, 1).unwrap();
        assert_eq!(conv2d(&grid3(), &p).unwrap(), grid3());
    }

    #[test]
    fn all_ones_kernel_center_sums_neighbourhood() {
        let p = ConvParams::new(Tensor4::filled(Dims::new(1, 1, 3, 3), 1.0), vec![0.0], 1, 1, 1).unwrap();
        let out = conv2d(&grid3(), &p).unwrap();
        assert_eq!(out.dims(), Dims::new(1, 1, 3, 3));
        assert_eq!(out.at(0, 0, 1, 1), 45.0);
        assert_eq!(out, naive_conv(&grid3(), &p));
    }

    #[test]
    fn grouped_one_by_one_scales_each_channel() {
        let input = Tensor4::from_shape([1, 2, 2, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]).unwrap();
        let k = Tensor4::from_shape([2, 1, 1, 1], vec![2.0, 3.0]).unwrap();
        let p = ConvParams::new(k, vec![0.0, 0.0], 1, 0, 2).unwrap();
        let out = conv2d(&input, &p).unwrap();
        assert_eq!(out.data(), &[2.0, 4.0, 6.0, 8.0, 15.0, 18.0, 21.0, 24.0]);
    }

    #[test]
    fn matches_nested_loop_oracle_across_geometries() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for &(c_in, c_out, k, stride, pad, groups, h, w) in &[
            (3, 4, 3, 1, 1, 1, 7, 6),
            (4, 4, 3, 2, 1, 4, 8, 8),
            (4, 6, 1, 2, 0, 2, 5, 7),
            (2, 2, 5, 1, 2, 1, 5, 5),
            (6, 3, 3, 2, 0, 3, 9, 6),
        ] {
            let input = random([2, c_in, h, w], &mut rng);
            let kernel = random([c_out, c_in / groups, k, k], &mut rng);
            let bias = (0..c_out).map(|_| rng.random_range(-1.0..1.0)).collect();
            let p = ConvParams::new(kernel, bias, stride, pad, groups).unwrap();
            let fast = conv2d(&input, &p).unwrap();
            assert!(fast.max_abs_diff(&naive_conv(&input, &p)) < 1e-12);
        }
    }

    #[test]
    fn shape_errors_name_both_shapes() {
        let p = ConvParams::new(Tensor4::filled(Dims::new(2, 3, 3, 3), 1.0), vec![0.0; 2], 1, 1, 1).unwrap();
        let err = conv2d(&Tensor4::zeros(Dims::new(1, 2, 4, 4)), &p).unwrap_err().to_string();
        assert!(err.contains("1x2x4x4"), "{err}");
        assert!(err.contains("2x3x3x3"), "{err}");
        let tiny = conv2d(&Tensor4::zeros(Dims::new(1, 3, 1, 1)), &ConvParams { padding: 0, ..p.clone() });
        assert!(matches!(tiny, Err(Error::Shape { .. })));
    }

    #[test]
    fn config_errors() {
        let k = Tensor4::filled(Dims::new(3, 1, 3, 3), 1.0);
        assert!(matches!(ConvParams::new(k.clone(), vec![0.0; 3], 1, 1, 2), Err(Error::Config(_))));
        let even = Tensor4::filled(Dims::new(1, 1, 2, 2), 1.0);
        assert!(matches!(ConvParams::new(even, vec![0.0], 1, 0, 1), Err(Error::Config(_))));
        assert!(matches!(ConvParams::new(k, vec![0.0; 3], 0, 1, 1), Err(Error::Config(_))));
        // 4 input channels do not split into 3 groups
        let k3 = Tensor4::filled(Dims::new(3, 1, 1, 1), 1.0);
        let p = ConvParams::new(k3, vec![0.0; 3], 1, 0, 3).unwrap();
        assert!(matches!(conv2d(&Tensor4::zeros(Dims::new(1, 4, 2, 2)), &p), Err(Error::Config(_))));
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let input = random([1, 2, 5, 5], &mut rng);
        let p = ConvParams::new(random([3, 2, 3, 3], &mut rng), vec![0.1; 3], 1, 1, 1).unwrap();
        let g = conv2d_grad(&input, &p, &Tensor4::zeros(Dims::new(1, 3, 5, 5))).unwrap();
        assert!(g.d_input.data().iter().all(|&v| v == 0.0));
        assert!(g.d_kernel.data().iter().all(|&v| v == 0.0));
        assert!(g.d_bias.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_kernel_routes_upstream_to_input() {
        let p = ConvParams::new(Tensor4::from_shape([1, 1, 1, 1], vec![1.0]).unwrap(), vec![0.0], 1, 0, 1).unwrap();
        let g = conv2d_grad(&grid3(), &p, &Tensor4::filled(Dims::new(1, 1, 3, 3), 1.0)).unwrap();
        assert!(g.d_input.data().iter().all(|&v| v == 1.0));
        assert_eq!(g.d_kernel.data(), &[45.0]);
        assert_eq!(g.d_bias, vec![9.0]);
    }

    #[test]
    fn upstream_shape_mismatch_is_rejected() {
        let p = ConvParams::new(Tensor4::filled(Dims::new(1, 1, 3, 3), 1.0), vec![0.0], 1, 1, 1).unwrap();
        let r = conv2d_grad(&grid3(), &p, &Tensor4::zeros(Dims::new(1, 1, 2, 2)));
        assert!(matches!(r, Err(Error::Shape { .. })));
    }
}
