//! Raw forward/backward compute kernels behind the operator catalog.
//!
//! Everything is plain loops over row-major buffers. Inner loops run
//! along the last (W) axis as contiguous axpy/dot so the compiler can
//! vectorize them; convolution strides on H/W other than 1 fall back to
//! a strided loop. All reductions are sequential with a fixed order, so
//! results are bit-reproducible run to run.
//!
//! Conv tensors are [N, C, D, H, W] with D the spectral axis. Conv
//! kernels are [C_out, C_in, kd, kh, kw]; transposed-conv kernels are
//! [C_in, C_out, kd, kh, kw].

use alloc::vec;
use alloc::vec::Vec;

use crate::tensor::Tensor;

/// Stride/padding triple for conv3d, ordered (D, H, W).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv3dSpec {
    pub stride: [usize; 3],
    pub pad: [usize; 3],
}

impl Conv3dSpec {
    pub fn unit_pad(pad: usize) -> Self {
        Self {
            stride: [1, 1, 1],
            pad: [pad, pad, pad],
        }
    }

    /// Stride along the spectral axis only, padding 1 everywhere.
    pub fn spectral_stride(s: usize) -> Self {
        Self {
            stride: [s, 1, 1],
            pad: [1, 1, 1],
        }
    }
}

/// Stride/pad/output-padding for deconv3d (transposed conv), (D, H, W).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Deconv3dSpec {
    pub stride: [usize; 3],
    pub pad: [usize; 3],
    pub out_pad: [usize; 3],
}

impl Deconv3dSpec {
    /// Doubles the spectral extent: stride 2, pad 1, output padding 1.
    pub fn spectral_double() -> Self {
        Self {
            stride: [2, 1, 1],
            pad: [1, 1, 1],
            out_pad: [1, 0, 0],
        }
    }
}

/// Output extent of a convolution along one axis.
pub fn conv_out_extent(n: usize, k: usize, p: usize, s: usize) -> usize {
    assert!(s >= 1, "stride must be >= 1");
    assert!(
        n + 2 * p >= k,
        "input extent {n} with padding {p} is smaller than kernel {k}"
    );
    (n + 2 * p - k) / s + 1
}

/// Output extent of a transposed convolution along one axis.
pub fn deconv_out_extent(n: usize, k: usize, p: usize, s: usize, op: usize) -> usize {
    assert!(s >= 1, "stride must be >= 1");
    assert!(op < s, "output padding must be < stride");
    let raw = (n - 1) * s + k + op;
    assert!(raw > 2 * p, "deconv output extent would be non-positive");
    raw - 2 * p
}

#[inline]
fn split5(shape: &[usize]) -> (usize, usize, usize, usize, usize) {
    assert_eq!(shape.len(), 5, "expected rank-5 tensor, got {shape:?}");
    (shape[0], shape[1], shape[2], shape[3], shape[4])
}

/// Valid output range [lo, hi) along one axis for a gather at kernel
/// offset `k` with padding `p`: positions o where 0 <= o*s + k - p < n_in.
/// Convolution geometry shared by the im2col kernels.
struct ConvGeom {
    ci: usize,
    co: usize,
    k: [usize; 3],
    stride: [usize; 3],
    pad: [usize; 3],
    in_ext: [usize; 3],
    out_ext: [usize; 3],
    /// padded input extents
    pin: [usize; 3],
    /// unrolled patch length: ci * kd * kh * kw
    patch: usize,
    /// number of output positions: do * ho * wo
    positions: usize,
}

impl ConvGeom {
    fn new(x_shape: &[usize], w_shape: &[usize], spec: Conv3dSpec) -> (usize, Self) {
        let (n, ci, di, hi, wi) = split5(x_shape);
        let (co, wci, kd, kh, kw) = split5(w_shape);
        assert_eq!(ci, wci, "conv3d: input channels {ci} != kernel channels {wci}");
        let [sd, sh, sw] = spec.stride;
        let [pd, ph, pw] = spec.pad;
        let out_ext = [
            conv_out_extent(di, kd, pd, sd),
            conv_out_extent(hi, kh, ph, sh),
            conv_out_extent(wi, kw, pw, sw),
        ];
        let geom = Self {
            ci,
            co,
            k: [kd, kh, kw],
            stride: spec.stride,
            pad: spec.pad,
            in_ext: [di, hi, wi],
            out_ext,
            pin: [di + 2 * pd, hi + 2 * ph, wi + 2 * pw],
            patch: ci * kd * kh * kw,
            positions: out_ext[0] * out_ext[1] * out_ext[2],
        };
        (n, geom)
    }

    fn padded_len(&self) -> usize {
        self.ci * self.pin[0] * self.pin[1] * self.pin[2]
    }

    /// Flat offset of each patch entry (ci, kd, kh, kw) in the padded
    /// sample buffer.
    fn patch_offsets(&self) -> Vec<usize> {
        let [pd_, ph_, pw_] = self.pin;
        let mut offs = Vec::with_capacity(self.patch);
        for ci in 0..self.ci {
            for kd in 0..self.k[0] {
                for kh in 0..self.k[1] {
                    for kw in 0..self.k[2] {
                        offs.push(((ci * pd_ + kd) * ph_ + kh) * pw_ + kw);
                    }
                }
            }
        }
        offs
    }

    /// Flat base offset of an output position in the padded buffer.
    #[inline]
    fn position_base(&self, od: usize, oh: usize, ow: usize) -> usize {
        ((od * self.stride[0]) * self.pin[1] + oh * self.stride[1]) * self.pin[2]
            + ow * self.stride[2]
    }
}

/// Copy one sample [Ci, D, H, W] into a zero-padded buffer.
fn pad_sample(x: &[f32], geom: &ConvGeom, out: &mut [f32]) {
    out.fill(0.0);
    let [di, hi, wi] = geom.in_ext;
    let [pdi, phi, pwi] = geom.pin;
    let [pd, ph, pw] = geom.pad;
    for ci in 0..geom.ci {
        for d in 0..di {
            for h in 0..hi {
                let src = ((ci * di + d) * hi + h) * wi;
                let dst = ((ci * pdi + d + pd) * phi + h + ph) * pwi + pw;
                out[dst..dst + wi].copy_from_slice(&x[src..src + wi]);
            }
        }
    }
}

/// Crop the interior of a padded gradient buffer, adding into dx.
fn crop_sample_add(padded: &[f32], geom: &ConvGeom, dx: &mut [f32]) {
    let [di, hi, wi] = geom.in_ext;
    let [pdi, phi, pwi] = geom.pin;
    let [pd, ph, pw] = geom.pad;
    for ci in 0..geom.ci {
        for d in 0..di {
            for h in 0..hi {
                let dst = ((ci * di + d) * hi + h) * wi;
                let src = ((ci * pdi + d + pd) * phi + h + ph) * pwi + pw;
                for (o, &v) in dx[dst..dst + wi].iter_mut().zip(&padded[src..src + wi]) {
                    *o += v;
                }
            }
        }
    }
}

/// Unroll every receptive field of one padded sample into rows of
/// `cols` ([positions, patch]).
fn im2col(padded: &[f32], geom: &ConvGeom, offsets: &[usize], cols: &mut [f32]) {
    let [do_, ho, wo] = geom.out_ext;
    let mut p = 0;
    for od in 0..do_ {
        for oh in 0..ho {
            for ow in 0..wo {
                let base = geom.position_base(od, oh, ow);
                let row = &mut cols[p * geom.patch..(p + 1) * geom.patch];
                for (o, &off) in row.iter_mut().zip(offsets) {
                    *o = padded[base + off];
                }
                p += 1;
            }
        }
    }
}

/// Scatter-add unrolled gradient rows back into the padded buffer.
fn col2im_add(cols: &[f32], geom: &ConvGeom, offsets: &[usize], padded: &mut [f32]) {
    let [do_, ho, wo] = geom.out_ext;
    let mut p = 0;
    for od in 0..do_ {
        for oh in 0..ho {
            for ow in 0..wo {
                let base = geom.position_base(od, oh, ow);
                let row = &cols[p * geom.patch..(p + 1) * geom.patch];
                for (&v, &off) in row.iter().zip(offsets) {
                    padded[base + off] += v;
                }
                p += 1;
            }
        }
    }
}

// ---------------------------------------------------------------------------
// conv3d
// ---------------------------------------------------------------------------

pub fn conv3d_fwd(x: &Tensor, w: &Tensor, b: &Tensor, spec: Conv3dSpec) -> Tensor {
    let (n, geom) = ConvGeom::new(x.shape(), w.shape(), spec);
    assert_eq!(b.shape(), [geom.co], "conv3d: bias shape mismatch");
    let xd = x.data();
    let wd = w.data();
    let bd = b.data();
    let sample = geom.ci * geom.in_ext[0] * geom.in_ext[1] * geom.in_ext[2];
    let offsets = geom.patch_offsets();
    let mut padded = vec![0.0f32; geom.padded_len()];
    let mut cols = vec![0.0f32; geom.positions * geom.patch];
    let mut out = vec![0.0f32; n * geom.co * geom.positions];

    for in_ in 0..n {
        pad_sample(&xd[in_ * sample..(in_ + 1) * sample], &geom, &mut padded);
        im2col(&padded, &geom, &offsets, &mut cols);
        for co in 0..geom.co {
            let w_row = &wd[co * geom.patch..(co + 1) * geom.patch];
            let o_base = (in_ * geom.co + co) * geom.positions;
            let bias = bd[co];
            for p in 0..geom.positions {
                let c_row = &cols[p * geom.patch..(p + 1) * geom.patch];
                let mut acc = 0.0f32;
                for (&cv, &wv) in c_row.iter().zip(w_row) {
                    acc += cv * wv;
                }
                out[o_base + p] = bias + acc;
            }
        }
    }
    Tensor::from_vec(
        &[n, geom.co, geom.out_ext[0], geom.out_ext[1], geom.out_ext[2]],
        out,
    )
}

pub fn conv3d_bwd_x(dy: &Tensor, w: &Tensor, spec: Conv3dSpec, x_shape: &[usize]) -> Tensor {
    let (n, geom) = ConvGeom::new(x_shape, w.shape(), spec);
    assert_eq!(
        dy.shape(),
        [n, geom.co, geom.out_ext[0], geom.out_ext[1], geom.out_ext[2]],
        "conv3d: upstream gradient shape mismatch"
    );
    let gd = dy.data();
    let wd = w.data();
    let sample = geom.ci * geom.in_ext[0] * geom.in_ext[1] * geom.in_ext[2];
    let offsets = geom.patch_offsets();
    let mut padded = vec![0.0f32; geom.padded_len()];
    let mut dcols = vec![0.0f32; geom.positions * geom.patch];
    let mut dx = vec![0.0f32; n * sample];

    for in_ in 0..n {
        dcols.fill(0.0);
        for co in 0..geom.co {
            let w_row = &wd[co * geom.patch..(co + 1) * geom.patch];
            let g_base = (in_ * geom.co + co) * geom.positions;
            for p in 0..geom.positions {
                let g = gd[g_base + p];
                if g == 0.0 {
                    continue;
                }
                let d_row = &mut dcols[p * geom.patch..(p + 1) * geom.patch];
                for (o, &wv) in d_row.iter_mut().zip(w_row) {
                    *o += g * wv;
                }
            }
        }
        padded.fill(0.0);
        col2im_add(&dcols, &geom, &offsets, &mut padded);
        crop_sample_add(&padded, &geom, &mut dx[in_ * sample..(in_ + 1) * sample]);
    }
    Tensor::from_vec(x_shape, dx)
}

pub fn conv3d_bwd_w(x: &Tensor, dy: &Tensor, spec: Conv3dSpec, w_shape: &[usize]) -> Tensor {
    let (n, geom) = ConvGeom::new(x.shape(), w_shape, spec);
    assert_eq!(
        dy.shape(),
        [n, geom.co, geom.out_ext[0], geom.out_ext[1], geom.out_ext[2]],
        "conv3d: upstream gradient shape mismatch"
    );
    let xd = x.data();
    let gd = dy.data();
    let sample = geom.ci * geom.in_ext[0] * geom.in_ext[1] * geom.in_ext[2];
    let offsets = geom.patch_offsets();
    let mut padded = vec![0.0f32; geom.padded_len()];
    let mut cols = vec![0.0f32; geom.positions * geom.patch];
    let mut dw = vec![0.0f32; geom.co * geom.patch];

    for in_ in 0..n {
        pad_sample(&xd[in_ * sample..(in_ + 1) * sample], &geom, &mut padded);
        im2col(&padded, &geom, &offsets, &mut cols);
        for co in 0..geom.co {
            let g_base = (in_ * geom.co + co) * geom.positions;
            let dw_row = &mut dw[co * geom.patch..(co + 1) * geom.patch];
            for p in 0..geom.positions {
                let g = gd[g_base + p];
                if g == 0.0 {
                    continue;
                }
                let c_row = &cols[p * geom.patch..(p + 1) * geom.patch];
                for (o, &cv) in dw_row.iter_mut().zip(c_row) {
                    *o += g * cv;
                }
            }
        }
    }
    Tensor::from_vec(w_shape, dw)
}

/// Sum of dy over batch and spatial axes, one value per output channel.
pub fn conv3d_bwd_b(dy: &Tensor) -> Tensor {
    let (n, co, do_, ho, wo) = split5(dy.shape());
    let mut db = vec![0.0f32; co];
    let gd = dy.data();
    let plane = do_ * ho * wo;
    for in_ in 0..n {
        for c_out in 0..co {
            let base = (in_ * co + c_out) * plane;
            let mut acc = 0.0f32;
            for &g in &gd[base..base + plane] {
                acc += g;
            }
            db[c_out] += acc;
        }
    }
    Tensor::from_vec(&[co], db)
}

// ---------------------------------------------------------------------------
// deconv3d (transposed convolution)
//
// The transposed conv is exactly the adjoint of a conv with the same
// stride/padding whose kernel reads [C_in, C_out, ...] as
// [C_out, C_in, ...]; forward/backward therefore reuse the conv
// kernels with the roles of x and dy swapped.
// ---------------------------------------------------------------------------

fn deconv_conv_spec(spec: Deconv3dSpec) -> Conv3dSpec {
    Conv3dSpec {
        stride: spec.stride,
        pad: spec.pad,
    }
}

fn deconv_out_shape(x_shape: &[usize], w_shape: &[usize], spec: Deconv3dSpec) -> Vec<usize> {
    let (n, ci, di, hi, wi) = split5(x_shape);
    let (wci, co, kd, kh, kw) = split5(w_shape);
    assert_eq!(ci, wci, "deconv3d: input channels {ci} != kernel channels {wci}");
    let [sd, sh, sw] = spec.stride;
    let [pd, ph, pw] = spec.pad;
    let [opd, oph, opw] = spec.out_pad;
    vec![
        n,
        co,
        deconv_out_extent(di, kd, pd, sd, opd),
        deconv_out_extent(hi, kh, ph, sh, oph),
        deconv_out_extent(wi, kw, pw, sw, opw),
    ]
}

/// View a deconv kernel [Ci, Co, ...] as the adjoint conv's
/// [Co', Ci', ...] — same buffer, same shape list reordered.
fn deconv_kernel_as_conv(w: &Tensor) -> Tensor {
    let s = w.shape();
    Tensor::from_vec(&[s[0], s[1], s[2], s[3], s[4]], w.data().to_vec())
}

pub fn deconv3d_fwd(x: &Tensor, w: &Tensor, b: &Tensor, spec: Deconv3dSpec) -> Tensor {
    let out_shape = deconv_out_shape(x.shape(), w.shape(), spec);
    let co = out_shape[1];
    assert_eq!(b.shape(), [co], "deconv3d: bias shape mismatch");
    let wc = deconv_kernel_as_conv(w);
    let mut out = conv3d_bwd_x(x, &wc, deconv_conv_spec(spec), &out_shape);
    let plane: usize = out_shape[2..].iter().product();
    let bd = b.data();
    let od = out.data_mut();
    for in_ in 0..out_shape[0] {
        for c in 0..co {
            let base = (in_ * co + c) * plane;
            let bias = bd[c];
            for v in &mut od[base..base + plane] {
                *v += bias;
            }
        }
    }
    out
}

pub fn deconv3d_bwd_x(dy: &Tensor, w: &Tensor, spec: Deconv3dSpec, x_shape: &[usize]) -> Tensor {
    let out_shape = deconv_out_shape(x_shape, w.shape(), spec);
    assert_eq!(dy.shape(), &out_shape[..], "deconv3d: upstream gradient shape mismatch");
    let wc = deconv_kernel_as_conv(w);
    let dx = conv3d_fwd(
        dy,
        &wc,
        &Tensor::zeros(&[x_shape[1]]),
        deconv_conv_spec(spec),
    );
    assert_eq!(dx.shape(), x_shape);
    dx
}

pub fn deconv3d_bwd_w(x: &Tensor, dy: &Tensor, spec: Deconv3dSpec, w_shape: &[usize]) -> Tensor {
    let out_shape = deconv_out_shape(x.shape(), w_shape, spec);
    assert_eq!(dy.shape(), &out_shape[..], "deconv3d: upstream gradient shape mismatch");
    // conv roles: x_conv = dy (the deconv output side), dy_conv = x
    conv3d_bwd_w(dy, x, deconv_conv_spec(spec), w_shape)
}

// ---------------------------------------------------------------------------
// matmul / batched matmul
// ---------------------------------------------------------------------------

/// C[b] = A[b] * B[b] for [B, M, K] x [B, K, N] -> [B, M, N].
pub fn bmm_nn(a: &Tensor, b: &Tensor) -> Tensor {
    let (ba, m, k) = rank3(a.shape());
    let (bb, kb, n) = rank3(b.shape());
    assert_eq!(ba, bb, "bmm: batch mismatch");
    assert_eq!(k, kb, "bmm: inner extent mismatch");
    let mut out = vec![0.0f32; ba * m * n];
    let ad = a.data();
    let bd = b.data();
    for ib in 0..ba {
        for im in 0..m {
            let a_row = (ib * m + im) * k;
            let o_row = (ib * m + im) * n;
            for ik in 0..k {
                let av = ad[a_row + ik];
                if av == 0.0 {
                    continue;
                }
                let b_row = (ib * k + ik) * n;
                let bs = &bd[b_row..b_row + n];
                let os = &mut out[o_row..o_row + n];
                for (o, &bv) in os.iter_mut().zip(bs) {
                    *o += av * bv;
                }
            }
        }
    }
    Tensor::from_vec(&[ba, m, n], out)
}

/// C[b] = A[b] * B[b]^T for [B, M, K] x [B, N, K] -> [B, M, N].
pub fn bmm_nt(a: &Tensor, b: &Tensor) -> Tensor {
    let (ba, m, k) = rank3(a.shape());
    let (bb, n, kb) = rank3(b.shape());
    assert_eq!(ba, bb, "bmm: batch mismatch");
    assert_eq!(k, kb, "bmm: inner extent mismatch");
    let mut out = vec![0.0f32; ba * m * n];
    let ad = a.data();
    let bd = b.data();
    for ib in 0..ba {
        for im in 0..m {
            let a_row = (ib * m + im) * k;
            let o_row = (ib * m + im) * n;
            let av = &ad[a_row..a_row + k];
            for in_ in 0..n {
                let b_row = (ib * n + in_) * k;
                let bv = &bd[b_row..b_row + k];
                let mut acc = 0.0f32;
                for (&x, &y) in av.iter().zip(bv) {
                    acc += x * y;
                }
                out[o_row + in_] = acc;
            }
        }
    }
    Tensor::from_vec(&[ba, m, n], out)
}

/// C[b] = A[b]^T * B[b] for [B, K, M] x [B, K, N] -> [B, M, N].
pub fn bmm_tn(a: &Tensor, b: &Tensor) -> Tensor {
    let (ba, k, m) = rank3(a.shape());
    let (bb, kb, n) = rank3(b.shape());
    assert_eq!(ba, bb, "bmm: batch mismatch");
    assert_eq!(k, kb, "bmm: inner extent mismatch");
    let mut out = vec![0.0f32; ba * m * n];
    let ad = a.data();
    let bd = b.data();
    for ib in 0..ba {
        for ik in 0..k {
            let a_row = (ib * k + ik) * m;
            let b_row = (ib * k + ik) * n;
            for im in 0..m {
                let av = ad[a_row + im];
                if av == 0.0 {
                    continue;
                }
                let o_row = (ib * m + im) * n;
                let bs = &bd[b_row..b_row + n];
                let os = &mut out[o_row..o_row + n];
                for (o, &bv) in os.iter_mut().zip(bs) {
                    *o += av * bv;
                }
            }
        }
    }
    Tensor::from_vec(&[ba, m, n], out)
}

fn rank3(shape: &[usize]) -> (usize, usize, usize) {
    assert_eq!(shape.len(), 3, "expected rank-3 tensor, got {shape:?}");
    (shape[0], shape[1], shape[2])
}

// ---------------------------------------------------------------------------
// linear
// ---------------------------------------------------------------------------

/// y = x W^T + b for x [N, D], W [F, D], b [F].
pub fn linear_fwd(x: &Tensor, w: &Tensor, b: &Tensor) -> Tensor {
    let (n, d) = rank2(x.shape());
    let (f, wd_) = rank2(w.shape());
    assert_eq!(d, wd_, "linear: feature extent mismatch");
    assert_eq!(b.shape(), [f], "linear: bias shape mismatch");
    let mut out = vec![0.0f32; n * f];
    let xd = x.data();
    let wd = w.data();
    let bd = b.data();
    for i in 0..n {
        let x_row = &xd[i * d..(i + 1) * d];
        for j in 0..f {
            let w_row = &wd[j * d..(j + 1) * d];
            let mut acc = bd[j];
            for (&xv, &wv) in x_row.iter().zip(w_row) {
                acc += xv * wv;
            }
            out[i * f + j] = acc;
        }
    }
    Tensor::from_vec(&[n, f], out)
}

/// Returns (dx, dw, db).
pub fn linear_bwd(x: &Tensor, w: &Tensor, dy: &Tensor) -> (Tensor, Tensor, Tensor) {
    let (n, d) = rank2(x.shape());
    let (f, _) = rank2(w.shape());
    assert_eq!(dy.shape(), [n, f]);
    let mut dx = vec![0.0f32; n * d];
    let mut dw = vec![0.0f32; f * d];
    let mut db = vec![0.0f32; f];
    let xd = x.data();
    let wd = w.data();
    let gd = dy.data();
    for i in 0..n {
        let x_row = &xd[i * d..(i + 1) * d];
        for j in 0..f {
            let g = gd[i * f + j];
            if g == 0.0 {
                continue;
            }
            db[j] += g;
            let w_row = &wd[j * d..(j + 1) * d];
            let dx_row = &mut dx[i * d..(i + 1) * d];
            for (o, &wv) in dx_row.iter_mut().zip(w_row) {
                *o += g * wv;
            }
            let dw_row = &mut dw[j * d..(j + 1) * d];
            for (o, &xv) in dw_row.iter_mut().zip(x_row) {
                *o += g * xv;
            }
        }
    }
    (
        Tensor::from_vec(&[n, d], dx),
        Tensor::from_vec(&[f, d], dw),
        Tensor::from_vec(&[f], db),
    )
}

fn rank2(shape: &[usize]) -> (usize, usize) {
    assert_eq!(shape.len(), 2, "expected rank-2 tensor, got {shape:?}");
    (shape[0], shape[1])
}

// ---------------------------------------------------------------------------
// batch normalization (per channel over batch + spatial axes)
// ---------------------------------------------------------------------------

pub const BN_EPS: f32 = 1e-5;

/// Saved forward context needed by the backward pass.
pub struct BnSaved {
    pub mean: Vec<f32>,
    pub inv_std: Vec<f32>,
}

/// Per-channel batch statistics of a [N, C, ...] tensor: (mean, biased var).
pub fn bn_batch_stats(x: &Tensor) -> (Vec<f32>, Vec<f32>) {
    let s = x.shape();
    assert!(s.len() >= 2);
    let (n, c) = (s[0], s[1]);
    let spatial: usize = s[2..].iter().product();
    let m = (n * spatial) as f64;
    let xd = x.data();
    let mut mean = vec![0.0f32; c];
    let mut var = vec![0.0f32; c];
    for ch in 0..c {
        let mut acc = 0.0f64;
        for in_ in 0..n {
            let base = (in_ * c + ch) * spatial;
            for &v in &xd[base..base + spatial] {
                acc += v as f64;
            }
        }
        let mu = acc / m;
        let mut acc2 = 0.0f64;
        for in_ in 0..n {
            let base = (in_ * c + ch) * spatial;
            for &v in &xd[base..base + spatial] {
                let d = v as f64 - mu;
                acc2 += d * d;
            }
        }
        mean[ch] = mu as f32;
        var[ch] = (acc2 / m) as f32;
    }
    (mean, var)
}

/// Normalize with the given per-channel statistics: gamma * x_hat + beta.
pub fn bn_apply(
    x: &Tensor,
    mean: &[f32],
    var: &[f32],
    gamma: &Tensor,
    beta: &Tensor,
) -> (Tensor, BnSaved) {
    let s = x.shape();
    let (n, c) = (s[0], s[1]);
    let spatial: usize = s[2..].iter().product();
    assert_eq!(gamma.shape(), [c]);
    assert_eq!(beta.shape(), [c]);
    let xd = x.data();
    let gd = gamma.data();
    let bd = beta.data();
    let mut out = vec![0.0f32; xd.len()];
    let mut inv_std = vec![0.0f32; c];
    for (ch, is) in inv_std.iter_mut().enumerate() {
        *is = 1.0 / crate::math::sqrtf(var[ch] + BN_EPS);
    }
    for in_ in 0..n {
        for ch in 0..c {
            let base = (in_ * c + ch) * spatial;
            let a = gd[ch] * inv_std[ch];
            let b = bd[ch] - a * mean[ch];
            for (o, &v) in out[base..base + spatial].iter_mut().zip(&xd[base..base + spatial]) {
                *o = a * v + b;
            }
        }
    }
    (
        Tensor::from_vec(s, out),
        BnSaved {
            mean: mean.to_vec(),
            inv_std,
        },
    )
}

/// Backward through training-mode batchnorm (statistics depend on x).
/// Returns (dx, dgamma, dbeta).
pub fn bn_bwd_train(
    x: &Tensor,
    gamma: &Tensor,
    saved: &BnSaved,
    dy: &Tensor,
) -> (Tensor, Tensor, Tensor) {
    let s = x.shape();
    let (n, c) = (s[0], s[1]);
    let spatial: usize = s[2..].iter().product();
    let m = (n * spatial) as f32;
    let xd = x.data();
    let gd = dy.data();
    let gam = gamma.data();
    let mut dgamma = vec![0.0f32; c];
    let mut dbeta = vec![0.0f32; c];
    // First pass: per-channel sums of dy and dy*x_hat.
    for in_ in 0..n {
        for ch in 0..c {
            let base = (in_ * c + ch) * spatial;
            let mu = saved.mean[ch];
            let is = saved.inv_std[ch];
            let mut s1 = 0.0f32;
            let mut s2 = 0.0f32;
            for (&g, &v) in gd[base..base + spatial].iter().zip(&xd[base..base + spatial]) {
                s1 += g;
                s2 += g * (v - mu) * is;
            }
            dbeta[ch] += s1;
            dgamma[ch] += s2;
        }
    }
    let mut dx = vec![0.0f32; xd.len()];
    for in_ in 0..n {
        for ch in 0..c {
            let base = (in_ * c + ch) * spatial;
            let mu = saved.mean[ch];
            let is = saved.inv_std[ch];
            let k = gam[ch] * is;
            let mean_dy = dbeta[ch] / m;
            let mean_dyxh = dgamma[ch] / m;
            for ((o, &g), &v) in dx[base..base + spatial]
                .iter_mut()
                .zip(&gd[base..base + spatial])
                .zip(&xd[base..base + spatial])
            {
                let xh = (v - mu) * is;
                *o = k * (g - mean_dy - xh * mean_dyxh);
            }
        }
    }
    (
        Tensor::from_vec(s, dx),
        Tensor::from_vec(&[c], dgamma),
        Tensor::from_vec(&[c], dbeta),
    )
}

/// Backward through inference-mode batchnorm (statistics are constants).
pub fn bn_bwd_eval(
    x: &Tensor,
    gamma: &Tensor,
    saved: &BnSaved,
    dy: &Tensor,
) -> (Tensor, Tensor, Tensor) {
    let s = x.shape();
    let (n, c) = (s[0], s[1]);
    let spatial: usize = s[2..].iter().product();
    let xd = x.data();
    let gd = dy.data();
    let gam = gamma.data();
    let mut dgamma = vec![0.0f32; c];
    let mut dbeta = vec![0.0f32; c];
    let mut dx = vec![0.0f32; xd.len()];
    for in_ in 0..n {
        for ch in 0..c {
            let base = (in_ * c + ch) * spatial;
            let mu = saved.mean[ch];
            let is = saved.inv_std[ch];
            let k = gam[ch] * is;
            for ((o, &g), &v) in dx[base..base + spatial]
                .iter_mut()
                .zip(&gd[base..base + spatial])
                .zip(&xd[base..base + spatial])
            {
                dbeta[ch] += g;
                dgamma[ch] += g * (v - mu) * is;
                *o = k * g;
            }
        }
    }
    (
        Tensor::from_vec(s, dx),
        Tensor::from_vec(&[c], dgamma),
        Tensor::from_vec(&[c], dbeta),
    )
}

// ---------------------------------------------------------------------------
// layer norm over the last axis
// ---------------------------------------------------------------------------

pub const LN_EPS: f32 = 1e-5;

pub struct LnSaved {
    pub mean: Vec<f32>,
    pub inv_std: Vec<f32>,
}

pub fn layer_norm_fwd(x: &Tensor, gamma: &Tensor, beta: &Tensor) -> (Tensor, LnSaved) {
    let s = x.shape();
    assert!(!s.is_empty());
    let e = *s.last().unwrap();
    assert_eq!(gamma.shape(), [e]);
    assert_eq!(beta.shape(), [e]);
    let rows = x.len() / e;
    let xd = x.data();
    let gd = gamma.data();
    let bd = beta.data();
    let mut out = vec![0.0f32; xd.len()];
    let mut mean = vec![0.0f32; rows];
    let mut inv_std = vec![0.0f32; rows];
    for r in 0..rows {
        let row = &xd[r * e..(r + 1) * e];
        let mut acc = 0.0f32;
        for &v in row {
            acc += v;
        }
        let mu = acc / e as f32;
        let mut acc2 = 0.0f32;
        for &v in row {
            let d = v - mu;
            acc2 += d * d;
        }
        let is = 1.0 / crate::math::sqrtf(acc2 / e as f32 + LN_EPS);
        mean[r] = mu;
        inv_std[r] = is;
        let orow = &mut out[r * e..(r + 1) * e];
        for ((o, &v), (&g, &b)) in orow.iter_mut().zip(row).zip(gd.iter().zip(bd)) {
            *o = g * (v - mu) * is + b;
        }
    }
    (Tensor::from_vec(s, out), LnSaved { mean, inv_std })
}

pub fn layer_norm_bwd(
    x: &Tensor,
    gamma: &Tensor,
    saved: &LnSaved,
    dy: &Tensor,
) -> (Tensor, Tensor, Tensor) {
    let s = x.shape();
    let e = *s.last().unwrap();
    let rows = x.len() / e;
    let xd = x.data();
    let gd = dy.data();
    let gam = gamma.data();
    let mut dx = vec![0.0f32; xd.len()];
    let mut dgamma = vec![0.0f32; e];
    let mut dbeta = vec![0.0f32; e];
    for r in 0..rows {
        let row = &xd[r * e..(r + 1) * e];
        let grow = &gd[r * e..(r + 1) * e];
        let mu = saved.mean[r];
        let is = saved.inv_std[r];
        let mut mean_g = 0.0f32;
        let mut mean_gxh = 0.0f32;
        for ((&v, &g), (&gmv, _)) in row.iter().zip(grow).zip(gam.iter().zip(0..e)) {
            let xh = (v - mu) * is;
            let gg = g * gmv;
            mean_g += gg;
            mean_gxh += gg * xh;
        }
        mean_g /= e as f32;
        mean_gxh /= e as f32;
        let dxrow = &mut dx[r * e..(r + 1) * e];
        for j in 0..e {
            let xh = (row[j] - mu) * is;
            dgamma[j] += grow[j] * xh;
            dbeta[j] += grow[j];
            dxrow[j] = is * (grow[j] * gam[j] - mean_g - xh * mean_gxh);
        }
    }
    (
        Tensor::from_vec(s, dx),
        Tensor::from_vec(&[e], dgamma),
        Tensor::from_vec(&[e], dbeta),
    )
}

// ---------------------------------------------------------------------------
// softmax over the last axis
// ---------------------------------------------------------------------------

pub fn softmax_fwd(x: &Tensor) -> Tensor {
    let s = x.shape();
    assert!(!s.is_empty());
    let e = *s.last().unwrap();
    let rows = x.len() / e;
    let xd = x.data();
    let mut out = vec![0.0f32; xd.len()];
    for r in 0..rows {
        let row = &xd[r * e..(r + 1) * e];
        let mut mx = f32::NEG_INFINITY;
        for &v in row {
            if v > mx {
                mx = v;
            }
        }
        let orow = &mut out[r * e..(r + 1) * e];
        let mut z = 0.0f32;
        for (o, &v) in orow.iter_mut().zip(row) {
            let ev = crate::math::expf(v - mx);
            *o = ev;
            z += ev;
        }
        let inv = 1.0 / z;
        for o in orow.iter_mut() {
            *o *= inv;
        }
    }
    Tensor::from_vec(s, out)
}

pub fn softmax_bwd(y: &Tensor, dy: &Tensor) -> Tensor {
    let s = y.shape();
    let e = *s.last().unwrap();
    let rows = y.len() / e;
    let yd = y.data();
    let gd = dy.data();
    let mut dx = vec![0.0f32; yd.len()];
    for r in 0..rows {
        let yrow = &yd[r * e..(r + 1) * e];
        let grow = &gd[r * e..(r + 1) * e];
        let mut dot = 0.0f32;
        for (&yv, &gv) in yrow.iter().zip(grow) {
            dot += yv * gv;
        }
        let drow = &mut dx[r * e..(r + 1) * e];
        for ((o, &yv), &gv) in drow.iter_mut().zip(yrow).zip(grow) {
            *o = yv * (gv - dot);
        }
    }
    Tensor::from_vec(s, dx)
}
