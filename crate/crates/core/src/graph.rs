//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation of one forward pass; node ids
//! are topologically ordered by construction, so the backward sweep is
//! a single reverse walk. Parameters are leased into the graph as leaf
//! nodes and their gradients are pushed back into the [`ParamStore`]
//! after [`Graph::backward`]. A graph supports one backward pass; a
//! fresh graph is built per training step.
//!
//! Gradients of leaf nodes (inputs and parameters) are retained and can
//! be inspected after backward; intermediate gradients are consumed as
//! the sweep passes them.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use crate::kernels::{self, Conv3dSpec, Deconv3dSpec};
use crate::math;
use crate::param::{ParamId, ParamStore};
use crate::rng::Prng;
use crate::tensor::{self, Tensor};

/// Forward-pass mode: controls batchnorm statistics and dropout.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

type BackFn = Box<dyn FnOnce(&[Tensor], &Tensor) -> Vec<(usize, Tensor)>>;

pub struct Graph {
    mode: Mode,
    vals: Vec<Tensor>,
    backs: Vec<Option<BackFn>>,
    param_of: Vec<Option<ParamId>>,
    grads: Vec<Option<Tensor>>,
    ran_backward: bool,
}

/// Batch statistics returned by a training-mode batchnorm so the caller
/// can fold them into running statistics.
pub struct BnBatchStats {
    pub mean: Vec<f32>,
    pub var: Vec<f32>,
}

impl Graph {
    pub fn new(mode: Mode) -> Self {
        Self {
            mode,
            vals: Vec::new(),
            backs: Vec::new(),
            param_of: Vec::new(),
            grads: Vec::new(),
            ran_backward: false,
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.vals[v.0]
    }

    /// Gradient of a leaf node, available after [`Graph::backward`].
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    fn push(&mut self, val: Tensor, back: Option<BackFn>) -> Var {
        self.vals.push(val);
        self.backs.push(back);
        self.param_of.push(None);
        Var(self.vals.len() - 1)
    }

    /// Leaf holding arbitrary data; its gradient is retained.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, None)
    }

    /// Lease a parameter into the graph as a leaf.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let v = self.push(store.value(id).clone(), None);
        self.param_of[v.0] = Some(id);
        v
    }

    // -- elementwise ------------------------------------------------------

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let val = self.vals[a.0].add(&self.vals[b.0]);
        self.push(
            val,
            Some(Box::new(move |_vals, g| {
                vec![(a.0, g.clone()), (b.0, g.clone())]
            })),
        )
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let val = self.vals[a.0].sub(&self.vals[b.0]);
        self.push(
            val,
            Some(Box::new(move |_vals, g| {
                vec![(a.0, g.clone()), (b.0, g.scale(-1.0))]
            })),
        )
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let val = self.vals[a.0].zip_map(&self.vals[b.0], |x, y| x * y);
        self.push(
            val,
            Some(Box::new(move |vals, g| {
                vec![
                    (a.0, g.zip_map(&vals[b.0], |gv, bv| gv * bv)),
                    (b.0, g.zip_map(&vals[a.0], |gv, av| gv * av)),
                ]
            })),
        )
    }

    pub fn scale(&mut self, a: Var, c: f32) -> Var {
        let val = self.vals[a.0].scale(c);
        self.push(
            val,
            Some(Box::new(move |_vals, g| vec![(a.0, g.scale(c))])),
        )
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let val = self.vals[a.0].map(|v| if v > 0.0 { v } else { 0.0 });
        self.push(
            val,
            Some(Box::new(move |vals, g| {
                vec![(a.0, g.zip_map(&vals[a.0], |gv, xv| if xv > 0.0 { gv } else { 0.0 }))]
            })),
        )
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let val = self.vals[a.0].map(math::absf);
        self.push(
            val,
            Some(Box::new(move |vals, g| {
                vec![(a.0, g.zip_map(&vals[a.0], |gv, xv| {
                    if xv > 0.0 {
                        gv
                    } else if xv < 0.0 {
                        -gv
                    } else {
                        0.0
                    }
                }))]
            })),
        )
    }

    /// Mean over every element, producing a scalar.
    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.vals[a.0].len();
        assert!(n > 0, "mean of an empty tensor");
        let val = Tensor::scalar(self.vals[a.0].mean() as f32);
        let shape: Vec<usize> = self.vals[a.0].shape().to_vec();
        self.push(
            val,
            Some(Box::new(move |_vals, g| {
                let gv = g.item() / n as f32;
                vec![(a.0, Tensor::filled(&shape, gv))]
            })),
        )
    }

    // -- broadcast adds ---------------------------------------------------

    /// x [N, C, ...] + bias [C], broadcast over batch and spatial axes.
    pub fn add_channel_bias(&mut self, x: Var, b: Var) -> Var {
        let xs = self.vals[x.0].shape().to_vec();
        assert!(xs.len() >= 2);
        let (n, c) = (xs[0], xs[1]);
        let spatial: usize = xs[2..].iter().product();
        assert_eq!(self.vals[b.0].shape(), [c], "channel bias shape mismatch");
        let bd = self.vals[b.0].data();
        let mut out = self.vals[x.0].data().to_vec();
        for in_ in 0..n {
            for ch in 0..c {
                let base = (in_ * c + ch) * spatial;
                let bias = bd[ch];
                for v in &mut out[base..base + spatial] {
                    *v += bias;
                }
            }
        }
        let val = Tensor::from_vec(&xs, out);
        self.push(
            val,
            Some(Box::new(move |_vals, g| {
                let mut db = vec![0.0f32; c];
                let gd = g.data();
                for in_ in 0..n {
                    for ch in 0..c {
                        let base = (in_ * c + ch) * spatial;
                        let mut acc = 0.0f32;
                        for &gv in &gd[base..base + spatial] {
                            acc += gv;
                        }
                        db[ch] += acc;
                    }
                }
                vec![(x.0, g.clone()), (b.0, Tensor::from_vec(&[c], db))]
            })),
        )
    }

    /// x [N, C, ...] + bias [N, C], broadcast over spatial axes only.
    /// Used for per-sample timestep conditioning.
    pub fn add_sample_channel_bias(&mut self, x: Var, b: Var) -> Var {
        let xs = self.vals[x.0].shape().to_vec();
        assert!(xs.len() >= 2);
        let (n, c) = (xs[0], xs[1]);
        let spatial: usize = xs[2..].iter().product();
        assert_eq!(
            self.vals[b.0].shape(),
            [n, c],
            "per-sample channel bias shape mismatch"
        );
        let bd = self.vals[b.0].data();
        let mut out = self.vals[x.0].data().to_vec();
        for in_ in 0..n {
            for ch in 0..c {
                let base = (in_ * c + ch) * spatial;
                let bias = bd[in_ * c + ch];
                for v in &mut out[base..base + spatial] {
                    *v += bias;
                }
            }
        }
        let val = Tensor::from_vec(&xs, out);
        self.push(
            val,
            Some(Box::new(move |_vals, g| {
                let mut db = vec![0.0f32; n * c];
                let gd = g.data();
                for in_ in 0..n {
                    for ch in 0..c {
                        let base = (in_ * c + ch) * spatial;
                        let mut acc = 0.0f32;
                        for &gv in &gd[base..base + spatial] {
                            acc += gv;
                        }
                        db[in_ * c + ch] = acc;
                    }
                }
                vec![(x.0, g.clone()), (b.0, Tensor::from_vec(&[n, c], db))]
            })),
        )
    }

    /// x [N, L, E] + table [L, E], broadcast over the leading axis.
    /// Used for learned position embeddings.
    pub fn add_broadcast0(&mut self, x: Var, table: Var) -> Var {
        let xs = self.vals[x.0].shape().to_vec();
        assert_eq!(xs.len(), 3);
        let (n, l, e) = (xs[0], xs[1], xs[2]);
        assert_eq!(self.vals[table.0].shape(), [l, e]);
        let td = self.vals[table.0].data();
        let mut out = self.vals[x.0].data().to_vec();
        for in_ in 0..n {
            let base = in_ * l * e;
            for (o, &tv) in out[base..base + l * e].iter_mut().zip(td) {
                *o += tv;
            }
        }
        let val = Tensor::from_vec(&xs, out);
        self.push(
            val,
            Some(Box::new(move |_vals, g| {
                let mut dt = vec![0.0f32; l * e];
                let gd = g.data();
                for in_ in 0..n {
                    let base = in_ * l * e;
                    for (o, &gv) in dt.iter_mut().zip(&gd[base..base + l * e]) {
                        *o += gv;
                    }
                }
                vec![(x.0, g.clone()), (table.0, Tensor::from_vec(&[l, e], dt))]
            })),
        )
    }

    // -- shape ops --------------------------------------------------------

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        let old: Vec<usize> = self.vals[x.0].shape().to_vec();
        let val = self.vals[x.0].reshape(shape);
        self.push(
            val,
            Some(Box::new(move |_vals, g| vec![(x.0, g.reshape(&old))])),
        )
    }

    /// Swap axes 1 and 2 of a rank-4 tensor.
    pub fn transpose12(&mut self, x: Var) -> Var {
        let val = tensor::transpose_12(&self.vals[x.0]);
        self.push(
            val,
            Some(Box::new(move |_vals, g| {
                vec![(x.0, tensor::transpose_12(g))]
            })),
        )
    }

    /// Concatenate two tensors along the channel axis (axis 1).
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Var {
        let sa = self.vals[a.0].shape().to_vec();
        let sb = self.vals[b.0].shape().to_vec();
        assert_eq!(sa.len(), sb.len());
        assert!(sa.len() >= 2);
        assert_eq!(sa[0], sb[0], "concat: batch mismatch");
        assert_eq!(&sa[2..], &sb[2..], "concat: trailing shape mismatch");
        let (n, ca, cb) = (sa[0], sa[1], sb[1]);
        let spatial: usize = sa[2..].iter().product();
        let mut shape = sa.clone();
        shape[1] = ca + cb;
        let mut out = vec![0.0f32; n * (ca + cb) * spatial];
        let ad = self.vals[a.0].data();
        let bd = self.vals[b.0].data();
        for in_ in 0..n {
            let dst = in_ * (ca + cb) * spatial;
            let asrc = in_ * ca * spatial;
            let bsrc = in_ * cb * spatial;
            out[dst..dst + ca * spatial].copy_from_slice(&ad[asrc..asrc + ca * spatial]);
            out[dst + ca * spatial..dst + (ca + cb) * spatial]
                .copy_from_slice(&bd[bsrc..bsrc + cb * spatial]);
        }
        let val = Tensor::from_vec(&shape, out);
        let (sa_c, sb_c) = (sa, sb);
        self.push(
            val,
            Some(Box::new(move |_vals, g| {
                let gd = g.data();
                let mut da = vec![0.0f32; n * ca * spatial];
                let mut db = vec![0.0f32; n * cb * spatial];
                for in_ in 0..n {
                    let src = in_ * (ca + cb) * spatial;
                    let adst = in_ * ca * spatial;
                    let bdst = in_ * cb * spatial;
                    da[adst..adst + ca * spatial]
                        .copy_from_slice(&gd[src..src + ca * spatial]);
                    db[bdst..bdst + cb * spatial]
                        .copy_from_slice(&gd[src + ca * spatial..src + (ca + cb) * spatial]);
                }
                vec![
                    (a.0, Tensor::from_vec(&sa_c, da)),
                    (b.0, Tensor::from_vec(&sb_c, db)),
                ]
            })),
        )
    }

    /// Zero-pad the spectral axis (axis 2 of [N, C, D, H, W]) up to `target`.
    pub fn pad_spectral(&mut self, x: Var, target: usize) -> Var {
        let s = self.vals[x.0].shape().to_vec();
        assert_eq!(s.len(), 5);
        let (n, c, d, h, w) = (s[0], s[1], s[2], s[3], s[4]);
        assert!(target >= d);
        if target == d {
            return self.scale(x, 1.0);
        }
        let plane = h * w;
        let mut out = vec![0.0f32; n * c * target * plane];
        let xd = self.vals[x.0].data();
        for nc in 0..n * c {
            let src = nc * d * plane;
            let dst = nc * target * plane;
            out[dst..dst + d * plane].copy_from_slice(&xd[src..src + d * plane]);
        }
        let val = Tensor::from_vec(&[n, c, target, h, w], out);
        self.push(
            val,
            Some(Box::new(move |_vals, g| {
                let gd = g.data();
                let mut dx = vec![0.0f32; n * c * d * plane];
                for nc in 0..n * c {
                    let src = nc * target * plane;
                    let dst = nc * d * plane;
                    dx[dst..dst + d * plane].copy_from_slice(&gd[src..src + d * plane]);
                }
                vec![(x.0, Tensor::from_vec(&[n, c, d, h, w], dx))]
            })),
        )
    }

    /// Crop the spectral axis back down to `target` (inverse of pad).
    pub fn crop_spectral(&mut self, x: Var, target: usize) -> Var {
        let s = self.vals[x.0].shape().to_vec();
        assert_eq!(s.len(), 5);
        let (n, c, d, h, w) = (s[0], s[1], s[2], s[3], s[4]);
        assert!(target <= d);
        if target == d {
            return self.scale(x, 1.0);
        }
        let plane = h * w;
        let mut out = vec![0.0f32; n * c * target * plane];
        let xd = self.vals[x.0].data();
        for nc in 0..n * c {
            let src = nc * d * plane;
            let dst = nc * target * plane;
            out[dst..dst + target * plane].copy_from_slice(&xd[src..src + target * plane]);
        }
        let val = Tensor::from_vec(&[n, c, target, h, w], out);
        self.push(
            val,
            Some(Box::new(move |_vals, g| {
                let gd = g.data();
                let mut dx = vec![0.0f32; n * c * d * plane];
                for nc in 0..n * c {
                    let src = nc * target * plane;
                    let dst = nc * d * plane;
                    dx[dst..dst + target * plane].copy_from_slice(&gd[src..src + target * plane]);
                }
                vec![(x.0, Tensor::from_vec(&[n, c, d, h, w], dx))]
            })),
        )
    }

    /// Mean over the token axis: [N, L, E] -> [N, E].
    pub fn mean_tokens(&mut self, x: Var) -> Var {
        let s = self.vals[x.0].shape().to_vec();
        assert_eq!(s.len(), 3);
        let (n, l, e) = (s[0], s[1], s[2]);
        let xd = self.vals[x.0].data();
        let mut out = vec![0.0f32; n * e];
        for in_ in 0..n {
            for il in 0..l {
                let src = (in_ * l + il) * e;
                let dst = in_ * e;
                for (o, &v) in out[dst..dst + e].iter_mut().zip(&xd[src..src + e]) {
                    *o += v;
                }
            }
        }
        let inv = 1.0 / l as f32;
        for o in &mut out {
            *o *= inv;
        }
        let val = Tensor::from_vec(&[n, e], out);
        self.push(
            val,
            Some(Box::new(move |_vals, g| {
                let gd = g.data();
                let mut dx = vec![0.0f32; n * l * e];
                for in_ in 0..n {
                    for il in 0..l {
                        let dst = (in_ * l + il) * e;
                        let src = in_ * e;
                        for (o, &gv) in dx[dst..dst + e].iter_mut().zip(&gd[src..src + e]) {
                            *o = gv * inv;
                        }
                    }
                }
                vec![(x.0, Tensor::from_vec(&[n, l, e], dx))]
            })),
        )
    }

    // -- dense / attention ------------------------------------------------

    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let val = kernels::linear_fwd(&self.vals[x.0], &self.vals[w.0], &self.vals[b.0]);
        self.push(
            val,
            Some(Box::new(move |vals, g| {
                let (dx, dw, db) = kernels::linear_bwd(&vals[x.0], &vals[w.0], g);
                vec![(x.0, dx), (w.0, dw), (b.0, db)]
            })),
        )
    }

    pub fn bmm_nn(&mut self, a: Var, b: Var) -> Var {
        let val = kernels::bmm_nn(&self.vals[a.0], &self.vals[b.0]);
        self.push(
            val,
            Some(Box::new(move |vals, g| {
                vec![
                    (a.0, kernels::bmm_nt(g, &vals[b.0])),
                    (b.0, kernels::bmm_tn(&vals[a.0], g)),
                ]
            })),
        )
    }

    pub fn bmm_nt(&mut self, a: Var, b: Var) -> Var {
        let val = kernels::bmm_nt(&self.vals[a.0], &self.vals[b.0]);
        self.push(
            val,
            Some(Box::new(move |vals, g| {
                vec![
                    (a.0, kernels::bmm_nn(g, &vals[b.0])),
                    (b.0, kernels::bmm_tn(g, &vals[a.0])),
                ]
            })),
        )
    }

    pub fn softmax(&mut self, x: Var) -> Var {
        let val = kernels::softmax_fwd(&self.vals[x.0]);
        let y_for_back = val.clone();
        self.push(
            val,
            Some(Box::new(move |_vals, g| {
                vec![(x.0, kernels::softmax_bwd(&y_for_back, g))]
            })),
        )
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let (val, saved) =
            kernels::layer_norm_fwd(&self.vals[x.0], &self.vals[gamma.0], &self.vals[beta.0]);
        self.push(
            val,
            Some(Box::new(move |vals, g| {
                let (dx, dgamma, dbeta) =
                    kernels::layer_norm_bwd(&vals[x.0], &vals[gamma.0], &saved, g);
                vec![(x.0, dx), (gamma.0, dgamma), (beta.0, dbeta)]
            })),
        )
    }

    /// Multi-head self-attention over [N, L, E] with tied sequence
    /// length. Projections are E->E; `heads` must divide E.
    #[allow(clippy::too_many_arguments)]
    pub fn multi_head_attention(
        &mut self,
        x: Var,
        wq: Var,
        bq: Var,
        wk: Var,
        bk: Var,
        wv: Var,
        bv: Var,
        wo: Var,
        bo: Var,
        heads: usize,
    ) -> Var {
        let s = self.vals[x.0].shape().to_vec();
        assert_eq!(s.len(), 3, "attention expects [N, L, E]");
        let (n, l, e) = (s[0], s[1], s[2]);
        assert!(heads >= 1 && e % heads == 0, "heads must divide model dim");
        let dh = e / heads;

        let flat = self.reshape(x, &[n * l, e]);
        let q = self.linear(flat, wq, bq);
        let k = self.linear(flat, wk, bk);
        let v = self.linear(flat, wv, bv);

        // [N*L, E] -> [N, L, H, dh] -> [N, H, L, dh] -> [N*H, L, dh]
        let split = |g: &mut Graph, t: Var| {
            let t = g.reshape(t, &[n, l, heads, dh]);
            let t = g.transpose12(t);
            g.reshape(t, &[n * heads, l, dh])
        };
        let qh = split(self, q);
        let kh = split(self, k);
        let vh = split(self, v);

        let scores = self.bmm_nt(qh, kh);
        let scaled = self.scale(scores, 1.0 / math::sqrtf(dh as f32));
        let probs = self.softmax(scaled);
        let ctx = self.bmm_nn(probs, vh);

        // back to [N*L, E]
        let ctx = self.reshape(ctx, &[n, heads, l, dh]);
        let ctx = self.transpose12(ctx);
        let ctx = self.reshape(ctx, &[n * l, e]);
        let out = self.linear(ctx, wo, bo);
        self.reshape(out, &[n, l, e])
    }

    // -- convolution ------------------------------------------------------

    pub fn conv3d(&mut self, x: Var, w: Var, b: Var, spec: Conv3dSpec) -> Var {
        let val = kernels::conv3d_fwd(&self.vals[x.0], &self.vals[w.0], &self.vals[b.0], spec);
        let x_shape = self.vals[x.0].shape().to_vec();
        let w_shape = self.vals[w.0].shape().to_vec();
        self.push(
            val,
            Some(Box::new(move |vals, g| {
                vec![
                    (x.0, kernels::conv3d_bwd_x(g, &vals[w.0], spec, &x_shape)),
                    (w.0, kernels::conv3d_bwd_w(&vals[x.0], g, spec, &w_shape)),
                    (b.0, kernels::conv3d_bwd_b(g)),
                ]
            })),
        )
    }

    pub fn deconv3d(&mut self, x: Var, w: Var, b: Var, spec: Deconv3dSpec) -> Var {
        let val = kernels::deconv3d_fwd(&self.vals[x.0], &self.vals[w.0], &self.vals[b.0], spec);
        let x_shape = self.vals[x.0].shape().to_vec();
        let w_shape = self.vals[w.0].shape().to_vec();
        self.push(
            val,
            Some(Box::new(move |vals, g| {
                vec![
                    (x.0, kernels::deconv3d_bwd_x(g, &vals[w.0], spec, &x_shape)),
                    (w.0, kernels::deconv3d_bwd_w(&vals[x.0], g, spec, &w_shape)),
                    (b.0, kernels::conv3d_bwd_b(g)),
                ]
            })),
        )
    }

    // -- normalization with state ------------------------------------------

    /// Training-mode batchnorm: normalizes with batch statistics and
    /// returns them so the caller can update running statistics.
    pub fn batchnorm_train(&mut self, x: Var, gamma: Var, beta: Var) -> (Var, BnBatchStats) {
        let (mean, var) = kernels::bn_batch_stats(&self.vals[x.0]);
        let (val, saved) = kernels::bn_apply(
            &self.vals[x.0],
            &mean,
            &var,
            &self.vals[gamma.0],
            &self.vals[beta.0],
        );
        let v = self.push(
            val,
            Some(Box::new(move |vals, g| {
                let (dx, dgamma, dbeta) =
                    kernels::bn_bwd_train(&vals[x.0], &vals[gamma.0], &saved, g);
                vec![(x.0, dx), (gamma.0, dgamma), (beta.0, dbeta)]
            })),
        );
        (v, BnBatchStats { mean, var })
    }

    /// Inference-mode batchnorm using fixed running statistics.
    pub fn batchnorm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[f32],
        running_var: &[f32],
    ) -> Var {
        let (val, saved) = kernels::bn_apply(
            &self.vals[x.0],
            running_mean,
            running_var,
            &self.vals[gamma.0],
            &self.vals[beta.0],
        );
        self.push(
            val,
            Some(Box::new(move |vals, g| {
                let (dx, dgamma, dbeta) =
                    kernels::bn_bwd_eval(&vals[x.0], &vals[gamma.0], &saved, g);
                vec![(x.0, dx), (gamma.0, dgamma), (beta.0, dbeta)]
            })),
        )
    }

    // -- losses / misc ------------------------------------------------------

    /// Mean cross-entropy of logits [N, C] against class indices.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Var {
        let s = self.vals[logits.0].shape().to_vec();
        assert_eq!(s.len(), 2);
        let (n, c) = (s[0], s[1]);
        assert_eq!(targets.len(), n, "one target per row");
        assert!(targets.iter().all(|&t| t < c), "target class out of range");
        let probs = kernels::softmax_fwd(&self.vals[logits.0]);
        let mut loss = 0.0f64;
        for (i, &t) in targets.iter().enumerate() {
            let p = probs.data()[i * c + t].max(1e-12);
            loss -= math::lnf(p) as f64;
        }
        loss /= n as f64;
        let targets_c: Vec<usize> = targets.to_vec();
        self.push(
            Tensor::scalar(loss as f32),
            Some(Box::new(move |_vals, g| {
                let gv = g.item() / n as f32;
                let mut dl = probs.into_vec();
                for (i, &t) in targets_c.iter().enumerate() {
                    dl[i * c + t] -= 1.0;
                }
                for v in &mut dl {
                    *v *= gv;
                }
                vec![(logits.0, Tensor::from_vec(&[n, c], dl))]
            })),
        )
    }

    /// Inverted dropout; identity in eval mode. Mask draws come from the
    /// caller's RNG so runs stay reproducible.
    pub fn dropout(&mut self, x: Var, p: f32, rng: &mut Prng) -> Var {
        assert!((0.0..1.0).contains(&p), "dropout rate must be in [0, 1)");
        if self.mode == Mode::Eval || p == 0.0 {
            return self.scale(x, 1.0);
        }
        let n = self.vals[x.0].len();
        let keep = 1.0 - p;
        let scale = 1.0 / keep;
        let mut mask = Vec::with_capacity(n);
        for _ in 0..n {
            let keep_it = crate::rng::uniform(rng, 0.0, 1.0) >= p;
            mask.push(if keep_it { scale } else { 0.0 });
        }
        let shape = self.vals[x.0].shape().to_vec();
        let mask = Tensor::from_vec(&shape, mask);
        let val = self.vals[x.0].zip_map(&mask, |a, m| a * m);
        self.push(
            val,
            Some(Box::new(move |_vals, g| {
                vec![(x.0, g.zip_map(&mask, |gv, m| gv * m))]
            })),
        )
    }

    // -- backward -----------------------------------------------------------

    /// Reverse sweep from a scalar loss. Gradients of leaves are
    /// retained in the graph; parameter gradients also accumulate into
    /// `store`. Panics if the loss is not scalar.
    pub fn backward(&mut self, loss: Var, store: &mut ParamStore) {
        assert!(!self.ran_backward, "graph already ran backward");
        self.ran_backward = true;
        let ls = &self.vals[loss.0];
        assert!(ls.is_scalar(), "backward needs a scalar loss, got {:?}", ls.shape());

        self.grads = vec![None; self.vals.len()];
        self.grads[loss.0] = Some(Tensor::filled(ls.shape(), 1.0));

        for id in (0..self.vals.len()).rev() {
            if self.grads[id].is_none() {
                continue;
            }
            if let Some(back) = self.backs[id].take() {
                let g = self.grads[id].take().unwrap();
                for (pid, dg) in back(&self.vals, &g) {
                    match &mut self.grads[pid] {
                        Some(acc) => acc.axpy(1.0, &dg),
                        slot => *slot = Some(dg),
                    }
                }
            }
            // leaves keep their gradient for inspection
        }

        for (id, pid) in self.param_of.iter().enumerate() {
            if let (Some(pid), Some(g)) = (pid, &self.grads[id]) {
                store.accumulate_grad(*pid, g);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn square_has_gradient_two_x() {
        // f(theta) = theta^2 at theta = 3 -> gradient 6
        let mut store = ParamStore::new();
        let theta = store.add("theta", Tensor::scalar(3.0));
        let mut g = Graph::new(Mode::Train);
        let t = g.param(&store, theta);
        let sq = g.mul(t, t);
        let loss = g.mean_all(sq);
        g.backward(loss, &mut store);
        assert_eq!(store.get(theta).grad.item(), 6.0);
    }

    #[test]
    fn constant_loss_leaves_zero_gradient() {
        let mut store = ParamStore::new();
        let theta = store.add("theta", Tensor::scalar(3.0));
        let mut g = Graph::new(Mode::Train);
        let _t = g.param(&store, theta);
        let c = g.input(Tensor::scalar(5.0));
        let loss = g.mean_all(c);
        g.backward(loss, &mut store);
        // disconnected parameter: gradient stays zero
        assert_eq!(store.get(theta).grad.item(), 0.0);
    }

    #[test]
    fn gradients_accumulate_across_backwards() {
        let mut store = ParamStore::new();
        let theta = store.add("theta", Tensor::scalar(2.0));
        for _ in 0..2 {
            let mut g = Graph::new(Mode::Train);
            let t = g.param(&store, theta);
            let sq = g.mul(t, t);
            let loss = g.mean_all(sq);
            g.backward(loss, &mut store);
        }
        // two passes without zeroing: 2 * (2 * theta) = 8
        assert_eq!(store.get(theta).grad.item(), 8.0);
    }

    #[test]
    #[should_panic(expected = "scalar loss")]
    fn backward_rejects_non_scalar() {
        let mut store = ParamStore::new();
        let mut g = Graph::new(Mode::Train);
        let x = g.input(Tensor::zeros(&[2, 2]));
        g.backward(x, &mut store);
    }

    #[test]
    fn dropout_eval_is_identity() {
        let mut r = rng::seeded(1);
        let x = rng::normal_tensor(&[4, 8], &mut r);
        let mut g = Graph::new(Mode::Eval);
        let xv = g.input(x.clone());
        let y = g.dropout(xv, 0.5, &mut r);
        assert_eq!(g.value(y), &x);
    }

    #[test]
    fn softmax_grad_is_orthogonal_to_ones() {
        // d softmax / dx contracted with any dy has zero row sums
        let mut store = ParamStore::new();
        let mut r = rng::seeded(2);
        let mut g = Graph::new(Mode::Train);
        let x = g.input(rng::normal_tensor(&[3, 5], &mut r));
        let y = g.softmax(x);
        let w = g.input(rng::normal_tensor(&[3, 5], &mut r));
        let prod = g.mul(y, w);
        let loss = g.mean_all(prod);
        g.backward(loss, &mut store);
        let dx = g.grad(x).unwrap();
        for row in 0..3 {
            let s: f32 = dx.data()[row * 5..(row + 1) * 5].iter().sum();
            assert!(s.abs() < 1e-6, "softmax grad row sum {s}");
        }
    }
}
