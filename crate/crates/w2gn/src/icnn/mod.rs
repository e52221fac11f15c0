//! DenseICNN: scalar networks convex in their input.
//!
//! Architecture: convex-quadratic layers feed the input directly into every
//! hidden stage, nonnegative linear layers connect consecutive stages, CELU
//! activations throughout, and a `beta/2 ||x||^2` term on the output makes the
//! network beta-strongly convex. The input-gradient of such a network is a
//! cyclically monotone map, which is what training ultimately produces.
//!
//! Parameters live in one flat `Vec<f64>` in declaration order (quadratic
//! layers first, then linear layers, then the final scalar layer); the layout
//! is the contract for gradients, optimizer state and checkpoints alike.
//!
//! The batched passes here are hand-derived. `backward` is plain reverse mode;
//! `dual_backward` pushes a dual number through both sweeps, which yields
//! Hessian-vector products in the input and mixed parameter-input second
//! derivatives in one pass. Both are cross-checked against the tape engine in
//! `grad` and against finite differences.

mod tape;

pub use tape::build_forward_tape;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut2, Axis};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::ops::Range;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IcnnError {
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),
    #[error("input has {got} columns, network expects {want}")]
    DimensionMismatch { want: usize, got: usize },
    #[error("non-finite network output")]
    NonFinite,
}

/// Hyperparameters `[r; h0; h1,...,hK]` plus the strong-convexity constant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenseIcnnSpec {
    pub input_dim: usize,
    pub rank: usize,
    pub widths: Vec<usize>,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_celu_alpha")]
    pub celu_alpha: f64,
}

fn default_beta() -> f64 {
    1e-6
}

fn default_celu_alpha() -> f64 {
    1.0
}

impl DenseIcnnSpec {
    pub fn validate(&self) -> Result<(), IcnnError> {
        if self.input_dim == 0 {
            return Err(IcnnError::InvalidSpec("input_dim must be positive".into()));
        }
        if self.rank == 0 || self.rank > self.input_dim {
            return Err(IcnnError::InvalidSpec(format!(
                "rank must be in 1..={}, got {}",
                self.input_dim, self.rank
            )));
        }
        if self.widths.is_empty() || self.widths.iter().any(|&h| h == 0) {
            return Err(IcnnError::InvalidSpec("need at least one positive hidden width".into()));
        }
        if self.beta < 0.0 {
            return Err(IcnnError::InvalidSpec("beta must be nonnegative".into()));
        }
        if self.celu_alpha <= 0.0 {
            return Err(IcnnError::InvalidSpec("celu_alpha must be positive".into()));
        }
        Ok(())
    }

    /// Closed-form parameter count from the layer shapes.
    pub fn param_count(&self) -> usize {
        let d = self.input_dim;
        let r = self.rank;
        let mut n = 0;
        for &h in &self.widths {
            n += h * r * d + h * d + h; // f, b, c
        }
        for w in self.widths.windows(2) {
            n += w[1] * w[0] + w[1]; // inner linear
        }
        n += self.widths[self.widths.len() - 1] + 1; // final linear
        n
    }
}

#[derive(Debug, Clone)]
struct CqRanges {
    f: Range<usize>,
    b: Range<usize>,
    c: Range<usize>,
}

#[derive(Debug, Clone)]
struct PlRanges {
    w: Range<usize>,
    bias: Range<usize>,
}

/// Offsets of every parameter array inside the flat vector.
#[derive(Debug, Clone)]
struct ParamLayout {
    cq: Vec<CqRanges>,
    pl: Vec<PlRanges>, // inner layers, then the final scalar layer
    total: usize,
}

impl ParamLayout {
    fn new(spec: &DenseIcnnSpec) -> Self {
        let d = spec.input_dim;
        let r = spec.rank;
        let mut off = 0;
        let mut take = |len: usize| {
            let range = off..off + len;
            off += len;
            range
        };
        let cq = spec
            .widths
            .iter()
            .map(|&h| CqRanges { f: take(h * r * d), b: take(h * d), c: take(h) })
            .collect();
        let mut pl: Vec<PlRanges> = spec
            .widths
            .windows(2)
            .map(|w| PlRanges { w: take(w[1] * w[0]), bias: take(w[1]) })
            .collect();
        let h_last = spec.widths[spec.widths.len() - 1];
        pl.push(PlRanges { w: take(h_last), bias: take(1) });
        ParamLayout { cq, pl, total: off }
    }
}

/// One input-convex network: spec plus a flat parameter vector.
#[derive(Debug, Clone)]
pub struct DenseIcnn {
    spec: DenseIcnnSpec,
    layout: ParamLayout,
    params: Vec<f64>,
}

/// Forward pass values and dual tangents of the input-gradient / parameter
/// gradient, as produced by [`DenseIcnn::dual_backward`].
pub struct DualBackwardOut {
    /// Network outputs per sample.
    pub values: Array1<f64>,
    /// Input gradients, one row per sample.
    pub dx: Array2<f64>,
    /// Seed-weighted parameter gradient, summed over the batch.
    pub grads: Vec<f64>,
    /// Tangent of `dx`: rows are `H_xx(x_i) . t_i` (input-Hessian products).
    pub dx_tangent: Array2<f64>,
    /// Tangent of `grads`: the parameter gradient of
    /// `sum_i seed_i * <t_i, grad_x psi(x_i)>`.
    pub grads_tangent: Vec<f64>,
}

fn celu(x: f64, alpha: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        alpha * ((x / alpha).exp() - 1.0)
    }
}

fn celu_d(x: f64, alpha: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        (x / alpha).exp()
    }
}

fn celu_dd(x: f64, alpha: f64) -> f64 {
    if x >= 0.0 {
        0.0
    } else {
        (x / alpha).exp() / alpha
    }
}

struct ForwardCache {
    /// Per stage: X F^T, shape (n, h_k * r).
    g: Vec<Array2<f64>>,
    /// Per stage: pre-activations, shape (n, h_k).
    s: Vec<Array2<f64>>,
    /// Per stage: CELU(s), shape (n, h_k).
    z: Vec<Array2<f64>>,
    values: Array1<f64>,
}

struct DualCache {
    plain: ForwardCache,
    g_t: Vec<Array2<f64>>,
    s_t: Vec<Array2<f64>>,
    z_t: Vec<Array2<f64>>,
}

impl DenseIcnn {
    pub fn from_params(spec: DenseIcnnSpec, params: Vec<f64>) -> Result<Self, IcnnError> {
        spec.validate()?;
        let layout = ParamLayout::new(&spec);
        if params.len() != layout.total {
            return Err(IcnnError::InvalidSpec(format!(
                "expected {} parameters, got {}",
                layout.total,
                params.len()
            )));
        }
        Ok(DenseIcnn { spec, layout, params })
    }

    pub fn zeroed(spec: DenseIcnnSpec) -> Result<Self, IcnnError> {
        spec.validate()?;
        let layout = ParamLayout::new(&spec);
        let params = vec![0.0; layout.total];
        Ok(DenseIcnn { spec, layout, params })
    }

    /// Random initialization, deterministic in the seed. Linear weights start
    /// nonnegative so the network is convex from the first step.
    pub fn init(spec: DenseIcnnSpec, seed: u64) -> Result<Self, IcnnError> {
        let mut net = Self::zeroed(spec)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = net.spec.input_dim as f64;
        let r = net.spec.rank as f64;
        let f_scale = 1.0 / (r * d).sqrt();
        let b_scale = 1.0 / d.sqrt();
        let widths = net.spec.widths.clone();
        for k in 0..widths.len() {
            let cq = net.layout.cq[k].clone();
            for p in &mut net.params[cq.f] {
                *p = rng.gen_range(-f_scale..f_scale);
            }
            for p in &mut net.params[cq.b] {
                *p = rng.gen_range(-b_scale..b_scale);
            }
            // c stays zero
        }
        for (k, pl) in net.layout.pl.clone().into_iter().enumerate() {
            let n_in = if k < widths.len() - 1 { widths[k] } else { widths[widths.len() - 1] };
            let w_scale = 2.0 / (n_in as f64).sqrt();
            for p in &mut net.params[pl.w] {
                *p = rng.gen_range(0.0..w_scale);
            }
            // biases stay zero
        }
        Ok(net)
    }

    pub fn spec(&self) -> &DenseIcnnSpec {
        &self.spec
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.layout.total
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim
    }

    fn stages(&self) -> usize {
        self.spec.widths.len()
    }

    fn f_view(&self, k: usize) -> ArrayView2<'_, f64> {
        let h = self.spec.widths[k];
        ArrayView2::from_shape(
            (h * self.spec.rank, self.spec.input_dim),
            &self.params[self.layout.cq[k].f.clone()],
        )
        .unwrap()
    }

    fn b_view(&self, k: usize) -> ArrayView2<'_, f64> {
        let h = self.spec.widths[k];
        ArrayView2::from_shape((h, self.spec.input_dim), &self.params[self.layout.cq[k].b.clone()])
            .unwrap()
    }

    fn c_view(&self, k: usize) -> ArrayView1<'_, f64> {
        ArrayView1::from(&self.params[self.layout.cq[k].c.clone()])
    }

    /// Inner linear layer `k` maps stage k-1 to stage k (k in 1..=K).
    fn w_view(&self, k: usize) -> ArrayView2<'_, f64> {
        let (out, input) = (self.spec.widths[k], self.spec.widths[k - 1]);
        ArrayView2::from_shape((out, input), &self.params[self.layout.pl[k - 1].w.clone()]).unwrap()
    }

    fn bias_view(&self, k: usize) -> ArrayView1<'_, f64> {
        ArrayView1::from(&self.params[self.layout.pl[k - 1].bias.clone()])
    }

    fn final_ranges(&self) -> &PlRanges {
        self.layout.pl.last().unwrap()
    }

    fn w_final(&self) -> ArrayView1<'_, f64> {
        ArrayView1::from(&self.params[self.final_ranges().w.clone()])
    }

    fn bias_final(&self) -> f64 {
        self.params[self.final_ranges().bias.start]
    }

    fn check_input(&self, x: &ArrayView2<f64>) -> Result<(), IcnnError> {
        if x.ncols() != self.spec.input_dim {
            return Err(IcnnError::DimensionMismatch { want: self.spec.input_dim, got: x.ncols() });
        }
        Ok(())
    }

    /// Output of convex-quadratic stage `k` on one point: per neuron
    /// `||F_n x||^2 + <b_n, x> + c_n`.
    pub fn cq_forward(&self, k: usize, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.spec.input_dim);
        let h = self.spec.widths[k];
        let r = self.spec.rank;
        let f = self.f_view(k);
        let b = self.b_view(k);
        let c = self.c_view(k);
        let mut out = Vec::with_capacity(h);
        for n in 0..h {
            let mut quad = 0.0;
            for j in 0..r {
                let row = f.row(n * r + j);
                let t: f64 = row.iter().zip(x.iter()).map(|(a, b)| a * b).sum();
                quad += t * t;
            }
            let lin: f64 = b.row(n).iter().zip(x.iter()).map(|(a, b)| a * b).sum();
            out.push(quad + lin + c[n]);
        }
        out
    }

    fn cq_batch(&self, k: usize, x: &ArrayView2<f64>) -> (Array2<f64>, Array2<f64>) {
        let n = x.nrows();
        let h = self.spec.widths[k];
        let r = self.spec.rank;
        let g = c_order(x.dot(&self.f_view(k).t())); // (n, h*r)
        let mut cq = c_order(x.dot(&self.b_view(k).t())); // (n, h)
        {
            let gs = g.as_slice().unwrap();
            let cs = cq.as_slice_mut().unwrap();
            for i in 0..n {
                let grow = &gs[i * h * r..(i + 1) * h * r];
                let crow = &mut cs[i * h..(i + 1) * h];
                for nn in 0..h {
                    let mut acc = 0.0;
                    for j in 0..r {
                        let v = grow[nn * r + j];
                        acc += v * v;
                    }
                    crow[nn] += acc;
                }
            }
        }
        cq += &self.c_view(k);
        (g, cq)
    }

    fn forward_cached(&self, x: &ArrayView2<f64>) -> ForwardCache {
        let alpha = self.spec.celu_alpha;
        let stages = self.stages();
        let mut g = Vec::with_capacity(stages);
        let mut s = Vec::with_capacity(stages);
        let mut z: Vec<Array2<f64>> = Vec::with_capacity(stages);
        for k in 0..stages {
            let (gk, mut sk) = self.cq_batch(k, x);
            if k > 0 {
                sk += &z[k - 1].dot(&self.w_view(k).t());
                sk += &self.bias_view(k);
            }
            let zk = sk.mapv(|v| celu(v, alpha));
            g.push(gk);
            s.push(sk);
            z.push(zk);
        }
        let mut values = z[stages - 1].dot(&self.w_final());
        let half_beta = 0.5 * self.spec.beta;
        let bias = self.bias_final();
        for (i, row) in x.rows().into_iter().enumerate() {
            let sq: f64 = row.iter().map(|v| v * v).sum();
            values[i] += bias + half_beta * sq;
        }
        ForwardCache { g, s, z, values }
    }

    /// Batched network output, one value per row of `x`.
    pub fn forward(&self, x: &ArrayView2<f64>) -> Result<Array1<f64>, IcnnError> {
        self.check_input(x)?;
        let cache = self.forward_cached(x);
        if cache.values.iter().any(|v| !v.is_finite()) {
            return Err(IcnnError::NonFinite);
        }
        Ok(cache.values)
    }

    pub fn forward_one(&self, x: &[f64]) -> Result<f64, IcnnError> {
        let view = ArrayView2::from_shape((1, x.len()), x)
            .map_err(|_| IcnnError::DimensionMismatch { want: self.spec.input_dim, got: x.len() })?;
        Ok(self.forward(&view)?[0])
    }

    fn cq_backward(
        &self,
        k: usize,
        x: &ArrayView2<f64>,
        g: &Array2<f64>,
        dcq: &Array2<f64>,
        dx: &mut Array2<f64>,
        grads: &mut [f64],
    ) {
        let r = self.spec.rank;
        let dg = expand_scale(dcq, g, r);
        *dx += &dg.dot(&self.f_view(k));
        *dx += &dcq.dot(&self.b_view(k));
        let cq = &self.layout.cq[k];
        add_matmul_t(&dg, x, &mut grads[cq.f.clone()]);
        add_matmul_t(dcq, x, &mut grads[cq.b.clone()]);
        add_colsum(dcq, &mut grads[cq.c.clone()]);
    }

    /// Reverse pass with per-sample output adjoints `seeds`. Returns the
    /// forward values, the seed-weighted parameter gradient summed over the
    /// batch, and the per-row input gradients `seed_i * grad_x psi(x_i)`.
    pub fn backward(
        &self,
        x: &ArrayView2<f64>,
        seeds: &ArrayView1<f64>,
    ) -> Result<(Array1<f64>, Vec<f64>, Array2<f64>), IcnnError> {
        self.check_input(x)?;
        let alpha = self.spec.celu_alpha;
        let stages = self.stages();
        let cache = self.forward_cached(x);
        let n = x.nrows();
        let mut grads = vec![0.0; self.layout.total];
        let mut dx = Array2::zeros((n, self.spec.input_dim));

        // final layer and the beta term
        let w_fin = self.w_final();
        let mut dz = seeds
            .view()
            .insert_axis(Axis(1))
            .broadcast((n, self.spec.widths[stages - 1]))
            .unwrap()
            .to_owned();
        dz *= &w_fin;
        {
            let fin = self.final_ranges().clone();
            let dw = seeds.dot(&cache.z[stages - 1]);
            grads[fin.w.clone()].iter_mut().zip(dw.iter()).for_each(|(g, &v)| *g += v);
            grads[fin.bias.clone()][0] += seeds.sum();
        }
        if self.spec.beta != 0.0 {
            for i in 0..n {
                let sc = self.spec.beta * seeds[i];
                let xr = x.row(i);
                let mut dr = dx.row_mut(i);
                for (d, &xv) in dr.iter_mut().zip(xr.iter()) {
                    *d += sc * xv;
                }
            }
        }

        for k in (0..stages).rev() {
            let mut ds = dz;
            apply_celu_deriv(&mut ds, &cache.s[k], alpha);
            if k > 0 {
                let pl = &self.layout.pl[k - 1];
                add_matmul_t(&ds, &cache.z[k - 1].view(), &mut grads[pl.w.clone()]);
                add_colsum(&ds, &mut grads[pl.bias.clone()]);
                dz = c_order(ds.dot(&self.w_view(k)));
            } else {
                dz = Array2::zeros((0, 0));
            }
            self.cq_backward(k, x, &cache.g[k], &ds, &mut dx, &mut grads);
        }
        if cache.values.iter().any(|v| !v.is_finite()) {
            return Err(IcnnError::NonFinite);
        }
        Ok((cache.values, grads, dx))
    }

    /// The generative map: per-row input-gradient of the network.
    pub fn push(&self, x: &ArrayView2<f64>) -> Result<Array2<f64>, IcnnError> {
        let seeds = Array1::ones(x.nrows());
        let (_, _, dx) = self.backward(x, &seeds.view())?;
        Ok(dx)
    }

    pub fn push_one(&self, x: &[f64]) -> Result<Vec<f64>, IcnnError> {
        let view = ArrayView2::from_shape((1, x.len()), x)
            .map_err(|_| IcnnError::DimensionMismatch { want: self.spec.input_dim, got: x.len() })?;
        Ok(self.push(&view)?.row(0).to_vec())
    }

    fn dual_forward(&self, x: &ArrayView2<f64>, x_tan: &ArrayView2<f64>) -> DualCache {
        let alpha = self.spec.celu_alpha;
        let stages = self.stages();
        let plain = self.forward_cached(x);
        let mut g_t = Vec::with_capacity(stages);
        let mut s_t = Vec::with_capacity(stages);
        let mut z_t: Vec<Array2<f64>> = Vec::with_capacity(stages);
        for k in 0..stages {
            let gt = c_order(x_tan.dot(&self.f_view(k).t()));
            let mut st = c_order(x_tan.dot(&self.b_view(k).t()));
            st += &pairwise_dot_sum(&plain.g[k], &gt, self.spec.rank);
            if k > 0 {
                st += &z_t[k - 1].dot(&self.w_view(k).t());
            }
            let mut zt = st.clone();
            apply_celu_deriv(&mut zt, &plain.s[k], alpha);
            g_t.push(gt);
            s_t.push(st);
            z_t.push(zt);
        }
        DualCache { plain, g_t, s_t, z_t }
    }

    fn cq_dual_backward(
        &self,
        k: usize,
        x: &ArrayView2<f64>,
        x_tan: &ArrayView2<f64>,
        cache: &DualCache,
        dcq_p: &Array2<f64>,
        dcq_t: &Array2<f64>,
        dx_p: &mut Array2<f64>,
        dx_t: &mut Array2<f64>,
        grads: &mut [f64],
        grads_t: &mut [f64],
    ) {
        let r = self.spec.rank;
        let g_p = &cache.plain.g[k];
        let g_t = &cache.g_t[k];
        let dg_p = expand_scale(dcq_p, g_p, r);
        let mut dg_t = expand_scale(dcq_t, g_p, r);
        dg_t += &expand_scale(dcq_p, g_t, r);
        let f = self.f_view(k);
        let b = self.b_view(k);
        *dx_p += &dg_p.dot(&f);
        *dx_p += &dcq_p.dot(&b);
        *dx_t += &dg_t.dot(&f);
        *dx_t += &dcq_t.dot(&b);
        let cq = &self.layout.cq[k];
        add_matmul_t(&dg_p, x, &mut grads[cq.f.clone()]);
        add_matmul_t(dcq_p, x, &mut grads[cq.b.clone()]);
        add_colsum(dcq_p, &mut grads[cq.c.clone()]);
        add_matmul_t(&dg_t, x, &mut grads_t[cq.f.clone()]);
        add_matmul_t(&dg_p, x_tan, &mut grads_t[cq.f.clone()]);
        add_matmul_t(dcq_t, x, &mut grads_t[cq.b.clone()]);
        add_matmul_t(dcq_p, x_tan, &mut grads_t[cq.b.clone()]);
        add_colsum(dcq_t, &mut grads_t[cq.c.clone()]);
    }

    /// Forward-over-reverse pass: propagates the input direction `x_tan`
    /// through both sweeps. See [`DualBackwardOut`] for what comes out.
    pub fn dual_backward(
        &self,
        x: &ArrayView2<f64>,
        x_tan: &ArrayView2<f64>,
        seeds: &ArrayView1<f64>,
    ) -> Result<DualBackwardOut, IcnnError> {
        self.check_input(x)?;
        self.check_input(x_tan)?;
        let alpha = self.spec.celu_alpha;
        let stages = self.stages();
        let cache = self.dual_forward(x, x_tan);
        let n = x.nrows();
        let h_last = self.spec.widths[stages - 1];
        let mut grads = vec![0.0; self.layout.total];
        let mut grads_t = vec![0.0; self.layout.total];
        let mut dx_p = Array2::zeros((n, self.spec.input_dim));
        let mut dx_t = Array2::zeros((n, self.spec.input_dim));

        let w_fin = self.w_final();
        let mut dz_p =
            seeds.view().insert_axis(Axis(1)).broadcast((n, h_last)).unwrap().to_owned();
        dz_p *= &w_fin;
        let mut dz_t = Array2::zeros((n, h_last));
        {
            let fin = self.final_ranges().clone();
            let dw = seeds.dot(&cache.plain.z[stages - 1]);
            grads[fin.w.clone()].iter_mut().zip(dw.iter()).for_each(|(g, &v)| *g += v);
            grads[fin.bias.clone()][0] += seeds.sum();
            let dw_t = seeds.dot(&cache.z_t[stages - 1]);
            grads_t[fin.w.clone()].iter_mut().zip(dw_t.iter()).for_each(|(g, &v)| *g += v);
        }
        if self.spec.beta != 0.0 {
            for i in 0..n {
                let sc = self.spec.beta * seeds[i];
                for (j, (dp, dt)) in
                    dx_p.row_mut(i).iter_mut().zip(dx_t.row_mut(i).iter_mut()).enumerate()
                {
                    *dp += sc * x[[i, j]];
                    *dt += sc * x_tan[[i, j]];
                }
            }
        }

        for k in (0..stages).rev() {
            let s = &cache.plain.s[k];
            let s_t = &cache.s_t[k];
            // CELU' as a dual number: primal celu'(s), tangent celu''(s) * s_t
            let mut ds_p = dz_p;
            let mut ds_t = dz_t;
            {
                let sp = s.as_slice().unwrap();
                let st = s_t.as_slice().unwrap();
                let dp = ds_p.as_slice_mut().unwrap();
                let dt = ds_t.as_slice_mut().unwrap();
                for i in 0..sp.len() {
                    let c1 = celu_d(sp[i], alpha);
                    let c2 = celu_dd(sp[i], alpha) * st[i];
                    dt[i] = dt[i] * c1 + dp[i] * c2;
                    dp[i] *= c1;
                }
            }
            if k > 0 {
                let pl = &self.layout.pl[k - 1];
                add_matmul_t(&ds_p, &cache.plain.z[k - 1].view(), &mut grads[pl.w.clone()]);
                add_colsum(&ds_p, &mut grads[pl.bias.clone()]);
                add_matmul_t(&ds_t, &cache.plain.z[k - 1].view(), &mut grads_t[pl.w.clone()]);
                add_matmul_t(&ds_p, &cache.z_t[k - 1].view(), &mut grads_t[pl.w.clone()]);
                add_colsum(&ds_t, &mut grads_t[pl.bias.clone()]);
                let w = self.w_view(k);
                dz_p = c_order(ds_p.dot(&w));
                dz_t = c_order(ds_t.dot(&w));
            } else {
                dz_p = Array2::zeros((0, 0));
                dz_t = Array2::zeros((0, 0));
            }
            self.cq_dual_backward(
                k, x, x_tan, &cache, &ds_p, &ds_t, &mut dx_p, &mut dx_t, &mut grads, &mut grads_t,
            );
        }
        if cache.plain.values.iter().any(|v| !v.is_finite()) {
            return Err(IcnnError::NonFinite);
        }
        Ok(DualBackwardOut {
            values: cache.plain.values,
            dx: dx_p,
            grads,
            dx_tangent: dx_t,
            grads_tangent: grads_t,
        })
    }

    /// Clips every linear-layer weight to `[0, +inf)`, leaving quadratic
    /// layers and all biases untouched. Returns the number of clipped entries.
    pub fn project_nonneg(&mut self) -> usize {
        let mut clipped = 0;
        for pl in &self.layout.pl {
            for p in &mut self.params[pl.w.clone()] {
                if *p < 0.0 {
                    *p = 0.0;
                    clipped += 1;
                }
            }
        }
        clipped
    }

    /// L1 subgradient on all weights except biases, added into `grads`.
    pub fn add_l1_subgradient(&self, grads: &mut [f64], weight: f64) {
        if weight == 0.0 {
            return;
        }
        let mut apply = |range: Range<usize>| {
            for (g, p) in grads[range.clone()].iter_mut().zip(&self.params[range]) {
                *g += weight * p.signum() * if *p == 0.0 { 0.0 } else { 1.0 };
            }
        };
        for cq in &self.layout.cq {
            apply(cq.f.clone());
            apply(cq.b.clone());
        }
        for pl in &self.layout.pl {
            apply(pl.w.clone());
        }
    }

    /// Sum of |w| over the same weight set the L1 penalty covers.
    pub fn l1_norm(&self) -> f64 {
        let mut acc = 0.0;
        for cq in &self.layout.cq {
            acc += self.params[cq.f.clone()].iter().map(|v| v.abs()).sum::<f64>();
            acc += self.params[cq.b.clone()].iter().map(|v| v.abs()).sum::<f64>();
        }
        for pl in &self.layout.pl {
            acc += self.params[pl.w.clone()].iter().map(|v| v.abs()).sum::<f64>();
        }
        acc
    }

    /// Max midpoint-convexity violation of `psi(t x + (1-t) x') - t psi(x)
    /// - (1-t) psi(x')` over random triples. Nonpositive up to rounding
    /// certifies convexity empirically.
    pub fn convexity_check(&self, trials: usize, rng: &mut ChaCha8Rng) -> f64 {
        assert!(trials >= 1);
        let d = self.spec.input_dim;
        let mut xa = Array2::zeros((trials, d));
        let mut xb = Array2::zeros((trials, d));
        let mut ts = Vec::with_capacity(trials);
        for i in 0..trials {
            for j in 0..d {
                xa[[i, j]] = rng.gen_range(-3.0..3.0);
                xb[[i, j]] = rng.gen_range(-3.0..3.0);
            }
            ts.push(rng.gen_range(0.0..1.0));
        }
        let mut xm = Array2::zeros((trials, d));
        for i in 0..trials {
            for j in 0..d {
                xm[[i, j]] = ts[i] * xa[[i, j]] + (1.0 - ts[i]) * xb[[i, j]];
            }
        }
        let va = self.forward_cached(&xa.view()).values;
        let vb = self.forward_cached(&xb.view()).values;
        let vm = self.forward_cached(&xm.view()).values;
        let mut worst = f64::NEG_INFINITY;
        for i in 0..trials {
            let gap = vm[i] - ts[i] * va[i] - (1.0 - ts[i]) * vb[i];
            if gap > worst {
                worst = gap;
            }
        }
        worst
    }
}

/// Matmul results are not always standard-layout (e.g. with 1-column
/// operands); the slice-based kernels below need C order.
fn c_order(a: Array2<f64>) -> Array2<f64> {
    if a.is_standard_layout() {
        a
    } else {
        let dim = a.raw_dim();
        Array2::from_shape_vec(dim, a.iter().copied().collect()).unwrap()
    }
}

/// dG[i, n*r + j] = 2 * d[i, n] * g[i, n*r + j]
fn expand_scale(d: &Array2<f64>, g: &Array2<f64>, r: usize) -> Array2<f64> {
    let (n, h) = d.dim();
    let mut out = Array2::zeros((n, h * r));
    let ds = d.as_slice().unwrap();
    let gs = g.as_slice().unwrap();
    let os = out.as_slice_mut().unwrap();
    for i in 0..n {
        for nn in 0..h {
            let dv = 2.0 * ds[i * h + nn];
            let base = i * h * r + nn * r;
            for j in 0..r {
                os[base + j] = dv * gs[base + j];
            }
        }
    }
    out
}

/// out[i, n] = sum_j 2 * a[i, n*r + j] * b[i, n*r + j]
fn pairwise_dot_sum(a: &Array2<f64>, b: &Array2<f64>, r: usize) -> Array2<f64> {
    let (n, hr) = a.dim();
    let h = hr / r;
    let mut out = Array2::zeros((n, h));
    let as_ = a.as_slice().unwrap();
    let bs = b.as_slice().unwrap();
    let os = out.as_slice_mut().unwrap();
    for i in 0..n {
        for nn in 0..h {
            let base = i * hr + nn * r;
            let mut acc = 0.0;
            for j in 0..r {
                acc += as_[base + j] * bs[base + j];
            }
            os[i * h + nn] = 2.0 * acc;
        }
    }
    out
}

fn apply_celu_deriv(target: &mut Array2<f64>, s: &Array2<f64>, alpha: f64) {
    let ts = target.as_slice_mut().unwrap();
    let ss = s.as_slice().unwrap();
    for i in 0..ts.len() {
        ts[i] *= celu_d(ss[i], alpha);
    }
}

/// grads (flattened out x in) += a^T . b  where a is (n, out), b is (n, in).
fn add_matmul_t(a: &Array2<f64>, b: &ArrayView2<f64>, grads: &mut [f64]) {
    let (out, input) = (a.ncols(), b.ncols());
    let mut view = ArrayViewMut2::from_shape((out, input), grads).unwrap();
    let prod = a.t().dot(b);
    view += &prod;
}

fn add_colsum(a: &Array2<f64>, grads: &mut [f64]) {
    for row in a.rows() {
        for (g, &v) in grads.iter_mut().zip(row.iter()) {
            *g += v;
        }
    }
}
