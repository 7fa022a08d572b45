//! Wavelet neural operator: pointwise lifting P, `blocks` wavelet
//! kernel-integration blocks and a pointwise projection Q, with a
//! hand-written reverse pass.
//!
//! A block maps v ↦ φ(W⁻¹(R · W v) + W_j v + b_j). The kernel R mixes
//! channels independently at every location of the bands kept at the
//! coarsest level (the lowpass band for the DWT; the four tree lowpass
//! bands plus the twelve oriented detail sets for the dual-tree
//! transform). Finer detail bands pass through unchanged.
//!
//! Tensors are channel-major: `values[c * n_nodes + node]`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape, Error, Result};
use crate::grid::Grid;
use crate::random_fields::rng_from_seed;
use crate::wavelet::{self, WaveletCoeffs, WaveletFamily};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    /// tanh approximation of GELU
    #[default]
    Gelu,
    Tanh,
    Silu,
    Identity,
}

impl Activation {
    #[inline]
    pub fn eval(self, x: f64) -> f64 {
        match self {
            Activation::Gelu => {
                let k = (2.0 / std::f64::consts::PI).sqrt();
                0.5 * x * (1.0 + (k * (x + 0.044715 * x * x * x)).tanh())
            }
            Activation::Tanh => x.tanh(),
            Activation::Silu => x / (1.0 + (-x).exp()),
            Activation::Identity => x,
        }
    }

    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Gelu => {
                let k = (2.0 / std::f64::consts::PI).sqrt();
                let t = (k * (x + 0.044715 * x * x * x)).tanh();
                0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * k * (1.0 + 3.0 * 0.044715 * x * x)
            }
            Activation::Tanh => 1.0 - x.tanh().powi(2),
            Activation::Silu => {
                let s = 1.0 / (1.0 + (-x).exp());
                s * (1.0 + x * (1.0 - s))
            }
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WnoConfig {
    /// input channels, not counting appended coordinates
    pub in_channels: usize,
    pub out_channels: usize,
    /// uplift dimension d_v
    pub width: usize,
    pub levels: usize,
    pub blocks: usize,
    pub wavelet: WaveletFamily,
    pub activation: Activation,
    pub include_coordinates: bool,
    /// hidden width of the projection Q
    pub projection_width: usize,
}

impl Default for WnoConfig {
    fn default() -> Self {
        WnoConfig {
            in_channels: 1,
            out_channels: 1,
            width: 64,
            levels: 4,
            blocks: 4,
            wavelet: WaveletFamily::Dtcwt,
            activation: Activation::Gelu,
            include_coordinates: true,
            projection_width: 128,
        }
    }
}

impl WnoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(invalid("channel counts must be positive"));
        }
        if self.width == 0 || self.projection_width == 0 {
            return Err(invalid("widths must be positive"));
        }
        if !(1..=8).contains(&self.blocks) {
            return Err(invalid(format!("blocks must be in [1, 8], got {}", self.blocks)));
        }
        if self.levels == 0 || self.levels > 10 {
            return Err(invalid(format!("levels must be in [1, 10], got {}", self.levels)));
        }
        Ok(())
    }

    /// Channels seen by the lifting layer.
    pub fn lifted_inputs(&self, ndim: usize) -> usize {
        self.in_channels + if self.include_coordinates { ndim } else { 0 }
    }
}

/// Name, shape and offset of each parameter tensor in the flat vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl ParamEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Pre-activations and inputs kept by the forward pass for the reverse pass.
pub struct ForwardCache {
    input: Vec<f64>,
    lift_pre: Vec<f64>,
    lift_act: Vec<f64>,
    /// per block: input, pre-activation, kept band inputs [band][loc * d_v + c]
    blocks: Vec<(Vec<f64>, Vec<f64>, Vec<Vec<f64>>)>,
    cropped: Vec<f64>,
    proj_pre: Vec<f64>,
    proj_act: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct Wno {
    config: WnoConfig,
    grid: Grid,
    padded: Vec<usize>,
    /// kept-band locations d_l
    band_len: usize,
    n_bands: usize,
    layout: Vec<ParamEntry>,
    n_params: usize,
    /// node-major coordinates, `ndim` per node
    coords: Vec<f64>,
}

fn round_up(n: usize, m: usize) -> usize {
    n.div_ceil(m) * m
}

fn transpose(w: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut t = vec![0.0; w.len()];
    for r in 0..rows {
        for c in 0..cols {
            t[c * rows + r] = w[r * cols + c];
        }
    }
    t
}

/// Node-major pointwise affine map: y[node, o] = b[o] + Σ_i w[o, i] x[node, i].
fn dense(w: &[f64], b: &[f64], x: &[f64], n_in: usize, n_out: usize) -> Vec<f64> {
    let wt = transpose(w, n_out, n_in);
    let n = x.len() / n_in;
    let mut y = vec![0.0; n * n_out];
    for (xr, yr) in x.chunks_exact(n_in).zip(y.chunks_exact_mut(n_out)) {
        yr.copy_from_slice(b);
        for (i, &xi) in xr.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            for (yo, &wv) in yr.iter_mut().zip(&wt[i * n_out..(i + 1) * n_out]) {
                *yo += wv * xi;
            }
        }
    }
    y
}

/// Accumulates dW, db and returns dx for `dense`.
fn dense_backward(w: &[f64], x: &[f64], g: &[f64], n_in: usize, n_out: usize, dw: &mut [f64], db: &mut [f64]) -> Vec<f64> {
    let n = x.len() / n_in;
    let mut dwt = vec![0.0; n_in * n_out];
    let mut dx = vec![0.0; n * n_in];
    for ((xr, gr), dxr) in x.chunks_exact(n_in).zip(g.chunks_exact(n_out)).zip(dx.chunks_exact_mut(n_in)) {
        for (d, &gv) in db.iter_mut().zip(gr) {
            *d += gv;
        }
        for (i, &xi) in xr.iter().enumerate() {
            let row = &mut dwt[i * n_out..(i + 1) * n_out];
            for (d, &gv) in row.iter_mut().zip(gr) {
                *d += xi * gv;
            }
        }
        for (o, &gv) in gr.iter().enumerate() {
            if gv == 0.0 {
                continue;
            }
            let wr = &w[o * n_in..(o + 1) * n_in];
            for (d, &wv) in dxr.iter_mut().zip(wr) {
                *d += wv * gv;
            }
        }
    }
    add(dw, &transpose(&dwt, n_in, n_out));
    dx
}

fn retained(c: &WaveletCoeffs) -> Vec<&Vec<f64>> {
    match c.family {
        WaveletFamily::Db6 => vec![&c.coarse[0]],
        WaveletFamily::Dtcwt => c.coarse.iter().chain(c.details[c.levels - 1].iter()).collect(),
    }
}

fn retained_mut(c: &mut WaveletCoeffs) -> Vec<&mut Vec<f64>> {
    match c.family {
        WaveletFamily::Db6 => vec![&mut c.coarse[0]],
        WaveletFamily::Dtcwt => {
            let lev = c.levels - 1;
            c.coarse.iter_mut().chain(c.details[lev].iter_mut()).collect()
        }
    }
}

/// Channel-major [c][node] to node-major [node][c].
fn to_node_major(x: &[f64], channels: usize) -> Vec<f64> {
    transpose(x, channels, x.len() / channels)
}

fn to_channel_major(x: &[f64], channels: usize) -> Vec<f64> {
    transpose(x, x.len() / channels, channels)
}

impl Wno {
    pub fn new(config: &WnoConfig, grid: &Grid) -> Result<Self> {
        config.validate()?;
        let ndim = grid.ndim();
        if config.wavelet == WaveletFamily::Dtcwt && ndim != 2 {
            return Err(invalid("the dual-tree operator needs a 2-D grid"));
        }
        if ndim > 2 {
            return Err(invalid("operators are 1-D or 2-D"));
        }
        let block = 1usize << config.levels;
        let padded: Vec<usize> = grid.dims().iter().map(|&n| round_up(n, block)).collect();
        let band_len: usize = padded.iter().map(|&n| n >> config.levels).product();
        let n_bands = match config.wavelet {
            WaveletFamily::Db6 => 1,
            WaveletFamily::Dtcwt => 16,
        };
        let dv = config.width;
        let c_in = config.lifted_inputs(ndim);
        let p = config.projection_width;
        let mut layout = Vec::new();
        let mut offset = 0;
        let mut push = |name: String, shape: Vec<usize>| {
            let e = ParamEntry { name, shape, offset };
            offset += e.len();
            layout.push(e);
        };
        push("lift.w1".into(), vec![dv, c_in]);
        push("lift.b1".into(), vec![dv]);
        push("lift.w2".into(), vec![dv, dv]);
        push("lift.b2".into(), vec![dv]);
        for j in 0..config.blocks {
            for k in 0..n_bands {
                push(format!("block{j}.r{k}"), vec![band_len, dv, dv]);
            }
            push(format!("block{j}.w"), vec![dv, dv]);
            push(format!("block{j}.b"), vec![dv]);
        }
        push("proj.w1".into(), vec![p, dv]);
        push("proj.b1".into(), vec![p]);
        push("proj.w2".into(), vec![config.out_channels, p]);
        push("proj.b2".into(), vec![config.out_channels]);
        let n_params = offset;

        let coords: Vec<f64> = grid.node_coords().into_iter().flatten().collect();
        let wno = Wno {
            config: config.clone(),
            grid: grid.clone(),
            padded,
            band_len,
            n_bands,
            layout,
            n_params,
            coords,
        };
        let expected = wno.closed_form_param_count();
        if expected != n_params {
            return Err(Error::Internal(format!("parameter layout {n_params} != closed form {expected}")));
        }
        Ok(wno)
    }

    pub fn config(&self) -> &WnoConfig {
        &self.config
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn padded_shape(&self) -> &[usize] {
        &self.padded
    }

    pub fn layout(&self) -> &[ParamEntry] {
        &self.layout
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    pub fn entry(&self, name: &str) -> Option<&ParamEntry> {
        self.layout.iter().find(|e| e.name == name)
    }

    /// Number of kept bands per block (1 for the DWT, 16 for the dual tree).
    pub fn n_bands(&self) -> usize {
        self.n_bands
    }

    /// dv·c + dv + dv² + dv + l·(bands·d_l·dv² + dv² + dv) + p·dv + p + c_out·p + c_out
    pub fn closed_form_param_count(&self) -> usize {
        let c = &self.config;
        let dv = c.width;
        let p = c.projection_width;
        let c_in = c.lifted_inputs(self.grid.ndim());
        dv * c_in + dv + dv * dv + dv
            + c.blocks * (self.n_bands * self.band_len * dv * dv + dv * dv + dv)
            + p * dv + p + c.out_channels * p + c.out_channels
    }

    /// Random initial parameters: kernels U(0, 1)/(d_v·d_l), everything
    /// else U(−1/√fan_in, 1/√fan_in).
    pub fn init_params(&self, seed: u64) -> Vec<f64> {
        let mut rng = rng_from_seed(seed);
        let mut out = vec![0.0; self.n_params];
        let dv = self.config.width as f64;
        for e in &self.layout {
            let slice = &mut out[e.range()];
            if e.name.contains(".r") {
                let s = 1.0 / (dv * self.band_len as f64);
                slice.iter_mut().for_each(|v| *v = s * rng.gen::<f64>());
            } else {
                let fan_in = if e.shape.len() == 2 {
                    e.shape[1]
                } else {
                    // bias: fan-in of the matching weight
                    let w = e.name.replace(".b", ".w");
                    self.entry(&w).map_or(1, |we| we.shape[1])
                };
                let bound = 1.0 / (fan_in as f64).sqrt();
                slice.iter_mut().for_each(|v| *v = rng.gen_range(-bound..bound));
            }
        }
        out
    }

    fn p<'a>(&self, params: &'a [f64], name: &str) -> &'a [f64] {
        &params[self.entry(name).expect("known parameter").range()]
    }

    fn n_nodes(&self) -> usize {
        self.grid.len()
    }

    fn n_padded(&self) -> usize {
        self.padded.iter().product()
    }

    /// Node-major zero padding at the high end of every axis.
    fn pad(&self, v: &[f64], channels: usize) -> Vec<f64> {
        let dims = self.grid.dims();
        let mut out = vec![0.0; channels * self.n_padded()];
        match dims.len() {
            1 => out[..v.len()].copy_from_slice(v),
            _ => {
                let (n1, p1) = (dims[1] * channels, self.padded[1] * channels);
                for (i, row) in v.chunks_exact(n1).enumerate() {
                    out[i * p1..i * p1 + n1].copy_from_slice(row);
                }
            }
        }
        out
    }

    fn crop(&self, v: &[f64], channels: usize) -> Vec<f64> {
        let dims = self.grid.dims();
        let n = self.n_nodes() * channels;
        match dims.len() {
            1 => v[..n].to_vec(),
            _ => {
                let (n0, n1, p1) = (dims[0], dims[1] * channels, self.padded[1] * channels);
                let mut out = Vec::with_capacity(n);
                for i in 0..n0 {
                    out.extend_from_slice(&v[i * p1..i * p1 + n1]);
                }
                out
            }
        }
    }

    fn check_params(&self, params: &[f64]) -> Result<()> {
        if params.len() != self.n_params {
            return Err(shape(self.n_params, params.len()));
        }
        Ok(())
    }

    /// Channel-major input to node-major lifted input (coordinates appended).
    fn lifted_input(&self, input: &[f64]) -> Result<Vec<f64>> {
        let c = self.config.in_channels;
        let n = self.n_nodes();
        if input.len() != c * n {
            return Err(invalid(format!(
                "input has {} values, expected {c} channels × {n} nodes",
                input.len()
            )));
        }
        let x = to_node_major(input, c);
        if !self.config.include_coordinates {
            return Ok(x);
        }
        let nd = self.grid.ndim();
        let mut out = Vec::with_capacity(n * (c + nd));
        for (xr, cr) in x.chunks_exact(c).zip(self.coords.chunks_exact(nd)) {
            out.extend_from_slice(xr);
            out.extend_from_slice(cr);
        }
        Ok(out)
    }

    /// P: pointwise two-layer map to d_v channels. The input is channel-major;
    /// the latent is node-major (`v[node * d_v + c]`) on the unpadded grid.
    pub fn lift(&self, params: &[f64], input: &[f64]) -> Result<Vec<f64>> {
        self.check_params(params)?;
        let x = self.lifted_input(input)?;
        Ok(self.lift_inner(params, &x).2)
    }

    fn lift_inner(&self, params: &[f64], x: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let dv = self.config.width;
        let c_in = self.config.lifted_inputs(self.grid.ndim());
        let act = self.config.activation;
        let z1 = dense(self.p(params, "lift.w1"), self.p(params, "lift.b1"), x, c_in, dv);
        let a1: Vec<f64> = z1.iter().map(|&v| act.eval(v)).collect();
        let v0 = dense(self.p(params, "lift.w2"), self.p(params, "lift.b2"), &a1, dv, dv);
        (z1, a1, v0)
    }

    /// Per-location channel mixing of the kept bands of a d_v-batched
    /// coefficient set; `kernels[k]` has shape [d_l, d_v(out), d_v(in)].
    pub fn spectral_conv(&self, coeffs: &WaveletCoeffs, kernels: &[&[f64]]) -> Result<WaveletCoeffs> {
        let dv = self.config.width;
        if coeffs.batch != dv || kernels.len() != self.n_bands {
            return Err(shape((dv, self.n_bands), (coeffs.batch, kernels.len())));
        }
        let mut out = coeffs.clone();
        for (k, (r, band)) in kernels.iter().zip(retained_mut(&mut out)).enumerate() {
            if r.len() != self.band_len * dv * dv || band.len() != self.band_len * dv {
                return Err(invalid(format!("kept band {k} or its kernel has the wrong extent")));
            }
            *band = self.mix_band(r, band);
        }
        Ok(out)
    }

    /// out[loc, o] = Σ_i r[loc, o, i] · x[loc, i]
    fn mix_band(&self, r: &[f64], x: &[f64]) -> Vec<f64> {
        let dv = self.config.width;
        let mut out = vec![0.0; x.len()];
        for ((rl, xl), ol) in r.chunks_exact(dv * dv).zip(x.chunks_exact(dv)).zip(out.chunks_exact_mut(dv)) {
            for (o, row) in ol.iter_mut().zip(rl.chunks_exact(dv)) {
                *o = row.iter().zip(xl).map(|(w, xi)| w * xi).sum();
            }
        }
        out
    }

    fn block_forward(&self, params: &[f64], j: usize, v: &[f64]) -> Result<(Vec<f64>, Vec<f64>, Vec<Vec<f64>>)> {
        let dv = self.config.width;
        let coeffs = wavelet::forward_batch(self.config.wavelet, v, &self.padded, self.config.levels, dv)?;
        let kept: Vec<Vec<f64>> = retained(&coeffs).into_iter().cloned().collect();
        let kernels: Vec<&[f64]> = (0..self.n_bands).map(|k| self.p(params, &format!("block{j}.r{k}"))).collect();
        let mixed = self.spectral_conv(&coeffs, &kernels)?;
        let mut s = dense(self.p(params, &format!("block{j}.w")), self.p(params, &format!("block{j}.b")), v, dv, dv);
        add(&mut s, &wavelet::inverse(&mixed)?);
        let act = self.config.activation;
        let out = s.iter().map(|&x| act.eval(x)).collect();
        Ok((out, s, kept))
    }

    /// One kernel-integration block on a node-major padded latent.
    pub fn wavelet_block(&self, params: &[f64], j: usize, v: &[f64]) -> Result<Vec<f64>> {
        self.check_params(params)?;
        if j >= self.config.blocks || v.len() != self.config.width * self.n_padded() {
            return Err(invalid("block index or latent shape out of range"));
        }
        Ok(self.block_forward(params, j, v)?.0)
    }

    /// Q: pointwise two-layer map from a node-major latent to channel-major outputs.
    pub fn project(&self, params: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        self.check_params(params)?;
        if v.len() != self.config.width * self.n_nodes() {
            return Err(shape(self.config.width * self.n_nodes(), v.len()));
        }
        Ok(to_channel_major(&self.project_inner(params, v).2, self.config.out_channels))
    }

    fn project_inner(&self, params: &[f64], v: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let (dv, p) = (self.config.width, self.config.projection_width);
        let act = self.config.activation;
        let q1 = dense(self.p(params, "proj.w1"), self.p(params, "proj.b1"), v, dv, p);
        let a: Vec<f64> = q1.iter().map(|&x| act.eval(x)).collect();
        let out = dense(self.p(params, "proj.w2"), self.p(params, "proj.b2"), &a, p, self.config.out_channels);
        (q1, a, out)
    }

    /// Channel-major input (`in_channels × nodes`) to channel-major output.
    pub fn forward(&self, params: &[f64], input: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_cached(params, input)?.0)
    }

    pub fn forward_cached(&self, params: &[f64], input: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
        self.check_params(params)?;
        let x = self.lifted_input(input)?;
        let (lift_pre, lift_act, v0) = self.lift_inner(params, &x);
        let dv = self.config.width;
        let mut v = self.pad(&v0, dv);
        let mut blocks = Vec::with_capacity(self.config.blocks);
        for j in 0..self.config.blocks {
            let (out, s, kept) = self.block_forward(params, j, &v)?;
            blocks.push((v, s, kept));
            v = out;
        }
        let cropped = self.crop(&v, dv);
        let (proj_pre, proj_act, out) = self.project_inner(params, &cropped);
        Ok((
            to_channel_major(&out, self.config.out_channels),
            ForwardCache {
                input: x,
                lift_pre,
                lift_act,
                blocks,
                cropped,
                proj_pre,
                proj_act,
            },
        ))
    }

    /// Gradient of a scalar loss w.r.t. the parameters, given ∂loss/∂output
    /// (channel-major). Accumulates into `grad` (length `n_params`).
    pub fn backward(&self, params: &[f64], cache: &ForwardCache, grad_out: &[f64], grad: &mut [f64]) -> Result<()> {
        self.check_params(params)?;
        let c = &self.config;
        let (dv, n, p) = (c.width, self.n_nodes(), c.projection_width);
        if grad_out.len() != c.out_channels * n {
            return Err(shape(c.out_channels * n, grad_out.len()));
        }
        if grad.len() != self.n_params {
            return Err(shape(self.n_params, grad.len()));
        }
        let act = c.activation;
        let range = |name: &str| self.entry(name).expect("known parameter").range();
        let g_out = to_node_major(grad_out, c.out_channels);
        let layer = |w: &str, b: &str, x: &[f64], g: &[f64], n_in: usize, n_out: usize, grad: &mut [f64]| {
            let (rw, rb) = (range(w), range(b));
            let mut dw = vec![0.0; rw.len()];
            let mut db = vec![0.0; rb.len()];
            let dx = dense_backward(&params[rw.clone()], x, g, n_in, n_out, &mut dw, &mut db);
            add(&mut grad[rw], &dw);
            add(&mut grad[rb], &db);
            dx
        };
        let through = |g: Vec<f64>, pre: &[f64]| -> Vec<f64> { g.iter().zip(pre).map(|(g, &z)| g * act.derivative(z)).collect() };

        let da = layer("proj.w2", "proj.b2", &cache.proj_act, &g_out, p, c.out_channels, grad);
        let dq1 = through(da, &cache.proj_pre);
        let dvl = layer("proj.w1", "proj.b1", &cache.cropped, &dq1, dv, p, grad);

        let mut dv_cur = self.pad(&dvl, dv);
        for j in (0..c.blocks).rev() {
            let (v_in, s, kept) = &cache.blocks[j];
            let ds = through(dv_cur, s);
            let mut dv_next = layer(&format!("block{j}.w"), &format!("block{j}.b"), v_in, &ds, dv, dv, grad);

            // kernel path y = W⁻¹ M W v: reverse through W⁻¹, M, then W
            let mut dc = wavelet::inverse_adjoint_batch(c.wavelet, &ds, &self.padded, c.levels, dv)?;
            for (k, band) in retained_mut(&mut dc).into_iter().enumerate() {
                let rr = range(&format!("block{j}.r{k}"));
                let r = &params[rr.clone()];
                let gr = &mut grad[rr];
                let mut din = vec![0.0; band.len()];
                for (loc, (gl, xl)) in band.chunks_exact(dv).zip(kept[k].chunks_exact(dv)).enumerate() {
                    let base = loc * dv * dv;
                    let dl = &mut din[loc * dv..(loc + 1) * dv];
                    for (o, &g) in gl.iter().enumerate() {
                        if g == 0.0 {
                            continue;
                        }
                        let row = base + o * dv..base + (o + 1) * dv;
                        for (d, &xi) in gr[row.clone()].iter_mut().zip(xl) {
                            *d += g * xi;
                        }
                        for (d, &w) in dl.iter_mut().zip(&r[row]) {
                            *d += w * g;
                        }
                    }
                }
                *band = din;
            }
            add(&mut dv_next, &wavelet::forward_adjoint(&dc)?);
            dv_cur = dv_next;
        }

        let dv0 = self.crop(&dv_cur, dv);
        let c_in = c.lifted_inputs(self.grid.ndim());
        let da1 = layer("lift.w2", "lift.b2", &cache.lift_act, &dv0, dv, dv, grad);
        let dz1 = through(da1, &cache.lift_pre);
        layer("lift.w1", "lift.b1", &cache.input, &dz1, c_in, dv, grad);
        Ok(())
    }
}

fn add(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(family: WaveletFamily) -> (Wno, Vec<f64>) {
        let cfg = WnoConfig {
            in_channels: 2,
            out_channels: 2,
            width: 3,
            levels: 2,
            blocks: 2,
            wavelet: family,
            activation: Activation::Gelu,
            include_coordinates: true,
            projection_width: 4,
        };
        let grid = Grid::space_time(9, 10).unwrap();
        let w = Wno::new(&cfg, &grid).unwrap();
        let p = w.init_params(1);
        (w, p)
    }

    fn input(w: &Wno) -> Vec<f64> {
        (0..w.config().in_channels * w.grid().len()).map(|i| (0.13 * i as f64).sin()).collect()
    }

    #[test]
    fn padding_and_count() {
        let (w, _) = tiny(WaveletFamily::Db6);
        assert_eq!(w.padded_shape(), &[12, 12]);
        assert_eq!(w.n_params(), w.closed_form_param_count());
    }

    #[test]
    fn activation_derivatives() {
        for a in [Activation::Gelu, Activation::Tanh, Activation::Silu, Activation::Identity] {
            assert_eq!(a.eval(0.0), 0.0);
            for x in [-2.0, -0.3, 0.0, 0.7, 3.0] {
                let h = 1e-6;
                let fd = (a.eval(x + h) - a.eval(x - h)) / (2.0 * h);
                assert!((fd - a.derivative(x)).abs() < 1e-8, "{a:?} at {x}");
            }
        }
    }

    #[test]
    fn zero_projection_gives_bias() {
        let (w, mut p) = tiny(WaveletFamily::Db6);
        let e = w.entry("proj.w2").unwrap().range();
        p[e].iter_mut().for_each(|v| *v = 0.0);
        let b = w.entry("proj.b2").unwrap().range();
        p[b.clone()].copy_from_slice(&[0.25, -1.5]);
        let out = w.forward(&p, &input(&w)).unwrap();
        let n = w.grid().len();
        assert!(out[..n].iter().all(|&v| v == 0.25));
        assert!(out[n..].iter().all(|&v| v == -1.5));
    }

    #[test]
    fn parameter_gradient_matches_finite_differences() {
        for fam in [WaveletFamily::Db6, WaveletFamily::Dtcwt] {
            let (w, p) = tiny(fam);
            let x = input(&w);
            let target: Vec<f64> = (0..2 * w.grid().len()).map(|i| (0.07 * i as f64).cos()).collect();
            let loss = |p: &[f64]| -> f64 {
                let y = w.forward(p, &x).unwrap();
                y.iter().zip(&target).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
            };
            let (y, cache) = w.forward_cached(&p, &x).unwrap();
            let g_out: Vec<f64> = y.iter().zip(&target).map(|(a, b)| 2.0 * (a - b)).collect();
            let mut grad = vec![0.0; w.n_params()];
            w.backward(&p, &cache, &g_out, &mut grad).unwrap();
            for e in w.layout() {
                // largest entry of each tensor, away from the FD noise floor
                let i = e.range().max_by(|&a, &b| grad[a].abs().total_cmp(&grad[b].abs())).unwrap();
                let h = 1e-6;
                let mut pp = p.clone();
                pp[i] += h;
                let mut pm = p.clone();
                pm[i] -= h;
                let fd = (loss(&pp) - loss(&pm)) / (2.0 * h);
                let err = (fd - grad[i]).abs() / fd.abs().max(1e-6);
                assert!(err < 1e-4, "{fam:?} {}: fd {fd} vs {}", e.name, grad[i]);
            }
        }
    }
}
