//! Deterministic forward kernels shared by the generator and discriminator.
//!
//! Activations are [`Tensor3`] values laid out `(group, channel, time)`. For
//! the generator a group is a frequency band. Every kernel except attention
//! acts on the channel axis independently per group and time step; attention
//! treats the group axis as the sequence.

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Stabilizer inside [`rmsnorm`].
pub const RMS_DELTA: f64 = 1e-6;
/// Default rotary base.
pub const ROPE_BASE: f64 = 10000.0;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} values do not fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.set(c, r, self.get(r, c));
            }
        }
        t
    }

    pub fn scale(&self, s: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    /// `self * rhs`.
    pub fn matmul(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.cols != rhs.rows {
            return Err(Error::Shape(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        gemm(self, &rhs.data, rhs.cols, &mut out.data);
        Ok(out)
    }

    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        (0..self.rows)
            .map(|r| self.row(r).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }
}

/// `out (w.rows x n) = w (w.rows x w.cols) * x (w.cols x n)`, all row-major.
fn gemm(w: &Matrix, x: &[f64], n: usize, out: &mut [f64]) {
    let (m, k) = (w.rows, w.cols);
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: the slices hold m*k, k*n and m*n elements with the row-major
    // strides given; `out` is not aliased by the inputs.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            w.data.as_ptr(),
            k as isize,
            1,
            x.as_ptr(),
            n as isize,
            1,
            0.0,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Activations laid out `(group, channel, time)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    pub groups: usize,
    pub channels: usize,
    pub time: usize,
    pub data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(groups: usize, channels: usize, time: usize) -> Self {
        Self {
            groups,
            channels,
            time,
            data: vec![0.0; groups * channels * time],
        }
    }

    pub fn from_vec(groups: usize, channels: usize, time: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != groups * channels * time {
            return Err(Error::Shape(format!(
                "{} values do not fill a {groups}x{channels}x{time} tensor",
                data.len()
            )));
        }
        Ok(Self {
            groups,
            channels,
            time,
            data,
        })
    }

    /// Stack equally shaped `channels x time` matrices as groups.
    pub fn from_groups(groups: &[Matrix]) -> Result<Self> {
        let (c, t) = groups.first().map(|m| (m.rows, m.cols)).unwrap_or((0, 0));
        let mut data = Vec::with_capacity(groups.len() * c * t);
        for (i, m) in groups.iter().enumerate() {
            if (m.rows, m.cols) != (c, t) {
                return Err(Error::Shape(format!(
                    "group {i} is {}x{}, expected {c}x{t}",
                    m.rows, m.cols
                )));
            }
            data.extend_from_slice(&m.data);
        }
        Ok(Self {
            groups: groups.len(),
            channels: c,
            time: t,
            data,
        })
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.groups, self.channels, self.time)
    }

    #[inline]
    pub fn idx(&self, g: usize, c: usize, t: usize) -> usize {
        (g * self.channels + c) * self.time + t
    }

    #[inline]
    pub fn get(&self, g: usize, c: usize, t: usize) -> f64 {
        self.data[self.idx(g, c, t)]
    }

    #[inline]
    pub fn set(&mut self, g: usize, c: usize, t: usize, v: f64) {
        let i = self.idx(g, c, t);
        self.data[i] = v;
    }

    pub fn group(&self, g: usize) -> &[f64] {
        let n = self.channels * self.time;
        &self.data[g * n..(g + 1) * n]
    }

    pub fn group_mut(&mut self, g: usize) -> &mut [f64] {
        let n = self.channels * self.time;
        &mut self.data[g * n..(g + 1) * n]
    }

    pub fn group_matrix(&self, g: usize) -> Matrix {
        Matrix {
            rows: self.channels,
            cols: self.time,
            data: self.group(g).to_vec(),
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64 + Sync) -> Tensor3 {
        Tensor3 {
            data: self.data.iter().map(|&v| f(v)).collect(),
            ..*self
        }
    }

    pub fn add(&self, other: &Tensor3) -> Result<Tensor3> {
        self.zip(other, |a, b| a + b)
    }

    pub fn add_assign(&mut self, other: &Tensor3) -> Result<()> {
        self.check_same(other)?;
        self.data.iter_mut().zip(&other.data).for_each(|(a, b)| *a += b);
        Ok(())
    }

    pub fn zip(&self, other: &Tensor3, f: impl Fn(f64, f64) -> f64) -> Result<Tensor3> {
        self.check_same(other)?;
        Ok(Tensor3 {
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
            ..*self
        })
    }

    fn check_same(&self, other: &Tensor3) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::Shape(format!(
                "{:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl Tensor3 {
    fn with_data(&self, channels: usize, data: Vec<f64>) -> Tensor3 {
        Tensor3 {
            groups: self.groups,
            channels,
            time: self.time,
            data,
        }
    }
}

/// A 1x1 convolution: weight `out x in` and bias `out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn new(weight: Matrix, bias: Vec<f64>) -> Result<Self> {
        if bias.len() != weight.rows {
            return Err(Error::Shape(format!(
                "bias of {} for a {}-output projection",
                bias.len(),
                weight.rows
            )));
        }
        Ok(Self { weight, bias })
    }

    pub fn without_bias(weight: Matrix) -> Self {
        let bias = vec![0.0; weight.rows];
        Self { weight, bias }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows
    }
}

/// RMS normalization over channels at every `(group, time)` position:
/// `y = x / sqrt(mean(x^2) + RMS_DELTA) * gain`.
pub fn rmsnorm(x: &Tensor3, gain: &[f64]) -> Result<Tensor3> {
    if gain.len() != x.channels {
        return Err(Error::Shape(format!(
            "rmsnorm gain has {} entries for {} channels",
            gain.len(),
            x.channels
        )));
    }
    let (c, t) = (x.channels, x.time);
    let mut out = vec![0.0; x.data.len()];
    out.par_chunks_mut((c * t).max(1))
        .zip(x.data.par_chunks((c * t).max(1)))
        .for_each(|(o, xg)| rmsnorm_group(xg, gain, c, t, o));
    Ok(x.with_data(c, out))
}

/// RMS normalization of one `channels x time` block into `out`.
pub fn rmsnorm_group(x: &[f64], gain: &[f64], channels: usize, time: usize, out: &mut [f64]) {
    let mut inv = vec![0.0; time];
    for row in x.chunks_exact(time) {
        for (acc, v) in inv.iter_mut().zip(row) {
            *acc += v * v;
        }
    }
    let n = channels as f64;
    inv.iter_mut().for_each(|s| *s = 1.0 / (*s / n + RMS_DELTA).sqrt());
    for ((orow, xrow), g) in out.chunks_exact_mut(time).zip(x.chunks_exact(time)).zip(gain) {
        for ((o, v), s) in orow.iter_mut().zip(xrow).zip(&inv) {
            *o = v * s * g;
        }
    }
}

/// Per-position affine map over channels, applied to every group.
pub fn pointwise_conv(x: &Tensor3, layer: &Linear) -> Result<Tensor3> {
    if layer.in_dim() != x.channels {
        return Err(Error::Shape(format!(
            "pointwise conv expects {} input channels, got {}",
            layer.in_dim(),
            x.channels
        )));
    }
    let (out_c, t) = (layer.out_dim(), x.time);
    let mut out = vec![0.0; x.groups * out_c * t];
    if !out.is_empty() {
        out.par_chunks_mut(out_c * t)
            .zip(x.data.par_chunks((x.channels * t).max(1)))
            .for_each(|(o, xg)| pointwise_group(xg, layer, t, o));
    }
    Ok(x.with_data(out_c, out))
}

/// `out = W x + b` for one `in x time` block.
pub fn pointwise_group(x: &[f64], layer: &Linear, time: usize, out: &mut [f64]) {
    gemm(&layer.weight, x, time, out);
    for (row, b) in out.chunks_exact_mut(time.max(1)).zip(&layer.bias) {
        if *b != 0.0 {
            row.iter_mut().for_each(|v| *v += b);
        }
    }
}

/// Per-channel dilated correlation along time with zero padding of
/// `(k - 1) / 2 * dilation` on both sides. `kernels` is `channels x k`.
pub fn depthwise_conv1d(
    x: &Tensor3,
    kernels: &Matrix,
    bias: Option<&[f64]>,
    dilation: usize,
) -> Result<Tensor3> {
    check_depthwise(x.channels, kernels, bias, dilation)?;
    let (c, t) = (x.channels, x.time);
    let mut out = vec![0.0; x.data.len()];
    if !out.is_empty() {
        out.par_chunks_mut(c * t)
            .zip(x.data.par_chunks(c * t))
            .for_each(|(o, xg)| depthwise_group(xg, kernels, bias, dilation, t, o));
    }
    Ok(x.with_data(c, out))
}

pub(crate) fn check_depthwise(
    channels: usize,
    kernels: &Matrix,
    bias: Option<&[f64]>,
    dilation: usize,
) -> Result<()> {
    if kernels.cols % 2 == 0 {
        return Err(Error::Config(format!(
            "depthwise kernel length must be odd, got {}",
            kernels.cols
        )));
    }
    if dilation == 0 {
        return Err(Error::Config("dilation must be positive".into()));
    }
    if kernels.rows != channels || bias.is_some_and(|b| b.len() != channels) {
        return Err(Error::Shape(format!(
            "depthwise kernels are {}x{} for {channels} channels",
            kernels.rows, kernels.cols
        )));
    }
    Ok(())
}

pub fn depthwise_group(
    x: &[f64],
    kernels: &Matrix,
    bias: Option<&[f64]>,
    dilation: usize,
    time: usize,
    out: &mut [f64],
) {
    let k = kernels.cols;
    let half = (k / 2 * dilation) as isize;
    for (ch, (orow, xrow)) in out.chunks_exact_mut(time).zip(x.chunks_exact(time)).enumerate() {
        let taps = kernels.row(ch);
        let b = bias.map_or(0.0, |b| b[ch]);
        orow.iter_mut().for_each(|v| *v = b);
        for (j, &w) in taps.iter().enumerate() {
            let shift = j as isize * dilation as isize - half;
            // out[t] += w * x[t + shift] where 0 <= t + shift < time
            let lo = (-shift).max(0) as usize;
            let hi = (time as isize - shift).clamp(0, time as isize) as usize;
            if lo >= hi {
                continue;
            }
            let src = &xrow[(lo as isize + shift) as usize..(hi as isize + shift) as usize];
            for (o, v) in orow[lo..hi].iter_mut().zip(src) {
                *o += w * v;
            }
        }
    }
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

#[inline]
pub fn silu(z: f64) -> f64 {
    z * sigmoid(z)
}

/// First half of the channels gated by the sigmoid of the second half.
pub fn glu(x: &Tensor3) -> Result<Tensor3> {
    if x.channels % 2 != 0 {
        return Err(Error::Shape(format!(
            "GLU needs an even channel count, got {}",
            x.channels
        )));
    }
    let half = x.channels / 2;
    let mut out = Vec::with_capacity(x.data.len() / 2);
    for g in 0..x.groups {
        let block = x.group(g);
        let (a, b) = block.split_at(half * x.time);
        out.extend(a.iter().zip(b).map(|(&a, &b)| a * sigmoid(b)));
    }
    Ok(x.with_data(half, out))
}

/// `W_out (SiLU(W_gate x) * (W_in x))`, no biases.
pub fn swiglu(x: &Tensor3, w_in: &Matrix, w_gate: &Matrix, w_out: &Matrix) -> Result<Tensor3> {
    if w_in.rows != w_gate.rows || w_in.cols != w_gate.cols || w_out.cols != w_in.rows {
        return Err(Error::Shape(format!(
            "swiglu weights {}x{}, {}x{}, {}x{} are inconsistent",
            w_in.rows, w_in.cols, w_gate.rows, w_gate.cols, w_out.rows, w_out.cols
        )));
    }
    if x.channels != w_in.cols {
        return Err(Error::Shape(format!(
            "swiglu expects {} input channels, got {}",
            w_in.cols, x.channels
        )));
    }
    let up = project(x, w_in);
    let gate = project(x, w_gate);
    let hidden = gate.zip(&up, |g, u| silu(g) * u)?;
    Ok(project(&hidden, w_out))
}

/// Bias-free pointwise projection; caller checks `w.cols == x.channels`.
fn project(x: &Tensor3, w: &Matrix) -> Tensor3 {
    let t = x.time;
    let mut out = vec![0.0; x.groups * w.rows * t];
    if !out.is_empty() {
        out.par_chunks_mut(w.rows * t)
            .zip(x.data.par_chunks((x.channels * t).max(1)))
            .for_each(|(o, xg)| gemm(w, xg, t, o));
    }
    x.with_data(w.rows, out)
}

/// Per-channel multiply by `gamma`.
pub fn layer_scale(x: &Tensor3, gamma: &[f64]) -> Result<Tensor3> {
    if gamma.len() != x.channels {
        return Err(Error::Shape(format!(
            "layer scale has {} entries for {} channels",
            gamma.len(),
            x.channels
        )));
    }
    let mut out = x.clone();
    for g in 0..x.groups {
        for (row, s) in out.group_mut(g).chunks_exact_mut(x.time.max(1)).zip(gamma) {
            row.iter_mut().for_each(|v| *v *= s);
        }
    }
    Ok(out)
}

/// Precomputed rotary angles for positions `0..positions`.
#[derive(Debug, Clone)]
pub struct RopeTable {
    head_dim: usize,
    cos: Vec<f64>,
    sin: Vec<f64>,
}

impl RopeTable {
    pub fn new(positions: usize, head_dim: usize, base: f64) -> Result<Self> {
        if head_dim % 2 != 0 {
            return Err(Error::Config(format!(
                "rotary encoding needs an even head dimension, got {head_dim}"
            )));
        }
        let pairs = head_dim / 2;
        let mut cos = Vec::with_capacity(positions * pairs);
        let mut sin = Vec::with_capacity(positions * pairs);
        for m in 0..positions {
            for j in 0..pairs {
                let theta = base.powf(-2.0 * j as f64 / head_dim as f64);
                let (s, c) = (m as f64 * theta).sin_cos();
                cos.push(c);
                sin.push(s);
            }
        }
        Ok(Self { head_dim, cos, sin })
    }

    /// Rotate pairs `(v[2j], v[2j+1])` of one head vector in place.
    pub fn apply(&self, v: &mut [f64], position: usize) {
        let pairs = self.head_dim / 2;
        let (cos, sin) = (
            &self.cos[position * pairs..(position + 1) * pairs],
            &self.sin[position * pairs..(position + 1) * pairs],
        );
        for j in 0..pairs {
            let (a, b) = (v[2 * j], v[2 * j + 1]);
            v[2 * j] = a * cos[j] - b * sin[j];
            v[2 * j + 1] = a * sin[j] + b * cos[j];
        }
    }
}

/// Rotate one head vector to `position` with the default base.
pub fn rope_rotate(v: &[f64], position: usize) -> Result<Vec<f64>> {
    let table = RopeTable::new(position + 1, v.len(), ROPE_BASE)?;
    let mut out = v.to_vec();
    table.apply(&mut out, position);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub out: Linear,
}

impl AttentionWeights {
    fn check(&self, channels: usize, heads: usize) -> Result<()> {
        let n = channels;
        for (name, l) in [("q", &self.q), ("k", &self.k), ("v", &self.v), ("out", &self.out)] {
            if l.in_dim() != n || l.out_dim() != n {
                return Err(Error::Shape(format!(
                    "attention {name} projection is {}x{}, expected {n}x{n}",
                    l.out_dim(),
                    l.in_dim()
                )));
            }
        }
        if heads == 0 || n % heads != 0 {
            return Err(Error::Shape(format!(
                "{n} channels cannot be split into {heads} heads"
            )));
        }
        Ok(())
    }
}

/// Self-attention along the group axis, independently at every time step.
///
/// `x` is `(sequence, channels, time)`. Queries and keys are rotated by their
/// sequence index when `rope` is given. Heads are concatenated and mixed by
/// the output projection.
pub fn multi_head_attention(
    x: &Tensor3,
    w: &AttentionWeights,
    heads: usize,
    rope: Option<&RopeTable>,
) -> Result<Tensor3> {
    w.check(x.channels, heads)?;
    let q = pointwise_conv(x, &w.q)?;
    let k = pointwise_conv(x, &w.k)?;
    let v = pointwise_conv(x, &w.v)?;
    let (context, _) = attention_core(&q, &k, &v, heads, rope, false)?;
    pointwise_conv(&context, &w.out)
}

/// Attention probabilities, indexed `[time][head]` as row-major
/// `seq x seq` matrices (row = query).
pub fn attention_probabilities(
    x: &Tensor3,
    w: &AttentionWeights,
    heads: usize,
    rope: Option<&RopeTable>,
) -> Result<Vec<Vec<Matrix>>> {
    w.check(x.channels, heads)?;
    let q = pointwise_conv(x, &w.q)?;
    let k = pointwise_conv(x, &w.k)?;
    let v = pointwise_conv(x, &w.v)?;
    Ok(attention_core(&q, &k, &v, heads, rope, true)?.1)
}

/// `softmax(q k^T / sqrt(d)) v` per head over the group axis, for already
/// projected queries, keys and values. This is the part whose cost grows
/// with the square of the sequence length.
pub fn scaled_dot_product_attention(
    q: &Tensor3,
    k: &Tensor3,
    v: &Tensor3,
    heads: usize,
    rope: Option<&RopeTable>,
) -> Result<Tensor3> {
    Ok(attention_core(q, k, v, heads, rope, false)?.0)
}

type AttentionOutput = (Tensor3, Vec<Vec<Matrix>>);

fn attention_core(
    q: &Tensor3,
    k: &Tensor3,
    v: &Tensor3,
    heads: usize,
    rope: Option<&RopeTable>,
    keep_probs: bool,
) -> Result<AttentionOutput> {
    if q.shape() != k.shape() || q.shape() != v.shape() {
        return Err(Error::Shape(format!(
            "q {:?}, k {:?}, v {:?} differ",
            q.shape(),
            k.shape(),
            v.shape()
        )));
    }
    let (seq, n, time) = q.shape();
    if heads == 0 || n % heads != 0 {
        return Err(Error::Shape(format!("{n} channels cannot be split into {heads} heads")));
    }
    let d = n / heads;
    if let Some(r) = rope {
        if r.head_dim != d || r.cos.len() < seq * d / 2 {
            return Err(Error::Shape(format!(
                "rotary table for head dim {} does not cover {seq} positions of dim {d}",
                r.head_dim
            )));
        }
    }
    let scale = 1.0 / (d as f64).sqrt();

    // Sequences are short and time is long, so everything below runs over
    // contiguous time rows of the (g, c, t) layout: no transposes, and every
    // inner loop is an elementwise update of length `time`.
    let rotated;
    let (q, k) = match rope {
        Some(r) => {
            rotated = (rotate_groups(q, r, heads), rotate_groups(k, r, heads));
            (&rotated.0, &rotated.1)
        }
        None => (q, k),
    };
    /// `x[g, c, t0..t0 + len]`
    fn span(x: &Tensor3, g: usize, c: usize, t0: usize, len: usize) -> &[f64] {
        let start = (g * x.channels + c) * x.time + t0;
        &x.data[start..start + len]
    }

    // One work item per (head, time tile). All queries of the item run
    // against the same key/value tile, sized to stay in cache meanwhile;
    // rows are left whole when they fit so reads stream.
    const KV_BYTES: usize = 1 << 20;
    let fit = KV_BYTES / (2 * std::mem::size_of::<f64>() * seq * d);
    let tile = if fit >= time { time } else { (fit / 8 * 8).max(8) };
    let tiles = time.div_ceil(tile);
    let tile_of = |item: usize| {
        let (h, t0) = (item / tiles, item % tiles * tile);
        (h, t0, tile.min(time - t0))
    };
    let items: Vec<(Vec<f64>, Vec<f64>)> = (0..heads * tiles)
        .into_par_iter()
        .map(|item| {
            let (h, t0, tt) = tile_of(item);
            let channels = h * d..(h + 1) * d;
            // ctx[i][c][t] for this head and tile
            let mut ctx = vec![0.0; seq * d * tt];
            let mut kept = Vec::with_capacity(if keep_probs { seq * seq * tt } else { 0 });
            // p[j][t]: raw scores, then probabilities over j
            let mut p = vec![0.0; seq * tt];
            let mut max = vec![0.0; tt];
            let mut total = vec![0.0; tt];
            for (i, ctx_i) in ctx.chunks_exact_mut(d * tt).enumerate() {
                for (j, s) in p.chunks_exact_mut(tt).enumerate() {
                    sum_of_products(s, channels.clone().map(|c| (span(q, i, c, t0, tt), span(k, j, c, t0, tt))));
                }
                max.fill(f64::NEG_INFINITY);
                for s in p.chunks_exact(tt) {
                    max.iter_mut().zip(s).for_each(|(m, &v)| *m = m.max(v));
                }
                total.fill(0.0);
                for s in p.chunks_exact_mut(tt) {
                    for ((v, m), tot) in s.iter_mut().zip(&max).zip(total.iter_mut()) {
                        *v = ((*v - m) * scale).exp();
                        *tot += *v;
                    }
                }
                total.iter_mut().for_each(|t| *t = 1.0 / *t);
                for s in p.chunks_exact_mut(tt) {
                    s.iter_mut().zip(&total).for_each(|(v, inv)| *v *= inv);
                }
                for (out, c) in ctx_i.chunks_exact_mut(tt).zip(channels.clone()) {
                    sum_of_products(out, p.chunks_exact(tt).enumerate().map(|(j, pj)| (pj, span(v, j, c, t0, tt))));
                }
                if keep_probs {
                    kept.extend_from_slice(&p);
                }
            }
            (ctx, kept)
        })
        .collect();

    let mut context = Tensor3::zeros(seq, n, time);
    for (item, (ctx, _)) in items.iter().enumerate() {
        let (h, t0, tt) = tile_of(item);
        for (i, ctx_i) in ctx.chunks_exact(d * tt).enumerate() {
            for (c, src) in ctx_i.chunks_exact(tt).enumerate() {
                let dst = (i * n + h * d + c) * time + t0;
                context.data[dst..dst + tt].copy_from_slice(src);
            }
        }
    }
    let probs = if keep_probs {
        (0..time)
            .map(|t| {
                (0..heads)
                    .map(|h| {
                        let item = h * tiles + t / tile;
                        let (_, t0, tt) = tile_of(item);
                        let kept = &items[item].1;
                        let data = (0..seq * seq).map(|ij| kept[ij * tt + t - t0]).collect();
                        Matrix::from_vec(seq, seq, data).expect("square probabilities")
                    })
                    .collect()
            })
            .collect()
    } else {
        Vec::new()
    };
    Ok((context, probs))
}

/// `out[t] = sum over pairs of a[t] * b[t]`, accumulated in registers over
/// blocks of time.
fn sum_of_products<'a>(out: &mut [f64], pairs: impl Iterator<Item = (&'a [f64], &'a [f64])>) {
    const W: usize = 8;
    let len = out.len();
    let pairs: Vec<_> = pairs.collect();
    assert!(pairs.iter().all(|(a, b)| a.len() == len && b.len() == len));
    let full = len / W * W;
    for (blk, o) in out[..full].chunks_exact_mut(W).enumerate() {
        let at = blk * W;
        let mut acc = [0.0; W];
        for (a, b) in &pairs {
            let a: &[f64; W] = a[at..at + W].try_into().expect("block of W");
            let b: &[f64; W] = b[at..at + W].try_into().expect("block of W");
            for ((s, x), y) in acc.iter_mut().zip(a).zip(b) {
                *s += x * y;
            }
        }
        o.copy_from_slice(&acc);
    }
    for (t, o) in out.iter_mut().enumerate().skip(full) {
        *o = pairs.iter().map(|(a, b)| a[t] * b[t]).sum();
    }
}

/// Copy of `x` with each head vector of group `g` rotated to position `g`.
fn rotate_groups(x: &Tensor3, rope: &RopeTable, heads: usize) -> Tensor3 {
    let (n, time) = (x.channels, x.time);
    let pairs = n / heads / 2;
    let mut out = x.clone();
    out.data.par_chunks_mut(n * time).enumerate().for_each(|(g, block)| {
        let (cos, sin) = (&rope.cos[g * pairs..(g + 1) * pairs], &rope.sin[g * pairs..(g + 1) * pairs]);
        for (idx, pair) in block.chunks_exact_mut(2 * time).enumerate() {
            // pairs repeat per head; the index within the head picks the angle
            let (c, s) = (cos[idx % pairs], sin[idx % pairs]);
            let (a, b) = pair.split_at_mut(time);
            for (x, y) in a.iter_mut().zip(b.iter_mut()) {
                let (u, w) = (*x, *y);
                *x = u * c - w * s;
                *y = u * s + w * c;
            }
        }
    });
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, g: usize, c: usize, t: usize) -> Tensor3 {
        Tensor3::from_vec(g, c, t, (0..g * c * t).map(|_| rng.random_range(-1.0..1.0)).collect())
            .unwrap()
    }

    fn rand_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
        Matrix::from_vec(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn rand_linear(rng: &mut ChaCha8Rng, out: usize, inp: usize) -> Linear {
        let w = rand_matrix(rng, out, inp);
        Linear::new(w, (0..out).map(|_| rng.random_range(-0.5..0.5)).collect()).unwrap()
    }

    fn max_diff(a: &[f64], b: &[f64]) -> f64 {
        assert_eq!(a.len(), b.len());
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn rmsnorm_examples() {
        let x = Tensor3::from_vec(1, 4, 1, vec![3.0; 4]).unwrap();
        let y = rmsnorm(&x, &[1.0; 4]).unwrap();
        assert!(y.data.iter().all(|v| (v - 1.0).abs() < 1e-6));
        let neg = rmsnorm(&x.map(|v| -v), &[1.0; 4]).unwrap();
        assert!(neg.data.iter().all(|v| (v + 1.0).abs() < 1e-6));

        let zero = rmsnorm(&Tensor3::zeros(2, 3, 4), &[1.0; 3]).unwrap();
        assert!(zero.data.iter().all(|&v| v == 0.0));

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = rand_tensor(&mut rng, 3, 16, 5);
        let y = rmsnorm(&x, &[1.0; 16]).unwrap();
        for g in 0..3 {
            for t in 0..5 {
                let ms: f64 = (0..16).map(|c| y.get(g, c, t).powi(2)).sum::<f64>() / 16.0;
                assert!((ms.sqrt() - 1.0).abs() < 1e-4);
            }
        }
        assert!(rmsnorm(&x, &[1.0; 15]).is_err());
    }

    #[test]
    fn pointwise_examples() {
        let x = Tensor3::from_vec(1, 2, 1, vec![1.0, 2.0]).unwrap();
        let l = Linear::without_bias(Matrix::from_vec(2, 2, vec![1.0, 1.0, 1.0, -1.0]).unwrap());
        assert_eq!(pointwise_conv(&x, &l).unwrap().data, vec![3.0, -1.0]);

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = rand_tensor(&mut rng, 2, 4, 7);
        let id = Linear::without_bias(Matrix::identity(4));
        assert_eq!(pointwise_conv(&x, &id).unwrap(), x);
        assert!(matches!(
            pointwise_conv(&x, &Linear::without_bias(Matrix::identity(3))),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn pointwise_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = rand_tensor(&mut rng, 3, 4, 7);
        let l = rand_linear(&mut rng, 5, 4);
        let y = pointwise_conv(&x, &l).unwrap();
        for g in 0..3 {
            for o in 0..5 {
                for t in 0..7 {
                    let mut acc = l.bias[o];
                    for i in 0..4 {
                        acc += l.weight.get(o, i) * x.get(g, i, t);
                    }
                    assert!((y.get(g, o, t) - acc).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn depthwise_examples() {
        let x = Tensor3::from_vec(1, 1, 4, vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let ones = Matrix::from_vec(1, 3, vec![1.0; 3]).unwrap();
        assert_eq!(depthwise_conv1d(&x, &ones, None, 1).unwrap().data, vec![1.0, 1.0, 0.0, 0.0]);

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = rand_tensor(&mut rng, 2, 3, 11);
        let delta = Matrix::from_vec(3, 3, vec![0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0]).unwrap();
        for d in [1, 2, 5, 20] {
            assert_eq!(depthwise_conv1d(&x, &delta, None, d).unwrap(), x);
        }
        let even = Matrix::zeros(3, 2);
        assert!(matches!(depthwise_conv1d(&x, &even, None, 1), Err(Error::Config(_))));
    }

    #[test]
    fn depthwise_matches_nested_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for (k, d) in [(3usize, 1usize), (3, 2), (5, 4), (7, 2)] {
            let x = rand_tensor(&mut rng, 2, 4, 13);
            let kern = rand_matrix(&mut rng, 4, k);
            let bias: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let y = depthwise_conv1d(&x, &kern, Some(&bias), d).unwrap();
            let pad = (k as isize - 1) / 2 * d as isize;
            for g in 0..2 {
                for c in 0..4 {
                    for t in 0..13isize {
                        let mut acc = bias[c];
                        for j in 0..k as isize {
                            let src = t + j * d as isize - pad;
                            if (0..13).contains(&src) {
                                acc += kern.get(c, j as usize) * x.get(g, c, src as usize);
                            }
                        }
                        assert!((y.get(g, c, t as usize) - acc).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn glu_gates_first_half() {
        let x = Tensor3::from_vec(1, 2, 2, vec![2.0, -1.0, 0.0, 100.0]).unwrap();
        let y = glu(&x).unwrap();
        assert_eq!(y.shape(), (1, 1, 2));
        assert_eq!(y.data[0], 1.0);
        assert!((y.data[1] + 1.0).abs() < 1e-12);
        assert!(glu(&Tensor3::zeros(1, 3, 1)).is_err());
    }

    #[test]
    fn swiglu_examples() {
        let one = Matrix::from_vec(1, 1, vec![1.0]).unwrap();
        let x = Tensor3::from_vec(1, 1, 1, vec![1.0]).unwrap();
        let y = swiglu(&x, &one, &one, &one).unwrap();
        assert!((y.data[0] - 1.0 / (1.0 + (-1.0f64).exp())).abs() < 1e-15);
        assert!((y.data[0] - 0.731).abs() < 1e-3);

        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (w_in, w_gate, w_out) = (
            rand_matrix(&mut rng, 8, 4),
            rand_matrix(&mut rng, 8, 4),
            rand_matrix(&mut rng, 4, 8),
        );
        let zero = swiglu(&Tensor3::zeros(2, 4, 3), &w_in, &w_gate, &w_out).unwrap();
        assert!(zero.data.iter().all(|&v| v == 0.0));

        let x = rand_tensor(&mut rng, 2, 4, 3);
        let y = swiglu(&x, &w_in, &w_gate, &w_out).unwrap();
        for g in 0..2 {
            for t in 0..3 {
                let col: Vec<f64> = (0..4).map(|c| x.get(g, c, t)).collect();
                let up = w_in.matvec(&col);
                let gate = w_gate.matvec(&col);
                let h: Vec<f64> = up
                    .iter()
                    .zip(&gate)
                    .map(|(u, z)| u * z / (1.0 + (-z).exp()))
                    .collect();
                let expect = w_out.matvec(&h);
                for c in 0..4 {
                    assert!((y.get(g, c, t) - expect[c]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn rope_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let v: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        assert_eq!(rope_rotate(&v, 0).unwrap(), v);
        let norm = |x: &[f64]| x.iter().map(|a| a * a).sum::<f64>().sqrt();
        for m in [1, 5, 63] {
            assert!((norm(&rope_rotate(&v, m).unwrap()) - norm(&v)).abs() < 1e-6);
        }
        let q: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let k: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let dot = |m: usize, n: usize| {
            let (a, b) = (rope_rotate(&q, m).unwrap(), rope_rotate(&k, n).unwrap());
            a.iter().zip(&b).map(|(x, y)| x * y).sum::<f64>()
        };
        assert!((dot(5, 3) - dot(7, 5)).abs() < 1e-6);
        assert!((dot(5, 3) - dot(3, 5)).abs() > 1e-6);
        assert!(matches!(rope_rotate(&[1.0, 2.0, 3.0], 1), Err(Error::Config(_))));
    }

    #[test]
    fn layer_scale_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = rand_tensor(&mut rng, 2, 3, 4);
        assert_eq!(layer_scale(&x, &[1.0; 3]).unwrap(), x);
        assert!(layer_scale(&x, &[0.0; 3]).unwrap().data.iter().all(|&v| v == 0.0));
        let small = layer_scale(&x, &[1e-6; 3]).unwrap();
        for (a, b) in small.data.iter().zip(&x.data) {
            assert_eq!(*a, b * 1e-6);
        }
        assert!(layer_scale(&x, &[1.0; 2]).is_err());
    }

    fn rand_attention(rng: &mut ChaCha8Rng, n: usize) -> AttentionWeights {
        AttentionWeights {
            q: rand_linear(rng, n, n),
            k: rand_linear(rng, n, n),
            v: rand_linear(rng, n, n),
            out: rand_linear(rng, n, n),
        }
    }

    /// Dense reference: explicit score matrix and softmax per head and step.
    fn attention_oracle(x: &Tensor3, w: &AttentionWeights, heads: usize, rope: bool) -> Tensor3 {
        let (seq, n, time) = x.shape();
        let d = n / heads;
        let mut out = Tensor3::zeros(seq, n, time);
        for t in 0..time {
            let col = |g: usize| -> Vec<f64> { (0..n).map(|c| x.get(g, c, t)).collect() };
            let proj = |l: &Linear, v: &[f64]| -> Vec<f64> {
                (0..n)
                    .map(|o| l.bias[o] + (0..n).map(|i| l.weight.get(o, i) * v[i]).sum::<f64>())
                    .collect()
            };
            let qs: Vec<Vec<f64>> = (0..seq).map(|g| proj(&w.q, &col(g))).collect();
            let ks: Vec<Vec<f64>> = (0..seq).map(|g| proj(&w.k, &col(g))).collect();
            let vs: Vec<Vec<f64>> = (0..seq).map(|g| proj(&w.v, &col(g))).collect();
            let mut ctx = vec![vec![0.0; n]; seq];
            for h in 0..heads {
                let head = |v: &Vec<f64>, pos: usize| -> Vec<f64> {
                    let s = v[h * d..(h + 1) * d].to_vec();
                    if rope {
                        // rotate by hand
                        let mut r = s.clone();
                        for j in 0..d / 2 {
                            let theta = pos as f64 * 10000f64.powf(-2.0 * j as f64 / d as f64);
                            r[2 * j] = s[2 * j] * theta.cos() - s[2 * j + 1] * theta.sin();
                            r[2 * j + 1] = s[2 * j] * theta.sin() + s[2 * j + 1] * theta.cos();
                        }
                        r
                    } else {
                        s
                    }
                };
                let mut scores = vec![vec![0.0; seq]; seq];
                for i in 0..seq {
                    for j in 0..seq {
                        let (qi, kj) = (head(&qs[i], i), head(&ks[j], j));
                        scores[i][j] =
                            qi.iter().zip(&kj).map(|(a, b)| a * b).sum::<f64>() / (d as f64).sqrt();
                    }
                }
                for i in 0..seq {
                    let denom: f64 = scores[i].iter().map(|s| s.exp()).sum();
                    for j in 0..seq {
                        let p = scores[i][j].exp() / denom;
                        for c in 0..d {
                            ctx[i][h * d + c] += p * vs[j][h * d + c];
                        }
                    }
                }
            }
            for g in 0..seq {
                let o = proj(&w.out, &ctx[g]);
                for c in 0..n {
                    out.set(g, c, t, o[c]);
                }
            }
        }
        out
    }

    #[test]
    fn attention_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        // lengths below, at and across the kernel's block and tile sizes
        for time in [3, 8, 45, 70] {
            let x = rand_tensor(&mut rng, 5, 8, time);
            let w = rand_attention(&mut rng, 8);
            let table = RopeTable::new(5, 4, ROPE_BASE).unwrap();
            let y = multi_head_attention(&x, &w, 2, Some(&table)).unwrap();
            let oracle = attention_oracle(&x, &w, 2, true);
            assert!(max_diff(&y.data, &oracle.data) < 1e-10, "time {time}");
            let y0 = multi_head_attention(&x, &w, 2, None).unwrap();
            assert!(max_diff(&y0.data, &attention_oracle(&x, &w, 2, false).data) < 1e-10, "time {time}");
        }
    }

    #[test]
    fn attention_rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let x = rand_tensor(&mut rng, 6, 8, 37).map(|v| 4.0 * v);
        let w = rand_attention(&mut rng, 8);
        let table = RopeTable::new(6, 4, ROPE_BASE).unwrap();
        let probs = attention_probabilities(&x, &w, 2, Some(&table)).unwrap();
        assert_eq!(probs.len(), 37);
        for step in &probs {
            assert_eq!(step.len(), 2);
            for m in step {
                for i in 0..6 {
                    assert!((m.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn single_element_sequence_is_value_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = rand_tensor(&mut rng, 1, 8, 3);
        let w = rand_attention(&mut rng, 8);
        let y = multi_head_attention(&x, &w, 4, None).unwrap();
        let expect = pointwise_conv(&pointwise_conv(&x, &w.v).unwrap(), &w.out).unwrap();
        assert!(max_diff(&y.data, &expect.data) < 1e-12);
    }

    #[test]
    fn permutation_equivariance_without_rope_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x = rand_tensor(&mut rng, 5, 8, 2);
        let w = rand_attention(&mut rng, 8);
        let perm = [3usize, 0, 4, 1, 2];
        let permute = |t: &Tensor3| {
            let groups: Vec<Matrix> = perm.iter().map(|&p| t.group_matrix(p)).collect();
            Tensor3::from_groups(&groups).unwrap()
        };
        let y = multi_head_attention(&x, &w, 2, None).unwrap();
        let yp = multi_head_attention(&permute(&x), &w, 2, None).unwrap();
        assert!(max_diff(&permute(&y).data, &yp.data) < 1e-12);

        let table = RopeTable::new(5, 4, ROPE_BASE).unwrap();
        let r = multi_head_attention(&x, &w, 2, Some(&table)).unwrap();
        let rp = multi_head_attention(&permute(&x), &w, 2, Some(&table)).unwrap();
        assert!(max_diff(&permute(&r).data, &rp.data) > 1e-6);
    }

    #[test]
    fn attention_rejects_bad_heads() {
        let x = Tensor3::zeros(3, 6, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let w = rand_attention(&mut rng, 6);
        assert!(matches!(multi_head_attention(&x, &w, 4, None), Err(Error::Shape(_))));
    }

    #[test]
    fn kernels_are_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let x = rand_tensor(&mut rng, 7, 8, 9);
        let w = rand_attention(&mut rng, 8);
        let table = RopeTable::new(7, 4, ROPE_BASE).unwrap();
        let a = multi_head_attention(&x, &w, 2, Some(&table)).unwrap();
        let b = multi_head_attention(&x, &w, 2, Some(&table)).unwrap();
        assert_eq!(a.data, b.data);
    }
}
