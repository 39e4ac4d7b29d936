//! Structure-constrained encoder/decoder.
//!
//! Wiring, for `L` levels and channel widths `C_t = base * 2^(t-1)`:
//!
//! * encoder blocks `e_1 .. e_{L+1}`, each a double conv-BN-ReLU, with 2x2
//!   max pooling between blocks;
//! * a structure branch seeded by one conv-ReLU over `e_1`. Structure
//!   constraint block `t` (for `t = 2 ..= L+1`) upsamples `e_t`, concatenates
//!   it with the branch state, and derives a single-channel attention map
//!   `a = sigmoid(conv1x1(relu(bn(conv3x3(concat)))))`. The gated features
//!   `up(e_t) * a` are the block output; max pooled, they become the branch
//!   state for block `t + 1`;
//! * a decoder that upsamples from `e_{L+1}` and, at each level, concatenates
//!   the block output living at that resolution in place of a skip connection;
//! * a depth head (1x1 conv + sigmoid on the last decoder features) and a
//!   vessel head (the last block output upsampled to full size, 3x3 conv +
//!   sigmoid).

use rand::SeedableRng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::layers::{self, BnCache};
use super::tensor::Tensor4;
use crate::error::{Error, Result};
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Topology {
    pub levels: usize,
    pub base_width: usize,
}

impl Default for Topology {
    fn default() -> Self {
        Self {
            levels: 4,
            base_width: 8,
        }
    }
}

impl Topology {
    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 || self.levels > 8 {
            return Err(Error::Config(format!("levels must be in 1..=8, got {}", self.levels)));
        }
        if self.base_width == 0 || self.base_width > 256 {
            return Err(Error::Config(format!(
                "base_width must be in 1..=256, got {}",
                self.base_width
            )));
        }
        Ok(())
    }

    /// Channel width of encoder block `t` (1-based).
    pub fn channels(&self, t: usize) -> usize {
        self.base_width << (t - 1)
    }

    pub fn encoder_blocks(&self) -> usize {
        self.levels + 1
    }

    pub fn structure_blocks(&self) -> usize {
        self.levels
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamRole {
    Weight,
    Bias,
    Gamma,
    Beta,
    RunningMean,
    RunningVar,
}

impl ParamRole {
    pub fn trainable(self) -> bool {
        !matches!(self, ParamRole::RunningMean | ParamRole::RunningVar)
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvSpec {
    weight: usize,
    bias: Option<usize>,
    cin: usize,
    cout: usize,
    k: usize,
}

impl ConvSpec {
    fn pad(&self) -> usize {
        self.k / 2
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct BnSpec {
    gamma: usize,
    beta: usize,
    mean: usize,
    var: usize,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvBnRelu {
    conv: ConvSpec,
    bn: BnSpec,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct DoubleConv {
    first: ConvBnRelu,
    second: ConvBnRelu,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ScbSpec {
    attn: ConvBnRelu,
    gate: ConvSpec,
}

#[derive(Debug, Clone)]
pub(crate) struct Layout {
    encoder: Vec<DoubleConv>,
    seed: ConvSpec,
    scbs: Vec<ScbSpec>,
    /// `decoder[k - 1]` produces level `k` features.
    decoder: Vec<DoubleConv>,
    depth_head: ConvSpec,
    seg_head: ConvSpec,
    shapes: Vec<(ParamRole, usize)>,
}

struct LayoutBuilder {
    shapes: Vec<(ParamRole, usize)>,
}

impl LayoutBuilder {
    fn push(&mut self, role: ParamRole, len: usize) -> usize {
        self.shapes.push((role, len));
        self.shapes.len() - 1
    }

    fn conv(&mut self, cin: usize, cout: usize, k: usize, bias: bool) -> ConvSpec {
        let weight = self.push(ParamRole::Weight, cout * cin * k * k);
        let bias = bias.then(|| self.push(ParamRole::Bias, cout));
        ConvSpec {
            weight,
            bias,
            cin,
            cout,
            k,
        }
    }

    fn bn(&mut self, c: usize) -> BnSpec {
        BnSpec {
            gamma: self.push(ParamRole::Gamma, c),
            beta: self.push(ParamRole::Beta, c),
            mean: self.push(ParamRole::RunningMean, c),
            var: self.push(ParamRole::RunningVar, c),
        }
    }

    fn cbr(&mut self, cin: usize, cout: usize) -> ConvBnRelu {
        // bias is redundant in front of batch normalisation
        ConvBnRelu {
            conv: self.conv(cin, cout, 3, false),
            bn: self.bn(cout),
        }
    }

    fn double(&mut self, cin: usize, cout: usize) -> DoubleConv {
        DoubleConv {
            first: self.cbr(cin, cout),
            second: self.cbr(cout, cout),
        }
    }
}

impl Layout {
    fn new(topo: &Topology) -> Self {
        let mut b = LayoutBuilder { shapes: Vec::new() };
        let c = |t| topo.channels(t);
        let encoder = (1..=topo.encoder_blocks())
            .map(|t| b.double(if t == 1 { 1 } else { c(t - 1) }, c(t)))
            .collect();
        let seed = b.conv(c(1), c(1), 3, true);
        let scbs = (2..=topo.encoder_blocks())
            .map(|t| ScbSpec {
                attn: b.cbr(c(t) + c(t - 1), topo.base_width),
                gate: b.conv(topo.base_width, 1, 1, true),
            })
            .collect();
        let decoder = (1..=topo.levels)
            .map(|k| b.double(2 * c(k + 1), c(k)))
            .collect();
        let depth_head = b.conv(c(1), 1, 1, true);
        let seg_head = b.conv(c(topo.encoder_blocks()), 1, 3, true);
        Layout {
            encoder,
            seed,
            scbs,
            decoder,
            depth_head,
            seg_head,
            shapes: b.shapes,
        }
    }
}

/// Network parameters: a flat, ordered list of tensors plus the topology
/// that determines their meaning.
#[derive(Debug, Clone)]
pub struct ScNetParams<T> {
    topology: Topology,
    layout: Layout,
    tensors: Vec<Vec<T>>,
}

impl<T: Real> PartialEq for ScNetParams<T> {
    fn eq(&self, other: &Self) -> bool {
        self.topology == other.topology && self.tensors == other.tensors
    }
}

/// Gradients indexed like [`ScNetParams::tensors`]; running statistics get
/// zero-length entries.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub tensors: Vec<Vec<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn zeros_for(params: &ScNetParams<T>) -> Self {
        Self {
            tensors: params
                .layout
                .shapes
                .iter()
                .map(|&(role, len)| vec![T::zero(); if role.trainable() { len } else { 0 }])
                .collect(),
        }
    }

    pub fn flat(&self) -> Vec<T> {
        self.tensors.iter().flatten().copied().collect()
    }

    fn add(&mut self, idx: usize, g: &[T]) {
        for (a, &b) in self.tensors[idx].iter_mut().zip(g) {
            *a += b;
        }
    }
}

impl<T: Real> ScNetParams<T> {
    /// Fan-in scaled normal kernels, zero biases, unit normalisation scale.
    pub fn init(topology: Topology, seed: u64) -> Result<Self> {
        topology.validate()?;
        let layout = Layout::new(&topology);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut tensors = Vec::with_capacity(layout.shapes.len());
        let convs = layout.conv_specs();
        for (idx, &(role, len)) in layout.shapes.iter().enumerate() {
            let t = match role {
                ParamRole::Weight => {
                    let spec = convs
                        .iter()
                        .find(|c| c.weight == idx)
                        .expect("every weight belongs to a conv");
                    let fan_in = (spec.cin * spec.k * spec.k) as f64;
                    let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("valid std");
                    (0..len).map(|_| T::lit(normal.sample(&mut rng))).collect()
                }
                ParamRole::Gamma | ParamRole::RunningVar => vec![T::one(); len],
                ParamRole::Bias | ParamRole::Beta | ParamRole::RunningMean => vec![T::zero(); len],
            };
            tensors.push(t);
        }
        Ok(Self {
            topology,
            layout,
            tensors,
        })
    }

    pub fn from_tensors(topology: Topology, tensors: Vec<Vec<T>>) -> Result<Self> {
        topology.validate()?;
        let layout = Layout::new(&topology);
        if tensors.len() != layout.shapes.len()
            || tensors.iter().zip(&layout.shapes).any(|(t, &(_, len))| t.len() != len)
        {
            return Err(Error::CheckpointMismatch(format!(
                "parameter tensors do not match topology {topology:?}"
            )));
        }
        Ok(Self {
            topology,
            layout,
            tensors,
        })
    }

    pub fn topology(&self) -> Topology {
        self.topology
    }

    pub fn tensors(&self) -> &[Vec<T>] {
        &self.tensors
    }

    pub fn roles(&self) -> impl Iterator<Item = ParamRole> + '_ {
        self.layout.shapes.iter().map(|&(r, _)| r)
    }

    pub(crate) fn tensors_mut(&mut self) -> &mut [Vec<T>] {
        &mut self.tensors
    }

    pub fn num_trainable(&self) -> usize {
        self.layout
            .shapes
            .iter()
            .filter(|(r, _)| r.trainable())
            .map(|&(_, len)| len)
            .sum()
    }

    pub fn trainable_flat(&self) -> Vec<T> {
        self.tensors
            .iter()
            .zip(&self.layout.shapes)
            .filter(|(_, (r, _))| r.trainable())
            .flat_map(|(t, _)| t.iter().copied())
            .collect()
    }

    pub fn set_trainable_flat(&mut self, flat: &[T]) -> Result<()> {
        if flat.len() != self.num_trainable() {
            return Err(Error::shape(format!(
                "{} values for {} trainable parameters",
                flat.len(),
                self.num_trainable()
            )));
        }
        let mut offset = 0;
        for (t, &(role, len)) in self.tensors.iter_mut().zip(&self.layout.shapes) {
            if role.trainable() {
                t.copy_from_slice(&flat[offset..offset + len]);
                offset += len;
            }
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> ScNetParams<U> {
        ScNetParams {
            topology: self.topology,
            layout: self.layout.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|t| t.iter().map(|v| U::lit(v.as_f64())).collect())
                .collect(),
        }
    }

    /// Exponential moving average of the batch statistics recorded in a
    /// training-mode trace (unbiased variance).
    pub fn update_running_stats(&mut self, trace: &ForwardTrace<T>, momentum: f64) {
        let m = T::lit(momentum);
        for (bn, cache, count) in &trace.bn_stats {
            let unbias = if *count > 1 {
                T::lit(*count as f64 / (*count as f64 - 1.0))
            } else {
                T::one()
            };
            for (r, &b) in self.tensors[bn.mean].iter_mut().zip(&cache.mean) {
                *r = (T::one() - m) * *r + m * b;
            }
            for (r, &b) in self.tensors[bn.var].iter_mut().zip(&cache.var) {
                *r = (T::one() - m) * *r + m * b * unbias;
            }
        }
    }

    fn t(&self, idx: usize) -> &[T] {
        &self.tensors[idx]
    }
}

impl Layout {
    fn conv_specs(&self) -> Vec<ConvSpec> {
        let mut v = Vec::new();
        for d in self.encoder.iter().chain(&self.decoder) {
            v.push(d.first.conv);
            v.push(d.second.conv);
        }
        v.push(self.seed);
        for s in &self.scbs {
            v.push(s.attn.conv);
            v.push(s.gate);
        }
        v.push(self.depth_head);
        v.push(self.seg_head);
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in every normalisation layer.
    Train,
    /// Running statistics.
    Eval,
}

#[derive(Debug, Clone)]
struct CbrTrace<T> {
    input: Tensor4<T>,
    bn: BnCache<T>,
    out: Tensor4<T>,
}

#[derive(Debug, Clone)]
struct DoubleTrace<T> {
    first: CbrTrace<T>,
    second: CbrTrace<T>,
}

impl<T> DoubleTrace<T> {
    fn out(&self) -> &Tensor4<T> {
        &self.second.out
    }
}

#[derive(Debug, Clone)]
struct ScbTrace<T> {
    up_e: Tensor4<T>,
    state_channels: usize,
    attn: CbrTrace<T>,
    attention: Tensor4<T>,
    filtered: Tensor4<T>,
    /// Pooling indices used to derive the next branch state.
    pool_arg: Option<Vec<u32>>,
}

#[derive(Debug, Clone)]
struct DecoderTrace<T> {
    up_channels: usize,
    block: DoubleTrace<T>,
}

/// Every activation needed to run the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace<T> {
    mode: Mode,
    input_shape: [usize; 4],
    encoder: Vec<DoubleTrace<T>>,
    pool_args: Vec<Vec<u32>>,
    seed: Tensor4<T>,
    scbs: Vec<ScbTrace<T>>,
    decoder: Vec<DecoderTrace<T>>,
    seg_input: Tensor4<T>,
    pub pred_depth: Tensor4<T>,
    pub pred_seg: Tensor4<T>,
    bn_stats: Vec<(BnSpec, BnCache<T>, usize)>,
}

impl<T: Real> ForwardTrace<T> {
    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// Encoder output `e_t`, 1-based.
    pub fn encoder_output(&self, t: usize) -> &Tensor4<T> {
        self.encoder[t - 1].out()
    }

    /// Attention map produced by the block consuming `e_t`.
    pub fn attention(&self, t: usize) -> &Tensor4<T> {
        &self.scbs[t - 2].attention
    }

    /// Gated output of the block consuming `e_t`.
    pub fn filtered(&self, t: usize) -> &Tensor4<T> {
        &self.scbs[t - 2].filtered
    }

    /// `up(e_t)` as seen by its structure block.
    pub fn upsampled_encoder(&self, t: usize) -> &Tensor4<T> {
        &self.scbs[t - 2].up_e
    }
}

/// Deliberate backward corruption used to prove the gradient checker can
/// detect a broken layer.
#[doc(hidden)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackwardFault {
    None,
    /// Flip the sign of the gradient flowing through the branch-seed ReLU.
    FlipSeedRelu,
}

/// The network: immutable parameters plus pure forward/backward passes.
#[derive(Debug, Clone)]
pub struct ScNet<T> {
    pub params: ScNetParams<T>,
}

impl<T: Real> ScNet<T> {
    pub fn new(topology: Topology, seed: u64) -> Result<Self> {
        Ok(Self {
            params: ScNetParams::init(topology, seed)?,
        })
    }

    pub fn topology(&self) -> Topology {
        self.params.topology
    }

    fn cbr_forward(
        &self,
        spec: &ConvBnRelu,
        input: Tensor4<T>,
        mode: Mode,
        stats: &mut Vec<(BnSpec, BnCache<T>, usize)>,
    ) -> Result<CbrTrace<T>> {
        let p = &self.params;
        let conv = layers::conv2d(&input, p.t(spec.conv.weight), &[], spec.conv.cout, 3, 1)?;
        let (normed, bn) = match mode {
            Mode::Train => layers::batchnorm_train(&conv, p.t(spec.bn.gamma), p.t(spec.bn.beta)),
            Mode::Eval => layers::batchnorm_eval(
                &conv,
                p.t(spec.bn.gamma),
                p.t(spec.bn.beta),
                p.t(spec.bn.mean),
                p.t(spec.bn.var),
            ),
        };
        if mode == Mode::Train {
            stats.push((spec.bn, bn.clone(), conv.n() * conv.plane_len()));
        }
        let out = layers::relu(&normed);
        Ok(CbrTrace { input, bn, out })
    }

    fn double_forward(
        &self,
        spec: &DoubleConv,
        input: Tensor4<T>,
        mode: Mode,
        stats: &mut Vec<(BnSpec, BnCache<T>, usize)>,
    ) -> Result<DoubleTrace<T>> {
        let first = self.cbr_forward(&spec.first, input, mode, stats)?;
        let second = self.cbr_forward(&spec.second, first.out.clone(), mode, stats)?;
        Ok(DoubleTrace { first, second })
    }

    fn conv(&self, spec: &ConvSpec, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        let bias = spec.bias.map(|b| self.params.t(b)).unwrap_or(&[]);
        layers::conv2d(x, self.params.t(spec.weight), bias, spec.cout, spec.k, spec.pad())
    }

    /// Runs the network on a `[n, 1, h, w]` batch.
    pub fn forward(&self, input: &Tensor4<T>, mode: Mode) -> Result<ForwardTrace<T>> {
        let topo = self.params.topology;
        let layout = &self.params.layout;
        let [n, c, h, w] = input.shape();
        let div = 1usize << topo.levels;
        if c != 1 {
            return Err(Error::shape(format!("expected one input channel, got {c}")));
        }
        if n == 0 || h == 0 || w == 0 || h % div != 0 || w % div != 0 {
            return Err(Error::shape(format!(
                "{h}x{w} input is not divisible by 2^{} = {div}",
                topo.levels
            )));
        }
        let mut stats = Vec::new();

        let mut encoder: Vec<DoubleTrace<T>> = Vec::with_capacity(topo.encoder_blocks());
        let mut pool_args = Vec::with_capacity(topo.levels);
        encoder.push(self.double_forward(&layout.encoder[0], input.clone(), mode, &mut stats)?);
        for t in 2..=topo.encoder_blocks() {
            let (pooled, arg) = layers::maxpool2(encoder[t - 2].out())?;
            pool_args.push(arg);
            encoder.push(self.double_forward(&layout.encoder[t - 1], pooled, mode, &mut stats)?);
        }

        let seed = layers::relu(&self.conv(&layout.seed, encoder[0].out())?);

        let mut scbs: Vec<ScbTrace<T>> = Vec::with_capacity(topo.levels);
        let mut state = seed.clone();
        for t in 2..=topo.encoder_blocks() {
            let spec = &layout.scbs[t - 2];
            let up_e = layers::upsample2(encoder[t - 1].out());
            let state_channels = state.c();
            let cat = layers::concat_channels(&up_e, &state)?;
            let attn = self.cbr_forward(&spec.attn, cat, mode, &mut stats)?;
            let attention = layers::sigmoid(&self.conv(&spec.gate, &attn.out)?);
            let filtered = layers::gate(&up_e, &attention)?;
            let pool_arg = if t < topo.encoder_blocks() {
                let (next, arg) = layers::maxpool2(&filtered)?;
                state = next;
                Some(arg)
            } else {
                None
            };
            scbs.push(ScbTrace {
                up_e,
                state_channels,
                attn,
                attention,
                filtered,
                pool_arg,
            });
        }

        let mut decoder: Vec<DecoderTrace<T>> = Vec::with_capacity(topo.levels);
        let mut features = encoder[topo.levels].out().clone();
        for k in (1..=topo.levels).rev() {
            let up = layers::upsample2(&features);
            let up_channels = up.c();
            let cat = layers::concat_channels(&up, &scbs[k - 1].filtered)?;
            let block = self.double_forward(&layout.decoder[k - 1], cat, mode, &mut stats)?;
            features = block.out().clone();
            decoder.push(DecoderTrace { up_channels, block });
        }

        let pred_depth = layers::sigmoid(&self.conv(&layout.depth_head, &features)?);

        let mut seg_input = scbs[topo.levels - 1].filtered.clone();
        for _ in 1..topo.levels {
            seg_input = layers::upsample2(&seg_input);
        }
        let pred_seg = layers::sigmoid(&self.conv(&layout.seg_head, &seg_input)?);

        Ok(ForwardTrace {
            mode,
            input_shape: input.shape(),
            encoder,
            pool_args,
            seed,
            scbs,
            decoder,
            seg_input,
            pred_depth,
            pred_seg,
            bn_stats: stats,
        })
    }

    fn cbr_backward(&self, spec: &ConvBnRelu, tr: &CbrTrace<T>, dout: &Tensor4<T>, grads: &mut Gradients<T>) -> Tensor4<T> {
        let p = &self.params;
        let d_norm = layers::relu_backward(&tr.out, dout);
        let bn = layers::batchnorm_backward(&tr.bn, p.t(spec.bn.gamma), &d_norm);
        grads.add(spec.bn.gamma, &bn.dgamma);
        grads.add(spec.bn.beta, &bn.dbeta);
        let conv = layers::conv2d_backward(&tr.input, p.t(spec.conv.weight), false, spec.conv.cout, 3, 1, &bn.dx);
        grads.add(spec.conv.weight, &conv.dweight);
        conv.dx
    }

    fn double_backward(&self, spec: &DoubleConv, tr: &DoubleTrace<T>, dout: &Tensor4<T>, grads: &mut Gradients<T>) -> Tensor4<T> {
        let d_mid = self.cbr_backward(&spec.second, &tr.second, dout, grads);
        self.cbr_backward(&spec.first, &tr.first, &d_mid, grads)
    }

    fn conv_backward(&self, spec: &ConvSpec, input: &Tensor4<T>, dout: &Tensor4<T>, grads: &mut Gradients<T>) -> Tensor4<T> {
        let g = layers::conv2d_backward(
            input,
            self.params.t(spec.weight),
            spec.bias.is_some(),
            spec.cout,
            spec.k,
            spec.pad(),
            dout,
        );
        grads.add(spec.weight, &g.dweight);
        if let Some(b) = spec.bias {
            grads.add(b, &g.dbias);
        }
        g.dx
    }

    /// Parameter gradients given loss gradients on both heads.
    pub fn backward(&self, trace: &ForwardTrace<T>, d_depth: &Tensor4<T>, d_seg: &Tensor4<T>) -> Result<Gradients<T>> {
        self.backward_with_fault(trace, d_depth, d_seg, BackwardFault::None)
    }

    #[doc(hidden)]
    pub fn backward_with_fault(
        &self,
        trace: &ForwardTrace<T>,
        d_depth: &Tensor4<T>,
        d_seg: &Tensor4<T>,
        fault: BackwardFault,
    ) -> Result<Gradients<T>> {
        if d_depth.shape() != trace.pred_depth.shape() || d_seg.shape() != trace.pred_seg.shape() {
            return Err(Error::shape("output gradients do not match the forward trace"));
        }
        let topo = self.params.topology;
        let layout = &self.params.layout;
        let levels = topo.levels;
        let mut grads = Gradients::zeros_for(&self.params);

        let mut d_enc: Vec<Option<Tensor4<T>>> = vec![None; topo.encoder_blocks()];
        let mut d_filtered: Vec<Option<Tensor4<T>>> = vec![None; levels];
        let accumulate = |slot: &mut Option<Tensor4<T>>, g: Tensor4<T>| match slot {
            Some(acc) => acc.add_assign(&g),
            None => *slot = Some(g),
        };

        // heads
        let last_features = trace.decoder[levels - 1].block.out();
        let d_pre = layers::sigmoid_backward(&trace.pred_depth, d_depth);
        let mut d_features = self.conv_backward(&layout.depth_head, last_features, &d_pre, &mut grads);

        let d_pre = layers::sigmoid_backward(&trace.pred_seg, d_seg);
        let mut d_seg_in = self.conv_backward(&layout.seg_head, &trace.seg_input, &d_pre, &mut grads);
        for _ in 1..levels {
            d_seg_in = layers::upsample2_backward(&d_seg_in);
        }
        accumulate(&mut d_filtered[levels - 1], d_seg_in);

        // decoder, shallow to deep (reverse of the forward order)
        for (i, dec) in trace.decoder.iter().enumerate().rev() {
            let k = levels - i;
            let d_cat = self.double_backward(&layout.decoder[k - 1], &dec.block, &d_features, &mut grads);
            let (d_up, d_f) = layers::split_channels(&d_cat, dec.up_channels);
            accumulate(&mut d_filtered[k - 1], d_f);
            d_features = layers::upsample2_backward(&d_up);
        }
        accumulate(&mut d_enc[levels], d_features);

        // structure branch, deep to shallow
        let mut d_state: Option<Tensor4<T>> = None;
        for t in (2..=topo.encoder_blocks()).rev() {
            let spec = &layout.scbs[t - 2];
            let tr = &trace.scbs[t - 2];
            let mut d_f = d_filtered[t - 2].take().unwrap_or_else(|| {
                Tensor4::zeros(tr.filtered.n(), tr.filtered.c(), tr.filtered.h(), tr.filtered.w())
            });
            if let (Some(ds), Some(arg)) = (d_state.take(), &tr.pool_arg) {
                d_f.add_assign(&layers::maxpool2_backward(tr.filtered.shape(), arg, &ds));
            }
            let (mut d_up_e, d_att) = layers::gate_backward(&tr.up_e, &tr.attention, &d_f);
            let d_gate_pre = layers::sigmoid_backward(&tr.attention, &d_att);
            let d_attn_out = self.conv_backward(&spec.gate, &tr.attn.out, &d_gate_pre, &mut grads);
            let d_cat = self.cbr_backward(&spec.attn, &tr.attn, &d_attn_out, &mut grads);
            let (d_up_cat, d_s) = layers::split_channels(&d_cat, d_cat.c() - tr.state_channels);
            d_up_e.add_assign(&d_up_cat);
            accumulate(&mut d_enc[t - 1], layers::upsample2_backward(&d_up_e));
            d_state = Some(d_s);
        }

        // branch seed
        let mut d_seed_pre = layers::relu_backward(&trace.seed, &d_state.expect("at least one block"));
        if fault == BackwardFault::FlipSeedRelu {
            for v in d_seed_pre.data_mut() {
                *v = -*v;
            }
        }
        let d_e1 = self.conv_backward(&layout.seed, trace.encoder[0].out(), &d_seed_pre, &mut grads);
        accumulate(&mut d_enc[0], d_e1);

        // encoder, deep to shallow
        for t in (1..=topo.encoder_blocks()).rev() {
            let Some(d_out) = d_enc[t - 1].take() else { continue };
            let d_in = self.double_backward(&layout.encoder[t - 1], &trace.encoder[t - 1], &d_out, &mut grads);
            if t >= 2 {
                let prev_shape = trace.encoder[t - 2].out().shape();
                let d_prev = layers::maxpool2_backward(prev_shape, &trace.pool_args[t - 2], &d_in);
                accumulate(&mut d_enc[t - 2], d_prev);
            }
        }
        debug_assert_eq!(trace.input_shape[1], 1);
        Ok(grads)
    }
}
