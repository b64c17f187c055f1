//! Transformer front-end composed with the whitebox physics layers.
//!
//! Pipeline: tokenize → projection → one post-norm encoder block
//! (attention, feed-forward) → mean pooling → dropout → three observable
//! branches producing [`VOParams`] → whitebox expectations → six residual
//! refinement heads → per-gate fidelities.

pub mod checkpoint;
pub mod layers;

use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{param_err, Error, Result};
use crate::linalg::Mat2;
use crate::noise::RngSeed;
use crate::pulses::{NormalizedInput, INPUT_DIM, PULSE_COUNT};
use crate::whitebox::{
    assemble_vo_with_grad, control_unitary, control_unitary_jacobian, expectation_unitary_adjoint,
    measurement_operator, ExpectationSet, FidelityMap, Gate, VOParams, DEFAULT_WHITEBOX_STEPS,
    EXPECTATION_COUNT, OBSERVABLE_COUNT, PREP_COUNT,
};

pub use layers::{attention, Dense, LayerNorm, Matrix};
use layers::{attention_backward, attention_with_weights, gelu, gelu_grad, sigmoid, LayerNormCache};

pub const TOKEN_COUNT: usize = PULSE_COUNT;
pub const TOKEN_FEATURES: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub ff_dim: usize,
    pub dropout_rate: f64,
    /// Hidden widths of the two dense layers in each observable branch.
    pub branch_widths: [usize; 2],
    pub refine_hidden: usize,
    /// Time steps used for the control unitary inside the model.
    pub whitebox_steps: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 32,
            n_heads: 2,
            ff_dim: 64,
            dropout_rate: 0.1,
            branch_widths: [32, 16],
            refine_hidden: 32,
            whitebox_steps: DEFAULT_WHITEBOX_STEPS,
        }
    }
}

impl ModelConfig {
    /// A small model with every layer present, for gradient checks.
    pub fn reduced(d_model: usize) -> Self {
        ModelConfig {
            d_model,
            n_heads: 2,
            ff_dim: 2 * d_model,
            dropout_rate: 0.1,
            branch_widths: [d_model, d_model / 2],
            refine_hidden: d_model,
            whitebox_steps: 400,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let sizes = [self.d_model, self.n_heads, self.ff_dim, self.branch_widths[0], self.branch_widths[1], self.refine_hidden];
        if sizes.contains(&0) || self.whitebox_steps == 0 {
            return Err(param_err("model dimensions must be positive"));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(param_err(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(param_err("dropout_rate must lie in [0, 1)"));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

/// Closed-form trainable parameter count.
pub fn param_count(config: &ModelConfig) -> usize {
    let d = config.d_model;
    let f = config.ff_dim;
    let [b1, b2] = config.branch_widths;
    let r = config.refine_hidden;
    let e = EXPECTATION_COUNT;
    let projection = TOKEN_FEATURES * d + d;
    let attention = 4 * (d * d + d);
    let norms = 2 * 2 * d;
    let feed_forward = d * f + f + f * d + d;
    let branch = d * b1 + b1 + b1 * b2 + b2 + b2 * 3 + 3 + b2 + 1;
    let refine = e * r + r + r * e + e;
    projection + attention + norms + feed_forward + OBSERVABLE_COUNT * branch + Gate::COUNT * refine
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Init {
    Zero,
    One,
    Glorot { fan_in: usize, fan_out: usize },
}

/// One contiguous block of the flat parameter vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerInfo {
    pub name: String,
    pub offset: usize,
    pub len: usize,
    pub init: Init,
}

#[derive(Clone, Debug)]
struct Branch {
    hidden1: Dense,
    hidden2: Dense,
    angles: Dense,
    mu: Dense,
}

#[derive(Clone, Debug)]
struct Refiner {
    hidden: Dense,
    out: Dense,
}

#[derive(Default)]
struct Builder {
    len: usize,
    layers: Vec<LayerInfo>,
}

impl Builder {
    fn block(&mut self, name: String, len: usize, init: Init) -> usize {
        let offset = self.len;
        self.layers.push(LayerInfo { name, offset, len, init });
        self.len += len;
        offset
    }

    fn dense(&mut self, name: &str, inputs: usize, outputs: usize, zero: bool) -> Dense {
        let init = if zero { Init::Zero } else { Init::Glorot { fan_in: inputs, fan_out: outputs } };
        let weight = self.block(format!("{name}.weight"), inputs * outputs, init);
        let bias = self.block(format!("{name}.bias"), outputs, Init::Zero);
        Dense { weight, bias, inputs, outputs }
    }

    fn norm(&mut self, name: &str, width: usize) -> LayerNorm {
        let gain = self.block(format!("{name}.gain"), width, Init::One);
        let bias = self.block(format!("{name}.bias"), width, Init::Zero);
        LayerNorm { gain, bias, width }
    }
}

/// Offsets of every layer in the flat parameter vector.
#[derive(Clone, Debug)]
struct Architecture {
    projection: Dense,
    query: Dense,
    key: Dense,
    value: Dense,
    attn_out: Dense,
    norm1: LayerNorm,
    ff1: Dense,
    ff2: Dense,
    norm2: LayerNorm,
    branches: [Branch; OBSERVABLE_COUNT],
    refiners: [Refiner; Gate::COUNT],
    layers: Vec<LayerInfo>,
    len: usize,
}

impl Architecture {
    fn new(c: &ModelConfig) -> Self {
        let mut b = Builder::default();
        let d = c.d_model;
        let projection = b.dense("projection", TOKEN_FEATURES, d, false);
        let query = b.dense("attention.query", d, d, false);
        let key = b.dense("attention.key", d, d, false);
        let value = b.dense("attention.value", d, d, false);
        let attn_out = b.dense("attention.output", d, d, false);
        let norm1 = b.norm("norm1", d);
        let ff1 = b.dense("feed_forward.1", d, c.ff_dim, false);
        let ff2 = b.dense("feed_forward.2", c.ff_dim, d, false);
        let norm2 = b.norm("norm2", d);
        let [w1, w2] = c.branch_widths;
        let branches = std::array::from_fn(|o| Branch {
            hidden1: b.dense(&format!("branch{o}.dense1"), d, w1, false),
            hidden2: b.dense(&format!("branch{o}.dense2"), w1, w2, false),
            angles: b.dense(&format!("branch{o}.angles"), w2, 3, false),
            mu: b.dense(&format!("branch{o}.mu"), w2, 1, false),
        });
        let refiners = std::array::from_fn(|g| {
            let name = Gate::ALL[g].name();
            Refiner {
                hidden: b.dense(&format!("refine[{name}].dense1"), EXPECTATION_COUNT, c.refine_hidden, false),
                out: b.dense(&format!("refine[{name}].dense2"), c.refine_hidden, EXPECTATION_COUNT, true),
            }
        });
        Architecture {
            projection,
            query,
            key,
            value,
            attn_out,
            norm1,
            ff1,
            ff2,
            norm2,
            branches,
            refiners,
            layers: b.layers,
            len: b.len,
        }
    }
}

static GENERATION: AtomicU64 = AtomicU64::new(1);

fn next_generation() -> u64 {
    GENERATION.fetch_add(1, Ordering::Relaxed)
}

/// All trainable weights with a canonical flat ordering.
///
/// Every mutation stamps a fresh generation so traces taken against older
/// values are rejected by [`backward`].
#[derive(Clone, Debug)]
pub struct ModelParameters {
    config: ModelConfig,
    arch: Architecture,
    values: Vec<f64>,
    generation: u64,
}

impl ModelParameters {
    pub fn init(config: ModelConfig, seed: RngSeed) -> Result<Self> {
        config.validate()?;
        let arch = Architecture::new(&config);
        let mut rng = seed.rng();
        let mut values = vec![0.0; arch.len];
        for layer in &arch.layers {
            let block = &mut values[layer.offset..layer.offset + layer.len];
            match layer.init {
                Init::Zero => block.fill(0.0),
                Init::One => block.fill(1.0),
                Init::Glorot { fan_in, fan_out } => {
                    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    block.iter_mut().for_each(|v| *v = rng.random_range(-limit..limit));
                }
            }
        }
        Ok(ModelParameters { config, arch, values, generation: next_generation() })
    }

    pub fn from_flat(config: ModelConfig, values: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let arch = Architecture::new(&config);
        if values.len() != arch.len {
            return Err(param_err(format!(
                "expected {} parameters, got {}",
                arch.len,
                values.len()
            )));
        }
        Ok(ModelParameters { config, arch, values, generation: next_generation() })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.values.clone()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn layers(&self) -> &[LayerInfo] {
        &self.arch.layers
    }

    pub fn set_values(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.values.len() {
            return Err(param_err("parameter vector length mismatch"));
        }
        self.values.copy_from_slice(values);
        self.generation = next_generation();
        Ok(())
    }

    /// Mutable view; bumps the generation.
    pub fn values_mut(&mut self) -> &mut [f64] {
        self.generation = next_generation();
        &mut self.values
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

/// Control unitary for one input, optionally with its amplitude Jacobian.
#[derive(Clone, Debug)]
pub struct ControlContext {
    pub unitary: Mat2,
    pub jacobian: Option<[Mat2; INPUT_DIM]>,
}

impl ControlContext {
    pub fn new(input: &NormalizedInput, steps: usize, with_jacobian: bool) -> Result<Self> {
        let train = input.denormalize()?;
        if with_jacobian {
            let (unitary, jac) = control_unitary_jacobian(&train, steps)?;
            Ok(ControlContext { unitary, jacobian: Some(jac) })
        } else {
            Ok(ControlContext { unitary: control_unitary(&train, steps)?, jacobian: None })
        }
    }
}

/// Token k = (Āx_k, Āy_k, τ_k/T, σ/T).
pub fn tokenize(input: &NormalizedInput) -> Matrix {
    let width = 1.0 / (12 * PULSE_COUNT) as f64;
    let mut tokens = Matrix::zeros(TOKEN_COUNT, TOKEN_FEATURES);
    for k in 0..TOKEN_COUNT {
        let position = (k + 1) as f64 / (PULSE_COUNT + 1) as f64;
        tokens.row_mut(k).copy_from_slice(&[input.0[k], input.0[PULSE_COUNT + k], position, width]);
    }
    tokens
}

/// Inverted-dropout mask: entries are 0 or 1/(1 − p).
pub fn dropout_mask(config: &ModelConfig, mode: Mode, seed: RngSeed) -> Vec<f64> {
    let p = config.dropout_rate;
    match mode {
        Mode::Eval => vec![1.0; config.d_model],
        Mode::Train => {
            let mut rng = seed.rng();
            (0..config.d_model)
                .map(|_| if rng.random::<f64>() < p { 0.0 } else { 1.0 / (1.0 - p) })
                .collect()
        }
    }
}

#[derive(Clone, Debug)]
struct BranchTrace {
    pre1: Matrix,
    act1: Matrix,
    pre2: Matrix,
    act2: Matrix,
    mu: f64,
    vo: Mat2,
    vo_grad: [Mat2; 4],
}

#[derive(Clone, Debug)]
struct RefineTrace {
    pre: Matrix,
    act: Matrix,
}

/// Activations cached by a forward call.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    generation: u64,
    input: NormalizedInput,
    control: ControlContext,
    mask: Vec<f64>,
    tokens: Matrix,
    x0: Matrix,
    q: Matrix,
    k: Matrix,
    v: Matrix,
    head_weights: Vec<Matrix>,
    concat: Matrix,
    norm1: LayerNormCache,
    h1: Matrix,
    ff_pre: Matrix,
    ff_act: Matrix,
    norm2: LayerNormCache,
    dropped: Matrix,
    branches: Vec<BranchTrace>,
    measurement: [[Mat2; OBSERVABLE_COUNT]; PREP_COUNT],
    raw: Matrix,
    refine: Vec<RefineTrace>,
    unclamped: [f64; Gate::COUNT],
}

impl ForwardTrace {
    pub fn dropout_mask(&self) -> &[f64] {
        &self.mask
    }

    pub fn input(&self) -> &NormalizedInput {
        &self.input
    }

    /// Fidelities before clamping to [0, 1].
    pub fn unclamped_fidelities(&self) -> [f64; Gate::COUNT] {
        self.unclamped
    }

    /// Recomputes the forward pass from the cached input, control unitary
    /// and dropout mask.
    pub fn replay(&self, params: &ModelParameters) -> Result<ForwardOutput> {
        forward_with_mask(params, &self.input, &self.control, &self.mask)
    }
}

#[derive(Clone, Debug)]
pub struct ForwardOutput {
    pub vo_params: [VOParams; OBSERVABLE_COUNT],
    pub raw_expectations: ExpectationSet,
    pub refined_expectations: [ExpectationSet; Gate::COUNT],
    pub fidelities: [f64; Gate::COUNT],
    pub trace: ForwardTrace,
}

fn check(layer: &str, ok: bool) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::NonFinite { layer: layer.to_string() })
    }
}

/// Full forward pass; computes the control unitary and its Jacobian.
pub fn forward(params: &ModelParameters, input: &NormalizedInput, mode: Mode, seed: RngSeed) -> Result<ForwardOutput> {
    input.validate()?;
    let control = ControlContext::new(input, params.config.whitebox_steps, true)?;
    forward_with_context(params, input, &control, mode, seed)
}

/// Forward pass with a precomputed control unitary.
pub fn forward_with_context(
    params: &ModelParameters,
    input: &NormalizedInput,
    control: &ControlContext,
    mode: Mode,
    seed: RngSeed,
) -> Result<ForwardOutput> {
    let mask = dropout_mask(&params.config, mode, seed);
    forward_with_mask(params, input, control, &mask)
}

/// Forward pass with an explicit dropout mask (length d_model).
pub fn forward_with_mask(
    params: &ModelParameters,
    input: &NormalizedInput,
    control: &ControlContext,
    mask: &[f64],
) -> Result<ForwardOutput> {
    let cfg = &params.config;
    let a = &params.arch;
    let p = params.values.as_slice();
    if mask.len() != cfg.d_model {
        return Err(param_err("dropout mask length must equal d_model"));
    }
    input.validate()?;

    let tokens = tokenize(input);
    let x0 = a.projection.forward(p, &tokens);
    check("projection", x0.is_finite())?;

    let q = a.query.forward(p, &x0);
    let k = a.key.forward(p, &x0);
    let v = a.value.forward(p, &x0);
    let hd = cfg.head_dim();
    let scale = 1.0 / (hd as f64).sqrt();
    let mut concat = Matrix::zeros(TOKEN_COUNT, cfg.d_model);
    let mut head_weights = Vec::with_capacity(cfg.n_heads);
    for h in 0..cfg.n_heads {
        let (out, w) = attention_with_weights(&q.columns(h * hd, hd), &k.columns(h * hd, hd), &v.columns(h * hd, hd), scale);
        concat.set_columns(h * hd, &out);
        head_weights.push(w);
    }
    let attended = a.attn_out.forward(p, &concat);
    check("attention", attended.is_finite())?;

    let (h1, norm1) = a.norm1.forward(p, &x0.add(&attended));
    check("norm1", h1.is_finite())?;
    let ff_pre = a.ff1.forward(p, &h1);
    let ff_act = ff_pre.map(gelu);
    let ff_out = a.ff2.forward(p, &ff_act);
    check("feed_forward", ff_out.is_finite())?;
    let (h2, norm2) = a.norm2.forward(p, &h1.add(&ff_out));
    check("norm2", h2.is_finite())?;

    let mut dropped = Matrix::zeros(1, cfg.d_model);
    for c in 0..cfg.d_model {
        let mean = (0..TOKEN_COUNT).map(|r| h2.get(r, c)).sum::<f64>() / TOKEN_COUNT as f64;
        dropped.set(0, c, mean * mask[c]);
    }

    let mut vo_params = [VOParams { mu: 0.0, theta: 0.0, psi: 0.0, delta: 0.0 }; OBSERVABLE_COUNT];
    let mut branches = Vec::with_capacity(OBSERVABLE_COUNT);
    for (o, br) in a.branches.iter().enumerate() {
        let pre1 = br.hidden1.forward(p, &dropped);
        let act1 = pre1.map(gelu);
        let pre2 = br.hidden2.forward(p, &act1);
        let act2 = pre2.map(gelu);
        let angles = br.angles.forward(p, &act2);
        let mu = sigmoid(br.mu.forward(p, &act2).data[0]);
        let vp = VOParams { mu, psi: angles.data[0], theta: angles.data[1], delta: angles.data[2] };
        check(&format!("branch{o}"), angles.is_finite() && mu.is_finite())?;
        let (vo, vo_grad) = assemble_vo_with_grad(&vp, o);
        check(&format!("vo{o}"), vo.is_finite())?;
        vo_params[o] = vp;
        branches.push(BranchTrace { pre1, act1, pre2, act2, mu, vo, vo_grad });
    }

    let u = control.unitary;
    let measurement: [[Mat2; OBSERVABLE_COUNT]; PREP_COUNT] =
        std::array::from_fn(|pi| std::array::from_fn(|o| measurement_operator(&u, pi, o)));
    let mut raw = Matrix::zeros(1, EXPECTATION_COUNT);
    for pi in 0..PREP_COUNT {
        for o in 0..OBSERVABLE_COUNT {
            raw.data[pi * OBSERVABLE_COUNT + o] = branches[o].vo.trace_mul(&measurement[pi][o]).re;
        }
    }
    check("expectation", raw.is_finite())?;
    let raw_flat: [f64; EXPECTATION_COUNT] = raw.data.as_slice().try_into().expect("18 expectations");

    let mut refine = Vec::with_capacity(Gate::COUNT);
    let mut refined_expectations = [ExpectationSet::zero(); Gate::COUNT];
    let mut unclamped = [0.0; Gate::COUNT];
    let mut fidelities = [0.0; Gate::COUNT];
    for (g, rf) in a.refiners.iter().enumerate() {
        let pre = rf.hidden.forward(p, &raw);
        let act = pre.map(gelu);
        let delta = rf.out.forward(p, &act);
        let refined: [f64; EXPECTATION_COUNT] = std::array::from_fn(|i| raw_flat[i] + delta.data[i]);
        check(&format!("refine[{}]", Gate::ALL[g].name()), refined.iter().all(|v| v.is_finite()))?;
        unclamped[g] = FidelityMap::for_gate(Gate::ALL[g]).evaluate(&refined);
        fidelities[g] = unclamped[g].clamp(0.0, 1.0);
        refined_expectations[g] = ExpectationSet::from_flat(&refined);
        refine.push(RefineTrace { pre, act });
    }

    let trace = ForwardTrace {
        generation: params.generation,
        input: *input,
        control: control.clone(),
        mask: mask.to_vec(),
        tokens,
        x0,
        q,
        k,
        v,
        head_weights,
        concat,
        norm1,
        h1,
        ff_pre,
        ff_act,
        norm2,
        dropped,
        branches,
        measurement,
        raw,
        refine,
        unclamped,
    };
    Ok(ForwardOutput {
        vo_params,
        raw_expectations: ExpectationSet::from_flat(&raw_flat),
        refined_expectations,
        fidelities,
        trace,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub params: Vec<f64>,
    pub input: [f64; INPUT_DIM],
}

/// Reverse pass for both parameter and input gradients.
///
/// The trace must come from [`forward`] (or carry a control Jacobian).
pub fn backward(params: &ModelParameters, trace: &ForwardTrace, loss_gradient: &[f64; Gate::COUNT]) -> Result<Gradients> {
    if trace.control.jacobian.is_none() {
        return Err(Error::Usage("input gradient needs a trace with a control Jacobian".into()));
    }
    let (params_grad, input) = reverse(params, trace, loss_gradient, true)?;
    Ok(Gradients { params: params_grad, input: input.expect("input gradient requested") })
}

/// Reverse pass for the parameter gradient only.
pub fn backward_params(params: &ModelParameters, trace: &ForwardTrace, loss_gradient: &[f64; Gate::COUNT]) -> Result<Vec<f64>> {
    Ok(reverse(params, trace, loss_gradient, false)?.0)
}

fn gelu_back(pre: &Matrix, d_act: &Matrix) -> Matrix {
    Matrix::from_vec(
        pre.rows,
        pre.cols,
        pre.data.iter().zip(&d_act.data).map(|(x, d)| d * gelu_grad(*x)).collect(),
    )
}

fn reverse(
    params: &ModelParameters,
    t: &ForwardTrace,
    loss_gradient: &[f64; Gate::COUNT],
    want_input: bool,
) -> Result<(Vec<f64>, Option<[f64; INPUT_DIM]>)> {
    if t.generation != params.generation {
        return Err(Error::Usage("trace does not match current parameters".into()));
    }
    let cfg = &params.config;
    let a = &params.arch;
    let p = params.values.as_slice();
    let mut grads = vec![0.0; p.len()];

    let mut d_raw = Matrix::zeros(1, EXPECTATION_COUNT);
    for (g, rf) in a.refiners.iter().enumerate() {
        let dl = loss_gradient[g];
        if dl == 0.0 || !(0.0..=1.0).contains(&t.unclamped[g]) {
            continue;
        }
        let w = &FidelityMap::for_gate(Gate::ALL[g]).weights;
        let d_refined = Matrix::from_vec(1, EXPECTATION_COUNT, w.iter().map(|wi| wi * dl).collect());
        let rt = &t.refine[g];
        let d_act = rf.out.backward(p, &rt.act, &d_refined, &mut grads);
        let d_pre = gelu_back(&rt.pre, &d_act);
        let d_in = rf.hidden.backward(p, &t.raw, &d_pre, &mut grads);
        for i in 0..EXPECTATION_COUNT {
            d_raw.data[i] += d_refined.data[i] + d_in.data[i];
        }
    }

    let mut d_u = Mat2::zero();
    let mut d_dropped = Matrix::zeros(1, cfg.d_model);
    for (o, br) in a.branches.iter().enumerate() {
        let bt = &t.branches[o];
        // d/d(μ, θ, ψ, Δ)
        let mut d_vp = [0.0; 4];
        for pi in 0..PREP_COUNT {
            let de = d_raw.data[pi * OBSERVABLE_COUNT + o];
            if de == 0.0 {
                continue;
            }
            let m = &t.measurement[pi][o];
            for (dv, grad) in d_vp.iter_mut().zip(&bt.vo_grad) {
                *dv += de * grad.trace_mul(m).re;
            }
            if want_input {
                d_u = d_u + expectation_unitary_adjoint(&bt.vo, &t.control.unitary, pi, o).scale_re(de);
            }
        }
        let d_angles = Matrix::from_vec(1, 3, vec![d_vp[2], d_vp[1], d_vp[3]]);
        let d_mu_pre = Matrix::from_vec(1, 1, vec![d_vp[0] * bt.mu * (1.0 - bt.mu)]);
        let mut d_act2 = br.angles.backward(p, &bt.act2, &d_angles, &mut grads);
        let d_act2_mu = br.mu.backward(p, &bt.act2, &d_mu_pre, &mut grads);
        d_act2.data.iter_mut().zip(&d_act2_mu.data).for_each(|(x, y)| *x += y);
        let d_pre2 = gelu_back(&bt.pre2, &d_act2);
        let d_act1 = br.hidden2.backward(p, &bt.act1, &d_pre2, &mut grads);
        let d_pre1 = gelu_back(&bt.pre1, &d_act1);
        let d_in = br.hidden1.backward(p, &t.dropped, &d_pre1, &mut grads);
        d_dropped.data.iter_mut().zip(&d_in.data).for_each(|(x, y)| *x += y);
    }

    let mut d_h2 = Matrix::zeros(TOKEN_COUNT, cfg.d_model);
    for c in 0..cfg.d_model {
        let d = d_dropped.data[c] * t.mask[c] / TOKEN_COUNT as f64;
        for r in 0..TOKEN_COUNT {
            d_h2.set(r, c, d);
        }
    }
    let d_sum2 = a.norm2.backward(p, &t.norm2, &d_h2, &mut grads);
    let d_ff_act = a.ff2.backward(p, &t.ff_act, &d_sum2, &mut grads);
    let d_ff_pre = gelu_back(&t.ff_pre, &d_ff_act);
    let d_h1 = d_sum2.add(&a.ff1.backward(p, &t.h1, &d_ff_pre, &mut grads));
    let d_sum1 = a.norm1.backward(p, &t.norm1, &d_h1, &mut grads);
    let d_concat = a.attn_out.backward(p, &t.concat, &d_sum1, &mut grads);

    let hd = cfg.head_dim();
    let scale = 1.0 / (hd as f64).sqrt();
    let mut d_q = Matrix::zeros(TOKEN_COUNT, cfg.d_model);
    let mut d_k = Matrix::zeros(TOKEN_COUNT, cfg.d_model);
    let mut d_v = Matrix::zeros(TOKEN_COUNT, cfg.d_model);
    for h in 0..cfg.n_heads {
        let (dq, dk, dv) = attention_backward(
            &t.q.columns(h * hd, hd),
            &t.k.columns(h * hd, hd),
            &t.v.columns(h * hd, hd),
            &t.head_weights[h],
            scale,
            &d_concat.columns(h * hd, hd),
        );
        d_q.set_columns(h * hd, &dq);
        d_k.set_columns(h * hd, &dk);
        d_v.set_columns(h * hd, &dv);
    }
    let d_x0 = d_sum1
        .add(&a.query.backward(p, &t.x0, &d_q, &mut grads))
        .add(&a.key.backward(p, &t.x0, &d_k, &mut grads))
        .add(&a.value.backward(p, &t.x0, &d_v, &mut grads));
    let d_tokens = a.projection.backward(p, &t.tokens, &d_x0, &mut grads);

    let input = if want_input {
        let jac = t.control.jacobian.as_ref().expect("checked by caller");
        let scale = NormalizedInput::amplitude_scale();
        let mut d_in: [f64; INPUT_DIM] = std::array::from_fn(|j| scale * jac[j].trace_mul(&d_u).re);
        for k in 0..TOKEN_COUNT {
            d_in[k] += d_tokens.get(k, 0);
            d_in[PULSE_COUNT + k] += d_tokens.get(k, 1);
        }
        Some(d_in)
    } else {
        None
    };
    Ok((grads, input))
}
