//! The fixed network family: stacked LSTM layers over the channel axis,
//! a flatten, one rectified dense layer, and a one-unit head.
//!
//! An input window is an `n_steps x step_input` matrix read as a sequence of
//! `n_steps` vectors (one per selected channel, each holding the window's
//! `n_w` cycle values). Two 4-layer LSTM stacks run in series over that
//! sequence, the final hidden sequence is flattened step-major, and a dense
//! rectifier layer feeds a scalar head: logistic for health-state
//! classification, rectifier for remaining-life regression.
//!
//! Parameters live in one flat `f64` buffer. [`ParamLayout`] records where
//! each weight block sits, which keeps the optimizer, checkpointing, and
//! finite-difference checks trivial. Per LSTM layer the blocks are: input
//! weights `W_x` (`4h x in`), recurrent weights `W_h` (`4h x h`), bias
//! (`4h`), with gate rows ordered input, forget, cell, output.

use rand::Rng;

use super::loss::LossKind;
use super::matrix::{dot, matvec_add, matvec_t_add, outer_add, Matrix};
use crate::error::{Error, Result};

/// Output head variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Head {
    /// Logistic head in (0,1): health-state probability of "unhealthy".
    Hs,
    /// Rectifier head >= 0: remaining-life fraction.
    Rul,
}

/// Architecture description; all dimensions explicit so tiny test models and
/// the full-size network share one code path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelSpec {
    pub head: Head,
    /// Sequence length = number of selected channels.
    pub n_steps: usize,
    /// Per-step input width = window length in cycles.
    pub step_input: usize,
    /// LSTM hidden size.
    pub hidden: usize,
    /// LSTM layers per stack.
    pub layers_per_stack: usize,
    /// Number of stacks composed in series.
    pub num_stacks: usize,
    /// Width of the rectified dense layer.
    pub dense_units: usize,
}

impl ModelSpec {
    /// The standard architecture both stages share: two 4-layer stacks of
    /// hidden size 50 and a 128-unit dense layer, sized for `n_features`
    /// channels of `n_w` cycles each.
    pub fn standard(head: Head, n_features: usize, n_w: usize) -> Self {
        ModelSpec {
            head,
            n_steps: n_features,
            step_input: n_w,
            hidden: 50,
            layers_per_stack: 4,
            num_stacks: 2,
            dense_units: 128,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("n_steps", self.n_steps),
            ("step_input", self.step_input),
            ("hidden", self.hidden),
            ("layers_per_stack", self.layers_per_stack),
            ("num_stacks", self.num_stacks),
            ("dense_units", self.dense_units),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("model spec: {name} must be >= 1")));
            }
        }
        Ok(())
    }

    pub fn total_lstm_layers(&self) -> usize {
        self.layers_per_stack * self.num_stacks
    }

    /// Flattened width handed to the dense layer.
    pub fn flat_len(&self) -> usize {
        self.n_steps * self.hidden
    }

    pub fn layout(&self) -> ParamLayout {
        ParamLayout::new(self)
    }
}

/// Offsets of every weight block inside the flat parameter buffer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamLayout {
    pub lstm: Vec<LstmLayerLayout>,
    pub dense_w: usize,
    pub dense_b: usize,
    pub head_w: usize,
    pub head_b: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LstmLayerLayout {
    /// Input size of this layer (step_input for the first, hidden after).
    pub in_size: usize,
    /// Offset of `W_x`, row-major `4*hidden x in_size`.
    pub wx: usize,
    /// Offset of `W_h`, row-major `4*hidden x hidden`.
    pub wh: usize,
    /// Offset of the gate bias, length `4*hidden`.
    pub b: usize,
}

impl ParamLayout {
    fn new(spec: &ModelSpec) -> Self {
        let h = spec.hidden;
        let mut off = 0usize;
        let mut lstm = Vec::with_capacity(spec.total_lstm_layers());
        for layer in 0..spec.total_lstm_layers() {
            let in_size = if layer == 0 { spec.step_input } else { h };
            let wx = off;
            off += 4 * h * in_size;
            let wh = off;
            off += 4 * h * h;
            let b = off;
            off += 4 * h;
            lstm.push(LstmLayerLayout { in_size, wx, wh, b });
        }
        let dense_w = off;
        off += spec.dense_units * spec.flat_len();
        let dense_b = off;
        off += spec.dense_units;
        let head_w = off;
        off += spec.dense_units;
        let head_b = off;
        off += 1;
        ParamLayout {
            lstm,
            dense_w,
            dense_b,
            head_w,
            head_b,
            total: off,
        }
    }
}

/// Flat parameter buffer matching a [`ParamLayout`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    values: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(spec: &ModelSpec) -> Self {
        ModelParams {
            values: vec![0.0; spec.layout().total],
        }
    }

    pub fn from_values(spec: &ModelSpec, values: Vec<f64>) -> Result<Self> {
        let expect = spec.layout().total;
        if values.len() != expect {
            return Err(Error::Shape(format!(
                "parameter buffer holds {} values, model needs {expect}",
                values.len()
            )));
        }
        Ok(ModelParams { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Bitwise equality, the right notion for determinism checks.
    pub fn bits_eq(&self, other: &ModelParams) -> bool {
        self.values.len() == other.values.len()
            && self
                .values
                .iter()
                .zip(&other.values)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// Draws initial parameters: weights uniform in +-1/sqrt(hidden), biases
/// zero except forget-gate biases at 1.0 (keeps early memory alive).
pub fn init_params(spec: &ModelSpec, rng: &mut impl Rng) -> ModelParams {
    let layout = spec.layout();
    let h = spec.hidden;
    let bound = 1.0 / (h as f64).sqrt();
    let mut values = vec![0.0; layout.total];
    for ll in &layout.lstm {
        for v in &mut values[ll.wx..ll.wx + 4 * h * ll.in_size] {
            *v = rng.gen_range(-bound..bound);
        }
        for v in &mut values[ll.wh..ll.wh + 4 * h * h] {
            *v = rng.gen_range(-bound..bound);
        }
        // Bias stays zero except the forget gate (rows h..2h).
        for v in &mut values[ll.b + h..ll.b + 2 * h] {
            *v = 1.0;
        }
    }
    for v in &mut values[layout.dense_w..layout.dense_w + spec.dense_units * spec.flat_len()] {
        *v = rng.gen_range(-bound..bound);
    }
    for v in &mut values[layout.head_w..layout.head_w + spec.dense_units] {
        *v = rng.gen_range(-bound..bound);
    }
    ModelParams { values }
}

/// Per-layer activation record, step-major (`step * hidden + unit`).
#[derive(Debug, Clone)]
struct LayerCache {
    /// Input, forget, cell-candidate, output gate activations.
    i: Vec<f64>,
    f: Vec<f64>,
    g: Vec<f64>,
    o: Vec<f64>,
    /// Cell state and its tanh.
    c: Vec<f64>,
    tc: Vec<f64>,
    /// Hidden state (this layer's output sequence).
    h: Vec<f64>,
}

impl LayerCache {
    fn new(n: usize) -> Self {
        LayerCache {
            i: vec![0.0; n],
            f: vec![0.0; n],
            g: vec![0.0; n],
            o: vec![0.0; n],
            c: vec![0.0; n],
            tc: vec![0.0; n],
            h: vec![0.0; n],
        }
    }
}

/// Everything backward needs from a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    spec: ModelSpec,
    input: Matrix,
    layers: Vec<LayerCache>,
    dense_z: Vec<f64>,
    dense_a: Vec<f64>,
    head_z: f64,
    output: f64,
}

impl ForwardCache {
    pub fn output(&self) -> f64 {
        self.output
    }

    /// Rectified dense activations (diagnostic / kink-margin checks).
    pub fn dense_preactivations(&self) -> &[f64] {
        &self.dense_z
    }

    pub fn head_preactivation(&self) -> f64 {
        self.head_z
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// tanh as `expm1(2|x|) / (expm1(2|x|) + 2)` with the sign restored.
/// Algebraically identical and accurate to a couple of ulps, but one
/// `exp_m1` call costs less than half of libm's `tanh`, and the forward
/// pass spends a large share of its time in gate nonlinearities. The
/// `expm1` form stays fully precise near zero; past |x| = 20 tanh rounds
/// to ±1 in f64 anyway, which also dodges `exp_m1` overflow.
fn tanh(x: f64) -> f64 {
    let a = x.abs();
    if a > 20.0 {
        return 1.0f64.copysign(x);
    }
    let e = (2.0 * a).exp_m1();
    (e / (e + 2.0)).copysign(x)
}

impl ModelSpec {
    /// Runs the network on one window. Returns the scalar prediction and the
    /// activation cache needed for an exact backward pass.
    pub fn forward(&self, params: &ModelParams, input: &Matrix) -> Result<(f64, ForwardCache)> {
        self.validate()?;
        if input.rows() != self.n_steps || input.cols() != self.step_input {
            return Err(Error::Shape(format!(
                "input is {}x{}, model expects {}x{}",
                input.rows(),
                input.cols(),
                self.n_steps,
                self.step_input
            )));
        }
        input
            .check_finite()
            .map_err(|_| Error::Numeric("non-finite value in model input".into()))?;
        let layout = self.layout();
        if params.len() != layout.total {
            return Err(Error::Shape(format!(
                "parameter buffer holds {} values, model needs {}",
                params.len(),
                layout.total
            )));
        }

        let h = self.hidden;
        let p = params.values();
        let mut layers: Vec<LayerCache> = Vec::with_capacity(self.total_lstm_layers());
        let mut z = vec![0.0; 4 * h];
        for (layer, ll) in layout.lstm.iter().enumerate() {
            let mut cache = LayerCache::new(self.n_steps * h);
            let wx = &p[ll.wx..ll.wx + 4 * h * ll.in_size];
            let wh = &p[ll.wh..ll.wh + 4 * h * h];
            let b = &p[ll.b..ll.b + 4 * h];
            for t in 0..self.n_steps {
                let x_t: &[f64] = if layer == 0 {
                    input.row(t)
                } else {
                    &layers[layer - 1].h[t * h..(t + 1) * h]
                };
                z.copy_from_slice(b);
                matvec_add(wx, 4 * h, ll.in_size, x_t, &mut z);
                if t > 0 {
                    matvec_add(wh, 4 * h, h, &cache.h[(t - 1) * h..t * h], &mut z);
                }
                let s = t * h;
                for u in 0..h {
                    let iu = sigmoid(z[u]);
                    let fu = sigmoid(z[h + u]);
                    let gu = tanh(z[2 * h + u]);
                    let ou = sigmoid(z[3 * h + u]);
                    let c_prev = if t > 0 { cache.c[s - h + u] } else { 0.0 };
                    let cu = fu * c_prev + iu * gu;
                    let tcu = tanh(cu);
                    cache.i[s + u] = iu;
                    cache.f[s + u] = fu;
                    cache.g[s + u] = gu;
                    cache.o[s + u] = ou;
                    cache.c[s + u] = cu;
                    cache.tc[s + u] = tcu;
                    cache.h[s + u] = ou * tcu;
                }
            }
            layers.push(cache);
        }

        // Flatten the final hidden sequence step-major, then dense + head.
        let flat = &layers[self.total_lstm_layers() - 1].h;
        let dw = &p[layout.dense_w..layout.dense_w + self.dense_units * self.flat_len()];
        let db = &p[layout.dense_b..layout.dense_b + self.dense_units];
        let mut dense_z = db.to_vec();
        matvec_add(dw, self.dense_units, self.flat_len(), flat, &mut dense_z);
        let dense_a: Vec<f64> = dense_z.iter().map(|v| v.max(0.0)).collect();
        let hw = &p[layout.head_w..layout.head_w + self.dense_units];
        let head_z = dot(hw, &dense_a) + p[layout.head_b];
        let output = match self.head {
            Head::Hs => sigmoid(head_z),
            Head::Rul => head_z.max(0.0),
        };

        let cache = ForwardCache {
            spec: self.clone(),
            input: input.clone(),
            layers,
            dense_z,
            dense_a,
            head_z,
            output,
        };
        check_cache_finite(&cache)?;
        Ok((output, cache))
    }

    /// Exact gradients of the scalar loss w.r.t. every parameter, given the
    /// loss gradient at the model output.
    pub fn backward(
        &self,
        params: &ModelParams,
        cache: &ForwardCache,
        dloss_dy: f64,
    ) -> Result<Vec<f64>> {
        let mut grads = vec![0.0; self.layout().total];
        self.backward_into(params, cache, dloss_dy, &mut grads)?;
        Ok(grads)
    }

    /// [`Self::backward`] writing into a caller-owned buffer. The training
    /// loop reuses one buffer per batch slot; with ~190k parameters a fresh
    /// allocation per sample would dominate the backward pass itself.
    pub fn backward_into(
        &self,
        params: &ModelParams,
        cache: &ForwardCache,
        dloss_dy: f64,
        grads: &mut [f64],
    ) -> Result<()> {
        if cache.spec != *self {
            return Err(Error::Shape(
                "forward cache built for a different model spec".into(),
            ));
        }
        let layout = self.layout();
        if params.len() != layout.total {
            return Err(Error::Shape(format!(
                "parameter buffer holds {} values, model needs {}",
                params.len(),
                layout.total
            )));
        }
        if grads.len() != layout.total {
            return Err(Error::Shape(format!(
                "gradient buffer holds {} values, model needs {}",
                grads.len(),
                layout.total
            )));
        }

        let h = self.hidden;
        let p = params.values();
        grads.fill(0.0);

        // Head.
        let dy_dz = match self.head {
            Head::Hs => cache.output * (1.0 - cache.output),
            Head::Rul => {
                if cache.head_z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        };
        let dz_head = dloss_dy * dy_dz;
        let hw = &p[layout.head_w..layout.head_w + self.dense_units];
        let mut da = vec![0.0; self.dense_units];
        for j in 0..self.dense_units {
            grads[layout.head_w + j] = dz_head * cache.dense_a[j];
            da[j] = dz_head * hw[j];
        }
        grads[layout.head_b] = dz_head;

        // Dense rectifier layer.
        let flat_len = self.flat_len();
        let flat = &cache.layers[self.total_lstm_layers() - 1].h;
        let mut dz_dense = vec![0.0; self.dense_units];
        for j in 0..self.dense_units {
            dz_dense[j] = if cache.dense_z[j] > 0.0 { da[j] } else { 0.0 };
        }
        outer_add(
            &mut grads[layout.dense_w..layout.dense_w + self.dense_units * flat_len],
            self.dense_units,
            flat_len,
            &dz_dense,
            flat,
        );
        grads[layout.dense_b..layout.dense_b + self.dense_units].copy_from_slice(&dz_dense);
        let dw = &p[layout.dense_w..layout.dense_w + self.dense_units * flat_len];
        let mut dh_above = vec![0.0; flat_len];
        matvec_t_add(dw, self.dense_units, flat_len, &dz_dense, &mut dh_above);

        // LSTM stacks, top layer down, each unrolled backward over steps.
        let mut dz = vec![0.0; 4 * h];
        for layer in (0..self.total_lstm_layers()).rev() {
            let ll = &layout.lstm[layer];
            let lc = &cache.layers[layer];
            let wx = &p[ll.wx..ll.wx + 4 * h * ll.in_size];
            let wh = &p[ll.wh..ll.wh + 4 * h * h];
            let mut dh_below = vec![0.0; self.n_steps * ll.in_size];
            let mut dh_rec = vec![0.0; h];
            let mut dc_rec = vec![0.0; h];
            for t in (0..self.n_steps).rev() {
                let s = t * h;
                for u in 0..h {
                    let dh = dh_above[s + u] + dh_rec[u];
                    let (iu, fu, gu, ou) =
                        (lc.i[s + u], lc.f[s + u], lc.g[s + u], lc.o[s + u]);
                    let tcu = lc.tc[s + u];
                    let dc = dc_rec[u] + dh * ou * (1.0 - tcu * tcu);
                    let c_prev = if t > 0 { lc.c[s - h + u] } else { 0.0 };
                    dz[u] = dc * gu * iu * (1.0 - iu);
                    dz[h + u] = dc * c_prev * fu * (1.0 - fu);
                    dz[2 * h + u] = dc * iu * (1.0 - gu * gu);
                    dz[3 * h + u] = dh * tcu * ou * (1.0 - ou);
                    dc_rec[u] = dc * fu;
                }
                let x_t: &[f64] = if layer == 0 {
                    cache.input.row(t)
                } else {
                    &cache.layers[layer - 1].h[t * ll.in_size..(t + 1) * ll.in_size]
                };
                outer_add(
                    &mut grads[ll.wx..ll.wx + 4 * h * ll.in_size],
                    4 * h,
                    ll.in_size,
                    &dz,
                    x_t,
                );
                if t > 0 {
                    let h_prev = &lc.h[s - h..s];
                    outer_add(&mut grads[ll.wh..ll.wh + 4 * h * h], 4 * h, h, &dz, h_prev);
                    dh_rec.iter_mut().for_each(|v| *v = 0.0);
                    matvec_t_add(wh, 4 * h, h, &dz, &mut dh_rec);
                } else {
                    dh_rec.iter_mut().for_each(|v| *v = 0.0);
                }
                for u in 0..4 * h {
                    grads[ll.b + u] += dz[u];
                }
                // Input gradients feed the layer below; the raw window needs none.
                if layer > 0 {
                    matvec_t_add(
                        wx,
                        4 * h,
                        ll.in_size,
                        &dz,
                        &mut dh_below[t * ll.in_size..(t + 1) * ll.in_size],
                    );
                }
            }
            dh_above = dh_below;
        }

        if let Some(i) = grads.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite gradient at parameter {i}"
            )));
        }
        Ok(())
    }
}

fn check_cache_finite(cache: &ForwardCache) -> Result<()> {
    // Gate activations are bounded by construction; NaNs anywhere surface in
    // the cell/hidden states, so scanning c and h covers the stacks.
    for (layer, lc) in cache.layers.iter().enumerate() {
        if lc.c.iter().chain(&lc.h).any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite state in recurrent layer {layer}"
            )));
        }
    }
    if cache.dense_z.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite dense pre-activation".into()));
    }
    if !cache.head_z.is_finite() || !cache.output.is_finite() {
        return Err(Error::Numeric("non-finite model output".into()));
    }
    Ok(())
}

/// Result of comparing analytic gradients against central differences.
#[derive(Debug, Clone, Copy)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_param: usize,
    pub n_params: usize,
}

/// Central-difference comparison of `backward` against the loss landscape,
/// parameter by parameter. Relative error uses max(|analytic|, |numeric|) as
/// the scale, falling back to absolute error below 1e-6.
pub fn finite_difference_check(
    spec: &ModelSpec,
    params: &ModelParams,
    input: &Matrix,
    target: f64,
    loss: LossKind,
    step: f64,
) -> Result<GradCheckReport> {
    let (y, cache) = spec.forward(params, input)?;
    let (_, dloss_dy) = loss.per_sample(y, target)?;
    let analytic = spec.backward(params, &cache, dloss_dy)?;

    let mut perturbed = params.clone();
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_param: 0,
        n_params: analytic.len(),
    };
    for idx in 0..analytic.len() {
        let orig = perturbed.values()[idx];
        perturbed.values_mut()[idx] = orig + step;
        let (y_plus, _) = spec.forward(&perturbed, input)?;
        let (l_plus, _) = loss.per_sample(y_plus, target)?;
        perturbed.values_mut()[idx] = orig - step;
        let (y_minus, _) = spec.forward(&perturbed, input)?;
        let (l_minus, _) = loss.per_sample(y_minus, target)?;
        perturbed.values_mut()[idx] = orig;

        let numeric = (l_plus - l_minus) / (2.0 * step);
        // Below ~1e-6 the difference quotient is dominated by f64
        // cancellation noise (~1e-10 for O(1) losses), so relative error is
        // meaningless there; compare absolutely instead.
        let scale = analytic[idx].abs().max(numeric.abs());
        let err = if scale > 1e-6 {
            (analytic[idx] - numeric).abs() / scale
        } else {
            (analytic[idx] - numeric).abs()
        };
        if err > report.max_rel_err {
            report.max_rel_err = err;
            report.worst_param = idx;
        }
    }
    Ok(report)
}

/// Draws a random (params, input, target) case whose rectifier
/// pre-activations all clear `margin`. Central differences straddle the
/// rectifier kink when a pre-activation sits within the step size of zero,
/// so gradient checks resample until the landscape is locally smooth.
pub fn sample_gradient_check_case(
    spec: &ModelSpec,
    rng: &mut impl Rng,
    margin: f64,
) -> Result<(ModelParams, Matrix, f64)> {
    for _ in 0..500 {
        let params = init_params(spec, rng);
        let input = Matrix::from_fn(spec.n_steps, spec.step_input, |_, _| {
            rng.gen_range(-1.0..1.0)
        });
        let target = match spec.head {
            Head::Hs => {
                if rng.gen_bool(0.5) {
                    1.0
                } else {
                    0.0
                }
            }
            Head::Rul => rng.gen_range(0.05..0.95),
        };
        let (_, cache) = spec.forward(&params, &input)?;
        let dense_ok = cache.dense_z.iter().all(|z| z.abs() > margin);
        let head_ok = match spec.head {
            Head::Hs => true,
            Head::Rul => cache.head_z.abs() > margin,
        };
        if dense_ok && head_ok {
            return Ok((params, input, target));
        }
    }
    Err(Error::Numeric(
        "could not sample a kink-free gradient-check case in 500 draws".into(),
    ))
}
