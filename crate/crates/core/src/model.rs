//! The network: a 10-layer 1-d CNN over the 256-point pattern, a single-head
//! attention block built from two raw layer taps, and per-case output heads.
//!
//! QUERY is the activation of the sixth conv layer; KEY and VALUE are both
//! the activation of the tenth. The attention weight is
//! `A = softmax(Q K^T)` over the KEY axis, and the Combination feeding the
//! heads is `tanh(A V)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{BnMode, BnStats, Graph, TensorId};

/// Which targets the model predicts: voltage only, voltage + mode, or
/// voltage + mode + rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Case {
    One,
    Two,
    Three,
}

impl Case {
    pub fn predicts_mode(self) -> bool {
        !matches!(self, Case::One)
    }

    pub fn predicts_rate(self) -> bool {
        matches!(self, Case::Three)
    }

    pub fn number(self) -> u8 {
        match self {
            Case::One => 1,
            Case::Two => 2,
            Case::Three => 3,
        }
    }
}

impl TryFrom<u8> for Case {
    type Error = String;
    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            1 => Ok(Case::One),
            2 => Ok(Case::Two),
            3 => Ok(Case::Three),
            _ => Err(format!("case {v} not in 1..=3")),
        }
    }
}

impl From<Case> for u8 {
    fn from(c: Case) -> u8 {
        c.number()
    }
}

/// Weights of the per-head losses in the combined training loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub voltage: f64,
    pub mode: f64,
    pub rate: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { voltage: 1.0, mode: 1.0, rate: 1.0 }
    }
}

/// Functional form of the voltage regression loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VoltageLoss {
    /// acosh(1 + e^2), the default.
    #[default]
    AcoshSquare,
    /// ln cosh(e), a smooth alternative.
    LogCosh,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_len: usize,
    pub n_conv_layers: usize,
    pub filters: usize,
    pub kernel: usize,
    /// 1-based conv layer whose output is batch-normalized before its relu.
    pub bn_layer_index: usize,
    /// 1-based conv layer whose activation is the attention QUERY.
    pub query_tap: usize,
    /// 1-based conv layer whose activation is both KEY and VALUE.
    pub kv_tap: usize,
    pub case: Case,
    pub mode_classes: usize,
    pub loss_weights: LossWeights,
    /// Optional hidden width between the flattened Combination and each head.
    pub head_hidden: Option<usize>,
    /// Scale attention logits by 1/sqrt(filters). Off by default: the
    /// attention weight is plain softmax(Q K^T).
    pub scaled_attention: bool,
    pub voltage_loss: VoltageLoss,
    pub bn_momentum: f64,
}

impl ModelConfig {
    /// Paper-shaped architecture for a given case.
    pub fn for_case(case: Case) -> Self {
        ModelConfig {
            input_len: 256,
            n_conv_layers: 10,
            filters: 32,
            kernel: 4,
            bn_layer_index: 7,
            query_tap: 6,
            kv_tap: 10,
            case,
            mode_classes: 4,
            loss_weights: LossWeights::default(),
            head_hidden: None,
            scaled_attention: false,
            voltage_loss: VoltageLoss::AcoshSquare,
            bn_momentum: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_len == 0 || self.filters == 0 || self.kernel == 0 || self.n_conv_layers == 0 {
            return Err(Error::Config("input_len, filters, kernel, n_conv_layers must be positive".into()));
        }
        if !(1 <= self.query_tap && self.query_tap < self.kv_tap && self.kv_tap <= self.n_conv_layers)
        {
            return Err(Error::Config(format!(
                "taps must satisfy 1 <= query_tap ({}) < kv_tap ({}) <= n_conv_layers ({})",
                self.query_tap, self.kv_tap, self.n_conv_layers
            )));
        }
        if !(1 <= self.bn_layer_index && self.bn_layer_index <= self.n_conv_layers) {
            return Err(Error::Config(format!(
                "bn_layer_index {} outside 1..={}",
                self.bn_layer_index, self.n_conv_layers
            )));
        }
        if self.mode_classes < 2 {
            return Err(Error::Config(format!("mode_classes {} must be >= 2", self.mode_classes)));
        }
        if !(0.0..=1.0).contains(&self.bn_momentum) {
            return Err(Error::Config(format!("bn_momentum {} outside [0, 1]", self.bn_momentum)));
        }
        Ok(())
    }

    /// Total trainable parameter count, a pure function of the config.
    pub fn parameter_count(&self) -> usize {
        let f = self.filters;
        let mut n = self.kernel * f + f; // conv1 (cin = 1)
        n += (self.n_conv_layers - 1) * (self.kernel * f * f + f);
        n += 2 * f; // batchnorm gamma/beta
        let flat = self.input_len * f;
        let mut head = |out: usize| {
            n += match self.head_hidden {
                Some(h) => flat * h + h + h * out + out,
                None => flat * out + out,
            };
        };
        head(1);
        if self.case.predicts_mode() {
            head(self.mode_classes);
        }
        if self.case.predicts_rate() {
            head(2);
        }
        n
    }
}

/// One named parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Dense stages of one output head: `(weight index, bias index)` per stage.
#[derive(Debug, Clone)]
struct HeadIdx {
    stages: Vec<(usize, usize)>,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    params: Vec<Param>,
    conv_idx: Vec<(usize, usize)>,
    bn_idx: (usize, usize),
    voltage_head: HeadIdx,
    mode_head: Option<HeadIdx>,
    rate_head: Option<HeadIdx>,
    pub bn_stats: BnStats,
}

/// Per-sample attention tensors captured during a forward pass.
pub struct AttentionArtifacts {
    pub q: TensorId,
    pub k: TensorId,
    pub v: TensorId,
    /// The attention weight, `[B, L, L]`, rows indexed by QUERY position.
    pub a: TensorId,
    /// tanh(A V), `[B, L, C]`.
    pub combined: TensorId,
}

/// Head outputs present for the model's case.
pub struct HeadOutputs {
    /// `[B]`
    pub voltage: TensorId,
    /// `[B, mode_classes]`
    pub mode_logits: Option<TensorId>,
    /// `[B, 2]`
    pub rate_logits: Option<TensorId>,
}

pub struct ForwardOutputs {
    pub heads: HeadOutputs,
    pub artifacts: AttentionArtifacts,
    /// Graph leaves of the model parameters, in `Model::params` order.
    pub param_ids: Vec<TensorId>,
}

/// Targets for one batch, inserted by the caller as graph leaves.
pub struct BatchTargets {
    pub voltage: TensorId,
    pub mode_onehot: Option<TensorId>,
    pub rate_onehot: Option<TensorId>,
}

/// Scalar values of the per-head loss terms.
#[derive(Debug, Clone, Copy)]
pub struct LossBreakdown {
    pub voltage: f64,
    pub mode: Option<f64>,
    pub rate: Option<f64>,
}

impl Model {
    /// Initialize a model: Kaiming-style uniform fan-in weights, zero biases,
    /// batchnorm gamma 1 / beta 0. Deterministic in the seed.
    pub fn build(config: ModelConfig, seed: u64) -> Result<Model> {
        use rand::{Rng, SeedableRng};
        config.validate()?;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let f = config.filters;
        let mut params = Vec::new();

        let mut init = |name: String, shape: Vec<usize>, fan_in: usize, params: &mut Vec<Param>| {
            let bound = (6.0 / fan_in as f64).sqrt();
            let n: usize = shape.iter().product();
            let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
            params.push(Param { name, shape, data });
            params.len() - 1
        };
        let zeros = |name: String, shape: Vec<usize>, fill: f64, params: &mut Vec<Param>| {
            let n: usize = shape.iter().product();
            params.push(Param { name, shape, data: vec![fill; n] });
            params.len() - 1
        };

        let mut conv_idx = Vec::with_capacity(config.n_conv_layers);
        for li in 0..config.n_conv_layers {
            let cin = if li == 0 { 1 } else { f };
            let w = init(
                format!("conv{}.w", li + 1),
                vec![config.kernel, cin, f],
                config.kernel * cin,
                &mut params,
            );
            let b = zeros(format!("conv{}.b", li + 1), vec![f], 0.0, &mut params);
            conv_idx.push((w, b));
        }
        let gamma = zeros("bn.gamma".into(), vec![f], 1.0, &mut params);
        let beta = zeros("bn.beta".into(), vec![f], 0.0, &mut params);

        let flat = config.input_len * f;
        let mut head = |name: &str, out: usize, params: &mut Vec<Param>| -> HeadIdx {
            let mut stages = Vec::new();
            match config.head_hidden {
                Some(h) => {
                    let w1 = init(format!("head.{name}.w1"), vec![flat, h], flat, params);
                    let b1 = zeros(format!("head.{name}.b1"), vec![h], 0.0, params);
                    let w2 = init(format!("head.{name}.w2"), vec![h, out], h, params);
                    let b2 = zeros(format!("head.{name}.b2"), vec![out], 0.0, params);
                    stages.push((w1, b1));
                    stages.push((w2, b2));
                }
                None => {
                    let w = init(format!("head.{name}.w"), vec![flat, out], flat, params);
                    let b = zeros(format!("head.{name}.b"), vec![out], 0.0, params);
                    stages.push((w, b));
                }
            }
            HeadIdx { stages }
        };

        let voltage_head = head("voltage", 1, &mut params);
        let mode_head = config.case.predicts_mode().then(|| head("mode", config.mode_classes, &mut params));
        let rate_head = config.case.predicts_rate().then(|| head("rate", 2, &mut params));

        let bn_stats = BnStats::new(f);
        Ok(Model {
            config,
            params,
            conv_idx,
            bn_idx: (gamma, beta),
            voltage_head,
            mode_head,
            rate_head,
            bn_stats,
        })
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    /// Forward pass in eval mode or with frozen running statistics; never
    /// mutates the model. Parameters are inserted without gradient tracking.
    pub fn forward(&self, g: &mut Graph, x: TensorId, bn_mode: BnMode) -> Result<ForwardOutputs> {
        let mut stats = self.bn_stats.clone();
        let ids = self.insert_params(g, false)?;
        forward_from_ids(g, &self.config, &self.index_map(), &ids, x, bn_mode, &mut stats)
    }

    /// Training forward pass: parameters require gradients and the batchnorm
    /// running statistics are updated in place.
    pub fn forward_train(&mut self, g: &mut Graph, x: TensorId) -> Result<ForwardOutputs> {
        let ids = self.insert_params(g, true)?;
        let mut stats = std::mem::replace(&mut self.bn_stats, BnStats::new(0));
        let r = forward_from_ids(
            g,
            &self.config,
            &self.index_map(),
            &ids,
            x,
            BnMode::Train,
            &mut stats,
        );
        self.bn_stats = stats;
        r
    }

    fn insert_params(&self, g: &mut Graph, requires_grad: bool) -> Result<Vec<TensorId>> {
        self.params
            .iter()
            .map(|p| g.leaf(p.data.clone(), &p.shape, requires_grad))
            .collect()
    }

    fn index_map(&self) -> IndexMap {
        IndexMap {
            conv: self.conv_idx.clone(),
            bn: self.bn_idx,
            voltage: self.voltage_head.stages.clone(),
            mode: self.mode_head.as_ref().map(|h| h.stages.clone()),
            rate: self.rate_head.as_ref().map(|h| h.stages.clone()),
        }
    }

    /// Find a parameter by name (checkpoint loading).
    pub fn param_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.params.iter_mut().find(|p| p.name == name)
    }

    pub(crate) fn layout(&self) -> IndexMap {
        self.index_map()
    }
}

/// Parameter-index layout of the architecture, independent of storage.
pub(crate) struct IndexMap {
    conv: Vec<(usize, usize)>,
    bn: (usize, usize),
    voltage: Vec<(usize, usize)>,
    mode: Option<Vec<(usize, usize)>>,
    rate: Option<Vec<(usize, usize)>>,
}

/// The attention block: logits `S = Q K^T` contracted over channels
/// (optionally scaled by 1/sqrt(C)), attention weight `A = softmax(S)` over
/// the KEY axis, and Combination `tanh(A V)`.
pub fn attention(
    g: &mut Graph,
    q: TensorId,
    k: TensorId,
    v: TensorId,
    scaled: bool,
) -> Result<(TensorId, TensorId)> {
    let qs = g.shape(q).to_vec();
    if g.shape(k) != qs.as_slice() || g.shape(v) != qs.as_slice() {
        return Err(Error::Shape(format!(
            "attention: Q {:?}, K {:?}, V {:?} must share one [B, L, C] shape",
            g.shape(q),
            g.shape(k),
            g.shape(v)
        )));
    }
    if qs.len() != 3 {
        return Err(Error::Shape(format!("attention expects [B, L, C], got {qs:?}")));
    }
    let kt = g.transpose_last2(k)?;
    let mut scores = g.matmul(q, kt)?;
    if scaled {
        let c = qs[2] as f64;
        scores = g.scale(scores, 1.0 / c.sqrt())?;
    }
    let a = g.softmax(scores, 2)?;
    let av = g.matmul(a, v)?;
    let combined = g.tanh(av)?;
    Ok((a, combined))
}

pub(crate) fn forward_from_ids(
    g: &mut Graph,
    config: &ModelConfig,
    idx: &IndexMap,
    ids: &[TensorId],
    x: TensorId,
    bn_mode: BnMode,
    stats: &mut BnStats,
) -> Result<ForwardOutputs> {
    let xs = g.shape(x).to_vec();
    if xs.len() != 3 || xs[1] != config.input_len || xs[2] != 1 {
        return Err(Error::Shape(format!(
            "model input must be [B, {}, 1], got {xs:?}",
            config.input_len
        )));
    }
    let bsz = xs[0];

    let mut h = x;
    let mut q = None;
    let mut kv = None;
    for (li, &(wi, bi)) in idx.conv.iter().enumerate() {
        h = g.conv1d(h, ids[wi], ids[bi])?;
        if li + 1 == config.bn_layer_index {
            h = g.batchnorm1d(h, ids[idx.bn.0], ids[idx.bn.1], bn_mode, stats, config.bn_momentum)?;
        }
        h = g.relu(h)?;
        if li + 1 == config.query_tap {
            q = Some(h);
        }
        if li + 1 == config.kv_tap {
            kv = Some(h);
        }
    }
    let q = q.expect("query tap validated against layer count");
    let kv = kv.expect("kv tap validated against layer count");

    let (a, combined) = attention(g, q, kv, kv, config.scaled_attention)?;

    let flat = g.reshape(combined, &[bsz, config.input_len * config.filters])?;
    let mut run_head = |g: &mut Graph, stages: &[(usize, usize)]| -> Result<TensorId> {
        let mut h = flat;
        for (si, &(wi, bi)) in stages.iter().enumerate() {
            h = g.dense(h, ids[wi], ids[bi])?;
            if si + 1 < stages.len() {
                h = g.relu(h)?;
            }
        }
        Ok(h)
    };

    let v_out = run_head(g, &idx.voltage)?;
    let voltage = g.reshape(v_out, &[bsz])?;
    let mode_logits = match &idx.mode {
        Some(stages) => Some(run_head(g, stages)?),
        None => None,
    };
    let rate_logits = match &idx.rate {
        Some(stages) => Some(run_head(g, stages)?),
        None => None,
    };

    // Non-finite values anywhere upstream surface in the combination or the
    // head outputs, which are cheap to scan.
    let check = |g: &Graph, id: TensorId, what: &str| -> Result<()> {
        if g.data(id).iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("{what} contains a non-finite value")));
        }
        Ok(())
    };
    check(g, combined, "attention combination")?;
    check(g, voltage, "voltage head output")?;
    if let Some(m) = mode_logits {
        check(g, m, "mode head output")?;
    }
    if let Some(r) = rate_logits {
        check(g, r, "rate head output")?;
    }

    Ok(ForwardOutputs {
        heads: HeadOutputs { voltage, mode_logits, rate_logits },
        artifacts: AttentionArtifacts { q, k: kv, v: kv, a, combined },
        param_ids: ids.to_vec(),
    })
}

/// Combined per-case loss: `w_v * voltage_loss + w_m * ce(mode) + w_r *
/// ce(rate)` over whichever heads the case trains.
pub fn case_loss(
    g: &mut Graph,
    outputs: &HeadOutputs,
    targets: &BatchTargets,
    config: &ModelConfig,
) -> Result<(TensorId, LossBreakdown)> {
    let case = config.case;
    if case.predicts_mode() != outputs.mode_logits.is_some()
        || case.predicts_mode() != targets.mode_onehot.is_some()
    {
        return Err(Error::Arity(format!(
            "case {} expects mode head and targets {}",
            case.number(),
            if case.predicts_mode() { "present" } else { "absent" }
        )));
    }
    if case.predicts_rate() != outputs.rate_logits.is_some()
        || case.predicts_rate() != targets.rate_onehot.is_some()
    {
        return Err(Error::Arity(format!(
            "case {} expects rate head and targets {}",
            case.number(),
            if case.predicts_rate() { "present" } else { "absent" }
        )));
    }

    let w = config.loss_weights;
    let v_loss = match config.voltage_loss {
        VoltageLoss::AcoshSquare => g.acosh_loss(outputs.voltage, targets.voltage)?,
        VoltageLoss::LogCosh => g.log_cosh_loss(outputs.voltage, targets.voltage)?,
    };
    let mut terms = vec![v_loss];
    let mut weights = vec![w.voltage];
    let mut breakdown =
        LossBreakdown { voltage: g.value(v_loss)?, mode: None, rate: None };

    if let (Some(logits), Some(onehot)) = (outputs.mode_logits, targets.mode_onehot) {
        let l = g.cross_entropy(logits, onehot)?;
        breakdown.mode = Some(g.value(l)?);
        terms.push(l);
        weights.push(w.mode);
    }
    if let (Some(logits), Some(onehot)) = (outputs.rate_logits, targets.rate_onehot) {
        let l = g.cross_entropy(logits, onehot)?;
        breakdown.rate = Some(g.value(l)?);
        terms.push(l);
        weights.push(w.rate);
    }
    let total = g.weighted_sum_loss(&terms, &weights)?;
    Ok((total, breakdown))
}
