//! Minimal trainable encoder-decoder with a single cross-attention head.
//! The forward pass exposes encoder states, teacher-forced decoder states,
//! the attention matrix and both logit heads; the backward pass produces
//! exact gradients of the combined objective for every parameter.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::asr::{cross_entropy_loss, ctc_loss, hybrid_asr_loss, log_softmax};
use crate::balancer::{
    combine_fixed, combine_uncertainty, BalancerMode, BalancerState, LossBreakdown,
};
use crate::consistency::{
    alignment_loss, global_average_pool, sentence_loss, AttentionMatrix,
};
use crate::data::Batch;
use crate::error::{Error, Result};
use crate::linalg::{add_outer, add_scaled, dot, vec_mat, vec_mat_t, Mat};

/// Dimensions of the toy model. `vocab` counts the reserved end symbol,
/// which sits at index `vocab - 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub feature_dim: usize,
    pub hidden: usize,
    pub vocab: usize,
}

impl ModelConfig {
    fn validate(&self) -> Result<()> {
        if self.hidden < 2 || self.vocab < 2 || self.feature_dim == 0 {
            return Err(Error::InvalidConfig(String::from(
                "model dims need feature_dim >= 1, hidden >= 2, vocab >= 2",
            )));
        }
        Ok(())
    }

    pub fn end_symbol(&self) -> usize {
        self.vocab - 1
    }

    /// Index of the CTC blank class; vocabulary symbol `k` maps to CTC
    /// class `k + 1`.
    pub const BLANK: usize = 0;
}

/// Named parameter tensors. The flat view concatenates them in
/// declaration order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    /// feature_dim x d input projection.
    pub w_in: Mat,
    /// d x d position-mixing weights applied to the sinusoidal frame
    /// positions.
    pub w_enc: Mat,
    /// vocab x d decoder token embedding.
    pub embed: Mat,
    /// d x d decoder recurrence.
    pub w_dec: Mat,
    /// d x d attention query projection.
    pub w_q: Mat,
    /// d x d attention key projection.
    pub w_k: Mat,
    /// d x vocab output projection.
    pub w_out: Mat,
    /// d x (vocab + 1) CTC head projection (class 0 is blank).
    pub w_ctc: Mat,
}

impl ModelParams {
    /// Deterministic scaled-uniform initialization (`±1/sqrt(fan_in)`).
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |rows: usize, cols: usize, fan_in: usize| {
            let scale = 1.0 / libm::sqrt(fan_in as f64);
            Mat::from_fn(rows, cols, |_, _| scale * (2.0 * rng.random::<f64>() - 1.0))
        };
        let (f, d, v) = (config.feature_dim, config.hidden, config.vocab);
        Ok(Self {
            config,
            w_in: draw(f, d, f),
            w_enc: draw(d, d, d),
            embed: draw(v, d, d),
            w_dec: draw(d, d, d),
            w_q: draw(d, d, d),
            w_k: draw(d, d, d),
            w_out: draw(d, v, d),
            w_ctc: draw(d, v + 1, d),
        })
    }

    /// All-zero tensors with the same shapes; used as a gradient container.
    pub fn zeros(config: ModelConfig) -> Self {
        let (f, d, v) = (config.feature_dim, config.hidden, config.vocab);
        Self {
            config,
            w_in: Mat::zeros(f, d),
            w_enc: Mat::zeros(d, d),
            embed: Mat::zeros(v, d),
            w_dec: Mat::zeros(d, d),
            w_q: Mat::zeros(d, d),
            w_k: Mat::zeros(d, d),
            w_out: Mat::zeros(d, v),
            w_ctc: Mat::zeros(d, v + 1),
        }
    }

    pub fn tensors(&self) -> [(&'static str, &Mat); 8] {
        [
            ("w_in", &self.w_in),
            ("w_enc", &self.w_enc),
            ("embed", &self.embed),
            ("w_dec", &self.w_dec),
            ("w_q", &self.w_q),
            ("w_k", &self.w_k),
            ("w_out", &self.w_out),
            ("w_ctc", &self.w_ctc),
        ]
    }

    fn tensors_mut(&mut self) -> [&mut Mat; 8] {
        [
            &mut self.w_in,
            &mut self.w_enc,
            &mut self.embed,
            &mut self.w_dec,
            &mut self.w_q,
            &mut self.w_k,
            &mut self.w_out,
            &mut self.w_ctc,
        ]
    }

    pub fn flat_len(&self) -> usize {
        self.tensors().iter().map(|(_, m)| m.data().len()).sum()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.flat_len());
        for (_, m) in self.tensors() {
            out.extend_from_slice(m.data());
        }
        out
    }

    pub fn from_flat(config: ModelConfig, flat: &[f64]) -> Result<Self> {
        let mut params = Self::zeros(config);
        let expected = params.flat_len();
        if flat.len() != expected {
            return Err(Error::ShapeMismatch {
                context: "flat parameter vector",
                expected,
                actual: flat.len(),
            });
        }
        let mut offset = 0;
        for m in params.tensors_mut() {
            let n = m.data().len();
            m.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(params)
    }

    /// `self += scale * other`, tensor by tensor.
    pub fn add_scaled_params(&mut self, other: &Self, scale: f64) {
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            add_scaled(dst.data_mut(), src.1.data(), scale);
        }
    }

    pub fn scale_in_place(&mut self, scale: f64) {
        for m in self.tensors_mut() {
            for x in m.data_mut() {
                *x *= scale;
            }
        }
    }
}

/// Everything a forward pass exposes to the objective and the analyses.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub enc_hidden: Mat,
    pub dec_hidden: Mat,
    pub attention: AttentionMatrix,
    pub dec_logits: Mat,
    pub ctc_logits: Mat,
}

/// Intermediate activations retained for the backward pass.
struct ForwardCache {
    enc: Mat,
    /// Pre-attention decoder states (post-tanh).
    u: Mat,
    keys: Mat,
    attn: Mat,
    /// Post-attention decoder states.
    dec: Mat,
    dec_logits: Mat,
    ctc_logits: Mat,
    /// Teacher-forcing input tokens (end symbol, then the shifted targets).
    inputs: Vec<usize>,
    /// Cross-entropy targets (the targets with the end symbol appended).
    ce_targets: Vec<usize>,
}

fn softmax_row(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = scores.iter().map(|&s| libm::exp(s - max)).collect();
    let sum: f64 = out.iter().sum();
    for o in &mut out {
        *o /= sum;
    }
    out
}

/// Sinusoidal frame positions, one row per frame; deterministic, entries
/// in [-1, 1].
fn positional_matrix(t_in: usize, d: usize) -> Mat {
    let freqs: Vec<f64> = (0..d)
        .map(|k| libm::pow(100.0, -((k / 2) as f64) / ((d / 2).max(1) as f64)))
        .collect();
    Mat::from_fn(t_in, d, |t, k| {
        let phase = t as f64 * freqs[k];
        if k % 2 == 0 {
            libm::sin(phase)
        } else {
            libm::cos(phase)
        }
    })
}

/// Position-mixed feed-forward encoder: each frame's projection is summed
/// with a learned mix of its sinusoidal position before the nonlinearity,
/// so encoder states carry a noise-free position component.
fn encode(params: &ModelParams, features: &Mat) -> Mat {
    let d = params.config.hidden;
    let positions = positional_matrix(features.rows(), d);
    let mut enc = Mat::zeros(features.rows(), d);
    for t in 0..features.rows() {
        let mut z = vec_mat(features.row(t), &params.w_in);
        let pos = vec_mat(positions.row(t), &params.w_enc);
        for (zv, pv) in z.iter_mut().zip(&pos) {
            *zv = libm::tanh(*zv + pv);
        }
        enc.row_mut(t).copy_from_slice(&z);
    }
    enc
}

/// One decoder step shared between teacher forcing and free-running
/// decoding. The step index enters as a fixed sinusoidal offset so the
/// decoder keeps a noise-free output-position counter. Returns
/// `(u, attention row, post-attention state)`.
fn decode_step(
    params: &ModelParams,
    enc: &Mat,
    keys: &Mat,
    token: usize,
    step: usize,
    prev_state: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let d = params.config.hidden;
    let inv_sqrt_d = 1.0 / libm::sqrt(d as f64);

    let step_pos = positional_matrix(step + 1, d);
    let mut a = vec_mat(prev_state, &params.w_dec);
    for ((av, &ev), &pv) in a
        .iter_mut()
        .zip(params.embed.row(token))
        .zip(step_pos.row(step))
    {
        *av = libm::tanh(*av + ev + pv);
    }
    let u = a;

    let q = vec_mat(&u, &params.w_q);
    let scores: Vec<f64> = (0..enc.rows())
        .map(|j| dot(&q, keys.row(j)) * inv_sqrt_d)
        .collect();
    let alpha = softmax_row(&scores);

    let mut state = u.clone();
    for (j, &w) in alpha.iter().enumerate() {
        add_scaled(&mut state, enc.row(j), w);
    }
    for s in &mut state {
        *s = libm::tanh(*s);
    }
    (u, alpha, state)
}

fn forward_cached(
    params: &ModelParams,
    features: &Mat,
    targets: &[usize],
) -> Result<ForwardCache> {
    let cfg = &params.config;
    if features.cols() != cfg.feature_dim {
        return Err(Error::ShapeMismatch {
            context: "feature dimension",
            expected: cfg.feature_dim,
            actual: features.cols(),
        });
    }
    if features.rows() == 0 || targets.is_empty() {
        return Err(Error::EmptySequence);
    }
    let end = cfg.end_symbol();
    for &y in targets {
        if y >= end {
            return Err(Error::LabelOutOfRange {
                label: y,
                classes: end,
            });
        }
    }

    let enc = encode(params, features);
    let keys = Mat::from_rows(
        &enc.iter_rows()
            .map(|e| vec_mat(e, &params.w_k))
            .collect::<Vec<_>>(),
    );

    let mut inputs = Vec::with_capacity(targets.len() + 1);
    inputs.push(end);
    inputs.extend_from_slice(targets);
    let mut ce_targets = targets.to_vec();
    ce_targets.push(end);

    let t_out = inputs.len();
    let d = cfg.hidden;
    let mut u = Mat::zeros(t_out, d);
    let mut attn = Mat::zeros(t_out, enc.rows());
    let mut dec = Mat::zeros(t_out, d);
    let mut dec_logits = Mat::zeros(t_out, cfg.vocab);

    let mut prev_state = vec![0.0; d];
    for (i, &tok) in inputs.iter().enumerate() {
        let (ui, alpha, state) = decode_step(params, &enc, &keys, tok, i, &prev_state);
        u.row_mut(i).copy_from_slice(&ui);
        attn.row_mut(i).copy_from_slice(&alpha);
        dec_logits
            .row_mut(i)
            .copy_from_slice(&vec_mat(&state, &params.w_out));
        dec.row_mut(i).copy_from_slice(&state);
        prev_state = state;
    }

    let ctc_logits = Mat::from_rows(
        &enc.iter_rows()
            .map(|e| vec_mat(e, &params.w_ctc))
            .collect::<Vec<_>>(),
    );

    Ok(ForwardCache {
        enc,
        u,
        keys,
        attn,
        dec,
        dec_logits,
        ctc_logits,
        inputs,
        ce_targets,
    })
}

/// Teacher-forced forward pass.
pub fn forward(params: &ModelParams, features: &Mat, targets: &[usize]) -> Result<ForwardOutput> {
    let cache = forward_cached(params, features, targets)?;
    Ok(ForwardOutput {
        enc_hidden: cache.enc,
        dec_hidden: cache.dec,
        attention: AttentionMatrix::new_unchecked(cache.attn),
        dec_logits: cache.dec_logits,
        ctc_logits: cache.ctc_logits,
    })
}

/// Which consistency terms participate in the training objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    Baseline,
    Align,
    Sentence,
    Mgsc,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Baseline,
        Variant::Align,
        Variant::Sentence,
        Variant::Mgsc,
    ];

    pub fn uses_sentence(self) -> bool {
        matches!(self, Variant::Sentence | Variant::Mgsc)
    }

    pub fn uses_align(self) -> bool {
        matches!(self, Variant::Align | Variant::Mgsc)
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::Align => "align",
            Variant::Sentence => "sentence",
            Variant::Mgsc => "mgsc",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(Variant::Baseline),
            "align" => Ok(Variant::Align),
            "sentence" => Ok(Variant::Sentence),
            "mgsc" => Ok(Variant::Mgsc),
            other => Err(Error::InvalidConfig(alloc::format!(
                "unknown variant '{other}'"
            ))),
        }
    }
}

/// Objective selection: the variant, the CTC mixing weight and the fixed
/// consistency weights (ignored in uncertainty mode).
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveConfig {
    pub variant: Variant,
    pub ctc_weight: f64,
    pub lambda_sent: f64,
    pub lambda_align: f64,
    /// Evaluate switched-off consistency terms anyway so the breakdown can
    /// report them. Disabling this gives a build that never constructs the
    /// consistency losses at all; the parameter trajectory is identical.
    pub report_inactive: bool,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Mgsc,
            ctc_weight: 0.3,
            lambda_sent: 0.1,
            lambda_align: 0.1,
            report_inactive: true,
        }
    }
}

/// Loss breakdown plus gradients for the parameters and (in uncertainty
/// mode) the balancer log-variances.
#[derive(Debug, Clone, PartialEq)]
pub struct LossAndGrad {
    pub breakdown: LossBreakdown,
    pub grads: ModelParams,
    pub log_var_grads: [f64; 3],
}

/// Full objective and gradient for one sample.
pub fn loss_and_grad(
    params: &ModelParams,
    features: &Mat,
    targets: &[usize],
    objective: &ObjectiveConfig,
    balancer: &BalancerState,
) -> Result<LossAndGrad> {
    let cache = forward_cached(params, features, targets)?;

    let ce = cross_entropy_loss(&cache.dec_logits, &cache.ce_targets)?;
    let ctc_log_probs = log_softmax(&cache.ctc_logits);
    let ctc_labels: Vec<usize> = targets.iter().map(|&y| y + 1).collect();
    let ctc = ctc_loss(&ctc_log_probs, &ctc_labels, ModelConfig::BLANK)?;
    let hybrid = hybrid_asr_loss(&ce, &ctc, objective.ctc_weight)?;
    let l_asr = hybrid.value;

    let uses_sent = objective.variant.uses_sentence();
    let uses_align = objective.variant.uses_align();

    let sent = if uses_sent || objective.report_inactive {
        let m_enc = global_average_pool(&cache.enc)?;
        let m_dec = global_average_pool(&cache.dec)?;
        Some((sentence_loss(&m_enc, &m_dec)?, m_enc.dim()))
    } else {
        None
    };
    let align = if uses_align || objective.report_inactive {
        Some(alignment_loss(&AttentionMatrix::new_unchecked(
            cache.attn.clone(),
        )))
    } else {
        None
    };

    let l_sentence = sent.as_ref().map_or(0.0, |(s, _)| s.value);
    let l_align = align.as_ref().map_or(0.0, |a| a.value);

    let (breakdown, coeffs, log_var_grads) = match balancer.mode {
        BalancerMode::Fixed => {
            let lam_s = if uses_sent { objective.lambda_sent } else { 0.0 };
            let lam_a = if uses_align { objective.lambda_align } else { 0.0 };
            let combined = combine_fixed(l_asr, l_sentence, l_align, lam_s, lam_a)?;
            (combined.breakdown, combined.coeffs, [0.0; 3])
        }
        BalancerMode::Uncertainty => {
            let mut coeffs = [0.0; 3];
            let mut log_var_grads = [0.0; 3];
            let mut l_total;
            if uses_sent && uses_align {
                let c = combine_uncertainty([l_asr, l_sentence, l_align], balancer)?;
                l_total = c.l_total;
                coeffs = c.loss_coeffs;
                log_var_grads = c.log_var_grads;
            } else {
                // Only the active subset of terms enters the objective.
                let active = [true, uses_sent, uses_align];
                let losses = [l_asr, l_sentence, l_align];
                l_total = 0.0;
                for k in 0..3 {
                    if active[k] {
                        let s = balancer.log_vars[k];
                        if !s.is_finite() {
                            return Err(Error::NonFinite("balancer log_vars"));
                        }
                        let w = libm::exp(-s);
                        l_total += w * losses[k] + s;
                        coeffs[k] = w;
                        log_var_grads[k] = 1.0 - w * losses[k];
                    }
                }
            }
            (
                LossBreakdown {
                    l_asr,
                    l_sentence,
                    l_align,
                    l_total,
                },
                coeffs,
                log_var_grads,
            )
        }
    };

    // Seed gradients for the network inputs of each loss, already scaled by
    // their objective coefficients. A zero coefficient contributes nothing,
    // so those terms are skipped entirely rather than multiplied by zero.
    let mut d_dec_logits = hybrid.ce_grad;
    d_dec_logits.scale_in_place_by(coeffs[0]);
    let d_ctc_log_probs = {
        let mut g = hybrid.ctc_grad;
        g.scale_in_place_by(coeffs[0]);
        g
    };
    // Chain the CTC gradient through the log-softmax:
    // d/dlogit_k = dlp_k - softmax_k * sum_j dlp_j.
    let mut d_ctc_logits = Mat::zeros(cache.ctc_logits.rows(), cache.ctc_logits.cols());
    for t in 0..d_ctc_logits.rows() {
        let dsum: f64 = d_ctc_log_probs.row(t).iter().sum();
        let out_row = d_ctc_logits.row_mut(t);
        for (k, o) in out_row.iter_mut().enumerate() {
            let p = libm::exp(ctc_log_probs.row(t)[k]);
            *o = d_ctc_log_probs.row(t)[k] - p * dsum;
        }
    }

    let sent_seeds = match (&sent, coeffs[1] != 0.0) {
        (Some((s, _)), true) => {
            let mut ge = s.grad_enc.clone();
            let mut gd = s.grad_dec.clone();
            for g in ge.iter_mut().chain(gd.iter_mut()) {
                *g *= coeffs[1];
            }
            Some((ge, gd))
        }
        _ => None,
    };
    let align_seed = match (&align, coeffs[2] != 0.0) {
        (Some(a), true) => {
            let mut g = a.grad.clone();
            g.scale_in_place_by(coeffs[2]);
            Some(g)
        }
        _ => None,
    };

    let grads = backward(
        params,
        features,
        &cache,
        &d_dec_logits,
        &d_ctc_logits,
        sent_seeds.as_ref(),
        align_seed.as_ref(),
    );

    Ok(LossAndGrad {
        breakdown,
        grads,
        log_var_grads,
    })
}

trait ScaleMat {
    fn scale_in_place_by(&mut self, s: f64);
}

impl ScaleMat for Mat {
    fn scale_in_place_by(&mut self, s: f64) {
        for x in self.data_mut() {
            *x *= s;
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn backward(
    params: &ModelParams,
    features: &Mat,
    cache: &ForwardCache,
    d_dec_logits: &Mat,
    d_ctc_logits: &Mat,
    sent_seeds: Option<&(Vec<f64>, Vec<f64>)>,
    align_seed: Option<&Mat>,
) -> ModelParams {
    let cfg = params.config;
    let d = cfg.hidden;
    let t_in = cache.enc.rows();
    let t_out = cache.u.rows();
    let inv_sqrt_d = 1.0 / libm::sqrt(d as f64);

    let mut grads = ModelParams::zeros(cfg);
    let mut d_enc = Mat::zeros(t_in, d);
    let mut d_state = Mat::zeros(t_out, d);
    let mut d_keys = Mat::zeros(t_in, d);

    // Pooled-representation seeds spread uniformly over time steps.
    if let Some((g_enc, g_dec)) = sent_seeds {
        let inv_t_in = 1.0 / t_in as f64;
        for t in 0..t_in {
            add_scaled(d_enc.row_mut(t), g_enc, inv_t_in);
        }
        let inv_t_out = 1.0 / t_out as f64;
        for i in 0..t_out {
            add_scaled(d_state.row_mut(i), g_dec, inv_t_out);
        }
    }

    // Output projection.
    for i in 0..t_out {
        add_outer(&mut grads.w_out, cache.dec.row(i), d_dec_logits.row(i));
        let back = vec_mat_t(d_dec_logits.row(i), &params.w_out);
        add_scaled(d_state.row_mut(i), &back, 1.0);
    }

    // CTC head.
    for t in 0..t_in {
        add_outer(&mut grads.w_ctc, cache.enc.row(t), d_ctc_logits.row(t));
        let back = vec_mat_t(d_ctc_logits.row(t), &params.w_ctc);
        add_scaled(d_enc.row_mut(t), &back, 1.0);
    }

    // Decoder steps, latest first so recurrence gradients flow backwards.
    for i in (0..t_out).rev() {
        let s_i = cache.dec.row(i);
        let u_i = cache.u.row(i);
        let alpha = cache.attn.row(i);

        let mut d_b = vec![0.0; d];
        for k in 0..d {
            d_b[k] = d_state.row(i)[k] * (1.0 - s_i[k] * s_i[k]);
        }
        let mut d_u = d_b.clone();
        let d_c = d_b;

        // Attention: combine the context-path gradient with any direct
        // alignment-loss gradient before the softmax backward.
        let mut d_alpha = vec![0.0; t_in];
        for (j, da) in d_alpha.iter_mut().enumerate() {
            *da = dot(&d_c, cache.enc.row(j));
        }
        if let Some(seed) = align_seed {
            add_scaled(&mut d_alpha, seed.row(i), 1.0);
        }
        let weighted: f64 = alpha.iter().zip(&d_alpha).map(|(&a, &g)| a * g).sum();
        let q_i = vec_mat(u_i, &params.w_q);
        let mut d_q = vec![0.0; d];
        for j in 0..t_in {
            let d_score = alpha[j] * (d_alpha[j] - weighted);
            if d_score != 0.0 {
                add_scaled(&mut d_q, cache.keys.row(j), d_score * inv_sqrt_d);
                add_scaled(d_keys.row_mut(j), &q_i, d_score * inv_sqrt_d);
            }
            // Value path: context is a convex combination of encoder rows.
            add_scaled(d_enc.row_mut(j), &d_c, alpha[j]);
        }

        add_outer(&mut grads.w_q, u_i, &d_q);
        let back_q = vec_mat_t(&d_q, &params.w_q);
        add_scaled(&mut d_u, &back_q, 1.0);

        let mut d_a = vec![0.0; d];
        for k in 0..d {
            d_a[k] = d_u[k] * (1.0 - u_i[k] * u_i[k]);
        }
        add_scaled(grads.embed.row_mut(cache.inputs[i]), &d_a, 1.0);
        if i > 0 {
            add_outer(&mut grads.w_dec, cache.dec.row(i - 1), &d_a);
            let back = vec_mat_t(&d_a, &params.w_dec);
            add_scaled(d_state.row_mut(i - 1), &back, 1.0);
        }
    }

    // Key projection gathers gradient from every decoder step.
    for j in 0..t_in {
        add_outer(&mut grads.w_k, cache.enc.row(j), d_keys.row(j));
        let back = vec_mat_t(d_keys.row(j), &params.w_k);
        add_scaled(d_enc.row_mut(j), &back, 1.0);
    }

    // Encoder frames are independent given their positions.
    let positions = positional_matrix(t_in, d);
    for t in 0..t_in {
        let e_t = cache.enc.row(t);
        let mut d_z = vec![0.0; d];
        for k in 0..d {
            d_z[k] = d_enc.row(t)[k] * (1.0 - e_t[k] * e_t[k]);
        }
        add_outer(&mut grads.w_in, features.row(t), &d_z);
        add_outer(&mut grads.w_enc, positions.row(t), &d_z);
    }

    grads
}

/// Mean loss and gradient over a padded batch. Padding is stripped before
/// any loss sees the data.
pub fn batch_loss_and_grad(
    params: &ModelParams,
    batch: &Batch,
    objective: &ObjectiveConfig,
    balancer: &BalancerState,
) -> Result<LossAndGrad> {
    if batch.is_empty() {
        return Err(Error::EmptySequence);
    }
    let mut total = ModelParams::zeros(params.config);
    let mut log_var_grads = [0.0; 3];
    let mut breakdown = LossBreakdown::default();
    for b in 0..batch.len() {
        let (features, targets) = batch.unpadded(b);
        let one = loss_and_grad(params, &features, &targets, objective, balancer)?;
        total.add_scaled_params(&one.grads, 1.0);
        for k in 0..3 {
            log_var_grads[k] += one.log_var_grads[k];
        }
        breakdown.l_asr += one.breakdown.l_asr;
        breakdown.l_sentence += one.breakdown.l_sentence;
        breakdown.l_align += one.breakdown.l_align;
        breakdown.l_total += one.breakdown.l_total;
    }
    let inv = 1.0 / batch.len() as f64;
    total.scale_in_place(inv);
    for g in &mut log_var_grads {
        *g *= inv;
    }
    breakdown.l_asr *= inv;
    breakdown.l_sentence *= inv;
    breakdown.l_align *= inv;
    breakdown.l_total *= inv;
    Ok(LossAndGrad {
        breakdown,
        grads: total,
        log_var_grads,
    })
}

/// Parameter update rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second-moment accumulators over the flat parameter vector plus
/// the three balancer log-variances.
#[derive(Debug, Clone, PartialEq)]
pub struct OptState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: usize,
}

impl OptState {
    pub fn new(params: &ModelParams) -> Self {
        let n = params.flat_len() + 3;
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    pub fn step(&self) -> usize {
        self.step
    }
}

/// One optimizer update on the mean batch loss. Returns the mean breakdown.
pub fn train_step(
    params: &mut ModelParams,
    balancer: &mut BalancerState,
    batch: &Batch,
    objective: &ObjectiveConfig,
    optimizer: &Optimizer,
    opt_state: &mut OptState,
    lr: f64,
) -> Result<LossBreakdown> {
    let mean = batch_loss_and_grad(params, batch, objective, balancer)?;
    if !mean.breakdown.l_total.is_finite() {
        return Err(Error::Diverged {
            step: opt_state.step,
            loss: mean.breakdown.l_total,
        });
    }

    let mut theta = params.to_flat();
    theta.extend_from_slice(&balancer.log_vars);
    let mut grad = mean.grads.to_flat();
    grad.extend_from_slice(&mean.log_var_grads);

    opt_state.step += 1;
    match *optimizer {
        Optimizer::Sgd => {
            for (t, g) in theta.iter_mut().zip(&grad) {
                *t -= lr * g;
            }
        }
        Optimizer::Adam { beta1, beta2, eps } => {
            let t = opt_state.step as i32;
            let bc1 = 1.0 - libm::pow(beta1, t as f64);
            let bc2 = 1.0 - libm::pow(beta2, t as f64);
            for k in 0..theta.len() {
                opt_state.m[k] = beta1 * opt_state.m[k] + (1.0 - beta1) * grad[k];
                opt_state.v[k] = beta2 * opt_state.v[k] + (1.0 - beta2) * grad[k] * grad[k];
                let m_hat = opt_state.m[k] / bc1;
                let v_hat = opt_state.v[k] / bc2;
                theta[k] -= lr * m_hat / (libm::sqrt(v_hat) + eps);
            }
        }
    }

    let flat_len = params.flat_len();
    *params = ModelParams::from_flat(params.config, &theta[..flat_len])?;
    balancer.log_vars.copy_from_slice(&theta[flat_len..]);
    Ok(mean.breakdown)
}

/// Free-running decode result: emitted tokens (end symbol excluded) and the
/// attention rows of every executed step, including the final one.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    pub tokens: Vec<usize>,
    pub attention: Mat,
}

/// Autoregressive argmax decoding until the end symbol or `max_len` steps.
pub fn greedy_decode(params: &ModelParams, features: &Mat, max_len: usize) -> Result<Decoded> {
    let cfg = &params.config;
    if features.cols() != cfg.feature_dim {
        return Err(Error::ShapeMismatch {
            context: "feature dimension",
            expected: cfg.feature_dim,
            actual: features.cols(),
        });
    }
    if features.rows() == 0 {
        return Err(Error::EmptySequence);
    }

    let enc = encode(params, features);
    let keys = Mat::from_rows(
        &enc.iter_rows()
            .map(|e| vec_mat(e, &params.w_k))
            .collect::<Vec<_>>(),
    );
    let end = cfg.end_symbol();

    let mut tokens = Vec::new();
    let mut attn_rows: Vec<Vec<f64>> = Vec::new();
    let mut prev_tok = end;
    let mut prev_state = vec![0.0; cfg.hidden];
    for step in 0..max_len {
        let (_, alpha, state) = decode_step(params, &enc, &keys, prev_tok, step, &prev_state);
        let logits = vec_mat(&state, &params.w_out);
        let mut best = 0;
        for (k, &l) in logits.iter().enumerate() {
            if l > logits[best] {
                best = k;
            }
        }
        attn_rows.push(alpha);
        if best == end {
            break;
        }
        tokens.push(best);
        prev_tok = best;
        prev_state = state;
    }

    let attention = if attn_rows.is_empty() {
        Mat::zeros(0, enc.rows())
    } else {
        Mat::from_rows(&attn_rows)
    };
    Ok(Decoded { tokens, attention })
}
