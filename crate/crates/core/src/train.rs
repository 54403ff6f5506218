//! Loss functions, backpropagation through time, Adam, and the training loop.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{forward_window, init_params, ForwardCache, Gate, LossMode, ModelParams};
use crate::preprocess::{SplitDataset, WindowedDataset};

pub use crate::model::LossMode as Loss;

/// Clip bound applied to cross-entropy probabilities.
pub const BCE_CLIP: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub hidden_dims: Vec<usize>,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub window: usize,
    pub loss_mode: LossMode,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub train_ratio: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hidden_dims: vec![128, 64],
            learning_rate: 0.001,
            batch_size: 50,
            epochs: 100,
            window: 5,
            loss_mode: LossMode::Mse,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            clip_norm: None,
            train_ratio: 0.7,
        }
    }
}

/// Keys accepted by [`TrainConfig::set`], one per field.
pub const CONFIG_KEYS: [&str; 12] = [
    "hidden_dims",
    "learning_rate",
    "batch_size",
    "epochs",
    "window",
    "loss_mode",
    "seed",
    "beta1",
    "beta2",
    "epsilon",
    "clip_norm",
    "train_ratio",
];

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

pub fn parse_dims(value: &str) -> Result<Vec<usize>> {
    value
        .split(',')
        .map(|t| parse_value("hidden_dims", t.trim()))
        .collect()
}

impl TrainConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "hidden_dims" => self.hidden_dims = parse_dims(value)?,
            "learning_rate" => self.learning_rate = parse_value(key, value)?,
            "batch_size" => self.batch_size = parse_value(key, value)?,
            "epochs" => self.epochs = parse_value(key, value)?,
            "window" => self.window = parse_value(key, value)?,
            "loss_mode" => self.loss_mode = value.parse()?,
            "seed" => self.seed = parse_value(key, value)?,
            "beta1" => self.beta1 = parse_value(key, value)?,
            "beta2" => self.beta2 = parse_value(key, value)?,
            "epsilon" => self.epsilon = parse_value(key, value)?,
            "clip_norm" => {
                self.clip_norm = match value {
                    "" | "none" => None,
                    v => Some(parse_value(key, v)?),
                }
            }
            "train_ratio" => self.train_ratio = parse_value(key, value)?,
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Parse `key = value` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`", i + 1))
            })?;
            cfg.set(key.trim(), value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        TrainConfig::parse(&text)
    }

    pub fn to_config_string(&self) -> String {
        let dims: Vec<String> = self.hidden_dims.iter().map(|d| d.to_string()).collect();
        let mut out = String::new();
        writeln!(out, "hidden_dims = {}", dims.join(",")).unwrap();
        writeln!(out, "learning_rate = {}", self.learning_rate).unwrap();
        writeln!(out, "batch_size = {}", self.batch_size).unwrap();
        writeln!(out, "epochs = {}", self.epochs).unwrap();
        writeln!(out, "window = {}", self.window).unwrap();
        writeln!(out, "loss_mode = {}", self.loss_mode.as_str()).unwrap();
        writeln!(out, "seed = {}", self.seed).unwrap();
        writeln!(out, "beta1 = {}", self.beta1).unwrap();
        writeln!(out, "beta2 = {}", self.beta2).unwrap();
        writeln!(out, "epsilon = {}", self.epsilon).unwrap();
        match self.clip_norm {
            Some(c) => writeln!(out, "clip_norm = {c}").unwrap(),
            None => writeln!(out, "clip_norm = none").unwrap(),
        }
        writeln!(out, "train_ratio = {}", self.train_ratio).unwrap();
        out
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.hidden_dims.is_empty() || self.hidden_dims.contains(&0) {
            return fail(format!("hidden_dims must be non-empty and positive, got {:?}", self.hidden_dims));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return fail(format!("learning_rate must be finite and non-negative, got {}", self.learning_rate));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return fail(format!("{name} must lie in (0, 1), got {b}"));
            }
        }
        if !(self.epsilon > 0.0) {
            return fail(format!("epsilon must be positive, got {}", self.epsilon));
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1".into());
        }
        if self.epochs == 0 {
            return fail("epochs must be at least 1".into());
        }
        if self.window == 0 {
            return fail("window must be at least 1".into());
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return fail(format!("clip_norm must be positive, got {c}"));
            }
        }
        if !(self.train_ratio > 0.0 && self.train_ratio < 1.0) {
            return fail(format!("train_ratio must lie in (0, 1), got {}", self.train_ratio));
        }
        Ok(())
    }
}

/// Loss value and its gradient with respect to each prediction.
pub fn compute_loss(pred: &[f64], target: &[f64], mode: LossMode) -> Result<(f64, Vec<f64>)> {
    if pred.len() != target.len() {
        return Err(Error::Dimension {
            what: "loss inputs".into(),
            expected: target.len(),
            found: pred.len(),
        });
    }
    if pred.is_empty() {
        return Err(Error::EmptyDataset("loss over zero predictions".into()));
    }
    let n = pred.len() as f64;
    match mode {
        LossMode::Mse => {
            let mut loss = 0.0;
            let grad = pred
                .iter()
                .zip(target)
                .map(|(&q, &y)| {
                    let e = q - y;
                    loss += e * e;
                    2.0 * e / n
                })
                .collect();
            Ok((loss / n, grad))
        }
        LossMode::Bce => {
            let clip = |v: f64| v.clamp(BCE_CLIP, 1.0 - BCE_CLIP);
            let mut loss = 0.0;
            let mut grad = Vec::with_capacity(pred.len());
            for (&q, &p) in pred.iter().zip(target) {
                let (q, p) = (clip(q), clip(p));
                if !(q > 0.0 && q < 1.0 && p > 0.0 && p < 1.0) {
                    return Err(Error::Domain(format!(
                        "cross-entropy needs values in (0, 1), got prediction {q} target {p}"
                    )));
                }
                loss -= p * q.ln() + (1.0 - p) * (1.0 - q).ln();
                grad.push(-(p / q - (1.0 - p) / (1.0 - q)) / n);
            }
            Ok((loss / n, grad))
        }
    }
}

/// Gradient of a scalar loss with respect to every model block.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients(ModelParams);

impl Gradients {
    pub fn zeros_like(model: &ModelParams) -> Self {
        Gradients(
            ModelParams::zeros(&model.hidden_dims(), model.loss_mode())
                .expect("model dims are valid"),
        )
    }

    /// Gradient blocks laid out like the model's parameters.
    pub fn as_params(&self) -> &ModelParams {
        &self.0
    }

    pub fn blocks(&self) -> Vec<(String, &crate::matrix::Matrix)> {
        self.0.blocks()
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, (_, b)) in self.0.blocks_mut().into_iter().zip(other.0.blocks()) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for b in self.0.blocks_mut() {
            for v in b.as_mut_slice() {
                *v *= s;
            }
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.0
            .blocks()
            .iter()
            .flat_map(|(_, m)| m.as_slice())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    /// Name of the first block holding a non-finite entry.
    pub fn first_non_finite(&self) -> Option<String> {
        self.0
            .blocks()
            .into_iter()
            .find(|(_, m)| !m.is_finite())
            .map(|(name, _)| name)
    }

    pub fn is_zero(&self) -> bool {
        self.0
            .blocks()
            .iter()
            .all(|(_, m)| m.as_slice().iter().all(|&v| v == 0.0))
    }
}

fn check_cache(model: &ModelParams, cache: &ForwardCache) -> Result<()> {
    let dims = model.hidden_dims();
    if cache.steps.is_empty() {
        return Err(Error::Contract("forward cache has no steps".into()));
    }
    for step in &cache.steps {
        if step.len() != dims.len() || step.iter().zip(&dims).any(|(c, &d)| c.h.len() != d) {
            return Err(Error::Contract(
                "forward cache does not match the model's layer sizes".into(),
            ));
        }
    }
    Ok(())
}

/// Backpropagate `dloss_dy` (the gradient with respect to this window's
/// prediction) through the head, all time steps and all layers.
pub fn bptt_backward(model: &ModelParams, cache: &ForwardCache, dloss_dy: f64) -> Result<Gradients> {
    let mut grads = Gradients::zeros_like(model);
    bptt_accumulate(model, cache, dloss_dy, &mut grads)?;
    Ok(grads)
}

/// As [`bptt_backward`] but adds into an existing gradient.
pub fn bptt_accumulate(
    model: &ModelParams,
    cache: &ForwardCache,
    dloss_dy: f64,
    grads: &mut Gradients,
) -> Result<()> {
    check_cache(model, cache)?;
    if dloss_dy == 0.0 {
        return Ok(());
    }
    let dz = match model.loss_mode() {
        LossMode::Mse => dloss_dy,
        LossMode::Bce => dloss_dy * cache.output * (1.0 - cache.output),
    };
    let n_layers = model.layers().len();
    let top_h = cache.final_hidden();
    grads.0.head_mut().add_outer(&[dz], top_h);

    let dims = model.hidden_dims();
    let mut dh_next: Vec<Vec<f64>> = dims.iter().map(|&d| vec![0.0; d]).collect();
    let mut dc_next = dh_next.clone();
    let mut top_in = vec![0.0; dims[n_layers - 1]];
    model.head().matvec_t_acc(&[dz], &mut top_in);

    let gl = grads.0.layers_mut();
    for (t, step) in cache.steps.iter().enumerate().rev() {
        // Gradient arriving at the current layer's h from the layer above.
        let mut from_above = if t + 1 == cache.steps.len() {
            top_in.clone()
        } else {
            vec![0.0; dims[n_layers - 1]]
        };
        for l in (0..n_layers).rev() {
            let cell = &step[l];
            let params = &model.layers()[l];
            let hidden = dims[l];
            let mut d_pre: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; hidden]);
            let mut dc_prev = vec![0.0; hidden];
            for k in 0..hidden {
                let dh = dh_next[l][k] + from_above[k];
                let o = cell.output_gate[k];
                let i = cell.input_gate[k];
                let f = cell.forget_gate[k];
                let g = cell.candidate[k];
                let tc = cell.tanh_c[k];
                let dc = dc_next[l][k] + dh * o * (1.0 - tc * tc);
                d_pre[Gate::Output as usize][k] = dh * tc * o * (1.0 - o);
                d_pre[Gate::Input as usize][k] = dc * g * i * (1.0 - i);
                d_pre[Gate::Forget as usize][k] = dc * cell.c_prev[k] * f * (1.0 - f);
                d_pre[Gate::Cell as usize][k] = dc * i * (1.0 - g * g);
                dc_prev[k] = dc * f;
            }
            let mut dh_prev = vec![0.0; hidden];
            let mut dx = vec![0.0; params.input_size()];
            for gate in Gate::ALL {
                let dp = &d_pre[gate as usize];
                let gp = params.gate(gate);
                let gg = gl[l].gate_mut(gate);
                gg.w.add_outer(dp, &cell.x);
                gg.v.add_outer(dp, &cell.h_prev);
                for (b, d) in gg.b.as_mut_slice().iter_mut().zip(dp) {
                    *b += d;
                }
                gp.v.matvec_t_acc(dp, &mut dh_prev);
                if l > 0 {
                    gp.w.matvec_t_acc(dp, &mut dx);
                }
            }
            dh_next[l] = dh_prev;
            dc_next[l] = dc_prev;
            from_above = dx;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Gradients,
    v: Gradients,
    t: u64,
}

impl AdamState {
    pub fn new(model: &ModelParams) -> Self {
        AdamState {
            m: Gradients::zeros_like(model),
            v: Gradients::zeros_like(model),
            t: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn first_moment(&self) -> &Gradients {
        &self.m
    }

    pub fn second_moment(&self) -> &Gradients {
        &self.v
    }
}

/// Hyperparameters of one bias-corrected Adam update.
#[derive(Debug, Clone, Copy)]
pub struct AdamHyper {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl From<&TrainConfig> for AdamHyper {
    fn from(c: &TrainConfig) -> Self {
        AdamHyper {
            learning_rate: c.learning_rate,
            beta1: c.beta1,
            beta2: c.beta2,
            epsilon: c.epsilon,
        }
    }
}

/// Elementwise Adam update at step `t` (1-based).
pub fn adam_update(theta: &mut [f64], m: &mut [f64], v: &mut [f64], g: &[f64], h: AdamHyper, t: u64) {
    let t = i32::try_from(t).unwrap_or(i32::MAX);
    let c1 = 1.0 - h.beta1.powi(t);
    let c2 = 1.0 - h.beta2.powi(t);
    for k in 0..theta.len() {
        m[k] = h.beta1 * m[k] + (1.0 - h.beta1) * g[k];
        v[k] = h.beta2 * v[k] + (1.0 - h.beta2) * g[k] * g[k];
        let m_hat = m[k] / c1;
        let v_hat = v[k] / c2;
        theta[k] -= h.learning_rate * m_hat / (v_hat.sqrt() + h.epsilon);
    }
}

pub fn adam_step(model: &mut ModelParams, grads: &Gradients, state: &mut AdamState, cfg: &TrainConfig) -> Result<()> {
    if grads.0.hidden_dims() != model.hidden_dims() || state.m.0.hidden_dims() != model.hidden_dims() {
        return Err(Error::Dimension {
            what: "optimizer blocks".into(),
            expected: model.parameter_count(),
            found: grads.0.parameter_count(),
        });
    }
    if let Some(block) = grads.first_non_finite() {
        return Err(Error::NonFiniteGradient { block });
    }
    state.t += 1;
    let hyper = AdamHyper::from(cfg);
    let params = model.blocks_mut();
    let ms = state.m.0.blocks_mut();
    let vs = state.v.0.blocks_mut();
    for (((p, m), v), (_, g)) in params.into_iter().zip(ms).zip(vs).zip(grads.0.blocks()) {
        adam_update(
            p.as_mut_slice(),
            m.as_mut_slice(),
            v.as_mut_slice(),
            g.as_slice(),
            hyper,
            state.t,
        );
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_rmse: f64,
}

#[derive(Debug, Clone, Default)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub optimizer_steps: u64,
    pub wall_time: Duration,
    pub model_path: Option<PathBuf>,
}

impl TrainReport {
    /// `epoch,train_loss,test_rmse` CSV. Wall time is left out so reruns match.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("epoch,train_loss,test_rmse\n");
        for r in &self.epochs {
            writeln!(out, "{},{},{}", r.epoch, r.train_loss, r.test_rmse).unwrap();
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv_string()).map_err(|e| Error::io(path, e))
    }
}

/// Predictions for every window, computed in parallel and returned in order.
pub fn predict_all(model: &ModelParams, ds: &WindowedDataset) -> Result<Vec<f64>> {
    crate::pool().install(|| {
        ds.windows()
            .par_iter()
            .map(|w| forward_window(model, w).map(|(y, _)| y))
            .collect()
    })
}

/// Mean loss and summed gradient over a batch of windows.
///
/// Per-window passes may run in parallel; their gradients are summed in
/// window order so the result does not depend on scheduling.
pub fn batch_gradient(
    model: &ModelParams,
    windows: &[Vec<f64>],
    targets: &[f64],
) -> Result<(f64, Gradients)> {
    let passes: Vec<(f64, ForwardCache)> = crate::pool().install(|| {
        windows
            .par_iter()
            .map(|w| forward_window(model, w))
            .collect::<Result<_>>()
    })?;
    let preds: Vec<f64> = passes.iter().map(|p| p.0).collect();
    let (loss, dpred) = compute_loss(&preds, targets, model.loss_mode())?;
    let parts: Vec<Gradients> = crate::pool().install(|| {
        passes
            .par_iter()
            .zip(dpred.par_iter())
            .map(|((_, cache), &d)| bptt_backward(model, cache, d))
            .collect::<Result<_>>()
    })?;
    let mut total = Gradients::zeros_like(model);
    for g in &parts {
        total.add_assign(g);
    }
    Ok((loss, total))
}

fn rmse(pred: &[f64], target: &[f64]) -> f64 {
    let n = pred.len() as f64;
    (pred.iter().zip(target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n).sqrt()
}

/// Train a freshly initialized model (seeded from `cfg.seed`).
pub fn train(split: &SplitDataset, cfg: &TrainConfig) -> Result<(ModelParams, TrainReport)> {
    cfg.validate()?;
    let model = init_params(cfg, cfg.seed)?;
    train_from(model, split, cfg)
}

/// Continue training `model` for `cfg.epochs` epochs.
///
/// Batches are consecutive runs of `cfg.batch_size` training windows in
/// chronological order; each batch takes one Adam step on its mean gradient.
pub fn train_from(
    mut model: ModelParams,
    split: &SplitDataset,
    cfg: &TrainConfig,
) -> Result<(ModelParams, TrainReport)> {
    cfg.validate()?;
    if split.train.is_empty() {
        return Err(Error::EmptyDataset("no training windows".into()));
    }
    if model.loss_mode() != cfg.loss_mode {
        return Err(Error::Config("model and config disagree on loss mode".into()));
    }
    if split.train.window_length() != cfg.window {
        return Err(Error::Config(format!(
            "dataset window {} differs from config window {}",
            split.train.window_length(),
            cfg.window
        )));
    }
    model.set_window(Some(cfg.window));
    let started = Instant::now();
    let mut state = AdamState::new(&model);
    let mut report = TrainReport::default();
    let n = split.train.len();
    for epoch in 1..=cfg.epochs {
        let mut loss_sum = 0.0;
        for start in (0..n).step_by(cfg.batch_size) {
            let end = (start + cfg.batch_size).min(n);
            let (loss, mut grads) = batch_gradient(
                &model,
                &split.train.windows()[start..end],
                &split.train.targets()[start..end],
            )?;
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    last_good: report.epochs.last().map(|r| r.epoch),
                });
            }
            loss_sum += loss * (end - start) as f64;
            if let Some(clip) = cfg.clip_norm {
                let norm = grads.global_norm();
                if norm > clip {
                    grads.scale(clip / norm);
                }
            }
            adam_step(&mut model, &grads, &mut state, cfg)?;
        }
        let train_loss = loss_sum / n as f64;
        if !train_loss.is_finite() {
            return Err(Error::Diverged {
                epoch,
                last_good: report.epochs.last().map(|r| r.epoch),
            });
        }
        let test_rmse = if split.test.is_empty() {
            f64::NAN
        } else {
            rmse(&predict_all(&model, &split.test)?, split.test.targets())
        };
        report.epochs.push(EpochRecord {
            epoch,
            train_loss,
            test_rmse,
        });
    }
    report.optimizer_steps = state.t;
    report.wall_time = started.elapsed();
    Ok((model, report))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckConfig {
    pub hidden_dims: Vec<usize>,
    pub window: usize,
    /// Number of random windows in the probe batch. Larger batches average
    /// per-window gradients toward zero, and near-zero entries put the
    /// relative error at the mercy of rounding in the loss.
    pub batch: usize,
    pub seed: u64,
    pub eps: f64,
    pub loss_mode: LossMode,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            hidden_dims: vec![4, 3],
            window: 5,
            batch: 2,
            seed: 7,
            eps: 1e-6,
            loss_mode: LossMode::Mse,
        }
    }
}

/// Worst analytic-versus-numeric mismatch within one block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockCheck {
    pub block: String,
    pub max_rel_error: f64,
    /// Largest `|analytic − numeric|` anywhere in the block.
    pub max_abs_error: f64,
    pub worst_row: usize,
    pub worst_col: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub loss_mode: LossMode,
    pub blocks: Vec<BlockCheck>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.blocks.iter().map(|b| b.max_rel_error).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&BlockCheck> {
        self.blocks
            .iter()
            .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }
}

/// `|a − n| / max(|a|, |n|, 1e-12)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-12)
}

fn batch_loss(model: &ModelParams, windows: &[Vec<f64>], targets: &[f64]) -> Result<f64> {
    let preds = windows
        .iter()
        .map(|w| forward_window(model, w).map(|(y, _)| y))
        .collect::<Result<Vec<_>>>()?;
    Ok(compute_loss(&preds, targets, model.loss_mode())?.0)
}

/// Compare BPTT gradients against central differences at `model`.
pub fn grad_check_at(model: &ModelParams, windows: &[Vec<f64>], targets: &[f64], eps: f64) -> Result<GradCheckReport> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::Config(format!("finite-difference step must be positive, got {eps}")));
    }
    let (_, analytic) = batch_gradient(model, windows, targets)?;
    let mut probe = model.clone();
    let names: Vec<String> = model.blocks().into_iter().map(|(n, _)| n).collect();
    let mut blocks = Vec::with_capacity(names.len());
    for (b, name) in names.into_iter().enumerate() {
        let (_, a_block) = &analytic.blocks()[b];
        let cols = a_block.cols();
        let len = a_block.as_slice().len();
        let mut worst = BlockCheck {
            block: name,
            max_rel_error: 0.0,
            max_abs_error: 0.0,
            worst_row: 0,
            worst_col: 0,
            analytic: a_block.as_slice().first().copied().unwrap_or(0.0),
            numeric: 0.0,
        };
        let mut first = true;
        for k in 0..len {
            let original = probe.blocks_mut()[b].as_slice()[k];
            probe.blocks_mut()[b].as_mut_slice()[k] = original + eps;
            let plus = batch_loss(&probe, windows, targets)?;
            probe.blocks_mut()[b].as_mut_slice()[k] = original - eps;
            let minus = batch_loss(&probe, windows, targets)?;
            probe.blocks_mut()[b].as_mut_slice()[k] = original;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = a_block.as_slice()[k];
            let rel = relative_error(a, numeric);
            worst.max_abs_error = worst.max_abs_error.max((a - numeric).abs());
            if first || rel > worst.max_rel_error {
                first = false;
                worst.max_rel_error = rel;
                worst.worst_row = k / cols;
                worst.worst_col = k % cols;
                worst.analytic = a;
                worst.numeric = numeric;
            }
        }
        blocks.push(worst);
    }
    Ok(GradCheckReport {
        loss_mode: model.loss_mode(),
        blocks,
    })
}

/// Gradient check on a seeded random network and random probe batch.
pub fn grad_check(cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    if !(cfg.eps > 0.0 && cfg.eps.is_finite()) {
        return Err(Error::Config(format!("finite-difference step must be positive, got {}", cfg.eps)));
    }
    if cfg.batch == 0 || cfg.window == 0 {
        return Err(Error::Config("grad-check needs a positive batch and window".into()));
    }
    let tc = TrainConfig {
        hidden_dims: cfg.hidden_dims.clone(),
        window: cfg.window,
        loss_mode: cfg.loss_mode,
        ..TrainConfig::default()
    };
    let model = init_params(&tc, cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut unit = || (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
    let windows: Vec<Vec<f64>> = (0..cfg.batch)
        .map(|_| (0..cfg.window).map(|_| unit()).collect())
        .collect();
    let targets: Vec<f64> = (0..cfg.batch).map(|_| 0.05 + 0.9 * unit()).collect();
    grad_check_at(&model, &windows, &targets, cfg.eps)
}
