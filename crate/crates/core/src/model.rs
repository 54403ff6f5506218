//! Stacked LSTM with a linear regression head, plus the model file format.
//!
//! Each layer applies, per time step,
//!
//! ```text
//! i = σ(Wi x + Vi h' + bi)     f = σ(Wf x + Vf h' + bf)     o = σ(Wo x + Vo h' + bo)
//! c = f ⊙ c' + i ⊙ tanh(Wc x + Vc h' + bc)                  h = o ⊙ tanh(c)
//! ```
//!
//! where `h'`, `c'` are the previous step's state. A window of `W` scalars is
//! fed as `W` one-dimensional steps into layer 0; every layer's `h` feeds the
//! next layer at the same step. The prediction is `Wr · h` of the top layer at
//! the last step, passed through σ when the model is in cross-entropy mode.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::preprocess::MinMaxScaler;
use crate::train::TrainConfig;

pub const MODEL_MAGIC: &str = "LSTMPROG";
pub const MODEL_VERSION: &str = "v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LossMode {
    /// Squared error with a linear head.
    #[default]
    Mse,
    /// Binary cross-entropy with a sigmoid head.
    Bce,
}

impl LossMode {
    pub fn as_str(self) -> &'static str {
        match self {
            LossMode::Mse => "mse",
            LossMode::Bce => "bce",
        }
    }
}

impl std::str::FromStr for LossMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mse" => Ok(LossMode::Mse),
            "bce" => Ok(LossMode::Bce),
            other => Err(Error::Config(format!("unknown loss mode {other:?} (expected mse or bce)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gate {
    Input,
    Forget,
    Output,
    Cell,
}

impl Gate {
    pub const ALL: [Gate; 4] = [Gate::Input, Gate::Forget, Gate::Output, Gate::Cell];

    fn index(self) -> usize {
        self as usize
    }
}

/// Block names in file order.
pub const LAYER_BLOCK_NAMES: [&str; 12] = [
    "Wi", "Vi", "bi", "Wf", "Vf", "bf", "Wo", "Vo", "bo", "Wc", "Vc", "bc",
];
pub const HEAD_BLOCK_NAME: &str = "Wr";

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[derive(Debug, Clone, PartialEq)]
pub struct GateParams {
    /// hidden × input
    pub w: Matrix,
    /// hidden × hidden
    pub v: Matrix,
    /// hidden × 1
    pub b: Matrix,
}

impl GateParams {
    fn zeros(input: usize, hidden: usize) -> Self {
        GateParams {
            w: Matrix::zeros(hidden, input),
            v: Matrix::zeros(hidden, hidden),
            b: Matrix::zeros(hidden, 1),
        }
    }

    /// `W x + V h + b`
    fn preactivation(&self, x: &[f64], h: &[f64]) -> Vec<f64> {
        let mut out = self.b.as_slice().to_vec();
        self.w.matvec_acc(x, &mut out);
        self.v.matvec_acc(h, &mut out);
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    input: usize,
    hidden: usize,
    gates: [GateParams; 4],
}

impl LayerParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        LayerParams {
            input,
            hidden,
            gates: std::array::from_fn(|_| GateParams::zeros(input, hidden)),
        }
    }

    pub fn input_size(&self) -> usize {
        self.input
    }

    pub fn hidden_size(&self) -> usize {
        self.hidden
    }

    pub fn gate(&self, g: Gate) -> &GateParams {
        &self.gates[g.index()]
    }

    pub fn gate_mut(&mut self, g: Gate) -> &mut GateParams {
        &mut self.gates[g.index()]
    }

    /// The twelve blocks in [`LAYER_BLOCK_NAMES`] order.
    pub fn blocks(&self) -> [&Matrix; 12] {
        let [i, f, o, c] = &self.gates;
        [&i.w, &i.v, &i.b, &f.w, &f.v, &f.b, &o.w, &o.v, &o.b, &c.w, &c.v, &c.b]
    }

    pub fn blocks_mut(&mut self) -> [&mut Matrix; 12] {
        let [i, f, o, c] = &mut self.gates;
        [
            &mut i.w, &mut i.v, &mut i.b, &mut f.w, &mut f.v, &mut f.b, &mut o.w, &mut o.v,
            &mut o.b, &mut c.w, &mut c.v, &mut c.b,
        ]
    }
}

/// Intermediates of one cell step, kept for the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct CellCache {
    pub x: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub c_prev: Vec<f64>,
    pub input_gate: Vec<f64>,
    pub forget_gate: Vec<f64>,
    pub output_gate: Vec<f64>,
    /// tanh of the candidate pre-activation.
    pub candidate: Vec<f64>,
    pub c: Vec<f64>,
    pub tanh_c: Vec<f64>,
    pub h: Vec<f64>,
}

pub fn lstm_cell_forward(
    p: &LayerParams,
    x: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
) -> Result<(Vec<f64>, Vec<f64>, CellCache)> {
    let check = |what: &str, expected: usize, found: usize| {
        if expected == found {
            Ok(())
        } else {
            Err(Error::Dimension {
                what: what.into(),
                expected,
                found,
            })
        }
    };
    check("cell input", p.input, x.len())?;
    check("previous hidden state", p.hidden, h_prev.len())?;
    check("previous cell state", p.hidden, c_prev.len())?;

    let act = |g: Gate, f: fn(f64) -> f64| -> Vec<f64> {
        p.gate(g).preactivation(x, h_prev).into_iter().map(f).collect()
    };
    let input_gate = act(Gate::Input, sigmoid);
    let forget_gate = act(Gate::Forget, sigmoid);
    let output_gate = act(Gate::Output, sigmoid);
    let candidate = act(Gate::Cell, f64::tanh);

    let c: Vec<f64> = (0..p.hidden)
        .map(|k| forget_gate[k] * c_prev[k] + input_gate[k] * candidate[k])
        .collect();
    let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
    let h: Vec<f64> = output_gate.iter().zip(&tanh_c).map(|(o, t)| o * t).collect();

    let cache = CellCache {
        x: x.to_vec(),
        h_prev: h_prev.to_vec(),
        c_prev: c_prev.to_vec(),
        input_gate,
        forget_gate,
        output_gate,
        candidate,
        c: c.clone(),
        tanh_c,
        h: h.clone(),
    };
    Ok((h, c, cache))
}

/// Per-layer hidden and cell state.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Vec<Vec<f64>>,
    pub c: Vec<Vec<f64>>,
}

impl LstmState {
    pub fn zeros(hidden_dims: &[usize]) -> Self {
        LstmState {
            h: hidden_dims.iter().map(|&d| vec![0.0; d]).collect(),
            c: hidden_dims.iter().map(|&d| vec![0.0; d]).collect(),
        }
    }
}

/// Everything the backward pass needs from one window.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `steps[t][layer]`
    pub steps: Vec<Vec<CellCache>>,
    /// Head output before any activation.
    pub head_preactivation: f64,
    pub output: f64,
}

impl ForwardCache {
    pub fn final_hidden(&self) -> &[f64] {
        &self.steps.last().and_then(|s| s.last()).expect("non-empty cache").h
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    layers: Vec<LayerParams>,
    /// output (1) × last hidden
    head: Matrix,
    loss: LossMode,
    window: Option<usize>,
    scaler: Option<MinMaxScaler>,
}

impl ModelParams {
    /// Validates the dimension chain `1 → layers → head`.
    pub fn new(layers: Vec<LayerParams>, head: Matrix, loss: LossMode) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("model needs at least one layer".into()));
        }
        let mut expected_in = 1;
        for (l, layer) in layers.iter().enumerate() {
            if layer.input != expected_in {
                return Err(Error::Dimension {
                    what: format!("layer {l} input"),
                    expected: expected_in,
                    found: layer.input,
                });
            }
            if layer.hidden == 0 {
                return Err(Error::Config(format!("layer {l} has zero hidden units")));
            }
            for (name, block) in LAYER_BLOCK_NAMES.iter().zip(layer.blocks()) {
                let want = block_shape(name, layer.input, layer.hidden);
                if block.shape() != want {
                    return Err(Error::Dimension {
                        what: format!("layer {l} block {name}"),
                        expected: want.0 * want.1,
                        found: block.rows() * block.cols(),
                    });
                }
            }
            expected_in = layer.hidden;
        }
        if head.shape() != (1, expected_in) {
            return Err(Error::Dimension {
                what: "regression head".into(),
                expected: expected_in,
                found: head.cols(),
            });
        }
        Ok(ModelParams {
            layers,
            head,
            loss,
            window: None,
            scaler: None,
        })
    }

    /// All-zero parameters (every prediction is 0 in squared-error mode).
    pub fn zeros(hidden_dims: &[usize], loss: LossMode) -> Result<Self> {
        if hidden_dims.is_empty() || hidden_dims.contains(&0) {
            return Err(Error::Config(format!("invalid hidden dims {hidden_dims:?}")));
        }
        let mut input = 1;
        let layers = hidden_dims
            .iter()
            .map(|&h| {
                let l = LayerParams::zeros(input, h);
                input = h;
                l
            })
            .collect();
        ModelParams::new(layers, Matrix::zeros(1, input), loss)
    }

    pub fn layers(&self) -> &[LayerParams] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [LayerParams] {
        &mut self.layers
    }

    pub fn head(&self) -> &Matrix {
        &self.head
    }

    pub fn head_mut(&mut self) -> &mut Matrix {
        &mut self.head
    }

    pub fn input_dim(&self) -> usize {
        1
    }

    pub fn output_dim(&self) -> usize {
        1
    }

    pub fn hidden_dims(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.hidden).collect()
    }

    pub fn loss_mode(&self) -> LossMode {
        self.loss
    }

    /// Window length the model was trained with, if recorded.
    pub fn window(&self) -> Option<usize> {
        self.window
    }

    pub fn set_window(&mut self, window: Option<usize>) {
        self.window = window;
    }

    pub fn scaler(&self) -> Option<&MinMaxScaler> {
        self.scaler.as_ref()
    }

    pub fn set_scaler(&mut self, scaler: Option<MinMaxScaler>) {
        self.scaler = scaler;
    }

    pub fn parameter_count(&self) -> usize {
        self.blocks().iter().map(|(_, m)| m.as_slice().len()).sum()
    }

    /// Blocks as `("layer{l}.{name}", matrix)`, head last as `"Wr"`.
    pub fn blocks(&self) -> Vec<(String, &Matrix)> {
        let mut out = Vec::with_capacity(self.layers.len() * 12 + 1);
        for (l, layer) in self.layers.iter().enumerate() {
            for (name, m) in LAYER_BLOCK_NAMES.iter().zip(layer.blocks()) {
                out.push((format!("layer{l}.{name}"), m));
            }
        }
        out.push((HEAD_BLOCK_NAME.to_string(), &self.head));
        out
    }

    /// Same order as [`Self::blocks`].
    pub fn blocks_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out: Vec<&mut Matrix> = Vec::with_capacity(self.layers.len() * 12 + 1);
        for layer in &mut self.layers {
            out.extend(layer.blocks_mut());
        }
        out.push(&mut self.head);
        out
    }

    pub fn bit_eq(&self, other: &ModelParams) -> bool {
        let a = self.blocks();
        let b = other.blocks();
        self.loss == other.loss
            && self.window == other.window
            && scaler_bits(self.scaler) == scaler_bits(other.scaler)
            && a.len() == b.len()
            && a.iter().zip(&b).all(|((_, x), (_, y))| x.bit_eq(y))
    }
}

fn scaler_bits(s: Option<MinMaxScaler>) -> Option<(u64, u64)> {
    s.map(|s| (s.min().to_bits(), s.max().to_bits()))
}

fn block_shape(name: &str, input: usize, hidden: usize) -> (usize, usize) {
    match name.as_bytes()[0] {
        b'W' => (hidden, input),
        b'V' => (hidden, hidden),
        _ => (hidden, 1),
    }
}

/// Uniform draw in `[-limit, limit)` from the top 53 bits of one ChaCha8 word.
fn uniform(rng: &mut ChaCha8Rng, limit: f64) -> f64 {
    let unit = (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
    (2.0 * unit - 1.0) * limit
}

fn fill_glorot(m: &mut Matrix, rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    for v in m.as_mut_slice() {
        *v = uniform(rng, limit);
    }
}

/// Glorot-uniform weights, zero biases except forget-gate biases of 1.
///
/// The generator is ChaCha8 seeded with `seed_from_u64(seed)`. Draws go layer
/// by layer, gates in i, f, o, c order, `W` before `V`, then the head.
pub fn init_params(cfg: &TrainConfig, seed: u64) -> Result<ModelParams> {
    let mut model = ModelParams::zeros(&cfg.hidden_dims, cfg.loss_mode)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for layer in &mut model.layers {
        let (input, hidden) = (layer.input, layer.hidden);
        for g in Gate::ALL {
            let gp = layer.gate_mut(g);
            fill_glorot(&mut gp.w, &mut rng, input, hidden);
            fill_glorot(&mut gp.v, &mut rng, hidden, hidden);
        }
        layer.gate_mut(Gate::Forget).b.fill(1.0);
    }
    let k = model.head.cols();
    fill_glorot(&mut model.head, &mut rng, k, 1);
    model.window = Some(cfg.window);
    Ok(model)
}

fn head_output(model: &ModelParams, h: &[f64]) -> (f64, f64) {
    let mut z = [0.0];
    model.head.matvec_acc(h, &mut z);
    let y = match model.loss {
        LossMode::Mse => z[0],
        LossMode::Bce => sigmoid(z[0]),
    };
    (z[0], y)
}

/// Run one window from a zero state and return the prediction and caches.
pub fn forward_window(model: &ModelParams, window: &[f64]) -> Result<(f64, ForwardCache)> {
    if let Some(w) = model.window {
        if window.len() != w {
            return Err(Error::Dimension {
                what: "window length".into(),
                expected: w,
                found: window.len(),
            });
        }
    } else if window.is_empty() {
        return Err(Error::Dimension {
            what: "window length".into(),
            expected: 1,
            found: 0,
        });
    }
    let mut state = LstmState::zeros(&model.hidden_dims());
    let mut steps = Vec::with_capacity(window.len());
    for &value in window {
        let mut x = vec![value];
        let mut step = Vec::with_capacity(model.layers.len());
        for (l, layer) in model.layers.iter().enumerate() {
            let (h, c, cache) = lstm_cell_forward(layer, &x, &state.h[l], &state.c[l])?;
            state.c[l] = c;
            state.h[l] = h.clone();
            x = h;
            step.push(cache);
        }
        steps.push(step);
    }
    let top = state.h.last().expect("at least one layer");
    let (z, y) = head_output(model, top);
    Ok((
        y,
        ForwardCache {
            steps,
            head_preactivation: z,
            output: y,
        },
    ))
}

pub fn predict(model: &ModelParams, window: &[f64]) -> Result<f64> {
    forward_window(model, window).map(|(y, _)| y)
}

/// Serialize in the line-oriented `LSTMPROG v1` text format.
pub fn model_to_string(model: &ModelParams) -> String {
    let mut out = String::new();
    writeln!(out, "{MODEL_MAGIC} {MODEL_VERSION}").unwrap();
    write!(out, "input {} layers {} hidden", model.input_dim(), model.layers.len()).unwrap();
    for h in model.hidden_dims() {
        write!(out, " {h}").unwrap();
    }
    writeln!(out, " output {} loss {}", model.output_dim(), model.loss.as_str()).unwrap();
    if let Some(w) = model.window {
        writeln!(out, "window {w}").unwrap();
    }
    if let Some(s) = model.scaler {
        writeln!(out, "scaler {} {}", s.min(), s.max()).unwrap();
    }
    let mut write_block = |name: &str, m: &Matrix| {
        writeln!(out, "block {name} {} {}", m.rows(), m.cols()).unwrap();
        for r in 0..m.rows() {
            for (c, v) in m.row(r).iter().enumerate() {
                if c > 0 {
                    out.push(' ');
                }
                write!(out, "{v}").unwrap();
            }
            out.push('\n');
        }
    };
    for layer in &model.layers {
        for (name, m) in LAYER_BLOCK_NAMES.iter().zip(layer.blocks()) {
            write_block(name, m);
        }
    }
    write_block(HEAD_BLOCK_NAME, &model.head);
    out
}

pub fn save_model(model: &ModelParams, path: &Path) -> Result<()> {
    fs::write(path, model_to_string(model)).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<ModelParams> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_model(&text)
}

/// Line cursor that remembers byte offsets for error reports.
struct Lines<'a> {
    text: &'a str,
    pos: usize,
}

impl<'a> Lines<'a> {
    fn next(&mut self, expecting: &str) -> Result<(usize, &'a str)> {
        if self.pos >= self.text.len() {
            return Err(Error::Corrupt {
                offset: self.pos,
                message: format!("unexpected end of file, expected {expecting}"),
            });
        }
        let start = self.pos;
        let rest = &self.text[start..];
        let (line, advance) = match rest.find('\n') {
            Some(i) => (&rest[..i], i + 1),
            None => (rest, rest.len()),
        };
        self.pos += advance;
        Ok((start, line.trim_end_matches('\r')))
    }

    fn peek_starts_with(&self, prefix: &str) -> bool {
        self.text[self.pos..].starts_with(prefix)
    }
}

fn corrupt(offset: usize, message: impl Into<String>) -> Error {
    Error::Corrupt {
        offset,
        message: message.into(),
    }
}

fn parse_num<T: std::str::FromStr>(tok: Option<&str>, offset: usize, what: &str) -> Result<T> {
    tok.and_then(|t| t.parse().ok())
        .ok_or_else(|| corrupt(offset, format!("bad or missing {what}")))
}

fn expect_word(tok: Option<&str>, word: &str, offset: usize) -> Result<()> {
    if tok == Some(word) {
        Ok(())
    } else {
        Err(corrupt(offset, format!("expected `{word}`, found {tok:?}")))
    }
}

fn read_block(lines: &mut Lines<'_>, name: &str, shape: (usize, usize)) -> Result<Matrix> {
    let (off, header) = lines.next(&format!("block {name}"))?;
    let mut toks = header.split_whitespace();
    expect_word(toks.next(), "block", off)?;
    expect_word(toks.next(), name, off)?;
    let rows: usize = parse_num(toks.next(), off, "row count")?;
    let cols: usize = parse_num(toks.next(), off, "column count")?;
    if (rows, cols) != shape {
        return Err(corrupt(
            off,
            format!("block {name} is {rows}x{cols}, header implies {}x{}", shape.0, shape.1),
        ));
    }
    let mut data = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        let (off, line) = lines.next(&format!("row {r} of block {name}"))?;
        let before = data.len();
        for tok in line.split_whitespace() {
            let v: f64 = parse_num(Some(tok), off, "weight")?;
            if !v.is_finite() {
                return Err(corrupt(off, "non-finite weight"));
            }
            data.push(v);
        }
        if data.len() - before != cols {
            return Err(corrupt(
                off,
                format!("row {r} of block {name} has {} values, expected {cols}", data.len() - before),
            ));
        }
    }
    Ok(Matrix::from_vec(rows, cols, data).expect("shape checked"))
}

pub fn parse_model(text: &str) -> Result<ModelParams> {
    let mut lines = Lines { text, pos: 0 };
    let magic = text.lines().next().unwrap_or("");
    let mut toks = magic.split_whitespace();
    if toks.next() != Some(MODEL_MAGIC) {
        return Err(Error::Format(format!("missing `{MODEL_MAGIC}` magic line")));
    }
    match toks.next() {
        Some(MODEL_VERSION) => {}
        Some(v) => return Err(Error::Version(v.to_string())),
        None => return Err(Error::Format("magic line lacks a version".into())),
    }
    lines.next("magic line")?;

    let (off, header) = lines.next("header line")?;
    let mut toks = header.split_whitespace();
    expect_word(toks.next(), "input", off)?;
    let input: usize = parse_num(toks.next(), off, "input size")?;
    expect_word(toks.next(), "layers", off)?;
    let n_layers: usize = parse_num(toks.next(), off, "layer count")?;
    expect_word(toks.next(), "hidden", off)?;
    let hidden: Vec<usize> = (0..n_layers)
        .map(|_| parse_num(toks.next(), off, "hidden size"))
        .collect::<Result<_>>()?;
    expect_word(toks.next(), "output", off)?;
    let output: usize = parse_num(toks.next(), off, "output size")?;
    expect_word(toks.next(), "loss", off)?;
    let loss: LossMode = toks
        .next()
        .ok_or_else(|| corrupt(off, "missing loss mode"))?
        .parse()
        .map_err(|_| corrupt(off, "unknown loss mode"))?;
    if toks.next().is_some() {
        return Err(corrupt(off, "trailing tokens on header line"));
    }
    if input != 1 || output != 1 || n_layers == 0 || hidden.contains(&0) {
        return Err(corrupt(
            off,
            format!("unsupported shape: input {input}, output {output}, hidden {hidden:?}"),
        ));
    }

    let mut window = None;
    if lines.peek_starts_with("window ") {
        let (off, line) = lines.next("window line")?;
        let w: usize = parse_num(line.split_whitespace().nth(1), off, "window length")?;
        if w == 0 {
            return Err(corrupt(off, "window length must be positive"));
        }
        window = Some(w);
    }
    let mut scaler = None;
    if lines.peek_starts_with("scaler ") {
        let (off, line) = lines.next("scaler line")?;
        let mut t = line.split_whitespace().skip(1);
        let min: f64 = parse_num(t.next(), off, "scaler min")?;
        let max: f64 = parse_num(t.next(), off, "scaler max")?;
        scaler = Some(MinMaxScaler::new(min, max).map_err(|e| corrupt(off, e.to_string()))?);
    }

    let mut layers = Vec::with_capacity(n_layers);
    let mut layer_in = input;
    for &h in &hidden {
        let mut layer = LayerParams::zeros(layer_in, h);
        for (name, slot) in LAYER_BLOCK_NAMES.iter().zip(layer.blocks_mut()) {
            *slot = read_block(&mut lines, name, block_shape(name, layer_in, h))?;
        }
        layers.push(layer);
        layer_in = h;
    }
    let head = read_block(&mut lines, HEAD_BLOCK_NAME, (output, layer_in))?;
    if !text[lines.pos..].trim().is_empty() {
        return Err(corrupt(lines.pos, "trailing content after head block"));
    }
    let mut model = ModelParams::new(layers, head, loss)?;
    model.window = window;
    model.scaler = scaler;
    Ok(model)
}
