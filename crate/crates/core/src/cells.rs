//! GRU and LSTM cells with a full-sequence forward pass and exact
//! backpropagation through time.
//!
//! Gate conventions, for input `x_t` and previous state `h_{t-1}`:
//!
//! GRU (gate order `[z, r, n]`):
//! ```text
//! z_t = σ(W_z x_t + U_z h_{t-1} + b_z)
//! r_t = σ(W_r x_t + U_r h_{t-1} + b_r)
//! n_t = tanh(W_n x_t + U_n (r_t ⊙ h_{t-1}) + b_n)
//! h_t = (1 - z_t) ⊙ h_{t-1} + z_t ⊙ n_t
//! ```
//!
//! LSTM (gate order `[i, f, g, o]`):
//! ```text
//! c_t = f_t ⊙ c_{t-1} + i_t ⊙ g_t
//! h_t = o_t ⊙ tanh(c_t)
//! ```
//!
//! `z_t` admits new content, so an all-zero GRU halves its state each step.

use std::fmt;
use std::ops::{Deref, DerefMut};
use std::str::FromStr;

use crate::error::{check_dim, Error, Result};
use crate::math::{sigmoid_scalar, tanh_scalar, Matrix, Rng, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CellKind {
    Gru,
    Lstm,
}

impl CellKind {
    pub fn num_gates(self) -> usize {
        match self {
            CellKind::Gru => 3,
            CellKind::Lstm => 4,
        }
    }
}

impl fmt::Display for CellKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CellKind::Gru => "gru",
            CellKind::Lstm => "lstm",
        })
    }
}

impl FromStr for CellKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gru" => Ok(CellKind::Gru),
            "lstm" => Ok(CellKind::Lstm),
            other => Err(Error::param("cell", format!("unknown cell kind `{other}`"))),
        }
    }
}

/// Weights of one gate: input-to-hidden, hidden-to-hidden and bias.
#[derive(Debug, Clone, PartialEq)]
pub struct GateBlock {
    pub input: Matrix,
    pub recurrent: Matrix,
    pub bias: Vector,
}

impl GateBlock {
    fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        GateBlock {
            input: Matrix::zeros(hidden_dim, input_dim),
            recurrent: Matrix::zeros(hidden_dim, hidden_dim),
            bias: Vector::zeros(hidden_dim),
        }
    }
}

/// Every learnable block of a classifier, in declaration order:
/// gates (each `input`, `recurrent`, `bias`), then `readout`, `readout_bias`.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    pub gates: Vec<GateBlock>,
    pub readout: Matrix,
    pub readout_bias: Vector,
}

impl Weights {
    pub fn zeros(kind: CellKind, input_dim: usize, hidden_dim: usize, num_classes: usize) -> Self {
        Weights {
            gates: (0..kind.num_gates())
                .map(|_| GateBlock::zeros(input_dim, hidden_dim))
                .collect(),
            readout: Matrix::zeros(num_classes, hidden_dim),
            readout_bias: Vector::zeros(num_classes),
        }
    }

    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(3 * self.gates.len() + 2);
        for g in &self.gates {
            out.push(g.input.as_slice());
            out.push(g.recurrent.as_slice());
            out.push(g.bias.as_slice());
        }
        out.push(self.readout.as_slice());
        out.push(self.readout_bias.as_slice());
        out
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(3 * self.gates.len() + 2);
        for g in &mut self.gates {
            out.push(g.input.as_mut_slice());
            out.push(g.recurrent.as_mut_slice());
            out.push(&mut g.bias[..]);
        }
        out.push(self.readout.as_mut_slice());
        out.push(&mut self.readout_bias[..]);
        out
    }

    pub fn len(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.slices().concat()
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        check_dim("flat parameters", self.len(), flat.len())?;
        let mut offset = 0;
        for s in self.slices_mut() {
            s.copy_from_slice(&flat[offset..offset + s.len()]);
            offset += s.len();
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }
}

/// Learnable parameters of one gated cell plus its linear readout head.
#[derive(Debug, Clone, PartialEq)]
pub struct CellParams {
    pub kind: CellKind,
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub num_classes: usize,
    pub weights: Weights,
}

impl CellParams {
    pub fn zeros(kind: CellKind, input_dim: usize, hidden_dim: usize, num_classes: usize) -> Self {
        CellParams {
            kind,
            input_dim,
            hidden_dim,
            num_classes,
            weights: Weights::zeros(kind, input_dim, hidden_dim, num_classes),
        }
    }

    /// Weights uniform in ±1/√k, biases zero except LSTM forget-gate biases (1.0).
    pub fn init(
        kind: CellKind,
        input_dim: usize,
        hidden_dim: usize,
        num_classes: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        if input_dim == 0 || hidden_dim == 0 {
            return Err(Error::param("dims", "input_dim and hidden_dim must be positive"));
        }
        if num_classes < 2 {
            return Err(Error::param("num_classes", "need at least 2 classes"));
        }
        let mut params = CellParams::zeros(kind, input_dim, hidden_dim, num_classes);
        let bound = 1.0 / (hidden_dim as f64).sqrt();
        let w = &mut params.weights;
        for g in &mut w.gates {
            for v in g.input.as_mut_slice() {
                *v = rng.uniform(-bound, bound);
            }
            for v in g.recurrent.as_mut_slice() {
                *v = rng.uniform(-bound, bound);
            }
        }
        for v in w.readout.as_mut_slice() {
            *v = rng.uniform(-bound, bound);
        }
        if kind == CellKind::Lstm {
            w.gates[1].bias.fill(1.0);
        }
        Ok(params)
    }

    /// Checks that every block agrees with the declared dimensions.
    pub fn validate(&self) -> Result<()> {
        let (d, k, c) = (self.input_dim, self.hidden_dim, self.num_classes);
        let w = &self.weights;
        check_dim("gate count", self.kind.num_gates(), w.gates.len())?;
        for g in &w.gates {
            check_dim("gate input rows", k, g.input.rows())?;
            check_dim("gate input cols", d, g.input.cols())?;
            check_dim("gate recurrent rows", k, g.recurrent.rows())?;
            check_dim("gate recurrent cols", k, g.recurrent.cols())?;
            check_dim("gate bias", k, g.bias.len())?;
        }
        check_dim("readout rows", c, w.readout.rows())?;
        check_dim("readout cols", k, w.readout.cols())?;
        check_dim("readout bias", c, w.readout_bias.len())?;
        if !w.is_finite() {
            return Err(Error::NonFinite("parameters".into()));
        }
        Ok(())
    }

    /// `V · h + c`
    pub fn logits(&self, h: &[f64]) -> Result<Vector> {
        let mut out = self.weights.readout.matvec(h)?;
        for (o, b) in out.iter_mut().zip(self.weights.readout_bias.iter()) {
            *o += b;
        }
        Ok(out)
    }

    pub fn zero_grads(&self) -> ParamGrads {
        ParamGrads(Weights::zeros(
            self.kind,
            self.input_dim,
            self.hidden_dim,
            self.num_classes,
        ))
    }
}

/// Gradient with respect to every block of a [`CellParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads(pub Weights);

impl Deref for ParamGrads {
    type Target = Weights;

    fn deref(&self) -> &Weights {
        &self.0
    }
}

impl DerefMut for ParamGrads {
    fn deref_mut(&mut self) -> &mut Weights {
        &mut self.0
    }
}

impl ParamGrads {
    pub fn add_assign(&mut self, other: &ParamGrads) {
        for (dst, src) in self.0.slices_mut().into_iter().zip(other.0.slices()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for s in self.0.slices_mut() {
            for v in s {
                *v *= factor;
            }
        }
    }

    pub fn norm(&self) -> f64 {
        self.0
            .slices()
            .iter()
            .flat_map(|s| s.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }
}

/// Post-activation gate values of one step: GRU `[z, r, n]`, LSTM `[i, f, g, o]`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepCache {
    pub gates: Vec<Vector>,
    /// `tanh(c_t)`, LSTM only.
    pub cell_tanh: Option<Vector>,
}

/// Hidden states `h_1..h_T` of one forward pass plus everything backward needs.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenTrajectory {
    pub kind: CellKind,
    pub inputs: Vec<Vector>,
    pub h0: Vector,
    pub c0: Option<Vector>,
    pub states: Vec<Vector>,
    pub cells: Option<Vec<Vector>>,
    pub cache: Vec<StepCache>,
}

impl HiddenTrajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn last(&self) -> &Vector {
        self.states.last().expect("trajectory has at least one step")
    }

    fn prev_state(&self, t: usize) -> &Vector {
        if t == 0 {
            &self.h0
        } else {
            &self.states[t - 1]
        }
    }

    fn prev_cell(&self, t: usize) -> &Vector {
        if t == 0 {
            self.c0.as_ref().expect("LSTM trajectory has c0")
        } else {
            &self.cells.as_ref().expect("LSTM trajectory has cells")[t - 1]
        }
    }
}

/// Result of backpropagating through one trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Backward {
    /// Gradients of the recurrent blocks. Readout blocks are left at zero.
    pub grads: ParamGrads,
    pub dh0: Vector,
    pub dc0: Option<Vector>,
}

fn check_inputs(params: &CellParams, inputs: &[Vector]) -> Result<()> {
    if inputs.is_empty() {
        return Err(Error::SequenceTooShort { len: 0, min: 1 });
    }
    for x in inputs {
        check_dim("input length", params.input_dim, x.len())?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("input sequence".into()));
        }
    }
    Ok(())
}

/// Pre-activation `W x + U h + b` of one gate.
fn preactivation(gate: &GateBlock, x: &[f64], h: &[f64]) -> Vec<f64> {
    let mut a = gate.bias.as_slice().to_vec();
    gate.input.matvec_acc(x, &mut a);
    gate.recurrent.matvec_acc(h, &mut a);
    a
}

fn map(v: Vec<f64>, f: fn(f64) -> f64) -> Vector {
    Vector::from_raw(v.into_iter().map(f).collect())
}

/// Runs the cell over `inputs` from the initial state `h0` (and `c0` for
/// LSTM; `None` means zeros).
pub fn forward(
    params: &CellParams,
    inputs: &[Vector],
    h0: &Vector,
    c0: Option<&Vector>,
) -> Result<HiddenTrajectory> {
    check_inputs(params, inputs)?;
    let k = params.hidden_dim;
    check_dim("h0 length", k, h0.len())?;
    match params.kind {
        CellKind::Gru => {
            if c0.is_some() {
                return Err(Error::param("c0", "GRU has no cell state"));
            }
            Ok(forward_gru(params, inputs, h0))
        }
        CellKind::Lstm => {
            let c0 = match c0 {
                Some(c) => {
                    check_dim("c0 length", k, c.len())?;
                    c.clone()
                }
                None => Vector::zeros(k),
            };
            Ok(forward_lstm(params, inputs, h0, c0))
        }
    }
}

/// Forward pass from zero initial state(s), as used by the classifier.
pub fn forward_from_zero(params: &CellParams, inputs: &[Vector]) -> Result<HiddenTrajectory> {
    forward(params, inputs, &Vector::zeros(params.hidden_dim), None)
}

fn forward_gru(params: &CellParams, inputs: &[Vector], h0: &Vector) -> HiddenTrajectory {
    let gates = &params.weights.gates;
    let mut states = Vec::with_capacity(inputs.len());
    let mut cache = Vec::with_capacity(inputs.len());
    let mut h = h0.clone();
    for x in inputs {
        let z = map(preactivation(&gates[0], x, &h), sigmoid_scalar);
        let r = map(preactivation(&gates[1], x, &h), sigmoid_scalar);
        let rh: Vec<f64> = r.iter().zip(h.iter()).map(|(r, h)| r * h).collect();
        let n = map(preactivation(&gates[2], x, &rh), tanh_scalar);
        let next: Vec<f64> = (0..h.len())
            .map(|i| (1.0 - z[i]) * h[i] + z[i] * n[i])
            .collect();
        h = Vector::from_raw(next);
        states.push(h.clone());
        cache.push(StepCache {
            gates: vec![z, r, n],
            cell_tanh: None,
        });
    }
    HiddenTrajectory {
        kind: CellKind::Gru,
        inputs: inputs.to_vec(),
        h0: h0.clone(),
        c0: None,
        states,
        cells: None,
        cache,
    }
}

fn forward_lstm(
    params: &CellParams,
    inputs: &[Vector],
    h0: &Vector,
    c0: Vector,
) -> HiddenTrajectory {
    let gates = &params.weights.gates;
    let k = params.hidden_dim;
    let mut states = Vec::with_capacity(inputs.len());
    let mut cells = Vec::with_capacity(inputs.len());
    let mut cache = Vec::with_capacity(inputs.len());
    let mut h = h0.clone();
    let mut c = c0.clone();
    for x in inputs {
        let i = map(preactivation(&gates[0], x, &h), sigmoid_scalar);
        let f = map(preactivation(&gates[1], x, &h), sigmoid_scalar);
        let g = map(preactivation(&gates[2], x, &h), tanh_scalar);
        let o = map(preactivation(&gates[3], x, &h), sigmoid_scalar);
        c = Vector::from_raw((0..k).map(|j| f[j] * c[j] + i[j] * g[j]).collect());
        let tc = Vector::from_raw(c.iter().map(|&v| tanh_scalar(v)).collect());
        h = Vector::from_raw((0..k).map(|j| o[j] * tc[j]).collect());
        states.push(h.clone());
        cells.push(c.clone());
        cache.push(StepCache {
            gates: vec![i, f, g, o],
            cell_tanh: Some(tc),
        });
    }
    HiddenTrajectory {
        kind: CellKind::Lstm,
        inputs: inputs.to_vec(),
        h0: h0.clone(),
        c0: Some(c0),
        states,
        cells: Some(cells),
        cache,
    }
}

/// Backpropagates per-step upstream gradients `dl_dh[t] = ∂L/∂h_{t+1}`
/// through the whole trajectory.
pub fn backward(
    params: &CellParams,
    trajectory: &HiddenTrajectory,
    dl_dh: &[Vector],
) -> Result<Backward> {
    let mut grads = params.zero_grads();
    let (dh0, dc0) = backward_into(params, trajectory, dl_dh, &mut grads)?;
    Ok(Backward { grads, dh0, dc0 })
}

/// Like [`backward`] but accumulates into `grads`. Returns `(dh0, dc0)`.
pub fn backward_into(
    params: &CellParams,
    trajectory: &HiddenTrajectory,
    dl_dh: &[Vector],
    grads: &mut ParamGrads,
) -> Result<(Vector, Option<Vector>)> {
    if trajectory.kind != params.kind {
        return Err(Error::param("trajectory", "cell kind differs from params"));
    }
    check_dim("upstream gradient steps", trajectory.len(), dl_dh.len())?;
    check_dim("gate count", params.kind.num_gates(), grads.gates.len())?;
    for g in dl_dh {
        check_dim("upstream gradient length", params.hidden_dim, g.len())?;
    }
    Ok(match params.kind {
        CellKind::Gru => (backward_gru(params, trajectory, dl_dh, grads), None),
        CellKind::Lstm => {
            let (dh0, dc0) = backward_lstm(params, trajectory, dl_dh, grads);
            (dh0, Some(dc0))
        }
    })
}

fn accumulate_gate(
    gate: &GateBlock,
    grad: &mut GateBlock,
    da: &[f64],
    x: &[f64],
    h_in: &[f64],
    dh_in: &mut [f64],
) {
    grad.input.add_outer(da, x);
    grad.recurrent.add_outer(da, h_in);
    for (b, d) in grad.bias.iter_mut().zip(da) {
        *b += d;
    }
    gate.recurrent.matvec_t_acc(da, dh_in);
}

fn backward_gru(
    params: &CellParams,
    tr: &HiddenTrajectory,
    dl_dh: &[Vector],
    grads: &mut ParamGrads,
) -> Vector {
    let k = params.hidden_dim;
    let gates = &params.weights.gates;
    let mut carry = vec![0.0; k];
    for t in (0..tr.len()).rev() {
        let x = &tr.inputs[t];
        let hp = tr.prev_state(t);
        let (z, r, n) = (&tr.cache[t].gates[0], &tr.cache[t].gates[1], &tr.cache[t].gates[2]);
        let dh: Vec<f64> = (0..k).map(|i| dl_dh[t][i] + carry[i]).collect();

        let mut dhp: Vec<f64> = (0..k).map(|i| dh[i] * (1.0 - z[i])).collect();
        let daz: Vec<f64> = (0..k)
            .map(|i| dh[i] * (n[i] - hp[i]) * z[i] * (1.0 - z[i]))
            .collect();
        let dan: Vec<f64> = (0..k)
            .map(|i| dh[i] * z[i] * (1.0 - n[i] * n[i]))
            .collect();

        let rh: Vec<f64> = (0..k).map(|i| r[i] * hp[i]).collect();
        let mut drh = vec![0.0; k];
        accumulate_gate(&gates[2], &mut grads.gates[2], &dan, x, &rh, &mut drh);
        let dar: Vec<f64> = (0..k)
            .map(|i| drh[i] * hp[i] * r[i] * (1.0 - r[i]))
            .collect();
        for i in 0..k {
            dhp[i] += drh[i] * r[i];
        }
        accumulate_gate(&gates[0], &mut grads.gates[0], &daz, x, hp, &mut dhp);
        accumulate_gate(&gates[1], &mut grads.gates[1], &dar, x, hp, &mut dhp);
        carry = dhp;
    }
    Vector::from_raw(carry)
}

fn backward_lstm(
    params: &CellParams,
    tr: &HiddenTrajectory,
    dl_dh: &[Vector],
    grads: &mut ParamGrads,
) -> (Vector, Vector) {
    let k = params.hidden_dim;
    let gates = &params.weights.gates;
    let mut carry_h = vec![0.0; k];
    let mut carry_c = vec![0.0; k];
    for t in (0..tr.len()).rev() {
        let x = &tr.inputs[t];
        let hp = tr.prev_state(t);
        let cp = tr.prev_cell(t);
        let step = &tr.cache[t];
        let (i, f, g, o) = (&step.gates[0], &step.gates[1], &step.gates[2], &step.gates[3]);
        let tc = step.cell_tanh.as_ref().expect("LSTM cache has tanh(c)");

        let mut da = vec![vec![0.0; k]; 4];
        let mut dcp = vec![0.0; k];
        for j in 0..k {
            let dh = dl_dh[t][j] + carry_h[j];
            let dc = carry_c[j] + dh * o[j] * (1.0 - tc[j] * tc[j]);
            da[0][j] = dc * g[j] * i[j] * (1.0 - i[j]);
            da[1][j] = dc * cp[j] * f[j] * (1.0 - f[j]);
            da[2][j] = dc * i[j] * (1.0 - g[j] * g[j]);
            da[3][j] = dh * tc[j] * o[j] * (1.0 - o[j]);
            dcp[j] = dc * f[j];
        }
        let mut dhp = vec![0.0; k];
        for (q, dq) in da.iter().enumerate() {
            accumulate_gate(&gates[q], &mut grads.gates[q], dq, x, hp, &mut dhp);
        }
        carry_h = dhp;
        carry_c = dcp;
    }
    (Vector::from_raw(carry_h), Vector::from_raw(carry_c))
}
