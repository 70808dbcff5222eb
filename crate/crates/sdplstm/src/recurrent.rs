//! Recurrent cells over embedding sequences: an LSTM and a plain
//! tanh RNN baseline, with exact backpropagation through time.
//!
//! One LSTM step, with `.` for matrix-vector products and `*` for
//! elementwise products:
//!
//! ```text
//! i_t = sigmoid(W_i . x_t + U_i . h_{t-1} + b_i)
//! f_t = sigmoid(W_f . x_t + U_f . h_{t-1} + b_f)
//! o_t = sigmoid(W_o . x_t + U_o . h_{t-1} + b_o)
//! g_t =    tanh(W_g . x_t + U_g . h_{t-1} + b_g)
//! c_t = i_t * g_t + f_t * c_{t-1}
//! h_t = o_t * tanh(c_t)
//! ```
//!
//! The baseline cell is `h_t = tanh(W_in . x_t + W_rec . h_{t-1} + b)`.
//! Both start from zero initial state. Sequences here are dependency
//! sub-paths, a handful of steps, so forward passes keep a full tape and
//! the backward pass replays it exactly.
//!
//! Inner-cell dropout can mask any subset of {i, g, o, c, h} with an
//! inverted mask drawn per step (order i, g, o, c, h). Masks live on the
//! tape, so the backward pass differentiates the masked computation.

use crate::channels::dropout_mask;
use crate::numerics::{hadamard, sigmoid, tanh, Matrix, Rng, Vector};

#[derive(Clone, Debug, PartialEq)]
pub struct LstmParams {
    pub w_i: Matrix,
    pub w_f: Matrix,
    pub w_o: Matrix,
    pub w_g: Matrix,
    pub u_i: Matrix,
    pub u_f: Matrix,
    pub u_o: Matrix,
    pub u_g: Matrix,
    pub b_i: Vector,
    pub b_f: Vector,
    pub b_o: Vector,
    pub b_g: Vector,
}

impl LstmParams {
    pub fn zeros(hidden: usize, input: usize) -> Self {
        LstmParams {
            w_i: Matrix::zeros(hidden, input),
            w_f: Matrix::zeros(hidden, input),
            w_o: Matrix::zeros(hidden, input),
            w_g: Matrix::zeros(hidden, input),
            u_i: Matrix::zeros(hidden, hidden),
            u_f: Matrix::zeros(hidden, hidden),
            u_o: Matrix::zeros(hidden, hidden),
            u_g: Matrix::zeros(hidden, hidden),
            b_i: Vector::zeros(hidden),
            b_f: Vector::zeros(hidden),
            b_o: Vector::zeros(hidden),
            b_g: Vector::zeros(hidden),
        }
    }

    /// Input and recurrent weights drawn uniform in [-r, r] with
    /// r = 1/sqrt(fan-in); biases start at zero. Draw order is fixed:
    /// W_i, W_f, W_o, W_g, then U_i, U_f, U_o, U_g.
    pub fn init(hidden: usize, input: usize, rng: &mut Rng) -> Self {
        let mut p = LstmParams::zeros(hidden, input);
        let rw = 1.0 / (input as f64).sqrt();
        let ru = 1.0 / (hidden as f64).sqrt();
        for m in [&mut p.w_i, &mut p.w_f, &mut p.w_o, &mut p.w_g] {
            m.fill_uniform(rng, -rw, rw);
        }
        for m in [&mut p.u_i, &mut p.u_f, &mut p.u_o, &mut p.u_g] {
            m.fill_uniform(rng, -ru, ru);
        }
        p
    }

    pub fn hidden(&self) -> usize {
        self.w_i.rows()
    }

    pub fn input(&self) -> usize {
        self.w_i.cols()
    }
}

/// Which inner-cell quantities dropout may mask.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CellTargets {
    pub i: bool,
    pub g: bool,
    pub o: bool,
    pub c: bool,
    pub h: bool,
}

impl CellTargets {
    pub fn all() -> Self {
        CellTargets { i: true, g: true, o: true, c: true, h: true }
    }

    pub fn none() -> Self {
        CellTargets { i: false, g: false, o: false, c: false, h: false }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CellDropout {
    pub rate: f64,
    pub targets: CellTargets,
}

/// Per-step dropout masks; `None` means no mask on that quantity.
#[derive(Clone, Debug, Default)]
pub struct StepMasks {
    pub i: Option<Vector>,
    pub g: Option<Vector>,
    pub o: Option<Vector>,
    pub c: Option<Vector>,
    pub h: Option<Vector>,
}

impl StepMasks {
    pub fn none() -> Self {
        StepMasks::default()
    }

    /// Draws masks for the enabled targets in the fixed order
    /// i, g, o, c, h.
    pub fn sample(hidden: usize, dropout: &CellDropout, rng: &mut Rng) -> Self {
        if dropout.rate == 0.0 {
            return StepMasks::none();
        }
        let mut draw = |on: bool| on.then(|| dropout_mask(hidden, dropout.rate, rng));
        StepMasks {
            i: draw(dropout.targets.i),
            g: draw(dropout.targets.g),
            o: draw(dropout.targets.o),
            c: draw(dropout.targets.c),
            h: draw(dropout.targets.h),
        }
    }
}

fn apply_mask(v: &Vector, mask: &Option<Vector>) -> Vector {
    match mask {
        Some(m) => hadamard(v, m),
        None => v.clone(),
    }
}

/// Everything the backward pass needs about one step.
#[derive(Clone, Debug)]
struct LstmStep {
    x: Vector,
    h_prev: Vector,
    c_prev: Vector,
    i_raw: Vector,
    f_raw: Vector,
    o_raw: Vector,
    g_raw: Vector,
    masks: StepMasks,
    tanh_c: Vector,
}

#[derive(Clone, Debug)]
pub struct LstmTape {
    steps: Vec<LstmStep>,
    hidden: usize,
    input: usize,
}

impl LstmTape {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// One LSTM step from `(h_prev, c_prev)`; returns the new state and the
/// step record.
fn lstm_step(
    p: &LstmParams,
    x: &Vector,
    h_prev: &Vector,
    c_prev: &Vector,
    masks: StepMasks,
) -> (Vector, Vector, LstmStep) {
    let pre = |w: &Matrix, u: &Matrix, b: &Vector| {
        let mut a = w.matvec(x);
        a.add_assign(&u.matvec(h_prev));
        a.add_assign(b);
        a
    };
    let i_raw = sigmoid(&pre(&p.w_i, &p.u_i, &p.b_i));
    let f_raw = sigmoid(&pre(&p.w_f, &p.u_f, &p.b_f));
    let o_raw = sigmoid(&pre(&p.w_o, &p.u_o, &p.b_o));
    let g_raw = tanh(&pre(&p.w_g, &p.u_g, &p.b_g));

    let i = apply_mask(&i_raw, &masks.i);
    let g = apply_mask(&g_raw, &masks.g);
    let o = apply_mask(&o_raw, &masks.o);

    let mut c_pre = hadamard(&i, &g);
    c_pre.add_assign(&hadamard(&f_raw, c_prev));
    let c = apply_mask(&c_pre, &masks.c);
    let tanh_c = tanh(&c);
    let h_pre = hadamard(&o, &tanh_c);
    let h = apply_mask(&h_pre, &masks.h);

    let step = LstmStep {
        x: x.clone(),
        h_prev: h_prev.clone(),
        c_prev: c_prev.clone(),
        i_raw,
        f_raw,
        o_raw,
        g_raw,
        masks,
        tanh_c,
    };
    (h, c, step)
}

/// Runs the cell over a whole sequence from zero initial state. With
/// `dropout` given, fresh masks are drawn per step; draw order is part of
/// the format and never depends on parameter values.
pub fn lstm_forward(
    p: &LstmParams,
    xs: &[Vector],
    mut dropout: Option<(&CellDropout, &mut Rng)>,
) -> (Vec<Vector>, LstmTape) {
    let hidden = p.hidden();
    let mut h = Vector::zeros(hidden);
    let mut c = Vector::zeros(hidden);
    let mut hs = Vec::with_capacity(xs.len());
    let mut steps = Vec::with_capacity(xs.len());
    for x in xs {
        assert_eq!(
            x.len(),
            p.input(),
            "lstm_forward: input dim mismatch: {} vs {}",
            x.len(),
            p.input()
        );
        let masks = match dropout.as_mut() {
            Some((cd, rng)) => StepMasks::sample(hidden, cd, rng),
            None => StepMasks::none(),
        };
        let (h_new, c_new, step) = lstm_step(p, x, &h, &c, masks);
        h = h_new;
        c = c_new;
        hs.push(h.clone());
        steps.push(step);
    }
    (hs, LstmTape { steps, hidden, input: p.input() })
}

/// Gradients with the same shapes as [`LstmParams`].
#[derive(Clone, Debug, PartialEq)]
pub struct LstmGrads {
    pub w_i: Matrix,
    pub w_f: Matrix,
    pub w_o: Matrix,
    pub w_g: Matrix,
    pub u_i: Matrix,
    pub u_f: Matrix,
    pub u_o: Matrix,
    pub u_g: Matrix,
    pub b_i: Vector,
    pub b_f: Vector,
    pub b_o: Vector,
    pub b_g: Vector,
}

impl LstmGrads {
    pub fn zeros_like(p: &LstmParams) -> Self {
        LstmGrads {
            w_i: Matrix::zeros(p.w_i.rows(), p.w_i.cols()),
            w_f: Matrix::zeros(p.w_f.rows(), p.w_f.cols()),
            w_o: Matrix::zeros(p.w_o.rows(), p.w_o.cols()),
            w_g: Matrix::zeros(p.w_g.rows(), p.w_g.cols()),
            u_i: Matrix::zeros(p.u_i.rows(), p.u_i.cols()),
            u_f: Matrix::zeros(p.u_f.rows(), p.u_f.cols()),
            u_o: Matrix::zeros(p.u_o.rows(), p.u_o.cols()),
            u_g: Matrix::zeros(p.u_g.rows(), p.u_g.cols()),
            b_i: Vector::zeros(p.b_i.len()),
            b_f: Vector::zeros(p.b_f.len()),
            b_o: Vector::zeros(p.b_o.len()),
            b_g: Vector::zeros(p.b_g.len()),
        }
    }

    pub fn add_assign(&mut self, other: &LstmGrads) {
        self.w_i.add_assign(&other.w_i);
        self.w_f.add_assign(&other.w_f);
        self.w_o.add_assign(&other.w_o);
        self.w_g.add_assign(&other.w_g);
        self.u_i.add_assign(&other.u_i);
        self.u_f.add_assign(&other.u_f);
        self.u_o.add_assign(&other.u_o);
        self.u_g.add_assign(&other.u_g);
        self.b_i.add_assign(&other.b_i);
        self.b_f.add_assign(&other.b_f);
        self.b_o.add_assign(&other.b_o);
        self.b_g.add_assign(&other.b_g);
    }
}

/// Full backward pass through the tape. `grad_hs[t]` is dLoss/dh_t from
/// downstream; returns parameter gradients and dLoss/dx_t per step.
pub fn lstm_backward(p: &LstmParams, tape: &LstmTape, grad_hs: &[Vector]) -> (LstmGrads, Vec<Vector>) {
    assert_eq!(
        grad_hs.len(),
        tape.len(),
        "lstm_backward: {} hidden grads for {} steps",
        grad_hs.len(),
        tape.len()
    );
    let mut grads = LstmGrads::zeros_like(p);
    let mut dxs = vec![Vector::zeros(tape.input); tape.len()];
    let mut dh_carry = Vector::zeros(tape.hidden);
    let mut dc_carry = Vector::zeros(tape.hidden);

    for (t, step) in tape.steps.iter().enumerate().rev() {
        let mut dh = grad_hs[t].clone();
        dh.add_assign(&dh_carry);

        let dh_pre = apply_mask(&dh, &step.masks.h);
        let o_m = apply_mask(&step.o_raw, &step.masks.o);
        let i_m = apply_mask(&step.i_raw, &step.masks.i);
        let g_m = apply_mask(&step.g_raw, &step.masks.g);

        let do_m = hadamard(&dh_pre, &step.tanh_c);
        let dtc = hadamard(&dh_pre, &o_m);

        let mut dc = dc_carry.clone();
        for j in 0..tape.hidden {
            dc[j] += dtc[j] * (1.0 - step.tanh_c[j] * step.tanh_c[j]);
        }
        let dc_pre = apply_mask(&dc, &step.masks.c);

        let di_m = hadamard(&dc_pre, &g_m);
        let dg_m = hadamard(&dc_pre, &i_m);
        let df_raw = hadamard(&dc_pre, &step.c_prev);
        dc_carry = hadamard(&dc_pre, &step.f_raw);

        let di_raw = apply_mask(&di_m, &step.masks.i);
        let dg_raw = apply_mask(&dg_m, &step.masks.g);
        let do_raw = apply_mask(&do_m, &step.masks.o);

        let gate_back = |raw: &Vector, draw: &Vector, sigmoid_gate: bool| {
            let mut da = Vector::zeros(tape.hidden);
            for j in 0..tape.hidden {
                let d = if sigmoid_gate {
                    raw[j] * (1.0 - raw[j])
                } else {
                    1.0 - raw[j] * raw[j]
                };
                da[j] = draw[j] * d;
            }
            da
        };
        let da_i = gate_back(&step.i_raw, &di_raw, true);
        let da_f = gate_back(&step.f_raw, &df_raw, true);
        let da_o = gate_back(&step.o_raw, &do_raw, true);
        let da_g = gate_back(&step.g_raw, &dg_raw, false);

        grads.w_i.add_outer(&da_i, &step.x);
        grads.w_f.add_outer(&da_f, &step.x);
        grads.w_o.add_outer(&da_o, &step.x);
        grads.w_g.add_outer(&da_g, &step.x);
        grads.u_i.add_outer(&da_i, &step.h_prev);
        grads.u_f.add_outer(&da_f, &step.h_prev);
        grads.u_o.add_outer(&da_o, &step.h_prev);
        grads.u_g.add_outer(&da_g, &step.h_prev);
        grads.b_i.add_assign(&da_i);
        grads.b_f.add_assign(&da_f);
        grads.b_o.add_assign(&da_o);
        grads.b_g.add_assign(&da_g);

        let mut dx = p.w_i.matvec_t(&da_i);
        dx.add_assign(&p.w_f.matvec_t(&da_f));
        dx.add_assign(&p.w_o.matvec_t(&da_o));
        dx.add_assign(&p.w_g.matvec_t(&da_g));
        dxs[t] = dx;

        dh_carry = p.u_i.matvec_t(&da_i);
        dh_carry.add_assign(&p.u_f.matvec_t(&da_f));
        dh_carry.add_assign(&p.u_o.matvec_t(&da_o));
        dh_carry.add_assign(&p.u_g.matvec_t(&da_g));
    }
    (grads, dxs)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RnnParams {
    pub w_in: Matrix,
    pub w_rec: Matrix,
    pub b: Vector,
}

impl RnnParams {
    pub fn zeros(hidden: usize, input: usize) -> Self {
        RnnParams {
            w_in: Matrix::zeros(hidden, input),
            w_rec: Matrix::zeros(hidden, hidden),
            b: Vector::zeros(hidden),
        }
    }

    /// Same initialization scheme as the LSTM; draw order W_in, W_rec.
    pub fn init(hidden: usize, input: usize, rng: &mut Rng) -> Self {
        let mut p = RnnParams::zeros(hidden, input);
        p.w_in.fill_uniform(rng, -1.0 / (input as f64).sqrt(), 1.0 / (input as f64).sqrt());
        p.w_rec.fill_uniform(rng, -1.0 / (hidden as f64).sqrt(), 1.0 / (hidden as f64).sqrt());
        p
    }

    pub fn hidden(&self) -> usize {
        self.w_in.rows()
    }

    pub fn input(&self) -> usize {
        self.w_in.cols()
    }
}

#[derive(Clone, Debug)]
struct RnnStep {
    x: Vector,
    h_prev: Vector,
    h: Vector,
}

#[derive(Clone, Debug)]
pub struct RnnTape {
    steps: Vec<RnnStep>,
    hidden: usize,
    input: usize,
}

pub fn rnn_forward(p: &RnnParams, xs: &[Vector]) -> (Vec<Vector>, RnnTape) {
    let mut h = Vector::zeros(p.hidden());
    let mut hs = Vec::with_capacity(xs.len());
    let mut steps = Vec::with_capacity(xs.len());
    for x in xs {
        assert_eq!(
            x.len(),
            p.input(),
            "rnn_forward: input dim mismatch: {} vs {}",
            x.len(),
            p.input()
        );
        let mut a = p.w_in.matvec(x);
        a.add_assign(&p.w_rec.matvec(&h));
        a.add_assign(&p.b);
        let h_new = tanh(&a);
        steps.push(RnnStep { x: x.clone(), h_prev: h.clone(), h: h_new.clone() });
        h = h_new;
        hs.push(h.clone());
    }
    (hs, RnnTape { steps, hidden: p.hidden(), input: p.input() })
}

#[derive(Clone, Debug, PartialEq)]
pub struct RnnGrads {
    pub w_in: Matrix,
    pub w_rec: Matrix,
    pub b: Vector,
}

impl RnnGrads {
    pub fn zeros_like(p: &RnnParams) -> Self {
        RnnGrads {
            w_in: Matrix::zeros(p.w_in.rows(), p.w_in.cols()),
            w_rec: Matrix::zeros(p.w_rec.rows(), p.w_rec.cols()),
            b: Vector::zeros(p.b.len()),
        }
    }

    pub fn add_assign(&mut self, other: &RnnGrads) {
        self.w_in.add_assign(&other.w_in);
        self.w_rec.add_assign(&other.w_rec);
        self.b.add_assign(&other.b);
    }
}

pub fn rnn_backward(p: &RnnParams, tape: &RnnTape, grad_hs: &[Vector]) -> (RnnGrads, Vec<Vector>) {
    assert_eq!(
        grad_hs.len(),
        tape.steps.len(),
        "rnn_backward: {} hidden grads for {} steps",
        grad_hs.len(),
        tape.steps.len()
    );
    let mut grads = RnnGrads::zeros_like(p);
    let mut dxs = vec![Vector::zeros(tape.input); tape.steps.len()];
    let mut dh_carry = Vector::zeros(tape.hidden);

    for (t, step) in tape.steps.iter().enumerate().rev() {
        let mut dh = grad_hs[t].clone();
        dh.add_assign(&dh_carry);
        let mut da = Vector::zeros(tape.hidden);
        for j in 0..tape.hidden {
            da[j] = dh[j] * (1.0 - step.h[j] * step.h[j]);
        }
        grads.w_in.add_outer(&da, &step.x);
        grads.w_rec.add_outer(&da, &step.h_prev);
        grads.b.add_assign(&da);
        dxs[t] = p.w_in.matvec_t(&da);
        dh_carry = p.w_rec.matvec_t(&da);
    }
    (grads, dxs)
}

/// Elementwise max over the hidden states, with the earliest winning
/// timestep recorded per coordinate so the backward pass is
/// deterministic. An empty sequence pools to the zero vector with an
/// empty argmax record.
pub fn max_pool(hs: &[Vector], dim: usize) -> (Vector, Vec<usize>) {
    if hs.is_empty() {
        return (Vector::zeros(dim), Vec::new());
    }
    let mut out = hs[0].clone();
    let mut arg = vec![0; dim];
    for (t, h) in hs.iter().enumerate().skip(1) {
        assert_eq!(h.len(), dim, "max_pool: state dim mismatch: {} vs {dim}", h.len());
        for j in 0..dim {
            if h[j] > out[j] {
                out[j] = h[j];
                arg[j] = t;
            }
        }
    }
    (out, arg)
}

/// Routes each pooled coordinate's gradient to its recorded argmax
/// timestep; all other positions receive zero.
pub fn max_pool_backward(grad: &Vector, argmax: &[usize], steps: usize, dim: usize) -> Vec<Vector> {
    if argmax.is_empty() {
        assert_eq!(steps, 0, "max_pool_backward: empty argmax for {steps} steps");
        return Vec::new();
    }
    assert_eq!(grad.len(), dim, "max_pool_backward: grad dim {} vs {dim}", grad.len());
    let mut out = vec![Vector::zeros(dim); steps];
    for j in 0..dim {
        out[argmax[j]][j] += grad[j];
    }
    out
}
