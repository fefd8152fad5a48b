//! The LrcSSM cell: gates, drift, explicit Euler step and the analytic
//! diagonal one-step Jacobian.
//!
//! Every state coordinate only sees its own previous value (plus the whole
//! input), so the Jacobian of one Euler step is diagonal by construction:
//!
//! ```text
//! f*_i = g_max_x_i σ(a_x_i x_i + b_x_i) + g_max_u_i σ((a_u u)_i + b_u_i) + g_leak_i
//! z*_i = k_max_x_i σ(a_x_i x_i + b_x_i) + k_max_u_i σ((a_u u)_i + b_u_i) + g_leak_i
//! ε*_i = w_x_i x_i + v_x_i + (w_u u)_i + v_u_i
//! ẋ_i  = -σ(f*_i) σ(ε*_i) x_i + tanh(z*_i) σ(ε*_i) e_leak_i
//! ```
//!
//! The input-only pre-activations `(a_u u)_i + b_u_i` and `(w_u u)_i + v_u_i`
//! are independent of the state, so [`Cell::drive`] computes them once per
//! time step and the solvers reuse them across Newton iterations.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Matrix;

#[inline]
pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Which terms of the transition may depend on the state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DependenceMode {
    /// `A(x,u)` and `b(x,u)`.
    #[default]
    Full,
    /// `A(u)` and `b(x,u)`: the state branch (`a_x`, `w_x`) is masked inside
    /// the gates that form `A` only.
    AInputOnly,
    /// `A(u)` and `b(u)`: additionally masks `k_max_x` and `w_x` in `b`.
    InputOnly,
}

impl DependenceMode {
    pub fn as_str(self) -> &'static str {
        match self {
            DependenceMode::Full => "full",
            DependenceMode::AInputOnly => "a_input_only",
            DependenceMode::InputOnly => "input_only",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(DependenceMode::Full),
            "a_input_only" => Ok(DependenceMode::AInputOnly),
            "input_only" => Ok(DependenceMode::InputOnly),
            other => Err(Error::config(format!(
                "unknown dependence mode '{other}' (expected full, a_input_only or input_only)"
            ))),
        }
    }

    #[inline]
    fn state_in_a(self) -> bool {
        self == DependenceMode::Full
    }

    #[inline]
    fn state_in_b(self) -> bool {
        self != DependenceMode::InputOnly
    }
}

/// Learnable parameters of one LRC layer with `D` states and `n` inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrcLayerParams {
    pub g_max_x: Vec<f64>,
    pub g_max_u: Vec<f64>,
    pub k_max_x: Vec<f64>,
    pub k_max_u: Vec<f64>,
    pub a_x: Vec<f64>,
    pub b_x: Vec<f64>,
    /// `D × n`
    pub a_u: Matrix,
    pub b_u_bias: Vec<f64>,
    pub g_leak: Vec<f64>,
    pub e_leak: Vec<f64>,
    pub w_x: Vec<f64>,
    pub v_x: Vec<f64>,
    /// `D × n`
    pub w_u: Matrix,
    pub v_u_bias: Vec<f64>,
}

impl LrcLayerParams {
    pub fn zeros(state_dim: usize, input_dim: usize) -> Self {
        let v = || vec![0.0; state_dim];
        Self {
            g_max_x: v(),
            g_max_u: v(),
            k_max_x: v(),
            k_max_u: v(),
            a_x: v(),
            b_x: v(),
            a_u: Matrix::zeros(state_dim, input_dim),
            b_u_bias: v(),
            g_leak: v(),
            e_leak: v(),
            w_x: v(),
            v_x: v(),
            w_u: Matrix::zeros(state_dim, input_dim),
            v_u_bias: v(),
        }
    }

    pub fn state_dim(&self) -> usize {
        self.g_max_x.len()
    }

    pub fn input_dim(&self) -> usize {
        self.a_u.cols()
    }

    /// Named parameter arrays in checkpoint order.
    pub fn tensors(&self) -> [(&'static str, &[f64]); 14] {
        [
            ("g_max_x", &self.g_max_x),
            ("g_max_u", &self.g_max_u),
            ("k_max_x", &self.k_max_x),
            ("k_max_u", &self.k_max_u),
            ("a_x", &self.a_x),
            ("b_x", &self.b_x),
            ("a_u", self.a_u.as_slice()),
            ("b_u_bias", &self.b_u_bias),
            ("g_leak", &self.g_leak),
            ("e_leak", &self.e_leak),
            ("w_x", &self.w_x),
            ("v_x", &self.v_x),
            ("w_u", self.w_u.as_slice()),
            ("v_u_bias", &self.v_u_bias),
        ]
    }

    pub fn tensors_mut(&mut self) -> [(&'static str, &mut [f64]); 14] {
        [
            ("g_max_x", &mut self.g_max_x),
            ("g_max_u", &mut self.g_max_u),
            ("k_max_x", &mut self.k_max_x),
            ("k_max_u", &mut self.k_max_u),
            ("a_x", &mut self.a_x),
            ("b_x", &mut self.b_x),
            ("a_u", self.a_u.as_mut_slice()),
            ("b_u_bias", &mut self.b_u_bias),
            ("g_leak", &mut self.g_leak),
            ("e_leak", &mut self.e_leak),
            ("w_x", &mut self.w_x),
            ("v_x", &mut self.v_x),
            ("w_u", self.w_u.as_mut_slice()),
            ("v_u_bias", &mut self.v_u_bias),
        ]
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// Checks shape consistency and finiteness.
    pub fn validate(&self) -> Result<()> {
        let d = self.state_dim();
        let n = self.input_dim();
        if d == 0 {
            return Err(Error::config("LRC layer needs at least one state"));
        }
        if self.a_u.rows() != d || self.w_u.rows() != d || self.w_u.cols() != n {
            return Err(Error::config(format!(
                "LRC input matrices must be {d}x{n}, got a_u {}x{}, w_u {}x{}",
                self.a_u.rows(),
                self.a_u.cols(),
                self.w_u.rows(),
                self.w_u.cols()
            )));
        }
        for (name, t) in self.tensors() {
            let expected = if name == "a_u" || name == "w_u" { d * n } else { d };
            if t.len() != expected {
                return Err(Error::config(format!(
                    "LRC parameter {name} has length {}, expected {expected}",
                    t.len()
                )));
            }
            if let Some(i) = t.iter().position(|v| !v.is_finite()) {
                return Err(Error::NumericOverflow {
                    context: format!("LRC parameter {name}"),
                    index: i,
                });
            }
        }
        Ok(())
    }

    /// Zeroes the state-branch parameters `a_x`, `w_x` and `k_max_x`, the
    /// ones [`DependenceMode::InputOnly`] never reads.
    pub fn zero_state_branch(&mut self) {
        for v in self
            .a_x
            .iter_mut()
            .chain(self.w_x.iter_mut())
            .chain(self.k_max_x.iter_mut())
        {
            *v = 0.0;
        }
    }
}

/// Pre-squash gate values `f*`, `z*`, `ε*`.
#[derive(Debug, Clone, PartialEq)]
pub struct GateValues {
    pub f_star: Vec<f64>,
    pub z_star: Vec<f64>,
    pub eps_star: Vec<f64>,
}

/// Evaluation options shared by every step of a layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellOptions {
    pub dt: f64,
    pub mode: DependenceMode,
    /// Radius `ρ ∈ (0.5, 1)`; maps `σ(f*)σ(ε*)` to `(1-ρ) + g(2ρ-1)` so the
    /// Euler coefficient `1 - dt·g'` lies in `[1-ρ, ρ]` for `dt = 1`.
    pub rho_clamp: Option<f64>,
}

impl Default for CellOptions {
    fn default() -> Self {
        Self {
            dt: 1.0,
            mode: DependenceMode::Full,
            rho_clamp: None,
        }
    }
}

impl CellOptions {
    pub fn with_dt(dt: f64) -> Self {
        Self {
            dt,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt >= 0.0) {
            return Err(Error::config(format!("dt must be finite and >= 0, got {}", self.dt)));
        }
        if let Some(rho) = self.rho_clamp {
            if !(rho > 0.5 && rho < 1.0) {
                return Err(Error::config(format!("rho_clamp must lie in (0.5, 1), got {rho}")));
            }
        }
        Ok(())
    }

    #[inline]
    fn clamp_coeffs(&self) -> (f64, f64) {
        match self.rho_clamp {
            Some(rho) => (1.0 - rho, 2.0 * rho - 1.0),
            None => (0.0, 1.0),
        }
    }
}

/// State-independent input pre-activations of one time step.
#[derive(Debug, Clone, PartialEq)]
pub struct InputDrive {
    /// `(a_u u)_i + b_u_bias_i`
    pub gate_pre: Vec<f64>,
    /// `(w_u u)_i + v_u_bias_i`
    pub elastance: Vec<f64>,
}

/// Everything one coordinate's forward evaluation produces.
#[derive(Debug, Clone, Copy)]
struct CoordEval {
    // σ(a_x x + b_x) as seen by A (masked slope) and by b (full slope)
    sx_a: f64,
    sx_b: f64,
    su: f64,
    sf: f64,
    tz: f64,
    se_a: f64,
    se_b: f64,
    /// diagonal entry of A
    a: f64,
    /// entry of b
    b: f64,
}

impl CoordEval {
    #[inline]
    fn drift(&self, x: f64) -> f64 {
        self.a * x + self.b
    }
}

/// A layer's parameters bound to evaluation options.
#[derive(Debug, Clone, Copy)]
pub struct Cell<'a> {
    pub params: &'a LrcLayerParams,
    pub opts: CellOptions,
}

impl<'a> Cell<'a> {
    pub fn new(params: &'a LrcLayerParams, opts: CellOptions) -> Self {
        Self { params, opts }
    }

    pub fn state_dim(&self) -> usize {
        self.params.state_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.params.input_dim()
    }

    pub fn check_shapes(&self, x: &[f64], u: &[f64]) -> Result<()> {
        if x.len() != self.state_dim() {
            return Err(Error::config(format!(
                "state has length {}, layer expects {}",
                x.len(),
                self.state_dim()
            )));
        }
        if u.len() != self.input_dim() {
            return Err(Error::config(format!(
                "input has length {}, layer expects {}",
                u.len(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    pub fn drive(&self, u: &[f64]) -> InputDrive {
        let p = self.params;
        let mut gate_pre = p.a_u.matvec(u);
        let mut elastance = p.w_u.matvec(u);
        for i in 0..gate_pre.len() {
            gate_pre[i] += p.b_u_bias[i];
            elastance[i] += p.v_u_bias[i];
        }
        InputDrive {
            gate_pre,
            elastance,
        }
    }

    /// Drives for every row of a `T × n` input sequence, as two `T × D` arrays.
    pub fn drive_sequence(&self, inputs: &Matrix) -> (Matrix, Matrix) {
        let p = self.params;
        let d = self.state_dim();
        let mut gate = Matrix::zeros(inputs.rows(), d);
        let mut el = Matrix::zeros(inputs.rows(), d);
        crate::flops::dense(2 * inputs.rows() * d * inputs.cols());
        for t in 0..inputs.rows() {
            let u = inputs.row(t);
            let g = gate.row_mut(t);
            p.a_u.matvec_into(u, g);
            for (gi, b) in g.iter_mut().zip(&p.b_u_bias) {
                *gi += b;
            }
            let e = el.row_mut(t);
            p.w_u.matvec_into(u, e);
            for (ei, v) in e.iter_mut().zip(&p.v_u_bias) {
                *ei += v;
            }
        }
        (gate, el)
    }

    #[inline]
    fn eval(&self, i: usize, x: f64, gate_pre: f64, elastance: f64) -> CoordEval {
        let p = self.params;
        let mode = self.opts.mode;
        let (c0, c1) = self.opts.clamp_coeffs();
        let a_x_a = if mode.state_in_a() { p.a_x[i] } else { 0.0 };
        let w_x_a = if mode.state_in_a() { p.w_x[i] } else { 0.0 };
        let k_x_b = if mode.state_in_b() { p.k_max_x[i] } else { 0.0 };
        let w_x_b = if mode.state_in_b() { p.w_x[i] } else { 0.0 };

        let sx_b = sigmoid(p.a_x[i] * x + p.b_x[i]);
        let sx_a = if mode.state_in_a() {
            sx_b
        } else {
            sigmoid(a_x_a * x + p.b_x[i])
        };
        let su = sigmoid(gate_pre);
        let f = p.g_max_x[i] * sx_a + p.g_max_u[i] * su + p.g_leak[i];
        let z = k_x_b * sx_b + p.k_max_u[i] * su + p.g_leak[i];
        let e_a = w_x_a * x + p.v_x[i] + elastance;
        let e_b = w_x_b * x + p.v_x[i] + elastance;
        let sf = sigmoid(f);
        let se_a = sigmoid(e_a);
        let se_b = if mode.state_in_a() || w_x_a == w_x_b {
            se_a
        } else {
            sigmoid(e_b)
        };
        let tz = z.tanh();
        let g = sf * se_a;
        CoordEval {
            sx_a,
            sx_b,
            su,
            sf,
            tz,
            se_a,
            se_b,
            a: -(c0 + c1 * g),
            b: tz * se_b * p.e_leak[i],
        }
    }

    /// `∂(x + dt·ẋ)/∂x` for coordinate `i`.
    #[inline]
    fn lambda(&self, i: usize, x: f64, ev: &CoordEval) -> f64 {
        let p = self.params;
        let mode = self.opts.mode;
        let (_, c1) = self.opts.clamp_coeffs();
        let (dsf, dse_a) = if mode.state_in_a() {
            let dsx = ev.sx_a * (1.0 - ev.sx_a) * p.a_x[i];
            (
                ev.sf * (1.0 - ev.sf) * p.g_max_x[i] * dsx,
                ev.se_a * (1.0 - ev.se_a) * p.w_x[i],
            )
        } else {
            (0.0, 0.0)
        };
        let dg = dsf * ev.se_a + ev.sf * dse_a;
        let da = -c1 * dg;
        let db = if mode.state_in_b() {
            let dsx = ev.sx_b * (1.0 - ev.sx_b) * p.a_x[i];
            let dz = p.k_max_x[i] * dsx;
            p.e_leak[i]
                * ((1.0 - ev.tz * ev.tz) * dz * ev.se_b
                    + ev.tz * ev.se_b * (1.0 - ev.se_b) * p.w_x[i])
        } else {
            0.0
        };
        1.0 + self.opts.dt * (ev.a + x * da + db)
    }

    pub fn gates(&self, x: &[f64], u: &[f64]) -> Result<GateValues> {
        self.check_shapes(x, u)?;
        let p = self.params;
        let dr = self.drive(u);
        let d = self.state_dim();
        let mut out = GateValues {
            f_star: vec![0.0; d],
            z_star: vec![0.0; d],
            eps_star: vec![0.0; d],
        };
        for i in 0..d {
            let sx = sigmoid(p.a_x[i] * x[i] + p.b_x[i]);
            let su = sigmoid(dr.gate_pre[i]);
            out.f_star[i] = p.g_max_x[i] * sx + p.g_max_u[i] * su + p.g_leak[i];
            out.z_star[i] = p.k_max_x[i] * sx + p.k_max_u[i] * su + p.g_leak[i];
            out.eps_star[i] = p.w_x[i] * x[i] + p.v_x[i] + dr.elastance[i];
        }
        Ok(out)
    }

    /// Diagonal of `A(x,u)` and the offset `b(x,u)`.
    pub fn coefficients(&self, x: &[f64], u: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_shapes(x, u)?;
        let dr = self.drive(u);
        Ok(self.coefficients_with_drive(x, &dr.gate_pre, &dr.elastance))
    }

    pub fn coefficients_with_drive(
        &self,
        x: &[f64],
        gate_pre: &[f64],
        elastance: &[f64],
    ) -> (Vec<f64>, Vec<f64>) {
        let d = self.state_dim();
        let mut a = vec![0.0; d];
        let mut b = vec![0.0; d];
        for i in 0..d {
            let ev = self.eval(i, x[i], gate_pre[i], elastance[i]);
            a[i] = ev.a;
            b[i] = ev.b;
        }
        (a, b)
    }

    pub fn drift(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        self.check_shapes(x, u)?;
        let dr = self.drive(u);
        Ok((0..self.state_dim())
            .map(|i| self.eval(i, x[i], dr.gate_pre[i], dr.elastance[i]).drift(x[i]))
            .collect())
    }

    pub fn euler_step(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        self.check_shapes(x, u)?;
        let dr = self.drive(u);
        let mut out = vec![0.0; x.len()];
        self.step_with_drive(x, &dr.gate_pre, &dr.elastance, &mut out)?;
        Ok(out)
    }

    /// `out = x + dt·ẋ(x)` with precomputed drive.
    pub fn step_with_drive(
        &self,
        x: &[f64],
        gate_pre: &[f64],
        elastance: &[f64],
        out: &mut [f64],
    ) -> Result<()> {
        let dt = self.opts.dt;
        crate::flops::gate_evals(x.len(), false);
        for i in 0..x.len() {
            let ev = self.eval(i, x[i], gate_pre[i], elastance[i]);
            let v = x[i] + dt * ev.drift(x[i]);
            if !v.is_finite() {
                return Err(Error::NumericOverflow {
                    context: "euler_step".into(),
                    index: i,
                });
            }
            out[i] = v;
        }
        Ok(())
    }

    pub fn step_jacobian_diag(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        self.check_shapes(x, u)?;
        let dr = self.drive(u);
        Ok((0..self.state_dim())
            .map(|i| {
                let ev = self.eval(i, x[i], dr.gate_pre[i], dr.elastance[i]);
                self.lambda(i, x[i], &ev)
            })
            .collect())
    }

    /// Euler step value and its diagonal Jacobian at `x`, in one pass.
    /// Non-finite outputs are left for the caller to detect.
    #[inline]
    pub fn step_and_jacobian(
        &self,
        x: &[f64],
        gate_pre: &[f64],
        elastance: &[f64],
        value: &mut [f64],
        jac: &mut [f64],
    ) {
        let dt = self.opts.dt;
        crate::flops::gate_evals(x.len(), true);
        for i in 0..x.len() {
            let ev = self.eval(i, x[i], gate_pre[i], elastance[i]);
            value[i] = x[i] + dt * ev.drift(x[i]);
            jac[i] = self.lambda(i, x[i], &ev);
        }
    }

    /// Vector-Jacobian product of one Euler step.
    ///
    /// Adds parameter gradients into `grads` and the input gradient into
    /// `d_u`; the state gradient `λ ∘ upstream` is returned in `d_x`.
    #[allow(clippy::too_many_arguments)]
    pub fn step_backward_acc(
        &self,
        x: &[f64],
        u: &[f64],
        gate_pre: &[f64],
        elastance: &[f64],
        upstream: &[f64],
        grads: &mut LrcLayerParams,
        d_u: &mut [f64],
        d_x: &mut [f64],
    ) {
        let p = self.params;
        let mode = self.opts.mode;
        let dt = self.opts.dt;
        let (_, c1) = self.opts.clamp_coeffs();
        crate::flops::gate_evals(x.len(), true);
        crate::flops::dense(4 * x.len() * u.len());
        for i in 0..x.len() {
            let w = upstream[i];
            if w == 0.0 {
                d_x[i] = 0.0;
                continue;
            }
            let xi = x[i];
            let ev = self.eval(i, xi, gate_pre[i], elastance[i]);
            d_x[i] = self.lambda(i, xi, &ev) * w;

            let delta = dt * w;
            // A branch
            let d_g = -c1 * delta * xi;
            let d_f = d_g * ev.se_a * ev.sf * (1.0 - ev.sf);
            let d_ea = d_g * ev.sf * ev.se_a * (1.0 - ev.se_a);
            // b branch
            let d_z = delta * ev.se_b * p.e_leak[i] * (1.0 - ev.tz * ev.tz);
            let d_eb = delta * ev.tz * p.e_leak[i] * ev.se_b * (1.0 - ev.se_b);
            grads.e_leak[i] += delta * ev.tz * ev.se_b;

            grads.g_max_x[i] += d_f * ev.sx_a;
            grads.g_max_u[i] += d_f * ev.su;
            grads.g_leak[i] += d_f + d_z;
            grads.k_max_u[i] += d_z * ev.su;
            let d_su = d_f * p.g_max_u[i] + d_z * p.k_max_u[i];

            let d_pre_a = d_f * p.g_max_x[i] * ev.sx_a * (1.0 - ev.sx_a);
            grads.b_x[i] += d_pre_a;
            if mode.state_in_a() {
                grads.a_x[i] += d_pre_a * xi;
            }
            if mode.state_in_b() {
                grads.k_max_x[i] += d_z * ev.sx_b;
                let d_pre_b = d_z * p.k_max_x[i] * ev.sx_b * (1.0 - ev.sx_b);
                grads.a_x[i] += d_pre_b * xi;
                grads.b_x[i] += d_pre_b;
            }

            let d_el = d_ea + d_eb;
            grads.v_x[i] += d_ea + d_eb;
            if mode.state_in_a() {
                grads.w_x[i] += d_ea * xi;
            }
            if mode.state_in_b() {
                grads.w_x[i] += d_eb * xi;
            }

            let d_gate = d_su * ev.su * (1.0 - ev.su);
            grads.b_u_bias[i] += d_gate;
            grads.v_u_bias[i] += d_el;
            let cols = p.a_u.cols();
            let a_row = p.a_u.row(i);
            let w_row = p.w_u.row(i);
            let ga = &mut grads.a_u.as_mut_slice()[i * cols..(i + 1) * cols];
            for j in 0..cols {
                ga[j] += d_gate * u[j];
            }
            let gw = &mut grads.w_u.as_mut_slice()[i * cols..(i + 1) * cols];
            for j in 0..cols {
                gw[j] += d_el * u[j];
                d_u[j] += a_row[j] * d_gate + w_row[j] * d_el;
            }
        }
    }
}

/// Gradients produced by [`step_backward`].
#[derive(Debug, Clone, PartialEq)]
pub struct StepGradients {
    pub d_x_prev: Vec<f64>,
    pub d_u: Vec<f64>,
    pub d_params: LrcLayerParams,
}

/// VJP of one Euler step of `cell` at `(x_prev, u)`.
pub fn step_backward(
    cell: &Cell<'_>,
    x_prev: &[f64],
    u: &[f64],
    upstream: &[f64],
) -> Result<StepGradients> {
    cell.check_shapes(x_prev, u)?;
    if upstream.len() != x_prev.len() {
        return Err(Error::config("upstream gradient length differs from state"));
    }
    let dr = cell.drive(u);
    let mut out = StepGradients {
        d_x_prev: vec![0.0; x_prev.len()],
        d_u: vec![0.0; u.len()],
        d_params: LrcLayerParams::zeros(cell.state_dim(), cell.input_dim()),
    };
    cell.step_backward_acc(
        x_prev,
        u,
        &dr.gate_pre,
        &dr.elastance,
        upstream,
        &mut out.d_params,
        &mut out.d_u,
        &mut out.d_x_prev,
    );
    Ok(out)
}

pub fn gates(x: &[f64], u: &[f64], p: &LrcLayerParams) -> Result<GateValues> {
    Cell::new(p, CellOptions::default()).gates(x, u)
}

pub fn drift(x: &[f64], u: &[f64], p: &LrcLayerParams) -> Result<Vec<f64>> {
    Cell::new(p, CellOptions::default()).drift(x, u)
}

pub fn a_diag(x: &[f64], u: &[f64], p: &LrcLayerParams) -> Result<Vec<f64>> {
    Ok(Cell::new(p, CellOptions::default()).coefficients(x, u)?.0)
}

pub fn b_vec(x: &[f64], u: &[f64], p: &LrcLayerParams) -> Result<Vec<f64>> {
    Ok(Cell::new(p, CellOptions::default()).coefficients(x, u)?.1)
}

pub fn euler_step(x: &[f64], u: &[f64], p: &LrcLayerParams, dt: f64) -> Result<Vec<f64>> {
    Cell::new(p, CellOptions::with_dt(dt)).euler_step(x, u)
}

pub fn step_jacobian_diag(x: &[f64], u: &[f64], p: &LrcLayerParams, dt: f64) -> Result<Vec<f64>> {
    Cell::new(p, CellOptions::with_dt(dt)).step_jacobian_diag(x, u)
}
