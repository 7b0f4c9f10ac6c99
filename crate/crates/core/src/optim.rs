//! Projected first-order optimizers.
//!
//! Two engines share one contract: every emitted iterate is feasible, the
//! best-seen iterate is returned, and the full loss trace is kept.
//!
//! * [`minimize_projected`]: bias-corrected Adam followed by a projection.
//!   Used for dispersion-parameter fitting and the Λ-step of unmixing.
//! * [`minimize_projected_gradient`]: accelerated projected gradient with a
//!   fixed `1/L` step and function-value restart. Used for the abundance
//!   step, where the smooth part is a quadratic with known curvature.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::ParamBox;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EarlyStop {
    /// Minimum improvement of the best-seen loss that resets the counter.
    pub tolerance: f64,
    /// Consecutive non-improving steps tolerated before stopping.
    pub patience: usize,
}

impl Default for EarlyStop {
    fn default() -> Self {
        Self {
            tolerance: 1e-10,
            patience: 20,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
    pub steps: usize,
    #[serde(default)]
    pub early_stop: Option<EarlyStop>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.0,
            steps: 500,
            early_stop: None,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0
            && self.weight_decay >= 0.0
            && self.steps > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "bad Adam configuration {self:?}"
            )))
        }
    }
}

/// A probability vector: non-negative entries summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct SimplexVector(Vec<f64>);

impl SimplexVector {
    pub const SUM_TOLERANCE: f64 = 1e-10;

    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidConfig("empty simplex vector".into()));
        }
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidConfig(format!(
                "negative simplex entry in {values:?}"
            )));
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > Self::SUM_TOLERANCE {
            return Err(Error::InvalidConfig(format!(
                "simplex entries sum to {sum}"
            )));
        }
        Ok(Self(values))
    }

    pub fn uniform(n: usize) -> Self {
        assert!(n > 0);
        Self(vec![1.0 / n as f64; n])
    }

    /// The vertex `e_index` of the n-simplex.
    pub fn vertex(n: usize, index: usize) -> Self {
        let mut v = vec![0.0; n];
        v[index] = 1.0;
        Self(v)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl TryFrom<Vec<f64>> for SimplexVector {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<SimplexVector> for Vec<f64> {
    fn from(v: SimplexVector) -> Self {
        v.0
    }
}

/// In-place Euclidean projection onto `{x : x ≥ 0, Σx = 1}` (sort and
/// threshold).
pub fn project_simplex_in_place(v: &mut [f64]) {
    assert!(
        !v.is_empty(),
        "cannot project an empty vector onto the simplex"
    );
    let mut sorted = v.to_vec();
    sorted.sort_unstable_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut tau = 0.0;
    for (i, &u) in sorted.iter().enumerate() {
        cumsum += u;
        let t = (cumsum - 1.0) / (i + 1) as f64;
        if u - t > 0.0 {
            tau = t;
        } else {
            break;
        }
    }
    for x in v.iter_mut() {
        *x = (*x - tau).max(0.0);
    }
}

pub fn project_simplex(v: &[f64]) -> SimplexVector {
    let mut x = v.to_vec();
    project_simplex_in_place(&mut x);
    SimplexVector(x)
}

/// Elementwise clamp of a flat parameter vector into a box.
pub fn project_box(p: &[f64], bounds: &ParamBox) -> Vec<f64> {
    let mut out = p.to_vec();
    bounds.clamp(&mut out);
    out
}

/// A feasible-set projection applied after every step.
pub trait Projection {
    fn project(&self, x: &mut [f64]);
}

impl<F: Fn(&mut [f64])> Projection for F {
    fn project(&self, x: &mut [f64]) {
        self(x)
    }
}

pub struct Unconstrained;

impl Projection for Unconstrained {
    fn project(&self, _: &mut [f64]) {}
}

pub struct OntoSimplex;

impl Projection for OntoSimplex {
    fn project(&self, x: &mut [f64]) {
        project_simplex_in_place(x);
    }
}

/// Axis-aligned box `[lower, upper]` on a plain vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bounds {
    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(v, (lo, hi))| lo <= v && v <= hi)
    }
}

impl Projection for Bounds {
    fn project(&self, x: &mut [f64]) {
        for (v, (lo, hi)) in x.iter_mut().zip(self.lower.iter().zip(&self.upper)) {
            *v = v.clamp(*lo, *hi);
        }
    }
}

impl Projection for ParamBox {
    fn project(&self, x: &mut [f64]) {
        self.clamp(x);
    }
}

/// Adam moments and step counter for one parameter vector.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    pub params: Vec<f64>,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: Vec<f64>) -> Self {
        let n = params.len();
        Self {
            config,
            params,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }
}

/// One bias-corrected Adam update followed by `projection`.
///
/// Rejects gradients with non-finite entries or the wrong length, leaving
/// the state untouched.
pub fn adam_step(
    state: &mut AdamState,
    gradient: &[f64],
    projection: &dyn Projection,
) -> Result<()> {
    if gradient.len() != state.params.len() {
        return Err(Error::ShapeMismatch(format!(
            "gradient of length {} for {} parameters",
            gradient.len(),
            state.params.len()
        )));
    }
    if gradient.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite {
            what: "gradient",
            iteration: state.t as usize,
        });
    }
    let c = state.config;
    state.t += 1;
    let bc1 = 1.0 - c.beta1.powi(state.t as i32);
    let bc2 = 1.0 - c.beta2.powi(state.t as i32);
    for i in 0..state.params.len() {
        let g = gradient[i] + c.weight_decay * state.params[i];
        state.m[i] = c.beta1 * state.m[i] + (1.0 - c.beta1) * g;
        state.v[i] = c.beta2 * state.v[i] + (1.0 - c.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        state.params[i] -= c.learning_rate * m_hat / (v_hat.sqrt() + c.epsilon);
    }
    projection.project(&mut state.params);
    Ok(())
}

/// Result of a projected minimization.
#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    /// Best-seen feasible iterate.
    pub argmin: Vec<f64>,
    pub loss: f64,
    /// Loss of every evaluated iterate, starting with the (projected) init.
    pub trace: Vec<f64>,
}

impl Minimum {
    /// Writes the trace as CSV `step,loss`.
    pub fn write_trace_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        write_trace_csv(&self.trace, out)
    }
}

pub fn write_trace_csv<W: Write>(trace: &[f64], mut out: W) -> std::io::Result<()> {
    writeln!(out, "step,loss")?;
    for (i, l) in trace.iter().enumerate() {
        writeln!(out, "{i},{l}")?;
    }
    Ok(())
}

struct Tracker {
    best: Vec<f64>,
    best_loss: f64,
    trace: Vec<f64>,
    stale: usize,
    early_stop: Option<EarlyStop>,
}

impl Tracker {
    fn new(early_stop: Option<EarlyStop>) -> Self {
        Self {
            best: Vec::new(),
            best_loss: f64::INFINITY,
            trace: Vec::new(),
            stale: 0,
            early_stop,
        }
    }

    /// Records a loss; returns `true` when early stopping triggers.
    fn record(&mut self, x: &[f64], loss: f64) -> Result<bool> {
        if !loss.is_finite() {
            return Err(Error::NonFinite {
                what: "loss",
                iteration: self.trace.len(),
            });
        }
        self.trace.push(loss);
        let tol = self.early_stop.map_or(0.0, |e| e.tolerance);
        if loss < self.best_loss - tol || self.best.is_empty() {
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        if loss < self.best_loss {
            self.best_loss = loss;
            self.best.clear();
            self.best.extend_from_slice(x);
        }
        Ok(self.early_stop.is_some_and(|e| self.stale >= e.patience))
    }

    fn finish(self) -> Minimum {
        Minimum {
            argmin: self.best,
            loss: self.best_loss,
            trace: self.trace,
        }
    }
}

/// Projected Adam: `config.steps` iterations of [`adam_step`].
///
/// `objective` returns `(loss, gradient)` at a point.
pub fn minimize_projected<F>(
    mut objective: F,
    init: &[f64],
    projection: &dyn Projection,
    config: &AdamConfig,
) -> Result<Minimum>
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    config.validate()?;
    let mut x = init.to_vec();
    projection.project(&mut x);
    let mut state = AdamState::new(*config, x);
    let mut tracker = Tracker::new(config.early_stop);
    for _ in 0..config.steps {
        let (loss, grad) = objective(&state.params);
        if tracker.record(&state.params, loss)? {
            return Ok(tracker.finish());
        }
        adam_step(&mut state, &grad, projection).map_err(|e| match e {
            Error::NonFinite { what, .. } => Error::NonFinite {
                what,
                iteration: tracker.trace.len() - 1,
            },
            other => other,
        })?;
    }
    let (loss, _) = objective(&state.params);
    tracker.record(&state.params, loss)?;
    Ok(tracker.finish())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradientConfig {
    /// Step length; `1/L` for an `L`-smooth objective.
    pub step: f64,
    pub steps: usize,
    /// Nesterov momentum with restart on loss increase.
    pub accelerated: bool,
    pub early_stop: Option<EarlyStop>,
}

/// Projected gradient descent with optional acceleration.
pub fn minimize_projected_gradient<F>(
    mut objective: F,
    init: &[f64],
    projection: &dyn Projection,
    config: &GradientConfig,
) -> Result<Minimum>
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    if !(config.step > 0.0 && config.step.is_finite()) || config.steps == 0 {
        return Err(Error::InvalidConfig(format!(
            "bad gradient configuration {config:?}"
        )));
    }
    let n = init.len();
    let mut x = init.to_vec();
    projection.project(&mut x);
    let (mut loss, _) = objective(&x);
    let mut tracker = Tracker::new(config.early_stop);
    tracker.record(&x, loss)?;
    let mut x_prev = x.clone();
    let mut t = 1.0f64;
    let mut y = vec![0.0; n];
    let mut next = vec![0.0; n];

    for _ in 0..config.steps {
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let beta = if config.accelerated {
            (t - 1.0) / t_next
        } else {
            0.0
        };
        for i in 0..n {
            y[i] = x[i] + beta * (x[i] - x_prev[i]);
        }
        let (_, g) = objective(&y);
        for i in 0..n {
            next[i] = y[i] - config.step * g[i];
        }
        projection.project(&mut next);
        let (mut next_loss, _) = objective(&next);
        if config.accelerated && next_loss > loss && beta > 0.0 {
            // restart from a plain gradient step at x
            let (_, g) = objective(&x);
            for i in 0..n {
                next[i] = x[i] - config.step * g[i];
            }
            projection.project(&mut next);
            next_loss = objective(&next).0;
            t = 1.0;
        } else {
            t = t_next;
        }
        std::mem::swap(&mut x_prev, &mut x);
        x.copy_from_slice(&next);
        loss = next_loss;
        if tracker.record(&x, loss)? {
            break;
        }
    }
    Ok(tracker.finish())
}
