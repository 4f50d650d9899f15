//! Discrete trajectory-tracking models and their stacked horizon form.
//!
//! States are `x = (p, v)` with positions in meters and velocities in m/s;
//! the input is a position reference. A horizon of `K` steps is written in
//! stacked form as `X = A0 * x0 + Lambda * U` where `X` holds the predicted
//! states `x[1..=K]` and `U` the inputs `u[0..K]`.

use nalgebra::{DMatrix, DVector, Matrix6, Matrix6x3, Vector3, Vector6};

use crate::error::{invalid, Result};

/// Full agent state `(px, py, pz, vx, vy, vz)`.
pub type State = Vector6<f64>;

pub fn state(position: Vector3<f64>, velocity: Vector3<f64>) -> State {
    State::new(
        position.x, position.y, position.z, velocity.x, velocity.y, velocity.z,
    )
}

pub fn position(x: &State) -> Vector3<f64> {
    x.fixed_rows::<3>(0).into_owned()
}

pub fn velocity(x: &State) -> Vector3<f64> {
    x.fixed_rows::<3>(3).into_owned()
}

/// `x[k+1] = A x[k] + B u[k]` over a fixed step `h`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearAgentModel {
    pub a: Matrix6<f64>,
    pub b: Matrix6x3<f64>,
    pub h: f64,
}

impl LinearAgentModel {
    pub fn new(a: Matrix6<f64>, b: Matrix6x3<f64>, h: f64) -> Result<Self> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(invalid(format!("step must be positive, got {h}")));
        }
        if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(invalid("model matrices must be finite"));
        }
        Ok(Self { a, b, h })
    }

    pub fn step(&self, x: &State, u: &Vector3<f64>) -> State {
        self.a * x + self.b * u
    }

    pub fn spectral_radius(&self) -> f64 {
        self.a
            .complex_eigenvalues()
            .iter()
            .map(|e| e.norm())
            .fold(0.0, f64::max)
    }
}

/// Zero-order-hold discretization of the per-axis tracking loop
/// `p'' = omega^2 (u - p) - 2 damping omega p'`, identical on all three axes.
pub fn make_second_order_model(omega_n: f64, damping: f64, h: f64) -> Result<LinearAgentModel> {
    for (name, v) in [("omega_n", omega_n), ("damping", damping), ("h", h)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(invalid(format!("{name} must be positive, got {v}")));
        }
    }
    // Augmented [[Ac, Bc], [0, 0]] so that exp(M h) carries both A and B.
    let mut m = DMatrix::<f64>::zeros(9, 9);
    for axis in 0..3 {
        m[(axis, 3 + axis)] = 1.0;
        m[(3 + axis, axis)] = -omega_n * omega_n;
        m[(3 + axis, 3 + axis)] = -2.0 * damping * omega_n;
        m[(3 + axis, 6 + axis)] = omega_n * omega_n;
    }
    let e = (m * h).exp();
    let a = Matrix6::from_fn(|r, c| e[(r, c)]);
    let b = Matrix6x3::from_fn(|r, c| e[(r, 6 + c)]);
    LinearAgentModel::new(a, b, h)
}

/// Horizon matrices for `X = A0 x0 + Lambda U`.
#[derive(Debug, Clone)]
pub struct StackedPrediction {
    horizon: usize,
    state_dim: usize,
    input_dim: usize,
    pub a0: DMatrix<f64>,
    pub lambda: DMatrix<f64>,
    /// Selects the leading `input_dim` (position) rows of every state block.
    pub psel: DMatrix<f64>,
}

impl StackedPrediction {
    /// Builds the stacked form for an arbitrary `(A, B)` pair. The first
    /// `B.ncols()` state components are taken to be positions.
    pub fn from_matrices(a: &DMatrix<f64>, b: &DMatrix<f64>, horizon: usize) -> Result<Self> {
        if horizon < 2 {
            return Err(invalid(format!("horizon must be >= 2, got {horizon}")));
        }
        let n = a.nrows();
        let m = b.ncols();
        if a.ncols() != n || b.nrows() != n || m > n {
            return Err(invalid("inconsistent model dimensions"));
        }

        let mut powers = Vec::with_capacity(horizon + 1);
        powers.push(DMatrix::<f64>::identity(n, n));
        for k in 0..horizon {
            let next = a * &powers[k];
            powers.push(next);
        }

        let mut a0 = DMatrix::zeros(n * horizon, n);
        let mut lambda = DMatrix::zeros(n * horizon, m * horizon);
        let impulse: Vec<DMatrix<f64>> = powers.iter().map(|p| p * b).collect();
        for r in 0..horizon {
            a0.view_mut((r * n, 0), (n, n)).copy_from(&powers[r + 1]);
            for c in 0..=r {
                lambda
                    .view_mut((r * n, c * m), (n, m))
                    .copy_from(&impulse[r - c]);
            }
        }

        let mut psel = DMatrix::zeros(m * horizon, n * horizon);
        for k in 0..horizon {
            for i in 0..m {
                psel[(k * m + i, k * n + i)] = 1.0;
            }
        }

        Ok(Self {
            horizon,
            state_dim: n,
            input_dim: m,
            a0,
            lambda,
            psel,
        })
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    /// Stacked states `x[1..=K]` for measured `x0` and inputs `u[0..K]`.
    pub fn predict_states(&self, x0: &DVector<f64>, inputs: &DVector<f64>) -> Result<DVector<f64>> {
        if x0.len() != self.state_dim || inputs.len() != self.input_dim * self.horizon {
            return Err(invalid(format!(
                "expected state of {} and inputs of {}, got {} and {}",
                self.state_dim,
                self.input_dim * self.horizon,
                x0.len(),
                inputs.len()
            )));
        }
        Ok(&self.a0 * x0 + &self.lambda * inputs)
    }

    pub fn positions(&self, states: &DVector<f64>) -> DVector<f64> {
        &self.psel * states
    }
}

pub fn build_stacked(model: &LinearAgentModel, horizon: usize) -> Result<StackedPrediction> {
    let a = DMatrix::from_iterator(6, 6, model.a.iter().copied());
    let b = DMatrix::from_iterator(6, 3, model.b.iter().copied());
    StackedPrediction::from_matrices(&a, &b, horizon)
}
