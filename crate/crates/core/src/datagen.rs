//! Inputs `x = Σ^{1/2} η`, labels `y = g(x) + ε`, and covariate shifts `δ ~ N(0, diag(α))`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{check_dim, domain, Result};
use crate::spectra::Spectrum;

/// Distribution of the whitened input coordinates `η`. Both have mean 0 and unit variance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EtaDist {
    #[default]
    Gaussian,
    Rademacher,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    /// Label-noise standard deviation.
    pub sigma: f64,
    pub eta: EtaDist,
}

impl NoiseModel {
    pub fn gaussian(sigma: f64) -> Self {
        Self {
            sigma,
            eta: EtaDist::Gaussian,
        }
    }
}

pub type TargetFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum TruthKind {
    Linear,
    Softplus,
    Custom(TargetFn),
}

impl fmt::Debug for TruthKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TruthKind::Linear => f.write_str("Linear"),
            TruthKind::Softplus => f.write_str("Softplus"),
            TruthKind::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

/// Target function `g`. `Linear` is `βᵀx`, `Softplus` is `log(1 + exp(βᵀx))`.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub kind: TruthKind,
    pub beta: DVector<f64>,
}

impl GroundTruth {
    pub fn linear(beta: DVector<f64>) -> Self {
        Self {
            kind: TruthKind::Linear,
            beta,
        }
    }

    pub fn softplus(beta: DVector<f64>) -> Self {
        Self {
            kind: TruthKind::Softplus,
            beta,
        }
    }

    /// Arbitrary target on `p`-dimensional inputs.
    pub fn custom(p: usize, f: TargetFn) -> Self {
        Self {
            kind: TruthKind::Custom(f),
            beta: DVector::zeros(p),
        }
    }

    /// Unit vector `e₁ ∈ R^p`.
    pub fn first_axis(p: usize) -> DVector<f64> {
        let mut beta = DVector::zeros(p);
        if p > 0 {
            beta[0] = 1.0;
        }
        beta
    }

    /// Unit vector with equal entries `1/√p`.
    pub fn uniform_direction(p: usize) -> DVector<f64> {
        DVector::from_element(p, 1.0 / (p as f64).sqrt())
    }

    pub fn dim(&self) -> usize {
        self.beta.len()
    }

    pub fn beta_norm(&self) -> f64 {
        self.beta.norm()
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        match &self.kind {
            TruthKind::Linear => dot(self.beta.as_slice(), x),
            TruthKind::Softplus => softplus(dot(self.beta.as_slice(), x)),
            TruthKind::Custom(f) => f(x),
        }
    }

    /// `g` applied to every row of `x`.
    pub fn eval_rows(&self, x: &DMatrix<f64>) -> Result<DVector<f64>> {
        check_dim("ground truth input columns", self.dim(), x.ncols())?;
        match &self.kind {
            TruthKind::Linear => Ok(x * &self.beta),
            TruthKind::Softplus => Ok((x * &self.beta).map(softplus)),
            TruthKind::Custom(f) => {
                let mut row = vec![0.0; x.ncols()];
                Ok(DVector::from_fn(x.nrows(), |i, _| {
                    for (j, r) in row.iter_mut().enumerate() {
                        *r = x[(i, j)];
                    }
                    f(&row)
                }))
            }
        }
    }

    /// `E_x ‖∇g(x)‖²` under `x = Σ^{1/2}η`. Exact for the linear target; a
    /// Monte Carlo average over `n_mc` draws for softplus.
    pub fn expected_gradient_sq<R: Rng + ?Sized>(
        &self,
        spec: &Spectrum,
        eta: EtaDist,
        n_mc: usize,
        rng: &mut R,
    ) -> Result<f64> {
        let b2 = self.beta.norm_squared();
        match &self.kind {
            TruthKind::Linear => Ok(b2),
            TruthKind::Softplus => {
                if n_mc == 0 {
                    return Err(domain("n_mc must be at least 1"));
                }
                let x = sample_inputs(spec, n_mc, eta, rng)?;
                let z = x * &self.beta;
                let mean = z.iter().map(|&v| sigmoid(v).powi(2)).sum::<f64>() / n_mc as f64;
                Ok(b2 * mean)
            }
            TruthKind::Custom(_) => Err(domain("gradient of a custom target is not available")),
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| u * v).sum()
}

fn softplus(z: f64) -> f64 {
    // log(1 + e^z) without overflow
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// `n × p` matrix whose rows are `diag(√λ) η_i`.
pub fn sample_inputs<R: Rng + ?Sized>(spec: &Spectrum, n: usize, eta: EtaDist, rng: &mut R) -> Result<DMatrix<f64>> {
    let scales: Vec<f64> = spec.eigenvalues().iter().map(|v| v.sqrt()).collect();
    let p = scales.len();
    // filled row by row so a prefix of rows does not depend on n
    let mut x = DMatrix::zeros(n, p);
    for i in 0..n {
        for (j, s) in scales.iter().enumerate() {
            let e: f64 = match eta {
                EtaDist::Gaussian => rng.sample(StandardNormal),
                EtaDist::Rademacher => {
                    if rng.random::<bool>() {
                        1.0
                    } else {
                        -1.0
                    }
                }
            };
            x[(i, j)] = s * e;
        }
    }
    Ok(x)
}

/// `y_i = g(x_i) + ε_i` with `ε_i ~ N(0, σ²)`.
pub fn sample_labels<R: Rng + ?Sized>(
    g: &GroundTruth,
    x: &DMatrix<f64>,
    noise: &NoiseModel,
    rng: &mut R,
) -> Result<DVector<f64>> {
    if !(noise.sigma.is_finite() && noise.sigma >= 0.0) {
        return Err(domain(format!("sigma must be non-negative, got {}", noise.sigma)));
    }
    let mut y = g.eval_rows(x)?;
    for v in y.iter_mut() {
        let e: f64 = rng.sample(StandardNormal);
        *v += noise.sigma * e;
    }
    Ok(y)
}

#[derive(Debug, Clone, PartialEq)]
pub enum ShiftConstruction {
    /// No shift on large-eigenvalue directions, capped variance on the small ones.
    Assumption2Default,
    Isotropic(f64),
    Custom(Vec<f64>),
}

/// Diagonal shift covariance `Σ_δ = diag(α)` with strength `τ`.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftModel {
    pub alphas: Vec<f64>,
    pub tau: f64,
    pub construction: ShiftConstruction,
}

impl ShiftModel {
    pub fn none(p: usize) -> Self {
        Self {
            alphas: vec![0.0; p],
            tau: 0.0,
            construction: ShiftConstruction::Custom(vec![0.0; p]),
        }
    }

    pub fn custom(alphas: Vec<f64>, tau: f64) -> Result<Self> {
        if let Some(a) = alphas.iter().find(|a| !(a.is_finite() && **a >= 0.0)) {
            return Err(domain(format!("shift variances must be non-negative, got {a}")));
        }
        check_tau(tau)?;
        Ok(Self {
            construction: ShiftConstruction::Custom(alphas.clone()),
            alphas,
            tau,
        })
    }

    pub fn dim(&self) -> usize {
        self.alphas.len()
    }

    pub fn is_zero(&self) -> bool {
        self.alphas.iter().all(|&a| a == 0.0)
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if tau.is_finite() && tau >= 0.0 {
        Ok(())
    } else {
        Err(domain(format!("tau must be non-negative, got {tau}")))
    }
}

/// Threshold `tr{Σ}/(b n)` separating large eigenvalues (strictly above) from small ones.
pub fn small_eigenvalue_threshold(spec: &Spectrum, b: f64, n: usize) -> Result<f64> {
    if !(b.is_finite() && b > 0.0) || n == 0 {
        return Err(domain(format!("need b > 0 and n ≥ 1, got b = {b}, n = {n}")));
    }
    Ok(spec.trace() / (b * n as f64))
}

/// Builds `Σ_δ` for a spectrum. The default construction puts
/// `min(τ, τ·tr{Σ}/n, τ·max_{small} λ)` on every small-eigenvalue direction and
/// nothing on the large ones.
pub fn build_shift_model(
    spec: &Spectrum,
    b: f64,
    n: usize,
    tau: f64,
    construction: ShiftConstruction,
) -> Result<ShiftModel> {
    check_tau(tau)?;
    let p = spec.len();
    let alphas = match &construction {
        ShiftConstruction::Assumption2Default => {
            let threshold = small_eigenvalue_threshold(spec, b, n)?;
            let small_max = spec.eigenvalues().iter().copied().find(|&l| l <= threshold);
            match small_max {
                None => vec![0.0; p],
                Some(lmax) => {
                    let level = tau.min(tau * spec.trace() / n as f64).min(tau * lmax);
                    spec.eigenvalues()
                        .iter()
                        .map(|&l| if l <= threshold { level } else { 0.0 })
                        .collect()
                }
            }
        }
        ShiftConstruction::Isotropic(c) => {
            if !(c.is_finite() && *c >= 0.0) {
                return Err(domain(format!("isotropic shift variance must be non-negative, got {c}")));
            }
            vec![*c; p]
        }
        ShiftConstruction::Custom(a) => {
            check_dim("custom shift length", p, a.len())?;
            return ShiftModel::custom(a.clone(), tau);
        }
    };
    Ok(ShiftModel {
        alphas,
        tau,
        construction,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstraintCheck {
    pub value: f64,
    pub bound: f64,
    pub pass: bool,
}

impl ConstraintCheck {
    fn new(value: f64, bound: f64) -> Self {
        Self {
            value,
            bound,
            pass: value <= bound + 1e-12 * bound.abs(),
        }
    }
}

/// The three constraints on `Σ_δ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShiftChecks {
    /// `max α_i ≤ τ`.
    pub spectral_norm: ConstraintCheck,
    /// `Σ_{large} α_i/λ_i ≤ τ n`.
    pub large_directions: ConstraintCheck,
    /// `max_{small} α_i ≤ τ max_{small} λ_i`.
    pub small_directions: ConstraintCheck,
}

impl ShiftChecks {
    pub fn all_pass(&self) -> bool {
        self.spectral_norm.pass && self.large_directions.pass && self.small_directions.pass
    }
}

pub fn validate_shift(shift: &ShiftModel, spec: &Spectrum, b: f64, n: usize) -> Result<ShiftChecks> {
    check_dim("shift length", spec.len(), shift.dim())?;
    let threshold = small_eigenvalue_threshold(spec, b, n)?;
    let tau = shift.tau;
    let mut max_alpha = 0.0_f64;
    let mut large_budget = 0.0;
    let mut small_alpha = 0.0_f64;
    let mut small_lambda = 0.0_f64;
    for (&a, &l) in shift.alphas.iter().zip(spec.eigenvalues()) {
        max_alpha = max_alpha.max(a);
        if l > threshold {
            large_budget += a / l;
        } else {
            small_alpha = small_alpha.max(a);
            small_lambda = small_lambda.max(l);
        }
    }
    Ok(ShiftChecks {
        spectral_norm: ConstraintCheck::new(max_alpha, tau),
        large_directions: ConstraintCheck::new(large_budget, tau * n as f64),
        small_directions: ConstraintCheck::new(small_alpha, tau * small_lambda),
    })
}

/// `n_test × p` matrix of shifts with rows `δ ~ N(0, diag(α))`.
pub fn sample_shift<R: Rng + ?Sized>(shift: &ShiftModel, n_test: usize, rng: &mut R) -> DMatrix<f64> {
    let scales: Vec<f64> = shift.alphas.iter().map(|a| a.sqrt()).collect();
    let mut d = DMatrix::zeros(n_test, scales.len());
    if shift.is_zero() {
        return d;
    }
    for i in 0..n_test {
        for (j, s) in scales.iter().enumerate() {
            let z: f64 = rng.sample(StandardNormal);
            d[(i, j)] = s * z;
        }
    }
    d
}
