//! Random feature maps `f_W(θ, x) = φ(xᵀW)θ / √m`, the minimum-norm
//! estimator, ensembles, and the reference coefficient `θ*`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::datagen::{sample_inputs, EtaDist, GroundTruth, TruthKind};
use crate::error::{check_dim, domain, Error, Result};
use crate::linalg::{gaussian_matrix, spectral_solve, DEFAULT_RANK_TOL};
use crate::spectra::Spectrum;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    Relu,
    Identity,
}

impl Activation {
    pub fn name(&self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Identity => "identity",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "relu" => Some(Activation::Relu),
            "identity" => Some(Activation::Identity),
            _ => None,
        }
    }

    pub fn apply(&self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }
}

/// Random weights `W ∈ R^{p×m}` together with the activation.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureModel {
    weights: DMatrix<f64>,
    activation: Activation,
}

impl FeatureModel {
    pub fn new(weights: DMatrix<f64>, activation: Activation) -> Result<Self> {
        if weights.nrows() == 0 || weights.ncols() == 0 {
            return Err(domain("feature weights must be at least 1×1"));
        }
        Ok(Self { weights, activation })
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    /// Input dimension `p`.
    pub fn p(&self) -> usize {
        self.weights.nrows()
    }

    /// Number of features `m`.
    pub fn m(&self) -> usize {
        self.weights.ncols()
    }

    /// `Φ = φ(XW)/√m`, one row per input.
    pub fn feature_map(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_dim("feature map input columns", self.p(), x.ncols())?;
        let scale = 1.0 / (self.m() as f64).sqrt();
        let act = self.activation;
        let mut phi = x * &self.weights;
        phi.apply(|z| *z = act.apply(*z) * scale);
        Ok(phi)
    }

    /// `φ(XW)θ/√m` for a coefficient vector `θ`.
    pub fn evaluate(&self, x: &DMatrix<f64>, theta: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("coefficient length", self.m(), theta.len())?;
        match self.activation {
            Activation::Identity => {
                check_dim("feature map input columns", self.p(), x.ncols())?;
                Ok(x * (&self.weights * theta) / (self.m() as f64).sqrt())
            }
            Activation::Relu => Ok(self.feature_map(x)? * theta),
        }
    }
}

/// Draws `W` with i.i.d. `N(0, 1/p)` entries.
pub fn sample_feature_model<R: Rng + ?Sized>(p: usize, m: usize, activation: Activation, rng: &mut R) -> Result<FeatureModel> {
    if p == 0 || m == 0 {
        return Err(domain(format!("p and m must be at least 1, got p = {p}, m = {m}")));
    }
    FeatureModel::new(gaussian_matrix(p, m, 1.0 / (p as f64).sqrt(), rng), activation)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitDiagnostics {
    /// `‖Φθ̂ − y‖∞`.
    pub residual_max: f64,
    /// Largest over smallest retained eigenvalue of `ΦΦᵀ (+ reg I)`.
    pub gram_condition: f64,
    pub rank: usize,
    /// Set when directions of the Gram matrix were dropped.
    pub rank_deficient: bool,
}

/// Minimum-norm interpolant `Φᵀ(ΦΦᵀ)^† y`, or the ridge solution
/// `Φᵀ(ΦΦᵀ + reg I)^{-1} y` when `reg > 0`.
pub fn fit_min_norm(phi: &DMatrix<f64>, y: &DVector<f64>, reg: f64) -> Result<(DVector<f64>, FitDiagnostics)> {
    check_dim("label count", phi.nrows(), y.len())?;
    if !(reg.is_finite() && reg >= 0.0) {
        return Err(domain(format!("reg must be non-negative, got {reg}")));
    }
    if phi.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(domain("features and labels must be finite"));
    }
    let gram = phi * phi.transpose();
    let solve = spectral_solve(&gram, y, reg, DEFAULT_RANK_TOL);
    let theta = phi.transpose() * &solve.solution;
    let fitted = phi * &theta;
    let residual_max = (fitted - y).amax();
    if !residual_max.is_finite() {
        return Err(Error::Numerical("non-finite residual in minimum-norm fit".into()));
    }
    Ok((
        theta,
        FitDiagnostics {
            residual_max,
            gram_condition: solve.condition,
            rank: solve.rank,
            rank_deficient: solve.rank < phi.nrows(),
        },
    ))
}

/// A feature model with its fitted coefficients.
#[derive(Debug, Clone)]
pub struct FittedModel {
    pub feature_model: FeatureModel,
    pub theta_hat: DVector<f64>,
    pub theta_star: Option<DVector<f64>>,
    pub diagnostics: FitDiagnostics,
    /// Training feature matrix `Φ`.
    pub train_features: DMatrix<f64>,
}

impl FittedModel {
    /// Fits the minimum-norm estimator on `(x, y)`.
    pub fn fit(feature_model: FeatureModel, x: &DMatrix<f64>, y: &DVector<f64>) -> Result<Self> {
        let phi = feature_model.feature_map(x)?;
        let (theta_hat, diagnostics) = fit_min_norm(&phi, y, 0.0)?;
        Ok(Self {
            feature_model,
            theta_hat,
            theta_star: None,
            diagnostics,
            train_features: phi,
        })
    }

    pub fn with_theta_star(mut self, theta_star: DVector<f64>) -> Result<Self> {
        check_dim("theta* length", self.feature_model.m(), theta_star.len())?;
        self.theta_star = Some(theta_star);
        Ok(self)
    }

    fn theta_star_or_err(&self) -> Result<&DVector<f64>> {
        self.theta_star
            .as_ref()
            .ok_or_else(|| domain("reference coefficients θ* are required for excess risk"))
    }
}

/// Anything that maps inputs to predictions and may carry a reference predictor.
pub trait Predictor {
    fn input_dim(&self) -> usize;

    /// Features per member, `m`.
    fn feature_count(&self) -> usize;

    /// Number of averaged members, `K`.
    fn ensemble_size(&self) -> usize {
        1
    }

    fn predict(&self, x: &DMatrix<f64>) -> Result<DVector<f64>>;

    /// Predictions `f(θ*, x)` of the reference coefficients.
    fn predict_reference(&self, x: &DMatrix<f64>) -> Result<DVector<f64>>;

    /// Both predictions, sharing the feature computation where possible.
    fn predict_both(&self, x: &DMatrix<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
        Ok((self.predict(x)?, self.predict_reference(x)?))
    }
}

impl Predictor for FittedModel {
    fn input_dim(&self) -> usize {
        self.feature_model.p()
    }

    fn feature_count(&self) -> usize {
        self.feature_model.m()
    }

    fn predict(&self, x: &DMatrix<f64>) -> Result<DVector<f64>> {
        self.feature_model.evaluate(x, &self.theta_hat)
    }

    fn predict_reference(&self, x: &DMatrix<f64>) -> Result<DVector<f64>> {
        self.feature_model.evaluate(x, self.theta_star_or_err()?)
    }

    fn predict_both(&self, x: &DMatrix<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
        let star = self.theta_star_or_err()?;
        match self.feature_model.activation() {
            Activation::Identity => Ok((self.predict(x)?, self.predict_reference(x)?)),
            Activation::Relu => {
                let phi = self.feature_model.feature_map(x)?;
                Ok((&phi * &self.theta_hat, &phi * star))
            }
        }
    }
}

/// Average of `K ≥ 1` fitted models sharing input dimension and activation.
#[derive(Debug, Clone)]
pub struct EnsembleModel {
    members: Vec<FittedModel>,
}

impl EnsembleModel {
    pub fn new(members: Vec<FittedModel>) -> Result<Self> {
        let first = members.first().ok_or_else(|| domain("an ensemble needs at least one member"))?;
        let (p, act) = (first.feature_model.p(), first.feature_model.activation());
        for m in &members {
            check_dim("ensemble member input dimension", p, m.feature_model.p())?;
            if m.feature_model.activation() != act {
                return Err(domain("ensemble members must share the activation"));
            }
        }
        Ok(Self { members })
    }

    pub fn members(&self) -> &[FittedModel] {
        &self.members
    }

    pub fn k(&self) -> usize {
        self.members.len()
    }

    fn average(&self, f: impl Fn(&FittedModel) -> Result<DVector<f64>>) -> Result<DVector<f64>> {
        let mut acc = f(&self.members[0])?;
        for m in &self.members[1..] {
            acc += f(m)?;
        }
        Ok(acc / self.k() as f64)
    }
}

impl Predictor for EnsembleModel {
    fn input_dim(&self) -> usize {
        self.members[0].input_dim()
    }

    fn feature_count(&self) -> usize {
        self.members[0].feature_count()
    }

    fn ensemble_size(&self) -> usize {
        self.k()
    }

    fn predict(&self, x: &DMatrix<f64>) -> Result<DVector<f64>> {
        self.average(|m| m.predict(x))
    }

    fn predict_reference(&self, x: &DMatrix<f64>) -> Result<DVector<f64>> {
        self.average(|m| m.predict_reference(x))
    }
}

/// Ridge approximation of the population minimizer `θ*`.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaStar {
    pub theta: DVector<f64>,
    /// Mean squared gap between `g` and `f(θ*, ·)` on the fitting sample.
    pub population_mse: f64,
    pub n_pop: usize,
    pub reg: f64,
}

/// `max(10 m, 10⁴)`.
pub fn default_population_size(m: usize) -> usize {
    (10 * m).max(10_000)
}

/// Fits `θ*` by noiseless ridge regression of `g` on `n_pop` fresh inputs. With
/// `reg_pop = None` the penalty is `10⁻⁸ · tr(ΦᵀΦ) / n_pop`.
pub fn estimate_theta_star<R: Rng + ?Sized>(
    fm: &FeatureModel,
    g: &GroundTruth,
    spec: &Spectrum,
    eta: EtaDist,
    n_pop: usize,
    reg_pop: Option<f64>,
    rng: &mut R,
) -> Result<ThetaStar> {
    check_dim("spectrum length", fm.p(), spec.len())?;
    if n_pop == 0 {
        return Err(domain("n_pop must be at least 1"));
    }
    if n_pop < fm.m() {
        log::warn!("n_pop = {n_pop} is below m = {}; θ* is poorly determined", fm.m());
    }
    let x = sample_inputs(spec, n_pop, eta, rng)?;
    let target = g.eval_rows(&x)?;
    let phi = fm.feature_map(&x)?;
    let reg = match reg_pop {
        Some(r) if r.is_finite() && r > 0.0 => r,
        Some(r) => return Err(domain(format!("reg_pop must be positive, got {r}"))),
        None => 1e-8 * phi.norm_squared() / n_pop as f64,
    };
    let theta = if n_pop >= fm.m() {
        let normal = phi.tr_mul(&phi);
        let rhs = phi.tr_mul(&target);
        spectral_solve(&normal, &rhs, reg, DEFAULT_RANK_TOL).solution
    } else {
        fit_min_norm(&phi, &target, reg)?.0
    };
    let population_mse = (&phi * &theta - &target).norm_squared() / n_pop as f64;
    if !population_mse.is_finite() {
        return Err(Error::Numerical("non-finite θ* fit".into()));
    }
    Ok(ThetaStar {
        theta,
        population_mse,
        n_pop,
        reg,
    })
}

/// Exact population minimizer for identity features and a linear target:
/// the minimum-norm solution of `Σ^{1/2} W θ / √m = Σ^{1/2} β`.
pub fn theta_star_identity_linear(fm: &FeatureModel, g: &GroundTruth, spec: &Spectrum) -> Result<DVector<f64>> {
    if fm.activation() != Activation::Identity || !matches!(g.kind, TruthKind::Linear) {
        return Err(domain("closed-form θ* needs identity features and a linear target"));
    }
    check_dim("spectrum length", fm.p(), spec.len())?;
    check_dim("beta length", fm.p(), g.dim())?;
    let root: Vec<f64> = spec.eigenvalues().iter().map(|l| l.sqrt()).collect();
    let scale = 1.0 / (fm.m() as f64).sqrt();
    let a = DMatrix::from_fn(fm.p(), fm.m(), |i, j| root[i] * fm.weights()[(i, j)] * scale);
    let rhs = DVector::from_fn(fm.p(), |i, _| root[i] * g.beta[i]);
    Ok(fit_min_norm(&a, &rhs, 0.0)?.0)
}
