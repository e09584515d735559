//! Monte Carlo ID/OOD risks, ensemble improvement ratios, bias–variance
//! decomposition of the ID excess risk, and bound shapes with unit constants.

use nalgebra::{DMatrix, DVector};

use crate::datagen::{sample_inputs, sample_labels, sample_shift, EtaDist, GroundTruth, NoiseModel, ShiftModel};
use crate::error::{check_dim, domain, Result};
use crate::features::{FittedModel, Predictor};
use crate::kernels::expected_feature_second_moment;
use crate::linalg::{psd_pseudo_inverse, DEFAULT_RANK_TOL};
use crate::rng::{stream_rng, Stream};
use crate::spectra::Spectrum;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Metric {
    IdExcess,
    OodExcess,
    IdMse,
    OodMse,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::IdExcess, Metric::OodExcess, Metric::IdMse, Metric::OodMse];

    pub fn name(&self) -> &'static str {
        match self {
            Metric::IdExcess => "id_excess",
            Metric::OodExcess => "ood_excess",
            Metric::IdMse => "id_mse",
            Metric::OodMse => "ood_mse",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == s)
    }

    /// Whether the metric compares against `f(θ*, ·)`.
    pub fn needs_reference(&self) -> bool {
        matches!(self, Metric::IdExcess | Metric::OodExcess)
    }

    pub fn is_shifted(&self) -> bool {
        matches!(self, Metric::OodExcess | Metric::OodMse)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ModelKind {
    /// Mean over the `K` members of a trial.
    SingleAvg,
    Ensemble,
}

impl ModelKind {
    pub const ALL: [ModelKind; 2] = [ModelKind::SingleAvg, ModelKind::Ensemble];

    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::SingleAvg => "single_avg",
            ModelKind::Ensemble => "ensemble",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskEstimate {
    pub metric: Metric,
    pub model_kind: ModelKind,
    pub mean: f64,
    pub stderr: f64,
    /// Number of averaged values.
    pub trials: usize,
    pub m: usize,
    pub k: usize,
}

/// Sample mean and standard error (`sd / √n`, zero for a single value).
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Standard error of the mean of `a_i − b_i`.
pub fn paired_difference_stderr(a: &[f64], b: &[f64]) -> Result<f64> {
    check_dim("paired sample length", a.len(), b.len())?;
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    Ok(mean_stderr(&diff).1)
}

/// `√(se_a² + se_b²)` for two independent means.
pub fn unpaired_stderr(a: &[f64], b: &[f64]) -> f64 {
    mean_stderr(a).1.hypot(mean_stderr(b).1)
}

/// Fresh test inputs with their shifted copies and labels.
#[derive(Debug, Clone)]
pub struct TestSet {
    pub x: DMatrix<f64>,
    /// `x + δ`.
    pub shifted: DMatrix<f64>,
    /// `g(x) + ε`.
    pub y_id: DVector<f64>,
    /// `g(x + δ) + ε`.
    pub y_ood: DVector<f64>,
}

impl TestSet {
    /// Draws inputs, shifts and noise from independent streams keyed by `(seed, index)`.
    pub fn sample(
        spec: &Spectrum,
        g: &GroundTruth,
        noise: &NoiseModel,
        shift: Option<&ShiftModel>,
        n_test: usize,
        seed: u64,
        index: u64,
    ) -> Result<Self> {
        if n_test == 0 {
            return Err(domain("n_test must be at least 1"));
        }
        let x = sample_inputs(spec, n_test, noise.eta, &mut stream_rng(seed, Stream::TestInputs, index, 0))?;
        let shifted = match shift {
            Some(s) => {
                check_dim("shift length", spec.len(), s.dim())?;
                &x + sample_shift(s, n_test, &mut stream_rng(seed, Stream::Shift, index, 0))
            }
            None => x.clone(),
        };
        let clean_id = g.eval_rows(&x)?;
        let y_ood = sample_labels(g, &shifted, noise, &mut stream_rng(seed, Stream::TestNoise, index, 0))?;
        // same noise draw on both label sets
        let noise_part = &y_ood - g.eval_rows(&shifted)?;
        let y_id = clean_id + noise_part;
        Ok(Self { x, shifted, y_id, y_ood })
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.nrows() == 0
    }
}

/// Predictions of one model on a [`TestSet`].
#[derive(Debug, Clone)]
pub struct TestOutputs {
    pub id: DVector<f64>,
    pub ood: DVector<f64>,
    pub id_reference: Option<DVector<f64>>,
    pub ood_reference: Option<DVector<f64>>,
}

impl TestOutputs {
    pub fn of(model: &dyn Predictor, test: &TestSet, with_reference: bool) -> Result<Self> {
        if with_reference {
            let (id, id_ref) = model.predict_both(&test.x)?;
            let (ood, ood_ref) = model.predict_both(&test.shifted)?;
            Ok(Self {
                id,
                ood,
                id_reference: Some(id_ref),
                ood_reference: Some(ood_ref),
            })
        } else {
            Ok(Self {
                id: model.predict(&test.x)?,
                ood: model.predict(&test.shifted)?,
                id_reference: None,
                ood_reference: None,
            })
        }
    }

    /// Pointwise average of several outputs, as produced by an ensemble.
    pub fn average(outputs: &[TestOutputs]) -> Result<Self> {
        let first = outputs.first().ok_or_else(|| domain("nothing to average"))?;
        let k = outputs.len() as f64;
        let avg = |f: &dyn Fn(&TestOutputs) -> &DVector<f64>| -> DVector<f64> {
            outputs[1..].iter().fold(f(first).clone(), |acc, o| acc + f(o)) / k
        };
        let avg_opt = |f: &dyn Fn(&TestOutputs) -> Option<&DVector<f64>>| -> Option<DVector<f64>> {
            let mut acc = f(first)?.clone();
            for o in &outputs[1..] {
                acc += f(o)?;
            }
            Some(acc / k)
        };
        Ok(Self {
            id: avg(&|o| &o.id),
            ood: avg(&|o| &o.ood),
            id_reference: avg_opt(&|o| o.id_reference.as_ref()),
            ood_reference: avg_opt(&|o| o.ood_reference.as_ref()),
        })
    }

    /// Per-point squared errors for a metric.
    pub fn squared_errors(&self, metric: Metric, test: &TestSet) -> Result<DVector<f64>> {
        let missing = || domain(format!("{} needs reference predictions", metric.name()));
        let diff = match metric {
            Metric::IdExcess => &self.id - self.id_reference.as_ref().ok_or_else(missing)?,
            Metric::OodExcess => &self.ood - self.ood_reference.as_ref().ok_or_else(missing)?,
            Metric::IdMse => &self.id - &test.y_id,
            Metric::OodMse => &self.ood - &test.y_ood,
        };
        Ok(diff.map(|v| v * v))
    }

    pub fn risk(&self, metric: Metric, test: &TestSet) -> Result<f64> {
        Ok(self.squared_errors(metric, test)?.mean())
    }
}

fn estimate_on(model: &dyn Predictor, metric: Metric, test: &TestSet) -> Result<RiskEstimate> {
    let outputs = TestOutputs::of(model, test, metric.needs_reference())?;
    let sq = outputs.squared_errors(metric, test)?;
    let (mean, stderr) = mean_stderr(sq.as_slice());
    let k = model.ensemble_size();
    Ok(RiskEstimate {
        metric,
        model_kind: if k == 1 { ModelKind::SingleAvg } else { ModelKind::Ensemble },
        mean,
        stderr,
        trials: test.len(),
        m: model.feature_count(),
        k,
    })
}

/// `E_x (f(θ̂, x) − f(θ*, x))²` over `n_test` fresh inputs.
pub fn id_excess_risk(
    model: &dyn Predictor,
    spec: &Spectrum,
    g: &GroundTruth,
    eta: EtaDist,
    n_test: usize,
    seed: u64,
) -> Result<RiskEstimate> {
    let noise = NoiseModel { sigma: 0.0, eta };
    let test = TestSet::sample(spec, g, &noise, None, n_test, seed, 0)?;
    estimate_on(model, Metric::IdExcess, &test)
}

/// `E_{x,δ} (f(θ̂, x+δ) − f(θ*, x+δ))²`. Uses the same input stream as
/// [`id_excess_risk`] for equal seeds.
pub fn ood_excess_risk(
    model: &dyn Predictor,
    spec: &Spectrum,
    g: &GroundTruth,
    eta: EtaDist,
    shift: &ShiftModel,
    n_test: usize,
    seed: u64,
) -> Result<RiskEstimate> {
    let noise = NoiseModel { sigma: 0.0, eta };
    let test = TestSet::sample(spec, g, &noise, Some(shift), n_test, seed, 0)?;
    estimate_on(model, Metric::OodExcess, &test)
}

/// Mean of `(prediction − y)²` with `y = g(x + δ) + ε`, or `y = g(x) + ε` without a shift.
pub fn prediction_mse(
    model: &dyn Predictor,
    spec: &Spectrum,
    g: &GroundTruth,
    noise: &NoiseModel,
    shift: Option<&ShiftModel>,
    n_test: usize,
    seed: u64,
) -> Result<RiskEstimate> {
    let test = TestSet::sample(spec, g, noise, shift, n_test, seed, 0)?;
    let metric = if shift.is_some() { Metric::OodMse } else { Metric::IdMse };
    estimate_on(model, metric, &test)
}

/// `R_K = 1 − ensemble / mean(singles)`.
pub fn improvement_ratio(single_risks: &[f64], ensemble_risk: f64) -> Result<f64> {
    if single_risks.is_empty() {
        return Err(domain("need at least one single-model risk"));
    }
    let mean = single_risks.iter().sum::<f64>() / single_risks.len() as f64;
    if mean == 0.0 {
        return Err(domain("mean single-model risk is zero"));
    }
    Ok(1.0 - ensemble_risk / mean)
}

/// `R_K` from per-trial single-average and ensemble risks, with a delta-method stderr.
pub fn improvement_ratio_with_stderr(single: &[f64], ensemble: &[f64]) -> Result<(f64, f64)> {
    check_dim("paired sample length", single.len(), ensemble.len())?;
    let (s_mean, _) = mean_stderr(single);
    let (e_mean, _) = mean_stderr(ensemble);
    let ratio = improvement_ratio(single, e_mean)?;
    let r = e_mean / s_mean;
    let linearized: Vec<f64> = single.iter().zip(ensemble).map(|(s, e)| (e - r * s) / s_mean).collect();
    Ok((ratio, mean_stderr(&linearized).1))
}

/// `(1 − 1/K)(p/m)/(1 + p/m)`.
pub fn linear_feature_improvement_prediction(p: usize, m: usize, k: usize) -> Result<f64> {
    if p == 0 || m == 0 || k == 0 {
        return Err(domain("p, m and K must be at least 1"));
    }
    let q = p as f64 / m as f64;
    Ok((1.0 - 1.0 / k as f64) * q / (1.0 + q))
}

/// `Σ_{λ_j ≤ tr/(bn)} λ_j / tr`.
pub fn small_eigenvalue_fraction(spec: &Spectrum, b: f64, n: usize) -> Result<f64> {
    let threshold = crate::datagen::small_eigenvalue_threshold(spec, b, n)?;
    let small: f64 = spec.eigenvalues().iter().rev().filter(|&&l| l <= threshold).sum();
    Ok(small / spec.trace())
}

/// ID upper-bound shape with unit constants:
/// `tr/p · ‖θ*‖²/n^{1/4} + σ²(n^{-1/8} + k*/n + n Σ_{j>k*} λ_j² / tr²)`.
/// `None` when `k*(b)` is undefined.
pub fn id_bound_shape(spec: &Spectrum, n: usize, theta_star_norm_sq: f64, sigma: f64, b: f64) -> Result<Option<f64>> {
    let Some(kstar) = spec.critical_index(b, n)? else {
        return Ok(None);
    };
    let nf = n as f64;
    let tr = spec.trace();
    let tail_sq: f64 = spec.eigenvalues()[kstar..].iter().rev().map(|l| l * l).sum();
    let signal = tr / spec.len() as f64 * theta_star_norm_sq / nf.powf(0.25);
    let noise = sigma * sigma * (nf.powf(-0.125) + kstar as f64 / nf + nf * tail_sq / (tr * tr));
    Ok(Some(signal + noise))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OodBoundShapes {
    pub lower: f64,
    pub upper: f64,
    /// Lower shape of `R₂`, zero when the upper shape vanishes.
    pub r2_lower: f64,
}

/// OOD bound shapes with unit constants. `g_grad_sq` is `E_x ‖∇g(x)‖²`.
pub fn ood_bound_shapes(
    spec: &Spectrum,
    n: usize,
    m: usize,
    sigma: f64,
    tau: f64,
    b: f64,
    g_grad_sq: f64,
) -> Result<OodBoundShapes> {
    if m == 0 {
        return Err(domain("m must be at least 1"));
    }
    let q = spec.len() as f64 / m as f64;
    let small = small_eigenvalue_fraction(spec, b, n)?;
    let s2t = sigma * sigma * tau;
    let lower = s2t * q + s2t * small;
    let upper = tau * g_grad_sq + s2t * (q + 1.0) + s2t * small;
    let r2_lower = if upper > 0.0 { 0.5 * s2t * q / upper } else { 0.0 };
    Ok(OodBoundShapes { lower, upper, r2_lower })
}

/// All bound shapes for one configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundEvaluation {
    pub id_upper_shape: Option<f64>,
    pub ood: OodBoundShapes,
    /// Always true: unknown constants are set to one.
    pub constants_assumed_one: bool,
}

#[allow(clippy::too_many_arguments)]
pub fn evaluate_bounds(
    spec: &Spectrum,
    n: usize,
    m: usize,
    theta_star_norm_sq: f64,
    sigma: f64,
    tau: f64,
    b: f64,
    g_grad_sq: f64,
) -> Result<BoundEvaluation> {
    Ok(BoundEvaluation {
        id_upper_shape: id_bound_shape(spec, n, theta_star_norm_sq, sigma, b)?,
        ood: ood_bound_shapes(spec, n, m, sigma, tau, b, g_grad_sq)?,
        constants_assumed_one: true,
    })
}

/// Largest `m` for which the `m × m` second moment is formed explicitly.
pub const CLOSED_FORM_MAX_M: usize = 2048;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DecompositionMode {
    ClosedForm,
    /// Averages over `n_test` Gaussian inputs instead of forming the second moment.
    MonteCarlo { n_test: usize, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BiasVariance {
    pub bias: f64,
    pub variance: f64,
    /// Zero in closed form.
    pub bias_stderr: f64,
    pub variance_stderr: f64,
}

impl BiasVariance {
    pub fn total(&self) -> f64 {
        self.bias + self.variance
    }
}

/// Splits the expected ID excess risk over label noise into
/// `bias = θ*ᵀ(I − P) M₁ (I − P)θ*` and `variance = σ² tr{(ΦΦᵀ)^{-2} Φ M₁ Φᵀ}`,
/// where `P` projects onto the row space of `Φ`. Labels are taken to be
/// `Φθ* + ε`.
pub fn id_bias_variance_decompose(
    fitted: &FittedModel,
    spec: &Spectrum,
    sigma: f64,
    mode: DecompositionMode,
) -> Result<BiasVariance> {
    let theta_star = fitted
        .theta_star
        .as_ref()
        .ok_or_else(|| domain("bias–variance decomposition needs θ*"))?;
    let fm = &fitted.feature_model;
    check_dim("spectrum length", fm.p(), spec.len())?;
    let phi = &fitted.train_features;
    let gram_pinv = psd_pseudo_inverse(&(phi * phi.transpose()), DEFAULT_RANK_TOL);
    let residual = theta_star - phi.transpose() * (&gram_pinv * (phi * theta_star));
    let s2 = sigma * sigma;
    match mode {
        DecompositionMode::ClosedForm => {
            if fm.m() > CLOSED_FORM_MAX_M {
                return Err(domain(format!(
                    "m = {} exceeds {CLOSED_FORM_MAX_M} for the closed form; use the Monte Carlo mode",
                    fm.m()
                )));
            }
            let m1 = expected_feature_second_moment(fm.weights(), spec)?;
            let bias = residual.dot(&(&m1 * &residual));
            let left = &gram_pinv * phi;
            let variance = s2 * (&left * &m1).component_mul(&left).sum();
            Ok(BiasVariance {
                bias,
                variance,
                bias_stderr: 0.0,
                variance_stderr: 0.0,
            })
        }
        DecompositionMode::MonteCarlo { n_test, seed } => {
            if n_test < 2 {
                return Err(domain("n_test must be at least 2"));
            }
            let x = sample_inputs(spec, n_test, EtaDist::Gaussian, &mut stream_rng(seed, Stream::TestInputs, 0, 0))?;
            let test_phi = fm.feature_map(&x)?;
            let bias_terms = (&test_phi * &residual).map(|v| v * v);
            // E_ε (φ_xᵀ Φᵀ G⁺ ε)² = σ² ‖G⁺ Φ φ_x‖²
            let proj = &test_phi * (phi.transpose() * &gram_pinv);
            let var_terms: Vec<f64> = proj.row_iter().map(|r| s2 * r.norm_squared()).collect();
            let (bias, bias_stderr) = mean_stderr(bias_terms.as_slice());
            let (variance, variance_stderr) = mean_stderr(&var_terms);
            Ok(BiasVariance {
                bias,
                variance,
                bias_stderr,
                variance_stderr,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{build_shift_model, ShiftConstruction};
    use crate::features::{sample_feature_model, theta_star_identity_linear, Activation, EnsembleModel};
    use crate::spectra::{make_example_spectrum, SpectrumKind};
    use approx::assert_relative_eq;
    use std::sync::Arc;

    fn rng(a: u64) -> crate::rng::StreamRng {
        stream_rng(3, Stream::Auxiliary, a, 0)
    }

    fn relu_model(p: usize, m: usize, n: usize, seed: u64) -> FittedModel {
        let spec = Spectrum::identity(p).unwrap();
        let fm = sample_feature_model(p, m, Activation::Relu, &mut rng(seed)).unwrap();
        let x = sample_inputs(&spec, n, EtaDist::Gaussian, &mut rng(seed + 1)).unwrap();
        let g = GroundTruth::softplus(GroundTruth::first_axis(p));
        let y = sample_labels(&g, &x, &NoiseModel::gaussian(0.1), &mut rng(seed + 2)).unwrap();
        FittedModel::fit(fm, &x, &y).unwrap()
    }

    #[test]
    fn metric_names_round_trip() {
        for m in Metric::ALL {
            assert_eq!(Metric::parse(m.name()), Some(m));
        }
        assert_eq!(Metric::parse("mse"), None);
    }

    #[test]
    fn excess_is_zero_at_theta_star() {
        let model = relu_model(5, 20, 6, 10);
        let theta = model.theta_hat.clone();
        let model = model.with_theta_star(theta).unwrap();
        let spec = Spectrum::identity(5).unwrap();
        let g = GroundTruth::linear(GroundTruth::first_axis(5));
        let shift = ShiftModel::custom(vec![4.0; 5], 4.0).unwrap();
        assert_eq!(id_excess_risk(&model, &spec, &g, EtaDist::Gaussian, 100, 1).unwrap().mean, 0.0);
        assert_eq!(ood_excess_risk(&model, &spec, &g, EtaDist::Gaussian, &shift, 100, 1).unwrap().mean, 0.0);
    }

    #[test]
    fn zero_shift_matches_id_excess() {
        let model = relu_model(5, 20, 6, 20).with_theta_star(DVector::from_element(20, 0.1)).unwrap();
        let spec = Spectrum::identity(5).unwrap();
        let g = GroundTruth::linear(GroundTruth::first_axis(5));
        let id = id_excess_risk(&model, &spec, &g, EtaDist::Gaussian, 500, 7).unwrap();
        let ood = ood_excess_risk(&model, &spec, &g, EtaDist::Gaussian, &ShiftModel::none(5), 500, 7).unwrap();
        assert_eq!(id.mean, ood.mean);
        assert_eq!(id.stderr, ood.stderr);
        let missing = relu_model(5, 20, 6, 21);
        assert!(id_excess_risk(&missing, &spec, &g, EtaDist::Gaussian, 10, 7).is_err());
    }

    #[test]
    fn identity_features_recover_linear_target_exactly() {
        // n ≥ m = p, σ = 0: the interpolant is the target itself
        let p = 6;
        let spec = Spectrum::new(vec![2.0, 1.5, 1.0, 0.8, 0.5, 0.3], "").unwrap();
        let g = GroundTruth::linear(GroundTruth::uniform_direction(p));
        let fm = sample_feature_model(p, p, Activation::Identity, &mut rng(30)).unwrap();
        let star = theta_star_identity_linear(&fm, &g, &spec).unwrap();
        let x = sample_inputs(&spec, 12, EtaDist::Gaussian, &mut rng(31)).unwrap();
        let y = g.eval_rows(&x).unwrap();
        let model = FittedModel::fit(fm, &x, &y).unwrap().with_theta_star(star).unwrap();
        let r = id_excess_risk(&model, &spec, &g, EtaDist::Gaussian, 1000, 2).unwrap();
        assert!(r.mean <= 1e-10 * spec.trace(), "{}", r.mean);
    }

    #[test]
    fn prediction_mse_examples() {
        let spec = Spectrum::identity(3).unwrap();
        let zero = GroundTruth::custom(3, Arc::new(|_| 0.0));
        let fm = sample_feature_model(3, 4, Activation::Relu, &mut rng(40)).unwrap();
        let x = sample_inputs(&spec, 2, EtaDist::Gaussian, &mut rng(41)).unwrap();
        let model = FittedModel::fit(fm, &x, &DVector::zeros(2)).unwrap();
        let quiet = prediction_mse(&model, &spec, &zero, &NoiseModel::gaussian(0.0), None, 100, 1).unwrap();
        assert_eq!(quiet.mean, 0.0);
        let s = 0.3;
        let noisy = prediction_mse(&model, &spec, &zero, &NoiseModel::gaussian(s), None, 20_000, 1).unwrap();
        assert!((noisy.mean - s * s).abs() <= 3.0 * noisy.stderr, "{noisy:?}");
    }

    #[test]
    fn ensemble_outputs_average() {
        let spec = Spectrum::identity(4).unwrap();
        let g = GroundTruth::linear(GroundTruth::first_axis(4));
        let test = TestSet::sample(&spec, &g, &NoiseModel::gaussian(0.1), None, 50, 1, 0).unwrap();
        let a = relu_model(4, 10, 5, 50);
        let b = relu_model(4, 10, 5, 60);
        let outs = [
            TestOutputs::of(&a, &test, false).unwrap(),
            TestOutputs::of(&b, &test, false).unwrap(),
        ];
        let avg = TestOutputs::average(&outs).unwrap();
        let ens = EnsembleModel::new(vec![a, b]).unwrap();
        assert_relative_eq!(avg.id, ens.predict(&test.x).unwrap(), epsilon = 1e-14);
        assert!(avg.id_reference.is_none());
    }

    #[test]
    fn improvement_ratio_examples() {
        assert_eq!(improvement_ratio(&[2.0, 2.0], 1.0).unwrap(), 0.5);
        assert_eq!(improvement_ratio(&[1.0, 1.0], 1.0).unwrap(), 0.0);
        assert_eq!(improvement_ratio(&[3.0, 1.0], 1.5).unwrap(), 0.25);
        assert!(improvement_ratio(&[0.0], 1.0).is_err());
        assert!(improvement_ratio(&[], 1.0).is_err());
        let (r, se) = improvement_ratio_with_stderr(&[2.0, 2.0, 2.0], &[1.0, 1.0, 1.0]).unwrap();
        assert_eq!((r, se), (0.5, 0.0));
    }

    #[test]
    fn linear_feature_prediction_examples() {
        assert_eq!(linear_feature_improvement_prediction(10, 10, 2).unwrap(), 0.25);
        assert_relative_eq!(linear_feature_improvement_prediction(20, 10, 2).unwrap(), 1.0 / 3.0, epsilon = 1e-15);
        assert!(linear_feature_improvement_prediction(1, 1 << 40, 2).unwrap() < 1e-12);
        assert_eq!(linear_feature_improvement_prediction(5, 7, 1).unwrap(), 0.0);
    }

    #[test]
    fn bound_shape_degenerate_cases() {
        let spec = make_example_spectrum(SpectrumKind::Example2, 3).unwrap();
        assert_eq!(id_bound_shape(&spec, 3, 0.0, 0.0, 1.0).unwrap(), Some(0.0));
        // identity with p = n²: r_k = p − k never reaches b·n once b·n > p
        let id = Spectrum::identity(16).unwrap();
        assert_eq!(id_bound_shape(&id, 4, 1.0, 1.0, 5.0).unwrap(), None);
        let zero_tau = ood_bound_shapes(&spec, 3, 10, 0.5, 0.0, 1.0, 1.0).unwrap();
        assert_eq!(zero_tau, OodBoundShapes { lower: 0.0, upper: 0.0, r2_lower: 0.0 });
    }

    #[test]
    fn ood_lower_shape_tends_to_small_fraction() {
        let spec = make_example_spectrum(SpectrumKind::Sim2, 40).unwrap();
        let frac = small_eigenvalue_fraction(&spec, 1.0, 40).unwrap();
        let far = ood_bound_shapes(&spec, 40, usize::MAX / 2, 0.5, 2.0, 1.0, 1.0).unwrap();
        assert_relative_eq!(far.lower, 0.25 * 2.0 * frac, max_relative = 1e-12);
        let mut prev = f64::INFINITY;
        for m in [40, 80, 160, 320, 640] {
            let s = ood_bound_shapes(&spec, 40, m, 0.5, 2.0, 1.0, 1.0).unwrap();
            assert!(s.r2_lower < prev);
            prev = s.r2_lower;
        }
    }

    #[test]
    fn bound_shapes_are_bit_reproducible() {
        let spec = make_example_spectrum(SpectrumKind::Sim2, 40).unwrap();
        let a = evaluate_bounds(&spec, 40, 80, 1.3, 0.005, 1.0, 1.0, 1.0).unwrap();
        let b = evaluate_bounds(&spec, 40, 80, 1.3, 0.005, 1.0, 1.0, 1.0).unwrap();
        assert_eq!(a, b);
        assert!(a.constants_assumed_one);
    }

    #[test]
    fn decomposition_degenerate_cases() {
        let spec = Spectrum::identity(5).unwrap();
        let model = relu_model(5, 12, 4, 70);
        assert!(id_bias_variance_decompose(&model, &spec, 0.1, DecompositionMode::ClosedForm).is_err());
        let zero = model.clone().with_theta_star(DVector::zeros(12)).unwrap();
        let bv = id_bias_variance_decompose(&zero, &spec, 0.1, DecompositionMode::ClosedForm).unwrap();
        assert_eq!(bv.bias, 0.0);
        assert!(bv.variance > 0.0);
        let star = model.with_theta_star(DVector::from_element(12, 0.3)).unwrap();
        let quiet = id_bias_variance_decompose(&star, &spec, 0.0, DecompositionMode::ClosedForm).unwrap();
        assert_eq!(quiet.variance, 0.0);
        assert!(quiet.bias > 0.0);
    }

    #[test]
    fn decomposition_modes_agree() {
        let spec = Spectrum::new(vec![2.0, 1.0, 1.0, 0.5, 0.5, 0.25], "").unwrap();
        let model = relu_model(6, 24, 6, 80).with_theta_star(DVector::from_fn(24, |i, _| (i as f64).cos())).unwrap();
        let cf = id_bias_variance_decompose(&model, &spec, 0.2, DecompositionMode::ClosedForm).unwrap();
        let mc = id_bias_variance_decompose(&model, &spec, 0.2, DecompositionMode::MonteCarlo { n_test: 200_000, seed: 4 }).unwrap();
        assert!((cf.bias - mc.bias).abs() <= 4.0 * mc.bias_stderr, "{cf:?} {mc:?}");
        assert!((cf.variance - mc.variance).abs() <= 4.0 * mc.variance_stderr, "{cf:?} {mc:?}");
    }

    #[test]
    fn default_shift_keeps_ood_finite() {
        let spec = make_example_spectrum(SpectrumKind::Sim1, 8).unwrap();
        let shift = build_shift_model(&spec, 1.0, 4, 1.0, ShiftConstruction::Assumption2Default).unwrap();
        let model = relu_model(8, 16, 4, 90).with_theta_star(DVector::zeros(16)).unwrap();
        let g = GroundTruth::linear(GroundTruth::first_axis(8));
        let r = ood_excess_risk(&model, &spec, &g, EtaDist::Gaussian, &shift, 100, 3).unwrap();
        assert!(r.mean.is_finite() && r.stderr >= 0.0);
    }

    #[test]
    fn stderr_helpers() {
        assert_eq!(mean_stderr(&[2.0]), (2.0, 0.0));
        let (m, se) = mean_stderr(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert_relative_eq!(se, 1.0);
        assert_eq!(paired_difference_stderr(&[1.0, 2.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_relative_eq!(unpaired_stderr(&[1.0, 3.0], &[1.0, 3.0]), 2f64.sqrt());
    }
}
