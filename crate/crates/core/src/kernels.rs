//! Closed-form Gaussian expectations for ReLU features: the degree-1
//! arc-cosine kernel and its linearization, feature second moments, the
//! gradient kernel under a shift, a fourth-order moment, and a trace
//! comparison inequality.

use std::f64::consts::PI;

use nalgebra::DMatrix;

use crate::datagen::ShiftModel;
use crate::error::{check_dim, domain, Result};
use crate::features::{sample_feature_model, Activation};
use crate::linalg::{symmetric_eigenvalues, symmetric_op_norm};
use crate::rng::{stream_rng, Stream};
use crate::spectra::Spectrum;

/// Cosine clamped to `[-1, 1]`.
fn cosine(inner: f64, na: f64, nb: f64) -> f64 {
    (inner / (na * nb)).clamp(-1.0, 1.0)
}

/// `E[φ(u)φ(v)]` with `φ = max(0, ·)` for a centred Gaussian pair with
/// covariance `[[na², inner], [inner, nb²]]`.
fn arccos_kernel(inner: f64, na: f64, nb: f64) -> f64 {
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    let rho = cosine(inner, na, nb);
    (inner * (-rho).acos() + na * nb * (1.0 - rho * rho).sqrt()) / (2.0 * PI)
}

/// `E_w φ(wᵀx_s) φ(wᵀx_t)` for `w ~ N(0, I/p)`.
pub fn expected_kernel_entry(xs: &[f64], xt: &[f64], p: usize) -> f64 {
    let inner: f64 = xs.iter().zip(xt).map(|(a, b)| a * b).sum();
    let ns = xs.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nt = xt.iter().map(|v| v * v).sum::<f64>().sqrt();
    arccos_kernel(inner, ns, nt) / p as f64
}

/// The `n × n` matrix of [`expected_kernel_entry`] over the rows of `x`.
pub fn expected_kernel_matrix(x: &DMatrix<f64>) -> DMatrix<f64> {
    let p = x.ncols() as f64;
    let gram = x * x.transpose();
    let norms: Vec<f64> = (0..x.nrows()).map(|i| gram[(i, i)].max(0.0).sqrt()).collect();
    DMatrix::from_fn(x.nrows(), x.nrows(), |s, t| {
        if s == t {
            gram[(s, s)] / (2.0 * p)
        } else {
            arccos_kernel(gram[(s, t)], norms[s], norms[t]) / p
        }
    })
}

/// How the coefficient of the all-ones term of the linearized kernel is read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OnesCoefficient {
    /// `3 tr{Σ²} / (4π tr{Σ}²)`.
    #[default]
    TraceOfSquare,
    /// `3 r₀(Σ²) / (4π tr{Σ}²)` with `r₀(Σ²) = tr{Σ²}/λ₁²`.
    EffectiveRankOfSquare,
}

/// `K̃ = (tr/p)(1/2π + c) 11ᵀ + XXᵀ/(4p) + (tr/p)(1/4 − 1/2π) I`.
pub fn linearized_kernel(x: &DMatrix<f64>, spec: &Spectrum, reading: OnesCoefficient) -> Result<DMatrix<f64>> {
    check_dim("linearized kernel input columns", spec.len(), x.ncols())?;
    let p = spec.len() as f64;
    let tr = spec.trace();
    let tr2 = spec.trace_of_square();
    let numerator = match reading {
        OnesCoefficient::TraceOfSquare => tr2,
        OnesCoefficient::EffectiveRankOfSquare => tr2 / spec.largest().powi(2),
    };
    let ones = (tr / p) * (1.0 / (2.0 * PI) + 3.0 * numerator / (4.0 * PI * tr * tr));
    let diag = (tr / p) * (0.25 - 1.0 / (2.0 * PI));
    let n = x.nrows();
    let mut k = x * x.transpose() / (4.0 * p);
    k.add_scalar_mut(ones);
    for i in 0..n {
        k[(i, i)] += diag;
    }
    Ok(k)
}

/// Source of the kernel compared against `K̃`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelSource {
    /// Exact expectation over `W`.
    ClosedForm,
    /// Average of `n_rep` realized Gram matrices `ΦΦᵀ` with `m` ReLU features.
    MonteCarlo { m: usize, n_rep: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelReport {
    pub p: usize,
    pub n: usize,
    /// `None` for the closed form, otherwise the feature count.
    pub m: Option<usize>,
    pub kernel: DMatrix<f64>,
    pub linearized: DMatrix<f64>,
    /// `‖K − K̃‖₂`.
    pub op_norm_error: f64,
    /// `op_norm_error / (tr{Σ}/p)`.
    pub relative_error: f64,
}

impl KernelReport {
    pub const CSV_HEADER: &'static str = "p,n,m_or_closed,op_norm_error,relative_error";

    pub fn csv_row(&self) -> String {
        let m = self.m.map_or_else(|| "closed".to_string(), |m| m.to_string());
        format!("{},{},{},{:.16e},{:.16e}", self.p, self.n, m, self.op_norm_error, self.relative_error)
    }
}

pub fn kernel_linearization_report(
    source: KernelSource,
    x: &DMatrix<f64>,
    spec: &Spectrum,
    reading: OnesCoefficient,
) -> Result<KernelReport> {
    let linearized = linearized_kernel(x, spec, reading)?;
    let p = spec.len();
    let (kernel, m) = match source {
        KernelSource::ClosedForm => (expected_kernel_matrix(x), None),
        KernelSource::MonteCarlo { m, n_rep, seed } => {
            if n_rep == 0 {
                return Err(domain("n_rep must be at least 1"));
            }
            let mut acc = DMatrix::zeros(x.nrows(), x.nrows());
            for rep in 0..n_rep {
                let mut rng = stream_rng(seed, Stream::Features, rep as u64, m as u64);
                let fm = sample_feature_model(p, m, Activation::Relu, &mut rng)?;
                let phi = fm.feature_map(x)?;
                acc += &phi * phi.transpose();
            }
            (acc / n_rep as f64, Some(m))
        }
    };
    let op_norm_error = symmetric_op_norm(&(&kernel - &linearized));
    let relative_error = op_norm_error / (spec.trace() / p as f64);
    Ok(KernelReport {
        p,
        n: x.nrows(),
        m,
        kernel,
        linearized,
        op_norm_error,
        relative_error,
    })
}

/// `M₁ = E_x φ(Wᵀx) φ(Wᵀx)ᵀ / m` for `x ~ N(0, diag(λ))`.
pub fn expected_feature_second_moment(weights: &DMatrix<f64>, spec: &Spectrum) -> Result<DMatrix<f64>> {
    check_dim("weight rows", spec.len(), weights.nrows())?;
    let m = weights.ncols();
    let sigma_w = DMatrix::from_fn(weights.nrows(), m, |i, j| spec.eigenvalues()[i] * weights[(i, j)]);
    let g = weights.tr_mul(&sigma_w);
    let norms: Vec<f64> = (0..m).map(|i| g[(i, i)].max(0.0).sqrt()).collect();
    let mf = m as f64;
    Ok(DMatrix::from_fn(m, m, |i, j| {
        if i == j {
            g[(i, i)] / (2.0 * mf)
        } else {
            arccos_kernel(g[(i, j)], norms[i], norms[j]) / mf
        }
    }))
}

fn weighted_inner(a: &[f64], b: &[f64], weights: &[f64]) -> f64 {
    a.iter().zip(b).zip(weights).map(|((x, y), w)| x * y * w).sum()
}

/// `E_x 1(w_iᵀx ≥ 0) 1(w_jᵀx ≥ 0) · w_iᵀ Σ_δ w_j` for `x ~ N(0, diag(λ))`.
pub fn relu_gradient_kernel_entry(wi: &[f64], wj: &[f64], spec: &Spectrum, shift: &ShiftModel) -> Result<f64> {
    let p = spec.len();
    check_dim("w_i length", p, wi.len())?;
    check_dim("w_j length", p, wj.len())?;
    check_dim("shift length", p, shift.dim())?;
    let lam = spec.eigenvalues();
    let shifted = weighted_inner(wi, wj, &shift.alphas);
    if wi == wj {
        return Ok(0.5 * shifted);
    }
    let ni = weighted_inner(wi, wi, lam).sqrt();
    let nj = weighted_inner(wj, wj, lam).sqrt();
    if ni == 0.0 || nj == 0.0 {
        return Ok(0.0);
    }
    let rho = cosine(weighted_inner(wi, wj, lam), ni, nj);
    Ok((-rho).acos() / (2.0 * PI) * shifted)
}

/// `E_w wᵀHw · aᵀw · bᵀw · 1(aᵀw ≥ 0) 1(bᵀw ≥ 0)` for `w ~ N(0, I_p)` and diagonal `H`.
pub fn ood_moment_closed_form(h: &[f64], a: &[f64], b: &[f64]) -> Result<f64> {
    let p = h.len();
    check_dim("a length", p, a.len())?;
    check_dim("b length", p, b.len())?;
    if h.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(domain("H must have non-negative finite diagonal entries"));
    }
    let na2 = a.iter().map(|v| v * v).sum::<f64>();
    let nb2 = b.iter().map(|v| v * v).sum::<f64>();
    if na2 == 0.0 || nb2 == 0.0 {
        return Err(domain("a and b must be nonzero"));
    }
    let (na, nb) = (na2.sqrt(), nb2.sqrt());
    let tr_h: f64 = h.iter().sum();
    let rho = cosine(a.iter().zip(b).map(|(x, y)| x * y).sum(), na, nb);
    // π minus the angle between a and b, via unit-vector sum and difference;
    // exact at both antipodal and parallel ends, unlike acos(−ρ)
    let (mut sum2, mut diff2) = (0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (u, v) = (x / na, y / nb);
        sum2 += (u + v) * (u + v);
        diff2 += (u - v) * (u - v);
    }
    let psi = 2.0 * sum2.sqrt().atan2(diff2.sqrt());
    let ahb = weighted_inner(a, b, h);
    let aha = weighted_inner(a, a, h) / na2;
    let bhb = weighted_inner(b, b, h) / nb2;
    let angular = (na * nb * tr_h / (2.0 * PI) * rho + ahb / PI) * psi;
    let radial = (tr_h + aha + bhb) * na * nb / (2.0 * PI) * psi.sin();
    Ok(angular + radial)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InequalityCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub pass: bool,
}

impl InequalityCheck {
    fn new(lhs: f64, rhs: f64) -> Self {
        let tol = 1e-10 * lhs.abs().max(rhs.abs()).max(f64::MIN_POSITIVE);
        Self {
            lhs,
            rhs,
            pass: lhs <= rhs + tol,
        }
    }
}

/// The four inequalities relating `tr{(A+B)C}` and `tr{(A+B)⁻¹C}` to their
/// `B = 0` counterparts, with `c = μ₁(B)/μ_n(A)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceComparison {
    /// `tr{AC} ≤ tr{(A+B)C}`.
    pub sum_lower: InequalityCheck,
    /// `tr{(A+B)C} ≤ (1 + c) tr{AC}`.
    pub sum_upper: InequalityCheck,
    /// `(1 − c) tr{A⁻¹C} ≤ tr{(A+B)⁻¹C}`.
    pub inverse_lower: InequalityCheck,
    /// `tr{(A+B)⁻¹C} ≤ tr{A⁻¹C}`.
    pub inverse_upper: InequalityCheck,
}

impl TraceComparison {
    pub fn all_pass(&self) -> bool {
        [self.sum_lower, self.sum_upper, self.inverse_lower, self.inverse_upper]
            .iter()
            .all(|c| c.pass)
    }
}

fn check_psd(name: &str, m: &DMatrix<f64>) -> Result<Vec<f64>> {
    if !m.is_square() {
        return Err(domain(format!("{name} must be square")));
    }
    let scale = m.amax().max(f64::MIN_POSITIVE);
    if (m - m.transpose()).amax() > 1e-12 * scale {
        return Err(domain(format!("{name} must be symmetric")));
    }
    let eig = symmetric_eigenvalues(m);
    if eig.last().is_some_and(|&v| v < -1e-12 * scale) {
        return Err(domain(format!("{name} must be positive semidefinite")));
    }
    Ok(eig)
}

fn trace_of_product(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.component_mul(&b.transpose()).sum()
}

pub fn trace_comparison_check(a: &DMatrix<f64>, b: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<TraceComparison> {
    let n = a.nrows();
    check_dim("B size", n, b.nrows())?;
    check_dim("C size", n, c.nrows())?;
    let eig_a = check_psd("A", a)?;
    let eig_b = check_psd("B", b)?;
    check_psd("C", c)?;
    let mu_n_a = *eig_a.last().ok_or_else(|| domain("matrices must be non-empty"))?;
    let mu_1_b = eig_b[0].max(0.0);
    if mu_n_a <= 0.0 {
        return Err(domain("A must be positive definite"));
    }
    if mu_n_a <= mu_1_b {
        return Err(domain(format!("need μ_n(A) = {mu_n_a} > μ₁(B) = {mu_1_b}")));
    }
    let ratio = mu_1_b / mu_n_a;
    let sum = a + b;
    let inv_solve = |m: &DMatrix<f64>| -> Result<f64> {
        let chol = m.clone().cholesky().ok_or_else(|| domain("matrix is not positive definite"))?;
        Ok(chol.solve(c).trace())
    };
    let t_ac = trace_of_product(a, c);
    let t_sc = trace_of_product(&sum, c);
    let t_ainv = inv_solve(a)?;
    let t_sinv = inv_solve(&sum)?;
    Ok(TraceComparison {
        sum_lower: InequalityCheck::new(t_ac, t_sc),
        sum_upper: InequalityCheck::new(t_sc, (1.0 + ratio) * t_ac),
        inverse_lower: InequalityCheck::new((1.0 - ratio) * t_ainv, t_sinv),
        inverse_upper: InequalityCheck::new(t_sinv, t_ainv),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{sample_inputs, EtaDist};
    use crate::linalg::gaussian_matrix;
    use crate::rng::StreamRng;
    use approx::assert_relative_eq;
    use nalgebra::DVector;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn rng(a: u64) -> StreamRng {
        stream_rng(77, Stream::Auxiliary, a, 0)
    }

    fn normal_vec(p: usize, r: &mut StreamRng) -> Vec<f64> {
        (0..p).map(|_| r.sample(StandardNormal)).collect()
    }

    /// Mean and standard error of a sample.
    fn mean_se(v: &[f64]) -> (f64, f64) {
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, (var / n).sqrt())
    }

    #[test]
    fn kernel_entry_examples() {
        let x = [1.0, 2.0, -0.5];
        let y = [2.0, -1.0, 0.0];
        let nx2 = 5.25;
        assert_relative_eq!(expected_kernel_entry(&x, &x, 3), nx2 / 6.0, epsilon = 1e-15);
        assert_relative_eq!(
            expected_kernel_entry(&x, &y, 3),
            nx2.sqrt() * 5f64.sqrt() / (2.0 * PI * 3.0),
            epsilon = 1e-15
        );
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert_eq!(expected_kernel_entry(&x, &neg, 3), 0.0);
        assert_eq!(expected_kernel_entry(&[0.0; 3], &y, 3), 0.0);
    }

    #[test]
    fn kernel_entry_symmetry_and_homogeneity() {
        let mut r = rng(1);
        for _ in 0..50 {
            let a = normal_vec(6, &mut r);
            let b = normal_vec(6, &mut r);
            let c: f64 = r.random_range(0.1..5.0);
            let ab = expected_kernel_entry(&a, &b, 6);
            assert_relative_eq!(ab, expected_kernel_entry(&b, &a, 6), epsilon = 1e-15);
            let ca: Vec<f64> = a.iter().map(|v| c * v).collect();
            let cb: Vec<f64> = b.iter().map(|v| c * v).collect();
            assert_relative_eq!(expected_kernel_entry(&ca, &cb, 6), c * c * ab, max_relative = 1e-12);
        }
    }

    #[test]
    fn expected_kernel_is_psd() {
        let spec = Spectrum::identity(5).unwrap();
        let x = sample_inputs(&spec, 30, EtaDist::Gaussian, &mut rng(2)).unwrap();
        let k = expected_kernel_matrix(&x);
        let min = *symmetric_eigenvalues(&k).last().unwrap();
        assert!(min >= -1e-10 * k.trace(), "{min}");
    }

    #[test]
    fn linearized_kernel_single_point() {
        let spec = Spectrum::new(vec![3.0, 1.0, 0.5, 0.5], "").unwrap();
        let x = DMatrix::from_row_slice(1, 4, &[0.5, -1.0, 2.0, 0.0]);
        let k = linearized_kernel(&x, &spec, OnesCoefficient::TraceOfSquare).unwrap();
        let (tr, tr2, p) = (5.0, 10.5, 4.0);
        let expected = (tr / p) * (1.0 / (2.0 * PI) + 3.0 * tr2 / (4.0 * PI * tr * tr))
            + 5.25 / (4.0 * p)
            + (tr / p) * (0.25 - 1.0 / (2.0 * PI));
        assert_relative_eq!(k[(0, 0)], expected, epsilon = 1e-14);

        let alt = linearized_kernel(&x, &spec, OnesCoefficient::EffectiveRankOfSquare).unwrap();
        let expected_alt = expected - (tr / p) * 3.0 * tr2 / (4.0 * PI * tr * tr)
            + (tr / p) * 3.0 * (tr2 / 9.0) / (4.0 * PI * tr * tr);
        assert_relative_eq!(alt[(0, 0)], expected_alt, epsilon = 1e-14);
    }

    #[test]
    fn linearized_kernel_structure() {
        let spec = Spectrum::identity(3).unwrap();
        let k = linearized_kernel(&DMatrix::zeros(3, 3), &spec, OnesCoefficient::default()).unwrap();
        let off = k[(0, 1)];
        assert!(k.iter().enumerate().all(|(i, v)| i % 4 == 0 || *v == off));
        let x = gaussian_matrix(5, 3, 1.0, &mut rng(3));
        let k = linearized_kernel(&x, &spec, OnesCoefficient::default()).unwrap();
        assert_eq!(k, k.transpose());
        assert!(linearized_kernel(&DMatrix::zeros(2, 4), &spec, OnesCoefficient::default()).is_err());
    }

    #[test]
    fn report_at_origin_is_scalar_gap() {
        let spec = Spectrum::new(vec![2.0, 1.0], "").unwrap();
        let x = DMatrix::zeros(1, 2);
        let r = kernel_linearization_report(KernelSource::ClosedForm, &x, &spec, OnesCoefficient::default()).unwrap();
        let kt = linearized_kernel(&x, &spec, OnesCoefficient::default()).unwrap()[(0, 0)];
        assert_eq!(r.op_norm_error, kt.abs());
        assert_eq!(r.relative_error, kt.abs() / 1.5);
        assert!(r.csv_row().starts_with("2,1,closed,"));
    }

    #[test]
    fn monte_carlo_gram_approaches_closed_form() {
        let spec = Spectrum::identity(16).unwrap();
        let x = sample_inputs(&spec, 4, EtaDist::Gaussian, &mut rng(4)).unwrap();
        let exact = expected_kernel_matrix(&x);
        let mut errs = Vec::new();
        for n_rep in [4, 16, 64, 256] {
            let src = KernelSource::MonteCarlo { m: 64, n_rep, seed: 9 };
            let r = kernel_linearization_report(src, &x, &spec, OnesCoefficient::default()).unwrap();
            errs.push((&r.kernel - &exact).amax());
        }
        assert!(errs.windows(2).all(|w| w[1] < w[0]), "{errs:?}");
    }

    #[test]
    fn monte_carlo_error_shrinks_with_width() {
        let spec = Spectrum::identity(32).unwrap();
        let mut narrow = 0.0;
        let mut wide = 0.0;
        for s in 0..20 {
            let x = sample_inputs(&spec, 4, EtaDist::Gaussian, &mut rng(100 + s)).unwrap();
            for (m, acc) in [(32, &mut narrow), (512, &mut wide)] {
                let src = KernelSource::MonteCarlo { m, n_rep: 1, seed: s };
                *acc += kernel_linearization_report(src, &x, &spec, OnesCoefficient::default()).unwrap().op_norm_error;
            }
        }
        assert!(wide <= narrow, "{wide} > {narrow}");
    }

    #[test]
    fn second_moment_special_cases() {
        let spec = Spectrum::new(vec![2.0, 1.0, 0.5], "").unwrap();
        // duplicated column hits the ρ = 1 branch off the diagonal
        let dup = DMatrix::from_column_slice(3, 2, &[1.0, 0.5, 0.0, 1.0, 0.5, 0.0]);
        let m1 = expected_feature_second_moment(&dup, &spec).unwrap();
        assert_relative_eq!(m1[(0, 0)], 2.25 / 4.0, epsilon = 1e-15);
        assert_relative_eq!(m1[(0, 1)], m1[(0, 0)], epsilon = 1e-15);
        // w₁ᵀΣw₂ = 2·1·1 + 1·2·(−1) = 0
        let orth = DMatrix::from_column_slice(3, 2, &[1.0, 2.0, 0.0, 1.0, -1.0, 0.0]);
        let m2 = expected_feature_second_moment(&orth, &spec).unwrap();
        assert_relative_eq!(m2[(0, 1)], 6f64.sqrt() * 3f64.sqrt() / (2.0 * PI * 2.0), epsilon = 1e-15);
    }

    #[test]
    fn second_moment_matches_monte_carlo() {
        let spec = Spectrum::new(vec![2.0, 1.5, 1.0, 1.0, 0.7, 0.5, 0.3, 0.1], "").unwrap();
        let w = gaussian_matrix(8, 4, 1.0 / 8f64.sqrt(), &mut rng(5));
        let exact = expected_feature_second_moment(&w, &spec).unwrap();
        let x = sample_inputs(&spec, 1_000_000, EtaDist::Gaussian, &mut rng(6)).unwrap();
        let z = (&x * &w).map(|v| v.max(0.0));
        for i in 0..4 {
            for j in i..4 {
                let prod: Vec<f64> = (0..z.nrows()).map(|t| z[(t, i)] * z[(t, j)] / 4.0).collect();
                let (mean, se) = mean_se(&prod);
                assert!((mean - exact[(i, j)]).abs() <= 3.0 * se, "({i},{j}): {mean} vs {}", exact[(i, j)]);
            }
        }
    }

    #[test]
    fn gradient_kernel_matches_monte_carlo() {
        let spec = Spectrum::new(vec![2.0, 1.5, 1.0, 1.0, 0.7, 0.5, 0.3, 0.1], "").unwrap();
        let shift = ShiftModel::custom(vec![0.5, 0.1, 0.0, 0.3, 1.0, 0.2, 0.2, 0.9], 1.0).unwrap();
        let mut r = rng(7);
        let wi = normal_vec(8, &mut r);
        let wj = normal_vec(8, &mut r);
        let exact = relu_gradient_kernel_entry(&wi, &wj, &spec, &shift).unwrap();
        let shifted = weighted_inner(&wi, &wj, &shift.alphas);
        let x = sample_inputs(&spec, 1_000_000, EtaDist::Gaussian, &mut rng(8)).unwrap();
        let vi = DVector::from_vec(wi.clone());
        let vj = DVector::from_vec(wj.clone());
        let (ui, uj) = (&x * vi, &x * vj);
        let samples: Vec<f64> = (0..x.nrows())
            .map(|t| if ui[t] >= 0.0 && uj[t] >= 0.0 { shifted } else { 0.0 })
            .collect();
        let (mean, se) = mean_se(&samples);
        assert!((mean - exact).abs() <= 3.0 * se, "{mean} vs {exact}");

        assert_relative_eq!(
            relu_gradient_kernel_entry(&wi, &wi, &spec, &shift).unwrap(),
            0.5 * weighted_inner(&wi, &wi, &shift.alphas)
        );
        let none = ShiftModel::none(8);
        assert_eq!(relu_gradient_kernel_entry(&wi, &wj, &spec, &none).unwrap(), 0.0);
    }

    #[test]
    fn ood_moment_analytic_cases() {
        let a = [1.0, -2.0, 0.5, 3.0];
        let na2: f64 = a.iter().map(|v| v * v).sum();
        let h = [1.0; 4];
        assert_relative_eq!(ood_moment_closed_form(&h, &a, &a).unwrap(), na2 * (4.0 / 2.0 + 1.0), epsilon = 1e-12);
        let neg: Vec<f64> = a.iter().map(|v| -v).collect();
        assert_eq!(ood_moment_closed_form(&h, &a, &neg).unwrap(), 0.0);
        assert!(ood_moment_closed_form(&h, &[0.0; 4], &a).is_err());
    }

    #[test]
    fn ood_moment_orthogonal_inputs() {
        let h = [0.5, 2.0, 1.0, 0.1, 0.0, 3.0];
        let a = [1.0, 1.0, 0.0, 0.0, 2.0, 0.0];
        let b = [1.0, -1.0, 0.0, 3.0, 0.0, 0.0];
        let na = 6f64.sqrt();
        let nb = 11f64.sqrt();
        let ahb = 0.5 - 2.0;
        let aha = (0.5 + 2.0) / 6.0;
        let bhb = (0.5 + 2.0 + 0.9) / 11.0;
        let tr_h = 6.6;
        let expected = ahb / 2.0 + (tr_h + aha + bhb) * na * nb / (2.0 * PI);
        assert_relative_eq!(ood_moment_closed_form(&h, &a, &b).unwrap(), expected, epsilon = 1e-12);
    }

    #[test]
    fn ood_moment_leading_term_dominates_for_flat_h() {
        let mut r = rng(9);
        for &p in &[50usize, 400] {
            let h: Vec<f64> = (0..p).map(|_| r.random_range(0.5..1.0)).collect();
            let a = normal_vec(p, &mut r);
            let b = normal_vec(p, &mut r);
            let exact = ood_moment_closed_form(&h, &a, &b).unwrap();
            let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
            let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
            let tr_h: f64 = h.iter().sum();
            let max_h = h.iter().cloned().fold(0.0, f64::max);
            let rho = cosine(a.iter().zip(&b).map(|(x, y)| x * y).sum(), na, nb);
            let ahb = weighted_inner(&a, &b, &h);
            let leading = (na * nb * tr_h / (2.0 * PI) * rho + ahb / PI) * (-rho).acos()
                + tr_h * na * nb / (2.0 * PI) * (1.0 - rho * rho).sqrt();
            assert!(((exact - leading) / exact).abs() <= 2.0 * max_h / tr_h);
        }
    }

    #[test]
    fn trace_comparison_examples() {
        let i3 = DMatrix::<f64>::identity(3, 3);
        let r = trace_comparison_check(&(&i3 * 2.0), &i3, &i3).unwrap();
        assert_relative_eq!(r.sum_upper.lhs, 9.0, epsilon = 1e-12);
        assert_relative_eq!(r.sum_upper.rhs, 9.0, epsilon = 1e-12);
        assert!(r.all_pass());

        let a = DMatrix::from_row_slice(2, 2, &[3.0, 1.0, 1.0, 2.0]);
        let c = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 2.0]);
        let r = trace_comparison_check(&a, &DMatrix::zeros(2, 2), &c).unwrap();
        for chk in [r.sum_lower, r.sum_upper, r.inverse_lower, r.inverse_upper] {
            assert!(chk.pass);
            assert_relative_eq!(chk.lhs, chk.rhs, max_relative = 1e-12);
        }
        assert!(trace_comparison_check(&i3, &(&i3 * 2.0), &i3).is_err());
        assert!(trace_comparison_check(&(-&i3), &DMatrix::zeros(3, 3), &i3).is_err());
    }

    #[test]
    fn trace_of_product_respects_frobenius_bound() {
        let mut r = rng(10);
        for _ in 0..20 {
            let a = gaussian_matrix(50, 50, 1.0, &mut r);
            let b = gaussian_matrix(50, 50, 1.0, &mut r);
            assert!(trace_of_product(&a, &b).abs() <= a.norm() * b.norm());
        }
    }
}
