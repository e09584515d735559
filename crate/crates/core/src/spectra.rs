//! Covariance spectra and the benign-overfitting diagnostics built on them.
//!
//! A [`Spectrum`] holds the eigenvalues `λ₁ ≥ … ≥ λ_p > 0` of a diagonal input
//! covariance. The effective rank `r_k = (Σ_{i>k} λ_i) / λ_{k+1}` and the
//! critical index `k*(b) = min { k : r_k ≥ b·n }` split the spectrum into a
//! few "large" directions and a long flat tail.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{domain, Error, Result};

/// Largest spectrum the example constructors will materialise.
pub const MAX_EXAMPLE_LEN: usize = 1 << 27;

#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    eigenvalues: Vec<f64>,
    label: String,
}

impl Spectrum {
    /// Wraps eigenvalues that are already strictly positive and non-increasing.
    pub fn new(eigenvalues: Vec<f64>, label: impl Into<String>) -> Result<Self> {
        if eigenvalues.is_empty() {
            return Err(domain("spectrum must contain at least one eigenvalue"));
        }
        if let Some((i, v)) = eigenvalues
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && **v > 0.0))
        {
            return Err(domain(format!("eigenvalue {} is {v}, expected a positive finite value", i + 1)));
        }
        if let Some(i) = eigenvalues.windows(2).position(|w| w[1] > w[0]) {
            return Err(domain(format!(
                "eigenvalues must be non-increasing: λ{} = {} < λ{} = {}",
                i + 1,
                eigenvalues[i],
                i + 2,
                eigenvalues[i + 1]
            )));
        }
        Ok(Self {
            eigenvalues,
            label: label.into(),
        })
    }

    /// Sorts the values into descending order before validating them.
    pub fn from_unsorted(mut eigenvalues: Vec<f64>, label: impl Into<String>) -> Result<Self> {
        eigenvalues.sort_unstable_by(|a, b| b.total_cmp(a));
        Self::new(eigenvalues, label)
    }

    pub fn identity(p: usize) -> Result<Self> {
        Self::new(vec![1.0; p], "identity")
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    /// Dimension `p`.
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    /// `tr{Σ}`.
    pub fn trace(&self) -> f64 {
        // smallest first for accuracy on long tails
        self.eigenvalues.iter().rev().sum()
    }

    /// `tr{Σ²}`.
    pub fn trace_of_square(&self) -> f64 {
        self.eigenvalues.iter().rev().map(|v| v * v).sum()
    }

    pub fn largest(&self) -> f64 {
        self.eigenvalues[0]
    }

    /// Multiplies every eigenvalue by `c > 0`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        if !(c.is_finite() && c > 0.0) {
            return Err(domain(format!("scale factor must be positive, got {c}")));
        }
        Self::new(self.eigenvalues.iter().map(|v| v * c).collect(), self.label.clone())
    }

    /// `tail[k] = Σ_{i ≥ k} λ_i` (0-based), with `tail[p] = 0`.
    fn tail_sums(&self) -> Vec<f64> {
        let p = self.len();
        let mut tail = vec![0.0; p + 1];
        for k in (0..p).rev() {
            tail[k] = tail[k + 1] + self.eigenvalues[k];
        }
        tail
    }

    /// Effective rank `r_k = (Σ_{i>k} λ_i) / λ_{k+1}` for `0 ≤ k < p`.
    pub fn effective_rank(&self, k: usize) -> Result<f64> {
        let p = self.len();
        if k >= p {
            return Err(domain(format!("effective rank index k = {k} must be below p = {p}")));
        }
        let tail: f64 = self.eigenvalues[k..].iter().rev().sum();
        Ok(tail / self.eigenvalues[k])
    }

    /// Critical index `k*(b) = min { k ≥ 0 : r_k ≥ b·n }`, or `None` when no
    /// `k < p` qualifies.
    pub fn critical_index(&self, b: f64, n: usize) -> Result<Option<usize>> {
        if !(b.is_finite() && b > 0.0) {
            return Err(domain(format!("b must be positive, got {b}")));
        }
        if n == 0 {
            return Err(domain("n must be at least 1"));
        }
        let threshold = b * n as f64;
        let tail = self.tail_sums();
        Ok((0..self.len()).find(|&k| tail[k] / self.eigenvalues[k] >= threshold))
    }

    /// Ratios of the benign-overfitting condition at sample size `n`.
    pub fn benign_diagnostics(&self, n: usize, b: f64, xi: f64) -> Result<BenignDiagnostics> {
        if !(xi.is_finite() && xi > 0.0) {
            return Err(domain(format!("xi must be positive, got {xi}")));
        }
        let kstar = self.critical_index(b, n)?;
        let nf = n as f64;
        let trace = self.trace();
        Ok(BenignDiagnostics {
            n,
            b,
            xi,
            r0_over_n: self.effective_rank(0)? / nf,
            kstar,
            kstar_over_n: kstar.map(|k| k as f64 / nf),
            tail_ratio: nf.powf(1.0 + xi) * self.trace_of_square() / (trace * trace),
        })
    }

    /// Evaluates the high-dimension conditions for `n` samples and `m` features.
    ///
    /// Conditions stated with `≫` are reported as ratios and compared against
    /// `threshold`.
    pub fn highdim_diagnostics(&self, n: usize, m: usize, threshold: f64) -> Result<HighDimDiagnostics> {
        if n == 0 || m == 0 {
            return Err(domain("n and m must be at least 1"));
        }
        let p = self.len();
        let nf = n as f64;
        let n4 = (n as u128).checked_pow(4);
        let samples_ok = n4.is_some_and(|v| v <= p as u128);
        let dimension_margin = (p as f64).powf(0.25) / nf;
        let trace_margin = self.trace() / nf.powf(0.75);
        let ln_m = (m as f64).ln();
        let log_margin = if ln_m > 0.0 { nf / ln_m } else { f64::INFINITY };
        Ok(HighDimDiagnostics {
            n,
            m,
            p,
            threshold,
            samples_below_quartic_root: samples_ok,
            dimension_margin,
            trace_margin,
            trace_dominates: trace_margin >= threshold,
            log_margin,
            samples_dominate_log_width: log_margin >= threshold,
            width_at_least_dimension: m >= p,
        })
    }

    /// Parses the one-eigenvalue-per-line text format.
    pub fn parse(text: &str) -> Result<Self> {
        let mut label = String::new();
        let mut values = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(comment) = line.strip_prefix('#') {
                if let Some(rest) = comment.trim_start().strip_prefix("label:") {
                    label = rest.trim().to_string();
                }
                continue;
            }
            let v: f64 = line.parse().map_err(|_| Error::Parse {
                line: idx + 1,
                key: None,
                message: format!("`{line}` is not a number"),
            })?;
            values.push(v);
        }
        Self::new(values, label)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let spec = Self::parse(&text)?;
        if spec.label.is_empty() {
            let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            Ok(spec.with_label(stem))
        } else {
            Ok(spec)
        }
    }

    /// Renders the text format. Values use the shortest round-tripping decimal form.
    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(self.len() * 12);
        if !self.label.is_empty() {
            let _ = writeln!(out, "# label: {}", self.label);
        }
        for v in &self.eigenvalues {
            let _ = writeln!(out, "{v}");
        }
        out
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenignDiagnostics {
    pub n: usize,
    pub b: f64,
    pub xi: f64,
    pub r0_over_n: f64,
    /// `None` when no index reaches `b·n`.
    pub kstar: Option<usize>,
    pub kstar_over_n: Option<f64>,
    /// `n^{1+ξ} Σλ_i² / (Σλ_i)²`.
    pub tail_ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HighDimDiagnostics {
    pub n: usize,
    pub m: usize,
    pub p: usize,
    pub threshold: f64,
    /// `n ≤ p^{1/4}`, decided in exact integer arithmetic.
    pub samples_below_quartic_root: bool,
    /// `p^{1/4} / n`.
    pub dimension_margin: f64,
    /// `tr{Σ} / n^{3/4}`.
    pub trace_margin: f64,
    pub trace_dominates: bool,
    /// `n / ln m`.
    pub log_margin: f64,
    pub samples_dominate_log_width: bool,
    pub width_at_least_dimension: bool,
}

/// Named spectrum families.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SpectrumKind {
    /// Spike at 1 followed by an `n^{-21/5}`-scaled Toeplitz-type tail, `p = n⁵`.
    Example1 { s: f64 },
    /// `λ_k = k^{-5/6}` with `p = n⁵`.
    Example2,
    /// `λ₁ = 1`, `λ₂ = … = λ_p = 0.25`.
    Sim1,
    /// `λ_i = i^{-5/12}`.
    Sim2,
    /// `λ_i = i^{-exponent}` at an explicit dimension.
    PowerLaw { exponent: f64 },
    Identity,
}

impl SpectrumKind {
    /// Whether the size argument of [`make_example_spectrum`] is `n` (with `p = n⁵`).
    pub fn size_is_sample_count(&self) -> bool {
        matches!(self, SpectrumKind::Example1 { .. } | SpectrumKind::Example2)
    }

    pub fn name(&self) -> String {
        match self {
            SpectrumKind::Example1 { s } => format!("example1({s})"),
            SpectrumKind::Example2 => "example2".into(),
            SpectrumKind::Sim1 => "sim1".into(),
            SpectrumKind::Sim2 => "sim2".into(),
            SpectrumKind::PowerLaw { exponent } => format!("power({exponent})"),
            SpectrumKind::Identity => "identity".into(),
        }
    }

    /// Parses `example1(s)`, `example2`, `sim1`, `sim2`, `power(a)` or `identity`.
    pub fn parse(text: &str) -> Option<Self> {
        let t = text.trim();
        let arg = |prefix: &str| -> Option<f64> {
            t.strip_prefix(prefix)?
                .trim_start()
                .strip_prefix('(')?
                .strip_suffix(')')?
                .trim()
                .parse()
                .ok()
        };
        match t {
            "example2" => Some(SpectrumKind::Example2),
            "sim1" => Some(SpectrumKind::Sim1),
            "sim2" => Some(SpectrumKind::Sim2),
            "identity" => Some(SpectrumKind::Identity),
            _ => {
                if let Some(s) = arg("example1") {
                    Some(SpectrumKind::Example1 { s })
                } else {
                    arg("power").map(|exponent| SpectrumKind::PowerLaw { exponent })
                }
            }
        }
    }

    /// Dimension produced for a size argument.
    pub fn dimension(&self, n_or_p: usize) -> Option<usize> {
        if self.size_is_sample_count() {
            n_or_p.checked_pow(5)
        } else {
            Some(n_or_p)
        }
    }
}

/// Builds a named spectrum. `n_or_p` is `n` for the two examples (`p = n⁵`)
/// and the dimension `p` otherwise.
pub fn make_example_spectrum(kind: SpectrumKind, n_or_p: usize) -> Result<Spectrum> {
    if n_or_p == 0 {
        return Err(domain("size argument must be at least 1"));
    }
    let p = kind
        .dimension(n_or_p)
        .filter(|&p| p <= MAX_EXAMPLE_LEN)
        .ok_or_else(|| domain(format!("{} at size {n_or_p} exceeds {MAX_EXAMPLE_LEN} eigenvalues", kind.name())))?;
    let label = format!("{}@{n_or_p}", kind.name());
    match kind {
        SpectrumKind::Example1 { s } => {
            if !(s > 0.0 && s < 1.0) {
                return Err(domain(format!("example1 requires s in (0, 1), got {s}")));
            }
            let n = n_or_p as f64;
            let scale = n.powf(-21.0 / 5.0);
            let angle = PI / (p as f64 + 1.0);
            let base = 1.0 + s * s - 2.0 * s * angle.cos();
            let mut values = Vec::with_capacity(p);
            values.push(1.0);
            values.extend((2..=p).map(|k| scale * (1.0 + s * s - 2.0 * s * (k as f64 * angle).cos()) / base));
            Spectrum::from_unsorted(values, label)
        }
        SpectrumKind::Example2 => power_law(p, 5.0 / 6.0, label),
        SpectrumKind::Sim1 => {
            let mut values = vec![0.25; p];
            values[0] = 1.0;
            Spectrum::new(values, label)
        }
        SpectrumKind::Sim2 => power_law(p, 5.0 / 12.0, label),
        SpectrumKind::PowerLaw { exponent } => {
            if !(exponent.is_finite() && exponent >= 0.0) {
                return Err(domain(format!("power-law exponent must be non-negative, got {exponent}")));
            }
            power_law(p, exponent, label)
        }
        SpectrumKind::Identity => Spectrum::new(vec![1.0; p], label),
    }
}

fn power_law(p: usize, exponent: f64, label: String) -> Result<Spectrum> {
    Spectrum::new((1..=p).map(|k| (k as f64).powf(-exponent)).collect(), label)
}
