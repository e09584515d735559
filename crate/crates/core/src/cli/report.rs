//! Spectral-ratio audits, kernel linearization runs and spectrum diagnostics.

use std::fmt::Write as _;

use crate::datagen::{sample_inputs, validate_shift, EtaDist, ShiftChecks, ShiftModel};
use crate::error::{check_dim, domain, Result};
use crate::kernels::{kernel_linearization_report, KernelReport, KernelSource, OnesCoefficient};
use crate::rng::{stream_rng, Stream};
use crate::spectra::{make_example_spectrum, Spectrum, SpectrumKind};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuditOptions {
    pub n: usize,
    pub b: f64,
    pub tau: f64,
}

fn kstar_text(k: Option<usize>) -> String {
    k.map_or_else(|| "undefined".into(), |k| k.to_string())
}

fn checks_text(out: &mut String, checks: &ShiftChecks) {
    for (name, c) in [
        ("spectral_norm", checks.spectral_norm),
        ("large_directions", checks.large_directions),
        ("small_directions", checks.small_directions),
    ] {
        let verdict = if c.pass { "pass" } else { "fail" };
        let _ = writeln!(out, "# check_{name},{:.16e},{:.16e},{verdict}", c.value, c.bound);
    }
}

/// Eigenvalue ratios `λ'_i / λ_i` with a `#`-prefixed summary block: `r₀` and
/// `k*(b)` of both spectra, and the shift constraints for `Σ_δ = |Σ' − Σ|`
/// measured against the baseline.
pub fn spectral_ratio_report(baseline: &Spectrum, shifted: &Spectrum, opts: AuditOptions) -> Result<String> {
    check_dim("shifted spectrum length", baseline.len(), shifted.len())?;
    let mut out = String::from("index,lambda_base,lambda_shifted,ratio\n");
    for (i, (a, b)) in baseline.eigenvalues().iter().zip(shifted.eigenvalues()).enumerate() {
        let _ = writeln!(out, "{},{:.16e},{:.16e},{:.16e}", i + 1, a, b, b / a);
    }
    let alphas: Vec<f64> = baseline
        .eigenvalues()
        .iter()
        .zip(shifted.eigenvalues())
        .map(|(a, b)| (b - a).abs())
        .collect();
    let shift = ShiftModel::custom(alphas, opts.tau)?;
    let checks = validate_shift(&shift, baseline, opts.b, opts.n)?;
    let _ = writeln!(out, "# summary,n={},b={},tau={}", opts.n, opts.b, opts.tau);
    let _ = writeln!(out, "# r0_base,{:.16e}", baseline.effective_rank(0)?);
    let _ = writeln!(out, "# r0_shifted,{:.16e}", shifted.effective_rank(0)?);
    let _ = writeln!(out, "# kstar_base,{}", kstar_text(baseline.critical_index(opts.b, opts.n)?));
    let _ = writeln!(out, "# kstar_shifted,{}", kstar_text(shifted.critical_index(opts.b, opts.n)?));
    checks_text(&mut out, &checks);
    Ok(out)
}

/// Spectrum used at dimension `p` by the kernel check: kinds sized by `n`
/// are replaced by their dimension-sized counterparts.
pub fn kernel_spectrum(kind: SpectrumKind, p: usize) -> Result<Spectrum> {
    match kind {
        SpectrumKind::Example2 => make_example_spectrum(SpectrumKind::PowerLaw { exponent: 5.0 / 6.0 }, p),
        SpectrumKind::Example1 { .. } => Err(domain("example1 has no dimension-sized form; pick another kind")),
        other => make_example_spectrum(other, p),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelVerifyOptions {
    pub n: usize,
    pub kind: SpectrumKind,
    pub seed: u64,
    /// Independent input sets averaged per `p`.
    pub x_draws: usize,
    pub reading: OnesCoefficient,
}

/// One closed-form row per `p`, averaging the errors over `x_draws` input sets.
pub fn kernel_verify(p_values: &[usize], opts: KernelVerifyOptions) -> Result<Vec<KernelReport>> {
    if p_values.is_empty() || opts.x_draws == 0 || opts.n == 0 {
        return Err(domain("need at least one p, one input draw and n ≥ 1"));
    }
    p_values
        .iter()
        .map(|&p| {
            let spec = kernel_spectrum(opts.kind, p)?;
            let mut op = 0.0;
            let mut rel = 0.0;
            let mut last = None;
            for d in 0..opts.x_draws {
                let mut rng = stream_rng(opts.seed, Stream::Inputs, p as u64, d as u64);
                let x = sample_inputs(&spec, opts.n, EtaDist::Gaussian, &mut rng)?;
                let r = kernel_linearization_report(KernelSource::ClosedForm, &x, &spec, opts.reading)?;
                op += r.op_norm_error;
                rel += r.relative_error;
                last = Some(r);
            }
            let mut report = last.expect("x_draws ≥ 1");
            report.op_norm_error = op / opts.x_draws as f64;
            report.relative_error = rel / opts.x_draws as f64;
            Ok(report)
        })
        .collect()
}

pub fn kernel_reports_csv(reports: &[KernelReport]) -> String {
    let mut out = format!("{}\n", KernelReport::CSV_HEADER);
    for r in reports {
        let _ = writeln!(out, "{}", r.csv_row());
    }
    out
}

/// Benign-overfitting and high-dimension diagnostics as `key,value` lines.
pub fn diagnose_report(spec: &Spectrum, n: usize, m: usize, b: f64, xi: f64, threshold: f64) -> Result<String> {
    let d = spec.benign_diagnostics(n, b, xi)?;
    let h = spec.highdim_diagnostics(n, m, threshold)?;
    let mut out = String::from("quantity,value\n");
    let mut kv = |k: &str, v: String| {
        let _ = writeln!(out, "{k},{v}");
    };
    kv("spectrum", spec.label().to_string());
    kv("p", spec.len().to_string());
    kv("n", n.to_string());
    kv("m", m.to_string());
    kv("b", b.to_string());
    kv("xi", xi.to_string());
    kv("trace", format!("{:.16e}", spec.trace()));
    kv("r0_over_n", format!("{:.16e}", d.r0_over_n));
    kv("kstar", kstar_text(d.kstar));
    kv("kstar_over_n", d.kstar_over_n.map_or_else(|| "undefined".into(), |v| format!("{v:.16e}")));
    kv("tail_ratio", format!("{:.16e}", d.tail_ratio));
    kv("n_le_p_quartic_root", h.samples_below_quartic_root.to_string());
    kv("dimension_margin", format!("{:.16e}", h.dimension_margin));
    kv("trace_margin", format!("{:.16e}", h.trace_margin));
    kv("trace_dominates", h.trace_dominates.to_string());
    kv("log_margin", format!("{:.16e}", h.log_margin));
    kv("n_dominates_log_m", h.samples_dominate_log_width.to_string());
    kv("m_ge_p", h.width_at_least_dimension.to_string());
    Ok(out)
}
