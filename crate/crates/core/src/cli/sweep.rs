//! Seeded Monte Carlo sweeps over the feature count `m`.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::cli::config::ExperimentConfig;
use crate::datagen::{sample_inputs, sample_labels, GroundTruth, NoiseModel, ShiftModel, TruthKind};
use crate::error::{Error, Result};
use crate::features::{
    default_population_size, estimate_theta_star, sample_feature_model, theta_star_identity_linear, Activation,
    FittedModel,
};
use crate::risk::{mean_stderr, Metric, ModelKind, TestOutputs, TestSet};
use crate::rng::{stream_rng, Stream};
use crate::spectra::Spectrum;

pub const CSV_HEADER: &str = "setting,activation,n,p,m,K,trials,metric,model_kind,mean,stderr,failures";

/// Largest tolerated fraction of failed trials per `m`.
pub const MAX_FAILURE_FRACTION: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub setting: String,
    pub activation: Activation,
    pub n: usize,
    pub p: usize,
    pub m: usize,
    pub k: usize,
    /// Successful trials entering the mean.
    pub trials: usize,
    pub metric: Metric,
    pub model_kind: ModelKind,
    pub mean: f64,
    pub stderr: f64,
    pub failures: usize,
}

impl SweepRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{:.16e},{:.16e},{}",
            self.setting,
            self.activation.name(),
            self.n,
            self.p,
            self.m,
            self.k,
            self.trials,
            self.metric.name(),
            self.model_kind.name(),
            self.mean,
            self.stderr,
            self.failures
        )
    }
}

/// Rows plus the per-trial values behind each of them, in the same order.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub values: Vec<Vec<f64>>,
}

impl SweepResult {
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(128 * (self.rows.len() + 1));
        out.push_str(CSV_HEADER);
        out.push('\n');
        for row in &self.rows {
            let _ = writeln!(out, "{}", row.csv_line());
        }
        out
    }

    fn index(&self, m: usize, metric: Metric, kind: ModelKind) -> Option<usize> {
        self.rows
            .iter()
            .position(|r| r.m == m && r.metric == metric && r.model_kind == kind)
    }

    pub fn row(&self, m: usize, metric: Metric, kind: ModelKind) -> Option<&SweepRow> {
        self.index(m, metric, kind).map(|i| &self.rows[i])
    }

    /// Per-trial values of a cell, ordered by trial index.
    pub fn trial_values(&self, m: usize, metric: Metric, kind: ModelKind) -> Option<&[f64]> {
        self.index(m, metric, kind).map(|i| self.values[i].as_slice())
    }
}

struct Context<'a> {
    cfg: &'a ExperimentConfig,
    spec: Spectrum,
    truth: GroundTruth,
    noise: NoiseModel,
    shift: ShiftModel,
    need_reference: bool,
}

/// Per-metric `(single_avg, ensemble)` values of one trial.
type TrialValues = Vec<(f64, f64)>;

impl Context<'_> {
    fn theta_star(&self, fm: &crate::features::FeatureModel, m: usize, trial: usize, member: usize) -> Result<nalgebra::DVector<f64>> {
        if fm.activation() == Activation::Identity && matches!(self.truth.kind, TruthKind::Linear) {
            return theta_star_identity_linear(fm, &self.truth, &self.spec);
        }
        let mut rng = stream_rng(self.cfg.master_seed, Stream::Population, m as u64, member_key(trial, member));
        let fit = estimate_theta_star(
            fm,
            &self.truth,
            &self.spec,
            self.noise.eta,
            default_population_size(m),
            None,
            &mut rng,
        )?;
        Ok(fit.theta)
    }

    fn run_trial(&self, m: usize, trial: usize) -> Result<TrialValues> {
        let cfg = self.cfg;
        let seed = cfg.master_seed;
        let t = trial as u64;
        let x = sample_inputs(&self.spec, cfg.n, self.noise.eta, &mut stream_rng(seed, Stream::Inputs, t, 0))?;
        let y = sample_labels(&self.truth, &x, &self.noise, &mut stream_rng(seed, Stream::Noise, t, 0))?;
        let test = TestSet::sample(&self.spec, &self.truth, &self.noise, Some(&self.shift), cfg.n_test, seed, t)?;

        let mut outputs = Vec::with_capacity(cfg.k);
        for r in 0..cfg.k {
            let mut rng = stream_rng(seed, Stream::Features, m as u64, member_key(trial, r));
            let fm = sample_feature_model(cfg.p, m, cfg.activation, &mut rng)?;
            let mut model = FittedModel::fit(fm, &x, &y)?;
            if self.need_reference {
                let star = self.theta_star(&model.feature_model, m, trial, r)?;
                model = model.with_theta_star(star)?;
            }
            outputs.push(TestOutputs::of(&model, &test, self.need_reference)?);
        }
        let ensemble = TestOutputs::average(&outputs)?;

        let mut values = Vec::with_capacity(cfg.metrics.len());
        for &metric in &cfg.metrics {
            let mut single = 0.0;
            for o in &outputs {
                single += o.risk(metric, &test)?;
            }
            single /= cfg.k as f64;
            let ens = ensemble.risk(metric, &test)?;
            if !(single.is_finite() && ens.is_finite()) {
                return Err(Error::Numerical(format!("non-finite {} at m = {m}, trial {trial}", metric.name())));
            }
            values.push((single, ens));
        }
        Ok(values)
    }
}

fn member_key(trial: usize, member: usize) -> u64 {
    ((trial as u64) << 16) | member as u64
}

/// Runs every `(m, trial)` task on `workers` threads. Results do not depend on
/// the worker count.
pub fn run_sweep(cfg: &ExperimentConfig, workers: usize) -> Result<SweepResult> {
    cfg.validate()?;
    let spec = cfg.spectrum.resolve(cfg.n, cfg.p)?;
    let shift = cfg.shift_model(&spec)?;
    let ctx = Context {
        cfg,
        truth: cfg.ground_truth(),
        noise: NoiseModel::gaussian(cfg.sigma),
        shift,
        need_reference: cfg.metrics.iter().any(Metric::needs_reference),
        spec,
    };
    if ctx.need_reference && !(cfg.activation == Activation::Identity && cfg.ground_truth == crate::cli::config::TruthChoice::Linear) {
        log::info!("excess metrics requested: fitting θ* by population ridge for every model");
    }

    let tasks: Vec<(usize, usize)> = (0..cfg.m_values.len())
        .flat_map(|mi| (0..cfg.trials).map(move |t| (mi, t)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Numerical(format!("cannot start worker pool: {e}")))?;
    let outcomes: Vec<Result<TrialValues>> = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(mi, t)| ctx.run_trial(cfg.m_values[mi], t))
            .collect()
    });

    let mut rows = Vec::new();
    let mut values = Vec::new();
    for (mi, &m) in cfg.m_values.iter().enumerate() {
        let chunk = &outcomes[mi * cfg.trials..(mi + 1) * cfg.trials];
        let ok: Vec<&TrialValues> = chunk.iter().filter_map(|o| o.as_ref().ok()).collect();
        let failures = chunk.len() - ok.len();
        for (t, o) in chunk.iter().enumerate() {
            if let Err(e) = o {
                log::warn!("m = {m}, trial {t} failed: {e}");
            }
        }
        if failures as f64 > MAX_FAILURE_FRACTION * cfg.trials as f64 || ok.is_empty() {
            return Err(Error::Numerical(format!(
                "{failures} of {} trials failed at m = {m}; aborting",
                cfg.trials
            )));
        }
        for (j, &metric) in cfg.metrics.iter().enumerate() {
            for kind in ModelKind::ALL {
                let cell: Vec<f64> = ok
                    .iter()
                    .map(|v| match kind {
                        ModelKind::SingleAvg => v[j].0,
                        ModelKind::Ensemble => v[j].1,
                    })
                    .collect();
                let (mean, stderr) = mean_stderr(&cell);
                rows.push(SweepRow {
                    setting: cfg.setting_name.clone(),
                    activation: cfg.activation,
                    n: cfg.n,
                    p: cfg.p,
                    m,
                    k: cfg.k,
                    trials: cell.len(),
                    metric,
                    model_kind: kind,
                    mean,
                    stderr,
                    failures,
                });
                values.push(cell);
            }
        }
    }
    Ok(SweepResult { rows, values })
}
