//! `key = value` experiment configuration files.
//!
//! `#` starts a comment, lists are comma separated, and a repeated key keeps
//! its last value with a warning.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::datagen::{build_shift_model, GroundTruth, ShiftConstruction, ShiftModel};
use crate::error::{Error, Result};
use crate::features::Activation;
use crate::risk::Metric;
use crate::spectra::{make_example_spectrum, Spectrum, SpectrumKind};

#[derive(Debug, Clone, PartialEq)]
pub enum SpectrumSource {
    Kind(SpectrumKind),
    File(PathBuf),
}

impl SpectrumSource {
    /// A kind name when it parses as one, a file path otherwise.
    pub fn parse(value: &str, base_dir: &Path) -> Self {
        match SpectrumKind::parse(value) {
            Some(kind) => SpectrumSource::Kind(kind),
            None => SpectrumSource::File(base_dir.join(value)),
        }
    }

    pub fn render(&self) -> String {
        match self {
            SpectrumSource::Kind(k) => k.name(),
            SpectrumSource::File(p) => p.display().to_string(),
        }
    }

    /// Materialises the spectrum. Kinds sized by `n` use `n`, the others use `p`.
    pub fn resolve(&self, n: usize, p: usize) -> Result<Spectrum> {
        let spec = match self {
            SpectrumSource::Kind(kind) => {
                let size = if kind.size_is_sample_count() { n } else { p };
                make_example_spectrum(*kind, size)?
            }
            SpectrumSource::File(path) => Spectrum::read(path)?,
        };
        if spec.len() != p {
            return Err(Error::Domain(format!(
                "spectrum `{}` has {} eigenvalues but p = {p}",
                self.render(),
                spec.len()
            )));
        }
        Ok(spec)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TruthChoice {
    Linear,
    Softplus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BetaChoice {
    /// `e₁`.
    FirstAxis,
    /// `1/√p` in every coordinate.
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ShiftChoice {
    Assumption2Default { tau: f64 },
    Isotropic { c: f64 },
}

impl ShiftChoice {
    fn render(&self) -> String {
        match self {
            ShiftChoice::Assumption2Default { tau } => format!("assumption2_default({tau})"),
            ShiftChoice::Isotropic { c } => format!("isotropic({c})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub setting_name: String,
    pub spectrum: SpectrumSource,
    pub ground_truth: TruthChoice,
    pub beta: BetaChoice,
    pub n: usize,
    pub p: usize,
    pub m_values: Vec<usize>,
    pub k: usize,
    pub sigma: f64,
    pub shift: ShiftChoice,
    pub n_test: usize,
    pub trials: usize,
    pub b: f64,
    pub xi: f64,
    pub master_seed: u64,
    pub activation: Activation,
    pub metrics: Vec<Metric>,
}

const REQUIRED: [&str; 7] = ["n", "p", "m_values", "sigma", "spectrum", "ground_truth", "master_seed"];
const OPTIONAL: [&str; 10] = [
    "setting_name",
    "beta",
    "K",
    "shift",
    "n_test",
    "trials",
    "b",
    "xi",
    "activation",
    "metrics",
];

/// A parsed configuration and the warnings raised while reading it.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedConfig {
    pub config: ExperimentConfig,
    pub warnings: Vec<String>,
}

struct Entry {
    line: usize,
    value: String,
}

fn err(line: usize, key: &str, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        key: Some(key.to_string()),
        message: message.into(),
    }
}

fn call_arg<'a>(value: &'a str, name: &str) -> Option<&'a str> {
    value
        .strip_prefix(name)?
        .trim_start()
        .strip_prefix('(')?
        .strip_suffix(')')
        .map(str::trim)
}

impl ExperimentConfig {
    pub fn parse_file(path: impl AsRef<Path>) -> Result<ParsedConfig> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "experiment".into());
        let base = path.parent().unwrap_or_else(|| Path::new(""));
        Self::parse_str(&text, &name, base)
    }

    /// Parses configuration text. `default_name` fills `setting_name` and
    /// relative spectrum paths resolve against `base_dir`.
    pub fn parse_str(text: &str, default_name: &str, base_dir: &Path) -> Result<ParsedConfig> {
        let mut entries: BTreeMap<String, Entry> = BTreeMap::new();
        let mut warnings = Vec::new();
        let mut last_line = 0;
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            last_line = line;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| Error::Parse {
                line,
                key: None,
                message: format!("expected `key = value`, got `{content}`"),
            })?;
            let key = key.trim();
            if !REQUIRED.contains(&key) && !OPTIONAL.contains(&key) {
                return Err(err(line, key, "unknown key"));
            }
            let value = value.trim().to_string();
            if let Some(prev) = entries.insert(key.to_string(), Entry { line, value }) {
                let msg = format!("key `{key}` on line {line} overrides line {}", prev.line);
                log::warn!("{msg}");
                warnings.push(msg);
            }
        }
        for key in REQUIRED {
            if !entries.contains_key(key) {
                return Err(err(last_line, key, "missing required key"));
            }
        }

        let get = |key: &str| entries.get(key);
        fn num<T: std::str::FromStr>(key: &str, e: &Entry) -> Result<T> {
            e.value
                .parse()
                .map_err(|_| err(e.line, key, format!("`{}` is not a valid number", e.value)))
        }
        let req_num = |key: &str| -> Result<usize> { num(key, get(key).expect("checked above")) };
        let opt_num = |key: &str, default: usize| -> Result<usize> { get(key).map_or(Ok(default), |e| num(key, e)) };
        let opt_real = |key: &str, default: f64| -> Result<f64> { get(key).map_or(Ok(default), |e| num(key, e)) };

        let n = req_num("n")?;
        let p = req_num("p")?;
        let sigma_e = get("sigma").expect("checked above");
        let sigma: f64 = num("sigma", sigma_e)?;
        let seed_e = get("master_seed").expect("checked above");
        let master_seed: u64 = num("master_seed", seed_e)?;

        let m_e = get("m_values").expect("checked above");
        let m_values = m_e
            .value
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<usize>().map_err(|_| err(m_e.line, "m_values", format!("`{s}` is not an integer"))))
            .collect::<Result<Vec<_>>>()?;
        if m_values.is_empty() {
            return Err(err(m_e.line, "m_values", "list is empty"));
        }

        let spec_e = get("spectrum").expect("checked above");
        if spec_e.value.is_empty() {
            return Err(err(spec_e.line, "spectrum", "empty value"));
        }
        let spectrum = SpectrumSource::parse(&spec_e.value, base_dir);

        let truth_e = get("ground_truth").expect("checked above");
        let ground_truth = match truth_e.value.as_str() {
            "linear" => TruthChoice::Linear,
            "softplus" => TruthChoice::Softplus,
            other => return Err(err(truth_e.line, "ground_truth", format!("expected linear or softplus, got `{other}`"))),
        };

        let beta = match get("beta") {
            None => BetaChoice::FirstAxis,
            Some(e) => match e.value.as_str() {
                "e1" => BetaChoice::FirstAxis,
                "uniform" => BetaChoice::Uniform,
                other => return Err(err(e.line, "beta", format!("expected e1 or uniform, got `{other}`"))),
            },
        };

        let shift = match get("shift") {
            None => ShiftChoice::Isotropic { c: 4.0 },
            Some(e) => {
                let bad = || err(e.line, "shift", format!("expected isotropic(c) or assumption2_default(tau), got `{}`", e.value));
                if let Some(arg) = call_arg(&e.value, "isotropic") {
                    ShiftChoice::Isotropic { c: arg.parse().map_err(|_| bad())? }
                } else if let Some(arg) = call_arg(&e.value, "assumption2_default") {
                    ShiftChoice::Assumption2Default { tau: arg.parse().map_err(|_| bad())? }
                } else {
                    return Err(bad());
                }
            }
        };

        let activation = match get("activation") {
            None => Activation::Relu,
            Some(e) => Activation::parse(&e.value)
                .ok_or_else(|| err(e.line, "activation", format!("expected relu or identity, got `{}`", e.value)))?,
        };

        let metrics = match get("metrics") {
            None => vec![Metric::IdMse, Metric::OodMse],
            Some(e) => {
                let list = e
                    .value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| Metric::parse(s).ok_or_else(|| err(e.line, "metrics", format!("unknown metric `{s}`"))))
                    .collect::<Result<Vec<_>>>()?;
                if list.is_empty() {
                    return Err(err(e.line, "metrics", "list is empty"));
                }
                list
            }
        };

        let config = ExperimentConfig {
            setting_name: get("setting_name").map_or_else(|| default_name.to_string(), |e| e.value.clone()),
            spectrum,
            ground_truth,
            beta,
            n,
            p,
            m_values,
            k: opt_num("K", 2)?,
            sigma,
            shift,
            n_test: opt_num("n_test", 1000)?,
            trials: opt_num("trials", 500)?,
            b: opt_real("b", 1.0)?,
            xi: opt_real("xi", 0.5)?,
            master_seed,
            activation,
            metrics,
        };
        config.validate().map_err(|e| match e {
            Error::Domain(msg) => Error::Parse {
                line: 0,
                key: None,
                message: msg,
            },
            other => other,
        })?;
        Ok(ParsedConfig { config, warnings })
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Domain(msg));
        if self.n == 0 || self.p == 0 {
            return fail("n and p must be at least 1".into());
        }
        if self.m_values.is_empty() || self.m_values.contains(&0) {
            return fail("m_values must be non-empty and positive".into());
        }
        if self.k == 0 || self.k > 1 << 16 {
            return fail(format!("K must be in 1..=65536, got {}", self.k));
        }
        if self.trials == 0 || self.n_test == 0 {
            return fail("trials and n_test must be at least 1".into());
        }
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return fail(format!("sigma must be non-negative, got {}", self.sigma));
        }
        if !(self.b > 0.0 && self.b.is_finite() && self.xi > 0.0 && self.xi.is_finite()) {
            return fail("b and xi must be positive".into());
        }
        let strength = match self.shift {
            ShiftChoice::Assumption2Default { tau } => tau,
            ShiftChoice::Isotropic { c } => c,
        };
        if !(strength.is_finite() && strength >= 0.0) {
            return fail(format!("shift parameter must be non-negative, got {strength}"));
        }
        Ok(())
    }

    pub fn ground_truth(&self) -> GroundTruth {
        let beta = match self.beta {
            BetaChoice::FirstAxis => GroundTruth::first_axis(self.p),
            BetaChoice::Uniform => GroundTruth::uniform_direction(self.p),
        };
        match self.ground_truth {
            TruthChoice::Linear => GroundTruth::linear(beta),
            TruthChoice::Softplus => GroundTruth::softplus(beta),
        }
    }

    pub fn shift_model(&self, spec: &Spectrum) -> Result<ShiftModel> {
        match self.shift {
            ShiftChoice::Assumption2Default { tau } => {
                build_shift_model(spec, self.b, self.n, tau, ShiftConstruction::Assumption2Default)
            }
            ShiftChoice::Isotropic { c } => build_shift_model(spec, self.b, self.n, c, ShiftConstruction::Isotropic(c)),
        }
    }

    /// Renders every key; parsing the output yields an equal config.
    pub fn to_config_string(&self) -> String {
        let join = |v: Vec<String>| v.join(", ");
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("setting_name", self.setting_name.clone());
        kv("spectrum", self.spectrum.render());
        kv(
            "ground_truth",
            match self.ground_truth {
                TruthChoice::Linear => "linear",
                TruthChoice::Softplus => "softplus",
            }
            .into(),
        );
        kv(
            "beta",
            match self.beta {
                BetaChoice::FirstAxis => "e1",
                BetaChoice::Uniform => "uniform",
            }
            .into(),
        );
        kv("n", self.n.to_string());
        kv("p", self.p.to_string());
        kv("m_values", join(self.m_values.iter().map(|m| m.to_string()).collect()));
        kv("K", self.k.to_string());
        kv("sigma", self.sigma.to_string());
        kv("shift", self.shift.render());
        kv("n_test", self.n_test.to_string());
        kv("trials", self.trials.to_string());
        kv("b", self.b.to_string());
        kv("xi", self.xi.to_string());
        kv("master_seed", self.master_seed.to_string());
        kv("activation", self.activation.name().into());
        kv("metrics", join(self.metrics.iter().map(|m| m.name().to_string()).collect()));
        out
    }
}
