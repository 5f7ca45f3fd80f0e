use std::fmt;
use std::str::FromStr;

use serde::Serialize;
use sha2::{Digest, Sha256};
use toml::{Table, Value};

use crate::error::{Error, Result};
use crate::kernel::ScalingExponent;
use crate::spectral::{CovarianceSpectrum, SobolevIndex};
use crate::target::{PsiKind, TargetModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    AcceptanceSweep,
    EllCurve,
    GammaScaling,
    QDecomposition,
    DiffusionLimit,
    EsjdSweep,
    RwmBaseline,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 7] = [
        ExperimentKind::AcceptanceSweep,
        ExperimentKind::EllCurve,
        ExperimentKind::GammaScaling,
        ExperimentKind::QDecomposition,
        ExperimentKind::DiffusionLimit,
        ExperimentKind::EsjdSweep,
        ExperimentKind::RwmBaseline,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::AcceptanceSweep => "acceptance-sweep",
            ExperimentKind::EllCurve => "ell-curve",
            ExperimentKind::GammaScaling => "gamma-scaling",
            ExperimentKind::QDecomposition => "q-decomposition",
            ExperimentKind::DiffusionLimit => "diffusion-limit",
            ExperimentKind::EsjdSweep => "esjd-sweep",
            ExperimentKind::RwmBaseline => "rwm-baseline",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown experiment `{s}`")))
    }
}

/// How much of each chain to keep. `Auto` keeps only what the experiment's
/// metrics need.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordingMode {
    Auto,
    Full,
    Thinned,
    Summary,
}

impl RecordingMode {
    pub fn name(self) -> &'static str {
        match self {
            RecordingMode::Auto => "auto",
            RecordingMode::Full => "full",
            RecordingMode::Thinned => "thinned",
            RecordingMode::Summary => "summary",
        }
    }
}

impl FromStr for RecordingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(RecordingMode::Auto),
            "full" => Ok(RecordingMode::Full),
            "thinned" => Ok(RecordingMode::Thinned),
            "summary" => Ok(RecordingMode::Summary),
            _ => Err(Error::InvalidParameter(format!("unknown recording mode `{s}`"))),
        }
    }
}

/// A validated experiment description.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub kappa: f64,
    pub s: f64,
    pub psi: PsiKind,
    pub n_grid: Vec<usize>,
    pub gamma_grid: Vec<ScalingExponent>,
    pub ell_grid: Vec<f64>,
    pub n_steps: usize,
    /// `None`: the default `50 N^{1/3}` for non-Gaussian targets.
    pub burn_in: Option<usize>,
    pub thinning: usize,
    pub recording: RecordingMode,
    pub replicas: usize,
    pub master_seed: u64,
    pub output_dir: String,
}

const KEYS: [&str; 15] = [
    "experiment",
    "kappa",
    "s",
    "psi_kind",
    "a",
    "n_grid",
    "gamma_grid",
    "ell_grid",
    "n_steps",
    "burn_in",
    "thinning",
    "recording",
    "replicas",
    "master_seed",
    "output_dir",
];

/// Parses and validates a TOML experiment description, reporting every
/// problem at once.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let table: Table = text
        .parse()
        .map_err(|e: toml::de::Error| Error::Config(vec![format!("not valid TOML: {}", e.message())]))?;
    let mut p = Parser { table: &table, errors: Vec::new() };

    for key in table.keys() {
        if !KEYS.contains(&key.as_str()) {
            p.errors.push(format!("unknown key `{key}`"));
        }
    }

    let experiment = p.parsed::<ExperimentKind>("experiment");
    let kappa = p.float("kappa");
    let s = p.float("s");
    let psi_name = p.string("psi_kind");
    let a = p.optional_float("a").unwrap_or(0.0);
    let n_grid = p.int_list("n_grid");
    let gamma_grid = p.gamma_list("gamma_grid");
    let ell_grid = p.float_list("ell_grid");
    let n_steps = p.int("n_steps");
    let burn_in = p.optional_int("burn_in");
    let thinning = p.optional_int("thinning").unwrap_or(1);
    let recording = match table.get("recording") {
        Some(_) => p.parsed::<RecordingMode>("recording"),
        None => Some(RecordingMode::Auto),
    };
    let replicas = p.optional_int("replicas").unwrap_or(1);
    let master_seed = p.optional_int("master_seed").unwrap_or(0);
    let output_dir = p.optional_string("output_dir").unwrap_or_else(|| "results".to_string());
    let mut errors = p.errors;

    if let Some(k) = kappa {
        if !(k > 0.5) || !k.is_finite() {
            errors.push(format!("kappa = {k}: the spectrum needs κ > 1/2"));
        }
    }
    if let Some(s) = s {
        if !(s >= 0.0) {
            errors.push(format!("s = {s}: must be >= 0"));
        }
        if let Some(k) = kappa {
            if k > 0.5 && !(s < k - 0.5) {
                errors.push(format!("s = {s}: must satisfy s < κ - 1/2 = {}", k - 0.5));
            }
        }
    }
    if !(a >= 0.0) || !a.is_finite() {
        errors.push(format!("a = {a}: must be a finite value >= 0"));
    }
    let psi = psi_name.and_then(|name| match name.as_str() {
        "zero" => Some(PsiKind::Zero),
        "quadratic-sobolev" => Some(PsiKind::QuadraticSobolev { a }),
        "smooth-nonlinear" => Some(PsiKind::SmoothNonlinear { a }),
        other => {
            errors.push(format!(
                "psi_kind = `{other}`: expected zero, quadratic-sobolev or smooth-nonlinear"
            ));
            None
        }
    });
    if let Some(grid) = &n_grid {
        if grid.is_empty() {
            errors.push("n_grid: must not be empty".into());
        }
        if grid.contains(&0) {
            errors.push("n_grid: every N must be >= 1".into());
        }
    }
    if let Some(grid) = &gamma_grid {
        if grid.is_empty() {
            errors.push("gamma_grid: must not be empty".into());
        }
        if experiment == Some(ExperimentKind::QDecomposition) && grid.iter().any(|g| !g.is_critical()) {
            errors.push("gamma_grid: q-decomposition is only defined at gamma = 1/3".into());
        }
    }
    if let Some(grid) = &ell_grid {
        if grid.is_empty() {
            errors.push("ell_grid: must not be empty".into());
        }
        if grid.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
            errors.push("ell_grid: every ell must be finite and > 0".into());
        }
    }
    if n_steps == Some(0) {
        errors.push("n_steps: must be >= 1".into());
    }
    if thinning == 0 {
        errors.push("thinning: must be >= 1".into());
    }
    if replicas == 0 {
        errors.push("replicas: must be >= 1".into());
    }
    if output_dir.is_empty() {
        errors.push("output_dir: must not be empty".into());
    }
    if experiment == Some(ExperimentKind::DiffusionLimit) && recording == Some(RecordingMode::Summary) {
        errors.push("recording: diffusion-limit needs recorded states, not summary".into());
    }

    if !errors.is_empty() {
        return Err(Error::Config(errors));
    }
    let cfg = ExperimentConfig {
        experiment: experiment.unwrap(),
        kappa: kappa.unwrap(),
        s: s.unwrap(),
        psi: psi.unwrap(),
        n_grid: n_grid.unwrap(),
        gamma_grid: gamma_grid.unwrap(),
        ell_grid: ell_grid.unwrap(),
        n_steps: n_steps.unwrap() as usize,
        burn_in: burn_in.map(|b| b as usize),
        thinning: thinning as usize,
        recording: recording.unwrap(),
        replicas: replicas as usize,
        master_seed,
        output_dir,
    };
    // Builds the largest model once so anything the constructors reject
    // surfaces here rather than mid-run.
    cfg.model(cfg.n_max())?;
    Ok(cfg)
}

impl ExperimentConfig {
    pub fn n_max(&self) -> usize {
        self.n_grid.iter().copied().max().unwrap_or(1)
    }

    pub fn target(&self) -> TargetModel {
        self.model(self.n_max()).expect("validated at parse time")
    }

    fn model(&self, n: usize) -> Result<TargetModel> {
        let spec = CovarianceSpectrum::new(self.kappa, n)?;
        TargetModel::new(spec, SobolevIndex(self.s), self.psi)
    }

    /// Strength `a` of `Ψ` (0 for the zero potential).
    pub fn a(&self) -> f64 {
        self.psi.weight()
    }

    /// Fixed-order TOML rendering; parses back to an equal config.
    pub fn canonical_toml(&self) -> String {
        let floats = |xs: &[f64]| xs.iter().map(|x| fmt_float(*x)).collect::<Vec<_>>().join(", ");
        let ints = |xs: &[usize]| xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ");
        let gammas = self
            .gamma_grid
            .iter()
            .map(|g| format!("\"{g}\""))
            .collect::<Vec<_>>()
            .join(", ");
        let mut out = String::new();
        out.push_str(&format!("experiment = \"{}\"\n", self.experiment));
        out.push_str(&format!("kappa = {}\n", fmt_float(self.kappa)));
        out.push_str(&format!("s = {}\n", fmt_float(self.s)));
        out.push_str(&format!("psi_kind = \"{}\"\n", self.psi.name()));
        out.push_str(&format!("a = {}\n", fmt_float(self.a())));
        out.push_str(&format!("n_grid = [{}]\n", ints(&self.n_grid)));
        out.push_str(&format!("gamma_grid = [{gammas}]\n"));
        out.push_str(&format!("ell_grid = [{}]\n", floats(&self.ell_grid)));
        out.push_str(&format!("n_steps = {}\n", self.n_steps));
        if let Some(b) = self.burn_in {
            out.push_str(&format!("burn_in = {b}\n"));
        }
        out.push_str(&format!("thinning = {}\n", self.thinning));
        out.push_str(&format!("recording = \"{}\"\n", self.recording.name()));
        out.push_str(&format!("replicas = {}\n", self.replicas));
        out.push_str(&format!("master_seed = {}\n", self.master_seed));
        out.push_str(&format!("output_dir = {}\n", Value::String(self.output_dir.clone())));
        out
    }

    /// Hex SHA-256 of [`canonical_toml`](Self::canonical_toml).
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_toml().as_bytes()))
    }
}

// Shortest round-tripping decimal, always with a fractional part so TOML
// reads it back as a float.
fn fmt_float(x: f64) -> String {
    let s = format!("{x:?}");
    if s.contains(['.', 'e', 'E']) || !x.is_finite() {
        s
    } else {
        format!("{s}.0")
    }
}

struct Parser<'t> {
    table: &'t Table,
    errors: Vec<String>,
}

impl Parser<'_> {
    fn get(&mut self, key: &str) -> Option<&Value> {
        let v = self.table.get(key);
        if v.is_none() {
            self.errors.push(format!("missing key `{key}`"));
        }
        v
    }

    fn type_error<T>(&mut self, key: &str, expected: &str) -> Option<T> {
        self.errors.push(format!("`{key}`: expected {expected}"));
        None
    }

    fn float_of(v: &Value) -> Option<f64> {
        match v {
            Value::Float(x) => Some(*x),
            Value::Integer(i) => Some(*i as f64),
            _ => None,
        }
    }

    fn float(&mut self, key: &str) -> Option<f64> {
        let v = self.get(key)?.clone();
        Self::float_of(&v).or_else(|| self.type_error(key, "a number"))
    }

    fn optional_float(&mut self, key: &str) -> Option<f64> {
        if self.table.contains_key(key) {
            self.float(key)
        } else {
            None
        }
    }

    fn int(&mut self, key: &str) -> Option<u64> {
        match self.get(key)? {
            Value::Integer(i) if *i >= 0 => Some(*i as u64),
            _ => self.type_error(key, "a non-negative integer"),
        }
    }

    fn optional_int(&mut self, key: &str) -> Option<u64> {
        if self.table.contains_key(key) {
            self.int(key)
        } else {
            None
        }
    }

    fn string(&mut self, key: &str) -> Option<String> {
        match self.get(key)? {
            Value::String(s) => Some(s.clone()),
            _ => self.type_error(key, "a string"),
        }
    }

    fn optional_string(&mut self, key: &str) -> Option<String> {
        if self.table.contains_key(key) {
            self.string(key)
        } else {
            None
        }
    }

    fn parsed<T: FromStr<Err = Error>>(&mut self, key: &str) -> Option<T> {
        let s = self.string(key)?;
        match s.parse() {
            Ok(v) => Some(v),
            Err(e) => {
                self.errors.push(format!("`{key}`: {e}"));
                None
            }
        }
    }

    fn array(&mut self, key: &str) -> Option<Vec<Value>> {
        match self.get(key)? {
            Value::Array(a) => Some(a.clone()),
            _ => self.type_error(key, "an array"),
        }
    }

    fn int_list(&mut self, key: &str) -> Option<Vec<usize>> {
        let items = self.array(key)?;
        let out: Option<Vec<usize>> = items
            .iter()
            .map(|v| match v {
                Value::Integer(i) if *i >= 0 => Some(*i as usize),
                _ => None,
            })
            .collect();
        out.or_else(|| self.type_error(key, "an array of non-negative integers"))
    }

    fn float_list(&mut self, key: &str) -> Option<Vec<f64>> {
        let items = self.array(key)?;
        let out: Option<Vec<f64>> = items.iter().map(Self::float_of).collect();
        out.or_else(|| self.type_error(key, "an array of numbers"))
    }

    fn gamma_list(&mut self, key: &str) -> Option<Vec<ScalingExponent>> {
        let items = self.array(key)?;
        let mut out = Vec::with_capacity(items.len());
        let mut ok = true;
        for v in &items {
            let parsed = match v {
                Value::String(s) => s.parse::<ScalingExponent>().map_err(|e| e.to_string()),
                Value::Integer(i) => i.to_string().parse::<ScalingExponent>().map_err(|e| e.to_string()),
                Value::Float(x) => format!("{x}").parse::<ScalingExponent>().map_err(|e| e.to_string()),
                _ => Err("expected a fraction such as \"1/3\"".to_string()),
            };
            match parsed {
                Ok(g) => out.push(g),
                Err(e) => {
                    self.errors.push(format!("`{key}`: {e}"));
                    ok = false;
                }
            }
        }
        ok.then_some(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASIC: &str = r#"
experiment = "ell-curve"
kappa = 1.0
s = 0.0
psi_kind = "zero"
n_grid = [64, 256]
gamma_grid = ["1/3"]
ell_grid = [0.5, 1.0, 1.5]
n_steps = 1000
replicas = 2
master_seed = 11
output_dir = "out"
"#;

    fn errors_of(text: &str) -> Vec<String> {
        match parse_config(text) {
            Err(Error::Config(e)) => e,
            other => panic!("expected config errors, got {other:?}"),
        }
    }

    #[test]
    fn parses_basic() {
        let cfg = parse_config(BASIC).unwrap();
        assert_eq!(cfg.experiment, ExperimentKind::EllCurve);
        assert_eq!(cfg.n_grid, vec![64, 256]);
        assert!(cfg.gamma_grid[0].is_critical());
        assert_eq!(cfg.recording, RecordingMode::Auto);
        assert_eq!(cfg.thinning, 1);
        assert_eq!(cfg.burn_in, None);
    }

    #[test]
    fn canonical_round_trip_and_hash() {
        let cfg = parse_config(BASIC).unwrap();
        let again = parse_config(&cfg.canonical_toml()).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(cfg.hash(), again.hash());
        assert_eq!(cfg.hash().len(), 64);

        let mut other = cfg.clone();
        other.master_seed += 1;
        assert_ne!(cfg.hash(), other.hash());
    }

    #[test]
    fn round_trip_with_awkward_values() {
        let text = BASIC
            .replace("ell_grid = [0.5, 1.0, 1.5]", "ell_grid = [0.1, 1e-3, 2]")
            .replace("psi_kind = \"zero\"", "psi_kind = \"smooth-nonlinear\"\na = 0.3\nburn_in = 17")
            .replace("kappa = 1.0", "kappa = 1.1000000000000001")
            .replace("\"1/3\"", "\"1/3\", \"0.45\", 1");
        let cfg = parse_config(&text).unwrap();
        assert_eq!(parse_config(&cfg.canonical_toml()).unwrap(), cfg);
    }

    #[test]
    fn rejects_small_kappa_citing_bound() {
        let errs = errors_of(&BASIC.replace("kappa = 1.0", "kappa = 0.5"));
        assert!(errs.iter().any(|e| e.contains("κ > 1/2")), "{errs:?}");
    }

    #[test]
    fn rejects_s_at_trace_threshold() {
        let errs = errors_of(&BASIC.replace("s = 0.0", "s = 0.5"));
        assert!(errs.iter().any(|e| e.contains("s < κ - 1/2")), "{errs:?}");
    }

    #[test]
    fn reports_all_problems_together() {
        let text = BASIC
            .replace("kappa = 1.0", "kappa = 0.3")
            .replace("n_steps = 1000", "n_steps = 0\nbogus = 1")
            .replace("psi_kind = \"zero\"", "psi_kind = \"cubic\"");
        let errs = errors_of(&text);
        assert!(errs.iter().any(|e| e.contains("bogus")));
        assert!(errs.iter().any(|e| e.contains("κ > 1/2")));
        assert!(errs.iter().any(|e| e.contains("n_steps")));
        assert!(errs.iter().any(|e| e.contains("cubic")));
    }

    #[test]
    fn q_decomposition_requires_critical_gamma() {
        let text = BASIC
            .replace("ell-curve", "q-decomposition")
            .replace("\"1/3\"", "\"1/2\"");
        let errs = errors_of(&text);
        assert!(errs.iter().any(|e| e.contains("1/3")), "{errs:?}");
    }

    #[test]
    fn missing_keys_are_named() {
        let errs = errors_of("experiment = \"ell-curve\"\n");
        for key in ["kappa", "s", "psi_kind", "n_grid", "gamma_grid", "ell_grid", "n_steps"] {
            assert!(errs.iter().any(|e| e.contains(key)), "{key}: {errs:?}");
        }
    }

    #[test]
    fn invalid_toml_is_a_config_error() {
        assert!(matches!(parse_config("kappa = ="), Err(Error::Config(_))));
    }
}
