//! Experiment configuration: JSON schema, validation, and typed params.
//!
//! Validation collects the complete list of violations (unknown keys,
//! wrong types, out-of-range values) instead of stopping at the first.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

pub const EXPERIMENTS: &[&str] = &[
    "chsh",
    "bell-feasibility",
    "darwinism-decay",
    "visibility-scan",
    "algebra-verify",
    "record-swap",
    "ensemble-verify",
    "measurement-check",
];

/// One-line description per experiment id, for `list-experiments`.
pub fn describe(id: &str) -> &'static str {
    match id {
        "chsh" => "CHSH value, vertex bound, and fine-graining verdict for a two-qubit state",
        "bell-feasibility" => "local-model feasibility of a correlation table with witness or certificate",
        "darwinism-decay" => "record error decay over environment fragments in the star model",
        "visibility-scan" => "visibility lower bounds over growing fragments with fitted growth rate",
        "algebra-verify" => "measure-algebra axioms, contraction, and probability-space extraction",
        "record-swap" => "record-replacement errors between two record sets of the same statements",
        "ensemble-verify" => "mixing identity, purity bounds, entropy drops, and pure approximations",
        "measurement-check" => "projective measurement model against an environment record algebra",
        _ => "",
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    /// |S| accuracy for expected CHSH values.
    pub chsh: f64,
    /// Per-correlation tolerance of the feasibility search.
    pub feasibility: f64,
    /// Measure-algebra additivity/orthogonality tolerance.
    pub algebra: f64,
    /// Exact-identity tolerance (mixing, entropy drop, purity).
    pub identity: f64,
    /// Branch reconstruction residual.
    pub branch_residual: f64,
    /// Relative error allowed on fitted decay slopes.
    pub slope_rel: f64,
    /// Observer branch-weight and knowledge tolerance.
    pub observer: f64,
    /// Measurement-model delta threshold.
    pub measurement: f64,
    /// Classical-statement level (the spec of "much less than 1" is left
    /// to configuration).
    pub classical_eps: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            chsh: 1e-9,
            feasibility: 1e-6,
            algebra: 1e-12,
            identity: 1e-10,
            branch_residual: 1e-10,
            slope_rel: 0.15,
            observer: 1e-6,
            measurement: 1e-6,
            classical_eps: 0.05,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChshParams {
    /// a0, a1, b0, b1 in radians.
    pub angles: [f64; 4],
    pub state: StateSpec,
    /// Random angle quadruples for the sweep rows.
    pub sweep_samples: usize,
    pub expect_abs_s: Option<f64>,
    pub expect_feasible: Option<bool>,
}

impl Default for ChshParams {
    fn default() -> Self {
        ChshParams {
            angles: [
                std::f64::consts::FRAC_PI_2,
                0.0,
                std::f64::consts::FRAC_PI_4,
                3.0 * std::f64::consts::FRAC_PI_4,
            ],
            state: StateSpec::Singlet,
            sweep_samples: 1000,
            expect_abs_s: None,
            expect_feasible: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateSpec {
    Singlet,
    /// Row-major amplitude pairs `[re, im]` over the four basis states.
    Amps(Vec<[f64; 2]>),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeasibilityParams {
    /// Correlation table `[[E00, E01], [E10, E11]]`; defaults to the
    /// optimal singlet table.
    pub table: Option<[[f64; 2]; 2]>,
    pub expect_feasible: Option<bool>,
}

impl Default for FeasibilityParams {
    fn default() -> Self {
        FeasibilityParams {
            table: None,
            expect_feasible: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DarwinismParams {
    pub n_env: usize,
    /// Per-site record overlap `c = cos(2t)`; sets the evolution time.
    pub overlap: Option<f64>,
    /// Explicit evolution time (used when `overlap` is absent).
    pub t: Option<f64>,
    /// Squared branch weights `|lambda_i|^2` in ascending pointer order
    /// (branch 0 is the -1 eigenvector of Z).
    pub weights: [f64; 2],
    pub fragment_sizes: Option<Vec<usize>>,
    /// Spectral indices of the tracked statement.
    pub indices: Vec<usize>,
}

impl Default for DarwinismParams {
    fn default() -> Self {
        DarwinismParams {
            n_env: 8,
            overlap: Some(0.7),
            t: None,
            weights: [0.5, 0.5],
            fragment_sizes: None,
            indices: vec![0],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FixtureSpec {
    Ghz { n: usize },
    ProductPlus { n: usize },
    Random { dims: Vec<usize> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordSpec {
    /// Chain site (used when `region` is absent; region is then the
    /// single point `[site, 0]`).
    #[serde(default)]
    pub site: Option<usize>,
    /// Explicit region as a list of `[x, t]` pairs.
    #[serde(default)]
    pub region: Option<Vec<[i64; 2]>>,
    /// One of `z0`, `z1`, `plus`, `random`.
    #[serde(default = "default_record_kind")]
    pub kind: String,
}

fn default_record_kind() -> String {
    "z0".to_string()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgebraParams {
    pub state: FixtureSpec,
    pub records: Vec<RecordSpec>,
    #[serde(default = "default_null_tol")]
    pub null_tol: f64,
    #[serde(default = "default_contraction_trials")]
    pub contraction_trials: usize,
}

fn default_null_tol() -> f64 {
    1e-10
}

fn default_contraction_trials() -> usize {
    500
}

impl Default for AlgebraParams {
    fn default() -> Self {
        AlgebraParams {
            state: FixtureSpec::Ghz { n: 4 },
            records: vec![
                RecordSpec {
                    site: Some(1),
                    region: None,
                    kind: "z0".into(),
                },
                RecordSpec {
                    site: Some(2),
                    region: None,
                    kind: "z0".into(),
                },
            ],
            null_tol: default_null_tol(),
            contraction_trials: default_contraction_trials(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SwapParams {
    pub n: usize,
    /// Amplitude perturbation of the GHZ fixture (0 = exact redundancy).
    pub delta: f64,
    pub records_a: Vec<usize>,
    pub records_b: Vec<usize>,
    pub null_tol: f64,
}

impl Default for SwapParams {
    fn default() -> Self {
        SwapParams {
            n: 6,
            delta: 0.0,
            records_a: vec![1, 2],
            records_b: vec![3, 4],
            null_tol: 1e-15,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnsembleParams {
    pub mixing_trials: usize,
    pub purity_trials: usize,
    pub refinement_trials: usize,
    pub min_dim: usize,
    pub max_dim: usize,
    pub max_components: usize,
}

impl Default for EnsembleParams {
    fn default() -> Self {
        EnsembleParams {
            mixing_trials: 200,
            purity_trials: 500,
            refinement_trials: 100,
            min_dim: 2,
            max_dim: 4,
            max_components: 6,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MeasurementParams {
    /// Squared branch weights of the premeasured state.
    pub weights: [f64; 2],
    /// Overlap of the pointer states (0 = ideal premeasurement).
    pub pointer_overlap: f64,
}

impl Default for MeasurementParams {
    fn default() -> Self {
        MeasurementParams {
            weights: [0.3, 0.7],
            pointer_overlap: 0.0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Params {
    Chsh(ChshParams),
    BellFeasibility(FeasibilityParams),
    DarwinismDecay(DarwinismParams),
    VisibilityScan(DarwinismParams),
    AlgebraVerify(AlgebraParams),
    RecordSwap(SwapParams),
    EnsembleVerify(EnsembleParams),
    MeasurementCheck(MeasurementParams),
}

impl Params {
    pub fn experiment_id(&self) -> &'static str {
        match self {
            Params::Chsh(_) => "chsh",
            Params::BellFeasibility(_) => "bell-feasibility",
            Params::DarwinismDecay(_) => "darwinism-decay",
            Params::VisibilityScan(_) => "visibility-scan",
            Params::AlgebraVerify(_) => "algebra-verify",
            Params::RecordSwap(_) => "record-swap",
            Params::EnsembleVerify(_) => "ensemble-verify",
            Params::MeasurementCheck(_) => "measurement-check",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub params: Params,
    pub tolerances: Tolerances,
    /// Raw config echoed into the manifest.
    pub raw: Value,
}

#[derive(Debug)]
pub struct ConfigErrors(pub Vec<String>);

impl fmt::Display for ConfigErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, e) in self.0.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "- {e}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigErrors {}

/// Parse and fully validate a config file.
pub fn validate_file(path: &Path) -> Result<ExperimentConfig, ConfigErrors> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigErrors(vec![format!("cannot read {}: {e}", path.display())]))?;
    let value: Value = serde_json::from_str(&text)
        .map_err(|e| ConfigErrors(vec![format!("invalid JSON: {e}")]))?;
    validate_value(value)
}

/// Validate an in-memory config value.
pub fn validate_value(value: Value) -> Result<ExperimentConfig, ConfigErrors> {
    let mut errors = Vec::new();
    let Some(obj) = value.as_object() else {
        return Err(ConfigErrors(vec!["config must be a JSON object".into()]));
    };

    const TOP_KEYS: &[&str] = &["experiment", "seed", "params", "tolerances"];
    for key in obj.keys() {
        if !TOP_KEYS.contains(&key.as_str()) {
            errors.push(format!("unknown top-level key `{key}`"));
        }
    }

    let experiment = match obj.get("experiment") {
        Some(Value::String(s)) if EXPERIMENTS.contains(&s.as_str()) => Some(s.clone()),
        Some(Value::String(s)) => {
            errors.push(format!(
                "unknown experiment `{s}` (expected one of {})",
                EXPERIMENTS.join(", ")
            ));
            None
        }
        Some(_) => {
            errors.push("`experiment` must be a string".into());
            None
        }
        None => {
            errors.push("missing required key `experiment`".into());
            None
        }
    };

    let seed = match obj.get("seed") {
        Some(v) => match v.as_u64() {
            Some(s) => Some(s),
            None => {
                errors.push("`seed` must be a nonnegative 64-bit integer".into());
                None
            }
        },
        None => {
            errors.push("missing required key `seed`".into());
            None
        }
    };

    let tolerances = match obj.get("tolerances") {
        None => Some(Tolerances::default()),
        Some(v) => match serde_json::from_value::<Tolerances>(v.clone()) {
            Ok(t) => {
                let mut fields: BTreeMap<&str, f64> = BTreeMap::new();
                fields.insert("chsh", t.chsh);
                fields.insert("feasibility", t.feasibility);
                fields.insert("algebra", t.algebra);
                fields.insert("identity", t.identity);
                fields.insert("branch_residual", t.branch_residual);
                fields.insert("slope_rel", t.slope_rel);
                fields.insert("observer", t.observer);
                fields.insert("measurement", t.measurement);
                fields.insert("classical_eps", t.classical_eps);
                for (name, value) in fields {
                    if !(value.is_finite() && value >= 0.0) {
                        errors.push(format!(
                            "tolerances.{name} must be a nonnegative finite number"
                        ));
                    }
                }
                Some(t)
            }
            Err(e) => {
                errors.push(format!("tolerances: {e}"));
                None
            }
        },
    };

    let params_value = obj.get("params").cloned().unwrap_or(Value::Object(Default::default()));
    let params = match (&experiment, params_value.as_object()) {
        (Some(_), None) => {
            errors.push("`params` must be an object".into());
            None
        }
        (Some(exp), Some(map)) => {
            let shape_errors = pre_validate_params(exp, map);
            if !shape_errors.is_empty() {
                errors.extend(shape_errors);
                None
            } else {
                match parse_params(exp, params_value.clone()) {
                    Ok(p) => {
                        validate_ranges(&p, &mut errors);
                        Some(p)
                    }
                    Err(list) => {
                        errors.extend(list);
                        None
                    }
                }
            }
        }
        (None, _) => None,
    };

    if !errors.is_empty() {
        return Err(ConfigErrors(errors));
    }
    Ok(ExperimentConfig {
        seed: seed.unwrap(),
        params: params.unwrap(),
        tolerances: tolerances.unwrap(),
        raw: value,
    })
}

/// Shape of a parameter value for the schema walk.
enum Kind {
    UInt,
    Float,
    Bool,
    /// Array of numbers, optionally with a fixed length.
    NumArray(Option<usize>),
    UIntArray,
    /// Validated downstream (nested objects, enums).
    Any,
}

fn param_schema(experiment: &str) -> &'static [(&'static str, Kind)] {
    match experiment {
        "chsh" => &[
            ("angles", Kind::NumArray(Some(4))),
            ("state", Kind::Any),
            ("sweep_samples", Kind::UInt),
            ("expect_abs_s", Kind::Float),
            ("expect_feasible", Kind::Bool),
        ],
        "bell-feasibility" => &[
            ("table", Kind::Any),
            ("expect_feasible", Kind::Bool),
        ],
        "darwinism-decay" | "visibility-scan" => &[
            ("n_env", Kind::UInt),
            ("overlap", Kind::Float),
            ("t", Kind::Float),
            ("weights", Kind::NumArray(Some(2))),
            ("fragment_sizes", Kind::UIntArray),
            ("indices", Kind::UIntArray),
        ],
        "algebra-verify" => &[
            ("state", Kind::Any),
            ("records", Kind::Any),
            ("null_tol", Kind::Float),
            ("contraction_trials", Kind::UInt),
        ],
        "record-swap" => &[
            ("n", Kind::UInt),
            ("delta", Kind::Float),
            ("records_a", Kind::UIntArray),
            ("records_b", Kind::UIntArray),
            ("null_tol", Kind::Float),
        ],
        "ensemble-verify" => &[
            ("mixing_trials", Kind::UInt),
            ("purity_trials", Kind::UInt),
            ("refinement_trials", Kind::UInt),
            ("min_dim", Kind::UInt),
            ("max_dim", Kind::UInt),
            ("max_components", Kind::UInt),
        ],
        "measurement-check" => &[
            ("weights", Kind::NumArray(Some(2))),
            ("pointer_overlap", Kind::Float),
        ],
        _ => &[],
    }
}

/// Collect every unknown key and shape violation in `params`.
fn pre_validate_params(
    experiment: &str,
    map: &serde_json::Map<String, Value>,
) -> Vec<String> {
    let schema = param_schema(experiment);
    let mut errors = Vec::new();
    for (key, value) in map {
        let Some((_, kind)) = schema.iter().find(|(k, _)| k == key) else {
            errors.push(format!("params: unknown key `{key}` for `{experiment}`"));
            continue;
        };
        match kind {
            Kind::UInt => {
                if value.as_u64().is_none() {
                    errors.push(format!(
                        "params.{key} must be a nonnegative integer, got {value}"
                    ));
                }
            }
            Kind::Float => {
                if !value.is_null() && value.as_f64().is_none() {
                    errors.push(format!("params.{key} must be a number, got {value}"));
                }
            }
            Kind::Bool => {
                if !value.is_null() && value.as_bool().is_none() {
                    errors.push(format!("params.{key} must be a boolean, got {value}"));
                }
            }
            Kind::NumArray(len) => match value.as_array() {
                Some(arr) => {
                    if let Some(n) = len {
                        if arr.len() != *n {
                            errors.push(format!(
                                "params.{key} must have {n} entries, got {}",
                                arr.len()
                            ));
                        }
                    }
                    if arr.iter().any(|v| v.as_f64().is_none()) {
                        errors.push(format!("params.{key} entries must be numbers"));
                    }
                }
                None => errors.push(format!("params.{key} must be an array of numbers")),
            },
            Kind::UIntArray => match value.as_array() {
                Some(arr) => {
                    if !value.is_null() && arr.iter().any(|v| v.as_u64().is_none()) {
                        errors.push(format!(
                            "params.{key} entries must be nonnegative integers"
                        ));
                    }
                }
                None => {
                    if !value.is_null() {
                        errors.push(format!(
                            "params.{key} must be an array of nonnegative integers"
                        ))
                    }
                }
            },
            Kind::Any => {}
        }
    }
    errors
}

fn parse_params(experiment: &str, value: Value) -> Result<Params, Vec<String>> {
    fn ctx<T: serde::de::DeserializeOwned>(
        experiment: &str,
        value: Value,
    ) -> Result<T, Vec<String>> {
        serde_json::from_value(value).map_err(|e| vec![format!("params ({experiment}): {e}")])
    }
    Ok(match experiment {
        "chsh" => Params::Chsh(ctx(experiment, value)?),
        "bell-feasibility" => Params::BellFeasibility(ctx(experiment, value)?),
        "darwinism-decay" => Params::DarwinismDecay(ctx(experiment, value)?),
        "visibility-scan" => Params::VisibilityScan(ctx(experiment, value)?),
        "algebra-verify" => Params::AlgebraVerify(ctx(experiment, value)?),
        "record-swap" => Params::RecordSwap(ctx(experiment, value)?),
        "ensemble-verify" => Params::EnsembleVerify(ctx(experiment, value)?),
        "measurement-check" => Params::MeasurementCheck(ctx(experiment, value)?),
        _ => unreachable!("experiment id validated earlier"),
    })
}

fn validate_ranges(params: &Params, errors: &mut Vec<String>) {
    match params {
        Params::Chsh(p) => {
            if p.angles.iter().any(|a| !a.is_finite()) {
                errors.push("params.angles must be finite".into());
            }
            if let StateSpec::Amps(amps) = &p.state {
                if amps.len() != 4 {
                    errors.push(format!(
                        "params.state.amps must have 4 entries, got {}",
                        amps.len()
                    ));
                }
            }
        }
        Params::BellFeasibility(p) => {
            if let Some(table) = &p.table {
                for row in table {
                    for &v in row {
                        if !v.is_finite() || v.abs() > 1.0 + 1e-12 {
                            errors.push(format!(
                                "params.table entries must lie in [-1, 1]; got {v}"
                            ));
                        }
                    }
                }
            }
        }
        Params::DarwinismDecay(p) | Params::VisibilityScan(p) => {
            if p.n_env == 0 || p.n_env > 11 {
                errors.push(format!(
                    "params.n_env must be between 1 and 11, got {}",
                    p.n_env
                ));
            }
            if let Some(c) = p.overlap {
                if !(0.0 < c && c < 1.0) {
                    errors.push(format!("params.overlap must be in (0, 1), got {c}"));
                }
            }
            if p.weights.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
                errors.push("params.weights must be nonnegative".into());
            }
            if (p.weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                errors.push("params.weights must sum to 1".into());
            }
            if p.indices.is_empty() || p.indices.iter().any(|&i| i >= 2) {
                errors.push("params.indices must be a nonempty subset of {0, 1}".into());
            }
            if let Some(sizes) = &p.fragment_sizes {
                if sizes.iter().any(|&m| m > p.n_env) {
                    errors.push("params.fragment_sizes must stay within n_env".into());
                }
            }
        }
        Params::AlgebraVerify(p) => {
            match &p.state {
                FixtureSpec::Ghz { n } | FixtureSpec::ProductPlus { n } => {
                    if *n == 0 || *n > 12 {
                        errors.push(format!("params.state.n must be 1..=12, got {n}"));
                    }
                }
                FixtureSpec::Random { dims } => {
                    if dims.is_empty() || dims.iter().any(|&d| d < 2) {
                        errors.push(
                            "params.state.random.dims must be nonempty with entries >= 2"
                                .into(),
                        );
                    }
                    let total: usize = dims.iter().product();
                    if total > 4096 {
                        errors.push(format!(
                            "params.state.random.dims product {total} exceeds 4096"
                        ));
                    }
                }
            }
            if p.records.is_empty() {
                errors.push("params.records must be nonempty".into());
            }
            for (i, r) in p.records.iter().enumerate() {
                if r.site.is_none() && r.region.is_none() {
                    errors.push(format!(
                        "params.records[{i}] needs either `site` or `region`"
                    ));
                }
                if !["z0", "z1", "plus", "random"].contains(&r.kind.as_str()) {
                    errors.push(format!(
                        "params.records[{i}].kind must be one of z0, z1, plus, random"
                    ));
                }
            }
            if !(p.null_tol.is_finite() && p.null_tol >= 0.0) {
                errors.push("params.null_tol must be nonnegative".into());
            }
        }
        Params::RecordSwap(p) => {
            if p.n < 2 || p.n > 12 {
                errors.push(format!("params.n must be 2..=12, got {}", p.n));
            }
            if p.records_a.len() != p.records_b.len() || p.records_a.is_empty() {
                errors.push("params.records_a and records_b must match and be nonempty".into());
            }
            for &s in p.records_a.iter().chain(&p.records_b) {
                if s >= p.n {
                    errors.push(format!("record site {s} outside chain of {} sites", p.n));
                }
            }
            if !(0.0..1.0).contains(&p.delta) {
                errors.push(format!("params.delta must be in [0, 1), got {}", p.delta));
            }
        }
        Params::EnsembleVerify(p) => {
            if p.min_dim < 2 || p.max_dim < p.min_dim || p.max_dim > 8 {
                errors.push(format!(
                    "params dims must satisfy 2 <= min_dim <= max_dim <= 8, got {}..{}",
                    p.min_dim, p.max_dim
                ));
            }
            if p.max_components == 0 || p.max_components > 16 {
                errors.push("params.max_components must be 1..=16".into());
            }
        }
        Params::MeasurementCheck(p) => {
            if p.weights.iter().any(|&w| !(w > 0.0)) {
                errors.push("params.weights must be positive".into());
            }
            if (p.weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                errors.push("params.weights must sum to 1".into());
            }
            if !(0.0..0.999).contains(&p.pointer_overlap) {
                errors.push(format!(
                    "params.pointer_overlap must be in [0, 1), got {}",
                    p.pointer_overlap
                ));
            }
        }
    }
}
