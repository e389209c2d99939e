//! JSON run configurations. Every section rejects unknown keys; missing keys
//! take the documented defaults.

use std::path::Path;

use flatcusp::caustics::{CausticTolerances, LaunchGrid, ScanConfig, SoundSpeedModel};
use flatcusp::ode::OdeOptions;
use flatcusp::radon::{CurveAverageSpec, GridSpec, LocusOptions, RidgeOptions};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed config: {0}")]
    Parse(String),
    #[error("config is for `{found}`, not `{expected}`")]
    WrongSubcommand { expected: String, found: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// The keys shared by all subcommands plus the subcommand-specific body.
#[derive(Debug)]
pub struct RunConfig<T> {
    pub seed: u64,
    pub body: T,
}

/// Recursive merge of `user` into `base`. Objects carrying a `kind` tag are
/// variant selections and replace the default wholesale.
fn overlay(base: &mut Map<String, Value>, user: Map<String, Value>) {
    for (k, v) in user {
        match (base.get_mut(&k), v) {
            (Some(Value::Object(b)), Value::Object(u)) if !u.contains_key("kind") => overlay(b, u),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Loads `{ "subcommand"?, "seed"?, ...body }`. The body is merged over the
/// serialized defaults of `T` before strict deserialization, so partial
/// configs are accepted and unknown keys are not.
pub fn load<T>(
    path: Option<&Path>,
    subcommand: &str,
    seed_flag: Option<u64>,
) -> Result<RunConfig<T>, ConfigError>
where
    T: DeserializeOwned + Serialize + Default,
{
    let mut user = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|source| ConfigError::Read {
                path: p.display().to_string(),
                source,
            })?;
            match serde_json::from_str::<Value>(&text)
                .map_err(|e| ConfigError::Parse(e.to_string()))?
            {
                Value::Object(m) => m,
                _ => return Err(ConfigError::Parse("top level must be a JSON object".into())),
            }
        }
        None => Map::new(),
    };
    if let Some(found) = user.remove("subcommand") {
        let found = found
            .as_str()
            .ok_or_else(|| ConfigError::Parse("`subcommand` must be a string".into()))?
            .to_string();
        if found != subcommand {
            return Err(ConfigError::WrongSubcommand {
                expected: subcommand.into(),
                found,
            });
        }
    }
    let seed_key =
        match user.remove("seed") {
            None => None,
            Some(v) => Some(v.as_u64().ok_or_else(|| {
                ConfigError::Parse("`seed` must be a non-negative integer".into())
            })?),
        };
    let mut merged =
        match serde_json::to_value(T::default()).map_err(|e| ConfigError::Parse(e.to_string()))? {
            Value::Object(m) => m,
            _ => unreachable!("config bodies serialize to objects"),
        };
    overlay(&mut merged, user);
    let body = serde_json::from_value(Value::Object(merged))
        .map_err(|e| ConfigError::Parse(e.to_string()))?;
    Ok(RunConfig {
        seed: seed_flag.or(seed_key).unwrap_or(0),
        body,
    })
}

fn positive(name: &str, v: f64) -> Result<(), ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(ConfigError::Invalid(format!(
            "`{name}` must be positive, got {v}"
        )))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifyTolerancesConfig {
    pub singular: f64,
    pub fold: f64,
    pub cusp: f64,
    pub rank: f64,
}

impl Default for ClassifyTolerancesConfig {
    fn default() -> Self {
        let t = flatcusp::singularity::ClassifyTolerances::default();
        ClassifyTolerancesConfig {
            singular: t.singular,
            fold: t.fold,
            cusp: t.cusp,
            rank: t.rank,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifyConfig {
    pub chart: String,
    pub params: Vec<f64>,
    /// Random chart points classified on both sides, drawn from `[-box, box]`.
    pub random_points: usize,
    #[serde(rename = "box")]
    pub sample_box: f64,
    pub tolerances: ClassifyTolerancesConfig,
}

impl Default for ClassifyConfig {
    fn default() -> Self {
        ClassifyConfig {
            chart: "model_c0".into(),
            params: Vec::new(),
            random_points: 100,
            sample_box: 1.0,
            tolerances: ClassifyTolerancesConfig::default(),
        }
    }
}

impl ClassifyConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let t = &self.tolerances;
        for (n, v) in [
            ("singular", t.singular),
            ("fold", t.fold),
            ("cusp", t.cusp),
            ("rank", t.rank),
            ("box", self.sample_box),
        ] {
            positive(n, v)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComposeConfig {
    pub chart: String,
    pub seeds: usize,
    pub containment_tol: f64,
    pub min_converged: f64,
    pub intersection: bool,
}

impl Default for ComposeConfig {
    fn default() -> Self {
        ComposeConfig {
            chart: "model_c0".into(),
            seeds: 500,
            containment_tol: 1e-7,
            min_converged: 0.95,
            intersection: true,
        }
    }
}

impl ComposeConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.chart != "model_c0" {
            return Err(ConfigError::Invalid(format!(
                "composition is available for `model_c0` only, got `{}`",
                self.chart
            )));
        }
        if self.seeds == 0 {
            return Err(ConfigError::Invalid("`seeds` must be at least 1".into()));
        }
        positive("containment_tol", self.containment_tol)?;
        positive("min_converged", self.min_converged)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UmbrellaConfig {
    /// Random points per Lagrangian model for the isotropy defect.
    pub isotropy_samples: usize,
    pub isotropy_tol: f64,
    pub locus_tol: f64,
    pub ring_radii: Vec<f64>,
    /// Coefficient `c` of the perturbation `P₁ = c·x₁θ₃` of the reduced phase.
    pub p1_coefficient: f64,
}

impl Default for UmbrellaConfig {
    fn default() -> Self {
        UmbrellaConfig {
            isotropy_samples: 50,
            isotropy_tol: 1e-12,
            locus_tol: 1e-8,
            ring_radii: vec![1e-3, 1e-2, 1e-1],
            p1_coefficient: 0.1,
        }
    }
}

impl UmbrellaConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        positive("isotropy_tol", self.isotropy_tol)?;
        positive("locus_tol", self.locus_tol)?;
        if self.ring_radii.is_empty() {
            return Err(ConfigError::Invalid(
                "`ring_radii` must not be empty".into(),
            ));
        }
        self.ring_radii
            .iter()
            .try_for_each(|&r| positive("ring_radii", r))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SymbolConfig {
    pub delta_min: f64,
    pub delta_max: f64,
    pub samples: usize,
    pub model_tol: f64,
    pub instance_tol: f64,
    /// Largest allowed `ratio_max / ratio_min` of the two branch factors.
    pub ratio_bound: f64,
}

impl Default for SymbolConfig {
    fn default() -> Self {
        SymbolConfig {
            delta_min: 1e-4,
            delta_max: 1e-1,
            samples: 16,
            model_tol: 0.02,
            instance_tol: 0.05,
            ratio_bound: 1.5,
        }
    }
}

impl SymbolConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        for (n, v) in [
            ("delta_min", self.delta_min),
            ("delta_max", self.delta_max),
            ("model_tol", self.model_tol),
            ("instance_tol", self.instance_tol),
            ("ratio_bound", self.ratio_bound),
        ] {
            positive(n, v)?;
        }
        if self.delta_min >= self.delta_max || self.samples < 3 {
            return Err(ConfigError::Invalid(
                "need delta_min < delta_max and at least 3 samples".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RadonConfig {
    pub grid: GridSpec,
    pub curve: CurveAverageSpec,
    pub source: [f64; 3],
    pub width_cells: f64,
    pub locus: LocusOptions,
    pub ridge: RidgeOptions,
    pub baseline_trials: usize,
    pub adjoint_tol: f64,
    pub coverage_min: f64,
    pub baseline_max: f64,
}

impl Default for RadonConfig {
    fn default() -> Self {
        RadonConfig {
            grid: GridSpec::default(),
            curve: CurveAverageSpec::default(),
            source: [0.0; 3],
            width_cells: 2.0,
            locus: LocusOptions::default(),
            ridge: RidgeOptions::default(),
            baseline_trials: 4,
            adjoint_tol: 1e-6,
            coverage_min: 0.8,
            baseline_max: 0.2,
        }
    }
}

impl RadonConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        for (n, v) in [
            ("width_cells", self.width_cells),
            ("adjoint_tol", self.adjoint_tol),
            ("coverage_min", self.coverage_min),
            ("baseline_max", self.baseline_max),
        ] {
            positive(n, v)?;
        }
        if self.grid.n < 16 || !(self.grid.hi > self.grid.lo) {
            return Err(ConfigError::Invalid("grid needs n ≥ 16 and hi > lo".into()));
        }
        self.curve
            .quadrature()
            .map(|_| ())
            .map_err(|e| ConfigError::Invalid(e.to_string()))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    pub n1: usize,
    pub n2: usize,
    pub rtol: f64,
    pub band: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            n1: 200,
            n2: 200,
            rtol: 1e-10,
            band: 0.1,
        }
    }
}

/// Scan keys `{model, source, grid, t_max, tolerances, domain, integrator}`
/// plus the checks applied to the result.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CausticsConfig {
    pub model: SoundSpeedModel,
    pub source: [f64; 3],
    pub grid: LaunchGrid,
    pub t_max: f64,
    pub tolerances: CausticTolerances,
    pub domain: [f64; 2],
    pub integrator: OdeOptions,
    pub h_drift_tol: f64,
    pub cusp_residual_tol: f64,
    pub cusp_curvature_min: f64,
    /// Dense-grid cross-check; `null` skips it.
    pub oracle: Option<OracleConfig>,
}

impl Default for CausticsConfig {
    fn default() -> Self {
        let s = ScanConfig::default();
        CausticsConfig {
            model: s.model,
            source: s.source,
            grid: s.grid,
            t_max: s.t_max,
            tolerances: s.tolerances,
            domain: s.domain,
            integrator: s.integrator,
            h_drift_tol: 1e-8,
            cusp_residual_tol: 1e-8,
            cusp_curvature_min: 1e-3,
            oracle: None,
        }
    }
}

impl CausticsConfig {
    pub fn scan(&self) -> ScanConfig {
        ScanConfig {
            model: self.model.clone(),
            source: self.source,
            grid: self.grid,
            t_max: self.t_max,
            tolerances: self.tolerances,
            domain: self.domain,
            integrator: self.integrator,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        for (n, v) in [
            ("h_drift_tol", self.h_drift_tol),
            ("cusp_residual_tol", self.cusp_residual_tol),
            ("cusp_curvature_min", self.cusp_curvature_min),
        ] {
            positive(n, v)?;
        }
        if let Some(o) = &self.oracle {
            positive("oracle.rtol", o.rtol)?;
            positive("oracle.band", o.band)?;
            if o.n1 < 3 || o.n2 < 3 {
                return Err(ConfigError::Invalid(
                    "oracle grid needs at least 3×3 nodes".into(),
                ));
            }
        }
        self.scan()
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))
    }
}
