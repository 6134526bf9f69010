//! Declarative experiment configuration: one TOML file per experiment.
//!
//! Schema validation happens before any simulation starts; every run needs a
//! master seed, and all derived seeds are deterministic functions of it.

use serde::{Deserialize, Serialize};

use rwre_core::environment::{BaseDensity, EnvironmentSpec};
use rwre_core::estimators::{tags, SeedPolicy, TestFunction};
use rwre_core::particles::{InitialLaw, ProfileRounding, ProfileSpec, QuantileTable};
use rwre_core::rng::StreamKey;
use rwre_core::Real;

use crate::error::{HarnessError, Result};

/// Default budget: desk-scale protection against accidental monster runs.
pub const DEFAULT_MAX_SITE_STEPS: u64 = 1_000_000_000;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Experiment kind: invariants | f-check | speed | lln | slowdown |
    /// hitting | stationary | converge | couple | hydro | meet.
    pub kind: String,
    pub master_seed: u64,
    pub environment: EnvironmentBlock,
    #[serde(default)]
    pub policy: Option<PolicyBlock>,
    /// Experiment-specific parameters, validated per kind.
    #[serde(default)]
    pub params: toml::Table,
    #[serde(default)]
    pub limits: LimitsBlock,
    #[serde(default)]
    pub output: OutputBlock,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentBlock {
    /// two-point | discrete | constant | uniform | beta
    pub name: String,
    pub ellipticity: Real,
    #[serde(default)]
    pub values: Option<[Real; 2]>,
    #[serde(default)]
    pub prob: Option<Real>,
    #[serde(default)]
    pub value: Option<Real>,
    #[serde(default)]
    pub atoms: Option<Vec<[Real; 2]>>,
    #[serde(default)]
    pub alpha: Option<Real>,
    #[serde(default)]
    pub beta: Option<Real>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyBlock {
    /// quenched | averaged
    pub mode: String,
    pub replicas: u64,
    /// Quenched environment seed; derived from the master seed when absent.
    #[serde(default)]
    pub env_seed: Option<u64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LimitsBlock {
    #[serde(default = "default_cap")]
    pub max_site_steps: u64,
}

fn default_cap() -> u64 {
    DEFAULT_MAX_SITE_STEPS
}

impl Default for LimitsBlock {
    fn default() -> Self {
        LimitsBlock {
            max_site_steps: DEFAULT_MAX_SITE_STEPS,
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputBlock {
    #[serde(default)]
    pub report: Option<String>,
    #[serde(default)]
    pub series_dir: Option<String>,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::io(path.display().to_string(), e))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        const KINDS: [&str; 11] = [
            "invariants",
            "f-check",
            "speed",
            "lln",
            "slowdown",
            "hitting",
            "stationary",
            "converge",
            "couple",
            "hydro",
            "meet",
        ];
        if !KINDS.contains(&self.kind.as_str()) {
            return Err(HarnessError::Config(format!(
                "kind: unknown experiment kind `{}` (expected one of {})",
                self.kind,
                KINDS.join(", ")
            )));
        }
        self.environment_spec()?;
        if let Some(policy) = &self.policy {
            if !matches!(policy.mode.as_str(), "quenched" | "averaged") {
                return Err(HarnessError::Config(format!(
                    "policy.mode: `{}` is not quenched|averaged",
                    policy.mode
                )));
            }
            if policy.replicas == 0 {
                return Err(HarnessError::Config(
                    "policy.replicas: must be at least 1".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn master_key(&self) -> StreamKey {
        StreamKey::from_seed(self.master_seed)
    }

    pub fn environment_spec(&self) -> Result<EnvironmentSpec<Real>> {
        let e = &self.environment;
        let need = |field: &str, kind: &str| {
            HarnessError::Config(format!("environment.{field}: required for `{kind}`"))
        };
        let spec = match e.name.as_str() {
            "two-point" => {
                let values = e.values.ok_or_else(|| need("values", "two-point"))?;
                let prob = e.prob.ok_or_else(|| need("prob", "two-point"))?;
                EnvironmentSpec::two_point((values[0], values[1]), prob, e.ellipticity)
            }
            "constant" => {
                let value = e.value.ok_or_else(|| need("value", "constant"))?;
                EnvironmentSpec::constant(value, e.ellipticity)
            }
            "discrete" => {
                let atoms = e.atoms.clone().ok_or_else(|| need("atoms", "discrete"))?;
                EnvironmentSpec::discrete(
                    atoms.into_iter().map(|[w, p]| (w, p)).collect(),
                    e.ellipticity,
                )
            }
            "uniform" => {
                EnvironmentSpec::truncated_continuous(BaseDensity::Uniform, e.ellipticity)
            }
            "beta" => {
                let alpha = e.alpha.ok_or_else(|| need("alpha", "beta"))?;
                let beta = e.beta.ok_or_else(|| need("beta", "beta"))?;
                EnvironmentSpec::truncated_continuous(
                    BaseDensity::Beta { alpha, beta },
                    e.ellipticity,
                )
            }
            other => {
                return Err(HarnessError::Config(format!(
                    "environment.name: unknown law `{other}`"
                )))
            }
        };
        spec.map_err(|e| HarnessError::Config(format!("environment: {e}")))
    }

    /// Seed policy with the documented defaults: averaged mode, and the
    /// quenched environment seed derived from the master seed when absent.
    pub fn seed_policy(&self, default_replicas: u64) -> Result<SeedPolicy> {
        let master = self.master_key();
        Ok(match &self.policy {
            None => SeedPolicy::averaged(default_replicas),
            Some(p) => {
                let replicas = p.replicas;
                match p.mode.as_str() {
                    "averaged" => SeedPolicy::averaged(replicas),
                    _ => {
                        let env_seed = p
                            .env_seed
                            .unwrap_or_else(|| master.derive(tags::ENV).derive(0).raw());
                        SeedPolicy::quenched(env_seed, replicas)
                    }
                }
            }
        })
    }

    /// Parse `self.params` into a typed per-kind parameter struct.
    pub fn typed_params<T: serde::de::DeserializeOwned>(&self) -> Result<T> {
        self.params
            .clone()
            .try_into()
            .map_err(|e| HarnessError::Config(format!("params: {e}")))
    }
}

/// Initial-law block used by couple/converge configs.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LawBlock {
    /// deterministic | poisson | stationary-poisson | quantile
    pub name: String,
    #[serde(default)]
    pub count: Option<u64>,
    #[serde(default)]
    pub lambda: Option<Real>,
    /// Density for stationary-poisson; the string "speed" means `v_P`.
    #[serde(default)]
    pub alpha: Option<toml::Value>,
    #[serde(default)]
    pub rows: Option<Vec<QuantileRow>>,
    #[serde(default = "default_support_cap")]
    pub support_cap: usize,
}

fn default_support_cap() -> usize {
    64
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuantileRow {
    pub omega: Real,
    pub pmf: Vec<Real>,
}

impl LawBlock {
    pub fn to_law(&self, speed: Real) -> Result<InitialLaw<Real>> {
        let need =
            |field: &str| HarnessError::Config(format!("law.{field}: required for `{}`", self.name));
        Ok(match self.name.as_str() {
            "deterministic" => {
                InitialLaw::DeterministicConstant(self.count.ok_or_else(|| need("count"))?)
            }
            "poisson" => InitialLaw::PoissonConstant(self.lambda.ok_or_else(|| need("lambda"))?),
            "stationary-poisson" => {
                let alpha = match self.alpha.as_ref().ok_or_else(|| need("alpha"))? {
                    toml::Value::String(s) if s == "speed" => speed,
                    toml::Value::Float(f) => *f,
                    toml::Value::Integer(i) => *i as Real,
                    other => {
                        return Err(HarnessError::Config(format!(
                            "law.alpha: expected number or \"speed\", got {other}"
                        )))
                    }
                };
                InitialLaw::StationaryPoisson { alpha }
            }
            "quantile" => {
                let rows = self.rows.clone().ok_or_else(|| need("rows"))?;
                let table = QuantileTable::new(
                    rows.into_iter().map(|r| (r.omega, r.pmf)).collect(),
                    self.support_cap,
                )
                .map_err(|e| HarnessError::Config(format!("law.rows: {e}")))?;
                InitialLaw::QuantileProduct(table)
            }
            other => {
                return Err(HarnessError::Config(format!(
                    "law.name: unknown initial law `{other}`"
                )))
            }
        })
    }
}

/// Profile block for hydro configs.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileBlock {
    /// indicator | piecewise
    pub shape: String,
    #[serde(default)]
    pub a: Option<Real>,
    #[serde(default)]
    pub b: Option<Real>,
    #[serde(default)]
    pub height: Option<Real>,
    #[serde(default)]
    pub knots: Option<Vec<[Real; 2]>>,
    /// poisson | floor
    #[serde(default = "default_rounding")]
    pub rounding: String,
}

fn default_rounding() -> String {
    "poisson".into()
}

impl ProfileBlock {
    pub fn to_profile(&self) -> Result<ProfileSpec<Real>> {
        let need = |field: &str| {
            HarnessError::Config(format!("profile.{field}: required for `{}`", self.shape))
        };
        let prof = match self.shape.as_str() {
            "indicator" => ProfileSpec::indicator(
                self.a.ok_or_else(|| need("a"))?,
                self.b.ok_or_else(|| need("b"))?,
                self.height.ok_or_else(|| need("height"))?,
            ),
            "piecewise" => ProfileSpec::piecewise_linear(
                self.knots
                    .clone()
                    .ok_or_else(|| need("knots"))?
                    .into_iter()
                    .map(|[x, v]| (x, v))
                    .collect(),
            ),
            other => {
                return Err(HarnessError::Config(format!(
                    "profile.shape: unknown shape `{other}`"
                )))
            }
        };
        prof.map_err(|e| HarnessError::Config(format!("profile: {e}")))
    }

    pub fn rounding(&self) -> Result<ProfileRounding> {
        match self.rounding.as_str() {
            "poisson" => Ok(ProfileRounding::Poisson),
            "floor" => Ok(ProfileRounding::Floor),
            other => Err(HarnessError::Config(format!(
                "profile.rounding: unknown rounding `{other}`"
            ))),
        }
    }
}

/// Test-function block for hydro configs.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestFunctionBlock {
    /// triangle | piecewise
    pub shape: String,
    #[serde(default)]
    pub lo: Option<Real>,
    #[serde(default)]
    pub hi: Option<Real>,
    #[serde(default)]
    pub knots: Option<Vec<[Real; 2]>>,
}

impl TestFunctionBlock {
    pub fn to_test_function(&self) -> Result<TestFunction<Real>> {
        let need =
            |field: &str| HarnessError::Config(format!("g.{field}: required for `{}`", self.shape));
        let g = match self.shape.as_str() {
            "triangle" => TestFunction::triangle(
                self.lo.ok_or_else(|| need("lo"))?,
                self.hi.ok_or_else(|| need("hi"))?,
            ),
            "piecewise" => TestFunction::new(
                self.knots
                    .clone()
                    .ok_or_else(|| need("knots"))?
                    .into_iter()
                    .map(|[x, v]| (x, v))
                    .collect(),
            ),
            other => {
                return Err(HarnessError::Config(format!(
                    "g.shape: unknown test function `{other}`"
                )))
            }
        };
        g.map_err(|e| HarnessError::Config(format!("g: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
kind = "invariants"
master_seed = 7
[environment]
name = "two-point"
values = [0.4, 0.8]
prob = 0.3
ellipticity = 0.2
"#;

    #[test]
    fn minimal_config_parses() {
        let cfg = ExperimentConfig::from_toml_str(MINIMAL).unwrap();
        assert_eq!(cfg.kind, "invariants");
        let spec = cfg.environment_spec().unwrap();
        assert!(spec.transient());
        assert_eq!(cfg.limits.max_site_steps, DEFAULT_MAX_SITE_STEPS);
    }

    #[test]
    fn unknown_kind_names_the_field() {
        let text = MINIMAL.replace("invariants", "frobnicate");
        let err = ExperimentConfig::from_toml_str(&text).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("kind"), "{msg}");
        assert!(msg.contains("frobnicate"), "{msg}");
    }

    #[test]
    fn unknown_field_rejected() {
        let text = format!("{MINIMAL}\nbogus_field = 3\n");
        assert!(ExperimentConfig::from_toml_str(&text).is_err());
    }

    #[test]
    fn invalid_environment_rejected() {
        let text = MINIMAL.replace("[0.4, 0.8]", "[0.1, 0.8]");
        let err = ExperimentConfig::from_toml_str(&text).unwrap_err();
        assert!(err.to_string().contains("environment"));
    }

    #[test]
    fn policy_defaults_and_quenched_seed_derivation() {
        let cfg = ExperimentConfig::from_toml_str(MINIMAL).unwrap();
        let policy = cfg.seed_policy(10).unwrap();
        assert_eq!(policy.replicas, 10);

        let text = format!(
            "{MINIMAL}\n[policy]\nmode = \"quenched\"\nreplicas = 5\n"
        );
        let cfg = ExperimentConfig::from_toml_str(&text).unwrap();
        let policy = cfg.seed_policy(10).unwrap();
        assert_eq!(policy.replicas, 5);
        // Derived env seed is deterministic in the master seed.
        let again = cfg.seed_policy(10).unwrap();
        assert_eq!(
            format!("{:?}", policy.mode),
            format!("{:?}", again.mode)
        );
    }

    #[test]
    fn law_blocks_build() {
        let det: LawBlock = toml::from_str("name = \"deterministic\"\ncount = 1").unwrap();
        assert!(matches!(
            det.to_law(0.5).unwrap(),
            InitialLaw::DeterministicConstant(1)
        ));
        let sp: LawBlock =
            toml::from_str("name = \"stationary-poisson\"\nalpha = \"speed\"").unwrap();
        match sp.to_law(0.23).unwrap() {
            InitialLaw::StationaryPoisson { alpha } => assert_eq!(alpha, 0.23),
            other => panic!("unexpected law {other:?}"),
        }
        let q: LawBlock = toml::from_str(
            "name = \"quantile\"\n[[rows]]\nomega = 0.4\npmf = [0.5, 0.5]",
        )
        .unwrap();
        assert!(matches!(
            q.to_law(0.5).unwrap(),
            InitialLaw::QuantileProduct(_)
        ));
    }
}
