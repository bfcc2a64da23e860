//! Experiment configuration: the TOML schema with its defaults, CLI
//! overrides, and the stepsize regime guard shared by every driver.
//!
//! A config plus a master seed fully determines every output byte of the
//! result CSV; nothing downstream may read the clock, thread ids, or any
//! other ambient state.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrators::IntegratorKind;

/// Sampler selection. The `sg-` prefix marks stochastic-gradient variants;
/// `ubu`/`em` run the same integrators with exact gradients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Sgld,
    SgEm,
    SgUbu,
    Ubu,
    Em,
}

impl Method {
    pub fn label(&self) -> &'static str {
        match self {
            Method::Sgld => "sgld",
            Method::SgEm => "sg-em",
            Method::SgUbu => "sg-ubu",
            Method::Ubu => "ubu",
            Method::Em => "em",
        }
    }

    pub fn integrator(&self) -> IntegratorKind {
        match self {
            Method::Sgld => IntegratorKind::Sgld,
            Method::SgEm | Method::Em => IntegratorKind::EmKinetic,
            Method::SgUbu | Method::Ubu => IntegratorKind::Ubu,
        }
    }

    /// Whether the gradient is replaced by a stochastic estimator.
    pub fn stochastic(&self) -> bool {
        matches!(self, Method::Sgld | Method::SgEm | Method::SgUbu)
    }

    /// Kinetic methods carry a friction parameter and fall under the
    /// h < 1/(2 gamma) regime guard; the overdamped method does not.
    pub fn kinetic(&self) -> bool {
        !matches!(self, Method::Sgld)
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// Target distribution for the sweep driver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum TargetSpec {
    /// The 1-D two-center quadratic mixture with known Gaussian law.
    Toy,
    /// Standard Gaussian in `dim` dimensions.
    Gaussian { dim: usize },
}

/// Gradient noise for the sweep driver. The spike and logistic-regression
/// drivers derive their noise from their own protocol sections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum NoiseSpec {
    None,
    /// With-replacement minibatch of the target's sum structure.
    Minibatch { batch: usize },
    /// Additive N(0, c^2 I) on the exact gradient.
    Gaussian { c: f64 },
}

/// Spike-table protocol section: dimensions, the exponent alpha of
/// h = d^{-alpha}, and the budgets, all per the high-dimensional
/// counterexample construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpikeSection {
    pub dims: Vec<usize>,
    pub alpha: f64,
    pub gamma: f64,
    pub n_samples: u64,
    pub burn_in: u64,
    pub replicas: u32,
    /// Monte Carlo draws for the exact-target reference average.
    pub reference_draws: u64,
}

impl Default for SpikeSection {
    fn default() -> Self {
        Self {
            dims: vec![64, 256],
            alpha: 0.5,
            gamma: 2.0,
            n_samples: 200_000,
            burn_in: 20_000,
            replicas: 4,
            reference_draws: 200_000,
        }
    }
}

/// Synthetic logistic-regression section. Stepsizes are expressed as
/// multiples of 1/sqrt(L) so the grid tracks the fitted smoothness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BlrSection {
    pub dim: usize,
    pub n_obs: usize,
    pub prior_variance: f64,
    pub batch: usize,
    /// Grid of c values for h = c/sqrt(L).
    pub h_scales: Vec<f64>,
    /// Reference stepsize scale: h_ref = reference_scale/sqrt(L).
    pub reference_scale: f64,
    /// Reference chains run this multiple of the per-cell budget.
    pub reference_budget_factor: u64,
    pub n_samples: u64,
    pub burn_in: u64,
    pub thin: u64,
    pub replicas: u32,
}

impl Default for BlrSection {
    fn default() -> Self {
        Self {
            dim: 20,
            n_obs: 1000,
            prior_variance: 1.0,
            batch: 32,
            h_scales: vec![2.0, 1.0, 0.5, 0.25],
            reference_scale: 1.0 / 16.0,
            reference_budget_factor: 4,
            n_samples: 50_000,
            burn_in: 5_000,
            thin: 10,
            replicas: 4,
        }
    }
}

/// Full experiment configuration. Top-level budgets apply to the bias
/// sweep; the spike and logistic-regression drivers read their sections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub methods: Vec<Method>,
    pub stepsizes: Vec<f64>,
    pub gammas: Vec<f64>,
    pub target: TargetSpec,
    pub noise: NoiseSpec,
    pub n_samples: u64,
    pub burn_in: u64,
    pub replicas: u32,
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Worker threads for cell execution; 0 means one per available core.
    pub threads: usize,
    pub allow_out_of_regime: bool,
    pub spike: SpikeSection,
    pub blr: BlrSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            methods: vec![Method::Sgld, Method::SgEm, Method::SgUbu],
            stepsizes: vec![0.25, 0.125, 0.0625, 0.03125],
            gammas: vec![5.0],
            target: TargetSpec::Toy,
            noise: NoiseSpec::Minibatch { batch: 1 },
            n_samples: 1_000_000,
            burn_in: 100_000,
            replicas: 8,
            seed: 3_141_592_653_589_793_238,
            out_dir: PathBuf::from("results"),
            threads: 1,
            allow_out_of_regime: false,
            spike: SpikeSection::default(),
            blr: BlrSection::default(),
        }
    }
}

impl ExperimentConfig {
    /// Defaults, overlaid by a TOML file when one is given. Unknown keys
    /// are config errors, not silent typo sinks.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path)?;
        let config: Self = toml::from_str(&text)?;
        Ok(config)
    }

    /// Applies command-line overrides on top of the file values.
    pub fn apply_overrides(
        &mut self,
        seed: Option<u64>,
        threads: Option<usize>,
        out_dir: Option<PathBuf>,
        allow_out_of_regime: bool,
    ) {
        if let Some(seed) = seed {
            self.seed = seed;
        }
        if let Some(threads) = threads {
            self.threads = threads;
        }
        if let Some(out_dir) = out_dir {
            self.out_dir = out_dir;
        }
        if allow_out_of_regime {
            self.allow_out_of_regime = true;
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::Config("method list is empty".into()));
        }
        let unique: BTreeSet<_> = self.methods.iter().collect();
        if unique.len() != self.methods.len() {
            return Err(Error::Config("method list contains duplicates".into()));
        }
        if self.stepsizes.is_empty() || self.stepsizes.iter().any(|h| !(*h > 0.0) || !h.is_finite()) {
            return Err(Error::Config(format!(
                "stepsizes must be a non-empty list of positive finite values, got {:?}",
                self.stepsizes
            )));
        }
        if self.gammas.is_empty() || self.gammas.iter().any(|g| !(*g > 0.0) || !g.is_finite()) {
            return Err(Error::Config(format!(
                "gammas must be a non-empty list of positive finite values, got {:?}",
                self.gammas
            )));
        }
        if self.replicas < 2 {
            return Err(Error::Config(format!(
                "between-replica standard errors need at least 2 replicas, got {}",
                self.replicas
            )));
        }
        if self.n_samples == 0 {
            return Err(Error::Config("sample budget must be positive".into()));
        }
        match &self.noise {
            NoiseSpec::Minibatch { batch } if *batch == 0 => {
                return Err(Error::Config("minibatch size must be positive".into()));
            }
            NoiseSpec::Gaussian { c } if !(*c >= 0.0) || !c.is_finite() => {
                return Err(Error::Config(format!("gaussian noise scale must be nonnegative, got {c}")));
            }
            _ => {}
        }
        if let TargetSpec::Gaussian { dim } = &self.target {
            if *dim == 0 {
                return Err(Error::Config("gaussian target dimension must be positive".into()));
            }
        }
        if self.spike.dims.is_empty() || self.spike.dims.iter().any(|d| *d < 2) {
            return Err(Error::Config(format!(
                "spike dimensions must be at least 2, got {:?}",
                self.spike.dims
            )));
        }
        if !(self.spike.alpha > 0.0 && self.spike.alpha < 1.0) {
            return Err(Error::Config(format!(
                "spike exponent must lie in (0, 1), got {}",
                self.spike.alpha
            )));
        }
        if self.blr.dim == 0 || self.blr.n_obs == 0 || self.blr.batch == 0 {
            return Err(Error::Config("logistic-regression section needs positive dim, n_obs, batch".into()));
        }
        if self.blr.batch > self.blr.n_obs {
            return Err(Error::Config(format!(
                "logistic-regression batch {} exceeds the observation count {}",
                self.blr.batch, self.blr.n_obs
            )));
        }
        if self.blr.thin == 0 || self.blr.reference_budget_factor == 0 {
            return Err(Error::Config("logistic-regression thinning and reference factor must be positive".into()));
        }
        Ok(())
    }
}

/// Cells violating the kinetic stepsize condition h < 1/(2 gamma),
/// formatted as stable cell names.
pub fn regime_violations(methods: &[Method], stepsizes: &[f64], gammas: &[f64]) -> Vec<String> {
    let mut cells = Vec::new();
    for method in methods {
        if !method.kinetic() {
            continue;
        }
        for &gamma in gammas {
            let limit = 1.0 / (2.0 * gamma);
            for &h in stepsizes {
                if h >= limit {
                    cells.push(format!("{method}/h={h}/gamma={gamma}"));
                }
            }
        }
    }
    cells
}

/// Applies the regime guard: out-of-regime cells are a config error unless
/// explicitly allowed, in which case they are returned for the manifest.
pub fn enforce_regime(
    methods: &[Method],
    stepsizes: &[f64],
    gammas: &[f64],
    allow: bool,
) -> Result<Vec<String>> {
    let violations = regime_violations(methods, stepsizes, gammas);
    if !violations.is_empty() && !allow {
        return Err(Error::Config(format!(
            "stepsize regime h < 1/(2 gamma) is violated by: {}; pass --allow-out-of-regime to run anyway",
            violations.join(", ")
        )));
    }
    Ok(violations)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let config = ExperimentConfig::default();
        let text = toml::to_string(&config).unwrap();
        let back: ExperimentConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, config);
    }

    #[test]
    fn partial_files_inherit_defaults() {
        let config: ExperimentConfig = toml::from_str(
            r#"
            seed = 7
            stepsizes = [0.125]
            [noise]
            kind = "minibatch"
            batch = 4
            "#,
        )
        .unwrap();
        assert_eq!(config.seed, 7);
        assert_eq!(config.stepsizes, vec![0.125]);
        assert_eq!(config.noise, NoiseSpec::Minibatch { batch: 4 });
        assert_eq!(config.replicas, ExperimentConfig::default().replicas);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = toml::from_str::<ExperimentConfig>("stepsize = [0.1]").unwrap_err();
        assert!(err.to_string().contains("stepsize"), "{err}");
    }

    #[test]
    fn validation_names_the_offending_field() {
        let mut config = ExperimentConfig { replicas: 1, ..Default::default() };
        assert!(config.validate().unwrap_err().to_string().contains("replicas"));
        config.replicas = 2;
        config.methods = vec![Method::SgUbu, Method::SgUbu];
        assert!(config.validate().unwrap_err().to_string().contains("duplicates"));
        config.methods = vec![Method::SgUbu];
        config.stepsizes = vec![0.1, f64::NAN];
        assert!(config.validate().is_err());
        config.stepsizes = vec![0.1];
        config.validate().unwrap();
    }

    #[test]
    fn overrides_replace_file_values() {
        let mut config = ExperimentConfig::default();
        config.apply_overrides(Some(11), Some(3), Some(PathBuf::from("elsewhere")), true);
        assert_eq!(config.seed, 11);
        assert_eq!(config.threads, 3);
        assert_eq!(config.out_dir, PathBuf::from("elsewhere"));
        assert!(config.allow_out_of_regime);
        // The flag never un-sets a config file's true.
        config.apply_overrides(None, None, None, false);
        assert!(config.allow_out_of_regime);
        assert_eq!(config.seed, 11);
    }

    #[test]
    fn regime_guard_names_kinetic_cells_only() {
        let methods = [Method::Sgld, Method::SgUbu];
        let violations = regime_violations(&methods, &[0.25, 0.01], &[5.0]);
        // 1/(2 gamma) = 0.1: only the kinetic method at h = 0.25 violates.
        assert_eq!(violations, vec!["sg-ubu/h=0.25/gamma=5".to_string()]);

        let err = enforce_regime(&methods, &[0.25], &[5.0], false).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(err.to_string().contains("sg-ubu/h=0.25/gamma=5"), "{err}");

        let tagged = enforce_regime(&methods, &[0.25], &[5.0], true).unwrap();
        assert_eq!(tagged.len(), 1);
    }

    #[test]
    fn method_metadata_is_consistent() {
        for (method, label, stochastic, kinetic) in [
            (Method::Sgld, "sgld", true, false),
            (Method::SgEm, "sg-em", true, true),
            (Method::SgUbu, "sg-ubu", true, true),
            (Method::Ubu, "ubu", false, true),
            (Method::Em, "em", false, true),
        ] {
            assert_eq!(method.label(), label);
            assert_eq!(method.stochastic(), stochastic);
            assert_eq!(method.kinetic(), kinetic);
        }
        assert_eq!(Method::SgUbu.integrator(), IntegratorKind::Ubu);
        assert_eq!(Method::Em.integrator(), IntegratorKind::EmKinetic);
        assert_eq!(Method::Sgld.integrator(), IntegratorKind::Sgld);
    }
}
