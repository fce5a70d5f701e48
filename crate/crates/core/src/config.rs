//! Model configuration: every calibration default the engine uses can be
//! overridden from a single TOML file.
//!
//! Paths in `[files]` are resolved relative to the config file's directory,
//! so a fixture directory is fully self-contained and relocatable.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use crate::{Rate, Share};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {0}: {1}")]
    Io(String, String),
    #[error("cannot parse {0}: {1}")]
    Parse(String, String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Input file locations, relative to the config file.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Files {
    /// Model-ready SAM (post augmentation).
    pub sam: PathBuf,
    /// Account metadata (code, label, macro).
    pub accounts: PathBuf,
    /// Physical water intake per flow group.
    pub water_flows: PathBuf,
    /// Water intake rates per rated sector.
    pub water_rates: PathBuf,
    /// Pre-augmentation SAM, used when the pipeline starts from raw data.
    #[serde(default)]
    pub raw_sam: Option<PathBuf>,
}

/// Substitution elasticities; exponents are derived as ρ = 1/σ − 1 for CES
/// nests and ρ = 1/σ + 1 for the CET.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Elasticities {
    /// Top production nest: value added vs intermediate aggregate.
    #[serde(default = "default_sigma_top")]
    pub top: f64,
    /// First value-added level: labor/land/resources vs the capital-water
    /// composite.
    #[serde(default = "default_sigma_va1")]
    pub va1: f64,
    /// Second value-added level: capital vs water.
    #[serde(default = "default_sigma_va2")]
    pub va2: f64,
    /// Per-industry overrides of `va2`, for sectors whose water intake is
    /// much easier or harder to substitute than the economy-wide norm.
    #[serde(default)]
    pub va2_overrides: BTreeMap<String, f64>,
    /// Aggregation of industry outputs into one commodity.
    #[serde(default = "default_sigma_output")]
    pub output: f64,
    /// Domestic-vs-export transformation.
    #[serde(default = "default_sigma_trade")]
    pub export: f64,
    /// Domestic-vs-import substitution.
    #[serde(default = "default_sigma_trade")]
    pub import: f64,
    /// Per-commodity overrides of `output`.
    #[serde(default)]
    pub output_overrides: BTreeMap<String, f64>,
    /// Per-commodity overrides of `export`.
    #[serde(default)]
    pub export_overrides: BTreeMap<String, f64>,
    /// Per-commodity overrides of `import`.
    #[serde(default)]
    pub import_overrides: BTreeMap<String, f64>,
}

fn default_sigma_top() -> f64 {
    0.5
}
fn default_sigma_va1() -> f64 {
    0.6
}
fn default_sigma_va2() -> f64 {
    0.8
}
fn default_sigma_output() -> f64 {
    4.0
}
fn default_sigma_trade() -> f64 {
    2.0
}

impl Default for Elasticities {
    fn default() -> Self {
        Elasticities {
            top: default_sigma_top(),
            va1: default_sigma_va1(),
            va2: default_sigma_va2(),
            va2_overrides: BTreeMap::new(),
            output: default_sigma_output(),
            export: default_sigma_trade(),
            import: default_sigma_trade(),
            output_overrides: BTreeMap::new(),
            export_overrides: BTreeMap::new(),
            import_overrides: BTreeMap::new(),
        }
    }
}

impl Elasticities {
    pub fn sigma_output(&self, commodity: &str) -> f64 {
        *self.output_overrides.get(commodity).unwrap_or(&self.output)
    }
    pub fn sigma_export(&self, commodity: &str) -> f64 {
        *self.export_overrides.get(commodity).unwrap_or(&self.export)
    }
    pub fn sigma_import(&self, commodity: &str) -> f64 {
        *self.import_overrides.get(commodity).unwrap_or(&self.import)
    }
}

/// Linear-expenditure-system settings for consumption.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Les {
    /// Fraction of each benchmark consumption quantity pinned as
    /// subsistence for the agents listed below.
    #[serde(default = "default_subsistence_share")]
    pub subsistence_share: Share,
    /// Agents with a subsistence tier; all other consuming agents spend by
    /// fixed budget shares (subsistence zero).
    #[serde(default)]
    pub subsistence_agents: Vec<String>,
}

fn default_subsistence_share() -> f64 {
    0.1
}

impl Default for Les {
    fn default() -> Self {
        Les {
            subsistence_share: default_subsistence_share(),
            subsistence_agents: Vec::new(),
        }
    }
}

/// Macro closure choices.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Closure {
    /// Target level for the consumer price index, the numeraire.
    #[serde(default = "default_numeraire")]
    pub numeraire: f64,
    /// Agent whose outbound transfers are CPI-indexed amounts rather than
    /// income shares.
    pub government: String,
}

fn default_numeraire() -> f64 {
    1.0
}

/// Production-structure overrides.
#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct Production {
    /// Industries forced to a fixed-proportions top nest. Industries with
    /// zero intermediates fall back to fixed proportions automatically;
    /// zero value added is rejected at calibration.
    #[serde(default)]
    pub leontief: Vec<String>,
}

/// Factor account codes by economic role.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Factors {
    pub labor: String,
    pub capital: String,
    pub water: String,
    pub land: String,
    pub natural: String,
}

/// One water-using industry's linkage to the physical flow and rate tables.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WaterUser {
    /// Row of the water-flows file whose volume this industry shares.
    pub group: String,
    /// Row of the rates file giving this industry's intake price.
    pub rate: String,
}

/// Water synthesis settings.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Water {
    /// Crop industry to split into irrigated and rainfed parts.
    pub crop_industry: String,
    pub irrigated_code: String,
    pub rainfed_code: String,
    /// Share of crop output produced under irrigation.
    #[serde(default = "default_irrigated_share")]
    pub irrigated_share: Share,
    /// Import tax and margin rates as a multiple of the domestic rates.
    #[serde(default = "default_import_cost_factor")]
    pub import_cost_factor: Rate,
    /// Resource supply elasticity η_S used for land/resource payment shares.
    #[serde(default = "default_eta_supply")]
    pub eta_supply: f64,
    /// Water-using industries (post irrigation split; the rainfed industry
    /// is not a user).
    pub users: BTreeMap<String, WaterUser>,
}

fn default_irrigated_share() -> f64 {
    0.2
}
fn default_import_cost_factor() -> f64 {
    1.5
}
fn default_eta_supply() -> f64 {
    0.5
}

/// Which industry-specific resource row an industry receives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResourceKind {
    Land,
    Natural,
}

/// Tax account codes by role. Domestic and import commodity taxes sit in
/// separate accounts so their rates stay individually recoverable from the
/// SAM.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Taxes {
    /// Taxes on domestically consumed domestic output, per commodity.
    pub commodity: String,
    /// Import duties, per commodity.
    pub imports: String,
    /// Production taxes, per industry.
    pub industry: String,
}

/// Trade-and-transport margin settings.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Margins {
    /// The margin account; its outlay column gives the commodity
    /// composition of one margin unit.
    pub account: String,
}

/// Full model configuration.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub files: Files,
    #[serde(default)]
    pub elasticities: Elasticities,
    #[serde(default)]
    pub les: Les,
    pub closure: Closure,
    #[serde(default, alias = "sets-overrides")]
    pub production: Production,
    pub factors: Factors,
    pub taxes: Taxes,
    pub margins: Margins,
    pub water: Water,
    /// Industries receiving a land or natural-resource row.
    #[serde(default)]
    pub resources: BTreeMap<String, ResourceKind>,
    /// Targeted scenario ids (e.g. "A1") to shocked industry groups.
    #[serde(default)]
    pub scenarios: BTreeMap<String, Vec<String>>,
    /// Directory of the config file, for resolving relative paths.
    #[serde(skip)]
    base_dir: PathBuf,
}

impl ModelConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io(path.display().to_string(), e.to_string()))?;
        Self::from_toml_str(&text, path.parent().unwrap_or(Path::new(".")))
            .map_err(|e| match e {
                ConfigError::Parse(_, msg) => {
                    ConfigError::Parse(path.display().to_string(), msg)
                }
                other => other,
            })
    }

    /// Parses a config from TOML text, resolving relative `[files]` paths
    /// against `base_dir`.
    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self, ConfigError> {
        let mut cfg: ModelConfig = toml::from_str(text)
            .map_err(|e| ConfigError::Parse("<config>".to_string(), e.to_string()))?;
        cfg.base_dir = base_dir.to_path_buf();
        cfg.check()?;
        Ok(cfg)
    }

    fn check(&self) -> Result<(), ConfigError> {
        let s = self.water.irrigated_share;
        if !(s > 0.0 && s < 1.0) {
            return Err(ConfigError::Invalid(format!(
                "irrigated_share must lie strictly inside (0,1), got {s}"
            )));
        }
        if self.water.import_cost_factor < 0.0 {
            return Err(ConfigError::Invalid(
                "import_cost_factor must be non-negative".into(),
            ));
        }
        if self.water.eta_supply < 0.0 {
            return Err(ConfigError::Invalid(
                "eta_supply must be non-negative".into(),
            ));
        }
        let scalars = [
            self.elasticities.top,
            self.elasticities.va1,
            self.elasticities.va2,
            self.elasticities.output,
            self.elasticities.export,
            self.elasticities.import,
        ];
        let overrides = self
            .elasticities
            .va2_overrides
            .values()
            .chain(self.elasticities.output_overrides.values())
            .chain(self.elasticities.export_overrides.values())
            .chain(self.elasticities.import_overrides.values());
        for sigma in scalars.iter().chain(overrides) {
            if *sigma <= 0.0 {
                return Err(ConfigError::Invalid(format!(
                    "elasticities must be positive, got {sigma}"
                )));
            }
        }
        if !(self.les.subsistence_share >= 0.0 && self.les.subsistence_share < 1.0) {
            return Err(ConfigError::Invalid(format!(
                "subsistence_share must lie in [0,1), got {}",
                self.les.subsistence_share
            )));
        }
        Ok(())
    }

    /// Resolves a `[files]` path against the config directory.
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn base_dir(&self) -> &Path {
        &self.base_dir
    }
}
