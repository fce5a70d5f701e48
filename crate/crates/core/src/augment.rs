//! Synthesis of factor accounts missing from source data.
//!
//! Source SAMs carry labor and capital rows only. This module carves out of
//! the capital payments three further primary factors: water intake (priced
//! from physical volumes and per-sector intake rates), land, and other
//! natural resources (sized by an industry-specific-factor share formula).
//! It also separates import taxes and margins from the folded import cost
//! and splits crop production into irrigated and rainfed industries.
//!
//! Pipeline order is fixed: [`split_irrigation`] → [`allocate_water`] →
//! [`water_payments`] → [`resource_rows`] → [`split_import_costs`]. Every
//! step preserves the SAM grand total exactly.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use nalgebra::DMatrix;
use thiserror::Error;

use crate::accounts::{Account, MacroSet, Sam, SamError};
use crate::config::{ModelConfig, ResourceKind, WaterUser};
use crate::tol::ESTIMATED_RATE_TOL;
use crate::{Money, Rate, Share, Volume};

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("cannot read {0}: {1}")]
    Io(String, String),
    #[error("{file}: malformed record: {detail}")]
    Malformed { file: String, detail: String },
    #[error("water rate for {sector} must be positive, got {rate}")]
    RateNotPositive { sector: String, rate: Rate },
    #[error(
        "estimated rate for {sector} is {rate} but the mean of the measured rates is {mean}"
    )]
    EstimatedMismatch { sector: String, rate: Rate, mean: Rate },
    #[error("no rate is defined for sector {0}")]
    UnknownRateSector(String),
    #[error("water user {industry} references flow group {group}, which has no volume entry")]
    UnknownGroup { industry: String, group: String },
    #[error("flow group {0} carries water but no configured user industry")]
    NoUsersForGroup(String),
    #[error("flow group {0} carries water but its user industries all have zero output")]
    ZeroOutputs(String),
    #[error("water volume for group {group} is negative: {volume}")]
    NegativeVolume { group: String, volume: Volume },
    #[error(
        "capital payment of {industry} ({capital}) cannot absorb a {factor} payment of {payment}"
    )]
    CapitalTooSmall {
        industry: String,
        factor: String,
        capital: Money,
        payment: Money,
    },
    #[error("cannot distribute {factor} income: the capital account pays out nothing")]
    NoDistribution { factor: String },
    #[error("irrigated share must lie strictly inside (0,1), got {0}")]
    ShareOutOfRange(Share),
    #[error("import cost decomposition for {commodity} has a negative component")]
    NegativeImportDecomposition { commodity: String },
    #[error("resource share inputs invalid: {0}")]
    BadResourceInputs(String),
    #[error("expected exactly one rest-of-world account, found {0}")]
    RowAccountCount(usize),
    #[error(transparent)]
    Sam(#[from] SamError),
}

// ── Input tables ─────────────────────────────────────────────────────────────

/// Water intake rates per rated sector, CAD per cubic meter.
#[derive(Debug, Clone)]
pub struct WaterRates {
    rates: BTreeMap<String, Rate>,
    estimated: BTreeSet<String>,
}

impl WaterRates {
    pub fn new(rates: BTreeMap<String, Rate>, estimated: BTreeSet<String>) -> Self {
        WaterRates { rates, estimated }
    }

    /// Loads a rates file with columns `sector, rate, estimated` (0/1).
    pub fn load(path: &Path) -> Result<Self, AugmentError> {
        let file = path.display().to_string();
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| AugmentError::Io(file.clone(), e.to_string()))?;
        let mut rates = BTreeMap::new();
        let mut estimated = BTreeSet::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| AugmentError::Io(file.clone(), e.to_string()))?;
            if rec.len() != 3 {
                return Err(AugmentError::Malformed {
                    file,
                    detail: format!("expected 3 columns, got {}", rec.len()),
                });
            }
            let sector = rec[0].to_string();
            let rate: Rate = rec[1].parse().map_err(|_| AugmentError::Malformed {
                file: file.clone(),
                detail: format!("bad rate for {sector}: {}", &rec[1]),
            })?;
            let flag = &rec[2];
            if flag == "1" {
                estimated.insert(sector.clone());
            } else if flag != "0" {
                return Err(AugmentError::Malformed {
                    file: file.clone(),
                    detail: format!("estimated flag for {sector} must be 0 or 1, got {flag}"),
                });
            }
            rates.insert(sector, rate);
        }
        let table = WaterRates { rates, estimated };
        table.validate()?;
        Ok(table)
    }

    /// All rates positive; every estimated rate equals the mean of the
    /// measured ones (within the tolerance absorbing published rounding).
    pub fn validate(&self) -> Result<(), AugmentError> {
        for (sector, &rate) in &self.rates {
            if rate <= 0.0 {
                return Err(AugmentError::RateNotPositive {
                    sector: sector.clone(),
                    rate,
                });
            }
        }
        let measured: Vec<Rate> = self
            .rates
            .iter()
            .filter(|(s, _)| !self.estimated.contains(*s))
            .map(|(_, &r)| r)
            .collect();
        if !measured.is_empty() {
            let mean = measured.iter().sum::<Rate>() / measured.len() as f64;
            for sector in &self.estimated {
                let rate = self.rates[sector];
                if (rate - mean).abs() > ESTIMATED_RATE_TOL {
                    return Err(AugmentError::EstimatedMismatch {
                        sector: sector.clone(),
                        rate,
                        mean,
                    });
                }
            }
        }
        Ok(())
    }

    pub fn rate(&self, sector: &str) -> Result<Rate, AugmentError> {
        self.rates
            .get(sector)
            .copied()
            .ok_or_else(|| AugmentError::UnknownRateSector(sector.to_string()))
    }

    /// A copy with every rate multiplied by `factor`, for valuation
    /// sensitivity runs. Scaling preserves the estimated-rate consistency
    /// because the mean scales with its terms.
    pub fn scale(&self, factor: f64) -> WaterRates {
        WaterRates {
            rates: self
                .rates
                .iter()
                .map(|(k, v)| (k.clone(), v * factor))
                .collect(),
            estimated: self.estimated.clone(),
        }
    }
}

/// Physical water intake per flow group, in the volume unit matching the
/// SAM's money unit (so that rate × volume lands in SAM money).
#[derive(Debug, Clone)]
pub struct WaterFlows {
    volumes: BTreeMap<String, Volume>,
}

impl WaterFlows {
    pub fn new(volumes: BTreeMap<String, Volume>) -> Self {
        WaterFlows { volumes }
    }

    /// Loads a flows file with columns `industry_code, cubic_meters`.
    pub fn load(path: &Path) -> Result<Self, AugmentError> {
        let file = path.display().to_string();
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| AugmentError::Io(file.clone(), e.to_string()))?;
        let mut volumes = BTreeMap::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| AugmentError::Io(file.clone(), e.to_string()))?;
            if rec.len() != 2 {
                return Err(AugmentError::Malformed {
                    file,
                    detail: format!("expected 2 columns, got {}", rec.len()),
                });
            }
            let group = rec[0].to_string();
            let volume: Volume = rec[1].parse().map_err(|_| AugmentError::Malformed {
                file: file.clone(),
                detail: format!("bad volume for {group}: {}", &rec[1]),
            })?;
            if volume < 0.0 {
                return Err(AugmentError::NegativeVolume { group, volume });
            }
            volumes.insert(group, volume);
        }
        Ok(WaterFlows { volumes })
    }

    pub fn volumes(&self) -> &BTreeMap<String, Volume> {
        &self.volumes
    }
}

// ── Irrigation split ─────────────────────────────────────────────────────────

/// Splits the crop industry into irrigated and rainfed industries.
///
/// Every input and output cell splits by the irrigated output share; the
/// intra-industry cell splits as the outer product of both marginals. A
/// water factor row, if one already exists, routes entirely to the
/// irrigated industry. In the canonical pipeline the split runs before
/// water synthesis, so that exception is only exercised when re-splitting
/// an already augmented SAM.
pub fn split_irrigation(sam: &Sam, cfg: &ModelConfig) -> Result<Sam, AugmentError> {
    split_irrigation_with_share(sam, cfg, cfg.water.irrigated_share)
}

/// [`split_irrigation`] with an explicit share, for sensitivity sweeps.
pub fn split_irrigation_with_share(
    sam: &Sam,
    cfg: &ModelConfig,
    share: Share,
) -> Result<Sam, AugmentError> {
    if !(share > 0.0 && share < 1.0) {
        return Err(AugmentError::ShareOutOfRange(share));
    }
    let crop = sam.account(&cfg.water.crop_industry)?;
    let water_row = sam.account_index(&cfg.factors.water);
    let crop_label = sam.accounts()[crop].label.clone();

    let mut accounts = Vec::with_capacity(sam.len() + 1);
    // Old index → list of (new position, weight) pairs.
    let mut spread: Vec<Vec<(usize, f64)>> = Vec::with_capacity(sam.len());
    for (i, a) in sam.accounts().iter().enumerate() {
        if i == crop {
            let irr = accounts.len();
            accounts.push(Account {
                code: cfg.water.irrigated_code.clone(),
                label: format!("{crop_label} (irrigated)"),
                macro_set: a.macro_set,
            });
            let rain = accounts.len();
            accounts.push(Account {
                code: cfg.water.rainfed_code.clone(),
                label: format!("{crop_label} (rainfed)"),
                macro_set: a.macro_set,
            });
            spread.push(vec![(irr, share), (rain, 1.0 - share)]);
        } else {
            spread.push(vec![(accounts.len(), 1.0)]);
            accounts.push(a.clone());
        }
    }
    let n = accounts.len();
    let mut flows = DMatrix::zeros(n, n);
    for r in 0..sam.len() {
        for c in 0..sam.len() {
            let v = sam.flow_at(r, c);
            if v == 0.0 {
                continue;
            }
            if Some(r) == water_row && c == crop {
                let irr = spread[c][0].0;
                flows[(spread[r][0].0, irr)] += v;
                continue;
            }
            for &(nr, wr) in &spread[r] {
                for &(nc, wc) in &spread[c] {
                    flows[(nr, nc)] += v * wr * wc;
                }
            }
        }
    }
    let mut out = Sam::new(accounts, flows)?;
    out.set_year(sam.year());
    Ok(out)
}

// ── Water allocation and payment carving ─────────────────────────────────────

/// Distributes each flow group's volume over its user industries in
/// proportion to their output.
pub fn allocate_water(
    flows: &WaterFlows,
    users: &BTreeMap<String, WaterUser>,
    outputs: &BTreeMap<String, Money>,
) -> Result<BTreeMap<String, Volume>, AugmentError> {
    let mut members: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for (industry, user) in users {
        if !flows.volumes.contains_key(&user.group) {
            return Err(AugmentError::UnknownGroup {
                industry: industry.clone(),
                group: user.group.clone(),
            });
        }
        members.entry(&user.group).or_default().push(industry);
    }
    let mut out = BTreeMap::new();
    for (group, &volume) in &flows.volumes {
        let Some(industries) = members.get(group.as_str()) else {
            if volume > 0.0 {
                return Err(AugmentError::NoUsersForGroup(group.clone()));
            }
            continue;
        };
        let total: Money = industries.iter().map(|i| outputs.get(*i).copied().unwrap_or(0.0)).sum();
        if volume > 0.0 && total <= 0.0 {
            return Err(AugmentError::ZeroOutputs(group.clone()));
        }
        for industry in industries {
            let output = outputs.get(*industry).copied().unwrap_or(0.0);
            let v = if total > 0.0 { volume * output / total } else { 0.0 };
            out.insert((*industry).to_string(), v);
        }
    }
    Ok(out)
}

/// Moves `amount` from the capital row to the `target` factor row within
/// one industry column, refusing rather than clipping when the capital cell
/// cannot absorb it (clipping would unbalance the SAM).
fn carve_cell(
    sam: &mut Sam,
    capital: usize,
    target: usize,
    industry: usize,
    amount: Money,
    factor_name: &str,
) -> Result<(), AugmentError> {
    if amount == 0.0 {
        return Ok(());
    }
    let available = sam.flow_at(capital, industry);
    if amount > available {
        return Err(AugmentError::CapitalTooSmall {
            industry: sam.accounts()[industry].code.clone(),
            factor: factor_name.to_string(),
            capital: available,
            payment: amount,
        });
    }
    sam.add_flow_at(capital, industry, -amount);
    sam.add_flow_at(target, industry, amount);
    Ok(())
}

/// Moves `total` of the capital account's outlays to the target factor's
/// column, proportionally to the existing capital distribution, so the new
/// factor's income reaches the same recipients in the same shares.
fn carve_distribution(
    sam: &mut Sam,
    capital: usize,
    target: usize,
    total: Money,
    factor_name: &str,
) -> Result<(), AugmentError> {
    if total == 0.0 {
        return Ok(());
    }
    let col_sum = sam.col_sum(capital);
    if col_sum <= 0.0 {
        return Err(AugmentError::NoDistribution {
            factor: factor_name.to_string(),
        });
    }
    let n = sam.len();
    for r in 0..n {
        let v = sam.flow_at(r, capital);
        if v > 0.0 {
            let moved = total * v / col_sum;
            sam.add_flow_at(r, capital, -moved);
            sam.add_flow_at(r, target, moved);
        }
    }
    Ok(())
}

fn ensure_factor(sam: &mut Sam, code: &str, label: &str) -> Result<usize, AugmentError> {
    match sam.account_index(code) {
        Some(i) => Ok(i),
        None => Ok(sam.insert_account(Account {
            code: code.to_string(),
            label: label.to_string(),
            macro_set: MacroSet::Factor,
        })?),
    }
}

/// Prices the allocated volumes and carves the payments from capital into a
/// water factor row, with the income distribution carved alongside.
/// Returns the augmented SAM and the payment per industry.
pub fn water_payments(
    sam: &Sam,
    volumes: &BTreeMap<String, Volume>,
    rates: &WaterRates,
    cfg: &ModelConfig,
) -> Result<(Sam, BTreeMap<String, Money>), AugmentError> {
    let mut out = sam.clone();
    let capital = out.account(&cfg.factors.capital)?;
    let water = ensure_factor(&mut out, &cfg.factors.water, "Water intake")?;
    let capital = if water <= capital { capital + 1 } else { capital };

    let mut payments = BTreeMap::new();
    let mut total = 0.0;
    for (industry, &volume) in volumes {
        let user = cfg.water.users.get(industry).ok_or_else(|| {
            AugmentError::UnknownRateSector(format!("{industry} is not a configured water user"))
        })?;
        let rate = rates.rate(&user.rate)?;
        let payment = rate * volume;
        let idx = out.account(industry)?;
        carve_cell(&mut out, capital, water, idx, payment, "water")?;
        payments.insert(industry.clone(), payment);
        total += payment;
    }
    carve_distribution(&mut out, capital, water, total, "water")?;
    Ok((out, payments))
}

// ── Industry-specific resource rows ──────────────────────────────────────────

/// Inputs to the industry-specific-factor share formula.
#[derive(Debug, Clone, Copy)]
pub struct ResourceShareInputs {
    /// Value added over industry revenue.
    pub theta_va: Share,
    /// Substitution elasticity of the value-added nest.
    pub sigma_va: f64,
    /// Supply elasticity of the resource factor.
    pub eta_supply: f64,
}

/// Share of industry revenue paid to an industry-specific resource:
/// θ_R = θ_VA σ_VA / (θ_VA η_S + σ_VA).
pub fn resource_share(inp: ResourceShareInputs) -> Result<Share, AugmentError> {
    if !(inp.theta_va > 0.0 && inp.theta_va <= 1.0) {
        return Err(AugmentError::BadResourceInputs(format!(
            "theta_va must lie in (0,1], got {}",
            inp.theta_va
        )));
    }
    if inp.sigma_va <= 0.0 {
        return Err(AugmentError::BadResourceInputs(format!(
            "sigma_va must be positive, got {}",
            inp.sigma_va
        )));
    }
    if inp.eta_supply < 0.0 {
        return Err(AugmentError::BadResourceInputs(format!(
            "eta_supply must be non-negative, got {}",
            inp.eta_supply
        )));
    }
    let denom = inp.theta_va * inp.eta_supply + inp.sigma_va;
    if denom <= 0.0 {
        return Err(AugmentError::BadResourceInputs(
            "share denominator must be positive".into(),
        ));
    }
    Ok(inp.theta_va * inp.sigma_va / denom)
}

/// Resource payments carved out per industry, keyed by industry code.
pub type ResourceCarve = BTreeMap<String, (ResourceKind, Money)>;

/// Synthesizes land and other-natural-resource rows for the configured
/// industries, carving each payment from capital.
pub fn resource_rows(sam: &Sam, cfg: &ModelConfig) -> Result<(Sam, ResourceCarve), AugmentError> {
    let mut out = sam.clone();
    let factor_rows: Vec<usize> = out.macro_members(MacroSet::Factor);
    // Value-added shares are measured before inserting the new rows.
    let mut theta_va: BTreeMap<String, Share> = BTreeMap::new();
    for industry in cfg.resources.keys() {
        let idx = out.account(industry)?;
        let revenue = out.row_sum(idx);
        let va: Money = factor_rows.iter().map(|&f| out.flow_at(f, idx)).sum();
        if revenue <= 0.0 || va <= 0.0 {
            return Err(AugmentError::BadResourceInputs(format!(
                "industry {industry} has no revenue or no value added"
            )));
        }
        theta_va.insert(industry.clone(), va / revenue);
    }

    let mut payments = BTreeMap::new();
    let mut totals: BTreeMap<ResourceKind, Money> = BTreeMap::new();
    for kind in [ResourceKind::Land, ResourceKind::Natural] {
        let (code, label) = match kind {
            ResourceKind::Land => (&cfg.factors.land, "Land"),
            ResourceKind::Natural => (&cfg.factors.natural, "Other natural resources"),
        };
        if !cfg.resources.values().any(|&k| k == kind) {
            continue;
        }
        let target = ensure_factor(&mut out, code, label)?;
        let capital = out.account(&cfg.factors.capital)?;
        for (industry, &k) in &cfg.resources {
            if k != kind {
                continue;
            }
            let idx = out.account(industry)?;
            let revenue = out.row_sum(idx);
            let share = resource_share(ResourceShareInputs {
                theta_va: theta_va[industry],
                sigma_va: cfg.elasticities.va1,
                eta_supply: cfg.water.eta_supply,
            })?;
            let payment = share * revenue;
            let name = match kind {
                ResourceKind::Land => "land",
                ResourceKind::Natural => "natural resources",
            };
            carve_cell(&mut out, capital, target, idx, payment, name)?;
            payments.insert(industry.clone(), (kind, payment));
            *totals.entry(kind).or_insert(0.0) += payment;
        }
        let name = match kind {
            ResourceKind::Land => "land",
            ResourceKind::Natural => "natural resources",
        };
        let capital = out.account(&cfg.factors.capital)?;
        carve_distribution(&mut out, capital, target, totals[&kind], name)?;
    }
    Ok((out, payments))
}

// ── Import tax and margin separation ─────────────────────────────────────────

/// Separates import taxes and margins from the folded import cost, setting
/// each import rate to `factor` times the corresponding domestic rate.
///
/// For each commodity, the domestic tax and margin rates are recovered from
/// the SAM (tax or margin flow over domestic use value at basic prices);
/// the folded import cell `M₀ = B(1 + f·td + f·μd)` is then decomposed and
/// the tax and margin parts move to the import-tax and margin rows.
pub fn split_import_costs(sam: &Sam, cfg: &ModelConfig) -> Result<Sam, AugmentError> {
    let factor = cfg.water.import_cost_factor;
    let mut out = sam.clone();
    let rows = out.macro_members(MacroSet::Row);
    if rows.len() != 1 {
        return Err(AugmentError::RowAccountCount(rows.len()));
    }
    let row = rows[0];
    let t_com = out.account(&cfg.taxes.commodity)?;
    let t_imp = out.account(&cfg.taxes.imports)?;
    let margin = out.account(&cfg.margins.account)?;
    let industries = out.macro_members(MacroSet::Industry);

    for c in out.macro_members(MacroSet::Commodity) {
        let imports = out.flow_at(row, c);
        if imports == 0.0 {
            continue;
        }
        let production: Money = industries.iter().map(|&i| out.flow_at(i, c)).sum();
        let exports = out.flow_at(c, row);
        let domestic_value = production - exports;
        let (td, mu) = if domestic_value > 0.0 {
            (
                out.flow_at(t_com, c) / domestic_value,
                out.flow_at(margin, c) / domestic_value,
            )
        } else {
            (0.0, 0.0)
        };
        let denom = 1.0 + factor * (td + mu);
        let code = || out.accounts()[c].code.clone();
        if denom <= 0.0 {
            return Err(AugmentError::NegativeImportDecomposition { commodity: code() });
        }
        let basic = imports / denom;
        let tax_part = factor * td * basic;
        let margin_part = factor * mu * basic;
        if basic < 0.0 || tax_part < 0.0 || margin_part < 0.0 {
            return Err(AugmentError::NegativeImportDecomposition { commodity: code() });
        }
        out.set_flow_at(row, c, basic);
        out.add_flow_at(t_imp, c, tax_part);
        out.add_flow_at(margin, c, margin_part);
    }
    Ok(out)
}

// ── Pipeline ─────────────────────────────────────────────────────────────────

/// What the augmentation did, for the pipeline report file.
#[derive(Debug, Clone, Default)]
pub struct AugmentReport {
    /// Allocated intake volume per water-using industry.
    pub volumes: BTreeMap<String, Volume>,
    /// Water payment carved from capital, per industry.
    pub water_payments: BTreeMap<String, Money>,
    /// Land or resource payment carved from capital, per industry.
    pub resource_payments: BTreeMap<String, (ResourceKind, Money)>,
}

/// Runs the full augmentation in its fixed order on a raw SAM.
///
/// `rate_multiplier` scales every water rate, for the valuation
/// sensitivity; pass 1.0 for the baseline.
pub fn run_pipeline(
    raw: &Sam,
    flows: &WaterFlows,
    rates: &WaterRates,
    cfg: &ModelConfig,
    irrigated_share: Share,
    rate_multiplier: f64,
) -> Result<(Sam, AugmentReport), AugmentError> {
    let split = split_irrigation_with_share(raw, cfg, irrigated_share)?;
    let outputs: BTreeMap<String, Money> = cfg
        .water
        .users
        .keys()
        .filter_map(|code| {
            split
                .account_index(code)
                .map(|i| (code.clone(), split.row_sum(i)))
        })
        .collect();
    let volumes = allocate_water(flows, &cfg.water.users, &outputs)?;
    let scaled = WaterRates {
        rates: rates
            .rates
            .iter()
            .map(|(s, &r)| (s.clone(), r * rate_multiplier))
            .collect(),
        estimated: rates.estimated.clone(),
    };
    let (with_water, water_paid) = water_payments(&split, &volumes, &scaled, cfg)?;
    let (with_resources, resource_paid) = resource_rows(&with_water, cfg)?;
    let finished = split_import_costs(&with_resources, cfg)?;
    Ok((
        finished,
        AugmentReport {
            volumes,
            water_payments: water_paid,
            resource_payments: resource_paid,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn rates_fixture() -> WaterRates {
        let mut rates = BTreeMap::new();
        rates.insert("power".to_string(), 0.00581);
        rates.insert("mining".to_string(), 0.05106);
        rates.insert("manufacturing".to_string(), 0.16737);
        rates.insert("agriculture".to_string(), 0.07475);
        let mut estimated = BTreeSet::new();
        estimated.insert("agriculture".to_string());
        WaterRates::new(rates, estimated)
    }

    #[test]
    fn estimated_rate_is_the_mean_of_measured_rates() {
        let table = rates_fixture();
        assert!(table.validate().is_ok());
        let mean: f64 = (0.00581 + 0.05106 + 0.16737) / 3.0;
        assert!((mean - 0.0747466666).abs() < 1e-9);
        assert!((table.rate("agriculture").unwrap() - mean).abs() <= ESTIMATED_RATE_TOL);
    }

    #[test]
    fn estimated_rate_far_from_mean_is_rejected() {
        let mut rates = BTreeMap::new();
        rates.insert("power".to_string(), 0.00581);
        rates.insert("mining".to_string(), 0.05106);
        rates.insert("manufacturing".to_string(), 0.16737);
        rates.insert("agriculture".to_string(), 0.2);
        let mut estimated = BTreeSet::new();
        estimated.insert("agriculture".to_string());
        let table = WaterRates::new(rates, estimated);
        assert!(matches!(
            table.validate(),
            Err(AugmentError::EstimatedMismatch { .. })
        ));
    }

    #[test]
    fn nonpositive_rate_is_rejected() {
        let mut rates = BTreeMap::new();
        rates.insert("power".to_string(), 0.0);
        let table = WaterRates::new(rates, BTreeSet::new());
        assert!(matches!(
            table.validate(),
            Err(AugmentError::RateNotPositive { .. })
        ));
    }

    #[test]
    fn rates_file_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rates.csv");
        let mut f = std::fs::File::create(&path).unwrap();
        writeln!(f, "sector,rate,estimated").unwrap();
        writeln!(f, "power,0.00581,0").unwrap();
        writeln!(f, "mining,0.05106,0").unwrap();
        writeln!(f, "manufacturing,0.16737,0").unwrap();
        writeln!(f, "agriculture,0.07475,1").unwrap();
        let table = WaterRates::load(&path).unwrap();
        assert_eq!(table.rate("mining").unwrap(), 0.05106);
    }

    fn users(pairs: &[(&str, &str, &str)]) -> BTreeMap<String, WaterUser> {
        pairs
            .iter()
            .map(|(ind, group, rate)| {
                (
                    ind.to_string(),
                    WaterUser {
                        group: group.to_string(),
                        rate: rate.to_string(),
                    },
                )
            })
            .collect()
    }

    fn money_map(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    #[test]
    fn allocation_is_proportional_to_output() {
        let flows = WaterFlows::new(money_map(&[("agr", 100.0)]));
        let u = users(&[("cri", "agr", "agriculture"), ("lvs", "agr", "agriculture")]);
        let outputs = money_map(&[("cri", 30.0), ("lvs", 70.0)]);
        let got = allocate_water(&flows, &u, &outputs).unwrap();
        assert_eq!(got["cri"], 30.0);
        assert_eq!(got["lvs"], 70.0);
    }

    #[test]
    fn zero_volume_allocates_zeros() {
        let flows = WaterFlows::new(money_map(&[("agr", 0.0)]));
        let u = users(&[("cri", "agr", "agriculture")]);
        let outputs = money_map(&[("cri", 30.0)]);
        let got = allocate_water(&flows, &u, &outputs).unwrap();
        assert_eq!(got["cri"], 0.0);
    }

    #[test]
    fn three_way_share_allocation() {
        let flows = WaterFlows::new(money_map(&[("mfg", 10.0)]));
        let u = users(&[
            ("ppr", "mfg", "manufacturing"),
            ("met", "mfg", "manufacturing"),
            ("fod", "mfg", "manufacturing"),
        ]);
        let outputs = money_map(&[("ppr", 1.0), ("met", 1.0), ("fod", 2.0)]);
        let got = allocate_water(&flows, &u, &outputs).unwrap();
        assert_eq!(got["ppr"], 2.5);
        assert_eq!(got["met"], 2.5);
        assert_eq!(got["fod"], 5.0);
    }

    #[test]
    fn positive_volume_with_no_output_is_an_error() {
        let flows = WaterFlows::new(money_map(&[("agr", 5.0)]));
        let u = users(&[("cri", "agr", "agriculture")]);
        let outputs = money_map(&[("cri", 0.0)]);
        assert!(matches!(
            allocate_water(&flows, &u, &outputs),
            Err(AugmentError::ZeroOutputs(_))
        ));
    }

    #[test]
    fn orphan_volume_group_is_an_error() {
        let flows = WaterFlows::new(money_map(&[("agr", 5.0), ("mfg", 1.0)]));
        let u = users(&[("cri", "agr", "agriculture")]);
        let outputs = money_map(&[("cri", 10.0)]);
        assert!(matches!(
            allocate_water(&flows, &u, &outputs),
            Err(AugmentError::NoUsersForGroup(g)) if g == "mfg"
        ));
    }

    #[test]
    fn manufacturing_rate_prices_one_hundred_units() {
        let payment = rates_fixture().rate("manufacturing").unwrap() * 100.0;
        assert!((payment - 16.737).abs() < 1e-12);
    }

    #[test]
    fn resource_share_formula_hand_case() {
        let got = resource_share(ResourceShareInputs {
            theta_va: 0.4,
            sigma_va: 0.6,
            eta_supply: 0.5,
        })
        .unwrap();
        assert!((got - 0.3).abs() < 1e-15);
    }

    #[test]
    fn resource_share_zero_supply_elasticity_returns_theta_va() {
        let got = resource_share(ResourceShareInputs {
            theta_va: 0.37,
            sigma_va: 0.6,
            eta_supply: 0.0,
        })
        .unwrap();
        assert!((got - 0.37).abs() < 1e-15);
    }

    #[test]
    fn resource_share_vanishes_for_huge_supply_elasticity() {
        let got = resource_share(ResourceShareInputs {
            theta_va: 0.4,
            sigma_va: 0.6,
            eta_supply: 1e6,
        })
        .unwrap();
        assert!(got < 1e-5);
    }

    // A small SAM exercising the carves: one industry, one commodity, two
    // factors, one agent, plus tax/margin/row accounts for the import split.
    fn carve_config(dir: &Path) -> ModelConfig {
        let text = r#"
[files]
sam = "sam.csv"
accounts = "accounts.csv"
water_flows = "flows.csv"
water_rates = "rates.csv"

[closure]
government = "gov"

[factors]
labor = "f_lab"
capital = "f_cap"
water = "f_wat"
land = "f_lnd"
natural = "f_nrs"

[taxes]
commodity = "t_com"
imports = "t_imp"
industry = "t_ind"

[margins]
account = "marg"

[water]
crop_industry = "crp"
irrigated_code = "cri"
rainfed_code = "crr"

[water.users.crp]
group = "agr"
rate = "agriculture"

[resources]
crp = "land"
"#;
        let path = dir.join("model.toml");
        std::fs::write(&path, text).unwrap();
        ModelConfig::load(&path).unwrap()
    }

    fn account(code: &str, m: MacroSet) -> Account {
        Account {
            code: code.to_string(),
            label: code.to_string(),
            macro_set: m,
        }
    }

    /// Crop industry with labor 20 and capital 80; capital income fully to
    /// one agent; output 100 sold as one commodity to that agent.
    fn tiny_sam() -> Sam {
        let accounts = vec![
            account("c_crops", MacroSet::Commodity),
            account("crp", MacroSet::Industry),
            account("f_lab", MacroSet::Factor),
            account("f_cap", MacroSet::Factor),
            account("hh", MacroSet::Agent),
        ];
        let mut flows = DMatrix::zeros(5, 5);
        let at = |code: &str| match code {
            "c_crops" => 0,
            "crp" => 1,
            "f_lab" => 2,
            "f_cap" => 3,
            _ => 4,
        };
        let mut pay = |payer: &str, payee: &str, v: f64| {
            flows[(at(payee), at(payer))] += v;
        };
        pay("c_crops", "crp", 100.0); // commodity buys domestic production
        pay("crp", "f_lab", 20.0);
        pay("crp", "f_cap", 80.0);
        pay("f_lab", "hh", 20.0);
        pay("f_cap", "hh", 80.0);
        pay("hh", "c_crops", 100.0);
        Sam::new(accounts, flows).unwrap()
    }

    #[test]
    fn water_payment_carves_capital_cell_and_distribution() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = carve_config(dir.path());
        let sam = tiny_sam();
        let volumes = money_map(&[("crp", 100.0)]);
        let (out, payments) = water_payments(&sam, &volumes, &rates_fixture(), &cfg).unwrap();
        let expected = 0.07475 * 100.0;
        assert!((payments["crp"] - expected).abs() < 1e-12);
        let cap = out.account("f_cap").unwrap();
        let wat = out.account("f_wat").unwrap();
        let crp = out.account("crp").unwrap();
        let hh = out.account("hh").unwrap();
        assert!((out.flow_at(cap, crp) - (80.0 - expected)).abs() < 1e-12);
        assert!((out.flow_at(wat, crp) - expected).abs() < 1e-12);
        assert!((out.flow_at(hh, wat) - expected).abs() < 1e-12);
        assert!((out.grand_total() - sam.grand_total()).abs() < 1e-9);
        assert!(out.validate().is_empty());
    }

    #[test]
    fn capital_and_water_rows_sum_back_to_original_capital() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = carve_config(dir.path());
        let sam = tiny_sam();
        let volumes = money_map(&[("crp", 500.0)]);
        let (out, _) = water_payments(&sam, &volumes, &rates_fixture(), &cfg).unwrap();
        let cap = out.account("f_cap").unwrap();
        let wat = out.account("f_wat").unwrap();
        let crp = out.account("crp").unwrap();
        assert!((out.flow_at(cap, crp) + out.flow_at(wat, crp) - 80.0).abs() < 1e-12);
    }

    #[test]
    fn oversized_water_payment_is_refused() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = carve_config(dir.path());
        let sam = tiny_sam();
        // 1200 volume units at the agriculture rate ≈ 89.7 > capital 80.
        let volumes = money_map(&[("crp", 1200.0)]);
        assert!(matches!(
            water_payments(&sam, &volumes, &rates_fixture(), &cfg),
            Err(AugmentError::CapitalTooSmall { .. })
        ));
    }

    #[test]
    fn resource_row_uses_hand_checked_share() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = carve_config(dir.path());
        let sam = tiny_sam();
        // theta_va = 100/100 = 1.0; share = 1.0*0.6/(1.0*0.5 + 0.6) = 6/11.
        let (out, payments) = resource_rows(&sam, &cfg).unwrap();
        let expected = 100.0 * 0.6 / 1.1;
        let (kind, paid) = payments["crp"];
        assert_eq!(kind, ResourceKind::Land);
        assert!((paid - expected).abs() < 1e-9);
        let lnd = out.account("f_lnd").unwrap();
        let crp = out.account("crp").unwrap();
        assert!((out.flow_at(lnd, crp) - expected).abs() < 1e-9);
        assert!(out.validate().is_empty());
        assert!((out.grand_total() - sam.grand_total()).abs() < 1e-9);
    }

    #[test]
    fn irrigation_split_spec_case() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = carve_config(dir.path());
        let sam = tiny_sam();
        let out = split_irrigation(&sam, &cfg).unwrap();
        let cri = out.account("cri").unwrap();
        let crr = out.account("crr").unwrap();
        assert!((out.row_sum(cri) - 20.0).abs() < 1e-12);
        assert!((out.row_sum(crr) - 80.0).abs() < 1e-12);
        let lab = out.account("f_lab").unwrap();
        assert!((out.flow_at(lab, cri) - 4.0).abs() < 1e-12);
        assert!((out.flow_at(lab, crr) - 16.0).abs() < 1e-12);
        assert!((out.grand_total() - sam.grand_total()).abs() < 1e-9);
        assert!(out.validate().is_empty());
    }

    #[test]
    fn irrigation_split_routes_existing_water_row_to_irrigated() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = carve_config(dir.path());
        let sam = tiny_sam();
        let volumes = money_map(&[("crp", 100.0)]);
        let (with_water, _) = water_payments(&sam, &volumes, &rates_fixture(), &cfg).unwrap();
        let out = split_irrigation(&with_water, &cfg).unwrap();
        let wat = out.account("f_wat").unwrap();
        let cri = out.account("cri").unwrap();
        let crr = out.account("crr").unwrap();
        assert!((out.flow_at(wat, cri) - 7.475).abs() < 1e-12);
        assert_eq!(out.flow_at(wat, crr), 0.0);
        assert!((out.grand_total() - with_water.grand_total()).abs() < 1e-9);
    }

    #[test]
    fn irrigation_split_even_share_is_symmetric() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = carve_config(dir.path());
        let sam = tiny_sam();
        let out = split_irrigation_with_share(&sam, &cfg, 0.5).unwrap();
        let cri = out.account("cri").unwrap();
        let crr = out.account("crr").unwrap();
        for c in 0..out.len() {
            if c == cri || c == crr {
                continue;
            }
            assert_eq!(out.flow_at(cri, c), out.flow_at(crr, c));
            assert_eq!(out.flow_at(c, cri), out.flow_at(c, crr));
        }
    }

    #[test]
    fn irrigation_split_rejects_degenerate_share() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = carve_config(dir.path());
        let sam = tiny_sam();
        assert!(matches!(
            split_irrigation_with_share(&sam, &cfg, 1.0),
            Err(AugmentError::ShareOutOfRange(_))
        ));
    }

    /// One commodity with domestic value 100, tax 2, margin 4; imports
    /// folded at 30·(1 + 1.5·0.02 + 1.5·0.04) = 32.7.
    fn import_sam() -> Sam {
        let accounts = vec![
            account("c_x", MacroSet::Commodity),
            account("marg", MacroSet::Margin),
            account("ind", MacroSet::Industry),
            account("t_com", MacroSet::Tax),
            account("t_imp", MacroSet::Tax),
            account("hh", MacroSet::Agent),
            account("row", MacroSet::Row),
        ];
        let mut flows = DMatrix::zeros(7, 7);
        let at = |code: &str| match code {
            "c_x" => 0,
            "marg" => 1,
            "ind" => 2,
            "t_com" => 3,
            "t_imp" => 4,
            "hh" => 5,
            _ => 6,
        };
        let mut pay = |payer: &str, payee: &str, v: f64| {
            flows[(at(payee), at(payer))] += v;
        };
        pay("c_x", "ind", 120.0); // domestic production
        pay("c_x", "t_com", 2.0); // domestic commodity tax (rate 0.02)
        pay("c_x", "marg", 4.0); // domestic margin use (rate 0.04)
        pay("c_x", "row", 32.7); // folded import cost
        pay("row", "c_x", 20.0); // exports
        // Sinks to keep the matrix meaningful (balance is irrelevant here).
        pay("hh", "c_x", 100.0);
        Sam::new(accounts, flows).unwrap()
    }

    #[test]
    fn import_split_applies_one_point_five_times_domestic_rates() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = carve_config(dir.path());
        let sam = import_sam();
        let out = split_import_costs(&sam, &cfg).unwrap();
        let c = out.account("c_x").unwrap();
        let row = out.account("row").unwrap();
        let t_imp = out.account("t_imp").unwrap();
        let marg = out.account("marg").unwrap();
        // Domestic rates: td = 2/100 = 0.02, mu = 4/100 = 0.04.
        assert!((out.flow_at(row, c) - 30.0).abs() < 1e-9);
        assert!((out.flow_at(t_imp, c) - 30.0 * 1.5 * 0.02).abs() < 1e-9);
        assert!((out.flow_at(marg, c) - (4.0 + 30.0 * 1.5 * 0.04)).abs() < 1e-9);
        assert!((out.grand_total() - sam.grand_total()).abs() < 1e-9);
    }

    #[test]
    fn import_split_with_unit_factor_mirrors_domestic_rates() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = carve_config(dir.path());
        cfg.water.import_cost_factor = 1.0;
        let mut sam = import_sam();
        let row = sam.account("row").unwrap();
        let c = sam.account("c_x").unwrap();
        // Refold at factor 1: 30·(1 + 0.02 + 0.04) = 31.8.
        sam.set_flow_at(row, c, 31.8);
        let out = split_import_costs(&sam, &cfg).unwrap();
        let t_imp = out.account("t_imp").unwrap();
        assert!((out.flow_at(out.account("row").unwrap(), c) - 30.0).abs() < 1e-9);
        assert!((out.flow_at(t_imp, c) - 0.6).abs() < 1e-9);
    }

    #[test]
    fn import_split_zero_domestic_tax_gives_zero_import_tax() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = carve_config(dir.path());
        let mut sam = import_sam();
        let t_com = sam.account("t_com").unwrap();
        let c = sam.account("c_x").unwrap();
        let row = sam.account("row").unwrap();
        sam.set_flow_at(t_com, c, 0.0);
        // Refold with tax rate 0: 30·(1 + 1.5·0.04) = 31.8.
        sam.set_flow_at(row, c, 31.8);
        let out = split_import_costs(&sam, &cfg).unwrap();
        let t_imp = out.account("t_imp").unwrap();
        assert_eq!(out.flow_at(t_imp, c), 0.0);
        assert!((out.flow_at(out.account("row").unwrap(), c) - 30.0).abs() < 1e-9);
    }

}
