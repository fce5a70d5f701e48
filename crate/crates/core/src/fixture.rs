//! Built-in example economy for tests, benchmarks, and demos.
//!
//! A compact open regional economy with every structural feature the engine
//! supports: multi-output industries, two-level value added, commodity and
//! production taxes, trade margins, import duties, five water-using
//! industries priced at published intake rates, land and resource rents,
//! three capital accounts with cross transfers, and a financial account
//! closing the external balance.
//!
//! The raw SAM here looks like what a statistical agency publishes: one
//! merged crop industry, no water, land, or resource rows, and import
//! duties and margins folded into the import cell of each commodity. The
//! model SAM is that raw SAM run through the augmentation pipeline, so the
//! two shipped files cannot drift apart: [`build`] re-derives both, and the
//! shipped copies are byte-compared against it in the test suite.
//!
//! Design constants below are hand-tuned so that every account balances
//! exactly, every derived parameter stays interior (positive consumption of
//! every commodity, positive post-carve capital in every industry), and the
//! capital cells keep enough headroom to absorb water valuations up to four
//! times the baseline rates.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use nalgebra::DMatrix;
use thiserror::Error;

use crate::accounts::{AccountMeta, MacroSet, Sam, SamError};
use crate::augment::{run_pipeline, AugmentError, AugmentReport, WaterFlows, WaterRates};
use crate::config::{ConfigError, ModelConfig};
use crate::{Money, Rate, Volume};

#[derive(Debug, Error)]
pub enum FixtureError {
    #[error(transparent)]
    Sam(#[from] SamError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error("cannot write {0}: {1}")]
    Io(String, String),
}

/// The generated economy: inputs as shipped plus the pipeline's output.
pub struct Fixture {
    pub meta: AccountMeta,
    pub config: ModelConfig,
    /// Pre-augmentation SAM (water, land, and resources folded away).
    pub raw: Sam,
    /// Model-ready SAM, the pipeline output for `raw`.
    pub model: Sam,
    pub flows: WaterFlows,
    pub rates: WaterRates,
    pub report: AugmentReport,
}

/// Model configuration shipped with the fixture files.
pub const CONFIG_TOML: &str = r#"# Example economy: single region, fifteen commodities, twelve industries
# after the irrigation split, five water-using industries.

[files]
sam = "sam.csv"
accounts = "accounts.csv"
water_flows = "water_flows.csv"
water_rates = "water_rates.csv"
raw_sam = "raw_sam.csv"

[les]
subsistence_agents = ["hh"]

[closure]
government = "gov"

[production]
leontief = ["con"]

# Cooling and irrigation water substitute easily at the margin
# (recirculation, deficit irrigation); process water in manufacturing,
# mining, and treatment is close to fixed per unit of output. The spread
# is what lets a market reallocation shift cuts into low-value intake.
[elasticities.va2_overrides]
pwr = 6.0
cri = 4.0
ppr = 0.25
min = 0.3
wtr = 0.3

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
# Rents absorb less of revenue than the default supply elasticity implies;
# the land-rich industries here stay viable under a quadrupled valuation.
eta_supply = 2.0

[water.users.cri]
group = "agriculture"
rate = "agriculture"

[water.users.min]
group = "mining"
rate = "mining"

[water.users.ppr]
group = "manufacturing"
rate = "manufacturing"

[water.users.pwr]
group = "power"
rate = "power"

[water.users.wtr]
group = "waterworks"
rate = "manufacturing"

[resources]
cri = "land"
crr = "land"
lvs = "land"
min = "natural"

[scenarios]
A1 = ["cri"]
A2 = ["ppr"]
A3 = ["min"]
A4 = ["wtr"]
A5 = ["pwr"]
"#;

/// Physical intake per flow group, millions of cubic meters.
const WATER_FLOWS: &[(&str, Volume)] = &[
    ("agriculture", 100.0),
    ("manufacturing", 150.0),
    ("mining", 500.0),
    ("power", 4000.0),
    ("waterworks", 40.0),
];

/// Intake rates, CAD per cubic meter. The agriculture rate is estimated as
/// the mean of the measured rates (flag 1).
const WATER_RATES: &[(&str, Rate, bool)] = &[
    ("agriculture", 0.07475, true),
    ("manufacturing", 0.16737, false),
    ("mining", 0.05106, false),
    ("power", 0.00581, false),
];

struct Industry {
    code: &'static str,
    label: &'static str,
    labor: Money,
    /// Gross operating surplus; water and rents are carved out of this by
    /// the pipeline.
    capital: Money,
    tax: Money,
    /// Commodity outputs at basic prices.
    supply: &'static [(&'static str, Money)],
    /// Intermediate purchases at purchaser prices.
    inputs: &'static [(&'static str, Money)],
}

const INDUSTRIES: &[Industry] = &[
    Industry {
        code: "crp",
        label: "Crops",
        labor: 50.0,
        capital: 295.0,
        tax: 10.0,
        supply: &[("c_crops", 600.0)],
        inputs: &[
            ("c_crops", 10.0),
            ("c_min", 10.0),
            ("c_ppr", 15.0),
            ("c_chm", 35.0),
            ("c_met", 20.0),
            ("c_fod", 5.0),
            ("c_pwr", 25.0),
            ("c_wtr", 10.0),
            ("c_con", 10.0),
            ("c_trd", 45.0),
            ("c_srv", 60.0),
        ],
    },
    Industry {
        code: "lvs",
        label: "Livestock",
        labor: 35.0,
        capital: 80.0,
        tax: 5.0,
        supply: &[("c_lvs", 270.0), ("c_crops", 30.0)],
        inputs: &[
            ("c_crops", 70.0),
            ("c_lvs", 5.0),
            ("c_chm", 10.0),
            ("c_fod", 20.0),
            ("c_pwr", 10.0),
            ("c_wtr", 5.0),
            ("c_con", 5.0),
            ("c_trd", 25.0),
            ("c_srv", 30.0),
        ],
    },
    Industry {
        code: "min",
        label: "Mining",
        labor: 45.0,
        capital: 190.0,
        tax: 10.0,
        supply: &[("c_min", 400.0)],
        inputs: &[
            ("c_min", 5.0),
            ("c_ppr", 5.0),
            ("c_chm", 15.0),
            ("c_met", 20.0),
            ("c_pwr", 30.0),
            ("c_wtr", 5.0),
            ("c_con", 15.0),
            ("c_trd", 20.0),
            ("c_srv", 40.0),
        ],
    },
    Industry {
        code: "ppr",
        label: "Pulp and paper",
        labor: 70.0,
        capital: 110.0,
        tax: 0.0,
        supply: &[("c_ppr", 382.5), ("c_chm", 67.5)],
        inputs: &[
            ("c_crops", 40.0),
            ("c_min", 15.0),
            ("c_ppr", 20.0),
            ("c_chm", 45.0),
            ("c_met", 15.0),
            ("c_pwr", 35.0),
            ("c_wtr", 10.0),
            ("c_con", 10.0),
            ("c_trd", 35.0),
            ("c_srv", 45.0),
        ],
    },
    Industry {
        code: "met",
        label: "Metals and machinery",
        labor: 80.0,
        capital: 65.0,
        tax: 10.0,
        supply: &[("c_met", 475.0), ("c_min", 25.0)],
        inputs: &[
            ("c_min", 120.0),
            ("c_ppr", 10.0),
            ("c_chm", 20.0),
            ("c_met", 45.0),
            ("c_pwr", 40.0),
            ("c_wtr", 5.0),
            ("c_con", 10.0),
            ("c_trd", 40.0),
            ("c_srv", 45.0),
            ("c_fin", 10.0),
        ],
    },
    Industry {
        code: "fod",
        label: "Food processing",
        labor: 85.0,
        capital: 75.0,
        tax: 10.0,
        supply: &[("c_fod", 550.0)],
        inputs: &[
            ("c_crops", 150.0),
            ("c_lvs", 120.0),
            ("c_ppr", 25.0),
            ("c_chm", 10.0),
            ("c_fod", 5.0),
            ("c_pwr", 15.0),
            ("c_wtr", 5.0),
            ("c_trd", 25.0),
            ("c_srv", 25.0),
        ],
    },
    Industry {
        code: "pwr",
        label: "Electric power",
        labor: 60.0,
        capital: 145.0,
        tax: 10.0,
        supply: &[("c_pwr", 350.0)],
        inputs: &[
            ("c_min", 40.0),
            ("c_ppr", 5.0),
            ("c_met", 15.0),
            ("c_pwr", 10.0),
            ("c_wtr", 5.0),
            ("c_con", 20.0),
            ("c_trd", 15.0),
            ("c_srv", 15.0),
            ("c_fin", 10.0),
        ],
    },
    Industry {
        code: "wtr",
        label: "Water utilities",
        labor: 30.0,
        capital: 42.0,
        tax: 0.0,
        supply: &[("c_wtr", 108.0), ("c_srv", 12.0)],
        inputs: &[
            ("c_chm", 8.0),
            ("c_met", 5.0),
            ("c_pwr", 15.0),
            ("c_con", 5.0),
            ("c_trd", 5.0),
            ("c_srv", 10.0),
        ],
    },
    Industry {
        code: "con",
        label: "Construction",
        labor: 100.0,
        capital: 60.0,
        tax: 0.0,
        supply: &[("c_con", 400.0)],
        inputs: &[
            ("c_min", 35.0),
            ("c_ppr", 10.0),
            ("c_chm", 10.0),
            ("c_met", 100.0),
            ("c_pwr", 10.0),
            ("c_con", 5.0),
            ("c_trd", 30.0),
            ("c_srv", 20.0),
            ("c_fin", 10.0),
            ("c_mch", 10.0),
        ],
    },
    Industry {
        code: "trd",
        label: "Trade and transport",
        labor: 170.0,
        capital: 100.0,
        tax: 0.0,
        supply: &[("c_trd", 450.0)],
        inputs: &[
            ("c_ppr", 15.0),
            ("c_chm", 5.0),
            ("c_met", 10.0),
            ("c_pwr", 20.0),
            ("c_wtr", 5.0),
            ("c_con", 15.0),
            ("c_trd", 20.0),
            ("c_srv", 50.0),
            ("c_fin", 25.0),
            ("c_mch", 15.0),
        ],
    },
    Industry {
        code: "srv",
        label: "Services",
        labor: 350.0,
        capital: 170.0,
        tax: 0.0,
        supply: &[
            ("c_srv", 600.0),
            ("c_trd", 64.0),
            ("c_fin", 104.0),
            ("c_rec", 32.0),
        ],
        inputs: &[
            ("c_fod", 15.0),
            ("c_ppr", 25.0),
            ("c_pwr", 30.0),
            ("c_wtr", 10.0),
            ("c_con", 20.0),
            ("c_trd", 35.0),
            ("c_srv", 80.0),
            ("c_fin", 40.0),
            ("c_rec", 5.0),
            ("c_mch", 20.0),
        ],
    },
];

struct Commodity {
    code: &'static str,
    label: &'static str,
    exports: Money,
    /// Imports at basic (border) prices.
    imports: Money,
    /// Tax on domestically consumed domestic output.
    tax: Money,
    /// Margin on domestic use; for import-only goods this is the margin on
    /// imports, shipped explicitly because there is no domestic rate to
    /// fold it into.
    margin: Money,
}

const COMMODITIES: &[Commodity] = &[
    Commodity { code: "c_crops", label: "Crops", exports: 80.0, imports: 40.0, tax: 11.0, margin: 16.5 },
    Commodity { code: "c_lvs", label: "Livestock products", exports: 25.0, imports: 15.0, tax: 4.9, margin: 7.35 },
    Commodity { code: "c_min", label: "Minerals", exports: 250.0, imports: 60.0, tax: 3.5, margin: 5.25 },
    Commodity { code: "c_ppr", label: "Pulp and paper products", exports: 160.0, imports: 70.0, tax: 4.45, margin: 6.675 },
    Commodity { code: "c_chm", label: "Chemicals", exports: 15.0, imports: 110.0, tax: 1.05, margin: 1.575 },
    Commodity { code: "c_met", label: "Metal products", exports: 220.0, imports: 120.0, tax: 5.1, margin: 7.65 },
    Commodity { code: "c_fod", label: "Processed food", exports: 90.0, imports: 100.0, tax: 9.2, margin: 13.8 },
    Commodity { code: "c_pwr", label: "Electricity", exports: 40.0, imports: 0.0, tax: 6.2, margin: 0.0 },
    Commodity { code: "c_wtr", label: "Distributed water", exports: 0.0, imports: 0.0, tax: 0.0, margin: 0.0 },
    Commodity { code: "c_con", label: "Construction", exports: 0.0, imports: 0.0, tax: 8.0, margin: 0.0 },
    Commodity { code: "c_trd", label: "Trade and transport services", exports: 0.0, imports: 0.0, tax: 0.0, margin: 0.0 },
    Commodity { code: "c_srv", label: "Services", exports: 60.0, imports: 80.0, tax: 11.04, margin: 0.0 },
    Commodity { code: "c_fin", label: "Financial services", exports: 0.0, imports: 0.0, tax: 2.08, margin: 0.0 },
    Commodity { code: "c_rec", label: "Recreation", exports: 0.0, imports: 0.0, tax: 0.0, margin: 0.0 },
    Commodity { code: "c_mch", label: "Machinery and equipment", exports: 0.0, imports: 315.0, tax: 0.0, margin: 6.0 },
];

/// Import duty and margin rates are this multiple of the domestic rates.
const IMPORT_COST_FACTOR: f64 = 1.5;

/// Gross operating surplus distribution across agents.
const CAPITAL_DISTRIBUTION: &[(&str, Money)] = &[("hh", 770.0), ("corp", 440.0), ("gov", 122.0)];

const GOV_CONSUMPTION: &[(&str, Money)] = &[("c_srv", 85.0), ("c_con", 15.0), ("c_fod", 10.0)];
const NPSH_CONSUMPTION: &[(&str, Money)] = &[("c_srv", 30.0), ("c_rec", 15.0)];

/// Commodity composition of investment spending, identical across the
/// capital accounts.
const INVESTMENT_MIX: &[(&str, f64)] = &[
    ("c_con", 0.42),
    ("c_mch", 0.32),
    ("c_met", 0.16),
    ("c_trd", 0.10),
];

/// Household saving; consumption is the residual of the household budget.
const HH_SAVING: Money = 300.0;

// Inter-agent and external transfers.
const GOV_TO_HH: Money = 60.0;
const GOV_TO_NPSH: Money = 25.0;
const CORP_TO_HH: Money = 140.0;
const HH_TO_NPSH: Money = 15.0;
const ROW_TO_HH: Money = 10.0;
const ROW_TO_NPSH: Money = 5.0;
const ROW_TO_GOV: Money = 5.0;
const HH_TO_ROW: Money = 12.0;
const CORP_TO_ROW: Money = 25.0;
const GOV_TO_ROW: Money = 8.0;

// Capital-account flows.
const KCORP_TO_KHH: Money = 30.0;
const ROW_TO_KHH: Money = 30.0;
const KCORP_TO_ROW: Money = 15.0;
const KHH_LENDING: Money = 70.0;
const KGOV_BORROWING: Money = 40.0;
const KCORP_BORROWING: Money = 10.0;
const ROW_TO_FF: Money = 30.0;

/// Non-commodity, non-industry accounts present in the raw SAM.
const OTHER_ACCOUNTS: &[(&str, &str, MacroSet)] = &[
    ("marg", "Trade and transport margins", MacroSet::Margin),
    ("t_com", "Commodity taxes", MacroSet::Tax),
    ("t_imp", "Import duties", MacroSet::Tax),
    ("t_ind", "Production taxes", MacroSet::Tax),
    ("f_lab", "Labour", MacroSet::Factor),
    ("f_cap", "Capital", MacroSet::Factor),
    ("hh", "Households", MacroSet::Agent),
    ("npsh", "Non-profit institutions", MacroSet::Agent),
    ("corp", "Corporations", MacroSet::Agent),
    ("gov", "Government", MacroSet::Agent),
    ("k_hh", "Household capital", MacroSet::Capital),
    ("k_corp", "Corporate capital", MacroSet::Capital),
    ("k_gov", "Government capital", MacroSet::Capital),
    ("ff", "Financial flows", MacroSet::Financial),
    ("row", "Rest of world", MacroSet::Row),
];

/// Accounts the pipeline synthesizes; in the metadata file so the model SAM
/// loads with the same table as the raw one.
const SYNTHESIZED_ACCOUNTS: &[(&str, &str, MacroSet)] = &[
    ("cri", "Crops (irrigated)", MacroSet::Industry),
    ("crr", "Crops (rainfed)", MacroSet::Industry),
    ("f_wat", "Water intake", MacroSet::Factor),
    ("f_lnd", "Land", MacroSet::Factor),
    ("f_nrs", "Other natural resources", MacroSet::Factor),
];

/// Account metadata covering both the raw and the model SAM.
pub fn account_meta() -> AccountMeta {
    let mut meta = AccountMeta::new();
    for c in COMMODITIES {
        meta.insert(c.code, c.label, MacroSet::Commodity);
    }
    for i in INDUSTRIES {
        meta.insert(i.code, i.label, MacroSet::Industry);
    }
    for (code, label, m) in OTHER_ACCOUNTS.iter().chain(SYNTHESIZED_ACCOUNTS) {
        meta.insert(code, label, *m);
    }
    meta
}

pub fn water_flows() -> WaterFlows {
    WaterFlows::new(
        WATER_FLOWS
            .iter()
            .map(|(g, v)| (g.to_string(), *v))
            .collect(),
    )
}

pub fn water_rates() -> WaterRates {
    let mut rates = BTreeMap::new();
    let mut estimated = BTreeSet::new();
    for (sector, rate, est) in WATER_RATES {
        rates.insert(sector.to_string(), *rate);
        if *est {
            estimated.insert(sector.to_string());
        }
    }
    WaterRates::new(rates, estimated)
}

/// Cell accumulator; duplicate or negative placements are generator bugs.
#[derive(Default)]
struct Cells {
    map: BTreeMap<(String, String), Money>,
}

impl Cells {
    fn put(&mut self, payee: &str, payer: &str, v: Money) {
        if v == 0.0 {
            return;
        }
        assert!(v > 0.0, "negative cell ({payee}, {payer}): {v}");
        let prev = self.map.insert((payee.to_string(), payer.to_string()), v);
        assert!(prev.is_none(), "duplicate cell ({payee}, {payer})");
    }
}

/// Builds the pre-augmentation SAM from the design tables.
///
/// Three accounts are intentionally left unbalanced: the folded import
/// cells carry duties and import margins that belong to the import-tax and
/// margin accounts, while the margin sales cell and the government duty
/// receipt already anticipate them. The pipeline's import-cost separation
/// closes all three gaps.
pub fn raw_sam(meta: &AccountMeta) -> Sam {
    let mut production: BTreeMap<&str, Money> = BTreeMap::new();
    let mut intermediate: BTreeMap<&str, Money> = BTreeMap::new();
    let mut labor_total = 0.0;
    let mut capital_total = 0.0;
    for ind in INDUSTRIES {
        let output: Money = ind.supply.iter().map(|(_, v)| v).sum();
        let inputs: Money = ind.inputs.iter().map(|(_, v)| v).sum();
        let cost = inputs + ind.labor + ind.capital + ind.tax;
        assert!(
            (output - cost).abs() < 1e-9,
            "industry {} costs {cost} do not exhaust output {output}",
            ind.code
        );
        for (c, v) in ind.supply {
            *production.entry(c).or_insert(0.0) += v;
        }
        for (c, v) in ind.inputs {
            *intermediate.entry(c).or_insert(0.0) += v;
        }
        labor_total += ind.labor;
        capital_total += ind.capital;
    }

    // Commodity supply at purchaser value, duties and import margins the
    // pipeline will create, and the final-demand pool left after
    // intermediate use.
    let mut final_demand: BTreeMap<&str, Money> = BTreeMap::new();
    let mut duties = 0.0;
    let mut import_margins = 0.0;
    let mut margin_total = 0.0;
    let mut exports_total = 0.0;
    let mut imports_total = 0.0;
    for c in COMMODITIES {
        let produced = production.get(c.code).copied().unwrap_or(0.0);
        let domestic = produced - c.exports;
        assert!(
            domestic >= 0.0,
            "commodity {} exports {} exceed production {produced}",
            c.code,
            c.exports
        );
        let (duty, import_margin) = if domestic > 0.0 {
            let td = c.tax / domestic;
            let mu = c.margin / domestic;
            (
                IMPORT_COST_FACTOR * td * c.imports,
                IMPORT_COST_FACTOR * mu * c.imports,
            )
        } else {
            (0.0, 0.0)
        };
        duties += duty;
        import_margins += import_margin;
        margin_total += c.margin + import_margin;
        exports_total += c.exports;
        imports_total += c.imports;
        let supply = domestic + c.tax + c.margin + c.imports + duty + import_margin;
        let used = intermediate.get(c.code).copied().unwrap_or(0.0);
        assert!(
            supply - used >= 0.0,
            "commodity {} intermediate use {used} exceeds supply {supply}",
            c.code
        );
        final_demand.insert(c.code, supply - used);
    }
    // The margin account spends its whole income on the margin commodity.
    *final_demand.get_mut("c_trd").unwrap() -= margin_total;
    assert!(final_demand["c_trd"] >= 0.0, "margin use exceeds c_trd supply");

    // Institutional incomes and savings.
    let t_com_total: Money = COMMODITIES.iter().map(|c| c.tax).sum();
    let t_ind_total: Money = INDUSTRIES.iter().map(|i| i.tax).sum();
    let capital_to: BTreeMap<&str, Money> = CAPITAL_DISTRIBUTION.iter().copied().collect();
    assert!(
        (capital_to.values().sum::<Money>() - capital_total).abs() < 1e-9,
        "capital distribution does not exhaust operating surplus"
    );
    let y_hh = labor_total + capital_to["hh"] + GOV_TO_HH + CORP_TO_HH + ROW_TO_HH;
    let y_gov = capital_to["gov"] + t_com_total + duties + t_ind_total + ROW_TO_GOV;
    let y_npsh = HH_TO_NPSH + GOV_TO_NPSH + ROW_TO_NPSH;
    let npsh_cons: Money = NPSH_CONSUMPTION.iter().map(|(_, v)| v).sum();
    assert!(
        (npsh_cons - y_npsh).abs() < 1e-9,
        "non-profit consumption {npsh_cons} must exhaust income {y_npsh}"
    );
    let gov_cons: Money = GOV_CONSUMPTION.iter().map(|(_, v)| v).sum();
    let s_corp = capital_to["corp"] - CORP_TO_HH - CORP_TO_ROW;
    let s_gov = y_gov - gov_cons - GOV_TO_HH - GOV_TO_NPSH - GOV_TO_ROW;
    assert!(s_corp > 0.0, "corporate saving must be positive, got {s_corp}");
    assert!(s_gov > 0.0, "government saving must be positive, got {s_gov}");

    // Capital-account budgets and the investment cells.
    let inv_hh = HH_SAVING + KCORP_TO_KHH + ROW_TO_KHH - KHH_LENDING;
    let inv_corp = s_corp + KCORP_BORROWING - KCORP_TO_KHH - KCORP_TO_ROW;
    let inv_gov = s_gov + KGOV_BORROWING;
    assert!(inv_hh > 0.0 && inv_corp > 0.0 && inv_gov > 0.0);
    let mix_sum: f64 = INVESTMENT_MIX.iter().map(|(_, w)| w).sum();
    assert!((mix_sum - 1.0).abs() < 1e-12, "investment mix must sum to 1");

    let mut cells = Cells::default();
    for (inv, k) in [(inv_hh, "k_hh"), (inv_corp, "k_corp"), (inv_gov, "k_gov")] {
        for (c, w) in INVESTMENT_MIX {
            let v = w * inv;
            *final_demand.get_mut(c).unwrap() -= v;
            cells.put(c, k, v);
        }
    }
    for (c, v) in GOV_CONSUMPTION {
        *final_demand.get_mut(c).unwrap() -= v;
        cells.put(c, "gov", *v);
    }
    for (c, v) in NPSH_CONSUMPTION {
        *final_demand.get_mut(c).unwrap() -= v;
        cells.put(c, "npsh", *v);
    }
    // Households buy whatever final demand remains; their budget closes on
    // it exactly when every other account balances.
    let mut hh_cons = 0.0;
    for (c, &v) in &final_demand {
        assert!(v > 0.0, "household demand for {c} must stay positive, got {v}");
        cells.put(c, "hh", v);
        hh_cons += v;
    }
    let hh_budget = y_hh - HH_TO_NPSH - HH_TO_ROW - HH_SAVING;
    assert!(
        (hh_cons - hh_budget).abs() < 1e-6,
        "household budget {hh_budget} vs residual consumption {hh_cons}"
    );

    // Production accounts.
    for ind in INDUSTRIES {
        for (c, v) in ind.supply {
            cells.put(ind.code, c, *v);
        }
        for (c, v) in ind.inputs {
            cells.put(c, ind.code, *v);
        }
        cells.put("f_lab", ind.code, ind.labor);
        cells.put("f_cap", ind.code, ind.capital);
        cells.put("t_ind", ind.code, ind.tax);
    }

    // Trade, taxes, and margins per commodity. Import cells are folded:
    // basic value plus the duty and margin at the import rates.
    for c in COMMODITIES {
        cells.put(c.code, "row", c.exports);
        cells.put("t_com", c.code, c.tax);
        cells.put("marg", c.code, c.margin);
        let produced = production.get(c.code).copied().unwrap_or(0.0);
        let domestic = produced - c.exports;
        let folded = if domestic > 0.0 {
            c.imports * (1.0 + IMPORT_COST_FACTOR * (c.tax + c.margin) / domestic)
        } else {
            c.imports
        };
        cells.put("row", c.code, folded);
    }
    cells.put("c_trd", "marg", margin_total);
    cells.put("gov", "t_com", t_com_total);
    cells.put("gov", "t_imp", duties);
    cells.put("gov", "t_ind", t_ind_total);

    // Factor income distribution.
    cells.put("hh", "f_lab", labor_total);
    for (agent, v) in CAPITAL_DISTRIBUTION {
        cells.put(agent, "f_cap", *v);
    }

    // Transfers.
    cells.put("hh", "gov", GOV_TO_HH);
    cells.put("npsh", "gov", GOV_TO_NPSH);
    cells.put("hh", "corp", CORP_TO_HH);
    cells.put("npsh", "hh", HH_TO_NPSH);
    cells.put("hh", "row", ROW_TO_HH);
    cells.put("npsh", "row", ROW_TO_NPSH);
    cells.put("gov", "row", ROW_TO_GOV);
    cells.put("row", "hh", HH_TO_ROW);
    cells.put("row", "corp", CORP_TO_ROW);
    cells.put("row", "gov", GOV_TO_ROW);

    // Savings and capital flows.
    cells.put("k_hh", "hh", HH_SAVING);
    cells.put("k_corp", "corp", s_corp);
    cells.put("k_gov", "gov", s_gov);
    cells.put("k_hh", "k_corp", KCORP_TO_KHH);
    cells.put("k_hh", "row", ROW_TO_KHH);
    cells.put("row", "k_corp", KCORP_TO_ROW);
    cells.put("ff", "k_hh", KHH_LENDING);
    cells.put("k_gov", "ff", KGOV_BORROWING);
    cells.put("k_corp", "ff", KCORP_BORROWING);
    cells.put("ff", "row", ROW_TO_FF);
    let lrow = KHH_LENDING + ROW_TO_FF - KGOV_BORROWING - KCORP_BORROWING;
    assert!(lrow > 0.0, "net lending to the rest of world must be positive");
    cells.put("row", "ff", lrow);

    // External closure at basic import values; the folded duty and margin
    // components are the intended raw-stage gap.
    let row_out = exports_total
        + ROW_TO_HH
        + ROW_TO_NPSH
        + ROW_TO_GOV
        + ROW_TO_KHH
        + ROW_TO_FF;
    let row_in = imports_total
        + HH_TO_ROW
        + CORP_TO_ROW
        + GOV_TO_ROW
        + KCORP_TO_ROW
        + lrow;
    assert!(
        (row_out - row_in).abs() < 1e-6,
        "external account does not close: out {row_out} vs in {row_in}"
    );

    let codes: Vec<&str> = COMMODITIES
        .iter()
        .map(|c| c.code)
        .chain(INDUSTRIES.iter().map(|i| i.code))
        .chain(OTHER_ACCOUNTS.iter().map(|(code, _, _)| *code))
        .collect();
    let accounts = codes
        .iter()
        .map(|code| meta.get(code).expect("fixture account in metadata"))
        .collect::<Vec<_>>();
    let index: BTreeMap<&str, usize> = codes.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    let n = codes.len();
    let mut flows = DMatrix::zeros(n, n);
    for ((payee, payer), v) in &cells.map {
        let r = *index
            .get(payee.as_str())
            .unwrap_or_else(|| panic!("unknown payee account {payee}"));
        let c = *index
            .get(payer.as_str())
            .unwrap_or_else(|| panic!("unknown payer account {payer}"));
        flows[(r, c)] = *v;
    }
    let sam = Sam::new(accounts, flows).expect("raw fixture SAM");

    // Everything balances except the three accounts the import-cost
    // separation settles.
    for i in 0..sam.len() {
        let code = &sam.accounts()[i].code;
        let gap = sam.row_sum(i) - sam.col_sum(i);
        let expected = match code.as_str() {
            "t_imp" => -duties,
            "marg" => -import_margins,
            "row" => duties + import_margins,
            _ => 0.0,
        };
        assert!(
            (gap - expected).abs() < 1e-9,
            "raw account {code}: gap {gap}, expected {expected}"
        );
    }
    sam
}

/// Generates the whole fixture, running the real pipeline on the raw SAM.
pub fn build() -> Fixture {
    let meta = account_meta();
    let config =
        ModelConfig::from_toml_str(CONFIG_TOML, Path::new(".")).expect("fixture config");
    let raw = raw_sam(&meta);
    let flows = water_flows();
    let rates = water_rates();
    rates.validate().expect("fixture rates");
    let (model, report) = run_pipeline(
        &raw,
        &flows,
        &rates,
        &config,
        config.water.irrigated_share,
        1.0,
    )
    .expect("fixture pipeline");
    for i in 0..model.len() {
        let gap = model.row_sum(i) - model.col_sum(i);
        assert!(
            gap.abs() < 1e-8,
            "model account {} unbalanced by {gap}",
            model.accounts()[i].code
        );
    }
    Fixture {
        meta,
        config,
        raw,
        model,
        flows,
        rates,
        report,
    }
}

/// The files [`write_all`] produces, in write order.
pub const FILES: [&str; 6] = [
    "model.toml",
    "accounts.csv",
    "raw_sam.csv",
    "sam.csv",
    "water_flows.csv",
    "water_rates.csv",
];

/// Writes the six fixture files into `dir`, creating it if needed. Output
/// is byte-deterministic.
pub fn write_all(dir: &Path) -> Result<(), FixtureError> {
    let io_err = |p: &Path, e: std::io::Error| {
        FixtureError::Io(p.display().to_string(), e.to_string())
    };
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let fx = build();

    let config_path = dir.join("model.toml");
    std::fs::write(&config_path, CONFIG_TOML).map_err(|e| io_err(&config_path, e))?;

    fx.meta.save(&dir.join("accounts.csv"), b',')?;
    fx.raw.save(&dir.join("raw_sam.csv"), b',')?;
    fx.model.save(&dir.join("sam.csv"), b',')?;

    let mut flows_text = String::from("industry_code,cubic_meters\n");
    for (group, volume) in WATER_FLOWS {
        flows_text.push_str(&format!("{group},{volume}\n"));
    }
    let flows_path = dir.join("water_flows.csv");
    std::fs::write(&flows_path, flows_text).map_err(|e| io_err(&flows_path, e))?;

    let mut rates_text = String::from("sector,rate,estimated\n");
    for (sector, rate, est) in WATER_RATES {
        rates_text.push_str(&format!("{sector},{rate},{}\n", u8::from(*est)));
    }
    let rates_path = dir.join("water_rates.csv");
    std::fs::write(&rates_path, rates_text).map_err(|e| io_err(&rates_path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generator_invariants_hold() {
        // `build` itself asserts industry cost exhaustion, final-demand
        // positivity, budget closure, and balance of both SAMs.
        let fx = build();
        assert_eq!(fx.raw.len(), 41);
        assert_eq!(fx.model.len(), 45);
    }

    #[test]
    fn water_rows_price_the_allocated_volumes() {
        let fx = build();
        let water = fx.model.account("f_wat").unwrap();
        for (industry, volume) in [
            ("cri", 100.0),
            ("min", 500.0),
            ("ppr", 150.0),
            ("pwr", 4000.0),
            ("wtr", 40.0),
        ] {
            let idx = fx.model.account(industry).unwrap();
            let rate = match industry {
                "cri" => 0.07475,
                "min" => 0.05106,
                "pwr" => 0.00581,
                _ => 0.16737,
            };
            let cell = fx.model.flow_at(water, idx);
            assert!(
                (cell - rate * volume).abs() < 1e-9,
                "{industry}: payment {cell} vs rate {rate} x volume {volume}"
            );
            assert!((fx.report.volumes[industry] - volume).abs() < 1e-9);
        }
    }

    #[test]
    fn rent_rows_follow_the_specific_factor_share() {
        let fx = build();
        let land = fx.model.account("f_lnd").unwrap();
        let cri = fx.model.account("cri").unwrap();
        // theta_va = 345/600, sigma = 0.6, eta = 2.
        let theta: f64 = 345.0 / 600.0;
        let share = theta * 0.6 / (theta * 2.0 + 0.6);
        let revenue = fx.model.row_sum(cri);
        assert!((fx.model.flow_at(land, cri) - share * revenue).abs() < 1e-9);
    }

    #[test]
    fn import_separation_recovers_designed_rates() {
        let fx = build();
        let row = fx.model.account("row").unwrap();
        let t_imp = fx.model.account("t_imp").unwrap();
        let c = fx.model.account("c_met").unwrap();
        assert!((fx.model.flow_at(row, c) - 120.0).abs() < 1e-9);
        assert!((fx.model.flow_at(t_imp, c) - 3.6).abs() < 1e-9);
        // Import-only machinery keeps its explicit margin and pays no duty.
        let mch = fx.model.account("c_mch").unwrap();
        let marg = fx.model.account("marg").unwrap();
        assert!((fx.model.flow_at(row, mch) - 315.0).abs() < 1e-9);
        assert_eq!(fx.model.flow_at(t_imp, mch), 0.0);
        assert!((fx.model.flow_at(marg, mch) - 6.0).abs() < 1e-9);
    }

    #[test]
    fn headroom_for_quadrupled_water_valuation() {
        let fx = build();
        let (model, _) = run_pipeline(
            &fx.raw,
            &fx.flows,
            &fx.rates,
            &fx.config,
            fx.config.water.irrigated_share,
            4.0,
        )
        .expect("pipeline at the largest valuation multiplier");
        let capital = model.account("f_cap").unwrap();
        for ind in ["cri", "crr", "min", "ppr", "pwr", "wtr"] {
            let idx = model.account(ind).unwrap();
            assert!(
                model.flow_at(capital, idx) > 0.0,
                "{ind} loses its whole surplus at a quadrupled valuation"
            );
        }
    }
}
