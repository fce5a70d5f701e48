//! The equilibrium model: sets, parameters, variable layout, and derived
//! institutional flows.
//!
//! The equation system itself lives in [`system`]; pure functional forms in
//! [`funcs`]. A [`Model`] is produced by calibration and is immutable
//! afterwards; scenario runs vary only the [`Exogenous`] data.

pub mod funcs;
pub mod system;

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::DVector;
use thiserror::Error;

use crate::{Money, Share};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("unknown variable {0}")]
    UnknownVariable(String),
    #[error("system is not square: {equations} equations, {variables} variables")]
    NotSquare { equations: usize, variables: usize },
    #[error("duplicate variable {0}")]
    DuplicateVariable(String),
}

/// Whether water is an industry-specific factor or trades on a single
/// economy-wide market.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WaterMobility {
    /// Each industry holds its benchmark allocation (no water market).
    Specific,
    /// One price, one endowment; industries compete for the volume.
    Mobile,
}

// ── Sets ─────────────────────────────────────────────────────────────────────

/// Named index sets of the model instance. All vectors are sorted; the
/// variable layout and equation stack follow these orders.
#[derive(Debug, Clone)]
pub struct Sets {
    pub industries: Vec<String>,
    /// Industries with a fixed-proportions top nest (configured or forced
    /// by a degenerate benchmark).
    pub leontief: BTreeSet<String>,
    pub commodities: Vec<String>,
    /// Commodities with domestic production.
    pub produced: BTreeSet<String>,
    pub exported: BTreeSet<String>,
    pub imported: BTreeSet<String>,
    pub factors: Vec<String>,
    /// Factors trading on one economy-wide market.
    pub mobile: BTreeSet<String>,
    /// The two second-level value-added factors, `[capital, water]`.
    pub level2: Vec<String>,
    pub agents: Vec<String>,
    pub government: String,
    pub capital_accounts: Vec<String>,
    /// Capital account → owning agent.
    pub agent_of: BTreeMap<String, String>,
    /// Factor → industries using it (benchmark-positive pairs).
    pub factor_users: BTreeMap<String, Vec<String>>,
}

impl Sets {
    pub fn is_mobile(&self, factor: &str) -> bool {
        self.mobile.contains(factor)
    }

    /// The water factor: second member of the capital/water composite.
    pub fn water_factor(&self) -> &str {
        &self.level2[1]
    }

    /// Industries with a capital/water composite nest.
    pub fn capwat_industries(&self) -> Vec<&str> {
        let mut out = BTreeSet::new();
        for f in &self.level2 {
            if let Some(users) = self.factor_users.get(f) {
                out.extend(users.iter().map(|s| s.as_str()));
            }
        }
        out.into_iter().collect()
    }
}

// ── Parameters ───────────────────────────────────────────────────────────────

/// Two-branch nest: CES `α[δ x₁^{-ρ} + (1-δ) x₂^{-ρ}]^{-1/ρ}` or CET
/// `α[δ x₁^{ρ} + (1-δ) x₂^{ρ}]^{1/ρ}`; δ weights the first branch.
#[derive(Debug, Clone, Copy)]
pub struct Nest2 {
    pub alpha: f64,
    pub delta: Share,
    pub rho: f64,
}

/// Many-branch CES nest with string-keyed members.
#[derive(Debug, Clone)]
pub struct NestN {
    pub alpha: f64,
    pub rho: f64,
    /// (member key, δ); δ sum to 1 within the nest.
    pub members: Vec<(String, Share)>,
}

/// First-level value-added nest member: a factor attached directly, or the
/// capital/water composite.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Va1Member {
    Factor(String),
    CapWat,
}

/// First-level value-added nest.
#[derive(Debug, Clone)]
pub struct Va1Nest {
    pub alpha: f64,
    pub rho: f64,
    pub members: Vec<(Va1Member, Share)>,
}

/// Fixed top-nest proportions for Leontief industries.
#[derive(Debug, Clone, Copy)]
pub struct LeoShares {
    /// Value added per unit of activity.
    pub iva: f64,
    /// Intermediate aggregate per unit of activity.
    pub inta: f64,
}

/// All calibrated coefficients. Tuple keys are `(row-like, column-like)` in
/// the order named by the field comment.
#[derive(Debug, Clone, Default)]
pub struct Params {
    // Production.
    /// Top nest per CES industry; δ weights value added.
    pub top: BTreeMap<String, Nest2>,
    /// Fixed proportions per Leontief industry.
    pub leo: BTreeMap<String, LeoShares>,
    pub va1: BTreeMap<String, Va1Nest>,
    /// Capital/water composite nest, keyed by industry.
    pub va2: BTreeMap<String, NestN>,
    /// Intermediate input coefficients, keyed `(commodity, industry)`.
    pub ica: BTreeMap<(String, String), f64>,
    /// Commodity output per unit of activity, keyed `(industry, commodity)`.
    pub yields: BTreeMap<(String, String), f64>,
    /// Aggregation of industry outputs per produced commodity; members are
    /// industry codes.
    pub out_agg: BTreeMap<String, NestN>,
    /// Domestic/export transformation per exported commodity; δ weights
    /// exports.
    pub cet: BTreeMap<String, Nest2>,
    /// Domestic/import substitution per commodity with both sources; δ
    /// weights imports.
    pub arm: BTreeMap<String, Nest2>,
    /// Armington scale for single-source commodities.
    pub arm_alpha: BTreeMap<String, f64>,
    // Wedges.
    /// Domestic commodity tax rates.
    pub td: BTreeMap<String, f64>,
    /// Import duty rates.
    pub tm: BTreeMap<String, f64>,
    /// Production tax rates on gross revenue, per industry.
    pub ti: BTreeMap<String, f64>,
    /// Margin units per unit of domestic sales, per commodity.
    pub mu_d: BTreeMap<String, f64>,
    /// Margin units per unit of imports, per commodity.
    pub mu_m: BTreeMap<String, f64>,
    /// Commodity composition of one margin unit.
    pub mq: BTreeMap<String, Share>,
    // Institutions.
    /// Factor income distribution, keyed `(agent, factor)`.
    pub fdist: BTreeMap<(String, String), Share>,
    /// Transfer shares of payer income, keyed `(payee agent, payer agent)`,
    /// payer non-government.
    pub trsh: BTreeMap<(String, String), Share>,
    /// CPI-indexed government transfer amounts, keyed by payee agent.
    pub tr_gov: BTreeMap<String, Money>,
    /// Share of income transferred to the rest of world, per non-government
    /// agent.
    pub trrow_share: BTreeMap<String, Share>,
    /// CPI-indexed government transfer to the rest of world.
    pub trrow_gov: Money,
    /// Consumption share of income per agent.
    pub csh: BTreeMap<String, Share>,
    /// Subsistence quantities, keyed `(agent, commodity)`.
    pub gamma: BTreeMap<(String, String), f64>,
    /// Marginal budget shares, keyed `(agent, commodity)`.
    pub beta: BTreeMap<(String, String), Share>,
    /// Capital transfer shares, keyed `(payee account, payer account)`,
    /// payer non-government.
    pub captr: BTreeMap<(String, String), Share>,
    /// CPI-indexed capital transfers from the government account.
    pub captr_gov: BTreeMap<String, Money>,
    /// Capital transfers to the rest of world: income shares per
    /// non-government account.
    pub caprow_out: BTreeMap<String, Share>,
    /// CPI-indexed government capital transfer to the rest of world.
    pub caprow_out_gov: Money,
    /// Domestic borrowing share of capital income.
    pub bsh: BTreeMap<String, Share>,
    /// Lending share of capital income.
    pub lendsh: BTreeMap<String, Share>,
    /// Investment commodity composition, keyed `(commodity, account)`.
    pub invsh: BTreeMap<(String, String), Share>,
    /// CPI weights (household benchmark consumption shares).
    pub cpiw: BTreeMap<String, Share>,
    /// Numeraire target for the CPI.
    pub cpibar: f64,
}

impl Params {
    /// Coefficient of `YK` in the investment budget: income left after
    /// lending and proportional capital transfers.
    pub fn einv_income_coeff(&self, sets: &Sets, k: &str) -> f64 {
        let lend = self.lendsh.get(k).copied().unwrap_or(0.0);
        if sets.agent_of[k] == sets.government {
            1.0 - lend
        } else {
            let tr: f64 = self
                .captr
                .iter()
                .filter(|((_, payer), _)| payer == k)
                .map(|(_, s)| s)
                .sum();
            let row = self.caprow_out.get(k).copied().unwrap_or(0.0);
            1.0 - lend - tr - row
        }
    }

    /// Coefficient of `CPI` in the investment budget (government account
    /// transfers are CPI-indexed amounts).
    pub fn einv_cpi_coeff(&self, sets: &Sets, k: &str) -> f64 {
        if sets.agent_of[k] == sets.government {
            let tr: f64 = self.captr_gov.values().sum();
            -(tr + self.caprow_out_gov)
        } else {
            0.0
        }
    }

    /// Savings as a share of income for a non-government agent.
    pub fn savings_share(&self, agent: &str) -> f64 {
        let csh = self.csh.get(agent).copied().unwrap_or(0.0);
        let tr: f64 = self
            .trsh
            .iter()
            .filter(|((_, payer), _)| payer == agent)
            .map(|(_, s)| s)
            .sum();
        let row = self.trrow_share.get(agent).copied().unwrap_or(0.0);
        1.0 - csh - tr - row
    }
}

// ── Exogenous data ───────────────────────────────────────────────────────────

/// The shockable side of the model: endowments, world prices, and flows
/// fixed in foreign currency.
#[derive(Debug, Clone, Default)]
pub struct Exogenous {
    /// Economy-wide endowments of mobile factors.
    pub qfs_mobile: BTreeMap<String, f64>,
    /// Per-industry endowments of specific factors, keyed
    /// `(factor, industry)`.
    pub qfs_specific: BTreeMap<(String, String), f64>,
    /// World export prices.
    pub pwe: BTreeMap<String, f64>,
    /// World import prices.
    pub pwm: BTreeMap<String, f64>,
    /// Current transfers from the rest of world per agent (× EXR).
    pub trrow_in: BTreeMap<String, Money>,
    /// Capital transfers from the rest of world per account (× EXR).
    pub caprow_in: BTreeMap<String, Money>,
    /// Borrowing from the rest of world (× EXR).
    pub brow: Money,
}

// ── Variable layout ──────────────────────────────────────────────────────────

/// Classification used for bounds and reporting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarKind {
    Quantity,
    Price,
    Income,
    /// Net cells that may take either sign (RoW lending, Walras gap).
    Signed,
}

/// Canonical variable names.
pub mod var {
    pub fn qa(i: &str) -> String {
        format!("QA[{i}]")
    }
    pub fn pa(i: &str) -> String {
        format!("PA[{i}]")
    }
    pub fn qva(i: &str) -> String {
        format!("QVA[{i}]")
    }
    pub fn pva(i: &str) -> String {
        format!("PVA[{i}]")
    }
    pub fn qinta(i: &str) -> String {
        format!("QINTA[{i}]")
    }
    pub fn pinta(i: &str) -> String {
        format!("PINTA[{i}]")
    }
    pub fn qcw(i: &str) -> String {
        format!("QCW[{i}]")
    }
    pub fn pcw(i: &str) -> String {
        format!("PCW[{i}]")
    }
    pub fn qf(f: &str, i: &str) -> String {
        format!("QF[{f},{i}]")
    }
    pub fn wfs(f: &str, i: &str) -> String {
        format!("WFS[{f},{i}]")
    }
    pub fn wf(f: &str) -> String {
        format!("WF[{f}]")
    }
    pub fn qxac(i: &str, c: &str) -> String {
        format!("QXAC[{i},{c}]")
    }
    pub fn pxac(i: &str, c: &str) -> String {
        format!("PXAC[{i},{c}]")
    }
    pub fn qint(c: &str, i: &str) -> String {
        format!("QINT[{c},{i}]")
    }
    pub fn qx(c: &str) -> String {
        format!("QX[{c}]")
    }
    pub fn px(c: &str) -> String {
        format!("PX[{c}]")
    }
    pub fn qd(c: &str) -> String {
        format!("QD[{c}]")
    }
    pub fn pds(c: &str) -> String {
        format!("PDS[{c}]")
    }
    pub fn qe(c: &str) -> String {
        format!("QE[{c}]")
    }
    pub fn qm(c: &str) -> String {
        format!("QM[{c}]")
    }
    pub fn qq(c: &str) -> String {
        format!("QQ[{c}]")
    }
    pub fn pq(c: &str) -> String {
        format!("PQ[{c}]")
    }
    pub fn yi(a: &str) -> String {
        format!("YI[{a}]")
    }
    pub fn yk(k: &str) -> String {
        format!("YK[{k}]")
    }
    pub const EXR: &str = "EXR";
    pub const CPI: &str = "CPI";
    pub const LROW: &str = "LROW";
    pub const WALRAS: &str = "WALRAS";
}

/// Maps variable names to positions in the solution vector.
///
/// Order: industry blocks (QA, PA, QVA, PVA, QINTA, PINTA, then QCW/PCW
/// where present), mobile factor demands QF, specific factor prices WFS,
/// mobile factor prices WFM, output pairs QXAC/PXAC, intermediate demands
/// QINT, commodity blocks (QX, PX, QD, PDS, QE, QM, QQ, PQ as applicable),
/// agent incomes YI, capital incomes YK, then EXR, CPI, LROW, WALRAS.
#[derive(Debug, Clone)]
pub struct Layout {
    names: Vec<String>,
    kinds: Vec<VarKind>,
    index: BTreeMap<String, usize>,
}

impl Layout {
    pub fn build(sets: &Sets, params: &Params) -> Result<Layout, ModelError> {
        let mut l = Layout {
            names: Vec::new(),
            kinds: Vec::new(),
            index: BTreeMap::new(),
        };
        let capwat: BTreeSet<&str> = sets.capwat_industries().into_iter().collect();
        for i in &sets.industries {
            l.push(var::qa(i), VarKind::Quantity)?;
            l.push(var::pa(i), VarKind::Price)?;
            l.push(var::qva(i), VarKind::Quantity)?;
            l.push(var::pva(i), VarKind::Price)?;
            l.push(var::qinta(i), VarKind::Quantity)?;
            l.push(var::pinta(i), VarKind::Price)?;
            if capwat.contains(i.as_str()) {
                l.push(var::qcw(i), VarKind::Quantity)?;
                l.push(var::pcw(i), VarKind::Price)?;
            }
        }
        for f in &sets.factors {
            let users = sets.factor_users.get(f).cloned().unwrap_or_default();
            for i in &users {
                if sets.is_mobile(f) {
                    l.push(var::qf(f, i), VarKind::Quantity)?;
                } else {
                    l.push(var::wfs(f, i), VarKind::Price)?;
                }
            }
        }
        for f in &sets.factors {
            if sets.is_mobile(f) {
                l.push(var::wf(f), VarKind::Price)?;
            }
        }
        for (i, c) in params.yields.keys() {
            l.push(var::qxac(i, c), VarKind::Quantity)?;
            l.push(var::pxac(i, c), VarKind::Price)?;
        }
        for (c, i) in params.ica.keys() {
            l.push(var::qint(c, i), VarKind::Quantity)?;
        }
        for c in &sets.commodities {
            if sets.produced.contains(c) {
                l.push(var::qx(c), VarKind::Quantity)?;
                l.push(var::px(c), VarKind::Price)?;
                l.push(var::qd(c), VarKind::Quantity)?;
                l.push(var::pds(c), VarKind::Price)?;
                if sets.exported.contains(c) {
                    l.push(var::qe(c), VarKind::Quantity)?;
                }
            }
            if sets.imported.contains(c) {
                l.push(var::qm(c), VarKind::Quantity)?;
            }
            l.push(var::qq(c), VarKind::Quantity)?;
            l.push(var::pq(c), VarKind::Price)?;
        }
        for a in &sets.agents {
            l.push(var::yi(a), VarKind::Income)?;
        }
        for k in &sets.capital_accounts {
            l.push(var::yk(k), VarKind::Income)?;
        }
        l.push(var::EXR.to_string(), VarKind::Price)?;
        l.push(var::CPI.to_string(), VarKind::Price)?;
        l.push(var::LROW.to_string(), VarKind::Signed)?;
        l.push(var::WALRAS.to_string(), VarKind::Signed)?;
        Ok(l)
    }

    fn push(&mut self, name: String, kind: VarKind) -> Result<(), ModelError> {
        if self.index.contains_key(&name) {
            return Err(ModelError::DuplicateVariable(name));
        }
        self.index.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.kinds.push(kind);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn kind(&self, i: usize) -> VarKind {
        self.kinds[i]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn idx(&self, name: &str) -> Result<usize, ModelError> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| ModelError::UnknownVariable(name.to_string()))
    }

    pub fn try_idx(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }
}

// ── The model ────────────────────────────────────────────────────────────────

/// A calibrated model instance. Immutable; scenario shocks vary only the
/// exogenous data passed to `system::assemble`.
#[derive(Debug, Clone)]
pub struct Model {
    pub sets: Sets,
    pub params: Params,
    pub layout: Layout,
    /// Benchmark solution (calibration fixed point).
    pub benchmark: DVector<f64>,
    /// Benchmark exogenous data.
    pub exogenous: Exogenous,
    pub mobility: WaterMobility,
}

impl Model {
    pub fn value(&self, x: &[f64], name: &str) -> Result<f64, ModelError> {
        Ok(x[self.layout.idx(name)?])
    }

    /// Factor income at a state: wage × employment summed over using
    /// industries (specific supplies are exogenous).
    pub fn factor_income(&self, exo: &Exogenous, x: &[f64], f: &str) -> f64 {
        let users = match self.sets.factor_users.get(f) {
            Some(u) => u,
            None => return 0.0,
        };
        let mut total = 0.0;
        for i in users {
            if self.sets.is_mobile(f) {
                let w = x[self.layout.idx(&var::wf(f)).unwrap()];
                let q = x[self.layout.idx(&var::qf(f, i)).unwrap()];
                total += w * q;
            } else {
                let w = x[self.layout.idx(&var::wfs(f, i)).unwrap()];
                let q = exo.qfs_specific[&(f.to_string(), i.clone())];
                total += w * q;
            }
        }
        total
    }

    /// Indirect tax revenue: domestic commodity taxes, import duties, and
    /// production taxes.
    pub fn tax_revenue(&self, exo: &Exogenous, x: &[f64]) -> f64 {
        let l = &self.layout;
        let exr = x[l.idx(var::EXR).unwrap()];
        let mut total = 0.0;
        for c in &self.sets.commodities {
            if self.sets.produced.contains(c) {
                let td = self.params.td.get(c).copied().unwrap_or(0.0);
                total += td * x[l.idx(&var::pds(c)).unwrap()] * x[l.idx(&var::qd(c)).unwrap()];
            }
            if self.sets.imported.contains(c) {
                let tm = self.params.tm.get(c).copied().unwrap_or(0.0);
                total += tm * exo.pwm[c] * exr * x[l.idx(&var::qm(c)).unwrap()];
            }
        }
        for (i, c) in self.params.yields.keys() {
            let ti = self.params.ti.get(i).copied().unwrap_or(0.0);
            if ti != 0.0 {
                total += ti
                    * x[l.idx(&var::pxac(i, c)).unwrap()]
                    * x[l.idx(&var::qxac(i, c)).unwrap()];
            }
        }
        total
    }
}

// ── Institutional flows ──────────────────────────────────────────────────────

/// All agent and capital-account flows implied by a solution state,
/// recomputed from first principles for reporting and audit.
#[derive(Debug, Clone, Default)]
pub struct InstitutionFlows {
    /// Factor income per factor.
    pub factor_income: BTreeMap<String, Money>,
    /// Current income per agent (as implied, not read from the state).
    pub income: BTreeMap<String, Money>,
    pub tax_revenue: Money,
    /// Transfer payments, keyed `(payee, payer)`; payee/payer may be an
    /// agent, a capital account, or `row`.
    pub transfers: BTreeMap<(String, String), Money>,
    /// Consumption spending per agent.
    pub consumption: BTreeMap<String, Money>,
    pub savings: BTreeMap<String, Money>,
    /// Capital-account income per account (as implied).
    pub capital_income: BTreeMap<String, Money>,
    pub lending: BTreeMap<String, Money>,
    pub borrowing: BTreeMap<String, Money>,
    /// Investment spending per account.
    pub investment: BTreeMap<String, Money>,
    /// Lending to the rest of world implied by the external balance.
    pub lrow: Money,
    /// Financial-flows imbalance.
    pub walras: Money,
}

/// Recomputes every institutional flow from a state vector.
pub fn institution_flows(model: &Model, exo: &Exogenous, x: &[f64]) -> InstitutionFlows {
    let sets = &model.sets;
    let p = &model.params;
    let l = &model.layout;
    let gv = |name: &str| x[l.idx(name).unwrap()];
    let cpi = gv(var::CPI);
    let exr = gv(var::EXR);
    let mut out = InstitutionFlows {
        tax_revenue: model.tax_revenue(exo, x),
        ..Default::default()
    };

    for f in &sets.factors {
        out.factor_income
            .insert(f.clone(), model.factor_income(exo, x, f));
    }

    for a in &sets.agents {
        let mut y = 0.0;
        for f in &sets.factors {
            if let Some(&sh) = p.fdist.get(&(a.clone(), f.clone())) {
                y += sh * out.factor_income[f];
            }
        }
        if *a == sets.government {
            y += out.tax_revenue;
        }
        for payer in &sets.agents {
            if payer == a {
                continue;
            }
            let t = if *payer == sets.government {
                p.tr_gov.get(a).copied().unwrap_or(0.0) * cpi
            } else {
                p.trsh.get(&(a.clone(), payer.clone())).copied().unwrap_or(0.0)
                    * gv(&var::yi(payer))
            };
            if t != 0.0 {
                out.transfers.insert((a.clone(), payer.clone()), t);
                y += t;
            }
        }
        let row_in = exo.trrow_in.get(a).copied().unwrap_or(0.0) * exr;
        if row_in != 0.0 {
            out.transfers.insert((a.clone(), "row".into()), row_in);
            y += row_in;
        }
        out.income.insert(a.clone(), y);
    }

    for a in &sets.agents {
        let y = gv(&var::yi(a));
        let eh = p.csh.get(a).copied().unwrap_or(0.0) * y;
        out.consumption.insert(a.clone(), eh);
        let sav = if *a == sets.government {
            let t: f64 = p.tr_gov.values().sum::<f64>() + p.trrow_gov;
            let row_out = p.trrow_gov * cpi;
            if row_out != 0.0 {
                out.transfers.insert(("row".into(), a.clone()), row_out);
            }
            y - eh - t * cpi
        } else {
            let row_out = p.trrow_share.get(a).copied().unwrap_or(0.0) * y;
            if row_out != 0.0 {
                out.transfers.insert(("row".into(), a.clone()), row_out);
            }
            p.savings_share(a) * y
        };
        out.savings.insert(a.clone(), sav);
    }

    for k in &sets.capital_accounts {
        let a = &sets.agent_of[k];
        let mut y = out.savings[a];
        for payer in &sets.capital_accounts {
            if payer == k {
                continue;
            }
            let t = if sets.agent_of[payer] == sets.government {
                p.captr_gov.get(k).copied().unwrap_or(0.0) * cpi
            } else {
                p.captr.get(&(k.clone(), payer.clone())).copied().unwrap_or(0.0)
                    * gv(&var::yk(payer))
            };
            if t != 0.0 {
                out.transfers.insert((k.clone(), payer.clone()), t);
                y += t;
            }
        }
        let row_in = exo.caprow_in.get(k).copied().unwrap_or(0.0) * exr;
        if row_in != 0.0 {
            out.transfers.insert((k.clone(), "row".into()), row_in);
            y += row_in;
        }
        let yk = gv(&var::yk(k));
        let b = p.bsh.get(k).copied().unwrap_or(0.0) * yk;
        y += b;
        out.capital_income.insert(k.clone(), y);
        out.borrowing.insert(k.clone(), b);
        out.lending
            .insert(k.clone(), p.lendsh.get(k).copied().unwrap_or(0.0) * yk);
        let einv = p.einv_income_coeff(sets, k) * yk + p.einv_cpi_coeff(sets, k) * cpi;
        out.investment.insert(k.clone(), einv);
        let row_out = if sets.agent_of[k] == sets.government {
            p.caprow_out_gov * cpi
        } else {
            p.caprow_out.get(k).copied().unwrap_or(0.0) * yk
        };
        if row_out != 0.0 {
            out.transfers.insert(("row".into(), k.clone()), row_out);
        }
    }

    // External balance: net lending to RoW is everything RoW pays out
    // (exports, inbound transfers, borrowing) less everything it takes in
    // (imports, outbound transfers).
    let mut lrow = exo.brow * exr;
    for c in &sets.commodities {
        if sets.exported.contains(c) {
            lrow += exo.pwe[c] * exr * gv(&var::qe(c));
        }
        if sets.imported.contains(c) {
            lrow -= exo.pwm[c] * exr * gv(&var::qm(c));
        }
    }
    for a in &sets.agents {
        lrow += exo.trrow_in.get(a).copied().unwrap_or(0.0) * exr;
    }
    for k in &sets.capital_accounts {
        lrow += exo.caprow_in.get(k).copied().unwrap_or(0.0) * exr;
    }
    for ((payee, payer), t) in &out.transfers {
        if payee == "row" && payer != "row" {
            lrow -= t;
        }
    }
    out.lrow = lrow;

    let lend: f64 = out.lending.values().sum();
    let borrow: f64 = out.borrowing.values().sum();
    out.walras = lend + exo.brow * exr - borrow - lrow;
    out
}
