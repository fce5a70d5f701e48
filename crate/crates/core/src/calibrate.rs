//! Calibration: reads a balanced model-ready SAM and produces a [`Model`]
//! whose benchmark state reproduces every cell.
//!
//! Benchmark prices are 1 for every good and factor except water, whose
//! wage is the physical intake rate so that quantities are cubic metres.
//! Share parameters come from inverting each first-order condition at the
//! benchmark; scale parameters from inverting each technology. The final
//! step re-evaluates the full residual stack at the benchmark and rejects
//! the calibration if any equation misses beyond
//! [`CALIBRATION_RESIDUAL_TOL`], so a model that loads is a model that
//! replicates.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::DVector;
use thiserror::Error;

use crate::accounts::{MacroSet, Sam, SamError};
use crate::augment::WaterRates;
use crate::config::ModelConfig;
use crate::model::funcs::{eval_ces, eval_cet, FuncError};
use crate::model::system::assemble;
use crate::model::{
    var, Exogenous, LeoShares, Layout, Model, ModelError, Nest2, NestN, Params, Sets, Va1Member,
    Va1Nest, WaterMobility,
};
use crate::solve::System as _;
use crate::tol::{CALIBRATION_RESIDUAL_TOL, SAM_BALANCE_TOL};

#[derive(Debug, Error)]
pub enum CalibrateError {
    #[error(transparent)]
    Sam(#[from] SamError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Func(#[from] FuncError),
    #[error("SAM is not balanced: account {code} has gap {gap:+.6}")]
    Unbalanced { code: String, gap: f64 },
    #[error("expected exactly one {role} account, found {count}")]
    AccountCount { role: &'static str, count: usize },
    #[error("unexpected account {code}: {detail}")]
    UnexpectedAccount { code: String, detail: String },
    #[error("cell ({row}, {col}) = {value} does not fit the account structure")]
    UnexpectedCell {
        row: String,
        col: String,
        value: f64,
    },
    #[error("industry {0} has output but zero value added")]
    NoValueAdded(String),
    #[error("industry {industry} pays the water factor but has no entry under [water.users]")]
    UnknownWaterUser { industry: String },
    #[error("water rate for {sector} must be positive, got {rate}")]
    BadRate { sector: String, rate: f64 },
    #[error("commodity {0} is fully exported; the domestic branch would be empty")]
    FullyExported(String),
    #[error("commodity {0} is demanded but neither produced nor imported")]
    NoSupply(String),
    #[error("capital account {code} receives savings from {count} agents; expected exactly one")]
    CapitalOwner { code: String, count: usize },
    #[error("the numeraire target must be 1.0 at the benchmark, got {0}")]
    Numeraire(f64),
    #[error("benchmark replication failed at {label}: scaled residual {residual:e}")]
    BenchmarkResidual { label: String, residual: f64 },
    #[error(transparent)]
    Rates(#[from] crate::augment::AugmentError),
}

// ── Share and scale formulas ─────────────────────────────────────────────────

/// CES share parameters from benchmark user prices and quantities:
/// `δₖ = wₖ·Xₖ^{1+ρ} / Σⱼ wⱼ·Xⱼ^{1+ρ}`, the unique normalized weights for
/// which every benchmark first-order condition holds exactly.
pub fn ces_deltas(weights: &[f64], quantities: &[f64], rho: f64) -> Vec<f64> {
    let raw: Vec<f64> = weights
        .iter()
        .zip(quantities)
        .map(|(w, x)| w * x.powf(1.0 + rho))
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// CES scale parameter reproducing the benchmark output.
pub fn ces_alpha(
    output: f64,
    deltas: &[f64],
    rho: f64,
    quantities: &[f64],
) -> Result<f64, FuncError> {
    Ok(output / eval_ces(1.0, deltas, rho, quantities)?)
}

/// Transformation share on the export branch from the benchmark export
/// first-order condition: `δ/(1−δ) = (pe/pd)·(qe/qd)^{1−ρ}`.
pub fn cet_delta(pe: f64, qe: f64, pd: f64, qd: f64, rho: f64) -> f64 {
    let t = (pe / pd) * (qe / qd).powf(1.0 - rho);
    t / (1.0 + t)
}

/// Transformation scale parameter reproducing benchmark output.
pub fn cet_alpha(output: f64, delta: f64, rho: f64, qe: f64, qd: f64) -> Result<f64, FuncError> {
    Ok(output / eval_cet(1.0, delta, rho, qe, qd)?)
}

fn rho_ces(sigma: f64) -> f64 {
    1.0 / sigma - 1.0
}

fn rho_cet(sigma: f64) -> f64 {
    1.0 / sigma + 1.0
}

// ── Account classification ───────────────────────────────────────────────────

struct Classified {
    commodities: Vec<String>,
    industries: Vec<String>,
    factors: Vec<String>,
    agents: Vec<String>,
    caps: Vec<String>,
    margin: Option<String>,
    ff: String,
    row: String,
}

fn codes(sam: &Sam, m: MacroSet) -> Vec<String> {
    sam.macro_members(m)
        .into_iter()
        .map(|i| sam.accounts()[i].code.clone())
        .collect()
}

fn exactly_one(mut v: Vec<String>, role: &'static str) -> Result<String, CalibrateError> {
    if v.len() != 1 {
        return Err(CalibrateError::AccountCount {
            role,
            count: v.len(),
        });
    }
    Ok(v.remove(0))
}

fn classify(sam: &Sam, cfg: &ModelConfig) -> Result<Classified, CalibrateError> {
    let margins = codes(sam, MacroSet::Margin);
    let margin = match margins.len() {
        0 => None,
        1 => {
            if margins[0] != cfg.margins.account {
                return Err(CalibrateError::UnexpectedAccount {
                    code: margins[0].clone(),
                    detail: format!("margin account is configured as {}", cfg.margins.account),
                });
            }
            Some(margins[0].clone())
        }
        n => {
            return Err(CalibrateError::AccountCount {
                role: "margin",
                count: n,
            })
        }
    };
    for code in codes(sam, MacroSet::Tax) {
        if code != cfg.taxes.commodity && code != cfg.taxes.imports && code != cfg.taxes.industry {
            return Err(CalibrateError::UnexpectedAccount {
                code,
                detail: "tax accounts must match the configured commodity, import, and \
                         production tax codes"
                    .into(),
            });
        }
    }
    let wanted = [
        &cfg.factors.labor,
        &cfg.factors.capital,
        &cfg.factors.water,
        &cfg.factors.land,
        &cfg.factors.natural,
    ];
    for code in codes(sam, MacroSet::Factor) {
        if !wanted.iter().any(|w| **w == code) {
            return Err(CalibrateError::UnexpectedAccount {
                code,
                detail: "factor rows must match the configured factor codes".into(),
            });
        }
    }
    Ok(Classified {
        commodities: codes(sam, MacroSet::Commodity),
        industries: codes(sam, MacroSet::Industry),
        factors: codes(sam, MacroSet::Factor),
        agents: codes(sam, MacroSet::Agent),
        caps: codes(sam, MacroSet::Capital),
        margin,
        ff: exactly_one(codes(sam, MacroSet::Financial), "financial")?,
        row: exactly_one(codes(sam, MacroSet::Row), "rest-of-world")?,
    })
}

/// Zero-defaulting cell read; absent accounts read as zero.
fn cell(sam: &Sam, r: &str, c: &str) -> f64 {
    match (sam.account_index(r), sam.account_index(c)) {
        (Some(ri), Some(ci)) => sam.flow_at(ri, ci),
        _ => 0.0,
    }
}

/// Rejects any nonzero cell outside the recognized payment patterns, so a
/// malformed SAM fails loudly instead of calibrating to nonsense.
fn audit_cells(sam: &Sam, cfg: &ModelConfig, cls: &Classified) -> Result<(), CalibrateError> {
    use MacroSet::*;
    let gov = &cfg.closure.government;
    for (ri, racc) in sam.accounts().iter().enumerate() {
        for (ci, cacc) in sam.accounts().iter().enumerate() {
            let v = sam.flow_at(ri, ci);
            if v == 0.0 {
                continue;
            }
            let ok = match (racc.macro_set, cacc.macro_set) {
                (Industry, Commodity) => true,
                (Commodity, Industry) => true,
                (Factor, Industry) => true,
                (Tax, Industry) => racc.code == cfg.taxes.industry,
                (Tax, Commodity) => {
                    racc.code == cfg.taxes.commodity || racc.code == cfg.taxes.imports
                }
                (Margin, Commodity) => true,
                (Row, Commodity) => true,
                (Commodity, Margin) => true,
                (Commodity, Agent) => true,
                (Commodity, Capital) => true,
                (Commodity, Row) => true,
                (Agent, Factor) => true,
                (Agent, Tax) => racc.code == *gov,
                (Agent, Agent) => racc.code != cacc.code,
                (Agent, Row) => true,
                (Row, Agent) => true,
                (Capital, Agent) => true,
                (Capital, Capital) => racc.code != cacc.code,
                (Capital, Row) => true,
                (Row, Capital) => true,
                (Financial, Capital) => true,
                (Capital, Financial) => true,
                (Financial, Row) => true,
                (Row, Financial) => true,
                _ => false,
            };
            if !ok {
                return Err(CalibrateError::UnexpectedCell {
                    row: racc.code.clone(),
                    col: cacc.code.clone(),
                    value: v,
                });
            }
        }
    }
    let _ = cls;
    Ok(())
}

// ── Water pricing ────────────────────────────────────────────────────────────

struct WaterData {
    /// Industry → (payment, benchmark wage, benchmark quantity).
    by_industry: BTreeMap<String, (f64, f64, f64)>,
    total_volume: f64,
}

fn water_data(
    sam: &Sam,
    cfg: &ModelConfig,
    rates: &WaterRates,
    cls: &Classified,
    mobility: WaterMobility,
) -> Result<WaterData, CalibrateError> {
    let wat = &cfg.factors.water;
    let mut payments = BTreeMap::new();
    for i in &cls.industries {
        let v = cell(sam, wat, i);
        if v > 0.0 {
            let user = cfg
                .water
                .users
                .get(i)
                .ok_or_else(|| CalibrateError::UnknownWaterUser {
                    industry: i.clone(),
                })?;
            let rate = rates.rate(&user.rate)?;
            if rate <= 0.0 {
                return Err(CalibrateError::BadRate {
                    sector: user.rate.clone(),
                    rate,
                });
            }
            payments.insert(i.clone(), (v, rate));
        }
    }
    let total_value: f64 = payments.values().map(|(v, _)| v).sum();
    let total_volume: f64 = payments.values().map(|(v, r)| v / r).sum();
    let by_industry = payments
        .into_iter()
        .map(|(i, (value, rate))| match mobility {
            // Physical volumes per industry, each at its own rate.
            WaterMobility::Specific => (i, (value, rate, value / rate)),
            // One market price, the value-weighted mean rate; quantities
            // are re-expressed so each payment is preserved.
            WaterMobility::Mobile => {
                let pbar = total_value / total_volume;
                (i, (value, pbar, value / pbar))
            }
        })
        .collect();
    Ok(WaterData {
        by_industry,
        total_volume,
    })
}

// ── Calibration ──────────────────────────────────────────────────────────────

/// Calibrates a model from a balanced SAM.
///
/// `rates` must be the same water-rate table used to synthesize the SAM's
/// water payments (scaled identically if a valuation multiplier was
/// applied), so physical volumes are recovered exactly.
pub fn calibrate(
    sam: &Sam,
    cfg: &ModelConfig,
    rates: &WaterRates,
    mobility: WaterMobility,
) -> Result<Model, CalibrateError> {
    if cfg.closure.numeraire != 1.0 {
        return Err(CalibrateError::Numeraire(cfg.closure.numeraire));
    }
    for gap in sam.validate() {
        if gap.gap().abs() > SAM_BALANCE_TOL {
            let worst = gap.gap();
            return Err(CalibrateError::Unbalanced {
                code: gap.code,
                gap: worst,
            });
        }
    }
    let cls = classify(sam, cfg)?;
    audit_cells(sam, cfg, &cls)?;
    let water = water_data(sam, cfg, rates, &cls, mobility)?;
    let gov = cfg.closure.government.clone();
    if !cls.agents.contains(&gov) {
        return Err(CalibrateError::UnexpectedAccount {
            code: gov,
            detail: "configured government is not an agent account".into(),
        });
    }

    let mut p = Params::default();
    let mut bench: BTreeMap<String, f64> = BTreeMap::new();
    let mut exo = Exogenous::default();

    // Factor structure.
    let mobile: BTreeSet<String> = {
        let mut m = BTreeSet::new();
        m.insert(cfg.factors.labor.clone());
        if mobility == WaterMobility::Mobile {
            m.insert(cfg.factors.water.clone());
        }
        m
    };
    let level2: Vec<String> = vec![cfg.factors.capital.clone(), cfg.factors.water.clone()];
    let mut factor_users: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for f in &cls.factors {
        let users: Vec<String> = cls
            .industries
            .iter()
            .filter(|i| cell(sam, f, i) > 0.0)
            .cloned()
            .collect();
        if !users.is_empty() {
            factor_users.insert(f.clone(), users);
        }
    }

    // Benchmark wage and employment for one factor in one industry.
    let factor_point = |f: &str, i: &str| -> (f64, f64) {
        let value = cell(sam, f, i);
        if f == cfg.factors.water {
            let (_, wage, qty) = water.by_industry[i];
            (wage, qty)
        } else {
            (1.0, value)
        }
    };

    for f in &cls.factors {
        let users = match factor_users.get(f) {
            Some(u) => u.clone(),
            None => continue,
        };
        if mobile.contains(f) {
            let mut total = 0.0;
            for i in &users {
                let (wage, qty) = factor_point(f, i);
                bench.insert(var::qf(f, i), qty);
                bench.insert(var::wf(f), wage);
                total += qty;
            }
            exo.qfs_mobile.insert(f.clone(), total);
        } else {
            for i in &users {
                let (wage, qty) = factor_point(f, i);
                bench.insert(var::wfs(f, i), wage);
                exo.qfs_specific.insert((f.clone(), i.clone()), qty);
            }
        }
    }
    debug_assert!(
        (exo.qfs_mobile
            .get(&cfg.factors.water)
            .copied()
            .unwrap_or(water.total_volume)
            - water.total_volume)
            .abs()
            < 1e-9 * water.total_volume.max(1.0)
    );

    // Production side.
    let leontief_cfg: BTreeSet<String> = cfg.production.leontief.iter().cloned().collect();
    let mut leontief = BTreeSet::new();
    for i in &cls.industries {
        let va: f64 = cls.factors.iter().map(|f| cell(sam, f, i)).sum();
        let int: f64 = cls.commodities.iter().map(|c| cell(sam, c, i)).sum();
        let tax = cell(sam, &cfg.taxes.industry, i);
        let gross: f64 = cls.commodities.iter().map(|c| cell(sam, i, c)).sum();
        if va <= 0.0 {
            return Err(CalibrateError::NoValueAdded(i.clone()));
        }
        let qa = va + int;
        let ti = tax / gross;
        p.ti.insert(i.clone(), ti);
        bench.insert(var::qa(i), qa);
        bench.insert(var::pa(i), 1.0);
        bench.insert(var::qva(i), va);
        bench.insert(var::pva(i), 1.0);
        bench.insert(var::qinta(i), int);
        bench.insert(var::pinta(i), if int > 0.0 { 1.0 } else { 0.0 });

        if int == 0.0 || leontief_cfg.contains(i) {
            leontief.insert(i.clone());
            p.leo.insert(
                i.clone(),
                LeoShares {
                    iva: va / qa,
                    inta: int / qa,
                },
            );
        } else {
            let rho = rho_ces(cfg.elasticities.top);
            let d = ces_deltas(&[1.0, 1.0], &[va, int], rho);
            let alpha = ces_alpha(qa, &d, rho, &[va, int])?;
            p.top.insert(
                i.clone(),
                Nest2 {
                    alpha,
                    delta: d[0],
                    rho,
                },
            );
        }

        for c in &cls.commodities {
            let v = cell(sam, c, i);
            if v > 0.0 {
                p.ica.insert((c.clone(), i.clone()), v / int);
                bench.insert(var::qint(c, i), v);
            }
            let supply = cell(sam, i, c);
            if supply > 0.0 {
                p.yields.insert((i.clone(), c.clone()), supply / qa);
                bench.insert(var::qxac(i, c), supply);
                bench.insert(var::pxac(i, c), 1.0);
            }
        }

        // Value-added nests: level-1 factors plus the capital/water
        // composite where either component is paid.
        let rho1 = rho_ces(cfg.elasticities.va1);
        let mut members1: Vec<(Va1Member, f64)> = Vec::new();
        let mut w1 = Vec::new();
        let mut x1 = Vec::new();
        for f in &cls.factors {
            if level2.contains(f) || cell(sam, f, i) == 0.0 {
                continue;
            }
            let (wage, qty) = factor_point(f, i);
            members1.push((Va1Member::Factor(f.clone()), 0.0));
            w1.push(wage);
            x1.push(qty);
        }
        let cw_value: f64 = level2.iter().map(|f| cell(sam, f, i)).sum();
        if cw_value > 0.0 {
            members1.push((Va1Member::CapWat, 0.0));
            w1.push(1.0);
            x1.push(cw_value);
            bench.insert(var::qcw(i), cw_value);
            bench.insert(var::pcw(i), 1.0);

            let sigma2 = cfg
                .elasticities
                .va2_overrides
                .get(i)
                .copied()
                .unwrap_or(cfg.elasticities.va2);
            let rho2 = rho_ces(sigma2);
            let mut members2 = Vec::new();
            let mut w2 = Vec::new();
            let mut x2 = Vec::new();
            for f in &level2 {
                if cell(sam, f, i) == 0.0 {
                    continue;
                }
                let (wage, qty) = factor_point(f, i);
                members2.push((f.clone(), 0.0));
                w2.push(wage);
                x2.push(qty);
            }
            let d2 = ces_deltas(&w2, &x2, rho2);
            for (m, d) in members2.iter_mut().zip(&d2) {
                m.1 = *d;
            }
            p.va2.insert(
                i.clone(),
                NestN {
                    alpha: ces_alpha(cw_value, &d2, rho2, &x2)?,
                    rho: rho2,
                    members: members2,
                },
            );
        }
        let d1 = ces_deltas(&w1, &x1, rho1);
        for (m, d) in members1.iter_mut().zip(&d1) {
            m.1 = *d;
        }
        p.va1.insert(
            i.clone(),
            Va1Nest {
                alpha: ces_alpha(va, &d1, rho1, &x1)?,
                rho: rho1,
                members: members1,
            },
        );
    }

    // Margins: composition of one margin unit, then per-commodity margin
    // intensities with the import premium.
    let f_imp = cfg.water.import_cost_factor;
    if let Some(m) = &cls.margin {
        let total: f64 = cls.commodities.iter().map(|c| cell(sam, c, m)).sum();
        for c in &cls.commodities {
            let v = cell(sam, c, m);
            if v > 0.0 {
                p.mq.insert(c.clone(), v / total);
            }
        }
    }

    // Trade side.
    let mut produced = BTreeSet::new();
    let mut exported = BTreeSet::new();
    let mut imported = BTreeSet::new();
    for c in &cls.commodities {
        let qx: f64 = cls.industries.iter().map(|i| cell(sam, i, c)).sum();
        let e = cell(sam, c, &cls.row);
        let m0 = cell(sam, &cls.row, c);
        let duty = cell(sam, &cfg.taxes.imports, c);
        let dtax = cell(sam, &cfg.taxes.commodity, c);
        let marg = cls.margin.as_deref().map_or(0.0, |m| cell(sam, m, c));
        if qx == 0.0 && m0 == 0.0 {
            return Err(CalibrateError::NoSupply(c.clone()));
        }
        let qd = qx - e;
        if qx > 0.0 && qd <= 0.0 {
            return Err(CalibrateError::FullyExported(c.clone()));
        }

        let (mu_d, mu_m) = if marg > 0.0 {
            let mu_d = marg / (qd + f_imp * m0);
            (mu_d, f_imp * mu_d)
        } else {
            (0.0, 0.0)
        };
        let td = if qd > 0.0 { dtax / qd } else { 0.0 };
        let tm = if m0 > 0.0 { duty / m0 } else { 0.0 };
        let pdt = 1.0 + td + mu_d;
        let pmt = 1.0 + tm + mu_m;
        let qq = pdt * qd + pmt * m0;

        if qx > 0.0 {
            produced.insert(c.clone());
            bench.insert(var::qx(c), qx);
            bench.insert(var::px(c), 1.0);
            bench.insert(var::qd(c), qd);
            bench.insert(var::pds(c), 1.0);
            p.td.insert(c.clone(), td);
            p.mu_d.insert(c.clone(), mu_d);

            let rho_o = rho_ces(cfg.elasticities.sigma_output(c));
            let producers: Vec<String> = cls
                .industries
                .iter()
                .filter(|i| cell(sam, i, c) > 0.0)
                .cloned()
                .collect();
            let xs: Vec<f64> = producers.iter().map(|i| cell(sam, i, c)).collect();
            let ws = vec![1.0; xs.len()];
            let d = ces_deltas(&ws, &xs, rho_o);
            p.out_agg.insert(
                c.clone(),
                NestN {
                    alpha: ces_alpha(qx, &d, rho_o, &xs)?,
                    rho: rho_o,
                    members: producers.into_iter().zip(d).collect(),
                },
            );

            if e > 0.0 {
                exported.insert(c.clone());
                bench.insert(var::qe(c), e);
                exo.pwe.insert(c.clone(), 1.0);
                let rho_t = rho_cet(cfg.elasticities.sigma_export(c));
                let delta = cet_delta(1.0, e, 1.0, qd, rho_t);
                p.cet.insert(
                    c.clone(),
                    Nest2 {
                        alpha: cet_alpha(qx, delta, rho_t, e, qd)?,
                        delta,
                        rho: rho_t,
                    },
                );
            }
        }
        if m0 > 0.0 {
            imported.insert(c.clone());
            bench.insert(var::qm(c), m0);
            exo.pwm.insert(c.clone(), 1.0);
            p.tm.insert(c.clone(), tm);
            p.mu_m.insert(c.clone(), mu_m);
        }
        bench.insert(var::qq(c), qq);
        bench.insert(var::pq(c), 1.0);

        if qx > 0.0 && m0 > 0.0 {
            let rho_a = rho_ces(cfg.elasticities.sigma_import(c));
            let d = ces_deltas(&[pmt, pdt], &[m0, qd], rho_a);
            p.arm.insert(
                c.clone(),
                Nest2 {
                    alpha: ces_alpha(qq, &d, rho_a, &[m0, qd])?,
                    delta: d[0],
                    rho: rho_a,
                },
            );
        } else if qx > 0.0 {
            p.arm_alpha.insert(c.clone(), qq / qd);
        } else {
            p.arm_alpha.insert(c.clone(), qq / m0);
        }
    }

    // Institutions.
    for a in &cls.agents {
        let yi = sam.row_sum(sam.account(a)?);
        bench.insert(var::yi(a), yi);
        let eh: f64 = cls.commodities.iter().map(|c| cell(sam, c, a)).sum();
        if eh > 0.0 {
            p.csh.insert(a.clone(), eh / yi);
            let subsistence = cfg.les.subsistence_agents.contains(a);
            let s = cfg.les.subsistence_share;
            for c in &cls.commodities {
                let v = cell(sam, c, a);
                if v > 0.0 {
                    p.beta.insert((a.clone(), c.clone()), v / eh);
                    if subsistence {
                        p.gamma.insert((a.clone(), c.clone()), s * v);
                    }
                }
            }
        }
        for f in &cls.factors {
            let v = cell(sam, a, f);
            if v > 0.0 {
                let yf = sam.row_sum(sam.account(f)?);
                p.fdist.insert((a.clone(), f.clone()), v / yf);
            }
        }
        for payer in &cls.agents {
            if payer == a {
                continue;
            }
            let v = cell(sam, a, payer);
            if v > 0.0 {
                if *payer == gov {
                    p.tr_gov.insert(a.clone(), v);
                } else {
                    let y = sam.row_sum(sam.account(payer)?);
                    p.trsh.insert((a.clone(), payer.clone()), v / y);
                }
            }
        }
        let out = cell(sam, &cls.row, a);
        if out > 0.0 {
            if *a == gov {
                p.trrow_gov = out;
            } else {
                p.trrow_share.insert(a.clone(), out / yi);
            }
        }
        let inbound = cell(sam, a, &cls.row);
        if inbound > 0.0 {
            exo.trrow_in.insert(a.clone(), inbound);
        }
    }

    // Consumer price index weights: combined benchmark consumption of the
    // subsistence agents, or of all consuming agents when none are listed.
    {
        let basket: Vec<&String> = if cfg.les.subsistence_agents.is_empty() {
            cls.agents.iter().collect()
        } else {
            cls.agents
                .iter()
                .filter(|a| cfg.les.subsistence_agents.contains(a))
                .collect()
        };
        let mut weights = BTreeMap::new();
        let mut total = 0.0;
        for a in basket {
            for c in &cls.commodities {
                let v = cell(sam, c, a);
                if v > 0.0 {
                    *weights.entry(c.clone()).or_insert(0.0) += v;
                    total += v;
                }
            }
        }
        for (c, w) in weights {
            p.cpiw.insert(c, w / total);
        }
        p.cpibar = cfg.closure.numeraire;
    }

    // Capital accounts and their owners.
    let mut agent_of = BTreeMap::new();
    for k in &cls.caps {
        let owners: Vec<&String> = cls
            .agents
            .iter()
            .filter(|a| cell(sam, k, a) != 0.0)
            .collect();
        if owners.len() != 1 {
            return Err(CalibrateError::CapitalOwner {
                code: k.clone(),
                count: owners.len(),
            });
        }
        agent_of.insert(k.clone(), owners[0].clone());
        let yk = sam.row_sum(sam.account(k)?);
        bench.insert(var::yk(k), yk);
        let lend = cell(sam, &cls.ff, k);
        let borrow = cell(sam, k, &cls.ff);
        if lend > 0.0 {
            p.lendsh.insert(k.clone(), lend / yk);
        }
        if borrow > 0.0 {
            p.bsh.insert(k.clone(), borrow / yk);
        }
        let einv: f64 = cls.commodities.iter().map(|c| cell(sam, c, k)).sum();
        if einv > 0.0 {
            for c in &cls.commodities {
                let v = cell(sam, c, k);
                if v > 0.0 {
                    p.invsh.insert((c.clone(), k.clone()), v / einv);
                }
            }
        }
        let caprow_out = cell(sam, &cls.row, k);
        if caprow_out > 0.0 {
            if agent_of[k] == gov {
                p.caprow_out_gov = caprow_out;
            } else {
                p.caprow_out.insert(k.clone(), caprow_out / yk);
            }
        }
        let caprow_in = cell(sam, k, &cls.row);
        if caprow_in > 0.0 {
            exo.caprow_in.insert(k.clone(), caprow_in);
        }
    }
    for k in &cls.caps {
        for payer in &cls.caps {
            if payer == k {
                continue;
            }
            let v = cell(sam, k, payer);
            if v > 0.0 {
                if agent_of[payer] == gov {
                    p.captr_gov.insert(k.clone(), v);
                } else {
                    let y = sam.row_sum(sam.account(payer)?);
                    p.captr.insert((k.clone(), payer.clone()), v / y);
                }
            }
        }
    }

    exo.brow = cell(sam, &cls.ff, &cls.row);

    let sets = Sets {
        industries: cls.industries.clone(),
        leontief,
        commodities: cls.commodities.clone(),
        produced,
        exported,
        imported,
        factors: cls.factors.clone(),
        mobile,
        level2,
        agents: cls.agents.clone(),
        government: gov,
        capital_accounts: cls.caps.clone(),
        agent_of,
        factor_users,
    };

    let layout = Layout::build(&sets, &p)?;
    let mut x0 = DVector::zeros(layout.len());
    for (name, v) in &bench {
        x0[layout.idx(name)?] = *v;
    }
    x0[layout.idx(var::EXR)?] = 1.0;
    x0[layout.idx(var::CPI)?] = 1.0;
    x0[layout.idx(var::LROW)?] = cell(sam, &cls.row, &cls.ff);
    x0[layout.idx(var::WALRAS)?] = 0.0;

    let model = Model {
        sets,
        params: p,
        layout,
        benchmark: x0,
        exogenous: exo,
        mobility,
    };

    // The calibration contract: the benchmark must solve the full system.
    let system = assemble(&model, &model.exogenous)?;
    let mut res = vec![0.0; system.dim()];
    system.residuals(model.benchmark.as_slice(), &mut res);
    let (mut worst, mut worst_i) = (0.0_f64, 0);
    for (i, r) in res.iter().enumerate() {
        if r.abs() > worst {
            worst = r.abs();
            worst_i = i;
        }
    }
    if worst > CALIBRATION_RESIDUAL_TOL {
        return Err(CalibrateError::BenchmarkResidual {
            label: system.eqs[worst_i].label.clone(),
            residual: worst,
        });
    }
    Ok(model)
}
