//! The residual stack: equation templates with analytic partials plus the
//! assembly that turns a calibrated [`Model`] and a set of exogenous data
//! into a square [`crate::solve::System`].
//!
//! Every equation is one of four shapes. Nest technologies and first-order
//! conditions cover the production, trade, and aggregation blocks; value
//! balances cover price definitions, incomes, and the external account;
//! the clearing shape covers goods markets with demand-system terms. Each
//! equation carries a scale taken from its benchmark magnitude so residuals
//! are comparable across blocks.

use std::collections::BTreeSet;

use nalgebra::DMatrix;

use crate::solve::System;
use crate::tol::X_MIN_POSITIVE;

use super::{var, Exogenous, Model, ModelError, Va1Member, VarKind};

// ── Operands ─────────────────────────────────────────────────────────────────

/// Affine combination `Σ cⱼ·xⱼ + k` of solution variables.
#[derive(Debug, Clone, Default)]
pub struct LinForm {
    pub terms: Vec<(usize, f64)>,
    pub constant: f64,
}

impl LinForm {
    pub fn var(i: usize) -> LinForm {
        LinForm {
            terms: vec![(i, 1.0)],
            constant: 0.0,
        }
    }

    pub fn scaled(i: usize, c: f64) -> LinForm {
        LinForm {
            terms: vec![(i, c)],
            constant: 0.0,
        }
    }

    pub fn constant(k: f64) -> LinForm {
        LinForm {
            terms: Vec::new(),
            constant: k,
        }
    }

    pub fn push(&mut self, i: usize, c: f64) {
        if c != 0.0 {
            self.terms.push((i, c));
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let mut v = self.constant;
        for &(i, c) in &self.terms {
            v += c * x[i];
        }
        v
    }

    /// Accumulates `w · ∂(self)/∂x` into `row`.
    fn add_grad(&self, w: f64, row: &mut [f64]) {
        for &(i, c) in &self.terms {
            row[i] += w * c;
        }
    }

    /// Largest absolute additive piece, for scale hints.
    fn magnitude(&self, x: &[f64]) -> f64 {
        let mut m = self.constant.abs();
        for &(i, c) in &self.terms {
            m = m.max((c * x[i]).abs());
        }
        m
    }

    fn indices(&self, out: &mut BTreeSet<usize>) {
        out.extend(self.terms.iter().map(|&(i, _)| i));
    }
}

/// Quantity operand of a nest or balance term.
#[derive(Debug, Clone, Copy)]
pub enum Qty {
    Var(usize),
    Scaled(usize, f64),
    /// Exogenous value baked in at assembly (specific factor supplies).
    Fixed(f64),
}

impl Qty {
    fn eval(&self, x: &[f64]) -> f64 {
        match *self {
            Qty::Var(i) => x[i],
            Qty::Scaled(i, c) => c * x[i],
            Qty::Fixed(v) => v,
        }
    }

    fn idx_coeff(&self) -> Option<(usize, f64)> {
        match *self {
            Qty::Var(i) => Some((i, 1.0)),
            Qty::Scaled(i, c) => Some((i, c)),
            Qty::Fixed(_) => None,
        }
    }
}

// ── Equation shapes ──────────────────────────────────────────────────────────

/// One demand-system term inside a clearing equation:
/// `q = γ + β·(budget − gamma_cost)/PQ`.
#[derive(Debug, Clone)]
pub struct LesTerm {
    pub gamma: f64,
    pub beta: f64,
    /// Nominal spending power of the agent on consumption.
    pub budget: LinForm,
    /// Cost of the agent's whole subsistence basket at current prices.
    pub gamma_cost: LinForm,
}

#[derive(Debug, Clone)]
pub enum EqKind {
    /// `out − α·(Σ δₖ·qₖ^p)^{1/p} = 0`. CES nests use `p = −ρ`,
    /// transformation nests `p = +ρ`.
    Agg {
        out: Qty,
        alpha: f64,
        p: f64,
        members: Vec<(Qty, f64)>,
    },
    /// `a·P₁·Q₁^e₁ − b·P₂·Q₂^e₂ = 0`: every first-order condition.
    PowBal {
        a: f64,
        p1: LinForm,
        e1: f64,
        q1: Qty,
        b: f64,
        p2: LinForm,
        e2: f64,
        q2: Qty,
    },
    /// `Σ cₜ·Pₜ·Qₜ + linear = 0`: price definitions, incomes, transfers.
    Balance {
        bilinear: Vec<(f64, LinForm, Qty)>,
        linear: LinForm,
    },
    /// `QQ − direct − Σ LES demands − inv/PQ = 0`.
    Clearing {
        qq: usize,
        pq: usize,
        direct: LinForm,
        les: Vec<LesTerm>,
        inv: LinForm,
    },
}

/// A labelled, scaled residual.
#[derive(Debug, Clone)]
pub struct Eq {
    pub label: String,
    pub scale: f64,
    pub kind: EqKind,
}

impl Eq {
    pub fn new(label: impl Into<String>, kind: EqKind) -> Eq {
        Eq {
            label: label.into(),
            scale: 1.0,
            kind,
        }
    }

    pub fn residual(&self, x: &[f64]) -> f64 {
        self.kind.raw(x) / self.scale
    }

    /// Accumulates the scaled gradient row; `row` must be zeroed by the
    /// caller.
    pub fn partials(&self, x: &[f64], row: &mut [f64]) {
        self.kind.raw_partials(x, row);
        if self.scale != 1.0 {
            for i in self.incidence() {
                row[i] /= self.scale;
            }
        }
    }

    /// Variables this equation touches.
    pub fn incidence(&self) -> BTreeSet<usize> {
        let mut out = BTreeSet::new();
        match &self.kind {
            EqKind::Agg { out: o, members, .. } => {
                if let Some((i, _)) = o.idx_coeff() {
                    out.insert(i);
                }
                for (q, _) in members {
                    if let Some((i, _)) = q.idx_coeff() {
                        out.insert(i);
                    }
                }
            }
            EqKind::PowBal { p1, q1, p2, q2, .. } => {
                p1.indices(&mut out);
                p2.indices(&mut out);
                for q in [q1, q2] {
                    if let Some((i, _)) = q.idx_coeff() {
                        out.insert(i);
                    }
                }
            }
            EqKind::Balance { bilinear, linear } => {
                for (_, p, q) in bilinear {
                    p.indices(&mut out);
                    if let Some((i, _)) = q.idx_coeff() {
                        out.insert(i);
                    }
                }
                linear.indices(&mut out);
            }
            EqKind::Clearing {
                qq,
                pq,
                direct,
                les,
                inv,
            } => {
                out.insert(*qq);
                out.insert(*pq);
                direct.indices(&mut out);
                inv.indices(&mut out);
                for t in les {
                    t.budget.indices(&mut out);
                    t.gamma_cost.indices(&mut out);
                }
            }
        }
        out
    }
}

impl EqKind {
    fn raw(&self, x: &[f64]) -> f64 {
        match self {
            EqKind::Agg {
                out,
                alpha,
                p,
                members,
            } => {
                let s: f64 = members
                    .iter()
                    .map(|(q, d)| d * q.eval(x).powf(*p))
                    .sum();
                out.eval(x) - alpha * s.powf(1.0 / p)
            }
            EqKind::PowBal {
                a,
                p1,
                e1,
                q1,
                b,
                p2,
                e2,
                q2,
            } => a * p1.eval(x) * q1.eval(x).powf(*e1) - b * p2.eval(x) * q2.eval(x).powf(*e2),
            EqKind::Balance { bilinear, linear } => {
                let mut v = linear.eval(x);
                for (c, p, q) in bilinear {
                    v += c * p.eval(x) * q.eval(x);
                }
                v
            }
            EqKind::Clearing {
                qq,
                pq,
                direct,
                les,
                inv,
            } => {
                let price = x[*pq];
                let mut v = x[*qq] - direct.eval(x) - inv.eval(x) / price;
                for t in les {
                    v -= t.gamma + t.beta * (t.budget.eval(x) - t.gamma_cost.eval(x)) / price;
                }
                v
            }
        }
    }

    fn raw_partials(&self, x: &[f64], row: &mut [f64]) {
        match self {
            EqKind::Agg {
                out,
                alpha,
                p,
                members,
            } => {
                if let Some((i, c)) = out.idx_coeff() {
                    row[i] += c;
                }
                let s: f64 = members
                    .iter()
                    .map(|(q, d)| d * q.eval(x).powf(*p))
                    .sum();
                let g = alpha * s.powf(1.0 / p);
                for (q, d) in members {
                    if let Some((i, c)) = q.idx_coeff() {
                        let qv = q.eval(x);
                        row[i] -= g * d * qv.powf(p - 1.0) / s * c;
                    }
                }
            }
            EqKind::PowBal {
                a,
                p1,
                e1,
                q1,
                b,
                p2,
                e2,
                q2,
            } => {
                let (q1v, q2v) = (q1.eval(x), q2.eval(x));
                p1.add_grad(a * q1v.powf(*e1), row);
                if let Some((i, c)) = q1.idx_coeff() {
                    row[i] += a * p1.eval(x) * e1 * q1v.powf(e1 - 1.0) * c;
                }
                p2.add_grad(-b * q2v.powf(*e2), row);
                if let Some((i, c)) = q2.idx_coeff() {
                    row[i] -= b * p2.eval(x) * e2 * q2v.powf(e2 - 1.0) * c;
                }
            }
            EqKind::Balance { bilinear, linear } => {
                for (c, p, q) in bilinear {
                    p.add_grad(c * q.eval(x), row);
                    if let Some((i, k)) = q.idx_coeff() {
                        row[i] += c * p.eval(x) * k;
                    }
                }
                linear.add_grad(1.0, row);
            }
            EqKind::Clearing {
                qq,
                pq,
                direct,
                les,
                inv,
            } => {
                let price = x[*pq];
                row[*qq] += 1.0;
                direct.add_grad(-1.0, row);
                inv.add_grad(-1.0 / price, row);
                row[*pq] += inv.eval(x) / (price * price);
                for t in les {
                    t.budget.add_grad(-t.beta / price, row);
                    t.gamma_cost.add_grad(t.beta / price, row);
                    row[*pq] +=
                        t.beta * (t.budget.eval(x) - t.gamma_cost.eval(x)) / (price * price);
                }
            }
        }
    }

    /// Largest absolute additive piece at `x`, the scale hint.
    fn magnitude(&self, x: &[f64]) -> f64 {
        match self {
            EqKind::Agg {
                out,
                alpha,
                p,
                members,
            } => {
                let s: f64 = members
                    .iter()
                    .map(|(q, d)| d * q.eval(x).powf(*p))
                    .sum();
                out.eval(x).abs().max((alpha * s.powf(1.0 / p)).abs())
            }
            EqKind::PowBal {
                a,
                p1,
                e1,
                q1,
                b,
                p2,
                e2,
                q2,
            } => {
                let t1 = a * p1.eval(x) * q1.eval(x).powf(*e1);
                let t2 = b * p2.eval(x) * q2.eval(x).powf(*e2);
                t1.abs().max(t2.abs())
            }
            EqKind::Balance { bilinear, linear } => {
                let mut m = linear.magnitude(x);
                for (c, p, q) in bilinear {
                    m = m.max((c * p.eval(x) * q.eval(x)).abs());
                }
                m
            }
            EqKind::Clearing {
                qq,
                pq,
                direct,
                les,
                inv,
            } => {
                let price = x[*pq];
                let mut m = x[*qq].abs().max(direct.magnitude(x));
                m = m.max((inv.eval(x) / price).abs());
                for t in les {
                    let qh =
                        t.gamma + t.beta * (t.budget.eval(x) - t.gamma_cost.eval(x)) / price;
                    m = m.max(qh.abs());
                }
                m
            }
        }
    }
}

// ── Assembled system ─────────────────────────────────────────────────────────

/// A square residual stack over a fixed variable layout.
pub struct ModelSystem {
    pub eqs: Vec<Eq>,
    lower: Vec<f64>,
    names: Vec<String>,
}

impl ModelSystem {
    pub fn labels(&self) -> Vec<&str> {
        self.eqs.iter().map(|e| e.label.as_str()).collect()
    }

    /// Equation label → touched variable indices, for structural audits.
    pub fn incidence(&self) -> Vec<(String, BTreeSet<usize>)> {
        self.eqs
            .iter()
            .map(|e| (e.label.clone(), e.incidence()))
            .collect()
    }
}

impl System for ModelSystem {
    fn dim(&self) -> usize {
        self.eqs.len()
    }

    fn residuals(&self, x: &[f64], out: &mut [f64]) {
        for (i, eq) in self.eqs.iter().enumerate() {
            out[i] = eq.residual(x);
        }
    }

    fn jacobian(&self, x: &[f64], out: &mut DMatrix<f64>) {
        out.fill(0.0);
        let n = self.eqs.len();
        let mut row = vec![0.0; n];
        for (i, eq) in self.eqs.iter().enumerate() {
            row.iter_mut().for_each(|v| *v = 0.0);
            eq.partials(x, &mut row);
            for (j, &v) in row.iter().enumerate() {
                if v != 0.0 {
                    out[(i, j)] = v;
                }
            }
        }
    }

    fn lower_bounds(&self) -> Vec<f64> {
        self.lower.clone()
    }

    fn var_name(&self, i: usize) -> String {
        self.names[i].clone()
    }
}

/// Minimum equation scale; keeps near-empty benchmark cells from inflating
/// residuals.
const SCALE_FLOOR: f64 = 1e-6;

/// Builds the residual stack for a model under the given exogenous data.
///
/// Equation scales come from term magnitudes at the calibration benchmark,
/// so a residual of `1e-8` means the same relative imbalance in every block
/// and across scenario runs.
pub fn assemble(model: &Model, exo: &Exogenous) -> Result<ModelSystem, ModelError> {
    let sets = &model.sets;
    let p = &model.params;
    let l = &model.layout;
    let ix = |name: String| l.idx(&name);
    let mut eqs: Vec<Eq> = Vec::new();

    // Composite user price of domestic sales: basic price plus commodity
    // tax plus trade margin valued at current margin-basket prices.
    let user_price_d = |c: &str| -> Result<LinForm, ModelError> {
        let mut f = LinForm::scaled(ix(var::pds(c))?, 1.0 + p.td.get(c).copied().unwrap_or(0.0));
        let mu = p.mu_d.get(c).copied().unwrap_or(0.0);
        if mu != 0.0 {
            for (mc, share) in &p.mq {
                f.push(ix(var::pq(mc))?, mu * share);
            }
        }
        Ok(f)
    };
    let user_price_m = |c: &str| -> Result<LinForm, ModelError> {
        let duty = 1.0 + p.tm.get(c).copied().unwrap_or(0.0);
        let mut f = LinForm::scaled(ix(var::EXR.into())?, duty * exo.pwm[c]);
        let mu = p.mu_m.get(c).copied().unwrap_or(0.0);
        if mu != 0.0 {
            for (mc, share) in &p.mq {
                f.push(ix(var::pq(mc))?, mu * share);
            }
        }
        Ok(f)
    };
    // Wage form and employment operand for a factor in an industry.
    let wage_of = |f: &str, i: &str| -> Result<LinForm, ModelError> {
        if sets.is_mobile(f) {
            Ok(LinForm::var(ix(var::wf(f))?))
        } else {
            Ok(LinForm::var(ix(var::wfs(f, i))?))
        }
    };
    let employment_of = |f: &str, i: &str| -> Result<Qty, ModelError> {
        if sets.is_mobile(f) {
            Ok(Qty::Var(ix(var::qf(f, i))?))
        } else {
            Ok(Qty::Fixed(exo.qfs_specific[&(f.to_string(), i.to_string())]))
        }
    };

    // Production blocks, one industry at a time.
    for i in &sets.industries {
        let qa = ix(var::qa(i))?;
        let pa = ix(var::pa(i))?;
        let qva = ix(var::qva(i))?;
        let pva = ix(var::pva(i))?;
        let qinta = ix(var::qinta(i))?;
        let pinta = ix(var::pinta(i))?;

        if let Some(leo) = p.leo.get(i) {
            let mut va = LinForm::var(qva);
            va.push(qa, -leo.iva);
            eqs.push(Eq::new(
                format!("leo_va[{i}]"),
                EqKind::Balance {
                    bilinear: vec![],
                    linear: va,
                },
            ));
            let mut int = LinForm::var(qinta);
            int.push(qa, -leo.inta);
            eqs.push(Eq::new(
                format!("leo_int[{i}]"),
                EqKind::Balance {
                    bilinear: vec![],
                    linear: int,
                },
            ));
        } else {
            let nest = &p.top[i];
            eqs.push(Eq::new(
                format!("top_tech[{i}]"),
                EqKind::Agg {
                    out: Qty::Var(qa),
                    alpha: nest.alpha,
                    p: -nest.rho,
                    members: vec![
                        (Qty::Var(qva), nest.delta),
                        (Qty::Var(qinta), 1.0 - nest.delta),
                    ],
                },
            ));
            eqs.push(Eq::new(
                format!("top_foc[{i}]"),
                EqKind::PowBal {
                    a: 1.0 - nest.delta,
                    p1: LinForm::var(pva),
                    e1: 1.0 + nest.rho,
                    q1: Qty::Var(qva),
                    b: nest.delta,
                    p2: LinForm::var(pinta),
                    e2: 1.0 + nest.rho,
                    q2: Qty::Var(qinta),
                },
            ));
        }

        // Activity revenue exhausts nest costs.
        eqs.push(Eq::new(
            format!("zero_profit[{i}]"),
            EqKind::Balance {
                bilinear: vec![
                    (1.0, LinForm::var(pa), Qty::Var(qa)),
                    (-1.0, LinForm::var(pva), Qty::Var(qva)),
                    (-1.0, LinForm::var(pinta), Qty::Var(qinta)),
                ],
                linear: LinForm::default(),
            },
        ));

        // Intermediate aggregate price from the fixed input recipe.
        let mut pinta_form = LinForm::var(pinta);
        for ((c, ci), ica) in &p.ica {
            if ci == i {
                pinta_form.push(ix(var::pq(c))?, -ica);
            }
        }
        eqs.push(Eq::new(
            format!("pinta_def[{i}]"),
            EqKind::Balance {
                bilinear: vec![],
                linear: pinta_form,
            },
        ));

        // Activity price: net-of-production-tax value of outputs.
        let ti = p.ti.get(i).copied().unwrap_or(0.0);
        let mut bil = vec![(1.0, LinForm::var(pa), Qty::Var(qa))];
        for (pi, c) in p.yields.keys() {
            if pi == i {
                bil.push((
                    -(1.0 - ti),
                    LinForm::var(ix(var::pxac(i, c))?),
                    Qty::Var(ix(var::qxac(i, c))?),
                ));
            }
        }
        eqs.push(Eq::new(
            format!("pa_def[{i}]"),
            EqKind::Balance {
                bilinear: bil,
                linear: LinForm::default(),
            },
        ));

        // First-level value added.
        let va1 = &p.va1[i];
        let mut members = Vec::new();
        for (m, d) in &va1.members {
            let q = match m {
                Va1Member::Factor(f) => employment_of(f, i)?,
                Va1Member::CapWat => Qty::Var(ix(var::qcw(i))?),
            };
            members.push((q, *d));
        }
        eqs.push(Eq::new(
            format!("va1_tech[{i}]"),
            EqKind::Agg {
                out: Qty::Var(qva),
                alpha: va1.alpha,
                p: -va1.rho,
                members,
            },
        ));
        for (m, d) in &va1.members {
            let (wage, q, tag) = match m {
                Va1Member::Factor(f) => (wage_of(f, i)?, employment_of(f, i)?, f.clone()),
                Va1Member::CapWat => (
                    LinForm::var(ix(var::pcw(i))?),
                    Qty::Var(ix(var::qcw(i))?),
                    "capwat".to_string(),
                ),
            };
            eqs.push(Eq::new(
                format!("foc_va1[{i},{tag}]"),
                EqKind::PowBal {
                    a: va1.alpha.powf(va1.rho),
                    p1: wage,
                    e1: 1.0 + va1.rho,
                    q1: q,
                    b: *d,
                    p2: LinForm::var(pva),
                    e2: 1.0 + va1.rho,
                    q2: Qty::Var(qva),
                },
            ));
        }

        // Capital/water composite.
        if let Some(va2) = p.va2.get(i) {
            let qcw = ix(var::qcw(i))?;
            let pcw = ix(var::pcw(i))?;
            let mut members = Vec::new();
            for (f, d) in &va2.members {
                members.push((employment_of(f, i)?, *d));
            }
            eqs.push(Eq::new(
                format!("va2_tech[{i}]"),
                EqKind::Agg {
                    out: Qty::Var(qcw),
                    alpha: va2.alpha,
                    p: -va2.rho,
                    members,
                },
            ));
            for (f, d) in &va2.members {
                eqs.push(Eq::new(
                    format!("foc_va2[{i},{f}]"),
                    EqKind::PowBal {
                        a: va2.alpha.powf(va2.rho),
                        p1: wage_of(f, i)?,
                        e1: 1.0 + va2.rho,
                        q1: employment_of(f, i)?,
                        b: *d,
                        p2: LinForm::var(pcw),
                        e2: 1.0 + va2.rho,
                        q2: Qty::Var(qcw),
                    },
                ));
            }
        }
    }

    // Intermediate demands follow the aggregate in fixed proportions.
    for ((c, i), ica) in &p.ica {
        let mut f = LinForm::var(ix(var::qint(c, i))?);
        f.push(ix(var::qinta(i))?, -ica);
        eqs.push(Eq::new(
            format!("qint[{c},{i}]"),
            EqKind::Balance {
                bilinear: vec![],
                linear: f,
            },
        ));
    }

    // Commodity outputs follow activity in fixed proportions.
    for ((i, c), yield_) in &p.yields {
        let mut f = LinForm::var(ix(var::qxac(i, c))?);
        f.push(ix(var::qa(i))?, -yield_);
        eqs.push(Eq::new(
            format!("qxac[{i},{c}]"),
            EqKind::Balance {
                bilinear: vec![],
                linear: f,
            },
        ));
    }

    // Trade blocks, one commodity at a time.
    for c in &sets.commodities {
        if sets.produced.contains(c) {
            let qx = ix(var::qx(c))?;
            let px = ix(var::px(c))?;
            let qd = ix(var::qd(c))?;
            let pds = ix(var::pds(c))?;

            let agg = &p.out_agg[c];
            let mut members = Vec::new();
            for (i, d) in &agg.members {
                members.push((Qty::Var(ix(var::qxac(i, c))?), *d));
            }
            eqs.push(Eq::new(
                format!("out_agg[{c}]"),
                EqKind::Agg {
                    out: Qty::Var(qx),
                    alpha: agg.alpha,
                    p: -agg.rho,
                    members,
                },
            ));
            for (i, d) in &agg.members {
                eqs.push(Eq::new(
                    format!("foc_out[{i},{c}]"),
                    EqKind::PowBal {
                        a: agg.alpha.powf(agg.rho),
                        p1: LinForm::var(ix(var::pxac(i, c))?),
                        e1: 1.0 + agg.rho,
                        q1: Qty::Var(ix(var::qxac(i, c))?),
                        b: *d,
                        p2: LinForm::var(px),
                        e2: 1.0 + agg.rho,
                        q2: Qty::Var(qx),
                    },
                ));
            }

            if sets.exported.contains(c) {
                let qe = ix(var::qe(c))?;
                let cet = &p.cet[c];
                eqs.push(Eq::new(
                    format!("cet_tech[{c}]"),
                    EqKind::Agg {
                        out: Qty::Var(qx),
                        alpha: cet.alpha,
                        p: cet.rho,
                        members: vec![
                            (Qty::Var(qe), cet.delta),
                            (Qty::Var(qd), 1.0 - cet.delta),
                        ],
                    },
                ));
                eqs.push(Eq::new(
                    format!("cet_foc[{c}]"),
                    EqKind::PowBal {
                        a: cet.delta,
                        p1: LinForm::var(pds),
                        e1: 1.0 - cet.rho,
                        q1: Qty::Var(qd),
                        b: 1.0 - cet.delta,
                        p2: LinForm::scaled(ix(var::EXR.into())?, exo.pwe[c]),
                        e2: 1.0 - cet.rho,
                        q2: Qty::Var(qe),
                    },
                ));
                // Output value splits across destinations.
                eqs.push(Eq::new(
                    format!("px_def[{c}]"),
                    EqKind::Balance {
                        bilinear: vec![
                            (1.0, LinForm::var(px), Qty::Var(qx)),
                            (-1.0, LinForm::var(pds), Qty::Var(qd)),
                            (
                                -exo.pwe[c],
                                LinForm::var(ix(var::EXR.into())?),
                                Qty::Var(qe),
                            ),
                        ],
                        linear: LinForm::default(),
                    },
                ));
            } else {
                let mut qf = LinForm::var(qd);
                qf.push(qx, -1.0);
                eqs.push(Eq::new(
                    format!("qd_ident[{c}]"),
                    EqKind::Balance {
                        bilinear: vec![],
                        linear: qf,
                    },
                ));
                let mut pf = LinForm::var(pds);
                pf.push(px, -1.0);
                eqs.push(Eq::new(
                    format!("pds_ident[{c}]"),
                    EqKind::Balance {
                        bilinear: vec![],
                        linear: pf,
                    },
                ));
            }
        }

        let qq = ix(var::qq(c))?;
        let pq = ix(var::pq(c))?;
        let imported = sets.imported.contains(c);
        let produced = sets.produced.contains(c);

        if produced && imported {
            let arm = &p.arm[c];
            let qm = ix(var::qm(c))?;
            let qd = ix(var::qd(c))?;
            eqs.push(Eq::new(
                format!("arm_tech[{c}]"),
                EqKind::Agg {
                    out: Qty::Var(qq),
                    alpha: arm.alpha,
                    p: -arm.rho,
                    members: vec![
                        (Qty::Var(qm), arm.delta),
                        (Qty::Var(qd), 1.0 - arm.delta),
                    ],
                },
            ));
            eqs.push(Eq::new(
                format!("arm_foc[{c}]"),
                EqKind::PowBal {
                    a: 1.0 - arm.delta,
                    p1: user_price_m(c)?,
                    e1: 1.0 + arm.rho,
                    q1: Qty::Var(qm),
                    b: arm.delta,
                    p2: user_price_d(c)?,
                    e2: 1.0 + arm.rho,
                    q2: Qty::Var(qd),
                },
            ));
        } else {
            // Single-source absorption scales with the sole supply.
            let alpha = p.arm_alpha[c];
            let src = if produced {
                ix(var::qd(c))?
            } else {
                ix(var::qm(c))?
            };
            let mut f = LinForm::var(qq);
            f.push(src, -alpha);
            eqs.push(Eq::new(
                format!("arm_tech[{c}]"),
                EqKind::Balance {
                    bilinear: vec![],
                    linear: f,
                },
            ));
        }

        // Absorption value equals user spending on both sources.
        let mut bil = vec![(1.0, LinForm::var(pq), Qty::Var(qq))];
        if produced {
            bil.push((-1.0, user_price_d(c)?, Qty::Var(ix(var::qd(c))?)));
        }
        if imported {
            bil.push((-1.0, user_price_m(c)?, Qty::Var(ix(var::qm(c))?)));
        }
        eqs.push(Eq::new(
            format!("pq_def[{c}]"),
            EqKind::Balance {
                bilinear: bil,
                linear: LinForm::default(),
            },
        ));
    }

    // Mobile factor markets.
    for f in &sets.factors {
        if !sets.is_mobile(f) {
            continue;
        }
        let mut form = LinForm::constant(-exo.qfs_mobile[f]);
        for i in &sets.factor_users[f] {
            form.push(ix(var::qf(f, i))?, 1.0);
        }
        eqs.push(Eq::new(
            format!("clear_f[{f}]"),
            EqKind::Balance {
                bilinear: vec![],
                linear: form,
            },
        ));
    }

    // Goods markets.
    for c in &sets.commodities {
        let qq = ix(var::qq(c))?;
        let pq = ix(var::pq(c))?;
        let mut direct = LinForm::default();
        for (ic, i) in p.ica.keys() {
            if ic == c {
                direct.push(ix(var::qint(c, i))?, 1.0);
            }
        }
        // Margin services demanded in proportion to traded volumes.
        if let Some(&mshare) = p.mq.get(c) {
            for mc in &sets.commodities {
                if sets.produced.contains(mc) {
                    if let Some(&mu) = p.mu_d.get(mc) {
                        direct.push(ix(var::qd(mc))?, mshare * mu);
                    }
                }
                if sets.imported.contains(mc) {
                    if let Some(&mu) = p.mu_m.get(mc) {
                        direct.push(ix(var::qm(mc))?, mshare * mu);
                    }
                }
            }
        }
        let mut les = Vec::new();
        for a in &sets.agents {
            let beta = p.beta.get(&(a.clone(), c.clone())).copied().unwrap_or(0.0);
            let gamma = p.gamma.get(&(a.clone(), c.clone())).copied().unwrap_or(0.0);
            if beta == 0.0 && gamma == 0.0 {
                continue;
            }
            let csh = p.csh.get(a).copied().unwrap_or(0.0);
            let mut gamma_cost = LinForm::default();
            for cc in &sets.commodities {
                if let Some(&g) = p.gamma.get(&(a.clone(), cc.clone())) {
                    gamma_cost.push(ix(var::pq(cc))?, g);
                }
            }
            les.push(LesTerm {
                gamma,
                beta,
                budget: LinForm::scaled(ix(var::yi(a))?, csh),
                gamma_cost,
            });
        }
        let mut inv = LinForm::default();
        let mut cpi_coeff = 0.0;
        for k in &sets.capital_accounts {
            if let Some(&sh) = p.invsh.get(&(c.clone(), k.clone())) {
                inv.push(ix(var::yk(k))?, sh * p.einv_income_coeff(sets, k));
                cpi_coeff += sh * p.einv_cpi_coeff(sets, k);
            }
        }
        inv.push(ix(var::CPI.into())?, cpi_coeff);
        eqs.push(Eq::new(
            format!("clear_c[{c}]"),
            EqKind::Clearing {
                qq,
                pq,
                direct,
                les,
                inv,
            },
        ));
    }

    // Agent incomes.
    let exr = ix(var::EXR.into())?;
    let cpi = ix(var::CPI.into())?;
    for a in &sets.agents {
        let mut bil: Vec<(f64, LinForm, Qty)> = Vec::new();
        let mut lin = LinForm::scaled(ix(var::yi(a))?, -1.0);
        for f in &sets.factors {
            let share = match p.fdist.get(&(a.clone(), f.clone())) {
                Some(&s) if s != 0.0 => s,
                _ => continue,
            };
            for i in &sets.factor_users[f] {
                if sets.is_mobile(f) {
                    bil.push((
                        share,
                        LinForm::var(ix(var::wf(f))?),
                        Qty::Var(ix(var::qf(f, i))?),
                    ));
                } else {
                    lin.push(
                        ix(var::wfs(f, i))?,
                        share * exo.qfs_specific[&(f.clone(), i.clone())],
                    );
                }
            }
        }
        if *a == sets.government {
            for c in &sets.commodities {
                if sets.produced.contains(c) {
                    let td = p.td.get(c).copied().unwrap_or(0.0);
                    if td != 0.0 {
                        bil.push((
                            td,
                            LinForm::var(ix(var::pds(c))?),
                            Qty::Var(ix(var::qd(c))?),
                        ));
                    }
                }
                if sets.imported.contains(c) {
                    let tm = p.tm.get(c).copied().unwrap_or(0.0);
                    if tm != 0.0 {
                        bil.push((
                            tm * exo.pwm[c],
                            LinForm::var(exr),
                            Qty::Var(ix(var::qm(c))?),
                        ));
                    }
                }
            }
            for (i, c) in p.yields.keys() {
                let ti = p.ti.get(i).copied().unwrap_or(0.0);
                if ti != 0.0 {
                    bil.push((
                        ti,
                        LinForm::var(ix(var::pxac(i, c))?),
                        Qty::Var(ix(var::qxac(i, c))?),
                    ));
                }
            }
        }
        for payer in &sets.agents {
            if payer == a {
                continue;
            }
            if *payer == sets.government {
                let t = p.tr_gov.get(a).copied().unwrap_or(0.0);
                lin.push(cpi, t);
            } else if let Some(&s) = p.trsh.get(&(a.clone(), payer.clone())) {
                lin.push(ix(var::yi(payer))?, s);
            }
        }
        lin.push(exr, exo.trrow_in.get(a).copied().unwrap_or(0.0));
        eqs.push(Eq::new(
            format!("income[{a}]"),
            EqKind::Balance { bilinear: bil, linear: lin },
        ));
    }

    // Capital-account incomes: own savings, transfers, foreign inflows,
    // and domestic borrowing.
    for k in &sets.capital_accounts {
        let a = &sets.agent_of[k];
        let bsh = p.bsh.get(k).copied().unwrap_or(0.0);
        let mut lin = LinForm::scaled(ix(var::yk(k))?, -(1.0 - bsh));
        if *a == sets.government {
            let eh_and_tr: f64 = p.tr_gov.values().sum::<f64>() + p.trrow_gov;
            lin.push(ix(var::yi(a))?, 1.0 - p.csh.get(a).copied().unwrap_or(0.0));
            lin.push(cpi, -eh_and_tr);
        } else {
            lin.push(ix(var::yi(a))?, p.savings_share(a));
        }
        for payer in &sets.capital_accounts {
            if payer == k {
                continue;
            }
            if sets.agent_of[payer] == sets.government {
                let t = p.captr_gov.get(k).copied().unwrap_or(0.0);
                lin.push(cpi, t);
            } else if let Some(&s) = p.captr.get(&(k.clone(), payer.clone())) {
                lin.push(ix(var::yk(payer))?, s);
            }
        }
        lin.push(exr, exo.caprow_in.get(k).copied().unwrap_or(0.0));
        eqs.push(Eq::new(
            format!("capital[{k}]"),
            EqKind::Balance {
                bilinear: vec![],
                linear: lin,
            },
        ));
    }

    // External account: net lending to the rest of world.
    {
        let mut bil: Vec<(f64, LinForm, Qty)> = Vec::new();
        let mut lin = LinForm::var(ix(var::LROW.into())?);
        let mut exr_const = exo.brow;
        for c in &sets.commodities {
            if sets.exported.contains(c) {
                bil.push((
                    -exo.pwe[c],
                    LinForm::var(exr),
                    Qty::Var(ix(var::qe(c))?),
                ));
            }
            if sets.imported.contains(c) {
                bil.push((exo.pwm[c], LinForm::var(exr), Qty::Var(ix(var::qm(c))?)));
            }
        }
        for a in &sets.agents {
            exr_const += exo.trrow_in.get(a).copied().unwrap_or(0.0);
            if *a == sets.government {
                lin.push(cpi, p.trrow_gov);
            } else if let Some(&s) = p.trrow_share.get(a) {
                lin.push(ix(var::yi(a))?, s);
            }
        }
        for k in &sets.capital_accounts {
            exr_const += exo.caprow_in.get(k).copied().unwrap_or(0.0);
            if sets.agent_of[k] == sets.government {
                lin.push(cpi, p.caprow_out_gov);
            } else if let Some(&s) = p.caprow_out.get(k) {
                lin.push(ix(var::yk(k))?, s);
            }
        }
        lin.push(exr, -exr_const);
        eqs.push(Eq::new(
            "row_balance",
            EqKind::Balance { bilinear: bil, linear: lin },
        ));
    }

    // Consumer price index over household benchmark weights.
    {
        let mut lin = LinForm::scaled(cpi, -1.0);
        for (c, w) in &p.cpiw {
            lin.push(ix(var::pq(c))?, *w);
        }
        eqs.push(Eq::new(
            "cpi_def",
            EqKind::Balance {
                bilinear: vec![],
                linear: lin,
            },
        ));
    }

    // Financial flows: the dummy picks up any imbalance between lending
    // (plus foreign borrowing) and borrowing (plus net foreign lending).
    {
        let mut lin = LinForm::var(ix(var::WALRAS.into())?);
        for k in &sets.capital_accounts {
            let net = p.bsh.get(k).copied().unwrap_or(0.0)
                - p.lendsh.get(k).copied().unwrap_or(0.0);
            lin.push(ix(var::yk(k))?, net);
        }
        lin.push(exr, -exo.brow);
        lin.push(ix(var::LROW.into())?, 1.0);
        eqs.push(Eq::new(
            "walras",
            EqKind::Balance {
                bilinear: vec![],
                linear: lin,
            },
        ));
    }

    // Numeraire: the index is the yardstick for every nominal flow.
    {
        let lin = LinForm {
            terms: vec![(cpi, 1.0)],
            constant: -p.cpibar,
        };
        eqs.push(Eq::new(
            "numeraire",
            EqKind::Balance {
                bilinear: vec![],
                linear: lin,
            },
        ));
    }

    if eqs.len() != l.len() {
        return Err(ModelError::NotSquare {
            equations: eqs.len(),
            variables: l.len(),
        });
    }

    // Scales from benchmark magnitudes, so residual size means the same
    // thing in every block.
    let x0 = model.benchmark.as_slice();
    for eq in &mut eqs {
        eq.scale = eq.kind.magnitude(x0).max(SCALE_FLOOR);
    }

    let lower = (0..l.len())
        .map(|i| match l.kind(i) {
            VarKind::Signed => f64::NEG_INFINITY,
            _ => {
                if model.benchmark[i] > 0.0 {
                    X_MIN_POSITIVE
                } else {
                    0.0
                }
            }
        })
        .collect();
    let names = l.names().to_vec();
    Ok(ModelSystem { eqs, lower, names })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_check(eq: &Eq, x: &[f64]) {
        let n = x.len();
        let mut analytic = vec![0.0; n];
        eq.partials(x, &mut analytic);
        for j in 0..n {
            let h = 1e-6 * x[j].abs().max(1.0);
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[j] += h;
            xm[j] -= h;
            let fd = (eq.residual(&xp) - eq.residual(&xm)) / (2.0 * h);
            let tol = 1e-5 * analytic[j].abs().max(1.0);
            assert!(
                (analytic[j] - fd).abs() <= tol,
                "{}: ∂/∂x[{j}] analytic {} vs fd {}",
                eq.label,
                analytic[j],
                fd
            );
        }
    }

    #[test]
    fn agg_partials_match_finite_differences() {
        let eq = Eq {
            label: "agg".into(),
            scale: 3.7,
            kind: EqKind::Agg {
                out: Qty::Var(0),
                alpha: 1.4,
                p: -0.6,
                members: vec![
                    (Qty::Var(1), 0.3),
                    (Qty::Scaled(2, 1.8), 0.5),
                    (Qty::Fixed(2.5), 0.2),
                ],
            },
        };
        fd_check(&eq, &[3.1, 1.2, 0.8, 5.0]);
    }

    #[test]
    fn transformation_nest_partials_match_finite_differences() {
        let eq = Eq {
            label: "cet".into(),
            scale: 1.0,
            kind: EqKind::Agg {
                out: Qty::Var(0),
                alpha: 0.9,
                p: 1.5,
                members: vec![(Qty::Var(1), 0.45), (Qty::Var(2), 0.55)],
            },
        };
        fd_check(&eq, &[2.2, 1.1, 1.9]);
    }

    #[test]
    fn powbal_partials_match_finite_differences() {
        let eq = Eq {
            label: "foc".into(),
            scale: 2.0,
            kind: EqKind::PowBal {
                a: 1.3,
                p1: LinForm {
                    terms: vec![(0, 1.2), (1, 0.4)],
                    constant: 0.1,
                },
                e1: 1.6667,
                q1: Qty::Var(2),
                b: 0.7,
                p2: LinForm::var(3),
                e2: -0.5,
                q2: Qty::Var(4),
            },
        };
        fd_check(&eq, &[1.0, 0.9, 2.4, 1.1, 3.3]);
    }

    #[test]
    fn balance_partials_match_finite_differences() {
        let eq = Eq {
            label: "bal".into(),
            scale: 5.0,
            kind: EqKind::Balance {
                bilinear: vec![
                    (1.0, LinForm::var(0), Qty::Var(1)),
                    (
                        -0.8,
                        LinForm {
                            terms: vec![(2, 1.1), (3, 0.2)],
                            constant: 0.0,
                        },
                        Qty::Scaled(4, 2.0),
                    ),
                ],
                linear: LinForm {
                    terms: vec![(5, 3.0)],
                    constant: -1.2,
                },
            },
        };
        fd_check(&eq, &[1.4, 2.0, 1.1, 0.9, 1.7, 0.6]);
    }

    #[test]
    fn clearing_partials_match_finite_differences() {
        let eq = Eq {
            label: "clear".into(),
            scale: 4.1,
            kind: EqKind::Clearing {
                qq: 0,
                pq: 1,
                direct: LinForm {
                    terms: vec![(2, 0.7)],
                    constant: 0.0,
                },
                les: vec![LesTerm {
                    gamma: 0.4,
                    beta: 0.35,
                    budget: LinForm::scaled(3, 0.8),
                    gamma_cost: LinForm {
                        terms: vec![(1, 0.4), (4, 0.9)],
                        constant: 0.0,
                    },
                }],
                inv: LinForm::scaled(5, 0.25),
            },
        };
        fd_check(&eq, &[5.0, 1.2, 2.0, 60.0, 1.1, 8.0]);
    }

    #[test]
    fn incidence_collects_every_touched_variable() {
        let eq = Eq {
            label: "clear".into(),
            scale: 1.0,
            kind: EqKind::Clearing {
                qq: 0,
                pq: 1,
                direct: LinForm::scaled(2, 0.7),
                les: vec![LesTerm {
                    gamma: 0.4,
                    beta: 0.35,
                    budget: LinForm::scaled(3, 0.8),
                    gamma_cost: LinForm::scaled(4, 0.9),
                }],
                inv: LinForm::scaled(5, 0.25),
            },
        };
        let inc = eq.incidence();
        assert_eq!(inc, (0..6).collect::<BTreeSet<_>>());
    }
}
