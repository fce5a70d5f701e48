//! SAM (social accounting matrix) data model, ingestion, validation, and
//! aggregation.
//!
//! A SAM is a square flow matrix over a set of named accounts: `flows[(r, c)]`
//! is the payment from column account `c` to row account `r`. Accounts belong
//! to one of nine macro sets (commodities, margins, industries, taxes,
//! factors, agents, capital accounts, financial flows, rest of world), and the
//! canonical account order is macro-set order first, then lexical by code.
//! Every loader and writer in this module uses that order, which is what makes
//! downstream output byte-for-byte reproducible.
//!
//! Sign convention: cells are non-negative except in rows of accounts tagged
//! as net taxes (macro set `T`), which may carry net subsidies.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use nalgebra::DMatrix;
use thiserror::Error;

use crate::tol::SAM_BALANCE_TOL;
use crate::Money;

// ── Macro sets and account metadata ─────────────────────────────────────────

/// The nine macro account sets, in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MacroSet {
    /// Commodities (goods and services markets).
    Commodity,
    /// Trade and transport margins.
    Margin,
    /// Industries (production activities).
    Industry,
    /// Net tax accounts. Rows of these accounts are signed cells.
    Tax,
    /// Production factors.
    Factor,
    /// Agents' current accounts (households, non-profits, corporations,
    /// government).
    Agent,
    /// Agents' capital accounts.
    Capital,
    /// Financial flows (lending/borrowing clearing account).
    Financial,
    /// Rest of world.
    Row,
}

impl MacroSet {
    pub const ALL: [MacroSet; 9] = [
        MacroSet::Commodity,
        MacroSet::Margin,
        MacroSet::Industry,
        MacroSet::Tax,
        MacroSet::Factor,
        MacroSet::Agent,
        MacroSet::Capital,
        MacroSet::Financial,
        MacroSet::Row,
    ];

    /// Short code used in metadata files.
    pub fn code(self) -> &'static str {
        match self {
            MacroSet::Commodity => "C",
            MacroSet::Margin => "M",
            MacroSet::Industry => "I",
            MacroSet::Tax => "T",
            MacroSet::Factor => "F",
            MacroSet::Agent => "A",
            MacroSet::Capital => "CAP",
            MacroSet::Financial => "FF",
            MacroSet::Row => "ROW",
        }
    }

    pub fn parse(s: &str) -> Option<MacroSet> {
        Self::ALL.iter().copied().find(|m| m.code() == s)
    }
}

impl fmt::Display for MacroSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

/// One named SAM account.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Account {
    pub code: String,
    pub label: String,
    pub macro_set: MacroSet,
}

/// Account metadata table: code → (label, macro set).
#[derive(Debug, Clone, Default)]
pub struct AccountMeta {
    entries: BTreeMap<String, (String, MacroSet)>,
}

impl AccountMeta {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, code: &str, label: &str, macro_set: MacroSet) {
        self.entries
            .insert(code.to_string(), (label.to_string(), macro_set));
    }

    pub fn get(&self, code: &str) -> Option<Account> {
        self.entries.get(code).map(|(label, m)| Account {
            code: code.to_string(),
            label: label.clone(),
            macro_set: *m,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Known account codes in sorted order.
    pub fn codes(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Loads a metadata table from delimited text with header
    /// `code,label,macro`.
    pub fn load(path: &Path, delimiter: u8) -> Result<Self, SamError> {
        let mut rdr = csv::ReaderBuilder::new()
            .delimiter(delimiter)
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| SamError::Io(path.display().to_string(), e.to_string()))?;
        let mut meta = AccountMeta::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| SamError::Io(path.display().to_string(), e.to_string()))?;
            if rec.len() < 3 {
                return Err(SamError::Malformed(format!(
                    "metadata row needs code,label,macro: {rec:?}"
                )));
            }
            let code = &rec[0];
            let macro_set = MacroSet::parse(&rec[2]).ok_or_else(|| {
                SamError::Malformed(format!("unknown macro set {:?} for account {code}", &rec[2]))
            })?;
            if meta.entries.contains_key(code) {
                return Err(SamError::DuplicateAccount(code.to_string()));
            }
            meta.insert(code, &rec[1], macro_set);
        }
        Ok(meta)
    }

    pub fn save(&self, path: &Path, delimiter: u8) -> Result<(), SamError> {
        let mut wtr = csv::WriterBuilder::new()
            .delimiter(delimiter)
            .from_path(path)
            .map_err(|e| SamError::Io(path.display().to_string(), e.to_string()))?;
        wtr.write_record(["code", "label", "macro"])
            .map_err(|e| SamError::Io(path.display().to_string(), e.to_string()))?;
        let mut rows: Vec<(&String, &(String, MacroSet))> = self.entries.iter().collect();
        rows.sort_by_key(|(code, (_, m))| canonical_key(*m, code));
        for (code, (label, m)) in rows {
            wtr.write_record([code.as_str(), label.as_str(), m.code()])
                .map_err(|e| SamError::Io(path.display().to_string(), e.to_string()))?;
        }
        wtr.flush()
            .map_err(|e| SamError::Io(path.display().to_string(), e.to_string()))?;
        Ok(())
    }
}

fn canonical_key(m: MacroSet, code: &str) -> (usize, String) {
    let rank = MacroSet::ALL.iter().position(|x| *x == m).unwrap();
    (rank, code.to_string())
}

/// Ingestion schema for SAM files: cell delimiter plus the account metadata
/// used to resolve codes found in the header.
#[derive(Debug, Clone)]
pub struct SamLayout {
    pub delimiter: u8,
    pub meta: AccountMeta,
}

impl SamLayout {
    pub fn new(meta: AccountMeta) -> Self {
        SamLayout {
            delimiter: b',',
            meta,
        }
    }
}

// ── Errors ───────────────────────────────────────────────────────────────────

#[derive(Debug, Error)]
pub enum SamError {
    #[error("i/o error on {0}: {1}")]
    Io(String, String),
    #[error("malformed input: {0}")]
    Malformed(String),
    #[error("flow table is not square: {rows} rows, {cols} columns")]
    NonSquare { rows: usize, cols: usize },
    #[error("row account order does not match column order at position {0}: {1} vs {2}")]
    RowColMismatch(usize, String, String),
    #[error("duplicate account code {0}")]
    DuplicateAccount(String),
    #[error("account {0} missing from metadata")]
    UnknownAccount(String),
    #[error("negative cell ({row}, {col}) = {value} outside a net-tax row")]
    NegativeCell {
        row: String,
        col: String,
        value: f64,
    },
    #[error("cell ({0}, {1}) is not a number: {2:?}")]
    BadNumber(String, String, String),
    #[error("aggregation map does not cover account {0}")]
    UnmappedAccount(String),
    #[error("aggregation map merges accounts of different macro sets into {0}")]
    MixedMacroMerge(String),
    #[error("preserved account {0} may not be merged or renamed")]
    PreservedMerged(String),
    #[error("account {0} not present in the matrix")]
    NoSuchAccount(String),
}

// ── The Sam type ─────────────────────────────────────────────────────────────

/// Row/column gap of one account, produced by [`Sam::validate`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gap {
    pub code: String,
    pub row_sum: Money,
    pub col_sum: Money,
}

impl Gap {
    /// Receipts minus outlays.
    pub fn gap(&self) -> Money {
        self.row_sum - self.col_sum
    }
}

/// A square social accounting matrix with typed accounts.
///
/// `flows[(r, c)]` is the payment from column account `c` to row account `r`.
/// Accounts are always held in canonical order (macro set, then code).
#[derive(Debug, Clone, PartialEq)]
pub struct Sam {
    accounts: Vec<Account>,
    index: BTreeMap<String, usize>,
    flows: DMatrix<Money>,
    /// Benchmark year label; descriptive metadata only, 0 when unset.
    year: i32,
}

impl Sam {
    /// Builds a SAM from accounts and a dense flow matrix in the *given*
    /// order; the constructor re-sorts both into canonical order.
    pub fn new(accounts: Vec<Account>, flows: DMatrix<Money>) -> Result<Self, SamError> {
        let n = accounts.len();
        if flows.nrows() != n || flows.ncols() != n {
            return Err(SamError::NonSquare {
                rows: flows.nrows(),
                cols: flows.ncols(),
            });
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            canonical_key(accounts[a].macro_set, &accounts[a].code)
                .cmp(&canonical_key(accounts[b].macro_set, &accounts[b].code))
        });
        let sorted: Vec<Account> = order.iter().map(|&i| accounts[i].clone()).collect();
        let mut index = BTreeMap::new();
        for (i, a) in sorted.iter().enumerate() {
            if index.insert(a.code.clone(), i).is_some() {
                return Err(SamError::DuplicateAccount(a.code.clone()));
            }
        }
        let permuted = DMatrix::from_fn(n, n, |r, c| flows[(order[r], order[c])]);
        let sam = Sam {
            accounts: sorted,
            index,
            flows: permuted,
            year: 0,
        };
        sam.check_signs()?;
        Ok(sam)
    }

    pub fn year(&self) -> i32 {
        self.year
    }

    pub fn set_year(&mut self, year: i32) {
        self.year = year;
    }

    fn check_signs(&self) -> Result<(), SamError> {
        for r in 0..self.len() {
            if self.accounts[r].macro_set == MacroSet::Tax {
                continue; // net-tax rows are signed
            }
            for c in 0..self.len() {
                let v = self.flows[(r, c)];
                if v < 0.0 {
                    return Err(SamError::NegativeCell {
                        row: self.accounts[r].code.clone(),
                        col: self.accounts[c].code.clone(),
                        value: v,
                    });
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.accounts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.accounts.is_empty()
    }

    pub fn accounts(&self) -> &[Account] {
        &self.accounts
    }

    pub fn account_index(&self, code: &str) -> Option<usize> {
        self.index.get(code).copied()
    }

    pub fn account(&self, code: &str) -> Result<usize, SamError> {
        self.account_index(code)
            .ok_or_else(|| SamError::NoSuchAccount(code.to_string()))
    }

    pub fn flows(&self) -> &DMatrix<Money> {
        &self.flows
    }

    /// Payment from column account `c` to row account `r` (by position).
    pub fn flow_at(&self, r: usize, c: usize) -> Money {
        self.flows[(r, c)]
    }

    /// Payment from `payer` to `payee` (by code).
    pub fn flow(&self, payee: &str, payer: &str) -> Result<Money, SamError> {
        Ok(self.flows[(self.account(payee)?, self.account(payer)?)])
    }

    pub fn set_flow_at(&mut self, r: usize, c: usize, v: Money) {
        self.flows[(r, c)] = v;
    }

    pub fn add_flow_at(&mut self, r: usize, c: usize, dv: Money) {
        self.flows[(r, c)] += dv;
    }

    pub fn row_sum(&self, r: usize) -> Money {
        (0..self.len()).map(|c| self.flows[(r, c)]).sum()
    }

    pub fn col_sum(&self, c: usize) -> Money {
        (0..self.len()).map(|r| self.flows[(r, c)]).sum()
    }

    /// Sum of all cells.
    pub fn grand_total(&self) -> Money {
        self.flows.sum()
    }

    /// Accounts (by position) belonging to one macro set.
    pub fn macro_members(&self, m: MacroSet) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.accounts[i].macro_set == m)
            .collect()
    }

    /// Per-account row/column gaps larger than `SAM_BALANCE_TOL`.
    ///
    /// An empty result means the matrix is balanced: every account's receipts
    /// equal its outlays within tolerance.
    pub fn validate(&self) -> Vec<Gap> {
        let mut gaps = Vec::new();
        for i in 0..self.len() {
            let row_sum = self.row_sum(i);
            let col_sum = self.col_sum(i);
            if (row_sum - col_sum).abs() > SAM_BALANCE_TOL {
                gaps.push(Gap {
                    code: self.accounts[i].code.clone(),
                    row_sum,
                    col_sum,
                });
            }
        }
        gaps
    }

    /// Inserts a new empty account, re-canonicalizing the order. Returns the
    /// new account's position.
    pub fn insert_account(&mut self, account: Account) -> Result<usize, SamError> {
        if self.index.contains_key(&account.code) {
            return Err(SamError::DuplicateAccount(account.code));
        }
        let mut accounts = self.accounts.clone();
        accounts.push(account.clone());
        let n = self.len();
        let mut flows = DMatrix::zeros(n + 1, n + 1);
        flows.view_mut((0, 0), (n, n)).copy_from(&self.flows);
        let year = self.year;
        *self = Sam::new(accounts, flows)?;
        self.year = year;
        Ok(self.account_index(&account.code).unwrap())
    }

    /// Removes an account whose row and column are entirely zero.
    pub fn remove_empty_account(&mut self, code: &str) -> Result<(), SamError> {
        let i = self.account(code)?;
        if self.row_sum(i).abs() > 0.0 || self.col_sum(i).abs() > 0.0 {
            return Err(SamError::Malformed(format!(
                "account {code} still carries flows; refusing to drop it"
            )));
        }
        let accounts: Vec<Account> = self
            .accounts
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .map(|(_, a)| a.clone())
            .collect();
        let flows = self.flows.clone().remove_row(i).remove_column(i);
        let year = self.year;
        *self = Sam::new(accounts, flows)?;
        self.year = year;
        Ok(())
    }

    // ── Ingestion and serialization ──────────────────────────────────────────

    /// Loads a SAM from delimited text. The first row and first column carry
    /// account codes (identical order required); every code must resolve in
    /// the layout's metadata.
    pub fn load(path: &Path, layout: &SamLayout) -> Result<Self, SamError> {
        let mut rdr = csv::ReaderBuilder::new()
            .delimiter(layout.delimiter)
            .has_headers(false)
            .trim(csv::Trim::All)
            .flexible(true)
            .from_path(path)
            .map_err(|e| SamError::Io(path.display().to_string(), e.to_string()))?;
        let mut rows: Vec<csv::StringRecord> = Vec::new();
        for rec in rdr.records() {
            rows.push(rec.map_err(|e| SamError::Io(path.display().to_string(), e.to_string()))?);
        }
        if rows.is_empty() {
            return Err(SamError::Malformed("empty SAM file".into()));
        }
        let header = &rows[0];
        let col_codes: Vec<String> = header.iter().skip(1).map(|s| s.to_string()).collect();
        let n = col_codes.len();
        if rows.len() - 1 != n {
            return Err(SamError::NonSquare {
                rows: rows.len() - 1,
                cols: n,
            });
        }
        let mut accounts = Vec::with_capacity(n);
        let mut flows = DMatrix::zeros(n, n);
        for (r, rec) in rows.iter().skip(1).enumerate() {
            if rec.len() != n + 1 {
                return Err(SamError::NonSquare {
                    rows: n,
                    cols: rec.len() - 1,
                });
            }
            let row_code = rec[0].to_string();
            if row_code != col_codes[r] {
                return Err(SamError::RowColMismatch(r, row_code, col_codes[r].clone()));
            }
            let account = layout
                .meta
                .get(&row_code)
                .ok_or_else(|| SamError::UnknownAccount(row_code.clone()))?;
            accounts.push(account);
            for c in 0..n {
                let cell = rec[c + 1].trim();
                let v: f64 = if cell.is_empty() {
                    0.0
                } else {
                    cell.parse().map_err(|_| {
                        SamError::BadNumber(row_code.clone(), col_codes[c].clone(), cell.into())
                    })?
                };
                flows[(r, c)] = v;
            }
        }
        Sam::new(accounts, flows)
    }

    /// Writes the SAM as delimited text in canonical order. Cells use the
    /// shortest decimal representation that round-trips, so `load(save(s))`
    /// reproduces `flows` exactly and repeated saves are byte-identical.
    pub fn save(&self, path: &Path, delimiter: u8) -> Result<(), SamError> {
        let mut wtr = csv::WriterBuilder::new()
            .delimiter(delimiter)
            .from_path(path)
            .map_err(|e| SamError::Io(path.display().to_string(), e.to_string()))?;
        let mut header = vec!["account".to_string()];
        header.extend(self.accounts.iter().map(|a| a.code.clone()));
        wtr.write_record(&header)
            .map_err(|e| SamError::Io(path.display().to_string(), e.to_string()))?;
        for r in 0..self.len() {
            let mut rec = vec![self.accounts[r].code.clone()];
            for c in 0..self.len() {
                rec.push(format_cell(self.flows[(r, c)]));
            }
            wtr.write_record(&rec)
                .map_err(|e| SamError::Io(path.display().to_string(), e.to_string()))?;
        }
        wtr.flush()
            .map_err(|e| SamError::Io(path.display().to_string(), e.to_string()))?;
        Ok(())
    }

    /// Metadata table for the current account set.
    pub fn meta(&self) -> AccountMeta {
        let mut meta = AccountMeta::new();
        for a in &self.accounts {
            meta.insert(&a.code, &a.label, a.macro_set);
        }
        meta
    }

    // ── Aggregation ──────────────────────────────────────────────────────────

    /// Merges detailed accounts into model accounts. Gaps are additive: the
    /// gap of a merged account equals the sum of its constituents' gaps.
    pub fn aggregate(&self, map: &AggregationMap) -> Result<Sam, SamError> {
        // Resolve each detailed account to a target code.
        let mut target_of: Vec<String> = Vec::with_capacity(self.len());
        for a in &self.accounts {
            let target = match map.target(&a.code) {
                Some(t) => t.to_string(),
                None => return Err(SamError::UnmappedAccount(a.code.clone())),
            };
            if map.is_preserved(&a.code) && target != a.code {
                return Err(SamError::PreservedMerged(a.code.clone()));
            }
            target_of.push(target);
        }
        // Build the target account list, checking macro consistency.
        let mut targets: BTreeMap<String, MacroSet> = BTreeMap::new();
        for (i, t) in target_of.iter().enumerate() {
            let m = self.accounts[i].macro_set;
            match targets.get(t) {
                None => {
                    targets.insert(t.clone(), m);
                }
                Some(prev) if *prev != m => {
                    return Err(SamError::MixedMacroMerge(t.clone()));
                }
                _ => {}
            }
        }
        let accounts: Vec<Account> = targets
            .iter()
            .map(|(code, m)| Account {
                code: code.clone(),
                label: self
                    .account_index(code)
                    .map(|i| self.accounts[i].label.clone())
                    .unwrap_or_else(|| code.clone()),
                macro_set: *m,
            })
            .collect();
        let pos: BTreeMap<&String, usize> = accounts
            .iter()
            .enumerate()
            .map(|(i, a)| (&a.code, i))
            .collect();
        let n = accounts.len();
        let mut flows = DMatrix::zeros(n, n);
        for r in 0..self.len() {
            let tr = pos[&target_of[r]];
            for c in 0..self.len() {
                let tc = pos[&target_of[c]];
                flows[(tr, tc)] += self.flows[(r, c)];
            }
        }
        let mut out = Sam::new(accounts.clone(), flows)?;
        out.year = self.year;
        Ok(out)
    }
}

/// Canonical decimal text for a cell: shortest representation that
/// round-trips through `f64` parsing.
pub fn format_cell(v: Money) -> String {
    if v == 0.0 {
        "0".to_string()
    } else {
        format!("{v}")
    }
}

// ── Aggregation map ──────────────────────────────────────────────────────────

/// Detailed-account → model-account mapping with a preserved set that is
/// exempt from merging (the water industries and water commodities in the
/// bundled maps).
#[derive(Debug, Clone, Default)]
pub struct AggregationMap {
    targets: BTreeMap<String, String>,
    preserved: BTreeSet<String>,
}

impl AggregationMap {
    pub fn new() -> Self {
        Self::default()
    }

    /// Identity map over the given accounts.
    pub fn identity(codes: impl IntoIterator<Item = String>) -> Self {
        let mut m = Self::new();
        for c in codes {
            m.targets.insert(c.clone(), c);
        }
        m
    }

    pub fn map_to(&mut self, detailed: &str, model: &str) {
        self.targets.insert(detailed.into(), model.into());
    }

    pub fn preserve(&mut self, code: &str) {
        self.targets.insert(code.into(), code.into());
        self.preserved.insert(code.into());
    }

    pub fn target(&self, detailed: &str) -> Option<&str> {
        self.targets.get(detailed).map(|s| s.as_str())
    }

    pub fn is_preserved(&self, code: &str) -> bool {
        self.preserved.contains(code)
    }

    pub fn preserved(&self) -> impl Iterator<Item = &str> {
        self.preserved.iter().map(|s| s.as_str())
    }

    /// Loads a map from delimited text with header
    /// `detailed_code,model_code,preserved` (preserved: `1`/`0`).
    pub fn load(path: &Path, delimiter: u8) -> Result<Self, SamError> {
        let mut rdr = csv::ReaderBuilder::new()
            .delimiter(delimiter)
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| SamError::Io(path.display().to_string(), e.to_string()))?;
        let mut map = AggregationMap::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| SamError::Io(path.display().to_string(), e.to_string()))?;
            if rec.len() < 3 {
                return Err(SamError::Malformed(format!(
                    "map row needs detailed_code,model_code,preserved: {rec:?}"
                )));
            }
            let preserved = match &rec[2] {
                "1" | "true" => true,
                "0" | "false" => false,
                other => {
                    return Err(SamError::Malformed(format!(
                        "preserved flag must be 0/1, got {other:?}"
                    )))
                }
            };
            if preserved {
                if rec[0] != rec[1] {
                    return Err(SamError::PreservedMerged(rec[0].to_string()));
                }
                map.preserve(&rec[0]);
            } else {
                map.map_to(&rec[0], &rec[1]);
            }
        }
        Ok(map)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn meta3() -> AccountMeta {
        let mut m = AccountMeta::new();
        m.insert("X", "Account X", MacroSet::Agent);
        m.insert("Y", "Account Y", MacroSet::Agent);
        m.insert("Z", "Account Z", MacroSet::Capital);
        m
    }

    fn write_tmp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn loads_three_account_csv_with_zero_off_diagonals() {
        let f = write_tmp("account,X,Y,Z\nX,0,0,0\nY,0,0,0\nZ,0,0,0\n");
        let sam = Sam::load(f.path(), &SamLayout::new(meta3())).unwrap();
        assert_eq!(sam.len(), 3);
        assert!(sam.flows().iter().all(|&v| v == 0.0));
        assert!(sam.validate().is_empty());
    }

    #[test]
    fn rejects_non_square_input() {
        let f = write_tmp("account,X,Y,Z\nX,0,0,0\nY,0,0,0\n");
        let err = Sam::load(f.path(), &SamLayout::new(meta3())).unwrap_err();
        assert!(matches!(err, SamError::NonSquare { .. }));
    }

    #[test]
    fn rejects_row_column_order_mismatch() {
        let f = write_tmp("account,X,Y,Z\nX,0,0,0\nZ,0,0,0\nY,0,0,0\n");
        let err = Sam::load(f.path(), &SamLayout::new(meta3())).unwrap_err();
        assert!(matches!(err, SamError::RowColMismatch(..)));
    }

    #[test]
    fn rejects_unknown_account_code() {
        let f = write_tmp("account,X,Y,W\nX,0,0,0\nY,0,0,0\nW,0,0,0\n");
        let err = Sam::load(f.path(), &SamLayout::new(meta3())).unwrap_err();
        assert!(matches!(err, SamError::UnknownAccount(c) if c == "W"));
    }

    #[test]
    fn rejects_negative_cell_outside_tax_rows() {
        let f = write_tmp("account,X,Y,Z\nX,0,-1,0\nY,0,0,0\nZ,0,0,0\n");
        let err = Sam::load(f.path(), &SamLayout::new(meta3())).unwrap_err();
        assert!(matches!(err, SamError::NegativeCell { .. }));
    }

    #[test]
    fn allows_signed_cells_in_tax_rows() {
        let mut meta = meta3();
        meta.insert("TAX", "Net taxes", MacroSet::Tax);
        let f = write_tmp(
            "account,TAX,X,Y,Z\nTAX,0,-2,0,0\nX,0,0,2,0\nY,0,0,0,0\nZ,0,0,0,0\n",
        );
        let sam = Sam::load(f.path(), &SamLayout::new(meta)).unwrap();
        assert_eq!(sam.flow("TAX", "X").unwrap(), -2.0);
    }

    #[test]
    fn canonical_order_is_macro_then_code() {
        let mut meta = AccountMeta::new();
        meta.insert("b_ind", "", MacroSet::Industry);
        meta.insert("a_com", "", MacroSet::Commodity);
        meta.insert("z_com", "", MacroSet::Commodity);
        let f = write_tmp("account,b_ind,z_com,a_com\nb_ind,0,0,0\nz_com,0,0,0\na_com,0,0,0\n");
        let sam = Sam::load(f.path(), &SamLayout::new(meta)).unwrap();
        let codes: Vec<&str> = sam.accounts().iter().map(|a| a.code.as_str()).collect();
        assert_eq!(codes, ["a_com", "z_com", "b_ind"]);
    }

    #[test]
    fn validate_reports_symmetric_gap_pair_after_perturbation() {
        let f = write_tmp("account,X,Y,Z\nX,0,5,0\nY,5,0,0\nZ,0,0,0\n");
        let mut sam = Sam::load(f.path(), &SamLayout::new(meta3())).unwrap();
        assert!(sam.validate().is_empty());
        let (x, y) = (sam.account("X").unwrap(), sam.account("Y").unwrap());
        sam.add_flow_at(x, y, 5.0);
        let gaps = sam.validate();
        assert_eq!(gaps.len(), 2);
        assert_eq!(gaps[0].code, "X");
        assert!((gaps[0].gap() - 5.0).abs() < 1e-12);
        assert_eq!(gaps[1].code, "Y");
        assert!((gaps[1].gap() + 5.0).abs() < 1e-12);
    }

    #[test]
    fn round_trip_preserves_flows_and_text() {
        let f = write_tmp("account,X,Y,Z\nX,0,5.25,0\nY,1.125,0,3\nZ,0.0625,2,0\n");
        let sam = Sam::load(f.path(), &SamLayout::new(meta3())).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("once.csv");
        let p2 = dir.path().join("twice.csv");
        sam.save(&p1, b',').unwrap();
        let sam2 = Sam::load(&p1, &SamLayout::new(meta3())).unwrap();
        assert_eq!(sam.flows(), sam2.flows());
        sam2.save(&p2, b',').unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn identity_aggregation_is_identity() {
        let f = write_tmp("account,X,Y,Z\nX,0,5,0\nY,5,0,0\nZ,0,0,0\n");
        let sam = Sam::load(f.path(), &SamLayout::new(meta3())).unwrap();
        let map =
            AggregationMap::identity(sam.accounts().iter().map(|a| a.code.clone()));
        let agg = sam.aggregate(&map).unwrap();
        assert_eq!(agg, sam);
    }

    #[test]
    fn merge_sums_cells() {
        // Accounts X and Y merge into XY: their mutual 3+4 flows become a
        // 7 on the diagonal of the merged account.
        let f = write_tmp("account,X,Y,Z\nX,0,3,0\nY,4,0,0\nZ,0,0,0\n");
        let sam = Sam::load(f.path(), &SamLayout::new(meta3())).unwrap();
        let mut map = AggregationMap::new();
        map.map_to("X", "XY");
        map.map_to("Y", "XY");
        map.map_to("Z", "Z");
        let agg = sam.aggregate(&map).unwrap();
        assert_eq!(agg.len(), 2);
        assert_eq!(agg.flow("XY", "XY").unwrap(), 7.0);
        assert_eq!(agg.grand_total(), sam.grand_total());
    }

    #[test]
    fn aggregation_rejects_unmapped_and_mixed_macro() {
        let f = write_tmp("account,X,Y,Z\nX,0,3,0\nY,4,0,0\nZ,0,0,0\n");
        let sam = Sam::load(f.path(), &SamLayout::new(meta3())).unwrap();
        let mut partial = AggregationMap::new();
        partial.map_to("X", "XY");
        assert!(matches!(
            sam.aggregate(&partial).unwrap_err(),
            SamError::UnmappedAccount(_)
        ));
        let mut mixed = AggregationMap::new();
        mixed.map_to("X", "XZ");
        mixed.map_to("Z", "XZ"); // Agent + Capital
        mixed.map_to("Y", "Y");
        assert!(matches!(
            sam.aggregate(&mixed).unwrap_err(),
            SamError::MixedMacroMerge(_)
        ));
    }

    #[test]
    fn merged_account_gap_is_sum_of_constituent_gaps() {
        // X and Y are individually unbalanced but their merge nets out part
        // of the gap; aggregation must add gaps, not recompute from scratch.
        let mut meta = meta3();
        meta.insert("W", "", MacroSet::Agent);
        let f = write_tmp(
            "account,W,X,Y,Z\nW,0,0,0,6\nX,0,0,3,0\nY,1,4,0,0\nZ,0,0,0,0\n",
        );
        let sam = Sam::load(f.path(), &SamLayout::new(meta)).unwrap();
        let gx = sam.validate();
        let gap_of = |code: &str| {
            gx.iter()
                .find(|g| g.code == code)
                .map(|g| g.gap())
                .unwrap_or(0.0)
        };
        let expected = gap_of("X") + gap_of("Y");
        let mut map = AggregationMap::new();
        map.map_to("W", "W");
        map.map_to("X", "XY");
        map.map_to("Y", "XY");
        map.map_to("Z", "Z");
        let agg = sam.aggregate(&map).unwrap();
        let gaps = agg.validate();
        let merged_gap = gaps
            .iter()
            .find(|g| g.code == "XY")
            .map(|g| g.gap())
            .unwrap_or(0.0);
        assert!((merged_gap - expected).abs() < 1e-12);
    }

    #[test]
    fn preserved_accounts_must_map_to_themselves() {
        let f = write_tmp("detailed_code,model_code,preserved\nX,XY,1\n");
        assert!(matches!(
            AggregationMap::load(f.path(), b','),
            Err(SamError::PreservedMerged(_))
        ));
    }

    #[test]
    fn insert_and_remove_account_round_trip() {
        let f = write_tmp("account,X,Y,Z\nX,0,5,0\nY,5,0,0\nZ,0,0,0\n");
        let mut sam = Sam::load(f.path(), &SamLayout::new(meta3())).unwrap();
        let before = sam.clone();
        sam.insert_account(Account {
            code: "WAT".into(),
            label: "Water".into(),
            macro_set: MacroSet::Factor,
        })
        .unwrap();
        assert_eq!(sam.len(), 4);
        sam.remove_empty_account("WAT").unwrap();
        assert_eq!(sam, before);
    }
}
