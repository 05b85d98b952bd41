//! Bradley–Terry ranking of systems from pairwise preference judgments.
//!
//! Ties count as half a win for each side. Strengths are fitted with the
//! minorization–maximization (Zermelo) fixed point and gauged to geometric
//! mean 1. Goodness of fit compares observed and predicted win rates per
//! unordered system pair.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 10_000;
pub const ELO_ANCHOR: f64 = 1000.0;
/// `400 / ln 10`: a strength ratio of 10 is 400 ELO points.
pub const ELO_SCALE: f64 = 400.0 / std::f64::consts::LN_10;
/// Label of the category that pools every record.
pub const OVERALL: &str = "overall";
pub const RESIDUAL_BASIS: &str =
    "unordered pair win rates, ties counted as half a win; R2 total sum of squares about 0.5 (orientation-invariant)";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    A,
    B,
    Tie,
}

impl FromStr for Outcome {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "a" => Ok(Outcome::A),
            "b" => Ok(Outcome::B),
            "tie" => Ok(Outcome::Tie),
            other => Err(Error::Parse(format!("outcome must be a, b or tie, got {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub system_a: String,
    pub system_b: String,
    pub outcome: Outcome,
    pub category: Option<String>,
}

impl Comparison {
    pub fn new(a: &str, b: &str, outcome: Outcome) -> Self {
        Self {
            system_a: a.into(),
            system_b: b.into(),
            outcome,
            category: None,
        }
    }

    pub fn labeled(mut self, category: &str) -> Self {
        self.category = Some(category.into());
        self
    }

    /// Wins credited to `system_a`: 1, 0 or 1/2.
    fn score_a(&self) -> f64 {
        match self.outcome {
            Outcome::A => 1.0,
            Outcome::B => 0.0,
            Outcome::Tie => 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ComparisonSet {
    pub records: Vec<Comparison>,
}

#[derive(Deserialize)]
struct CsvRow {
    system_a: String,
    system_b: String,
    outcome: String,
    #[serde(default)]
    category: Option<String>,
}

impl ComparisonSet {
    pub fn new(records: Vec<Comparison>) -> Result<Self> {
        let set = Self { records };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        for (i, r) in self.records.iter().enumerate() {
            if r.system_a.is_empty() || r.system_b.is_empty() {
                return Err(Error::Parse(format!("record {i}: empty system id")));
            }
            if r.system_a == r.system_b {
                return Err(Error::Parse(format!("record {i}: {} compared with itself", r.system_a)));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Header `system_a,system_b,outcome,category`; `category` may be blank
    /// or absent.
    pub fn from_csv_reader(reader: impl Read) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).flexible(true).from_reader(reader);
        let mut records = Vec::new();
        for (i, row) in rdr.deserialize::<CsvRow>().enumerate() {
            let row = row.map_err(|e| Error::Parse(format!("comparison row {}: {e}", i + 1)))?;
            records.push(Comparison {
                system_a: row.system_a,
                system_b: row.system_b,
                outcome: row.outcome.parse()?,
                category: row.category.filter(|c| !c.is_empty()),
            });
        }
        Self::new(records)
    }

    pub fn from_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv_reader(file)
    }

    pub fn systems(&self) -> BTreeSet<String> {
        self.records
            .iter()
            .flat_map(|r| [r.system_a.clone(), r.system_b.clone()])
            .collect()
    }

    /// Distinct category labels, sorted.
    pub fn categories(&self) -> Vec<String> {
        let set: BTreeSet<&String> = self.records.iter().filter_map(|r| r.category.as_ref()).collect();
        set.into_iter().cloned().collect()
    }

    /// Records carrying `category`; unlabeled records never match.
    pub fn category_split(&self, category: &str) -> ComparisonSet {
        ComparisonSet {
            records: self
                .records
                .iter()
                .filter(|r| r.category.as_deref() == Some(category))
                .cloned()
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrengthTable {
    /// Sorted system ids.
    pub systems: Vec<String>,
    /// Strengths, geometric mean 1.
    pub strengths: Vec<f64>,
    pub elo: Vec<f64>,
    pub iterations: usize,
}

impl StrengthTable {
    pub fn index(&self, system: &str) -> Option<usize> {
        self.systems.binary_search_by(|s| s.as_str().cmp(system)).ok()
    }

    pub fn strength(&self, system: &str) -> Option<f64> {
        self.index(system).map(|i| self.strengths[i])
    }

    /// `P(a beats b) = π_a / (π_a + π_b)`.
    pub fn predicted(&self, a: &str, b: &str) -> Option<f64> {
        let (pa, pb) = (self.strength(a)?, self.strength(b)?);
        Some(pa / (pa + pb))
    }

    /// System ids ordered by decreasing strength, ties by id.
    pub fn ranking(&self) -> Vec<String> {
        let mut idx: Vec<usize> = (0..self.systems.len()).collect();
        idx.sort_by(|&i, &j| self.strengths[j].total_cmp(&self.strengths[i]).then(i.cmp(&j)));
        idx.into_iter().map(|i| self.systems[i].clone()).collect()
    }
}

/// Pairwise win matrix: `wins[i][j]` counts (fractional) wins of `i` over `j`.
struct Tally {
    systems: Vec<String>,
    wins: Vec<Vec<f64>>,
}

impl Tally {
    fn new(data: &ComparisonSet) -> Self {
        let systems: Vec<String> = data.systems().into_iter().collect();
        let pos: BTreeMap<&str, usize> = systems.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
        let n = systems.len();
        let mut wins = vec![vec![0.0; n]; n];
        for r in &data.records {
            let (a, b) = (pos[r.system_a.as_str()], pos[r.system_b.as_str()]);
            let s = r.score_a();
            wins[a][b] += s;
            wins[b][a] += 1.0 - s;
        }
        Self { systems, wins }
    }

    fn games(&self, i: usize, j: usize) -> f64 {
        self.wins[i][j] + self.wins[j][i]
    }

    /// Connected components of the comparison graph, each sorted, listed by
    /// their first member.
    fn components(&self) -> Vec<Vec<String>> {
        let n = self.systems.len();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for i in 0..n {
            for j in i + 1..n {
                if self.games(i, j) > 0.0 {
                    let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
        let mut groups: BTreeMap<usize, Vec<String>> = BTreeMap::new();
        for i in 0..n {
            let root = find(&mut parent, i);
            groups.entry(root).or_default().push(self.systems[i].clone());
        }
        groups.into_values().collect()
    }
}

/// Maximum-likelihood Bradley–Terry strengths.
pub fn fit_bradley_terry(data: &ComparisonSet, tol: f64, max_iter: usize) -> Result<StrengthTable> {
    data.validate()?;
    if data.is_empty() {
        return Err(Error::InsufficientData("no comparisons to fit".into()));
    }
    if data.records.iter().all(|r| r.outcome == Outcome::Tie) {
        return Err(Error::Degenerate("every comparison is a tie".into()));
    }
    let tally = Tally::new(data);
    let comps = tally.components();
    if comps.len() > 1 {
        return Err(Error::Connectivity(comps));
    }
    let n = tally.systems.len();
    let total_wins: Vec<f64> = tally.wins.iter().map(|row| row.iter().sum()).collect();
    for i in 0..n {
        let losses: f64 = (0..n).map(|j| tally.wins[j][i]).sum();
        if total_wins[i] == 0.0 || losses == 0.0 {
            let what = if total_wins[i] == 0.0 { "wins" } else { "losses" };
            return Err(Error::Degenerate(format!(
                "{} has no {what}; its strength diverges",
                tally.systems[i]
            )));
        }
    }

    let mut pi = vec![1.0; n];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        iterations += 1;
        let mut next: Vec<f64> = (0..n)
            .map(|i| {
                let denom: f64 = (0..n)
                    .filter(|&j| j != i)
                    .map(|j| tally.games(i, j) / (pi[i] + pi[j]))
                    .sum();
                total_wins[i] / denom
            })
            .collect();
        let log_mean = next.iter().map(|p| p.ln()).sum::<f64>() / n as f64;
        let g = log_mean.exp();
        next.iter_mut().for_each(|p| *p /= g);
        let change = next
            .iter()
            .zip(&pi)
            .map(|(a, b)| ((a - b) / b).abs())
            .fold(0.0, f64::max);
        pi = next;
        if change < tol {
            converged = true;
            break;
        }
    }
    if !converged || pi.iter().any(|p| !p.is_finite() || *p <= 0.0) {
        return Err(Error::Degenerate(format!(
            "strengths did not converge within {max_iter} iterations; the win graph is not strongly connected"
        )));
    }
    let mut table = StrengthTable {
        systems: tally.systems,
        strengths: pi,
        elo: Vec::new(),
        iterations,
    };
    elo_scores(&mut table, ELO_ANCHOR, ELO_SCALE);
    Ok(table)
}

/// `elo = anchor + scale · ln π`.
pub fn elo_scores(table: &mut StrengthTable, anchor: f64, scale: f64) {
    table.elo = table.strengths.iter().map(|p| anchor + scale * p.ln()).collect();
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitMetrics {
    pub r2: f64,
    pub mae: f64,
    pub rmse: f64,
    /// Number of unordered pairs compared.
    pub pairs: usize,
}

/// Observed win rate per unordered pair `(lower id, higher id)` of the lower
/// id, with its comparison count.
pub fn observed_rates(data: &ComparisonSet) -> BTreeMap<(String, String), (f64, usize)> {
    let mut acc: BTreeMap<(String, String), (f64, usize)> = BTreeMap::new();
    for r in &data.records {
        let (key, s) = if r.system_a < r.system_b {
            ((r.system_a.clone(), r.system_b.clone()), r.score_a())
        } else {
            ((r.system_b.clone(), r.system_a.clone()), 1.0 - r.score_a())
        };
        let e = acc.entry(key).or_insert((0.0, 0));
        e.0 += s;
        e.1 += 1;
    }
    acc.into_iter().map(|(k, (w, n))| (k, (w / n as f64, n))).collect()
}

/// R², MAE and RMSE between observed and predicted pair win rates.
///
/// R² takes its total sum of squares about 1/2, which makes it invariant to
/// swapping the roles of the two systems in any pair.
pub fn goodness_of_fit(table: &StrengthTable, data: &ComparisonSet) -> Result<FitMetrics> {
    let rates = observed_rates(data);
    if rates.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "{} distinct pairs; R² needs at least 2",
            rates.len()
        )));
    }
    let mut obs = Vec::with_capacity(rates.len());
    let mut pred = Vec::with_capacity(rates.len());
    for ((a, b), (rate, _)) in &rates {
        let p = table
            .predicted(a, b)
            .ok_or_else(|| Error::InsufficientData(format!("pair {a}/{b} is not in the strength table")))?;
        obs.push(*rate);
        pred.push(p);
    }
    let n = obs.len() as f64;
    // Every pair counted in both orientations, so the result does not depend
    // on which system is listed first: the mean observed rate is then 1/2,
    // and residuals are mirrored (MAE and RMSE are unchanged).
    let ss_tot: f64 = obs.iter().map(|o| (o - 0.5).powi(2)).sum();
    let resid: Vec<f64> = obs.iter().zip(&pred).map(|(o, p)| o - p).collect();
    let ss_res: f64 = resid.iter().map(|r| r * r).sum();
    if ss_tot == 0.0 {
        return Err(Error::Degenerate("every observed win rate is 1/2; R² is undefined".into()));
    }
    Ok(FitMetrics {
        r2: 1.0 - ss_res / ss_tot,
        mae: resid.iter().map(|r| r.abs()).sum::<f64>() / n,
        rmse: (ss_res / n).sqrt(),
        pairs: obs.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemScore {
    pub system: String,
    pub strength: f64,
    pub elo: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryReport {
    pub category: String,
    pub comparisons: usize,
    /// Strongest first.
    pub systems: Vec<SystemScore>,
    /// Absent when fewer than two pairs were compared.
    pub fit: Option<FitMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingReport {
    pub residual_basis: String,
    /// Overall first, then labeled categories in sorted order.
    pub categories: Vec<CategoryReport>,
}

fn category_report(name: &str, data: &ComparisonSet, tol: f64, max_iter: usize) -> Result<CategoryReport> {
    let table = fit_bradley_terry(data, tol, max_iter)?;
    let fit = match goodness_of_fit(&table, data) {
        Ok(f) => Some(f),
        Err(Error::InsufficientData(_)) | Err(Error::Degenerate(_)) => None,
        Err(e) => return Err(e),
    };
    let systems = table
        .ranking()
        .into_iter()
        .map(|s| {
            let i = table.index(&s).expect("ranked system is in the table");
            SystemScore { system: s, strength: table.strengths[i], elo: table.elo[i] }
        })
        .collect();
    Ok(CategoryReport { category: name.into(), comparisons: data.len(), systems, fit })
}

/// Fit the pooled data and every labeled category.
pub fn rank(data: &ComparisonSet, tol: f64, max_iter: usize) -> Result<RankingReport> {
    let mut categories = vec![category_report(OVERALL, data, tol, max_iter)?];
    for c in data.categories() {
        categories.push(category_report(&c, &data.category_split(&c), tol, max_iter)?);
    }
    Ok(RankingReport { residual_basis: RESIDUAL_BASIS.into(), categories })
}

impl RankingReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// `Category & R² & MAE & RMSE` rows, one per category with a fit.
    pub fn fit_table(&self) -> String {
        let mut s = String::from("Category & R2 & MAE & RMSE\n");
        for c in &self.categories {
            if let Some(f) = c.fit {
                let mut name = c.category.clone();
                if let Some(first) = name.get_mut(0..1) {
                    first.make_ascii_uppercase();
                }
                s.push_str(&format!("{name} & {:.4} & {:.4} & {:.4}\n", f.r2, f.mae, f.rmse));
            }
        }
        s
    }
}
