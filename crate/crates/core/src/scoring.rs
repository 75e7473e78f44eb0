//! Statement suspiciousness from removal probes, the two ablation scorers,
//! and Rank-Sum aggregation to file or function rankings.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::isolation::IsolationResult;
use crate::model::{CoverageSet, ExecutionResult, Outcome, RemovalProbe, StatementId};

pub const DIAG_NO_BUG_CAUSING_STEPS: &str = "no_bug_causing_steps";
pub const DIAG_NO_FLIPPED_PROBES: &str = "no_flipped_probes";
pub const TIE_POLICY: &str = "worst-rank; scores within 1e-12 relative are tied";
const TIE_EPS: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum ScoringError {
    #[error("spectrum has no passing run")]
    DegenerateSpectrum,
    #[error("statements without a {granularity} unit: {orphans:?}")]
    UnmappedStatement { granularity: Granularity, orphans: Vec<StatementId> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scorer {
    /// 1/|diff| of the smallest flipped diff containing the statement.
    Compscan,
    /// Metallaxis over removal probes seen as mutants.
    Mbfl,
    /// Ochiai over every observed run.
    Sbfl,
}

impl fmt::Display for Scorer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scorer::Compscan => "compscan",
            Scorer::Mbfl => "mbfl",
            Scorer::Sbfl => "sbfl",
        })
    }
}

impl FromStr for Scorer {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "compscan" => Ok(Scorer::Compscan),
            "mbfl" => Ok(Scorer::Mbfl),
            "sbfl" => Ok(Scorer::Sbfl),
            _ => Err(format!("unknown scorer `{s}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    File,
    Function,
}

impl fmt::Display for Granularity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Granularity::File => "file",
            Granularity::Function => "function",
        })
    }
}

impl FromStr for Granularity {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "file" => Ok(Granularity::File),
            "function" => Ok(Granularity::Function),
            _ => Err(format!("unknown granularity `{s}`")),
        }
    }
}

impl Granularity {
    pub fn unit_of(self, s: &StatementId) -> Option<String> {
        match self {
            Granularity::File => Some(s.file.clone()),
            Granularity::Function => s.function_unit(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SuspiciousnessMap {
    pub scores: BTreeMap<StatementId, f64>,
    pub diagnostics: Vec<String>,
}

impl SuspiciousnessMap {
    pub fn get(&self, s: &StatementId) -> f64 {
        self.scores.get(s).copied().unwrap_or(0.0)
    }

    fn raise(&mut self, s: &StatementId, v: f64) {
        let e = self.scores.entry(s.clone()).or_insert(v);
        if v > *e {
            *e = v;
        }
    }
}

/// Flipped probes with a usable diff; empty diffs are reported and dropped.
fn flipped_diffs<'a>(probes: &'a [RemovalProbe], out: &mut SuspiciousnessMap) -> Vec<&'a CoverageSet> {
    let mut diffs = Vec::new();
    for p in probes.iter().filter(|p| p.flipped) {
        if p.diff.is_empty() {
            log::warn!("flipped probe for `{}` has an empty coverage diff; dropped", p.removed_step);
            out.diagnostics.push(format!("empty_diff:{}", p.removed_step));
        } else {
            diffs.push(&p.diff);
        }
    }
    if diffs.is_empty() {
        out.diagnostics.push(DIAG_NO_FLIPPED_PROBES.to_string());
    }
    diffs
}

pub fn score_compscan(probes: &[RemovalProbe]) -> SuspiciousnessMap {
    let mut out = SuspiciousnessMap::default();
    for diff in flipped_diffs(probes, &mut out) {
        let v = 1.0 / diff.len() as f64;
        for s in diff {
            out.raise(s, v);
        }
    }
    out
}

/// Metallaxis with a single failing test: a mutant's suspiciousness is
/// `kf / sqrt(tf * (kf + kp))`, which is 1 for a flipped probe.
pub fn score_metallaxis(probes: &[RemovalProbe]) -> SuspiciousnessMap {
    let mut out = SuspiciousnessMap::default();
    let total_failing = 1.0_f64;
    let killed_passing = 0.0_f64;
    for diff in flipped_diffs(probes, &mut out) {
        let killed_failing = 1.0;
        let v = killed_failing / (total_failing * (killed_failing + killed_passing)).sqrt();
        for s in diff {
            out.raise(s, v);
        }
    }
    out
}

pub fn ochiai(ef: usize, ep: usize, total_failing: usize) -> f64 {
    if ef == 0 {
        return 0.0;
    }
    ef as f64 / ((total_failing * (ef + ep)) as f64).sqrt()
}

/// Ochiai over every observed run, labelled by outcome.
pub fn score_ochiai(runs: &[Arc<ExecutionResult>]) -> Result<SuspiciousnessMap, ScoringError> {
    let total_failing = runs.iter().filter(|r| r.outcome.is_fail()).count();
    let passing = runs.iter().filter(|r| r.outcome == Outcome::Pass).count();
    if passing == 0 {
        return Err(ScoringError::DegenerateSpectrum);
    }
    let mut counts: BTreeMap<&StatementId, (usize, usize)> = BTreeMap::new();
    for r in runs {
        for s in &r.coverage {
            let c = counts.entry(s).or_default();
            if r.outcome.is_fail() {
                c.0 += 1;
            } else {
                c.1 += 1;
            }
        }
    }
    let mut out = SuspiciousnessMap::default();
    for (s, (ef, ep)) in counts {
        let v = ochiai(ef, ep, total_failing);
        if v > 0.0 {
            out.scores.insert(s.clone(), v);
        }
    }
    Ok(out)
}

/// Linearly decaying Rank-Sum weights `(n + 1 - i) / (1 + ... + n)`.
pub fn ranksum_weights(n: usize) -> Vec<f64> {
    let total = (n * (n + 1) / 2) as f64;
    (1..=n).map(|i| (n + 1 - i) as f64 / total).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub unit: String,
    pub score: f64,
    pub rank: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub strategy: String,
    pub scorer: String,
    pub config_fingerprint: String,
    pub probe_count: usize,
    pub wall_time: f64,
    pub tool_version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedReport {
    pub granularity: Granularity,
    pub tie_policy: String,
    pub fallback: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub diagnostics: Vec<String>,
    pub provenance: Provenance,
    pub rows: Vec<ReportRow>,
}

impl RankedReport {
    pub fn rank_of(&self, unit: &str) -> Option<usize> {
        self.rows.iter().find(|r| r.unit == unit).map(|r| r.rank)
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let w = self.rows.iter().map(|r| r.rank.to_string().len()).max().unwrap_or(1).max(4);
        let _ = writeln!(s, "{:>w$}  {:>10}  {}", "rank", "score", self.granularity);
        for r in &self.rows {
            let _ = writeln!(s, "{:>w$}  {:>10.6}  {}", r.rank, r.score, r.unit);
        }
        for d in &self.diagnostics {
            let _ = writeln!(s, "# {d}");
        }
        s
    }
}

/// Orders units by score (descending) then id and assigns worst ranks.
/// Scores within the relative tie tolerance are snapped to their group's
/// maximum first.
pub fn rank_units(scores: BTreeMap<String, f64>) -> Vec<ReportRow> {
    let mut rows: Vec<(String, f64)> = scores.into_iter().collect();
    rows.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let mut out = Vec::with_capacity(rows.len());
    let mut i = 0;
    while i < rows.len() {
        let top = rows[i].1;
        let mut j = i + 1;
        while j < rows.len() && top - rows[j].1 <= TIE_EPS * top.abs() {
            j += 1;
        }
        let mut group: Vec<String> = rows[i..j].iter().map(|r| r.0.clone()).collect();
        group.sort();
        out.extend(group.into_iter().map(|unit| ReportRow { unit, score: top, rank: j }));
        i = j;
    }
    out
}

/// Rank-Sum aggregation of statement scores into units.
///
/// With `universe = None`, n counts a unit's positively scored statements.
/// Passing a universe makes n count every statement of the unit found in
/// it, so unscored statements take weight slots.
pub fn aggregate_ranksum(
    scores: &SuspiciousnessMap,
    granularity: Granularity,
    universe: Option<&CoverageSet>,
) -> Result<RankedReport, ScoringError> {
    let mut per_unit: BTreeMap<String, Vec<(f64, &StatementId)>> = BTreeMap::new();
    let mut orphans = Vec::new();
    for (s, &v) in &scores.scores {
        if v <= 0.0 {
            continue;
        }
        match granularity.unit_of(s) {
            Some(u) => per_unit.entry(u).or_default().push((v, s)),
            None => orphans.push(s.clone()),
        }
    }
    if !orphans.is_empty() {
        return Err(ScoringError::UnmappedStatement { granularity, orphans });
    }
    if let Some(all) = universe {
        for s in all {
            if scores.get(s) > 0.0 {
                continue;
            }
            if let Some(u) = granularity.unit_of(s) {
                if let Some(v) = per_unit.get_mut(&u) {
                    v.push((0.0, s));
                }
            }
        }
    }
    let mut unit_scores = BTreeMap::new();
    for (unit, mut stmts) in per_unit {
        stmts.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));
        let w = ranksum_weights(stmts.len());
        let score: f64 = stmts.iter().zip(&w).map(|((v, _), w)| w * v).sum();
        unit_scores.insert(unit, score);
    }
    Ok(RankedReport {
        granularity,
        tie_policy: TIE_POLICY.to_string(),
        fallback: false,
        diagnostics: scores.diagnostics.clone(),
        provenance: Provenance::default(),
        rows: rank_units(unit_scores),
    })
}

/// Uniform report over the failing run's coverage, used when no step was
/// found to be bug-causing.
pub fn compute_fallback(baseline_coverage: &CoverageSet, granularity: Granularity) -> RankedReport {
    let eps = if baseline_coverage.is_empty() { 0.0 } else { 1.0 / baseline_coverage.len() as f64 };
    let units: BTreeSet<String> = baseline_coverage.iter().filter_map(|s| granularity.unit_of(s)).collect();
    let n = units.len();
    RankedReport {
        granularity,
        tie_policy: TIE_POLICY.to_string(),
        fallback: true,
        diagnostics: vec![DIAG_NO_BUG_CAUSING_STEPS.to_string()],
        provenance: Provenance::default(),
        rows: units.into_iter().map(|unit| ReportRow { unit, score: eps, rank: n }).collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScoringOptions {
    pub scorer: Scorer,
    pub granularity: Granularity,
    /// Rank-Sum's n counts every statement of the unit observed in any run.
    /// When false, only statements with a positive score count.
    pub ranksum_all_statements: bool,
}

impl Default for ScoringOptions {
    fn default() -> Self {
        ScoringOptions {
            scorer: Scorer::Compscan,
            granularity: Granularity::File,
            ranksum_all_statements: true,
        }
    }
}

/// Scores an isolation result and aggregates it into a ranked report,
/// falling back to the uniform report when nothing was isolated.
pub fn report_for(result: &IsolationResult, opts: ScoringOptions, fingerprint: &str) -> Result<RankedReport, ScoringError> {
    let provenance = Provenance {
        strategy: result.strategy.to_string(),
        scorer: opts.scorer.to_string(),
        config_fingerprint: fingerprint.to_string(),
        probe_count: result.probe_count,
        wall_time: result.total_wall_time(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
    };
    let scores = if result.is_fallback() {
        None
    } else {
        let m = match opts.scorer {
            Scorer::Compscan => score_compscan(&result.probes),
            Scorer::Mbfl => score_metallaxis(&result.probes),
            Scorer::Sbfl => score_ochiai(&result.all_runs)?,
        };
        (!m.scores.is_empty()).then_some(m)
    };
    let mut report = match scores {
        Some(m) => {
            let universe: CoverageSet;
            let u = if opts.ranksum_all_statements {
                universe = result.all_runs.iter().flat_map(|r| r.coverage.iter().cloned()).collect();
                Some(&universe)
            } else {
                None
            };
            aggregate_ranksum(&m, opts.granularity, u)?
        }
        None => compute_fallback(result.baseline_coverage(), opts.granularity),
    };
    report.provenance = provenance;
    Ok(report)
}
