//! Shared vocabulary: statements, steps, sequences, outcomes, runs and
//! removal probes, plus the set algebra the rest of the crate builds on.

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::hash::{Hash, Hasher};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ModelError {
    #[error("invalid statement path `{0}`")]
    InvalidPath(String),
    #[error("statement line must be >= 1 (got 0 in `{0}`)")]
    ZeroLine(String),
    #[error("duplicate step id `{0}`")]
    DuplicateStep(String),
    #[error("step `{id}` has ordinal {ordinal} but sits at index {index}")]
    OrdinalMismatch { id: String, ordinal: usize, index: usize },
    #[error("baseline outcome must be a failure, got Pass")]
    PassingBaseline,
}

/// Normalizes a path to forward slashes with `.` and `..` segments collapsed.
///
/// Returns `None` when the result is empty or escapes its root through `..`.
/// Leading `/` is preserved so callers can tell absolute paths apart.
pub fn normalize_path(raw: &str) -> Option<String> {
    let unified = raw.replace('\\', "/");
    let absolute = unified.starts_with('/');
    let mut parts: Vec<&str> = Vec::new();
    for seg in unified.split('/') {
        match seg {
            "" | "." => {}
            ".." => {
                parts.pop()?;
            }
            s => parts.push(s),
        }
    }
    if parts.is_empty() {
        return None;
    }
    let joined = parts.join("/");
    Some(if absolute { format!("/{joined}") } else { joined })
}

/// Makes `path` relative to `root`. Relative inputs are taken as already
/// relative to the root; absolute inputs outside the root are rejected.
pub fn relativize(path: &str, root: Option<&str>) -> Option<String> {
    let norm = normalize_path(path)?;
    if !norm.starts_with('/') {
        return Some(norm);
    }
    let root = normalize_path(root?)?;
    let rest = norm.strip_prefix(&root)?;
    let rest = rest.strip_prefix('/')?;
    normalize_path(rest)
}

/// A compiler source line. Identity is `(file, line)`; the enclosing function
/// is carried along for function-level aggregation only.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StatementId {
    pub file: String,
    pub line: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub function: Option<String>,
}

impl StatementId {
    pub fn new(file: &str, line: u32, function: Option<&str>) -> Result<Self, ModelError> {
        let file_norm = normalize_path(file)
            .filter(|f| !f.starts_with('/'))
            .ok_or_else(|| ModelError::InvalidPath(file.to_string()))?;
        if line == 0 {
            return Err(ModelError::ZeroLine(file.to_string()));
        }
        Ok(StatementId {
            file: file_norm,
            line,
            function: function.map(str::to_string),
        })
    }

    /// Function-level unit id, `file::function`.
    pub fn function_unit(&self) -> Option<String> {
        self.function.as_ref().map(|f| format!("{}::{}", self.file, f))
    }
}

impl PartialEq for StatementId {
    fn eq(&self, other: &Self) -> bool {
        self.file == other.file && self.line == other.line
    }
}

impl Eq for StatementId {}

impl Hash for StatementId {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.file.hash(state);
        self.line.hash(state);
    }
}

impl PartialOrd for StatementId {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for StatementId {
    fn cmp(&self, other: &Self) -> Ordering {
        self.file
            .cmp(&other.file)
            .then_with(|| self.line.cmp(&other.line))
    }
}

impl fmt::Display for StatementId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.file, self.line)
    }
}

/// Executed-statement set for one run. Ordered so serialization is stable.
pub type CoverageSet = BTreeSet<StatementId>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Step {
    pub id: String,
    pub display_name: String,
    pub ordinal: usize,
    /// Sub-step identifiers when one logical step expands to several passes.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub aliases: Vec<String>,
}

impl Step {
    pub fn new(id: impl Into<String>, display_name: impl Into<String>, ordinal: usize) -> Self {
        Step {
            id: id.into(),
            display_name: display_name.into(),
            ordinal,
            aliases: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Step>", into = "Vec<Step>")]
pub struct StepSequence {
    steps: Vec<Step>,
}

impl StepSequence {
    pub fn new(steps: Vec<Step>) -> Result<Self, ModelError> {
        let mut seen = HashSet::new();
        for (index, step) in steps.iter().enumerate() {
            if !seen.insert(step.id.as_str()) {
                return Err(ModelError::DuplicateStep(step.id.clone()));
            }
            if step.ordinal != index {
                return Err(ModelError::OrdinalMismatch {
                    id: step.id.clone(),
                    ordinal: step.ordinal,
                    index,
                });
            }
        }
        Ok(StepSequence { steps })
    }

    /// Builds a sequence from bare ids, assigning ordinals by position.
    pub fn from_ids<S: AsRef<str>>(ids: &[S]) -> Result<Self, ModelError> {
        let steps = ids
            .iter()
            .enumerate()
            .map(|(i, id)| Step::new(id.as_ref(), id.as_ref(), i))
            .collect();
        Self::new(steps)
    }

    pub fn steps(&self) -> &[Step] {
        &self.steps
    }

    pub fn ids(&self) -> Vec<String> {
        self.steps.iter().map(|s| s.id.clone()).collect()
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Step> {
        self.steps.iter().find(|s| s.id == id)
    }

    pub fn ordinal_of(&self, id: &str) -> Option<usize> {
        self.get(id).map(|s| s.ordinal)
    }

    /// True when `subset` lists ids of this sequence in sequence order.
    pub fn is_subsequence<S: AsRef<str>>(&self, subset: &[S]) -> bool {
        let mut it = self.steps.iter();
        subset
            .iter()
            .all(|want| it.any(|s| s.id == want.as_ref()))
    }
}

impl TryFrom<Vec<Step>> for StepSequence {
    type Error = ModelError;
    fn try_from(steps: Vec<Step>) -> Result<Self, Self::Error> {
        StepSequence::new(steps)
    }
}

impl From<StepSequence> for Vec<Step> {
    fn from(seq: StepSequence) -> Self {
        seq.steps
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Outcome {
    Pass,
    FailWrongOutput,
    FailCrash,
    FailTimeout,
    FailBuild,
}

impl Outcome {
    pub fn is_fail(self) -> bool {
        self != Outcome::Pass
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Outcome::Pass => "pass",
            Outcome::FailWrongOutput => "fail-wrong-output",
            Outcome::FailCrash => "fail-crash",
            Outcome::FailTimeout => "fail-timeout",
            Outcome::FailBuild => "fail-build",
        };
        f.write_str(s)
    }
}

/// Flip indicator of a removal probe: the failure disappeared entirely.
/// A change from one failure kind to another is not a flip.
pub fn is_flip(baseline: Outcome, probe: Outcome) -> Result<bool, ModelError> {
    if baseline == Outcome::Pass {
        return Err(ModelError::PassingBaseline);
    }
    Ok(probe == Outcome::Pass)
}

pub fn symmetric_diff(a: &CoverageSet, b: &CoverageSet) -> CoverageSet {
    a.symmetric_difference(b).cloned().collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionResult {
    pub subset: Vec<String>,
    pub outcome: Outcome,
    pub coverage: CoverageSet,
    pub wall_time: f64,
}

/// One step removal compared against the failing run it was removed from.
#[derive(Debug, Clone)]
pub struct RemovalProbe {
    pub removed_step: String,
    pub context_subset: Vec<String>,
    pub baseline: Arc<ExecutionResult>,
    pub probe: Arc<ExecutionResult>,
    pub flipped: bool,
    pub diff: CoverageSet,
}

impl RemovalProbe {
    pub fn new(
        removed_step: &str,
        baseline: Arc<ExecutionResult>,
        probe: Arc<ExecutionResult>,
    ) -> Result<Self, ModelError> {
        let flipped = is_flip(baseline.outcome, probe.outcome)?;
        debug_assert!(baseline.subset.iter().any(|s| s == removed_step));
        debug_assert!(probe.subset.iter().all(|s| s != removed_step));
        let diff = symmetric_diff(&baseline.coverage, &probe.coverage);
        Ok(RemovalProbe {
            removed_step: removed_step.to_string(),
            context_subset: baseline.subset.clone(),
            baseline,
            probe,
            flipped,
            diff,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn s(file: &str, line: u32) -> StatementId {
        StatementId::new(file, line, None).unwrap()
    }

    fn set(items: &[(&str, u32)]) -> CoverageSet {
        items.iter().map(|(f, l)| s(f, *l)).collect()
    }

    #[test]
    fn symmetric_diff_examples() {
        let a = set(&[("f", 1), ("f", 2)]);
        let b = set(&[("f", 2), ("f", 3)]);
        assert_eq!(symmetric_diff(&a, &b), set(&[("f", 1), ("f", 3)]));
        assert!(symmetric_diff(&a, &a).is_empty());
        let c = set(&[("f", 1), ("f", 2), ("f", 3)]);
        assert_eq!(symmetric_diff(&c, &CoverageSet::new()), c);
    }

    #[test]
    fn flip_examples() {
        assert!(is_flip(Outcome::FailWrongOutput, Outcome::Pass).unwrap());
        assert!(!is_flip(Outcome::FailWrongOutput, Outcome::FailCrash).unwrap());
        assert!(!is_flip(Outcome::FailCrash, Outcome::FailCrash).unwrap());
        assert_eq!(
            is_flip(Outcome::Pass, Outcome::Pass),
            Err(ModelError::PassingBaseline)
        );
    }

    #[test]
    fn fail_to_fail_is_never_a_flip() {
        let fails = [
            Outcome::FailWrongOutput,
            Outcome::FailCrash,
            Outcome::FailTimeout,
            Outcome::FailBuild,
        ];
        for a in fails {
            for b in fails {
                assert!(!is_flip(a, b).unwrap());
            }
        }
    }

    #[test]
    fn statement_identity_ignores_function() {
        let a = StatementId::new("x/y.c", 4, Some("foo")).unwrap();
        let b = StatementId::new("x/./y.c", 4, Some("bar")).unwrap();
        assert_eq!(a, b);
        assert!(StatementId::new("x.c", 0, None).is_err());
        assert!(StatementId::new("../x.c", 1, None).is_err());
        assert!(StatementId::new("", 1, None).is_err());
        assert!(StatementId::new("/abs/x.c", 1, None).is_err());
    }

    #[test]
    fn path_normalization() {
        assert_eq!(normalize_path("a\\b\\..\\c.c").as_deref(), Some("a/c.c"));
        assert_eq!(normalize_path("./a//b/c.c").as_deref(), Some("a/b/c.c"));
        assert_eq!(normalize_path("a/../.."), None);
        assert_eq!(
            relativize("/src/llvm/lib/X.cpp", Some("/src/llvm/")).as_deref(),
            Some("lib/X.cpp")
        );
        assert_eq!(relativize("/usr/include/x.h", Some("/src/llvm")), None);
        assert_eq!(relativize("/src/llvmfoo/x.h", Some("/src/llvm")), None);
        assert_eq!(relativize("lib/a.c", None).as_deref(), Some("lib/a.c"));
    }

    #[test]
    fn sequence_invariants() {
        let seq = StepSequence::from_ids(&["a", "b", "c"]).unwrap();
        assert!(seq.is_subsequence(&["a", "c"]));
        assert!(!seq.is_subsequence(&["c", "a"]));
        assert!(seq.is_subsequence::<&str>(&[]));
        assert!(StepSequence::from_ids(&["a", "a"]).is_err());
        let bad = vec![Step::new("a", "a", 1)];
        assert!(StepSequence::new(bad).is_err());
    }

    #[test]
    fn probe_diff_and_flip() {
        let base = Arc::new(ExecutionResult {
            subset: vec!["a".into(), "b".into()],
            outcome: Outcome::FailCrash,
            coverage: set(&[("f", 1), ("f", 2)]),
            wall_time: 0.0,
        });
        let probe = Arc::new(ExecutionResult {
            subset: vec!["a".into()],
            outcome: Outcome::Pass,
            coverage: set(&[("f", 1)]),
            wall_time: 0.0,
        });
        let p = RemovalProbe::new("b", base, probe).unwrap();
        assert!(p.flipped);
        assert_eq!(p.diff, set(&[("f", 2)]));
        assert_eq!(p.context_subset, vec!["a", "b"]);
    }

    fn arb_cov() -> impl Strategy<Value = CoverageSet> {
        proptest::collection::btree_set((0u8..3, 1u32..20), 0..30).prop_map(|v| {
            v.into_iter()
                .map(|(f, l)| s(&format!("f{f}.c"), l))
                .collect()
        })
    }

    proptest! {
        #[test]
        fn symdiff_cardinality(a in arb_cov(), b in arb_cov()) {
            let d = symmetric_diff(&a, &b);
            let inter = a.intersection(&b).count();
            prop_assert_eq!(d.len(), a.len() + b.len() - 2 * inter);
            prop_assert_eq!(&d, &symmetric_diff(&b, &a));
            prop_assert!(d.iter().all(|x| !(a.contains(x) && b.contains(x))));
            prop_assert_eq!(d.is_empty(), a == b);
        }
    }
}
