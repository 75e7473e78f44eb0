//! Running a compilation with a chosen subset of steps: the `Driver` trait,
//! a process-backed implementation for external compilers, and a
//! content-addressed run cache.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitStatus, Stdio};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, OnceLock};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::coverage::{self, CoverageError};
use crate::model::{CoverageSet, ExecutionResult, ModelError, Outcome, Step, StepSequence};

pub const STEPS_PLACEHOLDER: &str = "{steps}";
pub const SCRATCH_PLACEHOLDER: &str = "{scratch}";

#[derive(Debug, Error)]
pub enum DriverError {
    #[error("command `{command}` failed: {reason}")]
    CommandFailed { command: String, reason: String },
    #[error("step enumeration produced no steps")]
    EmptySequence,
    #[error("no coverage file matched {0:?}")]
    CoverageMissing(Vec<String>),
    #[error("invalid driver config: {0}")]
    InvalidConfig(String),
    #[error("subset is not a subsequence of the enumerated steps: {0:?}")]
    NotSubsequence(Vec<String>),
    #[error(transparent)]
    Coverage(#[from] CoverageError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

/// Runs the compiler under test with a retained subset of its steps.
///
/// Implementations must be deterministic: `run` is treated as a pure
/// function of the ordered subset.
pub trait Driver: Send + Sync {
    fn enumerate_steps(&self) -> Result<StepSequence, DriverError>;
    /// Executes build and test with exactly `subset` retained. Uncached.
    fn run(&self, subset: &[String]) -> Result<ExecutionResult, DriverError>;
    /// Stable identity of the configuration; part of every cache key.
    fn fingerprint(&self) -> String;
}

pub fn sha256_hex(parts: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoverageSource {
    NativeJson,
    GcovJson,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpectedOutput {
    Text(String),
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AliasGroup {
    pub sub_steps: Vec<String>,
    /// Sub-step that fixes the logical step's position. Defaults to the
    /// sub-step that executes last.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub representative: Option<String>,
}

fn default_separator() -> String {
    ",".to_string()
}

fn default_workdir() -> PathBuf {
    PathBuf::from(".")
}

/// Configuration of a process-backed driver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriverConfig {
    pub enumerate_command: String,
    /// Must contain `{steps}` exactly once.
    pub run_command: String,
    pub test_command: String,
    pub expected_output: ExpectedOutput,
    pub coverage_source: CoverageSource,
    pub coverage_paths: Vec<String>,
    /// Seconds, per command.
    pub timeout: f64,
    #[serde(default = "default_workdir")]
    pub workdir: PathBuf,
    #[serde(default)]
    pub env: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alias_map: Option<BTreeMap<String, AliasGroup>>,
    #[serde(default = "default_separator")]
    pub step_separator: String,
    /// Prepended to every step name, e.g. `-fno-` for flag-list style.
    #[serde(default)]
    pub step_prefix: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_root: Option<String>,
    /// Where per-run scratch directories (with command logs) are kept.
    /// Temporary directories are used when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scratch_root: Option<PathBuf>,
}

impl DriverConfig {
    pub fn validate(&self) -> Result<(), DriverError> {
        let n = self.run_command.matches(STEPS_PLACEHOLDER).count();
        if n != 1 {
            return Err(DriverError::InvalidConfig(format!(
                "run_command must contain {STEPS_PLACEHOLDER} exactly once (found {n})"
            )));
        }
        if !(self.timeout > 0.0 && self.timeout.is_finite()) {
            return Err(DriverError::InvalidConfig(format!("timeout must be > 0 (got {})", self.timeout)));
        }
        if self.coverage_paths.is_empty() {
            return Err(DriverError::InvalidConfig("coverage_paths is empty".into()));
        }
        if let Some(aliases) = &self.alias_map {
            let mut owner: HashMap<&str, &str> = HashMap::new();
            for (logical, group) in aliases {
                if group.sub_steps.is_empty() {
                    return Err(DriverError::InvalidConfig(format!("alias `{logical}` has no sub-steps")));
                }
                if let Some(r) = &group.representative {
                    if !group.sub_steps.contains(r) {
                        return Err(DriverError::InvalidConfig(format!(
                            "representative `{r}` of `{logical}` is not one of its sub-steps"
                        )));
                    }
                }
                for s in &group.sub_steps {
                    if let Some(prev) = owner.insert(s, logical) {
                        return Err(DriverError::InvalidConfig(format!(
                            "sub-step `{s}` belongs to both `{prev}` and `{logical}`"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Resolves relative paths against `base` (the config file's directory).
    pub fn rebase(&mut self, base: &Path) {
        if self.workdir.is_relative() {
            self.workdir = base.join(&self.workdir);
        }
        if let ExpectedOutput::File(p) = &mut self.expected_output {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if let Some(s) = &mut self.scratch_root {
            if s.is_relative() {
                *s = base.join(&*s);
            }
        }
    }
}

/// Groups enumerated sub-steps into logical steps. Each logical step is
/// positioned at its representative sub-step (by default the last one).
pub fn group_sub_steps(
    sub_steps: &[String],
    aliases: Option<&BTreeMap<String, AliasGroup>>,
) -> Result<StepSequence, DriverError> {
    if sub_steps.is_empty() {
        return Err(DriverError::EmptySequence);
    }
    let Some(aliases) = aliases else {
        return Ok(StepSequence::from_ids(sub_steps)?);
    };
    let mut owner: HashMap<&str, &str> = HashMap::new();
    for (logical, group) in aliases {
        for s in &group.sub_steps {
            owner.insert(s, logical);
        }
    }
    // logical id -> (position key, members in execution order)
    let mut groups: BTreeMap<&str, (usize, Vec<String>)> = BTreeMap::new();
    for (pos, sub) in sub_steps.iter().enumerate() {
        let logical = owner.get(sub.as_str()).copied().unwrap_or(sub.as_str());
        let entry = groups.entry(logical).or_insert((pos, Vec::new()));
        entry.1.push(sub.clone());
        let representative = aliases.get(logical).and_then(|g| g.representative.as_deref());
        match representative {
            Some(r) if r == sub => entry.0 = pos,
            Some(_) => {}
            None => entry.0 = pos,
        }
    }
    let mut ordered: Vec<(usize, &str, Vec<String>)> =
        groups.into_iter().map(|(id, (pos, members))| (pos, id, members)).collect();
    ordered.sort_by_key(|(pos, _, _)| *pos);
    let steps = ordered
        .into_iter()
        .enumerate()
        .map(|(ordinal, (_, id, members))| {
            let mut step = Step::new(id, id, ordinal);
            if aliases.contains_key(id) {
                step.aliases = members;
            }
            step
        })
        .collect();
    Ok(StepSequence::new(steps)?)
}

struct ProcessOutput {
    status: Option<ExitStatus>,
    stdout: Vec<u8>,
    timed_out: bool,
}

fn spawn_logged(
    command: &str,
    workdir: &Path,
    env: &BTreeMap<String, String>,
    timeout: Duration,
    log_dir: &Path,
    label: &str,
) -> Result<ProcessOutput, DriverError> {
    let out_path = log_dir.join(format!("{label}.stdout.log"));
    let err_path = log_dir.join(format!("{label}.stderr.log"));
    let mut child = Command::new("sh")
        .arg("-c")
        .arg(command)
        .current_dir(workdir)
        .envs(env)
        .stdin(Stdio::null())
        .stdout(fs::File::create(&out_path)?)
        .stderr(fs::File::create(&err_path)?)
        .spawn()
        .map_err(|e| DriverError::CommandFailed {
            command: command.to_string(),
            reason: e.to_string(),
        })?;
    let start = Instant::now();
    let mut poll = Duration::from_millis(1);
    let status = loop {
        if let Some(status) = child.try_wait()? {
            break Some(status);
        }
        if start.elapsed() >= timeout {
            let _ = child.kill();
            let _ = child.wait();
            break None;
        }
        std::thread::sleep(poll);
        poll = (poll * 2).min(Duration::from_millis(25));
    };
    Ok(ProcessOutput {
        timed_out: status.is_none(),
        status,
        stdout: fs::read(&out_path)?,
    })
}

/// Commands run under `sh -c`, which reports a child killed by signal N as
/// exit status 128 + N, so those codes count as signals too.
fn killed_by_signal(status: &ExitStatus) -> bool {
    #[cfg(unix)]
    {
        use std::os::unix::process::ExitStatusExt;
        status.signal().is_some() || status.code().is_some_and(|c| (129..=159).contains(&c))
    }
    #[cfg(not(unix))]
    {
        let _ = status;
        false
    }
}

/// Drives an external compiler through shell command templates.
pub struct CommandDriver {
    config: DriverConfig,
    fingerprint: String,
    expected: Vec<u8>,
    sub_steps: OnceLock<(Vec<String>, StepSequence)>,
}

impl CommandDriver {
    pub fn new(config: DriverConfig) -> Result<Self, DriverError> {
        config.validate()?;
        let expected = match &config.expected_output {
            ExpectedOutput::Text(t) => t.clone().into_bytes(),
            ExpectedOutput::File(p) => fs::read(p).map_err(|e| {
                DriverError::InvalidConfig(format!("expected_output file {}: {e}", p.display()))
            })?,
        };
        let canonical = serde_json::to_vec(&config).expect("config serializes");
        let fingerprint = sha256_hex(&[b"command", &canonical, &expected]);
        Ok(CommandDriver {
            config,
            fingerprint,
            expected,
            sub_steps: OnceLock::new(),
        })
    }

    pub fn config(&self) -> &DriverConfig {
        &self.config
    }

    fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.config.timeout)
    }

    fn enumerate_raw(&self) -> Result<Vec<String>, DriverError> {
        let scratch = tempfile::Builder::new().prefix("stepscan-enum").tempdir()?;
        let cmd = self.config.enumerate_command.replace(SCRATCH_PLACEHOLDER, &scratch.path().to_string_lossy());
        let out = spawn_logged(&cmd, &self.config.workdir, &self.config.env, self.timeout(), scratch.path(), "enumerate")?;
        let ok = out.status.map(|s| s.success()).unwrap_or(false);
        if !ok {
            let reason = if out.timed_out {
                "timed out".to_string()
            } else {
                format!("exit status {:?}", out.status.and_then(|s| s.code()))
            };
            return Err(DriverError::CommandFailed { command: cmd, reason });
        }
        Ok(String::from_utf8_lossy(&out.stdout)
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(String::from)
            .collect())
    }

    fn enumerated(&self) -> Result<&(Vec<String>, StepSequence), DriverError> {
        if let Some(v) = self.sub_steps.get() {
            return Ok(v);
        }
        let raw = self.enumerate_raw()?;
        let seq = group_sub_steps(&raw, self.config.alias_map.as_ref())?;
        Ok(self.sub_steps.get_or_init(|| (raw, seq)))
    }

    /// Expands retained logical steps to the sub-steps handed to the compiler,
    /// in execution order.
    fn expand(&self, subset: &[String]) -> Result<Vec<String>, DriverError> {
        let (raw, seq) = self.enumerated()?;
        if !seq.is_subsequence(subset) {
            return Err(DriverError::NotSubsequence(subset.to_vec()));
        }
        let retained: std::collections::HashSet<&str> = subset
            .iter()
            .flat_map(|id| {
                let step = seq.get(id).expect("checked subsequence");
                if step.aliases.is_empty() {
                    vec![step.id.as_str()]
                } else {
                    step.aliases.iter().map(String::as_str).collect()
                }
            })
            .collect();
        Ok(raw.iter().filter(|s| retained.contains(s.as_str())).cloned().collect())
    }

    fn collect_coverage(&self, scratch: &Path) -> Result<Option<CoverageSet>, DriverError> {
        let scratch_s = scratch.to_string_lossy();
        let mut matched = false;
        let mut cov = CoverageSet::new();
        for pattern in &self.config.coverage_paths {
            let pattern = pattern.replace(SCRATCH_PLACEHOLDER, &scratch_s);
            let full = if Path::new(&pattern).is_absolute() {
                pattern
            } else {
                self.config.workdir.join(&pattern).to_string_lossy().into_owned()
            };
            let paths = glob::glob(&full).map_err(|e| DriverError::InvalidConfig(format!("bad glob `{full}`: {e}")))?;
            for path in paths.flatten() {
                matched = true;
                let bytes = fs::read(&path)?;
                let part = match self.config.coverage_source {
                    CoverageSource::NativeJson => coverage::parse_native_json(&bytes)?,
                    CoverageSource::GcovJson => coverage::parse_gcov_json(&bytes, self.config.source_root.as_deref())?,
                };
                cov.extend(part);
            }
        }
        Ok(matched.then_some(cov))
    }

    fn run_in(&self, subset: &[String], scratch: &Path) -> Result<ExecutionResult, DriverError> {
        let expanded = self.expand(subset)?;
        let list = expanded
            .iter()
            .map(|s| format!("{}{}", self.config.step_prefix, s))
            .collect::<Vec<_>>()
            .join(&self.config.step_separator);
        let scratch_s = scratch.to_string_lossy();
        let build_cmd = self
            .config
            .run_command
            .replace(STEPS_PLACEHOLDER, &list)
            .replace(SCRATCH_PLACEHOLDER, &scratch_s);
        let start = Instant::now();
        let build = spawn_logged(&build_cmd, &self.config.workdir, &self.config.env, self.timeout(), scratch, "build")?;
        let outcome = if let Some(status) = build.status.filter(|s| !s.success() && !killed_by_signal(s)) {
            log::debug!("build exited with {status}");
            Outcome::FailBuild
        } else if build.timed_out {
            Outcome::FailTimeout
        } else if build.status.as_ref().is_some_and(killed_by_signal) {
            Outcome::FailCrash
        } else {
            let test_cmd = self.config.test_command.replace(SCRATCH_PLACEHOLDER, &scratch_s);
            let test = spawn_logged(&test_cmd, &self.config.workdir, &self.config.env, self.timeout(), scratch, "test")?;
            match test.status {
                None => Outcome::FailTimeout,
                Some(s) if killed_by_signal(&s) => Outcome::FailCrash,
                Some(s) if !s.success() || test.stdout != self.expected => Outcome::FailWrongOutput,
                Some(_) => Outcome::Pass,
            }
        };
        let wall_time = start.elapsed().as_secs_f64();
        let coverage = match self.collect_coverage(scratch)? {
            Some(c) => c,
            // An aborted process may never flush its coverage counters.
            None if matches!(outcome, Outcome::FailCrash | Outcome::FailTimeout) => {
                log::warn!("no coverage for {outcome} run; using empty set");
                CoverageSet::new()
            }
            None => return Err(DriverError::CoverageMissing(self.config.coverage_paths.clone())),
        };
        Ok(ExecutionResult {
            subset: subset.to_vec(),
            outcome,
            coverage,
            wall_time,
        })
    }
}

impl Driver for CommandDriver {
    fn enumerate_steps(&self) -> Result<StepSequence, DriverError> {
        Ok(self.enumerated()?.1.clone())
    }

    fn run(&self, subset: &[String]) -> Result<ExecutionResult, DriverError> {
        match &self.config.scratch_root {
            Some(root) => {
                let key = sha256_hex(&[subset.join("\n").as_bytes()]);
                let dir = root.join(format!("run-{}", &key[..16]));
                if dir.exists() {
                    fs::remove_dir_all(&dir)?;
                }
                fs::create_dir_all(&dir)?;
                self.run_in(subset, &dir)
            }
            None => {
                let dir = tempfile::Builder::new().prefix("stepscan-run").tempdir()?;
                self.run_in(subset, dir.path())
            }
        }
    }

    fn fingerprint(&self) -> String {
        self.fingerprint.clone()
    }
}

pub fn cache_key(fingerprint: &str, subset: &[String]) -> String {
    let ids: Vec<&[u8]> = subset.iter().map(|s| s.as_bytes()).collect();
    let mut parts: Vec<&[u8]> = vec![fingerprint.as_bytes()];
    parts.extend(ids);
    sha256_hex(&parts)
}

/// Content-addressed store of execution results, in memory and optionally
/// mirrored to one JSON file per key.
#[derive(Debug, Default)]
pub struct RunCache {
    mem: Mutex<HashMap<String, Arc<ExecutionResult>>>,
    dir: Option<PathBuf>,
}

impl RunCache {
    pub fn in_memory() -> Self {
        RunCache::default()
    }

    pub fn on_disk(dir: impl Into<PathBuf>) -> Result<Self, DriverError> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(RunCache {
            mem: Mutex::new(HashMap::new()),
            dir: Some(dir),
        })
    }

    pub fn get(&self, key: &str) -> Option<Arc<ExecutionResult>> {
        if let Some(hit) = self.mem.lock().expect("cache lock").get(key) {
            return Some(hit.clone());
        }
        let dir = self.dir.as_ref()?;
        let bytes = fs::read(dir.join(format!("{key}.json"))).ok()?;
        match serde_json::from_slice::<ExecutionResult>(&bytes) {
            Ok(r) => {
                let r = Arc::new(r);
                self.mem.lock().expect("cache lock").insert(key.to_string(), r.clone());
                Some(r)
            }
            Err(e) => {
                log::warn!("ignoring corrupt cache record {key}: {e}");
                None
            }
        }
    }

    pub fn put(&self, key: &str, result: Arc<ExecutionResult>) -> Result<(), DriverError> {
        if let Some(dir) = &self.dir {
            let tmp = tempfile::NamedTempFile::new_in(dir)?;
            serde_json::to_writer(&tmp, &*result).map_err(io::Error::from)?;
            tmp.persist(dir.join(format!("{key}.json"))).map_err(|e| e.error)?;
        }
        self.mem.lock().expect("cache lock").insert(key.to_string(), result);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.mem.lock().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Removes every cache record in `dir`. Returns the number removed.
pub fn clear_cache_dir(dir: &Path) -> Result<usize, DriverError> {
    if !dir.exists() {
        return Ok(0);
    }
    let mut removed = 0;
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.extension().is_some_and(|e| e == "json") {
            fs::remove_file(&path)?;
            removed += 1;
        }
    }
    Ok(removed)
}

/// A driver plus its run cache. This is what the isolation strategies talk to.
pub struct CachedDriver {
    driver: Arc<dyn Driver>,
    cache: RunCache,
    fingerprint: String,
    steps: OnceLock<StepSequence>,
    spawned: AtomicUsize,
}

impl CachedDriver {
    pub fn new(driver: Arc<dyn Driver>, cache: RunCache) -> Self {
        let fingerprint = driver.fingerprint();
        CachedDriver {
            driver,
            cache,
            fingerprint,
            steps: OnceLock::new(),
            spawned: AtomicUsize::new(0),
        }
    }

    pub fn in_memory(driver: Arc<dyn Driver>) -> Self {
        CachedDriver::new(driver, RunCache::in_memory())
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn enumerate_steps(&self) -> Result<StepSequence, DriverError> {
        if let Some(s) = self.steps.get() {
            return Ok(s.clone());
        }
        let seq = self.driver.enumerate_steps()?;
        Ok(self.steps.get_or_init(|| seq).clone())
    }

    /// Executes `subset`, serving repeated subsets from the cache.
    pub fn execute(&self, subset: &[String]) -> Result<Arc<ExecutionResult>, DriverError> {
        let seq = self.enumerate_steps()?;
        if !seq.is_subsequence(subset) {
            return Err(DriverError::NotSubsequence(subset.to_vec()));
        }
        let key = cache_key(&self.fingerprint, subset);
        if let Some(hit) = self.cache.get(&key) {
            return Ok(hit);
        }
        let result = Arc::new(self.driver.run(subset)?);
        self.spawned.fetch_add(1, Ordering::Relaxed);
        self.cache.put(&key, result.clone())?;
        Ok(result)
    }

    /// Number of executions that actually reached the underlying driver.
    pub fn run_count(&self) -> usize {
        self.spawned.load(Ordering::Relaxed)
    }
}
