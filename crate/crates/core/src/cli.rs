//! Command-line entry point.
//!
//! Exit codes: 0 success, 1 usage or input error, 2 failure does not
//! reproduce, 3 driver or isolation error, 4 no bug could be evaluated.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::config::{load_driver, load_scenario, ConfigFile, TestbedConfig};
use crate::coverage::emit_native_json;
use crate::driver::{clear_cache_dir, CachedDriver, CoverageSource, DriverConfig, ExpectedOutput, RunCache};
use crate::eval::{evaluate, DatasetManifest, EvalConfig, EvalOptions, GroundTruth, ManifestBug, StrategyKind};
use crate::isolation::{isolate, IsolationError};
use crate::scoring::{report_for, Granularity, RankedReport, Scorer, ScoringOptions};
use crate::testbed::passes::run_pipeline;
use crate::testbed::{generate_scenarios, SeededBug};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_NOT_REPRODUCIBLE: i32 = 2;
pub const EXIT_DRIVER: i32 = 3;
pub const EXIT_NOTHING_EVALUATED: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "stepscan", version, about = "Localize compiler bugs by removing compilation steps")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Verb,
}

#[derive(Debug, Subcommand)]
pub enum Verb {
    /// Isolate bug-causing steps for one failing configuration and rank code units.
    Isolate(IsolateArgs),
    /// Evaluate strategies and scorers over a dataset manifest.
    Eval(EvalArgs),
    /// Generate seeded-bug scenarios with driver configs and a manifest.
    TestbedGen(GenArgs),
    /// Compile a scenario program with the toy compiler, acting as an external compiler.
    TestbedRun(RunArgs),
    /// Delete all cached run records.
    CacheClear(ClearArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Table,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    #[arg(long, default_value = "file", value_parser = parse_from_str::<Granularity>)]
    pub granularity: Granularity,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
    /// Write the report here instead of stdout.
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "table")]
    pub format: Format,
    /// Count only positively scored statements in the Rank-Sum length
    /// instead of every observed statement of the unit.
    #[arg(long)]
    pub ranksum_scored_only: bool,
}

#[derive(Debug, Args)]
pub struct IsolateArgs {
    pub config: PathBuf,
    #[arg(long, default_value = "tail", value_parser = parse_from_str::<StrategyKind>)]
    pub strategy: StrategyKind,
    #[arg(long, default_value = "compscan", value_parser = parse_from_str::<Scorer>)]
    pub scorer: Scorer,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    pub manifest: PathBuf,
    /// Repeatable or comma-separated.
    #[arg(long, value_delimiter = ',', default_value = "tail", value_parser = parse_from_str::<StrategyKind>)]
    pub strategy: Vec<StrategyKind>,
    /// Repeatable or comma-separated.
    #[arg(long, value_delimiter = ',', default_value = "compscan", value_parser = parse_from_str::<Scorer>)]
    pub scorer: Vec<Scorer>,
    /// Runs of the rand strategy per bug, aggregated by median rank.
    #[arg(long, default_value_t = 1)]
    pub repeat: usize,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 20)]
    pub count: usize,
    /// Output directory.
    #[arg(long)]
    pub output: PathBuf,
    /// Emit process-backed configs that invoke this executable's
    /// `testbed-run` instead of in-process testbed configs.
    #[arg(long)]
    pub command_driver: bool,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    /// Print the scenario's step ids, one per line, and exit.
    #[arg(long)]
    pub list: bool,
    /// Separator-joined step ids to run.
    #[arg(long, default_value = "")]
    pub steps: String,
    #[arg(long, default_value = ",")]
    pub separator: String,
    /// Native coverage JSON destination.
    #[arg(long)]
    pub coverage: Option<PathBuf>,
    /// Program output destination, one value per line.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ClearArgs {
    #[arg(long)]
    pub cache_dir: PathBuf,
}

fn parse_from_str<T: std::str::FromStr>(s: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    s.parse::<T>().map_err(|e| e.to_string())
}

/// Parses `args` (program name first) and runs the verb.
pub fn main_with_args<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match cli.command {
        Verb::Isolate(a) => cmd_isolate(&a),
        Verb::Eval(a) => cmd_eval(&a),
        Verb::TestbedGen(a) => cmd_testbed_gen(&a),
        Verb::TestbedRun(a) => cmd_testbed_run(&a),
        Verb::CacheClear(a) => cmd_cache_clear(&a),
    }
}

fn fail(code: i32, msg: impl std::fmt::Display) -> i32 {
    eprintln!("stepscan: {msg}");
    code
}

fn emit(output: Option<&Path>, text: &str) -> Result<(), std::io::Error> {
    match output {
        Some(p) => fs::write(p, text),
        None => std::io::stdout().lock().write_all(text.as_bytes()),
    }
}

fn open_cache(dir: Option<&Path>) -> Result<RunCache, crate::driver::DriverError> {
    match dir {
        Some(d) => RunCache::on_disk(d),
        None => Ok(RunCache::in_memory()),
    }
}

#[derive(Debug, Serialize)]
struct IsolateOutput<'a> {
    seed: u64,
    strategy: String,
    scorer: String,
    bug_causing_steps: Vec<String>,
    report: &'a RankedReport,
}

pub fn cmd_isolate(a: &IsolateArgs) -> i32 {
    let driver = match load_driver(&a.config) {
        Ok(d) => d,
        Err(e) => return fail(EXIT_DRIVER, e),
    };
    let cache = match open_cache(a.common.cache_dir.as_deref()) {
        Ok(c) => c,
        Err(e) => return fail(EXIT_DRIVER, e),
    };
    let cached = CachedDriver::new(driver, cache);
    let strategy = a.strategy.with_seed(a.common.seed);
    let result = match isolate(&cached, strategy, a.common.jobs.max(1)) {
        Ok(r) => r,
        Err(IsolationError::NotReproducible) => return fail(EXIT_NOT_REPRODUCIBLE, IsolationError::NotReproducible),
        Err(e) => return fail(EXIT_DRIVER, e),
    };
    let opts = ScoringOptions {
        scorer: a.scorer,
        granularity: a.common.granularity,
        ranksum_all_statements: !a.common.ranksum_scored_only,
    };
    let report = match report_for(&result, opts, cached.fingerprint()) {
        Ok(r) => r,
        Err(e) => return fail(EXIT_DRIVER, e),
    };
    let out = IsolateOutput {
        seed: a.common.seed,
        strategy: a.strategy.to_string(),
        scorer: a.scorer.to_string(),
        bug_causing_steps: result.bug_causing(),
        report: &report,
    };
    let text = match a.common.format {
        Format::Json => serde_json::to_string_pretty(&out).expect("report serializes") + "\n",
        Format::Table => {
            let p = &report.provenance;
            format!(
                "# strategy: {}\n# scorer: {}\n# seed: {}\n# config: {}\n# tool: {}\n# probes: {}\n# wall time: {:.3}s\n# bug-causing steps: {}\n{}",
                out.strategy,
                out.scorer,
                out.seed,
                p.config_fingerprint,
                p.tool_version,
                p.probe_count,
                p.wall_time,
                out.bug_causing_steps.join(" "),
                report.to_table()
            )
        }
    };
    match emit(a.common.output.as_deref(), &text) {
        Ok(()) => EXIT_OK,
        Err(e) => fail(EXIT_USAGE, e),
    }
}

pub fn cmd_eval(a: &EvalArgs) -> i32 {
    let manifest = match DatasetManifest::load(&a.manifest) {
        Ok(m) => m,
        Err(e) => return fail(EXIT_USAGE, e),
    };
    for id in manifest.missing_configs() {
        log::warn!("bug {id}: driver config is missing");
    }
    let mut configs = Vec::new();
    for &strategy in &a.strategy {
        for &scorer in &a.scorer {
            let c = EvalConfig { strategy, scorer };
            if !configs.contains(&c) {
                configs.push(c);
            }
        }
    }
    let opts = EvalOptions {
        configs,
        granularity: a.common.granularity,
        seed: a.common.seed,
        jobs: a.common.jobs.max(1),
        repeat: a.repeat.max(1),
        cache_dir: a.common.cache_dir.clone(),
        ranksum_all_statements: !a.common.ranksum_scored_only,
    };
    let report = evaluate(&manifest, &opts);
    let text = match a.common.format {
        Format::Json => serde_json::to_string_pretty(&report).expect("report serializes") + "\n",
        Format::Table => report.to_table(),
    };
    if let Err(e) = emit(a.common.output.as_deref(), &text) {
        return fail(EXIT_USAGE, e);
    }
    if report.evaluated_bugs == 0 {
        return fail(EXIT_NOTHING_EVALUATED, "no bug could be evaluated");
    }
    EXIT_OK
}

fn shell_quote(s: &str) -> String {
    format!("'{}'", s.replace('\'', r"'\''"))
}

fn command_config(bin: &Path, scenario: &Path, bug: &SeededBug) -> DriverConfig {
    let bin = shell_quote(&bin.to_string_lossy());
    let scen = shell_quote(&scenario.to_string_lossy());
    let expected: String = bug.expected_output.iter().map(|v| format!("{v}\n")).collect();
    DriverConfig {
        enumerate_command: format!("{bin} testbed-run --scenario {scen} --list"),
        run_command: format!(
            "{bin} testbed-run --scenario {scen} --steps '{{steps}}' --coverage {{scratch}}/coverage.json --output {{scratch}}/out.txt"
        ),
        test_command: "cat {scratch}/out.txt".into(),
        expected_output: ExpectedOutput::Text(expected),
        coverage_source: CoverageSource::NativeJson,
        coverage_paths: vec!["{scratch}/coverage.json".into()],
        timeout: 30.0,
        workdir: PathBuf::from("."),
        env: BTreeMap::new(),
        alias_map: None,
        step_separator: ",".into(),
        step_prefix: String::new(),
        source_root: None,
        scratch_root: None,
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> std::io::Result<()> {
    fs::write(path, serde_json::to_string_pretty(value).expect("serializes") + "\n")
}

pub fn cmd_testbed_gen(a: &GenArgs) -> i32 {
    let bugs = match generate_scenarios(a.seed, a.count) {
        Ok(b) => b,
        Err(e) => return fail(EXIT_DRIVER, e),
    };
    let bin = match a.command_driver.then(std::env::current_exe).transpose() {
        Ok(b) => b,
        Err(e) => return fail(EXIT_USAGE, e),
    };
    let scen_dir = a.output.join("scenarios");
    let cfg_dir = a.output.join("configs");
    let res = (|| -> std::io::Result<()> {
        fs::create_dir_all(&scen_dir)?;
        fs::create_dir_all(&cfg_dir)?;
        let mut manifest = DatasetManifest::default();
        for bug in &bugs {
            let scen_path = scen_dir.join(format!("{}.json", bug.id));
            write_json(&scen_path, bug)?;
            let cfg = match &bin {
                Some(bin) => ConfigFile::Command(command_config(bin, &fs::canonicalize(&scen_path)?, bug)),
                None => ConfigFile::Testbed(TestbedConfig {
                    scenario: Some(PathBuf::from("../scenarios").join(format!("{}.json", bug.id))),
                    named: None,
                }),
            };
            let cfg_rel = PathBuf::from("configs").join(format!("{}.json", bug.id));
            write_json(&a.output.join(&cfg_rel), &cfg)?;
            manifest.bugs.push(ManifestBug {
                bug_id: bug.id.clone(),
                driver_config: cfg_rel,
                ground_truth: GroundTruth {
                    files: bug.ground_truth_files().into_iter().collect(),
                    functions: Some(bug.ground_truth_functions().into_iter().collect()),
                },
                tags: vec![bug.template.clone(), format!("{:?}", bug.kind).to_lowercase()],
            });
        }
        write_json(&a.output.join("manifest.json"), &manifest)
    })();
    match res {
        Ok(()) => EXIT_OK,
        Err(e) => fail(EXIT_USAGE, e),
    }
}

/// Behaves like a compiler under test: crashes abort the process, other
/// runs write the compiled program's output and native coverage.
pub fn cmd_testbed_run(a: &RunArgs) -> i32 {
    let bug = match load_scenario(&a.scenario) {
        Ok(b) => b,
        Err(e) => return fail(EXIT_USAGE, e),
    };
    let ids = bug.step_ids();
    if a.list {
        let text: String = ids.iter().map(|id| format!("{id}\n")).collect();
        return match emit(None, &text) {
            Ok(()) => EXIT_OK,
            Err(e) => fail(EXIT_USAGE, e),
        };
    }
    let mut passes = Vec::new();
    for id in a.steps.split(a.separator.as_str()).map(str::trim).filter(|s| !s.is_empty()) {
        match ids.iter().position(|s| s == id) {
            Some(pos) => passes.push(bug.pipeline[pos]),
            None => return fail(EXIT_USAGE, format!("unknown step `{id}`")),
        }
    }
    let out = run_pipeline(&bug.program, &passes, Some(bug.defect), a.coverage.is_some());
    if let Some(p) = &a.coverage {
        if let Err(e) = fs::write(p, emit_native_json(&out.coverage)) {
            return fail(EXIT_USAGE, e);
        }
    }
    match out.result {
        Ok(values) => {
            let text: String = values.iter().map(|v| format!("{v}\n")).collect();
            let res = match &a.output {
                Some(p) => fs::write(p, text),
                None => emit(None, &text),
            };
            match res {
                Ok(()) => EXIT_OK,
                Err(e) => fail(EXIT_USAGE, e),
            }
        }
        Err(crash) => {
            eprintln!("stepscan testbed-run: internal compiler error: {crash:?}");
            std::process::abort()
        }
    }
}

pub fn cmd_cache_clear(a: &ClearArgs) -> i32 {
    match clear_cache_dir(&a.cache_dir) {
        Ok(n) => {
            log::info!("removed {n} cached runs");
            EXIT_OK
        }
        Err(e) => fail(EXIT_DRIVER, e),
    }
}
