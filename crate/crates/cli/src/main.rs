//! `genstudent`: generate simulated student cohorts, collect their answers
//! and analyze quiz items.
//!
//! Exit codes: 0 success, 1 invalid input, 2 backend failure, 3 I/O failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::anyhow;
use clap::{Args, Parser, Subcommand, ValueEnum};

use genstudent_core::backend::{
    BackendConfig, BackendKind, CalibrationCell, CalibrationKey, CalibrationTable, DEFAULT_CALIBRATION,
};
use genstudent_core::experiment::{
    form_effect, form_effect_from_aggregates, randomization_check, randomization_check_from_aggregates,
    reconstruct_responses, validate_design, PermutationConfig, QuizResponses, DEFAULT_PERMUTATIONS,
};
use genstudent_core::fixtures::{self, CrossoverFixture};
use genstudent_core::io::{
    load_cohort, load_json, load_question_bank, load_run, read_score_matrix, run_pipeline, save_json, IoError,
    PipelineError, PipelineInputs, QuestionBankFile,
};
use genstudent_core::knowledge::{generate_cohort, AnswerStatus, CohortSpec};
use genstudent_core::prompt::PromptTemplate;
use genstudent_core::psychometrics::Thresholds;
use genstudent_core::report::{render_report, ExperimentReport, Report, ReportCohort};

#[derive(Debug)]
struct CliError {
    code: u8,
    error: anyhow::Error,
}

impl CliError {
    fn invalid(e: impl Into<anyhow::Error>) -> Self {
        Self {
            code: 1,
            error: e.into(),
        }
    }

    fn backend(e: impl Into<anyhow::Error>) -> Self {
        Self {
            code: 2,
            error: e.into(),
        }
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        let code = if e.is_validation() { 1 } else { 3 };
        Self { code, error: e.into() }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Io(e) => e.into(),
            PipelineError::Backend(e) => Self::backend(e),
            PipelineError::Validation(_) => Self::invalid(e),
        }
    }
}

type CliResult<T = ()> = Result<T, CliError>;

#[derive(Parser)]
#[command(
    name = "genstudent",
    version,
    about = "Simulated student cohorts and quiz item analysis"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate student profiles from a cohort spec.
    Cohort(CohortArgs),
    /// Have every profile answer every question.
    Run(RunArgs),
    /// Item analysis report for one cohort.
    Analyze(AnalyzeArgs),
    /// Item analysis and pairwise comparison of several cohorts.
    Compare(CompareArgs),
    /// Crossover quiz analysis.
    Experiment(ExperimentArgs),
    /// Print the simulator calibration table, optionally with overrides.
    Calibrate(CalibrateArgs),
}

#[derive(Args)]
struct BankArg {
    /// Question bank JSON; defaults to the bundled demo bank.
    #[arg(long)]
    bank: Option<PathBuf>,
}

impl BankArg {
    fn load(&self) -> CliResult<QuestionBankFile> {
        match &self.bank {
            Some(path) => Ok(load_question_bank(path)?),
            None => Ok(fixtures::demo_bank()),
        }
    }
}

#[derive(Args)]
struct CohortArgs {
    #[command(flatten)]
    bank: BankArg,
    /// Cohort spec JSON (`{"rows": [...]}`); defaults to the bank's spec,
    /// then to the standard 45-student spec.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output file; prints to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendChoice {
    Llm,
    Sim,
    Random,
}

impl From<BackendChoice> for BackendKind {
    fn from(b: BackendChoice) -> Self {
        match b {
            BackendChoice::Llm => BackendKind::Llm,
            BackendChoice::Sim => BackendKind::Sim,
            BackendChoice::Random => BackendKind::Random,
        }
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    bank: BankArg,
    /// Cohort JSON written by `genstudent cohort`.
    #[arg(long)]
    cohort: PathBuf,
    #[arg(long, value_enum, default_value = "sim")]
    backend: BackendChoice,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Success probability of the random baseline.
    #[arg(long, default_value_t = 0.7)]
    p_correct: f64,
    /// Base URL of an OpenAI-compatible API.
    #[arg(long, default_value = "https://api.openai.com/v1")]
    endpoint: String,
    #[arg(long, default_value = "gpt-4")]
    model: String,
    /// Environment variable holding the API key.
    #[arg(long, default_value = "OPENAI_API_KEY")]
    api_key_env: String,
    #[arg(long, default_value_t = 4)]
    parallel: usize,
    #[arg(long, default_value_t = 3)]
    max_retries: u32,
    #[arg(long, default_value_t = 60.0)]
    timeout_secs: f64,
    /// Calibration TOML for the simulator.
    #[arg(long)]
    calibration: Option<PathBuf>,
    /// Prompt template file for the LLM backend.
    #[arg(long)]
    template: Option<PathBuf>,
    /// Output directory for the response log, score matrix and manifest.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    bank: BankArg,
    /// Run directory written by `genstudent run`.
    #[arg(long, conflicts_with = "scores", required_unless_present = "scores")]
    run: Option<PathBuf>,
    /// Score matrix CSV (`student_id,Q1,...`).
    #[arg(long)]
    scores: Option<PathBuf>,
    /// Cohort name in the report.
    #[arg(long, default_value = "cohort")]
    name: String,
    /// Directory for report.json and report.md; prints Markdown when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    bank: BankArg,
    /// NAME=DIR of a run directory; repeatable.
    #[arg(long = "run", value_name = "NAME=DIR")]
    runs: Vec<String>,
    /// NAME=CSV of a score matrix; repeatable.
    #[arg(long = "scores", value_name = "NAME=CSV")]
    scores: Vec<String>,
    /// Published cohort: real, generative or random; repeatable.
    #[arg(long = "fixture", value_name = "NAME")]
    fixtures: Vec<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExperimentArgs {
    /// Design (and optional aggregate means) TOML; defaults to the bundled
    /// classroom data.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Per-student quiz responses JSON.
    #[arg(long)]
    responses: Option<PathBuf>,
    /// Run the permutation test on per-student data rebuilt from the
    /// aggregate means.
    #[arg(long, conflicts_with = "responses")]
    reconstruct: bool,
    #[arg(long, default_value_t = DEFAULT_PERMUTATIONS)]
    permutations: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CalibrateArgs {
    /// Calibration TOML to start from; defaults to the bundled table.
    #[arg(long)]
    file: Option<PathBuf>,
    /// Override a cell: STATUS/CONFUSION/FOCUSED=P_CORRECT[,P_PICK],
    /// e.g. `confused/yes/no=0.2,0.8`; repeatable.
    #[arg(long = "set", value_name = "CELL=VALUES")]
    sets: Vec<String>,
    /// Output file; prints to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Cohort(a) => cmd_cohort(a),
        Command::Run(a) => cmd_run(a),
        Command::Analyze(a) => cmd_analyze(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Experiment(a) => cmd_experiment(a),
        Command::Calibrate(a) => cmd_calibrate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.error);
            ExitCode::from(e.code)
        }
    }
}

fn write_or_print(out: Option<&Path>, text: &str) -> CliResult {
    match out {
        Some(path) => fs::write(path, text).map_err(|source| {
            IoError::Write {
                path: path.to_path_buf(),
                source,
            }
            .into()
        }),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn create_dir(dir: &Path) -> CliResult {
    fs::create_dir_all(dir).map_err(|source| {
        IoError::Write {
            path: dir.to_path_buf(),
            source,
        }
        .into()
    })
}

fn cmd_cohort(a: CohortArgs) -> CliResult {
    let bank = a.bank.load()?;
    let spec: CohortSpec = match &a.spec {
        Some(path) => load_json(path)?,
        None => bank.cohort.clone().unwrap_or_else(CohortSpec::standard),
    };
    let cohort =
        generate_cohort(&spec, &bank.universe, &bank.confusion_candidates, a.seed).map_err(CliError::invalid)?;
    log::info!("generated {} profiles", cohort.profiles.len());
    match &a.out {
        Some(path) => save_json(path, &cohort)?,
        None => println!(
            "{}",
            serde_json::to_string_pretty(&cohort).expect("serializable cohort")
        ),
    }
    Ok(())
}

fn cmd_run(a: RunArgs) -> CliResult {
    let bank = a.bank.load()?;
    let cohort = load_cohort(&a.cohort, &bank.universe)?;
    let calibration = match &a.calibration {
        Some(path) => CalibrationTable::load(path).map_err(CliError::invalid)?,
        None => CalibrationTable::default(),
    };
    let template = match &a.template {
        Some(path) => PromptTemplate::load(path).map_err(CliError::invalid)?,
        None => PromptTemplate::default(),
    };
    let config = BackendConfig {
        kind: a.backend.into(),
        endpoint: a.endpoint,
        model: a.model,
        api_key_env: a.api_key_env,
        timeout_secs: a.timeout_secs,
        max_retries: a.max_retries,
        parallel: a.parallel,
        seed: a.seed,
        p_correct: a.p_correct,
        ..BackendConfig::default()
    };
    if config.kind == BackendKind::Llm && std::env::var(&config.api_key_env).map_or(true, |k| k.is_empty()) {
        log::warn!(
            "{} is not set; requests are sent without an API key",
            config.api_key_env
        );
    }
    let out = run_pipeline(
        &PipelineInputs {
            bank: &bank,
            cohort: &cohort,
            cohort_seed: None,
            config: &config,
            calibration: &calibration,
            template: &template,
        },
        &a.out,
    )?;
    let m = &out.manifest;
    eprintln!(
        "run {}: {} answered, {} failed, written to {}",
        m.run_id,
        m.n_answered,
        m.n_failed,
        a.out.display()
    );
    if m.n_failed > 0 && m.n_answered == 0 {
        return Err(CliError::backend(anyhow!(
            "every backend call failed: {:?}",
            m.failures
        )));
    }
    Ok(())
}

fn emit_report(report: &Report, out: Option<&Path>) -> CliResult {
    match out {
        Some(dir) => {
            create_dir(dir)?;
            write_or_print(Some(&dir.join("report.json")), &report.to_json())?;
            write_or_print(Some(&dir.join("report.md")), &report.to_markdown())
        }
        None => write_or_print(None, &report.to_markdown()),
    }
}

fn run_cohort(name: &str, dir: &Path, bank: &QuestionBankFile) -> CliResult<ReportCohort> {
    let run = load_run(dir)?;
    if run.manifest.bank_sha256 != genstudent_core::io::json_hash(bank) {
        log::warn!("{}: run was produced from a different question bank", dir.display());
    }
    ReportCohort::from_log(name, &run.records, &bank.questions).map_err(CliError::invalid)
}

fn scores_cohort(name: &str, path: &Path) -> CliResult<ReportCohort> {
    ReportCohort::from_matrix(name, &read_score_matrix(path)?).map_err(CliError::invalid)
}

fn cmd_analyze(a: AnalyzeArgs) -> CliResult {
    let cohort = match (&a.run, &a.scores) {
        (Some(dir), _) => run_cohort(&a.name, dir, &a.bank.load()?)?,
        (None, Some(path)) => scores_cohort(&a.name, path)?,
        (None, None) => unreachable!("clap requires --run or --scores"),
    };
    let report = render_report(&[cohort], Thresholds::default()).map_err(CliError::invalid)?;
    emit_report(&report, a.out.as_deref())
}

fn split_named(arg: &str) -> CliResult<(&str, &Path)> {
    arg.split_once('=')
        .filter(|(n, p)| !n.is_empty() && !p.is_empty())
        .map(|(n, p)| (n, Path::new(p)))
        .ok_or_else(|| CliError::invalid(anyhow!("expected NAME=PATH, got {arg:?}")))
}

fn cmd_compare(a: CompareArgs) -> CliResult {
    let mut cohorts = Vec::new();
    if !a.runs.is_empty() {
        let bank = a.bank.load()?;
        for arg in &a.runs {
            let (name, dir) = split_named(arg)?;
            cohorts.push(run_cohort(name, dir, &bank)?);
        }
    }
    for arg in &a.scores {
        let (name, path) = split_named(arg)?;
        cohorts.push(scores_cohort(name, path)?);
    }
    if !a.fixtures.is_empty() {
        let f = fixtures::item_means();
        for name in &a.fixtures {
            let c = ReportCohort::from_fixture(&f, name).ok_or_else(|| {
                CliError::invalid(anyhow!(
                    "unknown fixture cohort {name:?}; expected real, generative or random"
                ))
            })?;
            cohorts.push(c);
        }
    }
    if cohorts.is_empty() {
        return Err(CliError::invalid(anyhow!(
            "give at least one --run, --scores or --fixture"
        )));
    }
    let report = render_report(&cohorts, Thresholds::default()).map_err(CliError::invalid)?;
    emit_report(&report, a.out.as_deref())
}

fn cmd_experiment(a: ExperimentArgs) -> CliResult {
    let (data, source): (CrossoverFixture, String) = match &a.data {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|source| IoError::Read {
                path: path.clone(),
                source,
            })?;
            let data =
                fixtures::parse_crossover(&text).map_err(|e| CliError::invalid(anyhow!("{}: {e}", path.display())))?;
            (data, path.display().to_string())
        }
        None => (fixtures::crossover(), "bundled classroom aggregates".to_string()),
    };
    let design = &data.design;
    let warnings = validate_design(design).map_err(CliError::invalid)?.warnings;
    let config = PermutationConfig {
        permutations: a.permutations,
        seed: a.seed,
    };
    let need_aggregates = || {
        data.aggregates
            .as_ref()
            .ok_or_else(|| CliError::invalid(anyhow!("{source} has no aggregate means; pass --responses")))
    };
    let report = if let Some(path) = &a.responses {
        let responses: QuizResponses = load_json(path)?;
        let checks = randomization_check(&responses, design, config).map_err(CliError::invalid)?;
        let fe = form_effect(&responses, design, config).map_err(CliError::invalid)?;
        ExperimentReport::new(&path.display().to_string(), warnings, checks, fe)
    } else if a.reconstruct {
        let responses = reconstruct_responses(need_aggregates()?, design, a.seed).map_err(CliError::invalid)?;
        let checks = randomization_check(&responses, design, config).map_err(CliError::invalid)?;
        let fe = form_effect(&responses, design, config).map_err(CliError::invalid)?;
        ExperimentReport::new(&format!("{source}, rebuilt per student"), warnings, checks, fe)
    } else {
        let agg = need_aggregates()?;
        let checks = randomization_check_from_aggregates(agg, design).map_err(CliError::invalid)?;
        let fe = form_effect_from_aggregates(agg, design).map_err(CliError::invalid)?;
        ExperimentReport::new(&source, warnings, checks, fe)
    };
    match &a.out {
        Some(dir) => {
            create_dir(dir)?;
            write_or_print(Some(&dir.join("experiment.json")), &report.to_json())?;
            write_or_print(Some(&dir.join("experiment.md")), &report.to_markdown())
        }
        None => write_or_print(None, &report.to_markdown()),
    }
}

fn parse_flag(s: &str) -> Option<bool> {
    match s {
        "yes" | "true" | "y" => Some(true),
        "no" | "false" | "n" => Some(false),
        _ => None,
    }
}

fn parse_override(arg: &str) -> CliResult<(CalibrationKey, CalibrationCell)> {
    let bad = || {
        CliError::invalid(anyhow!(
            "expected STATUS/CONFUSION/FOCUSED=P_CORRECT[,P_PICK], got {arg:?}"
        ))
    };
    let (cell, values) = arg.split_once('=').ok_or_else(bad)?;
    let parts: Vec<&str> = cell.split('/').collect();
    let [status, confusion, focused] = parts[..] else {
        return Err(bad());
    };
    let status = match status.to_ascii_lowercase().as_str() {
        "mastered" => AnswerStatus::Mastered,
        "confused" => AnswerStatus::Confused,
        "unknown" => AnswerStatus::Unknown,
        _ => return Err(bad()),
    };
    let key = CalibrationKey::new(
        status,
        parse_flag(confusion).ok_or_else(bad)?,
        parse_flag(focused).ok_or_else(bad)?,
    );
    let mut nums = values.split(',').map(|v| v.trim().parse::<f64>().map_err(|_| bad()));
    let p_correct = nums.next().ok_or_else(bad)??;
    let p_pick = nums.next().transpose()?;
    if nums.next().is_some() {
        return Err(bad());
    }
    Ok((
        key,
        CalibrationCell {
            p_correct,
            p_pick_confused_when_wrong: p_pick,
        },
    ))
}

fn cmd_calibrate(a: CalibrateArgs) -> CliResult {
    let mut table = match &a.file {
        Some(path) => CalibrationTable::load(path).map_err(CliError::invalid)?,
        None => CalibrationTable::from_toml(DEFAULT_CALIBRATION).map_err(CliError::invalid)?,
    };
    for arg in &a.sets {
        let (key, cell) = parse_override(arg)?;
        table = table.with_cell(key, cell).map_err(CliError::invalid)?;
    }
    write_or_print(a.out.as_deref(), &table.to_toml())
}
