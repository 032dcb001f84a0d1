#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use adlift_core::features::{rank_factors, ImportanceVector, MiMethod, DEFAULT_RENYI_ALPHA};
use adlift_core::ingest::{
    build_factor_table, parse_events, parse_requests, parse_requests_with, write_events, write_requests, HourlySeries,
    Schema, TableBundle, Window,
};
use adlift_core::pacing::{Decision, PacingState, DEFAULT_BLOCK_SIZE, DEFAULT_GAMMA};
use adlift_core::predictor::{score_batch_parallel, train, SparseRateModel, DEFAULT_BETA, DEFAULT_EPSILON};
use adlift_core::repeatbuy::{
    adjust_for_churn, compare_frequencies, estimate_survival, fit_nbd_truncated, ChurnConfig, FrequencyTable,
    SurvivalTable, DEFAULT_GUARD_GAP_SECS,
};
use adlift_core::report::{format_number, write_csv, write_forecast_report, write_frequency_report, write_json};
use adlift_core::synth::{
    apply_churn, gen_gamma_poisson, gen_inhomogeneous_poisson, gen_requests, hourly_counts, ChurnSpec, SynthSpec,
};
use adlift_core::timeseries::{
    build_virtual_clock, check_alarm, default_window_length, ssa_fit, ssa_forecast, AlarmConfig,
};
use adlift_core::{Error, ErrorCategory};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;
const LABEL_COLUMN: &str = "label";

#[derive(Parser)]
#[command(name = "adlift", version, about = "Conversion-rate scoring and audience analytics pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate seeded synthetic requests, cookie events and hourly series
    Synth(SynthArgs),
    /// Count (level, label) pairs per factor from a request log
    BuildTables(BuildTablesArgs),
    /// Rank factors by mutual information with the label
    Rank(RankArgs),
    /// Train the sparse rate model
    Train(TrainArgs),
    /// Score a request log
    Score(ScoreArgs),
    /// Score and pace a request stream toward an impression target
    Pace(PaceArgs),
    /// Fit a zero-truncated NBD to visit frequencies
    FitNbd(FitNbdArgs),
    /// Estimate mean cookie lifetime per browser
    Survival(SurvivalArgs),
    /// Refit visit frequencies under cookie churn
    AdjustChurn(AdjustChurnArgs),
    /// SSA forecast of an hourly series
    Forecast(ForecastArgs),
    /// Map event times to virtual time
    Virtualize(VirtualizeArgs),
    /// Flag runs of large deviations from a forecast
    Alarm(AlarmArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    spec: PathBuf,
    /// Overrides the seed in the spec
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_requests: Option<PathBuf>,
    #[arg(long)]
    out_schema: Option<PathBuf>,
    #[arg(long)]
    out_events: Option<PathBuf>,
    /// Frequency table (`n,count`) of the generated cookie events
    #[arg(long)]
    out_freq: Option<PathBuf>,
    /// Hourly counts of the generated intensity process
    #[arg(long)]
    out_series: Option<PathBuf>,
}

#[derive(Args)]
struct RequestInput {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = ',')]
    delimiter: char,
}

#[derive(Args)]
struct BuildTablesArgs {
    #[command(flatten)]
    requests: RequestInput,
    /// Schema JSON; without it every column except the label is a factor
    #[arg(long)]
    schema: Option<PathBuf>,
    #[arg(long, default_value = LABEL_COLUMN)]
    label: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Shannon,
    Renyi,
}

#[derive(Args)]
struct RankArgs {
    #[arg(long)]
    tables: PathBuf,
    #[arg(long, value_enum, default_value_t = Method::Renyi)]
    method: Method,
    #[arg(long, default_value_t = DEFAULT_RENYI_ALPHA)]
    alpha: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    tables: PathBuf,
    #[arg(long)]
    importance: PathBuf,
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    epsilon: f64,
    #[arg(long, default_value_t = DEFAULT_BETA)]
    beta: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    requests: RequestInput,
    #[arg(long, default_value = LABEL_COLUMN)]
    label: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PaceArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    requests: RequestInput,
    #[arg(long, default_value = LABEL_COLUMN)]
    label: String,
    #[arg(long)]
    target: u64,
    /// Starting threshold; defaults to the model's global rate
    #[arg(long)]
    initial_threshold: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_BLOCK_SIZE)]
    block: u64,
    #[arg(long, default_value_t = DEFAULT_GAMMA)]
    gamma: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FitNbdArgs {
    #[arg(long, required_unless_present = "events", conflicts_with = "events")]
    freq: Option<PathBuf>,
    #[arg(long)]
    events: Option<PathBuf>,
    #[arg(long, default_value_t = 720.0)]
    window_hours: f64,
    #[arg(long)]
    out: PathBuf,
    /// Per-n observed vs expected CSV
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct SurvivalArgs {
    #[arg(long)]
    events: PathBuf,
    /// `t0:t1` in epoch seconds
    #[arg(long)]
    window: String,
    #[arg(long, default_value_t = DEFAULT_GUARD_GAP_SECS as f64 / 86_400.0)]
    guard_days: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AdjustChurnArgs {
    #[arg(long)]
    freq: PathBuf,
    #[arg(long)]
    survival: PathBuf,
    #[arg(long, default_value_t = 10)]
    threshold: u64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 100_000)]
    users: usize,
    #[arg(long, default_value_t = 720.0)]
    window_hours: f64,
    /// Browser shares of users, `name=share,...`; estimated from the survival table when absent
    #[arg(long)]
    mix: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ForecastArgs {
    #[arg(long)]
    series: PathBuf,
    /// Window length; 168 for series of two weeks or more, else half the length
    #[arg(long = "L")]
    window: Option<usize>,
    /// Rank, or `auto`
    #[arg(long = "r", default_value = "auto")]
    rank: String,
    #[arg(long, default_value_t = 168)]
    horizon: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct VirtualizeArgs {
    /// Hourly intensity used to build the clock
    #[arg(long)]
    series: PathBuf,
    /// Forecast CSV whose `forecast` column replaces the series as intensity
    #[arg(long)]
    forecast: Option<PathBuf>,
    #[arg(long)]
    events: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AlarmArgs {
    #[arg(long)]
    series: PathBuf,
    #[arg(long)]
    forecast: PathBuf,
    #[arg(long = "c", default_value_t = 3.0)]
    sigma_multiplier: f64,
    #[arg(long = "h", default_value_t = 2)]
    consecutive_hours: usize,
    #[arg(long = "R", default_value_t = 168)]
    residual_window: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

enum CliError {
    Usage(String),
    Core(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(Error::Io(e))
    }
}

type CliResult<T = ()> = std::result::Result<T, CliError>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(EXIT_USAGE),
            };
        }
    };
    let result = configure_threads().and_then(|_| dispatch(cli.command));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(CliError::Core(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.category() {
                ErrorCategory::Usage => EXIT_USAGE,
                ErrorCategory::Data => EXIT_DATA,
                ErrorCategory::Numerical => EXIT_NUMERICAL,
            })
        }
    }
}

fn configure_threads() -> CliResult {
    let Ok(raw) = std::env::var("ADLIFT_THREADS") else {
        return Ok(());
    };
    let threads: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Usage(format!("ADLIFT_THREADS must be a positive integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::Usage(format!("cannot configure {threads} threads: {e}")))
}

fn dispatch(command: Command) -> CliResult {
    match command {
        Command::Synth(a) => synth(a),
        Command::BuildTables(a) => build_tables(a),
        Command::Rank(a) => rank(a),
        Command::Train(a) => train_model(a),
        Command::Score(a) => score(a),
        Command::Pace(a) => pace(a),
        Command::FitNbd(a) => fit_nbd(a),
        Command::Survival(a) => survival(a),
        Command::AdjustChurn(a) => adjust_churn(a),
        Command::Forecast(a) => forecast(a),
        Command::Virtualize(a) => virtualize(a),
        Command::Alarm(a) => alarm(a),
    }
}

fn input(path: &Path) -> CliResult<&Path> {
    if path.is_file() {
        Ok(path)
    } else {
        Err(CliError::Usage(format!("input file {} does not exist", path.display())))
    }
}

fn output(path: &Path) -> CliResult<&Path> {
    let parent = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    if parent.is_dir() {
        Ok(path)
    } else {
        Err(CliError::Usage(format!("output directory {} does not exist", parent.display())))
    }
}

fn open(path: &Path) -> CliResult<BufReader<File>> {
    Ok(BufReader::new(File::open(path)?))
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn delimiter(c: char) -> CliResult<u8> {
    u8::try_from(c).map_err(|_| CliError::Usage(format!("delimiter `{c}` is not a single byte")))
}

fn print_json<T: Serialize>(value: &T) -> CliResult {
    write_json(std::io::stdout().lock(), value)?;
    Ok(())
}

fn synth(a: SynthArgs) -> CliResult {
    input(&a.spec)?;
    for p in [&a.out_requests, &a.out_schema, &a.out_events, &a.out_freq, &a.out_series].into_iter().flatten() {
        output(p)?;
    }
    let spec = SynthSpec::from_json(&std::fs::read_to_string(&a.spec)?)?;
    let seed = a.seed.unwrap_or(spec.seed);
    let missing =
        |section: &str, flag: &str| CliError::Usage(format!("{flag} needs a `{section}` section in the spec"));

    if a.out_requests.is_some() || a.out_schema.is_some() {
        let requests = spec.requests.as_ref().ok_or_else(|| missing("requests", "--out-requests"))?;
        let (dictionary, records) = gen_requests(requests, seed)?;
        if let Some(path) = &a.out_requests {
            let mut out = create(path)?;
            write_requests(&mut out, &dictionary, &records, LABEL_COLUMN, b',')?;
            out.flush()?;
        }
        if let Some(path) = &a.out_schema {
            let names = requests.factors.iter().map(|f| f.name.clone()).collect();
            std::fs::write(path, Schema::new(names, LABEL_COLUMN)?.to_json() + "\n")?;
        }
    }
    if a.out_events.is_some() || a.out_freq.is_some() {
        let population = spec.population.as_ref().ok_or_else(|| missing("population", "--out-events"))?;
        let users = gen_gamma_poisson(population, seed.wrapping_add(1))?;
        let no_churn =
            ChurnSpec { tau_days: [("unknown".to_string(), None)].into(), mix: [("unknown".to_string(), 1.0)].into() };
        let churn = spec.churn.as_ref().unwrap_or(&no_churn);
        let events = apply_churn(&users, churn, seed.wrapping_add(1), population.start)?;
        if let Some(path) = &a.out_events {
            let mut out = create(path)?;
            write_events(&mut out, &events)?;
            out.flush()?;
        }
        if let Some(path) = &a.out_freq {
            FrequencyTable::from_events(&events, population.window_hours).write_csv(create(path)?)?;
        }
    }
    if let Some(path) = &a.out_series {
        let intensity = spec.intensity.as_ref().ok_or_else(|| missing("intensity", "--out-series"))?;
        let times = gen_inhomogeneous_poisson(intensity, seed.wrapping_add(2))?;
        let series =
            HourlySeries { start_hour: intensity.start / 3600, counts: hourly_counts(&times, intensity.hours) };
        series.write_csv(create(path)?)?;
    }
    Ok(())
}

fn build_tables(a: BuildTablesArgs) -> CliResult {
    input(&a.requests.input)?;
    output(&a.out)?;
    let delim = delimiter(a.requests.delimiter)?;
    let schema = match &a.schema {
        Some(path) => Schema::from_json(&std::fs::read_to_string(input(path)?)?)?,
        None => {
            let mut reader =
                csv::ReaderBuilder::new().delimiter(delim).from_path(&a.requests.input).map_err(Error::from)?;
            let headers = reader.headers().map_err(Error::from)?;
            let factors = headers.iter().map(str::trim).filter(|h| *h != a.label).map(String::from).collect();
            Schema::new(factors, a.label.clone())?
        }
    };
    let parsed = parse_requests(open(&a.requests.input)?, &schema, delim)?;
    let table = build_factor_table(&parsed.records, &parsed.dictionary);
    let bundle = TableBundle { dictionary: parsed.dictionary, label_column: schema.label_column, table };
    std::fs::write(&a.out, bundle.to_bytes())?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct ImportanceEntry {
    factor: String,
    value: f64,
    rank: usize,
}

#[derive(Serialize, Deserialize)]
struct ImportanceDocument {
    #[serde(flatten)]
    method: MiMethod,
    factors: Vec<ImportanceEntry>,
}

fn load_tables(path: &Path) -> CliResult<TableBundle> {
    Ok(TableBundle::from_bytes(&std::fs::read(input(path)?)?)?)
}

fn rank(a: RankArgs) -> CliResult {
    output(&a.out)?;
    let bundle = load_tables(&a.tables)?;
    let method = match a.method {
        Method::Shannon => MiMethod::Shannon,
        Method::Renyi => MiMethod::Renyi { alpha: a.alpha },
    };
    let names: Vec<&str> = bundle.dictionary.factors().iter().map(|f| f.name()).collect();
    let importance = rank_factors(&bundle.table, method, &names)?;
    let ranks = importance.ranks();
    let doc = ImportanceDocument {
        method,
        factors: importance
            .ranking
            .iter()
            .map(|&i| ImportanceEntry { factor: names[i].to_string(), value: importance.values[i], rank: ranks[i] })
            .collect(),
    };
    write_json(create(&a.out)?, &doc)?;
    Ok(())
}

fn train_model(a: TrainArgs) -> CliResult {
    output(&a.out)?;
    let bundle = load_tables(&a.tables)?;
    let doc: ImportanceDocument = serde_json::from_reader(open(input(&a.importance)?)?).map_err(Error::from)?;
    let by_name: BTreeMap<&str, f64> = doc.factors.iter().map(|e| (e.factor.as_str(), e.value)).collect();
    let values = bundle
        .dictionary
        .factors()
        .iter()
        .map(|f| {
            by_name.get(f.name()).copied().ok_or_else(|| {
                Error::InconsistentInputs(format!("importance file has no entry for factor `{}`", f.name()))
            })
        })
        .collect::<Result<Vec<f64>, Error>>()?;
    if doc.factors.len() != values.len() {
        return Err(Error::DimensionMismatch { expected: values.len(), found: doc.factors.len() }.into());
    }
    let importance = ImportanceVector::new(doc.method, values);
    let model = train(&bundle.table, &bundle.dictionary, &importance, a.epsilon, a.beta)?;
    model.save(&a.out)?;
    Ok(())
}

fn load_scored_requests(
    model_path: &Path,
    requests: &RequestInput,
    label: &str,
) -> CliResult<(SparseRateModel, Vec<adlift_core::ingest::RequestRecord>)> {
    input(&requests.input)?;
    let model = SparseRateModel::load(input(model_path)?)?;
    let names = model.dictionary().factors().iter().map(|f| f.name().to_string()).collect();
    let schema = Schema::new(names, label)?;
    let records =
        parse_requests_with(open(&requests.input)?, &schema, model.dictionary(), delimiter(requests.delimiter)?)?;
    Ok((model, records))
}

#[derive(Serialize)]
struct ScoreSummary {
    requests: usize,
    mean_score: f64,
    positive_rate: f64,
}

fn score(a: ScoreArgs) -> CliResult {
    output(&a.out)?;
    let (model, records) = load_scored_requests(&a.model, &a.requests, &a.label)?;
    let batch = score_batch_parallel(&model, &records);
    if let Some((row, e)) = batch.errors.first() {
        return Err(CliError::Core(Error::BadField {
            line: *row as u64 + 2,
            value: String::new(),
            reason: e.to_string(),
        }));
    }
    log::info!("scored {} requests at {:.0}/s", batch.scored.len(), batch.throughput());
    write_csv(
        create(&a.out)?,
        &["row", "score", "used_factors", "label"],
        batch.scored.iter().enumerate().map(|(i, s)| {
            vec![i.to_string(), format_number(s.score), s.used_factors.to_string(), (s.record.label as u8).to_string()]
        }),
    )?;
    let n = batch.scored.len().max(1) as f64;
    print_json(&ScoreSummary {
        requests: batch.scored.len(),
        mean_score: batch.scored.iter().map(|s| s.score).sum::<f64>() / n,
        positive_rate: batch.scored.iter().filter(|s| s.record.label).count() as f64 / n,
    })
}

#[derive(Serialize)]
struct PaceSummary {
    requests: usize,
    target: u64,
    shown: u64,
    final_threshold: f64,
}

fn pace(a: PaceArgs) -> CliResult {
    output(&a.out)?;
    if !(a.gamma > 0.0) || a.block == 0 {
        return Err(CliError::Usage("--gamma must be positive and --block at least 1".into()));
    }
    let (model, records) = load_scored_requests(&a.model, &a.requests, &a.label)?;
    let initial = a.initial_threshold.unwrap_or(model.global_rate);
    let mut state = PacingState::new(a.target, records.len() as u64, initial).with_block(a.block, a.gamma);
    let mut rows = Vec::with_capacity(records.len());
    for (i, record) in records.iter().enumerate() {
        let s = model.score(record)?;
        let decision = match state.pace(s.score) {
            Decision::Show => "show",
            Decision::Skip => "skip",
        };
        rows.push(vec![i.to_string(), format_number(s.score), decision.to_string()]);
    }
    write_csv(create(&a.out)?, &["row", "score", "decision"], rows)?;
    print_json(&PaceSummary {
        requests: records.len(),
        target: a.target,
        shown: state.shown_so_far,
        final_threshold: state.threshold,
    })
}

#[derive(Serialize)]
struct NbdReport<'a> {
    #[serde(flatten)]
    model: &'a adlift_core::repeatbuy::NbdModel,
    variance: f64,
    cookies: u64,
    singleton_excess: f64,
}

fn fit_nbd(a: FitNbdArgs) -> CliResult {
    output(&a.out)?;
    if let Some(p) = &a.report {
        output(p)?;
    }
    let freq = match (&a.freq, &a.events) {
        (Some(path), _) => FrequencyTable::read_csv(open(input(path)?)?, a.window_hours)?,
        (None, Some(path)) => FrequencyTable::from_events(&parse_events(open(input(path)?)?, b',')?, a.window_hours),
        (None, None) => return Err(CliError::Usage("one of --freq or --events is required".into())),
    };
    let model = fit_nbd_truncated(&freq)?;
    let comparison = compare_frequencies(&freq, &model);
    let report = NbdReport {
        model: &model,
        variance: model.variance(),
        cookies: freq.total(),
        singleton_excess: comparison.singleton_excess,
    };
    write_json(create(&a.out)?, &report)?;
    if let Some(path) = &a.report {
        write_frequency_report(create(path)?, &comparison)?;
    }
    Ok(())
}

fn survival(a: SurvivalArgs) -> CliResult {
    input(&a.events)?;
    output(&a.out)?;
    let window = Window::parse(&a.window)?;
    if !(a.guard_days >= 0.0) {
        return Err(CliError::Usage("--guard-days must be non-negative".into()));
    }
    let events = parse_events(open(&a.events)?, b',')?;
    let table = estimate_survival(&events, window, (a.guard_days * 86_400.0).round() as i64)?;
    table.write_csv(create(&a.out)?)?;
    Ok(())
}

fn parse_mix(text: &str) -> CliResult<BTreeMap<String, f64>> {
    text.split(',')
        .map(|item| {
            let (name, share) =
                item.split_once('=').ok_or_else(|| CliError::Usage(format!("mix entry `{item}` is not name=share")))?;
            let share: f64 =
                share.trim().parse().map_err(|_| CliError::Usage(format!("mix share `{share}` is not a number")))?;
            Ok((name.trim().to_string(), share))
        })
        .collect()
}

/// User shares per browser: observed cookies divided by the expected
/// cookies per user, `1 + T/τ`.
fn estimated_mix(survival: &SurvivalTable, window_hours: f64) -> BTreeMap<String, f64> {
    let weights: BTreeMap<String, f64> = survival
        .browsers
        .iter()
        .filter(|(_, s)| s.tau_days > 0.0)
        .map(|(b, s)| (b.clone(), s.cookies().max(1) as f64 / (1.0 + window_hours / (24.0 * s.tau_days))))
        .collect();
    let total: f64 = weights.values().sum();
    weights.into_iter().map(|(b, w)| (b, w / total)).collect()
}

fn adjust_churn(a: AdjustChurnArgs) -> CliResult {
    output(&a.out)?;
    if a.users == 0 {
        return Err(CliError::Usage("--users must be positive".into()));
    }
    let freq = FrequencyTable::read_csv(open(input(&a.freq)?)?, a.window_hours)?;
    let survival = SurvivalTable::read_csv(open(input(&a.survival)?)?)?;
    let mix = match &a.mix {
        Some(text) => parse_mix(text)?,
        None => estimated_mix(&survival, a.window_hours),
    };
    let config = ChurnConfig { users: a.users, seed: a.seed, ..Default::default() };
    let adjustment = adjust_for_churn(&freq, &survival, &mix, a.threshold, &config)?;
    write_json(create(&a.out)?, &adjustment)?;
    Ok(())
}

fn read_series(path: &Path) -> CliResult<HourlySeries> {
    Ok(HourlySeries::read_csv(open(input(path)?)?)?)
}

fn forecast(a: ForecastArgs) -> CliResult {
    output(&a.out)?;
    let series = read_series(&a.series)?;
    let values = series.values();
    let window = a.window.unwrap_or_else(|| default_window_length(values.len()));
    let rank = match a.rank.as_str() {
        "auto" => None,
        r => Some(r.parse().map_err(|_| CliError::Usage(format!("--r must be `auto` or an integer, got `{r}`")))?),
    };
    let model = ssa_fit(&values, window, rank)?;
    if !model.is_stable() {
        log::warn!("unstable recurrence (root modulus {:.9}); forecast returned anyway", model.max_root_modulus);
    }
    let mut fitted = model.reconstruction.clone();
    fitted.extend(ssa_forecast(&model, a.horizon));
    write_forecast_report(create(&a.out)?, series.start_hour, &values, &fitted)?;
    Ok(())
}

/// Reads `hour,actual,forecast` rows as `(hour, forecast)`.
fn read_forecast(path: &Path) -> CliResult<Vec<(i64, f64)>> {
    let mut reader = csv::Reader::from_reader(open(input(path)?)?);
    let headers = reader.headers().map_err(Error::from)?.clone();
    if headers.iter().map(str::trim).ne(["hour", "actual", "forecast"]) {
        return Err(Error::MissingColumn("hour,actual,forecast".into()).into());
    }
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(Error::from)?;
        let bad = |col: usize| Error::BadField {
            line: i as u64 + 2,
            value: record[col].to_string(),
            reason: "not a number".into(),
        };
        let hour: i64 = record[0].trim().parse().map_err(|_| bad(0))?;
        let value: f64 = record[2].trim().parse().map_err(|_| bad(2))?;
        rows.push((hour, value));
    }
    Ok(rows)
}

fn virtualize(a: VirtualizeArgs) -> CliResult {
    input(&a.events)?;
    output(&a.out)?;
    let series = read_series(&a.series)?;
    let (start_hour, intensity) = match &a.forecast {
        Some(path) => {
            let rows = read_forecast(path)?;
            let start = rows.first().map(|r| r.0).unwrap_or(series.start_hour);
            if rows.iter().enumerate().any(|(i, r)| r.0 != start + i as i64) {
                return Err(Error::InconsistentInputs("forecast hours are not consecutive".into()).into());
            }
            if rows.iter().any(|r| r.1 < 0.0) {
                log::warn!("negative forecast intensities clamped to zero");
            }
            (start, rows.iter().map(|r| r.1.max(0.0)).collect::<Vec<_>>())
        }
        None => (series.start_hour, series.values()),
    };
    let clock = build_virtual_clock(&intensity)?;
    let events = parse_events(open(&a.events)?, b',')?;
    let origin = start_hour * 3600;
    let mut rows = Vec::with_capacity(events.len());
    for e in &events {
        let hours = (e.timestamp - origin) as f64 / 3600.0;
        let v = clock.virtual_time(hours)?;
        rows.push(vec![e.cookie_id.clone(), e.browser.clone(), e.timestamp.to_string(), format_number(v)]);
    }
    write_csv(create(&a.out)?, &["cookie_id", "browser", "timestamp", "virtual_hour"], rows)?;
    Ok(())
}

#[derive(Serialize)]
struct AlarmSummary {
    hours: usize,
    first_alarm_hour: Option<i64>,
    alarm_hours: Vec<i64>,
}

fn alarm(a: AlarmArgs) -> CliResult {
    if let Some(p) = &a.out {
        output(p)?;
    }
    let config = AlarmConfig {
        sigma_multiplier: a.sigma_multiplier,
        consecutive_hours: a.consecutive_hours,
        residual_window: a.residual_window,
    };
    config.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let series = read_series(&a.series)?;
    let forecast: BTreeMap<i64, f64> = read_forecast(&a.forecast)?.into_iter().collect();
    let (hours, pairs): (Vec<i64>, Vec<(f64, f64)>) = series
        .counts
        .iter()
        .enumerate()
        .filter_map(|(i, &c)| {
            let hour = series.start_hour + i as i64;
            forecast.get(&hour).map(|&f| (hour, (c as f64, f)))
        })
        .unzip();
    if hours.is_empty() {
        return Err(Error::InconsistentInputs("series and forecast share no hours".into()).into());
    }
    let (actual, predicted): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
    let report = check_alarm(&actual, &predicted, &config)?;
    let summary = AlarmSummary {
        hours: hours.len(),
        first_alarm_hour: report.first_alarm.map(|i| hours[i]),
        alarm_hours: report.alarms.iter().map(|&i| hours[i]).collect(),
    };
    if let Some(path) = &a.out {
        write_csv(
            create(path)?,
            &["hour", "actual", "forecast", "sigma", "alarm"],
            hours.iter().enumerate().map(|(i, h)| {
                vec![
                    h.to_string(),
                    format_number(actual[i]),
                    format_number(predicted[i]),
                    report.sigma[i].map(format_number).unwrap_or_default(),
                    (report.alarms.contains(&i) as u8).to_string(),
                ]
            }),
        )?;
    }
    print_json(&summary)
}
