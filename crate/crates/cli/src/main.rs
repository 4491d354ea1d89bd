mod args;
mod config;
mod inputs;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::net::SocketAddr;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{CommandFactory, FromArgMatches};
use serde_json::json;
use undr_core::harness::{compare_rankings, reproduce_table1, run_compare, table1_setup, ValueDraw};
use undr_core::needslog::{write_records, Exclusion, ParseOptions};
use undr_core::ranking::{rank_by_rating, rank_undr, top_k};
use undr_core::stats::{self, PairedSample};
use undr_core::weights::{build_weight_table, BuildOptions};
use undr_core::{catalog, presets, CohortSpec, FacetSchema, RankedList, RankingMethod, WeightTable};

use args::*;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Invalid(String),
    #[error("assertion failed: {0}")]
    Assertion(String),
}

impl CliError {
    pub fn invalid(message: impl Into<String>) -> Self {
        CliError::Invalid(message.into())
    }

    fn code(&self) -> u8 {
        match self {
            CliError::Invalid(_) => 2,
            CliError::Assertion(_) => 1,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn parse_cli() -> Result<Cli> {
    let cmd = Cli::command();
    let argv: Vec<std::ffi::OsString> = std::env::args_os().collect();
    let matches = cmd.clone().try_get_matches_from(&argv).unwrap_or_else(|e| e.exit());
    let Some(path) = matches.get_one::<std::path::PathBuf>("config") else {
        return Cli::from_arg_matches(&matches).map_err(|e| CliError::invalid(e.to_string()));
    };
    let config = config::load(path, &cmd)?;
    let extra = config::overlay(&cmd, &matches, &config)?;
    let matches = cmd
        .try_get_matches_from(argv.into_iter().chain(extra))
        .map_err(|e| CliError::invalid(format!("{}: {}", path.display(), e.kind())))?;
    Cli::from_arg_matches(&matches).map_err(|e| CliError::invalid(e.to_string()))
}

fn main() -> ExitCode {
    let cli = match parse_cli() {
        Ok(cli) => cli,
        Err(e) => return fail(e),
    };
    let level = if matches!(cli.command, Command::Serve(_)) { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match check_inputs(&cli.command).and_then(|_| run(cli.command)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e),
    }
}

fn fail(e: CliError) -> ExitCode {
    eprintln!("undr: {e}");
    ExitCode::from(e.code())
}

fn check_inputs(command: &Command) -> Result<()> {
    use inputs::{check_path, check_source};
    let pool = |p: &PoolArgs| check_source("records", &p.records, &[BUILTIN]).and(check_source("tasks", &p.tasks, &[BUILTIN]));
    let cat = |c: &CatalogArgs| check_source("catalog", &c.catalog, &[BUILTIN]).and(check_path("weights", &c.weights));
    match command {
        Command::IngestCatalog(a) => {
            check_source("input", &a.input, &[STDIN])?;
            check_source("schema", &a.schema.schema, &[BUILTIN])
        }
        Command::IngestSurvey(a) => {
            check_source("input", &a.input, &[STDIN])?;
            check_source("schema", &a.schema.schema, &[BUILTIN])?;
            check_source("tasks", &a.tasks, &[BUILTIN])
        }
        Command::Weights(a) => check_source("schema", &a.schema.schema, &[BUILTIN]).and(pool(&a.pool)),
        Command::Rank(a) => check_source("schema", &a.schema.schema, &[BUILTIN]).and(pool(&a.pool)).and(cat(&a.catalog)),
        Command::Compare(a) => check_source("schema", &a.schema.schema, &[BUILTIN]).and(pool(&a.pool)).and(cat(&a.catalog)),
        Command::Stats { test: StatsCommand::Wilcoxon(a) | StatsCommand::MannWhitney(a) } => {
            check_source("input", &a.input, &[STDIN])
        }
        Command::Generate { what: GenerateCommand::Catalog(a) } => check_source("schema", &a.schema.schema, &[BUILTIN]),
        Command::Serve(a) => {
            check_source("schema", &a.schema, &[BUILTIN])?;
            check_source("catalog", &a.catalog, &[BUILTIN])?;
            check_source("records", &a.records, &[BUILTIN, "none"])?;
            check_source("tasks", &a.tasks, &[BUILTIN])
        }
        _ => Ok(()),
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::IngestCatalog(a) => ingest_catalog(a),
        Command::IngestSurvey(a) => ingest_survey(a),
        Command::Weights(a) => {
            let schema = inputs::schema(&a.schema.schema)?;
            let table = weights(&schema, &a.pool)?;
            eprint!("{}", table.render(&schema));
            for w in &table.warnings {
                eprintln!("warning: {w}");
            }
            inputs::emit_json(&a.output.output, &table)
        }
        Command::Rank(a) => rank(a),
        Command::Compare(a) => compare(a),
        Command::Stats { test } => stats_cmd(test),
        Command::Harness { check } => harness(check),
        Command::Generate { what } => generate(what),
        Command::Serve(a) => serve(a),
    }
}

fn ingest_catalog(a: IngestCatalogArgs) -> Result<()> {
    let schema = inputs::schema(&a.schema.schema)?;
    let raw = catalog::read_catalog(inputs::open(&a.input)?).map_err(|e| CliError::invalid(format!("{}: {e}", a.input)))?;
    let mut products = catalog::filter_catalog(&raw, &schema, a.min_ratings);
    if !(a.price_factor.is_finite() && a.price_factor > 0.0) {
        return Err(CliError::invalid(format!("--price-factor must be positive, got {}", a.price_factor)));
    }
    if a.price_factor != 1.0 || a.currency.is_some() {
        let currency = a.currency.clone().unwrap_or_else(|| products.first().map(|p| p.price_currency.clone()).unwrap_or_default());
        catalog::convert_price(&mut products, "price", a.price_factor, &currency);
    }
    eprintln!("{}: {} products read, {} kept", a.input, raw.len(), products.len());
    let mut out = Vec::new();
    catalog::write_catalog(&mut out, &products).expect("writing to memory");
    inputs::emit(&a.output.output, &out)
}

fn ingest_survey(a: IngestSurveyArgs) -> Result<()> {
    let schema = inputs::schema(&a.schema.schema)?;
    let tasks = inputs::tasks(&a.tasks)?;
    let exclusions = a.exclude.iter().map(|f| Exclusion::parse_flag(f)).collect::<std::result::Result<Vec<_>, _>>();
    let exclusions = exclusions.map_err(|e| CliError::invalid(format!("--exclude: {e}")))?;
    let outcome = inputs::parse(&a.input, a.format, &schema, &ParseOptions { tasks, exclusions })?;
    let mut reasons: BTreeMap<String, usize> = BTreeMap::new();
    for r in &outcome.rejected {
        eprintln!("{}:{}: rejected: {}", a.input, r.line, r.reason);
        let code = serde_json::to_value(&r.reason).ok().and_then(|v| v["code"].as_str().map(str::to_owned));
        *reasons.entry(code.unwrap_or_default()).or_default() += 1;
    }
    eprintln!("{}: {} accepted, {} rejected", a.input, outcome.records.len(), outcome.rejected.len());
    let mut lines = Vec::new();
    write_records(&mut lines, &outcome.records).expect("writing to memory");
    match &a.output {
        Some(_) => {
            inputs::emit(&a.output, &lines)?;
            let summary = json!({
                "format_version": undr_core::FORMAT_VERSION,
                "accepted": outcome.records.len(),
                "rejected": outcome.rejected,
                "rejected_by_reason": reasons,
            });
            inputs::emit_json(&None, &summary)
        }
        None => inputs::emit(&None, &lines),
    }
}

fn cohort(id: &str) -> Result<CohortSpec> {
    CohortSpec::builtin(id).ok_or_else(|| CliError::invalid(format!("--cohort: unknown cohort `{id}` (all, basic, advanced)")))
}

fn weights(schema: &FacetSchema, p: &PoolArgs) -> Result<WeightTable> {
    let tasks = inputs::tasks(&p.tasks)?;
    let records = inputs::records(&p.records, p.seed, schema, &tasks)?;
    let options = BuildOptions { mode: p.mode, min_pool: p.min_pool };
    build_weight_table(&records, schema, &cohort(&p.cohort)?, &tasks, &options).map_err(|e| CliError::invalid(e.to_string()))
}

fn table_for(schema: &FacetSchema, c: &CatalogArgs, p: &PoolArgs) -> Result<WeightTable> {
    match &c.weights {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::invalid(format!("{}: {e}", path.display())))?;
            WeightTable::from_json(&text).map_err(|e| CliError::invalid(format!("{}: {e}", path.display())))
        }
        None => weights(schema, p),
    }
}

fn render_ranking(list: &RankedList, titles: &BTreeMap<&str, &str>) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:>4}  {:>8}  {:<12}  title", "rank", "score", "product");
    for e in &list.entries {
        let title = titles.get(e.product_id.as_str()).copied().unwrap_or("");
        let _ = writeln!(out, "{:>4}  {:>8.4}  {:<12}  {title}", e.rank, e.score, e.product_id);
    }
    out
}

fn rank(a: RankArgs) -> Result<()> {
    let schema = inputs::schema(&a.schema.schema)?;
    let products = inputs::catalog(&a.catalog.catalog, a.pool.seed, &schema, a.catalog.min_ratings)?;
    let list = match a.method {
        RankingMethod::Undr => {
            let table = table_for(&schema, &a.catalog, &a.pool)?;
            rank_undr(&products, &table, &schema)
        }
        RankingMethod::RatingBaseline => rank_by_rating(&products),
    }
    .map_err(|e| CliError::invalid(e.to_string()))?;
    let list = top_k(&list, a.k);
    let titles = products.iter().map(|p| (p.product_id.as_str(), p.title.as_str())).collect();
    eprint!("{}", render_ranking(&list, &titles));
    inputs::emit_json(&a.output.output, &list)
}

fn compare(a: CompareArgs) -> Result<()> {
    let schema = inputs::schema(&a.schema.schema)?;
    let products = inputs::catalog(&a.catalog.catalog, a.pool.seed, &schema, a.catalog.min_ratings)?;
    let table = table_for(&schema, &a.catalog, &a.pool)?;
    let undr = rank_undr(&products, &table, &schema).map_err(|e| CliError::invalid(e.to_string()))?;
    let baseline = rank_by_rating(&products).map_err(|e| CliError::invalid(e.to_string()))?;
    let report = compare_rankings(&undr, &baseline, a.k).map_err(|e| CliError::invalid(e.to_string()))?;
    eprintln!("{}", report.summary);
    inputs::emit_json(
        &a.output.output,
        &json!({
            "format_version": undr_core::FORMAT_VERSION,
            "cohort_id": table.cohort_id,
            "table_hash": table.provenance.table_hash,
            "catalog_size": products.len(),
            "report": report,
        }),
    )
}

fn csv_rows(source: &str) -> Result<Vec<(u64, csv::StringRecord)>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(inputs::open(source)?);
    let mut rows = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| CliError::invalid(format!("{source}: {e}")))?;
        let line = row.position().map_or(0, |p| p.line());
        rows.push((line, row));
    }
    Ok(rows)
}

fn number(source: &str, line: u64, cell: Option<&str>) -> Result<f64> {
    let cell = cell.ok_or_else(|| CliError::invalid(format!("{source}:{line}: missing column")))?;
    cell.parse().map_err(|_| CliError::invalid(format!("{source}:{line}: `{cell}` is not a number")))
}

fn stats_cmd(test: StatsCommand) -> Result<()> {
    let invalid = |e: stats::StatsError| CliError::invalid(e.to_string());
    let (result, output) = match test {
        StatsCommand::Wilcoxon(a) => {
            let mut pairs = Vec::new();
            for (line, row) in csv_rows(&a.input)? {
                pairs.push((number(&a.input, line, row.get(0))?, number(&a.input, line, row.get(1))?));
            }
            let sample = PairedSample::new(pairs).map_err(invalid)?;
            (stats::wilcoxon_signed_rank(&sample, a.sidedness).map_err(invalid)?, a.output.output)
        }
        StatsCommand::MannWhitney(a) => {
            let mut groups: Vec<(String, Vec<f64>)> = Vec::new();
            for (line, row) in csv_rows(&a.input)? {
                let group = row.get(0).unwrap_or_default().to_owned();
                let value = number(&a.input, line, row.get(1))?;
                match groups.iter_mut().find(|(g, _)| *g == group) {
                    Some((_, values)) => values.push(value),
                    None => groups.push((group, vec![value])),
                }
            }
            if groups.len() != 2 {
                return Err(CliError::invalid(format!("{}: expected exactly two groups, found {}", a.input, groups.len())));
            }
            eprintln!("x = `{}` (n={}), y = `{}` (n={})", groups[0].0, groups[0].1.len(), groups[1].0, groups[1].1.len());
            (stats::mann_whitney_u(&groups[0].1, &groups[1].1, a.sidedness).map_err(invalid)?, a.output.output)
        }
        StatsCommand::Binomial(a) => (stats::binomial_test_ge(a.successes, a.trials, a.p0).map_err(invalid)?, a.output.output),
        StatsCommand::Bonferroni(a) => {
            let adjusted = stats::bonferroni(&a.p).map_err(invalid)?;
            eprintln!("{:>10}  {:>10}", "p", "adjusted");
            for (p, q) in a.p.iter().zip(&adjusted) {
                eprintln!("{p:>10.6}  {q:>10.6}");
            }
            return inputs::emit_json(
                &a.output.output,
                &json!({ "format_version": undr_core::FORMAT_VERSION, "p_values": a.p, "adjusted": adjusted }),
            );
        }
    };
    eprintln!(
        "{:?} ({:?}, {}): statistic {} p = {:.6} n = {}",
        result.method,
        result.sidedness,
        if result.exact { "exact" } else { "normal approximation" },
        result.statistic,
        result.p_value,
        result.n_effective
    );
    inputs::emit_json(&output, &result)
}

fn harness(check: HarnessCommand) -> Result<()> {
    let invalid = |e: undr_core::harness::HarnessError| CliError::invalid(e.to_string());
    match check {
        HarnessCommand::Table1(a) => {
            let (schema, pool, _) = table1_setup(a.seed).map_err(invalid)?;
            let report = reproduce_table1(&pool, &schema).map_err(invalid)?;
            eprint!("{}", report.render());
            inputs::emit_json(&a.output.output, &report)?;
            if report.passed {
                Ok(())
            } else {
                Err(CliError::Assertion(format!("facet weights out of tolerance: {}", report.failing.join(", "))))
            }
        }
        HarnessCommand::Compare(a) => {
            let (schema, pool, _) = table1_setup(a.seed).map_err(invalid)?;
            let table1 = reproduce_table1(&pool, &schema).map_err(invalid)?;
            let run = run_compare(a.seed, a.k).map_err(invalid)?;
            let mut out = String::new();
            let _ = writeln!(out, "{:>4}  {:<24}  {:<24}", "rank", "undr", "rating baseline");
            for i in 0..run.undr_top_k.len().max(run.baseline_top_k.len()) {
                let cell = |l: &RankedList| l.entries.get(i).map_or(String::new(), |e| format!("{} ({:.3})", e.product_id, e.score));
                let _ = writeln!(out, "{:>4}  {:<24}  {:<24}", i + 1, cell(&run.undr_top_k), cell(&run.baseline_top_k));
            }
            eprint!("{out}{}\n", run.report.summary);
            inputs::emit_json(&a.output.output, &run)?;
            let expected = a.k.min(run.catalog_size);
            let mut failures = Vec::new();
            if !table1.passed {
                failures.push(format!("survey pool misses the published weights on {}", table1.failing.join(", ")));
            }
            if run.undr_top_k.len() != expected || run.baseline_top_k.len() != expected {
                failures.push(format!("top-k lists are not of length {expected}"));
            }
            if failures.is_empty() {
                Ok(())
            } else {
                Err(CliError::Assertion(failures.join("; ")))
            }
        }
    }
}

fn generate(what: GenerateCommand) -> Result<()> {
    match what {
        GenerateCommand::Schema(o) => inputs::emit_json(&o.output, &presets::laptop_schema()),
        GenerateCommand::Tasks(o) => inputs::emit_json(&o.output, &undr_core::TaskList::default()),
        GenerateCommand::Pool(a) => {
            let draw = ValueDraw { skew: a.skew, multi_select_rate: a.multi_select_rate };
            if !(draw.skew.is_finite() && draw.skew >= 0.0) || !(0.0..=1.0).contains(&draw.multi_select_rate) {
                return Err(CliError::invalid("--skew must be >= 0 and --multi-select-rate within [0, 1]"));
            }
            let schema = presets::laptop_schema();
            let pool = inputs::survey_pool(a.seed, &schema, &undr_core::TaskList::default(), &draw)?;
            eprintln!("{} records", pool.len());
            let mut out = Vec::new();
            write_records(&mut out, &pool).expect("writing to memory");
            inputs::emit(&a.output.output, &out)
        }
        GenerateCommand::Catalog(a) => {
            let schema = inputs::schema(&a.schema.schema)?;
            let products = undr_core::harness::generate_catalog(a.n, &schema, a.seed);
            eprintln!("{} products", products.len());
            let mut out = Vec::new();
            catalog::write_catalog(&mut out, &products).expect("writing to memory");
            inputs::emit(&a.output.output, &out)
        }
    }
}

fn serve(a: ServeArgs) -> Result<()> {
    let schema = inputs::schema(&a.schema)?;
    let tasks = inputs::tasks(&a.tasks)?;
    let products = inputs::catalog(&a.catalog, a.seed, &schema, 0)?;
    let records = match a.records.as_str() {
        "none" => Vec::new(),
        source => inputs::records(source, a.seed, &schema, &tasks)?,
    };
    if a.idle_timeout_minutes <= 0 {
        return Err(CliError::invalid("--idle-timeout-minutes must be positive"));
    }
    let addr: SocketAddr = format!("{}:{}", a.host, a.port)
        .parse()
        .map_err(|e| CliError::invalid(format!("--host/--port: {e}")))?;
    let mut config = undr_server::ServerConfig::new(&a.log_dir);
    config.min_pool = a.min_pool;
    config.mode = a.mode;
    config.tasks = tasks;
    config.idle_timeout = chrono::Duration::minutes(a.idle_timeout_minutes);
    std::fs::create_dir_all(&a.log_dir).map_err(|e| CliError::invalid(format!("{}: {e}", a.log_dir.display())))?;
    let state = undr_server::EngineState::open(schema, products, records, config).map_err(|e| CliError::invalid(e.to_string()))?;
    let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::invalid(e.to_string()))?;
    runtime
        .block_on(undr_server::serve(Arc::new(state), addr))
        .map_err(|e| CliError::invalid(format!("serve: {e}")))
}
