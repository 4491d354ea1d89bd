use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use undr_core::stats::Sidedness;
use undr_core::{DenominatorMode, RankingMethod};

/// Sentinel accepted by every input flag that has a built-in source.
pub const BUILTIN: &str = "builtin";
/// Sentinel for standard input.
pub const STDIN: &str = "-";

#[derive(Debug, Parser)]
#[command(name = "undr", version, about = "Rank products by how well they match what shoppers ask for")]
#[command(after_help = "JSON goes to stdout (or --output), tables and diagnostics to stderr.\n\
Exit status: 0 success, 1 assertion failure, 2 validation error.")]
pub struct Cli {
    /// JSON document whose keys mirror the long flags (e.g. {"k": 10, "min_pool": 20}).
    /// Flags given on the command line or through the environment win [default: none]
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate, filter and optionally re-price a product catalog (JSON Lines)
    IngestCatalog(IngestCatalogArgs),
    /// Validate a survey or needs-log file and write the accepted records as JSON Lines
    IngestSurvey(IngestSurveyArgs),
    /// Build the weight table for one cohort
    Weights(WeightsArgs),
    /// Rank a catalog with UNDR or the rating baseline
    Rank(RankArgs),
    /// Compare the UNDR order with the rating baseline
    Compare(CompareArgs),
    /// Exact nonparametric tests
    Stats {
        #[command(subcommand)]
        test: StatsCommand,
    },
    /// Reproduction checks on synthetic data
    Harness {
        #[command(subcommand)]
        check: HarnessCommand,
    },
    /// Write built-in or synthetic inputs
    Generate {
        #[command(subcommand)]
        what: GenerateCommand,
    },
    /// Run the HTTP service
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Args)]
pub struct SchemaArg {
    /// Facet schema JSON, or `builtin` for the laptop schema
    #[arg(long, default_value = BUILTIN, value_name = "PATH")]
    pub schema: String,
}

#[derive(Debug, Clone, Args)]
pub struct OutputArg {
    /// Write the JSON result here instead of stdout [default: stdout]
    #[arg(long, short, value_name = "PATH")]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct PoolArgs {
    /// Selection records (JSON Lines or .csv), or `builtin` for the seeded survey reconstruction
    #[arg(long, default_value = BUILTIN, value_name = "PATH")]
    pub records: String,

    /// Task list JSON, or `builtin`
    #[arg(long, default_value = BUILTIN, value_name = "PATH")]
    pub tasks: String,

    /// Cohort id: all, basic or advanced
    #[arg(long, default_value = "all")]
    pub cohort: String,

    /// Value-weight denominator: selection_share or user_share
    #[arg(long, default_value = "selection_share")]
    pub mode: DenominatorMode,

    /// Pools smaller than this still build but raise a warning
    #[arg(long, default_value_t = undr_core::weights::DEFAULT_MIN_POOL)]
    pub min_pool: usize,

    /// Seed for built-in synthetic records and catalogs
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct CatalogArgs {
    /// Product catalog (JSON Lines), or `builtin` for 182 synthetic laptops
    #[arg(long, default_value = BUILTIN, value_name = "PATH")]
    pub catalog: String,

    /// Drop products with fewer ratings
    #[arg(long, default_value_t = 0)]
    pub min_ratings: u64,

    /// Weight table JSON to rank with [default: built from --records]
    #[arg(long, value_name = "PATH")]
    pub weights: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct IngestCatalogArgs {
    /// Catalog JSON Lines, `-` for stdin
    #[arg(long, default_value = STDIN, value_name = "PATH")]
    pub input: String,
    #[command(flatten)]
    pub schema: SchemaArg,
    /// Drop products with fewer ratings
    #[arg(long, default_value_t = 0)]
    pub min_ratings: u64,
    /// Multiply every price by this factor
    #[arg(long, default_value_t = 1.0)]
    pub price_factor: f64,
    /// Currency code stamped on converted prices [default: unchanged]
    #[arg(long)]
    pub currency: Option<String>,
    #[command(flatten)]
    pub output: OutputArg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum InputFormat {
    Auto,
    Jsonl,
    Csv,
}

#[derive(Debug, Clone, Args)]
pub struct IngestSurveyArgs {
    /// Records file, `-` for stdin
    #[arg(long, default_value = STDIN, value_name = "PATH")]
    pub input: String,
    /// Input format; `auto` picks csv for a .csv extension and jsonl otherwise
    #[arg(long, value_enum, default_value = "auto")]
    pub format: InputFormat,
    #[command(flatten)]
    pub schema: SchemaArg,
    /// Task list JSON, or `builtin`
    #[arg(long, default_value = BUILTIN, value_name = "PATH")]
    pub tasks: String,
    /// Reject records whose demographics[KEY] equals VALUE; repeatable [default: none]
    #[arg(long, value_name = "KEY=VALUE")]
    pub exclude: Vec<String>,
    /// Write the accepted records here; the JSON summary still goes to stdout [default: stdout]
    #[arg(long, short, value_name = "PATH")]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct WeightsArgs {
    #[command(flatten)]
    pub schema: SchemaArg,
    #[command(flatten)]
    pub pool: PoolArgs,
    #[command(flatten)]
    pub output: OutputArg,
}

#[derive(Debug, Clone, Args)]
pub struct RankArgs {
    /// undr or rating_baseline
    #[arg(long, default_value = "undr")]
    pub method: RankingMethod,
    /// Number of products to return
    #[arg(long, short, default_value_t = 5)]
    pub k: usize,
    #[command(flatten)]
    pub schema: SchemaArg,
    #[command(flatten)]
    pub catalog: CatalogArgs,
    #[command(flatten)]
    pub pool: PoolArgs,
    #[command(flatten)]
    pub output: OutputArg,
}

#[derive(Debug, Clone, Args)]
pub struct CompareArgs {
    /// Top-k cut for the overlap measure
    #[arg(long, short, default_value_t = 5)]
    pub k: usize,
    #[command(flatten)]
    pub schema: SchemaArg,
    #[command(flatten)]
    pub catalog: CatalogArgs,
    #[command(flatten)]
    pub pool: PoolArgs,
    #[command(flatten)]
    pub output: OutputArg,
}

#[derive(Debug, Subcommand)]
pub enum StatsCommand {
    /// Wilcoxon signed-rank test on a two-column CSV of paired ratings
    Wilcoxon(SampleArgs),
    /// Mann-Whitney U test on a `group,value` CSV with exactly two groups
    MannWhitney(SampleArgs),
    /// Upper-tail exact binomial test P(X >= successes)
    Binomial(BinomialArgs),
    /// Bonferroni-adjust a list of p-values
    Bonferroni(BonferroniArgs),
}

#[derive(Debug, Clone, Args)]
pub struct SampleArgs {
    /// CSV with a header row, `-` for stdin
    #[arg(long, default_value = STDIN, value_name = "PATH")]
    pub input: String,
    /// two-sided, greater or less; direction refers to the first column or group
    #[arg(long, default_value = "two-sided")]
    pub sidedness: Sidedness,
    #[command(flatten)]
    pub output: OutputArg,
}

#[derive(Debug, Clone, Args)]
pub struct BinomialArgs {
    /// Observed successes
    #[arg(long)]
    pub successes: u64,
    /// Number of trials
    #[arg(long)]
    pub trials: u64,
    /// Success probability under the null
    #[arg(long, default_value_t = 0.5)]
    pub p0: f64,
    #[command(flatten)]
    pub output: OutputArg,
}

#[derive(Debug, Clone, Args)]
pub struct BonferroniArgs {
    /// Comma-separated p-values
    #[arg(long, value_delimiter = ',', required = true)]
    pub p: Vec<f64>,
    #[command(flatten)]
    pub output: OutputArg,
}

#[derive(Debug, Subcommand)]
pub enum HarnessCommand {
    /// Rebuild the survey pool and check every facet weight against the published column
    Table1(HarnessArgs),
    /// UNDR against the rating baseline on the synthetic catalog
    Compare(HarnessCompareArgs),
}

#[derive(Debug, Clone, Args)]
pub struct HarnessArgs {
    /// Seed for unpublished value counts and the synthetic catalog
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[command(flatten)]
    pub output: OutputArg,
}

#[derive(Debug, Clone, Args)]
pub struct HarnessCompareArgs {
    /// Seed for unpublished value counts and the synthetic catalog
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Top-k cut
    #[arg(long, short, default_value_t = 5)]
    pub k: usize,
    #[command(flatten)]
    pub output: OutputArg,
}

#[derive(Debug, Subcommand)]
pub enum GenerateCommand {
    /// The built-in laptop facet schema
    Schema(OutputArg),
    /// The built-in usage-task list
    Tasks(OutputArg),
    /// The synthetic 277-record survey pool
    Pool(GeneratePoolArgs),
    /// A synthetic catalog
    Catalog(GenerateCatalogArgs),
}

#[derive(Debug, Clone, Args)]
pub struct GeneratePoolArgs {
    /// Seed for the value-level counts
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Zipf exponent for value-level counts
    #[arg(long, default_value_t = 1.0)]
    pub skew: f64,
    /// Share of facet users who pick a second bin
    #[arg(long, default_value_t = 0.3)]
    pub multi_select_rate: f64,
    #[command(flatten)]
    pub output: OutputArg,
}

#[derive(Debug, Clone, Args)]
pub struct GenerateCatalogArgs {
    /// Number of products
    #[arg(long, short, default_value_t = undr_core::presets::CATALOG_SIZE)]
    pub n: usize,
    /// Seed
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[command(flatten)]
    pub schema: SchemaArg,
    #[command(flatten)]
    pub output: OutputArg,
}

#[derive(Debug, Clone, Args)]
pub struct ServeArgs {
    /// Interface to bind
    #[arg(long, env = "UNDR_HOST", default_value = "127.0.0.1")]
    pub host: String,
    /// Port to bind
    #[arg(long, env = "UNDR_PORT", default_value_t = 8080)]
    pub port: u16,
    /// Facet schema JSON, or `builtin`
    #[arg(long, env = "UNDR_SCHEMA", default_value = BUILTIN, value_name = "PATH")]
    pub schema: String,
    /// Catalog JSON Lines, or `builtin`
    #[arg(long, env = "UNDR_CATALOG", default_value = BUILTIN, value_name = "PATH")]
    pub catalog: String,
    /// Seed records loaded at startup: a file, `builtin`, or `none`
    #[arg(long, env = "UNDR_RECORDS", default_value = BUILTIN, value_name = "PATH")]
    pub records: String,
    /// Task list JSON, or `builtin`
    #[arg(long, env = "UNDR_TASKS", default_value = BUILTIN, value_name = "PATH")]
    pub tasks: String,
    /// Event log and snapshot directory (created if missing)
    #[arg(long, env = "UNDR_LOG_DIR", default_value = "undr-data", value_name = "DIR")]
    pub log_dir: PathBuf,
    /// Cohorts with fewer records are not recomputed
    #[arg(long, env = "UNDR_MIN_POOL", default_value_t = undr_core::weights::DEFAULT_MIN_POOL)]
    pub min_pool: usize,
    /// Value-weight denominator: selection_share or user_share
    #[arg(long, default_value = "selection_share")]
    pub mode: DenominatorMode,
    /// Open sessions idle this long are finalized
    #[arg(long, default_value_t = undr_core::needslog::DEFAULT_IDLE_TIMEOUT_MINUTES)]
    pub idle_timeout_minutes: i64,
    /// Seed for built-in records and catalog
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
}
