use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "helios", version, about = "Optimize, schedule and simulate batch agentic LLM workflows")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Optimize, schedule and simulate one workflow batch.
    Run(RunArgs),
    /// Compare schedulers against the exact optimum on small instances.
    Gap(GapArgs),
    /// Generate a synthetic workflow with its inputs and profile.
    Gen(GenArgs),
    /// Run the full configuration and one variant per disabled optimization.
    Ablate(AblateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReportFormat {
    Json,
    Csv,
}

impl ReportFormat {
    pub fn ext(self) -> &'static str {
        match self {
            ReportFormat::Json => "json",
            ReportFormat::Csv => "csv",
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct EngineArgs {
    #[arg(long)]
    pub workflow: PathBuf,
    #[arg(long)]
    pub inputs: PathBuf,
    /// Output-length estimates per LLM operator.
    #[arg(long)]
    pub profile: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    /// KV capacity in tokens, one value for every worker or one per worker.
    #[arg(long, value_delimiter = ',', default_value = "8192")]
    pub capacity: Vec<usize>,
    /// Tokens processed per worker iteration [default: capacity / 8].
    #[arg(long)]
    pub budget: Option<usize>,
    #[arg(long, default_value_t = helios_core::sim::DEFAULT_PIN_THRESHOLD)]
    pub pin_threshold: usize,
    /// cache-aware (alias helium), querywise, opwise, random or lspf.
    #[arg(long, default_value = "cache-aware")]
    pub scheduler: String,
    #[arg(long, env = "HELIOS_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Draw output lengths around the profiled mean.
    #[arg(long)]
    pub stochastic: bool,
    #[arg(long)]
    pub no_prune: bool,
    #[arg(long)]
    pub no_cse: bool,
    #[arg(long)]
    pub no_prompt_cache: bool,
    #[arg(long)]
    pub no_proactive_kv: bool,
    #[arg(long)]
    pub no_cas: bool,
    /// Reuse only pinned prefixes, never prompts of finished calls.
    #[arg(long)]
    pub no_prefix_caching: bool,
    /// Prompt cache file to start from.
    #[arg(long)]
    pub cache: Option<PathBuf>,
    #[arg(long, default_value_t = helios_core::optimizer::DEFAULT_PROMPT_CACHE_CAPACITY)]
    pub cache_capacity: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = ReportFormat::Json)]
    pub format: ReportFormat,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub engine: EngineArgs,
}

#[derive(Debug, Clone, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub engine: EngineArgs,
    /// Batch run once before every variant to warm its prompt cache.
    #[arg(long)]
    pub warmup_inputs: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct GapArgs {
    /// Restrict the standard suite to these configurations.
    #[arg(long, value_delimiter = ',')]
    pub only: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,3")]
    pub seeds: Vec<u64>,
    /// Largest instance, in calls, the exact oracle accepts.
    #[arg(long)]
    pub limit: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = ReportFormat::Json)]
    pub format: ReportFormat,
}

#[derive(Debug, Clone, Args)]
pub struct GenArgs {
    /// mapred, debate, reflect, iterative, parallel or trading-mini.
    #[arg(long)]
    pub pattern: String,
    #[arg(long)]
    pub agents: Option<usize>,
    #[arg(long)]
    pub rounds: Option<usize>,
    #[arg(long, default_value_t = 4)]
    pub batch: usize,
    /// System, context, question and output lengths in tokens.
    #[arg(long, value_delimiter = ',', num_args = 1, default_value = "300,600,40,60")]
    pub shape: Vec<usize>,
    #[arg(long, default_value_t = 0.0)]
    pub jitter: f64,
    #[arg(long, default_value_t = 0)]
    pub day: u64,
    #[arg(long)]
    pub shared_context: bool,
    #[arg(long)]
    pub same_role: bool,
    #[arg(long, env = "HELIOS_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}
