use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use magellan_cli::commands::{self, RunOverrides};
use magellan_cli::world::WorldParams;

#[derive(Parser)]
#[command(
    name = "magellan",
    about = "Self-evolving help-seeking research agent: warm-up, runs, ablations, tooling"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Clone, Default)]
struct CommonRunArgs {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Benchmark name; must match the configuration.
    #[arg(long)]
    benchmark: Option<String>,
    /// Output directory (overrides the configuration).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    max_help_requests: Option<u32>,
    #[arg(long)]
    max_retries: Option<u32>,
    #[arg(long)]
    warmup_passes: Option<u32>,
    #[arg(long)]
    retrieval_top_k: Option<usize>,
    #[arg(long)]
    distill_token_budget: Option<usize>,
    #[arg(long)]
    experience_lesson_cap: Option<usize>,
    #[arg(long)]
    no_action_limit: Option<u32>,
    #[arg(long)]
    fanout_cap: Option<usize>,
    #[arg(long)]
    search_top_n: Option<usize>,
    /// Minimal workflow: reasoning and help-seeking only.
    #[arg(long)]
    minimal_only: bool,
    #[arg(long)]
    no_self_reflection: bool,
    #[arg(long)]
    no_verified_reflection: bool,
    #[arg(long)]
    no_in_house_tool: bool,
    /// Replace the tool router with in-context tool descriptions.
    #[arg(long)]
    no_router: bool,
    /// Solve tasks concurrently (requires verified reflection off).
    #[arg(long)]
    parallel_batch: bool,
}

impl CommonRunArgs {
    fn overrides(&self) -> RunOverrides {
        RunOverrides {
            max_help_requests: self.max_help_requests,
            max_retries: self.max_retries,
            warmup_passes: self.warmup_passes,
            retrieval_top_k: self.retrieval_top_k,
            distill_token_budget: self.distill_token_budget,
            experience_lesson_cap: self.experience_lesson_cap,
            no_action_limit: self.no_action_limit,
            fanout_cap: self.fanout_cap,
            search_top_n: self.search_top_n,
            minimal_only: self.minimal_only,
            no_self_reflection: self.no_self_reflection,
            no_verified_reflection: self.no_verified_reflection,
            no_in_house_tool: self.no_in_house_tool,
            no_router: self.no_router,
            parallel_batch: self.parallel_batch,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Populate the knowledge base by simulating the task batch.
    Warmup {
        #[command(flatten)]
        common: CommonRunArgs,
    },
    /// Warm-up plus the sequential batch run with traces and a report.
    Run {
        #[command(flatten)]
        common: CommonRunArgs,
    },
    /// Run the full configuration and the five ablation variants.
    Ablate {
        #[command(flatten)]
        common: CommonRunArgs,
    },
    /// Generate a deterministic synthetic benchmark world.
    GenWorld {
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        n_tasks: usize,
        #[arg(long, default_value_t = 2)]
        depth_min: u32,
        #[arg(long, default_value_t = 4)]
        depth_max: u32,
        #[arg(long, default_value_t = 100)]
        n_pages: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render a task trace file.
    Trace {
        file: PathBuf,
        #[arg(long)]
        attempt: Option<u32>,
        /// context | thought | help | knowledge | answer | reflection | note | report
        #[arg(long)]
        kind: Option<String>,
    },
    /// Grade a predicted answer against gold.
    Grade {
        #[arg(long)]
        predicted: String,
        #[arg(long)]
        gold: String,
        #[arg(long, default_value = "exact_match")]
        method: String,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Warmup { common } => commands::cmd_warmup(
            &common.config,
            common.benchmark.as_deref(),
            &common.overrides(),
            common.out.clone(),
        ),
        Command::Run { common } => commands::cmd_run(
            &common.config,
            common.benchmark.as_deref(),
            &common.overrides(),
            common.out.clone(),
        )
        .map(|(text, _)| text),
        Command::Ablate { common } => commands::cmd_ablate(
            &common.config,
            common.benchmark.as_deref(),
            &common.overrides(),
            common.out.clone(),
        )
        .map(|(text, _)| text),
        Command::GenWorld {
            seed,
            n_tasks,
            depth_min,
            depth_max,
            n_pages,
            out,
        } => commands::cmd_gen_world(
            &WorldParams {
                seed: *seed,
                n_tasks: *n_tasks,
                depth_min: *depth_min,
                depth_max: *depth_max,
                n_pages: *n_pages,
            },
            out,
        ),
        Command::Trace {
            file,
            attempt,
            kind,
        } => commands::cmd_trace(file, *attempt, kind.as_deref()),
        Command::Grade {
            predicted,
            gold,
            method,
        } => commands::cmd_grade(predicted, gold, method),
    };
    match result {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
