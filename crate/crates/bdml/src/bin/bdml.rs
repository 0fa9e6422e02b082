use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use bdml::cli;
use bdml::io::RunConfig;

/// Bayesian double machine learning for partially linear regression.
#[derive(Parser)]
#[command(name = "bdml", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate the treatment effect on a borough-level CSV table.
    Fit(CommonArgs),
    /// Run a simulation benchmark and emit the metrics table.
    Simulate(CommonArgs),
    /// Check posterior coverage validity by simulation-based calibration.
    Validate(CommonArgs),
    /// Compare full-sample and split-sample estimation bias.
    SplitDemo(CommonArgs),
    /// Solve the weight problem on a score column and print diagnostics.
    GelDebug(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Key-value configuration file (TOML); flags override its entries.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Input CSV path.
    #[arg(long)]
    data: Option<String>,
    /// Output directory for report artifacts.
    #[arg(long)]
    out: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Cressie-Read parameter (0 = EL, -1 = ETEL, -0.5 = HD).
    #[arg(long)]
    lambda: Option<f64>,
    /// Named divergence: el, etel, or hd.
    #[arg(long)]
    divergence: Option<String>,
    /// Treatment-model learner: lasso, forest, or nn.
    #[arg(long)]
    learner_pi: Option<String>,
    /// Outcome-model learner: lasso, forest, or nn.
    #[arg(long)]
    learner_g: Option<String>,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    draws: Option<usize>,
    #[arg(long)]
    burn_in: Option<usize>,
    #[arg(long)]
    prior_mean: Option<f64>,
    #[arg(long)]
    prior_var: Option<f64>,
    #[arg(long)]
    replicates: Option<usize>,
    /// Simulation design: binary, continuous, or split (validate also
    /// accepts degenerate).
    #[arg(long)]
    scenario: Option<String>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    p: Option<usize>,
    /// Comma-separated estimators for simulate, e.g. el:lasso,dml:lasso.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    /// Score column name for gel-debug.
    #[arg(long)]
    column: Option<String>,
    /// Run validate as its deliberately-miscalibrated negative control.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    miscalibrate: Option<bool>,
    /// Record wall-clock runtime in the benchmark CSV (breaks byte-level
    /// reproducibility of that column).
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    timing: Option<bool>,
}

impl CommonArgs {
    fn resolve(self) -> Result<RunConfig, bdml::Error> {
        let flags = RunConfig {
            data: self.data,
            out: self.out,
            seed: self.seed,
            lambda: self.lambda,
            divergence: self.divergence,
            learner_pi: self.learner_pi,
            learner_g: self.learner_g,
            folds: self.folds,
            draws: self.draws,
            burn_in: self.burn_in,
            prior_mean: self.prior_mean,
            prior_var: self.prior_var,
            replicates: self.replicates,
            scenario: self.scenario,
            n: self.n,
            p: self.p,
            methods: self.methods,
            column: self.column,
            miscalibrate: self.miscalibrate,
            timing: self.timing,
        };
        let base = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        Ok(base.merged_with(flags))
    }
}

fn main() -> ExitCode {
    if let Ok(threads) = std::env::var("BDML_THREADS") {
        if let Ok(threads) = threads.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(threads.max(1))
                .build_global();
        }
    }
    let cli = Cli::parse();
    let outcome = (|| -> Result<String, bdml::Error> {
        match cli.command {
            Command::Fit(args) => cli::run_fit(&args.resolve()?),
            Command::Simulate(args) => cli::run_simulate(&args.resolve()?),
            Command::Validate(args) => cli::run_validate(&args.resolve()?),
            Command::SplitDemo(args) => cli::run_split_demo_cmd(&args.resolve()?),
            Command::GelDebug(args) => cli::run_gel_debug(&args.resolve()?),
        }
    })();
    match outcome {
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
