use std::path::PathBuf;
use std::process::ExitCode;

use bartlab_pipeline::{fixture, run_all, run_stages, Context, PipelineConfig, Stage, StageOptions};
use clap::{Args, Parser, Subcommand};

/// BART panel workflow: indices, screening, fitting, tuning and interpretation.
#[derive(Parser)]
#[command(name = "bartlab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Override the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the configured output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Every stage in order, then the report.
    Run(Common),
    /// Response and composite indices.
    Indices(Common),
    /// Skewness log screen and GVIF screen.
    Screen(Common),
    /// Fit at the configured hyperparameters.
    Fit(Common),
    /// k-fold cross-validation at the configured hyperparameters.
    Cv(Common),
    /// Grid search, tuned fit and test-year metrics.
    Tune(Common),
    /// Predict test years, or a feature CSV with a saved forest.
    Predict {
        #[command(flatten)]
        common: Common,
        /// Serialized posterior (forest.json).
        #[arg(long, requires = "features")]
        forest: Option<PathBuf>,
        /// CSV of feature columns (optional province/year/region columns pass through).
        #[arg(long, requires = "forest")]
        features: Option<PathBuf>,
    },
    /// Residual diagnostics of the tuned model.
    Diagnose(Common),
    /// Partial dependence with credible bands.
    Pdp {
        #[command(flatten)]
        common: Common,
        /// Feature to plot (repeatable); the configured list when absent.
        #[arg(long = "feature")]
        features: Vec<String>,
    },
    /// Monte-Carlo Shapley values.
    Shap(Common),
    /// Inclusion proportions over repeated builds.
    Importance(Common),
    /// Interaction counts over repeated builds.
    Interactions(Common),
    /// Omnibus and per-covariate permutation tests.
    Permtest(Common),
    /// Merge stage artifacts into report.json.
    Report(Common),
    /// Write the synthetic panel fixture as CSV.
    Simulate {
        /// Destination CSV.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2024)]
        seed: u64,
    },
}

fn context(common: &Common, options: StageOptions) -> bartlab_pipeline::Result<Context> {
    let cfg = PipelineConfig::load(&common.config)?;
    let mut ctx = Context::new(cfg, common.seed, common.out.clone());
    ctx.options = options;
    Ok(ctx)
}

fn dispatch(command: Command) -> bartlab_pipeline::Result<()> {
    let single = |common: &Common, stage: Stage, options: StageOptions| -> bartlab_pipeline::Result<()> {
        run_stages(&context(common, options)?, &[stage])
    };
    let none = StageOptions::default;
    match command {
        Command::Run(c) => run_all(&context(&c, none())?),
        Command::Indices(c) => single(&c, Stage::Indices, none()),
        Command::Screen(c) => single(&c, Stage::Screen, none()),
        Command::Fit(c) => single(&c, Stage::Fit, none()),
        Command::Cv(c) => single(&c, Stage::Cv, none()),
        Command::Tune(c) => single(&c, Stage::Tune, none()),
        Command::Predict { common, forest, features } => single(
            &common,
            Stage::Predict,
            StageOptions { forest, features, ..none() },
        ),
        Command::Diagnose(c) => single(&c, Stage::Diagnose, none()),
        Command::Pdp { common, features } => single(
            &common,
            Stage::Pdp,
            StageOptions {
                pdp_features: (!features.is_empty()).then_some(features),
                ..none()
            },
        ),
        Command::Shap(c) => single(&c, Stage::Shap, none()),
        Command::Importance(c) => single(&c, Stage::Importance, none()),
        Command::Interactions(c) => single(&c, Stage::Interactions, none()),
        Command::Permtest(c) => single(&c, Stage::Permtest, none()),
        Command::Report(c) => single(&c, Stage::Report, none()),
        Command::Simulate { out, seed } => fixture::write_panel(&out, seed),
    }
}

fn main() -> ExitCode {
    // clap exits with status 2 on usage errors
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
