use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hicon_core::pipeline::{Pipeline, Stage};
use hicon_core::validate::validate_config;
use hicon_core::{ArtifactStore, ElementOrder, HiconError, RunConfig, TriMesh};

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

#[derive(Parser)]
#[command(name = "hicon", version, about = "High-contrast elastic homogenization pipeline")]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Log stage progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the unit-cell mesh and write it as JSON.
    Mesh(StageArgs),
    /// Dirichlet eigenpairs of the soft inclusion.
    Bloch(StageArgs),
    /// Macroscopic tensor of the perforated cell.
    Macro(StageArgs),
    /// Eigenvalues of B(z) and the band gaps.
    Zhikov(StageArgs),
    /// Dispersion surfaces, one table per epsilon.
    Dispersion(StageArgs),
    /// Steklov eigenvalue sweep and rate fits.
    Steklov(StageArgs),
    /// Every stage in dependency order.
    Pipeline(StageArgs),
    /// Invariant checks at a reduced mesh level.
    Validate(ValidateArgs),
}

#[derive(Args)]
struct StageArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Cache directory (overrides the config).
    #[arg(long, env = "HICON_CACHE")]
    cache: Option<PathBuf>,
    /// Refinement level for every stage.
    #[arg(long)]
    refine: Option<usize>,
    /// Element order for every stage (p1 or p2).
    #[arg(long)]
    element_order: Option<ElementOrder>,
    /// Where the mesh stage writes its JSON.
    #[arg(long)]
    mesh_out: Option<PathBuf>,
    /// Use this mesh JSON instead of generating one.
    #[arg(long)]
    mesh_in: Option<PathBuf>,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    config: PathBuf,
    /// Refinement level of the checks.
    #[arg(long, default_value_t = 0)]
    level: usize,
}

fn pipeline_for(args: &StageArgs) -> Result<Pipeline, HiconError> {
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(level) = args.refine {
        cfg.set_refine(level);
    }
    if let Some(order) = args.element_order {
        cfg.set_element_order(order);
    }
    let out = args.out.clone().unwrap_or_else(|| cfg.output.out_dir.clone());
    let cache = args.cache.clone().unwrap_or_else(|| cfg.output.cache_dir.clone());
    let mut p = Pipeline::new(cfg, ArtifactStore::new(cache), out)?;
    if let Some(path) = &args.mesh_in {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HiconError::Config(format!("cannot read {}: {e}", path.display())))?;
        p.mesh_in =
            Some(TriMesh::from_json(&text).map_err(|e| HiconError::Config(format!("{}: {e}", path.display())))?);
    }
    p.mesh_out = args.mesh_out.clone();
    Ok(p)
}

fn run_stages(args: &StageArgs, stages: &[Stage]) -> Result<(), HiconError> {
    let mut p = pipeline_for(args)?;
    for path in p.run(stages)? {
        println!("{}", path.display());
    }
    Ok(())
}

fn validate(args: &ValidateArgs) -> Result<bool, HiconError> {
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| HiconError::Config(format!("cannot read {}: {e}", args.config.display())))?;
    // parse without validation so that bad values show up in the report
    let cfg = RunConfig::from_toml_str_unchecked(&text)?;
    let report = validate_config(&cfg, args.level);
    report.write_table(std::io::stdout().lock())?;
    Ok(report.all_passed())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .filter_level(if cli.verbose {
            log::LevelFilter::Info
        } else {
            log::LevelFilter::Warn
        })
        .parse_default_env()
        .init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    }
    let result = match &cli.command {
        Command::Mesh(a) => run_stages(a, &[Stage::Mesh]),
        Command::Bloch(a) => run_stages(a, &[Stage::Bloch]),
        Command::Macro(a) => run_stages(a, &[Stage::Macro]),
        Command::Zhikov(a) => run_stages(a, &[Stage::Zhikov]),
        Command::Dispersion(a) => run_stages(a, &[Stage::Dispersion]),
        Command::Steklov(a) => run_stages(a, &[Stage::Steklov]),
        Command::Pipeline(a) => run_stages(a, &Stage::ALL),
        Command::Validate(a) => match validate(a) {
            Ok(true) => return ExitCode::SUCCESS,
            Ok(false) => return ExitCode::FAILURE,
            Err(e) => Err(e),
        },
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { EXIT_CONFIG } else { EXIT_NUMERIC })
        }
    }
}
