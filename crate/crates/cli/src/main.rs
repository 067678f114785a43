use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rfim_core::cltlab::{run_clt_experiment, CltError, CltReport, Mode};
use rfim_core::ensembles::generate;
use rfim_lab::config::{self, ConfigError, LoadedConfig};
use rfim_lab::{output, sweep};

const EXIT_VALIDATION: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser)]
#[command(
    name = "rfim-lab",
    version,
    about = "CLT experiments for quadratic-interaction Gibbs measures"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Quenched,
    Annealed,
    Lln,
    Contraction,
    Norms,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Quenched => Mode::Quenched,
            ModeArg::Annealed => Mode::Annealed,
            ModeArg::Lln => Mode::Lln,
            ModeArg::Contraction => Mode::Contraction,
            ModeArg::Norms => Mode::Norms,
        }
    }
}

#[derive(clap::Args)]
struct Common {
    /// Experiment file (TOML or JSON).
    config: PathBuf,
    /// Worker threads; defaults to all cores.
    #[arg(long)]
    jobs: Option<usize>,
    /// Run when the four-norm condition is only heuristically satisfied.
    #[arg(long)]
    force_heuristic: bool,
    /// Output directory; overrides `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        /// Also write the coupling matrix as triplets.
        #[arg(long)]
        export_matrix: bool,
    },
    /// Run a parameter grid over a base experiment.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Grid file with optional lists n, theta, p, N, M.
        #[arg(long)]
        grid: PathBuf,
    },
}

enum Failure {
    Validation(String),
    Runtime(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Validation(e.to_string())
    }
}

impl From<CltError> for Failure {
    fn from(e: CltError) -> Self {
        match e {
            CltError::Config(_) => Failure::Validation(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

fn io_fail(path: &Path) -> impl Fn(std::io::Error) -> Failure + '_ {
    move |e| Failure::Runtime(format!("{}: {e}", path.display()))
}

fn prepare(common: &Common, mode: Option<ModeArg>) -> Result<(LoadedConfig, PathBuf), Failure> {
    if let Some(j) = common.jobs {
        if j == 0 {
            return Err(Failure::Validation("--jobs must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build_global()
            .map_err(|e| Failure::Runtime(e.to_string()))?;
    }
    let mut loaded = config::load(&common.config)?;
    let env = std::env::var(config::SEED_ENV).ok();
    config::apply_seed_override(&mut loaded.experiment, env.as_deref())?;
    if let Some(m) = mode {
        loaded.experiment.mode = m.into();
    }
    if common.force_heuristic {
        loaded.experiment.force_heuristic = true;
    }
    loaded.experiment.validate()?;
    let dir = common
        .out
        .clone()
        .or_else(|| loaded.output.dir.clone())
        .unwrap_or_else(|| PathBuf::from("results"));
    std::fs::create_dir_all(&dir).map_err(io_fail(&dir))?;
    Ok((loaded, dir))
}

fn run(common: &Common, mode: Option<ModeArg>, export_matrix: bool) -> Result<(), Failure> {
    let (loaded, dir) = prepare(common, mode)?;
    let cfg = &loaded.experiment;
    let stem = &loaded.stem;
    if export_matrix {
        let g = generate(&cfg.ensemble).map_err(CltError::from)?;
        output::export_matrix(&dir, stem, &cfg.ensemble, &g)
            .map_err(|e| Failure::Runtime(e.to_string()))?;
    }
    let report = run_clt_experiment(cfg)?;
    let json = dir.join(
        loaded
            .output
            .json
            .clone()
            .unwrap_or_else(|| format!("{stem}.json")),
    );
    output::write_json(&json, &report).map_err(io_fail(&json))?;
    let csv = dir.join(
        loaded
            .output
            .csv
            .clone()
            .unwrap_or_else(|| "results.csv".into()),
    );
    output::append_csv_row(&csv, &CltReport::csv_header(), &report.csv_row())
        .map_err(io_fail(&csv))?;
    if let Some(pt) = output::plot_point(&report) {
        let plot = dir.join(
            loaded
                .output
                .plot
                .clone()
                .unwrap_or_else(|| format!("{stem}_plot.csv")),
        );
        output::write_plot_csv(&plot, &[pt]).map_err(io_fail(&plot))?;
    }
    print!("{}", output::summary_table(&report));
    println!("report: {}", json.display());
    Ok(())
}

fn run_sweep(common: &Common, grid_path: &Path) -> Result<(), Failure> {
    let (loaded, dir) = prepare(common, None)?;
    let grid = sweep::Grid::load(grid_path)?;
    let stem = &loaded.stem;
    let rows = sweep::run_grid(&loaded.experiment, &grid);
    let mut text = sweep::header();
    text.push('\n');
    for r in &rows {
        text.push_str(&sweep::row(&loaded.experiment, r));
        text.push('\n');
    }
    let csv = dir.join(
        loaded
            .output
            .csv
            .clone()
            .unwrap_or_else(|| format!("{stem}_sweep.csv")),
    );
    std::fs::write(&csv, text).map_err(io_fail(&csv))?;
    let plot = dir.join(
        loaded
            .output
            .plot
            .clone()
            .unwrap_or_else(|| format!("{stem}_sweep_plot.csv")),
    );
    output::write_plot_csv(&plot, &sweep::plot_points(&rows, grid.plot_axis()))
        .map_err(io_fail(&plot))?;
    let failed = rows.iter().filter(|r| r.result.is_err()).count();
    println!("{} grid points, {} failed", rows.len(), failed);
    println!("table: {}", csv.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match &cli.command {
        Command::Run {
            common,
            mode,
            export_matrix,
        } => run(common, *mode, *export_matrix),
        Command::Sweep { common, grid } => run_sweep(common, grid),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_VALIDATION)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}
