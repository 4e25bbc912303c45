use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use decoy_cli::manifest::{LINK_KEYS, PARAM_KEYS, RUN_KEYS};
use decoy_cli::{
    cmd_analyze, cmd_calibrate, cmd_fit, cmd_simulate, cmd_sweep, parse_grid, CliError, Command, Output, RunManifest,
    EXIT_PARSE,
};
use decoy_core::dataset::REFERENCE_CSV;

/// Decoy-state QKD analysis, simulation and calibration.
///
/// Exit status: 0 success, 2 parse error, 3 invalid configuration,
/// 4 runtime failure (for example an unidentifiable fit).
#[derive(Parser)]
#[command(name = "decoyqkd", version)]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Security bounds for each row of a measured-statistics table.
    Analyze(Common),
    /// Pulse-level Monte Carlo session with a soundness report.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Run chunks one after another instead of in parallel.
        #[arg(long)]
        sequential: bool,
    },
    /// Key rate versus fiber length and the secure-distance cutoff.
    Sweep(Common),
    /// Fit a link model to a measured-statistics table.
    Fit(Common),
    /// Simulate and fit an interferometer phase scan.
    Calibrate {
        #[command(flatten)]
        common: Common,
        /// Also write the scan curve here.
        #[arg(long)]
        scan_out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    /// Input table (or scan curve for calibrate). Defaults to the bundled
    /// reference table.
    #[arg(long, short)]
    input: Option<PathBuf>,
    /// Output file; stdout when omitted.
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// key=value file with protocol and run settings.
    #[arg(long)]
    params: Option<PathBuf>,
    /// key=value file with link model fields.
    #[arg(long)]
    link: Option<PathBuf>,
    /// Override any setting, e.g. --set u_alpha=0. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Length grid start:stop:step in km.
    #[arg(long)]
    grid: Option<String>,
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn build_manifest(command: Command, c: &Common) -> Result<RunManifest, CliError> {
    let mut m = RunManifest::new(command);
    if let Some(path) = &c.link {
        m.apply_file(&read(path)?, &path.display().to_string(), &LINK_KEYS)?;
    }
    if let Some(path) = &c.params {
        let allowed: Vec<&str> = PARAM_KEYS.iter().chain(&LINK_KEYS).chain(&RUN_KEYS).chain(&["seed"]).copied().collect();
        m.apply_file(&read(path)?, &path.display().to_string(), &allowed)?;
    }
    for s in &c.sets {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| CliError::Parse(format!("--set: expected KEY=VALUE, got {s:?}")))?;
        m.set(k.trim(), v.trim(), "--set")?;
    }
    if let Some(seed) = c.seed {
        m.seed = seed;
    }
    if let Some(g) = &c.grid {
        m.grid = parse_grid(g)?;
    }
    Ok(m)
}

fn input_text(c: &Common) -> Result<String, CliError> {
    match &c.input {
        Some(path) => read(path),
        None => Ok(REFERENCE_CSV.to_string()),
    }
}

fn emit(out: &Option<PathBuf>, output: &Output) -> Result<(), CliError> {
    match out {
        Some(path) => fs::write(path, &output.body).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?,
        None => std::io::stdout()
            .write_all(output.body.as_bytes())
            .map_err(|e| CliError::Runtime(format!("stdout: {e}")))?,
    }
    eprint!("{}", output.summary);
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Sub::Analyze(c) => {
            let m = build_manifest(Command::Analyze, &c)?;
            emit(&c.out, &cmd_analyze(&m, &input_text(&c)?)?)
        }
        Sub::Simulate { common: c, sequential } => {
            let m = build_manifest(Command::Simulate, &c)?;
            emit(&c.out, &cmd_simulate(&m, sequential)?)
        }
        Sub::Sweep(c) => {
            let m = build_manifest(Command::Sweep, &c)?;
            emit(&c.out, &cmd_sweep(&m)?)
        }
        Sub::Fit(c) => {
            let m = build_manifest(Command::Fit, &c)?;
            emit(&c.out, &cmd_fit(&m, &input_text(&c)?)?)
        }
        Sub::Calibrate { common: c, scan_out } => {
            let m = build_manifest(Command::Calibrate, &c)?;
            let scan = c.input.as_deref().map(read).transpose()?;
            let (output, curve) = cmd_calibrate(&m, scan.as_deref())?;
            if let Some(path) = &scan_out {
                fs::write(path, curve.to_text()).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
            }
            emit(&c.out, &output)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_PARSE as u8) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("decoyqkd: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
