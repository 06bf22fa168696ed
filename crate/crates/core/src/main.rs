use std::error::Error;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::builder::PossibleValuesParser;
use clap::{Parser, Subcommand};
use rayon::prelude::*;

use btprox::harness::{decisions_csv, figure, run_scenario, simulate_stream, Mode, Scenario, FIGURE_NAMES};

type Result<T> = std::result::Result<T, Box<dyn Error + Send + Sync>>;

/// Bluetooth piconet simulator: proximity from link quality, adaptive audio bitrate.
#[derive(Debug, Parser)]
#[command(name = "btprox", version)]
struct Cli {
    /// Override the scenario seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output file, or a directory to write `<scenario>.csv` into.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Default output directory when --out is not given. Without either, CSV goes to stdout.
    #[arg(long, global = true, env = "PICONET_OUT_DIR", hide_env_values = true)]
    out_dir: Option<PathBuf>,

    /// Override one scenario value, e.g. `--set channel.shadowing_sigma_db=2`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a scenario file.
    Simulate {
        file: PathBuf,
        /// Also write the controller decisions (stream mode only).
        #[arg(long)]
        decisions: Option<PathBuf>,
    },
    /// Run a built-in scenario; `all` runs every one into the output directory.
    Figure {
        #[arg(value_parser = figure_names())]
        name: String,
    },
    /// Run a scenario once per value of one parameter, in parallel.
    Sweep {
        /// Scenario file or built-in scenario name.
        scenario: String,
        /// Dotted key, e.g. `toggles.piconet_load`.
        #[arg(long)]
        param: String,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
    },
}

fn figure_names() -> PossibleValuesParser {
    PossibleValuesParser::new(FIGURE_NAMES.iter().copied().chain(["all"]))
}

fn load(source: &str) -> Result<Scenario> {
    let path = Path::new(source);
    if path.exists() {
        let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        return Ok(Scenario::from_toml(&text)?);
    }
    figure(source).ok_or_else(|| format!("{source}: no such file or built-in scenario").into())
}

impl Cli {
    fn prepare(&self, mut s: Scenario) -> Result<Scenario> {
        for kv in &self.overrides {
            let (key, value) = kv
                .split_once('=')
                .ok_or_else(|| format!("--set expects KEY=VALUE, got `{kv}`"))?;
            s = s.with_override(key.trim(), value.trim())?;
        }
        if let Some(seed) = self.seed {
            s.seed = seed;
        }
        s.validate()?;
        Ok(s)
    }

    /// Where a trace named `name` goes; `None` means stdout.
    fn destination(&self, name: &str) -> Option<PathBuf> {
        match (&self.out, &self.out_dir) {
            (Some(p), _) if !p.is_dir() => Some(p.clone()),
            (Some(dir), _) | (None, Some(dir)) => Some(dir.join(format!("{name}.csv"))),
            (None, None) => None,
        }
    }

    fn directory(&self) -> Option<&Path> {
        self.out.as_deref().or(self.out_dir.as_deref())
    }
}

fn emit(dest: Option<&Path>, csv: &str) -> Result<()> {
    match dest {
        Some(path) => {
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent)?;
            }
            fs::write(path, csv).map_err(|e| format!("{}: {e}", path.display()))?;
            eprintln!("wrote {}", path.display());
        }
        None => io::stdout().lock().write_all(csv.as_bytes())?,
    }
    Ok(())
}

fn run_one(cli: &Cli, s: &Scenario, decisions: Option<&Path>) -> Result<()> {
    let csv = run_scenario(s)?.to_csv();
    emit(cli.destination(&s.name).as_deref(), &csv)?;
    if let Some(path) = decisions {
        if s.mode != Mode::Stream {
            return Err(format!("--decisions needs a stream scenario, `{}` is not one", s.name).into());
        }
        let run = simulate_stream(s, &s.trajectory(), s.duration(), s.seed)?;
        emit(Some(path), &decisions_csv(&run))?;
    }
    Ok(())
}

fn sweep(cli: &Cli, base: &Scenario, param: &str, values: &[String]) -> Result<()> {
    let variants: Vec<Scenario> = values
        .iter()
        .map(|v| {
            let mut s = base.with_override(param, v)?;
            s.name = format!("{}_{param}={v}", base.name);
            s.validate()?;
            Ok(s)
        })
        .collect::<Result<_>>()?;
    let traces: Vec<String> = variants
        .par_iter()
        .map(|s| Ok(run_scenario(s)?.to_csv()))
        .collect::<Result<_>>()?;
    if let Some(dir) = cli.directory() {
        for (s, csv) in variants.iter().zip(&traces) {
            emit(Some(&dir.join(format!("{}.csv", s.name))), csv)?;
        }
        return Ok(());
    }
    // One table on stdout, keyed by the swept value.
    let mut out = String::new();
    for (i, (v, csv)) in values.iter().zip(&traces).enumerate() {
        let mut lines = csv.lines();
        let header = lines.next().unwrap_or_default();
        if i == 0 {
            out.push_str(&format!("{param},{header}\n"));
        }
        for line in lines {
            out.push_str(&format!("{v},{line}\n"));
        }
    }
    emit(None, &out)
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Simulate { file, decisions } => {
            let text = fs::read_to_string(file).map_err(|e| format!("{}: {e}", file.display()))?;
            let s = cli.prepare(Scenario::from_toml(&text)?)?;
            run_one(cli, &s, decisions.as_deref())
        }
        Command::Figure { name } if name == "all" => {
            let dir = cli.directory().ok_or("`figure all` needs --out <dir> or PICONET_OUT_DIR")?;
            let scenarios: Vec<Scenario> = FIGURE_NAMES
                .iter()
                .map(|n| cli.prepare(figure(n).expect("listed figure exists")))
                .collect::<Result<_>>()?;
            fs::create_dir_all(dir)?;
            scenarios.par_iter().try_for_each(|s| run_one(cli, s, None))
        }
        Command::Figure { name } => {
            let s = cli.prepare(figure(name).ok_or("unknown figure")?)?;
            run_one(cli, &s, None)
        }
        Command::Sweep { scenario, param, values } => {
            let base = cli.prepare(load(scenario)?)?;
            sweep(cli, &base, param, values)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
