use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use rangebearing::harness::{
    apriori_gain_check, emit_outputs, gain_sweep, presets, read_csv, run_ring_benchmark, run_scenario, svg,
    LandmarkSpec, Overrides, Scenario,
};
use rangebearing::Error;

#[derive(Parser)]
#[command(
    name = "rangebearing",
    version,
    about = "Range-only landmark bearing estimation experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file or a built-in preset and write its artifacts.
    Run {
        #[command(flatten)]
        target: Target,
        /// Exit with status 2 when any acceptance check fails, and abort on
        /// small-angle or cone violations.
        #[arg(long)]
        strict: bool,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
    /// Print a priori gain bounds and step-length admissibility per landmark.
    GainCheck {
        #[command(flatten)]
        target: Target,
    },
    /// Run a single-landmark scenario once per gain.
    Sweep {
        #[command(flatten)]
        target: Target,
        #[arg(long, num_args = 1.., value_delimiter = ',', required = true)]
        gammas: Vec<f64>,
    },
    /// Re-render figures from a previously written CSV.
    Report {
        csv: PathBuf,
        /// Output SVG path; defaults to the CSV path with an .svg extension.
        #[arg(long)]
        svg: Option<PathBuf>,
    },
    /// List the built-in presets.
    Presets,
}

#[derive(Args)]
struct Target {
    /// Scenario TOML file or preset name.
    scenario: String,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, conflicts_with = "laps")]
    steps: Option<usize>,
    #[arg(long)]
    laps: Option<f64>,
}

impl Target {
    fn load(&self, strict: bool) -> rangebearing::Result<Scenario> {
        let path = Path::new(&self.scenario);
        let mut s = if path.exists() {
            Scenario::from_path(path)?
        } else {
            presets::preset(&self.scenario)?
        };
        s.apply(&Overrides {
            seed: self.seed,
            steps: self.steps,
            laps: self.laps,
            strict,
        })?;
        Ok(s)
    }
}

fn failure(err: &Error) -> ExitCode {
    eprintln!("error: {err}");
    match err {
        Error::Config(_) | Error::Io { .. } | Error::Csv { .. } => ExitCode::from(1),
        Error::Abort { .. } | Error::Domain(_) => ExitCode::from(3),
    }
}

fn run(target: &Target, strict: bool, out_dir: &Path) -> rangebearing::Result<bool> {
    let s = target.load(strict)?;
    let report = if matches!(s.landmarks, LandmarkSpec::Ring { .. }) && s.run.laps.is_some() {
        run_ring_benchmark(&s)?
    } else {
        run_scenario(&s)?
    };
    for path in emit_outputs(&report, &s.output, out_dir)? {
        println!("wrote {}", path.display());
    }
    println!(
        "final max |e| = {:.3e} rad, lambda_max = {:.4}, converged = {}",
        report.final_max_abs_error(),
        report.diagnostics.lambda_max,
        report.converged
    );
    for v in &report.verdicts {
        println!(
            "{} {}: measured {} threshold {}",
            if v.passed { "PASS" } else { "FAIL" },
            v.id,
            v.measured,
            v.threshold
        );
    }
    Ok(report.all_passed())
}

fn gain_check(target: &Target) -> rangebearing::Result<()> {
    let s = target.load(false)?;
    println!("cone_c = {}", s.analysis.cone_c);
    println!(
        "landmark,min_range,max_range,gain_lower,gain_upper,admissible,max_step,step_cap,speed_ok,gain,gain_inside"
    );
    for c in apriori_gain_check(&s)? {
        println!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            c.landmark,
            c.min_range,
            c.max_range,
            c.lower,
            c.upper,
            c.admissible(),
            c.max_step,
            c.step_cap,
            c.speed_ok(),
            c.gain.map_or_else(|| "adaptive".into(), |g| g.to_string()),
            c.gain_inside().map_or_else(|| "n/a".into(), |b| b.to_string()),
        );
    }
    Ok(())
}

fn sweep(target: &Target, gammas: &[f64]) -> rangebearing::Result<()> {
    let s = target.load(false)?;
    println!("gamma,final_max_error,lambda_max,admissible_fraction,converged");
    for r in gain_sweep(&s, gammas)? {
        println!(
            "{},{},{},{},{}",
            r.gamma, r.final_max_error, r.lambda_max, r.admissible_fraction, r.converged
        );
    }
    Ok(())
}

fn report(csv: &Path, out: Option<&Path>) -> rangebearing::Result<()> {
    let rows = read_csv(csv)?;
    let data = svg::PlotData::from_rows(&rows)?;
    let out = out.map_or_else(|| csv.with_extension("svg"), Path::to_path_buf);
    let title = csv.file_stem().and_then(|s| s.to_str()).unwrap_or("run");
    std::fs::write(&out, svg::render(&data, title)).map_err(|e| Error::Io {
        path: out.clone(),
        source: e,
    })?;
    println!("wrote {}", out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run {
            target,
            strict,
            out_dir,
        } => match run(target, *strict, out_dir) {
            Ok(false) if *strict => return ExitCode::from(2),
            other => other.map(|_| ()),
        },
        Command::GainCheck { target } => gain_check(target),
        Command::Sweep { target, gammas } => sweep(target, gammas),
        Command::Report { csv, svg } => report(csv, svg.as_deref()),
        Command::Presets => {
            presets::names().for_each(|n| println!("{n}"));
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => failure(&e),
    }
}
