use std::fs::File;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fdff::baselines::Scheme;
use fdff::config::{self, Profile, RunConfig};
use fdff::harness::{
    lemma1_passes, run_rate_vs_alpha, run_rate_vs_power, run_single, run_verify_lemma1, write_csv, ExperimentSpec,
    ResultRow,
};

#[derive(Parser)]
#[command(version, about = "Full-duplex filter-and-forward relay rate experiments")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
    /// Key/value file applied on top of the profile.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    trials: Option<usize>,
    /// CSV destination; stdout when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, default_value = "desk")]
    profile: String,
    /// Comma-separated: joint,equal,source_only,relay_only,conventional.
    #[arg(long, global = true, value_delimiter = ',')]
    schemes: Option<Vec<String>>,
    /// Comma-separated residual self-interference reductions in dB.
    #[arg(long = "zeta-db", global = true, value_delimiter = ',', allow_hyphen_values = true)]
    zeta_db: Option<Vec<f64>>,
}

#[derive(Subcommand)]
enum Cmd {
    /// One channel draw, every requested scheme.
    Solve,
    /// Rate against P̄ = Q̄ in dBm.
    Fig2,
    /// Rate against loop-back gain α².
    Fig3,
    /// Time-domain check of the loop response formulas.
    VerifyLemma1 {
        #[arg(long, default_value_t = 10)]
        fixtures: usize,
    },
}

fn base_config(cli: &Cli) -> fdff::Result<RunConfig> {
    let profile: Profile = cli.profile.parse()?;
    let mut base = match &cli.config {
        Some(path) => config::load(path, profile)?,
        None => RunConfig::profile(profile),
    };
    if let Some(s) = cli.seed {
        base.system.seed = s;
    }
    Ok(base)
}

fn customize(mut spec: ExperimentSpec, cli: &Cli) -> fdff::Result<ExperimentSpec> {
    if let Some(t) = cli.trials {
        spec.trials = t;
    }
    if let Some(list) = &cli.schemes {
        spec.schemes = list.iter().map(|s| s.parse::<Scheme>()).collect::<fdff::Result<_>>()?;
    }
    if let Some(z) = &cli.zeta_db {
        spec.zeta_db_list = z.clone();
    }
    Ok(spec)
}

fn emit(rows: &[ResultRow], out: &Option<PathBuf>) -> fdff::Result<()> {
    match out {
        Some(path) => write_csv(rows, File::create(path)?),
        None => write_csv(rows, io::stdout().lock()),
    }
}

fn run(cli: &Cli) -> fdff::Result<bool> {
    let base = base_config(cli)?;
    match &cli.cmd {
        Cmd::Solve => {
            let mut spec = customize(ExperimentSpec::rate_vs_power(base.clone()), cli)?;
            spec.kind = fdff::harness::ExperimentKind::SingleSolve;
            if cli.schemes.is_none() {
                spec.schemes = vec![Scheme::Joint, Scheme::RelayOnly, Scheme::SourceOnly, Scheme::Equal];
            }
            emit(&run_single(&spec)?, &cli.out)?;
        }
        Cmd::Fig2 => {
            let spec = customize(ExperimentSpec::rate_vs_power(base), cli)?;
            emit(&run_rate_vs_power(&spec)?, &cli.out)?;
        }
        Cmd::Fig3 => {
            let spec = customize(ExperimentSpec::rate_vs_alpha(base), cli)?;
            emit(&run_rate_vs_alpha(&spec)?, &cli.out)?;
        }
        Cmd::VerifyLemma1 { fixtures } => {
            let reports = run_verify_lemma1(base.system.seed, *fixtures)?;
            let mut out = io::stdout().lock();
            for (i, r) in reports.iter().enumerate() {
                writeln!(out, "fixture {i}: {r}")?;
            }
            let ok = lemma1_passes(&reports);
            writeln!(out, "{}", if ok { "PASS" } else { "FAIL" })?;
            return Ok(ok);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
