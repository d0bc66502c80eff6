use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Arg, ArgAction, ArgMatches, Command};
use jumptime_cli::commands::{self, SUBCOMMANDS};
use jumptime_cli::config::{keys_for, RawConfig};
use jumptime_cli::{exit, output, RunError};

fn about(sub: &str) -> &'static str {
    match sub {
        "simulate" => "Simulate paths and write terminal values",
        "theta" => "Tabulate theta_n and the smoothness time thresholds",
        "duality" => "Monte Carlo residuals of the duality between D and delta",
        "ibp" => "Integration by parts estimates against direct Monte Carlo",
        "decay" => "Characteristic function modulus and envelope curves",
        "density" => "Kernel and integration by parts density estimates",
        "coverage" => "Frequency of the degenerate event against its bound",
        "check-model" => "Spot checks of the model hypotheses and partial derivatives",
        _ => "",
    }
}

fn keys_help(sub: &str) -> String {
    let mut s = String::from("Config keys:\n");
    for k in keys_for(sub) {
        let default = if k.default.is_empty() { "-" } else { k.default };
        s.push_str(&format!("  {:<20} {} [default: {}]\n", k.key, k.help, default));
    }
    s
}

pub fn cli() -> Command {
    let common = [
        Arg::new("config").long("config").value_name("PATH").help("Config file of `key = value` lines"),
        Arg::new("seed").long("seed").value_name("U64").help("Override run.seed"),
        Arg::new("out").long("out").value_name("DIR").help("Override output.dir"),
        Arg::new("paths").long("paths").value_name("M").help("Override run.paths"),
        Arg::new("set").long("set").value_name("KEY=VALUE").action(ArgAction::Append).help("Override any config key"),
        Arg::new("assert")
            .long("assert")
            .action(ArgAction::SetTrue)
            .help("Exit with status 4 when the subcommand's check fails"),
    ];
    let mut cmd = Command::new("jumptime")
        .version(env!("CARGO_PKG_VERSION"))
        .about("Jump-time integration by parts experiments")
        .subcommand_required(true)
        .arg_required_else_help(true)
        .after_help("Exit status: 0 ok, 2 config error, 3 numerical degeneracy, 4 failed --assert check.");
    for sub in SUBCOMMANDS {
        cmd = cmd.subcommand(Command::new(sub).about(about(sub)).args(common.clone()).after_help(keys_help(sub)));
    }
    cmd
}

fn load(m: &ArgMatches) -> Result<RawConfig, RunError> {
    let mut raw = match m.get_one::<String>("config") {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| jumptime_cli::ConfigError::Io { path: p.clone(), message: e.to_string() })?;
            RawConfig::parse(&text)?
        }
        None => RawConfig::default(),
    };
    for kv in m.get_many::<String>("set").into_iter().flatten() {
        let (k, v) =
            kv.split_once('=').ok_or_else(|| jumptime_cli::ConfigError::Syntax { line: 0, text: kv.clone() })?;
        raw.set(k.trim(), v.trim())?;
    }
    for (flag, key) in [("seed", "run.seed"), ("paths", "run.paths"), ("out", "output.dir")] {
        if let Some(v) = m.get_one::<String>(flag) {
            raw.set(key, v)?;
        }
    }
    Ok(raw)
}

fn execute(sub: &str, m: &ArgMatches) -> Result<bool, RunError> {
    let start = Instant::now();
    let cfg = load(m)?.resolve()?;
    let table = commands::run(sub, &cfg)?;
    let asserted = m.get_flag("assert");
    let fp = cfg.fingerprint();
    let manifest = output::manifest(sub, &cfg, &table, asserted, start.elapsed().as_secs_f64());
    let dir: PathBuf = cfg.out.clone();
    output::write(&dir, &output::csv(&table, &fp), &manifest)?;
    eprintln!(
        "{sub}: {} rows written to {} (check {})",
        table.rows.len(),
        dir.display(),
        if table.passed { "passed" } else { "failed" }
    );
    Ok(!asserted || table.passed)
}

fn main() -> ExitCode {
    let matches = cli().get_matches();
    let (sub, m) = matches.subcommand().expect("subcommand is required");
    let code = match execute(sub, m) {
        Ok(true) => exit::OK,
        Ok(false) => exit::ASSERTION,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    ExitCode::from(code as u8)
}
