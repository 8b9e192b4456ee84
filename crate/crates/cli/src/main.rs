use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use prekopa_cli::error::{CliError, Result};
use prekopa_cli::runner::{self, CheckResult};
use prekopa_cli::scenario::{self, CheckDef};
use prekopa_cli::emit;

#[derive(Parser)]
#[command(
    name = "prekopa",
    version,
    about = "Verify log-concavity inequalities described by a scenario file"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every check in a scenario and emit a report
    Check(CheckArgs),
    /// Re-run one check while sweeping a numeric parameter, emitting CSV
    Sweep(SweepArgs),
    /// Validate a scenario and re-emit it in canonical form
    Fmt(FmtArgs),
    /// Print the tool version
    Version,
}

#[derive(Args)]
struct CheckArgs {
    /// Scenario file (JSON)
    #[arg(long)]
    scenario: PathBuf,
    /// Write the report here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
    /// Worker threads; 0 picks automatically
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    /// Replace every seed in the scenario
    #[arg(long)]
    seed_override: Option<u64>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    scenario: PathBuf,
    /// Label of the check to sweep
    #[arg(long)]
    check: String,
    /// JSON pointer into the check's parameters, e.g. /s or /lattice/radius
    #[arg(long)]
    param: String,
    #[arg(long)]
    from: f64,
    #[arg(long)]
    to: f64,
    /// Number of evenly spaced values, at least 2
    #[arg(long)]
    steps: usize,
    /// Write the CSV here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
    /// Replace every seed in the swept check
    #[arg(long)]
    seed_override: Option<u64>,
}

#[derive(Args)]
struct FmtArgs {
    #[arg(long)]
    scenario: PathBuf,
    /// Write the canonical form here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
    Summary,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(command: Command) -> Result<ExitCode> {
    match command {
        Command::Check(args) => cmd_check(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Fmt(args) => cmd_fmt(args),
        Command::Version => {
            println!("prekopa {}", env!("CARGO_PKG_VERSION"));
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn write_out(out: Option<&PathBuf>, content: &str) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, content).map_err(|source| CliError::Write {
            path: path.display().to_string(),
            source,
        }),
        None => {
            print!("{content}");
            Ok(())
        }
    }
}

fn cmd_check(args: CheckArgs) -> Result<ExitCode> {
    let loaded = scenario::load(&args.scenario)?;
    let report = runner::run(&loaded, args.jobs, args.seed_override)?;
    let content = match args.format {
        Format::Json => emit::to_json(&report),
        Format::Csv => emit::to_csv(&report)?,
        Format::Summary => emit::to_summary(&report),
    };
    write_out(args.out.as_ref(), &content)?;
    Ok(ExitCode::from(report.exit_code() as u8))
}

fn cmd_sweep(args: SweepArgs) -> Result<ExitCode> {
    if args.steps < 2 {
        return Err(CliError::Invalid("sweep needs at least 2 steps".into()));
    }
    let loaded = scenario::load(&args.scenario)?;
    let def = loaded
        .scenario
        .checks
        .iter()
        .find(|c| c.label == args.check)
        .ok_or_else(|| CliError::Invalid(format!("no check labeled '{}'", args.check)))?
        .clone();
    let resolved = runner::resolve_measures(&loaded)?;

    let mut rows: Vec<(f64, CheckResult)> = Vec::with_capacity(args.steps);
    for i in 0..args.steps {
        let value = args.from + (args.to - args.from) * i as f64 / (args.steps - 1) as f64;
        let mut patched = patch_check(&def, &args.param, value)?;
        if let Some(seed) = args.seed_override {
            patched.kind.override_seed(seed);
        }
        let result = runner::run_check(&patched, &resolved)?;
        rows.push((value, result));
    }

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["value", "label", "kind", "verdict", "margin", "tolerance", "samples"])
        .map_err(|e| CliError::Other(format!("csv: {e}")))?;
    let mut any_bad = false;
    for (value, r) in &rows {
        if r.verdict != prekopa_core::Verdict::Pass {
            any_bad = true;
        }
        let verdict = match r.verdict {
            prekopa_core::Verdict::Pass => "pass",
            prekopa_core::Verdict::Fail => "fail",
            prekopa_core::Verdict::Inconclusive => "inconclusive",
        };
        let margin = if r.margin.is_nan() {
            "n/a".to_string()
        } else {
            format!("{:.9e}", r.margin)
        };
        w.write_record([
            &format!("{value:.9e}"),
            r.label.as_str(),
            r.kind.as_str(),
            verdict,
            &margin,
            &format!("{:e}", r.tolerance),
            &r.samples.to_string(),
        ])
        .map_err(|e| CliError::Other(format!("csv: {e}")))?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| CliError::Other(format!("csv: {e}")))?;
    let content =
        String::from_utf8(bytes).map_err(|e| CliError::Other(format!("csv: {e}")))?;
    write_out(args.out.as_ref(), &content)?;
    Ok(if any_bad {
        ExitCode::from(1)
    } else {
        ExitCode::SUCCESS
    })
}

/// Sets the parameter at `pointer` (relative to the check's parameter object)
/// to `value`, preserving integer-ness when the original field was integral.
fn patch_check(def: &CheckDef, pointer: &str, value: f64) -> Result<CheckDef> {
    let mut json = serde_json::to_value(&def.kind).expect("check serializes");
    // externally tagged: { "<kind>": { ...params... } }
    let params = json
        .as_object_mut()
        .and_then(|m| m.values_mut().next())
        .ok_or_else(|| CliError::Invalid("malformed check".into()))?;
    let slot = params.pointer_mut(pointer).ok_or_else(|| {
        CliError::Invalid(format!("check has no parameter at '{pointer}'"))
    })?;
    let was_integer = slot.as_u64().is_some() && slot.as_f64().map(|f| f.fract() == 0.0) == Some(true);
    *slot = if was_integer && value.fract() == 0.0 && value >= 0.0 {
        serde_json::Value::from(value as u64)
    } else {
        serde_json::Number::from_f64(value)
            .map(serde_json::Value::Number)
            .ok_or_else(|| CliError::Invalid(format!("cannot sweep to {value}")))?
    };
    let kind = serde_json::from_value(json)
        .map_err(|e| CliError::Invalid(format!("swept value does not fit '{pointer}': {e}")))?;
    Ok(CheckDef {
        label: def.label.clone(),
        kind,
    })
}

fn cmd_fmt(args: FmtArgs) -> Result<ExitCode> {
    let loaded = scenario::load(&args.scenario)?;
    let content = scenario::canonical_json(&loaded.scenario);
    write_out(args.out.as_ref(), &content)?;
    Ok(ExitCode::SUCCESS)
}

#[cfg(test)]
mod tests {
    use super::*;
    use prekopa_cli::scenario::CheckKind;

    fn check() -> CheckDef {
        let json = r#"{
            "label": "lc",
            "kind": {"log_concavity": {"measure": "g", "tolerance": 1e-6, "pairs": 10, "seed": 1}}
        }"#;
        serde_json::from_str(json).unwrap()
    }

    #[test]
    fn patch_replaces_float_parameter() {
        let patched = patch_check(&check(), "/tolerance", 0.5).unwrap();
        match patched.kind {
            CheckKind::LogConcavity(p) => assert_eq!(p.tolerance, 0.5),
            other => panic!("unexpected kind {other:?}"),
        }
    }

    #[test]
    fn patch_keeps_integer_fields_integral() {
        let patched = patch_check(&check(), "/pairs", 25.0).unwrap();
        match patched.kind {
            CheckKind::LogConcavity(p) => assert_eq!(p.pairs, 25),
            other => panic!("unexpected kind {other:?}"),
        }
    }

    #[test]
    fn patch_rejects_fractional_value_for_integer_field() {
        assert!(patch_check(&check(), "/pairs", 2.5).is_err());
    }

    #[test]
    fn patch_rejects_unknown_pointer() {
        let err = patch_check(&check(), "/nope", 1.0).unwrap_err().to_string();
        assert!(err.contains("/nope"), "err: {err}");
    }
}
