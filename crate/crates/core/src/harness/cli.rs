use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::parser::ValueSource;
use clap::{Arg, ArgMatches};

use super::commands;
use super::config::ExperimentConfig;
use super::Command;
use crate::error::{Error, Result};

/// The `mimic` command: fixed flags, then one `--section.key` flag per
/// configuration setting.
pub fn cli() -> clap::Command {
    let mut cmd = clap::Command::new("mimic")
        .about("Train deep teachers and shallow students that mimic their logits")
        .subcommand_required(true)
        .arg_required_else_help(true)
        .arg(
            Arg::new("config")
                .long("config")
                .global(true)
                .value_name("PATH")
                .help("TOML configuration file"),
        )
        .arg(
            Arg::new("out")
                .long("out")
                .global(true)
                .value_name("DIR")
                .default_value("out")
                .help("Output directory"),
        )
        .arg(
            Arg::new("seeds")
                .long("seeds")
                .global(true)
                .value_name("LIST")
                .help("Comma-separated run seeds (overrides run.seeds)"),
        );
    for (name, default) in ExperimentConfig::setting_names() {
        cmd = cmd.arg(
            Arg::new(name.clone())
                .long(name)
                .global(true)
                .value_name("VALUE")
                .help_heading("Settings")
                .help(format!("default: {default}")),
        );
    }
    for c in Command::ALL {
        let mut sub = clap::Command::new(c.name()).about(c.about());
        match c {
            Command::Eval => {
                sub = sub
                    .arg(Arg::new("model").value_name("MODEL").help("Model file (eval.model)"))
                    .arg(Arg::new("dataset").value_name("DATASET").help("Labeled CSV (eval.dataset)"));
            }
            Command::Absorb => {
                sub = sub.arg(Arg::new("model").value_name("MODEL").help("Model file (absorb.model)"));
            }
            _ => {}
        }
        cmd = cmd.subcommand(sub);
    }
    cmd
}

fn overrides(command: Command, m: &ArgMatches) -> Vec<(String, String)> {
    let mut out = Vec::new();
    for (name, _) in ExperimentConfig::setting_names() {
        if m.value_source(&name) == Some(ValueSource::CommandLine) {
            if let Some(v) = m.get_one::<String>(&name) {
                out.push((name, v.clone()));
            }
        }
    }
    if let Some(seeds) = m.get_one::<String>("seeds") {
        out.push(("run.seeds".into(), seeds.clone()));
    }
    let section = match command {
        Command::Eval => "eval",
        _ => "absorb",
    };
    for positional in ["model", "dataset"] {
        if let Ok(Some(v)) = m.try_get_one::<String>(positional) {
            out.push((format!("{section}.{positional}"), v.clone()));
        }
    }
    out
}

fn dispatch(command: Command, cfg: &ExperimentConfig, out: &Path, stdout: &mut dyn Write) -> Result<()> {
    let print = |stdout: &mut dyn Write, s: String| -> Result<()> {
        writeln!(stdout, "{s}").map_err(|e| Error::io("<stdout>", e))
    };
    let summary = |stdout: &mut dyn Write, rows: &[commands::SweepRow]| -> Result<()> {
        stdout
            .write_all(commands::sweep_csv(rows).as_bytes())
            .map_err(|e| Error::io("<stdout>", e))
    };
    match command {
        Command::TrainTeacher => summary(stdout, &commands::train_teachers(cfg, out)?),
        Command::TrainBaseline => summary(stdout, &commands::train_baselines(cfg, out)?),
        Command::Distill => summary(stdout, &commands::distill(cfg, out)?),
        Command::SweepParams => summary(stdout, &commands::sweep_params(cfg, out)?),
        Command::SweepTeacher => summary(stdout, &commands::sweep_teacher(cfg, out)?),
        Command::Eval => {
            let report = commands::eval(cfg)?;
            print(stdout, format!("error_rate,{:.4}", report.error_rate))
        }
        Command::Absorb => {
            let (before, after) = commands::absorb(cfg, out)?;
            print(stdout, format!("params_before,{before}"))?;
            print(stdout, format!("params_after,{after}"))
        }
    }
}

/// Runs the command line and returns the process exit code: 0 on success,
/// 2 for configuration errors, 3 for data errors, 4 for numeric errors.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match cli().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let (name, sub) = matches.subcommand().expect("subcommand required");
    let command = Command::from_name(name).expect("registered subcommand");
    let result = (|| {
        let config = sub.get_one::<String>("config").map(PathBuf::from);
        let cfg = ExperimentConfig::load(config.as_deref(), &overrides(command, sub))?;
        let out = PathBuf::from(sub.get_one::<String>("out").expect("has default"));
        dispatch(command, &cfg, &out, &mut std::io::stdout().lock())
    })();
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("mimic {name}: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn command_definition_is_consistent() {
        cli().debug_assert();
    }

    #[test]
    fn flags_become_overrides() {
        let m = cli()
            .try_get_matches_from(["mimic", "eval", "m.smim", "d.csv", "--seeds", "3,4", "--student.hidden", "9"])
            .unwrap();
        let (_, sub) = m.subcommand().unwrap();
        let ov = overrides(Command::Eval, sub);
        assert!(ov.contains(&("student.hidden".into(), "9".into())));
        assert!(ov.contains(&("run.seeds".into(), "3,4".into())));
        assert!(ov.contains(&("eval.model".into(), "m.smim".into())));
        assert!(ov.contains(&("eval.dataset".into(), "d.csv".into())));
    }

    #[test]
    fn exit_codes() {
        assert_eq!(run(["mimic", "distill", "--student.nope", "1"]), 2);
        assert_eq!(run(["mimic", "eval", "/missing/model.smim", "/missing/d.csv"]), 2);
        assert_eq!(run(["mimic", "distill", "--run.seeds", ""]), 2);
    }
}
