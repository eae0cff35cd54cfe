use std::path::PathBuf;
use std::process::ExitCode;

use fedckd::config::{parse_config, PRESETS};
use fedckd::runner::{resolve_output_dir, run};

const USAGE: &str = "usage:
  sim run [--config <file>] [--preset <name>] [--<key> <value>]...
  sim presets";

#[derive(Debug, PartialEq)]
enum Command {
    Run {
        config: Option<PathBuf>,
        preset: Option<String>,
        overrides: Vec<(String, String)>,
    },
    Presets,
    Help,
}

fn parse_args(args: &[String]) -> Result<Command, String> {
    let Some(sub) = args.first() else {
        return Ok(Command::Help);
    };
    match sub.as_str() {
        "presets" => Ok(Command::Presets),
        "help" | "-h" | "--help" => Ok(Command::Help),
        "run" => {
            let mut config = None;
            let mut preset = None;
            let mut overrides = Vec::new();
            let mut it = args[1..].iter();
            while let Some(flag) = it.next() {
                let key = flag
                    .strip_prefix("--")
                    .ok_or_else(|| format!("expected --key, found `{flag}`"))?;
                let (key, value) = match key.split_once('=') {
                    Some((k, v)) => (k.to_string(), v.to_string()),
                    None => {
                        let v = it.next().ok_or_else(|| format!("missing value for --{key}"))?;
                        (key.to_string(), v.clone())
                    }
                };
                match key.as_str() {
                    "config" => config = Some(PathBuf::from(value)),
                    "preset" => preset = Some(value),
                    _ => overrides.push((key, value)),
                }
            }
            Ok(Command::Run {
                config,
                preset,
                overrides,
            })
        }
        other => Err(format!("unknown command `{other}`")),
    }
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let cmd = match parse_args(&args) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}\n{USAGE}");
            return ExitCode::from(2);
        }
    };
    match cmd {
        Command::Help => {
            println!("{USAGE}");
            ExitCode::SUCCESS
        }
        Command::Presets => {
            for (name, desc) in PRESETS {
                println!("{name:<30} {desc}");
            }
            ExitCode::SUCCESS
        }
        Command::Run {
            config,
            preset,
            overrides,
        } => {
            let cfg = match parse_config(config.as_deref(), preset.as_deref(), &overrides) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(2);
                }
            };
            let out = resolve_output_dir(&cfg);
            match run(&cfg, &out) {
                Ok(summary) => {
                    println!(
                        "{}: final mean accuracy {:.4} +/- {:.4} over {} repeat(s); outputs in {}",
                        summary.strategy,
                        summary.final_mean_acc_mean,
                        summary.final_mean_acc_std,
                        summary.repeats,
                        out.display()
                    );
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::FAILURE
                }
            }
        }
    }
}
