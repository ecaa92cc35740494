use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use kamal_cli::commands::{self, default_teacher_paths};
use kamal_cli::config::defaults_table;
use kamal_cli::metrics::Method;
use kamal_cli::{CliError, Config, Result, Settings};

#[derive(Parser)]
#[command(
    name = "kamal",
    version,
    about = "Amalgamate several teacher classifiers into one compact student",
    after_long_help = "Exit codes: 0 success, 2 config error, 3 I/O error, 4 numeric failure."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Config file (`key = value` lines); unset keys take their defaults
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config's `seed`
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the config's `out.dir`
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate or load the data, split the classes and train the teachers
    TrainTeachers {
        #[command(flatten)]
        common: Common,
    },
    /// Amalgamate teacher features and learn the student layer by layer
    Amalgamate {
        #[command(flatten)]
        common: Common,
        /// Teacher checkpoints (default: OUT/teacher1.kacp ..)
        #[arg(long, num_args = 1..)]
        teachers: Vec<PathBuf>,
    },
    /// Jointly fine-tune the layer-wise student against the teachers' scores
    Learn {
        #[command(flatten)]
        common: Common,
        /// Layer-wise student (default: OUT/student_layerwise.kacp)
        #[arg(long)]
        student: Option<PathBuf>,
        #[arg(long, num_args = 1..)]
        teachers: Vec<PathBuf>,
        /// Also train the distillation baseline with the same epoch budget
        #[arg(long)]
        baseline: bool,
    },
    /// Evaluate the ensemble and students on the held-out set
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long, num_args = 1..)]
        teachers: Vec<PathBuf>,
        /// Baseline student (default: OUT/student_baseline.kacp if present)
        #[arg(long)]
        baseline: Option<PathBuf>,
        /// Layer-wise student (default: OUT/student_layerwise.kacp if present)
        #[arg(long)]
        layerwise: Option<PathBuf>,
        /// Jointly learned student (default: OUT/student_joint.kacp if present)
        #[arg(long)]
        joint: Option<PathBuf>,
    },
    /// Run the FAM x layer-wise x teachers x mode x seeds factorial
    Ablate {
        #[command(flatten)]
        common: Common,
    },
}

fn settings(common: &Common) -> Result<(Config, Settings)> {
    let mut cfg = match &common.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    if let Some(seed) = common.seed {
        cfg.set("seed", &seed.to_string())?;
    }
    if let Some(out) = &common.out {
        let out = out
            .to_str()
            .ok_or_else(|| CliError::config("out.dir", "path is not UTF-8"))?;
        cfg.set("out.dir", out)?;
    }
    let s = Settings::from_config(&cfg)?;
    Ok((cfg, s))
}

fn teachers_or_default(given: Vec<PathBuf>, s: &Settings) -> Vec<PathBuf> {
    if given.is_empty() {
        default_teacher_paths(s)
    } else {
        given
    }
}

fn existing(given: Option<PathBuf>, s: &Settings, file: &str) -> Option<PathBuf> {
    given.or_else(|| Some(s.out_dir.join(file)).filter(|p| p.exists()))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::TrainTeachers { common } => {
            let (cfg, s) = settings(&common)?;
            for p in commands::cmd_train_teachers(&cfg, &s)? {
                println!("wrote {}", p.display());
            }
        }
        Command::Amalgamate { common, teachers } => {
            let (cfg, s) = settings(&common)?;
            let teachers = teachers_or_default(teachers, &s);
            let p = commands::cmd_amalgamate(&cfg, &s, &teachers)?;
            println!("wrote {}", p.display());
        }
        Command::Learn {
            common,
            student,
            teachers,
            baseline,
        } => {
            let (cfg, s) = settings(&common)?;
            let teachers = teachers_or_default(teachers, &s);
            let student = student.unwrap_or_else(|| s.out_dir.join(commands::LAYERWISE_FILE));
            let p = commands::cmd_learn(&cfg, &s, &student, &teachers, baseline)?;
            println!("wrote {}", p.display());
        }
        Command::Eval {
            common,
            teachers,
            baseline,
            layerwise,
            joint,
        } => {
            let (cfg, s) = settings(&common)?;
            let teachers = teachers_or_default(teachers, &s);
            let students: Vec<(Method, PathBuf)> = [
                (Method::Baseline, existing(baseline, &s, commands::BASELINE_FILE)),
                (Method::Layerwise, existing(layerwise, &s, commands::LAYERWISE_FILE)),
                (Method::Joint, existing(joint, &s, commands::JOINT_FILE)),
            ]
            .into_iter()
            .filter_map(|(m, p)| p.map(|p| (m, p)))
            .collect();
            for row in commands::cmd_eval(&cfg, &s, &teachers, &students)? {
                let parts: Vec<String> = row.accuracy_parts.iter().map(|a| format!("{:.2}", 100.0 * a)).collect();
                println!(
                    "{:<10} params {:>9}  whole {:6.2}%  parts [{}]",
                    row.method.as_str(),
                    row.param_count.unwrap_or(0),
                    100.0 * row.accuracy_whole.unwrap_or(0.0),
                    parts.join(", ")
                );
            }
        }
        Command::Ablate { common } => {
            let (cfg, s) = settings(&common)?;
            let rows = commands::cmd_ablate(&cfg, &s)?;
            let failed = rows
                .iter()
                .filter(|r| r.status == Some(kamal_cli::metrics::Status::Failed))
                .count();
            println!(
                "{} cells, {} failed; wrote {}",
                rows.len(),
                failed,
                s.out_dir.join("ablate.csv").display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            if e.kind() == clap::error::ErrorKind::DisplayHelp {
                // a closed pipe (`kamal --help | head`) is not an error
                let _ = writeln!(
                    std::io::stdout(),
                    "\nConfiguration keys (key, default, meaning):\n{}",
                    defaults_table()
                );
            }
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
