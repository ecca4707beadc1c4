use std::fs;
use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use mm_arch::demos;
use mm_arch::model::{Model, ModelError};
use mm_arch::runtime::{metrics, EventKind, Mode, Runtime, Trace};

#[derive(Parser)]
#[command(
    name = "mm-arch",
    version,
    about = "Run and inspect middle-memory architecture models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a model and write its trace and metrics.
    Run(RunArgs),
    /// Step through a model interactively; commands are read from stdin.
    Step(SessionArgs),
    /// Run some cycles and print the resulting state.
    Inspect(InspectArgs),
    /// Compute metrics from a saved trace.
    Metrics {
        #[arg(long)]
        trace: PathBuf,
        /// Write the metrics here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a model file and print it with all defaults filled in.
    Validate {
        #[arg(long)]
        model: PathBuf,
        /// Print only the verdict, not the canonical model.
        #[arg(long)]
        quiet: bool,
    },
    /// Work with the bundled demo models.
    #[command(subcommand)]
    Demo(DemoCommand),
}

#[derive(Subcommand)]
enum DemoCommand {
    /// List the bundled demos.
    List,
    /// Write every bundled demo model into a directory.
    Export { dir: PathBuf },
}

#[derive(Args)]
struct SessionArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value = "mm")]
    mode: Mode,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the trace here when the session ends.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Middle Memory entries shown by inspect.
    #[arg(long, default_value_t = 5)]
    top: usize,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = 100)]
    cycles: u64,
    #[arg(long, default_value = "mm")]
    mode: Mode,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long)]
    metrics: Option<PathBuf>,
}

#[derive(Args)]
struct InspectArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = 0)]
    cycles: u64,
    #[arg(long, default_value = "mm")]
    mode: Mode,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 5)]
    top: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Run(args) => run(args),
        Command::Step(args) => step_session(args, io::stdin().lock(), &mut io::stdout().lock()),
        Command::Inspect(args) => {
            let mut rt = Runtime::new(load(&args.model)?, args.mode, args.seed)?;
            for _ in 0..args.cycles {
                if rt.is_finished() {
                    break;
                }
                rt.step()?;
            }
            print!("{}", rt.inspect(args.top));
            Ok(())
        }
        Command::Metrics { trace, out } => {
            let file = fs::File::open(&trace).with_context(|| format!("opening {}", trace.display()))?;
            let trace =
                Trace::read_from(io::BufReader::new(file)).with_context(|| format!("reading {}", trace.display()))?;
            let json = serde_json::to_string_pretty(&metrics(&trace))?;
            match out {
                Some(path) => write_file(&path, &json),
                None => {
                    println!("{json}");
                    Ok(())
                }
            }
        }
        Command::Validate { model, quiet } => {
            let m = load(&model)?;
            if quiet {
                println!(
                    "ok: {} ({} shadow systems, {} central productions)",
                    m.name,
                    m.shadow_systems.len(),
                    m.central_productions.len()
                );
            } else {
                print!("{}", m.to_json());
            }
            Ok(())
        }
        Command::Demo(DemoCommand::List) => {
            for d in &demos::ALL {
                println!("{:<11} {:>4} cycles  {}", d.name, d.cycles, d.summary);
            }
            Ok(())
        }
        Command::Demo(DemoCommand::Export { dir }) => {
            fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
            for d in &demos::ALL {
                let path = dir.join(format!("{}.json", d.name));
                write_file(&path, d.json)?;
                println!("{}", path.display());
            }
            Ok(())
        }
    }
}

fn load(path: &Path) -> Result<Model> {
    match Model::load(path) {
        Ok(m) => Ok(m),
        Err(ModelError::Invalid(violations)) => {
            for v in &violations {
                eprintln!("{}: {v}", path.display());
            }
            bail!(
                "{} failed validation with {} problem(s)",
                path.display(),
                violations.len()
            )
        }
        Err(e) => Err(e).with_context(|| format!("loading {}", path.display())),
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_trace(path: &Path, trace: &Trace) -> Result<()> {
    let file = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    trace
        .write_to(io::BufWriter::new(file))
        .with_context(|| format!("writing {}", path.display()))
}

fn run(args: RunArgs) -> Result<()> {
    let mut rt = Runtime::new(load(&args.model)?, args.mode, args.seed)?;
    rt.run(args.cycles)?;
    let trace = rt.trace();
    let m = metrics(trace);
    if let Some(path) = &args.trace {
        write_trace(path, trace)?;
    }
    if let Some(path) = &args.metrics {
        write_file(path, &serde_json::to_string_pretty(&m)?)?;
    }
    let halt = trace
        .halt()
        .map(|h| serde_json::to_string(&h).unwrap_or_default())
        .unwrap_or_default();
    println!(
        "{} cycles, halt {}, {} central firings, {} idle, mean candidates {:.3}",
        m.cycles,
        halt.trim_matches('"'),
        m.central_firings,
        m.idle_cycles,
        m.candidates_mean
    );
    Ok(())
}

/// Commands: `step [n]` (or an empty line), `inspect [k]`, `quit`.
fn step_session(args: SessionArgs, input: impl BufRead, out: &mut impl Write) -> Result<()> {
    let mut rt = Runtime::new(load(&args.model)?, args.mode, args.seed)?;
    for line in input.lines() {
        let line = line?;
        let mut words = line.split_whitespace();
        match words.next() {
            None | Some("step") | Some("s") => {
                let n: u64 = words.next().map(str::parse).transpose()?.unwrap_or(1);
                for _ in 0..n {
                    if rt.is_finished() {
                        writeln!(out, "halted")?;
                        break;
                    }
                    let cycle = rt.clock().cycle();
                    rt.step()?;
                    writeln!(out, "{}", summarize(rt.trace(), cycle))?;
                }
            }
            Some("inspect") | Some("i") => {
                let k = words.next().map(str::parse).transpose()?.unwrap_or(args.top);
                write!(out, "{}", rt.inspect(k))?;
            }
            Some("quit") | Some("q") => break,
            Some(other) => writeln!(out, "unknown command {other:?}; try step [n], inspect [k] or quit")?,
        }
    }
    rt.finish();
    if let Some(path) = &args.trace {
        write_trace(path, rt.trace())?;
    }
    Ok(())
}

/// One line describing what the central engine did in `cycle`.
fn summarize(trace: &Trace, cycle: u64) -> String {
    let mut central = "idle".to_string();
    let mut notes = Vec::new();
    for e in trace.events.iter().rev().take_while(|e| e.cycle == cycle) {
        match &e.kind {
            EventKind::CentralFire { production, .. } => central = format!("fire {production}"),
            EventKind::Interrupt { system, buffer, .. } => notes.push(format!("interrupt {system}->{buffer}")),
            EventKind::ShadowFire { system, production, .. } => notes.push(format!("{system}:{production}")),
            EventKind::Halt { .. } => notes.push("halt".into()),
            _ => {}
        }
    }
    notes.reverse();
    if notes.is_empty() {
        format!("cycle {cycle}: {central}")
    } else {
        format!("cycle {cycle}: {central} [{}]", notes.join(", "))
    }
}
