//! `neurosim`: assembler, simulator, experiment service, debugger and the
//! NSEM demo behind one binary.

use std::fmt::Write as _;
use std::fs;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand};
use neurosim::gdbstub;
use neurosim::nsem::{self, NsemConfig};
use neurosim::playback::{PlaybackProgram, PlaybackProgramBuilder};
use neurosim::sched::{Client, JobStatus, Server};
use neurosim::simchip::{ChipState, SimConfig};
use neurosim::toolchain::{self, ObjectImage};

const DEFAULT_PORT: u16 = 7433;

#[derive(Parser)]
#[command(name = "neurosim", version, about = "Simulated neuromorphic chip stack")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Endpoint {
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    #[arg(long, env = "NEUROSIM_PORT", default_value_t = DEFAULT_PORT)]
    port: u16,
}

impl Endpoint {
    fn addr(&self) -> String {
        format!("{}:{}", self.host, self.port)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Assemble PPU source into an ELF object.
    Asm {
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Disassemble the .text section of an ELF object.
    Disasm { input: PathBuf },
    /// List the global symbols of an ELF object.
    Nm { input: PathBuf },
    /// Execute a playback program on a local simulator.
    Run {
        program: PathBuf,
        /// Write the serialized result here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the experiment scheduling service.
    Serve {
        #[command(flatten)]
        endpoint: Endpoint,
    },
    /// Submit a playback program to a running service.
    Submit {
        program: PathBuf,
        #[arg(long)]
        user: String,
        #[arg(long, default_value_t = 0)]
        prio: u8,
        #[command(flatten)]
        endpoint: Endpoint,
    },
    /// Query a submitted job and fetch its result.
    Result {
        #[arg(long)]
        job_id: u64,
        /// Block until the job has finished.
        #[arg(long)]
        wait: bool,
        /// Write the serialized result here once available.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        endpoint: Endpoint,
    },
    /// Load an ELF into PPU 0, stop it at its first instruction and serve GDB.
    Gdbserver {
        #[arg(long)]
        program: PathBuf,
        #[arg(long)]
        gdb_port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Exit after this many debug sessions.
        #[arg(long)]
        max_clients: Option<usize>,
    },
    /// Train the hidden-cause network and write CSV reports.
    Nsem {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = NsemConfig::default().duration)]
        duration: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

struct Failure(String);

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure(e.to_string())
    }
}

type Outcome = Result<(), Failure>;

fn read(path: &Path) -> Result<Vec<u8>, Failure> {
    fs::read(path).map_err(|e| Failure(format!("{}: {e}", path.display())))
}

fn write(path: &Path, bytes: &[u8]) -> Outcome {
    fs::write(path, bytes).map_err(|e| Failure(format!("{}: {e}", path.display())))
}

fn load_elf(path: &Path) -> Result<ObjectImage, Failure> {
    toolchain::parse_elf(&read(path)?).map_err(|e| Failure(format!("{}: {e}", path.display())))
}

fn load_program(path: &Path) -> Result<PlaybackProgram, Failure> {
    PlaybackProgram::from_bytes(&read(path)?).map_err(|e| Failure(format!("{}: {e}", path.display())))
}

fn asm(input: &Path, output: &Path) -> Outcome {
    let source = String::from_utf8(read(input)?).map_err(|_| Failure(format!("{}: not UTF-8", input.display())))?;
    let image =
        toolchain::assemble(&source).map_err(|d| Failure(format!("{}:{}: {}", input.display(), d.line, d.message)))?;
    write(output, &image.to_elf())
}

fn nm(input: &Path) -> Outcome {
    let image = load_elf(input)?;
    let mut out = String::new();
    for (name, s) in image.symbols.iter() {
        writeln!(out, "{:08x} {:>4} {} {name}", s.address, s.size, s.section).unwrap();
    }
    print!("{out}");
    Ok(())
}

fn run(program: &Path, out: Option<&Path>) -> Outcome {
    let program = load_program(program)?;
    let mut chip = ChipState::default();
    let (result, error) = match chip.run(&program) {
        Ok(r) => (r, None),
        Err(e) => (e.partial.clone(), Some(e)),
    };
    if let Some(path) = out {
        write(path, &result.to_bytes())?;
    }
    println!(
        "responses {} spikes {} timer {}",
        result.responses.len(),
        result.spikes.len(),
        result.final_timer
    );
    match error {
        Some(e) => Err(Failure(format!("command {}: {}", e.executed, e.error))),
        None => Ok(()),
    }
}

fn serve(endpoint: &Endpoint) -> Outcome {
    let server = Server::bind(endpoint.addr(), SimConfig::default())?;
    let handle = server.spawn()?;
    eprintln!("listening on {}", handle.local_addr());
    handle.wait();
    Ok(())
}

fn submit(program: &Path, user: &str, prio: u8, endpoint: &Endpoint) -> Outcome {
    let bytes = read(program)?;
    let mut client = Client::connect(endpoint.addr())?;
    let id = client.submit_bytes(user, prio, bytes)?;
    println!("{id}");
    Ok(())
}

fn result(job_id: u64, wait: bool, out: Option<&Path>, endpoint: &Endpoint) -> Outcome {
    let mut client = Client::connect(endpoint.addr())?;
    let report = if wait {
        client.wait(job_id, Duration::from_millis(5))?
    } else {
        client.get_result(job_id)?
    };
    let status = match report.status {
        JobStatus::Queued => "queued",
        JobStatus::Running => "running",
        JobStatus::Done => "done",
        JobStatus::Failed => "failed",
    };
    match report.message() {
        Some(m) if !m.is_empty() => println!("{status}: {m}"),
        _ => println!("{status}"),
    }
    if let (Some(path), Some((bytes, _))) = (out, &report.outcome) {
        write(path, bytes)?;
    }
    match report.status {
        JobStatus::Failed => Err(Failure(format!("job {job_id} failed"))),
        _ => Ok(()),
    }
}

fn gdbserver(program: &Path, host: &str, port: u16, max_clients: Option<usize>) -> Outcome {
    let image = load_elf(program)?;
    let mut chip = ChipState::default();
    let mut b = PlaybackProgramBuilder::new();
    toolchain::load_into(&mut b, &image, 0)?;
    chip.run(&b.done()).map_err(|e| Failure(e.error.to_string()))?;
    let listener = TcpListener::bind((host, port))?;
    eprintln!("gdb server on {}", listener.local_addr()?);
    gdbstub::serve(listener, &mut chip, 0, max_clients)?;
    Ok(())
}

fn run_nsem(seed: u64, duration: u64, out: &Path) -> Outcome {
    let config = NsemConfig {
        seed,
        duration,
        ..NsemConfig::default()
    };
    let mut chip = ChipState::new(config.sim_config())?;
    let report = nsem::run_experiment(&config, &mut chip)?;
    nsem::write_csv(&report, out).map_err(|e| Failure(format!("{}: {e}", out.display())))?;
    let metrics = report.metrics();
    let wta = nsem::wta_violation_fraction(&report, 5);
    let summary = format!(
        "seed {seed}\nduration {duration}\nspikes {}\npurity {:.4}\nwta_violations {:.4}\nassignment {:?}\n",
        report.spikes.len(),
        metrics.purity,
        wta,
        metrics.assignment
    );
    write(&out.join("summary.txt"), summary.as_bytes())?;
    print!("{summary}");
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Asm { input, output } => asm(input, output),
        Command::Disasm { input } => load_elf(input).map(|img| print!("{}", toolchain::disassemble_text(&img.text))),
        Command::Nm { input } => nm(input),
        Command::Run { program, out } => run(program, out.as_deref()),
        Command::Serve { endpoint } => serve(endpoint),
        Command::Submit {
            program,
            user,
            prio,
            endpoint,
        } => submit(program, user, *prio, endpoint),
        Command::Result {
            job_id,
            wait,
            out,
            endpoint,
        } => result(*job_id, *wait, out.as_deref(), endpoint),
        Command::Gdbserver {
            program,
            gdb_port,
            host,
            max_clients,
        } => gdbserver(program, host, *gdb_port, *max_clients),
        Command::Nsem { seed, duration, out } => run_nsem(*seed, *duration, out),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure(message)) => {
            eprintln!("neurosim: {message}");
            ExitCode::from(1)
        }
    }
}
