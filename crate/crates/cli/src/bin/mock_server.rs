//! Out-of-process adapter serving the deterministic mock over the NDJSON
//! wire protocol. Usage: `storyreel-mock-server <work_dir> [--seed N] [--fault F]...`

use std::io::{self, BufWriter};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use storyreel_core::backend::wire::serve;
use storyreel_core::{Backends, MockBackend, MockFault};

#[derive(Parser)]
#[command(name = "storyreel-mock-server", version, about = "Serve the mock backend over stdin/stdout")]
struct Args {
    /// Shared work directory; media paths in messages are relative to it.
    work_dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Fault flag, as accepted in `mock:` URIs.
    #[arg(long = "fault")]
    faults: Vec<String>,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let mut faults = Vec::new();
    for f in &args.faults {
        match MockFault::parse(f) {
            Some(fault) => faults.push(fault),
            None => {
                eprintln!("unknown fault flag {f:?}");
                return ExitCode::from(2);
            }
        }
    }
    let backends = Backends::from_mock(MockBackend::with_faults(args.seed, faults));
    let stdin = io::stdin().lock();
    let stdout = BufWriter::new(io::stdout().lock());
    match serve(stdin, stdout, &backends, &args.work_dir) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("io error: {e}");
            ExitCode::from(1)
        }
    }
}
