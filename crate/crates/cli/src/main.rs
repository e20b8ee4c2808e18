mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "nemhom", version, about = "Homogenised Landau-de Gennes potentials for nematic colloids")]
struct Cli {
    /// Worker thread cap.
    #[arg(long, global = true, env = "NEMHOM_THREADS")]
    threads: Option<usize>,
    /// Directory for written artifacts (overrides the config file).
    #[arg(long, global = true, env = "NEMHOM_OUTPUT_DIR")]
    output_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Surface areas and normal moments of catalogue shapes.
    Moments {
        /// Catalogue names; all shapes when omitted.
        names: Vec<String>,
        #[arg(long, default_value_t = 32)]
        order: usize,
    },
    /// Colloidal design realising (a′ − a) tr(Q²) + W tr(QP).
    Design {
        /// P as xx,yy,zz,xy,xz,yz.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        p: Vec<f64>,
        #[arg(long, allow_hyphen_values = true)]
        w: f64,
        #[arg(long, allow_hyphen_values = true)]
        a: f64,
        #[arg(long = "a-prime", allow_hyphen_values = true)]
        a_prime: f64,
        /// Also write design.csv to the output directory.
        #[arg(long)]
        save: bool,
    },
    /// Tabulate the homogenised potential of the configured species over a
    /// CSV of samples (`q0..q4` and optionally `x,y,z`).
    Fhom {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        samples: PathBuf,
    },
    /// Minimise the homogenised functional; writes field.nqf, energy.csv, trace.csv.
    Minimize {
        #[arg(long)]
        config: PathBuf,
    },
    /// ε-sweep of the colloidal functional; writes sweep.csv and one field per ε.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Add a wall-time column.
        #[arg(long)]
        timings: bool,
        /// Skip the per-ε field dumps.
        #[arg(long)]
        no_fields: bool,
    },
    /// Run the verification suite.
    Selftest {
        #[arg(long, default_value_t = 20260315)]
        seed: u64,
        /// Subset of criterion ids, e.g. 1,2,11.
        #[arg(long, value_delimiter = ',')]
        only: Vec<usize>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
            eprintln!("error: kind=usage msg={first}");
            return ExitCode::from(2);
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: kind=usage msg=--threads must be at least 1");
            return ExitCode::from(2);
        }
        // the global pool can only be set once per process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match commands::run(cli.command, cli.output_dir) {
        Ok(code) => code,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error: kind={} msg={msg}", e.kind());
            ExitCode::from(1)
        }
    }
}
