mod commands;
mod settings;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use settings::{Extra, Global, Kind, Model};

/// Gaussian free fields, the spherical model and the spin O(N) model on
/// discrete tori.
#[derive(Debug, Parser)]
#[command(name = "torusgff", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Laplacian eigenvalues of the torus in nondecreasing order.
    Spectrum,
    /// Green function G(0, dx) over the canonical box.
    Green {
        #[arg(long, value_enum)]
        kind: Option<Kind>,
    },
    /// Solve the torus mass equation.
    Mass,
    /// Draw samples and write them with a manifest.
    Sample {
        #[arg(long, value_enum)]
        model: Option<Model>,
    },
    /// Run one verification experiment, or `all`.
    Verify {
        /// Experiment id or `all`.
        experiment: String,
    },
}

/// Outcome of a command that ran to completion.
pub enum Outcome {
    Success,
    GateFailure,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let argv: Vec<String> = std::env::args().collect();
    let mut extra = match &cli.command {
        Command::Green { kind } => Extra {
            kind: *kind,
            model: None,
        },
        Command::Sample { model } => Extra {
            kind: None,
            model: *model,
        },
        _ => Extra::default(),
    };
    let result = cli.global.resolve(&mut extra).and_then(|g| {
        let pool = {
            let mut b = rayon::ThreadPoolBuilder::new();
            if let Some(t) = g.thread_count()? {
                b = b.num_threads(t);
            }
            b.build()
                .map_err(|e| torusgff_core::Error::Resource(format!("thread pool: {e}")))?
        };
        pool.install(|| match &cli.command {
            Command::Spectrum => commands::spectrum(&g),
            Command::Green { .. } => commands::green(&g, &extra),
            Command::Mass => commands::mass(&g),
            Command::Sample { .. } => commands::sample(&g, &extra, argv),
            Command::Verify { experiment } => commands::verify(&g, &extra, experiment, argv),
        })
    });
    match result {
        Ok(Outcome::Success) => ExitCode::SUCCESS,
        Ok(Outcome::GateFailure) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
