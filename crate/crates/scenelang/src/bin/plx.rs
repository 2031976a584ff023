use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use scenelang::{build, load_file, resolve, validate_machine, Forest, PlxError};

#[derive(Parser)]
#[command(name = "plx", about = "Check and flatten .plx model files")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Parse and resolve every model in a file, reporting diagnostics.
    Check { file: PathBuf },
    /// Resolve and assemble one model and write it as JSON.
    Flatten {
        file: PathBuf,
        #[arg(long)]
        model: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(short = 'o', long)]
        output: Option<PathBuf>,
    },
}

fn check(forest: &Forest) -> Result<(), PlxError> {
    let root = forest.units.last().map(|u| u.models.clone()).unwrap_or_default();
    for m in &root {
        let tree = resolve(&m.name, forest)?;
        let c = validate_machine(&tree);
        println!("{}: {} bodies, {} constraints ({} actuated)", m.name, tree.bodies.len(), c.total, c.actuated);
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Check { file } => load_file(&file).and_then(|f| check(&f)),
        Cmd::Flatten { file, model, seed, output } => load_file(&file)
            .and_then(|f| build(&f, model.as_deref(), seed))
            .and_then(|tree| {
                let json = tree.to_json();
                match output {
                    Some(path) => std::fs::write(&path, json + "\n")
                        .map_err(|e| PlxError::Io { path: path.display().to_string(), message: e.to_string() }),
                    None => {
                        println!("{json}");
                        Ok(())
                    }
                }
            }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
