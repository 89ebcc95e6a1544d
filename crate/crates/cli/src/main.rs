use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use sbmm_cli::commands::{
    cmd_gen, cmd_matmul, cmd_opcount, cmd_quantize, parse_dim_list, parse_dims, parse_sweep,
    run_bench, run_compare,
};
use sbmm_cli::kvfile::accel_config_from_file;
use sbmm_cli::tensor::DType;
use sbmm_cli::Result;
use sbmm_core::driver::Backend;
use sbmm_core::sim::AcceleratorConfig;
use sbmm_core::speedup::BaselineModel;

/// Super-block quantized MatMul workbench: codecs, reference kernel,
/// accelerator cycle model, driver and profiler.
#[derive(Parser)]
#[command(name = "sbmm", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Q3k,
    Q8k,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendArg {
    /// Reference kernel on the host.
    Ref,
    /// Simulated accelerator.
    Sim,
}

#[derive(Subcommand)]
enum Command {
    /// Write a seeded Gaussian f32 tensor.
    Gen {
        /// Comma-separated dims, e.g. 4,512
        #[arg(long)]
        dims: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Standard deviation of the entries.
        #[arg(long, default_value_t = 1.0)]
        std: f32,
        #[arg(long)]
        out: PathBuf,
    },
    /// Quantize an f32 tensor file into packed super-blocks.
    Quantize {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum)]
        format: FormatArg,
        #[arg(long)]
        output: PathBuf,
    },
    /// Multiply q3k weights with q8k inputs on a chosen backend.
    Matmul {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        inputs: PathBuf,
        #[arg(long, value_enum, default_value = "ref")]
        backend: BackendArg,
        /// Accelerator config file (key=value); defaults apply otherwise.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Write a profile report (.json for JSON, key=value otherwise).
        #[arg(long)]
        profile: Option<PathBuf>,
    },
    /// Assert reference/simulator bit-exactness on a seeded problem.
    Compare {
        /// Problem size M,N,K (K a multiple of 256).
        #[arg(long)]
        dims: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Test hook: corrupt one simulator output bit so the gate fires.
        #[arg(long, hide = true, default_value_t = false)]
        corrupt_sim: bool,
    },
    /// Report modeled cycles, time and speedup, optionally over a sweep.
    Bench {
        #[arg(long)]
        dims: String,
        #[arg(long)]
        config: Option<PathBuf>,
        /// e.g. lanes=1,2,4,8 or stream_width_bits=32,64,128
        #[arg(long)]
        sweep: Option<String>,
    },
    /// Count per-token ops for a transformer shape.
    Opcount {
        /// Shape file (key=value, see configs/).
        #[arg(long)]
        shape: PathBuf,
        #[arg(long)]
        context: u64,
    },
}

fn load_config(path: &Option<PathBuf>) -> Result<AcceleratorConfig> {
    match path {
        Some(p) => accel_config_from_file(p),
        None => Ok(AcceleratorConfig::default()),
    }
}

fn run(cli: Cli) -> Result<String> {
    match cli.command {
        Command::Gen {
            dims,
            seed,
            std,
            out,
        } => cmd_gen(&parse_dim_list(&dims)?, seed, std, &out),
        Command::Quantize {
            input,
            format,
            output,
        } => {
            let dtype = match format {
                FormatArg::Q3k => DType::Q3K,
                FormatArg::Q8k => DType::Q8K,
            };
            cmd_quantize(&input, dtype, &output)
        }
        Command::Matmul {
            weights,
            inputs,
            backend,
            config,
            out,
            profile,
        } => {
            let backend = match backend {
                BackendArg::Ref => Backend::Reference,
                BackendArg::Sim => Backend::Simulator(load_config(&config)?),
            };
            cmd_matmul(&weights, &inputs, &backend, &out, profile.as_deref())
        }
        Command::Compare {
            dims,
            config,
            seed,
            corrupt_sim,
        } => {
            let outcome = run_compare(
                &parse_dims(&dims)?,
                &load_config(&config)?,
                seed,
                corrupt_sim,
            )?;
            Ok(outcome.report)
        }
        Command::Bench {
            dims,
            config,
            sweep,
        } => {
            let sweep = sweep.as_deref().map(parse_sweep).transpose()?;
            run_bench(
                &parse_dims(&dims)?,
                &load_config(&config)?,
                sweep,
                &BaselineModel::default(),
            )
        }
        Command::Opcount { shape, context } => cmd_opcount(&shape, context),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version print on stdout and exit cleanly; real
            // argument errors map to the usage exit code.
            if e.use_stderr() {
                eprint!("{e}");
                return ExitCode::from(1);
            }
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    match run(cli) {
        Ok(output) => {
            print!("{output}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
