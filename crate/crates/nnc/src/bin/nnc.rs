//! Command-line experiment runner.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use nnc::baselines::dct::{mean_size_bytes, DctCompressorConfig};
use nnc::baselines::separation::{load_measured_sizes, separation_report};
use nnc::data::{load_idx, synthetic_dataset, SplitTag};
use nnc::error::{NncError, Result};
use nnc::experiment::{
    run_anc_comparison, run_experiment, run_from_manifest, run_lambda_sweep, ExperimentSpec,
};
use nnc::model::EndToEndModel;
use nnc::topology::{builtin_butterfly, LambdaSpec, Topology};
use nnc::training::evaluate;

#[derive(Parser)]
#[command(name = "nnc", about = "Neural network coding over noisy networks", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct SpecArgs {
    /// Experiment spec JSON.
    #[arg(long)]
    spec: PathBuf,
    /// Override the spec's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Reduced preset: 10 epochs, at most 10000 training images.
    #[arg(long)]
    desk_scale: bool,
}

impl SpecArgs {
    fn load(&self) -> Result<ExperimentSpec> {
        let mut spec = ExperimentSpec::from_file(&self.spec)?;
        if let Some(seed) = self.seed {
            spec.seed = seed;
        }
        if self.desk_scale {
            spec.apply_desk_scale();
        }
        Ok(spec)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train a policy and write the artifact directory.
    Train {
        #[command(flatten)]
        spec: SpecArgs,
        /// Output directory for manifest, CSVs, checkpoint, and images.
        #[arg(long)]
        out: PathBuf,
        /// Re-run from a manifest.json instead of a spec (ignores --spec).
        #[arg(long)]
        from_manifest: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on a test set and print the metrics CSV.
    Eval {
        /// Checkpoint written by `train`.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Topology JSON matching the checkpoint.
        #[arg(long)]
        topology: PathBuf,
        /// IDX test-image file; defaults to synthetic images.
        #[arg(long)]
        test_idx: Option<PathBuf>,
        /// Synthetic test images when no IDX file is given.
        #[arg(long, default_value_t = 256)]
        synthetic_count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 10)]
        repetitions: usize,
    },
    /// One training run per lambda; Table-1-style CSV on stdout and disk.
    SweepLambda {
        #[command(flatten)]
        spec: SpecArgs,
        /// Comma-separated lambda values.
        #[arg(long, value_delimiter = ',', required = true)]
        lambdas: Vec<f64>,
        /// Where to write sweep.csv; stdout only when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// NNC lambda sweep vs ANC beta sweep with a crossover summary.
    SweepAnc {
        #[command(flatten)]
        spec: SpecArgs,
        #[arg(long, value_delimiter = ',', required = true)]
        lambdas: Vec<f64>,
        /// Comma-separated amplification factors.
        #[arg(long, value_delimiter = ',', required = true)]
        betas: Vec<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Separation-baseline power accounting for a topology.
    SeparationReport {
        #[arg(long)]
        topology: PathBuf,
        /// CSV of externally measured sizes (image_id,source_node,bytes).
        /// Defaults to the built-in DCT compressor on synthetic images.
        #[arg(long)]
        sizes: Option<PathBuf>,
        /// Images fed to the built-in compressor when --sizes is omitted.
        #[arg(long, default_value_t = 256)]
        synthetic_count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write the built-in butterfly topology as JSON.
    MakeButterfly {
        #[arg(long, default_value_t = 32)]
        channels: usize,
        #[arg(long, default_value_t = 1e-4)]
        noise_variance: f64,
        #[arg(long, default_value_t = 1e-4)]
        lambda: f64,
        /// Output path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { spec, out, from_manifest } => {
            let outcome = match from_manifest {
                Some(manifest) => run_from_manifest(manifest, &out)?,
                None => run_experiment(&spec.load()?, &out)?,
            };
            println!("wrote {}", outcome.out_dir.display());
            println!("{}", outcome.metrics.csv_header());
            println!("{}", outcome.metrics.csv_row());
        }
        Command::Eval {
            checkpoint,
            topology,
            test_idx,
            synthetic_count,
            seed,
            repetitions,
        } => {
            let topo = Topology::from_file(topology)?;
            let model = EndToEndModel::load_checkpoint(checkpoint, topo)?;
            let test = match test_idx {
                Some(path) => load_idx(path, None, SplitTag::Test)?,
                None => synthetic_dataset(synthetic_count, seed ^ 0x7E57_C0DE, SplitTag::Test),
            };
            let metrics = evaluate(&model, &test.images, repetitions)?;
            println!("{}", metrics.csv_header());
            println!("{}", metrics.csv_row());
        }
        Command::SweepLambda { spec, lambdas, out } => {
            let sweep = run_lambda_sweep(&spec.load()?, &lambdas)?;
            let csv = sweep.csv();
            print!("{csv}");
            for (lambda, msg) in &sweep.errors {
                eprintln!("lambda {lambda:e} failed: {msg}");
            }
            if let Some(path) = out {
                std::fs::write(path, csv)?;
            }
            if sweep.rows.is_empty() {
                return Err(NncError::numeric("every sweep run failed"));
            }
        }
        Command::SweepAnc { spec, lambdas, betas, out } => {
            let cmp = run_anc_comparison(&spec.load()?, &lambdas, &betas)?;
            let csv = cmp.csv();
            print!("{csv}");
            println!("{}", cmp.summary);
            if let Some(path) = out {
                std::fs::write(path, format!("{csv}# {}\n", cmp.summary))?;
            }
        }
        Command::SeparationReport { topology, sizes, synthetic_count, seed } => {
            let topo = Topology::from_file(topology)?;
            let measured: BTreeMap<String, f64> = match sizes {
                Some(path) => load_measured_sizes(path)?,
                None => {
                    let data = synthetic_dataset(synthetic_count, seed, SplitTag::Test);
                    let parts = nnc::data::partition_for_sources(&data.images, &topo)?;
                    let cfg = DctCompressorConfig::default();
                    parts
                        .into_iter()
                        .map(|(id, pixels)| {
                            let dim = pixels.cols();
                            let (h, w) = if dim % 28 == 0 { (dim / 28, 28) } else { (1, dim) };
                            Ok((id, mean_size_bytes(&pixels, h, w, &cfg)?))
                        })
                        .collect::<Result<_>>()?
                }
            };
            let report = separation_report(&topo, &measured)?;
            println!("source,bytes,bits,rate_bits_per_use");
            for (id, bits) in &report.sizes_bits {
                println!("{id},{:.2},{:.2},{:.4}", bits / 8.0, bits, report.rates[id]);
            }
            println!("link,capacity_bits_per_channel_use");
            for (key, c) in &report.capacities {
                println!("{key},{c:.6}");
            }
            println!("total_power,{:.6e}", report.total_power);
        }
        Command::MakeButterfly { channels, noise_variance, lambda, out } => {
            if lambda < 0.0 {
                return Err(NncError::usage("lambda must be >= 0"));
            }
            let topo = builtin_butterfly(channels, noise_variance, &LambdaSpec::Uniform(lambda));
            topo.ensure_valid()?;
            match out {
                Some(path) => std::fs::write(path, topo.to_json())?,
                None => println!("{}", topo.to_json()),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    // clap exits with 2 on bad arguments; our contract reserves 2 for data
    // errors, so map usage problems to 1 ourselves
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
