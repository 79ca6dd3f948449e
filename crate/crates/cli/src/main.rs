use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{error, info};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rivc::envs::run_episode;
use rivc::harness::{self, ExperimentConfig, ExperimentResult};
use rivc::nn::{load_checkpoint, save_checkpoint, Tensor};
use rivc::snn::{convert, save_snn};
use rivc::{Error, Result};

#[derive(Parser)]
#[command(name = "rivc", version, about = "Train and convert spiking value policies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the sample/update loop for every seed and write metrics.
    Run {
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Repeat `run` at several training bit widths.
    SweepBits {
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        output: OutputArgs,
        /// Comma-separated bit widths.
        #[arg(long, value_delimiter = ',', default_values_t = harness::SWEEP_BITS)]
        bit_list: Vec<u32>,
    },
    /// Greedy-action agreement between a checkpoint and its spiking conversion.
    Agreement {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Episodes sampled with the spiking policy to collect observations.
        #[arg(long, default_value_t = 10)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Convert a checkpoint and write the spiking network file.
    ExportSnn {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML config file; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// cartpole, servo or servo_full.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    bits: Option<u32>,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    episodes_per_iteration: Option<usize>,
    /// Any config key, as `key=value` with a TOML value.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct OutputArgs {
    #[arg(long, default_value = "results")]
    out: PathBuf,
    /// File name prefix; defaults to the method name.
    #[arg(long)]
    name: Option<String>,
}

fn toml_value(text: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {text}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(text.to_string()))
}

impl ConfigArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut table = match &self.config {
            Some(p) => {
                let text = std::fs::read_to_string(p)?;
                toml::from_str::<toml::Table>(&text).map_err(|e| Error::config(e.to_string()))?
            }
            None => toml::Table::new(),
        };
        let mut top = toml::Table::new();
        if let Some(p) = &self.preset {
            top.insert("preset".into(), p.clone().into());
        }
        if let Some(m) = &self.method {
            top.insert("method".into(), m.clone().into());
        }
        if let Some(b) = self.bits {
            top.insert("bits".into(), i64::from(b).into());
        }
        if let Some(s) = &self.seeds {
            let seeds = s.iter().map(|&v| toml::Value::Integer(v as i64)).collect::<Vec<_>>();
            top.insert("seeds".into(), seeds.into());
        }
        if let Some(i) = self.iterations {
            top.insert("iterations".into(), (i as i64).into());
        }
        if let Some(c) = self.epochs {
            top.insert("epochs".into(), (c as i64).into());
        }
        if let Some(e) = self.episodes_per_iteration {
            top.insert("episodes".into(), (e as i64).into());
        }
        for kv in &self.overrides {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::config(format!("override {kv:?} is not key=value")))?;
            let mut node = &mut top;
            let mut path: Vec<&str> = k.trim().split('.').collect();
            let leaf = path.pop().unwrap();
            for p in path {
                node = node
                    .entry(p)
                    .or_insert_with(|| toml::Value::Table(toml::Table::new()))
                    .as_table_mut()
                    .ok_or_else(|| Error::config(format!("{p} is not a table")))?;
            }
            node.insert(leaf.into(), toml_value(v.trim()));
        }
        harness::merge(&mut table, top);
        let cfg = ExperimentConfig::from_table(table)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn write_run(result: &ExperimentResult, dir: &Path, prefix: &str) -> Result<()> {
    let files = harness::emit_results(result, dir, prefix)?;
    for run in &result.runs {
        save_checkpoint(&run.weights, &dir.join(format!("{prefix}.seed{}.weights", run.seed)))?;
    }
    println!(
        "{}: last-5 mean reward {:.2} over {} seeds -> {}",
        prefix,
        result.tail_mean(5),
        result.runs.len(),
        files.csv.display()
    );
    Ok(())
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { config, output } => {
            let cfg = config.resolve()?;
            let result = harness::run_experiment(&cfg)?;
            let prefix = output.name.unwrap_or_else(|| cfg.method.to_string());
            write_run(&result, &output.out, &prefix)
        }
        Command::SweepBits {
            config,
            output,
            bit_list,
        } => {
            let cfg = config.resolve()?;
            let prefix = output.name.unwrap_or_else(|| cfg.method.to_string());
            for result in harness::bit_sweep(&cfg, &bit_list)? {
                let name = format!("{prefix}.k{}", result.config.bits);
                write_run(&result, &output.out, &name)?;
            }
            Ok(())
        }
        Command::Agreement {
            config,
            checkpoint,
            episodes,
            seed,
        } => {
            let cfg = config.resolve()?;
            let spec = cfg.network_spec()?;
            let weights = load_checkpoint(&checkpoint)?;
            weights.check(&spec)?;
            let mut snn = convert(&spec, &weights, &cfg.snn_quant())?;
            snn.window_multiplier = cfg.window_multiplier;
            let mut env = cfg.make_env()?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut observations: Vec<Tensor> = Vec::new();
            for _ in 0..episodes {
                env.reset(rng.next_u64());
                let mut sampler = snn.clone();
                let episode = run_episode(
                    env.as_mut(),
                    |o: &Tensor| Ok(sampler.infer(o.data())),
                    cfg.steps,
                    cfg.beta,
                    &mut rng,
                    false,
                )?;
                observations.extend(episode.transitions.iter().map(|t| t.state.as_ref().clone()));
            }
            let rate =
                harness::agreement_rate(&spec, &weights, cfg.training_quant().as_ref(), &mut snn, &observations)?;
            println!("agreement rate {rate:.4} over {} observations", observations.len());
            Ok(())
        }
        Command::ExportSnn {
            config,
            checkpoint,
            out,
        } => {
            let cfg = config.resolve()?;
            let spec = cfg.network_spec()?;
            let weights = load_checkpoint(&checkpoint)?;
            weights.check(&spec)?;
            let mut snn = convert(&spec, &weights, &cfg.snn_quant())?;
            snn.window_multiplier = cfg.window_multiplier;
            save_snn(&snn, &out)?;
            info!("wrote {} layers, window {}", snn.layers.len(), snn.window());
            println!("{}", out.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            match e {
                Error::Config(_) => ExitCode::from(2),
                _ => ExitCode::from(3),
            }
        }
    }
}
