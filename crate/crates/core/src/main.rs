use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use himloco::checkpoint::Container;
use himloco::config::{load_config, TrainConfig};
use himloco::eval::{self, AblationFile, EvalReport, Protocol, Regime};
use himloco::terrain::{build_field_with, TerrainType};
use himloco::{Agent32, Trainer32};

#[derive(Parser)]
#[command(name = "himloco", version, about = "Hybrid internal model locomotion training and evaluation")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a policy; writes metrics.csv, timing.csv and ckpt_<iter>.bin into --out.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Worker threads (defaults to all cores).
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Tracking benchmark for one terrain type and command regime.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        terrain: String,
        #[arg(long)]
        regime: String,
        #[arg(long)]
        range: u8,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Linear probe of terrain type from the latent; writes raw latents to --out.
    ProbeLatent {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 500)]
        samples_per_class: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train each ablation variant for several seeds and tabulate final scores.
    Ablate {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        seeds: usize,
        /// Base config (overrides the one named in the spec file).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "ablation_out")]
        out: PathBuf,
    },
    /// Train with several prototype counts and tabulate final NLTS.
    SweepK {
        #[arg(long)]
        values: String,
        #[arg(long)]
        seeds: usize,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "sweep_out")]
        out: PathBuf,
    },
    /// Print the training height field as a matrix.
    TerrainDump {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

type Res<T> = Result<T, Box<dyn std::error::Error>>;

fn config_or_default(path: Option<&Path>) -> Res<TrainConfig> {
    Ok(match path {
        Some(p) => load_config(p)?,
        None => TrainConfig::default(),
    })
}

fn load_agent(path: &Path) -> Res<(TrainConfig, Agent32)> {
    Ok(Agent32::from_checkpoint(&Container::load(path)?)?)
}

fn run(cli: Cli) -> Res<()> {
    match cli.cmd {
        Cmd::Train { config, seed, out, resume, workers } => {
            if let Some(n) = workers {
                rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global()?;
            }
            let mut cfg = load_config(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let mut t = match resume {
                Some(ckpt) => Trainer32::load(ckpt, Some(&cfg))?,
                None => Trainer32::new(cfg)?,
            };
            let last = t.run(&out)?;
            println!("final checkpoint: {}", last.display());
        }
        Cmd::Eval { checkpoint, terrain, regime, range, seed } => {
            let (cfg, agent) = load_agent(&checkpoint)?;
            let kind: TerrainType = terrain.parse()?;
            let regime: Regime = regime.parse()?;
            let mut p = Protocol::new(kind, regime, range)?;
            p.seed = seed;
            let r = eval::evaluate(&agent, &cfg, &p)?;
            println!("{}", EvalReport::header());
            println!("{}", r.to_csv());
        }
        Cmd::ProbeLatent { checkpoint, out, samples_per_class, seed } => {
            let (cfg, agent) = load_agent(&checkpoint)?;
            let r = eval::latent_probe(&agent, &cfg, samples_per_class, seed)?;
            let mut w = BufWriter::new(File::create(&out)?);
            let ld = r.latents.first().map_or(0, Vec::len);
            let cols: Vec<String> = (0..ld).map(|i| format!("l{i}")).collect();
            writeln!(w, "terrain,{}", cols.join(","))?;
            for (l, x) in r.labels.iter().zip(&r.latents) {
                let vals: Vec<String> = x.iter().map(|v| format!("{v:.6}")).collect();
                writeln!(w, "{},{}", TerrainType::ALL[*l].name(), vals.join(","))?;
            }
            w.flush()?;
            println!("accuracy,shuffled_accuracy,chance_lo,chance_hi,n_train,n_test");
            println!(
                "{:.4},{:.4},{:.4},{:.4},{},{}",
                r.accuracy, r.shuffled_accuracy, r.chance_band.0, r.chance_band.1, r.n_train, r.n_test
            );
            if !r.control_in_band() {
                eprintln!("warning: shuffled-label control is outside the chance band; accuracy is not meaningful");
            }
        }
        Cmd::Ablate { spec, seeds, config, out } => {
            let text = std::fs::read_to_string(&spec)?;
            let file = AblationFile::parse(&text)?;
            let base_path = config.or_else(|| file.config.as_ref().map(|p| spec.parent().unwrap_or(Path::new(".")).join(p)));
            let mut base = config_or_default(base_path.as_deref())?;
            if let Some(n) = file.num_iterations {
                base.num_iterations = n;
            }
            let rows = eval::run_ablation(&base, &file.variants, seeds, &out)?;
            let table = eval::summarize_table(&rows);
            std::fs::write(out.join("summary.csv"), &table)?;
            print!("{table}");
        }
        Cmd::SweepK { values, seeds, config, out } => {
            let ks = eval::parse_k_values(&values)?;
            let base = config_or_default(config.as_deref())?;
            let rows = eval::sweep_prototypes(&base, &ks, seeds, &out)?;
            let table = eval::summarize_table(&rows);
            std::fs::write(out.join("summary.csv"), &table)?;
            print!("{table}");
        }
        Cmd::TerrainDump { config, seed, out } => {
            let cfg = config_or_default(config.as_deref())?;
            let field = build_field_with(seed.unwrap_or(cfg.seed), &cfg.terrain)?;
            match out {
                Some(p) => field.write_matrix(BufWriter::new(File::create(p)?))?,
                None => field.write_matrix(std::io::stdout().lock())?,
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        // A closed stdout (e.g. piped into `head`) is not an error.
        Err(e) if e.downcast_ref::<std::io::Error>().is_some_and(|e| e.kind() == std::io::ErrorKind::BrokenPipe) => {
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
