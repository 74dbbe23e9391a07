use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use pogcn::commands;
use pogcn::config::{RunConfig, SamplerChoice};
use pogcn::error::Error;
use pogcn::eval::SplitMode;

/// Multi-behavior graph collaborative filtering over a partial order of behaviors.
///
/// Failures print one `error<TAB>kind<TAB>message` line on stderr and exit
/// with status 1 (2 for usage errors).
#[derive(Parser, Debug)]
#[command(name = "pogcn", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build the weighted graph; write snapshot, edge list and rank table.
    BuildGraph(Common),
    /// Train a model and write checkpoints plus the training log.
    Train(Common),
    /// Evaluate a checkpoint on the test split.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Defaults to the run directory of the config.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Train and evaluate every cell of the config's sweep grid.
    Sweep(Common),
    /// Print the top-k unseen items for each user.
    Recommend {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// External user ids.
        #[arg(required = true)]
        users: Vec<String>,
    },
}

/// Flags override the matching config-file values.
#[derive(Args, Debug)]
struct Common {
    /// TOML run configuration.
    config: PathBuf,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    gamma: Option<f64>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    reg: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Cutoffs, comma separated; `recommend` uses the first as list length.
    #[arg(long, value_delimiter = ',')]
    k: Option<Vec<usize>>,
    /// pobpr, uniform or mtl.
    #[arg(long)]
    sampler_mode: Option<SamplerChoice>,
    /// random or temporal.
    #[arg(long)]
    split: Option<SplitMode>,
    #[arg(long)]
    deterministic: Option<bool>,
    #[arg(long)]
    output_dir: Option<String>,
}

impl Common {
    fn load(&self) -> Result<RunConfig, Error> {
        let mut c = RunConfig::load(&self.config)?;
        macro_rules! set {
            ($($flag:ident => $field:ident),*) => {$(
                if let Some(v) = self.$flag.clone() {
                    c.$field = v;
                }
            )*};
        }
        set!(tau => tau, gamma => gamma, layers => layers, dim => dim, lr => lr, reg => reg, epochs => epochs,
             batch_size => batch_size, seed => seed, k => ks, sampler_mode => sampler_mode, split => split,
             deterministic => deterministic, output_dir => output_dir);
        c.validate()?;
        Ok(c)
    }

    /// Resolves the checkpoint before `--k` is applied: cutoffs only change
    /// what is reported, not which trained run is meant.
    fn checkpoint(&mut self, explicit: Option<PathBuf>) -> Result<PathBuf, Error> {
        if let Some(p) = explicit {
            return Ok(p);
        }
        let k = self.k.take();
        let base = self.load();
        self.k = k;
        Ok(commands::default_checkpoint(&base?))
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::BuildGraph(common) => {
            let out = commands::cmd_build_graph(&common.load()?)?;
            print!("{}", out.summary);
            println!("snapshot\t{}", out.snapshot.display());
            println!("rank_table\t{}", out.rank_table.display());
        }
        Command::Train(common) => {
            let out = commands::cmd_train(&common.load()?)?;
            println!("run_dir\t{}", out.run_dir.display());
            println!("checkpoint\t{}", out.checkpoint.display());
            println!("epochs\t{}", out.epochs_run);
            if let Some(e) = out.best_epoch {
                println!("best_epoch\t{e}");
            }
        }
        Command::Eval { mut common, checkpoint } => {
            let checkpoint = common.checkpoint(checkpoint)?;
            let out = commands::cmd_eval(&common.load()?, Some(&checkpoint))?;
            print!("{}", out.report.to_table());
            println!("report\t{}", out.json.display());
        }
        Command::Sweep(common) => {
            let out = commands::cmd_sweep(&common.load()?)?;
            for c in &out.cells {
                println!(
                    "{}\ttau={}\tgamma={}\tlr={}\treg={}\tmean_ndcg={}",
                    c.hash, c.tau, c.gamma, c.lr, c.reg, c.mean_ndcg
                );
            }
            println!("table\t{}", out.table.display());
            println!("manifest\t{}", out.manifest.display());
        }
        Command::Recommend { mut common, checkpoint, users } => {
            let checkpoint = common.checkpoint(checkpoint)?;
            let cfg = common.load()?;
            let k = cfg.ks[0];
            print!("{}", commands::cmd_recommend(&cfg, Some(&checkpoint), &users, k)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("error\tUsage\t{first}");
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.machine_line());
            ExitCode::FAILURE
        }
    }
}
