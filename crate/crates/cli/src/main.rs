use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use xdfsl::config::RunConfig;
use xdfsl::pipeline;
use xdfsl::{Error, Result};

#[derive(Parser)]
#[command(name = "xdfsl", version, about = "Cross-domain few-shot learning with unlabelled target data")]
struct Cli {
    /// Output root used when a command's --out is omitted.
    #[arg(long, global = true, env = "XDFSL_OUT", default_value = "runs")]
    out_root: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Override a config key, e.g. `--set baseline.dbscan.eps=0.4`. Repeatable.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig> {
        RunConfig::load(self.config.as_deref(), &self.overrides)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Render the synthetic benchmark to `<out>/<domain>/<class>/<n>.png`.
    GenData {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overwrite a non-empty output directory.
        #[arg(long)]
        force: bool,
    },
    /// Write the class split manifest of the source domain.
    Split {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Manifest path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the configured method on every target domain and evaluate it.
    Run {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
    /// Evaluate a checkpoint on one target domain's test classes.
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        target: String,
        /// Method name written into the reports.
        #[arg(long)]
        label: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Merge the reports of several runs into result tables.
    Report {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn refuse_populated(dir: &Path, force: bool) -> Result<()> {
    if !force && dir.is_dir() && std::fs::read_dir(dir)?.next().is_some() {
        return Err(Error::Validation(format!("{} is not empty; pass --force to overwrite", dir.display())));
    }
    Ok(())
}

fn execute(cli: Cli) -> Result<()> {
    let root = cli.out_root;
    match cli.command {
        Command::GenData { cfg, out, force } => {
            let config = cfg.load()?;
            let out = out.unwrap_or_else(|| root.join("data"));
            let counts = pipeline::cmd_gen_data(&config, &out, force)?;
            for (domain, n) in counts {
                println!("{domain}\t{n}");
            }
            println!("wrote {}", out.display());
        }
        Command::Split { cfg, out } => {
            let config = cfg.load()?;
            let out = out.unwrap_or_else(|| root.join(pipeline::MANIFEST_FILE));
            let names = pipeline::source_class_names(&config)?;
            let m = pipeline::cmd_split(&names, config.split.proportions, config.split.seed, &out)?;
            let (train, unlabelled, test) = m.counts();
            println!("wrote {} (train {train}, unlabelled {unlabelled}, test {test})", out.display());
        }
        Command::Run { cfg, out, force } => {
            let config = cfg.load()?;
            let out = out.unwrap_or_else(|| root.join(config.method_label()));
            refuse_populated(&out, force)?;
            let summary = pipeline::cmd_run(&config, &out)?;
            for r in &summary.reports {
                println!(
                    "{}\t{}\t{}-way {}-shot\t{:.2} ± {:.2}",
                    r.method, r.domain, r.n_way, r.k_shot, r.mean_accuracy, r.ci95_halfwidth
                );
            }
        }
        Command::Eval {
            cfg,
            checkpoint,
            target,
            label,
            out,
        } => {
            let config = cfg.load()?;
            let out = out.unwrap_or_else(|| root.join("eval"));
            for r in pipeline::cmd_eval(&config, &checkpoint, &target, label.as_deref(), &out)? {
                println!("{}\t{}\t{}-way {}-shot\t{:.2} ± {:.2}", r.method, r.domain, r.n_way, r.k_shot, r.mean_accuracy, r.ci95_halfwidth);
            }
        }
        Command::Report { runs, out } => {
            let out = out.unwrap_or_else(|| root.join("report"));
            for p in pipeline::cmd_report(&runs, &out)? {
                if p.extension().is_some_and(|e| e == "txt") {
                    print!("{}", std::fs::read_to_string(&p)?);
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
