use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use oracle_harness::commands::{cmd_build_verifier, cmd_evaluate, cmd_synthesize};
use oracle_harness::config::RunConfig;
use oracle_harness::GatewayMode;

#[derive(Parser)]
#[command(name = "oracle-harness", version, about = "Oracle-guided verification and synthesis of programs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate oracle, validator and input generator per problem and draw suites.
    BuildVerifier(Common),
    /// Run the configured search strategy against the suites.
    Synthesize(Common),
    /// Judge candidates and write evaluation reports.
    Evaluate(Common),
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    workspace: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Serve model responses from the workspace transcripts only.
    #[arg(long, group = "mode")]
    replay: bool,
    /// Call the model and store every response.
    #[arg(long, group = "mode")]
    record: bool,
    /// Call the model without storing responses.
    #[arg(long, group = "mode")]
    live: bool,
    #[arg(long)]
    suite_size: Option<usize>,
    /// Comma-separated k values for pass@k.
    #[arg(long, value_delimiter = ',')]
    k: Option<Vec<usize>>,
    /// Comma-separated suite sizes for the sweep.
    #[arg(long, value_delimiter = ',')]
    suite_sizes: Option<Vec<usize>>,
    #[arg(long)]
    parallelism: Option<usize>,
}

impl Common {
    fn config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(p) = &self.corpus {
            cfg.corpus = p.clone();
        }
        if let Some(p) = &self.workspace {
            cfg.workspace = p.clone();
        }
        if let Some(s) = self.seed {
            cfg.seed = Some(s);
        }
        if self.replay {
            cfg.gateway.mode = GatewayMode::Replay;
        } else if self.record {
            cfg.gateway.mode = GatewayMode::Record;
        } else if self.live {
            cfg.gateway.mode = GatewayMode::Live;
        }
        if let Some(n) = self.suite_size {
            cfg.suite_size = n;
        }
        if let Some(k) = &self.k {
            cfg.ks = k.clone();
        }
        if let Some(s) = &self.suite_sizes {
            cfg.suite_sizes = s.clone();
        }
        if let Some(p) = self.parallelism {
            cfg.parallelism = p;
        }
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<i32> {
    let (common, name) = match &cli.command {
        Command::BuildVerifier(c) => (c, "build-verifier"),
        Command::Synthesize(c) => (c, "synthesize"),
        Command::Evaluate(c) => (c, "evaluate"),
    };
    let cfg = common.config()?;
    cfg.validate()?;
    let gateway = cfg.gateway(None)?;
    match cli.command {
        Command::BuildVerifier(_) | Command::Synthesize(_) => {
            let summary = if name == "build-verifier" {
                cmd_build_verifier(&cfg, &gateway)?
            } else {
                cmd_synthesize(&cfg, &gateway)?
            };
            print!("{name}: {summary}");
            Ok(summary.exit_code())
        }
        Command::Evaluate(_) => {
            let eval = cmd_evaluate(&cfg, &gateway)?;
            if let Some(report) = eval.reports.get(&cfg.suite_size) {
                print!("{}", report.render_table());
            }
            for f in &eval.files {
                println!("wrote {}", f.display());
            }
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
