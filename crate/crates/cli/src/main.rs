use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use tsc_core::harness::{
    self, run_testing, sweep_max_green, sweep_reward_weight, train_and_test, write_summary, Profile, RunConfig,
    MAX_GREEN_VALUES, REWARD_WEIGHT_CANDIDATES,
};
use tsc_core::marl::{RewardSign, Scheme};

#[derive(Parser)]
#[command(name = "tsc", version, about = "Grid traffic signal control experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a learning scheme, then test the trained agents.
    Train(Common),
    /// Test a scheme on the testing schedule.
    Test {
        #[command(flatten)]
        common: Common,
        /// Directory holding agent_NN.ckpt files (learning schemes only).
        #[arg(long)]
        checkpoints: Option<PathBuf>,
    },
    /// Train and test S2R2L for each self-weight candidate.
    SweepWeight {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',')]
        candidates: Option<Vec<f64>>,
    },
    /// Re-test S2R2L checkpoints and Max Pressure at several maximum greens.
    SweepMaxgreen {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoints: PathBuf,
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<u32>>,
    },
    /// Test Max Pressure and the random controller.
    Baseline(Common),
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, conflicts_with = "seeds")]
    seed: Option<u64>,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    profile: Option<Profile>,
    #[arg(long)]
    scheme: Option<Scheme>,
    /// Reward = w_now - w_prev instead of its negation.
    #[arg(long)]
    literal_reward_sign: bool,
}

impl Common {
    fn config(&self) -> Result<RunConfig> {
        let mut cfg = match (&self.config, self.profile) {
            (Some(_), Some(_)) => bail!("--profile cannot be combined with --config; set `profile` in the file"),
            (Some(path), None) => RunConfig::load(path).with_context(|| format!("loading {}", path.display()))?,
            (None, Some(p)) => RunConfig::for_profile(p),
            (None, None) => RunConfig::default(),
        };
        if let Some(s) = self.scheme {
            cfg.scheme = s;
        }
        if let Some(s) = self.seed {
            cfg.seeds = vec![s];
        }
        if let Some(s) = &self.seeds {
            cfg.seeds = s.clone();
        }
        if let Some(o) = &self.out {
            cfg.output_dir = o.clone();
        }
        if self.literal_reward_sign {
            cfg.reward_sign = RewardSign::Literal;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn report(r: &harness::TestResult) {
    let a = r.episode.aggregate;
    println!(
        "{:<15} seed {:<4} delay {:>8.2} s/veh  queued {:>7.2}  fuel {:>7.2} ml/s",
        r.scheme.as_str(),
        r.seed,
        a.mean_delay_s,
        a.mean_queued,
        a.mean_fuel_ml_per_s
    );
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Train(common) => {
            let cfg = common.config()?;
            if !cfg.scheme.is_marl() {
                bail!("scheme {} does not learn; use `test` or `baseline`", cfg.scheme);
            }
            let mut results = Vec::new();
            for &seed in &cfg.seeds {
                let (trained, test) = train_and_test(&cfg, seed)?;
                for (i, e) in trained.episodes.iter().enumerate() {
                    println!("seed {seed} episode {:>3}: delay {:.2} s/veh", i + 1, e.mean_delay_s);
                }
                report(&test);
                results.push(test);
            }
            write_summary(&cfg.output_dir.join(cfg.scheme.as_str()).join("summary.csv"), &results)?;
        }
        Command::Test { common, checkpoints } => {
            let cfg = common.config()?;
            let mut results = Vec::new();
            for &seed in &cfg.seeds {
                let out = harness::run_dir(&cfg, seed).join("test");
                let r = run_testing(&cfg, seed, checkpoints.as_deref(), Some(&out))?;
                report(&r);
                results.push(r);
            }
            write_summary(&cfg.output_dir.join(cfg.scheme.as_str()).join("summary.csv"), &results)?;
        }
        Command::SweepWeight { common, candidates } => {
            let cfg = common.config()?;
            let candidates = candidates.unwrap_or_else(|| REWARD_WEIGHT_CANDIDATES.to_vec());
            for &seed in &cfg.seeds {
                for row in sweep_reward_weight(&cfg, &candidates, seed)? {
                    let flag = if row.neighbor_only { "  (neighbor-only)" } else { "" };
                    println!(
                        "n = {:<6} seed {seed}: delay {:.2} s/veh{flag}",
                        row.self_weight, row.test.episode.aggregate.mean_delay_s
                    );
                }
            }
        }
        Command::SweepMaxgreen { common, checkpoints, values } => {
            let cfg = common.config()?;
            let values = values.unwrap_or_else(|| MAX_GREEN_VALUES.to_vec());
            for &seed in &cfg.seeds {
                for row in sweep_max_green(&cfg, &values, seed, &checkpoints)? {
                    println!(
                        "max green {:>3} s  {:<12} seed {seed}: delay {:.2} s/veh",
                        row.max_green_s,
                        row.scheme.as_str(),
                        row.test.episode.aggregate.mean_delay_s
                    );
                }
            }
        }
        Command::Baseline(common) => {
            let base = common.config()?;
            let mut results = Vec::new();
            for scheme in [Scheme::MaxPressure, Scheme::RandomBaseline] {
                let cfg = RunConfig { scheme, ..base.clone() };
                for &seed in &cfg.seeds {
                    let r = run_testing(&cfg, seed, None, Some(&harness::run_dir(&cfg, seed).join("test")))?;
                    report(&r);
                    results.push(r);
                }
            }
            write_summary(&base.output_dir.join("baseline_summary.csv"), &results)?;
        }
    }
    Ok(())
}
