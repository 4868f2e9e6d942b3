use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::{mpsc, Arc};
use std::time::Duration;

use clap::{Args, Parser, Subcommand};

use physadv::maskgen::ReductionMode;
use physadv::oracle::stub::{serve_lines_with, HttpStub, StubBehavior};
use physadv::pipeline::report::write_heatmap;
use physadv::pipeline::{
    experiments::write_ablation, run_ablation, run_attack, run_budget_sweep, run_efficiency, run_heatmap, run_iterative,
    RunArtifacts, RunConfig, RunHooks, RunStatus,
};
use physadv::{Error, HardLabelOracle, Result};

#[derive(Parser)]
#[command(name = "physadv", version, about = "Hard-label masked perturbations that survive physical transforms")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Mask generation followed by boosting.
    Attack(Common),
    /// Patch-removal heatmap only.
    Heatmap(Common),
    /// Multi-round attack following `[iterative] rounds`.
    Iterative(Common),
    /// Held-out survivability against boost budget.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated boost budgets.
        #[arg(long, value_delimiter = ',')]
        budgets: Vec<u64>,
    },
    /// Mask generation under each reduction mode.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_values = ["full", "coarse-only", "fine-only"])]
        modes: Vec<String>,
    },
    /// The attack against the boundary-distance baseline with a threshold schedule.
    Baseline {
        #[command(flatten)]
        common: Common,
        /// Comma-separated start thresholds in percent.
        #[arg(long, value_delimiter = ',')]
        start: Vec<u32>,
    },
    /// A test oracle speaking the line protocol on stdio, or HTTP with `--http`.
    ServeOracleStub {
        /// `constant:N`, `parity:A,B`, `garbage` or `builtin`.
        #[arg(long, default_value = "builtin")]
        mode: String,
        /// Listen address, e.g. `127.0.0.1:8080`.
        #[arg(long)]
        http: Option<String>,
        /// Required bearer token for HTTP requests.
        #[arg(long)]
        token: Option<String>,
        /// File updated with the number of requests served.
        #[arg(long)]
        count_file: Option<PathBuf>,
        /// Config whose instance defines the builtin classifier.
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    /// TOML run configuration. Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Boost query budget.
    #[arg(long)]
    budget: Option<u64>,
    /// `builtin`, `proc:<command>` or `http:<url>`.
    #[arg(long)]
    oracle: Option<String>,
    #[arg(long)]
    holdout_n: Option<usize>,
    /// Hard cap on attack queries across all phases.
    #[arg(long)]
    max_queries: Option<u64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// No progress on stderr.
    #[arg(long)]
    quiet: bool,
}

impl Common {
    fn load(&self) -> Result<(RunConfig, PathBuf)> {
        let (mut cfg, base) = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => (RunConfig::default(), PathBuf::from(".")),
        };
        if let Some(s) = self.seed {
            cfg.run.seed = s;
        }
        if let Some(b) = self.budget {
            cfg.boost.budget = b;
        }
        if let Some(o) = &self.oracle {
            cfg.oracle.spec = o.clone();
        }
        if let Some(n) = self.holdout_n {
            cfg.run.holdout_n = n;
        }
        if self.max_queries.is_some() {
            cfg.run.max_queries = self.max_queries;
        }
        cfg.validate()?;
        Ok((cfg, base))
    }

    fn hooks(&self, cfg: &RunConfig, base: &Path) -> (RunHooks, Option<std::thread::JoinHandle<()>>) {
        let mut hooks = RunHooks { base_dir: base.to_path_buf(), ..Default::default() };
        if cfg.run.checkpoints {
            hooks.checkpoint_dir = Some(self.out.join("checkpoints"));
        }
        if self.quiet {
            return (hooks, None);
        }
        let (tx, rx) = mpsc::channel::<physadv::boost::BoostProgress>();
        hooks.progress = Some(tx);
        let h = std::thread::spawn(move || {
            for p in rx {
                eprintln!("boost iter {:>4}  spent {:>7}/{}  s {:.3}  best {:.3}", p.iter, p.spent, p.budget, p.s_base, p.best);
            }
        });
        (hooks, Some(h))
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn finish_run(res: Result<RunArtifacts>, out: &Path) -> Result<u8> {
    let a = res?;
    a.write(out)?;
    let r = &a.report;
    println!(
        "mask {}/{} px ({:.3} of object)  held-out survivability {:.3} (post-mask {:.3})  queries {}{}",
        r.mask_pixels,
        r.object_pixels,
        r.mask_ratio,
        r.survivability.final_holdout,
        r.survivability.post_mask_holdout,
        r.ledger.total,
        if r.flags.is_empty() { String::new() } else { format!("  [{}]", r.flags.join(", ")) },
    );
    println!("wrote {}", out.display());
    Ok(match r.status {
        RunStatus::Complete => 0,
        RunStatus::BudgetExceeded => {
            eprintln!("error: {}", r.error.as_deref().unwrap_or("query budget exceeded"));
            2
        }
    })
}

fn with_progress<T>(common: &Common, cfg: &RunConfig, base: &Path, f: impl FnOnce(&RunHooks) -> T) -> T {
    let (hooks, printer) = common.hooks(cfg, base);
    let out = f(&hooks);
    drop(hooks);
    if let Some(h) = printer {
        let _ = h.join();
    }
    out
}

fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Attack(c) => {
            let (cfg, base) = c.load()?;
            let (inst, oracle) = (cfg.instance(&base)?, cfg.oracle(&base)?);
            let res = with_progress(&c, &cfg, &base, |h| run_attack(&inst, &cfg, oracle, h));
            finish_run(res, &c.out)
        }
        Command::Iterative(c) => {
            let (cfg, base) = c.load()?;
            let (inst, oracle) = (cfg.instance(&base)?, cfg.oracle(&base)?);
            let res = with_progress(&c, &cfg, &base, |h| run_iterative(&inst, &cfg, oracle, h));
            finish_run(res, &c.out)
        }
        Command::Heatmap(c) => {
            let (cfg, base) = c.load()?;
            let (inst, oracle) = (cfg.instance(&base)?, cfg.oracle(&base)?);
            let (hm, grid, ledger) = run_heatmap(&inst, &cfg, oracle)?;
            write_heatmap(&hm, &grid, &c.out)?;
            println!("{} patches, baseline survivability {:.3}, queries {}", grid.len(), hm.baseline, ledger.total);
            println!("wrote {}", c.out.display());
            Ok(0)
        }
        Command::Sweep { common: c, budgets } => {
            let (cfg, base) = c.load()?;
            let (inst, oracle) = (cfg.instance(&base)?, cfg.oracle(&base)?);
            let budgets = if budgets.is_empty() { cfg.sweep.budgets.clone() } else { budgets };
            let rep = run_budget_sweep(&inst, &cfg, oracle, &budgets)?;
            rep.write(&c.out)?;
            println!("budget\tqueries\theld-out");
            for r in &rep.rows {
                println!("{}\t{}\t{:.3}", r.budget, r.boost_queries, r.holdout);
            }
            println!("wrote {}", c.out.display());
            Ok(0)
        }
        Command::Ablate { common: c, modes } => {
            let (cfg, base) = c.load()?;
            let (inst, oracle) = (cfg.instance(&base)?, cfg.oracle(&base)?);
            let modes = modes.iter().map(|m| parse_mode(m)).collect::<Result<Vec<_>>>()?;
            let rows = run_ablation(&inst, &cfg, oracle, &modes)?;
            write_ablation(&rows, &c.out)?;
            println!("mode\tsurvivability\tpixels\tqueries\truntime_s");
            for r in &rows {
                println!("{:?}\t{:.3}\t{}\t{}\t{:.2}", r.mode, r.survivability, r.mask_pixels, r.queries, r.runtime_secs);
            }
            println!("wrote {}", c.out.display());
            Ok(0)
        }
        Command::Baseline { common: c, start } => {
            let (mut cfg, base) = c.load()?;
            if !start.is_empty() {
                cfg.baseline.start_thresholds = start;
            }
            let (inst, oracle) = (cfg.instance(&base)?, cfg.oracle(&base)?);
            let (rep, ours) = with_progress(&c, &cfg, &base, |h| run_efficiency(&inst, &cfg, oracle, h))?;
            ours.write(&c.out.join("attack"))?;
            rep.write(&c.out)?;
            println!("algorithm\tstart\trobustness\tqueries");
            for r in &rep.rows {
                let start = r.initial_threshold.map_or("-".to_string(), |t| format!("{t}%"));
                let rob = r.final_robustness.map_or("-".to_string(), |v| format!("{v:.3}"));
                println!("{}\t{}\t{}\t{}", r.algorithm, start, rob, r.queries);
            }
            println!("wrote {}", c.out.display());
            Ok(0)
        }
        Command::ServeOracleStub { mode, http, token, count_file, config } => {
            let behavior = parse_behavior(&mode, config.as_deref())?;
            let write_count = |n: u64| -> Result<()> {
                if let Some(p) = &count_file {
                    std::fs::write(p, format!("{n}\n"))?;
                }
                Ok(())
            };
            match http {
                Some(addr) => {
                    let stub = HttpStub::start(&addr, behavior, token)?;
                    println!("listening on {}", stub.url());
                    std::io::stdout().flush()?;
                    let mut last = u64::MAX;
                    loop {
                        let n = stub.count();
                        if n != last {
                            write_count(n)?;
                            last = n;
                        }
                        std::thread::sleep(Duration::from_millis(50));
                    }
                }
                None => {
                    write_count(0)?;
                    let stdin = std::io::stdin();
                    let stdout = std::io::stdout();
                    serve_lines_with(&behavior, stdin.lock(), stdout.lock(), write_count)?;
                    Ok(0)
                }
            }
        }
    }
}

fn parse_mode(s: &str) -> Result<ReductionMode> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| Error::Config(format!("unknown mode {s:?}; expected full, coarse-only or fine-only")))
}

fn parse_behavior(mode: &str, config: Option<&Path>) -> Result<StubBehavior> {
    let bad = || Error::Config(format!("bad stub mode {mode:?}"));
    let int = |s: &str| s.trim().parse::<i64>().map_err(|_| bad());
    if mode == "garbage" {
        return Ok(StubBehavior::Garbage);
    }
    if mode == "builtin" {
        let (cfg, base) = match config {
            Some(p) => RunConfig::load(p)?,
            None => (RunConfig::default(), PathBuf::from(".")),
        };
        let mut cfg = cfg;
        cfg.oracle.spec = "builtin".into();
        let o: Arc<dyn HardLabelOracle> = cfg.oracle(&base)?;
        return Ok(StubBehavior::Oracle(o));
    }
    if let Some(v) = mode.strip_prefix("constant:") {
        return Ok(StubBehavior::Constant(int(v)?));
    }
    if let Some(v) = mode.strip_prefix("parity:") {
        let (a, b) = v.split_once(',').ok_or_else(bad)?;
        return Ok(StubBehavior::Parity(int(a)?, int(b)?));
    }
    Err(bad())
}
