use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use bottleneck_marl::env::ScenarioConfig;
use bottleneck_marl::eval::{compare, compute_metrics, run_episodes, write_rows_csv, EvalPolicy, EventThresholds, MetricsReport};
use bottleneck_marl::mappo::{train, TrainConfig};
use bottleneck_marl::nets::Policy;
use bottleneck_marl::sim::MapKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "bottleneck", version, about = "Bottleneck traffic simulation, training and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    /// 10 vehicles, 4 CAVs, 25% reduction.
    Desk,
    /// 25 vehicles, 40% CAVs, 25% reduction.
    Map25,
    /// 25 vehicles, 40% CAVs, 50% reduction.
    Map50,
    /// 25 vehicles, 40% CAVs, two-stage reduction.
    Combined,
}

#[derive(Args)]
struct ScenarioArgs {
    /// Scenario JSON file; overrides --preset.
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "desk")]
    preset: Preset,
    /// Use the test layout with the reduction moved downstream.
    #[arg(long)]
    shifted: bool,
    /// Override the number of vehicles.
    #[arg(long)]
    vehicles: Option<usize>,
    /// Disable the action refinement layer.
    #[arg(long)]
    no_psar: bool,
}

impl ScenarioArgs {
    fn load(&self) -> Result<ScenarioConfig> {
        let mut s = match &self.scenario {
            Some(p) => ScenarioConfig::load(p).with_context(|| format!("reading {}", p.display()))?,
            None => match self.preset {
                Preset::Desk => ScenarioConfig::desk_scale(),
                Preset::Map25 => ScenarioConfig::default(),
                Preset::Map50 => ScenarioConfig { map: MapKind::Reduction50, ..ScenarioConfig::default() },
                Preset::Combined => ScenarioConfig { map: MapKind::Combined, ..ScenarioConfig::default() },
            },
        };
        s.shifted |= self.shifted;
        if let Some(n) = self.vehicles {
            s.fleet.n_vehicles = n;
        }
        if self.no_psar {
            s.psar_enabled = false;
        }
        s.validate()?;
        Ok(s)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Baseline {
    PureHdv,
    Random,
    Idle,
}

#[derive(Args)]
struct PolicyArgs {
    /// Trained checkpoint directory (as written by `train`, e.g. OUT/final).
    #[arg(long, conflicts_with = "baseline")]
    checkpoint: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "pure-hdv")]
    baseline: Baseline,
}

impl PolicyArgs {
    fn load(&self) -> Result<EvalPolicy> {
        Ok(match (&self.checkpoint, self.baseline) {
            (Some(dir), _) => EvalPolicy::Trained(Box::new(Policy::load(dir).with_context(|| format!("loading {}", dir.display()))?)),
            (None, Baseline::PureHdv) => EvalPolicy::PureHdv,
            (None, Baseline::Random) => EvalPolicy::Random,
            (None, Baseline::Idle) => EvalPolicy::Idle,
        })
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run episodes and write per-vehicle CSV logs.
    Simulate {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[command(flatten)]
        policy: PolicyArgs,
        /// Seeds: a range `0..10` or a list `1,2,5`.
        #[arg(long, default_value = "0..1")]
        seeds: String,
        #[arg(long, default_value = "out/simulate")]
        out: PathBuf,
    },
    /// Train actor and critic with multi-agent PPO.
    Train {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Full training config JSON; the scenario flags are ignored when given.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Decision steps summed over environments.
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        envs: Option<usize>,
        /// Use the plain MLP critic instead of the graph critic.
        #[arg(long)]
        mlp_critic: bool,
        #[arg(long, default_value = "out/train")]
        out: PathBuf,
    },
    /// Run episodes and write a metrics report.
    Evaluate {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[command(flatten)]
        policy: PolicyArgs,
        #[arg(long, default_value = "1000..1050")]
        seeds: String,
        #[arg(long, default_value = "out/evaluate")]
        out: PathBuf,
        /// Also write every vehicle row to rows.csv.
        #[arg(long)]
        rows: bool,
    },
    /// Tabulate metrics reports against the first one.
    Compare {
        /// `metrics.json` files; `name=path` sets the column name.
        #[arg(required = true, num_args = 2..)]
        reports: Vec<String>,
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Finite-difference check of every network block and loss.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Compare the action refinement against an independent transcription on a grid.
    PsarVerify,
}

fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    if let Some((a, b)) = s.split_once("..") {
        let (a, b): (u64, u64) = (a.trim().parse()?, b.trim().parse()?);
        if a >= b {
            bail!("empty seed range {s}");
        }
        return Ok((a..b).collect());
    }
    s.split(',').map(|x| x.trim().parse().with_context(|| format!("bad seed {x:?}"))).collect()
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn print_report(name: &str, r: &MetricsReport) {
    println!(
        "{name}: {} episodes, speed {:.2} ± {:.2} m/s, p(WEs) {:.2}%, p(SCEs) {:.2}%, collision episodes {:.1}%, return {:.2}",
        r.episodes,
        r.mean_speed,
        r.std_speed,
        100.0 * r.p_wes,
        100.0 * r.p_sces,
        100.0 * r.collision_episode_rate,
        r.mean_return
    );
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Simulate { scenario, policy, seeds, out } => {
            let sc = scenario.load()?;
            let policy = policy.load()?;
            let logs = run_episodes(&policy, &sc, &parse_seeds(&seeds)?)?;
            std::fs::create_dir_all(&out)?;
            write_rows_csv(&logs, &out.join("rows.csv"))?;
            let mut steps = String::new();
            for l in &logs {
                for d in &l.decisions {
                    steps.push_str(&serde_json::to_string(&serde_json::json!({ "seed": l.seed, "t": d.t, "reward": d.reward, "decisions": d.decisions }))?);
                    steps.push('\n');
                }
                println!("seed {}: {} decision steps, return {:.2}, ended by {:?}", l.seed, l.decisions.len(), l.ret, l.cause);
            }
            std::fs::write(out.join("decisions.jsonl"), steps)?;
            write_json(&out.join("scenario.json"), &policy.scenario(&sc))?;
            println!("wrote {}", out.display());
        }
        Command::Train { scenario, config, steps, seed, envs, mlp_critic, out } => {
            let mut cfg = match config {
                Some(p) => serde_json::from_str::<TrainConfig>(&std::fs::read_to_string(&p)?).with_context(|| format!("parsing {}", p.display()))?,
                None => TrainConfig { scenario: scenario.load()?, ..TrainConfig::default() },
            };
            if let Some(s) = steps {
                cfg.total_steps = s;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(n) = envs {
                cfg.n_envs = n;
            }
            if mlp_critic {
                cfg.critic.kind = bottleneck_marl::nets::CriticKind::Mlp;
            }
            cfg.critic.max_lanes = cfg.scenario.network().max_lanes();
            let outcome = train(&cfg, Some(&out), |r| {
                println!(
                    "step {:>9}  return {:>8.2}  collisions {:>5.2}  p(WEs) {:>5.2}  actor {:>8.4}  critic {:>9.3}  tau {:.3}  entropy {:.3}  {:.0}s",
                    r.step, r.episode_return, r.collision_rate, r.p_wes, r.actor_loss, r.critic_loss, r.tau, r.entropy, r.elapsed_s
                );
            })?;
            println!("trained {} steps; checkpoint at {}", outcome.steps, out.join("final").display());
        }
        Command::Evaluate { scenario, policy, seeds, out, rows } => {
            let sc = scenario.load()?;
            let policy = policy.load()?;
            let logs = run_episodes(&policy, &sc, &parse_seeds(&seeds)?)?;
            let report = compute_metrics(&logs, &EventThresholds::from_scenario(&sc))?;
            std::fs::create_dir_all(&out)?;
            if rows {
                write_rows_csv(&logs, &out.join("rows.csv"))?;
            }
            write_json(&out.join("metrics.json"), &report)?;
            print_report(policy.name(), &report);
            println!("wrote {}", out.join("metrics.json").display());
        }
        Command::Compare { reports, json } => {
            let mut named = Vec::new();
            for arg in &reports {
                let (name, path) = match arg.split_once('=') {
                    Some((n, p)) => (n.to_string(), PathBuf::from(p)),
                    None => {
                        let p = PathBuf::from(arg);
                        let name = p.parent().and_then(|d| d.file_name()).map_or_else(|| arg.clone(), |n| n.to_string_lossy().into_owned());
                        (name, p)
                    }
                };
                let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
                named.push((name, serde_json::from_str::<MetricsReport>(&text)?));
            }
            let table = compare(&named)?;
            print!("{}", table.to_table());
            if let Some(p) = json {
                write_json(&p, &table)?;
            }
        }
        Command::Gradcheck { seed } => {
            let mut ok = true;
            for (name, r) in bottleneck_marl::checks::gradient_suite(seed)? {
                let worst = r.worst().map_or("-", |w| w.name.as_str());
                println!("{:<16} max rel error {:.3e} (worst {worst})  {}", name, r.max_rel_error, if r.passed() { "ok" } else { "FAIL" });
                ok &= r.passed();
            }
            return Ok(ok);
        }
        Command::PsarVerify => {
            let r = bottleneck_marl::psar::verify::verify_grid();
            println!("{} cases, {} mismatches", r.cases, r.mismatches);
            for (tag, n) in &r.tag_counts {
                println!("  {tag:<12} {n}");
            }
            if let Some(m) = &r.first_mismatch {
                println!("first mismatch: {m}");
            }
            return Ok(r.passed());
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
