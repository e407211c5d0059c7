//! `yao`: train, evaluate and probe learned AdWords and ski-rental algorithms.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use yaolearn_core::adwords::{AdWordsInstance, EnvError, Mode, Policy};
use yaolearn_core::baselines::{Baseline, Clairvoyant};
use yaolearn_core::distributions::DistributionSpec;
use yaolearn_core::lp::offline_optimum;
use yaolearn_core::networks::AlgNet;
use yaolearn_core::reporting::{self, ContourSpec, ProbeSpec, SweepKind};
use yaolearn_core::skirental::{ski_optimal_strategy, ski_train_with, SkiError, SkiTrainConfig};
use yaolearn_core::trainer::{adv_search_diff, adv_search_fixed, train_with, ExperienceArray, SearchConfig, TrainConfig, TrainError};

#[derive(Parser)]
#[command(name = "yao", version, about = "Adversarially co-trained online algorithms for AdWords and ski rental")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Co-train the allocation network against the instance generator.
    Train {
        /// JSON training config; missing fields take defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Checkpoint directory.
        #[arg(long)]
        out: PathBuf,
        /// Override the number of training steps.
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train the kernel-mixture ski-rental strategy.
    TrainSki {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// (B, N) pairs to export CDF curves for, as `B:N`.
        #[arg(long, value_delimiter = ',', default_value = "5:50,10:100")]
        curves: Vec<String>,
    },
    /// Benchmark table: every policy on every distribution.
    Eval {
        /// Comma-separated policy names or checkpoint paths.
        #[arg(long, value_delimiter = ',', required = true)]
        policies: Vec<String>,
        /// Comma-separated specs, e.g. `triangular:25:5,thick_z:25:5,powerlaw:5`.
        #[arg(long, value_delimiter = ',', required = true)]
        distributions: Vec<String>,
        #[arg(long, default_value_t = 100)]
        samples: usize,
        #[arg(long, default_value_t = 100)]
        runs: usize,
        #[arg(long, default_value = "integral")]
        mode: Mode,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// CSV destination; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Behavioural probes of a single policy.
    Probe {
        #[arg(long, value_enum)]
        kind: ProbeKind,
        /// Policy name or checkpoint path; comma-separated for `cr-trace`.
        #[arg(long, value_delimiter = ',', required = true)]
        policy: Vec<String>,
        /// Probe settings as inline JSON or a JSON file.
        #[arg(long)]
        spec: Option<String>,
        /// Instance JSON for `spending`.
        #[arg(long)]
        instance: Option<PathBuf>,
        /// Experience JSONL for `cr-trace`.
        #[arg(long)]
        experience: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        runs: usize,
        #[arg(long, default_value_t = 10)]
        group: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a generator to find hard instances for a fixed algorithm.
    AdvSearch {
        /// Policy whose CR is minimised.
        #[arg(long, conflicts_with = "diff")]
        target: Option<String>,
        /// `A,B`: maximise CR(A) − CR(B).
        #[arg(long, value_delimiter = ',')]
        diff: Option<Vec<String>>,
        /// JSON search config; missing fields take defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Writes `instance.json` and `trace.csv` here.
        #[arg(long)]
        out: PathBuf,
    },
    /// Sample one instance and print it as JSON.
    ExportInstance {
        #[arg(long)]
        distribution: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-batch minimum CR of policies over a saved experience array.
    Replay {
        #[arg(long)]
        experience: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "greedy,msvv")]
        policies: Vec<String>,
        #[arg(long, default_value_t = 10)]
        group: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ProbeKind {
    BidSweep,
    BudgetSweep,
    Contour,
    Spending,
    CrTrace,
}

fn load_policy(name: &str) -> Result<Box<dyn Policy>> {
    if let Some(b) = Baseline::by_name(name) {
        return Ok(Box::new(b));
    }
    if name == "clairvoyant" {
        return Ok(Box::new(Clairvoyant::new()));
    }
    let path = Path::new(name);
    let file = if path.is_dir() { path.join("alg.json") } else { path.to_path_buf() };
    if !file.is_file() {
        bail!(EnvError::InvalidInstance(format!("unknown policy `{name}`")));
    }
    let net: AlgNet = serde_json::from_str(&fs::read_to_string(&file).with_context(|| format!("reading {}", file.display()))?)
        .with_context(|| format!("parsing {}", file.display()))?;
    Ok(Box::new(net))
}

fn load_policies(names: &[String]) -> Result<Vec<Box<dyn Policy>>> {
    names.iter().map(|n| load_policy(n)).collect()
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Inline JSON when the argument starts with `{`, otherwise a file path.
fn inline_or_file<T: serde::de::DeserializeOwned + Default>(arg: Option<&str>) -> Result<T> {
    match arg {
        None => Ok(T::default()),
        Some(s) if s.trim_start().starts_with('{') => serde_json::from_str(s).context("parsing --spec"),
        Some(p) => read_json(Path::new(p)),
    }
}

fn sink(out: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match out {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            Box::new(fs::File::create(p).with_context(|| format!("creating {}", p.display()))?)
        }
        None => Box::new(io::stdout().lock()),
    })
}

fn emit_csv<T: Serialize>(rows: &[T], out: Option<&Path>) -> Result<()> {
    reporting::write_csv(sink(out)?, rows)?;
    Ok(())
}

fn parse_distribution(s: &str) -> Result<DistributionSpec> {
    DistributionSpec::parse(s).map_err(|e| anyhow!(EnvError::InvalidInstance(e)))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { config, out, steps, seed } => {
            let mut cfg: TrainConfig = match config {
                Some(p) => read_json(&p)?,
                None => TrainConfig::default(),
            };
            if let Some(t) = steps {
                cfg.t = t;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let total = cfg.t;
            let outcome = train_with(cfg, Some(&out), |row| {
                if row.step % 100 == 0 || row.step == total {
                    eprintln!("step {} worst_batch_cr {:.4}", row.step, row.worst_batch_cr);
                }
            })?;
            let summary = serde_json::json!({
                "status": "ok",
                "steps": outcome.history.rows.len(),
                "experience": outcome.experience.len(),
                "out": out,
            });
            println!("{summary}");
        }
        Command::TrainSki { config, out, iterations, seed, curves } => {
            let mut cfg: SkiTrainConfig = match config {
                Some(p) => read_json(&p)?,
                None => SkiTrainConfig::default(),
            };
            if let Some(i) = iterations {
                cfg.iterations = i;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let pairs = curves
                .iter()
                .map(|c| {
                    let (b, n) = c.split_once(':').ok_or_else(|| anyhow!("curve `{c}` is not B:N"))?;
                    Ok((b.parse::<usize>()?, n.parse::<usize>()?))
                })
                .collect::<Result<Vec<_>>>()?;
            let (net, trace) = ski_train_with(&cfg, |p| {
                if p.iteration % 100 == 0 {
                    eprintln!("iteration {} worst cr {:.4} at beta {:.3}", p.iteration, p.cr, p.beta);
                }
            })?;
            fs::create_dir_all(&out)?;
            fs::write(out.join("kernel.json"), serde_json::to_string(&net)?)?;
            fs::write(out.join("config.json"), serde_json::to_string_pretty(&cfg)?)?;
            emit_csv(&trace, Some(&out.join("trace.csv")))?;
            #[derive(Serialize)]
            struct CdfRow {
                alpha: f64,
                learned: f64,
                optimal: f64,
            }
            #[derive(Serialize)]
            struct StrategyRow {
                day: usize,
                prob: f64,
            }
            for (b, n) in pairs {
                let opt = ski_optimal_strategy(b, n)?;
                let learned = net.cdf_grid(b as f64 / n as f64, n)?;
                let rows: Vec<CdfRow> = opt
                    .cumulative()
                    .iter()
                    .zip(&learned)
                    .enumerate()
                    .map(|(k, (&o, &l))| CdfRow { alpha: k as f64 / n as f64, learned: l, optimal: o })
                    .collect();
                emit_csv(&rows, Some(&out.join(format!("cdf_B{b}_N{n}.csv"))))?;
                let rows: Vec<StrategyRow> =
                    opt.probs.iter().enumerate().map(|(i, &p)| StrategyRow { day: i + 1, prob: p }).collect();
                emit_csv(&rows, Some(&out.join(format!("optimal_B{b}_N{n}.csv"))))?;
            }
            let worst = net.worst_over_net(&cfg.beta_net(), cfg.grid_steps())?;
            println!(
                "{}",
                serde_json::json!({"status": "ok", "worst_cr": worst.1, "alpha": worst.0.alpha, "beta": worst.0.beta, "out": out})
            );
        }
        Command::Eval { policies, distributions, samples, runs, mode, seed, out } => {
            let owned = load_policies(&policies)?;
            let refs: Vec<&dyn Policy> = owned.iter().map(|p| p.as_ref()).collect();
            let specs = distributions.iter().map(|d| parse_distribution(d)).collect::<Result<Vec<_>>>()?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rows = reporting::eval_table(&refs, &specs, samples, runs, mode, &mut rng)?;
            emit_csv(&rows, out.as_deref())?;
        }
        Command::Probe { kind, policy, spec, instance, experience, runs, group, seed, out } => {
            let owned = load_policies(&policy)?;
            let first = owned[0].as_ref();
            match kind {
                ProbeKind::BidSweep | ProbeKind::BudgetSweep => {
                    let mut ps: ProbeSpec = inline_or_file(spec.as_deref())?;
                    ps.kind = if matches!(kind, ProbeKind::BidSweep) { SweepKind::Bid } else { SweepKind::Budget };
                    emit_csv(&reporting::probe_single_slot(first, &ps)?, out.as_deref())?;
                }
                ProbeKind::Contour => {
                    let cs: ContourSpec = inline_or_file(spec.as_deref())?;
                    emit_csv(&reporting::contour_grid(first, &cs)?, out.as_deref())?;
                }
                ProbeKind::Spending => {
                    let path = instance.ok_or_else(|| anyhow!("`spending` needs --instance"))?;
                    let inst: AdWordsInstance = read_json(&path)?;
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    emit_csv(&reporting::spending_trajectories(first, &inst, runs, &mut rng)?, out.as_deref())?;
                }
                ProbeKind::CrTrace => {
                    let path = experience.ok_or_else(|| anyhow!("`cr-trace` needs --experience"))?;
                    let e = ExperienceArray::read_jsonl(&path)?;
                    let refs: Vec<&dyn Policy> = owned.iter().map(|p| p.as_ref()).collect();
                    emit_csv(&reporting::cr_trace(&refs, &e, group)?, out.as_deref())?;
                }
            }
        }
        Command::AdvSearch { target, diff, config, steps, seed, out } => {
            let mut cfg: SearchConfig = match config {
                Some(p) => read_json(&p)?,
                None => SearchConfig::default(),
            };
            if let Some(s) = steps {
                cfg.steps = s;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let res = match (target, diff) {
                (Some(t), None) => adv_search_fixed(load_policy(&t)?.as_ref(), &cfg)?,
                (None, Some(pair)) if pair.len() == 2 => {
                    let (a, b) = (load_policy(&pair[0])?, load_policy(&pair[1])?);
                    adv_search_diff(a.as_ref(), b.as_ref(), &cfg)?
                }
                _ => bail!("give exactly one of --target or --diff A,B"),
            };
            fs::create_dir_all(&out)?;
            fs::write(out.join("instance.json"), serde_json::to_string(&res.instance)?)?;
            emit_csv(&res.trace, Some(&out.join("trace.csv")))?;
            println!("{}", serde_json::json!({"status": "ok", "value": res.value, "out": out}));
        }
        Command::ExportInstance { distribution, seed, out } => {
            let spec = parse_distribution(&distribution)?;
            let inst = spec.sample(&mut ChaCha8Rng::seed_from_u64(seed))?;
            let mut w = sink(out.as_deref())?;
            writeln!(w, "{}", serde_json::to_string(&inst)?)?;
            if out.is_some() {
                let opt = offline_optimum(&inst)?.value;
                println!("{}", serde_json::json!({"status": "ok", "m": inst.m(), "n": inst.n(), "opt": opt}));
            }
        }
        Command::Replay { experience, policies, group, out } => {
            let e = ExperienceArray::read_jsonl(&experience)?;
            let owned = load_policies(&policies)?;
            let refs: Vec<&dyn Policy> = owned.iter().map(|p| p.as_ref()).collect();
            emit_csv(&reporting::cr_trace(&refs, &e, group)?, out.as_deref())?;
        }
    }
    Ok(())
}

fn error_kind(err: &anyhow::Error) -> &'static str {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<TrainError>() {
            return match e {
                TrainError::Config(_) => "config",
                TrainError::NonFinite { .. } => "non_finite",
                _ => "train",
            };
        }
        if cause.is::<EnvError>() {
            return "invalid_input";
        }
        if cause.is::<SkiError>() {
            return "ski";
        }
        if cause.is::<serde_json::Error>() {
            return "json";
        }
        if cause.is::<io::Error>() {
            return "io";
        }
    }
    "error"
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let line = serde_json::json!({
                "status": "error",
                "kind": error_kind(&err),
                "message": format!("{err:#}"),
            });
            eprintln!("{line}");
            ExitCode::FAILURE
        }
    }
}
