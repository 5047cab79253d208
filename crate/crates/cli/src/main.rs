//! `mex`: single entry point for corpus creation, victim training and
//! serving, extraction runs, evaluation and ablation sweeps.

mod manifest;
mod runcfg;

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use manifest::ManifestBuilder;
use mex_core::attack::{run_attack, AttackEnv, Checkpoint, TrainingHistory};
use mex_core::data::{load_labeled_dir, pattern_dataset, LabeledImages};
use mex_core::evalkit;
use mex_core::nn::{build_network, ClassifierArch, Net, NetworkSpec, Role};
use mex_core::oracle::{
    load_victim, save_victim, train_victim, LedgerLog, QueryLedger, SharedLedger,
    VictimTrainOpts,
};
use mex_core::synth;
use runcfg::RunConfig;

#[derive(Parser)]
#[command(name = "mex", version, about = "model-extraction lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic shape corpus on disk.
    SynthMake(SynthMakeArgs),
    /// Train a victim classifier to a target accuracy.
    VictimTrain(VictimTrainArgs),
    /// Serve a victim model over HTTP with a metered budget.
    VictimServe(VictimServeArgs),
    /// Report ledger totals from a persisted query log.
    VictimStats(VictimStatsArgs),
    /// Extraction runs.
    Attack(AttackCmd),
    /// Evaluation utilities.
    Eval(EvalCmd),
    /// Paired-seed ablation sweeps.
    Sweep(SweepCmd),
}

#[derive(Args)]
struct SynthMakeArgs {
    #[arg(long)]
    total: usize,
    /// Variant fractions, e.g. large=0.5,small=0.5
    #[arg(long, default_value = "large=0.5,small=0.5")]
    mix: String,
    /// Grey-scale output (default); use --color for RGB.
    #[arg(long, default_value_t = true, overrides_with = "color")]
    grey: bool,
    #[arg(long)]
    color: bool,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct VictimTrainArgs {
    /// Built-in `patterns` dataset or a labeled directory via --data-dir.
    #[arg(long, default_value = "patterns")]
    data: String,
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 20_000)]
    count: usize,
    #[arg(long, default_value_t = 1001)]
    data_seed: u64,
    #[arg(long, default_value = "small")]
    arch: String,
    #[arg(long, default_value_t = 0.95)]
    target_acc: f32,
    #[arg(long, default_value_t = 30)]
    epochs_cap: usize,
    #[arg(long, default_value_t = 2002)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct VictimServeArgs {
    #[arg(long)]
    model: PathBuf,
    /// Total query budget; omit for unlimited.
    #[arg(long)]
    budget: Option<u64>,
    #[arg(long)]
    port: u16,
    /// Append-only query log; replayed on restart so totals persist.
    #[arg(long)]
    ledger_log: Option<PathBuf>,
}

#[derive(Args)]
struct VictimStatsArgs {
    #[arg(long)]
    ledger_log: PathBuf,
    #[arg(long)]
    budget: Option<u64>,
}

#[derive(Args)]
struct AttackCmd {
    #[command(subcommand)]
    action: AttackAction,
}

#[derive(Subcommand)]
enum AttackAction {
    /// Run the full extraction pipeline from a config file.
    Run(AttackRunArgs),
}

#[derive(Args)]
struct AttackRunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Resume from a checkpoint written by an earlier run.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args)]
struct EvalCmd {
    #[command(subcommand)]
    action: EvalAction,
}

#[derive(Subcommand)]
enum EvalAction {
    /// Test-set accuracy of a clone (from a checkpoint) or a victim model.
    Accuracy(EvalAccuracyArgs),
    /// Top-1 agreement between a clone and the victim on a probe set.
    Agreement(EvalAgreementArgs),
    /// Class histogram of generated samples.
    Hist(EvalHistArgs),
    /// Active-learning extraction query bound.
    Bound(EvalBoundArgs),
    /// Re-emit accuracy curves from a history CSV.
    Curves(EvalCurvesArgs),
}

#[derive(Args)]
struct EvalAccuracyArgs {
    #[arg(long, conflicts_with = "victim")]
    clone_from: Option<PathBuf>,
    #[arg(long)]
    victim: Option<PathBuf>,
    #[arg(long, default_value_t = 2_000)]
    count: usize,
    #[arg(long, default_value_t = 9009)]
    seed: u64,
    #[arg(long)]
    data_dir: Option<PathBuf>,
}

#[derive(Args)]
struct EvalAgreementArgs {
    #[arg(long)]
    clone_from: PathBuf,
    #[arg(long)]
    victim: PathBuf,
    #[arg(long, default_value_t = 2_000)]
    count: usize,
    #[arg(long, default_value_t = 9009)]
    seed: u64,
}

#[derive(Args)]
struct EvalHistArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value = "clone")]
    labeler: String,
    #[arg(long)]
    victim: Option<PathBuf>,
    #[arg(long, default_value_t = 1_000)]
    n: usize,
    #[arg(long, default_value_t = 31)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalBoundArgs {
    #[arg(long)]
    q: f64,
    #[arg(long)]
    delta: f64,
    #[arg(long)]
    rho: f64,
}

#[derive(Args)]
struct EvalCurvesArgs {
    #[arg(long)]
    history: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SweepCmd {
    #[command(subcommand)]
    action: SweepAction,
}

#[derive(Subcommand)]
enum SweepAction {
    /// Sweep the diversity coefficient with paired seeds.
    Lambda(SweepLambdaArgs),
    /// Sweep the iteration gap of the generator or clone.
    Gap(SweepGapArgs),
    /// Sweep the clone architecture.
    Arch(SweepArchArgs),
}

#[derive(Args)]
struct SweepLambdaArgs {
    /// Comma-separated coefficients, e.g. 100,200,300,500,700,1000
    #[arg(long)]
    values: String,
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SweepGapArgs {
    #[arg(long)]
    values: String,
    /// Which model the gap applies to: generator|clone|both
    #[arg(long, default_value = "both")]
    target: String,
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArchArgs {
    /// Comma-separated architectures from small,wide,deep
    #[arg(long)]
    values: String,
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(err) = dispatch(Cli::parse()) {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::SynthMake(a) => synth_make(a),
        Command::VictimTrain(a) => victim_train(a),
        Command::VictimServe(a) => victim_serve(a),
        Command::VictimStats(a) => victim_stats(a),
        Command::Attack(AttackCmd {
            action: AttackAction::Run(a),
        }) => attack_run(a),
        Command::Eval(EvalCmd { action }) => eval(action),
        Command::Sweep(SweepCmd { action }) => sweep(action),
    }
}

fn synth_make(a: SynthMakeArgs) -> Result<()> {
    let grey = !a.color && a.grey;
    let mix = runcfg::parse_mix(&a.mix)?;
    let variants = runcfg::variants_from_mix(&mix, grey)?;
    let man = synth::build_corpus(&variants, a.total, a.seed, &a.out)?;
    println!(
        "wrote {} images to {} (checksum {})",
        man.count,
        a.out.display(),
        man.checksum
    );
    Ok(())
}

fn load_dataset(
    data: &str,
    data_dir: &Option<PathBuf>,
    count: usize,
    seed: u64,
) -> Result<LabeledImages> {
    match (data, data_dir) {
        (_, Some(dir)) => Ok(load_labeled_dir(dir)?),
        ("patterns", None) => Ok(pattern_dataset(count, seed)),
        (other, None) => bail!("unknown dataset `{other}` (use patterns or --data-dir)"),
    }
}

fn victim_train(a: VictimTrainArgs) -> Result<()> {
    let dataset = load_dataset(&a.data, &a.data_dir, a.count, a.data_seed)?;
    let arch = ClassifierArch::parse(&a.arch)?;
    let spec = NetworkSpec::classifier_32(Role::Victim, dataset.images.dim().1, dataset.num_classes, arch);
    let opts = VictimTrainOpts {
        target_accuracy: a.target_acc,
        epochs_cap: a.epochs_cap,
        ..Default::default()
    };
    let mut rng = mex_core::rng::seed_rng(a.seed);
    let victim = train_victim(&dataset, &spec, &opts, &mut rng)?;
    println!(
        "victim holdout accuracy {:.4} after {} epochs{}",
        victim.train_accuracy,
        victim.epochs_trained,
        if victim.target_shortfall {
            " (TARGET NOT REACHED)"
        } else {
            ""
        }
    );
    save_victim(&victim, &a.out)?;
    println!("saved {}", a.out.display());
    Ok(())
}

fn victim_serve(a: VictimServeArgs) -> Result<()> {
    let victim = load_victim(&a.model)?;
    let (ledger, log) = match &a.ledger_log {
        Some(path) => (
            LedgerLog::replay(path, a.budget)?,
            Some(LedgerLog::create(path)?),
        ),
        None => (QueryLedger::new(a.budget), None),
    };
    println!(
        "serving victim ({} classes, holdout acc {:.4}) on port {}; used {} of {:?}",
        victim.num_classes,
        victim.train_accuracy,
        a.port,
        ledger.used(),
        ledger.budget()
    );
    let ctx = Arc::new(mex_serve::ServeCtx {
        victim,
        ledger: SharedLedger::new(ledger, log),
    });
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let addr: SocketAddr = ([0, 0, 0, 0], a.port).into();
        let (local, handle) = mex_serve::serve_on(addr, ctx).await?;
        println!("listening on {local}");
        handle.await.ok();
        Ok::<(), std::io::Error>(())
    })?;
    Ok(())
}

fn victim_stats(a: VictimStatsArgs) -> Result<()> {
    let ledger = LedgerLog::replay(&a.ledger_log, a.budget)?;
    println!("queries used: {}", ledger.used());
    if let Some(b) = ledger.budget() {
        println!("budget: {b} (remaining {})", b - ledger.used());
    }
    for (phase, count) in ledger.breakdown() {
        println!("  {phase}: {count}");
    }
    Ok(())
}

fn write_run_outputs(
    out: &Path,
    outcome: &mex_core::attack::AttackOutcome,
    hist_seed: u64,
) -> Result<()> {
    evalkit::emit_curves(&outcome.history, out)?;
    let mut rng = mex_core::rng::seed_rng(hist_seed);
    let k = outcome
        .clone
        .spec
        .num_classes()
        .context("clone spec lost its class count")?;
    let hist = evalkit::class_histogram(
        &outcome.generator,
        Some(&outcome.clone),
        None,
        k,
        1_000,
        &mut rng,
    )?;
    evalkit::emit_histogram(&hist, out)?;
    Ok(())
}

fn attack_run(a: AttackRunArgs) -> Result<()> {
    let cfg = RunConfig::load(&a.config)?;
    for line in &cfg.defaults_report {
        println!("default: {line}");
    }
    let victim = load_victim(&cfg.victim_model)?;
    let proxy = cfg.build_proxy()?;
    let test = cfg.build_test()?;
    std::fs::create_dir_all(&a.out)?;
    // snapshot: the explicit file keys plus every resolved attack field
    let mut snapshot = cfg.raw.clone();
    snapshot.extend(cfg.attack.to_kv());
    std::fs::write(a.out.join("config.txt"), mex_core::kv::format(&snapshot))?;

    let resume = match &a.resume {
        Some(path) => Some(Checkpoint::load(path)?),
        None => None,
    };
    let env = AttackEnv {
        victim: &victim,
        proxy: &proxy,
        test_set: test.as_ref(),
    };
    let started = std::time::Instant::now();
    let outcome = run_attack(&cfg.attack, env, resume, Some(&a.out))?;
    let elapsed = started.elapsed().as_secs_f64();

    write_run_outputs(&a.out, &outcome, cfg.attack.seed ^ 0x5eed)?;
    let mut mb = ManifestBuilder::start("attack run");
    mb.field("config", a.config.display())
        .field("out", a.out.display())
        .field("seed", cfg.attack.seed)
        .field(
            "final_accuracy",
            outcome
                .final_accuracy
                .map(|v| format!("{v:.6}"))
                .unwrap_or_else(|| "n/a".to_string()),
        )
        .ledger(&outcome.ledger);
    mb.finish(&a.out)?;
    println!(
        "run complete in {elapsed:.0}s: {} queries, final accuracy {:?}",
        outcome.ledger.used(),
        outcome.final_accuracy
    );
    Ok(())
}

fn load_clone_from_checkpoint(path: &Path) -> Result<(Net, Net)> {
    let ck = Checkpoint::load(path)?;
    let mut throwaway = mex_core::rng::seed_rng(0);
    let mut clone = build_network(&NetworkSpec::parse(&ck.header.clone_spec)?, &mut throwaway)?;
    clone.import_tensors("c", &ck.tensors)?;
    let mut gen = build_network(&NetworkSpec::parse(&ck.header.gen_spec)?, &mut throwaway)?;
    gen.import_tensors("g", &ck.tensors)?;
    Ok((clone, gen))
}

fn eval(action: EvalAction) -> Result<()> {
    match action {
        EvalAction::Accuracy(a) => {
            let data = match &a.data_dir {
                Some(dir) => load_labeled_dir(dir)?,
                None => pattern_dataset(a.count, a.seed),
            };
            let net = match (&a.clone_from, &a.victim) {
                (Some(ck), None) => load_clone_from_checkpoint(ck)?.0,
                (None, Some(v)) => load_victim(v)?.net,
                _ => bail!("give exactly one of --clone-from or --victim"),
            };
            let acc = evalkit::clone_accuracy(&net, &data)?;
            println!("accuracy: {acc:.4}");
        }
        EvalAction::Agreement(a) => {
            let (clone, _) = load_clone_from_checkpoint(&a.clone_from)?;
            let victim = load_victim(&a.victim)?;
            let probe = pattern_dataset(a.count, a.seed);
            let fraction = evalkit::agreement(&clone, &victim, &probe.images)?;
            println!("agreement: {fraction:.4}");
        }
        EvalAction::Hist(a) => {
            let (clone, gen) = load_clone_from_checkpoint(&a.checkpoint)?;
            let mut rng = mex_core::rng::seed_rng(a.seed);
            let hist = match a.labeler.as_str() {
                "clone" => {
                    let k = clone.spec.num_classes().context("clone without classes")?;
                    evalkit::class_histogram(&gen, Some(&clone), None, k, a.n, &mut rng)?
                }
                "victim" => {
                    let victim = load_victim(
                        a.victim
                            .as_ref()
                            .context("--labeler victim needs --victim FILE")?,
                    )?;
                    let mut ledger = QueryLedger::unlimited();
                    let hist = evalkit::class_histogram(
                        &gen,
                        None,
                        Some((&victim, &mut ledger)),
                        victim.num_classes,
                        a.n,
                        &mut rng,
                    )?;
                    println!("victim queries charged: {}", ledger.used());
                    hist
                }
                other => bail!("labeler must be clone|victim, got `{other}`"),
            };
            println!(
                "counts: {:?} normalized entropy {:.4}",
                hist.counts,
                hist.normalized_entropy()
            );
            if let Some(out) = &a.out {
                evalkit::emit_histogram(&hist, out)?;
                println!("wrote {}", out.join("hist.csv").display());
            }
        }
        EvalAction::Bound(a) => {
            let bound = evalkit::query_bound(a.q, a.delta, a.rho)?;
            println!("{bound}");
        }
        EvalAction::Curves(a) => {
            let text = std::fs::read_to_string(&a.history)?;
            let history = TrainingHistory::from_csv(&text)?;
            evalkit::emit_curves(&history, &a.out)?;
            println!("wrote {}", a.out.join("curves.csv").display());
        }
    }
    Ok(())
}

fn parse_values<T: std::str::FromStr>(text: &str, what: &str) -> Result<Vec<T>> {
    text.split(',')
        .map(|v| {
            v.trim()
                .parse::<T>()
                .map_err(|_| anyhow::anyhow!("bad {what} value `{v}`"))
        })
        .collect()
}

/// Shared sweep driver: same seed for every run (paired comparisons), one
/// subdirectory per value, plus a summary CSV at the sweep root.
fn sweep_runs(
    base: &RunConfig,
    values: Vec<(String, mex_core::attack::AttackConfig)>,
    out: &Path,
    csv_header: &str,
) -> Result<Vec<(String, f64)>> {
    let victim = load_victim(&base.victim_model)?;
    let proxy = base.build_proxy()?;
    let test = base.build_test()?;
    let mut rows = Vec::new();
    for (label, cfg) in values {
        let run_dir = out.join(&label);
        std::fs::create_dir_all(&run_dir)?;
        let env = AttackEnv {
            victim: &victim,
            proxy: &proxy,
            test_set: test.as_ref(),
        };
        println!("sweep point {label} starting");
        let outcome = run_attack(&cfg, env, None, Some(&run_dir))?;
        write_run_outputs(&run_dir, &outcome, cfg.seed ^ 0x5eed)?;
        let acc = outcome.final_accuracy.unwrap_or(f64::NAN);
        println!("sweep point {label}: accuracy {acc:.4}");
        rows.push((label, acc));
    }
    let mut csv = format!("{csv_header}\n");
    for (label, acc) in &rows {
        csv.push_str(&format!("{label},{acc:.6}\n"));
    }
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("sweep.csv"), csv)?;
    Ok(rows)
}

fn sweep(action: SweepAction) -> Result<()> {
    match action {
        SweepAction::Lambda(a) => {
            let base = RunConfig::load(&a.config)?;
            let values: Vec<f64> = parse_values(&a.values, "lambda")?;
            let runs = values
                .into_iter()
                .map(|lambda| {
                    let mut cfg = base.attack.clone();
                    cfg.lambda_div = lambda;
                    (format!("{lambda}"), cfg)
                })
                .collect();
            let rows = sweep_runs(&base, runs, &a.out, "lambda_div,accuracy")?;
            let pairs: Vec<(f64, f64)> = rows
                .iter()
                .map(|(l, acc)| (l.parse().unwrap_or(f64::NAN), *acc))
                .collect();
            evalkit::emit_sweep(&pairs, &a.out)?;
        }
        SweepAction::Gap(a) => {
            let base = RunConfig::load(&a.config)?;
            let values: Vec<u64> = parse_values(&a.values, "gap")?;
            let runs = values
                .into_iter()
                .map(|gap| {
                    let mut cfg = base.attack.clone();
                    match a.target.as_str() {
                        "generator" => cfg.iteration_gap_g = gap,
                        "clone" => cfg.iteration_gap_c = gap,
                        _ => {
                            cfg.iteration_gap_g = gap;
                            cfg.iteration_gap_c = gap;
                        }
                    }
                    (format!("gap_{gap}"), cfg)
                })
                .collect();
            sweep_runs(&base, runs, &a.out, "gap,accuracy")?;
        }
        SweepAction::Arch(a) => {
            let base = RunConfig::load(&a.config)?;
            let names: Vec<String> = a.values.split(',').map(|s| s.trim().to_string()).collect();
            let mut runs = Vec::new();
            for name in names {
                let mut cfg = base.attack.clone();
                cfg.clone_arch = ClassifierArch::parse(&name)?;
                runs.push((name, cfg));
            }
            sweep_runs(&base, runs, &a.out, "arch,accuracy")?;
        }
    }
    Ok(())
}
