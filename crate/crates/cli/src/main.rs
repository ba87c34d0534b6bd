//! `pdl-scopf` command-line tool.

mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use pdl_scopf::dataset::{Dataset, Label};
use pdl_scopf::train::checkpoint::Checkpoint;
use pdl_scopf::train::{self, Method, Trainer};
use pdl_scopf::{eval, oracle, Instance, Network, PerturbationConfig};

use config::{ConfigError, RunConfig};

#[derive(Parser)]
#[command(name = "pdl-scopf", version, about = "Primal-dual learning for preventive DC SCOPF")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a dataset of perturbed instances.
    Gen(GenArgs),
    /// Label a dataset with brute-force reference solutions.
    Oracle(OracleArgs),
    /// Train a primal network.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Print case and dataset statistics.
    Inspect(InspectArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    case: PathBuf,
    #[arg(long, short)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Relative perturbation bound.
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    load_corr: Option<f64>,
    #[arg(long)]
    factor_corr: Option<f64>,
    /// Keep instances where some generator outage cannot be rebalanced.
    #[arg(long)]
    no_recovery_screen: bool,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long)]
    case: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    /// Lattice spacing in p.u.
    #[arg(long, default_value_t = 1e-3)]
    resolution: f64,
    /// Output path; defaults to rewriting the input dataset.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// TOML run configuration; flags override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    case: Option<PathBuf>,
    /// Training dataset; sampled from `train_size` and `seed` when absent.
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    train_size: Option<usize>,
    #[arg(long)]
    test_size: Option<usize>,
    #[arg(long)]
    outer_iters: Option<usize>,
    #[arg(long)]
    inner_iters: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    rho0: Option<f64>,
    #[arg(long)]
    rho_max: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    dual_loss_rho: Option<f64>,
    #[arg(long)]
    obj_scale: Option<f64>,
    #[arg(long)]
    ld_rho: Option<f64>,
    #[arg(long)]
    bs_iterations: Option<usize>,
    /// Report power quantities in MW.
    #[arg(long)]
    mva: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    case: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    /// CSV report path.
    #[arg(long, short)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = pdl_scopf::layers::DEFAULT_BS_ITERATIONS)]
    bs_iterations: usize,
    /// Report power quantities in MW.
    #[arg(long)]
    mva: bool,
}

#[derive(Args)]
struct InspectArgs {
    #[arg(long)]
    case: PathBuf,
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Report power quantities in MW.
    #[arg(long)]
    mva: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Oracle(a) => cmd_oracle(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Inspect(a) => cmd_inspect(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// 2 for configuration errors, 3 for data errors, 4 for numeric divergence.
fn exit_code(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<ConfigError>().is_some() {
        return 2;
    }
    match e.downcast_ref::<pdl_scopf::Error>() {
        Some(pdl_scopf::Error::Divergence(_)) => 4,
        Some(pdl_scopf::Error::Parameter(_)) => 2,
        _ => 3,
    }
}

fn load_network(path: &Path) -> anyhow::Result<Network> {
    Network::from_file(path).with_context(|| format!("loading case {}", path.display()))
}

fn load_dataset(path: &Path, net: &Network) -> anyhow::Result<Dataset> {
    let ds = Dataset::load(path).with_context(|| format!("loading dataset {}", path.display()))?;
    ds.check_network(net)?;
    if ds.manifest.case_hash != net.case.content_hash() {
        eprintln!("warning: dataset {} was generated for a different case", path.display());
    }
    Ok(ds)
}

fn cmd_gen(a: GenArgs) -> anyhow::Result<()> {
    let net = load_network(&a.case)?;
    let mut cfg = PerturbationConfig {
        seed: a.seed,
        ..Default::default()
    };
    if let Some(v) = a.mu {
        cfg.mu = v;
    }
    if let Some(v) = a.load_corr {
        cfg.load_corr = v;
    }
    if let Some(v) = a.factor_corr {
        cfg.factor_corr = v;
    }
    cfg.recovery_screen = !a.no_recovery_screen;
    if a.n == 0 {
        return Err(ConfigError("n must be at least 1".into()).into());
    }
    let ds = Dataset::generate(&net, &cfg, a.n)?;
    ds.save(&a.out)
        .with_context(|| format!("writing {}", a.out.display()))?;
    println!(
        "wrote {} instances to {} ({} resamples)",
        ds.records.len(),
        a.out.display(),
        ds.manifest.resamples
    );
    Ok(())
}

fn cmd_oracle(a: OracleArgs) -> anyhow::Result<()> {
    let net = load_network(&a.case)?;
    let mut ds = load_dataset(&a.dataset, &net)?;
    let summary = oracle::label_dataset(&mut ds, &net, a.resolution)?;
    let out = a.out.unwrap_or(a.dataset);
    ds.save(&out).with_context(|| format!("writing {}", out.display()))?;
    println!(
        "labeled {} instances ({} solved, {} infeasible, {} objective evaluations) -> {}",
        ds.records.len(),
        summary.solved,
        summary.infeasible,
        summary.evals,
        out.display()
    );
    Ok(())
}

/// Training instances and labels. Records the oracle marked infeasible are skipped.
fn training_data(
    ds: &Dataset,
    net: &Network,
    method: Method,
) -> anyhow::Result<(Vec<Instance>, Option<Vec<Vec<f64>>>)> {
    let mut instances = Vec::new();
    let mut labels = Vec::new();
    for rec in &ds.records {
        match &rec.label {
            Some(Label::Infeasible { .. }) => continue,
            Some(Label::Solved { g_star, .. }) => labels.push(g_star.clone()),
            None if method.needs_labels() => {
                return Err(pdl_scopf::Error::Data(format!(
                    "method {method} needs oracle labels but record {} has none; run `pdl-scopf oracle` on the dataset first",
                    rec.index
                ))
                .into())
            }
            None => {}
        }
        instances.push(rec.instance(net)?);
    }
    if instances.is_empty() {
        bail!(pdl_scopf::Error::Data("no usable training instances".into()));
    }
    Ok((instances, method.needs_labels().then_some(labels)))
}

fn cmd_train(a: TrainArgs) -> anyhow::Result<()> {
    let mva = a.mva;
    let run = RunConfig::resolve(&a)?;
    let method: Method = run.method.parse().map_err(|e| ConfigError(format!("{e}")))?;
    let case_path = run.case.clone().ok_or_else(|| ConfigError("no case given".into()))?;
    let out_dir = run.out_dir.clone();
    fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    fs::write(out_dir.join("config.toml"), run.to_toml()?)?;

    let net = load_network(&case_path)?;
    let ds = match &run.dataset {
        Some(p) => load_dataset(p, &net)?,
        None => {
            let cfg = PerturbationConfig {
                seed: run.seed,
                ..run.perturbation
            };
            Dataset::generate(&net, &cfg, run.train_size)?
        }
    };
    let (instances, labels) = training_data(&ds, &net, method)?;
    let mut tcfg = run.trainer.clone();
    tcfg.seed = run.seed;
    let mut trainer = Trainer::new(&net, &instances, labels.as_deref(), method, tcfg)?;

    let ck_path = out_dir.join("checkpoint.json");
    let log_path = out_dir.join("train_log.csv");
    while !trainer.is_done() {
        let rec = trainer.outer_iteration()?;
        Checkpoint::from_trainer(&trainer, &net).save(&ck_path)?;
        train::write_log(fs::File::create(&log_path)?, &trainer.log)?;
        eprintln!("outer {:>3}  rho {:.3e}  v_k {:.3e}  mean objective {:.4}", rec.k, rec.rho, rec.v_k, rec.mean_objective);
    }

    let mut summary = String::new();
    let last = trainer.history.last().copied();
    summary.push_str(&format!("method           {method}\n"));
    summary.push_str(&format!("instances        {}\n", instances.len()));
    summary.push_str(&format!(
        "steps            {} ({} outer x {} inner x 2)\n",
        trainer.state.step, trainer.config.outer_iters, trainer.config.inner_iters
    ));
    if let Some(r) = last {
        let (s, unit) = if mva { (net.case.base_mva, "MW") } else { (1.0, "p.u.") };
        summary.push_str(&format!("final rho        {:.6e}\n", trainer.state.rho));
        summary.push_str(&format!("train max |h|    {:.6e} {unit}\n", r.v_k * s));
        summary.push_str(&format!("train mean obj   {:.6}\n", r.mean_objective));
    }
    if run.test_size > 0 {
        let cfg = PerturbationConfig {
            seed: run.seed.wrapping_add(1),
            ..run.perturbation
        };
        let test = Dataset::generate(&net, &cfg, run.test_size)?.instances(&net)?;
        let report = eval::evaluate(
            &net,
            &trainer.primal,
            &test,
            &vec![None; test.len()],
            trainer.config.bs_iterations,
        )?;
        fs::write(out_dir.join("test_report.csv"), report.to_csv(mva))?;
        summary.push_str("-- held-out sample --\n");
        summary.push_str(&report.render_summary(mva));
    }
    fs::write(out_dir.join("summary.txt"), &summary)?;
    print!("{summary}");
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> anyhow::Result<()> {
    let net = load_network(&a.case)?;
    let ck = Checkpoint::load(&a.checkpoint)
        .with_context(|| format!("loading checkpoint {}", a.checkpoint.display()))?;
    ck.check_network(&net)?;
    let ds = load_dataset(&a.dataset, &net)?;
    let instances = ds.instances(&net)?;
    let stars: Vec<Option<f64>> = ds.records.iter().map(|r| r.solution().map(|(_, o)| o)).collect();
    let report = eval::evaluate(&net, &ck.primal, &instances, &stars, a.bs_iterations)?;
    if let Some(out) = &a.out {
        fs::write(out, report.to_csv(a.mva)).with_context(|| format!("writing {}", out.display()))?;
    }
    print!("{}", report.render_summary(a.mva));
    Ok(())
}

fn cmd_inspect(a: InspectArgs) -> anyhow::Result<()> {
    let net = load_network(&a.case)?;
    let case = &net.case;
    let (s, unit) = if a.mva { (case.base_mva, "MW") } else { (1.0, "p.u.") };
    println!("case             {}", a.case.display());
    println!("hash             {}", case.content_hash());
    println!(
        "buses {}  generators {}  lines {}  loads {}",
        case.n_bus,
        case.n_gen(),
        case.n_line(),
        case.n_load()
    );
    println!("input dim        {}", net.input_dim());
    println!("total base load  {:.4} {unit}", case.d0.iter().sum::<f64>() * s);
    println!("total capacity   {:.4} {unit}", case.gub0.iter().sum::<f64>() * s);
    println!("gen contingencies  {:?}", net.contingencies.gen_contingencies);
    println!("line contingencies {:?}", net.contingencies.line_contingencies);
    let islanding: Vec<usize> = (0..case.n_line()).filter(|&l| net.factors.islanding[l]).collect();
    if !islanding.is_empty() {
        println!("islanding lines  {islanding:?}");
    }
    if let Some(p) = &a.dataset {
        let ds = load_dataset(p, &net)?;
        let n = ds.records.len();
        let solved = ds.records.iter().filter(|r| r.solution().is_some()).count();
        let infeasible = ds
            .records
            .iter()
            .filter(|r| matches!(r.label, Some(Label::Infeasible { .. })))
            .count();
        let totals: Vec<f64> = ds.records.iter().map(|r| r.d.iter().sum::<f64>() * s).collect();
        let min = totals.iter().copied().fold(f64::INFINITY, f64::min);
        let max = totals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        println!("dataset          {} ({n} records, seed {})", p.display(), ds.manifest.config.seed);
        println!("labels           {solved} solved, {infeasible} infeasible, {} unlabeled", n - solved - infeasible);
        if n > 0 {
            println!(
                "total load       min {min:.4}  mean {:.4}  max {max:.4} {unit}",
                totals.iter().sum::<f64>() / n as f64
            );
        }
        let objs: Vec<f64> = ds.records.iter().filter_map(|r| r.solution().map(|(_, o)| o)).collect();
        if !objs.is_empty() {
            println!("mean obj*        {:.4}", objs.iter().sum::<f64>() / objs.len() as f64);
        }
    }
    Ok(())
}
