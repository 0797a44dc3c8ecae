use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use ftncfm::diffcore::checkpoint;
use ftncfm::ft_engine::{self, report as influence_csv};
use ftncfm::harness::artifacts::{self as names, ensure_dir};
use ftncfm::harness::{self, Ablation, Method, PipelineConfig, VariantResult};
use ftncfm::ncfm;
use ftncfm::toyworld::io;
use ftncfm::{Error, Result};

/// Influence-weighted dataset distillation on a toy vision-language-action world.
#[derive(Debug, Parser)]
#[command(name = "ftncfm", version)]
struct Cli {
    /// TOML configuration; defaults apply to every missing key.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Seed for single-seed steps. Multi-seed commands run only this seed.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    /// Output directory, overriding `out_dir` from the config.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Worker threads for influence and discrepancy evaluation.
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the training, influence test and evaluation datasets.
    Generate,
    /// Train the guide model and write per-sample influence scores.
    Assess,
    /// Distill the synthetic coreset from the dataset and influence scores.
    Distill,
    /// Train a downstream policy for one method.
    Train(MethodArg),
    /// Evaluate a trained downstream policy on the held-out set.
    Evaluate(MethodArg),
    /// Run ablation variants over the configured seeds.
    Ablate {
        /// Variants to run; all three when omitted.
        #[arg(long, value_delimiter = ',')]
        variants: Vec<String>,
    },
    /// Run the pipeline once per beta.
    SweepBeta {
        #[arg(long, value_delimiter = ',', default_value = "0,0.1,0.5,1,1.5,2")]
        betas: Vec<f64>,
    },
    /// Run the whole pipeline with baselines and write the report.
    Report {
        /// Rebuild the report from existing seed directories instead of
        /// rerunning guide training, assessment and distillation.
        #[arg(long)]
        from_artifacts: bool,
    },
    /// Write a 2-D projection of real and synthetic features.
    Project,
}

#[derive(Debug, Args)]
struct MethodArg {
    /// One of ft-ncfm, random-coreset, influence-coreset, full-data.
    #[arg(long, default_value = "ft-ncfm")]
    method: String,
}

fn exit_code(e: &Error) -> u8 {
    if e.is_numeric() {
        return 3;
    }
    match e.root() {
        Error::Io(_) | Error::Format { .. } => 4,
        _ => 2,
    }
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
            PipelineConfig::from_toml(&text)?
        }
        None => PipelineConfig::default(),
    };
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn step_seed(cli: &Cli, cfg: &PipelineConfig) -> Result<u64> {
    cli.seed
        .or_else(|| cfg.seeds.first().copied())
        .ok_or_else(|| Error::Config("no seed given and the config lists none".into()))
}

fn load_guide(cfg: &PipelineConfig, dir: &Path) -> Result<ft_engine::GuideModel> {
    let steps = ft_engine::guide_steps(cfg.guide.steps, cfg.guide.training_fraction)?;
    names::load_guide(&cfg.policy_net()?, &dir.join(names::GUIDE), cfg.guide.training_fraction, steps)
}

fn generate(cfg: &PipelineConfig, seed: u64, dir: &Path) -> Result<()> {
    let splits = harness::generate_splits(cfg, seed)?;
    harness::write_splits(&splits, dir)?;
    std::fs::write(dir.join(names::CONFIG), cfg.to_toml())?;
    println!(
        "wrote {} training, {} test and {} evaluation samples",
        splits.train.len(),
        splits.test.len(),
        splits.eval.len()
    );
    Ok(())
}

fn assess(cfg: &PipelineConfig, seed: u64, dir: &Path) -> Result<()> {
    let splits = harness::read_splits(dir)?;
    let guide = harness::guide_phase(cfg, seed, &splits.train)?;
    names::save_guide(&guide, &dir.join(names::GUIDE))?;
    let records = harness::assess_phase(cfg, seed, &guide, &splits)?;
    influence_csv::save(&dir.join(names::INFLUENCE), &records)?;
    let elites = records.iter().filter(|r| r.is_elite).count();
    println!("scored {} samples, {elites} elites", records.len());
    Ok(())
}

fn distill(cfg: &PipelineConfig, seed: u64, dir: &Path) -> Result<()> {
    let train_set = io::read_samples(&dir.join(names::DATASET))?;
    let records = influence_csv::load(&dir.join(names::INFLUENCE))?;
    let guide = load_guide(cfg, dir)?;
    let coreset = harness::distill_phase(cfg, seed, &guide, &train_set, &records)?;
    ncfm::export_coreset(&coreset.samples, &dir.join(names::CORESET))?;
    names::write_rounds(&dir.join(names::DISCREPANCY), &coreset.rounds)?;
    match (coreset.rounds.first(), coreset.rounds.last()) {
        (Some(first), Some(last)) => println!(
            "distilled {} samples, discrepancy {:.6} -> {:.6}",
            coreset.samples.len(),
            first.start,
            last.after_generator
        ),
        _ => println!("distilled {} samples", coreset.samples.len()),
    }
    Ok(())
}

fn train(cfg: &PipelineConfig, seed: u64, dir: &Path, method: Method) -> Result<()> {
    let net = cfg.policy_net()?;
    let data = harness::method_training_set(cfg, seed, method, dir)?;
    let params = harness::train_downstream(cfg, seed, &net, &data)?;
    checkpoint::save(&params, &dir.join(names::policy_file(method.name())))?;
    println!("trained {method} on {} samples", data.len());
    Ok(())
}

fn evaluate(cfg: &PipelineConfig, dir: &Path, method: Method) -> Result<()> {
    let net = cfg.policy_net()?;
    let params = checkpoint::load(&dir.join(names::policy_file(method.name())))?;
    if **params.layout() != **net.layout() {
        return Err(Error::format("policy checkpoint", "layout does not match the configured model"));
    }
    let eval = io::read_samples(&dir.join(names::EVAL_SET))?;
    let metrics = harness::evaluate_policy(&net, &params, &eval)?;
    names::write_json(&dir.join(names::metrics_file(method.name())), &metrics)?;
    println!(
        "{method}: success {:.4}, mean error {:.4}",
        metrics.success_rate, metrics.mean_error
    );
    Ok(())
}

#[derive(Serialize)]
struct AblationSummary {
    variant: Ablation,
    mean_success: f64,
    std_success: f64,
    mean_error: f64,
}

#[derive(Serialize)]
struct AblationFile {
    config_hash: String,
    results: Vec<VariantResult>,
    summary: Vec<AblationSummary>,
}

fn ablate(cfg: &PipelineConfig, variants: &[String]) -> Result<()> {
    let variants: Vec<Ablation> = if variants.is_empty() {
        Ablation::ALL.to_vec()
    } else {
        variants.iter().map(|v| v.parse()).collect::<Result<_>>()?
    };
    let results = harness::run_ablations(cfg, &variants)?;
    let summary = variants
        .iter()
        .map(|&variant| {
            let of = |f: fn(&VariantResult) -> f64| -> Vec<f64> { results.iter().filter(|r| r.variant == variant).map(f).collect() };
            let (mean_success, std_success) = harness::mean_std(&of(|r| r.metrics.success_rate));
            AblationSummary {
                variant,
                mean_success,
                std_success,
                mean_error: harness::mean_std(&of(|r| r.metrics.mean_error)).0,
            }
        })
        .collect::<Vec<_>>();
    for s in &summary {
        println!(
            "{:<15} success {:.4} ± {:.4}, mean error {:.4}",
            s.variant.name(),
            s.mean_success,
            s.std_success,
            s.mean_error
        );
    }
    ensure_dir(&cfg.out_dir)?;
    names::write_json(
        &cfg.out_dir.join(names::ABLATION),
        &AblationFile {
            config_hash: cfg.hash(),
            results,
            summary,
        },
    )
}

fn sweep_beta(cfg: &PipelineConfig, betas: &[f64]) -> Result<()> {
    if betas.iter().any(|b| !b.is_finite() || *b < 0.0) {
        return Err(Error::Config("betas must be finite and nonnegative".into()));
    }
    let rows = harness::beta_sweep(cfg, betas)?;
    for r in &rows {
        println!("beta {:<5} success {:.4} ± {:.4}", r.beta, r.mean, r.std);
    }
    ensure_dir(&cfg.out_dir)?;
    harness::write_beta_table(&cfg.out_dir.join(names::BETA_SWEEP), &rows)
}

fn report(cfg: &PipelineConfig, from_artifacts: bool) -> Result<()> {
    let report = if from_artifacts {
        let (report, _) = harness::report_from_artifacts(cfg, &cfg.out_dir)?;
        names::write_json(&cfg.out_dir.join(names::REPORT), &report)?;
        report
    } else {
        harness::run_pipeline(cfg)?
    };
    for s in &report.summary {
        println!(
            "{:<18} success {:.4} ± {:.4}, mean error {:.4}",
            s.method.name(),
            s.mean_success,
            s.std_success,
            s.mean_error
        );
    }
    for t in &report.paired_tests {
        println!("{} vs {}: mean diff {:+.4}, p {:.4}", t.a, t.b, t.test.mean_diff, t.test.p_value);
    }
    Ok(())
}

fn project(cfg: &PipelineConfig, dir: &Path) -> Result<()> {
    let guide = load_guide(cfg, dir)?;
    let encoders = guide.net.encoders();
    let params = guide.encoder_params();
    let train_set = io::read_samples(&dir.join(names::DATASET))?;
    let records = influence_csv::load(&dir.join(names::INFLUENCE))?;
    let weight_of: std::collections::HashMap<u32, f64> = records.iter().map(|r| (r.sample_id, r.weight)).collect();
    let synthetic = ncfm::load_sidecar(&dir.join(names::CORESET))?;

    let mut features = encoders.featurize_all(&params, &train_set)?;
    let mut weights = train_set
        .iter()
        .map(|s| {
            weight_of
                .get(&s.id)
                .copied()
                .ok_or_else(|| Error::contract(format!("no influence record for sample {}", s.id)))
        })
        .collect::<Result<Vec<f64>>>()?;
    let mut sources = vec!["real"; train_set.len()];
    for syn in &synthetic {
        features.push(encoders.featurize_synthetic(&params, syn)?);
        weights.push(1.0 / synthetic.len() as f64);
        sources.push("synthetic");
    }
    let points = harness::export_projection(&features, &weights, &sources, &dir.join(names::PROJECTION))?;
    println!("projected {} points", points.len());
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    let mut cfg = load_config(cli)?;
    let dir = cfg.out_dir.clone();
    match &cli.command {
        Command::Generate => {
            ensure_dir(&dir)?;
            generate(&cfg, step_seed(cli, &cfg)?, &dir)
        }
        Command::Assess => assess(&cfg, step_seed(cli, &cfg)?, &dir),
        Command::Distill => distill(&cfg, step_seed(cli, &cfg)?, &dir),
        Command::Train(m) => train(&cfg, step_seed(cli, &cfg)?, &dir, m.method.parse()?),
        Command::Evaluate(m) => evaluate(&cfg, &dir, m.method.parse()?),
        Command::Project => project(&cfg, &dir),
        multi => {
            if let Some(seed) = cli.seed {
                cfg.seeds = vec![seed];
            }
            match multi {
                Command::Ablate { variants } => ablate(&cfg, variants),
                Command::SweepBeta { betas } => sweep_beta(&cfg, betas),
                Command::Report { from_artifacts } => report(&cfg, *from_artifacts),
                _ => unreachable!("single-seed commands are handled above"),
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
