//! Command-line front end: bootstrap, grow, attack, trace, experiment,
//! calibrate. All commands are pure functions of (config, master seed);
//! state between commands is reproduced deterministically rather than
//! serialized wholesale.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use recofp::attacks::run_attack;
use recofp::config::{ExperimentConfig, Profile};
use recofp::crypto::{KeyFile, SecurityLevel};
use recofp::error::{Error, Result};
use recofp::experiment::{
    build_simulation, calibrate_ta, derive_seed, resolve_threshold, run_experiment,
    sample_coalition, write_population_csv,
};
use recofp::fingerprint::Fingerprint;
use recofp::tracing::{calibrate_threshold, trace_exact, write_score_csv};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

#[derive(Parser)]
#[command(
    name = "recofp",
    about = "Recombined-fingerprint P2P distribution and traitor-tracing simulator"
)]
struct Cli {
    /// TOML experiment configuration; profile defaults are used when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Named preset: desk, paper, or crypto.
    #[arg(long, global = true, default_value = "desk")]
    profile: String,
    /// Master seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Crypto backend override: mock, paillier1024, paillier2048.
    #[arg(long, global = true)]
    backend: Option<String>,
    /// Output directory override.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the codebook, key material and seed copies.
    Bootstrap {
        /// Overwrite an existing output directory.
        #[arg(long)]
        force: bool,
    },
    /// Grow the buyer population to the configured generations.
    Grow,
    /// Sample coalitions and emit colluded fingerprints.
    Attack,
    /// Trace a colluded or redistributed fingerprint file.
    Trace {
        /// Packed fingerprint file (as written by `attack`).
        #[arg(long)]
        input: PathBuf,
        /// Optional ground-truth coalition file (whitespace-separated buyer
        /// indices); mismatch yields a nonzero exit.
        #[arg(long)]
        ground_truth: Option<PathBuf>,
    },
    /// Full batch: grow, attack, trace, aggregate.
    Experiment,
    /// Estimate T_a on synthetic coalitions and report T = 0.75 T_a.
    Calibrate {
        /// Number of synthetic coalitions.
        #[arg(long, default_value_t = 20)]
        runs: usize,
    },
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::profile(cli.profile.parse::<Profile>()?),
    };
    if let Some(seed) = cli.seed {
        cfg.master_seed = seed;
    }
    if let Some(backend) = &cli.backend {
        cfg.backend = match backend.as_str() {
            "mock" => SecurityLevel::Mock,
            "paillier1024" => SecurityLevel::Paillier1024,
            "paillier2048" => SecurityLevel::Paillier2048,
            other => return Err(Error::Config(format!("unknown backend {other}"))),
        };
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    for w in cfg.validate()? {
        eprintln!("warning: {w}");
    }
    Ok(cfg)
}

fn cmd_bootstrap(cfg: &ExperimentConfig, force: bool) -> Result<()> {
    let dir = &cfg.output_dir;
    if dir.exists() && dir.join("config.toml").exists() && !force {
        return Err(Error::State(format!(
            "{} already bootstrapped; use --force to overwrite",
            dir.display()
        )));
    }
    std::fs::create_dir_all(dir)?;
    let params = cfg.code_parameters();
    let code = recofp::code::FullCode::generate(
        &params,
        cfg.layout.num_segments,
        cfg.code.per_position,
        derive_seed(cfg.master_seed, "code", 0),
    )?;
    let mut f = std::fs::File::create(dir.join("codebook.bin"))?;
    code.write_to(&mut f)?;
    let key_file = KeyFile::new(
        cfg.backend,
        code.total_bits(),
        "content-0",
        derive_seed(cfg.master_seed, "sim", 0),
    );
    std::fs::write(dir.join("keyfile.json"), serde_json::to_vec_pretty(&key_file)?)?;
    cfg.save(&dir.join("config.toml"))?;
    println!(
        "bootstrap: M={} seeds, l0={}, n_s={}, l={} bits, backend {:?}",
        params.num_codewords,
        params.codeword_length,
        cfg.layout.num_segments,
        code.total_bits(),
        cfg.backend
    );
    Ok(())
}

fn cmd_grow(cfg: &ExperimentConfig) -> Result<()> {
    let sim = build_simulation(cfg)?;
    std::fs::create_dir_all(&cfg.output_dir)?;
    let f = std::fs::File::create(cfg.output_dir.join("population.csv"))?;
    write_population_csv(&sim, f)?;
    let mut digests = std::collections::HashSet::new();
    let distinct = sim
        .buyers
        .iter()
        .filter(|b| digests.insert(b.fingerprint.bits().to_bytes()))
        .count();
    println!(
        "grow: N={} buyers over {} generations; {} registers; {} distinct fingerprints",
        sim.population(),
        sim.generations.len(),
        sim.monitor.registers.len(),
        distinct
    );
    Ok(())
}

fn cmd_attack(cfg: &ExperimentConfig) -> Result<()> {
    let sim = build_simulation(cfg)?;
    let dir = cfg.output_dir.join("attacks");
    std::fs::create_dir_all(&dir)?;
    let mut manifest = csv::Writer::from_path(dir.join("manifest.csv"))
        .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    manifest
        .write_record(["attack", "run", "coalition", "tie_seed", "file"])
        .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    for kind in &cfg.attack.kinds {
        let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(
            cfg.master_seed,
            "coalitions",
            match kind {
                recofp::attacks::AttackKind::Average => 0,
                recofp::attacks::AttackKind::Min => 1,
                recofp::attacks::AttackKind::Max => 2,
            },
        ));
        for run in 0..cfg.attack.coalitions {
            let coalition = sample_coalition(&sim, cfg.attack.coalition_size, &mut rng)?;
            let tie_seed = rng.gen::<u64>();
            let members: Vec<&Fingerprint> =
                coalition.iter().map(|&b| &sim.buyers[b].fingerprint).collect();
            let (colluded, _) = run_attack(*kind, &members, tie_seed)?;
            let fp = Fingerprint::from_bits(
                colluded,
                sim.code.num_segments(),
                sim.code.segment_length(),
            )?;
            let name = format!("{}_{:04}.fp", kind.name(), run);
            std::fs::write(dir.join(&name), fp.to_packed())?;
            let coalition_s =
                coalition.iter().map(|b| b.to_string()).collect::<Vec<_>>().join(" ");
            manifest
                .write_record([
                    kind.name().to_string(),
                    run.to_string(),
                    coalition_s,
                    tie_seed.to_string(),
                    name,
                ])
                .map_err(|e| Error::Io(std::io::Error::other(e)))?;
        }
    }
    manifest.flush()?;
    println!(
        "attack: {} colluded copies written to {}",
        cfg.attack.kinds.len() * cfg.attack.coalitions,
        dir.display()
    );
    Ok(())
}

fn cmd_trace(
    cfg: &ExperimentConfig,
    input: &PathBuf,
    ground_truth: Option<&PathBuf>,
) -> Result<bool> {
    let sim = build_simulation(cfg)?;
    let data = std::fs::read(input)?;
    let fp = Fingerprint::from_packed(&data)?;
    if let Some(pseudonym) = trace_exact(&fp, &sim.keys, &sim.sigma, &sim)? {
        println!("trace: exact redistribution by {pseudonym}");
        return Ok(true);
    }
    let threshold = resolve_threshold(cfg)?;
    let report = recofp::tracing::trace_colluders(fp.bits(), &sim, threshold)?;
    std::fs::create_dir_all(&cfg.output_dir)?;
    let stem = input
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("input");
    let out = cfg.output_dir.join(format!("scores_{stem}.csv"));
    write_score_csv(&report, std::fs::File::create(&out)?)?;
    let shown: Vec<&str> = report.accused.iter().take(8).map(|s| s.as_str()).collect();
    println!(
        "trace: T={threshold}, {} accused {}{}; scores in {}",
        report.accused.len(),
        shown.join(" "),
        if report.accused.len() > shown.len() { " ..." } else { "" },
        out.display()
    );
    if report.tracing_failure {
        println!("trace: no buyer above threshold (tracing failure)");
    }
    match ground_truth {
        None => Ok(!report.tracing_failure),
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            let mut truth: Vec<usize> = text
                .split_whitespace()
                .map(|t| t.parse::<usize>().map_err(|_| Error::Config("bad index".into())))
                .collect::<Result<_>>()?;
            truth.sort_unstable();
            let mut accused: Vec<usize> = report
                .scores
                .iter()
                .filter(|s| s.accused)
                .map(|s| s.buyer_index)
                .collect();
            accused.sort_unstable();
            let ok = accused == truth;
            println!("trace: ground truth {}", if ok { "matched" } else { "MISMATCH" });
            Ok(ok)
        }
    }
}

fn cmd_experiment(cfg: &ExperimentConfig) -> Result<()> {
    let report = run_experiment(cfg, Some(&cfg.output_dir))?;
    let sim_runs = report.runs.len();
    println!(
        "experiment: N={}, T={}, {} runs — {} false negatives, {} false positives",
        report.population,
        report.threshold,
        sim_runs,
        report.total_false_negatives,
        report.total_false_positives
    );
    println!(
        "  colluder scores [{:.2}, {:.2}]; innocent scores [{:.2}, {:.2}]",
        report.colluder_score_range.0,
        report.colluder_score_range.1,
        report.innocent_score_range.0,
        report.innocent_score_range.1
    );
    println!(
        "  decrypts during tracing: {}; merchant distribution events: {}",
        report.decrypt_calls_during_tracing, report.merchant_distribution_events
    );
    println!("  artifacts in {}", cfg.output_dir.display());
    Ok(())
}

fn cmd_calibrate(cfg: &ExperimentConfig, runs: usize) -> Result<()> {
    let (ta, scores) = calibrate_ta(cfg, runs)?;
    let t = calibrate_threshold(ta)?;
    let (lo, hi) = scores
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &s| (lo.min(s), hi.max(s)));
    println!(
        "calibrate: {} synthetic colluder scores in [{lo:.2}, {hi:.2}], T_a={ta:.3}, T=0.75*T_a={t:.3}",
        scores.len()
    );
    Ok(())
}

fn run() -> Result<bool> {
    let cli = Cli::parse();
    let cfg = load_config(&cli)?;
    match &cli.command {
        Command::Bootstrap { force } => cmd_bootstrap(&cfg, *force).map(|_| true),
        Command::Grow => cmd_grow(&cfg).map(|_| true),
        Command::Attack => cmd_attack(&cfg).map(|_| true),
        Command::Trace { input, ground_truth } => cmd_trace(&cfg, input, ground_truth.as_ref()),
        Command::Experiment => cmd_experiment(&cfg).map(|_| true),
        Command::Calibrate { runs } => cmd_calibrate(&cfg, *runs).map(|_| true),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
