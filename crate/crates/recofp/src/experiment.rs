//! Experiment orchestration: build the simulated population, sample
//! coalitions, run the attacks, trace, and aggregate — the programmatic
//! core behind the `experiment`, `attack`, `trace` and `calibrate`
//! commands.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::attacks::{run_attack, AttackKind};
use crate::code::FullCode;
use crate::config::{ExperimentConfig, ThresholdMode};
use crate::error::{Error, Result};
use crate::fingerprint::{random_parent_assignment, recombine, seed_fingerprint, Fingerprint};
use crate::simnet::Simulation;
use crate::tracing::{
    calibrate_threshold, cleartext_report_score, trace_colluders, trace_exact, write_score_csv,
    ScoreReport,
};

/// Deterministic sub-seed derivation from the master seed.
pub fn derive_seed(master: u64, domain: &str, index: u64) -> u64 {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(domain.as_bytes());
    h.update(index.to_le_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().unwrap())
}

/// Builds the population described by the config: code generation,
/// bootstrap, growth to the configured number of generations.
pub fn build_simulation(cfg: &ExperimentConfig) -> Result<Simulation> {
    let params = cfg.code_parameters();
    let code = FullCode::generate(
        &params,
        cfg.layout.num_segments,
        cfg.code.per_position,
        derive_seed(cfg.master_seed, "code", 0),
    )?;
    let mut sim =
        Simulation::bootstrap(code, cfg.sim_config(), derive_seed(cfg.master_seed, "sim", 0))?;
    sim.grow_population(cfg.population.generations)?;
    Ok(sim)
}

/// Uniform coalition of non-seed buyers, distinct members.
pub fn sample_coalition(sim: &Simulation, size: usize, rng: &mut impl Rng) -> Result<Vec<usize>> {
    let seeds = sim.num_seeds();
    let n = sim.population();
    if n.saturating_sub(seeds) < size {
        return Err(Error::parameter("coalition", "population too small"));
    }
    let mut members = Vec::with_capacity(size);
    while members.len() < size {
        let b = rng.gen_range(seeds..n);
        if !members.contains(&b) {
            members.push(b);
        }
    }
    members.sort_unstable();
    Ok(members)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunResult {
    pub kind: AttackKind,
    pub run_index: usize,
    pub coalition: Vec<usize>,
    pub tie_seed: u64,
    pub exact_lookup_missed: bool,
    pub accused_buyers: Vec<usize>,
    pub false_negatives: usize,
    pub false_positives: usize,
    pub colluder_min: f64,
    pub colluder_max: f64,
    pub innocent_min: f64,
    pub innocent_max: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub threshold: f64,
    pub population: usize,
    pub runs: Vec<RunResult>,
    pub total_false_negatives: usize,
    pub total_false_positives: usize,
    pub colluder_score_range: (f64, f64),
    pub innocent_score_range: (f64, f64),
    pub decrypt_calls_during_tracing: u64,
    pub merchant_distribution_events: usize,
}

/// Scores one colluded copy and classifies the outcome against the known
/// coalition.
pub fn evaluate_run(
    sim: &Simulation,
    kind: AttackKind,
    run_index: usize,
    coalition: &[usize],
    tie_seed: u64,
    threshold: f64,
) -> Result<(RunResult, ScoreReport)> {
    let members: Vec<&Fingerprint> =
        coalition.iter().map(|&b| &sim.buyers[b].fingerprint).collect();
    let (colluded, _) = run_attack(kind, &members, tie_seed)?;

    // Protocol 3 first; a collusion of distinct copies must miss.
    let colluded_fp = Fingerprint::from_bits(
        colluded.clone(),
        sim.code.num_segments(),
        sim.code.segment_length(),
    )?;
    let exact = trace_exact(&colluded_fp, &sim.keys, &sim.sigma, sim)?;

    let report = trace_colluders(&colluded, sim, threshold)?;
    let mut accused_buyers: Vec<usize> = report
        .scores
        .iter()
        .filter(|s| s.accused)
        .map(|s| s.buyer_index)
        .collect();
    accused_buyers.sort_unstable();

    let mut colluder_min = f64::INFINITY;
    let mut colluder_max = f64::NEG_INFINITY;
    let mut innocent_min = f64::INFINITY;
    let mut innocent_max = f64::NEG_INFINITY;
    for s in &report.scores {
        if coalition.contains(&s.buyer_index) {
            colluder_min = colluder_min.min(s.score);
            colluder_max = colluder_max.max(s.score);
        } else {
            innocent_min = innocent_min.min(s.score);
            innocent_max = innocent_max.max(s.score);
        }
    }
    let false_negatives = coalition.iter().filter(|b| !accused_buyers.contains(b)).count();
    let false_positives = accused_buyers.iter().filter(|b| !coalition.contains(b)).count();

    Ok((
        RunResult {
            kind,
            run_index,
            coalition: coalition.to_vec(),
            tie_seed,
            exact_lookup_missed: exact.is_none(),
            accused_buyers,
            false_negatives,
            false_positives,
            colluder_min,
            colluder_max,
            innocent_min,
            innocent_max,
        },
        report,
    ))
}

/// Resolves the configured threshold, running synthetic calibration for
/// the auto mode.
pub fn resolve_threshold(cfg: &ExperimentConfig) -> Result<f64> {
    match cfg.threshold {
        ThresholdMode::Fixed { value } => Ok(value),
        ThresholdMode::Auto => {
            let (ta, _) = calibrate_ta(cfg, 20)?;
            calibrate_threshold(ta)
        }
    }
}

/// Empirical T_a: mean colluder score over synthetic coalitions of
/// freshly recombined fingerprints (seed parents), cleartext scoring.
pub fn calibrate_ta(cfg: &ExperimentConfig, runs: usize) -> Result<(f64, Vec<f64>)> {
    let params = cfg.code_parameters();
    let code = FullCode::generate(
        &params,
        cfg.layout.num_segments,
        cfg.code.per_position,
        derive_seed(cfg.master_seed, "calibrate-code", 0),
    )?;
    let seeds: Vec<Fingerprint> = (0..params.num_codewords as usize)
        .map(|i| seed_fingerprint(&code, i))
        .collect::<Result<_>>()?;
    let p = code.concatenated_bias();
    let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(cfg.master_seed, "calibrate", 0));
    let mut scores = Vec::new();
    for run in 0..runs {
        let c = cfg.attack.coalition_size;
        let members: Vec<Fingerprint> = (0..c)
            .map(|_| {
                let np = rng.gen_range(cfg.population.parents_min..=cfg.population.parents_max);
                let mut parents: Vec<usize> = Vec::new();
                while parents.len() < np {
                    let s = rng.gen_range(0..seeds.len());
                    if !parents.contains(&s) {
                        parents.push(s);
                    }
                }
                let parent_refs: Vec<&Fingerprint> = parents.iter().map(|&s| &seeds[s]).collect();
                let a = random_parent_assignment(np, cfg.layout.num_segments, &mut rng)?;
                recombine(&parent_refs, &a)
            })
            .collect::<Result<_>>()?;
        let refs: Vec<&Fingerprint> = members.iter().collect();
        for kind in &cfg.attack.kinds {
            let (colluded, _) = run_attack(*kind, &refs, derive_seed(cfg.master_seed, "cal-tie", run as u64))?;
            for m in &members {
                scores.push(cleartext_report_score(&colluded, m.bits(), &p, cfg.layout.num_segments)?);
            }
        }
    }
    if scores.is_empty() {
        return Err(Error::parameter("runs", "no calibration scores"));
    }
    let ta = scores.iter().sum::<f64>() / scores.len() as f64;
    Ok((ta, scores))
}

/// Full experiment: population, coalitions per attack kind, tracing,
/// aggregation. When `out_dir` is given, per-run score CSVs and the
/// summary CSV are written there.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: Option<&Path>) -> Result<ExperimentReport> {
    let threshold = resolve_threshold(cfg)?;
    let sim = build_simulation(cfg)?;
    let decrypts_before = sim.keys.decrypt_calls();

    let mut runs = Vec::new();
    for kind in &cfg.attack.kinds {
        let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(
            cfg.master_seed,
            "coalitions",
            kind_tag(*kind),
        ));
        for run_index in 0..cfg.attack.coalitions {
            let coalition = sample_coalition(&sim, cfg.attack.coalition_size, &mut rng)?;
            let tie_seed = rng.gen::<u64>();
            let (result, report) =
                evaluate_run(&sim, *kind, run_index, &coalition, tie_seed, threshold)?;
            if let Some(dir) = out_dir {
                let scores_dir = dir.join("scores");
                std::fs::create_dir_all(&scores_dir)?;
                let path = scores_dir.join(format!("{}_{:04}.csv", kind.name(), run_index));
                let f = std::fs::File::create(path)?;
                write_score_csv(&report, f)?;
            }
            runs.push(result);
        }
    }

    let total_false_negatives = runs.iter().map(|r| r.false_negatives).sum();
    let total_false_positives = runs.iter().map(|r| r.false_positives).sum();
    let colluder_score_range = (
        runs.iter().map(|r| r.colluder_min).fold(f64::INFINITY, f64::min),
        runs.iter().map(|r| r.colluder_max).fold(f64::NEG_INFINITY, f64::max),
    );
    let innocent_score_range = (
        runs.iter().map(|r| r.innocent_min).fold(f64::INFINITY, f64::min),
        runs.iter().map(|r| r.innocent_max).fold(f64::NEG_INFINITY, f64::max),
    );
    let report = ExperimentReport {
        threshold,
        population: sim.population(),
        total_false_negatives,
        total_false_positives,
        colluder_score_range,
        innocent_score_range,
        decrypt_calls_during_tracing: sim.keys.decrypt_calls() - decrypts_before,
        merchant_distribution_events: sim.merchant_distribution_events(),
        runs,
    };
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        write_summary_csv(&report, &std::fs::File::create(dir.join("summary.csv"))?)?;
    }
    Ok(report)
}

fn kind_tag(kind: AttackKind) -> u64 {
    match kind {
        AttackKind::Average => 0,
        AttackKind::Min => 1,
        AttackKind::Max => 2,
    }
}

pub fn write_summary_csv<W: std::io::Write>(report: &ExperimentReport, w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let io_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
    wtr.write_record([
        "attack",
        "run",
        "coalition",
        "tie_seed",
        "exact_missed",
        "false_negatives",
        "false_positives",
        "colluder_min",
        "colluder_max",
        "innocent_min",
        "innocent_max",
    ])
    .map_err(io_err)?;
    for r in &report.runs {
        let coalition = r
            .coalition
            .iter()
            .map(|b| b.to_string())
            .collect::<Vec<_>>()
            .join(" ");
        wtr.write_record([
            r.kind.name().to_string(),
            r.run_index.to_string(),
            coalition,
            r.tie_seed.to_string(),
            (r.exact_lookup_missed as u8).to_string(),
            r.false_negatives.to_string(),
            r.false_positives.to_string(),
            format!("{:.12}", r.colluder_min),
            format!("{:.12}", r.colluder_max),
            format!("{:.12}", r.innocent_min),
            format!("{:.12}", r.innocent_max),
        ])
        .map_err(io_err)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_population_csv<W: std::io::Write>(sim: &Simulation, w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let io_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
    wtr.write_record(["index", "pseudonym", "generation", "parents"]).map_err(io_err)?;
    for b in &sim.buyers {
        let parents =
            b.parents.iter().map(|p| p.to_string()).collect::<Vec<_>>().join(" ");
        wtr.write_record([
            b.index.to_string(),
            b.pseudonym.clone(),
            b.generation.to_string(),
            parents,
        ])
        .map_err(io_err)?;
    }
    wtr.flush()?;
    Ok(())
}
