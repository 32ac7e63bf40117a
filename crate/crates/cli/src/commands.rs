use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use lanechange_core::calibration::{self, synth};
use lanechange_core::classifier::{self, ClassifierWeights};
use lanechange_core::driver::{load_distributions, save_distributions, ModelKind, ScenarioClass};
use lanechange_core::planner::{PredictorKind, TrafficModel};
use lanechange_core::sim::{self, io::save_with, replay, script, Agent, EvalMetrics, Outcome};
use log::{info, warn};

use crate::config::{load_config, require_file, Manifest, RunConfig};
use crate::{Command, Generate, ModelChoice, PredictorChoice, UsageError};

pub fn run(command: Command, seed: Option<u64>, config: Option<&Path>, out: &Path) -> Result<()> {
    if let Command::Rerun { manifest } = command {
        let m = Manifest::load(&manifest)?;
        if matches!(m.command, Command::Rerun { .. }) {
            return Err(UsageError(format!("{}: manifest records another rerun", manifest.display())).into());
        }
        m.config.validate()?;
        return execute(m.command, m.seed, m.config, out);
    }
    let cfg = match config {
        Some(path) => load_config(path)?,
        None => RunConfig::default(),
    };
    let seed = seed.or(cfg.seed).unwrap_or(0);
    execute(command, seed, cfg, out)
}

fn execute(mut command: Command, seed: u64, mut cfg: RunConfig, out: &Path) -> Result<()> {
    for path in inputs(&mut command) {
        require_file(path)?;
        *path = std::path::absolute(&*path)?;
    }
    cfg.seed = Some(seed);
    cfg.fit.seed = seed;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    Manifest::new(command.clone(), seed, cfg.clone()).save(out)?;

    match command {
        Command::Calibrate { trials, model } => cmd_calibrate(&trials, model, &cfg, out),
        Command::TrainClassifier { data } => cmd_train(&data, &cfg, out),
        Command::Simulate {
            n,
            predictor,
            weights,
            distributions,
        } => {
            let agents = agents(predictor, &cfg, weights.as_deref(), distributions.as_deref())?;
            cmd_simulate(n, &agents, seed, &cfg, out)
        }
        Command::Evaluate {
            replay,
            predictor,
            weights,
            distributions,
        } => {
            let agents = agents(predictor, &cfg, weights.as_deref(), distributions.as_deref())?;
            cmd_evaluate(&replay, &agents, seed, &cfg, out)
        }
        Command::Generate { what } => cmd_generate(what, seed, &cfg, out),
        Command::Rerun { .. } => unreachable!("handled in run"),
    }
}

fn inputs(command: &mut Command) -> Vec<&mut PathBuf> {
    match command {
        Command::Calibrate { trials, .. } => vec![trials],
        Command::TrainClassifier { data } => vec![data],
        Command::Simulate {
            weights, distributions, ..
        } => weights.iter_mut().chain(distributions.iter_mut()).collect(),
        Command::Evaluate {
            replay,
            weights,
            distributions,
            ..
        } => std::iter::once(replay)
            .chain(weights.iter_mut())
            .chain(distributions.iter_mut())
            .collect(),
        Command::Generate { .. } | Command::Rerun { .. } => Vec::new(),
    }
}

fn cmd_calibrate(path: &Path, model: ModelChoice, cfg: &RunConfig, out: &Path) -> Result<()> {
    let trials = calibration::load_trials(path)?;
    if trials.is_empty() {
        bail!("{}: no trials", path.display());
    }
    let models = match model {
        ModelChoice::Idm => vec![ModelKind::Idm],
        ModelChoice::Vdm => vec![ModelKind::Vdm],
        ModelChoice::Both => vec![ModelKind::Idm, ModelKind::Vdm],
    };
    let mut problems = 0;
    let mut reports = Vec::new();
    for m in models {
        let report = calibration::calibrate(&trials, m, &cfg.fit);
        for (id, e) in &report.failures {
            warn!("{m}: fit of trial {id} failed: {e}");
            problems += 1;
        }
        for class in [ScenarioClass::Successful, ScenarioClass::Unsuccessful] {
            match report.classes.iter().find(|c| c.scenario == class) {
                None => {
                    warn!("{m} {class}: no trials of this class");
                    problems += 1;
                }
                Some(c) => {
                    if let Err(e) = &c.distribution {
                        warn!("{m} {class}: cannot fit a Gaussian: {e}");
                        problems += 1;
                    }
                }
            }
        }
        save_with(&out.join(format!("fits_{m}.csv")), |f| calibration::write_fit_report(f, &report))?;
        reports.push(report);
    }
    let dists: Vec<_> = reports.iter().flat_map(|r| r.distributions()).collect();
    save_distributions(&out.join("distributions.toml"), &dists)?;
    save_with(&out.join("params.csv"), |f| calibration::write_param_table(f, &reports))?;
    save_with(&out.join("mse.csv"), |f| calibration::write_mse_table(f, &reports))?;
    println!("fitted {} trials, wrote {} distributions to {}", trials.len(), dists.len(), out.display());
    if problems > 0 {
        bail!("calibration incomplete ({problems} problems, see warnings)");
    }
    Ok(())
}

fn cmd_train(path: &Path, cfg: &RunConfig, out: &Path) -> Result<()> {
    let rows = classifier::load_training(path)?;
    let weights = classifier::train(&rows, &cfg.train)?;
    weights.save(&out.join("yield_weights.toml"))?;
    let positives = rows.iter().filter(|r| r.label).count();
    println!(
        "trained on {} rows ({positives} positive), training accuracy {:.3}",
        rows.len(),
        classifier::accuracy(&weights, &rows)
    );
    Ok(())
}

/// One agent per requested predictor, labeled for file names.
fn agents(
    choice: PredictorChoice,
    cfg: &RunConfig,
    weights: Option<&Path>,
    distributions: Option<&Path>,
) -> Result<Vec<(PredictorKind, Agent)>> {
    let classifier = match weights {
        Some(p) => ClassifierWeights::load(p)?,
        None => ClassifierWeights::pretrained(),
    };
    let kinds = match choice {
        PredictorChoice::Vdm => vec![PredictorKind::Vdm],
        PredictorChoice::IdmFixed => vec![PredictorKind::IdmFixed],
        PredictorChoice::Both => vec![PredictorKind::Vdm, PredictorKind::IdmFixed],
    };
    kinds
        .into_iter()
        .map(|kind| {
            let predictor = match (kind, distributions) {
                (PredictorKind::Vdm, Some(p)) => vdm_from_file(p)?,
                _ => kind.model(),
            };
            Ok((
                kind,
                Agent {
                    planner: cfg.planner.clone(),
                    predictor,
                    classifier: classifier.clone(),
                },
            ))
        })
        .collect()
}

fn vdm_from_file(path: &Path) -> Result<TrafficModel> {
    let dists = load_distributions(path)?;
    let find = |class: ScenarioClass| {
        dists
            .iter()
            .find(|d| d.model == ModelKind::Vdm && d.scenario == class)
            .with_context(|| format!("{}: no vdm {class} distribution", path.display()))
    };
    Ok(TrafficModel::from_distributions(
        find(ScenarioClass::Successful)?,
        find(ScenarioClass::Unsuccessful)?,
    ))
}

fn cmd_simulate(n: usize, agents: &[(PredictorKind, Agent)], seed: u64, cfg: &RunConfig, out: &Path) -> Result<()> {
    if n == 0 {
        return Err(UsageError("simulate needs -n of at least 1".into()).into());
    }
    let scenarios = sim::generate_scenarios(n, &cfg.scenario, seed)?;
    let mut rows: Vec<(String, EvalMetrics)> = Vec::new();
    for (kind, agent) in agents {
        info!("running {n} episodes with the {kind} predictor");
        let traces = sim::run_batch(&scenarios, agent, seed);
        let dir = out.join("traces").join(kind.to_string());
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        for t in &traces {
            sim::io::save_trace(&dir.join(format!("episode_{:04}.csv", t.scenario)), t)?;
        }
        save_with(&out.join(format!("summary_{kind}.csv")), |f| sim::io::write_summary(f, &traces))?;
        let aborted = traces.iter().filter(|t| matches!(t.outcome, Outcome::Aborted(_))).count();
        if aborted > 0 {
            warn!("{kind}: {aborted} episodes aborted, see summary_{kind}.csv");
        }
        let m = sim::aggregate(&traces)?;
        println!(
            "{kind}: {}/{} successful ({:.2})",
            m.success,
            m.total,
            m.success_rate()
        );
        rows.push((kind.to_string(), m));
    }
    write_metrics(out, &rows)
}

fn cmd_evaluate(path: &Path, agents: &[(PredictorKind, Agent)], seed: u64, cfg: &RunConfig, out: &Path) -> Result<()> {
    let trials = replay::load_replay(path)?;
    let mut rows: Vec<(String, EvalMetrics)> = Vec::new();
    for (kind, agent) in agents {
        let (m, results) = replay::replay_evaluate(&trials, agent, &cfg.scenario.geometry, seed)?;
        save_with(&out.join(format!("replay_{kind}.csv")), |f| replay::write_replay_results(f, &results))?;
        println!(
            "{kind}: {}/{} collision-free, errors a {:.3} v {:.3} x {:.3}",
            m.success, m.total, m.a_error, m.v_error, m.x_error
        );
        rows.push((kind.to_string(), m));
    }
    write_metrics(out, &rows)
}

fn write_metrics(out: &Path, rows: &[(String, EvalMetrics)]) -> Result<()> {
    let rows: Vec<(&str, EvalMetrics)> = rows.iter().map(|(l, m)| (l.as_str(), *m)).collect();
    save_with(&out.join("metrics.csv"), |f| sim::io::write_metrics(f, &rows))?;
    Ok(())
}

fn cmd_generate(what: Generate, seed: u64, cfg: &RunConfig, out: &Path) -> Result<()> {
    match what {
        Generate::Trials {
            model,
            successful,
            unsuccessful,
        } => {
            let model = match model {
                ModelChoice::Idm => ModelKind::Idm,
                ModelChoice::Vdm => ModelKind::Vdm,
                ModelChoice::Both => {
                    return Err(UsageError("generate trials needs --model idm or --model vdm".into()).into())
                }
            };
            let cases = synth::generate_corpus(seed, model, successful, unsuccessful, &cfg.synth)?;
            let trials: Vec<_> = cases.iter().map(|c| c.trial.clone()).collect();
            let held_out: Vec<_> = cases.into_iter().map(|c| c.held_out).collect();
            calibration::save_trials(&out.join("trials.csv"), &trials)?;
            calibration::save_trials(&out.join("heldout.csv"), &held_out)?;
            println!("wrote {} {model} trials", trials.len());
        }
        Generate::Classifier { episodes } => {
            let rows = script::classifier_corpus(episodes, &cfg.scenario, seed)?;
            classifier::save_training(&out.join("classifier_train.csv"), &rows)?;
            println!("wrote {} labeled rows", rows.len());
        }
        Generate::Replay { n } => {
            let trials = script::synthetic_replay_trials(n, &cfg.scenario, seed)?;
            replay::save_replay(&out.join("replay.csv"), &trials)?;
            println!("wrote {} replay trials", trials.len());
        }
    }
    Ok(())
}
