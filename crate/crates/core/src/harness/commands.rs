//! The work behind each CLI subcommand. Every command resolves a
//! [`RunConfig`], writes its artifacts into `run.output_dir` and returns a
//! one-line summary.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;

use super::campaign::{search_campaign, write_json, CampaignSpec, SearchMethod};
use super::config::{AnyModel, RunConfig, Setup};
use super::io::{fmt_f64, write_rows};
use super::selftest::run_selftest;
use crate::bayes::{diagnostics, kde_fit_swarm, nuts_sample, MopPosterior};
use crate::error::{Error, Result};
use crate::ifad::{run_ifad, Problem};
use crate::mif2::{run_if2, ParameterSwarm};
use crate::mop::{mop_score, replicate_seeds, run_mop, score_sweep, MopConfig};
use crate::oracle::kalman_score_fd;
use crate::pomp::{simulate, Model, Theta};
use crate::with_model;

fn output_dir(config: &RunConfig) -> Result<&Path> {
    let dir = config.run.output_dir.as_path();
    std::fs::create_dir_all(dir)?;
    Ok(dir)
}

fn named(names: &[String], values: &[f64]) -> BTreeMap<String, f64> {
    names.iter().cloned().zip(values.iter().copied()).collect()
}

fn mop_config(config: &RunConfig) -> MopConfig {
    config.mop.with_seed(config.run.seed)
}

fn starting_swarm(config: &RunConfig, theta: &Theta, particles: usize) -> Result<ParameterSwarm> {
    match &config.run.swarm {
        Some(path) => {
            let swarm = ParameterSwarm::read_csv(path)?;
            if swarm.names != theta.space().names() {
                return Err(Error::usage(format!(
                    "swarm columns {:?} do not match the model parameters {:?}",
                    swarm.names,
                    theta.space().names()
                )));
            }
            Ok(swarm)
        }
        None => Ok(ParameterSwarm::replicate(theta, particles)),
    }
}

#[derive(Serialize)]
struct FilterSummary<'a> {
    model: &'a str,
    loglik: f64,
    particles: usize,
    alpha: f64,
    seed: u64,
}

/// MOP-alpha filter at the configured parameters; writes `filter.csv` and
/// `filter.json`.
pub fn filter(config: &RunConfig) -> Result<String> {
    let setup = Setup::resolve(config)?;
    let dir = output_dir(config)?;
    let cfg = mop_config(config);
    let out =
        with_model!(&setup.model, m => run_mop(m, &setup.data, &setup.theta, &setup.theta, &cfg)?);
    let rows = setup
        .data
        .times
        .iter()
        .zip(&setup.data.obs)
        .zip(&out.cond_logliks)
        .enumerate()
        .map(|(i, ((t, y), c))| vec![(i + 1).to_string(), fmt_f64(*t), fmt_f64(*y), fmt_f64(*c)]);
    write_rows(
        &dir.join("filter.csv"),
        &["n", "time", "obs", "cond_loglik"],
        rows,
    )?;
    let model = config.model.id.as_str();
    write_json(
        &dir.join("filter.json"),
        &FilterSummary {
            model,
            loglik: out.loglik,
            particles: cfg.particles,
            alpha: cfg.alpha,
            seed: cfg.seed,
        },
    )?;
    Ok(format!(
        "filter: {model}, {} observations, J = {}, alpha = {}: loglik = {:.4}",
        setup.data.len(),
        cfg.particles,
        cfg.alpha,
        out.loglik
    ))
}

#[derive(Serialize)]
struct ScoreSummary {
    loglik: f64,
    score: BTreeMap<String, f64>,
}

/// Log-likelihood and score on the unconstrained scale; writes `score.csv`
/// and `score.json`.
pub fn score(config: &RunConfig) -> Result<String> {
    let setup = Setup::resolve(config)?;
    let dir = output_dir(config)?;
    let out = with_model!(&setup.model, m => mop_score(m, &setup.data, &setup.theta, &mop_config(config))?);
    let s = out.score.unwrap_or_default();
    let names = setup.theta.space().names();
    let rows = names
        .iter()
        .zip(setup.theta.natural())
        .zip(&s)
        .map(|((n, v), g)| vec![n.clone(), fmt_f64(*v), fmt_f64(*g)]);
    write_rows(&dir.join("score.csv"), &["coord", "value", "score"], rows)?;
    write_json(
        &dir.join("score.json"),
        &ScoreSummary {
            loglik: out.loglik,
            score: named(names, &s),
        },
    )?;
    let norm = s.iter().map(|x| x * x).sum::<f64>().sqrt();
    Ok(format!(
        "score: loglik = {:.4}, |score| = {norm:.4}",
        out.loglik
    ))
}

/// Bias, variance and MSE of the score over replicate seeds for each
/// discount, against the exact score; writes `biasvar.csv`.
pub fn biasvar(config: &RunConfig) -> Result<String> {
    let setup = Setup::resolve(config)?;
    let AnyModel::LgSsm(model) = &setup.model else {
        return Err(Error::usage(
            "biasvar needs an exact reference score, which only lgssm provides",
        ));
    };
    let dir = output_dir(config)?;
    let reference = kalman_score_fd(model, &setup.data, &setup.theta, 1e-5)?;
    let seeds = replicate_seeds(config.run.seed, config.run.replicates);
    let rows = score_sweep(
        model,
        &setup.data,
        &setup.theta,
        &config.run.alphas,
        &config.mop,
        &seeds,
        &reference,
    )?;
    write_rows(
        &dir.join("biasvar.csv"),
        &["alpha", "coord", "bias", "variance", "mse"],
        rows.iter().map(|r| {
            vec![
                fmt_f64(r.alpha),
                r.coord.clone(),
                fmt_f64(r.bias),
                fmt_f64(r.variance),
                fmt_f64(r.mse),
            ]
        }),
    )?;
    Ok(format!(
        "biasvar: {} alphas x {} replicates x {} coordinates written",
        config.run.alphas.len(),
        seeds.len(),
        setup.theta.len()
    ))
}

#[derive(Serialize)]
struct If2Summary {
    loglik: f64,
    theta: BTreeMap<String, f64>,
}

/// IF2 passes from the checkpoint swarm or from copies of the configured
/// parameters; writes `swarm.csv`, `if2.csv` and `if2.json`.
pub fn if2(config: &RunConfig) -> Result<String> {
    let setup = Setup::resolve(config)?;
    let dir = output_dir(config)?;
    let swarm0 = starting_swarm(config, &setup.theta, config.mop.particles)?;
    let out = with_model!(&setup.model, m => run_if2(
        m,
        &setup.data,
        &swarm0,
        &setup.schedule,
        config.run.iterations,
        config.run.seed,
    )?);
    out.swarm.write_csv(dir.join("swarm.csv"))?;
    write_rows(
        &dir.join("if2.csv"),
        &["iteration", "loglik"],
        out.logliks
            .iter()
            .enumerate()
            .map(|(m, ll)| vec![m.to_string(), fmt_f64(*ll)]),
    )?;
    let last = out.logliks.last().copied().unwrap_or(f64::NAN);
    write_json(
        &dir.join("if2.json"),
        &If2Summary {
            loglik: last,
            theta: named(setup.theta.space().names(), out.theta_hat.natural()),
        },
    )?;
    Ok(format!(
        "if2: {} passes, last pass loglik = {last:.4}, swarm of {} written",
        config.run.iterations,
        out.swarm.len()
    ))
}

#[derive(Serialize)]
struct IfadSummary {
    loglik: f64,
    theta: BTreeMap<String, f64>,
    status: crate::ifad::Status,
}

/// With a checkpoint swarm, one IFAD run from it (`trace.csv`, `swarm.csv`,
/// `ifad.json`); otherwise a paired IF2/IFAD campaign over `run.starts`
/// uniform starts in the box (`ranked.csv`, `paired.csv`, `campaign.json`,
/// `starts/`). Final estimates are compared by a bootstrap filter with
/// `ifad.eval_particles` particles at `ifad.eval_seed`.
pub fn ifad(config: &RunConfig) -> Result<String> {
    let setup = Setup::resolve(config)?;
    let dir = output_dir(config)?;
    let ic = &config.ifad;
    let eval_cfg = MopConfig::new(1.0, ic.eval_particles, ic.eval_seed);
    with_model!(&setup.model, m => {
        let evaluate = |t: &Theta| -> Result<f64> {
            Ok(crate::mop::run_bootstrap(m, &setup.data, t, &eval_cfg)?.loglik)
        };
        match &config.run.swarm {
            Some(_) => {
                let swarm0 = starting_swarm(config, &setup.theta, ic.particles)?;
                let problem = Problem::new(m, &setup.data, setup.theta.clone(), ic.alpha, ic.particles)
                    .with_free(setup.free.clone());
                let out = run_ifad(&problem, &swarm0, ic, &setup.schedule, config.run.seed, Some(&evaluate))?;
                out.trace.write_csv(dir.join("trace.csv"))?;
                out.swarm.write_csv(dir.join("swarm.csv"))?;
                write_json(
                    &dir.join("ifad.json"),
                    &IfadSummary {
                        loglik: out.loglik,
                        theta: named(setup.theta.space().names(), out.theta_hat.natural()),
                        status: out.status,
                    },
                )?;
                Ok(format!("ifad: loglik = {:.4} ({:?})", out.loglik, out.status))
            }
            None => {
                let spec = CampaignSpec {
                    starts: config.run.starts,
                    bounds: setup.bounds.clone(),
                    free: setup.free.clone(),
                    schedule: setup.schedule.clone(),
                    ifad: ic.clone(),
                    seed: config.run.seed,
                };
                let campaign = search_campaign(m, &setup.data, &setup.theta, &spec, &evaluate)?;
                campaign.write(dir)?;
                let summary = campaign.summary();
                let paired = campaign.paired_summary();
                let best_ifad = campaign.best(SearchMethod::Ifad).map_or(f64::NEG_INFINITY, |r| r.loglik);
                Ok(format!(
                    "ifad campaign: {} starts, best loglik = {:.4} (ifad {:.4}), ifad >= if2 in {}/{}, {} failed",
                    spec.starts, summary.best_loglik, best_ifad, paired.ifad_not_worse, paired.pairs, summary.n_failed
                ))
            }
        }
    })
}

/// NUTS on the free coordinates with the MOP-alpha posterior and, when a
/// checkpoint swarm is given, its KDE as prior; writes `draws.csv` and
/// `diagnostics.json`.
pub fn nuts(config: &RunConfig) -> Result<String> {
    let setup = Setup::resolve(config)?;
    let dir = output_dir(config)?;
    let coords: Vec<usize> = (0..setup.free.len()).filter(|&i| setup.free[i]).collect();
    let prior = match &config.run.swarm {
        Some(_) => Some(kde_fit_swarm(
            &starting_swarm(config, &setup.theta, 1)?,
            &coords,
        )?),
        None => None,
    };
    let names: Vec<String> = coords
        .iter()
        .map(|&c| setup.theta.space().names()[c].clone())
        .collect();
    let (set, natural) = with_model!(&setup.model, m => {
        let target = MopPosterior {
            model: m,
            data: &setup.data,
            base: setup.theta.clone(),
            coords: coords.clone(),
            prior,
            mop: config.mop.clone(),
        };
        let start = target.position(&setup.theta);
        let set = nuts_sample(&target, &[start], &config.nuts, config.run.seed)?;
        let natural: Vec<Vec<Vec<f64>>> = set
            .draws
            .iter()
            .map(|chain| {
                chain
                    .iter()
                    .map(|x| {
                        let t = target.theta_at(x)?;
                        Ok(coords.iter().map(|&c| t.natural()[c]).collect())
                    })
                    .collect::<Result<_>>()
            })
            .collect::<Result<_>>()?;
        (set, natural)
    });
    let mut headers = vec!["chain", "iteration"];
    headers.extend(names.iter().map(String::as_str));
    let rows = natural.iter().enumerate().flat_map(|(c, chain)| {
        chain.iter().enumerate().map(move |(i, x)| {
            let mut row = vec![c.to_string(), i.to_string()];
            row.extend(x.iter().map(|&v| fmt_f64(v)));
            row
        })
    });
    write_rows(&dir.join("draws.csv"), &headers, rows)?;
    let diag = diagnostics(&set)?;
    write_json(&dir.join("diagnostics.json"), &diag)?;
    let worst = diag.rhat.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(format!(
        "nuts: {} chains x {} draws, max rhat = {worst:.3}, {} divergences",
        set.draws.len(),
        config.nuts.iterations,
        diag.divergences
    ))
}

/// Simulates the configured model; writes `data.csv` (`time,obs`) and
/// `states.csv`.
pub fn simulate_data(config: &RunConfig) -> Result<String> {
    let mut sim_config = config.clone();
    sim_config.data = None;
    let setup = Setup::resolve(&sim_config)?;
    let dir = output_dir(config)?;
    let sim_block = sim_config.simulate.clone().unwrap_or_default();
    let times = setup.data.times.clone();
    let (sim, state_names) = with_model!(&setup.model, m => (
        simulate(m, &setup.theta, &times, sim_block.seed)?,
        m.state_names().to_vec(),
    ));
    sim.data.write_csv(dir.join("data.csv"))?;
    let mut headers = vec!["time"];
    headers.extend(state_names.iter().copied());
    let t0 = with_model!(&setup.model, m => m.t0());
    let rows = std::iter::once(t0)
        .chain(times.iter().copied())
        .zip(&sim.states)
        .map(|(t, x)| {
            let mut row = vec![fmt_f64(t)];
            row.extend(x.iter().map(|&v| fmt_f64(v)));
            row
        });
    write_rows(&dir.join("states.csv"), &headers, rows)?;
    Ok(format!("simulate: {} observations written", sim.data.len()))
}

/// The score identity suite over five seeds.
pub fn selftest(config: &RunConfig) -> Result<String> {
    let seeds: Vec<u64> = (0..5).map(|k| config.run.seed.wrapping_add(k)).collect();
    let report = run_selftest(&seeds)?;
    if !report.passed() {
        let bad: Vec<String> = report
            .checks
            .iter()
            .filter(|c| c.max_abs_error > report.tolerance)
            .map(|c| format!("{} (seed {}): {:e}", c.name, c.seed, c.max_abs_error))
            .collect();
        return Err(Error::Numerical(format!(
            "selftest failed: {}",
            bad.join("; ")
        )));
    }
    Ok(format!(
        "selftest: {} identity checks passed, worst error {:e} (tolerance {:e})",
        report.checks.len(),
        report.worst(),
        report.tolerance
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(dir: &Path, extra: &str) -> RunConfig {
        let text = format!(
            "[simulate]\nn = 15\n[mop]\nparticles = 40\n[run]\nseed = 3\nreplicates = 3\niterations = 2\noutput_dir = {:?}\n{extra}",
            dir.display().to_string()
        );
        RunConfig::from_toml(&text).unwrap()
    }

    fn tmp(name: &str) -> std::path::PathBuf {
        std::env::temp_dir().join(format!("ifad-cmd-{name}-{}", std::process::id()))
    }

    #[test]
    fn commands_write_artifacts() {
        let dir = tmp("all");
        let cfg = config(&dir, "");
        filter(&cfg).unwrap();
        score(&cfg).unwrap();
        biasvar(&cfg).unwrap();
        if2(&cfg).unwrap();
        simulate_data(&cfg).unwrap();
        for f in [
            "filter.csv",
            "filter.json",
            "score.csv",
            "biasvar.csv",
            "swarm.csv",
            "if2.csv",
            "data.csv",
            "states.csv",
        ] {
            assert!(dir.join(f).exists(), "{f}");
        }
        let text = std::fs::read_to_string(dir.join("biasvar.csv")).unwrap();
        assert!(text.starts_with("alpha,coord,bias,variance,mse\n"));
        assert_eq!(text.lines().count(), 1 + 4 * 3);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn ifad_from_checkpoint_and_nuts() {
        let dir = tmp("ifad");
        let cfg = config(&dir, "");
        if2(&cfg).unwrap();
        let mut cfg = config(
            &dir,
            "free = [\"a\", \"tau\"]\n[ifad]\nwarm_start_iterations = 1\nmax_iterations = 2\nparticles = 40\neval_particles = 60\nlearning_rate = 0.01\n[nuts]\nchains = 2\niterations = 10\nwarmup = 10\nmax_depth = 4\n",
        );
        cfg.run.swarm = Some(dir.join("swarm.csv"));
        ifad(&cfg).unwrap();
        nuts(&cfg).unwrap();
        let draws = std::fs::read_to_string(dir.join("draws.csv")).unwrap();
        assert!(draws.starts_with("chain,iteration,a,tau\n"));
        assert_eq!(draws.lines().count(), 21);
        assert!(dir.join("diagnostics.json").exists());
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn biasvar_rejects_models_without_oracle() {
        let dir = tmp("chol");
        let cfg = config(&dir, "[model]\nid = \"cholera\"\n");
        assert!(biasvar(&cfg).unwrap_err().is_usage());
    }
}
