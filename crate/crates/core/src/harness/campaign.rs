//! Paired multi-start searches: IF2 alone against IFAD from the same starts.

use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::harness::io::{fmt_f64, write_rows};
use crate::ifad::{run_ifad, IfadConfig, OptTrace, Problem};
use crate::mif2::{run_if2, CoolingSchedule, ParameterSwarm};
use crate::pomp::{Dataset, Model, Theta};
use crate::prng::derive_seed;

/// Search settings shared by every start.
#[derive(Debug, Clone)]
pub struct CampaignSpec {
    pub starts: usize,
    /// Natural-scale box the starts are drawn from.
    pub bounds: Vec<(f64, f64)>,
    pub free: Vec<bool>,
    pub schedule: CoolingSchedule,
    pub ifad: IfadConfig,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchMethod {
    If2,
    Ifad,
}

impl SearchMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            SearchMethod::If2 => "if2",
            SearchMethod::Ifad => "ifad",
        }
    }
}

/// Final estimate of one search.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    pub start: usize,
    pub method: SearchMethod,
    /// Re-evaluated log-likelihood, `-inf` for a failed search.
    pub loglik: f64,
    /// Natural scale; empty for a failed search.
    pub theta: Vec<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct Campaign {
    pub names: Vec<String>,
    pub starts: Vec<Vec<f64>>,
    /// In start order, IF2 before IFAD.
    pub results: Vec<SearchResult>,
    pub traces: Vec<Option<OptTrace>>,
    pub wall_time: f64,
}

/// Per-start difference `ifad - if2`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairedSummary {
    pub pairs: usize,
    /// Pairs with IFAD at least as good as IF2.
    pub ifad_not_worse: usize,
    pub fraction_not_worse: f64,
    pub median_improvement: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CampaignSummary {
    pub best_loglik: f64,
    pub best_theta: std::collections::BTreeMap<String, f64>,
    pub n_failed: usize,
    pub wall_time: f64,
}

fn failed(start: usize, method: SearchMethod, e: &Error) -> SearchResult {
    SearchResult {
        start,
        method,
        loglik: f64::NEG_INFINITY,
        theta: Vec::new(),
        error: Some(e.to_string()),
    }
}

fn checked(r: SearchResult) -> SearchResult {
    if r.error.is_none() && !r.loglik.is_finite() {
        let e = Error::Numerical(format!("log-likelihood evaluated to {}", r.loglik));
        return failed(r.start, r.method, &e);
    }
    r
}

/// Draws `spec.starts` points uniformly in the box, then from each runs IF2
/// for `warm + max_iterations` passes and IFAD with the same warm start.
/// Start `k` uses seed `spec.seed ^ k`; every final estimate is scored by
/// `evaluate`. Fixed coordinates take their values from `base`.
pub fn search_campaign<M: Model>(
    model: &M,
    data: &Dataset,
    base: &Theta,
    spec: &CampaignSpec,
    evaluate: &(dyn Fn(&Theta) -> Result<f64> + Sync),
) -> Result<Campaign> {
    let clock = Instant::now();
    let space = base.space().clone();
    if spec.free.len() != space.len() {
        return Err(Error::usage("one free flag per parameter is required"));
    }
    if spec.starts == 0 {
        return Err(Error::usage("a campaign needs at least one start"));
    }
    spec.ifad.validate()?;
    let schedule = spec.schedule.clone().masked(&spec.free);
    let box_draws = ParameterSwarm::uniform_box(&space, &spec.bounds, spec.starts, spec.seed)?;
    let fixed = base.unconstrained();
    let starts: Vec<Vec<f64>> = box_draws
        .rows
        .iter()
        .map(|r| {
            r.iter()
                .zip(&fixed)
                .zip(&spec.free)
                .map(|((&x, &b), &f)| if f { x } else { b })
                .collect()
        })
        .collect();
    let per_start: Vec<(SearchResult, SearchResult, Option<OptTrace>)> = starts
        .par_iter()
        .enumerate()
        .map(|(k, u)| {
            let seed = spec.seed ^ k as u64;
            let start = match Theta::from_unconstrained(space.clone(), u) {
                Ok(t) => t,
                Err(e) => {
                    return (
                        failed(k, SearchMethod::If2, &e),
                        failed(k, SearchMethod::Ifad, &e),
                        None,
                    )
                }
            };
            let swarm0 = ParameterSwarm::replicate(&start, spec.ifad.particles);
            let if2 = run_if2(
                model,
                data,
                &swarm0,
                &schedule,
                spec.ifad.warm_start_iterations + spec.ifad.max_iterations,
                derive_seed(seed, 0),
            )
            .and_then(|out| {
                let ll = evaluate(&out.theta_hat)?;
                Ok(SearchResult {
                    start: k,
                    method: SearchMethod::If2,
                    loglik: ll,
                    theta: out.theta_hat.natural().to_vec(),
                    error: None,
                })
            })
            .unwrap_or_else(|e| failed(k, SearchMethod::If2, &e));
            let problem = Problem::new(model, data, start, spec.ifad.alpha, spec.ifad.particles)
                .with_free(spec.free.clone());
            let (ifad, trace) = match run_ifad(
                &problem,
                &swarm0,
                &spec.ifad,
                &schedule,
                seed,
                Some(evaluate),
            ) {
                Ok(out) => (
                    SearchResult {
                        start: k,
                        method: SearchMethod::Ifad,
                        loglik: out.loglik,
                        theta: out.theta_hat.natural().to_vec(),
                        error: None,
                    },
                    Some(out.trace),
                ),
                Err(e) => (failed(k, SearchMethod::Ifad, &e), None),
            };
            (checked(if2), checked(ifad), trace)
        })
        .collect();
    let mut results = Vec::with_capacity(2 * spec.starts);
    let mut traces = Vec::with_capacity(spec.starts);
    for (a, b, t) in per_start {
        results.push(a);
        results.push(b);
        traces.push(t);
    }
    Ok(Campaign {
        names: space.names().to_vec(),
        starts: starts.iter().map(|u| space.to_natural(u)).collect(),
        results,
        traces,
        wall_time: clock.elapsed().as_secs_f64(),
    })
}

impl Campaign {
    /// Results sorted by decreasing log-likelihood; ties keep start order.
    pub fn ranked(&self) -> Vec<&SearchResult> {
        let mut r: Vec<&SearchResult> = self.results.iter().collect();
        r.sort_by(|a, b| b.loglik.total_cmp(&a.loglik));
        r
    }

    pub fn n_failed(&self) -> usize {
        self.results.iter().filter(|r| r.error.is_some()).count()
    }

    fn of(&self, method: SearchMethod) -> impl Iterator<Item = &SearchResult> {
        self.results.iter().filter(move |r| r.method == method)
    }

    pub fn best(&self, method: SearchMethod) -> Option<&SearchResult> {
        self.of(method)
            .filter(|r| r.error.is_none())
            .max_by(|a, b| a.loglik.total_cmp(&b.loglik).then(b.start.cmp(&a.start)))
    }

    /// `(start, if2, ifad)` log-likelihoods in start order.
    pub fn pairs(&self) -> Vec<(usize, f64, f64)> {
        self.of(SearchMethod::If2)
            .zip(self.of(SearchMethod::Ifad))
            .map(|(a, b)| (a.start, a.loglik, b.loglik))
            .collect()
    }

    /// Compares every start where at least one search succeeded; a failed
    /// search loses its pair.
    pub fn paired_summary(&self) -> PairedSummary {
        let mut diffs: Vec<f64> = self
            .pairs()
            .into_iter()
            .filter(|(_, a, b)| a.is_finite() || b.is_finite())
            .map(|(_, a, b)| b - a)
            .collect();
        let pairs = diffs.len();
        let not_worse = diffs.iter().filter(|&&d| d >= 0.0).count();
        diffs.sort_by(f64::total_cmp);
        let median = match pairs {
            0 => f64::NAN,
            n if n % 2 == 1 => diffs[n / 2],
            n => 0.5 * (diffs[n / 2 - 1] + diffs[n / 2]),
        };
        PairedSummary {
            pairs,
            ifad_not_worse: not_worse,
            fraction_not_worse: if pairs == 0 {
                f64::NAN
            } else {
                not_worse as f64 / pairs as f64
            },
            median_improvement: median,
        }
    }

    pub fn summary(&self) -> CampaignSummary {
        let best = self
            .results
            .iter()
            .filter(|r| r.error.is_none())
            .max_by(|a, b| a.loglik.total_cmp(&b.loglik).then(b.start.cmp(&a.start)));
        CampaignSummary {
            best_loglik: best.map_or(f64::NEG_INFINITY, |r| r.loglik),
            best_theta: best
                .map(|r| {
                    self.names
                        .iter()
                        .cloned()
                        .zip(r.theta.iter().copied())
                        .collect()
                })
                .unwrap_or_default(),
            n_failed: self.n_failed(),
            wall_time: self.wall_time,
        }
    }

    /// Writes `starts/start_<k>.csv` traces, then the merged `ranked.csv`,
    /// `paired.csv` and `campaign.json`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let start_dir = dir.join("starts");
        std::fs::create_dir_all(&start_dir)?;
        for (k, trace) in self.traces.iter().enumerate() {
            if let Some(t) = trace {
                t.write_csv(start_dir.join(format!("start_{k}.csv")))?;
            }
        }
        let mut headers = vec!["rank", "start", "method", "loglik"];
        headers.extend(self.names.iter().map(String::as_str));
        let p = self.names.len();
        let rows = self.ranked().into_iter().enumerate().map(|(i, r)| {
            let mut row = vec![
                (i + 1).to_string(),
                r.start.to_string(),
                r.method.as_str().to_string(),
                fmt_f64(r.loglik),
            ];
            if r.theta.len() == p {
                row.extend(r.theta.iter().map(|&x| fmt_f64(x)));
            } else {
                row.extend(std::iter::repeat_n("NaN".to_string(), p));
            }
            row
        });
        write_rows(&dir.join("ranked.csv"), &headers, rows)?;
        let rows = self
            .pairs()
            .into_iter()
            .map(|(k, a, b)| vec![k.to_string(), fmt_f64(a), fmt_f64(b), fmt_f64(b - a)]);
        write_rows(
            &dir.join("paired.csv"),
            &["start", "if2_loglik", "ifad_loglik", "difference"],
            rows,
        )?;
        write_json(&dir.join("campaign.json"), &self.summary())
    }
}

/// Pretty-printed JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Parse(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{kalman_loglik, KalmanParams};
    use crate::pomp::{simulate, LgSsm};

    fn setup() -> (LgSsm, Dataset, Theta) {
        let model = LgSsm::new(0.0, 1.0);
        let theta = model.theta(0.7, 1.0, 0.5).unwrap();
        let times: Vec<f64> = (1..=30).map(f64::from).collect();
        let data = simulate(&model, &theta, &times, 4).unwrap().data;
        (model, data, theta)
    }

    fn spec(starts: usize, stage2: usize) -> CampaignSpec {
        CampaignSpec {
            starts,
            bounds: vec![(0.0, 0.9), (0.5, 2.0), (0.2, 1.0)],
            free: vec![true; 3],
            schedule: CoolingSchedule::shared(3, 0.05, 0.9).unwrap(),
            ifad: IfadConfig {
                warm_start_iterations: 3,
                max_iterations: stage2,
                particles: 50,
                learning_rate: 0.01,
                ..IfadConfig::default()
            },
            seed: 11,
        }
    }

    #[test]
    fn zero_gradient_steps_pair_exactly() {
        let (model, data, theta) = setup();
        let eval = |t: &Theta| kalman_loglik(&data, &KalmanParams::new(&model, t));
        let c = search_campaign(&model, &data, &theta, &spec(1, 0), &eval).unwrap();
        assert_eq!(c.results.len(), 2);
        assert_eq!(c.results[0].loglik, c.results[1].loglik);
        assert_eq!(c.results[0].theta, c.results[1].theta);
    }

    #[test]
    fn ranking_is_sorted_and_contiguous() {
        let (model, data, theta) = setup();
        let eval = |t: &Theta| kalman_loglik(&data, &KalmanParams::new(&model, t));
        let c = search_campaign(&model, &data, &theta, &spec(4, 2), &eval).unwrap();
        let dir = std::env::temp_dir().join(format!("ifad-campaign-{}", std::process::id()));
        c.write(&dir).unwrap();
        let text = std::fs::read_to_string(dir.join("ranked.csv")).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "rank,start,method,loglik,a,sigma,tau");
        let mut prev = f64::INFINITY;
        for (i, line) in lines[1..].iter().enumerate() {
            let f: Vec<&str> = line.split(',').collect();
            assert_eq!(f[0], (i + 1).to_string());
            let ll: f64 = f[3].parse().unwrap();
            assert!(ll <= prev);
            prev = ll;
        }
        assert_eq!(lines.len(), 9);
        let json: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.join("campaign.json")).unwrap())
                .unwrap();
        for key in ["best_loglik", "best_theta", "n_failed", "wall_time"] {
            assert!(json.get(key).is_some(), "{key}");
        }
        assert_eq!(
            json["best_loglik"].as_f64().unwrap(),
            c.summary().best_loglik
        );
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn failed_start_is_recorded() {
        let (model, data, theta) = setup();
        let eval = |t: &Theta| {
            if t.natural()[0] > 0.5 {
                Err(Error::Numerical("rejected".into()))
            } else {
                kalman_loglik(&data, &KalmanParams::new(&model, t))
            }
        };
        let c = search_campaign(&model, &data, &theta, &spec(6, 0), &eval).unwrap();
        assert!(c.n_failed() > 0);
        assert_eq!(c.results.len(), 12);
    }

    #[test]
    fn failed_search_loses_its_pair() {
        let result = |start, method, loglik: f64| SearchResult {
            start,
            method,
            loglik,
            theta: vec![],
            error: (!loglik.is_finite()).then(|| "failed".to_string()),
        };
        let lls = [
            (-10.0, -9.0),
            (-10.0, f64::NEG_INFINITY),
            (f64::NEG_INFINITY, f64::NEG_INFINITY),
            (-8.0, -8.5),
        ];
        let c = Campaign {
            names: vec![],
            starts: vec![vec![]; lls.len()],
            results: lls
                .iter()
                .enumerate()
                .flat_map(|(k, &(a, b))| {
                    [
                        result(k, SearchMethod::If2, a),
                        result(k, SearchMethod::Ifad, b),
                    ]
                })
                .collect(),
            traces: vec![],
            wall_time: 0.0,
        };
        let p = c.paired_summary();
        assert_eq!((p.pairs, p.ifad_not_worse), (3, 1));
        assert_eq!(p.median_improvement, -0.5);
    }
}
