//! Monte Carlo sweep runner.
//!
//! Every `(snr, k, trial)` cell draws one channel, schedule and noise
//! realization from its own seed and runs all requested estimators on it,
//! so estimators are compared on identical data. Cells run in parallel and
//! the output is sorted afterwards, so the record list does not depend on
//! the thread count.

use std::time::Instant;

use faer::Mat;
use rayon::prelude::*;

use super::metrics::{nmse, nmse_multi, BeamDesign};
use super::{EstimatorId, ExperimentSpec, Metric, ResultRecord, ScenarioKind, SE_OPTIMAL, SE_RANDOM};
use crate::baselines::{lr_rankone, ls_full};
use crate::error::{Error, Result};
use crate::mf::estimate_single_user;
use crate::multiuser::estimate_multi_user;
use crate::random::{mix_seed, rng_for, Stream};
use crate::scenario::{DownlinkScenario, UplinkScenario};
use crate::signal::noise_var_from_snr_db;
use crate::C64;

/// Seed of one cell:
/// `mix_seed(master_seed, [scenario tag, snr index, k index, trial])`.
///
/// The estimator is deliberately not part of the seed, so every estimator
/// in a cell sees the same realization.
pub fn trial_seed(master_seed: u64, scenario: ScenarioKind, snr_idx: usize, k_idx: usize, trial: usize) -> u64 {
    mix_seed(master_seed, &[scenario.tag(), snr_idx as u64, k_idx as u64, trial as u64])
}

struct Cell {
    snr_idx: usize,
    k_idx: usize,
    trial: usize,
}

/// Runs the sweep on the current rayon pool.
pub fn run_sweep(spec: &ExperimentSpec) -> Result<Vec<ResultRecord>> {
    spec.validate()?;
    if spec.scenario == ScenarioKind::OverheadTable {
        return Err(Error::InvalidSpec("the overhead table is not a Monte Carlo sweep".into()));
    }
    let mut cells = Vec::new();
    for snr_idx in 0..spec.snr_grid_db.len() {
        for k_idx in 0..spec.k_grid.len() {
            for trial in 0..spec.n_trials {
                cells.push(Cell { snr_idx, k_idx, trial });
            }
        }
    }
    let per_cell: Vec<Vec<(usize, ResultRecord)>> = cells
        .par_iter()
        .map(|c| run_cell(spec, c))
        .collect::<Result<_>>()?;
    let mut keyed: Vec<_> = cells
        .iter()
        .zip(per_cell)
        .flat_map(|(c, rows)| rows.into_iter().map(move |(order, r)| ((order, c.snr_idx, c.k_idx, c.trial), r)))
        .collect();
    keyed.sort_by_key(|(k, _)| *k);
    Ok(keyed.into_iter().map(|(_, r)| r).collect())
}

/// Same as [`run_sweep`] on a dedicated pool of `threads` workers.
pub fn run_sweep_with_threads(spec: &ExperimentSpec, threads: usize) -> Result<Vec<ResultRecord>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    pool.install(|| run_sweep(spec))
}

fn record(spec: &ExperimentSpec, cell: &Cell, seed: u64, estimator: &str, nmse: Metric, se: Metric, ms: f64) -> ResultRecord {
    ResultRecord {
        scenario: spec.scenario.as_str().to_string(),
        estimator: estimator.to_string(),
        snr_db: spec.snr_grid_db[cell.snr_idx],
        k: spec.k_grid[cell.k_idx],
        trial: cell.trial,
        seed,
        nmse,
        se,
        wall_time_ms: if spec.record_timing { ms } else { 0.0 },
    }
}

fn metric<T>(r: Result<T>, f: impl FnOnce(T) -> Result<f64>) -> Result<Metric> {
    match r {
        Ok(v) => Ok(Metric::Value(f(v)?)),
        Err(e) if e.is_infeasible() => Ok(Metric::Infeasible),
        Err(e) => Err(e),
    }
}

fn run_cell(spec: &ExperimentSpec, cell: &Cell) -> Result<Vec<(usize, ResultRecord)>> {
    let seed = trial_seed(spec.master_seed, spec.scenario, cell.snr_idx, cell.k_idx, cell.trial);
    let snr_noise = noise_var_from_snr_db(spec.snr_grid_db[cell.snr_idx]);
    let noise_var = if spec.noiseless { 0.0 } else { snr_noise };
    let mut dims = spec.dims;
    dims.k_pilots = spec.k_grid[cell.k_idx];
    match spec.scenario {
        ScenarioKind::SingleUserDownlink => {
            let sc = DownlinkScenario::sample_with(&dims, 1, &spec.gain_model, spec.schedule_kind, noise_var, seed)?;
            downlink_cell(spec, cell, seed, snr_noise, &sc)
        }
        ScenarioKind::MultiUserUplink => {
            let sc = UplinkScenario::sample_with(&dims, &spec.gain_model, spec.schedule_kind, noise_var, seed)?;
            let psi = spec.inject_true_psi.then_some(sc.channel.psi);
            let mut out = Vec::new();
            for (order, est) in spec.estimators.iter().enumerate() {
                let start = Instant::now();
                let result = estimate_multi_user(&sc.obs, &sc.schedule, &spec.mf_am.search, psi);
                let ms = start.elapsed().as_secs_f64() * 1e3;
                let truth: Vec<Mat<C64>> = sc.cascades.iter().map(|c| c.h_e.clone()).collect();
                let n = metric(result, |e| nmse_multi(&truth, &e.h_q_hats))?;
                out.push((order, record(spec, cell, seed, est.as_str(), n, Metric::Missing, ms)));
            }
            Ok(out)
        }
        ScenarioKind::OverheadTable => unreachable!("rejected in run_sweep"),
    }
}

fn downlink_cell(
    spec: &ExperimentSpec,
    cell: &Cell,
    seed: u64,
    se_noise: f64,
    sc: &DownlinkScenario,
) -> Result<Vec<(usize, ResultRecord)>> {
    let se_of = |h_hat: &Mat<C64>| -> Result<f64> {
        BeamDesign::from_channel(h_hat.as_ref()).spectral_efficiency(sc.h_e.as_ref(), se_noise)
    };
    let mut out = Vec::new();
    for (order, est) in spec.estimators.iter().enumerate() {
        let start = Instant::now();
        let h_hat = match est {
            EstimatorId::MfAm => estimate_single_user(&sc.obs, &sc.schedule, &spec.mf_am).map(|e| e.h_e_hat),
            EstimatorId::MfGd => estimate_single_user(&sc.obs, &sc.schedule, &spec.mf_gd).map(|e| e.h_e_hat),
            EstimatorId::Ls => ls_full(&sc.obs, &sc.schedule),
            EstimatorId::Lr => lr_rankone(&sc.obs, &sc.schedule, &spec.lr).map(|e| e.h_e_hat),
            EstimatorId::MfUl => unreachable!("rejected by validation"),
        };
        let ms = start.elapsed().as_secs_f64() * 1e3;
        let (n, se) = match h_hat {
            Ok(h) => {
                let se = if spec.spectral_efficiency { Metric::Value(se_of(&h)?) } else { Metric::Missing };
                (Metric::Value(nmse(sc.h_e.as_ref(), h.as_ref())?), se)
            }
            Err(e) if e.is_infeasible() => {
                let se = if spec.spectral_efficiency { Metric::Infeasible } else { Metric::Missing };
                (Metric::Infeasible, se)
            }
            Err(e) => return Err(e),
        };
        out.push((order, record(spec, cell, seed, est.as_str(), n, se, ms)));
    }
    if spec.se_benchmarks {
        let base = spec.estimators.len();
        let mut rng = rng_for(seed, Stream::Design);
        let random = BeamDesign::random(sc.h_e.nrows(), sc.h_e.ncols(), &mut rng).spectral_efficiency(sc.h_e.as_ref(), se_noise)?;
        let optimal = se_of(&sc.h_e)?;
        out.push((base, record(spec, cell, seed, SE_RANDOM, Metric::Missing, Metric::Value(random), 0.0)));
        out.push((base + 1, record(spec, cell, seed, SE_OPTIMAL, Metric::Missing, Metric::Value(optimal), 0.0)));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::SystemDims;

    fn small_spec() -> ExperimentSpec {
        ExperimentSpec {
            dims: SystemDims::single_user(4, 6, 24),
            snr_grid_db: vec![0.0, 10.0],
            k_grid: vec![12, 24],
            estimators: vec![EstimatorId::MfAm, EstimatorId::Ls, EstimatorId::Lr],
            n_trials: 3,
            master_seed: 7,
            spectral_efficiency: true,
            se_benchmarks: true,
            ..ExperimentSpec::single_user_default()
        }
    }

    #[test]
    fn seeds_are_distinct_and_stable() {
        let s = ScenarioKind::SingleUserDownlink;
        let a = trial_seed(1, s, 0, 0, 0);
        assert_eq!(a, trial_seed(1, s, 0, 0, 0));
        let others = [
            trial_seed(2, s, 0, 0, 0),
            trial_seed(1, ScenarioKind::MultiUserUplink, 0, 0, 0),
            trial_seed(1, s, 1, 0, 0),
            trial_seed(1, s, 0, 1, 0),
            trial_seed(1, s, 0, 0, 1),
        ];
        assert!(others.iter().all(|o| *o != a));
    }

    #[test]
    fn order_and_infeasibility_markers() {
        let spec = small_spec();
        let rows = run_sweep(&spec).unwrap();
        // 5 row kinds x 2 snr x 2 k x 3 trials.
        assert_eq!(rows.len(), 5 * 2 * 2 * 3);
        let names: Vec<&str> = rows.iter().map(|r| r.estimator.as_str()).collect();
        assert_eq!(names[0], "MF_AM");
        assert_eq!(names[12], "LS");
        assert_eq!(names[59], "OPTIMAL");
        for r in rows.iter().filter(|r| r.estimator == "LS") {
            if r.k < 24 {
                assert_eq!(r.nmse, Metric::Infeasible);
            } else {
                assert!(r.nmse.value().is_some());
            }
        }
        assert_eq!(rows[1].trial, 1);
        assert_eq!(rows[3].k, 24);
        assert_eq!(rows[6].snr_db, 10.0);
        assert!(rows.iter().all(|r| r.wall_time_ms == 0.0));
    }

    #[test]
    fn thread_count_does_not_change_output() {
        let spec = small_spec();
        let a = run_sweep_with_threads(&spec, 1).unwrap();
        let b = run_sweep_with_threads(&spec, 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn se_is_bounded_by_optimal() {
        let rows = run_sweep(&small_spec()).unwrap();
        for opt in rows.iter().filter(|r| r.estimator == SE_OPTIMAL) {
            for r in rows.iter().filter(|r| r.seed == opt.seed && r.estimator != SE_OPTIMAL) {
                if let Some(se) = r.se.value() {
                    assert!(se <= opt.se.value().unwrap() + 1e-9);
                }
            }
        }
    }

    #[test]
    fn noiseless_overdetermined_mf_is_exact() {
        let spec = ExperimentSpec {
            dims: SystemDims::single_user(16, 32, 64),
            snr_grid_db: vec![0.0],
            k_grid: vec![64],
            estimators: vec![EstimatorId::MfAm],
            n_trials: 20,
            noiseless: true,
            ..ExperimentSpec::single_user_default()
        };
        let rows = run_sweep(&spec).unwrap();
        let ok = rows.iter().filter(|r| r.nmse.value().unwrap() <= 1e-8).count();
        assert!(ok >= 19, "{ok}/20");
    }

    #[test]
    fn uplink_sweep_runs() {
        let spec = ExperimentSpec {
            dims: SystemDims { n_bs: 8, m_ris: 6, q_users: 2, t_symbols: 2, k_pilots: 6 },
            k_grid: vec![6, 12],
            snr_grid_db: vec![10.0],
            n_trials: 4,
            ..ExperimentSpec::multi_user_default()
        };
        let rows = run_sweep(&spec).unwrap();
        assert_eq!(rows.len(), 8);
        assert!(rows.iter().all(|r| r.estimator == "MF_UL" && r.se == Metric::Missing));
        assert!(rows.iter().all(|r| r.nmse.value().is_some()));
    }

    #[test]
    fn overhead_scenario_is_not_a_sweep() {
        let spec = ExperimentSpec::for_scenario(ScenarioKind::OverheadTable);
        assert!(matches!(run_sweep(&spec), Err(Error::InvalidSpec(_))));
    }
}
