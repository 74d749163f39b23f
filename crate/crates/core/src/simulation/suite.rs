use serde::Serialize;

use super::{run_trial, SimulationError, TrialConfig, TrialSummary};

/// Outcome of one trial in a suite.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteRow {
    /// Position of the trial's configuration in the suite.
    pub config_index: usize,
    pub seed: u64,
    pub result: Result<TrialSummary, SimulationError>,
}

/// Per-configuration aggregate over all its seeds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfigAggregate {
    pub config_index: usize,
    pub trials: usize,
    pub failed: usize,
    pub total_distance_m: f64,
    pub total_interventions: usize,
    pub mean_interventions: f64,
    pub mean_abs_cte_m: f64,
    pub mean_oscillation_amplitude_m: f64,
    /// Pooled distance over pooled interventions; `None` without any.
    pub meters_per_intervention: Option<f64>,
}

fn run_one(index: usize, cfg: &TrialConfig) -> SuiteRow {
    SuiteRow {
        config_index: index,
        seed: cfg.seed,
        result: run_trial(cfg).map(|r| r.summary),
    }
}

/// Runs every trial on the calling thread, in order.
pub fn run_suite_sequential(suite: &[TrialConfig]) -> Vec<SuiteRow> {
    suite.iter().enumerate().map(|(i, c)| run_one(i, c)).collect()
}

/// Runs trials concurrently on the global thread pool. Rows come back in
/// suite order regardless of completion order.
#[cfg(feature = "parallel")]
pub fn run_suite(suite: &[TrialConfig]) -> Vec<SuiteRow> {
    use rayon::prelude::*;
    suite
        .par_iter()
        .enumerate()
        .map(|(i, c)| run_one(i, c))
        .collect()
}

#[cfg(not(feature = "parallel"))]
pub fn run_suite(suite: &[TrialConfig]) -> Vec<SuiteRow> {
    run_suite_sequential(suite)
}

/// As [`run_suite`], bounded to `jobs` worker threads.
pub fn run_suite_with_jobs(suite: &[TrialConfig], jobs: Option<usize>) -> Vec<SuiteRow> {
    match jobs {
        Some(1) => run_suite_sequential(suite),
        #[cfg(feature = "parallel")]
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| run_suite(suite)),
            Err(_) => run_suite(suite),
        },
        _ => run_suite(suite),
    }
}

/// Groups rows by configuration index, in index order.
pub fn aggregate(rows: &[SuiteRow]) -> Vec<ConfigAggregate> {
    let Some(max) = rows.iter().map(|r| r.config_index).max() else {
        return Vec::new();
    };
    (0..=max)
        .filter_map(|idx| {
            let group: Vec<&SuiteRow> = rows.iter().filter(|r| r.config_index == idx).collect();
            if group.is_empty() {
                return None;
            }
            let ok: Vec<&TrialSummary> = group.iter().filter_map(|r| r.result.as_ref().ok()).collect();
            let n = ok.len().max(1) as f64;
            let total_distance: f64 = ok.iter().map(|s| s.distance_m).sum();
            let total_interventions: usize = ok.iter().map(|s| s.interventions).sum();
            Some(ConfigAggregate {
                config_index: idx,
                trials: group.len(),
                failed: group.len() - ok.len(),
                total_distance_m: total_distance,
                total_interventions,
                mean_interventions: total_interventions as f64 / n,
                mean_abs_cte_m: ok.iter().map(|s| s.mean_abs_cte_m).sum::<f64>() / n,
                mean_oscillation_amplitude_m: ok
                    .iter()
                    .map(|s| s.oscillation_amplitude_m)
                    .sum::<f64>()
                    / n,
                meters_per_intervention: (total_interventions > 0)
                    .then(|| total_distance / total_interventions as f64),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulation::FieldModel;

    fn short(seed: u64) -> TrialConfig {
        TrialConfig {
            seed,
            field: FieldModel::straight(8.0, 0.75),
            ..TrialConfig::default()
        }
    }

    #[test]
    fn single_trial_suite_matches_trial() {
        let cfg = short(3);
        let rows = run_suite(std::slice::from_ref(&cfg));
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].result.as_ref().unwrap(), &run_trial(&cfg).unwrap().summary);
    }

    #[test]
    fn identical_configs_give_identical_rows() {
        let rows = run_suite(&[short(4), short(4)]);
        assert_eq!(rows[0].result, rows[1].result);
    }

    #[test]
    fn parallel_and_sequential_agree() {
        let suite: Vec<_> = (1..=4).map(short).collect();
        assert_eq!(run_suite(&suite), run_suite_sequential(&suite));
        assert_eq!(run_suite_with_jobs(&suite, Some(2)), run_suite_sequential(&suite));
    }

    #[test]
    fn failures_do_not_abort_the_suite() {
        let mut bad = short(1);
        bad.speed = 0.0;
        let rows = run_suite(&[short(1), bad, short(2)]);
        assert!(rows[0].result.is_ok());
        assert!(rows[1].result.is_err());
        assert!(rows[2].result.is_ok());
        let agg = aggregate(&rows);
        assert_eq!(agg.len(), 3);
        assert_eq!(agg[1].failed, 1);
    }

    #[test]
    fn aggregate_pools_distance_over_interventions() {
        let s = |d: f64, n: usize| TrialSummary {
            seed: 0,
            distance_m: d,
            duration_s: 1.0,
            interventions: n,
            mean_abs_cte_m: 0.0,
            max_abs_cte_m: 0.0,
            oscillation_amplitude_m: 0.0,
            meters_per_intervention: None,
            completed: true,
        };
        let rows = vec![
            SuiteRow { config_index: 0, seed: 1, result: Ok(s(100.0, 1)) },
            SuiteRow { config_index: 0, seed: 2, result: Ok(s(100.0, 3)) },
            SuiteRow { config_index: 1, seed: 1, result: Ok(s(50.0, 0)) },
        ];
        let agg = aggregate(&rows);
        assert_eq!(agg[0].meters_per_intervention, Some(50.0));
        assert_eq!(agg[0].mean_interventions, 2.0);
        assert_eq!(agg[1].meters_per_intervention, None);
    }
}
