//! Single-flip greedy search over 1-bit configurations, driven by a power
//! measurement callback, and an exhaustive oracle for small arrays.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::array::{ArrayGeometry, PhaseConfig};

/// Largest array [`brute_force_best`] will enumerate.
pub const BRUTE_FORCE_MAX_ELEMENTS: usize = 20;

#[derive(Debug, Error, PartialEq)]
pub enum OptimizeError<E> {
    #[error("measurement failed at probe {probe}: {source}")]
    Measure { probe: usize, source: E },
    #[error("{0} elements exceed the brute-force budget of {BRUTE_FORCE_MAX_ELEMENTS}")]
    Budget(usize),
    #[error("trace is empty")]
    EmptyTrace,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum ElementOrder {
    RowMajor,
    /// Fresh shuffle each pass, drawn from a ChaCha8 stream seeded once per run.
    Random { seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerSettings {
    pub passes: usize,
    /// A flip is kept only if it improves power by strictly more than this.
    pub epsilon_db: f64,
    pub element_order: ElementOrder,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        Self { passes: 3, epsilon_db: 0.0, element_order: ElementOrder::RowMajor }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    /// Probe index; 0 is the baseline measurement of the initial config.
    pub iteration: usize,
    pub power_db: f64,
    pub accepted: bool,
    /// Element flipped by this probe; `None` for the baseline.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub element: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PowerTrace {
    pub entries: Vec<TraceEntry>,
}

impl PowerTrace {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn accepted_powers(&self) -> impl Iterator<Item = f64> + '_ {
        self.entries.iter().filter(|e| e.accepted).map(|e| e.power_db)
    }

    pub fn last_accepted_db(&self) -> Option<f64> {
        self.accepted_powers().last()
    }

    /// Last accepted power minus the first entry's power.
    pub fn improvement_db(&self) -> Result<f64, OptimizeError<std::convert::Infallible>> {
        improvement_db(self)
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["iteration", "power_db", "accepted"]).expect("in-memory write");
        for e in &self.entries {
            w.write_record([e.iteration.to_string(), e.power_db.to_string(), e.accepted.to_string()])
                .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii csv")
    }
}

pub fn improvement_db(trace: &PowerTrace) -> Result<f64, OptimizeError<std::convert::Infallible>> {
    let first = trace.entries.first().ok_or(OptimizeError::EmptyTrace)?.power_db;
    let last = trace.last_accepted_db().unwrap_or(first);
    Ok(last - first)
}

pub fn greedy_optimize<E, M>(
    measure: M,
    init: PhaseConfig,
    settings: &OptimizerSettings,
) -> Result<(PhaseConfig, PowerTrace), OptimizeError<E>>
where
    M: FnMut(&PhaseConfig) -> Result<f64, E>,
{
    greedy_optimize_observed(measure, init, settings, |_| {})
}

/// [`greedy_optimize`] that also hands every trace entry to `observe` as soon
/// as it is recorded.
pub fn greedy_optimize_observed<E, M, O>(
    mut measure: M,
    init: PhaseConfig,
    settings: &OptimizerSettings,
    mut observe: O,
) -> Result<(PhaseConfig, PowerTrace), OptimizeError<E>>
where
    M: FnMut(&PhaseConfig) -> Result<f64, E>,
    O: FnMut(&TraceEntry),
{
    let mut config = init;
    let mut trace = PowerTrace::default();
    let mut probe = 0usize;
    let mut run = |cfg: &PhaseConfig, probe: usize| {
        measure(cfg).map_err(|source| OptimizeError::Measure { probe, source })
    };

    let mut best = run(&config, probe)?;
    let baseline = TraceEntry { iteration: 0, power_db: best, accepted: true, element: None };
    observe(&baseline);
    trace.entries.push(baseline);

    let mut order: Vec<usize> = (0..config.len()).collect();
    let mut rng = match settings.element_order {
        ElementOrder::RowMajor => None,
        ElementOrder::Random { seed } => Some(ChaCha8Rng::seed_from_u64(seed)),
    };

    for _ in 0..settings.passes {
        if let Some(rng) = rng.as_mut() {
            order.shuffle(rng);
        }
        let mut accepted_any = false;
        for &element in &order {
            probe += 1;
            config.flip(element);
            let power = run(&config, probe)?;
            let accepted = power - best > settings.epsilon_db;
            if accepted {
                best = power;
                accepted_any = true;
            } else {
                config.flip(element);
            }
            let entry = TraceEntry { iteration: probe, power_db: power, accepted, element: Some(element) };
            observe(&entry);
            trace.entries.push(entry);
        }
        if !accepted_any {
            break;
        }
    }
    Ok((config, trace))
}

/// Exhaustive argmax over all `2^N` configs. Enumeration runs in ascending
/// row-major bit-string order and only strict improvements replace the
/// incumbent, so ties resolve to the lexicographically smallest string.
pub fn brute_force_best<E, M>(mut measure: M, geom: &ArrayGeometry) -> Result<(PhaseConfig, f64), OptimizeError<E>>
where
    M: FnMut(&PhaseConfig) -> Result<f64, E>,
{
    let n = geom.len();
    if n > BRUTE_FORCE_MAX_ELEMENTS {
        return Err(OptimizeError::Budget(n));
    }
    let mut best: Option<(PhaseConfig, f64)> = None;
    for code in 0u32..(1u32 << n) {
        let bits = (0..n).map(|i| code & (1 << (n - 1 - i)) != 0).collect();
        let config = PhaseConfig::from_bits(geom.rows(), geom.cols(), bits).expect("sized from geometry");
        let power = measure(&config).map_err(|source| OptimizeError::Measure { probe: code as usize, source })?;
        if best.as_ref().is_none_or(|(_, p)| power > *p) {
            best = Some((config, power));
        }
    }
    Ok(best.expect("at least one config"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::convert::Infallible;

    fn table_measure(values: Vec<f64>) -> impl FnMut(&PhaseConfig) -> Result<f64, Infallible> {
        move |c: &PhaseConfig| {
            let idx = c.bits().iter().fold(0usize, |acc, b| acc << 1 | *b as usize);
            Ok(values[idx])
        }
    }

    #[test]
    fn one_element_picks_better_bit() {
        let settings = OptimizerSettings { passes: 5, ..Default::default() };
        let (cfg, trace) = greedy_optimize(table_measure(vec![1.0, 4.0]), PhaseConfig::zeros(1, 1), &settings).unwrap();
        assert_eq!(cfg.bits(), &[true]);
        assert!(trace.len() <= 3);
        let (cfg, trace) = greedy_optimize(table_measure(vec![4.0, 1.0]), PhaseConfig::zeros(1, 1), &settings).unwrap();
        assert_eq!(cfg.bits(), &[false]);
        assert_eq!(trace.len(), 2);
        assert_eq!(trace.entries[1], TraceEntry { iteration: 1, power_db: 1.0, accepted: false, element: Some(0) });
    }

    #[test]
    fn zero_passes_only_baseline() {
        let settings = OptimizerSettings { passes: 0, ..Default::default() };
        let (_, trace) = greedy_optimize(table_measure(vec![2.0, 3.0]), PhaseConfig::zeros(1, 1), &settings).unwrap();
        assert_eq!(trace.entries, vec![TraceEntry { iteration: 0, power_db: 2.0, accepted: true, element: None }]);
    }

    #[test]
    fn epsilon_blocks_small_gains() {
        let settings = OptimizerSettings { passes: 2, epsilon_db: 0.5, ..Default::default() };
        let (cfg, _) = greedy_optimize(table_measure(vec![1.0, 1.4]), PhaseConfig::zeros(1, 1), &settings).unwrap();
        assert_eq!(cfg.bits(), &[false]);
    }

    #[test]
    fn measure_error_carries_probe_index() {
        let mut calls = 0;
        let measure = |_: &PhaseConfig| {
            calls += 1;
            if calls == 3 {
                Err("bus down")
            } else {
                Ok(calls as f64)
            }
        };
        let err = greedy_optimize(measure, PhaseConfig::zeros(1, 4), &OptimizerSettings::default()).unwrap_err();
        assert_eq!(err, OptimizeError::Measure { probe: 2, source: "bus down" });
    }

    #[test]
    fn improvement_examples() {
        let t = PowerTrace {
            entries: vec![
                TraceEntry { iteration: 0, power_db: 24.0, accepted: true, element: None },
                TraceEntry { iteration: 1, power_db: 43.0, accepted: true, element: Some(0) },
            ],
        };
        assert_eq!(improvement_db(&t).unwrap(), 19.0);
        let single = PowerTrace { entries: t.entries[..1].to_vec() };
        assert_eq!(improvement_db(&single).unwrap(), 0.0);
        assert_eq!(improvement_db(&PowerTrace::default()), Err(OptimizeError::EmptyTrace));
    }

    #[test]
    fn random_order_is_seeded() {
        let values: Vec<f64> = (0..16).map(|i| ((i * 7) % 11) as f64).collect();
        let settings = OptimizerSettings { passes: 3, epsilon_db: 0.0, element_order: ElementOrder::Random { seed: 7 } };
        let a = greedy_optimize(table_measure(values.clone()), PhaseConfig::zeros(2, 2), &settings).unwrap();
        let b = greedy_optimize(table_measure(values), PhaseConfig::zeros(2, 2), &settings).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn brute_force_tie_breaks_lexicographically() {
        let g = ArrayGeometry::new(1, 2, 1, 1, 0.041).unwrap();
        let (cfg, p) = brute_force_best(table_measure(vec![0.0, 3.0, 3.0, 1.0]), &g).unwrap();
        assert_eq!(cfg.bits(), &[false, true]);
        assert_eq!(p, 3.0);
        let big = ArrayGeometry::new(3, 7, 1, 1, 0.041).unwrap();
        assert_eq!(
            brute_force_best(table_measure(vec![]), &big).unwrap_err(),
            OptimizeError::<Infallible>::Budget(21)
        );
    }

    #[test]
    fn trace_csv_header() {
        let t = PowerTrace {
            entries: vec![TraceEntry { iteration: 0, power_db: 24.5, accepted: true, element: None }],
        };
        assert_eq!(t.to_csv(), "iteration,power_db,accepted\n0,24.5,true\n");
    }
}
