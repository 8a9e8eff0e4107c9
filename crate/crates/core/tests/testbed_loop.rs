use std::convert::Infallible;

use ris_core::array::{channel_gain, frequency_sweep, mean_delta_db, received_power_db, ArrayGeometry, Direction, PhaseConfig, Placement};
use ris_core::optimizer::{greedy_optimize, ElementOrder, OptimizerSettings};
use ris_core::scenario::{FrequencyGrid, Reference, Scenario};
use ris_core::testbed::{RunStatus, Testbed};

fn converge() -> OptimizerSettings {
    OptimizerSettings { passes: 10, ..Default::default() }
}

#[test]
fn default_closed_loop_gains_at_least_fifteen_db() {
    let mut bed = Testbed::new(Scenario::default()).unwrap();
    let baseline = bed.current_power_db();
    assert!((baseline - 24.0).abs() < 1e-9);
    let mut seen = Vec::new();
    let trace = bed.run_optimization(&converge(), |e| seen.push(*e)).unwrap();
    assert_eq!(seen, trace.entries);
    let gain = trace.improvement_db().unwrap();
    assert!((15.0..=25.0).contains(&gain), "improvement {gain}");
    assert!((bed.current_power_db() - baseline - gain).abs() < 1e-9);
    assert_eq!(bed.final_config(), Some(bed.current_config()));

    let (best, off) = (bed.current_config().clone(), bed.scenario().geometry.empty_config());
    let sweep = bed.run_sweep(&best, &off).unwrap();
    assert_eq!(sweep.rows.len(), 141);
    let band_min = sweep
        .rows
        .iter()
        .filter(|r| (3.7e9..=3.8e9).contains(&r.freq_hz))
        .map(|r| r.delta_db())
        .fold(f64::INFINITY, f64::min);
    assert!(band_min >= 15.0, "band minimum {band_min}");
    let low = mean_delta_db(&sweep.rows, 3.3e9, 3.5e9).unwrap();
    let band = mean_delta_db(&sweep.rows, 3.7e9, 3.8e9).unwrap();
    assert!(low < band, "low {low} band {band}");
}

#[test]
fn control_plane_is_transparent() {
    let scenario = Scenario {
        geometry: ArrayGeometry::new(2, 2, 1, 1, 0.041).unwrap(),
        placement: Placement::new([0.0, 0.0, 1.0], [0.25, -0.1, 1.6]).unwrap(),
        ..Scenario::default()
    };
    let mut bed = Testbed::new(scenario.clone()).unwrap();
    let settings = OptimizerSettings { passes: 5, element_order: ElementOrder::Random { seed: 3 }, ..Default::default() };
    let via_frames = bed.run_optimization(&settings, |_| {}).unwrap();

    let model = scenario.cell_model().unwrap();
    let g = scenario.geometry;
    let reference = channel_gain(&g, &g.empty_config(), &model, &scenario.placement, 3.75e9).unwrap().norm();
    let direct = |c: &PhaseConfig| {
        let h = channel_gain(&g, c, &model, &scenario.placement, scenario.f_probe_hz).unwrap();
        Ok::<_, Infallible>(received_power_db(h, reference, scenario.offset_db).unwrap())
    };
    let (cfg, trace) = greedy_optimize(direct, g.empty_config(), &settings).unwrap();
    assert_eq!(via_frames, trace);
    assert_eq!(bed.current_config(), &cfg);
}

#[test]
fn zero_pass_run_keeps_baseline_only() {
    let mut bed = Testbed::new(Scenario::default()).unwrap();
    let trace = bed.run_optimization(&OptimizerSettings { passes: 0, ..Default::default() }, |_| {}).unwrap();
    assert_eq!(trace.len(), 1);
    assert!(trace.entries[0].accepted);
}

#[test]
fn singleton_and_identical_sweeps() {
    let scenario = Scenario { f_grid: FrequencyGrid { start_hz: 3.75e9, stop_hz: 3.75e9, points: 1 }, ..Scenario::default() };
    let mut bed = Testbed::new(scenario).unwrap();
    let g = bed.scenario().geometry;
    let mut cfg = g.empty_config();
    cfg.flip(3);
    let table = bed.run_sweep(&cfg, &g.empty_config()).unwrap();
    assert_eq!(table.rows.len(), 1);
    assert_eq!(table.rows[0].gain_db_config, bed.power_db(&cfg, 3.75e9).unwrap());
    assert!((table.rows[0].gain_db_base - 24.0).abs() < 1e-9);

    let same = bed.run_sweep(&cfg, &cfg).unwrap();
    assert!(same.rows.iter().all(|r| r.delta_db() == 0.0));
    assert_eq!(bed.run_status(), RunStatus::Idle);
}

#[test]
fn sweep_agrees_with_library_sweep() {
    let mut bed = Testbed::new(Scenario::default()).unwrap();
    let s = bed.scenario().clone();
    let cfg = bed.codebook(Direction::new(20.0, 90.0).unwrap()).unwrap();
    let table = bed.run_sweep(&cfg, &s.geometry.empty_config()).unwrap();
    let lib = frequency_sweep(
        &s.geometry,
        &cfg,
        &s.geometry.empty_config(),
        bed.model(),
        &s.placement,
        &s.f_grid.values(),
        bed.reference(),
        s.offset_db,
    )
    .unwrap();
    assert_eq!(table.rows, lib);
}

#[test]
fn steer_applies_library_codebook() {
    let mut bed = Testbed::new(Scenario::default()).unwrap();
    let target = Direction::new(30.0, 0.0).unwrap();
    let out = bed.steer(target).unwrap();
    let want = ris_core::array::steering_codebook(
        &bed.scenario().geometry,
        bed.model(),
        bed.scenario().placement.tx_pos,
        target,
        bed.scenario().f_probe_hz,
    )
    .unwrap();
    assert_eq!(bed.current_config(), &want);
    assert_eq!(out.config_hex, want.to_hex());
    assert!(out.report.is_success());
}

#[test]
fn fixed_reference_makes_levels_comparable() {
    let base = Testbed::new(Scenario::default()).unwrap();
    let fixed = Testbed::new(Scenario { reference: Reference::Gain(base.reference()), ..Scenario::default() }).unwrap();
    assert_eq!(base.current_power_db(), fixed.current_power_db());
}

#[test]
fn four_block_steering_scenario_runs() {
    let mut bed = Testbed::new(Scenario::four_block_steering()).unwrap();
    assert_eq!(bed.blocks().len(), 4);
    let out = bed.steer(Direction::new(30.0, 0.0).unwrap()).unwrap();
    assert_eq!(out.report.total(), 4);
    let pat = bed.pattern(-90.0, 90.0, 721, 0.0).unwrap();
    let peak = ris_core::array::peak_theta(&pat).unwrap();
    assert!((peak - 30.0).abs() <= 4.0);
}
