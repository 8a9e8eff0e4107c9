//! Acceptance suite: one PASS/FAIL line per headline criterion.
//! Run with `cargo test -p ris-cli --test acceptance`.

#[path = "../../core/tests/common/oracle.rs"]
mod oracle;

use std::convert::Infallible;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use oracle::Cx;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ris_core::array::{
    channel_gain, linspace, peak_theta, radiation_pattern, received_power_db, steering_codebook, ArrayGeometry,
    Direction, PhaseConfig, Placement,
};
use ris_core::cell::{BandCheck, ReflectionAnchor, UnitCellModel};
use ris_core::control::{
    decode_frame, encode_frame, partition_config, reassemble, BlockAddress, Chain, FaultRule, Frame, Opcode,
    OutcomeKind,
};
use ris_core::optimizer::{brute_force_best, greedy_optimize, ElementOrder, OptimizerSettings};
use serde_json::Value;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

fn band_contract() -> Verdict {
    let t = Instant::now();
    let report = UnitCellModel::default_n78().validate_band(&BandCheck::default()).unwrap();
    let el = t.elapsed();
    let pass = report.pass
        && report.min_magnitude_db_off >= -3.0
        && report.min_magnitude_db_on >= -3.0
        && report.phase_diff_range_deg.0 >= 160.0
        && report.phase_diff_range_deg.1 <= 200.0
        && el < Duration::from_secs(1);
    verdict(
        pass,
        format!(
            "|Γ| min off/on {:.2}/{:.2} dB (>= -3), Δφ {:.1}..{:.1} deg (180±20), {:.3}s (< 1s)",
            report.min_magnitude_db_off,
            report.min_magnitude_db_on,
            report.phase_diff_range_deg.0,
            report.phase_diff_range_deg.1,
            secs(el)
        ),
    )
}

fn steering() -> Verdict {
    let geom = ArrayGeometry::tiled(2, 2);
    let model = UnitCellModel::default_n78();
    let tx = [0.0, 0.0, 0.8];
    let grid = linspace(-90.0, 90.0, 721);
    let mut pass = geom.rows() == 16 && geom.cols() == 16;
    let mut parts = Vec::new();
    for target in [15.0, 30.0, 45.0] {
        let t = Instant::now();
        let cb = steering_codebook(&geom, &model, tx, Direction::new(target, 0.0).unwrap(), 3.75e9).unwrap();
        let pat = radiation_pattern(&geom, &cb, &model, tx, 3.75e9, &grid, 0.0).unwrap();
        let peak = peak_theta(&pat).unwrap();
        let el = t.elapsed();
        pass &= (peak - target).abs() <= 4.0 && el < Duration::from_secs(10);
        parts.push(format!("{target}->{peak} ({:.3}s)", secs(el)));
    }
    verdict(pass, format!("16x16, 0.25 deg grid: {} (±4 deg, < 10s each)", parts.join(", ")))
}

fn cli(args: &[&str]) -> (bool, Value, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_ris-twin")).args(args).output().unwrap();
    let json = serde_json::from_slice(&out.stdout).unwrap_or(Value::Null);
    (out.status.success(), json, String::from_utf8_lossy(&out.stderr).into_owned())
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct LoopResult {
    closed_loop: Verdict,
    low_band: Verdict,
}

fn closed_loop(dir: &Path) -> LoopResult {
    let (trace, fin, sweep) = (dir.join("trace.csv"), dir.join("final.hex"), dir.join("sweep.csv"));
    let t = Instant::now();
    let (ok_o, opt, err_o) = cli(&["optimize", "--passes", "3", "--out", &format!("{},{}", s(&trace), s(&fin))]);
    let (ok_s, sw, err_s) = cli(&["sweep", "--config", s(&fin), "--baseline", "off", "--out", s(&sweep)]);
    let el = t.elapsed();
    if !(ok_o && ok_s) {
        let msg = format!("cli failed: {err_o}{err_s}");
        return LoopResult { closed_loop: verdict(false, msg.clone()), low_band: verdict(false, msg) };
    }
    let imp = opt["improvement_db"].as_f64().unwrap_or(f64::NAN);
    let band_min = sw["band_min_delta_db"].as_f64().unwrap_or(f64::NAN);
    let band_mean = sw["band_mean_delta_db"].as_f64().unwrap_or(f64::NAN);
    let low_mean = sw["low_mean_delta_db"].as_f64().unwrap_or(f64::NAN);
    LoopResult {
        closed_loop: verdict(
            imp >= 15.0 && band_min >= 15.0 && el < Duration::from_secs(60),
            format!(
                "improvement {imp:.2} dB at 3.75 GHz, min delta {band_min:.2} dB over 3.7-3.8 GHz (>= 15), {} probes, {:.2}s (< 60s)",
                opt["probes"],
                secs(el)
            ),
        ),
        low_band: verdict(
            low_mean < band_mean,
            format!("mean delta 3.3-3.5 GHz {low_mean:.2} dB < 3.7-3.8 GHz {band_mean:.2} dB"),
        ),
    }
}

fn flat_model(off: (f64, f64), on: (f64, f64)) -> UnitCellModel {
    let t = |(db, deg): (f64, f64)| {
        vec![
            ReflectionAnchor { freq_hz: 3.0e9, mag_db: db, phase_deg: deg },
            ReflectionAnchor { freq_hz: 4.5e9, mag_db: db, phase_deg: deg },
        ]
    };
    UnitCellModel::new(t(off), t(on), (3.7e9, 3.8e9), 3.75e9).unwrap()
}

fn oracle_equivalence() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(0xACCE);
    let mut worst = 0.0f64;
    let mut greedy_ok = 0;
    let cases = 120;
    let t = Instant::now();
    for i in 0..cases {
        let (br, bc, tr, tc) = loop {
            let d = (rng.random_range(1..=4), rng.random_range(1..=4), rng.random_range(1..=2), rng.random_range(1..=2));
            if d.0 * d.1 * d.2 * d.3 <= 16 {
                break d;
            }
        };
        let geom = ArrayGeometry::new(br, bc, tr, tc, rng.random_range(0.01..0.08)).unwrap();
        let bits: Vec<bool> = (0..geom.len()).map(|_| rng.random_bool(0.5)).collect();
        let config = PhaseConfig::from_bits(geom.rows(), geom.cols(), bits.clone()).unwrap();
        let off = (rng.random_range(-6.0..0.0), rng.random_range(-180.0..180.0));
        let on = (rng.random_range(-6.0..0.0), rng.random_range(-180.0..180.0));
        let model = flat_model(off, on);
        let mut pt = || [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(0.2..3.0)];
        let placement = Placement::new(pt(), pt()).unwrap();
        let f = rng.random_range(3.0e9..4.5e9);

        let h = channel_gain(&geom, &config, &model, &placement, f).unwrap();
        let gamma = [Cx::from_db_deg(off.0, off.1), Cx::from_db_deg(on.0, on.1)];
        let want = oracle::cascade(
            geom.rows(),
            geom.cols(),
            geom.pitch_m,
            &bits,
            gamma,
            placement.tx_pos,
            placement.rx_pos,
            f,
        );
        worst = worst.max(oracle::rel_err((h.re, h.im), want));

        let m = |c: &PhaseConfig| {
            received_power_db(channel_gain(&geom, c, &model, &placement, f).unwrap(), 1.0, 0.0).unwrap()
        };
        let order = if i % 2 == 0 { ElementOrder::RowMajor } else { ElementOrder::Random { seed: i as u64 } };
        let settings = OptimizerSettings { passes: 1000, epsilon_db: 0.0, element_order: order };
        let (cfg, _) = greedy_optimize(|c| Ok::<_, Infallible>(m(c)), geom.empty_config(), &settings).unwrap();
        let p = m(&cfg);
        let local = (0..cfg.len()).all(|k| {
            let mut n = cfg.clone();
            n.flip(k);
            m(&n) <= p
        });
        let (_, best) = brute_force_best(|c| Ok::<_, Infallible>(m(c)), &geom).unwrap();
        if local && p <= best + 1e-9 {
            greedy_ok += 1;
        }
    }
    verdict(
        worst <= 1e-12 && greedy_ok == cases,
        format!(
            "{cases} geometries <= 16 elements: worst rel err {worst:.1e} (<= 1e-12), greedy local-optimal and <= brute force {greedy_ok}/{cases}, {:.2}s",
            secs(t.elapsed())
        ),
    )
}

fn protocol() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC0DE);
    let addr = |v: u8| BlockAddress::new(v).unwrap();
    let frame = |rng: &mut ChaCha8Rng| {
        let op = Opcode::ALL[rng.random_range(0..Opcode::ALL.len())];
        let dest = if rng.random_bool(0.1) { BlockAddress::BROADCAST } else { addr(rng.random_range(0..16)) };
        Frame::new(dest, op, (0..op.payload_len()).map(|_| rng.random()).collect())
    };

    let round_trips = (0..10_000)
        .filter(|_| {
            let f = frame(&mut rng);
            let bytes = encode_frame(&f).unwrap();
            let crc = oracle::crc16_ccitt_false(&bytes[1..bytes.len() - 2]);
            bytes[bytes.len() - 2..] == crc.to_be_bytes() && decode_frame(&bytes).ok() == Some(f)
        })
        .count();

    let (mut corruptions, mut detected) = (0usize, 0usize);
    let mut frames: Vec<Frame> =
        Opcode::ALL.iter().map(|&op| Frame::new(addr(5), op, vec![0xA5; op.payload_len()])).collect();
    frames.extend((0..20).map(|_| frame(&mut rng)));
    for f in &frames {
        let bytes = encode_frame(f).unwrap();
        for pos in 0..bytes.len() {
            for xor in 1..=255u8 {
                let mut bad = bytes.clone();
                bad[pos] ^= xor;
                corruptions += 1;
                detected += decode_frame(&bad).is_err() as usize;
            }
        }
    }

    let random_config = |rng: &mut ChaCha8Rng, geom: &ArrayGeometry| {
        PhaseConfig::from_bits(geom.rows(), geom.cols(), (0..geom.len()).map(|_| rng.random_bool(0.5)).collect())
            .unwrap()
    };
    let mut partitions = 0;
    for (tr, tc) in [(1, 1), (1, 2), (2, 2), (4, 4)] {
        let geom = ArrayGeometry::tiled(tr, tc);
        for _ in 0..1000 {
            let cfg = random_config(&mut rng, &geom);
            let parts = partition_config(&cfg, &geom).unwrap();
            partitions += (parts.len() == tr * tc && reassemble(&parts, &geom).unwrap() == cfg) as usize;
        }
    }

    let geom = ArrayGeometry::tiled(4, 4);
    let mut isolated = 0;
    for victim in 1..16u8 {
        let mut chain = Chain::for_geometry(geom).unwrap();
        chain.inject(FaultRule { link: Some(victim as usize - 1), ..FaultRule::corrupt_to(addr(victim)) });
        let cfg = random_config(&mut rng, &geom);
        let report = chain.apply(&cfg).unwrap();
        let want = partition_config(&cfg, &geom).unwrap();
        let ok = chain.len() == 16
            && report.failed() == vec![addr(victim)]
            && report.outcomes[&addr(victim)].result == OutcomeKind::Timeout
            && report
                .outcomes
                .iter()
                .all(|(a, o)| *a == addr(victim) || o.result == OutcomeKind::Configured)
            && chain.blocks().filter(|b| b.address != addr(victim)).all(|b| b.surface == want[&b.address]);
        isolated += ok as usize;
    }

    verdict(
        round_trips == 10_000 && detected == corruptions && partitions == 4000 && isolated == 15,
        format!(
            "round trips {round_trips}/10000, corruptions detected {detected}/{corruptions}, partition identity {partitions}/4000, 16-block isolation {isolated}/15 victims"
        ),
    )
}

fn determinism(dir: &Path) -> Verdict {
    let mut runs = Vec::new();
    for k in 0..2 {
        let (t, f, sw) = (dir.join(format!("t{k}.csv")), dir.join(format!("f{k}.hex")), dir.join(format!("s{k}.csv")));
        let out = format!("{},{}", s(&t), s(&f));
        let ok = cli(&["optimize", "--order", "random", "--seed", "2024", "--out", &out]).0
            && cli(&["sweep", "--config", s(&f), "--out", s(&sw)]).0;
        let read = |p: &Path| std::fs::read(p).unwrap_or_default();
        runs.push((ok, read(&t), read(&f), read(&sw)));
    }
    let same = runs[0] == runs[1];
    verdict(
        runs[0].0 && !runs[0].1.is_empty() && same,
        format!("trace.csv {} B, sweep.csv {} B, identical across runs: {same}", runs[0].1.len(), runs[0].3.len()),
    )
}

fn main() {
    let dir = tempfile::tempdir().unwrap();
    let LoopResult { closed_loop, low_band } = closed_loop(dir.path());
    let results = [
        ("unit-cell band contract", band_contract()),
        ("steering reproduction", steering()),
        ("closed-loop improvement", closed_loop),
        ("low-frequency degradation", low_band),
        ("oracle equivalence", oracle_equivalence()),
        ("protocol conformance", protocol()),
        ("determinism", determinism(dir.path())),
    ];
    let mut failed = 0;
    for (name, v) in &results {
        println!("{} {name}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        failed += !v.pass as usize;
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
