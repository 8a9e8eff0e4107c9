mod common;

use common::oracle;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ris_core::array::{ArrayGeometry, PhaseConfig};
use ris_core::control::{
    crc16, decode_frame, encode_frame, partition_config, reassemble, BlockAddress, BlockMode, BlockSpec, Chain,
    ControlError, FaultAction, FaultRule, Frame, LinkDirection, Opcode, OutcomeKind,
};

fn random_frame(rng: &mut ChaCha8Rng) -> Frame {
    let op = Opcode::ALL[rng.random_range(0..Opcode::ALL.len())];
    let dest = if rng.random_bool(0.1) { BlockAddress::BROADCAST } else { BlockAddress::new(rng.random_range(0..16)).unwrap() };
    let payload = (0..op.payload_len()).map(|_| rng.random()).collect();
    Frame::new(dest, op, payload)
}

fn random_config(rng: &mut ChaCha8Rng, geom: &ArrayGeometry) -> PhaseConfig {
    PhaseConfig::from_bits(geom.rows(), geom.cols(), (0..geom.len()).map(|_| rng.random_bool(0.5)).collect()).unwrap()
}

fn addr(v: u8) -> BlockAddress {
    BlockAddress::new(v).unwrap()
}

#[test]
fn crc_matches_bitwise_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..2000 {
        let data: Vec<u8> = (0..rng.random_range(0..80)).map(|_| rng.random()).collect();
        assert_eq!(crc16(&data), oracle::crc16_ccitt_false(&data));
    }
    assert_eq!(crc16(b"123456789"), 0x29B1);
}

#[test]
fn ten_thousand_random_round_trips() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..10_000 {
        let f = random_frame(&mut rng);
        let bytes = encode_frame(&f).unwrap();
        assert_eq!(bytes.len(), 7 + f.payload.len());
        let crc = oracle::crc16_ccitt_false(&bytes[1..bytes.len() - 2]);
        assert_eq!(&bytes[bytes.len() - 2..], &crc.to_be_bytes());
        assert_eq!(decode_frame(&bytes).unwrap(), f);
    }
}

#[test]
fn every_single_byte_corruption_is_detected() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut frames: Vec<Frame> = Opcode::ALL
        .iter()
        .map(|&op| Frame::new(addr(5), op, (0..op.payload_len()).map(|i| (i * 37) as u8).collect()))
        .collect();
    frames.extend((0..20).map(|_| random_frame(&mut rng)));
    for f in frames {
        let bytes = encode_frame(&f).unwrap();
        for pos in 0..bytes.len() {
            for xor in 1..=255u8 {
                let mut bad = bytes.clone();
                bad[pos] ^= xor;
                assert!(decode_frame(&bad).is_err(), "{f:?} pos {pos} xor {xor:#04x}");
            }
        }
    }
}

#[test]
fn partition_round_trips_per_tiling() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for (tr, tc) in [(1, 1), (1, 2), (2, 2), (4, 4)] {
        let geom = ArrayGeometry::tiled(tr, tc);
        for _ in 0..1000 {
            let cfg = random_config(&mut rng, &geom);
            let parts = partition_config(&cfg, &geom).unwrap();
            assert_eq!(parts.len(), tr * tc);
            assert_eq!(reassemble(&parts, &geom).unwrap(), cfg);
        }
    }
}

#[test]
fn partition_bytes_follow_msb_left_rows() {
    let geom = ArrayGeometry::tiled(1, 2);
    let mut cfg = geom.empty_config();
    cfg.set(0, 0, true);
    cfg.set(7, 15, true);
    let parts = partition_config(&cfg, &geom).unwrap();
    assert_eq!(parts[&addr(0)], [0x80, 0, 0, 0, 0, 0, 0, 0]);
    assert_eq!(parts[&addr(1)], [0, 0, 0, 0, 0, 0, 0, 0x01]);
}

#[test]
fn sixteen_block_chain_isolates_corrupted_address() {
    let geom = ArrayGeometry::tiled(4, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for victim in 1..16u8 {
        let mut chain = Chain::for_geometry(geom).unwrap();
        assert_eq!(chain.len(), 16);
        chain.census().unwrap();
        chain.inject(FaultRule { link: Some(victim as usize - 1), ..FaultRule::corrupt_to(addr(victim)) });
        let cfg = random_config(&mut rng, &geom);
        let report = chain.apply(&cfg).unwrap();
        assert_eq!(report.failed(), vec![addr(victim)]);
        assert_eq!(report.outcomes[&addr(victim)].result, OutcomeKind::Timeout);
        assert_eq!(report.outcomes[&addr(victim)].attempts, 4);
        for (a, o) in &report.outcomes {
            if *a != addr(victim) {
                assert_eq!((o.result, o.attempts), (OutcomeKind::Configured, 1), "{a:?}");
            }
        }
        // every other block holds its slice of the intended config
        let want = partition_config(&cfg, &geom).unwrap();
        for b in chain.blocks().filter(|b| b.address != addr(victim)) {
            assert_eq!(b.surface, want[&b.address]);
        }
        assert!(chain.assemble().is_err());
    }
}

#[test]
fn corrupted_replies_also_isolate() {
    let geom = ArrayGeometry::tiled(4, 4);
    let mut chain = Chain::for_geometry(geom).unwrap();
    chain.inject(FaultRule {
        link: Some(0),
        direction: Some(LinkDirection::Up),
        dest: None,
        opcode: None,
        action: FaultAction::Drop,
        remaining: Some(2),
    });
    let report = chain.apply(&geom.empty_config()).unwrap();
    assert!(report.is_success());
    assert!(report.outcomes.values().any(|o| o.attempts > 1));
}

#[test]
fn seventeenth_block_cannot_get_a_unique_address() {
    let geom = ArrayGeometry::tiled(4, 4);
    let mut specs = vec![BlockSpec { mode: BlockMode::Master, address: addr(0) }];
    specs.extend((0..16).map(|i| BlockSpec { mode: BlockMode::Slave, address: addr(if i < 15 { i + 1 } else { 7 }) }));
    let mut chain = Chain::new(geom, &specs).unwrap();
    assert_eq!(chain.census().unwrap_err(), ControlError::AddressConflict(addr(7)));
    specs.push(BlockSpec { mode: BlockMode::Slave, address: addr(3) });
    assert!(Chain::new(geom, &specs).is_err());
}

#[test]
fn chain_apply_then_assemble_is_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for (tr, tc) in [(1, 1), (1, 2), (2, 2), (4, 4)] {
        let geom = ArrayGeometry::tiled(tr, tc);
        let mut chain = Chain::for_geometry(geom).unwrap();
        for _ in 0..20 {
            let cfg = random_config(&mut rng, &geom);
            assert!(chain.apply(&cfg).unwrap().is_success());
            assert_eq!(chain.assemble().unwrap(), cfg);
        }
    }
}
