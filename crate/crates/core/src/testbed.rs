//! Closed-loop virtual experiment.
//!
//! Every configuration reaches the surface through the control plane
//! (partition → SET_CONFIG frames → slave state machines); the received power
//! is then computed from whatever the blocks actually hold.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::array::{
    channel_gain_with, direct_path, linspace, radiation_pattern, received_power_db, steering_codebook, ArrayError,
    Direction, ElementPattern, PatternPoint, PhaseConfig, SweepRow,
};
use crate::cell::UnitCellModel;
use crate::control::frame::SURFACE_BYTES;
use crate::control::{partition_config, reassemble, ApplyReport, BlockAddress, BlockMode, Chain, ControlError, OutcomeKind};
use crate::optimizer::{greedy_optimize_observed, OptimizeError, OptimizerSettings, PowerTrace, TraceEntry};
use crate::scenario::{Reference, Scenario, ScenarioError};

#[derive(Debug, Error, PartialEq)]
pub enum TestbedError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Array(#[from] ArrayError),
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error("testbed is busy ({0:?})")]
    Busy(RunStatus),
    #[error("blocks {0:?} did not acknowledge the configuration")]
    ApplyFailed(Vec<BlockAddress>),
    #[error("optimization aborted at probe {probe}: {message}")]
    Optimize { probe: usize, message: String },
}

impl TestbedError {
    pub fn code(&self) -> &'static str {
        match self {
            TestbedError::Scenario(_) => "SCENARIO_INVALID",
            TestbedError::Array(_) => "INVALID_ARGUMENT",
            TestbedError::Control(e) => e.code(),
            TestbedError::Busy(_) => "BUSY",
            TestbedError::ApplyFailed(_) => "APPLY_FAILED",
            TestbedError::Optimize { .. } => "OPTIMIZE_FAILED",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Idle,
    Optimizing,
    Sweeping,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApplyOutcome {
    pub report: ApplyReport,
    pub power_db: f64,
    pub config_hex: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockInfo {
    pub address: BlockAddress,
    pub mode: BlockMode,
    pub powered: bool,
    pub configured: bool,
    pub frames_seen: u64,
    pub last_error: Option<String>,
    pub last_status: Option<OutcomeKind>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["freq_hz", "gain_db_config", "gain_db_base", "delta_db"]).expect("in-memory write");
        for r in &self.rows {
            w.write_record([
                r.freq_hz.to_string(),
                r.gain_db_config.to_string(),
                r.gain_db_base.to_string(),
                r.delta_db().to_string(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii csv")
    }
}

pub fn pattern_csv(points: &[PatternPoint]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["theta_deg", "power_db"]).expect("in-memory write");
    for p in points {
        w.write_record([p.theta_deg.to_string(), p.power_db.to_string()]).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii csv")
}

#[derive(Debug, Clone)]
pub struct Testbed {
    scenario: Scenario,
    model: UnitCellModel,
    chain: Chain,
    reference: f64,
    pattern: ElementPattern,
    noise: Option<(ChaCha8Rng, Normal<f64>)>,
    current_config: PhaseConfig,
    current_power_db: f64,
    last_apply: ApplyReport,
    trace: PowerTrace,
    final_config: Option<PhaseConfig>,
    run_status: RunStatus,
}

impl Testbed {
    /// Validates the scenario, builds one block per tile, checks the address
    /// census and applies the all-OFF configuration.
    pub fn new(scenario: Scenario) -> Result<Self, TestbedError> {
        let model = scenario.validate()?;
        let mut chain = Chain::for_geometry(scenario.geometry)?;
        chain.census()?;
        let pattern = ElementPattern::from_exponent(scenario.element_cos_exponent);
        let noise = (scenario.noise_sigma_db > 0.0).then(|| {
            (
                ChaCha8Rng::seed_from_u64(scenario.seed),
                Normal::new(0.0, scenario.noise_sigma_db).expect("sigma validated"),
            )
        });
        let off = scenario.geometry.empty_config();
        let mut bed = Self {
            model,
            chain,
            reference: 1.0,
            pattern,
            noise,
            current_config: off.clone(),
            current_power_db: 0.0,
            last_apply: ApplyReport::default(),
            trace: PowerTrace::default(),
            final_config: None,
            run_status: RunStatus::Idle,
            scenario,
        };
        bed.reference = match bed.scenario.reference {
            Reference::Gain(g) => g,
            Reference::Named(_) => bed.gain(&off, bed.scenario.f_probe_hz)?.norm(),
        };
        if !(bed.reference > 0.0) {
            return Err(ArrayError::ZeroReference.into());
        }
        bed.apply_config(&off)?;
        Ok(bed)
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn model(&self) -> &UnitCellModel {
        &self.model
    }

    pub fn chain(&self) -> &Chain {
        &self.chain
    }

    pub fn chain_mut(&mut self) -> &mut Chain {
        &mut self.chain
    }

    pub fn reference(&self) -> f64 {
        self.reference
    }

    pub fn current_config(&self) -> &PhaseConfig {
        &self.current_config
    }

    pub fn current_power_db(&self) -> f64 {
        self.current_power_db
    }

    pub fn trace(&self) -> &PowerTrace {
        &self.trace
    }

    /// Configuration left by the last optimization run.
    pub fn final_config(&self) -> Option<&PhaseConfig> {
        self.final_config.as_ref()
    }

    pub fn run_status(&self) -> RunStatus {
        self.run_status
    }

    /// Marks the bench as occupied by a run executing elsewhere.
    pub fn set_run_status(&mut self, status: RunStatus) {
        self.run_status = status;
    }

    fn ensure_idle(&self) -> Result<(), TestbedError> {
        match self.run_status {
            RunStatus::Idle => Ok(()),
            s => Err(TestbedError::Busy(s)),
        }
    }

    pub fn replace_scenario(&mut self, scenario: Scenario) -> Result<(), TestbedError> {
        self.ensure_idle()?;
        *self = Testbed::new(scenario)?;
        Ok(())
    }

    /// Cascade gain including the optional taper and leakage terms.
    pub fn gain(&self, config: &PhaseConfig, freq_hz: f64) -> Result<Complex64, ArrayError> {
        let mut h = channel_gain_with(
            &self.scenario.geometry,
            config,
            &self.model,
            &self.scenario.placement,
            freq_hz,
            self.pattern,
        )?;
        if let Some(db) = self.scenario.leakage_db {
            h += direct_path(&self.scenario.placement, freq_hz) * 10f64.powf(db / 20.0);
        }
        Ok(h)
    }

    /// Noise-free received power of `config` at `freq_hz`, bypassing the chain.
    pub fn power_db(&self, config: &PhaseConfig, freq_hz: f64) -> Result<f64, ArrayError> {
        received_power_db(self.gain(config, freq_hz)?, self.reference, self.scenario.offset_db)
    }

    /// Received power of the configuration the blocks currently hold.
    pub fn measure(&mut self) -> Result<f64, TestbedError> {
        let config = self.chain.assemble()?;
        let mut p = self.power_db(&config, self.scenario.f_probe_hz)?;
        if let Some((rng, dist)) = self.noise.as_mut() {
            p += dist.sample(rng);
        }
        Ok(p)
    }

    fn push_config(&mut self, config: &PhaseConfig) -> Result<ApplyReport, TestbedError> {
        self.scenario.geometry.check_config(config)?;
        let report = self.chain.apply(config)?;
        self.last_apply = report.clone();
        Ok(report)
    }

    /// Sends `config` down the chain and measures what the surface ends up holding.
    pub fn apply_config(&mut self, config: &PhaseConfig) -> Result<ApplyOutcome, TestbedError> {
        self.ensure_idle()?;
        let report = self.push_config(config)?;
        self.current_config = self.chain.assemble()?;
        self.current_power_db = self.measure()?;
        Ok(ApplyOutcome { report, power_db: self.current_power_db, config_hex: self.current_config.to_hex() })
    }

    /// Rewrites one block's 8×8 field and leaves every other block as it is.
    pub fn apply_block(&mut self, address: BlockAddress, surface: [u8; SURFACE_BYTES]) -> Result<ApplyOutcome, TestbedError> {
        self.ensure_idle()?;
        let geom = self.scenario.geometry;
        let mut payloads = partition_config(&self.current_config, &geom)?;
        match payloads.get_mut(&address) {
            Some(slot) => *slot = surface,
            None => return Err(ControlError::MissingBlock(address).into()),
        }
        let config = reassemble(&payloads, &geom)?;
        self.apply_config(&config)
    }

    /// Restarts the measurement-noise stream from `seed`.
    pub fn reseed_noise(&mut self, seed: u64) {
        if let Some((rng, _)) = self.noise.as_mut() {
            *rng = ChaCha8Rng::seed_from_u64(seed);
        }
    }

    pub fn codebook(&self, target: Direction) -> Result<PhaseConfig, TestbedError> {
        Ok(steering_codebook(
            &self.scenario.geometry,
            &self.model,
            self.scenario.placement.tx_pos,
            target,
            self.scenario.f_probe_hz,
        )?)
    }

    pub fn steer(&mut self, target: Direction) -> Result<ApplyOutcome, TestbedError> {
        self.ensure_idle()?;
        let cb = self.codebook(target)?;
        self.apply_config(&cb)
    }

    /// Greedy search from all-OFF with every probe routed through the chain.
    pub fn run_optimization<O>(&mut self, settings: &OptimizerSettings, observe: O) -> Result<PowerTrace, TestbedError>
    where
        O: FnMut(&TraceEntry),
    {
        self.ensure_idle()?;
        self.run_status = RunStatus::Optimizing;
        let result = self.optimize_inner(settings, observe);
        self.run_status = RunStatus::Idle;
        result
    }

    fn optimize_inner<O>(&mut self, settings: &OptimizerSettings, observe: O) -> Result<PowerTrace, TestbedError>
    where
        O: FnMut(&TraceEntry),
    {
        let init = self.scenario.geometry.empty_config();
        self.trace = PowerTrace::default();
        let outcome = greedy_optimize_observed(
            |cfg: &PhaseConfig| -> Result<f64, TestbedError> {
                let report = self.push_config(cfg)?;
                if !report.is_success() {
                    return Err(TestbedError::ApplyFailed(report.failed()));
                }
                self.measure()
            },
            init,
            settings,
            observe,
        );
        let (best, trace) = match outcome {
            Ok(v) => v,
            Err(OptimizeError::Measure { probe, source }) => {
                return Err(TestbedError::Optimize { probe, message: source.to_string() })
            }
            Err(e) => return Err(TestbedError::Optimize { probe: 0, message: e.to_string() }),
        };
        // the last probe may have been a rejected flip
        self.push_config(&best)?;
        self.current_config = self.chain.assemble()?;
        self.current_power_db = match trace.last_accepted_db() {
            Some(p) if self.noise.is_none() => p,
            _ => self.measure()?,
        };
        self.final_config = Some(best);
        self.trace = trace.clone();
        Ok(trace)
    }

    pub fn run_sweep(&mut self, config: &PhaseConfig, base: &PhaseConfig) -> Result<SweepTable, TestbedError> {
        self.ensure_idle()?;
        self.scenario.geometry.check_config(config)?;
        self.scenario.geometry.check_config(base)?;
        self.run_status = RunStatus::Sweeping;
        let rows = self
            .scenario
            .f_grid
            .values()
            .into_iter()
            .map(|f| {
                Ok(SweepRow { freq_hz: f, gain_db_config: self.power_db(config, f)?, gain_db_base: self.power_db(base, f)? })
            })
            .collect::<Result<Vec<_>, ArrayError>>();
        self.run_status = RunStatus::Idle;
        Ok(SweepTable { rows: rows? })
    }

    /// Pattern of the currently applied configuration in the `phi_deg` cut.
    pub fn pattern(&self, theta_min: f64, theta_max: f64, n: usize, phi_deg: f64) -> Result<Vec<PatternPoint>, TestbedError> {
        self.pattern_of(&self.current_config, theta_min, theta_max, n, phi_deg)
    }

    pub fn pattern_of(
        &self,
        config: &PhaseConfig,
        theta_min: f64,
        theta_max: f64,
        n: usize,
        phi_deg: f64,
    ) -> Result<Vec<PatternPoint>, TestbedError> {
        if n == 0 || !(theta_min <= theta_max) || theta_min < -90.0 || theta_max > 90.0 {
            return Err(ArrayError::InvalidDirection(format!("theta grid {theta_min}..{theta_max} x {n}")).into());
        }
        Ok(radiation_pattern(
            &self.scenario.geometry,
            config,
            &self.model,
            self.scenario.placement.tx_pos,
            self.scenario.f_probe_hz,
            &linspace(theta_min, theta_max, n),
            phi_deg,
        )?)
    }

    pub fn blocks(&self) -> Vec<BlockInfo> {
        self.chain
            .blocks()
            .map(|b| BlockInfo {
                address: b.address,
                mode: b.mode,
                powered: b.powered,
                configured: b.configured,
                frames_seen: b.frames_seen,
                last_error: b.last_error.clone(),
                last_status: self.last_apply.outcomes.get(&b.address).map(|o| o.result),
            })
            .collect()
    }

    /// Parses a row-major hex config sized for this scenario.
    pub fn parse_config(&self, hex: &str) -> Result<PhaseConfig, TestbedError> {
        Ok(PhaseConfig::from_hex(self.scenario.geometry.rows(), self.scenario.geometry.cols(), hex)?)
    }
}
