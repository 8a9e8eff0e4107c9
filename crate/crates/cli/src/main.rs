use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ris_core::array::{mean_delta_db, peak_theta, Direction, PhaseConfig};
use ris_core::cell::{BandCheck, CellError, UnitCellModel};
use ris_core::control::frame::{from_hex, to_hex};
use ris_core::control::{decode_frame, encode_frame, BlockAddress, Frame, FrameError, Opcode};
use ris_core::optimizer::{ElementOrder, OptimizerSettings};
use ris_core::scenario::{Scenario, ScenarioError};
use ris_core::testbed::{pattern_csv, Testbed, TestbedError};
use serde::Serialize;
use serde_json::{json, Value};

#[derive(Debug, Parser)]
#[command(name = "ris-twin", version, about = "Digital twin of a modular 1-bit RIS")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args, Clone)]
struct ScenarioArg {
    /// Scenario JSON; the built-in two-block setup when omitted.
    #[arg(long, global = true)]
    scenario: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Unit-cell model checks.
    Cell {
        #[command(subcommand)]
        command: CellCommand,
    },
    /// Quantized steering codebook for a target direction.
    Codebook {
        #[command(flatten)]
        scenario: ScenarioArg,
        #[arg(long, allow_negative_numbers = true)]
        theta: f64,
        #[arg(long, default_value_t = 0.0)]
        phi: f64,
        /// Design frequency; the scenario probe frequency when omitted.
        #[arg(long)]
        freq: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Far-field pattern of a configuration at the probe frequency.
    Pattern {
        #[command(flatten)]
        scenario: ScenarioArg,
        /// Hex config file; all-OFF when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = -90.0, allow_negative_numbers = true)]
        theta_min: f64,
        #[arg(long, default_value_t = 90.0, allow_negative_numbers = true)]
        theta_max: f64,
        #[arg(long, default_value_t = 721)]
        n: usize,
        #[arg(long, default_value_t = 0.0)]
        phi: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Push a configuration through the block chain and measure it.
    Apply {
        #[command(flatten)]
        scenario: ScenarioArg,
        #[arg(long)]
        config: PathBuf,
    },
    /// Apply the codebook for a direction and measure it.
    Steer {
        #[command(flatten)]
        scenario: ScenarioArg,
        #[arg(long)]
        theta: f64,
        #[arg(long, default_value_t = 0.0)]
        phi: f64,
    },
    /// Testbed state after an optional configuration.
    Status {
        #[command(flatten)]
        scenario: ScenarioArg,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Closed-loop greedy search from all-OFF.
    Optimize {
        #[command(flatten)]
        scenario: ScenarioArg,
        #[arg(long, default_value_t = 3)]
        passes: usize,
        #[arg(long, default_value_t = 0.0)]
        epsilon: f64,
        /// Seeds the random element order and measurement noise.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum, default_value_t = Order::RowMajor)]
        order: Order,
        /// `trace.csv[,final.hex]`
        #[arg(long, value_delimiter = ',', num_args = 1..=2)]
        out: Vec<PathBuf>,
    },
    /// Configured vs. baseline received power across the scenario grid.
    Sweep {
        #[command(flatten)]
        scenario: ScenarioArg,
        #[arg(long)]
        config: PathBuf,
        /// `off`, `on`, or a hex config file.
        #[arg(long, default_value = "off")]
        baseline: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Block census, optionally after rewriting one block.
    Blocks {
        #[command(flatten)]
        scenario: ScenarioArg,
        #[arg(long, requires = "surface")]
        address: Option<u8>,
        /// 16 hex digits, one byte per row, MSB = leftmost column.
        #[arg(long, requires = "address")]
        surface: Option<String>,
    },
    /// Scenario documents.
    Scenario {
        #[command(subcommand)]
        command: ScenarioCommand,
    },
    /// Run the HTTP service.
    Serve {
        #[command(flatten)]
        scenario: ScenarioArg,
        #[arg(long, default_value = "127.0.0.1")]
        host: IpAddr,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        /// Directory for sweep/trace artifacts.
        #[arg(long)]
        artifacts: Option<PathBuf>,
    },
    /// Frame codec.
    Frames {
        #[command(subcommand)]
        command: FramesCommand,
    },
}

#[derive(Debug, Subcommand)]
enum CellCommand {
    /// Exit 0 iff the model meets the magnitude and phase-difference window.
    Validate {
        /// Cell model JSON; the bundled n78 model when omitted.
        #[arg(long)]
        model: Option<PathBuf>,
        /// `lo:hi` in Hz.
        #[arg(long, default_value = "3.7e9:3.8e9")]
        band: String,
        #[arg(long, default_value_t = -3.0, allow_negative_numbers = true)]
        floor_db: f64,
        #[arg(long, default_value_t = 180.0)]
        center_deg: f64,
        #[arg(long, default_value_t = 20.0)]
        tol_deg: f64,
        #[arg(long, default_value_t = 101)]
        points: usize,
    },
}

#[derive(Debug, Subcommand)]
enum ScenarioCommand {
    /// Print the effective scenario.
    Show {
        #[command(flatten)]
        scenario: ScenarioArg,
    },
    /// Parse and validate a scenario file.
    Validate { file: PathBuf },
    /// Print a built-in scenario.
    Default {
        #[arg(long)]
        four_block: bool,
    },
}

#[derive(Debug, Subcommand)]
enum FramesCommand {
    Encode {
        /// Block address 0-15, or 255 for broadcast.
        #[arg(long)]
        dest: u8,
        /// SET_CONFIG, GET_STATUS, STATUS_REPLY, PING, PONG or RESET.
        #[arg(long)]
        op: String,
        #[arg(long, default_value = "")]
        payload: String,
    },
    Decode { hex: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Order {
    RowMajor,
    Random,
}

#[derive(Debug, Serialize)]
struct CliError {
    code: String,
    message: String,
    context: Value,
    #[serde(skip)]
    exit: u8,
}

impl CliError {
    fn new(code: &str, message: impl Into<String>) -> Self {
        Self { code: code.into(), message: message.into(), context: Value::Null, exit: 1 }
    }

    fn context(mut self, context: Value) -> Self {
        self.context = context;
        self
    }
}

impl From<TestbedError> for CliError {
    fn from(e: TestbedError) -> Self {
        Self::new(e.code(), e.to_string())
    }
}

impl From<ScenarioError> for CliError {
    fn from(e: ScenarioError) -> Self {
        TestbedError::from(e).into()
    }
}

impl From<CellError> for CliError {
    fn from(e: CellError) -> Self {
        Self::new("CELL_MODEL_INVALID", e.to_string())
    }
}

impl From<FrameError> for CliError {
    fn from(e: FrameError) -> Self {
        Self::new(e.code(), e.to_string())
    }
}

type CliResult<T> = Result<T, CliError>;

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::new("IO", e.to_string()).context(json!({ "path": path.display().to_string() }))
}

fn read(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| io_err(path, e))
}

fn write(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

fn print_json<T: Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("serializable"));
}

fn load_scenario(arg: &ScenarioArg) -> CliResult<Scenario> {
    match &arg.scenario {
        Some(p) => Ok(Scenario::load(p)?),
        None => Ok(Scenario::default()),
    }
}

fn testbed(arg: &ScenarioArg) -> CliResult<Testbed> {
    Ok(Testbed::new(load_scenario(arg)?)?)
}

fn load_config(bed: &Testbed, path: &Path) -> CliResult<PhaseConfig> {
    let text = read(path)?;
    bed.parse_config(&text)
        .map_err(|e| CliError::from(e).context(json!({ "path": path.display().to_string() })))
}

fn direction(theta: f64, phi: f64) -> CliResult<Direction> {
    Direction::new(theta, phi).map_err(|e| CliError::new("INVALID_ARGUMENT", e.to_string()))
}

fn parse_band(text: &str) -> CliResult<(f64, f64)> {
    let bad = || CliError::new("INVALID_ARGUMENT", format!("band {text:?} is not lo:hi"));
    let (lo, hi) = text.split_once(':').ok_or_else(bad)?;
    Ok((lo.trim().parse().map_err(|_| bad())?, hi.trim().parse().map_err(|_| bad())?))
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Cell { command: CellCommand::Validate { model, band, floor_db, center_deg, tol_deg, points } } => {
            let model = match model {
                Some(p) => UnitCellModel::load(p)?,
                None => UnitCellModel::default(),
            };
            let check = BandCheck {
                band_hz: parse_band(&band)?,
                mag_floor_db: floor_db,
                phase_center_deg: center_deg,
                phase_tol_deg: tol_deg,
                n_grid: points,
            };
            let report = model.validate_band(&check)?;
            print_json(&report);
            if !report.pass {
                return Err(CliError::new("BAND_CHECK_FAILED", "model misses the acceptance window")
                    .context(serde_json::to_value(report).expect("serializable")));
            }
        }
        Command::Codebook { scenario, theta, phi, freq, out } => {
            let s = load_scenario(&scenario)?;
            let model = s.validate()?;
            let f = freq.unwrap_or(s.f_probe_hz);
            let cb = ris_core::array::steering_codebook(&s.geometry, &model, s.placement.tx_pos, direction(theta, phi)?, f)
                .map_err(TestbedError::from)?;
            let hex = format!("{}\n", cb.to_hex());
            match out {
                Some(p) => write(&p, &hex)?,
                None => print!("{hex}"),
            }
        }
        Command::Pattern { scenario, config, theta_min, theta_max, n, phi, out } => {
            let bed = testbed(&scenario)?;
            let cfg = match config {
                Some(p) => load_config(&bed, &p)?,
                None => bed.scenario().geometry.empty_config(),
            };
            let points = bed.pattern_of(&cfg, theta_min, theta_max, n, phi)?;
            let csv = pattern_csv(&points);
            match out {
                Some(p) => {
                    write(&p, &csv)?;
                    print_json(&json!({ "points": points.len(), "peak_theta_deg": peak_theta(&points) }));
                }
                None => print!("{csv}"),
            }
        }
        Command::Apply { scenario, config } => {
            let mut bed = testbed(&scenario)?;
            let cfg = load_config(&bed, &config)?;
            print_json(&bed.apply_config(&cfg)?);
        }
        Command::Steer { scenario, theta, phi } => {
            let mut bed = testbed(&scenario)?;
            print_json(&bed.steer(direction(theta, phi)?)?);
        }
        Command::Status { scenario, config } => {
            let mut bed = testbed(&scenario)?;
            if let Some(p) = config {
                let cfg = load_config(&bed, &p)?;
                bed.apply_config(&cfg)?;
            }
            print_json(&json!({
                "run_status": bed.run_status(),
                "current_power_db": bed.current_power_db(),
                "config_hex": bed.current_config().to_hex(),
                "rows": bed.scenario().geometry.rows(),
                "cols": bed.scenario().geometry.cols(),
            }));
        }
        Command::Optimize { scenario, passes, epsilon, seed, order, out } => {
            if epsilon.is_nan() || epsilon < 0.0 {
                return Err(CliError::new("INVALID_ARGUMENT", "epsilon must be >= 0"));
            }
            let mut bed = testbed(&scenario)?;
            if let Some(seed) = seed {
                bed.reseed_noise(seed);
            }
            let element_order = match order {
                Order::RowMajor => ElementOrder::RowMajor,
                Order::Random => ElementOrder::Random { seed: seed.unwrap_or(0) },
            };
            let settings = OptimizerSettings { passes, epsilon_db: epsilon, element_order };
            let baseline = bed.current_power_db();
            let trace = bed.run_optimization(&settings, |_| {})?;
            let final_hex = bed.current_config().to_hex();
            if let Some(p) = out.first() {
                write(p, &trace.to_csv())?;
            }
            if let Some(p) = out.get(1) {
                write(p, &format!("{final_hex}\n"))?;
            }
            print_json(&json!({
                "probes": trace.len(),
                "baseline_db": baseline,
                "final_power_db": bed.current_power_db(),
                "improvement_db": trace.improvement_db().ok(),
                "final_config_hex": final_hex,
            }));
        }
        Command::Sweep { scenario, config, baseline, out } => {
            let mut bed = testbed(&scenario)?;
            let cfg = load_config(&bed, &config)?;
            let off = bed.scenario().geometry.empty_config();
            let base = match baseline.as_str() {
                "off" => off,
                "on" => off.complement(),
                file => load_config(&bed, Path::new(file))?,
            };
            let table = bed.run_sweep(&cfg, &base)?;
            let csv = table.to_csv();
            match out {
                Some(p) => {
                    write(&p, &csv)?;
                    let band_min = table
                        .rows
                        .iter()
                        .filter(|r| (3.7e9..=3.8e9).contains(&r.freq_hz))
                        .map(|r| r.delta_db())
                        .reduce(f64::min);
                    print_json(&json!({
                        "points": table.rows.len(),
                        "band_min_delta_db": band_min,
                        "band_mean_delta_db": mean_delta_db(&table.rows, 3.7e9, 3.8e9),
                        "low_mean_delta_db": mean_delta_db(&table.rows, 3.3e9, 3.5e9),
                    }));
                }
                None => print!("{csv}"),
            }
        }
        Command::Blocks { scenario, address, surface } => {
            let mut bed = testbed(&scenario)?;
            if let (Some(a), Some(hex)) = (address, surface) {
                let addr = BlockAddress::new(a).ok().filter(|a| !a.is_broadcast()).ok_or_else(|| {
                    CliError::new("BAD_ADDRESS", format!("{a} is not a block address"))
                })?;
                let bytes: [u8; 8] = from_hex(&hex)
                    .and_then(|b| b.try_into().ok())
                    .ok_or_else(|| CliError::new("BAD_HEX", "surface must be 16 hex digits"))?;
                bed.apply_block(addr, bytes)?;
            }
            print_json(&bed.blocks());
        }
        Command::Scenario { command } => match command {
            ScenarioCommand::Show { scenario } => print_json(&load_scenario(&scenario)?),
            ScenarioCommand::Validate { file } => {
                let s = Scenario::from_json(&read(&file)?)?;
                s.validate()?;
                print_json(&s);
            }
            ScenarioCommand::Default { four_block } => {
                print_json(&if four_block { Scenario::four_block_steering() } else { Scenario::two_block_default() })
            }
        },
        Command::Serve { scenario, host, port, artifacts } => {
            let bed = testbed(&scenario)?;
            let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::new("IO", e.to_string()))?;
            rt.block_on(async move {
                let listener =
                    ris_server::bind(SocketAddr::new(host, port)).await.map_err(|e| CliError::new("IO", e.to_string()))?;
                let local = listener.local_addr().map_err(|e| CliError::new("IO", e.to_string()))?;
                eprintln!("listening on http://{local}");
                ris_server::serve(listener, ris_server::AppState::with_artifacts(bed, artifacts))
                    .await
                    .map_err(|e| CliError::new("IO", e.to_string()))
            })?;
        }
        Command::Frames { command } => match command {
            FramesCommand::Encode { dest, op, payload } => {
                let dest = BlockAddress::new(dest)?;
                let op = Opcode::parse(&op)
                    .ok_or_else(|| CliError::new("BAD_OPCODE", format!("unknown opcode {op:?}")))?;
                let payload = from_hex(&payload).ok_or_else(|| CliError::new("BAD_HEX", "payload is not hex"))?;
                println!("{}", to_hex(&encode_frame(&Frame::new(dest, op, payload))?));
            }
            FramesCommand::Decode { hex } => {
                let bytes = from_hex(&hex).ok_or_else(|| CliError::new("BAD_HEX", "frame is not hex"))?;
                print_json(&decode_frame(&bytes)?);
            }
        },
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let err = CliError { exit: 2, ..CliError::new("USAGE", e.to_string().trim_end()) };
            eprintln!("{}", serde_json::to_string(&err).expect("serializable"));
            return ExitCode::from(err.exit);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", serde_json::to_string(&e).expect("serializable"));
            ExitCode::from(e.exit)
        }
    }
}
