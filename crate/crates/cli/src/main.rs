use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use uwbscan_core::seed::trial_seed;
use uwbscan_core::sim::parse_snr;
use uwbscan_core::{
    classify, design_pulses, detect, material_response, sample_cir, ChannelError, ChannelProfile, DesignConfig,
    DesignError, DetectionError, DetectionThresholds, MaterialKind, MaterialSignature, PulseSet, PulseSetError,
    SimConfig, SimError, Simulation, Waveform, WaveformError,
};

#[derive(Parser)]
#[command(name = "uwbscan", version, about = "UWB pulse design, ranging, positioning and presence detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Design an orthogonal pulse set under the spectral mask.
    Design(DesignArgs),
    /// Run one positioning trial and print it as JSON.
    Locate(LocateArgs),
    /// Run the Monte-Carlo SNR sweep and write CSV results.
    Sweep(SweepArgs),
    /// Classify a medium from tx/rx waveforms or a measured signature.
    Detect(DetectArgs),
    /// Dump a multipath channel realization or a material signature.
    Cir(CirArgs),
}

#[derive(Args)]
struct DesignArgs {
    /// Design configuration JSON; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// GA seed, overriding the configuration.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct LocateArgs {
    /// Simulation configuration JSON; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed, overriding the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Trial index under the master seed.
    #[arg(long, default_value_t = 0)]
    trial: u32,
    /// SNR in dB, or `inf`; defaults to the first grid value.
    #[arg(long, value_parser = parse_snr)]
    snr: Option<f64>,
    /// Also write the trial to `locate.json` in this directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated SNR grid in dB; `inf` disables noise.
    #[arg(long, value_parser = parse_snr, value_delimiter = ',')]
    snr: Option<Vec<f64>>,
    #[arg(long)]
    trials: Option<usize>,
    /// Output directory, overriding the configuration.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run trials on one thread.
    #[arg(long)]
    serial: bool,
}

#[derive(Args)]
#[command(group = clap::ArgGroup::new("input").required(true).args(["tx", "signature", "material"]))]
struct DetectArgs {
    /// Transmitted waveform CSV (`t,amplitude`).
    #[arg(long, requires = "rx")]
    tx: Option<PathBuf>,
    /// Received waveform CSV on the same grid as `--tx`.
    #[arg(long, requires = "tx")]
    rx: Option<PathBuf>,
    /// Signature CSV (`freq_hz,attenuation_db,phase_rad`).
    #[arg(long)]
    signature: Option<PathBuf>,
    /// Built-in material signature.
    #[arg(long)]
    material: Option<MaterialKind>,
    /// Analysis band `LO,HI` in Hz.
    #[arg(long, value_parser = parse_band)]
    band: Option<(f64, f64)>,
    /// Threshold JSON; defaults apply when omitted.
    #[arg(long)]
    thresholds: Option<PathBuf>,
}

#[derive(Args)]
struct CirArgs {
    /// Channel profile JSON; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Dump this material's signature instead of a tap realization.
    #[arg(long)]
    material: Option<MaterialKind>,
    /// Output CSV; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug)]
enum CliError {
    Config(String),
    Infeasible(String),
    Io(String),
    Failed(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Failed(_) => 1,
            CliError::Config(_) => 2,
            CliError::Infeasible(_) => 3,
            CliError::Io(_) => 4,
        }
    }

    fn io(path: &Path, e: io::Error) -> Self {
        CliError::Io(format!("{}: {e}", path.display()))
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Infeasible(m) => write!(f, "infeasible: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
            CliError::Failed(m) => f.write_str(m),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Config(_) | SimError::Csv(_) => CliError::Config(e.to_string()),
            SimError::Design(d) => d.into(),
            SimError::PulseSet(p) => p.into(),
            SimError::Channel(c) => c.into(),
            SimError::Io { .. } => CliError::Io(e.to_string()),
            SimError::Ranging(_) | SimError::Waveform(_) => CliError::Failed(e.to_string()),
        }
    }
}

impl From<DesignError> for CliError {
    fn from(e: DesignError) -> Self {
        match e {
            DesignError::Infeasible { .. } => CliError::Infeasible(e.to_string()),
            DesignError::PulseSet(p) => p.into(),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<PulseSetError> for CliError {
    fn from(e: PulseSetError) -> Self {
        match e {
            PulseSetError::Io(_) => CliError::Io(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<ChannelError> for CliError {
    fn from(e: ChannelError) -> Self {
        match e {
            ChannelError::Io(_) => CliError::Io(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<DetectionError> for CliError {
    fn from(e: DetectionError) -> Self {
        match e {
            DetectionError::Channel(c) => c.into(),
            _ => CliError::Failed(e.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Design(a) => run_design(a),
        Command::Locate(a) => run_locate(a),
        Command::Sweep(a) => run_sweep(a),
        Command::Detect(a) => run_detect(a),
        Command::Cir(a) => run_cir(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("uwbscan: {e}");
            ExitCode::from(e.code())
        }
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(|e| CliError::io(path, e))
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn print_json<T: Serialize>(value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Failed(e.to_string()))?;
    writeln!(io::stdout().lock(), "{text}").map_err(|e| CliError::Io(format!("stdout: {e}")))
}

fn parse_band(s: &str) -> Result<(f64, f64), String> {
    let (lo, hi) = s.split_once(',').ok_or("expected LO,HI")?;
    let parse = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("{v:?}: {e}"));
    let (lo, hi) = (parse(lo)?, parse(hi)?);
    if !(lo.is_finite() && hi.is_finite() && 0.0 <= lo && lo < hi) {
        return Err(format!("band must satisfy 0 <= LO < HI, got {lo},{hi}"));
    }
    Ok((lo, hi))
}

fn load_sim_config(path: Option<&Path>) -> Result<SimConfig, CliError> {
    Ok(match path {
        Some(p) => SimConfig::load(p)?,
        None => SimConfig::default(),
    })
}

fn write_pulse_set(dir: &Path, set: &PulseSet, cfg: &DesignConfig) -> Result<(), CliError> {
    set.save(&dir.join("pulse_set.json"))?;
    set.write_pulses_csv(create(&dir.join("pulses.csv"))?)?;
    set.write_psd_csv(create(&dir.join("psd.csv"))?, &cfg.mask, cfg.nfft, cfg.prf_hz)?;
    Ok(())
}

fn run_design(args: DesignArgs) -> Result<(), CliError> {
    let mut cfg: DesignConfig = match &args.config {
        Some(p) => read_json(p)?,
        None => DesignConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.ga.seed = seed;
    }
    create_dir(&args.out)?;
    match design_pulses(&cfg) {
        Ok(run) => {
            write_pulse_set(&args.out, &run.pulse_set, &cfg)?;
            let history = args.out.join("history.csv");
            run.write_history_csv(create(&history)?).map_err(|e| CliError::io(&history, e))?;
            print_json(&run.report)
        }
        Err(DesignError::Infeasible { best, report, generations }) => {
            // The best individual is still written for inspection.
            write_pulse_set(&args.out, &best, &cfg)?;
            print_json(&report)?;
            Err(DesignError::Infeasible { best, report, generations }.into())
        }
        Err(e) => Err(e.into()),
    }
}

fn run_locate(args: LocateArgs) -> Result<(), CliError> {
    let mut cfg = load_sim_config(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let snr = match args.snr {
        Some(s) => s,
        None => *cfg.snr_db.first().ok_or_else(|| CliError::Config("empty SNR grid".into()))?,
    };
    let seed = trial_seed(cfg.seed, 0, args.trial);
    let sim = Simulation::new(cfg)?;
    let result = sim.run_trial(args.trial as usize, snr, seed)?;
    if let Some(dir) = &args.out {
        create_dir(dir)?;
        let path = dir.join("locate.json");
        let text = serde_json::to_string_pretty(&result).map_err(|e| CliError::Failed(e.to_string()))?;
        std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
    }
    print_json(&result)
}

fn run_sweep(args: SweepArgs) -> Result<(), CliError> {
    let mut cfg = load_sim_config(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(snr) = args.snr {
        cfg.snr_db = snr;
    }
    if let Some(trials) = args.trials {
        cfg.trials = trials;
    }
    if let Some(out) = args.out {
        cfg.output_dir = out;
    }
    if args.serial {
        cfg.parallel = false;
    }
    cfg.validate()?;
    let sim = Simulation::new(cfg)?;
    let output = sim.sweep()?;
    output.write_all(&sim.config().output_dir)?;

    let stdout = io::stdout();
    let mut w = stdout.lock();
    let line = |w: &mut io::StdoutLock, s: String| writeln!(w, "{s}").map_err(|e| CliError::Io(format!("stdout: {e}")));
    line(&mut w, format!("{:>8} {:>6} {:>10} {:>12} {:>12} {:>14}", "snr_db", "fixes", "fail_rate", "toa_nmse", "range_nmse", "mean_err_m"))?;
    for r in &output.table.rows {
        line(
            &mut w,
            format!(
                "{:>8} {:>6} {:>10.4} {:>12.4e} {:>12.4e} {:>14.6}",
                r.snr_db, r.fixes, r.fix_failure_rate, r.toa_nmse, r.range_nmse, r.mean_position_error_m
            ),
        )?;
    }
    Ok(())
}

fn read_waveform(path: &Path) -> Result<Waveform, CliError> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    Waveform::read_csv(BufReader::new(file)).map_err(|e| match e {
        WaveformError::Parse(_) => CliError::Config(format!("{}: {e}", path.display())),
        _ => CliError::Failed(format!("{}: {e}", path.display())),
    })
}

fn run_detect(args: DetectArgs) -> Result<(), CliError> {
    let thresholds: DetectionThresholds = match &args.thresholds {
        Some(p) => read_json(p)?,
        None => DetectionThresholds::default(),
    };
    let band = args.band;
    let verdict = if let (Some(tx), Some(rx)) = (&args.tx, &args.rx) {
        detect(&read_waveform(tx)?, &read_waveform(rx)?, band, &thresholds)?
    } else {
        let sig = match (&args.signature, args.material) {
            (Some(path), _) => {
                let file = File::open(path).map_err(|e| CliError::io(path, e))?;
                MaterialSignature::read_csv(BufReader::new(file))?
            }
            (None, Some(kind)) => material_response(kind),
            (None, None) => unreachable!("clap requires an input"),
        };
        let sig = match band {
            Some((lo, hi)) => sig.band(lo, hi)?,
            None => sig,
        };
        classify(&sig, &thresholds)?
    };
    print_json(&verdict)
}

fn run_cir(args: CirArgs) -> Result<(), CliError> {
    let mut sink: Box<dyn Write> = match &args.out {
        Some(p) => Box::new(create(p)?),
        None => Box::new(io::stdout().lock()),
    };
    match args.material {
        Some(kind) => material_response(kind).write_csv(&mut sink)?,
        None => {
            let profile: ChannelProfile = match &args.config {
                Some(p) => read_json(p)?,
                None => ChannelProfile::default(),
            };
            sample_cir(&profile, args.seed)?.write_csv(&mut sink)?;
        }
    }
    sink.flush().map_err(|e| CliError::Io(e.to_string()))
}
