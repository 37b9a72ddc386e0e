use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use swqkd::datacom::{ber_sweep, write_ber_csv, PamReceiverModel};
use swqkd::harness::calibration::check_anchors;
use swqkd::harness::report;
use swqkd::harness::run::{benchmark_postproc, detect_symbols};
use swqkd::harness::{run_calibration, run_stability, run_sweep, CalibratedParams, Layout, ObSpec, ScenarioConfig, ScenarioFile};
use swqkd::optics::{export_spectrum, write_spectrum_csv, Tap};
use swqkd::postproc::{process_recording, secret_fraction};
use swqkd::source::AliceRecord;
use swqkd::timetag::{self, QttHeader};

#[derive(Parser)]
#[command(name = "swqkd", version, about = "Shortwave QKD co-existence simulator")]
struct Cli {
    /// Overrides the scenario seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Calibrated parameter file; calibration runs in-process when absent.
    #[arg(long, global = true)]
    params: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct ScenarioArg {
    /// Scenario file (TOML).
    #[arg(long)]
    scenario: PathBuf,
}

#[derive(Subcommand)]
enum Cmd {
    /// Analytic (and optionally Monte Carlo) sweep over optical budget.
    Sweep {
        #[command(flatten)]
        scenario: ScenarioArg,
        /// Single value or start:stop:step in dB.
        #[arg(long)]
        ob: Option<ObSpec>,
        /// Run the Monte Carlo pipeline at every point.
        #[arg(long)]
        mc: bool,
        /// Simulated seconds per Monte Carlo point.
        #[arg(long)]
        duration: Option<f64>,
        /// Use the configured link delay instead of acquiring sync.
        #[arg(long)]
        reference_clock: bool,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Long run reported per interval.
    Stability {
        #[command(flatten)]
        scenario: ScenarioArg,
        #[arg(long)]
        duration: Option<f64>,
        #[arg(long)]
        interval: Option<f64>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Power spectral density at a monitoring tap (α, β, γ or δ).
    Spectrum {
        #[arg(long)]
        tap: Tap,
        /// Scenario supplying the channel plan, fiber and filters; defaults
        /// to the few-mode shortwave co-existence layout.
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// Output directory; the CSV goes to stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Back-solves the calibrated parameters and writes them.
    Calibrate {
        #[arg(long, default_value = "params.cfg")]
        out: PathBuf,
    },
    /// Writes a simulated detection record in QTT1 format.
    Simulate {
        #[command(flatten)]
        scenario: ScenarioArg,
        #[arg(long, default_value_t = 0.0)]
        ob: f64,
        #[arg(long, default_value_t = 1.0)]
        duration: f64,
        /// Length-prefixed frames instead of a flat record list.
        #[arg(long)]
        framed: bool,
        /// Output file, `-` for stdout.
        #[arg(long)]
        out: PathBuf,
    },
    /// Post-processes a QTT1 record: sync, gating, sifting, QBER.
    Process {
        #[command(flatten)]
        scenario: ScenarioArg,
        /// QTT1 file, or `-` to read a framed stream from stdin.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        reference_clock: bool,
    },
    /// Single-threaded post-processing throughput.
    Bench {
        #[command(flatten)]
        scenario: ScenarioArg,
        #[arg(long, default_value_t = 0.0)]
        ob: f64,
        #[arg(long, default_value_t = 5.0)]
        duration: f64,
    },
    /// PAM4 bit error rate versus received optical power.
    Ber {
        /// start:stop:step in dBm.
        #[arg(long, default_value = "-20:0:0.5", allow_hyphen_values = true)]
        rop: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn params(cli: &Cli) -> Result<CalibratedParams> {
    match &cli.params {
        Some(p) => CalibratedParams::load(p).with_context(|| format!("reading {}", p.display())),
        None => Ok(CalibratedParams::calibrated()?.clone()),
    }
}

fn load_scenario(cli: &Cli, path: &Path) -> Result<ScenarioConfig> {
    let (id, file) = ScenarioFile::load(path).with_context(|| format!("loading {}", path.display()))?;
    let mut cfg = file.resolve(&id, &params(cli)?)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    let f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    eprintln!("wrote {}", path.display());
    Ok(BufWriter::new(f))
}

fn parse_range(s: &str) -> Result<Vec<f64>> {
    let v: Vec<f64> = s.split(':').map(|x| x.trim().parse::<f64>()).collect::<std::result::Result<_, _>>().context("range must be start:stop:step")?;
    let [a, b, step] = v[..] else { bail!("range must be start:stop:step") };
    if !(step > 0.0 && b >= a) {
        bail!("range needs stop ≥ start and step > 0");
    }
    let n = ((b - a) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|i| a + i as f64 * step).collect())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match &cli.cmd {
        Cmd::Sweep {
            scenario,
            ob,
            mc,
            duration,
            reference_clock,
            out,
        } => {
            let mut cfg = load_scenario(&cli, &scenario.scenario)?;
            if let Some(ob) = ob {
                cfg.ob = *ob;
            }
            if let Some(d) = duration {
                cfg.duration_s = *d;
            }
            cfg.mc |= *mc;
            cfg.reference_clock |= *reference_clock;
            let rep = run_sweep(&cfg)?;
            report::write_sweep_csv(&rep, create(out, &format!("{}_analytic.csv", cfg.id))?)?;
            if cfg.mc {
                report::write_mc_csv(&rep, create(out, &format!("{}_mc.csv", cfg.id))?)?;
            }
            let th = cfg.processor.qber_threshold;
            create(out, &format!("{}_sweep.svg", cfg.id))?.write_all(report::sweep_svg(&rep, th).as_bytes())?;
            print!("{}", report::sweep_summary(&rep, th));
        }
        Cmd::Stability {
            scenario,
            duration,
            interval,
            out,
        } => {
            let cfg = load_scenario(&cli, &scenario.scenario)?;
            let d = duration.unwrap_or(cfg.stability.duration_s);
            let i = interval.unwrap_or(cfg.stability.interval_s);
            let rep = run_stability(&cfg, d, i)?;
            report::write_stability_csv(&rep, create(out, &format!("{}_stability.csv", cfg.id))?)?;
            print!("{}", report::stability_summary(&rep));
        }
        Cmd::Spectrum { tap, scenario, out } => {
            let cfg = match scenario {
                Some(p) => load_scenario(&cli, p)?,
                None => ScenarioFile::preset(Layout::FewModeShortwave, true, 1.0).resolve(Layout::FewModeShortwave.preset_stem(), &params(&cli)?)?,
            };
            let pts = export_spectrum(*tap, &cfg.plan, &cfg.fiber, &cfg.filters)?;
            match out {
                Some(dir) => write_spectrum_csv(&pts, create(dir, &format!("{}_spectrum_{}.csv", cfg.id, tap.ascii()))?)?,
                None => write_spectrum_csv(&pts, io::stdout().lock())?,
            }
        }
        Cmd::Calibrate { out } => {
            let p = run_calibration()?;
            fs::write(out, p.to_file_string()).with_context(|| format!("writing {}", out.display()))?;
            for a in check_anchors(&p)? {
                println!("{:<40} target {:>12.6} achieved {:>12.6} ({:.2e} rel)", a.name, a.target, a.achieved, a.relative_error());
            }
            eprintln!("wrote {}", out.display());
        }
        Cmd::Simulate {
            scenario,
            ob,
            duration,
            framed,
            out,
        } => {
            let cfg = load_scenario(&cli, &scenario.scenario)?;
            let model = cfg.link_model()?;
            let record = AliceRecord::new(&model.source);
            let end = (duration * 1e12 / model.source.symbol_period_ps()).round() as u64;
            let tags = detect_symbols(&model, &record, *ob, 0, end, cfg.seed)?;
            let header = QttHeader::default();
            let w: Box<dyn Write> = if out.as_os_str() == "-" {
                Box::new(BufWriter::new(io::stdout().lock()))
            } else {
                Box::new(BufWriter::new(File::create(out).with_context(|| format!("creating {}", out.display()))?))
            };
            if *framed {
                timetag::write_framed(w, &header, &tags, 4096)?;
            } else {
                timetag::write_file(w, &header, &tags)?;
            }
            eprintln!("{} tags", tags.len());
        }
        Cmd::Process {
            scenario,
            input,
            reference_clock,
        } => {
            let cfg = load_scenario(&cli, &scenario.scenario)?;
            let (_, tags) = if input.as_os_str() == "-" {
                timetag::read_framed(BufReader::new(io::stdin().lock()))?
            } else {
                timetag::read_file(BufReader::new(File::open(input).with_context(|| format!("opening {}", input.display()))?))?
            };
            let reference = (*reference_clock || cfg.reference_clock).then_some(cfg.receiver.arrival_offset_ps);
            let out = process_recording(&tags, &cfg.source, &cfg.processor, reference, cfg.seed)?;
            let q = out.result.qber();
            println!(
                "sync offset {} ps (peak {:.1}, threshold {:.1}, lock {})",
                out.sync.clock_offset_ps, out.sync.correlation_peak, out.sync.threshold, out.sync.lock
            );
            println!("{}", out.result.summary());
            println!("secret fraction {:.4}", secret_fraction(q)?);
        }
        Cmd::Bench { scenario, ob, duration } => {
            let cfg = load_scenario(&cli, &scenario.scenario)?;
            let b = benchmark_postproc(&cfg.link_model()?, *ob, *duration, cfg.seed)?;
            println!("{} tags ({} bytes) in {:.3} s: {:.3e} tags/s", b.tags, b.bytes, b.seconds, b.tags_per_s);
        }
        Cmd::Ber { rop, out } => {
            let pts = ber_sweep(&PamReceiverModel::calibrated(), &parse_range(rop)?);
            match out {
                Some(dir) => write_ber_csv(&pts, create(dir, "datacom_ber.csv")?)?,
                None => write_ber_csv(&pts, io::stdout().lock())?,
            }
        }
    }
    Ok(())
}
