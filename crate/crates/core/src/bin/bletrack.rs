use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use bletrack::apps::report::{trajectories, zone_popularity, PopularityOptions};
use bletrack::apps::sft::write_samples;
use bletrack::apps::{
    count_new_visitors, export_sft, frechet, load_zones, merge_receptions, parse_duration, validate_zones,
    visitor_flow, ExportOptions, SceneInfo, Template, TruthIndex,
};
use bletrack::dsp::iqfile::{load_iq, save_iq};
use bletrack::dsp::receiver::{receive, ReceiverConfig};
use bletrack::grouping::{ingest_all, GroupingParams};
use bletrack::locate::{localize_all, KalmanConfig, LocateConfig};
use bletrack::simulate::{generate, render_iq, Profile, RenderConfig, Scenario, ScenarioKind, SimOutput};
use bletrack::store::Store;

#[derive(Parser)]
#[command(name = "bletrack", version, about = "Passive BLE advertisement tracking")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate a scenario and write packets plus ground truth.
    Simulate {
        /// Scenario TOML file, or a preset: apartment, lab, mall.
        #[arg(long)]
        scenario: String,
        #[arg(long)]
        seed: Option<u64>,
        /// Packet output (JSON Lines).
        #[arg(long)]
        out: PathBuf,
        /// Ground-truth output; defaults to `<out>.truth.jsonl`.
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Preset duration.
        #[arg(long, default_value = "10m")]
        duration: String,
        /// Preset population, e.g. `iphone=13,airpods=12,samsung=13,pixel=12`.
        #[arg(long, default_value = "iphone=13,airpods=12,samsung=13,pixel=12")]
        devices: String,
        /// Preset arrivals are spread over this long.
        #[arg(long, default_value = "60s")]
        arrival: String,
        /// Write the resolved scenario as TOML.
        #[arg(long)]
        scenario_out: Option<PathBuf>,
        /// Also render this packet as one I/Q capture per node into `--iq-dir`.
        #[arg(long, requires = "iq_dir")]
        iq_packet: Option<usize>,
        #[arg(long)]
        iq_dir: Option<PathBuf>,
    },
    /// Decode per-node I/Q captures into a merged packet file.
    Ingest {
        /// One capture per node, in node order.
        #[arg(long = "iq", required = true)]
        iq: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Cross-node join tolerance, µs.
        #[arg(long, default_value_t = 4)]
        tolerance_us: i64,
        /// Added to measured power to obtain dBm.
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        cal_offset_db: f64,
    },
    /// Group packets into devices and write the store.
    Group {
        #[arg(long)]
        packets: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        grouping_params: Option<PathBuf>,
    },
    /// Localize every device over consecutive windows.
    Localize {
        #[arg(long)]
        store: PathBuf,
        /// Scenario TOML or preset name, for node poses and area.
        #[arg(long)]
        scenario: String,
        #[arg(long, default_value = "3s")]
        window: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Export fine-tuning samples over sliding windows.
    ExportSft {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        scenario: String,
        /// Template TOML; the built-in one if omitted.
        #[arg(long)]
        template: Option<PathBuf>,
        /// Ground truth to label positions with.
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long, default_value = "10s")]
        window: String,
        #[arg(long)]
        stride: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// New visitors, visitor flow and zone popularity.
    Report {
        #[arg(long)]
        store: PathBuf,
        /// Report window length; the window ends at the last packet unless
        /// `--start` is given.
        #[arg(long)]
        window: String,
        /// Window start, offset from time zero.
        #[arg(long)]
        start: Option<String>,
        /// Flow bin length; one bin spanning the window if omitted.
        #[arg(long)]
        bin: Option<String>,
        /// Zone polygon file (TOML `[[zone]]` tables).
        #[arg(long, requires = "scenario")]
        zones: Option<PathBuf>,
        #[arg(long)]
        scenario: Option<String>,
        #[arg(long, default_value = "60s")]
        dwell: String,
    },
    /// Write smoothed trajectories as CSV, optionally scored against truth.
    Track {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        scenario: String,
        #[arg(long)]
        device: Option<u64>,
        /// Fix window per trajectory point.
        #[arg(long, default_value = "3s")]
        window: String,
        #[arg(long)]
        out: PathBuf,
        /// Prints the Fréchet distance to each device's true path.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
}

fn dur(s: &str) -> Result<i64> {
    Ok(parse_duration(s)?)
}

fn scenario(spec: &str, seed: Option<u64>, duration_s: f64) -> Result<Scenario> {
    let mut sc = match spec.parse::<ScenarioKind>() {
        Ok(kind) => Scenario::preset(kind, duration_s, seed.unwrap_or(0)),
        Err(_) => Scenario::load(Path::new(spec)).with_context(|| format!("loading scenario {spec}"))?,
    };
    if let Some(s) = seed {
        sc.seed = s;
    }
    Ok(sc)
}

fn population(spec: &str) -> Result<Vec<Profile>> {
    let mut out = Vec::new();
    for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (name, n) = part.split_once('=').unwrap_or((part, "1"));
        let profile: Profile = serde_json::from_value(serde_json::Value::String(name.trim().into()))
            .with_context(|| format!("unknown device profile {name:?}"))?;
        let n: usize = n.trim().parse().with_context(|| format!("bad count in {part:?}"))?;
        out.extend(std::iter::repeat_n(profile, n));
    }
    Ok(out)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn open(path: &Path) -> Result<File> {
    File::open(path).with_context(|| format!("opening {}", path.display()))
}

fn load_store(path: &Path) -> Result<Store> {
    Store::load(path).with_context(|| format!("loading store {}", path.display()))
}

fn time_span(store: &Store) -> Option<(i64, i64)> {
    let recs = store.records_in_order();
    Some((recs.first()?.1.timestamp, recs.last()?.1.timestamp + 1))
}

fn write_lines<T: serde::Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut w = create(path)?;
    for it in items {
        serde_json::to_writer(&mut w, it)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn run(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Simulate { scenario: spec, seed, out, truth, duration, devices, arrival, scenario_out, iq_packet, iq_dir } => {
            let mut sc = scenario(&spec, seed, dur(&duration)? as f64 / 1e6)?;
            if spec.parse::<ScenarioKind>().is_ok() {
                sc.populate(&population(&devices)?, dur(&arrival)? as f64 / 1e6);
            }
            let sim = generate(&sc)?;
            sim.write_packets(create(&out)?)?;
            let truth = truth.unwrap_or_else(|| out.with_extension("truth.jsonl"));
            sim.write_truth(create(&truth)?)?;
            if let Some(p) = scenario_out {
                std::fs::write(&p, sc.to_toml()).with_context(|| format!("writing {}", p.display()))?;
            }
            if let (Some(index), Some(dir)) = (iq_packet, iq_dir) {
                if index >= sim.packets.len() {
                    bail!("packet {index} out of range ({} packets)", sim.packets.len());
                }
                std::fs::create_dir_all(&dir)?;
                let mut rng = ChaCha8Rng::seed_from_u64(sc.seed ^ index as u64);
                for (n, frame) in render_iq(&sim, index, &sc, &RenderConfig::default(), &mut rng).into_iter().enumerate() {
                    if let Some(f) = frame {
                        save_iq(&dir.join(format!("node{n}.iq")), &f)?;
                    }
                }
            }
            let heard = sim.packets.iter().filter(|p| p.heard()).count();
            println!("{} packets ({heard} heard) from {} devices", sim.packets.len(), sc.devices.len());
        }
        Cmd::Ingest { iq, out, tolerance_us, cal_offset_db } => {
            let cfg = ReceiverConfig { cal_offset_db, ..ReceiverConfig::default() };
            let mut receptions = Vec::with_capacity(iq.len());
            for path in &iq {
                let frame = load_iq(path).with_context(|| format!("reading {}", path.display()))?;
                receptions.push(receive(&frame, &cfg)?);
            }
            let packets = merge_receptions(&receptions, tolerance_us);
            write_lines(&out, &packets)?;
            println!("{} packets", packets.len());
        }
        Cmd::Group { packets, out, grouping_params } => {
            let params = match grouping_params {
                Some(p) => GroupingParams::from_file(&p)?,
                None => GroupingParams::default(),
            };
            let packets = SimOutput::read_packets(open(&packets)?)?;
            let mut records: Vec<_> = packets.iter().filter_map(|p| p.to_record()).collect();
            records.sort_by_key(|r| r.timestamp);
            let nodes = records.first().map_or(0, |r| r.phy.len());
            let mut store = Store::new(params.store_config(nodes));
            ingest_all(records, &mut store, &params)?;
            store.persist(&out)?;
            println!("{} packets grouped into {} devices", store.record_count(), store.len());
        }
        Cmd::Localize { store, scenario: spec, window, out } => {
            let store = load_store(&store)?;
            let sc = scenario(&spec, None, 1.0)?;
            let cfg = LocateConfig { window_us: dur(&window)?, ..LocateConfig::with_area(sc.area) };
            if cfg.window_us <= 0 {
                bail!("window must be positive");
            }
            let mut fixes = Vec::new();
            if let Some((t0, t1)) = time_span(&store) {
                let mut t = t0;
                while t < t1 {
                    fixes.extend(localize_all(&store, t, t + cfg.window_us, &sc.nodes, &cfg).fixes);
                    t += cfg.window_us;
                }
            }
            write_lines(&out, &fixes)?;
            println!("{} fixes", fixes.len());
        }
        Cmd::ExportSft { store, scenario: spec, template, truth, window, stride, out } => {
            let store = load_store(&store)?;
            let sc = scenario(&spec, None, 1.0)?;
            let template = match template {
                Some(p) => Template::load(&p)?,
                None => Template::builtin(),
            };
            let sample_us = dur(&window)?;
            let opts = ExportOptions {
                sample_us,
                stride_us: stride.as_deref().map(dur).transpose()?.unwrap_or(sample_us),
                locate: LocateConfig::with_area(sc.area),
                ..ExportOptions::default()
            };
            let index = match truth {
                Some(p) => Some(TruthIndex::new(&store, &SimOutput::read_truth(open(&p)?)?)),
                None => None,
            };
            let label = |id, ts| index.as_ref().and_then(|i| i.label(id, ts));
            let (t0, t1) = time_span(&store).context("store is empty")?;
            let labels: Option<&dyn Fn(u64, i64) -> Option<[f64; 2]>> = index.as_ref().map(|_| &label as _);
            let samples = export_sft(&store, &SceneInfo::from_scenario(&sc), t0, t1, &template, &opts, labels)?;
            write_samples(&samples, create(&out)?)?;
            println!("{} samples", samples.len());
        }
        Cmd::Report { store, window, start, bin, zones, scenario: spec, dwell } => {
            let store = load_store(&store)?;
            let len = dur(&window)?;
            if len <= 0 {
                bail!("window must be positive");
            }
            let end = time_span(&store).map_or(0, |s| s.1);
            let t0 = match start {
                Some(s) => dur(&s)?,
                None => end - len,
            };
            let t1 = t0 + len;
            let (new, _) = count_new_visitors(&store, t0, t1, None);
            println!("new visitors: {new}");
            let flow = visitor_flow(&store, t0, t1, bin.as_deref().map(dur).transpose()?.unwrap_or(len))?;
            print!("{}", flow.to_csv());
            if let Some(path) = zones {
                let sc = scenario(spec.as_deref().unwrap_or_default(), None, 1.0)?;
                let zones = load_zones(&path)?;
                validate_zones(&zones, Some(sc.area))?;
                let opts = PopularityOptions { dwell_us: dur(&dwell)?, locate: LocateConfig::with_area(sc.area), ..Default::default() };
                println!("zone,visits");
                for z in zone_popularity(&store, t0, t1, &zones, &sc.nodes, &opts)? {
                    println!("{},{}", z.zone, z.visits);
                }
            }
        }
        Cmd::Track { store, scenario: spec, device, window, out, truth } => {
            let store = load_store(&store)?;
            let sc = scenario(&spec, None, 1.0)?;
            let step = dur(&window)?;
            if step <= 0 {
                bail!("window must be positive");
            }
            let (t0, t1) = time_span(&store).context("store is empty")?;
            let locate = LocateConfig::with_area(sc.area);
            let mut tracks = trajectories(&store, t0, t1, &sc.nodes, step, &locate, &KalmanConfig::default());
            if let Some(d) = device {
                tracks.retain(|(id, _)| *id == d);
                if tracks.is_empty() {
                    bail!("no trajectory for device {d}");
                }
            }
            let mut w = create(&out)?;
            for (i, (_, t)) in tracks.iter().enumerate() {
                let csv = t.to_csv();
                // One header for the whole file.
                w.write_all(if i == 0 { csv.as_bytes() } else { csv.split_once('\n').map_or("", |s| s.1).as_bytes() })?;
            }
            w.flush()?;
            if let Some(p) = truth {
                let index = TruthIndex::new(&store, &SimOutput::read_truth(open(&p)?)?);
                println!("device_id,true_device,frechet_m");
                for (id, t) in &tracks {
                    let Some(d) = index.true_device(*id) else { continue };
                    let truth: Vec<[f64; 2]> = t.points.iter().filter_map(|p| index.position(d, p.ts_us)).collect();
                    println!("{id},{d},{:.3}", frechet(&t.positions(), &truth));
                }
            }
            eprintln!("{} trajectories", tracks.len());
        }
    }
    Ok(())
}

fn main() -> std::process::ExitCode {
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(()) => std::process::ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::ExitCode::FAILURE
        }
    }
}
