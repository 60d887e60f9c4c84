use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use pcstream::codec::QualityLevel;
use pcstream::pccore::synth::{ring_poses, synth_frame, Body};
use pcstream::pccore::{load_ply, PointCloudFrame, SynthConfig};
use pcstream_harness::sequence::{manifest_poses, read_manifest, write_synthetic};
use pcstream_harness::{encode, report, run_experiment, ExperimentConfig};

#[derive(Parser)]
#[command(name = "pcstream", version, about = "Tiled adaptive point cloud streaming experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic capture as frame_%05d.ply files plus manifest.json.
    Synth {
        #[arg(long, default_value_t = 130_000)]
        points: usize,
        #[arg(long, default_value_t = 150)]
        frames: usize,
        #[arg(long, default_value_t = 15.0)]
        fps: f64,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 3)]
        sensors: usize,
        /// Write ASCII PLY instead of binary.
        #[arg(long)]
        ascii: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every condition of an experiment config.
    Simulate { config: PathBuf },
    /// Compare frames.csv files (or directories holding one).
    Report {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// Also write the table as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Build the adaptation set of one frame and list its representations.
    Encode {
        /// PLY file; sensor poses come from manifest.json beside it.
        #[arg(long, conflicts_with = "synth")]
        input: Option<PathBuf>,
        /// Use synthetic frame 0 with this many points instead.
        #[arg(long)]
        synth: Option<usize>,
        /// Quality levels as depth:qp, ascending.
        #[arg(long, value_delimiter = ',', default_value = "6:75,7:75,9:75")]
        levels: Vec<String>,
        /// Write the bitstreams and representations.json here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_level(s: &str) -> Result<QualityLevel> {
    let (d, q) = s.split_once(':').with_context(|| format!("level {s:?} is not depth:qp"))?;
    Ok(QualityLevel::new(d.trim().parse()?, q.trim().parse()?)?)
}

fn encode_input(input: Option<PathBuf>, synth: Option<usize>) -> Result<(PointCloudFrame, Vec<pcstream::pccore::SensorPose<f64>>)> {
    match (input, synth) {
        (Some(path), _) => {
            let frame = load_ply(&path).with_context(|| format!("cannot load {}", path.display()))?;
            let dir = path.parent().unwrap_or(std::path::Path::new("."));
            let poses = manifest_poses(&read_manifest(dir)?)?;
            Ok((frame, poses))
        }
        (None, Some(points)) => {
            let cfg = SynthConfig {
                point_count: points,
                frame_count: 1,
                ..SynthConfig::default()
            };
            Ok((synth_frame(&cfg, 0)?, cfg.sensor_poses))
        }
        (None, None) => bail!("give --input <ply> or --synth <points>"),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth {
            points,
            frames,
            fps,
            seed,
            sensors,
            ascii,
            out,
        } => {
            let body = Body::default();
            let cfg = SynthConfig {
                point_count: points,
                sensor_poses: ring_poses(sensors, body.center, 1.6),
                seed,
                frame_count: frames,
                fps,
                body,
            };
            let m = write_synthetic(&cfg, &out, !ascii)?;
            println!("wrote {} frames at {} fps to {}", m.frame_count, m.fps, out.display());
        }
        Command::Simulate { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let summary = run_experiment(&cfg)?;
            let dirs: Vec<PathBuf> = summary
                .conditions
                .iter()
                .map(|c| cfg.output_dir.join(&c.condition.name))
                .collect();
            let rows = report::load_rows(&dirs)?;
            print!("{}", report::render_text(&rows));
            println!("results in {}", cfg.output_dir.display());
        }
        Command::Report { inputs, csv } => {
            let rows = report::load_rows(&inputs)?;
            print!("{}", report::render_text(&rows));
            if let Some(path) = csv {
                let file = std::fs::File::create(&path).with_context(|| format!("cannot write {}", path.display()))?;
                report::write_csv(&rows, file)?;
            }
        }
        Command::Encode {
            input,
            synth,
            levels,
            out,
        } => {
            let qualities = levels.iter().map(|l| parse_level(l)).collect::<Result<Vec<_>>>()?;
            let (frame, poses) = encode_input(input, synth)?;
            let r = encode::encode_frame(&frame, &poses, &qualities, out.as_deref())?;
            print!("{}", encode::render_text(&r));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
