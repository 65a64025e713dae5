use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use nalgebra::{Point2, Vector2};

use smat::error::{Error, Result};
use smat::eval::{evaluate_mot, score_map};
use smat::io;
use smat::nav::{self, NavParams, NavGraph};
use smat::pipeline::{pair_frames, run_sequence, Mode, PipelineConfig};
use smat::sim::{self, SceneConfig};

#[derive(Parser, Debug)]
#[command(name = "smat", version, about = "Moving-object detection and static mapping on simulated lidar")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Pipeline mode: full, front_end_only, back_end_only, visibility_only, occupancy_only.
    #[arg(long, global = true, default_value = "full")]
    mode: Mode,
    /// Scene seed; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Scene config (key = value).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    gamma: Option<f64>,
    #[arg(long, global = true)]
    occ_threshold: Option<f64>,
    /// Voxel size for the map, background subtraction and scoring.
    #[arg(long, global = true)]
    resolution: Option<f64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate the corridor scene and write scans, poses and ground truth.
    Simulate,
    /// Run the pipeline on a simulated or recorded sequence.
    Run {
        /// Directory holding poses.txt and scans/.
        #[arg(long)]
        input: PathBuf,
    },
    /// Score a map against ground-truth static and dynamic maps.
    EvalMap {
        #[arg(long)]
        map: PathBuf,
        #[arg(long)]
        gt_static: PathBuf,
        #[arg(long)]
        gt_dynamic: PathBuf,
    },
    /// Score predicted tracks against ground-truth tracks.
    EvalMot {
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        /// IoU threshold for MOTA and IDF1.
        #[arg(long, default_value_t = 0.5)]
        alpha: f64,
    },
    /// Run all five modes on one scene and tabulate map quality and runtime.
    Ablate,
    /// Pick the next viewpoint and frontier from a map.
    NavStep {
        #[arg(long)]
        map: PathBuf,
        /// Robot position as `x,y`.
        #[arg(long, value_parser = parse_pair, allow_hyphen_values = true)]
        position: (f64, f64),
        /// Reference direction as `x,y`.
        #[arg(long, value_parser = parse_pair, allow_hyphen_values = true)]
        reference: (f64, f64),
    },
}

fn parse_pair(s: &str) -> std::result::Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or_else(|| format!("expected x,y but got {s:?}"))?;
    let parse = |t: &str| t.trim().parse::<f64>().map_err(|e| format!("{t:?}: {e}"));
    Ok((parse(a)?, parse(b)?))
}

impl Common {
    fn scene_config(&self) -> Result<SceneConfig> {
        let mut cfg = match &self.config {
            Some(path) => SceneConfig::from_toml_str(&io::read_text(path)?)?,
            None => SceneConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        Ok(cfg)
    }

    fn resolution(&self) -> f64 {
        self.resolution.unwrap_or(0.2)
    }

    fn pipeline_config(&self, mode: Mode) -> PipelineConfig {
        let mut cfg = PipelineConfig { mode, ..PipelineConfig::default() };
        if let Some(g) = self.gamma {
            cfg.back_end.gamma = g;
        }
        if let Some(t) = self.occ_threshold {
            cfg.back_end.occ_threshold = t;
        }
        if let Some(r) = self.resolution {
            cfg.back_end.map_resolution = r;
            cfg.front_end.bs_resolution = r;
        }
        cfg
    }

    fn out_dir(&self) -> Result<&Path> {
        self.out_dir.as_deref().ok_or_else(|| Error::Config("this command needs --out-dir".into()))
    }
}

fn simulate(c: &Common) -> Result<()> {
    let out = c.out_dir()?;
    let scene = sim::generate_scene(&c.scene_config()?)?;
    let run = sim::simulate_run(&scene);
    let mut poses = Vec::with_capacity(run.frames.len());
    for (i, f) in run.frames.iter().enumerate() {
        io::write_scan(&io::scan_path(out, i), &f.scan)?;
        poses.push(io::PoseRecord::from_pose(f.scan.timestamp, &f.pose));
    }
    io::write_poses(&out.join("poses.txt"), &poses)?;
    let gt = sim::ground_truth_from_frames(&run.frames, c.resolution())?;
    io::write_map(&out.join("gt_static.map"), &gt.static_map)?;
    io::write_map(&out.join("gt_dynamic.map"), &gt.dynamic_map)?;
    io::write_tracks(&out.join("gt_tracks.txt"), &sim::ground_truth_tracks(&scene, &run, 5))?;
    println!(
        "wrote {} scans, {} static and {} dynamic ground-truth voxels to {}",
        run.frames.len(),
        gt.static_map.len(),
        gt.dynamic_map.len(),
        out.display()
    );
    Ok(())
}

fn run(c: &Common, input: &Path) -> Result<()> {
    let out = c.out_dir()?;
    let records = io::read_poses(&input.join("poses.txt"))?;
    let mut scans = Vec::with_capacity(records.len());
    let mut poses = Vec::with_capacity(records.len());
    for (i, r) in records.iter().enumerate() {
        scans.push(io::read_scan(&io::scan_path(input, i))?);
        poses.push(r.pose()?);
    }
    let frames = pair_frames(scans, poses)?;
    let cfg = c.pipeline_config(c.mode);
    let report = run_sequence(&frames, &cfg)?;
    let map = match &report.final_map {
        Some(m) => m.clone(),
        None => smat::VoxelMap::new(cfg.back_end.map_resolution)?,
    };
    io::write_map(&out.join("map.map"), &map)?;
    io::write_tracks(&out.join("tracks.txt"), &report.tracks)?;
    io::write_text(&out.join("report.txt"), &report.to_text())?;
    io::write_text(&out.join("timing.txt"), &report.timing_text())?;
    println!("{} frames, {} map voxels, {} track records", report.frames.len(), map.len(), report.tracks.len());
    Ok(())
}

fn ablate(c: &Common) -> Result<()> {
    let scene = sim::generate_scene(&c.scene_config()?)?;
    let run = sim::simulate_run(&scene);
    let gt = sim::ground_truth_from_frames(&run.frames, c.resolution())?;
    println!("{:<16} {:>7} {:>7} {:>7} {:>12} {:>9}", "mode", "PR", "RR", "F1", "be_ms/scan", "total_s");
    for mode in Mode::ALL {
        let started = Instant::now();
        let report = run_sequence(&run.frames, &c.pipeline_config(mode))?;
        let map = report.final_map.clone().unwrap_or(smat::VoxelMap::new(c.resolution())?);
        let s = score_map(&map, &gt.static_map, &gt.dynamic_map)?;
        let pct = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |v| format!("{:.2}", 100.0 * v));
        println!(
            "{:<16} {:>7} {:>7} {:>7} {:>12.2} {:>9.2}",
            mode.name(),
            pct(s.pr),
            pct(s.rr),
            s.f1.map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}")),
            report.timings.mean_back_end_ms(),
            started.elapsed().as_secs_f64()
        );
    }
    Ok(())
}

fn nav_step(map: &Path, position: (f64, f64), reference: (f64, f64)) -> Result<()> {
    let map = io::read_map(map)?;
    let params = NavParams::default();
    let points: Vec<_> = map.centers().collect();
    let grid = nav::terrain_cost(&points, &params)?;
    let frontiers = nav::extract_frontiers(&grid);
    let robot = Point2::new(position.0, position.1);
    let mut graph = NavGraph::new(&params)?;
    nav::extend_graph(&mut graph, &robot, &frontiers, &Vector2::new(reference.0, reference.1))?;
    nav::aggregate_scores(&mut graph);
    match nav::select_best(&graph, &robot) {
        Ok(sel) => {
            let v = &graph.viewpoints[sel.viewpoint];
            let f = &graph.frontiers[sel.frontier];
            println!("viewpoint {:.3} {:.3} score {:.6}", v.position.x, v.position.y, v.score);
            println!("frontier {:.3} {:.3} score {:.6}", f.position.x, f.position.y, f.score);
        }
        Err(e) => println!("{e}"),
    }
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<()> {
    let c = &cli.common;
    match &cli.command {
        Command::Simulate => simulate(c),
        Command::Run { input } => run(c, input),
        Command::EvalMap { map, gt_static, gt_dynamic } => {
            let s = score_map(&io::read_map(map)?, &io::read_map(gt_static)?, &io::read_map(gt_dynamic)?)?;
            println!("{s}");
            Ok(())
        }
        Command::EvalMot { gt, pred, alpha } => {
            println!("{}", evaluate_mot(&io::read_tracks(gt)?, &io::read_tracks(pred)?, *alpha));
            Ok(())
        }
        Command::Ablate => ablate(c),
        Command::NavStep { map, position, reference } => nav_step(map, *position, *reference),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("smat: {e}");
            ExitCode::FAILURE
        }
    }
}
