use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use mvrearrange::harness::{
    load_config, render_table, run_completion_bench, run_pose_bench, scene_seeds, write_csv, write_dataset,
    write_json, write_report, BenchConfig, HarnessError, ViewMode, Workbench,
};
use mvrearrange::localization::pose_report;
use mvrearrange::perception::{Database, DumpDetail};

#[derive(Parser)]
#[command(name = "mvrearrange", version, about = "Multi-view image-goal tabletop rearrangement")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML bench configuration; defaults are used for missing fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Scene seed; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, env = "MVREARRANGE_OUT", default_value = "results")]
    out: PathBuf,
}

impl Common {
    fn load(&self) -> Result<BenchConfig, HarnessError> {
        let mut cfg = match &self.config {
            Some(p) => load_config(p)?,
            None => BenchConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset of scenes.
    Gen {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        scenes: Option<usize>,
    },
    /// Render the ring views of one initial scene and build its database.
    BuildDb {
        #[command(flatten)]
        common: Common,
        /// Use only the home view.
        #[arg(long)]
        single_view: bool,
    },
    /// Localize the goal objects of one scene and write the pose report.
    Localize {
        #[command(flatten)]
        common: Common,
        /// Database written by `build-db`; built on the fly otherwise.
        #[arg(long)]
        database: Option<PathBuf>,
    },
    /// Localize and rearrange one scene; writes the move log.
    Rearrange {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        database: Option<PathBuf>,
    },
    /// Pose accuracy over a scene suite.
    BenchPose {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        scenes: Option<usize>,
    },
    /// Task completion over a scene suite.
    BenchCompletion {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        scenes: Option<usize>,
    },
}

fn first_regime(cfg: &BenchConfig) -> mvrearrange::sim::RotationRegime {
    cfg.regimes.first().copied().unwrap_or(cfg.sim.rotation)
}

fn database_for(
    wb: &Workbench,
    inst: &mvrearrange::sim::RearrangementInstance,
    path: Option<&Path>,
) -> Result<Database, HarnessError> {
    match path {
        Some(p) => Ok(Database::load(p)?),
        None => wb.database(inst, ViewMode::MultiView),
    }
}

// stdout may be a closed pipe; results are already on disk
fn say(text: &str) {
    let _ = std::io::stdout().write_all(text.as_bytes());
}

fn announce(paths: &[PathBuf]) {
    for p in paths {
        say(&format!("wrote {}\n", p.display()));
    }
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Gen { common, scenes } => {
            let mut cfg = common.load()?;
            cfg.scenes = scenes.unwrap_or(cfg.scenes);
            let wb = Workbench::new(cfg.clone())?;
            let mut instances = Vec::new();
            for &regime in &cfg.regimes {
                for seed in scene_seeds(&cfg) {
                    instances.push(wb.instance(seed, regime)?);
                }
            }
            announce(&[write_dataset(&common.out, &cfg, &instances)?]);
        }
        Command::BuildDb { common, single_view } => {
            let cfg = common.load()?;
            let wb = Workbench::new(cfg.clone())?;
            let inst = wb.instance(cfg.seed, first_regime(&cfg))?;
            let view = if single_view { ViewMode::SingleView } else { ViewMode::MultiView };
            let db = wb.database(&inst, view)?;
            std::fs::create_dir_all(&common.out).map_err(|source| HarnessError::Io {
                path: common.out.clone(),
                source,
            })?;
            let path = common.out.join("database.json");
            db.save(&path)?;
            let summary = common.out.join("database_summary.json");
            write_json(&summary, &db.to_dump(DumpDetail::Summary))?;
            info!("{} instances, {} regions", db.instance_count(), db.region_count());
            announce(&[path, summary]);
        }
        Command::Localize { common, database } => {
            let cfg = common.load()?;
            let wb = Workbench::new(cfg.clone())?;
            let inst = wb.instance(cfg.seed, first_regime(&cfg))?;
            let db = database_for(&wb, &inst, database.as_deref())?;
            let objects = wb.localize(&inst, &db)?;
            std::fs::create_dir_all(&common.out).map_err(|source| HarnessError::Io {
                path: common.out.clone(),
                source,
            })?;
            let path = common.out.join("pose_report.json");
            write_json(&path, &pose_report(&objects))?;
            announce(&[path]);
        }
        Command::Rearrange { common, database } => {
            let cfg = common.load()?;
            let wb = Workbench::new(cfg.clone())?;
            let inst = wb.instance(cfg.seed, first_regime(&cfg))?;
            let db = database_for(&wb, &inst, database.as_deref())?;
            let objects = wb.localize(&inst, &db)?;
            let exec = wb.rearrange(&inst, &db, &objects)?;
            std::fs::create_dir_all(&common.out).map_err(|source| HarnessError::Io {
                path: common.out.clone(),
                source,
            })?;
            let result = common.out.join("execution.json");
            write_json(&result, &exec)?;
            let moves = common.out.join("moves.csv");
            let rows: Vec<_> = exec.log.iter().map(MoveRow::from).collect();
            write_csv(&moves, &rows)?;
            say(&format!(
                "completed {} with {} manipulations ({} buffer moves)\n",
                exec.completed,
                exec.manipulations(),
                exec.buffer_moves.iter().sum::<usize>()
            ));
            announce(&[result, moves]);
        }
        Command::BenchPose { common, scenes } => {
            let mut cfg = common.load()?;
            cfg.scenes = scenes.unwrap_or(cfg.scenes);
            let report = run_pose_bench(&cfg)?;
            say(&render_table(&report));
            announce(&write_report(&report, &common.out)?);
        }
        Command::BenchCompletion { common, scenes } => {
            let mut cfg = common.load()?;
            cfg.scenes = scenes.unwrap_or(cfg.scenes);
            let report = run_completion_bench(&cfg)?;
            say(&render_table(&report));
            announce(&write_report(&report, &common.out)?);
        }
    }
    Ok(())
}

/// Flat move-log row.
#[derive(serde::Serialize)]
struct MoveRow {
    step: usize,
    outer_iteration: usize,
    object: usize,
    kind: mvrearrange::planner::StepKind,
    target_yaw_deg: Option<f64>,
    target_x: Option<f64>,
    target_y: Option<f64>,
    collision: Option<bool>,
    failure_count: usize,
    manipulation: Option<usize>,
}

impl From<&mvrearrange::planner::StepRecord> for MoveRow {
    fn from(r: &mvrearrange::planner::StepRecord) -> Self {
        Self {
            step: r.step,
            outer_iteration: r.outer_iteration,
            object: r.object,
            kind: r.kind,
            target_yaw_deg: r.target.map(|t| t.yaw.to_degrees()),
            target_x: r.target.map(|t| t.tx),
            target_y: r.target.map(|t| t.ty),
            collision: r.collision,
            failure_count: r.failure_count,
            manipulation: r.manipulation,
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
