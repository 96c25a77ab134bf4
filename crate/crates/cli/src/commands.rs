use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use log::{info, warn};
use odocal::dataset::{read_frame_csv, write_frame_csv, write_landmarks_csv, write_trajectory_csv};
use odocal::pointcloud::extract_landmark;
use odocal::simulator::render_frames;
use odocal::{
    multi_restart, simulate, split_dataset, CalibrationError, Dataset, LandmarkObservation,
    Parameter, ParameterStats, RestartConfig, RestartSummary, VehicleParams,
};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::Failure;

/// Contents of `result.json`.
#[derive(Debug, Serialize, Deserialize)]
pub struct ResultFile {
    pub nominal: VehicleParams,
    pub ground_truth: Option<VehicleParams>,
    pub restart_config: RestartConfig,
    #[serde(flatten)]
    pub summary: RestartSummary,
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path)
        .map(BufWriter::new)
        .with_context(|| format!("cannot create {}", path.display()))
        .map_err(Failure::Data)
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>, Failure> {
    Ok(csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(create(path)?))
}

fn out_dir(flag: Option<PathBuf>, fallback: &Path) -> Result<PathBuf, Failure> {
    let dir = flag.unwrap_or_else(|| fallback.to_path_buf());
    fs::create_dir_all(&dir)
        .with_context(|| format!("cannot create output directory {}", dir.display()))
        .map_err(Failure::Data)?;
    Ok(dir)
}

fn data<T, E: Into<anyhow::Error>>(
    r: Result<T, E>,
    what: impl FnOnce() -> String,
) -> Result<T, Failure> {
    r.map_err(|e| Failure::Data(e.into().context(what())))
}

pub fn simulate_cmd(
    cfg: &ExperimentConfig,
    seed: Option<u64>,
    out: Option<PathBuf>,
) -> Result<(), Failure> {
    let mut sim_cfg = cfg.simulation.clone().ok_or_else(|| {
        Failure::Usage(anyhow!(
            cfg.simulation_error("config has no [simulation] table".into())
        ))
    })?;
    if let Some(s) = seed {
        sim_cfg.seed = s;
    }
    let sim = simulate(&sim_cfg)
        .map_err(|e| Failure::Usage(anyhow!(cfg.simulation_error(e.to_string()))))?;
    let dir = out_dir(out, &cfg.output_dir)?;

    let path = dir.join("dataset.csv");
    data(sim.dataset.write_csv(create(&path)?), || {
        format!("writing {}", path.display())
    })?;
    let path = dir.join("trajectory.csv");
    data(
        write_trajectory_csv(create(&path)?, &sim.ground_truth),
        || format!("writing {}", path.display()),
    )?;

    if cfg.frames.enabled {
        let frames_dir = dir.join("frames");
        data(fs::create_dir_all(&frames_dir), || {
            format!("creating {}", frames_dir.display())
        })?;
        let frames = render_frames(
            &sim.ground_truth,
            sim_cfg.landmark_world,
            &cfg.frames.cylinder(),
            &cfg.frames.lidar(sim_cfg.noise.point_std),
            cfg.frames.ground_extent,
            sim_cfg.seed,
        );
        let mut manifest = csv_writer(&frames_dir.join("manifest.csv"))?;
        data(manifest.write_record(["index", "t", "file"]), || {
            "writing manifest".into()
        })?;
        for (k, (cloud, (t, _))) in frames.iter().zip(&sim.ground_truth).enumerate() {
            let name = format!("frame_{k:06}.csv");
            let path = frames_dir.join(&name);
            data(write_frame_csv(create(&path)?, cloud), || {
                format!("writing {}", path.display())
            })?;
            data(manifest.serialize((k, t, &name)), || {
                "writing manifest".into()
            })?;
        }
        data(manifest.flush(), || "writing manifest".into())?;
        info!("wrote {} frames to {}", frames.len(), frames_dir.display());
    }

    let split = split_dataset(&sim.dataset, &cfg.split).map_err(|e| Failure::Data(e.into()))?;
    let (s, t) = split.counts();
    println!(
        "records: {} ({} straight, {} turn), written to {}",
        sim.dataset.len(),
        s,
        t,
        dir.display()
    );
    Ok(())
}

/// Frames listed by `manifest.csv`, or every `frame_*.csv` timed by `rate`.
fn list_frames(dir: &Path, rate: f64) -> Result<Vec<(f64, PathBuf)>, Failure> {
    let manifest = dir.join("manifest.csv");
    if manifest.is_file() {
        let mut rdr = data(csv::Reader::from_path(&manifest), || {
            format!("reading {}", manifest.display())
        })?;
        let mut out = Vec::new();
        for row in rdr.deserialize::<(usize, f64, String)>() {
            let (_, t, file) = data(row, || format!("reading {}", manifest.display()))?;
            out.push((t, dir.join(file)));
        }
        return Ok(out);
    }
    let entries = data(fs::read_dir(dir), || format!("reading {}", dir.display()))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("frame_") && n.ends_with(".csv"))
        })
        .collect();
    files.sort();
    Ok(files
        .into_iter()
        .enumerate()
        .map(|(k, p)| (k as f64 / rate, p))
        .collect())
}

/// Replaces each record's landmark with the extracted one at the same time
/// and drops records without one.
fn merge_observations(dataset: &Dataset, obs: &[LandmarkObservation]) -> Dataset {
    let mut out = dataset.clone();
    let mut j = 0;
    out.records.retain_mut(|r| {
        while j < obs.len() && obs[j].timestamp < r.t - 1e-9 {
            j += 1;
        }
        match obs.get(j) {
            Some(o) if (o.timestamp - r.t).abs() <= 1e-9 => {
                r.landmark = o.position;
                true
            }
            _ => false,
        }
    });
    out
}

pub fn extract_cmd(
    cfg: &ExperimentConfig,
    frames_dir: &Path,
    dataset: Option<&Path>,
    out: Option<PathBuf>,
) -> Result<(), Failure> {
    let rate = cfg.simulation.as_ref().map_or(10.0, |s| s.rate);
    if !frames_dir.is_dir() {
        return Err(Failure::Data(anyhow!(
            "{} is not a directory",
            frames_dir.display()
        )));
    }
    let frames = list_frames(frames_dir, rate)?;
    if frames.is_empty() {
        return Err(Failure::Data(anyhow!(
            "no frames found in {}",
            frames_dir.display()
        )));
    }

    let mut observations = Vec::new();
    let mut previous = None;
    let (mut unreadable, mut missing) = (0, 0);
    for (t, path) in &frames {
        let cloud = match File::open(path)
            .map_err(anyhow::Error::from)
            .and_then(|f| read_frame_csv(BufReader::new(f)).map_err(anyhow::Error::from))
        {
            Ok(c) => c,
            Err(e) => {
                warn!("skipping unreadable frame {}: {e:#}", path.display());
                unreadable += 1;
                continue;
            }
        };
        match extract_landmark(&cloud, *t, &cfg.extraction, previous) {
            Ok(Some(o)) => {
                previous = Some(o.position);
                observations.push(o);
            }
            Ok(None) => missing += 1,
            Err(e) => return Err(Failure::Usage(anyhow!("extraction settings: {e}"))),
        }
    }
    if 2 * unreadable > frames.len() {
        return Err(Failure::Data(anyhow!(
            "{unreadable} of {} frames are unreadable",
            frames.len()
        )));
    }

    let dir = out_dir(out, &cfg.output_dir)?;
    let path = dir.join("landmarks.csv");
    data(write_landmarks_csv(create(&path)?, &observations), || {
        format!("writing {}", path.display())
    })?;
    info!("{missing} frames without a landmark, {unreadable} unreadable");
    println!(
        "observations: {} of {} frames, written to {}",
        observations.len(),
        frames.len(),
        path.display()
    );

    if let Some(ds_path) = dataset {
        let ds = read_dataset(ds_path)?;
        let merged = merge_observations(&ds, &observations);
        let path = dir.join("dataset_extracted.csv");
        data(merged.write_csv(create(&path)?), || {
            format!("writing {}", path.display())
        })?;
        println!(
            "merged dataset: {} records, written to {}",
            merged.len(),
            path.display()
        );
    }
    Ok(())
}

fn read_dataset(path: &Path) -> Result<Dataset, Failure> {
    let file = data(File::open(path), || {
        format!("cannot open {}", path.display())
    })?;
    let ds = data(Dataset::read_csv(BufReader::new(file)), || {
        format!("reading {}", path.display())
    })?;
    data(ds.validate(), || format!("validating {}", path.display()))?;
    Ok(ds)
}

fn calibration_failure(e: CalibrationError) -> Failure {
    match e {
        CalibrationError::RadiusStageImpossible
        | CalibrationError::GeometryStageImpossible(_)
        | CalibrationError::Optimize { .. } => Failure::Stage(e.into()),
        CalibrationError::InvalidBounds { .. } | CalibrationError::InvalidRestarts(_) => {
            Failure::Usage(e.into())
        }
        _ => Failure::Data(e.into()),
    }
}

fn stats_line(s: &ParameterStats) -> String {
    let err = s
        .relative_error
        .map_or_else(|| "-".to_string(), |e| format!("{:.4}%", 100.0 * e));
    format!(
        "{:<14}{:>14.8}{:>14.3e}{:>14.8}{:>12}",
        s.name, s.mean, s.std, s.median, err
    )
}

pub fn calibrate_cmd(
    cfg: &ExperimentConfig,
    dataset_path: &Path,
    seed: Option<u64>,
    out: Option<PathBuf>,
) -> Result<(), Failure> {
    let ds = read_dataset(dataset_path)?;
    if ds.drive_type != cfg.nominal.drive_type() {
        return Err(Failure::Data(anyhow!(
            "dataset is {} but the config describes a {} vehicle",
            ds.drive_type,
            cfg.nominal.drive_type()
        )));
    }
    let mut restart_cfg = cfg.restarts;
    if let Some(s) = seed {
        restart_cfg.seed = s;
    }
    let ground_truth = cfg
        .ground_truth
        .or_else(|| cfg.simulation.as_ref().map(|s| s.true_params));
    let summary = multi_restart(
        &ds,
        &cfg.nominal,
        &cfg.split,
        &cfg.optimizer,
        &restart_cfg,
        ground_truth.as_ref(),
    )
    .map_err(calibration_failure)?;

    let dir = out_dir(out, &cfg.output_dir)?;
    let result = ResultFile {
        nominal: cfg.nominal,
        ground_truth,
        restart_config: restart_cfg,
        summary,
    };
    let path = dir.join("result.json");
    let mut w = create(&path)?;
    data(serde_json::to_writer_pretty(&mut w, &result), || {
        format!("writing {}", path.display())
    })?;
    data(writeln!(w).and_then(|_| w.flush()), || {
        format!("writing {}", path.display())
    })?;
    write_traces(&dir, &result)?;

    let s = &result.summary;
    println!(
        "split: {} straight, {} turn; {} restarts",
        s.split_counts.0,
        s.split_counts.1,
        s.runs.len()
    );
    println!(
        "{:<14}{:>14}{:>14}{:>14}{:>12}",
        "parameter", "mean", "std", "median", "rel.err"
    );
    println!("{}", stats_line(&s.wheel_radius));
    println!("{}", stats_line(&s.geometry));
    println!(
        "mean stage time: {} {:.6} s, {} {:.6} s",
        s.wheel_radius.name, s.mean_stage_time.0, s.geometry.name, s.mean_stage_time.1
    );
    println!("results written to {}", dir.display());
    Ok(())
}

/// Per-restart iterate traces, one CSV per stage.
fn write_traces(dir: &Path, result: &ResultFile) -> Result<(), Failure> {
    let s = &result.summary;
    let names = [&s.wheel_radius.name, &s.geometry.name];
    for (stage, name) in names.iter().enumerate() {
        let path = dir.join(format!("trace_{name}.csv"));
        let mut w = csv_writer(&path)?;
        let err = || format!("writing {}", path.display());
        data(
            w.write_record(["restart", "iteration", "value", "loss"]),
            err,
        )?;
        for (k, run) in s.runs.iter().enumerate() {
            let trace = if stage == 0 {
                &run.radius_trace
            } else {
                &run.geometry_trace
            };
            for (i, it) in trace.iterates.iter().enumerate() {
                data(w.serialize((k, i, it.x[0], it.loss)), err)?;
            }
        }
        data(w.flush(), err)?;
    }
    Ok(())
}

pub fn report_cmd(result_path: &Path, out: Option<PathBuf>) -> Result<(), Failure> {
    let file = data(File::open(result_path), || {
        format!("cannot open {}", result_path.display())
    })?;
    let result: ResultFile = data(serde_json::from_reader(BufReader::new(file)), || {
        format!("{} is not a calibration result", result_path.display())
    })?;
    let s = &result.summary;
    if s.runs.is_empty() {
        return Err(Failure::Data(anyhow!(
            "{} holds no restarts",
            result_path.display()
        )));
    }
    let fallback = result_path.parent().unwrap_or(Path::new("."));
    let dir = out_dir(out, fallback)?;
    let (rname, gname) = (&s.wheel_radius.name, &s.geometry.name);

    let path = dir.join("curves.csv");
    let mut w = csv_writer(&path)?;
    let err = || format!("writing {}", path.display());
    data(
        w.write_record(["restart", "parameter", "iteration", "value", "loss"]),
        err,
    )?;
    for (k, run) in s.runs.iter().enumerate() {
        for (name, trace) in [(rname, &run.radius_trace), (gname, &run.geometry_trace)] {
            for (i, it) in trace.iterates.iter().enumerate() {
                data(w.serialize((k, name, i, it.x[0], it.loss)), err)?;
            }
        }
    }
    data(w.flush(), err)?;

    let path = dir.join("distribution.csv");
    let mut w = csv_writer(&path)?;
    let err = || format!("writing {}", path.display());
    data(
        w.write_record([
            "restart",
            "initial_wheel_radius",
            "initial_geometry",
            rname,
            gname,
        ]),
        err,
    )?;
    for (k, run) in s.runs.iter().enumerate() {
        data(
            w.serialize((
                k,
                run.initial.wheel_radius(),
                run.initial.geometry(),
                run.estimate.get(Parameter::WheelRadius),
                run.estimate.get(Parameter::Geometry),
            )),
            err,
        )?;
    }
    data(w.flush(), err)?;

    let path = dir.join("quartiles.csv");
    let mut w = csv_writer(&path)?;
    let err = || format!("writing {}", path.display());
    data(
        w.write_record([
            "parameter",
            "n",
            "min",
            "q1",
            "median",
            "q3",
            "max",
            "mean",
            "std",
        ]),
        err,
    )?;
    for p in [&s.wheel_radius, &s.geometry] {
        data(
            w.serialize((
                &p.name,
                s.runs.len(),
                p.min,
                p.q1,
                p.median,
                p.q3,
                p.max,
                p.mean,
                p.std,
            )),
            err,
        )?;
    }
    data(w.flush(), err)?;
    println!(
        "report for {} restarts written to {}",
        s.runs.len(),
        dir.display()
    );
    Ok(())
}
