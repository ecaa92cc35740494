//! The five file-based commands. Each reads checkpoints from and writes
//! artifacts to the configured output directory, and every output is a
//! pure function of the config (byte-identical on rerun).

use std::path::{Path, PathBuf};
use std::time::Instant;

use kamal_core::amalgam::{AmalgamMode, FitReport};
use kamal_core::kalearn::{LayerAutoencoders, Model};
use kamal_core::nets::{load_checkpoint, save_checkpoint, write_container};
use kamal_core::{Network, Split, Tensor};

use crate::config::{Config, DatasetSource, Settings};
use crate::error::{CliError, Result};
use crate::metrics::{log_rows, write_csv, Method, MetricsRow, Status};
use crate::pipeline::{self, DataBundle};

pub const CONFIG_FILE: &str = "config.cfg";
pub const AUTOENCODER_FILE: &str = "autoencoders.kacp";
pub const LAYERWISE_FILE: &str = "student_layerwise.kacp";
pub const JOINT_FILE: &str = "student_joint.kacp";
pub const BASELINE_FILE: &str = "student_baseline.kacp";

pub fn teacher_file(i: usize) -> String {
    format!("teacher{i}.kacp")
}

/// Default teacher checkpoint paths: `teacher1.kacp ..` in the output dir.
pub fn default_teacher_paths(s: &Settings) -> Vec<PathBuf> {
    (1..=s.teachers).map(|i| s.out_dir.join(teacher_file(i))).collect()
}

fn prepare_out(cfg: &Config, s: &Settings) -> Result<()> {
    std::fs::create_dir_all(&s.out_dir).map_err(|e| CliError::io(&s.out_dir, e))?;
    let path = s.out_dir.join(CONFIG_FILE);
    std::fs::write(&path, cfg.to_text()).map_err(|e| CliError::io(&path, e))
}

fn load_net(path: &Path) -> Result<Network> {
    if !path.exists() {
        return Err(CliError::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "checkpoint not found"),
        ));
    }
    load_checkpoint(path).map_err(|e| match e {
        kamal_core::Error::Io(io) => CliError::io(path, io),
        other => other.into(),
    })
}

fn save_net(net: &Network, path: &Path) -> Result<()> {
    save_checkpoint(net, path).map_err(|e| match e {
        kamal_core::Error::Io(io) => CliError::io(path, io),
        other => other.into(),
    })
}

/// Load teachers and check them against the data's class parts.
fn load_teachers(paths: &[PathBuf], data: &DataBundle) -> Result<Vec<Network>> {
    if paths.len() != data.split.parts.len() {
        return Err(CliError::config(
            "teachers.count",
            format!(
                "{} teacher checkpoints given, config says {}",
                paths.len(),
                data.split.parts.len()
            ),
        ));
    }
    let teachers = paths.iter().map(|p| load_net(p)).collect::<Result<Vec<_>>>()?;
    kamal_core::amalgam::check_same_architecture(&teachers).map_err(|e| CliError::config("teachers", e.to_string()))?;
    for (i, (t, part)) in teachers.iter().zip(&data.split.parts).enumerate() {
        if t.spec.num_classes != part.len() {
            return Err(CliError::config(
                "teachers",
                format!(
                    "teacher {} has {} classes but its part has {}",
                    i + 1,
                    t.spec.num_classes,
                    part.len()
                ),
            ));
        }
        if t.spec.input_shape != data.test.image_shape() {
            return Err(CliError::config(
                "teachers",
                format!(
                    "teacher {} expects {:?} images, data has {:?}",
                    i + 1,
                    t.spec.input_shape,
                    data.test.image_shape()
                ),
            ));
        }
    }
    Ok(teachers)
}

fn wall(s: &Settings, start: Instant) -> Option<f64> {
    s.wall_time.then(|| start.elapsed().as_secs_f64())
}

/// Generate the data, train one teacher per class part and write
/// `teacher{i}.kacp` plus `teachers.csv`.
pub fn cmd_train_teachers(cfg: &Config, s: &Settings) -> Result<Vec<PathBuf>> {
    let start = Instant::now();
    prepare_out(cfg, s)?;
    let data = pipeline::load_data(s)?;
    let (teachers, logs) = pipeline::train_teachers(s, &data)?;
    let mut rows = Vec::new();
    let mut paths = Vec::new();
    for (i, (net, log)) in teachers.iter().zip(&logs).enumerate() {
        let path = s.out_dir.join(teacher_file(i + 1));
        save_net(net, &path)?;
        paths.push(path);
        rows.extend(log_rows(
            &format!("teacher{}", i + 1),
            Method::Teacher,
            s.seed,
            log,
            Some(net.count_params()),
        ));
    }
    if let Some(last) = rows.last_mut() {
        last.wall_seconds = wall(s, start);
    }
    write_csv(&s.out_dir.join("teachers.csv"), &rows, false)?;
    Ok(paths)
}

fn curve_rows(experiment: &str, seed: u64, report: &FitReport) -> Vec<MetricsRow> {
    std::iter::once(report.initial_loss)
        .chain(report.loss_curve.iter().copied())
        .enumerate()
        .map(|(epoch, loss)| MetricsRow {
            loss: Some(loss),
            ..MetricsRow::new(experiment, Method::Layerwise, seed, epoch, Split::Train)
        })
        .collect()
}

/// Tensor names of one layer's autoencoders: one pair, or one per IFA step.
pub fn autoencoder_names(layer: &LayerAutoencoders, mode: AmalgamMode) -> Vec<(String, String)> {
    let l = layer.layer;
    if mode == AmalgamMode::Ifa {
        (1..=layer.autoencoders.len())
            .map(|s| (format!("ae.layer{l}.step{s}.enc"), format!("ae.layer{l}.step{s}.dec")))
            .collect()
    } else {
        vec![(format!("ae.layer{l}.enc"), format!("ae.layer{l}.dec"))]
    }
}

/// Feature amalgamation and layer-wise learning from saved teachers;
/// writes `autoencoders.kacp`, `student_layerwise.kacp` and
/// `amalgamate.csv` (autoencoder and stage loss curves).
pub fn cmd_amalgamate(cfg: &Config, s: &Settings, teacher_paths: &[PathBuf]) -> Result<PathBuf> {
    let start = Instant::now();
    prepare_out(cfg, s)?;
    let data = pipeline::load_data(s)?;
    let teachers = load_teachers(teacher_paths, &data)?;
    let out = pipeline::amalgamate(s, &teachers, &data)?;

    let mut tensors: Vec<(String, Tensor)> = Vec::new();
    let mut rows = Vec::new();
    for layer in &out.autoencoders {
        for ((enc, dec), (ae, report)) in autoencoder_names(layer, s.mode)
            .into_iter()
            .zip(layer.autoencoders.iter().zip(&layer.reports))
        {
            rows.extend(curve_rows(&enc.trim_end_matches(".enc").to_string(), s.seed, report));
            tensors.push((enc, ae.enc.value.clone()));
            tensors.push((dec, ae.dec.value.clone()));
        }
    }
    for stage in &out.stages {
        rows.extend(curve_rows(
            &format!("stage{}", stage.layer_index),
            s.seed,
            &stage.report,
        ));
    }
    let header = format!("autoencoders mode={} teachers={}", s.mode, s.teachers);
    let refs: Vec<(&str, &Tensor)> = tensors.iter().map(|(n, t)| (n.as_str(), t)).collect();
    let ae_path = s.out_dir.join(AUTOENCODER_FILE);
    write_container(&ae_path, &header, &refs).map_err(|e| match e {
        kamal_core::Error::Io(io) => CliError::io(&ae_path, io),
        other => other.into(),
    })?;
    let path = s.out_dir.join(LAYERWISE_FILE);
    save_net(&out.student, &path)?;
    if let Some(last) = rows.last_mut() {
        last.wall_seconds = wall(s, start);
    }
    write_csv(&s.out_dir.join("amalgamate.csv"), &rows, false)?;
    Ok(path)
}

/// Joint learning from a saved layer-wise student; optionally also trains
/// the distillation baseline. Writes `student_joint.kacp`
/// (`student_baseline.kacp`) and `learn.csv` with per-epoch train/test
/// rows.
pub fn cmd_learn(
    cfg: &Config,
    s: &Settings,
    student: &Path,
    teacher_paths: &[PathBuf],
    with_baseline: bool,
) -> Result<PathBuf> {
    let start = Instant::now();
    prepare_out(cfg, s)?;
    let data = pipeline::load_data(s)?;
    let teachers = load_teachers(teacher_paths, &data)?;
    let init = load_net(student)?;
    if init.spec.num_classes != data.map.entry_count() || init.spec.input_shape != teachers[0].spec.input_shape {
        return Err(CliError::config(
            "student",
            "student checkpoint does not match the teachers' label map",
        ));
    }
    let (joint, log) = pipeline::learn(s, init, &teachers, &data)?;
    let mut rows = log_rows("learn", Method::Joint, s.seed, &log, Some(joint.count_params()));
    let path = s.out_dir.join(JOINT_FILE);
    save_net(&joint, &path)?;
    if with_baseline {
        let (base, log) = pipeline::baseline(s, &teachers, &data)?;
        rows.extend(log_rows(
            "learn",
            Method::Baseline,
            s.seed,
            &log,
            Some(base.count_params()),
        ));
        save_net(&base, &s.out_dir.join(BASELINE_FILE))?;
    }
    if let Some(last) = rows.last_mut() {
        last.wall_seconds = wall(s, start);
    }
    write_csv(&s.out_dir.join("learn.csv"), &rows, false)?;
    Ok(path)
}

/// Held-out evaluation of the ensemble and any given students; writes
/// `eval.csv` with one row per method.
pub fn cmd_eval(
    cfg: &Config,
    s: &Settings,
    teacher_paths: &[PathBuf],
    students: &[(Method, PathBuf)],
) -> Result<Vec<MetricsRow>> {
    let start = Instant::now();
    prepare_out(cfg, s)?;
    let data = pipeline::load_data(s)?;
    let teachers = load_teachers(teacher_paths, &data)?;
    let mut rows = vec![report_row(
        s,
        Method::Ensemble,
        s.train.epochs_teacher,
        pipeline::eval_model(Model::Ensemble(&teachers), &data)?,
    )];
    for (method, path) in students {
        let net = load_net(path)?;
        if net.spec.num_classes != data.map.entry_count() {
            return Err(CliError::config(
                "student",
                format!(
                    "{} has {} outputs, label map has {}",
                    path.display(),
                    net.spec.num_classes,
                    data.map.entry_count()
                ),
            ));
        }
        let epochs = match method {
            Method::Layerwise => s.train.epochs_layerwise,
            _ => s.train.epochs_joint,
        };
        rows.push(report_row(
            s,
            *method,
            epochs,
            pipeline::eval_model(Model::Single(&net), &data)?,
        ));
    }
    if let Some(last) = rows.last_mut() {
        last.wall_seconds = wall(s, start);
    }
    write_csv(&s.out_dir.join("eval.csv"), &rows, false)?;
    Ok(rows)
}

fn report_row(s: &Settings, method: Method, epoch: usize, r: kamal_core::kalearn::EvalReport) -> MetricsRow {
    MetricsRow {
        accuracy_whole: Some(r.accuracy_whole),
        accuracy_parts: r.accuracy_per_part,
        param_count: Some(r.param_count),
        ..MetricsRow::new("eval", method, s.seed, epoch, Split::Test)
    }
}

/// One ablation cell: a point of the factorial.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Cell {
    pub seed: u64,
    pub teachers: usize,
    pub mode: AmalgamMode,
    pub fam: bool,
    pub layerwise: bool,
}

impl Cell {
    pub fn id(&self) -> String {
        let on = |b: bool| if b { "on" } else { "off" };
        format!(
            "teachers={} mode={} fam={} layerwise={}",
            self.teachers,
            self.mode,
            on(self.fam),
            on(self.layerwise)
        )
    }
}

/// The factorial in output order: seeds, teacher counts, modes, FAM
/// on/off, layer-wise on/off. Its length is
/// `|seeds| * |teachers| * |modes| * 4`.
pub fn ablation_cells(s: &Settings) -> Vec<Cell> {
    let mut cells = Vec::new();
    for &seed in &s.ablate.seeds {
        for &teachers in &s.ablate.teachers {
            for &mode in &s.ablate.modes {
                for fam in [true, false] {
                    for layerwise in [true, false] {
                        cells.push(Cell {
                            seed,
                            teachers,
                            mode,
                            fam,
                            layerwise,
                        });
                    }
                }
            }
        }
    }
    cells
}

/// Settings of one cell: the base settings with the cell's seed, teacher
/// count (and `teachers * classes_per_teacher` synthetic classes), mode
/// and FAM switch.
pub fn cell_settings(s: &Settings, cell: &Cell) -> Settings {
    let mut c = s.clone();
    c.seed = cell.seed;
    c.teachers = cell.teachers;
    c.mode = cell.mode;
    c.fam = cell.fam;
    if let DatasetSource::Synthetic { classes, .. } = &mut c.dataset {
        *classes = cell.teachers * s.ablate.classes_per_teacher;
    }
    c
}

fn run_cell(c: &Settings, cell: &Cell, data: &DataBundle, teachers: &[Network]) -> Result<MetricsRow> {
    let (net, log) = if cell.layerwise {
        let lw = pipeline::amalgamate(c, teachers, data)?;
        pipeline::learn(c, lw.student, teachers, data)?
    } else {
        pipeline::learn_from_scratch(c, teachers, data)?
    };
    let r = pipeline::eval_model(Model::Single(&net), data)?;
    Ok(MetricsRow {
        loss: log.last(Split::Test).map(|r| r.loss),
        accuracy_whole: Some(r.accuracy_whole),
        accuracy_parts: r.accuracy_per_part,
        param_count: Some(r.param_count),
        status: Some(Status::Ok),
        ..MetricsRow::new(cell.id(), Method::Joint, cell.seed, c.train.epochs_joint, Split::Test)
    })
}

/// Run the whole factorial and write `ablate.csv`: one row per cell, in
/// [`ablation_cells`] order. Teachers are trained once per (seed, teacher
/// count) and shared by that group's cells. A failing cell is recorded
/// with status `failed` and the run continues.
pub fn cmd_ablate(cfg: &Config, s: &Settings) -> Result<Vec<MetricsRow>> {
    prepare_out(cfg, s)?;
    let mut rows = Vec::new();
    let mut group: Option<((u64, usize), Result<(DataBundle, Vec<Network>)>)> = None;
    for cell in ablation_cells(s) {
        let start = Instant::now();
        let c = cell_settings(s, &cell);
        let key = (cell.seed, cell.teachers);
        if group.as_ref().map(|(k, _)| *k) != Some(key) {
            let built = pipeline::load_data(&c).and_then(|data| {
                let (teachers, _) = pipeline::train_teachers(&c, &data)?;
                Ok((data, teachers))
            });
            group = Some((key, built));
        }
        let outcome = match &group {
            Some((_, Ok((data, teachers)))) => run_cell(&c, &cell, data, teachers),
            Some((_, Err(e))) => Err(CliError::Numeric(format!("teacher training failed: {e}"))),
            None => unreachable!("group was just built"),
        };
        let mut row = outcome.unwrap_or_else(|e| {
            eprintln!("cell {} (seed {}) failed: {e}", cell.id(), cell.seed);
            MetricsRow {
                status: Some(Status::Failed),
                ..MetricsRow::new(cell.id(), Method::Joint, cell.seed, c.train.epochs_joint, Split::Test)
            }
        });
        row.wall_seconds = wall(s, start);
        rows.push(row);
    }
    write_csv(&s.out_dir.join("ablate.csv"), &rows, true)?;
    Ok(rows)
}
