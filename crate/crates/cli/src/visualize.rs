//! `visualize`: principal-component scatter plots of parameter sets and loss
//! curves from a training log.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use portrait_core::losses::LossRecord;
use portrait_core::metrics::{project_params_2d, ProjectedSet, ProjectionTarget};
use portrait_core::toyworld::load_dataset;
use portrait_core::training::{read_loss_log, TrainState};
use portrait_core::types::FaceParams;
use serde::Serialize;

use crate::plot;
use crate::{output_dir, Failure};

pub const PROJECTION_FILE: &str = "projection.json";
pub const LOSS_PLOT: &str = "loss.png";
pub const LOSS_LEGEND: &str = "loss_legend.json";
const WIDTH: u32 = 480;
const HEIGHT: u32 = 360;

pub fn scatter_file(target: ProjectionTarget) -> &'static str {
    match target {
        ProjectionTarget::Expression => "params_expression.png",
        ProjectionTarget::Pose => "params_pose.png",
    }
}

#[derive(Debug, clap::Args)]
#[command(group(clap::ArgGroup::new("input").required(true).multiple(true).args(["sets", "checkpoint", "log"])))]
pub struct Args {
    /// Labeled parameter set as `LABEL=MANIFEST`; repeatable.
    #[arg(long = "set", value_parser = parse_set)]
    sets: Vec<(String, PathBuf)>,
    /// Add the parameter space a checkpoint was trained on as one set.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Training loss log to plot.
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_set(s: &str) -> Result<(String, PathBuf), String> {
    match s.split_once('=') {
        Some((label, path)) if !label.is_empty() && !path.is_empty() => Ok((label.to_string(), PathBuf::from(path))),
        _ => Err(format!("expected LABEL=MANIFEST, got `{s}`")),
    }
}

#[derive(Serialize)]
struct Legend<'a> {
    label: &'a str,
    color: [u8; 3],
}

#[derive(Serialize)]
struct Projection<'a> {
    legend: Vec<Legend<'a>>,
    expression: &'a [ProjectedSet],
    pose: &'a [ProjectedSet],
}

/// Write one scatter per projection target plus the projected points.
pub fn plot_sets(sets: &[(String, Vec<FaceParams>)], out: &Path) -> Result<()> {
    if let Some((label, _)) = sets.iter().find(|(_, ps)| ps.is_empty()) {
        return Err(Failure::new(crate::Category::Data, format!("parameter set `{label}` is empty")).into());
    }
    let mut projected = Vec::new();
    for target in [ProjectionTarget::Expression, ProjectionTarget::Pose] {
        let proj = project_params_2d(sets, target)?;
        let points: Vec<Vec<[f64; 2]>> = proj.iter().map(|s| s.points.clone()).collect();
        let path = out.join(scatter_file(target));
        plot::scatter(&points, WIDTH, HEIGHT).save(&path).with_context(|| format!("writing {}", path.display()))?;
        projected.push(proj);
    }
    let legend = sets.iter().enumerate().map(|(i, (label, _))| Legend { label, color: plot::color(i) }).collect();
    let doc = Projection { legend, expression: &projected[0], pose: &projected[1] };
    fs::write(out.join(PROJECTION_FILE), serde_json::to_string_pretty(&doc)?)?;
    Ok(())
}

/// Series of log10 loss values against record position, one per component
/// present in the log.
pub fn loss_series(records: &[LossRecord]) -> Vec<(&'static str, Vec<(f64, f64)>)> {
    type Get = fn(&LossRecord) -> Option<f64>;
    let parts: [(&str, Get); 7] = [
        ("total_g", |r| Some(r.total_g)),
        ("rec", |r| Some(r.rec)),
        ("vel", |r| Some(r.vel)),
        ("per", |r| r.per),
        ("con", |r| r.con),
        ("adv_g", |r| r.adv_g),
        ("adv_d", |r| r.adv_d),
    ];
    parts
        .iter()
        .filter_map(|(name, get)| {
            let pts: Vec<(f64, f64)> =
                records.iter().enumerate().filter_map(|(i, r)| get(r).map(|v| (i as f64, v.max(1e-12).log10()))).collect();
            (!pts.is_empty()).then_some((*name, pts))
        })
        .collect()
}

pub fn plot_log(records: &[LossRecord], out: &Path) -> Result<()> {
    if records.is_empty() {
        return Err(Failure::new(crate::Category::Data, "loss log is empty").into());
    }
    let series = loss_series(records);
    let pts: Vec<Vec<(f64, f64)>> = series.iter().map(|(_, s)| s.clone()).collect();
    let path = out.join(LOSS_PLOT);
    plot::lines(&pts, WIDTH, HEIGHT).save(&path).with_context(|| format!("writing {}", path.display()))?;
    let legend: Vec<Legend> = series.iter().enumerate().map(|(i, (label, _))| Legend { label, color: plot::color(i) }).collect();
    let doc = serde_json::json!({ "y": "log10(loss)", "x": "record", "records": records.len(), "legend": legend });
    fs::write(out.join(LOSS_LEGEND), serde_json::to_string_pretty(&doc)?)?;
    Ok(())
}

pub fn run(a: Args) -> Result<()> {
    let out = output_dir(a.out)?;
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let mut sets = Vec::new();
    if let Some(path) = &a.checkpoint {
        let state = TrainState::load(path)?;
        let label = serde_json::to_value(state.space.label)?.as_str().unwrap_or("space").to_string();
        sets.push((label, state.space.entries));
    }
    for (label, path) in &a.sets {
        let ds = load_dataset(path)?;
        sets.push((label.clone(), ds.params().cloned().collect()));
    }
    if !sets.is_empty() {
        plot_sets(&sets, &out)?;
    }
    if let Some(log) = &a.log {
        plot_log(&read_loss_log(log)?, &out)?;
    }
    log::info!("wrote plots to {}", out.display());
    Ok(())
}
