//! `evaluate`: score generated frames against a reference dataset, or compare
//! two metric reports.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use portrait_core::metrics::{aed_apd, compare_reports, csim, fid, l1_metric, perceptual_metric, MetricRecord};
use portrait_core::toyworld::{frame_file, load_dataset, read_image, ToyEmbedder, ToyEstimator};
use portrait_core::types::Image;

use crate::config::{MetricKind, RunConfig};
use crate::Failure;

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Directory of generated frames named `<index:06>.png`.
    #[arg(long, required_unless_present = "compare", requires = "reference")]
    generated: Option<PathBuf>,
    /// Reference dataset manifest with images.
    #[arg(long)]
    reference: Option<PathBuf>,
    /// Metrics to compute; defaults to the configured selection.
    #[arg(long, value_enum, value_delimiter = ',')]
    metrics: Vec<MetricKind>,
    /// Run configuration supplying the metric selection and perceptual features.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Identity embedder for FID and CSIM.
    #[arg(long)]
    embedder: Option<PathBuf>,
    /// Parameter estimator for AED and APD.
    #[arg(long)]
    estimator: Option<PathBuf>,
    /// Experiment label written into each record.
    #[arg(long, default_value = "eval")]
    experiment: String,
    /// Write records to this file instead of stdout.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Compare two reports: is the second at least as good on each metric?
    #[arg(long, num_args = 2, value_names = ["A", "B"], conflicts_with = "generated")]
    compare: Vec<PathBuf>,
}

/// Generated frames paired with the reference frames by index.
fn paired_frames(generated: &Path, reference: &Path) -> Result<(Vec<Image>, Vec<Image>)> {
    let reference = load_dataset(reference)?;
    let mut gen = Vec::new();
    let mut truth = Vec::new();
    for f in reference.frames() {
        let img = f.image.clone().ok_or_else(|| Failure::new(crate::Category::Data, format!("reference frame {} has no image", f.index)))?;
        let path = generated.join(frame_file(f.index));
        if !path.exists() {
            return Err(Failure::new(crate::Category::Data, format!("unpaired sets: no generated frame {}", path.display())).into());
        }
        gen.push(read_image(&path)?);
        truth.push(img);
    }
    let pngs = fs::read_dir(generated)
        .with_context(|| format!("listing {}", generated.display()))?
        .filter(|e| e.as_ref().is_ok_and(|e| e.path().extension().is_some_and(|x| x == "png")))
        .count();
    if pngs != truth.len() {
        return Err(Failure::new(crate::Category::Data, format!("unpaired sets: {pngs} generated frames for {} references", truth.len())).into());
    }
    Ok((gen, truth))
}

/// Compute each requested metric once.
pub fn evaluate(
    gen: &[&Image],
    truth: &[&Image],
    metrics: &[MetricKind],
    cfg: &RunConfig,
    embedder: Option<&ToyEmbedder>,
    estimator: Option<&ToyEstimator>,
    experiment: &str,
) -> Result<Vec<MetricRecord>> {
    let need = |what: &str| Failure::config(format!("metric needs --{what}"));
    let mut out = Vec::new();
    let mut push = |metric: &str, value: f64| out.push(MetricRecord { experiment: experiment.into(), metric: metric.into(), value });
    let mut seen = Vec::new();
    for &m in metrics {
        if seen.contains(&m) {
            continue;
        }
        seen.push(m);
        match m {
            MetricKind::L1 => push("l1", l1_metric(gen, truth)?),
            MetricKind::Perceptual => push("perceptual", perceptual_metric(gen, truth, &cfg.train.feature_extractor()?)?),
            MetricKind::Fid => push("fid", fid(gen, truth, embedder.ok_or_else(|| need("embedder"))?)?),
            MetricKind::Csim => push("csim", csim(gen, truth, embedder.ok_or_else(|| need("embedder"))?)?.mean),
            MetricKind::AedApd => {
                let d = aed_apd(gen, truth, estimator.ok_or_else(|| need("estimator"))?)?;
                push("aed", d.aed);
                push("apd", d.apd);
            }
        }
    }
    Ok(out)
}

fn table(records: &[MetricRecord]) -> String {
    let mut head = format!("{:<16}", "experiment");
    let mut row = format!("{:<16}", records.first().map_or("", |r| r.experiment.as_str()));
    for r in records {
        head.push_str(&format!(" {:>12}", r.metric.to_uppercase()));
        row.push_str(&format!(" {:>12.5}", r.value));
    }
    format!("{head}\n{row}\n")
}

fn read_report(path: &Path) -> Result<Vec<MetricRecord>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| Failure::new(crate::Category::Format, format!("{}: {e}", path.display())).into()))
        .collect()
}

pub fn run(a: Args) -> Result<()> {
    let stdout = std::io::stdout();
    let mut stdout = stdout.lock();
    if let [ra, rb] = a.compare.as_slice() {
        for c in compare_reports(&read_report(ra)?, &read_report(rb)?) {
            writeln!(stdout, "{}", serde_json::to_string(&c)?)?;
        }
        return Ok(());
    }
    let cfg = RunConfig::load(a.config.as_deref())?;
    let metrics = if a.metrics.is_empty() { cfg.metrics.clone() } else { a.metrics.clone() };
    let generated = a.generated.as_ref().expect("required by clap");
    let reference = a.reference.as_ref().expect("required by clap");
    let (gen, truth) = paired_frames(generated, reference)?;
    let embedder = a.embedder.as_deref().map(ToyEmbedder::load).transpose()?;
    let estimator = a.estimator.as_deref().map(ToyEstimator::load).transpose()?;
    let g: Vec<&Image> = gen.iter().collect();
    let t: Vec<&Image> = truth.iter().collect();
    let records = evaluate(&g, &t, &metrics, &cfg, embedder.as_ref(), estimator.as_ref(), &a.experiment)?;
    let lines: String = records.iter().map(|r| serde_json::to_string(r).map(|s| s + "\n")).collect::<Result<_, _>>()?;
    match &a.report {
        Some(path) => fs::write(path, lines).with_context(|| format!("writing {}", path.display()))?,
        None => write!(stdout, "{lines}")?,
    }
    write!(stdout, "{}", table(&records))?;
    Ok(())
}
