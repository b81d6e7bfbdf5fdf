use serde::{Deserialize, Serialize};

use super::analyze::{analyze_dump, apply_shared_scale, load_inputs, run_dir_name, vector_csv, write_run, RunAnalysis, RunSummary};
use super::config::RunConfig;
use super::output::{write_index, OutputDir};
use crate::class_stats::BernoulliClassModel;
use crate::divergences::{heatmap_ppm, id_ood_distance, labeled_csv, IdOodDistance};
use crate::error::{Error, Result};

/// Shifted-minus-reference change of a scalar.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummaryDelta {
    pub id: f64,
    pub ood: f64,
    pub delta: f64,
}

impl SummaryDelta {
    fn new(id: f64, ood: f64) -> Self {
        SummaryDelta { id, ood, delta: ood - id }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub id_dir: String,
    pub ood_dir: String,
    pub distance: IdOodDistance,
    pub mean_id_ood_kl: f64,
    pub mean_inter_class_kl: Option<SummaryDelta>,
    pub mean_class_entropy: SummaryDelta,
    pub mean_tail_mass: SummaryDelta,
    pub inter_class_kl_decreased: Option<bool>,
    pub entropy_increased: bool,
}

/// Compares an analyzed reference run against an analyzed shifted run over
/// the classes both contain.
pub fn compare_runs(id: &RunAnalysis, ood: &RunAnalysis, alpha: f64) -> Result<IdOodDistance> {
    id_ood_distance(&named_models(id), &named_models(ood), alpha)
}

fn named_models(run: &RunAnalysis) -> Vec<(&str, &BernoulliClassModel)> {
    run.present
        .iter()
        .map(|&c| (run.models.class_names[c].as_str(), &run.models.models[c]))
        .collect()
}

pub(crate) fn build_report(
    id_dir: String,
    ood_dir: String,
    id: &RunSummary,
    ood: &RunSummary,
    distance: IdOodDistance,
) -> CompareReport {
    let inter = match (id.mean_inter_class_kl, ood.mean_inter_class_kl) {
        (Some(a), Some(b)) => Some(SummaryDelta::new(a, b)),
        _ => None,
    };
    let entropy = SummaryDelta::new(id.mean_class_entropy, ood.mean_class_entropy);
    CompareReport {
        id_dir,
        ood_dir,
        mean_id_ood_kl: distance.per_class.iter().sum::<f64>() / distance.per_class.len() as f64,
        distance,
        inter_class_kl_decreased: inter.map(|d| d.delta < 0.0),
        mean_inter_class_kl: inter,
        entropy_increased: entropy.delta > 0.0,
        mean_class_entropy: entropy,
        mean_tail_mass: SummaryDelta::new(id.mean_tail_mass, ood.mean_tail_mass),
    }
}

pub(crate) fn write_compare(out: &OutputDir, prefix: &str, report: &CompareReport) -> Result<()> {
    let d = &report.distance;
    let (lo, hi) = d.cross.min_max();
    out.write_json(&format!("{prefix}compare.json"), report)?;
    out.write(
        &format!("{prefix}id_ood.csv"),
        vector_csv(&d.classes, "kl_id_ood", &d.per_class)?.as_bytes(),
    )?;
    out.write(
        &format!("{prefix}id_ood_cross.csv"),
        labeled_csv(&d.classes, &d.classes, &d.cross).as_bytes(),
    )?;
    out.write(&format!("{prefix}id_ood_cross.ppm"), &heatmap_ppm(&d.cross, lo, hi, 16))
}

/// Analyzes `inputs[0]` (reference) and `inputs[1]` (shifted) and reports
/// their class-by-class distances and summary deltas.
pub fn cmd_compare(cfg: &RunConfig) -> Result<CompareReport> {
    cfg.validate()?;
    let inputs = load_inputs(cfg)?;
    if inputs.len() != 2 {
        return Err(Error::InvalidArgument(format!(
            "compare needs exactly two inputs on the selected layer, have {}",
            inputs.len()
        )));
    }
    let mut runs = inputs
        .iter()
        .map(|(source, dump)| analyze_dump(dump, cfg, source))
        .collect::<Result<Vec<_>>>()?;
    if cfg.shared_scale {
        apply_shared_scale(&mut runs);
    }
    let distance = compare_runs(&runs[0], &runs[1], cfg.alpha)?;
    let out = OutputDir::create(&cfg.out)?;
    let dirs: Vec<String> = inputs
        .iter()
        .enumerate()
        .map(|(i, (_, dump))| format!("{}_{}", run_dir_name(i, dump), if i == 0 { "id" } else { "ood" }))
        .collect();
    for (dir, run) in dirs.iter().zip(&runs) {
        write_run(&out, dir, run)?;
    }
    let report = build_report(
        dirs[0].clone(),
        dirs[1].clone(),
        &runs[0].summary,
        &runs[1].summary,
        distance,
    );
    write_compare(&out, "", &report)?;
    write_index(out.root())?;
    Ok(report)
}
