use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{Metric, RunConfig};
use super::output::{write_index, OutputDir};
use crate::ablations::{
    class_mean_interactions, clouds_from_dump, energy_distances, prototype_interaction_kl, softmax_output_kl,
    CloudSource, PairSampling, PairwiseSummary,
};
use crate::class_stats::{accumulate_dump, class_entropy, ClassModels};
use crate::divergences::{
    heatmap_ppm, labeled_csv, mean_class_entropy, mean_inter_class, pairwise_matrix, shared_scale,
    DivergenceMatrix, Normalisation,
};
use crate::error::{Error, Result};
use crate::interactions::{sample_masks, ThresholdMode};
use crate::sparsity::{build_histogram, path_frequencies, tail_mass, Histogram};
use crate::tensorio::{load_dump_with, npy, ActivationDump, DenseMatrix, Dtype, Strictness};

const CELL_PX: usize = 16;

/// Colour range of a heatmap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scale {
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassTail {
    pub class: String,
    pub samples: u64,
    pub tail_mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationScalars {
    pub metric: String,
    pub inter_mean: Option<f64>,
    pub intra_mean: Option<f64>,
}

/// Contents of a run's `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub model_id: String,
    pub layer_id: String,
    pub source: String,
    pub sample_count: usize,
    pub threshold_mode: ThresholdMode,
    pub alpha: f64,
    pub bins: usize,
    pub units: String,
    /// How path KL is reduced over coordinates.
    pub kl_reduction: String,
    /// How class pairs are averaged for the inter-class mean.
    pub pair_averaging: String,
    pub classes: Vec<String>,
    pub absent_classes: Vec<String>,
    /// `None` when fewer than two classes have samples.
    pub mean_inter_class_kl: Option<f64>,
    pub mean_class_entropy: f64,
    pub class_entropies: Vec<f64>,
    pub overall_entropy: f64,
    pub tail_threshold: f64,
    pub tail_mass: Vec<ClassTail>,
    pub mean_tail_mass: f64,
    pub heatmap_scale: Scale,
    pub shared_scale: Option<Scale>,
    pub ablations: Vec<AblationScalars>,
}

/// Everything computed for one dump.
#[derive(Debug, Clone)]
pub struct RunAnalysis {
    pub summary: RunSummary,
    pub models: ClassModels,
    /// Ids of classes with samples, in matrix order.
    pub present: Vec<usize>,
    pub matrix: DivergenceMatrix,
    pub histograms: Vec<Histogram>,
    pub ablations: Vec<PairwiseSummary>,
    /// `S x (m n)` 0/1 masks when requested.
    pub masks: Option<DenseMatrix>,
}

/// Analyzes an in-memory dump. `source` is recorded verbatim.
pub fn analyze_dump(dump: &ActivationDump, cfg: &RunConfig, source: &str) -> Result<RunAnalysis> {
    cfg.validate()?;
    let models = accumulate_dump(dump, cfg.threshold_mode)?;
    let present: Vec<usize> = models.present().map(|(c, _)| c).collect();
    if present.is_empty() {
        return Err(Error::InvalidArgument(format!("{source}: dump has no samples")));
    }
    let names: Vec<String> = present.iter().map(|&c| models.class_names[c].clone()).collect();
    let absent: Vec<String> = models
        .class_names
        .iter()
        .enumerate()
        .filter(|(c, _)| !present.contains(c))
        .map(|(_, n)| n.clone())
        .collect();
    if !absent.is_empty() {
        log::warn!("{source}: no samples for {}", absent.join(", "));
    }
    let class_models: Vec<_> = present.iter().map(|&c| models.models[c].clone()).collect();
    let matrix = pairwise_matrix(&names, &class_models, Some(&models.overall), cfg.alpha)?;
    let mean_inter = if present.len() >= 2 {
        Some(mean_inter_class(&matrix)?)
    } else {
        None
    };

    let mut histograms = Vec::with_capacity(present.len());
    let mut tails = Vec::with_capacity(present.len());
    for (name, model) in names.iter().zip(&class_models) {
        let freqs = path_frequencies(model)?;
        histograms.push(build_histogram(&freqs, cfg.bins)?);
        tails.push(ClassTail {
            class: name.clone(),
            samples: model.sample_count(),
            tail_mass: tail_mass(&freqs, cfg.tail_threshold),
        });
    }
    let mean_tail = tails.iter().map(|t| t.tail_mass).sum::<f64>() / tails.len() as f64;

    let sampling = PairSampling {
        max_pairs: cfg.max_pairs,
        seed: cfg.seed,
    };
    let mut ablations = Vec::new();
    if cfg.wants(Metric::PrototypeKl) {
        let protos: Vec<DenseMatrix> = class_mean_interactions(dump)?.into_iter().map(|(_, n)| n).collect();
        ablations.push(prototype_interaction_kl(&protos)?);
    }
    if cfg.wants(Metric::SoftmaxKl) {
        ablations.push(softmax_output_kl(
            &clouds_from_dump(dump, CloudSource::SoftmaxOutputs)?,
            sampling,
        )?);
    }
    if cfg.wants(Metric::Energy) {
        ablations.push(energy_distances(
            &clouds_from_dump(dump, CloudSource::Activations)?,
            sampling,
        )?);
    }

    let masks = if cfg.export_masks {
        let rows = sample_masks(dump, cfg.threshold_mode)
            .map(|item| item.map(|(_, m)| m.to_matrix().into_values()))
            .collect::<Result<Vec<_>>>()?;
        Some(DenseMatrix::from_rows(&rows)?)
    } else {
        None
    };

    let (lo, hi) = matrix.kl.min_max();
    let summary = RunSummary {
        model_id: dump.manifest.model_id.clone(),
        layer_id: dump.manifest.layer_id.clone(),
        source: source.to_string(),
        sample_count: dump.sample_count(),
        threshold_mode: cfg.threshold_mode,
        alpha: cfg.alpha,
        bins: cfg.bins,
        units: "nats".into(),
        kl_reduction: "mean over paths".into(),
        pair_averaging: "ordered".into(),
        classes: names,
        absent_classes: absent,
        mean_inter_class_kl: mean_inter,
        mean_class_entropy: mean_class_entropy(&class_models, cfg.alpha)?,
        class_entropies: matrix.class_entropies(),
        overall_entropy: class_entropy(&models.overall.finalize(cfg.alpha)?),
        tail_threshold: cfg.tail_threshold,
        tail_mass: tails,
        mean_tail_mass: mean_tail,
        heatmap_scale: Scale { lo, hi },
        shared_scale: None,
        ablations: ablations
            .iter()
            .map(|a| AblationScalars {
                metric: a.metric.clone(),
                inter_mean: a.inter_mean,
                intra_mean: a.intra_mean,
            })
            .collect(),
    };
    Ok(RunAnalysis {
        summary,
        models,
        present,
        matrix,
        histograms,
        ablations,
        masks,
    })
}

/// Applies one shared colour range (min-max over all matrices) to every run.
pub(crate) fn apply_shared_scale(runs: &mut [RunAnalysis]) {
    if let Some((lo, hi)) = shared_scale(runs.iter().map(|r| &r.matrix.kl)) {
        for run in runs {
            run.summary.shared_scale = Some(Scale { lo, hi });
        }
    }
}

fn histograms_csv(names: &[String], histograms: &[Histogram]) -> String {
    let mut out = String::from("class,bin_lo,bin_hi,count\n");
    for (name, h) in names.iter().zip(histograms) {
        for line in h.to_csv().lines().skip(1) {
            out.push_str(&crate::divergences::csv_field(name));
            out.push(',');
            out.push_str(line);
            out.push('\n');
        }
    }
    out
}

/// Writes one run's files under `dir` (relative to the report root).
pub(crate) fn write_run(out: &OutputDir, dir: &str, run: &RunAnalysis) -> Result<()> {
    let f = |name: &str| format!("{dir}/{name}");
    let s = &run.summary;
    out.write_json(&f("summary.json"), s)?;
    out.write(&f("kl_matrix.csv"), run.matrix.to_csv().as_bytes())?;
    out.write_json(&f("kl_matrix.json"), &run.matrix)?;
    out.write(
        &f("kl_heatmap.ppm"),
        &heatmap_ppm(&run.matrix.kl, s.heatmap_scale.lo, s.heatmap_scale.hi, CELL_PX),
    )?;
    if let Some(shared) = s.shared_scale {
        out.write(
            &f("kl_heatmap_shared.ppm"),
            &heatmap_ppm(&run.matrix.kl, shared.lo, shared.hi, CELL_PX),
        )?;
        let mut normalised = run.matrix.clone();
        normalised.normalisation = Normalisation::SharedScale {
            lo: shared.lo,
            hi: shared.hi,
        };
        out.write_json(&f("kl_matrix_shared.json"), &normalised)?;
    }

    out.write(&f("histograms.csv"), histograms_csv(&s.classes, &run.histograms).as_bytes())?;
    let hist_json: Vec<_> = s
        .classes
        .iter()
        .zip(&run.histograms)
        .map(|(c, h)| serde_json::json!({ "class": c, "histogram": h }))
        .collect();
    out.write_json(&f("histograms.json"), &hist_json)?;

    if !run.ablations.is_empty() {
        out.write_json(
            &f("ablations.json"),
            &serde_json::json!({ "classes": s.classes, "metrics": run.ablations }),
        )?;
        let mut csv = String::from("metric,inter_mean,intra_mean\n");
        for a in &run.ablations {
            let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
            csv.push_str(&format!("{},{},{}\n", a.metric, opt(a.inter_mean), opt(a.intra_mean)));
        }
        out.write(&f("ablations.csv"), csv.as_bytes())?;
    }

    let models_dir = out.path(&f("models"));
    std::fs::create_dir_all(&models_dir).map_err(|e| Error::io(&models_dir, e))?;
    for &c in &run.present {
        run.models.models[c].save(&models_dir, &format!("class_{c:03}"), s.alpha)?;
    }
    run.models.overall.save(&models_dir, "overall", s.alpha)?;

    if let Some(masks) = &run.masks {
        out.write(&f("masks.npy"), &npy::encode_array(masks, Dtype::F32))?;
    }
    Ok(())
}

pub(crate) fn run_dir_name(idx: usize, dump: &ActivationDump) -> String {
    let clean = |s: &str| -> String {
        s.chars()
            .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' })
            .collect()
    };
    format!(
        "{idx:02}_{}_{}",
        clean(&dump.manifest.model_id),
        clean(&dump.manifest.layer_id)
    )
}

/// Loads every input manifest, keeping those on the selected layer.
pub(crate) fn load_inputs(cfg: &RunConfig) -> Result<Vec<(String, ActivationDump)>> {
    if cfg.inputs.is_empty() {
        return Err(Error::InvalidArgument("config lists no input manifests".into()));
    }
    let strictness = if cfg.lenient_manifest {
        Strictness::Lenient
    } else {
        Strictness::Strict
    };
    let mut dumps = Vec::new();
    for path in &cfg.inputs {
        let dump = load_dump_with(path, strictness)?;
        if cfg.layer.as_ref().is_some_and(|l| *l != dump.manifest.layer_id) {
            log::info!("skipping {} (layer {})", path.display(), dump.manifest.layer_id);
            continue;
        }
        dumps.push((display_path(path), dump));
    }
    if dumps.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no input manifest has layer {:?}",
            cfg.layer.as_deref().unwrap_or_default()
        )));
    }
    Ok(dumps)
}

fn display_path(path: &Path) -> String {
    path.to_string_lossy().replace('\\', "/")
}

/// Top-level result of `analyze`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyzeReport {
    pub runs: Vec<AnalyzeEntry>,
    pub shared_scale: Option<Scale>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyzeEntry {
    pub dir: String,
    pub summary: RunSummary,
}

/// Analyzes each input dump into its own subdirectory of `cfg.out`.
pub fn cmd_analyze(cfg: &RunConfig) -> Result<AnalyzeReport> {
    cfg.validate()?;
    let inputs = load_inputs(cfg)?;
    let mut runs = inputs
        .iter()
        .map(|(source, dump)| analyze_dump(dump, cfg, source))
        .collect::<Result<Vec<_>>>()?;
    if cfg.shared_scale {
        apply_shared_scale(&mut runs);
    }
    let out = OutputDir::create(&cfg.out)?;
    let mut entries = Vec::new();
    for (idx, ((_, dump), run)) in inputs.iter().zip(&runs).enumerate() {
        let dir = run_dir_name(idx, dump);
        write_run(&out, &dir, run)?;
        entries.push(AnalyzeEntry {
            dir,
            summary: run.summary.clone(),
        });
    }
    let report = AnalyzeReport {
        shared_scale: runs.first().and_then(|r| r.summary.shared_scale),
        runs: entries,
    };
    out.write_json("analysis.json", &report)?;
    out.write("runs.csv", runs_csv(&report).as_bytes())?;
    write_index(out.root())?;
    Ok(report)
}

fn runs_csv(report: &AnalyzeReport) -> String {
    let mut csv = String::from("run,model_id,layer_id,mean_inter_class_kl,mean_class_entropy,mean_tail_mass\n");
    for e in &report.runs {
        let s = &e.summary;
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            e.dir,
            crate::divergences::csv_field(&s.model_id),
            crate::divergences::csv_field(&s.layer_id),
            s.mean_inter_class_kl.map(|v| v.to_string()).unwrap_or_default(),
            s.mean_class_entropy,
            s.mean_tail_mass
        ));
    }
    csv
}

/// `labeled_csv` for a one-column vector.
pub(crate) fn vector_csv(labels: &[String], header: &str, values: &[f64]) -> Result<String> {
    let m = DenseMatrix::new(values.len(), 1, values.to_vec())?;
    Ok(labeled_csv(labels, &[header.to_string()], &m))
}
