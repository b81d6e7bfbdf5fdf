use serde::{Deserialize, Serialize};

use super::analyze::{analyze_dump, apply_shared_scale, write_run, RunAnalysis};
use super::compare::{build_report, compare_runs, write_compare, CompareReport};
use super::config::{MemorisationConfig, RunConfig};
use super::output::{write_index, OutputDir};
use crate::error::{Error, Result};
use crate::mlp::{gen_blobs, shuffle_labels, train_sgd, Activation, BlobSpec, EpochStats, LabeledDataset, Mlp, TrainConfig};
use crate::tensorio::Dtype;

// Offsets from the root seed for each random stream.
const MEANS_STREAM: u64 = 100;
const TEST_STREAM: u64 = 1;
const INIT_STREAM: u64 = 7;
const ORDER_STREAM: u64 = 9;
const SHUFFLE_STREAM: u64 = 11;

/// One line of the three-condition table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionRow {
    pub condition: String,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub mean_inter_class_kl: f64,
    pub mean_class_entropy: f64,
    pub mean_tail_mass: f64,
}

/// The true-label model evaluated on the shifted test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OodRow {
    pub shift_per_coordinate: f64,
    pub accuracy: f64,
    pub mean_inter_class_kl: f64,
    pub mean_class_entropy: f64,
    pub mean_tail_mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemorisationReport {
    pub config: MemorisationConfig,
    pub rows: Vec<ConditionRow>,
    pub ood: OodRow,
    pub comparison: CompareReport,
    /// `true` over `untrained` mean inter-class KL; `None` when the
    /// untrained value is zero (every class produced the same model).
    pub true_over_untrained: Option<f64>,
    /// `shuffled` over `untrained` mean inter-class KL, `None` as above.
    pub shuffled_over_untrained: Option<f64>,
}

impl MemorisationReport {
    pub fn row(&self, condition: &str) -> Option<&ConditionRow> {
        self.rows.iter().find(|r| r.condition == condition)
    }
}

struct Data {
    train: LabeledDataset,
    test: LabeledDataset,
    ood: LabeledDataset,
    shift: f64,
}

fn make_data(m: &MemorisationConfig) -> Result<Data> {
    let means: Vec<Vec<f64>> = BlobSpec::random_means(m.classes, m.dims, m.mean_scale, m.seed + MEANS_STREAM)
        .into_iter()
        .map(|mu| mu.into_iter().map(|v| v + m.mean_offset).collect())
        .collect();
    let shift = m.ood_shift_sigmas * m.sigma;
    let test_spec = BlobSpec::new(means.clone(), m.per_class, m.sigma, m.seed + TEST_STREAM);
    Ok(Data {
        train: gen_blobs(&BlobSpec::new(means, m.per_class, m.sigma, m.seed))?,
        test: gen_blobs(&test_spec)?,
        ood: gen_blobs(&test_spec.with_shift(vec![shift; m.dims]))?,
        shift,
    })
}

fn final_layer_run(
    net: &Mlp,
    data: &LabeledDataset,
    cfg: &RunConfig,
    out: &OutputDir,
    name: &str,
) -> Result<RunAnalysis> {
    let names = (0..data.num_classes).map(|c| format!("class_{c}")).collect();
    let layer = net.layers().len() - 1;
    let dump = net.export_layer(layer, data, names, name, "output", Dtype::F64)?;
    dump.save(out.path(&format!("dumps/{name}")))?;
    analyze_dump(&dump, cfg, &format!("dumps/{name}/manifest.json"))
}

fn require_kl(run: &RunAnalysis) -> Result<f64> {
    run.summary
        .mean_inter_class_kl
        .ok_or_else(|| Error::InvalidArgument("memorisation needs at least two classes".into()))
}

fn traces_csv(traces: &[(&str, &[EpochStats])]) -> String {
    let mut csv = String::from("condition,epoch,lr,loss,accuracy\n");
    for (name, trace) in traces {
        for e in *trace {
            csv.push_str(&format!("{name},{},{},{},{}\n", e.epoch, e.lr, e.loss, e.accuracy));
        }
    }
    csv
}

/// Trains untrained / shuffled-label / true-label networks from one shared
/// initialisation, analyzes each final layer on held-out blobs, and compares
/// the true-label model on shifted blobs.
pub fn cmd_memorisation(cfg: &RunConfig) -> Result<MemorisationReport> {
    cfg.validate()?;
    let m = &cfg.memorisation;
    if m.classes < 2 {
        return Err(Error::InvalidArgument("memorisation needs at least two classes".into()));
    }
    let data = make_data(m)?;
    let init = Mlp::random_classifier(&[m.dims, m.hidden, m.classes], Activation::Relu, m.seed + INIT_STREAM)?;
    let train_cfg = TrainConfig {
        epochs: m.epochs,
        batch_size: m.batch_size,
        lr0: m.lr0,
        lr_decay_per_epoch: m.lr_decay_per_epoch,
        seed: m.seed + ORDER_STREAM,
    };
    log::info!("training true-label model");
    let (trained, true_trace) = train_sgd(init.clone(), &data.train, &train_cfg)?;
    log::info!("training shuffled-label model");
    let shuffled_data = shuffle_labels(&data.train, m.seed + SHUFFLE_STREAM);
    let (shuffled, shuffled_trace) = train_sgd(init.clone(), &shuffled_data, &train_cfg)?;

    let out = OutputDir::create(&cfg.out)?;
    let conditions: [(&str, &Mlp, &LabeledDataset); 3] = [
        ("untrained", &init, &data.train),
        ("shuffled", &shuffled, &shuffled_data),
        ("true", &trained, &data.train),
    ];
    let mut runs = conditions
        .iter()
        .map(|(name, net, _)| final_layer_run(net, &data.test, cfg, &out, name))
        .collect::<Result<Vec<_>>>()?;
    runs.push(final_layer_run(&trained, &data.ood, cfg, &out, "true_ood")?);
    if cfg.shared_scale {
        apply_shared_scale(&mut runs);
    }

    let mut rows = Vec::new();
    for ((name, net, train_set), run) in conditions.iter().zip(&runs) {
        rows.push(ConditionRow {
            condition: name.to_string(),
            train_accuracy: net.accuracy(train_set)?,
            test_accuracy: net.accuracy(&data.test)?,
            mean_inter_class_kl: require_kl(run)?,
            mean_class_entropy: run.summary.mean_class_entropy,
            mean_tail_mass: run.summary.mean_tail_mass,
        });
    }
    let ood_run = &runs[3];
    let ood = OodRow {
        shift_per_coordinate: data.shift,
        accuracy: trained.accuracy(&data.ood)?,
        mean_inter_class_kl: require_kl(ood_run)?,
        mean_class_entropy: ood_run.summary.mean_class_entropy,
        mean_tail_mass: ood_run.summary.mean_tail_mass,
    };

    let dirs = ["analysis/untrained", "analysis/shuffled", "analysis/true", "analysis/true_ood"];
    for (dir, run) in dirs.iter().zip(&runs) {
        write_run(&out, dir, run)?;
    }
    let comparison = build_report(
        dirs[2].to_string(),
        dirs[3].to_string(),
        &runs[2].summary,
        &runs[3].summary,
        compare_runs(&runs[2], &runs[3], cfg.alpha)?,
    );
    write_compare(&out, "ood/", &comparison)?;

    let base = rows[0].mean_inter_class_kl;
    let ratio = |v: f64| (base > 0.0).then(|| v / base);
    let report = MemorisationReport {
        config: m.clone(),
        true_over_untrained: ratio(rows[2].mean_inter_class_kl),
        shuffled_over_untrained: ratio(rows[1].mean_inter_class_kl),
        rows,
        ood,
        comparison,
    };
    let mut table = String::from(
        "condition,train_accuracy,test_accuracy,mean_inter_class_kl,mean_class_entropy,mean_tail_mass\n",
    );
    for r in &report.rows {
        table.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.condition, r.train_accuracy, r.test_accuracy, r.mean_inter_class_kl, r.mean_class_entropy, r.mean_tail_mass
        ));
    }
    out.write("memorisation.csv", table.as_bytes())?;
    out.write_json("memorisation.json", &report)?;
    out.write(
        "training.csv",
        traces_csv(&[("true", &true_trace), ("shuffled", &shuffled_trace)]).as_bytes(),
    )?;
    write_index(out.root())?;
    Ok(report)
}
