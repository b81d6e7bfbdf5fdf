//! Acceptance criteria. Runs as a plain binary so every criterion prints one
//! PASS/FAIL line regardless of output capture; exits non-zero if any fails.

mod common;

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use pathsig::ablations::{energy_distances, ClassPointCloud, PairSampling};
use pathsig::class_stats::BernoulliClassModel;
use pathsig::divergences::{bernoulli_kl, bernoulli_kl_scalar};
use pathsig::interactions::{interaction_matrix, significance_mask, SignificanceMask, ThresholdMode};
use pathsig::mlp::{gradient_check, Activation, Mlp};
use pathsig::report::{cmd_analyze, cmd_compare, cmd_memorisation, MemorisationReport, RunConfig};
use pathsig::sparsity::{build_histogram, path_frequencies};
use pathsig::tensorio::DenseMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

// 0.5 ln 3 to 40 digits (mpmath).
const HALF_LN3: f64 = 0.549_306_144_334_054_845_697_622_618_461_262_852_3;

type Outcome = Result<String, String>;

fn within(start: Instant, budget: Duration, detail: String) -> Outcome {
    let took = start.elapsed();
    if took <= budget {
        Ok(format!("{detail} in {:.2?}", took))
    } else {
        Err(format!("{detail} but took {:.2?} (budget {:?})", took, budget))
    }
}

fn random_model(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> BernoulliClassModel {
    let n = rng.random_range(1..200u64);
    let counts = (0..rows * cols).map(|_| rng.random_range(0..=n)).collect();
    BernoulliClassModel::from_counts(None, rows, cols, counts, n).unwrap()
}

fn kl_axioms() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst_self = 0.0f64;
    for i in 0..1000 {
        let (r, c) = (rng.random_range(1..=64), rng.random_range(1..=64));
        let p = random_model(&mut rng, r, c).finalize(0.5).unwrap();
        let q = random_model(&mut rng, r, c).finalize(0.5).unwrap();
        let pq = bernoulli_kl(&p, &q).unwrap();
        let pp = bernoulli_kl(&p, &p).unwrap();
        worst_self = worst_self.max(pp.abs());
        if pq < 0.0 || pp.abs() > 1e-12 {
            return Err(format!("pair {i} ({r}x{c}): KL(p,q) = {pq}, KL(p,p) = {pp}"));
        }
    }
    within(start, Duration::from_secs(10), format!("1000 pairs, max |KL(p,p)| = {worst_self:e}"))
}

fn streaming_equals_batch() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (rows, cols) = (16, 24);
    let masks: Vec<SignificanceMask> = (0..100)
        .map(|_| {
            let bits = (0..rows * cols).map(|_| rng.random_bool(0.3)).collect();
            SignificanceMask::from_bits(rows, cols, bits, ThresholdMode::Literal).unwrap()
        })
        .collect();
    let mut sequential = BernoulliClassModel::new(Some(0), rows, cols);
    for m in &masks {
        sequential.accumulate(m).unwrap();
    }
    for parts in [1, 2, 4, 8] {
        let mut merged = BernoulliClassModel::new(Some(0), rows, cols);
        for chunk in masks.chunks(masks.len().div_ceil(parts)) {
            let mut part = BernoulliClassModel::new(Some(0), rows, cols);
            for m in chunk {
                part.accumulate(m).unwrap();
            }
            merged = merged.merge(&part).unwrap();
        }
        if merged.counts() != sequential.counts() || merged.sample_count() != sequential.sample_count() {
            return Err(format!("{parts} partitions differ from sequential accumulation"));
        }
    }
    within(start, Duration::from_secs(5), "1/2/4/8 partitions bit-identical".into())
}

fn closed_form_kl() -> Outcome {
    let kl = bernoulli_kl_scalar(0.75, 0.25).unwrap();
    let err = (kl - HALF_LN3).abs();
    if err <= 1e-12 {
        Ok(format!("KL = {kl}, |error| = {err:e}"))
    } else {
        Err(format!("KL = {kl}, expected {HALF_LN3}"))
    }
}

fn literal_fixture() -> Outcome {
    let w = DenseMatrix::from_rows(&[[1.0, -1.0], [2.0, 0.0]]).unwrap();
    let s = significance_mask(&interaction_matrix(&w, &[1.0, 1.0]).unwrap(), ThresholdMode::Literal);
    if s.bits() == [true, true, false, false] {
        Ok("S = [[1,1],[0,0]]".into())
    } else {
        Err(format!("S = {:?}", s.bits()))
    }
}

fn half_density() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let draws = 100;
    let mut total = 0.0;
    for _ in 0..draws {
        let v: Vec<f64> = (0..64 * 256).map(|_| rng.sample(StandardNormal)).collect();
        let w = DenseMatrix::new(64, 256, v).unwrap();
        total += significance_mask(&interaction_matrix(&w, &[1.0; 256]).unwrap(), ThresholdMode::Literal).density();
    }
    let mean = total / draws as f64;
    if (mean - 0.5).abs() > 0.05 {
        return Err(format!("mean density {mean} over {draws} draws"));
    }
    within(start, Duration::from_secs(5), format!("mean density {mean:.4} over {draws} 64x256 draws"))
}

fn gradients() -> Outcome {
    let start = Instant::now();
    let net = Mlp::random_classifier(&[10, 16, 16, 4], Activation::Relu, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let values: Vec<f64> = (0..16 * 10).map(|_| rng.sample(StandardNormal)).collect();
    let inputs = DenseMatrix::new(16, 10, values).unwrap();
    let labels: Vec<usize> = (0..16).map(|s| s % 4).collect();
    let idx: Vec<usize> = (0..16).collect();
    let check = gradient_check(&net, &inputs, &labels, &idx).unwrap();
    if check.parameters < 500 || check.max_relative_error > 1e-5 {
        return Err(format!(
            "{} parameters, max relative error {:e} at {}",
            check.parameters, check.max_relative_error, check.worst_parameter
        ));
    }
    within(
        start,
        Duration::from_secs(30),
        format!("{} parameters, max relative error {:e}", check.parameters, check.max_relative_error),
    )
}

fn memorisation(report: &MemorisationReport, took: Duration) -> Outcome {
    let (Some(t), Some(s)) = (report.true_over_untrained, report.shuffled_over_untrained) else {
        return Err("untrained mean inter-class KL is zero".into());
    };
    let detail = format!("true/untrained = {t:.3}, shuffled/untrained = {s:.3}, {took:.2?}");
    if t >= 5.0 && s <= 2.0 && took <= Duration::from_secs(300) {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn ood_direction(report: &MemorisationReport, root: &Path) -> Outcome {
    let start = Instant::now();
    let id = report.row("true").unwrap();
    let ood = &report.ood;
    // Recompute the comparison from the exported dumps.
    let cfg = RunConfig {
        inputs: vec![root.join("dumps/true/manifest.json"), root.join("dumps/true_ood/manifest.json")],
        out: root.join("compare"),
        ..RunConfig::default()
    };
    let cmp = cmd_compare(&cfg).unwrap();
    let inter = cmp.mean_inter_class_kl.unwrap();
    let consistent = inter.id == id.mean_inter_class_kl && inter.ood == ood.mean_inter_class_kl;
    let detail = format!(
        "inter-class KL {:.6} -> {:.6}, entropy {:.6} -> {:.6}",
        id.mean_inter_class_kl, ood.mean_inter_class_kl, id.mean_class_entropy, ood.mean_class_entropy
    );
    let directional = ood.mean_inter_class_kl < id.mean_inter_class_kl && ood.mean_class_entropy > id.mean_class_entropy;
    if !consistent {
        return Err(format!("{detail}; compare recomputed {:?}", inter));
    }
    if !directional || cmp.inter_class_kl_decreased != Some(true) || !cmp.entropy_increased {
        return Err(detail);
    }
    within(start, Duration::from_secs(60), detail)
}

fn energy_oracle() -> Outcome {
    let cloud = |id, pts: &[[f64; 2]]| ClassPointCloud::new(id, pts.iter().map(|p| p.to_vec()).collect()).unwrap();
    let xs = [[0.0, 0.0], [1.0, 2.0], [-1.0, 0.5]];
    let ys = [[3.0, 1.0], [0.0, -2.0]];
    let d = |a: &[f64; 2], b: &[f64; 2]| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
    let inter = xs.iter().flat_map(|x| ys.iter().map(move |y| d(x, y))).sum::<f64>() / 6.0;
    let mut intra_x = 0.0;
    for (i, x) in xs.iter().enumerate() {
        for (j, y) in xs.iter().enumerate() {
            if i != j {
                intra_x += d(x, y);
            }
        }
    }
    intra_x /= 6.0;
    let s = energy_distances(&[cloud(0, &xs), cloud(1, &ys)], PairSampling::default()).unwrap();
    let errs = [
        (s.inter(0, 1).unwrap() - inter).abs(),
        (s.intra(0).unwrap() - intra_x).abs(),
        (s.intra(1).unwrap() - d(&ys[0], &ys[1])).abs(),
    ];
    let worst = errs.iter().cloned().fold(0.0, f64::max);
    if worst > 1e-12 {
        return Err(format!("3+2 fixture off by {worst:e}"));
    }
    let single = energy_distances(&[cloud(0, &[[0.0, 0.0]]), cloud(1, &[[3.0, 4.0]])], PairSampling::default()).unwrap();
    match single.inter(0, 1) {
        Some(5.0) => Ok(format!("3+2 fixture max error {worst:e}; inter((0,0),(3,4)) = 5")),
        other => Err(format!("inter((0,0),(3,4)) = {other:?}")),
    }
}

fn histogram_conservation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for i in 0..100 {
        let (m, n) = (rng.random_range(1..=40), rng.random_range(1..=40));
        let freqs = path_frequencies(&random_model(&mut rng, m, n)).unwrap();
        for bins in [1, 10, 50] {
            let total: u64 = build_histogram(&freqs, bins).unwrap().counts.iter().sum();
            if total != (m * n) as u64 {
                return Err(format!("model {i} ({m}x{n}), {bins} bins: counts sum to {total}"));
            }
        }
    }
    Ok("100 models x B in {1, 10, 50}".into())
}

fn bundle(out: &Path) -> Vec<(String, Vec<u8>)> {
    walkdir::WalkDir::new(out)
        .sort_by_file_name()
        .into_iter()
        .map(|e| e.unwrap())
        .filter(|e| e.file_type().is_file())
        .map(|e| {
            let rel = e.path().strip_prefix(out).unwrap().to_string_lossy().into_owned();
            (rel, fs::read(e.path()).unwrap())
        })
        .collect()
}

fn determinism(tmp: &Path) -> Outcome {
    let dump = common::toy_dump(3, 150, 6, 10, 9);
    let input = dump.save(tmp.join("dump")).unwrap();
    let mut cfg = RunConfig {
        inputs: vec![input],
        seed: 42,
        max_pairs: Some(1000),
        export_masks: true,
        ..RunConfig::default()
    };
    let mut bundles = Vec::new();
    for name in ["a", "b"] {
        cfg.out = tmp.join(name);
        cmd_analyze(&cfg).unwrap();
        bundles.push(bundle(&cfg.out));
    }
    if bundles[0] == bundles[1] {
        Ok(format!("{} files byte-identical", bundles[0].len()))
    } else {
        Err("bundles differ".into())
    }
}

fn run(name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
        Err(format!("panicked: {}", msg.unwrap_or_default()))
    });
    match outcome {
        Ok(detail) => {
            println!("PASS {name}: {detail}");
            true
        }
        Err(detail) => {
            println!("FAIL {name}: {detail}");
            false
        }
    }
}

fn main() -> ExitCode {
    let tmp = tempfile::tempdir().unwrap();
    let mem_root = tmp.path().join("memorisation");
    let start = Instant::now();
    let mem = catch_unwind(|| {
        cmd_memorisation(&RunConfig {
            out: mem_root.clone(),
            ..RunConfig::default()
        })
        .unwrap()
    });
    let mem_took = start.elapsed();

    let mut results = vec![
        run("kl_axioms", kl_axioms),
        run("streaming_equals_batch", streaming_equals_batch),
        run("closed_form_kl", closed_form_kl),
        run("literal_threshold_fixture", literal_fixture),
        run("random_init_half_density", half_density),
        run("gradient_check", gradients),
    ];
    match &mem {
        Ok(report) => {
            results.push(run("memorisation_direction", || memorisation(report, mem_took)));
            results.push(run("ood_direction", || ood_direction(report, &mem_root)));
        }
        Err(_) => {
            results.push(run("memorisation_direction", || Err("cmd_memorisation panicked".into())));
            results.push(run("ood_direction", || Err("cmd_memorisation panicked".into())));
        }
    }
    results.push(run("energy_distance_oracle", energy_oracle));
    results.push(run("histogram_conservation", histogram_conservation));
    results.push(run("determinism", || determinism(tmp.path())));

    let failed = results.iter().filter(|&&ok| !ok).count();
    println!("\n{} passed, {} failed", results.len() - failed, failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
