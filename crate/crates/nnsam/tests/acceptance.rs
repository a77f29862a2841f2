//! End-to-end acceptance checks. Runs every criterion in order, prints one
//! PASS/FAIL line each and exits nonzero if any failed.

#[path = "../../core/tests/oracles/mod.rs"]
mod oracles;

use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use nnsam::report::METRICS_CSV;
use nnsam::train::{ablate, prepare, sample_size_study, train_and_test, RunConfig, SynthSpec, Trainer, ABLATION_NAMES};
use nnsam_core::levelset::{curvature_of, derivatives_of, signed_distance, BinaryMask};
use nnsam_core::losses::{
    ce_loss_grad, curvature_loss, curvature_loss_grad, dice_loss_grad, levelset_mse, levelset_mse_grad, seg_loss_grad,
    sharpened_curvature, softmax, softmax_vjp, total_loss, total_loss_grad, ClassStack, LevelSetStack, LossWeights, OneHotMask,
    ProbMap,
};
use nnsam_core::metrics::{asd, dice_coefficient, LabelMask, SurfaceDistance};
use nnsam_core::Grid;
use oracles::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn distance_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let m = random_mask(&mut rng, 32);
        let phi = signed_distance(&BinaryMask::new(m.clone()).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?.phi;
        let brute = brute_signed_distance(&m);
        worst = phi.iter().zip(brute.iter()).fold(worst, |w, (a, b)| w.max((a - b).abs()));
    }
    let secs = start.elapsed().as_secs_f64();
    check(worst <= 1e-9, || format!("max |diff| {worst:e}"))?;
    check(secs < 10.0, || format!("took {secs:.1} s"))?;
    Ok(format!("100 masks, max |diff| {worst:.1e}, {secs:.2} s"))
}

fn stack_from(x: &[f64], c: usize, h: usize, w: usize) -> ClassStack {
    ClassStack::new(c, h, w, x.to_vec()).unwrap()
}

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let (c, h, w) = (2, 8, 8);
    let step = 1e-5;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut report = Vec::new();
    for trial in 0..3 {
        let z = ClassStack::from_fn(c, h, w, |_, _, _| rng.gen_range(-2.0..2.0));
        let labels = Grid::from_fn(h, w, |_, _| rng.gen_range(0..c) as u8);
        let y = OneHotMask::from_labels(&labels, c).unwrap();
        // Level sets small enough that the sharpening sigmoid is not saturated.
        let phi = ClassStack::from_fn(c, h, w, |_, _, _| rng.gen_range(-0.003..0.003));
        let gt = LevelSetStack::new(ClassStack::from_fn(c, h, w, |_, _, _| rng.gen_range(-0.003..0.003))).unwrap();
        type SegGrad = fn(&ProbMap, &OneHotMask) -> nnsam_core::Result<(f64, ClassStack)>;
        let seg: [(&str, SegGrad); 3] = [("dice", dice_loss_grad), ("ce", ce_loss_grad), ("seg", seg_loss_grad)];
        for (name, f) in seg {
            let p = softmax(&z);
            let g = softmax_vjp(&p, &f(&p, &y).unwrap().1).unwrap();
            let (err, skipped) = gradient_error(z.as_slice(), g.as_slice(), step, |x| f(&softmax(&stack_from(x, c, h, w)), &y).unwrap().0);
            report.push((format!("{name}#{trial}"), err, skipped));
        }
        let ls = LevelSetStack::new(phi.clone()).unwrap();
        let g = levelset_mse_grad(&ls, &gt, None).unwrap().1;
        let (err, skipped) = gradient_error(phi.as_slice(), g.as_slice(), step, |x| {
            levelset_mse(&LevelSetStack::new(stack_from(x, c, h, w)).unwrap(), &gt).unwrap()
        });
        report.push((format!("levelset#{trial}"), err, skipped));
        let g = curvature_loss_grad(&ls, &gt, None).unwrap().1;
        let (err, skipped) = gradient_error(phi.as_slice(), g.as_slice(), step, |x| {
            curvature_loss(&LevelSetStack::new(stack_from(x, c, h, w)).unwrap(), &gt).unwrap()
        });
        report.push((format!("curvature#{trial}"), err, skipped));
        let wts = LossWeights::new(1.0, 0.1, 0.5).unwrap();
        let p = softmax(&z);
        let (_, g) = total_loss_grad(&p, &y, &ls, &gt, &wts, None).unwrap();
        let gz = softmax_vjp(&p, &g.prob).unwrap();
        let (err, skipped) = gradient_error(z.as_slice(), gz.as_slice(), step, |x| {
            total_loss(&softmax(&stack_from(x, c, h, w)), &y, &ls, &gt, &wts).unwrap().total
        });
        report.push((format!("total/logits#{trial}"), err, skipped));
        let (err, skipped) = gradient_error(phi.as_slice(), g.levelset.as_slice(), step, |x| {
            total_loss(&p, &y, &LevelSetStack::new(stack_from(x, c, h, w)).unwrap(), &gt, &wts).unwrap().total
        });
        report.push((format!("total/levelset#{trial}"), err, skipped));
    }
    let secs = start.elapsed().as_secs_f64();
    let worst = report.iter().map(|r| r.1).fold(0.0, f64::max);
    let skipped: usize = report.iter().map(|r| r.2).sum();
    let per_check = report.iter().map(|r| r.2).max().unwrap_or(0);
    for (name, err, sk) in &report {
        check(*err <= 1e-3, || format!("{name}: rel err {err:e}"))?;
        // Only the absolute value in the curvature can put a kink inside a stencil.
        check(*sk <= 6, || format!("{name}: {sk} components skipped at kinks"))?;
    }
    check(secs < 60.0, || format!("took {secs:.1} s"))?;
    Ok(format!(
        "{} checks, worst rel err {worst:.2e}, {skipped} kink components skipped (max {per_check}/check), {secs:.2} s",
        report.len()
    ))
}

fn curvature_analytics() -> Outcome {
    let flat = curvature_of(&derivatives_of(&Grid::filled(16, 16, 0.7)));
    let const_max = flat.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    check(const_max <= 1e-12, || format!("constant field K max {const_max:e}"))?;
    // Replicate padding bends a ramp at the border, so only interior pixels are planar.
    let ramp = curvature_of(&derivatives_of(&Grid::from_fn(16, 16, |a, b| 0.3 * a as f64 - 0.8 * b as f64 + 2.0)));
    let mut lin_max: f64 = 0.0;
    for a in 1..15 {
        for b in 1..15 {
            lin_max = lin_max.max(ramp[(a, b)].abs());
        }
    }
    check(lin_max <= 1e-12, || format!("linear field K max {lin_max:e}"))?;

    let disk = disk_mask(64, 10.0, (31.5, 31.5));
    let phi = signed_distance(&BinaryMask::new(disk.clone()).unwrap()).unwrap().phi;
    let k = sharpened_curvature(&phi);
    let o = oracle_curvature(&phi);
    let peak = o.iter().fold(0.0f64, |m, v| m.max(*v));
    let mut rel: f64 = 0.0;
    for (x, y) in k.iter().zip(o.iter()) {
        // Pixels whose curvature is pure rounding residue are compared absolutely.
        if y.abs() > 1e-12 * peak {
            rel = rel.max((x - y).abs() / y.abs());
        } else {
            check((x - y).abs() <= 1e-14, || format!("tiny value {x:e} vs {y:e}"))?;
        }
    }
    check(rel <= 1e-8, || format!("disk rel err {rel:e}"))?;
    let rotated = sharpened_curvature(&signed_distance(&BinaryMask::new(disk.rotate90()).unwrap()).unwrap().phi);
    let rot = rotated.iter().zip(k.rotate90().iter()).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    check(rot <= 1e-9, || format!("rotation diff {rot:e}"))?;
    Ok(format!("const {const_max:.1e}, linear {lin_max:.1e}, disk rel {rel:.1e}, rotation {rot:.1e}"))
}

fn metric_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    let mut scale_err: f64 = 0.0;
    for _ in 0..50 {
        let h = rng.gen_range(4..=32);
        let w = rng.gen_range(4..=32);
        let a = random_blobs(&mut rng, h, w);
        let b = random_blobs(&mut rng, h, w);
        let spacing = (rng.gen_range(0.3..3.0), rng.gen_range(0.3..3.0));
        let la = LabelMask::new(a.clone(), 2, spacing).unwrap();
        let lb = LabelMask::new(b.clone(), 2, spacing).unwrap();
        check(dice_coefficient(&la, &la, 1).unwrap() == 100.0, || "DICE(self) != 100".into())?;
        check(asd(&la, &la, 1).unwrap() == SurfaceDistance::Defined(0.0), || "ASD(self) != 0".into())?;
        let v = asd(&la, &lb, 1).unwrap().value().ok_or("undefined ASD on nonempty masks")?;
        let o = brute_asd(&a, &b, 1, spacing).ok_or("oracle undefined")?;
        worst = worst.max((v - o).abs());
        let k = rng.gen_range(0.5..4.0);
        let scaled = asd(&la.with_spacing((spacing.0 * k, spacing.1 * k)).unwrap(), &lb.with_spacing((spacing.0 * k, spacing.1 * k)).unwrap(), 1)
            .unwrap()
            .value()
            .unwrap();
        scale_err = scale_err.max((scaled - k * v).abs() / (k * v).max(1e-12));
    }
    check(worst <= 1e-9, || format!("ASD vs oracle {worst:e}"))?;
    check(scale_err <= 1e-12, || format!("spacing scaling rel err {scale_err:e}"))?;
    Ok(format!("50 pairs, ASD vs oracle {worst:.1e}, spacing scaling rel err {scale_err:.1e}"))
}

fn tiny(seed: u64, n_train: usize, augment: bool) -> RunConfig {
    let mut c = RunConfig::synth(SynthSpec {
        seed,
        n_train,
        n_val: 2,
        n_test: 3,
        size: 64,
        ..SynthSpec::default()
    });
    c.image_size = 32;
    c.train_size = n_train;
    c.epochs = 2;
    c.augment = augment;
    c
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn freeze_contract() -> Outcome {
    let config = tiny(5, 6, true);
    let mut t = Trainer::new(&config, prepare(&config).map_err(err)?).map_err(err)?;
    let frozen = t.model().frozen_checksum().ok_or("no frozen branch")?;
    let bits: Vec<u32> = t.model().frozen_encoder().unwrap().params().iter().flat_map(|p| p.value.iter().map(|v| v.to_bits())).collect();
    let trainable = t.model().trainable_checksum();
    let batch: Vec<usize> = (0..6).collect();
    for step in 0..10 {
        t.train_step(step, &batch).map_err(err)?;
    }
    let after: Vec<u32> = t.model().frozen_encoder().unwrap().params().iter().flat_map(|p| p.value.iter().map(|v| v.to_bits())).collect();
    check(t.model().frozen_checksum().unwrap() == frozen && after == bits, || "frozen weights changed".into())?;
    check(t.model().trainable_checksum() != trainable, || "trainable weights did not change".into())?;
    Ok(format!("10 steps, frozen {}... unchanged, trainable checksum changed", &frozen[..12]))
}

fn ablation_equivalence() -> Outcome {
    let mut ours = tiny(6, 8, true);
    ours.frozen_encoder = false;
    ours.loss_weights = LossWeights::new(1.0, 0.0, 0.0).map_err(err)?;
    let mut plain = ours.clone();
    plain.reg_head = false;
    let mut a = Trainer::new(&ours, prepare(&ours).map_err(err)?).map_err(err)?;
    let mut b = Trainer::new(&plain, prepare(&plain).map_err(err)?).map_err(err)?;
    check(a.model().has_reg_head() && !b.model().has_reg_head(), || "variant setup".into())?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for step in 0..20 {
        let batch: Vec<usize> = (0..8).filter(|_| rng.gen_bool(0.7)).collect();
        let batch = if batch.is_empty() { vec![0] } else { batch };
        let la = a.train_step(step, &batch).map_err(err)?;
        let lb = b.train_step(step, &batch).map_err(err)?;
        check(la.total.to_bits() == lb.total.to_bits() && la.s.to_bits() == lb.s.to_bits(), || {
            format!("step {step}: {} vs {}", la.total, lb.total)
        })?;
    }
    Ok("20 steps, per-step losses bitwise equal to the plain network".into())
}

fn smoke_experiment(dir: &Path) -> Outcome {
    let mut config = RunConfig::synth(SynthSpec {
        seed: 0,
        n_train: 20,
        n_val: 20,
        n_test: 50,
        size: 64,
        ..SynthSpec::default()
    });
    config.image_size = 64;
    config.train_size = 20;
    config.epochs = 200;
    config.augment = false;
    let start = Instant::now();
    let (summary, report) = train_and_test(&config, dir).map_err(err)?;
    let mins = start.elapsed().as_secs_f64() / 60.0;
    let h = &summary.state.history;
    let dice = report.overall.mean_dice;
    let asd_mean = report.overall.mean_asd.ok_or("ASD undefined for every test sample")?;
    check(h[4].total < h[0].total, || format!("epoch 5 loss {} not below epoch 1 {}", h[4].total, h[0].total))?;
    check(mins <= 15.0, || format!("took {mins:.1} min"))?;
    check(dice >= 90.0, || format!("test DICE {dice:.2}"))?;
    check(asd_mean <= 2.0, || format!("test ASD {asd_mean:.3}"))?;
    Ok(format!(
        "test DICE {dice:.2} %, ASD {asd_mean:.3} mm over {} samples, best epoch {:?}, {mins:.1} min; epoch losses 1/5 {:.3}/{:.3}",
        report.overall.rows, summary.state.best_epoch, h[0].total, h[4].total
    ))
}

fn is_mean_std(cell: &str) -> bool {
    let parts: Vec<&str> = cell.trim().split(" \u{b1} ").collect();
    parts.len() == 2 && parts.iter().all(|p| p.parse::<f64>().is_ok() && p.split('.').nth(1).is_some_and(|d| d.len() == 2))
}

fn cells(line: &str) -> Vec<&str> {
    line.split(" | ").map(str::trim).collect()
}

fn table_shapes(dir: &Path) -> Outcome {
    let mut config = tiny(8, 20, false);
    config.epochs = 1;
    let ab = ablate(&config, &dir.join("ablate")).map_err(err)?;
    let lines: Vec<&str> = ab.table.lines().collect();
    check(lines.len() == 5, || format!("ablation table has {} lines:\n{}", lines.len(), ab.table))?;
    check(cells(lines[0]) == ["Method", "DICE (%)", "ASD (mm)"], || format!("header {:?}", lines[0]))?;
    for (line, name) in lines[2..].iter().zip(ABLATION_NAMES) {
        let c = cells(line);
        check(c.len() == 3 && c[0] == name && is_mean_std(c[1]) && is_mean_std(c[2]), || format!("row {line:?}"))?;
    }
    let (_, table) = sample_size_study(&config, &[5, 10, 15, 20], &dir.join("sizes")).map_err(err)?;
    let lines: Vec<&str> = table.lines().collect();
    check(lines.len() == 4, || format!("sample-size table has {} lines:\n{table}", lines.len()))?;
    check(cells(lines[0]) == ["Method", "Metrics", "5", "10", "15", "20"], || format!("header {:?}", lines[0]))?;
    for (line, metric) in lines[2..].iter().zip(["DICE (%)", "ASD (mm)"]) {
        let c = cells(line);
        check(c.len() == 6 && c[1] == metric && c[2..].iter().all(|x| is_mean_std(x)), || format!("row {line:?}"))?;
    }
    Ok("ablation: 3 method rows x DICE/ASD; sample sizes: DICE/ASD rows x 4 size columns".into())
}

fn determinism(dir: &Path) -> Outcome {
    let config = tiny(9, 6, true);
    let mut bytes = Vec::new();
    for run in ["a", "b"] {
        train_and_test(&config, &dir.join(run)).map_err(err)?;
        bytes.push(std::fs::read(dir.join(run).join(METRICS_CSV)).map_err(err)?);
    }
    check(bytes[0] == bytes[1], || "metrics CSVs differ".into())?;
    Ok(format!("two runs, {} identical CSV bytes", bytes[0].len()))
}

fn main() -> ExitCode {
    let work = tempfile::tempdir().expect("temp dir");
    let w = work.path();
    let criteria: [Criterion; 9] = [
        ("distance transform oracle", Box::new(distance_oracle)),
        ("loss gradient suite", Box::new(gradient_suite)),
        ("curvature analytics", Box::new(curvature_analytics)),
        ("metric identities", Box::new(metric_identities)),
        ("freeze contract", Box::new(freeze_contract)),
        ("ablation equivalence", Box::new(ablation_equivalence)),
        ("few-shot smoke experiment", Box::new(|| smoke_experiment(&w.join("smoke")))),
        ("table shapes", Box::new(|| table_shapes(&w.join("tables")))),
        ("determinism", Box::new(|| determinism(&w.join("det")))),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = run();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {} ({name}): PASS [{secs:.1} s] {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {} ({name}): FAIL [{secs:.1} s] {why}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
