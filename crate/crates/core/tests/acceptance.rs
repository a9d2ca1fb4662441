//! Acceptance gate. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any criterion fails.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use cascadeboost::exact_sum::exact_sum;
use cascadeboost::gbdt::{fit, Node, TrainConfig};
use cascadeboost::metrics::category_adherence;
use cascadeboost::objective::{
    constraint_only_gradhess, constraint_only_loss, pred_ratio, stage1_gradhess, stage1_loss, stage2_gradhess,
    stage2_loss, stage3_gradhess, stage3_loss, stage3_target, Stage1Objective, StageKind, StageTargets,
};
use cascadeboost::pipeline::{run_pipeline, run_stage1, run_trivial_probe, PipelineConfig, PipelineRun};
use cascadeboost::scenario::{generate, ScenarioConfig, TotalCurve};
use cascadeboost::{FeatureMatrix, GradHess, PanelDataset, Result, WeekGroup};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = std::result::Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 9] = [
        ("1 gradient and Hessian correctness", gradients),
        ("2 engine matches brute-force enumerator", engine_oracle),
        ("3 constraint-only probe reaches C_w/count_w", trivial_probe),
        ("4 stage-3 targets sum to category totals", target_identity),
        ("5 share ratios invariant to weekly scaling", ratio_invariance),
        ("6 category adherence of the cascade", adherence),
        ("7 fit/constraint ratio increases with bias", term_monotonicity),
        ("8 byte-identical outputs across thread counts", determinism),
        ("9 non-increasing training loss curves", loss_monotonicity),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS [{name}] ({secs:.2}s) {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL [{name}] ({secs:.2}s) {detail}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

fn ok<T>(r: Result<T>) -> std::result::Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn default_scenario(bias: f64) -> PanelDataset<f64> {
    let cfg = ScenarioConfig {
        stage1_bias_injection: bias,
        ..ScenarioConfig::default()
    };
    generate::<f64>(&cfg).expect("default scenario").dataset
}

fn single_threaded<R: Send>(f: impl FnOnce() -> R + Send) -> R {
    rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .expect("pool")
        .install(f)
}

// ---------------------------------------------------------------------------
// 1

struct Instance {
    groups: Vec<WeekGroup<f64>>,
    m: usize,
    targets: Vec<f64>,
    preds: Vec<f64>,
}

/// Unit-scale instance: values in [0, 1), weekly totals near half the row count.
fn random_instance(rng: &mut ChaCha8Rng) -> Instance {
    let weeks = rng.gen_range(3..=10);
    let n = rng.gen_range(weeks..=50);
    // Every week gets at least one row.
    let mut counts = vec![1usize; weeks];
    for _ in weeks..n {
        counts[rng.gen_range(0..weeks)] += 1;
    }
    let future_weeks = rng.gen_range(1..weeks);
    let mut groups = Vec::new();
    let mut next = 0;
    let mut m = 0;
    for (w, &count) in counts.iter().enumerate() {
        let is_future = w >= weeks - future_weeks;
        if !is_future {
            m = next + count;
        }
        groups.push(WeekGroup {
            week: w as u32,
            members: (next..next + count).collect(),
            count,
            category_total: count as f64 * rng.gen_range(0.25..0.75),
            is_future,
        });
        next += count;
    }
    Instance {
        groups,
        m,
        targets: (0..n).map(|_| rng.gen_range(0.0..1.0)).collect(),
        preds: (0..n).map(|_| rng.gen_range(0.0..1.0)).collect(),
    }
}

fn check_derivatives(
    preds: &[f64],
    loss: &dyn Fn(&[f64]) -> f64,
    gh: &[GradHess<f64>],
    worst: &mut (f64, f64),
) -> std::result::Result<(), String> {
    const STEP: f64 = 1e-5;
    const STEP2: f64 = 1e-3;
    let base = loss(preds);
    for j in 0..preds.len() {
        let mut p = preds.to_vec();
        let at = |p: &mut Vec<f64>, d: f64| {
            p[j] = preds[j] + d;
            loss(p)
        };
        let fd = (at(&mut p, STEP) - at(&mut p, -STEP)) / (2.0 * STEP);
        let g = gh[j].grad;
        let rel = (fd - g).abs() / (fd.abs().max(g.abs()) + 1e-300);
        worst.0 = worst.0.max(rel);
        if rel >= 1e-6 {
            return Err(format!("row {j}: gradient {g} vs difference {fd} (rel {rel:.3e})"));
        }
        let sd = (at(&mut p, STEP2) - 2.0 * base + at(&mut p, -STEP2)) / (STEP2 * STEP2);
        let h = gh[j].hess;
        let rel = (sd - h).abs() / h.abs();
        worst.1 = worst.1.max(rel);
        if rel >= 1e-4 {
            return Err(format!("row {j}: Hessian {h} vs second difference {sd} (rel {rel:.3e})"));
        }
    }
    Ok(())
}

fn gradients() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let inst = random_instance(&mut rng);
        let groups = &inst.groups;

        let s1 = StageTargets {
            values: inst.targets[..inst.m].to_vec(),
            kind: StageKind::Stage1,
        };
        let p1 = &inst.preds[..inst.m];
        check_derivatives(
            p1,
            &|p| stage1_loss(&s1, p).unwrap(),
            &ok(stage1_gradhess(&s1, p1))?,
            &mut worst,
        )
        .map_err(|e| format!("stage1: {e}"))?;

        let s2 = StageTargets {
            values: inst.targets.clone(),
            kind: StageKind::Stage2,
        };
        check_derivatives(
            &inst.preds,
            &|p| stage2_loss(groups, &s2, p).unwrap(),
            &ok(stage2_gradhess(groups, &s2, &inst.preds))?,
            &mut worst,
        )
        .map_err(|e| format!("stage2: {e}"))?;

        let s3 = StageTargets {
            values: inst.targets.clone(),
            kind: StageKind::Stage3,
        };
        check_derivatives(
            &inst.preds,
            &|p| stage3_loss(groups, &s3, p).unwrap(),
            &ok(stage3_gradhess(groups, &s3, &inst.preds))?,
            &mut worst,
        )
        .map_err(|e| format!("stage3: {e}"))?;

        check_derivatives(
            &inst.preds,
            &|p| constraint_only_loss(groups, p).unwrap(),
            &ok(constraint_only_gradhess(groups, &inst.preds))?,
            &mut worst,
        )
        .map_err(|e| format!("constraint-only: {e}"))?;
    }
    let elapsed = start.elapsed();
    if elapsed >= Duration::from_secs(5) {
        return Err(format!("took {elapsed:?}"));
    }
    Ok(format!(
        "100 instances x 4 objectives; worst gradient rel {:.2e}, worst Hessian rel {:.2e}",
        worst.0, worst.1
    ))
}

// ---------------------------------------------------------------------------
// 2

/// Exhaustive tree builder: tries every feature and every cut between
/// distinct values, summing gradients of each side from scratch.
struct BruteForce<'a> {
    x: &'a [Vec<f64>],
    grad: &'a [f64],
    hess: &'a [f64],
    max_depth: usize,
    nodes: Vec<Node<f64>>,
    out: Vec<f64>,
}

impl BruteForce<'_> {
    fn build(&mut self, rows: &[usize], depth: usize) -> usize {
        let idx = self.nodes.len();
        self.nodes.push(Node::Leaf { weight: 0.0 });
        let sum = |rs: &[usize], v: &[f64]| exact_sum(rs.iter().map(|&r| v[r]));
        let (g, h) = (sum(rows, self.grad), sum(rows, self.hess));

        let mut best: Option<(f64, usize, f64)> = None;
        if depth < self.max_depth {
            for f in 0..self.x[0].len() {
                let mut values: Vec<f64> = rows.iter().map(|&r| self.x[r][f]).collect();
                values.sort_by(|a, b| a.partial_cmp(b).unwrap());
                values.dedup();
                for pair in values.windows(2) {
                    let mid = (pair[0] + pair[1]) / 2.0;
                    let threshold = if mid > pair[0] { mid } else { pair[1] };
                    let left: Vec<usize> = rows.iter().copied().filter(|&r| self.x[r][f] < threshold).collect();
                    let right: Vec<usize> = rows.iter().copied().filter(|&r| self.x[r][f] >= threshold).collect();
                    let (gl, hl) = (sum(&left, self.grad), sum(&left, self.hess));
                    let (gr, hr) = (sum(&right, self.grad), sum(&right, self.hess));
                    let gain = 0.5 * (gl * gl / hl + gr * gr / hr - g * g / h);
                    if best.is_none_or(|b| gain > b.0) {
                        best = Some((gain, f, threshold));
                    }
                }
            }
        }
        match best {
            Some((gain, feature, threshold)) if gain > 0.0 => {
                let left_rows: Vec<usize> = rows.iter().copied().filter(|&r| self.x[r][feature] < threshold).collect();
                let right_rows: Vec<usize> = rows.iter().copied().filter(|&r| self.x[r][feature] >= threshold).collect();
                let left = self.build(&left_rows, depth + 1);
                let right = self.build(&right_rows, depth + 1);
                self.nodes[idx] = Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                };
            }
            _ => {
                let weight = -g / h;
                for &r in rows {
                    self.out[r] = weight;
                }
                self.nodes[idx] = Node::Leaf { weight };
            }
        }
        idx
    }
}

fn engine_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let mut splits = 0;
    for case in 0..20 {
        let n = rng.gen_range(2..=8);
        let d = rng.gen_range(1..=2);
        let max_depth = rng.gen_range(1..=3);
        // Coarse grid so duplicate values and tied gains occur.
        let x: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..d).map(|_| rng.gen_range(0..4) as f64 * 0.5).collect())
            .collect();
        let t: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let lr = 0.3;
        let config = TrainConfig {
            num_rounds: 3,
            max_depth,
            learning_rate: lr,
            lambda: 0.0,
            min_child_weight: 0.0,
            min_gain: 0.0,
            seed: 0,
        };
        let targets = StageTargets {
            values: t.clone(),
            kind: StageKind::Stage1,
        };
        let fm = ok(FeatureMatrix::from_rows(&x))?;
        let got = ok(fit(&fm, &ok(Stage1Objective::new(&targets))?, &config))?;

        let m = n as f64;
        let base = exact_sum(t.iter().copied()) / m;
        let mut tree_sum = vec![0.0; n];
        let mut preds = vec![base; n];
        for round in 0..3 {
            let grad: Vec<f64> = t.iter().zip(&preds).map(|(t, p)| -2.0 * (t - p) / m).collect();
            let hess = vec![2.0 / m; n];
            let mut bf = BruteForce {
                x: &x,
                grad: &grad,
                hess: &hess,
                max_depth,
                nodes: Vec::new(),
                out: vec![0.0; n],
            };
            bf.build(&(0..n).collect::<Vec<_>>(), 0);
            let tree = &got.model.trees[round];
            if tree.nodes != bf.nodes {
                return Err(format!(
                    "case {case} round {round}: engine tree {:?} vs enumerator {:?}",
                    tree.nodes, bf.nodes
                ));
            }
            splits += bf.nodes.iter().filter(|n| matches!(n, Node::Split { .. })).count();
            for i in 0..n {
                tree_sum[i] += bf.out[i];
                preds[i] = base + lr * tree_sum[i];
            }
        }
        if got.predictions != preds || got.model.base_score != base {
            return Err(format!("case {case}: predictions differ"));
        }
    }
    Ok(format!("20 datasets x 3 rounds identical ({splits} splits compared)"))
}

// ---------------------------------------------------------------------------
// 3

fn trivial_probe() -> Outcome {
    let dataset = default_scenario(0.3);
    let config = PipelineConfig::<f64>::default().probe;
    if config.num_rounds > 200 {
        return Err(format!("probe configured for {} rounds", config.num_rounds));
    }
    let preds = ok(run_trivial_probe(&dataset, &config))?;
    let mut worst = 0.0f64;
    for g in dataset.groups() {
        let level = g.category_total / g.count as f64;
        for &j in &g.members {
            worst = worst.max((preds[j] - level).abs() / level);
        }
    }
    if worst < 0.01 {
        Ok(format!("{} rounds, worst relative gap {worst:.2e}", config.num_rounds))
    } else {
        Err(format!("worst relative gap {worst:.4} after {} rounds", config.num_rounds))
    }
}

// ---------------------------------------------------------------------------
// 4

fn target_identity() -> Outcome {
    let quick = TrainConfig {
        num_rounds: 40,
        max_depth: 4,
        ..TrainConfig::default()
    };
    let curves = [
        TotalCurve::Seasonal {
            base: 1000.0,
            amplitude: 0.2,
            period: 52.0,
        },
        TotalCurve::Flat { base: 37.5 },
        TotalCurve::LinearTrend { base: 50.0, slope: 3.25 },
    ];
    let mut worst = 0.0f64;
    let mut weeks = 0;
    for seed in 1..=4u64 {
        for curve in &curves {
            let cfg = ScenarioConfig {
                seed,
                category_total_curve: curve.clone(),
                stage1_bias_injection: 0.1 * seed as f64,
                ..ScenarioConfig::default()
            };
            let dataset = ok(generate::<f64>(&cfg))?.dataset;
            let s1 = ok(run_stage1(&dataset, &quick))?;
            let ratios = ok(pred_ratio(&s1.predictions, dataset.groups()))?;
            let targets = ok(stage3_target(&ratios, dataset.groups()))?;
            for g in dataset.groups() {
                let sum = exact_sum(g.members.iter().map(|&j| targets.values[j]));
                let rel = (sum - g.category_total).abs() / g.category_total.abs();
                worst = worst.max(rel);
                weeks += 1;
                if rel >= 1e-9 {
                    return Err(format!("seed {seed} week {}: relative error {rel:.3e}", g.week));
                }
            }
        }
    }
    Ok(format!("{weeks} weeks over 12 scenarios, worst relative error {worst:.2e}"))
}

// ---------------------------------------------------------------------------
// 5

fn ratio_invariance() -> Outcome {
    let dataset = default_scenario(0.3);
    let quick = TrainConfig {
        num_rounds: 40,
        max_depth: 4,
        ..TrainConfig::default()
    };
    let s1 = ok(run_stage1(&dataset, &quick))?.predictions;
    let groups = dataset.groups();
    let ratios = ok(pred_ratio(&s1, groups))?;
    let targets = ok(stage3_target(&ratios, groups))?;
    let (mut worst_ratio, mut worst_target) = (0.0f64, 0.0f64);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for k in [0.5, 1.3, 10.0] {
        // Scale every week by k, and separately a random subset of weeks.
        for pass in 0..2 {
            let mut scaled = s1.clone();
            for g in groups {
                if pass == 0 || rng.gen_bool(0.5) {
                    for &j in &g.members {
                        scaled[j] *= k;
                    }
                }
            }
            let r2 = ok(pred_ratio(&scaled, groups))?;
            let t2 = ok(stage3_target(&r2, groups))?;
            for j in 0..s1.len() {
                let dr = (r2.values[j] - ratios.values[j]).abs();
                let dt = (t2.values[j] - targets.values[j]).abs() / targets.values[j].abs().max(f64::MIN_POSITIVE);
                worst_ratio = worst_ratio.max(dr);
                worst_target = worst_target.max(dt);
                if dr >= 1e-12 || dt >= 1e-9 {
                    return Err(format!("k={k} row {j}: ratio change {dr:.3e}, target change {dt:.3e}"));
                }
            }
        }
    }
    Ok(format!("worst ratio change {worst_ratio:.2e}, worst target change {worst_target:.2e}"))
}

// ---------------------------------------------------------------------------
// 6, 7, 9

fn future_adherence(dataset: &PanelDataset<f64>, preds: &[f64]) -> Result<Vec<f64>> {
    let a = category_adherence(preds, dataset.future_groups())?;
    Ok(a.per_week.iter().map(|w| w.deviation).collect())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn default_run(dataset: &PanelDataset<f64>) -> std::result::Result<PipelineRun<f64>, String> {
    ok(run_pipeline(dataset, &PipelineConfig::default()))
}

fn adherence() -> Outcome {
    let dataset = default_scenario(0.3);
    let start = Instant::now();
    let run = single_threaded(|| default_run(&dataset))?;
    let elapsed = start.elapsed();

    let a1 = ok(future_adherence(&dataset, &run.outputs.stage1))?;
    let a2 = ok(future_adherence(&dataset, &run.outputs.stage2))?;
    let a3 = ok(future_adherence(&dataset, &run.outputs.stage3))?;
    let (m1, m2, m3) = (mean(&a1), mean(&a2), mean(&a3));
    let better = a1.iter().zip(&a2).filter(|(s1, s2)| s2 < s1).count();
    let summary = format!(
        "mean adherence stage1 {m1:.4}, stage2 {m2:.4}, stage3 {m3:.4}; stage2 better on {better}/{} weeks; {:.2}s single-threaded",
        a1.len(),
        elapsed.as_secs_f64()
    );
    let mut problems = Vec::new();
    if m3 > 0.05 {
        problems.push("stage3 mean above 0.05");
    }
    if m3 > 0.5 * m1 {
        problems.push("stage3 mean above half of stage1");
    }
    if (better as f64) < 0.9 * a1.len() as f64 {
        problems.push("stage2 better on fewer than 90% of weeks");
    }
    if elapsed >= Duration::from_secs(60) {
        problems.push("runtime at or above 60s");
    }
    if problems.is_empty() {
        Ok(summary)
    } else {
        Err(format!("{}: {summary}", problems.join(", ")))
    }
}

fn term_monotonicity() -> Outcome {
    let mut ratios = Vec::new();
    for bias in [0.0, 0.15, 0.3] {
        let run = default_run(&default_scenario(bias))?;
        let r = run
            .diagnostics
            .terms
            .fit_to_constraint_ratio
            .ok_or_else(|| format!("constraint term is zero at bias {bias}"))?;
        ratios.push(r);
    }
    let summary = format!(
        "fit/constraint at bias 0, 0.15, 0.30: {:.4}, {:.4}, {:.4}",
        ratios[0], ratios[1], ratios[2]
    );
    if ratios[0] < ratios[1] && ratios[1] < ratios[2] {
        Ok(summary)
    } else {
        Err(format!("not increasing: {summary}"))
    }
}

fn loss_monotonicity() -> Outcome {
    let dataset = default_scenario(0.3);
    let run = default_run(&dataset)?;
    let mut rounds = 0;
    for (stage, fit) in [(1, &run.stage1), (2, &run.stage2), (3, &run.stage3)] {
        for (r, w) in fit.loss_curve.windows(2).enumerate() {
            if w[1] > w[0] {
                return Err(format!("stage {stage} loss rose at round {}: {} -> {}", r + 1, w[0], w[1]));
            }
        }
        rounds += fit.loss_curve.len() - 1;
    }
    Ok(format!("{rounds} rounds across 3 stages, none increasing"))
}

// ---------------------------------------------------------------------------
// 8

fn cli(args: &[&str]) -> std::result::Result<(), String> {
    let argv: Vec<&str> = std::iter::once("cascadeboost").chain(args.iter().copied()).collect();
    match cascadeboost::cli::parse_and_dispatch(argv) {
        0 => Ok(()),
        code => Err(format!("`{}` exited with {code}", args.join(" "))),
    }
}

fn run_all(dir: &Path, threads: &str) -> std::result::Result<BTreeMap<String, Vec<u8>>, String> {
    let p = |name: &str| dir.join(name).to_string_lossy().into_owned();
    let (scen, models) = (p("scenario"), p("models"));
    let data = format!("{scen}/panel.csv");
    cli(&["--threads", threads, "generate", "--seed", "7", "--out", &scen])?;
    cli(&["--threads", threads, "train", "--data", &data, "--out", &models])?;
    cli(&["--threads", threads, "predict", "--models", &models, "--data", &data, "--out", &p("preds.csv")])?;
    cli(&["--threads", threads, "diagnose", "--data", &data, "--models", &models, "--out", &p("report.json")])?;
    let mut files = BTreeMap::new();
    collect(dir, dir, &mut files).map_err(|e| e.to_string())?;
    Ok(files)
}

fn collect(root: &Path, dir: &Path, files: &mut BTreeMap<String, Vec<u8>>) -> std::io::Result<()> {
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            collect(root, &path, files)?;
        } else {
            let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
            files.insert(rel, std::fs::read(&path)?);
        }
    }
    Ok(())
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut runs = Vec::new();
    for (i, threads) in ["1", "4", "1", "4"].iter().enumerate() {
        let dir = tmp.path().join(format!("run{i}"));
        runs.push(((*threads).to_string(), run_all(&dir, threads)?));
    }
    let (_, reference) = &runs[0];
    for (threads, files) in &runs[1..] {
        if files.keys().ne(reference.keys()) {
            return Err(format!("file sets differ with --threads {threads}"));
        }
        for (name, bytes) in files {
            if bytes != &reference[name] {
                return Err(format!("{name} differs with --threads {threads}"));
            }
        }
    }
    Ok(format!(
        "{} files byte-identical over 4 runs (threads 1, 4, 1, 4)",
        reference.len()
    ))
}
