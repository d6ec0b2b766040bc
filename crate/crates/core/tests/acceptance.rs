//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so the lines are always printed; exits non-zero if any
//! criterion fails.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use oa_core::annotation::{
    aggregate_judgments, generate_tasks, task_directions, AggregationPolicy, Decision, ErroneousFeatureSet, Judgment, Side,
    TaskConfig,
};
use oa_core::detector::{detect, erroneous_score, DetectConfig};
use oa_core::evaluation::{least_confidence_rank, precision_at_k, tau_sweep, EvaluationRun};
use oa_core::global::{rank_features, FeatureFilter, GlobalConfig, GlobalFeatureContribution};
use oa_core::local::{fit_surrogate, generate_perturbations, ExplainerConfig, LocalExplanation, PerturbationSample};
use oa_core::model::{LogisticModel, ModelHandle, TrainConfig};
use oa_core::synth::{generate_benchmark, perfect_judgments, SynthConfig};
use oa_core::text::{build_corpus, ClassConfig, Corpus, Document};

type Outcome = Result<String, String>;

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn explanation(pairs: &[(&str, f64)]) -> LocalExplanation {
    LocalExplanation {
        document_id: "fixture".into(),
        predicted_class: 2,
        predicted_prob: 0.9,
        contributions: pairs.iter().map(|(f, c)| (f.to_string(), *c)).collect(),
        surrogate_r2: 1.0,
        intercept: 0.0,
        seed: 0,
    }
}

// 1. Erroneous-score arithmetic anchor.
fn criterion_1() -> Outcome {
    let set = ErroneousFeatureSet::from_features([("panera", 2)]);
    let s = erroneous_score(
        &explanation(&[("panera", 0.576), ("gives", 0.046), ("diarrhea", -0.159)]),
        &set,
        0.0,
    );
    check((s.e - 0.926).abs() <= 1e-3, format!("e = {:.6} (target 0.926 +- 1e-3)", s.e))
}

// 2. Global aggregation equals a naive double loop.
fn small_corpus(seed: u64) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vocab: Vec<String> = (0..60).map(|i| format!("t{i:02}")).collect();
    let docs = (0..50)
        .map(|i| {
            let label = rng.gen_range(0..3);
            let len = rng.gen_range(3..=8);
            let tokens: Vec<String> = (0..len)
                .map(|_| {
                    // Words drift toward a third of the vocabulary per class.
                    let j = if rng.gen_bool(0.5) { label * 20 + rng.gen_range(0..20) } else { rng.gen_range(0..60) };
                    vocab[j].clone()
                })
                .collect();
            Document::from_tokens(format!("doc{:02}", 49 - i), &tokens, Some(label))
        })
        .collect();
    build_corpus(docs).unwrap()
}

fn naive_ranking(model: &LogisticModel, corpus: &Corpus, filter: FeatureFilter, min_support: usize, top_n: usize) -> Vec<GlobalFeatureContribution> {
    let mut docs: Vec<&Document> = corpus.documents().iter().collect();
    docs.sort_by(|a, b| a.id.cmp(&b.id));
    let vocabulary: BTreeSet<&str> = docs.iter().flat_map(|d| d.tokens.iter().map(String::as_str)).collect();
    let k = model.classes().k();
    let mut out = Vec::new();
    for f in vocabulary {
        let mut sums = vec![0.0f64; k];
        let mut n = 0usize;
        for d in &docs {
            if !d.tokens.iter().any(|t| t == f) {
                continue;
            }
            n += 1;
            let full = model.probabilities(&d.tokens);
            let kept: Vec<String> = d.tokens.iter().filter(|t| *t != f).cloned().collect();
            let masked = model.probabilities(&kept);
            for c in 0..k {
                sums[c] += (masked[c] - full[c]).abs();
            }
        }
        if n < min_support {
            continue;
        }
        let means: Vec<f64> = sums.iter().map(|s| s / n as f64).collect();
        let mut direction = 0;
        for c in 1..k {
            if means[c] > means[direction] {
                direction = c;
            }
        }
        if filter == FeatureFilter::NonNeutral && direction == model.classes().neutral_class() {
            continue;
        }
        out.push(GlobalFeatureContribution {
            feature: f.to_string(),
            direction,
            magnitude: means[direction],
            n_instances: n,
            rank: 0,
        });
    }
    out.sort_by(|a, b| {
        b.magnitude
            .partial_cmp(&a.magnitude)
            .unwrap()
            .then(b.n_instances.cmp(&a.n_instances))
            .then(a.feature.cmp(&b.feature))
    });
    out.truncate(top_n);
    for (i, c) in out.iter_mut().enumerate() {
        c.rank = i + 1;
    }
    out
}

fn criterion_2() -> Outcome {
    let mut compared = 0;
    for seed in 0..3 {
        let corpus = small_corpus(seed);
        assert!(corpus.features().count() <= 100);
        let (model, _) = LogisticModel::train(&corpus, &ClassConfig::sentiment(), &TrainConfig::default()).unwrap();
        let handle = ModelHandle::builtin(model.clone());
        for (filter, min_support, top_n, workers) in [
            (FeatureFilter::NonNeutral, 3, 2000, None),
            (FeatureFilter::All, 1, 2000, Some(3)),
            (FeatureFilter::NonNeutral, 2, 7, Some(1)),
        ] {
            let config = GlobalConfig {
                filter,
                top_n,
                min_support,
                workers,
            };
            let got = rank_features(&handle, &corpus, &config).unwrap();
            let want = naive_ranking(&model, &corpus, filter, min_support, top_n);
            if got.len() != want.len() {
                return Err(format!("seed {seed}: {} features ranked, oracle has {}", got.len(), want.len()));
            }
            for (g, w) in got.iter().zip(&want) {
                if g.feature != w.feature
                    || g.direction != w.direction
                    || g.magnitude.to_bits() != w.magnitude.to_bits()
                    || g.n_instances != w.n_instances
                    || g.rank != w.rank
                {
                    return Err(format!("seed {seed}: {g:?} != oracle {w:?}"));
                }
            }
            compared += got.len();
        }
    }
    Ok(format!("{compared} ranked features bit-identical to the naive recomputation (3 corpora x 3 configs)"))
}

// 3. Surrogate recovery and agreement with a dense least-squares oracle.
fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst_recovery = 0.0f64;
    for u in 1..=10usize {
        let tokens: Vec<String> = (0..u).map(|i| format!("w{i}")).collect();
        let doc = Document::from_tokens("d", &tokens, None);
        let perturbations = generate_perturbations(&doc, 1 << u, 11, 0.25).unwrap();
        let beta: Vec<f64> = (0..u).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b0 = rng.gen_range(-0.5..0.5);
        let samples: Vec<PerturbationSample> = perturbations
            .into_iter()
            .map(|p| {
                let y = b0 + p.mask.iter().zip(&beta).map(|(&z, b)| if z { *b } else { 0.0 }).sum::<f64>();
                p.with_target(y)
            })
            .collect();
        // Exact recovery needs the unpenalized solve; any ridge term biases the estimate.
        let fit = fit_surrogate(&samples, 0.0).unwrap();
        for (c, b) in fit.coefficients.iter().zip(&beta) {
            worst_recovery = worst_recovery.max((c - b).abs());
        }
        worst_recovery = worst_recovery.max((fit.intercept - b0).abs());
    }

    let mut worst_oracle = 0.0f64;
    for _ in 0..100 {
        let u = rng.gen_range(1..=8usize);
        let n = rng.gen_range(u + 2..=40);
        let alpha = 1e-3;
        let samples: Vec<PerturbationSample> = (0..n)
            .map(|_| PerturbationSample {
                mask: (0..u).map(|_| rng.gen_bool(0.5)).collect(),
                tokens: Vec::new(),
                weight: rng.gen_range(0.05..1.0),
                target: rng.gen_range(0.0..1.0),
            })
            .collect();
        let fit = fit_surrogate(&samples, alpha).unwrap();

        // Augmented weighted system [sqrt(w) * [1 x]; 0 sqrt(alpha) I] solved by SVD.
        let mut a = DMatrix::<f64>::zeros(n + u, u + 1);
        let mut y = DVector::<f64>::zeros(n + u);
        for (i, s) in samples.iter().enumerate() {
            let r = s.weight.sqrt();
            a[(i, 0)] = r;
            for j in 0..u {
                a[(i, j + 1)] = if s.mask[j] { r } else { 0.0 };
            }
            y[i] = r * s.target;
        }
        for j in 0..u {
            a[(n + j, j + 1)] = alpha.sqrt();
        }
        let solution = a.svd(true, true).solve(&y, 1e-14).unwrap();
        worst_oracle = worst_oracle.max((solution[0] - fit.intercept).abs());
        for j in 0..u {
            worst_oracle = worst_oracle.max((solution[j + 1] - fit.coefficients[j]).abs());
        }
    }
    check(
        worst_recovery <= 1e-6 && worst_oracle <= 1e-8,
        format!("max recovery error {worst_recovery:.2e} (<= 1e-6), max deviation from SVD oracle {worst_oracle:.2e} (<= 1e-8)"),
    )
}

// 4. Planted-error benchmark.
struct SeedResult {
    caught: usize,
    framework: f64,
    baseline: f64,
    p0: Option<f64>,
    p04: Option<f64>,
}

fn benchmark_seed(seed: u64) -> SeedResult {
    let bench = generate_benchmark(&SynthConfig {
        seed,
        ..SynthConfig::default()
    })
    .unwrap();
    let model = ModelHandle::builtin(
        LogisticModel::train(&bench.train, &bench.classes, &TrainConfig { seed, ..TrainConfig::default() })
            .unwrap()
            .0,
    );
    let ranking = rank_features(&model, &bench.test, &GlobalConfig::default()).unwrap();
    let definitions: HashMap<String, String> = bench.definitions.clone().into_iter().collect();
    let tasks = generate_tasks(&ranking, &definitions, 50, &bench.gold_pool, &bench.classes, &TaskConfig::default()).unwrap();
    let judgments = perfect_judgments(&tasks, &bench.polarity, 5);
    let set = aggregate_judgments(&judgments, &task_directions(&tasks), &AggregationPolicy::default());
    let caught = bench.poison.iter().filter(|p| set.contains(p)).count();

    let config = DetectConfig {
        explainer: ExplainerConfig {
            seed,
            ..ExplainerConfig::default()
        },
        ..DetectConfig::default()
    };
    let (report, _) = detect(&bench.test, &model, &set, &config).unwrap();
    let framework = precision_at_k(&EvaluationRun::from_detection(&report, &bench.test).unwrap(), &[100]).unwrap()[0].1;
    let baseline = precision_at_k(&least_confidence_rank(&model, &bench.test).unwrap(), &[100]).unwrap()[0].1;
    let sweep = tau_sweep(|t| Ok(report.with_threshold(t)), &bench.test, &[0.0, 0.2, 0.4]).unwrap();
    assert!(sweep.windows(2).all(|w| w[0].flagged_fraction() >= w[1].flagged_fraction()));
    SeedResult {
        caught,
        framework,
        baseline,
        p0: sweep[0].precision,
        p04: sweep[2].precision,
    }
}

fn criterion_4() -> (Outcome, Duration) {
    let start = Instant::now();
    let results: Vec<SeedResult> = (0..5).map(benchmark_seed).collect();
    let elapsed = start.elapsed();
    let caught: Vec<usize> = results.iter().map(|r| r.caught).collect();
    let a = caught.iter().all(|&c| c >= 8);
    let b = results.iter().all(|r| r.framework > r.baseline);
    let mean = |f: fn(&SeedResult) -> Option<f64>| -> Option<f64> {
        let v: Option<Vec<f64>> = results.iter().map(f).collect();
        v.map(|v| v.iter().sum::<f64>() / v.len() as f64)
    };
    let (m0, m04) = (mean(|r| r.p0), mean(|r| r.p04));
    let c = matches!((m0, m04), (Some(x), Some(y)) if y >= x);
    let p_at_100: Vec<String> = results.iter().map(|r| format!("{:.2}/{:.2}", r.framework, r.baseline)).collect();
    let detail = format!(
        "(a) poison caught per seed {caught:?}; (b) p@100 framework/baseline {}; (c) mean precision tau=0 {:.3} -> tau=0.4 {:.3}; {:.1}s",
        p_at_100.join(" "),
        m0.unwrap_or(f64::NAN),
        m04.unwrap_or(f64::NAN),
        elapsed.as_secs_f64()
    );
    (check(a && b && c && elapsed < Duration::from_secs(300), detail), elapsed)
}

// 5. Range and threshold properties over random explanations.
fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut exact_ones = 0;
    for i in 0..1000 {
        let u = rng.gen_range(1..=12);
        let mut contributions: Vec<(String, f64)> = (0..u).map(|j| (format!("f{j}"), rng.gen_range(-1.0..1.0))).collect();
        let max = contributions.iter().map(|(_, c)| c.abs()).fold(0.0, f64::max);
        for (_, c) in &mut contributions {
            *c /= max;
        }
        let force_one = rng.gen_bool(0.25);
        let erroneous: Vec<(String, usize)> = contributions
            .iter()
            .filter(|(_, c)| if force_one { *c > 0.0 } else { rng.gen_bool(0.4) })
            .map(|(f, _)| (f.clone(), 2))
            .collect();
        let set = ErroneousFeatureSet::from_features(erroneous);
        let e = LocalExplanation {
            contributions: contributions.clone(),
            ..explanation(&[])
        };
        let s = erroneous_score(&e, &set, 0.0);
        if s.e > 1.0 {
            return Err(format!("fixture {i}: e = {} > 1", s.e));
        }
        let (t1, t2) = {
            let a = rng.gen_range(-2.0..1.0);
            let b = rng.gen_range(-2.0..1.0);
            (f64::min(a, b), f64::max(a, b))
        };
        let f1 = erroneous_score(&e, &set, t1).flagged;
        let f2 = erroneous_score(&e, &set, t2).flagged;
        if f2 && !f1 {
            return Err(format!("fixture {i}: flagged at tau {t2} but not at {t1}"));
        }
        let all_positive_erroneous = contributions.iter().filter(|(_, c)| *c > 0.0).all(|(f, _)| set.contains(f));
        let has_positive = contributions.iter().any(|(_, c)| *c > 0.0);
        let no_negative_erroneous = contributions.iter().filter(|(f, _)| set.contains(f)).all(|(_, c)| *c >= 0.0);
        let expected_one = has_positive && all_positive_erroneous && no_negative_erroneous;
        if (s.e == 1.0) != expected_one {
            return Err(format!("fixture {i}: e = {} but all-positive-erroneous = {expected_one}", s.e));
        }
        exact_ones += usize::from(expected_one);
    }
    Ok(format!("1000 fixtures: e <= 1, flagged sets nested, e == 1 exactly in the {exact_ones} all-positive-erroneous cases"))
}

// 6. Judgment aggregation replay against a hand-computed result.
fn criterion_6() -> Outcome {
    // Features f00..f49; feature f is judged by assessors (f + t) mod 10 for t in 0..5.
    // Assessors a8 and a9 fail their golds and always answer "strongly disagree".
    // Trusted votes depend on the block of ten and on the voter's position among the
    // feature's trusted voters:
    //   block 0: all 5                -> disagree
    //   block 1: all 1                -> agree
    //   block 2: first 1, rest 5      -> disagree unless only 3 trusted (r = 5..8)
    //   block 3: first 3, second 2, rest 4 -> disagree only with 5 trusted (r = 0..3)
    //   block 4: alternate 1, 5       -> agree only with 5 trusted (r = 0..3)
    // Trusted voters per r = f mod 10: 5,5,5,5,4,3,3,3,3,4.
    let untrusted = [8usize, 9];
    let mut log = Vec::new();
    for a in 0..10usize {
        let id = format!("a{a}");
        for (g, expected) in [("g1", Side::Agree), ("g2", Side::Disagree), ("g3", Side::Agree), ("g4", Side::Disagree)] {
            let correct = match a {
                8 => g == "g1",
                9 => false,
                _ => true,
            };
            let likert = match (expected, correct) {
                (Side::Agree, true) | (Side::Disagree, false) => 1,
                _ => 5,
            };
            log.push(Judgment::new(g, id.clone(), likert).gold(expected));
        }
    }
    for f in 0..50usize {
        let feature = format!("f{f:02}");
        let mut position = 0;
        for t in 0..5 {
            let a = (f + t) % 10;
            let likert = if untrusted.contains(&a) {
                5
            } else {
                let l = match f / 10 {
                    0 => 5,
                    1 => 1,
                    2 => if position == 0 { 1 } else { 5 },
                    3 => [3, 2, 4, 4, 4][position],
                    _ => if position % 2 == 0 { 1 } else { 5 },
                };
                position += 1;
                l
            };
            log.push(Judgment::new(feature.clone(), format!("a{a}"), likert));
        }
    }
    let directions: BTreeMap<String, usize> = (0..50).map(|f| (format!("f{f:02}"), 2)).collect();
    let set = aggregate_judgments(&log, &directions, &AggregationPolicy::default());

    let name = |f: usize| format!("f{f:02}");
    let mut expected: BTreeMap<String, Decision> = BTreeMap::new();
    for f in (0..10).chain(20..25).chain([29]).chain(30..34) {
        expected.insert(name(f), Decision::Disagree);
    }
    for f in (10..20).chain(40..44) {
        expected.insert(name(f), Decision::Agree);
    }
    for f in (25..29).chain(34..40).chain(44..50) {
        expected.insert(name(f), Decision::Undecided);
    }
    let got: BTreeMap<String, Decision> = set.decisions.iter().map(|(f, d)| (f.clone(), d.decision)).collect();
    let expected_set: BTreeSet<String> = expected
        .iter()
        .filter(|(_, d)| **d == Decision::Disagree)
        .map(|(f, _)| f.clone())
        .collect();
    let untrusted_votes: usize = set.decisions.values().map(|d| d.untrusted).sum();
    check(
        got == expected && set.erroneous == expected_set && untrusted_votes == 50,
        format!(
            "{} erroneous, {} agree, {} undecided; {} untrusted votes excluded",
            set.len(),
            got.values().filter(|d| **d == Decision::Agree).count(),
            got.values().filter(|d| **d == Decision::Undecided).count(),
            untrusted_votes
        ),
    )
}

// 7. Least-confidence baseline.
fn criterion_7() -> Outcome {
    let bench = generate_benchmark(&SynthConfig {
        n_train: 300,
        n_test: 200,
        ..SynthConfig::default()
    })
    .unwrap();
    let (model, _) = LogisticModel::train(&bench.train, &bench.classes, &TrainConfig::default()).unwrap();
    let run = least_confidence_rank(&ModelHandle::builtin(model.clone()), &bench.test).unwrap();
    let mut worst = 0.0f64;
    for e in &run.entries {
        let p = model.probabilities(&bench.test.get(&e.document_id).unwrap().tokens);
        let max = p.iter().cloned().fold(f64::MIN, f64::max);
        worst = worst.max((e.score - (1.0 - max)).abs());
    }
    let uniform = ModelHandle::builtin(LogisticModel::zeros(ClassConfig::sentiment(), Vec::new()));
    let corpus = build_corpus(vec![Document::from_tokens("u", &["anything"], Some(0))]).unwrap();
    let u = least_confidence_rank(&uniform, &corpus).unwrap().entries[0].score;
    check(
        worst <= 1e-12 && (u - 2.0 / 3.0).abs() <= 1e-12,
        format!("max |score - (1 - max prob)| = {worst:.1e} over {} docs; uniform K=3 score = {u:.15}", run.entries.len()),
    )
}

// 8. Determinism of the end-to-end CLI pipeline.
fn pipeline(dir: &Path) {
    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/benchmark");
    let d = |f: &str| data.join(f).to_str().unwrap().to_string();
    let (train, test) = (d("train.jsonl"), d("test.jsonl"));
    let steps: Vec<Vec<String>> = [
        vec!["train", "--corpus", &train],
        vec!["globals", "--corpus", &test, "--top-n", "50", "--definitions", &d("definitions.tsv"), "--gold-pool", &d("gold_pool.jsonl")],
        vec!["simulate-assessors", "--polarity", &d("polarity.json")],
        vec!["import-judgments", "--judgments", "run/simulated_judgments.csv"],
        vec!["aggregate-judgments"],
        vec!["detect", "--corpus", &test],
        vec!["evaluate", "--corpus", &test],
    ]
    .iter()
    .map(|s| s.iter().map(|x| x.to_string()).collect())
    .collect();
    for step in steps {
        let out = Command::new(env!("CARGO_BIN_EXE_oa"))
            .args(&step)
            .args(["--out", "run", "--seed", "7"])
            .current_dir(dir)
            .env_remove("OA_CACHE_DIR")
            .output()
            .unwrap();
        assert!(out.status.success(), "{step:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
}

fn artifacts(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir.join("run"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file() && p.file_name().unwrap() != "judgments.jsonl")
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect()
}

fn criterion_8(benchmark_runtime: Duration) -> Outcome {
    let start = Instant::now();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    pipeline(a.path());
    pipeline(b.path());
    let elapsed = start.elapsed();
    let (x, y) = (artifacts(a.path()), artifacts(b.path()));
    let csv = x.keys().filter(|k| k.ends_with(".csv")).count();
    let differing: Vec<&String> = x.keys().filter(|k| y.get(*k) != x.get(*k)).collect();
    let same_names = x.keys().eq(y.keys());
    check(
        differing.is_empty() && same_names && csv >= 6 && elapsed < benchmark_runtime * 2,
        format!(
            "{} artifacts ({csv} CSV) byte-identical across two runs, differing: {differing:?}; {:.1}s vs bound {:.1}s",
            x.len(),
            elapsed.as_secs_f64(),
            (benchmark_runtime * 2).as_secs_f64()
        ),
    )
}

fn run(n: usize, f: impl FnOnce() -> Outcome) -> bool {
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    });
    match outcome {
        Ok(detail) => {
            println!("PASS criterion {n}: {detail}");
            true
        }
        Err(detail) => {
            println!("FAIL criterion {n}: {detail}");
            false
        }
    }
}

fn main() {
    let mut ok = true;
    ok &= run(1, criterion_1);
    ok &= run(2, criterion_2);
    ok &= run(3, criterion_3);
    let mut benchmark_runtime = Duration::from_secs(300);
    ok &= run(4, || {
        let (outcome, elapsed) = criterion_4();
        benchmark_runtime = elapsed;
        outcome
    });
    ok &= run(5, criterion_5);
    ok &= run(6, criterion_6);
    ok &= run(7, criterion_7);
    ok &= run(8, || criterion_8(benchmark_runtime));
    if !ok {
        std::process::exit(1);
    }
}
