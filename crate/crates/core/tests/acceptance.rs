//! Acceptance checks, one line of output per criterion.

use std::f64::consts::LN_2;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use amf::cli::{mean_leaf_depth, mondrian_leaf_stats};
use amf::data::synthetic;
use amf::forecasters::{kt_predict, loss, mean_predict};
use amf::metrics::{auc, progressive_eval, regret_report, OnlineLearner};
use amf::mondrian::RngStream;
use amf::oracle::{complete_tree, enumerate_prunings, prior_mass_restricted, self_check};
use amf::{AmfError, AmfForest, DummyClassifier, ForestConfig, LossKind, Prediction, Task, Variant};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn timed(limit: Option<Duration>, f: impl FnOnce() -> Outcome) -> Outcome {
    let start = Instant::now();
    let mut out = f();
    let elapsed = start.elapsed();
    if let Some(limit) = limit {
        out.detail.push_str(&format!("; {:.2}s (limit {}s)", elapsed.as_secs_f64(), limit.as_secs()));
        out.pass &= elapsed < limit;
    }
    out
}

fn ac1_exact_aggregation() -> Outcome {
    let reps = 500;
    let worst = self_check(reps, 2024, false).expect("oracle runs");
    outcome(worst <= 1e-10, format!("{reps} trees, max discrepancy {worst:.3e}"))
}

fn ac2_prior_normalization() -> Outcome {
    let expected = [1usize, 2, 5, 26, 677];
    let mut pass = true;
    let mut notes = Vec::new();
    for (depth, &count) in expected.iter().enumerate() {
        let tree = complete_tree(depth);
        let prunings = enumerate_prunings(&tree).expect("under guard");
        let total: f64 = prunings.iter().map(|p| prior_mass_restricted(p, &tree).unwrap()).sum();
        pass &= prunings.len() == count && (total - 1.0).abs() <= 1e-12;
        notes.push(format!("depth {depth}: {} prunings, mass {total:.15}", prunings.len()));
    }
    outcome(pass, notes.join(", "))
}

struct Stream {
    xs: Vec<Vec<f64>>,
    ys: Vec<f64>,
    n_classes: usize,
}

/// Labelled stream over a few distinct points of the unit cube, each point
/// with its own preferred class.
fn small_stream(rng: &mut RngStream) -> Stream {
    let dim = 1 + (rng.uniform() * 3.0) as usize;
    let n_classes = 2 + usize::from(rng.uniform() < 0.5);
    let pool_size = 2 + (rng.uniform() * 4.0) as usize;
    let pool: Vec<(Vec<f64>, usize)> = (0..pool_size)
        .map(|_| ((0..dim).map(|_| rng.uniform()).collect(), (rng.uniform() * n_classes as f64) as usize))
        .collect();
    let n = 20 + (rng.uniform() * 181.0) as usize;
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for _ in 0..n {
        let (x, class) = &pool[(rng.uniform() * pool_size as f64) as usize];
        let y = if rng.uniform() < 0.8 { *class } else { (rng.uniform() * n_classes as f64) as usize };
        xs.push(x.clone());
        ys.push(y as f64);
    }
    Stream { xs, ys, n_classes }
}

/// Regret reports of 50 streams whose final trees fit under the enumeration guard.
fn regret_streams() -> Vec<(Stream, amf::metrics::RegretReport)> {
    let mut rng = RngStream::new(77, 3);
    let mut out = Vec::new();
    let mut seed = 0;
    while out.len() < 50 {
        let stream = small_stream(&mut rng);
        seed += 1;
        let task = Task::Classification { n_classes: stream.n_classes };
        match regret_report(&stream.xs, &stream.ys, task, 1.0, Variant::Unrestricted, seed) {
            Ok(report) => out.push((stream, report)),
            Err(AmfError::GuardExceeded { .. }) => continue,
            Err(e) => panic!("regret report failed: {e}"),
        }
    }
    out
}

fn ac3_pruning_regret(reports: &[(Stream, amf::metrics::RegretReport)]) -> Outcome {
    let mut worst_lower = f64::INFINITY;
    let mut worst_slack = f64::INFINITY;
    let mut prunings = 0;
    for (_, r) in reports {
        worst_lower = worst_lower.min(r.amf_loss - r.best_pruning_loss + 1e-9);
        for p in &r.prunings {
            prunings += 1;
            worst_slack = worst_slack.min(p.size as f64 * LN_2 - (r.amf_loss - p.loss));
        }
    }
    outcome(
        worst_lower >= 0.0 && worst_slack >= 0.0,
        format!(
            "{} streams, {prunings} prunings, min(AMF - best + 1e-9) = {worst_lower:.3e}, min bound slack = {worst_slack:.3e}",
            reports.len()
        ),
    )
}

fn ac4_leaf_constant_regret(reports: &[(Stream, amf::metrics::RegretReport)]) -> Outcome {
    let mut worst_slack = f64::INFINITY;
    for (stream, r) in reports {
        let n = stream.ys.len() as f64;
        let k = stream.n_classes as f64;
        for p in &r.prunings {
            let size = p.size as f64;
            let bound = size * LN_2 + (size + 1.0) * (k - 1.0) / 4.0 * (4.0 * n).ln();
            worst_slack = worst_slack.min(bound - (r.amf_loss - p.leaf_constant_loss));
        }
    }
    outcome(worst_slack >= 0.0, format!("{} streams, min bound slack = {worst_slack:.3}", reports.len()))
}

fn ac5_kt_regret() -> Outcome {
    let mut rng = RngStream::new(5, 0);
    let n = 1000;
    let mut worst_slack = f64::INFINITY;
    for rep in 0..100usize {
        let k: usize = 2 + rep % 2;
        // Class distribution ranging from degenerate to uniform.
        let mut p: Vec<f64> = (0..k).map(|_| rng.uniform().powi(1 + (rep % 4) as i32)).collect();
        if rep % 10 == 0 {
            p = vec![0.0; k];
            p[0] = 1.0;
        }
        let total: f64 = p.iter().sum();
        let mut counts = vec![0u64; k];
        let mut cumulative = 0.0;
        for _ in 0..n {
            let mut u = rng.uniform() * total;
            let mut y = k - 1;
            for (c, &pc) in p.iter().enumerate() {
                if u < pc {
                    y = c;
                    break;
                }
                u -= pc;
            }
            let pred = Prediction::Proba(kt_predict(&counts).unwrap());
            cumulative += loss(LossKind::Log, &pred, y as f64).unwrap();
            counts[y] += 1;
        }
        let best: f64 = counts
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| -(c as f64) * (c as f64 / n as f64).ln())
            .sum();
        let bound = (k as f64 - 1.0) / 2.0 * (4.0 * n as f64).ln();
        worst_slack = worst_slack.min(bound - (cumulative - best));
    }
    outcome(worst_slack >= 0.0, format!("100 streams, min bound slack = {worst_slack:.4}"))
}

fn ac6_mean_regret() -> Outcome {
    let mut rng = RngStream::new(6, 0);
    let n = 1000;
    let mut worst_slack = f64::INFINITY;
    for rep in 0..100usize {
        let center = rng.uniform_between(-1.0, 1.0);
        let spread = rng.uniform();
        let (mut sum, mut count) = (0.0, 0u64);
        let mut cumulative = 0.0;
        let mut ys = Vec::with_capacity(n);
        for t in 0..n {
            let y: f64 = match rep % 3 {
                0 => rng.uniform_between(-1.0, 1.0),
                1 => (center + spread * rng.uniform_between(-1.0, 1.0)).clamp(-1.0, 1.0),
                _ => if t % 2 == 0 { 1.0 } else { -1.0 },
            };
            let pred = mean_predict(sum, count);
            cumulative += (pred - y).powi(2);
            sum += y;
            count += 1;
            ys.push(y);
        }
        let mean = sum / n as f64;
        let best: f64 = ys.iter().map(|y| (y - mean).powi(2)).sum();
        let bound = 8.0 * (1.0 + (n as f64).ln());
        worst_slack = worst_slack.min(bound - (cumulative - best));
    }
    outcome(worst_slack >= 0.0, format!("100 streams, min bound slack = {worst_slack:.4}"))
}

fn ac7_leaf_law() -> Outcome {
    let mut pass = true;
    let mut notes = Vec::new();
    for (dim, lambda) in [(1usize, 1.0f64), (1, 2.0), (2, 1.0)] {
        let s = mondrian_leaf_stats(dim, lambda, 10_000, 7).unwrap();
        let z = (s.mean - s.expected) / s.stderr;
        pass &= z.abs() <= 5.0;
        notes.push(format!("d={dim} lambda={lambda}: {:.4} vs {} (z={z:.2})", s.mean, s.expected));
    }
    outcome(pass, notes.join(", "))
}

fn ac8_depth_bound() -> Outcome {
    let mut pass = true;
    let mut notes = Vec::new();
    let mut depths = Vec::new();
    for (n, reps) in [(100usize, 200usize), (1000, 50), (10_000, 10)] {
        let depth = mean_leaf_depth(n, 2, 1.0, reps, 200, 8).unwrap();
        let limit = (n as f64).log2() + 2.0 + 0.5;
        pass &= depth <= limit;
        notes.push(format!("n={n}: {depth:.3} (limit {limit:.3})"));
        depths.push(depth);
    }
    let ratio = depths[2] / depths[1];
    pass &= ratio <= 1.6;
    notes.push(format!("ratio 1e4/1e3 = {ratio:.3} (limit 1.6)"));
    outcome(pass, notes.join(", "))
}

fn ac9_locality() -> Outcome {
    let task = Task::Classification { n_classes: 2 };
    let mut rng = RngStream::new(9, 0);
    let mut exact = true;
    let mut checked = 0;
    let mut mean_visits = Vec::new();
    for n in [1000usize, 10_000] {
        let mut forest = AmfForest::new(ForestConfig::new(task).with_trees(3).with_seed(9), 2).unwrap();
        let mut visits = 0usize;
        let mut updates = 0usize;
        for t in 0..n {
            let x = vec![rng.uniform(), rng.uniform()];
            let y = f64::from(u8::from(x[0] + x[1] > 1.0));
            let before: Vec<_> = if n == 1000 && t % 5 == 0 { forest.trees().cloned().collect() } else { Vec::new() };
            let traces = forest.learn_one(&x, y).unwrap();
            for (m, trace) in traces.iter().enumerate() {
                visits += trace.visits();
                updates += 1;
                let tree = forest.tree(m);
                exact &= trace.ascended == tree.depth_of(trace.leaf) + 1;
                if let Some(old) = before.get(m) {
                    let touched = tree.ids().filter(|&id| old.get(id) != Some(tree.node(id))).count();
                    exact &= touched == trace.descended + trace.created;
                    checked += 1;
                }
            }
        }
        mean_visits.push(visits as f64 / updates as f64);
    }
    let ratio = mean_visits[1] / mean_visits[0];
    outcome(
        exact && ratio <= 3.0,
        format!(
            "{checked} diffed updates exact={exact}, mean visits {:.2} at 1e3 and {:.2} at 1e4, ratio {ratio:.3} (limit 3)",
            mean_visits[0], mean_visits[1]
        ),
    )
}

fn ac10_learning_sanity() -> Outcome {
    let data = synthetic("gauss2", 2000, 42).unwrap();
    let task = Task::Classification { n_classes: 2 };
    let mut forest = AmfForest::new(ForestConfig::new(task), 2).unwrap();
    let mut dummy = DummyClassifier::new(2).unwrap();
    let mut learners: [(&str, &mut dyn OnlineLearner); 2] = [("amf", &mut forest), ("dummy", &mut dummy)];
    let curves = progressive_eval(&mut learners, &data.xs, &data.ys, LossKind::Log, 100).unwrap();
    let (amf_loss, dummy_loss) = (curves[0].last().unwrap(), curves[1].last().unwrap());

    let (train, test) = data.split(0.7, 42);
    let mut forest = AmfForest::new(ForestConfig::new(task), 2).unwrap();
    forest.partial_fit(&train.xs, &train.ys).unwrap();
    let scores: Vec<f64> = test.xs.iter().map(|x| forest.predict_proba(x).unwrap()[1]).collect();
    let labels: Vec<bool> = test.ys.iter().map(|&y| y == 1.0).collect();
    let a = auc(&scores, &labels).unwrap();
    outcome(
        amf_loss < dummy_loss && a >= 0.9,
        format!("log-loss amf {amf_loss:.4} vs dummy {dummy_loss:.4}, held-out AUC {a:.4}"),
    )
}

fn run_cli(args: &[&str]) -> (i32, Vec<u8>) {
    let out = Command::new(env!("CARGO_BIN_EXE_amf")).args(args).output().expect("binary runs");
    (out.status.code().unwrap_or(-1), out.stdout)
}

fn ac11_determinism() -> Outcome {
    let commands: [&[&str]; 5] = [
        &["online", "--synthetic", "gauss2", "--n", "500", "--seed", "7"],
        &["auc", "--synthetic", "gauss2", "--n", "500", "--seed", "7", "--stride", "50"],
        &["trees-sweep", "--synthetic", "gauss2", "--n", "300", "--seed", "7"],
        &["mondrian-stats", "--dim", "2", "--reps", "500", "--seed", "7"],
        &["oracle-check", "--reps", "50", "--seed", "7"],
    ];
    let mut identical = true;
    for args in commands {
        let (c1, o1) = run_cli(args);
        let (c2, o2) = run_cli(args);
        identical &= c1 == 0 && c2 == 0 && o1 == o2 && !o1.is_empty();
    }

    let data = synthetic("gauss2", 400, 11).unwrap();
    let task = Task::Classification { n_classes: 2 };
    let config = ForestConfig::new(task).with_seed(11);
    let mut plain = AmfForest::new(config.clone(), 2).unwrap();
    let mut probed = AmfForest::new(config, 2).unwrap();
    let mut rng = RngStream::new(11, 1);
    for (x, &y) in data.xs.iter().zip(&data.ys) {
        plain.learn_one(x, y).unwrap();
        for _ in 0..3 {
            let q = [rng.uniform_between(-4.0, 4.0), rng.uniform_between(-4.0, 4.0)];
            probed.predict(&q).unwrap();
            probed.weighted_depths(&q).unwrap();
        }
        probed.learn_one(x, y).unwrap();
    }
    let same_state = plain.trees().zip(probed.trees()).all(|(a, b)| a == b);
    outcome(identical && same_state, format!("byte-identical reruns={identical}, state unchanged by predictions={same_state}"))
}

fn ac12_simplex() -> Outcome {
    let mut worst_sum = 0.0f64;
    let mut min_entry = f64::INFINITY;
    let mut rows = 0;
    for (k, seed) in [(2usize, 12u64), (3, 13)] {
        let mut rng = RngStream::new(seed, 0);
        let task = Task::Classification { n_classes: k };
        let mut forest = AmfForest::new(ForestConfig::new(task).with_seed(seed), 3).unwrap();
        let mut test = Vec::new();
        for t in 0..1500 {
            let x: Vec<f64> = (0..3).map(|_| rng.uniform_between(-1.0, 1.0)).collect();
            let y = ((x[0] + 1.0) / 2.0 * k as f64).floor().min(k as f64 - 1.0);
            if t % 3 == 0 {
                test.push(x);
            } else {
                forest.learn_one(&x, y).unwrap();
            }
        }
        // Points far outside the training range exercise the prediction-time split.
        for _ in 0..200 {
            test.push((0..3).map(|_| rng.uniform_between(-50.0, 50.0)).collect());
        }
        for x in &test {
            let p = forest.predict_proba(x).unwrap();
            worst_sum = worst_sum.max((p.iter().sum::<f64>() - 1.0).abs());
            min_entry = p.iter().copied().fold(min_entry, f64::min);
            rows += 1;
        }
    }
    outcome(
        worst_sum <= 1e-12 && min_entry > 0.0,
        format!("{rows} rows, max |sum - 1| = {worst_sum:.3e}, min entry = {min_entry:.3e}"),
    )
}

fn main() -> ExitCode {
    let mut reports = Vec::new();
    let criteria: Vec<(&str, Outcome)> = vec![
        ("AC-1 exact aggregation", timed(Some(Duration::from_secs(10)), ac1_exact_aggregation)),
        ("AC-2 prior normalization", timed(None, ac2_prior_normalization)),
        ("AC-3 pruning regret", timed(Some(Duration::from_secs(30)), || {
            reports = regret_streams();
            ac3_pruning_regret(&reports)
        })),
        ("AC-4 leaf-constant regret", timed(None, || ac4_leaf_constant_regret(&reports))),
        ("AC-5 KT regret", timed(None, ac5_kt_regret)),
        ("AC-6 mean forecaster regret", timed(None, ac6_mean_regret)),
        ("AC-7 Mondrian leaf law", timed(Some(Duration::from_secs(5)), ac7_leaf_law)),
        ("AC-8 depth bound", timed(None, ac8_depth_bound)),
        ("AC-9 update locality", timed(None, ac9_locality)),
        ("AC-10 learning sanity", timed(None, ac10_learning_sanity)),
        ("AC-11 determinism", timed(None, ac11_determinism)),
        ("AC-12 simplex", timed(None, ac12_simplex)),
    ];
    let mut failed = 0;
    for (name, o) in &criteria {
        println!("[{}] {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
