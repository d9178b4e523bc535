//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng as _;

use feddm::config::RunConfig;
use feddm::diffusion::{
    forward_step, forward_to, make_schedule, noise_mse, reparameterize, reverse_step,
    DiffusionConfig, NoiseNet, NoisePredictor, ReparamHeads, Scrubber,
};
use feddm::embedding::{grad_score, score_complex, score_transe, EmbeddingTable, ModelKind, Norm};
use feddm::eval::{
    emit_report, evaluate, hits_at_n, mrr, rank_triple, Direction, ReportRow, Scope, Split,
};
use feddm::experiment::{evaluate_seed, run_experiment, write_seed_report};
use feddm::fed::{candidate_distribution, distill_loss, ns_loss, select_clients};
use feddm::kg::{assign_relations, split_forget, Triple};
use feddm::matrix::Matrix;
use feddm::pipeline::{Arm, ClientSnapshot, ModelSnapshot};
use feddm::rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn bundled_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/synthetic.conf")
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// MRR per (arm, scope, split) for every seed of the bundled config.
struct DirectionalRuns {
    rows: Vec<Vec<ReportRow>>,
    seconds: f64,
    root: tempfile::TempDir,
}

impl DirectionalRuns {
    fn run(seeds: u64) -> Self {
        let root = tempfile::tempdir().unwrap();
        let start = Instant::now();
        let rows = (0..seeds)
            .map(|seed| {
                let mut cfg = RunConfig::from_file(&bundled_config()).unwrap();
                cfg.set("seed", &seed.to_string()).unwrap();
                cfg.set("run_dir", &root.path().display().to_string())
                    .unwrap();
                run_experiment(&cfg, None).unwrap();
                evaluate_seed(root.path(), seed).unwrap()
            })
            .collect();
        Self {
            rows,
            seconds: start.elapsed().as_secs_f64(),
            root,
        }
    }

    fn median_mrr(&self, arm: Arm, scope: Scope, split: Split) -> f64 {
        median(
            self.rows
                .iter()
                .map(|rows| {
                    rows.iter()
                        .find(|r| (r.arm, r.scope, r.split) == (arm, scope, split))
                        .unwrap()
                        .mrr()
                })
                .collect(),
        )
    }
}

fn directional_unlearning(runs: &DirectionalRuns) -> Outcome {
    let mut pass = runs.seconds < 300.0;
    let mut detail = Vec::new();
    for scope in [Scope::Local, Scope::Global] {
        let raw = runs.median_mrr(Arm::Raw, scope, Split::Forget);
        let un = runs.median_mrr(Arm::Unlearned, scope, Split::Forget);
        pass &= un <= 0.5 * raw;
        detail.push(format!(
            "{scope}: unlearned forget {un:.4} vs 0.5 x raw {raw:.4}"
        ));
    }
    detail.push(format!("5 seeds x 3 arms in {:.0}s", runs.seconds));
    outcome(pass, detail.join("; "))
}

fn utility_retention(runs: &DirectionalRuns) -> Outcome {
    let mut pass = true;
    let mut detail = Vec::new();
    for scope in [Scope::Local, Scope::Global] {
        let raw = runs.median_mrr(Arm::Raw, scope, Split::Test);
        let un = runs.median_mrr(Arm::Unlearned, scope, Split::Test);
        let re = runs.median_mrr(Arm::Retrained, scope, Split::Test);
        pass &= un >= 0.8 * raw && un >= re - 0.05;
        detail.push(format!(
            "{scope}: unlearned test {un:.4} vs 0.8 x raw {raw:.4} and retrained {re:.4} - 0.05"
        ));
    }
    outcome(pass, detail.join("; "))
}

fn retrain_sanity(runs: &DirectionalRuns) -> Outcome {
    let mut pass = true;
    let mut detail = Vec::new();
    for scope in [Scope::Local, Scope::Global] {
        let raw = runs.median_mrr(Arm::Raw, scope, Split::Forget);
        let re = runs.median_mrr(Arm::Retrained, scope, Split::Forget);
        pass &= re < 0.6 * raw;
        detail.push(format!(
            "{scope}: retrained forget {re:.4} vs 0.6 x raw {raw:.4}"
        ));
    }
    outcome(pass, detail.join("; "))
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-4 * a.abs().max(b.abs()) + 1e-7
}

/// Central differences of `f` at `x` against `analytic`; returns the worst
/// mismatch when one exists.
fn check_fd(x: &[f64], analytic: &[f64], f: impl Fn(&[f64]) -> f64) -> Option<String> {
    let eps = 1e-6;
    let mut p = x.to_vec();
    for i in 0..x.len() {
        p[i] = x[i] + eps;
        let up = f(&p);
        p[i] = x[i] - eps;
        let down = f(&p);
        p[i] = x[i];
        let fd = (up - down) / (2.0 * eps);
        if !close(analytic[i], fd) {
            return Some(format!(
                "coordinate {i}: analytic {} vs fd {fd}",
                analytic[i]
            ));
        }
    }
    None
}

fn gradient_suites() -> Outcome {
    let start = Instant::now();
    let mut failures = Vec::new();
    let mut r = rng::derive(2024, &[]);

    for (kind, norm, label) in [
        (ModelKind::TransE, Norm::L2, "TransE-L2"),
        (ModelKind::ComplEx, Norm::L1, "ComplEx"),
    ] {
        for case in 0..100 {
            let d = 2 * r.random_range(1..=8);
            let mut v = || {
                (0..d)
                    .map(|_| r.random_range(-1.0..1.0))
                    .collect::<Vec<f64>>()
            };
            let (h, rel, t) = (v(), v(), v());
            let g = grad_score(kind, &h, &rel, &t, norm).unwrap();
            let s = |h: &[f64], rel: &[f64], t: &[f64]| match kind {
                ModelKind::TransE => score_transe(h, rel, t, norm).unwrap(),
                ModelKind::ComplEx => score_complex(h, rel, t).unwrap(),
            };
            let checks = [
                check_fd(&h, &g.head, |x| s(x, &rel, &t)),
                check_fd(&rel, &g.relation, |x| s(&h, x, &t)),
                check_fd(&t, &g.tail, |x| s(&h, &rel, x)),
            ];
            if let Some(msg) = checks.into_iter().flatten().next() {
                failures.push(format!("{label} case {case}: {msg}"));
            }
        }
    }

    for case in 0..100u64 {
        let mut cr = rng::derive(case, &[31]);
        let dim = cr.random_range(1..=4);
        let width = cr.random_range(1..=8);
        let net = NoiseNet::with_hidden(dim, &[width, width], 20, &mut cr).unwrap();
        let x: Vec<f64> = (0..dim).map(|_| cr.random_range(-2.0..2.0)).collect();
        let t = cr.random_range(1..=20);
        let c: Vec<f64> = (0..dim).map(|_| cr.random_range(-1.0..1.0)).collect();
        let objective = |n: &NoiseNet, x: &[f64]| -> f64 {
            n.predict_noise(x, t)
                .unwrap()
                .iter()
                .zip(&c)
                .map(|(o, c)| o * c)
                .sum()
        };
        let (_, cache) = net.forward(&x, t).unwrap();
        let mut grads = net.zero_grads();
        let d_x = net.backward(&cache, &c, &mut grads);
        let mut msg = check_fd(&x, &d_x, |x| objective(&net, x)).map(|m| format!("input {m}"));
        for li in 0..net.layers().len() {
            if msg.is_some() {
                break;
            }
            let w = net.layers()[li].weight.as_slice().to_vec();
            msg = check_fd(&w, grads.layers[li].weight.as_slice(), |p| {
                let mut n = net.clone();
                n.layers_mut()[li].weight.as_mut_slice().copy_from_slice(p);
                objective(&n, &x)
            })
            .map(|m| format!("layer {li} weight {m}"));
            if msg.is_none() {
                let b = net.layers()[li].bias.clone();
                msg = check_fd(&b, &grads.layers[li].bias, |p| {
                    let mut n = net.clone();
                    n.layers_mut()[li].bias.copy_from_slice(p);
                    objective(&n, &x)
                })
                .map(|m| format!("layer {li} bias {m}"));
            }
        }
        if let Some(m) = msg {
            failures.push(format!("NoiseNet case {case}: {m}"));
        }
    }

    let secs = start.elapsed().as_secs_f64();
    let pass = failures.is_empty() && secs < 10.0;
    let detail = match failures.first() {
        Some(f) => format!("{} failures, first: {f}", failures.len()),
        None => format!("3 x 100 instances within 1e-4 relative in {secs:.2}s"),
    };
    outcome(pass, detail)
}

/// Integer-valued random TransE table with many exact ties.
fn tied_kg(seed: u64) -> (EmbeddingTable, Vec<Triple>) {
    let mut r = rng::derive(seed, &[]);
    let (n, nr, dim) = (50, 4, 3);
    let mut draw = |rows: usize| {
        Matrix::from_vec(
            rows,
            dim,
            (0..rows * dim)
                .map(|_| r.random_range(-2..=2) as f64)
                .collect(),
        )
        .unwrap()
    };
    let table = EmbeddingTable::new(ModelKind::TransE, draw(n), draw(nr)).unwrap();
    let mut r = rng::derive(seed, &[1]);
    let mut set = HashSet::new();
    while set.len() < 300 {
        set.insert(Triple::new(
            r.random_range(0..n),
            r.random_range(0..nr),
            r.random_range(0..n),
        ));
    }
    let mut triples: Vec<Triple> = set.into_iter().collect();
    triples.sort_by_key(|t| (t.head, t.relation, t.tail));
    (table, triples)
}

fn brute_force_rank(
    table: &EmbeddingTable,
    t: Triple,
    head: bool,
    known: Option<&HashSet<Triple>>,
) -> f64 {
    let s = |c: Triple| -> f64 {
        let (h, r, tl) = (
            table.entities.row(c.head),
            table.relations.row(c.relation),
            table.entities.row(c.tail),
        );
        -h.iter()
            .zip(r)
            .zip(tl)
            .map(|((h, r), t)| (h + r - t).abs())
            .sum::<f64>()
    };
    let mut scores: Vec<f64> = (0..table.entity_count())
        .map(|e| {
            if head {
                Triple::new(e, t.relation, t.tail)
            } else {
                Triple::new(t.head, t.relation, e)
            }
        })
        .filter(|&c| c == t || known.is_none_or(|k| !k.contains(&c)))
        .map(s)
        .collect();
    scores.sort_by(|a, b| b.total_cmp(a));
    let target = s(t);
    let first = scores.iter().position(|&x| x == target).unwrap();
    let last = scores.iter().rposition(|&x| x == target).unwrap();
    1.0 + (first + last) as f64 / 2.0
}

fn metric_oracle() -> Outcome {
    let (table, triples) = tied_kg(50);
    let known: HashSet<Triple> = triples.iter().copied().collect();
    let snap = ModelSnapshot {
        arm: Arm::Raw,
        round: 0,
        seed: 0,
        kind: ModelKind::TransE,
        server: table.entities.clone(),
        clients: vec![ClientSnapshot {
            id: 0,
            relations: (0..4).collect(),
            index_map: (0..50).collect(),
            table: table.clone(),
        }],
    };
    let mut mismatches = 0;
    let mut compared = 0;
    for filter in [Some(&known), None] {
        let mut ranks = Vec::new();
        for &t in &triples {
            for (head, dir) in [(true, Direction::Head), (false, Direction::Tail)] {
                let want = brute_force_rank(&table, t, head, filter);
                let got = rank_triple(&table, Norm::L1, t, dir, filter).unwrap();
                mismatches += usize::from(got != want);
                compared += 1;
                ranks.push(want);
            }
        }
        let m = evaluate(&snap, &triples, Scope::Global, filter, Norm::L1).unwrap();
        let n = ranks.len() as f64;
        mismatches += usize::from(m.mrr != ranks.iter().map(|r| 1.0 / r).sum::<f64>() / n);
        for (k, h) in [(1.0, m.hits1), (3.0, m.hits3), (10.0, m.hits10)] {
            mismatches += usize::from(h != ranks.iter().filter(|&&r| r <= k).count() as f64 / n);
        }
    }
    outcome(
        mismatches == 0,
        format!("{compared} ranks plus MRR/Hits@1,3,10, filtered and raw, {mismatches} mismatches"),
    )
}

struct Fixed(Vec<f64>);

impl NoisePredictor for Fixed {
    fn predict_noise(&self, _x: &[f64], _t: usize) -> feddm::Result<Vec<f64>> {
        Ok(self.0.clone())
    }
}

fn diffusion_algebra() -> Outcome {
    let mut fails = Vec::new();
    let s = make_schedule(50, 1e-4, 0.02).unwrap();
    let mut prod = 1.0;
    for t in 1..=50 {
        prod *= s.alpha(t);
        if s.alpha_bar(t) != prod {
            fails.push(format!("alpha_bar({t})"));
        }
    }
    let x0 = [0.3, -1.7, 2.2, 0.01];
    let mut chained = x0.to_vec();
    for t in 1..=50 {
        chained = forward_step(&chained, t, &s, &[0.0; 4]).unwrap();
        if forward_to(&x0, t, &s, &[0.0; 4]).unwrap() != chained {
            fails.push(format!("forward_to({t})"));
        }
    }
    let one = make_schedule(1, 0.19, 0.19).unwrap();
    let x = reverse_step(&[0.9], 1, &Fixed(vec![1.0]), &one, &[0.0]).unwrap()[0];
    if (x - 0.51568).abs() > 1e-5 {
        fails.push(format!("reverse_step gave {x}"));
    }
    let mut dr = rng::derive(5, &[]);
    let centres: Vec<Vec<f64>> = (0..4)
        .map(|_| (0..12).map(|_| dr.random_range(-1.5..1.5)).collect())
        .collect();
    let data: Vec<Vec<f64>> = (0..256)
        .map(|i| {
            centres[i % 4]
                .iter()
                .map(|c| c + 0.05 * dr.random_range(-1.0..1.0))
                .collect()
        })
        .collect();
    let cfg = DiffusionConfig {
        train_steps: 500,
        ..Default::default()
    };
    let fit = Scrubber::fit(
        &data,
        &cfg,
        &mut rng::derive(1, &[]),
        &mut rng::derive(2, &[]),
    )
    .unwrap();
    let first = fit.losses[..10].iter().sum::<f64>() / 10.0;
    let trailing = fit.losses[450..].iter().sum::<f64>() / 50.0;
    if trailing.is_nan() || trailing >= 0.5 * first {
        fails.push(format!("loss {first:.3} -> {trailing:.3}"));
    }
    let detail = if fails.is_empty() {
        format!("exact alpha-bar and noiseless chain, reverse {x:.5}, training loss {first:.3} -> {trailing:.3}")
    } else {
        format!("failed: {}", fails.join(", "))
    };
    outcome(fails.is_empty(), detail)
}

fn determinism(runs: &DirectionalRuns) -> Outcome {
    let other = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::from_file(&bundled_config()).unwrap();
    cfg.set("seed", "0").unwrap();
    cfg.set("threads", "4").unwrap();
    cfg.set("run_dir", &other.path().display().to_string())
        .unwrap();
    run_experiment(&cfg, None).unwrap();
    let a = write_seed_report(runs.root.path(), 0)
        .unwrap()
        .join("report.csv");
    let b = write_seed_report(other.path(), 0)
        .unwrap()
        .join("report.csv");
    let (a, b) = (fs::read(a).unwrap(), fs::read(b).unwrap());
    outcome(
        a == b && !a.is_empty(),
        format!(
            "report.csv with 1 vs 4 threads: {} bytes, identical = {}",
            a.len(),
            a == b
        ),
    )
}

fn hand_values() -> Outcome {
    let ln2 = std::f64::consts::LN_2;
    let eq = |a: f64, b: f64| (a - b).abs() <= 1e-5;
    let mut checks: Vec<(&str, bool)> = vec![
        (
            "TransE L1 -4",
            score_transe(&[1.0, 2.0], &[0.0, 1.0], &[0.0, 0.0], Norm::L1).unwrap() == -4.0,
        ),
        (
            "TransE L2 -5",
            score_transe(&[0.0, 0.0], &[0.0, 0.0], &[3.0, -4.0], Norm::L2).unwrap() == -5.0,
        ),
        (
            "ComplEx 2",
            score_complex(&[1.0, 1.0], &[2.0, 0.0], &[0.0, 1.0]).unwrap() == 2.0,
        ),
        (
            "ComplEx -1",
            score_complex(&[0.0, 1.0], &[0.0, 1.0], &[1.0, 0.0]).unwrap() == -1.0,
        ),
        (
            "ComplEx dS/dh",
            grad_score(
                ModelKind::ComplEx,
                &[1.0, 0.0],
                &[1.0, 0.0],
                &[1.0, 0.0],
                Norm::L1,
            )
            .unwrap()
            .head
                == [1.0, 0.0],
        ),
        ("ns_loss 2 ln2", eq(ns_loss(0.0, &[0.0], 0.0), 2.0 * ln2)),
        (
            "ns_loss two negatives",
            eq(ns_loss(0.0, &[0.0, 0.0], 0.0), 2.0 * ln2),
        ),
        ("softmax [2/3, 1/3]", {
            let p = candidate_distribution(&[ln2, 0.0]).unwrap();
            eq(p[0], 2.0 / 3.0) && eq(p[1], 1.0 / 3.0)
        }),
        (
            "KL ln2",
            eq(distill_loss(&[1.0, 0.0], &[0.5, 0.5]).unwrap(), ln2),
        ),
        (
            "KL 0.14384",
            eq(distill_loss(&[0.5, 0.5], &[0.25, 0.75]).unwrap(), 0.14384),
        ),
        (
            "select 0.34 of 3",
            select_clients(3, 0.34, &mut rng::derive(0, &[])).len() == 2,
        ),
        ("237 relations / 3 clients", {
            assign_relations(237, 3, 0)
                .unwrap()
                .iter()
                .all(|c| c.len() == 79)
        }),
        ("forget 5% of 2000", {
            let ts: Vec<Triple> = (0..2000).map(|i| Triple::new(i, 0, i + 1)).collect();
            let s = split_forget(&ts, 0.05, 1).unwrap();
            let f: HashSet<Triple> = s.forget.iter().copied().collect();
            s.forget.len() == 100 && s.remaining.iter().all(|t| !f.contains(t))
        }),
        (
            "alpha_bar_3 0.504",
            eq(make_schedule(3, 0.1, 0.3).unwrap().alpha_bar(3), 0.504),
        ),
        ("forward_step 2.23205", {
            let x =
                forward_step(&[2.0], 1, &make_schedule(1, 0.25, 0.25).unwrap(), &[1.0]).unwrap();
            eq(x[0], 2.23205)
        }),
        ("reparameterize [2.1, 0]", {
            let mut heads = ReparamHeads::new(2);
            heads.w_mu.scale(2.0);
            heads.w_sigma.scale(10.0);
            let w = reparameterize(&[1.0, 0.0], &heads, &[1.0, 1.0]).unwrap();
            eq(w[0], 2.1) && w[1] == 0.0
        }),
        (
            "noise_mse 1",
            noise_mse(&[1.0, 0.0], &[0.0, 1.0]).unwrap() == 1.0,
        ),
        ("tie rank 2", {
            let t = EmbeddingTable::new(
                ModelKind::TransE,
                Matrix::from_vec(5, 1, vec![0.0, 1.0, 1.0, 1.0, 5.0]).unwrap(),
                Matrix::from_vec(1, 1, vec![1.0]).unwrap(),
            )
            .unwrap();
            rank_triple(&t, Norm::L1, Triple::new(0, 0, 1), Direction::Tail, None).unwrap() == 2.0
        }),
        (
            "hits@1 1/3",
            eq(hits_at_n(&[1.0, 2.0, 4.0], 1).unwrap(), 1.0 / 3.0),
        ),
        (
            "hits@3 2/3",
            eq(hits_at_n(&[1.0, 2.0, 4.0], 3).unwrap(), 2.0 / 3.0),
        ),
        ("MRR 0.58333", eq(mrr(&[1.0, 2.0, 4.0]).unwrap(), 0.58333)),
    ];
    let dir = tempfile::tempdir().unwrap();
    let row = ReportRow {
        arm: Arm::Raw,
        scope: Scope::Local,
        split: Split::Forget,
        model: ModelKind::TransE,
        values: [0.5968, 0.4217, 0.5, 0.7],
    };
    emit_report(&[row], dir.path()).unwrap();
    let md = fs::read_to_string(dir.path().join("report.md")).unwrap();
    checks.push(("59.68% formatting", md.contains("| 59.68% | 42.17% |")));
    let failed: Vec<&str> = checks
        .iter()
        .filter(|(_, ok)| !ok)
        .map(|(n, _)| *n)
        .collect();
    let detail = if failed.is_empty() {
        format!(
            "{} inline checks; the rest live in the unit tests",
            checks.len()
        )
    } else {
        format!("failed: {}", failed.join(", "))
    };
    outcome(failed.is_empty(), detail)
}

fn main() {
    // `cargo test -- --list` and similar probes expect no work
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let mut results: Vec<(&str, Outcome)> = vec![
        ("Gradient suites", gradient_suites()),
        ("Metric oracle equivalence", metric_oracle()),
        ("Diffusion algebra", diffusion_algebra()),
        ("Hand-value checks", hand_values()),
    ];
    let runs = DirectionalRuns::run(5);
    results.push(("Directional unlearning", directional_unlearning(&runs)));
    results.push(("Utility retention", utility_retention(&runs)));
    results.push(("Retrain baseline sanity", retrain_sanity(&runs)));
    results.push(("Determinism", determinism(&runs)));

    let mut failed = 0;
    for (name, o) in &results {
        println!(
            "{} {name}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        failed += usize::from(!o.pass);
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        results.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
