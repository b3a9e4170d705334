//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;

use coopal_cli::{run_grid, RunConfig};
use coopal_core::classifiers::{measure_accuracy, train};
use coopal_core::dataset::synthesize;
use coopal_core::integration::{
    integrate_mv, integrate_wa, labeling_accuracy, wa_from_coefficients, wmv_from_probabilities,
    Contribution,
};
use coopal_core::selection::{diversity_score, quality_score, select_class};
use coopal_core::simulator::{prepare, EgoChoice, ExperimentConfig, LoadModel};
use coopal_core::WmvVariant;
use coopal_core::{
    ClassifierKind, IntegrationMethod, Label, Mode, SelectionPolicy, Timestamp, VehicleId,
    WaWeights,
};

const SEEDS: u64 = 10;

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

fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.into_iter().collect();
    v.iter().sum::<f64>() / v.len() as f64
}

// --- criteria 1 and 2 -------------------------------------------------------

const OFFLINE_SIZES: [usize; 3] = [100, 300, 500];
const METHODS: [IntegrationMethod; 3] = [
    IntegrationMethod::Mv,
    IntegrationMethod::Wmv,
    IntegrationMethod::Wa,
];

/// `la[m][method]` and `acc[m][profile]`, each averaged over seeds.
struct LaTable {
    la: Vec<[f64; 3]>,
    acc: Vec<Vec<f64>>,
}

fn la_table() -> LaTable {
    let mut la = Vec::new();
    let mut acc = Vec::new();
    for &m in &OFFLINE_SIZES {
        let per_seed: Vec<([f64; 3], Vec<f64>)> = (0..SEEDS)
            .into_par_iter()
            .map(|seed| {
                let ds = synthesize(4, 18, 200, 2.0, seed).unwrap();
                let cfg = ExperimentConfig {
                    offline_size: m,
                    delta_max: 2.0,
                    ..Default::default()
                };
                let run = prepare(&cfg, &ds, seed).unwrap();
                let mut row = [0.0; 3];
                for (k, &method) in METHODS.iter().enumerate() {
                    row[k] = run.labeling_accuracy(Mode::Labels, method).unwrap();
                }
                (
                    row,
                    run.profiles.iter().map(|p| p.offline_accuracy).collect(),
                )
            })
            .collect();
        let mut row = [0.0; 3];
        for (k, r) in row.iter_mut().enumerate() {
            *r = mean(per_seed.iter().map(|(l, _)| l[k]));
        }
        let profiles = per_seed[0].1.len();
        la.push(row);
        acc.push(
            (0..profiles)
                .map(|j| mean(per_seed.iter().map(|(_, a)| a[j])))
                .collect(),
        );
    }
    LaTable { la, acc }
}

fn criterion_1(t: &LaTable) -> Outcome {
    let mut pass = true;
    let mut detail = Vec::new();
    for (i, &m) in OFFLINE_SIZES.iter().enumerate() {
        let [mv, wmv, wa] = t.la[i];
        let spread_a = t.acc[i].iter().cloned().fold(f64::MIN, f64::max)
            - t.acc[i].iter().cloned().fold(f64::MAX, f64::min);
        pass &= wa >= mv && wa >= wmv && spread_a >= 0.05;
        detail.push(format!(
            "M={m}: WA {wa:.4} MV {mv:.4} WMV {wmv:.4} dA {spread_a:.3}"
        ));
    }
    outcome(pass, detail.join("; "))
}

fn criterion_2(t: &LaTable) -> Outcome {
    let mut pass = true;
    let mut detail = Vec::new();
    for (k, method) in METHODS.iter().enumerate() {
        let series: Vec<f64> = t.la.iter().map(|r| r[k]).collect();
        pass &= series.windows(2).all(|w| w[1] >= w[0] - 0.02);
        detail.push(format!(
            "{method}: {}",
            series
                .iter()
                .map(|v| format!("{v:.4}"))
                .collect::<Vec<_>>()
                .join(" -> ")
        ));
    }
    outcome(pass, detail.join("; "))
}

// --- criteria 3, 4 and 5 ----------------------------------------------------

const CHECKPOINTS: [usize; 3] = [10, 25, 50];

fn policy_config() -> ExperimentConfig {
    ExperimentConfig {
        offline_size: 20,
        ego: EgoChoice::Index(3),
        alpha: 1.0,
        max_steps: Some(50),
        ..Default::default()
    }
}

/// `acc[mode][policy][checkpoint]` seed means, plus per-seed QDS byte traces per mode.
struct PolicyTable {
    acc: [[[f64; 3]; 3]; 3],
    bytes: Vec<[Vec<u64>; 3]>,
}

fn policy_table() -> PolicyTable {
    let cfg = policy_config();
    type SeedResult = ([[[f64; 3]; 3]; 3], [Vec<u64>; 3]);
    let per_seed: Vec<SeedResult> = (0..SEEDS)
        .into_par_iter()
        .map(|seed| {
            let ds = synthesize(4, 18, 200, 1.25, seed).unwrap();
            let run = prepare(&cfg, &ds, seed).unwrap();
            let mut acc = [[[0.0; 3]; 3]; 3];
            let mut bytes: [Vec<u64>; 3] = Default::default();
            for (mi, mode) in Mode::ALL.into_iter().enumerate() {
                for (pi, policy) in SelectionPolicy::ALL.into_iter().enumerate() {
                    let m = run.run(mode, IntegrationMethod::Wa, policy).unwrap();
                    for (ci, &n) in CHECKPOINTS.iter().enumerate() {
                        acc[mi][pi][ci] = m.accuracy_at(n);
                    }
                    if policy == SelectionPolicy::Qds {
                        bytes[mi] = m.rows.iter().map(|r| r.cum_bytes).collect();
                    }
                }
            }
            (acc, bytes)
        })
        .collect();
    let mut acc = [[[0.0; 3]; 3]; 3];
    for (mi, by_mode) in acc.iter_mut().enumerate() {
        for (pi, by_policy) in by_mode.iter_mut().enumerate() {
            for (ci, v) in by_policy.iter_mut().enumerate() {
                *v = mean(per_seed.iter().map(|(a, _)| a[mi][pi][ci]));
            }
        }
    }
    PolicyTable {
        acc,
        bytes: per_seed.into_iter().map(|(_, b)| b).collect(),
    }
}

fn criterion_3(t: &PolicyTable) -> Outcome {
    let (qds, rs, mvqs) = (0, 1, 2);
    let mut violations = Vec::new();
    let mut detail = Vec::new();
    for (mi, mode) in Mode::ALL.into_iter().enumerate() {
        for (ci, n) in CHECKPOINTS.iter().enumerate() {
            let q = t.acc[mi][qds][ci];
            let worst = (t.acc[mi][rs][ci] - q).max(t.acc[mi][mvqs][ci] - q);
            if worst > 0.0 {
                violations.push(worst);
            }
            detail.push(format!(
                "{mode}@{n} QDS {q:.4} RS {:.4} MVQS {:.4}",
                t.acc[mi][rs][ci], t.acc[mi][mvqs][ci]
            ));
        }
    }
    let pass = violations.is_empty() || (violations.len() == 1 && violations[0] <= 0.01);
    outcome(
        pass,
        format!("{} violation(s); {}", violations.len(), detail.join("; ")),
    )
}

fn criterion_4(t: &PolicyTable) -> Outcome {
    let at50 = |mi: usize| t.acc[mi][0][2];
    let (labels, data, samples) = (at50(0), at50(1), at50(2));
    let pass = samples >= data - 0.01 && data >= labels - 0.01;
    outcome(
        pass,
        format!("QDS at 50: samples {samples:.4} data {data:.4} labels {labels:.4}"),
    )
}

fn criterion_5(t: &PolicyTable) -> Outcome {
    let load = LoadModel::default();
    let d = 18usize;
    let j = policy_config().neighbors as u64;

    let mut ordered = true;
    for trace in &t.bytes {
        let steps = trace.iter().map(Vec::len).min().unwrap();
        ordered &= (1..steps).all(|s| trace[0][s] < trace[1][s] && trace[1][s] < trace[2][s]);
    }
    let per = |mode| j * load.per_neighbor(mode, d);
    for n in 1..=1000u64 {
        ordered &= n * per(Mode::Labels) < n * per(Mode::Data)
            && n * per(Mode::Data) < n * per(Mode::Samples);
    }

    let applies = d as u64 * load.feature_bytes_per_dim >= 10 * load.label_bytes;
    let tenth =
        !applies || (1..=1000u64).all(|n| 10 * n * per(Mode::Labels) <= n * per(Mode::Data));
    outcome(
        ordered && tenth,
        format!(
            "per event labels {} data {} samples {} bytes; strict ordering {}; labels <= data/10 {} (ratio {:.3}, applies: {applies})",
            per(Mode::Labels),
            per(Mode::Data),
            per(Mode::Samples),
            if ordered { "holds" } else { "broken" },
            if tenth { "holds" } else { "broken" },
            per(Mode::Labels) as f64 / per(Mode::Data) as f64,
        ),
    )
}

// --- criterion 6 ------------------------------------------------------------

fn criterion_6() -> Outcome {
    let scenario = |neighbors: usize, mode: Mode| -> (f64, usize) {
        let cfg = ExperimentConfig {
            offline_size: 20,
            neighbors,
            ego: EgoChoice::Lowest,
            alpha: 0.95,
            max_steps: None,
            ..Default::default()
        };
        let runs: Vec<(usize, bool)> = (0..SEEDS)
            .into_par_iter()
            .map(|seed| {
                let ds = synthesize(4, 18, 200, 0.5, seed).unwrap();
                let m = prepare(&cfg, &ds, seed)
                    .unwrap()
                    .run(mode, IntegrationMethod::Wa, SelectionPolicy::Qds)
                    .unwrap();
                (m.n_star, m.target_met)
            })
            .collect();
        (
            mean(runs.iter().map(|r| r.0 as f64)),
            runs.iter().filter(|r| r.1).count(),
        )
    };
    let (solo, solo_met) = scenario(0, Mode::Labels);
    let (coop, coop_met) = scenario(4, Mode::Samples);
    outcome(
        coop < solo,
        format!("mean n*: samples mode {coop:.1} ({coop_met}/{SEEDS} met) vs no cooperation {solo:.1} ({solo_met}/{SEEDS} met)"),
    )
}

// --- criterion 7 ------------------------------------------------------------

/// All label tuples of length `n` over `k` classes.
fn tuples(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for _ in 0..n {
        out = out
            .into_iter()
            .flat_map(|t| {
                (0..k).map(move |c| {
                    let mut t = t.clone();
                    t.push(c);
                    t
                })
            })
            .collect();
    }
    out
}

/// Exact literal product rule with `p = k/10`, on integers scaled by 10^4.
fn wmv_oracle(labels: &[usize], ks: &[u64]) -> (usize, u64) {
    let k = labels.iter().max().unwrap() + 1;
    let mut prod = vec![1u64; k];
    let mut n = vec![0u32; k];
    for (&l, &p) in labels.iter().zip(ks) {
        if p > 0 {
            prod[l] *= p;
            n[l] += 1;
        }
    }
    if n.iter().all(|&c| c == 0) {
        let mut counts = vec![0; k];
        for &l in labels {
            counts[l] += 1;
        }
        let best = (0..k).fold(0, |b, c| if counts[c] > counts[b] { c } else { b });
        return (best, 0);
    }
    let mut best: Option<(usize, u64)> = None;
    for c in (0..k).filter(|&c| n[c] > 0) {
        let scaled = prod[c] * 10u64.pow(4 - n[c]);
        if best.is_none_or(|(_, s)| scaled > s) {
            best = Some((c, scaled));
        }
    }
    best.unwrap()
}

fn wmv_exhaustive() -> (bool, usize) {
    let mut cases = 0;
    let mut ok = true;
    for voters in 1..=4usize {
        for classes in 1..=3usize {
            for labels in tuples(voters, classes) {
                for ks in tuples(voters, 11) {
                    let ks: Vec<u64> = ks.into_iter().map(|v| v as u64).collect();
                    let votes: Vec<(Label, f64)> = labels
                        .iter()
                        .zip(&ks)
                        .map(|(&l, &p)| (Label(l), p as f64 / 10.0))
                        .collect();
                    let got = wmv_from_probabilities(&votes, WmvVariant::PaperLiteral).unwrap();
                    let (label, scaled) = wmv_oracle(&labels, &ks);
                    ok &= got.label == Label(label)
                        && (got.quality - scaled as f64 / 1e4).abs() <= 1e-12;
                    cases += 1;
                }
            }
        }
    }
    (ok, cases)
}

/// Count vectors over `k` classes with total at most `max`.
fn count_states(k: usize, max: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = vec![0usize; k];
    fn rec(i: usize, left: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if i == cur.len() {
            out.push(cur.clone());
            return;
        }
        for v in 0..=left {
            cur[i] = v;
            rec(i + 1, left - v, cur, out);
        }
        cur[i] = 0;
    }
    rec(0, max, &mut cur, &mut out);
    out
}

fn entropy_oracle(counts: &[usize]) -> f64 {
    let n: usize = counts.iter().sum();
    if n == 0 {
        return 0.0;
    }
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n as f64;
            -p * p.log2()
        })
        .sum()
}

fn sorted(mut v: Vec<usize>) -> Vec<usize> {
    v.sort_unstable();
    v
}

fn select_class_exhaustive() -> (bool, usize) {
    let mut cases = 0;
    let mut ok = true;
    for k in 1..=4usize {
        for counts in count_states(k, 12) {
            let current: Vec<Label> = counts
                .iter()
                .enumerate()
                .flat_map(|(c, &n)| std::iter::repeat_n(Label(c), n))
                .collect();
            for mask in 1u32..(1 << k) {
                let available: BTreeSet<Label> =
                    (0..k).filter(|c| mask & (1 << c) != 0).map(Label).collect();
                // Brute force: extend by each available class; equal multisets are exact ties.
                let mut best: Option<(usize, Vec<usize>, f64)> = None;
                for &Label(c) in &available {
                    let mut ext = counts.clone();
                    ext[c] += 1;
                    let h = entropy_oracle(&ext);
                    let key = sorted(ext);
                    let better = match &best {
                        None => true,
                        Some((_, bkey, bh)) => *bkey != key && h > *bh,
                    };
                    if better {
                        best = Some((c, key, h));
                    }
                }
                let got = select_class(&current, &available, k).unwrap();
                ok &= got == Label(best.unwrap().0);
                cases += 1;
            }
        }
    }
    (ok, cases)
}

fn contribution(label: usize, age: f64, accuracy: f64) -> Contribution {
    Contribution {
        labeler: VehicleId(label as u32),
        label: Label(label),
        time: Timestamp::new(10.0 - age).unwrap(),
        accuracy,
    }
}

fn quality_and_entropy_bounds() -> (bool, usize) {
    let mut ok = true;
    let mut cases = 0;
    let in_unit = |q: f64| (0.0..=1.0).contains(&q);
    let grid = [0.0, 0.1, 0.35, 0.5, 0.8, 1.0];
    let ages = [0.0, 0.25, 1.0, 3.0];
    for voters in 1..=4usize {
        for labels in tuples(voters, 3) {
            ok &= in_unit(
                integrate_mv(
                    &labels
                        .iter()
                        .map(|&l| contribution(l, 1.0, 0.5))
                        .collect::<Vec<_>>(),
                )
                .unwrap()
                .quality,
            );
            for ps in tuples(voters, grid.len()) {
                let votes: Vec<(Label, f64)> = labels
                    .iter()
                    .zip(&ps)
                    .map(|(&l, &p)| (Label(l), grid[p]))
                    .collect();
                for variant in [WmvVariant::PaperLiteral, WmvVariant::Likelihood] {
                    ok &= in_unit(wmv_from_probabilities(&votes, variant).unwrap().quality);
                }
                let lambdas: Vec<(Label, f64)> =
                    votes.iter().map(|&(l, p)| (l, 3.0 * p - 1.0)).collect();
                ok &= in_unit(wa_from_coefficients(&lambdas).unwrap().quality);
                cases += 4;
            }
            for ag in tuples(voters, ages.len()) {
                let contribs: Vec<Contribution> = labels
                    .iter()
                    .zip(&ag)
                    .map(|(&l, &a)| contribution(l, ages[a], 0.7))
                    .collect();
                for (a, b) in [(1.0, 0.0), (0.5, 0.5), (0.0, 1.0)] {
                    let w = WaWeights::new(a, b).unwrap();
                    ok &= in_unit(
                        integrate_wa(&contribs, Timestamp::new(10.0).unwrap(), 1.0, w)
                            .unwrap()
                            .quality,
                    );
                    cases += 1;
                }
            }
        }
    }
    for n in 1..=5usize {
        for qs in tuples(n, grid.len()) {
            ok &= in_unit(quality_score(&qs.iter().map(|&i| grid[i]).collect::<Vec<_>>()).unwrap());
            cases += 1;
        }
    }
    for k in 1..=4usize {
        for counts in count_states(k, 12) {
            let labels: Vec<Label> = counts
                .iter()
                .enumerate()
                .flat_map(|(c, &n)| std::iter::repeat_n(Label(c), n))
                .collect();
            let h = diversity_score(&labels, k);
            ok &= h >= 0.0 && h <= (k as f64).log2();
            cases += 1;
        }
    }
    (ok, cases)
}

/// With identical freshness and accuracy (p > 0.5) every weighted rule reduces to majority voting.
fn weighted_rules_reduce_to_mv() -> (bool, usize) {
    let mut ok = true;
    let mut cases = 0;
    for voters in 1..=5usize {
        for labels in tuples(voters, 3) {
            for &(age, acc) in &[(0.1, 0.9), (0.5, 0.95), (0.05, 0.6)] {
                let contribs: Vec<Contribution> =
                    labels.iter().map(|&l| contribution(l, age, acc)).collect();
                let mv = integrate_mv(&contribs).unwrap().label;
                let t = Timestamp::new(10.0).unwrap();
                let wa = integrate_wa(&contribs, t, 1.0, WaWeights::default())
                    .unwrap()
                    .label;
                let lik = coopal_core::integration::integrate_wmv(
                    &contribs,
                    t,
                    1.0,
                    WmvVariant::Likelihood,
                )
                .unwrap()
                .label;
                ok &= wa == mv && lik == mv;
                cases += 1;
            }
        }
    }
    (ok, cases)
}

fn indicator_sums() -> (bool, usize) {
    let mut ok = true;
    let mut cases = 0;
    for n in 1..=4usize {
        let all = tuples(n, 3);
        for a in &all {
            for t in &all {
                let hits = a.iter().zip(t).filter(|(x, y)| x == y).count();
                let la = labeling_accuracy(
                    &a.iter().map(|&l| Label(l)).collect::<Vec<_>>(),
                    &t.iter().map(|&l| Label(l)).collect::<Vec<_>>(),
                )
                .unwrap();
                ok &= la == hits as f64 / n as f64;
                cases += 1;
            }
        }
    }
    let ds = synthesize(3, 5, 40, 1.5, 11).unwrap();
    let data = ds.subset(&(0..ds.len()).collect::<Vec<_>>());
    let (fit, eval) = data.split_at(60);
    for kind in ClassifierKind::default_profiles() {
        let model = train(&kind, fit, 5).unwrap();
        let hits = eval
            .iter()
            .filter(|(x, y)| model.predict(x).unwrap() == *y)
            .count();
        ok &= measure_accuracy(&model, eval).unwrap() == hits as f64 / eval.len() as f64;
        cases += 1;
    }
    (ok, cases)
}

fn criterion_7() -> Outcome {
    let parts = [
        ("literal WMV", wmv_exhaustive()),
        ("select_class", select_class_exhaustive()),
        ("bounds", quality_and_entropy_bounds()),
        ("weighted=MV", weighted_rules_reduce_to_mv()),
        ("indicator sums", indicator_sums()),
    ];
    let pass = parts.iter().all(|(_, (ok, _))| *ok);
    let detail = parts
        .iter()
        .map(|(name, (ok, n))| {
            format!(
                "{name} {} over {n} cases",
                if *ok { "exact" } else { "MISMATCH" }
            )
        })
        .collect::<Vec<_>>()
        .join("; ");
    outcome(pass, detail)
}

// --- criterion 8 ------------------------------------------------------------

fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&p).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

fn criterion_8() -> Outcome {
    let cfg = RunConfig::from_json(
        r#"{
            "dataset": {"kind": "synthetic", "per_class": 60},
            "offline_size": 40,
            "max_steps": 15,
            "seeds": [0, 1, 2],
            "grid": {"modes": ["labels", "data", "samples"], "methods": ["mv", "wmv", "wa"],
                     "policies": ["qds", "rs", "mvqs"]}
        }"#,
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    // Different worker counts must not change a single byte.
    std::env::set_var("COOPAL_THREADS", "1");
    run_grid(&cfg, &a).unwrap();
    std::env::set_var("COOPAL_THREADS", "4");
    run_grid(&cfg, &b).unwrap();
    std::env::remove_var("COOPAL_THREADS");
    let (sa, sb) = (snapshot(&a), snapshot(&b));
    let bytes: usize = sa.iter().map(|(_, c)| c.len()).sum();
    outcome(
        sa == sb && sa.len() == 28,
        format!("{} files, {bytes} bytes, identical: {}", sa.len(), sa == sb),
    )
}

// --- driver -----------------------------------------------------------------

fn main() {
    let mut failed = 0;
    let mut report = |id: &str, name: &str, started: Instant, o: Outcome| {
        let tag = if o.pass { "PASS" } else { "FAIL" };
        if !o.pass {
            failed += 1;
        }
        println!(
            "[{tag}] criterion {id} {name} ({:.1}s): {}",
            started.elapsed().as_secs_f64(),
            o.detail
        );
    };

    let t = Instant::now();
    let la = la_table();
    report("1", "label-integration ordering", t, criterion_1(&la));
    report("2", "labeling accuracy monotone in M", t, criterion_2(&la));

    let t = Instant::now();
    let policies = policy_table();
    report("3", "selection-policy ordering", t, criterion_3(&policies));
    report("4", "mode ordering", t, criterion_4(&policies));
    report("5", "network load ordering", t, criterion_5(&policies));

    let t = Instant::now();
    report("6", "cooperation benefit for the LQ ego", t, criterion_6());

    let t = Instant::now();
    report("7", "oracle suites", t, criterion_7());

    let t = Instant::now();
    report("8", "grid determinism", t, criterion_8());

    println!("acceptance: {} of 8 criteria passed", 8 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
