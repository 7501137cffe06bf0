//! End-to-end checks of the library against analytic identities and
//! synthetic benchmarks. Each test prints one PASS/FAIL line.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use maxent_reversal::eval::{
    artificial_benchmark, confusion_at, cross_validate_model, kl_divergence_smoothed, mann_whitney,
    multi_information_fraction, predict_bins, reconstruction_error, reversal_count_distributions, roc, CouplingSource,
    CvModel, FoldPlan, PredictionRecord, PredictionRun,
};
use maxent_reversal::infer::{
    fit_dichotomized_gaussian, fit_poisson, fit_reversal_pairwise, fit_rpml, rpl_gradient, rpl_objective, FitConfig,
};
use maxent_reversal::ingest::compute_reversals;
use maxent_reversal::model::{
    exact_distribution, flip_probability_hist, flip_probability_instant, spin_index, spin_state,
};
use maxent_reversal::sample::{
    exact_sample, gaussian_couplings, glauber_sample, random_couplings, rng_from_seed, GlauberConfig,
};
use maxent_reversal::{CouplingSet, SignPanel};
use rand::Rng;

fn report(name: &str, pass: bool, detail: String) {
    println!("{} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "{name}: {detail}");
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn sd(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

fn glauber(seed: u64) -> GlauberConfig {
    GlauberConfig {
        seed,
        ..GlauberConfig::default()
    }
}

fn random_panel(n: usize, t: usize, rng: &mut impl Rng) -> SignPanel {
    SignPanel::from_signs(
        (0..n)
            .map(|_| (0..t).map(|_| if rng.random_bool(0.5) { 1 } else { -1 }).collect())
            .collect(),
    )
    .unwrap()
}

/// Applies `f` to each free parameter (h, upper J, every K entry) in a fixed order.
fn for_each_param(p: &mut CouplingSet, mut f: impl FnMut(&mut CouplingSet, usize, Param)) {
    let n = p.n();
    let mut k = 0;
    for i in 0..n {
        f(p, k, Param::H(i));
        k += 1;
    }
    for i in 0..n {
        for j in i + 1..n {
            f(p, k, Param::J(i, j));
            k += 1;
        }
    }
    for tau in 0..p.n_lags() {
        for i in 0..n {
            for j in 0..n {
                f(p, k, Param::K(tau, i, j));
                k += 1;
            }
        }
    }
}

#[derive(Clone, Copy)]
enum Param {
    H(usize),
    J(usize, usize),
    K(usize, usize, usize),
}

fn get(p: &CouplingSet, q: Param) -> f64 {
    match q {
        Param::H(i) => p.h[i],
        Param::J(i, j) => p.j[i][j],
        Param::K(t, i, j) => p.lags[t][i][j],
    }
}

fn set(p: &mut CouplingSet, q: Param, v: f64) {
    match q {
        Param::H(i) => p.h[i] = v,
        Param::J(i, j) => {
            p.j[i][j] = v;
            p.j[j][i] = v;
        }
        Param::K(t, i, j) => p.lags[t][i][j] = v,
    }
}

#[test]
fn gradient_matches_central_differences() {
    let start = Instant::now();
    let mut rng = rng_from_seed(1);
    let mut worst = 0.0f64;
    let instances = 24;
    for inst in 0..instances {
        let n = 2 + inst % 5;
        let lags = inst % 3;
        let panel = random_panel(n, 120, &mut rng);
        let mut params = random_couplings(n, lags, 0.6, &mut rng);
        let config = FitConfig {
            lambda: Some(0.01 * (1 + inst % 4) as f64),
            ..FitConfig::default()
        };
        let grad = rpl_gradient(&panel, &params, &config).unwrap();
        let step = 1e-5;
        let (mut diff, mut norm) = (0.0, 0.0);
        for_each_param(&mut params, |p, _, q| {
            let x = get(p, q);
            set(p, q, x + step);
            let up = rpl_objective(&panel, p, &config).unwrap();
            set(p, q, x - step);
            let down = rpl_objective(&panel, p, &config).unwrap();
            set(p, q, x);
            let fd = (up - down) / (2.0 * step);
            let g = get(&grad, q);
            diff += (g - fd) * (g - fd);
            norm += fd * fd;
        });
        worst = worst.max((diff / norm).sqrt());
    }
    let secs = start.elapsed().as_secs_f64();
    report(
        "gradient",
        worst <= 1e-6 && secs < 10.0,
        format!("{instances} instances, worst relative error {worst:.2e} (≤ 1e-6), {secs:.2} s (< 10 s)"),
    );
}

#[test]
fn flip_probabilities_match_enumeration() {
    let mut rng = rng_from_seed(2);
    let mut worst = 0.0f64;
    let mut hist_exact = true;
    let mut predict_worst = 0.0f64;
    for inst in 0..30 {
        let n = 2 + inst % 7;
        let params = random_couplings(n, 0, 0.8, &mut rng);
        let dist = exact_distribution(&params).unwrap();
        let mut lagged = params.clone();
        lagged.lags = vec![vec![vec![0.0; n]; n]; 2];
        let history = vec![vec![1i8; n], vec![-1i8; n]];
        for idx in 0..1usize << n {
            let state = spin_state(idx, n);
            for i in 0..n {
                let mut other = state.clone();
                other[i] = -state[i];
                let brute = dist[spin_index(&other)] / (dist[idx] + dist[spin_index(&other)]);
                let context: Vec<i8> = state
                    .iter()
                    .enumerate()
                    .filter(|&(k, _)| k != i)
                    .map(|(_, &s)| s)
                    .collect();
                let p = flip_probability_instant(i, state[i], &context, &params).unwrap();
                worst = worst.max((p - brute).abs());
                let ph = flip_probability_hist(i, state[i], &context, &history, &lagged).unwrap();
                hist_exact &= ph.to_bits() == p.to_bits();
            }
        }
        // Scoring path: predictions on a panel built from consecutive states.
        let t = 40;
        let panel = random_panel(n, t, &mut rng);
        let run = predict_bins(&panel, &params, &(1..t).collect::<Vec<_>>()).unwrap();
        for r in &run.records {
            let prev = panel.signs[r.entity][r.time - 1];
            let mut cur = panel.state_at(r.time);
            cur[r.entity] = prev;
            let mut flipped = cur.clone();
            flipped[r.entity] = -prev;
            let (a, b) = (dist[spin_index(&cur)], dist[spin_index(&flipped)]);
            predict_worst = predict_worst.max((r.probability - b / (a + b)).abs());
        }
    }
    report(
        "enumeration",
        worst <= 1e-12 && predict_worst <= 1e-12 && hist_exact,
        format!(
            "max |flip - brute| = {worst:.2e}, predictions {predict_worst:.2e} (≤ 1e-12); zero-lag history identical: {hist_exact}"
        ),
    );
}

#[test]
fn glauber_reaches_stationary_distribution() {
    let start = Instant::now();
    let params = random_couplings(5, 0, 0.4, &mut rng_from_seed(3));
    let records = 1_000_000;
    let panel = glauber_sample(&params, records, &glauber(33)).unwrap();
    let exact = exact_distribution(&params).unwrap();
    let mut counts = vec![0.0; exact.len()];
    for t in 0..records {
        counts[spin_index(&panel.state_at(t))] += 1.0;
    }
    let tv = 0.5
        * counts
            .iter()
            .zip(&exact)
            .map(|(c, p)| (c / records as f64 - p).abs())
            .sum::<f64>();
    let secs = start.elapsed().as_secs_f64();
    report(
        "glauber stationarity",
        tv <= 0.005 && secs < 60.0,
        format!("N = 5, 1e6 records, TV = {tv:.5} (≤ 0.005), {secs:.1} s (< 60 s)"),
    );
}

#[test]
fn reconstruction_error_on_synthetic_data() {
    let (mut short, mut long) = (Vec::new(), Vec::new());
    for seed in 0..3u64 {
        let truth = gaussian_couplings(8, 0.18, 0.08, &mut rng_from_seed(1000 + seed));
        for (t, out) in [(2500, &mut short), (30_000, &mut long)] {
            let panel = glauber_sample(&truth, t, &glauber(seed)).unwrap();
            let fit = fit_rpml(&panel, 0, &FitConfig::default()).unwrap();
            out.push(reconstruction_error(&truth, &fit.params).unwrap());
        }
    }
    let (d_short, d_long) = (mean(&short), mean(&long));
    let ratio = d_short / d_long;
    report(
        "reconstruction",
        d_short <= 0.15 && ratio >= 2.0,
        format!(
            "N = 8, Δ(T=2500) = {d_short:.4} {short:.4?} (≤ 0.15, reference 0.100); Δ(T=3e4) = {d_long:.4}; ratio {ratio:.2} (≥ 2)"
        ),
    );
}

#[test]
fn artificial_ceiling_matches_reference_row() {
    let start = Instant::now();
    let source = CouplingSource::Homogeneous { j_mean: 0.21 };
    let (mut acc, mut auc) = (Vec::new(), Vec::new());
    for seed in 100..105u64 {
        let r = artificial_benchmark(8, 2500, &source, &FitConfig::default(), 10, &glauber(seed)).unwrap();
        println!("  seed {seed}: accuracy {:.4}, AUC {:.4}", r.mean_accuracy, r.mean_auc);
        acc.push(r.mean_accuracy);
        auc.push(r.mean_auc);
    }
    let (a, u) = (mean(&acc), mean(&auc));
    let secs = start.elapsed().as_secs_f64();
    report(
        "artificial ceiling",
        (a - 0.87).abs() <= 0.04 && (u - 0.911).abs() <= 0.04 && secs < 300.0,
        format!(
            "J = 0.21, N = 8, T = 2500, 5 seeds: accuracy {a:.4} (0.87 ± 0.04), AUC {u:.4} (0.911 ± 0.04), {secs:.1} s"
        ),
    );
}

/// Cross-validated accuracy has more than binomial variance because the
/// training sets of different folds overlap, so σ is taken from the spread
/// across independent null panels. A classifier without information that
/// predicts a flip at rate q scores q(1 - r) + (1 - q) r on average, with r
/// the non-flip rate; that reduces to r when it never predicts a flip.
#[test]
fn uncoupled_data_is_unpredictable() {
    let replicates = 10;
    let mut lines = Vec::new();
    let mut pass = true;
    for model in [CvModel::Independent, CvModel::Pairwise] {
        let (mut aucs, mut offsets, mut literal) = (Vec::new(), Vec::new(), Vec::new());
        for seed in 0..replicates {
            let panel = glauber_sample(&CouplingSet::zeros(8, 0), 2500, &glauber(70 + seed)).unwrap();
            let plan = FoldPlan::for_panel(panel.n_bins(), 0, 10).unwrap();
            let cv = cross_validate_model(&panel, model, 0, &FitConfig::default(), &plan).unwrap();
            let c = confusion_at(&cv.pooled, 0.5).unwrap();
            let n = c.total() as f64;
            let q = (c.tp + c.fp) as f64 / n;
            let r = (c.tn + c.fp) as f64 / n;
            let expected = q * (1.0 - r) + (1.0 - q) * r;
            aucs.push(cv.summary.mean_auc);
            offsets.push(c.accuracy() - expected);
            literal.push((c.accuracy() - r) / (r * (1.0 - r) / n).sqrt());
        }
        let sigma = sd(&offsets);
        let z = mean(&offsets) / (sigma / (replicates as f64).sqrt());
        let worst_auc = aucs.iter().fold(0.0f64, |w, a| w.max((a - 0.5).abs()));
        let ok = worst_auc <= 0.05 && z.abs() <= 3.0;
        pass &= ok;
        lines.push(format!(
            "{}: AUC {:.4} (worst |AUC - 0.5| {worst_auc:.4} ≤ 0.05), accuracy at α = 0.5 minus no-information level {:+.5}, σ {sigma:.5}, z = {z:.2} (|z| ≤ 3); binomial z against the non-flip rate {:+.2}",
            model.id(),
            mean(&aucs),
            mean(&offsets),
            mean(&literal)
        ));
    }
    report("null calibration", pass, lines.join("; "));
}

#[test]
fn trapezoid_auc_equals_mann_whitney() {
    let mut worst = 0.0f64;
    let mut runs = 0;
    // Real prediction runs from fitted models.
    for seed in 0..4u64 {
        let truth = gaussian_couplings(6, 0.15, 0.1, &mut rng_from_seed(seed));
        let panel = glauber_sample(&truth, 1500, &glauber(seed)).unwrap();
        let fit = fit_rpml(&panel, 0, &FitConfig::default()).unwrap();
        let run = predict_bins(&panel, &fit.params, &(1..1500).collect::<Vec<_>>()).unwrap();
        assert!(run.len() <= 10_000);
        worst = worst.max((roc(&run).unwrap().auc - mann_whitney(&run).unwrap()).abs());
        runs += 1;
    }
    // Heavily tied synthetic runs.
    let mut rng = rng_from_seed(9);
    for levels in [2u32, 3, 5, 11] {
        let records = (0..5000)
            .map(|k| {
                let actual = u8::from(rng.random_bool(0.4));
                let level = rng.random_range(0..levels) + u32::from(actual) * rng.random_range(0..2);
                PredictionRecord {
                    entity: k % 7,
                    time: k,
                    probability: (1 + level.min(levels - 1)) as f64 / (levels + 1) as f64,
                    actual,
                }
            })
            .collect();
        let run = PredictionRun::new("ties", records);
        worst = worst.max((roc(&run).unwrap().auc - mann_whitney(&run).unwrap()).abs());
        runs += 1;
    }
    report(
        "mann-whitney identity",
        worst <= 1e-9,
        format!("{runs} runs, max |AUC - U| = {worst:.2e} (≤ 1e-9)"),
    );
}

#[test]
fn pairwise_reversal_model_beats_poisson() {
    let (mut kl_pair, mut kl_poisson, mut kl_dg) = (Vec::new(), Vec::new(), Vec::new());
    let config = FitConfig::default();
    for seed in 50..60u64 {
        let panel = glauber_sample(&CouplingSet::homogeneous(8, 0.1), 2500, &glauber(seed)).unwrap();
        let rev = compute_reversals(&panel).unwrap();
        let w = fit_reversal_pairwise(&rev, &config).unwrap();
        let poisson = fit_poisson(&rev).unwrap();
        let dg = fit_dichotomized_gaussian(&rev.as_sign_panel()).unwrap();
        let d = reversal_count_distributions(&rev, &w.params, &poisson, &dg.params, 200_000, seed).unwrap();
        let t = rev.n_bins();
        kl_pair.push(kl_divergence_smoothed(&d.empirical, &d.pairwise, t).unwrap().value);
        kl_poisson.push(kl_divergence_smoothed(&d.empirical, &d.poisson, t).unwrap().value);
        kl_dg.push(kl_divergence_smoothed(&d.empirical, &d.dg, t).unwrap().value);
    }
    let (p, q, g) = (mean(&kl_pair), mean(&kl_poisson), mean(&kl_dg));
    let sigma = sd(&kl_dg);
    report(
        "reversal ranking",
        p < q && (p - g).abs() <= 3.0 * sigma,
        format!(
            "J = 0.1, N = 8, T = 2500, 10 replicates: KL pairwise {p:.5}, Poisson {q:.5}, DG {g:.5} ± {sigma:.5}; |pair - DG| = {:.5} (≤ 3σ = {:.5})",
            (p - g).abs(),
            3.0 * sigma
        ),
    );
}

#[test]
fn pairwise_data_has_pairwise_multi_information() {
    let params = random_couplings(6, 0, 0.5, &mut rng_from_seed(4));
    let panel = exact_sample(&params, 100_000, 44).unwrap();
    let m = multi_information_fraction(&panel).unwrap();
    let fraction = m.fraction.unwrap_or(f64::NAN);
    report(
        "multi-information",
        fraction >= 0.95,
        format!(
            "N = 6, T = 1e5: I_N = {:.5} (tolerance {:.5}), I_2 = {:.5}, fraction {fraction:.4} (≥ 0.95)",
            m.multi_information, m.tolerance, m.pairwise_information
        ),
    );
}

fn cli(dir: &Path, args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_maxent-reversal"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn same_files(a: &Path, b: &Path) -> (usize, Vec<String>) {
    let mut names: Vec<_> = std::fs::read_dir(a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    let mut differing = Vec::new();
    for name in &names {
        if std::fs::read(a.join(name)).ok() != std::fs::read(b.join(name)).ok() {
            differing.push(name.to_string_lossy().into_owned());
        }
    }
    (names.len(), differing)
}

#[test]
fn persisted_configs_replay_bit_for_bit() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    cli(
        d,
        &[
            "--seed",
            "5",
            "simulate",
            "--homogeneous",
            "0.2",
            "--n",
            "6",
            "--t",
            "1200",
            "--out",
            "sim",
        ],
    );
    let runs: &[(&str, &[&str])] = &[
        ("sim", &[]),
        ("fit", &["fit", "--panel", "sim/panel.json", "--lags", "1"]),
        (
            "predict",
            &[
                "predict",
                "--panel",
                "sim/panel.json",
                "--params",
                "fit/couplings.json",
                "--alpha",
                "0.5",
            ],
        ),
        ("cv", &["evaluate", "--study", "cv", "--panel", "sim/panel.json"]),
        (
            "daily",
            &[
                "evaluate",
                "--study",
                "daily",
                "--panel",
                "sim/panel.json",
                "--shuffle-folds",
            ],
        ),
        (
            "kl",
            &[
                "evaluate",
                "--study",
                "kl",
                "--panel",
                "sim/panel.json",
                "--ks",
                "3,5",
                "--max-subsets",
                "3",
                "--dg-samples",
                "20000",
            ],
        ),
        ("art", &["evaluate", "--study", "artificial", "--n", "5", "--t", "800"]),
    ];
    let mut total = 0;
    let mut differing = Vec::new();
    for (out, args) in runs {
        if !args.is_empty() {
            let mut full = vec!["--seed", "5", "--out", out];
            full.extend_from_slice(args);
            cli(d, &full);
        }
        let replay = format!("{out}_replay");
        let config = format!("{out}/run_config.json");
        cli(d, &["--config", &config, "--out", &replay, "--threads", "2"]);
        let (n, diff) = same_files(&d.join(out), &d.join(&replay));
        total += n;
        differing.extend(diff.into_iter().map(|f| format!("{out}/{f}")));
    }
    report(
        "determinism",
        differing.is_empty(),
        format!(
            "{} runs, {total} files replayed from run_config.json; differing: {differing:?}",
            runs.len()
        ),
    );
}
