//! Acceptance suite: one PASS/FAIL line per criterion, each with its runtime
//! budget. Set `SIGREGIME_ACCEPTANCE=1,4,9` to run a subset.

use std::collections::BTreeMap;
use std::error::Error;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use rand_distr::{Distribution, StandardNormal};
use sigregime::config::ExperimentConfig;
use sigregime::experiments::{run_experiment, Artifacts};
use sigregime::ingest::{ingest_csv, write_table, IngestOptions};
use sigregime::metrics::MetricsReport;
use sigregime::report::write_artifacts;
use sigregime_core::detect::{auto_evaluate, rolling_threshold};
use sigregime_core::mmd::{bootstrap_null, mmd_between, two_sample_test, Estimator};
use sigregime_core::models::{simulate_regime_switching, Grid, Model, RegimeSwitchSpec, SwitchMode};
use sigregime_core::rng::{derive_seed, stream_rng};
use sigregime_core::scoring::ScoringSample;
use sigregime_core::sigkernel::{solve_goursat, truncated_kernel, KernelSpec, Prepared};
use sigregime_core::signature::{chen_product, truncated_signature};
use sigregime_core::streams::{compose, ensembles_for, extract_subpaths, Stream, StreamTransformer, Transform};

type Check = Result<(bool, String), Box<dyn Error>>;

const HOURLY_DT: f64 = 1.0 / 1764.0;

fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn preset(name: &str) -> Result<ExperimentConfig, Box<dyn Error>> {
    Ok(ExperimentConfig::load(&repo_root().join("configs").join(name))?)
}

fn method<'a>(art: &'a Artifacts, name: &str) -> Result<&'a MetricsReport, Box<dyn Error>> {
    art.metrics
        .iter()
        .find(|m| m.method == name)
        .ok_or_else(|| format!("no metrics for method {name}").into())
}

fn mean_total(m: &MetricsReport) -> f64 {
    m.total.mean.unwrap_or(f64::NAN)
}

fn toy_transformer() -> StreamTransformer {
    compose(vec![Transform::Increment, Transform::TimeNorm, Transform::StateNorm]).expect("valid transforms")
}

fn toy_kernel() -> KernelSpec {
    KernelSpec::rbf(0.025)
}

/// `n` transformed gBm sub-paths of `h1` observations.
fn gbm_subpaths(sigma: f64, h1: usize, n: usize, seed: u64) -> Result<Vec<Prepared>, Box<dyn Error>> {
    let paths = Model::Gbm { mu: 0.0, sigma }.simulate(1, 1.0, Grid::new(HOURLY_DT, h1 - 1), n, seed)?;
    Ok(toy_kernel().prepare_all(&toy_transformer().apply_all(&paths)?)?)
}

fn random_walk(dim: usize, n: usize, step: f64, seed: u64) -> Stream {
    let mut rng = stream_rng(seed, 0);
    let mut rows = vec![vec![0.0; dim]];
    for i in 1..n {
        let next = rows[i - 1]
            .iter()
            .map(|v| {
                let e: f64 = StandardNormal.sample(&mut rng);
                v + step * e
            })
            .collect();
        rows.push(next);
    }
    let times = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
    Stream::from_rows(times, &rows).expect("well-formed walk")
}

fn plain_linear(lambda: u32) -> KernelSpec {
    KernelSpec::linear().with_time(false).with_dyadic_order(lambda)
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, var.sqrt())
}

// ---------------------------------------------------------------------------

fn kernel_correctness() -> Check {
    // Oracle: the two unit linear paths have signature levels 1/k!, so the
    // kernel is the modified Bessel value Σ 1/(k!)².
    let mut term = 1.0;
    let mut oracle = 1.0;
    for k in 1..30 {
        term /= k as f64;
        oracle += term * term;
    }
    assert!((oracle - 2.279_585_302_336_067).abs() < 1e-14);
    let x = Stream::uniform_1d(&[0.0, 1.0], 1.0)?;
    let k = solve_goursat(&x, &x, &plain_linear(5))?;
    let rel = (k - oracle).abs() / oracle;
    Ok((rel < 1e-3, format!("k = {k:.7}, oracle {oracle:.7}, relative error {rel:.2e}")))
}

fn pde_convergence() -> Check {
    let mut ratios = Vec::new();
    for pair in 0..3u64 {
        let x = random_walk(2, 6, 0.6, 100 + pair);
        let y = random_walk(2, 7, 0.6, 200 + pair);
        let reference = solve_goursat(&x, &y, &plain_linear(8))?;
        let errs: Vec<f64> = (1..=6)
            .map(|l| Ok((solve_goursat(&x, &y, &plain_linear(l))? - reference).abs()))
            .collect::<Result<_, Box<dyn Error>>>()?;
        ratios.extend(errs.windows(2).map(|w| w[0] / w[1]));
    }
    let ok = ratios.iter().all(|r| (2.5..=6.0).contains(r));
    let lo = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = ratios.iter().copied().fold(0.0, f64::max);
    Ok((ok, format!("{} ratios over lambda 1..6, range [{lo:.2}, {hi:.2}]", ratios.len())))
}

fn signature_algebra() -> Check {
    let mut notes = Vec::new();
    let mut ok = true;

    let x = random_walk(3, 12, 0.4, 7);
    let head = x.slice(0..6)?;
    let tail = x.slice(5..12)?;
    let joined = chen_product(&truncated_signature(&head, 5, false)?, &truncated_signature(&tail, 5, false)?)?;
    let whole = truncated_signature(&x, 5, false)?;
    let chen_err = (0..=5)
        .flat_map(|k| whole.level(k).iter().zip(joined.level(k)).map(|(a, b)| (a - b).abs()).collect::<Vec<_>>())
        .fold(0.0, f64::max);
    ok &= chen_err < 1e-10;
    notes.push(format!("chen {chen_err:.1e}"));

    // Same points on a squared clock, and with every segment split at its midpoint.
    let warped = Stream::from_flat(x.times().iter().map(|t| t * t).collect(), x.values().to_vec(), 3)?;
    let mut rows = Vec::new();
    for i in 0..x.len() {
        if i > 0 {
            rows.push(x.value(i - 1).iter().zip(x.value(i)).map(|(a, b)| 0.5 * (a + b)).collect());
        }
        rows.push(x.value(i).to_vec());
    }
    let refined = Stream::from_rows((0..rows.len()).map(|i| i as f64).collect(), &rows)?;
    let z = random_walk(3, 9, 0.4, 8);
    let spec = plain_linear(3);
    let base = solve_goursat(&x, &z, &spec)?;
    let warp_err = (solve_goursat(&warped, &z, &spec)? - base).abs();
    let refined_sig = truncated_signature(&refined, 5, false)?;
    let refine_err = (0..=5)
        .flat_map(|k| whole.level(k).iter().zip(refined_sig.level(k)).map(|(a, b)| (a - b).abs()).collect::<Vec<_>>())
        .fold(0.0, f64::max);
    ok &= warp_err < 1e-12 && refine_err < 1e-10;
    notes.push(format!("reparam {warp_err:.1e}/{refine_err:.1e}"));

    let mut decay_ok = true;
    for seed in 0..5 {
        let p = random_walk(2, 10, 0.5, 30 + seed);
        let sig = truncated_signature(&p, 8, false)?;
        let l = p.one_variation();
        let mut fact = 1.0;
        for k in 1..=8 {
            fact *= k as f64;
            decay_ok &= sig.level_norm(k) <= l.powi(k as i32) / fact * (1.0 + 1e-12);
        }
    }
    ok &= decay_ok;
    notes.push(format!("decay {}", if decay_ok { "holds" } else { "violated" }));

    let mut worst: f64 = 0.0;
    for seed in 0..3 {
        let a = random_walk(2, 6, 0.15, 50 + seed);
        let b = random_walk(2, 8, 0.15, 60 + seed);
        let pde = solve_goursat(&a, &b, &plain_linear(8))?;
        let trunc = truncated_kernel(&a, &b, 10, &KernelSpec::truncated(10, 1.0).with_time(false))?;
        worst = worst.max((pde - trunc).abs() / pde.abs());
    }
    ok &= worst < 1e-3;
    notes.push(format!("truncated-vs-pde {worst:.1e}"));
    Ok((ok, notes.join(", ")))
}

fn type_one_rate() -> Check {
    let (h1, h2, alpha) = (7, 10, 0.05);
    let spec = toy_kernel();
    let bank = gbm_subpaths(0.2, h1, 4000, 1)?;
    let null = bootstrap_null(&bank, h2, 1000, &spec, Estimator::Unbiased, alpha, 2)?;
    let trials = 200;
    let mut rejections = 0;
    for t in 0..trials {
        let xs = gbm_subpaths(0.2, h1, h2, derive_seed(3, 2 * t))?;
        let ys = gbm_subpaths(0.2, h1, h2, derive_seed(3, 2 * t + 1))?;
        if two_sample_test(&xs, &ys, &spec, &null, Estimator::Unbiased)?.reject {
            rejections += 1;
        }
    }
    let rate = rejections as f64 / trials as f64;
    Ok(((0.02..=0.09).contains(&rate), format!("{rejections}/{trials} rejections, rate {rate:.3}")))
}

fn baseline_ordering() -> Check {
    let art = run_experiment(&preset("baseline-compare.toml")?)?;
    let full = mean_total(method(&art, "mmd-det")?);
    let sigcon = mean_total(method(&art, "sig-con")?);
    let trunc = mean_total(method(&art, "mmd-t")?);
    let ok = full >= 0.85 && trunc <= full - 0.10 && trunc < sigcon && sigcon < full;
    Ok((
        ok,
        format!(
            "totals: full {:.1}%, sig-con {:.1}%, truncated {:.1}%",
            100.0 * full,
            100.0 * sigcon,
            100.0 * trunc
        ),
    ))
}

fn rank_two_advantage() -> Check {
    let art = run_experiment(&preset("rank2-compare.toml")?)?;
    let r1 = mean_total(method(&art, "mmd1-det")?);
    let r2 = mean_total(method(&art, "mmd2-det")?);
    let t1 = art.timing["detect/mmd1-det/mean_per_run"];
    let t2 = art.timing["detect/mmd2-det/mean_per_run"];
    let ratio = t2 / t1;
    let ok = r2 > r1 && ratio <= 1000.0;
    Ok((
        ok,
        format!(
            "totals: rank-2 {:.1}%, rank-1 {:.1}%; runtime per run {t2:.2} s vs {t1:.2} s ({ratio:.1}x)",
            100.0 * r2,
            100.0 * r1
        ),
    ))
}

fn jump_diffusion() -> Check {
    let art = run_experiment(&preset("mjd-compare.toml")?)?;
    let full = mean_total(method(&art, "mmd-det")?);
    let trunc = mean_total(method(&art, "mmd-t")?);
    Ok((
        full > trunc,
        format!("totals: untruncated {:.1}%, truncated {:.1}%", 100.0 * full, 100.0 * trunc),
    ))
}

fn clustering() -> Check {
    let mut ok = true;
    let mut notes = Vec::new();
    for (name, d) in [("cluster.toml", 1), ("cluster-d10.toml", 10)] {
        let art = run_experiment(&preset(name)?)?;
        let runs: Vec<f64> = serde_json::from_value(art.results["accuracy_runs"].clone())?;
        let (m, _) = mean_sd(&runs);
        let worst = runs.iter().copied().fold(f64::INFINITY, f64::min);
        ok &= m >= 0.85;
        notes.push(format!("d={d}: mean {:.1}%, worst {:.1}%", 100.0 * m, 100.0 * worst));
    }
    Ok((ok, notes.join("; ")))
}

fn scoring_identity() -> Check {
    let spec = toy_kernel();
    let h1 = 7;
    let (batches, n) = (40u64, 50);
    // Batch means over fresh samples give standard errors for both sides.
    let side = |p: f64, q: f64, z: f64, salt: u64| -> Result<(f64, f64, f64, f64), Box<dyn Error>> {
        let mut lhs = Vec::new();
        let mut rhs = Vec::new();
        for b in 0..batches {
            let s = derive_seed(salt, b);
            let sp = ScoringSample::new(gbm_subpaths(p, h1, n, derive_seed(s, 1))?, &spec)?;
            let sq = ScoringSample::new(gbm_subpaths(q, h1, n, derive_seed(s, 2))?, &spec)?;
            let zs = gbm_subpaths(z, h1, n, derive_seed(s, 3))?;
            let mut sum = 0.0;
            for y in &zs {
                sum += sp.score(y, &spec)? - sq.score(y, &spec)?;
            }
            lhs.push(sum / zs.len() as f64);
            let p2 = gbm_subpaths(p, h1, n, derive_seed(s, 4))?;
            let q2 = gbm_subpaths(q, h1, n, derive_seed(s, 5))?;
            let z2 = gbm_subpaths(z, h1, n, derive_seed(s, 6))?;
            rhs.push(
                mmd_between(&p2, &z2, &spec, Estimator::Unbiased)? - mmd_between(&q2, &z2, &spec, Estimator::Unbiased)?,
            );
        }
        let (ml, sl) = mean_sd(&lhs);
        let (mr, sr) = mean_sd(&rhs);
        let k = (batches as f64).sqrt();
        Ok((ml, sl / k, mr, sr / k))
    };
    let mut ok = true;
    let mut notes = Vec::new();
    for (i, (p, q, z)) in [(0.2, 0.3, 0.25), (0.2, 0.3, 0.4), (0.15, 0.3, 0.2)].into_iter().enumerate() {
        let (l, sl, r, sr) = side(p, q, z, 10 + i as u64)?;
        let se = (sl * sl + sr * sr).sqrt();
        let z_score = (l - r).abs() / se;
        ok &= z_score <= 3.0;
        notes.push(format!("{z_score:.2} se"));
    }
    let (on_p, se_p, _, _) = side(0.2, 0.3, 0.2, 20)?;
    let (on_q, se_q, _, _) = side(0.2, 0.3, 0.3, 21)?;
    ok &= on_p <= 0.0 && on_q >= 0.0;
    Ok((
        ok,
        format!(
            "identity gaps {}; E_P = {on_p:.3e} ± {se_p:.1e}, E_Q = {on_q:.3e} ± {se_q:.1e}",
            notes.join(", ")
        ),
    ))
}

fn auto_evaluator() -> Check {
    let (h1, h2) = (7, 10);
    let spec = toy_kernel();
    let phi = toy_transformer();
    let scores = |models: Vec<Model>, lags: &[usize], seed: u64| -> Result<Vec<Option<f64>>, Box<dyn Error>> {
        let path = simulate_regime_switching(&RegimeSwitchSpec {
            models,
            dim: 1,
            h1,
            entry_rate: 2.0 * h1 as f64 * HOURLY_DT,
            exit_rate: 1.0 / 49.0,
            mode: SwitchMode::Poisson,
            horizon: 4.0,
            dt: HOURLY_DT,
            x0: 1.0,
            lattice_aligned: false,
            seed,
        })?;
        let subs = extract_subpaths(&path.stream, h1)?;
        let xs = spec.prepare_all(&phi.apply_all(&subs.paths)?)?;
        let ens = ensembles_for(xs.len(), h2)?;
        Ok(auto_evaluate(&xs, &ens, lags, None, &spec, Estimator::Unbiased)?)
    };
    let toy = vec![Model::Gbm { mu: 0.0, sigma: 0.2 }, Model::Gbm { mu: 0.0, sigma: 0.3 }];
    let one = scores(toy.clone(), &[1], 7)?;
    let five = scores(toy, &[1, 2, 3, 4, 5], 7)?;
    // Raw total variation, and the same per step relative to the mean level.
    let tv = |s: &[Option<f64>]| -> (f64, f64) {
        let v: Vec<f64> = s[5..].iter().map(|x| x.expect("defined past the largest lag")).collect();
        let raw: f64 = v.windows(2).map(|w| (w[1] - w[0]).abs()).sum();
        let level = v.iter().map(|x| x.abs()).sum::<f64>();
        (raw, raw / level)
    };
    let ((tv1, rel1), (tv5, rel5)) = (tv(&one), tv(&five));

    let null_path = scores(vec![Model::Gbm { mu: 0.0, sigma: 0.2 }], &[1, 2, 3, 4, 5], 8)?;
    let alpha = 0.05;
    let rolling = rolling_threshold(&null_path, 200, alpha)?;
    let thresholded = rolling.thresholds.iter().filter(|t| t.is_some()).count();
    let rate = rolling.flags.iter().filter(|&&f| f).count() as f64 / thresholded as f64;
    let ok = tv5 < tv1 && (rate - alpha).abs() <= 0.05;
    Ok((
        ok,
        format!(
            "total variation 5-lag {tv5:.1} vs 1-lag {tv1:.1} (relative to level {rel5:.3} vs {rel1:.3}); \
             H0 flag rate {rate:.3} over {thresholded}"
        ),
    ))
}

fn nonmarkov_jump() -> Check {
    let art = run_experiment(&preset("nonmarkov.toml")?)?;
    let jumped = art.results["runs_with_positive_jump"].as_u64().unwrap_or(0);
    let runs = art.results["jumps"].as_array().map_or(0, Vec::len);
    Ok((jumped >= 8, format!("second half above first half in {jumped} of {runs} runs")))
}

fn realdata_smoke() -> Check {
    let fixture = repo_root().join("crates/cli/tests/fixtures/prices8.csv");
    let header = fs::read_to_string(&fixture)?.lines().next().unwrap_or_default().split(',').count();
    let table = ingest_csv(&fixture, &IngestOptions::default())?;
    let tmp = tempfile::tempdir()?;
    write_table(&table, &tmp.path().join("canonical.csv"))?;

    let cfg = preset("realdata-auto.toml")?;
    let mut outputs = Vec::new();
    for i in 0..2 {
        let dir = tmp.path().join(format!("run-{i}"));
        write_artifacts(&cfg, &run_experiment(&cfg)?, &dir)?;
        outputs.push(read_tree(&dir)?);
    }
    let same = outputs[0] == outputs[1];
    let ok = header == 8 && table.stream.dim() == 7 && same && !outputs[0].is_empty();
    Ok((
        ok,
        format!(
            "{header} columns, {} rows ingested; {} report files, reruns {}",
            table.stream.len(),
            outputs[0].len(),
            if same { "identical" } else { "differ" }
        ),
    ))
}

/// Every deterministic file under `dir`, keyed by relative path.
fn read_tree(dir: &Path) -> Result<BTreeMap<PathBuf, Vec<u8>>, Box<dyn Error>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d)? {
            let p = entry?.path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().is_some_and(|n| n != "timing.json") {
                out.insert(p.strip_prefix(dir)?.to_path_buf(), fs::read(&p)?);
            }
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------

struct Criterion {
    id: usize,
    title: &'static str,
    budget_s: f64,
    run: fn() -> Check,
}

const CRITERIA: &[Criterion] = &[
    Criterion { id: 1, title: "kernel correctness", budget_s: 1.0, run: kernel_correctness },
    Criterion { id: 2, title: "PDE convergence", budget_s: 30.0, run: pde_convergence },
    Criterion { id: 3, title: "signature algebra", budget_s: 30.0, run: signature_algebra },
    Criterion { id: 4, title: "two-sample calibration", budget_s: 300.0, run: type_one_rate },
    Criterion { id: 5, title: "toy detection power", budget_s: 1800.0, run: baseline_ordering },
    Criterion { id: 6, title: "rank-2 advantage", budget_s: 2700.0, run: rank_two_advantage },
    Criterion { id: 7, title: "jump-diffusion separation", budget_s: 1800.0, run: jump_diffusion },
    Criterion { id: 8, title: "clustering", budget_s: 600.0, run: clustering },
    Criterion { id: 9, title: "scoring-rule identity", budget_s: 300.0, run: scoring_identity },
    Criterion { id: 10, title: "auto-evaluator behaviour", budget_s: 300.0, run: auto_evaluator },
    Criterion { id: 11, title: "non-Markovian single-path detection", budget_s: 900.0, run: nonmarkov_jump },
    Criterion { id: 12, title: "real-data pipeline smoke", budget_s: 120.0, run: realdata_smoke },
];

fn selected() -> Option<Vec<usize>> {
    let v = std::env::var("SIGREGIME_ACCEPTANCE").ok()?;
    Some(v.split(',').filter_map(|s| s.trim().parse().ok()).collect())
}

fn main() -> ExitCode {
    let only = selected();
    let mut failed = 0;
    for c in CRITERIA {
        if only.as_ref().is_some_and(|o| !o.contains(&c.id)) {
            continue;
        }
        let start = Instant::now();
        let outcome = (c.run)();
        let secs = start.elapsed().as_secs_f64();
        let (ok, detail) = match outcome {
            Ok((ok, detail)) => (ok && secs <= c.budget_s, detail),
            Err(e) => (false, format!("error: {e}")),
        };
        if !ok {
            failed += 1;
        }
        println!(
            "{} [{:>2}] {}: {detail} ({secs:.1} s, budget {:.0} s)",
            if ok { "PASS" } else { "FAIL" },
            c.id,
            c.title,
            c.budget_s
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criterion(s) failed");
        ExitCode::FAILURE
    }
}
