//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run a subset with `cargo test --test acceptance -- 3 11`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use rand::Rng;
use rwbench::dirichlet::{fastfluct_pmf, slowdrift_sample_block_with_theta, slowdrift_variance};
use rwbench::io::to_json_string;
use rwbench::markov::{compose_pumps, deconvolve_step, recover_transitions, spread_check, TransitionKernel};
use rwbench::model::{return_probability_asymptotic, sample_endpoints, walk_cells, walk_pmf, Regime};
use rwbench::noisesim::{
    noise_campaign, run_campaign_point, sample_endpoint, simulate_memory_walk, CampaignConfig, MemoryWalk,
};
use rwbench::sigtest::{fisher_combine, mc_exact_test};
use rwbench::special::{chi2_sf, ks_uniform};
use rwbench::{Binning, CountsBlock, DirichletParams, RngStream, StepProbs, WalkDistribution};
use tempfile::TempDir;

type Outcome = Result<String, String>;

/// Step probabilities fitted to the device-A data.
fn device_a_theta() -> StepProbs {
    StepProbs::from_rates(2.130664e-5, 6.924426e-5).unwrap()
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn random_theta(rng: &mut impl Rng) -> StepProbs {
    let (pp, pm) = if rng.random_bool(0.5) {
        (10f64.powf(rng.random_range(-6.0..-2.0)), 10f64.powf(rng.random_range(-6.0..-2.0)))
    } else {
        (rng.random_range(0.0..0.5), rng.random_range(0.0..0.5))
    };
    StepProbs::from_rates(pp, pm).unwrap()
}

fn random_simplex(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| -rng.random::<f64>().ln()).collect();
    let s: f64 = w.iter().sum();
    w.iter().map(|v| v / s).collect()
}

// ---------------------------------------------------------------- AC-01

fn enumerate_paths(theta: &StepProbs, t: usize) -> Vec<f64> {
    let p = [theta.p_minus(), theta.p_zero(), theta.p_plus()];
    let mut out = vec![0.0; 2 * t + 1];
    for code in 0..3usize.pow(t as u32) {
        let mut c = code;
        let mut x = 0i64;
        let mut prob = 1.0;
        for _ in 0..t {
            x += (c % 3) as i64 - 1;
            prob *= p[c % 3];
            c /= 3;
        }
        out[(x + t as i64) as usize] += prob;
    }
    out
}

fn ac01() -> Outcome {
    let start = Instant::now();
    let mut rng = RngStream::root("ac01").rng();
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let th = random_theta(&mut rng);
        for t in 0..=8 {
            for (g, w) in walk_pmf(&th, t).probs().iter().zip(enumerate_paths(&th, t)) {
                worst = worst.max((g - w).abs());
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(worst <= 1e-12 && secs < 10.0, format!("max abs error {worst:.2e}, {secs:.2} s"))
}

// ---------------------------------------------------------------- AC-02

fn dyadic(v: f64) -> (BigInt, i32) {
    if v == 0.0 {
        return (BigInt::zero(), 0);
    }
    let (m, e, sign) = num_traits::Float::integer_decode(v);
    (BigInt::from(m) * BigInt::from(sign), e as i32)
}

/// `(A, B, C, E)` with `P− = A/2^E`, `P0 = B/2^E`, `P+ = C/2^E`.
fn common_denominator(th: &StepProbs) -> (BigInt, BigInt, BigInt, u32) {
    let parts = [dyadic(th.p_minus()), dyadic(th.p_zero()), dyadic(th.p_plus())];
    let e = parts.iter().filter(|(m, _)| !m.is_zero()).map(|(_, e)| -e).max().unwrap().max(0);
    let scale = |(m, ex): &(BigInt, i32)| if m.is_zero() { BigInt::zero() } else { m << ((ex + e) as usize) };
    (scale(&parts[0]), scale(&parts[1]), scale(&parts[2]), e as u32)
}

fn product(lo: i64, hi_exclusive: i64) -> BigInt {
    (lo..hi_exclusive).fold(BigInt::one(), |acc, k| acc * BigInt::from(k))
}

fn binom(n: i64, k: i64) -> BigInt {
    product(n - k + 1, n + 1) / product(1, k + 1)
}

/// `p_x` for `x ≥ 0` as the terminating series
/// `P+^x P0^(t−x) C(t,x) ₂F₁((x−t)/2, (x−t+1)/2; x+1; 4P+P−/P0²)`, exactly.
fn hypergeometric_exact(down: &BigInt, idle: &BigInt, up: &BigInt, e: u32, t: i64, x: i64) -> BigRational {
    let big_s = (t - x) / 2;
    let ac = down * up;
    let mut numer = BigInt::zero();
    for s in 0..=big_s {
        let poch = product(x - t, x - t + 2 * s);
        let clear = product(x + 1 + s, x + 1 + big_s) * product(s + 1, big_s + 1);
        numer += poch * clear * num_traits::pow(ac.clone(), s as usize) * num_traits::pow(idle.clone(), (t - x - 2 * s) as usize);
    }
    let denom = (product(x + 1, x + 1 + big_s) * product(1, big_s + 1)) << (e as usize * t as usize);
    BigRational::new(num_traits::pow(up.clone(), x as usize) * binom(t, x) * numer, denom)
}

fn ac02() -> Outcome {
    let mut rng = RngStream::root("ac02").rng();
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let th = random_theta(&mut rng);
        let (a, b, c, e) = common_denominator(&th);
        for t in 1..=50i64 {
            let got = walk_pmf(&th, t as usize);
            for x in -t..=t {
                let exact = if x >= 0 {
                    hypergeometric_exact(&a, &b, &c, e, t, x)
                } else {
                    hypergeometric_exact(&c, &b, &a, e, t, -x)
                };
                let want = exact.to_f64().unwrap();
                if want > 1e-300 {
                    worst = worst.max(((got.get(x) - want) / want).abs());
                }
            }
        }
    }
    check(worst <= 1e-9, format!("max relative error {worst:.2e}"))
}

// ---------------------------------------------------------------- AC-03

fn ac03() -> Outcome {
    let th = device_a_theta();
    let exact = walk_pmf(&th, 100).get(0);
    let short = return_probability_asymptotic(&th, 100, Regime::Short).map_err(|e| e.to_string())?;
    let short_err = ((exact - short) / exact).abs();
    let sym = StepProbs::<f64>::new(0.25, 0.5, 0.25).unwrap();
    let exact_sym = walk_pmf(&sym, 10_000).get(0);
    let long = return_probability_asymptotic(&sym, 10_000, Regime::Long).map_err(|e| e.to_string())?;
    let long_err = ((exact_sym - long) / exact_sym).abs();
    check(
        short_err < 1e-4 && long_err < 0.01,
        format!("short-time relative error {short_err:.2e} at t=100, long-time {long_err:.2e} at t=1e4"),
    )
}

// ---------------------------------------------------------------- AC-04

fn ac04() -> Outcome {
    let th = device_a_theta();
    let alpha = DirichletParams::from_mean(1e12, &th).unwrap();
    let mut worst = 0.0f64;
    for t in 0..=20 {
        let a = fastfluct_pmf(&alpha, t);
        let b = walk_pmf(&th, t);
        for x in -(t as i64)..=t as i64 {
            worst = worst.max((a.get(x) - b.get(x)).abs());
        }
    }

    // Draw θ from the Dirichlet, then one walk with that θ.
    let n = 1_000_000u64;
    let mut worst_z = 0.0f64;
    let alphas = [
        DirichletParams::new(2.0, 5.0, 3.0).unwrap(),
        DirichletParams::from_mean(1e3, &StepProbs::from_rates(100.0 * 2.130664e-5, 100.0 * 6.924426e-5).unwrap()).unwrap(),
    ];
    for (k, alpha) in alphas.iter().enumerate() {
        for t in 1..=6usize {
            let mut rng = RngStream::root("ac04").index(k as u64).index(t as u64).rng();
            let mut hist = vec![0u64; 2 * t + 1];
            for _ in 0..n {
                let th = alpha.sample_with(&mut rng);
                hist[(sample_endpoint(&mut rng, th.p_plus(), th.p_minus(), t) + t as i64) as usize] += 1;
            }
            let d = fastfluct_pmf(alpha, t);
            for (&c, &p) in hist.iter().zip(d.probs()) {
                let sigma = (p * (1.0 - p) / n as f64).sqrt().max(1e-12);
                worst_z = worst_z.max((c as f64 / n as f64 - p).abs() / sigma);
            }
        }
    }
    check(
        worst <= 1e-8 && worst_z < 4.0,
        format!("limit max abs {worst:.2e}; Monte Carlo max |z| {worst_z:.2}"),
    )
}

// ---------------------------------------------------------------- AC-05

fn compositions(n: u64, k: usize) -> Vec<Vec<u64>> {
    if k == 1 {
        return vec![vec![n]];
    }
    (0..=n)
        .flat_map(|first| {
            compositions(n - first, k - 1).into_iter().map(move |mut rest| {
                rest.insert(0, first);
                rest
            })
        })
        .collect()
}

fn multinomial_pmf(z: &[u64], p: &[f64]) -> f64 {
    let n: u64 = z.iter().sum();
    let fact = |k: u64| (1..=k).map(|i| i as f64).product::<f64>();
    z.iter().zip(p).fold(fact(n), |acc, (&k, &q)| acc * q.powi(k as i32) / fact(k))
}

fn ac05() -> Outcome {
    let root = RngStream::root("ac05");
    let mut rng = root.child("nulls").rng();
    let n_sim = 100_000u64;
    let all = compositions(2, 3);
    let mut worst = 0.0f64;
    for i in 0..20 {
        let w: Vec<f64> = (0..3).map(|_| rng.random::<f64>() + 0.05).collect();
        let s: f64 = w.iter().sum();
        let p: Vec<f64> = w.iter().map(|v| v / s).collect();
        let obs = all[rng.random_range(0..all.len())].clone();
        let p_obs = multinomial_pmf(&obs, &p);
        let exact: f64 = all.iter().map(|z| multinomial_pmf(z, &p)).filter(|&q| q <= p_obs * (1.0 + 1e-12)).sum();
        let block = CountsBlock::raw(1, obs).unwrap();
        let r = mc_exact_test(&block, &p, n_sim, &root.index(i)).map_err(|e| e.to_string())?;
        let se = (exact * (1.0 - exact) / n_sim as f64).sqrt().max(1.0 / n_sim as f64);
        worst = worst.max((r.p_value - exact).abs() / se);
    }
    check(worst <= 3.0, format!("max deviation {worst:.2} MC standard errors over 20 nulls"))
}

// ---------------------------------------------------------------- AC-06

fn ac06() -> Outcome {
    let mut identity = 0.0f64;
    for p in [1e-12, 1e-5, 0.01, 0.3, 0.77, 1.0] {
        let r = fisher_combine(&[p]).map_err(|e| e.to_string())?;
        identity = identity.max((r.p_value - p).abs() / p);
    }
    let data: serde_json::Value =
        serde_json::from_str(include_str!("../../core/tests/data/chi2_sf_mpmath.json")).map_err(|e| e.to_string())?;
    let points = data["points"].as_array().ok_or("no points")?;
    let mut worst = 0.0f64;
    for pt in points {
        let x = pt["x"].as_f64().ok_or("bad x")?;
        let dof = pt["dof"].as_f64().ok_or("bad dof")?;
        let want: f64 = pt["sf"].as_str().and_then(|s| s.parse().ok()).ok_or("bad sf")?;
        worst = worst.max((chi2_sf(x, dof) - want).abs() / want);
    }
    check(
        identity <= 1e-13 && worst <= 1e-10 && points.len() == 100,
        format!("L=1 relative error {identity:.1e}; chi-square tail max relative error {worst:.2e} on {} points", points.len()),
    )
}

// ---------------------------------------------------------------- AC-07

/// Law on `[−h, h]` with more than half its mass at 0, so its spectrum
/// stays away from zero.
fn dominant_centre(rng: &mut impl Rng, h: usize) -> WalkDistribution {
    let c = 0.55 + 0.4 * rng.random::<f64>();
    let mut v: Vec<f64> = random_simplex(rng, 2 * h + 1).iter().map(|p| p * (1.0 - c)).collect();
    v[h] += c;
    let s: f64 = v.iter().sum();
    WalkDistribution::new(h, v.iter().map(|p| p / s).collect()).unwrap()
}

fn ac07() -> Outcome {
    let mut rng = RngStream::root("ac07").rng();
    let (mut kernel_err, mut succ_err) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let h = rng.random_range(0..10usize);
        let p = dominant_centre(&mut rng, h);
        let m = rng.random_range(1..4usize);
        let kernel = TransitionKernel::new(0, random_simplex(&mut rng, 2 * m + 1)).unwrap();
        let succ = kernel.apply(&p);
        let got = deconvolve_step(&p, &succ).map_err(|e| e.to_string())?;
        let mm = got.half_width().max(m) as i64;
        for j in -mm..=mm {
            kernel_err = kernel_err.max((got.get(j) - kernel.get(j)).abs());
        }
        let again = got.apply(&p);
        let span = again.t().max(succ.t()) as i64;
        for x in -span..=span {
            succ_err = succ_err.max((again.get(x) - succ.get(x)).abs());
        }
    }
    check(
        kernel_err <= 1e-10 && succ_err <= 1e-12,
        format!("kernel error {kernel_err:.2e}, successor error {succ_err:.2e}"),
    )
}

// ---------------------------------------------------------------- AC-08

/// Position-dependent one-step chain applied to `p`.
fn random_markov_step(rng: &mut impl Rng, p: &WalkDistribution) -> WalkDistribution {
    let h = p.t() as i64 + 1;
    let mut out = vec![0.0; (2 * h + 1) as usize];
    for (x, &px) in p.iter() {
        for (d, kd) in (-1..=1).zip(random_simplex(rng, 3)) {
            out[(x + d + h) as usize] += px * kd;
        }
    }
    WalkDistribution::new(h as usize, out).unwrap()
}

fn max_gap(a: &WalkDistribution, b: &WalkDistribution) -> f64 {
    let span = a.t().max(b.t()) as i64;
    (-span..=span).map(|x| (a.get(x) - b.get(x)).abs()).fold(0.0, f64::max)
}

fn random_step_probs(rng: &mut impl Rng) -> StepProbs {
    let v = random_simplex(rng, 3);
    StepProbs::new(v[0], v[1], v[2]).unwrap()
}

fn ac08() -> Outcome {
    let mut rng = RngStream::root("ac08").rng();
    let mut markov_err = 0.0f64;
    let mut markov_rejected = 0;
    for _ in 0..1000 {
        let h = rng.random_range(0..12usize);
        let p = WalkDistribution::new(h, random_simplex(&mut rng, 2 * h + 1)).unwrap();
        let q = random_markov_step(&mut rng, &p);
        if !spread_check(&p, &q).map_err(|e| e.to_string())?.satisfied {
            markov_rejected += 1;
            continue;
        }
        let back = recover_transitions(&p, &q).map_err(|e| e.to_string())?.apply(&p);
        markov_err = markov_err.max(max_gap(&back, &q));
    }

    // Walkers whose step law depends on their previous step.
    let root = RngStream::root("ac08-memory");
    let mut memory_rejected = 0;
    let mut memory_err = 0.0f64;
    for i in 0..1000u64 {
        let walk = MemoryWalk {
            first: random_step_probs(&mut rng),
            after: [random_step_probs(&mut rng), random_step_probs(&mut rng), random_step_probs(&mut rng)],
        };
        let t = rng.random_range(1..15usize);
        let (a, b) = simulate_memory_walk(&walk, t, 2000, &root.index(i)).map_err(|e| e.to_string())?;
        let (p, q) = (a.empirical().unwrap(), b.empirical().unwrap());
        if !spread_check(&p, &q).map_err(|e| e.to_string())?.satisfied {
            memory_rejected += 1;
            continue;
        }
        let back = recover_transitions(&p, &q).map_err(|e| e.to_string())?.apply(&p);
        memory_err = memory_err.max(max_gap(&back, &q));
    }

    // Mass at 0 moving to +2 in one step.
    let p = WalkDistribution::new(1, vec![0.0, 1.0, 0.0]).unwrap();
    let q = WalkDistribution::new(2, vec![0.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
    let counter_rejected = !spread_check(&p, &q).map_err(|e| e.to_string())?.satisfied && recover_transitions(&p, &q).is_err();

    check(
        markov_rejected == 0 && markov_err <= 1e-12 && memory_rejected == 0 && memory_err <= 1e-12 && counter_rejected,
        format!(
            "Markov pairs: {markov_rejected} rejected, max error {markov_err:.2e}; memory walks: {memory_rejected} rejected, \
             max error {memory_err:.2e}; two-site jump rejected: {counter_rejected}"
        ),
    )
}

// ---------------------------------------------------------------- AC-09

fn ac09() -> Outcome {
    let node = compose_pumps(&[0.00021, 0.99982, 0.0], &[3.6e-5, 0.999975, 0.0]).map_err(|e| e.to_string())?;
    let got = (format!("{:.5}", node.get(-1)), format!("{:.5}", node.get(0)), format!("{:.1e}", node.get(1)));
    check(
        got.0 == "0.00021" && got.1 == "0.99980" && got.2 == "3.6e-5",
        format!("P-1 = {}, P0 = {}, P+1 = {}", got.0, got.1, got.2),
    )
}

// ---------------------------------------------------------------- AC-10

/// Pooled sample variance of `k` slow-drift blocks of `n` walkers.
fn pooled_variance(alpha: &DirichletParams, t: usize, n: u64, k: u64, stream: &RngStream) -> f64 {
    let (mut s1, mut s2) = (0.0, 0.0);
    for b in 0..k {
        let (block, _) = slowdrift_sample_block_with_theta(alpha, t, n, &stream.index(b)).unwrap();
        for (x, &c) in block.labels().zip(block.counts()) {
            s1 += c as f64 * x as f64;
            s2 += c as f64 * (x * x) as f64;
        }
    }
    let m = (n * k) as f64;
    s2 / m - (s1 / m) * (s1 / m)
}

fn ac10() -> Outcome {
    let start = Instant::now();
    let alpha = DirichletParams::from_mean(1000.0, &StepProbs::new(7e-5, 0.99991, 2e-5).unwrap()).unwrap();
    let (t, n, k) = (100usize, 1000u64, 50u64);
    let root = RngStream::root("ac10");
    let s: Vec<f64> = (0..2000).map(|r| pooled_variance(&alpha, t, n, k, &root.index(r))).collect();
    let m = s.iter().sum::<f64>() / s.len() as f64;
    let sd = (s.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (s.len() - 1) as f64).sqrt();
    let se = sd / (s.len() as f64).sqrt();
    let want = slowdrift_variance(&alpha, t, n, k).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    check(
        (m - want).abs() < 3.0 * se && secs < 120.0,
        format!("simulated {m:.6e} ± {se:.1e}, formula {want:.6e} ({:.2} se), {secs:.1} s", (m - want).abs() / se),
    )
}

// ---------------------------------------------------------------- AC-11

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn ac11() -> Outcome {
    let start = Instant::now();
    // Error rates ×100 so that N_tot = 4e5 resolves the fits; the two
    // concentrations target trace RSDs of about 0.8% and 14%.
    let config: CampaignConfig = serde_json::from_str(&format!(
        r#"{{
            "schema": "rwbench.campaign/1",
            "mean_theta": {{"p_plus": {}, "p_minus": {}}},
            "alpha_noise": [{}, 100],
            "runs_per_alpha": 20,
            "schedule": {{"kind": "device-a", "n_total": 400000}}
        }}"#,
        100.0 * 2.130664e-5,
        100.0 * 6.924426e-5,
        10f64.powf(4.5)
    ))
    .map_err(|e| e.to_string())?;
    let report = noise_campaign(&config, &RngStream::root("ac11")).map_err(|e| e.to_string())?;
    let rsd = |r: &rwbench::noisesim::RunReport| r.trace.rsd.unwrap_or(0.0);
    let base = |r: &rwbench::noisesim::RunReport| r.baseline.as_ref().unwrap().combined.p_value;
    let quiet: Vec<f64> = report.runs.iter().filter(|r| rsd(r) < 0.02).map(base).collect();
    let mut noisy: Vec<f64> = report.runs.iter().filter(|r| rsd(r) >= 0.06).map(base).collect();
    let drift_ok = report.runs.iter().filter(|r| r.slowdrift.as_ref().unwrap().combined.p_value > 0.05).count();
    let frac = drift_ok as f64 / report.runs.len() as f64;
    let (_, ks_p) = ks_uniform(&quiet);
    let med = if noisy.is_empty() { f64::NAN } else { median(&mut noisy) };
    let secs = start.elapsed().as_secs_f64();
    let a = quiet.len() >= 10 && ks_p > 0.01;
    let b = noisy.len() >= 10 && med < 0.05;
    let c = frac >= 0.8;
    check(
        a && b && c && secs < 1800.0,
        format!(
            "(a) {} runs RSD<2%, KS p {ks_p:.3} [{}]; (b) {} runs RSD>=6%, median baseline p {med:.2e} [{}]; \
             (c) slow drift p>0.05 in {:.0}% [{}]; {secs:.0} s",
            quiet.len(),
            if a { "ok" } else { "fail" },
            noisy.len(),
            if b { "ok" } else { "fail" },
            100.0 * frac,
            if c { "ok" } else { "fail" },
        ),
    )
}

// ---------------------------------------------------------------- AC-12

fn ac12() -> Outcome {
    let config: CampaignConfig = serde_json::from_str(&format!(
        r#"{{
            "schema": "rwbench.campaign/1",
            "mean_theta": {{"p_plus": 2.12e-5, "p_minus": 6.9e-5}},
            "n_fluctuators": 100,
            "rates": {{"kind": "log-uniform", "min": 1e-8, "max": 1.0}},
            "alpha_noise": [{}],
            "schedule": {{"kind": "device-a", "n_total": 3802264}},
            "analyze": false
        }}"#,
        10f64.powf(5.2)
    ))
    .map_err(|e| e.to_string())?;
    let want = [2.10861e-5, 7.71620e-7, 6.93810e-5, 1.36838e-6];
    let mut worst = 0.0f64;
    let mut lines = Vec::new();
    for seed in 0..5u64 {
        let root = RngStream::root("ac12").index(seed);
        let out = run_campaign_point(&config, 0, config.alpha_noise[0], &root, false).map_err(|e| e.to_string())?;
        let m = &out.report.trace;
        let got = [m.mu_plus, m.sigma_plus, m.mu_minus, m.sigma_minus];
        let dev = got.iter().zip(&want).map(|(g, w)| (g / w - 1.0).abs()).fold(0.0, f64::max);
        worst = worst.max(dev);
        lines.push(format!("s{seed}: σ+ {:.3e} σ− {:.3e}", m.sigma_plus, m.sigma_minus));
    }
    check(worst < 0.25, format!("max relative deviation {:.1}% ({})", 100.0 * worst, lines.join(", ")))
}

// ---------------------------------------------------------------- AC-13

fn ac13() -> Outcome {
    let th = StepProbs::from_rates(100.0 * 2.130664e-5, 100.0 * 6.924426e-5).unwrap();
    let root = RngStream::root("ac13");
    let cells = walk_cells(&th, 20, Binning::Rebinned(5));
    let mut ps = Vec::with_capacity(1000);
    for i in 0..1000u64 {
        let b = sample_endpoints(&th, 20, 10_000, &root.child("data").index(i))
            .and_then(|b| b.rebin(5))
            .map_err(|e| e.to_string())?;
        ps.push(mc_exact_test(&b, &cells, 999, &root.child("test").index(i)).map_err(|e| e.to_string())?.p_value);
    }
    let m = ps.len() as f64;
    let mut worst = f64::NEG_INFINITY;
    for j in 1..=100 {
        let u = j as f64 / 100.0;
        let frac = ps.iter().filter(|&&p| p <= u).count() as f64 / m;
        worst = worst.max((frac - u) / (u * (1.0 - u) / m).sqrt().max(1e-300));
    }
    check(worst <= 3.0, format!("max excess over the uniform CDF {worst:.2} MC standard deviations"))
}

// ---------------------------------------------------------------- AC-14

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for e in fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else if p.file_name().unwrap() != "manifest.json" {
                out.insert(p.strip_prefix(root).unwrap().display().to_string(), fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    if dir.is_dir() {
        walk(dir, dir, &mut out);
    }
    out
}

fn rwbench(dir: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_rwbench"))
        .current_dir(dir)
        .env_remove("RWBENCH_SEED")
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr).trim()))
    }
}

const CAMPAIGN: &str = r#"{
    "schema": "rwbench.campaign/1",
    "mean_theta": {"p_plus": 0.002, "p_minus": 0.007},
    "n_fluctuators": 20,
    "alpha_noise": [1e3, 1e5],
    "schedule": {"kind": "explicit", "bursts": [{"t": 1, "N": 4000}, {"t": 4, "N": 4000}, {"t": 10, "N": 4000}]},
    "fastfluct": true
}"#;

fn ac14() -> Outcome {
    let tmp = TempDir::new().map_err(|e| e.to_string())?;
    let d = tmp.path();
    fs::write(d.join("c.json"), CAMPAIGN).unwrap();
    let common = ["--seed", "acceptance", "--n-sim", "199"];
    let with = |extra: &[&str]| -> Vec<String> { common.iter().chain(extra).map(|s| s.to_string()).collect() };
    // Shared inputs for the analysis commands.
    let mut args = with(&["--threads", "1", "--out-dir", "ref", "simulate", "--config", "c.json", "--trace-stride", "1"]);
    rwbench(d, &args.iter().map(String::as_str).collect::<Vec<_>>())?;
    let walk = MemoryWalk {
        first: StepProbs::from_rates(0.02, 0.05).unwrap(),
        after: [
            StepProbs::from_rates(0.01, 0.08).unwrap(),
            StepProbs::from_rates(0.02, 0.04).unwrap(),
            StepProbs::from_rates(0.06, 0.01).unwrap(),
        ],
    };
    let (a, b) = simulate_memory_walk(&walk, 6, 50_000, &RngStream::root("ac14")).map_err(|e| e.to_string())?;
    fs::write(d.join("p_t.json"), to_json_string(&a).unwrap()).unwrap();
    fs::write(d.join("p_t1.json"), to_json_string(&b).unwrap()).unwrap();

    let data = "ref/runs/run000/counts";
    let commands: Vec<(&str, Vec<&str>)> = vec![
        ("simulate", vec!["simulate", "--config", "c.json", "--trace-stride", "7"]),
        ("fit", vec!["fit", "--data", data, "--bins", "5"]),
        ("fit-fastfluct", vec!["fit", "--data", data, "--bins", "5", "--model", "fastfluct"]),
        ("test-baseline", vec!["test", "--data", data, "--bins", "5"]),
        ("test-slowdrift", vec!["test", "--data", data, "--bins", "5", "--model", "slowdrift", "--alpha-total", "1e4"]),
        (
            "test-frequency",
            vec!["test", "--data", data, "--bins", "5", "--model", "slowdrift", "--alpha-total", "1e4", "--slowdrift-method", "frequency"],
        ),
        ("test-fastfluct", vec!["test", "--data", data, "--bins", "5", "--model", "fastfluct"]),
        ("region", vec!["region", "--data", data, "--bins", "5", "--grid", "5"]),
        ("deconv", vec!["deconv", "--p-t", "p_t.json", "--p-t1", "p_t1.json", "--bootstrap", "50"]),
        ("spread", vec!["spread", "--p-t", "p_t.json", "--p-t1", "p_t1.json"]),
        ("psd", vec!["psd", "--trace", "ref/runs/run000/trace.csv", "--segment", "2048"]),
        ("report", vec!["report", "--campaign", "ref"]),
        ("replay", vec!["replay", "ref/manifest.json"]),
    ];
    let mut bad = Vec::new();
    for (name, cmd) in &commands {
        let mut snaps = Vec::new();
        for (k, threads) in ["1", "8", "1"].iter().enumerate() {
            let out = format!("{name}-{k}");
            args = with(&["--threads", threads, "--out-dir", &out]);
            args.extend(cmd.iter().map(|s| s.to_string()));
            rwbench(d, &args.iter().map(String::as_str).collect::<Vec<_>>())?;
            snaps.push(snapshot(&d.join(&out)));
        }
        if snaps[0].is_empty() || snaps[0] != snaps[1] || snaps[0] != snaps[2] {
            bad.push(*name);
        }
    }
    check(
        bad.is_empty(),
        if bad.is_empty() {
            format!("{} commands byte-identical across reruns and 1/8 threads", commands.len())
        } else {
            format!("outputs differ for {}", bad.join(", "))
        },
    )
}

// ----------------------------------------------------------------

fn main() {
    let criteria: [(u32, &str, fn() -> Outcome); 14] = [
        (1, "walk PMF vs path enumeration", ac01),
        (2, "walk PMF vs exact hypergeometric form", ac02),
        (3, "asymptotic return probability", ac03),
        (4, "fast-fluctuator limit and marginalization", ac04),
        (5, "exact-test calibration", ac05),
        (6, "Fisher combination and chi-square tail", ac06),
        (7, "deconvolution round trip", ac07),
        (8, "spread condition and recovery", ac08),
        (9, "pump composition", ac09),
        (10, "slow-drift variance", ac10),
        (11, "noise-threshold campaign", ac11),
        (12, "simulated trace moments", ac12),
        (13, "super-uniform p-values", ac13),
        (14, "determinism across reruns and threads", ac14),
    ];
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (id, name, run) in criteria {
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let took = fmt_duration(start.elapsed());
        match outcome {
            Ok(detail) => println!("AC-{id:02} PASS {name}: {detail} [{took}]"),
            Err(detail) => {
                failed += 1;
                println!("AC-{id:02} FAIL {name}: {detail} [{took}]");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}

fn fmt_duration(d: Duration) -> String {
    format!("{:.1} s", d.as_secs_f64())
}
