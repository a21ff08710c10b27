use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use clap::Parser;
use rayon::prelude::*;
use rwbench::dirichlet::DirichletParams;
use rwbench::inference::{fit_baseline, fit_fastfluct, Dataset, FitOptions, FitResult, ModelParams};
use rwbench::io::{fmt_g17, sha256_hex};
use rwbench::markov::{
    deconvolve_bootstrap, deconvolve_estimate, extract_pm, raw_step_rates, recover_transitions, spread_check, TransitionKernel,
};
use rwbench::model::{walk_cells, StepProbs};
use rwbench::noisesim::{run_campaign_point, trace_psd, CampaignConfig, RunReport, CAMPAIGN_SCHEMA};
use rwbench::sigtest::{
    consistency_region, fisher_combine, fisher_combine_censored, mc_exact_test, slowdrift_test_with, GridSpec,
    SlowDriftMethod, TestReport, DEFAULT_N_SIM,
};
use rwbench::stream::RngStream;
use serde_json::json;

use crate::data::{load_dataset, load_law, load_trace_column};
use crate::manifest::{read_input, CliError, CliResult, Outputs, RunManifest, EXIT_CONFIG, EXIT_DATA, MANIFEST_FILE};
use crate::{Cli, Command, FitModel, SlowdriftKind, TestModel, TraceColumn};

/// State shared by every command.
struct Ctx<'a> {
    cli: &'a Cli,
    root: RngStream,
    n_sim: u64,
    inputs: BTreeMap<String, String>,
    config_digest: Option<String>,
    out: Outputs,
}

pub fn run(cli: Cli, args: &[String]) -> CliResult<()> {
    let threads = cli.threads.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if threads == 0 {
        return Err(CliError::config("--threads must be at least 1"));
    }
    // Fails only if a pool already exists, which cannot happen here.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    if let Command::Replay(r) = &cli.command {
        return replay(&cli, &r.manifest, threads);
    }
    execute(&cli, args, threads).map(|_| ())
}

/// Runs one command and writes its manifest; returns the output digests.
fn execute(cli: &Cli, args: &[String], threads: usize) -> CliResult<BTreeMap<String, String>> {
    let start = Instant::now();
    let mut ctx = Ctx {
        cli,
        root: RngStream::root(&cli.seed),
        n_sim: cli.n_sim.unwrap_or(DEFAULT_N_SIM),
        inputs: BTreeMap::new(),
        config_digest: None,
        out: Outputs::new(&cli.out_dir),
    };
    if ctx.n_sim == 0 {
        return Err(CliError::config("--n-sim must be at least 1"));
    }
    let (name, result) = match &cli.command {
        Command::Simulate(a) => ("simulate", simulate(&mut ctx, &a.config, a.trace_stride)),
        Command::Fit(a) => ("fit", fit(&mut ctx, &a.data.data, a.data.bins, a.model)),
        Command::Test(a) => ("test", test(&mut ctx, a)),
        Command::Region(a) => ("region", region(&mut ctx, a)),
        Command::Deconv(a) => ("deconv", deconv(&mut ctx, a)),
        Command::Spread(a) => ("spread", spread(&mut ctx, a)),
        Command::Psd(a) => ("psd", psd(&mut ctx, a)),
        Command::Report(a) => ("report", report(&mut ctx, &a.campaign)),
        Command::Replay(_) => unreachable!("handled by the caller"),
    };
    // Commands that produced files (even ones that then report a failure,
    // like a spread violation) still get a manifest.
    if ctx.out.is_empty() {
        return result.map(|_| BTreeMap::new());
    }
    let files = ctx.out.files().clone();
    let manifest = RunManifest {
        command: name.to_owned(),
        args: args.to_vec(),
        seed: cli.seed.clone(),
        config_digest: ctx.config_digest,
        tool_version: env!("CARGO_PKG_VERSION").to_owned(),
        inputs: ctx.inputs,
        outputs: files.clone(),
        threads,
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    ctx.out.write_json(MANIFEST_FILE, &manifest)?;
    result.map(|_| files)
}

fn replay(cli: &Cli, path: &Path, threads: usize) -> CliResult<()> {
    let m = RunManifest::load(path)?;
    let mut argv = vec!["rwbench".to_owned()];
    argv.extend(m.args.iter().cloned());
    let mut old = Cli::try_parse_from(&argv).map_err(|e| CliError::config(format!("manifest arguments: {e}")))?;
    if matches!(old.command, Command::Replay(_)) {
        return Err(CliError::config("a manifest cannot record a replay"));
    }
    old.seed = m.seed.clone();
    old.out_dir = cli.out_dir.clone();
    old.threads = Some(threads);
    for (p, digest) in &m.inputs {
        let now = sha256_hex(&read_input(Path::new(p), EXIT_DATA)?);
        if &now != digest {
            return Err(CliError::data(format!("input {p} changed since the manifest was written")));
        }
    }
    let files = execute(&old, &m.args, threads)?;
    let differ: Vec<&String> = m
        .outputs
        .iter()
        .filter(|(k, v)| files.get(*k) != Some(*v))
        .map(|(k, _)| k)
        .chain(files.keys().filter(|k| !m.outputs.contains_key(*k)))
        .collect();
    if !differ.is_empty() {
        return Err(CliError::data(format!("replay outputs differ: {differ:?}")));
    }
    eprintln!("replay reproduced {} files", files.len());
    Ok(())
}

fn simulate(ctx: &mut Ctx, config_path: &Path, trace_stride: Option<usize>) -> CliResult<()> {
    let bytes = read_input(config_path, EXIT_CONFIG)?;
    ctx.config_digest = Some(sha256_hex(&bytes));
    ctx.inputs.insert(config_path.display().to_string(), sha256_hex(&bytes));
    let mut config: CampaignConfig =
        serde_json::from_slice(&bytes).map_err(|e| CliError::config(format!("{}: {e}", config_path.display())))?;
    if let Some(n) = ctx.cli.n_sim {
        config.n_sim = n;
    }
    config.validate()?;
    let outputs = config
        .runs()
        .par_iter()
        .map(|&(i, a)| run_campaign_point(&config, i, a, &ctx.root, trace_stride.is_some()))
        .collect::<rwbench::error::Result<Vec<_>>>()?;
    for o in &outputs {
        let dir = format!("runs/run{:03}", o.report.run);
        for (g, b) in o.counts.iter().enumerate() {
            ctx.out.write_json(&format!("{dir}/counts/block{g:03}_t{}.json", b.t()), b)?;
        }
        let summary = json!({
            "run": o.report.run,
            "alpha_noise": o.report.alpha_noise,
            "seed": o.report.seed,
            "n_total": o.report.n_total,
            "trace": o.report.trace,
        });
        ctx.out.write_json(&format!("{dir}/trace_summary.json"), &summary)?;
        if config.analyze {
            ctx.out.write_json(&format!("{dir}/run_report.json"), &o.report)?;
        }
        if let (Some(stride), Some(trace)) = (trace_stride, &o.trace) {
            ctx.out.write(&format!("{dir}/trace.csv"), trace.to_csv(stride))?;
        }
    }
    Ok(())
}

fn baseline_theta(fit: &FitResult) -> StepProbs {
    match &fit.params {
        ModelParams::Baseline(th) => th.clone(),
        ModelParams::Fastfluct(a) => a.fractions(),
    }
}

fn do_fit(data: &Dataset, model: FitModel) -> CliResult<FitResult> {
    let base = fit_baseline(data, None, FitOptions::default())?;
    Ok(match model {
        FitModel::Baseline => base,
        FitModel::Fastfluct => {
            let init = DirichletParams::from_mean(1e6, &baseline_theta(&base))?;
            fit_fastfluct(data, &init, FitOptions::default())?
        }
    })
}

fn fit(ctx: &mut Ctx, dir: &Path, bins: usize, model: FitModel) -> CliResult<()> {
    let data = load_dataset(dir, bins, &mut ctx.inputs)?;
    let result = do_fit(&data, model)?;
    ctx.out.write_json("fit.json", &result)
}

fn load_params(ctx: &mut Ctx, path: &Path) -> CliResult<ModelParams> {
    let bytes = read_input(path, EXIT_CONFIG)?;
    ctx.inputs.insert(path.display().to_string(), sha256_hex(&bytes));
    let bad = |e: serde_json::Error| CliError::config(format!("{}: {e}", path.display()));
    let v: serde_json::Value = serde_json::from_slice(&bytes).map_err(bad)?;
    let tagged = json!({ "model": v.get("model"), "params": v.get("params") });
    serde_json::from_value(tagged).map_err(bad)
}

fn ecdf_csv(ps: &[f64]) -> String {
    let mut sorted = ps.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut s = String::from("p,ecdf\n");
    for (i, p) in sorted.iter().enumerate() {
        let _ = writeln!(s, "{},{}", fmt_g17(*p), fmt_g17((i + 1) as f64 / sorted.len() as f64));
    }
    s
}

fn test(ctx: &mut Ctx, a: &crate::TestArgs) -> CliResult<()> {
    let data = load_dataset(&a.data.data, a.data.bins, &mut ctx.inputs)?;
    let given = match &a.params {
        Some(p) => Some(load_params(ctx, p)?),
        None => None,
    };
    let fitted = |model| -> CliResult<ModelParams> {
        match &given {
            Some(p) => Ok(p.clone()),
            None => Ok(do_fit(&data, model)?.params),
        }
    };
    let stream = ctx.root.child("test");
    let n_sim = ctx.n_sim;
    let binning = data.binning();
    let (params, reports): (serde_json::Value, Vec<TestReport>) = match a.model {
        TestModel::Baseline | TestModel::Fastfluct => {
            let model = if a.model == TestModel::Baseline { FitModel::Baseline } else { FitModel::Fastfluct };
            let params = fitted(model)?;
            let cells = |t| match (&params, model) {
                (ModelParams::Baseline(th), FitModel::Baseline) => Ok(walk_cells(th, t, binning)),
                (ModelParams::Fastfluct(al), FitModel::Fastfluct) => Ok(rwbench::dirichlet::fastfluct_cells(al, t, binning)),
                _ => Err(CliError::config("parameters do not match --model")),
            };
            let s = stream.child(if model == FitModel::Baseline { "baseline" } else { "fastfluct" });
            let reports = data
                .blocks()
                .iter()
                .enumerate()
                .map(|(i, b)| Ok(mc_exact_test(b, &cells(b.t())?, n_sim, &s.index(i as u64))?))
                .collect::<CliResult<Vec<_>>>()?;
            (serde_json::to_value(&params).map_err(rwbench::error::Error::from)?, reports)
        }
        TestModel::Slowdrift => {
            let alpha = match (a.alpha_total, &given) {
                (Some(total), _) => {
                    let mean = match fitted(FitModel::Baseline)? {
                        ModelParams::Baseline(th) => th,
                        ModelParams::Fastfluct(al) => al.fractions(),
                    };
                    DirichletParams::from_mean(total, &mean)?
                }
                (None, Some(ModelParams::Fastfluct(al))) => al.clone(),
                (None, _) => {
                    return Err(CliError::config(
                        "the slow-drift test needs --alpha-total or fast-fluctuator --params",
                    ))
                }
            };
            let method = match a.slowdrift_method {
                SlowdriftKind::Frequency => SlowDriftMethod::Frequency,
                SlowdriftKind::Integrated => SlowDriftMethod::Integrated { n_theta: a.n_theta },
            };
            let s = stream.child("slowdrift");
            let reports = data
                .blocks()
                .iter()
                .enumerate()
                .map(|(i, b)| slowdrift_test_with(b, &alpha, n_sim, method, &s.index(i as u64)))
                .collect::<rwbench::error::Result<Vec<_>>>()?;
            (json!({ "model": "slowdrift", "params": alpha }), reports)
        }
    };
    let ps: Vec<f64> = reports.iter().map(|r| r.p_value).collect();
    let combined = if a.model == TestModel::Slowdrift {
        fisher_combine_censored(&ps, n_sim)?
    } else {
        fisher_combine(&ps)?
    };
    let blocks: Vec<_> = data
        .blocks()
        .iter()
        .zip(&reports)
        .map(|(b, r)| json!({ "t": b.t(), "N": b.n_samples(), "report": r }))
        .collect();
    ctx.out.write_json(
        "test.json",
        &json!({ "model": params, "n_sim": n_sim, "blocks": blocks, "combined": combined }),
    )?;
    let mut csv = String::from("t,N,p_value\n");
    for (b, p) in data.blocks().iter().zip(&ps) {
        let _ = writeln!(csv, "{},{},{}", b.t(), b.n_samples(), fmt_g17(*p));
    }
    ctx.out.write("pvalues.csv", csv)?;
    ctx.out.write("ecdf.csv", ecdf_csv(&ps))
}

fn region(ctx: &mut Ctx, a: &crate::RegionArgs) -> CliResult<()> {
    let data = load_dataset(&a.data.data, a.data.bins, &mut ctx.inputs)?;
    let fit = fit_baseline(&data, None, FitOptions::default())?;
    let theta = baseline_theta(&fit);
    let grid = GridSpec::around(&theta, a.decades, a.grid);
    let s = ctx.root.child("region");
    let mut regions = Vec::new();
    for (i, b) in data.blocks().iter().enumerate() {
        let r = consistency_region(b, &grid, ctx.n_sim, a.threshold, &s.index(i as u64))?;
        ctx.out.write(&format!("region{i:03}_t{}.csv", b.t()), r.to_csv())?;
        regions.push(r);
    }
    ctx.out.write_json("region.json", &json!({ "mle": theta, "grid": grid, "regions": regions }))
}

fn deconv(ctx: &mut Ctx, a: &crate::PairArgs) -> CliResult<()> {
    let lt = load_law(&a.p_t, &mut ctx.inputs)?;
    let lt1 = load_law(&a.p_t1, &mut ctx.inputs)?;
    let counts = lt.counts.is_some() && lt1.counts.is_some();
    if a.bootstrap > 0 && !counts {
        return Err(CliError::config("--bootstrap needs counts files for both laws"));
    }
    let raw = deconvolve_estimate(&lt.dist, &lt1.dist)?;
    // Exact laws must give a valid kernel. Empirical ones carry sampling
    // noise, so their raw estimate is reported when validation fails.
    let (kernel_csv, kernel, rates, validated) = match TransitionKernel::new(lt.dist.t(), raw.clone()) {
        Ok(k) => (k.to_csv(), serde_json::to_value(&k).map_err(rwbench::error::Error::from)?, extract_pm(&k), true),
        Err(e @ rwbench::error::Error::NegativeKernel { .. }) if !counts => return Err(e.into()),
        Err(rwbench::error::Error::NegativeKernel { .. }) => {
            let m = (raw.len() / 2) as i64;
            let mut csv = String::from("j,P\n");
            for (j, v) in (-m..=m).zip(&raw) {
                let _ = writeln!(csv, "{j},{}", fmt_g17(*v));
            }
            let probs: BTreeMap<i64, f64> = (-m..=m).zip(raw.iter().copied()).collect();
            (csv, json!({ "t": lt.dist.t(), "probs": probs }), raw_step_rates(&raw), false)
        }
        Err(e) => return Err(e.into()),
    };
    let bootstrap = match (&lt.counts, &lt1.counts) {
        (Some(c0), Some(c1)) if a.bootstrap > 0 => {
            Some(deconvolve_bootstrap(c0, c1, a.bootstrap, &ctx.root.child("deconv"))?)
        }
        _ => None,
    };
    ctx.out.write("kernel.csv", kernel_csv)?;
    ctx.out.write_json(
        "deconv.json",
        &json!({ "t": lt.dist.t(), "validated": validated, "kernel": kernel, "rates": rates, "bootstrap": bootstrap }),
    )
}

fn spread(ctx: &mut Ctx, a: &crate::PairArgs) -> CliResult<()> {
    let lt = load_law(&a.p_t, &mut ctx.inputs)?;
    let lt1 = load_law(&a.p_t1, &mut ctx.inputs)?;
    let verdict = spread_check(&lt.dist, &lt1.dist)?;
    if !verdict.satisfied {
        ctx.out.write_json("spread.json", &json!({ "t": lt.dist.t(), "spread": verdict }))?;
        return Err(CliError::data(format!("spread condition violated at x = {:?}", verdict.violations)));
    }
    let tr = recover_transitions(&lt.dist, &lt1.dist)?;
    ctx.out.write("transitions.csv", tr.to_csv())?;
    ctx.out.write_json(
        "spread.json",
        &json!({ "t": lt.dist.t(), "spread": verdict, "transitions": tr.to_json_value() }),
    )
}

fn psd(ctx: &mut Ctx, a: &crate::PsdArgs) -> CliResult<()> {
    let column = match a.column {
        TraceColumn::PPlus => "P_plus",
        TraceColumn::PMinus => "P_minus",
    };
    let signal = load_trace_column(&a.trace, column, &mut ctx.inputs)?;
    let est = trace_psd(&signal, a.segment, !a.two_sided)?;
    if let Some(w) = &est.warning {
        eprintln!("rwbench: warning: {w}");
    }
    ctx.out.write("psd.csv", est.to_csv())?;
    ctx.out.write_json(
        "psd.json",
        &json!({
            "column": column,
            "segment_len": est.segment_len,
            "segments": est.segments,
            "one_sided": est.one_sided,
            "warning": est.warning,
        }),
    )
}

fn report(ctx: &mut Ctx, dir: &Path) -> CliResult<()> {
    let runs_dir = dir.join("runs");
    let mut paths: Vec<_> = std::fs::read_dir(&runs_dir)
        .map(|it| it.filter_map(|e| e.ok().map(|e| e.path().join("run_report.json"))).filter(|p| p.is_file()).collect())
        .unwrap_or_default();
    paths.sort();
    if paths.is_empty() {
        return Err(CliError::data(format!("{}: no run reports", runs_dir.display())));
    }
    let mut runs = Vec::new();
    for p in &paths {
        let bytes = read_input(p, EXIT_DATA)?;
        ctx.inputs.insert(p.display().to_string(), sha256_hex(&bytes));
        let r: RunReport = serde_json::from_slice(&bytes).map_err(|e| CliError::data(format!("{}: {e}", p.display())))?;
        runs.push(r);
    }
    runs.sort_by_key(|r| r.run);
    let keyed: BTreeMap<String, &RunReport> = runs.iter().map(|r| (format!("run{:03}", r.run), r)).collect();
    ctx.out.write_json("campaign.json", &json!({ "schema": CAMPAIGN_SCHEMA, "runs": keyed }))?;

    let opt = |v: Option<f64>| v.map(fmt_g17).unwrap_or_default();
    let mut scatter = String::from("run,alpha_noise,rsd,p_baseline,p_slowdrift,p_fastfluct\n");
    let mut pvals = String::from("run,model,t,N,p_value\n");
    for r in &runs {
        let id = format!("run{:03}", r.run);
        let tests = [("baseline", &r.baseline), ("slowdrift", &r.slowdrift), ("fastfluct", &r.fastfluct)];
        let combined: Vec<String> = tests.iter().map(|(_, t)| opt(t.as_ref().map(|t| t.combined.p_value))).collect();
        let _ = writeln!(scatter, "{id},{},{},{}", fmt_g17(r.alpha_noise), opt(r.trace.rsd), combined.join(","));
        for (name, t) in tests {
            for p in t.iter().flat_map(|t| &t.p_values) {
                let _ = writeln!(pvals, "{id},{name},{},{},{}", p.t, p.n, fmt_g17(p.p_value));
            }
        }
    }
    ctx.out.write("scatter.csv", scatter)?;
    ctx.out.write("pvalues.csv", pvals)
}
