use std::io::Write;
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use rayon::prelude::*;
use sbs_core::estimators::{
    beam_mass, bs_bound, entropy_functional, mc_estimate, weighted_estimate, Functional, Method,
};
use sbs_core::gumbel::RandomStream;
use sbs_core::metrics::{bleu, mean_diversity};
use sbs_core::search::{
    ancestral_sample, beam_search, naive_stepwise_swor, rejection_swor, stochastic_beam_search,
    stochastic_beam_search_with_threshold, BeamEntry,
};
use sbs_core::seqmodel::{apply_temperature, train_markov, AnyModel, Sequence, SequenceModel, Token};
use sbs_core::verify::{self, Suite, VerifyConfig};

use crate::io::{load_model, resolve_reference, stderr_or, stdout_or, Counting};
use crate::stats::{mean, percentile};
use crate::{
    DiversityArgs, DiversityMethod, EstimateArgs, FunctionalKind, SampleArgs, SampleMethod, TrainArgs, VerifyArgs,
};

/// Substream index for the with-replacement draws of replicate `r`.
fn mc_stream(seed: u64, r: usize) -> RandomStream {
    RandomStream::substream(seed, (r as u64) << 1)
}

/// Substream index for the without-replacement draws of replicate `r`.
fn swor_stream(seed: u64, r: usize) -> RandomStream {
    RandomStream::substream(seed, (r as u64) << 1 | 1)
}

pub fn sample(args: &SampleArgs, seed: u64) -> Result<ExitCode> {
    let base = load_model(&args.source, &args.markov)?;
    let tempered = apply_temperature(&base, args.temperature)?;
    let model = Counting::new(&tempered);
    if args.estimator && args.method != SampleMethod::Sbs {
        bail!("--estimator only applies to --method sbs");
    }
    let mut stream = RandomStream::new(seed);
    let mut kappa = None;
    let mut draws = None;
    let mut wanted = args.k;
    let entries: Vec<BeamEntry> = match args.method {
        SampleMethod::Sbs if args.estimator => {
            let width = args.kappa_convention.beam_width(args.k);
            wanted = width.saturating_sub(1);
            let s = stochastic_beam_search_with_threshold(&model, width, &mut stream)?;
            kappa = s.kappa;
            s.entries
        }
        SampleMethod::Sbs => stochastic_beam_search(&model, args.k, &mut stream)?.entries,
        SampleMethod::Bs => beam_search(&model, args.k)?,
        SampleMethod::Ancestral => (0..args.k)
            .map(|_| ancestral_sample(&model, &mut stream))
            .collect::<sbs_core::Result<_>>()?,
        SampleMethod::Rejection => {
            let s = rejection_swor(&model, args.k, &mut stream, args.max_draws)?;
            draws = Some(s.draws);
            s.entries
        }
        SampleMethod::Naive => naive_stepwise_swor(&model, args.k, &mut stream)?.entries,
    };

    let mut csv = csv::Writer::from_writer(stdout_or(args.output.as_deref())?);
    csv.write_record(["rank", "phi", "key", "tokens", "text"])?;
    for (rank, e) in entries.iter().enumerate() {
        csv.write_record([
            rank.to_string(),
            e.phi.to_string(),
            e.key.to_string(),
            e.seq.to_string(),
            tempered.render(e.seq.tokens()),
        ])?;
    }
    csv.flush()?;
    eprintln!("evaluations {}", model.calls.get());
    if let Some(k) = kappa {
        eprintln!("kappa {k}");
    }
    if let Some(d) = draws {
        eprintln!("draws {d}");
    }
    if entries.len() < wanted && args.method != SampleMethod::Ancestral {
        eprintln!("note: only {} complete sequences available", entries.len());
    }
    Ok(ExitCode::SUCCESS)
}

fn parse_methods(names: &[String]) -> Result<Vec<Method>> {
    if names.iter().any(|n| n == "all") {
        return Ok(Method::ALL.to_vec());
    }
    let mut methods: Vec<Method> = names
        .iter()
        .map(|n| n.parse::<Method>().map_err(|e| anyhow!(e)))
        .collect::<Result<_>>()?;
    methods.sort();
    methods.dedup();
    Ok(methods)
}

fn check_sweep(temperatures: &[f64], ks: &[usize], replicates: usize) -> Result<()> {
    if let Some(t) = temperatures.iter().find(|&&t| !(t > 0.0 && t.is_finite())) {
        bail!("temperatures must be positive, got {t}");
    }
    if ks.contains(&0) {
        bail!("k must be at least 1");
    }
    if replicates == 0 {
        bail!("replicates must be at least 1");
    }
    Ok(())
}

struct Row {
    method: Method,
    temperature: f64,
    k: usize,
    replicate: usize,
    value: f64,
    weight_sum: Option<f64>,
}

pub fn estimate(args: &EstimateArgs, seed: u64) -> Result<ExitCode> {
    let methods = parse_methods(&args.methods)?;
    check_sweep(&args.temperatures, &args.k, args.replicates)?;
    let base = load_model(&args.source, &args.markov)?;
    let reference = resolve_reference(&base, &args.reference)?;
    if args.functional == FunctionalKind::Bleu && reference.is_none() {
        bail!("the bleu functional needs --reference or --reference-beam");
    }
    if methods.contains(&Method::SbsRaw) || methods.contains(&Method::SbsNormalized) {
        if let Some(k) = args.k.iter().find(|&&k| args.kappa_convention.beam_width(k) < 2) {
            bail!("k = {k} leaves no sample after reserving the threshold; use k >= 2 or --kappa-convention extra");
        }
    }
    let eos = base.eos();

    let mut rows = Vec::new();
    for &t in &args.temperatures {
        let model = apply_temperature(&base, t)?;
        let entropy = entropy_functional(&model);
        let bleu_f = |y: &Sequence| {
            let r = reference.as_deref().expect("checked above");
            bleu(y.content(eos), r, 4).expect("reference is non-empty")
        };
        let f: &(dyn Functional + Sync) = match args.functional {
            FunctionalKind::Entropy => &entropy,
            FunctionalKind::Bleu => &bleu_f,
        };
        for &k in &args.k {
            let bs = if methods.iter().any(|m| m.is_deterministic()) {
                Some(beam_search(&model, k)?)
            } else {
                None
            };
            let per_rep: Vec<Vec<Row>> = (0..args.replicates)
                .into_par_iter()
                .map(|r| -> Result<Vec<Row>> {
                    let mut out = Vec::new();
                    let row = |method, value, weight_sum| Row {
                        method,
                        temperature: t,
                        k,
                        replicate: r,
                        value,
                        weight_sum,
                    };
                    let mut sbs = None;
                    for &m in &methods {
                        match m {
                            Method::Mc => {
                                let mut s = mc_stream(seed, r);
                                let ys: Vec<Sequence> = (0..k)
                                    .map(|_| ancestral_sample(&model, &mut s).map(|e| e.seq))
                                    .collect::<sbs_core::Result<_>>()?;
                                out.push(row(m, mc_estimate(f, &ys)?, None));
                            }
                            Method::SbsRaw | Method::SbsNormalized => {
                                if sbs.is_none() {
                                    let width = args.kappa_convention.beam_width(k);
                                    let sample =
                                        stochastic_beam_search_with_threshold(&model, width, &mut swor_stream(seed, r))?;
                                    sbs = Some(weighted_estimate(f, &sample)?);
                                }
                                let e = sbs.expect("computed above");
                                let v = if m == Method::SbsRaw { e.raw } else { e.normalized };
                                out.push(row(m, v, Some(e.weight_sum)));
                            }
                            Method::BsBound | Method::BsNormalized => {
                                let beam = bs.as_deref().expect("computed for deterministic methods");
                                let v = bs_bound(f, beam, m == Method::BsNormalized);
                                out.push(row(m, v, Some(beam_mass(beam))));
                            }
                        }
                    }
                    Ok(out)
                })
                .collect::<Result<_>>()?;
            let mut block: Vec<Row> = per_rep.into_iter().flatten().collect();
            block.sort_by_key(|r| (r.method, r.replicate));
            rows.extend(block);
        }
    }

    let mut csv = csv::Writer::from_writer(stdout_or(args.output.as_deref())?);
    csv.write_record(["method", "temperature", "k", "replicate", "value", "weight_sum"])?;
    for r in &rows {
        csv.write_record([
            r.method.to_string(),
            r.temperature.to_string(),
            r.k.to_string(),
            r.replicate.to_string(),
            r.value.to_string(),
            r.weight_sum.map(|w| w.to_string()).unwrap_or_default(),
        ])?;
    }
    csv.flush()?;

    let mut summary = csv::Writer::from_writer(stderr_or(args.summary.as_deref())?);
    summary.write_record(["method", "temperature", "k", "replicates", "mean", "p2_5", "p97_5"])?;
    for group in rows.chunk_by(|a, b| (a.method, a.temperature, a.k) == (b.method, b.temperature, b.k)) {
        let values: Vec<f64> = group.iter().map(|r| r.value).collect();
        summary.write_record([
            group[0].method.to_string(),
            group[0].temperature.to_string(),
            group[0].k.to_string(),
            values.len().to_string(),
            mean(&values).to_string(),
            percentile(&values, 2.5).to_string(),
            percentile(&values, 97.5).to_string(),
        ])?;
    }
    summary.flush()?;
    Ok(ExitCode::SUCCESS)
}

struct DiversityRow {
    method: DiversityMethod,
    param: f64,
    k: usize,
    replicate: usize,
    bleu: [f64; 3],
    diversity: f64,
    skipped: bool,
}

fn score_set(seqs: &[Sequence], reference: &[Token], eos: Option<Token>) -> Result<([f64; 3], f64, bool)> {
    let content: Vec<&[Token]> = seqs.iter().map(|s| s.content(eos)).collect();
    let scores: Vec<f64> = content
        .iter()
        .map(|c| bleu(c, reference, 4))
        .collect::<sbs_core::Result<_>>()?;
    let min = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (div, skipped) = match mean_diversity(&content) {
        Ok(d) => (d.value, !d.skipped.is_empty()),
        Err(_) => (f64::NAN, true),
    };
    Ok(([min, mean(&scores), max], div, skipped))
}

pub fn diversity(args: &DiversityArgs, seed: u64) -> Result<ExitCode> {
    check_sweep(&args.temperatures, &args.k, args.replicates)?;
    let base = load_model(&args.source, &args.markov)?;
    let reference = resolve_reference(&base, &args.reference)?
        .ok_or_else(|| anyhow!("diversity needs --reference or --reference-beam"))?;
    let eos = base.eos();
    let mut methods = args.methods.clone();
    methods.sort();
    methods.dedup();

    let mut rows = Vec::new();
    for &method in &methods {
        for &t in &args.temperatures {
            let model = apply_temperature(&base, t)?;
            for &k in &args.k {
                let fixed = if method == DiversityMethod::Bs {
                    let seqs: Vec<Sequence> = beam_search(&model, k)?.into_iter().map(|e| e.seq).collect();
                    Some(score_set(&seqs, &reference, eos)?)
                } else {
                    None
                };
                let block: Vec<DiversityRow> = (0..args.replicates)
                    .into_par_iter()
                    .map(|r| -> Result<DiversityRow> {
                        let (bleu, diversity, skipped) = match method {
                            DiversityMethod::Bs => fixed.expect("computed for beam search"),
                            DiversityMethod::Sampling => {
                                let mut s = mc_stream(seed, r);
                                let seqs: Vec<Sequence> = (0..k)
                                    .map(|_| ancestral_sample(&model, &mut s).map(|e| e.seq))
                                    .collect::<sbs_core::Result<_>>()?;
                                score_set(&seqs, &reference, eos)?
                            }
                            DiversityMethod::Sbs => {
                                let sample = stochastic_beam_search(&model, k, &mut swor_stream(seed, r))?;
                                let seqs: Vec<Sequence> = sample.entries.into_iter().map(|e| e.seq).collect();
                                score_set(&seqs, &reference, eos)?
                            }
                        };
                        Ok(DiversityRow {
                            method,
                            param: t,
                            k,
                            replicate: r,
                            bleu,
                            diversity,
                            skipped,
                        })
                    })
                    .collect::<Result<_>>()?;
                rows.extend(block);
            }
        }
    }

    let skipped = rows.iter().filter(|r| r.skipped).count();
    if skipped > 0 {
        eprintln!("note: {skipped} sample sets too short for some n-gram orders; their diversity averages the remaining orders");
    }
    let name = |m: DiversityMethod| match m {
        DiversityMethod::Bs => "bs",
        DiversityMethod::Sampling => "sampling",
        DiversityMethod::Sbs => "sbs",
    };
    let header = ["method", "param", "k", "replicate", "min_bleu", "mean_bleu", "max_bleu", "diversity"];
    let mut csv = csv::Writer::from_writer(stdout_or(args.output.as_deref())?);
    csv.write_record(header)?;
    for r in &rows {
        csv.write_record([
            name(r.method).to_string(),
            r.param.to_string(),
            r.k.to_string(),
            r.replicate.to_string(),
            r.bleu[0].to_string(),
            r.bleu[1].to_string(),
            r.bleu[2].to_string(),
            r.diversity.to_string(),
        ])?;
    }
    csv.flush()?;

    let mut summary = csv::Writer::from_writer(stderr_or(args.summary.as_deref())?);
    summary.write_record(["method", "param", "k", "replicates", "min_bleu", "mean_bleu", "max_bleu", "diversity"])?;
    for group in rows.chunk_by(|a, b| (a.method, a.param, a.k) == (b.method, b.param, b.k)) {
        let avg = |f: fn(&DiversityRow) -> f64| mean(&group.iter().map(f).collect::<Vec<_>>()).to_string();
        summary.write_record([
            name(group[0].method).to_string(),
            group[0].param.to_string(),
            group[0].k.to_string(),
            group.len().to_string(),
            avg(|r| r.bleu[0]),
            avg(|r| r.bleu[1]),
            avg(|r| r.bleu[2]),
            avg(|r| r.diversity),
        ])?;
    }
    summary.flush()?;
    Ok(ExitCode::SUCCESS)
}

pub fn verify(args: &VerifyArgs, seed: u64) -> Result<ExitCode> {
    let suites: Vec<Suite> = if args.suites.is_empty() {
        Suite::ALL.to_vec()
    } else {
        args.suites
            .iter()
            .map(|s| s.parse::<Suite>().map_err(|e| anyhow!(e)))
            .collect::<Result<_>>()?
    };
    let mut cfg = VerifyConfig { seed, ..Default::default() };
    if let Some(path) = &args.model {
        match AnyModel::load(path).with_context(|| format!("loading model {}", path.display()))? {
            AnyModel::Tree(t) => cfg.tree = t,
            AnyModel::Markov(_) => bail!("verify needs a tree model"),
        }
    }
    let mut failed = 0;
    let mut total = 0;
    let mut out = std::io::stdout().lock();
    for suite in suites {
        writeln!(out, "# {suite}")?;
        for check in verify::run(suite, &cfg)? {
            total += 1;
            failed += usize::from(!check.pass);
            writeln!(out, "{check}")?;
        }
    }
    if failed == 0 {
        writeln!(out, "all {total} checks passed")?;
        Ok(ExitCode::SUCCESS)
    } else {
        writeln!(out, "{failed} of {total} checks failed")?;
        Ok(ExitCode::from(1))
    }
}

pub fn train_model(args: &TrainArgs) -> Result<ExitCode> {
    let text = std::fs::read_to_string(&args.corpus).with_context(|| format!("reading corpus {}", args.corpus.display()))?;
    let m = &args.markov;
    let model = train_markov(&text, m.order, m.alpha, m.max_len)?;
    let mut out = stdout_or(args.output.as_deref())?;
    out.write_all(model.to_text().as_bytes())?;
    out.flush()?;
    Ok(ExitCode::SUCCESS)
}
