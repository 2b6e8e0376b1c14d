//! The five subcommands. Each writes into an output directory and returns
//! its manifest.
//!
//! Chains run on their own threads and write only into `chain_<k>/`;
//! summaries are computed after all chains have finished, from the pooled
//! draws.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;
use sphcov::chain_rng;
use sphcov::diagnostics::ks_two_sample;
use sphcov::gp::TimeGrid;
use sphcov::models::{
    generate_periodic, generate_sparse_periodic, iw_posterior_params, pointwise_band,
    run_dynamic_from, run_static, summarize_posterior, Band, BandLayout, DynamicCorrModel,
    DynamicSamples, InverseWishart, LogNormalSd, PosteriorSummary, StaticNiwModel, StaticPrior,
    StaticSamples, TrialTensor,
};
use sphcov::priors::SqDirichletParams;

use crate::config::{ExperimentConfig, InitKind, PriorKind};
use crate::error::{CliError, CliResult};
use crate::io::{
    count_rows, create_dir, num, read_tensor, read_truth, write_json, write_tensor, write_truth,
    ArchiveKind, ChainRecord, CsvIn, CsvOut, Manifest, Shape, DATA_FILE, TIMING_FILE,
};

const CHAIN_MEAN: &str = "mean.csv";
const CHAIN_LOG_SD: &str = "log_sd.csv";
const CHAIN_CHOL: &str = "chol.csv";
const CHAIN_HYPER: &str = "hyper.csv";
const CHAIN_TRACE: &str = "trace.csv";
const CHAIN_SIGMA: &str = "sigma.csv";

pub const SUMMARY_MEAN: &str = "summary_mean.csv";
pub const SUMMARY_SD: &str = "summary_sd.csv";
pub const SUMMARY_CORR: &str = "summary_corr.csv";
pub const SUMMARY_COV: &str = "summary_cov.csv";
pub const SUMMARY_SIGMA: &str = "summary_sigma.csv";
pub const TRUTH_COMPARISON: &str = "truth_comparison.json";
pub const KS_TABLE: &str = "ks.csv";
pub const VALIDATION_CHAIN: &str = "chain_sigma.csv";
pub const VALIDATION_DIRECT: &str = "direct_sigma.csv";

fn chain_dir(c: usize) -> String {
    format!("chain_{c}")
}

/// Runs `f(0..n)`, concurrently when `n > 1`, keeping chain order.
fn run_chains<T, F>(n: usize, f: F) -> CliResult<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> CliResult<T> + Sync,
{
    if n == 1 {
        return Ok(vec![f(0)?]);
    }
    std::thread::scope(|s| {
        let handles: Vec<_> = (0..n)
            .map(|c| {
                let f = &f;
                s.spawn(move || f(c))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("chain thread panicked"))
            .collect()
    })
}

#[derive(Serialize)]
struct Timing {
    chains: Vec<f64>,
    total_seconds: f64,
}

fn write_timing(out: &Path, chains: Vec<f64>, start: Instant) -> CliResult<()> {
    write_json(
        &out.join(TIMING_FILE),
        &Timing {
            chains,
            total_seconds: start.elapsed().as_secs_f64(),
        },
    )
}

fn shape_of(data: &TrialTensor, band: usize) -> Shape {
    Shape {
        trials: data.n_trials(),
        times: data.n_times(),
        dim: data.dim(),
        band,
    }
}

// ---------------------------------------------------------------------------
// gen-periodic

/// Writes `data.csv`, the truth grids and the manifest.
pub fn gen_periodic(cfg: &ExperimentConfig, out: &Path) -> CliResult<Manifest> {
    let g = &cfg.generate;
    create_dir(out)?;
    let mut rng = chain_rng(cfg.seed, 0);
    let (data, truth) = if g.sparse {
        generate_sparse_periodic(g.dim, g.trials, g.times, &mut rng)?
    } else {
        if !(g.t_end > g.t_start) {
            return Err(CliError::InvalidConfig(format!(
                "t_end {} must exceed t_start {}",
                g.t_end, g.t_start
            )));
        }
        generate_periodic(g.dim, g.trials, g.times, (g.t_start, g.t_end), &mut rng)?
    };
    let mut manifest = Manifest::new(
        "gen-periodic",
        ArchiveKind::Data,
        cfg,
        shape_of(&data, data.dim()),
    );
    manifest
        .files
        .insert(DATA_FILE.into(), write_tensor(&out.join(DATA_FILE), &data)?);
    manifest.files.extend(write_truth(out, &truth)?);
    manifest.write(out)?;
    Ok(manifest)
}

// ---------------------------------------------------------------------------
// Static model

fn static_prior(cfg: &ExperimentConfig, d: usize) -> CliResult<StaticPrior> {
    let s = &cfg.static_model;
    let tau = LogNormalSd {
        mean: s.tau_mean,
        sd: s.tau_sd,
    };
    if !(s.tau_sd > 0.0) {
        return Err(CliError::InvalidConfig("tau_sd must be positive".into()));
    }
    Ok(match s.prior {
        PriorKind::Iw => StaticPrior::IwConditional,
        PriorKind::Sqdir => StaticPrior::SqDirichlet {
            alpha: (2..=d)
                .map(|i| SqDirichletParams::polar(i, s.alpha, s.alpha_last))
                .collect::<Result<_, _>>()?,
            tau,
        },
        PriorKind::Vmf => StaticPrior::Vmf {
            kappa: s.kappa,
            tau,
        },
        PriorKind::Bingham => StaticPrior::Bingham { zeta: s.zeta, tau },
    })
}

fn static_model(
    cfg: &ExperimentConfig,
    data: DMatrix<f64>,
    prior: StaticPrior,
) -> CliResult<StaticNiwModel> {
    let s = &cfg.static_model;
    let d = data.ncols();
    let psi = match &s.psi {
        None => DMatrix::identity(d, d),
        Some(rows) => {
            if rows.len() != d || rows.iter().any(|r| r.len() != d) {
                return Err(CliError::InvalidConfig(format!("psi must be {d} x {d}")));
            }
            DMatrix::from_fn(d, d, |i, j| rows[i][j])
        }
    };
    let mu0 = s.mu0.clone().unwrap_or_else(|| vec![0.0; d]);
    if mu0.len() != d {
        return Err(CliError::InvalidConfig(format!(
            "mu0 must have {d} entries"
        )));
    }
    Ok(StaticNiwModel::new(
        psi,
        s.nu.unwrap_or(d as f64),
        mu0,
        data,
        prior,
    )?)
}

fn check_static_acceptance(s: &StaticSamples, d: usize, chain: usize) -> CliResult<()> {
    if d > 1 && s.factor_accept_rate < 0.01 {
        return Err(CliError::ChainDiverged(format!(
            "chain {chain}: factor acceptance rate {:.4}",
            s.factor_accept_rate
        )));
    }
    Ok(())
}

fn write_sigma_draws(path: &Path, draws: &[DMatrix<f64>]) -> CliResult<usize> {
    let mut out = CsvOut::create(path, &["draw", "i", "j", "value"])?;
    for (k, s) in draws.iter().enumerate() {
        for i in 0..s.nrows() {
            for j in 0..=i {
                out.row([k.to_string(), i.to_string(), j.to_string(), num(s[(i, j)])])?;
            }
        }
    }
    out.finish()
}

/// Reads draws written by [`write_sigma_draws`].
fn read_sigma_draws(path: &Path, draws: usize, d: usize) -> CliResult<Vec<DMatrix<f64>>> {
    let f = CsvIn::open(path, &["draw", "i", "j", "value"])?;
    if f.len() != draws * d * (d + 1) / 2 {
        return Err(CliError::RaggedData(format!(
            "{}: expected {} rows, found {}",
            path.display(),
            draws * d * (d + 1) / 2,
            f.len()
        )));
    }
    let mut out = vec![DMatrix::zeros(d, d); draws];
    for r in 0..f.len() {
        let (k, i, j) = (f.usize(r, "draw")?, f.usize(r, "i")?, f.usize(r, "j")?);
        if k >= draws || i >= d || j > i {
            return Err(CliError::RaggedData(format!(
                "{}: entry ({k}, {i}, {j}) is out of range",
                path.display()
            )));
        }
        let v = f.f64(r, "value")?;
        out[k][(i, j)] = v;
        out[k][(j, i)] = v;
    }
    Ok(out)
}

fn static_data(path: &Path) -> CliResult<DMatrix<f64>> {
    let data = read_tensor(path)?;
    if data.n_times() != 1 {
        return Err(CliError::InvalidConfig(format!(
            "static data must have a single time point, found {}",
            data.n_times()
        )));
    }
    Ok(data.at_time(0))
}

/// Row-vector bands of the lower triangle (`Σ`) and the strict lower
/// triangle (correlations) over pooled draws.
fn static_bands(draws: &[DMatrix<f64>]) -> CliResult<(Vec<(usize, usize)>, Band, Band)> {
    let d = draws.first().map_or(0, |s| s.nrows());
    let entries: Vec<(usize, usize)> = (0..d).flat_map(|i| (0..=i).map(move |j| (i, j))).collect();
    let row = |f: &dyn Fn(&DMatrix<f64>, usize, usize) -> f64| -> Vec<DMatrix<f64>> {
        draws
            .iter()
            .map(|s| DMatrix::from_fn(1, entries.len(), |_, k| f(s, entries[k].0, entries[k].1)))
            .collect()
    };
    let sigma = pointwise_band(&row(&|s, i, j| s[(i, j)]))?;
    let corr = pointwise_band(&row(&|s, i, j| s[(i, j)] / (s[(i, i)] * s[(j, j)]).sqrt()))?;
    Ok((entries, sigma, corr))
}

fn write_static_summary(out: &Path, draws: &[DMatrix<f64>]) -> CliResult<BTreeMap<String, usize>> {
    let (entries, sigma, corr) = static_bands(draws)?;
    let mut rows = BTreeMap::new();
    for (name, band, off_diag) in [(SUMMARY_SIGMA, &sigma, false), (SUMMARY_CORR, &corr, true)] {
        let mut f = CsvOut::create(&out.join(name), &["i", "j", "mean", "lower", "upper"])?;
        for (k, &(i, j)) in entries.iter().enumerate() {
            if off_diag && i == j {
                continue;
            }
            f.row([
                i.to_string(),
                j.to_string(),
                num(band.mean[(0, k)]),
                num(band.lower[(0, k)]),
                num(band.upper[(0, k)]),
            ])?;
        }
        rows.insert(name.to_string(), f.finish()?);
    }
    Ok(rows)
}

/// Fits the static normal model to a single-time-point data file; each
/// trial is one observation.
pub fn fit_static(cfg: &ExperimentConfig, data_path: &Path, out: &Path) -> CliResult<Manifest> {
    let start = Instant::now();
    let data = static_data(data_path)?;
    let (n, d) = data.shape();
    let model = static_model(cfg, data, static_prior(cfg, d)?)?;
    let chain_cfg = cfg.static_chain()?;
    create_dir(out)?;
    let results = run_chains(cfg.chains, |c| {
        let t0 = Instant::now();
        let s = run_static(model.clone(), chain_cfg, &mut chain_rng(cfg.seed, c as u64))?;
        let secs = t0.elapsed().as_secs_f64();
        check_static_acceptance(&s, d, c)?;
        let dir = out.join(chain_dir(c));
        create_dir(&dir)?;
        let mut files = BTreeMap::new();
        files.insert(
            format!("{}/{CHAIN_SIGMA}", chain_dir(c)),
            write_sigma_draws(&dir.join(CHAIN_SIGMA), &s.sigma)?,
        );
        let mut tau = CsvOut::create(&dir.join(CHAIN_LOG_SD), &["draw", "channel", "value"])?;
        for (k, t) in s.tau.iter().enumerate() {
            for (i, v) in t.iter().enumerate() {
                tau.row([k.to_string(), i.to_string(), num(*v)])?;
            }
        }
        files.insert(format!("{}/{CHAIN_LOG_SD}", chain_dir(c)), tau.finish()?);
        let record = ChainRecord {
            chain: c,
            seed: cfg.seed.wrapping_add(c as u64),
            retained: s.sigma.len(),
            accept_rate: s.factor_accept_rate,
            step_size: s.step_size,
            files,
        };
        Ok((record, secs))
    })?;
    let mut manifest = Manifest::new(
        "fit-static",
        ArchiveKind::Static,
        cfg,
        Shape {
            trials: n,
            times: 1,
            dim: d,
            band: d,
        },
    );
    let mut secs = Vec::new();
    for (record, t) in results {
        manifest.chains.push(record);
        secs.push(t);
    }
    finish_archive(manifest, out, None, secs, start)
}

// ---------------------------------------------------------------------------
// validate-iw

/// Per-entry two-sample KS comparison of chain and direct draws of `Σ`.
#[derive(Clone, Debug, PartialEq)]
pub struct KsRow {
    pub i: usize,
    pub j: usize,
    pub statistic: f64,
    pub p_value: f64,
}

/// Runs the inverse-Wishart chain and the conjugate oracle on simulated
/// data with `Σ₀ = (I + 11ᵀ)/11` and zero mean, and compares every
/// `σ_ij` marginal. Returns [`CliError::Validation`] after writing all
/// files when a statistic exceeds the threshold.
pub fn validate_iw(cfg: &ExperimentConfig, out: &Path) -> CliResult<Manifest> {
    let start = Instant::now();
    let s = &cfg.static_model;
    let (d, n) = (s.dim, s.observations);
    if d == 0 || n == 0 {
        return Err(CliError::InvalidConfig(
            "validation needs dim and observations of at least 1".into(),
        ));
    }
    let sigma0 = (DMatrix::identity(d, d) + DMatrix::from_element(d, d, 1.0)) / 11.0;
    let c0 = sigma0
        .cholesky()
        .ok_or_else(|| CliError::InvalidConfig("Σ₀ is not positive definite".into()))?
        .unpack();
    let mut rng = chain_rng(cfg.seed, 0);
    let z = DMatrix::from_fn(d, n, |_, _| -> f64 { StandardNormal.sample(&mut rng) });
    let data = (c0 * z).transpose();
    create_dir(out)?;
    let tensor = TrialTensor::new(
        n,
        1,
        d,
        (0..n)
            .flat_map(|k| data.row(k).iter().copied().collect::<Vec<_>>())
            .collect(),
        vec![0.0],
    )?;
    let mut manifest = Manifest::new(
        "validate-iw",
        ArchiveKind::Validation,
        cfg,
        shape_of(&tensor, d),
    );
    manifest.files.insert(
        DATA_FILE.into(),
        write_tensor(&out.join(DATA_FILE), &tensor)?,
    );

    let model = static_model(cfg, data.clone(), StaticPrior::IwConditional)?;
    let chain_cfg = cfg.static_chain()?;
    let results = run_chains(cfg.chains, |c| {
        let t0 = Instant::now();
        let s = run_static(
            model.clone(),
            chain_cfg,
            &mut chain_rng(cfg.seed, 1 + c as u64),
        )?;
        check_static_acceptance(&s, d, c)?;
        Ok((s, t0.elapsed().as_secs_f64()))
    })?;
    let mut chain_draws = Vec::new();
    let mut secs = Vec::new();
    for (c, (samples, t)) in results.into_iter().enumerate() {
        manifest.chains.push(ChainRecord {
            chain: c,
            seed: cfg.seed.wrapping_add(1 + c as u64),
            retained: samples.sigma.len(),
            accept_rate: samples.factor_accept_rate,
            step_size: samples.step_size,
            files: BTreeMap::new(),
        });
        secs.push(t);
        chain_draws.extend(samples.sigma);
    }
    let model_mu0 = cfg.static_model.mu0.clone().unwrap_or_else(|| vec![0.0; d]);
    let psi = match &cfg.static_model.psi {
        None => DMatrix::identity(d, d),
        Some(rows) => DMatrix::from_fn(d, d, |i, j| rows[i][j]),
    };
    let (psi_post, nu_post) = iw_posterior_params(
        &data,
        &psi,
        cfg.static_model.nu.unwrap_or(d as f64),
        &model_mu0,
    )?;
    let oracle = InverseWishart::new(&psi_post, nu_post)?;
    let mut orng = chain_rng(cfg.seed, 1 + cfg.chains as u64);
    let direct: Vec<DMatrix<f64>> = (0..chain_draws.len())
        .map(|_| oracle.sample(&mut orng))
        .collect();
    manifest.files.insert(
        VALIDATION_CHAIN.into(),
        write_sigma_draws(&out.join(VALIDATION_CHAIN), &chain_draws)?,
    );
    manifest.files.insert(
        VALIDATION_DIRECT.into(),
        write_sigma_draws(&out.join(VALIDATION_DIRECT), &direct)?,
    );

    let mut table = CsvOut::create(&out.join(KS_TABLE), &["i", "j", "statistic", "p_value"])?;
    let mut worst: Option<KsRow> = None;
    for i in 0..d {
        for j in 0..=i {
            let a: Vec<f64> = chain_draws.iter().map(|s| s[(i, j)]).collect();
            let b: Vec<f64> = direct.iter().map(|s| s[(i, j)]).collect();
            let (statistic, p_value) = ks_two_sample(&a, &b);
            table.row([i.to_string(), j.to_string(), num(statistic), num(p_value)])?;
            if worst.as_ref().is_none_or(|w| statistic > w.statistic) {
                worst = Some(KsRow {
                    i,
                    j,
                    statistic,
                    p_value,
                });
            }
        }
    }
    manifest.files.insert(KS_TABLE.into(), table.finish()?);
    manifest.write(out)?;
    write_timing(out, secs, start)?;
    if let Some(w) = worst.filter(|w| w.statistic > cfg.static_model.ks_threshold) {
        return Err(CliError::Validation(format!(
            "KS statistic {:.4} for sigma_{}{} exceeds {}",
            w.statistic, w.i, w.j, cfg.static_model.ks_threshold
        )));
    }
    Ok(manifest)
}

/// Reads the KS table written by [`validate_iw`].
pub fn read_ks_table(dir: &Path) -> CliResult<Vec<KsRow>> {
    let f = CsvIn::open(&dir.join(KS_TABLE), &["i", "j", "statistic", "p_value"])?;
    (0..f.len())
        .map(|r| {
            Ok(KsRow {
                i: f.usize(r, "i")?,
                j: f.usize(r, "j")?,
                statistic: f.f64(r, "statistic")?,
                p_value: f.f64(r, "p_value")?,
            })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Dynamic model

fn time_grid(cfg: &ExperimentConfig, data: &TrialTensor) -> CliResult<TimeGrid> {
    Ok(if cfg.dynamic.rescale_time {
        TimeGrid::rescaled(data.times())?
    } else {
        TimeGrid::new(data.times().to_vec())?
    })
}

/// Fails when some full window of post-burn-in acceptance probabilities
/// averages below 1%.
fn check_dynamic_acceptance(
    s: &DynamicSamples,
    burnin: usize,
    window: usize,
    chain: usize,
) -> CliResult<()> {
    let post = s.accept_prob.get(burnin..).unwrap_or(&[]);
    if window == 0 {
        return Ok(());
    }
    for (k, w) in post.chunks_exact(window).enumerate() {
        let rate = w.iter().sum::<f64>() / window as f64;
        if rate < 0.01 {
            return Err(CliError::ChainDiverged(format!(
                "chain {chain}: acceptance {rate:.4} over sweeps {}..{}",
                burnin + k * window,
                burnin + (k + 1) * window
            )));
        }
    }
    Ok(())
}

fn write_dynamic_chain(
    dir: &Path,
    prefix: &str,
    s: &DynamicSamples,
    layout: &BandLayout,
) -> CliResult<BTreeMap<String, usize>> {
    create_dir(dir)?;
    let mut files = BTreeMap::new();
    let n = s.n_times();
    for (name, draws, log) in [(CHAIN_MEAN, &s.mean, false), (CHAIN_LOG_SD, &s.sd, true)] {
        let mut f = CsvOut::create(
            &dir.join(name),
            &["draw", "time_index", "time", "channel", "value"],
        )?;
        for (k, m) in draws.iter().enumerate() {
            for t in 0..n {
                for i in 0..s.dim {
                    let v = if log { m[(t, i)].ln() } else { m[(t, i)] };
                    f.row([
                        k.to_string(),
                        t.to_string(),
                        num(s.times[t]),
                        i.to_string(),
                        num(v),
                    ])?;
                }
            }
        }
        files.insert(format!("{prefix}/{name}"), f.finish()?);
    }
    let per_time = layout.per_time();
    let mut chol = CsvOut::create(
        &dir.join(CHAIN_CHOL),
        &["draw", "time_index", "time", "row", "col", "value"],
    )?;
    for (k, coords) in s.factor_coords.iter().enumerate() {
        for t in 0..n {
            let rows = &coords[t * per_time..(t + 1) * per_time];
            for i in 1..s.dim {
                for j in layout.lo(i)..=i {
                    chol.row([
                        k.to_string(),
                        t.to_string(),
                        num(s.times[t]),
                        i.to_string(),
                        j.to_string(),
                        num(layout.entry(rows, i, j)),
                    ])?;
                }
            }
        }
    }
    files.insert(format!("{prefix}/{CHAIN_CHOL}"), chol.finish()?);
    let mut hyper = CsvOut::create(
        &dir.join(CHAIN_HYPER),
        &[
            "draw",
            "gamma_mean",
            "gamma_log_sd",
            "gamma_chol",
            "eta_mean",
            "eta_log_sd",
            "eta_chol",
        ],
    )?;
    for (k, (g, e)) in s.gamma.iter().zip(&s.eta).enumerate() {
        hyper.row(
            std::iter::once(k.to_string())
                .chain(g.iter().chain(e).map(|v| num(*v)))
                .collect::<Vec<_>>(),
        )?;
    }
    files.insert(format!("{prefix}/{CHAIN_HYPER}"), hyper.finish()?);
    let mut trace = CsvOut::create(
        &dir.join(CHAIN_TRACE),
        &["sweep", "step_size", "accept_prob"],
    )?;
    for (k, (h, a)) in s.step_size.iter().zip(&s.accept_prob).enumerate() {
        trace.row([k.to_string(), num(*h), num(*a)])?;
    }
    files.insert(format!("{prefix}/{CHAIN_TRACE}"), trace.finish()?);
    Ok(files)
}

/// Rebuilds the draws of one chain from its archive files.
fn read_dynamic_chain(
    dir: &Path,
    draws: usize,
    times: &[f64],
    layout: &BandLayout,
) -> CliResult<DynamicSamples> {
    let (n, d) = (times.len(), layout.dim());
    let grid = |name: &str| -> CliResult<Vec<DMatrix<f64>>> {
        let path = dir.join(name);
        let f = CsvIn::open(&path, &["draw", "time_index", "channel", "value"])?;
        if f.len() != draws * n * d {
            return Err(CliError::RaggedData(format!(
                "{}: expected {} rows, found {}",
                path.display(),
                draws * n * d,
                f.len()
            )));
        }
        let mut out = vec![DMatrix::zeros(n, d); draws];
        for r in 0..f.len() {
            let (k, t, i) = (
                f.usize(r, "draw")?,
                f.usize(r, "time_index")?,
                f.usize(r, "channel")?,
            );
            if k >= draws || t >= n || i >= d {
                return Err(CliError::RaggedData(format!(
                    "{}: entry ({k}, {t}, {i}) is out of range",
                    path.display()
                )));
            }
            out[k][(t, i)] = f.f64(r, "value")?;
        }
        Ok(out)
    };
    let mean = grid(CHAIN_MEAN)?;
    let sd: Vec<DMatrix<f64>> = grid(CHAIN_LOG_SD)?
        .into_iter()
        .map(|m| m.map(f64::exp))
        .collect();
    let per_time = layout.per_time();
    let path = dir.join(CHAIN_CHOL);
    let f = CsvIn::open(&path, &["draw", "time_index", "row", "col", "value"])?;
    if f.len() != draws * n * per_time {
        return Err(CliError::RaggedData(format!(
            "{}: expected {} rows, found {}",
            path.display(),
            draws * n * per_time,
            f.len()
        )));
    }
    let mut coords = vec![vec![0.0; n * per_time]; draws];
    for r in 0..f.len() {
        let (k, t, i, j) = (
            f.usize(r, "draw")?,
            f.usize(r, "time_index")?,
            f.usize(r, "row")?,
            f.usize(r, "col")?,
        );
        if k >= draws || t >= n || i == 0 || i >= d || j < layout.lo(i) || j > i {
            return Err(CliError::RaggedData(format!(
                "{}: entry ({k}, {t}, {i}, {j}) is out of range",
                path.display()
            )));
        }
        coords[k][t * per_time + layout.row_range(i).start + j - layout.lo(i)] =
            f.f64(r, "value")?;
    }
    let pairs = layout.pairs();
    let corr = coords
        .iter()
        .map(|c| {
            DMatrix::from_fn(n, pairs.len(), |t, p| {
                let (i, j) = pairs[p];
                layout.correlation(&c[t * per_time..(t + 1) * per_time], i, j)
            })
        })
        .collect();
    Ok(DynamicSamples {
        times: times.to_vec(),
        dim: d,
        band: layout.band(),
        pairs,
        mean,
        sd,
        corr,
        factor_coords: coords,
        ..DynamicSamples::default()
    })
}

fn pool(chains: Vec<DynamicSamples>) -> DynamicSamples {
    let mut it = chains.into_iter();
    let mut out = it.next().unwrap_or_default();
    for s in it {
        out.mean.extend(s.mean);
        out.sd.extend(s.sd);
        out.corr.extend(s.corr);
        out.factor_coords.extend(s.factor_coords);
        out.gamma.extend(s.gamma);
        out.eta.extend(s.eta);
    }
    out
}

#[derive(Serialize)]
struct TruthReport {
    mean_coverage: f64,
    sd_coverage: f64,
    corr_coverage: f64,
    cov_coverage: f64,
    mean_mise: f64,
    cov_mise: f64,
    corr_norm_error: Vec<f64>,
}

/// Writes one summary CSV per quantity; every process gets one row per
/// time point.
fn write_dynamic_summary(out: &Path, s: &PosteriorSummary) -> CliResult<BTreeMap<String, usize>> {
    let mut rows = BTreeMap::new();
    let d = s.dim;
    let channels: Vec<(usize, usize)> = (0..d).map(|i| (i, i)).collect();
    let blocks: [(&str, &Band, &[(usize, usize)], bool); 4] = [
        (SUMMARY_MEAN, &s.mean, &channels, true),
        (SUMMARY_SD, &s.sd, &channels, true),
        (SUMMARY_CORR, &s.corr, &s.pairs, false),
        (SUMMARY_COV, &s.cov, &s.cov_entries, false),
    ];
    for (name, band, keys, per_channel) in blocks {
        let header: &[&str] = if per_channel {
            &["time_index", "time", "channel", "mean", "lower", "upper"]
        } else {
            &["time_index", "time", "i", "j", "mean", "lower", "upper"]
        };
        let mut f = CsvOut::create(&out.join(name), header)?;
        for (k, &(i, j)) in keys.iter().enumerate() {
            for (t, time) in s.times.iter().enumerate() {
                let mut row = vec![t.to_string(), num(*time), i.to_string()];
                if !per_channel {
                    row.push(j.to_string());
                }
                row.extend([
                    num(band.mean[(t, k)]),
                    num(band.lower[(t, k)]),
                    num(band.upper[(t, k)]),
                ]);
                f.row(row)?;
            }
        }
        rows.insert(name.to_string(), f.finish()?);
    }
    if let Some(c) = &s.truth {
        write_json(
            &out.join(TRUTH_COMPARISON),
            &TruthReport {
                mean_coverage: c.mean_coverage,
                sd_coverage: c.sd_coverage,
                corr_coverage: c.corr_coverage,
                cov_coverage: c.cov_coverage,
                mean_mise: c.mean_mise,
                cov_mise: c.cov_mise,
                corr_norm_error: c.corr_norm_error.clone(),
            },
        )?;
    }
    Ok(rows)
}

/// Fits the dynamic model and writes per-chain draws plus pooled
/// summaries. With `truth_dir` (a `gen-periodic` output) the summaries
/// include coverage and error against the truth.
pub fn fit_dynamic(
    cfg: &ExperimentConfig,
    data_path: &Path,
    out: &Path,
    truth_dir: Option<&Path>,
) -> CliResult<Manifest> {
    let start = Instant::now();
    let data = read_tensor(data_path)?;
    if let Some(dir) = truth_dir {
        read_truth(dir)?;
    }
    let grid = time_grid(cfg, &data)?;
    let model = DynamicCorrModel::new(data.clone(), grid, cfg.dynamic_options()?)?;
    let chain_cfg = cfg.dynamic_chain()?;
    let layout = model.layout().clone();
    create_dir(out)?;
    let results = run_chains(cfg.chains, |c| {
        let state = match cfg.dynamic.init {
            InitKind::Prior => model.initial_state()?,
            InitKind::Data => model.data_initial_state()?,
        };
        let t0 = Instant::now();
        let (s, _) = run_dynamic_from(
            &model,
            state,
            &chain_cfg,
            &mut chain_rng(cfg.seed, c as u64),
        )?;
        let secs = t0.elapsed().as_secs_f64();
        check_dynamic_acceptance(&s, cfg.burnin, cfg.divergence_window, c)?;
        let prefix = chain_dir(c);
        let files = write_dynamic_chain(&out.join(&prefix), &prefix, &s, &layout)?;
        let record = ChainRecord {
            chain: c,
            seed: cfg.seed.wrapping_add(c as u64),
            retained: s.len(),
            accept_rate: s.accept_rate,
            step_size: s.step_size.last().copied().unwrap_or(cfg.step_size),
            files,
        };
        Ok((record, secs))
    })?;
    let mut manifest = Manifest::new(
        "fit-dynamic",
        ArchiveKind::Dynamic,
        cfg,
        shape_of(&data, layout.band()),
    );
    let mut secs = Vec::new();
    for (record, t) in results {
        manifest.chains.push(record);
        secs.push(t);
    }
    finish_archive(manifest, out, truth_dir, secs, start)
}

/// Writes the manifest, then summarizes from the files just written so
/// that `summarize` on the archive reproduces the same tables.
fn finish_archive(
    mut manifest: Manifest,
    out: &Path,
    truth_dir: Option<&Path>,
    secs: Vec<f64>,
    start: Instant,
) -> CliResult<Manifest> {
    manifest.write(out)?;
    manifest.files = summarize(out, None, truth_dir)?;
    manifest.write(out)?;
    write_timing(out, secs, start)?;
    Ok(manifest)
}

// ---------------------------------------------------------------------------
// summarize

/// Recomputes the summaries of a `fit-static` or `fit-dynamic` archive
/// from its sample files, writing them to `out` (the archive itself when
/// `None`). Returns the summary row counts.
pub fn summarize(
    archive: &Path,
    out: Option<&Path>,
    truth_dir: Option<&Path>,
) -> CliResult<BTreeMap<String, usize>> {
    let manifest = Manifest::read(archive)?;
    let out = out.unwrap_or(archive);
    create_dir(out)?;
    for record in &manifest.chains {
        for (file, rows) in &record.files {
            let found = count_rows(&archive.join(file))?;
            if found != *rows {
                return Err(CliError::RaggedData(format!(
                    "{file}: manifest lists {rows} rows, file has {found}"
                )));
            }
        }
    }
    match manifest.kind {
        ArchiveKind::Static => {
            let d = manifest.shape.dim;
            let mut pooled = Vec::new();
            for r in &manifest.chains {
                pooled.extend(read_sigma_draws(
                    &archive.join(chain_dir(r.chain)).join(CHAIN_SIGMA),
                    r.retained,
                    d,
                )?);
            }
            write_static_summary(out, &pooled)
        }
        ArchiveKind::Dynamic => {
            let truth = truth_dir.map(read_truth).transpose()?;
            let layout = BandLayout::new(manifest.shape.dim, manifest.shape.band)?;
            let times = read_times(&archive.join(chain_dir(0)).join(CHAIN_MEAN))?;
            let chains = manifest
                .chains
                .iter()
                .map(|r| {
                    read_dynamic_chain(
                        &archive.join(chain_dir(r.chain)),
                        r.retained,
                        &times,
                        &layout,
                    )
                })
                .collect::<CliResult<Vec<_>>>()?;
            let summary = summarize_posterior(&pool(chains), truth.as_ref())?;
            write_dynamic_summary(out, &summary)
        }
        kind => Err(CliError::InvalidConfig(format!(
            "{} holds {kind:?} output, not a fitted archive",
            archive.display()
        ))),
    }
}

fn read_times(path: &Path) -> CliResult<Vec<f64>> {
    let f = CsvIn::open(path, &["time_index", "time"])?;
    let mut times: BTreeMap<usize, f64> = BTreeMap::new();
    for r in 0..f.len() {
        times.insert(f.usize(r, "time_index")?, f.f64(r, "time")?);
    }
    Ok(times.into_values().collect())
}
