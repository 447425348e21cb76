//! The four subcommand implementations. Reports go to stdout, progress and
//! warnings to stderr; callers surface errors as `error[<category>]:` lines.

use std::io::Write;
use std::path::{Path, PathBuf};

use evpower_core::data::{
    fit_normalize, load_csv, make_windows, split_70_30, write_csv, NormStats, SeriesFrame,
    WindowedDataset,
};
use evpower_core::eval::{
    coverage_test, mean_width, metrics_report, standardized_variance, EvalReport, Interval,
};
use evpower_core::lstm::HeadKind;
use evpower_core::synth::{generate_synthetic, SynthSpec};
use evpower_core::train::{predict_members, train_ensemble, EnsembleModel};
use evpower_core::uq::{quantile_outputs, summarize_quantile, summarize_t, t_outputs};
use evpower_core::Error;

use crate::archive::{load_model, save_model};
use crate::config::{load_config, Method, RunConfig};
use crate::error::{CliError, Result};

pub struct GenerateArgs {
    pub spec: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: u64,
    pub duration: Option<f64>,
}

pub struct GenerateOutcome {
    pub rows: usize,
}

/// `generate`: synthesize a drive cycle CSV (with `# meta:` header).
pub fn cmd_generate(args: &GenerateArgs) -> Result<GenerateOutcome> {
    let mut spec = match &args.spec {
        None => SynthSpec::default(),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(Error::Io)?;
            toml::from_str(&text)
                .map_err(|e| CliError::Core(Error::Config(format!("{}: {e}", p.display()))))?
        }
    };
    if let Some(d) = args.duration {
        spec.cycle.duration_s = d;
    }
    let frame = generate_synthetic(&spec, args.seed)?;
    write_csv(&frame, &args.out)?;
    println!("wrote {} rows to {}", frame.len(), args.out.display());
    Ok(GenerateOutcome { rows: frame.len() })
}

pub struct TrainArgs {
    pub config: Option<PathBuf>,
    pub data: PathBuf,
    pub model: PathBuf,
    pub method: Option<Method>,
    pub seed: Option<u64>,
}

pub struct TrainOutcome {
    pub config: RunConfig,
    pub train_rmse: f64,
    pub train_mae: f64,
}

fn load_windows(
    path: &Path,
    cfg: &RunConfig,
    stats: Option<&NormStats>,
    require_target: bool,
) -> Result<(SeriesFrame, WindowedDataset, NormStats)> {
    let target = if require_target || stats.is_none() {
        Some(cfg.data.target.as_str())
    } else {
        // predict-time data may omit the target column
        let probe = load_csv(path, &cfg.data.features, Some(&cfg.data.target));
        match probe {
            Ok(_) => Some(cfg.data.target.as_str()),
            Err(Error::Schema(_)) => None,
            Err(e) => return Err(e.into()),
        }
    };
    let frame = load_csv(path, &cfg.data.features, target)?;
    if frame.dropped_rows > 0 {
        eprintln!(
            "warning: dropped {} corrupt row(s) from {}",
            frame.dropped_rows,
            path.display()
        );
    }
    let (norm, stats, clamped) = fit_normalize(&frame, &cfg.data.features, stats)?;
    if clamped > 0 {
        eprintln!("warning: clamped {clamped} normalized value(s) to [-0.5, 1.5]");
    }
    let windows = make_windows(&norm, &cfg.data.features, cfg.network.window)?;
    Ok((frame, windows, stats))
}

/// `train`: fit the ensemble on the chronological 70% split of the data file
/// and write the model archive.
pub fn cmd_train(args: &TrainArgs) -> Result<TrainOutcome> {
    let mut cfg = load_config(args.config.as_deref())?;
    if let Some(m) = args.method {
        cfg.apply_method(m);
    }
    if let Some(s) = args.seed {
        cfg.train.seed = s;
    }
    cfg.validate()?;

    let frame = load_csv(&args.data, &cfg.data.features, Some(&cfg.data.target))?;
    if frame.dropped_rows > 0 {
        eprintln!(
            "warning: dropped {} corrupt row(s) from {}",
            frame.dropped_rows,
            args.data.display()
        );
    }
    let (train_frame, _test_frame) = split_70_30(&frame, cfg.network.window)?;
    let (train_norm, stats, _) = fit_normalize(&train_frame, &cfg.data.features, None)?;
    let train_ds = make_windows(&train_norm, &cfg.data.features, cfg.network.window)?;

    let model = train_ensemble(
        &train_ds,
        &stats,
        &cfg.network,
        &cfg.likelihood,
        &cfg.prior,
        &cfg.train,
    )?;
    save_model(&args.model, &model, &cfg)?;

    // final training-set point accuracy (denormalized)
    let (y, yhat) = point_predictions(&model, &train_ds, &stats)?;
    let m = metrics_report(&y, &yhat)?;
    println!(
        "trained {} member(s); train rmse = {:.4} kW, mae = {:.4} kW; model -> {}",
        model.members.len(),
        m.rmse,
        m.mae,
        args.model.display()
    );
    Ok(TrainOutcome {
        config: cfg,
        train_rmse: m.rmse,
        train_mae: m.mae,
    })
}

/// Per-window denormalized (truth, point prediction) pairs.
fn point_predictions(
    model: &EnsembleModel,
    ds: &WindowedDataset,
    stats: &NormStats,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let targets = ds.targets_required()?;
    let mut y = Vec::with_capacity(ds.len());
    let mut yhat = Vec::with_capacity(ds.len());
    for (w, t) in ds.inputs.iter().zip(targets) {
        let summary = summarize_window(model, w, 0.1)?;
        y.push(stats.denormalize_target(*t));
        yhat.push(summary.point);
    }
    Ok((y, yhat))
}

/// Uniform denormalized summary across head kinds.
pub struct WindowSummary {
    pub point: f64,
    pub lo: f64,
    pub hi: f64,
    pub au: f64,
    pub eu: f64,
    pub sigma_tot: f64,
}

/// Predict one normalized window and denormalize the summary to kW.
pub fn summarize_window(
    model: &EnsembleModel,
    window: &[f64],
    alpha: f64,
) -> Result<WindowSummary> {
    let outs = predict_members(model, window)?;
    let stats = &model.norm_stats;
    let scale = stats.target_scale();
    Ok(match model.network.head {
        HeadKind::StudentT => {
            let pairs: Vec<(f64, f64)> = t_outputs(&outs)?
                .iter()
                .map(|(m, s)| (stats.denormalize_target(*m), s * scale))
                .collect();
            let s = summarize_t(&pairs, model.likelihood.nu, alpha)?;
            WindowSummary {
                point: s.mu,
                lo: s.lo,
                hi: s.hi,
                au: s.au,
                eu: s.eu,
                sigma_tot: s.sigma_tot(),
            }
        }
        HeadKind::Quantile => {
            let triples: Vec<[f64; 3]> = quantile_outputs(&outs)?
                .iter()
                .map(|q| {
                    [
                        stats.denormalize_target(q[0]),
                        stats.denormalize_target(q[1]),
                        stats.denormalize_target(q[2]),
                    ]
                })
                .collect();
            let s = summarize_quantile(&triples)?;
            WindowSummary {
                point: s.median,
                lo: s.lo,
                hi: s.hi,
                au: s.au,
                eu: s.eu,
                sigma_tot: s.sigma_tot(),
            }
        }
    })
}

pub struct PredictArgs {
    pub model: PathBuf,
    pub data: PathBuf,
    pub out: PathBuf,
}

/// `predict`: one CSV row per window with the denormalized prediction,
/// interval, and uncertainty split.
pub fn cmd_predict(args: &PredictArgs) -> Result<usize> {
    let (model, cfg) = load_model(&args.model)?;
    let (frame, ds, _) = load_windows(&args.data, &cfg, Some(&model.norm_stats), false)?;
    let y_true: Option<Vec<f64>> = frame
        .target
        .as_ref()
        .map(|t| frame.column(t).map(|c| c.to_vec()))
        .transpose()?;

    let mut out = std::io::BufWriter::new(std::fs::File::create(&args.out).map_err(Error::Io)?);
    let header = if y_true.is_some() {
        "t_index,y_true,mu,lo,hi,au,eu"
    } else {
        "t_index,mu,lo,hi,au,eu"
    };
    writeln!(out, "{header}").map_err(Error::Io)?;
    for (i, w) in ds.inputs.iter().enumerate() {
        let s = summarize_window(&model, w, cfg.alpha)?;
        let t_index = ds.provenance[i].1;
        match &y_true {
            Some(ys) => writeln!(
                out,
                "{},{},{},{},{},{},{}",
                t_index,
                ys[t_index - frame.start_index],
                s.point,
                s.lo,
                s.hi,
                s.au,
                s.eu
            )
            .map_err(Error::Io)?,
            None => writeln!(
                out,
                "{},{},{},{},{},{}",
                t_index, s.point, s.lo, s.hi, s.au, s.eu
            )
            .map_err(Error::Io)?,
        }
    }
    out.flush().map_err(Error::Io)?;
    println!("wrote {} prediction rows to {}", ds.len(), args.out.display());
    Ok(ds.len())
}

pub struct EvaluateArgs {
    pub model: PathBuf,
    pub data: PathBuf,
    pub alpha: Option<f64>,
    pub json: bool,
}

/// `evaluate`: accuracy metrics plus the calibration report on a labeled
/// file. Reporting only: the exit status does not depend on the verdict.
pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<EvalReport> {
    let (model, cfg) = load_model(&args.model)?;
    let alpha = args.alpha.unwrap_or(cfg.alpha);
    if !(0.0 < alpha && alpha < 1.0) {
        return Err(CliError::Core(Error::Config(format!(
            "alpha must be in (0,1), got {alpha}"
        ))));
    }
    let (_, ds, _) = load_windows(&args.data, &cfg, Some(&model.norm_stats), true)?;
    let report = evaluate_dataset(&model, &ds, alpha)?;
    if args.json {
        println!("{}", report.to_json());
    } else {
        print!("{}", report.to_text());
    }
    Ok(report)
}

/// Shared evaluation path: metrics and calibration on a windowed dataset.
pub fn evaluate_dataset(
    model: &EnsembleModel,
    ds: &WindowedDataset,
    alpha: f64,
) -> Result<EvalReport> {
    let stats = &model.norm_stats;
    let targets = ds.targets_required()?;
    let n = ds.len();
    let mut y = Vec::with_capacity(n);
    let mut point = Vec::with_capacity(n);
    let mut intervals = Vec::with_capacity(n);
    let mut sigma = Vec::with_capacity(n);
    for (w, t) in ds.inputs.iter().zip(targets) {
        let s = summarize_window(model, w, alpha)?;
        y.push(stats.denormalize_target(*t));
        point.push(s.point);
        intervals.push(Interval { lo: s.lo, hi: s.hi });
        sigma.push(s.sigma_tot);
    }
    let metrics = metrics_report(&y, &point)?;
    let nominal = 1.0 - alpha;
    let coverage = coverage_test(&y, &intervals, nominal, 0.95)?;
    let width = mean_width(&intervals)?;
    let stvar = standardized_variance(&y, &point, &sigma)?;
    Ok(EvalReport::assemble(metrics, coverage, width, stvar, nominal))
}
