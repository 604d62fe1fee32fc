//! `gamlink fit`: the full pipeline on a CSV dataset — first-stage series
//! fit, second-stage kernel refinement on a grid, plug-in bias/variance and
//! pointwise confidence bands, written as per-component CSV files plus a
//! JSON summary.

use std::path::PathBuf;

use clap::Args;
use gamlink::asymptotics::{
    confidence_interval, estimate_beta1, estimate_d0_d1_d2, estimate_v1,
    estimate_v1_optimal_weight, CiMode, ConditionalVariance, DerivativeEstimator,
};
use gamlink::bandwidth::{minimize_pls, plugin_ch1, PlsConfig};
use gamlink::basis::BasisFamily;
use gamlink::data::{load_csv, CsvSchema};
use gamlink::first_stage::{fit_first_stage, q_hat_diagnostic, FirstStageConfig, FirstStageFit};
use gamlink::second_stage::{
    estimate_component_weighted, variance_min_weight, SecondStageConfig, SmoothContext,
};
use gamlink::{Dataset, Kernel, Link, ModelBasis, Smoother};

use crate::report::{
    expand_per_coordinate, fmt, fmt_opt, parse_f64_list, parse_usize_list, uniform_grid,
    write_csv, write_json,
};
use crate::CliError;

#[derive(Args, Debug)]
pub struct FitArgs {
    /// Input CSV file (first row is the header).
    #[arg(long)]
    pub input: Option<PathBuf>,

    /// Name of the response column.
    #[arg(long)]
    pub response: Option<String>,

    /// Comma-separated covariate column names.
    #[arg(long)]
    pub covariates: Option<String>,

    /// Link function: logit | identity.
    #[arg(long)]
    pub link: Option<String>,

    /// Series length, scalar or one value per covariate.
    #[arg(long)]
    pub kappa: Option<String>,

    /// Basis family: bspline | legendre.
    #[arg(long)]
    pub basis: Option<String>,

    /// Fixed per-coordinate bandwidths on the cube scale.
    #[arg(long)]
    pub h: Option<String>,

    /// Fixed per-coordinate bandwidth constants; h_j = C_hj n^{-1/5}.
    #[arg(long = "c-h")]
    pub c_h: Option<String>,

    /// Select bandwidth constants by the plug-in rule.
    #[arg(long)]
    pub plugin: bool,

    /// Select bandwidth constants by penalized least squares.
    #[arg(long)]
    pub pls: bool,

    /// Smoother: ll | lc.
    #[arg(long)]
    pub smoother: Option<String>,

    /// Weight mode: none | variance-min.
    #[arg(long)]
    pub weight: Option<String>,

    /// Points in each component's evaluation grid.
    #[arg(long)]
    pub grid_size: Option<usize>,

    /// Confidence level is 1 - alpha.
    #[arg(long)]
    pub alpha: Option<f64>,

    /// Interval mode: undersmoothed | bias-corrected.
    #[arg(long)]
    pub ci: Option<String>,

    /// Bandwidth exponent gamma for undersmoothed intervals.
    #[arg(long)]
    pub gamma: Option<f64>,

    /// Seed recorded in the effective config (fitting is deterministic).
    #[arg(long)]
    pub seed: Option<u64>,

    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,

    /// JSON config file; command-line flags override its keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

/// Config-file counterpart of the flags (all optional).
#[derive(Debug, Default, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FileConfig {
    input: Option<PathBuf>,
    response: Option<String>,
    covariates: Option<String>,
    link: Option<String>,
    kappa: Option<String>,
    basis: Option<String>,
    h: Option<String>,
    c_h: Option<String>,
    plugin: Option<bool>,
    pls: Option<bool>,
    smoother: Option<String>,
    weight: Option<String>,
    grid_size: Option<usize>,
    alpha: Option<f64>,
    ci: Option<String>,
    gamma: Option<f64>,
    seed: Option<u64>,
}

pub fn load_file_config<T: serde::de::DeserializeOwned + Default>(
    path: Option<&PathBuf>,
) -> Result<T, CliError> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let body = std::fs::read_to_string(p)
                .map_err(|e| CliError::Data(format!("cannot read {}: {e}", p.display())))?;
            serde_json::from_str(&body)
                .map_err(|e| CliError::Usage(format!("bad config {}: {e}", p.display())))
        }
    }
}

/// How the bandwidths were chosen; mirrors the mutually exclusive flags.
#[derive(Debug, Clone, serde::Serialize)]
#[serde(rename_all = "kebab-case", tag = "method")]
enum BandwidthSpec {
    Fixed { h: Vec<f64> },
    FixedConstant { c_h: Vec<f64> },
    Plugin,
    Pls,
}

/// The effective merged configuration, echoed into the output directory.
#[derive(Debug, serde::Serialize)]
struct EffectiveConfig {
    subcommand: &'static str,
    input: PathBuf,
    response: String,
    covariates: Vec<String>,
    link: String,
    kappa: Vec<usize>,
    basis: String,
    bandwidth: BandwidthSpec,
    smoother: Smoother,
    weight: String,
    grid_size: usize,
    alpha: f64,
    ci: CiMode,
    seed: u64,
}

pub fn parse_link(name: &str) -> Result<Link, CliError> {
    Link::by_name(name)
        .ok_or_else(|| CliError::Usage(format!("unknown link '{name}' (expected logit or identity)")))
}

pub fn parse_family(name: &str) -> Result<BasisFamily, CliError> {
    name.parse::<BasisFamily>().map_err(CliError::Usage)
}

pub fn parse_smoother(name: &str) -> Result<Smoother, CliError> {
    name.parse::<Smoother>().map_err(CliError::Usage)
}

pub fn run(args: &FitArgs) -> Result<(), CliError> {
    let file: FileConfig = load_file_config(args.config.as_ref())?;

    let input = args
        .input
        .clone()
        .or(file.input)
        .ok_or_else(|| CliError::Usage("--input is required".into()))?;
    let response = args
        .response
        .clone()
        .or(file.response)
        .ok_or_else(|| CliError::Usage("--response is required".into()))?;
    let covariates_raw = args
        .covariates
        .clone()
        .or(file.covariates)
        .ok_or_else(|| CliError::Usage("--covariates is required".into()))?;
    let covariates: Vec<String> = covariates_raw
        .split(',')
        .map(|s| s.trim().to_string())
        .collect();
    let link_name = args.link.clone().or(file.link).unwrap_or_else(|| "logit".into());
    let link = parse_link(&link_name)?;
    let family_name = args
        .basis
        .clone()
        .or(file.basis)
        .unwrap_or_else(|| "bspline".into());
    let family = parse_family(&family_name)?;
    let smoother_name = args
        .smoother
        .clone()
        .or(file.smoother)
        .unwrap_or_else(|| "ll".into());
    let smoother = parse_smoother(&smoother_name)?;
    let weight_mode = args
        .weight
        .clone()
        .or(file.weight)
        .unwrap_or_else(|| "none".into());
    if weight_mode != "none" && weight_mode != "variance-min" {
        return Err(CliError::Usage(format!(
            "unknown weight mode '{weight_mode}' (expected none or variance-min)"
        )));
    }
    let grid_size = args.grid_size.or(file.grid_size).unwrap_or(201).max(2);
    let alpha = args.alpha.or(file.alpha).unwrap_or(0.05);
    let gamma = args.gamma.or(file.gamma).unwrap_or(0.3);
    let ci_name = args
        .ci
        .clone()
        .or(file.ci)
        .unwrap_or_else(|| "undersmoothed".into());
    let ci_mode = match ci_name.as_str() {
        "undersmoothed" => CiMode::Undersmoothed { gamma },
        "bias-corrected" => CiMode::BiasCorrected,
        other => {
            return Err(CliError::Usage(format!(
                "unknown ci mode '{other}' (expected undersmoothed or bias-corrected)"
            )))
        }
    };
    let seed = args.seed.or(file.seed).unwrap_or(0);

    let h_flag = args.h.clone().or(file.h);
    let c_h_flag = args.c_h.clone().or(file.c_h);
    let plugin = args.plugin || file.plugin.unwrap_or(false);
    let pls = args.pls || file.pls.unwrap_or(false);
    let n_specs =
        usize::from(h_flag.is_some()) + usize::from(c_h_flag.is_some()) + usize::from(plugin)
            + usize::from(pls);
    if n_specs != 1 {
        return Err(CliError::Usage(
            "exactly one of --h, --c-h, --plugin, --pls must be given".into(),
        ));
    }

    // Load and fit.
    let schema = CsvSchema {
        response: response.clone(),
        covariates: covariates.clone(),
    };
    let raw = load_csv(&input, &schema)?;
    let data = Dataset::from_raw(&raw)?;
    let d = data.d();
    let n = data.n();
    let kappa_list = parse_usize_list(
        args.kappa.clone().or(file.kappa).unwrap_or_else(|| "4".into()).as_str(),
        "--kappa",
    )?;
    let kappas = expand_per_coordinate(kappa_list, d, "--kappa")?;
    let basis = ModelBasis::new(family, &kappas, 64)?;
    let fit = fit_first_stage(&data, &basis, &link, &FirstStageConfig::default())?;
    let (_q, q_min_eig) = q_hat_diagnostic(&fit, &data, &basis, &link);
    if q_min_eig < 1e-8 {
        eprintln!("warning: Q-hat minimum eigenvalue {q_min_eig:e} is below 1e-8; the series fit may be ill-conditioned");
    }

    // Resolve bandwidths.
    let rate = (n as f64).powf(-0.2);
    let kernel = Kernel::quartic();
    let mut pls_trace = None;
    let (h, c_h, bandwidth_spec) = if let Some(list) = h_flag {
        let h = expand_per_coordinate(parse_f64_list(&list, "--h")?, d, "--h")?;
        let c_h: Vec<f64> = h.iter().map(|v| v / rate).collect();
        (h, c_h, BandwidthSpec::Fixed { h: Vec::new() })
    } else if let Some(list) = c_h_flag {
        let c_h = expand_per_coordinate(parse_f64_list(&list, "--c-h")?, d, "--c-h")?;
        let h: Vec<f64> = c_h.iter().map(|v| v * rate).collect();
        (h, c_h, BandwidthSpec::FixedConstant { c_h: Vec::new() })
    } else if pls {
        let selection = minimize_pls(
            &PlsConfig::default(),
            &data,
            &basis,
            &link,
            &fit,
            &kernel,
            smoother,
        )?;
        let h: Vec<f64> = selection.c_h.iter().map(|v| v * rate).collect();
        let c_h = selection.c_h.clone();
        pls_trace = Some(selection);
        (h, c_h, BandwidthSpec::Pls)
    } else {
        let c_h: Vec<f64> = (0..d)
            .map(|j| plugin_for_coordinate(&data, &basis, &link, &fit, &kernel, smoother, j))
            .collect::<Result<_, _>>()?;
        let h: Vec<f64> = c_h.iter().map(|v| v * rate).collect();
        (h, c_h, BandwidthSpec::Plugin)
    };
    let bandwidth_spec = match bandwidth_spec {
        BandwidthSpec::Fixed { .. } => BandwidthSpec::Fixed { h: h.clone() },
        BandwidthSpec::FixedConstant { .. } => BandwidthSpec::FixedConstant { c_h: c_h.clone() },
        other => other,
    };

    if let Some(selection) = &pls_trace {
        let headers: Vec<String> = (1..=d).map(|j| format!("c_h_{j}")).collect();
        let mut header: Vec<&str> = headers.iter().map(String::as_str).collect();
        header.push("objective");
        write_csv(
            &args.out.join("pls_trace.csv"),
            &header,
            selection.trace.iter().map(|e| {
                let mut row: Vec<String> = e.c_h.iter().map(|&v| fmt(v)).collect();
                row.push(fmt(e.objective));
                row
            }),
        )?;
    }

    // Conditional variance at inflated bandwidths, shared across components.
    let var_bandwidths: Vec<f64> = h.iter().map(|v| (1.5 * v).min(2.0)).collect();
    let cond_var = ConditionalVariance::new(&data, &fit, &basis, &link, &var_bandwidths, Kernel::quartic())?;

    let grid = uniform_grid(-1.0, 1.0, grid_size);
    let mut component_files = Vec::new();
    for j in 0..d {
        let cfg = SecondStageConfig::new(j, h[j], smoother)?;
        let ctx = SmoothContext::from_fit(&fit, &data, &basis, &link, &kernel, j, h[j])?;
        let var_at_point = |x1: f64| {
            let cond_var = &cond_var;
            let data = &data;
            move |i: usize| {
                let mut row = data.row(i).to_vec();
                row[j] = x1;
                cond_var.eval(&row)
            }
        };

        let weighted = weight_mode == "variance-min";
        let weights_at = |x1: f64| -> Vec<f64> {
            let m1 = fit.eval_mtilde_j(&basis, j, x1);
            variance_min_weight(&ctx, x1, m1, &var_at_point(x1))
                .map(|(w, _, _)| w)
                .unwrap_or_else(|_| vec![1.0; n])
        };
        let estimate = estimate_component_weighted(
            &fit,
            &data,
            &basis,
            &link,
            &cfg,
            &grid,
            weighted.then_some(&weights_at as &dyn Fn(f64) -> Vec<f64>),
        )?;

        // First-stage component curve and its kernel-smoothed derivatives,
        // used by the plug-in bias.
        let dense = uniform_grid(-1.0, 1.0, 1024);
        let curve: Vec<f64> = dense.iter().map(|&v| fit.eval_mtilde_j(&basis, j, v)).collect();
        let deriv1 = DerivativeEstimator::new(&dense, &curve, 1, h[j], Kernel::quartic())?;
        let deriv2 = DerivativeEstimator::new(&dense, &curve, 2, h[j], Kernel::quartic())?;

        let m_tilde: Vec<f64> = grid.iter().map(|&v| fit.eval_mtilde_j(&basis, j, v)).collect();
        let mut beta_hat: Vec<Option<f64>> = vec![None; grid.len()];
        let mut v_hat: Vec<Option<f64>> = vec![None; grid.len()];
        for (gi, &x1) in grid.iter().enumerate() {
            if estimate.values[gi].is_none() {
                continue;
            }
            let var_at = var_at_point(x1);
            let ingredients = (|| -> Result<(f64, f64), gamlink::AsymptoticsError> {
                let (d0, _d1, d2) = estimate_d0_d1_d2(&ctx, x1, m_tilde[gi], &var_at)?;
                let b = estimate_beta1(
                    &ctx,
                    x1,
                    m_tilde[gi],
                    deriv1.eval(x1)?,
                    deriv2.eval(x1)?,
                    d0,
                    c_h[j],
                    smoother,
                )?;
                let v = if weighted {
                    estimate_v1_optimal_weight(&ctx, x1, m_tilde[gi], d2, c_h[j])?
                } else {
                    estimate_v1(&ctx, x1, m_tilde[gi], d0, &var_at, c_h[j])?
                };
                Ok((b, v))
            })();
            if let Ok((b, v)) = ingredients {
                beta_hat[gi] = Some(b);
                v_hat[gi] = Some(v.max(0.0));
            }
        }

        // Intervals over the points where every ingredient is available.
        let valid: Vec<usize> = (0..grid.len())
            .filter(|&gi| estimate.values[gi].is_some() && v_hat[gi].is_some())
            .collect();
        let mut lower: Vec<Option<f64>> = vec![None; grid.len()];
        let mut upper: Vec<Option<f64>> = vec![None; grid.len()];
        if !valid.is_empty() {
            let sub_grid: Vec<f64> = valid.iter().map(|&gi| grid[gi]).collect();
            let sub_est: Vec<f64> = valid.iter().map(|&gi| estimate.values[gi].unwrap()).collect();
            let sub_beta: Vec<f64> = valid.iter().map(|&gi| beta_hat[gi].unwrap_or(0.0)).collect();
            let sub_v: Vec<f64> = valid.iter().map(|&gi| v_hat[gi].unwrap()).collect();
            let summary = confidence_interval(
                &sub_grid, &sub_est, &sub_beta, &sub_v, n, alpha, ci_mode, c_h[j],
            )?;
            for (pos, &gi) in valid.iter().enumerate() {
                lower[gi] = Some(summary.lower[pos]);
                upper[gi] = Some(summary.upper[pos]);
            }
        }

        let rescale = data.rescale()[j];
        let file_name = format!("component_{}.csv", j + 1);
        write_csv(
            &args.out.join(&file_name),
            &[
                "x_cube", "x_original", "m_tilde", "m_hat", "boundary", "beta_hat", "v_hat",
                "lower", "upper",
            ],
            grid.iter().enumerate().map(|(gi, &x)| {
                vec![
                    fmt(x),
                    fmt(rescale.to_original(x)),
                    fmt(m_tilde[gi]),
                    fmt_opt(estimate.values[gi]),
                    estimate.boundary[gi].to_string(),
                    fmt_opt(beta_hat[gi]),
                    fmt_opt(v_hat[gi]),
                    fmt_opt(lower[gi]),
                    fmt_opt(upper[gi]),
                ]
            }),
        )?;
        component_files.push(file_name);
    }

    let summary = serde_json::json!({
        "n": n,
        "d": d,
        "link": link.name(),
        "kappa": kappas,
        "mu_tilde": fit.mu_tilde(),
        "theta": fit.theta,
        "objective": fit.objective,
        "iterations": fit.iterations,
        "converged": fit.converged,
        "q_min_eigenvalue": q_min_eig,
        "q_warning": q_min_eig < 1e-8,
        "h": h,
        "c_h": c_h,
        "rescale": data.rescale(),
        "component_files": component_files,
    });
    write_json(&args.out.join("summary.json"), &summary)?;

    let effective = EffectiveConfig {
        subcommand: "fit",
        input,
        response,
        covariates,
        link: link_name,
        kappa: kappas,
        basis: family_name,
        bandwidth: bandwidth_spec,
        smoother,
        weight: weight_mode,
        grid_size,
        alpha,
        ci: ci_mode,
        seed,
    };
    write_json(&args.out.join("config.json"), &effective)
}

/// Plug-in constant for one coordinate: pilot-bandwidth ingredients on an
/// interior grid, then the closed-form optimum of the weighted asymptotic
/// mean squared error.
pub fn plugin_for_coordinate(
    data: &Dataset,
    basis: &ModelBasis,
    link: &Link,
    fit: &FirstStageFit,
    kernel: &Kernel,
    smoother: Smoother,
    target: usize,
) -> Result<f64, CliError> {
    let n = data.n();
    let d = data.d();
    let pilot_h = (n as f64).powf(-0.2).min(2.0);
    let ctx = SmoothContext::from_fit(fit, data, basis, link, kernel, target, pilot_h)?;
    let var_bandwidths = vec![(1.5 * pilot_h).min(2.0); d];
    let cond_var =
        ConditionalVariance::new(data, fit, basis, link, &var_bandwidths, Kernel::quartic())?;

    let dense = uniform_grid(-1.0, 1.0, 1024);
    let curve: Vec<f64> = dense
        .iter()
        .map(|&v| fit.eval_mtilde_j(basis, target, v))
        .collect();
    let deriv1 = DerivativeEstimator::new(&dense, &curve, 1, pilot_h.max(0.05), Kernel::quartic())?;
    let deriv2 = DerivativeEstimator::new(&dense, &curve, 2, pilot_h.max(0.05), Kernel::quartic())?;

    let interior = 1.0 - pilot_h;
    let eval_grid = uniform_grid(-interior.max(0.5), interior.max(0.5), 101);
    let mut grid = Vec::new();
    let mut beta = Vec::new();
    let mut v = Vec::new();
    for &x1 in &eval_grid {
        let m1 = fit.eval_mtilde_j(basis, target, x1);
        let var_at = |i: usize| {
            let mut row = data.row(i).to_vec();
            row[target] = x1;
            cond_var.eval(&row)
        };
        let point = (|| -> Result<(f64, f64), gamlink::AsymptoticsError> {
            let (d0, _d1, _d2) = estimate_d0_d1_d2(&ctx, x1, m1, &var_at)?;
            let b = estimate_beta1(
                &ctx,
                x1,
                m1,
                deriv1.eval(x1)?,
                deriv2.eval(x1)?,
                d0,
                1.0,
                smoother,
            )?;
            let vv = estimate_v1(&ctx, x1, m1, d0, &var_at, 1.0)?;
            Ok((b, vv))
        })();
        if let Ok((b, vv)) = point {
            grid.push(x1);
            beta.push(b);
            v.push(vv.max(0.0));
        }
    }
    if grid.len() < 2 {
        return Err(CliError::Numerical(format!(
            "plug-in ingredients degenerate at every evaluation point for coordinate {}",
            target + 1
        )));
    }
    let weight = vec![1.0; grid.len()];
    plugin_ch1(&grid, &weight, &beta, &v).map_err(|e| match e {
        gamlink::BandwidthError::ZeroBiasIntegral => CliError::Numerical(format!(
            "{e}; the estimated component appears linear (zero second derivative), so the \
             plug-in rule has no interior optimum — supply a fixed bandwidth via --h or \
             --c-h, or use --pls"
        )),
        other => CliError::Numerical(other.to_string()),
    })
}
