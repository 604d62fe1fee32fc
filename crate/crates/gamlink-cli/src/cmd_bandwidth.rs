//! `gamlink bandwidth`: bandwidth-constant selection on a CSV dataset or a
//! freshly drawn synthetic sample, by the plug-in rule or penalized least
//! squares. PLS writes its full search trace.

use std::path::PathBuf;

use clap::Args;
use gamlink::bandwidth::{minimize_pls, PlsConfig};
use gamlink::data::{load_csv, CsvSchema};
use gamlink::first_stage::{fit_first_stage, FirstStageConfig};
use gamlink::montecarlo::{generate_sample, Dgp};
use gamlink::{Dataset, Kernel, ModelBasis, Smoother};

use crate::cmd_fit::{load_file_config, parse_family, parse_link, parse_smoother, plugin_for_coordinate};
use crate::cmd_simulate::parse_dgp_kind;
use crate::report::{expand_per_coordinate, fmt, parse_usize_list, write_csv, write_json};
use crate::CliError;

#[derive(Args, Debug)]
pub struct BandwidthArgs {
    /// Input CSV file; mutually exclusive with --dgp.
    #[arg(long)]
    pub input: Option<PathBuf>,

    /// Name of the response column (with --input).
    #[arg(long)]
    pub response: Option<String>,

    /// Comma-separated covariate column names (with --input).
    #[arg(long)]
    pub covariates: Option<String>,

    /// Synthetic design to draw from: logit | identity-linear.
    #[arg(long)]
    pub dgp: Option<String>,

    /// Covariate dimension for --dgp (2 or 5).
    #[arg(long)]
    pub d: Option<usize>,

    /// Sample size for --dgp.
    #[arg(long)]
    pub n: Option<usize>,

    /// Seed for --dgp.
    #[arg(long)]
    pub seed: Option<u64>,

    /// Link function: logit | identity (CSV input only; --dgp fixes it).
    #[arg(long)]
    pub link: Option<String>,

    /// Series length, scalar or one value per covariate.
    #[arg(long)]
    pub kappa: Option<String>,

    /// Basis family: bspline | legendre.
    #[arg(long)]
    pub basis: Option<String>,

    /// Selection method: plugin | pls.
    #[arg(long)]
    pub method: Option<String>,

    /// Smoother: ll | lc.
    #[arg(long)]
    pub smoother: Option<String>,

    /// PLS search box lower edge.
    #[arg(long)]
    pub c_lo: Option<f64>,

    /// PLS search box upper edge.
    #[arg(long)]
    pub c_hi: Option<f64>,

    /// Log-spaced PLS candidates per coordinate.
    #[arg(long)]
    pub grid_points: Option<usize>,

    /// Skip the Nelder-Mead polish after the PLS grid search.
    #[arg(long)]
    pub no_polish: bool,

    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,

    /// JSON config file; command-line flags override its keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Default, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FileConfig {
    input: Option<PathBuf>,
    response: Option<String>,
    covariates: Option<String>,
    dgp: Option<String>,
    d: Option<usize>,
    n: Option<usize>,
    seed: Option<u64>,
    link: Option<String>,
    kappa: Option<String>,
    basis: Option<String>,
    method: Option<String>,
    smoother: Option<String>,
    c_lo: Option<f64>,
    c_hi: Option<f64>,
    grid_points: Option<usize>,
    no_polish: Option<bool>,
}

pub fn run(args: &BandwidthArgs) -> Result<(), CliError> {
    let file: FileConfig = load_file_config(args.config.as_ref())?;

    let input = args.input.clone().or(file.input);
    let dgp_name = args.dgp.clone().or(file.dgp);
    if input.is_some() == dgp_name.is_some() {
        return Err(CliError::Usage(
            "exactly one of --input and --dgp must be given".into(),
        ));
    }
    let seed = args.seed.or(file.seed).unwrap_or(0);

    // Assemble the sample and the link.
    let (data, link, link_name, source) = if let Some(path) = &input {
        let response = args
            .response
            .clone()
            .or(file.response)
            .ok_or_else(|| CliError::Usage("--response is required with --input".into()))?;
        let covariates: Vec<String> = args
            .covariates
            .clone()
            .or(file.covariates)
            .ok_or_else(|| CliError::Usage("--covariates is required with --input".into()))?
            .split(',')
            .map(|s| s.trim().to_string())
            .collect();
        let link_name = args.link.clone().or(file.link).unwrap_or_else(|| "logit".into());
        let link = parse_link(&link_name)?;
        let raw = load_csv(path, &CsvSchema { response, covariates })?;
        let data = Dataset::from_raw(&raw)?;
        (data, link, link_name, format!("{}", path.display()))
    } else {
        let name = dgp_name.clone().unwrap();
        let kind = parse_dgp_kind(&name)?;
        let d = args.d.or(file.d).unwrap_or(2);
        let dgp = Dgp::new(kind, d).map_err(|e| CliError::Usage(e.to_string()))?;
        let n = args.n.or(file.n).unwrap_or(500);
        let data = generate_sample(&dgp, n, seed);
        let link = dgp.link();
        let link_name = link.name().to_string();
        (data, link, link_name, format!("dgp:{name}"))
    };

    let d = data.d();
    let kappa_list = parse_usize_list(
        args.kappa.clone().or(file.kappa).unwrap_or_else(|| "4".into()).as_str(),
        "--kappa",
    )?;
    let kappas = expand_per_coordinate(kappa_list, d, "--kappa")?;
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
    let smoother: Smoother = parse_smoother(&smoother_name)?;
    let method = args.method.clone().or(file.method).unwrap_or_else(|| "pls".into());

    let basis = ModelBasis::new(family, &kappas, 64)?;
    let fit = fit_first_stage(&data, &basis, &link, &FirstStageConfig::default())?;
    let kernel = Kernel::quartic();

    let selection = match method.as_str() {
        "pls" => {
            let defaults = PlsConfig::default();
            let config = PlsConfig {
                c_lo: args.c_lo.or(file.c_lo).unwrap_or(defaults.c_lo),
                c_hi: args.c_hi.or(file.c_hi).unwrap_or(defaults.c_hi),
                grid_points: args.grid_points.or(file.grid_points).unwrap_or(defaults.grid_points),
                polish: !(args.no_polish || file.no_polish.unwrap_or(false)),
                ..defaults
            };
            let selection = minimize_pls(&config, &data, &basis, &link, &fit, &kernel, smoother)?;
            let headers: Vec<String> = (1..=d).map(|j| format!("c_h_{j}")).collect();
            let mut header: Vec<&str> = headers.iter().map(String::as_str).collect();
            header.push("objective");
            write_csv(
                &args.out.join("trace.csv"),
                &header,
                selection.trace.iter().map(|e| {
                    let mut row: Vec<String> = e.c_h.iter().map(|&v| fmt(v)).collect();
                    row.push(fmt(e.objective));
                    row
                }),
            )?;
            serde_json::json!({
                "method": "pls",
                "c_h": selection.c_h,
                "objective": selection.objective,
                "evaluations": selection.trace.len(),
            })
        }
        "plugin" => {
            let c_h: Vec<f64> = (0..d)
                .map(|j| plugin_for_coordinate(&data, &basis, &link, &fit, &kernel, smoother, j))
                .collect::<Result<_, _>>()?;
            serde_json::json!({ "method": "plugin", "c_h": c_h })
        }
        other => {
            return Err(CliError::Usage(format!(
                "unknown method '{other}' (expected plugin or pls)"
            )))
        }
    };
    write_json(&args.out.join("selection.json"), &selection)?;

    let effective = serde_json::json!({
        "subcommand": "bandwidth",
        "source": source,
        "link": link_name,
        "kappa": kappas,
        "basis": family_name,
        "method": method,
        "smoother": smoother,
        "seed": seed,
        "c_lo": args.c_lo.or(file.c_lo),
        "c_hi": args.c_hi.or(file.c_hi),
        "grid_points": args.grid_points.or(file.grid_points),
        "polish": !(args.no_polish || file.no_polish.unwrap_or(false)),
    });
    write_json(&args.out.join("config.json"), &effective)
}
