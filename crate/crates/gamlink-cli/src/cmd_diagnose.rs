//! `gamlink diagnose`: first-stage health report for a CSV dataset —
//! convergence, objective, the minimum eigenvalue of the weighted design
//! Gram matrix, and the basis orthonormality defect per coordinate.

use std::path::PathBuf;

use clap::Args;
use gamlink::data::{load_csv, CsvSchema};
use gamlink::first_stage::{fit_first_stage, q_hat_diagnostic, FirstStageConfig};
use gamlink::{Dataset, ModelBasis};

use crate::cmd_fit::{load_file_config, parse_family, parse_link};
use crate::report::{expand_per_coordinate, parse_usize_list, write_json};
use crate::CliError;

#[derive(Args, Debug)]
pub struct DiagnoseArgs {
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
    link: Option<String>,
    kappa: Option<String>,
    basis: Option<String>,
}

pub fn run(args: &DiagnoseArgs) -> Result<(), CliError> {
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
    let covariates: Vec<String> = args
        .covariates
        .clone()
        .or(file.covariates)
        .ok_or_else(|| CliError::Usage("--covariates is required".into()))?
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

    let raw = load_csv(&input, &CsvSchema { response: response.clone(), covariates: covariates.clone() })?;
    let data = Dataset::from_raw(&raw)?;
    let d = data.d();
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
    let gram_defects: Vec<f64> = (0..d).map(|j| basis.coord(j).gram_defect()).collect();

    let diagnostics = serde_json::json!({
        "n": data.n(),
        "d": d,
        "link": link.name(),
        "kappa": kappas,
        "design_dimension": basis.dim(),
        "mu_tilde": fit.mu_tilde(),
        "objective": fit.objective,
        "iterations": fit.iterations,
        "converged": fit.converged,
        "q_min_eigenvalue": q_min_eig,
        "q_warning": q_min_eig < 1e-8,
        "basis_gram_defects": gram_defects,
        "rescale": data.rescale(),
    });
    write_json(&args.out.join("diagnostics.json"), &diagnostics)?;

    let effective = serde_json::json!({
        "subcommand": "diagnose",
        "input": input,
        "response": response,
        "covariates": covariates,
        "link": link_name,
        "kappa": kappas,
        "basis": family_name,
    });
    write_json(&args.out.join("config.json"), &effective)
}
