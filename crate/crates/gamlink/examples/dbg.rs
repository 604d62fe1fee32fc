use gamlink::asymptotics::{estimate_d0_d1_d2, estimate_v1, ConditionalVariance};
use gamlink::bandwidth::{minimize_pls, PlsConfig};
use gamlink::basis::{BasisFamily, ModelBasis};
use gamlink::first_stage::{fit_first_stage, FirstStageConfig};
use gamlink::kernel::Kernel;
use gamlink::link::Link;
use gamlink::montecarlo::{generate_sample, Dgp, DgpKind};
use gamlink::second_stage::{SmoothContext, Smoother};
use rayon::prelude::*;

fn main() {
    let which = std::env::args().nth(1).unwrap_or_default();
    if which == "cov" {
        coverage_diag();
    } else if which == "parts" {
        pls_parts_diag();
    } else {
        pls_diag();
    }
}

fn coverage_diag() {
    let dgp = Dgp::new(DgpKind::Logit, 2).unwrap();
    let link = dgp.link();
    let kernel = Kernel::quartic();
    let n = 500usize;
    let gamma = 0.3;
    let c_h = 1.0;
    let h = c_h * (n as f64).powf(-gamma);
    let reps = 300;
    let points = [-0.5, 0.0, 0.5];
    let basis = ModelBasis::new(BasisFamily::OrthonormalizedBspline, &[4, 4], 64).unwrap();

    let rows: Vec<[f64; 9]> = (0..reps)
        .into_par_iter()
        .filter_map(|rep| {
            let data = generate_sample(&dgp, n, 5000 + rep as u64);
            let fit = fit_first_stage(&data, &basis, &link, &FirstStageConfig::default()).ok()?;
            let ctx = SmoothContext::from_fit(&fit, &data, &basis, &link, &kernel, 0, h).ok()?;
            let cv =
                ConditionalVariance::new(&data, &fit, &basis, &link, &[0.5, 0.5], kernel.clone())
                    .ok()?;
            let mut out = [0.0f64; 9];
            for (s, &x) in points.iter().enumerate() {
                let m_tilde = fit.eval_mtilde_j(&basis, 0, x);
                let m_hat = ctx.step(Smoother::LocalLinear, x, m_tilde, None).ok()?;
                let var_at = |i: usize| cv.eval(&[x, data.x(i, 1)]);
                let (d0, _d1, _d2) = estimate_d0_d1_d2(&ctx, x, m_tilde, &var_at).ok()?;
                let v_hat = estimate_v1(&ctx, x, m_tilde, d0, &var_at, c_h).ok()?;
                out[3 * s] = m_hat - dgp.centered_component(0, x);
                out[3 * s + 1] = m_tilde - dgp.centered_component(0, x);
                out[3 * s + 2] = v_hat;
            }
            Some(out)
        })
        .collect();
    let m = rows.len() as f64;
    let rate = (n as f64).powf(-(1.0 - gamma) / 2.0);
    for (s, &x) in [-0.5, 0.0, 0.5].iter().enumerate() {
        let bias = rows.iter().map(|r| r[3 * s]).sum::<f64>() / m;
        let bias_tilde = rows.iter().map(|r| r[3 * s + 1]).sum::<f64>() / m;
        let var = rows
            .iter()
            .map(|r| (r[3 * s] - bias).powi(2))
            .sum::<f64>()
            / (m - 1.0);
        let mean_v = rows.iter().map(|r| r[3 * s + 2]).sum::<f64>() / m;
        let pred_sd = mean_v.sqrt() * rate;
        println!(
            "x={x:+.1}: bias(m_hat)={bias:+.4} bias(m_tilde)={bias_tilde:+.4} emp_sd={:.4} pred_sd={pred_sd:.4} ratio={:.3} |b|/sd={:.3}",
            var.sqrt(),
            pred_sd / var.sqrt(),
            bias.abs() / var.sqrt()
        );
    }
}

fn pls_parts_diag() {
    use gamlink::bandwidth::pls_objective_parts;
    let dgp = Dgp::new(DgpKind::Logit, 2).unwrap();
    let link = dgp.link();
    let kernel = Kernel::quartic();
    let n = 500usize;
    let basis = ModelBasis::new(BasisFamily::OrthonormalizedBspline, &[4, 2], 64).unwrap();
    let data = generate_sample(&dgp, n, 20_002);
    let fit = fit_first_stage(&data, &basis, &link, &FirstStageConfig::default()).unwrap();
    let c1 = 1.5243982444638442;
    for c2 in [0.2, 0.39359793425308615, 0.7745966692414834, 1.5243982444638442, 3.0] {
        let parts = pls_objective_parts(
            &data, &basis, &link, &fit, &kernel, Smoother::LocalLinear, &[c1, c2], 1.5,
        )
        .unwrap();
        println!(
            "c2={c2:.3}: rss={:.6} penalty={:.6} total={:.6}",
            parts.rss,
            parts.penalty,
            parts.total()
        );
    }
}

fn pls_diag() {
    let dgp = Dgp::new(DgpKind::Logit, 2).unwrap();
    let link = dgp.link();
    let kernel = Kernel::quartic();
    let n = 500usize;
    let basis = ModelBasis::new(BasisFamily::OrthonormalizedBspline, &[4, 2], 64).unwrap();
    let config = PlsConfig {
        c_lo: 0.5,
        grid_points: 5,
        polish: false,
        ..PlsConfig::default()
    };
    let stats: Vec<(Vec<f64>, Vec<f64>, f64, f64)> = (0..30u64)
        .into_par_iter()
        .filter_map(|seed| {
            let data = generate_sample(&dgp, n, 20_000 + seed);
            let fit = fit_first_stage(&data, &basis, &link, &FirstStageConfig::default()).ok()?;
            let selection =
                minimize_pls(&config, &data, &basis, &link, &fit, &kernel, Smoother::LocalLinear)
                    .ok()?;
            let ase = |c_h: &[f64]| -> Option<f64> {
                let n_f = n as f64;
                let mut m_hat = vec![0.0; n];
                for j in 0..2 {
                    let h = c_h[j] * n_f.powf(-0.2);
                    let ctx =
                        SmoothContext::from_fit(&fit, &data, &basis, &link, &kernel, j, h).ok()?;
                    for i in 0..n {
                        let xij = data.x(i, j);
                        let m_tilde = fit.eval_mtilde_j(&basis, j, xij);
                        m_hat[i] += ctx.step(Smoother::LocalLinear, xij, m_tilde, None).ok()?;
                    }
                }
                Some(
                    (0..n)
                        .map(|i| {
                            let fitted = link.f(fit.mu_tilde() + m_hat[i]);
                            let truth = dgp.mean(data.row(i));
                            (fitted - truth).powi(2)
                        })
                        .sum::<f64>()
                        / n_f,
                )
            };
            let sel_ase = ase(&selection.c_h)?;
            let fixed_ase = ase(&[1.224744871391589, 3.0])?;
            let mut best = (f64::INFINITY, Vec::new());
            for e in &selection.trace {
                if let Some(a) = ase(&e.c_h) {
                    if a < best.0 {
                        best = (a, e.c_h.clone());
                    }
                }
            }
            println!(
                "seed {seed}: selected {:?} ase {:.5} | best {:?} ase {:.5} | ratio {:.3} | fixed-ratio {:.3}",
                selection.c_h, sel_ase, best.1, best.0, sel_ase / best.0, fixed_ase / best.0
            );
            Some((selection.c_h.clone(), best.1, sel_ase / best.0, fixed_ase / best.0))
        })
        .collect();
    let m = stats.len() as f64;
    let mean_ratio = stats.iter().map(|s| s.2).sum::<f64>() / m;
    for j in 0..2 {
        let sel = stats.iter().map(|s| s.0[j]).sum::<f64>() / m;
        let best = stats.iter().map(|s| s.1[j]).sum::<f64>() / m;
        println!("coord {j}: mean selected c {sel:.3}, mean ASE-best c {best:.3}");
    }
    let mean_fixed = stats.iter().map(|s| s.3).sum::<f64>() / m;
    println!("mean ratio {mean_ratio:.3} | mean fixed-oracle ratio {mean_fixed:.3}");
}
