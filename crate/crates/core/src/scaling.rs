//! Power-law fits e = k·x^(-alpha) over (scale, error) observations, via
//! ordinary least squares on log-transformed axes.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::plot::{self, Figure, Series};

/// Which quantity is being scaled along the x axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScaleDimension {
    Data,
    Model,
    Compute,
}

impl fmt::Display for ScaleDimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ScaleDimension::Data => "data",
            ScaleDimension::Model => "model",
            ScaleDimension::Compute => "compute",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for ScaleDimension {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "data" => Ok(ScaleDimension::Data),
            "model" => Ok(ScaleDimension::Model),
            "compute" => Ok(ScaleDimension::Compute),
            other => Err(Error::input(format!(
                "unknown scale dimension {other:?} (expected data, model, or compute)"
            ))),
        }
    }
}

/// One observation: scale value x (documents, parameters, or FLOPs) and the
/// test error measured there.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalePoint {
    pub x: f64,
    pub e: f64,
    pub dimension: ScaleDimension,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PowerLawFit {
    pub alpha: f64,
    pub k: f64,
    pub r_squared: f64,
    /// log-space residuals, one per input point in input order
    pub residuals: Vec<f64>,
    pub dimension: ScaleDimension,
}

fn check_single_dimension(points: &[ScalePoint]) -> Result<ScaleDimension> {
    let first = points[0].dimension;
    let mut seen: Vec<ScaleDimension> = vec![first];
    for p in points {
        if !seen.contains(&p.dimension) {
            seen.push(p.dimension);
        }
    }
    if seen.len() > 1 {
        let names: Vec<String> = seen.iter().map(|d| d.to_string()).collect();
        return Err(Error::input(format!(
            "points mix scale dimensions: {}",
            names.join(", ")
        )));
    }
    Ok(first)
}

/// Least-squares line through (log x, log e); alpha is the negated slope and
/// k the exponentiated intercept.
pub fn fit_power_law(points: &[ScalePoint]) -> Result<PowerLawFit> {
    if points.len() < 3 {
        return Err(Error::input(format!(
            "need at least 3 points to fit, got {}",
            points.len()
        )));
    }
    let dimension = check_single_dimension(points)?;
    for p in points {
        if !(p.x > 0.0) || !(p.e > 0.0) {
            return Err(Error::input(format!(
                "nonpositive point (x={}, e={}) cannot be log-transformed",
                p.x, p.e
            )));
        }
    }
    let lx: Vec<f64> = points.iter().map(|p| p.x.ln()).collect();
    let le: Vec<f64> = points.iter().map(|p| p.e.ln()).collect();
    let n = points.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let me = le.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::input("all x values are equal; slope is undefined"));
    }
    let sxy: f64 = lx
        .iter()
        .zip(&le)
        .map(|(x, y)| (x - mx) * (y - me))
        .sum();
    let slope = sxy / sxx;
    let intercept = me - slope * mx;

    let residuals: Vec<f64> = lx
        .iter()
        .zip(&le)
        .map(|(x, y)| y - (intercept + slope * x))
        .collect();
    let ss_res: f64 = residuals.iter().map(|r| r * r).sum();
    let ss_tot: f64 = le.iter().map(|y| (y - me).powi(2)).sum();
    // A flat noiseless law has zero total variance and zero residuals; the
    // fit is exact, so report 1.
    let r_squared = if ss_tot > 0.0 {
        (1.0 - ss_res / ss_tot).clamp(0.0, 1.0)
    } else {
        1.0
    };

    let fit = PowerLawFit {
        alpha: -slope,
        k: intercept.exp(),
        r_squared,
        residuals,
        dimension,
    };
    if !fit.alpha.is_finite() || !fit.k.is_finite() {
        return Err(Error::numeric("power-law fit produced non-finite parameters"));
    }
    Ok(fit)
}

/// Predicted error k·x^(-alpha) at a positive scale x.
pub fn predict(fit: &PowerLawFit, x: f64) -> Result<f64> {
    if !(x > 0.0) {
        return Err(Error::input(format!("scale must be positive, got {x}")));
    }
    Ok(fit.k * x.powf(-fit.alpha))
}

/// Fit one sweep's points, then write a points+fit CSV and a log-log SVG
/// figure next to it. Identical inputs produce byte-identical files.
pub fn sweep_report(points: &[ScalePoint], out_dir: &Path, stem: &str) -> Result<PowerLawFit> {
    let fit = fit_power_law(points)?;
    std::fs::create_dir_all(out_dir)?;

    let mut sorted: Vec<ScalePoint> = points.to_vec();
    sorted.sort_by(|a, b| (a.x, a.e).partial_cmp(&(b.x, b.e)).expect("finite"));

    let mut csv = String::from("dimension,x,error,fitted_error,log10_x,log10_error\n");
    for p in &sorted {
        let fitted = predict(&fit, p.x)?;
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            p.dimension,
            p.x,
            p.e,
            fitted,
            p.x.log10(),
            p.e.log10()
        ));
    }
    csv.push_str(&format!(
        "# fit alpha={} k={} r_squared={}\n",
        fit.alpha, fit.k, fit.r_squared
    ));
    std::fs::write(out_dir.join(format!("{stem}.csv")), csv)?;

    let obs: Vec<(f64, f64)> = sorted.iter().map(|p| (p.x, p.e)).collect();
    // densely sample the fitted line across the observed span
    let (x_lo, x_hi) = (sorted[0].x, sorted[sorted.len() - 1].x);
    let line: Vec<(f64, f64)> = (0..=40)
        .map(|i| {
            let t = i as f64 / 40.0;
            let x = (x_lo.ln() * (1.0 - t) + x_hi.ln() * t).exp();
            (x, fit.k * x.powf(-fit.alpha))
        })
        .collect();
    let fig = Figure::new(
        &format!("test error vs {} scale", fit.dimension),
        &format!("{} scale", fit.dimension),
        "test error",
        vec![
            Series::scatter("observed", obs),
            Series::line(
                &format!(
                    "fit: e = {:.4} x^-{:.4} (R2 {:.4})",
                    fit.k, fit.alpha, fit.r_squared
                ),
                line,
            ),
        ],
    );
    plot::save_loglog_svg(&fig, &out_dir.join(format!("{stem}.svg")))?;
    Ok(fit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeds;
    use rand_distr::{Distribution, Normal};

    fn pts(xe: &[(f64, f64)], dim: ScaleDimension) -> Vec<ScalePoint> {
        xe.iter()
            .map(|&(x, e)| ScalePoint {
                x,
                e,
                dimension: dim,
            })
            .collect()
    }

    fn law(xs: &[f64], k: f64, alpha: f64) -> Vec<ScalePoint> {
        pts(
            &xs.iter()
                .map(|&x| (x, k * x.powf(-alpha)))
                .collect::<Vec<_>>(),
            ScaleDimension::Data,
        )
    }

    #[test]
    fn recovers_exact_parameters_from_noiseless_points() {
        let points = law(&[1e3, 1e4, 1e5, 1e6, 1e7], 2.5, 0.07);
        let fit = fit_power_law(&points).unwrap();
        assert!((fit.alpha - 0.07).abs() < 1e-10, "alpha {}", fit.alpha);
        assert!((fit.k - 2.5).abs() < 1e-10, "k {}", fit.k);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
        assert!(fit.residuals.iter().all(|r| r.abs() < 1e-12));
    }

    #[test]
    fn flat_law_gives_zero_slope_and_common_level() {
        let points = pts(
            &[(10.0, 1.7), (100.0, 1.7), (1000.0, 1.7), (5000.0, 1.7)],
            ScaleDimension::Model,
        );
        let fit = fit_power_law(&points).unwrap();
        assert!(fit.alpha.abs() < 1e-12);
        assert!((fit.k - 1.7).abs() < 1e-12);
        assert_eq!(fit.r_squared, 1.0);
        assert_eq!(predict(&fit, 123.0).unwrap(), fit.k);
    }

    /// Independent check: a dense grid over (alpha, k) in [0,1] x [0.1,10]
    /// minimizing the same log-space squared error must land within one grid
    /// step of the closed-form estimate, and never beat it.
    #[test]
    fn ols_matches_dense_grid_search_on_noisy_points() {
        let noise = Normal::new(0.0, 0.01).unwrap();
        let mut rng = seeds::rng(424242, &[1]);
        let xs: Vec<f64> = (0..8).map(|i| 1e3 * 4f64.powi(i)).collect();
        let points: Vec<ScalePoint> = xs
            .iter()
            .map(|&x| ScalePoint {
                x,
                e: 2.5 * x.powf(-0.07) * f64::exp(noise.sample(&mut rng)),
                dimension: ScaleDimension::Data,
            })
            .collect();

        let objective = |alpha: f64, k: f64| -> f64 {
            points
                .iter()
                .map(|p| (p.e.ln() - (k.ln() - alpha * p.x.ln())).powi(2))
                .sum()
        };

        let (a_step, k_step) = (1.0 / 500.0, 9.9 / 1500.0);
        let mut best = (f64::INFINITY, 0.0, 0.0);
        for ai in 0..=500 {
            let alpha = ai as f64 * a_step;
            for ki in 0..=1500 {
                let k = 0.1 + ki as f64 * k_step;
                let obj = objective(alpha, k);
                if obj < best.0 {
                    best = (obj, alpha, k);
                }
            }
        }

        let fit = fit_power_law(&points).unwrap();
        assert!(
            objective(fit.alpha, fit.k) <= best.0 + 1e-12,
            "closed form {} worse than grid {}",
            objective(fit.alpha, fit.k),
            best.0
        );
        assert!((fit.alpha - best.1).abs() <= a_step, "alpha {} vs grid {}", fit.alpha, best.1);
        // alpha and log k trade off along a ridge with slope mean(log x), so
        // quantizing alpha by one step can move the grid's k by that much
        let mean_lx = xs.iter().map(|x| x.ln()).sum::<f64>() / xs.len() as f64;
        let k_slack = mean_lx * a_step + k_step / best.2;
        assert!(
            (fit.k.ln() - best.2.ln()).abs() <= k_slack,
            "k {} vs grid {} (ln-slack {k_slack})",
            fit.k,
            best.2
        );
        // and the noise was small enough that truth is nearby
        assert!((fit.alpha - 0.07).abs() < 0.02);
        assert!((fit.k - 2.5).abs() < 0.25);
    }

    #[test]
    fn predict_basics() {
        let fit = fit_power_law(&law(&[10.0, 100.0, 1000.0], 3.0, 0.2)).unwrap();
        assert!((predict(&fit, 1.0).unwrap() - fit.k).abs() < 1e-12);
        assert!(predict(&fit, 0.0).is_err());
        assert!(predict(&fit, -4.0).is_err());
    }

    #[test]
    fn leave_one_out_reproduces_held_out_noiseless_point() {
        let all = law(&[1e2, 1e3, 1e4, 1e5, 1e6], 1.9, 0.11);
        for hold in 0..all.len() {
            let kept: Vec<ScalePoint> = all
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != hold)
                .map(|(_, p)| *p)
                .collect();
            let fit = fit_power_law(&kept).unwrap();
            let got = predict(&fit, all[hold].x).unwrap();
            let rel = (got - all[hold].e).abs() / all[hold].e;
            assert!(rel < 1e-10, "held-out {hold}: rel {rel}");
        }
    }

    #[test]
    fn rescaling_x_changes_only_k() {
        let base = law(&[1e3, 3e3, 1e4, 3e4], 2.2, 0.09);
        let fit = fit_power_law(&base).unwrap();
        let c = 37.5;
        let scaled: Vec<ScalePoint> = base
            .iter()
            .map(|p| ScalePoint { x: c * p.x, ..*p })
            .collect();
        let fit2 = fit_power_law(&scaled).unwrap();
        assert!((fit.alpha - fit2.alpha).abs() < 1e-10);
        let rel = (fit2.k - fit.k * c.powf(fit.alpha)).abs() / fit2.k;
        assert!(rel < 1e-10, "k did not scale by c^alpha: {rel}");
    }

    #[test]
    fn rescaling_e_changes_only_k() {
        let base = law(&[1e3, 3e3, 1e4, 3e4], 2.2, 0.09);
        let fit = fit_power_law(&base).unwrap();
        let c = 0.31;
        let scaled: Vec<ScalePoint> = base
            .iter()
            .map(|p| ScalePoint { e: c * p.e, ..*p })
            .collect();
        let fit2 = fit_power_law(&scaled).unwrap();
        assert!((fit.alpha - fit2.alpha).abs() < 1e-10);
        let rel = (fit2.k - fit.k * c).abs() / fit2.k;
        assert!(rel < 1e-10);
    }

    #[test]
    fn predictions_on_training_points_match_residual_decomposition() {
        let points = pts(
            &[(10.0, 3.1), (40.0, 2.4), (200.0, 2.2), (900.0, 1.6)],
            ScaleDimension::Compute,
        );
        let fit = fit_power_law(&points).unwrap();
        for (p, r) in points.iter().zip(&fit.residuals) {
            let fitted = predict(&fit, p.x).unwrap();
            assert!((p.e.ln() - fitted.ln() - r).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let two = law(&[10.0, 100.0], 1.0, 0.1);
        assert!(fit_power_law(&two).is_err());
        let neg = pts(&[(10.0, 1.0), (20.0, -0.5), (30.0, 0.2)], ScaleDimension::Data);
        assert!(fit_power_law(&neg).is_err());
        let zero_x = pts(&[(0.0, 1.0), (20.0, 0.5), (30.0, 0.2)], ScaleDimension::Data);
        assert!(fit_power_law(&zero_x).is_err());
        let same_x = pts(&[(5.0, 1.0), (5.0, 0.5), (5.0, 0.2)], ScaleDimension::Data);
        assert!(fit_power_law(&same_x).is_err());
    }

    #[test]
    fn mixed_dimensions_error_names_offenders() {
        let mut points = law(&[10.0, 100.0, 1000.0], 1.0, 0.1);
        points[2].dimension = ScaleDimension::Compute;
        let err = fit_power_law(&points).unwrap_err().to_string();
        assert!(err.contains("data") && err.contains("compute"), "{err}");
    }

    #[test]
    fn report_writes_deterministic_csv_and_svg() {
        let points = law(&[1e3, 1e4, 1e5, 1e6], 2.5, 0.07);
        let dir = tempfile::tempdir().unwrap();
        let fit1 = sweep_report(&points, dir.path(), "data_sweep").unwrap();
        let csv1 = std::fs::read(dir.path().join("data_sweep.csv")).unwrap();
        let svg1 = std::fs::read(dir.path().join("data_sweep.svg")).unwrap();
        let fit2 = sweep_report(&points, dir.path(), "data_sweep").unwrap();
        let csv2 = std::fs::read(dir.path().join("data_sweep.csv")).unwrap();
        let svg2 = std::fs::read(dir.path().join("data_sweep.svg")).unwrap();
        assert_eq!(csv1, csv2);
        assert_eq!(svg1, svg2);
        assert_eq!(fit1.alpha, fit2.alpha);

        let body = String::from_utf8(csv1).unwrap();
        assert!(body.starts_with("dimension,x,error,fitted_error"));
        assert_eq!(body.lines().count(), 1 + 4 + 1);
        assert!(body.contains("# fit alpha="));
    }
}
