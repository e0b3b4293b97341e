//! `scalelab report` — fold completed sweeps into fitted curves plus one
//! summary file.

use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::Args;
use scalelab_core::scaling::sweep_report;
use scalelab_core::sweep::collect;

use crate::manifest::Run;
use crate::util::announce_config;
use crate::Ctx;

#[derive(Args)]
pub struct ReportArgs {
    /// Sweep output directory; repeat for several sweeps
    #[arg(long = "sweep", value_name = "DIR")]
    sweeps: Vec<PathBuf>,
}

pub fn run(ctx: &Ctx, args: &ReportArgs) -> Result<()> {
    if args.sweeps.is_empty() {
        bail!("nothing to report: pass at least one --sweep directory");
    }
    let config = announce_config(&serde_json::json!({ "sweeps": args.sweeps }))?;
    let run = Run::start(&ctx.out, config, &[])?;

    let mut artifacts = Vec::new();
    let mut summary = Vec::new();
    for dir in &args.sweeps {
        let points = collect(dir)?;
        let dimension = points[0].dimension;
        let stem = format!("scaling_{dimension}");
        let fit = sweep_report(&points, &ctx.out, &stem)?;
        println!(
            "{dimension}: {} points, alpha={} k={} r_squared={}",
            points.len(),
            fit.alpha,
            fit.k,
            fit.r_squared
        );
        summary.push(serde_json::json!({
            "dimension": dimension.to_string(),
            "source": dir,
            "points": points.len(),
            "alpha": fit.alpha,
            "k": fit.k,
            "r_squared": fit.r_squared,
        }));
        artifacts.push(ctx.out.join(format!("{stem}.csv")));
        artifacts.push(ctx.out.join(format!("{stem}.svg")));
    }
    let summary_path = ctx.out.join("summary.json");
    std::fs::write(&summary_path, serde_json::to_string_pretty(&summary)?)?;
    artifacts.push(summary_path);
    run.finish(artifacts)
}
