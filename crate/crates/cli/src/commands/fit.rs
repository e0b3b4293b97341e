//! `scalelab fit` — power-law fit over a points CSV, with plot emission.

use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use scalelab_core::scaling::sweep_report;
use serde::{Deserialize, Serialize};

use crate::manifest::Run;
use crate::util::{announce_config, load_config, read_points_csv};
use crate::Ctx;

#[derive(Args)]
pub struct FitArgs {
    /// CSV of dimension,x,error rows (one dimension per file)
    #[arg(long)]
    points: PathBuf,
    /// Base name for the emitted CSV/SVG pair
    #[arg(long)]
    stem: Option<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(default)]
struct FitParams {
    stem: String,
}

impl Default for FitParams {
    fn default() -> Self {
        FitParams { stem: "fit".into() }
    }
}

pub fn run(ctx: &Ctx, args: &FitArgs) -> Result<()> {
    let mut p: FitParams = load_config(ctx.config.as_deref())?;
    if let Some(stem) = &args.stem {
        p.stem = stem.clone();
    }
    let config = announce_config(&p)?;
    let run = Run::start(&ctx.out, config, &[&args.points])?;
    let points = read_points_csv(&args.points)?;
    let fit = sweep_report(&points, &ctx.out, &p.stem)?;
    println!(
        "alpha={} k={} r_squared={}",
        fit.alpha, fit.k, fit.r_squared
    );
    run.finish(vec![
        ctx.out.join(format!("{}.csv", p.stem)),
        ctx.out.join(format!("{}.svg", p.stem)),
    ])
}
