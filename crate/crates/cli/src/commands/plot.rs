//! `cwm plot`: render an evaluation report, a latent trajectory dump, or
//! success curves to SVG or CSV, chosen by the output extension.

use std::path::{Path, PathBuf};

use cwm_core::eval::{pca_project, EvalReport};
use cwm_core::model::LatentSlots;
use cwm_core::diff::Tensor;
use cwm_core::{CwmError, Result};

use crate::config::RunConfig;
use crate::formats::{CurvesFile, TrajDump};
use crate::svg::{line_chart, scatter, Series};

enum PlotInput {
    Report(EvalReport),
    Traj(TrajDump),
    Curves(CurvesFile),
}

fn parse_input(path: &Path) -> Result<PlotInput> {
    let raw = std::fs::read_to_string(path)
        .map_err(|e| CwmError::Schema(format!("cannot read plot input {}: {e}", path.display())))?;
    if let Ok(r) = serde_json::from_str::<EvalReport>(&raw) {
        return Ok(PlotInput::Report(r));
    }
    if let Ok(t) = serde_json::from_str::<TrajDump>(&raw) {
        return Ok(PlotInput::Traj(t));
    }
    if let Ok(c) = serde_json::from_str::<CurvesFile>(&raw) {
        return Ok(PlotInput::Curves(c));
    }
    Err(CwmError::Schema(format!(
        "{} is not an eval report, trajectory dump, or curves file",
        path.display()
    )))
}

type TrajRow = (usize, usize, f64, f64, &'static str);

/// Project every dumped trajectory into one shared 2D PCA basis and emit
/// (episode, step, x, y, branch) rows.
fn traj_rows(dump: &TrajDump) -> Result<Vec<TrajRow>> {
    let mut all: Vec<LatentSlots> = Vec::new();
    for ep in &dump.episodes {
        for v in ep.dream.iter().chain(&ep.factual) {
            all.push(LatentSlots::new(Tensor::new(vec![1, v.len()], v.clone())?)?);
        }
    }
    let proj = pca_project(&all)?;
    let mut rows = Vec::with_capacity(all.len());
    let mut cursor = 0usize;
    for ep in &dump.episodes {
        for (branch, states) in [("dream", &ep.dream), ("factual", &ep.factual)] {
            for (step, _) in states.iter().enumerate() {
                let p = proj.points[cursor];
                rows.push((ep.episode, step, p[0], p[1], branch));
                cursor += 1;
            }
        }
    }
    Ok(rows)
}

pub fn run_plot(cfg: &RunConfig, input: Option<&Path>, out: Option<&Path>) -> Result<PathBuf> {
    let input = input
        .map(Path::to_path_buf)
        .or_else(|| cfg.io.plot_input.clone())
        .ok_or_else(|| {
            CwmError::Schema("plot needs an input file (argument or io.plot_input)".into())
        })?;
    let parsed = parse_input(&input)?;
    let out_path = out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| input.with_extension("svg"));
    let as_csv = out_path.extension().and_then(|e| e.to_str()) == Some("csv");

    let content = match (&parsed, as_csv) {
        (PlotInput::Report(r), true) => {
            let mut csv = String::from("step,h1,mrr\n");
            for t in 0..r.h1.len() {
                csv.push_str(&format!("{t},{},{}\n", r.h1[t], r.mrr[t]));
            }
            csv
        }
        (PlotInput::Report(r), false) => {
            let steps = |v: &[f64]| -> Vec<(f64, f64)> {
                v.iter().enumerate().map(|(i, &y)| (i as f64, y)).collect()
            };
            line_chart(
                "ranking quality per prediction step",
                &[
                    Series {
                        name: "h@1".into(),
                        points: steps(&r.h1),
                    },
                    Series {
                        name: "mrr".into(),
                        points: steps(&r.mrr),
                    },
                ],
            )
        }
        (PlotInput::Traj(t), true) => {
            let mut csv = String::from("episode,step,x,y,branch\n");
            for (ep, step, x, y, branch) in traj_rows(t)? {
                csv.push_str(&format!("{ep},{step},{x:.6},{y:.6},{branch}\n"));
            }
            csv
        }
        (PlotInput::Traj(t), false) => {
            let rows = traj_rows(t)?;
            let pick = |want: &str| -> Vec<(f64, f64)> {
                rows.iter()
                    .filter(|r| r.4 == want)
                    .map(|r| (r.2, r.3))
                    .collect()
            };
            scatter(
                "latent trajectories (2-component projection)",
                &[
                    Series {
                        name: "factual".into(),
                        points: pick("factual"),
                    },
                    Series {
                        name: "dream".into(),
                        points: pick("dream"),
                    },
                ],
            )
        }
        (PlotInput::Curves(c), true) => {
            let mut csv = String::from("agent,budget,solved_fraction\n");
            for curve in &c.curves {
                for (b, v) in curve.solved_fraction.iter().enumerate() {
                    csv.push_str(&format!("{},{},{v}\n", curve.agent, b + 1));
                }
            }
            csv
        }
        (PlotInput::Curves(c), false) => {
            let series: Vec<Series> = c
                .curves
                .iter()
                .map(|curve| Series {
                    name: curve.agent.clone(),
                    points: curve
                        .solved_fraction
                        .iter()
                        .enumerate()
                        .map(|(b, &v)| ((b + 1) as f64, v))
                        .collect(),
                })
                .collect();
            line_chart("solved fraction vs attempt budget", &series)
        }
    };

    if let Some(parent) = out_path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    std::fs::write(&out_path, content)?;
    println!("plot -> {}", out_path.display());
    Ok(out_path)
}
