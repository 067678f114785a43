//! Cartesian parameter grids over a base experiment.

use std::path::Path;

use rayon::prelude::*;
use rfim_core::cltlab::{run_clt_experiment, CltReport, ExperimentConfig, CSV_COLUMNS};
use rfim_core::ensembles::EnsembleKind;
use serde::Deserialize;

use crate::config::{read_value, ConfigError};

/// Axes in product order; the last axis varies fastest.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    #[serde(default)]
    pub n: Option<Vec<usize>>,
    #[serde(default)]
    pub theta: Option<Vec<f64>>,
    #[serde(default)]
    pub p: Option<Vec<f64>>,
    /// Hopfield pattern count.
    #[serde(default, rename = "N")]
    pub patterns: Option<Vec<usize>>,
    /// Replicates.
    #[serde(default, rename = "M")]
    pub replicates: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Axis {
    N,
    Theta,
    P,
    Patterns,
    Replicates,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::N => "n",
            Axis::Theta => "theta",
            Axis::P => "p",
            Axis::Patterns => "N",
            Axis::Replicates => "M",
        }
    }
}

pub type Point = Vec<(Axis, f64)>;

impl Grid {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let v = read_value(path)?;
        serde_json::from_value(v).map_err(|e| ConfigError::Schema(vec![format!("grid: {e}")]))
    }

    fn axes(&self) -> Vec<(Axis, Vec<f64>)> {
        let ints = |v: &Vec<usize>| v.iter().map(|&x| x as f64).collect::<Vec<_>>();
        let mut out = Vec::new();
        if let Some(v) = &self.n {
            out.push((Axis::N, ints(v)));
        }
        if let Some(v) = &self.theta {
            out.push((Axis::Theta, v.clone()));
        }
        if let Some(v) = &self.p {
            out.push((Axis::P, v.clone()));
        }
        if let Some(v) = &self.patterns {
            out.push((Axis::Patterns, ints(v)));
        }
        if let Some(v) = &self.replicates {
            out.push((Axis::Replicates, ints(v)));
        }
        out
    }

    /// All grid points. A grid with no axes, or with an empty axis, has none.
    pub fn points(&self) -> Vec<Point> {
        let axes = self.axes();
        if axes.is_empty() || axes.iter().any(|(_, v)| v.is_empty()) {
            return Vec::new();
        }
        let mut pts: Vec<Point> = vec![Vec::new()];
        for (axis, values) in &axes {
            pts = pts
                .into_iter()
                .flat_map(|p| {
                    values.iter().map(move |&v| {
                        let mut q = p.clone();
                        q.push((*axis, v));
                        q
                    })
                })
                .collect();
        }
        pts
    }

    /// The axis shown on the x column of the plot file.
    pub fn plot_axis(&self) -> Axis {
        self.axes()
            .iter()
            .find(|(_, v)| v.len() > 1)
            .map(|(a, _)| *a)
            .unwrap_or(Axis::N)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for `base` at a grid point; depends only on the parameter values.
pub fn derive_seed(base: u64, point: &Point) -> u64 {
    let mut h = splitmix64(base);
    for (axis, v) in point {
        h = splitmix64(h ^ splitmix64(*axis as u64 + 1) ^ v.to_bits());
    }
    h
}

/// The base configuration specialised to one grid point.
pub fn instantiate(base: &ExperimentConfig, point: &Point) -> Result<ExperimentConfig, String> {
    let mut cfg = base.clone();
    for &(axis, v) in point {
        match axis {
            Axis::N => cfg.ensemble.n = v as usize,
            Axis::Theta => cfg.ensemble.theta = v,
            Axis::P => match &mut cfg.ensemble.kind {
                EnsembleKind::ErdosRenyi { p } => *p = v,
                k => return Err(format!("grid axis p needs erdos_renyi, not {}", k.name())),
            },
            Axis::Patterns => match &mut cfg.ensemble.kind {
                EnsembleKind::Hopfield { patterns, .. } => *patterns = v as usize,
                k => return Err(format!("grid axis N needs hopfield, not {}", k.name())),
            },
            Axis::Replicates => cfg.replicates = v as usize,
        }
    }
    cfg.master_seed = derive_seed(base.master_seed, point);
    cfg.ensemble.seed = derive_seed(base.ensemble.seed, point);
    cfg.field.seed = derive_seed(base.field.seed, point);
    cfg.validate().map_err(|e| e.to_string())?;
    Ok(cfg)
}

pub struct SweepRow {
    pub point: Point,
    pub result: Result<CltReport, String>,
}

/// Runs every point in parallel; rows come back in grid order.
pub fn run_grid(base: &ExperimentConfig, grid: &Grid) -> Vec<SweepRow> {
    grid.points()
        .into_par_iter()
        .map(|point| {
            let result = instantiate(base, &point)
                .and_then(|cfg| run_clt_experiment(&cfg).map_err(|e| e.to_string()));
            SweepRow { point, result }
        })
        .collect()
}

pub fn header() -> String {
    let mut cols: Vec<&str> = CSV_COLUMNS.to_vec();
    cols.push("error");
    cols.join(",")
}

fn clean(msg: &str) -> String {
    format!("\"{}\"", msg.replace('"', "'").replace(['\n', '\r'], " "))
}

/// CSV row for one grid point; failed points keep their parameters and an error.
pub fn row(base: &ExperimentConfig, r: &SweepRow) -> String {
    match &r.result {
        Ok(rep) => format!("{},", rep.csv_row()),
        Err(msg) => {
            let mut cells = vec![String::new(); CSV_COLUMNS.len()];
            let col = |name: &str| CSV_COLUMNS.iter().position(|c| *c == name).expect("column");
            cells[col("n")] = base.ensemble.n.to_string();
            cells[col("ensemble")] = base.ensemble.kind.name().to_string();
            cells[col("theta")] = format!("{:?}", base.ensemble.theta);
            cells[col("seed")] = derive_seed(base.master_seed, &r.point).to_string();
            cells[col("M")] = base.replicates.to_string();
            for &(axis, v) in &r.point {
                match axis {
                    Axis::N => cells[col("n")] = (v as usize).to_string(),
                    Axis::Theta => cells[col("theta")] = format!("{v:?}"),
                    Axis::Replicates => cells[col("M")] = (v as usize).to_string(),
                    Axis::P | Axis::Patterns => {}
                }
            }
            format!("{},{}", cells.join(","), clean(msg))
        }
    }
}

/// `(x, ks, se)` for every successful point with a KS value.
pub fn plot_points(rows: &[SweepRow], axis: Axis) -> Vec<(f64, f64, f64)> {
    rows.iter()
        .filter_map(|r| {
            let rep = r.result.as_ref().ok()?;
            let (_, y, se) = crate::output::plot_point(rep)?;
            let x = r
                .point
                .iter()
                .find(|(a, _)| *a == axis)
                .map(|(_, v)| *v)
                .unwrap_or(rep.n as f64);
            Some((x, y, se))
        })
        .collect()
}
