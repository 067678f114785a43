//! Report files: JSON, summary CSV rows, plot CSV, text tables, matrix dumps.

use std::fs::{self, File, OpenOptions};
use std::io::{self, BufWriter, Write};
use std::path::Path;

use rfim_core::cltlab::CltReport;
use rfim_core::coupling::triplet::{self, MatrixSidecar, TripletError};
use rfim_core::ensembles::{EnsembleSpec, GeneratedEnsemble};
use serde_json::json;

/// Pretty JSON; byte-identical for identical reports.
pub fn report_json(report: &CltReport) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("reports serialize");
    s.push('\n');
    s
}

pub fn write_json(path: &Path, report: &CltReport) -> io::Result<()> {
    fs::write(path, report_json(report))
}

/// Appends one row, writing the header first if the file is new or empty.
pub fn append_csv_row(path: &Path, header: &str, row: &str) -> io::Result<()> {
    let fresh = fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    if fresh {
        writeln!(f, "{header}")?;
    }
    writeln!(f, "{row}")
}

/// One `x,y,stderr` line per point.
pub fn write_plot_csv(path: &Path, points: &[(f64, f64, f64)]) -> io::Result<()> {
    let mut s = String::from("x,y,stderr\n");
    for (x, y, se) in points {
        s.push_str(&format!("{x:?},{y:?},{se:?}\n"));
    }
    fs::write(path, s)
}

/// `(n, ks_q, ks_q_se)`, falling back to the annealed KS.
pub fn plot_point(report: &CltReport) -> Option<(f64, f64, f64)> {
    let e = report.empirical.as_ref()?;
    let (ks, se) = match (e.ks_quenched, e.ks_quenched_se) {
        (Some(k), Some(s)) => (k, s),
        _ => (e.ks_annealed?, e.ks_annealed_se?),
    };
    Some((report.n as f64, ks, se))
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.6}")).unwrap_or_else(|| "-".into())
}

/// Fixed-width summary for the terminal.
pub fn summary_table(report: &CltReport) -> String {
    let c = &report.certificate;
    let mut rows: Vec<(&str, String)> = vec![
        (
            "ensemble",
            format!(
                "{} (n = {}, theta = {})",
                report.ensemble, report.n, report.theta
            ),
        ),
        ("mode", format!("{:?}", report.config.mode).to_lowercase()),
        ("centering", format!("{:?}", report.centering)),
        ("||A||_2", format!("{:.6}", c.two_norm)),
        (
            "||A||_4 interval",
            format!("[{:.6}, {:.6}]", c.four_norm_lower, c.four_norm_upper),
        ),
        ("MHT", format!("{:?}", c.mht)),
        ("lambda", format!("{:.6}", report.pair.lambda)),
        ("upsilon_n", format!("{:.6}", report.upsilon_n)),
        ("alpha_n", format!("{:.6e}", report.alpha_n)),
        (
            "R1..R4",
            format!(
                "{:.3e} {:.3e} {:.3e} {:.3e}",
                report.r1n, report.r2n, report.r3n, report.r4n
            ),
        ),
        ("error budget", format!("{:.6}", report.err_budget)),
        ("predicted var", fmt_opt(report.predicted_var)),
        (
            "predicted var (annealed)",
            fmt_opt(report.predicted_var_annealed),
        ),
    ];
    if let Some(e) = &report.empirical {
        rows.push(("empirical var", format!("{:.6} +- {:.6}", e.var, e.var_se)));
        rows.push(("KS quenched", fmt_opt(e.ks_quenched)));
        rows.push(("KS annealed", fmt_opt(e.ks_annealed)));
    }
    if let Some(l) = &report.lln {
        rows.push((
            "E[T*^2]",
            format!("{:.6} +- {:.6}", l.second_moment, l.second_moment_se),
        ));
    }
    if let Some(k) = &report.contraction {
        rows.push((
            "E sum (m-s)^2",
            format!("{:.6} (n alpha = {:.6})", k.mean_sq, k.n_alpha),
        ));
    }
    if let Some(m) = &report.mixing {
        rows.push(("Gelman-Rubin", format!("{:.4}", m.gelman_rubin)));
        rows.push(("max IAT (sweeps)", format!("{:.2}", m.max_iat)));
    }
    rows.push(("samples", report.sample_size.to_string()));
    rows.push(("burn-in steps", report.burn_in.to_string()));
    let mut out = String::new();
    for (k, v) in rows {
        out.push_str(&format!("{k:<26}{v}\n"));
    }
    for w in &report.warnings {
        out.push_str(&format!("warning: {w}\n"));
    }
    out
}

/// Text triplets (`<stem>_matrix.tri`) plus a JSON sidecar describing the draw.
pub fn export_matrix(
    dir: &Path,
    stem: &str,
    spec: &EnsembleSpec,
    g: &GeneratedEnsemble,
) -> Result<(), TripletError> {
    let mut tri = BufWriter::new(File::create(dir.join(format!("{stem}_matrix.tri")))?);
    triplet::write_text(&g.matrix, &mut tri)?;
    tri.flush()?;
    let side = MatrixSidecar {
        n: g.matrix.n(),
        kind: spec.kind.name().to_string(),
        params: json!({
            "ensemble": spec,
            "storage": format!("{:?}", g.matrix.storage_kind()).to_lowercase(),
            "notes": g.notes,
            "latent": g.latent,
        }),
        seed: spec.seed,
    };
    let mut f = File::create(dir.join(format!("{stem}_matrix.json")))?;
    triplet::write_sidecar(&side, &mut f)?;
    writeln!(f)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_header_written_once() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        append_csv_row(&p, "a,b", "1,2").unwrap();
        append_csv_row(&p, "a,b", "3,4").unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "a,b\n1,2\n3,4\n");
    }

    #[test]
    fn plot_csv_layout() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("p.csv");
        write_plot_csv(&p, &[(250.0, 0.02, 0.001)]).unwrap();
        assert_eq!(
            fs::read_to_string(&p).unwrap(),
            "x,y,stderr\n250.0,0.02,0.001\n"
        );
    }
}
