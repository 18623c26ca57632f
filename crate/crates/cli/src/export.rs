//! Columnar text artifacts: a one-line header of column names, then one row
//! per record with every value in `{:.16e}` (17 significant digits, which
//! round-trips `f64` exactly).

use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use robust_contract::agent::AgentSolution;
use robust_contract::principal::PrincipalSolution;

use crate::error::CliError;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn render_table(header: &[&str], rows: &[Vec<f64>]) -> String {
    let mut out = header.join(" ");
    out.push('\n');
    for row in rows {
        for (i, v) in row.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            write!(out, "{v:.16e}").unwrap();
        }
        out.push('\n');
    }
    out
}

/// Writes the table and returns its sha256.
pub fn write_table(path: &Path, header: &[&str], rows: &[Vec<f64>]) -> Result<String, CliError> {
    let text = render_table(header, rows);
    std::fs::write(path, &text)?;
    Ok(sha256_hex(text.as_bytes()))
}

pub fn read_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>), CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::MissingArtifact(format!("{}: {e}", path.display())))?;
    parse_table(&text).map_err(|m| CliError::Verification(format!("{}: {m}", path.display())))
}

pub fn parse_table(text: &str) -> Result<(Vec<String>, Vec<Vec<f64>>), String> {
    let mut lines = text.lines();
    let header: Vec<String> = lines.next().ok_or("empty table")?.split_whitespace().map(String::from).collect();
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let row: Vec<f64> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<Result<_, _>>()
            .map_err(|_| format!("line {}: bad number", i + 2))?;
        if row.len() != header.len() {
            return Err(format!("line {}: expected {} columns", i + 2, header.len()));
        }
        rows.push(row);
    }
    Ok((header, rows))
}

pub const AGENT_HEADER: [&str; 6] = ["t", "x", "value", "effort", "worst_vol", "z"];

pub fn agent_rows(sol: &AgentSolution) -> Vec<Vec<f64>> {
    let mut rows = Vec::with_capacity(sol.times.len() * sol.xs.len());
    for (i, &t) in sol.times.iter().enumerate() {
        for (j, &x) in sol.xs.iter().enumerate() {
            rows.push(vec![t, x, sol.value[i][j], sol.effort_field[i][j], sol.worst_vol_field[i][j], sol.z_field[i][j]]);
        }
    }
    rows
}

pub const PRINCIPAL_HEADER: [&str; 9] = ["t", "x", "y", "u", "z", "gamma", "n", "effort", "k_rate"];

pub fn principal_rows(sol: &PrincipalSolution) -> Vec<Vec<f64>> {
    let ny = sol.ny();
    let mut rows = Vec::with_capacity(sol.times.len() * sol.xs.len() * ny);
    for (i, &t) in sol.times.iter().enumerate() {
        for (j, &x) in sol.xs.iter().enumerate() {
            for (k, &y) in sol.ys.iter().enumerate() {
                let idx = j * ny + k;
                rows.push(vec![
                    t,
                    x,
                    y,
                    sol.u[i][idx],
                    sol.z_policy[i][idx],
                    sol.gamma_policy[i][idx],
                    sol.nature_policy[i][idx],
                    sol.effort_policy[i][idx],
                    sol.k_rate[i][idx],
                ]);
            }
        }
    }
    rows
}

fn distinct(values: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::new();
    for v in values {
        if !out.contains(&v) {
            out.push(v);
        }
    }
    out
}

/// Inverse of [`principal_rows`].
pub fn principal_from_rows(header: &[String], rows: &[Vec<f64>], radius_fallbacks: usize) -> Result<PrincipalSolution, String> {
    if header != PRINCIPAL_HEADER {
        return Err(format!("unexpected header {header:?}"));
    }
    let times = distinct(rows.iter().map(|r| r[0]));
    let xs = distinct(rows.iter().map(|r| r[1]));
    let ys = distinct(rows.iter().map(|r| r[2]));
    let (nt, nx, ny) = (times.len(), xs.len(), ys.len());
    if nt * nx * ny != rows.len() {
        return Err("rows do not form a full (t, x, y) grid".into());
    }
    let field = |c: usize| -> Vec<Vec<f64>> { rows.chunks(nx * ny).map(|s| s.iter().map(|r| r[c]).collect()).collect() };
    for (n, r) in rows.iter().enumerate() {
        let (i, rest) = (n / (nx * ny), n % (nx * ny));
        if r[0] != times[i] || r[1] != xs[rest / ny] || r[2] != ys[rest % ny] {
            return Err(format!("row {} is out of order", n + 2));
        }
    }
    Ok(PrincipalSolution {
        times,
        xs,
        ys,
        u: field(3),
        z_policy: field(4),
        gamma_policy: field(5),
        nature_policy: field(6),
        effort_policy: field(7),
        k_rate: field(8),
        radius_fallbacks,
    })
}
