use std::path::Path;

use dai_core::dynamics::{Mode, Record, Trajectory};
use dai_core::grid::PowerNetwork;

use crate::error::{CliError, Result};

/// Column names: `t`, then `omega_i`, `s_i`, `u_i`, `mc_i` blocks, `W`, and
/// the angles `delta_i` needed to certify a trajectory from file.
pub fn header(n: usize) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    for block in ["omega", "s", "u", "mc"] {
        h.extend((1..=n).map(|i| format!("{block}_{i}")));
    }
    h.push("W".into());
    h.extend((1..=n).map(|i| format!("delta_{i}")));
    h
}

/// Shortest text that parses back to the same `f64`.
fn num(x: f64) -> String {
    format!("{x:?}")
}

pub fn write_trajectory(path: &Path, traj: &Trajectory, w: Option<&[f64]>) -> Result<()> {
    let n = traj.last().omega.len();
    let mut out = csv::Writer::from_path(path).map_err(|e| CliError::csv(path, e))?;
    out.write_record(header(n)).map_err(|e| CliError::csv(path, e))?;
    for (k, r) in traj.records.iter().enumerate() {
        let mut row = Vec::with_capacity(5 * n + 2);
        row.push(num(r.t));
        for block in [&r.omega, &r.s, &r.u, &r.mc] {
            row.extend(block.iter().map(|&x| num(x)));
        }
        row.push(w.map(|w| num(w[k])).unwrap_or_default());
        row.extend(r.delta.iter().map(|&x| num(x)));
        out.write_record(&row).map_err(|e| CliError::csv(path, e))?;
    }
    out.flush().map_err(|e| CliError::io(path, e))
}

/// A numeric CSV table; blank cells read as `None`.
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<Option<f64>>>,
}

impl Table {
    pub fn read(path: &Path) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path).map_err(|e| CliError::csv(path, e))?;
        let headers: Vec<String> = rdr
            .headers()
            .map_err(|e| CliError::csv(path, e))?
            .iter()
            .map(str::to_string)
            .collect();
        let mut rows = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| CliError::csv(path, e))?;
            let row = rec
                .iter()
                .map(|cell| {
                    let cell = cell.trim();
                    if cell.is_empty() {
                        Ok(None)
                    } else {
                        cell.parse::<f64>().map(Some).map_err(|_| {
                            CliError::usage(format!("{}: row {}: {cell:?} is not a number", path.display(), line + 2))
                        })
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        Ok(Self { headers, rows })
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.headers.iter().position(|h| h == name)
    }

    pub fn column(&self, idx: usize) -> Vec<Option<f64>> {
        self.rows.iter().map(|r| r[idx]).collect()
    }

    /// Rebuilds simulation records for `net`; every state column must be filled.
    pub fn to_records(&self, net: &PowerNetwork, mode: Mode) -> Result<Vec<Record>> {
        let n = net.n();
        let block = |name: &str| -> Result<Vec<usize>> {
            (1..=n)
                .map(|i| {
                    let col = format!("{name}_{i}");
                    self.column_index(&col)
                        .ok_or_else(|| CliError::usage(format!("trajectory lacks column {col}")))
                })
                .collect()
        };
        let t = self
            .column_index("t")
            .ok_or_else(|| CliError::usage("trajectory lacks column t"))?;
        let (omega, s, u, mc, delta) = (block("omega")?, block("s")?, block("u")?, block("mc")?, block("delta")?);
        let dyn_buses: Vec<usize> = match mode {
            Mode::Primary => (0..n).collect(),
            _ => net.generators().to_vec(),
        };
        self.rows
            .iter()
            .enumerate()
            .map(|(k, row)| {
                let get = |c: usize| {
                    row[c].ok_or_else(|| CliError::usage(format!("trajectory row {} has a blank state cell", k + 2)))
                };
                let pick = |cols: &[usize]| cols.iter().map(|&c| get(c)).collect::<Result<Vec<f64>>>();
                let omega_all = pick(&omega)?;
                Ok(Record {
                    step: k,
                    t: get(t)?,
                    delta: pick(&delta)?,
                    omega_dyn: dyn_buses.iter().map(|&i| omega_all[i]).collect(),
                    s: pick(&s)?,
                    omega: omega_all,
                    u: pick(&u)?,
                    mc: pick(&mc)?,
                })
            })
            .collect()
    }
}
