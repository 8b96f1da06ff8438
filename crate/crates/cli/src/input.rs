//! Long-format panel CSV reader.
//!
//! Required columns are `unit,time,outcome,treated`. Optional `size` and
//! `m_hat` columns are recognized by name, the column named by `--balance`
//! is read as a 0/1 unit flag, and every other column is a unit-level
//! covariate.

use std::collections::HashMap;
use std::path::Path;

use fewtreated::{validate_panel, Covariates, Error, Panel, RawPanel, Result};

const REQUIRED: [&str; 4] = ["unit", "time", "outcome", "treated"];

#[derive(Debug)]
pub struct PanelInput {
    pub panel: Panel,
    pub balance: Option<Vec<bool>>,
    /// Fitted counterfactual of the first treated unit, one value per period.
    pub m_hat: Option<Vec<f64>>,
}

fn input_err(msg: impl Into<String>) -> Error {
    Error::Input(msg.into())
}

fn parse_num(s: &str, what: &str, line: u64) -> Result<f64> {
    s.trim().parse().map_err(|_| input_err(format!("line {line}: cannot parse {what} '{s}'")))
}

fn parse_flag(s: &str, what: &str, line: u64) -> Result<bool> {
    match s.trim() {
        "1" | "1.0" | "true" | "TRUE" => Ok(true),
        "0" | "0.0" | "false" | "FALSE" => Ok(false),
        other => Err(input_err(format!("line {line}: {what} must be 0 or 1, got '{other}'"))),
    }
}

fn index_of(map: &mut HashMap<String, usize>, names: &mut Vec<String>, key: &str) -> usize {
    if let Some(&i) = map.get(key) {
        return i;
    }
    names.push(key.to_string());
    map.insert(key.to_string(), names.len() - 1);
    names.len() - 1
}

/// Store a unit-level value, insisting it does not vary over time.
fn set_unit_value<T: PartialEq + Copy + std::fmt::Debug>(slot: &mut Option<T>, v: T, what: &str, unit: &str) -> Result<()> {
    match slot {
        Some(old) if *old != v => Err(input_err(format!("{what} varies over time for unit '{unit}' ({old:?} vs {v:?})"))),
        _ => {
            *slot = Some(v);
            Ok(())
        }
    }
}

pub fn read_panel(path: &Path, balance_col: Option<&str>) -> Result<PanelInput> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| input_err(format!("{}: {e}", path.display())))?;
    let headers = rdr.headers().map_err(|e| input_err(e.to_string()))?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let mut req = [0usize; 4];
    for (slot, name) in req.iter_mut().zip(REQUIRED) {
        *slot = col(name).ok_or_else(|| input_err(format!("missing required column '{name}'")))?;
    }
    let size_col = col("size");
    let mhat_col = col("m_hat");
    let bal_col = match balance_col {
        Some(b) => Some(col(b).ok_or_else(|| input_err(format!("missing balance column '{b}'")))?),
        None => None,
    };
    let cov_cols: Vec<usize> = (0..headers.len())
        .filter(|i| !req.contains(i) && Some(*i) != size_col && Some(*i) != mhat_col && Some(*i) != bal_col)
        .collect();

    let (mut unit_map, mut time_map) = (HashMap::new(), HashMap::new());
    let (mut units, mut periods) = (Vec::new(), Vec::new());
    // (unit, period, outcome, treated, m_hat)
    let mut cells: Vec<(usize, usize, Option<f64>, bool, Option<f64>)> = Vec::new();
    let mut sizes: Vec<Option<f64>> = Vec::new();
    let mut bal: Vec<Option<bool>> = Vec::new();
    let mut cov: Vec<Vec<Option<f64>>> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| input_err(e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        let u = index_of(&mut unit_map, &mut units, &rec[req[0]]);
        let t = index_of(&mut time_map, &mut periods, &rec[req[1]]);
        if u == sizes.len() {
            sizes.push(None);
            bal.push(None);
            cov.push(vec![None; cov_cols.len()]);
        }
        let y = match rec[req[2]].trim() {
            "" | "NA" | "NaN" => None,
            s => Some(parse_num(s, "outcome", line)?),
        };
        let d = parse_flag(&rec[req[3]], "treated", line)?;
        let m = match mhat_col {
            Some(c) if !rec[c].trim().is_empty() => Some(parse_num(&rec[c], "m_hat", line)?),
            _ => None,
        };
        if let Some(c) = size_col {
            set_unit_value(&mut sizes[u], parse_num(&rec[c], "size", line)?, "size", &units[u])?;
        }
        if let Some(c) = bal_col {
            set_unit_value(&mut bal[u], parse_flag(&rec[c], "balance", line)?, "balance", &units[u])?;
        }
        for (k, &c) in cov_cols.iter().enumerate() {
            let v = parse_num(&rec[c], headers.get(c).unwrap_or("covariate"), line)?;
            set_unit_value(&mut cov[u][k], v, &headers[c], &units[u])?;
        }
        cells.push((u, t, y, d, m));
    }
    let (n, t) = (units.len(), periods.len());
    let mut outcomes = vec![vec![None; t]; n];
    let mut treat = vec![vec![false; t]; n];
    let mut mhat = vec![vec![None; t]; n];
    let mut seen = vec![vec![false; t]; n];
    for &(u, p, y, d, m) in &cells {
        if seen[u][p] {
            return Err(input_err(format!("duplicate row for unit '{}' time '{}'", units[u], periods[p])));
        }
        seen[u][p] = true;
        outcomes[u][p] = y;
        treat[u][p] = d;
        mhat[u][p] = m;
    }
    let treated_units: Vec<usize> = (0..n).filter(|&u| treat[u].iter().any(|&d| d)).collect();
    let post_periods: Vec<usize> = (0..t).filter(|&p| (0..n).any(|u| treat[u][p])).collect();
    for &u in &treated_units {
        for p in 0..t {
            if seen[u][p] && treat[u][p] != post_periods.contains(&p) {
                return Err(input_err(format!(
                    "treatment of unit '{}' does not follow the common block pattern at time '{}'",
                    units[u], periods[p]
                )));
            }
        }
    }
    let covariates = if cov_cols.is_empty() {
        None
    } else {
        Some(Covariates {
            names: cov_cols.iter().map(|&c| headers[c].to_string()).collect(),
            rows: cov.iter().map(|r| r.iter().map(|v| v.unwrap_or(f64::NAN)).collect()).collect(),
        })
    };
    let unit_sizes = size_col.map(|_| sizes.iter().map(|s| s.unwrap_or(f64::NAN)).collect());
    let panel = validate_panel(RawPanel { outcomes, treated_units: treated_units.clone(), post_periods, covariates, unit_sizes })?;
    let balance = bal_col.map(|_| bal.iter().map(|b| b.unwrap_or(false)).collect());
    let m_hat = match mhat_col {
        Some(_) => {
            let u = treated_units[0];
            let row = mhat[u]
                .iter()
                .enumerate()
                .map(|(p, m)| m.ok_or_else(|| input_err(format!("m_hat missing for unit '{}' at time '{}'", units[u], periods[p]))))
                .collect::<Result<Vec<f64>>>()?;
            Some(row)
        }
        None => None,
    };
    Ok(PanelInput { panel, balance, m_hat })
}
