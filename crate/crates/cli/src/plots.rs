//! Plot-data emission: per-preference learning-curve aggregates across
//! seeds and merged Pareto-front points, as plain CSV.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use qpensieve_core::metrics::{pareto_filter, ReturnPoint, ReturnSet};
use qpensieve_core::momdp::{Preference, RewardVector};

use crate::runner::load_curve;
use crate::HarnessError;

/// Sample standard deviation (n - 1 denominator); zero for fewer than two
/// samples.
fn sample_std(values: &[f64], mean: f64) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (ss / (values.len() - 1) as f64).sqrt()
}

fn pref_key(p: &Preference) -> String {
    p.weights().iter().map(|w| w.to_string()).collect::<Vec<_>>().join(",")
}

/// Aggregates `run-*/learning_curve.csv` under `runs_dir` into
/// `curve_pref_<i>.csv` files with schema `env_step,mean,std,n`, plus a
/// `preferences.csv` index. Runs with mismatched evaluation cadences are
/// rejected.
pub fn emit_plot_data(runs_dir: &Path, out_dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    let mut run_dirs: Vec<PathBuf> = fs::read_dir(runs_dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            p.is_dir()
                && p.file_name()
                    .and_then(|n| n.to_str())
                    .map(|n| n.starts_with("run-"))
                    .unwrap_or(false)
        })
        .collect();
    run_dirs.sort();
    if run_dirs.is_empty() {
        return Err(HarnessError::config(format!(
            "no run-* directories under {}",
            runs_dir.display()
        )));
    }
    fs::create_dir_all(out_dir)?;

    // preference key -> env_step -> per-seed returns
    let mut series: BTreeMap<String, (Preference, BTreeMap<u64, Vec<f64>>)> = BTreeMap::new();
    let mut step_axis: Option<Vec<u64>> = None;
    for run_dir in &run_dirs {
        let records = load_curve(run_dir)?;
        let mut steps: Vec<u64> = records.iter().map(|r| r.env_step).collect();
        steps.dedup();
        match &step_axis {
            None => step_axis = Some(steps),
            Some(axis) if *axis == steps => {}
            Some(_) => {
                return Err(HarnessError::config(format!(
                    "{}: evaluation cadence differs from the other runs",
                    run_dir.display()
                )));
            }
        }
        for r in records {
            let entry = series
                .entry(pref_key(&r.preference))
                .or_insert_with(|| (r.preference.clone(), BTreeMap::new()));
            entry.1.entry(r.env_step).or_default().push(r.scalarized_return);
        }
    }

    let mut written = Vec::new();
    let mut index = Vec::new();
    writeln!(index, "pref_index,weights")?;
    for (i, (_, (pref, by_step))) in series.iter().enumerate() {
        let path = out_dir.join(format!("curve_pref_{i}.csv"));
        let mut csv = Vec::new();
        writeln!(csv, "env_step,mean,std,n")?;
        for (step, values) in by_step {
            let n = values.len();
            let mean: f64 = values.iter().sum::<f64>() / n as f64;
            let std = sample_std(values, mean);
            writeln!(csv, "{step},{mean},{std},{n}")?;
        }
        fs::write(&path, csv)?;
        writeln!(index, "{i},\"{}\"", pref_key(pref))?;
        written.push(path);
    }
    let index_path = out_dir.join("preferences.csv");
    fs::write(&index_path, index)?;
    written.push(index_path);

    // Merge per-run fronts, when present, into one non-dominated set.
    let mut merged = Vec::new();
    for run_dir in &run_dirs {
        let front = run_dir.join("front.csv");
        if front.exists() {
            merged.extend(read_front_points(&front)?);
        }
    }
    if !merged.is_empty() {
        let filtered = pareto_filter(&ReturnSet { points: merged });
        let d = filtered.points[0].value.dim();
        let path = out_dir.join("front_points.csv");
        let mut csv = Vec::new();
        let pref_cols: Vec<String> = (0..d).map(|i| format!("pref_{i}")).collect();
        let ret_cols: Vec<String> = (0..d).map(|i| format!("ret_{i}")).collect();
        writeln!(csv, "{},{},seed", pref_cols.join(","), ret_cols.join(","))?;
        for p in &filtered.points {
            let pref = p
                .preference
                .as_ref()
                .map(|x| pref_key(x))
                .unwrap_or_else(|| vec![""; d].join(","));
            let ret: Vec<String> = p.value.values.iter().map(|v| v.to_string()).collect();
            writeln!(
                csv,
                "{},{},{}",
                pref,
                ret.join(","),
                p.seed.map_or(String::new(), |s| s.to_string())
            )?;
        }
        fs::write(&path, csv)?;
        written.push(path);
    }
    Ok(written)
}

fn read_front_points(path: &Path) -> Result<Vec<ReturnPoint>, HarnessError> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default();
    let cols: Vec<&str> = header.split(',').collect();
    let pref_idx: Vec<usize> = cols
        .iter()
        .enumerate()
        .filter(|(_, c)| c.starts_with("pref_"))
        .map(|(i, _)| i)
        .collect();
    let ret_idx: Vec<usize> = cols
        .iter()
        .enumerate()
        .filter(|(_, c)| c.starts_with("ret_"))
        .map(|(i, _)| i)
        .collect();
    let seed_idx = cols.iter().position(|c| *c == "seed");
    let mut points = Vec::new();
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        let bad = |e: String| HarnessError::config(format!("{}: {e}", path.display()));
        let weights: Vec<f64> = pref_idx
            .iter()
            .map(|&i| f[i].parse::<f64>().map_err(|e| bad(e.to_string())))
            .collect::<Result<_, _>>()?;
        let values: Vec<f64> = ret_idx
            .iter()
            .map(|&i| f[i].parse::<f64>().map_err(|e| bad(e.to_string())))
            .collect::<Result<_, _>>()?;
        let seed = seed_idx.and_then(|i| f.get(i)).and_then(|s| s.parse::<u64>().ok());
        points.push(ReturnPoint {
            value: RewardVector::new(values),
            preference: Some(Preference::new(weights).map_err(|e| bad(e.to_string()))?),
            seed,
        });
    }
    Ok(points)
}
