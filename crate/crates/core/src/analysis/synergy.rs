use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiment::Workspace;
use crate::metrics::{MetricsTable, REPORT_METRICS};
use crate::tasks::SocialTask;
use crate::train::Regime;

/// The sixteen runs of a sweep: five single-task runs, ten pairs, one joint.
pub fn sweep_regimes() -> Vec<Regime> {
    let mut out: Vec<Regime> = SocialTask::ALL.into_iter().map(Regime::Single).collect();
    out.extend(Regime::all_pairs());
    out.push(Regime::Joint);
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub regime: Regime,
    pub metrics: MetricsTable,
}

/// Completed runs recorded in a line-delimited JSON ledger.
pub fn read_ledger(path: &Path) -> Result<BTreeMap<String, MetricsTable>> {
    let mut out = BTreeMap::new();
    if !path.exists() {
        return Ok(out);
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        // a torn final line from an interrupted write is ignored
        match serde_json::from_str::<LedgerEntry>(line) {
            Ok(e) => {
                out.insert(e.regime.slug(), e.metrics);
            }
            Err(e) => log::warn!("{}:{}: unreadable ledger line skipped ({e})", path.display(), i + 1),
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynergyRow {
    pub task_one: String,
    pub task_two: String,
    /// One cell per report column; `None` where the run did not train the task.
    pub cells: Vec<Option<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynergyGrid {
    pub rows: Vec<SynergyRow>,
}

impl SynergyGrid {
    /// Ten pair rows followed by the single-task and joint rows. Completed
    /// runs are looked up by regime slug.
    pub fn from_results(results: &BTreeMap<String, MetricsTable>) -> Self {
        let cells = |t: &MetricsTable, tasks: &[SocialTask]| -> Vec<Option<f64>> {
            REPORT_METRICS
                .iter()
                .map(|k| {
                    if tasks.contains(&k.task) {
                        t.get(k.task, k.metric)
                    } else {
                        None
                    }
                })
                .collect()
        };
        let empty = MetricsTable::default();
        let mut rows = Vec::new();
        for p in Regime::all_pairs() {
            let Regime::Pair(a, b) = p else { unreachable!() };
            let t = results.get(&p.slug()).unwrap_or(&empty);
            rows.push(SynergyRow {
                task_one: a.display_name().into(),
                task_two: b.display_name().into(),
                cells: cells(t, &[a, b]),
            });
        }
        let mut single = MetricsTable::default();
        for t in SocialTask::ALL {
            if let Some(m) = results.get(&Regime::Single(t).slug()) {
                single.merge(m);
            }
        }
        rows.push(SynergyRow {
            task_one: "Single-task training".into(),
            task_two: String::new(),
            cells: cells(&single, &SocialTask::ALL),
        });
        rows.push(SynergyRow {
            task_one: "Joint training".into(),
            task_two: String::new(),
            cells: cells(results.get(&Regime::Joint.slug()).unwrap_or(&empty), &SocialTask::ALL),
        });
        Self { rows }
    }

    /// Blank cells mark tasks a row's run was not trained on.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("task_one,task_two");
        for k in &REPORT_METRICS {
            let _ = write!(s, ",{} {}", k.task.display_name(), k.metric);
        }
        s.push('\n');
        for r in &self.rows {
            let cells: Vec<String> = r
                .cells
                .iter()
                .map(|c| c.map(|v| format!("{v}")).unwrap_or_default())
                .collect();
            let _ = writeln!(s, "{},{},{}", r.task_one, r.task_two, cells.join(","));
        }
        s
    }
}

/// Runs every regime of [`sweep_regimes`] not already in `out/ledger.jsonl`,
/// up to `jobs` at a time, then writes `out/synergy.csv`. Each run lives in
/// `out/runs/<regime>`.
pub fn synergy_sweep(ws: &Workspace, out: &Path, jobs: usize, epochs: Option<usize>) -> Result<SynergyGrid> {
    fs::create_dir_all(out.join("runs")).map_err(|e| Error::io(out, e))?;
    let ledger_path = out.join("ledger.jsonl");
    let done = read_ledger(&ledger_path)?;
    let pending: Vec<Regime> = sweep_regimes()
        .into_iter()
        .filter(|r| !done.contains_key(&r.slug()))
        .collect();
    log::info!("synergy sweep: {} of 16 runs pending", pending.len());

    let queue = Mutex::new(pending.into_iter());
    let results = Mutex::new(done);
    let failure: Mutex<Option<Error>> = Mutex::new(None);
    let ledger = Mutex::new(());
    std::thread::scope(|scope| {
        for _ in 0..jobs.max(1) {
            scope.spawn(|| loop {
                if failure.lock().expect("lock").is_some() {
                    return;
                }
                let Some(regime) = queue.lock().expect("lock").next() else {
                    return;
                };
                let dir = out.join("runs").join(regime.slug());
                let outcome = ws.run_with_epochs(&regime, &dir, epochs).and_then(|o| {
                    let entry = LedgerEntry {
                        regime: regime.clone(),
                        metrics: o.metrics,
                    };
                    let _guard = ledger.lock().expect("lock");
                    let mut f = OpenOptions::new()
                        .create(true)
                        .append(true)
                        .open(&ledger_path)
                        .map_err(|e| Error::io(&ledger_path, e))?;
                    writeln!(f, "{}", serde_json::to_string(&entry)?).map_err(|e| Error::io(&ledger_path, e))?;
                    Ok(entry)
                });
                match outcome {
                    Ok(e) => {
                        results.lock().expect("lock").insert(e.regime.slug(), e.metrics);
                    }
                    Err(e) => {
                        failure.lock().expect("lock").get_or_insert(e);
                        return;
                    }
                }
            });
        }
    });
    if let Some(e) = failure.into_inner().expect("lock") {
        return Err(e);
    }
    let grid = SynergyGrid::from_results(&results.into_inner().expect("lock"));
    let csv = out.join("synergy.csv");
    fs::write(&csv, grid.to_csv()).map_err(|e| Error::io(&csv, e))?;
    Ok(grid)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sixteen_runs() {
        let r = sweep_regimes();
        assert_eq!(r.len(), 16);
        assert_eq!(r.iter().filter(|x| matches!(x, Regime::Pair(..))).count(), 10);
    }

    #[test]
    fn pair_rows_blank_untrained_tasks() {
        let mut results = BTreeMap::new();
        let mut t = MetricsTable::default();
        for k in &REPORT_METRICS {
            t.insert(k.task, k.metric, 0.5);
        }
        results.insert(Regime::Pair(SocialTask::GazeFollow, SocialTask::Pisc).slug(), t.clone());
        results.insert(Regime::Joint.slug(), t);
        let g = SynergyGrid::from_results(&results);
        assert_eq!(g.rows.len(), 12);
        let row = g
            .rows
            .iter()
            .find(|r| r.task_one == "GazeFollow" && r.task_two == "PISC")
            .unwrap();
        for (k, c) in REPORT_METRICS.iter().zip(&row.cells) {
            let trained = matches!(k.task, SocialTask::GazeFollow | SocialTask::Pisc);
            assert_eq!(c.is_some(), trained, "{:?}", k);
        }
        assert!(g.rows[11].cells.iter().all(Option::is_some));
        assert!(g.rows[10].cells.iter().all(Option::is_none));
    }
}
