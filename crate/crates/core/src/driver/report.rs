//! Best-model tables and scatter exports of a trial log.

use serde::{Deserialize, Serialize};

use super::log::{Trial, TrialLog};
use crate::error::{Error, Result};

/// Top `k` successful trials by fitness; earlier trials win ties.
pub fn report_best(log: &TrialLog, k: usize) -> Result<Vec<&Trial>> {
    let mut ok: Vec<&Trial> = log.successful().collect();
    if ok.is_empty() {
        return Err(Error::EmptyReport);
    }
    ok.sort_by(|a, b| b.fitness.total_cmp(&a.fitness).then(a.index.cmp(&b.index)));
    ok.truncate(k);
    Ok(ok)
}

/// Formats with `sig` significant digits and no trailing zeros.
fn sig(x: f64, sig: usize) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let magnitude = x.abs().log10().floor() as i32;
    let decimals = (sig as i32 - 1 - magnitude).max(0) as usize;
    let s = format!("{x:.decimals$}");
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

/// Renders rows as a plain-text table: one `BTi/Ki` column per block, then
/// accuracy (%), latency (ms), energy (mJ) and fitness.
pub fn render_best_table(rows: &[&Trial]) -> String {
    let width = rows.iter().map(|t| t.depth()).max().unwrap_or(0);
    let mut header: Vec<String> = vec!["trial".into()];
    header.extend((1..=width).map(|i| format!("BT{i}/K{i}")));
    header.extend(
        ["Accuracy", "Latency (ms)", "Energy (mJ)", "Fitness"]
            .iter()
            .map(|s| s.to_string()),
    );

    let mut table: Vec<Vec<String>> = vec![header];
    for t in rows {
        let mut row = vec![t.index.to_string()];
        row.extend(t.genome.blocks.iter().map(|b| b.to_string()));
        row.extend(std::iter::repeat_n("-".to_string(), width - t.depth()));
        row.push(format!("{:.2}%", t.accuracy.unwrap_or(0.0) * 100.0));
        row.push(sig(t.latency_ms, 3));
        row.push(sig(t.energy_mj, 3));
        row.push(sig(t.fitness, 5));
        table.push(row);
    }

    let cols = table[0].len();
    let widths: Vec<usize> = (0..cols)
        .map(|c| table.iter().map(|r| r[c].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in &table {
        let line: Vec<String> = row
            .iter()
            .zip(&widths)
            .map(|(cell, w)| format!("{cell:<w$}"))
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterRow {
    pub trial: usize,
    pub accuracy: f64,
    pub latency_ms: f64,
    pub energy_mj: f64,
    pub fitness: f64,
    pub depth: usize,
    pub genome: String,
    pub best: bool,
}

/// CSV with one row per successful trial and the best trial flagged. Failed
/// trials are skipped and counted in a trailing `#` comment line.
pub fn export_scatter(log: &TrialLog) -> Result<String> {
    let best = report_best(log, 1).ok().map(|rows| rows[0].index);
    let mut writer = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(Vec::new());
    writer.write_record([
        "trial",
        "accuracy",
        "latency_ms",
        "energy_mj",
        "fitness",
        "depth",
        "genome",
        "best",
    ])?;
    for t in log.successful() {
        writer.serialize(ScatterRow {
            trial: t.index,
            accuracy: t.accuracy.unwrap_or(0.0),
            latency_ms: t.latency_ms,
            energy_mj: t.energy_mj,
            fitness: t.fitness,
            depth: t.depth(),
            genome: t.genome.encode(),
            best: Some(t.index) == best,
        })?;
    }
    let mut out = String::from_utf8(
        writer
            .into_inner()
            .map_err(|e| Error::io("flushing csv", e.into_error()))?,
    )
    .expect("csv output is utf-8");
    let failed = log.len() - log.successful().count();
    if failed > 0 {
        out.push_str(&format!("# skipped {failed} failed trials\n"));
    }
    Ok(out)
}

pub fn parse_scatter(text: &str) -> Result<Vec<ScatterRow>> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    Ok(reader.deserialize().collect::<std::result::Result<_, _>>()?)
}
