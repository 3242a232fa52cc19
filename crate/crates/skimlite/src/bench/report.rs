//! Benchmark report rendering: JSON, CSV, and an aligned text table.
//! The JSON layout is documented by `docs/report.schema.json`.

use serde::{Deserialize, Serialize};

use crate::bench::harness::ModeRow;
use crate::error::{Result, SkimError};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchReport {
    /// Client-link throttle, bytes per second.
    pub rate: u64,
    pub dataset: String,
    pub n_events: u64,
    pub rows: Vec<ModeRow>,
}

impl BenchReport {
    pub fn new(rate: u64, dataset: impl Into<String>, n_events: u64, rows: Vec<ModeRow>) -> BenchReport {
        BenchReport { rate, dataset: dataset.into(), n_events, rows }
    }

    fn baseline_wall(&self) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.mode == "client_naive")
            .or(self.rows.first())
            .map(|r| r.timing.total_wall)
    }

    /// Wall-clock speedup of each row against client_naive (or the first
    /// row when client_naive was not run).
    pub fn speedups(&self) -> Vec<(String, f64)> {
        let base = self.baseline_wall().unwrap_or(0.0);
        self.rows
            .iter()
            .map(|r| {
                let s = if r.timing.total_wall > 0.0 { base / r.timing.total_wall } else { 0.0 };
                (r.mode.clone(), s)
            })
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| SkimError::format(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<BenchReport> {
        serde_json::from_str(text).map_err(|e| SkimError::format(e.to_string()))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "mode,wall_s,speedup,basket_fetch_s,decompress_s,deserialize_s,select_s,write_s,\
             result_transfer_s,cpu_s,cpu_ratio,client_bytes,client_requests,storage_bytes,\
             storage_requests,n_passed,output_bytes\n",
        );
        let speedups = self.speedups();
        for (row, (_, speedup)) in self.rows.iter().zip(&speedups) {
            let t = &row.timing;
            out.push_str(&format!(
                "{},{:.4},{:.2},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},{:.3},{},{},{},{},{},{}\n",
                row.mode,
                t.total_wall,
                speedup,
                t.basket_fetch,
                t.decompress,
                t.deserialize,
                t.select,
                t.write,
                t.result_transfer,
                t.cpu_time,
                row.cpu_ratio,
                row.client_bytes,
                row.client_requests,
                row.storage_bytes,
                row.storage_requests,
                row.n_passed,
                row.output_bytes,
            ));
        }
        out
    }

    /// Human-readable comparison table.
    pub fn to_table(&self) -> String {
        let headers = [
            "mode", "wall[s]", "speedup", "fetch[s]", "decomp[s]", "deser[s]", "select[s]",
            "write[s]", "xfer[s]", "cpu%", "client MB", "reqs", "storage MB", "passed",
        ];
        let speedups = self.speedups();
        let mut cells: Vec<Vec<String>> = vec![headers.iter().map(|s| s.to_string()).collect()];
        for (row, (_, speedup)) in self.rows.iter().zip(&speedups) {
            let t = &row.timing;
            cells.push(vec![
                row.mode.clone(),
                format!("{:.2}", t.total_wall),
                format!("{speedup:.1}x"),
                format!("{:.2}", t.basket_fetch),
                format!("{:.2}", t.decompress),
                format!("{:.2}", t.deserialize),
                format!("{:.2}", t.select),
                format!("{:.2}", t.write),
                format!("{:.2}", t.result_transfer),
                format!("{:.0}", row.cpu_ratio * 100.0),
                format!("{:.1}", row.client_bytes as f64 / 1e6),
                row.client_requests.to_string(),
                format!("{:.1}", row.storage_bytes as f64 / 1e6),
                row.n_passed.to_string(),
            ]);
        }
        let widths: Vec<usize> = (0..headers.len())
            .map(|c| cells.iter().map(|r| r[c].len()).max().unwrap())
            .collect();
        let mut out = String::new();
        for (i, row) in cells.iter().enumerate() {
            for (c, cell) in row.iter().enumerate() {
                if c > 0 {
                    out.push_str("  ");
                }
                out.push_str(&format!("{:>width$}", cell, width = widths[c]));
            }
            out.push('\n');
            if i == 0 {
                let total: usize = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
                out.push_str(&"-".repeat(total));
                out.push('\n');
            }
        }
        out
    }
}
