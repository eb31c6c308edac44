use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::Mode;
use crate::error::{Error, Result};
use crate::protocol::LedgerReport;
use crate::security::{final_key_length, key_rate_at, SecurityParams};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelayRow {
    pub d: u32,
    pub sifted: u64,
    pub errors: u64,
    pub e_bit: f64,
}

/// Session counts together with the derived key figures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionReport {
    pub schema_version: u32,
    pub mode: Mode,
    pub seed: Option<u64>,
    pub pulses: u32,
    pub mu: f64,
    pub rounds_sent: u64,
    pub sifted_bits: u64,
    pub gain: f64,
    pub e_bit: f64,
    pub per_delay: Vec<DelayRow>,
    pub n_th: Option<u32>,
    pub q_nth: f64,
    pub h_pa: f64,
    pub ec_cost: f64,
    pub rate_per_round: f64,
    pub final_key_bits: u64,
    pub key_rate_bps: f64,
    pub duration_s: f64,
    pub insecure: bool,
}

impl SessionReport {
    /// Fills the security columns from `gain` and `e_bit`.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn assemble(
        mode: Mode,
        seed: Option<u64>,
        pulses: u32,
        mu: f64,
        rounds_sent: u64,
        sifted_bits: u64,
        gain: f64,
        e_bit: f64,
        per_delay: Vec<DelayRow>,
        duration_s: f64,
        trains_per_second: f64,
    ) -> Result<Self> {
        let params = SecurityParams {
            pulses,
            mu,
            gain,
            e_bit,
        };
        params
            .validate()
            .map_err(|e| Error::Infeasible(e.to_string()))?;
        let b = key_rate_at(&params, trains_per_second)?;
        let final_key_bits = final_key_length(b.rate_per_round, rounds_sent);
        Ok(SessionReport {
            schema_version: REPORT_SCHEMA_VERSION,
            mode,
            seed,
            pulses,
            mu,
            rounds_sent,
            sifted_bits,
            gain,
            e_bit,
            per_delay,
            n_th: b.n_th,
            q_nth: b.q_nth,
            h_pa: b.h_pa,
            ec_cost: b.ec_cost,
            rate_per_round: b.rate_per_round,
            final_key_bits,
            key_rate_bps: if duration_s > 0.0 {
                final_key_bits as f64 / duration_s
            } else {
                0.0
            },
            duration_s,
            insecure: b.insecure,
        })
    }

    pub(crate) fn rows_from_ledger(report: &LedgerReport) -> Vec<DelayRow> {
        report
            .per_delay
            .iter()
            .map(|(d, t)| DelayRow {
                d: *d,
                sifted: t.sifted,
                errors: t.errors,
                e_bit: t.error_rate(),
            })
            .collect()
    }

    /// Recomputes the final key length from this report's own gain and error.
    pub fn recomputed_final_key(&self) -> Result<u64> {
        let params = SecurityParams::new(self.pulses, self.mu, self.gain, self.e_bit)?;
        let b = key_rate_at(&params, 1.0)?;
        Ok(final_key_length(b.rate_per_round, self.rounds_sent))
    }

    pub fn summary_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Codec(e.to_string()))
    }

    pub fn from_summary_json(text: &str) -> Result<Self> {
        let report: SessionReport =
            serde_json::from_str(text).map_err(|e| Error::Codec(e.to_string()))?;
        if report.schema_version != REPORT_SCHEMA_VERSION {
            return Err(Error::Codec(format!(
                "unsupported report schema {}",
                report.schema_version
            )));
        }
        Ok(report)
    }

    /// `d,sifted,errors,e_bit` for every delay.
    pub fn delay_table_csv(&self) -> String {
        let mut out = String::from("d,sifted,errors,e_bit\n");
        for row in &self.per_delay {
            let _ = writeln!(out, "{},{},{},{}", row.d, row.sifted, row.errors, row.e_bit);
        }
        out
    }

    /// Human-readable one-screen summary.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "mode              {}", self.mode);
        let _ = writeln!(s, "total rounds      {}", self.rounds_sent);
        let _ = writeln!(s, "sifted key        {}", self.sifted_bits);
        let _ = writeln!(s, "Q                 {:.5}", self.gain);
        let _ = writeln!(s, "mu                {}", self.mu);
        let _ = writeln!(s, "e_bit             {:.2}%", self.e_bit * 100.0);
        let _ = writeln!(s, "L                 {}", self.pulses);
        match self.n_th {
            Some(n) => {
                let _ = writeln!(s, "n_th              {n}");
            }
            None => {
                let _ = writeln!(s, "n_th              -");
            }
        }
        let _ = writeln!(s, "QH_PA             {:.4e}", self.h_pa);
        let _ = writeln!(s, "rate per round    {:.4e}", self.rate_per_round);
        let _ = writeln!(s, "final key length  {:.4e}", self.final_key_bits as f64);
        let _ = writeln!(s, "duration          {:.1} s", self.duration_s);
        let _ = writeln!(s, "key rate          {:.2} bps", self.key_rate_bps);
        if self.insecure {
            let _ = writeln!(s, "status            INSECURE (no positive key rate)");
        }
        s
    }
}

/// Where [`emit_report`] writes.
#[derive(Debug, Clone)]
pub struct ReportPaths {
    pub summary: PathBuf,
    pub delay_table: PathBuf,
}

impl ReportPaths {
    /// `summary.json` and `per_delay.csv` inside `dir`.
    pub fn in_dir(dir: &Path) -> Self {
        ReportPaths {
            summary: dir.join("summary.json"),
            delay_table: dir.join("per_delay.csv"),
        }
    }
}

pub fn emit_report(report: &SessionReport, paths: &ReportPaths) -> Result<()> {
    for path in [&paths.summary, &paths.delay_table] {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    std::fs::write(&paths.summary, report.summary_json()?)
        .map_err(|e| Error::io(&paths.summary, e))?;
    std::fs::write(&paths.delay_table, report.delay_table_csv())
        .map_err(|e| Error::io(&paths.delay_table, e))?;
    Ok(())
}

pub fn read_summary(path: &Path) -> Result<SessionReport> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    SessionReport::from_summary_json(&text)
}
