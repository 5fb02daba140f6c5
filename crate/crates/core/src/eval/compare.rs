use serde::{Deserialize, Serialize};

use super::MetricsReport;
use crate::error::{Error, Result};

/// Percentage change from `base` to `value`; `None` when `base` is zero.
pub fn pct_delta(base: f64, value: f64) -> Option<f64> {
    (base != 0.0).then(|| (value - base) / base.abs() * 100.0)
}

/// Signed, one decimal: `+18.4%`. Values that round to zero print as `+0.0%`.
pub fn format_delta(d: Option<f64>) -> String {
    match d {
        Some(d) => format!("{:+.1}%", (d * 10.0).round() / 10.0 + 0.0),
        None => "n/a".to_string(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub metric: String,
    pub values: Vec<f64>,
    /// Change against the first column; the first entry is always zero.
    pub deltas: Vec<Option<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub names: Vec<String>,
    pub rows: Vec<ComparisonRow>,
}

/// Tabulates reports side by side with changes relative to the first.
pub fn compare(reports: &[(String, MetricsReport)]) -> Result<Comparison> {
    if reports.len() < 2 {
        return Err(Error::Contract("compare needs at least two reports".into()));
    }
    type Column = (&'static str, fn(&MetricsReport) -> f64);
    let metrics: [Column; 6] = [
        ("mean_speed", |r| r.mean_speed),
        ("std_speed", |r| r.std_speed),
        ("p_WEs_pct", |r| r.p_wes * 100.0),
        ("p_SCEs_pct", |r| r.p_sces * 100.0),
        ("collision_episode_pct", |r| r.collision_episode_rate * 100.0),
        ("mean_return", |r| r.mean_return),
    ];
    let rows = metrics
        .iter()
        .map(|(name, f)| {
            let values: Vec<f64> = reports.iter().map(|(_, r)| f(r)).collect();
            let deltas = values.iter().map(|&v| pct_delta(values[0], v)).collect();
            ComparisonRow { metric: name.to_string(), values, deltas }
        })
        .collect();
    Ok(Comparison { names: reports.iter().map(|(n, _)| n.clone()).collect(), rows })
}

impl Comparison {
    /// Plain-text table; every column after the first shows `value (delta)`.
    pub fn to_table(&self) -> String {
        let mut out = format!("{:<22}", "metric");
        for n in &self.names {
            out.push_str(&format!(" {n:>24}"));
        }
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!("{:<22}", r.metric));
            for (i, (v, d)) in r.values.iter().zip(&r.deltas).enumerate() {
                let cell = if i == 0 { format!("{v:.2}") } else { format!("{v:.2} ({})", format_delta(*d)) };
                out.push_str(&format!(" {cell:>24}"));
            }
            out.push('\n');
        }
        out
    }
}
