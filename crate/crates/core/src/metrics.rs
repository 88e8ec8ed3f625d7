//! CSV metrics stream shared by the sequential trainer and the gossip
//! executor: `iteration,cost,rmse_test,messages_sent,rounds`, with cells
//! left empty when a quantity does not apply.

use std::io::Write;

pub const METRICS_HEADER: &str = "iteration,cost,rmse_test,messages_sent,rounds";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRow {
    pub iteration: u64,
    pub cost: Option<f64>,
    pub rmse_test: Option<f64>,
    pub messages_sent: Option<u64>,
    pub rounds: Option<u64>,
}

pub struct MetricsWriter<W: Write> {
    out: W,
}

impl<W: Write> MetricsWriter<W> {
    /// Wrap a sink and emit the header line.
    pub fn new(mut out: W) -> std::io::Result<MetricsWriter<W>> {
        writeln!(out, "{METRICS_HEADER}")?;
        Ok(MetricsWriter { out })
    }

    pub fn write_row(&mut self, row: &MetricsRow) -> std::io::Result<()> {
        let fmt_f = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let fmt_u = |v: Option<u64>| v.map(|x| x.to_string()).unwrap_or_default();
        writeln!(
            self.out,
            "{},{},{},{},{}",
            row.iteration,
            fmt_f(row.cost),
            fmt_f(row.rmse_test),
            fmt_u(row.messages_sent),
            fmt_u(row.rounds),
        )
    }

    pub fn flush(&mut self) -> std::io::Result<()> {
        self.out.flush()
    }
}
