//! CSV export of episode traces.

use std::io::{self, Write};

use crate::simloop::TraceRow;

pub const CSV_HEADER: &str = "t,p,theta,p_dot,theta_dot,x_est,v_est,d,d_prime,u,force,reference";

/// Shortest decimal text of `value` rounded to 9 significant digits.
pub fn format_sig9(value: f64) -> String {
    if value == 0.0 {
        return "0".to_owned();
    }
    if !value.is_finite() {
        return value.to_string();
    }
    let rounded: f64 = format!("{value:.8e}").parse().unwrap_or(value);
    format!("{rounded}")
}

fn fields(row: &TraceRow) -> [f64; 12] {
    [
        row.t,
        row.state.p,
        row.state.theta,
        row.state.p_dot,
        row.state.theta_dot,
        row.estimate.x,
        row.estimate.v,
        row.estimate.d,
        row.estimate.d_prime,
        row.u,
        row.force,
        row.reference,
    ]
}

/// Indices kept by a downsample factor `k`: every `k`-th row plus the last.
pub fn downsample_indices(len: usize, k: usize) -> impl Iterator<Item = usize> {
    let k = k.max(1);
    (0..len).filter(move |&i| i % k == 0 || i + 1 == len)
}

/// Writes the header and rows. When `fell` is set the file ends with a
/// `# fell ...` comment line marking the terminal row.
pub fn write_csv<W: Write>(mut out: W, rows: &[TraceRow], downsample: usize, fell: bool) -> io::Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for i in downsample_indices(rows.len(), downsample) {
        let line = fields(&rows[i]).map(format_sig9).join(",");
        writeln!(out, "{line}")?;
    }
    if fell {
        if let Some(last) = rows.last() {
            writeln!(
                out,
                "# fell t={} theta={}",
                format_sig9(last.t),
                format_sig9(last.state.theta)
            )?;
        }
    }
    out.flush()
}
