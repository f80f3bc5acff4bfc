use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::Result;

pub const CSV_HEADER: &str = "round,algo,seed,test_acc,test_loss,score_loss,mean_fbest,weight_div,\
uplink_scalars,uplink_vectors,ota_uses,s_eff,rejected";

/// Per-round record. Counters are cumulative since round 0.
#[derive(Clone, Debug, PartialEq)]
pub struct RoundMetrics {
    pub round: usize,
    pub algo: &'static str,
    pub seed: u64,
    pub test_accuracy: f64,
    pub test_loss: f64,
    /// Global model's loss on the scoring set.
    pub global_score_loss: f64,
    pub mean_local_f_best: f64,
    pub weight_divergence: f64,
    pub uplink_scalars: u64,
    pub uplink_vectors: u64,
    pub ota_uses: u64,
    /// Contributors to the accepted aggregate; 0 when the model carried over.
    pub s_effective: usize,
    pub rejected: u64,
}

/// `%.9g`-style formatting: 9 significant digits, trailing zeros trimmed,
/// scientific notation outside `[1e-5, 1e9)`.
pub fn fmt_sig9(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("exponent");
    if !(-5..9).contains(&exp) {
        let m = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        return format!("{m}e{sign}{:02}", exp.abs());
    }
    let decimals = (8 - exp).max(0) as usize;
    trim_zeros(&format!("{x:.decimals$}")).to_owned()
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

impl RoundMetrics {
    pub fn csv_row(&self) -> String {
        let mut s = String::new();
        write!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.round,
            self.algo,
            self.seed,
            fmt_sig9(self.test_accuracy),
            fmt_sig9(self.test_loss),
            fmt_sig9(self.global_score_loss),
            fmt_sig9(self.mean_local_f_best),
            fmt_sig9(self.weight_divergence),
            self.uplink_scalars,
            self.uplink_vectors,
            self.ota_uses,
            self.s_effective,
            self.rejected
        )
        .expect("write to string");
        s
    }
}

/// Appends rows and flushes after each one so a crash keeps what was
/// already computed.
pub struct MetricsWriter {
    out: BufWriter<File>,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "{CSV_HEADER}")?;
        out.flush()?;
        Ok(MetricsWriter { out })
    }

    pub fn write(&mut self, m: &RoundMetrics) -> Result<()> {
        writeln!(self.out, "{}", m.csv_row())?;
        self.out.flush()?;
        Ok(())
    }
}

pub fn to_csv(rows: &[RoundMetrics]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sig9_formatting() {
        assert_eq!(fmt_sig9(0.0), "0");
        assert_eq!(fmt_sig9(1.0), "1");
        assert_eq!(fmt_sig9(0.5), "0.5");
        assert_eq!(fmt_sig9(1.0 / 3.0), "0.333333333");
        assert_eq!(fmt_sig9(2.0 / 3.0 * 100.0), "66.6666667");
        assert_eq!(fmt_sig9(123456789.0), "123456789");
        assert_eq!(fmt_sig9(1234567890.0), "1.23456789e+09");
        assert_eq!(fmt_sig9(-1.5e-7), "-1.5e-07");
        assert_eq!(fmt_sig9(0.0001234), "0.0001234");
        assert_eq!(fmt_sig9(1e12), "1e+12");
        assert_eq!(fmt_sig9(f64::NAN), "nan");
        // rounding that carries into a new digit
        assert_eq!(fmt_sig9(9.999999999), "10");
    }

    #[test]
    fn header_is_exact() {
        assert_eq!(
            CSV_HEADER,
            "round,algo,seed,test_acc,test_loss,score_loss,mean_fbest,weight_div,uplink_scalars,uplink_vectors,ota_uses,s_eff,rejected"
        );
        let m = RoundMetrics {
            round: 3,
            algo: "dsl",
            seed: 9,
            test_accuracy: 0.75,
            test_loss: 0.5,
            global_score_loss: 0.25,
            mean_local_f_best: 0.125,
            weight_divergence: 2.0,
            uplink_scalars: 10,
            uplink_vectors: 4,
            ota_uses: 2,
            s_effective: 4,
            rejected: 1,
        };
        assert_eq!(m.csv_row(), "3,dsl,9,0.75,0.5,0.25,0.125,2,10,4,2,4,1");
        assert_eq!(m.csv_row().split(',').count(), CSV_HEADER.split(',').count());
    }
}
