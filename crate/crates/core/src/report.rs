//! Plot-ready CSV and JSON reports with a fixed column order and number format.

use std::io::Write;

use serde::Serialize;

use crate::error::Result;
use crate::repeatbuy::FrequencyComparison;

pub const SIGNIFICANT_DIGITS: usize = 12;

/// Formats like C's `%.12g`: 12 significant digits, trailing zeros dropped.
pub fn format_number(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if x.is_nan() {
        return "NaN".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let sci = format!("{:.*e}", SIGNIFICANT_DIGITS - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -5 || exp >= SIGNIFICANT_DIGITS as i32 {
        format!("{}e{}{:02}", trim_zeros(mantissa), if exp < 0 { '-' } else { '+' }, exp.abs())
    } else {
        let decimals = (SIGNIFICANT_DIGITS as i32 - 1 - exp) as usize;
        trim_zeros(&format!("{x:.decimals$}")).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Writes rows of already formatted cells under `header`.
pub fn write_csv<W: Write>(out: W, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    writer.write_record(header)?;
    for row in rows {
        writer.write_record(&row)?;
    }
    writer.flush()?;
    Ok(())
}

/// Pretty JSON with a trailing newline.
pub fn write_json<W: Write, T: Serialize + ?Sized>(mut out: W, value: &T) -> Result<()> {
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")?;
    Ok(())
}

/// Columns `n, observed, expected, residual`.
pub fn write_frequency_report<W: Write>(out: W, comparison: &FrequencyComparison) -> Result<()> {
    write_csv(
        out,
        &["n", "observed", "expected", "residual"],
        comparison.rows.iter().map(|r| {
            vec![r.n.to_string(), r.observed.to_string(), format_number(r.expected), format_number(r.residual)]
        }),
    )
}

/// Columns `hour, actual, forecast`; `actual` is empty past the observed range.
pub fn write_forecast_report<W: Write>(out: W, start_hour: i64, actual: &[f64], forecast: &[f64]) -> Result<()> {
    let rows = forecast.iter().enumerate().map(|(i, f)| {
        vec![
            (start_hour + i as i64).to_string(),
            actual.get(i).map(|&a| format_number(a)).unwrap_or_default(),
            format_number(*f),
        ]
    });
    write_csv(out, &["hour", "actual", "forecast"], rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn twelve_significant_digits() {
        assert_eq!(format_number(0.0), "0");
        assert_eq!(format_number(1.0), "1");
        assert_eq!(format_number(-2.5), "-2.5");
        assert_eq!(format_number(1.0 / 3.0), "0.333333333333");
        assert_eq!(format_number(2.0 / 3.0 * 1e6), "666666.666667");
        assert_eq!(format_number(123456789012.0), "123456789012");
        assert_eq!(format_number(1234567890123.0), "1.23456789012e+12");
        assert_eq!(format_number(1.5e-7), "1.5e-07");
        assert_eq!(format_number(0.0001), "0.0001");
        assert_eq!(format_number(f64::NAN), "NaN");
    }

    #[test]
    fn forecast_report_layout() {
        let mut buf = Vec::new();
        write_forecast_report(&mut buf, 10, &[1.0, 2.0], &[1.5, 2.0, 3.25]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "hour,actual,forecast\n10,1,1.5\n11,2,2\n12,,3.25\n");
    }
}
