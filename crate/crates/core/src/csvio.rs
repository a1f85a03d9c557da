//! CSV emission with a fixed numeric format so identical runs produce
//! byte-identical files.

use std::io::Write;
use std::path::Path;

/// Column header shared by every metric CSV.
pub const METRIC_HEADER: &str =
    "step,train_loss,test_loss,test_accuracy,gc,grad_norm_sq,lipschitz_bound,a_b,c_b";

/// Formats with 12 significant digits: plain decimal in a moderate exponent
/// range, scientific outside it.
pub fn fmt_sig(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let exp = x.abs().log10().floor() as i32;
    if !(-5..12).contains(&exp) {
        format!("{:.*e}", 11, x)
    } else {
        let decimals = (11 - exp).max(0) as usize;
        format!("{:.*}", decimals, x)
    }
}

/// Optional cell: empty when the metric does not apply.
pub fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_sig).unwrap_or_default()
}

/// Writes comment lines (prefixed `# `), then the header row, then data rows.
pub fn write_csv(
    path: &Path,
    comments: &[String],
    header: &str,
    rows: impl IntoIterator<Item = String>,
) -> std::io::Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for c in comments {
        writeln!(f, "# {c}")?;
    }
    writeln!(f, "{header}")?;
    for row in rows {
        writeln!(f, "{row}")?;
    }
    f.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn twelve_significant_digits() {
        assert_eq!(fmt_sig(30.0), "30.0000000000");
        assert_eq!(fmt_sig(0.5), "0.500000000000");
        assert_eq!(fmt_sig(-2.0 / 3.0), "-0.666666666667");
        assert_eq!(fmt_sig(0.0), "0");
        assert_eq!(fmt_sig(-0.0), "0");
        assert_eq!(fmt_sig(1.0e-15), "1.00000000000e-15");
        assert_eq!(fmt_sig(3.0e14), "3.00000000000e14");
    }

    #[test]
    fn optional_cells_are_empty() {
        assert_eq!(fmt_opt(None), "");
        assert_eq!(fmt_opt(Some(1.0)), "1.00000000000");
    }
}
