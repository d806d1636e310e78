//! CSV emit and parse for the benchmark outputs. UTF-8, comma separators,
//! LF line endings, one header row, fixed column order. Floats use Rust's
//! shortest round-trip formatting, so parse(write(x)) == x exactly.

use crate::experiment::{AmariRow, AmariSummary, DelayScatterRow};
use crate::HarnessError;
use mvicad::DelayReport;

pub const AMARI_HEADER: &str = "delay_level,seed,algorithm,amari_mean,sweeps,wall_time_s,error";
pub const AMARI_SUMMARY_HEADER: &str = "delay_level,algorithm,amari_mean,seeds";
pub const SCATTER_HEADER: &str = "view,source,true_delay_centered,est_delay_centered";
pub const DELAY_SUMMARY_HEADER: &str = "slope,intercept,r_squared,p_value,pairs";

fn field(s: &str) -> String {
    if s.contains(',') || s.contains('"') || s.contains('\n') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Splits one line into fields, honoring double-quote escaping.
fn split_line(line: &str) -> Vec<String> {
    let mut fields = Vec::new();
    let mut cur = String::new();
    let mut quoted = false;
    let mut chars = line.chars().peekable();
    while let Some(c) = chars.next() {
        if quoted {
            if c == '"' {
                if chars.peek() == Some(&'"') {
                    chars.next();
                    cur.push('"');
                } else {
                    quoted = false;
                }
            } else {
                cur.push(c);
            }
        } else {
            match c {
                '"' => quoted = true,
                ',' => fields.push(std::mem::take(&mut cur)),
                _ => cur.push(c),
            }
        }
    }
    fields.push(cur);
    fields
}

pub fn amari_rows_to_csv(rows: &[AmariRow]) -> String {
    let mut out = String::from(AMARI_HEADER);
    out.push('\n');
    for r in rows {
        match &r.error {
            Some(msg) => out.push_str(&format!(
                "{},{},{},,,,{}\n",
                r.delay_level,
                r.seed,
                field(&r.algorithm),
                field(msg)
            )),
            None => out.push_str(&format!(
                "{},{},{},{},{},{},\n",
                r.delay_level,
                r.seed,
                field(&r.algorithm),
                r.amari_mean,
                r.sweeps,
                r.wall_time_s
            )),
        }
    }
    out
}

pub fn amari_summary_to_csv(rows: &[AmariSummary]) -> String {
    let mut out = String::from(AMARI_SUMMARY_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.delay_level,
            field(&r.algorithm),
            r.amari_mean,
            r.seeds
        ));
    }
    out
}

pub fn scatter_to_csv(rows: &[DelayScatterRow]) -> String {
    let mut out = String::from(SCATTER_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.view, r.source, r.true_delay_centered, r.est_delay_centered
        ));
    }
    out
}

pub fn delay_summary_to_csv(report: &DelayReport) -> String {
    let mut out = String::from(DELAY_SUMMARY_HEADER);
    out.push('\n');
    match &report.regression {
        Some(reg) => out.push_str(&format!(
            "{},{},{},{},{}\n",
            reg.slope,
            reg.intercept,
            reg.r_squared,
            reg.p_value,
            report.pairs.len()
        )),
        None => out.push_str(&format!(",,,,{}\n", report.pairs.len())),
    }
    out
}

fn parse_err(line: usize, reason: impl Into<String>) -> HarnessError {
    HarnessError::Csv {
        line,
        reason: reason.into(),
    }
}

fn expect_header(text: &str, want: &str) -> Result<(), HarnessError> {
    match text.lines().next() {
        Some(h) if h == want => Ok(()),
        Some(h) => Err(parse_err(1, format!("expected header {:?}, got {:?}", want, h))),
        None => Err(parse_err(1, "empty input")),
    }
}

fn num<T: std::str::FromStr>(s: &str, line: usize, col: &str) -> Result<T, HarnessError> {
    s.parse()
        .map_err(|_| parse_err(line, format!("bad {} value {:?}", col, s)))
}

pub fn amari_rows_from_csv(text: &str) -> Result<Vec<AmariRow>, HarnessError> {
    expect_header(text, AMARI_HEADER)?;
    let mut rows = Vec::new();
    for (idx, line) in text.lines().enumerate().skip(1) {
        if line.is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let f = split_line(line);
        if f.len() != 7 {
            return Err(parse_err(lineno, format!("expected 7 fields, got {}", f.len())));
        }
        let error = if f[6].is_empty() { None } else { Some(f[6].clone()) };
        let (amari_mean, sweeps, wall_time_s) = if error.is_some() {
            (f64::NAN, 0, f64::NAN)
        } else {
            (
                num(&f[3], lineno, "amari_mean")?,
                num(&f[4], lineno, "sweeps")?,
                num(&f[5], lineno, "wall_time_s")?,
            )
        };
        rows.push(AmariRow {
            delay_level: num(&f[0], lineno, "delay_level")?,
            seed: num(&f[1], lineno, "seed")?,
            algorithm: f[2].clone(),
            amari_mean,
            sweeps,
            wall_time_s,
            error,
        });
    }
    Ok(rows)
}

pub fn scatter_from_csv(text: &str) -> Result<Vec<DelayScatterRow>, HarnessError> {
    expect_header(text, SCATTER_HEADER)?;
    let mut rows = Vec::new();
    for (idx, line) in text.lines().enumerate().skip(1) {
        if line.is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let f = split_line(line);
        if f.len() != 4 {
            return Err(parse_err(lineno, format!("expected 4 fields, got {}", f.len())));
        }
        rows.push(DelayScatterRow {
            view: num(&f[0], lineno, "view")?,
            source: num(&f[1], lineno, "source")?,
            true_delay_centered: num(&f[2], lineno, "true_delay_centered")?,
            est_delay_centered: num(&f[3], lineno, "est_delay_centered")?,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quoting_survives_commas_and_quotes() {
        let line = r#"a,"b,c","d""e",f"#;
        assert_eq!(split_line(line), vec!["a", "b,c", "d\"e", "f"]);
    }

    #[test]
    fn amari_rows_round_trip_exactly() {
        let rows = vec![
            AmariRow {
                delay_level: 40,
                seed: 3,
                algorithm: "mvicad".into(),
                amari_mean: 0.1 + 0.2,
                sweeps: 37,
                wall_time_s: 1.25e-3,
                error: None,
            },
            AmariRow {
                delay_level: 40,
                seed: 4,
                algorithm: "mvica".into(),
                amari_mean: f64::NAN,
                sweeps: 0,
                wall_time_s: f64::NAN,
                error: Some("sweep 3: singular matrix: pivot, really".into()),
            },
        ];
        let text = amari_rows_to_csv(&rows);
        let back = amari_rows_from_csv(&text).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].delay_level, 40);
        assert_eq!(back[0].amari_mean.to_bits(), (0.1f64 + 0.2).to_bits());
        assert_eq!(back[0].wall_time_s.to_bits(), 1.25e-3f64.to_bits());
        assert_eq!(back[1].error.as_deref(), Some("sweep 3: singular matrix: pivot, really"));
        assert_eq!(amari_rows_to_csv(&back), text);
    }

    #[test]
    fn scatter_rows_round_trip_exactly() {
        let rows = vec![DelayScatterRow {
            view: 7,
            source: 2,
            true_delay_centered: -3.2,
            est_delay_centered: 1.0 / 3.0,
        }];
        let text = scatter_to_csv(&rows);
        let back = scatter_from_csv(&text).unwrap();
        assert_eq!(back, rows);
        assert_eq!(scatter_to_csv(&back), text);
    }

    #[test]
    fn header_mismatch_is_an_error() {
        assert!(amari_rows_from_csv("nope\n1,2,3").is_err());
        assert!(scatter_from_csv("").is_err());
    }
}
