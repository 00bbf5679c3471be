//! CSV artifacts. Numbers are printed with 9 significant digits in the style
//! of C's `%.9g`, lines end in `\n`.

use serde::Deserialize;
use thiserror::Error;

use crate::contract::{ContractMenu, TypeSet};
use crate::error::ValidationError;
use crate::experiment::{QosReport, SimulationOutcome, SolveRun, SweepRow};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Invalid(#[from] ValidationError),
}

/// Formats `x` like `printf("%.9g", x)`.
pub fn fmt_num(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return if x.is_nan() {
            "nan".into()
        } else if x > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    let sci = format!("{x:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    let negative = mantissa.starts_with('-');
    let digits: String = mantissa.chars().filter(char::is_ascii_digit).collect();
    let sign = if negative { "-" } else { "" };

    if !(-4..9).contains(&exp) {
        let mut m = format!("{}.{}", &digits[..1], &digits[1..]);
        trim_fraction(&mut m);
        let esign = if exp < 0 { '-' } else { '+' };
        return format!("{sign}{m}e{esign}{:02}", exp.abs());
    }
    let mut out = if exp >= 0 {
        let split = exp as usize + 1;
        format!("{}.{}", &digits[..split], &digits[split..])
    } else {
        format!("0.{}{}", "0".repeat((-exp - 1) as usize), digits)
    };
    trim_fraction(&mut out);
    format!("{sign}{out}")
}

fn trim_fraction(s: &mut String) {
    if s.contains('.') {
        while s.ends_with('0') {
            s.pop();
        }
        if s.ends_with('.') {
            s.pop();
        }
    }
}

fn to_string(wtr: csv::Writer<Vec<u8>>) -> Result<String, ReportError> {
    let bytes = wtr.into_inner().map_err(|e| csv::Error::from(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn writer() -> csv::Writer<Vec<u8>> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new())
}

pub fn qos_csv(report: &QosReport, services: &[crate::qos::ServiceConfig]) -> Result<String, ReportError> {
    let mut w = writer();
    w.write_record(["k", "d_in", "d_out", "t_tran", "t_tok", "t_inf", "t_total", "A", "q_raw", "q"])?;
    for (svc, lvl) in services.iter().zip(&report.table.levels) {
        let l = &lvl.latency;
        w.write_record([
            lvl.id.to_string(),
            fmt_num(svc.d_in),
            fmt_num(svc.d_out),
            fmt_num(l.t_tran),
            fmt_num(l.t_tok),
            fmt_num(l.t_inf),
            fmt_num(l.t_total),
            fmt_num(lvl.satisfaction),
            fmt_num(lvl.q_raw),
            fmt_num(lvl.q),
        ])?;
    }
    to_string(w)
}

pub fn menu_csv(run: &SolveRun) -> Result<String, ReportError> {
    let r = &run.result;
    let mut w = writer();
    w.write_record(["type_index", "theta", "q", "p", "user_utility", "margin", "pooled_block_id"])?;
    for (k, t) in r.per_type.iter().enumerate() {
        w.write_record([
            (k + 1).to_string(),
            fmt_num(t.theta),
            fmt_num(t.q),
            fmt_num(t.p),
            fmt_num(t.user_utility),
            fmt_num(t.margin),
            (r.block_ids[k] + 1).to_string(),
        ])?;
    }
    to_string(w)
}

/// Key/value summary of a solve: curve, profit, utility and welfare.
pub fn summary_csv(run: &SolveRun) -> Result<String, ReportError> {
    let r = &run.result;
    let shape = run.curve.shape();
    let [a, b, c0] = shape.coefficients();
    let mode = match r.mode {
        crate::solver::SolveMode::SecondBest => "second-best",
        crate::solver::SolveMode::FirstBest => "first-best",
    };
    let family = match shape.family() {
        crate::cost::CostFamily::Quadratic => "quadratic",
        crate::cost::CostFamily::Exponential => "exponential",
    };
    let pooled: Vec<String> = r
        .ironed_segments
        .iter()
        .map(|s| format!("{}-{}", s.start + 1, s.end))
        .collect();
    let rows: Vec<(&str, String)> = vec![
        ("mode", mode.into()),
        ("liability", run.with_liability.to_string()),
        ("cost_family", family.into()),
        ("cost_a", fmt_num(a)),
        ("cost_b", fmt_num(b)),
        ("cost_c0", fmt_num(c0)),
        ("cost_fit_rmse", fmt_num(run.curve.fit_rmse())),
        ("expected_profit", fmt_num(r.expected_profit)),
        ("mean_user_utility", fmt_num(r.expected_user_utility())),
        ("social_welfare", fmt_num(r.social_welfare)),
        ("pooled_segments", pooled.join(" ")),
        (
            "max_violation",
            run.feasibility
                .as_ref()
                .map(|f| fmt_num(f.max_violation))
                .unwrap_or_default(),
        ),
    ];
    let mut w = writer();
    w.write_record(["key", "value"])?;
    for (k, v) in rows {
        w.write_record([k, v.as_str()])?;
    }
    to_string(w)
}

pub fn sweep_csv(rows: &[SweepRow]) -> Result<String, ReportError> {
    let mut w = writer();
    w.write_record(["multiplier", "expected_profit", "mean_q", "mean_p", "social_welfare"])?;
    for r in rows {
        w.write_record([
            fmt_num(r.multiplier),
            fmt_num(r.expected_profit),
            fmt_num(r.mean_q),
            fmt_num(r.mean_p),
            fmt_num(r.social_welfare),
        ])?;
    }
    to_string(w)
}

/// Selection counts per contract, preceded by `#` header lines naming the
/// generator and seed.
pub fn sim_csv(out: &SimulationOutcome) -> Result<String, ReportError> {
    let mut text = format!("# rng={}\n# seed={}\n# n={}\n", out.rng, out.seed, out.n);
    let mut w = writer();
    w.write_record(["type_index", "count", "empirical_share"])?;
    for (k, &count) in out.selection_counts.iter().enumerate() {
        w.write_record([
            (k + 1).to_string(),
            count.to_string(),
            fmt_num(count as f64 / out.n as f64),
        ])?;
    }
    text.push_str(&to_string(w)?);
    Ok(text)
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct MenuRow {
    pub type_index: usize,
    pub theta: f64,
    pub q: f64,
    pub p: f64,
    pub user_utility: f64,
    pub margin: f64,
    pub pooled_block_id: usize,
}

pub fn parse_menu_csv(text: &str) -> Result<Vec<MenuRow>, ReportError> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    rdr.deserialize().map(|r| r.map_err(ReportError::from)).collect()
}

/// Rebuilds a menu from `menu.csv` rows, checking it lines up with `types`.
pub fn menu_from_rows(rows: &[MenuRow], types: &TypeSet) -> Result<ContractMenu, ReportError> {
    if rows.len() != types.len() {
        return Err(ValidationError::new(
            "menu",
            format!("has {} rows but the scenario has {} types", rows.len(), types.len()),
        )
        .into());
    }
    for (k, row) in rows.iter().enumerate() {
        let path = format!("menu[{k}]");
        if row.type_index != k + 1 {
            return Err(ValidationError::new(path, format!("expected type_index {}, got {}", k + 1, row.type_index)).into());
        }
        let theta = types.theta(k);
        if (row.theta - theta).abs() > 1e-8 * theta.abs().max(1.0) {
            return Err(ValidationError::new(path, format!("theta {} does not match scenario type {}", row.theta, theta)).into());
        }
    }
    let qs: Vec<f64> = rows.iter().map(|r| r.q).collect();
    let ps: Vec<f64> = rows.iter().map(|r| r.p).collect();
    Ok(ContractMenu::from_pairs(&qs, &ps)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn formats_like_printf_g9() {
        let cases = [
            (0.0, "0"),
            (-0.0, "0"),
            (1.0, "1"),
            (0.618_033_988_749_894_9, "0.618033989"),
            (0.962_423_650_119_206_9, "0.96242365"),
            (15.0, "15"),
            (123_456_789.0, "123456789"),
            (1_234_567_890.0, "1.23456789e+09"),
            (0.000_123_456_789_123, "0.000123456789"),
            (0.000_012_345_678_912_3, "1.23456789e-05"),
            (-2.5, "-2.5"),
            (0.016, "0.016"),
            (4.746_566_162_962_963e-4, "0.000474656616"),
            (9.999_999_999_9, "10"),
        ];
        for (x, want) in cases {
            assert_eq!(fmt_num(x), want, "{x}");
        }
    }

    #[test]
    fn menu_rows_round_trip() {
        let text = "type_index,theta,q,p,user_utility,margin,pooled_block_id\n1,1,0,0,0,0,1\n2,2,0.618033989,0.96242365,0,0.580457639,2\n";
        let rows = parse_menu_csv(text).unwrap();
        assert_eq!(rows.len(), 2);
        let types = TypeSet::uniform(vec![1.0, 2.0]).unwrap();
        let menu = menu_from_rows(&rows, &types).unwrap();
        assert_eq!(menu.items()[1].q, 0.618033989);

        let other = TypeSet::uniform(vec![1.0, 3.0]).unwrap();
        assert!(menu_from_rows(&rows, &other).is_err());
    }
}
