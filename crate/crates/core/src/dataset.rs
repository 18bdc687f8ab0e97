//! Loss-record datasets: CSV ingestion, the bundled results, and ordering checks.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Architecture, LossRecord, ScaleGroup};

pub const SCHEMA_VERSION: u32 = 1;
pub const HEADER: [&str; 5] = ["depth", "width", "tokens_billions", "loss", "scale_group"];
/// Optional trailing column carrying a printed parameter count.
pub const PARAMS_COLUMN: &str = "params_millions";

const BUNDLED_CSV: &str = include_str!("../data/appendix_c.csv");

/// Printed parameter counts in millions, keyed by (depth, width, group).
/// 56L×2176W is absent: its printed count disagrees with the formula by 12%.
const PRINTED_PARAMS: [(u64, u64, ScaleGroup, &str); 29] = [
    (2, 256, ScaleGroup::Baseline, "27.5"),
    (8, 256, ScaleGroup::Baseline, "32.2"),
    (16, 256, ScaleGroup::Baseline, "38.5"),
    (2, 512, ScaleGroup::Baseline, "58.1"),
    (4, 512, ScaleGroup::Baseline, "64.4"),
    (8, 512, ScaleGroup::Baseline, "77.0"),
    (12, 512, ScaleGroup::Baseline, "89.6"),
    (16, 512, ScaleGroup::Baseline, "102.2"),
    (24, 512, ScaleGroup::Baseline, "127.4"),
    (2, 1024, ScaleGroup::Baseline, "128.7"),
    (32, 512, ScaleGroup::Baseline, "152.6"),
    (8, 1024, ScaleGroup::Baseline, "204.3"),
    (2, 1536, ScaleGroup::Baseline, "211.9"),
    (4, 1536, ScaleGroup::Baseline, "268.6"),
    (16, 1024, ScaleGroup::Baseline, "305.0"),
    (8, 1536, ScaleGroup::Baseline, "381.9"),
    (12, 1536, ScaleGroup::Baseline, "495.2"),
    (16, 1536, ScaleGroup::Baseline, "608.5"),
    (12, 2560, ScaleGroup::OneB, "1206.4"),
    (24, 1792, ScaleGroup::OneB, "1108.8"),
    (48, 1280, ScaleGroup::OneB, "1075.2"),
    (64, 1152, ScaleGroup::OneB, "1137.7"),
    (80, 1024, ScaleGroup::OneB, "1112.0"),
    (16, 3840, ScaleGroup::ThreeB, "3225.2"),
    (24, 3072, ScaleGroup::ThreeB, "3033.3"),
    (40, 2432, ScaleGroup::ThreeB, "3088.8"),
    (72, 1792, ScaleGroup::ThreeB, "2958.8"),
    (32, 4096, ScaleGroup::SevenB, "6863.1"),
    (64, 2816, ScaleGroup::SevenB, "6379.7"),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub records: Vec<LossRecord>,
    pub source: String,
    pub schema_version: u32,
}

/// Flat row shape shared by the CSV and JSON exports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlatRecord {
    pub depth: u64,
    pub width: u64,
    pub tokens_billions: Option<f64>,
    pub loss: f64,
    pub scale_group: ScaleGroup,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub params_millions: Option<f64>,
}

impl From<&LossRecord> for FlatRecord {
    fn from(r: &LossRecord) -> Self {
        Self {
            depth: r.arch.depth(),
            width: r.arch.width(),
            tokens_billions: r.tokens.map(|t| t / 1e9),
            loss: r.loss,
            scale_group: r.scale_group,
            params_millions: r.params_reported.map(|p| p as f64 / 1e6),
        }
    }
}

/// Decimal string of `x · 10^shift`, exact in the digits of `x`'s shortest repr.
fn shift_decimal(x: f64, shift: i32) -> String {
    let sci = format!("{x:e}");
    let (mantissa, exp) = sci.split_once('e').expect("`{:e}` always has an exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    let (sign, mantissa) = match mantissa.strip_prefix('-') {
        Some(m) => ("-", m),
        None => ("", mantissa),
    };
    let digits: String = mantissa.chars().filter(|c| *c != '.').collect();
    // value = 0.d1d2d3… × 10^point
    let point = exp + shift + 1;
    let n = digits.len() as i32;
    let body = if point <= 0 {
        format!("0.{}{}", "0".repeat((-point) as usize), digits)
    } else if point >= n {
        format!("{}{}", digits, "0".repeat((point - n) as usize))
    } else {
        format!("{}.{}", &digits[..point as usize], &digits[point as usize..])
    };
    format!("{sign}{body}")
}

fn parse_scaled(s: &str, exponent: i32) -> Option<f64> {
    let v: f64 = format!("{s}e{exponent}").parse().ok()?;
    v.is_finite().then_some(v)
}

/// Exact integer from a plain decimal with at most six fractional digits.
fn parse_millions(s: &str) -> Option<u128> {
    let (int, frac) = s.split_once('.').unwrap_or((s, ""));
    if int.is_empty() && frac.is_empty() || frac.len() > 6 {
        return None;
    }
    let digits = |t: &str| t.chars().all(|c| c.is_ascii_digit());
    if !digits(int) || !digits(frac) {
        return None;
    }
    let int: u128 = if int.is_empty() { 0 } else { int.parse().ok()? };
    let frac_val: u128 = format!("{frac:0<6}").parse().ok()?;
    int.checked_mul(1_000_000)?.checked_add(frac_val)
}

fn format_millions(p: u128) -> String {
    let frac = format!("{:06}", p % 1_000_000);
    let frac = frac.trim_end_matches('0');
    if frac.is_empty() {
        format!("{}", p / 1_000_000)
    } else {
        format!("{}.{}", p / 1_000_000, frac)
    }
}

fn row_err(row: usize, column: &str, message: impl Into<String>) -> Error {
    Error::Row {
        row,
        column: column.to_string(),
        message: message.into(),
    }
}

impl Dataset {
    pub fn empty(source: impl Into<String>) -> Self {
        Self {
            records: Vec::new(),
            source: source.into(),
            schema_version: SCHEMA_VERSION,
        }
    }

    /// The 30 trained configurations with printed parameter counts attached.
    pub fn bundled() -> Self {
        let mut ds = Self::parse_csv(BUNDLED_CSV, "bundled:appendix_c.csv")
            .expect("bundled dataset parses");
        for rec in ds.records.iter_mut() {
            rec.params_reported = PRINTED_PARAMS
                .iter()
                .find(|(d, w, g, _)| {
                    *d == rec.arch.depth() && *w == rec.arch.width() && *g == rec.scale_group
                })
                .map(|(_, _, _, m)| parse_millions(m).expect("printed params parse"));
            rec.validate().expect("printed params within tolerance");
        }
        ds
    }

    /// Parse CSV text. Row numbers in errors are 1-based file lines.
    pub fn parse_csv(text: &str, source: impl Into<String>) -> Result<Self> {
        let mut ds = Self::empty(source);
        if text.trim().is_empty() {
            return Ok(ds);
        }
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let mut rows = reader.records();
        let header = match rows.next() {
            Some(h) => h?,
            None => return Ok(ds),
        };
        let cols: Vec<&str> = header.iter().collect();
        let with_params = match cols.as_slice() {
            c if c == HEADER => false,
            [rest @ .., last] if rest == HEADER && *last == PARAMS_COLUMN => true,
            _ => {
                return Err(row_err(
                    1,
                    "header",
                    format!(
                        "expected `{}` (optionally followed by `{PARAMS_COLUMN}`), got `{}`",
                        HEADER.join(","),
                        cols.join(",")
                    ),
                ))
            }
        };
        let ncols = cols.len();

        let mut seen: BTreeMap<(u64, u64, ScaleGroup), usize> = BTreeMap::new();
        for rec in rows {
            let rec = rec?;
            let row = rec.position().map(|p| p.line() as usize).unwrap_or(0);
            if rec.len() != ncols {
                return Err(row_err(
                    row,
                    "*",
                    format!("expected {ncols} fields, found {}", rec.len()),
                ));
            }
            let int = |i: usize| -> Result<u64> {
                rec[i]
                    .parse::<u64>()
                    .ok()
                    .filter(|v| *v >= 1)
                    .ok_or_else(|| row_err(row, HEADER[i], format!("expected a positive integer, got `{}`", &rec[i])))
            };
            let depth = int(0)?;
            let width = int(1)?;
            let tokens = match &rec[2] {
                "" => None,
                s => Some(
                    parse_scaled(s, 9)
                        .filter(|t| *t > 0.0)
                        .ok_or_else(|| row_err(row, HEADER[2], format!("expected a positive number or blank, got `{s}`")))?,
                ),
            };
            let loss = rec[3]
                .parse::<f64>()
                .ok()
                .filter(|l| *l > 0.0 && l.is_finite())
                .ok_or_else(|| row_err(row, HEADER[3], format!("loss must be a positive number, got `{}`", &rec[3])))?;
            let group: ScaleGroup = rec[4]
                .parse()
                .map_err(|e: Error| row_err(row, HEADER[4], e.to_string()))?;
            let params = if with_params && !rec[5].is_empty() {
                Some(parse_millions(&rec[5]).ok_or_else(|| {
                    row_err(row, PARAMS_COLUMN, format!("expected a decimal count, got `{}`", &rec[5]))
                })?)
            } else {
                None
            };
            let arch = Architecture::new(depth, width).map_err(|e| row_err(row, "depth", e.to_string()))?;
            let record = LossRecord::new(arch, tokens, loss, params, group)
                .map_err(|e| row_err(row, PARAMS_COLUMN, e.to_string()))?;
            if let Some(first) = seen.insert((depth, width, group), row) {
                return Err(row_err(
                    row,
                    "depth,width,scale_group",
                    format!("duplicate of row {first}"),
                ));
            }
            ds.records.push(record);
        }
        Ok(ds)
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse_csv(&text, path.display().to_string())
    }

    /// Write CSV; the params column is emitted only when some record has one.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let with_params = self.records.iter().any(|r| r.params_reported.is_some());
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<&str> = HEADER.to_vec();
        if with_params {
            header.push(PARAMS_COLUMN);
        }
        w.write_record(&header)?;
        for r in &self.records {
            let mut fields = vec![
                r.arch.depth().to_string(),
                r.arch.width().to_string(),
                r.tokens.map(|t| shift_decimal(t, -9)).unwrap_or_default(),
                format!("{}", r.loss),
                r.scale_group.to_string(),
            ];
            if with_params {
                fields.push(r.params_reported.map(format_millions).unwrap_or_default());
            }
            w.write_record(&fields)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }

    pub fn to_json(&self) -> Result<String> {
        let rows: Vec<FlatRecord> = self.records.iter().map(FlatRecord::from).collect();
        Ok(serde_json::to_string_pretty(&rows)?)
    }

    pub fn group(&self, group: ScaleGroup) -> Vec<LossRecord> {
        self.records
            .iter()
            .filter(|r| r.scale_group == group)
            .cloned()
            .collect()
    }

    pub fn count(&self, group: ScaleGroup) -> usize {
        self.records.iter().filter(|r| r.scale_group == group).count()
    }

    pub fn loss(&self, depth: u64, width: u64, group: ScaleGroup) -> Option<f64> {
        self.records
            .iter()
            .find(|r| r.arch.depth() == depth && r.arch.width() == width && r.scale_group == group)
            .map(|r| r.loss)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CheckStatus {
    Pass,
    Fail,
    Skipped,
}

impl fmt::Display for CheckStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CheckStatus::Pass => "PASS",
            CheckStatus::Fail => "FAIL",
            CheckStatus::Skipped => "SKIPPED",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub status: CheckStatus,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub checks: Vec<Check>,
}

impl VerifyReport {
    /// No check failed. Skipped checks do not count as failures.
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.status != CheckStatus::Fail)
    }

    pub fn get(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

impl fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(f, "{:<7} {:<22} {}", c.status.to_string(), c.name, c.detail)?;
        }
        Ok(())
    }
}

pub const DEPTH_GAP_TARGET: f64 = 0.033;
pub const DEPTH_GAP_TOLERANCE: f64 = 0.0005;
pub const SEVENB_GAP_TARGET: f64 = 0.119;
pub const SEVENB_GAP_TOLERANCE: f64 = 0.001;

fn gap_check(
    ds: &Dataset,
    name: &str,
    deep: (u64, u64),
    shallow: (u64, u64),
    group: ScaleGroup,
    target: f64,
    tol: f64,
) -> Check {
    let (Some(a), Some(b)) = (
        ds.loss(deep.0, deep.1, group),
        ds.loss(shallow.0, shallow.1, group),
    ) else {
        return skipped(name, format!("{}L×{}W or {}L×{}W missing", deep.0, deep.1, shallow.0, shallow.1));
    };
    let gap = a - b;
    let ok = (gap - target).abs() <= tol;
    Check {
        name: name.into(),
        status: if ok { CheckStatus::Pass } else { CheckStatus::Fail },
        detail: format!(
            "{}L×{}W − {}L×{}W = {a} − {b} = {gap:.4} (want {target} ± {tol})",
            deep.0, deep.1, shallow.0, shallow.1
        ),
    }
}

fn skipped(name: &str, why: String) -> Check {
    Check {
        name: name.into(),
        status: CheckStatus::Skipped,
        detail: why,
    }
}

fn order_check(ds: &Dataset, name: &str, worse: (u64, u64), better: (u64, u64), group: ScaleGroup) -> Check {
    let (Some(a), Some(b)) = (
        ds.loss(worse.0, worse.1, group),
        ds.loss(better.0, better.1, group),
    ) else {
        return skipped(name, format!("{}L×{}W or {}L×{}W missing", worse.0, worse.1, better.0, better.1));
    };
    Check {
        name: name.into(),
        status: if a > b { CheckStatus::Pass } else { CheckStatus::Fail },
        detail: format!(
            "{}L×{}W {a} > {}L×{}W {b}",
            worse.0, worse.1, better.0, better.1
        ),
    }
}

/// Check the headline orderings of the published results against `ds`.
pub fn verify_against_paper(ds: &Dataset) -> Result<VerifyReport> {
    if ds.count(ScaleGroup::Baseline) == 0 {
        return Err(Error::Precondition(
            "verification needs baseline-group records".into(),
        ));
    }
    let base = ScaleGroup::Baseline;
    let mut checks = vec![
        gap_check(ds, "depth_gap_24_vs_16", (24, 512), (16, 512), base, DEPTH_GAP_TARGET, DEPTH_GAP_TOLERANCE),
        order_check(ds, "depth_32_over_16", (32, 512), (16, 512), base),
    ];

    let widths = [256, 512, 1024, 1536];
    let losses: Vec<Option<f64>> = widths.iter().map(|&w| ds.loss(16, w, base)).collect();
    checks.push(if losses.iter().any(Option::is_none) {
        skipped("width_sweep_d16", "a 16L width-sweep row is missing".into())
    } else {
        let l: Vec<f64> = losses.into_iter().flatten().collect();
        let ok = l.windows(2).all(|p| p[1] < p[0]);
        Check {
            name: "width_sweep_d16".into(),
            status: if ok { CheckStatus::Pass } else { CheckStatus::Fail },
            detail: format!(
                "W {:?} → loss {:?} strictly decreasing",
                widths, l
            ),
        }
    });

    let depths = [2, 8, 16, 24];
    let losses: Vec<Option<f64>> = depths.iter().map(|&d| ds.loss(d, 512, base)).collect();
    checks.push(if losses.iter().any(Option::is_none) {
        skipped("depth_u_shape_w512", "a 512W depth-sweep row is missing".into())
    } else {
        let l: Vec<f64> = losses.into_iter().flatten().collect();
        let (imin, _) = l
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .expect("four losses");
        Check {
            name: "depth_u_shape_w512".into(),
            status: if depths[imin] == 16 { CheckStatus::Pass } else { CheckStatus::Fail },
            detail: format!("D {:?} → loss {:?}, minimum at {}L", depths, l, depths[imin]),
        }
    });

    checks.push(gap_check(
        ds,
        "sevenb_gap",
        (64, 2816),
        (32, 4096),
        ScaleGroup::SevenB,
        SEVENB_GAP_TARGET,
        SEVENB_GAP_TOLERANCE,
    ));
    checks.push(order_check(ds, "oneb_overdeep", (80, 1024), (24, 1792), ScaleGroup::OneB));
    checks.push(order_check(ds, "threeb_overdeep", (72, 1792), (40, 2432), ScaleGroup::ThreeB));
    Ok(VerifyReport { checks })
}
