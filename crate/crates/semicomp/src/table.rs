//! CSV formats: observed data, potential outcomes and effect curves.
//!
//! Numbers are written with the shortest representation that parses back to
//! the same `f64`, so a written file reads back bit for bit.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use semicomp_core::datagen::PotentialOutcome;
use semicomp_core::{Arm, Dataset, SceCurve, SceInterval, SubjectRecord};

use crate::error::{Error, Result};

const DATA_FIXED: [&str; 5] = ["x", "y", "d1", "d2", "a"];
const SCE_COLUMNS: [&str; 4] = ["t", "ad_sce1", "ad_sce2", "nd_sce2"];
const SCE_BAND_COLUMNS: [&str; 6] =
    ["lo_ad_sce1", "hi_ad_sce1", "lo_ad_sce2", "hi_ad_sce2", "lo_nd_sce2", "hi_nd_sce2"];

/// Expected covariate layout of an input file; `None` accepts any.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Schema {
    pub covariates: Option<Vec<String>>,
}

impl Schema {
    pub fn covariates(names: &[&str]) -> Self {
        Schema { covariates: Some(names.iter().map(|s| s.to_string()).collect()) }
    }
}

/// Summary of an ingested file.
#[derive(Debug, Clone, PartialEq)]
pub struct IngestReport {
    pub rows: usize,
    pub arm_sizes: [usize; 2],
    /// Fractions with `d1 = 0` and `d2 = 0`.
    pub censoring: (f64, f64),
}

fn create(path: &Path) -> Result<csv::Writer<File>> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(f))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        kind => Error::Parse { path: path.into(), line, msg: format!("{kind:?}") },
    }
}

fn finish(path: &Path, mut w: csv::Writer<File>) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))?;
    let f = w.into_inner().map_err(|e| Error::io(path, e.into_error()))?;
    f.sync_all().map_err(|e| Error::io(path, e))
}

fn flag(b: bool) -> &'static str {
    if b {
        "1"
    } else {
        "0"
    }
}

/// Writes `x,y,d1,d2,a,<covariates>`.
pub fn write_dataset(path: &Path, data: &Dataset) -> Result<()> {
    let mut w = create(path)?;
    let header: Vec<&str> =
        DATA_FIXED.iter().copied().chain(data.covariate_names().iter().map(String::as_str)).collect();
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for r in data.records() {
        let mut row = vec![r.x.to_string(), r.y.to_string(), flag(r.d1).into(), flag(r.d2).into()];
        row.push(r.arm.index().to_string());
        row.extend(r.z.iter().map(f64::to_string));
        w.write_record(&row).map_err(|e| csv_err(path, e))?;
    }
    finish(path, w)
}

fn parse_f64(path: &Path, line: u64, col: &str, s: &str) -> Result<f64> {
    s.trim().parse::<f64>().map_err(|_| Error::Parse {
        path: path.into(),
        line,
        msg: format!("column {col}: cannot parse {s:?} as a number"),
    })
}

fn parse_flag(path: &Path, line: u64, col: &str, s: &str) -> Result<bool> {
    match s.trim() {
        "0" => Ok(false),
        "1" => Ok(true),
        other => Err(Error::Parse {
            path: path.into(),
            line,
            msg: format!("column {col}: expected 0 or 1, found {other:?}"),
        }),
    }
}

/// Reads and validates an observed-data file.
pub fn read_dataset(path: &Path, schema: &Schema) -> Result<(Dataset, IngestReport)> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(f);
    let header: Vec<String> =
        rdr.headers().map_err(|e| csv_err(path, e))?.iter().map(|h| h.trim().to_string()).collect();
    if header.len() < DATA_FIXED.len() || header[..DATA_FIXED.len()] != DATA_FIXED {
        return Err(Error::Schema {
            path: path.into(),
            msg: format!("header must start with x,y,d1,d2,a; found {}", header.join(",")),
        });
    }
    let names: Vec<String> = header[DATA_FIXED.len()..].to_vec();
    if let Some(expected) = &schema.covariates {
        if let Some(missing) = expected.iter().find(|c| !names.contains(c)) {
            return Err(Error::Schema { path: path.into(), msg: format!("missing covariate column {missing:?}") });
        }
        if &names != expected {
            return Err(Error::Schema {
                path: path.into(),
                msg: format!("covariates {} do not match expected {}", names.join(","), expected.join(",")),
            });
        }
    }
    let mut records = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != header.len() {
            return Err(Error::Parse {
                path: path.into(),
                line,
                msg: format!("expected {} fields, found {}", header.len(), rec.len()),
            });
        }
        let arm = match rec[4].trim() {
            "0" => Arm::Control,
            "1" => Arm::Treated,
            other => {
                return Err(Error::Parse {
                    path: path.into(),
                    line,
                    msg: format!("column a: expected 0 or 1, found {other:?}"),
                })
            }
        };
        let z = (0..names.len())
            .map(|j| parse_f64(path, line, &names[j], &rec[DATA_FIXED.len() + j]))
            .collect::<Result<Vec<_>>>()?;
        let r = SubjectRecord {
            x: parse_f64(path, line, "x", &rec[0])?,
            y: parse_f64(path, line, "y", &rec[1])?,
            d1: parse_flag(path, line, "d1", &rec[2])?,
            d2: parse_flag(path, line, "d2", &rec[3])?,
            arm,
            z,
        };
        r.validate(names.len()).map_err(|e| Error::Parse { path: path.into(), line, msg: e.to_string() })?;
        records.push(r);
    }
    let data = Dataset::new(records, names)?;
    let report = IngestReport {
        rows: data.len(),
        arm_sizes: [data.arm_size(Arm::Control), data.arm_size(Arm::Treated)],
        censoring: data.censoring_rates(),
    };
    Ok((data, report))
}

/// Writes `t1_0,t2_0,t1_1,t2_1,<covariates>,gamma`.
pub fn write_potential_outcomes(path: &Path, pos: &[PotentialOutcome], covariate_names: &[String]) -> Result<()> {
    let mut w = create(path)?;
    let mut header: Vec<&str> = vec!["t1_0", "t2_0", "t1_1", "t2_1"];
    header.extend(covariate_names.iter().map(String::as_str));
    header.push("gamma");
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for po in pos {
        let mut row: Vec<String> = [po.t1[0], po.t2[0], po.t1[1], po.t2[1]].iter().map(f64::to_string).collect();
        row.extend(po.z.iter().map(f64::to_string));
        row.push(po.gamma.to_string());
        w.write_record(&row).map_err(|e| csv_err(path, e))?;
    }
    finish(path, w)
}

/// Writes `t,ad_sce1,ad_sce2,nd_sce2`, followed by the band columns when the
/// curve carries an interval.
pub fn write_sce(path: &Path, curve: &SceCurve) -> Result<()> {
    let mut w = create(path)?;
    let mut header: Vec<&str> = SCE_COLUMNS.to_vec();
    if curve.interval.is_some() {
        header.extend(SCE_BAND_COLUMNS);
    }
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for k in 0..curve.grid.len() {
        let mut row = vec![curve.grid[k], curve.ad_sce1[k], curve.ad_sce2[k], curve.nd_sce2[k]];
        if let Some(b) = &curve.interval {
            row.extend([
                b.lo_ad_sce1[k],
                b.hi_ad_sce1[k],
                b.lo_ad_sce2[k],
                b.hi_ad_sce2[k],
                b.lo_nd_sce2[k],
                b.hi_nd_sce2[k],
            ]);
        }
        w.write_record(row.iter().map(f64::to_string)).map_err(|e| csv_err(path, e))?;
    }
    finish(path, w)
}

/// Reads a curve written by [`write_sce`]. Stratum probabilities are not
/// stored and come back as zero.
pub fn read_sce(path: &Path) -> Result<SceCurve> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(f);
    let header: Vec<String> = rdr.headers().map_err(|e| csv_err(path, e))?.iter().map(str::to_string).collect();
    let banded = header.len() == SCE_COLUMNS.len() + SCE_BAND_COLUMNS.len();
    let expected: Vec<&str> =
        SCE_COLUMNS.iter().chain(if banded { SCE_BAND_COLUMNS.iter() } else { [].iter() }).copied().collect();
    if header != expected {
        return Err(Error::Schema { path: path.into(), msg: format!("unexpected header {}", header.join(",")) });
    }
    let mut cols: Vec<Vec<f64>> = vec![Vec::new(); header.len()];
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        for (j, col) in cols.iter_mut().enumerate() {
            let s = rec.get(j).ok_or_else(|| Error::Parse { path: path.into(), line, msg: "short row".into() })?;
            col.push(parse_f64(path, line, &header[j], s)?);
        }
    }
    let mut it = cols.into_iter();
    let mut next = || it.next().unwrap_or_default();
    let (grid, ad_sce1, ad_sce2, nd_sce2) = (next(), next(), next(), next());
    let interval = banded.then(|| SceInterval {
        lo_ad_sce1: next(),
        hi_ad_sce1: next(),
        lo_ad_sce2: next(),
        hi_ad_sce2: next(),
        lo_nd_sce2: next(),
        hi_nd_sce2: next(),
    });
    Ok(SceCurve { grid, ad_sce1, ad_sce2, nd_sce2, interval, pi_ad: [0.0; 2], pi_nd: [0.0; 2] })
}

/// Writes preformatted rows under a header.
pub(crate) fn write_rows(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = create(path)?;
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.write_record(r).map_err(|e| csv_err(path, e))?;
    }
    finish(path, w)
}

/// Formats an optional number, empty when absent.
pub(crate) fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Dataset {
        let recs = vec![
            SubjectRecord { x: 0.1, y: 2.5, d1: true, d2: true, arm: Arm::Control, z: vec![0.3, -1e-7] },
            SubjectRecord { x: 1.0 / 3.0, y: 1.0 / 3.0, d1: false, d2: true, arm: Arm::Treated, z: vec![-0.25, 12.5] },
        ];
        Dataset::new(recs, vec!["age".into(), "grade".into()]).unwrap()
    }

    #[test]
    fn dataset_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        write_dataset(&p, &small()).unwrap();
        let (back, report) = read_dataset(&p, &Schema::covariates(&["age", "grade"])).unwrap();
        assert_eq!(back, small());
        assert_eq!(report.rows, 2);
        assert_eq!(report.arm_sizes, [1, 1]);
        assert_eq!(report.censoring, (0.5, 0.0));
    }

    #[test]
    fn x_after_y_cites_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        std::fs::write(&p, "x,y,d1,d2,a,z1\n1,2,1,1,0,0\n3,2,1,1,0,0\n").unwrap();
        let e = read_dataset(&p, &Schema::default()).unwrap_err();
        assert!(matches!(e, Error::Parse { line: 3, .. }), "{e}");
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn bad_flag_and_schema() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        std::fs::write(&p, "x,y,d1,d2,a,z1\n1,2,2,1,0,0\n").unwrap();
        assert!(matches!(read_dataset(&p, &Schema::default()), Err(Error::Parse { line: 2, .. })));
        std::fs::write(&p, "x,y,d1,d2,a,z1\n1,2,1,1,0,0\n").unwrap();
        let e = read_dataset(&p, &Schema::covariates(&["z1", "z2"])).unwrap_err();
        assert!(matches!(e, Error::Schema { .. }), "{e}");
        std::fs::write(&p, "y,x,d1,d2,a\n1,2,1,1,0\n").unwrap();
        assert!(matches!(read_dataset(&p, &Schema::default()), Err(Error::Schema { .. })));
    }

    #[test]
    fn sce_round_trip_with_band() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        let mut c = SceCurve {
            grid: vec![1.0, 2.0],
            ad_sce1: vec![0.1, 0.2],
            ad_sce2: vec![0.3, 0.4],
            nd_sce2: vec![-0.5, 0.6],
            interval: None,
            pi_ad: [0.0; 2],
            pi_nd: [0.0; 2],
        };
        write_sce(&p, &c).unwrap();
        assert_eq!(read_sce(&p).unwrap(), c);
        c.interval = Some(SceInterval {
            lo_ad_sce1: vec![0.0, 0.1],
            hi_ad_sce1: vec![0.2, 0.3],
            lo_ad_sce2: vec![0.2, 0.3],
            hi_ad_sce2: vec![0.4, 0.5],
            lo_nd_sce2: vec![-0.6, 0.5],
            hi_nd_sce2: vec![-0.4, 0.7],
        });
        write_sce(&p, &c).unwrap();
        assert_eq!(read_sce(&p).unwrap(), c);
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("t,ad_sce1,ad_sce2,nd_sce2,lo_ad_sce1,hi_ad_sce1"));
    }
}
