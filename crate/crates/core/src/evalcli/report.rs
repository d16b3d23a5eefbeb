//! CSV files for per-thread reports, sweep tables and profile series.
//!
//! Floats are written in Rust's shortest round-trip form, so reading a file
//! back reproduces the in-memory values exactly. An absent PCC is an empty
//! field.

use std::io::{Read, Write};

use super::{mean_of, MeanMetrics, MetricTriple, ThreadReport};
use crate::error::{Error, Result};
use crate::forecaster::Forecast;

pub const REPORT_HEADER: [&str; 5] = ["thread_id", "pcc", "rmse", "mfe", "true_len"];
pub const SWEEP_HEADER: [&str; 6] = ["param", "value", "seed", "pcc", "rmse", "mfe"];
pub const PROFILE_HEADER: [&str; 4] = ["thread_id", "series", "k", "value"];
pub const MEAN_ROW: &str = "__mean__";

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Parse {
            line: 0,
            msg: format!("{other:?}"),
        },
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, line: usize) -> Result<T> {
    let raw = rec.get(i).ok_or_else(|| Error::Parse {
        line,
        msg: format!("missing column {}", i + 1),
    })?;
    raw.parse().map_err(|_| Error::Parse {
        line,
        msg: format!("bad value '{raw}' in column {}", i + 1),
    })
}

fn opt_field(rec: &csv::StringRecord, i: usize, line: usize) -> Result<Option<f64>> {
    match rec.get(i) {
        Some("") => Ok(None),
        _ => field(rec, i, line).map(Some),
    }
}

fn reader(input: impl Read) -> csv::Reader<impl Read> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(input)
}

fn check_header(r: &mut csv::Reader<impl Read>, want: &[&str]) -> Result<()> {
    let header = r.headers().map_err(csv_err)?;
    if header.iter().ne(want.iter().copied()) {
        return Err(Error::Parse {
            line: 1,
            msg: format!("expected header {}", want.join(",")),
        });
    }
    Ok(())
}

/// Per-thread rows, the `__mean__` row, then a comment with the PCC
/// exclusion count.
pub fn write_report(rows: &[ThreadReport], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(REPORT_HEADER).map_err(csv_err)?;
    for r in rows {
        let m = r.metrics;
        w.write_record([
            r.thread_id.clone(),
            opt(m.pcc),
            m.rmse.to_string(),
            m.mfe.to_string(),
            r.true_len.to_string(),
        ])
        .map_err(csv_err)?;
    }
    let mean = mean_of(rows);
    let total: usize = rows.iter().map(|r| r.true_len).sum();
    w.write_record([
        MEAN_ROW.to_string(),
        opt(mean.pcc),
        mean.rmse.to_string(),
        mean.mfe.to_string(),
        total.to_string(),
    ])
    .map_err(csv_err)?;
    let mut out = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    writeln!(
        out,
        "# pcc: macro mean over {} threads; {} excluded (constant series)",
        mean.threads - mean.pcc_excluded,
        mean.pcc_excluded
    )?;
    Ok(())
}

/// Per-thread rows and the stored mean row.
pub fn read_report(input: impl Read) -> Result<(Vec<ThreadReport>, Option<MeanMetrics>)> {
    let mut r = reader(input);
    check_header(&mut r, &REPORT_HEADER)?;
    let (mut rows, mut mean) = (Vec::new(), None);
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let line = i + 2;
        let metrics = MetricTriple {
            pcc: opt_field(&rec, 1, line)?,
            rmse: field(&rec, 2, line)?,
            mfe: field(&rec, 3, line)?,
        };
        if &rec[0] == MEAN_ROW {
            let excluded = rows
                .iter()
                .filter(|r: &&ThreadReport| r.metrics.pcc.is_none())
                .count();
            mean = Some(MeanMetrics {
                pcc: metrics.pcc,
                rmse: metrics.rmse,
                mfe: metrics.mfe,
                pcc_excluded: excluded,
                threads: rows.len(),
            });
        } else {
            rows.push(ThreadReport {
                thread_id: rec[0].to_string(),
                metrics,
                true_len: field(&rec, 4, line)?,
            });
        }
    }
    Ok((rows, mean))
}

/// One sweep cell: the mean metrics of one (value, seed) run.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub param: String,
    pub value: String,
    pub seed: u64,
    pub pcc: Option<f64>,
    pub rmse: f64,
    pub mfe: f64,
}

pub fn write_sweep(rows: &[SweepRow], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SWEEP_HEADER).map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.param.clone(),
            r.value.clone(),
            r.seed.to_string(),
            opt(r.pcc),
            r.rmse.to_string(),
            r.mfe.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_sweep(input: impl Read) -> Result<Vec<SweepRow>> {
    let mut r = reader(input);
    check_header(&mut r, &SWEEP_HEADER)?;
    r.records()
        .enumerate()
        .map(|(i, rec)| {
            let rec = rec.map_err(csv_err)?;
            let line = i + 2;
            Ok(SweepRow {
                param: rec[0].to_string(),
                value: rec[1].to_string(),
                seed: field(&rec, 2, line)?,
                pcc: opt_field(&rec, 3, line)?,
                rmse: field(&rec, 4, line)?,
                mfe: field(&rec, 5, line)?,
            })
        })
        .collect()
}

/// Long-format series of one or more forecasts.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ProfileSeries {
    pub thread_id: String,
    pub history: Vec<f64>,
    pub predicted: Vec<f64>,
    pub actual: Vec<f64>,
}

impl From<&Forecast> for ProfileSeries {
    fn from(f: &Forecast) -> Self {
        Self {
            thread_id: f.thread_id.clone(),
            history: f.history.clone(),
            predicted: f.predicted.clone(),
            actual: f.actual.clone(),
        }
    }
}

pub fn write_profiles(series: &[ProfileSeries], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(PROFILE_HEADER).map_err(csv_err)?;
    for s in series {
        for (name, values) in [
            ("history", &s.history),
            ("predicted", &s.predicted),
            ("actual", &s.actual),
        ] {
            for (k, v) in values.iter().enumerate() {
                w.write_record([s.thread_id.as_str(), name, &k.to_string(), &v.to_string()])
                    .map_err(csv_err)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_profiles(input: impl Read) -> Result<Vec<ProfileSeries>> {
    let mut r = reader(input);
    check_header(&mut r, &PROFILE_HEADER)?;
    let mut out: Vec<ProfileSeries> = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let line = i + 2;
        if out.last().is_none_or(|s| s.thread_id != rec[0]) {
            out.push(ProfileSeries {
                thread_id: rec[0].to_string(),
                ..Default::default()
            });
        }
        let s = out.last_mut().expect("pushed above");
        let target = match &rec[1] {
            "history" => &mut s.history,
            "predicted" => &mut s.predicted,
            "actual" => &mut s.actual,
            other => {
                return Err(Error::Parse {
                    line,
                    msg: format!("unknown series '{other}'"),
                })
            }
        };
        let k: usize = field(&rec, 2, line)?;
        if k != target.len() {
            return Err(Error::Parse {
                line,
                msg: format!("series index {k} out of order"),
            });
        }
        target.push(field(&rec, 3, line)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn report_round_trip_is_exact() {
        let rows = vec![
            ThreadReport {
                thread_id: "a,b".into(),
                metrics: MetricTriple {
                    pcc: Some(0.1 + 0.2),
                    rmse: 1.0 / 3.0,
                    mfe: 2e-17,
                },
                true_len: 275,
            },
            ThreadReport {
                thread_id: "c".into(),
                metrics: MetricTriple {
                    pcc: None,
                    rmse: 0.5,
                    mfe: 0.25,
                },
                true_len: 10,
            },
        ];
        let mut buf = Vec::new();
        write_report(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("thread_id,pcc,rmse,mfe,true_len\n"));
        assert!(text.contains("__mean__"));
        let (back, mean) = read_report(buf.as_slice()).unwrap();
        assert_eq!(back, rows);
        let mean = mean.unwrap();
        assert_eq!((mean.pcc, mean.pcc_excluded), (Some(0.1 + 0.2), 1));
    }

    #[test]
    fn sweep_and_profiles_round_trip() {
        let rows = vec![SweepRow {
            param: "delta".into(),
            value: "5".into(),
            seed: 7,
            pcc: None,
            rmse: 0.1,
            mfe: 0.2,
        }];
        let mut buf = Vec::new();
        write_sweep(&rows, &mut buf).unwrap();
        assert!(buf.starts_with(b"param,value,seed,pcc,rmse,mfe\n"));
        assert_eq!(read_sweep(buf.as_slice()).unwrap(), rows);

        let series = vec![ProfileSeries {
            thread_id: "t".into(),
            history: vec![1.0, 2.5],
            predicted: vec![0.1, 1.0 / 7.0],
            actual: vec![],
        }];
        let mut buf = Vec::new();
        write_profiles(&series, &mut buf).unwrap();
        assert_eq!(read_profiles(buf.as_slice()).unwrap(), series);
        assert!(read_report(&b"x,y\n"[..]).is_err());
    }
}
