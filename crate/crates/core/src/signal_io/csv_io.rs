use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::TimeSeries;
use crate::error::{Error, Result};

/// On-disk recording formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RecordingFormat {
    /// `t_s,pressure_cmH2O,flow_ml_s` (or `flow_l_min`), one sample per row.
    #[default]
    Csv,
}

/// Maximum deviation of any sample interval from the mean interval.
const MAX_JITTER: f64 = 0.01;

const ML_S_PER_L_MIN: f64 = 1000.0 / 60.0;

#[derive(Debug, Clone, Copy)]
enum FlowUnit {
    MlPerS,
    LPerMin,
}

struct Columns {
    time: usize,
    pressure: usize,
    flow: usize,
    flow_unit: FlowUnit,
}

fn resolve_header(header: &csv::StringRecord) -> Result<Columns> {
    if header.len() < 3 {
        return Err(Error::Format(format!(
            "expected columns t_s,pressure_cmH2O,flow_ml_s; found {} column(s)",
            header.len()
        )));
    }
    if header.iter().all(|h| h.trim().parse::<f64>().is_ok()) {
        return Err(Error::Format("unit header missing".into()));
    }
    let find = |names: &[&str]| header.iter().position(|h| names.contains(&h.trim()));
    let time =
        find(&["t_s", "t"]).ok_or_else(|| Error::Format("missing time column t_s".into()))?;
    let pressure = find(&["pressure_cmH2O", "P"])
        .ok_or_else(|| Error::Format("missing pressure column pressure_cmH2O".into()))?;
    let (flow, flow_unit) = if let Some(i) = find(&["flow_ml_s", "F"]) {
        (i, FlowUnit::MlPerS)
    } else if let Some(i) = find(&["flow_l_min"]) {
        (i, FlowUnit::LPerMin)
    } else {
        return Err(Error::Format(
            "missing flow column flow_ml_s or flow_l_min".into(),
        ));
    };
    Ok(Columns {
        time,
        pressure,
        flow,
        flow_unit,
    })
}

/// Parses a recording from CSV text.
pub fn read_csv<R: Read>(reader: R) -> Result<TimeSeries> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader);
    let mut records = rdr.records();
    let header = match records.next() {
        Some(Ok(h)) => h,
        Some(Err(e)) => {
            return Err(Error::Parse {
                line: 1,
                message: e.to_string(),
            })
        }
        None => return Err(Error::Format("empty file".into())),
    };
    let cols = resolve_header(&header)?;

    let mut t = Vec::new();
    let mut pressure = Vec::new();
    let mut flow = Vec::new();
    for (i, rec) in records.enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        let field = |idx: usize, name: &str| -> Result<f64> {
            let raw = rec.get(idx).ok_or_else(|| Error::Parse {
                line,
                message: format!("missing {name} field"),
            })?;
            let x: f64 = raw.parse().map_err(|_| Error::Parse {
                line,
                message: format!("cannot parse {name} value {raw:?}"),
            })?;
            if !x.is_finite() {
                return Err(Error::Parse {
                    line,
                    message: format!("non-finite {name} value"),
                });
            }
            Ok(x)
        };
        t.push(field(cols.time, "time")?);
        pressure.push(field(cols.pressure, "pressure")?);
        let f = field(cols.flow, "flow")?;
        flow.push(match cols.flow_unit {
            FlowUnit::MlPerS => f,
            FlowUnit::LPerMin => f * ML_S_PER_L_MIN,
        });
    }
    if t.len() < 2 {
        return Err(Error::Format(format!(
            "a recording needs at least 2 samples, found {}",
            t.len()
        )));
    }

    let mean_dt = (t[t.len() - 1] - t[0]) / (t.len() - 1) as f64;
    if let Some(k) = (1..t.len()).find(|&k| t[k] <= t[k - 1]) {
        return Err(Error::Parse {
            line: k + 2,
            message: "timestamps are not strictly increasing".into(),
        });
    }
    for k in 1..t.len() {
        let dt = t[k] - t[k - 1];
        if (dt - mean_dt).abs() > MAX_JITTER * mean_dt {
            return Err(Error::Parse {
                line: k + 2,
                message: format!("sample interval {dt} deviates more than 1% from {mean_dt}"),
            });
        }
    }
    let mut fs = 1.0 / mean_dt;
    if (fs - fs.round()).abs() <= 1e-6 * fs {
        fs = fs.round();
    }
    TimeSeries::new(fs, t[0], pressure, flow)
}

pub fn load_recording(path: impl AsRef<Path>, format: RecordingFormat) -> Result<TimeSeries> {
    let path = path.as_ref();
    match format {
        RecordingFormat::Csv => {
            let file = File::open(path).map_err(|e| Error::io(path, e))?;
            read_csv(BufReader::new(file))
        }
    }
}

/// Writes the canonical CSV form. Values use the shortest representation
/// that parses back to the identical `f64`.
pub fn write_csv<W: Write>(ts: &TimeSeries, writer: W) -> Result<()> {
    let mut w = BufWriter::new(writer);
    let io = |e| Error::io("<csv writer>", e);
    writeln!(w, "t_s,pressure_cmH2O,flow_ml_s").map_err(io)?;
    for k in 0..ts.len() {
        writeln!(w, "{},{},{}", ts.time(k), ts.pressure[k], ts.flow[k]).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn save_recording(ts: &TimeSeries, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv(ts, file)
}
