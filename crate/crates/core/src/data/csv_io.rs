//! CSV exchange format for gait streams.
//!
//! Header `time,phase,target,<channel names...>`, one row per timestep, no
//! empty cells. Numbers are written with 17 significant digits so that an
//! export followed by a load reproduces the stream exactly.

use std::path::Path;

use super::stream::{GaitStream, SubjectMeta};
use crate::error::{Error, Result};
use crate::foundation::TaskId;
use crate::nn::Tensor;
use crate::persist::fmt_f64;

const FIXED: [&str; 3] = ["time", "phase", "target"];

pub fn to_csv(stream: &GaitStream) -> Result<String> {
    stream.validate()?;
    if stream.output_dim() != 1 {
        return Err(Error::Usage(format!(
            "CSV export holds one target column, stream has {}",
            stream.output_dim()
        )));
    }
    let mut out = String::new();
    out.push_str(&FIXED.join(","));
    for name in &stream.channel_names {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    let l = stream.len();
    for t in 0..l {
        let mut cells = vec![
            fmt_f64(stream.time[t]),
            fmt_f64(stream.phase[t]),
            fmt_f64(stream.target_series.data()[t]),
        ];
        cells.extend((0..stream.num_channels()).map(|c| fmt_f64(stream.channels.at2(c, t))));
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    Ok(out)
}

pub fn write_csv(stream: &GaitStream, path: &Path) -> Result<()> {
    let text = to_csv(stream)?;
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn parse_csv(text: &str, path: &str, subject: SubjectMeta, task: TaskId) -> Result<GaitStream> {
    let format = |line: usize, reason: String| Error::Format {
        path: path.to_string(),
        line,
        reason,
    };
    let mut lines = text.lines();
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| format(1, "empty file".into()))?
        .split(',')
        .map(str::trim)
        .collect();
    let mut cols = [usize::MAX; 3];
    for (slot, name) in cols.iter_mut().zip(FIXED) {
        *slot = header
            .iter()
            .position(|h| *h == name)
            .ok_or_else(|| format(1, format!("missing required column \"{name}\"")))?;
    }
    let channel_cols: Vec<usize> = (0..header.len()).filter(|i| !cols.contains(i)).collect();
    if channel_cols.is_empty() {
        return Err(format(1, "no sensor channel columns".into()));
    }
    let channel_names: Vec<String> = channel_cols.iter().map(|&i| header[i].to_string()).collect();

    let (mut time, mut phase, mut target) = (Vec::new(), Vec::new(), Vec::new());
    let mut channels: Vec<Vec<f64>> = vec![Vec::new(); channel_cols.len()];
    for (i, row) in lines.enumerate() {
        let line = i + 2;
        if row.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = row.split(',').map(str::trim).collect();
        if cells.len() != header.len() {
            return Err(format(
                line,
                format!("expected {} cells, found {}", header.len(), cells.len()),
            ));
        }
        let parse = |col: usize| -> Result<f64> {
            let cell = cells[col];
            if cell.is_empty() {
                return Err(Error::Data {
                    path: path.to_string(),
                    line,
                    reason: format!("missing value in column \"{}\"", header[col]),
                });
            }
            let v: f64 = cell.parse().map_err(|_| {
                format(line, format!("unparseable number `{cell}` in \"{}\"", header[col]))
            })?;
            if !v.is_finite() {
                return Err(Error::Data {
                    path: path.to_string(),
                    line,
                    reason: format!("non-finite value `{cell}` in column \"{}\"", header[col]),
                });
            }
            Ok(v)
        };
        time.push(parse(cols[0])?);
        let p = parse(cols[1])?;
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Data {
                path: path.to_string(),
                line,
                reason: format!("phase {p} outside [0, 1)"),
            });
        }
        phase.push(p);
        target.push(parse(cols[2])?);
        for (dst, &col) in channels.iter_mut().zip(&channel_cols) {
            dst.push(parse(col)?);
        }
    }
    let l = phase.len();
    if l == 0 {
        return Err(format(2, "no data rows".into()));
    }
    let c = channels.len();
    Ok(GaitStream {
        subject,
        task,
        channel_names,
        time,
        channels: Tensor::new(vec![c, l], channels.concat())?,
        phase,
        target_series: Tensor::new(vec![l, 1], target)?,
    })
}

pub fn load_csv(path: &Path, subject: SubjectMeta, task: TaskId) -> Result<GaitStream> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_csv(&text, &path.display().to_string(), subject, task)
}
