//! Time-tag file formats and histogram export.
//!
//! Two tag formats are supported:
//!
//! * **CSV**: one integer picosecond timestamp per line; an optional header
//!   comment `# duration_ps=<N>` carries the acquisition duration.
//! * **Binary**: magic bytes `TTG1`, a little-endian u64 acquisition
//!   duration, then densely packed little-endian u64 timestamps.
//!
//! Histogram export is CSV with columns
//! `bin_center_ps,counts,g2,g2_err` (`nan` in the g2 columns when no
//! normalization is attached).

use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{CorrelationError, CorrelationHistogram, NormalizedHistogram, TimeTagStream};

/// On-disk representation of a tag stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeTagFormat {
    Csv,
    Binary,
}

impl std::str::FromStr for TimeTagFormat {
    type Err = CorrelationError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(TimeTagFormat::Csv),
            "bin" | "binary" => Ok(TimeTagFormat::Binary),
            other => Err(CorrelationError::Parse {
                offset: 0,
                message: format!("unknown time-tag format '{other}' (expected csv or bin)"),
            }),
        }
    }
}

/// Options for [`load_timetags`].
#[derive(Debug, Clone, Copy, Default)]
pub struct LoadOptions {
    pub channel: u32,
    /// Sort tags on load instead of rejecting unsorted input.
    pub sort: bool,
    /// Override the duration from the file (or the inferred one).
    pub duration_ps: Option<i64>,
}

const BINARY_MAGIC: &[u8; 4] = b"TTG1";

/// Load a tag stream from disk.
pub fn load_timetags(
    path: impl AsRef<Path>,
    format: TimeTagFormat,
    opts: LoadOptions,
) -> Result<TimeTagStream, CorrelationError> {
    let file = std::fs::File::open(path.as_ref()).map_err(|e| {
        CorrelationError::Io(format!("{}: {e}", path.as_ref().display()))
    })?;
    match format {
        TimeTagFormat::Csv => read_csv(BufReader::new(file), opts),
        TimeTagFormat::Binary => read_binary(BufReader::new(file), opts),
    }
}

fn finish(
    tags: Vec<i64>,
    file_duration: Option<i64>,
    opts: LoadOptions,
) -> Result<TimeTagStream, CorrelationError> {
    let duration = opts.duration_ps.or(file_duration);
    if opts.sort {
        TimeTagStream::from_unsorted(opts.channel, tags, duration)
    } else {
        TimeTagStream::new(opts.channel, tags, duration)
    }
}

fn read_csv(reader: impl BufRead, opts: LoadOptions) -> Result<TimeTagStream, CorrelationError> {
    let mut tags = Vec::new();
    let mut duration = None;
    let mut offset: u64 = 0;
    for (line_no, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| CorrelationError::Io(e.to_string()))?;
        let line_len = line.len() as u64 + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            offset += line_len;
            continue;
        }
        if let Some(rest) = trimmed.strip_prefix('#') {
            if let Some(value) = rest.trim().strip_prefix("duration_ps=") {
                duration = Some(value.trim().parse::<i64>().map_err(|e| {
                    CorrelationError::Parse {
                        offset,
                        message: format!("bad duration header on line {}: {e}", line_no + 1),
                    }
                })?);
            }
            offset += line_len;
            continue;
        }
        let tag: i64 = trimmed.parse().map_err(|e| CorrelationError::Parse {
            offset,
            message: format!("bad timestamp '{trimmed}' on line {}: {e}", line_no + 1),
        })?;
        tags.push(tag);
        offset += line_len;
    }
    finish(tags, duration, opts)
}

fn read_binary(mut reader: impl Read, opts: LoadOptions) -> Result<TimeTagStream, CorrelationError> {
    let mut magic = [0u8; 4];
    reader
        .read_exact(&mut magic)
        .map_err(|e| CorrelationError::Parse {
            offset: 0,
            message: format!("missing magic header: {e}"),
        })?;
    if &magic != BINARY_MAGIC {
        return Err(CorrelationError::Parse {
            offset: 0,
            message: format!("bad magic {magic:?}, expected {BINARY_MAGIC:?}"),
        });
    }
    let mut buf = [0u8; 8];
    reader
        .read_exact(&mut buf)
        .map_err(|e| CorrelationError::Parse {
            offset: 4,
            message: format!("missing duration field: {e}"),
        })?;
    let duration = u64::from_le_bytes(buf) as i64;

    let mut rest = Vec::new();
    reader
        .read_to_end(&mut rest)
        .map_err(|e| CorrelationError::Io(e.to_string()))?;
    if rest.len() % 8 != 0 {
        return Err(CorrelationError::Parse {
            offset: 12 + (rest.len() - rest.len() % 8) as u64,
            message: format!("trailing partial record of {} bytes", rest.len() % 8),
        });
    }
    let tags: Vec<i64> = rest
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().unwrap()) as i64)
        .collect();
    finish(tags, Some(duration), opts)
}

/// Write a tag stream to disk in the chosen format.
pub fn write_timetags(
    stream: &TimeTagStream,
    path: impl AsRef<Path>,
    format: TimeTagFormat,
) -> Result<(), CorrelationError> {
    let file = std::fs::File::create(path.as_ref()).map_err(|e| {
        CorrelationError::Io(format!("{}: {e}", path.as_ref().display()))
    })?;
    let mut w = BufWriter::new(file);
    let io_err = |e: std::io::Error| CorrelationError::Io(e.to_string());
    match format {
        TimeTagFormat::Csv => {
            writeln!(w, "# duration_ps={}", stream.duration_ps).map_err(io_err)?;
            for t in stream.timestamps() {
                writeln!(w, "{t}").map_err(io_err)?;
            }
        }
        TimeTagFormat::Binary => {
            w.write_all(BINARY_MAGIC).map_err(io_err)?;
            w.write_all(&(stream.duration_ps as u64).to_le_bytes())
                .map_err(io_err)?;
            for &t in stream.timestamps() {
                w.write_all(&(t as u64).to_le_bytes()).map_err(io_err)?;
            }
        }
    }
    w.flush().map_err(io_err)
}

/// Export a histogram (optionally with its normalization) as CSV.
pub fn write_histogram_csv(
    h: &CorrelationHistogram,
    norm: Option<&NormalizedHistogram>,
    mut out: impl Write,
) -> Result<(), CorrelationError> {
    let io_err = |e: std::io::Error| CorrelationError::Io(e.to_string());
    writeln!(out, "bin_center_ps,counts,g2,g2_err").map_err(io_err)?;
    for (i, &c) in h.counts().iter().enumerate() {
        let (g2, g2_err) = match norm {
            Some(n) => (n.g2[i], n.g2_err[i]),
            None => (f64::NAN, f64::NAN),
        };
        writeln!(out, "{},{},{},{}", h.bin_center_ps(i), c, g2, g2_err).map_err(io_err)?;
    }
    Ok(())
}

/// Read back a histogram CSV produced by [`write_histogram_csv`].
///
/// Bin geometry is reconstructed from the centers; metadata is not stored
/// in the CSV and comes back zeroed.
pub fn read_histogram_csv(reader: impl BufRead) -> Result<CorrelationHistogram, CorrelationError> {
    let mut centers = Vec::new();
    let mut counts = Vec::new();
    for (line_no, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| CorrelationError::Io(e.to_string()))?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with("bin_center_ps") || trimmed.starts_with('#') {
            continue;
        }
        let mut fields = trimmed.split(',');
        let parse_err = |message: String| CorrelationError::Parse {
            offset: line_no as u64,
            message,
        };
        let center: f64 = fields
            .next()
            .ok_or_else(|| parse_err("missing bin center".into()))?
            .parse()
            .map_err(|e| parse_err(format!("bad bin center on line {}: {e}", line_no + 1)))?;
        let count: u64 = fields
            .next()
            .ok_or_else(|| parse_err("missing counts".into()))?
            .parse()
            .map_err(|e| parse_err(format!("bad counts on line {}: {e}", line_no + 1)))?;
        centers.push(center);
        counts.push(count);
    }
    if centers.len() < 2 {
        return Err(CorrelationError::Config(
            "histogram CSV needs at least 2 bins".into(),
        ));
    }
    let bw = centers[1] - centers[0];
    if !(bw > 0.0 && bw.fract() == 0.0) {
        return Err(CorrelationError::Config(format!(
            "non-integer or non-positive bin width {bw} ps"
        )));
    }
    let bw = bw as i64;
    let lo = (centers[0] - bw as f64 / 2.0).round() as i64;
    let hi = lo + bw * counts.len() as i64;
    CorrelationHistogram::from_counts(
        bw,
        (lo, hi),
        counts,
        super::HistogramMeta {
            channel_a: 0,
            channel_b: 1,
            duration_a_ps: 0,
            duration_b_ps: 0,
            rate_a_hz: 0.0,
            rate_b_hz: 0.0,
        },
    )
}
