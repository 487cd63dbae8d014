//! Event log of a simulation run, written as one record per line.
//!
//! Field order is fixed: `timestamp_ns, step, worker, event, detail`.

use std::fmt;
use std::io::{self, Write};

use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EventKind {
    CycleMark,
    TensorReady,
    CoordFast,
    CoordFallback,
    BatchExec,
    StepEnd,
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            EventKind::CycleMark => "CYCLE_MARK",
            EventKind::TensorReady => "TENSOR_READY",
            EventKind::CoordFast => "COORD_FAST",
            EventKind::CoordFallback => "COORD_FALLBACK",
            EventKind::BatchExec => "BATCH_EXEC",
            EventKind::StepEnd => "STEP_END",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Event {
    pub timestamp_ns: u64,
    pub step: u32,
    pub worker: u32,
    pub event: EventKind,
    pub detail: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimelineFormat {
    JsonLines,
    Csv,
}

impl std::str::FromStr for TimelineFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "jsonl" => Ok(TimelineFormat::JsonLines),
            "csv" => Ok(TimelineFormat::Csv),
            other => Err(format!("unknown timeline format `{other}` (jsonl | csv)")),
        }
    }
}

pub fn write_timeline<W: Write>(
    events: &[Event],
    format: TimelineFormat,
    mut out: W,
) -> io::Result<()> {
    match format {
        TimelineFormat::JsonLines => {
            for e in events {
                serde_json::to_writer(&mut out, e)?;
                out.write_all(b"\n")?;
            }
        }
        TimelineFormat::Csv => {
            writeln!(out, "timestamp_ns,step,worker,event,detail")?;
            for e in events {
                writeln!(
                    out,
                    "{},{},{},{},\"{}\"",
                    e.timestamp_ns,
                    e.step,
                    e.worker,
                    e.event,
                    e.detail.replace('"', "\"\"")
                )?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev() -> Event {
        Event {
            timestamp_ns: 5,
            step: 0,
            worker: 1,
            event: EventKind::CycleMark,
            detail: "cycle=1".into(),
        }
    }

    #[test]
    fn jsonl_field_order() {
        let mut buf = Vec::new();
        write_timeline(&[ev()], TimelineFormat::JsonLines, &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "{\"timestamp_ns\":5,\"step\":0,\"worker\":1,\"event\":\"CYCLE_MARK\",\"detail\":\"cycle=1\"}\n"
        );
    }

    #[test]
    fn csv_layout() {
        let mut buf = Vec::new();
        write_timeline(&[ev()], TimelineFormat::Csv, &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "timestamp_ns,step,worker,event,detail\n5,0,1,CYCLE_MARK,\"cycle=1\"\n"
        );
    }
}
