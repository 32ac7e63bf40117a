use std::io::Write;
use std::path::Path;

use serde::Serialize;

use super::{EpisodeTrace, EvalMetrics};
use crate::error::{io_err, Error, Result};
use crate::frenet::SceneState;

pub const TRACE_HEADER: [&str; 13] = [
    "t", "s0", "d0", "v0", "lane0", "s1", "v1", "s2", "v2", "a_long", "v_lat", "p_yield", "reward",
];

#[derive(Serialize)]
struct TraceRow {
    t: f64,
    s0: f64,
    d0: f64,
    v0: f64,
    lane0: i32,
    s1: f64,
    v1: f64,
    s2: f64,
    v2: f64,
    a_long: Option<f64>,
    v_lat: Option<f64>,
    p_yield: Option<f64>,
    reward: Option<f64>,
}

fn row(x: &SceneState) -> TraceRow {
    TraceRow {
        t: x.t,
        s0: x.ego.s,
        d0: x.ego.d,
        v0: x.ego.v,
        lane0: x.ego.lane,
        s1: x.others[0].s,
        v1: x.others[0].v,
        s2: x.others[1].s,
        v2: x.others[1].v,
        a_long: None,
        v_lat: None,
        p_yield: None,
        reward: None,
    }
}

/// One row per decision plus a final row with the last state and empty
/// action columns.
pub fn write_trace<W: Write>(writer: W, trace: &EpisodeTrace) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    for s in &trace.steps {
        wtr.serialize(TraceRow {
            a_long: Some(s.action.a_long),
            v_lat: Some(s.action.v_lat),
            p_yield: Some(s.belief.rear()),
            reward: Some(s.reward),
            ..row(&s.state)
        })?;
    }
    wtr.serialize(row(&trace.final_state))?;
    wtr.flush().map_err(io_err("<trace>"))?;
    Ok(())
}

pub fn save_trace(path: &Path, trace: &EpisodeTrace) -> Result<()> {
    let file = std::fs::File::create(path).map_err(io_err(path))?;
    write_trace(file, trace)
}

#[derive(Serialize)]
struct SummaryRow<'a> {
    episode: u64,
    seed: u64,
    outcome: &'a str,
    detail: &'a str,
    steps: usize,
    total_reward: f64,
}

pub fn write_summary<W: Write>(writer: W, traces: &[EpisodeTrace]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    for t in traces {
        let detail = match &t.outcome {
            super::Outcome::Aborted(msg) => msg.as_str(),
            _ => "",
        };
        wtr.serialize(SummaryRow {
            episode: t.scenario,
            seed: t.seed,
            outcome: t.outcome.label(),
            detail,
            steps: t.steps.len(),
            total_reward: t.total_reward(),
        })?;
    }
    wtr.flush().map_err(io_err("<summary>"))?;
    Ok(())
}

#[derive(Serialize)]
struct MetricsRow<'a> {
    label: &'a str,
    success: usize,
    total: usize,
    success_rate: f64,
    a_error: f64,
    v_error: f64,
    x_error: f64,
}

pub fn write_metrics<W: Write>(writer: W, rows: &[(&str, EvalMetrics)]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    for (label, m) in rows {
        wtr.serialize(MetricsRow {
            label,
            success: m.success,
            total: m.total,
            success_rate: m.success_rate(),
            a_error: m.a_error,
            v_error: m.v_error,
            x_error: m.x_error,
        })?;
    }
    wtr.flush().map_err(io_err("<metrics>"))?;
    Ok(())
}

pub fn save_with<F>(path: &Path, write: F) -> Result<()>
where
    F: FnOnce(std::fs::File) -> Result<()>,
{
    let file = std::fs::File::create(path).map_err(io_err(path))?;
    write(file).map_err(|e| match e {
        Error::Io { source, .. } => Error::Io {
            path: path.to_path_buf(),
            source,
        },
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{generate_scenario, Outcome, ScenarioGenConfig};

    #[test]
    fn trace_has_documented_header_and_final_row() {
        let sc = generate_scenario(0, &ScenarioGenConfig::default(), 0).unwrap();
        let trace = EpisodeTrace {
            scenario: 0,
            seed: 0,
            steps: Vec::new(),
            final_state: sc.initial,
            outcome: Outcome::Timeout,
        };
        let mut buf = Vec::new();
        write_trace(&mut buf, &trace).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), TRACE_HEADER.join(","));
        assert!(lines.next().unwrap().ends_with(",,,,"));
    }
}
