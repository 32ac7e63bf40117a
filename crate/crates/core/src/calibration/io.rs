//! Trial CSV: header `trial_id,scenario,t,v_back,dv,gap,a`, one row per
//! sample. Rows of one trial need not be contiguous; trials are returned in
//! order of first appearance. Gap and closing speed are taken against the
//! car the recorded follower actually reacted to: the lead human car for
//! unsuccessful merges, the merging car for successful ones.

use std::io::{Read, Write};
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::{mse_summary, CalibrationReport, Sample, TrialRecord};
use crate::driver::{param_names, CarFollowInput, ScenarioClass};
use crate::error::{io_err, Error, Result};

pub const TRIAL_HEADER: [&str; 7] = ["trial_id", "scenario", "t", "v_back", "dv", "gap", "a"];

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    trial_id: String,
    scenario: String,
    t: f64,
    v_back: f64,
    dv: f64,
    gap: f64,
    a: f64,
}

pub fn load_trials(path: &Path) -> Result<Vec<TrialRecord>> {
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    trials_from_reader(file, path)
}

pub fn trials_from_reader<R: Read>(reader: R, path: &Path) -> Result<Vec<TrialRecord>> {
    let parse_err = |line: u64, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = match rdr.headers() {
        Ok(h) => h.clone(),
        // An empty file holds no trials.
        Err(e) if matches!(e.kind(), csv::ErrorKind::Io(_)) => return Err(e.into()),
        Err(e) => return Err(parse_err(1, e.to_string())),
    };
    if headers.is_empty() {
        return Ok(Vec::new());
    }
    for col in TRIAL_HEADER {
        if !headers.iter().any(|h| h == col) {
            return Err(parse_err(1, format!("missing column `{col}`")));
        }
    }

    let mut groups: IndexMap<String, (ScenarioClass, Vec<Sample>)> = IndexMap::new();
    let mut record = csv::StringRecord::new();
    loop {
        match rdr.read_record(&mut record) {
            Ok(true) => {}
            Ok(false) => break,
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line());
                return Err(parse_err(line, e.to_string()));
            }
        }
        let line = record.position().map_or(0, |p| p.line());
        let row: Row = record
            .deserialize(Some(&headers))
            .map_err(|e| parse_err(line, e.to_string()))?;
        let scenario: ScenarioClass = row
            .scenario
            .parse()
            .map_err(|e: Error| parse_err(line, e.to_string()))?;
        let entry = groups
            .entry(row.trial_id.clone())
            .or_insert_with(|| (scenario, Vec::new()));
        if entry.0 != scenario {
            return Err(parse_err(
                line,
                format!("trial {} changes scenario mid-trial", row.trial_id),
            ));
        }
        entry.1.push(Sample {
            x: CarFollowInput {
                v_back: row.v_back,
                dv: row.dv,
                gap: row.gap,
            },
            a: row.a,
            t: row.t,
        });
    }

    let trials: Vec<TrialRecord> = groups
        .into_iter()
        .map(|(trial_id, (scenario, samples))| TrialRecord {
            trial_id,
            scenario,
            samples,
        })
        .collect();
    for t in &trials {
        t.validate()?;
    }
    Ok(trials)
}

pub fn write_trials<W: Write>(writer: W, trials: &[TrialRecord]) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    wtr.write_record(TRIAL_HEADER)?;
    for trial in trials {
        for s in &trial.samples {
            wtr.serialize(Row {
                trial_id: trial.trial_id.clone(),
                scenario: trial.scenario.to_string(),
                t: s.t,
                v_back: s.x.v_back,
                dv: s.x.dv,
                gap: s.x.gap,
                a: s.a,
            })?;
        }
    }
    wtr.flush().map_err(|e| Error::Csv(e.into()))?;
    Ok(())
}

pub fn save_trials(path: &Path, trials: &[TrialRecord]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(io_err(path))?;
    write_trials(std::io::BufWriter::new(file), trials)
}

/// One row per fitted trial with its parameters, final cost, MSE and whether
/// it survived outlier filtering; failed trials follow with only `error` set.
pub fn write_fit_report<W: Write>(writer: W, report: &CalibrationReport) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let names = param_names(report.model);
    let mut header = vec!["trial_id", "scenario", "model"];
    header.extend(names);
    header.extend(["cost", "mse", "kept", "error"]);
    wtr.write_record(&header)?;
    let model = report.model.to_string();
    for class in &report.classes {
        for (i, fit) in class.fits.iter().enumerate() {
            let mut rec = vec![fit.trial_id.clone(), fit.scenario.to_string(), model.clone()];
            rec.extend(fit.theta.to_array().iter().map(f64::to_string));
            rec.push(fit.cost.to_string());
            rec.push(fit.mse.to_string());
            rec.push(class.kept.contains(&i).to_string());
            rec.push(String::new());
            wtr.write_record(&rec)?;
        }
    }
    for (trial_id, err) in &report.failures {
        let mut rec = vec![trial_id.clone(), String::new(), model.clone()];
        rec.extend(std::iter::repeat_n(String::new(), 9));
        rec.push(err.clone());
        wtr.write_record(&rec)?;
    }
    wtr.flush().map_err(io_err("<fits>"))?;
    Ok(())
}

/// Long-format parameter table: `model,scenario,param,mean,std`.
pub fn write_param_table<W: Write>(writer: W, reports: &[CalibrationReport]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["model", "scenario", "param", "mean", "std"])?;
    for dist in reports.iter().flat_map(CalibrationReport::distributions) {
        let sd = dist.std_dev();
        for (i, name) in param_names(dist.model).iter().enumerate() {
            wtr.write_record([
                dist.model.to_string(),
                dist.scenario.to_string(),
                name.to_string(),
                dist.mean[i].to_string(),
                sd[i].to_string(),
            ])?;
        }
    }
    wtr.flush().map_err(io_err("<params>"))?;
    Ok(())
}

/// Fit quality per model and class, over the fits kept after filtering.
pub fn write_mse_table<W: Write>(writer: W, reports: &[CalibrationReport]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["model", "scenario", "fits", "kept", "avg_mse", "max_mse"])?;
    for report in reports {
        for class in &report.classes {
            let mses: Vec<f64> = class.kept.iter().map(|&i| class.fits[i].mse).collect();
            let (avg, max) = if mses.is_empty() { (f64::NAN, f64::NAN) } else { mse_summary(&mses) };
            wtr.write_record([
                report.model.to_string(),
                class.scenario.to_string(),
                class.fits.len().to_string(),
                class.kept.len().to_string(),
                avg.to_string(),
                max.to_string(),
            ])?;
        }
    }
    wtr.flush().map_err(io_err("<mse>"))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<Vec<TrialRecord>> {
        trials_from_reader(text.as_bytes(), Path::new("mem.csv"))
    }

    fn rows(id: &str, n: usize) -> String {
        (0..n)
            .map(|i| format!("{id},successful,{},10,0.5,8,0.1\n", i as f64 * 0.1))
            .collect()
    }

    #[test]
    fn empty_input_has_no_trials() {
        assert!(parse("").unwrap().is_empty());
        assert!(parse("trial_id,scenario,t,v_back,dv,gap,a\n").unwrap().is_empty());
    }

    #[test]
    fn write_read_round_trip() {
        let text = format!("trial_id,scenario,t,v_back,dv,gap,a\n{}", rows("a", 10));
        let trials = parse(&text).unwrap();
        let mut buf = Vec::new();
        write_trials(&mut buf, &trials).unwrap();
        assert_eq!(parse(std::str::from_utf8(&buf).unwrap()).unwrap(), trials);
        let mut empty = Vec::new();
        write_trials(&mut empty, &[]).unwrap();
        assert_eq!(empty, b"trial_id,scenario,t,v_back,dv,gap,a\n");
    }

    #[test]
    fn groups_rows_by_trial() {
        let text = format!("trial_id,scenario,t,v_back,dv,gap,a\n{}{}", rows("a", 10), rows("b", 12));
        let trials = parse(&text).unwrap();
        assert_eq!(trials.len(), 2);
        assert_eq!(trials[1].trial_id, "b");
        assert_eq!(trials[1].samples.len(), 12);
    }

    #[test]
    fn shuffled_timestamps_name_the_trial() {
        let mut body = rows("late", 10);
        body.push_str("late,successful,0.05,10,0.5,8,0.1\n");
        let err = parse(&format!("trial_id,scenario,t,v_back,dv,gap,a\n{body}")).unwrap_err();
        assert!(err.to_string().contains("late"), "{err}");
    }

    #[test]
    fn malformed_row_reports_line() {
        let text = format!("trial_id,scenario,t,v_back,dv,gap,a\n{}x,successful,oops,1,1,1,1\n", rows("a", 10));
        match parse(&text).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 12),
            e => panic!("unexpected {e}"),
        }
        let bad_class = "trial_id,scenario,t,v_back,dv,gap,a\nz,maybe,0,1,1,1,1\n";
        assert!(matches!(parse(bad_class).unwrap_err(), Error::Parse { line: 2, .. }));
    }

    #[test]
    fn fit_report_lists_failures() {
        let text = format!("trial_id,scenario,t,v_back,dv,gap,a\n{}", rows("a", 10));
        let trials = parse(&text).unwrap();
        let mut report = super::super::calibrate(&trials, crate::driver::ModelKind::Vdm, &Default::default());
        report.failures.push(("b".into(), "broken".into()));
        let mut buf = Vec::new();
        write_fit_report(&mut buf, &report).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "trial_id,scenario,model,V1,V2,C1,C2,lambda,kappa,cost,mse,kept,error");
        assert!(lines[1].starts_with("a,successful,vdm,") && lines[1].ends_with(",true,"));
        assert_eq!(lines[2], "b,,vdm,,,,,,,,,,broken");
    }

    #[test]
    fn missing_column_is_named() {
        let err = parse("trial_id,scenario,t,v_back,dv,a\n").unwrap_err();
        assert!(err.to_string().contains("`gap`"), "{err}");
    }
}
