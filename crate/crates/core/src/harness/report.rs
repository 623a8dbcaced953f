use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::env::Scenario;
use crate::error::{Error, Result};

use super::eval::EvalReport;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub method: String,
    pub scenario: Scenario,
    pub mean: f64,
    pub stdev: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxRow {
    pub method: String,
    pub scenario: Scenario,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRow {
    pub method: String,
    pub scenario: Scenario,
    pub episode: usize,
    pub force: f64,
}

/// Comparison table, box-plot statistics and raw per-episode forces.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Comparison {
    pub table: Vec<TableRow>,
    pub boxes: Vec<BoxRow>,
    pub raw: Vec<RawRow>,
}

/// Builds the comparison, rows ordered by (scenario, method) names.
pub fn report(reports: &[EvalReport]) -> Result<Comparison> {
    if reports.is_empty() {
        return Err(Error::InvalidConfig("no evaluation reports to compare".into()));
    }
    let mut sorted: Vec<&EvalReport> = reports.iter().collect();
    sorted.sort_by(|a, b| (a.scenario.as_str(), &a.method).cmp(&(b.scenario.as_str(), &b.method)));
    let mut out = Comparison::default();
    for r in sorted {
        let s = &r.summary;
        out.table.push(TableRow {
            method: r.method.clone(),
            scenario: r.scenario,
            mean: s.mean,
            stdev: s.stdev,
        });
        out.boxes.push(BoxRow {
            method: r.method.clone(),
            scenario: r.scenario,
            min: s.min,
            q1: s.q1,
            median: s.median,
            q3: s.q3,
            max: s.max,
        });
        out.raw.extend(r.forces.iter().enumerate().map(|(episode, &force)| RawRow {
            method: r.method.clone(),
            scenario: r.scenario,
            episode,
            force,
        }));
    }
    Ok(out)
}

pub fn write_rows<T: Serialize, W: Write>(rows: &[T], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for r in rows {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_rows<T: for<'de> Deserialize<'de>, R: Read>(r: R) -> Result<Vec<T>> {
    let mut rd = csv::Reader::from_reader(r);
    Ok(rd.deserialize().collect::<std::result::Result<Vec<T>, _>>()?)
}

impl Comparison {
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        write_rows(&self.table, std::fs::File::create(dir.join("table.csv"))?)?;
        write_rows(&self.boxes, std::fs::File::create(dir.join("box.csv"))?)?;
        write_rows(&self.raw, std::fs::File::create(dir.join("raw.csv"))?)?;
        Ok(())
    }

    pub fn read_dir(dir: &Path) -> Result<Self> {
        Ok(Self {
            table: read_rows(std::fs::File::open(dir.join("table.csv"))?)?,
            boxes: read_rows(std::fs::File::open(dir.join("box.csv"))?)?,
            raw: read_rows(std::fs::File::open(dir.join("raw.csv"))?)?,
        })
    }
}
