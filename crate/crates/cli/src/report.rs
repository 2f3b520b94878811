//! Run reports: line-delimited JSON records plus an optional CSV table.

use serde::Serialize;

use crate::config::Tolerances;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
}

impl Status {
    pub fn from_bool(ok: bool) -> Self {
        if ok {
            Status::Pass
        } else {
            Status::Fail
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckRecord {
    pub check: String,
    pub anchor: String,
    pub status: Status,
    pub value: Option<f64>,
    pub bound: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub runtime_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McRecord {
    pub quantity: String,
    pub estimate: f64,
    pub std_error: f64,
    pub exact: f64,
    pub n: usize,
    pub seed: u64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Record {
    Config {
        command: String,
        atoms: Vec<String>,
        weights: Vec<f64>,
        kernel: String,
        n_samples: usize,
        seed: u64,
        tolerances: Tolerances,
    },
    Check(CheckRecord),
    Mc(McRecord),
    Sweep {
        integrand: String,
        values: Vec<f64>,
    },
    Green {
        g: Vec<Vec<f64>>,
        spectral_bound: f64,
        series_terms: u64,
    },
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Report {
    pub records: Vec<Record>,
}

impl Report {
    pub fn push(&mut self, record: Record) {
        self.records.push(record);
    }

    pub fn checks(&self) -> impl Iterator<Item = &CheckRecord> {
        self.records.iter().filter_map(|r| match r {
            Record::Check(c) => Some(c),
            _ => None,
        })
    }

    pub fn mc(&self) -> impl Iterator<Item = &McRecord> {
        self.records.iter().filter_map(|r| match r {
            Record::Mc(m) => Some(m),
            _ => None,
        })
    }

    pub fn check(&self, name: &str) -> Option<&CheckRecord> {
        self.checks().find(|c| c.check == name)
    }

    pub fn failures(&self) -> usize {
        self.checks().filter(|c| c.status == Status::Fail).count()
            + self.mc().filter(|m| !m.pass).count()
    }

    pub fn passed(&self) -> bool {
        self.failures() == 0
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("records serialize"));
            out.push('\n');
        }
        out
    }

    /// One row per check or Monte Carlo record.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("kind,name,status,value,bound,estimate,std_error,exact\n");
        let num = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.records {
            match r {
                Record::Check(c) => out.push_str(&format!(
                    "check,{},{},{},{},,,\n",
                    csv_field(&c.check),
                    if c.status == Status::Pass {
                        "pass"
                    } else {
                        "fail"
                    },
                    num(c.value),
                    num(c.bound),
                )),
                Record::Mc(m) => out.push_str(&format!(
                    "mc,{},{},,,{},{},{}\n",
                    csv_field(&m.quantity),
                    if m.pass { "pass" } else { "fail" },
                    m.estimate,
                    m.std_error,
                    m.exact,
                )),
                _ => {}
            }
        }
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
