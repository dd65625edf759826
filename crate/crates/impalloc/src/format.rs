//! Line-delimited scenario files.
//!
//! ```text
//! H m n T
//! C j d c p lambda alpha0
//! I i step b1 b2 q_1 ... q_m
//! ```
//!
//! One header, then `m` contract records and `n` impression records. Blank
//! lines and lines starting with `#` are skipped. Floats are written in their
//! shortest round-trip form, so `read(write(s)) == s` exactly.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::{FromStr, SplitWhitespace};

use impalloc_core::scenario::{Contract, Impression, Scenario};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid scenario: {0}")]
    Invalid(#[from] impalloc_core::scenario::ScenarioError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

fn err(line: usize, msg: impl Into<String>) -> FormatError {
    FormatError::Parse { line, msg: msg.into() }
}

pub fn write_scenario<W: Write>(s: &Scenario, w: W) -> io::Result<()> {
    let mut w = BufWriter::new(w);
    writeln!(w, "H {} {} {}", s.contracts.len(), s.impressions.len(), s.horizon)?;
    for c in &s.contracts {
        writeln!(
            w,
            "C {} {} {} {} {} {}",
            c.id, c.demand, c.unit_price, c.penalty, c.quality_weight, c.alpha_init
        )?;
    }
    let mut line = String::new();
    for imp in &s.impressions {
        line.clear();
        let _ = write!(line, "I {} {} {} {}", imp.id, imp.step, imp.rtb_first, imp.rtb_second);
        for q in &imp.quality {
            let _ = write!(line, " {q}");
        }
        line.push('\n');
        w.write_all(line.as_bytes())?;
    }
    w.flush()
}

struct Fields<'a> {
    it: SplitWhitespace<'a>,
    line: usize,
}

impl Fields<'_> {
    fn next<T: FromStr>(&mut self, name: &str) -> Result<T, FormatError> {
        let tok = self
            .it
            .next()
            .ok_or_else(|| err(self.line, format!("missing field {name}")))?;
        tok.parse()
            .map_err(|_| err(self.line, format!("bad {name} {tok:?}")))
    }

    fn finish(mut self) -> Result<(), FormatError> {
        match self.it.next() {
            None => Ok(()),
            Some(t) => Err(err(self.line, format!("unexpected field {t:?}"))),
        }
    }
}

pub fn read_scenario<R: BufRead>(r: R) -> Result<Scenario, FormatError> {
    let mut header: Option<(usize, usize, u32)> = None;
    let mut contracts: Vec<Option<Contract>> = Vec::new();
    let mut impressions: Vec<Impression> = Vec::new();
    let mut seen: HashSet<u64> = HashSet::new();
    let mut last_step = 0;
    for (k, text) in r.lines().enumerate() {
        let text = text?;
        let line = k + 1;
        let body = text.trim();
        if body.is_empty() || body.starts_with('#') {
            continue;
        }
        let mut f = Fields {
            it: body.split_whitespace(),
            line,
        };
        let tag: String = f.next("record type")?;
        match (tag.as_str(), header) {
            ("H", None) => {
                let m: usize = f.next("m")?;
                let n: usize = f.next("n")?;
                let t: u32 = f.next("T")?;
                f.finish()?;
                if t == 0 {
                    return Err(err(line, "T must be at least 1"));
                }
                header = Some((m, n, t));
                contracts = vec![None; m];
                impressions.reserve(n);
            }
            ("H", Some(_)) => return Err(err(line, "second header")),
            (_, None) => return Err(err(line, "record before header")),
            ("C", Some((m, _, _))) => {
                let id: u32 = f.next("contract id")?;
                let c = Contract {
                    id,
                    demand: f.next("d")?,
                    unit_price: f.next("c")?,
                    penalty: f.next("p")?,
                    quality_weight: f.next("lambda")?,
                    alpha_init: f.next("alpha0")?,
                };
                f.finish()?;
                if id == 0 || id as usize > m {
                    return Err(err(line, format!("unknown contract id {id}")));
                }
                let slot = &mut contracts[id as usize - 1];
                if slot.is_some() {
                    return Err(err(line, format!("duplicate contract id {id}")));
                }
                *slot = Some(c);
            }
            ("I", Some((m, n, t))) => {
                let id: u64 = f.next("impression id")?;
                let step: u32 = f.next("step")?;
                let b1: f64 = f.next("b1")?;
                let b2: f64 = f.next("b2")?;
                let quality = f.it.by_ref().map(|tok| tok.parse::<f64>().map_err(|_| err(line, format!("bad quality {tok:?}")))).collect::<Result<Vec<f64>, _>>()?;
                if quality.len() != m {
                    return Err(err(
                        line,
                        format!("{} quality entries for {m} contracts", quality.len()),
                    ));
                }
                if !(b2 <= b1) {
                    return Err(err(line, format!("second bid {b2} exceeds first bid {b1}")));
                }
                if step == 0 || step > t {
                    return Err(err(line, format!("step {step} outside 1..={t}")));
                }
                if step < last_step {
                    return Err(err(line, "impressions must be ordered by step"));
                }
                if !seen.insert(id) {
                    return Err(err(line, format!("duplicate impression id {id}")));
                }
                if impressions.len() == n {
                    return Err(err(line, format!("more than {n} impressions")));
                }
                last_step = step;
                impressions.push(Impression {
                    id,
                    step,
                    rtb_first: b1,
                    rtb_second: b2,
                    quality,
                });
            }
            (other, Some(_)) => return Err(err(line, format!("unknown record type {other:?}"))),
        }
    }
    let (m, n, t) = header.ok_or_else(|| err(0, "missing header"))?;
    if let Some(j) = contracts.iter().position(Option::is_none) {
        return Err(err(0, format!("contract {} of {m} missing", j + 1)));
    }
    if impressions.len() != n {
        return Err(err(0, format!("header promises {n} impressions, found {}", impressions.len())));
    }
    let contracts = contracts.into_iter().map(Option::unwrap).collect();
    Ok(Scenario::new(contracts, impressions, t)?)
}

pub fn save_scenario(s: &Scenario, path: &Path) -> io::Result<()> {
    write_scenario(s, fs::File::create(path)?)
}

pub fn load_scenario(path: &Path) -> Result<Scenario, FormatError> {
    read_scenario(BufReader::new(fs::File::open(path)?))
}
