//! Experience archive files.
//!
//! JSON lines. The first line is a header:
//!
//! ```json
//! {"format":"lrsearch-archive","version":1,"spec":{...},"environment":"load-unload",
//!  "horizon":100,"seed":7,"verbose":false,"records":2}
//! ```
//!
//! followed by exactly `records` lines, one per trial:
//!
//! ```json
//! {"policy":{...},"return":3.0,"history":{"steps":[...],"counts":{...}}}
//! ```
//!
//! `steps` is empty unless the archive is verbose. Floats are written in the
//! shortest form that parses back to the same value, so a reloaded archive
//! answers every query bit-identically.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::env::{sample, Environment, History};
use crate::error::{Error, Result};
use crate::estimator::{Dataset, SampleRecord};
use crate::learner::{learn, LearnConfig};
use crate::policy::{PolicyClassSpec, PolicyParams, PolicyRecord};
use crate::rng::seeded;

pub const ARCHIVE_FORMAT: &str = "lrsearch-archive";
pub const ARCHIVE_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchiveHeader {
    pub format: String,
    pub version: u32,
    pub spec: PolicyClassSpec,
    pub environment: String,
    pub horizon: usize,
    /// Seed the experience was generated with.
    pub seed: u64,
    pub verbose: bool,
    pub records: usize,
}

#[derive(Serialize, Deserialize)]
struct RecordLine {
    policy: PolicyRecord,
    #[serde(rename = "return")]
    ret: f64,
    history: History,
}

/// A loaded archive.
#[derive(Clone, Debug)]
pub struct Archive {
    pub header: ArchiveHeader,
    pub dataset: Dataset,
}

/// Writes `data` with provenance `environment`, `horizon` and `seed`.
pub fn write_archive<W: Write>(out: W, data: &Dataset, environment: &str, horizon: usize, seed: u64) -> Result<()> {
    let mut out = BufWriter::new(out);
    let header = ArchiveHeader {
        format: ARCHIVE_FORMAT.to_string(),
        version: ARCHIVE_VERSION,
        spec: *data.spec(),
        environment: environment.to_string(),
        horizon,
        seed,
        verbose: data.is_verbose(),
        records: data.len(),
    };
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    for rec in data.records() {
        let line = RecordLine {
            policy: PolicyRecord::from(rec.policy()),
            ret: rec.ret(),
            history: rec.history().clone(),
        };
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn save_dataset(path: &Path, data: &Dataset, environment: &str, horizon: usize, seed: u64) -> Result<()> {
    write_archive(File::create(path)?, data, environment, horizon, seed)
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Reads an archive; `path` is used only in error messages.
pub fn read_archive<R: BufRead>(input: R, path: &Path) -> Result<Archive> {
    let mut lines = input.lines();
    let first = lines
        .next()
        .transpose()?
        .ok_or_else(|| parse_err(path, 1, "empty file, expected an archive header"))?;
    let header: ArchiveHeader =
        serde_json::from_str(&first).map_err(|e| parse_err(path, 1, format!("bad header: {e}")))?;
    if header.format != ARCHIVE_FORMAT {
        return Err(parse_err(path, 1, format!("not an experience archive (format '{}')", header.format)));
    }
    if header.version != ARCHIVE_VERSION {
        return Err(parse_err(
            path,
            1,
            format!("unsupported archive version {} (expected {ARCHIVE_VERSION})", header.version),
        ));
    }
    header
        .spec
        .validate()
        .map_err(|e| parse_err(path, 1, format!("bad policy class: {e}")))?;
    let mut dataset = if header.verbose {
        Dataset::verbose(header.spec)
    } else {
        Dataset::new(header.spec)
    };
    let mut seen = 0;
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        if seen == header.records {
            return Err(parse_err(path, lineno, format!("more records than the {} declared", header.records)));
        }
        let rec: RecordLine =
            serde_json::from_str(&line).map_err(|e| parse_err(path, lineno, format!("corrupt record: {e}")))?;
        let policy = PolicyParams::try_from(rec.policy).map_err(|e| parse_err(path, lineno, e.to_string()))?;
        if rec.history.has_steps() && !rec.history.counts_consistent() {
            return Err(parse_err(path, lineno, "history steps disagree with counts"));
        }
        let record =
            SampleRecord::new(policy, rec.ret, rec.history).map_err(|e| parse_err(path, lineno, e.to_string()))?;
        dataset.add(record).map_err(|e| parse_err(path, lineno, e.to_string()))?;
        seen += 1;
    }
    if seen != header.records {
        return Err(parse_err(
            path,
            seen + 2,
            format!("truncated archive: {seen} of {} records present", header.records),
        ));
    }
    Ok(Archive { header, dataset })
}

pub fn load_archive(path: &Path) -> Result<Archive> {
    read_archive(BufReader::new(File::open(path)?), path)
}

/// Loads the dataset stored at `path`.
pub fn load_experience(path: &Path) -> Result<Dataset> {
    Ok(load_archive(path)?.dataset)
}

/// Runs each policy once in `env` (rng seeded with `seed`) and archives the trials at `path`.
pub fn archive_policies<E: Environment + ?Sized>(
    env: &mut E,
    policies: &[PolicyParams],
    seed: u64,
    verbose: bool,
    path: &Path,
) -> Result<Dataset> {
    let mut rng = seeded(seed);
    let spec = match policies.first() {
        Some(p) => *p.spec(),
        None => return Err(Error::config("no policies to archive")),
    };
    let mut data = if verbose { Dataset::verbose(spec) } else { Dataset::new(spec) };
    for p in policies {
        let (ret, h) = sample(env, p, &mut rng)?;
        data.add(SampleRecord::new(p.clone(), ret, h)?)?;
    }
    save_dataset(path, &data, env.name(), env.horizon(), seed)?;
    Ok(data)
}

/// Runs [`learn`] and archives the experience it gathered.
pub fn archive_learn_run<E: Environment + ?Sized>(
    env: &mut E,
    spec: &PolicyClassSpec,
    cfg: &LearnConfig,
    path: &Path,
) -> Result<Dataset> {
    let outcome = learn(env, spec, cfg)?;
    save_dataset(path, &outcome.dataset, env.name(), env.horizon(), cfg.seed)?;
    Ok(outcome.dataset)
}
