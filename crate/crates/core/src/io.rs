//! CSV/JSON helpers shared by the exporters.
//!
//! CSV files may start with `#` comment lines; readers skip them and require
//! the named header columns in order.

use std::io::{Read, Write};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub fn write_csv<W, I>(mut w: W, header_comment: Option<&str>, columns: &[&str], rows: I) -> Result<()>
where
    W: Write,
    I: IntoIterator<Item = Vec<f64>>,
{
    if let Some(c) = header_comment {
        for line in c.lines() {
            writeln!(w, "# {line}")?;
        }
    }
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(columns)?;
    for row in rows {
        wr.write_record(row.iter().map(|v| format!("{v}")))?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_csv<R: Read>(r: R, columns: &[&str]) -> Result<Vec<Vec<f64>>> {
    let mut rd = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(r);
    let header: Vec<String> = rd.headers()?.iter().map(str::to_owned).collect();
    if header.len() != columns.len() || header.iter().zip(columns).any(|(h, c)| h != c) {
        return Err(Error::Config(format!("expected CSV columns {columns:?}, found {header:?}")));
    }
    let mut rows = Vec::new();
    for (line, rec) in rd.records().enumerate() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|_| Error::Config(format!("data row {}: '{f}' is not a number", line + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok(rows)
}

/// Provenance block written first in every JSON output and as a comment
/// header in every CSV output.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, serde::Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
}

impl Provenance {
    pub fn new(config_hash: impl Into<String>, seed: u64) -> Self {
        Self {
            tool: "tbswap".into(),
            version: crate::VERSION.into(),
            config_hash: config_hash.into(),
            seed,
        }
    }

    pub fn comment(&self) -> String {
        format!(
            "{} v{} config_hash={} seed={}",
            self.tool, self.version, self.config_hash, self.seed
        )
    }
}

/// JSON document with the provenance block under `_meta`.
pub fn to_json_with_meta<T: Serialize>(meta: &Provenance, body: &T) -> Result<String> {
    let mut map = serde_json::Map::new();
    map.insert("_meta".into(), serde_json::to_value(meta)?);
    match serde_json::to_value(body)? {
        serde_json::Value::Object(obj) => map.extend(obj),
        other => {
            map.insert("data".into(), other);
        }
    }
    Ok(serde_json::to_string_pretty(&serde_json::Value::Object(map))?)
}

/// Short content hash of any serializable value.
pub fn content_hash<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).unwrap_or_default();
    let digest = Sha256::digest(&bytes);
    hex::encode(&digest[..8])
}
