use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde_json::Value;
use swlab_core::Field;

use crate::config::{ExperimentConfig, Format};

/// `<directory>/<hash prefix>-<UTC timestamp>`; every CSV row and JSON
/// object written through it carries the full config hash.
pub struct RunDir {
    pub path: PathBuf,
    pub hash: String,
    csv: bool,
    json: bool,
}

impl RunDir {
    pub fn create(cfg: &ExperimentConfig, root: Option<&Path>) -> std::io::Result<Self> {
        let hash = cfg.hash();
        let base = root
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from(&cfg.output.directory));
        fs::create_dir_all(&base)?;
        let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%S%.3fZ");
        let stem = format!("{}-{stamp}", &hash[..16]);
        let mut path = base.join(&stem);
        let mut k = 1;
        while path.exists() {
            path = base.join(format!("{stem}-{k}"));
            k += 1;
        }
        fs::create_dir(&path)?;
        fs::write(path.join("config.toml"), cfg.to_toml())?;
        Ok(Self {
            path,
            hash,
            csv: cfg.output.formats.contains(&Format::Csv),
            json: cfg.output.formats.contains(&Format::Json),
        })
    }

    /// Writes `value` with a `config_hash` member; non-objects are wrapped.
    pub fn json(&self, name: &str, value: Value) -> std::io::Result<()> {
        if !self.json {
            return Ok(());
        }
        self.json_always(name, value)
    }

    /// Manifests and diagnostics are written regardless of `output.formats`.
    pub fn json_always(&self, name: &str, value: Value) -> std::io::Result<()> {
        let mut obj = match value {
            Value::Object(m) => m,
            other => {
                let mut m = serde_json::Map::new();
                m.insert("value".into(), other);
                m
            }
        };
        obj.insert("config_hash".into(), Value::String(self.hash.clone()));
        let mut text = serde_json::to_string_pretty(&Value::Object(obj))?;
        text.push('\n');
        self.ensure_parent(name)?;
        fs::write(self.path.join(name), text)
    }

    /// RFC 4180 table with a trailing `config_hash` column.
    pub fn csv<R, S>(&self, name: &str, header: &[&str], rows: R) -> std::io::Result<()>
    where
        R: IntoIterator<Item = Vec<S>>,
        S: AsRef<str>,
    {
        if !self.csv {
            return Ok(());
        }
        self.ensure_parent(name)?;
        let mut w = csv::Writer::from_path(self.path.join(name))?;
        w.write_record(header.iter().copied().chain(["config_hash"]))?;
        for row in rows {
            w.write_record(row.iter().map(|s| s.as_ref()).chain([self.hash.as_str()]))?;
        }
        w.flush()
    }

    pub fn field(&self, name: &str, field: &Field) -> std::io::Result<()> {
        self.ensure_parent(name)?;
        let mut w = BufWriter::new(fs::File::create(self.path.join(name))?);
        field.write_dump(&mut w).map_err(std::io::Error::other)?;
        w.flush()
    }

    fn ensure_parent(&self, name: &str) -> std::io::Result<()> {
        if let Some(parent) = self.path.join(name).parent() {
            fs::create_dir_all(parent)?;
        }
        Ok(())
    }
}

/// Shortest round-trip decimal form, as used in every CSV cell.
pub fn num(x: f64) -> String {
    format!("{x:e}")
}
