//! Artifact files. Every file starts with the provenance: a `#` comment line
//! in CSV, a `provenance` key in JSON, a leading record in JSONL.

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::ExperimentConfig;

#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub tool: &'static str,
    pub version: &'static str,
    pub subcommand: &'static str,
    pub config_sha256: String,
    pub seed: u64,
}

impl Provenance {
    pub fn new(subcommand: &'static str, config: &ExperimentConfig) -> Self {
        Self {
            tool: "qlink",
            version: env!("CARGO_PKG_VERSION"),
            subcommand,
            config_sha256: config.hash(),
            seed: config.seed,
        }
    }

    fn csv_comment(&self) -> String {
        format!(
            "# {} {} subcommand={} config_sha256={} seed={}\n",
            self.tool, self.version, self.subcommand, self.config_sha256, self.seed
        )
    }
}

pub enum Artifact {
    Csv {
        name: String,
        header: Vec<&'static str>,
        rows: Vec<Vec<String>>,
    },
    Json {
        name: String,
        value: serde_json::Value,
    },
    Jsonl {
        name: String,
        lines: String,
    },
}

impl Artifact {
    pub fn csv(name: &str, header: &[&'static str], rows: Vec<Vec<String>>) -> Self {
        Artifact::Csv {
            name: name.to_string(),
            header: header.to_vec(),
            rows,
        }
    }

    pub fn json(name: &str, value: impl Serialize) -> Self {
        Artifact::Json {
            name: name.to_string(),
            value: serde_json::to_value(value).expect("summaries serialize"),
        }
    }

    fn name(&self) -> &str {
        match self {
            Artifact::Csv { name, .. } | Artifact::Json { name, .. } | Artifact::Jsonl { name, .. } => name,
        }
    }

    fn render(&self, p: &Provenance) -> String {
        match self {
            Artifact::Csv { header, rows, .. } => {
                let mut s = p.csv_comment();
                s.push_str(&header.join(","));
                s.push('\n');
                for r in rows {
                    s.push_str(&r.join(","));
                    s.push('\n');
                }
                s
            }
            Artifact::Json { value, .. } => {
                let doc = serde_json::json!({ "provenance": p, "result": value });
                let mut s = serde_json::to_string_pretty(&doc).expect("json renders");
                s.push('\n');
                s
            }
            Artifact::Jsonl { lines, .. } => {
                let mut s = serde_json::json!({ "provenance": p }).to_string();
                s.push('\n');
                s.push_str(lines);
                s
            }
        }
    }
}

pub fn write_all(
    dir: &Path,
    provenance: &Provenance,
    artifacts: &[Artifact],
) -> Result<Vec<PathBuf>, (String, std::io::Error)> {
    std::fs::create_dir_all(dir).map_err(|e| (dir.display().to_string(), e))?;
    let mut written = Vec::new();
    for a in artifacts {
        let path = dir.join(a.name());
        std::fs::write(&path, a.render(provenance)).map_err(|e| (path.display().to_string(), e))?;
        written.push(path);
    }
    Ok(written)
}

/// Shortest round-trip decimal form.
pub fn num(x: f64) -> String {
    format!("{x}")
}

pub fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}
