//! Output directory handling and scenario loading.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use chargeshare_core::data::bundled_scenarios;
use chargeshare_core::{load_scenario, Scenario};
use serde::Serialize;

pub struct OutDir {
    root: PathBuf,
}

impl OutDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).with_context(|| format!("creating output directory {}", root.display()))?;
        Ok(Self { root: root.to_path_buf() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn file(&self, name: &str) -> Result<BufWriter<File>> {
        let p = self.path(name);
        let f = File::create(&p).with_context(|| format!("creating {}", p.display()))?;
        Ok(BufWriter::new(f))
    }

    pub fn json<T: Serialize>(&self, name: &str, value: &T) -> Result<()> {
        let text = serde_json::to_string_pretty(value)?;
        fs::write(self.path(name), text + "\n").with_context(|| format!("writing {name}"))
    }

    pub fn text(&self, name: &str, body: &str) -> Result<()> {
        fs::write(self.path(name), body).with_context(|| format!("writing {name}"))
    }
}

/// Resolves a scenario argument: either a JSON file, `bundled` for the
/// single-cluster day, or `bundled:<name>` for any bundled instance.
pub fn resolve_scenario(arg: &str) -> Result<Scenario> {
    if let Some(rest) = arg.strip_prefix("bundled") {
        let name = rest.strip_prefix(':').unwrap_or("ieee33_4cs_1ses");
        let all = bundled_scenarios();
        return match all.into_iter().find(|(n, _)| *n == name) {
            Some((_, s)) => Ok(s),
            None => bail!("no bundled scenario named `{name}`"),
        };
    }
    load_scenario(arg).with_context(|| format!("loading scenario {arg}"))
}
