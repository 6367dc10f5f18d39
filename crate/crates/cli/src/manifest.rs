use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use lagcast_core::kv::KvMap;

use crate::exit::ConfigProblem;

pub const MANIFEST_FILE: &str = "manifest.txt";

/// What a command was asked to do, written before it starts working.
#[derive(Debug, Clone)]
pub struct RunManifest {
    pub command: String,
    pub run: String,
    pub configs: Vec<PathBuf>,
    pub inputs: Vec<PathBuf>,
    pub out: PathBuf,
    pub seed: Option<u64>,
    pub params: Vec<(String, String)>,
}

fn join(paths: &[PathBuf]) -> String {
    paths.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(",")
}

impl RunManifest {
    pub fn new(command: &str, run: &str, out: &Path) -> Self {
        Self {
            command: command.into(),
            run: run.into(),
            configs: Vec::new(),
            inputs: Vec::new(),
            out: out.to_path_buf(),
            seed: None,
            params: Vec::new(),
        }
    }

    pub fn input(mut self, path: &Path) -> Self {
        self.inputs.push(path.to_path_buf());
        self
    }

    pub fn config(mut self, path: &Path) -> Self {
        self.configs.push(path.to_path_buf());
        self
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn param(mut self, key: &str, value: impl ToString) -> Self {
        self.params.push((key.into(), value.to_string()));
        self
    }

    pub fn to_kv(&self) -> KvMap {
        let mut kv = KvMap::new();
        kv.set("command", &self.command);
        kv.set("run", &self.run);
        kv.set("configs", join(&self.configs));
        kv.set("inputs", join(&self.inputs));
        kv.set("out", self.out.display());
        if let Some(s) = self.seed {
            kv.set("seed", s);
        }
        for (k, v) in &self.params {
            kv.set(&format!("param.{k}"), v);
        }
        kv
    }

    /// Creates the output directory and writes the manifest. A directory
    /// already holding another run's manifest is refused.
    pub fn persist(&self) -> Result<()> {
        let path = self.out.join(MANIFEST_FILE);
        if let Ok(text) = fs::read_to_string(&path) {
            let prev = KvMap::parse(&text).ok();
            let same = prev
                .as_ref()
                .is_some_and(|kv| kv.raw("run") == Some(&self.run) && kv.raw("command") == Some(&self.command));
            if !same {
                return Err(anyhow::Error::new(ConfigProblem(format!(
                    "{} already holds a different run",
                    self.out.display()
                ))));
            }
        }
        fs::create_dir_all(&self.out).with_context(|| format!("creating {}", self.out.display()))?;
        fs::write(&path, self.to_kv().to_text()).with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }
}
