//! Config loading, output files and model resolution shared by commands.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use maso_core::io::{load_model, Dataset, ExperimentConfig};
use maso_core::{Network, Result};
use serde_json::Value;

use crate::Global;

const TOY_CONFIG: &str = include_str!("../../../configs/toy-2-45-3-4.json");

pub struct Context {
    pub cfg: ExperimentConfig,
    pub out: PathBuf,
    model: Option<PathBuf>,
}

impl Context {
    pub fn new(g: &Global) -> Result<Self> {
        let mut cfg = match &g.config {
            Some(p) => ExperimentConfig::from_path(p)?,
            None => ExperimentConfig::from_json(TOY_CONFIG)?,
        };
        if let Some(s) = g.seed {
            cfg.override_seed(s);
        }
        let out = cfg.output_dir(g.out.as_deref());
        std::fs::create_dir_all(&out)?;
        Ok(Context {
            cfg,
            out,
            model: g.model.clone(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    pub fn dataset(&self) -> Result<Dataset> {
        self.cfg.data.load(&self.cfg.base_dir)
    }

    pub fn model_path(&self) -> PathBuf {
        self.path("model.json")
    }

    /// The explicit model, else a trained one in the output directory, else
    /// a freshly initialised network.
    pub fn network(&self) -> Result<(Network, String)> {
        if let Some(p) = &self.model {
            return Ok((load_model(p)?, p.display().to_string()));
        }
        let saved = self.model_path();
        if saved.exists() {
            return Ok((load_model(&saved)?, saved.display().to_string()));
        }
        Ok((self.cfg.build_network()?, "untrained (from config)".into()))
    }

    pub fn jsonl(&self, command: &str) -> Result<Jsonl> {
        Ok(Jsonl {
            w: BufWriter::new(File::create(self.path(&format!("{command}.jsonl")))?),
        })
    }

    pub fn write(&self, name: &str, contents: &str) -> Result<PathBuf> {
        let p = self.path(name);
        std::fs::write(&p, contents)?;
        Ok(p)
    }
}

pub struct Jsonl {
    w: BufWriter<File>,
}

impl Jsonl {
    pub fn emit(&mut self, v: Value) -> Result<()> {
        writeln!(self.w, "{v}")?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.w.flush()?;
        Ok(())
    }
}

pub fn display(p: &Path) -> String {
    p.display().to_string()
}
