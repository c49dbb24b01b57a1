use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::search::SearchSpace;
use crate::error::{Error, Result};
use crate::layers::Flavor;
use crate::rmsg::RmsgConfig;
use crate::traffic::synth::SynthConfig;
use crate::traffic::TrafficConfig;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    #[default]
    Rmsg,
    Traffic,
}

/// A trainable flavor or one of the reference predictors.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Gcn,
    Diffusion,
    Gat,
    #[default]
    Mpnn,
    Average,
    Copylast,
    Histavg,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Gcn => "gcn",
            ModelKind::Diffusion => "diffusion",
            ModelKind::Gat => "gat",
            ModelKind::Mpnn => "mpnn",
            ModelKind::Average => "average",
            ModelKind::Copylast => "copylast",
            ModelKind::Histavg => "histavg",
        }
    }

    pub fn flavor(self) -> Option<Flavor> {
        match self {
            ModelKind::Gcn => Some(Flavor::Gcn),
            ModelKind::Diffusion => Some(Flavor::Diffusion),
            ModelKind::Gat => Some(Flavor::Gat),
            ModelKind::Mpnn => Some(Flavor::Mpnn),
            _ => None,
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(Value::String(s.to_ascii_lowercase()))
            .map_err(|_| Error::Config(format!("unknown flavor {s:?}; expected gcn, diffusion, gat, mpnn, average, copylast or histavg")))
    }
}

/// Where traffic data comes from: CSV files, or the synthetic generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub values: Option<PathBuf>,
    pub adjacency: Option<PathBuf>,
    /// Keep only the first `nodes` sensors.
    pub nodes: Option<usize>,
    /// Keep only the first `steps` time steps.
    pub steps: Option<usize>,
    pub synth: SynthConfig,
    /// Seed of the synthetic series, separate from the model seed.
    pub synth_seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            values: None,
            adjacency: None,
            nodes: None,
            steps: None,
            synth: SynthConfig::default(),
            synth_seed: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: Task,
    pub flavor: ModelKind,
    pub seed: u64,
    /// Seeds for multi-run commands; empty means `[seed]`.
    pub seeds: Vec<u64>,
    pub out_dir: Option<PathBuf>,
    /// Trial worker threads for `tune`.
    pub workers: usize,
    pub rmsg: RmsgConfig,
    pub traffic: TrafficConfig,
    pub data: DataConfig,
    pub search: SearchSpace,
    /// Hidden widths for `rmsg sweep`.
    pub sizes: Vec<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            task: Task::Rmsg,
            flavor: ModelKind::Mpnn,
            seed: 1,
            seeds: Vec::new(),
            out_dir: None,
            workers: 1,
            rmsg: RmsgConfig::default(),
            traffic: TrafficConfig::desk(),
            data: DataConfig::default(),
            search: SearchSpace::default(),
            sizes: vec![2, 4, 8, 16, 32],
        }
    }
}

impl ExperimentConfig {
    /// Reads a TOML (`.toml`) or JSON file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Load {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })?;
        Self::parse(&text, path)
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let load_err = |msg: String| Error::Load {
            path: path.to_path_buf(),
            msg,
        };
        if path.extension().is_some_and(|e| e == "toml") {
            toml::from_str(text).map_err(|e| load_err(e.to_string()))
        } else {
            serde_json::from_str(text).map_err(|e| load_err(e.to_string()))
        }
    }

    pub fn seed_list(&self) -> Vec<u64> {
        if self.seeds.is_empty() {
            vec![self.seed]
        } else {
            self.seeds.clone()
        }
    }

    /// Sets a dotted field path (`rmsg.lr`, `traffic.model.heads`) to `raw`,
    /// read as JSON when it parses and as a string otherwise.
    pub fn set(&mut self, path: &str, raw: &str) -> Result<()> {
        let value: Value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        let mut tree = serde_json::to_value(&*self)?;
        let mut node = &mut tree;
        for key in path.split('.') {
            node = node
                .as_object_mut()
                .and_then(|o| o.get_mut(key))
                .ok_or_else(|| Error::Config(format!("unknown config field {path:?}")))?;
        }
        *node = value;
        *self = serde_json::from_value(tree).map_err(|e| Error::Config(format!("{path} = {raw}: {e}")))?;
        Ok(())
    }

    /// Pushes the top-level flavor into the task configs.
    pub fn sync_flavor(&mut self) {
        if let Some(f) = self.flavor.flavor() {
            self.rmsg.flavor = f;
            self.traffic.model.flavor = f;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_and_json_agree() {
        let toml_text = "task = \"traffic\"\nflavor = \"gat\"\nseed = 4\n[traffic]\nlr = 0.01\n[traffic.model]\nheads = 8\n";
        let a = ExperimentConfig::parse(toml_text, Path::new("x.toml")).unwrap();
        let json_text = r#"{"task":"traffic","flavor":"gat","seed":4,"traffic":{"lr":0.01,"model":{"heads":8}}}"#;
        let b = ExperimentConfig::parse(json_text, Path::new("x.json")).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.traffic.model.heads, 8);
        assert_eq!(a.traffic.batch_size, TrafficConfig::default().batch_size);
    }

    #[test]
    fn unknown_fields_rejected() {
        assert!(ExperimentConfig::parse("bogus = 1", Path::new("x.toml")).is_err());
        assert!(ExperimentConfig::parse(r#"{"rmsg":{"hiden":3}}"#, Path::new("x.json")).is_err());
    }

    #[test]
    fn dotted_overrides() {
        let mut c = ExperimentConfig::default();
        c.set("rmsg.lr", "0.5").unwrap();
        c.set("traffic.model.dilations", "[1,2,4,8]").unwrap();
        c.set("flavor", "histavg").unwrap();
        c.set("data.values", "/tmp/v.csv").unwrap();
        assert_eq!(c.rmsg.lr, 0.5);
        assert_eq!(c.traffic.model.dilations, vec![1, 2, 4, 8]);
        assert_eq!(c.flavor, ModelKind::Histavg);
        assert_eq!(c.data.values.as_deref(), Some(Path::new("/tmp/v.csv")));
        assert!(c.set("rmsg.nope", "1").is_err());
        assert!(c.set("rmsg.lr", "\"fast\"").is_err());
    }

    #[test]
    fn round_trip_through_json() {
        let c = ExperimentConfig::default();
        let text = serde_json::to_string_pretty(&c).unwrap();
        assert_eq!(ExperimentConfig::parse(&text, Path::new("c.json")).unwrap(), c);
    }

    #[test]
    fn flavor_names() {
        assert_eq!("MPNN".parse::<ModelKind>().unwrap(), ModelKind::Mpnn);
        assert!("transformer".parse::<ModelKind>().is_err());
        assert_eq!(ModelKind::Copylast.flavor(), None);
    }
}
