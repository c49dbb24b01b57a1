use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::rmsg::report::write_json;
use crate::traffic::TrafficReport;

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "FLAVORNET_OUT";

/// Output root: explicit flag, then config, then `$FLAVORNET_OUT`, then `runs`.
pub fn out_root(flag: Option<&Path>, config: &ExperimentConfig) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| config.out_dir.clone())
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"))
}

/// A self-contained run directory with a log file.
pub struct RunDir {
    pub path: PathBuf,
    log: File,
    quiet: bool,
}

impl RunDir {
    /// Creates `root/name` and writes the resolved config, plus a verbatim
    /// copy of the source config file when there is one.
    pub fn create(root: &Path, name: &str, config: &ExperimentConfig, source: Option<&Path>) -> Result<Self> {
        let path = root.join(name);
        std::fs::create_dir_all(&path)?;
        write_json(config, &path.join("config.json"))?;
        if let Some(src) = source {
            let ext = src.extension().and_then(|e| e.to_str()).unwrap_or("txt");
            std::fs::copy(src, path.join(format!("config.source.{ext}"))).map_err(|e| Error::Load {
                path: src.to_path_buf(),
                msg: e.to_string(),
            })?;
        }
        let log = File::create(path.join("run.log"))?;
        Ok(Self { path, log, quiet: false })
    }

    pub fn quiet(mut self, quiet: bool) -> Self {
        self.quiet = quiet;
        self
    }

    pub fn is_quiet(&self) -> bool {
        self.quiet
    }

    pub fn log(&mut self, line: impl AsRef<str>) {
        let line = line.as_ref();
        if !self.quiet {
            eprintln!("{line}");
        }
        // the log is best-effort; a full disk should not abort a finished run
        let _ = writeln!(self.log, "{line}");
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    pub fn json<T: Serialize>(&self, name: &str, value: &T) -> Result<()> {
        write_json(value, &self.file(name))
    }
}

/// Run directory name for a command, flavor and seed.
pub fn run_name(command: &str, flavor: &str, seed: u64) -> String {
    format!("{command}-{flavor}-seed{seed}")
}

/// Per-horizon table, one row per model: `model, rmse_15min, mae_15min, mape_15min, ...`.
pub fn write_horizon_csv(rows: &[(&str, &TrafficReport)], granularity: i64, path: &Path) -> Result<()> {
    let to_io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    let mut w = csv::Writer::from_path(path).map_err(to_io)?;
    let Some((_, first)) = rows.first() else {
        return Err(Error::Contract("no rows to write".into()));
    };
    let mut header = vec!["model".to_string()];
    for h in &first.horizons {
        let m = h.step as i64 * granularity;
        header.extend([format!("rmse_{m}min"), format!("mae_{m}min"), format!("mape_{m}min")]);
    }
    header.push("mean_mae".into());
    w.write_record(&header).map_err(to_io)?;
    for (name, r) in rows {
        let mut rec = vec![name.to_string()];
        for h in &r.horizons {
            rec.extend([format!("{:.6}", h.rmse), format!("{:.6}", h.mae), format!("{:.4}", h.mape)]);
        }
        rec.push(format!("{:.6}", r.mean_mae));
        w.write_record(&rec).map_err(to_io)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::traffic::HorizonMetrics;

    #[test]
    fn run_dir_layout() {
        let tmp = tempfile::tempdir().unwrap();
        let src = tmp.path().join("exp.toml");
        std::fs::write(&src, "seed = 3\n").unwrap();
        let cfg = ExperimentConfig::load(&src).unwrap();
        let mut dir = RunDir::create(tmp.path(), "r", &cfg, Some(&src)).unwrap().quiet(true);
        dir.log("hello");
        assert_eq!(std::fs::read_to_string(dir.file("config.source.toml")).unwrap(), "seed = 3\n");
        let back: ExperimentConfig = serde_json::from_str(&std::fs::read_to_string(dir.file("config.json")).unwrap()).unwrap();
        assert_eq!(back, cfg);
        drop(dir);
        assert_eq!(std::fs::read_to_string(tmp.path().join("r/run.log")).unwrap(), "hello\n");
    }

    #[test]
    fn horizon_table_columns() {
        let r = TrafficReport {
            horizons: vec![
                HorizonMetrics {
                    step: 3,
                    rmse: 1.0,
                    mae: 0.5,
                    mape: 2.0,
                },
                HorizonMetrics {
                    step: 12,
                    rmse: 2.0,
                    mae: 1.5,
                    mape: 4.0,
                },
            ],
            mean_mae: 1.0,
        };
        let tmp = tempfile::tempdir().unwrap();
        let p = tmp.path().join("m.csv");
        write_horizon_csv(&[("copylast", &r)], 5, &p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("model,rmse_15min,mae_15min,mape_15min,rmse_60min,mae_60min,mape_60min,mean_mae\n"));
        assert!(text.contains("copylast,1.000000,0.500000,2.0000,2.000000,1.500000,4.0000,1.000000"));
    }

    #[test]
    fn root_precedence() {
        let mut cfg = ExperimentConfig::default();
        assert_eq!(out_root(Some(Path::new("a")), &cfg), PathBuf::from("a"));
        cfg.out_dir = Some(PathBuf::from("b"));
        assert_eq!(out_root(None, &cfg), PathBuf::from("b"));
    }
}
