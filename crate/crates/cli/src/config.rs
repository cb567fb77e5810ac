//! Run configuration: a TOML file merged with command-line overrides.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use eikt::bkt::FitConfig;
use eikt::eval::PipelineConfig;
use eikt::ingest::Schema;
use eikt::{Error, Result};

pub const DEFAULT_SEED: u64 = 42;
pub const DEFAULT_FOLDS: usize = 5;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub folds: Option<usize>,
    pub bins: Option<usize>,
    pub alpha: Option<f64>,
    pub learn_structure: Option<bool>,
    pub macro_auc: Option<bool>,
    #[serde(default)]
    pub paths: PathsSection,
    pub schema: Option<Schema>,
    #[serde(default)]
    pub bkt: BktSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsSection {
    pub input: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub interactions: Option<PathBuf>,
    pub cleaning_report: Option<PathBuf>,
    pub bkt_model: Option<PathBuf>,
    pub difficulty: Option<PathBuf>,
    pub tan_model: Option<PathBuf>,
    pub report: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BktSection {
    pub restarts: Option<usize>,
    pub max_iters: Option<usize>,
    pub tol: Option<f64>,
    /// `false` turns off both guess and slip caps.
    pub caps: Option<bool>,
    pub guess_cap: Option<f64>,
    pub slip_cap: Option<f64>,
    pub min_attempts: Option<usize>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<FileConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: FileConfig = toml::from_str(&text).map_err(|e| {
            Error::Config(format!("{}: {}", path.display(), one_line(&e.to_string())))
        })?;
        // Relative paths in the file are relative to the file itself.
        let base = path.parent().unwrap_or(Path::new(""));
        let p = &mut cfg.paths;
        for slot in [
            &mut p.input,
            &mut p.out_dir,
            &mut p.interactions,
            &mut p.cleaning_report,
            &mut p.bkt_model,
            &mut p.difficulty,
            &mut p.tan_model,
            &mut p.report,
        ] {
            if let Some(rel) = slot.as_mut() {
                if rel.is_relative() {
                    *rel = base.join(&*rel);
                }
            }
        }
        Ok(cfg)
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Values given on the command line; `None` defers to the file or the default.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub folds: Option<usize>,
    pub bins: Option<usize>,
    pub alpha: Option<f64>,
    pub learn_structure: Option<bool>,
    pub macro_auc: Option<bool>,
    pub input: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Paths {
    pub input: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub interactions: PathBuf,
    pub cleaning_report: PathBuf,
    pub bkt_model: PathBuf,
    pub difficulty: PathBuf,
    pub tan_model: PathBuf,
    pub report_csv: PathBuf,
    pub report_json: PathBuf,
}

impl Paths {
    fn named(&self) -> Vec<(&'static str, &Path)> {
        let mut all = vec![
            ("interactions", self.interactions.as_path()),
            ("cleaning_report", &self.cleaning_report),
            ("bkt_model", &self.bkt_model),
            ("difficulty", &self.difficulty),
            ("tan_model", &self.tan_model),
            ("report", &self.report_csv),
            ("report (json)", &self.report_json),
        ];
        if let Some(input) = &self.input {
            all.insert(0, ("input", input));
        }
        all
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub seed: u64,
    pub folds: usize,
    pub pipeline: PipelineConfig,
    pub schema: Schema,
    pub paths: Paths,
}

impl RunConfig {
    pub fn resolve(file: FileConfig, cli: Overrides) -> Result<RunConfig> {
        let defaults = PipelineConfig::default();
        let fit_defaults = FitConfig::default();
        let b = &file.bkt;
        let caps = b.caps.unwrap_or(true);
        let fit = FitConfig {
            restarts: b.restarts.unwrap_or(fit_defaults.restarts),
            max_iters: b.max_iters.unwrap_or(fit_defaults.max_iters),
            tol: b.tol.unwrap_or(fit_defaults.tol),
            seed: 0,
            guess_cap: if caps {
                b.guess_cap.or(fit_defaults.guess_cap)
            } else {
                None
            },
            slip_cap: if caps {
                b.slip_cap.or(fit_defaults.slip_cap)
            } else {
                None
            },
            min_attempts: b.min_attempts.unwrap_or(fit_defaults.min_attempts),
        };
        let seed = cli.seed.or(file.seed).unwrap_or(DEFAULT_SEED);
        let pipeline = PipelineConfig {
            bins: cli.bins.or(file.bins).unwrap_or(defaults.bins),
            alpha: cli.alpha.or(file.alpha).unwrap_or(defaults.alpha),
            fit: FitConfig { seed, ..fit },
            learn_structure: cli
                .learn_structure
                .or(file.learn_structure)
                .unwrap_or(false),
            macro_auc: cli.macro_auc.or(file.macro_auc).unwrap_or(false),
        };
        let p = file.paths;
        let out_dir = cli
            .out_dir
            .or(p.out_dir)
            .unwrap_or_else(|| PathBuf::from("eikt-out"));
        let report_csv = p.report.unwrap_or_else(|| out_dir.join("report.csv"));
        let paths = Paths {
            input: cli.input.or(p.input),
            interactions: p
                .interactions
                .unwrap_or_else(|| out_dir.join("interactions.csv")),
            cleaning_report: p
                .cleaning_report
                .unwrap_or_else(|| out_dir.join("cleaning_report.csv")),
            bkt_model: p.bkt_model.unwrap_or_else(|| out_dir.join("bkt.tsv")),
            difficulty: p
                .difficulty
                .unwrap_or_else(|| out_dir.join("difficulty.tsv")),
            tan_model: p.tan_model.unwrap_or_else(|| out_dir.join("tan.model")),
            report_json: report_csv.with_extension("json"),
            report_csv,
            out_dir,
        };
        let cfg = RunConfig {
            seed,
            folds: cli.folds.or(file.folds).unwrap_or(DEFAULT_FOLDS),
            pipeline,
            schema: file.schema.unwrap_or_default(),
            paths,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.folds < 2 {
            return Err(Error::Config(format!(
                "folds must be at least 2, got {}",
                self.folds
            )));
        }
        self.pipeline.validate()?;
        let mut seen: BTreeMap<PathBuf, &str> = BTreeMap::new();
        for (name, path) in self.paths.named() {
            if let Some(other) = seen.insert(normalize(path), name) {
                return Err(Error::Config(format!(
                    "paths for {other} and {name} are both {}",
                    path.display()
                )));
            }
        }
        Ok(())
    }
}

/// Lexical normalization, enough to catch `out/./a` vs `out/a`.
fn normalize(path: &Path) -> PathBuf {
    use std::path::Component;
    let mut out = PathBuf::new();
    for c in path.components() {
        match c {
            Component::CurDir => {}
            Component::ParentDir => {
                if !out.pop() {
                    out.push("..");
                }
            }
            other => out.push(other.as_os_str()),
        }
    }
    out
}
