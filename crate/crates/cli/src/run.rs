//! Shared plumbing: scene resolution, output directories, versioned CSV
//! files and the run manifest.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use softgrad::ident::scenes;
use softgrad::Scene;

use crate::error::{CliError, CliResult, Context};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Args, Serialize)]
pub struct CommonArgs {
    /// Scene JSON file, or the name of a built-in scene.
    #[arg(long)]
    pub scene: Option<String>,
    /// Output directory (created if missing).
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
    /// Seed for the jitter applied to built-in element scenes.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads for the data-parallel kernels (default: all cores).
    #[arg(long)]
    #[serde(skip)]
    pub threads: Option<usize>,
    /// Replace the scene's time step.
    #[arg(long)]
    pub dt_override: Option<f64>,
    /// Replace the scene's smoothing parameter 2ε².
    #[arg(long)]
    pub eps2_override: Option<f64>,
}

/// A scene together with where it came from.
pub struct LoadedScene {
    pub scene: Scene,
    pub source: String,
}

impl CommonArgs {
    pub fn init_threads(&self) -> CliResult<()> {
        if let Some(n) = self.threads {
            if n == 0 {
                return Err(CliError::input(anyhow::anyhow!("--threads must be at least 1")));
            }
            // A second call in the same process keeps the first pool.
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
        Ok(())
    }

    pub fn load_scene(&self) -> CliResult<LoadedScene> {
        let name = self.scene.as_deref().ok_or_else(|| CliError::input(anyhow::anyhow!("--scene is required")))?;
        let path = Path::new(name);
        let (scene, source) = if path.exists() {
            let s = Scene::load(path).map_err(|e| CliError::input(anyhow::Error::new(e).context(format!("cannot load scene {}", path.display()))))?;
            (s, path.display().to_string())
        } else if let Some(s) = scenes::by_name(name, self.seed) {
            (s, format!("builtin:{name}"))
        } else {
            let known: Vec<&str> = scenes::scene_library(0).into_iter().map(|(n, _)| n).collect();
            return Err(CliError::input(anyhow::anyhow!(
                "scene file {} not found (and not a built-in scene: {})",
                path.display(),
                known.join(", ")
            )));
        };
        Ok(LoadedScene { scene: self.apply_overrides(scene)?, source })
    }

    pub fn apply_overrides(&self, mut scene: Scene) -> CliResult<Scene> {
        if let Some(dt) = self.dt_override {
            scene.h = dt;
        }
        if let Some(e) = self.eps2_override {
            scene.eps2 = e;
        }
        scene.validate().map_err(CliError::sim)?;
        Ok(scene)
    }

    pub fn prepare_out(&self) -> CliResult<()> {
        std::fs::create_dir_all(&self.out).input_ctx(|| format!("cannot create output directory {}", self.out.display()))?;
        let probe = self.out.join(".write_probe");
        File::create(&probe).input_ctx(|| format!("output directory {} is not writable", self.out.display()))?;
        let _ = std::fs::remove_file(probe);
        Ok(())
    }
}

/// A CSV file whose first line is `# softgrad <schema> v<version>`.
pub struct CsvOut {
    writer: csv::Writer<BufWriter<File>>,
}

impl CsvOut {
    pub fn create(path: &Path, schema: &str, version: u32, header: &[String]) -> CliResult<Self> {
        let mut file = BufWriter::new(File::create(path).input_ctx(|| format!("cannot create {}", path.display()))?);
        writeln!(file, "# softgrad {schema} v{version}").map_err(CliError::input)?;
        let mut writer = csv::Writer::from_writer(file);
        writer.write_record(header).map_err(CliError::input)?;
        Ok(Self { writer })
    }

    pub fn row(&mut self, fields: &[String]) -> CliResult<()> {
        self.writer.write_record(fields).map_err(CliError::input)
    }

    pub fn finish(mut self) -> CliResult<()> {
        self.writer.flush().map_err(CliError::input)
    }
}

/// Shortest round-trip formatting; identical values give identical text.
pub fn num(x: f64) -> String {
    format!("{x:e}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub scene_path: String,
    /// SHA-256 over the command, the resolved scene and the configuration.
    pub config_hash: String,
    pub output_dir: String,
    pub seed: u64,
    pub timestamp: String,
}

/// Hash of everything that determines a run's outputs.
pub fn config_hash(command: &str, scene: &Scene, config: &impl Serialize) -> CliResult<String> {
    let doc = serde_json::json!({ "command": command, "scene": scene, "config": config });
    let bytes = serde_json::to_vec(&doc).map_err(CliError::input)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn write_manifest(common: &CommonArgs, command: &str, loaded: &LoadedScene, config: &impl Serialize) -> CliResult<RunManifest> {
    let manifest = RunManifest {
        command: command.into(),
        scene_path: loaded.source.clone(),
        config_hash: config_hash(command, &loaded.scene, config)?,
        output_dir: common.out.display().to_string(),
        seed: common.seed,
        timestamp: chrono::Utc::now().to_rfc3339(),
    };
    write_json(&common.out.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

pub fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(CliError::input)?;
    std::fs::write(path, text + "\n").input_ctx(|| format!("cannot write {}", path.display()))
}
