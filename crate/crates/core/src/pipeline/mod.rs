//! End-to-end experiment: worlds → encoders and codebook → exploration →
//! MI analysis → visual search → reports.
//!
//! `run_pipeline` writes every artifact under the output directory and a
//! `manifest.json` whose entries chain the SHA-256 of each stage's outputs
//! onto the previous entry, so any substituted file is detectable.

mod config;
pub mod report;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use serde::{Deserialize, Serialize};

pub use config::{
    EncoderKind, EnvironmentConfig, ExperimentConfig, GalleryConfig, WorldKind, OUTPUT_DIR_ENV,
};

use crate::codebook::{collect_samples, PrototypeCodebook};
use crate::encoding::{init_encoders, EncoderBank};
use crate::environment::{self, Environment};
use crate::error::{Error, Result};
use crate::explorer::{explore_many, ExplorePlan};
use crate::geometry::RetinaGeometry;
use crate::information::{analyze, MiAnalysis};
use crate::io::{self, sha256_hex};
use crate::model::{ModelMeta, PredictiveModel};
use crate::search::{run_search, SearchReport};

/// Everything a training run produces, held in memory.
#[derive(Debug, Clone)]
pub struct Trained {
    pub geometry: RetinaGeometry,
    pub bank: EncoderBank,
    pub envs: Vec<Environment>,
    pub codebook: PrototypeCodebook,
    pub model: PredictiveModel,
    pub analysis: MiAnalysis,
}

pub fn make_bank(config: &ExperimentConfig, geometry: &RetinaGeometry) -> EncoderBank {
    match config.encoder {
        EncoderKind::Scrambled => init_encoders(config.stage_seed("encoders"), geometry),
        EncoderKind::Identity => EncoderBank::identity(geometry),
    }
}

pub fn generate_envs(metas: &[environment::EnvMeta]) -> Result<Vec<Environment>> {
    metas.iter().map(environment::generate).collect()
}

pub fn learn_codebook(
    config: &ExperimentConfig,
    geometry: &RetinaGeometry,
    bank: &EncoderBank,
    envs: &[Environment],
) -> Result<PrototypeCodebook> {
    let samples = collect_samples(
        envs,
        bank,
        geometry,
        config.samples_per_field,
        config.stage_seed("codebook/samples"),
    )?;
    PrototypeCodebook::fit(&samples, geometry, bank, config.stage_seed("codebook/kmeans"))
}

pub fn explore_plan(config: &ExperimentConfig) -> ExplorePlan {
    ExplorePlan {
        saccades_per_env: config.saccades_per_env,
        shards_per_env: config.shards_per_env,
        seed: config.stage_seed("explore"),
    }
}

pub fn estimate_model(
    config: &ExperimentConfig,
    geometry: &RetinaGeometry,
    bank: &EncoderBank,
    codebook: &PrototypeCodebook,
    envs: &[Environment],
) -> Result<PredictiveModel> {
    let plan = explore_plan(config);
    let counts = explore_many(envs, bank, codebook, geometry, &plan, config.workers)?;
    Ok(PredictiveModel::new(
        counts,
        ModelMeta {
            total_saccades: config.saccades_per_env * envs.len() as u64,
            n_environments: envs.len() as u64,
            seeds: envs.iter().map(|e| e.seed).chain([plan.seed]).collect(),
            geometry_hash: geometry.content_hash(),
            encoder_hash: bank.content_hash(),
            codebook_hash: codebook.content_hash(),
        },
    ))
}

/// Runs the learning stages in memory, without touching the filesystem.
pub fn train(config: &ExperimentConfig) -> Result<Trained> {
    let geometry = config.validate().map_err(|e| e.in_stage("config"))?;
    let envs = generate_envs(&config.training_env_metas()).map_err(|e| e.in_stage("gen-env"))?;
    let bank = make_bank(config, &geometry);
    let codebook =
        learn_codebook(config, &geometry, &bank, &envs).map_err(|e| e.in_stage("learn-codebook"))?;
    let model = estimate_model(config, &geometry, &bank, &codebook, &envs)
        .map_err(|e| e.in_stage("explore"))?;
    let analysis = analyze(&model.counts);
    Ok(Trained {
        geometry,
        bank,
        envs,
        codebook,
        model,
        analysis,
    })
}

pub fn search(config: &ExperimentConfig, trained: &Trained) -> Result<SearchReport> {
    let envs = generate_envs(&config.search_env_metas())?;
    run_search(
        &envs,
        &trained.model,
        &trained.analysis.mi,
        &trained.codebook,
        &trained.bank,
        &trained.geometry,
        config.search_trials,
        config.stage_seed("search"),
    )
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactRecord {
    /// Relative to the output directory.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub seeds: BTreeMap<String, u64>,
    pub duration_ms: u64,
    pub artifacts: Vec<ArtifactRecord>,
    /// SHA-256 over the previous chain value, the stage name and every
    /// artifact record.
    pub chain: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_sha256: String,
    pub stages: Vec<StageRecord>,
}

/// Hash of the configuration with the output location cleared, so runs
/// into different directories share a chain.
pub fn config_hash(config: &ExperimentConfig) -> Result<String> {
    let mut c = config.clone();
    c.output_dir = PathBuf::new();
    Ok(sha256_hex(c.to_toml()?.as_bytes()))
}

fn chain_link(prev: &str, name: &str, artifacts: &[ArtifactRecord]) -> String {
    let mut text = format!("{prev}\n{name}\n");
    for a in artifacts {
        text.push_str(&format!("{}:{}\n", a.path, a.sha256));
    }
    sha256_hex(text.as_bytes())
}

impl Manifest {
    /// Hashes of all stages, without timing information.
    pub fn hashes(&self) -> Vec<(String, Vec<ArtifactRecord>, String)> {
        self.stages
            .iter()
            .map(|s| (s.name.clone(), s.artifacts.clone(), s.chain.clone()))
            .collect()
    }

    pub fn load(dir: &Path) -> Result<Manifest> {
        let bytes = io::read_file(&dir.join("manifest.json"))?;
        Ok(serde_json::from_slice(&bytes)?)
    }

    /// Re-hashes every artifact and re-derives the chain.
    pub fn verify(&self, dir: &Path) -> Result<()> {
        let mut prev = self.config_sha256.clone();
        for stage in &self.stages {
            for a in &stage.artifacts {
                let found = io::file_sha256(&dir.join(&a.path))?;
                if found != a.sha256 {
                    return Err(Error::HashMismatch {
                        artifact: "pipeline artifact",
                        expected: format!("{} {}", a.path, a.sha256),
                        found,
                    });
                }
            }
            let link = chain_link(&prev, &stage.name, &stage.artifacts);
            if link != stage.chain {
                return Err(Error::HashMismatch {
                    artifact: "manifest chain",
                    expected: stage.chain.clone(),
                    found: link,
                });
            }
            prev = link;
        }
        Ok(())
    }
}

struct ManifestBuilder<'a> {
    dir: &'a Path,
    manifest: Manifest,
}

impl<'a> ManifestBuilder<'a> {
    fn stage(&mut self, name: &str, seeds: &[(&str, u64)], started: Instant, paths: &[PathBuf]) -> Result<()> {
        let mut artifacts = Vec::with_capacity(paths.len());
        for p in paths {
            let rel = p.strip_prefix(self.dir).unwrap_or(p);
            artifacts.push(ArtifactRecord {
                path: rel.to_string_lossy().replace('\\', "/"),
                sha256: io::file_sha256(p)?,
            });
        }
        let prev = self
            .manifest
            .stages
            .last()
            .map_or(self.manifest.config_sha256.clone(), |s| s.chain.clone());
        let chain = chain_link(&prev, name, &artifacts);
        let duration_ms = started.elapsed().as_millis() as u64;
        info!("stage {name} done in {duration_ms} ms");
        self.manifest.stages.push(StageRecord {
            name: name.to_string(),
            seeds: seeds.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            duration_ms,
            artifacts,
            chain,
        });
        Ok(())
    }
}

/// What a full run leaves behind besides its files.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub output_dir: PathBuf,
    pub manifest: Manifest,
    pub structure: report::StructureSummary,
    pub search: SearchReport,
}

fn save_envs(envs: &[Environment], dir: &Path, prefix: &str) -> Result<Vec<PathBuf>> {
    let mut paths = Vec::new();
    for (k, env) in envs.iter().enumerate() {
        let stem = format!("{prefix}{k:02}");
        paths.push(env.save(dir, &stem)?);
        paths.push(dir.join(format!("{stem}.json")));
    }
    Ok(paths)
}

/// Executes every stage, writing artifacts and `manifest.json` into
/// `config.output_dir`.
pub fn run_pipeline(config: &ExperimentConfig) -> Result<RunOutcome> {
    let dir = config.output_dir.clone();
    let geometry = config.validate().map_err(|e| e.in_stage("config"))?;
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e).in_stage("config"))?;
    let config_text = config.to_toml().map_err(|e| e.in_stage("config"))?;
    let config_path = dir.join("config.toml");
    io::write_file(&config_path, config_text.as_bytes()).map_err(|e| e.in_stage("config"))?;
    let mut mb = ManifestBuilder {
        dir: &dir,
        manifest: Manifest {
            config_sha256: config_hash(config).map_err(|e| e.in_stage("config"))?,
            stages: Vec::new(),
        },
    };

    let t = Instant::now();
    let stage = "gen-env";
    let train_metas = config.training_env_metas();
    let search_metas = config.search_env_metas();
    let (envs, search_envs, paths) = (|| -> Result<_> {
        let envs = generate_envs(&train_metas)?;
        let search_envs = generate_envs(&search_metas)?;
        let mut paths = save_envs(&envs, &dir.join("envs"), "train")?;
        paths.extend(save_envs(&search_envs, &dir.join("search_envs"), "search")?);
        Ok((envs, search_envs, paths))
    })()
    .map_err(|e| e.in_stage(stage))?;
    let env_seeds: Vec<(String, u64)> = train_metas
        .iter()
        .enumerate()
        .map(|(k, m)| (format!("train{k}"), m.seed))
        .chain(search_metas.iter().enumerate().map(|(k, m)| (format!("search{k}"), m.seed)))
        .collect();
    let env_seed_refs: Vec<(&str, u64)> = env_seeds.iter().map(|(k, v)| (k.as_str(), *v)).collect();
    mb.stage(stage, &env_seed_refs, t, &paths).map_err(|e| e.in_stage(stage))?;

    let t = Instant::now();
    let stage = "learn-codebook";
    let (bank, codebook, paths) = (|| -> Result<_> {
        let bank = make_bank(config, &geometry);
        let codebook = learn_codebook(config, &geometry, &bank, &envs)?;
        let enc_path = dir.join("encoders.bin");
        let cb_path = dir.join("codebook.bin");
        io::write_file(&enc_path, &bank.to_bytes())?;
        io::write_file(&cb_path, &codebook.to_bytes())?;
        Ok((bank, codebook, vec![enc_path, cb_path]))
    })()
    .map_err(|e| e.in_stage(stage))?;
    mb.stage(
        stage,
        &[
            ("encoders", config.stage_seed("encoders")),
            ("samples", config.stage_seed("codebook/samples")),
            ("kmeans", config.stage_seed("codebook/kmeans")),
        ],
        t,
        &paths,
    )
    .map_err(|e| e.in_stage(stage))?;

    let t = Instant::now();
    let stage = "explore";
    let (model, paths) = (|| -> Result<_> {
        let model = estimate_model(config, &geometry, &bank, &codebook, &envs)?;
        let path = dir.join("model.bin");
        model.save(&path)?;
        Ok((model, vec![path]))
    })()
    .map_err(|e| e.in_stage(stage))?;
    mb.stage(stage, &[("explore", config.stage_seed("explore"))], t, &paths)
        .map_err(|e| e.in_stage(stage))?;

    let t = Instant::now();
    let stage = "analyze-mi";
    let (analysis, structure, paths) = (|| -> Result<_> {
        let analysis = analyze(&model.counts);
        let structure = report::structure_summary(&analysis, &geometry);
        let mi_path = dir.join("mi.csv");
        report::write_mi_csv(&analysis, &mi_path, true)?;
        let mut paths = vec![mi_path];
        paths.extend(report::write_heatmaps(&analysis.mi, &dir.join("heatmaps"))?);
        let summary_path = dir.join("structure.json");
        io::write_file(&summary_path, serde_json::to_string_pretty(&structure)?.as_bytes())?;
        paths.push(summary_path);
        Ok((analysis, structure, paths))
    })()
    .map_err(|e| e.in_stage(stage))?;
    mb.stage(stage, &[], t, &paths).map_err(|e| e.in_stage(stage))?;

    let t = Instant::now();
    let stage = "search";
    let (search, paths) = (|| -> Result<_> {
        let search = run_search(
            &search_envs,
            &model,
            &analysis.mi,
            &codebook,
            &bank,
            &geometry,
            config.search_trials,
            config.stage_seed("search"),
        )?;
        let path = dir.join("search.csv");
        search.write_csv(&path)?;
        Ok((search, vec![path]))
    })()
    .map_err(|e| e.in_stage(stage))?;
    mb.stage(stage, &[("search", config.stage_seed("search"))], t, &paths)
        .map_err(|e| e.in_stage(stage))?;

    let t = Instant::now();
    let stage = "report";
    let paths = (|| -> Result<_> {
        let g = &config.gallery;
        let states = report::pick_gallery_states(&model, &g.fields, g.states_per_field, g.skip_most_frequent);
        let tiles = report::render_association_gallery(&model, &analysis.mi, &codebook, &bank, &states, g.top_k)?;
        report::write_gallery(&tiles, &geometry, &dir.join("gallery"), g.scale)
    })()
    .map_err(|e| e.in_stage(stage))?;
    mb.stage(stage, &[], t, &paths).map_err(|e| e.in_stage(stage))?;

    let manifest = mb.manifest;
    io::write_file(&dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?.as_bytes())
        .map_err(|e| e.in_stage("manifest"))?;
    info!(
        "structure: argmax agreement {:.3}, coupled/uncoupled MI {:.3}/{:.3}; search success {:.3}",
        structure.argmax_agreement, structure.mean_mi_coupled, structure.mean_mi_uncoupled, search.success_rate
    );
    Ok(RunOutcome {
        output_dir: dir,
        manifest,
        structure,
        search,
    })
}
