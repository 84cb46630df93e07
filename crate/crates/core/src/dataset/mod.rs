//! Dataset generation, per-channel normalization, manifests and subsampling.
//!
//! Layout under the dataset root:
//! `manifest.json`, `demos/<skill>.jsonl`, `<split>/<skill>/trial-NNN.jsonl`.

mod norm;

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use norm::{ChannelRange, Condition, NormStats, Sample};

use crate::error::{Error, Result};
use crate::io::{sha256_file, sha256_hex, write_atomic};
use crate::moo::{optimize, OptimizeConfig, Source};
use crate::objectives::{compliance_objective, task_objective, ObjectivePair, StiffnessSchedule};
use crate::sim::{generate_demo, rollout, MotionKind, MotionParams, SimConfig, SurfaceModel, Trajectory};

/// Environment variable naming the default dataset root.
pub const DATA_ENV: &str = "STIFFDIFF_DATA";
pub const MANIFEST_FILE: &str = "manifest.json";
const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Train => "train",
            Self::Val => "val",
            Self::Test => "test",
        })
    }
}

/// Simulator parameterization a dataset is drawn from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Domain {
    Nominal,
    /// Higher friction, different surface geometry and noisy force readings.
    Shifted,
}

impl std::str::FromStr for Domain {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "nominal" => Ok(Self::Nominal),
            "shifted" => Ok(Self::Shifted),
            other => Err(format!("unknown domain `{other}` (expected nominal or shifted)")),
        }
    }
}

impl Domain {
    pub fn friction(self) -> f64 {
        match self {
            Self::Nominal => 0.3,
            Self::Shifted => 0.45,
        }
    }

    pub fn arc_radius(self) -> f64 {
        match self {
            Self::Nominal => 0.3,
            Self::Shifted => 0.4,
        }
    }

    /// Standard deviation of the force sensor noise, N.
    pub fn force_noise(self) -> f64 {
        match self {
            Self::Nominal => 0.0,
            Self::Shifted => 0.2,
        }
    }
}

/// A demonstration to reproduce: surface, motion and demo seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkillSpec {
    pub name: String,
    pub surface: SurfaceModel<f64>,
    pub motion: MotionKind,
    pub params: MotionParams,
    pub seed: u64,
}

impl SkillSpec {
    /// Held-out task: wavelike strokes across the arc.
    pub fn test_task(domain: Domain, horizon: usize) -> Self {
        Self {
            name: "test".into(),
            surface: SurfaceModel::circular_arc(domain.arc_radius(), 0.0, domain.friction()),
            motion: MotionKind::Wavelike,
            params: MotionParams {
                horizon,
                start_x: -0.08,
                ..MotionParams::default()
            },
            seed: 0x7e57,
        }
    }

    /// Randomized spiral-analog skill on one of the three surface families.
    pub fn training(index: usize, domain: Domain, horizon: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (index as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        let mu = domain.friction() + rng.random_range(-0.1..0.1);
        let surface = match index % 3 {
            0 => SurfaceModel::circular_arc(domain.arc_radius() * rng.random_range(0.85..1.25), 0.0, mu),
            1 => SurfaceModel::sinusoid(rng.random_range(0.01..0.025), rng.random_range(0.4..0.8), 0.0, mu),
            _ => SurfaceModel::flat(0.0, mu),
        };
        let force_mean = rng.random_range(4.0..8.0);
        let params = MotionParams {
            horizon,
            start_x: rng.random_range(-0.04..0.04),
            direction: if rng.random_bool(0.5) { 1.0 } else { -1.0 },
            amplitude: rng.random_range(0.05..0.1),
            frequency: rng.random_range(0.6..1.4),
            force_mean,
            force_amplitude: rng.random_range(1.0..3.0f64).min(force_mean - 1.5),
            force_frequency: rng.random_range(0.3..0.8),
            ..MotionParams::default()
        };
        Self {
            name: format!("skill-{index:03}"),
            surface,
            motion: MotionKind::SpiralAnalog,
            params,
            seed: rng.random(),
        }
    }

    pub fn demo(&self, sim: &SimConfig<f64>) -> Result<Trajectory<f64>> {
        let mut d = generate_demo(sim, &self.surface, self.motion, &self.params, self.seed)?;
        d.meta.skill = Some(self.name.clone());
        Ok(d)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub domain: Domain,
    pub skills: usize,
    /// Additional skills whose trajectories form the validation split.
    pub val_skills: usize,
    /// Optimization trials per skill; every rollout is recorded.
    pub trials: usize,
    pub test_trials: usize,
    pub horizon: usize,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            domain: Domain::Nominal,
            skills: 40,
            val_skills: 5,
            trials: 20,
            test_trials: 30,
            horizon: 200,
            seed: 0,
        }
    }
}

impl GenConfig {
    /// Small second domain for fine-tuning: 40 training and 10 test trajectories.
    pub fn shifted(seed: u64) -> Self {
        Self {
            domain: Domain::Shifted,
            skills: 2,
            val_skills: 0,
            trials: 20,
            test_trials: 10,
            horizon: 200,
            seed,
        }
    }

    /// Hash of every generation-relevant field.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(&(MANIFEST_VERSION, self)).expect("config serializes");
        sha256_hex(canonical.as_bytes())
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 || self.horizon < 10 {
            return Err(Error::InvalidConfig("generation needs trials >= 1 and horizon >= 10".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entry {
    /// Relative to the dataset root.
    pub path: PathBuf,
    pub split: Split,
    pub skill: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DemoEntry {
    pub skill: String,
    pub path: PathBuf,
    pub sha256: String,
    pub spec: SkillSpec,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Skipped {
    pub skill: String,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub config: GenConfig,
    pub config_hash: String,
    pub seed: u64,
    pub demos: Vec<DemoEntry>,
    pub entries: Vec<Entry>,
    pub skipped: Vec<Skipped>,
}

impl Manifest {
    pub fn load(root: &Path) -> Result<Self> {
        let path = root.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        let m: Self = serde_json::from_str(&text)?;
        if m.config.hash() != m.config_hash {
            return Err(Error::HashMismatch { path });
        }
        Ok(m)
    }

    pub fn save(&self, root: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        write_atomic(&root.join(MANIFEST_FILE), format!("{text}\n").as_bytes())
    }

    /// Checks every referenced file against its recorded hash.
    pub fn verify(&self, root: &Path) -> Result<()> {
        let paths = self.demos.iter().map(|d| (&d.path, &d.sha256)).chain(self.entries.iter().map(|e| (&e.path, &e.sha256)));
        for (p, h) in paths {
            if &sha256_file(&root.join(p))? != h {
                return Err(Error::HashMismatch { path: root.join(p) });
            }
        }
        Ok(())
    }

    pub fn entries_in(&self, split: Split) -> impl Iterator<Item = &Entry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn demo_for(&self, skill: &str) -> Option<&DemoEntry> {
        self.demos.iter().find(|d| d.skill == skill)
    }

    /// Keeps `round(rate * n)` training entries, chosen by a seeded hash order so that smaller
    /// rates select subsets of larger ones. Other splits are untouched.
    pub fn subsample(&self, rate: f64, seed: u64) -> Result<Self> {
        if !(rate > 0.0 && rate <= 1.0) {
            return Err(Error::InvalidConfig(format!("subsample rate {rate} outside (0, 1]")));
        }
        let train: Vec<&Entry> = self.entries_in(Split::Train).collect();
        let keep = (rate * train.len() as f64).round() as usize;
        if keep == 0 {
            return Err(Error::EmptyResult);
        }
        let mut ranked: Vec<(String, &PathBuf)> = train
            .iter()
            .map(|e| (sha256_hex(format!("{seed}:{}", e.path.display()).as_bytes()), &e.path))
            .collect();
        ranked.sort();
        let kept: std::collections::HashSet<&PathBuf> = ranked.into_iter().take(keep).map(|(_, p)| p).collect();
        let mut out = self.clone();
        out.entries.retain(|e| e.split != Split::Train || kept.contains(&e.path));
        Ok(out)
    }
}

fn relative(skill: &str, split: Split, trial: usize) -> PathBuf {
    PathBuf::from(split.to_string()).join(skill).join(format!("trial-{trial:03}.jsonl"))
}

/// Rollouts produced while optimizing one skill's stiffness on the simulator.
fn run_skill(
    spec: &SkillSpec,
    sim: &SimConfig<f64>,
    trials: usize,
    noise: f64,
    seed: u64,
) -> Result<(Trajectory<f64>, Vec<Trajectory<f64>>)> {
    let demo = spec.demo(sim)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0b5e_7a7e);
    let noise = if noise > 0.0 { Some(Normal::new(0.0, noise).expect("positive sigma")) } else { None };
    let mut recorded = Vec::with_capacity(trials);
    let mut evaluator = |schedules: &[StiffnessSchedule<f64>]| -> Vec<Result<ObjectivePair<f64>>> {
        schedules
            .iter()
            .map(|s| {
                let mut traj = rollout(sim, &spec.surface, s, &demo)?;
                if let Some(n) = &noise {
                    for f in &mut traj.forces {
                        f.x += n.sample(&mut rng);
                        f.z += n.sample(&mut rng);
                    }
                }
                let o = ObjectivePair::new(task_objective(&traj.forces, &demo.forces)?, compliance_objective(s));
                recorded.push(traj);
                Ok(o)
            })
            .collect()
    };
    optimize(&OptimizeConfig::new(trials, demo.horizon(), seed), Source::Simulator, &mut evaluator)?;
    Ok((demo, recorded))
}

struct SkillOutput {
    spec: SkillSpec,
    split: Split,
    result: Result<(Trajectory<f64>, Vec<Trajectory<f64>>)>,
}

/// Generates demonstrations and recorded rollouts under `root` and writes the manifest.
///
/// Skills whose demonstration fails are skipped and listed in the manifest.
pub fn generate_dataset(root: &Path, cfg: &GenConfig) -> Result<Manifest> {
    cfg.validate()?;
    let sim = SimConfig::<f64>::default();
    let mut jobs: Vec<(SkillSpec, Split, usize)> = (0..cfg.skills + cfg.val_skills)
        .map(|i| {
            let split = if i < cfg.skills { Split::Train } else { Split::Val };
            (SkillSpec::training(i, cfg.domain, cfg.horizon, cfg.seed), split, cfg.trials)
        })
        .collect();
    if cfg.test_trials > 0 {
        jobs.push((SkillSpec::test_task(cfg.domain, cfg.horizon), Split::Test, cfg.test_trials));
    }
    let outputs: Vec<SkillOutput> = jobs
        .into_par_iter()
        .enumerate()
        .map(|(i, (spec, split, trials))| {
            let seed = cfg.seed.wrapping_add(1000 * i as u64 + 1);
            let result = run_skill(&spec, &sim, trials, cfg.domain.force_noise(), seed);
            SkillOutput { spec, split, result }
        })
        .collect();

    let mut manifest = Manifest {
        version: MANIFEST_VERSION,
        config: cfg.clone(),
        config_hash: cfg.hash(),
        seed: cfg.seed,
        demos: Vec::new(),
        entries: Vec::new(),
        skipped: Vec::new(),
    };
    for out in outputs {
        let (demo, rollouts) = match out.result {
            Ok(r) => r,
            Err(e) => {
                log::warn!("skipping {}: {e}", out.spec.name);
                manifest.skipped.push(Skipped {
                    skill: out.spec.name.clone(),
                    reason: e.to_string(),
                });
                continue;
            }
        };
        let demo_path = PathBuf::from("demos").join(format!("{}.jsonl", out.spec.name));
        let demo_line = format!("{}\n", demo.to_json_line()?);
        write_atomic(&root.join(&demo_path), demo_line.as_bytes())?;
        manifest.demos.push(DemoEntry {
            skill: out.spec.name.clone(),
            sha256: sha256_hex(demo_line.as_bytes()),
            path: demo_path.clone(),
            spec: out.spec.clone(),
        });
        for (t, mut traj) in rollouts.into_iter().enumerate() {
            traj.meta.skill = Some(out.spec.name.clone());
            traj.meta.demo = Some(demo_path.display().to_string());
            let path = relative(&out.spec.name, out.split, t);
            let line = format!("{}\n", traj.to_json_line()?);
            write_atomic(&root.join(&path), line.as_bytes())?;
            manifest.entries.push(Entry {
                path,
                split: out.split,
                skill: out.spec.name.clone(),
                sha256: sha256_hex(line.as_bytes()),
            });
        }
    }
    manifest.save(root)?;
    Ok(manifest)
}

pub fn read_trajectory(path: &Path) -> Result<Trajectory<f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    Trajectory::from_json_line(text.trim_end())
}

/// Loaded trajectories with their demonstrations.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub manifest: Manifest,
    pub demos: Vec<(DemoEntry, Trajectory<f64>)>,
    pub items: Vec<(Entry, Sample)>,
}

impl Dataset {
    pub fn load(root: &Path, manifest: &Manifest) -> Result<Self> {
        let demos = manifest
            .demos
            .iter()
            .map(|d| Ok((d.clone(), read_trajectory(&root.join(&d.path))?)))
            .collect::<Result<Vec<_>>>()?;
        let items = manifest
            .entries
            .iter()
            .map(|e| {
                let demo = &demos
                    .iter()
                    .find(|(d, _)| d.skill == e.skill)
                    .ok_or_else(|| Error::InvalidConfig(format!("no demonstration for {}", e.skill)))?
                    .1;
                let traj = read_trajectory(&root.join(&e.path))?;
                Ok((e.clone(), Sample::from_rollout(demo, &traj)?))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            manifest: manifest.clone(),
            demos,
            items,
        })
    }

    pub fn samples(&self, split: Split) -> Vec<&Sample> {
        self.items.iter().filter(|(e, _)| e.split == split).map(|(_, s)| s).collect()
    }

    /// Normalization ranges fitted on the training split only.
    pub fn norm_stats(&self) -> Result<NormStats> {
        NormStats::fit(&self.samples(Split::Train))
    }

    pub fn demo(&self, skill: &str) -> Option<&Trajectory<f64>> {
        self.demos.iter().find(|(d, _)| d.skill == skill).map(|(_, t)| t)
    }

    pub fn spec(&self, skill: &str) -> Option<&SkillSpec> {
        self.demos.iter().find(|(d, _)| d.skill == skill).map(|(d, _)| &d.spec)
    }

    /// Test items with the demonstration each one reproduces.
    pub fn test_items(&self) -> Vec<(&Sample, &Trajectory<f64>)> {
        self.items
            .iter()
            .filter(|(e, _)| e.split == Split::Test)
            .filter_map(|(e, s)| self.demo(&e.skill).map(|d| (s, d)))
            .collect()
    }
}

/// Dataset root from an explicit flag, else the environment.
pub fn resolve_root(flag: Option<&Path>) -> Result<PathBuf> {
    if let Some(p) = flag {
        return Ok(p.to_path_buf());
    }
    std::env::var_os(DATA_ENV)
        .map(PathBuf::from)
        .ok_or_else(|| Error::InvalidConfig(format!("no dataset root: pass --data-root or set {DATA_ENV}")))
}
