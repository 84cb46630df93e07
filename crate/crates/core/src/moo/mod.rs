//! Pareto fronts, the 2-D hypervolume indicator and a density-ratio optimizer over stiffness
//! schedules. Both objectives are minimized.

mod eval;
mod motpe;

use std::io::{BufRead, Write};
use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use eval::Task;
pub use motpe::{good_set, radical_inverse, Motpe, MotpeConfig, ShiftedHalton};

use crate::error::{Error, Result};
use crate::objectives::{ObjectivePair, ScheduleRecord, StiffnessSchedule};

/// Who produced a candidate's task objective.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Source {
    Simulator,
    Dcm,
    Baseline,
}

impl std::fmt::Display for Source {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Simulator => "simulator",
            Self::Dcm => "dcm",
            Self::Baseline => "baseline",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Candidate {
    pub trial: usize,
    pub schedule: StiffnessSchedule<f64>,
    pub objectives: ObjectivePair<f64>,
    pub source: Source,
    pub wall_ms: u64,
}

#[derive(Serialize, Deserialize)]
struct CandidateRecord {
    trial: usize,
    horizon: usize,
    schedule: ScheduleRecord,
    task: f64,
    comp: f64,
    source: Source,
    wall_ms: u64,
}

impl Candidate {
    pub fn to_json_line(&self) -> Result<String> {
        Ok(serde_json::to_string(&CandidateRecord {
            trial: self.trial,
            horizon: self.schedule.horizon(),
            schedule: self.schedule.to_record(),
            task: self.objectives.task,
            comp: self.objectives.comp,
            source: self.source,
            wall_ms: self.wall_ms,
        })?)
    }

    pub fn from_json_line(line: &str) -> Result<Self> {
        let r: CandidateRecord = serde_json::from_str(line)?;
        Ok(Self {
            trial: r.trial,
            schedule: StiffnessSchedule::from_record(&r.schedule, r.horizon)?,
            objectives: ObjectivePair::new(r.task, r.comp),
            source: r.source,
            wall_ms: r.wall_ms,
        })
    }
}

/// Indices of the non-dominated points, ordered by `task` ascending. Of several points with
/// identical objectives only the earliest is kept.
pub fn pareto_front(points: &[ObjectivePair<f64>]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| {
        points[a]
            .task
            .total_cmp(&points[b].task)
            .then(points[a].comp.total_cmp(&points[b].comp))
            .then(a.cmp(&b))
    });
    let mut best_comp = f64::INFINITY;
    let mut front = Vec::new();
    for i in order {
        if points[i].comp < best_comp {
            best_comp = points[i].comp;
            front.push(i);
        }
    }
    front
}

/// Non-domination rank of every point (0 = Pareto front).
pub fn nondominated_ranks(points: &[ObjectivePair<f64>]) -> Vec<usize> {
    let n = points.len();
    let mut dominated_by = vec![0usize; n];
    let mut dominates: Vec<Vec<usize>> = vec![Vec::new(); n];
    for i in 0..n {
        for j in 0..n {
            if points[i].dominates(&points[j]) {
                dominates[i].push(j);
                dominated_by[j] += 1;
            }
        }
    }
    let mut ranks = vec![0; n];
    let mut current: Vec<usize> = (0..n).filter(|&i| dominated_by[i] == 0).collect();
    let mut rank = 0;
    while !current.is_empty() {
        let mut next = Vec::new();
        for &i in &current {
            ranks[i] = rank;
            for &j in &dominates[i] {
                dominated_by[j] -= 1;
                if dominated_by[j] == 0 {
                    next.push(j);
                }
            }
        }
        current = next;
        rank += 1;
    }
    ranks
}

/// Crowding distance within one set of points; boundary points get infinity.
pub fn crowding_distance(points: &[ObjectivePair<f64>]) -> Vec<f64> {
    let n = points.len();
    let mut d = vec![0.0; n];
    if n <= 2 {
        return vec![f64::INFINITY; n];
    }
    let getters: [fn(&ObjectivePair<f64>) -> f64; 2] = [|p| p.task, |p| p.comp];
    for get in getters {
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| get(&points[a]).total_cmp(&get(&points[b])).then(a.cmp(&b)));
        let span = get(&points[order[n - 1]]) - get(&points[order[0]]);
        d[order[0]] = f64::INFINITY;
        d[order[n - 1]] = f64::INFINITY;
        if span > 0.0 {
            for k in 1..n - 1 {
                d[order[k]] += (get(&points[order[k + 1]]) - get(&points[order[k - 1]])) / span;
            }
        }
    }
    d
}

/// Area dominated by `points` and bounded by `reference`.
///
/// Every point must be no worse than the reference in both objectives.
pub fn hypervolume(points: &[ObjectivePair<f64>], reference: ObjectivePair<f64>) -> Result<f64> {
    if let Some(p) = points.iter().find(|p| !(p.task <= reference.task && p.comp <= reference.comp)) {
        return Err(Error::ReferenceDominated(p.task, p.comp));
    }
    let front = pareto_front(points);
    let mut area = 0.0;
    for (k, &i) in front.iter().enumerate() {
        let right = front.get(k + 1).map_or(reference.task, |&j| points[j].task);
        area += (right - points[i].task) * (reference.comp - points[i].comp);
    }
    Ok(area)
}

/// Hypervolume counting only the points inside the reference box; the others contribute nothing.
pub fn hypervolume_clipped(points: &[ObjectivePair<f64>], reference: ObjectivePair<f64>) -> f64 {
    let inside: Vec<ObjectivePair<f64>> = points
        .iter()
        .copied()
        .filter(|p| p.task <= reference.task && p.comp <= reference.comp)
        .collect();
    hypervolume(&inside, reference).unwrap_or(0.0)
}

/// Greedy subset of at most `max` points, each pick adding the largest hypervolume.
pub fn select_for_validation(points: &[ObjectivePair<f64>], reference: ObjectivePair<f64>, max: usize) -> Vec<usize> {
    if points.len() <= max {
        return (0..points.len()).collect();
    }
    let mut chosen: Vec<usize> = Vec::with_capacity(max);
    let mut current = 0.0;
    while chosen.len() < max {
        let mut best: Option<(usize, f64)> = None;
        for i in (0..points.len()).filter(|i| !chosen.contains(i)) {
            let mut trial: Vec<ObjectivePair<f64>> = chosen.iter().map(|&j| points[j]).collect();
            trial.push(points[i]);
            let gain = hypervolume_clipped(&trial, reference) - current;
            if best.is_none_or(|(_, g)| gain > g) {
                best = Some((i, gain));
            }
        }
        let (i, gain) = best.expect("points remain");
        chosen.push(i);
        current += gain;
    }
    chosen.sort_unstable();
    chosen
}

/// Every evaluated candidate of one optimization run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Archive {
    pub candidates: Vec<Candidate>,
    /// Evaluator failures, in submission order; these candidates were not counted as trials.
    pub failures: Vec<String>,
}

impl Archive {
    pub fn objectives(&self) -> Vec<ObjectivePair<f64>> {
        self.candidates.iter().map(|c| c.objectives).collect()
    }

    pub fn front(&self) -> Vec<&Candidate> {
        pareto_front(&self.objectives()).into_iter().map(|i| &self.candidates[i]).collect()
    }

    pub fn hypervolume(&self, reference: ObjectivePair<f64>) -> f64 {
        let front: Vec<ObjectivePair<f64>> = self.front().iter().map(|c| c.objectives).collect();
        hypervolume_clipped(&front, reference)
    }

    pub fn write_jsonl(&self, w: &mut impl Write) -> Result<()> {
        for c in &self.candidates {
            writeln!(w, "{}", c.to_json_line()?).map_err(|e| Error::io("writing archive", e))?;
        }
        Ok(())
    }

    pub fn read_jsonl(r: impl BufRead) -> Result<Self> {
        let mut candidates = Vec::new();
        for line in r.lines() {
            let line = line.map_err(|e| Error::io("reading archive", e))?;
            if !line.trim().is_empty() {
                candidates.push(Candidate::from_json_line(&line)?);
            }
        }
        Ok(Self {
            candidates,
            failures: Vec::new(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf)?;
        crate::io::write_atomic(path, &buf)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
        Self::read_jsonl(std::io::BufReader::new(f))
    }
}

/// Evaluates a batch of schedules; one result per schedule, in order.
pub type BatchEvaluator<'a> = dyn FnMut(&[StiffnessSchedule<f64>]) -> Vec<Result<ObjectivePair<f64>>> + 'a;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizeConfig {
    pub trials: usize,
    /// Suggestions made from the same archive state and evaluated together.
    pub batch_size: usize,
    pub horizon: usize,
    pub seed: u64,
    pub motpe: MotpeConfig,
}

impl OptimizeConfig {
    pub fn new(trials: usize, horizon: usize, seed: u64) -> Self {
        Self {
            trials,
            batch_size: 1,
            horizon,
            seed,
            motpe: MotpeConfig::default(),
        }
    }
}

/// Suggest, evaluate and archive until `trials` candidates have been evaluated successfully.
///
/// Failed evaluations are recorded and retried with a fresh suggestion; the run gives up once
/// failures outnumber `trials + 16`.
pub fn optimize(cfg: &OptimizeConfig, source: Source, evaluator: &mut BatchEvaluator) -> Result<Archive> {
    if cfg.trials == 0 || cfg.batch_size == 0 {
        return Err(Error::InvalidConfig("optimization needs at least one trial and a positive batch size".into()));
    }
    let motpe = Motpe::new(cfg.motpe.clone(), cfg.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut archive = Archive::default();
    while archive.candidates.len() < cfg.trials {
        let want = cfg.batch_size.min(cfg.trials - archive.candidates.len());
        let schedules = (0..want)
            .map(|k| motpe.suggest(&archive.candidates, k, cfg.horizon, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let start = Instant::now();
        let results = evaluator(&schedules);
        let wall_ms = start.elapsed().as_millis() as u64 / want as u64;
        if results.len() != schedules.len() {
            return Err(Error::LengthMismatch(schedules.len(), results.len()));
        }
        for (schedule, res) in schedules.into_iter().zip(results) {
            match res.and_then(|o| if o.is_finite() { Ok(o) } else { Err(Error::NonFinite("objective")) }) {
                Ok(objectives) => archive.candidates.push(Candidate {
                    trial: archive.candidates.len(),
                    schedule,
                    objectives,
                    source,
                    wall_ms,
                }),
                Err(e) => archive.failures.push(e.to_string()),
            }
        }
        if archive.failures.len() > cfg.trials + 16 {
            return Err(Error::EvaluatorFailure(format!(
                "{} failed evaluations, last: {}",
                archive.failures.len(),
                archive.failures.last().map_or("", String::as_str)
            )));
        }
    }
    Ok(archive)
}

/// `1.1 ×` the component-wise maximum over the space-filling initial design.
pub fn reference_point(motpe: &MotpeConfig, horizon: usize, seed: u64, evaluator: &mut BatchEvaluator) -> Result<ObjectivePair<f64>> {
    let design = Motpe::new(motpe.clone(), seed);
    let schedules = (0..motpe.n_init.max(1))
        .map(|i| StiffnessSchedule::from_log_vector(&design.initial_point(i), horizon))
        .collect::<Result<Vec<_>>>()?;
    let mut worst: Option<ObjectivePair<f64>> = None;
    for o in evaluator(&schedules).into_iter().flatten().filter(ObjectivePair::is_finite) {
        worst = Some(match worst {
            None => o,
            Some(w) => ObjectivePair::new(w.task.max(o.task), w.comp.max(o.comp)),
        });
    }
    let w = worst.ok_or_else(|| Error::EvaluatorFailure("every reference design point failed".into()))?;
    Ok(ObjectivePair::new(1.1 * w.task, 1.1 * w.comp))
}

/// Genuine objectives of a validated front.
#[derive(Clone, Debug, PartialEq)]
pub struct Validation {
    /// Re-evaluated members, `source` set to the validating evaluator.
    pub genuine: Vec<Candidate>,
    pub hypervolume: f64,
    /// Evaluator calls spent, one per member.
    pub evaluations: usize,
}

/// Re-evaluates every member with `evaluator` and recomputes the hypervolume from the results.
pub fn validate_front(
    members: &[&Candidate],
    reference: ObjectivePair<f64>,
    source: Source,
    evaluator: &mut BatchEvaluator,
) -> Result<Validation> {
    if members.is_empty() {
        return Err(Error::InvalidConfig("cannot validate an empty front".into()));
    }
    let schedules: Vec<StiffnessSchedule<f64>> = members.iter().map(|c| c.schedule.clone()).collect();
    let start = Instant::now();
    let results = evaluator(&schedules);
    let wall_ms = start.elapsed().as_millis() as u64 / members.len() as u64;
    let mut genuine = Vec::with_capacity(members.len());
    for (c, r) in members.iter().zip(results) {
        genuine.push(Candidate {
            objectives: r?,
            source,
            wall_ms,
            ..(*c).clone()
        });
    }
    let objs: Vec<ObjectivePair<f64>> = genuine.iter().map(|c| c.objectives).collect();
    Ok(Validation {
        hypervolume: hypervolume_clipped(&objs, reference),
        evaluations: genuine.len(),
        genuine,
    })
}
