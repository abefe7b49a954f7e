//! Expert labels: randomized candidate search under full channel knowledge,
//! an exhaustive solver for small port counts, and the JSON-lines dataset
//! the denoiser is trained on.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::control::{top_m_indices, Mode};
use crate::energy::{CsiMode, EnergyProblem};
use crate::error::{Error, Result};
use crate::numerics::RngStream;
use crate::scenario::{ScenarioConfig, ScenarioModel};

/// Largest enumeration the exhaustive solver accepts.
pub const EXHAUSTIVE_LIMIT: u128 = 1_000_000;

/// Samples written between flushes of the partial dataset file.
pub const CHECKPOINT_EVERY: usize = 1000;

const FORMAT_TAG: &str = "fluidsense-expert";
const FORMAT_VERSION: u32 = 1;

/// Stream ids under a scenario seed.
const BUDGET_STREAM: u64 = 1;
const SEARCH_STREAM: u64 = 2;

/// `C(n, k)`, saturating just above the exhaustive limit.
pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
        if acc > EXHAUSTIVE_LIMIT * 1000 {
            return acc;
        }
    }
    acc
}

/// Minimum-energy hard mask by full enumeration. Index sets are visited in
/// lexicographic order and the first minimizer wins ties.
pub fn exhaustive_best_mask(problem: &EnergyProblem) -> Result<(Vec<usize>, f64)> {
    let k = problem.num_ports();
    let m = problem.m_active();
    let count = binomial(k, m);
    if count > EXHAUSTIVE_LIMIT {
        return Err(Error::config(format!(
            "exhaustive search over C({k}, {m}) masks exceeds the limit of {EXHAUSTIVE_LIMIT}"
        )));
    }
    let mut idx: Vec<usize> = (0..m).collect();
    let mut best = (idx.clone(), problem.evaluate_indices(&idx));
    loop {
        // advance to the next combination
        let mut i = m;
        while i > 0 && idx[i - 1] == k - m + i - 1 {
            i -= 1;
        }
        if i == 0 {
            break;
        }
        idx[i - 1] += 1;
        for j in i..m {
            idx[j] = idx[j - 1] + 1;
        }
        let e = problem.evaluate_indices(&idx);
        if e < best.1 {
            best = (idx.clone(), e);
        }
    }
    Ok(best)
}

/// Winner of a candidate search.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    pub z0: Vec<f64>,
    pub active: Vec<usize>,
    pub energy: f64,
}

/// Draws `n_cand` standard-normal logit vectors, projects each to a hard
/// mask and keeps the lowest-energy one (first wins ties). With `refine`,
/// the winner is then improved by best-improvement single swaps, applied
/// to the logits by exchanging the two ports' values.
pub fn random_search_expert(
    problem: &EnergyProblem,
    n_cand: usize,
    refine: bool,
    rng: &mut RngStream,
) -> Result<SearchResult> {
    if n_cand == 0 {
        return Err(Error::config("n_cand must be at least 1"));
    }
    let k = problem.num_ports();
    let m = problem.m_active();
    let mut best: Option<SearchResult> = None;
    for _ in 0..n_cand {
        let z = rng.standard_normal_vec(k);
        let active = top_m_indices(&z, m)?;
        let energy = problem.evaluate_indices(&active);
        if best.as_ref().is_none_or(|b| energy < b.energy) {
            best = Some(SearchResult { z0: z, active, energy });
        }
    }
    let mut best = best.expect("n_cand >= 1");
    if refine {
        greedy_swap(problem, &mut best)?;
    }
    Ok(best)
}

fn greedy_swap(problem: &EnergyProblem, r: &mut SearchResult) -> Result<()> {
    let k = problem.num_ports();
    loop {
        let mut selected = vec![false; k];
        for &i in &r.active {
            selected[i] = true;
        }
        let mut improvement: Option<(usize, usize, f64)> = None;
        for (slot, &i) in r.active.iter().enumerate() {
            for j in (0..k).filter(|&j| !selected[j]) {
                let mut trial = r.active.clone();
                trial[slot] = j;
                let e = problem.evaluate_indices(&trial);
                if e < improvement.map_or(r.energy, |b| b.2) {
                    improvement = Some((i, j, e));
                }
            }
        }
        let Some((i, j, e)) = improvement else {
            return Ok(());
        };
        r.z0.swap(i, j);
        r.active = top_m_indices(&r.z0, problem.m_active())?;
        r.energy = e;
    }
}

/// Scenario sampler and search settings for dataset generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExpertConfig {
    pub n_samples: usize,
    pub n_cand: usize,
    pub greedy_refine: bool,
    pub m_active_min: usize,
    pub m_active_max: usize,
    pub m_obs_min: usize,
    pub m_obs_max: usize,
    /// Draw the mode per sample instead of using the scenario's mode.
    pub mixed_mode: bool,
}

impl Default for ExpertConfig {
    fn default() -> Self {
        Self {
            n_samples: 20_000,
            n_cand: 2048,
            greedy_refine: false,
            m_active_min: 1,
            m_active_max: 60,
            m_obs_min: 5,
            m_obs_max: 60,
            mixed_mode: false,
        }
    }
}

impl ExpertConfig {
    /// Budget ranges clamped to the port count.
    fn ranges(&self, k: usize) -> Result<((usize, usize), (usize, usize))> {
        let clamp = |lo: usize, hi: usize, name: &str| {
            let hi = hi.min(k);
            if lo == 0 || lo > hi {
                Err(Error::config(format!(
                    "{name} range [{lo}, {hi}] is empty or starts at 0 for K = {k}"
                )))
            } else {
                Ok((lo, hi))
            }
        };
        Ok((
            clamp(self.m_active_min, self.m_active_max, "m_active")?,
            clamp(self.m_obs_min, self.m_obs_max, "m_obs")?,
        ))
    }
}

/// One label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertSample {
    pub index: usize,
    #[serde(with = "decimal")]
    pub scenario_seed: u64,
    pub m_active: usize,
    pub m_obs: usize,
    pub mode: Mode,
    #[serde(with = "decimal")]
    pub energy: f64,
    #[serde(with = "decimal_vec")]
    pub z0: Vec<f64>,
    #[serde(with = "decimal_vec")]
    pub context: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub format: String,
    pub version: u32,
    pub k: usize,
    pub n_theta: usize,
    pub d: usize,
    pub context_len: usize,
    pub config_hash: String,
    pub seed: u64,
    pub n_samples: usize,
    pub scenario: ScenarioConfig,
    pub expert: ExpertConfig,
}

impl DatasetHeader {
    pub fn new(scenario: &ScenarioConfig, expert: &ExpertConfig, seed: u64) -> Result<Self> {
        Ok(Self {
            format: FORMAT_TAG.into(),
            version: FORMAT_VERSION,
            k: scenario.num_ports,
            n_theta: scenario.n_theta,
            d: scenario.feat_dim,
            context_len: crate::control::context_len(scenario.num_ports),
            config_hash: config_hash(scenario, expert)?,
            seed,
            n_samples: expert.n_samples,
            scenario: scenario.clone(),
            expert: expert.clone(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExpertDataset {
    pub header: DatasetHeader,
    pub samples: Vec<ExpertSample>,
}

/// Hex SHA-256 of the canonical JSON of the generation settings.
pub fn config_hash(scenario: &ScenarioConfig, expert: &ExpertConfig) -> Result<String> {
    let json = serde_json::to_string(&(scenario, expert)).map_err(|e| Error::config(e.to_string()))?;
    Ok(hex::encode(Sha256::digest(json.as_bytes())))
}

/// Seed of sample `index` under dataset seed `seed`.
pub fn scenario_seed(seed: u64, index: usize) -> u64 {
    RngStream::new(seed, 0).derive(index as u64).next_u64()
}

/// Builds sample `index`. A pure function of its arguments.
pub fn generate_sample(model: &ScenarioModel, expert: &ExpertConfig, seed: u64, index: usize) -> Result<ExpertSample> {
    let s = scenario_seed(seed, index);
    let ((ma_lo, ma_hi), (mo_lo, mo_hi)) = expert.ranges(model.num_ports())?;
    let mut budget = RngStream::new(s, BUDGET_STREAM);
    let m_active = budget.uniform_int(ma_lo as u64, ma_hi as u64) as usize;
    let m_obs = budget.uniform_int(mo_lo as u64, mo_hi as u64) as usize;
    let mode = if expert.mixed_mode {
        if budget.uniform() < 0.5 {
            Mode::Stealth
        } else {
            Mode::Cooperative
        }
    } else {
        model.config().mode
    };
    let inst = model.realize_with(s, m_active, m_obs, mode)?;
    let problem = model.energy_problem(&inst, CsiMode::Oracle)?;
    let mut rng = RngStream::new(s, SEARCH_STREAM);
    let best = random_search_expert(&problem, expert.n_cand, expert.greedy_refine, &mut rng)?;
    Ok(ExpertSample {
        index,
        scenario_seed: s,
        m_active,
        m_obs,
        mode,
        energy: best.energy,
        z0: best.z0,
        context: inst.context.0,
    })
}

/// Rebuilds a sample's scenario and re-scores its stored logits.
pub fn reevaluate(model: &ScenarioModel, sample: &ExpertSample) -> Result<f64> {
    let inst = model.realize_with(sample.scenario_seed, sample.m_active, sample.m_obs, sample.mode)?;
    let problem = model.energy_problem(&inst, CsiMode::Oracle)?;
    Ok(problem.evaluate_indices(&top_m_indices(&sample.z0, sample.m_active)?))
}

fn generate_range(
    model: &ScenarioModel,
    expert: &ExpertConfig,
    seed: u64,
    range: std::ops::Range<usize>,
) -> Result<Vec<ExpertSample>> {
    range
        .into_par_iter()
        .map(|i| generate_sample(model, expert, seed, i))
        .collect()
}

/// Generates a dataset in memory.
pub fn generate_dataset(model: &ScenarioModel, expert: &ExpertConfig, seed: u64) -> Result<ExpertDataset> {
    if expert.n_samples == 0 {
        return Err(Error::config("n_samples must be at least 1"));
    }
    let header = DatasetHeader::new(model.config(), expert, seed)?;
    let samples = generate_range(model, expert, seed, 0..expert.n_samples)?;
    Ok(ExpertDataset { header, samples })
}

fn partial_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".partial");
    PathBuf::from(s)
}

fn to_line<T: Serialize>(value: &T, path: &Path) -> Result<String> {
    serde_json::to_string(value).map_err(|e| Error::Format {
        path: path.to_owned(),
        message: e.to_string(),
    })
}

/// Samples already present in a compatible partial file.
fn resume_point(partial: &Path, header: &DatasetHeader) -> Result<Vec<String>> {
    let Ok(file) = File::open(partial) else {
        return Ok(Vec::new());
    };
    let mut lines = BufReader::new(file).lines();
    let compatible = match lines.next() {
        Some(Ok(first)) => serde_json::from_str::<DatasetHeader>(&first).is_ok_and(|h| &h == header),
        _ => false,
    };
    if !compatible {
        log::info!("ignoring incompatible partial file {}", partial.display());
        return Ok(Vec::new());
    }
    let mut kept = Vec::new();
    for (i, line) in lines.enumerate() {
        let Ok(line) = line else { break };
        match serde_json::from_str::<ExpertSample>(&line) {
            Ok(s) if s.index == i => kept.push(line),
            _ => break,
        }
    }
    // only whole checkpoints are trusted
    kept.truncate(kept.len() / CHECKPOINT_EVERY * CHECKPOINT_EVERY);
    Ok(kept)
}

/// Generates a dataset straight to `path`, checkpointing to
/// `<path>.partial` every [`CHECKPOINT_EVERY`] samples and resuming from a
/// compatible partial file. The partial file is renamed on completion.
pub fn generate_dataset_file(
    model: &ScenarioModel,
    expert: &ExpertConfig,
    seed: u64,
    path: &Path,
) -> Result<DatasetHeader> {
    if expert.n_samples == 0 {
        return Err(Error::config("n_samples must be at least 1"));
    }
    let header = DatasetHeader::new(model.config(), expert, seed)?;
    let partial = partial_path(path);
    let kept = resume_point(&partial, &header)?;
    if !kept.is_empty() {
        log::info!("resuming dataset generation at sample {}", kept.len());
    }
    let file = OpenOptions::new()
        .create(true)
        .write(true)
        .truncate(true)
        .open(&partial)
        .map_err(|e| Error::io(&partial, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(&partial, e);
    writeln!(w, "{}", to_line(&header, path)?).map_err(io)?;
    for line in &kept {
        writeln!(w, "{line}").map_err(io)?;
    }
    let mut done = kept.len();
    while done < expert.n_samples {
        let end = (done + CHECKPOINT_EVERY).min(expert.n_samples);
        for s in generate_range(model, expert, seed, done..end)? {
            writeln!(w, "{}", to_line(&s, path)?).map_err(io)?;
        }
        w.flush().map_err(io)?;
        w.get_ref().sync_data().map_err(io)?;
        done = end;
        log::info!("generated {done}/{} expert samples", expert.n_samples);
    }
    drop(w);
    fs::rename(&partial, path).map_err(|e| Error::io(path, e))?;
    Ok(header)
}

pub fn write_dataset(dataset: &ExpertDataset, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "{}", to_line(&dataset.header, path)?).map_err(io)?;
    for s in &dataset.samples {
        writeln!(w, "{}", to_line(s, path)?).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_dataset(path: &Path) -> Result<ExpertDataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let bad = |line: usize, message: String| Error::Format {
        path: path.to_owned(),
        message: format!("line {line}: {message}"),
    };
    let first = lines
        .next()
        .ok_or_else(|| bad(1, "empty file".into()))?
        .map_err(|e| Error::io(path, e))?;
    let header: DatasetHeader = serde_json::from_str(&first).map_err(|e| bad(1, e.to_string()))?;
    if header.format != FORMAT_TAG || header.version != FORMAT_VERSION {
        return Err(bad(
            1,
            format!("unsupported format {} v{}", header.format, header.version),
        ));
    }
    let mut samples = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let s: ExpertSample = serde_json::from_str(&line).map_err(|e| bad(i + 2, e.to_string()))?;
        if s.z0.len() != header.k || s.context.len() != header.context_len {
            return Err(bad(i + 2, "sample shape does not match header".into()));
        }
        samples.push(s);
    }
    if samples.is_empty() {
        return Err(bad(2, "dataset has no samples".into()));
    }
    Ok(ExpertDataset { header, samples })
}

/// Numbers as decimal strings: shortest representation that round-trips.
mod decimal {
    use serde::{de::Error, Deserialize, Deserializer, Serializer};
    use std::fmt::Display;
    use std::str::FromStr;

    pub fn serialize<T: Display, S: Serializer>(v: &T, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(v)
    }

    pub fn deserialize<'de, T, D>(d: D) -> Result<T, D::Error>
    where
        T: FromStr,
        T::Err: Display,
        D: Deserializer<'de>,
    {
        let s = String::deserialize(d)?;
        s.parse().map_err(D::Error::custom)
    }
}

mod decimal_vec {
    use serde::{de::Error, ser::SerializeSeq, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        let mut seq = s.serialize_seq(Some(v.len()))?;
        for x in v {
            seq.serialize_element(&x.to_string())?;
        }
        seq.end()
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        Vec::<String>::deserialize(d)?
            .iter()
            .map(|s| s.parse().map_err(D::Error::custom))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::mask_from_indices;

    fn small_model(mode: Mode) -> ScenarioModel {
        let cfg = ScenarioConfig {
            num_ports: 10,
            aperture_x: 1.0,
            aperture_y: 1.0,
            m_obs: 4,
            m_active: 3,
            mode,
            ..ScenarioConfig::default()
        };
        ScenarioModel::new(cfg, 3).unwrap()
    }

    fn small_expert() -> ExpertConfig {
        ExpertConfig {
            n_samples: 5,
            n_cand: 64,
            m_active_min: 2,
            m_active_max: 4,
            m_obs_min: 2,
            m_obs_max: 6,
            ..ExpertConfig::default()
        }
    }

    #[test]
    fn binomials() {
        assert_eq!(binomial(10, 3), 120);
        assert_eq!(binomial(4, 4), 1);
        assert!(binomial(200, 20) > EXHAUSTIVE_LIMIT);
        assert_eq!(binomial(3, 5), 0);
    }

    #[test]
    fn exhaustive_single_candidate() {
        let cfg = ScenarioConfig {
            num_ports: 4,
            m_active: 4,
            m_obs: 2,
            aperture_x: 1.0,
            aperture_y: 1.0,
            ..ScenarioConfig::default()
        };
        let model = ScenarioModel::new(cfg, 0).unwrap();
        let inst = model.realize(1).unwrap();
        let p = model.energy_problem(&inst, CsiMode::Oracle).unwrap();
        let (idx, e) = exhaustive_best_mask(&p).unwrap();
        assert_eq!(idx, vec![0, 1, 2, 3]);
        assert_eq!(e, p.evaluate_indices(&[0, 1, 2, 3]));
    }

    #[test]
    fn exhaustive_beats_every_mask() {
        let model = small_model(Mode::Cooperative);
        let inst = model.realize(8).unwrap();
        let p = model.energy_problem(&inst, CsiMode::Oracle).unwrap();
        let (best, e) = exhaustive_best_mask(&p).unwrap();
        let mut seen = 0;
        for mask in 0u32..1 << 10 {
            if mask.count_ones() != 3 {
                continue;
            }
            seen += 1;
            let idx: Vec<usize> = (0..10).filter(|i| mask >> i & 1 == 1).collect();
            assert!(e <= p.evaluate_indices(&idx));
        }
        assert_eq!(seen, 120);
        assert_eq!(best.len(), 3);
    }

    #[test]
    fn exhaustive_rejects_huge_searches() {
        let cfg = ScenarioConfig {
            num_ports: 64,
            m_active: 10,
            m_obs: 4,
            ..ScenarioConfig::default()
        };
        let model = ScenarioModel::new(cfg, 0).unwrap();
        let inst = model.realize(1).unwrap();
        let p = model.energy_problem(&inst, CsiMode::Oracle).unwrap();
        assert!(matches!(exhaustive_best_mask(&p), Err(Error::Config(_))));
    }

    #[test]
    fn stealth_optimum_avoids_the_only_coupled_port() {
        let cfg = ScenarioConfig {
            num_ports: 8,
            m_active: 3,
            m_obs: 2,
            aperture_x: 1.0,
            aperture_y: 1.0,
            rho_0_re: 0.0,
            mode: Mode::Stealth,
            ..ScenarioConfig::default()
        };
        let model = ScenarioModel::new(cfg, 0).unwrap();
        let inst = model.realize(2).unwrap();
        let mut g = vec![num_complex::Complex64::new(0.0, 0.0); 8];
        g[5] = num_complex::Complex64::new(0.3, -1.1);
        let p = EnergyProblem::new(
            &g,
            &inst.scene,
            &inst.guard,
            crate::energy::EnergyWeights::stealth(),
            3,
            model.reflection(),
            0.1,
        )
        .unwrap();
        let (best, e) = exhaustive_best_mask(&p).unwrap();
        assert!(!best.contains(&5));
        assert_eq!(e, 0.0);
    }

    #[test]
    fn single_candidate_wins() {
        let model = small_model(Mode::Stealth);
        let inst = model.realize(4).unwrap();
        let p = model.energy_problem(&inst, CsiMode::Oracle).unwrap();
        let mut a = RngStream::new(1, 1);
        let mut b = a.clone();
        let r = random_search_expert(&p, 1, false, &mut a).unwrap();
        assert_eq!(r.z0, b.standard_normal_vec(10));
        assert_eq!(r.energy, p.evaluate_indices(&r.active));
        assert!(random_search_expert(&p, 0, false, &mut a).is_err());
    }

    #[test]
    fn more_candidates_never_hurt() {
        let model = small_model(Mode::Cooperative);
        let inst = model.realize(6).unwrap();
        let p = model.energy_problem(&inst, CsiMode::Oracle).unwrap();
        let mut prev = f64::INFINITY;
        for n in [1, 2, 5, 20, 100, 500] {
            let e = random_search_expert(&p, n, false, &mut RngStream::new(9, 0))
                .unwrap()
                .energy;
            assert!(e <= prev);
            prev = e;
        }
    }

    #[test]
    fn refinement_reaches_a_swap_local_minimum() {
        let model = small_model(Mode::Stealth);
        let inst = model.realize(12).unwrap();
        let p = model.energy_problem(&inst, CsiMode::Oracle).unwrap();
        let plain = random_search_expert(&p, 3, false, &mut RngStream::new(2, 0)).unwrap();
        let refined = random_search_expert(&p, 3, true, &mut RngStream::new(2, 0)).unwrap();
        assert!(refined.energy <= plain.energy);
        assert_eq!(top_m_indices(&refined.z0, 3).unwrap(), refined.active);
        let mask = mask_from_indices(10, &refined.active);
        for i in (0..10).filter(|&i| mask[i]) {
            for j in (0..10).filter(|&j| !mask[j]) {
                let trial: Vec<usize> = refined.active.iter().map(|&a| if a == i { j } else { a }).collect();
                assert!(p.evaluate_indices(&trial) >= refined.energy);
            }
        }
    }

    #[test]
    fn samples_reevaluate_exactly() {
        let model = small_model(Mode::Cooperative);
        let expert = small_expert();
        let ds = generate_dataset(&model, &expert, 17).unwrap();
        assert_eq!(ds.samples.len(), 5);
        for s in &ds.samples {
            assert!((2..=4).contains(&s.m_active));
            assert!((reevaluate(&model, s).unwrap() - s.energy).abs() <= 1e-9 * s.energy.max(1.0));
        }
    }

    #[test]
    fn jsonl_round_trip_is_exact() {
        let model = small_model(Mode::Stealth);
        let ds = generate_dataset(&model, &small_expert(), 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        write_dataset(&ds, &path).unwrap();
        let back = read_dataset(&path).unwrap();
        assert_eq!(back, ds);
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 6);
        assert!(text.lines().nth(1).unwrap().contains("\"z0\":[\""));
    }

    #[test]
    fn file_generation_matches_memory_and_is_deterministic() {
        let model = small_model(Mode::Cooperative);
        let expert = small_expert();
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.jsonl");
        let b = dir.path().join("b.jsonl");
        generate_dataset_file(&model, &expert, 21, &a).unwrap();
        generate_dataset_file(&model, &expert, 21, &b).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
        assert!(!partial_path(&a).exists());
        let mem = generate_dataset(&model, &expert, 21).unwrap();
        assert_eq!(read_dataset(&a).unwrap(), mem);
    }

    #[test]
    fn config_hash_tracks_settings() {
        let s = ScenarioConfig::default();
        let e = ExpertConfig::default();
        let h = config_hash(&s, &e).unwrap();
        assert_eq!(h.len(), 64);
        assert_eq!(h, config_hash(&s, &e).unwrap());
        let e2 = ExpertConfig { n_cand: 7, ..e };
        assert_ne!(h, config_hash(&s, &e2).unwrap());
    }
}
