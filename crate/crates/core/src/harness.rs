//! Desk-scale studies: independence-testing AUC, neural convergence in `n`,
//! running time of mSMI against aSMI, and a theory-mode width probe.
//!
//! Trials get seeds `master ^ splitmix64(index)` and results are gathered in
//! trial order, so a study is reproducible from its config no matter how many
//! worker threads run it.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::asmi::{asmi_estimate, asmi_neural, AsmiConfig};
use crate::datagen::{gen_correlated_gaussian, gen_latent_subspace, LatentSubspaceModel};
use crate::error::{Error, Result};
use crate::knn::DEFAULT_K_NN;
use crate::lipo::{msmi_lipo, SearchBudget};
use crate::neural::{train_msmi, TrainConfig};

/// Mann-Whitney AUC: the probability that a dependent-case score exceeds a
/// null score, ties counting one half.
pub fn auc_from_scores(null_scores: &[f64], alt_scores: &[f64]) -> Result<f64> {
    if null_scores.is_empty() || alt_scores.is_empty() {
        return Err(Error::InvalidArgument("AUC needs at least one score in each class".into()));
    }
    let mut wins = 0.0;
    for &a in alt_scores {
        for &z in null_scores {
            if a > z {
                wins += 1.0;
            } else if a == z {
                wins += 0.5;
            }
        }
    }
    Ok(wins / (null_scores.len() * alt_scores.len()) as f64)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of trial `index` under master seed `master`.
pub fn trial_seed(master: u64, index: u64) -> u64 {
    master ^ splitmix64(index)
}

/// Order statistics of a sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    pub sd: f64,
    pub min: f64,
    pub max: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Summary {
        let count = values.len();
        if count == 0 {
            return Summary { count, mean: f64::NAN, median: f64::NAN, sd: f64::NAN, min: f64::NAN, max: f64::NAN };
        }
        let mean = values.iter().sum::<f64>() / count as f64;
        let sd = if count > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (count - 1) as f64).sqrt()
        } else {
            0.0
        };
        Summary {
            count,
            mean,
            median: median(values),
            sd,
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::InvalidArgument("slope fit needs at least two paired points".into()));
    }
    if x.iter().chain(y).any(|&v| !(v > 0.0)) {
        return Err(Error::InvalidArgument("log-log fit needs positive values".into()));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let mx = lx.iter().sum::<f64>() / lx.len() as f64;
    let my = ly.iter().sum::<f64>() / ly.len() as f64;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    Ok(sxy / sxx)
}

/// One table cell: a statistic summarized over trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub method: String,
    pub n: usize,
    pub k: usize,
    /// What `summary` describes.
    pub statistic: String,
    pub summary: Summary,
    pub auc: Option<f64>,
    pub wall_time_s: f64,
}

/// One raw trial outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub method: String,
    pub n: usize,
    pub label: String,
    pub index: u64,
    pub seed: u64,
    pub value: f64,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyResult {
    pub study: String,
    pub rows: Vec<StudyRow>,
    pub trials: Vec<TrialRecord>,
    /// Config echo, seeds, software version and derived figures.
    pub metadata: serde_json::Map<String, serde_json::Value>,
}

const CSV_COLUMNS: [&str; 13] =
    ["method", "n", "k", "statistic", "count", "mean", "median", "sd", "min", "max", "auc", "wall_time_s", "study"];

impl StudyResult {
    fn new(study: &str, config: serde_json::Value) -> Self {
        let mut metadata = serde_json::Map::new();
        metadata.insert("software".into(), json!(concat!("msmi ", env!("CARGO_PKG_VERSION"))));
        metadata.insert("config".into(), config);
        Self { study: study.into(), rows: Vec::new(), trials: Vec::new(), metadata }
    }

    /// Writes the table as CSV preceded by `#` comment lines documenting the
    /// columns.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# study: {}", self.study)?;
        writeln!(w, "# one row per (method, n, statistic) cell; columns:")?;
        writeln!(w, "#   method, n (sample size), k (slice dimension), statistic (what the summary describes),")?;
        writeln!(w, "#   count/mean/median/sd/min/max (summary over trials), auc (empty if not applicable),")?;
        writeln!(w, "#   wall_time_s (seconds spent on the cell), study (study name)")?;
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(CSV_COLUMNS)?;
        for r in &self.rows {
            let s = &r.summary;
            csv.write_record([
                r.method.clone(),
                r.n.to_string(),
                r.k.to_string(),
                r.statistic.clone(),
                s.count.to_string(),
                format!("{:e}", s.mean),
                format!("{:e}", s.median),
                format!("{:e}", s.sd),
                format!("{:e}", s.min),
                format!("{:e}", s.max),
                r.auc.map(|a| format!("{a}")).unwrap_or_default(),
                format!("{:e}", r.wall_time_s),
                self.study.clone(),
            ])?;
        }
        csv.flush()?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Writes `<path>` as CSV and `<path>.json` with the full result.
    pub fn save(&self, csv_path: &Path) -> Result<()> {
        self.write_csv(std::io::BufWriter::new(std::fs::File::create(csv_path)?))?;
        let mut json_path = csv_path.as_os_str().to_owned();
        json_path.push(".json");
        std::fs::write(json_path, self.to_json()? + "\n")?;
        Ok(())
    }

    /// Rows with the given method and statistic, in table order.
    pub fn rows_for<'a>(&'a self, method: &'a str, statistic: &'a str) -> impl Iterator<Item = &'a StudyRow> + 'a {
        self.rows.iter().filter(move |r| r.method == method && r.statistic == statistic)
    }
}

/// Runs `f` over `0..count` on up to `jobs` threads, returning results in
/// index order.
fn run_trials<T, F>(count: usize, jobs: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    if jobs <= 1 {
        return (0..count).map(f).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot start worker threads: {e}")))?;
    pool.install(|| (0..count).into_par_iter().map(f).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AucMethod {
    MsmiLipo,
    AsmiMc,
}

impl AucMethod {
    pub fn name(self) -> &'static str {
        match self {
            AucMethod::MsmiLipo => "msmi-lipo",
            AucMethod::AsmiMc => "asmi-mc",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AucStudyConfig {
    pub d: usize,
    pub d_prime: usize,
    pub k: usize,
    pub k_nn: usize,
    pub sample_sizes: Vec<usize>,
    pub trials_per_class: usize,
    pub method: AucMethod,
    /// LIPO budget (its seed is replaced per trial).
    pub budget: SearchBudget,
    /// Monte Carlo slices for aSMI.
    pub num_slices: usize,
    pub seed: u64,
    /// Also compute the other statistic on dependent trials and log where
    /// mSMI falls below aSMI by more than 0.05.
    pub ordering_check: bool,
    /// Worker threads; results do not depend on this.
    pub jobs: usize,
}

impl Default for AucStudyConfig {
    fn default() -> Self {
        Self {
            d: 10,
            d_prime: 4,
            k: 1,
            k_nn: DEFAULT_K_NN,
            sample_sizes: vec![31, 100, 317, 1000],
            trials_per_class: 50,
            method: AucMethod::MsmiLipo,
            budget: SearchBudget::default(),
            num_slices: 1000,
            seed: 0,
            ordering_check: false,
            jobs: 1,
        }
    }
}

impl AucStudyConfig {
    fn validate(&self) -> Result<()> {
        if self.trials_per_class < 10 {
            return Err(Error::InvalidArgument(format!(
                "trials_per_class must be at least 10, got {}",
                self.trials_per_class
            )));
        }
        if self.sample_sizes.is_empty() || self.sample_sizes.iter().any(|&n| n <= self.k_nn) {
            return Err(Error::InvalidArgument("every sample size must exceed k_nn".into()));
        }
        if self.k == 0 || self.k > self.d || self.d_prime == 0 || self.d_prime > self.d {
            return Err(Error::InvalidArgument(format!(
                "need 1 <= k <= d and 1 <= d' <= d, got k={}, d={}, d'={}",
                self.k, self.d, self.d_prime
            )));
        }
        Ok(())
    }

    fn statistic(&self, method: AucMethod, data: &crate::datagen::PairedDataset, seed: u64) -> Result<f64> {
        match method {
            AucMethod::MsmiLipo => Ok(msmi_lipo(data, self.k, self.k_nn, &self.budget.clone().with_seed(seed))?.value_nats),
            AucMethod::AsmiMc => {
                let cfg = AsmiConfig { k: self.k, num_slices: self.num_slices, k_nn: self.k_nn, seed };
                Ok(asmi_estimate(data, &cfg)?.value)
            }
        }
    }
}

/// Independence-testing study: for each `n`, scores `trials_per_class`
/// dependent and null latent-subspace datasets and reports the AUC.
pub fn independence_auc(cfg: &AucStudyConfig) -> Result<StudyResult> {
    cfg.validate()?;
    let mut result = StudyResult::new("independence-auc", serde_json::to_value(cfg)?);
    let method = cfg.method.name();
    let other = match cfg.method {
        AucMethod::MsmiLipo => AucMethod::AsmiMc,
        AucMethod::AsmiMc => AucMethod::MsmiLipo,
    };
    let mut ordering_violations = Vec::new();
    for (ni, &n) in cfg.sample_sizes.iter().enumerate() {
        let start = Instant::now();
        let per_n = 2 * cfg.trials_per_class;
        let outcomes = run_trials(per_n, cfg.jobs, |t| {
            let index = (ni * per_n + t) as u64;
            let seed = trial_seed(cfg.seed, index);
            let dependent = t % 2 == 1;
            let t0 = Instant::now();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let data = LatentSubspaceModel::draw(cfg.d, cfg.d_prime, &mut rng)?.sample(n, dependent, &mut rng)?;
            let value = cfg.statistic(cfg.method, &data, seed)?;
            let elapsed = t0.elapsed().as_secs_f64();
            let other_value =
                if cfg.ordering_check && dependent { Some(cfg.statistic(other, &data, seed)?) } else { None };
            Ok((index, seed, dependent, value, elapsed, other_value))
        })?;
        let (mut null, mut alt) = (Vec::new(), Vec::new());
        for &(index, seed, dependent, value, elapsed, other_value) in &outcomes {
            if dependent { &mut alt } else { &mut null }.push(value);
            result.trials.push(TrialRecord {
                method: method.into(),
                n,
                label: if dependent { "dependent" } else { "null" }.into(),
                index,
                seed,
                value,
                wall_time_s: elapsed,
            });
            if let Some(o) = other_value {
                let (msmi, asmi) = match cfg.method {
                    AucMethod::MsmiLipo => (value, o),
                    AucMethod::AsmiMc => (o, value),
                };
                if msmi < asmi - 0.05 {
                    log::warn!("n={n} trial {index}: mSMI {msmi:.4} below aSMI {asmi:.4} by more than 0.05");
                    ordering_violations.push(json!({"n": n, "index": index, "msmi": msmi, "asmi": asmi}));
                }
            }
        }
        let auc = auc_from_scores(&null, &alt)?;
        let wall = start.elapsed().as_secs_f64();
        log::info!("{method}: n={n} k={} AUC={auc:.3}", cfg.k);
        for (label, values) in [("null", &null), ("dependent", &alt)] {
            result.rows.push(StudyRow {
                method: method.into(),
                n,
                k: cfg.k,
                statistic: label.into(),
                summary: Summary::of(values),
                auc: Some(auc),
                wall_time_s: wall,
            });
        }
    }
    if cfg.ordering_check {
        result.metadata.insert("ordering_violations".into(), json!(ordering_violations));
    }
    Ok(result)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvergenceConfig {
    pub rho: f64,
    pub sample_sizes: Vec<usize>,
    pub seeds: Vec<u64>,
    pub train: TrainConfig,
    /// Target optimizer steps per run; epochs are scaled with `n` to match.
    /// `None` uses `train.epochs` everywhere.
    pub steps_per_run: Option<usize>,
    pub jobs: usize,
}

impl Default for ConvergenceConfig {
    fn default() -> Self {
        Self {
            rho: 0.5,
            sample_sizes: vec![500, 1581, 5000, 15811, 50_000],
            seeds: (0..5).collect(),
            train: TrainConfig::default(),
            steps_per_run: Some(1500),
            jobs: 1,
        }
    }
}

/// Epochs giving roughly `steps` optimizer steps on `n` samples.
pub fn epochs_for_steps(n: usize, train: &TrainConfig, steps: usize) -> usize {
    let n_eval = ((n as f64 * train.eval_fraction).round() as usize).clamp(2, n.saturating_sub(2).max(2));
    let n_train = n.saturating_sub(n_eval).max(1);
    let per_epoch = n_train.div_ceil(train.batch_size).max(1);
    steps.div_ceil(per_epoch).max(1)
}

/// Neural estimates on scalar correlated Gaussians across sample sizes,
/// scored against `-½ ln(1 - ρ²)`.
pub fn convergence_study(cfg: &ConvergenceConfig) -> Result<StudyResult> {
    if !(cfg.rho.abs() < 1.0) || cfg.sample_sizes.is_empty() || cfg.seeds.is_empty() {
        return Err(Error::InvalidArgument("need |rho| < 1 and nonempty sample sizes and seeds".into()));
    }
    let truth = -0.5 * (1.0 - cfg.rho * cfg.rho).ln();
    let mut result = StudyResult::new("convergence", serde_json::to_value(cfg)?);
    result.metadata.insert("closed_form_nats".into(), json!(truth));
    let cells: Vec<(usize, u64)> = cfg.sample_sizes.iter().flat_map(|&n| cfg.seeds.iter().map(move |&s| (n, s))).collect();
    let outcomes = run_trials(cells.len(), cfg.jobs, |i| {
        let (n, seed) = cells[i];
        let epochs = cfg.steps_per_run.map_or(cfg.train.epochs, |s| epochs_for_steps(n, &cfg.train, s));
        let data_seed = trial_seed(seed, n as u64);
        let data = gen_correlated_gaussian(n, cfg.rho, &mut ChaCha8Rng::seed_from_u64(data_seed))?;
        let train = TrainConfig { epochs, seed, ..cfg.train.clone() };
        let report = train_msmi(&data, &train)?;
        log::info!("convergence: n={n} seed={seed} epochs={epochs} estimate={:.4}", report.value_nats);
        Ok((report.value_nats, report.wall_time_s, data_seed))
    })?;
    let mut medians = Vec::new();
    for &n in &cfg.sample_sizes {
        let idx: Vec<usize> = (0..cells.len()).filter(|&i| cells[i].0 == n).collect();
        let estimates: Vec<f64> = idx.iter().map(|&i| outcomes[i].0).collect();
        let errors: Vec<f64> = estimates.iter().map(|e| (e - truth).abs()).collect();
        let wall: f64 = idx.iter().map(|&i| outcomes[i].1).sum();
        for &i in &idx {
            result.trials.push(TrialRecord {
                method: "msmi-neural".into(),
                n,
                label: "estimate".into(),
                index: i as u64,
                seed: cells[i].1,
                value: outcomes[i].0,
                wall_time_s: outcomes[i].1,
            });
        }
        medians.push(median(&errors));
        for (statistic, values) in [("estimate", &estimates), ("abs_error", &errors)] {
            result.rows.push(StudyRow {
                method: "msmi-neural".into(),
                n,
                k: cfg.train.k,
                statistic: statistic.into(),
                summary: Summary::of(values),
                auc: None,
                wall_time_s: wall,
            });
        }
    }
    let ns: Vec<f64> = cfg.sample_sizes.iter().map(|&n| n as f64).collect();
    let slope = loglog_slope(&ns, &medians).ok();
    result.metadata.insert("median_abs_error".into(), json!(medians));
    result.metadata.insert("loglog_slope".into(), json!(slope));
    Ok(result)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimingConfig {
    pub n_list: Vec<usize>,
    /// Latent-subspace data dimensions.
    pub d: usize,
    pub d_prime: usize,
    pub train: TrainConfig,
    pub asmi: AsmiConfig,
    /// Slices for aSMI with one neural training per slice; `None` skips it.
    pub neural_slices: Option<usize>,
    pub seed: u64,
}

impl Default for TimingConfig {
    fn default() -> Self {
        Self {
            n_list: vec![5000, 10_000],
            d: 10,
            d_prime: 4,
            train: TrainConfig { epochs: 2, ..TrainConfig::default() },
            asmi: AsmiConfig::default(),
            neural_slices: None,
            seed: 0,
        }
    }
}

/// Wall-clock comparison at matched `n`: one neural mSMI training against an
/// `m`-slice kNN aSMI pass and, optionally, against `m` neural trainings.
pub fn timing_study(cfg: &TimingConfig) -> Result<StudyResult> {
    let mut result = StudyResult::new("timing", serde_json::to_value(cfg)?);
    let mut ratios = Vec::new();
    for (i, &n) in cfg.n_list.iter().enumerate() {
        let seed = trial_seed(cfg.seed, i as u64);
        let data = gen_latent_subspace(n, cfg.d, cfg.d_prime, true, &mut ChaCha8Rng::seed_from_u64(seed))?;
        let train = TrainConfig { seed, ..cfg.train.clone() };

        let t = Instant::now();
        let report = train_msmi(&data, &train)?;
        let msmi_time = t.elapsed().as_secs_f64();
        let per_epoch = if train.epochs > 0 { msmi_time / train.epochs as f64 } else { 0.0 };
        let mut push = |method: &str, statistic: &str, value: f64, wall: f64| {
            result.rows.push(StudyRow {
                method: method.into(),
                n,
                k: train.k,
                statistic: statistic.into(),
                summary: Summary::of(&[value]),
                auc: None,
                wall_time_s: wall,
            });
        };
        push("msmi-neural", "estimate", report.value_nats, msmi_time);

        let t = Instant::now();
        let asmi = asmi_estimate(&data, &AsmiConfig { seed, ..cfg.asmi.clone() })?;
        let asmi_time = t.elapsed().as_secs_f64();
        push("asmi-knn", "estimate", asmi.value, asmi_time);

        // Every timing lives under a `wall_time` key, so the rest of the
        // result is reproducible.
        let mut cell = json!({
            "n": n,
            "msmi_wall_time_s": msmi_time,
            "msmi_wall_time_per_epoch_s": per_epoch,
            "asmi_knn_wall_time_s": asmi_time,
            "wall_time_ratio_asmi_knn": asmi_time / msmi_time,
        });
        if let Some(m) = cfg.neural_slices {
            let t = Instant::now();
            let est = asmi_neural(&data, m, &train)?;
            let neural_time = t.elapsed().as_secs_f64();
            push("asmi-neural", "estimate", est.value, neural_time);
            cell["asmi_neural_wall_time_s"] = json!(neural_time);
            cell["wall_time_ratio_asmi_neural"] = json!(neural_time / msmi_time);
        }
        log::info!("timing: {cell}");
        ratios.push(cell);
    }
    result.metadata.insert("timings".into(), json!(ratios));
    Ok(result)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TheoryProbeConfig {
    pub rho: f64,
    pub n: usize,
    pub ells: Vec<usize>,
    pub seeds: Vec<u64>,
    pub train: TrainConfig,
}

impl Default for TheoryProbeConfig {
    fn default() -> Self {
        Self {
            rho: 0.5,
            n: 10_000,
            ells: vec![16, 64, 256, 1024],
            seeds: (0..3).collect(),
            train: TrainConfig { theory_mode: true, learning_rate: 1e-3, ..TrainConfig::default() },
        }
    }
}

/// Error of theory-mode (bounded shallow ReLU) estimates against the
/// closed form for several widths `ℓ`. Reported only; no rate is asserted.
pub fn theory_probe(cfg: &TheoryProbeConfig) -> Result<StudyResult> {
    let truth = -0.5 * (1.0 - cfg.rho * cfg.rho).ln();
    let mut result = StudyResult::new("theory-probe", serde_json::to_value(cfg)?);
    result.metadata.insert("closed_form_nats".into(), json!(truth));
    for &ell in &cfg.ells {
        let start = Instant::now();
        let mut errors = Vec::new();
        for &seed in &cfg.seeds {
            let data_seed = trial_seed(seed, cfg.n as u64);
            let data = gen_correlated_gaussian(cfg.n, cfg.rho, &mut ChaCha8Rng::seed_from_u64(data_seed))?;
            let train = TrainConfig { theory_mode: true, ell, seed, ..cfg.train.clone() };
            let r = train_msmi(&data, &train)?;
            errors.push((r.value_nats - truth).abs());
            result.trials.push(TrialRecord {
                method: "msmi-neural-theory".into(),
                n: cfg.n,
                label: format!("ell={ell}"),
                index: seed,
                seed,
                value: r.value_nats,
                wall_time_s: r.wall_time_s,
            });
        }
        result.rows.push(StudyRow {
            method: "msmi-neural-theory".into(),
            n: cfg.n,
            k: cfg.train.k,
            statistic: format!("abs_error(ell={ell})"),
            summary: Summary::of(&errors),
            auc: None,
            wall_time_s: start.elapsed().as_secs_f64(),
        });
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn auc_examples() {
        assert_eq!(auc_from_scores(&[0.0, 1.0], &[2.0, 3.0]).unwrap(), 1.0);
        assert_eq!(auc_from_scores(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 0.5);
        assert_eq!(auc_from_scores(&[0.0, 1.0], &[0.5, 2.0]).unwrap(), 0.75);
        assert!(auc_from_scores(&[], &[1.0]).is_err());
    }

    /// Oracle: AUC as the normalized rank-sum (Wilcoxon) statistic with
    /// midranks for ties.
    fn rank_sum_auc(null: &[f64], alt: &[f64]) -> f64 {
        let mut all: Vec<(f64, bool)> = null.iter().map(|&v| (v, false)).chain(alt.iter().map(|&v| (v, true))).collect();
        all.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut ranks = vec![0.0; all.len()];
        let mut i = 0;
        while i < all.len() {
            let mut j = i;
            while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
                j += 1;
            }
            let mid = (i + j) as f64 / 2.0 + 1.0;
            for r in &mut ranks[i..=j] {
                *r = mid;
            }
            i = j + 1;
        }
        let m = alt.len() as f64;
        let r_alt: f64 = all.iter().zip(&ranks).filter(|(p, _)| p.1).map(|(_, r)| r).sum();
        (r_alt - m * (m + 1.0) / 2.0) / (m * null.len() as f64)
    }

    proptest! {
        #[test]
        fn auc_matches_rank_sum(null in prop::collection::vec(0i32..20, 1..30), alt in prop::collection::vec(0i32..20, 1..30)) {
            let null: Vec<f64> = null.into_iter().map(f64::from).collect();
            let alt: Vec<f64> = alt.into_iter().map(f64::from).collect();
            let a = auc_from_scores(&null, &alt).unwrap();
            prop_assert!((a - rank_sum_auc(&null, &alt)).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&a));
            // Swapping classes mirrors the AUC.
            prop_assert!((a + auc_from_scores(&alt, &null).unwrap() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn null_vs_null_auc_is_calibrated() {
        let cfg = AsmiConfig { num_slices: 16, ..Default::default() };
        let score = |i: u64| {
            let data = gen_latent_subspace(200, 4, 2, false, &mut ChaCha8Rng::seed_from_u64(trial_seed(5, i))).unwrap();
            asmi_estimate(&data, &AsmiConfig { seed: i, ..cfg.clone() }).unwrap().value
        };
        let a: Vec<f64> = (0..50).map(score).collect();
        let b: Vec<f64> = (50..100).map(score).collect();
        let auc = auc_from_scores(&a, &b).unwrap();
        assert!((0.35..=0.65).contains(&auc), "{auc}");
    }

    #[test]
    fn trial_seeds_are_distinct_and_stable() {
        let seeds: std::collections::HashSet<u64> = (0..1000).map(|i| trial_seed(7, i)).collect();
        assert_eq!(seeds.len(), 1000);
        assert_eq!(trial_seed(7, 3), trial_seed(7, 3));
        assert_ne!(trial_seed(7, 3), trial_seed(8, 3));
    }

    #[test]
    fn summary_and_slope() {
        let s = Summary::of(&[3.0, 1.0, 2.0, 10.0]);
        assert_eq!(s.median, 2.5);
        assert_eq!(s.mean, 4.0);
        assert_eq!((s.min, s.max), (1.0, 10.0));
        let x = [10.0, 100.0, 1000.0];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powf(-0.5)).collect();
        assert!((loglog_slope(&x, &y).unwrap() + 0.5).abs() < 1e-12);
        assert!(loglog_slope(&x, &[1.0, 0.0, 1.0]).is_err());
    }

    #[test]
    fn epochs_scale_with_n() {
        let t = TrainConfig::default();
        assert_eq!(epochs_for_steps(500, &t, 1500), 750);
        assert_eq!(epochs_for_steps(50_000, &t, 1500), 9);
        assert!(epochs_for_steps(10_000, &t, 1500) >= 1500 / 36);
    }

    fn small_auc(jobs: usize) -> AucStudyConfig {
        AucStudyConfig {
            d: 4,
            d_prime: 2,
            k: 1,
            sample_sizes: vec![60],
            trials_per_class: 10,
            method: AucMethod::AsmiMc,
            num_slices: 8,
            seed: 3,
            jobs,
            ..Default::default()
        }
    }

    #[test]
    fn auc_study_is_reproducible_and_thread_independent() {
        let strip = |mut r: StudyResult| {
            r.rows.iter_mut().for_each(|x| x.wall_time_s = 0.0);
            r.trials.iter_mut().for_each(|x| x.wall_time_s = 0.0);
            r.metadata.remove("config");
            r
        };
        let a = strip(independence_auc(&small_auc(1)).unwrap());
        let b = strip(independence_auc(&small_auc(1)).unwrap());
        let c = strip(independence_auc(&small_auc(2)).unwrap());
        assert_eq!(a, b);
        assert_eq!(a, c);
        assert_eq!(a.trials.len(), 20);
        assert_eq!(a.rows.len(), 2);
        let auc = a.rows[0].auc.unwrap();
        assert!((0.0..=1.0).contains(&auc));
    }

    #[test]
    fn auc_study_rejects_too_few_trials() {
        let cfg = AucStudyConfig { trials_per_class: 5, ..small_auc(1) };
        assert!(independence_auc(&cfg).is_err());
    }

    #[test]
    fn csv_has_documented_header() {
        let r = independence_auc(&small_auc(1)).unwrap();
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("# study: independence-auc"));
        let header = text.lines().find(|l| !l.starts_with('#')).unwrap();
        assert_eq!(header, CSV_COLUMNS.join(","));
        assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 3);
        let back: StudyResult = serde_json::from_str(&r.to_json().unwrap()).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn epoch_time_grows_at_most_linearly() {
        let cfg = TimingConfig {
            n_list: vec![4000, 8000],
            d: 3,
            d_prime: 1,
            train: TrainConfig { epochs: 2, ..TrainConfig::default() },
            asmi: AsmiConfig { num_slices: 1, ..Default::default() },
            neural_slices: None,
            seed: 2,
        };
        let r = timing_study(&cfg).unwrap();
        let per_epoch = |i: usize| r.metadata["timings"][i]["msmi_wall_time_per_epoch_s"].as_f64().unwrap();
        let ratio = per_epoch(1) / per_epoch(0);
        assert!(ratio <= 3.0, "{ratio}");
    }

    #[test]
    fn independent_pair_estimates_near_zero() {
        let cfg = ConvergenceConfig {
            rho: 0.0,
            sample_sizes: vec![10_000],
            seeds: vec![0, 1],
            steps_per_run: Some(400),
            ..Default::default()
        };
        let r = convergence_study(&cfg).unwrap();
        for t in &r.trials {
            assert!((-0.05..=0.05).contains(&t.value), "{}", t.value);
        }
    }

    #[test]
    fn zero_epoch_timing_is_fast() {
        let cfg = TimingConfig {
            n_list: vec![400],
            d: 3,
            d_prime: 1,
            train: TrainConfig { epochs: 0, ..TrainConfig::default() },
            asmi: AsmiConfig { num_slices: 4, ..Default::default() },
            neural_slices: None,
            seed: 1,
        };
        let r = timing_study(&cfg).unwrap();
        let t = r.rows_for("msmi-neural", "estimate").next().unwrap().wall_time_s;
        assert!(t < 0.5, "{t}");
    }
}
