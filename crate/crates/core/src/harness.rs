//! Parameter sweeps, aggregation and result files.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::SimConfig;
use crate::engine::{Realization, StatsMode};
use crate::error::{Result, SimError};
use crate::estimators::Scheme;
use crate::metrics::{fronthaul, inversion_dim, to_db, NmseAccumulator};
use crate::network::{build_stats, place_network};

/// Parameter varied along a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepParam {
    #[serde(rename = "tau_p")]
    TauP,
    N,
    L,
    K,
    #[serde(rename = "eta")]
    Eta,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::TauP => "tau_p",
            SweepParam::N => "N",
            SweepParam::L => "L",
            SweepParam::K => "K",
            SweepParam::Eta => "eta",
        }
    }

    /// Copy of `base` with this parameter set to `value`.
    pub fn apply(self, base: &SimConfig, value: f64) -> Result<SimConfig> {
        let mut cfg = base.clone();
        let count = || {
            if value.fract() != 0.0 || value < 1.0 {
                Err(SimError::InvalidConfig(format!("{} must be a positive integer, got {value}", self.name())))
            } else {
                Ok(value as usize)
            }
        };
        match self {
            SweepParam::TauP => cfg.tau_p = count()?,
            SweepParam::N => cfg.antennas = count()?,
            SweepParam::L => cfg.aps = count()?,
            SweepParam::K => cfg.ues = count()?,
            SweepParam::Eta => cfg.eta = value,
        }
        Ok(cfg)
    }
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepParam {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tau_p" => Ok(SweepParam::TauP),
            "N" => Ok(SweepParam::N),
            "L" => Ok(SweepParam::L),
            "K" => Ok(SweepParam::K),
            "eta" => Ok(SweepParam::Eta),
            other => Err(SimError::UnknownSweepParam(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub param: SweepParam,
    pub values: Vec<f64>,
}

impl FromStr for Sweep {
    type Err = SimError;

    /// Parses `param=v1,v2,...`.
    fn from_str(s: &str) -> Result<Self> {
        let (param, list) = s
            .split_once('=')
            .ok_or_else(|| SimError::InvalidConfig(format!("sweep `{s}` is not of the form param=v1,v2")))?;
        let param = param.trim().parse()?;
        let values = list
            .split(',')
            .map(|v| {
                v.trim()
                    .parse::<f64>()
                    .map_err(|_| SimError::InvalidConfig(format!("sweep value `{v}` is not a number")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Sweep { param, values })
    }
}

fn default_realizations() -> usize {
    50
}

fn default_stats() -> StatsMode {
    StatsMode::Tracked
}

/// A complete sweep description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    #[serde(default)]
    pub base: SimConfig,
    pub sweep: Sweep,
    #[serde(default = "default_realizations")]
    pub realizations: usize,
    #[serde(default = "default_stats")]
    pub stats: StatsMode,
    /// Output path prefix.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<String>,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.realizations == 0 {
            return Err(SimError::InvalidConfig("realizations must be at least 1".into()));
        }
        if self.sweep.values.is_empty() {
            return Err(SimError::InvalidConfig("sweep has no values".into()));
        }
        for &v in &self.sweep.values {
            self.sweep.param.apply(&self.base, v)?.validate_for_mace()?;
        }
        Ok(())
    }
}

/// Built-in experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// NMSE versus pilot length.
    Fig1,
    /// NMSE versus antennas per AP.
    Fig2,
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::Fig1 => "fig1",
            Preset::Fig2 => "fig2",
        }
    }

    pub fn spec(self) -> ExperimentSpec {
        match self {
            Preset::Fig1 => ExperimentSpec {
                base: SimConfig { aps: 3, ues: 5, antennas: 5, power: 0.1, ..SimConfig::default() },
                sweep: Sweep { param: SweepParam::TauP, values: vec![3.0, 5.0, 7.0, 9.0] },
                realizations: default_realizations(),
                stats: StatsMode::Tracked,
                out: Some("fig1".into()),
            },
            Preset::Fig2 => ExperimentSpec {
                base: SimConfig { aps: 4, ues: 7, tau_p: 5, power: 0.1, ..SimConfig::default() },
                sweep: Sweep { param: SweepParam::N, values: vec![2.0, 4.0, 8.0, 16.0] },
                realizations: default_realizations(),
                stats: StatsMode::Tracked,
                out: Some("fig2".into()),
            },
        }
    }
}

impl FromStr for Preset {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fig1" => Ok(Preset::Fig1),
            "fig2" => Ok(Preset::Fig2),
            other => Err(SimError::InvalidConfig(format!("unknown preset `{other}` (expected fig1 or fig2)"))),
        }
    }
}

fn merge_tables(into: &mut toml::Table, from: toml::Table) {
    for (key, value) in from {
        match (into.get_mut(&key), value) {
            (Some(toml::Value::Table(dst)), toml::Value::Table(src)) => merge_tables(dst, src),
            (_, value) => {
                into.insert(key, value);
            }
        }
    }
}

/// Parses a TOML experiment, layering it on top of `preset` when given.
pub fn parse_spec(text: &str, preset: Option<Preset>) -> std::result::Result<ExperimentSpec, String> {
    let mut table = match preset {
        Some(p) => toml::Table::try_from(p.spec()).map_err(|e| e.to_string())?,
        None => toml::Table::new(),
    };
    let file: toml::Table = toml::from_str(text).map_err(|e| e.to_string())?;
    merge_tables(&mut table, file);
    toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| e.to_string())
}

/// Loads an experiment from an optional preset and an optional config file.
pub fn load_spec(preset: Option<Preset>, config: Option<&Path>) -> Result<ExperimentSpec> {
    match (preset, config) {
        (preset, Some(path)) => {
            let text = fs::read_to_string(path).map_err(|e| SimError::Config { path: path.into(), message: e.to_string() })?;
            parse_spec(&text, preset).map_err(|message| SimError::Config { path: path.into(), message })
        }
        (Some(p), None) => Ok(p.spec()),
        (None, None) => Err(SimError::InvalidConfig("either a config file or a preset is required".into())),
    }
}

/// Per-UE accumulators and closed-form values of one realization.
#[derive(Debug, Clone)]
pub struct RealizationReport {
    pub masters: Vec<usize>,
    /// `[local, central, mace]` accumulators for each UE's master pair.
    pub accumulators: Vec<[NmseAccumulator; 3]>,
    /// `[local, central, mace]` closed-form NMSE for each UE; the MACE entry is
    /// averaged over counted blocks.
    pub theory: Vec<[f64; 3]>,
}

fn scheme_index(scheme: Scheme) -> usize {
    match scheme {
        Scheme::Local => 0,
        Scheme::Central => 1,
        Scheme::Mace => 2,
    }
}

impl RealizationReport {
    /// Empirical NMSE averaged over UEs.
    pub fn empirical(&self, scheme: Scheme) -> f64 {
        let i = scheme_index(scheme);
        mean(self.accumulators.iter().map(|a| a[i].nmse()))
    }

    /// Closed-form NMSE averaged over UEs.
    pub fn theory(&self, scheme: Scheme) -> f64 {
        let i = scheme_index(scheme);
        mean(self.theory.iter().map(|t| t[i]))
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Runs one network realization. The random stream depends only on the seed
/// and the realization index, so every sweep point sees the same draws.
pub fn simulate_realization(cfg: &SimConfig, mode: StatsMode, realization: u64) -> Result<RealizationReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(realization);
    let positions = place_network(cfg, &mut rng);
    let stats = build_stats(&positions, cfg, &mut rng)?;
    let mut sim = Realization::new(cfg, stats, mode)?;
    let k = cfg.ues;
    let masters = sim.masters().to_vec();

    let mut accumulators: Vec<[NmseAccumulator; 3]> = (0..k)
        .map(|ue| {
            let norm = sim.master_norm(ue);
            Scheme::ALL.map(|s| NmseAccumulator::new(s, norm))
        })
        .collect();
    let mut mace_theory = vec![0.0; k];

    for b in 0..cfg.blocks {
        let block = sim.draw_block(&mut rng)?;
        let outcome = sim.process_block(&block, b)?;
        if b < cfg.warmup {
            continue;
        }
        for ue in 0..k {
            let h = block.channels.get(masters[ue], ue);
            for (i, scheme) in Scheme::ALL.into_iter().enumerate() {
                let est = outcome.estimate(scheme, masters[ue], ue, k, cfg.antennas, b);
                accumulators[ue][i].accumulate(h, &est.vector);
            }
            mace_theory[ue] += outcome.mace_theory[ue];
        }
    }
    let counted = (cfg.blocks - cfg.warmup) as f64;
    let theory = (0..k)
        .map(|ue| Ok([sim.theory(Scheme::Local, ue)?, sim.theory(Scheme::Central, ue)?, mace_theory[ue] / counted]))
        .collect::<Result<Vec<_>>>()?;
    Ok(RealizationReport { masters, accumulators, theory })
}

/// All realizations of one sweep point.
#[derive(Debug, Clone)]
pub struct PointResult {
    pub value: f64,
    pub config: SimConfig,
    pub realizations: Vec<RealizationReport>,
}

/// Runs every (sweep value, realization) pair in parallel. Results come back
/// in sweep order, then realization order, independent of thread count.
pub fn run_detailed(spec: &ExperimentSpec) -> Result<Vec<PointResult>> {
    spec.validate()?;
    let param = spec.sweep.param;
    let configs = spec
        .sweep
        .values
        .iter()
        .map(|&v| param.apply(&spec.base, v))
        .collect::<Result<Vec<_>>>()?;
    let tasks: Vec<(usize, usize)> =
        (0..configs.len()).flat_map(|p| (0..spec.realizations).map(move |r| (p, r))).collect();
    let reports = tasks
        .par_iter()
        .map(|&(p, r)| {
            simulate_realization(&configs[p], spec.stats, r as u64).map_err(|e| SimError::SweepPoint {
                param: param.name().into(),
                value: spec.sweep.values[p],
                realization: r,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut reports = reports.into_iter();
    Ok(configs
        .into_iter()
        .zip(&spec.sweep.values)
        .map(|(config, &value)| PointResult { value, config, realizations: reports.by_ref().take(spec.realizations).collect() })
        .collect())
}

/// One line of the results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub scheme: Scheme,
    pub param: String,
    pub value: f64,
    pub nmse: f64,
    pub nmse_db: f64,
    pub nmse_theory: f64,
    pub fronthaul: u64,
    pub inv_dim: usize,
    pub realizations: usize,
    pub blocks: usize,
    pub seed: u64,
}

/// Averages detailed results into one row per (sweep value, scheme).
pub fn summarize(spec: &ExperimentSpec, points: &[PointResult]) -> Vec<ResultRow> {
    let mut rows = Vec::with_capacity(points.len() * Scheme::ALL.len());
    for point in points {
        let cfg = &point.config;
        for scheme in Scheme::ALL {
            let nmse = mean(point.realizations.iter().map(|r| r.empirical(scheme)));
            rows.push(ResultRow {
                scheme,
                param: spec.sweep.param.name().into(),
                value: point.value,
                nmse,
                nmse_db: to_db(nmse),
                nmse_theory: mean(point.realizations.iter().map(|r| r.theory(scheme))),
                fronthaul: fronthaul(scheme, cfg.aps, cfg.antennas, cfg.tau_p),
                inv_dim: inversion_dim(scheme, cfg.aps, cfg.antennas),
                realizations: point.realizations.len(),
                blocks: cfg.blocks,
                seed: cfg.seed,
            });
        }
    }
    rows
}

pub fn run(spec: &ExperimentSpec) -> Result<Vec<ResultRow>> {
    let points = run_detailed(spec)?;
    Ok(summarize(spec, &points))
}

fn io_error(path: &Path) -> impl FnOnce(std::io::Error) -> SimError + '_ {
    move |source| SimError::Io { path: path.to_path_buf(), source }
}

fn create(path: &Path) -> Result<fs::File> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_error(dir))?;
    }
    fs::File::create(path).map_err(io_error(path))
}

pub fn emit_csv(rows: &[ResultRow], path: &Path) -> Result<()> {
    if rows.is_empty() {
        return Err(SimError::Rows("no result rows to write".into()));
    }
    let mut writer = csv::Writer::from_writer(create(path)?);
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush().map_err(io_error(path))
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Writes `<prefix>_<scheme>.dat` (sweep value, NMSE in dB) per scheme and a
/// gnuplot script `<prefix>.plot` that draws them. Returns the written paths.
pub fn emit_plot_data(rows: &[ResultRow], prefix: &Path) -> Result<Vec<PathBuf>> {
    let Some(first) = rows.first() else {
        return Err(SimError::Rows("no result rows to plot".into()));
    };
    if let Some(other) = rows.iter().find(|r| r.param != first.param) {
        return Err(SimError::Rows(format!("rows mix sweep parameters `{}` and `{}`", first.param, other.param)));
    }
    let mut written = Vec::new();
    let mut curves = Vec::new();
    for scheme in Scheme::ALL {
        let mut series: Vec<&ResultRow> = rows.iter().filter(|r| r.scheme == scheme).collect();
        if series.is_empty() {
            continue;
        }
        series.sort_by(|a, b| a.value.total_cmp(&b.value));
        let path = with_suffix(prefix, &format!("_{}.dat", scheme.name()));
        let mut f = create(&path)?;
        let mut text = format!("# {} nmse_db\n", first.param);
        for r in series {
            text.push_str(&format!("{} {}\n", r.value, r.nmse_db));
        }
        f.write_all(text.as_bytes()).map_err(io_error(&path))?;
        let file = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        curves.push(format!("\"{file}\" using 1:2 with linespoints title \"{}\"", scheme.name()));
        written.push(path);
    }
    let script = with_suffix(prefix, ".plot");
    let body = format!(
        "set xlabel \"{}\"\nset ylabel \"NMSE [dB]\"\nset grid\nset key top right\nplot {}\n",
        first.param,
        curves.join(", \\\n     ")
    );
    create(&script)?.write_all(body.as_bytes()).map_err(io_error(&script))?;
    written.push(script);
    Ok(written)
}

/// Writes the CSV table and the plot files under `prefix`.
pub fn write_outputs(rows: &[ResultRow], prefix: &Path) -> Result<Vec<PathBuf>> {
    let csv_path = with_suffix(prefix, ".csv");
    emit_csv(rows, &csv_path)?;
    let mut written = vec![csv_path];
    written.extend(emit_plot_data(rows, prefix)?);
    Ok(written)
}
