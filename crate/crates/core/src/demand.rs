//! Demand traces, generative demand models and synthetic trace generation.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Poisson;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netflow::{DemandSample, Tensor3};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TripRecord {
    #[serde(rename = "t")]
    pub request_s: u64,
    pub origin: usize,
    pub dest: usize,
}

/// Trip requests ordered by request time. `span_s` is the length of the
/// observed period; it defaults to one second past the last request.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DemandTrace {
    records: Vec<TripRecord>,
    span_s: u64,
}

impl DemandTrace {
    pub fn new(records: Vec<TripRecord>) -> Result<Self> {
        if let Some(k) = records.windows(2).position(|w| w[1].request_s < w[0].request_s) {
            return Err(Error::Ingestion(format!(
                "request times decrease at record {}: {} after {}",
                k + 1,
                records[k + 1].request_s,
                records[k].request_s
            )));
        }
        let span_s = records.last().map_or(0, |r| r.request_s + 1);
        Ok(DemandTrace { records, span_s })
    }

    pub fn with_span(mut self, span_s: u64) -> Result<Self> {
        if let Some(last) = self.records.last() {
            if last.request_s >= span_s {
                return Err(Error::Range(format!(
                    "span {span_s}s ends before the last request at {}s",
                    last.request_s
                )));
            }
        }
        self.span_s = span_s;
        Ok(self)
    }

    pub fn records(&self) -> &[TripRecord] {
        &self.records
    }

    pub fn span_s(&self) -> u64 {
        self.span_s
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn check_stations(&self, n: usize) -> Result<()> {
        match self.records.iter().position(|r| r.origin >= n || r.dest >= n) {
            Some(k) => Err(Error::Ingestion(format!(
                "record {k} references station outside 0..{n}: {:?}",
                self.records[k]
            ))),
            None => Ok(()),
        }
    }

    /// Records with `start_s <= t < end_s`.
    pub fn window(&self, start_s: u64, end_s: u64) -> &[TripRecord] {
        let lo = self.records.partition_point(|r| r.request_s < start_s);
        let hi = self.records.partition_point(|r| r.request_s < end_s);
        &self.records[lo..hi.max(lo)]
    }

    /// Counts trips per `(origin, dest, step)` where
    /// `step = floor((t - start_s) / dt_s)`, over `horizon` steps.
    pub fn bin(&self, n: usize, start_s: u64, dt_s: u32, horizon: usize) -> DemandSample {
        let mut lam = Tensor3::zeros(n, horizon);
        let end = start_s + dt_s as u64 * horizon as u64;
        for r in self.window(start_s, end) {
            let step = ((r.request_s - start_s) / dt_s as u64) as usize;
            *lam.get_mut(r.origin, r.dest, step) += 1;
        }
        DemandSample::new(lam)
    }

    /// Reads a `t,origin,dest` CSV.
    pub fn from_reader(reader: impl Read) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["t", "origin", "dest"] {
            return Err(Error::Ingestion(format!("expected header t,origin,dest, found {:?}", headers)));
        }
        let records = rdr.deserialize().collect::<std::result::Result<Vec<TripRecord>, _>>()?;
        Self::new(records)
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path)
            .map_err(|e| Error::Ingestion(format!("{}: {e}", path.display())))?;
        Self::from_reader(std::io::BufReader::new(file))
    }

    pub fn to_writer(&self, writer: impl Write) -> Result<()> {
        let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
        wtr.write_record(["t", "origin", "dest"])?;
        for r in &self.records {
            wtr.serialize(r)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_writer(std::io::BufWriter::new(std::fs::File::create(path)?))
    }
}

/// What a model is asked to forecast: the window starting at `start_s`,
/// given recently realized demand binned at `dt_s`.
#[derive(Clone, Copy, Debug)]
pub struct ForecastContext<'a> {
    pub n: usize,
    pub start_s: u64,
    pub dt_s: u32,
    pub history: Option<&'a DemandSample>,
}

impl<'a> ForecastContext<'a> {
    pub fn new(n: usize, start_s: u64, dt_s: u32) -> Self {
        ForecastContext {
            n,
            start_s,
            dt_s,
            history: None,
        }
    }

    pub fn with_history(mut self, history: &'a DemandSample) -> Self {
        self.history = Some(history);
        self
    }
}

/// Source of demand scenarios. Output must be a deterministic function of
/// the model, the context, `horizon`, `count` and `seed`.
pub trait GenerativeModel: Send + Sync {
    fn sample(&self, ctx: &ForecastContext<'_>, horizon: usize, count: usize, seed: u64) -> Result<Vec<DemandSample>>;
}

/// Independent Poisson counts with a fixed mean tensor.
#[derive(Clone, Debug)]
pub struct PoissonModel {
    mean: Tensor3<f64>,
}

impl PoissonModel {
    pub fn new(mean: Tensor3<f64>) -> Result<Self> {
        if mean.as_slice().iter().any(|m| !m.is_finite() || *m < 0.0) {
            return Err(Error::Argument("Poisson means must be finite and non-negative".into()));
        }
        Ok(PoissonModel { mean })
    }

    pub fn mean(&self) -> &Tensor3<f64> {
        &self.mean
    }
}

impl GenerativeModel for PoissonModel {
    fn sample(&self, _ctx: &ForecastContext<'_>, horizon: usize, count: usize, seed: u64) -> Result<Vec<DemandSample>> {
        let n = self.mean.n();
        if horizon > self.mean.horizon() {
            return Err(Error::Range(format!(
                "horizon {horizon} exceeds the {} steps of the mean tensor",
                self.mean.horizon()
            )));
        }
        let dists: Vec<Option<Poisson<f64>>> = self
            .mean
            .as_slice()
            .iter()
            .map(|&m| (m > 0.0).then(|| Poisson::new(m).expect("positive finite mean")))
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let out = (0..count)
            .map(|_| {
                DemandSample::new(Tensor3::from_fn(n, horizon, |i, j, s| {
                    match &dists[self.mean.index(i, j, s)] {
                        Some(d) => d.sample(&mut rng) as u32,
                        None => 0,
                    }
                }))
            })
            .collect();
        Ok(out)
    }
}

/// Resamples whole historical days: each sample is the binned demand of a
/// uniformly chosen day over the requested time-of-day window.
#[derive(Clone, Debug)]
pub struct BootstrapModel {
    days: Vec<DemandTrace>,
}

impl BootstrapModel {
    pub fn new(days: Vec<DemandTrace>) -> Result<Self> {
        if days.is_empty() {
            return Err(Error::Argument("bootstrap needs at least one historical day".into()));
        }
        Ok(BootstrapModel { days })
    }

    pub fn days(&self) -> &[DemandTrace] {
        &self.days
    }
}

impl GenerativeModel for BootstrapModel {
    fn sample(&self, ctx: &ForecastContext<'_>, horizon: usize, count: usize, seed: u64) -> Result<Vec<DemandSample>> {
        let binned: Vec<DemandSample> = self
            .days
            .iter()
            .map(|d| d.bin(ctx.n, ctx.start_s, ctx.dt_s, horizon))
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok((0..count)
            .map(|_| binned[rng.random_range(0..binned.len())].clone())
            .collect())
    }
}

/// Point forecast: the per-coordinate mean over historical days, rounded to
/// the nearest integer, repeated `count` times.
#[derive(Clone, Debug)]
pub struct HistoricalMeanModel {
    days: Vec<DemandTrace>,
}

impl HistoricalMeanModel {
    pub fn new(days: Vec<DemandTrace>) -> Result<Self> {
        if days.is_empty() {
            return Err(Error::Argument("mean forecast needs at least one historical day".into()));
        }
        Ok(HistoricalMeanModel { days })
    }
}

impl GenerativeModel for HistoricalMeanModel {
    fn sample(&self, ctx: &ForecastContext<'_>, horizon: usize, count: usize, _seed: u64) -> Result<Vec<DemandSample>> {
        let mut sum: Tensor3<u64> = Tensor3::zeros(ctx.n, horizon);
        for day in &self.days {
            for ((i, j, s), v) in day.bin(ctx.n, ctx.start_s, ctx.dt_s, horizon).tensor().iter_indexed() {
                *sum.get_mut(i, j, s) += v as u64;
            }
        }
        let days = self.days.len() as f64;
        let mean = DemandSample::new(sum.map(|v| (v as f64 / days).round() as u32));
        Ok(vec![mean; count])
    }
}

/// Historical days whose recent demand looks most like the observed
/// history. Days are compared on per-station origin and destination counts
/// over the last `recent_steps` complete bins of the context history; the
/// `neighbours` closest days, plus any tied with the last of them, form the
/// analog set. Without usable history every day is an analog.
#[derive(Clone, Debug)]
pub struct AnalogModel {
    days: Vec<DemandTrace>,
    neighbours: usize,
    recent_steps: usize,
}

impl AnalogModel {
    pub fn new(days: Vec<DemandTrace>, neighbours: usize, recent_steps: usize) -> Result<Self> {
        if days.is_empty() {
            return Err(Error::Argument("analog model needs at least one historical day".into()));
        }
        if neighbours == 0 {
            return Err(Error::Argument("analog model needs at least one neighbour".into()));
        }
        Ok(AnalogModel {
            days,
            neighbours,
            recent_steps,
        })
    }

    pub fn days(&self) -> &[DemandTrace] {
        &self.days
    }

    /// Indices of the analog days, in increasing order.
    pub fn analogs(&self, ctx: &ForecastContext<'_>) -> Vec<usize> {
        let all: Vec<usize> = (0..self.days.len()).collect();
        let Some(history) = ctx.history else { return all };
        let dt = ctx.dt_s as u64;
        let steps = history.horizon();
        let start = ctx.start_s.saturating_sub(steps as u64 * dt);
        let complete: Vec<usize> = (0..steps).filter(|&s| start + (s as u64 + 1) * dt <= ctx.start_s).collect();
        let used = &complete[complete.len().saturating_sub(self.recent_steps)..];
        if used.is_empty() {
            return all;
        }
        let profile = |sample: &DemandSample| -> Vec<i64> {
            let mut v = vec![0i64; 2 * ctx.n * used.len()];
            for (k, &s) in used.iter().enumerate() {
                for i in 0..ctx.n {
                    for j in 0..ctx.n {
                        let c = sample.get(i, j, s) as i64;
                        v[(k * 2) * ctx.n + i] += c;
                        v[(k * 2 + 1) * ctx.n + j] += c;
                    }
                }
            }
            v
        };
        let observed = profile(history);
        let mut dist: Vec<(i64, usize)> = self
            .days
            .iter()
            .enumerate()
            .map(|(d, day)| {
                let p = profile(&day.bin(ctx.n, start, ctx.dt_s, steps));
                (p.iter().zip(&observed).map(|(a, b)| (a - b).abs()).sum(), d)
            })
            .collect();
        dist.sort_unstable();
        let cutoff = dist[self.neighbours.min(dist.len()) - 1].0;
        let mut chosen: Vec<usize> = dist.iter().filter(|&&(e, _)| e <= cutoff).map(|&(_, d)| d).collect();
        chosen.sort_unstable();
        chosen
    }

    /// Rounded per-coordinate mean over the analog days.
    pub fn point_forecast(&self, ctx: &ForecastContext<'_>, horizon: usize) -> DemandSample {
        let analogs = self.analogs(ctx);
        let mut sum: Tensor3<u64> = Tensor3::zeros(ctx.n, horizon);
        for &d in &analogs {
            for ((i, j, s), v) in self.days[d].bin(ctx.n, ctx.start_s, ctx.dt_s, horizon).tensor().iter_indexed() {
                *sum.get_mut(i, j, s) += v as u64;
            }
        }
        let count = analogs.len() as f64;
        DemandSample::new(sum.map(|v| (v as f64 / count).round() as u32))
    }
}

impl GenerativeModel for AnalogModel {
    fn sample(&self, ctx: &ForecastContext<'_>, horizon: usize, count: usize, seed: u64) -> Result<Vec<DemandSample>> {
        let analogs = self.analogs(ctx);
        let binned: Vec<DemandSample> = analogs
            .iter()
            .map(|&d| self.days[d].bin(ctx.n, ctx.start_s, ctx.dt_s, horizon))
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok((0..count)
            .map(|_| binned[rng.random_range(0..binned.len())].clone())
            .collect())
    }
}

/// Point forecast of an [`AnalogModel`], repeated `count` times.
#[derive(Clone, Debug)]
pub struct AnalogMeanModel(pub AnalogModel);

impl GenerativeModel for AnalogMeanModel {
    fn sample(&self, ctx: &ForecastContext<'_>, horizon: usize, count: usize, _seed: u64) -> Result<Vec<DemandSample>> {
        Ok(vec![self.0.point_forecast(ctx, horizon); count])
    }
}

/// The realized future, repeated `count` times.
#[derive(Clone, Debug)]
pub struct PerfectModel {
    future: DemandTrace,
}

impl PerfectModel {
    pub fn new(future: DemandTrace) -> Self {
        PerfectModel { future }
    }
}

impl GenerativeModel for PerfectModel {
    fn sample(&self, ctx: &ForecastContext<'_>, horizon: usize, count: usize, _seed: u64) -> Result<Vec<DemandSample>> {
        let end = ctx.start_s + ctx.dt_s as u64 * horizon as u64;
        if end > self.future.span_s() {
            return Err(Error::Range(format!(
                "forecast window ends at {end}s but the trace covers only {}s",
                self.future.span_s()
            )));
        }
        let truth = self.future.bin(ctx.n, ctx.start_s, ctx.dt_s, horizon);
        Ok(vec![truth; count])
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
struct SampleRow {
    k: usize,
    i: usize,
    j: usize,
    t: usize,
    count: u32,
}

/// Samples produced elsewhere, read from `k,i,j,t,count` CSV files (`t`
/// 1-based, absent rows are zero). A directory of files named
/// `<start_s>.csv` provides one sample set per forecast window.
#[derive(Clone, Debug)]
pub struct SampleFileModel {
    sets: BTreeMap<u64, Vec<DemandSample>>,
    keyed: bool,
}

impl SampleFileModel {
    pub fn from_file(path: impl AsRef<Path>, n: usize) -> Result<Self> {
        let set = read_sample_file(path.as_ref(), n)?;
        Ok(SampleFileModel {
            sets: BTreeMap::from([(0, set)]),
            keyed: false,
        })
    }

    pub fn from_dir(dir: impl AsRef<Path>, n: usize) -> Result<Self> {
        let mut sets = BTreeMap::new();
        for entry in std::fs::read_dir(dir)? {
            let path = entry?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("csv") {
                continue;
            }
            let Some(start) = path.file_stem().and_then(|s| s.to_str()).and_then(|s| s.parse::<u64>().ok()) else {
                continue;
            };
            sets.insert(start, read_sample_file(&path, n)?);
        }
        Ok(SampleFileModel { sets, keyed: true })
    }
}

fn read_sample_file(path: &Path, n: usize) -> Result<Vec<DemandSample>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let rows = rdr.deserialize().collect::<std::result::Result<Vec<SampleRow>, _>>()?;
    let k = rows.iter().map(|r| r.k + 1).max().unwrap_or(0);
    let horizon = rows.iter().map(|r| r.t).max().unwrap_or(0);
    let mut out = vec![DemandSample::zeros(n, horizon); k];
    for r in rows {
        if r.i >= n || r.j >= n || r.t == 0 {
            return Err(Error::Ingestion(format!("{}: bad sample row {r:?}", path.display())));
        }
        *out[r.k].tensor_mut().get_mut(r.i, r.j, r.t - 1) += r.count;
    }
    Ok(out)
}

/// Writes samples in the format read by [`SampleFileModel`], skipping zeros.
/// A zero row at the last step of station pair (0, 0) is kept so the reader
/// recovers every sample and the full horizon.
pub fn write_samples_csv(path: impl AsRef<Path>, samples: &[DemandSample]) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    wtr.write_record(["k", "i", "j", "t", "count"])?;
    for (k, s) in samples.iter().enumerate() {
        for ((i, j, step), count) in s.tensor().iter_indexed() {
            if count > 0 {
                wtr.serialize(SampleRow { k, i, j, t: step + 1, count })?;
            }
        }
        let h = s.horizon();
        if h > 0 && s.n() > 0 && s.get(0, 0, h - 1) == 0 {
            wtr.serialize(SampleRow { k, i: 0, j: 0, t: h, count: 0 })?;
        }
    }
    wtr.flush()?;
    Ok(())
}

impl GenerativeModel for SampleFileModel {
    fn sample(&self, ctx: &ForecastContext<'_>, horizon: usize, count: usize, _seed: u64) -> Result<Vec<DemandSample>> {
        let key = if self.keyed { ctx.start_s } else { 0 };
        let set = self
            .sets
            .get(&key)
            .ok_or_else(|| Error::Range(format!("no sample file for window starting at {key}s")))?;
        if count > set.len() {
            return Err(Error::Range(format!("{count} samples requested, file holds {}", set.len())));
        }
        set[..count]
            .iter()
            .map(|s| {
                if s.n() != ctx.n {
                    return Err(Error::Range(format!("sample file covers {} stations, need {}", s.n(), ctx.n)));
                }
                // steps absent from the file carry no requests
                Ok(DemandSample::new(Tensor3::from_fn(ctx.n, horizon, |i, j, t| {
                    if t < s.horizon() {
                        s.get(i, j, t)
                    } else {
                        0
                    }
                })))
            })
            .collect()
    }
}

/// Moment-based sub-exponential parameters: the sample variance and
/// `b = max(1, max |x - mean| / ln(count))`.
pub fn estimate_subexponential(samples: &[f64]) -> Result<(f64, f64)> {
    let count = samples.len();
    if count < 30 {
        return Err(Error::Argument(format!("need at least 30 samples, got {count}")));
    }
    let mean = samples.iter().sum::<f64>() / count as f64;
    let sigma2 = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (count - 1) as f64;
    let spread = samples.iter().map(|x| (x - mean).abs()).fold(0.0, f64::max);
    Ok((sigma2, (spread / (count as f64).ln()).max(1.0)))
}

/// One arrival regime: total request rate and where trips start and end.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Regime {
    pub weight: f64,
    pub rate_per_s: f64,
    /// Relative origin popularity; uniform when empty.
    #[serde(default)]
    pub origin_weights: Vec<f64>,
    /// Relative destination popularity; uniform when empty.
    #[serde(default)]
    pub dest_weights: Vec<f64>,
}

/// Arrival intensity over time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum RateProfile {
    /// Homogeneous Poisson arrivals with uniform origins and destinations.
    Uniform { rate_per_s: f64 },
    /// Every block of `block_s` seconds draws one regime at random.
    Mixture { block_s: u64, regimes: Vec<Regime> },
}

/// Samples a trace from a piecewise-homogeneous Poisson process. Trips never
/// start and end at the same station when `n > 1`.
pub fn generate_trace(n: usize, duration_s: u64, profile: &RateProfile, seed: u64) -> Result<DemandTrace> {
    if n == 0 {
        return Err(Error::Argument("need at least one station".into()));
    }
    let uniform = Regime {
        weight: 1.0,
        rate_per_s: 0.0,
        origin_weights: Vec::new(),
        dest_weights: Vec::new(),
    };
    let (block_s, regimes) = match profile {
        RateProfile::Uniform { rate_per_s } => (duration_s.max(1), vec![Regime { rate_per_s: *rate_per_s, ..uniform }]),
        RateProfile::Mixture { block_s, regimes } => (*block_s, regimes.clone()),
    };
    if block_s == 0 || regimes.is_empty() {
        return Err(Error::Argument("mixture needs a positive block length and at least one regime".into()));
    }
    for r in &regimes {
        if !(r.rate_per_s.is_finite() && r.rate_per_s >= 0.0 && r.weight.is_finite() && r.weight >= 0.0) {
            return Err(Error::Argument("regime rates and weights must be finite and non-negative".into()));
        }
        for w in [&r.origin_weights, &r.dest_weights] {
            if !w.is_empty() && w.len() != n {
                return Err(Error::Shape(format!("station weights need {n} entries, got {}", w.len())));
            }
        }
    }
    let pick_regime = WeightedIndex::new(regimes.iter().map(|r| r.weight))
        .map_err(|e| Error::Argument(format!("regime weights: {e}")))?;
    let station_dist = |w: &Vec<f64>| -> Result<WeightedIndex<f64>> {
        let w = if w.is_empty() { vec![1.0; n] } else { w.clone() };
        WeightedIndex::new(w).map_err(|e| Error::Argument(format!("station weights: {e}")))
    };
    let mut origin_dists = Vec::new();
    let mut dest_weights = Vec::new();
    for r in &regimes {
        origin_dists.push(station_dist(&r.origin_weights)?);
        dest_weights.push(if r.dest_weights.is_empty() { vec![1.0; n] } else { r.dest_weights.clone() });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::new();
    let mut block_start = 0;
    while block_start < duration_s {
        let len = block_s.min(duration_s - block_start);
        let r = pick_regime.sample(&mut rng);
        let mean = regimes[r].rate_per_s * len as f64;
        let arrivals = if mean > 0.0 {
            Poisson::new(mean).expect("positive mean").sample(&mut rng) as usize
        } else {
            0
        };
        let mut times: Vec<u64> = (0..arrivals).map(|_| block_start + rng.random_range(0..len)).collect();
        times.sort_unstable();
        for t in times {
            let origin = origin_dists[r].sample(&mut rng);
            let dest = if n == 1 {
                0
            } else {
                let mut w = dest_weights[r].clone();
                w[origin] = 0.0;
                match WeightedIndex::new(&w) {
                    Ok(d) => d.sample(&mut rng),
                    Err(_) => (origin + 1 + rng.random_range(0..n - 1)) % n,
                }
            };
            records.push(TripRecord { request_s: t, origin, dest });
        }
        block_start += len;
    }
    DemandTrace::new(records)?.with_span(duration_s.max(1))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trip(t: u64, o: usize, d: usize) -> TripRecord {
        TripRecord { request_s: t, origin: o, dest: d }
    }

    #[test]
    fn binning_uses_floor_plus_one() {
        let trace = DemandTrace::new(vec![trip(310, 0, 1)]).unwrap();
        let s = trace.bin(2, 0, 300, 3);
        assert_eq!(s.get(0, 1, 1), 1);
        assert_eq!(s.total(), 1);
    }

    #[test]
    fn out_of_order_trace_is_rejected() {
        let err = DemandTrace::new(vec![trip(5, 0, 1), trip(4, 1, 0)]).unwrap_err();
        assert!(matches!(err, Error::Ingestion(_)));
    }

    #[test]
    fn csv_round_trip() {
        let trace = DemandTrace::new(vec![trip(0, 0, 1), trip(7, 1, 0), trip(7, 1, 1)]).unwrap();
        let mut buf = Vec::new();
        trace.to_writer(&mut buf).unwrap();
        assert!(buf.starts_with(b"t,origin,dest\n0,0,1\n"));
        assert_eq!(DemandTrace::from_reader(&buf[..]).unwrap(), trace);
        assert!(DemandTrace::from_reader(&b"time,o,d\n1,0,1\n"[..]).is_err());
    }

    #[test]
    fn zero_mean_poisson_is_zero() {
        let model = PoissonModel::new(Tensor3::zeros(2, 3)).unwrap();
        let ctx = ForecastContext::new(2, 0, 300);
        let samples = model.sample(&ctx, 3, 5, 1).unwrap();
        assert!(samples.iter().all(|s| s.total() == 0));
        assert!(PoissonModel::new(Tensor3::filled(1, 1, -1.0)).is_err());
        assert!(model.sample(&ctx, 4, 1, 1).is_err());
    }

    #[test]
    fn single_day_bootstrap_repeats_it() {
        let day = DemandTrace::new(vec![trip(10, 0, 1), trip(400, 1, 0)]).unwrap();
        let model = BootstrapModel::new(vec![day.clone()]).unwrap();
        let ctx = ForecastContext::new(2, 0, 300);
        for s in model.sample(&ctx, 2, 4, 9).unwrap() {
            assert_eq!(s, day.bin(2, 0, 300, 2));
        }
        assert!(BootstrapModel::new(vec![]).is_err());
    }

    #[test]
    fn perfect_model_needs_coverage() {
        let trace = DemandTrace::new(vec![trip(10, 0, 1)]).unwrap().with_span(600).unwrap();
        let model = PerfectModel::new(trace);
        let ctx = ForecastContext::new(2, 0, 300);
        let samples = model.sample(&ctx, 2, 3, 0).unwrap();
        assert!(samples.windows(2).all(|w| w[0] == w[1]));
        assert!(matches!(model.sample(&ctx, 3, 1, 0), Err(Error::Range(_))));
    }

    #[test]
    fn mean_model_rounds() {
        let a = DemandTrace::new(vec![trip(0, 0, 1), trip(1, 0, 1)]).unwrap();
        let b = DemandTrace::new(vec![trip(0, 0, 1)]).unwrap();
        let c = DemandTrace::new(vec![]).unwrap();
        let model = HistoricalMeanModel::new(vec![a, b, c]).unwrap();
        let s = model.sample(&ForecastContext::new(2, 0, 60), 1, 2, 0).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].get(0, 1, 0), 1);
    }

    #[test]
    fn subexponential_estimates() {
        assert_eq!(estimate_subexponential(&[2.5; 40]).unwrap(), (0.0, 1.0));
        assert!(estimate_subexponential(&[1.0; 29]).is_err());
        let xs: Vec<f64> = (0..100).map(|k| (k % 7) as f64).collect();
        let doubled: Vec<f64> = xs.iter().map(|x| 2.0 * x).collect();
        let (s1, _) = estimate_subexponential(&xs).unwrap();
        let (s2, _) = estimate_subexponential(&doubled).unwrap();
        assert!((s2 - 4.0 * s1).abs() < 1e-9);
    }

    #[test]
    fn zero_rate_trace_is_empty() {
        let t = generate_trace(3, 3600, &RateProfile::Uniform { rate_per_s: 0.0 }, 1).unwrap();
        assert!(t.is_empty());
        assert_eq!(t.span_s(), 3600);
    }

    #[test]
    fn generated_trips_leave_their_origin() {
        let t = generate_trace(4, 3600, &RateProfile::Uniform { rate_per_s: 0.1 }, 5).unwrap();
        assert!(t.records().iter().all(|r| r.origin != r.dest && r.origin < 4 && r.dest < 4));
        assert!(t.records().iter().all(|r| r.request_s < 3600));
    }
}
