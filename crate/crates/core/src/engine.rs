//! Discrete-time Markov simulator of the heterogeneous order-splitting market.
//!
//! Each step selects one trader with probability equal to its intensity. The
//! selected trader submits a child order carrying the sign of its current
//! metaorder; if that was the last child order, a fresh metaorder (new length,
//! new random sign) replaces it for future executions.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::alias::AliasTable;
use crate::distributions::MetaorderLaw;
use crate::error::{Error, Result};

pub type SimRng = Xoshiro256PlusPlus;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraderSpec {
    pub id: usize,
    pub intensity: f64,
    pub law: MetaorderLaw,
}

/// The parameter set of a market: one intensity and one law per trader.
#[derive(Debug, Clone, Serialize)]
pub struct Population {
    traders: Vec<TraderSpec>,
    /// Factor applied to the supplied intensities to make them sum to one.
    rescale_factor: f64,
}

impl Population {
    /// Builds a population from `(intensity, law)` pairs, rescaling the
    /// intensities to sum to exactly one. Zero intensities are allowed
    /// (such a trader never acts); negative or non-finite ones are not.
    pub fn new(members: Vec<(f64, MetaorderLaw)>) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::InvalidPopulation("population has no traders".into()));
        }
        for (i, (l, _)) in members.iter().enumerate() {
            if !(l.is_finite() && *l >= 0.0) {
                return Err(Error::InvalidPopulation(format!("trader {i} has invalid intensity {l}")));
            }
        }
        let total: f64 = members.iter().map(|m| m.0).sum();
        if !(total > 0.0) {
            return Err(Error::InvalidPopulation("intensities sum to zero".into()));
        }
        let rescale_factor = 1.0 / total;
        let traders = members
            .into_iter()
            .enumerate()
            .map(|(id, (intensity, law))| TraderSpec {
                id,
                intensity: intensity * rescale_factor,
                law,
            })
            .collect();
        Ok(Population {
            traders,
            rescale_factor,
        })
    }

    /// `count` identical traders with intensity `1/count` each.
    pub fn homogeneous(count: usize, law: MetaorderLaw) -> Result<Self> {
        Population::new(vec![(1.0, law); count])
    }

    pub fn traders(&self) -> &[TraderSpec] {
        &self.traders
    }

    pub fn len(&self) -> usize {
        self.traders.len()
    }

    pub fn is_empty(&self) -> bool {
        self.traders.is_empty()
    }

    pub fn intensities(&self) -> Vec<f64> {
        self.traders.iter().map(|t| t.intensity).collect()
    }

    pub fn rescale_factor(&self) -> f64 {
        self.rescale_factor
    }

    /// `10 * max_i 1/lambda_i` over active traders, rounded up.
    pub fn default_burn_in(&self) -> u64 {
        let min = self
            .traders
            .iter()
            .map(|t| t.intensity)
            .filter(|&l| l > 0.0)
            .fold(f64::INFINITY, f64::min);
        (10.0 / min).ceil() as u64
    }

    /// SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("population serialises");
        hex::encode(Sha256::digest(json))
    }
}

/// O(1) trader selection with probabilities equal to the intensities.
#[derive(Debug, Clone)]
pub struct TraderSampler {
    table: AliasTable,
}

impl TraderSampler {
    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.table.sample(rng)
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.table.implied_distribution()
    }
}

pub fn build_sampler(population: &Population) -> TraderSampler {
    TraderSampler {
        table: AliasTable::new(&population.intensities()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    /// Remaining lengths from the stationary law, symmetric signs.
    #[default]
    Stationary,
    /// Remaining lengths drawn as fresh metaorders.
    FreshDraw,
}

/// The phase-space point: market sign and each trader's `(sign, remaining)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MarketState {
    pub market_sign: i8,
    pub signs: Vec<i8>,
    pub remaining: Vec<u64>,
}

#[inline]
fn random_sign<R: Rng + ?Sized>(rng: &mut R) -> i8 {
    if rng.random::<bool>() {
        1
    } else {
        -1
    }
}

pub fn init_state<R: Rng + ?Sized>(population: &Population, mode: InitMode, rng: &mut R) -> Result<MarketState> {
    let n = population.len();
    let mut signs = Vec::with_capacity(n);
    let mut remaining = Vec::with_capacity(n);
    for t in population.traders() {
        let r = match mode {
            InitMode::Stationary => t.law.sample_stationary_remaining(rng)?,
            InitMode::FreshDraw => t.law.sample_length(rng),
        };
        remaining.push(r);
        signs.push(random_sign(rng));
    }
    Ok(MarketState {
        market_sign: random_sign(rng),
        signs,
        remaining,
    })
}

/// Receives the simulation stream without the simulator storing it.
pub trait Observer {
    /// A contiguous chunk of emitted signs, in order.
    fn on_signs(&mut self, _signs: &[i8]) {}
    /// A metaorder of the given trader completed with its full length known.
    fn on_metaorder(&mut self, _trader: usize, _length: u64) {}
}

impl Observer for () {}

impl<A: Observer, B: Observer> Observer for (A, B) {
    fn on_signs(&mut self, signs: &[i8]) {
        self.0.on_signs(signs);
        self.1.on_signs(signs);
    }
    fn on_metaorder(&mut self, trader: usize, length: u64) {
        self.0.on_metaorder(trader, length);
        self.1.on_metaorder(trader, length);
    }
}

impl<O: Observer + ?Sized> Observer for &mut O {
    fn on_signs(&mut self, signs: &[i8]) {
        (**self).on_signs(signs);
    }
    fn on_metaorder(&mut self, trader: usize, length: u64) {
        (**self).on_metaorder(trader, length);
    }
}

/// Stores everything; backs [`simulate`].
#[derive(Debug, Default)]
pub struct Recorder {
    pub signs: Vec<i8>,
    pub metaorder_log: Vec<Vec<u64>>,
}

impl Observer for Recorder {
    fn on_signs(&mut self, signs: &[i8]) {
        self.signs.extend_from_slice(signs);
    }
    fn on_metaorder(&mut self, trader: usize, length: u64) {
        if self.metaorder_log.len() <= trader {
            self.metaorder_log.resize(trader + 1, Vec::new());
        }
        self.metaorder_log[trader].push(length);
    }
}

const CHUNK: usize = 1 << 16;

/// Per-trader execution accounting since observation started.
///
/// `selections = sum(logged lengths) + censored + open` holds exactly at all times.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bookkeeping {
    pub selections: Vec<u64>,
    /// Executions belonging to metaorders whose start was not observed.
    pub censored: Vec<u64>,
    /// Executions of the metaorder currently in progress.
    pub open: Vec<u64>,
}

pub struct Simulator<'p> {
    population: &'p Population,
    sampler: TraderSampler,
    state: MarketState,
    rng: SimRng,
    /// Length of each trader's current metaorder, or 0 when its start predates observation.
    current_length: Vec<u64>,
    books: Bookkeeping,
    steps: u64,
}

impl<'p> Simulator<'p> {
    pub fn new(population: &'p Population, seed: u64, mode: InitMode) -> Result<Self> {
        let mut rng = SimRng::seed_from_u64(seed);
        let state = init_state(population, mode, &mut rng)?;
        let n = population.len();
        let current_length = match mode {
            InitMode::Stationary => vec![0; n],
            InitMode::FreshDraw => state.remaining.clone(),
        };
        Ok(Simulator {
            population,
            sampler: build_sampler(population),
            state,
            rng,
            current_length,
            books: Bookkeeping {
                selections: vec![0; n],
                censored: vec![0; n],
                open: vec![0; n],
            },
            steps: 0,
        })
    }

    pub fn state(&self) -> &MarketState {
        &self.state
    }

    pub fn bookkeeping(&self) -> &Bookkeeping {
        &self.books
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// One market order. Returns `(sign, trader)` and, if the trader's
    /// metaorder just finished, its length (`Some(0)` if censored).
    #[inline]
    pub fn step(&mut self) -> (i8, usize, Option<u64>) {
        let i = self.sampler.sample(&mut self.rng);
        let sign = self.state.signs[i];
        self.state.market_sign = sign;
        self.steps += 1;
        self.books.selections[i] += 1;
        self.books.open[i] += 1;
        let r = &mut self.state.remaining[i];
        if *r > 1 {
            *r -= 1;
            return (sign, i, None);
        }
        let done = self.books.open[i];
        let logged = self.current_length[i];
        self.books.open[i] = 0;
        if logged == 0 {
            self.books.censored[i] += done;
        }
        let law = &self.population.traders[i].law;
        let next = law.sample_length(&mut self.rng);
        self.state.remaining[i] = next;
        self.current_length[i] = next;
        self.state.signs[i] = random_sign(&mut self.rng);
        (sign, i, Some(logged))
    }

    /// Advances without observing, then treats every metaorder in progress as censored.
    pub fn burn_in(&mut self, steps: u64) {
        for _ in 0..steps {
            self.step();
        }
        let n = self.population.len();
        self.current_length.iter_mut().for_each(|c| *c = 0);
        self.books = Bookkeeping {
            selections: vec![0; n],
            censored: vec![0; n],
            open: vec![0; n],
        };
        self.steps = 0;
    }

    pub fn run<O: Observer + ?Sized>(&mut self, steps: u64, observer: &mut O) {
        let mut buf = Vec::with_capacity(CHUNK.min(steps as usize));
        for _ in 0..steps {
            let (sign, i, done) = self.step();
            buf.push(sign);
            if let Some(len) = done {
                if len > 0 {
                    observer.on_metaorder(i, len);
                }
            }
            if buf.len() == CHUNK {
                observer.on_signs(&buf);
                buf.clear();
            }
        }
        if !buf.is_empty() {
            observer.on_signs(&buf);
        }
    }
}

/// Options beyond population, length and seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SimOptions {
    pub init: InitMode,
    /// Unobserved steps before recording.
    pub burn_in: u64,
}

impl SimOptions {
    pub fn new(init: InitMode) -> Self {
        SimOptions { init, burn_in: 0 }
    }

    /// Default policy: burn-in of `10 * max(1/lambda)` for fresh-draw starts only.
    pub fn default_for(population: &Population, init: InitMode) -> Self {
        let burn_in = match init {
            InitMode::Stationary => 0,
            InitMode::FreshDraw => population.default_burn_in(),
        };
        SimOptions { init, burn_in }
    }
}

/// Digest of everything that determines a run apart from the seed.
pub fn config_digest(population: &Population, steps: u64, options: &SimOptions) -> String {
    let json = serde_json::json!({
        "population": population,
        "steps": steps,
        "options": options,
    });
    hex::encode(Sha256::digest(json.to_string()))
}

/// Runs a simulation with an arbitrary observer and returns the bookkeeping.
pub fn run_observed<O: Observer + ?Sized>(
    population: &Population,
    steps: u64,
    seed: u64,
    options: &SimOptions,
    observer: &mut O,
) -> Result<Bookkeeping> {
    let mut sim = Simulator::new(population, seed, options.init)?;
    if options.burn_in > 0 {
        sim.burn_in(options.burn_in);
    }
    sim.run(steps, observer);
    Ok(sim.books)
}

#[derive(Debug, Clone)]
pub struct SimulationOutput {
    pub signs: Vec<i8>,
    /// Completed metaorders per trader (censored ones excluded).
    pub metaorder_log: Vec<Vec<u64>>,
    pub selection_counts: Vec<u64>,
    pub censored_executions: Vec<u64>,
    pub open_executions: Vec<u64>,
    pub seed: u64,
    pub config_digest: String,
}

impl SimulationOutput {
    /// SHA-256 over the sign series, metaorder log and configuration digest.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.config_digest.as_bytes());
        h.update(self.seed.to_le_bytes());
        h.update(self.signs.iter().map(|&s| s as u8).collect::<Vec<_>>());
        for (i, log) in self.metaorder_log.iter().enumerate() {
            h.update((i as u64).to_le_bytes());
            for l in log {
                h.update(l.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

pub fn simulate(population: &Population, steps: u64, seed: u64, init: InitMode) -> Result<SimulationOutput> {
    simulate_with(population, steps, seed, &SimOptions::new(init))
}

pub fn simulate_with(population: &Population, steps: u64, seed: u64, options: &SimOptions) -> Result<SimulationOutput> {
    if steps == 0 {
        return Err(Error::domain("simulation needs at least one step"));
    }
    let mut rec = Recorder {
        signs: Vec::with_capacity(steps as usize),
        metaorder_log: vec![Vec::new(); population.len()],
    };
    let books = run_observed(population, steps, seed, options, &mut rec)?;
    Ok(SimulationOutput {
        signs: rec.signs,
        metaorder_log: rec.metaorder_log,
        selection_counts: books.selections,
        censored_executions: books.censored,
        open_executions: books.open,
        seed,
        config_digest: config_digest(population, steps, options),
    })
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of the `index`-th replica of a run with base seed `base`.
pub fn replica_seed(base: u64, index: u64) -> u64 {
    splitmix64(base.wrapping_add(index))
}

/// Metadata stored next to a raw sign file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignSidecar {
    pub steps: u64,
    pub seed: u64,
    pub config_digest: String,
    pub encoding: String,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".json");
    PathBuf::from(name)
}

/// Writes signs as raw int8 (+1/-1) plus a `<path>.json` sidecar.
pub fn write_sign_binary(path: &Path, signs: &[i8], seed: u64, config_digest: &str) -> Result<()> {
    let bytes: Vec<u8> = signs.iter().map(|&s| s as u8).collect();
    std::fs::write(path, bytes)?;
    let side = SignSidecar {
        steps: signs.len() as u64,
        seed,
        config_digest: config_digest.to_string(),
        encoding: "int8".to_string(),
    };
    std::fs::write(sidecar_path(path), serde_json::to_string_pretty(&side)?)?;
    Ok(())
}

pub fn read_sign_binary(path: &Path) -> Result<(Vec<i8>, SignSidecar)> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    let side: SignSidecar = serde_json::from_slice(&std::fs::read(sidecar_path(path))?)?;
    let signs: Vec<i8> = bytes.into_iter().map(|b| b as i8).collect();
    if signs.len() as u64 != side.steps || signs.iter().any(|&s| s != 1 && s != -1) {
        return Err(Error::Numerical(format!("{} is not a valid sign file", path.display())));
    }
    Ok((signs, side))
}

/// Metaorder log as CSV `trader_id,length`.
pub fn write_metaorder_csv(path: &Path, log: &[Vec<u64>]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "trader_id,length")?;
    for (i, lens) in log.iter().enumerate() {
        for l in lens {
            writeln!(w, "{i},{l}")?;
        }
    }
    w.flush()?;
    Ok(())
}
