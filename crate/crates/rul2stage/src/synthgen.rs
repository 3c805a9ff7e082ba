//! Synthetic degradation trajectories for desk-scale training and testing.
//!
//! Cells follow the 80%-of-nominal end-of-life convention: the noiseless
//! discharge-capacity trend starts at the nominal capacity on cycle 1 and
//! reaches exactly 0.8x nominal on the EOL cycle. Fade is linear up to a
//! knee, then a power law takes over on top of the linear term, so the
//! per-cycle fade strictly accelerates after the knee.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dataio::{CellHistory, CycleRecord};
use crate::error::{Error, Result};

/// Fraction of nominal capacity that defines end of life.
pub const EOL_CAPACITY_FRACTION: f64 = 0.8;

/// Shape and noise parameters for one synthetic cell.
#[derive(Debug, Clone, PartialEq)]
pub struct DegradationParams {
    /// Cycle life; must be >= 60 so the cell admits a few 50-cycle windows.
    pub eol: usize,
    /// Fresh-cell discharge capacity in Ah.
    pub nominal_capacity: f64,
    /// Fraction of life at which fade accelerates, in (0, 1).
    pub knee_fraction: f64,
    /// Linear fade rate before the knee, as fraction of nominal per cycle.
    pub pre_knee_fade_per_cycle: f64,
    /// Power-law exponent of the post-knee acceleration, >= 1.
    pub post_knee_exponent: f64,
    /// Gaussian noise on capacity channels, Ah (clipped at 3 sigma).
    pub capacity_noise_std: f64,
    /// Fresh-cell internal resistance, Ohm.
    pub resistance_initial: f64,
    /// Relative resistance growth over the whole life, >= 0.
    pub resistance_growth: f64,
    /// Chamber temperature, deg C.
    pub temp_base: f64,
    /// Half-width between temp_min/temp_max and temp_avg, deg C, >= 0.
    pub temp_spread: f64,
    /// Fresh-cell charge duration, minutes.
    pub charge_time_base: f64,
    /// Relative charge-time drift over the whole life.
    pub charge_time_drift: f64,
    pub rng_seed: u64,
}

impl Default for DegradationParams {
    fn default() -> Self {
        DegradationParams {
            eol: 500,
            nominal_capacity: 1.1,
            knee_fraction: 0.7,
            pre_knee_fade_per_cycle: 0.00008,
            post_knee_exponent: 3.0,
            capacity_noise_std: 0.002,
            resistance_initial: 0.016,
            resistance_growth: 0.15,
            temp_base: 30.0,
            temp_spread: 1.5,
            charge_time_base: 12.0,
            charge_time_drift: 0.2,
            rng_seed: 0,
        }
    }
}

impl DegradationParams {
    pub fn validate(&self) -> Result<()> {
        if self.eol < 60 {
            return Err(Error::Config(format!(
                "eol must be >= 60 cycles, got {}",
                self.eol
            )));
        }
        if !(self.nominal_capacity > 0.0) {
            return Err(Error::Config("nominal_capacity must be > 0".into()));
        }
        if !(self.knee_fraction > 0.0 && self.knee_fraction < 1.0) {
            return Err(Error::Config(format!(
                "knee_fraction must be in (0, 1), got {}",
                self.knee_fraction
            )));
        }
        if self.pre_knee_fade_per_cycle < 0.0 {
            return Err(Error::Config("pre_knee_fade_per_cycle must be >= 0".into()));
        }
        if self.post_knee_exponent < 1.0 {
            return Err(Error::Config(format!(
                "post_knee_exponent must be >= 1, got {}",
                self.post_knee_exponent
            )));
        }
        for (name, v) in [
            ("capacity_noise_std", self.capacity_noise_std),
            ("resistance_growth", self.resistance_growth),
            ("temp_spread", self.temp_spread),
        ] {
            if v < 0.0 {
                return Err(Error::Config(format!("{name} must be >= 0, got {v}")));
            }
        }
        if !(self.resistance_initial > 0.0) {
            return Err(Error::Config("resistance_initial must be > 0".into()));
        }
        if !(self.charge_time_base > 0.0) {
            return Err(Error::Config("charge_time_base must be > 0".into()));
        }
        Ok(())
    }

    fn knee_cycle(&self) -> usize {
        // clamp into [1, eol-1] so both regimes are non-empty
        let k = (self.knee_fraction * self.eol as f64).round() as usize;
        k.clamp(1, self.eol - 1)
    }

    /// Noiseless discharge-capacity trend at a 1-based cycle. Exact at the
    /// endpoints: `trend(1) = nominal`, `trend(eol) = 0.8 * nominal`.
    pub fn capacity_trend(&self, cycle: usize) -> f64 {
        let total_fade = (1.0 - EOL_CAPACITY_FRACTION) * self.nominal_capacity;
        let linear_rate = self.pre_knee_fade_per_cycle * self.nominal_capacity;
        let knee = self.knee_cycle();
        let fade = if cycle <= knee {
            linear_rate * (cycle - 1) as f64
        } else {
            let linear_total = linear_rate * (self.eol - 1) as f64;
            let excess = total_fade - linear_total;
            let u = (cycle - knee) as f64 / (self.eol - knee) as f64;
            linear_rate * (cycle - 1) as f64 + excess * u.powf(self.post_knee_exponent)
        };
        self.nominal_capacity - fade
    }

    /// Noiseless internal-resistance trend (non-decreasing).
    pub fn resistance_trend(&self, cycle: usize) -> f64 {
        let x = (cycle - 1) as f64 / (self.eol - 1) as f64;
        self.resistance_initial * (1.0 + self.resistance_growth * x)
    }
}

/// Per-parameter sampling ranges for a fleet. `lo == hi` pins a value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamRange {
    pub lo: f64,
    pub hi: f64,
}

impl ParamRange {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite()) || lo > hi {
            return Err(Error::Config(format!("invalid range {lo}..{hi}")));
        }
        Ok(ParamRange { lo, hi })
    }

    pub fn fixed(v: f64) -> Self {
        ParamRange { lo: v, hi: v }
    }

    fn sample(&self, rng: &mut impl Rng) -> f64 {
        if self.lo == self.hi {
            self.lo
        } else {
            rng.gen_range(self.lo..=self.hi)
        }
    }
}

/// Fleet description: how many cells and the parameter ranges they draw from.
#[derive(Debug, Clone, PartialEq)]
pub struct FleetSpec {
    pub n_cells: usize,
    pub eol: ParamRange,
    pub nominal_capacity: ParamRange,
    pub knee_fraction: ParamRange,
    pub pre_knee_fade_per_cycle: ParamRange,
    pub post_knee_exponent: ParamRange,
    pub capacity_noise_std: ParamRange,
    pub resistance_initial: ParamRange,
    pub resistance_growth: ParamRange,
    pub temp_base: ParamRange,
    pub temp_spread: ParamRange,
    pub charge_time_base: ParamRange,
    pub charge_time_drift: ParamRange,
    pub master_seed: u64,
}

impl FleetSpec {
    /// A plausible small fleet spanning the requested EOL range.
    pub fn desk_default(n_cells: usize, eol_lo: usize, eol_hi: usize, master_seed: u64) -> Self {
        FleetSpec {
            n_cells,
            eol: ParamRange {
                lo: eol_lo as f64,
                hi: eol_hi as f64,
            },
            nominal_capacity: ParamRange { lo: 1.05, hi: 1.15 },
            knee_fraction: ParamRange { lo: 0.55, hi: 0.8 },
            pre_knee_fade_per_cycle: ParamRange {
                lo: 0.00002,
                hi: 0.00010,
            },
            post_knee_exponent: ParamRange { lo: 2.0, hi: 4.0 },
            capacity_noise_std: ParamRange {
                lo: 0.001,
                hi: 0.004,
            },
            resistance_initial: ParamRange {
                lo: 0.014,
                hi: 0.020,
            },
            resistance_growth: ParamRange { lo: 0.05, hi: 0.25 },
            temp_base: ParamRange { lo: 29.0, hi: 31.0 },
            temp_spread: ParamRange { lo: 1.0, hi: 2.5 },
            charge_time_base: ParamRange { lo: 10.0, hi: 14.0 },
            charge_time_drift: ParamRange { lo: 0.05, hi: 0.3 },
            master_seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.eol.lo < 60.0 || self.eol.hi > 3000.0 {
            return Err(Error::Config(format!(
                "eol range must lie within [60, 3000], got {}..{}",
                self.eol.lo, self.eol.hi
            )));
        }
        for (name, r) in [
            ("eol", &self.eol),
            ("nominal_capacity", &self.nominal_capacity),
            ("knee_fraction", &self.knee_fraction),
            ("pre_knee_fade_per_cycle", &self.pre_knee_fade_per_cycle),
            ("post_knee_exponent", &self.post_knee_exponent),
            ("capacity_noise_std", &self.capacity_noise_std),
            ("resistance_initial", &self.resistance_initial),
            ("resistance_growth", &self.resistance_growth),
            ("temp_base", &self.temp_base),
            ("temp_spread", &self.temp_spread),
            ("charge_time_base", &self.charge_time_base),
            ("charge_time_drift", &self.charge_time_drift),
        ] {
            if r.lo > r.hi || !r.lo.is_finite() || !r.hi.is_finite() {
                return Err(Error::Config(format!("empty or non-finite range for {name}")));
            }
        }
        Ok(())
    }

    fn sample_params(&self, rng: &mut impl Rng) -> DegradationParams {
        DegradationParams {
            eol: self.eol.sample(rng).round() as usize,
            nominal_capacity: self.nominal_capacity.sample(rng),
            knee_fraction: self.knee_fraction.sample(rng),
            pre_knee_fade_per_cycle: self.pre_knee_fade_per_cycle.sample(rng),
            post_knee_exponent: self.post_knee_exponent.sample(rng),
            capacity_noise_std: self.capacity_noise_std.sample(rng),
            resistance_initial: self.resistance_initial.sample(rng),
            resistance_growth: self.resistance_growth.sample(rng),
            temp_base: self.temp_base.sample(rng),
            temp_spread: self.temp_spread.sample(rng),
            charge_time_base: self.charge_time_base.sample(rng),
            charge_time_drift: self.charge_time_drift.sample(rng),
            rng_seed: rng.gen(),
        }
    }
}

/// Gaussian noise clipped at +/- 3 sigma. Returns 0 for sigma = 0.
fn clipped_noise(rng: &mut impl Rng, std: f64) -> f64 {
    if std == 0.0 {
        return 0.0;
    }
    let n = Normal::new(0.0, std).expect("std validated non-negative");
    n.sample(rng).clamp(-3.0 * std, 3.0 * std)
}

/// Generates one cell. Fails if the fade parameters cannot reach the 80%
/// endpoint with a strictly accelerating post-knee regime.
pub fn generate_cell(params: &DegradationParams, cell_id: &str) -> Result<CellHistory> {
    params.validate()?;
    let total_fade = (1.0 - EOL_CAPACITY_FRACTION) * params.nominal_capacity;
    let linear_total =
        params.pre_knee_fade_per_cycle * params.nominal_capacity * (params.eol - 1) as f64;
    if linear_total >= total_fade {
        return Err(Error::Config(format!(
            "pre-knee fade alone consumes the whole 20% budget before EOL \
             (linear total {linear_total:.4} Ah >= {total_fade:.4} Ah); \
             the trend cannot reach the 80% endpoint monotonically with a knee"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(params.rng_seed);
    let mut records = Vec::with_capacity(params.eol);
    for cycle in 1..=params.eol {
        let cap_trend = params.capacity_trend(cycle);
        let discharge = (cap_trend + clipped_noise(&mut rng, params.capacity_noise_std))
            .max(1e-3 * params.nominal_capacity);
        // charge capacity sits slightly above discharge (coulombic losses)
        let charge = (cap_trend * 1.01 + clipped_noise(&mut rng, params.capacity_noise_std))
            .max(1e-3 * params.nominal_capacity);
        let resistance = (params.resistance_trend(cycle)
            + clipped_noise(&mut rng, 0.01 * params.resistance_initial))
        .max(1e-6);
        let temp_avg = params.temp_base + clipped_noise(&mut rng, 0.3);
        let x = (cycle - 1) as f64 / (params.eol - 1) as f64;
        let charge_time = (params.charge_time_base * (1.0 + params.charge_time_drift * x)
            + clipped_noise(&mut rng, 0.02 * params.charge_time_base))
        .max(0.1);
        records.push(CycleRecord {
            cycle_index: cycle as u32,
            discharge_capacity: discharge,
            charge_capacity: charge,
            internal_resistance: resistance,
            temp_avg,
            temp_min: temp_avg - params.temp_spread,
            temp_max: temp_avg + params.temp_spread,
            charge_time,
        });
    }
    CellHistory::new(cell_id, records)
}

/// Generates a fleet along with the parameters each cell was drawn with.
/// Sampling is driven entirely by `master_seed`, so identical specs yield
/// identical fleets.
pub fn generate_fleet_with_params(
    spec: &FleetSpec,
) -> Result<Vec<(DegradationParams, CellHistory)>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.master_seed);
    let width = spec.n_cells.max(1).to_string().len().max(3);
    let mut fleet = Vec::with_capacity(spec.n_cells);
    for i in 0..spec.n_cells {
        let params = spec.sample_params(&mut rng);
        let cell = generate_cell(&params, &format!("cell_{:0width$}", i, width = width))?;
        fleet.push((params, cell));
    }
    Ok(fleet)
}

/// Generates just the cells of a fleet.
pub fn generate_fleet(spec: &FleetSpec) -> Result<Vec<CellHistory>> {
    Ok(generate_fleet_with_params(spec)?
        .into_iter()
        .map(|(_, cell)| cell)
        .collect())
}
