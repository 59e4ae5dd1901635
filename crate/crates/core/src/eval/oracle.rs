//! Exhaustive search over schedules on an energy grid, for cross-checking the
//! solver and the allocator on tiny instances.
//!
//! A schedule on the grid gives every EV a whole number of `step_kwh` units
//! per slot. The search runs a dynamic program over slots whose state is the
//! number of units each EV still needs, so every grid schedule is covered.
//! Cost depends on the state path only through the per-slot totals, and the
//! convenience of a slot depends only on the state at its start.

use rand::Rng;

use super::EvalError;
use crate::domain::{ClockTime, EvProfile, TimeGrid};
use crate::pricing::TariffParams;
use crate::rng::stream;

pub const MAX_EVS: usize = 3;
pub const MAX_SLOTS: usize = 6;
pub const MIN_STEP_KWH: f64 = 0.1;
const MAX_STATES: usize = 1 << 20;
const GRID_TOL: f64 = 1e-9;

/// Best grid schedule found by [`brute_force_schedule`].
#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    /// Energy per EV and slot, kWh.
    pub energy: Vec<Vec<f64>>,
    /// Cost of `energy`.
    pub cost: f64,
    /// Convenience J2 of `energy`.
    pub j2: f64,
    /// Minimum cost over all grid schedules.
    pub min_cost: f64,
    /// Upper bound on `min_cost` minus the continuous optimum.
    pub resolution_bound: f64,
}

/// Per-EV data in grid units.
struct Lattice {
    units: Vec<usize>,
    cap: Vec<usize>,
    avail: Vec<Vec<bool>>,
    deadline: Vec<usize>,
    cap_kwh: Vec<f64>,
    radix: Vec<usize>,
    num_states: usize,
    slots: usize,
    step: f64,
}

impl Lattice {
    fn new(evs: &[EvProfile], grid: &TimeGrid, step: f64) -> Result<Self, EvalError> {
        if evs.len() > MAX_EVS || grid.num_slots > MAX_SLOTS {
            return Err(EvalError::TooLarge(format!(
                "{} EVs over {} slots (limit {MAX_EVS} x {MAX_SLOTS})",
                evs.len(),
                grid.num_slots
            )));
        }
        if !(step >= MIN_STEP_KWH) {
            return Err(EvalError::TooLarge(format!(
                "step {step} kWh below {MIN_STEP_KWH}"
            )));
        }
        let mut units = Vec::new();
        for ev in evs {
            ev.validate(grid).or_else(|e| match e {
                crate::domain::DomainError::InvalidProfile {
                    field: "target_soc",
                    ..
                } => Ok(()),
                e => Err(e),
            })?;
            let d = ev.demand_kwh() / step;
            let k = d.round();
            if (k - d).abs() * step > GRID_TOL {
                return Err(EvalError::InvalidSpec(format!(
                    "EV {} demand {} kWh is not a multiple of {step} kWh",
                    ev.ev_id,
                    ev.demand_kwh()
                )));
            }
            units.push(k as usize);
        }
        let radix: Vec<usize> = units.iter().map(|k| k + 1).collect();
        let num_states = radix.iter().product::<usize>();
        if num_states > MAX_STATES {
            return Err(EvalError::TooLarge(format!("{num_states} demand states")));
        }
        Ok(Self {
            cap: evs
                .iter()
                .map(|e| (e.slot_energy_cap(grid) / step + GRID_TOL).floor() as usize)
                .collect(),
            avail: evs
                .iter()
                .map(|e| (1..=grid.num_slots).map(|t| e.is_available(t)).collect())
                .collect(),
            deadline: evs.iter().map(|e| e.deadline_slot).collect(),
            cap_kwh: evs.iter().map(|e| e.slot_energy_cap(grid)).collect(),
            units,
            radix,
            num_states,
            slots: grid.num_slots,
            step,
        })
    }

    fn decode(&self, mut s: usize, out: &mut [usize]) {
        for (o, r) in out.iter_mut().zip(&self.radix) {
            *o = s % r;
            s /= r;
        }
    }

    fn encode(&self, rem: &[usize]) -> usize {
        rem.iter()
            .zip(&self.radix)
            .rev()
            .fold(0, |acc, (v, r)| acc * r + v)
    }

    /// Convenience collected in slot `k` (0-based) by EVs with `rem` units left.
    fn convenience(&self, k: usize, rem: &[usize]) -> f64 {
        let t = k + 1;
        (0..rem.len())
            .filter(|&i| self.avail[i][k])
            .map(|i| {
                if rem[i] == 0 {
                    1.0
                } else {
                    let w_star = rem[i] as f64 * self.step / self.cap_kwh[i];
                    1.0 - w_star / (self.deadline[i] + 1 - t) as f64
                }
            })
            .sum()
    }

    /// Calls `f(units per EV, total)` for every allocation of slot `k` from `rem`.
    fn for_each_move(&self, k: usize, rem: &[usize], mut f: impl FnMut(&[usize], usize)) {
        let n = rem.len();
        let hi: Vec<usize> = (0..n)
            .map(|i| {
                if self.avail[i][k] {
                    rem[i].min(self.cap[i])
                } else {
                    0
                }
            })
            .collect();
        let mut u = vec![0usize; n];
        loop {
            f(&u, u.iter().sum());
            let mut i = 0;
            while i < n && u[i] == hi[i] {
                u[i] = 0;
                i += 1;
            }
            if i == n {
                return;
            }
            u[i] += 1;
        }
    }
}

#[derive(Clone, Copy)]
struct Entry {
    cost: f64,
    j2: f64,
    prev_state: usize,
    prev_entry: usize,
}

/// Min-cost, then max-J2, path through the lattice.
///
/// `slot_cost(k, total_units)` is `None` for forbidden totals. Among paths
/// within `band` of the minimum cost the one with the highest J2 wins.
fn search(
    lat: &Lattice,
    slot_cost: impl Fn(usize, usize) -> Option<f64>,
    band: f64,
) -> Option<(Vec<Vec<usize>>, f64, f64, f64)> {
    let n = lat.units.len();
    let ns = lat.num_states;
    let mut rem = vec![0usize; n];
    let mut next = vec![0usize; n];

    // Cost to go from each state at the start of each slot.
    let mut ctg = vec![vec![f64::INFINITY; ns]; lat.slots + 1];
    ctg[lat.slots][0] = 0.0;
    for k in (0..lat.slots).rev() {
        for s in 0..ns {
            lat.decode(s, &mut rem);
            let mut best = f64::INFINITY;
            lat.for_each_move(k, &rem, |u, total| {
                let Some(c) = slot_cost(k, total) else { return };
                for i in 0..n {
                    next[i] = rem[i] - u[i];
                }
                best = best.min(c + ctg[k + 1][lat.encode(&next)]);
            });
            ctg[k][s] = best;
        }
    }
    let start = lat.encode(&lat.units);
    let min_cost = ctg[0][start];
    if !min_cost.is_finite() {
        return None;
    }
    let limit = min_cost + band + 1e-12 * min_cost.abs();

    // Forward pass keeping, per state, the cost/J2 trade-offs that can still
    // finish within the band.
    let mut layers: Vec<Vec<Vec<Entry>>> = vec![vec![Vec::new(); ns]; lat.slots + 1];
    layers[0][start].push(Entry {
        cost: 0.0,
        j2: 0.0,
        prev_state: usize::MAX,
        prev_entry: usize::MAX,
    });
    for k in 0..lat.slots {
        let (done, todo) = layers.split_at_mut(k + 1);
        let cur = &done[k];
        let nxt = &mut todo[0];
        for s in 0..ns {
            if cur[s].is_empty() {
                continue;
            }
            lat.decode(s, &mut rem);
            let gain = lat.convenience(k, &rem);
            lat.for_each_move(k, &rem, |u, total| {
                let Some(c) = slot_cost(k, total) else { return };
                for i in 0..n {
                    next[i] = rem[i] - u[i];
                }
                let s2 = lat.encode(&next);
                let tail = ctg[k + 1][s2];
                for (ei, e) in cur[s].iter().enumerate() {
                    let cost = e.cost + c;
                    if cost + tail <= limit {
                        nxt[s2].push(Entry {
                            cost,
                            j2: e.j2 + gain,
                            prev_state: s,
                            prev_entry: ei,
                        });
                    }
                }
            });
        }
        for list in nxt.iter_mut() {
            pareto(list);
        }
    }

    let last = &layers[lat.slots][0];
    let (mut ei, best) = last.iter().enumerate().max_by(|a, b| {
        a.1.j2
            .total_cmp(&b.1.j2)
            .then(b.1.cost.total_cmp(&a.1.cost))
    })?;
    let (cost, j2) = (best.cost, best.j2);
    let mut units = vec![vec![0usize; lat.slots]; n];
    let mut s = 0;
    for k in (0..lat.slots).rev() {
        let e = layers[k + 1][s][ei];
        lat.decode(e.prev_state, &mut rem);
        lat.decode(s, &mut next);
        for i in 0..n {
            units[i][k] = rem[i] - next[i];
        }
        s = e.prev_state;
        ei = e.prev_entry;
    }
    Some((units, cost, j2, min_cost))
}

/// Keeps entries not beaten on both cost and J2.
fn pareto(list: &mut Vec<Entry>) {
    if list.len() < 2 {
        return;
    }
    list.sort_by(|a, b| a.cost.total_cmp(&b.cost).then(b.j2.total_cmp(&a.j2)));
    let mut best_j2 = f64::NEG_INFINITY;
    list.retain(|e| {
        let keep = e.j2 > best_j2;
        if keep {
            best_j2 = e.j2;
        }
        keep
    });
}

fn slot_cost_kwh(tariff: &TariffParams, base: f64, energy: f64) -> f64 {
    let z = base + energy;
    tariff.k0 * energy + 0.5 * tariff.k1 * (z * z - base * base)
}

/// Exhaustive minimum-cost schedule on a `step_kwh` grid.
///
/// Returns `None` when no grid schedule meets every demand. Among schedules
/// whose cost is within the resolution bound of the minimum, the one with the
/// highest J2 is returned. The bound `k1/2 * sum_t (n_t * step)^2`, with
/// `n_t` the EVs plugged in at slot t, holds when every slot cap is a whole
/// number of steps.
pub fn brute_force_schedule(
    evs: &[EvProfile],
    base: &[f64],
    tariff: &TariffParams,
    grid: &TimeGrid,
    step_kwh: f64,
) -> Result<Option<OracleResult>, EvalError> {
    let lat = Lattice::new(evs, grid, step_kwh)?;
    if base.len() != grid.num_slots {
        return Err(EvalError::InvalidSpec(format!(
            "base has {} slots, grid {}",
            base.len(),
            grid.num_slots
        )));
    }
    let bound: f64 = (0..grid.num_slots)
        .map(|k| {
            let n = lat.avail.iter().filter(|a| a[k]).count() as f64;
            0.5 * tariff.k1 * (n * step_kwh).powi(2)
        })
        .sum();
    let cost =
        |k: usize, total: usize| Some(slot_cost_kwh(tariff, base[k], total as f64 * step_kwh));
    Ok(
        search(&lat, cost, bound).map(|(units, cost, j2, min_cost)| OracleResult {
            energy: to_kwh(&units, step_kwh),
            cost,
            j2,
            min_cost,
            resolution_bound: bound,
        }),
    )
}

/// Highest J2 over grid schedules whose charging energy in slot `k` is exactly
/// `load_kwh[k]`, with the schedule achieving it. `None` if no grid schedule
/// matches the loads.
pub fn max_j2_at_fixed_load(
    evs: &[EvProfile],
    load_kwh: &[f64],
    grid: &TimeGrid,
    step_kwh: f64,
) -> Result<Option<(f64, Vec<Vec<f64>>)>, EvalError> {
    let lat = Lattice::new(evs, grid, step_kwh)?;
    if load_kwh.len() != grid.num_slots {
        return Err(EvalError::InvalidSpec(format!(
            "load has {} slots, grid {}",
            load_kwh.len(),
            grid.num_slots
        )));
    }
    let mut target = Vec::with_capacity(load_kwh.len());
    for &l in load_kwh {
        let u = (l / step_kwh).round();
        if (u - l / step_kwh).abs() * step_kwh > GRID_TOL || u < 0.0 {
            return Err(EvalError::InvalidSpec(format!(
                "load {l} kWh is not a multiple of {step_kwh} kWh"
            )));
        }
        target.push(u as usize);
    }
    let cost = |k: usize, total: usize| (total == target[k]).then_some(0.0);
    Ok(search(&lat, cost, 0.0).map(|(units, _, j2, _)| (j2, to_kwh(&units, step_kwh))))
}

fn to_kwh(units: &[Vec<usize>], step: f64) -> Vec<Vec<f64>> {
    units
        .iter()
        .map(|r| r.iter().map(|&u| u as f64 * step).collect())
        .collect()
}

/// Charging rates whose quarter-hour caps are whole multiples of 0.1 kWh.
const TINY_RATES_KW: [f64; 3] = [4.0, 6.4, 8.0];
const TINY_CAPACITY_KWH: f64 = 10.0;

/// Recipe for a random instance small enough to enumerate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TinySpec {
    pub num_evs: usize,
    pub num_slots: usize,
    pub step_kwh: f64,
    /// Largest demand in steps.
    pub max_units: usize,
    /// Every EV plugs in at slot 1.
    pub all_at_start: bool,
    pub seed: u64,
}

impl Default for TinySpec {
    fn default() -> Self {
        Self {
            num_evs: 2,
            num_slots: 4,
            step_kwh: 0.1,
            max_units: 12,
            all_at_start: false,
            seed: 1,
        }
    }
}

/// A seeded instance for the exhaustive oracles.
#[derive(Debug, Clone, PartialEq)]
pub struct TinyInstance {
    pub grid: TimeGrid,
    pub tariff: TariffParams,
    pub evs: Vec<EvProfile>,
    /// Base load per slot, kWh.
    pub base: Vec<f64>,
}

/// Draws a feasible instance whose demands and slot caps lie on the
/// `step_kwh` grid.
pub fn tiny_instance(spec: &TinySpec) -> Result<TinyInstance, EvalError> {
    if spec.num_evs == 0 || spec.num_evs > MAX_EVS {
        return Err(EvalError::TooLarge(format!(
            "{} EVs (need 1 to {MAX_EVS})",
            spec.num_evs
        )));
    }
    if spec.num_slots == 0 || spec.num_slots > MAX_SLOTS {
        return Err(EvalError::TooLarge(format!(
            "{} slots (need 1 to {MAX_SLOTS})",
            spec.num_slots
        )));
    }
    if !(spec.step_kwh >= MIN_STEP_KWH) || spec.max_units == 0 {
        return Err(EvalError::InvalidSpec(format!(
            "step {} kWh with at most {} units",
            spec.step_kwh, spec.max_units
        )));
    }
    let grid = TimeGrid {
        num_slots: spec.num_slots,
        slot_hours: 0.25,
        start_clock: ClockTime::from_minutes(0),
    };
    let mut rng = stream(spec.seed, "tiny");
    let tariff = TariffParams {
        k0: rng.gen_range(0.0..0.2),
        k1: rng.gen_range(0.02..0.2),
    };
    let base = (0..spec.num_slots)
        .map(|_| rng.gen_range(0.0..3.0))
        .collect();
    let evs = (0..spec.num_evs)
        .map(|k| {
            let arrival = if spec.all_at_start {
                1
            } else {
                rng.gen_range(1..=spec.num_slots)
            };
            let deadline = rng.gen_range(arrival..=spec.num_slots);
            let rate = TINY_RATES_KW[rng.gen_range(0..TINY_RATES_KW.len())];
            let cap_units = (rate * grid.slot_hours / spec.step_kwh + GRID_TOL).floor() as usize;
            let most = spec.max_units.min(cap_units * (deadline + 1 - arrival));
            let units = rng.gen_range(1..=most);
            EvProfile {
                ev_id: k as u32 + 1,
                station_id: 1,
                arrival_slot: arrival,
                deadline_slot: deadline,
                capacity_kwh: TINY_CAPACITY_KWH,
                max_rate_kw: rate,
                initial_soc: 0.0,
                target_soc: units as f64 * spec.step_kwh / TINY_CAPACITY_KWH,
            }
        })
        .collect();
    Ok(TinyInstance {
        grid,
        tariff,
        evs,
        base,
    })
}
