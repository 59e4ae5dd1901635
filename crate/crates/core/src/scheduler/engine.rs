use log::{debug, warn};

use super::flow::realizable_fill;
use super::report::{RunReport, SlotRecord, SlotStatus};
use super::{
    edf_order, fcfs_order, reserved_fill, slot_bounds, soc_update, ChargingSchedule, Method,
    SchedulerError, SlotBounds, FEASIBILITY_TOL,
};
use crate::domain::{
    active_indices, active_window, energy_demand, validate_fleet, EvProfile, FleetState, TimeGrid,
};
use crate::forecast::{Forecaster, OracleForecaster};
use crate::pricing::TariffParams;
use crate::qpsolver::{assemble_p1, solve_p1, SolverOptions};

/// Inputs shared by all scheduling methods.
#[derive(Clone, Copy)]
pub struct RunContext<'a> {
    pub grid: &'a TimeGrid,
    pub tariff: &'a TariffParams,
    pub evs: &'a [EvProfile],
    /// Base load before the scheduled day, kWh per slot, oldest first.
    pub history: &'a [f64],
    /// Actual base load of the scheduled day, one value per slot.
    pub actual: &'a [f64],
    pub forecaster: &'a dyn Forecaster,
    pub solver: SolverOptions,
}

impl RunContext<'_> {
    fn validate(&self) -> Result<(), SchedulerError> {
        self.grid.validate()?;
        validate_fleet(self.evs, self.grid)?;
        if self.actual.len() != self.grid.num_slots {
            return Err(SchedulerError::Input(format!(
                "actual base load has {} slots, grid has {}",
                self.actual.len(),
                self.grid.num_slots
            )));
        }
        if let Some(b) = self
            .actual
            .iter()
            .chain(self.history)
            .find(|b| !(b.is_finite() && **b >= 0.0))
        {
            return Err(SchedulerError::Input(format!(
                "base load {b} must be finite and non-negative"
            )));
        }
        Ok(())
    }
}

type Order = fn(&[EvProfile], &mut [usize]);

/// One fleet's evolving state and output.
struct Fleet {
    order: Order,
    state: FleetState,
    schedule: ChargingSchedule,
    report: RunReport,
}

/// Active EVs of one fleet at one slot, in priority order.
struct Candidates {
    idx: Vec<usize>,
    bounds: Vec<SlotBounds>,
}

impl Candidates {
    fn floor(&self) -> f64 {
        self.bounds.iter().map(|b| b.mandatory).sum()
    }

    fn ceil(&self) -> f64 {
        self.bounds.iter().map(|b| b.most).sum()
    }
}

/// What a fleet did in one slot.
struct Step {
    num_active: usize,
    num_charging: usize,
    energy: f64,
}

impl Fleet {
    fn new(method: Method, order: Order, ctx: &RunContext) -> Self {
        Self {
            order,
            state: FleetState::new(ctx.evs),
            schedule: ChargingSchedule::idle(ctx.evs, ctx.actual),
            report: RunReport::new(method),
        }
    }

    /// EVs that arrive already at their target complete on arrival.
    fn begin_slot(&mut self, ctx: &RunContext, t: usize) -> Candidates {
        self.state.current_slot = t;
        for (i, ev) in ctx.evs.iter().enumerate() {
            if ev.arrival_slot == t
                && self.state.completed_at[i].is_none()
                && self.state.is_complete(i, ev)
            {
                self.state.completed_at[i] = Some(t);
            }
        }
        let (ids, window) = active_window(ctx.evs, &self.state, t);
        self.state.window_end = (!ids.is_empty()).then(|| *window.end());
        self.state.active_set = ids;
        let mut idx = active_indices(ctx.evs, &self.state, t);
        (self.order)(ctx.evs, &mut idx);
        let bounds = idx
            .iter()
            .map(|&i| slot_bounds(&ctx.evs[i], self.state.soc[i], t, ctx.grid))
            .collect();
        Candidates { idx, bounds }
    }

    /// Window length from `t` to the last deadline of the active set.
    fn window_len(&self, t: usize) -> usize {
        self.state.window_end.map_or(0, |end| end + 1 - t)
    }

    /// Priority allocation of `columns[0]` that keeps the rest of `columns`
    /// deliverable, if there is one.
    fn follow(
        &self,
        ctx: &RunContext,
        t: usize,
        c: &Candidates,
        columns: &[f64],
    ) -> Option<Vec<f64>> {
        let n = c.idx.len();
        let (mut demand, mut cap, mut last) = (
            Vec::with_capacity(n),
            Vec::with_capacity(n),
            Vec::with_capacity(n),
        );
        for &i in &c.idx {
            let ev = &ctx.evs[i];
            let slot_cap = ev.slot_energy_cap(ctx.grid);
            let stay = ev.deadline_slot + 1 - t;
            demand.push(energy_demand(ev, self.state.soc[i]).min(slot_cap * stay as f64));
            cap.push(slot_cap);
            last.push(stay - 1);
        }
        let floor: Vec<f64> = c.bounds.iter().map(|b| b.mandatory).collect();
        let total: f64 = columns.iter().sum();
        let tol = PLAN_TOL_FACTOR * ctx.solver.tol * total.max(1.0);
        realizable_fill(&demand, &cap, &floor, &last, columns, tol)
    }

    /// Allocates `columns[0]` along the plan, or per-EV reserves when the
    /// plan cannot be followed.
    fn allocate_planned(
        &mut self,
        ctx: &RunContext,
        t: usize,
        c: &Candidates,
        columns: &[f64],
    ) -> Result<Step, SchedulerError> {
        let x = self.follow(ctx, t, c, columns).unwrap_or_else(|| {
            debug!(
                "slot {t}: {} cannot follow the plan, reserving per EV",
                self.report.method
            );
            reserved_fill(columns[0], &c.bounds).0
        });
        self.commit(ctx, t, c, &x)
    }

    fn commit(
        &mut self,
        ctx: &RunContext,
        t: usize,
        c: &Candidates,
        x: &[f64],
    ) -> Result<Step, SchedulerError> {
        let mut energy = 0.0;
        for (&i, &v) in c.idx.iter().zip(x) {
            self.schedule.energy[i][t - 1] = v;
            energy += v;
        }
        for i in soc_update(&mut self.state.soc, &c.idx, x, ctx.evs)? {
            self.state.completed_at[i] = Some(t);
        }
        Ok(Step {
            num_active: c.idx.len(),
            num_charging: x.iter().filter(|&&v| v > 0.0).count(),
            energy,
        })
    }

    fn finish(mut self, ctx: &RunContext) -> (ChargingSchedule, RunReport) {
        for (ev, done) in ctx.evs.iter().zip(&self.state.completed_at) {
            if done.is_none() {
                self.report
                    .warn(format!("EV {} did not reach its target SOC", ev.ev_id));
            }
        }
        self.schedule.completed_at = self.state.completed_at;
        (self.schedule, self.report)
    }
}

/// Slack, in solver tolerances, allowed between a plan and the demands it serves.
const PLAN_TOL_FACTOR: f64 = 10.0;

/// Cost-optimal plan from one slot to the end of a fleet's window.
struct Plan {
    z_star: f64,
    /// Planned charging energy per window slot, this slot first.
    columns: Vec<f64>,
    status: SlotStatus,
    iterations: usize,
}

/// Solves P1 for `fleet`'s active EVs. `forecast[k]` is the base load
/// forecast for slot `t + k`; the current slot uses the observed value.
fn plan_for(
    ctx: &RunContext,
    fleet: &mut Fleet,
    forecast: &[f64],
    t: usize,
) -> Result<Plan, SchedulerError> {
    let len = fleet.window_len(t);
    let base_now = ctx.actual[t - 1];
    if len == 0 {
        return Ok(Plan {
            z_star: base_now,
            columns: vec![0.0],
            status: SlotStatus::Idle,
            iterations: 0,
        });
    }
    let mut window = Vec::with_capacity(len);
    window.push(base_now);
    window.extend_from_slice(&forecast[1..len]);
    let (inst, curtailed) = assemble_p1(ctx.evs, &fleet.state, ctx.grid, ctx.tariff, t, &window)
        .map_err(|source| SchedulerError::Solver { slot: t, source })?;
    for c in curtailed {
        fleet.report.warn(format!(
            "slot {t}: EV {} demand {:.6} kWh curtailed to {:.6} kWh",
            c.ev_id, c.requested, c.deliverable
        ));
    }
    let (sol, status) = match solve_p1(&inst, &ctx.solver) {
        Ok(sol) => (sol, SlotStatus::Solved),
        Err(e) => match e.best_iterate() {
            Some(best) => {
                fleet
                    .report
                    .warn(format!("slot {t}: {e}; using best iterate"));
                (best.clone(), SlotStatus::BestIterate)
            }
            None => return Err(SchedulerError::Solver { slot: t, source: e }),
        },
    };
    let columns = (0..len)
        .map(|k| sol.p.iter().map(|row| row[k]).sum::<f64>().max(0.0))
        .collect();
    Ok(Plan {
        z_star: sol.z_star[0],
        columns,
        status,
        iterations: sol.iterations,
    })
}

/// Runs the deadline-ordered planner and the arrival-ordered fleet on one
/// shared load plan.
///
/// Each slot P1 is solved for the deadline-ordered fleet. If the
/// arrival-ordered fleet cannot deliver its demands along that plan, P1 is
/// re-solved for the arrival-ordered fleet and that plan is used when the
/// deadline-ordered fleet can follow it. The slot's draw is kept within what
/// both fleets can take, so both draw the same energy.
fn simulate(ctx: &RunContext) -> Result<(Fleet, Fleet), SchedulerError> {
    ctx.validate()?;
    let mut edf = Fleet::new(Method::Csa, edf_order, ctx);
    let mut fcfs = Fleet::new(Method::Costmin, fcfs_order, ctx);
    let mut observed = ctx.history.to_vec();
    observed.reserve(ctx.grid.num_slots);
    for t in 1..=ctx.grid.num_slots {
        let ce = edf.begin_slot(ctx, t);
        let cf = fcfs.begin_slot(ctx, t);
        let horizon = edf.window_len(t).max(fcfs.window_len(t)).max(1);
        let forecast = ctx
            .forecaster
            .forecast(&observed, horizon)
            .map_err(|source| SchedulerError::Forecast { slot: t, source })?;

        let mut plan = plan_for(ctx, &mut edf, &forecast, t)?;
        if plan.status != SlotStatus::Idle && fcfs.follow(ctx, t, &cf, &plan.columns).is_none() {
            let alt = plan_for(ctx, &mut fcfs, &forecast, t)?;
            if edf.follow(ctx, t, &ce, &alt.columns).is_some() {
                debug!("slot {t}: planning on the arrival-order fleet");
                plan = Plan {
                    status: if alt.status == SlotStatus::Solved {
                        SlotStatus::Replanned
                    } else {
                        alt.status
                    },
                    iterations: plan.iterations + alt.iterations,
                    ..alt
                };
            }
        }
        let (lo, hi) = (ce.floor().max(cf.floor()), ce.ceil().min(cf.ceil()));
        if lo <= hi {
            plan.columns[0] = plan.columns[0].clamp(lo, hi);
        }

        let step = edf.allocate_planned(ctx, t, &ce, &plan.columns)?;
        let base = ctx.actual[t - 1];
        let z = base + step.energy;
        edf.schedule.total_load[t - 1] = z;
        plan.columns[0] = step.energy;
        let fstep = fcfs.allocate_planned(ctx, t, &cf, &plan.columns)?;
        if (fstep.energy - step.energy).abs() <= FEASIBILITY_TOL {
            fcfs.schedule.total_load[t - 1] = z;
        } else {
            let msg = format!(
                "slot {t}: arrival-order allocation drew {} kWh instead of {} kWh",
                fstep.energy, step.energy
            );
            warn!("{msg}");
            fcfs.report.warn(msg);
            fcfs.schedule.total_load[t - 1] = base + fstep.energy;
        }
        for (fleet, s) in [(&mut edf, &step), (&mut fcfs, &fstep)] {
            fleet.report.slots.push(SlotRecord {
                slot: t,
                base,
                forecast_base: forecast[0],
                z_star: plan.z_star,
                energy: s.energy,
                num_active: s.num_active,
                num_charging: s.num_charging,
                iterations: plan.iterations,
                status: plan.status,
            });
        }
        observed.push(base);
    }
    Ok((edf, fcfs))
}

/// Online cost-optimal planning with earliest-deadline allocation.
pub fn run_csa(ctx: &RunContext) -> Result<(ChargingSchedule, RunReport), SchedulerError> {
    Ok(run_lockstep(ctx)?.0)
}

/// Same per-slot energy as [`run_csa`], allocated in arrival order.
pub fn run_costmin_baseline(
    ctx: &RunContext,
) -> Result<(ChargingSchedule, RunReport), SchedulerError> {
    Ok(run_lockstep(ctx)?.1)
}

/// Runs [`run_csa`] and [`run_costmin_baseline`] in one pass.
#[allow(clippy::type_complexity)]
pub fn run_lockstep(
    ctx: &RunContext,
) -> Result<((ChargingSchedule, RunReport), (ChargingSchedule, RunReport)), SchedulerError> {
    let (edf, fcfs) = simulate(ctx)?;
    Ok((edf.finish(ctx), fcfs.finish(ctx)))
}

/// Every plugged-in, unfinished EV charges at full rate.
pub fn run_convmax_baseline(
    ctx: &RunContext,
) -> Result<(ChargingSchedule, RunReport), SchedulerError> {
    ctx.validate()?;
    let mut fleet = Fleet::new(Method::Convmax, edf_order, ctx);
    for t in 1..=ctx.grid.num_slots {
        let c = fleet.begin_slot(ctx, t);
        let x: Vec<f64> = c.bounds.iter().map(|b| b.most).collect();
        let step = fleet.commit(ctx, t, &c, &x)?;
        let base = ctx.actual[t - 1];
        fleet.schedule.total_load[t - 1] = base + step.energy;
        fleet.report.slots.push(SlotRecord {
            slot: t,
            base,
            forecast_base: base,
            z_star: base + step.energy,
            energy: step.energy,
            num_active: step.num_active,
            num_charging: step.num_charging,
            iterations: 0,
            status: SlotStatus::Unplanned,
        });
    }
    Ok(fleet.finish(ctx))
}

/// Earliest-deadline allocation of a given charging energy per slot,
/// `load[k]` for slot `k + 1`, with no planning or forecasting.
pub fn run_ucm_at_load(
    evs: &[EvProfile],
    grid: &TimeGrid,
    load: &[f64],
    solver: SolverOptions,
) -> Result<(ChargingSchedule, RunReport), SchedulerError> {
    if load.len() != grid.num_slots {
        return Err(SchedulerError::Input(format!(
            "load has {} slots, grid has {}",
            load.len(),
            grid.num_slots
        )));
    }
    let zeros = vec![0.0; grid.num_slots];
    let tariff = TariffParams::default();
    let forecaster = OracleForecaster::new(zeros.clone());
    let ctx = RunContext {
        grid,
        tariff: &tariff,
        evs,
        history: &[],
        actual: &zeros,
        forecaster: &forecaster,
        solver,
    };
    ctx.validate()?;
    let mut fleet = Fleet::new(Method::Csa, edf_order, &ctx);
    for t in 1..=grid.num_slots {
        let c = fleet.begin_slot(&ctx, t);
        let end = (t - 1 + fleet.window_len(t)).max(t);
        let step = fleet.allocate_planned(&ctx, t, &c, &load[t - 1..end])?;
        fleet.schedule.total_load[t - 1] = step.energy;
        fleet.report.slots.push(SlotRecord {
            slot: t,
            base: 0.0,
            forecast_base: 0.0,
            z_star: load[t - 1],
            energy: step.energy,
            num_active: step.num_active,
            num_charging: step.num_charging,
            iterations: 0,
            status: SlotStatus::Unplanned,
        });
    }
    Ok(fleet.finish(&ctx))
}

pub fn run_method(
    method: Method,
    ctx: &RunContext,
) -> Result<(ChargingSchedule, RunReport), SchedulerError> {
    match method {
        Method::Csa => run_csa(ctx),
        Method::Costmin => run_costmin_baseline(ctx),
        Method::Convmax => run_convmax_baseline(ctx),
    }
}
