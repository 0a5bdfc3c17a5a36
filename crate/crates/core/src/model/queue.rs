//! Multi-server FIFO tandem queue with finite intermediate buffers and
//! blocking after service.
//!
//! A customer finishing service at station `s` moves on only if station
//! `s + 1` has an idle server or a free waiting position; otherwise it keeps
//! its server at `s` until space opens. Buffer sizes count waiting positions
//! only. Blocked customers are released in the order they became blocked.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};

use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use super::{InputDistribution, ModelError, SimModel};
use crate::stats::RngStream;

/// Station configuration: servers and waiting room (`None` = unlimited).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TandemLayout {
    pub servers: Vec<usize>,
    pub buffers: Vec<Option<usize>>,
}

impl TandemLayout {
    pub fn new(servers: Vec<usize>, buffers: Vec<Option<usize>>) -> Result<Self, ModelError> {
        if servers.is_empty() || servers.len() != buffers.len() {
            return Err(ModelError::Shape(format!(
                "{} server counts and {} buffer sizes",
                servers.len(),
                buffers.len()
            )));
        }
        if servers.contains(&0) {
            return Err(ModelError::Parameter("every station needs at least one server".into()));
        }
        Ok(Self { servers, buffers })
    }

    pub fn stations(&self) -> usize {
        self.servers.len()
    }
}

/// Per-customer results of one run.
#[derive(Clone, Debug, PartialEq)]
pub struct TandemTrace {
    pub arrivals: Vec<f64>,
    /// `exits[s][k]`: time customer `k` leaves station `s`.
    pub exits: Vec<Vec<f64>>,
    /// Time in system minus total service time.
    pub waits: Vec<f64>,
}

impl TandemTrace {
    pub fn mean_wait(&self) -> f64 {
        self.waits.iter().sum::<f64>() / self.waits.len() as f64
    }
}

#[derive(Debug)]
struct Event {
    time: f64,
    seq: u64,
    customer: usize,
    /// `None` for an external arrival, `Some(s)` for service completion at `s`.
    station: Option<usize>,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    // reversed: BinaryHeap is a max-heap
    fn cmp(&self, other: &Self) -> Ordering {
        other.time.total_cmp(&self.time).then_with(|| other.seq.cmp(&self.seq))
    }
}

struct Station {
    servers: usize,
    buffer: Option<usize>,
    busy: usize,
    queue: VecDeque<usize>,
    blocked: VecDeque<usize>,
}

impl Station {
    fn can_accept(&self) -> bool {
        self.busy < self.servers || self.buffer.is_none_or(|b| self.queue.len() < b)
    }
}

struct Sim<'a> {
    services: &'a [&'a [f64]],
    stations: Vec<Station>,
    heap: BinaryHeap<Event>,
    seq: u64,
    exits: Vec<Vec<f64>>,
}

impl Sim<'_> {
    fn schedule(&mut self, time: f64, customer: usize, station: Option<usize>) {
        self.seq += 1;
        self.heap.push(Event {
            time,
            seq: self.seq,
            customer,
            station,
        });
    }

    fn enter(&mut self, s: usize, k: usize, t: f64) {
        let st = &mut self.stations[s];
        if st.busy < st.servers {
            st.busy += 1;
            let done = t + self.services[s][k];
            self.schedule(done, k, Some(s));
        } else {
            st.queue.push_back(k);
        }
    }

    /// Frees one server at `s` and lets waiting and blocked customers advance.
    fn release(&mut self, s: usize, t: f64) {
        let st = &mut self.stations[s];
        st.busy -= 1;
        if let Some(next) = st.queue.pop_front() {
            st.busy += 1;
            let done = t + self.services[s][next];
            self.schedule(done, next, Some(s));
        }
        if s > 0 && self.stations[s].can_accept() {
            if let Some(k) = self.stations[s - 1].blocked.pop_front() {
                self.exits[s - 1][k] = t;
                self.enter(s, k, t);
                self.release(s - 1, t);
            }
        }
    }

    fn complete(&mut self, s: usize, k: usize, t: f64) {
        let last = self.stations.len() - 1;
        if s == last || self.stations[s + 1].can_accept() {
            self.exits[s][k] = t;
            if s < last {
                self.enter(s + 1, k, t);
            }
            self.release(s, t);
        } else {
            self.stations[s].blocked.push_back(k);
        }
    }
}

/// Runs the tandem line for `interarrivals.len()` customers. `services[s][k]`
/// is customer `k`'s service time at station `s`.
pub fn simulate_tandem(
    layout: &TandemLayout,
    interarrivals: &[f64],
    services: &[&[f64]],
) -> Result<TandemTrace, ModelError> {
    let customers = interarrivals.len();
    if services.len() != layout.stations() {
        return Err(ModelError::Shape(format!(
            "{} service sequences for {} stations",
            services.len(),
            layout.stations()
        )));
    }
    if let Some(s) = services.iter().position(|x| x.len() != customers) {
        return Err(ModelError::Shape(format!(
            "station {s} has {} service times for {customers} customers",
            services[s].len()
        )));
    }
    if interarrivals
        .iter()
        .chain(services.iter().flat_map(|s| s.iter()))
        .any(|x| !(*x >= 0.0) || !x.is_finite())
    {
        return Err(ModelError::Data("interarrival and service times must be finite and nonnegative".into()));
    }

    let mut sim = Sim {
        services,
        stations: layout
            .servers
            .iter()
            .zip(&layout.buffers)
            .map(|(&servers, &buffer)| Station {
                servers,
                buffer,
                busy: 0,
                queue: VecDeque::new(),
                blocked: VecDeque::new(),
            })
            .collect(),
        heap: BinaryHeap::with_capacity(2 * customers),
        seq: 0,
        exits: vec![vec![f64::NAN; customers]; layout.stations()],
    };
    let mut arrivals = Vec::with_capacity(customers);
    let mut clock = 0.0;
    for (k, gap) in interarrivals.iter().enumerate() {
        clock += gap;
        arrivals.push(clock);
        sim.schedule(clock, k, None);
    }
    while let Some(ev) = sim.heap.pop() {
        match ev.station {
            None => sim.enter(0, ev.customer, ev.time),
            Some(s) => sim.complete(s, ev.customer, ev.time),
        }
    }
    let last = layout.stations() - 1;
    let waits = (0..customers)
        .map(|k| {
            let service: f64 = services.iter().map(|s| s[k]).sum();
            (sim.exits[last][k] - arrivals[k] - service).max(0.0)
        })
        .collect();
    Ok(TandemTrace {
        arrivals,
        exits: sim.exits,
        waits,
    })
}

/// Service-time scenario for the three stations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ServiceScenario {
    Exponential,
    Bimodal,
}

impl ServiceScenario {
    pub fn distributions(self) -> Vec<InputDistribution> {
        match self {
            ServiceScenario::Exponential => [0.73, 0.7, 0.8]
                .iter()
                .map(|&mean| InputDistribution::Exponential { mean })
                .collect(),
            ServiceScenario::Bimodal => [
                (0.785, [1.0, 2.0, 6.0, 3.0, 10.0, 2.0]),
                (0.7, [1.0, 2.0, 6.0, 2.3, 6.0, 2.0]),
                (0.13, [1.0, 2.0, 6.0, 1.0, 12.0, 2.0]),
            ]
            .iter()
            .map(|&(gamma, b)| InputDistribution::BetaMixture { gamma, b })
            .collect(),
        }
    }

    /// Published mean waiting times of the nine enumerated solutions.
    pub fn reference_waits(self) -> [f64; 9] {
        match self {
            ServiceScenario::Exponential => [3.73, 3.06, 3.28, 3.25, 2.36, 2.76, 3.12, 2.61, 3.08],
            ServiceScenario::Bimodal => [3.64, 3.26, 3.12, 2.98, 2.38, 2.47, 2.77, 2.27, 2.70],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TandemQueueParams {
    pub arrival_rate: f64,
    pub base_servers: Vec<usize>,
    pub buffers: Vec<Option<usize>>,
    pub costs: Vec<u32>,
    pub budget: u32,
    /// Largest number of servers that may be added to one station.
    pub max_added: u32,
    pub customers: usize,
    pub scenario: ServiceScenario,
}

impl Default for TandemQueueParams {
    fn default() -> Self {
        Self {
            arrival_rate: 6.67,
            base_servers: vec![4, 4, 4],
            buffers: vec![None, Some(2), Some(3)],
            costs: vec![2, 5, 6],
            budget: 9,
            max_added: 3,
            customers: 100,
            scenario: ServiceScenario::Exponential,
        }
    }
}

impl TandemQueueParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.arrival_rate > 0.0) || !self.arrival_rate.is_finite() {
            return Err(ModelError::Parameter(format!("arrival rate must be positive, got {}", self.arrival_rate)));
        }
        if self.customers == 0 {
            return Err(ModelError::Parameter("at least one customer per replication".into()));
        }
        if self.base_servers.len() != self.buffers.len() || self.base_servers.len() != self.costs.len() {
            return Err(ModelError::Shape("servers, buffers and costs must have one entry per station".into()));
        }
        TandemLayout::new(self.base_servers.clone(), self.buffers.clone())?;
        Ok(())
    }

    pub fn cost(&self, added: &[u32]) -> u32 {
        added.iter().zip(&self.costs).map(|(a, c)| a * c).sum()
    }

    pub fn layout(&self, added: &[u32]) -> Result<TandemLayout, ModelError> {
        if added.len() != self.base_servers.len() {
            return Err(ModelError::Shape(format!(
                "capacity vector has {} entries for {} stations",
                added.len(),
                self.base_servers.len()
            )));
        }
        if self.cost(added) > self.budget || added.iter().any(|&a| a > self.max_added) {
            return Err(ModelError::Parameter(format!("capacity addition {added:?} is not feasible")));
        }
        TandemLayout::new(
            self.base_servers.iter().zip(added).map(|(b, a)| b + *a as usize).collect(),
            self.buffers.clone(),
        )
    }
}

/// Feasible capacity additions in lexicographic order.
pub fn enumerate_solutions(params: &TandemQueueParams) -> Vec<Vec<u32>> {
    fn walk(params: &TandemQueueParams, prefix: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if prefix.len() == params.costs.len() {
            out.push(prefix.clone());
            return;
        }
        for a in 0..=params.max_added {
            prefix.push(a);
            if params.cost(prefix) <= params.budget {
                walk(params, prefix, out);
            }
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    walk(params, &mut Vec::new(), &mut out);
    out
}

/// Mean waiting time (queueing plus blocking, excluding service) of the
/// customers under capacity addition `added`.
pub fn tandem_queue_output(
    params: &TandemQueueParams,
    added: &[u32],
    interarrivals: &[f64],
    services: &[&[f64]],
) -> Result<f64, ModelError> {
    if interarrivals.len() != params.customers {
        return Err(ModelError::Shape(format!(
            "{} interarrival times for {} customers",
            interarrivals.len(),
            params.customers
        )));
    }
    let layout = params.layout(added)?;
    Ok(simulate_tandem(&layout, interarrivals, services)?.mean_wait())
}

/// The capacity-allocation problem as a [`SimModel`].
///
/// Outputs are negated waiting times so that the best solution has the
/// largest mean. Service times are the data-driven inputs; interarrival gaps
/// are exogenous draws from the known Poisson arrival process.
#[derive(Clone, Debug)]
pub struct TandemQueueModel {
    params: TandemQueueParams,
    solutions: Vec<Vec<u32>>,
    layouts: Vec<TandemLayout>,
}

impl TandemQueueModel {
    pub fn new(params: TandemQueueParams) -> Result<Self, ModelError> {
        params.validate()?;
        let solutions = enumerate_solutions(&params);
        let layouts = solutions
            .iter()
            .map(|s| params.layout(s))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            params,
            solutions,
            layouts,
        })
    }

    pub fn params(&self) -> &TandemQueueParams {
        &self.params
    }

    pub fn solutions(&self) -> &[Vec<u32>] {
        &self.solutions
    }

    pub fn input_distributions(&self) -> Vec<InputDistribution> {
        self.params.scenario.distributions()
    }
}

impl SimModel for TandemQueueModel {
    fn num_solutions(&self) -> usize {
        self.solutions.len()
    }

    fn num_sources(&self) -> usize {
        self.params.base_servers.len()
    }

    fn inputs_per_replication(&self, _i: usize, _p: usize) -> usize {
        self.params.customers
    }

    fn auxiliary_len(&self) -> usize {
        self.params.customers
    }

    fn sample_auxiliary(&self, rng: &mut RngStream, out: &mut [f64]) {
        let exp = Exp::new(self.params.arrival_rate).expect("validated");
        out.iter_mut().for_each(|x| *x = exp.sample(rng));
    }

    fn evaluate(&self, i: usize, inputs: &[&[f64]], aux: &[f64]) -> f64 {
        let trace = simulate_tandem(&self.layouts[i], aux, inputs).expect("inputs sized by the framework");
        -trace.mean_wait()
    }

    fn reference_etas(&self) -> Option<Vec<f64>> {
        let defaults = TandemQueueParams {
            scenario: self.params.scenario,
            ..TandemQueueParams::default()
        };
        (self.params == defaults).then(|| self.params.scenario.reference_waits().iter().map(|w| -w).collect())
    }
}
