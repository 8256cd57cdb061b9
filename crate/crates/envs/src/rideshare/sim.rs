//! Discrete-event ride-sharing simulator driven one decision at a time.
//!
//! Vehicles move node to node along shortest paths. Whenever a vehicle
//! finishes an action it asks for a decision; decisions are served in
//! `(time, vehicle id)` order. The caller pulls decisions with
//! [`Simulation::next_decision`] and answers each with
//! [`Simulation::apply`].
//!
//! Actions: `0` park, `1` drop-off (drive to the quickest onboard
//! destination), `2..=4` pick up the request in observation slot 0..=2 (drive
//! straight to its origin). Rewards are computed when the action is chosen,
//! from the planned travel time (the delay, in minutes).
//!
//! While driving to a drop-off a vehicle with a free seat may be asked again
//! at an intermediate node (mid-route evaluation). There, drop-off means
//! "keep going" and earns nothing.
//!
//! Once no request is pending or still to be issued, vehicles stop asking:
//! loaded vehicles deliver their remaining passengers and all vehicles then
//! retire, which ends the episode.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::demand::RideRequest;
use super::network::{NodeId, RoadNetwork};
use crate::error::{Error, Result};

pub const ACTION_COUNT: usize = 5;
pub const SLOTS: usize = 3;
const SLOT_FEATURES: usize = 7;
pub const OBSERVATION_LEN: usize = 5 + SLOTS * SLOT_FEATURES + SLOTS;
const SENTINEL: f64 = -1.0;

pub const PARK: usize = 0;
pub const DROPOFF: usize = 1;
pub const PICKUP: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub seats: u8,
    pub park_s: f64,
    pub noop_s: f64,
    pub midroute_cooldown_s: f64,
    /// Seconds per unit of reward delay.
    pub delay_unit_s: f64,
    pub midroute: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            seats: 5,
            park_s: 30.0,
            noop_s: 10.0,
            midroute_cooldown_s: 60.0,
            delay_unit_s: 60.0,
            midroute: true,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seats == 0 {
            return Err(Error::InvalidConfig(
                "vehicles need at least one seat".into(),
            ));
        }
        for (name, v) in [
            ("park_s", self.park_s),
            ("noop_s", self.noop_s),
            ("delay_unit_s", self.delay_unit_s),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if !(self.midroute_cooldown_s >= 0.0) {
            return Err(Error::InvalidConfig(
                "midroute_cooldown_s must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// `-x / (x + delay)`, with `x = 5` for an idle vehicle and `1` otherwise.
pub fn park_reward(idle: bool, delay: f64) -> f64 {
    let x = if idle { 5.0 } else { 1.0 };
    -x / (x + delay)
}

/// `exp(1 / (1 + delay))`.
pub fn dropoff_reward(delay: f64) -> f64 {
    (1.0 / (1.0 + delay)).exp()
}

/// `x / (x + delay)`, with `x = 1` for a solo request and `2` when sharing.
pub fn pickup_reward(first: bool, delay: f64) -> f64 {
    let x = if first { 1.0 } else { 2.0 };
    x / (x + delay)
}

pub const INFEASIBLE_REWARD: f64 = -1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequestStatus {
    Future,
    Pending,
    Assigned(usize),
    Onboard(usize),
    Served,
    Expired,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stop {
    Pickup(usize),
    Dropoff(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Purpose {
    Pickup(usize),
    Dropoff,
    Deliver,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Task {
    Decide,
    Wait,
    Drive { purpose: Purpose, target: NodeId },
    Retired,
}

#[derive(Debug, Clone)]
pub struct Vehicle {
    pub id: usize,
    pub node: NodeId,
    pub odometer_m: f64,
    /// Indices into the request table.
    pub onboard: Vec<usize>,
    /// Planned stop sequence; pickups precede their drop-offs.
    pub route: Vec<Stop>,
    task: Task,
    last_midroute_s: f64,
}

impl Vehicle {
    pub fn is_retired(&self) -> bool {
        self.task == Task::Retired
    }
}

/// One slot of the observation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub request: usize,
    pub pickup_detour_s: f64,
    pub dropoff_detour_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub features: Vec<f64>,
    pub slots: [Option<Candidate>; SLOTS],
}

impl Observation {
    pub fn mask(&self) -> [bool; SLOTS] {
        self.slots.map(|s| s.is_some())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub vehicle: usize,
    pub time_s: f64,
    pub midroute: bool,
    pub observation: Observation,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActionOutcome {
    pub reward: f64,
    pub infeasible: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TraceEvent {
    Decision {
        time_s: f64,
        vehicle: usize,
        action: usize,
        reward: f64,
        infeasible: bool,
        midroute: bool,
    },
    Pickup {
        time_s: f64,
        vehicle: usize,
        request: u64,
        odometer_m: f64,
    },
    Dropoff {
        time_s: f64,
        vehicle: usize,
        request: u64,
        odometer_m: f64,
    },
    Expire {
        time_s: f64,
        request: u64,
    },
    VehicleFinal {
        time_s: f64,
        vehicle: usize,
        odometer_m: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct EventKey {
    time_s: f64,
    vehicle: usize,
}

impl Eq for EventKey {}

impl PartialOrd for EventKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for EventKey {
    fn cmp(&self, other: &Self) -> Ordering {
        self.time_s
            .total_cmp(&other.time_s)
            .then(self.vehicle.cmp(&other.vehicle))
    }
}

#[derive(Debug, Clone)]
pub struct Simulation {
    network: Arc<RoadNetwork>,
    config: SimConfig,
    requests: Vec<RideRequest>,
    status: Vec<RequestStatus>,
    /// Next request (in issue order) not yet released to the pool.
    next_issue: usize,
    pending: Vec<usize>,
    vehicles: Vec<Vehicle>,
    events: BinaryHeap<Reverse<EventKey>>,
    now_s: f64,
    decision: Option<Decision>,
    trace: Vec<TraceEvent>,
    finished: bool,
}

impl Simulation {
    /// Requests must be sorted by issue time. One vehicle starts at each of
    /// `starts`; all ask for a decision at time zero.
    pub fn new(
        network: Arc<RoadNetwork>,
        requests: Vec<RideRequest>,
        starts: &[NodeId],
        config: SimConfig,
    ) -> Result<Self> {
        config.validate()?;
        if starts.is_empty() {
            return Err(Error::InvalidConfig(
                "fleet needs at least one vehicle".into(),
            ));
        }
        if starts.iter().any(|&n| n >= network.node_count()) {
            return Err(Error::InvalidConfig(
                "vehicle starts outside the network".into(),
            ));
        }
        if requests
            .windows(2)
            .any(|w| w[0].issue_time_s > w[1].issue_time_s)
        {
            return Err(Error::InvalidConfig(
                "requests must be sorted by issue time".into(),
            ));
        }
        for r in &requests {
            if r.origin == r.destination
                || r.origin >= network.node_count()
                || r.destination >= network.node_count()
                || r.passengers == 0
                || r.passengers > config.seats
                || r.expiry_time_s <= r.issue_time_s
            {
                return Err(Error::InvalidConfig(format!("request {} is invalid", r.id)));
            }
        }
        let vehicles = starts
            .iter()
            .enumerate()
            .map(|(id, &node)| Vehicle {
                id,
                node,
                odometer_m: 0.0,
                onboard: Vec::new(),
                route: Vec::new(),
                task: Task::Decide,
                last_midroute_s: f64::NEG_INFINITY,
            })
            .collect::<Vec<_>>();
        let events = (0..vehicles.len())
            .map(|vehicle| {
                Reverse(EventKey {
                    time_s: 0.0,
                    vehicle,
                })
            })
            .collect();
        Ok(Simulation {
            status: vec![RequestStatus::Future; requests.len()],
            network,
            config,
            requests,
            next_issue: 0,
            pending: Vec::new(),
            vehicles,
            events,
            now_s: 0.0,
            decision: None,
            trace: Vec::new(),
            finished: false,
        })
    }

    pub fn network(&self) -> &RoadNetwork {
        &self.network
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn now_s(&self) -> f64 {
        self.now_s
    }

    pub fn requests(&self) -> &[RideRequest] {
        &self.requests
    }

    pub fn status(&self) -> &[RequestStatus] {
        &self.status
    }

    pub fn vehicles(&self) -> &[Vehicle] {
        &self.vehicles
    }

    pub fn trace(&self) -> &[TraceEvent] {
        &self.trace
    }

    pub fn into_trace(self) -> Vec<TraceEvent> {
        self.trace
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    pub fn pending_decision(&self) -> Option<&Decision> {
        self.decision.as_ref()
    }

    /// Ids of requests that were delivered.
    pub fn served_ids(&self) -> Vec<u64> {
        self.requests
            .iter()
            .zip(&self.status)
            .filter(|(_, s)| **s == RequestStatus::Served)
            .map(|(r, _)| r.id)
            .collect()
    }

    /// Advances the clock to the next decision. Returns `None` once the
    /// episode has ended.
    pub fn next_decision(&mut self) -> Result<Option<&Decision>> {
        if self.decision.is_some() {
            return Ok(self.decision.as_ref());
        }
        while let Some(Reverse(key)) = self.events.pop() {
            self.now_s = key.time_s;
            self.refresh_pool();
            if let Some(d) = self.handle_event(key.vehicle) {
                self.decision = Some(d);
                return Ok(self.decision.as_ref());
            }
        }
        if !self.finished {
            self.finished = true;
            self.refresh_pool();
            for i in self.pending.drain(..).collect::<Vec<_>>() {
                self.expire(i);
            }
            while self.next_issue < self.requests.len() {
                self.expire(self.next_issue);
                self.next_issue += 1;
            }
        }
        Ok(None)
    }

    /// Runs the episode to completion with `policy` choosing every action.
    pub fn run<F>(&mut self, mut policy: F) -> Result<()>
    where
        F: FnMut(&Decision) -> usize,
    {
        while let Some(d) = self.next_decision()? {
            let action = policy(d);
            self.apply(action)?;
        }
        Ok(())
    }

    fn schedule(&mut self, vehicle: usize, time_s: f64) {
        self.events.push(Reverse(EventKey { time_s, vehicle }));
    }

    fn refresh_pool(&mut self) {
        while self.next_issue < self.requests.len()
            && self.requests[self.next_issue].issue_time_s as f64 <= self.now_s
        {
            self.status[self.next_issue] = RequestStatus::Pending;
            self.pending.push(self.next_issue);
            self.next_issue += 1;
        }
        let now = self.now_s;
        let (live, dead): (Vec<usize>, Vec<usize>) = self
            .pending
            .iter()
            .partition(|&&i| self.requests[i].expiry_time_s as f64 >= now);
        if !dead.is_empty() {
            self.pending = live;
            for i in dead {
                self.expire(i);
            }
        }
    }

    fn expire(&mut self, i: usize) {
        self.status[i] = RequestStatus::Expired;
        self.trace.push(TraceEvent::Expire {
            time_s: self.now_s,
            request: self.requests[i].id,
        });
    }

    fn demand_exhausted(&self) -> bool {
        self.pending.is_empty() && self.next_issue == self.requests.len()
    }

    fn handle_event(&mut self, v: usize) -> Option<Decision> {
        match self.vehicles[v].task {
            Task::Decide | Task::Wait => self.decision_point(v),
            Task::Drive { purpose, target } => {
                self.hop(v, target);
                if self.vehicles[v].node == target {
                    self.arrive(v, purpose);
                    return self.decision_point(v);
                }
                if purpose == Purpose::Dropoff && self.midroute_due(v) {
                    self.vehicles[v].last_midroute_s = self.now_s;
                    return Some(self.make_decision(v, true));
                }
                self.schedule_hop(v, target);
                None
            }
            Task::Retired => None,
        }
    }

    /// Called when vehicle `v` is free to act at the current time.
    fn decision_point(&mut self, v: usize) -> Option<Decision> {
        if self.demand_exhausted() {
            if let Some(target) = self.quickest_destination(v) {
                self.vehicles[v].task = Task::Drive {
                    purpose: Purpose::Deliver,
                    target,
                };
                self.schedule_hop(v, target);
            } else {
                self.vehicles[v].task = Task::Retired;
                self.trace.push(TraceEvent::VehicleFinal {
                    time_s: self.now_s,
                    vehicle: v,
                    odometer_m: self.vehicles[v].odometer_m,
                });
            }
            return None;
        }
        self.vehicles[v].task = Task::Decide;
        Some(self.make_decision(v, false))
    }

    fn midroute_due(&self, v: usize) -> bool {
        self.config.midroute
            && self.free_seats(v) > 0
            && self.now_s - self.vehicles[v].last_midroute_s >= self.config.midroute_cooldown_s
            && self.candidates(v).iter().any(Option::is_some)
    }

    fn hop(&mut self, v: usize, target: NodeId) {
        let vehicle = &mut self.vehicles[v];
        let next = self
            .network
            .next_hop(vehicle.node, target)
            .expect("driving vehicle is not at its target");
        vehicle.odometer_m += self
            .network
            .edge_length(vehicle.node, next)
            .expect("next hop is adjacent");
        vehicle.node = next;
    }

    fn schedule_hop(&mut self, v: usize, target: NodeId) {
        let node = self.vehicles[v].node;
        let next = self
            .network
            .next_hop(node, target)
            .expect("driving vehicle is not at its target");
        let dt = self.network.travel_time_s(node, next);
        self.schedule(v, self.now_s + dt);
    }

    fn arrive(&mut self, v: usize, purpose: Purpose) {
        if let Purpose::Pickup(r) = purpose {
            self.board(v, r);
        }
        self.alight_here(v);
    }

    fn board(&mut self, v: usize, r: usize) {
        debug_assert_eq!(self.status[r], RequestStatus::Assigned(v));
        self.status[r] = RequestStatus::Onboard(v);
        let vehicle = &mut self.vehicles[v];
        vehicle.onboard.push(r);
        vehicle.route.retain(|s| *s != Stop::Pickup(r));
        self.trace.push(TraceEvent::Pickup {
            time_s: self.now_s,
            vehicle: v,
            request: self.requests[r].id,
            odometer_m: vehicle.odometer_m,
        });
    }

    fn alight_here(&mut self, v: usize) {
        let node = self.vehicles[v].node;
        let leaving: Vec<usize> = self.vehicles[v]
            .onboard
            .iter()
            .copied()
            .filter(|&r| self.requests[r].destination == node)
            .collect();
        for r in leaving {
            self.status[r] = RequestStatus::Served;
            let vehicle = &mut self.vehicles[v];
            vehicle.onboard.retain(|&x| x != r);
            vehicle.route.retain(|s| *s != Stop::Dropoff(r));
            self.trace.push(TraceEvent::Dropoff {
                time_s: self.now_s,
                vehicle: v,
                request: self.requests[r].id,
                odometer_m: vehicle.odometer_m,
            });
        }
    }

    pub fn onboard_passengers(&self, v: usize) -> u32 {
        self.vehicles[v]
            .onboard
            .iter()
            .map(|&r| self.requests[r].passengers as u32)
            .sum()
    }

    fn committed_passengers(&self, v: usize) -> u32 {
        let assigned: u32 = self.vehicles[v]
            .route
            .iter()
            .filter_map(|s| match s {
                Stop::Pickup(r) => Some(self.requests[*r].passengers as u32),
                Stop::Dropoff(_) => None,
            })
            .sum();
        self.onboard_passengers(v) + assigned
    }

    pub fn free_seats(&self, v: usize) -> u32 {
        (self.config.seats as u32).saturating_sub(self.committed_passengers(v))
    }

    fn is_idle(&self, v: usize) -> bool {
        self.vehicles[v].onboard.is_empty() && self.vehicles[v].route.is_empty()
    }

    /// The onboard destination reachable soonest, ties to the lower node id.
    pub fn quickest_destination(&self, v: usize) -> Option<NodeId> {
        let vehicle = &self.vehicles[v];
        vehicle
            .onboard
            .iter()
            .map(|&r| self.requests[r].destination)
            .min_by(|&a, &b| {
                self.network
                    .travel_time_s(vehicle.node, a)
                    .total_cmp(&self.network.travel_time_s(vehicle.node, b))
                    .then(a.cmp(&b))
            })
    }

    fn stop_node(&self, stop: Stop) -> NodeId {
        match stop {
            Stop::Pickup(r) => self.requests[r].origin,
            Stop::Dropoff(r) => self.requests[r].destination,
        }
    }

    fn route_nodes(&self, v: usize) -> Vec<NodeId> {
        self.vehicles[v]
            .route
            .iter()
            .map(|&s| self.stop_node(s))
            .collect()
    }

    /// The three feasible pending requests with the smallest pickup detour.
    pub fn candidates(&self, v: usize) -> [Option<Candidate>; SLOTS] {
        let mut out = [None; SLOTS];
        let free = self.free_seats(v);
        if free == 0 {
            return out;
        }
        let here = self.vehicles[v].node;
        let route = self.route_nodes(v);
        let mut found: Vec<Candidate> = self
            .pending
            .iter()
            .filter(|&&r| {
                let req = &self.requests[r];
                req.passengers as u32 <= free
                    && self.now_s + self.network.travel_time_s(here, req.origin)
                        <= req.expiry_time_s as f64
            })
            .map(|&r| {
                let req = &self.requests[r];
                let (pickup, dropoff) =
                    insertion_detours(&self.network, here, &route, req.origin, req.destination);
                Candidate {
                    request: r,
                    pickup_detour_s: pickup,
                    dropoff_detour_s: dropoff,
                }
            })
            .collect();
        found.sort_by(|a, b| {
            a.pickup_detour_s
                .total_cmp(&b.pickup_detour_s)
                .then(a.request.cmp(&b.request))
        });
        for (slot, c) in out.iter_mut().zip(found) {
            *slot = Some(c);
        }
        out
    }

    fn make_decision(&self, v: usize, midroute: bool) -> Decision {
        let slots = self.candidates(v);
        let net = &self.network;
        let mut f = Vec::with_capacity(OBSERVATION_LEN);
        let (x, y) = net.coords(self.vehicles[v].node);
        f.extend([x, y, self.free_seats(v) as f64 / self.config.seats as f64]);
        match self.quickest_destination(v) {
            Some(d) => {
                let (dx, dy) = net.coords(d);
                f.extend([dx, dy]);
            }
            None => f.extend([SENTINEL, SENTINEL]),
        }
        let minutes = |s: f64| s / self.config.delay_unit_s / 10.0;
        for slot in &slots {
            match slot {
                Some(c) => {
                    let req = &self.requests[c.request];
                    let (ox, oy) = net.coords(req.origin);
                    let (dx, dy) = net.coords(req.destination);
                    f.extend([
                        ox,
                        oy,
                        dx,
                        dy,
                        req.passengers as f64 / 4.0,
                        minutes(c.pickup_detour_s),
                        minutes(c.dropoff_detour_s),
                    ]);
                }
                None => f.extend([SENTINEL; SLOT_FEATURES]),
            }
        }
        f.extend(slots.map(|s| if s.is_some() { 1.0 } else { 0.0 }));
        Decision {
            vehicle: v,
            time_s: self.now_s,
            midroute,
            observation: Observation { features: f, slots },
        }
    }

    /// Answers the pending decision.
    pub fn apply(&mut self, action: usize) -> Result<ActionOutcome> {
        if action >= ACTION_COUNT {
            return Err(Error::InvalidAction(action));
        }
        let decision = self.decision.take().ok_or(Error::NoPendingDecision)?;
        let v = decision.vehicle;
        let unit = self.config.delay_unit_s;
        let here = self.vehicles[v].node;
        let outcome = match action {
            PARK => {
                let reward = park_reward(self.is_idle(v), self.config.park_s / unit);
                self.vehicles[v].task = Task::Wait;
                self.schedule(v, self.now_s + self.config.park_s);
                Some(reward)
            }
            DROPOFF if decision.midroute => {
                // Keep driving towards the current drop-off.
                if let Task::Drive { target, .. } = self.vehicles[v].task {
                    self.schedule_hop(v, target);
                }
                Some(0.0)
            }
            DROPOFF => self.quickest_destination(v).map(|target| {
                let delay = self.network.travel_time_s(here, target) / unit;
                self.vehicles[v].task = Task::Drive {
                    purpose: Purpose::Dropoff,
                    target,
                };
                self.schedule_hop(v, target);
                dropoff_reward(delay)
            }),
            _ => {
                decision.observation.slots[action - PICKUP].map(|c| self.start_pickup(v, c.request))
            }
        };
        let (reward, infeasible) = match outcome {
            Some(r) => (r, false),
            None => {
                self.vehicles[v].task = Task::Wait;
                self.schedule(v, self.now_s + self.config.noop_s);
                (INFEASIBLE_REWARD, true)
            }
        };
        self.trace.push(TraceEvent::Decision {
            time_s: self.now_s,
            vehicle: v,
            action,
            reward,
            infeasible,
            midroute: decision.midroute,
        });
        Ok(ActionOutcome { reward, infeasible })
    }

    fn start_pickup(&mut self, v: usize, r: usize) -> f64 {
        let first = self.vehicles[v].onboard.is_empty();
        let here = self.vehicles[v].node;
        let origin = self.requests[r].origin;
        let travel = self.network.travel_time_s(here, origin);
        self.pending.retain(|&x| x != r);
        self.status[r] = RequestStatus::Assigned(v);

        // The vehicle heads straight for the origin; the drop-off goes where
        // it adds the least travel time.
        let mut route = self.vehicles[v].route.clone();
        route.insert(0, Stop::Pickup(r));
        let nodes: Vec<NodeId> = route.iter().map(|&s| self.stop_node(s)).collect();
        let dest = self.requests[r].destination;
        let best = (1..=nodes.len())
            .min_by(|&a, &b| {
                let ca = route_cost_with(&self.network, here, &nodes, a, dest);
                let cb = route_cost_with(&self.network, here, &nodes, b, dest);
                ca.total_cmp(&cb).then(a.cmp(&b))
            })
            .expect("route holds the pickup");
        route.insert(best, Stop::Dropoff(r));
        self.vehicles[v].route = route;

        if here == origin {
            self.board(v, r);
            self.vehicles[v].task = Task::Decide;
            self.schedule(v, self.now_s);
        } else {
            self.vehicles[v].task = Task::Drive {
                purpose: Purpose::Pickup(r),
                target: origin,
            };
            self.schedule_hop(v, origin);
        }
        pickup_reward(first, travel / self.config.delay_unit_s)
    }

    /// Checks seat, request and route invariants; returns a description of
    /// the first violation.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        for (v, vehicle) in self.vehicles.iter().enumerate() {
            let onboard = self.onboard_passengers(v);
            if onboard > self.config.seats as u32 {
                return Err(format!("vehicle {v} carries {onboard} passengers"));
            }
            for (i, stop) in vehicle.route.iter().enumerate() {
                if let Stop::Pickup(r) = stop {
                    if !vehicle.route[i..].contains(&Stop::Dropoff(*r)) {
                        return Err(format!("vehicle {v}: pickup of {r} has no later drop-off"));
                    }
                    if self.status[*r] != RequestStatus::Assigned(v) {
                        return Err(format!("vehicle {v}: routed request {r} not assigned"));
                    }
                }
                if let Stop::Dropoff(r) = stop {
                    if vehicle.route[i..].contains(&Stop::Pickup(*r)) {
                        return Err(format!("vehicle {v}: drop-off of {r} before pickup"));
                    }
                }
            }
            for &r in &vehicle.onboard {
                if self.status[r] != RequestStatus::Onboard(v) {
                    return Err(format!(
                        "vehicle {v}: onboard request {r} has status {:?}",
                        self.status[r]
                    ));
                }
            }
        }
        let mut onboard_seen = 0;
        for (r, s) in self.status.iter().enumerate() {
            match s {
                RequestStatus::Onboard(v) => {
                    onboard_seen += 1;
                    if !self.vehicles[*v].onboard.contains(&r) {
                        return Err(format!("request {r} onboard but not in vehicle {v}"));
                    }
                }
                RequestStatus::Pending if !self.pending.contains(&r) => {
                    return Err(format!("pending request {r} missing from pool"));
                }
                _ => {}
            }
        }
        let carried: usize = self.vehicles.iter().map(|v| v.onboard.len()).sum();
        if carried != onboard_seen {
            return Err("onboard bookkeeping differs".into());
        }
        if self.finished
            && self
                .status
                .iter()
                .any(|s| !matches!(s, RequestStatus::Served | RequestStatus::Expired))
        {
            return Err("episode ended with open requests".into());
        }
        Ok(())
    }
}

fn route_cost(network: &RoadNetwork, start: NodeId, nodes: &[NodeId]) -> f64 {
    let mut at = start;
    let mut total = 0.0;
    for &n in nodes {
        total += network.travel_time_s(at, n);
        at = n;
    }
    total
}

fn route_cost_with(
    network: &RoadNetwork,
    start: NodeId,
    nodes: &[NodeId],
    position: usize,
    extra: NodeId,
) -> f64 {
    let mut with = nodes.to_vec();
    with.insert(position, extra);
    route_cost(network, start, &with)
}

/// Minimum extra travel time for inserting `origin` anywhere into the route,
/// and the further minimum extra time for then inserting `destination`
/// somewhere after it.
pub fn insertion_detours(
    network: &RoadNetwork,
    start: NodeId,
    route: &[NodeId],
    origin: NodeId,
    destination: NodeId,
) -> (f64, f64) {
    let base = route_cost(network, start, route);
    let mut best_pickup = f64::INFINITY;
    let mut best_joint = f64::INFINITY;
    for i in 0..=route.len() {
        let mut with_origin = route.to_vec();
        with_origin.insert(i, origin);
        best_pickup = best_pickup.min(route_cost(network, start, &with_origin));
        for j in i + 1..=with_origin.len() {
            best_joint = best_joint.min(route_cost_with(
                network,
                start,
                &with_origin,
                j,
                destination,
            ));
        }
    }
    (best_pickup - base, best_joint - best_pickup)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rideshare::network::LatticeConfig;

    fn net() -> Arc<RoadNetwork> {
        Arc::new(
            RoadNetwork::lattice(&LatticeConfig {
                width: 6,
                height: 6,
                edge_m: 100.0,
                speed_mps: 8.0,
            })
            .unwrap(),
        )
    }

    fn req(id: u64, origin: NodeId, destination: NodeId, pax: u8, issue: u64) -> RideRequest {
        RideRequest {
            id,
            origin,
            destination,
            passengers: pax,
            issue_time_s: issue,
            expiry_time_s: issue + 600,
        }
    }

    #[test]
    fn reward_formulas() {
        assert_eq!(park_reward(true, 0.0), -1.0);
        assert!((park_reward(false, 5.0) + 1.0 / 6.0).abs() < 1e-12);
        assert!((dropoff_reward(0.0) - std::f64::consts::E).abs() < 1e-12);
        assert_eq!(pickup_reward(true, 0.0), 1.0);
        assert_eq!(pickup_reward(false, 2.0), 0.5);
    }

    #[test]
    fn empty_pool_gives_masked_observation() {
        let mut sim = Simulation::new(
            net(),
            vec![req(0, 1, 2, 1, 100)],
            &[0],
            SimConfig::default(),
        )
        .unwrap();
        let d = sim.next_decision().unwrap().unwrap().clone();
        assert_eq!(d.observation.mask(), [false; 3]);
        assert_eq!(d.observation.features.len(), OBSERVATION_LEN);
        assert!(d.observation.features[5..26].iter().all(|&x| x == SENTINEL));
    }

    #[test]
    fn full_vehicle_sees_no_requests() {
        let config = SimConfig {
            seats: 2,
            ..SimConfig::default()
        };
        let requests = vec![req(0, 0, 5, 2, 0), req(1, 0, 30, 1, 0)];
        let mut sim = Simulation::new(net(), requests, &[0], config).unwrap();
        let d = sim.next_decision().unwrap().unwrap().clone();
        assert!(d.observation.slots[0].is_some());
        let slot = d
            .observation
            .slots
            .iter()
            .position(|s| s.map(|c| c.request) == Some(0))
            .unwrap();
        sim.apply(PICKUP + slot).unwrap();
        let d = sim.next_decision().unwrap().unwrap().clone();
        assert_eq!(sim.free_seats(0), 0);
        assert_eq!(d.observation.mask(), [false; 3]);
    }

    #[test]
    fn single_request_detour_matches_brute_force() {
        let network = net();
        let mut sim = Simulation::new(
            network.clone(),
            vec![req(0, 14, 33, 1, 0)],
            &[0],
            SimConfig::default(),
        )
        .unwrap();
        let d = sim.next_decision().unwrap().unwrap().clone();
        let c = d.observation.slots[0].unwrap();
        assert_eq!(c.pickup_detour_s, network.travel_time_s(0, 14));
        assert_eq!(c.dropoff_detour_s, network.travel_time_s(14, 33));
    }

    #[test]
    fn pickup_then_dropoff_rewards() {
        let network = net();
        let mut sim = Simulation::new(
            network.clone(),
            vec![req(0, 2, 4, 1, 0), req(1, 30, 31, 1, 3000)],
            &[0],
            SimConfig::default(),
        )
        .unwrap();
        sim.next_decision().unwrap();
        let out = sim.apply(PICKUP).unwrap();
        let delay = network.travel_time_s(0, 2) / 60.0;
        assert!((out.reward - 1.0 / (1.0 + delay)).abs() < 1e-12);
        let d = sim.next_decision().unwrap().unwrap().clone();
        assert_eq!(d.time_s, 25.0);
        assert!(!d.midroute);
        let out = sim.apply(DROPOFF).unwrap();
        assert!((out.reward - (1.0f64 / (1.0 + 25.0 / 60.0)).exp()).abs() < 1e-12);
        assert_eq!(sim.next_decision().unwrap().unwrap().time_s, 50.0);
        assert_eq!(sim.status()[0], RequestStatus::Served);
        sim.run(|_| PARK).unwrap();
        sim.check_invariants().unwrap();
    }

    #[test]
    fn infeasible_actions_cost_one_and_wait() {
        let mut sim =
            Simulation::new(net(), vec![req(0, 2, 4, 1, 50)], &[0], SimConfig::default()).unwrap();
        sim.next_decision().unwrap();
        let out = sim.apply(DROPOFF).unwrap();
        assert_eq!(out.reward, -1.0);
        assert!(out.infeasible);
        assert_eq!(sim.next_decision().unwrap().unwrap().time_s, 10.0);
        let out = sim.apply(PICKUP + 2).unwrap();
        assert_eq!(out.reward, -1.0);
        assert!(matches!(sim.apply(PARK), Err(Error::NoPendingDecision)));
    }

    #[test]
    fn ties_go_to_lower_vehicle_id() {
        let mut sim = Simulation::new(
            net(),
            vec![req(0, 2, 4, 1, 100)],
            &[7, 3, 9],
            SimConfig::default(),
        )
        .unwrap();
        let mut order = Vec::new();
        for _ in 0..3 {
            order.push(sim.next_decision().unwrap().unwrap().vehicle);
            sim.apply(PARK).unwrap();
        }
        assert_eq!(order, vec![0, 1, 2]);
    }

    #[test]
    fn unclaimed_requests_expire() {
        let mut sim =
            Simulation::new(net(), vec![req(0, 2, 4, 1, 0)], &[0], SimConfig::default()).unwrap();
        sim.run(|_| PARK).unwrap();
        assert_eq!(sim.status()[0], RequestStatus::Expired);
        assert!(sim
            .trace()
            .iter()
            .any(|e| matches!(e, TraceEvent::Expire { request: 0, .. })));
        sim.check_invariants().unwrap();
    }

    #[test]
    fn midroute_pickup_is_offered() {
        let network = net();
        // Passenger heading to the far corner; a second request appears near
        // the path once the vehicle is under way.
        let requests = vec![req(0, 0, 35, 1, 0), req(1, 3, 4, 1, 20)];
        let mut sim = Simulation::new(network, requests, &[0], SimConfig::default()).unwrap();
        sim.next_decision().unwrap();
        sim.apply(PICKUP).unwrap();
        sim.next_decision().unwrap();
        sim.apply(DROPOFF).unwrap();
        let d = sim.next_decision().unwrap().unwrap().clone();
        assert!(d.midroute);
        assert_eq!(d.observation.slots[0].unwrap().request, 1);
        let out = sim.apply(DROPOFF).unwrap();
        assert_eq!(out.reward, 0.0);
        sim.run(|d| {
            if d.observation.slots[0].is_some() {
                PICKUP
            } else {
                DROPOFF
            }
        })
        .unwrap();
        sim.check_invariants().unwrap();
        assert!(sim.status().iter().all(|s| *s == RequestStatus::Served));
    }

    #[test]
    fn insertion_detours_are_non_negative() {
        let network = net();
        for start in [0, 7, 20] {
            for route in [vec![], vec![35], vec![5, 30, 12]] {
                for (o, d) in [(1, 2), (33, 6), (12, 13)] {
                    let (p, q) = insertion_detours(&network, start, &route, o, d);
                    assert!(p >= 0.0 && q >= 0.0);
                }
            }
        }
    }
}
