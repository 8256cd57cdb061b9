//! Fleet metrics computed from a finished simulation trace.
//!
//! * `served_pct`: delivered requests over all requests, in percent.
//! * `rs_pct`: share of delivered requests whose onboard interval overlaps
//!   the onboard interval of another request in the same vehicle.
//! * `sigma_pass`: population variance of the number of passengers each
//!   vehicle delivered.
//! * `mean_distance_km`: mean odometer reading over the fleet.
//! * `detour_ratio`: mean over delivered requests of the extra onboard
//!   distance relative to the direct shortest path, in percent.
//! * waiting time: pickup time minus issue time of each picked-up request.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use xfer_envs::rideshare::{RideRequest, RoadNetwork, TraceEvent};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModMetrics {
    pub served_pct: f64,
    pub rs_pct: f64,
    pub sigma_pass: f64,
    pub mean_distance_km: f64,
    pub detour_ratio: f64,
    pub served: usize,
    pub expired: usize,
    pub total: usize,
    /// `(request id, waiting seconds)` in request-id order.
    pub waiting_times_s: Vec<(u64, f64)>,
}

impl ModMetrics {
    /// The five headline columns, in table order.
    pub fn headline(&self) -> [f64; 5] {
        [
            self.served_pct,
            self.rs_pct,
            self.sigma_pass,
            self.mean_distance_km,
            self.detour_ratio,
        ]
    }

    pub fn mean_waiting_s(&self) -> f64 {
        if self.waiting_times_s.is_empty() {
            return 0.0;
        }
        self.waiting_times_s.iter().map(|(_, w)| w).sum::<f64>() / self.waiting_times_s.len() as f64
    }
}

pub const HEADLINE_COLUMNS: [&str; 5] = [
    "served_pct",
    "rs_pct",
    "sigma_pass",
    "mean_distance_km",
    "detour_ratio",
];

#[derive(Debug, Default, Clone, Copy)]
struct Leg {
    vehicle: usize,
    time_s: f64,
    odometer_m: f64,
}

pub fn compute_mod_metrics(
    trace: &[TraceEvent],
    demand: &[RideRequest],
    network: &RoadNetwork,
) -> Result<ModMetrics> {
    let index: HashMap<u64, &RideRequest> = demand.iter().map(|r| (r.id, r)).collect();
    let lookup = |id: u64| {
        index
            .get(&id)
            .copied()
            .ok_or_else(|| Error::IncompleteTrace(format!("unknown request {id}")))
    };
    let mut pickups: BTreeMap<u64, Leg> = BTreeMap::new();
    let mut dropoffs: BTreeMap<u64, Leg> = BTreeMap::new();
    let mut expired: BTreeMap<u64, f64> = BTreeMap::new();
    let mut odometers: BTreeMap<usize, f64> = BTreeMap::new();
    for event in trace {
        match *event {
            TraceEvent::Pickup {
                time_s,
                vehicle,
                request,
                odometer_m,
            } => {
                lookup(request)?;
                let leg = Leg {
                    vehicle,
                    time_s,
                    odometer_m,
                };
                if pickups.insert(request, leg).is_some() {
                    return Err(Error::IncompleteTrace(format!(
                        "request {request} picked up twice"
                    )));
                }
            }
            TraceEvent::Dropoff {
                time_s,
                vehicle,
                request,
                odometer_m,
            } => {
                let leg = Leg {
                    vehicle,
                    time_s,
                    odometer_m,
                };
                match pickups.get(&request) {
                    Some(p) if p.vehicle == vehicle && p.time_s <= time_s => {}
                    _ => {
                        return Err(Error::IncompleteTrace(format!(
                            "request {request} dropped off without a matching pickup"
                        )))
                    }
                }
                if dropoffs.insert(request, leg).is_some() {
                    return Err(Error::IncompleteTrace(format!(
                        "request {request} dropped off twice"
                    )));
                }
            }
            TraceEvent::Expire { time_s, request } => {
                lookup(request)?;
                expired.insert(request, time_s);
            }
            TraceEvent::VehicleFinal {
                vehicle,
                odometer_m,
                ..
            } => {
                odometers.insert(vehicle, odometer_m);
            }
            TraceEvent::Decision { .. } => {}
        }
    }

    for r in demand {
        let done = dropoffs.contains_key(&r.id);
        let gone = expired.contains_key(&r.id);
        if done == gone {
            return Err(Error::IncompleteTrace(format!(
                "request {} is neither delivered nor expired exactly once",
                r.id
            )));
        }
    }
    if pickups.len() != dropoffs.len() {
        return Err(Error::IncompleteTrace(
            "some passengers are still on board".into(),
        ));
    }
    for leg in pickups.values() {
        if !odometers.contains_key(&leg.vehicle) {
            return Err(Error::IncompleteTrace(format!(
                "vehicle {} has no final record",
                leg.vehicle
            )));
        }
    }

    let total = demand.len();
    let served = dropoffs.len();
    let pct = |n: usize, d: usize| if d == 0 { 0.0 } else { 100.0 * n as f64 / d as f64 };

    // Onboard intervals grouped by vehicle, to find overlaps.
    let mut by_vehicle: BTreeMap<usize, Vec<(f64, f64)>> = BTreeMap::new();
    for (id, drop) in &dropoffs {
        let pick = pickups[id];
        by_vehicle
            .entry(drop.vehicle)
            .or_default()
            .push((pick.time_s, drop.time_s));
    }
    let mut shared = 0;
    for intervals in by_vehicle.values() {
        for (i, a) in intervals.iter().enumerate() {
            let overlaps = intervals
                .iter()
                .enumerate()
                .any(|(j, b)| i != j && a.0 < b.1 && b.0 < a.1);
            if overlaps {
                shared += 1;
            }
        }
    }

    let mut passengers: BTreeMap<usize, f64> = odometers.keys().map(|&v| (v, 0.0)).collect();
    let mut detours = Vec::with_capacity(served);
    for (id, drop) in &dropoffs {
        let r = lookup(*id)?;
        *passengers.entry(drop.vehicle).or_default() += r.passengers as f64;
        let direct = network.distance_m(r.origin, r.destination);
        let onboard = drop.odometer_m - pickups[id].odometer_m;
        detours.push((onboard - direct) / direct * 100.0);
    }

    let mean = |xs: &[f64]| {
        if xs.is_empty() {
            0.0
        } else {
            xs.iter().sum::<f64>() / xs.len() as f64
        }
    };
    let loads: Vec<f64> = passengers.values().copied().collect();
    let load_mean = mean(&loads);
    let sigma_pass = mean(
        &loads
            .iter()
            .map(|l| (l - load_mean).powi(2))
            .collect::<Vec<_>>(),
    );
    let distances: Vec<f64> = odometers.values().map(|m| m / 1000.0).collect();

    let waiting_times_s = pickups
        .iter()
        .map(|(id, leg)| Ok((*id, leg.time_s - lookup(*id)?.issue_time_s as f64)))
        .collect::<Result<Vec<_>>>()?;

    Ok(ModMetrics {
        served_pct: pct(served, total),
        rs_pct: pct(shared, served),
        sigma_pass,
        mean_distance_km: mean(&distances),
        detour_ratio: mean(&detours),
        served,
        expired: expired.len(),
        total,
        waiting_times_s,
    })
}
