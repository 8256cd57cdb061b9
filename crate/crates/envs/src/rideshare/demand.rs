//! Synthetic peak-hour demand and trip CSV ingestion.
//!
//! The lattice is cut into square zones. A few central zones form the
//! business district and the rest are residential. Morning trips mostly run
//! from residential zones into the business district; evening trips mostly
//! run the other way.

use std::path::Path;
use std::str::FromStr;

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::network::NodeId;
use crate::error::{Error, Result};

pub const MAX_PASSENGERS: u8 = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RideRequest {
    pub id: u64,
    pub origin: NodeId,
    pub destination: NodeId,
    pub passengers: u8,
    pub issue_time_s: u64,
    pub expiry_time_s: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pattern {
    Morning,
    Evening,
}

impl FromStr for Pattern {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "morning" => Ok(Pattern::Morning),
            "evening" => Ok(Pattern::Evening),
            _ => Err(Error::InvalidConfig(format!(
                "unknown demand pattern `{s}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemandConfig {
    pub window_s: u64,
    pub expiry_s: u64,
    /// Zones per side; the lattice is split into `zones x zones` blocks.
    pub zones: usize,
    /// Probability that a morning origin (evening destination) lies in a
    /// residential zone.
    pub residential_share: f64,
    /// Probability that a morning destination (evening origin) lies in the
    /// business district.
    pub business_share: f64,
    /// Weights of 1, 2, 3 and 4 passengers.
    pub passenger_weights: [f64; 4],
}

impl Default for DemandConfig {
    fn default() -> Self {
        DemandConfig {
            window_s: 3 * 3600,
            expiry_s: 600,
            zones: 4,
            residential_share: 0.8,
            business_share: 0.7,
            passenger_weights: [0.6, 0.25, 0.1, 0.05],
        }
    }
}

impl DemandConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window_s == 0 || self.expiry_s == 0 {
            return Err(Error::InvalidConfig(
                "demand window and expiry must be positive".into(),
            ));
        }
        if self.zones < 3 {
            return Err(Error::InvalidConfig("need at least 3x3 zones".into()));
        }
        for p in [self.residential_share, self.business_share] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidConfig(
                    "zone shares must lie in [0, 1]".into(),
                ));
            }
        }
        if self.passenger_weights.iter().any(|w| *w < 0.0)
            || self.passenger_weights.iter().sum::<f64>() <= 0.0
        {
            return Err(Error::InvalidConfig("bad passenger weights".into()));
        }
        Ok(())
    }
}

/// Zone layout of a `width x height` lattice.
#[derive(Debug, Clone)]
pub struct Zoning {
    width: usize,
    height: usize,
    zones: usize,
}

impl Zoning {
    pub fn new(width: usize, height: usize, zones: usize) -> Result<Self> {
        if zones == 0 || width < zones || height < zones {
            return Err(Error::InvalidConfig(format!(
                "cannot split a {width}x{height} lattice into {zones}x{zones} zones"
            )));
        }
        Ok(Zoning {
            width,
            height,
            zones,
        })
    }

    pub fn zone_count(&self) -> usize {
        self.zones * self.zones
    }

    pub fn zone_of(&self, node: NodeId) -> usize {
        let (x, y) = (node % self.width, node / self.width);
        let zx = x * self.zones / self.width;
        let zy = y * self.zones / self.height;
        zy * self.zones + zx
    }

    /// Zones not touching the outer edge of the zone grid.
    pub fn is_business(&self, zone: usize) -> bool {
        let (zx, zy) = (zone % self.zones, zone / self.zones);
        zx > 0 && zy > 0 && zx + 1 < self.zones && zy + 1 < self.zones
    }

    fn nodes_in(&self, zone: usize) -> Vec<NodeId> {
        (0..self.width * self.height)
            .filter(|&n| self.zone_of(n) == zone)
            .collect()
    }
}

fn zone_weights(zoning: &Zoning, business_share: f64) -> Vec<f64> {
    let business = (0..zoning.zone_count())
        .filter(|&z| zoning.is_business(z))
        .count() as f64;
    let residential = zoning.zone_count() as f64 - business;
    (0..zoning.zone_count())
        .map(|z| {
            if zoning.is_business(z) {
                business_share / business
            } else {
                (1.0 - business_share) / residential
            }
        })
        .collect()
}

/// Origin and destination zone distributions for a pattern.
pub fn zone_distributions(
    zoning: &Zoning,
    pattern: Pattern,
    config: &DemandConfig,
) -> (Vec<f64>, Vec<f64>) {
    let residential_heavy = zone_weights(zoning, 1.0 - config.residential_share);
    let business_heavy = zone_weights(zoning, config.business_share);
    match pattern {
        Pattern::Morning => (residential_heavy, business_heavy),
        Pattern::Evening => (business_heavy, residential_heavy),
    }
}

/// `count` requests with integer issue times uniform over the window, sorted
/// by issue time. Ids are `0..count` in issue order.
pub fn generate_demand<R: Rng + ?Sized>(
    zoning: &Zoning,
    pattern: Pattern,
    count: usize,
    config: &DemandConfig,
    rng: &mut R,
) -> Result<Vec<RideRequest>> {
    config.validate()?;
    if count == 0 {
        return Err(Error::InvalidConfig("demand count must be positive".into()));
    }
    let (origin_w, dest_w) = zone_distributions(zoning, pattern, config);
    let origin_zone = WeightedIndex::new(&origin_w).map_err(invalid)?;
    let dest_zone = WeightedIndex::new(&dest_w).map_err(invalid)?;
    let pax = WeightedIndex::new(config.passenger_weights).map_err(invalid)?;
    let members: Vec<Vec<NodeId>> = (0..zoning.zone_count())
        .map(|z| zoning.nodes_in(z))
        .collect();

    let mut times: Vec<u64> = (0..count)
        .map(|_| rng.gen_range(0..config.window_s))
        .collect();
    times.sort_unstable();
    let mut requests = Vec::with_capacity(count);
    for (id, issue) in times.into_iter().enumerate() {
        let zo = &members[origin_zone.sample(rng)];
        let origin = zo[rng.gen_range(0..zo.len())];
        let destination = loop {
            let zd = &members[dest_zone.sample(rng)];
            let d = zd[rng.gen_range(0..zd.len())];
            if d != origin {
                break d;
            }
        };
        requests.push(RideRequest {
            id: id as u64,
            origin,
            destination,
            passengers: pax.sample(rng) as u8 + 1,
            issue_time_s: issue,
            expiry_time_s: issue + config.expiry_s,
        });
    }
    Ok(requests)
}

fn invalid(e: impl std::fmt::Display) -> Error {
    Error::InvalidConfig(e.to_string())
}

#[derive(Debug, Serialize, Deserialize)]
struct TripRow {
    id: u64,
    issue_time_s: u64,
    origin_node: usize,
    dest_node: usize,
    passengers: u8,
}

/// Reads `id,issue_time_s,origin_node,dest_node,passengers` rows. Expiry is
/// `issue_time_s + expiry_s`. Rows are returned sorted by issue time.
pub fn ingest_trips_csv(path: &Path, node_count: usize, expiry_s: u64) -> Result<Vec<RideRequest>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, 0, e))?;
    let headers = reader.headers().map_err(|e| csv_error(path, 1, e))?.clone();
    if headers.is_empty() {
        return Ok(Vec::new());
    }
    for column in [
        "id",
        "issue_time_s",
        "origin_node",
        "dest_node",
        "passengers",
    ] {
        if !headers.iter().any(|h| h == column) {
            return Err(Error::Csv {
                path: path.to_owned(),
                line: 1,
                message: format!("missing column `{column}`"),
            });
        }
    }
    let mut requests = Vec::new();
    for row in reader.deserialize::<TripRow>() {
        let row = row.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            csv_error(path, line, e)
        })?;
        let line = requests.len() as u64 + 2;
        let fail = |message: String| Error::Csv {
            path: path.to_owned(),
            line,
            message,
        };
        if row.origin_node == row.dest_node {
            return Err(fail("origin equals destination".into()));
        }
        if row.origin_node >= node_count || row.dest_node >= node_count {
            return Err(fail(format!("node outside network of {node_count} nodes")));
        }
        if row.passengers == 0 || row.passengers > MAX_PASSENGERS {
            return Err(fail(format!(
                "passengers must be 1..={MAX_PASSENGERS}, got {}",
                row.passengers
            )));
        }
        requests.push(RideRequest {
            id: row.id,
            origin: row.origin_node,
            destination: row.dest_node,
            passengers: row.passengers,
            issue_time_s: row.issue_time_s,
            expiry_time_s: row.issue_time_s + expiry_s,
        });
    }
    requests.sort_by_key(|r| (r.issue_time_s, r.id));
    Ok(requests)
}

pub fn export_trips_csv(path: &Path, requests: &[RideRequest]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| csv_error(path, 0, e))?;
    for r in requests {
        writer
            .serialize(TripRow {
                id: r.id,
                issue_time_s: r.issue_time_s,
                origin_node: r.origin,
                dest_node: r.destination,
                passengers: r.passengers,
            })
            .map_err(|e| csv_error(path, 0, e))?;
    }
    writer.flush()?;
    Ok(())
}

fn csv_error(path: &Path, line: u64, e: csv::Error) -> Error {
    Error::Csv {
        path: path.to_owned(),
        line,
        message: e.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn zoning() -> Zoning {
        Zoning::new(20, 20, 4).unwrap()
    }

    #[test]
    fn zones_partition_the_lattice() {
        let z = zoning();
        let mut sizes = vec![0; 16];
        for n in 0..400 {
            sizes[z.zone_of(n)] += 1;
        }
        assert!(sizes.iter().all(|&s| s == 25));
        assert_eq!((0..16).filter(|&z| zoning().is_business(z)).count(), 4);
    }

    #[test]
    fn full_peak_count_fits_the_window() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = generate_demand(
            &zoning(),
            Pattern::Morning,
            9663,
            &DemandConfig::default(),
            &mut rng,
        )
        .unwrap();
        assert_eq!(d.len(), 9663);
        assert!(d.iter().all(|r| r.issue_time_s <= 10_800));
        assert!(d.iter().all(|r| r.origin != r.destination));
        assert!(d.iter().all(|r| (1..=4).contains(&r.passengers)));
        assert!(d.windows(2).all(|w| w[0].issue_time_s <= w[1].issue_time_s));
    }

    #[test]
    fn same_seed_same_demand() {
        let gen = |seed| {
            generate_demand(
                &zoning(),
                Pattern::Evening,
                300,
                &DemandConfig::default(),
                &mut ChaCha8Rng::seed_from_u64(seed),
            )
            .unwrap()
        };
        assert_eq!(gen(4), gen(4));
        assert_ne!(gen(4), gen(5));
    }

    #[test]
    fn patterns_differ_in_origin_zones() {
        let z = zoning();
        let hist = |pattern| {
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            let d = generate_demand(&z, pattern, 5000, &DemandConfig::default(), &mut rng).unwrap();
            let mut h = vec![0.0; 16];
            for r in &d {
                h[z.zone_of(r.origin)] += 1.0 / d.len() as f64;
            }
            h
        };
        let (m, e) = (hist(Pattern::Morning), hist(Pattern::Evening));
        let tv: f64 = m.iter().zip(&e).map(|(a, b)| (a - b).abs()).sum::<f64>() / 2.0;
        assert!(tv > 0.2, "total variation {tv}");
    }

    #[test]
    fn csv_round_trip_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trips.csv");
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = generate_demand(
            &zoning(),
            Pattern::Morning,
            50,
            &DemandConfig::default(),
            &mut rng,
        )
        .unwrap();
        export_trips_csv(&path, &d).unwrap();
        assert_eq!(ingest_trips_csv(&path, 400, 600).unwrap(), d);

        std::fs::write(&path, "").unwrap();
        assert!(ingest_trips_csv(&path, 400, 600).unwrap().is_empty());

        std::fs::write(
            &path,
            "id,issue_time_s,origin_node,dest_node,passengers\n1,5,3,4,2\n2,6,3,4,6\n",
        )
        .unwrap();
        match ingest_trips_csv(&path, 400, 600) {
            Err(Error::Csv { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected csv error, got {other:?}"),
        }

        std::fs::write(
            &path,
            "id,issue_time_s,origin_node,dest_node,passengers\n1,5,3,3,1\n",
        )
        .unwrap();
        assert!(ingest_trips_csv(&path, 400, 600).is_err());
        std::fs::write(
            &path,
            "id,issue_time_s,origin_node,dest_node,passengers\n1,x,3,4,1\n",
        )
        .unwrap();
        assert!(ingest_trips_csv(&path, 400, 600).is_err());
        std::fs::write(&path, "id,issue_time_s,origin_node,passengers\n1,5,3,1\n").unwrap();
        assert!(ingest_trips_csv(&path, 400, 600).is_err());
    }
}
