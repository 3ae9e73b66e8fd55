//! Collapsing per-frame observations into persistent pothole entities.
//!
//! Clustering is greedy first-fit against running centroids: every observation
//! joins the earliest-opened cluster whose current mean lies within the
//! threshold, otherwise it opens a new one. Input order is canonical (see
//! [`Observation::sort_key`]) so the outcome is reproducible.

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::detection::{Observation, SeverityGrade};
use crate::geo::{haversine_m, LatLon};

/// Default dedup radius in meters.
pub const DEDUP_THRESHOLD_M: f64 = 2.5;

pub type PotholeId = i64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PotholeStatus {
    Active,
    Repaired,
}

impl PotholeStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Active => "active",
            Self::Repaired => "repaired",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "active" => Some(Self::Active),
            "repaired" => Some(Self::Repaired),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pothole {
    pub id: PotholeId,
    pub lat: f64,
    pub lon: f64,
    pub severity: SeverityGrade,
    pub status: PotholeStatus,
    pub first_seen: DateTime<Utc>,
    pub last_seen: DateTime<Utc>,
    pub detection_count: u32,
    pub thumbnail: Option<String>,
    pub segment_id: Option<i64>,
    /// Optimistic-concurrency token, bumped by the store on every write.
    #[serde(default)]
    pub version: i64,
}

impl Pothole {
    pub fn position(&self) -> LatLon {
        LatLon::new(self.lat, self.lon)
    }
}

/// A group of observations believed to be one physical defect.
#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    pub members: Vec<Observation>,
    lat_sum: f64,
    lon_sum: f64,
}

impl Cluster {
    fn open(first: Observation) -> Self {
        Self {
            lat_sum: first.lat,
            lon_sum: first.lon,
            members: vec![first],
        }
    }

    fn push(&mut self, o: Observation) {
        self.lat_sum += o.lat;
        self.lon_sum += o.lon;
        self.members.push(o);
    }

    /// Unrounded running mean of member coordinates.
    pub fn centroid(&self) -> LatLon {
        let n = self.members.len() as f64;
        LatLon::new(self.lat_sum / n, self.lon_sum / n)
    }

    pub fn severity(&self) -> SeverityGrade {
        self.members
            .iter()
            .map(|o| o.severity)
            .max()
            .expect("clusters are never empty")
    }

    pub fn first_seen(&self) -> DateTime<Utc> {
        self.members
            .iter()
            .map(|o| o.observed_at)
            .min()
            .expect("non-empty")
    }

    pub fn last_seen(&self) -> DateTime<Utc> {
        self.members
            .iter()
            .map(|o| o.observed_at)
            .max()
            .expect("non-empty")
    }

    /// Thumbnail of the earliest member that carries one.
    pub fn thumbnail(&self) -> Option<&str> {
        self.members.iter().find_map(|o| o.thumbnail.as_deref())
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// Greedy assignment over bare points; returns the cluster index of each.
pub fn assign_clusters(points: &[LatLon], threshold_m: f64) -> Vec<usize> {
    let mut sums: Vec<(f64, f64, f64)> = Vec::new();
    let mut out = Vec::with_capacity(points.len());
    for p in points {
        let hit = sums
            .iter()
            .position(|&(la, lo, n)| haversine_m(LatLon::new(la / n, lo / n), *p) <= threshold_m);
        let idx = match hit {
            Some(i) => {
                let s = &mut sums[i];
                s.0 += p.lat;
                s.1 += p.lon;
                s.2 += 1.0;
                i
            }
            None => {
                sums.push((p.lat, p.lon, 1.0));
                sums.len() - 1
            }
        };
        out.push(idx);
    }
    out
}

/// Clusters observations already in canonical order.
pub fn cluster(observations: &[Observation], threshold_m: f64) -> Vec<Cluster> {
    let mut clusters: Vec<Cluster> = Vec::new();
    for o in observations {
        match clusters
            .iter_mut()
            .find(|c| haversine_m(c.centroid(), o.position()) <= threshold_m)
        {
            Some(c) => c.push(o.clone()),
            None => clusters.push(Cluster::open(o.clone())),
        }
    }
    clusters
}

/// A pothole that does not exist in the registry yet.
#[derive(Debug, Clone, PartialEq)]
pub struct NewPothole {
    pub lat: f64,
    pub lon: f64,
    pub severity: SeverityGrade,
    pub first_seen: DateTime<Utc>,
    pub last_seen: DateTime<Utc>,
    pub detection_count: u32,
    pub thumbnail: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RegistryMutation {
    /// An Active pothole saw the cluster again.
    Merged(Pothole),
    /// A Repaired pothole was re-detected and is Active again.
    Reopened(Pothole),
    Created(NewPothole),
}

enum Slot {
    Existing(usize, bool),
    Fresh(usize),
}

/// Decides, for each cluster, whether it updates an Active pothole, reopens a
/// Repaired one, or creates a new entity. Potholes created earlier in the
/// same call are match candidates for later clusters.
///
/// Returned mutations are in cluster order, except that repeated hits on the
/// same existing pothole are folded into a single mutation at its first
/// position.
pub fn merge_into_registry(
    clusters: &[Cluster],
    existing: &[Pothole],
    threshold_m: f64,
) -> Vec<RegistryMutation> {
    let mut pool: Vec<Pothole> = existing.to_vec();
    pool.sort_by_key(|p| p.id);
    let mut touched: Vec<Option<usize>> = vec![None; pool.len()];
    let mut fresh: Vec<NewPothole> = Vec::new();
    let mut order: Vec<Slot> = Vec::new();

    for c in clusters {
        let centre = c.centroid();
        let nearest = |status: PotholeStatus| {
            pool.iter()
                .enumerate()
                .filter(|(_, p)| p.status == status)
                .map(|(i, p)| (haversine_m(centre, p.position()), p.id, i))
                .filter(|(d, _, _)| *d <= threshold_m)
                .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
                .map(|(d, _, i)| (d, i))
        };
        let active = nearest(PotholeStatus::Active);
        let fresh_hit = fresh
            .iter()
            .enumerate()
            .map(|(i, p)| (haversine_m(centre, LatLon::new(p.lat, p.lon)), i))
            .filter(|(d, _)| *d <= threshold_m)
            .min_by(|a, b| a.0.total_cmp(&b.0));

        // Existing Active potholes win ties against ones created this batch.
        let target = match (active, fresh_hit) {
            (Some((da, ia)), Some((df, _))) if da <= df => Some(Err(ia)),
            (_, Some((_, jf))) => Some(Ok(jf)),
            (Some((_, ia)), None) => Some(Err(ia)),
            (None, None) => None,
        };

        match target {
            Some(Err(i)) => {
                absorb(&mut pool[i], c);
                if touched[i].is_none() {
                    touched[i] = Some(order.len());
                    order.push(Slot::Existing(i, false));
                }
            }
            Some(Ok(j)) => {
                let p = &mut fresh[j];
                p.detection_count += c.len() as u32;
                p.severity = p.severity.max(c.severity());
                p.first_seen = p.first_seen.min(c.first_seen());
                p.last_seen = p.last_seen.max(c.last_seen());
                if p.thumbnail.is_none() {
                    p.thumbnail = c.thumbnail().map(str::to_owned);
                }
            }
            None => {
                if let Some((_, i)) = nearest(PotholeStatus::Repaired) {
                    pool[i].status = PotholeStatus::Active;
                    absorb(&mut pool[i], c);
                    if touched[i].is_none() {
                        touched[i] = Some(order.len());
                        order.push(Slot::Existing(i, true));
                    }
                } else {
                    let centre = centre.rounded();
                    fresh.push(NewPothole {
                        lat: centre.lat,
                        lon: centre.lon,
                        severity: c.severity(),
                        first_seen: c.first_seen(),
                        last_seen: c.last_seen(),
                        detection_count: c.len() as u32,
                        thumbnail: c.thumbnail().map(str::to_owned),
                    });
                    order.push(Slot::Fresh(fresh.len() - 1));
                }
            }
        }
    }

    order
        .into_iter()
        .map(|slot| match slot {
            Slot::Existing(i, true) => RegistryMutation::Reopened(pool[i].clone()),
            Slot::Existing(i, false) => RegistryMutation::Merged(pool[i].clone()),
            Slot::Fresh(j) => RegistryMutation::Created(fresh[j].clone()),
        })
        .collect()
}

fn absorb(p: &mut Pothole, c: &Cluster) {
    p.detection_count += c.len() as u32;
    p.severity = p.severity.max(c.severity());
    p.last_seen = p.last_seen.max(c.last_seen());
    if p.thumbnail.is_none() {
        p.thumbnail = c.thumbnail().map(str::to_owned);
    }
}
