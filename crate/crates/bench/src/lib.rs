//! Synthetic inputs for the benchmarks. Everything is seeded, so two runs
//! measure the same work.

use chrono::{DateTime, TimeZone, Utc};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use roadwatch_core::segment::ContractMetadata;
use roadwatch_core::{HealthState, LatLon, Observation, Polyline, RoadSegment, SeverityGrade};

const ORIGIN: LatLon = LatLon {
    lat: 20.2961,
    lon: 85.8245,
};

fn rng(seed: u64) -> StdRng {
    StdRng::seed_from_u64(seed)
}

fn start() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2025, 8, 13, 6, 30, 0).unwrap()
}

/// `n` coordinate pairs within a few kilometres of each other.
pub fn point_pairs(n: usize) -> Vec<(LatLon, LatLon)> {
    let mut r = rng(1);
    (0..n)
        .map(|_| {
            let a = LatLon::new(
                ORIGIN.lat + r.gen_range(-0.02..0.02),
                ORIGIN.lon + r.gen_range(-0.02..0.02),
            );
            let b = LatLon::new(
                ORIGIN.lat + r.gen_range(-0.02..0.02),
                ORIGIN.lon + r.gen_range(-0.02..0.02),
            );
            (a, b)
        })
        .collect()
}

/// A batch of `n` observations in sort order, drawn around `n / 3`
/// potholes so most join an existing cluster.
pub fn observations(n: usize) -> Vec<Observation> {
    let mut r = rng(2);
    let centres: Vec<LatLon> = (0..(n / 3).max(1))
        .map(|k| LatLon::new(ORIGIN.lat + 5e-5 * k as f64, ORIGIN.lon))
        .collect();
    (0..n)
        .map(|i| {
            let c = centres[r.gen_range(0..centres.len())];
            Observation {
                lat: c.lat + r.gen_range(-1e-5..1e-5),
                lon: c.lon + r.gen_range(-1e-5..1e-5),
                observed_at: start() + chrono::Duration::milliseconds(33 * i as i64),
                severity: SeverityGrade::Moderate,
                confidence: 0.9,
                thumbnail: None,
                source_frame: i as u64,
                box_index: 0,
            }
        })
        .collect()
}

/// Overlay texts in canonical form, a quarter of them with one misread.
pub fn overlay_texts(n: usize) -> Vec<String> {
    let mut r = rng(3);
    (0..n)
        .map(|i| {
            let mut s = format!(
                "{:02}-{:02}-2025 {:02}:{:02}:{:02}",
                r.gen_range(1..=28),
                r.gen_range(1..=12),
                r.gen_range(0..24),
                r.gen_range(0..60),
                r.gen_range(0..60)
            );
            if i % 4 == 0 {
                s.replace_range(13..14, ".");
            }
            s
        })
        .collect()
}

/// `n` parallel east-west segments 200 m apart, each about 1 km long.
pub fn segments(n: usize) -> Vec<RoadSegment> {
    (0..n)
        .map(|k| {
            let lat = ORIGIN.lat + 0.0018 * k as f64;
            let geometry = Polyline::straight(
                LatLon::new(lat, ORIGIN.lon),
                LatLon::new(lat, ORIGIN.lon + 0.0096),
            )
            .expect("distinct endpoints");
            RoadSegment {
                id: k as i64 + 1,
                length_m: roadwatch_core::segment::polyline_length_m(&geometry),
                geometry,
                contract: ContractMetadata {
                    contractor_name: "Bench Contractor".into(),
                    contractor_contact: "bench@example.com".into(),
                    construction_date: chrono::NaiveDate::from_ymd_opt(2024, 1, 1).unwrap(),
                    budget: 1.0e6,
                    warranty_end: chrono::NaiveDate::from_ymd_opt(2027, 1, 1).unwrap(),
                    category: None,
                },
                health: HealthState::Green,
                created_by: "operator".into(),
                version: 1,
            }
        })
        .collect()
}

/// Points spread over the area covered by [`segments`].
pub fn scattered(n: usize, rows: usize) -> Vec<LatLon> {
    let mut r = rng(4);
    (0..n)
        .map(|_| {
            LatLon::new(
                ORIGIN.lat + r.gen_range(0.0..0.0018 * rows as f64),
                ORIGIN.lon + r.gen_range(0.0..0.0096),
            )
        })
        .collect()
}
