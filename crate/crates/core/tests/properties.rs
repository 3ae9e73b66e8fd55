use std::time::Duration;

use chrono::{DateTime, TimeZone, Utc};
use proptest::prelude::*;
use roadwatch_core::dedupe::{assign_clusters, cluster};
use roadwatch_core::governance::{classify, density_band, idempotency_key, DensityBand, GovernanceConfig};
use roadwatch_core::{haversine_m, HealthState, LatLon, Observation, SeverityGrade, Transition};

fn point() -> impl Strategy<Value = LatLon> {
    (-90.0..=90.0f64, -180.0..=180.0f64).prop_map(|(lat, lon)| LatLon::new(lat, lon))
}

/// Points scattered over a few tens of metres.
fn street(n: usize) -> impl Strategy<Value = Vec<LatLon>> {
    prop::collection::vec((0.0..8e-5f64, 0.0..8e-5f64), 1..n).prop_map(|v| {
        v.into_iter()
            .map(|(a, b)| LatLon::new(20.0 + a, 85.0 + b))
            .collect()
    })
}

fn observations(points: &[LatLon]) -> Vec<Observation> {
    let t0 = Utc.with_ymd_and_hms(2025, 8, 13, 6, 30, 0).unwrap();
    points
        .iter()
        .enumerate()
        .map(|(i, p)| Observation {
            lat: p.lat,
            lon: p.lon,
            observed_at: t0 + chrono::Duration::seconds(i as i64),
            severity: SeverityGrade::Minor,
            confidence: 0.9,
            thumbnail: None,
            source_frame: i as u64,
            box_index: 0,
        })
        .collect()
}

fn band() -> impl Strategy<Value = DensityBand> {
    prop_oneof![
        Just(DensityBand::Low),
        Just(DensityBand::Elevated),
        Just(DensityBand::Severe)
    ]
}

proptest! {
    #[test]
    fn distance_is_a_symmetric_metric(a in point(), b in point(), c in point()) {
        let ab = haversine_m(a, b);
        prop_assert!(ab >= 0.0);
        prop_assert_eq!(haversine_m(a, a), 0.0);
        prop_assert!((ab - haversine_m(b, a)).abs() <= 1e-6);
        prop_assert!(ab <= haversine_m(a, c) + haversine_m(c, b) + 1e-6);
        prop_assert!(ab <= std::f64::consts::PI * 6_371_000.0 + 1e-6);
    }

    #[test]
    fn rounding_is_idempotent_and_stays_close(p in point()) {
        let r = p.rounded();
        prop_assert_eq!(r.rounded(), r);
        prop_assert!(haversine_m(p, r) < 1.0);
    }

    #[test]
    fn clusters_partition_the_batch(points in street(30)) {
        let obs = observations(&points);
        let clusters = cluster(&obs, 2.5);
        prop_assert_eq!(clusters.iter().map(|c| c.len()).sum::<usize>(), obs.len());
        let labels = assign_clusters(&points, 2.5);
        for (k, c) in clusters.iter().enumerate() {
            prop_assert_eq!(c.len(), labels.iter().filter(|l| **l == k).count());
        }
        // labels are introduced in order of first appearance
        let mut next = 0;
        for l in labels {
            prop_assert!(l <= next);
            if l == next {
                next += 1;
            }
        }
    }

    #[test]
    fn clusters_open_only_out_of_reach(points in street(20)) {
        let clusters = cluster(&observations(&points), 2.5);
        // a first-fit greedy only opens a cluster when no earlier centroid was in reach
        for (k, c) in clusters.iter().enumerate().skip(1) {
            let opener = c.members[0].position();
            let out_of_reach = clusters[..k].iter().all(|earlier| {
                let before: Vec<_> = earlier.members.iter().filter(|m| m.sort_key() < c.members[0].sort_key()).collect();
                let n = before.len() as f64;
                let centroid = LatLon::new(
                    before.iter().map(|m| m.lat).sum::<f64>() / n,
                    before.iter().map(|m| m.lon).sum::<f64>() / n,
                );
                haversine_m(centroid, opener) > 2.5
            });
            prop_assert!(out_of_reach);
        }
    }

    #[test]
    fn severe_density_is_always_red(warranty in any::<bool>(), flagged in any::<bool>()) {
        prop_assert_eq!(classify(DensityBand::Severe, warranty, flagged), HealthState::Red);
        prop_assert_eq!(classify(DensityBand::Low, warranty, flagged), HealthState::Green);
    }

    #[test]
    fn an_active_warranty_never_leaves_orange_or_red_for_elevated(flagged in any::<bool>(), b in band()) {
        let h = classify(b, true, flagged);
        prop_assert!(b == DensityBand::Severe || matches!(h, HealthState::Green | HealthState::Yellow));
    }

    #[test]
    fn density_bands_are_monotone(a in 0.0..100.0f64, b in 0.0..100.0f64) {
        let cfg = GovernanceConfig::default();
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(density_band(lo, &cfg) as u8 <= density_band(hi, &cfg) as u8);
    }

    #[test]
    fn keys_agree_within_a_bucket_and_differ_across(seg in 1i64..1000, secs in 0i64..86_400, day in 0i64..3650) {
        let day_start: DateTime<Utc> = Utc.timestamp_opt(day * 86_400, 0).unwrap();
        let cooldown = Duration::from_secs(86_400);
        let t = Transition::Change { from: HealthState::Green, to: HealthState::Yellow };
        let k = idempotency_key(seg, &t, day_start + chrono::Duration::seconds(secs), cooldown);
        prop_assert_eq!(&k, &idempotency_key(seg, &t, day_start, cooldown));
        prop_assert_ne!(&k, &idempotency_key(seg, &t, day_start + chrono::Duration::days(1), cooldown));
        prop_assert_ne!(&k, &idempotency_key(seg + 1, &t, day_start, cooldown));
    }
}
