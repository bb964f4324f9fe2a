use std::collections::HashSet;

use proptest::prelude::*;
use vlc_transfer::channel_sim::{synthesize_dataset, ChannelParams, RoomLayout};
use vlc_transfer::dataset::{
    apply_norm, fit_norm, inject_noise_seeded, invert_norm, load_csv, save_csv, split, subsample, Dataset, NoiseSpec,
};

fn default_data() -> Dataset {
    let records = synthesize_dataset(&RoomLayout::factory_default(), &ChannelParams::default(), 7).unwrap();
    Dataset::new(records).unwrap()
}

fn keys(data: &Dataset) -> HashSet<(u32, u64, u64)> {
    data.records()
        .iter()
        .map(|r| (r.scenario_id, r.position[0].to_bits(), r.position[1].to_bits()))
        .collect()
}

#[test]
fn csv_round_trip_through_disk() {
    let data = default_data();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("data.csv");
    save_csv(&data, &path).unwrap();
    let back = load_csv(&path).unwrap();
    assert_eq!(back, data);
}

#[test]
fn truncated_csv_row_is_a_parse_error() {
    let data = default_data();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("data.csv");
    save_csv(&data, &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let cut = text.trim_end().rfind(',').unwrap();
    std::fs::write(&path, &text[..cut]).unwrap();
    assert!(load_csv(&path).is_err());
}

#[test]
fn eighty_twenty_split_partitions_the_data() {
    let data = default_data();
    let (train, val) = split(&data, 0.8, 3).unwrap();
    assert_eq!((train.len(), val.len()), (1152, 288));
    let (kt, kv) = (keys(&train), keys(&val));
    assert!(kt.is_disjoint(&kv));
    assert_eq!(kt.union(&kv).count(), data.len());
    assert_eq!(split(&data, 0.8, 3).unwrap().0, train);
}

#[test]
fn subsample_draws_from_its_source() {
    let (train, _) = split(&default_data(), 0.8, 3).unwrap();
    let sub = subsample(&train, 0.3, 9).unwrap();
    assert_eq!(sub.len(), (0.3f64 * 1152.0).round() as usize);
    assert!(keys(&sub).is_subset(&keys(&train)));
    assert_eq!(subsample(&train, 1.0, 9).unwrap().len(), train.len());
}

#[test]
fn normalized_features_have_unit_moments() {
    let (train, val) = split(&default_data(), 0.8, 3).unwrap();
    let stats = fit_norm(&train).unwrap();
    let z = apply_norm(&train, &stats).unwrap().features();
    let n = z.nrows() as f64;
    for col in z.columns() {
        let mean = col.sum() / n;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 1e-9, "mean {mean}");
        assert!((var - 1.0).abs() < 1e-9 || var == 0.0, "var {var}");
    }
    let back = invert_norm(&apply_norm(&val, &stats).unwrap(), &stats).unwrap();
    for (a, b) in back.records().iter().zip(val.records()) {
        for (x, y) in a.rssi.iter().zip(&b.rssi) {
            assert!((x - y).abs() < 1e-9);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn noise_scales_linearly_with_nf(nf in 0.5..8.0f64, seed in any::<u64>()) {
        let data = default_data();
        let unit = NoiseSpec { nf: 1.0, seed, ..NoiseSpec::default() };
        let one = inject_noise_seeded(&data, &unit).unwrap();
        let scaled = inject_noise_seeded(&data, &unit.with_nf(nf)).unwrap();
        for ((c, a), b) in data.records().iter().zip(one.records()).zip(scaled.records()) {
            prop_assert_eq!(c.position, b.position);
            for k in 0..c.rssi.len() {
                let expected = nf * (a.rssi[k] - c.rssi[k]);
                prop_assert!((b.rssi[k] - c.rssi[k] - expected).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn zero_noise_factor_is_the_identity() {
    let data = default_data();
    let spec = NoiseSpec {
        nf: 0.0,
        ..NoiseSpec::default()
    };
    assert_eq!(inject_noise_seeded(&data, &spec).unwrap(), data);
}
