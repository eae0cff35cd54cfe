#![allow(dead_code)]

pub mod oracle;

use fedckd::config::{parse_config, ExperimentConfig};

/// Desk-scale config from a preset plus `(key, value)` overrides.
pub fn config(preset: &str, overrides: &[(&str, &str)]) -> ExperimentConfig {
    let ov: Vec<(String, String)> = overrides
        .iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
    parse_config(None, Some(preset), &ov).unwrap()
}

/// A small, fast synthetic setup for engine tests.
pub fn tiny(overrides: &[(&str, &str)]) -> ExperimentConfig {
    let mut all = vec![
        ("synth_classes", "4"),
        ("synth_per_class", "30"),
        ("synth_dim", "6"),
        ("n_clients", "5"),
        ("alpha", "0.5"),
        ("rounds", "4"),
        ("epochs", "2"),
        ("batch_size", "8"),
        ("hidden", "[8]"),
        ("lr", "0.05"),
    ];
    all.extend_from_slice(overrides);
    config("desk-synth-heterogeneous", &all)
}

pub fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

pub fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Two 2×2 images written byte by byte: pixel values 0/255 and 51/204.
pub const IDX_IMAGES: [u8; 24] = [
    0x00, 0x00, 0x08, 0x03, // magic: u8, rank 3
    0x00, 0x00, 0x00, 0x02, // count
    0x00, 0x00, 0x00, 0x02, // rows
    0x00, 0x00, 0x00, 0x02, // cols
    0, 255, 255, 0, //
    51, 204, 0, 255,
];

pub const IDX_LABELS: [u8; 10] = [
    0x00, 0x00, 0x08, 0x01, // magic: u8, rank 1
    0x00, 0x00, 0x00, 0x02, // count
    7, 2,
];

pub const IDX_FEATURES: [[f64; 4]; 2] = [[0.0, 1.0, 1.0, 0.0], [0.2, 0.8, 0.0, 1.0]];

pub fn write_fixture(dir: &std::path::Path, images: &[u8], labels: &[u8]) -> (std::path::PathBuf, std::path::PathBuf) {
    let ip = dir.join("images.idx3-ubyte");
    let lp = dir.join("labels.idx1-ubyte");
    std::fs::write(&ip, images).unwrap();
    std::fs::write(&lp, labels).unwrap();
    (ip, lp)
}
