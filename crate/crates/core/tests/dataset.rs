use decoy_core::dataset::{reference_measurements, REFERENCE_CSV, REFERENCE_SHA256};
use decoy_core::table::{parse_measured_table, write_measured_table};
use sha2::{Digest, Sha256};

#[test]
fn bundled_table_checksum() {
    let digest = Sha256::digest(REFERENCE_CSV.as_bytes());
    let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
    assert_eq!(hex, REFERENCE_SHA256);
}

#[test]
fn bundled_table_values() {
    let rows = reference_measurements();
    let lengths: Vec<f64> = rows.iter().map(|r| r.length_km).collect();
    assert_eq!(lengths, [123.6, 108.0, 97.0, 83.7, 62.1, 49.2]);
    assert_eq!(parse_measured_table(&write_measured_table(&rows)).unwrap(), rows);
}
