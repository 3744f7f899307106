//! Replays the checked-in fuzz corpus through the parsers.

use std::path::PathBuf;

use aad_evalkit::dataset::Dataset;
use aad_evalkit::experiment::ExperimentResults;
use aad_evalkit::partition::FoldManifest;
use aad_evalkit::signal_io::{decode_f32_le, Sidecar};
use aad_evalkit::synth::ScenarioConfig;

fn seeds(target: &str) -> Vec<(PathBuf, Vec<u8>)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fuzz/corpus")
        .join(target);
    let mut out: Vec<_> = std::fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| {
            let p = e.unwrap().path();
            let bytes = std::fs::read(&p).unwrap();
            (p, bytes)
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds for {target}");
    out
}

fn text(bytes: &[u8]) -> &str {
    std::str::from_utf8(bytes).unwrap()
}

#[test]
fn metadata_seeds() {
    let mut parsed = 0;
    for (p, b) in seeds("metadata_csv") {
        if let Ok(d) = Dataset::from_csv_str("seed", text(&b)) {
            let again = Dataset::from_csv_str("seed", &d.to_csv_string()).unwrap();
            assert_eq!(again.trials(), d.trials(), "{}", p.display());
            parsed += 1;
        }
    }
    for (_, b) in seeds("metadata_json") {
        let d = Dataset::from_json_str("seed", text(&b)).unwrap();
        assert_eq!(
            Dataset::from_json_str("seed", &d.to_json_string()).unwrap().trials(),
            d.trials()
        );
    }
    assert!(parsed >= 2);
}

#[test]
fn manifest_and_results_seeds_parse() {
    for (_, b) in seeds("fold_manifest") {
        let m = FoldManifest::from_json_str(text(&b)).unwrap();
        assert_eq!(FoldManifest::from_json_str(&m.to_json_string()).unwrap(), m);
    }
    for (_, b) in seeds("results_json") {
        ExperimentResults::from_json_str(text(&b)).unwrap().check().unwrap();
    }
    for (_, b) in seeds("scenario_config") {
        ScenarioConfig::from_json_str(text(&b)).unwrap();
    }
}

#[test]
fn signal_seeds_decode() {
    for (_, b) in seeds("signal_decode") {
        let split = b.iter().position(|&x| x == 0).unwrap();
        let sidecar = Sidecar::from_json_str(text(&b[..split])).unwrap();
        let series = decode_f32_le(&b[split + 1..], &sidecar).unwrap();
        assert_eq!(series.samples().len(), sidecar.byte_len().unwrap() / 4);
    }
}
