#![no_main]

use aad_evalkit::balance::balance_index;
use aad_evalkit::synth::{build_scenario, ScenarioConfig};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(cfg) = ScenarioConfig::from_json_str(text) else {
        return;
    };
    // only build scenarios small enough to keep iterations fast
    let size = cfg
        .n_pairs
        .saturating_mul(cfg.repeats_per_pair)
        .saturating_mul(cfg.channels + 2)
        .saturating_mul(cfg.samples_per_trial());
    if size > 200_000 {
        return;
    }
    let s = build_scenario(&cfg).expect("validated config builds");
    assert_eq!(s.dataset.len(), cfg.n_pairs * cfg.repeats_per_pair);
    let bi = balance_index(&s.dataset).unwrap().balance_index;
    assert!((0.0..=1.0).contains(&bi));
});
