#![no_main]

use aad_evalkit::balance::balance_index;
use aad_evalkit::dataset::{validate_dataset, Dataset};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(d) = Dataset::from_csv_str("fuzz", text) else {
        return;
    };
    let _ = validate_dataset(&d, None);
    if let Ok(r) = balance_index(&d) {
        assert!((0.0..=1.0).contains(&r.balance_index));
    }
    // accepted metadata survives a write/read cycle
    let again = Dataset::from_csv_str("fuzz", &d.to_csv_string()).expect("re-parse");
    assert_eq!(again.trials(), d.trials());
});
