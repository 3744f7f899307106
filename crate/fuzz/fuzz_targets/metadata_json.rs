#![no_main]

use aad_evalkit::dataset::Dataset;
use aad_evalkit::partition::{group_key, Strategy};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(d) = Dataset::from_json_str("fuzz", text) else {
        return;
    };
    for t in d.trials() {
        for s in Strategy::ALL {
            let _ = group_key(s, t);
        }
    }
    let again = Dataset::from_json_str("fuzz", &d.to_json_string()).expect("re-parse");
    assert_eq!(again.trials(), d.trials());
});
