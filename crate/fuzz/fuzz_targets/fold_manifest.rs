#![no_main]

use aad_evalkit::partition::FoldManifest;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(m) = FoldManifest::from_json_str(text) {
        let _ = m.plan();
        let again = FoldManifest::from_json_str(&m.to_json_string()).expect("re-parse");
        assert_eq!(again, m);
    }
});
