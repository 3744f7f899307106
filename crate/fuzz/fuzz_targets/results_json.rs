#![no_main]

use aad_evalkit::experiment::{summarize_results, ExperimentResults, ReportFormat};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(r) = ExperimentResults::from_json_str(text) else {
        return;
    };
    let consistent = r.check().is_ok();
    for f in [ReportFormat::Json, ReportFormat::Csv, ReportFormat::Md] {
        assert_eq!(summarize_results(std::slice::from_ref(&r), f).is_ok(), consistent);
    }
    let again = ExperimentResults::from_json_str(&r.to_json_string()).expect("re-parse");
    assert_eq!(again.per_partition.len(), r.per_partition.len());
});
