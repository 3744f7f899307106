#![no_main]

//! Input: sidecar JSON, a NUL byte, then the raw sample bytes.

use aad_evalkit::signal_io::{decode_f32_le, encode_f32_le, Sidecar};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let split = data.iter().position(|&b| b == 0).unwrap_or(data.len());
    let Ok(text) = std::str::from_utf8(&data[..split]) else {
        return;
    };
    let Ok(sidecar) = Sidecar::from_json_str(text) else {
        return;
    };
    let raw = data.get(split + 1..).unwrap_or(&[]);
    if let Ok(series) = decode_f32_le(raw, &sidecar) {
        assert_eq!(Some(raw.len()), sidecar.byte_len());
        assert_eq!(encode_f32_le(&series), raw);
    }
});
