#![no_main]

use libfuzzer_sys::fuzz_target;
use piwno::wavelet::parse_filter_table;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(table) = parse_filter_table(text) {
            assert!(table.values().flatten().all(|v| v.is_finite()));
        }
    }
});
