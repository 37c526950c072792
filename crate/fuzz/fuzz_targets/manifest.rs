#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(m) = riszf::cli::parse_manifest(text) {
            let again = riszf::cli::parse_manifest(&m.to_json()).unwrap();
            assert_eq!(m, again);
        }
    }
});
