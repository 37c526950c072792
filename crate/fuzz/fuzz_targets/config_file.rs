#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(cfg) = riszf::scenario::parse_config(text) {
            // anything accepted must survive a serialize/parse round trip
            let again = riszf::scenario::parse_config(&riszf::scenario::to_toml(&cfg)).unwrap();
            assert_eq!(cfg, again);
        }
    }
});
