#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let mut table = toml::Table::new();
        let _ = riszf::scenario::apply_override(&mut table, text);
        let _ = riszf::scenario::parse_config_with_overrides("preset = \"NEAR\"", &[text]);
    }
});
