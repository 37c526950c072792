#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok((chs, fc)) = riszf::channel::parse_dump(text) {
            let (again, fc2) = riszf::channel::parse_dump(&riszf::channel::write_dump(&chs, fc)).unwrap();
            assert_eq!(fc.to_bits(), fc2.to_bits());
            assert_eq!(chs.h_bu.shape(), again.h_bu.shape());
        }
    }
});
