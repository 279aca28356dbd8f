#![no_main]

use libfuzzer_sys::fuzz_target;
use redps::parse::{parse_count, parse_number, parse_number_list};

fuzz_target!(|data: &[u8]| {
    if let Ok(s) = std::str::from_utf8(data) {
        let _ = parse_number(s);
        let _ = parse_count(s, 1);
        let _ = parse_number_list(s, 1);
    }
});
