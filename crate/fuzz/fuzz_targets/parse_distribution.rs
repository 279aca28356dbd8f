#![no_main]

use libfuzzer_sys::fuzz_target;
use redps::parse::{parse_distribution, parse_distribution_list};

fuzz_target!(|data: &[u8]| {
    if let Ok(s) = std::str::from_utf8(data) {
        if let Ok(m) = parse_distribution(s) {
            // Display output must parse back to the same model
            let again = parse_distribution(&m.to_string()).expect("round trip");
            assert_eq!(again, m);
        }
        let _ = parse_distribution_list(s, 1);
    }
});
