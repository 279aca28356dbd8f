#![no_main]

use libfuzzer_sys::fuzz_target;
use redps::experiments::{cells, ExperimentSpec};

fuzz_target!(|data: &[u8]| {
    if let Ok(s) = std::str::from_utf8(data) {
        if let Ok(spec) = ExperimentSpec::parse(s) {
            let _ = cells(&spec);
        }
    }
});
