#![no_main]

use cqr_core::{Example, ScenarioSpec};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    for ex in [Example::Ex1, Example::Ex2, Example::Ex3, Example::Ex4, Example::MultiD] {
        if let Ok(spec) = ScenarioSpec::parse(ex, text) {
            assert!(spec.validate().is_ok());
            assert_eq!(ScenarioSpec::parse(ex, &spec.to_kv()).unwrap(), spec);
        }
    }
});
