#![no_main]

use cqr_core::{parse_csv, CsvSchema};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    // a parsed dataset must survive a write/parse round trip unchanged
    if let Ok(ds) = parse_csv(data, &CsvSchema::default()) {
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        assert_eq!(parse_csv(buf.as_slice(), &CsvSchema::default()).unwrap(), ds);
    }
    let named = CsvSchema { time: "t".into(), status: "d".into(), covariates: Some(vec!["x".into()]) };
    let _ = parse_csv(data, &named);
});
