#![no_main]

use cqr_cli::RunManifest;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let text = String::from_utf8_lossy(data);
    if let Ok(m) = RunManifest::from_json(&text) {
        let _ = m.invocation();
        assert_eq!(RunManifest::from_json(&m.to_json()).unwrap(), m);
    }
});
