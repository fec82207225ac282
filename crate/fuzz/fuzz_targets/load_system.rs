//! Fuzzes the JSON config loader end to end: deserialization, expression
//! parsing, system validation, and reference checking. Every outcome must be
//! a clean `Ok` or `Err`, never a panic.

#![no_main]

use adm_dae::harness::system_from_json_str;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    // Symbolic differentiation of pathologically nested expressions grows
    // quadratically; capping the input keeps iterations fast without
    // narrowing the structural search space.
    if data.len() > 4096 {
        return;
    }
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let _ = system_from_json_str(text);
});
