//! Fuzzes the expression parser against a fixed symbol table. Anything that
//! parses must render to a string that re-parses, and from there rendering
//! must be a fixed point; differentiation must never panic.

#![no_main]

use std::sync::LazyLock;

use adm_dae::expr::{differentiate, parse_expression, SymbolTable};
use libfuzzer_sys::fuzz_target;

static SYMBOLS: LazyLock<SymbolTable> = LazyLock::new(|| {
    SymbolTable::new(
        vec!["p1".to_string(), "p2".to_string()],
        vec!["v1".to_string(), "v2".to_string()],
        vec![("a".to_string(), 1.5), ("b".to_string(), -0.25)],
    )
    .expect("fixed table is valid")
});

fuzz_target!(|data: &[u8]| {
    // Recursion depth in the parser and printer scales with input length;
    // longer inputs only rediscover stack exhaustion.
    if data.len() > 4096 {
        return;
    }
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };

    let Ok(expr) = parse_expression(text, &SYMBOLS) else {
        return;
    };
    let printed = expr.to_string();
    let reparsed = parse_expression(&printed, &SYMBOLS)
        .unwrap_or_else(|e| panic!("printed form `{printed}` fails to re-parse: {e}"));
    let fixed_point = parse_expression(&reparsed.to_string(), &SYMBOLS)
        .unwrap_or_else(|e| panic!("second rendering fails to re-parse: {e}"));
    assert_eq!(reparsed, fixed_point, "rendering is not a fixed point");

    for var in ["p1", "p2", "v1", "v2", "t"] {
        let _ = differentiate(&expr, var);
    }
});
