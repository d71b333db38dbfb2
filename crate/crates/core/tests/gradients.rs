mod common;

use common::grad::{case, REL_TOL};

#[test]
fn finite_differences_agree_on_every_case() {
    let mut failures = Vec::new();
    for i in 0..100 {
        let r = case(i, 0x6ead);
        assert!(r.checked > 0, "case {i} checked nothing");
        if r.worst > REL_TOL {
            failures.push(format!("case {i} ({}): worst relative error {:.2e}", r.kind, r.worst));
        }
    }
    assert!(failures.is_empty(), "{failures:#?}");
}

#[test]
fn schedule_covers_every_kind() {
    let kinds: std::collections::BTreeSet<&str> = (0..10).map(|i| case(i, 1).kind).collect();
    assert_eq!(kinds.len(), 8);
}
