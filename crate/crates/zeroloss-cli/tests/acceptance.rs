//! One test per acceptance criterion. Each writes its result line straight to
//! stderr so it shows up without `--nocapture`.
//!
//! `ZEROLOSS_ACCEPT_QUICK=1` switches to the reduced smoke budgets.

use std::io::Write;

use zeroloss_cli::acceptance::{run, AcceptOptions};

fn check(id: u32) {
    let opts = AcceptOptions {
        quick: std::env::var_os("ZEROLOSS_ACCEPT_QUICK").is_some(),
        seed_base: 0,
    };
    let r = run(&[id], &opts).pop().expect("known criterion");
    // Not eprintln!: the harness captures that, this handle it does not.
    #[allow(clippy::explicit_write)]
    writeln!(std::io::stderr(), "{}", r.line()).unwrap();
    assert!(r.pass, "{}", r.line());
}

#[test]
fn c01_ring_endpoint() {
    check(1);
}

#[test]
fn c02_shifted_process_convergence() {
    check(2);
}

#[test]
fn c03_regularizer_drift_probe() {
    check(3);
}

#[test]
fn c04_limit_map_oracles() {
    check(4);
}

#[test]
fn c05_time_scale_separation() {
    check(5);
}

#[test]
fn c06_minibatch_no_implicit_bias() {
    check(6);
}

#[test]
fn c07_label_noise_flow() {
    check(7);
}

#[test]
fn c08_combined_constant() {
    check(8);
}

#[test]
fn c09_sgld_sde() {
    check(9);
}

#[test]
fn c10_noise_decay() {
    check(10);
}

#[test]
fn c11_invariants() {
    check(11);
}
