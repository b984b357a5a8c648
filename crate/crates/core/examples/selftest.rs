//! Runs the numerical self-checks (gradients, attention, shapes, losses,
//! IoU, NMS, matching) and prints one line per check.

fn main() {
    let checks = lithohod::verify::run_all();
    for c in &checks {
        println!("{} {:<26} {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    if checks.iter().any(|c| !c.passed) {
        std::process::exit(1);
    }
}
