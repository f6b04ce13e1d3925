use rcaiunet::autograd::gradcheck::GradcheckConfig;
use rcaiunet::diagnostics;
use std::time::Instant;

fn main() {
    let t0 = Instant::now();
    let scope = diagnostics::check_model(0, &GradcheckConfig::default());
    let coords: usize = scope.report.records.iter().map(|r| r.coords_checked).sum();
    println!(
        "model check: {} tensors, {} coords, pass={} worst={:.3e}, {:.1}s",
        scope.report.records.len(),
        coords,
        scope.pass(),
        scope.report.worst(),
        t0.elapsed().as_secs_f64()
    );
    if !scope.pass() {
        for r in scope.report.records.iter().filter(|r| !r.pass) {
            println!("FAIL {} {:?} {:.3e}", r.name, r.shape, r.max_rel_err);
        }
    }
}
