// scratch benchmark probe; not part of the deliverable surface
use repellor_core::geom::Point;
use repellor_core::system::SystemSpec;
use repellor_core::thermo::{pressure_estimate, Potential, SeparatedConfig};
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let which = args.get(1).map(|s| s.as_str()).unwrap_or("p2122");
    match which {
        "p2122" => {
            let s = SystemSpec::mat2122();
            let t0 = Instant::now();
            let est = pressure_estimate(
                &s,
                &Potential::stable_minus_log_degree(),
                0.05,
                (2, 8),
                0.0125,
                42,
                &SeparatedConfig::default(),
            )
            .unwrap();
            println!("elapsed {:?}", t0.elapsed());
            for e in &est.entries {
                println!("n={} card={} P_n={:.6}", e.n, e.cardinality, e.p_n);
            }
            println!("extrapolated = {:.6} (want 0)", est.extrapolated);
        }
        "pT3" => {
            let s = SystemSpec::example_product();
            let t0 = Instant::now();
            let est = pressure_estimate(
                &s,
                &Potential::stable_minus_log_degree(),
                0.05,
                (2, 8),
                0.0125,
                42,
                &SeparatedConfig::default(),
            )
            .unwrap();
            println!("elapsed {:?}", t0.elapsed());
            for e in &est.entries {
                println!("n={} card={} P_n={:.6}", e.n, e.cardinality, e.p_n);
            }
            println!(
                "extrapolated = {:.6} (want 0), truncated={}",
                est.extrapolated, est.truncated
            );
        }
        "lyap" => {
            let s = SystemSpec::mat2122();
            let t0 = Instant::now();
            let sp =
                repellor_core::exponents::lyapunov_spectrum(&s, &Point::from_slice(&[0.3, 0.6]), 10_000, 2)
                    .unwrap();
            let lam_s = (2.0 - 2.0f64.sqrt()).ln();
            let lam_u = (2.0 + 2.0f64.sqrt()).ln();
            println!("elapsed {:?}", t0.elapsed());
            println!(
                "err_s = {:.3e}, err_u = {:.3e}",
                (sp.exponents[0].0 - lam_s).abs(),
                (sp.exponents[1].0 - lam_u).abs()
            );
        }
        "skewlyap" => {
            for eps in [0.0, 0.005, 0.01, 0.02] {
                let s = SystemSpec::skew(eps).unwrap();
                let t0 = Instant::now();
                let sp = repellor_core::exponents::lyapunov_spectrum(
                    &s,
                    &Point([1.0, 0.0, 0.3, 0.7]),
                    10_000,
                    5,
                )
                .unwrap();
                println!("eps={eps}: raw={:?} elapsed {:?}", sp.raw, t0.elapsed());
            }
        }
        _ => eprintln!("unknown probe"),
    }
}
